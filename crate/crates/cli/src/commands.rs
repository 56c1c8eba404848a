use std::collections::BTreeSet;
use std::fmt::Display;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lipkit_core::curation::{curate, fill_scores, kept_manifest, summary_table, ScorerPlugin};
use lipkit_core::diffusion::{default_latent_mask, read_clip, run_simulation, SimulationReport};
use lipkit_core::masking::{build_mask, refine_with_occlusion};
use lipkit_core::metrics::{
    lipleak_threshold_sweep, mar_series, write_lipleak_csv, write_mar_series_csv,
};
use lipkit_core::ranking::{
    bootstrap_elo, elo_ratings, histogram_csv, rating_distribution, read_jsonl, win_rate_matrix,
};
use lipkit_core::{
    write_atomic, CurationConfig, CurationError, CurationManifest, CurationReport, DiffusionError,
    EloConfig, LandmarkTrack, MaskParams, MaskRaster, MaskVariant, RatingTable, SimConfig,
};
use lipkit_service::{read_pool, ServeOptions, StudyConfig, StudyState, SystemClock};
use rayon::prelude::*;

use crate::CliError;

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Output(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

/// A single track file, or every `*.landmarks.jsonl` in a directory sorted
/// by name.
fn track_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| input(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".landmarks.jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(input(format!(
                "{}: no *.landmarks.jsonl files",
                path.display()
            )));
        }
        Ok(files)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(input(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn read_tracks(path: &Path, fps: f64) -> Result<Vec<LandmarkTrack>, CliError> {
    track_files(path)?
        .iter()
        .map(|p| LandmarkTrack::read_jsonl(p, fps).map_err(input))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskJob {
    pub landmarks: PathBuf,
    pub variant: MaskVariant,
    pub params: MaskParams,
    pub occlusion_dir: Option<PathBuf>,
    pub fps: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskOutcome {
    pub videos: usize,
    pub frames: usize,
}

/// `<dir>/<video_id>/<frame:06>.pgm`
pub fn frame_path(dir: &Path, video_id: &str, frame: u32) -> PathBuf {
    dir.join(video_id).join(format!("{frame:06}.pgm"))
}

/// Writes one mask per frame to `out_dir/<video_id>/<frame:06>.pgm`. A frame
/// with an occlusion file of the same name has the occluded pixels removed;
/// frames without one are left as built.
pub fn cmd_mask(job: &MaskJob) -> Result<MaskOutcome, CliError> {
    let tracks = read_tracks(&job.landmarks, job.fps)?;
    let mut frames = 0;
    for track in &tracks {
        let dir = job.out_dir.join(track.video_id());
        create_dir(&dir)?;
        track
            .frames()
            .par_iter()
            .try_for_each(|frame| -> Result<(), CliError> {
                let mut mask = build_mask(frame, job.variant, &job.params).map_err(|e| {
                    input(format!(
                        "{} frame {}: {e}",
                        track.video_id(),
                        frame.frame_index()
                    ))
                })?;
                if let Some(occ_dir) = &job.occlusion_dir {
                    let occ_path = frame_path(occ_dir, track.video_id(), frame.frame_index());
                    if occ_path.exists() {
                        let occ = MaskRaster::read_pgm(&occ_path)
                            .map_err(|e| input(format!("{}: {e}", occ_path.display())))?;
                        mask = refine_with_occlusion(&mask, &occ)
                            .map_err(|e| input(format!("{}: {e}", occ_path.display())))?;
                    }
                }
                write_out(
                    &frame_path(&job.out_dir, track.video_id(), frame.frame_index()),
                    &mask.to_pgm_bytes(),
                )
            })?;
        frames += track.len();
    }
    Ok(MaskOutcome {
        videos: tracks.len(),
        frames,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipleakJob {
    pub landmarks: PathBuf,
    pub thresholds: Vec<f64>,
    pub fps: f64,
    pub out_dir: PathBuf,
}

/// Writes `lipleak.csv` (one row per video and threshold) and
/// `mar_series.csv`. Returns the lipleak rows.
pub fn cmd_lipleak(job: &LipleakJob) -> Result<Vec<(String, f64, f64)>, CliError> {
    let tracks = read_tracks(&job.landmarks, job.fps)?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for track in &tracks {
        for (t, v) in lipleak_threshold_sweep(track, &job.thresholds).map_err(input)? {
            rows.push((track.video_id().to_string(), t, v));
        }
        series.push(mar_series(track, job.thresholds[0]).map_err(input)?);
    }
    create_dir(&job.out_dir)?;
    let mut leak = Vec::new();
    write_lipleak_csv(&mut leak, &rows).map_err(|e| CliError::Output(e.to_string()))?;
    let mut mar = Vec::new();
    write_mar_series_csv(&mut mar, &series).map_err(|e| CliError::Output(e.to_string()))?;
    write_out(&job.out_dir.join("lipleak.csv"), &leak)?;
    write_out(&job.out_dir.join("mar_series.csv"), &mar)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloJob {
    pub log: PathBuf,
    pub config: EloConfig,
    pub bins: usize,
    pub out_dir: PathBuf,
}

/// Writes `ratings.csv`, `winrate.csv` and `histogram.csv`. With bootstrap
/// rounds, ratings are bootstrap medians with percentile intervals;
/// with zero rounds, the single in-order pass and an empty histogram.
pub fn cmd_elo(job: &EloJob) -> Result<RatingTable, CliError> {
    let records = read_jsonl(&job.log).map_err(input)?;
    let (table, histogram) = if job.config.bootstrap_rounds == 0 {
        (
            elo_ratings(&records, &job.config).map_err(input)?,
            Vec::new(),
        )
    } else {
        let boot = bootstrap_elo(&records, &job.config).map_err(input)?;
        let hist = rating_distribution(&boot, job.bins).map_err(input)?;
        (boot.table, hist)
    };
    let out = |e: lipkit_core::RankingError| CliError::Output(e.to_string());
    let ratings = table.to_csv().map_err(out)?;
    let winrate = win_rate_matrix(&records).to_csv().map_err(out)?;
    let hist = histogram_csv(&histogram).map_err(out)?;
    create_dir(&job.out_dir)?;
    write_out(&job.out_dir.join("ratings.csv"), &ratings)?;
    write_out(&job.out_dir.join("winrate.csv"), &winrate)?;
    write_out(&job.out_dir.join("histogram.csv"), &hist)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateJob {
    pub manifest: PathBuf,
    pub config: CurationConfig,
    pub plugins: Vec<ScorerPlugin>,
    pub max_concurrent: usize,
    pub out_dir: PathBuf,
}

/// Writes `curation_report.json`, `summary.txt` and `kept_manifest.json`
/// (the manifest restricted to kept clips).
pub fn cmd_curate(job: &CurateJob) -> Result<CurationReport, CliError> {
    let manifest = CurationManifest::read(&job.manifest).map_err(|e| match e {
        CurationError::Io(e) => input(format!("{}: {e}", job.manifest.display())),
        other => input(format!("{}: {other}", job.manifest.display())),
    })?;
    let manifest = if job.plugins.is_empty() {
        manifest
    } else {
        fill_scores(&manifest, &job.plugins, job.max_concurrent).map_err(input)?
    };
    let report = curate(&manifest, &job.config).map_err(input)?;
    create_dir(&job.out_dir)?;
    write_out(
        &job.out_dir.join("curation_report.json"),
        pretty_json(&report)?.as_bytes(),
    )?;
    write_out(
        &job.out_dir.join("summary.txt"),
        summary_table(&report).as_bytes(),
    )?;
    write_out(
        &job.out_dir.join("kept_manifest.json"),
        pretty_json(&kept_manifest(&manifest, &report))?.as_bytes(),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateJob {
    pub config: SimConfig,
    pub out_dir: PathBuf,
}

fn diffusion_error(e: DiffusionError) -> CliError {
    match e {
        DiffusionError::NonFiniteLoss { .. } | DiffusionError::NonFinite { .. } => {
            CliError::Numeric(e.to_string())
        }
        DiffusionError::Io(e) => CliError::Output(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

/// Runs the toy two-stage pipeline, writes its outputs, then reads the
/// written clips back and checks that every unmasked element survived
/// unchanged.
pub fn cmd_simulate(job: &SimulateJob) -> Result<SimulationReport, CliError> {
    create_dir(&job.out_dir)?;
    write_out(
        &job.out_dir.join("config.toml"),
        job.config.to_toml_string().as_bytes(),
    )?;
    let report = run_simulation(&job.config, Some(&job.out_dir)).map_err(diffusion_error)?;
    if !report.unmasked_exact {
        return Err(CliError::Numeric(
            "sampled clip altered unmasked latents".into(),
        ));
    }
    for (name, stage) in [
        ("keyframe", &report.keyframe),
        ("interpolation", &report.interpolation),
    ] {
        if !(stage.initial_loss.is_finite() && stage.final_loss.is_finite()) {
            return Err(CliError::Numeric(format!("{name} loss is not finite")));
        }
    }
    let input =
        read_clip(&job.out_dir.join("input.f32")).map_err(|e| CliError::Output(e.to_string()))?;
    let sampled =
        read_clip(&job.out_dir.join("sampled.f32")).map_err(|e| CliError::Output(e.to_string()))?;
    let mask = default_latent_mask();
    let plane = mask.bits().len();
    let preserved = input.shape() == sampled.shape()
        && input
            .data()
            .iter()
            .zip(sampled.data())
            .enumerate()
            .all(|(i, (a, b))| mask.bits()[i % plane] || a.to_bits() == b.to_bits());
    if !preserved {
        return Err(CliError::Numeric(
            "written clips differ outside the mask".into(),
        ));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeJob {
    pub pool: PathBuf,
    pub port: u16,
    pub media_dir: Option<PathBuf>,
    pub log_path: PathBuf,
    pub cors_origin: Option<String>,
    pub annotators: Vec<String>,
    pub seed: u64,
    pub elo: EloConfig,
}

impl ServeJob {
    pub fn study_config(&self) -> Result<StudyConfig, CliError> {
        let pool = read_pool(&self.pool).map_err(input)?;
        let mut config = StudyConfig::new(pool, self.log_path.clone());
        config.seed = self.seed;
        config.elo = self.elo;
        if !self.annotators.is_empty() {
            config.annotators = Some(self.annotators.iter().cloned().collect::<BTreeSet<_>>());
        }
        Ok(config)
    }
}

/// Serves until interrupted.
pub fn cmd_serve(job: ServeJob) -> Result<(), CliError> {
    let state =
        Arc::new(StudyState::open(job.study_config()?, Arc::new(SystemClock)).map_err(input)?);
    let options = ServeOptions {
        addr: SocketAddr::from(([0, 0, 0, 0], job.port)),
        media_dir: job.media_dir,
        cors_origin: job.cors_origin,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Output(e.to_string()))?;
    runtime
        .block_on(lipkit_service::serve(state, options))
        .map_err(|e| CliError::Output(e.to_string()))
}
