//! `lipkit` subcommands. Each one resolves its settings (flag, then config
//! file, then built-in default) into a job struct and runs it; the job
//! functions are public so they can be driven without a process boundary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lipkit_core::curation::ScorerPlugin;
use lipkit_core::{CurationConfig, EloConfig, MaskParams, MaskVariant, SimConfig};
use thiserror::Error;

pub use commands::{
    cmd_curate, cmd_elo, cmd_lipleak, cmd_mask, cmd_serve, cmd_simulate, CurateJob, EloJob,
    LipleakJob, MaskJob, ServeJob, SimulateJob,
};
pub use config::FileConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid input. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// Non-finite values or a failed numeric self-check. Exit code 3.
    #[error("{0}")]
    Numeric(String),
    /// Outputs could not be written, or the server failed. Exit code 1.
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Output(_) => 1,
            Self::Input(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lipkit",
    version,
    about = "Masks, leakage metrics, toy diffusion, Elo and curation for lip-sync evaluation"
)]
pub struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every randomized step [default: 7 for simulate, 0 otherwise]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one inpainting mask PGM per landmark frame
    Mask(MaskArgs),
    /// Fraction of open-mouth frames per video, plus the MAR series
    Lipleak(LipleakArgs),
    /// Elo ratings, win rates and rating histograms from a comparison log
    Elo(EloArgs),
    /// Apply format, quality and active-speaker gates to a manifest
    Curate(CurateArgs),
    /// Train and sample the toy two-stage model on the sliding-bar fixture
    Simulate(SimulateArgs),
    /// Run the preference-study HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// A `<video_id>.landmarks.jsonl` file or a directory of them
    #[arg(long)]
    pub landmarks: PathBuf,
    /// ours, nose-level, mouth-only or full-lower-face [default: ours]
    #[arg(long)]
    pub variant: Option<MaskVariant>,
    /// Side padding as a fraction of face width [default: 0.05]
    #[arg(long)]
    pub side_pad_frac: Option<f64>,
    /// Start of the `ours` box above the nose tip, as a fraction of face height [default: 0.1]
    #[arg(long)]
    pub above_nose_frac: Option<f64>,
    /// Lip padding for mouth-only, as a fraction of face width [default: 0.1]
    #[arg(long)]
    pub mouth_pad_frac: Option<f64>,
    /// Occluder masks laid out as `<video_id>/<frame:06>.pgm`; masked pixels are removed
    #[arg(long)]
    pub occlusion_dir: Option<PathBuf>,
    /// Frames per second of the tracks
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct LipleakArgs {
    /// A `<video_id>.landmarks.jsonl` file or a directory of them
    #[arg(long)]
    pub landmarks: PathBuf,
    /// MAR thresholds, ascending and comma separated; a frame is open above the threshold [default: 0.25]
    #[arg(long = "threshold", value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EloArgs {
    /// JSON Lines comparison log
    #[arg(long)]
    pub log: PathBuf,
    /// Elo K factor [default: 32]
    #[arg(long)]
    pub k_factor: Option<f64>,
    /// Starting rating [default: 1000]
    #[arg(long)]
    pub initial_rating: Option<f64>,
    /// Bootstrap rounds; 0 reports the single in-order pass [default: 1000]
    #[arg(long)]
    pub bootstrap_rounds: Option<usize>,
    /// Confidence level of the bootstrap interval [default: 0.95]
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Histogram bins per model [default: 20]
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// JSON manifest with `dataset_name` and `entries`
    #[arg(long)]
    pub manifest: PathBuf,
    /// Minimum mean quality score; lower means discard [default: 0.4]
    #[arg(long)]
    pub quality_threshold: Option<f64>,
    /// Minimum active-speaker score; lower means discard [default: 0.75]
    #[arg(long)]
    pub asd_threshold: Option<f64>,
    /// Scenes shorter than this many seconds are dropped [default: 1.0]
    #[arg(long)]
    pub min_clip_s: Option<f64>,
    /// Scorer command line, run as `<command> <video_id> <path>` for entries missing scores; repeatable
    #[arg(long = "plugin")]
    pub plugins: Vec<String>,
    /// Scorer processes in flight at once [default: 4]
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Keyframes per clip, T [default: 14]
    #[arg(long)]
    pub keyframe_count: Option<usize>,
    /// Frames between keyframes, S [default: 12]
    #[arg(long)]
    pub spacing: Option<usize>,
    /// Training steps per stage [default: 500]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Audio guidance scale [default: 5]
    #[arg(long)]
    pub w_aud: Option<f64>,
    /// Identity guidance scale [default: 2]
    #[arg(long)]
    pub w_id: Option<f64>,
    /// Data standard deviation, sigma_data [default: 0.5]
    #[arg(long)]
    pub sigma_data: Option<f64>,
    /// Sampler steps [default: 10]
    #[arg(long)]
    pub sample_steps: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON array of {pair_id, model_a, model_b, media_a, media_b}
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// [default: 8080]
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory served under /media
    #[arg(long)]
    pub media_dir: Option<PathBuf>,
    /// Append-only vote log [default: votes.jsonl]
    #[arg(long)]
    pub log_path: Option<PathBuf>,
    /// Browser origin allowed by CORS [default: any]
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Accepted annotator id; repeatable. Without it any non-empty id is accepted
    #[arg(long = "annotator")]
    pub annotators: Vec<String>,
}

fn seed_or(cli: Option<u64>, file: Option<u64>, default: u64) -> u64 {
    cli.or(file).unwrap_or(default)
}

pub(crate) fn parse_plugin(line: &str) -> Result<ScorerPlugin, CliError> {
    let mut parts = line.split_whitespace().map(str::to_string);
    let program = parts
        .next()
        .ok_or_else(|| CliError::Input("empty --plugin command".into()))?;
    Ok(ScorerPlugin {
        program,
        args: parts.collect(),
    })
}

impl MaskArgs {
    pub fn resolve(self, file: &FileConfig) -> Result<MaskJob, CliError> {
        let d = MaskParams::default();
        let f = &file.mask;
        let params = MaskParams {
            side_pad_frac: self
                .side_pad_frac
                .or(f.side_pad_frac)
                .unwrap_or(d.side_pad_frac),
            above_nose_frac: self
                .above_nose_frac
                .or(f.above_nose_frac)
                .unwrap_or(d.above_nose_frac),
            mouth_pad_frac: self
                .mouth_pad_frac
                .or(f.mouth_pad_frac)
                .unwrap_or(d.mouth_pad_frac),
        };
        params
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(MaskJob {
            landmarks: self.landmarks,
            variant: self.variant.or(f.variant).unwrap_or(MaskVariant::Ours),
            params,
            occlusion_dir: self.occlusion_dir,
            fps: self.fps,
            out_dir: self.out_dir,
        })
    }
}

impl LipleakArgs {
    pub fn resolve(self, file: &FileConfig) -> Result<LipleakJob, CliError> {
        let thresholds = if !self.thresholds.is_empty() {
            self.thresholds
        } else {
            file.lipleak
                .thresholds
                .clone()
                .unwrap_or_else(|| vec![lipkit_core::landmarks::DEFAULT_MAR_THRESHOLD])
        };
        if thresholds.is_empty() {
            return Err(CliError::Input("at least one threshold is required".into()));
        }
        Ok(LipleakJob {
            landmarks: self.landmarks,
            thresholds,
            fps: self.fps,
            out_dir: self.out_dir,
        })
    }
}

impl EloArgs {
    pub fn resolve(self, file: &FileConfig, seed: Option<u64>) -> Result<EloJob, CliError> {
        let d = EloConfig::default();
        let f = &file.elo;
        let config = EloConfig {
            initial_rating: self
                .initial_rating
                .or(f.initial_rating)
                .unwrap_or(d.initial_rating),
            k_factor: self.k_factor.or(f.k_factor).unwrap_or(d.k_factor),
            bootstrap_rounds: self
                .bootstrap_rounds
                .or(f.bootstrap_rounds)
                .unwrap_or(d.bootstrap_rounds),
            ci_level: self.ci_level.or(f.ci_level).unwrap_or(d.ci_level),
            seed: seed_or(seed, file.seed, d.seed),
        };
        config
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        let bins = self.bins.or(f.bins).unwrap_or(20);
        if bins == 0 {
            return Err(CliError::Input("bins must be at least 1".into()));
        }
        Ok(EloJob {
            log: self.log,
            config,
            bins,
            out_dir: self.out_dir,
        })
    }
}

impl CurateArgs {
    pub fn resolve(self, file: &FileConfig) -> Result<CurateJob, CliError> {
        let d = CurationConfig::default();
        let f = &file.curate;
        let config = CurationConfig {
            quality_threshold: self
                .quality_threshold
                .or(f.quality_threshold)
                .unwrap_or(d.quality_threshold),
            asd_threshold: self
                .asd_threshold
                .or(f.asd_threshold)
                .unwrap_or(d.asd_threshold),
            min_clip_s: self.min_clip_s.or(f.min_clip_s).unwrap_or(d.min_clip_s),
            fps: f.fps.unwrap_or(d.fps),
            audio_hz: f.audio_hz.unwrap_or(d.audio_hz),
            audio_channels: f.audio_channels.unwrap_or(d.audio_channels),
        };
        config
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        let plugins = if self.plugins.is_empty() {
            f.plugins.clone().unwrap_or_default()
        } else {
            self.plugins
                .iter()
                .map(|p| parse_plugin(p))
                .collect::<Result<_, _>>()?
        };
        let max_concurrent = self.max_concurrent.or(f.max_concurrent).unwrap_or(4);
        if max_concurrent == 0 {
            return Err(CliError::Input("max_concurrent must be at least 1".into()));
        }
        Ok(CurateJob {
            manifest: self.manifest,
            config,
            plugins,
            max_concurrent,
            out_dir: self.out_dir,
        })
    }
}

impl SimulateArgs {
    pub fn resolve(self, file: &FileConfig, seed: Option<u64>) -> Result<SimulateJob, CliError> {
        let base = file.sim;
        let config = SimConfig {
            keyframe_count: self.keyframe_count.unwrap_or(base.keyframe_count),
            spacing: self.spacing.unwrap_or(base.spacing),
            steps: self.steps.unwrap_or(base.steps),
            w_aud: self.w_aud.unwrap_or(base.w_aud),
            w_id: self.w_id.unwrap_or(base.w_id),
            sigma_data: self.sigma_data.unwrap_or(base.sigma_data),
            sample_steps: self.sample_steps.unwrap_or(base.sample_steps),
            seed: seed.unwrap_or(base.seed),
            ..base
        };
        config
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(SimulateJob {
            config,
            out_dir: self.out_dir,
        })
    }
}

impl ServeArgs {
    pub fn resolve(self, file: &FileConfig, seed: Option<u64>) -> Result<ServeJob, CliError> {
        let f = &file.serve;
        let pool = self
            .pool
            .or_else(|| f.pool.clone())
            .ok_or_else(|| CliError::Input("--pool is required".into()))?;
        let annotators = if self.annotators.is_empty() {
            f.annotators.clone().unwrap_or_default()
        } else {
            self.annotators
        };
        let d = EloConfig::default();
        let e = &file.elo;
        let elo = EloConfig {
            initial_rating: e.initial_rating.unwrap_or(d.initial_rating),
            k_factor: e.k_factor.unwrap_or(d.k_factor),
            bootstrap_rounds: e.bootstrap_rounds.unwrap_or(d.bootstrap_rounds),
            ci_level: e.ci_level.unwrap_or(d.ci_level),
            seed: seed_or(seed, file.seed, d.seed),
        };
        elo.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(ServeJob {
            pool,
            port: self.port.or(f.port).unwrap_or(8080),
            media_dir: self.media_dir.or_else(|| f.media_dir.clone()),
            log_path: self
                .log_path
                .or_else(|| f.log_path.clone())
                .unwrap_or_else(|| PathBuf::from("votes.jsonl")),
            cors_origin: self.cors_origin.or_else(|| f.cors_origin.clone()),
            annotators,
            seed: seed_or(seed, file.seed, 0),
            elo,
        })
    }
}

/// Runs a parsed command line and returns the text to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Mask(a) => {
            let out = cmd_mask(&a.resolve(&file)?)?;
            Ok(format!(
                "wrote {} masks for {} videos",
                out.frames, out.videos
            ))
        }
        Command::Lipleak(a) => {
            let rows = cmd_lipleak(&a.resolve(&file)?)?;
            Ok(rows
                .iter()
                .map(|(id, t, v)| format!("{id}\t{t}\t{v}"))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Elo(a) => {
            let table = cmd_elo(&a.resolve(&file, cli.seed)?)?;
            Ok(table
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{}\t{:.1}\t[{:.1}, {:.1}]\t{}",
                        r.model, r.rating, r.ci_low, r.ci_high, r.games
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Curate(a) => {
            let report = cmd_curate(&a.resolve(&file)?)?;
            Ok(lipkit_core::curation::summary_table(&report))
        }
        Command::Simulate(a) => {
            let r = cmd_simulate(&a.resolve(&file, cli.seed)?)?;
            Ok(format!(
                "keyframe loss {:.4} -> {:.4}\ninterpolation loss {:.4} -> {:.4}\nstitched frames {}\nmasked MAE {:.4} (noise baseline {:.4})",
                r.keyframe.initial_loss,
                r.keyframe.final_loss,
                r.interpolation.initial_loss,
                r.interpolation.final_loss,
                r.stitched_frames,
                r.masked_mae,
                r.noise_baseline_mae
            ))
        }
        Command::Serve(a) => {
            cmd_serve(a.resolve(&file, cli.seed)?)?;
            Ok(String::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("lipkit").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = FileConfig::parse("seed = 5\n[elo]\nk_factor = 16.0\nbins = 4\n", "t").unwrap();
        let cli = parse(&["elo", "--log", "l", "--out-dir", "o", "--k-factor", "24"]);
        let Command::Elo(a) = cli.command else {
            unreachable!()
        };
        let job = a.resolve(&file, None).unwrap();
        assert_eq!(
            (job.config.k_factor, job.bins, job.config.seed),
            (24.0, 4, 5)
        );

        let cli = parse(&["--seed", "9", "elo", "--log", "l", "--out-dir", "o"]);
        let Command::Elo(a) = cli.command else {
            unreachable!()
        };
        let job = a.resolve(&file, cli.seed).unwrap();
        assert_eq!((job.config.k_factor, job.config.seed), (16.0, 9));

        let Command::Elo(a) = parse(&["elo", "--log", "l", "--out-dir", "o"]).command else {
            unreachable!()
        };
        let job = a.resolve(&FileConfig::default(), None).unwrap();
        assert_eq!(
            (job.config.k_factor, job.config.bootstrap_rounds, job.bins),
            (32.0, 1000, 20)
        );
    }

    #[test]
    fn lipleak_threshold_sources() {
        let Command::Lipleak(a) = parse(&["lipleak", "--landmarks", "x", "--out-dir", "o"]).command
        else {
            unreachable!()
        };
        assert_eq!(
            a.resolve(&FileConfig::default()).unwrap().thresholds,
            vec![0.25]
        );
        let Command::Lipleak(a) = parse(&[
            "lipleak",
            "--landmarks",
            "x",
            "--out-dir",
            "o",
            "--threshold",
            "0.1,0.25,0.5",
        ])
        .command
        else {
            unreachable!()
        };
        assert_eq!(
            a.resolve(&FileConfig::default()).unwrap().thresholds,
            vec![0.1, 0.25, 0.5]
        );
    }

    #[test]
    fn simulate_overrides() {
        let file = FileConfig::parse("steps = 40\nspacing = 6\n", "t").unwrap();
        let Command::Simulate(a) = parse(&["simulate", "--out-dir", "o", "--steps", "12"]).command
        else {
            unreachable!()
        };
        let job = a.resolve(&file, Some(1)).unwrap();
        assert_eq!(
            (job.config.steps, job.config.spacing, job.config.seed),
            (12, 6, 1)
        );
        let Command::Simulate(a) = parse(&["simulate", "--out-dir", "o", "--spacing", "0"]).command
        else {
            unreachable!()
        };
        assert!(matches!(a.resolve(&file, None), Err(CliError::Input(_))));
    }

    #[test]
    fn invalid_flags_are_input_errors() {
        let Command::Mask(a) = parse(&[
            "mask",
            "--landmarks",
            "x",
            "--out-dir",
            "o",
            "--side-pad-frac",
            "2",
        ])
        .command
        else {
            unreachable!()
        };
        assert_eq!(
            a.resolve(&FileConfig::default()).unwrap_err().exit_code(),
            2
        );
        let Command::Elo(a) =
            parse(&["elo", "--log", "l", "--out-dir", "o", "--ci-level", "1.5"]).command
        else {
            unreachable!()
        };
        assert_eq!(
            a.resolve(&FileConfig::default(), None)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert!(Cli::try_parse_from([
            "lipkit",
            "mask",
            "--landmarks",
            "x",
            "--out-dir",
            "o",
            "--variant",
            "lips"
        ])
        .is_err());
        assert!(parse_plugin("  ").is_err());
        assert_eq!(
            parse_plugin("sh score.sh -q").unwrap().args,
            vec!["score.sh", "-q"]
        );
    }

    #[test]
    fn serve_requires_pool() {
        let Command::Serve(a) = parse(&["serve"]).command else {
            unreachable!()
        };
        assert!(matches!(
            a.resolve(&FileConfig::default(), None),
            Err(CliError::Input(_))
        ));
        let file = FileConfig::parse("[serve]\npool = \"p.json\"\nport = 9000\n", "t").unwrap();
        let Command::Serve(a) = parse(&["serve", "--annotator", "a1"]).command else {
            unreachable!()
        };
        let job = a.resolve(&file, None).unwrap();
        assert_eq!(
            (job.port, job.annotators.clone()),
            (9000, vec!["a1".to_string()])
        );
    }
}
