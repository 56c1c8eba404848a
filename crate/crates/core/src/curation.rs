//! Manifest-driven dataset curation. Scores come from external models and
//! are read from the manifest or produced by scorer plugins; this module only
//! applies the gates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QUALITY_SCORE_COUNT: usize = 9;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("duplicate video_id {0:?}")]
    DuplicateId(String),
    #[error("video {video_id}: scene spans overlap or are out of order at span {index}")]
    OverlappingSpans { video_id: String, index: usize },
    #[error("video {video_id}: {message}")]
    InvalidEntry { video_id: String, message: String },
    #[error("invalid curation config: {0}")]
    BadConfig(String),
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub fps: f64,
    pub audio_hz: u32,
    pub audio_channels: u32,
    pub duration_s: f64,
    /// `(start_s, end_s)` pairs. Empty means the whole video is one scene.
    #[serde(default)]
    pub scene_spans: Vec<(f64, f64)>,
    #[serde(default)]
    pub quality_scores: Option<Vec<f64>>,
    #[serde(default)]
    pub asd_score: Option<f64>,
    /// Media location handed to scorer plugins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationManifest {
    pub dataset_name: String,
    pub entries: Vec<VideoEntry>,
}

impl CurationManifest {
    pub fn read(path: &Path) -> Result<Self, CurationError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub quality_threshold: f64,
    pub asd_threshold: f64,
    pub min_clip_s: f64,
    pub fps: f64,
    pub audio_hz: u32,
    pub audio_channels: u32,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            quality_threshold: 0.4,
            asd_threshold: 0.75,
            min_clip_s: 1.0,
            fps: 25.0,
            audio_hz: 16_000,
            audio_channels: 1,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        for (name, v) in [
            ("quality_threshold", self.quality_threshold),
            ("asd_threshold", self.asd_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CurationError::BadConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.min_clip_s >= 0.0 && self.min_clip_s.is_finite()) {
            return Err(CurationError::BadConfig(
                "min_clip_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiscardReason {
    LowQuality,
    NoActiveSpeaker,
    MissingScores,
    BadFormat,
}

impl DiscardReason {
    pub fn name(self) -> &'static str {
        match self {
            DiscardReason::LowQuality => "LowQuality",
            DiscardReason::NoActiveSpeaker => "NoActiveSpeaker",
            DiscardReason::MissingScores => "MissingScores",
            DiscardReason::BadFormat => "BadFormat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecCheck {
    pub passed: bool,
    pub problems: Vec<String>,
}

/// Checks the 25 fps / 16 kHz / mono delivery format.
pub fn normalize_spec_check(entry: &VideoEntry, config: &CurationConfig) -> SpecCheck {
    let mut problems = Vec::new();
    if entry.fps != config.fps {
        problems.push(format!("fps {} != {}", entry.fps, config.fps));
    }
    if entry.audio_hz != config.audio_hz {
        problems.push(format!(
            "audio rate {} Hz != {} Hz",
            entry.audio_hz, config.audio_hz
        ));
    }
    if entry.audio_channels != config.audio_channels {
        problems.push(format!(
            "{} audio channels != {}",
            entry.audio_channels, config.audio_channels
        ));
    }
    SpecCheck {
        passed: problems.is_empty(),
        problems,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Keep,
    Discard(DiscardReason),
}

/// Mean of the nine quality scores, rounded to 9 decimals so that decimal
/// boundary values compare as written (nine 0.4 scores average to 0.4).
pub fn quality_mean(scores: &[f64]) -> f64 {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    (mean * 1e9).round() / 1e9
}

/// Keeps unless the mean quality score is strictly below the threshold.
pub fn quality_gate(entry: &VideoEntry, config: &CurationConfig) -> GateDecision {
    match &entry.quality_scores {
        Some(s) if s.len() == QUALITY_SCORE_COUNT => {
            if quality_mean(s) < config.quality_threshold {
                GateDecision::Discard(DiscardReason::LowQuality)
            } else {
                GateDecision::Keep
            }
        }
        _ => GateDecision::Discard(DiscardReason::MissingScores),
    }
}

/// Keeps unless the active-speaker score is strictly below the threshold.
pub fn speaker_gate(entry: &VideoEntry, config: &CurationConfig) -> GateDecision {
    match entry.asd_score {
        Some(s) if s < config.asd_threshold => {
            GateDecision::Discard(DiscardReason::NoActiveSpeaker)
        }
        Some(_) => GateDecision::Keep,
        None => GateDecision::Discard(DiscardReason::MissingScores),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub video_id: String,
    pub scene_index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl ClipRef {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Clips long enough to keep and the ones dropped as too short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSplit {
    pub clips: Vec<ClipRef>,
    pub too_short: Vec<ClipRef>,
}

fn spans(entry: &VideoEntry) -> Vec<(f64, f64)> {
    if entry.scene_spans.is_empty() {
        vec![(0.0, entry.duration_s)]
    } else {
        entry.scene_spans.clone()
    }
}

pub fn split_scenes(
    entry: &VideoEntry,
    config: &CurationConfig,
) -> Result<SceneSplit, CurationError> {
    let spans = spans(entry);
    let mut prev_end = f64::NEG_INFINITY;
    for (i, &(s, e)) in spans.iter().enumerate() {
        if !(s.is_finite() && e.is_finite() && s <= e) || s < prev_end {
            return Err(CurationError::OverlappingSpans {
                video_id: entry.video_id.clone(),
                index: i,
            });
        }
        prev_end = e;
    }
    let (clips, too_short) = spans
        .into_iter()
        .enumerate()
        .map(|(i, (start_s, end_s))| ClipRef {
            video_id: entry.video_id.clone(),
            scene_index: i,
            start_s,
            end_s,
        })
        .partition(|c| c.duration_s() >= config.min_clip_s);
    Ok(SceneSplit { clips, too_short })
}

fn validate_entry(entry: &VideoEntry) -> Result<(), CurationError> {
    let invalid = |message: String| CurationError::InvalidEntry {
        video_id: entry.video_id.clone(),
        message,
    };
    if !(entry.duration_s > 0.0 && entry.duration_s.is_finite()) {
        return Err(invalid(format!(
            "duration {} must be positive",
            entry.duration_s
        )));
    }
    if let Some(scores) = &entry.quality_scores {
        if scores.len() != QUALITY_SCORE_COUNT {
            return Err(invalid(format!(
                "expected {QUALITY_SCORE_COUNT} quality scores, got {}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(invalid("quality scores must lie in [0, 1]".into()));
        }
    }
    if let Some(s) = entry.asd_score {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid(format!("asd_score {s} outside [0, 1]")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedClip {
    pub video_id: String,
    pub clip: ClipRef,
    pub reason: DiscardReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationStats {
    pub entries: usize,
    pub candidate_clips: usize,
    pub kept_clips: usize,
    pub discarded_clips: usize,
    /// Entries left with no kept clip.
    pub discarded_videos: usize,
    pub kept_seconds: f64,
    pub discarded_seconds: f64,
    pub by_reason: BTreeMap<DiscardReason, usize>,
}

impl CurationStats {
    pub fn kept_hours(&self) -> f64 {
        self.kept_seconds / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub dataset_name: String,
    pub kept: Vec<ClipRef>,
    pub discarded: Vec<DiscardedClip>,
    pub stats: CurationStats,
}

/// First failing gate in the order format, quality, speaker.
pub fn first_failure(entry: &VideoEntry, config: &CurationConfig) -> Option<DiscardReason> {
    if !normalize_spec_check(entry, config).passed {
        return Some(DiscardReason::BadFormat);
    }
    for gate in [quality_gate, speaker_gate] {
        if let GateDecision::Discard(r) = gate(entry, config) {
            return Some(r);
        }
    }
    None
}

/// Applies every gate, then splits surviving videos into scene clips.
/// Entries are processed in `video_id` order.
pub fn curate(
    manifest: &CurationManifest,
    config: &CurationConfig,
) -> Result<CurationReport, CurationError> {
    config.validate()?;
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.video_id.as_str()) {
            return Err(CurationError::DuplicateId(e.video_id.clone()));
        }
    }
    let mut entries: Vec<&VideoEntry> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let outcomes: Vec<(Vec<ClipRef>, Vec<DiscardedClip>)> = entries
        .par_iter()
        .map(|entry| {
            validate_entry(entry)?;
            let split = split_scenes(entry, config)?;
            let discard = |clip: ClipRef, reason| DiscardedClip {
                video_id: entry.video_id.clone(),
                clip,
                reason,
            };
            Ok(match first_failure(entry, config) {
                Some(reason) => {
                    let mut all: Vec<ClipRef> =
                        split.clips.into_iter().chain(split.too_short).collect();
                    all.sort_by_key(|c| c.scene_index);
                    (
                        Vec::new(),
                        all.into_iter().map(|c| discard(c, reason)).collect(),
                    )
                }
                None => (
                    split.clips,
                    split
                        .too_short
                        .into_iter()
                        .map(|c| discard(c, DiscardReason::BadFormat))
                        .collect(),
                ),
            })
        })
        .collect::<Result<_, CurationError>>()?;

    let mut stats = CurationStats {
        entries: entries.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (k, d) in outcomes {
        if k.is_empty() {
            stats.discarded_videos += 1;
        }
        stats.kept_seconds += k.iter().map(ClipRef::duration_s).sum::<f64>();
        stats.discarded_seconds += d.iter().map(|c| c.clip.duration_s()).sum::<f64>();
        for c in &d {
            *stats.by_reason.entry(c.reason).or_default() += 1;
        }
        kept.extend(k);
        discarded.extend(d);
    }
    stats.kept_clips = kept.len();
    stats.discarded_clips = discarded.len();
    stats.candidate_clips = kept.len() + discarded.len();
    Ok(CurationReport {
        dataset_name: manifest.dataset_name.clone(),
        kept,
        discarded,
        stats,
    })
}

/// The manifest restricted to kept clips: surviving entries with their
/// scene spans narrowed to the kept ones.
pub fn kept_manifest(manifest: &CurationManifest, report: &CurationReport) -> CurationManifest {
    let mut by_video: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for c in &report.kept {
        by_video
            .entry(&c.video_id)
            .or_default()
            .push((c.start_s, c.end_s));
    }
    CurationManifest {
        dataset_name: manifest.dataset_name.clone(),
        entries: manifest
            .entries
            .iter()
            .filter_map(|e| {
                by_video.get(e.video_id.as_str()).map(|spans| VideoEntry {
                    scene_spans: spans.clone(),
                    ..e.clone()
                })
            })
            .collect(),
    }
}

/// Human-readable summary.
pub fn summary_table(report: &CurationReport) -> String {
    let s = &report.stats;
    let mut out = String::new();
    let _ = writeln!(out, "dataset            {}", report.dataset_name);
    let _ = writeln!(out, "entries            {}", s.entries);
    let _ = writeln!(out, "candidate clips    {}", s.candidate_clips);
    let _ = writeln!(out, "kept clips         {}", s.kept_clips);
    let _ = writeln!(out, "discarded clips    {}", s.discarded_clips);
    let _ = writeln!(out, "discarded videos   {}", s.discarded_videos);
    let _ = writeln!(out, "kept hours         {:.4}", s.kept_hours());
    for reason in [
        DiscardReason::BadFormat,
        DiscardReason::MissingScores,
        DiscardReason::LowQuality,
        DiscardReason::NoActiveSpeaker,
    ] {
        let n = s.by_reason.get(&reason).copied().unwrap_or(0);
        let _ = writeln!(out, "  {:<17}{}", reason.name(), n);
    }
    out
}

/// An external scoring command. It is invoked as
/// `program args... <video_id> <path>` and must print one JSON object with
/// `quality_scores` and/or `asd_score`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerPlugin {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PluginScores {
    #[serde(default)]
    pub quality_scores: Option<Vec<f64>>,
    #[serde(default)]
    pub asd_score: Option<f64>,
}

/// Runs the plugin for one entry. Launch failures, nonzero exits and
/// unparsable output all yield `None`, which leaves the scores missing.
pub fn run_plugin(plugin: &ScorerPlugin, entry: &VideoEntry) -> Option<PluginScores> {
    let output = Command::new(&plugin.program)
        .args(&plugin.args)
        .arg(&entry.video_id)
        .arg(entry.path.as_deref().unwrap_or(""))
        .output()
        .ok()?;
    if !output.status.success() {
        return None;
    }
    serde_json::from_slice(&output.stdout).ok()
}

/// Fills absent scores by running each plugin on the entries that lack
/// them, with at most `max_concurrent` commands in flight. Existing scores
/// are never overwritten.
pub fn fill_scores(
    manifest: &CurationManifest,
    plugins: &[ScorerPlugin],
    max_concurrent: usize,
) -> Result<CurationManifest, CurationError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrent.max(1))
        .build()
        .map_err(|e| CurationError::BadConfig(e.to_string()))?;
    let entries = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let mut e = entry.clone();
                for plugin in plugins {
                    if e.quality_scores.is_some() && e.asd_score.is_some() {
                        break;
                    }
                    if let Some(scores) = run_plugin(plugin, &e) {
                        if e.quality_scores.is_none() {
                            e.quality_scores = scores.quality_scores;
                        }
                        if e.asd_score.is_none() {
                            e.asd_score = scores.asd_score;
                        }
                    }
                }
                e
            })
            .collect()
    });
    Ok(CurationManifest {
        dataset_name: manifest.dataset_name.clone(),
        entries,
    })
}

/// A 100-entry manifest built so that exactly 75 entries fail a gate:
/// 10 bad format, 5 missing scores, 30 low quality and 30 without an active
/// speaker. It includes the boundary cases `q0.40` and `asd0.75` (kept) and
/// `q0.39` and `asd0.74` (discarded). Returns the manifest and the number
/// of entries designed to fail.
pub fn engineered_manifest(seed: u64) -> (CurationManifest, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(100);
    // Nine scores with the given mean, spread in +/- pairs.
    fn scores_around(rng: &mut ChaCha8Rng, mean: f64) -> Vec<f64> {
        let mut v = vec![mean; QUALITY_SCORE_COUNT];
        for k in 0..4 {
            let d = rng.random_range(0.0..0.03);
            v[2 * k] += d;
            v[2 * k + 1] -= d;
        }
        v
    }
    let mut push = |id: String,
                    fps: f64,
                    hz: u32,
                    ch: u32,
                    q: Option<Vec<f64>>,
                    asd: Option<f64>,
                    rng: &mut ChaCha8Rng| {
        let duration_s = rng.random_range(3.0..20.0);
        entries.push(VideoEntry {
            video_id: id,
            fps,
            audio_hz: hz,
            audio_channels: ch,
            duration_s,
            scene_spans: vec![(0.0, duration_s)],
            quality_scores: q,
            asd_score: asd,
            path: None,
        });
    };

    push(
        "q0.40".into(),
        25.0,
        16_000,
        1,
        Some(vec![0.40; 9]),
        Some(0.9),
        &mut rng,
    );
    push(
        "asd0.75".into(),
        25.0,
        16_000,
        1,
        Some(vec![0.6; 9]),
        Some(0.75),
        &mut rng,
    );
    for i in 0..23 {
        let mean = rng.random_range(0.45..0.95);
        let q = scores_around(&mut rng, mean);
        let asd = rng.random_range(0.76..1.0);
        push(
            format!("keep{i:02}"),
            25.0,
            16_000,
            1,
            Some(q),
            Some(asd),
            &mut rng,
        );
    }
    for i in 0..10 {
        let (fps, hz, ch) = [(30.0, 16_000, 1), (25.0, 44_100, 1), (25.0, 16_000, 2)][i % 3];
        let q = scores_around(&mut rng, 0.7);
        push(
            format!("format{i:02}"),
            fps,
            hz,
            ch,
            Some(q),
            Some(0.9),
            &mut rng,
        );
    }
    for i in 0..5 {
        let (q, asd) = if i % 2 == 0 {
            (None, Some(0.9))
        } else {
            (Some(scores_around(&mut rng, 0.7)), None)
        };
        push(format!("missing{i:02}"), 25.0, 16_000, 1, q, asd, &mut rng);
    }
    push(
        "q0.39".into(),
        25.0,
        16_000,
        1,
        Some(vec![0.39; 9]),
        Some(0.9),
        &mut rng,
    );
    for i in 0..29 {
        let mean = rng.random_range(0.05..0.36);
        let q = scores_around(&mut rng, mean);
        let asd = rng.random_range(0.8..1.0);
        push(
            format!("lowq{i:02}"),
            25.0,
            16_000,
            1,
            Some(q),
            Some(asd),
            &mut rng,
        );
    }
    push(
        "asd0.74".into(),
        25.0,
        16_000,
        1,
        Some(vec![0.6; 9]),
        Some(0.74),
        &mut rng,
    );
    for i in 0..29 {
        let mean = rng.random_range(0.45..0.95);
        let q = scores_around(&mut rng, mean);
        let asd = rng.random_range(0.0..0.7);
        push(
            format!("mute{i:02}"),
            25.0,
            16_000,
            1,
            Some(q),
            Some(asd),
            &mut rng,
        );
    }
    entries.shuffle(&mut rng);
    (
        CurationManifest {
            dataset_name: "engineered".into(),
            entries,
        },
        75,
    )
}
