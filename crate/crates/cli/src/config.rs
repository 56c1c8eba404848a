//! The shared TOML config file. Top-level keys are the diffusion settings
//! read by `simulate` (and `seed`, which every subcommand honours); optional
//! `[mask]`, `[lipleak]`, `[elo]`, `[curate]` and `[serve]` tables hold the
//! other subcommands' settings. Command-line flags override the file.

use std::path::{Path, PathBuf};

use lipkit_core::curation::ScorerPlugin;
use lipkit_core::{MaskVariant, SimConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub variant: Option<MaskVariant>,
    pub side_pad_frac: Option<f64>,
    pub above_nose_frac: Option<f64>,
    pub mouth_pad_frac: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipleakSection {
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EloSection {
    pub k_factor: Option<f64>,
    pub initial_rating: Option<f64>,
    pub bootstrap_rounds: Option<usize>,
    pub ci_level: Option<f64>,
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSection {
    pub quality_threshold: Option<f64>,
    pub asd_threshold: Option<f64>,
    pub min_clip_s: Option<f64>,
    pub fps: Option<f64>,
    pub audio_hz: Option<u32>,
    pub audio_channels: Option<u32>,
    pub plugins: Option<Vec<ScorerPlugin>>,
    pub max_concurrent: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub pool: Option<PathBuf>,
    pub media_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub cors_origin: Option<String>,
    pub annotators: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Sections {
    mask: MaskSection,
    lipleak: LipleakSection,
    elo: EloSection,
    curate: CurateSection,
    serve: ServeSection,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub sim: SimConfig,
    /// `seed` when the file sets it explicitly.
    pub seed: Option<u64>,
    pub mask: MaskSection,
    pub lipleak: LipleakSection,
    pub elo: EloSection,
    pub curate: CurateSection,
    pub serve: ServeSection,
}

const SECTIONS: [&str; 5] = ["mask", "lipleak", "elo", "curate", "serve"];

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let bad = |e: String| CliError::Input(format!("{origin}: {e}"));
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let mut sections = toml::Table::new();
        for name in SECTIONS {
            if let Some(v) = table.remove(name) {
                sections.insert(name.to_string(), v);
            }
        }
        let sections: Sections = sections
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let seed = match table.get("seed") {
            Some(v) => Some(
                v.as_integer()
                    .and_then(|i| u64::try_from(i).ok())
                    .ok_or_else(|| bad("seed must be a non-negative integer".into()))?,
            ),
            None => None,
        };
        let rest = toml::to_string(&table).map_err(|e| bad(e.to_string()))?;
        let sim = SimConfig::from_toml_str(&rest).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            sim,
            seed,
            mask: sections.mask,
            lipleak: sections.lipleak,
            elo: sections.elo,
            curate: sections.curate,
            serve: sections.serve,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The file at `path`, or all defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::read)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_flat_keys() {
        let text = r#"
steps = 40
seed = 3
w_aud = 4.0

[lipleak]
thresholds = [0.1, 0.3]

[elo]
k_factor = 16.0

[mask]
variant = "mouth-only"
"#;
        let c = FileConfig::parse(text, "t.toml").unwrap();
        assert_eq!((c.sim.steps, c.sim.seed, c.sim.w_aud), (40, 3, 4.0));
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.lipleak.thresholds, Some(vec![0.1, 0.3]));
        assert_eq!(c.elo.k_factor, Some(16.0));
        assert_eq!(c.mask.variant, Some(MaskVariant::MouthOnly));
        assert_eq!(c.curate, CurateSection::default());
    }

    #[test]
    fn empty_file_is_defaults() {
        let c = FileConfig::parse("", "t").unwrap();
        assert_eq!(c, FileConfig::default());
        assert_eq!(c.seed, None);
    }

    #[test]
    fn errors_name_the_file() {
        for text in [
            "steps = 0",
            "[elo]\nk = 1",
            "nonsense = 1",
            "seed = -1",
            "[[x",
        ] {
            match FileConfig::parse(text, "conf.toml") {
                Err(CliError::Input(msg)) => assert!(msg.starts_with("conf.toml"), "{msg}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
