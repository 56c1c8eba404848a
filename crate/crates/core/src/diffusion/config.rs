use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DiffusionError, DropRates, EdmParams, GuidanceWeights, SamplerConfig, Schedule,
    SlidingBarConfig, TrainConfig,
};

/// Flat `key = value` settings for the toy two-stage run. Missing keys take
/// their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub keyframe_count: usize,
    pub spacing: usize,
    pub sigma_data: f64,
    pub w_aud: f64,
    pub w_id: f64,
    pub audio_drop: f64,
    pub identity_drop: f64,
    pub steps: usize,
    pub seed: u64,
    pub lambda_2: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub p_std: f64,
    pub smoothing_window: usize,
    pub grad_clip: f64,
    pub sample_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub train_videos: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let sampler = SamplerConfig::default();
        let schedule = Schedule::default();
        Self {
            keyframe_count: schedule.keyframe_count,
            spacing: schedule.spacing,
            sigma_data: train.edm.sigma_data,
            w_aud: sampler.guidance.w_aud,
            w_id: sampler.guidance.w_id,
            audio_drop: train.drop_rates.audio,
            identity_drop: train.drop_rates.identity,
            steps: train.steps,
            seed: train.seed,
            lambda_2: train.lambda_2,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            hidden: train.hidden,
            embed_dim: train.embed_dim,
            p_std: train.p_std,
            smoothing_window: train.smoothing_window,
            grad_clip: train.grad_clip,
            sample_steps: sampler.n_steps,
            sigma_min: sampler.sigma_min,
            sigma_max: sampler.sigma_max,
            rho: sampler.rho,
            train_videos: SlidingBarConfig::default().train_videos,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DiffusionError> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| DiffusionError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, DiffusionError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.schedule()?;
        self.train_config().validate()?;
        self.sampler_config().validate()?;
        if self.train_videos == 0 {
            return Err(DiffusionError::BadConfig(
                "train_videos must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule, DiffusionError> {
        Schedule::new(self.keyframe_count, self.spacing)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            seed: self.seed,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda_2: self.lambda_2,
            p_std: self.p_std,
            drop_rates: DropRates {
                audio: self.audio_drop,
                identity: self.identity_drop,
            },
            smoothing_window: self.smoothing_window,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            grad_clip: self.grad_clip,
            edm: EdmParams {
                sigma_data: self.sigma_data,
            },
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_steps: self.sample_steps,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            rho: self.rho,
            guidance: GuidanceWeights {
                w_aud: self.w_aud,
                w_id: self.w_id,
            },
            seed: self.seed,
        }
    }

    pub fn fixture_config(&self) -> SlidingBarConfig {
        SlidingBarConfig {
            train_videos: self.train_videos,
            seed: self.seed,
            ..Default::default()
        }
    }
}
