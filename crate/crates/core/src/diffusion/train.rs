//! Masked diffusion training for the toy denoiser.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::edm::{edm_coefficients, edm_loss_weight, EdmParams};
use super::fixture::{SlidingBarFixture, SlidingBarVideo};
use super::loss::TrainingLoss;
use super::schedule::{interpolation_positions, keyframe_indices, Schedule};
use super::toy::{Conditioning, Reference, ToyDenoiser, ToyDims};
use super::{DiffusionError, LatentClip};
use crate::masking::{blend_latents, MaskRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Keyframe,
    Interpolation,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Keyframe => "keyframe",
            Stage::Interpolation => "interpolation",
        }
    }
}

/// Classifier-free dropout probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropRates {
    pub audio: f64,
    pub identity: f64,
}

impl Default for DropRates {
    fn default() -> Self {
        Self {
            audio: 0.2,
            identity: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_2: f64,
    /// Standard deviation of `ln(sigma)`; the mean is `ln(sigma_data)`.
    pub p_std: f64,
    pub drop_rates: DropRates,
    pub smoothing_window: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub grad_clip: f64,
    pub edm: EdmParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 7,
            batch_size: 8,
            learning_rate: 3e-3,
            lambda_2: 1.0,
            p_std: 1.2,
            drop_rates: DropRates::default(),
            smoothing_window: 50,
            hidden: 64,
            embed_dim: 32,
            grad_clip: 1.0,
            edm: EdmParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.edm.validate()?;
        let bad = |m: &str| Err(DiffusionError::BadConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 || self.smoothing_window == 0 {
            return bad("batch_size and smoothing_window must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.p_std >= 0.0 && self.p_std.is_finite()) {
            return bad("p_std must be non-negative");
        }
        if !(self.lambda_2 >= 0.0 && self.lambda_2.is_finite()) {
            return bad("lambda_2 must be non-negative");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        for r in [self.drop_rates.audio, self.drop_rates.identity] {
            if !(0.0..=1.0).contains(&r) {
                return bad("drop rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Per-step batch-mean loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub losses: Vec<f64>,
    pub window: usize,
}

impl LossHistory {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean of the first `window` steps.
    pub fn initial_smoothed(&self) -> f64 {
        Self::mean(&self.losses[..self.window.min(self.losses.len())])
    }

    /// Mean of the last `window` steps.
    pub fn final_smoothed(&self) -> f64 {
        Self::mean(&self.losses[self.losses.len().saturating_sub(self.window)..])
    }

    pub fn halved(&self) -> bool {
        self.final_smoothed() <= 0.5 * self.initial_smoothed()
    }

    /// Trailing moving average over up to `window` steps.
    pub fn smoothed(&self) -> Vec<f64> {
        (0..self.losses.len())
            .map(|i| Self::mean(&self.losses[(i + 1).saturating_sub(self.window)..=i]))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        crate::write_atomic(path, self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub stage: Stage,
    pub edm: EdmParams,
    pub denoiser: ToyDenoiser,
    pub history: LossHistory,
}

impl TrainedModel {
    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, self)?;
        buf.write_all(b"\n")?;
        crate::write_atomic(path, &buf)
    }
}

/// Clean latents and conditioning for one training or sampling example.
///
/// Keyframe examples take the frames at every keyframe index with the first
/// video frame as identity reference. Interpolation example `segment` takes
/// the frames between keyframes `segment` and `segment + 1` (end keyframe
/// repeated) with both keyframes as references.
pub(crate) fn stage_example(
    stage: Stage,
    video: &SlidingBarVideo,
    schedule: &Schedule,
    segment: usize,
) -> Result<(LatentClip, Conditioning), DiffusionError> {
    let keys = keyframe_indices(schedule);
    match stage {
        Stage::Keyframe => Ok((
            video.clip.select_frames(&keys)?,
            Conditioning {
                reference: Reference::Identity(video.clip.frame(0)),
                audio: video.audio.select(&keys),
            },
        )),
        Stage::Interpolation => {
            if segment + 1 >= keys.len() {
                return Err(DiffusionError::BadSchedule(format!(
                    "segment {segment} out of range for {} keyframes",
                    keys.len()
                )));
            }
            let positions = interpolation_positions(keys[segment], schedule.spacing);
            Ok((
                video.clip.select_frames(&positions)?,
                Conditioning {
                    reference: Reference::Keyframes {
                        start: video.clip.frame(keys[segment]),
                        end: video.clip.frame(keys[segment + 1]),
                    },
                    audio: video.audio.select(&positions),
                },
            ))
        }
    }
}

pub(crate) fn blend(
    clean: &LatentClip,
    noised: &LatentClip,
    mask: &MaskRaster,
) -> Result<LatentClip, DiffusionError> {
    blend_latents(clean, noised, mask).map_err(|e| DiffusionError::Mask(e.to_string()))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains one stage on the fixture's training videos.
pub fn toy_train(
    fixture: &SlidingBarFixture,
    schedule: &Schedule,
    stage: Stage,
    config: &TrainConfig,
) -> Result<TrainedModel, DiffusionError> {
    config.validate()?;
    schedule.validate()?;
    if fixture.train.is_empty() {
        return Err(DiffusionError::BadConfig(
            "fixture has no training videos".into(),
        ));
    }
    let mask = &fixture.latent_mask;
    let shape = fixture.train[0].clip.shape();
    let dims = ToyDims {
        channels: shape.channels,
        height: shape.height,
        width: shape.width,
        audio_dim: fixture.train[0].audio.dim(),
        embed_dim: config.embed_dim,
        hidden: config.hidden,
    };
    let stage_seed = config.seed ^ (stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut net = ToyDenoiser::new(dims, stage_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed.wrapping_add(1));
    let mut adam = Adam::new(net.param_count());
    let mut losses = Vec::with_capacity(config.steps);
    let ln_sd = config.edm.sigma_data.ln();
    let segments = schedule.keyframe_count - 1;

    for step in 0..config.steps {
        let mut grads = vec![0.0; net.param_count()];
        let mut loss_sum = 0.0;
        for _ in 0..config.batch_size {
            let video = &fixture.train[rng.random_range(0..fixture.train.len())];
            let segment = rng.random_range(0..segments);
            let (z, mut cond) = stage_example(stage, video, schedule, segment)?;
            if rng.random_bool(config.drop_rates.audio) {
                cond = cond.identity_only();
            }
            if rng.random_bool(config.drop_rates.identity) {
                cond.reference = Reference::None;
            }

            let n: f64 = rng.sample(StandardNormal);
            let sigma = (ln_sd + config.p_std * n).exp();
            let noise: Vec<f64> = (0..z.data().len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let noised = z.axpby(1.0, &LatentClip::from_vec(z.shape(), noise)?, sigma)?;
            let x = blend(&z, &noised, mask)?;

            let c = edm_coefficients(sigma, &config.edm)?;
            let (f, cache) = net.forward_cached(&x.scale(c.c_in), c.c_noise, &cond);
            let diverged = |e| match e {
                DiffusionError::NonFinite { .. } => DiffusionError::NonFiniteLoss { step, sigma },
                other => other,
            };
            let d = x.axpby(c.c_skip, &f, c.c_out).map_err(diverged)?;
            let objective = TrainingLoss {
                target: &z,
                latent_mask: mask,
                w_t: 1.0,
                lambda_t: edm_loss_weight(sigma, &config.edm)?,
                lambda_2: config.lambda_2,
                rgb_frame: rng.random_range(0..z.shape().frames),
            };
            let value = objective.value(&d).map_err(diverged)?;
            if !value.is_finite() {
                return Err(DiffusionError::NonFiniteLoss { step, sigma });
            }
            loss_sum += value;
            let grad_d = objective
                .gradient(&d)?
                .scale(c.c_out / config.batch_size as f64);
            net.backward(&cache, &cond, &grad_d, &mut grads);
        }
        let mean = loss_sum / config.batch_size as f64;
        losses.push(mean);

        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(DiffusionError::NonFiniteLoss {
                step,
                sigma: f64::NAN,
            });
        }
        if norm > config.grad_clip {
            let k = config.grad_clip / norm;
            grads.iter_mut().for_each(|g| *g *= k);
        }
        adam.step(net.params_mut(), &grads, config.learning_rate);
    }

    Ok(TrainedModel {
        stage,
        edm: config.edm,
        denoiser: net,
        history: LossHistory {
            losses,
            window: config.smoothing_window,
        },
    })
}
