use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::edm::{karras_sigmas, Denoiser};
use super::guidance::{guided_combine, GuidanceWeights};
use super::toy::Conditioning;
use super::train::blend;
use super::{DiffusionError, LatentClip};
use crate::masking::MaskRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub guidance: GuidanceWeights,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            guidance: GuidanceWeights::default(),
            seed: 7,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.guidance.validate()?;
        if self.n_steps == 0 {
            return Err(DiffusionError::BadConfig(
                "n_steps must be at least 1".into(),
            ));
        }
        let ok = self.sigma_min > 0.0
            && self.sigma_max.is_finite()
            && self.sigma_min <= self.sigma_max
            && self.rho > 0.0;
        if !ok {
            return Err(DiffusionError::BadConfig(format!(
                "need 0 < sigma_min <= sigma_max and rho > 0, got {} {} {}",
                self.sigma_min, self.sigma_max, self.rho
            )));
        }
        Ok(())
    }
}

/// Euler sampling over a Karras grid with identity/audio guidance.
///
/// The masked region starts as `sigma_max`-scaled noise; everything outside
/// the mask is copied from `masked_input` after every step, so it comes out
/// unchanged. The final step to `sigma = 0` returns the guided estimate.
pub fn toy_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    masked_input: &LatentClip,
    latent_mask: &MaskRaster,
    conditioning: &Conditioning,
    config: &SamplerConfig,
) -> Result<LatentClip, DiffusionError> {
    config.validate()?;
    let shape = masked_input.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise: Vec<f64> = (0..shape.len())
        .map(|_| config.sigma_max * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut x = blend(
        masked_input,
        &LatentClip::from_vec(shape, noise)?,
        latent_mask,
    )?;

    let empty = conditioning.empty();
    let identity = conditioning.identity_only();
    let sigmas = karras_sigmas(
        config.n_steps,
        config.sigma_min,
        config.sigma_max,
        config.rho,
    );
    for pair in sigmas.windows(2) {
        let (sigma, next) = (pair[0], pair[1]);
        let z_empty = denoiser.denoise(&x, sigma, &empty)?;
        let z_id = denoiser.denoise(&x, sigma, &identity)?;
        let z_full = denoiser.denoise(&x, sigma, conditioning)?;
        let d = guided_combine(&z_empty, &z_id, &z_full, &config.guidance)?;
        let stepped = if next == 0.0 {
            d
        } else {
            // x + (next - sigma) * (x - d) / sigma
            let k = (next - sigma) / sigma;
            x.axpby(1.0 + k, &d, -k)?
        };
        x = blend(masked_input, &stepped, latent_mask)?;
    }
    Ok(x)
}
