//! EDM preconditioning:
//! `D(x; sigma) = c_skip(sigma) x + c_out(sigma) F(c_in(sigma) x; c_noise(sigma))`
//! with
//! `c_skip = sd^2 / (sigma^2 + sd^2)`, `c_out = sigma sd / sqrt(sigma^2 + sd^2)`,
//! `c_in = 1 / sqrt(sigma^2 + sd^2)`, `c_noise = ln(sigma) / 4`,
//! and the matching loss weight `lambda = (sigma^2 + sd^2) / (sigma sd)^2`.

use serde::{Deserialize, Serialize};

use super::toy::Conditioning;
use super::{DiffusionError, LatentClip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmParams {
    /// Standard deviation of the clean data.
    pub sigma_data: f64,
}

impl Default for EdmParams {
    fn default() -> Self {
        Self { sigma_data: 0.5 }
    }
}

impl EdmParams {
    pub fn new(sigma_data: f64) -> Result<Self, DiffusionError> {
        let p = Self { sigma_data };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.sigma_data.is_finite() && self.sigma_data > 0.0 {
            Ok(())
        } else {
            Err(DiffusionError::BadSigmaData(self.sigma_data))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmCoefficients {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

fn check_sigma(sigma: f64) -> Result<(), DiffusionError> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(DiffusionError::BadSigma(sigma))
    }
}

pub fn edm_coefficients(sigma: f64, params: &EdmParams) -> Result<EdmCoefficients, DiffusionError> {
    check_sigma(sigma)?;
    params.validate()?;
    let sd = params.sigma_data;
    let total = sigma * sigma + sd * sd;
    let root = total.sqrt();
    Ok(EdmCoefficients {
        c_skip: sd * sd / total,
        c_out: sigma * sd / root,
        c_in: 1.0 / root,
        c_noise: sigma.ln() / 4.0,
    })
}

/// Per-noise-level loss weight `lambda(sigma)`.
pub fn edm_loss_weight(sigma: f64, params: &EdmParams) -> Result<f64, DiffusionError> {
    check_sigma(sigma)?;
    params.validate()?;
    let sd = params.sigma_data;
    Ok((sigma * sigma + sd * sd) / (sigma * sd).powi(2))
}

/// The raw trainable map `F`. Implementations must preserve the input shape.
pub trait Network {
    fn forward(&self, x: &LatentClip, noise_label: f64, cond: &Conditioning) -> LatentClip;
}

impl<N: Network + ?Sized> Network for &N {
    fn forward(&self, x: &LatentClip, noise_label: f64, cond: &Conditioning) -> LatentClip {
        (**self).forward(x, noise_label, cond)
    }
}

/// Applies the preconditioned denoiser around `net`.
pub fn denoise<N: Network + ?Sized>(
    x: &LatentClip,
    sigma: f64,
    net: &N,
    cond: &Conditioning,
    params: &EdmParams,
) -> Result<LatentClip, DiffusionError> {
    let c = edm_coefficients(sigma, params)?;
    let raw = net.forward(&x.scale(c.c_in), c.c_noise, cond);
    x.ensure_same_shape(&raw)?;
    x.axpby(c.c_skip, &raw, c.c_out)
}

/// A denoiser `D(x; sigma, cond)` that predicts the clean clip.
pub trait Denoiser {
    fn denoise(
        &self,
        x: &LatentClip,
        sigma: f64,
        cond: &Conditioning,
    ) -> Result<LatentClip, DiffusionError>;
}

/// Wraps a [`Network`] with EDM preconditioning.
pub struct Preconditioned<'a, N: ?Sized> {
    pub net: &'a N,
    pub params: EdmParams,
}

impl<N: Network + ?Sized> Denoiser for Preconditioned<'_, N> {
    fn denoise(
        &self,
        x: &LatentClip,
        sigma: f64,
        cond: &Conditioning,
    ) -> Result<LatentClip, DiffusionError> {
        denoise(x, sigma, self.net, cond, &self.params)
    }
}

/// Karras noise levels for `n_steps` steps, descending from `sigma_max` to
/// `sigma_min`, followed by a final 0.
pub fn karras_sigmas(n_steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_steps + 1);
    if n_steps == 1 {
        out.push(sigma_max);
    } else {
        let (lo, hi) = (sigma_min.powf(1.0 / rho), sigma_max.powf(1.0 / rho));
        for i in 0..n_steps {
            let f = i as f64 / (n_steps - 1) as f64;
            out.push((hi + f * (lo - hi)).powf(rho));
        }
    }
    out.push(0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{AudioFeatureTrack, ClipShape, Reference};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl Network for Zero {
        fn forward(&self, x: &LatentClip, _: f64, _: &Conditioning) -> LatentClip {
            LatentClip::zeros(x.shape())
        }
    }

    struct Identity;
    impl Network for Identity {
        fn forward(&self, x: &LatentClip, _: f64, _: &Conditioning) -> LatentClip {
            x.clone()
        }
    }

    struct Shrink;
    impl Network for Shrink {
        fn forward(&self, _: &LatentClip, _: f64, _: &Conditioning) -> LatentClip {
            LatentClip::zeros(ClipShape::new(1, 1, 1, 1))
        }
    }

    fn cond(frames: usize) -> Conditioning {
        Conditioning {
            reference: Reference::None,
            audio: AudioFeatureTrack::zeros(frames, 2),
        }
    }

    fn random_clip(rng: &mut ChaCha8Rng, shape: ClipShape) -> LatentClip {
        LatentClip::from_vec(
            shape,
            (0..shape.len())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn coefficients_at_sigma_data() {
        let c = edm_coefficients(0.5, &EdmParams::default()).unwrap();
        assert!((c.c_skip - 0.5).abs() < 1e-6);
        assert!((c.c_out - 0.353553).abs() < 1e-6);
        assert!((c.c_in - 1.414214).abs() < 1e-6);
    }

    #[test]
    fn coefficients_small_sigma_limit() {
        let c = edm_coefficients(1e-8, &EdmParams::default()).unwrap();
        assert!((c.c_skip - 1.0).abs() < 1e-12);
        assert!((c.c_out - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn coefficients_match_high_precision_values() {
        // (sigma, c_skip, c_out, c_in, c_noise, lambda), sigma_data = 0.5,
        // evaluated with 40-digit arithmetic.
        let table = [
            (
                0.002,
                0.99998400025599590407,
                0.00199998400019199744,
                1.99998400019199744,
                -1.5536520246055479357,
                250004.0,
            ),
            (
                0.1,
                0.96153846153846153846,
                0.098058067569092015962,
                1.9611613513818403192,
                -0.575646273248511421,
                104.0,
            ),
            (
                0.5,
                0.5,
                0.3535533905932737622,
                1.4142135623730950488,
                -0.17328679513998632735,
                8.0,
            ),
            (
                1.7,
                0.079617834394904458599,
                0.47968275078563528158,
                0.56433264798310033127,
                0.13265706276554259906,
                4.3460207612456747405,
            ),
            (
                80.0,
                0.00003906097418069606656,
                0.49999023466109298201,
                0.01249975586652732455,
                1.0955066586684704031,
                4.00015625,
            ),
        ];
        let p = EdmParams::default();
        for (sigma, skip, out, cin, noise, lambda) in table {
            let c = edm_coefficients(sigma, &p).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(c.c_skip, skip) < 1e-12, "c_skip at {sigma}");
            assert!(rel(c.c_out, out) < 1e-12, "c_out at {sigma}");
            assert!(rel(c.c_in, cin) < 1e-12, "c_in at {sigma}");
            assert!(rel(c.c_noise, noise) < 1e-12, "c_noise at {sigma}");
            assert!(rel(edm_loss_weight(sigma, &p).unwrap(), lambda) < 1e-12);
        }
    }

    #[test]
    fn coefficients_satisfy_identities_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let sigma = (rng.random_range(-7.0f64..5.0)).exp();
            let sd = rng.random_range(0.05..2.0);
            let c = edm_coefficients(sigma, &EdmParams { sigma_data: sd }).unwrap();
            // Alternative algebraic forms written in terms of r = sigma / sd.
            let r = sigma / sd;
            assert!((c.c_skip - 1.0 / (1.0 + r * r)).abs() < 1e-12);
            assert!((c.c_out - sigma / (1.0 + r * r).sqrt()).abs() <= 1e-12 * sigma.max(1.0));
            assert!((c.c_in * sd * (1.0 + r * r).sqrt() - 1.0).abs() < 1e-12);
            // Skip and output paths split unit variance between them.
            assert!((c.c_skip + c.c_out * c.c_in * sigma / sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let p = EdmParams::default();
        assert!(matches!(
            edm_coefficients(0.0, &p),
            Err(DiffusionError::BadSigma(_))
        ));
        assert!(edm_coefficients(-1.0, &p).is_err());
        assert!(edm_coefficients(f64::NAN, &p).is_err());
        assert!(EdmParams::new(0.0).is_err());
    }

    #[test]
    fn denoise_with_zero_network_scales_by_c_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_clip(&mut rng, ClipShape::new(2, 1, 3, 3));
        for sigma in [0.01, 0.5, 3.0] {
            let c = edm_coefficients(sigma, &EdmParams::default()).unwrap();
            let d = denoise(&x, sigma, &Zero, &cond(2), &EdmParams::default()).unwrap();
            for (a, b) in d.data().iter().zip(x.data()) {
                assert_eq!(*a, c.c_skip * b);
            }
        }
    }

    #[test]
    fn denoise_identity_network_at_sigma_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_clip(&mut rng, ClipShape::new(2, 2, 3, 3));
        let d = denoise(&x, 0.5, &Identity, &cond(2), &EdmParams::default()).unwrap();
        for (a, b) in d.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn denoise_tends_to_identity_as_sigma_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_clip(&mut rng, ClipShape::new(1, 1, 4, 4));
        let d = denoise(&x, 1e-9, &Identity, &cond(1), &EdmParams::default()).unwrap();
        for (a, b) in d.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn denoise_rejects_shape_changing_network() {
        let x = LatentClip::zeros(ClipShape::new(1, 1, 2, 2));
        assert!(matches!(
            denoise(&x, 1.0, &Shrink, &cond(1), &EdmParams::default()),
            Err(DiffusionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn karras_grid_is_descending_and_ends_at_zero() {
        let s = karras_sigmas(10, 0.002, 80.0, 7.0);
        assert_eq!(s.len(), 11);
        assert!((s[0] - 80.0).abs() < 1e-9);
        assert!((s[9] - 0.002).abs() < 1e-12);
        assert_eq!(s[10], 0.0);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(karras_sigmas(1, 0.002, 80.0, 7.0), vec![80.0, 0.0]);
    }
}
