use serde::{Deserialize, Serialize};

use super::{DiffusionError, LatentClip};

/// Separate classifier-free guidance scales for the identity and audio conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    pub w_aud: f64,
    pub w_id: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            w_aud: 5.0,
            w_id: 2.0,
        }
    }
}

impl GuidanceWeights {
    /// Weights that reduce guidance to the fully conditioned prediction.
    pub const NONE: GuidanceWeights = GuidanceWeights {
        w_aud: 1.0,
        w_id: 1.0,
    };

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.w_aud.is_finite() && self.w_id.is_finite() {
            Ok(())
        } else {
            Err(DiffusionError::BadConfig(format!(
                "guidance weights must be finite, got w_aud={} w_id={}",
                self.w_aud, self.w_id
            )))
        }
    }
}

/// `z_empty + w_id (z_id - z_empty) + w_aud (z_id_aud - z_id)`, elementwise.
///
/// Evaluated as `(1 - w_id) z_empty + (w_id - w_aud) z_id + w_aud z_id_aud` so
/// that unit weights return `z_id_aud` bit for bit.
pub fn guided_combine(
    z_empty: &LatentClip,
    z_id: &LatentClip,
    z_id_aud: &LatentClip,
    w: &GuidanceWeights,
) -> Result<LatentClip, DiffusionError> {
    z_empty.ensure_same_shape(z_id)?;
    z_empty.ensure_same_shape(z_id_aud)?;
    let (ce, ci, ca) = (1.0 - w.w_id, w.w_id - w.w_aud, w.w_aud);
    let data = z_empty
        .data()
        .iter()
        .zip(z_id.data())
        .zip(z_id_aud.data())
        .map(|((&e, &i), &a)| ce * e + ci * i + ca * a)
        .collect();
    LatentClip::from_vec(z_empty.shape(), data)
}

/// `t_emb + mlp(audio)`: injects audio features into the timestep embedding.
pub fn add_audio_to_timestep<F>(
    t_emb: &[f64],
    audio: &[f64],
    mlp: F,
) -> Result<Vec<f64>, DiffusionError>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let projected = mlp(audio);
    if projected.len() != t_emb.len() {
        return Err(DiffusionError::DimMismatch {
            expected: t_emb.len(),
            found: projected.len(),
        });
    }
    Ok(t_emb.iter().zip(&projected).map(|(t, a)| t + a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ClipShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: ClipShape) -> LatentClip {
        LatentClip::from_vec(
            shape,
            (0..shape.len())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_weights_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = ClipShape::new(3, 2, 4, 4);
        for _ in 0..20 {
            let (e, i, a) = (
                random(&mut rng, shape),
                random(&mut rng, shape),
                random(&mut rng, shape),
            );
            assert_eq!(
                guided_combine(&e, &i, &a, &GuidanceWeights::NONE).unwrap(),
                a
            );
        }
    }

    #[test]
    fn scalar_arithmetic() {
        let s = ClipShape::new(1, 1, 1, 1);
        let z = guided_combine(
            &LatentClip::filled(s, 0.0),
            &LatentClip::filled(s, 1.0),
            &LatentClip::filled(s, 2.0),
            &GuidanceWeights::default(),
        )
        .unwrap();
        assert_eq!(z.data(), &[7.0]);
    }

    #[test]
    fn default_weights_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = ClipShape::new(2, 3, 3, 5);
        let (e, i, a) = (
            random(&mut rng, shape),
            random(&mut rng, shape),
            random(&mut rng, shape),
        );
        let z = guided_combine(&e, &i, &a, &GuidanceWeights::default()).unwrap();
        for k in 0..shape.len() {
            let (ev, iv, av) = (e.data()[k], i.data()[k], a.data()[k]);
            let want = ev + 2.0 * (iv - ev) + 5.0 * (av - iv);
            assert!((z.data()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = LatentClip::zeros(ClipShape::new(1, 1, 2, 2));
        let b = LatentClip::zeros(ClipShape::new(1, 1, 2, 3));
        assert!(guided_combine(&a, &a, &b, &GuidanceWeights::default()).is_err());
    }

    #[test]
    fn audio_timestep_examples() {
        let t = vec![0.5, -1.0, 2.0];
        assert_eq!(
            add_audio_to_timestep(&t, &[9.0, 9.0], |_| vec![0.0; 3]).unwrap(),
            t
        );
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(
            add_audio_to_timestep(&[0.0; 3], &a, |x| x.to_vec()).unwrap(),
            a
        );
        assert!(matches!(
            add_audio_to_timestep(&t, &[1.0], |x| x.to_vec()),
            Err(DiffusionError::DimMismatch {
                expected: 3,
                found: 1
            })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = add_audio_to_timestep(&t, &a, |x| x.iter().map(|v| 2.0 * v).collect()).unwrap();
        for k in 0..16 {
            assert_eq!(out[k], t[k] + 2.0 * a[k]);
        }
    }

    proptest! {
        #[test]
        fn homogeneous_of_degree_one(seed in 0u64..500, c in 0.01f64..20.0, w_aud in -5.0f64..10.0, w_id in -5.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = ClipShape::new(2, 1, 3, 3);
            let (e, i, a) = (random(&mut rng, shape), random(&mut rng, shape), random(&mut rng, shape));
            let w = GuidanceWeights { w_aud, w_id };
            let base = guided_combine(&e, &i, &a, &w).unwrap();
            let scaled = guided_combine(&e.scale(c), &i.scale(c), &a.scale(c), &w).unwrap();
            for (s, b) in scaled.data().iter().zip(base.data()) {
                prop_assert!((s - c * b).abs() <= 1e-9 * (1.0 + (c * b).abs()));
            }
        }

        #[test]
        fn unit_weights_identity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = ClipShape::new(1, 2, 2, 2);
            let (e, i, a) = (random(&mut rng, shape), random(&mut rng, shape), random(&mut rng, shape));
            prop_assert_eq!(guided_combine(&e, &i, &a, &GuidanceWeights::NONE).unwrap(), a);
        }
    }
}
