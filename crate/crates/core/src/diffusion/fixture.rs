//! The "sliding bar" toy dataset and the raw clip file format.
//!
//! Each video is a `1 x 8 x 8` latent sequence. Inside the mouth mask a
//! vertical Gaussian bar slides left and right; outside it a per-video
//! texture stays fixed. The audio track is a Gaussian bump over its feature
//! channels centred on the bar position, so audio fully determines the
//! masked content.
//!
//! Clips are stored as raw little-endian `f32` with a JSON sidecar
//! `{"shape": [T, C, H, W], "dtype": "f32"}` next to them.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AudioFeatureTrack, ClipShape, DiffusionError, LatentClip, Schedule};
use crate::landmarks::LandmarkFrame;
use crate::masking::{build_mask, downsample_to_latent, MaskParams, MaskRaster, MaskVariant};
use crate::synthetic::face_points;

/// Latent mask for a 64x64 synthetic face encoded at 8x downsampling.
pub fn default_latent_mask() -> MaskRaster {
    let frame = LandmarkFrame::new(0, face_points(32.0, 26.0, 12.0, 0.2), 64, 64)
        .expect("synthetic face fits the canvas");
    let pixel = build_mask(&frame, MaskVariant::Ours, &MaskParams::default())
        .expect("synthetic face yields a mask");
    downsample_to_latent(&pixel, 8).expect("64 is divisible by 8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlidingBarConfig {
    pub train_videos: usize,
    pub audio_dim: usize,
    pub bar_width: f64,
    pub bar_amplitude: f64,
    pub texture_std: f64,
    pub seed: u64,
}

impl Default for SlidingBarConfig {
    fn default() -> Self {
        Self {
            train_videos: 12,
            audio_dim: 8,
            bar_width: 0.7,
            bar_amplitude: 1.0,
            texture_std: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingBarVideo {
    pub id: String,
    pub clip: LatentClip,
    pub audio: AudioFeatureTrack,
    /// Bar centre per frame, in latent columns.
    pub bar_positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingBarFixture {
    pub latent_mask: MaskRaster,
    pub train: Vec<SlidingBarVideo>,
    pub held_out: SlidingBarVideo,
}

impl SlidingBarFixture {
    /// Videos of `T * S + 1` frames so that every keyframe index is valid.
    pub fn generate(
        config: &SlidingBarConfig,
        schedule: &Schedule,
    ) -> Result<Self, DiffusionError> {
        schedule.validate()?;
        if config.train_videos == 0 || config.audio_dim < 2 {
            return Err(DiffusionError::BadConfig(
                "fixture needs at least one training video and two audio channels".into(),
            ));
        }
        if !(config.bar_width > 0.0
            && config.texture_std >= 0.0
            && config.bar_amplitude.is_finite())
        {
            return Err(DiffusionError::BadConfig(
                "invalid bar fixture parameters".into(),
            ));
        }
        let latent_mask = default_latent_mask();
        let frames = schedule.keyframe_count * schedule.spacing + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut videos: Vec<SlidingBarVideo> = (0..=config.train_videos)
            .map(|i| {
                make_video(
                    &mut rng,
                    config,
                    &latent_mask,
                    frames,
                    format!("bar_{i:03}"),
                )
            })
            .collect();
        let held_out = videos.pop().expect("at least one video");
        Ok(Self {
            latent_mask,
            train: videos,
            held_out,
        })
    }
}

fn make_video(
    rng: &mut ChaCha8Rng,
    config: &SlidingBarConfig,
    mask: &MaskRaster,
    frames: usize,
    id: String,
) -> SlidingBarVideo {
    let (w, h) = mask.dims();
    let cols: Vec<usize> = (0..w).filter(|&x| (0..h).any(|y| mask.get(x, y))).collect();
    let (lo, hi) = (cols[0] as f64, *cols.last().unwrap() as f64);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);

    let texture_dist = Normal::new(0.0, config.texture_std.max(f64::MIN_POSITIVE)).unwrap();
    let texture: Vec<f64> = (0..w * h).map(|_| texture_dist.sample(rng)).collect();
    let period = rng.random_range(18.0..60.0);
    let phase = rng.random_range(0.0..2.0 * PI);

    let shape = ClipShape::new(frames, 1, h, w);
    let mut clip = LatentClip::zeros(shape);
    let mut positions = Vec::with_capacity(frames);
    let mut audio = Vec::with_capacity(frames);
    let two_w2 = 2.0 * config.bar_width * config.bar_width;
    for t in 0..frames {
        let p = mid + half * (2.0 * PI * t as f64 / period + phase).sin();
        positions.push(p);
        for y in 0..h {
            for x in 0..w {
                let v = if mask.get(x, y) {
                    config.bar_amplitude * (-(x as f64 - p).powi(2) / two_w2).exp()
                } else {
                    texture[y * w + x]
                };
                clip.set(t, 0, y, x, v);
            }
        }
        let q = if hi > lo { (p - lo) / (hi - lo) } else { 0.5 } * (config.audio_dim - 1) as f64;
        audio.push(
            (0..config.audio_dim)
                .map(|k| (-(k as f64 - q).powi(2) / 2.0).exp())
                .collect(),
        );
    }
    SlidingBarVideo {
        id,
        clip,
        audio: AudioFeatureTrack::new(audio).expect("rows share a width"),
        bar_positions: positions,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub shape: [usize; 4],
    pub dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (raw f32) and its `.json` sidecar.
pub fn write_clip(path: &Path, clip: &LatentClip) -> Result<(), DiffusionError> {
    let mut bytes = Vec::with_capacity(clip.data().len() * 4);
    for &v in clip.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let sidecar = ClipSidecar {
        shape: clip.shape().as_array(),
        dtype: "f32".into(),
    };
    let json =
        serde_json::to_string(&sidecar).map_err(|e| DiffusionError::Format(e.to_string()))?;
    crate::write_atomic(path, &bytes)?;
    crate::write_atomic(&sidecar_path(path), json.as_bytes())?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<LatentClip, DiffusionError> {
    let side_text = fs::read_to_string(sidecar_path(path))?;
    let side: ClipSidecar =
        serde_json::from_str(&side_text).map_err(|e| DiffusionError::Format(e.to_string()))?;
    if side.dtype != "f32" {
        return Err(DiffusionError::Format(format!(
            "unsupported dtype {:?}",
            side.dtype
        )));
    }
    let [t, c, h, w] = side.shape;
    let shape = ClipShape::new(t, c, h, w);
    let bytes = fs::read(path)?;
    if bytes.len() != shape.len() * 4 {
        return Err(DiffusionError::Format(format!(
            "{} bytes for shape {shape}, expected {}",
            bytes.len(),
            shape.len() * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    LatentClip::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_mask_covers_lower_face() {
        let m = default_latent_mask();
        assert_eq!(m.dims(), (8, 8));
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(
                    m.get(x, y),
                    (3..8).contains(&y) && (2..6).contains(&x),
                    "cell {x},{y}"
                );
            }
        }
    }

    #[test]
    fn fixture_is_deterministic_and_consistent() {
        let schedule = Schedule::new(3, 4).unwrap();
        let cfg = SlidingBarConfig {
            train_videos: 3,
            ..Default::default()
        };
        let a = SlidingBarFixture::generate(&cfg, &schedule).unwrap();
        assert_eq!(a, SlidingBarFixture::generate(&cfg, &schedule).unwrap());
        assert_eq!(a.train.len(), 3);
        let v = &a.held_out;
        assert_eq!(v.clip.shape(), ClipShape::new(13, 1, 8, 8));
        assert_eq!(v.audio.frames(), 13);
        for t in 0..13 {
            let p = v.bar_positions[t];
            assert!((2.0..=5.0).contains(&p));
            // The brightest masked column is the one nearest the bar.
            let best = (2..6)
                .max_by(|&a, &b| v.clip.get(t, 0, 5, a).total_cmp(&v.clip.get(t, 0, 5, b)))
                .unwrap();
            assert!((best as f64 - p).abs() <= 0.5 + 1e-9);
            // Unmasked texture is constant in time.
            assert_eq!(v.clip.get(t, 0, 0, 0), v.clip.get(0, 0, 0, 0));
        }
    }

    #[test]
    fn clip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.f32");
        let shape = ClipShape::new(2, 1, 2, 3);
        let clip =
            LatentClip::from_vec(shape, (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
        write_clip(&path, &clip).unwrap();
        let side: ClipSidecar =
            serde_json::from_str(&fs::read_to_string(dir.path().join("clip.json")).unwrap())
                .unwrap();
        assert_eq!(side.shape, [2, 1, 2, 3]);
        assert_eq!(side.dtype, "f32");
        assert_eq!(read_clip(&path).unwrap(), clip);
        fs::write(&path, [0u8; 5]).unwrap();
        assert!(matches!(read_clip(&path), Err(DiffusionError::Format(_))));
    }
}
