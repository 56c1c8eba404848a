//! Inpainting masks: landmark-driven box variants, occlusion refinement,
//! latent-resolution downsampling and masked latent blending.
//!
//! A set bit marks a pixel the model regenerates; a clear bit is preserved
//! from the source video.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{DiffusionError, LatentClip};
use crate::landmarks::{face_bounding_box, LandmarkError, LandmarkFrame, MOUTH_RANGE, NOSE_TIP};
use crate::pgm::{Pgm, PgmError};

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("mask of {width}x{height} is not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("bit buffer has {found} entries, expected {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("mask region is empty after clamping to the image")]
    EmptyMask,
    #[error("invalid mask parameter {name} = {value}")]
    BadParam { name: &'static str, value: f64 },
    #[error("mask is {mask:?} but latent frames are {latent:?}")]
    LatentMismatch {
        mask: (usize, usize),
        latent: (usize, usize),
    },
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskRaster {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl MaskRaster {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width * height {
            return Err(MaskError::BadLength {
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_rect(width: usize, height: usize, rect: PixelRect) -> Self {
        let mut m = Self::zeros(width, height);
        for y in rect.top..rect.bottom.min(height) {
            for x in rect.left..rect.right.min(width) {
                m.bits[y * width + x] = true;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskRaster) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint_from(&self, other: &MaskRaster) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    /// Any sample above half of `maxval` counts as set.
    pub fn from_pgm(pgm: &Pgm) -> Self {
        let cut = pgm.maxval as u32;
        Self {
            width: pgm.width,
            height: pgm.height,
            bits: pgm.samples.iter().map(|&s| 2 * s as u32 > cut).collect(),
        }
    }

    pub fn read_pgm(path: &Path) -> Result<Self, MaskError> {
        Ok(Self::from_pgm(&Pgm::read(path)?))
    }

    /// 255 for set bits, 0 otherwise.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let samples: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Pgm::encode_u8(self.width, self.height, &samples)
    }
}

/// Half-open integer rectangle `[left, right) x [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl PixelRect {
    pub fn is_empty(&self) -> bool {
        self.left >= self.right || self.top >= self.bottom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskVariant {
    /// Lower face box starting slightly above the nose tip, down to the image edge.
    Ours,
    /// As `Ours` but starting exactly at the nose tip.
    NoseLevel,
    /// Padded box around the lip landmarks.
    MouthOnly,
    /// Full-width band from the nose tip to the bottom edge.
    FullLowerFace,
}

impl std::str::FromStr for MaskVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ours" => Ok(Self::Ours),
            "nose-level" => Ok(Self::NoseLevel),
            "mouth-only" => Ok(Self::MouthOnly),
            "full-lower-face" => Ok(Self::FullLowerFace),
            other => Err(format!(
                "unknown mask variant {other:?} (expected ours, nose-level, mouth-only, full-lower-face)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    /// Fraction of the face-box width added on each side.
    pub side_pad_frac: f64,
    /// How far above the nose tip the `Ours` box starts, as a fraction of face-box height.
    pub above_nose_frac: f64,
    /// Padding around the lips for `MouthOnly`, as a fraction of face-box width.
    pub mouth_pad_frac: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            side_pad_frac: 0.05,
            above_nose_frac: 0.1,
            mouth_pad_frac: 0.1,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<(), MaskError> {
        for (name, value) in [
            ("side_pad_frac", self.side_pad_frac),
            ("above_nose_frac", self.above_nose_frac),
            ("mouth_pad_frac", self.mouth_pad_frac),
        ] {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(MaskError::BadParam { name, value });
            }
        }
        Ok(())
    }
}

/// The pixel rectangle covered by `variant` for this frame.
pub fn mask_region(
    frame: &LandmarkFrame,
    variant: MaskVariant,
    params: &MaskParams,
) -> Result<PixelRect, MaskError> {
    params.validate()?;
    let b = face_bounding_box(frame)?;
    let (w, h) = (b.width(), b.height());
    let img_w = frame.image_width() as f64;
    let img_h = frame.image_height() as f64;
    let nose_y = frame.point(NOSE_TIP).y;

    let (left, top, right, bottom) = match variant {
        MaskVariant::Ours => (
            b.left - params.side_pad_frac * w,
            nose_y - params.above_nose_frac * h,
            b.right + params.side_pad_frac * w,
            img_h,
        ),
        MaskVariant::NoseLevel => (
            b.left - params.side_pad_frac * w,
            nose_y,
            b.right + params.side_pad_frac * w,
            img_h,
        ),
        MaskVariant::MouthOnly => {
            let pad = params.mouth_pad_frac * w;
            let mouth = &frame.points()[MOUTH_RANGE];
            let fold = |init: f64, f: fn(f64, f64) -> f64, get: fn(&crate::Point) -> f64| {
                mouth.iter().map(get).fold(init, f)
            };
            (
                fold(f64::INFINITY, f64::min, |p| p.x) - pad,
                fold(f64::INFINITY, f64::min, |p| p.y) - pad,
                fold(f64::NEG_INFINITY, f64::max, |p| p.x) + pad,
                fold(f64::NEG_INFINITY, f64::max, |p| p.y) + pad,
            )
        }
        MaskVariant::FullLowerFace => (0.0, nose_y, img_w, img_h),
    };

    let rect = PixelRect {
        left: left.floor().clamp(0.0, img_w) as usize,
        top: top.floor().clamp(0.0, img_h) as usize,
        right: right.ceil().clamp(0.0, img_w) as usize,
        bottom: bottom.ceil().clamp(0.0, img_h) as usize,
    };
    if rect.is_empty() {
        return Err(MaskError::EmptyMask);
    }
    Ok(rect)
}

/// Rasterizes `variant` at the frame's image resolution.
pub fn build_mask(
    frame: &LandmarkFrame,
    variant: MaskVariant,
    params: &MaskParams,
) -> Result<MaskRaster, MaskError> {
    let rect = mask_region(frame, variant, params)?;
    Ok(MaskRaster::from_rect(
        frame.image_width() as usize,
        frame.image_height() as usize,
        rect,
    ))
}

/// `mask AND NOT occlusion`, pixelwise.
pub fn refine_with_occlusion(
    mask: &MaskRaster,
    occlusion: &MaskRaster,
) -> Result<MaskRaster, MaskError> {
    if mask.dims() != occlusion.dims() {
        return Err(MaskError::DimensionMismatch {
            left: mask.dims(),
            right: occlusion.dims(),
        });
    }
    Ok(MaskRaster {
        width: mask.width,
        height: mask.height,
        bits: mask
            .bits
            .iter()
            .zip(&occlusion.bits)
            .map(|(&m, &o)| m && !o)
            .collect(),
    })
}

/// Each output cell is set when any pixel of its `factor x factor` block is set.
pub fn downsample_to_latent(mask: &MaskRaster, factor: usize) -> Result<MaskRaster, MaskError> {
    if factor == 0 || mask.width % factor != 0 || mask.height % factor != 0 {
        return Err(MaskError::NotDivisible {
            width: mask.width,
            height: mask.height,
            factor,
        });
    }
    let (ow, oh) = (mask.width / factor, mask.height / factor);
    let mut out = MaskRaster::zeros(ow, oh);
    for y in 0..mask.height {
        let row = &mask.bits[y * mask.width..(y + 1) * mask.width];
        for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            out.bits[(y / factor) * ow + x / factor] = true;
        }
    }
    Ok(out)
}

/// `noised` where the mask is set, `clean` elsewhere. The mask is broadcast
/// over frames and channels.
pub fn blend_latents(
    clean: &LatentClip,
    noised: &LatentClip,
    latent_mask: &MaskRaster,
) -> Result<LatentClip, MaskError> {
    clean.ensure_same_shape(noised)?;
    let shape = clean.shape();
    if latent_mask.dims() != (shape.width, shape.height) {
        return Err(MaskError::LatentMismatch {
            mask: latent_mask.dims(),
            latent: (shape.width, shape.height),
        });
    }
    let plane = shape.width * shape.height;
    let data = clean
        .data()
        .iter()
        .zip(noised.data())
        .enumerate()
        .map(|(i, (&c, &n))| if latent_mask.bits[i % plane] { n } else { c })
        .collect();
    Ok(LatentClip::from_vec(shape, data)?)
}
