//! Masked training losses. Only the regenerated region contributes: every
//! mean below runs over set mask cells only, broadcast across frames and
//! channels.

use super::{DiffusionError, FrameTensor, LatentClip};
use crate::masking::MaskRaster;

fn check_mask(mask: &MaskRaster, width: usize, height: usize) -> Result<(), DiffusionError> {
    if mask.dims() != (width, height) {
        return Err(DiffusionError::MaskMismatch {
            mask: mask.dims(),
            clip: (width, height),
        });
    }
    Ok(())
}

/// `w_t` times the mean squared error over masked latent elements; zero for
/// an empty mask.
pub fn latent_loss(
    prediction: &LatentClip,
    target: &LatentClip,
    w_t: f64,
    latent_mask: &MaskRaster,
) -> Result<f64, DiffusionError> {
    prediction.ensure_same_shape(target)?;
    let s = prediction.shape();
    check_mask(latent_mask, s.width, s.height)?;
    let n = latent_mask.count() * s.frames * s.channels;
    if n == 0 {
        return Ok(0.0);
    }
    let plane = s.width * s.height;
    let bits = latent_mask.bits();
    let sum: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .filter(|(i, _)| bits[i % plane])
        .map(|(_, (p, t))| (p - t) * (p - t))
        .sum();
    Ok(w_t * sum / n as f64)
}

/// Gradient of [`latent_loss`] with respect to `prediction`.
pub fn latent_loss_grad(
    prediction: &LatentClip,
    target: &LatentClip,
    w_t: f64,
    latent_mask: &MaskRaster,
) -> Result<LatentClip, DiffusionError> {
    prediction.ensure_same_shape(target)?;
    let s = prediction.shape();
    check_mask(latent_mask, s.width, s.height)?;
    let n = latent_mask.count() * s.frames * s.channels;
    let mut grad = LatentClip::zeros(s);
    if n == 0 {
        return Ok(grad);
    }
    let plane = s.width * s.height;
    let bits = latent_mask.bits();
    let k = 2.0 * w_t / n as f64;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if bits[i % plane] {
            *g = k * (prediction.data()[i] - target.data()[i]);
        }
    }
    Ok(grad)
}

/// Pixel-space counterpart of [`latent_loss`] on a single decoded frame.
pub fn rgb_loss(
    decoded: &FrameTensor,
    target: &FrameTensor,
    w_t: f64,
    pixel_mask: &MaskRaster,
) -> Result<f64, DiffusionError> {
    let (pred, tgt) = frame_pair_as_clips(decoded, target)?;
    latent_loss(&pred, &tgt, w_t, pixel_mask)
}

pub fn rgb_loss_grad(
    decoded: &FrameTensor,
    target: &FrameTensor,
    w_t: f64,
    pixel_mask: &MaskRaster,
) -> Result<FrameTensor, DiffusionError> {
    let (pred, tgt) = frame_pair_as_clips(decoded, target)?;
    Ok(latent_loss_grad(&pred, &tgt, w_t, pixel_mask)?.frame(0))
}

fn frame_pair_as_clips(
    a: &FrameTensor,
    b: &FrameTensor,
) -> Result<(LatentClip, LatentClip), DiffusionError> {
    if !a.same_dims(b) {
        return Err(DiffusionError::FrameShapeMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok((
        LatentClip::from_frames(std::slice::from_ref(a))?,
        LatentClip::from_frames(std::slice::from_ref(b))?,
    ))
}

/// `lambda_t * (l_latent + lambda_2 * l_rgb)`.
pub fn total_loss(l_latent: f64, l_rgb: f64, lambda_t: f64, lambda_2: f64) -> f64 {
    lambda_t * (l_latent + lambda_2 * l_rgb)
}

/// The full per-sample objective with an identity decoder: the latent term
/// over the whole clip plus the pixel term on frame `rgb_frame`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingLoss<'a> {
    pub target: &'a LatentClip,
    pub latent_mask: &'a MaskRaster,
    pub w_t: f64,
    pub lambda_t: f64,
    pub lambda_2: f64,
    pub rgb_frame: usize,
}

impl TrainingLoss<'_> {
    pub fn value(&self, prediction: &LatentClip) -> Result<f64, DiffusionError> {
        let l_latent = latent_loss(prediction, self.target, self.w_t, self.latent_mask)?;
        let l_rgb = rgb_loss(
            &prediction.frame(self.rgb_frame),
            &self.target.frame(self.rgb_frame),
            self.w_t,
            self.latent_mask,
        )?;
        Ok(total_loss(l_latent, l_rgb, self.lambda_t, self.lambda_2))
    }

    pub fn gradient(&self, prediction: &LatentClip) -> Result<LatentClip, DiffusionError> {
        let mut grad = latent_loss_grad(prediction, self.target, self.w_t, self.latent_mask)?;
        let g_rgb = rgb_loss_grad(
            &prediction.frame(self.rgb_frame),
            &self.target.frame(self.rgb_frame),
            self.w_t,
            self.latent_mask,
        )?;
        for (g, r) in grad
            .frame_slice_mut(self.rgb_frame)
            .iter_mut()
            .zip(&g_rgb.data)
        {
            *g += self.lambda_2 * r;
        }
        for g in grad.data_mut() {
            *g *= self.lambda_t;
        }
        Ok(grad)
    }
}
