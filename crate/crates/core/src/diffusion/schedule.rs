//! Keyframe placement and interpolation-sequence bookkeeping.
//!
//! Keyframes sit at `t_k = k * S` for `k = 1..=T`. Each interpolation input is
//! `[z_a, z_m x S, z_b]`, so slot `j` (1-based) maps to video frame `t_i + j`
//! and the last slot lands on the same frame as the end keyframe. Stitching
//! keeps the keyframe and drops that duplicated slot.

use serde::{Deserialize, Serialize};

use super::{DiffusionError, FrameTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Number of keyframes `T`.
    pub keyframe_count: usize,
    /// Spacing `S` between consecutive keyframes, in frames.
    pub spacing: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            keyframe_count: 14,
            spacing: 12,
        }
    }
}

impl Schedule {
    pub fn new(keyframe_count: usize, spacing: usize) -> Result<Self, DiffusionError> {
        let s = Self {
            keyframe_count,
            spacing,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.keyframe_count < 2 {
            return Err(DiffusionError::BadSchedule(format!(
                "need at least 2 keyframes, got {}",
                self.keyframe_count
            )));
        }
        if self.spacing < 1 {
            return Err(DiffusionError::BadSchedule(
                "spacing must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Length of every interpolation sequence, `S + 2`.
    pub fn interpolation_len(&self) -> usize {
        self.spacing + 2
    }

    /// Frames covered from the first to the last keyframe, inclusive.
    pub fn stitched_len(&self) -> usize {
        (self.keyframe_count - 1) * self.spacing + 1
    }
}

/// `[S, 2S, ..., T*S]`.
pub fn keyframe_indices(schedule: &Schedule) -> Vec<usize> {
    (1..=schedule.keyframe_count)
        .map(|k| k * schedule.spacing)
        .collect()
}

/// An interpolation sequence and which of its entries are slot embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationInput {
    pub frames: Vec<FrameTensor>,
    pub is_slot: Vec<bool>,
}

pub fn build_interpolation_input(
    start: &FrameTensor,
    end: &FrameTensor,
    slot: &FrameTensor,
    spacing: usize,
) -> Result<InterpolationInput, DiffusionError> {
    if spacing == 0 {
        return Err(DiffusionError::BadSchedule(
            "interpolation needs at least one slot".into(),
        ));
    }
    for other in [end, slot] {
        if !start.same_dims(other) {
            return Err(DiffusionError::FrameShapeMismatch {
                expected: start.dims(),
                found: other.dims(),
            });
        }
    }
    let mut frames = Vec::with_capacity(spacing + 2);
    frames.push(start.clone());
    frames.extend(std::iter::repeat_n(slot.clone(), spacing));
    frames.push(end.clone());
    let mut is_slot = vec![true; spacing + 2];
    is_slot[0] = false;
    is_slot[spacing + 1] = false;
    Ok(InterpolationInput { frames, is_slot })
}

/// Video frame index for each entry of the interpolation sequence that
/// starts at keyframe `start`: `[t, t+1, ..., t+S, t+S]`.
pub fn interpolation_positions(start: usize, spacing: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=spacing).map(|j| start + j).collect();
    out.push(start + spacing);
    out
}

/// Joins keyframes and the generated interpolation sequences into one run of
/// `(T - 1) * S + 1` frames. `segments[i]` spans keyframes `i` and `i + 1`;
/// its boundary entries and final slot are replaced by the keyframes.
pub fn stitch_segments(
    keyframes: &[FrameTensor],
    segments: &[Vec<FrameTensor>],
    spacing: usize,
) -> Result<Vec<FrameTensor>, DiffusionError> {
    if keyframes.len() < 2 || segments.len() != keyframes.len() - 1 {
        return Err(DiffusionError::BadSchedule(format!(
            "{} keyframes need {} segments, got {}",
            keyframes.len(),
            keyframes.len().saturating_sub(1),
            segments.len()
        )));
    }
    let mut out = Vec::with_capacity((keyframes.len() - 1) * spacing + 1);
    for (i, seg) in segments.iter().enumerate() {
        if seg.len() != spacing + 2 {
            return Err(DiffusionError::BadSchedule(format!(
                "segment {i} has {} frames, expected {}",
                seg.len(),
                spacing + 2
            )));
        }
        out.push(keyframes[i].clone());
        out.extend(seg[1..spacing].iter().cloned());
    }
    out.push(keyframes[keyframes.len() - 1].clone());
    Ok(out)
}
