//! Dense `[T, C, H, W]` clips and `[C, H, W]` frames.

use std::fmt;

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClipShape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ClipShape {
    pub const fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }
}

impl fmt::Display for ClipShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}x{}x{}x{}]",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// A single `[C, H, W]` frame, latent or pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FrameTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, DiffusionError> {
        if data.len() != channels * height * width {
            return Err(DiffusionError::BadLength {
                expected: channels * height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_dims(&self, other: &FrameTensor) -> bool {
        self.dims() == other.dims()
    }
}

/// Latent video clip stored row-major as `[frame][channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    shape: ClipShape,
    data: Vec<f64>,
}

impl LatentClip {
    pub fn zeros(shape: ClipShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: ClipShape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: ClipShape, data: Vec<f64>) -> Result<Self, DiffusionError> {
        if data.len() != shape.len() {
            return Err(DiffusionError::BadLength {
                expected: shape.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite { index: i });
        }
        Ok(Self { shape, data })
    }

    pub fn from_frames(frames: &[FrameTensor]) -> Result<Self, DiffusionError> {
        let first = frames.first().ok_or(DiffusionError::EmptyClip)?;
        let (c, h, w) = first.dims();
        let mut data = Vec::with_capacity(frames.len() * c * h * w);
        for f in frames {
            if f.dims() != (c, h, w) {
                return Err(DiffusionError::FrameShapeMismatch {
                    expected: (c, h, w),
                    found: f.dims(),
                });
            }
            data.extend_from_slice(&f.data);
        }
        Self::from_vec(ClipShape::new(frames.len(), c, h, w), data)
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> FrameTensor {
        let n = self.shape.frame_len();
        FrameTensor {
            channels: self.shape.channels,
            height: self.shape.height,
            width: self.shape.width,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn frame_slice(&self, t: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.shape.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> Vec<FrameTensor> {
        (0..self.shape.frames).map(|t| self.frame(t)).collect()
    }

    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((t * s.channels + c) * s.height + y) * s.width + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(t, c, y, x)]
    }

    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(t, c, y, x);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &LatentClip) -> Result<(), DiffusionError> {
        if self.shape != other.shape {
            return Err(DiffusionError::ShapeMismatch {
                expected: self.shape,
                found: other.shape,
            });
        }
        Ok(())
    }

    /// `self * a + other * b`, elementwise.
    pub fn axpby(&self, a: f64, other: &LatentClip, b: f64) -> Result<LatentClip, DiffusionError> {
        self.ensure_same_shape(other)?;
        Ok(LatentClip {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> LatentClip {
        LatentClip {
            shape: self.shape,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// A new clip made of the frames at `indices`, in order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<LatentClip, DiffusionError> {
        let mut data = Vec::with_capacity(indices.len() * self.shape.frame_len());
        for &t in indices {
            if t >= self.shape.frames {
                return Err(DiffusionError::BadSchedule(format!(
                    "frame {t} outside a clip of {} frames",
                    self.shape.frames
                )));
            }
            data.extend_from_slice(self.frame_slice(t));
        }
        Ok(LatentClip {
            shape: ClipShape {
                frames: indices.len(),
                ..self.shape
            },
            data,
        })
    }
}
