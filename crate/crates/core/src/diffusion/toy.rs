//! A deliberately small denoiser network.
//!
//! Each frame `t` is mapped independently through
//! `u_t = [x_t, r_t, e(c_noise) + A a_t + b_a]`, `h_t = tanh(W1 u_t + b1)`,
//! then mixed with its neighbours, `g_t = h_t + m_prev * h_{t-1} + m_next * h_{t+1}`,
//! and projected back, `y_t = W2 g_t + b2`. `r_t` is the reference frame for
//! position `t`: the identity frame for keyframe generation, or the boundary
//! keyframes with the learned slot `z_m` in between for interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::edm::Network;
use super::guidance::add_audio_to_timestep;
use super::{ClipShape, DiffusionError, FrameTensor, LatentClip};

/// Per-frame audio features, `frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureTrack {
    dim: usize,
    data: Vec<f64>,
}

impl AudioFeatureTrack {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, DiffusionError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(DiffusionError::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Rows at the given frame indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.frame(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn to_zeros(&self) -> Self {
        Self::zeros(self.frames(), self.dim)
    }
}

/// Reference frames seen by the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Dropped condition: a zero frame everywhere.
    None,
    /// The same identity frame at every position.
    Identity(FrameTensor),
    /// `start` at the first position, `end` at the last and the learned slot
    /// embedding in between.
    Keyframes {
        start: FrameTensor,
        end: FrameTensor,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub reference: Reference,
    pub audio: AudioFeatureTrack,
}

impl Conditioning {
    /// Both conditions dropped.
    pub fn empty(&self) -> Self {
        Self {
            reference: Reference::None,
            audio: self.audio.to_zeros(),
        }
    }

    /// Audio dropped, reference kept.
    pub fn identity_only(&self) -> Self {
        Self {
            reference: self.reference.clone(),
            audio: self.audio.to_zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub audio_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl ToyDims {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let ok = self.frame_len() > 0
            && self.audio_dim > 0
            && self.hidden > 0
            && self.embed_dim >= 2
            && self.embed_dim % 2 == 0;
        if ok {
            Ok(())
        } else {
            Err(DiffusionError::BadConfig(format!(
                "invalid network dimensions {self:?}"
            )))
        }
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    e: usize,
    a: usize,
    hd: usize,
    nin: usize,
    w1: usize,
    b1: usize,
    m_prev: usize,
    m_next: usize,
    w2: usize,
    b2: usize,
    wa: usize,
    ba: usize,
    slot: usize,
    total: usize,
}

impl Layout {
    fn new(dims: &ToyDims) -> Self {
        let d = dims.frame_len();
        let (e, a, hd) = (dims.embed_dim, dims.audio_dim, dims.hidden);
        let nin = 2 * d + e;
        let w1 = 0;
        let b1 = w1 + hd * nin;
        let m_prev = b1 + hd;
        let m_next = m_prev + hd;
        let w2 = m_next + hd;
        let b2 = w2 + d * hd;
        let wa = b2 + d;
        let ba = wa + e * a;
        let slot = ba + e;
        let total = slot + dims.channels;
        Self {
            d,
            e,
            a,
            hd,
            nin,
            w1,
            b1,
            m_prev,
            m_next,
            w2,
            b2,
            wa,
            ba,
            slot,
            total,
        }
    }
}

/// Sinusoidal embedding of the noise label.
pub(crate) fn noise_embedding(c_noise: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let span = (half.max(2) - 1) as f64;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let f = (j as f64 / span * 64f64.ln()).exp();
        out[j] = (f * c_noise).sin();
        out[half + j] = (f * c_noise).cos();
    }
    out
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    mixed: Vec<Vec<f64>>,
    slot_positions: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    dims: ToyDims,
    params: Vec<f64>,
}

impl ToyDenoiser {
    /// Random initialization; the temporal mix, biases and slot start at zero.
    pub fn new(dims: ToyDims, seed: u64) -> Result<Self, DiffusionError> {
        dims.validate()?;
        let l = Layout::new(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        };
        fill(l.w1..l.b1, 1.0 / (l.nin as f64).sqrt());
        fill(l.w2..l.b2, 0.5 / (l.hd as f64).sqrt());
        fill(l.wa..l.ba, 1.0 / (l.a as f64).sqrt());
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> ToyDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// The learned slot embedding broadcast to a full frame.
    pub fn slot_frame(&self) -> FrameTensor {
        let l = Layout::new(&self.dims);
        let plane = self.dims.height * self.dims.width;
        let data = (0..l.d).map(|i| self.params[l.slot + i / plane]).collect();
        FrameTensor {
            channels: self.dims.channels,
            height: self.dims.height,
            width: self.dims.width,
            data,
        }
    }

    /// Checks that `x` and `cond` fit this network.
    pub fn check_inputs(&self, x: &LatentClip, cond: &Conditioning) -> Result<(), DiffusionError> {
        let s = x.shape();
        let want = ClipShape::new(
            s.frames,
            self.dims.channels,
            self.dims.height,
            self.dims.width,
        );
        if s != want {
            return Err(DiffusionError::ShapeMismatch {
                expected: want,
                found: s,
            });
        }
        if cond.audio.dim() != self.dims.audio_dim {
            return Err(DiffusionError::DimMismatch {
                expected: self.dims.audio_dim,
                found: cond.audio.dim(),
            });
        }
        if cond.audio.frames() != s.frames {
            return Err(DiffusionError::DimMismatch {
                expected: s.frames,
                found: cond.audio.frames(),
            });
        }
        let frame_dims = (self.dims.channels, self.dims.height, self.dims.width);
        let refs: Vec<&FrameTensor> = match &cond.reference {
            Reference::None => vec![],
            Reference::Identity(f) => vec![f],
            Reference::Keyframes { start, end } => {
                if s.frames < 2 {
                    return Err(DiffusionError::BadSchedule(
                        "keyframe reference needs at least two frames".into(),
                    ));
                }
                vec![start, end]
            }
        };
        for f in refs {
            if f.dims() != frame_dims {
                return Err(DiffusionError::FrameShapeMismatch {
                    expected: frame_dims,
                    found: f.dims(),
                });
            }
        }
        Ok(())
    }

    fn reference_into(
        &self,
        l: &Layout,
        cond: &Conditioning,
        t: usize,
        frames: usize,
        out: &mut [f64],
    ) -> bool {
        let plane = self.dims.height * self.dims.width;
        match &cond.reference {
            Reference::None => {
                out.fill(0.0);
                false
            }
            Reference::Identity(f) => {
                out.copy_from_slice(&f.data);
                false
            }
            Reference::Keyframes { start, end } => {
                if t == 0 {
                    out.copy_from_slice(&start.data);
                    false
                } else if t == frames - 1 {
                    out.copy_from_slice(&end.data);
                    false
                } else {
                    for (i, v) in out.iter_mut().enumerate() {
                        *v = self.params[l.slot + i / plane];
                    }
                    true
                }
            }
        }
    }

    pub(crate) fn forward_cached(
        &self,
        x: &LatentClip,
        noise_label: f64,
        cond: &Conditioning,
    ) -> (LatentClip, ForwardCache) {
        if let Err(e) = self.check_inputs(x, cond) {
            panic!("toy denoiser input mismatch: {e}");
        }
        let l = Layout::new(&self.dims);
        let p = &self.params;
        let frames = x.shape().frames;
        let t_emb = noise_embedding(noise_label, l.e);

        let mut inputs = Vec::with_capacity(frames);
        let mut hidden = Vec::with_capacity(frames);
        let mut slot_positions = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut u = vec![0.0; l.nin];
            u[..l.d].copy_from_slice(x.frame_slice(t));
            slot_positions.push(self.reference_into(&l, cond, t, frames, &mut u[l.d..2 * l.d]));
            let emb = add_audio_to_timestep(&t_emb, cond.audio.frame(t), |a| {
                (0..l.e)
                    .map(|k| {
                        let row = &p[l.wa + k * l.a..l.wa + (k + 1) * l.a];
                        p[l.ba + k] + dot(row, a)
                    })
                    .collect()
            })
            .expect("projection matches embedding width");
            u[2 * l.d..].copy_from_slice(&emb);

            let h: Vec<f64> = (0..l.hd)
                .map(|j| {
                    let row = &p[l.w1 + j * l.nin..l.w1 + (j + 1) * l.nin];
                    (p[l.b1 + j] + dot(row, &u)).tanh()
                })
                .collect();
            inputs.push(u);
            hidden.push(h);
        }

        let mut mixed = Vec::with_capacity(frames);
        let mut out = LatentClip::zeros(x.shape());
        for t in 0..frames {
            let mut g = hidden[t].clone();
            if t > 0 {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj += p[l.m_prev + j] * hidden[t - 1][j];
                }
            }
            if t + 1 < frames {
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj += p[l.m_next + j] * hidden[t + 1][j];
                }
            }
            let y = out.frame_slice_mut(t);
            for (i, yi) in y.iter_mut().enumerate() {
                let row = &p[l.w2 + i * l.hd..l.w2 + (i + 1) * l.hd];
                *yi = p[l.b2 + i] + dot(row, &g);
            }
            mixed.push(g);
        }
        (
            out,
            ForwardCache {
                inputs,
                hidden,
                mixed,
                slot_positions,
            },
        )
    }

    /// Adds the gradient of `sum(grad_out * y)` with respect to the
    /// parameters into `grads`.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        cond: &Conditioning,
        grad_out: &LatentClip,
        grads: &mut [f64],
    ) {
        let l = Layout::new(&self.dims);
        let p = &self.params;
        let frames = grad_out.shape().frames;
        let plane = self.dims.height * self.dims.width;

        let mut dg = vec![vec![0.0; l.hd]; frames];
        for t in 0..frames {
            let gy = grad_out.frame_slice(t);
            for (i, &gi) in gy.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                grads[l.b2 + i] += gi;
                let w_row = l.w2 + i * l.hd;
                for j in 0..l.hd {
                    grads[w_row + j] += gi * cache.mixed[t][j];
                    dg[t][j] += gi * p[w_row + j];
                }
            }
        }

        for t in 0..frames {
            let mut dh = dg[t].clone();
            for j in 0..l.hd {
                if t + 1 < frames {
                    dh[j] += p[l.m_prev + j] * dg[t + 1][j];
                    grads[l.m_next + j] += dg[t][j] * cache.hidden[t + 1][j];
                }
                if t > 0 {
                    dh[j] += p[l.m_next + j] * dg[t - 1][j];
                    grads[l.m_prev + j] += dg[t][j] * cache.hidden[t - 1][j];
                }
            }

            let u = &cache.inputs[t];
            let mut du = vec![0.0; l.nin];
            for j in 0..l.hd {
                let h = cache.hidden[t][j];
                let dp = dh[j] * (1.0 - h * h);
                if dp == 0.0 {
                    continue;
                }
                grads[l.b1 + j] += dp;
                let row = l.w1 + j * l.nin;
                for k in 0..l.nin {
                    grads[row + k] += dp * u[k];
                    du[k] += dp * p[row + k];
                }
            }

            if cache.slot_positions[t] {
                for i in 0..l.d {
                    grads[l.slot + i / plane] += du[l.d + i];
                }
            }
            let audio = cond.audio.frame(t);
            for k in 0..l.e {
                let de = du[2 * l.d + k];
                grads[l.ba + k] += de;
                for (m, &a) in audio.iter().enumerate() {
                    grads[l.wa + k * l.a + m] += de * a;
                }
            }
        }
    }
}

impl Network for ToyDenoiser {
    /// # Panics
    /// If `x` or `cond` do not match the network's dimensions; see
    /// [`ToyDenoiser::check_inputs`].
    fn forward(&self, x: &LatentClip, noise_label: f64, cond: &Conditioning) -> LatentClip {
        self.forward_cached(x, noise_label, cond).0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
