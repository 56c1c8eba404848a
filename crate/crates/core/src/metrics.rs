//! Leakage and quality metrics: LipLeak, MAR series, variance of Laplacian
//! and per-frame mean absolute error.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::landmarks::{mouth_aspect_ratio, LandmarkTrack};
use crate::pgm::{Pgm, PgmError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("track {0:?} has no frames with valid landmarks")]
    EmptyTrack(String),
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("thresholds must be strictly ascending ({prev} then {next})")]
    UnsortedThresholds { prev: f64, next: f64 },
    #[error("frame of {width}x{height} is smaller than the 3x3 kernel")]
    FrameTooSmall { width: usize, height: usize },
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("frame {index}: {left:?} vs {right:?}")]
    FrameShapeMismatch {
        index: usize,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("pixel buffer has {found} entries, expected {expected}")]
    BadLength { expected: usize, found: usize },
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Greyscale frame with intensities on a 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, MetricsError> {
        if pixels.len() != width * height {
            return Err(MetricsError::BadLength {
                expected: width * height,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Samples are rescaled so that `maxval` maps to 255.
    pub fn from_pgm(pgm: &Pgm) -> Self {
        let scale = 255.0 / pgm.maxval as f64;
        Self {
            width: pgm.width,
            height: pgm.height,
            pixels: pgm.samples.iter().map(|&s| s as f64 * scale).collect(),
        }
    }

    pub fn read_pgm(path: &Path) -> Result<Self, MetricsError> {
        Ok(Self::from_pgm(&Pgm::read(path)?))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Per-frame MAR values for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct MarSeries {
    pub video_id: String,
    pub values: Vec<(u32, f64)>,
    pub threshold: f64,
}

impl MarSeries {
    /// Frames whose MAR is strictly above the threshold.
    pub fn open_frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.values
            .iter()
            .filter(|(_, m)| *m > self.threshold)
            .map(|(f, _)| *f)
    }
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(MetricsError::BadThreshold(t))
    }
}

/// MAR for every frame whose landmarks admit one. Frames with degenerate
/// mouth geometry are left out.
pub fn mar_series(track: &LandmarkTrack, threshold: f64) -> Result<MarSeries, MetricsError> {
    check_threshold(threshold)?;
    let values = track
        .frames()
        .iter()
        .filter_map(|f| mouth_aspect_ratio(f).ok().map(|m| (f.frame_index(), m)))
        .collect();
    Ok(MarSeries {
        video_id: track.video_id().to_string(),
        values,
        threshold,
    })
}

fn open_fraction(mars: &[f64], threshold: f64) -> f64 {
    mars.iter().filter(|&&m| m > threshold).count() as f64 / mars.len() as f64
}

fn valid_mars(track: &LandmarkTrack) -> Result<Vec<f64>, MetricsError> {
    let mars: Vec<f64> = track
        .frames()
        .iter()
        .filter_map(|f| mouth_aspect_ratio(f).ok())
        .collect();
    if mars.is_empty() {
        return Err(MetricsError::EmptyTrack(track.video_id().to_string()));
    }
    Ok(mars)
}

/// Fraction of frames with an open mouth. Only meaningful when the video was
/// generated from silent audio; this function just counts.
pub fn lipleak(track: &LandmarkTrack, threshold: f64) -> Result<f64, MetricsError> {
    check_threshold(threshold)?;
    Ok(open_fraction(&valid_mars(track)?, threshold))
}

pub fn lipleak_threshold_sweep(
    track: &LandmarkTrack,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>, MetricsError> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    for pair in thresholds.windows(2) {
        if pair[1] <= pair[0] {
            return Err(MetricsError::UnsortedThresholds {
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    let mars = valid_mars(track)?;
    Ok(thresholds
        .iter()
        .map(|&t| (t, open_fraction(&mars, t)))
        .collect())
}

/// `n` evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn linear_thresholds(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Population variance of the 4-neighbour Laplacian over interior pixels.
pub fn variance_of_laplacian(frame: &GrayFrame) -> Result<f64, MetricsError> {
    let (w, h) = (frame.width, frame.height);
    if w < 3 || h < 3 {
        return Err(MetricsError::FrameTooSmall {
            width: w,
            height: h,
        });
    }
    let p = &frame.pixels;
    let n = ((w - 2) * (h - 2)) as f64;
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = y * w + x;
            responses.push(p[c - w] + p[c + w] + p[c - 1] + p[c + 1] - 4.0 * p[c]);
        }
    }
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / n)
}

/// Mean absolute pixel difference for each frame pair.
pub fn mae_trace(
    generated: &[GrayFrame],
    reference: &[GrayFrame],
) -> Result<Vec<(usize, f64)>, MetricsError> {
    if generated.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(
            generated.len(),
            reference.len(),
        ));
    }
    generated
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(i, (g, r))| {
            if (g.width, g.height) != (r.width, r.height) {
                return Err(MetricsError::FrameShapeMismatch {
                    index: i,
                    left: (g.width, g.height),
                    right: (r.width, r.height),
                });
            }
            let total: f64 = g
                .pixels
                .iter()
                .zip(&r.pixels)
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok((i, total / g.pixels.len() as f64))
        })
        .collect()
}

/// `video_id,threshold,lipleak`
pub fn write_lipleak_csv<W: Write>(
    out: W,
    rows: &[(String, f64, f64)],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "threshold", "lipleak"])?;
    for (id, t, v) in rows {
        w.write_record([id.clone(), t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `video_id,frame,mar`
pub fn write_mar_series_csv<W: Write>(out: W, series: &[MarSeries]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "frame", "mar"])?;
    for s in series {
        for (frame, mar) in &s.values {
            w.write_record([s.video_id.clone(), frame.to_string(), mar.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `frame,mae`
pub fn write_mae_trace_csv<W: Write>(out: W, trace: &[(usize, f64)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "mae"])?;
    for (frame, mae) in trace {
        w.write_record([frame.to_string(), mae.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
