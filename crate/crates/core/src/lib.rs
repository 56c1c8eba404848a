//! Building blocks for masked lip-sync generation and its evaluation:
//! landmark geometry, inpainting masks, leakage and sharpness metrics, a
//! toy EDM diffusion pipeline, Elo ranking of preference logs and dataset
//! curation gates.

pub mod curation;
pub mod diffusion;
pub mod landmarks;
pub mod masking;
pub mod metrics;
pub mod pgm;
pub mod ranking;
pub mod synthetic;

use std::io::Write;
use std::path::Path;

pub use curation::{
    curate, CurationConfig, CurationError, CurationManifest, CurationReport, DiscardReason,
    VideoEntry,
};
pub use diffusion::{
    ClipShape, DiffusionError, EdmParams, FrameTensor, GuidanceWeights, LatentClip, Schedule,
    SimConfig,
};
pub use landmarks::{LandmarkError, LandmarkFrame, LandmarkTrack, Point};
pub use masking::{MaskError, MaskParams, MaskRaster, MaskVariant};
pub use metrics::{GrayFrame, MetricsError};
pub use ranking::{ComparisonRecord, EloConfig, RankingError, RatingTable, Winner};

/// Writes `bytes` to a temporary file beside `path`, syncs it and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
