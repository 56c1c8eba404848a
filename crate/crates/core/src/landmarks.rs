//! 68-point facial landmark tracks and the geometry derived from them.
//!
//! Points follow the iBUG 68 convention with `y` growing downward. The mouth
//! aspect ratio (MAR) uses the inner-lip midpoints 62/66 for the vertical
//! opening and the outer corners 48/54 for the width.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of landmarks per frame.
pub const LANDMARK_COUNT: usize = 68;
/// Nose tip.
pub const NOSE_TIP: usize = 30;
/// Left outer mouth corner.
pub const MOUTH_CORNER_LEFT: usize = 48;
/// Right outer mouth corner.
pub const MOUTH_CORNER_RIGHT: usize = 54;
/// Inner upper-lip midpoint.
pub const INNER_LIP_UPPER: usize = 62;
/// Inner lower-lip midpoint.
pub const INNER_LIP_LOWER: usize = 66;
/// All mouth landmarks (outer and inner lips).
pub const MOUTH_RANGE: std::ops::RangeInclusive<usize> = 48..=67;

/// MAR threshold above which a mouth counts as open.
pub const DEFAULT_MAR_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("expected {LANDMARK_COUNT} landmarks, found {0}")]
    WrongPointCount(usize),
    #[error("image dimensions must be positive, got {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("landmark {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("frame {frame}: mouth corners coincide but lips are apart")]
    DegenerateMouth { frame: u32 },
    #[error("frame {frame}: landmarks span a degenerate box ({left}, {top}, {right}, {bottom})")]
    DegenerateBox {
        frame: u32,
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
    #[error("frame indices must be strictly increasing ({prev} then {next})")]
    UnorderedFrames { prev: u32, next: u32 },
    #[error("frame {frame} is {width}x{height} but the track is {track_width}x{track_height}")]
    MixedDimensions {
        frame: u32,
        width: u32,
        height: u32,
        track_width: u32,
        track_height: u32,
    },
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Landmarks of a single video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    frame_index: u32,
    points: Vec<Point>,
    image_width: u32,
    image_height: u32,
}

impl LandmarkFrame {
    pub fn new(
        frame_index: u32,
        points: Vec<Point>,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, LandmarkError> {
        if points.len() != LANDMARK_COUNT {
            return Err(LandmarkError::WrongPointCount(points.len()));
        }
        if image_width == 0 || image_height == 0 {
            return Err(LandmarkError::BadDimensions {
                width: image_width,
                height: image_height,
            });
        }
        let (w, h) = (image_width as f64, image_height as f64);
        for (index, p) in points.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && (0.0..=w).contains(&p.x)
                && (0.0..=h).contains(&p.y);
            if !inside {
                return Err(LandmarkError::OutOfBounds {
                    index,
                    x: p.x,
                    y: p.y,
                    width: image_width,
                    height: image_height,
                });
            }
        }
        Ok(Self {
            frame_index,
            points,
            image_width,
            image_height,
        })
    }

    pub fn frame_index(&self) -> u32 {
        self.frame_index
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl FaceBox {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.left..=self.right).contains(&p.x) && (self.top..=self.bottom).contains(&p.y)
    }
}

/// Per-frame landmarks for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    video_id: String,
    frames: Vec<LandmarkFrame>,
    fps: f64,
}

impl LandmarkTrack {
    pub fn new(
        video_id: impl Into<String>,
        frames: Vec<LandmarkFrame>,
        fps: f64,
    ) -> Result<Self, LandmarkError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(LandmarkError::BadFps(fps));
        }
        for pair in frames.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.frame_index <= a.frame_index {
                return Err(LandmarkError::UnorderedFrames {
                    prev: a.frame_index,
                    next: b.frame_index,
                });
            }
        }
        if let Some(first) = frames.first() {
            for f in &frames {
                if (f.image_width, f.image_height) != (first.image_width, first.image_height) {
                    return Err(LandmarkError::MixedDimensions {
                        frame: f.frame_index,
                        width: f.image_width,
                        height: f.image_height,
                        track_width: first.image_width,
                        track_height: first.image_height,
                    });
                }
            }
        }
        Ok(Self {
            video_id: video_id.into(),
            frames,
            fps,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Reads a `<video_id>.landmarks.jsonl` file. The video id is taken from
    /// the file name.
    pub fn read_jsonl(path: &Path, fps: f64) -> Result<Self, LandmarkError> {
        let video_id = video_id_from_path(path);
        let reader = BufReader::new(File::open(path)?);
        let display = path.display().to_string();
        let mut frames = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| LandmarkError::Parse {
                path: display.clone(),
                line: i + 1,
                message,
            };
            let rec: FrameRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let points = rec.pts.iter().map(|&[x, y]| Point::new(x, y)).collect();
            let frame = LandmarkFrame::new(rec.frame, points, rec.w, rec.h)
                .map_err(|e| parse_err(e.to_string()))?;
            frames.push(frame);
        }
        Self::new(video_id, frames, fps).map_err(|e| match e {
            e @ LandmarkError::Parse { .. } => e,
            other => LandmarkError::Parse {
                path: display,
                line: 0,
                message: other.to_string(),
            },
        })
    }

    /// Serializes the track in the same JSON Lines layout `read_jsonl` accepts.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            let rec = FrameRecord {
                frame: f.frame_index,
                w: f.image_width,
                h: f.image_height,
                pts: f.points.iter().map(|p| [p.x, p.y]).collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("frame record serializes"));
            out.push('\n');
        }
        out
    }
}

/// `foo/bar.landmarks.jsonl` -> `bar`.
pub fn video_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".landmarks.jsonl")
        .or_else(|| name.strip_suffix(".jsonl"))
        .unwrap_or(&name)
        .to_string()
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: u32,
    w: u32,
    h: u32,
    pts: Vec<[f64; 2]>,
}

/// Vertical inner-lip opening divided by the corner-to-corner mouth width.
pub fn mouth_aspect_ratio(frame: &LandmarkFrame) -> Result<f64, LandmarkError> {
    let vertical = frame
        .point(INNER_LIP_UPPER)
        .distance(frame.point(INNER_LIP_LOWER));
    let horizontal = frame
        .point(MOUTH_CORNER_LEFT)
        .distance(frame.point(MOUTH_CORNER_RIGHT));
    if horizontal == 0.0 {
        if vertical == 0.0 {
            return Ok(0.0);
        }
        return Err(LandmarkError::DegenerateMouth {
            frame: frame.frame_index,
        });
    }
    Ok(vertical / horizontal)
}

pub fn face_bounding_box(frame: &LandmarkFrame) -> Result<FaceBox, LandmarkError> {
    let mut b = FaceBox {
        left: f64::INFINITY,
        top: f64::INFINITY,
        right: f64::NEG_INFINITY,
        bottom: f64::NEG_INFINITY,
    };
    for p in &frame.points {
        b.left = b.left.min(p.x);
        b.top = b.top.min(p.y);
        b.right = b.right.max(p.x);
        b.bottom = b.bottom.max(p.y);
    }
    if b.left < b.right && b.top < b.bottom {
        Ok(b)
    } else {
        Err(LandmarkError::DegenerateBox {
            frame: frame.frame_index,
            left: b.left,
            top: b.top,
            right: b.right,
            bottom: b.bottom,
        })
    }
}

/// Strict comparison: a MAR equal to the threshold counts as closed.
pub fn is_mouth_open(frame: &LandmarkFrame, threshold: f64) -> Result<bool, LandmarkError> {
    Ok(mouth_aspect_ratio(frame)? > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{face_points, sinusoidal_track};
    use proptest::prelude::*;

    fn mouth_frame(vertical: f64, width: f64) -> LandmarkFrame {
        let mut pts = face_points(256.0, 256.0, 100.0, 0.1);
        pts[MOUTH_CORNER_LEFT] = Point::new(256.0 - width / 2.0, 330.0);
        pts[MOUTH_CORNER_RIGHT] = Point::new(256.0 + width / 2.0, 330.0);
        pts[INNER_LIP_UPPER] = Point::new(256.0, 330.0 - vertical / 2.0);
        pts[INNER_LIP_LOWER] = Point::new(256.0, 330.0 + vertical / 2.0);
        LandmarkFrame::new(0, pts, 512, 512).unwrap()
    }

    #[test]
    fn mar_at_threshold_is_closed() {
        let f = mouth_frame(10.0, 40.0);
        assert_eq!(mouth_aspect_ratio(&f).unwrap(), 0.25);
        assert!(!is_mouth_open(&f, 0.25).unwrap());
    }

    #[test]
    fn mar_open_and_closed() {
        assert_eq!(mouth_aspect_ratio(&mouth_frame(0.0, 40.0)).unwrap(), 0.0);
        assert!(is_mouth_open(&mouth_frame(10.4, 40.0), 0.25).unwrap());
        assert!(!is_mouth_open(&mouth_frame(4.0, 40.0), 0.25).unwrap());
    }

    #[test]
    fn degenerate_mouth() {
        let mut pts = face_points(256.0, 256.0, 100.0, 0.1);
        pts[MOUTH_CORNER_RIGHT] = pts[MOUTH_CORNER_LEFT];
        let f = LandmarkFrame::new(3, pts.clone(), 512, 512).unwrap();
        assert!(matches!(
            mouth_aspect_ratio(&f),
            Err(LandmarkError::DegenerateMouth { frame: 3 })
        ));
        pts[INNER_LIP_LOWER] = pts[INNER_LIP_UPPER];
        let f = LandmarkFrame::new(3, pts, 512, 512).unwrap();
        assert_eq!(mouth_aspect_ratio(&f).unwrap(), 0.0);
    }

    #[test]
    fn frame_validation() {
        assert!(matches!(
            LandmarkFrame::new(0, vec![Point::new(1.0, 1.0); 67], 10, 10),
            Err(LandmarkError::WrongPointCount(67))
        ));
        let mut pts = vec![Point::new(1.0, 1.0); 68];
        pts[5] = Point::new(11.0, 1.0);
        assert!(matches!(
            LandmarkFrame::new(0, pts, 10, 10),
            Err(LandmarkError::OutOfBounds { index: 5, .. })
        ));
    }

    #[test]
    fn bounding_box_extremes() {
        let mut pts = vec![Point::new(150.0, 200.0); 68];
        pts[0] = Point::new(100.0, 220.0);
        pts[10] = Point::new(200.0, 180.0);
        pts[20] = Point::new(120.0, 150.0);
        pts[40] = Point::new(130.0, 300.0);
        let f = LandmarkFrame::new(0, pts, 512, 512).unwrap();
        let b = face_bounding_box(&f).unwrap();
        assert_eq!(
            b,
            FaceBox {
                left: 100.0,
                top: 150.0,
                right: 200.0,
                bottom: 300.0
            }
        );
    }

    #[test]
    fn bounding_box_rejects_single_point() {
        let f = LandmarkFrame::new(0, vec![Point::new(5.0, 5.0); 68], 10, 10).unwrap();
        assert!(matches!(
            face_bounding_box(&f),
            Err(LandmarkError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn track_ordering_and_dimensions() {
        let f0 = LandmarkFrame::new(0, face_points(50.0, 50.0, 20.0, 0.1), 100, 100).unwrap();
        let f1 = LandmarkFrame::new(0, face_points(50.0, 50.0, 20.0, 0.1), 100, 100).unwrap();
        assert!(matches!(
            LandmarkTrack::new("v", vec![f0.clone(), f1], 25.0),
            Err(LandmarkError::UnorderedFrames { .. })
        ));
        let f2 = LandmarkFrame::new(1, face_points(50.0, 50.0, 20.0, 0.1), 120, 100).unwrap();
        assert!(matches!(
            LandmarkTrack::new("v", vec![f0, f2], 25.0),
            Err(LandmarkError::MixedDimensions { .. })
        ));
    }

    #[test]
    fn sinusoidal_mar_matches_recomputation() {
        let track = sinusoidal_track("sin", 50);
        for f in track.frames() {
            let p = f.points();
            // Independent recomputation straight from coordinates.
            let v = ((p[62].x - p[66].x).powi(2) + (p[62].y - p[66].y).powi(2)).sqrt();
            let h = ((p[48].x - p[54].x).powi(2) + (p[48].y - p[54].y).powi(2)).sqrt();
            assert!((mouth_aspect_ratio(f).unwrap() - v / h).abs() < 1e-9);
        }
    }

    #[test]
    fn jsonl_roundtrip_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let track = sinusoidal_track("clip01", 5);
        let path = dir.path().join("clip01.landmarks.jsonl");
        std::fs::write(&path, track.to_jsonl()).unwrap();
        let back = LandmarkTrack::read_jsonl(&path, 25.0).unwrap();
        assert_eq!(back, track);

        let bad = dir.path().join("bad.landmarks.jsonl");
        let mut text = track.to_jsonl();
        text.push_str("{\"frame\": 9, \"w\": 512}\n");
        std::fs::write(&bad, text).unwrap();
        match LandmarkTrack::read_jsonl(&bad, 25.0) {
            Err(LandmarkError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn rigid(frame: &LandmarkFrame, scale: f64, angle: f64, dx: f64, dy: f64) -> LandmarkFrame {
        let (s, c) = angle.sin_cos();
        let pts = frame
            .points()
            .iter()
            .map(|p| {
                let (x, y) = (p.x * scale, p.y * scale);
                Point::new(c * x - s * y + dx, s * x + c * y + dy)
            })
            .collect();
        LandmarkFrame::new(0, pts, 100_000, 100_000).unwrap()
    }

    proptest! {
        #[test]
        fn mar_scale_invariant(idx in 0usize..40, s in 0.01f64..50.0) {
            let track = sinusoidal_track("p", 40);
            let f = &track.frames()[idx];
            let scaled = rigid(f, s, 0.0, 0.0, 0.0);
            let a = mouth_aspect_ratio(f).unwrap();
            let b = mouth_aspect_ratio(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mar_rigid_invariant(idx in 0usize..40, angle in -3.1f64..3.1, dx in 1000.0f64..5000.0, dy in 1000.0f64..5000.0) {
            let track = sinusoidal_track("p", 40);
            let f = &track.frames()[idx];
            let moved = rigid(f, 1.0, angle, dx, dy);
            let a = mouth_aspect_ratio(f).unwrap();
            let b = mouth_aspect_ratio(&moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn box_matches_scan_and_contains_points(coords in proptest::collection::vec((0.0f64..640.0, 0.0f64..480.0), 68)) {
            let pts: Vec<Point> = coords.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let f = LandmarkFrame::new(0, pts.clone(), 640, 480).unwrap();
            let b = face_bounding_box(&f).unwrap();
            let mut left = f64::MAX; let mut right = f64::MIN;
            let mut top = f64::MAX; let mut bottom = f64::MIN;
            for p in &pts {
                if p.x < left { left = p.x; }
                if p.x > right { right = p.x; }
                if p.y < top { top = p.y; }
                if p.y > bottom { bottom = p.y; }
            }
            prop_assert_eq!(b, FaceBox { left, top, right, bottom });
            prop_assert!(pts.iter().all(|&p| b.contains(p)));
        }
    }
}
