//! Deterministic synthetic inputs: a procedural 68-point face and tracks
//! whose mouth opening follows a sinusoid. Used by the tests, the benches
//! and the `simulate` command.

use std::f64::consts::PI;

use crate::landmarks::{LandmarkFrame, LandmarkTrack, Point};

/// Procedural 68-point face centred at `(cx, cy)` with scale `s` (roughly the
/// half-width of the face). The mouth is opened so that its MAR equals `mar`.
pub fn face_points(cx: f64, cy: f64, s: f64, mar: f64) -> Vec<Point> {
    let mut pts = Vec::with_capacity(68);
    // Jaw 0..=16: left temple, around the chin, to the right temple.
    for i in 0..17 {
        let theta = PI - PI * i as f64 / 16.0;
        pts.push(Point::new(
            cx + 0.9 * s * theta.cos(),
            cy - 0.1 * s + s * theta.sin(),
        ));
    }
    // Eyebrows 17..=26.
    for i in 0..5 {
        pts.push(Point::new(
            cx - 0.7 * s + 0.13 * s * i as f64,
            cy - 0.55 * s,
        ));
    }
    for i in 0..5 {
        pts.push(Point::new(
            cx + 0.18 * s + 0.13 * s * i as f64,
            cy - 0.55 * s,
        ));
    }
    // Nose bridge 27..=30, tip last.
    for i in 0..4 {
        pts.push(Point::new(cx, cy - 0.4 * s + 0.17 * s * i as f64));
    }
    // Nostrils 31..=35.
    for i in 0..5 {
        pts.push(Point::new(
            cx - 0.15 * s + 0.075 * s * i as f64,
            cy + 0.18 * s,
        ));
    }
    // Eyes 36..=47.
    for &ex in &[-0.4, 0.4] {
        for i in 0..6 {
            let a = PI - 2.0 * PI * i as f64 / 6.0;
            pts.push(Point::new(
                cx + ex * s + 0.12 * s * a.cos(),
                cy - 0.35 * s - 0.05 * s * a.sin(),
            ));
        }
    }
    let my = cy + 0.5 * s;
    let half_w = 0.35 * s;
    let inner_half_h = mar * half_w;
    let outer_half_h = inner_half_h + 0.08 * s;
    // Outer lip 48..=59: corner, upper arc, corner, lower arc.
    for i in 0..12 {
        let a = PI - 2.0 * PI * i as f64 / 12.0;
        pts.push(Point::new(
            cx + half_w * a.cos(),
            my - outer_half_h * a.sin(),
        ));
    }
    // Inner lip 60..=67: corner, upper (62 mid), corner, lower (66 mid).
    for i in 0..8 {
        let a = PI - 2.0 * PI * i as f64 / 8.0;
        pts.push(Point::new(
            cx + 0.8 * half_w * a.cos(),
            my - inner_half_h * a.sin(),
        ));
    }
    debug_assert_eq!(pts.len(), 68);
    pts
}

/// MAR of frame `t` in [`sinusoidal_track`].
pub fn sinusoidal_mar(t: usize) -> f64 {
    0.2 + 0.15 * (2.0 * PI * t as f64 / 25.0).sin()
}

/// `frames` frames on a 512x512 canvas; the mouth opens and closes with a
/// one-second period at 25 fps (MAR between 0.05 and 0.35) while the head
/// drifts slightly.
pub fn sinusoidal_track(video_id: &str, frames: usize) -> LandmarkTrack {
    let frames = (0..frames)
        .map(|t| {
            let drift = 6.0 * (t as f64 * 0.13).sin();
            let pts = face_points(256.0 + drift, 220.0 - drift * 0.5, 100.0, sinusoidal_mar(t));
            LandmarkFrame::new(t as u32, pts, 512, 512).expect("synthetic frame is valid")
        })
        .collect();
    LandmarkTrack::new(video_id, frames, 25.0).expect("synthetic track is valid")
}

/// A track with every frame at the same MAR.
pub fn constant_track(video_id: &str, frames: usize, mar: f64) -> LandmarkTrack {
    let frames = (0..frames)
        .map(|t| {
            let pts = face_points(256.0, 220.0, 100.0, mar);
            LandmarkFrame::new(t as u32, pts, 512, 512).expect("synthetic frame is valid")
        })
        .collect();
    LandmarkTrack::new(video_id, frames, 25.0).expect("synthetic track is valid")
}
