use lipkit_core::landmarks::{mouth_aspect_ratio, LandmarkTrack};
use lipkit_core::masking::{build_mask, downsample_to_latent, refine_with_occlusion, PixelRect};
use lipkit_core::metrics::{lipleak, lipleak_threshold_sweep, mar_series};
use lipkit_core::synthetic::{constant_track, sinusoidal_mar, sinusoidal_track};
use lipkit_core::{MaskParams, MaskRaster, MaskVariant};

#[test]
fn track_survives_jsonl_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let track = sinusoidal_track("talk", 40);
    let path = dir.path().join("talk.landmarks.jsonl");
    std::fs::write(&path, track.to_jsonl()).unwrap();
    let back = LandmarkTrack::read_jsonl(&path, 25.0).unwrap();
    assert_eq!(back.video_id(), "talk");
    assert_eq!(back.frames(), track.frames());
}

#[test]
fn synthetic_faces_carry_the_requested_mar() {
    let track = sinusoidal_track("talk", 50);
    for (t, frame) in track.frames().iter().enumerate() {
        let mar = mouth_aspect_ratio(frame).unwrap();
        assert!((mar - sinusoidal_mar(t)).abs() < 1e-9, "frame {t}: {mar}");
    }
}

#[test]
fn lipleak_counts_frames_above_threshold() {
    let track = sinusoidal_track("talk", 100);
    for threshold in [0.12, 0.21, 0.31] {
        let oracle = (0..100).filter(|&t| sinusoidal_mar(t) > threshold).count() as f64 / 100.0;
        assert_eq!(
            lipleak(&track, threshold).unwrap(),
            oracle,
            "threshold {threshold}"
        );
    }
    assert_eq!(
        lipleak(&constant_track("shut", 30, 0.1), 0.25).unwrap(),
        0.0
    );
    assert_eq!(
        lipleak(&constant_track("wide", 30, 0.4), 0.25).unwrap(),
        1.0
    );

    let sweep = lipleak_threshold_sweep(&track, &[0.1, 0.2, 0.3]).unwrap();
    let single: Vec<f64> = [0.1, 0.2, 0.3]
        .iter()
        .map(|&t| lipleak(&track, t).unwrap())
        .collect();
    assert_eq!(sweep.iter().map(|p| p.1).collect::<Vec<_>>(), single);

    let series = mar_series(&track, 0.25).unwrap();
    let open: Vec<u32> = series.open_frames().collect();
    let expected: Vec<u32> = (0..100u32)
        .filter(|&t| sinusoidal_mar(t as usize) > 0.25)
        .collect();
    assert_eq!(open, expected);
}

#[test]
fn mask_variants_nest_and_survive_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let params = MaskParams::default();
    for frame in sinusoidal_track("talk", 10).frames() {
        let mask = |v| build_mask(frame, v, &params).unwrap();
        let (ours, nose, full) = (
            mask(MaskVariant::Ours),
            mask(MaskVariant::NoseLevel),
            mask(MaskVariant::FullLowerFace),
        );
        assert!(nose.is_subset_of(&ours));
        assert!(nose.is_subset_of(&full));
        assert!(mask(MaskVariant::MouthOnly).is_subset_of(&nose));

        let path = dir.path().join(format!("{:06}.pgm", frame.frame_index()));
        std::fs::write(&path, ours.to_pgm_bytes()).unwrap();
        assert_eq!(MaskRaster::read_pgm(&path).unwrap(), ours);
    }
}

#[test]
fn occluded_mask_downsamples_by_block_any() {
    let track = sinusoidal_track("talk", 1);
    let frame = &track.frames()[0];
    let mask = build_mask(frame, MaskVariant::Ours, &MaskParams::default()).unwrap();
    let hand = MaskRaster::from_rect(
        512,
        512,
        PixelRect {
            left: 200,
            top: 300,
            right: 260,
            bottom: 420,
        },
    );
    let refined = refine_with_occlusion(&mask, &hand).unwrap();
    assert!(refined.count() < mask.count());

    let latent = downsample_to_latent(&refined, 8).unwrap();
    assert_eq!(latent.dims(), (64, 64));
    for by in 0..64 {
        for bx in 0..64 {
            let any = (0..8).any(|dy| (0..8).any(|dx| refined.get(bx * 8 + dx, by * 8 + dy)));
            assert_eq!(latent.get(bx, by), any, "cell ({bx}, {by})");
        }
    }
}
