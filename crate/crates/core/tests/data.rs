use beatrack::data::{
    encode_targets, excerpt_count, mask_augment, read_manifest, sample_excerpts, synthesize_click_track,
    write_manifest, BeatAnnotation, ClickTrackSpec, ManifestEntry, MeterSequence, Split, TempoCurve,
};
use beatrack::dsp::Spectrogram;
use beatrack::loss::FrameTargets;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Beat times by trapezoidal integration of BPM / 60 on a 10 µs grid.
fn integrated_beats(curve: &TempoCurve, duration: f64) -> Vec<f64> {
    let dt = 1e-5;
    let mut out = vec![0.0];
    let (mut t, mut phase) = (0.0f64, 0.0f64);
    while t < duration {
        let next = phase + 0.5 * (curve.bpm_at(t) + curve.bpm_at(t + dt)) / 60.0 * dt;
        let k = out.len() as f64;
        if next >= k {
            out.push(t + dt * (k - phase) / (next - phase));
        }
        phase = next;
        t += dt;
    }
    out.retain(|&b| b < duration);
    out
}

#[test]
fn ramp_matches_numeric_integration() {
    let curve = TempoCurve::ramp(60.0, 120.0, 60.0).unwrap();
    let spec = ClickTrackSpec::new(60.0, curve.clone(), MeterSequence::constant(4).unwrap());
    let closed = spec.annotation().unwrap().beats();
    let numeric = integrated_beats(&curve, 60.0);
    assert_eq!(closed.len(), numeric.len());
    let worst = closed.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "worst deviation {worst}");
}

#[test]
fn multi_knot_curve_matches_numeric_integration() {
    let curve = TempoCurve::new(vec![(2.0, 90.0), (10.0, 150.0), (14.0, 70.0), (20.0, 100.0)]).unwrap();
    let spec = ClickTrackSpec::new(30.0, curve.clone(), MeterSequence::constant(3).unwrap());
    let closed = spec.annotation().unwrap().beats();
    let numeric = integrated_beats(&curve, 30.0);
    assert_eq!(closed.len(), numeric.len());
    for (a, b) in closed.iter().zip(&numeric) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn inter_beat_interval_follows_tempo() {
    let curve = TempoCurve::ramp(70.0, 170.0, 40.0).unwrap();
    let beats = ClickTrackSpec::new(40.0, curve.clone(), MeterSequence::constant(4).unwrap())
        .annotation()
        .unwrap()
        .beats();
    for w in beats.windows(2) {
        let expected = 60.0 / curve.bpm_at(w[0]);
        assert!(((w[1] - w[0]) / expected - 1.0).abs() < 0.02);
    }
}

#[test]
fn meter_change_moves_downbeat_spacing() {
    let spec = ClickTrackSpec::new(
        20.0,
        TempoCurve::constant(120.0).unwrap(),
        MeterSequence::new(vec![(0, 4), (3, 3)]).unwrap(),
    );
    let a = spec.annotation().unwrap();
    let beats = a.beats();
    let idx: Vec<usize> = a
        .downbeats()
        .iter()
        .map(|d| beats.iter().position(|b| b == d).unwrap())
        .collect();
    let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(&gaps[..4], &[4, 4, 4, 3]);
    assert!(gaps[3..].iter().all(|&g| g == 3));
}

#[test]
fn synthesis_is_seeded() {
    let mut spec = ClickTrackSpec::new(
        3.0,
        TempoCurve::constant(100.0).unwrap(),
        MeterSequence::constant(3).unwrap(),
    );
    spec.noise = 0.01;
    let a = synthesize_click_track(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = synthesize_click_track(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let c = synthesize_click_track(&spec, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(a.0.samples, b.0.samples);
    assert_ne!(a.0.samples, c.0.samples);
    assert_eq!(a.1, c.1);
}

fn spectrogram(frames: usize, bins: usize) -> Spectrogram {
    let mut s = Spectrogram::zeros(frames, bins);
    for (i, v) in s.values.iter_mut().enumerate() {
        *v = i as f32;
    }
    s
}

proptest! {
    #[test]
    fn synthetic_downbeats_are_beats(bpm in 50.0f64..200.0, meter in 1u32..8, offset in 0.0f64..1.0) {
        let mut spec = ClickTrackSpec::new(15.0, TempoCurve::constant(bpm).unwrap(), MeterSequence::constant(meter).unwrap());
        spec.start_offset = offset;
        let ann = spec.annotation().unwrap();
        let t = encode_targets(&ann, 750, 750);
        for f in 0..750 {
            prop_assert!(t.get(f, 1) <= t.get(f, 0));
        }
    }

    #[test]
    fn annotation_text_round_trips(
        steps in prop::collection::vec((1u32..100_000, 0u32..8), 0..30),
    ) {
        let mut t = 0.0;
        let events: Vec<(f64, u32)> = steps
            .into_iter()
            .map(|(dt, p)| {
                t += dt as f64 * 1e-4;
                (t, p)
            })
            .collect();
        let a = BeatAnnotation::new(events).unwrap();
        let text = a.to_text();
        let b = BeatAnnotation::parse(&text, "x").unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(b.to_text(), text);
    }

    #[test]
    fn masking_permutes_frames_inside_areas_only(frames in 100usize..600, seed in any::<u64>()) {
        let spec = spectrogram(frames, 3);
        let targets = FrameTargets::new(frames);
        let out = mask_augment(&spec, &targets, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(out.areas.len() <= 6);
        for w in out.areas.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        let inside = |f: usize| out.areas.iter().any(|a| a.contains(&f));
        for f in 0..frames {
            if inside(f) {
                prop_assert!(!out.targets.is_valid(f, 0) && !out.targets.is_valid(f, 1));
            } else {
                prop_assert_eq!(out.spec.frame(f), spec.frame(f));
                prop_assert!(out.targets.is_valid(f, 0) && out.targets.is_valid(f, 1));
            }
        }
        for a in &out.areas {
            prop_assert!((25..=100).contains(&a.len()));
            let mut before: Vec<Vec<u32>> = a.clone().map(|f| spec.frame(f).iter().map(|v| v.to_bits()).collect()).collect();
            let mut after: Vec<Vec<u32>> = a.clone().map(|f| out.spec.frame(f).iter().map(|v| v.to_bits()).collect()).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }
        if out.areas.is_empty() {
            prop_assert_eq!(&out.spec, &spec);
        }
        let again = mask_augment(&spec, &targets, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&again.spec, &out.spec);
        prop_assert_eq!(&again.targets, &out.targets);
    }

    #[test]
    fn masking_short_pieces_does_not_fail(frames in 0usize..100, seed in any::<u64>()) {
        let spec = spectrogram(frames, 2);
        let out = mask_augment(&spec, &FrameTargets::new(frames), &mut ChaCha8Rng::seed_from_u64(seed));
        for a in &out.areas {
            prop_assert!(a.end <= frames);
        }
    }
}

#[test]
fn every_area_count_occurs() {
    let spec = spectrogram(3000, 1);
    let targets = FrameTargets::new(3000);
    let mut seen = [0usize; 7];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..700 {
        seen[mask_augment(&spec, &targets, &mut rng).areas.len()] += 1;
    }
    assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
}

#[test]
fn average_excerpt_count_tracks_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for l in [45.0, 90.0, 137.0, 300.0] {
        let runs = 200;
        let total: usize = (0..runs).map(|_| sample_excerpts(l, 0.65, 30.0, &mut rng).len()).sum();
        let avg = total as f64 / runs as f64;
        assert!((avg - 0.65 * l / 30.0).abs() <= 0.5, "l={l}: {avg}");
        assert_eq!(avg as usize, excerpt_count(l, 0.65, 30.0));
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let entries = vec![
        ManifestEntry {
            piece_id: "p0".into(),
            wav_path: "p0.wav".into(),
            beats_path: "p0.beats".into(),
            split: Split::Train,
        },
        ManifestEntry {
            piece_id: "p1".into(),
            wav_path: "p1.wav".into(),
            beats_path: "p1.beats".into(),
            split: Split::Test,
        },
    ];
    let path = dir.path().join("manifest.csv");
    write_manifest(&path, &entries).unwrap();
    let back = read_manifest(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].wav_path, dir.path().join("p1.wav"));
    assert_eq!(back[1].split, Split::Test);
    write_manifest(&path, &[]).unwrap();
    assert!(read_manifest(&path).unwrap().is_empty());
    std::fs::write(&path, "piece_id,wav_path,beats_path,split\na,b,c,bogus\n").unwrap();
    let err = read_manifest(&path).unwrap_err().to_string();
    assert!(err.contains(":2:"), "{err}");
}
