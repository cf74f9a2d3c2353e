"""Smoke test for the Python bindings.

Build and install first, for example with
``maturin develop -m crates/py/Cargo.toml`` or by installing the wheel
produced by ``maturin build -m crates/py/Cargo.toml``.
"""

import beatrack


def main():
    samples, events = beatrack.synthesize_click_track(10.0, 120.0, beats_per_bar=3, seed=1, noise=0.01)
    assert len(samples) == 10 * 22050
    assert len(events) == 20
    assert [p for _, p in events[:4]] == [1, 2, 3, 1]

    mel = beatrack.mel_spectrogram(samples)
    assert len(mel) == 500 and len(mel[0]) == 128
    assert all(v >= 0.0 for frame in mel for v in frame)

    assert beatrack.peak_pick([0.1, 0.9, 0.2, 0.0, 0.0, 0.0, 0.7, 0.7, 0.1]) == [1.0, 6.5]

    beats = [t for t, _ in events]
    assert beatrack.evaluate(beats, beats) == (1.0, 1.0, 1.0)

    tracker = beatrack.BeatTracker.untrained("small", seed=0)
    assert 1_500_000 < tracker.num_parameters < 2_500_000
    est_beats, est_downbeats = tracker.predict(samples[: 3 * 22050])
    assert set(est_downbeats) <= set(est_beats)
    beat_probs, downbeat_probs = tracker.activations(samples[: 3 * 22050])
    assert len(beat_probs) == len(downbeat_probs) == 150
    assert all(0.0 <= p <= 1.0 for p in beat_probs)

    try:
        tracker.predict(samples, sample_rate=44100)
    except ValueError:
        pass
    else:
        raise AssertionError("wrong sample rate accepted")

    print("python bindings ok: {} samples, {} mel frames, {} parameters".format(
        len(samples), len(mel), tracker.num_parameters))


if __name__ == "__main__":
    main()
