"""Regenerates metrics_golden.json with mir_eval.

Run from this directory: python3 gen_metrics_golden.py
"""

import json
import warnings

import mir_eval
import numpy as np

warnings.simplefilter("ignore")
rng = np.random.default_rng(20240611)


def grid(start, period, duration, jitter):
    t = np.arange(start, duration, period)
    return np.sort(t + rng.normal(0.0, jitter, t.shape))


def estimate(ref, kind):
    period = np.median(np.diff(ref))
    if kind == "jitter":
        return np.sort(ref + rng.normal(0.0, 0.03, ref.shape))
    if kind == "offbeat":
        return ref[:-1] + np.diff(ref) / 2
    if kind == "double":
        mid = ref[:-1] + np.diff(ref) / 2
        return np.sort(np.concatenate([ref, mid]))
    if kind == "half":
        return ref[rng.integers(0, 2)::2]
    if kind == "drop":
        keep = rng.random(ref.shape) > 0.2
        return ref[keep]
    if kind == "extra":
        extra = rng.uniform(ref[0], ref[-1], size=max(1, len(ref) // 5))
        return np.sort(np.concatenate([ref, extra]))
    if kind == "shift":
        return ref + rng.uniform(-0.12, 0.12)
    if kind == "tempo":
        return grid(ref[0], period * rng.uniform(0.9, 1.1), ref[-1], 0.01)
    if kind == "sparse":
        return np.sort(rng.uniform(0.0, ref[-1], size=rng.integers(0, 4)))
    return np.sort(rng.uniform(0.0, ref[-1] + 1.0, size=len(ref)))


kinds = ["jitter", "offbeat", "double", "half", "drop", "extra", "shift", "tempo", "sparse", "random"]
cases = []
for i in range(50):
    ref = grid(rng.uniform(0.0, 3.0), rng.uniform(0.3, 1.2), rng.uniform(12.0, 40.0), 0.01)
    kind = kinds[i % len(kinds)]
    est = np.round(estimate(ref, kind), 6)
    ref = np.round(ref, 6)
    est = est[est >= 0.0]
    r = mir_eval.beat.trim_beats(ref)
    e = mir_eval.beat.trim_beats(est)
    _, cmlt, _, amlt = mir_eval.beat.continuity(r, e)
    cases.append(
        {
            "kind": kind,
            "reference": ref.tolist(),
            "estimate": est.tolist(),
            "f1": float(mir_eval.beat.f_measure(r, e)),
            "cmlt": float(cmlt),
            "amlt": float(amlt),
        }
    )

with open("metrics_golden.json", "w") as f:
    json.dump({"generator": "mir_eval " + mir_eval.__version__, "cases": cases}, f, indent=1)
