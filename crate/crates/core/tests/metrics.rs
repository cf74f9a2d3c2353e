use beatrack::metrics::{continuity, f_measure, Scores};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    kind: String,
    reference: Vec<f64>,
    estimate: Vec<f64>,
    f1: f64,
    cmlt: f64,
    amlt: f64,
}

#[derive(Deserialize)]
struct Golden {
    cases: Vec<Case>,
}

fn golden() -> Golden {
    let text = include_str!("data/metrics_golden.json");
    serde_json::from_str(text).unwrap()
}

#[test]
fn matches_reference_implementation() {
    let g = golden();
    assert_eq!(g.cases.len(), 50);
    let mut worst = 0.0f64;
    for (i, c) in g.cases.iter().enumerate() {
        let s = Scores::compute(&c.reference, &c.estimate);
        for (name, got, want) in [("f1", s.f1, c.f1), ("cmlt", s.cmlt, c.cmlt), ("amlt", s.amlt, c.amlt)] {
            let err = (got - want).abs();
            worst = worst.max(err);
            assert!(err <= 1e-6, "case {i} ({}): {name} {got} vs {want}", c.kind);
        }
    }
    println!("worst deviation from golden values: {worst:e}");
}

/// Times on a 1/64 s grid, so shifts by grid multiples are exact.
fn events() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..4000, 0..60).prop_map(|s| s.into_iter().map(|k| k as f64 / 64.0).collect())
}

proptest! {
    #[test]
    fn f1_is_symmetric(r in events(), e in events()) {
        let a = f_measure(&r, &e, 0.07);
        let b = f_measure(&e, &r, 0.07);
        prop_assert_eq!(a.f1, b.f1);
        prop_assert_eq!(a.precision, b.recall);
    }

    #[test]
    fn f1_is_shift_invariant(r in events(), e in events(), k in 0u32..640) {
        let shift = k as f64 / 64.0;
        let moved = |v: &[f64]| v.iter().map(|t| t + shift).collect::<Vec<_>>();
        prop_assert_eq!(f_measure(&r, &e, 0.07).f1, f_measure(&moved(&r), &moved(&e), 0.07).f1);
    }

    #[test]
    fn amlt_dominates_cmlt(r in events(), e in events()) {
        let c = continuity(&r, &e);
        prop_assert!(c.amlt >= c.cmlt);
        prop_assert!((0.0..=1.0).contains(&c.cmlt) && (0.0..=1.0).contains(&c.amlt));
    }

    #[test]
    fn scores_ignore_input_order(r in events(), e in events(), seed in any::<u64>()) {
        let shuffle = |v: &[f64]| {
            let mut v = v.to_vec();
            let mut s = seed | 1;
            for i in (1..v.len()).rev() {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                v.swap(i, (s % (i as u64 + 1)) as usize);
            }
            v
        };
        prop_assert_eq!(Scores::compute(&r, &e), Scores::compute(&shuffle(&r), &shuffle(&e)));
    }
}
