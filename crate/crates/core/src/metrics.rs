//! Beat tracking evaluation: F-measure with a ±70 ms window and the
//! continuity-based CMLt and AMLt scores, computed after discarding the
//! first five seconds.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{file_error, Result};
use crate::postprocess::BeatPredictions;

pub const TRIM_SECONDS: f64 = 5.0;
pub const F_MEASURE_WINDOW: f64 = 0.07;
pub const PHASE_TOLERANCE: f64 = 0.175;
pub const PERIOD_TOLERANCE: f64 = 0.175;

/// Events at or after `threshold` seconds.
pub fn trim(times: &[f64], threshold: f64) -> Vec<f64> {
    times.iter().copied().filter(|&t| t >= threshold).collect()
}

/// Size of the largest one-to-one matching with `|ref - est| <= window`.
///
/// Both inputs must be sorted. On sorted events, greedily pairing the
/// earliest compatible pair is optimal.
pub fn match_count(reference: &[f64], estimate: &[f64], window: f64) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < reference.len() && j < estimate.len() {
        let (r, e) = (reference[i], estimate[j]);
        if r > e + window {
            j += 1;
        } else if r < e - window {
            i += 1;
        } else {
            n += 1;
            i += 1;
            j += 1;
        }
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FMeasure {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of sorted estimates against sorted references.
/// Two empty sequences agree perfectly; exactly one empty scores zero.
pub fn f_measure(reference: &[f64], estimate: &[f64], window: f64) -> FMeasure {
    match (reference.is_empty(), estimate.is_empty()) {
        (true, true) => {
            return FMeasure {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        }
        (true, false) | (false, true) => {
            return FMeasure {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        }
        _ => {}
    }
    let hits = match_count(reference, estimate, window) as f64;
    let precision = hits / estimate.len() as f64;
    let recall = hits / reference.len() as f64;
    let f1 = if precision == 0.0 && recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FMeasure { precision, recall, f1 }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Continuity {
    pub cmlt: f64,
    pub amlt: f64,
    /// False when either sequence has fewer than two events, in which case
    /// both scores are zero.
    pub defined: bool,
}

/// The reference at its own level, offbeat, double tempo, and the two
/// half-tempo phases.
pub fn metrical_variants(reference: &[f64]) -> [Vec<f64>; 5] {
    let mut double = Vec::with_capacity(2 * reference.len());
    for (i, &r) in reference.iter().enumerate() {
        double.push(r);
        if let Some(&next) = reference.get(i + 1) {
            double.push((next - r) * 0.5 + r);
        }
    }
    let offbeat = double.iter().skip(1).step_by(2).copied().collect();
    let half_odd = reference.iter().step_by(2).copied().collect();
    let half_even = reference.iter().skip(1).step_by(2).copied().collect();
    [reference.to_vec(), offbeat, double, half_odd, half_even]
}

/// Fraction of estimates that sit within the phase tolerance of an unused
/// reference and whose local interval matches that reference's interval,
/// relative to the longer of the two sequences.
fn total_accuracy(reference: &[f64], estimate: &[f64]) -> f64 {
    let n = reference.len().max(estimate.len());
    let mut used = vec![false; reference.len()];
    let mut successes = 0usize;
    for (m, &e) in estimate.iter().enumerate() {
        let mut nearest = 0;
        let mut min_diff = f64::INFINITY;
        for (k, &r) in reference.iter().enumerate() {
            let d = (e - r).abs();
            if d < min_diff {
                min_diff = d;
                nearest = k;
            }
        }
        if used[nearest] {
            continue;
        }
        // the previous reference, wrapping to the last for index 0
        let prev = |k: usize| reference[(k + reference.len() - 1) % reference.len()];
        let (phase, period) = if m == 0 || nearest == 0 {
            let ref_interval = if nearest + 1 < reference.len() {
                reference[nearest + 1] - reference[nearest]
            } else {
                reference[nearest] - prev(nearest)
            };
            let est_interval = if m + 1 < estimate.len() {
                estimate[m + 1] - estimate[m]
            } else {
                e - estimate[m - 1]
            };
            if ref_interval == 0.0 {
                (
                    if min_diff == 0.0 { 1.0 } else { f64::INFINITY },
                    if est_interval == 0.0 { 0.0 } else { f64::INFINITY },
                )
            } else {
                (
                    (min_diff / ref_interval).abs(),
                    (1.0 - est_interval / ref_interval).abs(),
                )
            }
        } else {
            let ref_interval = reference[nearest] - reference[nearest - 1];
            let est_interval = e - estimate[m - 1];
            (
                (min_diff / ref_interval).abs(),
                (1.0 - est_interval / ref_interval).abs(),
            )
        };
        if phase < PHASE_TOLERANCE && period < PERIOD_TOLERANCE {
            used[nearest] = true;
            successes += 1;
        }
    }
    successes as f64 / n as f64
}

/// CMLt and AMLt of sorted estimates against sorted references.
pub fn continuity(reference: &[f64], estimate: &[f64]) -> Continuity {
    if reference.len() < 2 || estimate.len() < 2 {
        return Continuity {
            cmlt: 0.0,
            amlt: 0.0,
            defined: false,
        };
    }
    let scores = metrical_variants(reference).map(|v| total_accuracy(&v, estimate));
    Continuity {
        cmlt: scores[0],
        amlt: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        defined: true,
    }
}

/// F1, CMLt and AMLt for one event sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub f1: f64,
    pub cmlt: f64,
    pub amlt: f64,
}

impl Scores {
    /// Sorts and trims both sequences, then scores them.
    pub fn compute(reference: &[f64], estimate: &[f64]) -> Self {
        let prepare = |x: &[f64]| {
            let mut v = trim(x, TRIM_SECONDS);
            v.sort_by(f64::total_cmp);
            v
        };
        let (r, e) = (prepare(reference), prepare(estimate));
        let f = f_measure(&r, &e, F_MEASURE_WINDOW);
        let c = continuity(&r, &e);
        Self {
            f1: f.f1,
            cmlt: c.cmlt,
            amlt: c.amlt,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceScores {
    pub piece_id: String,
    pub beat: Scores,
    /// Absent when the reference carries no downbeat information.
    pub downbeat: Option<Scores>,
}

/// Scores beats, and downbeats when the reference has them.
pub fn evaluate_piece(
    piece_id: &str,
    ref_beats: &[f64],
    ref_downbeats: Option<&[f64]>,
    predictions: &BeatPredictions,
) -> PieceScores {
    PieceScores {
        piece_id: piece_id.to_string(),
        beat: Scores::compute(ref_beats, &predictions.beats),
        downbeat: ref_downbeats.map(|d| Scores::compute(d, &predictions.downbeats)),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub pieces: Vec<PieceScores>,
}

pub const CSV_HEADER: [&str; 7] = ["piece_id", "beat_f1", "beat_cmlt", "beat_amlt", "db_f1", "db_cmlt", "db_amlt"];

fn mean(values: impl Iterator<Item = Scores>) -> Option<Scores> {
    let (mut n, mut acc) = (0usize, [0.0; 3]);
    for s in values {
        n += 1;
        acc[0] += s.f1;
        acc[1] += s.cmlt;
        acc[2] += s.amlt;
    }
    (n > 0).then(|| Scores {
        f1: acc[0] / n as f64,
        cmlt: acc[1] / n as f64,
        amlt: acc[2] / n as f64,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl EvalReport {
    pub fn push(&mut self, piece: PieceScores) {
        self.pieces.push(piece);
    }

    /// Unweighted mean over all pieces.
    pub fn macro_beat(&self) -> Option<Scores> {
        mean(self.pieces.iter().map(|p| p.beat))
    }

    /// Unweighted mean over pieces that have downbeat references.
    pub fn macro_downbeat(&self) -> Option<Scores> {
        mean(self.pieces.iter().filter_map(|p| p.downbeat))
    }

    /// One row per piece; downbeat cells are empty when absent.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for p in &self.pieces {
            let mut row = vec![p.piece_id.clone(), fmt(p.beat.f1), fmt(p.beat.cmlt), fmt(p.beat.amlt)];
            match p.downbeat {
                Some(d) => row.extend([fmt(d.f1), fmt(d.cmlt), fmt(d.amlt)]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(file_error(path))
    }

    /// Aligned text table with a closing macro-average row.
    pub fn to_table(&self) -> String {
        let width = self
            .pieces
            .iter()
            .map(|p| p.piece_id.len())
            .chain(["piece_id".len(), "mean".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "piece_id");
        for h in &CSV_HEADER[1..] {
            let _ = write!(out, "  {h:>9}");
        }
        out.push('\n');
        let mut row = |id: &str, b: Option<Scores>, d: Option<Scores>| {
            let _ = write!(out, "{id:<width$}");
            for s in [b, d] {
                match s {
                    Some(s) => {
                        for v in [s.f1, s.cmlt, s.amlt] {
                            let _ = write!(out, "  {v:>9.4}");
                        }
                    }
                    None => {
                        for _ in 0..3 {
                            let _ = write!(out, "  {:>9}", "-");
                        }
                    }
                }
            }
            out.push('\n');
        };
        for p in &self.pieces {
            row(&p.piece_id, Some(p.beat), p.downbeat);
        }
        row("mean", self.macro_beat(), self.macro_downbeat());
        out
    }
}
