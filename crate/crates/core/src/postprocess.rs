//! Turning frame probabilities into beat and downbeat times without any
//! tempo or meter model.

use crate::dsp::FRAME_RATE;
use crate::error::{invalid, Result};

/// Neighbourhood half-width, in frames, within which a pick must be maximal.
pub const PEAK_RADIUS: usize = 3;
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatPredictions {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
}

/// Frames holding a probability above 0.5 that is no smaller than any
/// within ±3 frames. Adjacent picks form a plateau and are reported once at
/// its center, which may fall halfway between frames.
pub fn peak_pick(probs: &[f64]) -> Vec<f64> {
    let n = probs.len();
    let qualifies = |t: usize| {
        let p = probs[t];
        if p.is_nan() || p <= THRESHOLD {
            return false;
        }
        let lo = t.saturating_sub(PEAK_RADIUS);
        let hi = (t + PEAK_RADIUS).min(n - 1);
        probs[lo..=hi].iter().all(|&q| p >= q)
    };
    let mut picks = Vec::new();
    let mut t = 0;
    while t < n {
        if qualifies(t) {
            let start = t;
            while t + 1 < n && qualifies(t + 1) {
                t += 1;
            }
            picks.push((start + t) as f64 / 2.0);
        }
        t += 1;
    }
    picks
}

pub fn frames_to_seconds(frame: f64) -> f64 {
    frame / FRAME_RATE
}

/// Moves every downbeat onto its nearest beat, preferring the earlier beat
/// on a tie, and drops duplicates.
pub fn snap_downbeats(beats: &[f64], downbeats: &[f64]) -> Vec<f64> {
    if beats.is_empty() {
        if !downbeats.is_empty() {
            log::warn!("dropping {} downbeats: no beats to snap them to", downbeats.len());
        }
        return Vec::new();
    }
    let mut out: Vec<f64> = downbeats
        .iter()
        .map(|&d| {
            let i = beats.partition_point(|&b| b < d);
            match (i.checked_sub(1).map(|j| beats[j]), beats.get(i)) {
                (Some(before), Some(&after)) => {
                    if after - d < d - before {
                        after
                    } else {
                        before
                    }
                }
                (Some(before), None) => before,
                (None, Some(&after)) => after,
                (None, None) => unreachable!("beats is nonempty"),
            }
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Joins predictions made on consecutive excerpts, each given with its
/// start time in seconds and times relative to that start.
pub fn concat_excerpts(excerpts: &[(f64, BeatPredictions)], excerpt_seconds: f64) -> Result<BeatPredictions> {
    let mut out = BeatPredictions::default();
    let mut end = f64::NEG_INFINITY;
    for (i, (start, preds)) in excerpts.iter().enumerate() {
        if *start < end - 1e-9 {
            return Err(invalid(format!(
                "excerpt {i} starts at {start} s, before the previous one ends at {end} s"
            )));
        }
        end = start + excerpt_seconds;
        out.beats.extend(preds.beats.iter().map(|t| t + start));
        out.downbeats.extend(preds.downbeats.iter().map(|t| t + start));
    }
    Ok(out)
}

/// Peak-picks one excerpt's beat and downbeat probability tracks.
pub fn pick_excerpt(beat_probs: &[f64], downbeat_probs: &[f64]) -> BeatPredictions {
    let secs = |picks: Vec<f64>| picks.into_iter().map(frames_to_seconds).collect();
    BeatPredictions {
        beats: secs(peak_pick(beat_probs)),
        downbeats: secs(peak_pick(downbeat_probs)),
    }
}

/// Full decoding of a piece from per-excerpt probability tracks: pick each
/// excerpt, concatenate, then snap downbeats onto beats.
pub fn decode(excerpts: &[(f64, Vec<f64>, Vec<f64>)], excerpt_seconds: f64) -> Result<BeatPredictions> {
    let picked: Vec<(f64, BeatPredictions)> = excerpts
        .iter()
        .map(|(start, b, d)| (*start, pick_excerpt(b, d)))
        .collect();
    let mut preds = concat_excerpts(&picked, excerpt_seconds)?;
    preds.downbeats = snap_downbeats(&preds.beats, &preds.downbeats);
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_peak() {
        assert_eq!(peak_pick(&[0.1, 0.2, 0.9, 0.2, 0.1, 0.0, 0.0]), vec![2.0]);
    }

    #[test]
    fn plateau_center() {
        let mut p = vec![0.1; 20];
        p[10] = 0.8;
        p[11] = 0.8;
        assert_eq!(peak_pick(&p), vec![10.5]);
    }

    #[test]
    fn below_threshold() {
        assert!(peak_pick(&[0.1, 0.45, 0.2]).is_empty());
        assert!(peak_pick(&[0.5, 0.5]).is_empty());
        assert!(peak_pick(&[]).is_empty());
    }

    #[test]
    fn separated_equal_maxima_both_pick() {
        assert_eq!(peak_pick(&[0.9, 0.1, 0.9]), vec![0.0, 2.0]);
    }

    #[test]
    fn seconds() {
        assert_eq!(frames_to_seconds(0.0), 0.0);
        assert_eq!(frames_to_seconds(100.0), 2.0);
        assert!((frames_to_seconds(10.5) - 0.21).abs() < 1e-15);
    }

    #[test]
    fn snapping() {
        assert_eq!(snap_downbeats(&[1.0, 1.5], &[1.04]), vec![1.0]);
        assert_eq!(snap_downbeats(&[1.0, 1.5], &[1.25]), vec![1.0]);
        assert_eq!(snap_downbeats(&[1.0, 1.5], &[0.9, 1.1]), vec![1.0]);
        assert_eq!(snap_downbeats(&[1.0, 1.5], &[0.2, 9.0]), vec![1.0, 1.5]);
        assert!(snap_downbeats(&[], &[1.0]).is_empty());
    }

    #[test]
    fn concatenation() {
        let a = BeatPredictions {
            beats: vec![1.0],
            downbeats: vec![1.0],
        };
        let b = BeatPredictions {
            beats: vec![0.5],
            downbeats: vec![],
        };
        let out = concat_excerpts(&[(0.0, a.clone()), (30.0, b)], 30.0).unwrap();
        assert_eq!(out.beats, vec![1.0, 30.5]);
        assert_eq!(out.downbeats, vec![1.0]);
        assert_eq!(concat_excerpts(&[(0.0, a.clone())], 30.0).unwrap(), a);
        let out = concat_excerpts(&[(0.0, a.clone()), (30.0, BeatPredictions::default())], 30.0).unwrap();
        assert_eq!(out, a);
        assert!(concat_excerpts(&[(0.0, a.clone()), (20.0, a)], 30.0).is_err());
    }
}
