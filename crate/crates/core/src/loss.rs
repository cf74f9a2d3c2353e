//! Frame-wise binary cross-entropy losses, plain, positively weighted and
//! shift tolerant.
//!
//! All losses take logits. Probabilities never appear explicitly, so
//! saturated predictions stay finite.

use beatrack_tensor::{Element, Tape, Tensor, Var};

use crate::error::{invalid, Error, Result};

/// Half-width of the max-pooling window applied to predictions.
pub const POOL_RADIUS: usize = 3;
/// Half-width of the label dilation that suppresses negatives.
pub const DILATION_RADIUS: usize = 6;
/// Logit written into excluded frames before pooling so they never win.
const MASKED_LOGIT: f64 = -1e9;

/// Beat and downbeat targets for `frames` frames, stored frame-major with
/// the beat column first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    frames: usize,
    values: Vec<u8>,
    valid: Vec<bool>,
}

impl FrameTargets {
    /// All-negative targets with every frame valid.
    pub fn new(frames: usize) -> Self {
        Self {
            frames,
            values: vec![0; 2 * frames],
            valid: vec![true; 2 * frames],
        }
    }

    pub fn from_columns(beat: &[u8], downbeat: &[u8], beat_valid: &[bool], downbeat_valid: &[bool]) -> Result<Self> {
        let n = beat.len();
        if downbeat.len() != n || beat_valid.len() != n || downbeat_valid.len() != n {
            return Err(invalid("target columns differ in length"));
        }
        let mut t = Self::new(n);
        for i in 0..n {
            if beat[i] > 1 || downbeat[i] > 1 {
                return Err(invalid(format!("target at frame {i} is not binary")));
            }
            t.set(i, 0, beat[i]);
            t.set(i, 1, downbeat[i]);
            t.set_valid(i, 0, beat_valid[i]);
            t.set_valid(i, 1, downbeat_valid[i]);
        }
        Ok(t)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, frame: usize, column: usize) -> u8 {
        self.values[2 * frame + column]
    }

    pub fn set(&mut self, frame: usize, column: usize, value: u8) {
        self.values[2 * frame + column] = value;
    }

    pub fn is_valid(&self, frame: usize, column: usize) -> bool {
        self.valid[2 * frame + column]
    }

    pub fn set_valid(&mut self, frame: usize, column: usize, valid: bool) {
        self.valid[2 * frame + column] = valid;
    }

    pub fn column(&self, column: usize) -> Vec<u8> {
        (0..self.frames).map(|t| self.get(t, column)).collect()
    }

    pub fn valid_column(&self, column: usize) -> Vec<bool> {
        (0..self.frames).map(|t| self.is_valid(t, column)).collect()
    }

    /// Frames `start..start + len`, with frames past the end negative and
    /// excluded.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let mut out = Self::new(len);
        for i in 0..len {
            let src = start + i;
            for c in 0..2 {
                if src < self.frames {
                    out.set(i, c, self.get(src, c));
                    out.set_valid(i, c, self.is_valid(src, c));
                } else {
                    out.set_valid(i, c, false);
                }
            }
        }
        out
    }
}

/// Positive-class weights, one per output column.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PositiveWeight {
    pub beat: f64,
    pub downbeat: f64,
}

impl PositiveWeight {
    pub const ONE: Self = Self {
        beat: 1.0,
        downbeat: 1.0,
    };

    pub fn column(&self, column: usize) -> f64 {
        if column == 0 {
            self.beat
        } else {
            self.downbeat
        }
    }
}

/// Negatives per positive over all valid frames, clamped to at least one.
pub fn compute_positive_weights<'a>(targets: impl IntoIterator<Item = &'a FrameTargets>) -> Result<PositiveWeight> {
    let mut pos = [0u64; 2];
    let mut neg = [0u64; 2];
    for t in targets {
        for f in 0..t.frames() {
            for c in 0..2 {
                if t.is_valid(f, c) {
                    if t.get(f, c) == 1 {
                        pos[c] += 1;
                    } else {
                        neg[c] += 1;
                    }
                }
            }
        }
    }
    let ratio = |c: usize, name: &str| {
        if pos[c] == 0 {
            Err(Error::InvalidInput(format!("no valid {name} positives to weight against")))
        } else {
            Ok((neg[c] as f64 / pos[c] as f64).max(1.0))
        }
    };
    Ok(PositiveWeight {
        beat: ratio(0, "beat")?,
        downbeat: ratio(1, "downbeat")?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Plain binary cross-entropy.
    Bce,
    /// Cross-entropy with positives scaled by the column weight.
    WeightedBce,
    /// Weighted cross-entropy on max-pooled predictions with negatives
    /// ignored near labels.
    ShiftTolerant,
}

/// `ln σ(x)`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Binary dilation of `labels` by `radius` frames on each side.
pub fn dilate(labels: &[u8], radius: usize) -> Vec<u8> {
    let n = labels.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(radius);
            let hi = (t + radius).min(n.saturating_sub(1));
            u8::from(labels[lo..=hi].contains(&1))
        })
        .collect()
}

/// Max over `t-radius..=t+radius`, clipped at the edges.
pub fn max_filter(x: &[f64], radius: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(radius);
            let hi = (t + radius).min(n - 1);
            x[lo..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn check_lengths(y: &[u8], logits: &[f64], valid: Option<&[bool]>) -> Result<()> {
    if y.len() != logits.len() || valid.is_some_and(|v| v.len() != y.len()) {
        return Err(invalid(format!(
            "length mismatch: {} labels, {} logits{}",
            y.len(),
            logits.len(),
            valid.map_or(String::new(), |v| format!(", {} mask entries", v.len()))
        )));
    }
    Ok(())
}

/// `-Σ w y ln σ(z) + (1 - y) ln(1 - σ(z))` over one column.
pub fn weighted_bce(y: &[u8], logits: &[f64], w: f64, valid: Option<&[bool]>) -> Result<f64> {
    check_lengths(y, logits, valid)?;
    let mut total = 0.0;
    for (t, (&yt, &z)) in y.iter().zip(logits).enumerate() {
        if valid.is_some_and(|v| !v[t]) {
            continue;
        }
        total -= if yt == 1 { w * log_sigmoid(z) } else { log_sigmoid(-z) };
    }
    Ok(total)
}

pub fn bce(y: &[u8], logits: &[f64], valid: Option<&[bool]>) -> Result<f64> {
    weighted_bce(y, logits, 1.0, valid)
}

/// Shift-tolerant weighted cross-entropy over one column: predictions are
/// max-pooled over ±3 frames, and negatives within ±6 frames of a label
/// are ignored.
pub fn shift_tolerant_weighted_bce(y: &[u8], logits: &[f64], w: f64, valid: Option<&[bool]>) -> Result<f64> {
    check_lengths(y, logits, valid)?;
    if y.is_empty() {
        return Ok(0.0);
    }
    let keep = |t: usize| valid.is_none_or(|v| v[t]);
    let masked: Vec<f64> = (0..y.len()).map(|t| if keep(t) { logits[t] } else { MASKED_LOGIT }).collect();
    let pooled = max_filter(&masked, POOL_RADIUS);
    let near = dilate(y, DILATION_RADIUS);
    let mut total = 0.0;
    for t in 0..y.len() {
        if !keep(t) {
            continue;
        }
        if y[t] == 1 {
            total -= w * log_sigmoid(pooled[t]);
        }
        if near[t] == 0 {
            total -= log_sigmoid(-pooled[t]);
        }
    }
    Ok(total)
}

/// Scalar loss of `logits: [B, T, 2]` against one target per batch item:
/// summed over frames and both columns, averaged over the batch.
pub fn batch_loss<E: Element>(
    tape: &mut Tape<E>,
    logits: Var,
    targets: &[FrameTargets],
    weights: PositiveWeight,
    kind: LossKind,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let [b, t, 2] = shape[..] else {
        return Err(invalid(format!("logits must be [B, T, 2], got {shape:?}")));
    };
    if targets.len() != b || targets.iter().any(|x| x.frames() != t) {
        return Err(invalid(format!(
            "{} targets of lengths {:?} for logits {shape:?}",
            targets.len(),
            targets.iter().map(FrameTargets::frames).collect::<Vec<_>>()
        )));
    }
    let weights = match kind {
        LossKind::Bce => PositiveWeight::ONE,
        _ => weights,
    };
    let n = b * t * 2;
    let mut keep = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    let dilated: Vec<[Vec<u8>; 2]> = targets
        .iter()
        .map(|x| [0, 1].map(|c| dilate(&x.column(c), DILATION_RADIUS)))
        .collect();
    for (i, x) in targets.iter().enumerate() {
        for f in 0..t {
            for c in 0..2 {
                let v = x.is_valid(f, c);
                let y = x.get(f, c) == 1;
                keep.push(v);
                let (p, q) = match (v, kind) {
                    (false, _) => (0.0, 0.0),
                    (true, LossKind::ShiftTolerant) => {
                        let far = dilated[i][c][f] == 0;
                        (if y { weights.column(c) } else { 0.0 }, if far { 1.0 } else { 0.0 })
                    }
                    (true, _) => {
                        if y {
                            (weights.column(c), 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                };
                pos.push(E::of(p));
                neg.push(E::of(q));
            }
        }
    }
    let z = if kind == LossKind::ShiftTolerant {
        let masked = tape.masked_fill(logits, &keep, E::of(MASKED_LOGIT))?;
        tape.max_pool1d(masked, 1, 2 * POOL_RADIUS + 1)?
    } else {
        logits
    };
    let pos = tape.constant(Tensor::new(shape.clone(), pos)?);
    let neg = tape.constant(Tensor::new(shape, neg)?);
    let lp = tape.log_sigmoid(z);
    let minus_z = tape.neg(z);
    let ln = tape.log_sigmoid(minus_z);
    let a = tape.mul(lp, pos)?;
    let c = tape.mul(ln, neg)?;
    let s = tape.add(a, c)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, E::of(-1.0 / b as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn bce_hand_values() {
        let l = bce(&[1, 0], &[0.0, 0.0], None).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let l = bce(&[0], &[logit(0.9)], None).unwrap();
        assert!((l + 0.1f64.ln()).abs() < 1e-12);
        let l = bce(&[1], &[40.0], None).unwrap();
        assert!(l < 1e-15);
        let l = weighted_bce(&[1, 0], &[0.0, 0.0], 2.0, None).unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(bce(&[1, 0], &[0.0], None).is_err());
        assert!(bce(&[1], &[0.0], Some(&[true, true])).is_err());
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert_eq!(log_sigmoid(1000.0), 0.0);
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dilation_and_max_filter() {
        assert_eq!(dilate(&[0, 0, 1, 0, 0, 0], 1), vec![0, 1, 1, 1, 0, 0]);
        assert_eq!(max_filter(&[1.0, 3.0, 2.0, 0.0], 1), vec![3.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn shift_tolerant_example() {
        let mut y = vec![0u8; 30];
        y[10] = 1;
        let mut z = vec![-60.0; 30];
        z[12] = logit(0.9);
        let l = shift_tolerant_weighted_bce(&y, &z, 5.0, None).unwrap();
        let background = -(30 - 13) as f64 * log_sigmoid(60.0);
        assert!((l - (-5.0 * 0.9f64.ln() + background)).abs() < 1e-12);
    }

    #[test]
    fn positive_weights() {
        let mut t = FrameTargets::new(50);
        t.set(10, 0, 1);
        t.set(35, 0, 1);
        t.set(10, 1, 1);
        for f in 0..25 {
            t.set_valid(f + 25, 1, false);
        }
        let w = compute_positive_weights([&t]).unwrap();
        assert_eq!(w.beat, 24.0);
        assert_eq!(w.downbeat, 24.0);
        let mut all = FrameTargets::new(4);
        for f in 0..4 {
            all.set(f, 0, 1);
            all.set(f, 1, u8::from(f % 2 == 0));
        }
        let w = compute_positive_weights([&all]).unwrap();
        assert_eq!((w.beat, w.downbeat), (1.0, 1.0));
        assert!(compute_positive_weights([&FrameTargets::new(4)]).is_err());
    }

    #[test]
    fn window_pads_with_excluded_frames() {
        let mut t = FrameTargets::new(3);
        t.set(2, 0, 1);
        let w = t.window(1, 4);
        assert_eq!(w.column(0), vec![0, 1, 0, 0]);
        assert_eq!(w.valid_column(0), vec![true, true, false, false]);
    }
}
