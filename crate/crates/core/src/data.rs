//! Annotations, frame targets, synthetic click tracks, masking
//! augmentation and excerpt sampling.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{compute_mel_spectrogram, AudioBuffer, MelSpectrogram, FRAME_RATE, SAMPLE_RATE};
use crate::error::{file_error, invalid, Error, Result};
use crate::loss::FrameTargets;
use crate::postprocess::BeatPredictions;

/// Beat events with their position in the measure: 1 marks a downbeat,
/// 2 and up the following beats, 0 a beat of unknown position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatAnnotation {
    events: Vec<(f64, u32)>,
}

impl BeatAnnotation {
    pub fn new(events: Vec<(f64, u32)>) -> Result<Self> {
        for (i, w) in events.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(invalid(format!(
                    "event {} at {} s does not follow {} s",
                    i + 1,
                    w[1].0,
                    w[0].0
                )));
            }
        }
        if let Some(&(t, _)) = events.iter().find(|(t, _)| !t.is_finite() || *t < 0.0) {
            return Err(invalid(format!("event time {t} is not a finite non-negative number")));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[(f64, u32)] {
        &self.events
    }

    pub fn has_downbeats(&self) -> bool {
        self.events.iter().any(|&(_, p)| p == 1)
    }

    pub fn beats(&self) -> Vec<f64> {
        self.events.iter().map(|&(t, _)| t).collect()
    }

    pub fn downbeats(&self) -> Vec<f64> {
        self.events.iter().filter(|&&(_, p)| p == 1).map(|&(t, _)| t).collect()
    }

    /// Downbeat times, or `None` when the annotation has no measure
    /// information.
    pub fn downbeats_if_known(&self) -> Option<Vec<f64>> {
        self.has_downbeats().then(|| self.downbeats())
    }

    /// Numbers beats from each downbeat on; beats before the first downbeat
    /// get position 0.
    pub fn from_predictions(preds: &BeatPredictions) -> Result<Self> {
        let mut position = 0;
        let mut events = Vec::with_capacity(preds.beats.len());
        for &t in &preds.beats {
            if preds.downbeats.contains(&t) {
                position = 1;
            } else if position > 0 {
                position += 1;
            }
            events.push((t, position));
        }
        Self::new(events)
    }

    /// Parses `time position` lines; blank lines and lines starting with
    /// `#` are skipped. `source` only labels error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut events: Vec<(f64, u32)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [time, position] = fields[..] else {
                return Err(err(i + 1, format!("expected `time position`, got {line:?}")));
            };
            let time: f64 = time
                .parse()
                .map_err(|_| err(i + 1, format!("invalid time {time:?}")))?;
            let position: u32 = position
                .parse()
                .map_err(|_| err(i + 1, format!("invalid beat position {position:?}")))?;
            if !time.is_finite() || time < 0.0 {
                return Err(err(i + 1, format!("time {time} is not a finite non-negative number")));
            }
            if let Some(&(prev, _)) = events.last() {
                if time <= prev {
                    return Err(err(i + 1, format!("time {time} does not follow {prev}")));
                }
            }
            events.push((time, position));
        }
        Ok(Self { events })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(t, p) in &self.events {
            let _ = writeln!(out, "{t}\t{p}");
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(file_error(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(file_error(path))
    }
}

/// Frame index of an event time, rounding halves up.
pub fn time_to_frame(t: f64) -> i64 {
    (t * FRAME_RATE + 0.5).floor() as i64
}

/// Frame targets over `frames` frames. Frames at or after `audio_frames`
/// are padding and excluded from both columns; the downbeat column is
/// excluded entirely when the annotation has no downbeats.
pub fn encode_targets(ann: &BeatAnnotation, frames: usize, audio_frames: usize) -> FrameTargets {
    let mut t = FrameTargets::new(frames);
    if frames == 0 {
        return t;
    }
    for &(time, position) in ann.events() {
        let f = time_to_frame(time).clamp(0, frames as i64 - 1) as usize;
        t.set(f, 0, 1);
        if position == 1 {
            t.set(f, 1, 1);
        }
    }
    let has_downbeats = ann.has_downbeats();
    for f in 0..frames {
        let audio = f < audio_frames;
        t.set_valid(f, 0, audio);
        t.set_valid(f, 1, audio && has_downbeats);
    }
    t
}

/// Tempo in BPM as a piecewise-linear function of time, constant before
/// the first and after the last knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempoCurve {
    knots: Vec<(f64, f64)>,
}

impl TempoCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(invalid("tempo curve needs at least one knot"));
        }
        for &(t, bpm) in &knots {
            if !t.is_finite() || !bpm.is_finite() || bpm <= 0.0 {
                return Err(invalid(format!("tempo knot ({t}, {bpm}) must be finite with positive BPM")));
            }
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("tempo knot times must increase"));
        }
        Ok(Self { knots })
    }

    pub fn constant(bpm: f64) -> Result<Self> {
        Self::new(vec![(0.0, bpm)])
    }

    /// Linear ramp from `from` BPM at 0 s to `to` BPM at `duration`.
    pub fn ramp(from: f64, to: f64, duration: f64) -> Result<Self> {
        Self::new(vec![(0.0, from), (duration, to)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn bpm_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, b0), (t1, b1)) = (w[0], w[1]);
            if t <= t1 {
                return b0 + (b1 - b0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }

    /// Piecewise-linear pieces `(start, end, bpm at start, slope)` covering
    /// the whole real line.
    fn pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        let k = &self.knots;
        let mut out = vec![(f64::NEG_INFINITY, k[0].0, k[0].1, 0.0)];
        for w in k.windows(2) {
            let ((t0, b0), (t1, b1)) = (w[0], w[1]);
            out.push((t0, t1, b0, (b1 - b0) / (t1 - t0)));
        }
        let (tl, bl) = k[k.len() - 1];
        out.push((tl, f64::INFINITY, bl, 0.0));
        out
    }

    /// Times `t >= start` (and `< end`) at which the number of beats
    /// elapsed since `start`, the integral of BPM / 60, is a whole number.
    pub fn beat_times(&self, start: f64, end: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if !(end > start) {
            return out;
        }
        let mut beats_done = 0.0f64;
        let mut next = 0u64;
        for (p0, p1, b0, slope) in self.pieces() {
            if p1 <= start {
                continue;
            }
            let s = p0.max(start);
            // the unbounded end pieces are flat
            let bs = if slope == 0.0 { b0 } else { b0 + slope * (s - p0) };
            let e = p1.min(end);
            // beats gained over [s, s + tau] is (bs tau + slope tau^2 / 2) / 60
            let seg_beats = (bs * (e - s) + 0.5 * slope * (e - s) * (e - s)) / 60.0;
            loop {
                let need = next as f64 - beats_done;
                if need > seg_beats {
                    break;
                }
                let c = 60.0 * need;
                let disc = (bs * bs + 2.0 * slope * c).max(0.0);
                let tau = if c == 0.0 { 0.0 } else { 2.0 * c / (bs + disc.sqrt()) };
                let t = s + tau;
                if t >= end {
                    return out;
                }
                out.push(t);
                next += 1;
            }
            beats_done += seg_beats;
            if p1 >= end {
                break;
            }
        }
        out
    }
}

/// Meter as `(first measure, beats per measure)` entries, measures counted
/// from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeterSequence {
    entries: Vec<(usize, u32)>,
}

impl MeterSequence {
    pub fn new(entries: Vec<(usize, u32)>) -> Result<Self> {
        if entries.first().map(|e| e.0) != Some(0) {
            return Err(invalid("meter sequence must start at measure 0"));
        }
        if entries.iter().any(|e| e.1 == 0) {
            return Err(invalid("beats per measure must be at least 1"));
        }
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("meter changes must be at increasing measures"));
        }
        Ok(Self { entries })
    }

    pub fn constant(beats_per_measure: u32) -> Result<Self> {
        Self::new(vec![(0, beats_per_measure)])
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    /// Position within the measure, starting at 1, of every beat in order.
    pub fn positions(&self, n_beats: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(n_beats);
        let mut measure = 0usize;
        while out.len() < n_beats {
            let bpm = self
                .entries
                .iter()
                .rev()
                .find(|e| e.0 <= measure)
                .expect("starts at measure 0")
                .1;
            for p in 1..=bpm {
                if out.len() == n_beats {
                    break;
                }
                out.push(p);
            }
            measure += 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickTrackSpec {
    pub duration: f64,
    pub tempo: TempoCurve,
    pub meter: MeterSequence,
    /// Time of the first beat.
    pub start_offset: f64,
    pub downbeat_hz: f64,
    pub beat_hz: f64,
    pub click_seconds: f64,
    pub click_amplitude: f64,
    /// Standard deviation of additive white noise.
    pub noise: f64,
}

impl ClickTrackSpec {
    pub fn new(duration: f64, tempo: TempoCurve, meter: MeterSequence) -> Self {
        Self {
            duration,
            tempo,
            meter,
            start_offset: 0.0,
            downbeat_hz: 1500.0,
            beat_hz: 1000.0,
            click_seconds: 0.02,
            click_amplitude: 0.5,
            noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.duration.is_finite()
            && self.duration > 0.0
            && self.start_offset >= 0.0
            && self.start_offset < self.duration
            && self.click_seconds > 0.0
            && self.noise >= 0.0
            && self.click_amplitude >= 0.0
            && [self.downbeat_hz, self.beat_hz]
                .iter()
                .all(|&f| f > 0.0 && f < SAMPLE_RATE as f64 / 2.0);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("infeasible click track: {self:?}")))
        }
    }

    pub fn annotation(&self) -> Result<BeatAnnotation> {
        let times = self.tempo.beat_times(self.start_offset, self.duration);
        let positions = self.meter.positions(times.len());
        BeatAnnotation::new(times.into_iter().zip(positions).collect())
    }
}

/// Renders decaying sine clicks at every beat of `spec`, higher pitched on
/// downbeats, plus optional white noise.
pub fn synthesize_click_track<R: Rng + ?Sized>(spec: &ClickTrackSpec, rng: &mut R) -> Result<(AudioBuffer, BeatAnnotation)> {
    spec.validate()?;
    let ann = spec.annotation()?;
    let sr = SAMPLE_RATE as f64;
    let n = (spec.duration * sr).round() as usize;
    let mut samples = vec![0.0f64; n];
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| invalid(e.to_string()))?;
        for s in samples.iter_mut() {
            *s = normal.sample(rng);
        }
    }
    let click_len = (spec.click_seconds * sr).round() as usize;
    let decay = spec.click_seconds / 5.0;
    for &(t, position) in ann.events() {
        let hz = if position == 1 { spec.downbeat_hz } else { spec.beat_hz };
        let start = (t * sr).round() as usize;
        for k in 0..click_len {
            let Some(s) = samples.get_mut(start + k) else { break };
            let tau = k as f64 / sr;
            *s += spec.click_amplitude * (-tau / decay).exp() * (std::f64::consts::TAU * hz * tau).sin();
        }
    }
    let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect();
    Ok((AudioBuffer::new(samples, SAMPLE_RATE)?, ann))
}

/// Ranges drawn by the masking augmentation.
pub const MASK_AREAS: Range<usize> = 0..7;
pub const MASK_AREA_FRAMES: Range<usize> = 25..101;
pub const MASK_PARTS: Range<usize> = 5..11;
const MASK_ATTEMPTS: usize = 50;

/// Result of [`mask_augment`].
#[derive(Clone, Debug)]
pub struct Augmented {
    pub spec: MelSpectrogram,
    pub targets: FrameTargets,
    pub areas: Vec<Range<usize>>,
}

/// Draws up to six non-overlapping areas of 0.5 to 2 s, cuts each into 5
/// to 10 contiguous parts and shuffles their order. Targets inside the
/// areas are excluded from the loss.
pub fn mask_augment<R: Rng + ?Sized>(spec: &MelSpectrogram, targets: &FrameTargets, rng: &mut R) -> Augmented {
    let frames = spec.frames.min(targets.frames());
    let n_areas = rng.random_range(MASK_AREAS);
    let mut areas: Vec<Range<usize>> = Vec::new();
    for _ in 0..n_areas {
        for _ in 0..MASK_ATTEMPTS {
            let len = rng.random_range(MASK_AREA_FRAMES).min(frames);
            if len < MASK_PARTS.start {
                break;
            }
            let start = rng.random_range(0..=frames - len);
            let area = start..start + len;
            if areas.iter().all(|a| a.end <= area.start || area.end <= a.start) {
                areas.push(area);
                break;
            }
        }
    }
    areas.sort_by_key(|a| a.start);

    let mut out = spec.clone();
    let mut out_targets = targets.clone();
    let bins = spec.bins;
    for area in &areas {
        let len = area.len();
        let parts = rng.random_range(MASK_PARTS).min(len);
        let mut cuts: Vec<usize> = (1..len).collect();
        cuts.shuffle(rng);
        let mut cuts = cuts[..parts - 1].to_vec();
        cuts.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(len);
        let mut pieces: Vec<Range<usize>> = bounds.windows(2).map(|w| w[0]..w[1]).collect();
        pieces.shuffle(rng);
        let mut dst = area.start;
        for piece in pieces {
            for src in piece {
                let s = (area.start + src) * bins;
                out.values[dst * bins..(dst + 1) * bins].copy_from_slice(&spec.values[s..s + bins]);
                dst += 1;
            }
        }
        for f in area.clone() {
            out_targets.set_valid(f, 0, false);
            out_targets.set_valid(f, 1, false);
        }
    }
    Augmented {
        spec: out,
        targets: out_targets,
        areas,
    }
}

pub const EXCERPT_SECONDS: f64 = 30.0;
pub const EXCERPT_ALPHA: f64 = 0.65;

/// Number of excerpts drawn from a piece of `seconds` length:
/// `max(1, round(alpha * seconds / 30))`, rounding halves up.
pub fn excerpt_count(seconds: f64, alpha: f64, excerpt_seconds: f64) -> usize {
    if seconds <= excerpt_seconds {
        return 1;
    }
    ((alpha * seconds / excerpt_seconds + 0.5).floor() as usize).max(1)
}

/// Start times of the excerpts drawn from a piece of `seconds` length.
pub fn sample_excerpts<R: Rng + ?Sized>(seconds: f64, alpha: f64, excerpt_seconds: f64, rng: &mut R) -> Vec<f64> {
    if seconds <= excerpt_seconds {
        return vec![0.0];
    }
    (0..excerpt_count(seconds, alpha, excerpt_seconds))
        .map(|_| rng.random_range(0.0..=seconds - excerpt_seconds))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub piece_id: String,
    pub wav_path: PathBuf,
    pub beats_path: PathBuf,
    pub split: Split,
}

/// Reads a manifest CSV; relative paths are resolved against the
/// manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(file_error(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let mut e = row.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        e.wav_path = base.join(&e.wav_path);
        e.beats_path = base.join(&e.beats_path);
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(file_error(path))?;
    let mut w = csv::Writer::from_writer(file);
    if entries.is_empty() {
        w.write_record(["piece_id", "wav_path", "beats_path", "split"])?;
    }
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(file_error(path))?;
    Ok(())
}

/// A piece ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct Piece {
    pub id: String,
    pub spec: MelSpectrogram,
    pub annotation: BeatAnnotation,
    pub targets: FrameTargets,
}

impl Piece {
    pub fn from_audio(id: impl Into<String>, audio: &AudioBuffer, annotation: BeatAnnotation) -> Result<Self> {
        let spec = compute_mel_spectrogram(audio)?;
        let targets = encode_targets(&annotation, spec.frames, spec.frames);
        Ok(Self {
            id: id.into(),
            spec,
            annotation,
            targets,
        })
    }

    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let audio = AudioBuffer::read_wav(&entry.wav_path)?;
        let annotation = BeatAnnotation::read(&entry.beats_path)?;
        Self::from_audio(entry.piece_id.clone(), &audio, annotation)
    }

    pub fn seconds(&self) -> f64 {
        self.spec.frames as f64 / FRAME_RATE
    }
}
