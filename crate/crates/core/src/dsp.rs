//! Log-compressed mel spectrograms at 50 frames per second.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{file_error, invalid, Error, Result};
use crate::wav;

pub const SAMPLE_RATE: u32 = 22_050;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 441;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 128;
pub const F_MIN: f64 = 30.0;
pub const F_MAX: f64 = 10_000.0;
pub const FRAME_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;

/// Mono PCM samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a mono 16-bit integer or 32-bit float WAV file at 22050 Hz.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(file_error(path))?;
        let wav = wav::decode(&bytes).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        if wav.channels != 1 {
            return Err(Error::Audio(format!(
                "{}: expected mono, found {} channels",
                path.display(),
                wav.channels
            )));
        }
        if wav.sample_rate != SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "{}: expected {SAMPLE_RATE} Hz, found {} Hz (resample first)",
                path.display(),
                wav.sample_rate
            )));
        }
        Self::new(wav.samples, wav.sample_rate)
    }

    /// Writes 16-bit mono PCM, clipping to [-1, 1].
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, wav::encode_pcm16(&self.samples, self.sample_rate)).map_err(file_error(path))
    }
}

/// Row-major `frames x bins` matrix of spectrogram values.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            values: vec![0.0; frames * bins],
        }
    }

    pub fn at(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * self.bins + bin]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    /// Frames `start..start + len`, zero-padded past the end.
    pub fn window(&self, start: usize, len: usize) -> Spectrogram {
        let mut out = Spectrogram::zeros(len, self.bins);
        let end = (start + len).min(self.frames);
        if start < end {
            let n = (end - start) * self.bins;
            out.values[..n].copy_from_slice(&self.values[start * self.bins..end * self.bins]);
        }
        out
    }
}

/// Log-compressed mel spectrogram, `frames x 128`.
pub type MelSpectrogram = Spectrogram;

/// Number of frames for `n` samples: one per hop, frame `t` centered on
/// sample `t * HOP`.
pub fn num_frames(n: usize) -> usize {
    n.div_ceil(HOP)
}

/// Time in seconds of the center of frame `t`.
pub fn frame_time(t: f64) -> f64 {
    t / FRAME_RATE
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `n` extended by mirror reflection about
/// its first and last samples.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Short-time Fourier magnitudes (`T x 513`) with a 1024-sample Hann window
/// and hop 441 over the reflection-padded signal.
pub fn stft_magnitude(audio: &AudioBuffer) -> Result<Spectrogram> {
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "expected {SAMPLE_RATE} Hz, found {} Hz",
            audio.sample_rate
        )));
    }
    let x = &audio.samples;
    if x.is_empty() {
        return Err(invalid("cannot compute a spectrogram of empty audio"));
    }
    let frames = num_frames(x.len());
    let window = hann_window(N_FFT);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Spectrogram::zeros(frames, N_BINS);
    let half = (N_FFT / 2) as isize;
    for t in 0..frames {
        let start = (t * HOP) as isize - half;
        for (j, c) in buf.iter_mut().enumerate() {
            let s = x[reflect(start + j as isize, x.len())] as f64;
            *c = Complex::new(s * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, dst) in out.values[t * N_BINS..(t + 1) * N_BINS].iter_mut().enumerate() {
            *dst = buf[k].norm() as f32;
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the HTK mel scale, returned as a
/// row-major `(n_fft / 2 + 1) x n_mels` matrix with peak value 1.
pub fn mel_filterbank(n_mels: usize, f_min: f64, f_max: f64, n_fft: usize, sample_rate: u32) -> Result<Vec<f32>> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || n_fft < 2 || !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::Config(format!(
            "infeasible mel filterbank: {n_mels} bands, {f_min}..{f_max} Hz, n_fft {n_fft}, {sample_rate} Hz"
        )));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0f32; bins * n_mels];
    for k in 0..bins {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[k * n_mels + m] = w as f32;
        }
    }
    Ok(fb)
}

/// `ln(1 + 1000 x)`.
pub fn log_compress(x: f32) -> Result<f32> {
    if x < 0.0 || x.is_nan() {
        return Err(invalid(format!("log compression needs nonnegative input, got {x}")));
    }
    Ok((1000.0 * x).ln_1p())
}

/// The full frontend: STFT magnitudes, mel projection, log compression.
pub fn compute_mel_spectrogram(audio: &AudioBuffer) -> Result<MelSpectrogram> {
    let stft = stft_magnitude(audio)?;
    let fb = mel_filterbank(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE)?;
    let mut out = Spectrogram::zeros(stft.frames, N_MELS);
    for t in 0..stft.frames {
        let dst = &mut out.values[t * N_MELS..(t + 1) * N_MELS];
        for (k, &mag) in stft.frame(t).iter().enumerate() {
            if mag == 0.0 {
                continue;
            }
            for (d, &w) in dst.iter_mut().zip(&fb[k * N_MELS..(k + 1) * N_MELS]) {
                *d += mag * w;
            }
        }
        for d in dst.iter_mut() {
            *d = log_compress(*d)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, amp: f32) -> AudioBuffer {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin() as f32)
            .collect();
        AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn thirty_seconds_is_1500_frames() {
        let audio = AudioBuffer::new(vec![0.0; 30 * SAMPLE_RATE as usize], SAMPLE_RATE).unwrap();
        let mel = compute_mel_spectrogram(&audio).unwrap();
        assert_eq!((mel.frames, mel.bins), (1500, 128));
        assert!(mel.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let stft = stft_magnitude(&sine(440.0, 1.0, 0.5)).unwrap();
        let expected = (440.0 * N_FFT as f64 / SAMPLE_RATE as f64).round() as usize;
        for t in 2..stft.frames - 2 {
            let row = stft.frame(t);
            let argmax = (0..N_BINS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn empty_and_wrong_rate_rejected() {
        assert!(stft_magnitude(&AudioBuffer::new(vec![], SAMPLE_RATE).unwrap()).is_err());
        assert!(stft_magnitude(&AudioBuffer::new(vec![0.0; 100], 44_100).unwrap()).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let fb = mel_filterbank(N_MELS, F_MIN, F_MAX, N_FFT, SAMPLE_RATE).unwrap();
        assert_eq!(fb.len(), N_BINS * N_MELS);
        assert!(fb.iter().all(|&w| w >= 0.0));
        let mut last_peak = 0;
        for m in 0..N_MELS {
            let col: Vec<f32> = (0..N_BINS).map(|k| fb[k * N_MELS + m]).collect();
            assert!(col.iter().any(|&w| w > 0.0), "filter {m} is empty");
            let peak = (0..N_BINS).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert!(peak >= last_peak);
            last_peak = peak;
        }
        // bins 0 (0 Hz) and 1 (21.5 Hz) lie below 30 Hz
        for k in 0..2 {
            assert!(fb[k * N_MELS..(k + 1) * N_MELS].iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(mel_filterbank(128, 100.0, 50.0, 1024, 22050).is_err());
        assert!(mel_filterbank(128, 30.0, 12_000.0, 1024, 22050).is_err());
        assert!(mel_filterbank(0, 30.0, 10_000.0, 1024, 22050).is_err());
    }

    #[test]
    fn log_compression_values() {
        assert_eq!(log_compress(0.0).unwrap(), 0.0);
        assert!((log_compress(0.001).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(log_compress(0.5).unwrap() < log_compress(0.5001).unwrap());
        assert!(log_compress(-1e-3).is_err());
    }

    #[test]
    fn mel_scale_roundtrip() {
        for f in [0.0, 30.0, 440.0, 10_000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn reflection_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn louder_audio_never_lowers_output() {
        let quiet = compute_mel_spectrogram(&sine(1000.0, 0.5, 0.2)).unwrap();
        let loud = compute_mel_spectrogram(&sine(1000.0, 0.5, 0.4)).unwrap();
        assert!(quiet.values.iter().zip(&loud.values).all(|(q, l)| l >= q));
    }
}
