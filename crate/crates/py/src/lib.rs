use std::path::PathBuf;

use beatrack_core::data::{synthesize_click_track as synth, BeatAnnotation, ClickTrackSpec, MeterSequence, TempoCurve};
use beatrack_core::dsp::{compute_mel_spectrogram, AudioBuffer};
use beatrack_core::metrics::Scores;
use beatrack_core::model::{Model, ModelConfig};
use beatrack_core::postprocess;
use beatrack_core::predict;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: beatrack_core::Error) -> PyErr {
    use beatrack_core::Error::*;
    match e {
        File { .. } | Io(_) => PyIOError::new_err(e.to_string()),
        InvalidInput(_) | Config(_) | Audio(_) | Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn audio(samples: Vec<f32>, sample_rate: u32) -> PyResult<AudioBuffer> {
    if sample_rate != beatrack_core::dsp::SAMPLE_RATE {
        return Err(PyValueError::new_err(format!(
            "expected {} Hz audio, got {sample_rate} Hz",
            beatrack_core::dsp::SAMPLE_RATE
        )));
    }
    AudioBuffer::new(samples, sample_rate).map_err(to_py)
}

/// Log-compressed mel spectrogram as a list of 128-value frames.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 22050))]
fn mel_spectrogram(samples: Vec<f32>, sample_rate: u32) -> PyResult<Vec<Vec<f32>>> {
    let spec = compute_mel_spectrogram(&audio(samples, sample_rate)?).map_err(to_py)?;
    Ok(spec.values.chunks(spec.bins).map(<[f32]>::to_vec).collect())
}

/// Frame indices of peaks above 0.5 that dominate their ±3 frame
/// neighbourhood; plateaus give their centre.
#[pyfunction]
fn peak_pick(probs: Vec<f64>) -> Vec<f64> {
    postprocess::peak_pick(&probs)
}

/// F1, CMLt and AMLt of an estimate against a reference, both in seconds.
#[pyfunction]
fn evaluate(reference: Vec<f64>, estimate: Vec<f64>) -> (f64, f64, f64) {
    let s = Scores::compute(&reference, &estimate);
    (s.f1, s.cmlt, s.amlt)
}

/// A click track at constant tempo. Returns the samples and the
/// `(time, position)` annotation.
#[pyfunction]
#[pyo3(signature = (duration, bpm, beats_per_bar = 4, seed = 0, noise = 0.0))]
fn synthesize_click_track(
    duration: f64,
    bpm: f64,
    beats_per_bar: u32,
    seed: u64,
    noise: f64,
) -> PyResult<(Vec<f32>, Vec<(f64, u32)>)> {
    let mut spec = ClickTrackSpec::new(
        duration,
        TempoCurve::constant(bpm).map_err(to_py)?,
        MeterSequence::constant(beats_per_bar).map_err(to_py)?,
    );
    spec.noise = noise;
    let (audio, ann) = synth(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
    Ok((audio.samples, ann.events().to_vec()))
}

/// Reads a `.beats` annotation file as `(time, position)` pairs.
#[pyfunction]
fn read_annotation(path: PathBuf) -> PyResult<Vec<(f64, u32)>> {
    Ok(BeatAnnotation::read(path).map_err(to_py)?.events().to_vec())
}

/// Beat and downbeat tracker around a trained checkpoint.
#[pyclass(module = "beatrack")]
struct BeatTracker {
    inner: predict::BeatTracker,
}

#[pymethods]
impl BeatTracker {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: predict::BeatTracker::load(path).map_err(to_py)?,
        })
    }

    /// An untrained model with the named preset (`"full"` or `"small"`).
    #[staticmethod]
    #[pyo3(signature = (preset = "small", seed = 0))]
    fn untrained(preset: &str, seed: u64) -> PyResult<Self> {
        let config = match preset {
            "full" => ModelConfig::full(),
            "small" => ModelConfig::small(),
            other => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
        };
        let model = Model::new(config, seed).map_err(to_py)?;
        Ok(Self {
            inner: predict::BeatTracker::new(model, beatrack_core::data::EXCERPT_SECONDS),
        })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.model().num_parameters()
    }

    /// Beat and downbeat times in seconds.
    #[pyo3(signature = (samples, sample_rate = 22050))]
    fn predict(&self, py: Python<'_>, samples: Vec<f32>, sample_rate: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let buffer = audio(samples, sample_rate)?;
        let preds = py
            .detach(|| self.inner.predict_audio(&buffer))
            .map_err(to_py)?;
        Ok((preds.beats, preds.downbeats))
    }

    fn predict_file(&self, py: Python<'_>, path: PathBuf) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let buffer = AudioBuffer::read_wav(path).map_err(to_py)?;
        let preds = py
            .detach(|| self.inner.predict_audio(&buffer))
            .map_err(to_py)?;
        Ok((preds.beats, preds.downbeats))
    }

    /// Frame-wise beat and downbeat probabilities, concatenated over
    /// excerpts.
    #[pyo3(signature = (samples, sample_rate = 22050))]
    fn activations(&self, samples: Vec<f32>, sample_rate: u32) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let spec = compute_mel_spectrogram(&audio(samples, sample_rate)?).map_err(to_py)?;
        let mut beat = Vec::new();
        let mut downbeat = Vec::new();
        for a in self.inner.activations(&spec).map_err(to_py)? {
            beat.extend(a.beat);
            downbeat.extend(a.downbeat);
        }
        Ok((beat, downbeat))
    }
}

#[pymodule]
#[pyo3(name = "beatrack")]
fn beatrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(peak_pick, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_click_track, m)?)?;
    m.add_function(wrap_pyfunction!(read_annotation, m)?)?;
    m.add_class::<BeatTracker>()?;
    Ok(())
}
