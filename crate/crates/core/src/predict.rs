//! Inference on whole pieces: non-overlapping excerpts, one forward pass
//! each, then peak picking and downbeat snapping.

use std::path::Path;

use beatrack_tensor::{Checkpoint, Tensor};

use crate::data::EXCERPT_SECONDS;
use crate::dsp::{compute_mel_spectrogram, AudioBuffer, MelSpectrogram, FRAME_RATE};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::postprocess::{decode, BeatPredictions};

/// Frame-wise beat and downbeat probabilities of one excerpt.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub start_seconds: f64,
    pub beat: Vec<f64>,
    pub downbeat: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BeatTracker {
    model: Model<f32>,
    excerpt_seconds: f64,
}

impl BeatTracker {
    pub fn new(model: Model<f32>, excerpt_seconds: f64) -> Self {
        Self { model, excerpt_seconds }
    }

    /// Loads a checkpoint written by the trainer or by [`Model::to_checkpoint`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::<f32>::load(path.as_ref())?;
        let model = Model::from_checkpoint(&ck)?;
        let excerpt_seconds = ck
            .meta
            .get("excerpt_seconds")
            .and_then(|v| v.as_f64())
            .unwrap_or(EXCERPT_SECONDS);
        Ok(Self::new(model, excerpt_seconds))
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn excerpt_seconds(&self) -> f64 {
        self.excerpt_seconds
    }

    fn excerpt_frames(&self) -> usize {
        ((self.excerpt_seconds * FRAME_RATE).round() as usize).max(1)
    }

    pub fn activations(&self, spec: &MelSpectrogram) -> Result<Vec<Activations>> {
        if spec.bins != self.model.config().n_mels {
            return Err(invalid(format!(
                "spectrogram has {} bands, the model expects {}",
                spec.bins,
                self.model.config().n_mels
            )));
        }
        let len = self.excerpt_frames();
        let mut out = Vec::new();
        for start in (0..spec.frames).step_by(len) {
            let n = len.min(spec.frames - start);
            let x = spec.window(start, n);
            let logits = self.model.infer(Tensor::new([1, n, spec.bins], x.values)?)?;
            let z = logits.data();
            let sigmoid = |v: f32| 1.0 / (1.0 + (-(v as f64)).exp());
            out.push(Activations {
                start_seconds: start as f64 / FRAME_RATE,
                beat: (0..n).map(|t| sigmoid(z[2 * t])).collect(),
                downbeat: (0..n).map(|t| sigmoid(z[2 * t + 1])).collect(),
            });
        }
        Ok(out)
    }

    pub fn predict_spectrogram(&self, spec: &MelSpectrogram) -> Result<BeatPredictions> {
        let excerpts: Vec<(f64, Vec<f64>, Vec<f64>)> = self
            .activations(spec)?
            .into_iter()
            .map(|a| (a.start_seconds, a.beat, a.downbeat))
            .collect();
        decode(&excerpts, self.excerpt_frames() as f64 / FRAME_RATE)
    }

    pub fn predict_audio(&self, audio: &AudioBuffer) -> Result<BeatPredictions> {
        self.predict_spectrogram(&compute_mel_spectrogram(audio)?)
    }
}
