//! Noise-prediction contract and in-process implementations.
//!
//! [`AnalyticGaussianPredictor`] is the exact minimum-mean-square-error noise
//! estimate when every clean frame is drawn from `N(μ_cond, s²·I)`. It gives
//! every downstream procedure a closed-form oracle without a trained network.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};
use crate::latent::{FrameLatent, LatentDims, VideoLatent};
use crate::schedule::DiffusionSchedule;

/// Conditioning token for one clip. Equal ids must carry equal payloads.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    id: String,
    payload: Vec<u8>,
}

impl Condition {
    pub fn new(id: impl Into<String>, payload: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            payload,
        }
    }

    /// Text condition: the prompt is both the id and the payload.
    pub fn from_prompt(prompt: &str) -> Self {
        Self {
            id: prompt.to_owned(),
            payload: prompt.as_bytes().to_vec(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Payload as UTF-8 text, if it is.
    pub fn prompt(&self) -> Option<&str> {
        std::str::from_utf8(&self.payload).ok()
    }
}

/// ε_θ(x_t, t, cond). Output has the shape of `x_t` and is deterministic in
/// its inputs.
pub trait NoisePredictor {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        (**self).predict(x_t, timestep, cond)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        (**self).predict(x_t, timestep, cond)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Arc<P> {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        (**self).predict(x_t, timestep, cond)
    }
}

/// Always predicts zero noise.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

pub fn predict_zero(x_t: &VideoLatent) -> VideoLatent {
    VideoLatent::zeros(x_t.dims())
}

impl NoisePredictor for ZeroPredictor {
    fn predict(
        &self,
        x_t: &VideoLatent,
        _timestep: usize,
        _cond: &Condition,
    ) -> Result<VideoLatent> {
        Ok(predict_zero(x_t))
    }
}

/// Optimal denoiser for clean frames `x0 ~ N(μ_cond, s²·I)`, applied frame by
/// frame with one mean per condition.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianPredictor {
    alpha_bars: Vec<f64>,
    means: HashMap<String, FrameLatent>,
    prior_var: f64,
}

impl AnalyticGaussianPredictor {
    pub fn new(sched: &DiffusionSchedule) -> Self {
        Self {
            alpha_bars: sched.alpha_bars().to_vec(),
            means: HashMap::new(),
            prior_var: 1.0,
        }
    }

    pub fn with_prior_var(mut self, prior_var: f64) -> Result<Self> {
        if !(prior_var.is_finite() && prior_var > 0.0) {
            return Err(MevgError::InvalidConfig(format!(
                "prior variance must be positive and finite, got {prior_var}"
            )));
        }
        self.prior_var = prior_var;
        Ok(self)
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Registers the clean-frame mean for a condition id.
    pub fn register(&mut self, id: impl Into<String>, mean: FrameLatent) {
        self.means.insert(id.into(), mean);
    }

    pub fn with_mean(mut self, id: impl Into<String>, mean: FrameLatent) -> Self {
        self.register(id, mean);
        self
    }

    pub fn mean(&self, id: &str) -> Option<&FrameLatent> {
        self.means.get(id)
    }

    /// Scalar gain `g` with ε̂ = g·(x_t − √ᾱ·μ).
    ///
    /// From E[x0|x_t] = μ + (√ᾱ s² / (ᾱ s² + 1 − ᾱ))·(x_t − √ᾱ μ) and
    /// ε̂ = (x_t − √ᾱ·E[x0|x_t]) / √(1 − ᾱ).
    pub fn noise_gain(&self, alpha_bar: f64) -> f64 {
        (1.0 - alpha_bar).sqrt() / (alpha_bar * self.prior_var + 1.0 - alpha_bar)
    }

    /// Posterior-mean noise estimate for `x_t` at training timestep `timestep`.
    pub fn predict_analytic(
        &self,
        x_t: &VideoLatent,
        timestep: usize,
        cond: &Condition,
    ) -> Result<VideoLatent> {
        let alpha_bar = *self
            .alpha_bars
            .get(timestep)
            .ok_or(MevgError::TimestepOutOfRange {
                timestep,
                train_steps: self.alpha_bars.len(),
            })?;
        let mean = self
            .means
            .get(cond.id())
            .ok_or_else(|| MevgError::UnknownCondition(cond.id().to_owned()))?;
        if mean.shape() != x_t.frame_shape() {
            return Err(MevgError::ShapeMismatch {
                expected: LatentDims {
                    frames: x_t.num_frames(),
                    frame: mean.shape(),
                },
                actual: x_t.dims(),
            });
        }
        let gain = self.noise_gain(alpha_bar) as f32;
        let root_ab = alpha_bar.sqrt() as f32;
        let mut out = x_t.clone();
        for frame in out.frames_mut() {
            for (v, &mu) in frame.iter_mut().zip(mean.as_slice()) {
                *v = gain * (*v - root_ab * mu);
            }
        }
        Ok(out)
    }
}

impl NoisePredictor for AnalyticGaussianPredictor {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        self.predict_analytic(x_t, timestep, cond)
    }
}

/// Wraps a predictor and records every call as `(timestep, condition id)`.
#[derive(Debug)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: AtomicUsize,
    log: Mutex<Vec<(usize, String)>>,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn log(&self) -> Vec<(usize, String)> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.log.lock().expect("call log poisoned").clear();
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: NoisePredictor> NoisePredictor for CountingPredictor<P> {
    fn predict(&self, x_t: &VideoLatent, timestep: usize, cond: &Condition) -> Result<VideoLatent> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("call log poisoned")
            .push((timestep, cond.id().to_owned()));
        self.inner.predict(x_t, timestep, cond)
    }
}
