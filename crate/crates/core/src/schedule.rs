//! Diffusion coefficient schedule.
//!
//! Holds the training-time β/α/ᾱ tables plus the (possibly sub-sampled)
//! inference timestep sequence shared by sampling and inversion.
//!
//! Inference procedures address latents by *noise level*: level 0 is the clean
//! latent (ᾱ = 1) and level `k ≥ 1` is the latent after the `k`-th inference
//! timestep, so a schedule with `S` inference steps has levels `0..=S`. Step
//! `k` (0-based, model timestep `timesteps[k]`) moves between levels `k` and
//! `k + 1`, in either direction.

use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};
use crate::latent::VideoLatent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// β evenly spaced between the endpoints, inclusive.
    #[default]
    Linear,
    /// √β evenly spaced, then squared.
    ScaledLinear,
}

/// Immutable schedule; cheap to share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    eta: f64,
    timesteps: Vec<usize>,
}

impl DiffusionSchedule {
    /// Builds a `train_steps`-step schedule whose inference ladder visits every
    /// training timestep.
    pub fn build(
        train_steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: BetaKind,
    ) -> Result<Self> {
        if train_steps == 0 {
            return Err(MevgError::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(MevgError::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = match kind {
            BetaKind::Linear => linspace(beta_start, beta_end, train_steps),
            BetaKind::ScaledLinear => linspace(beta_start.sqrt(), beta_end.sqrt(), train_steps)
                .into_iter()
                .map(|b| b * b)
                .collect(),
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0_f64, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            eta: 0.0,
            timesteps: (0..train_steps).collect(),
        })
    }

    /// Sub-samples the inference ladder to `steps` uniformly strided timesteps
    /// ending at the last training timestep.
    pub fn with_inference_steps(mut self, steps: usize) -> Result<Self> {
        let t = self.train_steps();
        if steps == 0 || steps > t {
            return Err(MevgError::InvalidSchedule(format!(
                "inference steps must lie in 1..={t}, got {steps}"
            )));
        }
        self.timesteps = (1..=steps).map(|k| k * t / steps - 1).collect();
        Ok(self)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(MevgError::InvalidSchedule(format!(
                "eta must lie in [0, 1], got {eta}"
            )));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Ascending inference timesteps (training indices).
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn num_inference_steps(&self) -> usize {
        self.timesteps.len()
    }

    /// Model timestep of inference step `step`.
    pub fn timestep(&self, step: usize) -> usize {
        self.timesteps[step]
    }

    pub fn alpha_bar_at_timestep(&self, timestep: usize) -> Result<f64> {
        self.alpha_bars
            .get(timestep)
            .copied()
            .ok_or(MevgError::TimestepOutOfRange {
                timestep,
                train_steps: self.train_steps(),
            })
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level > self.num_inference_steps() {
            return Err(MevgError::LevelOutOfRange {
                level,
                max: self.num_inference_steps(),
            });
        }
        Ok(())
    }

    /// ᾱ of a noise level; level 0 is clean.
    pub fn level_alpha_bar(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok(match level {
            0 => 1.0,
            l => self.alpha_bars[self.timesteps[l - 1]],
        })
    }

    /// σ for a sampling step from `level` down to `level - 1`.
    pub fn sigma(&self, level: usize) -> Result<f64> {
        if level == 0 {
            return Err(MevgError::LevelOutOfRange {
                level,
                max: self.num_inference_steps(),
            });
        }
        if self.eta == 0.0 {
            return Ok(0.0);
        }
        let ab = self.level_alpha_bar(level)?;
        let ab_prev = self.level_alpha_bar(level - 1)?;
        let var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
        Ok(self.eta * var.max(0.0).sqrt())
    }
}

/// Serializable recipe for a [`DiffusionSchedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: BetaKind,
    /// `None` keeps every training timestep.
    pub inference_steps: Option<usize>,
    pub eta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            kind: BetaKind::Linear,
            inference_steps: Some(50),
            eta: 0.0,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        let mut s =
            DiffusionSchedule::build(self.train_steps, self.beta_start, self.beta_end, self.kind)?;
        if let Some(steps) = self.inference_steps {
            s = s.with_inference_steps(steps)?;
        }
        s.with_eta(self.eta)
    }
}

/// Forward corruption `√ᾱ·x0 + √(1−ᾱ)·eps` at `level`.
pub fn forward_diffuse(
    x0: &VideoLatent,
    level: usize,
    eps: &VideoLatent,
    sched: &DiffusionSchedule,
) -> Result<VideoLatent> {
    let ab = sched.level_alpha_bar(level)?;
    x0.lin_comb(ab.sqrt() as f32, eps, (1.0 - ab).sqrt() as f32)
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                end
            } else {
                start + step * i as f64
            }
        })
        .collect()
}
