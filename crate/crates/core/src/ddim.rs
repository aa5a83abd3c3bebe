//! Deterministic DDIM kernel: denoised observation, sampling step and
//! inversion step, plus plain (unguided) full passes built from them.

use rand::Rng;

use crate::error::{MevgError, Result};
use crate::latent::VideoLatent;
use crate::predictor::{Condition, NoisePredictor};
use crate::schedule::DiffusionSchedule;

/// x̂ at a noise level: the clean latent implied by `(x_t, ε̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoisedObservation {
    pub value: VideoLatent,
    pub level: usize,
}

/// x̂ = (x_t − √(1−ᾱ)·ε̂) / √ᾱ
pub fn denoised_observation(
    x_t: &VideoLatent,
    eps_hat: &VideoLatent,
    level: usize,
    sched: &DiffusionSchedule,
) -> Result<DenoisedObservation> {
    x_t.ensure_same_dims(eps_hat)?;
    let ab = sched.level_alpha_bar(level)?;
    let inv_root = (1.0 / ab.sqrt()) as f32;
    let noise_coef = (1.0 - ab).sqrt() as f32;
    let mut value = x_t.clone();
    for (v, &e) in value.as_mut_slice().iter_mut().zip(eps_hat.as_slice()) {
        *v = (*v - noise_coef * e) * inv_root;
    }
    Ok(DenoisedObservation { value, level })
}

/// Recomposes `x_{l−1} = √ᾱ_{l−1}·x̂ + √(1−ᾱ_{l−1}−σ²)·ε̂ − σ·n` from an
/// observation at level `l`. `noise` is required exactly when σ > 0.
pub fn ddim_step_from_denoised(
    x_hat: &DenoisedObservation,
    eps_hat: &VideoLatent,
    sched: &DiffusionSchedule,
    noise: Option<&VideoLatent>,
) -> Result<VideoLatent> {
    let level = x_hat.level;
    if level == 0 {
        return Err(MevgError::LevelOutOfRange {
            level,
            max: sched.num_inference_steps(),
        });
    }
    x_hat.value.ensure_same_dims(eps_hat)?;
    let ab_prev = sched.level_alpha_bar(level - 1)?;
    let sigma = sched.sigma(level)?;
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt() as f32;
    let mut out = x_hat.value.lin_comb(ab_prev.sqrt() as f32, eps_hat, dir)?;
    if sigma > 0.0 {
        let n = noise.ok_or(MevgError::MissingNoise { sigma })?;
        out.ensure_same_dims(n)?;
        let s = sigma as f32;
        for (v, &z) in out.as_mut_slice().iter_mut().zip(n.as_slice()) {
            *v -= s * z;
        }
    }
    Ok(out)
}

/// One sampling step from `level` to `level − 1`.
pub fn ddim_sample_step(
    x_t: &VideoLatent,
    eps_hat: &VideoLatent,
    level: usize,
    sched: &DiffusionSchedule,
    noise: Option<&VideoLatent>,
) -> Result<VideoLatent> {
    if level == 0 {
        return Err(MevgError::LevelOutOfRange {
            level,
            max: sched.num_inference_steps(),
        });
    }
    let x_hat = denoised_observation(x_t, eps_hat, level, sched)?;
    ddim_step_from_denoised(&x_hat, eps_hat, sched, noise)
}

/// One inversion step: `x_{l+1} = √ᾱ_{l+1}·x̂_l + √(1−ᾱ_{l+1})·ε̂`.
pub fn ddim_invert_step(
    x_hat: &DenoisedObservation,
    eps_hat: &VideoLatent,
    sched: &DiffusionSchedule,
) -> Result<VideoLatent> {
    let next = x_hat.level + 1;
    if next > sched.num_inference_steps() {
        return Err(MevgError::LevelOutOfRange {
            level: next,
            max: sched.num_inference_steps(),
        });
    }
    let ab_next = sched.level_alpha_bar(next)?;
    x_hat.value.lin_comb(
        ab_next.sqrt() as f32,
        eps_hat,
        (1.0 - ab_next).sqrt() as f32,
    )
}

/// Unguided sampling from the top level down to the clean level. `rng` is
/// only drawn from when the schedule has η > 0.
pub fn ddim_sample<P, R>(
    x_top: &VideoLatent,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<VideoLatent>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let mut x = x_top.clone();
    for step in (0..sched.num_inference_steps()).rev() {
        let level = step + 1;
        let eps = predictor.predict(&x, sched.timestep(step), cond)?;
        let noise =
            (sched.sigma(level)? > 0.0).then(|| VideoLatent::standard_normal(x.dims(), rng));
        x = ddim_sample_step(&x, &eps, level, sched, noise.as_ref())?;
    }
    Ok(x)
}

/// Unguided inversion from the clean level to the top level.
pub fn ddim_invert<P>(
    x0: &VideoLatent,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
) -> Result<VideoLatent>
where
    P: NoisePredictor + ?Sized,
{
    let mut x = x0.clone();
    for step in 0..sched.num_inference_steps() {
        let eps = predictor.predict(&x, sched.timestep(step), cond)?;
        let x_hat = denoised_observation(&x, &eps, step, sched)?;
        x = ddim_invert_step(&x_hat, &eps, sched)?;
    }
    Ok(x)
}
