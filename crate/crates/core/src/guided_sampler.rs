//! Structure-guided sampling.
//!
//! At every denoising step the clip's denoised observation is swept once,
//! frame by frame: frame 0 is pulled toward the previous clip's trace (when
//! there is one) and every later frame toward its already-updated
//! predecessor. The next latent is recomposed from the guided x̂ and the
//! original predicted noise.

use rand::Rng;

use crate::config::{GuidanceConfig, SgsMode};
use crate::ddim::{ddim_step_from_denoised, denoised_observation, DenoisedObservation};
use crate::error::{MevgError, Result};
use crate::latent::{l2_distance, FrameLatent, VideoLatent};
use crate::observer::{GuidanceReport, NoopObserver, Phase, StepEvent, StepObserver, TermLoss};
use crate::predictor::{Condition, NoisePredictor};
use crate::schedule::DiffusionSchedule;
use crate::trace::DenoisedTrace;

/// A sampled clip and the last-frame trace recorded while sampling it.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingResult {
    pub clip: VideoLatent,
    pub trace: DenoisedTrace,
}

/// One structure-guidance sweep over x̂, in place.
///
/// Each report term is measured right around its own update, so for the
/// causal sweep every term shrinks by exactly `(1 − c)²` with `c` the step
/// coefficient.
pub fn sgs_guidance(
    x_hat: &mut DenoisedObservation,
    anchor: Option<&FrameLatent>,
    cfg: &GuidanceConfig,
) -> Result<GuidanceReport> {
    let shape = x_hat.value.frame_shape();
    let m = shape.len();
    let c = cfg.sgs_coefficient(m) as f32;
    let reduce = |a: &[f32], b: &[f32]| cfg.reduction.apply(l2_distance(a, b).powi(2), m);
    let mut report = GuidanceReport::default();

    if let Some(anchor) = anchor {
        if anchor.shape() != shape {
            return Err(MevgError::InvalidLatent(format!(
                "anchor shape {:?} does not match frame shape {:?}",
                anchor.shape(),
                shape
            )));
        }
        let a = anchor.as_slice();
        let frame = x_hat.value.frame_mut(0);
        let before = reduce(frame, a);
        for (v, &t) in frame.iter_mut().zip(a) {
            *v -= c * (*v - t);
        }
        report.terms.push(TermLoss {
            frame: 0,
            before,
            after: reduce(frame, a),
        });
    }

    for n in 1..x_hat.value.num_frames() {
        let (prev, cur) = x_hat.value.frame_pair_mut(n);
        let before = reduce(cur, prev);
        match cfg.sgs_mode {
            SgsMode::Causal => {
                for (v, &p) in cur.iter_mut().zip(prev.iter()) {
                    *v -= c * (*v - p);
                }
            }
            SgsMode::Symmetric => {
                for (v, p) in cur.iter_mut().zip(prev.iter_mut()) {
                    let r = *v - *p;
                    *v -= c * r;
                    *p += c * r;
                }
            }
        }
        report.terms.push(TermLoss {
            frame: n,
            before,
            after: reduce(cur, prev),
        });
    }
    Ok(report)
}

/// Samples a clip from `x_top`, recording the guided x̂'s last frame at
/// every step. With `anchor_trace`, frame 0 is pulled toward its entry for
/// the current timestep. `rng` is only drawn from when η > 0.
pub fn sample_clip<P, R>(
    x_top: &VideoLatent,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
    anchor_trace: Option<&DenoisedTrace>,
    rng: &mut R,
) -> Result<SamplingResult>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    sample_clip_observed(
        x_top,
        predictor,
        cond,
        sched,
        cfg,
        anchor_trace,
        rng,
        &mut NoopObserver,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn sample_clip_observed<P, R>(
    x_top: &VideoLatent,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
    anchor_trace: Option<&DenoisedTrace>,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<SamplingResult>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate(x_top.num_frames())?;
    if !x_top.is_finite() {
        return Err(MevgError::InvalidLatent(
            "initial latent has non-finite values".into(),
        ));
    }
    if let Some(t) = anchor_trace {
        t.ensure_covers(sched)?;
    }

    let mut trace = DenoisedTrace::new(x_top.frame_shape());
    let mut x = x_top.clone();
    for step in (0..sched.num_inference_steps()).rev() {
        let level = step + 1;
        let timestep = sched.timestep(step);
        let eps = predictor.predict(&x, timestep, cond)?;
        let mut x_hat = denoised_observation(&x, &eps, level, sched)?;
        let anchor = anchor_trace.map(|t| t.get(timestep)).transpose()?;
        let report = sgs_guidance(&mut x_hat, anchor, cfg)?;
        trace.insert(timestep, x_hat.value.last_frame())?;

        observer.on_step(&StepEvent {
            phase: Phase::Sampling,
            step,
            timestep,
            guidance: &report,
            anchor,
            inter_frame_distance: x_hat.value.mean_inter_frame_distance(),
        });

        let noise =
            (sched.sigma(level)? > 0.0).then(|| VideoLatent::standard_normal(x.dims(), rng));
        x = ddim_step_from_denoised(&x_hat, &eps, sched, noise.as_ref())?;
    }
    if !x.is_finite() {
        return Err(MevgError::InvalidLatent(
            "sampling produced non-finite values".into(),
        ));
    }
    Ok(SamplingResult { clip: x, trace })
}
