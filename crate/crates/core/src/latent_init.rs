//! Last-frame-aware latent initialization.
//!
//! The previous clip's last frame is repeated over the new clip, then
//! inverted toward pure noise under the next prompt. Along the way the
//! predicted noise is mixed with fresh per-frame noise (more for later
//! frames) and the leading frames' denoised observation is pulled toward the
//! previous clip's recorded trace.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{GuidanceConfig, KappaIndexing, NoiseReuse};
use crate::ddim::{ddim_invert_step, denoised_observation, DenoisedObservation};
use crate::error::{MevgError, Result};
use crate::latent::{l2_distance, FrameLatent, VideoLatent};
use crate::observer::{GuidanceReport, NoopObserver, Phase, StepEvent, StepObserver, TermLoss};
use crate::predictor::{Condition, NoisePredictor};
use crate::schedule::DiffusionSchedule;
use crate::trace::DenoisedTrace;

/// Per-frame weights κ_n of the predicted noise under dynamic noise.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaSchedule {
    values: Vec<f64>,
}

impl KappaSchedule {
    /// κ_n = exp(−n) for n = 0..frames.
    pub fn new(frames: usize) -> Result<Self> {
        Self::with_indexing(frames, KappaIndexing::Raw)
    }

    pub fn with_indexing(frames: usize, indexing: KappaIndexing) -> Result<Self> {
        if frames == 0 {
            return Err(MevgError::InvalidConfig(
                "kappa schedule needs at least one frame".into(),
            ));
        }
        let values = (0..frames)
            .map(|n| match indexing {
                KappaIndexing::Raw => (-(n as f64)).exp(),
                KappaIndexing::Normalized => (-(n as f64) / frames as f64).exp(),
            })
            .collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(κ/√(1+κ²), 1/√(1+κ²))`: scale on predicted noise and std of the
    /// fresh noise for frame `n`. The squares sum to one.
    pub fn mixing(&self, n: usize) -> (f64, f64) {
        let k = self.values[n];
        let norm = (1.0 + k * k).sqrt();
        (k / norm, 1.0 / norm)
    }
}

/// `frames` copies of the last frame of `prev_clip`.
pub fn repeat_last_frame(prev_clip: &VideoLatent, frames: usize) -> Result<VideoLatent> {
    if prev_clip.num_frames() == 0 || frames == 0 {
        return Err(MevgError::InvalidLatent(
            "cannot repeat the last frame of an empty clip".into(),
        ));
    }
    Ok(VideoLatent::repeat_frame(
        prev_clip.last_frame(),
        prev_clip.frame_shape(),
        frames,
    ))
}

/// Mixes each frame's predicted noise with fresh Gaussian noise. Draws are
/// frame-major, one per element.
pub fn apply_dynamic_noise<R: Rng + ?Sized>(
    eps_hat: &VideoLatent,
    kappa: &KappaSchedule,
    rng: &mut R,
) -> Result<VideoLatent> {
    if kappa.len() != eps_hat.num_frames() {
        return Err(MevgError::InvalidConfig(format!(
            "kappa schedule has {} entries for a {}-frame clip",
            kappa.len(),
            eps_hat.num_frames()
        )));
    }
    let mut out = eps_hat.clone();
    for (n, frame) in out.frames_mut().enumerate() {
        let (scale, std) = kappa.mixing(n);
        let (scale, std) = (scale as f32, std as f32);
        for v in frame {
            let z: f32 = rng.sample(StandardNormal);
            *v = scale * *v + std * z;
        }
    }
    Ok(out)
}

/// Pulls the leading `cfg.affected_frames_lfai` frames of x̂ toward `anchor`
/// with one gradient step of size δ_LFAI. Each frame contributes its own
/// reduced squared distance to the loss.
pub fn lfai_guidance(
    x_hat: &mut DenoisedObservation,
    anchor: &FrameLatent,
    cfg: &GuidanceConfig,
) -> Result<GuidanceReport> {
    let shape = x_hat.value.frame_shape();
    if anchor.shape() != shape {
        return Err(MevgError::InvalidLatent(format!(
            "anchor shape {:?} does not match frame shape {:?}",
            anchor.shape(),
            shape
        )));
    }
    let frames = cfg.affected_frames_lfai.min(x_hat.value.num_frames());
    let m = shape.len();
    let c = cfg.lfai_coefficient(m) as f32;
    let a = anchor.as_slice();
    let mut report = GuidanceReport::default();
    for n in 0..frames {
        let frame = x_hat.value.frame_mut(n);
        let before = cfg.reduction.apply(l2_distance(frame, a).powi(2), m);
        for (v, &t) in frame.iter_mut().zip(a) {
            *v -= c * (*v - t);
        }
        let after = cfg.reduction.apply(l2_distance(frame, a).powi(2), m);
        report.terms.push(TermLoss {
            frame: n,
            before,
            after,
        });
    }
    Ok(report)
}

/// Initial noise latent for the next clip, see the module docs.
///
/// `rng` drives the dynamic noise. Exactly one predictor call is made per
/// inference step, each with `cond`.
#[allow(clippy::too_many_arguments)]
pub fn initialize_latent<P, R>(
    prev_clip: &VideoLatent,
    prev_trace: &DenoisedTrace,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
    frames: usize,
    rng: &mut R,
) -> Result<VideoLatent>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    initialize_latent_observed(
        prev_clip,
        prev_trace,
        predictor,
        cond,
        sched,
        cfg,
        frames,
        rng,
        &mut NoopObserver,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn initialize_latent_observed<P, R>(
    prev_clip: &VideoLatent,
    prev_trace: &DenoisedTrace,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
    frames: usize,
    rng: &mut R,
    observer: &mut dyn StepObserver,
) -> Result<VideoLatent>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate(frames)?;
    prev_trace.ensure_covers(sched)?;
    let kappa = if cfg.dynamic_noise {
        Some(KappaSchedule::with_indexing(frames, cfg.kappa_indexing)?)
    } else {
        None
    };

    let mut x = repeat_last_frame(prev_clip, frames)?;
    for step in 0..sched.num_inference_steps() {
        let timestep = sched.timestep(step);
        let mut eps = predictor.predict(&x, timestep, cond)?;
        x.ensure_same_dims(&eps)?;
        if let Some(k) = &kappa {
            eps = apply_dynamic_noise(&eps, k, rng)?;
        }
        let mut x_hat = denoised_observation(&x, &eps, step, sched)?;
        let anchor = prev_trace.get(timestep)?;
        let report = lfai_guidance(&mut x_hat, anchor, cfg)?;

        let ab = sched.level_alpha_bar(step)?;
        if cfg.noise_reuse == NoiseReuse::Rederived && ab < 1.0 {
            eps = x
                .lin_comb(1.0, &x_hat.value, -(ab.sqrt() as f32))?
                .scaled((1.0 / (1.0 - ab).sqrt()) as f32);
        }

        observer.on_step(&StepEvent {
            phase: Phase::Inversion,
            step,
            timestep,
            guidance: &report,
            anchor: Some(anchor),
            inter_frame_distance: x_hat.value.mean_inter_frame_distance(),
        });
        x = ddim_invert_step(&x_hat, &eps, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{FrameShape, LatentDims};
    use crate::predictor::ZeroPredictor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kappa_values() {
        let k = KappaSchedule::new(16).unwrap();
        assert_eq!(k.values()[0], 1.0);
        assert!((k.values()[1] - 0.367_879).abs() < 1e-6);
        assert!((k.values()[15] - 3.059e-7).abs() < 1e-10);
        assert!(KappaSchedule::new(0).is_err());
        let norm = KappaSchedule::with_indexing(16, KappaIndexing::Normalized).unwrap();
        assert!((norm.values()[8] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn unit_kappa_mixing() {
        let k = KappaSchedule::new(1).unwrap();
        let (s, d) = k.mixing(0);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((d * d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn repeat_examples() {
        let dims = LatentDims::new(3, 1, 1, 2);
        let clip = VideoLatent::new(dims, vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let r = repeat_last_frame(&clip, 3).unwrap();
        assert!(r.frames().all(|f| f == [4.0, 5.0]));
        let single = FrameLatent::filled(FrameShape::new(1, 1, 2), 7.0).into_clip();
        let r = repeat_last_frame(&single, 4).unwrap();
        assert_eq!(r.num_frames(), 4);
        assert_eq!(r.frame(0), r.frame(3));
    }

    #[test]
    fn tiny_kappa_suppresses_prediction() {
        let dims = LatentDims::new(16, 1, 1, 4);
        let eps = VideoLatent::filled(dims, 100.0);
        let k = KappaSchedule::new(16).unwrap();
        let out = apply_dynamic_noise(&eps, &k, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // frame 15: 100·κ/√(1+κ²) ≈ 3e-5, the rest is a unit-ish normal draw
        assert!(out.frame(15).iter().all(|v| v.abs() < 6.0));
        let short = KappaSchedule::new(3).unwrap();
        assert!(apply_dynamic_noise(&eps, &short, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn lfai_fixed_point_and_factor() {
        let shape = FrameShape::new(4, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let anchor = FrameLatent::standard_normal(shape, &mut rng);
        let clip = VideoLatent::repeat_frame(anchor.as_slice(), shape, 2);
        let mut obs = DenoisedObservation {
            value: clip.clone(),
            level: 5,
        };
        let cfg = GuidanceConfig::default();
        let rep = lfai_guidance(&mut obs, &anchor, &cfg).unwrap();
        assert_eq!(obs.value, clip);
        assert_eq!(rep.loss_before(), 0.0);

        let x = VideoLatent::standard_normal(
            LatentDims {
                frames: 2,
                frame: shape,
            },
            &mut rng,
        );
        let mut obs = DenoisedObservation {
            value: x.clone(),
            level: 5,
        };
        lfai_guidance(&mut obs, &anchor, &cfg).unwrap();
        for j in 0..shape.len() {
            let r0 = x.frame(0)[j] - anchor.as_slice()[j];
            let r1 = obs.value.frame(0)[j] - anchor.as_slice()[j];
            assert!((r1 - (1.0 - 2000.0 / 4096.0) * r0).abs() < 1e-5);
        }
        assert_eq!(obs.value.frame(1), x.frame(1));
    }

    #[test]
    fn lfai_rejects_wrong_anchor_shape() {
        let x = VideoLatent::zeros(LatentDims::new(2, 1, 2, 2));
        let mut obs = DenoisedObservation { value: x, level: 0 };
        let anchor = FrameLatent::filled(FrameShape::new(1, 1, 3), 0.0);
        assert!(lfai_guidance(&mut obs, &anchor, &GuidanceConfig::default()).is_err());
    }

    #[test]
    fn initialize_requires_full_trace() {
        let sched = crate::schedule::ScheduleConfig {
            inference_steps: Some(5),
            ..Default::default()
        }
        .build()
        .unwrap();
        let shape = FrameShape::new(1, 2, 2);
        let prev = VideoLatent::zeros(LatentDims {
            frames: 3,
            frame: shape,
        });
        let mut trace = DenoisedTrace::new(shape);
        for &t in &sched.timesteps()[1..] {
            trace.insert(t, &[0.0; 4]).unwrap();
        }
        let r = initialize_latent(
            &prev,
            &trace,
            &ZeroPredictor,
            &Condition::from_prompt("p"),
            &sched,
            &GuidanceConfig::default(),
            3,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(r, Err(MevgError::MissingTraceEntry(t)) if t == sched.timestep(0)));
    }

    proptest! {
        #[test]
        fn lfai_descends_and_leaves_later_frames(
            seed in any::<u64>(),
            frames in 1usize..5,
            affected in 1usize..5,
            delta_over_m in 0.01f64..0.99,
        ) {
            let affected = affected.min(frames);
            let shape = FrameShape::new(2, 3, 3);
            let m = shape.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = VideoLatent::standard_normal(LatentDims { frames, frame: shape }, &mut rng);
            let anchor = FrameLatent::standard_normal(shape, &mut rng);
            let cfg = GuidanceConfig { delta_lfai: delta_over_m * m as f64, affected_frames_lfai: affected, ..Default::default() };
            let mut obs = DenoisedObservation { value: x.clone(), level: 1 };
            let rep = lfai_guidance(&mut obs, &anchor, &cfg).unwrap();
            prop_assert!(rep.loss_after() < rep.loss_before());
            let factor = (1.0 - 2.0 * delta_over_m).powi(2);
            for t in &rep.terms {
                prop_assert!((t.after - factor * t.before).abs() < 1e-5 * (1.0 + t.before));
            }
            for n in affected..frames {
                prop_assert_eq!(obs.value.frame(n), x.frame(n));
            }
        }

        #[test]
        fn mixing_coefficients_are_unit_norm(frames in 1usize..64) {
            let k = KappaSchedule::new(frames).unwrap();
            for n in 0..frames {
                let (s, d) = k.mixing(n);
                prop_assert!((s * s + d * d - 1.0).abs() < 1e-15);
                if n > 0 {
                    prop_assert!(k.values()[n] < k.values()[n - 1]);
                }
            }
        }
    }
}
