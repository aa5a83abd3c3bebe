#![allow(dead_code)]

use mevg_core::guided_sampler::sample_clip;
use mevg_core::latent_init::initialize_latent;
use mevg_core::{
    AnalyticGaussianPredictor, Condition, DiffusionSchedule, FrameLatent, FrameShape,
    GuidanceConfig, LatentDims, ScheduleConfig, VideoLatent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FRAMES: usize = 16;

pub fn default_schedule() -> DiffusionSchedule {
    ScheduleConfig::default().build().unwrap()
}

pub fn clip_dims() -> LatentDims {
    LatentDims {
        frames: FRAMES,
        frame: FrameShape::default(),
    }
}

/// μ_A = 0 and μ_B = 10·u for a random unit direction u.
pub fn two_means(seed: u64) -> (FrameLatent, FrameLatent) {
    let shape = FrameShape::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
    let u = FrameLatent::standard_normal(shape, &mut rng);
    let scale = 10.0 / u.l2_norm() as f32;
    let mu_b = FrameLatent::new(shape, u.as_slice().iter().map(|v| v * scale).collect()).unwrap();
    (FrameLatent::filled(shape, 0.0), mu_b)
}

pub struct PairRun {
    pub clip0: VideoLatent,
    pub clip1: VideoLatent,
    pub independent: VideoLatent,
    pub mu_b: FrameLatent,
}

impl PairRun {
    pub fn boundary(&self) -> f64 {
        mevg_core::latent::l2_distance(self.clip1.frame(0), self.clip0.last_frame())
    }

    pub fn independent_boundary(&self) -> f64 {
        mevg_core::latent::l2_distance(self.independent.frame(0), self.clip0.last_frame())
    }
}

/// Clip 0 under A, clip 1 under B chained with `cfg`, plus an independently
/// sampled B clip for comparison.
pub fn two_prompt_run(seed: u64, cfg: &GuidanceConfig, sched: &DiffusionSchedule) -> PairRun {
    let (mu_a, mu_b) = two_means(seed);
    let p = AnalyticGaussianPredictor::new(sched)
        .with_mean("A", mu_a)
        .with_mean("B", mu_b.clone());
    let (a, b) = (Condition::new("A", vec![]), Condition::new("B", vec![]));
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_003));
    let first = sample_clip(
        &VideoLatent::standard_normal(clip_dims(), &mut init_rng),
        &p,
        &a,
        sched,
        cfg,
        None,
        &mut rng,
    )
    .unwrap();
    let x_top = initialize_latent(
        &first.clip,
        &first.trace,
        &p,
        &b,
        sched,
        cfg,
        FRAMES,
        &mut rng,
    )
    .unwrap();
    let second = sample_clip(&x_top, &p, &b, sched, cfg, Some(&first.trace), &mut rng).unwrap();
    let independent = sample_clip(
        &VideoLatent::standard_normal(clip_dims(), &mut init_rng),
        &p,
        &b,
        sched,
        cfg,
        None,
        &mut rng,
    )
    .unwrap();
    PairRun {
        clip0: first.clip,
        clip1: second.clip,
        independent: independent.clip,
        mu_b,
    }
}
