//! Prompt means for the analytic predictor.

use mevg_core::{AnalyticGaussianPredictor, DiffusionSchedule, FrameLatent, FrameShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Pseudo-random clean-frame mean of norm `mean_norm`, fixed by the prompt
/// text alone.
pub fn prompt_mean(prompt: &str, shape: FrameShape, mean_norm: f64) -> FrameLatent {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()));
    let raw = FrameLatent::standard_normal(shape, &mut rng);
    let norm = raw.l2_norm();
    let scale = if norm > 0.0 {
        (mean_norm / norm) as f32
    } else {
        0.0
    };
    FrameLatent::new(
        shape,
        raw.into_vec().into_iter().map(|v| v * scale).collect(),
    )
    .expect("scaling keeps the shape")
}

pub fn analytic_predictor(
    sched: &DiffusionSchedule,
    prompts: &[String],
    shape: FrameShape,
    prior_var: f64,
    mean_norm: f64,
) -> mevg_core::Result<AnalyticGaussianPredictor> {
    let mut p = AnalyticGaussianPredictor::new(sched).with_prior_var(prior_var)?;
    for prompt in prompts {
        p.register(prompt.clone(), prompt_mean(prompt, shape, mean_norm));
    }
    Ok(p)
}
