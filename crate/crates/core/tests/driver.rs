//! Multi-event orchestration on the analytic predictor.

mod common;

use std::sync::Mutex;

use common::*;
use mevg_core::driver::{generate_observed, synthesize_trace, MultiEventGenerator};
use mevg_core::latent::l2_distance;
use mevg_core::latent_init::initialize_latent;
use mevg_core::observer::{Phase, StepEvent, StepObserver};
use mevg_core::{
    generate_from_image, generate_multi_event, AnalyticGaussianPredictor, Condition,
    CountingPredictor, DiffusionSchedule, FrameLatent, GuidanceConfig, MevgError, NoisePredictor,
    NoiseReuse, Result, Scenario, VideoLatent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn predictor(
    sched: &DiffusionSchedule,
    seed: u64,
) -> (AnalyticGaussianPredictor, FrameLatent, FrameLatent) {
    let (a, b) = two_means(seed);
    let p = AnalyticGaussianPredictor::new(sched)
        .with_mean("A", a.clone())
        .with_mean("B", b.clone());
    (p, a, b)
}

fn scenario(prompts: &[&str], seed: u64) -> Scenario {
    Scenario {
        rng_seed: seed,
        frames_per_clip: FRAMES,
        ..Scenario::new(prompts.iter().copied())
    }
}

#[test]
fn single_prompt_samples_once_without_initialization() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 1);
    let counting = CountingPredictor::new(&p);
    let rec = generate_multi_event(
        &scenario(&["A"], 1),
        &counting,
        &sched,
        &GuidanceConfig::default(),
    )
    .unwrap();
    assert_eq!(rec.clips.len(), 1);
    assert_eq!(rec.traces.len(), 1);
    assert_eq!(counting.calls(), sched.num_inference_steps());
}

#[test]
fn predictor_call_budget() {
    let sched = default_schedule();
    let (p, a, _) = predictor(&sched, 2);
    let s = sched.num_inference_steps();
    let cfg = GuidanceConfig::default();
    for n in 1..=3 {
        let prompts: Vec<&str> = ["A", "B", "A"][..n].to_vec();
        let counting = CountingPredictor::new(&p);
        generate_multi_event(&scenario(&prompts, 2), &counting, &sched, &cfg).unwrap();
        assert_eq!(counting.calls(), n * s + (n - 1) * s);

        // image seeding adds the synthetic-trace inversion and the first
        // clip's initialization
        let counting = CountingPredictor::new(&p);
        let seeded = Scenario {
            seed_image_latent: Some(a.clone()),
            ..scenario(&prompts, 2)
        };
        generate_from_image(&seeded, &counting, &sched, &cfg).unwrap();
        assert_eq!(counting.calls(), n * s + (n - 1) * s + 2 * s);
    }
}

#[test]
fn two_prompts_transition_to_the_new_prompt() {
    let sched = default_schedule();
    for seed in 0..5 {
        let (p, _, mu_b) = predictor(&sched, seed);
        let cfg = GuidanceConfig {
            rng_seed: seed,
            ..Default::default()
        };
        let rec = generate_multi_event(&scenario(&["A", "B"], seed), &p, &sched, &cfg).unwrap();
        let c1 = &rec.clips[1];
        assert!(
            mu_b.l2_distance(c1.last_frame()) < mu_b.l2_distance(c1.frame(0)),
            "seed {seed}"
        );
    }
}

fn boundary_closer_to_previous_clip(cfg: GuidanceConfig) {
    let sched = default_schedule();
    for seed in 0..5 {
        let (p, _, mu_b) = predictor(&sched, seed);
        let cfg = GuidanceConfig {
            rng_seed: seed,
            ..cfg.clone()
        };
        let rec = generate_multi_event(&scenario(&["A", "B"], seed), &p, &sched, &cfg).unwrap();
        let (c0, c1) = (&rec.clips[0], &rec.clips[1]);
        let to_prev = l2_distance(c1.frame(0), c0.last_frame());
        let to_target = mu_b.l2_distance(c1.frame(0));
        assert!(to_prev < to_target, "seed {seed}: {to_prev} vs {to_target}");
    }
}

// Measured with unit prior variance: about 70 vs 43 with the default noise
// reuse and 35 vs 32 with re-derived noise. The per-frame sampling spread
// (about 64) dwarfs the 10-unit gap between the two means.
#[test]
#[ignore = "does not hold under the analytic predictor; see README, Known limitations"]
fn boundary_frame_is_closer_to_previous_clip_than_to_new_mean() {
    boundary_closer_to_previous_clip(GuidanceConfig::default());
}

#[test]
fn records_are_bit_identical_for_a_seed() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 3);
    let cfg = GuidanceConfig {
        rng_seed: 77,
        ..Default::default()
    };
    let scn = scenario(&["A", "B", "A"], 3);
    let a = generate_multi_event(&scn, &p, &sched, &cfg).unwrap();
    let b = generate_multi_event(&scn, &p, &sched, &cfg).unwrap();
    assert_eq!(a.clips, b.clips);
    assert_eq!(a.traces, b.traces);
    let c = generate_multi_event(&Scenario { rng_seed: 4, ..scn }, &p, &sched, &cfg).unwrap();
    assert_ne!(a.clips, c.clips);
}

/// Every anchor the guidance saw, tagged with clip, phase and timestep.
#[derive(Default)]
struct AnchorLog {
    clip: usize,
    seen: Vec<(usize, Phase, usize, Option<Vec<f32>>)>,
}

impl StepObserver for AnchorLog {
    fn on_clip_start(&mut self, clip: usize, _prompt: &str) {
        self.clip = clip;
    }

    fn on_step(&mut self, e: &StepEvent<'_>) {
        self.seen.push((
            self.clip,
            e.phase,
            e.timestep,
            e.anchor.map(|a| a.as_slice().to_vec()),
        ));
    }
}

#[test]
fn anchors_are_the_previous_clip_trace() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 5);
    let mut log = AnchorLog::default();
    let rec = generate_observed(
        &scenario(&["A", "B", "A"], 5),
        &p,
        &sched,
        &GuidanceConfig::default(),
        &mut log,
    )
    .unwrap();
    let s = sched.num_inference_steps();
    assert_eq!(log.seen.len(), 3 * s + 2 * s);
    for (clip, phase, t, anchor) in &log.seen {
        if *clip == 0 {
            assert_eq!(*phase, Phase::Sampling);
            assert!(anchor.is_none());
        } else {
            let expected = rec.traces[clip - 1].get(*t).unwrap().as_slice();
            assert_eq!(
                anchor.as_deref(),
                Some(expected),
                "clip {clip} {phase:?} t={t}"
            );
        }
    }
}

#[test]
fn generator_streams_one_clip_at_a_time() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 6);
    let cfg = GuidanceConfig::default();
    let scn = scenario(&["A", "B"], 6);
    let mut gen = MultiEventGenerator::new(&scn, &p, &sched, &cfg).unwrap();
    assert_eq!(gen.remaining(), 2);
    let first = gen
        .next_clip(&mut mevg_core::observer::NoopObserver)
        .unwrap()
        .unwrap();
    assert_eq!((first.index, first.prompt.as_str()), (0, "A"));
    let second = gen
        .next_clip(&mut mevg_core::observer::NoopObserver)
        .unwrap()
        .unwrap();
    assert_eq!(second.index, 1);
    assert!(gen
        .next_clip(&mut mevg_core::observer::NoopObserver)
        .unwrap()
        .is_none());
    let rec = generate_multi_event(&scn, &p, &sched, &cfg).unwrap();
    assert_eq!(rec.clips, vec![first.clip, second.clip]);
}

/// Keeps the first latent it is asked to predict on.
struct FirstInput<P> {
    inner: P,
    first: Mutex<Option<VideoLatent>>,
}

impl<P: NoisePredictor> NoisePredictor for FirstInput<P> {
    fn predict(&self, x: &VideoLatent, t: usize, c: &Condition) -> Result<VideoLatent> {
        self.first.lock().unwrap().get_or_insert_with(|| x.clone());
        self.inner.predict(x, t, c)
    }
}

fn image_seed_anchors_the_first_clip(cfg: GuidanceConfig) {
    let sched = default_schedule();
    let (p, mu_a, _) = predictor(&sched, 7);
    let scn = Scenario {
        seed_image_latent: Some(mu_a.clone()),
        ..scenario(&["A"], 7)
    };
    let probe = FirstInput {
        inner: &p,
        first: Mutex::new(None),
    };
    let rec = generate_from_image(&scn, &probe, &sched, &cfg).unwrap();
    assert_eq!(rec.clips.len(), 1);
    let first = probe.first.into_inner().unwrap().unwrap();
    assert_eq!(first.num_frames(), FRAMES);
    assert!(first.frames().all(|f| f == mu_a.as_slice()));

    // rebuild the clip's initial latent with the same rng stream
    let dup = VideoLatent::repeat_frame(mu_a.as_slice(), mu_a.shape(), FRAMES);
    let a = Condition::new("A", vec![]);
    let trace = synthesize_trace(&dup, &p, &a, &sched).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let x_top = initialize_latent(&dup, &trace, &p, &a, &sched, &cfg, FRAMES, &mut rng).unwrap();
    let radius = x_top.l2_distance(&dup);
    let d = mu_a.l2_distance(rec.clips[0].frame(0));
    assert!(d <= 0.3 * radius, "{d} vs {radius}");
}

#[test]
fn image_seed_anchors_the_first_clip_with_rederived_noise() {
    image_seed_anchors_the_first_clip(GuidanceConfig {
        noise_reuse: NoiseReuse::Rederived,
        ..Default::default()
    });
}

// Measured: frame 0 lands 43 from the seed against an allowed 0.3 x 91.
#[test]
#[ignore = "does not hold with the default noise reuse; see README, Known limitations"]
fn image_seed_anchors_the_first_clip_with_default_noise() {
    image_seed_anchors_the_first_clip(GuidanceConfig::default());
}

#[test]
fn image_seeding_requires_a_seed() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 8);
    let r = generate_from_image(&scenario(&["A"], 8), &p, &sched, &GuidanceConfig::default());
    assert!(matches!(r, Err(MevgError::InvalidScenario(_))));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let sched = default_schedule();
    let (p, _, _) = predictor(&sched, 9);
    let cfg = GuidanceConfig::default();
    let bad = [
        scenario(&[], 0),
        scenario(&["A", "  "], 0),
        Scenario {
            frames_per_clip: 1,
            ..scenario(&["A"], 0)
        },
        Scenario {
            seed_image_latent: Some(FrameLatent::filled(
                mevg_core::FrameShape::new(1, 2, 2),
                0.0,
            )),
            ..scenario(&["A"], 0)
        },
    ];
    for scn in &bad {
        assert!(
            generate_multi_event(scn, &p, &sched, &cfg).is_err(),
            "{scn:?}"
        );
    }
    let unknown = generate_multi_event(&scenario(&["A", "C"], 0), &p, &sched, &cfg);
    assert!(matches!(unknown, Err(MevgError::UnknownCondition(c)) if c == "C"));
}
