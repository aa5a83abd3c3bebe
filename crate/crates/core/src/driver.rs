//! Multi-event generation: one clip per prompt, each initialised from and
//! guided by the clip before it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GuidanceConfig;
use crate::ddim::{ddim_invert_step, denoised_observation};
use crate::error::{MevgError, Result};
use crate::guided_sampler::sample_clip_observed;
use crate::latent::{FrameLatent, FrameShape, LatentDims, VideoLatent};
use crate::latent_init::initialize_latent_observed;
use crate::observer::{NoopObserver, StepObserver};
use crate::predictor::{Condition, NoisePredictor};
use crate::schedule::DiffusionSchedule;
use crate::trace::DenoisedTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub prompts: Vec<String>,
    pub frames_per_clip: usize,
    pub frame_shape: FrameShape,
    /// Encoded reference image that seeds the first clip.
    pub seed_image_latent: Option<FrameLatent>,
    /// Seeds the first clip's initial Gaussian latent.
    pub rng_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            prompts: Vec::new(),
            frames_per_clip: 16,
            frame_shape: FrameShape::default(),
            seed_image_latent: None,
            rng_seed: 0,
        }
    }
}

impl Scenario {
    pub fn new<S: Into<String>>(prompts: impl IntoIterator<Item = S>) -> Self {
        Self {
            prompts: prompts.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn clip_dims(&self) -> LatentDims {
        LatentDims {
            frames: self.frames_per_clip,
            frame: self.frame_shape,
        }
    }

    pub fn validate(&self, cfg: &GuidanceConfig) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(MevgError::InvalidScenario(
                "at least one prompt is required".into(),
            ));
        }
        if let Some(i) = self.prompts.iter().position(|p| p.trim().is_empty()) {
            return Err(MevgError::InvalidScenario(format!("prompt {i} is empty")));
        }
        if self.frames_per_clip == 0 || self.frame_shape.is_empty() {
            return Err(MevgError::InvalidScenario(format!(
                "empty clip shape {}",
                self.clip_dims()
            )));
        }
        if cfg.delta_sgs > 0.0 && self.frames_per_clip < 2 {
            return Err(MevgError::InvalidScenario(
                "structure guidance needs at least 2 frames per clip".into(),
            ));
        }
        if let Some(seed) = &self.seed_image_latent {
            if seed.shape() != self.frame_shape {
                return Err(MevgError::InvalidScenario(format!(
                    "seed image latent shape {:?} does not match frame shape {:?}",
                    seed.shape(),
                    self.frame_shape
                )));
            }
        }
        cfg.validate(self.frames_per_clip)
    }
}

/// One generated clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutput {
    pub index: usize,
    pub prompt: String,
    pub clip: VideoLatent,
    pub trace: DenoisedTrace,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub prompts: Vec<String>,
    pub clips: Vec<VideoLatent>,
    pub traces: Vec<DenoisedTrace>,
    pub config: GuidanceConfig,
    pub clip_seconds: Vec<f64>,
}

/// Streams clips one prompt at a time, keeping only the previous clip and
/// its trace.
pub struct MultiEventGenerator<'a, P: ?Sized> {
    scenario: &'a Scenario,
    predictor: &'a P,
    sched: &'a DiffusionSchedule,
    cfg: &'a GuidanceConfig,
    init_rng: ChaCha8Rng,
    guidance_rng: ChaCha8Rng,
    next: usize,
    prev: Option<(VideoLatent, DenoisedTrace)>,
}

impl<'a, P: NoisePredictor + ?Sized> MultiEventGenerator<'a, P> {
    pub fn new(
        scenario: &'a Scenario,
        predictor: &'a P,
        sched: &'a DiffusionSchedule,
        cfg: &'a GuidanceConfig,
    ) -> Result<Self> {
        scenario.validate(cfg)?;
        Ok(Self {
            scenario,
            predictor,
            sched,
            cfg,
            init_rng: ChaCha8Rng::seed_from_u64(scenario.rng_seed),
            guidance_rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            next: 0,
            prev: None,
        })
    }

    /// Number of clips still to generate.
    pub fn remaining(&self) -> usize {
        self.scenario.prompts.len() - self.next
    }

    /// Generates the next clip, or `None` once every prompt is done.
    pub fn next_clip(&mut self, observer: &mut dyn StepObserver) -> Result<Option<ClipOutput>> {
        let Some(prompt) = self.scenario.prompts.get(self.next) else {
            return Ok(None);
        };
        let index = self.next;
        let cond = Condition::from_prompt(prompt);
        let frames = self.scenario.frames_per_clip;
        let started = Instant::now();
        observer.on_clip_start(index, prompt);

        let seeded;
        let (x_top, anchor) = match (&self.prev, &self.scenario.seed_image_latent) {
            (Some((clip, trace)), _) => {
                let x = initialize_latent_observed(
                    clip,
                    trace,
                    self.predictor,
                    &cond,
                    self.sched,
                    self.cfg,
                    frames,
                    &mut self.guidance_rng,
                    observer,
                )?;
                (x, Some(trace))
            }
            (None, Some(seed)) => {
                let duplicated = VideoLatent::repeat_frame(seed.as_slice(), seed.shape(), frames);
                let trace = synthesize_trace(&duplicated, self.predictor, &cond, self.sched)?;
                let x = initialize_latent_observed(
                    &duplicated,
                    &trace,
                    self.predictor,
                    &cond,
                    self.sched,
                    self.cfg,
                    frames,
                    &mut self.guidance_rng,
                    observer,
                )?;
                seeded = trace;
                (x, Some(&seeded))
            }
            (None, None) => (
                VideoLatent::standard_normal(self.scenario.clip_dims(), &mut self.init_rng),
                None,
            ),
        };

        let result = sample_clip_observed(
            &x_top,
            self.predictor,
            &cond,
            self.sched,
            self.cfg,
            anchor,
            &mut self.guidance_rng,
            observer,
        )?;
        observer.on_clip_end(index);
        let seconds = started.elapsed().as_secs_f64();
        log::debug!("clip {index} ({prompt:?}) sampled in {seconds:.3}s");

        self.prev = Some((result.clip.clone(), result.trace.clone()));
        self.next += 1;
        Ok(Some(ClipOutput {
            index,
            prompt: prompt.clone(),
            clip: result.clip,
            trace: result.trace,
            seconds,
        }))
    }
}

/// Unguided inversion of `clip` that records the last frame's x̂ under each
/// step's timestep, giving an image-seeded first clip an anchor trace.
pub fn synthesize_trace<P: NoisePredictor + ?Sized>(
    clip: &VideoLatent,
    predictor: &P,
    cond: &Condition,
    sched: &DiffusionSchedule,
) -> Result<DenoisedTrace> {
    let mut trace = DenoisedTrace::new(clip.frame_shape());
    let mut x = clip.clone();
    for step in 0..sched.num_inference_steps() {
        let timestep = sched.timestep(step);
        let eps = predictor.predict(&x, timestep, cond)?;
        let x_hat = denoised_observation(&x, &eps, step, sched)?;
        trace.insert(timestep, x_hat.value.last_frame())?;
        x = ddim_invert_step(&x_hat, &eps, sched)?;
    }
    Ok(trace)
}

/// Generates one clip per prompt. With a seed image latent the first clip is
/// image-seeded, otherwise it starts from Gaussian noise.
pub fn generate_multi_event<P: NoisePredictor + ?Sized>(
    scenario: &Scenario,
    predictor: &P,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
) -> Result<GenerationRecord> {
    generate_observed(scenario, predictor, sched, cfg, &mut NoopObserver)
}

/// Image-seeded generation; errors when the scenario has no seed latent.
pub fn generate_from_image<P: NoisePredictor + ?Sized>(
    scenario: &Scenario,
    predictor: &P,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
) -> Result<GenerationRecord> {
    if scenario.seed_image_latent.is_none() {
        return Err(MevgError::InvalidScenario(
            "image-seeded generation needs a seed image latent".into(),
        ));
    }
    generate_observed(scenario, predictor, sched, cfg, &mut NoopObserver)
}

pub fn generate_observed<P: NoisePredictor + ?Sized>(
    scenario: &Scenario,
    predictor: &P,
    sched: &DiffusionSchedule,
    cfg: &GuidanceConfig,
    observer: &mut dyn StepObserver,
) -> Result<GenerationRecord> {
    let mut gen = MultiEventGenerator::new(scenario, predictor, sched, cfg)?;
    let mut record = GenerationRecord {
        prompts: scenario.prompts.clone(),
        clips: Vec::with_capacity(scenario.prompts.len()),
        traces: Vec::with_capacity(scenario.prompts.len()),
        config: cfg.clone(),
        clip_seconds: Vec::with_capacity(scenario.prompts.len()),
    };
    while let Some(out) = gen.next_clip(observer)? {
        record.clips.push(out.clip);
        record.traces.push(out.trace);
        record.clip_seconds.push(out.seconds);
    }
    Ok(record)
}
