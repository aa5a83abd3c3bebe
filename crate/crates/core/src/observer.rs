//! Hooks for watching generation step by step.

use crate::latent::FrameLatent;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Inversion,
    Sampling,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Inversion => "inversion",
            Phase::Sampling => "sampling",
        }
    }
}

/// Guidance loss of a single update term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermLoss {
    /// Frame that the term moved.
    pub frame: usize,
    pub before: f64,
    pub after: f64,
}

/// Losses of one guidance application, one entry per updated term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GuidanceReport {
    pub terms: Vec<TermLoss>,
}

impl GuidanceReport {
    pub fn loss_before(&self) -> f64 {
        self.terms.iter().map(|t| t.before).sum()
    }

    pub fn loss_after(&self) -> f64 {
        self.terms.iter().map(|t| t.after).sum()
    }
}

/// One diffusion step of one clip.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub phase: Phase,
    /// Position in the inference ladder (0 is the step nearest the clean level).
    pub step: usize,
    /// Model timestep passed to the predictor.
    pub timestep: usize,
    pub guidance: &'a GuidanceReport,
    /// Anchor frame the guidance pulled toward, if any.
    pub anchor: Option<&'a FrameLatent>,
    /// Mean consecutive-frame L2 distance of the guided x̂.
    pub inter_frame_distance: f64,
}

pub trait StepObserver {
    fn on_clip_start(&mut self, _clip: usize, _prompt: &str) {}
    fn on_step(&mut self, _event: &StepEvent<'_>) {}
    fn on_clip_end(&mut self, _clip: usize) {}
}

/// Observer that ignores everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoopObserver;

impl StepObserver for NoopObserver {}
