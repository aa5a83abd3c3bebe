//! Multi-event video latent generation.
//!
//! Clips are generated one after another with a pretrained text-to-video
//! noise predictor. Each new clip starts from a latent initialised from the
//! previous clip's last frame and is sampled with structure guidance that
//! pulls its first frames toward the previous clip's ending.

pub mod bridge;
pub mod config;
pub mod ddim;
pub mod driver;
pub mod error;
pub mod guided_sampler;
pub mod latent;
pub mod latent_init;
pub mod latent_io;
pub mod observer;
pub mod predictor;
pub mod schedule;
pub mod trace;

pub use config::{GuidanceConfig, KappaIndexing, NoiseReuse, Reduction, SgsMode};
pub use driver::{
    generate_from_image, generate_multi_event, GenerationRecord, MultiEventGenerator, Scenario,
};
pub use error::{MevgError, Result};
pub use guided_sampler::{sample_clip, SamplingResult};
pub use latent::{FrameLatent, FrameShape, LatentDims, VideoLatent};
pub use latent_init::{initialize_latent, KappaSchedule};
pub use observer::{Phase, StepEvent, StepObserver};
pub use predictor::{
    AnalyticGaussianPredictor, Condition, CountingPredictor, NoisePredictor, ZeroPredictor,
};
pub use schedule::{BetaKind, DiffusionSchedule, ScheduleConfig};
pub use trace::DenoisedTrace;
