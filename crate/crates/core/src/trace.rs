//! Per-step record of a clip's last-frame denoised observation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};
use crate::latent::{FrameLatent, FrameShape};
use crate::schedule::DiffusionSchedule;

/// Last-frame x̂ keyed by the model timestep of the predictor call that
/// produced it. Sampling and inversion of the same schedule visit the same
/// timesteps, so entries line up between consecutive clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoisedTrace {
    shape: FrameShape,
    entries: BTreeMap<usize, FrameLatent>,
}

impl DenoisedTrace {
    pub fn new(shape: FrameShape) -> Self {
        Self {
            shape,
            entries: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn insert(&mut self, timestep: usize, frame: &[f32]) -> Result<()> {
        let f = FrameLatent::new(self.shape, frame.to_vec())?;
        self.entries.insert(timestep, f);
        Ok(())
    }

    pub fn get(&self, timestep: usize) -> Result<&FrameLatent> {
        self.entries
            .get(&timestep)
            .ok_or(MevgError::MissingTraceEntry(timestep))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &FrameLatent)> {
        self.entries.iter().map(|(&t, f)| (t, f))
    }

    /// Errors unless every inference timestep of `sched` has an entry.
    pub fn ensure_covers(&self, sched: &DiffusionSchedule) -> Result<()> {
        for &t in sched.timesteps() {
            self.get(t)?;
        }
        Ok(())
    }
}
