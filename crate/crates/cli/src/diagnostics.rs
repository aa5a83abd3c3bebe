//! Per-step diagnostics collected while generating.

use mevg_core::{StepEvent, StepObserver};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub clip: usize,
    pub phase: &'static str,
    pub step: usize,
    pub timestep: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub inter_frame_distance: f64,
}

/// Records one row per diffusion step.
#[derive(Debug, Default)]
pub struct DiagnosticsRecorder {
    clip: usize,
    pub rows: Vec<DiagnosticRow>,
}

impl StepObserver for DiagnosticsRecorder {
    fn on_clip_start(&mut self, clip: usize, prompt: &str) {
        self.clip = clip;
        log::info!("clip {clip}: {prompt}");
    }

    fn on_step(&mut self, e: &StepEvent<'_>) {
        self.rows.push(DiagnosticRow {
            clip: self.clip,
            phase: e.phase.as_str(),
            step: e.step,
            timestep: e.timestep,
            loss_before: e.guidance.loss_before(),
            loss_after: e.guidance.loss_after(),
            inter_frame_distance: e.inter_frame_distance,
        });
    }
}

pub fn to_csv(rows: &[DiagnosticRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
