//! Guidance configuration shared by initialization and sampling.

use serde::{Deserialize, Serialize};

use crate::error::{MevgError, Result};

/// How a squared-distance loss is reduced over latent elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    /// Coefficient `c` such that one gradient step of size δ maps a residual
    /// `r` to `(1 − c)·r`: `2δ/M` for mean, `2δ` for sum.
    pub fn step_coefficient(self, delta: f64, elements: usize) -> f64 {
        match self {
            Reduction::Mean => 2.0 * delta / elements as f64,
            Reduction::Sum => 2.0 * delta,
        }
    }

    /// Reduces a squared L2 distance over `elements` values.
    pub fn apply(self, squared_distance: f64, elements: usize) -> f64 {
        match self {
            Reduction::Mean => squared_distance / elements as f64,
            Reduction::Sum => squared_distance,
        }
    }
}

/// Argument passed to `exp(−·)` when building the per-frame κ weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaIndexing {
    /// κ_n = exp(−n)
    #[default]
    Raw,
    /// κ_n = exp(−n/F)
    Normalized,
}

/// Which frames a structure-guidance pair term moves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgsMode {
    /// Only frame n moves toward the already-updated frame n − 1.
    #[default]
    Causal,
    /// Both frames of each pair descend the pair loss.
    Symmetric,
}

/// Noise used in the inversion ascent after LFAI has moved x̂.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReuse {
    /// Keep the (dynamic-noise mixed) predicted ε.
    #[default]
    Predicted,
    /// Re-derive ε from the current latent and the guided x̂, so the ascent
    /// stays consistent with the guided observation.
    Rederived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub delta_lfai: f64,
    pub delta_sgs: f64,
    pub reduction: Reduction,
    /// Leading frames pulled toward the anchor during inversion.
    pub affected_frames_lfai: usize,
    /// Seeds dynamic noise and η noise.
    pub rng_seed: u64,
    /// Mix fresh noise into the predicted noise during inversion.
    pub dynamic_noise: bool,
    pub kappa_indexing: KappaIndexing,
    pub sgs_mode: SgsMode,
    pub noise_reuse: NoiseReuse,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            delta_lfai: 1000.0,
            delta_sgs: 7.0,
            reduction: Reduction::Mean,
            affected_frames_lfai: 1,
            rng_seed: 0,
            dynamic_noise: true,
            kappa_indexing: KappaIndexing::Raw,
            sgs_mode: SgsMode::Causal,
            noise_reuse: NoiseReuse::Predicted,
        }
    }
}

impl GuidanceConfig {
    /// Checks the configuration against a clip length.
    pub fn validate(&self, frames: usize) -> Result<()> {
        for (name, d) in [
            ("delta_lfai", self.delta_lfai),
            ("delta_sgs", self.delta_sgs),
        ] {
            if !d.is_finite() || d < 0.0 {
                return Err(MevgError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {d}"
                )));
            }
        }
        if self.affected_frames_lfai == 0 || self.affected_frames_lfai > frames {
            return Err(MevgError::InvalidConfig(format!(
                "affected_frames_lfai must be in 1..={frames}, got {}",
                self.affected_frames_lfai
            )));
        }
        Ok(())
    }

    pub fn lfai_coefficient(&self, frame_len: usize) -> f64 {
        self.reduction.step_coefficient(self.delta_lfai, frame_len)
    }

    pub fn sgs_coefficient(&self, frame_len: usize) -> f64 {
        self.reduction.step_coefficient(self.delta_sgs, frame_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_contraction_factor() {
        let c = GuidanceConfig::default();
        assert_eq!(
            (c.delta_lfai, c.delta_sgs, c.affected_frames_lfai),
            (1000.0, 7.0, 1)
        );
        assert!((1.0 - c.lfai_coefficient(4096) - 0.51172).abs() < 1e-5);
    }

    #[test]
    fn validation() {
        let mut c = GuidanceConfig::default();
        assert!(c.validate(16).is_ok());
        c.affected_frames_lfai = 17;
        assert!(c.validate(16).is_err());
        c.affected_frames_lfai = 1;
        c.delta_sgs = f64::NAN;
        assert!(c.validate(16).is_err());
        c.delta_sgs = -1.0;
        assert!(c.validate(16).is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: GuidanceConfig =
            serde_json::from_str(r#"{"delta_sgs": 15, "sgs_mode": "symmetric"}"#).unwrap();
        assert_eq!(c.delta_sgs, 15.0);
        assert_eq!(c.sgs_mode, SgsMode::Symmetric);
        assert_eq!(c.delta_lfai, 1000.0);
        assert!(serde_json::from_str::<GuidanceConfig>(r#"{"delta": 1}"#).is_err());
    }
}
