//! Run configuration: JSON files, manifests and command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use mevg_core::latent_io::read_latent;
use mevg_core::{FrameShape, GuidanceConfig, NoiseReuse, Scenario, ScheduleConfig};
use mevg_prompts::{split_offline, split_scenario, HttpChatClient, LlmClientConfig, PromptRequest};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FORMAT: &str = "mevg-manifest/1";

/// Where clip prompts come from, plus the clip geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub prompts: Vec<String>,
    /// Multi-event story, split into `num_prompts` prompts when `prompts`
    /// is empty.
    pub story: Option<String>,
    pub num_prompts: Option<usize>,
    pub frames_per_clip: usize,
    pub frame_shape: FrameShape,
    /// Latent file whose first frame seeds the first clip.
    pub seed_latent: Option<PathBuf>,
    /// PNG encoded through the bridge to seed the first clip.
    pub seed_image: Option<PathBuf>,
    pub rng_seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            prompts: Vec::new(),
            story: None,
            num_prompts: None,
            frames_per_clip: s.frames_per_clip,
            frame_shape: s.frame_shape,
            seed_latent: None,
            seed_image: None,
            rng_seed: s.rng_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorConfig {
    /// Closed-form Gaussian denoiser; each prompt gets a pseudo-random mean
    /// derived from its text.
    Analytic {
        #[serde(default = "default_prior_var")]
        prior_var: f64,
        #[serde(default = "default_mean_norm")]
        mean_norm: f64,
    },
    /// Remote model behind the bridge protocol.
    Bridge {
        address: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        /// Decode clips to PNG frames after generation.
        #[serde(default = "default_true")]
        decode_frames: bool,
    },
}

fn default_prior_var() -> f64 {
    1.0
}
fn default_mean_norm() -> f64 {
    10.0
}
fn default_timeout() -> f64 {
    120.0
}
fn default_true() -> bool {
    true
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::Analytic {
            prior_var: default_prior_var(),
            mean_norm: default_mean_norm(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    DeltaLfai,
    DeltaSgs,
    Eta,
    Seed,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::DeltaLfai => "delta_lfai",
            SweepParam::DeltaSgs => "delta_sgs",
            SweepParam::Eta => "eta",
            SweepParam::Seed => "seed",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        match name.trim() {
            "delta_lfai" => Some(SweepParam::DeltaLfai),
            "delta_sgs" => Some(SweepParam::DeltaSgs),
            "eta" => Some(SweepParam::Eta),
            "seed" => Some(SweepParam::Seed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl SweepAxis {
    /// Parses `name=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("sweep `{spec}` is not name=v1,v2,...")))?;
        let param = SweepParam::parse(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown sweep parameter `{name}` (use delta_lfai, delta_sgs, eta or seed)"
            ))
        })?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("bad sweep value `{v}` in `{spec}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { param, values })
    }

    /// Writes one grid value into a copy of the run configuration.
    pub fn apply(&self, value: f64, cfg: &mut RunConfig) {
        let scenario = cfg.scenario.get_or_insert_with(ScenarioSpec::default);
        match self.param {
            SweepParam::DeltaLfai => cfg.guidance.delta_lfai = value,
            SweepParam::DeltaSgs => cfg.guidance.delta_sgs = value,
            SweepParam::Eta => cfg.schedule.eta = value,
            SweepParam::Seed => {
                scenario.rng_seed = value as u64;
                cfg.guidance.rng_seed = value as u64;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<ScenarioSpec>,
    /// JSON file holding a [`ScenarioSpec`]; relative to the config file.
    pub scenario_path: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub predictor: PredictorConfig,
    /// Split stories with a chat-completion service instead of the offline
    /// splitter.
    pub llm: Option<LlmClientConfig>,
    pub output_dir: PathBuf,
    /// Cartesian grid of parameter values; each point is a separate run.
    pub sweep: Vec<SweepAxis>,
    /// Write the per-step diagnostics CSV.
    pub diagnostics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            scenario_path: None,
            schedule: ScheduleConfig::default(),
            guidance: GuidanceConfig::default(),
            predictor: PredictorConfig::default(),
            llm: None,
            output_dir: PathBuf::from("mevg-out"),
            sweep: Vec::new(),
            diagnostics: true,
        }
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

impl RunConfig {
    /// Loads a run config, or the config embedded in a run manifest. Paths
    /// inside are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut value = read_json(path)?;
        if value
            .get("format")
            .and_then(|f| f.as_str())
            .is_some_and(|f| f.starts_with("mevg-manifest"))
        {
            value = value
                .get_mut("config")
                .map(serde_json::Value::take)
                .ok_or_else(|| {
                    CliError::Config(format!("manifest {} has no config section", path.display()))
                })?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = parent_dir(path);
        rebase(&base, &mut cfg.scenario_path);
        if let Some(s) = &mut cfg.scenario {
            rebase(&base, &mut s.seed_latent);
            rebase(&base, &mut s.seed_image);
        }
        Ok(cfg)
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub prompts: Vec<String>,
    pub story: Option<String>,
    pub num_prompts: Option<usize>,
    pub use_llm: bool,
    pub bridge_addr: Option<String>,
    pub analytic: bool,
    pub steps: Option<usize>,
    pub frames: Option<usize>,
    pub delta_lfai: Option<f64>,
    pub delta_sgs: Option<f64>,
    pub eta: Option<f64>,
    pub seed: Option<u64>,
    pub noise_reuse: Option<NoiseReuse>,
    pub out: Option<PathBuf>,
    pub sweep: Vec<SweepAxis>,
}

/// A fully resolved run: prompts known, schedule built, seed loaded.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Self-contained config as it will be written to the manifest.
    pub config: RunConfig,
    pub scenario: Scenario,
}

impl Prepared {
    pub fn spec(&self) -> &ScenarioSpec {
        self.config
            .scenario
            .as_ref()
            .expect("prepared configs carry an inline scenario")
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Applies overrides, loads the scenario file, splits stories and validates
/// everything. Touches no output files.
pub fn prepare(mut cfg: RunConfig, ov: &Overrides) -> Result<Prepared, CliError> {
    let mut spec = match (cfg.scenario.take(), cfg.scenario_path.take()) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either scenario or scenario_path, not both".into(),
            ))
        }
        (Some(s), None) => s,
        (None, Some(path)) => {
            let mut s: ScenarioSpec = serde_json::from_value(read_json(&path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let base = parent_dir(&path);
            rebase(&base, &mut s.seed_latent);
            rebase(&base, &mut s.seed_image);
            s
        }
        (None, None) => ScenarioSpec::default(),
    };

    if !ov.prompts.is_empty() {
        spec.prompts = ov.prompts.clone();
        spec.story = None;
        spec.num_prompts = None;
    }
    if let Some(story) = &ov.story {
        spec.story = Some(story.clone());
        spec.prompts.clear();
    }
    if let Some(n) = ov.num_prompts {
        spec.num_prompts = Some(n);
    }
    if let Some(f) = ov.frames {
        spec.frames_per_clip = f;
    }
    if let Some(seed) = ov.seed {
        spec.rng_seed = seed;
        cfg.guidance.rng_seed = seed;
    }
    if let Some(steps) = ov.steps {
        cfg.schedule.inference_steps = Some(steps);
    }
    if let Some(eta) = ov.eta {
        cfg.schedule.eta = eta;
    }
    if let Some(d) = ov.delta_lfai {
        cfg.guidance.delta_lfai = d;
    }
    if let Some(d) = ov.delta_sgs {
        cfg.guidance.delta_sgs = d;
    }
    if let Some(r) = ov.noise_reuse {
        cfg.guidance.noise_reuse = r;
    }
    if let Some(out) = &ov.out {
        cfg.output_dir = out.clone();
    }
    if ov.use_llm && cfg.llm.is_none() {
        cfg.llm = Some(LlmClientConfig::default());
    }
    if let Some(addr) = &ov.bridge_addr {
        cfg.predictor = match cfg.predictor {
            PredictorConfig::Bridge {
                timeout_secs,
                decode_frames,
                ..
            } => PredictorConfig::Bridge {
                address: addr.clone(),
                timeout_secs,
                decode_frames,
            },
            PredictorConfig::Analytic { .. } => PredictorConfig::Bridge {
                address: addr.clone(),
                timeout_secs: default_timeout(),
                decode_frames: true,
            },
        };
    } else if ov.analytic && !matches!(cfg.predictor, PredictorConfig::Analytic { .. }) {
        cfg.predictor = PredictorConfig::default();
    }
    if !ov.sweep.is_empty() {
        cfg.sweep = ov.sweep.clone();
    }

    if spec.prompts.is_empty() {
        let story = spec.story.clone().ok_or_else(|| {
            CliError::Config("no prompts: give prompts or a story with num_prompts".into())
        })?;
        let n = spec
            .num_prompts
            .ok_or_else(|| CliError::Config("a story needs num_prompts".into()))?;
        let req = PromptRequest::new(story, n);
        spec.prompts = match &cfg.llm {
            Some(llm) => {
                let client = HttpChatClient::new(llm.clone())
                    .map_err(|e| CliError::Config(e.to_string()))?;
                split_scenario(&req, &client)
                    .map_err(|e| CliError::Config(format!("prompt generation: {e}")))?
            }
            None => split_offline(&req)
                .map_err(|e| CliError::Config(format!("prompt generation: {e}")))?,
        };
        log::info!("story split into {} prompts", spec.prompts.len());
    }
    // the manifest keeps the prompts that were actually used
    spec.story = None;
    spec.num_prompts = None;

    match &cfg.predictor {
        PredictorConfig::Analytic {
            prior_var,
            mean_norm,
        } => {
            if !(prior_var.is_finite() && *prior_var > 0.0) {
                return Err(CliError::Config(format!(
                    "prior_var must be positive, got {prior_var}"
                )));
            }
            if !(mean_norm.is_finite() && *mean_norm >= 0.0) {
                return Err(CliError::Config(format!(
                    "mean_norm must be non-negative, got {mean_norm}"
                )));
            }
            if spec.seed_image.is_some() {
                return Err(CliError::Config(
                    "seed_image needs the bridge predictor; use seed_latent".into(),
                ));
            }
        }
        PredictorConfig::Bridge {
            address,
            timeout_secs,
            ..
        } => {
            if address.trim().is_empty() {
                return Err(CliError::Config("bridge address is empty".into()));
            }
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(CliError::Config(format!(
                    "bridge timeout must be positive, got {timeout_secs}"
                )));
            }
        }
    }
    if spec.seed_latent.is_some() && spec.seed_image.is_some() {
        return Err(CliError::Config(
            "give either seed_latent or seed_image, not both".into(),
        ));
    }
    for p in [&mut spec.seed_latent, &mut spec.seed_image]
        .into_iter()
        .flatten()
    {
        if !p.is_file() {
            return Err(CliError::Config(format!(
                "seed file {} not found",
                p.display()
            )));
        }
        *p = absolute(p);
    }
    for axis in &cfg.sweep {
        if axis.values.is_empty() || axis.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config(format!(
                "sweep over {} needs finite values",
                axis.param.as_str()
            )));
        }
    }

    cfg.schedule
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut scenario = Scenario {
        prompts: spec.prompts.clone(),
        frames_per_clip: spec.frames_per_clip,
        frame_shape: spec.frame_shape,
        seed_image_latent: None,
        rng_seed: spec.rng_seed,
    };
    if let Some(path) = &spec.seed_latent {
        let latent = read_latent(path)
            .map_err(|e| CliError::Config(format!("seed latent {}: {e}", path.display())))?;
        if latent.num_frames() == 0 || latent.frame_shape().is_empty() {
            return Err(CliError::Config(format!(
                "seed latent {} is empty",
                path.display()
            )));
        }
        scenario.seed_image_latent = Some(latent.frame_latent(0));
    }
    scenario
        .validate(&cfg.guidance)
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.scenario = Some(spec);
    Ok(Prepared {
        config: cfg,
        scenario,
    })
}
