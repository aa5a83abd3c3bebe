//! Executing prepared runs and parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mevg_core::bridge::BridgeClient;
use mevg_core::latent::l2_distance;
use mevg_core::latent_io::{write_atomic, write_latent};
use mevg_core::observer::NoopObserver;
use mevg_core::{
    AnalyticGaussianPredictor, Condition, DenoisedTrace, DiffusionSchedule, FrameLatent,
    MultiEventGenerator, NoisePredictor, StepObserver, VideoLatent,
};
use serde::{Deserialize, Serialize};

use crate::analytic::analytic_predictor;
use crate::config::{prepare, Overrides, PredictorConfig, Prepared, RunConfig, MANIFEST_FORMAT};
use crate::diagnostics::{to_csv, DiagnosticsRecorder};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub index: usize,
    pub prompt: String,
    pub latent: String,
    pub trace: String,
    pub frames_dir: Option<String>,
    pub seconds: f64,
    pub mean_inter_frame_distance: f64,
    /// Distance from the previous clip's last frame to this clip's first.
    pub boundary_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub tool_version: String,
    /// Everything needed to repeat the run with `--config manifest.json`.
    pub config: RunConfig,
    pub timesteps: Vec<usize>,
    pub clips: Vec<ClipEntry>,
    pub diagnostics: Option<String>,
    pub total_seconds: f64,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// What a finished invocation produced.
#[derive(Clone, Debug)]
pub enum RunSummary {
    Single {
        dir: PathBuf,
        manifest: Box<Manifest>,
    },
    Sweep {
        dir: PathBuf,
        points: Vec<SweepPoint>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub name: String,
    pub settings: Vec<(String, f64)>,
    pub mean_inter_frame_distance: f64,
    pub mean_boundary_distance: Option<f64>,
    pub seconds: f64,
}

enum Backend {
    Analytic(AnalyticGaussianPredictor),
    Bridge { client: BridgeClient, decode: bool },
}

impl NoisePredictor for Backend {
    fn predict(
        &self,
        x_t: &VideoLatent,
        timestep: usize,
        cond: &Condition,
    ) -> mevg_core::Result<VideoLatent> {
        match self {
            Backend::Analytic(p) => p.predict(x_t, timestep, cond),
            Backend::Bridge { client, .. } => client.predict(x_t, timestep, cond),
        }
    }
}

fn connect_backend(p: &mut Prepared, sched: &DiffusionSchedule) -> Result<Backend, CliError> {
    match p.config.predictor.clone() {
        PredictorConfig::Analytic {
            prior_var,
            mean_norm,
        } => {
            let pred = analytic_predictor(
                sched,
                &p.scenario.prompts,
                p.scenario.frame_shape,
                prior_var,
                mean_norm,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Backend::Analytic(pred))
        }
        PredictorConfig::Bridge {
            address,
            timeout_secs,
            decode_frames,
        } => {
            let pred_err = |e: mevg_core::MevgError| CliError::Predictor(format!("{address}: {e}"));
            let client =
                BridgeClient::connect(address.as_str(), Duration::from_secs_f64(timeout_secs))
                    .map_err(pred_err)?;
            let caps = client.hello().map_err(pred_err)?;
            let dims = caps.clip_dims();
            if dims.frames != p.scenario.frames_per_clip || dims.frame != p.scenario.frame_shape {
                log::info!("using the model's clip shape {dims}");
                p.scenario.frames_per_clip = dims.frames;
                p.scenario.frame_shape = dims.frame;
            }
            let spec = p
                .config
                .scenario
                .as_mut()
                .expect("prepared configs carry an inline scenario");
            spec.frames_per_clip = dims.frames;
            spec.frame_shape = dims.frame;
            if let Some(path) = spec.seed_image.clone() {
                let img = image::open(&path)
                    .map_err(|e| CliError::Config(format!("seed image {}: {e}", path.display())))?
                    .to_rgb32f();
                let (w, h) = (img.width() as usize, img.height() as usize);
                let mut planar = vec![0f32; 3 * h * w];
                for (x, y, px) in img.enumerate_pixels() {
                    for c in 0..3 {
                        planar[c * h * w + y as usize * w + x as usize] = px.0[c];
                    }
                }
                p.scenario.seed_image_latent =
                    Some(client.encode_image(&planar, h, w).map_err(pred_err)?);
            }
            p.scenario
                .validate(&p.config.guidance)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Backend::Bridge {
                client,
                decode: decode_frames,
            })
        }
    }
}

fn trace_latent(trace: &DenoisedTrace) -> Result<VideoLatent, CliError> {
    let frames: Vec<FrameLatent> = trace.iter().map(|(_, f)| f.clone()).collect();
    Ok(VideoLatent::from_frames(&frames)?)
}

fn write_frames(client: &BridgeClient, clip: &VideoLatent, dir: &Path) -> Result<(), CliError> {
    let ([f, c, h, w], data) = client
        .decode(clip)
        .map_err(|e| CliError::Predictor(e.to_string()))?;
    if c != 3 || data.len() != f * c * h * w {
        return Err(CliError::Predictor(format!(
            "decode returned [{f}, {c}, {h}, {w}] with {} values",
            data.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let plane = h * w;
    for n in 0..f {
        let frame = &data[n * 3 * plane..(n + 1) * 3 * plane];
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let i = y as usize * w + x as usize;
            for ch in 0..3 {
                px.0[ch] = (frame[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let mut bytes = Vec::new();
        img.write_to(
            &mut std::io::Cursor::new(&mut bytes),
            image::ImageFormat::Png,
        )
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        write_atomic(&dir.join(format!("frame_{n:03}.png")), &bytes)?;
    }
    Ok(())
}

/// Runs one prepared configuration into `config.output_dir`.
pub fn execute(mut prepared: Prepared) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let sched = prepared
        .config
        .schedule
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let backend = connect_backend(&mut prepared, &sched)?;
    let out = prepared.config.output_dir.clone();
    fs::create_dir_all(&out)?;

    let mut recorder = DiagnosticsRecorder::default();
    let mut noop = NoopObserver;
    let observer: &mut dyn StepObserver = if prepared.config.diagnostics {
        &mut recorder
    } else {
        &mut noop
    };
    let mut gen = MultiEventGenerator::new(
        &prepared.scenario,
        &backend,
        &sched,
        &prepared.config.guidance,
    )?;
    let mut clips = Vec::new();
    let mut prev_last: Option<Vec<f32>> = None;
    while let Some(c) = gen.next_clip(observer)? {
        let latent = format!("clip_{:03}.latent", c.index);
        let trace = format!("trace_{:03}.latent", c.index);
        write_latent(&out.join(&latent), &c.clip)?;
        write_latent(&out.join(&trace), &trace_latent(&c.trace)?)?;
        let frames_dir = match &backend {
            Backend::Bridge {
                client,
                decode: true,
            } => {
                let name = format!("frames_{:03}", c.index);
                write_frames(client, &c.clip, &out.join(&name))?;
                Some(name)
            }
            _ => None,
        };
        let boundary_distance = prev_last.as_ref().map(|p| l2_distance(p, c.clip.frame(0)));
        prev_last = Some(c.clip.last_frame().to_vec());
        log::info!("clip {} done in {:.2}s", c.index, c.seconds);
        clips.push(ClipEntry {
            index: c.index,
            prompt: c.prompt,
            latent,
            trace,
            frames_dir,
            seconds: c.seconds,
            mean_inter_frame_distance: c.clip.mean_inter_frame_distance(),
            boundary_distance,
        });
    }
    if let Backend::Bridge { client, .. } = &backend {
        if let Err(e) = client.bye() {
            log::warn!("bridge shutdown: {e}");
        }
    }

    let diagnostics = if prepared.config.diagnostics {
        let bytes = to_csv(&recorder.rows).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        write_atomic(&out.join(DIAGNOSTICS_FILE), &bytes)?;
        Some(DIAGNOSTICS_FILE.to_string())
    } else {
        None
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: prepared.config,
        timesteps: sched.timesteps().to_vec(),
        clips,
        diagnostics,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    write_atomic(&out.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

fn grid(cfg: &RunConfig) -> Vec<Vec<(usize, f64)>> {
    let mut points: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    for (a, axis) in cfg.sweep.iter().enumerate() {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((a, v));
                    q
                })
            })
            .collect();
    }
    points
}

/// Prepares and runs `cfg`, expanding a sweep into one sub-run per grid point.
pub fn run(cfg: RunConfig, ov: &Overrides) -> Result<RunSummary, CliError> {
    let prepared = prepare(cfg, ov)?;
    if prepared.config.sweep.is_empty() {
        let dir = prepared.config.output_dir.clone();
        return Ok(RunSummary::Single {
            dir,
            manifest: Box::new(execute(prepared)?),
        });
    }

    let base = prepared.config.clone();
    let root = base.output_dir.clone();
    // validate every point before writing anything
    let mut runs = Vec::new();
    for point in grid(&base) {
        let mut cfg = base.clone();
        cfg.sweep.clear();
        let mut settings = Vec::new();
        for &(a, v) in &point {
            let axis = &base.sweep[a];
            axis.apply(v, &mut cfg);
            settings.push((axis.param.as_str().to_string(), v));
        }
        let name = settings
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        cfg.output_dir = root.join(&name);
        runs.push((name, settings, prepare(cfg, &Overrides::default())?));
    }

    let mut points = Vec::new();
    for (name, settings, p) in runs {
        log::info!("sweep point {name}");
        let m = execute(p)?;
        let n = m.clips.len() as f64;
        let boundaries: Vec<f64> = m.clips.iter().filter_map(|c| c.boundary_distance).collect();
        points.push(SweepPoint {
            name,
            settings,
            mean_inter_frame_distance: m
                .clips
                .iter()
                .map(|c| c.mean_inter_frame_distance)
                .sum::<f64>()
                / n,
            mean_boundary_distance: (!boundaries.is_empty())
                .then(|| boundaries.iter().sum::<f64>() / boundaries.len() as f64),
            seconds: m.total_seconds,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = base
        .sweep
        .iter()
        .map(|a| a.param.as_str().to_string())
        .collect();
    header.extend(
        [
            "run",
            "mean_inter_frame_distance",
            "mean_boundary_distance",
            "seconds",
        ]
        .map(String::from),
    );
    let csv_err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for p in &points {
        let mut rec: Vec<String> = p.settings.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(p.name.clone());
        rec.push(p.mean_inter_frame_distance.to_string());
        rec.push(
            p.mean_boundary_distance
                .map(|d| d.to_string())
                .unwrap_or_default(),
        );
        rec.push(p.seconds.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Io(std::io::Error::other(e.into_error())))?;
    write_atomic(&root.join(SWEEP_FILE), &bytes)?;
    Ok(RunSummary::Sweep { dir: root, points })
}
