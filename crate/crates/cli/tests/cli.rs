use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mevg_cli::Manifest;
use mevg_core::latent_io::read_latent;

fn mevg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mevg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "scenario": {
            "prompts": ["A dog runs across a field.", "The dog lies down in the grass."],
            "frames_per_clip": 4,
            "frame_shape": {"channels": 2, "height": 8, "width": 8},
            "rng_seed": 3
        },
        "schedule": {"inference_steps": 10},
        "guidance": {"delta_lfai": 50.0, "delta_sgs": 2.0, "rng_seed": 5}
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn two_prompt_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));

    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.clips.len(), 2);
    assert_eq!(m.timesteps.len(), 10);
    assert!(m.clips[0].boundary_distance.is_none() && m.clips[1].boundary_distance.is_some());
    for c in &m.clips {
        let clip = read_latent(&out.join(&c.latent)).unwrap();
        assert_eq!(clip.dims().as_array(), [4, 2, 8, 8]);
        assert!(clip.is_finite());
        let trace = read_latent(&out.join(&c.trace)).unwrap();
        assert_eq!(trace.dims().as_array(), [10, 2, 8, 8]);
    }

    let mut rdr = csv::Reader::from_path(out.join("diagnostics.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        [
            "clip",
            "phase",
            "step",
            "timestep",
            "loss_before",
            "loss_after",
            "inter_frame_distance"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // clip 0 samples; clip 1 inverts then samples
    assert_eq!(rows.len(), 10 + 2 * 10);
    assert_eq!(rows.iter().filter(|r| &r[1] == "inversion").count(), 10);
}

#[test]
fn prompts_from_flags_and_story_splitting() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("story");
    ok(&mevg(&[
        "--story",
        "The cat wakes up, then stretches and then jumps off the bed.",
        "--num-prompts",
        "3",
        "--steps",
        "4",
        "--frames",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]));
    let m = Manifest::load(&out.join("manifest.json")).unwrap();
    let prompts: Vec<&str> = m.clips.iter().map(|c| c.prompt.as_str()).collect();
    assert_eq!(
        prompts,
        [
            "The cat wakes up.",
            "The cat stretches.",
            "The cat jumps off the bed."
        ]
    );
    assert_eq!(m.config.scenario.as_ref().unwrap().prompts, prompts);
    assert!(m.config.scenario.as_ref().unwrap().story.is_none());
}

fn published_grid(axis: &str, values: &str, field: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let sweep = format!("{axis}={values}");
    ok(&mevg(&[
        "--prompt",
        "A dog runs.",
        "--prompt",
        "The dog sits.",
        "--frames",
        "2",
        "--steps",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--sweep",
        &sweep,
    ]));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let want: Vec<f64> = values.split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(rows.len(), want.len());
    for (r, w) in rows.iter().zip(&want) {
        assert_eq!(r[0].parse::<f64>().unwrap(), *w);
        let m = Manifest::load(&out.join(&r[1]).join("manifest.json")).unwrap();
        let g = serde_json::to_value(&m.config.guidance).unwrap();
        assert_eq!(g[field].as_f64().unwrap(), *w);
        assert!(m.config.sweep.is_empty());
        assert_eq!(m.clips.len(), 2);
    }
}

#[test]
fn structure_guidance_sweep_gives_one_run_per_published_value() {
    published_grid("delta_sgs", "0.01,0.1,7,15,50", "delta_sgs");
}

#[test]
fn inversion_guidance_sweep_gives_one_run_per_published_value() {
    published_grid("delta_lfai", "1,10,100,500,1000", "delta_lfai");
}

#[test]
fn sweep_axes_form_a_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("grid");
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "3",
        "--sweep",
        "delta_sgs=0,1",
        "--sweep",
        "seed=1,2,3",
    ]));
    let dirs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 6);
}

#[test]
fn invalid_scenario_path_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"scenario_path": "missing/scenario.json"}"#).unwrap();
    let out = tmp.path().join("never");
    let r = mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let o = out.to_str().unwrap();
    for args in [
        vec!["--out", o],
        vec!["--prompt", "a", "--steps", "0", "--out", o],
        vec!["--prompt", "a", "--delta-sgs", "-1", "--out", o],
        vec!["--prompt", "a", "--sweep", "gamma=1,2", "--out", o],
        vec![
            "--story",
            "One thing happens.",
            "--num-prompts",
            "4",
            "--out",
            o,
        ],
    ] {
        let r = mevg(&args);
        assert_eq!(
            r.status.code(),
            Some(3),
            "{args:?}: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }
    let cfg = tmp.path().join("typo.json");
    fs::write(&cfg, r#"{"guidance": {"delta_sgss": 3}}"#).unwrap();
    assert_eq!(
        mevg(&["--config", cfg.to_str().unwrap(), "--prompt", "a"])
            .status
            .code(),
        Some(3)
    );
    assert!(!out.exists());
}

#[test]
fn unreachable_bridge_exits_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    // bind then drop to get a port with nothing listening
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let r = mevg(&[
        "--prompt",
        "a",
        "--bridge-addr",
        &addr,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert!(!out.exists());
}

#[test]
fn manifest_rerun_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--eta",
        "0.5",
    ]));
    let manifest = first.join("manifest.json");
    ok(&mevg(&[
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]));
    let m = Manifest::load(&manifest).unwrap();
    for c in &m.clips {
        for f in [&c.latent, &c.trace] {
            assert_eq!(
                fs::read(first.join(f)).unwrap(),
                fs::read(second.join(f)).unwrap(),
                "{f} differs"
            );
        }
    }
    assert_eq!(
        fs::read(first.join("diagnostics.csv")).unwrap(),
        fs::read(second.join("diagnostics.csv")).unwrap()
    );
}

#[test]
fn seed_changes_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "1",
    ]));
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "2",
    ]));
    assert_ne!(
        fs::read(a.join("clip_000.latent")).unwrap(),
        fs::read(b.join("clip_000.latent")).unwrap()
    );
}

#[test]
fn seed_latent_starts_the_first_clip_from_an_image() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = tmp.path().join("first");
    ok(&mevg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
    ]));

    let seeded_cfg = tmp.path().join("seeded.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&cfg).unwrap()).unwrap();
    v["scenario"]["seed_latent"] = "first/clip_001.latent".into();
    fs::write(&seeded_cfg, serde_json::to_vec(&v).unwrap()).unwrap();
    let seeded = tmp.path().join("seeded");
    ok(&mevg(&[
        "--config",
        seeded_cfg.to_str().unwrap(),
        "--out",
        seeded.to_str().unwrap(),
    ]));

    let mut rdr = csv::Reader::from_path(seeded.join("diagnostics.csv")).unwrap();
    let inversions = rdr
        .records()
        .map(Result::unwrap)
        .filter(|r| &r[0] == "0" && &r[1] == "inversion")
        .count();
    assert_eq!(inversions, 10);
    let m = Manifest::load(&seeded.join("manifest.json")).unwrap();
    assert!(Path::new(m.config.scenario.unwrap().seed_latent.unwrap().as_path()).is_absolute());
}
