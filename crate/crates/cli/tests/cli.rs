//! End-to-end runs of the `tlf` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tlf_core::data::frames_to_batch;
use tlf_core::data::io::read_dataset;
use tlf_core::data::pnm::decode_pgm;
use tlf_core::kv::KeyValues;
use tlf_core::model::{FutureModel, ModelConfig, ParamStore};

fn tlf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlf"))
        .args(args)
        .env_remove("TLF_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tlf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file below `dir` by relative path; manifest timestamps blanked.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).unwrap();
            if p.file_name().unwrap() == "manifest.txt" {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .filter(|l| !l.starts_with("started") && !l.starts_with("finished"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes();
            }
            out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

/// Snapshot without the manifest, for runs into different directories.
fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut s = snapshot(dir);
    s.remove(Path::new("manifest.txt"));
    s
}

fn manifest(dir: &Path) -> KeyValues {
    KeyValues::parse(&fs::read_to_string(dir.join("manifest.txt")).unwrap()).unwrap()
}

const SMALL_SYNTH: [&str; 6] = ["--frame_size", "32", "--count", "3", "--blob_radius", "4"];

const SMALL_MODEL: [&str; 14] = [
    "--frame_size",
    "32",
    "--encoder_channels",
    "4,4,4",
    "--measure_filters",
    "4",
    "--convlstm_filters",
    "4,3",
    "--convlstm_kernel",
    "3",
    "--attention_filters",
    "3",
    "--epochs",
    "1",
];

/// `args` followed by the shared settings `base`.
fn with<'a>(base: &[&'a str], args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(base).copied().collect()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = tlf(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_flags_and_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    assert_eq!(tlf(&["synth", "--out", s(&o), "--bogus", "1"]).status.code(), Some(2));
    assert_eq!(tlf(&["synth", "--out", s(&o), "--steps", "many"]).status.code(), Some(2));
    assert_eq!(tlf(&["synth"]).status.code(), Some(2));
    assert_eq!(tlf(&[]).status.code(), Some(2));
    assert!(!o.exists(), "no output on a usage error");
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlf(&["train-now", "--data", s(&dir.path().join("missing")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn synth_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("d1");
    ok(&with(&SMALL_SYNTH, &["synth", "--seed", "7", "--out", s(&d1)]));
    let first = snapshot(&d1);
    ok(&with(&SMALL_SYNTH, &["synth", "--seed", "7", "--out", s(&d1)]));
    assert_eq!(first, snapshot(&d1));
    assert_eq!(first.keys().filter(|p| p.ends_with("manifest.txt")).count(), 1);
    assert!(first.contains_key(Path::new("seq_0002/meta.csv")));
    let m = manifest(&d1);
    assert_eq!(m.get_str("command"), Some("synth"));
    assert_eq!(m.get_str("seed"), Some("7"));
    assert_eq!(m.get_str("config.count"), Some("3"));
    assert!(m.contains("started") && m.contains("finished") && m.contains("version"));
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&with(&SMALL_SYNTH, &["synth", "--seed", "11", "--velocity", "2,1", "--out", s(&a)]));
    ok(&["synth", "--config", s(&a.join("manifest.txt")), "--out", s(&b)]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    for (p, bytes) in &sa {
        if !p.ends_with("manifest.txt") {
            assert_eq!(Some(bytes), sb.get(p), "{}", p.display());
        }
    }
    assert_eq!(sa.len(), sb.len());
}

#[test]
fn seed_precedence_env_then_file_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, "# settings\nsteps = 4\nframe_size = 16\nblob_radius = 3\nblob_radius_spread = 1\n").unwrap();
    let run = |name: &str, env: Option<&str>, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let mut c = Command::new(env!("CARGO_BIN_EXE_tlf"));
        c.args(["synth", "--config", s(&cfg), "--out", s(&out_dir)]).args(extra);
        match env {
            Some(v) => c.env("TLF_SEED", v),
            None => c.env_remove("TLF_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        manifest(&out_dir)
    };
    assert_eq!(run("default", None, &[]).get_str("seed"), Some("0"));
    assert_eq!(run("env", Some("42"), &[]).get_str("seed"), Some("42"));
    let flag = run("flag", Some("42"), &["--seed", "5", "--steps", "3"]);
    assert_eq!(flag.get_str("seed"), Some("5"));
    assert_eq!(flag.get_str("config.steps"), Some("3"), "flags override the file");
    assert_eq!(flag.get_str("config.frame_size"), Some("16"));

    fs::write(&cfg, "nonsense_key = 1\n").unwrap();
    let out = tlf(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--out", s(dir.path())]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["conv2d dilated", "batch norm (train)", "softmax", "convlstm cell", "attention spatial-conv", "logcosh", "future model"] {
        assert!(text.contains(name), "missing {name}");
    }
    assert!(!text.contains("FAIL"));
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
    assert_eq!(manifest(dir.path()).get_str("command"), Some("gradcheck"));
}

/// Full pipeline on a tiny configuration: synth → train-now → train-future
/// / train-ar → eval → predict.
#[test]
fn pipeline_runs_and_is_deterministic() {
    let work = tempfile::tempdir().unwrap();
    let p = |n: &str| work.path().join(n);
    ok(&with(&SMALL_SYNTH, &["synth", "--seed", "3", "--out", s(&p("data"))]));

    ok(&with(&SMALL_MODEL, &["train-now", "--data", s(&p("data")), "--out", s(&p("now"))]));
    ok(&with(&SMALL_MODEL, &["train-now", "--data", s(&p("data")), "--out", s(&p("now2"))]));
    assert_eq!(artifacts(&p("now")), artifacts(&p("now2")), "train-now is deterministic");
    let log = fs::read_to_string(p("now").join("loss_log.csv")).unwrap();
    assert!(log.starts_with("epoch,step,lr,total_loss,segment_loss,measure_loss\n"));

    let (data, now) = (p("data"), p("now"));
    let future_args = ["train-future", "--data", s(&data), "--now", s(&now)];
    ok(&with(&["--out", s(&p("fut")), "--attention", "spatial-conv", "--epochs", "1"], &future_args));
    ok(&with(&["--out", s(&p("fut2")), "--attention", "spatial-conv", "--epochs", "1"], &future_args));
    assert_eq!(
        fs::read(p("fut").join("future.ckpt")).unwrap(),
        fs::read(p("fut2").join("future.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(p("fut").join("now.ckpt")).unwrap(),
        fs::read(p("now").join("now.ckpt")).unwrap()
    );
    let bad = tlf(&with(&["--out", s(&p("bad")), "--attention", "sideways"], &future_args));
    assert_eq!(bad.status.code(), Some(2));
    ok(&["train-ar", "--data", s(&p("data")), "--now", s(&p("now")), "--out", s(&p("ar")), "--epochs", "1"]);

    let eval = |out: &str| {
        ok(&[
            "eval", "--protocol", "future", "--baselines", "--model", s(&p("fut")), "--ar", s(&p("ar")),
            "--data", s(&p("data")), "--out", s(&p(out)),
        ]);
        artifacts(&p(out))
    };
    let e1 = eval("eval1");
    assert_eq!(e1, eval("eval2"));
    for f in ["metrics.csv", "persistence.csv", "autoregressive.csv"] {
        let csv = String::from_utf8(e1[Path::new(f)].clone()).unwrap();
        assert_eq!(csv.lines().count(), 7, "{f}");
        assert!(csv.starts_with("horizon_min,iou_cloud,iou_sky,iou_sun,iou_tracker,accuracy,nmae_pct\n10,"));
    }
    ok(&["eval", "--protocol", "now", "--model", s(&p("now")), "--data", s(&p("data")), "--out", s(&p("evnow"))]);
    assert_eq!(fs::read_to_string(p("evnow").join("metrics.csv")).unwrap().lines().count(), 2);

    // Prediction files and the attention quantization bound.
    let window = p("data").join("seq_0001");
    ok(&["predict", "--model", s(&p("fut")), "--window", s(&window), "--out", s(&p("pred"))]);
    let files = snapshot(&p("pred"));
    let count = |prefix: &str| files.keys().filter(|k| k.to_str().unwrap().starts_with(prefix)).count();
    assert_eq!(count("mask_h"), 6);
    assert_eq!(count("attention_step"), 6);
    let csv = String::from_utf8(files[Path::new("irradiance_pred.csv")].clone()).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(6).unwrap().starts_with("60,"));
    for row in csv.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - 1000.0 * v[1]).abs() < 1e-9 * v[2].abs().max(1.0), "{row}");
    }

    let cfg = ModelConfig::from_kv(&KeyValues::parse(&fs::read_to_string(p("fut").join("model.cfg")).unwrap()).unwrap()).unwrap();
    let classes = cfg.classes;
    let model = FutureModel {
        cfg,
        store: ParamStore::load(&p("fut").join("future.ckpt")).unwrap(),
    };
    let seq = read_dataset(&window, classes).unwrap();
    let inputs: Vec<_> = seq.frames[..6].iter().map(|f| frames_to_batch(&[f])).collect();
    let weights = model.predict_frames(&inputs).unwrap().attention.unwrap();
    let maps: Vec<Vec<u8>> = (1..=6)
        .map(|k| decode_pgm(&files[&PathBuf::from(format!("attention_step{k}.pgm"))], "map").unwrap().2)
        .collect();
    for px in 0..maps[0].len() {
        let mut sum = 0.0;
        for (k, map) in maps.iter().enumerate() {
            let w = weights.data()[px * 6 + k];
            let q = map[px] as f64 / 255.0;
            assert!((q - w).abs() <= 1.0 / 255.0, "pixel {px} step {k}: {q} vs {w}");
            sum += q;
        }
        assert!((sum - 1.0).abs() <= 6.0 / 255.0);
    }

    ok(&["predict", "--persistence", "--model", s(&p("fut")), "--window", s(&window), "--out", s(&p("persist"))]);
    let masks: Vec<Vec<u8>> = (1..=6)
        .map(|k| fs::read(p("persist").join(format!("mask_h{k}.pgm"))).unwrap())
        .collect();
    assert!(masks.iter().all(|m| m == &masks[0]));

    // A window shorter than the look-back is rejected.
    ok(&["synth", "--steps", "4", "--frame_size", "32", "--blob_radius", "4", "--out", s(&p("short"))]);
    let short = tlf(&["predict", "--model", s(&p("fut")), "--window", s(&p("short").join("seq_0000")), "--out", s(&p("x"))]);
    assert_eq!(short.status.code(), Some(1));
}

#[test]
fn runs_only_write_inside_out() {
    let work = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tlf"))
        .current_dir(work.path())
        .args(["synth", "--frame_size", "16", "--steps", "2", "--blob_radius", "3", "--blob_radius_spread", "1", "--out", "run"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let entries: Vec<_> = fs::read_dir(work.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("run")]);
}
