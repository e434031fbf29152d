use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::ArgMatches;
use tlf_core::data::io::{read_dataset, read_root, write_dataset};
use tlf_core::data::pnm::encode_pgm;
use tlf_core::data::synth::{synth_sequence, SynthConfig};
use tlf_core::data::{frames_to_batch, Mask, VideoSequence, FRAME_INTERVAL_MIN};
use tlf_core::harness::gradsuite::full_suite;
use tlf_core::harness::train::{train_autoregressive, train_future, train_now, TrainLog};
use tlf_core::harness::{evaluate_future, evaluate_now, TrainConfig};
use tlf_core::kv::KeyValues;
use tlf_core::model::{persistence_predict, ArModel, FutureModel, ModelConfig, NowModel, ParamStore};
use tlf_tensor::gradcheck::DEFAULT_TOLERANCE;
use tlf_tensor::Tensor;

use crate::config::{apply, resolve, usage};
use crate::manifest::{RunManifest, MANIFEST_FILE};

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const MODEL_CFG: &str = "model.cfg";
pub const NOW_CKPT: &str = "now.ckpt";
pub const FUTURE_CKPT: &str = "future.ckpt";
pub const AR_CKPT: &str = "ar.ckpt";
pub const LOSS_LOG: &str = "loss_log.csv";

/// Keys accepted by `synth`.
pub fn synth_keys() -> KeyValues {
    let mut kv = SynthConfig::default().to_kv();
    kv.set("count", 1);
    kv
}

/// Keys accepted by the training commands.
pub fn train_keys() -> KeyValues {
    let mut kv = ModelConfig::default().to_kv();
    kv.merge(&TrainConfig::default().to_kv());
    kv
}

fn path_arg(m: &ArgMatches, name: &str) -> Option<PathBuf> {
    m.get_one::<String>(name).map(PathBuf::from)
}

fn required_path(m: &ArgMatches, name: &str) -> Result<PathBuf> {
    path_arg(m, name).ok_or_else(|| usage(format!("--{name} is required")))
}

fn out_dir(m: &ArgMatches) -> Result<PathBuf> {
    let out = required_path(m, "out")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_model_cfg(dir: &Path) -> Result<ModelConfig> {
    let p = dir.join(MODEL_CFG);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    ModelConfig::from_kv(&KeyValues::parse(&text)?).with_context(|| p.display().to_string())
}

/// Training settings of a run, from its manifest; defaults when absent.
fn read_train_cfg(dir: &Path) -> Result<TrainConfig> {
    let mut tc = TrainConfig::default();
    let p = dir.join(MANIFEST_FILE);
    if p.exists() {
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        tc.apply_kv(&KeyValues::parse(&text)?.section("config"))
            .with_context(|| p.display().to_string())?;
    }
    Ok(tc)
}

fn read_store(dir: &Path, file: &str) -> Result<ParamStore> {
    let p = dir.join(file);
    if !p.exists() {
        bail!("{} holds no {file}", dir.display());
    }
    Ok(ParamStore::load(&p)?)
}

fn load_now(dir: &Path) -> Result<NowModel> {
    Ok(NowModel {
        cfg: read_model_cfg(dir)?,
        store: read_store(dir, NOW_CKPT)?,
    })
}

fn read_sequences(root: &Path, classes: usize) -> Result<Vec<VideoSequence>> {
    let seqs = read_root(root, classes).with_context(|| format!("reading dataset {}", root.display()))?;
    if seqs.is_empty() {
        bail!("{} holds no sequence directories", root.display());
    }
    Ok(seqs)
}

fn report_log(log: &TrainLog) {
    for (e, loss) in log.epoch_means().iter().enumerate() {
        say!("epoch {e:>3}  mean loss {loss:.6}");
    }
}

pub fn synth(m: &ArgMatches) -> Result<()> {
    let known = synth_keys();
    let mut kv = resolve(&known, m)?;
    let mut count = 1usize;
    apply("count", kv.read("count", &mut count))?;
    let mut settings = KeyValues::new();
    for k in kv.keys().filter(|k| *k != "count") {
        settings.set(k, kv.get_str(k).unwrap());
    }
    let base = apply("synth settings", SynthConfig::from_kv(&settings))?;
    let out = out_dir(m)?;
    let mut manifest = RunManifest::start("synth", &out);
    for i in 0..count {
        let cfg = SynthConfig {
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let seq = synth_sequence(&cfg)?;
        write_dataset(&seq, &out.join(format!("seq_{i:04}")), Some(&cfg))?;
    }
    kv = base.to_kv();
    kv.set("count", count);
    manifest.seed = Some(base.seed);
    manifest.config = kv;
    manifest.write()?;
    say!("wrote {count} sequence(s) of {} frames to {}", base.steps, out.display());
    Ok(())
}

/// Model and training settings resolved on top of `base`.
fn train_settings(m: &ArgMatches, base: ModelConfig) -> Result<(ModelConfig, TrainConfig, KeyValues)> {
    let kv = resolve(&train_keys(), m)?;
    let mut mcfg = base;
    apply("model settings", mcfg.apply_kv(&kv))?;
    let mut tcfg = TrainConfig::default();
    apply("training settings", tcfg.apply_kv(&kv))?;
    let mut snapshot = mcfg.to_kv();
    snapshot.merge(&tcfg.to_kv());
    Ok((mcfg, tcfg, snapshot))
}

fn finish_training(
    mut manifest: RunManifest,
    snapshot: KeyValues,
    seed: u64,
    mcfg: &ModelConfig,
    log: &TrainLog,
) -> Result<()> {
    let out = manifest.out.clone();
    write(&out.join(MODEL_CFG), mcfg.to_kv().to_text())?;
    write(&out.join(LOSS_LOG), log.to_csv())?;
    manifest.seed = Some(seed);
    manifest.config = snapshot;
    manifest.write()?;
    report_log(log);
    Ok(())
}

pub fn train_now_cmd(m: &ArgMatches) -> Result<()> {
    let (mcfg, tcfg, snapshot) = train_settings(m, ModelConfig::default())?;
    let data = required_path(m, "data")?;
    let seqs = read_sequences(&data, mcfg.classes)?;
    let out = out_dir(m)?;
    let mut manifest = RunManifest::start("train-now", &out);
    manifest.input("data", &data);
    let mut model = NowModel::init(mcfg.clone(), tcfg.seed)?;
    let log = train_now(&mut model, &seqs, &tcfg)?;
    model.store.save(&out.join(NOW_CKPT))?;
    finish_training(manifest, snapshot, tcfg.seed, &mcfg, &log)
}

/// `train-future` and `train-ar`: both start from a now run and keep a
/// copy of its checkpoint so the run directory is self-contained.
pub fn train_from_now(m: &ArgMatches, autoregressive: bool) -> Result<()> {
    let now_dir = required_path(m, "now")?;
    let now = load_now(&now_dir)?;
    let (mcfg, tcfg, snapshot) = train_settings(m, now.cfg.clone())?;
    let data = required_path(m, "data")?;
    let seqs = read_sequences(&data, mcfg.classes)?;
    let out = out_dir(m)?;
    let command = if autoregressive { "train-ar" } else { "train-future" };
    let mut manifest = RunManifest::start(command, &out);
    manifest.input("data", &data);
    manifest.input("now", &now_dir);
    let log = if autoregressive {
        let mut model = ArModel::init(mcfg.clone(), &now, tcfg.seed)?;
        let log = train_autoregressive(&mut model, &seqs, &tcfg)?;
        model.store.save(&out.join(AR_CKPT))?;
        log
    } else {
        let mut model = FutureModel::init(mcfg.clone(), &now, tcfg.seed)?;
        let log = train_future(&mut model, &seqs, &tcfg)?;
        model.store.save(&out.join(FUTURE_CKPT))?;
        log
    };
    now.store.save(&out.join(NOW_CKPT))?;
    finish_training(manifest, snapshot, tcfg.seed, &mcfg, &log)
}

pub fn eval(m: &ArgMatches) -> Result<()> {
    let model_dir = required_path(m, "model")?;
    let data = required_path(m, "data")?;
    let protocol = m.get_one::<String>("protocol").unwrap().clone();
    let baselines = m.get_flag("baselines");
    let ar_dir = path_arg(m, "ar");
    if ar_dir.is_some() && !baselines {
        return Err(usage("--ar is only used together with --baselines"));
    }
    let cfg = read_model_cfg(&model_dir)?;
    let seqs = read_sequences(&data, cfg.classes)?;
    let out = out_dir(m)?;
    let mut manifest = RunManifest::start("eval", &out);
    manifest.input("model", &model_dir);
    manifest.input("data", &data);
    let mut snapshot = KeyValues::new();
    snapshot.set("protocol", &protocol);
    snapshot.set("baselines", baselines);
    let mut written: Vec<(&str, tlf_core::metrics::MetricsReport)> = Vec::new();
    if protocol == "now" {
        if baselines {
            return Err(usage("baselines apply to the future protocol only"));
        }
        written.push(("metrics", evaluate_now(&load_now(&model_dir)?, &seqs)?));
    } else {
        let future = FutureModel {
            cfg: cfg.clone(),
            store: read_store(&model_dir, FUTURE_CKPT)?,
        };
        let now = if baselines { Some(load_now(&model_dir)?) } else { None };
        let ar = match &ar_dir {
            Some(d) => {
                manifest.input("ar", d);
                Some(ArModel {
                    cfg: read_model_cfg(d)?,
                    store: read_store(d, AR_CKPT)?,
                })
            }
            None => None,
        };
        let ev = evaluate_future(Some(&future), now.as_ref(), ar.as_ref(), &seqs, cfg.look_back)?;
        written.extend(ev.model.map(|r| ("metrics", r)));
        written.extend(ev.persistence.map(|r| ("persistence", r)));
        written.extend(ev.autoregressive.map(|r| ("autoregressive", r)));
    }
    for (name, report) in &written {
        write(&out.join(format!("{name}.csv")), report.to_csv())?;
        say!("{name}\n{}", report.to_table());
    }
    manifest.config = snapshot;
    manifest.write()
}

fn quantize(w: f64) -> u8 {
    (w.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One graymap per input step from `[1, h, w, t]` or `[1, t]` weights.
fn attention_maps(weights: &Tensor, repr_size: usize) -> Vec<Vec<u8>> {
    let s = weights.shape();
    let t = *s.last().unwrap();
    (0..t)
        .map(|k| {
            let samples: Vec<u8> = if s.len() == 4 {
                (0..s[1] * s[2]).map(|p| quantize(weights.data()[p * t + k])).collect()
            } else {
                vec![quantize(weights.data()[k]); repr_size * repr_size]
            };
            let (h, w) = if s.len() == 4 { (s[1], s[2]) } else { (repr_size, repr_size) };
            encode_pgm(w, h, &samples)
        })
        .collect()
}

pub fn predict(m: &ArgMatches) -> Result<()> {
    let model_dir = required_path(m, "model")?;
    let window = required_path(m, "window")?;
    let use_persistence = m.get_flag("persistence");
    let cfg = read_model_cfg(&model_dir)?;
    let t = cfg.look_back;
    let seq = read_dataset(&window, cfg.classes).with_context(|| format!("reading window {}", window.display()))?;
    if seq.len() < t {
        bail!("window {} holds {} frames; the model needs {t}", window.display(), seq.len());
    }
    let inputs: Vec<Tensor> = seq.frames[..t].iter().map(|f| frames_to_batch(&[f])).collect();
    let pred = if use_persistence {
        persistence_predict(&load_now(&model_dir)?, &inputs[t - 1], t)?
    } else {
        FutureModel {
            cfg: cfg.clone(),
            store: read_store(&model_dir, FUTURE_CKPT)?,
        }
        .predict_frames(&inputs)?
    };
    let out = out_dir(m)?;
    let mut manifest = RunManifest::start("predict", &out);
    manifest.input("model", &model_dir);
    manifest.input("window", &window);
    let scale = read_train_cfg(&model_dir)?.loss.irradiance_scale;
    let mut csv = String::from("horizon_min,irradiance,irradiance_wm2\n");
    for k in 0..t {
        let probs = &pred.probs[k];
        let s = probs.shape();
        let mask = Mask::from_probs(&probs.reshape(&s[1..])?)?;
        write(&out.join(format!("mask_h{}.pgm", k + 1)), encode_pgm(mask.width, mask.height, &mask.labels))?;
        let r = pred.measure[k][0];
        csv.push_str(&format!("{},{r},{}\n", (k as u32 + 1) * FRAME_INTERVAL_MIN, r * scale));
    }
    write(&out.join("irradiance_pred.csv"), csv)?;
    let maps = pred.attention.as_ref().map(|w| attention_maps(w, cfg.repr_size)).unwrap_or_default();
    for (k, bytes) in maps.iter().enumerate() {
        write(&out.join(format!("attention_step{}.pgm", k + 1)), bytes)?;
    }
    let mut snapshot = KeyValues::new();
    snapshot.set("persistence", use_persistence);
    manifest.config = snapshot;
    manifest.write()?;
    say!(
        "wrote {t} masks, {} attention maps and irradiance_pred.csv to {}",
        maps.len(),
        out.display()
    );
    Ok(())
}

pub fn gradcheck(m: &ArgMatches) -> Result<()> {
    let out = path_arg(m, "out");
    let mut manifest = out.as_deref().map(|o| RunManifest::start("gradcheck", o));
    let started = Instant::now();
    let suite = full_suite()?;
    let mut csv = String::from("check,max_rel_error,passed\n");
    say!("{:<40} {:>14}  status", "check", "max rel error");
    let mut failures = 0;
    for e in &suite {
        let err = e.max_rel_error();
        let ok = err < DEFAULT_TOLERANCE;
        failures += usize::from(!ok);
        say!("{:<40} {:>14.3e}  {}", e.name, err, if ok { "ok" } else { "FAIL" });
        csv.push_str(&format!("{},{:e},{}\n", e.name, err, ok));
    }
    say!(
        "{} checks, {failures} above {DEFAULT_TOLERANCE:e}, {:.1}s",
        suite.len(),
        started.elapsed().as_secs_f64()
    );
    if let (Some(out), Some(manifest)) = (out, manifest.as_mut()) {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join("gradcheck.csv"), csv)?;
        manifest.config.set("tolerance", DEFAULT_TOLERANCE);
        manifest.write()?;
    }
    if failures > 0 {
        return Err(anyhow!("{failures} gradient check(s) exceed the tolerance"));
    }
    Ok(())
}
