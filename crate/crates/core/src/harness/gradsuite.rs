//! Finite-difference checks of every differentiable operation, loss and
//! model block, on small fixed inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlf_tensor::gradcheck::{grad_check, project, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use tlf_tensor::{Conv2dSpec, Graph, Mode, RunningStats, Tensor, TensorError, Var};

use crate::losses::{cross_entropy, focal_loss, logcosh_loss, total_loss, FocalForm, LossConfig};
use crate::model::attention::attention;
use crate::model::future::future_core;
use crate::model::now::segment_head;
use crate::model::{AttentionVariant, ConvLstm, ConvLstmState, Forward, ModelConfig, ParamStore};

/// Named result of one check.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error()
    }
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_onehot(n: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    Tensor::from_fn(&[n, c], |i| if ks[i / c] == i % c { 1.0 } else { 0.0 })
}

fn lift(e: crate::Error) -> TensorError {
    match e {
        crate::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "model",
            detail: other.to_string(),
        },
    }
}

fn run<F>(inputs: &[(&str, Tensor)], f: F) -> crate::Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> tlf_tensor::Result<Var>,
{
    Ok(grad_check(f, inputs, DEFAULT_STEP, DEFAULT_TOLERANCE)?)
}

fn entry(name: &str, report: crate::Result<GradCheckReport>) -> crate::Result<SuiteEntry> {
    Ok(SuiteEntry {
        name: name.to_string(),
        report: report?,
    })
}

pub fn op_checks() -> crate::Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    out.push(entry(
        "conv2d strided/valid",
        run(
            &[("x", random(&[2, 6, 5, 2], 4)), ("k", random(&[2, 2, 3, 3], 5)), ("b", random(&[2], 6))],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], Conv2dSpec::same().with_stride(2))?;
                let z = g.conv2d(v[0], v[1], v[2], Conv2dSpec::valid())?;
                let a = project(g, y, 1)?;
                let b = project(g, z, 2)?;
                g.add(a, b)
            },
        ),
    )?);
    out.push(entry(
        "conv2d dilated",
        run(
            &[("x", random(&[1, 5, 5, 2], 1)), ("k", random(&[3, 2, 3, 3], 2)), ("b", random(&[3], 3))],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], Conv2dSpec::same().with_dilation(2))?;
                project(g, y, 7)
            },
        ),
    )?);
    let rs = RunningStats {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 1.5, 2.0],
    };
    for (name, mode) in [("batch norm (train)", Mode::Train), ("batch norm (infer)", Mode::Infer)] {
        let rs = rs.clone();
        out.push(entry(
            name,
            run(
                &[("x", random(&[4, 2, 3], 31)), ("gamma", random(&[3], 32)), ("beta", random(&[3], 33))],
                move |g, v| {
                    let (y, _) = g.batch_norm(v[0], v[1], v[2], mode, &rs)?;
                    project(g, y, 3)
                },
            ),
        )?);
    }
    out.push(entry(
        "dense + softmax",
        run(
            &[("x", random(&[3, 4], 41)), ("w", random(&[5, 4], 42)), ("b", random(&[5], 43))],
            |g, v| {
                let y = g.dense(v[0], v[1], v[2])?;
                let s = g.softmax(y, 1)?;
                project(g, s, 4)
            },
        ),
    )?);
    out.push(entry(
        "upsample + pointwise",
        run(&[("x", random(&[1, 3, 2, 2], 51)), ("y", random(&[1, 3, 2, 2], 52))], |g, v| {
            let u = g.bilinear_upsample(v[0], 3)?;
            let t = g.tanh(u)?;
            let s = g.sigmoid(v[1])?;
            let e = g.exp(v[1])?;
            let m = g.mul(s, e)?;
            let d = g.sub(m, v[0])?;
            let q = g.square(d)?;
            let a = project(g, t, 6)?;
            let b = project(g, q, 7)?;
            g.add(a, b)
        }),
    )?);
    out.push(entry(
        "broadcast/structural/reductions",
        run(
            &[("x", random(&[2, 3, 4], 61)), ("a", random(&[2, 3, 1], 62)), ("b", random(&[1, 1, 4], 63))],
            |g, v| {
                let m = g.mul_bcast(v[0], v[1])?;
                let p = g.add_bcast(m, v[2])?;
                let c = g.concat_last(&[p, v[0]])?;
                let s = g.slice_last(c, 2, 4)?;
                let parts = g.split_outer(s, 2)?;
                let o = g.concat_outer(&[parts[1], parts[0]])?;
                let r = g.reshape(o, &[6, 4])?;
                let ma = g.mean_axis(r, 0)?;
                let sa = g.sum_axis(r, 1)?;
                let (mx, _) = g.max_axis(r, 1)?;
                let a = project(g, ma, 1)?;
                let b = project(g, sa, 2)?;
                let c = project(g, mx, 3)?;
                let ab = g.add(a, b)?;
                g.add(ab, c)
            },
        ),
    )?);
    Ok(out)
}

pub fn loss_checks() -> crate::Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let t = Tensor::new(&[2, 2, 1, 3], random_onehot(4, 3, 11).data().to_vec())?;
    out.push(entry(
        "cross entropy",
        run(&[("logits", random(&[2, 2, 1, 3], 12))], |g, v| {
            let p = g.softmax(v[0], 3)?;
            cross_entropy(g, p, &t).map_err(lift)
        }),
    )?);
    let t = random_onehot(5, 4, 13);
    for (gamma, form) in [(2.0, FocalForm::Canonical), (0.5, FocalForm::Canonical), (2.0, FocalForm::AsPrinted)] {
        out.push(entry(
            &format!("focal ({form:?}, gamma {gamma})"),
            run(&[("logits", random(&[5, 4], 14))], |g, v| {
                let p = g.softmax(v[0], 1)?;
                focal_loss(g, p, &t, gamma, 0.5, form).map_err(lift)
            }),
        )?);
    }
    let target = [0.2, -0.4, 1.1];
    out.push(entry(
        "logcosh",
        run(&[("pred", random(&[3, 1], 15))], |g, v| logcosh_loss(g, v[0], &target, 100.0).map_err(lift)),
    )?);
    let target = Tensor::new(&[1, 2, 2, 4], random_onehot(4, 4, 16).data().to_vec())?;
    let cfg = LossConfig {
        lambda: 0.7,
        ..LossConfig::default()
    };
    out.push(entry(
        "total loss",
        run(&[("logits", random(&[1, 2, 2, 4], 17)), ("measure", random(&[1, 1], 18))], |g, v| {
            let p = g.softmax(v[0], 3)?;
            total_loss(g, p, &target, v[1], &[0.5], &cfg).map(|t| t.total).map_err(lift)
        }),
    )?);
    Ok(out)
}

/// Tiny geometry for finite differences: 4×4 representations, two classes.
pub fn tiny_cfg(attention: AttentionVariant) -> ModelConfig {
    ModelConfig {
        frame_size: 8,
        classes: 2,
        repr_size: 4,
        look_back: 3,
        convlstm_filters: vec![3, 2],
        convlstm_kernel: 3,
        attention,
        attention_filters: 2,
        attention_kernel: 3,
        encoder_channels: vec![4, 4],
        cloud_class: 1,
        ..ModelConfig::default()
    }
}

/// Create every parameter `build` touches, then redraw all of them from
/// U(−0.5, 0.5). He-scale kernels feeding a batch-norm curve the loss too
/// much for a 1e-3 difference step; much larger weights saturate the gates
/// and leave gradients so small that truncation error dominates.
pub fn init_store<F>(seed: u64, build: F) -> crate::Result<ParamStore>
where
    F: Fn(&mut Forward) -> crate::Result<()>,
{
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, seed);
    build(&mut fw)?;
    for (i, (_, t)) in store.iter_mut().enumerate() {
        *t = random(t.shape(), seed * 1000 + i as u64).map(|v| 0.5 * v);
    }
    Ok(store)
}

/// Check with respect to the inputs and every parameter of `store`. `build`
/// maps input vars to a tensor which is projected to a scalar.
pub fn check_with_params<F>(store: &ParamStore, inputs: &[Tensor], build: F) -> crate::Result<GradCheckReport>
where
    F: Fn(&mut Forward, &[Var]) -> crate::Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut all: Vec<(String, Tensor)> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("input{i}"), t.clone()))
        .collect();
    all.extend(names.iter().map(|n| (n.clone(), store.get(n).unwrap().clone())));
    let named: Vec<(&str, Tensor)> = all.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let n_in = inputs.len();
    run(&named, |g, vars| {
        let mut fw = Forward::new(g, store, Mode::Train, 0);
        for (name, &v) in names.iter().zip(&vars[n_in..]) {
            fw.bind(name, v);
        }
        let y = build(&mut fw, &vars[..n_in]).map_err(lift)?;
        project(fw.g, y, 99)
    })
}

fn reprs(cfg: &ModelConfig, seed: u64) -> Vec<Tensor> {
    (0..cfg.look_back)
        .map(|k| random(&[1, cfg.repr_size, cfg.repr_size, cfg.classes], seed + k as u64))
        .collect()
}

pub fn convlstm_cell_check() -> crate::Result<GradCheckReport> {
    let lstm = ConvLstm::new("cell", 3, 3);
    let xs = vec![random(&[1, 4, 4, 2], 1), random(&[1, 4, 4, 2], 2)];
    let run = |fw: &mut Forward, x: &[Var]| -> crate::Result<Var> {
        let mut state = ConvLstmState::zeros(fw, 1, 4, 4, 3);
        for &xt in x {
            state = lstm.step(fw, xt, state)?;
        }
        Ok(fw.g.concat_last(&[state.hidden, state.cell])?)
    };
    let store = init_store(3, |fw| {
        let x: Vec<Var> = xs.iter().map(|t| fw.g.constant(t.clone())).collect();
        run(fw, &x).map(|_| ())
    })?;
    check_with_params(&store, &xs, run)
}

pub fn attention_check(variant: AttentionVariant) -> crate::Result<GradCheckReport> {
    let cfg = tiny_cfg(variant);
    let inputs = reprs(&cfg, 10);
    let run = |fw: &mut Forward, x: &[Var]| -> crate::Result<Var> {
        let out = attention(fw, &cfg, x)?;
        Ok(fw.g.concat_last(&out.attended)?)
    };
    let store = init_store(4, |fw| {
        let x: Vec<Var> = inputs.iter().map(|t| fw.g.constant(t.clone())).collect();
        run(fw, &x).map(|_| ())
    })?;
    check_with_params(&store, &inputs, run)
}

/// Attention, the unrolled recurrent stack and the segment head.
pub fn future_model_check(variant: AttentionVariant) -> crate::Result<GradCheckReport> {
    let cfg = tiny_cfg(variant);
    let inputs = reprs(&cfg, 20);
    let run = |fw: &mut Forward, x: &[Var]| -> crate::Result<Var> {
        let att = attention(fw, &cfg, x)?;
        let pred = future_core(fw, &cfg, &att.attended)?;
        segment_head(fw.g, &cfg, pred)
    };
    let store = init_store(5, |fw| {
        let x: Vec<Var> = inputs.iter().map(|t| fw.g.constant(t.clone())).collect();
        run(fw, &x).map(|_| ())
    })?;
    check_with_params(&store, &inputs, run)
}

pub fn model_checks() -> crate::Result<Vec<SuiteEntry>> {
    let mut out = vec![entry("convlstm cell", convlstm_cell_check())?];
    for v in [AttentionVariant::Mean, AttentionVariant::SpatialConv, AttentionVariant::SpatialConvLstm] {
        out.push(entry(&format!("attention {v}"), attention_check(v))?);
    }
    for v in [AttentionVariant::None, AttentionVariant::SpatialConv] {
        out.push(entry(&format!("future model ({v})"), future_model_check(v))?);
    }
    Ok(out)
}

/// Operations, losses and model blocks, in that order.
pub fn full_suite() -> crate::Result<Vec<SuiteEntry>> {
    let mut out = op_checks()?;
    out.extend(loss_checks()?);
    out.extend(model_checks()?);
    Ok(out)
}
