//! Segmentation and measure losses as differentiable graph operations.
//!
//! Probabilities are `[.., c]` tensors with classes on the last axis and are
//! clipped to `[PROB_CLIP, 1 − PROB_CLIP]` before any logarithm. Every
//! segmentation loss is a mean over pixels; the measure loss is a mean over
//! batch items.

use tlf_tensor::{Graph, Tensor, Var};

use crate::error::{config_err, input_err, Result};
use crate::kv::KeyValues;

pub const PROB_CLIP: f64 = 1e-7;

/// Which focal-loss expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FocalForm {
    /// `−α (1 − p_t)^γ log p_t` on the true-class probability.
    Canonical,
    /// Per class: `−α x^γ log x' + (1 − x)^γ log(1 − x')`, kept for ablation.
    AsPrinted,
}

impl std::str::FromStr for FocalForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "canonical" => Ok(FocalForm::Canonical),
            "as-printed" => Ok(FocalForm::AsPrinted),
            _ => Err(format!("unknown focal form `{s}`")),
        }
    }
}

impl std::fmt::Display for FocalForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FocalForm::Canonical => "canonical",
            FocalForm::AsPrinted => "as-printed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the segmentation term relative to the measure term.
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Log-cosh magnification.
    pub m: f64,
    /// Physical irradiance (W/m²) corresponding to 1.0 normalized.
    pub irradiance_scale: f64,
    pub focal_form: FocalForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            gamma: 2.0,
            alpha: 0.5,
            m: 100.0,
            irradiance_scale: 1000.0,
            focal_form: FocalForm::Canonical,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(config_err("loss gamma must be >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("loss alpha must lie in (0, 1]"));
        }
        if !(self.m > 0.0) {
            return Err(config_err("loss m must be > 0"));
        }
        if !(self.lambda >= 0.0) {
            return Err(config_err("loss lambda must be >= 0"));
        }
        if !(self.irradiance_scale > 0.0) {
            return Err(config_err("irradiance_scale must be > 0"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("lambda", self.lambda);
        kv.set("gamma", self.gamma);
        kv.set("alpha", self.alpha);
        kv.set("m", self.m);
        kv.set("irradiance_scale", self.irradiance_scale);
        kv.set("focal_form", self.focal_form);
        kv
    }

    pub fn apply_kv(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read("lambda", &mut self.lambda)?;
        kv.read("gamma", &mut self.gamma)?;
        kv.read("alpha", &mut self.alpha)?;
        kv.read("m", &mut self.m)?;
        kv.read("irradiance_scale", &mut self.irradiance_scale)?;
        kv.read("focal_form", &mut self.focal_form)?;
        self.validate()
    }

    /// λ that makes the weighted segmentation term match the measure term,
    /// given their unweighted values on a reference batch.
    pub fn calibrated_lambda(segment: f64, measure: f64) -> f64 {
        if segment > 0.0 {
            measure / segment
        } else {
            1.0
        }
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// d clip(p) / dp
fn clip_slope(p: f64) -> f64 {
    if (PROB_CLIP..=1.0 - PROB_CLIP).contains(&p) {
        1.0
    } else {
        0.0
    }
}

/// Class index of every pixel of a one-hot target.
fn true_classes(target: &Tensor) -> Result<Vec<usize>> {
    let c = *target.shape().last().unwrap();
    target
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut hot = None;
            for (k, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if hot.is_some() {
                        return Err(input_err("target row has more than one hot class"));
                    }
                    hot = Some(k);
                } else if v != 0.0 {
                    return Err(input_err(format!("target value {v} is not one-hot")));
                }
            }
            hot.ok_or_else(|| input_err("target row has no hot class"))
        })
        .collect()
}

fn check_pair(g: &Graph, probs: Var, target: &Tensor, op: &str) -> Result<Vec<usize>> {
    if g.shape(probs) != target.shape() {
        return Err(input_err(format!(
            "{op}: prediction {:?} vs target {:?}",
            g.shape(probs),
            target.shape()
        )));
    }
    true_classes(target)
}

/// Per-pixel loss `ℓ(p_t)` of the true-class probability, averaged, with
/// `dℓ/dp_t` supplied for backward.
fn true_class_loss(
    g: &mut Graph,
    probs: Var,
    classes: Vec<usize>,
    op: &'static str,
    loss: impl Fn(f64) -> f64,
    dloss: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<Var> {
    let c = *g.shape(probs).last().unwrap();
    let pixels = classes.len();
    let p = g.value(probs).data();
    let total: f64 = classes
        .iter()
        .enumerate()
        .map(|(i, &k)| loss(clip(p[i * c + k])))
        .sum();
    let value = Tensor::scalar(total / pixels as f64);
    Ok(g.record(
        op,
        &[probs],
        value,
        Box::new(move |ctx| {
            let p = ctx.inputs[0].data();
            let scale = ctx.grad[0] / pixels as f64;
            let mut dp = vec![0.0; p.len()];
            for (i, &k) in classes.iter().enumerate() {
                let pt = p[i * c + k];
                dp[i * c + k] = scale * dloss(clip(pt)) * clip_slope(pt);
            }
            vec![Some(dp)]
        }),
    )?)
}

/// Mean over pixels of `−Σ_c target·log(pred)`.
pub fn cross_entropy(g: &mut Graph, probs: Var, target: &Tensor) -> Result<Var> {
    let classes = check_pair(g, probs, target, "cross_entropy")?;
    true_class_loss(g, probs, classes, "cross_entropy", |p| -p.ln(), |p| -1.0 / p)
}

pub fn focal_loss(g: &mut Graph, probs: Var, target: &Tensor, gamma: f64, alpha: f64, form: FocalForm) -> Result<Var> {
    let classes = check_pair(g, probs, target, "focal_loss")?;
    match form {
        FocalForm::Canonical => true_class_loss(
            g,
            probs,
            classes,
            "focal_loss",
            move |p| -alpha * (1.0 - p).powf(gamma) * p.ln(),
            move |p| {
                let modulating = (1.0 - p).powf(gamma);
                let slope = if gamma == 0.0 {
                    0.0
                } else {
                    gamma * (1.0 - p).powf(gamma - 1.0)
                };
                alpha * (slope * p.ln() - modulating / p)
            },
        ),
        FocalForm::AsPrinted => focal_as_printed(g, probs, classes, gamma, alpha),
    }
}

fn focal_as_printed(g: &mut Graph, probs: Var, classes: Vec<usize>, gamma: f64, alpha: f64) -> Result<Var> {
    let c = *g.shape(probs).last().unwrap();
    let pixels = classes.len();
    // x is the one-hot target: x^γ and (1−x)^γ are 1 or 0 (with 0^0 = 1).
    let weights = move |hot: bool| -> (f64, f64) {
        let x: f64 = if hot { 1.0 } else { 0.0 };
        (x.powf(gamma), (1.0 - x).powf(gamma))
    };
    let p = g.value(probs).data();
    let mut total = 0.0;
    for (i, &k) in classes.iter().enumerate() {
        for j in 0..c {
            let q = clip(p[i * c + j]);
            let (a, b) = weights(j == k);
            total += -alpha * a * q.ln() + b * (1.0 - q).ln();
        }
    }
    let value = Tensor::scalar(total / pixels as f64);
    Ok(g.record(
        "focal_loss_as_printed",
        &[probs],
        value,
        Box::new(move |ctx| {
            let p = ctx.inputs[0].data();
            let scale = ctx.grad[0] / pixels as f64;
            let mut dp = vec![0.0; p.len()];
            for (i, &k) in classes.iter().enumerate() {
                for j in 0..c {
                    let raw = p[i * c + j];
                    let q = clip(raw);
                    let (a, b) = weights(j == k);
                    dp[i * c + j] = scale * clip_slope(raw) * (-alpha * a / q - b / (1.0 - q));
                }
            }
            vec![Some(dp)]
        }),
    )?)
}

/// `log(m·cosh(δ))` evaluated without overflow.
pub fn logcosh_value(delta: f64, m: f64) -> f64 {
    let a = delta.abs();
    m.ln() + a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Mean over items of `log(m·cosh(pred − target))`.
pub fn logcosh_loss(g: &mut Graph, pred: Var, target: &[f64], m: f64) -> Result<Var> {
    let p = g.value(pred).data();
    if p.len() != target.len() {
        return Err(input_err(format!(
            "logcosh_loss: {} predictions vs {} targets",
            p.len(),
            target.len()
        )));
    }
    let n = p.len() as f64;
    let deltas: Vec<f64> = p.iter().zip(target).map(|(a, b)| a - b).collect();
    let value = Tensor::scalar(deltas.iter().map(|&d| logcosh_value(d, m)).sum::<f64>() / n);
    Ok(g.record(
        "logcosh_loss",
        &[pred],
        value,
        Box::new(move |ctx| {
            let s = ctx.grad[0] / n;
            vec![Some(deltas.iter().map(|d| s * d.tanh()).collect())]
        }),
    )?)
}

/// Handles to the pieces of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    /// Focal + cross-entropy (unweighted).
    pub segment: Var,
    pub measure: Var,
}

/// `λ·(focal + CE) + logcosh`. Batching several horizons along the leading
/// axis yields the horizon average, since every horizon has the same pixel
/// and item counts.
pub fn total_loss(
    g: &mut Graph,
    mask_probs: Var,
    mask_target: &Tensor,
    measure: Var,
    measure_target: &[f64],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let ce = cross_entropy(g, mask_probs, mask_target)?;
    let fl = focal_loss(g, mask_probs, mask_target, cfg.gamma, cfg.alpha, cfg.focal_form)?;
    let segment = g.add(fl, ce)?;
    let measure = logcosh_loss(g, measure, measure_target, cfg.m)?;
    let weighted = g.scale(segment, cfg.lambda)?;
    let total = g.add(weighted, measure)?;
    Ok(LossTerms {
        total,
        segment,
        measure,
    })
}
