//! Future model: look-back representations → attention → stacked ConvLSTM
//! → one predicted representation per horizon, decoded by the now heads.
//!
//! Horizon-stacked tensors put the horizon on the leading axis:
//! row `k·B + b` is horizon `k+1` of batch item `b`.

use tlf_tensor::{Conv2dSpec, Graph, Mode, Tensor, Var};

use super::attention::attention;
use super::config::ModelConfig;
use super::convlstm::ConvLstm;
use super::layers::{batch_norm, conv};
use super::now::{encoder, measure_head, segment_head, MeasureOut, NowModel, ENCODER, MEASURE};
use super::params::{Forward, ParamStore};
use crate::error::{input_err, Result};

pub const ATTENTION: &str = "attention.";
pub const CORE: &str = "core.";

/// ConvLSTM tiers with batch-norm over batch×time between them, then a
/// shared per-step convolution back to class channels. Returns the
/// horizon-stacked predictions `[t·B, h, w, c]`.
pub fn future_core(fw: &mut Forward, cfg: &ModelConfig, xs: &[Var]) -> Result<Var> {
    if xs.len() != cfg.look_back {
        return Err(input_err(format!(
            "future core expects {} steps, got {}",
            cfg.look_back,
            xs.len()
        )));
    }
    let mut seq = xs.to_vec();
    let mut stacked = None;
    for (l, &f) in cfg.convlstm_filters.iter().enumerate() {
        let lstm = ConvLstm::new(&format!("core.convlstm{l}"), f, cfg.convlstm_kernel);
        let hs = lstm.sequence(fw, &seq)?;
        let all = fw.g.concat_outer(&hs)?;
        let normed = batch_norm(fw, &format!("core.bn{l}"), all)?;
        seq = fw.g.split_outer(normed, xs.len())?;
        stacked = Some(normed);
    }
    conv(
        fw,
        "core.out",
        stacked.expect("at least one tier"),
        cfg.classes,
        cfg.convlstm_kernel,
        Conv2dSpec::same(),
    )
}

pub struct FutureForward {
    /// `[t·B, h', w', c]`
    pub reprs: Var,
    /// `[t·B, H, W, c]`
    pub probs: Var,
    pub measure: MeasureOut,
    pub attention: Option<Var>,
}

/// From `t` representations `[B, h', w', c]` to every horizon's outputs.
pub fn future_from_reprs(fw: &mut Forward, cfg: &ModelConfig, reprs: &[Var]) -> Result<FutureForward> {
    if reprs.len() != cfg.look_back {
        return Err(input_err(format!(
            "window has {} frames, model expects {}",
            reprs.len(),
            cfg.look_back
        )));
    }
    let att = attention(fw, cfg, reprs)?;
    let pred = future_core(fw, cfg, &att.attended)?;
    let probs = segment_head(fw.g, cfg, pred)?;
    let measure = measure_head(fw, cfg, pred)?;
    Ok(FutureForward {
        reprs: pred,
        probs,
        measure,
        attention: att.weights,
    })
}

/// From `t` frame batches `[B, H, W, 3]` through the encoder.
pub fn future_from_frames(fw: &mut Forward, cfg: &ModelConfig, frames: &[Var]) -> Result<FutureForward> {
    if frames.len() != cfg.look_back {
        return Err(input_err(format!(
            "window has {} frames, model expects {}",
            frames.len(),
            cfg.look_back
        )));
    }
    let stacked = fw.g.concat_outer(frames)?;
    let reprs = encoder(fw, cfg, stacked)?;
    let per_step = fw.g.split_outer(reprs, frames.len())?;
    future_from_reprs(fw, cfg, &per_step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuturePrediction {
    /// Per horizon `[B, H, W, c]`.
    pub probs: Vec<Tensor>,
    /// Per horizon, per batch item.
    pub measure: Vec<Vec<f64>>,
    /// Per horizon `[B, h', w', c]`.
    pub reprs: Vec<Tensor>,
    /// `[B, h', w', t]` or `[B, t]`.
    pub attention: Option<Tensor>,
}

impl FuturePrediction {
    pub fn horizons(&self) -> usize {
        self.probs.len()
    }

    /// Split horizon-stacked outputs.
    pub fn from_stacked(probs: &Tensor, measure: &[f64], reprs: &Tensor, attention: Option<Tensor>, t: usize) -> Result<Self> {
        let b = probs.shape()[0] / t;
        let mut out = FuturePrediction {
            probs: Vec::with_capacity(t),
            measure: Vec::with_capacity(t),
            reprs: Vec::with_capacity(t),
            attention,
        };
        for k in 0..t {
            out.probs.push(probs.slice_outer(k * b, b)?);
            out.reprs.push(reprs.slice_outer(k * b, b)?);
            out.measure.push(measure[k * b..(k + 1) * b].to_vec());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FutureModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

impl FutureModel {
    /// Encoder and measure head come from the now model; attention and
    /// recurrent parameters are freshly initialized.
    pub fn init(cfg: ModelConfig, now: &NowModel, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        store.copy_prefix(&now.store, ENCODER);
        store.copy_prefix(&now.store, MEASURE);
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, seed);
        let r = cfg.repr_size;
        let reprs: Vec<Var> = (0..cfg.look_back)
            .map(|_| fw.g.constant(Tensor::zeros(&[1, r, r, cfg.classes])))
            .collect();
        future_from_reprs(&mut fw, &cfg, &reprs)?;
        Ok(FutureModel { cfg, store })
    }

    /// Number of trainable scalars outside the encoder and heads.
    pub fn future_param_count(&self) -> usize {
        self.store.count(ATTENTION) + self.store.count(CORE)
    }

    /// Infer-mode prediction from `t` representation batches.
    pub fn predict_reprs(&self, reprs: &[Tensor]) -> Result<FuturePrediction> {
        let mut g = Graph::new();
        let mut fw = Forward::new(&mut g, &self.store, Mode::Infer, 0);
        let vars: Vec<Var> = reprs.iter().map(|r| fw.g.constant(r.clone())).collect();
        let out = future_from_reprs(&mut fw, &self.cfg, &vars)?;
        FuturePrediction::from_stacked(
            g.value(out.probs),
            g.value(out.measure.value).data(),
            g.value(out.reprs),
            out.attention.map(|a| g.value(a).clone()),
            self.cfg.look_back,
        )
    }

    /// Infer-mode prediction from `t` frame batches `[B, H, W, 3]`.
    pub fn predict_frames(&self, frames: &[Tensor]) -> Result<FuturePrediction> {
        let mut g = Graph::new();
        let mut fw = Forward::new(&mut g, &self.store, Mode::Infer, 0);
        let vars: Vec<Var> = frames.iter().map(|r| fw.g.constant(r.clone())).collect();
        let out = future_from_frames(&mut fw, &self.cfg, &vars)?;
        FuturePrediction::from_stacked(
            g.value(out.probs),
            g.value(out.measure.value).data(),
            g.value(out.reprs),
            out.attention.map(|a| g.value(a).clone()),
            self.cfg.look_back,
        )
    }
}
