//! Reference forecasters: persistence and an autoregressive next-frame model.

use tlf_tensor::{Conv2dSpec, Graph, Mode, Tensor, Var};

use super::config::ModelConfig;
use super::future::FuturePrediction;
use super::layers::{conv, conv_init};
use super::now::{decode, NowModel, ENCODER, MEASURE};
use super::params::{Forward, Init, ParamStore};
use crate::error::{input_err, Result};

pub const AR: &str = "ar.";

/// Repeat the now prediction for the last input frame at every horizon.
/// `last_frames` is `[B, H, W, 3]`.
pub fn persistence_predict(now: &NowModel, last_frames: &Tensor, horizons: usize) -> Result<FuturePrediction> {
    let p = now.predict(last_frames)?;
    Ok(FuturePrediction {
        probs: vec![p.probs; horizons],
        measure: vec![p.measure; horizons],
        reprs: vec![p.repr; horizons],
        attention: None,
    })
}

/// Next representation from the last `k` ones: two 5×5 convolutions over
/// their channel concatenation, added to the most recent representation.
/// The output convolution starts at zero, so an untrained model repeats
/// its input.
pub fn next_repr(fw: &mut Forward, cfg: &ModelConfig, context: &[Var]) -> Result<Var> {
    if context.len() != cfg.ar_context {
        return Err(input_err(format!(
            "autoregressive model needs {} representations, got {}",
            cfg.ar_context,
            context.len()
        )));
    }
    let x = fw.g.concat_last(context)?;
    let h = conv(fw, "ar.conv0", x, cfg.ar_filters, 5, Conv2dSpec::same())?;
    let h = fw.g.relu(h)?;
    let delta = conv_init(fw, "ar.out", h, cfg.classes, 5, Conv2dSpec::same(), Some(Init::Const(0.0)))?;
    Ok(fw.g.add(*context.last().unwrap(), delta)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

impl ArModel {
    pub fn init(cfg: ModelConfig, now: &NowModel, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        store.copy_prefix(&now.store, ENCODER);
        store.copy_prefix(&now.store, MEASURE);
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, seed);
        let r = cfg.repr_size;
        let ctx: Vec<Var> = (0..cfg.ar_context)
            .map(|_| fw.g.constant(Tensor::zeros(&[1, r, r, cfg.classes])))
            .collect();
        next_repr(&mut fw, &cfg, &ctx)?;
        Ok(ArModel { cfg, store })
    }

    /// Feed each prediction back as input for `horizons` steps.
    pub fn rollout(&self, reprs: &[Tensor], horizons: usize) -> Result<Vec<Tensor>> {
        let k = self.cfg.ar_context;
        if reprs.len() < k {
            return Err(input_err(format!(
                "window of {} representations is shorter than the context {k}",
                reprs.len()
            )));
        }
        let mut ctx: Vec<Tensor> = reprs[reprs.len() - k..].to_vec();
        let mut out = Vec::with_capacity(horizons);
        for _ in 0..horizons {
            let mut g = Graph::new();
            let mut fw = Forward::new(&mut g, &self.store, Mode::Infer, 0);
            let vars: Vec<Var> = ctx.iter().map(|t| fw.g.constant(t.clone())).collect();
            let next = next_repr(&mut fw, &self.cfg, &vars)?;
            let next = g.value(next).clone();
            ctx.remove(0);
            ctx.push(next.clone());
            out.push(next);
        }
        Ok(out)
    }

    pub fn predict_reprs(&self, reprs: &[Tensor], horizons: usize) -> Result<FuturePrediction> {
        let preds = self.rollout(reprs, horizons)?;
        let mut out = FuturePrediction {
            probs: Vec::with_capacity(horizons),
            measure: Vec::with_capacity(horizons),
            reprs: Vec::with_capacity(horizons),
            attention: None,
        };
        for r in preds {
            let (probs, m) = decode(&self.store, &self.cfg, &r)?;
            out.probs.push(probs);
            out.measure.push(m);
            out.reprs.push(r);
        }
        Ok(out)
    }
}
