//! Now model: frame → representation I → {class probabilities, measure}.

use tlf_tensor::{Conv2dSpec, Graph, Mode, Tensor, Var};

use super::config::ModelConfig;
use super::layers::{batch_norm, conv, dense};
use super::params::{Forward, ParamStore};
use crate::error::{config_err, input_err, Result};

pub const ENCODER: &str = "encoder.";
pub const MEASURE: &str = "measure.";

/// Residual encoder: stride-2 blocks, one dilated stride-1 block, then a
/// 1×1 projection to one channel per class. `x` is `[B, H, W, 3]` in [0, 1].
pub fn encoder(fw: &mut Forward, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let s = fw.g.shape(x).to_vec();
    if s.len() != 4 || s[1] != cfg.frame_size || s[2] != cfg.frame_size || s[3] != 3 {
        return Err(input_err(format!(
            "encoder expects [B,{0},{0},3] frames, got {s:?}",
            cfg.frame_size
        )));
    }
    let mut h = x;
    let last = cfg.encoder_channels.len() - 1;
    for (i, &ch) in cfg.encoder_channels.iter().enumerate() {
        let p = format!("encoder.block{i}");
        let spec = if i == last {
            Conv2dSpec::same().with_dilation(cfg.encoder_dilation)
        } else {
            Conv2dSpec::same().with_stride(2)
        };
        let main = conv(fw, &format!("{p}.conv"), h, ch, 3, spec)?;
        let main = batch_norm(fw, &format!("{p}.bn"), main)?;
        let cin = *fw.g.shape(h).last().unwrap();
        let shortcut = if i == last && cin == ch {
            h
        } else {
            conv(fw, &format!("{p}.proj"), h, ch, 1, Conv2dSpec::same().with_stride(spec.stride))?
        };
        let sum = fw.g.add(main, shortcut)?;
        h = fw.g.relu(sum)?;
    }
    conv(fw, "encoder.repr", h, cfg.classes, 1, Conv2dSpec::same())
}

/// Upsample the representation to frame resolution and normalize over
/// classes.
pub fn segment_head(g: &mut Graph, cfg: &ModelConfig, repr: Var) -> Result<Var> {
    let up = g.bilinear_upsample(repr, cfg.factor())?;
    Ok(g.softmax(up, 3)?)
}

pub struct MeasureOut {
    /// `[B, 1]`
    pub value: Var,
    /// Final feature map `[B, h'', w'', F]` before dropout and aggregation.
    pub features: Var,
}

/// Two valid 3×3 conv + batch-norm + ReLU blocks, dropout, flatten, dense to 1.
pub fn measure_head(fw: &mut Forward, cfg: &ModelConfig, repr: Var) -> Result<MeasureOut> {
    let s = fw.g.shape(repr).to_vec();
    if s[1] < 5 || s[2] < 5 {
        return Err(config_err(format!(
            "measure head needs a representation of at least 5x5, got {}x{}",
            s[1], s[2]
        )));
    }
    let mut h = repr;
    for i in 0..2 {
        h = conv(fw, &format!("measure.conv{i}"), h, cfg.measure_filters, 3, Conv2dSpec::valid())?;
        h = batch_norm(fw, &format!("measure.bn{i}"), h)?;
        h = fw.g.relu(h)?;
    }
    let features = h;
    let mode = fw.mode_for("measure.dropout");
    let mut rng = fw.rng.clone();
    let dropped = fw.g.dropout(features, cfg.measure_dropout, mode, &mut rng)?;
    fw.rng = rng;
    let fs = fw.g.shape(features).to_vec();
    let flat = fw.g.reshape(dropped, &[fs[0], fs[1] * fs[2] * fs[3]])?;
    let value = dense(fw, "measure.out", flat, 1)?;
    Ok(MeasureOut { value, features })
}

/// Per-location partial measures `Σ_ch w·F` of infer-mode features
/// `[B, h'', w'', F]`, returned as `[B, h'', w'']`. Their sum plus the
/// output bias is the measure.
pub fn contribution_map(store: &ParamStore, features: &Tensor, mode: Mode) -> Result<Tensor> {
    if mode != Mode::Infer {
        return Err(input_err("contribution map is only defined in infer mode"));
    }
    let s = features.shape();
    let w = store
        .get("measure.out.weight")
        .ok_or_else(|| config_err("missing measure.out.weight"))?;
    let per_item = s[1] * s[2] * s[3];
    if w.shape() != [1, per_item] {
        return Err(input_err(format!(
            "features {s:?} do not match measure weight {:?}",
            w.shape()
        )));
    }
    let f = s[3];
    let mut out = vec![0.0; s[0] * s[1] * s[2]];
    for (loc, o) in out.iter_mut().enumerate() {
        let row = &features.data()[loc * f..(loc + 1) * f];
        let wl = &w.data()[(loc % (s[1] * s[2])) * f..][..f];
        *o = row.iter().zip(wl).map(|(a, b)| a * b).sum();
    }
    Ok(Tensor::new(&[s[0], s[1], s[2]], out)?)
}

pub fn measure_bias(store: &ParamStore) -> Result<f64> {
    Ok(store
        .get("measure.out.bias")
        .ok_or_else(|| config_err("missing measure.out.bias"))?
        .item())
}

pub struct NowForward {
    pub repr: Var,
    pub probs: Var,
    pub measure: MeasureOut,
}

pub fn now_forward(fw: &mut Forward, cfg: &ModelConfig, frames: Var) -> Result<NowForward> {
    let repr = encoder(fw, cfg, frames)?;
    let probs = segment_head(fw.g, cfg, repr)?;
    let measure = measure_head(fw, cfg, repr)?;
    Ok(NowForward { repr, probs, measure })
}

/// Concrete outputs for a batch of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NowPrediction {
    /// `[B, H, W, c]`
    pub probs: Tensor,
    pub measure: Vec<f64>,
    /// `[B, h', w', c]`
    pub repr: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NowModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

/// Frames per inference graph; bounds memory on long sequences.
const INFER_CHUNK: usize = 32;

impl NowModel {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, seed);
        let x = fw.g.constant(Tensor::zeros(&[1, cfg.frame_size, cfg.frame_size, 3]));
        now_forward(&mut fw, &cfg, x)?;
        Ok(NowModel { cfg, store })
    }

    pub fn predict(&self, frames: &Tensor) -> Result<NowPrediction> {
        let b = frames.shape()[0];
        let mut probs = Vec::new();
        let mut reprs = Vec::new();
        let mut measure = Vec::with_capacity(b);
        for start in (0..b).step_by(INFER_CHUNK) {
            let chunk = frames.slice_outer(start, INFER_CHUNK.min(b - start))?;
            let mut g = Graph::new();
            let mut fw = Forward::new(&mut g, &self.store, Mode::Infer, 0);
            let x = fw.g.constant(chunk);
            let out = now_forward(&mut fw, &self.cfg, x)?;
            probs.push(g.value(out.probs).clone());
            reprs.push(g.value(out.repr).clone());
            measure.extend_from_slice(g.value(out.measure.value).data());
        }
        Ok(NowPrediction {
            probs: Tensor::concat_outer(&probs.iter().collect::<Vec<_>>())?,
            measure,
            repr: Tensor::concat_outer(&reprs.iter().collect::<Vec<_>>())?,
        })
    }

    /// Representations only, in infer mode.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        encode(&self.store, &self.cfg, frames)
    }

    /// Contribution maps `[B, h'', w'']`, the output bias and the measures.
    pub fn contributions(&self, frames: &Tensor) -> Result<(Tensor, f64, Vec<f64>)> {
        let mut g = Graph::new();
        let mut fw = Forward::new(&mut g, &self.store, Mode::Infer, 0);
        let x = fw.g.constant(frames.clone());
        let out = now_forward(&mut fw, &self.cfg, x)?;
        let map = contribution_map(&self.store, g.value(out.measure.features), Mode::Infer)?;
        Ok((map, measure_bias(&self.store)?, g.value(out.measure.value).data().to_vec()))
    }
}

/// Decode representations `[N, h', w', c]` with the segment and measure
/// heads in infer mode.
pub fn decode(store: &ParamStore, cfg: &ModelConfig, reprs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let mut g = Graph::new();
    let mut fw = Forward::new(&mut g, store, Mode::Infer, 0);
    let r = fw.g.constant(reprs.clone());
    let probs = segment_head(fw.g, cfg, r)?;
    let m = measure_head(&mut fw, cfg, r)?;
    Ok((g.value(probs).clone(), g.value(m.value).data().to_vec()))
}

/// Infer-mode representations `[B, h', w', c]` of frames `[B, H, W, 3]`.
pub fn encode(store: &ParamStore, cfg: &ModelConfig, frames: &Tensor) -> Result<Tensor> {
    let b = frames.shape()[0];
    let mut reprs = Vec::new();
    for start in (0..b).step_by(INFER_CHUNK) {
        let chunk = frames.slice_outer(start, INFER_CHUNK.min(b - start))?;
        let mut g = Graph::new();
        let mut fw = Forward::new(&mut g, store, Mode::Infer, 0);
        let x = fw.g.constant(chunk);
        let r = encoder(&mut fw, cfg, x)?;
        reprs.push(g.value(r).clone());
    }
    Ok(Tensor::concat_outer(&reprs.iter().collect::<Vec<_>>())?)
}
