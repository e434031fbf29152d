//! Temporal attention over the look-back representations.
//!
//! Spatial variants compute one softmax over the `t` steps at every pixel;
//! the mean variant computes one softmax over the steps for the whole frame.
//! In both, the weight for a step multiplies every class channel of that
//! step's representation.

use tlf_tensor::{Conv2dSpec, Var};

use super::config::{AttentionVariant, ModelConfig};
use super::convlstm::ConvLstm;
use super::layers::{batch_norm, conv, dense};
use super::params::Forward;
use crate::error::{input_err, Result};

pub struct AttentionOut {
    pub attended: Vec<Var>,
    /// `[B, h, w, t]` for spatial variants, `[B, t]` for the mean variant.
    pub weights: Option<Var>,
}

/// The per-step channels attention looks at: the cloud channel, or all
/// channels with the all-channels flag.
fn attention_inputs(fw: &mut Forward, cfg: &ModelConfig, reprs: &[Var]) -> Result<Vec<Var>> {
    reprs
        .iter()
        .map(|&r| {
            if cfg.attention_all_channels {
                Ok(r)
            } else {
                Ok(fw.g.slice_last(r, cfg.cloud_class, 1)?)
            }
        })
        .collect()
}

/// Scale every step by its per-pixel weight, replicated over channels.
pub fn apply_spatial(fw: &mut Forward, reprs: &[Var], weights: Var) -> Result<Vec<Var>> {
    let t = *fw.g.shape(weights).last().unwrap();
    if t != reprs.len() {
        return Err(input_err(format!("{t} attention weights for {} steps", reprs.len())));
    }
    reprs
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let wk = fw.g.slice_last(weights, k, 1)?;
            Ok(fw.g.mul_bcast(r, wk)?)
        })
        .collect()
}

/// Scale every step by its scalar weight from `[B, t]`.
pub fn apply_mean(fw: &mut Forward, reprs: &[Var], weights: Var) -> Result<Vec<Var>> {
    let ws = fw.g.shape(weights).to_vec();
    if ws[1] != reprs.len() {
        return Err(input_err(format!("{} attention weights for {} steps", ws[1], reprs.len())));
    }
    reprs
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let wk = fw.g.slice_last(weights, k, 1)?;
            let wk = fw.g.reshape(wk, &[ws[0], 1, 1, 1])?;
            Ok(fw.g.mul_bcast(r, wk)?)
        })
        .collect()
}

pub fn spatial_attention(fw: &mut Forward, cfg: &ModelConfig, reprs: &[Var]) -> Result<AttentionOut> {
    let t = reprs.len();
    let inputs = attention_inputs(fw, cfg, reprs)?;
    let features = match cfg.attention {
        AttentionVariant::SpatialConvLstm => {
            let lstm = ConvLstm::new("attention.convlstm", cfg.attention_filters, cfg.attention_kernel);
            *lstm.sequence(fw, &inputs)?.last().unwrap()
        }
        _ => {
            let stacked = fw.g.concat_last(&inputs)?;
            conv(
                fw,
                "attention.conv",
                stacked,
                cfg.attention_filters,
                cfg.attention_kernel,
                Conv2dSpec::same(),
            )?
        }
    };
    let normed = batch_norm(fw, "attention.bn", features)?;
    let logits = dense(fw, "attention.dense", normed, t)?;
    let weights = fw.g.softmax(logits, 3)?;
    let attended = apply_spatial(fw, reprs, weights)?;
    Ok(AttentionOut {
        attended,
        weights: Some(weights),
    })
}

pub fn mean_attention(fw: &mut Forward, cfg: &ModelConfig, reprs: &[Var]) -> Result<AttentionOut> {
    let inputs = attention_inputs(fw, cfg, reprs)?;
    let mut means = Vec::with_capacity(inputs.len());
    for x in inputs {
        let s = fw.g.shape(x).to_vec();
        let flat = fw.g.reshape(x, &[s[0], s[1] * s[2] * s[3]])?;
        let m = fw.g.mean_axis(flat, 1)?;
        means.push(fw.g.reshape(m, &[s[0], 1])?);
    }
    let stacked = fw.g.concat_last(&means)?;
    let logits = dense(fw, "attention.dense", stacked, reprs.len())?;
    let weights = fw.g.softmax(logits, 1)?;
    let attended = apply_mean(fw, reprs, weights)?;
    Ok(AttentionOut {
        attended,
        weights: Some(weights),
    })
}

pub fn attention(fw: &mut Forward, cfg: &ModelConfig, reprs: &[Var]) -> Result<AttentionOut> {
    match cfg.attention {
        AttentionVariant::None => Ok(AttentionOut {
            attended: reprs.to_vec(),
            weights: None,
        }),
        AttentionVariant::Mean => mean_attention(fw, cfg, reprs),
        AttentionVariant::SpatialConv | AttentionVariant::SpatialConvLstm => spatial_attention(fw, cfg, reprs),
    }
}
