//! Evaluation protocol: same-frame scores for the now model and per-horizon
//! scores for future predictors, all on the same windows.

use tlf_tensor::Tensor;

use super::train::{encode_sequences, gather_reprs, window_index};
use crate::data::{frames_to_batch, Mask, VideoSequence, FRAME_INTERVAL_MIN};
use crate::error::{input_err, Result};
use crate::metrics::{HorizonAccumulator, MetricsReport};
use crate::model::{persistence_predict, ArModel, FutureModel, FuturePrediction, NowModel};

/// Windows per inference batch.
const EVAL_BATCH: usize = 16;

/// Class labels of every item of a `[B, H, W, c]` probability batch.
pub fn labels_of(probs: &Tensor) -> Result<Vec<Mask>> {
    let s = probs.shape();
    (0..s[0])
        .map(|b| {
            let one = probs.slice_outer(b, 1)?.reshape(&s[1..])?;
            Mask::from_probs(&one)
        })
        .collect()
}

fn report(accs: &[HorizonAccumulator], first_horizon: u32) -> Result<MetricsReport> {
    Ok(MetricsReport {
        horizons: accs
            .iter()
            .enumerate()
            .map(|(k, a)| a.finish((first_horizon + k as u32) * FRAME_INTERVAL_MIN))
            .collect::<Result<_>>()?,
    })
}

/// Score the now model on every frame.
pub fn evaluate_now(model: &NowModel, seqs: &[VideoSequence]) -> Result<MetricsReport> {
    let mut acc = HorizonAccumulator::new(model.cfg.classes);
    for seq in seqs {
        let p = model.predict(&frames_to_batch(&seq.frames.iter().collect::<Vec<_>>()))?;
        for ((m, gt), (r, rg)) in labels_of(&p.probs)?
            .iter()
            .zip(&seq.masks)
            .zip(p.measure.iter().zip(&seq.irradiance))
        {
            acc.add(m, gt, *r, *rg)?;
        }
    }
    if acc.samples == 0 {
        return Err(input_err("evaluation set is empty"));
    }
    report(&[acc], 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FutureEvaluation {
    pub model: Option<MetricsReport>,
    pub persistence: Option<MetricsReport>,
    pub autoregressive: Option<MetricsReport>,
}

fn accumulate(
    accs: &mut [HorizonAccumulator],
    pred: &FuturePrediction,
    seqs: &[VideoSequence],
    wins: &[(usize, usize)],
    t: usize,
) -> Result<()> {
    for (k, acc) in accs.iter_mut().enumerate() {
        let labels = labels_of(&pred.probs[k])?;
        for (b, &(s, st)) in wins.iter().enumerate() {
            let j = st + t + k;
            acc.add(&labels[b], &seqs[s].masks[j], pred.measure[k][b], seqs[s].irradiance[j])?;
        }
    }
    Ok(())
}

/// Score a future predictor on every window of `2t` frames.
/// `predict` receives a batch of `(sequence, start)` windows and returns
/// the `t` horizons for them.
pub fn score_future<F>(seqs: &[VideoSequence], look_back: usize, classes: usize, mut predict: F) -> Result<MetricsReport>
where
    F: FnMut(&[(usize, usize)]) -> Result<FuturePrediction>,
{
    let t = look_back;
    let windows = window_index(seqs, t);
    if windows.is_empty() {
        return Err(input_err("evaluation set holds no complete window"));
    }
    let mut accs = vec![HorizonAccumulator::new(classes); t];
    for wins in windows.chunks(EVAL_BATCH) {
        let pred = predict(wins)?;
        if pred.horizons() != t {
            return Err(input_err(format!("predictor returned {} horizons, expected {t}", pred.horizons())));
        }
        accumulate(&mut accs, &pred, seqs, wins, t)?;
    }
    report(&accs, 1)
}

/// Representations of step `k` of each window.
fn step_inputs(reprs: &[Tensor], wins: &[(usize, usize)], t: usize) -> Result<Vec<Tensor>> {
    (0..t)
        .map(|k| gather_reprs(reprs, &wins.iter().map(|&(s, st)| (s, st + k)).collect::<Vec<_>>()))
        .collect()
}

/// Score the future model and, when given, the persistence and
/// autoregressive baselines on the same windows.
pub fn evaluate_future(
    model: Option<&FutureModel>,
    now: Option<&NowModel>,
    ar: Option<&ArModel>,
    seqs: &[VideoSequence],
    look_back: usize,
) -> Result<FutureEvaluation> {
    let t = look_back;
    let classes = model
        .map(|m| m.cfg.classes)
        .or(now.map(|n| n.cfg.classes))
        .or(ar.map(|a| a.cfg.classes))
        .ok_or_else(|| input_err("nothing to evaluate"))?;
    if let Some(m) = model {
        if m.cfg.look_back != t {
            return Err(input_err("future model look-back differs from the protocol"));
        }
    }
    let model = model
        .map(|m| -> Result<MetricsReport> {
            let reprs = encode_sequences(&m.store, &m.cfg, seqs)?;
            score_future(seqs, t, classes, |wins| m.predict_reprs(&step_inputs(&reprs, wins, t)?))
        })
        .transpose()?;
    let persistence = now
        .map(|n| {
            score_future(seqs, t, classes, |wins| {
                let last: Vec<_> = wins.iter().map(|&(s, st)| &seqs[s].frames[st + t - 1]).collect();
                persistence_predict(n, &frames_to_batch(&last), t)
            })
        })
        .transpose()?;
    let autoregressive = ar
        .map(|a| -> Result<MetricsReport> {
            let reprs = encode_sequences(&a.store, &a.cfg, seqs)?;
            score_future(seqs, t, classes, |wins| a.predict_reprs(&step_inputs(&reprs, wins, t)?, t))
        })
        .transpose()?;
    Ok(FutureEvaluation {
        model,
        persistence,
        autoregressive,
    })
}
