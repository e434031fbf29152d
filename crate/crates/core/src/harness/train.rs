//! Training loops for the now model, the future model and the
//! autoregressive baseline.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tlf_tensor::{Graph, Mode, Tensor, TensorError, Var};

use super::config::TrainConfig;
use super::optim::{adam_step, OptimizerState};
use crate::data::{frames_to_batch, masks_to_one_hot, Mask, VideoSequence};
use crate::error::{input_err, Error, Result};
use crate::losses::{total_loss, LossTerms};
use crate::model::baselines::next_repr;
use crate::model::future::{future_from_frames, future_from_reprs};
use crate::model::now::{encode, now_forward, segment_head, measure_head, ENCODER, MEASURE};
use crate::model::params::{Forward, ParamStore};
use crate::model::{ArModel, FutureModel, ModelConfig, NowModel};

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub segment: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LossRow>,
}

pub const LOSS_LOG_HEADER: &str = "epoch,step,lr,total_loss,segment_loss,measure_loss";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.step, r.lr, r.total, r.segment, r.measure
            ));
        }
        out
    }

    /// Mean total loss of every epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.rows.iter().filter(|r| r.epoch == e).map(|r| r.total).collect();
                rows.iter().sum::<f64>() / rows.len().max(1) as f64
            })
            .collect()
    }
}

/// Stream seed for step `step` of epoch `epoch`.
fn mix(seed: u64, epoch: usize, step: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn nonfinite(epoch: usize, step: usize, items: &[usize]) -> Error {
    Error::NonFiniteLoss {
        epoch,
        step,
        items: items.to_vec(),
    }
}

/// Shared minibatch loop: seeded shuffle per epoch, one Adam step per batch,
/// running statistics updated after each step.
fn run<F>(
    store: &mut ParamStore,
    items: usize,
    cfg: &TrainConfig,
    frozen: &[&str],
    mut build: F,
) -> Result<TrainLog>
where
    F: FnMut(&mut Forward, &[usize]) -> Result<LossTerms>,
{
    cfg.validate()?;
    if items == 0 {
        return Err(input_err("training set is empty"));
    }
    let mut state = OptimizerState::new();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        let mut order: Vec<usize> = (0..items).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch, usize::MAX)));
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let mut fw = Forward::new(&mut g, store, Mode::Train, mix(cfg.seed, epoch, step));
            for p in frozen {
                fw = fw.freeze(p);
            }
            let terms = build(&mut fw, batch).map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite { .. }) => nonfinite(epoch, step, batch),
                other => other,
            })?;
            let bn = fw.take_bn_updates();
            let value = |v: Var| g.value(v).item();
            let row = LossRow {
                epoch,
                step,
                lr,
                total: value(terms.total),
                segment: value(terms.segment),
                measure: value(terms.measure),
            };
            if !row.total.is_finite() {
                return Err(nonfinite(epoch, step, batch));
            }
            let grads = g.backward(terms.total)?.params();
            adam_step(store, &grads, &mut state, lr, cfg.weight_decay)?;
            store.apply_bn_updates(&bn);
            log.rows.push(row);
        }
    }
    Ok(log)
}

/// `(sequence, frame)` index of every frame.
pub fn frame_index(seqs: &[VideoSequence]) -> Vec<(usize, usize)> {
    seqs.iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..seq.len()).map(move |f| (s, f)))
        .collect()
}

/// `(sequence, start)` of every window of `2·look_back` consecutive frames.
pub fn window_index(seqs: &[VideoSequence], look_back: usize) -> Vec<(usize, usize)> {
    seqs.iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..(seq.len() + 1).saturating_sub(2 * look_back)).map(move |st| (s, st)))
        .collect()
}

pub fn train_now(model: &mut NowModel, seqs: &[VideoSequence], cfg: &TrainConfig) -> Result<TrainLog> {
    let index = frame_index(seqs);
    let mcfg = model.cfg.clone();
    run(&mut model.store, index.len(), cfg, &[], |fw, batch| {
        let refs: Vec<(usize, usize)> = batch.iter().map(|&i| index[i]).collect();
        let frames = frames_to_batch(&refs.iter().map(|&(s, f)| &seqs[s].frames[f]).collect::<Vec<_>>());
        let masks: Vec<&Mask> = refs.iter().map(|&(s, f)| &seqs[s].masks[f]).collect();
        let target = masks_to_one_hot(&masks, mcfg.classes);
        let irr: Vec<f64> = refs.iter().map(|&(s, f)| seqs[s].irradiance[f]).collect();
        let x = fw.g.constant(frames);
        let out = now_forward(fw, &mcfg, x)?;
        total_loss(fw.g, out.probs, &target, out.measure.value, &irr, &cfg.loss)
    })
}

/// Infer-mode representations of every frame of every sequence.
pub fn encode_sequences(store: &ParamStore, cfg: &ModelConfig, seqs: &[VideoSequence]) -> Result<Vec<Tensor>> {
    seqs.iter()
        .map(|s| encode(store, cfg, &frames_to_batch(&s.frames.iter().collect::<Vec<_>>())))
        .collect()
}

/// Representation `k` of sequence `s` for each `(s, k)`, stacked `[B, h', w', c]`.
pub fn gather_reprs(reprs: &[Tensor], picks: &[(usize, usize)]) -> Result<Tensor> {
    let parts: Vec<Tensor> = picks
        .iter()
        .map(|&(s, k)| reprs[s].slice_outer(k, 1))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Tensor::concat_outer(&parts.iter().collect::<Vec<_>>())?)
}

/// Targets for horizons `1..=t` of the given windows, horizon-major.
fn future_targets(seqs: &[VideoSequence], wins: &[(usize, usize)], t: usize, classes: usize) -> (Tensor, Vec<f64>) {
    let mut masks = Vec::with_capacity(t * wins.len());
    let mut irr = Vec::with_capacity(t * wins.len());
    for k in 0..t {
        for &(s, st) in wins {
            masks.push(&seqs[s].masks[st + t + k]);
            irr.push(seqs[s].irradiance[st + t + k]);
        }
    }
    (masks_to_one_hot(&masks, classes), irr)
}

/// Train attention, recurrent stack and measure head on the horizon-averaged
/// loss. With a frozen encoder its representations are computed once up
/// front.
pub fn train_future(model: &mut FutureModel, seqs: &[VideoSequence], cfg: &TrainConfig) -> Result<TrainLog> {
    let mcfg = model.cfg.clone();
    let t = mcfg.look_back;
    let windows = window_index(seqs, t);
    if windows.is_empty() {
        return Err(input_err(format!("no sequence holds {} consecutive frames", 2 * t)));
    }
    let frozen_encoder = mcfg.freeze_encoder;
    let cache = if frozen_encoder {
        Some(encode_sequences(&model.store, &mcfg, seqs)?)
    } else {
        None
    };
    let frozen: &[&str] = if frozen_encoder { &[ENCODER] } else { &[] };
    run(&mut model.store, windows.len(), cfg, frozen, |fw, batch| {
        let wins: Vec<(usize, usize)> = batch.iter().map(|&i| windows[i]).collect();
        let out = match &cache {
            Some(reprs) => {
                let inputs: Vec<Var> = (0..t)
                    .map(|k| {
                        let picks: Vec<(usize, usize)> = wins.iter().map(|&(s, st)| (s, st + k)).collect();
                        Ok(fw.g.constant(gather_reprs(reprs, &picks)?))
                    })
                    .collect::<Result<_>>()?;
                future_from_reprs(fw, &mcfg, &inputs)?
            }
            None => {
                let inputs: Vec<Var> = (0..t)
                    .map(|k| {
                        let fr: Vec<_> = wins.iter().map(|&(s, st)| &seqs[s].frames[st + k]).collect();
                        fw.g.constant(frames_to_batch(&fr))
                    })
                    .collect();
                future_from_frames(fw, &mcfg, &inputs)?
            }
        };
        let (target, irr) = future_targets(seqs, &wins, t, mcfg.classes);
        total_loss(fw.g, out.probs, &target, out.measure.value, &irr, &cfg.loss)
    })
}

/// Train the next-representation model on every `(k previous → next)`
/// pair, decoding through the frozen now heads.
pub fn train_autoregressive(model: &mut ArModel, seqs: &[VideoSequence], cfg: &TrainConfig) -> Result<TrainLog> {
    let mcfg = model.cfg.clone();
    let k = mcfg.ar_context;
    let reprs = encode_sequences(&model.store, &mcfg, seqs)?;
    let pairs: Vec<(usize, usize)> = seqs
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (k..seq.len()).map(move |j| (s, j)))
        .collect();
    if pairs.is_empty() {
        return Err(input_err("no sequence is longer than the autoregressive context"));
    }
    run(&mut model.store, pairs.len(), cfg, &[ENCODER, MEASURE], |fw, batch| {
        let picked: Vec<(usize, usize)> = batch.iter().map(|&i| pairs[i]).collect();
        let ctx: Vec<Var> = (0..k)
            .map(|c| {
                let picks: Vec<(usize, usize)> = picked.iter().map(|&(s, j)| (s, j - k + c)).collect();
                Ok(fw.g.constant(gather_reprs(&reprs, &picks)?))
            })
            .collect::<Result<_>>()?;
        let next = next_repr(fw, &mcfg, &ctx)?;
        let probs = segment_head(fw.g, &mcfg, next)?;
        let m = measure_head(fw, &mcfg, next)?;
        let masks: Vec<&Mask> = picked.iter().map(|&(s, j)| &seqs[s].masks[j]).collect();
        let target = masks_to_one_hot(&masks, mcfg.classes);
        let irr: Vec<f64> = picked.iter().map(|&(s, j)| seqs[s].irradiance[j]).collect();
        total_loss(fw.g, probs, &target, m.value, &irr, &cfg.loss)
    })
}
