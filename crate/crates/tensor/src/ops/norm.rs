use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel moving averages used in inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running ← m·running + (1−m)·batch`
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

/// Statistics of one training-mode batch (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Graph {
    /// Batch normalization over every axis but the last (channel) axis.
    ///
    /// In train mode the returned batch statistics are what the caller feeds
    /// into [`RunningStats::update`]; in infer mode `running` is used as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: Mode,
        running: &RunningStats,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(x).to_vec();
        let c = *s.last().unwrap();
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(shape_err(
                "batch_norm",
                format!("scale/shift must be [{c}] for input {s:?}"),
            ));
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(shape_err("batch_norm", "running stats channel count"));
        }
        let xv = self.value(x).data();
        let n = xv.len() / c;
        if mode == Mode::Train && (s.len() < 2 || n == 0) {
            return Err(arg_err("batch_norm", "train mode needs a non-empty batch axis"));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for row in xv.chunks_exact(c) {
                    for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *acc += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Infer => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for (i, (&v, (h, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = i % c;
            *h = (v - mean[ch]) * inv_std[ch];
            *o = gamma[ch] * *h + beta[ch];
        }
        let out = Tensor::new(&s, out)?;
        let stats = (mode == Mode::Train).then(|| BatchStats {
            mean: mean.clone(),
            var: var.clone(),
        });
        let v = self.record(
            "batch_norm",
            &[x, scale, shift],
            out,
            Box::new(move |ctx| {
                let dy = ctx.grad;
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (&g, &h)) in dy.iter().zip(&xhat).enumerate() {
                    dgamma[i % c] += g * h;
                    dbeta[i % c] += g;
                }
                let dx = ctx.needs[0].then(|| match mode {
                    Mode::Infer => dy
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * gamma[i % c] * inv_std[i % c])
                        .collect(),
                    Mode::Train => {
                        // Σ dxhat and Σ dxhat·xhat per channel
                        let mut s1 = vec![0.0; c];
                        let mut s2 = vec![0.0; c];
                        for (i, (&g, &h)) in dy.iter().zip(&xhat).enumerate() {
                            let d = g * gamma[i % c];
                            s1[i % c] += d;
                            s2[i % c] += d * h;
                        }
                        let nf = n as f64;
                        dy.iter()
                            .zip(&xhat)
                            .enumerate()
                            .map(|(i, (&g, &h))| {
                                let ch = i % c;
                                let d = g * gamma[ch];
                                inv_std[ch] * (d - s1[ch] / nf - h * s2[ch] / nf)
                            })
                            .collect()
                    }
                });
                vec![dx, Some(dgamma), Some(dbeta)]
            }),
        )?;
        Ok((v, stats))
    }
}
