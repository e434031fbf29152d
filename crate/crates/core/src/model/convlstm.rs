//! Convolutional LSTM.
//!
//! Gates come from one convolution over the input and one over the previous
//! hidden state (equivalent to a single convolution over their channel
//! concatenation), in the order input, forget, output, candidate.

use tlf_tensor::{Conv2dSpec, Tensor, Var};

use super::params::{Forward, Init};
use crate::error::{input_err, Result};

#[derive(Debug, Clone, Copy)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl ConvLstmState {
    /// All-zero state for `[B, h, w, filters]`.
    pub fn zeros(fw: &mut Forward, batch: usize, h: usize, w: usize, filters: usize) -> Self {
        let hidden = fw.g.constant(Tensor::zeros(&[batch, h, w, filters]));
        let cell = fw.g.constant(Tensor::zeros(&[batch, h, w, filters]));
        ConvLstmState { hidden, cell }
    }
}

/// Parameters: `{name}.input.kernel [4f, in, k, k]`, `{name}.recurrent.kernel
/// [4f, f, k, k]` and `{name}.bias [4f]` with the forget slice set to 1.
pub struct ConvLstm {
    pub name: String,
    pub filters: usize,
    pub kernel: usize,
}

impl ConvLstm {
    pub fn new(name: &str, filters: usize, kernel: usize) -> Self {
        ConvLstm {
            name: name.to_string(),
            filters,
            kernel,
        }
    }

    fn input_gates(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let (f, k) = (self.filters, self.kernel);
        let cin = *fw.g.shape(x).last().unwrap();
        let wx = fw.param(&format!("{}.input.kernel", self.name), &[4 * f, cin, k, k], Init::He((cin + f) * k * k))?;
        let b = fw.param(
            &format!("{}.bias", self.name),
            &[4 * f],
            Init::Segment {
                start: f,
                len: f,
                value: 1.0,
            },
        )?;
        Ok(fw.g.conv2d(x, wx, b, Conv2dSpec::same())?)
    }

    fn recurrent_gates(&self, fw: &mut Forward, h: Var) -> Result<Var> {
        let (f, k) = (self.filters, self.kernel);
        let cin = *fw.g.shape(h).last().unwrap();
        let wh = fw.param(&format!("{}.recurrent.kernel", self.name), &[4 * f, f, k, k], Init::He((cin + f) * k * k))?;
        let zero = fw.g.constant(Tensor::zeros(&[4 * f]));
        Ok(fw.g.conv2d(h, wh, zero, Conv2dSpec::same())?)
    }

    /// Combine precomputed input-gate pre-activations with the recurrence.
    fn step_from_gates(&self, fw: &mut Forward, xg: Var, state: ConvLstmState) -> Result<ConvLstmState> {
        let f = self.filters;
        if fw.g.shape(state.hidden) != fw.g.shape(state.cell)
            || fw.g.shape(state.hidden)[..3] != fw.g.shape(xg)[..3]
            || *fw.g.shape(state.hidden).last().unwrap() != f
        {
            return Err(input_err(format!(
                "{}: state {:?}/{:?} does not match input {:?}",
                self.name,
                fw.g.shape(state.hidden),
                fw.g.shape(state.cell),
                fw.g.shape(xg)
            )));
        }
        let hg = self.recurrent_gates(fw, state.hidden)?;
        let z = fw.g.add(xg, hg)?;
        let gi = fw.g.slice_last(z, 0, f)?;
        let gf = fw.g.slice_last(z, f, f)?;
        let go = fw.g.slice_last(z, 2 * f, f)?;
        let gg = fw.g.slice_last(z, 3 * f, f)?;
        let i = fw.g.sigmoid(gi)?;
        let fg = fw.g.sigmoid(gf)?;
        let o = fw.g.sigmoid(go)?;
        let cand = fw.g.tanh(gg)?;
        let keep = fw.g.mul(fg, state.cell)?;
        let write = fw.g.mul(i, cand)?;
        let cell = fw.g.add(keep, write)?;
        let tc = fw.g.tanh(cell)?;
        let hidden = fw.g.mul(o, tc)?;
        Ok(ConvLstmState { hidden, cell })
    }

    /// One time step on `x: [B, h, w, in]`.
    pub fn step(&self, fw: &mut Forward, x: Var, state: ConvLstmState) -> Result<ConvLstmState> {
        let xg = self.input_gates(fw, x)?;
        self.step_from_gates(fw, xg, state)
    }

    /// Run over a sequence from a zero state; returns every hidden state.
    /// Input-gate convolutions for all steps run as one batched convolution.
    pub fn sequence(&self, fw: &mut Forward, xs: &[Var]) -> Result<Vec<Var>> {
        let first = xs.first().ok_or_else(|| input_err("empty ConvLSTM sequence"))?;
        let s = fw.g.shape(*first).to_vec();
        let stacked = fw.g.concat_outer(xs)?;
        let gates = self.input_gates(fw, stacked)?;
        let per_step = fw.g.split_outer(gates, xs.len())?;
        let mut state = ConvLstmState::zeros(fw, s[0], s[1], s[2], self.filters);
        let mut out = Vec::with_capacity(xs.len());
        for xg in per_step {
            state = self.step_from_gates(fw, xg, state)?;
            out.push(state.hidden);
        }
        Ok(out)
    }
}
