use rand::Rng;

use crate::error::{arg_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::norm::Mode;
use crate::tensor::Tensor;

impl Graph {
    /// Inverted dropout: survivors are scaled by `1/(1−rate)`; identity in
    /// infer mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(arg_err("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.record(
            "dropout",
            &[x],
            out,
            Box::new(move |c| vec![Some(c.grad.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        )
    }
}
