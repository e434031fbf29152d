use crate::error::{arg_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{split_axis, Tensor};

impl Graph {
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let out = Tensor::scalar(self.value(x).sum());
        self.record("sum_all", &[x], out, Box::new(move |c| vec![Some(vec![c.grad[0]; n])]))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let s = self.sum_all(x)?;
        let n = self.value(x).len() as f64;
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, which is removed from the shape (a rank-1 input
    /// reduces to shape `[1]`).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "sum_axis")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        let out = Tensor::new(&reduced_shape(&shape, axis), out)?;
        self.record(
            "sum_axis",
            &[x],
            out,
            Box::new(move |c| {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        dx[base..base + inner].copy_from_slice(&c.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| arg_err("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    /// Maximum over `axis` (removed from the shape) and the winning indices;
    /// ties resolve to the lowest index, which also receives the gradient.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "max_axis")?;
        let arg = self.value(x).argmax_axis(axis)?;
        let xv = self.value(x).data();
        let out: Vec<f64> = arg
            .iter()
            .enumerate()
            .map(|(j, &k)| xv[(j / inner * len + k) * inner + j % inner])
            .collect();
        let out = Tensor::new(&reduced_shape(&shape, axis), out)?;
        let winners = arg.clone();
        let v = self.record(
            "max_axis",
            &[x],
            out,
            Box::new(move |c| {
                let mut dx = vec![0.0; outer * len * inner];
                for (j, &k) in winners.iter().enumerate() {
                    dx[(j / inner * len + k) * inner + j % inner] += c.grad[j];
                }
                vec![Some(dx)]
            }),
        )?;
        Ok((v, arg))
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}
