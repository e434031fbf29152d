use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{split_axis, Tensor};

impl Graph {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis, "softmax")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len)
                    .map(|k| xv[base + k * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (xv[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= z;
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        self.record(
            "softmax",
            &[x],
            out,
            Box::new(move |c| {
                let y = c.output.data();
                let dy = c.grad;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|k| y[base + k * inner] * dy[base + k * inner])
                            .sum();
                        for k in 0..len {
                            let p = base + k * inner;
                            dx[p] = y[p] * (dy[p] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
