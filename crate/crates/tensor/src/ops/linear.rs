use crate::error::{shape_err, Result};
use crate::gemm::{matmul, matmul_nt, matmul_tn};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Affine map over the last axis: `x: [.., n]`, `weight: [m, n]`, `bias: [m]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let n = *xs.last().unwrap();
        if ws.len() != 2 || ws[1] != n || self.shape(bias) != [ws[0]] {
            return Err(shape_err(
                "dense",
                format!(
                    "input {xs:?}, weight {ws:?}, bias {:?}",
                    self.shape(bias)
                ),
            ));
        }
        let m = ws[0];
        let rows = self.value(x).len() / n;
        let mut out = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            out.extend_from_slice(self.value(bias).data());
        }
        matmul_nt(self.value(x).data(), self.value(weight).data(), &mut out, rows, n, m, true);
        let mut os = xs.clone();
        *os.last_mut().unwrap() = m;
        let out = Tensor::new(&os, out)?;
        self.record(
            "dense",
            &[x, weight, bias],
            out,
            Box::new(move |c| {
                let dy = c.grad;
                let dx = c.needs[0].then(|| {
                    let mut dx = vec![0.0; rows * n];
                    matmul(dy, c.inputs[1].data(), &mut dx, rows, m, n, false);
                    dx
                });
                let dw = c.needs[1].then(|| {
                    let mut dw = vec![0.0; m * n];
                    matmul_tn(dy, c.inputs[0].data(), &mut dw, m, rows, n, false);
                    dw
                });
                let db = c.needs[2].then(|| {
                    let mut db = vec![0.0; m];
                    for row in dy.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    db
                });
                vec![dx, dw, db]
            }),
        )
    }
}
