use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{strides_of, Tensor};

fn same_shape(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

/// For each flat index of `out_shape`, the flat index into a same-rank
/// `b_shape` whose unit extents broadcast.
pub(crate) fn broadcast_offsets(out_shape: &[usize], b_shape: &[usize]) -> Vec<usize> {
    let b_strides = strides_of(b_shape);
    let eff: Vec<usize> = b_shape
        .iter()
        .zip(&b_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let n: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn check_broadcast(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    let ok = sa.len() == sb.len() && sa.iter().zip(sb).all(|(&x, &y)| x == y || y == 1);
    if !ok {
        return Err(shape_err(op, format!("cannot broadcast {sb:?} onto {sa:?}")));
    }
    Ok(())
}

fn reduce_to(offsets: &[usize], grad: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (&o, &g) in offsets.iter().zip(grad) {
        out[o] += g;
    }
    out
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.record(
            "add",
            &[a, b],
            out,
            Box::new(|c| vec![Some(c.grad.to_vec()), Some(c.grad.to_vec())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.record(
            "sub",
            &[a, b],
            out,
            Box::new(|c| {
                vec![
                    Some(c.grad.to_vec()),
                    Some(c.grad.iter().map(|g| -g).collect()),
                ]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(|c| {
                let (x, y) = (c.inputs[0].data(), c.inputs[1].data());
                vec![
                    c.needs[0].then(|| c.grad.iter().zip(y).map(|(g, v)| g * v).collect()),
                    c.needs[1].then(|| c.grad.iter().zip(x).map(|(g, v)| g * v).collect()),
                ]
            }),
        )
    }

    /// `a + b` where `b` has the rank of `a` and unit extents broadcast.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast(self, a, b, "add_bcast")?;
        let offsets = broadcast_offsets(self.shape(a), self.shape(b));
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(&offsets)
            .map(|(x, &o)| x + vb.data()[o])
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        let blen = vb.len();
        self.record(
            "add_bcast",
            &[a, b],
            out,
            Box::new(move |c| {
                vec![
                    Some(c.grad.to_vec()),
                    c.needs[1].then(|| reduce_to(&offsets, c.grad, blen)),
                ]
            }),
        )
    }

    /// `a * b` where `b` has the rank of `a` and unit extents broadcast.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast(self, a, b, "mul_bcast")?;
        let offsets = broadcast_offsets(self.shape(a), self.shape(b));
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(&offsets)
            .map(|(x, &o)| x * vb.data()[o])
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        let blen = vb.len();
        self.record(
            "mul_bcast",
            &[a, b],
            out,
            Box::new(move |c| {
                let (x, y) = (c.inputs[0].data(), c.inputs[1].data());
                let ga = c.needs[0].then(|| {
                    c.grad
                        .iter()
                        .zip(&offsets)
                        .map(|(g, &o)| g * y[o])
                        .collect()
                });
                let gb = c.needs[1].then(|| {
                    let mut out = vec![0.0; blen];
                    for ((g, &o), xv) in c.grad.iter().zip(&offsets).zip(x) {
                        out[o] += g * xv;
                    }
                    out
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |c| vec![Some(c.grad.iter().map(|g| g * s).collect())]),
        )
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.record("add_scalar", &[a], out, Box::new(|c| vec![Some(c.grad.to_vec())]))
    }

    /// Elementwise map with derivative expressed through input and output.
    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let out = self.value(a).map(f);
        self.record(
            op,
            &[a],
            out,
            Box::new(move |c| {
                let x = c.inputs[0].data();
                let y = c.output.data();
                vec![Some(
                    c.grad
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (&xv, &yv))| g * df(xv, yv))
                        .collect(),
                )]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, |_, y| y)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(arg_err("log", "non-positive input"));
        }
        self.unary("log", a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, |x, _| 2.0 * x)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
