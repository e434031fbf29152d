//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome for one input of the checked function.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub elements: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// `|a − f| / max(|a|, |f|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the gradient of the scalar produced by `f` against central
/// differences for every element of every named input.
pub fn grad_check<F>(f: F, inputs: &[(&str, Tensor)], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(name, t)| g.param(name, t.clone()))
        .collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, (name, _)) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + step;
            let plus = eval(&values)?;
            values[i].data_mut()[j] = orig - step;
            let minus = eval(&values)?;
            values[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[j];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(InputReport {
            name: name.to_string(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            elements: values[i].len(),
        });
    }
    Ok(GradCheckReport {
        inputs: reports,
        tolerance,
    })
}

/// Reduce `y` to a scalar through fixed pseudo-random weights, so that every
/// output element contributes a distinct gradient.
pub fn project(g: &mut Graph, y: Var, salt: u64) -> Result<Var> {
    let w = projection_weights(g.shape(y), salt);
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    g.sum_all(p)
}

pub fn projection_weights(shape: &[usize], salt: u64) -> Tensor {
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    Tensor::from_fn(shape, |_| {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        0.5 + (z >> 11) as f64 / (1u64 << 53) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_ops_pass() {
        let x = Tensor::from_fn(&[2, 3], |i| (i as f64 * 0.77).sin());
        let r = grad_check(
            |g, v| {
                let t = g.tanh(v[0])?;
                let s = g.sigmoid(t)?;
                project(g, s, 1)
            },
            &[("x", x)],
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_rule_fails() {
        let x = Tensor::from_fn(&[4], |i| 0.3 + i as f64);
        let r = grad_check(
            |g, v| {
                let out = g.value(v[0]).map(|a| a * a);
                // wrong: claims d(x²)/dx = x
                let y = g.record(
                    "bad_square",
                    &[v[0]],
                    out,
                    Box::new(|c| {
                        vec![Some(
                            c.grad.iter().zip(c.inputs[0].data()).map(|(g, x)| g * x).collect(),
                        )]
                    }),
                )?;
                g.sum_all(y)
            },
            &[("x", x)],
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(!r.passed());
        assert!((r.max_rel_error() - 0.5).abs() < 1e-6);
    }
}
