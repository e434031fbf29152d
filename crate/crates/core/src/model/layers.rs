//! Parameterized building blocks over [`Forward`].

use tlf_tensor::{Conv2dSpec, Var};

use super::params::{Forward, Init};
use crate::error::Result;

/// Convolution with kernel `{name}.kernel` and bias `{name}.bias`.
pub fn conv(fw: &mut Forward, name: &str, x: Var, cout: usize, k: usize, spec: Conv2dSpec) -> Result<Var> {
    conv_init(fw, name, x, cout, k, spec, None)
}

/// As [`conv`], with an explicit kernel initializer (`None` = He).
pub fn conv_init(
    fw: &mut Forward,
    name: &str,
    x: Var,
    cout: usize,
    k: usize,
    spec: Conv2dSpec,
    kernel_init: Option<Init>,
) -> Result<Var> {
    let cin = *fw.g.shape(x).last().unwrap();
    let kernel = fw.param(
        &format!("{name}.kernel"),
        &[cout, cin, k, k],
        kernel_init.unwrap_or(Init::He(cin * k * k)),
    )?;
    let bias = fw.param(&format!("{name}.bias"), &[cout], Init::Const(0.0))?;
    Ok(fw.g.conv2d(x, kernel, bias, spec)?)
}

/// Batch normalization over every axis but the last.
pub fn batch_norm(fw: &mut Forward, name: &str, x: Var) -> Result<Var> {
    let c = *fw.g.shape(x).last().unwrap();
    let scale = fw.param(&format!("{name}.scale"), &[c], Init::Const(1.0))?;
    let shift = fw.param(&format!("{name}.shift"), &[c], Init::Const(0.0))?;
    let running = fw.running(name, c)?;
    let mode = fw.mode_for(name);
    let (y, stats) = fw.g.batch_norm(x, scale, shift, mode, &running)?;
    if let Some(s) = stats {
        fw.record_bn(name, s);
    }
    Ok(y)
}

/// Affine map over the last axis: `[.., n] → [.., m]`.
pub fn dense(fw: &mut Forward, name: &str, x: Var, m: usize) -> Result<Var> {
    let n = *fw.g.shape(x).last().unwrap();
    let w = fw.param(&format!("{name}.weight"), &[m, n], Init::He(n))?;
    let b = fw.param(&format!("{name}.bias"), &[m], Init::Const(0.0))?;
    Ok(fw.g.dense(x, w, b)?)
}
