//! 2-D convolution over channel-last `[B, H, W, C]` tensors, lowered to a
//! single matrix product through an im2col buffer.

use crate::error::{arg_err, shape_err, Result};
use crate::gemm::{matmul, matmul_nt, matmul_tn};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `⌊dilation·(k−1)/2⌋` on each side.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Conv2dSpec {
    pub fn same() -> Self {
        Conv2dSpec {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }

    pub fn valid() -> Self {
        Conv2dSpec {
            padding: Padding::Valid,
            ..Self::same()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dil: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Pointwise stride-1 case where the input already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
}

fn geometry(x: &[usize], k: &[usize], spec: Conv2dSpec) -> Result<Geometry> {
    if x.len() != 4 || k.len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("expected [B,H,W,C] input and [Co,Ci,kh,kw] kernel, got {x:?} and {k:?}"),
        ));
    }
    let (batch, h, w, cin) = (x[0], x[1], x[2], x[3]);
    let (cout, kcin, kh, kw) = (k[0], k[1], k[2], k[3]);
    if kcin != cin {
        return Err(shape_err(
            "conv2d",
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(arg_err("conv2d", format!("kernel extent {kh}x{kw} must be odd")));
    }
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(arg_err("conv2d", "stride and dilation must be >= 1"));
    }
    let dil = spec.dilation;
    let (pad_h, pad_w) = match spec.padding {
        Padding::Same => (dil * (kh - 1) / 2, dil * (kw - 1) / 2),
        Padding::Valid => (0, 0),
    };
    let span_h = dil * (kh - 1) + 1;
    let span_w = dil * (kw - 1) + 1;
    if h + 2 * pad_h < span_h || w + 2 * pad_w < span_w {
        return Err(shape_err(
            "conv2d",
            format!("{h}x{w} input too small for dilated {kh}x{kw} kernel"),
        ));
    }
    let ho = (h + 2 * pad_h - span_h) / spec.stride + 1;
    let wo = (w + 2 * pad_w - span_w) / spec.stride + 1;
    Ok(Geometry {
        batch,
        h,
        w,
        cin,
        cout,
        kh,
        kw,
        stride: spec.stride,
        dil,
        pad_h,
        pad_w,
        ho,
        wo,
    })
}

/// Visit every (row, column-block start, input offset) triple of the im2col
/// matrix; `f` receives the destination offset and the source pixel offset.
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize)) {
    let patch = g.patch();
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = (b * g.ho + oy) * g.wo + ox;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky * g.dil) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx * g.dil) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = row * patch + (ky * g.kw + kx) * g.cin;
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        f(dst, src);
                    }
                }
            }
        }
    }
}

fn im2col(g: &Geometry, x: &[f64]) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.patch()];
    let cin = g.cin;
    for_each_tap(g, |dst, src| {
        cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
    });
    cols
}

fn col2im(g: &Geometry, cols: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.h * g.w * g.cin];
    let cin = g.cin;
    for_each_tap(g, |dst, src| {
        for (d, c) in dx[src..src + cin].iter_mut().zip(&cols[dst..dst + cin]) {
            *d += c;
        }
    });
    dx
}

/// Kernel `[Co, Ci, kh, kw]` rearranged to the `[(ky, kx, ci), co]` matrix.
fn kernel_matrix(g: &Geometry, k: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; g.patch() * g.cout];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let src = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    let row = (ky * g.kw + kx) * g.cin + ci;
                    m[row * g.cout + co] = k[src];
                }
            }
        }
    }
    m
}

fn kernel_from_matrix(g: &Geometry, m: &[f64]) -> Vec<f64> {
    let mut k = vec![0.0; g.patch() * g.cout];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let dst = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    let row = (ky * g.kw + kx) * g.cin + ci;
                    k[dst] = m[row * g.cout + co];
                }
            }
        }
    }
    k
}

impl Graph {
    /// Convolve `x: [B,H,W,Ci]` with `kernel: [Co,Ci,kh,kw]` plus `bias: [Co]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, spec: Conv2dSpec) -> Result<Var> {
        let g = geometry(self.shape(x), self.shape(kernel), spec)?;
        if self.shape(bias) != [g.cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", self.shape(bias), g.cout),
            ));
        }
        let kmat = kernel_matrix(&g, self.value(kernel).data());
        let xv = self.value(x).data();
        let cols = if g.is_pointwise() { None } else { Some(im2col(&g, xv)) };
        let a = cols.as_deref().unwrap_or(xv);
        let rows = g.rows();
        let mut out = vec![0.0; rows * g.cout];
        let bv = self.value(bias).data();
        for r in 0..rows {
            out[r * g.cout..(r + 1) * g.cout].copy_from_slice(bv);
        }
        matmul(a, &kmat, &mut out, rows, g.patch(), g.cout, true);
        let out = Tensor::new(&[g.batch, g.ho, g.wo, g.cout], out)?;
        self.record(
            "conv2d",
            &[x, kernel, bias],
            out,
            Box::new(move |c| {
                let dy = c.grad;
                let rows = g.rows();
                let patch = g.patch();
                let a = cols.as_deref().unwrap_or(c.inputs[0].data());
                let dx = c.needs[0].then(|| {
                    let mut dcols = vec![0.0; rows * patch];
                    matmul_nt(dy, &kmat, &mut dcols, rows, g.cout, patch, false);
                    if g.is_pointwise() {
                        dcols
                    } else {
                        col2im(&g, &dcols)
                    }
                });
                let dk = c.needs[1].then(|| {
                    let mut dm = vec![0.0; patch * g.cout];
                    matmul_tn(a, dy, &mut dm, patch, rows, g.cout, false);
                    kernel_from_matrix(&g, &dm)
                });
                let db = c.needs[2].then(|| {
                    let mut db = vec![0.0; g.cout];
                    for row in dy.chunks_exact(g.cout) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    db
                });
                vec![dx, dk, db]
            }),
        )
    }
}
