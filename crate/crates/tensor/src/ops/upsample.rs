use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Source taps `(lo, hi, weight_hi)` for each output coordinate along one
/// axis, using half-pixel centres with edge clamping.
fn axis_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl Graph {
    /// Bilinear upsampling of `[B,h,w,C]` by an integer factor.
    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(arg_err("bilinear_upsample", "factor must be >= 1"));
        }
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(shape_err("bilinear_upsample", format!("expected [B,h,w,C], got {s:?}")));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let ty = axis_taps(h, factor);
        let tx = axis_taps(w, factor);
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; b * ho * wo * c];
        for bi in 0..b {
            let base = bi * h * w * c;
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let dst = ((bi * ho + oy) * wo + ox) * c;
                    let p00 = base + (y0 * w + x0) * c;
                    let p01 = base + (y0 * w + x1) * c;
                    let p10 = base + (y1 * w + x0) * c;
                    let p11 = base + (y1 * w + x1) * c;
                    for ch in 0..c {
                        let top = xv[p00 + ch] * (1.0 - wx) + xv[p01 + ch] * wx;
                        let bot = xv[p10 + ch] * (1.0 - wx) + xv[p11 + ch] * wx;
                        out[dst + ch] = top * (1.0 - wy) + bot * wy;
                    }
                }
            }
        }
        let out = Tensor::new(&[b, ho, wo, c], out)?;
        self.record(
            "bilinear_upsample",
            &[x],
            out,
            Box::new(move |ctx| {
                let dy = ctx.grad;
                let mut dx = vec![0.0; b * h * w * c];
                for bi in 0..b {
                    let base = bi * h * w * c;
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let src = ((bi * ho + oy) * wo + ox) * c;
                            let taps = [
                                (base + (y0 * w + x0) * c, (1.0 - wy) * (1.0 - wx)),
                                (base + (y0 * w + x1) * c, (1.0 - wy) * wx),
                                (base + (y1 * w + x0) * c, wy * (1.0 - wx)),
                                (base + (y1 * w + x1) * c, wy * wx),
                            ];
                            for (p, wt) in taps {
                                for ch in 0..c {
                                    dx[p + ch] += wt * dy[src + ch];
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
