use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.record("reshape", &[x], out, Box::new(|c| vec![Some(c.grad.to_vec())]))
    }

    /// Concatenate along the leading axis.
    pub fn concat_outer(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let lens: Vec<usize> = values.iter().map(|v| v.len()).collect();
        let out = Tensor::concat_outer(&values)?;
        self.record(
            "concat_outer",
            parts,
            out,
            Box::new(move |c| {
                let mut off = 0;
                lens.iter()
                    .map(|&n| {
                        let g = c.grad[off..off + n].to_vec();
                        off += n;
                        Some(g)
                    })
                    .collect()
            }),
        )
    }

    /// Rows `[start, start+len)` of the leading axis.
    pub fn slice_outer(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_outer(start, len)?;
        let total = self.value(x).len();
        let stride = total / self.shape(x)[0];
        self.record(
            "slice_outer",
            &[x],
            out,
            Box::new(move |c| {
                let mut dx = vec![0.0; total];
                dx[start * stride..(start + len) * stride].copy_from_slice(c.grad);
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenate along the last (channel) axis; leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| arg_err("concat_last", "no inputs"))?).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat_last", format!("{s:?} vs {first:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + col..r * total + col + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(&shape, out)?;
        self.record(
            "concat_last",
            parts,
            out,
            Box::new(move |c| {
                let mut col = 0;
                widths
                    .iter()
                    .zip(&c.needs)
                    .map(|(&w, &need)| {
                        let start = col;
                        col += w;
                        need.then(|| {
                            let mut g = vec![0.0; rows * w];
                            for r in 0..rows {
                                g[r * w..(r + 1) * w]
                                    .copy_from_slice(&c.grad[r * total + start..r * total + start + w]);
                            }
                            g
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Channels `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let total = *s.last().unwrap();
        if len == 0 || start + len > total {
            return Err(arg_err(
                "slice_last",
                format!("range {start}..{} outside {total} channels", start + len),
            ));
        }
        let rows = self.value(x).len() / total;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * total + start..r * total + start + len]);
        }
        let mut shape = s.clone();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(&shape, out)?;
        self.record(
            "slice_last",
            &[x],
            out,
            Box::new(move |c| {
                let mut dx = vec![0.0; rows * total];
                for r in 0..rows {
                    dx[r * total + start..r * total + start + len]
                        .copy_from_slice(&c.grad[r * len..(r + 1) * len]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Split the leading axis into `n` equal parts.
    pub fn split_outer(&mut self, x: Var, n: usize) -> Result<Vec<Var>> {
        let lead = self.shape(x)[0];
        if n == 0 || !lead.is_multiple_of(n) {
            return Err(arg_err("split_outer", format!("{lead} rows into {n} parts")));
        }
        let step = lead / n;
        (0..n).map(|i| self.slice_outer(x, i * step, step)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_slice_last_roundtrip() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_fn(&[2, 2, 1], |i| i as f64), true);
        let b = g.leaf(Tensor::from_fn(&[2, 2, 3], |i| 10.0 + i as f64), true);
        let c = g.concat_last(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[2, 2, 4]);
        assert_eq!(&g.value(c).data()[..4], &[0.0, 10.0, 11.0, 12.0]);
        let back = g.slice_last(c, 1, 3).unwrap();
        assert_eq!(g.value(back), g.value(b));
        let s = g.sum_all(back).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(a).data(), &[0.0; 4]);
        assert_eq!(gr.get(b).data(), &[1.0; 12]);
    }

    #[test]
    fn outer_concat_split() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(&[1, 3], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[2, 3], |i| -(i as f64)));
        let c = g.concat_outer(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[3, 3]);
        let parts = g.split_outer(c, 3).unwrap();
        assert_eq!(g.value(parts[0]), g.value(a));
        assert!(g.split_outer(c, 2).is_err());
    }
}
