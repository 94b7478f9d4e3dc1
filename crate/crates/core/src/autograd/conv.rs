use std::rc::Rc;

use super::shape::gemm;
use super::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad: kernel / 2,
            dilation: 1,
        }
    }
}

struct Layout {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Layout {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.pad == 0
    }

    /// Visit every `(row, col, input index)` of the unfolded matrix that
    /// lands inside the input.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let n = self.ho * self.wo;
        let (s, p, d) = (
            self.geom.stride as isize,
            self.geom.pad as isize,
            self.geom.dilation as isize,
        );
        for ci in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ky as isize * d;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let in_row = (ci * self.h + iy as usize) * self.w;
                        let col_row = row * n + oy * self.wo;
                        for ox in 0..self.wo {
                            let ix = ox as isize * s - p + kx as isize * d;
                            if ix >= 0 && ix < self.w as isize {
                                f(col_row + ox, in_row + ix as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.cin * self.kh * self.kw * self.ho * self.wo];
        self.for_each(|c, i| cols[c] = x[i]);
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        self.for_each(|c, i| dx[i] += cols[c]);
    }
}

impl<'g> Var<'g> {
    /// 2-D cross-correlation of a `[Cin, H, W]` map with `[Cout, Cin, kh, kw]`
    /// weights and zero padding.
    pub fn conv2d(self, weight: Var<'g>, bias: Option<Var<'g>>, geom: ConvGeom) -> Var<'g> {
        let x = self.value();
        let wt = weight.value();
        let (cin, h, w) = x.dims3();
        let ws = wt.shape();
        assert_eq!(ws.len(), 4, "conv weight must be [Cout,Cin,kh,kw]");
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(
            cin, wcin,
            "conv2d: input has {cin} channels, weight expects {wcin}"
        );
        let span_h = geom.dilation * (kh - 1) + 1;
        let span_w = geom.dilation * (kw - 1) + 1;
        assert!(
            h + 2 * geom.pad >= span_h && w + 2 * geom.pad >= span_w,
            "conv2d: kernel larger than input"
        );
        let ho = (h + 2 * geom.pad - span_h) / geom.stride + 1;
        let wo = (w + 2 * geom.pad - span_w) / geom.stride + 1;
        let lay = Layout {
            cin,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            geom,
        };
        let k = cin * kh * kw;
        let n = ho * wo;

        let cols: Rc<Vec<f64>> = if lay.is_pointwise() {
            Rc::new(x.data().to_vec())
        } else {
            Rc::new(lay.im2col(x.data()))
        };
        let mut out = vec![0.0; cout * n];
        if let Some(b) = &bias {
            let bv = b.value();
            assert_eq!(bv.numel(), cout, "conv2d bias size");
            for (co, chunk) in out.chunks_mut(n).enumerate() {
                chunk.fill(bv.data()[co]);
            }
        }
        gemm(
            cout,
            k,
            n,
            wt.data(),
            false,
            &cols,
            false,
            &mut out,
            bias.is_some(),
        );

        let (ix, iw) = (self.id, weight.id);
        let ib = bias.map(|b| b.id);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let wshape = ws.to_vec();
        self.graph.op(
            Tensor::from_parts(vec![cout, ho, wo], out),
            &parents,
            move |g, buf| {
                let gd = g.data();
                if buf.wants(iw) {
                    buf.add_with(iw, &wshape, |dw| {
                        gemm(cout, n, k, gd, false, &cols, true, dw, true)
                    });
                }
                if let Some(ib) = ib {
                    buf.add_with(ib, &[cout], |db| {
                        for (co, chunk) in gd.chunks(n).enumerate() {
                            db[co] += chunk.iter().sum::<f64>();
                        }
                    });
                }
                if buf.wants(ix) {
                    if lay.is_pointwise() {
                        buf.add_with(ix, &[cin, h, w], |dx| {
                            gemm(k, cout, n, wt.data(), true, gd, false, dx, true)
                        });
                    } else {
                        let mut dcols = vec![0.0; k * n];
                        gemm(k, cout, n, wt.data(), true, gd, false, &mut dcols, false);
                        buf.add_with(ix, &[cin, h, w], |dx| lay.col2im(&dcols, dx));
                    }
                }
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check_grad, numeric_grad, rel_err};
    use super::super::Graph;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f64], geom: ConvGeom) -> Tensor {
        let (cin, h, wd) = x.dims3();
        let s = w.shape();
        let (cout, kh, kw) = (s[0], s[2], s[3]);
        let ho = (h + 2 * geom.pad - geom.dilation * (kh - 1) - 1) / geom.stride + 1;
        let wo = (wd + 2 * geom.pad - geom.dilation * (kw - 1) - 1) / geom.stride + 1;
        let mut out = Tensor::zeros(&[cout, ho, wo]);
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * geom.stride + ky * geom.dilation) as isize
                                    - geom.pad as isize;
                                let ix = (ox * geom.stride + kx * geom.dilation) as isize
                                    - geom.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.get3(ci, iy as usize, ix as usize)
                                        * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.set3(co, oy, ox, acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let geoms = [
            (
                3,
                ConvGeom {
                    stride: 1,
                    pad: 1,
                    dilation: 1,
                },
            ),
            (
                3,
                ConvGeom {
                    stride: 2,
                    pad: 1,
                    dilation: 1,
                },
            ),
            (
                3,
                ConvGeom {
                    stride: 1,
                    pad: 2,
                    dilation: 2,
                },
            ),
            (
                1,
                ConvGeom {
                    stride: 1,
                    pad: 0,
                    dilation: 1,
                },
            ),
            (
                5,
                ConvGeom {
                    stride: 2,
                    pad: 2,
                    dilation: 1,
                },
            ),
        ];
        for (i, (k, geom)) in geoms.into_iter().enumerate() {
            let x = rand_tensor(&[3, 9, 7], 10 + i as u64);
            let w = rand_tensor(&[4, 3, k, k], 20 + i as u64);
            let b = rand_tensor(&[4], 30 + i as u64);
            let g = Graph::inference();
            let y = g
                .constant(x.clone())
                .conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), geom)
                .tensor();
            let want = conv_oracle(&x, &w, b.data(), geom);
            assert_eq!(y.shape(), want.shape());
            assert!(y.max_abs_diff(&want) < 1e-12, "geom {geom:?}");
        }
    }

    #[test]
    fn conv_gradients() {
        let x = rand_tensor(&[2, 6, 6], 1);
        let w = rand_tensor(&[3, 2, 3, 3], 2);
        let b = rand_tensor(&[3], 3);
        for geom in [
            ConvGeom {
                stride: 2,
                pad: 1,
                dilation: 1,
            },
            ConvGeom {
                stride: 1,
                pad: 2,
                dilation: 2,
            },
        ] {
            let err = check_grad(&x, 1e-5, |v| {
                let g = v.graph();
                v.conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), geom)
                    .square()
                    .sum()
            });
            assert!(err < 1e-7, "dx {err}");
            let err = check_grad(&w, 1e-5, |v| {
                let g = v.graph();
                g.constant(x.clone())
                    .conv2d(v, Some(g.constant(b.clone())), geom)
                    .square()
                    .sum()
            });
            assert!(err < 1e-7, "dw {err}");
        }
        // bias and pointwise path
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let w1 = rand_tensor(&[3, 2, 1, 1], 4);
        let bv = g.leaf(b.clone(), true);
        let out = xv
            .conv2d(g.constant(w1.clone()), Some(bv), ConvGeom::same(1))
            .square()
            .sum();
        let db = g.backward(out).of(bv).unwrap().clone();
        let num = numeric_grad(&b, 1e-5, |bp| {
            let g = Graph::inference();
            g.constant(x.clone())
                .conv2d(
                    g.constant(w1.clone()),
                    Some(g.constant(bp.clone())),
                    ConvGeom::same(1),
                )
                .square()
                .sum()
                .value()
                .item()
        });
        assert!(rel_err(&db, &num) < 1e-7);
    }
}
