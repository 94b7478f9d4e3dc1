use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, with optional transposes.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index touched by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'g> Var<'g> {
    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape).expect("reshape");
        let ia = self.id;
        self.graph.op(out, &[self], move |g, buf| {
            buf.add(ia, g.clone().reshape(&old).expect("reshape back"));
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(self) -> Var<'g> {
        let x = self.value();
        let s = x.shape();
        assert_eq!(s.len(), 2, "t() needs a matrix");
        let (r, c) = (s[0], s[1]);
        let out = transpose(x.data(), r, c);
        let ia = self.id;
        self.graph.op(
            Tensor::from_parts(vec![c, r], out),
            &[self],
            move |g, buf| {
                buf.add(
                    ia,
                    Tensor::from_parts(vec![r, c], transpose(g.data(), c, r)),
                );
            },
        )
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
        let (ia, ib) = (self.id, other.id);
        self.graph.op(
            Tensor::from_parts(vec![m, n], out),
            &[self, other],
            move |g, buf| {
                if buf.wants(ia) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, b.data(), true, &mut da, false);
                    buf.add(ia, Tensor::from_parts(vec![m, k], da));
                }
                if buf.wants(ib) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut db, false);
                    buf.add(ib, Tensor::from_parts(vec![k, n], db));
                }
            },
        )
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of nothing");
        let graph = parts[0].graph;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut extents = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(&base).enumerate() {
                assert!(
                    d == axis || a == b,
                    "concat extent mismatch {s:?} vs {base:?}"
                );
            }
            extents.push(s[axis]);
        }
        let total: usize = extents.iter().sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                let block = e * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        graph.op(Tensor::from_parts(shape, data), parts, move |g, buf| {
            let mut offset = 0;
            for ((&id, &e), s) in ids.iter().zip(&extents).zip(&shapes) {
                let block = e * inner;
                if buf.wants(id) {
                    let mut d = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let start = o * total * inner + offset;
                        d.extend_from_slice(&g.data()[start..start + block]);
                    }
                    buf.add(id, Tensor::from_parts(s.clone(), d));
                }
                offset += block;
            }
        })
    }

    /// Channel concatenation of `[C_i, H, W]` maps.
    pub fn cat_channels(parts: &[Var<'g>]) -> Var<'g> {
        Self::concat(parts, 0)
    }

    /// Leading-axis slice `start..start + len`.
    pub fn narrow(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[0], "narrow out of range");
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let out = x.data()[start * inner..(start + len) * inner].to_vec();
        let ia = self.id;
        self.graph.op(
            Tensor::from_parts(out_shape, out),
            &[self],
            move |g, buf| {
                buf.add_with(ia, &shape, |d| {
                    for (dst, src) in d[start * inner..(start + len) * inner]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *dst += src;
                    }
                });
            },
        )
    }

    /// Repeat a single-channel map `c` times along the leading axis.
    pub fn expand_channels(self, c: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert_eq!(shape[0], 1, "expand_channels needs a leading extent of 1");
        let mut out_shape = shape.clone();
        out_shape[0] = c;
        let mut data = Vec::with_capacity(c * x.numel());
        for _ in 0..c {
            data.extend_from_slice(x.data());
        }
        let n = x.numel();
        let ia = self.id;
        self.graph.op(
            Tensor::from_parts(out_shape, data),
            &[self],
            move |g, buf| {
                buf.add_with(ia, &shape, |d| {
                    for chunk in g.data().chunks(n) {
                        for (dst, src) in d.iter_mut().zip(chunk) {
                            *dst += src;
                        }
                    }
                });
            },
        )
    }

    /// Sum over the leading axis, keeping it with extent 1.
    pub fn sum_channels(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let c = shape[0];
        let p = x.numel() / c;
        let mut out = vec![0.0; p];
        for chunk in x.data().chunks(p) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        let mut out_shape = shape.clone();
        out_shape[0] = 1;
        let ia = self.id;
        self.graph.op(
            Tensor::from_parts(out_shape, out),
            &[self],
            move |g, buf| {
                buf.add_with(ia, &shape, |d| {
                    for chunk in d.chunks_mut(p) {
                        for (o, v) in chunk.iter_mut().zip(g.data()) {
                            *o += v;
                        }
                    }
                });
            },
        )
    }

    /// Softmax over the leading axis, independently for every trailing position.
    pub fn softmax0(self) -> Var<'g> {
        let x = self.value();
        let c = x.shape()[0];
        let p = x.numel() / c;
        let mut y = vec![0.0; x.numel()];
        let xd = x.data();
        for j in 0..p {
            let mut m = f64::NEG_INFINITY;
            for k in 0..c {
                m = m.max(xd[k * p + j]);
            }
            let mut s = 0.0;
            for k in 0..c {
                let e = (xd[k * p + j] - m).exp();
                y[k * p + j] = e;
                s += e;
            }
            for k in 0..c {
                y[k * p + j] /= s;
            }
        }
        let y = Rc::new(Tensor::from_parts(x.shape().to_vec(), y));
        let yc = Rc::clone(&y);
        let ia = self.id;
        self.graph.op_rc(y, &[self], move |g, buf| {
            if !buf.wants(ia) {
                return;
            }
            let (gd, yd) = (g.data(), yc.data());
            let mut d = vec![0.0; gd.len()];
            for j in 0..p {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += gd[k * p + j] * yd[k * p + j];
                }
                for k in 0..c {
                    d[k * p + j] = yd[k * p + j] * (gd[k * p + j] - dot);
                }
            }
            buf.add(ia, Tensor::from_parts(g.shape().to_vec(), d));
        })
    }
}

fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}
