use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

/// Normalise each contiguous block of `len` values to zero mean and unit
/// variance. Returns `(xhat, inv_std per block)`.
fn standardize_blocks(x: &[f64], len: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(x.len() / len);
    for (src, dst) in x.chunks(len).zip(out.chunks_mut(len)) {
        let n = len as f64;
        let mean = src.iter().sum::<f64>() / n;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * is;
        }
        inv.push(is);
    }
    (out, inv)
}

/// Backward of [`standardize_blocks`] given the gradient w.r.t. `xhat`.
fn standardize_backward(dxhat: &[f64], xhat: &[f64], inv: &[f64], len: usize, dx: &mut [f64]) {
    let n = len as f64;
    for (((dh, xh), is), d) in dxhat
        .chunks(len)
        .zip(xhat.chunks(len))
        .zip(inv)
        .zip(dx.chunks_mut(len))
    {
        let m1 = dh.iter().sum::<f64>() / n;
        let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((o, &g), &xv) in d.iter_mut().zip(dh).zip(xh) {
            *o += is * (g - m1 - xv * m2);
        }
    }
}

impl<'g> Var<'g> {
    /// Group normalisation of a `[C, H, W]` map with per-channel affine.
    pub fn group_norm(self, gamma: Var<'g>, beta: Var<'g>, groups: usize, eps: f64) -> Var<'g> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        assert!(
            groups > 0 && c % groups == 0,
            "group_norm: {c} channels, {groups} groups"
        );
        let hw = h * w;
        let len = c / groups * hw;
        let (xhat, inv) = standardize_blocks(x.data(), len, eps);
        let (gm, bt) = (gamma.value(), beta.value());
        assert_eq!(gm.numel(), c);
        assert_eq!(bt.numel(), c);
        let mut out = xhat.clone();
        for ch in 0..c {
            let (gv, bv) = (gm.data()[ch], bt.data()[ch]);
            for v in &mut out[ch * hw..(ch + 1) * hw] {
                *v = *v * gv + bv;
            }
        }
        let xhat = Rc::new(xhat);
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        self.graph.op(
            Tensor::from_parts(vec![c, h, w], out),
            &[self, gamma, beta],
            move |g, buf| {
                let gd = g.data();
                if buf.wants(ig) {
                    buf.add_with(ig, &[c], |d| {
                        for ch in 0..c {
                            let r = ch * hw..(ch + 1) * hw;
                            d[ch] += gd[r.clone()]
                                .iter()
                                .zip(&xhat[r])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    });
                }
                if buf.wants(ib) {
                    buf.add_with(ib, &[c], |d| {
                        for ch in 0..c {
                            d[ch] += gd[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                        }
                    });
                }
                if buf.wants(ix) {
                    let mut dxhat = gd.to_vec();
                    for ch in 0..c {
                        let gv = gm.data()[ch];
                        for v in &mut dxhat[ch * hw..(ch + 1) * hw] {
                            *v *= gv;
                        }
                    }
                    buf.add_with(ix, &[c, h, w], |dx| {
                        standardize_backward(&dxhat, &xhat, &inv, len, dx)
                    });
                }
            },
        )
    }

    /// Weight standardisation: every output filter of a `[Cout, ...]` weight
    /// is shifted and scaled to zero mean and unit variance.
    pub fn standardize_weight(self, eps: f64) -> Var<'g> {
        let w = self.value();
        let shape = w.shape().to_vec();
        let len = w.numel() / shape[0];
        let (what, inv) = standardize_blocks(w.data(), len, eps);
        let what = Rc::new(Tensor::from_parts(shape.clone(), what));
        let keep = Rc::clone(&what);
        let iw = self.id;
        self.graph.op_rc(what, &[self], move |g, buf| {
            buf.add_with(iw, &shape, |dw| {
                standardize_backward(g.data(), keep.data(), &inv, len, dw)
            });
        })
    }
}
