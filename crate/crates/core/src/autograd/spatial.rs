//! Separable linear resampling and filtering on `[C, H, W]` maps.
//!
//! Every operator here is a sparse linear map along one spatial axis, so the
//! backward pass is the transposed map.

use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

/// 5-tap binomial kernel used by the Laplacian pyramid.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror an index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Normalised Gaussian taps truncated at `ceil(3 sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    H,
    W,
}

/// Sparse `n_out × n_in` matrix applied along one axis.
#[derive(Debug)]
pub(crate) struct AxisMap {
    n_in: usize,
    n_out: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl AxisMap {
    fn transposed(&self) -> AxisMap {
        AxisMap {
            n_in: self.n_out,
            n_out: self.n_in,
            entries: self.entries.iter().map(|&(o, i, w)| (i, o, w)).collect(),
        }
    }

    fn bilinear(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut entries = Vec::with_capacity(2 * n_out);
        for o in 0..n_out {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = src - i0 as f64;
            if i0 == i1 || f == 0.0 {
                entries.push((o, i0, 1.0));
            } else {
                entries.push((o, i0, 1.0 - f));
                entries.push((o, i1, f));
            }
        }
        Self {
            n_in,
            n_out,
            entries,
        }
    }

    fn adaptive_avg(n_in: usize, n_out: usize) -> Self {
        let mut entries = Vec::new();
        for o in 0..n_out {
            let start = o * n_in / n_out;
            let end = ((o + 1) * n_in).div_ceil(n_out);
            let w = 1.0 / (end - start) as f64;
            entries.extend((start..end).map(|i| (o, i, w)));
        }
        Self {
            n_in,
            n_out,
            entries,
        }
    }

    fn filter_reflect(n: usize, taps: &[f64]) -> Self {
        let r = (taps.len() / 2) as isize;
        let mut entries = Vec::with_capacity(n * taps.len());
        for o in 0..n {
            for (k, &t) in taps.iter().enumerate() {
                let i = reflect_index(o as isize + k as isize - r, n);
                entries.push((o, i, t));
            }
        }
        Self {
            n_in: n,
            n_out: n,
            entries,
        }
    }

    fn subsample2(n: usize) -> Self {
        let n_out = n.div_ceil(2);
        Self {
            n_in: n,
            n_out,
            entries: (0..n_out).map(|o| (o, 2 * o, 1.0)).collect(),
        }
    }

    fn forward_diff(n: usize) -> Self {
        let mut entries = Vec::with_capacity(2 * n);
        for o in 0..n.saturating_sub(1) {
            entries.push((o, o + 1, 1.0));
            entries.push((o, o, -1.0));
        }
        Self {
            n_in: n,
            n_out: n,
            entries,
        }
    }

    fn apply(&self, x: &[f64], c: usize, h: usize, w: usize, axis: Axis) -> Vec<f64> {
        match axis {
            Axis::W => {
                assert_eq!(w, self.n_in);
                let mut out = vec![0.0; c * h * self.n_out];
                for (src, dst) in x.chunks(w).zip(out.chunks_mut(self.n_out)) {
                    for &(o, i, wt) in &self.entries {
                        dst[o] += wt * src[i];
                    }
                }
                out
            }
            Axis::H => {
                assert_eq!(h, self.n_in);
                let mut out = vec![0.0; c * self.n_out * w];
                for ch in 0..c {
                    let src = &x[ch * h * w..(ch + 1) * h * w];
                    let dst = &mut out[ch * self.n_out * w..(ch + 1) * self.n_out * w];
                    for &(o, i, wt) in &self.entries {
                        let (d, s) = (&mut dst[o * w..(o + 1) * w], &src[i * w..(i + 1) * w]);
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += wt * b;
                        }
                    }
                }
                out
            }
        }
    }
}

impl<'g> Var<'g> {
    pub(crate) fn axis_map(self, axis: Axis, map: AxisMap) -> Var<'g> {
        let x = self.value();
        let (c, h, w) = x.dims3();
        let out = map.apply(x.data(), c, h, w, axis);
        let shape = match axis {
            Axis::W => vec![c, h, map.n_out],
            Axis::H => vec![c, map.n_out, w],
        };
        let (oh, ow) = (shape[1], shape[2]);
        let back = Rc::new(map.transposed());
        let ia = self.id;
        self.graph
            .op(Tensor::from_parts(shape, out), &[self], move |g, buf| {
                if buf.wants(ia) {
                    let d = back.apply(g.data(), c, oh, ow, axis);
                    buf.add(ia, Tensor::from_parts(vec![c, h, w], d));
                }
            })
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize_bilinear(self, ho: usize, wo: usize) -> Var<'g> {
        let (_, h, w) = self.value().dims3();
        if (h, w) == (ho, wo) {
            return self;
        }
        self.axis_map(Axis::W, AxisMap::bilinear(w, wo))
            .axis_map(Axis::H, AxisMap::bilinear(h, ho))
    }

    /// Adaptive average pooling to `ho × wo` bins.
    pub fn adaptive_avg_pool(self, ho: usize, wo: usize) -> Var<'g> {
        let (_, h, w) = self.value().dims3();
        self.axis_map(Axis::W, AxisMap::adaptive_avg(w, wo))
            .axis_map(Axis::H, AxisMap::adaptive_avg(h, ho))
    }

    /// Separable filter with the same odd-length taps on both axes and
    /// reflective borders.
    pub fn filter_reflect(self, taps: &[f64]) -> Var<'g> {
        assert!(taps.len() % 2 == 1, "filter taps must have odd length");
        let (_, h, w) = self.value().dims3();
        self.axis_map(Axis::W, AxisMap::filter_reflect(w, taps))
            .axis_map(Axis::H, AxisMap::filter_reflect(h, taps))
    }

    /// Keep every second row and column, starting at 0.
    pub fn subsample2(self) -> Var<'g> {
        let (_, h, w) = self.value().dims3();
        self.axis_map(Axis::W, AxisMap::subsample2(w))
            .axis_map(Axis::H, AxisMap::subsample2(h))
    }

    /// Adjoint of [`Var::subsample2`]: scatter onto the even grid of an
    /// `h × w` map, zeros elsewhere.
    pub fn zero_upsample2(self, h: usize, w: usize) -> Var<'g> {
        self.axis_map(Axis::W, AxisMap::subsample2(w).transposed())
            .axis_map(Axis::H, AxisMap::subsample2(h).transposed())
    }

    /// Forward difference along x; the last column is zero.
    pub fn diff_x(self) -> Var<'g> {
        let (_, _, w) = self.value().dims3();
        self.axis_map(Axis::W, AxisMap::forward_diff(w))
    }

    /// Forward difference along y; the last row is zero.
    pub fn diff_y(self) -> Var<'g> {
        let (_, h, _) = self.value().dims3();
        self.axis_map(Axis::H, AxisMap::forward_diff(h))
    }
}
