//! Training objectives: trimap cross-entropy, alpha losses, foreground and
//! background colour losses, and their weighted sum.
//!
//! All terms are per-pixel means. Alpha and colour terms are also averaged over
//! frames; the trimap terms are summed over frames.

use std::collections::BTreeMap;

use crate::autograd::{Graph, Var, BINOMIAL5};
use crate::error::{shape_err, OtvmError, Result};
use crate::tensor::Tensor;
use crate::types::TrimapClass;

pub const CE_EPS: f64 = 1e-8;
pub const PYRAMID_LEVELS: usize = 5;
pub const FB_WEIGHT: f64 = 0.25;

fn zero(g: &Graph) -> Var<'_> {
    g.constant(Tensor::scalar(0.0))
}

fn sum_all<'g>(g: &'g Graph, terms: impl IntoIterator<Item = Var<'g>>) -> Var<'g> {
    terms
        .into_iter()
        .fold(None, |acc: Option<Var<'g>>, v| {
            Some(acc.map_or(v, |a| a.add(v)))
        })
        .unwrap_or_else(|| zero(g))
}

fn check_one_hot(gt: &Tensor) -> Result<()> {
    if gt.shape().len() != 3 || gt.shape()[0] != 3 {
        return shape_err(format!(
            "trimap target must be [3,H,W], got {:?}",
            gt.shape()
        ));
    }
    let hw = gt.shape()[1] * gt.shape()[2];
    let d = gt.data();
    for i in 0..hw {
        let v = [d[i], d[hw + i], d[2 * hw + i]];
        if !v.iter().all(|&p| p == 0.0 || p == 1.0) || v.iter().sum::<f64>() != 1.0 {
            return Err(OtvmError::InvalidTrimap(format!(
                "target is not one-hot at pixel {i}"
            )));
        }
    }
    Ok(())
}

/// Mean over pixels of `−Σ_c gt_c · ln(max(pred_c, ε))`.
pub fn trimap_ce<'g>(pred: Var<'g>, gt: &Tensor) -> Result<Var<'g>> {
    check_one_hot(gt)?;
    if pred.shape() != gt.shape() {
        return shape_err(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            gt.shape()
        ));
    }
    let hw = (gt.shape()[1] * gt.shape()[2]) as f64;
    let g = pred.graph();
    Ok(pred
        .clamp(CE_EPS, 1.0)
        .ln()
        .mul(g.constant(gt.clone()))
        .sum()
        .scale(-1.0 / hw))
}

/// `Σ_{t≥1} CE(propagated_t) + Σ_{t≥0} CE(refined_t)`.
///
/// `propagated[k]` is the propagated trimap of frame `k + 1`; frame 0 has no
/// propagated trimap, and its refined target is the input trimap.
pub fn trimap_total<'g>(
    g: &'g Graph,
    propagated: &[Var<'g>],
    refined: &[Var<'g>],
    gt: &[Tensor],
) -> Result<(Var<'g>, Var<'g>)> {
    if propagated.len() + 1 > gt.len().max(1) && !propagated.is_empty() {
        return shape_err(format!(
            "{} propagated trimaps for {} frames",
            propagated.len(),
            gt.len()
        ));
    }
    if refined.len() > gt.len() {
        return shape_err(format!(
            "{} refined trimaps for {} frames",
            refined.len(),
            gt.len()
        ));
    }
    let mut prop = Vec::with_capacity(propagated.len());
    for (k, p) in propagated.iter().enumerate() {
        prop.push(trimap_ce(*p, &gt[k + 1])?);
    }
    let mut refi = Vec::with_capacity(refined.len());
    for (t, p) in refined.iter().enumerate() {
        refi.push(trimap_ce(*p, &gt[t])?);
    }
    Ok((sum_all(g, prop), sum_all(g, refi)))
}

/// Pyramid depth actually usable on an `h×w` map.
pub fn effective_levels(h: usize, w: usize, levels: usize) -> usize {
    let m = h.min(w).max(1);
    if m < 1 << levels {
        let reduced = (usize::BITS - 1 - m.leading_zeros()) as usize;
        log::warn!("{h}x{w} map is too small for a {levels}-level pyramid; using {reduced}");
        reduced.max(1)
    } else {
        levels
    }
}

fn blur_down<'g>(x: Var<'g>) -> Var<'g> {
    x.filter_reflect(&BINOMIAL5).subsample2()
}

fn up<'g>(x: Var<'g>, h: usize, w: usize) -> Var<'g> {
    let taps: Vec<f64> = BINOMIAL5.iter().map(|t| 2.0 * t).collect();
    x.zero_upsample2(h, w).filter_reflect(&taps)
}

/// Band-pass levels (finest first) and the final low-pass residual:
/// `band_s = G_s − up(blur_down(G_s))`.
pub fn laplacian_pyramid<'g>(x: Var<'g>, levels: usize) -> (Vec<Var<'g>>, Var<'g>) {
    let s = x.shape();
    let levels = effective_levels(s[1], s[2], levels);
    let mut bands = Vec::with_capacity(levels);
    let mut cur = x;
    for _ in 0..levels {
        let (_, h, w) = (0, cur.shape()[1], cur.shape()[2]);
        let low = blur_down(cur);
        bands.push(cur.sub(up(low, h, w)));
        cur = low;
    }
    (bands, cur)
}

/// Invert [`laplacian_pyramid`].
pub fn reconstruct_pyramid<'g>(bands: &[Var<'g>], low: Var<'g>) -> Var<'g> {
    let mut cur = low;
    for b in bands.iter().rev() {
        let s = b.shape();
        cur = b.add(up(cur, s[1], s[2]));
    }
    cur
}

fn lap_term<'g>(diff: Var<'g>) -> Var<'g> {
    let (bands, _) = laplacian_pyramid(diff, PYRAMID_LEVELS);
    let g = diff.graph();
    sum_all(
        g,
        bands
            .into_iter()
            .enumerate()
            .map(|(s, b)| b.abs().mean().scale((1u64 << s) as f64)),
    )
}

fn grad_term<'g>(diff: Var<'g>) -> Var<'g> {
    diff.diff_x().abs().mean().add(diff.diff_y().abs().mean())
}

/// Ground truth for one clip.
#[derive(Clone, Debug)]
pub struct Targets {
    pub frames: Vec<Tensor>,
    pub alphas: Vec<Tensor>,
    pub fg: Vec<Tensor>,
    pub bg: Vec<Tensor>,
    pub trimaps: Vec<Tensor>,
}

impl Targets {
    pub fn from_clip(clip: &crate::clipsim::ClipSample) -> Self {
        Self {
            frames: clip.frames.iter().map(|f| f.tensor().clone()).collect(),
            alphas: clip.alphas.iter().map(|a| a.tensor().clone()).collect(),
            fg: clip.fg.iter().map(|f| f.tensor().clone()).collect(),
            bg: clip.bg.iter().map(|f| f.tensor().clone()).collect(),
            trimaps: clip.trimaps.iter().map(|t| t.tensor().clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Unknown mask of the ground-truth trimap of frame `t`.
    pub fn unknown_mask(&self, t: usize) -> Vec<bool> {
        self.trimaps[t]
            .channel(TrimapClass::Unknown as usize)
            .iter()
            .map(|&v| v > 0.5)
            .collect()
    }
}

#[derive(Clone, Copy)]
pub struct AlphaTerms<'g> {
    pub l1: Var<'g>,
    pub comp: Var<'g>,
    pub lap: Var<'g>,
    pub grad: Var<'g>,
    pub tc: Var<'g>,
}

impl<'g> AlphaTerms<'g> {
    pub fn total(&self) -> Var<'g> {
        self.l1
            .add(self.comp)
            .add(self.lap)
            .add(self.grad)
            .add(self.tc)
    }

    pub fn named(&self) -> [(&'static str, Var<'g>); 5] {
        [
            ("l1", self.l1),
            ("comp", self.comp),
            ("lap", self.lap),
            ("grad", self.grad),
            ("tc", self.tc),
        ]
    }
}

/// L1, compositional, Laplacian, gradient and temporal-coherence alpha losses.
pub fn alpha_losses<'g>(pred: &[Var<'g>], gt: &Targets) -> Result<AlphaTerms<'g>> {
    let t_len = pred.len();
    if t_len == 0 {
        return Err(OtvmError::EmptySequence);
    }
    if t_len > gt.len() {
        return shape_err(format!("{t_len} alpha predictions for {} frames", gt.len()));
    }
    let g = pred[0].graph();
    let (mut l1, mut comp, mut lap, mut grad, mut tc) = (vec![], vec![], vec![], vec![], vec![]);
    for (t, &p) in pred.iter().enumerate() {
        if p.shape() != gt.alphas[t].shape() {
            return shape_err(format!(
                "alpha {:?} vs target {:?}",
                p.shape(),
                gt.alphas[t].shape()
            ));
        }
        let y = g.constant(gt.alphas[t].clone());
        let diff = y.sub(p);
        l1.push(diff.abs().mean());
        let f = g.constant(gt.fg[t].clone());
        let b = g.constant(gt.bg[t].clone());
        let i = g.constant(gt.frames[t].clone());
        let p3 = p.expand_channels(3);
        let recon = p3.mul(f.sub(b)).add(b);
        comp.push(i.sub(recon).abs().mean());
        lap.push(lap_term(diff));
        grad.push(grad_term(diff));
        if t > 0 {
            let dy = gt.alphas[t].zip_map(&gt.alphas[t - 1], |a, b| a - b);
            let dp = p.sub(pred[t - 1]);
            tc.push(g.constant(dy).sub(dp).abs().mean());
        }
    }
    let mean = |v: Vec<Var<'g>>, n: usize| {
        if n == 0 {
            zero(g)
        } else {
            sum_all(g, v).scale(1.0 / n as f64)
        }
    };
    Ok(AlphaTerms {
        l1: mean(l1, t_len),
        comp: mean(comp, t_len),
        lap: mean(lap, t_len),
        grad: mean(grad, t_len),
        tc: mean(tc, t_len - 1),
    })
}

#[derive(Clone, Copy)]
pub struct FbTerms<'g> {
    pub l1: Var<'g>,
    pub comp: Var<'g>,
    pub lap: Var<'g>,
    pub excl: Var<'g>,
    pub tc: Var<'g>,
}

impl<'g> FbTerms<'g> {
    pub fn total(&self) -> Var<'g> {
        self.l1
            .add(self.comp)
            .add(self.lap)
            .add(self.excl)
            .add(self.tc)
    }

    pub fn named(&self) -> [(&'static str, Var<'g>); 5] {
        [
            ("l1", self.l1),
            ("comp", self.comp),
            ("lap", self.lap),
            ("excl", self.excl),
            ("tc", self.tc),
        ]
    }
}

fn mask_tensor(mask: &[bool], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    Tensor::from_fn(&[c, h, w], |i| if mask[i % hw] { 1.0 } else { 0.0 })
}

/// Masks for forward differences: 1 where both neighbours lie in the mask.
fn pair_masks(mask: &[bool], h: usize, w: usize) -> (Tensor, Tensor) {
    let mx = Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        (x + 1 < w && mask[i] && mask[y * w + x + 1]) as u8 as f64
    });
    let my = Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        (y + 1 < h && mask[i] && mask[(y + 1) * w + x]) as u8 as f64
    });
    (mx, my)
}

/// Per-pixel L1 gradient magnitude summed over channels, restricted to
/// difference pairs inside `mask`.
fn masked_grad_mag<'g>(x: Var<'g>, mask: &[bool], h: usize, w: usize) -> Var<'g> {
    let g = x.graph();
    let c = x.shape()[0];
    let (mx, my) = pair_masks(mask, h, w);
    let mx = g.constant(mx).expand_channels(c);
    let my = g.constant(my).expand_channels(c);
    x.diff_x()
        .mul(mx)
        .abs()
        .add(x.diff_y().mul(my).abs())
        .sum_channels()
}

/// Foreground/background colour losses restricted to the ground-truth unknown
/// region; foreground terms are further restricted to `alpha > 0`.
/// Frames with an empty unknown region contribute 0.
pub fn fb_losses<'g>(pf: &[Var<'g>], pb: &[Var<'g>], gt: &Targets) -> Result<FbTerms<'g>> {
    let t_len = pf.len();
    if t_len == 0 || pb.len() != t_len {
        return Err(OtvmError::InvalidArgument(format!(
            "{} fg and {} bg predictions",
            pf.len(),
            pb.len()
        )));
    }
    if t_len > gt.len() {
        return shape_err(format!(
            "{t_len} colour predictions for {} frames",
            gt.len()
        ));
    }
    let g = pf[0].graph();
    let (_, h, w) = gt.frames[0].dims3();
    let masks: Vec<(Vec<bool>, Vec<bool>)> = (0..t_len)
        .map(|t| {
            let unk = gt.unknown_mask(t);
            let fgm = unk
                .iter()
                .zip(gt.alphas[t].data())
                .map(|(&u, &a)| u && a > 0.0)
                .collect();
            (unk, fgm)
        })
        .collect();
    let (mut l1, mut comp, mut lap, mut excl, mut tc) = (vec![], vec![], vec![], vec![], vec![]);
    for t in 0..t_len {
        if pf[t].shape() != gt.fg[t].shape() || pb[t].shape() != gt.bg[t].shape() {
            return shape_err("colour prediction shape differs from target");
        }
        let (unk, fgm) = &masks[t];
        let n = unk.iter().filter(|&&u| u).count();
        if n == 0 {
            continue;
        }
        let norm = 1.0 / (3 * n) as f64;
        let m3 = g.constant(mask_tensor(unk, 3, h, w));
        let f3 = g.constant(mask_tensor(fgm, 3, h, w));
        let (fg, bg, img) = (
            g.constant(gt.fg[t].clone()),
            g.constant(gt.bg[t].clone()),
            g.constant(gt.frames[t].clone()),
        );
        let dfg = fg.sub(pf[t]).mul(f3);
        let dbg = bg.sub(pb[t]).mul(m3);
        l1.push(dfg.abs().sum().add(dbg.abs().sum()).scale(norm));
        let y3 = g.constant(gt.alphas[t].clone()).expand_channels(3);
        let recon = y3.mul(pf[t].sub(pb[t])).add(pb[t]);
        comp.push(img.sub(recon).mul(m3).abs().sum().scale(norm));
        let lap_sum = |d: Var<'g>| {
            let (bands, _) = laplacian_pyramid(d, PYRAMID_LEVELS);
            sum_all(
                g,
                bands
                    .into_iter()
                    .enumerate()
                    .map(|(s, b)| b.abs().sum().scale((1u64 << s) as f64)),
            )
        };
        lap.push(lap_sum(dfg).add(lap_sum(dbg)).scale(norm));
        let gf = masked_grad_mag(pf[t], fgm, h, w);
        let gb = masked_grad_mag(pb[t], unk, h, w);
        excl.push(gf.mul(gb).sum().scale(1.0 / n as f64));
        if t > 0 {
            let (pu, pfm) = &masks[t - 1];
            let both: Vec<bool> = unk.iter().zip(pu).map(|(&a, &b)| a && b).collect();
            let both_f: Vec<bool> = fgm.iter().zip(pfm).map(|(&a, &b)| a && b).collect();
            let nb = both.iter().filter(|&&u| u).count();
            if nb > 0 {
                let dft = gt.fg[t].zip_map(&gt.fg[t - 1], |a, b| a - b);
                let dbt = gt.bg[t].zip_map(&gt.bg[t - 1], |a, b| a - b);
                let ef = g
                    .constant(dft)
                    .sub(pf[t].sub(pf[t - 1]))
                    .mul(g.constant(mask_tensor(&both_f, 3, h, w)));
                let eb = g
                    .constant(dbt)
                    .sub(pb[t].sub(pb[t - 1]))
                    .mul(g.constant(mask_tensor(&both, 3, h, w)));
                tc.push(
                    ef.abs()
                        .sum()
                        .add(eb.abs().sum())
                        .scale(1.0 / (3 * nb) as f64),
                );
            }
        }
    }
    let mean = |v: Vec<Var<'g>>, n: usize| {
        if n == 0 {
            zero(g)
        } else {
            sum_all(g, v).scale(1.0 / n as f64)
        }
    };
    Ok(FbTerms {
        l1: mean(l1, t_len),
        comp: mean(comp, t_len),
        lap: mean(lap, t_len),
        excl: mean(excl, t_len),
        tc: mean(tc, t_len - 1),
    })
}

/// Named scalar losses of one step.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct LossBundle(pub BTreeMap<String, f64>);

impl LossBundle {
    pub fn get(&self, k: &str) -> Option<f64> {
        self.0.get(k).copied()
    }

    pub fn total(&self) -> f64 {
        self.0.get("total").copied().unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain map")
    }
}

/// Predictions entering the total loss. Absent parts contribute nothing.
#[derive(Default)]
pub struct LossInputs<'g> {
    /// Propagated trimaps of frames `1..T`.
    pub propagated: Vec<Var<'g>>,
    pub refined_trimaps: Vec<Var<'g>>,
    pub alpha: Vec<Var<'g>>,
    pub fg: Vec<Var<'g>>,
    pub bg: Vec<Var<'g>>,
    pub refined_alpha: Vec<Var<'g>>,
    pub refined_fg: Vec<Var<'g>>,
    pub refined_bg: Vec<Var<'g>>,
}

/// `tri_total + alpha_total + 0.25 · fb_total`, with every component recorded.
pub fn total_loss<'g>(
    g: &'g Graph,
    inputs: &LossInputs<'g>,
    gt: &Targets,
) -> Result<(Var<'g>, LossBundle)> {
    let mut b = BTreeMap::new();
    let (tri, tri_ref) = trimap_total(g, &inputs.propagated, &inputs.refined_trimaps, &gt.trimaps)?;
    if !inputs.propagated.is_empty() {
        b.insert("tri".to_string(), tri.value().item());
    }
    if !inputs.refined_trimaps.is_empty() {
        b.insert("tri_refined".to_string(), tri_ref.value().item());
    }
    let tri_total = tri.add(tri_ref);

    let mut alpha_parts = Vec::new();
    for (prefix, preds) in [
        ("alpha", &inputs.alpha),
        ("alpha_refined", &inputs.refined_alpha),
    ] {
        if preds.is_empty() {
            continue;
        }
        let terms = alpha_losses(preds, gt)?;
        for (k, v) in terms.named() {
            b.insert(format!("{prefix}_{k}"), v.value().item());
        }
        alpha_parts.push(terms.total());
    }
    let alpha_total = sum_all(g, alpha_parts);

    let mut fb_parts = Vec::new();
    for (prefix, pf, pb) in [
        ("fb", &inputs.fg, &inputs.bg),
        ("fb_refined", &inputs.refined_fg, &inputs.refined_bg),
    ] {
        if pf.is_empty() {
            continue;
        }
        let terms = fb_losses(pf, pb, gt)?;
        for (k, v) in terms.named() {
            b.insert(format!("{prefix}_{k}"), v.value().item());
        }
        fb_parts.push(terms.total());
    }
    let fb_total = sum_all(g, fb_parts);

    let total = tri_total.add(alpha_total).add(fb_total.scale(FB_WEIGHT));
    b.insert("tri_total".to_string(), tri_total.value().item());
    b.insert("alpha_total".to_string(), alpha_total.value().item());
    b.insert("fb_total".to_string(), fb_total.value().item());
    b.insert("total".to_string(), total.value().item());
    Ok((total, LossBundle(b)))
}

/// Weighted sum of precomputed component totals.
pub fn combine(tri_total: f64, alpha_total: f64, fb_total: f64) -> f64 {
    tri_total + alpha_total + FB_WEIGHT * fb_total
}
