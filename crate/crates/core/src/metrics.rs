//! Alpha-matte and trimap-quality metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clipsim::{dilate_mask, fractional_mask};
use crate::error::{shape_err, OtvmError, Result};
use crate::types::{AlphaMap, TrimapClass, TrimapSoft};

/// Pixels a metric is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Unknown area of the ground-truth trimap.
    Unknown,
    /// Every pixel; labels carry a `-V` suffix.
    Full,
}

impl std::str::FromStr for Region {
    type Err = OtvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unknown" => Ok(Region::Unknown),
            "full" => Ok(Region::Full),
            other => Err(OtvmError::InvalidArgument(format!(
                "unknown region `{other}` (expected unknown or full)"
            ))),
        }
    }
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Unknown => "unknown",
            Region::Full => "full",
        }
    }

    pub fn label(self, metric: &str) -> String {
        match self {
            Region::Unknown => metric.to_string(),
            Region::Full => format!("{metric}-V"),
        }
    }
}

/// Reporting multipliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScales {
    pub ssda: f64,
    pub mse: f64,
    pub mad: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
    pub dtssd: f64,
    pub messddt: f64,
}

impl Default for MetricScales {
    fn default() -> Self {
        Self {
            ssda: 1e2,
            mse: 1e3,
            mad: 1e3,
            sad: 1e-3,
            grad: 1e-3,
            conn: 1e-3,
            dtssd: 1e2,
            messddt: 1e3,
        }
    }
}

impl MetricScales {
    pub fn unit() -> Self {
        Self {
            ssda: 1.0,
            mse: 1.0,
            mad: 1.0,
            sad: 1.0,
            grad: 1.0,
            conn: 1.0,
            dtssd: 1.0,
            messddt: 1.0,
        }
    }
}

/// Unscaled metric values, averaged over frames (temporal metrics over
/// consecutive pairs).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub ssda: f64,
    pub mse: f64,
    pub mad: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
    pub dtssd: f64,
    pub messddt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub region: Region,
    pub raw: MetricValues,
    pub scales: MetricScales,
}

impl MetricReport {
    /// `(label, scaled value)` pairs in reporting order.
    pub fn scaled(&self) -> Vec<(String, f64)> {
        let (r, s) = (&self.raw, &self.scales);
        [
            ("SSDA", r.ssda * s.ssda),
            ("MSE", r.mse * s.mse),
            ("MAD", r.mad * s.mad),
            ("SAD", r.sad * s.sad),
            ("Grad", r.grad * s.grad),
            ("Conn", r.conn * s.conn),
            ("dtSSD", r.dtssd * s.dtssd),
            ("MESSDdt", r.messddt * s.messddt),
        ]
        .into_iter()
        .map(|(k, v)| (self.region.label(k), v))
        .collect()
    }
}

fn check_aligned(pred: &[AlphaMap], gt: &[AlphaMap]) -> Result<()> {
    if pred.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    if pred.len() != gt.len() {
        return Err(OtvmError::InvalidArgument(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.size() != g.size() {
            return shape_err(format!(
                "prediction {:?} vs ground truth {:?}",
                p.size(),
                g.size()
            ));
        }
    }
    Ok(())
}

fn region_masks(
    gt: &[AlphaMap],
    trimaps: Option<&[TrimapSoft]>,
    region: Region,
) -> Result<Vec<Vec<bool>>> {
    match region {
        Region::Full => Ok(gt.iter().map(|a| vec![true; a.values().len()]).collect()),
        Region::Unknown => {
            let tri = trimaps.ok_or_else(|| {
                OtvmError::MissingInput("unknown-region metrics need ground-truth trimaps".into())
            })?;
            if tri.len() != gt.len() {
                return Err(OtvmError::InvalidArgument(format!(
                    "{} trimaps for {} frames",
                    tri.len(),
                    gt.len()
                )));
            }
            tri.iter()
                .zip(gt)
                .map(|(t, a)| {
                    if t.size() != a.size() {
                        return shape_err("trimap and alpha sizes differ");
                    }
                    Ok(t.unknown_mask())
                })
                .collect()
        }
    }
}

/// Gaussian-derivative gradient magnitude with replicated borders; kernels
/// have unit L2 norm.
pub fn gradient_magnitude(a: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let eps: f64 = 1e-2;
    let half = (sigma * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * eps).ln()).sqrt())
        .ceil() as isize;
    let gauss: Vec<f64> = (-half..=half)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let dgauss: Vec<f64> = (-half..=half)
        .zip(&gauss)
        .map(|(x, g)| -(x as f64) / (sigma * sigma) * g)
        .collect();
    let norm = gauss.iter().map(|v| v * v).sum::<f64>().sqrt()
        * dgauss.iter().map(|v| v * v).sum::<f64>().sqrt();
    let at = |y: isize, x: isize| {
        a[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    let filt = |ky: &[f64], kx: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                tmp[y as usize * w + x as usize] = (-half..=half)
                    .map(|d| kx[(d + half) as usize] * at(y, x - d))
                    .sum();
            }
        }
        let tat = |y: isize, x: usize| tmp[y.clamp(0, h as isize - 1) as usize * w + x];
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w {
                out[y as usize * w + x] = (-half..=half)
                    .map(|d| ky[(d + half) as usize] * tat(y - d, x))
                    .sum::<f64>()
                    / norm;
            }
        }
        out
    };
    let gx = filt(&gauss, &dgauss);
    let gy = filt(&dgauss, &gauss);
    gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect()
}

/// Largest 8-connected component of `mask`.
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; h * w];
    let (mut best, mut best_size, mut next) = (usize::MAX, 0, 0);
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        if size > best_size {
            best_size = size;
            best = next;
        }
        next += 1;
    }
    label
        .iter()
        .map(|&l| l == best && best != usize::MAX)
        .collect()
}

/// Connectivity error with threshold steps of `step`.
pub fn connectivity_error(
    pred: &[f64],
    gt: &[f64],
    mask: &[bool],
    h: usize,
    w: usize,
    step: f64,
) -> f64 {
    let n = (1.0 / step).round() as usize;
    let mut level = vec![-1.0; h * w];
    for k in 1..=n {
        let th = k as f64 * step;
        let both: Vec<bool> = pred
            .iter()
            .zip(gt)
            .map(|(&p, &g)| p >= th && g >= th)
            .collect();
        let omega = largest_component(&both, h, w);
        let prev = (k - 1) as f64 * step;
        for (l, &o) in level.iter_mut().zip(&omega) {
            if *l == -1.0 && !o {
                *l = prev;
            }
        }
    }
    let phi = |v: f64, l: f64| {
        let d = v - if l == -1.0 { 1.0 } else { l };
        1.0 - if d >= 0.15 { d } else { 0.0 }
    };
    (0..h * w)
        .filter(|&i| mask[i])
        .map(|i| (phi(pred[i], level[i]) - phi(gt[i], level[i])).abs())
        .sum()
}

/// Per-block displacements from `a` to `b` by exhaustive search.
pub fn block_motion(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    block: usize,
    radius: isize,
) -> Vec<(isize, isize)> {
    let at = |m: &[f64], y: isize, x: isize| {
        m[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut flow = vec![(0, 0); h * w];
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (ye, xe) = ((by + block).min(h), (bx + block).min(w));
            let cost = |dy: isize, dx: isize| -> f64 {
                let mut c = 0.0;
                for y in by..ye {
                    for x in bx..xe {
                        let d = a[y * w + x] - at(b, y as isize + dy, x as isize + dx);
                        c += d * d;
                    }
                }
                c
            };
            let mut best = ((0, 0), cost(0, 0));
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let c = cost(dy, dx);
                    if c < best.1 {
                        best = ((dy, dx), c);
                    }
                }
            }
            for y in by..ye {
                for x in bx..xe {
                    flow[y * w + x] = best.0;
                }
            }
        }
    }
    flow
}

pub const GRAD_SIGMA: f64 = 1.4;
pub const CONN_STEP: f64 = 0.1;
pub const BLOCK: usize = 8;
pub const SEARCH_RADIUS: isize = 4;

/// Alpha metrics averaged over the sequence. Frames whose region is empty
/// contribute 0 and still count.
pub fn alpha_metrics(
    pred: &[AlphaMap],
    gt: &[AlphaMap],
    gt_trimaps: Option<&[TrimapSoft]>,
    region: Region,
    scales: MetricScales,
) -> Result<MetricReport> {
    check_aligned(pred, gt)?;
    let masks = region_masks(gt, gt_trimaps, region)?;
    let t_len = pred.len();
    let (h, w) = gt[0].size();
    if gt.iter().any(|a| a.size() != (h, w)) {
        return shape_err("frames differ in size");
    }
    let mut v = MetricValues::default();
    for t in 0..t_len {
        let (p, y, m) = (pred[t].values(), gt[t].values(), &masks[t]);
        let n = m.iter().filter(|&&b| b).count();
        let (mut ssd, mut sad) = (0.0, 0.0);
        for i in (0..h * w).filter(|&i| m[i]) {
            let d = p[i] - y[i];
            ssd += d * d;
            sad += d.abs();
        }
        v.ssda += ssd;
        v.sad += sad;
        if n > 0 {
            v.mse += ssd / n as f64;
            v.mad += sad / n as f64;
        }
        let (gp, gy) = (
            gradient_magnitude(p, h, w, GRAD_SIGMA),
            gradient_magnitude(y, h, w, GRAD_SIGMA),
        );
        v.grad += (0..h * w)
            .filter(|&i| m[i])
            .map(|i| (gp[i] - gy[i]).powi(2))
            .sum::<f64>();
        v.conn += connectivity_error(p, y, m, h, w, CONN_STEP);
    }
    let inv = 1.0 / t_len as f64;
    for x in [
        &mut v.ssda,
        &mut v.mse,
        &mut v.mad,
        &mut v.sad,
        &mut v.grad,
        &mut v.conn,
    ] {
        *x *= inv;
    }
    if t_len > 1 {
        for t in 1..t_len {
            let (p0, p1, y0, y1, m) = (
                pred[t - 1].values(),
                pred[t].values(),
                gt[t - 1].values(),
                gt[t].values(),
                &masks[t],
            );
            let s: f64 = (0..h * w)
                .filter(|&i| m[i])
                .map(|i| ((p1[i] - p0[i]) - (y1[i] - y0[i])).powi(2))
                .sum();
            v.dtssd += s.sqrt();

            let m0 = &masks[t - 1];
            let flow = block_motion(y0, y1, h, w, BLOCK, SEARCH_RADIUS);
            let err0: Vec<f64> = p0.iter().zip(y0).map(|(a, b)| (a - b).powi(2)).collect();
            let err1: Vec<f64> = p1.iter().zip(y1).map(|(a, b)| (a - b).powi(2)).collect();
            let mut e = 0.0;
            for i in (0..h * w).filter(|&i| m0[i]) {
                let (dy, dx) = flow[i];
                let ny = ((i / w) as isize + dy).clamp(0, h as isize - 1) as usize;
                let nx = ((i % w) as isize + dx).clamp(0, w as isize - 1) as usize;
                e += (err0[i] - err1[ny * w + nx]).abs();
            }
            v.messddt += e;
        }
        v.dtssd /= (t_len - 1) as f64;
        v.messddt /= (t_len - 1) as f64;
    }
    Ok(MetricReport {
        region,
        raw: v,
        scales,
    })
}

/// Percentages of the predicted unknown area near the true one, and of the
/// true fractional area covered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapQuality {
    pub precision_t: f64,
    pub recall_t: f64,
}

pub const PRECISION_DILATION: usize = 41;

/// Frame-averaged Precision-T and Recall-T of hard (argmax) predicted trimaps.
/// A frame without predicted unknown pixels has precision 100; one without
/// fractional alpha has recall 100.
pub fn trimap_quality(pred: &[TrimapSoft], gt_alphas: &[AlphaMap]) -> Result<TrimapQuality> {
    if pred.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    if pred.len() != gt_alphas.len() {
        return Err(OtvmError::InvalidArgument(format!(
            "{} trimaps for {} frames",
            pred.len(),
            gt_alphas.len()
        )));
    }
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for (tri, a) in pred.iter().zip(gt_alphas) {
        if tri.size() != a.size() {
            return shape_err("trimap and alpha sizes differ");
        }
        let (h, w) = a.size();
        let unk: Vec<bool> = tri
            .labels()
            .into_iter()
            .map(|l| l == TrimapClass::Unknown)
            .collect();
        let gt0 = fractional_mask(a);
        let near = dilate_mask(&gt0, h, w, PRECISION_DILATION);
        let np = unk.iter().filter(|&&u| u).count();
        let n0 = gt0.iter().filter(|&&u| u).count();
        let hit_p = unk.iter().zip(&near).filter(|(u, d)| **u && **d).count();
        let hit_r = unk.iter().zip(&gt0).filter(|(u, d)| **u && **d).count();
        p_sum += if np == 0 {
            100.0
        } else {
            100.0 * hit_p as f64 / np as f64
        };
        r_sum += if n0 == 0 {
            100.0
        } else {
            100.0 * hit_r as f64 / n0 as f64
        };
    }
    let n = pred.len() as f64;
    Ok(TrimapQuality {
        precision_t: p_sum / n,
        recall_t: r_sum / n,
    })
}

/// One evaluated (sequence, region, setting) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sequence: String,
    pub region: Region,
    pub setting: String,
    pub metrics: Vec<(String, f64)>,
}

impl ReportRow {
    pub fn new(
        sequence: &str,
        setting: &str,
        report: &MetricReport,
        quality: Option<TrimapQuality>,
    ) -> Self {
        let mut metrics = report.scaled();
        if let Some(q) = quality {
            metrics.push(("Precision-T".into(), q.precision_t));
            metrics.push(("Recall-T".into(), q.recall_t));
        }
        Self {
            sequence: sequence.into(),
            region: report.region,
            setting: setting.into(),
            metrics,
        }
    }
}

/// CSV with a column per metric label seen in any row; missing cells are
/// left empty.
pub fn write_csv(rows: &[ReportRow], mut out: impl Write) -> Result<()> {
    let mut cols: Vec<&str> = Vec::new();
    for r in rows {
        for (k, _) in &r.metrics {
            if !cols.contains(&k.as_str()) {
                cols.push(k);
            }
        }
    }
    writeln!(out, "sequence,region,setting,{}", cols.join(","))?;
    for r in rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| {
                r.metrics
                    .iter()
                    .find(|(k, _)| k == c)
                    .map(|(_, v)| format!("{v:.6}"))
                    .unwrap_or_default()
            })
            .collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.sequence,
            r.region.name(),
            r.setting,
            cells.join(",")
        )?;
    }
    Ok(())
}

pub fn write_json(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let v: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            let mut m = serde_json::Map::new();
            m.insert("sequence".into(), r.sequence.clone().into());
            m.insert("region".into(), r.region.name().into());
            m.insert("setting".into(), r.setting.clone().into());
            for (k, x) in &r.metrics {
                m.insert(k.clone(), (*x).into());
            }
            serde_json::Value::Object(m)
        })
        .collect();
    serde_json::to_writer_pretty(out, &v)?;
    Ok(())
}
