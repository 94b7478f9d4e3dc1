//! Auto-regressive inference: alpha prediction, refinement, memory write and
//! next-frame trimap propagation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autograd::{reflect_index, Graph};
use crate::error::{shape_err, OtvmError, Result};
use crate::imageio;
use crate::model::Otvm;
use crate::nn::Ctx;
use crate::tensor::Tensor;
use crate::trainer::Stage;
use crate::trimap_prop::memory::{MemVar, MemoryBank, MemoryEntry};
use crate::trimap_prop::MemoryExtras;
use crate::types::{AlphaMap, Frame, TrimapSoft};

/// Everything the engine produces for one frame, at the input size.
#[derive(Clone, Debug)]
pub struct FrameOutputs {
    pub alpha: AlphaMap,
    /// Refined trimap.
    pub trimap: TrimapSoft,
    /// Propagated trimap before refinement; `None` for frame 0.
    pub propagated: Option<TrimapSoft>,
    pub fg: Frame,
    pub bg: Frame,
}

/// Write the memory entry of frame `t` into the bank.
pub fn memory_policy(
    bank: &mut MemoryBank<MemoryEntry>,
    entry: MemoryEntry,
    t: usize,
) -> Result<()> {
    bank.update(entry, t)
}

fn round16(n: usize) -> usize {
    n.div_ceil(16).max(1) * 16
}

/// Extend a `[C,H,W]` tensor to `[C,ho,wo]` by reflection at the bottom and
/// right edges.
pub fn pad_reflect(t: &Tensor, ho: usize, wo: usize) -> Tensor {
    let (c, h, w) = t.dims3();
    if (h, w) == (ho, wo) {
        return t.clone();
    }
    Tensor::from_fn(&[c, ho, wo], |i| {
        let (ch, y, x) = (i / (ho * wo), (i / wo) % ho, i % wo);
        let (sy, sx) = (reflect_index(y as isize, h), reflect_index(x as isize, w));
        t.data()[(ch * h + sy) * w + sx]
    })
}

/// Top-left `[C,h,w]` window.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Tensor {
    let (c, th, tw) = t.dims3();
    if (th, tw) == (h, w) {
        return t.clone();
    }
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        t.data()[(ch * th + y) * tw + x]
    })
}

/// Whether weights were trained with alpha and hidden memory inputs.
pub fn uses_memory_extras(model: &Otvm) -> bool {
    model.stages_done.iter().any(|s| s.memory_extras())
}

/// Run the full pipeline over `frames`, calling `on_frame` after each frame
/// with its outputs and wall time.
pub fn run_sequence_with(
    model: &Otvm,
    frames: &[Frame],
    first_trimap: &TrimapSoft,
    mut on_frame: impl FnMut(usize, &FrameOutputs, Duration) -> Result<()>,
) -> Result<Vec<FrameOutputs>> {
    let first = frames.first().ok_or(OtvmError::EmptySequence)?;
    let (h, w) = first.size();
    if first_trimap.size() != (h, w) {
        return shape_err(format!(
            "trimap {:?} does not match frame {:?}",
            first_trimap.size(),
            (h, w)
        ));
    }
    if let Some(f) = frames.iter().find(|f| f.size() != (h, w)) {
        return shape_err(format!(
            "frame size {:?} differs from {:?}",
            f.size(),
            (h, w)
        ));
    }
    let (hp, wp) = (round16(h), round16(w));
    let extras_on = uses_memory_extras(model);
    let mut bank = MemoryBank::<MemoryEntry>::new();
    let mut outputs = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let start = Instant::now();
        let g = Graph::inference();
        let cx = Ctx::frozen(&g, &model.store);
        let fv = g.constant(pad_reflect(frame.tensor(), hp, wp));
        let (trimap, propagated) = if t == 0 {
            (g.constant(pad_reflect(first_trimap.tensor(), hp, wp)), None)
        } else {
            let entries: Vec<MemVar> = bank
                .entries()
                .into_iter()
                .map(|e| MemVar::from_entry(&g, e))
                .collect();
            let p = model.prop.propagate(&cx, &entries, fv)?;
            (p, Some(p))
        };
        let a = model.alpha.predict_alpha(&cx, fv, trimap)?;
        let r = model
            .refine
            .refine(&cx, fv, trimap, a.alpha, Some(a.hidden))?;
        let extras = if extras_on {
            MemoryExtras::Enabled {
                alpha: r.alpha,
                hidden: r.hidden,
            }
        } else {
            MemoryExtras::Disabled
        };
        let mem = model.prop.encode_memory(&cx, fv, r.trimap, extras, t)?;
        memory_policy(&mut bank, mem.to_entry(), t)?;

        let out = FrameOutputs {
            alpha: AlphaMap::new(crop(&r.alpha.value(), h, w))?,
            trimap: TrimapSoft::new(crop(&r.trimap.value(), h, w))?,
            propagated: propagated
                .map(|p| TrimapSoft::new(crop(&p.value(), h, w)))
                .transpose()?,
            fg: Frame::new(crop(&r.fg.value(), h, w))?,
            bg: Frame::new(crop(&r.bg.value(), h, w))?,
        };
        on_frame(t, &out, start.elapsed())?;
        outputs.push(out);
    }
    Ok(outputs)
}

pub fn run_sequence(
    model: &Otvm,
    frames: &[Frame],
    first_trimap: &TrimapSoft,
) -> Result<Vec<FrameOutputs>> {
    run_sequence_with(model, frames, first_trimap, |_, _, _| Ok(()))
}

/// Peak resident set size of this process in bytes, where the OS reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Per-frame timing rows: `frame,seconds,peak_rss_bytes`.
pub struct TimingLog<W: Write> {
    out: W,
}

impl<W: Write> TimingLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "frame,seconds,peak_rss_bytes")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, t: usize, elapsed: Duration) -> Result<()> {
        let rss = peak_rss_bytes().map(|b| b.to_string()).unwrap_or_default();
        writeln!(self.out, "{t},{:.6},{rss}", elapsed.as_secs_f64())?;
        Ok(())
    }
}

/// Output options for [`write_frame_outputs`].
#[derive(Clone, Copy, Debug, Default)]
pub struct OutputOptions {
    pub sixteen_bit: bool,
    pub save_fgbg: bool,
}

/// Files written for one frame, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub alpha: String,
    pub trimap: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fg: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bg: Option<String>,
}

pub fn write_frame_outputs(
    dir: &Path,
    t: usize,
    out: &FrameOutputs,
    opts: OutputOptions,
) -> Result<OutputFiles> {
    let files = OutputFiles {
        alpha: format!("alpha_{t:05}.png"),
        trimap: format!("trimap_{t:05}.png"),
        fg: opts.save_fgbg.then(|| format!("fg_{t:05}.png")),
        bg: opts.save_fgbg.then(|| format!("bg_{t:05}.png")),
    };
    imageio::save_alpha(&dir.join(&files.alpha), &out.alpha, opts.sixteen_bit)?;
    imageio::save_trimap(&dir.join(&files.trimap), &out.trimap.harden())?;
    if let (Some(f), Some(b)) = (&files.fg, &files.bg) {
        imageio::save_frame(&dir.join(f), &out.fg)?;
        imageio::save_frame(&dir.join(b), &out.bg)?;
    }
    Ok(files)
}

/// Summary of an inference run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub frames: Vec<PathBuf>,
    pub trimap: PathBuf,
    pub weights: PathBuf,
    pub stages: Vec<Stage>,
    pub height: usize,
    pub width: usize,
    pub memory_extras: bool,
    pub outputs: Vec<OutputFiles>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::from_fn(&[2, 5, 7], |i| i as f64);
        let p = pad_reflect(&t, 16, 16);
        assert_eq!(p.shape(), &[2, 16, 16]);
        assert_eq!(crop(&p, 5, 7), t);
        // reflection mirrors about the last row without repeating it
        assert_eq!(p.get3(0, 5, 0), t.get3(0, 3, 0));
    }

    #[test]
    fn sizes_round_up() {
        assert_eq!(round16(64), 64);
        assert_eq!(round16(65), 80);
        assert_eq!(round16(1), 16);
    }
}
