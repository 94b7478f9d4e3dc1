//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;

use otvm::clipsim::procedural::{source_triplet, SourceTriplet};
use otvm::clipsim::{composite, make_trimap, simulate_clip, ClipSample, ClipSimConfig};
use otvm::trimap_prop::memory::{FrameIndexed, MemoryBank};
use otvm::{AlphaMap, Frame, Preset, TrimapSoft};

fn err(e: otvm::OtvmError) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba_from_frame(f: &Frame) -> Vec<u8> {
    let (h, w) = f.size();
    let t = f.tensor();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    (0..h * w)
        .flat_map(|i| {
            [
                q(t.channel(0)[i]),
                q(t.channel(1)[i]),
                q(t.channel(2)[i]),
                255,
            ]
        })
        .collect()
}

fn rgba_from_gray(v: impl Iterator<Item = u8>) -> Vec<u8> {
    v.flat_map(|g| [g, g, g, 255]).collect()
}

fn rgba_from_alpha(a: &AlphaMap) -> Vec<u8> {
    rgba_from_gray(
        a.values()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    )
}

fn rgba_from_trimap(t: &TrimapSoft) -> Vec<u8> {
    rgba_from_gray(t.labels().into_iter().map(|l| l.gray()))
}

/// A procedural foreground/alpha/background triplet.
#[wasm_bindgen]
pub struct Scene {
    src: SourceTriplet,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u32) -> Scene {
        Scene {
            src: source_triplet(size, size, seed as u64),
        }
    }

    pub fn size(&self) -> usize {
        self.src.alpha.width()
    }

    pub fn composite_rgba(&self) -> Result<Vec<u8>, JsError> {
        Ok(rgba_from_frame(
            &composite(&self.src.fg, &self.src.alpha, &self.src.bg).map_err(err)?,
        ))
    }

    pub fn alpha_rgba(&self) -> Vec<u8> {
        rgba_from_alpha(&self.src.alpha)
    }

    /// Trimap with the unknown band dilated by a `kernel×kernel` square.
    pub fn trimap_rgba(&self, kernel: usize) -> Result<Vec<u8>, JsError> {
        Ok(rgba_from_trimap(
            &make_trimap(&self.src.alpha, kernel).map_err(err)?,
        ))
    }

    /// Synthesise a moving clip from this scene.
    pub fn clip(&self, frames: usize, seed: u32, augment: bool) -> Result<Clip, JsError> {
        let cfg = ClipSimConfig {
            augment,
            ..ClipSimConfig::for_preset(Preset::Toy)
        };
        let c = simulate_clip(
            &self.src.fg,
            &self.src.alpha,
            &self.src.bg,
            frames,
            seed as u64,
            &cfg,
        )
        .map_err(err)?;
        Ok(Clip { c })
    }
}

/// Frames of a synthesised clip.
#[wasm_bindgen]
pub struct Clip {
    c: ClipSample,
}

#[wasm_bindgen]
impl Clip {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn size(&self) -> usize {
        self.c.frames[0].width()
    }

    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        rgba_from_frame(&self.c.frames[t.min(self.c.len() - 1)])
    }

    pub fn alpha_rgba(&self, t: usize) -> Vec<u8> {
        rgba_from_alpha(&self.c.alphas[t.min(self.c.len() - 1)])
    }

    pub fn trimap_rgba(&self, t: usize) -> Vec<u8> {
        rgba_from_trimap(&self.c.trimaps[t.min(self.c.len() - 1)])
    }

    /// Per-frame metadata as JSON.
    pub fn meta_json(&self) -> String {
        serde_json::to_string(&self.c.meta).unwrap_or_default()
    }
}

#[derive(Clone)]
struct Slot(usize);

impl FrameIndexed for Slot {
    fn frame_index(&self) -> usize {
        self.0
    }
}

/// Memory contents after each of frames `0..=t_max`, as a JSON array of
/// `{t, reference, previous, intermediates}` records.
#[wasm_bindgen]
pub fn memory_schedule(t_max: usize) -> Result<String, JsError> {
    let mut bank = MemoryBank::new();
    let mut rows = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        bank.update(Slot(t), t).map_err(err)?;
        rows.push(serde_json::json!({
            "t": t,
            "reference": bank.reference().map(|s| s.0),
            "previous": bank.previous().map(|s| s.0),
            "intermediates": bank.intermediates().map(|s| s.0).collect::<Vec<_>>(),
            "size": bank.len(),
        }));
    }
    Ok(serde_json::Value::Array(rows).to_string())
}
