//! Procedural foreground/alpha/background sources for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::types::{AlphaMap, Frame};

/// A foreground layer, its matte, and a background plate.
#[derive(Clone, Debug)]
pub struct SourceTriplet {
    pub fg: Frame,
    pub alpha: AlphaMap,
    pub bg: Frame,
}

fn smooth_pattern(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    let base: [f64; 3] = [
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
    ];
    let amp: [f64; 3] = [
        rng.random_range(0.05..0.15),
        rng.random_range(0.05..0.15),
        rng.random_range(0.05..0.15),
    ];
    let fy = rng.random_range(1.0..3.0) * std::f64::consts::TAU / h as f64;
    let fx = rng.random_range(1.0..3.0) * std::f64::consts::TAU / w as f64;
    let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let hw = h * w;
    Frame::new(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / hw, i % hw);
        let (y, x) = ((p / w) as f64, (p % w) as f64);
        let v = base[c] + amp[c] * ((fy * y + ph + c as f64).sin() + (fx * x - ph).cos()) * 0.5;
        v.clamp(0.0, 1.0)
    }))
    .expect("clamped")
}

/// Ellipse centred at `(cy, cx)` with radii `(ry, rx)` and a linear ramp of `edge` pixels.
pub fn soft_ellipse(h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64, edge: f64) -> AlphaMap {
    AlphaMap::from_fn(h, w, |y, x| {
        let dy = (y as f64 - cy) / ry;
        let dx = (x as f64 - cx) / rx;
        let d = ((dy * dy + dx * dx).sqrt() - 1.0) * ry.min(rx);
        (0.5 - d / edge).clamp(0.0, 1.0)
    })
    .expect("clamped")
}

/// Deterministic source triplet of size `h×w`.
pub fn source_triplet(h: usize, w: usize, seed: u64) -> SourceTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fg = smooth_pattern(h, w, &mut rng);
    let bg = smooth_pattern(h, w, &mut rng);
    let cy = h as f64 * rng.random_range(0.4..0.6);
    let cx = w as f64 * rng.random_range(0.4..0.6);
    let ry = h as f64 * rng.random_range(0.2..0.3);
    let rx = w as f64 * rng.random_range(0.2..0.3);
    let edge = rng.random_range(2.0..4.0);
    let alpha = soft_ellipse(h, w, cy, cx, ry, rx, edge);
    SourceTriplet { fg, alpha, bg }
}
