//! Photometric augmentations. Colour matching and motion blur act on the
//! layers before compositing; JPEG and noise act on the composited frame.

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::types::{AlphaMap, Frame};

/// Per-frame record of the post-composite augmentations that were applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostAug {
    pub jpeg_quality: Option<u8>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl PostAug {
    pub fn none() -> Self {
        Self {
            jpeg_quality: None,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

/// Shift `fg` towards the per-channel mean and standard deviation of `bg`.
/// Statistics of `fg` are taken over pixels with `alpha > 0`.
pub fn match_color_stats(fg: &Frame, alpha: &AlphaMap, bg: &Frame, strength: f64) -> Frame {
    let mut out = fg.tensor().clone();
    let a = alpha.values();
    for c in 0..3 {
        let f = fg.tensor().channel(c);
        let (mf, sf) = masked_stats(f, |i| a[i] > 0.0);
        let (mb, sb) = masked_stats(bg.tensor().channel(c), |_| true);
        let gain = if sf > 1e-6 { sb / sf } else { 1.0 };
        for (o, &v) in out.channel_mut(c).iter_mut().zip(f) {
            let matched = (v - mf) * gain + mb;
            *o = ((1.0 - strength) * v + strength * matched).clamp(0.0, 1.0);
        }
    }
    Frame::new(out).expect("clamped into range")
}

fn masked_stats(x: &[f64], keep: impl Fn(usize) -> bool) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        if keep(i) {
            n += 1.0;
            s += v;
            s2 += v * v;
        }
    }
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let m = s / n;
    (m, (s2 / n - m * m).max(0.0).sqrt())
}

/// Normalised line kernel of odd `len` at `angle` radians, as `(dy, dx, w)` taps.
pub fn line_kernel(len: usize, angle: f64) -> Vec<(isize, isize, f64)> {
    let r = (len / 2) as isize;
    let (s, c) = angle.sin_cos();
    let mut taps: Vec<(isize, isize, f64)> = Vec::new();
    for k in -r..=r {
        let dy = (k as f64 * s).round() as isize;
        let dx = (k as f64 * c).round() as isize;
        match taps.iter_mut().find(|t| t.0 == dy && t.1 == dx) {
            Some(t) => t.2 += 1.0,
            None => taps.push((dy, dx, 1.0)),
        }
    }
    let total = (2 * r + 1) as f64;
    taps.iter_mut().for_each(|t| t.2 /= total);
    taps
}

fn convolve_clamped(x: &Tensor, taps: &[(isize, isize, f64)]) -> Tensor {
    let (c, h, w) = x.dims3();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for &(dy, dx, wt) in taps {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let sx = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
                    acc += wt * src[sy * w + sx];
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    out
}

/// Motion-blur the foreground layer in premultiplied form so that the blurred
/// `(fg, alpha)` pair still composites exactly.
pub fn motion_blur_layer(
    fg: &Frame,
    alpha: &AlphaMap,
    len: usize,
    angle: f64,
) -> (Frame, AlphaMap) {
    let taps = line_kernel(len, angle);
    let a = alpha.values();
    let mut pre = fg.tensor().clone();
    for c in 0..3 {
        for (v, &av) in pre.channel_mut(c).iter_mut().zip(a) {
            *v *= av;
        }
    }
    let pre = convolve_clamped(&pre, &taps);
    let a_blur = convolve_clamped(alpha.tensor(), &taps).map(|v| v.clamp(0.0, 1.0));
    let ab = a_blur.data();
    let mut f = fg.tensor().clone();
    for c in 0..3 {
        let p = pre.channel(c);
        for (i, v) in f.channel_mut(c).iter_mut().enumerate() {
            if ab[i] > 1e-6 {
                *v = (p[i] / ab[i]).clamp(0.0, 1.0);
            }
        }
    }
    (
        Frame::new(f).expect("clamped"),
        AlphaMap::new(a_blur).expect("clamped"),
    )
}

/// Encode and decode as 8-bit JPEG.
pub fn jpeg_roundtrip(frame: &Frame, quality: u8) -> Result<Frame> {
    let (h, w) = frame.size();
    let t = frame.tensor();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| (t.get3(c, y, x) * 255.0).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality).encode_image(&img)?;
    let dec = image::load_from_memory_with_format(&bytes, ImageFormat::Jpeg)?.to_rgb8();
    let out = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        dec.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64 / 255.0
    });
    Frame::new(out)
}

/// Zero-mean Gaussian noise field drawn from `seed`.
pub fn noise_field(shape: &[usize], sigma: f64, seed: u64) -> Tensor {
    if sigma <= 0.0 {
        return Tensor::zeros(shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    Tensor::from_fn(shape, |_| normal.sample(&mut rng))
}

/// JPEG first, then additive noise, clamped to `[0, 1]`.
pub fn apply_post(frame: &Frame, aug: &PostAug) -> Result<Frame> {
    let base = match aug.jpeg_quality {
        Some(q) => jpeg_roundtrip(frame, q)?,
        None => frame.clone(),
    };
    if aug.noise_sigma <= 0.0 {
        return Ok(base);
    }
    let n = noise_field(base.tensor().shape(), aug.noise_sigma, aug.noise_seed);
    Frame::new(base.tensor().zip_map(&n, |v, e| (v + e).clamp(0.0, 1.0)))
}
