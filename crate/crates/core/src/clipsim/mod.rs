//! Synthetic training clips: random affine motion, augmentation, compositing
//! and trimap generation from still foreground/alpha/background sources.

pub mod augment;
pub mod procedural;
pub mod trimap;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Preset;
use crate::error::{shape_err, OtvmError, Result};
use crate::imageio;
use crate::tensor::Tensor;
use crate::types::{AlphaMap, Frame, TrimapSoft};

pub use augment::PostAug;
pub use trimap::{dilate_mask, eval_trimap_set, fractional_mask, make_trimap, EvalSetting};

/// Per-pixel `alpha·fg + (1 − alpha)·bg`, clipped to `[0, 1]`.
pub fn composite(fg: &Frame, alpha: &AlphaMap, bg: &Frame) -> Result<Frame> {
    if fg.size() != alpha.size() || bg.size() != alpha.size() {
        return shape_err(format!(
            "composite: fg {:?}, alpha {:?}, bg {:?}",
            fg.size(),
            alpha.size(),
            bg.size()
        ));
    }
    let a = alpha.values();
    let hw = a.len();
    let (f, b) = (fg.tensor().data(), bg.tensor().data());
    let out = Tensor::from_fn(fg.tensor().shape(), |i| {
        let av = a[i % hw];
        (av * f[i] + (1.0 - av) * b[i]).clamp(0.0, 1.0)
    });
    Frame::new(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSimConfig {
    /// Square output size of every clip frame.
    pub out_size: usize,
    /// Candidate square crop sizes in source pixels.
    pub crop_sizes: Vec<usize>,
    pub frames: usize,
    /// Disable to keep every frame on the identity transform.
    pub motion: bool,
    pub max_rotation_deg: f64,
    pub zoom_range: [f64; 2],
    pub max_shear_deg: f64,
    /// Translation bound as a fraction of the crop size.
    pub max_translate: f64,
    pub flip_prob: f64,
    /// Largest trimap dilation kernel; kernels are odd values up to this bound.
    pub max_trimap_kernel: usize,
    /// Master switch for every photometric augmentation.
    pub augment: bool,
    pub color_match_prob: f64,
    pub motion_blur_prob: f64,
    pub max_blur_len: usize,
    pub noise_prob: f64,
    pub max_noise_sigma: f64,
    pub jpeg_prob: f64,
    pub jpeg_quality: [u8; 2],
}

impl ClipSimConfig {
    pub fn for_preset(p: Preset) -> Self {
        let (out_size, crop_sizes) = match p {
            Preset::Paper => (320, vec![320, 480, 640]),
            Preset::Toy => (64, vec![64, 96, 128]),
        };
        Self {
            out_size,
            crop_sizes,
            frames: 3,
            motion: true,
            max_rotation_deg: 30.0,
            zoom_range: [0.8, 1.25],
            max_shear_deg: 10.0,
            max_translate: 0.1,
            flip_prob: 0.5,
            max_trimap_kernel: 26,
            augment: true,
            color_match_prob: 0.5,
            motion_blur_prob: 0.3,
            max_blur_len: 11,
            noise_prob: 0.5,
            max_noise_sigma: 0.02,
            jpeg_prob: 0.5,
            jpeg_quality: [70, 95],
        }
    }

    /// Identity motion and no augmentation.
    pub fn plain(p: Preset) -> Self {
        Self {
            motion: false,
            augment: false,
            ..Self::for_preset(p)
        }
    }
}

/// Affine motion parameters, applied about the crop centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub rotation: f64,
    pub shear: f64,
    pub zoom: f64,
    /// Translation `(ty, tx)` as a fraction of the crop size.
    pub translate: (f64, f64),
    pub flip: bool,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        rotation: 0.0,
        shear: 0.0,
        zoom: 1.0,
        translate: (0.0, 0.0),
        flip: false,
    };

    fn random(cfg: &ClipSimConfig, flip: bool, rng: &mut ChaCha8Rng) -> Self {
        let rot = cfg.max_rotation_deg.to_radians();
        let sh = cfg.max_shear_deg.to_radians();
        let t = cfg.max_translate;
        Affine {
            rotation: if rot > 0.0 {
                rng.random_range(-rot..=rot)
            } else {
                0.0
            },
            shear: if sh > 0.0 {
                rng.random_range(-sh..=sh)
            } else {
                0.0
            },
            zoom: rng.random_range(cfg.zoom_range[0]..=cfg.zoom_range[1]),
            translate: if t > 0.0 {
                (rng.random_range(-t..=t), rng.random_range(-t..=t))
            } else {
                (0.0, 0.0)
            },
            flip,
        }
    }

    fn lerp(a: &Affine, b: &Affine, s: f64) -> Affine {
        let l = |x: f64, y: f64| x + (y - x) * s;
        Affine {
            rotation: l(a.rotation, b.rotation),
            shear: l(a.shear, b.shear),
            zoom: a.zoom * (b.zoom / a.zoom).powf(s),
            translate: (
                l(a.translate.0, b.translate.0),
                l(a.translate.1, b.translate.1),
            ),
            flip: a.flip,
        }
    }

    /// Inverse linear part, row-major `[a, b, c, d]` acting on `(x, y)` offsets.
    fn inverse_matrix(&self) -> [f64; 4] {
        // forward: M = z · R(θ) · Sh(φ) · F, acting on (x, y) column vectors
        let (s, c) = self.rotation.sin_cos();
        let k = self.shear.tan();
        let f = if self.flip { -1.0 } else { 1.0 };
        // R·Sh with Sh = [[1, k], [0, 1]]
        let m = [c, c * k - s, s, s * k + c];
        // apply flip on x input column, then zoom
        let m = [
            m[0] * f * self.zoom,
            m[1] * self.zoom,
            m[2] * f * self.zoom,
            m[3] * self.zoom,
        ];
        let det = m[0] * m[3] - m[1] * m[2];
        [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]
    }

    /// Source position `(y, x)` of the output position `(y, x)` around `centre`.
    fn source_of(&self, m: &[f64; 4], centre: (f64, f64), size: f64, p: (f64, f64)) -> (f64, f64) {
        let dx = p.1 - centre.1 - self.translate.1 * size;
        let dy = p.0 - centre.0 - self.translate.0 * size;
        let sx = m[0] * dx + m[1] * dy;
        let sy = m[2] * dx + m[3] * dy;
        (centre.0 + sy, centre.1 + sx)
    }
}

/// Bilinear sample of channel `c` at `(y, x)` with clamp-to-edge.
fn sample(t: &Tensor, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = t.dims3();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let d = t.channel(c);
    let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
    let bot = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
    if fy == 0.0 {
        top
    } else {
        top * (1.0 - fy) + bot * fy
    }
}

/// Crop window in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crop {
    pub top: f64,
    pub left: f64,
    pub size: usize,
}

/// Warp `t` into an `out×out` grid covering `crop`, moved by `aff`.
/// `scale` maps crop coordinates into `t`'s pixel grid.
fn warp(t: &Tensor, crop: &Crop, aff: &Affine, out: usize, scale: (f64, f64)) -> Tensor {
    let c = t.shape()[0];
    let step = crop.size as f64 / out as f64;
    let half = crop.size as f64 / 2.0 - 0.5;
    let centre = (crop.top + half, crop.left + half);
    let inv = aff.inverse_matrix();
    let identity = *aff == Affine::IDENTITY;
    let mut res = Tensor::zeros(&[c, out, out]);
    for v in 0..out {
        for u in 0..out {
            let q = (
                crop.top + (v as f64 + 0.5) * step - 0.5,
                crop.left + (u as f64 + 0.5) * step - 0.5,
            );
            let (sy, sx) = if identity {
                q
            } else {
                aff.source_of(&inv, centre, crop.size as f64, q)
            };
            for ch in 0..c {
                res.set3(
                    ch,
                    v,
                    u,
                    sample(
                        t,
                        ch,
                        (sy + 0.5) * scale.0 - 0.5,
                        (sx + 0.5) * scale.1 - 0.5,
                    ),
                );
            }
        }
    }
    res
}

/// Per-clip generation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub seed: u64,
    pub crop: Crop,
    /// Whether the crop was centred on an unknown pixel or on the alpha centroid.
    pub centred_on_unknown: bool,
    pub fg_motion: Vec<Affine>,
    pub bg_motion: Vec<Affine>,
    pub trimap_kernels: Vec<usize>,
    pub post: Vec<PostAug>,
}

/// A synthetic clip. `frames[t]` is the post-augmentation composite of
/// `fg[t]`, `alphas[t]` and `bg[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub frames: Vec<Frame>,
    pub alphas: Vec<AlphaMap>,
    pub trimaps: Vec<TrimapSoft>,
    pub fg: Vec<Frame>,
    pub bg: Vec<Frame>,
    pub meta: ClipMeta,
}

impl ClipSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// A clip that repeats one composited frame `t` times.
    pub fn static_clip(
        fg: &Frame,
        alpha: &AlphaMap,
        bg: &Frame,
        t: usize,
        kernel: usize,
    ) -> Result<Self> {
        let frame = composite(fg, alpha, bg)?;
        let tri = make_trimap(alpha, kernel)?;
        let (h, w) = alpha.size();
        Ok(Self {
            frames: vec![frame; t],
            alphas: vec![alpha.clone(); t],
            trimaps: vec![tri; t],
            fg: vec![fg.clone(); t],
            bg: vec![bg.clone(); t],
            meta: ClipMeta {
                seed: 0,
                crop: Crop {
                    top: 0.0,
                    left: 0.0,
                    size: h.max(w),
                },
                centred_on_unknown: true,
                fg_motion: vec![Affine::IDENTITY; t],
                bg_motion: vec![Affine::IDENTITY; t],
                trimap_kernels: vec![kernel; t],
                post: vec![PostAug::none(); t],
            },
        })
    }
}

fn choose_centre(alpha: &AlphaMap, rng: &mut ChaCha8Rng) -> ((f64, f64), bool) {
    let (h, w) = alpha.size();
    let unk: Vec<usize> = fractional_mask(alpha)
        .iter()
        .enumerate()
        .filter(|(_, &u)| u)
        .map(|(i, _)| i)
        .collect();
    if !unk.is_empty() {
        let i = unk[rng.random_range(0..unk.len())];
        return (((i / w) as f64, (i % w) as f64), true);
    }
    let (mut m, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for (i, &a) in alpha.values().iter().enumerate() {
        m += a;
        sy += a * (i / w) as f64;
        sx += a * (i % w) as f64;
    }
    if m > 0.0 {
        ((sy / m, sx / m), false)
    } else {
        (((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0), false)
    }
}

fn place_crop(centre: (f64, f64), size: usize, h: usize, w: usize) -> Crop {
    let place = |c: f64, n: usize| {
        let start = (c - size as f64 / 2.0).round();
        if n >= size {
            start.clamp(0.0, (n - size) as f64)
        } else {
            (n as f64 - size as f64) / 2.0
        }
    };
    Crop {
        top: place(centre.0, h),
        left: place(centre.1, w),
        size,
    }
}

fn odd_kernel(max: usize, rng: &mut ChaCha8Rng) -> usize {
    let top = if max.is_multiple_of(2) { max - 1 } else { max }.max(1);
    2 * rng.random_range(0..=top / 2) + 1
}

/// Generate a `t`-frame clip. A pure function of the inputs, config and seed.
pub fn simulate_clip(
    fg: &Frame,
    alpha: &AlphaMap,
    bg: &Frame,
    t: usize,
    seed: u64,
    cfg: &ClipSimConfig,
) -> Result<ClipSample> {
    if t == 0 {
        return Err(OtvmError::EmptySequence);
    }
    if fg.size() != alpha.size() {
        return shape_err(format!(
            "fg {:?} and alpha {:?} are not aligned",
            fg.size(),
            alpha.size()
        ));
    }
    if cfg.crop_sizes.is_empty() || cfg.out_size == 0 {
        return Err(OtvmError::Config(
            "clipsim needs crop sizes and an output size".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = alpha.size();
    let size = cfg.crop_sizes[rng.random_range(0..cfg.crop_sizes.len())];
    let (centre, on_unknown) = choose_centre(alpha, &mut rng);
    let crop = place_crop(centre, size, h, w);
    let bg_scale = (bg.height() as f64 / h as f64, bg.width() as f64 / w as f64);

    let (fg_motion, bg_motion) = if cfg.motion {
        let flip = rng.random_bool(cfg.flip_prob);
        let (fa, fb) = (
            Affine::random(cfg, flip, &mut rng),
            Affine::random(cfg, flip, &mut rng),
        );
        let (ba, bb) = (
            Affine::random(cfg, flip, &mut rng),
            Affine::random(cfg, flip, &mut rng),
        );
        let at = |s: f64| (Affine::lerp(&fa, &fb, s), Affine::lerp(&ba, &bb, s));
        (0..t)
            .map(|i| {
                at(if t > 1 {
                    i as f64 / (t - 1) as f64
                } else {
                    0.0
                })
            })
            .unzip()
    } else {
        (vec![Affine::IDENTITY; t], vec![Affine::IDENTITY; t])
    };

    // clip-level augmentation draws
    let color = cfg.augment && rng.random_bool(cfg.color_match_prob);
    let color_strength = rng.random_range(0.0..=1.0);
    let blur = cfg.augment && rng.random_bool(cfg.motion_blur_prob);
    let blur_len = odd_kernel(cfg.max_blur_len.max(1), &mut rng);
    let blur_angle = rng.random_range(0.0..std::f64::consts::PI);

    let out = cfg.out_size;
    let mut sample = ClipSample {
        frames: Vec::with_capacity(t),
        alphas: Vec::with_capacity(t),
        trimaps: Vec::with_capacity(t),
        fg: Vec::with_capacity(t),
        bg: Vec::with_capacity(t),
        meta: ClipMeta {
            seed,
            crop,
            centred_on_unknown: on_unknown,
            fg_motion: fg_motion.clone(),
            bg_motion: bg_motion.clone(),
            trimap_kernels: Vec::with_capacity(t),
            post: Vec::with_capacity(t),
        },
    };
    for i in 0..t {
        let f = Frame::new(
            warp(fg.tensor(), &crop, &fg_motion[i], out, (1.0, 1.0)).map(|v| v.clamp(0.0, 1.0)),
        )?;
        let a = AlphaMap::new(
            warp(alpha.tensor(), &crop, &fg_motion[i], out, (1.0, 1.0)).map(|v| v.clamp(0.0, 1.0)),
        )?;
        let b = Frame::new(
            warp(bg.tensor(), &crop, &bg_motion[i], out, bg_scale).map(|v| v.clamp(0.0, 1.0)),
        )?;
        let f = if color {
            augment::match_color_stats(&f, &a, &b, color_strength)
        } else {
            f
        };
        let (f, a) = if blur && blur_len > 1 {
            augment::motion_blur_layer(&f, &a, blur_len, blur_angle)
        } else {
            (f, a)
        };
        let clean = composite(&f, &a, &b)?;
        let post = if cfg.augment {
            let jpeg = rng
                .random_bool(cfg.jpeg_prob)
                .then(|| rng.random_range(cfg.jpeg_quality[0]..=cfg.jpeg_quality[1]));
            let noisy = rng.random_bool(cfg.noise_prob);
            let sigma = rng.random_range(0.0..=cfg.max_noise_sigma);
            PostAug {
                jpeg_quality: jpeg,
                noise_sigma: if noisy { sigma } else { 0.0 },
                noise_seed: rng.random(),
            }
        } else {
            PostAug::none()
        };
        let frame = augment::apply_post(&clean, &post)?;
        let kernel = odd_kernel(cfg.max_trimap_kernel, &mut rng);
        sample.trimaps.push(make_trimap(&a, kernel)?);
        sample.meta.trimap_kernels.push(kernel);
        sample.meta.post.push(post);
        sample.frames.push(frame);
        sample.alphas.push(a);
        sample.fg.push(f);
        sample.bg.push(b);
    }
    Ok(sample)
}

/// File names of one clip frame inside its clip directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFiles {
    pub image: String,
    pub alpha: String,
    pub trimap: String,
    pub fg: String,
    pub bg: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub meta: ClipMeta,
    pub frames: Vec<FrameFiles>,
}

/// Write a clip as PNGs plus `manifest.json` into `dir`.
pub fn write_clip(dir: &Path, clip: &ClipSample) -> Result<ClipManifest> {
    std::fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(clip.len());
    for t in 0..clip.len() {
        let files = FrameFiles {
            image: format!("image_{t:03}.png"),
            alpha: format!("alpha_{t:03}.png"),
            trimap: format!("trimap_{t:03}.png"),
            fg: format!("fg_{t:03}.png"),
            bg: format!("bg_{t:03}.png"),
        };
        imageio::save_frame(&dir.join(&files.image), &clip.frames[t])?;
        imageio::save_alpha(&dir.join(&files.alpha), &clip.alphas[t], false)?;
        imageio::save_trimap(&dir.join(&files.trimap), &clip.trimaps[t])?;
        imageio::save_frame(&dir.join(&files.fg), &clip.fg[t])?;
        imageio::save_frame(&dir.join(&files.bg), &clip.bg[t])?;
        frames.push(files);
    }
    let manifest = ClipManifest {
        meta: clip.meta.clone(),
        frames,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Read a clip written by [`write_clip`]. Pixel values are 8-bit quantised.
pub fn read_clip(dir: &Path) -> Result<ClipSample> {
    let manifest: ClipManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut clip = ClipSample {
        frames: Vec::new(),
        alphas: Vec::new(),
        trimaps: Vec::new(),
        fg: Vec::new(),
        bg: Vec::new(),
        meta: manifest.meta,
    };
    for f in &manifest.frames {
        clip.frames.push(imageio::load_frame(&dir.join(&f.image))?);
        clip.alphas.push(imageio::load_alpha(&dir.join(&f.alpha))?);
        clip.trimaps
            .push(imageio::load_trimap(&dir.join(&f.trimap))?);
        clip.fg.push(imageio::load_frame(&dir.join(&f.fg))?);
        clip.bg.push(imageio::load_frame(&dir.join(&f.bg))?);
    }
    if clip.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_identity_cases() {
        let fg = Frame::filled(4, 4, [1.0, 0.0, 0.0]);
        let bg = Frame::filled(4, 4, [0.0, 0.0, 1.0]);
        assert_eq!(
            composite(&fg, &AlphaMap::filled(4, 4, 1.0), &bg).unwrap(),
            fg
        );
        assert_eq!(
            composite(&fg, &AlphaMap::filled(4, 4, 0.0), &bg).unwrap(),
            bg
        );
        let half = composite(&fg, &AlphaMap::filled(4, 4, 0.5), &bg).unwrap();
        assert_eq!(
            [0, 1, 2].map(|c| half.tensor().get3(c, 2, 3)),
            [0.5, 0.0, 0.5]
        );
    }

    #[test]
    fn composite_rejects_mismatch() {
        let fg = Frame::filled(4, 4, [1.0, 0.0, 0.0]);
        let bg = Frame::filled(4, 5, [0.0, 0.0, 1.0]);
        assert!(matches!(
            composite(&fg, &AlphaMap::filled(4, 4, 1.0), &bg),
            Err(OtvmError::Shape(_))
        ));
    }

    #[test]
    fn inverse_matrix_inverts() {
        let a = Affine {
            rotation: 0.3,
            shear: -0.1,
            zoom: 1.2,
            translate: (0.0, 0.0),
            flip: true,
        };
        let inv = a.inverse_matrix();
        // forward matrix rebuilt independently
        let (s, c) = a.rotation.sin_cos();
        let k = a.shear.tan();
        let fwd = [
            -(c) * a.zoom,
            (c * k - s) * a.zoom,
            -(s) * a.zoom,
            (s * k + c) * a.zoom,
        ];
        let p = [
            fwd[0] * inv[0] + fwd[1] * inv[2],
            fwd[0] * inv[1] + fwd[1] * inv[3],
            fwd[2] * inv[0] + fwd[3] * inv[2],
            fwd[2] * inv[1] + fwd[3] * inv[3],
        ];
        for (v, e) in p.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn kernels_are_odd_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ks: Vec<usize> = (0..500).map(|_| odd_kernel(26, &mut rng)).collect();
        assert!(ks.iter().all(|&k| k % 2 == 1 && (1..=25).contains(&k)));
        assert!(ks.contains(&1) && ks.contains(&25));
    }

    #[test]
    fn crop_falls_back_to_centroid() {
        let alpha =
            AlphaMap::from_fn(32, 32, |y, x| if y >= 16 && x >= 16 { 1.0 } else { 0.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ((cy, cx), on_unk) = choose_centre(&alpha, &mut rng);
        assert!(!on_unk);
        assert_eq!((cy, cx), (23.5, 23.5));
    }
}
