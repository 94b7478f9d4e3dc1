//! PNG reading and writing for frames, mattes and trimaps.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::types::{AlphaMap, Frame, TrimapClass, TrimapSoft};

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn frame_to_rgb8(frame: &Frame) -> RgbImage {
    let (h, w) = frame.size();
    let t = frame.tensor();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        image::Rgb([0, 1, 2].map(|c| to_u8(t.get3(c, y, x))))
    })
}

pub fn save_frame(path: &Path, frame: &Frame) -> Result<()> {
    frame_to_rgb8(frame).save(path)?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    Frame::new(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / hw, i % hw);
        img.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64 / 255.0
    }))
}

/// Save a matte as 8-bit or 16-bit grayscale.
pub fn save_alpha(path: &Path, alpha: &AlphaMap, sixteen_bit: bool) -> Result<()> {
    let (h, w) = alpha.size();
    if sixteen_bit {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([(alpha.at(y as usize, x as usize) * 65535.0).round() as u16])
            });
        img.save(path)?;
    } else {
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([to_u8(alpha.at(y as usize, x as usize))])
        })
        .save(path)?;
    }
    Ok(())
}

/// Load a matte; colour images use their first channel.
pub fn load_alpha(path: &Path) -> Result<AlphaMap> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    AlphaMap::from_fn(h, w, |y, x| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0
    })
}

pub fn save_trimap(path: &Path, trimap: &TrimapSoft) -> Result<()> {
    let (h, w) = trimap.size();
    let labels = trimap.labels();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([labels[y as usize * w + x as usize].gray()])
    })
    .save(path)?;
    Ok(())
}

/// Load a 0/128/255 trimap PNG as a one-hot trimap.
pub fn load_trimap(path: &Path) -> Result<TrimapSoft> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<TrimapClass> = img.pixels().map(|p| TrimapClass::from_gray(p[0])).collect();
    TrimapSoft::from_labels(h, w, &labels)
}

/// Sorted PNG paths in a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

pub fn check_same_size(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return shape_err(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1));
    }
    Ok(())
}
