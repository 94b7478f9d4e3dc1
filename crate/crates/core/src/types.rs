//! Per-frame signals: colour frames, alpha mattes and soft trimaps.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, OtvmError, Result};
use crate::tensor::Tensor;

/// Trimap classes in channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimapClass {
    Background = 0,
    Unknown = 1,
    Foreground = 2,
}

impl TrimapClass {
    /// 8-bit PNG encoding.
    pub fn gray(self) -> u8 {
        match self {
            TrimapClass::Background => 0,
            TrimapClass::Unknown => 128,
            TrimapClass::Foreground => 255,
        }
    }

    /// Nearest class for a gray level.
    pub fn from_gray(v: u8) -> Self {
        match v {
            0..=63 => TrimapClass::Background,
            64..=191 => TrimapClass::Unknown,
            _ => TrimapClass::Foreground,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => TrimapClass::Background,
            1 => TrimapClass::Unknown,
            _ => TrimapClass::Foreground,
        }
    }
}

fn check_range(t: &Tensor, what: &str) -> Result<()> {
    if t.data().iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(OtvmError::InvalidArgument(format!(
            "{what} values must lie in [0, 1]"
        )))
    }
}

/// Spatial sizes the networks accept.
pub fn check_network_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(16) || !w.is_multiple_of(16) {
        return shape_err(format!(
            "spatial size {h}x{w} must be a positive multiple of 16"
        ));
    }
    Ok(())
}

/// Linear RGB frame, `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(Tensor);

impl Frame {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return shape_err(format!("frame must be [3,H,W], got {:?}", t.shape()));
        }
        check_range(&t, "frame")?;
        Ok(Self(t))
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let hw = h * w;
        Self(Tensor::from_fn(&[3, h, w], |i| rgb[i / hw]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

/// Alpha matte, `[1, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap(Tensor);

impl AlphaMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[0] != 1 {
            return shape_err(format!("alpha must be [1,H,W], got {:?}", t.shape()));
        }
        check_range(&t, "alpha")?;
        Ok(Self(t))
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Tensor::from_fn(&[1, h, w], |i| f(i / w, i % w)))
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Self(Tensor::full(&[1, h, w], v.clamp(0.0, 1.0)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.0.data()[y * self.width() + x]
    }
}

/// Per-pixel class probabilities `[3, H, W]` in (background, unknown,
/// foreground) order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimapSoft(Tensor);

pub const SIMPLEX_TOL: f64 = 1e-5;

impl TrimapSoft {
    pub fn new(t: Tensor) -> Result<Self> {
        Self::validate(&t)?;
        Ok(Self(t))
    }

    /// Check that `t` is a `[3, H, W]` map of per-pixel class distributions.
    pub fn validate(t: &Tensor) -> Result<()> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return shape_err(format!("trimap must be [3,H,W], got {:?}", t.shape()));
        }
        let hw = t.shape()[1] * t.shape()[2];
        let d = t.data();
        for i in 0..hw {
            let (a, b, c) = (d[i], d[hw + i], d[2 * hw + i]);
            if !(a >= 0.0 && b >= 0.0 && c >= 0.0) {
                return Err(OtvmError::InvalidTrimap(format!(
                    "negative or NaN probability at pixel {i}"
                )));
            }
            if ((a + b + c) - 1.0).abs() > SIMPLEX_TOL {
                return Err(OtvmError::InvalidTrimap(format!(
                    "probabilities at pixel {i} sum to {}",
                    a + b + c
                )));
            }
        }
        Ok(())
    }

    /// One-hot trimap from per-pixel labels (row-major).
    pub fn from_labels(h: usize, w: usize, labels: &[TrimapClass]) -> Result<Self> {
        if labels.len() != h * w {
            return shape_err(format!("{} labels for a {h}x{w} trimap", labels.len()));
        }
        let hw = h * w;
        let mut t = Tensor::zeros(&[3, h, w]);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[l as usize * hw + i] = 1.0;
        }
        Ok(Self(t))
    }

    pub fn filled(h: usize, w: usize, class: TrimapClass) -> Self {
        Self::from_labels(h, w, &vec![class; h * w]).expect("sizes agree")
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn prob(&self, class: TrimapClass) -> &[f64] {
        self.0.channel(class as usize)
    }

    /// Per-pixel argmax class; ties resolve towards unknown, then foreground.
    pub fn labels(&self) -> Vec<TrimapClass> {
        let hw = self.height() * self.width();
        let d = self.0.data();
        (0..hw)
            .map(|i| {
                let (bg, unk, fg) = (d[i], d[hw + i], d[2 * hw + i]);
                if unk >= bg && unk >= fg {
                    TrimapClass::Unknown
                } else if fg >= bg {
                    TrimapClass::Foreground
                } else {
                    TrimapClass::Background
                }
            })
            .collect()
    }

    /// Hard unknown mask of the argmax labels.
    pub fn unknown_mask(&self) -> Vec<bool> {
        self.labels()
            .into_iter()
            .map(|l| l == TrimapClass::Unknown)
            .collect()
    }

    pub fn is_one_hot(&self) -> bool {
        let hw = self.height() * self.width();
        let d = self.0.data();
        (0..hw).all(|i| {
            let v = [d[i], d[hw + i], d[2 * hw + i]];
            v.iter().all(|&p| p == 0.0 || p == 1.0) && v.iter().sum::<f64>() == 1.0
        })
    }

    /// Hard argmax re-encoded one-hot.
    pub fn harden(&self) -> TrimapSoft {
        Self::from_labels(self.height(), self.width(), &self.labels()).expect("sizes agree")
    }

    /// Fraction of pixels whose argmax matches `other`'s.
    pub fn agreement(&self, other: &TrimapSoft) -> f64 {
        let (a, b) = (self.labels(), other.labels());
        a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
    }
}
