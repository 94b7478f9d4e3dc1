use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OtvmError, Result};
use crate::types::{AlphaMap, TrimapClass, TrimapSoft};

/// Square binary dilation with a `k×k` structuring element centred on each
/// pixel. Separable: a row pass followed by a column pass.
pub fn dilate_mask(mask: &[bool], h: usize, w: usize, k: usize) -> Vec<bool> {
    assert_eq!(mask.len(), h * w);
    if k <= 1 {
        return mask.to_vec();
    }
    let r = k / 2;
    let mut rows = vec![false; h * w];
    for y in 0..h {
        let row = &mask[y * w..(y + 1) * w];
        // prefix counts make each window query O(1)
        let mut pre = vec![0usize; w + 1];
        for x in 0..w {
            pre[x + 1] = pre[x] + row[x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            rows[y * w + x] = pre[hi] > pre[lo];
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        let mut pre = vec![0usize; h + 1];
        for y in 0..h {
            pre[y + 1] = pre[y] + rows[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = pre[hi] > pre[lo];
        }
    }
    out
}

/// Pixels with fractional alpha.
pub fn fractional_mask(alpha: &AlphaMap) -> Vec<bool> {
    alpha.values().iter().map(|&a| a > 0.0 && a < 1.0).collect()
}

/// One-hot trimap: foreground where alpha is 1, background where it is 0,
/// unknown elsewhere, with the unknown band dilated by a `kernel×kernel` square.
pub fn make_trimap(alpha: &AlphaMap, kernel: usize) -> Result<TrimapSoft> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(OtvmError::InvalidKernel(kernel));
    }
    let (h, w) = alpha.size();
    let unk = dilate_mask(&fractional_mask(alpha), h, w, kernel);
    let labels: Vec<TrimapClass> = alpha
        .values()
        .iter()
        .zip(&unk)
        .map(|(&a, &u)| {
            if u {
                TrimapClass::Unknown
            } else if a >= 1.0 {
                TrimapClass::Foreground
            } else {
                TrimapClass::Background
            }
        })
        .collect();
    TrimapSoft::from_labels(h, w, &labels)
}

/// Evaluation trimap widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    Narrow,
    Medium,
    Wide,
}

impl EvalSetting {
    pub fn kernel(self) -> usize {
        match self {
            EvalSetting::Narrow => 11,
            EvalSetting::Medium => 25,
            EvalSetting::Wide => 41,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalSetting::Narrow => "narrow",
            EvalSetting::Medium => "medium",
            EvalSetting::Wide => "wide",
        }
    }
}

impl FromStr for EvalSetting {
    type Err = OtvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "narrow" => Ok(EvalSetting::Narrow),
            "medium" => Ok(EvalSetting::Medium),
            "wide" => Ok(EvalSetting::Wide),
            other => Err(OtvmError::UnknownSetting(other.to_string())),
        }
    }
}

pub fn eval_trimap_set(alpha: &AlphaMap, setting: EvalSetting) -> Result<TrimapSoft> {
    make_trimap(alpha, setting.kernel())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_kernel_rejected() {
        let a = AlphaMap::filled(4, 4, 0.5);
        assert!(matches!(
            make_trimap(&a, 4),
            Err(OtvmError::InvalidKernel(4))
        ));
        assert!(make_trimap(&a, 0).is_err());
    }

    #[test]
    fn binary_alpha_kernel_one_has_no_unknown() {
        let a = AlphaMap::from_fn(8, 8, |y, _| if y < 4 { 1.0 } else { 0.0 }).unwrap();
        let t = make_trimap(&a, 1).unwrap();
        assert!(t.unknown_mask().iter().all(|&u| !u));
        assert_eq!(t.labels()[0], TrimapClass::Foreground);
        assert_eq!(t.labels()[63], TrimapClass::Background);
    }

    #[test]
    fn zero_alpha_is_all_background() {
        let a = AlphaMap::filled(8, 8, 0.0);
        for k in [1, 5, 41] {
            assert!(make_trimap(&a, k)
                .unwrap()
                .labels()
                .iter()
                .all(|&l| l == TrimapClass::Background));
        }
    }

    #[test]
    fn setting_names() {
        assert_eq!("medium".parse::<EvalSetting>().unwrap().kernel(), 25);
        assert!(matches!(
            "huge".parse::<EvalSetting>(),
            Err(OtvmError::UnknownSetting(_))
        ));
    }
}
