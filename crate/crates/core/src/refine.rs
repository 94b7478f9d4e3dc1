//! Alpha-trimap refinement: two residual blocks that correct the trimap and
//! alpha, predict colours, and emit the hidden feature written to memory.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ConvGeom, Var};
use crate::config::ModelConfig;
use crate::error::{shape_err, OtvmError, Result};
use crate::nn::{Act, Conv, ConvBlock, Ctx, Init, ModuleKind, ParamStore, ResBlock};

/// Refined per-frame outputs.
#[derive(Clone, Copy)]
pub struct RefineOut<'g> {
    pub alpha: Var<'g>,
    pub trimap: Var<'g>,
    pub fg: Var<'g>,
    pub bg: Var<'g>,
    pub hidden: Var<'g>,
}

pub struct Refine {
    stem: ConvBlock,
    blocks: [ResBlock; 2],
    /// Zero-initialised alpha (1) and trimap (3) corrections.
    correction: Conv,
    /// Foreground (3), background (3) and hidden channels.
    heads: Conv,
    in_channels: usize,
    hidden: usize,
}

impl Refine {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let init = &mut Init {
            store,
            module: ModuleKind::Refine,
            rng,
        };
        let r = cfg.refine_channels;
        let norm = cfg.refine_norm;
        let stem = ConvBlock::new(
            init,
            "stem",
            cfg.refine_in_channels(),
            r,
            3,
            ConvGeom::same(3),
            norm,
            Act::Relu,
        );
        let blocks = [
            ResBlock::new(init, "block1", r, r, 1, 1, norm, Act::Relu),
            ResBlock::new(init, "block2", r, r, 1, 1, norm, Act::Relu),
        ];
        let correction = Conv::zeros(init, "correction", r, 4, 1);
        let heads = Conv::same(init, "heads", r, 6 + cfg.refine_hidden, 1, false);
        Self {
            stem,
            blocks,
            correction,
            heads,
            in_channels: cfg.refine_in_channels(),
            hidden: cfg.refine_hidden,
        }
    }

    pub fn correction(&self) -> &Conv {
        &self.correction
    }

    /// Refine `trimap` and `alpha` for one frame given the alpha network's
    /// hidden feature.
    pub fn refine<'g>(
        &self,
        cx: &Ctx<'g>,
        frame: Var<'g>,
        trimap: Var<'g>,
        alpha: Var<'g>,
        hidden64: Option<Var<'g>>,
    ) -> Result<RefineOut<'g>> {
        let hidden64 = hidden64.ok_or_else(|| {
            OtvmError::MissingInput("refinement needs the alpha hidden feature".into())
        })?;
        let fs = frame.shape();
        for (v, c, what) in [(trimap, 3, "trimap"), (alpha, 1, "alpha")] {
            let s = v.shape();
            if s.len() != 3 || s[0] != c || s[1..] != fs[1..] {
                return shape_err(format!("{what} {s:?} does not match frame {fs:?}"));
            }
        }
        let x = Var::cat_channels(&[frame, trimap, alpha, hidden64]);
        if x.shape()[0] != self.in_channels {
            return shape_err(format!(
                "refinement expects {} input channels, got {}",
                self.in_channels,
                x.shape()[0]
            ));
        }
        let mut h = self.stem.forward(cx, x);
        for b in &self.blocks {
            h = b.forward(cx, h);
        }
        let delta = self.correction.forward(cx, h);
        let other = self.heads.forward(cx, h);

        let alpha_out = alpha.add(delta.narrow(0, 1)).clamp(0.0, 1.0);
        // p_c·e^{Δ_c} rescaled to the input's per-pixel mass; the identity
        // holds bitwise when Δ = 0
        let q = trimap.mul(delta.narrow(1, 3).exp());
        let ratio = trimap.sum_channels().div(q.sum_channels());
        let trimap_out = q.mul(ratio.expand_channels(3));

        Ok(RefineOut {
            alpha: alpha_out,
            trimap: trimap_out,
            fg: other.narrow(0, 3).sigmoid(),
            bg: other.narrow(3, 3).sigmoid(),
            hidden: other.narrow(6, self.hidden),
        })
    }
}
