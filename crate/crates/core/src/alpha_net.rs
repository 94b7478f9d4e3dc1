//! Trimap-conditioned alpha prediction with foreground/background colour heads
//! and a hidden feature output.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{gaussian_taps, ConvGeom, Var};
use crate::config::ModelConfig;
use crate::error::{shape_err, Result};
use crate::nn::{Act, Conv, ConvBlock, Ctx, Init, ModuleKind, NormKind, ParamStore, ResBlock};
use crate::types::{check_network_size, TrimapClass, TrimapSoft};

const LEAK: f64 = 0.01;

/// Eight-channel trimap encoding: foreground and background probabilities,
/// then three Gaussian blurs of each.
pub fn encode_trimap_channels<'g>(trimap: Var<'g>, sigmas: &[f64; 3]) -> Var<'g> {
    let fg = trimap.narrow(TrimapClass::Foreground as usize, 1);
    let bg = trimap.narrow(TrimapClass::Background as usize, 1);
    let mut parts = vec![fg, bg];
    for src in [fg, bg] {
        for &s in sigmas {
            parts.push(src.filter_reflect(&gaussian_taps(s)));
        }
    }
    Var::cat_channels(&parts)
}

/// Network outputs at full resolution.
#[derive(Clone, Copy)]
pub struct AlphaOut<'g> {
    pub alpha: Var<'g>,
    pub fg: Var<'g>,
    pub bg: Var<'g>,
    pub hidden: Var<'g>,
}

pub struct AlphaNet {
    stem: ConvBlock,
    stages: Vec<Vec<ResBlock>>,
    ppm: Vec<(usize, ConvBlock)>,
    ppm_out: ConvBlock,
    up4: ConvBlock,
    up2: ConvBlock,
    up1: ConvBlock,
    head: Conv,
    sigmas: [f64; 3],
    hidden: usize,
}

impl AlphaNet {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let init = &mut Init {
            store,
            module: ModuleKind::AlphaNet,
            rng,
        };
        let w = cfg.alpha_widths;
        let norm = cfg.alpha_norm;
        let d = cfg.alpha_decoder_channels;
        let lrelu = Act::Leaky(LEAK);
        let stem = ConvBlock::new(
            init,
            "encoder.stem",
            11,
            w[0],
            3,
            ConvGeom {
                stride: 2,
                pad: 1,
                dilation: 1,
            },
            norm,
            Act::Relu,
        );
        // strides 4 and 8, then two dilated stages that keep stride 8
        let plan = [(2, 1), (2, 1), (1, 2), (1, 4)];
        let mut stages = Vec::new();
        for (s, &(stride, dilation)) in plan.iter().enumerate() {
            let mut blocks = Vec::new();
            for b in 0..cfg.alpha_blocks[s].max(1) {
                let (ci, st) = if b == 0 {
                    (w[s], stride)
                } else {
                    (w[s + 1], 1)
                };
                blocks.push(ResBlock::new(
                    init,
                    &format!("encoder.layer{}.{b}", s + 1),
                    ci,
                    w[s + 1],
                    st,
                    dilation,
                    norm,
                    Act::Relu,
                ));
            }
            stages.push(blocks);
        }
        let ppm = cfg
            .ppm_bins
            .iter()
            .map(|&bin| {
                (
                    bin,
                    ConvBlock::new(
                        init,
                        &format!("decoder.ppm{bin}"),
                        w[4],
                        d,
                        1,
                        ConvGeom::same(1),
                        norm,
                        lrelu,
                    ),
                )
            })
            .collect::<Vec<_>>();
        let ppm_in = w[4] + d * ppm.len();
        let ppm_out = ConvBlock::new(
            init,
            "decoder.ppm_out",
            ppm_in,
            d,
            3,
            ConvGeom::same(3),
            norm,
            lrelu,
        );
        let up4 = ConvBlock::new(
            init,
            "decoder.up4",
            d + w[1],
            d,
            3,
            ConvGeom::same(3),
            norm,
            lrelu,
        );
        let up2 = ConvBlock::new(
            init,
            "decoder.up2",
            d + w[0],
            d,
            3,
            ConvGeom::same(3),
            norm,
            lrelu,
        );
        let up1 = ConvBlock::new(
            init,
            "decoder.up1",
            d + 11,
            d,
            3,
            ConvGeom::same(3),
            NormKind::Identity,
            lrelu,
        );
        let head = Conv::same(
            init,
            "decoder.head",
            d,
            1 + 3 + 3 + cfg.alpha_hidden,
            1,
            false,
        );
        Self {
            stem,
            stages,
            ppm,
            ppm_out,
            up4,
            up2,
            up1,
            head,
            sigmas: cfg.blur_sigmas,
            hidden: cfg.alpha_hidden,
        }
    }

    /// Final 1×1 head producing `[alpha, fg(3), bg(3), hidden]`.
    pub fn head(&self) -> &Conv {
        &self.head
    }

    pub fn predict_alpha<'g>(
        &self,
        cx: &Ctx<'g>,
        frame: Var<'g>,
        trimap: Var<'g>,
    ) -> Result<AlphaOut<'g>> {
        TrimapSoft::validate(&trimap.value())?;
        let fs = frame.shape();
        if fs.len() != 3 || fs[0] != 3 || fs[1..] != trimap.shape()[1..] {
            return shape_err(format!(
                "frame {fs:?} does not match trimap {:?}",
                trimap.shape()
            ));
        }
        let (h, w) = (fs[1], fs[2]);
        check_network_size(h, w)?;
        let enc = encode_trimap_channels(trimap, &self.sigmas);
        let input = Var::cat_channels(&[frame, enc]);

        let s2 = self.stem.forward(cx, input);
        let mut x = s2;
        let mut feats = Vec::with_capacity(4);
        for stage in &self.stages {
            for b in stage {
                x = b.forward(cx, x);
            }
            feats.push(x);
        }
        let (s4, top) = (feats[0], feats[3]);
        let (h8, w8) = (top.shape()[1], top.shape()[2]);
        let mut pyramid = vec![top];
        for (bin, block) in &self.ppm {
            let pooled = top.adaptive_avg_pool(*bin, *bin);
            pyramid.push(block.forward(cx, pooled).resize_bilinear(h8, w8));
        }
        let x = self.ppm_out.forward(cx, Var::cat_channels(&pyramid));
        let x = x.resize_bilinear(h / 4, w / 4);
        let x = self.up4.forward(cx, Var::cat_channels(&[x, s4]));
        let x = x.resize_bilinear(h / 2, w / 2);
        let x = self.up2.forward(cx, Var::cat_channels(&[x, s2]));
        let x = x.resize_bilinear(h, w);
        let x = self.up1.forward(cx, Var::cat_channels(&[x, input]));
        let out = self.head.forward(cx, x);
        Ok(AlphaOut {
            alpha: out.narrow(0, 1).clamp(0.0, 1.0),
            fg: out.narrow(1, 3).sigmoid(),
            bg: out.narrow(4, 3).sigmoid(),
            hidden: out.narrow(7, self.hidden),
        })
    }
}
