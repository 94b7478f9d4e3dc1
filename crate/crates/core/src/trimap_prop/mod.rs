//! Trimap propagation: memory and query encoders, key/value embeddings,
//! space-time memory read and the trimap decoder.

pub mod memory;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ConvGeom, Var};
use crate::config::ModelConfig;
use crate::error::{shape_err, OtvmError, Result};
use crate::nn::{Act, Conv, ConvBlock, Ctx, Init, ModuleKind, NormKind, ParamStore, ResBlock};
use crate::types::check_network_size;

pub use memory::{attention_weights, memory_read, FrameIndexed, MemVar, MemoryBank, MemoryEntry};

/// Residual encoder with stride-2 stem and three stride-2 stages.
pub struct Backbone {
    stem: ConvBlock,
    stages: Vec<Vec<ResBlock>>,
}

/// Encoder features at strides 4, 8 and 16.
pub struct Features<'g> {
    pub s4: Var<'g>,
    pub s8: Var<'g>,
    pub s16: Var<'g>,
}

impl Backbone {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        widths: [usize; 4],
        blocks: [usize; 3],
        norm: NormKind,
    ) -> Self {
        let stem = ConvBlock::new(
            init,
            &format!("{name}.stem"),
            cin,
            widths[0],
            3,
            ConvGeom {
                stride: 2,
                pad: 1,
                dilation: 1,
            },
            norm,
            Act::Relu,
        );
        let mut stages = Vec::new();
        for s in 0..3 {
            let mut blocks_s = Vec::new();
            for b in 0..blocks[s].max(1) {
                let (ci, stride) = if b == 0 {
                    (widths[s], 2)
                } else {
                    (widths[s + 1], 1)
                };
                blocks_s.push(ResBlock::new(
                    init,
                    &format!("{name}.layer{}.{b}", s + 1),
                    ci,
                    widths[s + 1],
                    stride,
                    1,
                    norm,
                    Act::Relu,
                ));
            }
            stages.push(blocks_s);
        }
        Self { stem, stages }
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Features<'g> {
        let mut h = self.stem.forward(cx, x);
        let mut outs = Vec::with_capacity(3);
        for stage in &self.stages {
            for b in stage {
                h = b.forward(cx, h);
            }
            outs.push(h);
        }
        Features {
            s4: outs[0],
            s8: outs[1],
            s16: outs[2],
        }
    }
}

/// Query-frame encoding: stride-16 key and value plus decoder skips.
pub struct QueryFeatures<'g> {
    pub key: Var<'g>,
    pub value: Var<'g>,
    /// Skip features at strides 4 and 8, in that order.
    pub skips: [Var<'g>; 2],
}

/// Optional memory-encoder inputs beyond frame and trimap.
#[derive(Clone, Copy)]
pub enum MemoryExtras<'g> {
    /// Alpha and hidden inputs switched off (fed as zeros).
    Disabled,
    Enabled {
        alpha: Var<'g>,
        hidden: Var<'g>,
    },
}

pub struct TrimapProp {
    memory_encoder: Backbone,
    query_encoder: Backbone,
    memory_key: Conv,
    memory_value: Conv,
    query_key: Conv,
    query_value: Conv,
    dec_in: ConvBlock,
    dec_res: ResBlock,
    skip8: Conv,
    up8: ResBlock,
    skip4: Conv,
    up4: ResBlock,
    head: Conv,
    hidden: usize,
}

impl TrimapProp {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let init = &mut Init {
            store,
            module: ModuleKind::TrimapProp,
            rng,
        };
        let w = cfg.prop_widths;
        let norm = cfg.prop_norm;
        let ws = norm == NormKind::GroupWs;
        let d = cfg.prop_decoder_channels;
        let memory_encoder = Backbone::new(
            init,
            "memory_encoder",
            cfg.memory_in_channels(),
            w,
            cfg.prop_blocks,
            norm,
        );
        // alpha and hidden inputs start switched off so that enabling them
        // leaves a trained encoder's output unchanged
        let stem_w = init.store.get_mut(memory_encoder.stem.conv().weight_id());
        let (cout, cin, k) = (stem_w.shape()[0], stem_w.shape()[1], stem_w.shape()[2]);
        for o in 0..cout {
            for c in 6..cin {
                let base = (o * cin + c) * k * k;
                stem_w.data_mut()[base..base + k * k].fill(0.0);
            }
        }
        let query_encoder = Backbone::new(init, "query_encoder", 3, w, cfg.prop_blocks, norm);
        let memory_key = Conv::same(init, "memory_key", w[3], cfg.key_channels, 3, false);
        let memory_value = Conv::same(init, "memory_value", w[3], cfg.value_channels, 3, false);
        let query_key = Conv::same(init, "query_key", w[3], cfg.key_channels, 3, false);
        let query_value = Conv::same(init, "query_value", w[3], cfg.value_channels, 3, false);
        let dec_in = ConvBlock::new(
            init,
            "decoder.in",
            2 * cfg.value_channels,
            d,
            3,
            ConvGeom::same(3),
            norm,
            Act::Relu,
        );
        let dec_res = ResBlock::new(init, "decoder.res", d, d, 1, 1, norm, Act::Relu);
        let skip8 = Conv::same(init, "decoder.skip8", w[2], d, 3, ws);
        let up8 = ResBlock::new(init, "decoder.up8", d, d, 1, 1, norm, Act::Relu);
        let skip4 = Conv::same(init, "decoder.skip4", w[1], d, 3, ws);
        let up4 = ResBlock::new(init, "decoder.up4", d, d, 1, 1, norm, Act::Relu);
        let head = Conv::same(init, "decoder.head", d, 3, 3, false);
        Self {
            memory_encoder,
            query_encoder,
            memory_key,
            memory_value,
            query_key,
            query_value,
            dec_in,
            dec_res,
            skip8,
            up8,
            skip4,
            up4,
            head,
            hidden: cfg.refine_hidden,
        }
    }

    /// First memory-encoder convolution, whose input channels are
    /// `[frame(3), trimap(3), alpha(1), hidden]`.
    pub fn memory_stem_weight(&self) -> crate::autograd::ParamId {
        self.memory_encoder.stem.conv().weight_id()
    }

    /// Encode a frame with its trimap (and optionally alpha and hidden
    /// features) into a stride-16 key/value pair.
    pub fn encode_memory<'g>(
        &self,
        cx: &Ctx<'g>,
        frame: Var<'g>,
        trimap: Var<'g>,
        extras: MemoryExtras<'g>,
        frame_index: usize,
    ) -> Result<MemVar<'g>> {
        let (h, w) = spatial(&frame, 3, "frame")?;
        check_network_size(h, w)?;
        if spatial(&trimap, 3, "trimap")? != (h, w) {
            return shape_err("trimap and frame sizes differ");
        }
        let (alpha, hidden) = match extras {
            MemoryExtras::Disabled => (
                cx.constant(crate::Tensor::zeros(&[1, h, w])),
                cx.constant(crate::Tensor::zeros(&[self.hidden, h, w])),
            ),
            MemoryExtras::Enabled { alpha, hidden } => {
                if spatial(&alpha, 1, "alpha")? != (h, w) {
                    return shape_err("alpha and frame sizes differ");
                }
                let hs = hidden.shape();
                if hs.len() != 3 || hs[0] != self.hidden {
                    return shape_err(format!(
                        "hidden must have {} channels, got {hs:?}",
                        self.hidden
                    ));
                }
                let hidden = if (hs[1], hs[2]) == (h, w) {
                    hidden
                } else {
                    hidden.resize_bilinear(h, w)
                };
                (alpha, hidden)
            }
        };
        let x = Var::cat_channels(&[frame, trimap, alpha, hidden]);
        let f = self.memory_encoder.forward(cx, x);
        Ok(MemVar {
            key: self.memory_key.forward(cx, f.s16),
            value: self.memory_value.forward(cx, f.s16),
            frame_index,
        })
    }

    pub fn encode_query<'g>(&self, cx: &Ctx<'g>, frame: Var<'g>) -> Result<QueryFeatures<'g>> {
        let (h, w) = spatial(&frame, 3, "frame")?;
        check_network_size(h, w)?;
        let f = self.query_encoder.forward(cx, frame);
        Ok(QueryFeatures {
            key: self.query_key.forward(cx, f.s16),
            value: self.query_value.forward(cx, f.s16),
            skips: [f.s4, f.s8],
        })
    }

    /// Decode the memory read-out into full-resolution class probabilities.
    /// `skips` holds the stride-4 and stride-8 query features.
    pub fn decode_trimap<'g>(
        &self,
        cx: &Ctx<'g>,
        read_out: Var<'g>,
        skips: &[Var<'g>],
    ) -> Result<Var<'g>> {
        if skips.len() < 2 {
            return Err(OtvmError::MissingInput(format!(
                "decoder needs stride-4 and stride-8 skips, got {}",
                skips.len()
            )));
        }
        let (s4, s8) = (skips[0], skips[1]);
        let (h16, w16) = (read_out.shape()[1], read_out.shape()[2]);
        let (h8, w8) = (s8.shape()[1], s8.shape()[2]);
        let (h4, w4) = (s4.shape()[1], s4.shape()[2]);
        if (h8, w8) != (2 * h16, 2 * w16) || (h4, w4) != (4 * h16, 4 * w16) {
            return shape_err(format!(
                "skip sizes {h4}x{w4}, {h8}x{w8} do not match stride-16 map {h16}x{w16}"
            ));
        }
        let x = self.dec_res.forward(cx, self.dec_in.forward(cx, read_out));
        let x = self.up8.forward(
            cx,
            self.skip8.forward(cx, s8).add(x.resize_bilinear(h8, w8)),
        );
        let x = self.up4.forward(
            cx,
            self.skip4.forward(cx, s4).add(x.resize_bilinear(h4, w4)),
        );
        let logits = self.head.forward(cx, x).resize_bilinear(4 * h4, 4 * w4);
        Ok(logits.softmax0())
    }

    /// Query encoding, memory read and decoding.
    pub fn propagate<'g>(
        &self,
        cx: &Ctx<'g>,
        entries: &[MemVar<'g>],
        frame: Var<'g>,
    ) -> Result<Var<'g>> {
        let q = self.encode_query(cx, frame)?;
        let read = memory_read(entries, q.key, q.value)?;
        self.decode_trimap(cx, read, &q.skips)
    }
}

fn spatial(v: &Var<'_>, c: usize, what: &str) -> Result<(usize, usize)> {
    let s = v.shape();
    if s.len() != 3 || s[0] != c {
        return shape_err(format!("{what} must be [{c},H,W], got {s:?}"));
    }
    Ok((s[1], s[2]))
}
