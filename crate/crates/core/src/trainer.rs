//! Stage-wise training: freeze matrix, RAdam, learning-rate schedule and the
//! per-step forward pass.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, Var};
use crate::config::Preset;
use crate::error::{OtvmError, Result};
use crate::losses::{total_loss, LossBundle, LossInputs, Targets};
use crate::model::Otvm;
use crate::nn::{Ctx, ModuleKind, ParamStore};
use crate::tensor::Tensor;
use crate::trimap_prop::memory::{MemVar, MemoryBank};
use crate::trimap_prop::MemoryExtras;

/// Training stages in schedule order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1a")]
    S1a,
    #[serde(rename = "1b")]
    S1b,
    #[serde(rename = "2")]
    S2,
    #[serde(rename = "3")]
    S3,
    #[serde(rename = "4")]
    S4,
}

/// Iterations per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageIterations {
    pub s1a: usize,
    pub s1b: usize,
    pub s2: usize,
    pub s3: usize,
    pub s4: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Fraction of a stage after which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_fraction: f64,
    pub lr_drop_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub iterations: StageIterations,
    pub seed: u64,
    pub log_every: usize,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn for_preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self {
                lr: 1e-5,
                lr_drop_fraction: 0.9,
                lr_drop_factor: 0.1,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                batch: 4,
                clip_norm: 5.0,
                iterations: StageIterations {
                    s1a: 100_000,
                    s1b: 400_000,
                    s2: 50_000,
                    s3: 50_000,
                    s4: 80_000,
                },
                seed: 0,
                log_every: 1,
                checkpoint_every: 10_000,
            },
            Preset::Toy => Self {
                lr: 1e-3,
                batch: 1,
                iterations: StageIterations {
                    s1a: 2_000,
                    s1b: 4_000,
                    s2: 1_000,
                    s3: 1_000,
                    s4: 2_000,
                },
                checkpoint_every: 0,
                ..Self::for_preset(Preset::Paper)
            },
        }
    }
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::S1a, Stage::S1b, Stage::S2, Stage::S3, Stage::S4];

    pub fn name(self) -> &'static str {
        match self {
            Stage::S1a => "1a",
            Stage::S1b => "1b",
            Stage::S2 => "2",
            Stage::S3 => "3",
            Stage::S4 => "4",
        }
    }

    /// Modules whose parameters this stage updates.
    pub fn trainable(self) -> &'static [ModuleKind] {
        match self {
            Stage::S1a => &[ModuleKind::AlphaNet],
            Stage::S1b | Stage::S3 => &[ModuleKind::TrimapProp],
            Stage::S2 => &[ModuleKind::AlphaNet, ModuleKind::Refine],
            Stage::S4 => &[
                ModuleKind::TrimapProp,
                ModuleKind::AlphaNet,
                ModuleKind::Refine,
            ],
        }
    }

    /// Whether the memory encoder receives alpha and hidden features.
    pub fn memory_extras(self) -> bool {
        matches!(self, Stage::S3 | Stage::S4)
    }

    /// Stages expected to have run before this one.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::S1a | Stage::S1b => &[],
            Stage::S2 => &[Stage::S1a, Stage::S1b],
            Stage::S3 => &[Stage::S2],
            Stage::S4 => &[Stage::S3],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = OtvmError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                OtvmError::InvalidArgument(format!(
                    "unknown stage `{s}` (expected 1a, 1b, 2, 3 or 4)"
                ))
            })
    }
}

impl StageIterations {
    pub fn get(&self, s: Stage) -> usize {
        match s {
            Stage::S1a => self.s1a,
            Stage::S1b => self.s1b,
            Stage::S2 => self.s2,
            Stage::S3 => self.s3,
            Stage::S4 => self.s4,
        }
    }
}

/// Step-decay schedule: `lr` until `drop_fraction` of the stage (inclusive),
/// `lr · drop_factor` afterwards.
pub fn lr_schedule(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if total > 0 && step as f64 >= cfg.lr_drop_fraction * total as f64 {
        cfg.lr * cfg.lr_drop_factor
    } else {
        cfg.lr
    }
}

/// Rectified Adam.
#[derive(Clone, Debug)]
pub struct RAdam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl RAdam {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        let (b1, b2) = (self.beta1, self.beta2);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b2t = b2.powf(t);
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2t;
        let rect = (rho_t > 5.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt()
        });
        for (id, g) in grads {
            let m = self.m[*id].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[*id].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(*id);
            for (((pi, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / bc1;
                *pi -= match rect {
                    Some(r) => lr * r * mhat / ((*vi / bc2).sqrt() + self.eps),
                    None => lr * mhat,
                };
            }
        }
    }
}

fn constants<'g>(g: &'g Graph, ts: &[Tensor]) -> Vec<Var<'g>> {
    ts.iter().map(|t| g.constant(t.clone())).collect()
}

/// Stage-specific forward pass over one clip. Frame 0 uses the ground-truth
/// trimap; later frames use propagated trimaps.
pub fn forward_clip<'g>(
    cx: &Ctx<'g>,
    model: &Otvm,
    stage: Stage,
    clip: &Targets,
) -> Result<LossInputs<'g>> {
    if clip.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    let g = cx.graph;
    let frames = constants(g, &clip.frames);
    let gt_tri = constants(g, &clip.trimaps);
    let mut out = LossInputs::default();
    match stage {
        Stage::S1a => {
            for (f, tri) in frames.iter().zip(&gt_tri) {
                let a = model.alpha.predict_alpha(cx, *f, *tri)?;
                out.alpha.push(a.alpha);
                out.fg.push(a.fg);
                out.bg.push(a.bg);
            }
        }
        Stage::S1b => {
            let mut bank = MemoryBank::<MemVar>::new();
            bank.update(
                model
                    .prop
                    .encode_memory(cx, frames[0], gt_tri[0], MemoryExtras::Disabled, 0)?,
                0,
            )?;
            for t in 1..frames.len() {
                let entries: Vec<MemVar> = bank.entries().into_iter().copied().collect();
                let p = model.prop.propagate(cx, &entries, frames[t])?;
                out.propagated.push(p);
                bank.update(
                    model
                        .prop
                        .encode_memory(cx, frames[t], p, MemoryExtras::Disabled, t)?,
                    t,
                )?;
            }
        }
        Stage::S2 | Stage::S3 | Stage::S4 => {
            let mut bank = MemoryBank::<MemVar>::new();
            for t in 0..frames.len() {
                let trimap = if t == 0 {
                    gt_tri[0]
                } else {
                    let entries: Vec<MemVar> = bank.entries().into_iter().copied().collect();
                    let p = model.prop.propagate(cx, &entries, frames[t])?;
                    out.propagated.push(p);
                    p
                };
                let a = model.alpha.predict_alpha(cx, frames[t], trimap)?;
                let r = model
                    .refine
                    .refine(cx, frames[t], trimap, a.alpha, Some(a.hidden))?;
                out.alpha.push(a.alpha);
                out.fg.push(a.fg);
                out.bg.push(a.bg);
                out.refined_alpha.push(r.alpha);
                out.refined_fg.push(r.fg);
                out.refined_bg.push(r.bg);
                out.refined_trimaps.push(r.trimap);
                let extras = if stage.memory_extras() {
                    MemoryExtras::Enabled {
                        alpha: r.alpha,
                        hidden: r.hidden,
                    }
                } else {
                    MemoryExtras::Disabled
                };
                bank.update(
                    model
                        .prop
                        .encode_memory(cx, frames[t], r.trimap, extras, t)?,
                    t,
                )?;
            }
        }
    }
    Ok(out)
}

/// Losses and trainable-parameter gradients of one step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub losses: LossBundle,
    pub grads: Vec<(ParamId, Tensor)>,
    pub grad_norm: f64,
}

impl StepOutput {
    pub fn is_finite(&self) -> bool {
        self.losses.total().is_finite() && self.grad_norm.is_finite()
    }
}

/// Forward and backward over a batch; losses are averaged over clips.
pub fn training_step(model: &Otvm, stage: Stage, batch: &[Targets]) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    let g = Graph::new();
    let cx = Ctx::new(&g, &model.store, stage.trainable().iter().copied());
    let inv = 1.0 / batch.len() as f64;
    let mut total: Option<Var> = None;
    let mut bundle = std::collections::BTreeMap::<String, f64>::new();
    for clip in batch {
        let inputs = forward_clip(&cx, model, stage, clip)?;
        let (loss, b) = total_loss(&g, &inputs, clip)?;
        for (k, v) in b.0 {
            *bundle.entry(k).or_default() += v * inv;
        }
        let loss = loss.scale(inv);
        total = Some(total.map_or(loss, |t| t.add(loss)));
    }
    let total = total.expect("non-empty batch");
    let grads: Vec<(ParamId, Tensor)> = g
        .backward(total)
        .params()
        .into_iter()
        .map(|(id, t)| (id, t.clone()))
        .collect();
    let grad_norm = grads.iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt();
    Ok(StepOutput {
        losses: LossBundle(bundle),
        grads,
        grad_norm,
    })
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], norm: f64, max_norm: f64) {
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in grads {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// One record of the JSON-lines training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    pub lr: f64,
    pub grad_norm: f64,
    pub skipped: bool,
    #[serde(flatten)]
    pub losses: LossBundle,
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: Stage,
    pub records: Vec<StepRecord>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

impl StageReport {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.losses.total()).collect()
    }
}

/// Hooks invoked during [`run_stage`].
#[derive(Default)]
pub struct StageIo<'a> {
    pub log: Option<&'a mut dyn Write>,
    /// Called with the step count every `checkpoint_every` steps.
    pub checkpoint: Option<&'a mut dyn FnMut(&Otvm, usize) -> Result<()>>,
}

/// Train `stage` for `iterations` steps on clips drawn from `data`.
pub fn run_stage(
    model: &mut Otvm,
    stage: Stage,
    data: &[Targets],
    cfg: &TrainConfig,
    iterations: usize,
    io: StageIo<'_>,
) -> Result<StageReport> {
    if data.is_empty() {
        return Err(OtvmError::EmptySequence);
    }
    let StageIo {
        mut log,
        mut checkpoint,
    } = io;
    let mut warnings = Vec::new();
    for pre in stage.prerequisites() {
        if !model.stages_done.contains(pre) {
            let w = format!("stage {stage} runs without stage {pre} weights");
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((stage as u64 + 1) << 32));
    let mut opt = RAdam::new(cfg, model.store.len());
    let mut records = Vec::with_capacity(iterations);
    let mut skipped = 0;
    for step in 0..iterations {
        let batch: Vec<Targets> = (0..cfg.batch.max(1))
            .map(|_| data[rng.random_range(0..data.len())].clone())
            .collect();
        let lr = lr_schedule(cfg, step, iterations);
        let mut out = training_step(model, stage, &batch)?;
        let skip = !out.is_finite();
        if skip {
            skipped += 1;
            log::warn!("stage {stage} step {step}: non-finite loss or gradient, update skipped");
        } else {
            clip_grad_norm(&mut out.grads, out.grad_norm, cfg.clip_norm);
            opt.step(&mut model.store, &out.grads, lr);
        }
        let rec = StepRecord {
            step,
            stage,
            lr,
            grad_norm: out.grad_norm,
            skipped: skip,
            losses: out.losses,
        };
        if let Some(w) = log.as_deref_mut() {
            if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == iterations) {
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        records.push(rec);
        if let Some(cb) = checkpoint.as_deref_mut() {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                cb(model, step + 1)?;
            }
        }
    }
    model.stages_done.push(stage);
    Ok(StageReport {
        stage,
        records,
        skipped,
        warnings,
    })
}
