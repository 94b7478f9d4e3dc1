//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use common::{one_hot, rand_tensor, random_targets, rng, soft_trimap, tiny_clips};
use otvm::autograd::gradcheck::{check_grad, numeric_grad, rel_err};
use otvm::autograd::{Graph, Var};
use otvm::clipsim::procedural::source_triplet;
use otvm::clipsim::{fractional_mask, make_trimap, simulate_clip, write_clip, ClipSample};
use otvm::engine::{memory_policy, run_sequence};
use otvm::losses::{
    alpha_losses, fb_losses, laplacian_pyramid, reconstruct_pyramid, total_loss, trimap_ce,
    LossInputs, Targets,
};
use otvm::metrics::{alpha_metrics, trimap_quality, MetricScales, Region};
use otvm::nn::{Ctx, ModuleKind};
use otvm::trainer::{run_stage, training_step, Stage, StageIo, TrainConfig};
use otvm::trimap_prop::{memory_read, MemVar, MemoryBank, MemoryEntry};
use otvm::{AlphaMap, Config, ModelConfig, Otvm, Preset, Tensor, TrimapClass, TrimapSoft};
use rand::Rng;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn attention_oracle(keys: &[Tensor], values: &[Tensor], qk: &Tensor, qv: &Tensor) -> Tensor {
    let (ck, h, w) = qk.dims3();
    let cv = values[0].dims3().0;
    let mut mem = Vec::new();
    for (k, v) in keys.iter().zip(values) {
        let (_, mh, mw) = k.dims3();
        for y in 0..mh {
            for x in 0..mw {
                let kk: Vec<f64> = (0..ck).map(|c| k.get3(c, y, x)).collect();
                let vv: Vec<f64> = (0..cv).map(|c| v.get3(c, y, x)).collect();
                mem.push((kk, vv));
            }
        }
    }
    let mut out = Tensor::zeros(&[2 * cv, h, w]);
    for y in 0..h {
        for x in 0..w {
            let logits: Vec<f64> = mem
                .iter()
                .map(|(k, _)| (0..ck).map(|c| k[c] * qk.get3(c, y, x)).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..cv {
                out.set3(
                    c,
                    y,
                    x,
                    mem.iter().zip(&e).map(|((_, v), wt)| v[c] * wt / z).sum(),
                );
                out.set3(cv + c, y, x, qv.get3(c, y, x));
            }
        }
    }
    out
}

fn criterion_1() -> Verdict {
    let cases = 256;
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(10_000 + seed);
        let n_mem = 1 + (seed as usize % 3);
        let scale = r.random_range(0.1..3.0);
        let keys: Vec<Tensor> = (0..n_mem)
            .map(|_| rand_tensor(&mut r, &[3, 2, 2], -scale, scale))
            .collect();
        let values: Vec<Tensor> = (0..n_mem)
            .map(|_| rand_tensor(&mut r, &[3, 2, 2], -1.0, 1.0))
            .collect();
        let qk = rand_tensor(&mut r, &[3, 2, 2], -scale, scale);
        let qv = rand_tensor(&mut r, &[3, 2, 2], -1.0, 1.0);
        let g = Graph::inference();
        let entries: Vec<MemVar> = keys
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(i, (k, v))| MemVar {
                key: g.constant(k.clone()),
                value: g.constant(v.clone()),
                frame_index: i,
            })
            .collect();
        let got = memory_read(&entries, g.constant(qk.clone()), g.constant(qv.clone()))
            .unwrap()
            .tensor();
        worst = worst.max(got.max_abs_diff(&attention_oracle(&keys, &values, &qk, &qv)));
    }
    verdict(
        worst < 1e-5,
        format!("{cases} cases, max abs err {worst:.2e} (< 1e-5)"),
    )
}

// ---------------------------------------------------------------- 2

/// Finite differences at step `h` and `h/4` agree wherever the loss is
/// smooth on `[x-h, x+h]`; a kink of an |.| or ReLU within reach makes them
/// disagree. Draws are taken from consecutive seeds until one passes, which
/// screens without consulting the tape gradient.
fn smooth_draw(seed: u64, shape: &[usize], f: &impl Fn(&Tensor) -> f64) -> (Tensor, usize) {
    for k in 0..50 {
        let x = rand_tensor(&mut rng(seed + 1000 * k), shape, 0.05, 0.95);
        let coarse = numeric_grad(&x, 1e-4, f);
        let fine = numeric_grad(&x, 2.5e-5, f);
        if rel_err(&coarse, &fine) < 1e-6 {
            return (x, k as usize);
        }
    }
    panic!("no smooth draw found from seed {seed}");
}

fn checked(
    name: &str,
    seed: u64,
    shape: &[usize],
    f: impl for<'g> Fn(Var<'g>) -> Var<'g>,
    out: &mut Vec<(String, f64, usize)>,
) {
    let eval = |t: &Tensor| {
        let g = Graph::inference();
        f(g.constant(t.clone())).value().item()
    };
    let (x, rejected) = smooth_draw(seed, shape, &eval);
    out.push((name.to_string(), check_grad(&x, 1e-4, &f), rejected));
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let tg = random_targets(1, 2, 8, 8);
    let mut errs = Vec::new();

    let y = one_hot(2, 8, 8);
    checked(
        "trimap_ce",
        3,
        &[3, 8, 8],
        |v| trimap_ce(v.scale(4.0).softmax0(), &y).unwrap(),
        &mut errs,
    );
    for (k, name) in ["l1", "comp", "lap", "grad", "tc"].iter().enumerate() {
        checked(
            &format!("alpha_{name}"),
            4,
            &[2, 8, 8],
            |v| alpha_term(v, &tg, k),
            &mut errs,
        );
    }
    for (k, name) in ["l1", "comp", "lap", "excl", "tc"].iter().enumerate() {
        checked(
            &format!("fb_{name}"),
            5,
            &[12, 8, 8],
            |v| fb_term(v, &tg, k),
            &mut errs,
        );
    }
    // every term at once through the weighted total
    checked("total", 6, &[37, 8, 8], |v| total_of(v, &tg), &mut errs);

    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let list: Vec<String> = errs
        .iter()
        .map(|(n, e, r)| format!("{n} {e:.1e} ({r} rejected)"))
        .collect();
    verdict(
        worst < 1e-3 && secs < 300.0,
        format!(
            "max rel err {worst:.2e} (< 1e-3), {secs:.1}s (< 300s); {}",
            list.join(", ")
        ),
    )
}

fn alpha_term<'g>(v: Var<'g>, tg: &Targets, k: usize) -> Var<'g> {
    alpha_losses(&[v.narrow(0, 1), v.narrow(1, 1)], tg)
        .unwrap()
        .named()[k]
        .1
}

fn fb_term<'g>(v: Var<'g>, tg: &Targets, k: usize) -> Var<'g> {
    fb_losses(
        &[v.narrow(0, 3), v.narrow(3, 3)],
        &[v.narrow(6, 3), v.narrow(9, 3)],
        tg,
    )
    .unwrap()
    .named()[k]
        .1
}

fn total_of<'g>(v: Var<'g>, tg: &Targets) -> Var<'g> {
    let g = v.graph();
    let tri = |c: usize| v.narrow(c, 3).scale(4.0).softmax0();
    let inp = LossInputs {
        propagated: vec![tri(0)],
        refined_trimaps: vec![tri(3), tri(6)],
        alpha: vec![v.narrow(9, 1), v.narrow(10, 1)],
        fg: vec![v.narrow(11, 3), v.narrow(14, 3)],
        bg: vec![v.narrow(17, 3), v.narrow(20, 3)],
        refined_alpha: vec![v.narrow(23, 1), v.narrow(24, 1)],
        refined_fg: vec![v.narrow(25, 3), v.narrow(28, 3)],
        refined_bg: vec![v.narrow(31, 3), v.narrow(34, 3)],
    };
    total_loss(g, &inp, tg).unwrap().0
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let g = Graph::inference();
    let mut fails = Vec::new();

    // composite identities: the true alpha, and the true layers, reproduce the image
    let tg = random_targets(20, 2, 16, 16);
    let p: Vec<Var> = tg.alphas.iter().map(|a| g.constant(a.clone())).collect();
    let comp = alpha_losses(&p, &tg).unwrap().comp.value().item();
    let f: Vec<Var> = tg.fg.iter().map(|t| g.constant(t.clone())).collect();
    let b: Vec<Var> = tg.bg.iter().map(|t| g.constant(t.clone())).collect();
    let fb_comp = fb_losses(&f, &b, &tg).unwrap().comp.value().item();
    if comp != 0.0 || fb_comp != 0.0 {
        fails.push(format!("composite {comp:e}/{fb_comp:e}"));
    }
    // pure layers: alpha 1 gives F, alpha 0 gives B
    for (av, want) in [(1.0, "fg"), (0.0, "bg")] {
        let mut t = random_targets(21, 1, 8, 8);
        t.alphas[0] = Tensor::full(&[1, 8, 8], av);
        t.frames[0] = if av == 1.0 {
            t.fg[0].clone()
        } else {
            t.bg[0].clone()
        };
        let v = alpha_losses(&[g.constant(t.alphas[0].clone())], &t)
            .unwrap()
            .comp
            .value()
            .item();
        if v != 0.0 {
            fails.push(format!("alpha={av} composite is not {want}"));
        }
    }

    let y = one_hot(22, 8, 8);
    let ce_gt = trimap_ce(g.constant(y.clone()), &y).unwrap().value().item();
    let ce_u = trimap_ce(g.constant(Tensor::full(&[3, 8, 8], 1.0 / 3.0)), &y)
        .unwrap()
        .value()
        .item();
    if ce_gt != 0.0 {
        fails.push(format!("ce(gt,gt) = {ce_gt}"));
    }
    if (ce_u - 3f64.ln()).abs() > 1e-9 {
        fails.push(format!("uniform ce = {ce_u}"));
    }

    let x = rand_tensor(&mut rng(23), &[3, 64, 48], -1.0, 1.0);
    let (bands, low) = laplacian_pyramid(g.constant(x.clone()), 5);
    let rec = reconstruct_pyramid(&bands, low).tensor().max_abs_diff(&x);
    if rec >= 1e-5 {
        fails.push(format!("pyramid reconstruction {rec:e}"));
    }

    let cfg = ModelConfig::toy();
    let model = Otvm::new(&cfg);
    for seed in 0..3 {
        let fr = common::frame(24 + seed, 32, 32);
        let tri = soft_trimap(30 + seed, 32, 32);
        let al = rand_tensor(&mut rng(40 + seed), &[1, 32, 32], 0.0, 1.0);
        let hid = rand_tensor(&mut rng(50 + seed), &[cfg.alpha_hidden, 32, 32], -1.0, 1.0);
        let cx = Ctx::frozen(&g, &model.store);
        let out = model
            .refine
            .refine(
                &cx,
                g.constant(fr),
                g.constant(tri.clone()),
                g.constant(al.clone()),
                Some(g.constant(hid)),
            )
            .unwrap();
        if out.alpha.tensor() != al || out.trimap.tensor() != tri {
            fails.push(format!("refine identity, seed {seed}"));
        }
    }
    verdict(
        fails.is_empty(),
        if fails.is_empty() {
            format!("composite 0, ce(gt,gt) 0, uniform ce - ln3 = {:.1e}, pyramid err {rec:.1e}, refine bitwise", ce_u - 3f64.ln())
        } else {
            fails.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let cases = 200;
    let (h, w) = (12, 12);
    let mut bad = 0;
    for seed in 0..cases {
        let tg = random_targets(5000 + 37 * seed, 3, h, w);
        let mut r = rng(90_000 + seed);
        let base_f: Vec<Tensor> = (0..3)
            .map(|_| rand_tensor(&mut r, &[3, h, w], 0.0, 1.0))
            .collect();
        let base_b: Vec<Tensor> = (0..3)
            .map(|_| rand_tensor(&mut r, &[3, h, w], 0.0, 1.0))
            .collect();
        // perturb pF outside unknown or where alpha is 0, pB outside unknown
        let mut pert_f = base_f.clone();
        let mut pert_b = base_b.clone();
        for t in 0..3 {
            let unk = tg.unknown_mask(t);
            let a = tg.alphas[t].data();
            for i in 0..3 * h * w {
                let p = i % (h * w);
                if !unk[p] || a[p] == 0.0 {
                    pert_f[t].data_mut()[i] = r.random_range(0.0..1.0);
                }
                if !unk[p] {
                    pert_b[t].data_mut()[i] = r.random_range(0.0..1.0);
                }
            }
        }
        let eval = |f: &[Tensor], b: &[Tensor]| {
            let g = Graph::inference();
            let fv: Vec<Var> = f.iter().map(|t| g.constant(t.clone())).collect();
            let bv: Vec<Var> = b.iter().map(|t| g.constant(t.clone())).collect();
            fb_losses(&fv, &bv, &tg)
                .unwrap()
                .named()
                .map(|(_, v)| v.value().item().to_bits())
        };
        if eval(&base_f, &base_b) != eval(&pert_f, &pert_b) {
            bad += 1;
        }
    }
    verdict(
        bad == 0,
        format!("{cases} random perturbations, {bad} changed any fb term (bitwise)"),
    )
}

// ---------------------------------------------------------------- 5

fn policy_oracle(t: usize) -> (usize, Vec<usize>, usize) {
    let mut inter = Vec::new();
    for s in 1..=t {
        if s % 10 == 0 {
            inter.push(s);
            if inter.len() > 3 {
                inter.remove(0);
            }
        }
    }
    (0, inter, t)
}

fn criterion_5() -> Verdict {
    let mut bank = MemoryBank::<MemoryEntry>::new();
    let mut fails = Vec::new();
    let mut max_len = 0;
    for t in 0..100 {
        let e = MemoryEntry {
            key: Tensor::full(&[1, 1, 1], t as f64),
            value: Tensor::zeros(&[1, 1, 1]),
            frame_index: t,
        };
        memory_policy(&mut bank, e, t).unwrap();
        let state = (
            bank.reference().unwrap().frame_index,
            bank.intermediates()
                .map(|e| e.frame_index)
                .collect::<Vec<_>>(),
            bank.previous().unwrap().frame_index,
        );
        max_len = max_len.max(bank.len());
        if state != policy_oracle(t) || bank.len() > 5 {
            fails.push(t);
        }
        if t == 35 && state != (0, vec![10, 20, 30], 35) {
            fails.push(t);
        }
        if t == 45 && state != (0, vec![20, 30, 40], 45) {
            fails.push(t);
        }
    }
    verdict(
        fails.is_empty(),
        format!("100 frames, max size {max_len}, t=35 {{0,10,20,30,35}}, t=45 {{0,20,30,40,45}}, mismatches at {fails:?}"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Verdict {
    let data = tiny_clips();
    let mut model = Otvm::new(&ModelConfig::toy());
    let cfg = TrainConfig::for_preset(Preset::Toy);
    let mut lines = Vec::new();
    let mut ok = true;
    for stage in Stage::ALL {
        let before: Vec<Vec<Tensor>> = ModuleKind::ALL
            .iter()
            .map(|&k| model.module_snapshot(k))
            .collect();
        run_stage(&mut model, stage, &data, &cfg, 50, StageIo::default()).unwrap();
        let mut moved = Vec::new();
        for (k, old) in ModuleKind::ALL.iter().zip(&before) {
            let new = model.module_snapshot(*k);
            let same = old.iter().zip(&new).all(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            });
            let trainable = stage.trainable().contains(k);
            if !same {
                moved.push(format!("{k:?}"));
            }
            if !trainable && !same {
                ok = false;
            }
        }
        lines.push(format!("{stage}: changed [{}]", moved.join(" ")));
    }
    verdict(ok, format!("50 steps per stage; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- 7

struct OverfitData {
    source: otvm::clipsim::procedural::SourceTriplet,
    clips: Vec<ClipSample>,
}

fn overfit_data() -> OverfitData {
    let cfg = Config::for_preset(Preset::Toy);
    let source = source_triplet(64, 64, 11);
    let mut clips =
        vec![ClipSample::static_clip(&source.fg, &source.alpha, &source.bg, 3, 11).unwrap()];
    for s in [21u64, 22] {
        let src = source_triplet(96, 96, s);
        clips.push(simulate_clip(&src.fg, &src.alpha, &src.bg, 3, s, &cfg.clipsim).unwrap());
    }
    OverfitData { source, clips }
}

/// Stage-4 objective averaged over the training clips, without augmentation.
fn stage4_objective(model: &Otvm, data: &[Targets]) -> f64 {
    data.iter()
        .map(|c| {
            training_step(model, Stage::S4, std::slice::from_ref(c))
                .unwrap()
                .losses
                .total()
        })
        .sum::<f64>()
        / data.len() as f64
}

fn criterion_7() -> [Verdict; 3] {
    let d = overfit_data();
    let data: Vec<Targets> = d.clips.iter().map(Targets::from_clip).collect();
    let cfg = Config::for_preset(Preset::Toy);
    let mut tc = TrainConfig::for_preset(Preset::Toy);
    // shortened schedules are only for smoke runs; verdicts assume 1
    let scale: f64 = std::env::var("OTVM_OVERFIT_SCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    if scale != 1.0 {
        println!("  info: iteration counts scaled by {scale}");
    }
    let mut model = Otvm::new(&cfg.model);
    let init_obj = stage4_objective(&model, &data);
    let mut early: Option<Vec<u8>> = None;
    let mut stage4 = Vec::new();
    let start = Instant::now();
    for stage in Stage::ALL {
        let n = ((tc.iterations.get(stage) as f64 * scale) as usize).max(60);
        let t0 = Instant::now();
        let rep = if stage == Stage::S1a {
            // snapshot the model after the tenth step of the whole schedule
            tc.checkpoint_every = 10;
            let mut grab = |m: &Otvm, step: usize| {
                if step == 10 {
                    early = Some(m.to_bytes()?);
                }
                Ok(())
            };
            let rep = run_stage(
                &mut model,
                stage,
                &data,
                &tc,
                n,
                StageIo {
                    log: None,
                    checkpoint: Some(&mut grab),
                },
            )
            .unwrap();
            tc.checkpoint_every = 0;
            rep
        } else {
            run_stage(&mut model, stage, &data, &tc, n, StageIo::default()).unwrap()
        };
        let tot = rep.totals();
        println!(
            "  info: stage {stage} {n} steps in {:.0}s, step 10 {:.5}, final {:.5}, skipped {}",
            t0.elapsed().as_secs_f64(),
            tot[9],
            tot[n - 1],
            rep.skipped
        );
        if stage == Stage::S4 {
            stage4 = tot;
        }
    }
    println!(
        "  info: full schedule {:.0}s",
        start.elapsed().as_secs_f64()
    );

    // (a)
    let n = stage4.len();
    let (s10, last) = (stage4[9], stage4[n - 1]);
    let tail = stage4[n - 50..].iter().sum::<f64>() / 50.0;
    let ratio = last / s10;
    let early_model = Otvm::from_bytes(&early.expect("step-10 snapshot")).unwrap();
    let obj_early = stage4_objective(&early_model, &data);
    let obj_final = stage4_objective(&model, &data);
    println!(
        "  info: stage-4 objective (no augmentation) at init {init_obj:.5}, after global step 10 {obj_early:.5}, final {obj_final:.5} (ratio {:.4})",
        obj_final / obj_early
    );
    let a = verdict(
        ratio <= 0.01,
        format!(
            "stage-4 final {last:.5} / step-10 {s10:.5} = {:.2}% (<= 1%); last-50 mean {tail:.5}",
            100.0 * ratio
        ),
    );

    // (b)
    let s = &d.source;
    let st12 = ClipSample::static_clip(&s.fg, &s.alpha, &s.bg, 12, 11).unwrap();
    let outs = run_sequence(&model, &st12.frames, &st12.trimaps[0]).unwrap();
    let pred: Vec<AlphaMap> = outs.iter().map(|o| o.alpha.clone()).collect();
    let mse = alpha_metrics(
        &pred,
        &st12.alphas,
        None,
        Region::Full,
        MetricScales::unit(),
    )
    .unwrap()
    .raw
    .mse;
    let agree = outs
        .iter()
        .zip(&st12.trimaps)
        .map(|(o, t)| o.trimap.agreement(t))
        .fold(1.0, f64::min);
    let b = verdict(
        mse < 5e-3 && agree >= 0.99,
        format!(
            "12-frame static: MSE {mse:.2e} (< 5e-3), min agreement {:.2}% (>= 99%)",
            100.0 * agree
        ),
    );

    // (c)
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, c) in d.clips[1..].iter().enumerate() {
        let outs = run_sequence(&model, &c.frames, &c.trimaps[0]).unwrap();
        let tri: Vec<TrimapSoft> = outs.iter().map(|o| o.trimap.clone()).collect();
        let q = trimap_quality(&tri, &c.alphas).unwrap();
        ok &= q.precision_t >= 95.0 && q.recall_t >= 90.0;
        parts.push(format!(
            "clip {i}: P-T {:.2} R-T {:.2}",
            q.precision_t, q.recall_t
        ));
    }
    let c = verdict(ok, format!("{} (>= 95 / >= 90)", parts.join(", ")));
    [a, b, c]
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(70_000 + seed);
        let pred: Vec<AlphaMap> = (0..2)
            .map(|_| AlphaMap::new(rand_tensor(&mut r, &[1, 4, 4], 0.0, 1.0)).unwrap())
            .collect();
        let gt: Vec<AlphaMap> = (0..2)
            .map(|_| AlphaMap::new(rand_tensor(&mut r, &[1, 4, 4], 0.0, 1.0)).unwrap())
            .collect();
        let rep = alpha_metrics(&pred, &gt, None, Region::Full, MetricScales::unit())
            .unwrap()
            .raw;
        let (mut mse, mut mad, mut sad, mut dt) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..2 {
            for i in 0..16 {
                let d = pred[t].values()[i] - gt[t].values()[i];
                mse += d * d / 16.0 / 2.0;
                mad += d.abs() / 16.0 / 2.0;
                sad += d.abs() / 2.0;
            }
        }
        let mut s = 0.0;
        for i in 0..16 {
            let d = (pred[1].values()[i] - pred[0].values()[i])
                - (gt[1].values()[i] - gt[0].values()[i]);
            s += d * d;
        }
        dt += s.sqrt();
        for (a, b) in [
            (rep.mse, mse),
            (rep.mad, mad),
            (rep.sad, sad),
            (rep.dtssd, dt),
        ] {
            worst = worst.max((a - b).abs());
        }
    }

    // set-arithmetic oracle for Precision-T / Recall-T on 8×8 frames with a
    // 41×41 window clipped to a larger canvas
    let mut q_worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(80_000 + seed);
        let (h, w) = (48, 48);
        let alpha = AlphaMap::new(Tensor::from_fn(&[1, h, w], |i| {
            let (y, x) = (i / w, i % w);
            if y < 8 && x < 8 && r.random_range(0..4) == 0 {
                0.5
            } else if x > 24 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let labels: Vec<TrimapClass> = (0..h * w)
            .map(|_| TrimapClass::from_index(r.random_range(0..3)))
            .collect();
        let pred = TrimapSoft::from_labels(h, w, &labels).unwrap();
        let q = trimap_quality(std::slice::from_ref(&pred), std::slice::from_ref(&alpha)).unwrap();
        let frac: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| fractional_mask(&alpha)[i])
            .map(|i| (i / w, i % w))
            .collect();
        let unk: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| labels[i] == TrimapClass::Unknown)
            .map(|i| (i / w, i % w))
            .collect();
        let near = |&(y, x): &(usize, usize)| {
            frac.iter()
                .any(|&(fy, fx)| fy.abs_diff(y) <= 20 && fx.abs_diff(x) <= 20)
        };
        let p = if unk.is_empty() {
            100.0
        } else {
            100.0 * unk.iter().filter(|u| near(u)).count() as f64 / unk.len() as f64
        };
        let rc = if frac.is_empty() {
            100.0
        } else {
            100.0 * unk.iter().filter(|u| frac.contains(u)).count() as f64 / frac.len() as f64
        };
        q_worst = q_worst
            .max((q.precision_t - p).abs())
            .max((q.recall_t - rc).abs());
    }

    let mut perfect = true;
    for seed in [3u64, 11, 21] {
        let a = source_triplet(96, 96, seed).alpha;
        let tri = make_trimap(&a, 25).unwrap();
        let q = trimap_quality(&[tri], &[a]).unwrap();
        perfect &= q.precision_t == 100.0 && q.recall_t == 100.0;
    }
    verdict(
        worst < 1e-6 && q_worst < 1e-6 && perfect,
        format!("pixel metrics max err {worst:.1e}, trimap quality max err {q_worst:.1e}, make_trimap(gt,25) 100/100: {perfect}"),
    )
}

// ---------------------------------------------------------------- 9

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn criterion_9() -> Verdict {
    let cfg = Config::for_preset(Preset::Toy);
    let gen = |dir: &Path| {
        for seed in [7u64, 8] {
            let src = source_triplet(96, 96, seed);
            let clip = simulate_clip(&src.fg, &src.alpha, &src.bg, 3, seed, &cfg.clipsim).unwrap();
            write_clip(&dir.join(format!("clip_{seed}")), &clip).unwrap();
        }
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(d1.path());
    gen(d2.path());
    let same_data = ["clip_7", "clip_8"]
        .iter()
        .all(|c| tree(&d1.path().join(c)) == tree(&d2.path().join(c)));

    let data = tiny_clips();
    let run = || {
        let mut model = Otvm::new(&ModelConfig::toy());
        let tc = TrainConfig::for_preset(Preset::Toy);
        let mut bits = Vec::new();
        for stage in Stage::ALL {
            let rep = run_stage(&mut model, stage, &data, &tc, 4, StageIo::default()).unwrap();
            bits.extend(rep.totals().iter().map(|v| v.to_bits()));
        }
        (bits, model.to_bytes().unwrap())
    };
    let (a, b) = (run(), run());
    let same_train = a == b;
    verdict(same_data && same_train, format!("datagen trees identical: {same_data}; 5×4-step trajectories and checkpoints identical: {same_train}"))
}

fn main() {
    let mut results: Vec<(String, Verdict)> = Vec::new();
    let mut report = |name: &str, v: Verdict| {
        println!(
            "{} criterion {name}: {}",
            if v.ok { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((name.to_string(), v));
    };
    report("1 (memory read oracle)", criterion_1());
    report("2 (loss gradients)", criterion_2());
    report("3 (exactness identities)", criterion_3());
    report("4 (masking invariance)", criterion_4());
    report("5 (memory policy)", criterion_5());
    report("6 (freeze matrix)", criterion_6());
    if std::env::var_os("OTVM_SKIP_OVERFIT").is_some() {
        println!("SKIP criterion 7 (OTVM_SKIP_OVERFIT set)");
    } else {
        let [a, b, c] = criterion_7();
        report("7a (stage-4 loss reduction)", a);
        report("7b (static clip)", b);
        report("7c (moving clip trimap quality)", c);
    }
    report("8 (metrics oracle)", criterion_8());
    report("9 (determinism)", criterion_9());
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, v)| !v.ok)
        .map(|(n, _)| n.as_str())
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
