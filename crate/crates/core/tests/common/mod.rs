#![allow(dead_code)]

use otvm::autograd::gradcheck::{numeric_grad, rel_err};
use otvm::autograd::{Graph, ParamId, Var};
use otvm::nn::{Ctx, ModuleKind};
use otvm::{Otvm, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random frame in `[0,1]`.
pub fn frame(seed: u64, h: usize, w: usize) -> Tensor {
    rand_tensor(&mut rng(seed), &[3, h, w], 0.0, 1.0)
}

/// Random strictly positive trimap on the simplex.
pub fn soft_trimap(seed: u64, h: usize, w: usize) -> Tensor {
    let mut t = rand_tensor(&mut rng(seed), &[3, h, w], 0.05, 1.0);
    let n = h * w;
    for i in 0..n {
        let s: f64 = (0..3).map(|c| t.data()[c * n + i]).sum();
        for c in 0..3 {
            t.data_mut()[c * n + i] /= s;
        }
    }
    t
}

/// Relative error between the tape gradient of `loss` w.r.t. parameter `id`
/// and central differences with step `h`.
pub fn param_grad_err(
    model: &Otvm,
    module: ModuleKind,
    id: ParamId,
    h: f64,
    loss: impl for<'g> Fn(&Ctx<'g>) -> Var<'g>,
) -> f64 {
    let g = Graph::new();
    let cx = Ctx::new(&g, &model.store, [module]);
    let grads = g.backward(loss(&cx));
    let analytic = grads
        .param(id)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape()));
    let numeric = numeric_grad(model.store.get(id), h, |xp| {
        let mut store = model.store.clone();
        *store.get_mut(id) = xp.clone();
        let g = Graph::inference();
        let cx = Ctx::frozen(&g, &store);
        loss(&cx).value().item()
    });
    assert!(
        numeric.max_abs() > 0.0,
        "parameter does not affect the loss"
    );
    rel_err(&analytic, &numeric)
}

/// One static and one moving 3-frame clip at 32×32.
pub fn tiny_clips() -> Vec<otvm::losses::Targets> {
    use otvm::clipsim::{procedural::source_triplet, simulate_clip, ClipSample, ClipSimConfig};
    let a = source_triplet(32, 32, 5);
    let still = ClipSample::static_clip(&a.fg, &a.alpha, &a.bg, 3, 7).unwrap();
    let mut cfg = ClipSimConfig::for_preset(otvm::Preset::Toy);
    cfg.out_size = 32;
    cfg.crop_sizes = vec![32, 40];
    let b = source_triplet(48, 48, 6);
    let moving = simulate_clip(&b.fg, &b.alpha, &b.bg, 3, 6, &cfg).unwrap();
    [still, moving]
        .iter()
        .map(otvm::losses::Targets::from_clip)
        .collect()
}

pub fn one_hot(seed: u64, h: usize, w: usize) -> Tensor {
    let mut r = rng(seed);
    let labels: Vec<otvm::TrimapClass> = (0..h * w)
        .map(|_| otvm::TrimapClass::from_index(r.random_range(0..3)))
        .collect();
    otvm::TrimapSoft::from_labels(h, w, &labels)
        .unwrap()
        .into_tensor()
}

/// Random ground truth with consistent composites, exact zeros in alpha and a
/// random one-hot trimap per frame.
pub fn random_targets(seed: u64, t: usize, h: usize, w: usize) -> otvm::losses::Targets {
    let mut tg = otvm::losses::Targets {
        frames: vec![],
        alphas: vec![],
        fg: vec![],
        bg: vec![],
        trimaps: vec![],
    };
    let hw = h * w;
    for k in 0..t {
        let s = seed + 10 * k as u64;
        let a =
            rand_tensor(&mut rng(s), &[1, h, w], 0.0, 1.0).map(|v| if v < 0.2 { 0.0 } else { v });
        let f = rand_tensor(&mut rng(s + 1), &[3, h, w], 0.0, 1.0);
        let b = rand_tensor(&mut rng(s + 2), &[3, h, w], 0.0, 1.0);
        tg.frames.push(Tensor::from_fn(&[3, h, w], |i| {
            let al = a.data()[i % hw];
            al * (f.data()[i] - b.data()[i]) + b.data()[i]
        }));
        tg.alphas.push(a);
        tg.fg.push(f);
        tg.bg.push(b);
        tg.trimaps.push(one_hot(s + 3, h, w));
    }
    tg
}
