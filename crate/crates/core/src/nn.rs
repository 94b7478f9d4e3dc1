//! Named parameters and the small set of layers the networks are built from.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Graph, ParamId, Var};
use crate::tensor::Tensor;

/// The three trainable networks of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    TrimapProp,
    AlphaNet,
    Refine,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 3] = [
        ModuleKind::TrimapProp,
        ModuleKind::AlphaNet,
        ModuleKind::Refine,
    ];

    /// Weight-name prefix inside a checkpoint.
    pub fn prefix(self) -> &'static str {
        match self {
            ModuleKind::TrimapProp => "prop",
            ModuleKind::AlphaNet => "alpha",
            ModuleKind::Refine => "refine",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Group normalisation on weight-standardised convolutions.
    GroupWs,
    /// Plain group normalisation.
    Group,
    /// No normalisation; stands in for frozen batch norm.
    Identity,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub module: ModuleKind,
    pub value: Tensor,
}

/// Flat, ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, module: ModuleKind, name: &str, value: Tensor) -> ParamId {
        let name = format!("{}.{name}", module.prefix());
        assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            module,
            value,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn module_of(&self, id: ParamId) -> ModuleKind {
        self.entries[id].module
    }

    /// Total scalar count, optionally restricted to one module.
    pub fn numel(&self, module: Option<ModuleKind>) -> usize {
        self.entries
            .iter()
            .filter(|e| module.is_none_or(|m| e.module == m))
            .map(|e| e.value.numel())
            .sum()
    }
}

/// A graph bound to a parameter store and a set of trainable modules.
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    pub store: &'g ParamStore,
    trainable: HashSet<ModuleKind>,
}

impl<'g> Ctx<'g> {
    pub fn new(
        graph: &'g Graph,
        store: &'g ParamStore,
        trainable: impl IntoIterator<Item = ModuleKind>,
    ) -> Self {
        Self {
            graph,
            store,
            trainable: trainable.into_iter().collect(),
        }
    }

    /// Inference context: nothing is trainable.
    pub fn frozen(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self::new(graph, store, [])
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        let trainable = self.trainable.contains(&self.store.module_of(id));
        self.graph.param(id, self.store.get(id), trainable)
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }

    pub fn is_trainable(&self, m: ModuleKind) -> bool {
        self.trainable.contains(&m)
    }
}

/// Deterministic parameter initialisation.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub module: ModuleKind,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        Tensor::from_fn(shape, |_| normal.sample(self.rng))
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.store.add(self.module, name, value)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let t = Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound));
        self.add(name, t)
    }
}

pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    geom: ConvGeom,
    standardize: bool,
}

impl Conv {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeom,
        standardize: bool,
    ) -> Self {
        let w = init.he_normal(&[cout, cin, k, k], cin * k * k);
        let weight = init.add(&format!("{name}.weight"), w);
        let bias = Some(init.add(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            geom,
            standardize,
        }
    }

    pub fn same(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        standardize: bool,
    ) -> Self {
        Self::new(init, name, cin, cout, k, ConvGeom::same(k), standardize)
    }

    /// Zero-initialised `k×k` head.
    pub fn zeros(init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = init.add(&format!("{name}.weight"), Tensor::zeros(&[cout, cin, k, k]));
        let bias = Some(init.add(&format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            geom: ConvGeom::same(k),
            standardize: false,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let mut w = cx.param(self.weight);
        if self.standardize {
            w = w.standardize_weight(1e-5);
        }
        x.conv2d(w, self.bias.map(|b| cx.param(b)), self.geom)
    }
}

pub struct Norm {
    kind: NormKind,
    affine: Option<(ParamId, ParamId)>,
    groups: usize,
}

/// Largest group count from {32, 16, 8, 4, 2, 1} that divides `c` and
/// leaves at least two channels per group when possible.
pub fn group_count(c: usize) -> usize {
    [32, 16, 8, 4, 2, 1]
        .into_iter()
        .find(|&g| c.is_multiple_of(g) && (c / g >= 2 || g == 1))
        .unwrap_or(1)
}

impl Norm {
    pub fn new(init: &mut Init<'_>, name: &str, kind: NormKind, c: usize) -> Self {
        let affine = match kind {
            NormKind::Identity => None,
            _ => Some((
                init.add(&format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
                init.add(&format!("{name}.beta"), Tensor::zeros(&[c])),
            )),
        };
        Self {
            kind,
            affine,
            groups: group_count(c),
        }
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        match self.affine {
            Some((g, b)) => x.group_norm(cx.param(g), cx.param(b), self.groups, 1e-5),
            None => x,
        }
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    Relu,
    Leaky(f64),
}

impl Act {
    pub fn apply<'g>(self, x: Var<'g>) -> Var<'g> {
        match self {
            Act::Relu => x.relu(),
            Act::Leaky(s) => x.leaky_relu(s),
        }
    }
}

/// Convolution, normalisation, activation.
pub struct ConvBlock {
    conv: Conv,
    norm: Norm,
    act: Act,
}

impl ConvBlock {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeom,
        norm: NormKind,
        act: Act,
    ) -> Self {
        let conv = Conv::new(
            init,
            &format!("{name}.conv"),
            cin,
            cout,
            k,
            geom,
            norm == NormKind::GroupWs,
        );
        let norm = Norm::new(init, &format!("{name}.norm"), norm, cout);
        Self { conv, norm, act }
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        self.act
            .apply(self.norm.forward(cx, self.conv.forward(cx, x)))
    }

    pub fn conv(&self) -> &Conv {
        &self.conv
    }
}

/// Two 3×3 convolutions with an identity or projected shortcut.
pub struct ResBlock {
    a: ConvBlock,
    b_conv: Conv,
    b_norm: Norm,
    shortcut: Option<Conv>,
    act: Act,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        dilation: usize,
        norm: NormKind,
        act: Act,
    ) -> Self {
        let geom = ConvGeom {
            stride,
            pad: dilation,
            dilation,
        };
        let a = ConvBlock::new(init, &format!("{name}.a"), cin, cout, 3, geom, norm, act);
        let b_geom = ConvGeom {
            stride: 1,
            pad: dilation,
            dilation,
        };
        let b_conv = Conv::new(
            init,
            &format!("{name}.b.conv"),
            cout,
            cout,
            3,
            b_geom,
            norm == NormKind::GroupWs,
        );
        let b_norm = Norm::new(init, &format!("{name}.b.norm"), norm, cout);
        let shortcut = (cin != cout || stride != 1).then(|| {
            Conv::new(
                init,
                &format!("{name}.skip"),
                cin,
                cout,
                1,
                ConvGeom {
                    stride,
                    pad: 0,
                    dilation: 1,
                },
                false,
            )
        });
        Self {
            a,
            b_conv,
            b_norm,
            shortcut,
            act,
        }
    }

    pub fn forward<'g>(&self, cx: &Ctx<'g>, x: Var<'g>) -> Var<'g> {
        let y = self
            .b_norm
            .forward(cx, self.b_conv.forward(cx, self.a.forward(cx, x)));
        let skip = match &self.shortcut {
            Some(s) => s.forward(cx, x),
            None => x,
        };
        self.act.apply(y.add(skip))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn group_count_divides() {
        for c in [1, 3, 8, 12, 16, 24, 64, 71, 256] {
            let g = group_count(c);
            assert_eq!(c % g, 0, "{c}");
        }
        assert_eq!(group_count(64), 32);
        assert_eq!(group_count(8), 4);
    }

    #[test]
    fn frozen_module_gets_no_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Conv::same(
            &mut Init {
                store: &mut store,
                module: ModuleKind::AlphaNet,
                rng: &mut rng,
            },
            "a",
            2,
            2,
            3,
            false,
        );
        let b = Conv::same(
            &mut Init {
                store: &mut store,
                module: ModuleKind::Refine,
                rng: &mut rng,
            },
            "b",
            2,
            2,
            3,
            true,
        );
        let g = Graph::new();
        let cx = Ctx::new(&g, &store, [ModuleKind::Refine]);
        let x = cx.constant(Tensor::full(&[2, 5, 5], 0.3));
        let y = b.forward(&cx, a.forward(&cx, x)).square().sum();
        let grads = g.backward(y);
        assert!(grads.param(a.weight_id()).is_none());
        assert!(grads.param(b.weight_id()).is_some());
        assert_eq!(store.entry(a.weight_id()).name, "alpha.a.weight");
    }
}
