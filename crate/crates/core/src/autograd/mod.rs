//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! a scalar with respect to every node that requires one. Graphs built with
//! [`Graph::inference`] record values only.

mod conv;
mod elementwise;
mod norm;
mod shape;
mod spatial;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::Tensor;

pub use conv::ConvGeom;
pub use spatial::{gaussian_taps, reflect_index, Axis, BINOMIAL5};

/// Index of a parameter inside a [`crate::nn::ParamStore`].
pub type ParamId = usize;

type BackwardFn = Box<dyn Fn(&Tensor, &mut GradBuf)>;

struct Node {
    value: Rc<Tensor>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    grad_enabled: bool,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

/// Gradient accumulator handed to backward closures.
pub struct GradBuf {
    grads: Vec<Option<Tensor>>,
    wants: Vec<bool>,
}

impl GradBuf {
    #[inline]
    pub(crate) fn wants(&self, id: usize) -> bool {
        self.wants[id]
    }

    pub(crate) fn add(&mut self, id: usize, g: Tensor) {
        if !self.wants[id] {
            return;
        }
        match &mut self.grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulate in place into the gradient slot of `id`, creating it with
    /// `shape` if needed.
    pub(crate) fn add_with(&mut self, id: usize, shape: &[usize], f: impl FnOnce(&mut [f64])) {
        if !self.wants[id] {
            return;
        }
        let slot = self.grads[id].get_or_insert_with(|| Tensor::zeros(shape));
        f(slot.data_mut());
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    pub fn of(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads[var.id].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&n| self.grads[n].as_ref())
    }

    /// All parameter gradients, sorted by parameter id.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&p, &n)| self.grads[n].as_ref().map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            grad_enabled: true,
        }
    }

    /// A graph that never records gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(
        &self,
        value: Rc<Tensor>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            backward,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Rc::new(value), None, false)
    }

    /// A leaf whose gradient is tracked when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_node(Rc::new(value), None, requires_grad && self.grad_enabled)
    }

    /// Bind a parameter tensor. Each parameter id maps to one node per graph,
    /// so repeated uses accumulate into a single gradient.
    pub fn param(&self, id: ParamId, value: &Tensor, trainable: bool) -> Var<'_> {
        if let Some(&n) = self.params.borrow().get(&id) {
            return Var { id: n, graph: self };
        }
        let v = self.leaf(value.clone(), trainable);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    pub(crate) fn op(
        &self,
        value: Tensor,
        parents: &[Var<'_>],
        backward: impl Fn(&Tensor, &mut GradBuf) + 'static,
    ) -> Var<'_> {
        self.op_rc(Rc::new(value), parents, backward)
    }

    /// Like [`Graph::op`] for closures that need the output value.
    pub(crate) fn op_rc(
        &self,
        value: Rc<Tensor>,
        parents: &[Var<'_>],
        backward: impl Fn(&Tensor, &mut GradBuf) + 'static,
    ) -> Var<'_> {
        let requires = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        if requires {
            self.push_node(value, Some(Box::new(backward)), true)
        } else {
            self.push_node(value, None, false)
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut buf = GradBuf {
            grads: (0..n).map(|_| None).collect(),
            wants: nodes.iter().map(|nd| nd.requires_grad).collect(),
        };
        assert_eq!(
            nodes[root.id].value.numel(),
            1,
            "backward root must be a scalar"
        );
        if nodes[root.id].requires_grad {
            buf.grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), 1.0));
        }
        for id in (0..=root.id).rev() {
            let Some(g) = buf.grads[id].take() else {
                continue;
            };
            if let Some(f) = &nodes[id].backward {
                f(&g, &mut buf);
            }
            buf.grads[id] = Some(g);
        }
        Gradients {
            grads: buf.grads,
            params: self.params.borrow().clone(),
        }
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    /// Owned copy of the value.
    pub fn tensor(&self) -> Tensor {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.tensor())
    }
}

/// Finite-difference gradient checking.
pub mod gradcheck {
    use super::*;

    /// Central finite-difference gradient of `f` at `x`.
    pub fn numeric_grad(x: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let mut g = Tensor::zeros(x.shape());
        let mut xp = x.clone();
        for i in 0..x.numel() {
            let orig = xp.data()[i];
            xp.data_mut()[i] = orig + h;
            let fp = f(&xp);
            xp.data_mut()[i] = orig - h;
            let fm = f(&xp);
            xp.data_mut()[i] = orig;
            g.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Norm-wise relative error between two gradients.
    pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        let diff = a.zip_map(b, |x, y| x - y).sq_norm().sqrt();
        let scale = a.sq_norm().sqrt().max(b.sq_norm().sqrt()).max(1e-12);
        diff / scale
    }

    /// Relative error between the tape gradient of `f` at `x` and central
    /// differences with step `h`.
    pub fn check_grad(x: &Tensor, h: f64, f: impl for<'g> Fn(Var<'g>) -> Var<'g>) -> f64 {
        let g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let out = f(v);
        let grads = g.backward(out);
        let analytic = grads
            .of(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        let numeric = numeric_grad(x, h, |xp| {
            let g = Graph::inference();
            let v = g.constant(xp.clone());
            f(v).value().item()
        });
        rel_err(&analytic, &numeric)
    }
}
