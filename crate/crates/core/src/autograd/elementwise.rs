use std::rc::Rc;

use super::Var;
use crate::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'g> Var<'g> {
    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add");
        let out = a.zip_map(&b, |x, y| x + y);
        let (ia, ib) = (self.id, other.id);
        self.graph.op(out, &[self, other], move |g, buf| {
            if buf.wants(ia) {
                buf.add(ia, g.clone());
            }
            if buf.wants(ib) {
                buf.add(ib, g.clone());
            }
        })
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub");
        let out = a.zip_map(&b, |x, y| x - y);
        let (ia, ib) = (self.id, other.id);
        self.graph.op(out, &[self, other], move |g, buf| {
            if buf.wants(ia) {
                buf.add(ia, g.clone());
            }
            if buf.wants(ib) {
                buf.add(ib, g.map(|v| -v));
            }
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul");
        let out = a.zip_map(&b, |x, y| x * y);
        let (ia, ib) = (self.id, other.id);
        self.graph.op(out, &[self, other], move |g, buf| {
            if buf.wants(ia) {
                buf.add(ia, g.zip_map(&b, |gv, bv| gv * bv));
            }
            if buf.wants(ib) {
                buf.add(ib, g.zip_map(&a, |gv, av| gv * av));
            }
        })
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "div");
        let out = a.zip_map(&b, |x, y| x / y);
        let (ia, ib) = (self.id, other.id);
        self.graph.op(out, &[self, other], move |g, buf| {
            if buf.wants(ia) {
                buf.add(ia, g.zip_map(&b, |gv, bv| gv / bv));
            }
            if buf.wants(ib) {
                let t = g.zip_map(&a, |gv, av| gv * av);
                buf.add(ib, t.zip_map(&b, |tv, bv| -tv / (bv * bv)));
            }
        })
    }

    /// Multiply by a constant factor.
    pub fn scale(self, k: f64) -> Var<'g> {
        let out = self.value().map(|v| v * k);
        let ia = self.id;
        self.graph
            .op(out, &[self], move |g, buf| buf.add(ia, g.map(|v| v * k)))
    }

    /// Add a constant.
    pub fn offset(self, k: f64) -> Var<'g> {
        let out = self.value().map(|v| v + k);
        let ia = self.id;
        self.graph
            .op(out, &[self], move |g, buf| buf.add(ia, g.clone()))
    }

    /// `k - self`.
    pub fn rsub(self, k: f64) -> Var<'g> {
        self.scale(-1.0).offset(k)
    }

    /// Pointwise map whose derivative is expressed through input `x` and output `y`.
    fn pointwise(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'g> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let yc = Rc::clone(&y);
        let ia = self.id;
        self.graph.op_rc(y, &[self], move |g, buf| {
            if !buf.wants(ia) {
                return;
            }
            let d: Vec<f64> = g
                .data()
                .iter()
                .zip(x.data().iter().zip(yc.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            buf.add(ia, Tensor::from_parts(g.shape().to_vec(), d));
        })
    }

    pub fn abs(self) -> Var<'g> {
        self.pointwise(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(self) -> Var<'g> {
        self.pointwise(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn ln(self) -> Var<'g> {
        self.pointwise(f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(self) -> Var<'g> {
        self.pointwise(f64::exp, |_, y| y)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.pointwise(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(self) -> Var<'g> {
        self.pointwise(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.pointwise(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.pointwise(
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Tensor::scalar(x.sum());
        let ia = self.id;
        self.graph.op(out, &[self], move |g, buf| {
            let gv = g.item();
            buf.add(ia, Tensor::full(&shape, gv));
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }
}
