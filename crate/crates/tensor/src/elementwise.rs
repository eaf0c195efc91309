//! Pointwise arithmetic and activations.

use ndarray::{Axis, IxDyn};

use crate::graph::Tensor;
use crate::{Float, Graph, Var};

impl<T: Float> Graph<T> {
    /// `a + b`. `b` may have the same shape as `a` or a suffix of it, in which
    /// case it is broadcast over the leading axes.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let a_shape = av.shape().to_vec();
        let b_shape = bv.shape().to_vec();
        if a_shape == b_shape {
            let out = &*av + &*bv;
            return self.record(out, &[a, b], |g| vec![Some(g.clone()), Some(g.clone())]);
        }
        assert!(
            b_shape.len() <= a_shape.len() && a_shape.ends_with(&b_shape),
            "add: cannot broadcast {b_shape:?} onto {a_shape:?}"
        );
        let lead = a_shape.len() - b_shape.len();
        let out = &*av + &*bv;
        self.record(out, &[a, b], move |g| {
            let mut gb = g.clone();
            for _ in 0..lead {
                gb = gb.sum_axis(Axis(0));
            }
            vec![Some(g.clone()), Some(gb)]
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "sub: shape mismatch");
        let out = &*av - &*bv;
        self.record(out, &[a, b], |g| vec![Some(g.clone()), Some(g.mapv(|v| -v))])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
        let out = &*av * &*bv;
        self.record(out, &[a, b], move |g| {
            vec![Some(g * &*bv), Some(g * &*av)]
        })
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        let f = T::of(factor);
        let out = &*self.value(a) * f;
        self.record(out, &[a], move |g| vec![Some(g * f)])
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let out = self.value(a).mapv(|v| v + c);
        self.record(out, &[a], |g| vec![Some(g.clone())])
    }

    /// Sum of several same-shaped tensors.
    pub fn sum_of(&self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "sum_of: empty input");
        let mut out = (*self.value(xs[0])).clone();
        for &x in &xs[1..] {
            let v = self.value(x);
            assert_eq!(out.shape(), v.shape(), "sum_of: shape mismatch");
            out += &*v;
        }
        let n = xs.len();
        self.record(out, xs, move |g| (0..n).map(|_| Some(g.clone())).collect())
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let av = self.value(a);
        let out = av.mapv(|v| if v > T::zero() { v } else { v * s });
        self.record(out, &[a], move |g| {
            let mut ga = g.clone();
            ga.zip_mut_with(&*av, |gv, &x| {
                if x <= T::zero() {
                    *gv *= s;
                }
            });
            vec![Some(ga)]
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| T::one() / (T::one() + (-v).exp()));
        let y = out.clone();
        self.record(out, &[a], move |g| {
            let mut ga = g.clone();
            ga.zip_mut_with(&y, |gv, &s| *gv *= s * (T::one() - s));
            vec![Some(ga)]
        })
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let av = self.value(a);
        let k = T::of((2.0 / std::f64::consts::PI).sqrt());
        let c = T::of(0.044715);
        let half = T::of(0.5);
        let three = T::of(3.0);
        let out = av.mapv(|x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()));
        self.record(out, &[a], move |g| {
            let mut ga = g.clone();
            ga.zip_mut_with(&*av, |gv, &x| {
                let u = k * (x + c * x * x * x);
                let t = u.tanh();
                let du = k * (T::one() + three * c * x * x);
                let d = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
                *gv *= d;
            });
            vec![Some(ga)]
        })
    }

    /// Multiplies by a fixed tensor that carries no gradient.
    pub fn mul_const(&self, a: Var, c: Tensor<T>) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), c.shape(), "mul_const: shape mismatch");
        let out = &*av * &c;
        self.record(out, &[a], move |g| vec![Some(g * &c)])
    }

    pub fn zeros_like(&self, a: Var) -> Var {
        let shape = self.shape(a);
        self.constant(Tensor::zeros(IxDyn(&shape)))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{arr1, ArrayD, IxDyn};

    use super::*;

    fn t(v: &[f64]) -> ArrayD<f64> {
        arr1(v).into_dyn()
    }

    #[test]
    fn broadcast_add_sums_leading_axes() {
        let g = Graph::<f64>::new();
        let a = g.param(ArrayD::from_elem(IxDyn(&[2, 3]), 1.0));
        let b = g.param(t(&[1.0, 2.0, 3.0]));
        let y = g.add(a, b);
        assert_eq!(g.value(y).as_slice().unwrap(), &[2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        let grads = g.backward(y);
        assert_eq!(grads.get(b).unwrap().as_slice().unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn leaky_relu_slope() {
        let g = Graph::<f64>::new();
        let a = g.param(t(&[-2.0, 3.0]));
        let y = g.leaky_relu(a, 0.2);
        assert_eq!(g.value(y).as_slice().unwrap(), &[-0.4, 3.0]);
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().as_slice().unwrap(), &[0.2, 1.0]);
    }

    #[test]
    fn inference_graph_records_no_gradients() {
        let g = Graph::<f32>::inference();
        let a = g.param(ArrayD::from_elem(IxDyn(&[2]), 1.0));
        let y = g.scale(a, 3.0);
        assert!(!g.requires_grad(y));
        assert!(g.backward(y).is_empty());
    }
}
