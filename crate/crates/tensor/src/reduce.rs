//! Scalar reductions and losses.

use ndarray::IxDyn;

use crate::graph::Tensor;
use crate::{Float, Graph, Var};

impl<T: Float> Graph<T> {
    pub fn sum_all(&self, a: Var) -> Var {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let out = Tensor::from_elem(IxDyn(&[]), av.sum());
        self.record(out, &[a], move |g| {
            let gv = *g.first().expect("scalar gradient");
            vec![Some(Tensor::from_elem(IxDyn(&shape), gv))]
        })
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean absolute difference between two same-shaped tensors.
    pub fn l1_loss(&self, pred: Var, target: Var) -> Var {
        let pv = self.value(pred);
        let tv = self.value(target);
        assert_eq!(pv.shape(), tv.shape(), "l1_loss: shape mismatch");
        let n = T::of(pv.len() as f64);
        let total: T = pv.iter().zip(tv.iter()).map(|(&p, &t)| (p - t).abs()).sum();
        let out = Tensor::from_elem(IxDyn(&[]), total / n);
        self.record(out, &[pred, target], move |g| {
            let gv = *g.first().expect("scalar gradient") / n;
            let mut gp = Tensor::zeros(IxDyn(pv.shape()));
            ndarray::Zip::from(&mut gp)
                .and(&*pv)
                .and(&*tv)
                .for_each(|o, &p, &t| {
                    *o = if p > t {
                        gv
                    } else if p < t {
                        -gv
                    } else {
                        T::zero()
                    }
                });
            let gt = gp.mapv(|v| -v);
            vec![Some(gp), Some(gt)]
        })
    }
}
