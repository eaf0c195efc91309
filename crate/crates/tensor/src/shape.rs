//! Layout operations: reshape, permute, concatenation, slicing and row gathers.

use std::rc::Rc;

use ndarray::{concatenate, Axis, IxDyn, Slice};

use crate::graph::{zeros, Tensor};
use crate::{Float, Graph, Var};

impl<T: Float> Graph<T> {
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let av = self.value(a);
        let orig = av.shape().to_vec();
        let out = av
            .as_ref()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {orig:?} -> {shape:?}: {e}"));
        self.record(out, &[a], move |g| {
            vec![Some(g.clone().into_shape_with_order(IxDyn(&orig)).expect("reshape back"))]
        })
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let av = self.value(a);
        let out = av.as_ref().clone().permuted_axes(IxDyn(axes));
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.record(out, &[a], move |g| {
            vec![Some(
                g.clone()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .into_owned(),
            )]
        })
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat: empty input");
        let values: Vec<Rc<Tensor<T>>> = xs.iter().map(|&x| self.value(x)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views)
            .unwrap_or_else(|e| panic!("concat along axis {axis}: {e}"));
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.record(out, xs, move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&len| {
                    let part = g
                        .slice_axis(Axis(axis), Slice::from(start..start + len))
                        .to_owned();
                    start += len;
                    Some(part)
                })
                .collect()
        })
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let full = av.shape().to_vec();
        assert!(start + len <= full[axis], "narrow out of range");
        let out = av
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.record(out, &[a], move |g| {
            let mut ga = zeros::<T>(&full);
            ga.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(ga)]
        })
    }

    /// Crops the two trailing (spatial) axes of an NCHW tensor.
    pub fn crop2d(&self, a: Var, top: usize, left: usize, height: usize, width: usize) -> Var {
        let rank = self.shape(a).len();
        let rows = self.narrow(a, rank - 2, top, height);
        self.narrow(rows, rank - 1, left, width)
    }

    /// Builds a `[index.len(), D]` matrix whose row `i` is row `index[i]` of
    /// `a` (shape `[R, D]`), or zeros for `None`.
    pub fn gather_rows(&self, a: Var, index: Rc<Vec<Option<usize>>>) -> Var {
        let av = self.value(a);
        assert_eq!(av.ndim(), 2, "gather_rows expects a matrix");
        let (rows, dim) = (av.shape()[0], av.shape()[1]);
        let src = av.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); index.len() * dim];
        for (i, idx) in index.iter().enumerate() {
            if let Some(r) = *idx {
                assert!(r < rows, "gather_rows index {r} out of range {rows}");
                out[i * dim..(i + 1) * dim].copy_from_slice(&src[r * dim..(r + 1) * dim]);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[index.len(), dim]), out).expect("shape");
        self.record(out, &[a], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let mut ga = vec![T::zero(); rows * dim];
            for (i, idx) in index.iter().enumerate() {
                if let Some(r) = *idx {
                    for (d, s) in ga[r * dim..(r + 1) * dim]
                        .iter_mut()
                        .zip(&gs[i * dim..(i + 1) * dim])
                    {
                        *d += *s;
                    }
                }
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(&[rows, dim]), ga).expect("shape"))]
        })
    }

    /// Repeats the channel axis (axis 1) `times` times: `[N,C,..] -> [N,C*times,..]`.
    pub fn repeat_channels(&self, a: Var, times: usize) -> Var {
        let parts = vec![a; times];
        self.concat(&parts, 1)
    }
}
