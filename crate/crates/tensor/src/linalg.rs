//! Matrix products, affine maps and row-wise normalisations.

use ndarray::IxDyn;

use crate::conv::gemm;
use crate::graph::Tensor;
use crate::{Float, Graph, Var};

fn batch_dims(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [m, n] => (1, m, n),
        [b, m, n] => (b, m, n),
        _ => panic!("matmul expects rank 2 or 3, got {shape:?}"),
    }
}

impl<T: Float> Graph<T> {
    /// Batched `op(a) x op(b)` over `[B, M, K]`-shaped operands (rank 2 is a
    /// batch of one). `trans_*` transposes the two trailing axes.
    pub fn matmul(&self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let rank = av.ndim();
        assert_eq!(rank, bv.ndim(), "matmul: rank mismatch");
        let (ba, ar, ac) = batch_dims(av.shape());
        let (bb, br, bc) = batch_dims(bv.shape());
        assert_eq!(ba, bb, "matmul: batch mismatch");
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul: inner dimension mismatch {k} vs {k2}");
        let asl = av.as_slice().expect("standard layout");
        let bsl = bv.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); ba * m * n];
        for i in 0..ba {
            gemm(
                m,
                k,
                n,
                &asl[i * ar * ac..(i + 1) * ar * ac],
                trans_a,
                &bsl[i * br * bc..(i + 1) * br * bc],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                T::zero(),
            );
        }
        let shape: Vec<usize> = if rank == 2 { vec![m, n] } else { vec![ba, m, n] };
        let out = Tensor::from_shape_vec(IxDyn(&shape), out).expect("shape");
        let (a_shape, b_shape) = (av.shape().to_vec(), bv.shape().to_vec());
        self.record(out, &[a, b], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let asl = av.as_slice().expect("standard layout");
            let bsl = bv.as_slice().expect("standard layout");
            let mut ga = vec![T::zero(); ba * ar * ac];
            let mut gb = vec![T::zero(); bb * br * bc];
            for i in 0..ba {
                let gi = &gs[i * m * n..(i + 1) * m * n];
                let ai = &asl[i * ar * ac..(i + 1) * ar * ac];
                let bi = &bsl[i * br * bc..(i + 1) * br * bc];
                let gai = &mut ga[i * ar * ac..(i + 1) * ar * ac];
                let gbi = &mut gb[i * br * bc..(i + 1) * br * bc];
                // dA = G op(B)^T, dB = op(A)^T G, transposed back when needed.
                if trans_a {
                    gemm(k, n, m, bi, trans_b, gi, true, gai, T::zero());
                } else {
                    gemm(m, n, k, gi, false, bi, !trans_b, gai, T::zero());
                }
                if trans_b {
                    gemm(n, m, k, gi, true, ai, trans_a, gbi, T::zero());
                } else {
                    gemm(k, m, n, ai, !trans_a, gi, false, gbi, T::zero());
                }
            }
            vec![
                Some(Tensor::from_shape_vec(IxDyn(&a_shape), ga).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&b_shape), gb).expect("shape")),
            ]
        })
    }

    /// Affine map over the last axis: `x W^T + b` with `W: [out, in]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let shape = self.shape(x);
        let din = *shape.last().expect("linear on scalar");
        let rows = shape.iter().product::<usize>() / din;
        let dout = self.shape(weight)[0];
        let flat = self.reshape(x, &[rows, din]);
        let y = self.matmul(flat, weight, false, true);
        let y = match bias {
            Some(b) => self.add(y, b),
            None => y,
        };
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank") = dout;
        self.reshape(y, &out_shape)
    }

    /// Exponential normalisation along the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let av = self.value(a);
        let d = *av.shape().last().expect("softmax on scalar");
        let mut out = av.as_slice().expect("standard layout").to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(av.shape()), out).expect("shape");
        let y = out.clone();
        self.record(out, &[a], move |g| {
            let ys = y.as_slice().expect("standard layout");
            let mut ga = g.as_slice().expect("standard layout").to_vec();
            for (grow, yrow) in ga.chunks_mut(d).zip(ys.chunks(d)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in grow.iter_mut().zip(yrow) {
                    *gv = yv * (*gv - dot);
                }
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(y.shape()), ga).expect("shape"))]
        })
    }

    /// Layer normalisation over the last axis with learned scale and shift.
    pub fn layer_norm(&self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let av = self.value(a);
        let gv = self.value(gamma);
        let d = *av.shape().last().expect("layer_norm on scalar");
        assert_eq!(gv.len(), d, "layer_norm: gamma size");
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xs = av.as_slice().expect("standard layout");
        let rows = xs.len() / d;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let normed = Tensor::from_shape_vec(IxDyn(av.shape()), xhat).expect("shape");
        let xhat_var = self.record(normed, &[a], move |g| {
            let gsl = g.as_slice().expect("standard layout");
            let mut ga = vec![T::zero(); gsl.len()];
            let xh = xhat_of(&av, d, eps);
            for r in 0..rows {
                let gr = &gsl[r * d..(r + 1) * d];
                let xr = &xh[r * d..(r + 1) * d];
                let mean_g = gr.iter().copied().sum::<T>() / dn;
                let mean_gx = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                for ((o, &gv), &xv) in ga[r * d..(r + 1) * d].iter_mut().zip(gr).zip(xr) {
                    *o = inv_std[r] * (gv - mean_g - xv * mean_gx);
                }
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(av.shape()), ga).expect("shape"))]
        });
        let scaled = self.mul_row(xhat_var, gamma);
        self.add(scaled, beta)
    }

    /// Multiplies every row (last axis) elementwise by `w`.
    pub fn mul_row(&self, a: Var, w: Var) -> Var {
        let av = self.value(a);
        let wv = self.value(w);
        let d = wv.len();
        assert_eq!(*av.shape().last().expect("rank"), d, "mul_row: width mismatch");
        let ws = wv.as_slice().expect("standard layout").to_vec();
        let mut out = av.as_slice().expect("standard layout").to_vec();
        for row in out.chunks_mut(d) {
            for (v, &s) in row.iter_mut().zip(&ws) {
                *v *= s;
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(av.shape()), out).expect("shape");
        let w_shape = wv.shape().to_vec();
        self.record(out, &[a, w], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let xs = av.as_slice().expect("standard layout");
            let mut ga = gs.to_vec();
            let mut gw = vec![T::zero(); d];
            for (r, row) in ga.chunks_mut(d).enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    gw[j] += *v * xs[r * d + j];
                    *v *= ws[j];
                }
            }
            vec![
                Some(Tensor::from_shape_vec(IxDyn(av.shape()), ga).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&w_shape), gw).expect("shape")),
            ]
        })
    }
}

fn xhat_of<T: Float>(a: &Tensor<T>, d: usize, eps: T) -> Vec<T> {
    let xs = a.as_slice().expect("standard layout");
    let dn = T::of(d as f64);
    let mut out = vec![T::zero(); xs.len()];
    for (orow, row) in out.chunks_mut(d).zip(xs.chunks(d)) {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    out
}
