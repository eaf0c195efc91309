//! Convolutions lowered to matrix products through im2col / col2im.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, IxDyn};

use crate::graph::Tensor;
use crate::sampling::{dims4, Tap};
use crate::{Float, Graph, Var};

/// Geometry of a square-kernel convolution mapping `(c, h, w)` to `(oh, ow)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Float>(x: &[T], geo: &Geometry, cols: &mut [T]) {
    let Geometry { c, h, w, k, stride, pad, oh, ow } = *geo;
    let l = oh * ow;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * l..((ch * k + ki) * k + kj + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], geo: &Geometry, x: &mut [T]) {
    let Geometry { c, h, w, k, stride, pad, oh, ow } = *geo;
    let l = oh * ow;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * l..((ch * k + ki) * k + kj + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    beta: T,
) {
    let av = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm a").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm a")
    };
    let bv = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm b").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm b")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm c");
    general_mat_mul(T::one(), &av, &bv, beta, &mut cv);
}


fn add_bias<T: Float>(out: &mut [T], bias: &[T], l: usize) {
    for (row, &b) in out.chunks_mut(l).zip(bias) {
        for v in row {
            *v += b;
        }
    }
}

fn bias_grad<T: Float>(g: &[T], l: usize, acc: &mut [T]) {
    for (row, a) in g.chunks(l).zip(acc.iter_mut()) {
        *a += row.iter().copied().sum::<T>();
    }
}

impl<T: Float> Graph<T> {
    /// 2-D convolution with zero padding.
    ///
    /// `x: [N, C, H, W]`, `weight: [O, C, k, k]`, `bias: [O]`.
    pub fn conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let (n, c, h, w) = dims4(xv.shape());
        let (o, wc, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
        let geo = Geometry::new(c, h, w, k, stride, pad);
        let (rows, l) = (geo.rows(), geo.cols());
        let xs = xv.as_slice().expect("standard layout");
        let ws = wv.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); n * o * l];
        let mut cols = vec![T::zero(); rows * l];
        for b in 0..n {
            im2col(&xs[b * c * h * w..(b + 1) * c * h * w], &geo, &mut cols);
            let ob = &mut out[b * o * l..(b + 1) * o * l];
            gemm(o, rows, l, ws, false, &cols, false, ob, T::zero());
            if let Some(bv) = &bv {
                add_bias(ob, bv.as_slice().expect("standard layout"), l);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, o, geo.oh, geo.ow]), out).expect("shape");
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(out, &parents, move |g| {
            let gs = g.as_slice().expect("standard layout");
            let xs = xv.as_slice().expect("standard layout");
            let ws = wv.as_slice().expect("standard layout");
            let mut gx = vec![T::zero(); n * c * h * w];
            let mut gw = vec![T::zero(); o * rows];
            let mut gb = vec![T::zero(); o];
            let mut cols = vec![T::zero(); rows * l];
            let mut gcols = vec![T::zero(); rows * l];
            for b in 0..n {
                let gob = &gs[b * o * l..(b + 1) * o * l];
                im2col(&xs[b * c * h * w..(b + 1) * c * h * w], &geo, &mut cols);
                gemm(o, l, rows, gob, false, &cols, true, &mut gw, T::one());
                gemm(rows, o, l, ws, true, gob, false, &mut gcols, T::zero());
                col2im(&gcols, &geo, &mut gx[b * c * h * w..(b + 1) * c * h * w]);
                if has_bias {
                    bias_grad(gob, l, &mut gb);
                }
            }
            let mut grads = vec![
                Some(Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), gx).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&[o, c, k, k]), gw).expect("shape")),
            ];
            if has_bias {
                grads.push(Some(Tensor::from_shape_vec(IxDyn(&[o]), gb).expect("shape")));
            }
            grads
        })
    }

    /// Transposed 2-D convolution (the adjoint of [`Graph::conv2d`] in `x`).
    ///
    /// `x: [N, C, H, W]`, `weight: [C, O, k, k]`, `bias: [O]`. Output spatial
    /// size is `(H - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let (n, c, h, w) = dims4(xv.shape());
        let (wc, o, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(wc, c, "conv_transpose2d: weight expects {wc} input channels, got {c}");
        assert!(output_pad < stride, "output padding must be smaller than stride");
        let oh = (h - 1) * stride + k + output_pad - 2 * pad;
        let ow = (w - 1) * stride + k + output_pad - 2 * pad;
        // The matching forward convolution maps (o, oh, ow) back to (h, w).
        let geo = Geometry::new(o, oh, ow, k, stride, pad);
        assert_eq!((geo.oh, geo.ow), (h, w), "conv_transpose2d geometry");
        let (rows, l) = (geo.rows(), h * w);
        let xs = xv.as_slice().expect("standard layout");
        let ws = wv.as_slice().expect("standard layout");
        let out_plane = oh * ow;
        let mut out = vec![T::zero(); n * o * out_plane];
        let mut cols = vec![T::zero(); rows * l];
        for b in 0..n {
            gemm(rows, c, l, ws, true, &xs[b * c * l..(b + 1) * c * l], false, &mut cols, T::zero());
            let ob = &mut out[b * o * out_plane..(b + 1) * o * out_plane];
            col2im(&cols, &geo, ob);
            if let Some(bv) = &bv {
                add_bias(ob, bv.as_slice().expect("standard layout"), out_plane);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, o, oh, ow]), out).expect("shape");
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(out, &parents, move |g| {
            let gs = g.as_slice().expect("standard layout");
            let xs = xv.as_slice().expect("standard layout");
            let ws = wv.as_slice().expect("standard layout");
            let mut gx = vec![T::zero(); n * c * l];
            let mut gw = vec![T::zero(); c * rows];
            let mut gb = vec![T::zero(); o];
            let mut gcols = vec![T::zero(); rows * l];
            for b in 0..n {
                let gob = &gs[b * o * out_plane..(b + 1) * o * out_plane];
                im2col(gob, &geo, &mut gcols);
                gemm(c, rows, l, ws, false, &gcols, false, &mut gx[b * c * l..(b + 1) * c * l], T::zero());
                gemm(c, l, rows, &xs[b * c * l..(b + 1) * c * l], false, &gcols, true, &mut gw, T::one());
                if has_bias {
                    bias_grad(gob, out_plane, &mut gb);
                }
            }
            let mut grads = vec![
                Some(Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), gx).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&[c, o, k, k]), gw).expect("shape")),
            ];
            if has_bias {
                grads.push(Some(Tensor::from_shape_vec(IxDyn(&[o]), gb).expect("shape")));
            }
            grads
        })
    }

    /// Stride-1 "same" convolution whose taps are displaced by an offset field
    /// and sampled bilinearly; positions outside the frame read zero, as in a
    /// zero-padded dense convolution.
    ///
    /// `offsets` is `[N, 2, H, W]` (one `(dx, dy)` shared by every tap) or
    /// `[N, 2*k*k, H, W]` (one pair per tap, row-major over the kernel).
    pub fn deform_conv2d(&self, x: Var, offsets: Var, weight: Var, bias: Option<Var>) -> Var {
        let xv = self.value(x);
        let offv = self.value(offsets);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let (n, c, h, w) = dims4(xv.shape());
        let (o, wc, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(wc, c, "deform_conv2d: weight expects {wc} input channels, got {c}");
        assert!(k % 2 == 1, "deform_conv2d needs an odd kernel");
        let kk = k * k;
        let off_ch = offv.shape()[1];
        assert!(
            off_ch == 2 || off_ch == 2 * kk,
            "deform_conv2d: offsets need 2 or {} channels, got {off_ch}",
            2 * kk
        );
        assert_eq!(&offv.shape()[2..], &[h, w], "deform_conv2d: offset size");
        let per_tap = off_ch != 2;
        let half = (k / 2) as isize;
        let l = h * w;
        let rows = c * kk;
        // Planes carry a one-pixel zero ring; clamping into it gives the
        // zero-padding semantics of a dense convolution.
        let (hp, wp) = (h + 2, w + 2);
        let lp = hp * wp;

        // Sampling footprints are shared by all channels: [n][tap][pixel].
        let taps: Vec<Tap<T>> = {
            let off = offv.as_slice().expect("standard layout");
            let mut taps = Vec::with_capacity(n * kk * l);
            for b in 0..n {
                let ob = &off[b * off_ch * l..(b + 1) * off_ch * l];
                for t in 0..kk {
                    let (ty, tx) = ((t / k) as isize - half, (t % k) as isize - half);
                    let ch = if per_tap { 2 * t } else { 0 };
                    for y in 0..h {
                        for x in 0..w {
                            let p = y * w + x;
                            taps.push(Tap::new(
                                T::of((y as isize + ty + 1) as f64) + ob[(ch + 1) * l + p],
                                T::of((x as isize + tx + 1) as f64) + ob[ch * l + p],
                                hp,
                                wp,
                            ));
                        }
                    }
                }
            }
            taps
        };
        let build_cols = move |xs: &[T], taps: &[Tap<T>], cols: &mut [T]| {
            for ch in 0..c {
                let plane = &xs[ch * lp..(ch + 1) * lp];
                for t in 0..kk {
                    let row = &mut cols[(ch * kk + t) * l..(ch * kk + t + 1) * l];
                    for (v, tap) in row.iter_mut().zip(&taps[t * l..(t + 1) * l]) {
                        *v = tap.sample(plane);
                    }
                }
            }
        };

        let xpad: Vec<T> = {
            let xs = xv.as_slice().expect("standard layout");
            let mut p = vec![T::zero(); n * c * lp];
            for (src, dst) in xs.chunks(l).zip(p.chunks_mut(lp)) {
                for y in 0..h {
                    dst[(y + 1) * wp + 1..(y + 1) * wp + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
            p
        };
        let ws = wv.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); n * o * l];
        let mut cols = vec![T::zero(); rows * l];
        for b in 0..n {
            build_cols(&xpad[b * c * lp..(b + 1) * c * lp], &taps[b * kk * l..(b + 1) * kk * l], &mut cols);
            let ob = &mut out[b * o * l..(b + 1) * o * l];
            gemm(o, rows, l, ws, false, &cols, false, ob, T::zero());
            if let Some(bv) = &bv {
                add_bias(ob, bv.as_slice().expect("standard layout"), l);
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, o, h, w]), out).expect("shape");
        let mut parents = vec![x, offsets, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(out, &parents, move |g| {
            let gs = g.as_slice().expect("standard layout");
            let ws = wv.as_slice().expect("standard layout");
            let mut gx = vec![T::zero(); n * c * lp];
            let mut goff = vec![T::zero(); n * off_ch * l];
            let mut gw = vec![T::zero(); o * rows];
            let mut gb = vec![T::zero(); o];
            let mut cols = vec![T::zero(); rows * l];
            let mut gcols = vec![T::zero(); rows * l];
            for b in 0..n {
                let gob = &gs[b * o * l..(b + 1) * o * l];
                let xb = &xpad[b * c * lp..(b + 1) * c * lp];
                let tb = &taps[b * kk * l..(b + 1) * kk * l];
                build_cols(xb, tb, &mut cols);
                gemm(o, l, rows, gob, false, &cols, true, &mut gw, T::one());
                gemm(rows, o, l, ws, true, gob, false, &mut gcols, T::zero());
                if has_bias {
                    bias_grad(gob, l, &mut gb);
                }
                let gxb = &mut gx[b * c * lp..(b + 1) * c * lp];
                let goffb = &mut goff[b * off_ch * l..(b + 1) * off_ch * l];
                for ch in 0..c {
                    let plane = &xb[ch * lp..(ch + 1) * lp];
                    let gplane = &mut gxb[ch * lp..(ch + 1) * lp];
                    for t in 0..kk {
                        let oc = if per_tap { 2 * t } else { 0 };
                        let grow = &gcols[(ch * kk + t) * l..(ch * kk + t + 1) * l];
                        for (p, (&gv, tap)) in grow.iter().zip(&tb[t * l..(t + 1) * l]).enumerate() {
                            if gv == T::zero() {
                                continue;
                            }
                            tap.scatter(gplane, gv);
                            let (dx, dy) = tap.position_grad(plane);
                            goffb[oc * l + p] += gv * dx;
                            goffb[(oc + 1) * l + p] += gv * dy;
                        }
                    }
                }
            }
            let mut grads = vec![
                Some(Tensor::from_shape_fn(IxDyn(&[n, c, h, w]), |i| {
                    gx[(i[0] * c + i[1]) * lp + (i[2] + 1) * wp + i[3] + 1]
                })),
                Some(Tensor::from_shape_vec(IxDyn(&[n, off_ch, h, w]), goff).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&[o, c, k, k]), gw).expect("shape")),
            ];
            if has_bias {
                grads.push(Some(Tensor::from_shape_vec(IxDyn(&[o]), gb).expect("shape")));
            }
            grads
        })
    }
}
