//! Bilinear resampling: backward warping, resizing and 2x2 average pooling.
//!
//! All sampling clamps coordinates to the frame border. Gradients with respect
//! to a sampling coordinate are zero wherever that coordinate was clamped.

use ndarray::IxDyn;

use crate::graph::Tensor;
use crate::{Float, Graph, Var};

/// Four-neighbour bilinear footprint of one sampling position inside an
/// `h x w` plane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub i00: usize,
    pub i01: usize,
    pub i10: usize,
    pub i11: usize,
    pub wx: T,
    pub wy: T,
    pub free_x: bool,
    pub free_y: bool,
}

impl<T: Float> Tap<T> {
    #[inline]
    pub fn new(y: T, x: T, h: usize, w: usize) -> Self {
        let max_x = T::of((w - 1) as f64);
        let max_y = T::of((h - 1) as f64);
        let free_x = x >= T::zero() && x <= max_x;
        let free_y = y >= T::zero() && y <= max_y;
        let px = x.max(T::zero()).min(max_x);
        let py = y.max(T::zero()).min(max_y);
        let x0 = px.floor().to_usize().unwrap_or(0).min(w - 1);
        let y0 = py.floor().to_usize().unwrap_or(0).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        Self {
            i00: y0 * w + x0,
            i01: y0 * w + x1,
            i10: y1 * w + x0,
            i11: y1 * w + x1,
            wx: px - T::of(x0 as f64),
            wy: py - T::of(y0 as f64),
            free_x,
            free_y,
        }
    }

    /// Interpolated value. Terms with zero weight are skipped so that integer
    /// positions reproduce the source sample exactly.
    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        let one = T::one();
        let mut v = plane[self.i00] * ((one - self.wx) * (one - self.wy));
        if self.wx != T::zero() {
            v += plane[self.i01] * (self.wx * (one - self.wy));
        }
        if self.wy != T::zero() {
            v += plane[self.i10] * ((one - self.wx) * self.wy);
            if self.wx != T::zero() {
                v += plane[self.i11] * (self.wx * self.wy);
            }
        }
        v
    }

    /// Adds `g * d(sample)/d(plane)` into `grad`.
    #[inline]
    pub fn scatter(&self, grad: &mut [T], g: T) {
        let one = T::one();
        grad[self.i00] += g * ((one - self.wx) * (one - self.wy));
        grad[self.i01] += g * (self.wx * (one - self.wy));
        grad[self.i10] += g * ((one - self.wx) * self.wy);
        grad[self.i11] += g * (self.wx * self.wy);
    }

    /// Derivatives of the sampled value with respect to the x and y position.
    #[inline]
    pub fn position_grad(&self, plane: &[T]) -> (T, T) {
        let one = T::one();
        let (s00, s01, s10, s11) = (
            plane[self.i00],
            plane[self.i01],
            plane[self.i10],
            plane[self.i11],
        );
        let dx = if self.free_x {
            (one - self.wy) * (s01 - s00) + self.wy * (s11 - s10)
        } else {
            T::zero()
        };
        let dy = if self.free_y {
            (one - self.wx) * (s10 - s00) + self.wx * (s11 - s01)
        } else {
            T::zero()
        };
        (dx, dy)
    }
}

/// Source coordinate lookup for one axis of an align-corners-false bilinear
/// resize.
fn resize_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

impl<T: Float> Graph<T> {
    /// Backward warp: `out(x, y) = src(x + flow_x(x, y), y + flow_y(x, y))`.
    ///
    /// `src` is `[N, C, H, W]`, `flow` is `[N, 2, H, W]` holding `(dx, dy)` in
    /// pixels.
    pub fn warp(&self, src: Var, flow: Var) -> Var {
        let sv = self.value(src);
        let fv = self.value(flow);
        let (n, c, h, w) = dims4(sv.shape());
        assert_eq!(fv.shape(), &[n, 2, h, w], "warp: flow must be [N,2,H,W]");
        let plane = h * w;
        let taps: Vec<Tap<T>> = {
            let f = fv.as_slice().expect("standard layout");
            let mut taps = Vec::with_capacity(n * plane);
            for b in 0..n {
                let fx = &f[(b * 2) * plane..(b * 2 + 1) * plane];
                let fy = &f[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        taps.push(Tap::new(
                            T::of(y as f64) + fy[p],
                            T::of(x as f64) + fx[p],
                            h,
                            w,
                        ));
                    }
                }
            }
            taps
        };
        let s = sv.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); n * c * plane];
        for b in 0..n {
            let tb = &taps[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let src_plane = &s[off..off + plane];
                for (o, tap) in out[off..off + plane].iter_mut().zip(tb) {
                    *o = tap.sample(src_plane);
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape");
        self.record(out, &[src, flow], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let s = sv.as_slice().expect("standard layout");
            let mut gsrc = vec![T::zero(); n * c * plane];
            let mut gflow = vec![T::zero(); n * 2 * plane];
            for b in 0..n {
                let tb = &taps[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    let src_plane = &s[off..off + plane];
                    let gplane = &mut gsrc[off..off + plane];
                    for (p, tap) in tb.iter().enumerate() {
                        let go = gs[off + p];
                        if go == T::zero() {
                            continue;
                        }
                        tap.scatter(gplane, go);
                        let (dx, dy) = tap.position_grad(src_plane);
                        gflow[(b * 2) * plane + p] += go * dx;
                        gflow[(b * 2 + 1) * plane + p] += go * dy;
                    }
                }
            }
            vec![
                Some(Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), gsrc).expect("shape")),
                Some(Tensor::from_shape_vec(IxDyn(&[n, 2, h, w]), gflow).expect("shape")),
            ]
        })
    }

    /// Bilinear resize of the spatial axes (half-pixel centres, no corner
    /// alignment).
    pub fn resize_bilinear(&self, a: Var, out_h: usize, out_w: usize) -> Var {
        let av = self.value(a);
        let (n, c, h, w) = dims4(av.shape());
        if (h, w) == (out_h, out_w) {
            return self.record((*av).clone(), &[a], |g| vec![Some(g.clone())]);
        }
        let ys = resize_axis(h, out_h);
        let xs = resize_axis(w, out_w);
        let src = av.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for plane in 0..n * c {
            let sp = &src[plane * h * w..(plane + 1) * h * w];
            let op = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let lx = T::of(lx);
                    let top = sp[y0 * w + x0] * (T::one() - lx) + sp[y0 * w + x1] * lx;
                    let bot = sp[y1 * w + x0] * (T::one() - lx) + sp[y1 * w + x1] * lx;
                    op[oy * out_w + ox] = top * (T::one() - ly) + bot * ly;
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, c, out_h, out_w]), out).expect("shape");
        self.record(out, &[a], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let mut ga = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let gp = &gs[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                let ap = &mut ga[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                    let ly = T::of(ly);
                    for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                        let lx = T::of(lx);
                        let v = gp[oy * out_w + ox];
                        ap[y0 * w + x0] += v * (T::one() - ly) * (T::one() - lx);
                        ap[y0 * w + x1] += v * (T::one() - ly) * lx;
                        ap[y1 * w + x0] += v * ly * (T::one() - lx);
                        ap[y1 * w + x1] += v * ly * lx;
                    }
                }
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), ga).expect("shape"))]
        })
    }

    /// Non-overlapping 2x2 mean pooling of the spatial axes. Spatial dims must
    /// be even.
    pub fn avg_pool2(&self, a: Var) -> Var {
        let av = self.value(a);
        let (n, c, h, w) = dims4(av.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let src = av.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let sp = &src[plane * h * w..(plane + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let s = sp[2 * y * w + 2 * x]
                        + sp[2 * y * w + 2 * x + 1]
                        + sp[(2 * y + 1) * w + 2 * x]
                        + sp[(2 * y + 1) * w + 2 * x + 1];
                    out[plane * oh * ow + y * ow + x] = s * quarter;
                }
            }
        }
        let out = Tensor::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).expect("shape");
        self.record(out, &[a], move |g| {
            let gs = g.as_slice().expect("standard layout");
            let mut ga = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                for y in 0..h {
                    for x in 0..w {
                        ga[plane * h * w + y * w + x] =
                            gs[plane * oh * ow + (y / 2) * ow + x / 2] * quarter;
                    }
                }
            }
            vec![Some(Tensor::from_shape_vec(IxDyn(&[n, c, h, w]), ga).expect("shape"))]
        })
    }
}

pub(crate) fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected an NCHW tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

#[cfg(test)]
mod tests {
    use ndarray::{ArrayD, IxDyn};

    use super::*;

    fn ramp(h: usize, w: usize) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(&[1, 1, h, w]), |i| i[3] as f64 / w as f64)
    }

    #[test]
    fn zero_flow_is_identity() {
        let g = Graph::<f32>::new();
        let src = ArrayD::from_shape_fn(IxDyn(&[2, 3, 5, 7]), |i| {
            ((i[0] * 31 + i[1] * 7 + i[2] * 3 + i[3]) as f32 * 0.37).sin()
        });
        let s = g.constant(src.clone());
        let f = g.constant(ArrayD::zeros(IxDyn(&[2, 2, 5, 7])));
        let out = g.warp(s, f);
        assert_eq!(*g.value(out), src);
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let g = Graph::<f64>::new();
        let s = g.constant(ramp(4, 8));
        let mut flow = ArrayD::zeros(IxDyn(&[1, 2, 4, 8]));
        flow.slice_mut(ndarray::s![.., 0, .., ..]).fill(0.5);
        let f = g.constant(flow);
        let out = g.value(g.warp(s, f));
        for x in 0..7 {
            let expect = (x as f64 / 8.0 + (x + 1) as f64 / 8.0) / 2.0;
            assert!((out[[0, 0, 2, x]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_same_size_is_identity_and_constant_preserving() {
        let g = Graph::<f64>::new();
        let a = g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 8, 8]), 0.3));
        let down = g.value(g.resize_bilinear(a, 2, 4));
        assert!(down.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        let up = g.value(g.resize_bilinear(a, 16, 12));
        assert!(up.iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn quarter_downscale_averages_middle_pixels() {
        // align-corners-false at scale 1/4 samples between source pixels 4i+1 and 4i+2.
        let g = Graph::<f64>::new();
        let a = g.constant(ramp(4, 8));
        let out = g.value(g.resize_bilinear(a, 1, 2));
        assert!((out[[0, 0, 0, 0]] - 1.5 / 8.0).abs() < 1e-12);
        assert!((out[[0, 0, 0, 1]] - 5.5 / 8.0).abs() < 1e-12);
    }
}
