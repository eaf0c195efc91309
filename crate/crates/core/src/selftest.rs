//! Built-in invariant suite run by the `selftest` command.

use std::collections::BTreeMap;
use std::path::Path;

use hstr_tensor::gradcheck::{central_difference, relative_error};
use hstr_tensor::{Float, Graph, Tensor};
use ndarray::IxDyn;
use rand::Rng;

use crate::checkpoint::load_checkpoint;
use crate::config::{ContextConfig, FusionConfig, ModelConfig, MotionConfig, PatchMatchConfig, Variant};
use crate::error::Result;
use crate::fusion;
use crate::image::ImageF;
use crate::metrics::{psnr, ssim};
use crate::network::{forward_graph, param_specs, Model};
use crate::params::{ParamStore, Scope, SpecList};
use crate::patchmatch;
use crate::seed;
use crate::toy;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Small widths keep the suite fast; the structure is the full variant's.
pub fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        motion: MotionConfig { widths: [6, 6, 6], ..MotionConfig::default() },
        context: ContextConfig { channels: [4, 4, 6, 6], ..ContextConfig::default() },
        patchmatch: PatchMatchConfig { dim: 6, heads: 2, ..PatchMatchConfig::default() },
        fusion: FusionConfig { down: [4, 4, 6, 6], up: [6, 4, 4, 4] },
        ..ModelConfig::default()
    }
}

fn random<T: Float>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = seed::rng(seed, &[seed::hash_str("selftest")]);
    Tensor::from_shape_simple_fn(IxDyn(shape), || T::of(rng.random_range(lo..hi)))
}

fn warp_identity() -> Check {
    let g = Graph::<f32>::inference();
    let mut ok = true;
    for k in 0..20 {
        let x = g.constant(random(&[1, 3, 13, 17], k, 0.0, 1.0));
        let out = g.warp(x, g.constant(Tensor::zeros(IxDyn(&[1, 2, 13, 17]))));
        ok &= *g.value(out) == *g.value(x);
    }
    let ramp = Tensor::from_shape_fn(IxDyn(&[1, 1, 4, 8]), |i| i[3] as f32);
    let mut flow = Tensor::zeros(IxDyn(&[1, 2, 4, 8]));
    flow.index_axis_mut(ndarray::Axis(1), 0).fill(1.5);
    let out = g.value(g.warp(g.constant(ramp), g.constant(flow)));
    let mut err = 0.0f64;
    for y in 0..4 {
        for x in 0..6 {
            err = err.max((out[[0, 0, y, x]] as f64 - (x as f64 + 1.5)).abs());
        }
    }
    check("warp identity", ok && err < 1e-6, format!("zero flow bitwise: {ok}, ramp error {err:.1e}"))
}

fn reconstruction_endpoints() -> Check {
    let hw = toy::clip(1, 1, 8, 8).remove(0);
    let lr = toy::clip(2, 1, 8, 8).remove(0);
    let zero = vec![0.0; 8 * 8 * 3];
    let a = fusion::reconstruct(&hw, &lr, &zero, &[1.0; 64]).map(|o| o == hw).unwrap_or(false);
    let b = fusion::reconstruct(&hw, &lr, &zero, &[0.0; 64]).map(|o| o == lr).unwrap_or(false);
    check("reconstruction endpoints", a && b, format!("m=1 gives warped: {a}, m=0 gives LR: {b}"))
}

/// Dense per-window attention in 64-bit over the linear layers' weights.
fn attention_oracle(p: &BTreeMap<String, Tensor<f64>>, prefix: &str, lr: &Tensor<f64>, rf: &Tensor<f64>, heads: usize) -> Tensor<f64> {
    let (b, n, d) = (lr.shape()[0], lr.shape()[1], lr.shape()[2]);
    let dh = d / heads;
    let window = (n as f64).sqrt() as usize;
    let lin = |name: &str, x: &Tensor<f64>, bi: usize| -> Vec<Vec<f64>> {
        let w = &p[&format!("{prefix}.{name}.weight")];
        let bias = &p[&format!("{prefix}.{name}.bias")];
        (0..n).map(|t| (0..d).map(|o| bias[[o]] + (0..d).map(|i| w[[o, i]] * x[[bi, t, i]]).sum::<f64>()).collect()).collect()
    };
    let table = &p[&format!("{prefix}.rel_bias")];
    let rel = patchmatch::relative_index(window);
    let softmax = |q: &[Vec<f64>], k: &[Vec<f64>], h: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = (0..dh).map(|e| q[i][h * dh + e] * k[j][h * dh + e]).sum();
                        dot / (dh as f64).sqrt() + table[[rel[i * n + j].unwrap(), h]]
                    })
                    .collect();
                let m = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            })
            .collect()
    };
    let mut out = Tensor::zeros(IxDyn(&[b, n, d]));
    for bi in 0..b {
        let (ql, kl) = (lin("lr.q", lr, bi), lin("lr.k", lr, bi));
        let (qr, kr, vr) = (lin("ref.q", rf, bi), lin("ref.k", rf, bi), lin("ref.v", rf, bi));
        for h in 0..heads {
            let a_ref = softmax(&ql, &kr, h);
            let a_lr = softmax(&qr, &kl, h);
            let inner: Vec<Vec<f64>> =
                (0..n).map(|i| (0..dh).map(|e| (0..n).map(|j| a_ref[i][j] * vr[j][h * dh + e]).sum()).collect()).collect();
            for i in 0..n {
                for e in 0..dh {
                    out[[bi, i, h * dh + e]] = (0..n).map(|j| a_lr[i][j] * inner[j][e]).sum();
                }
            }
        }
    }
    out
}

fn attention() -> Check {
    let cfg = PatchMatchConfig { dim: 8, heads: 2, ..PatchMatchConfig::default() };
    let mut specs = SpecList::default();
    patchmatch::declare(&cfg, &mut specs);
    let mut store = ParamStore::init(&specs.0, 5);
    store.jitter(6, 0.3);
    let p = store.cast::<f64>();
    let g = Graph::<f64>::inference();
    let s = Scope::bind(&g, &p);
    let prefix = "patchmatch.group1.block1";
    let lr = random::<f64>(&[32, 9, 8], 1, -1.0, 1.0);
    let rf = random::<f64>(&[32, 9, 8], 2, -1.0, 1.0);
    let Ok(att) = patchmatch::cross_frame_attention(&s, &cfg, prefix, g.constant(lr.clone()), g.constant(rf.clone()), None, false)
    else {
        return check("attention oracle", false, "attention failed".into());
    };
    let want = attention_oracle(&p, prefix, &lr, &rf, 2);
    let got = g.value(att.at);
    let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rows = g.value(att.a_ref);
    let row_err = rows
        .as_slice()
        .unwrap()
        .chunks(9)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    check(
        "attention oracle",
        err < 1e-5 && row_err < 1e-5,
        format!("max error {err:.1e}, row-sum error {row_err:.1e} over 32 windows"),
    )
}

fn deformable() -> Check {
    let g = Graph::<f64>::inference();
    let x = g.constant(random(&[1, 3, 9, 11], 3, 0.0, 1.0));
    let w = g.constant(random(&[4, 3, 3, 3], 4, -0.5, 0.5));
    let b = g.constant(random(&[4], 5, -0.5, 0.5));
    let zero = g.constant(Tensor::zeros(IxDyn(&[1, 18, 9, 11])));
    let dense = g.value(g.conv2d(x, w, Some(b), 1, 1));
    let def = g.value(g.deform_conv2d(x, zero, w, Some(b)));
    let err = dense.iter().zip(def.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut shift = Tensor::zeros(IxDyn(&[1, 2, 9, 11]));
    shift.index_axis_mut(ndarray::Axis(1), 0).fill(1.0);
    let shifted = g.value(g.deform_conv2d(x, g.constant(shift), w, Some(b)));
    let xs = g.crop2d(x, 0, 1, 9, 10);
    let oracle = g.value(g.conv2d(xs, w, Some(b), 1, 1));
    let mut serr = 0.0f64;
    for o in 0..4 {
        for y in 1..8 {
            for xx in 1..9 {
                serr = serr.max((shifted[[0, o, y, xx]] - oracle[[0, o, y, xx]]).abs());
            }
        }
    }
    check("deformable sampling", err < 1e-6 && serr < 1e-6, format!("zero offsets {err:.1e}, unit shift {serr:.1e}"))
}

fn shape_ladder() -> Check {
    let cfg = small_config(Variant::Full);
    let Ok(model) = Model::new(cfg, 1) else {
        return check("shape ladder", false, "model construction failed".into());
    };
    let mut ok = true;
    let mut seen = Vec::new();
    for (h, w) in [(32, 48), (20, 35), (64, 16)] {
        let frames = toy::clip(7, 2, h, w);
        match model.infer(&frames[0], &frames[1]) {
            Ok(out) => {
                ok &= out.dims() == (h, w);
                seen.push(format!("{h}x{w}"));
            }
            Err(_) => ok = false,
        }
    }
    check("shape ladder", ok, format!("resolutions preserved: {}", seen.join(", ")))
}

/// L1 loss of the output cropped to `h x w`, and every parameter gradient.
pub fn cropped_loss<T: Float>(
    cfg: &ModelConfig,
    params: &BTreeMap<String, Tensor<T>>,
    inputs: &(Tensor<T>, Tensor<T>, Tensor<T>),
    want_grads: bool,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let g = if want_grads { Graph::new() } else { Graph::inference() };
    let s = Scope::bind(&g, params);
    let out = forward_graph(&s, cfg, g.constant(inputs.0.clone()), g.constant(inputs.1.clone()))?;
    let (h, w) = (inputs.2.shape()[2], inputs.2.shape()[3]);
    let loss = g.l1_loss(g.crop2d(out.output, 0, 0, h, w), g.constant(inputs.2.clone()));
    let value = g.value(loss).iter().next().unwrap().to_f64().unwrap();
    if !want_grads {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = g.backward(loss);
    let map = s
        .vars()
        .iter()
        .map(|(k, &v)| (k.clone(), grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).raw_dim()))))
        .collect();
    Ok((value, map))
}

/// Toy inputs `(lr, ref, gt)` of `size x size`, padded to the next multiple
/// of 16.
pub fn gradient_inputs<T: Float>(seed: u64, size: usize) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let frames = toy::clip(seed, 3, size, size);
    let lr = frames[0].blend(0.5, &frames[1], 0.5).expect("same size");
    let padded = size.div_ceil(16) * 16;
    (
        lr.pad_replicate(padded, padded).to_tensor(),
        frames[2].pad_replicate(padded, padded).to_tensor(),
        frames[1].to_tensor(),
    )
}

fn jittered<T: Float>(cfg: &ModelConfig, seed: u64) -> BTreeMap<String, Tensor<T>> {
    let mut store = ParamStore::init(&param_specs(cfg), seed);
    store.jitter(seed::derive(seed, &[1]), 0.05);
    store.cast::<T>()
}

/// Parameter tensors whose gradient is zero everywhere after one backward
/// pass on a `size x size` input.
pub fn dead_parameters<T: Float>(cfg: &ModelConfig, seed: u64, size: usize) -> Result<Vec<String>> {
    let (_, grads) = cropped_loss(cfg, &jittered::<T>(cfg, seed), &gradient_inputs::<T>(seed, size), true)?;
    Ok(grads.iter().filter(|(_, g)| g.iter().all(|v| *v == T::zero())).map(|(k, _)| k.clone()).collect())
}

#[derive(Clone, Debug)]
pub struct GradientReport {
    pub max_relative_error: f64,
    /// `(name, flat index, analytic, numeric)` per probed scalar.
    pub checked: Vec<(String, usize, f64, f64)>,
}

/// Compares analytic and central-difference gradients of `count` random
/// scalar parameters of a jittered model on an 8x8 input.
pub fn gradient_check<T: Float>(cfg: &ModelConfig, count: usize, seed: u64, eps: f64, floor: f64) -> Result<GradientReport> {
    let params = jittered::<T>(cfg, seed);
    let inputs = gradient_inputs::<T>(seed, 8);
    let (_, grads) = cropped_loss(cfg, &params, &inputs, true)?;
    let names: Vec<&String> = params.keys().collect();
    let mut rng = seed::rng(seed, &[seed::hash_str("gradient-check")]);
    let mut checked = Vec::new();
    let mut max_relative_error = 0.0f64;
    for _ in 0..count {
        let name = names[rng.random_range(0..names.len())];
        let idx = rng.random_range(0..params[name].len());
        let analytic = grads[name].as_slice().expect("standard layout")[idx].to_f64().unwrap();
        let numeric = central_difference(
            |t| {
                let mut p = params.clone();
                p.insert(name.clone(), t.clone());
                cropped_loss(cfg, &p, &inputs, false).map_or(f64::NAN, |r| r.0)
            },
            &params[name],
            idx,
            eps,
        );
        let err = relative_error(analytic, numeric, floor);
        max_relative_error = max_relative_error.max(if err.is_nan() { f64::INFINITY } else { err });
        checked.push((name.clone(), idx, analytic, numeric));
    }
    Ok(GradientReport { max_relative_error, checked })
}

fn gradients(precision64: bool) -> Check {
    let cfg = small_config(Variant::Full);
    let (res, tol) = if precision64 {
        (gradient_check::<f64>(&cfg, 20, 11, 1e-6, 1e-6), 1e-4)
    } else {
        (gradient_check::<f32>(&cfg, 20, 11, 1e-3, 1e-3), 5e-2)
    };
    let dead = dead_parameters::<f64>(&cfg, 11, 48);
    match (res, dead) {
        (Ok(r), Ok(dead)) => check(
            "gradient check",
            r.max_relative_error < tol && dead.is_empty(),
            format!(
                "{} 20 parameters, max relative error {:.1e} (tolerance {tol:.0e}), {} dead tensors",
                if precision64 { "64-bit," } else { "32-bit," },
                r.max_relative_error,
                dead.len()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => check("gradient check", false, e.to_string()),
    }
}

fn metric_oracles() -> Check {
    let a = ImageF::filled(16, 16, 128.0 / 255.0);
    let b = ImageF::filled(16, 16, 144.0 / 255.0);
    let p = psnr(&a, &b).unwrap_or(f64::NAN);
    let pat = toy::clip(3, 1, 16, 16).remove(0);
    let s = ssim(&pat, &pat).unwrap_or(f64::NAN);
    check("metric oracles", (p - 24.05).abs() < 0.01 && (s - 1.0).abs() < 1e-12, format!("psnr {p:.3} dB, ssim(x, x) {s:.6}"))
}

/// Runs every check; an unreadable checkpoint is an error rather than a
/// failed row.
pub fn run(precision64: bool, checkpoint: Option<&Path>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    if let Some(path) = checkpoint {
        let model = load_checkpoint(path)?.model()?;
        let frames = toy::clip(9, 2, 32, 32);
        let ok = model.infer(&frames[0], &frames[1]).is_ok();
        checks.push(check("checkpoint inference", ok, format!("{}", path.display())));
    }
    checks.push(warp_identity());
    checks.push(reconstruction_endpoints());
    checks.push(attention());
    checks.push(deformable());
    checks.push(shape_ladder());
    checks.push(gradients(precision64));
    checks.push(metric_oracles());
    Ok(checks)
}

pub fn render(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", c.name, c.detail));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let checks = run(true, None).unwrap();
        let table = render(&checks);
        assert!(checks.iter().all(|c| c.passed), "{table}");
        assert_eq!(table.lines().count(), checks.len());
    }
}
