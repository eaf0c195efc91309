//! Finite-difference checks of every differentiable operation, in f64.

use hstr_tensor::gradcheck::{central_difference, relative_error};
use hstr_tensor::{Graph, Tensor, Var};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-scale..scale))
}

/// Builds `sum(op(inputs) * weights)` and compares the analytic gradient of
/// every input against central differences at a handful of positions.
fn check<F>(inputs: Vec<Tensor<f64>>, op: F, tol: f64)
where
    F: Fn(&Graph<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |xs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> (f64, Tensor<f64>) {
        let g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let y = op(&g, &vars);
        let yv = g.value(y);
        let w = weights.cloned().unwrap_or_else(|| Tensor::ones(IxDyn(yv.shape())));
        ((&*yv * &w).sum(), w)
    };
    let (_, shape_probe) = eval(&inputs, None);
    let weights = random(shape_probe.shape(), &mut rng, 1.0);

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let y = op(&g, &vars);
    let grads = g.backward_from(y, weights.clone());

    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("input reached");
        let n = x.len();
        for _ in 0..6 {
            let idx = rng.random_range(0..n);
            let numeric = central_difference(
                |probe| {
                    let mut xs = inputs.clone();
                    xs[i] = probe.clone();
                    eval(&xs, Some(&weights)).0
                },
                x,
                idx,
                1e-6,
            );
            let a = analytic.as_slice().unwrap()[idx];
            let err = relative_error(a, numeric, 1e-6);
            assert!(err < tol, "input {i} index {idx}: analytic {a} numeric {numeric} (rel {err})");
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(stride, pad) in &[(1usize, 1usize), (2, 1), (4, 0)] {
        let inputs = vec![
            random(&[2, 3, 8, 8], &mut rng, 1.0),
            random(&[4, 3, 3, 3], &mut rng, 0.5),
            random(&[4], &mut rng, 0.5),
        ];
        let k = if stride == 4 { 4 } else { 3 };
        let mut inputs = inputs;
        if k == 4 {
            inputs[1] = random(&[4, 3, 4, 4], &mut rng, 0.5);
        }
        check(inputs, move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad), 1e-6);
    }
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![
        random(&[2, 3, 4, 5], &mut rng, 1.0),
        random(&[3, 2, 3, 3], &mut rng, 0.5),
        random(&[2], &mut rng, 0.5),
    ];
    check(inputs, |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1), 1e-6);
    let inputs = vec![
        random(&[1, 3, 4, 4], &mut rng, 1.0),
        random(&[3, 4, 4, 4], &mut rng, 0.5),
        random(&[4], &mut rng, 0.5),
    ];
    check(inputs, |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 0), 1e-6);
}

#[test]
fn warp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[2, 3, 8, 8], &mut rng, 1.0), random(&[2, 2, 8, 8], &mut rng, 2.3)];
    check(inputs, |g, v| g.warp(v[0], v[1]), 1e-5);
}

#[test]
fn deform_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for off_ch in [2usize, 18] {
        let inputs = vec![
            random(&[2, 3, 6, 7], &mut rng, 1.0),
            random(&[2, off_ch, 6, 7], &mut rng, 1.7),
            random(&[4, 3, 3, 3], &mut rng, 0.5),
            random(&[4], &mut rng, 0.5),
        ];
        check(inputs, |g, v| g.deform_conv2d(v[0], v[1], v[2], Some(v[3])), 1e-5);
    }
}

#[test]
fn resize_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(vec![random(&[1, 2, 8, 12], &mut rng, 1.0)], |g, v| g.resize_bilinear(v[0], 2, 3), 1e-7);
    check(vec![random(&[1, 2, 4, 6], &mut rng, 1.0)], |g, v| g.resize_bilinear(v[0], 16, 24), 1e-7);
    check(vec![random(&[2, 2, 6, 4], &mut rng, 1.0)], |g, v| g.avg_pool2(v[0]), 1e-7);
}

#[test]
fn matmul_gradients_all_transpositions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [3, 4, 2] } else { [3, 2, 4] };
        let b_shape = if tb { [3, 5, 4] } else { [3, 4, 5] };
        let inputs = vec![random(&a_shape, &mut rng, 1.0), random(&b_shape, &mut rng, 1.0)];
        check(inputs, move |g, v| g.matmul(v[0], v[1], ta, tb), 1e-7);
    }
}

#[test]
fn normalisation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    check(vec![random(&[4, 9], &mut rng, 2.0)], |g, v| g.softmax(v[0]), 1e-6);
    let inputs = vec![
        random(&[5, 6], &mut rng, 2.0),
        random(&[6], &mut rng, 1.0),
        random(&[6], &mut rng, 1.0),
    ];
    check(inputs, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), 1e-5);
    let inputs = vec![
        random(&[2, 3, 4], &mut rng, 1.0),
        random(&[5, 4], &mut rng, 1.0),
        random(&[5], &mut rng, 1.0),
    ];
    check(inputs, |g, v| g.linear(v[0], v[1], Some(v[2])), 1e-7);
}

#[test]
fn pointwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    check(vec![random(&[3, 5], &mut rng, 2.0)], |g, v| g.gelu(v[0]), 1e-6);
    check(vec![random(&[3, 5], &mut rng, 2.0)], |g, v| g.sigmoid(v[0]), 1e-6);
    check(vec![random(&[3, 5], &mut rng, 2.0)], |g, v| g.leaky_relu(v[0], 0.2), 1e-6);
    let inputs = vec![random(&[3, 5], &mut rng, 1.0), random(&[3, 5], &mut rng, 1.0)];
    check(inputs, |g, v| {
        let p = g.mul(v[0], v[1]);
        let s = g.sub(p, v[1]);
        g.add(s, v[0])
    }, 1e-7);
    let inputs = vec![random(&[2, 6], &mut rng, 1.0), random(&[2, 6], &mut rng, 1.0)];
    check(inputs, |g, v| g.l1_loss(v[0], v[1]), 1e-6);
}

#[test]
fn layout_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = vec![random(&[2, 3, 4], &mut rng, 1.0), random(&[2, 1, 4], &mut rng, 1.0)];
    check(inputs, |g, v| {
        let c = g.concat(&[v[0], v[1]], 1);
        let p = g.permute(c, &[2, 0, 1]);
        let r = g.reshape(p, &[8, 4]);
        g.narrow(r, 0, 1, 5)
    }, 1e-7);
    let idx = std::rc::Rc::new(vec![Some(1), None, Some(1), Some(3)]);
    check(vec![random(&[4, 3], &mut rng, 1.0)], move |g, v| g.gather_rows(v[0], idx.clone()), 1e-7);
}
