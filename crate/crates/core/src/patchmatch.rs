//! Cross-frame windowed attention between LR and REF token grids.
//!
//! Tokens live in `[N, H, W, d]` grids, one token per 4x4 pixel patch. Each
//! block attends inside `w x w` windows (every second block cyclically
//! shifted), in both directions: REF correspondences for LR queries and LR
//! correspondences for REF queries. The LR stream output is
//! `AT = A_lr (A_ref V_ref)`; the REF stream mirrors it.

use std::rc::Rc;

use hstr_tensor::{Float, Tensor, Var};
use ndarray::IxDyn;

use crate::config::PatchMatchConfig;
use crate::error::{Error, Result};
use crate::params::{Init, Scope, SpecList};

pub const GROUPS: usize = 3;
pub const BLOCKS_PER_GROUP: usize = 2;
/// Additive mask value for token pairs that may not attend to each other.
const MASKED: f64 = -1e9;

fn block_prefix(group: usize, block: usize) -> String {
    format!("patchmatch.group{group}.block{block}")
}

/// The final block feeds only the last attention output; its feed-forward
/// layers, REF-stream update and LR values would have no consumer.
fn is_last(group: usize, block: usize) -> bool {
    group == GROUPS && block == BLOCKS_PER_GROUP
}

fn stream(cfg: &PatchMatchConfig, prefix: &str, name: &str) -> String {
    let name = if cfg.tie_qk { "lr" } else { name };
    format!("{prefix}.{name}")
}

pub fn declare(cfg: &PatchMatchConfig, specs: &mut SpecList) {
    let dims = cfg.dims();
    specs.conv("patchmatch.partition", 3, dims[0], cfg.patch);
    for group in 1..=GROUPS {
        let d = dims[group - 1];
        for block in 1..=BLOCKS_PER_GROUP {
            let p = block_prefix(group, block);
            let last = is_last(group, block);
            let streams: &[&str] = if cfg.tie_qk { &["lr"] } else { &["lr", "ref"] };
            for &st in streams {
                let sp = format!("{p}.{st}");
                specs.layer_norm(&format!("{sp}.norm1"), d);
                for m in ["q", "k", "v"] {
                    if m != "v" || !last || st == "ref" || cfg.tie_qk {
                        specs.linear(&format!("{sp}.{m}"), d, d, true);
                    }
                }
                if !last || st == "lr" {
                    specs.linear(&format!("{sp}.proj"), d, d, true);
                }
                if !last {
                    specs.layer_norm(&format!("{sp}.norm2"), d);
                    specs.linear(&format!("{sp}.fc1"), d, 2 * d, true);
                    specs.linear(&format!("{sp}.fc2"), 2 * d, d, true);
                }
            }
            if !cfg.raw_product {
                let side = 2 * cfg.window - 1;
                specs.push(format!("{p}.rel_bias"), &[side * side, cfg.heads], Init::Zeros);
            }
        }
        if group < GROUPS {
            specs.linear(&format!("patchmatch.merge{group}"), 4 * d, 2 * d, false);
        }
    }
}

/// Row of the relative-position table used by each (query, key) pair of a
/// row-major `w x w` window.
pub fn relative_index(window: usize) -> Vec<Option<usize>> {
    let n = window * window;
    let side = 2 * window - 1;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dy = (i / window) as isize - (j / window) as isize + window as isize - 1;
            let dx = (i % window) as isize - (j % window) as isize + window as isize - 1;
            out.push(Some(dy as usize * side + dx as usize));
        }
    }
    out
}

/// Region labels of the cyclically shifted partition of an `h x w` grid: for
/// each window (row-major) and token, pairs with different labels are masked.
pub fn shift_mask(h: usize, w: usize, window: usize, shift: usize) -> Vec<Vec<bool>> {
    let label = |v: usize, len: usize| {
        if v < len - window {
            0
        } else if v < len - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (h / window, w / window);
    let mut masks = Vec::with_capacity(nh * nw);
    for wy in 0..nh {
        for wx in 0..nw {
            let labels: Vec<usize> = (0..window * window)
                .map(|t| {
                    let (y, x) = (wy * window + t / window, wx * window + t % window);
                    label(y, h) * 3 + label(x, w)
                })
                .collect();
            let n = labels.len();
            masks.push((0..n * n).map(|k| labels[k / n] == labels[k % n]).collect());
        }
    }
    masks
}

pub struct Attention {
    /// LR-stream output `A_lr (A_ref V_ref)`, `[B, N, d]`.
    pub at: Var,
    /// REF-stream output `A_ref (A_lr V_lr)`, when requested.
    pub at_rev: Option<Var>,
    /// Normalised REF correspondences for LR queries, `[B, heads, N, N]`.
    pub a_ref: Var,
    /// Normalised LR correspondences for REF queries, `[B, heads, N, N]`.
    pub a_lr: Var,
}

fn split_heads<T: Float>(s: &Scope<T>, x: Var, heads: usize) -> Var {
    let g = s.g;
    let sh = g.shape(x);
    let (b, n, d) = (sh[0], sh[1], sh[2]);
    let x = g.reshape(x, &[b, n, heads, d / heads]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[b * heads, n, d / heads])
}

fn merge_heads<T: Float>(s: &Scope<T>, x: Var, b: usize, heads: usize) -> Var {
    let g = s.g;
    let sh = g.shape(x);
    let (n, dh) = (sh[1], sh[2]);
    let x = g.reshape(x, &[b, heads, n, dh]);
    let x = g.permute(x, &[0, 2, 1, 3]);
    g.reshape(x, &[b, n, heads * dh])
}

/// Attention between matching windows `lr` and `rf` (`[B, N, d]`, N = w^2).
///
/// `mask` holds one `N x N` allow-pattern per window position; the batch is
/// window-major within each image, so `B` must be a multiple of its length.
pub fn cross_frame_attention<T: Float>(
    s: &Scope<T>,
    cfg: &PatchMatchConfig,
    prefix: &str,
    lr: Var,
    rf: Var,
    mask: Option<&[Vec<bool>]>,
    reverse: bool,
) -> Result<Attention> {
    let g = s.g;
    let (ls, rs) = (g.shape(lr), g.shape(rf));
    if ls != rs || ls.len() != 3 {
        return Err(Error::Shape(format!("attention windows {ls:?} and {rs:?} differ")));
    }
    let (b, n, d) = (ls[0], ls[1], ls[2]);
    if n != cfg.window * cfg.window || d % cfg.heads != 0 {
        return Err(Error::Shape(format!("window of {n} tokens x {d} for window {} and {} heads", cfg.window, cfg.heads)));
    }
    let heads = cfg.heads;
    let (pl, pr) = (stream(cfg, prefix, "lr"), stream(cfg, prefix, "ref"));
    let proj = |p: &str, m: &str, x: Var| split_heads(s, s.linear(&format!("{p}.{m}"), x), heads);
    let (ql, kl) = (proj(&pl, "q", lr), proj(&pl, "k", lr));
    let (qr, kr, vr) = (proj(&pr, "q", rf), proj(&pr, "k", rf), proj(&pr, "v", rf));

    let mask_tensor = |allowed: f64, blocked: f64| -> Option<Tensor<T>> {
        let m = mask?;
        let nw = m.len();
        assert!(b % nw == 0, "batch {b} is not a multiple of {nw} windows");
        Some(Tensor::from_shape_fn(IxDyn(&[b / nw, nw, heads, n, n]), |i| {
            T::of(if m[i[1]][i[3] * n + i[4]] { allowed } else { blocked })
        }))
    };
    let normalise = |scores: Var| -> Var {
        let scores = g.reshape(scores, &[b, heads, n, n]);
        if cfg.raw_product {
            return match mask_tensor(1.0, 0.0) {
                Some(m) => {
                    let sh = g.reshape(scores, m.shape());
                    let masked = g.mul_const(sh, m);
                    g.reshape(masked, &[b, heads, n, n])
                }
                None => scores,
            };
        }
        let scores = g.scale(scores, 1.0 / ((d / heads) as f64).sqrt());
        let table = s.p(&format!("{prefix}.rel_bias"));
        let bias = g.gather_rows(table, Rc::new(relative_index(cfg.window)));
        let bias = g.permute(g.reshape(bias, &[n, n, heads]), &[2, 0, 1]);
        let mut scores = g.add(scores, bias);
        if let Some(m) = mask_tensor(0.0, MASKED) {
            let sh = g.reshape(scores, m.shape());
            let c = g.constant(m);
            scores = g.reshape(g.add(sh, c), &[b, heads, n, n]);
        }
        g.softmax(scores)
    };
    let a_ref = normalise(g.matmul(ql, kr, false, true));
    let a_lr = normalise(g.matmul(qr, kl, false, true));
    let flat = |a: Var| g.reshape(a, &[b * heads, n, n]);
    let (fr, fl) = (flat(a_ref), flat(a_lr));
    let at = g.matmul(fl, g.matmul(fr, vr, false, false), false, false);
    let at = merge_heads(s, at, b, heads);
    let at_rev = reverse.then(|| {
        let vl = proj(&pl, "v", lr);
        let t = g.matmul(fr, g.matmul(fl, vl, false, false), false, false);
        merge_heads(s, t, b, heads)
    });
    Ok(Attention { at, at_rev, a_ref, a_lr })
}

fn pad_grid<T: Float>(s: &Scope<T>, x: Var, hp: usize, wp: usize) -> Var {
    let g = s.g;
    let sh = g.shape(x);
    let (n, h, w, d) = (sh[0], sh[1], sh[2], sh[3]);
    let mut x = x;
    if hp > h {
        let z = g.constant(Tensor::zeros(IxDyn(&[n, hp - h, w, d])));
        x = g.concat(&[x, z], 1);
    }
    if wp > w {
        let z = g.constant(Tensor::zeros(IxDyn(&[n, hp, wp - w, d])));
        x = g.concat(&[x, z], 2);
    }
    x
}

/// Rolls `axis` by `-k` (towards lower indices) or back.
fn roll<T: Float>(s: &Scope<T>, x: Var, axis: usize, k: usize, back: bool) -> Var {
    let g = s.g;
    let len = g.shape(x)[axis];
    let k = if back { len - k } else { k };
    if k == 0 || k == len {
        return x;
    }
    g.concat(&[g.narrow(x, axis, k, len - k), g.narrow(x, axis, 0, k)], axis)
}

fn partition<T: Float>(s: &Scope<T>, x: Var, w: usize) -> Var {
    let g = s.g;
    let sh = g.shape(x);
    let (n, hp, wp, d) = (sh[0], sh[1], sh[2], sh[3]);
    let x = g.reshape(x, &[n, hp / w, w, wp / w, w, d]);
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5]);
    g.reshape(x, &[n * (hp / w) * (wp / w), w * w, d])
}

fn unpartition<T: Float>(s: &Scope<T>, x: Var, n: usize, hp: usize, wp: usize, w: usize) -> Var {
    let g = s.g;
    let d = g.shape(x)[2];
    let x = g.reshape(x, &[n, hp / w, wp / w, w, w, d]);
    let x = g.permute(x, &[0, 1, 3, 2, 4, 5]);
    g.reshape(x, &[n, hp, wp, d])
}

pub struct WindowedOutput {
    pub at: Var,
    pub at_rev: Option<Var>,
    pub attention: Attention,
}

/// Windowed cross attention over whole grids `[N, H, W, d]`: zero-pad to the
/// window multiple, optionally shift, attend per window, undo both.
pub fn windowed_attention<T: Float>(
    s: &Scope<T>,
    cfg: &PatchMatchConfig,
    prefix: &str,
    lr: Var,
    rf: Var,
    shifted: bool,
    reverse: bool,
) -> Result<WindowedOutput> {
    let g = s.g;
    let sh = g.shape(lr);
    let (n, h, w) = (sh[0], sh[1], sh[2]);
    let ws = cfg.window;
    let (hp, wp) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
    let shift = if shifted { ws / 2 } else { 0 };
    let prep = |x: Var| {
        let x = pad_grid(s, x, hp, wp);
        let x = roll(s, roll(s, x, 1, shift, false), 2, shift, false);
        partition(s, x, ws)
    };
    let mask = (shift > 0).then(|| shift_mask(hp, wp, ws, shift));
    let att = cross_frame_attention(s, cfg, prefix, prep(lr), prep(rf), mask.as_deref(), reverse)?;
    let restore = |x: Var| {
        let x = unpartition(s, x, n, hp, wp, ws);
        let x = roll(s, roll(s, x, 1, shift, true), 2, shift, true);
        let x = if hp > h { g.narrow(x, 1, 0, h) } else { x };
        if wp > w {
            g.narrow(x, 2, 0, w)
        } else {
            x
        }
    };
    Ok(WindowedOutput { at: restore(att.at), at_rev: att.at_rev.map(restore), attention: att })
}

pub struct BlockOutput {
    pub lr: Var,
    pub rf: Var,
    /// Projected LR-stream attention output.
    pub pm: Var,
    pub attention: Attention,
}

fn feed_forward<T: Float>(s: &Scope<T>, p: &str, x: Var) -> Var {
    let g = s.g;
    let h = s.layer_norm(&format!("{p}.norm2"), x);
    let h = g.gelu(s.linear(&format!("{p}.fc1"), h));
    g.add(x, s.linear(&format!("{p}.fc2"), h))
}

/// Two-stage block on both streams: windowed cross attention with a residual
/// projection, then a per-token feed-forward layer with a residual.
pub fn patch_match_block<T: Float>(
    s: &Scope<T>,
    cfg: &PatchMatchConfig,
    group: usize,
    block: usize,
    lr: Var,
    rf: Var,
) -> Result<BlockOutput> {
    let g = s.g;
    let p = block_prefix(group, block);
    let last = is_last(group, block);
    let (pl, pr) = (stream(cfg, &p, "lr"), stream(cfg, &p, "ref"));
    let nl = s.layer_norm(&format!("{pl}.norm1"), lr);
    let nr = s.layer_norm(&format!("{pr}.norm1"), rf);
    let out = windowed_attention(s, cfg, &p, nl, nr, block % 2 == 0, !last)?;
    let pm = s.linear(&format!("{pl}.proj"), out.at);
    let lr1 = g.add(lr, pm);
    if last {
        return Ok(BlockOutput { lr: lr1, rf, pm, attention: out.attention });
    }
    let rev = out.at_rev.expect("reverse stream requested");
    let rf1 = g.add(rf, s.linear(&format!("{pr}.proj"), rev));
    Ok(BlockOutput {
        lr: feed_forward(s, &pl, lr1),
        rf: feed_forward(s, &pr, rf1),
        pm,
        attention: out.attention,
    })
}

/// Concatenates 2x2 neighbourhoods and projects `4d -> 2d`.
pub fn patch_merge<T: Float>(s: &Scope<T>, prefix: &str, x: Var) -> Var {
    let g = s.g;
    let sh = g.shape(x);
    let (n, h, w, d) = (sh[0], sh[1], sh[2], sh[3]);
    let (he, we) = (h.div_ceil(2) * 2, w.div_ceil(2) * 2);
    let x = pad_grid(s, x, he, we);
    let x = g.reshape(x, &[n, he / 2, 2, we / 2, 2, d]);
    let x = g.permute(x, &[0, 1, 3, 4, 2, 5]);
    let x = g.reshape(x, &[n, he / 2, we / 2, 4 * d]);
    s.linear(prefix, x)
}

/// `[N, 3, H, W]` image to a `[N, H/4, W/4, d]` token grid.
pub fn patch_partition<T: Float>(s: &Scope<T>, cfg: &PatchMatchConfig, img: Var) -> Result<Var> {
    let g = s.g;
    let sh = g.shape(img);
    if sh[2] % cfg.patch != 0 || sh[3] % cfg.patch != 0 {
        return Err(Error::Shape(format!("patch partition: {}x{} not divisible by {}", sh[2], sh[3], cfg.patch)));
    }
    let t = s.conv("patchmatch.partition", img, cfg.patch, 0);
    Ok(g.permute(t, &[0, 2, 3, 1]))
}

pub struct PatchMatchOutput {
    /// `PM_0..PM_2` as `[N, d, h, w]` maps at 1/4, 1/8 and 1/16 resolution.
    pub levels: Vec<Var>,
    /// Attention of every block, group-major.
    pub attention: Vec<Attention>,
}

pub fn run_patch_matching<T: Float>(s: &Scope<T>, cfg: &PatchMatchConfig, lr: Var, rf: Var) -> Result<PatchMatchOutput> {
    let g = s.g;
    let (ls, rs) = (g.shape(lr), g.shape(rf));
    if ls != rs {
        return Err(Error::Shape(format!("patch matching: LR {ls:?} and REF {rs:?} differ")));
    }
    if ls[2] % 16 != 0 || ls[3] % 16 != 0 {
        return Err(Error::Shape(format!("patch matching: {}x{} is not divisible by 16", ls[2], ls[3])));
    }
    let mut xl = patch_partition(s, cfg, lr)?;
    let mut xr = patch_partition(s, cfg, rf)?;
    let mut levels = Vec::with_capacity(GROUPS);
    let mut attention = Vec::with_capacity(GROUPS * BLOCKS_PER_GROUP);
    for group in 1..=GROUPS {
        if group > 1 {
            let m = format!("patchmatch.merge{}", group - 1);
            xl = patch_merge(s, &m, xl);
            xr = patch_merge(s, &m, xr);
        }
        let mut pm = None;
        for block in 1..=BLOCKS_PER_GROUP {
            let out = patch_match_block(s, cfg, group, block, xl, xr)?;
            xl = out.lr;
            xr = out.rf;
            pm = Some(out.pm);
            attention.push(out.attention);
        }
        levels.push(g.permute(pm.expect("blocks ran"), &[0, 3, 1, 2]));
    }
    Ok(PatchMatchOutput { levels, attention })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use hstr_tensor::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::params::ParamStore;

    fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(0.0..1.0))
    }

    fn params(cfg: &PatchMatchConfig, seed: u64) -> BTreeMap<String, Tensor<f32>> {
        let mut specs = SpecList::default();
        declare(cfg, &mut specs);
        ParamStore::init(&specs.0, seed).cast::<f32>()
    }

    #[test]
    fn pm_shape_ladder() {
        let cfg = PatchMatchConfig::default();
        let p = params(&cfg, 1);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[1, 3, 128, 128], 2));
        let b = g.constant(random(&[1, 3, 128, 128], 3));
        let out = run_patch_matching(&s, &cfg, a, b).unwrap();
        let shapes: Vec<_> = out.levels.iter().map(|&v| g.shape(v)).collect();
        assert_eq!(shapes, vec![vec![1, 48, 32, 32], vec![1, 96, 16, 16], vec![1, 192, 8, 8]]);
        assert!(out.levels.iter().all(|&v| g.value(v).iter().all(|x| x.is_finite())));
    }

    #[test]
    fn partition_rejects_and_constant_input() {
        let cfg = PatchMatchConfig::default();
        let p = params(&cfg, 1);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        assert!(patch_partition(&s, &cfg, g.constant(Tensor::zeros(IxDyn(&[1, 3, 130, 128])))).is_err());
        let t = patch_partition(&s, &cfg, g.constant(Tensor::from_elem(IxDyn(&[1, 3, 16, 16]), 0.3))).unwrap();
        let v = g.value(t);
        assert_eq!(v.shape(), &[1, 4, 4, 48]);
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..48 {
                    assert_eq!(v[[0, y, x, c]], v[[0, 0, 0, c]]);
                }
            }
        }
    }

    #[test]
    fn tied_identical_inputs_give_identical_correspondences() {
        let cfg = PatchMatchConfig { tie_qk: true, ..PatchMatchConfig::default() };
        let p = params(&cfg, 4);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[1, 3, 32, 48], 5));
        let out = run_patch_matching(&s, &cfg, a, a).unwrap();
        for att in &out.attention[..2] {
            let (r, l) = (g.value(att.a_ref), g.value(att.a_lr));
            for (x, y) in r.iter().zip(l.iter()) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn single_token_window_returns_values() {
        let cfg = PatchMatchConfig { window: 1, ..PatchMatchConfig::default() };
        let p = params(&cfg, 6);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[5, 1, 48], 7));
        let b = g.constant(random(&[5, 1, 48], 8));
        let att = cross_frame_attention(&s, &cfg, &block_prefix(1, 1), a, b, None, false).unwrap();
        assert!(g.value(att.a_ref).iter().all(|&v| v == 1.0));
        assert!(g.value(att.a_lr).iter().all(|&v| v == 1.0));
        let v = g.value(s.linear("patchmatch.group1.block1.ref.v", b));
        for (x, y) in g.value(att.at).iter().zip(v.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_projections_make_block_an_identity() {
        let cfg = PatchMatchConfig::default();
        let mut p = params(&cfg, 9);
        for (k, v) in p.iter_mut() {
            if k.contains(".proj.") || k.contains(".fc2.") {
                v.fill(0.0);
            }
        }
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[1, 6, 6, 48], 1));
        let b = g.constant(random(&[1, 6, 6, 48], 2));
        for block in 1..=2 {
            let out = patch_match_block(&s, &cfg, 1, block, a, b).unwrap();
            assert_eq!(*g.value(out.lr), *g.value(a));
            assert_eq!(*g.value(out.rf), *g.value(b));
        }
    }

    #[test]
    fn shifted_partition_on_six_by_six() {
        let masks = shift_mask(6, 6, 3, 1);
        assert_eq!(masks.len(), 4);
        // The top-left window lies wholly inside one region.
        assert!(masks[0].iter().all(|&m| m));
        // The bottom-right window mixes wrapped tokens from four regions.
        assert_eq!(masks[3].iter().filter(|&&m| m).count(), 4 * 4 + 2 * 2 + 2 * 2 + 1);
    }

    #[test]
    fn grid_padding_is_cropped() {
        let cfg = PatchMatchConfig::default();
        let p = params(&cfg, 2);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[1, 32, 32, 48], 3));
        let out = windowed_attention(&s, &cfg, &block_prefix(1, 2), a, a, true, true).unwrap();
        assert_eq!(g.shape(out.at), vec![1, 32, 32, 48]);
        assert_eq!(g.shape(out.attention.a_ref), vec![11 * 11, 1, 9, 9]);
    }

    #[test]
    fn merge_shapes_and_constant() {
        let cfg = PatchMatchConfig::default();
        let p = params(&cfg, 2);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let x = g.constant(Tensor::from_elem(IxDyn(&[1, 32, 32, 48]), 0.7));
        let m = patch_merge(&s, "patchmatch.merge1", x);
        assert_eq!(g.shape(m), vec![1, 16, 16, 96]);
        let v = g.value(m);
        assert!(v.iter().zip(v.iter().skip(96)).all(|(a, b)| a == b));
        let m2 = patch_merge(&s, "patchmatch.merge2", g.constant(Tensor::zeros(IxDyn(&[1, 16, 16, 96]))));
        assert_eq!(g.shape(m2), vec![1, 8, 8, 192]);
    }

    #[test]
    fn raw_mode_has_no_bias_and_no_normalisation() {
        let cfg = PatchMatchConfig { raw_product: true, ..PatchMatchConfig::default() };
        let mut specs = SpecList::default();
        declare(&cfg, &mut specs);
        assert!(specs.0.iter().all(|p| !p.name.ends_with("rel_bias")));
        let p = params(&cfg, 3);
        let g = Graph::inference();
        let s = Scope::bind(&g, &p);
        let a = g.constant(random(&[2, 9, 48], 1));
        let b = g.constant(random(&[2, 9, 48], 2));
        let att = cross_frame_attention(&s, &cfg, &block_prefix(1, 1), a, b, None, false).unwrap();
        let q = g.value(s.linear("patchmatch.group1.block1.lr.q", a));
        let k = g.value(s.linear("patchmatch.group1.block1.ref.k", b));
        let expect: f32 = (0..48).map(|c| q[[0, 0, c]] * k[[0, 0, c]]).sum();
        assert!((g.value(att.a_ref)[[0, 0, 0, 0]] - expect).abs() < 1e-4);
    }
}
