//! Coarse-to-fine bidirectional flow between LR and REF, and backward warping.
//!
//! Flow tensors are `[N, 4, H, W]`: `(dx, dy)` of LR->REF followed by `(dx, dy)`
//! of REF->LR, in pixels.

use hstr_tensor::{Float, Var};

use crate::config::MotionConfig;
use crate::error::{Error, Result};
use crate::params::{Scope, SpecList};

pub const BLOCKS: usize = 3;
const RES_LAYERS: usize = 8;
const SLOPE: f64 = 0.2;

pub fn declare(cfg: &MotionConfig, specs: &mut SpecList) {
    for b in 0..BLOCKS {
        let (i, c) = (cfg.in_channels(b), cfg.widths[b]);
        let p = format!("motion.block{b}");
        specs.conv(&format!("{p}.conv0"), i, c, 3);
        specs.conv(&format!("{p}.conv1"), c, c, 3);
        for r in 0..RES_LAYERS {
            specs.conv(&format!("{p}.res{r}"), c, c, 3);
        }
        specs.conv_transpose(&format!("{p}.deconv"), c, 4, 4);
        specs.zero(&format!("{p}.deconv"));
    }
}

pub struct BlockOutput {
    pub flow: Var,
    /// Spatial size of the map produced by the transposed convolution.
    pub coarse: (usize, usize),
}

/// One estimator block: prescale by `1/s`, two stride-2 convolutions, eight
/// more at constant width added back onto the second, a stride-2 transposed
/// convolution to four channels and bilinear interpolation to full size with
/// displacements scaled by `2s`.
pub fn motion_block<T: Float>(s: &Scope<T>, cfg: &MotionConfig, block: usize, x: Var) -> Result<BlockOutput> {
    let g = s.g;
    let shape = g.shape(x);
    let (c_in, h, w) = (shape[1], shape[2], shape[3]);
    let expected = cfg.in_channels(block);
    if c_in != expected {
        return Err(Error::Shape(format!("motion block {block} expects {expected} channels, got {c_in}")));
    }
    let scale = cfg.scales[block];
    if h % (4 * scale) != 0 || w % (4 * scale) != 0 {
        return Err(Error::Shape(format!("motion block {block}: {h}x{w} not divisible by {}", 4 * scale)));
    }
    let p = format!("motion.block{block}");
    let xs = if scale > 1 { g.resize_bilinear(x, h / scale, w / scale) } else { x };
    let a = g.leaky_relu(s.conv(&format!("{p}.conv0"), xs, 2, 1), SLOPE);
    let b = g.leaky_relu(s.conv(&format!("{p}.conv1"), a, 2, 1), SLOPE);
    let mut r = b;
    for i in 0..RES_LAYERS {
        r = g.leaky_relu(s.conv(&format!("{p}.res{i}"), r, 1, 1), SLOPE);
    }
    let sum = g.add(b, r);
    let coarse = s.conv_transpose(&format!("{p}.deconv"), sum, 2, 1, 0);
    let cs = g.shape(coarse);
    let up = g.resize_bilinear(coarse, h, w);
    let flow = g.scale(up, (2 * scale) as f64);
    Ok(BlockOutput { flow, coarse: (cs[2], cs[3]) })
}

/// First two channels of a bidirectional flow.
pub fn forward_flow<T: Float>(s: &Scope<T>, flow: Var) -> Var {
    s.g.narrow(flow, 1, 0, 2)
}

/// Last two channels of a bidirectional flow.
pub fn backward_flow<T: Float>(s: &Scope<T>, flow: Var) -> Var {
    s.g.narrow(flow, 1, 2, 2)
}

pub struct MotionOutput {
    pub flow: Var,
    /// REF warped towards LR with the final forward flow.
    pub warped: Var,
    /// Flow after each block.
    pub stages: Vec<Var>,
}

pub fn estimate_flow<T: Float>(s: &Scope<T>, cfg: &MotionConfig, lr: Var, reference: Var) -> Result<MotionOutput> {
    let g = s.g;
    let (ls, rs) = (g.shape(lr), g.shape(reference));
    if ls != rs {
        return Err(Error::Shape(format!("motion: LR {ls:?} and REF {rs:?} differ")));
    }
    if ls[2] % 16 != 0 || ls[3] % 16 != 0 {
        return Err(Error::Shape(format!("motion: {}x{} is not divisible by 16", ls[2], ls[3])));
    }
    let mut flow = motion_block(s, cfg, 0, g.concat(&[lr, reference], 1))?.flow;
    let mut stages = vec![flow];
    for b in 1..BLOCKS {
        let w = g.warp(reference, forward_flow(s, flow));
        let mut parts = vec![w, flow];
        if cfg.feed_frames {
            parts.extend([lr, reference]);
        }
        let delta = motion_block(s, cfg, b, g.concat(&parts, 1))?.flow;
        flow = g.add(flow, delta);
        stages.push(flow);
    }
    let warped = g.warp(reference, forward_flow(s, flow));
    Ok(MotionOutput { flow, warped, stages })
}
