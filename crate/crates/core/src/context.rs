//! Multi-scale context features of REF, aligned to LR by the forward flow.

use hstr_tensor::{Float, Var};

use crate::config::ContextConfig;
use crate::error::{Error, Result};
use crate::params::{Scope, SpecList};

pub const LEVELS: usize = 4;
const SLOPE: f64 = 0.2;

pub fn declare(cfg: &ContextConfig, deformable: bool, specs: &mut SpecList) {
    let mut c_in = 3;
    for (k, &c) in cfg.channels.iter().enumerate() {
        specs.conv(&format!("context.conv{k}"), c_in, c, 3);
        if deformable {
            specs.conv(&format!("context.deform{k}"), c, c, 3);
            if cfg.learned_offsets {
                specs.conv(&format!("context.offset{k}"), c + 2, 18, 3);
                specs.zero(&format!("context.offset{k}"));
            }
        }
        c_in = c;
    }
}

/// 2x2 average pooling with displacements halved.
pub fn downscale_flow<T: Float>(s: &Scope<T>, flow: Var) -> Result<Var> {
    let shape = s.g.shape(flow);
    if shape[2] % 2 != 0 || shape[3] % 2 != 0 {
        return Err(Error::Shape(format!("downscale_flow: odd size {}x{}", shape[2], shape[3])));
    }
    Ok(s.g.scale(s.g.avg_pool2(flow), 0.5))
}

/// Deformable 3x3 convolution whose taps are all displaced by `offsets`
/// (`[N, 2, H, W]`), optionally corrected per tap by a learned field.
pub fn deform_sample<T: Float>(s: &Scope<T>, prefix: &str, features: Var, offsets: Var, refine: Option<&str>) -> Var {
    let g = s.g;
    let offsets = match refine {
        Some(r) => {
            let delta = s.conv(r, g.concat(&[features, offsets], 1), 1, 1);
            g.add(g.repeat_channels(offsets, 9), delta)
        }
        None => offsets,
    };
    g.deform_conv2d(
        features,
        offsets,
        s.p(&format!("{prefix}.weight")),
        Some(s.p(&format!("{prefix}.bias"))),
    )
}

pub struct ContextOutput {
    pub levels: Vec<Var>,
    /// Unaligned features of each level.
    pub features: Vec<Var>,
}

pub fn extract_context<T: Float>(
    s: &Scope<T>,
    cfg: &ContextConfig,
    deformable: bool,
    reference: Var,
    flow_forward: Var,
) -> Result<ContextOutput> {
    let g = s.g;
    let (rs, fs) = (g.shape(reference), g.shape(flow_forward));
    if rs[2..] != fs[2..] || fs[1] != 2 {
        return Err(Error::Shape(format!("context: REF {rs:?} and flow {fs:?} disagree")));
    }
    if rs[2] % 16 != 0 || rs[3] % 16 != 0 {
        return Err(Error::Shape(format!("context: {}x{} is not divisible by 16", rs[2], rs[3])));
    }
    let (mut f, mut flow) = (reference, flow_forward);
    let mut levels = Vec::with_capacity(LEVELS);
    let mut features = Vec::with_capacity(LEVELS);
    for k in 0..LEVELS {
        f = g.leaky_relu(s.conv(&format!("context.conv{k}"), f, 2, 1), SLOPE);
        flow = downscale_flow(s, flow)?;
        let level = if deformable {
            let refine = cfg.learned_offsets.then(|| format!("context.offset{k}"));
            deform_sample(s, &format!("context.deform{k}"), f, flow, refine.as_deref())
        } else {
            g.warp(f, flow)
        };
        features.push(f);
        levels.push(level);
    }
    Ok(ContextOutput { levels, features })
}
