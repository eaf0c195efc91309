//! Encoder-decoder producing a residual and a blending mask, and the weighted
//! reconstruction `m * HR_w + (1 - m) * LR + R`.

use hstr_tensor::{Float, Var};

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::params::{Scope, SpecList};

/// Channel widths of the side inputs joining after each encoder stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideWidths {
    pub input: usize,
    pub context: [usize; 4],
    pub pm: Option<[usize; 3]>,
}

impl SideWidths {
    /// Width of the concatenation following encoder stage `k` (0-based).
    pub fn joined(&self, cfg: &FusionConfig, k: usize) -> usize {
        let pm = match (k, self.pm) {
            (1..=3, Some(p)) => p[k - 1],
            _ => 0,
        };
        cfg.down[k] + self.context[k] + pm
    }

    /// Input width of encoder stage `k`.
    pub fn encoder_in(&self, cfg: &FusionConfig, k: usize) -> usize {
        if k == 0 {
            self.input
        } else {
            self.joined(cfg, k - 1)
        }
    }

    /// Input width of decoder stage `k`: the previous decoder output joined
    /// with the matching pre-downsampling tensor.
    pub fn decoder_in(&self, cfg: &FusionConfig, k: usize) -> usize {
        if k == 0 {
            self.joined(cfg, 3)
        } else {
            cfg.up[k - 1] + self.joined(cfg, 3 - k)
        }
    }
}

pub fn declare(cfg: &FusionConfig, w: &SideWidths, specs: &mut SpecList) {
    for k in 0..4 {
        specs.conv(&format!("fusion.down{}", k + 1), w.encoder_in(cfg, k), cfg.down[k], 3);
    }
    for k in 0..4 {
        specs.conv_transpose(&format!("fusion.up{}", k + 1), w.decoder_in(cfg, k), cfg.up[k], 3);
    }
    specs.conv("fusion.final", cfg.up[3], 4, 3);
    specs.zero("fusion.final");
}

pub struct FusionOutput {
    /// `[N, 3, H, W]`, unbounded.
    pub residual: Var,
    /// `[N, 1, H, W]` in `[0, 1]`.
    pub mask: Var,
}

/// `inputs` are the encoder input frames (concatenated on channels);
/// `context` holds four levels at 1/2..1/16 and `pm` three at 1/4..1/16.
pub fn fuse<T: Float>(
    s: &Scope<T>,
    inputs: &[Var],
    context: &[Var],
    pm: Option<&[Var]>,
) -> Result<FusionOutput> {
    let g = s.g;
    if context.len() != 4 || pm.is_some_and(|p| p.len() != 3) {
        return Err(Error::Shape("fusion needs 4 context levels and 3 patch-matching levels".into()));
    }
    let x = g.concat(inputs, 1);
    let sh = g.shape(x);
    let (h, w) = (sh[2], sh[3]);
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Shape(format!("fusion: {h}x{w} is not divisible by 16")));
    }
    let check = |v: Var, k: usize, what: &str| -> Result<()> {
        let vs = g.shape(v);
        let expect = (h >> k, w >> k);
        if (vs[2], vs[3]) != expect || vs[0] != sh[0] {
            return Err(Error::Shape(format!(
                "fusion: {what} is {}x{}, expected {}x{}",
                vs[2], vs[3], expect.0, expect.1
            )));
        }
        Ok(())
    };
    let mut joined = Vec::with_capacity(4);
    let mut cur = x;
    for k in 0..4 {
        cur = g.relu(s.conv(&format!("fusion.down{}", k + 1), cur, 2, 1));
        check(context[k], k + 1, &format!("context level {k}"))?;
        let mut parts = vec![cur, context[k]];
        if let (Some(pm), 1..=3) = (pm, k) {
            check(pm[k - 1], k + 1, &format!("patch-matching level {}", k - 1))?;
            parts.push(pm[k - 1]);
        }
        cur = g.concat(&parts, 1);
        joined.push(cur);
    }
    for k in 0..4 {
        if k > 0 {
            cur = g.concat(&[cur, joined[3 - k]], 1);
        }
        cur = g.relu(s.conv_transpose(&format!("fusion.up{}", k + 1), cur, 2, 1, 1));
    }
    let out = s.conv("fusion.final", cur, 1, 1);
    let residual = g.narrow(out, 1, 0, 3);
    let mask = g.sigmoid(g.narrow(out, 1, 3, 1));
    Ok(FusionOutput { residual, mask })
}

/// Unclamped `m * hr_warped + (1 - m) * lr + residual` on graph values.
pub fn reconstruct_graph<T: Float>(s: &Scope<T>, hr_warped: Var, lr: Var, out: &FusionOutput) -> Var {
    let g = s.g;
    let m = g.repeat_channels(out.mask, 3);
    let one_minus = g.add_scalar(g.scale(m, -1.0), 1.0);
    let a = g.mul(m, hr_warped);
    let b = g.mul(one_minus, lr);
    g.add(g.add(a, b), out.residual)
}

/// Image form of the reconstruction, clamped to `[0, 1]`. `mask` is `H x W`
/// and `residual` `H x W x 3`, both row-major.
pub fn reconstruct(hr_warped: &ImageF, lr: &ImageF, residual: &[f32], mask: &[f32]) -> Result<ImageF> {
    hr_warped.same_dims(lr)?;
    let (h, w) = lr.dims();
    if residual.len() != h * w * 3 || mask.len() != h * w {
        return Err(Error::Shape("reconstruct: residual or mask size mismatch".into()));
    }
    let data = (0..h * w * 3)
        .map(|i| {
            let m = mask[i / 3];
            m * hr_warped.data()[i] + (1.0 - m) * lr.data()[i] + residual[i]
        })
        .collect();
    Ok(ImageF::new(h, w, data)?.clamped())
}
