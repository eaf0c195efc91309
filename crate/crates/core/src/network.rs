//! End-to-end model: motion, context, optional patch matching and fusion.

use hstr_tensor::{Float, Graph, Var};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::context::{self, ContextOutput};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionOutput, SideWidths};
use crate::image::ImageF;
use crate::motion::{self, MotionOutput};
use crate::params::{ParamSpec, ParamStore, Scope, SpecList};
use crate::patchmatch::{self, PatchMatchOutput};
use crate::seed;

pub fn side_widths(cfg: &ModelConfig) -> SideWidths {
    SideWidths {
        input: if cfg.variant == Variant::B { 9 } else { 6 },
        context: cfg.context.channels,
        pm: cfg.variant.patch_matching().then(|| cfg.patchmatch.dims()),
    }
}

/// Every parameter of a configuration, in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = SpecList::default();
    motion::declare(&cfg.motion, &mut specs);
    context::declare(&cfg.context, cfg.variant.deformable(), &mut specs);
    if cfg.variant.patch_matching() {
        patchmatch::declare(&cfg.patchmatch, &mut specs);
    }
    fusion::declare(&cfg.fusion, &side_widths(cfg), &mut specs);
    specs.0
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

pub struct ForwardOutput {
    /// Unclamped reconstruction `[N, 3, H, W]`.
    pub output: Var,
    pub motion: MotionOutput,
    pub context: ContextOutput,
    pub patchmatch: Option<PatchMatchOutput>,
    pub fusion: FusionOutput,
}

/// Graph forward pass on `[N, 3, H, W]` inputs with `H, W` divisible by 16.
pub fn forward_graph<T: Float>(s: &Scope<T>, cfg: &ModelConfig, lr: Var, reference: Var) -> Result<ForwardOutput> {
    let g = s.g;
    let motion = motion::estimate_flow(s, &cfg.motion, lr, reference)?;
    let fwd = motion::forward_flow(s, motion.flow);
    let context = context::extract_context(s, &cfg.context, cfg.variant.deformable(), reference, fwd)?;
    let patchmatch = if cfg.variant.patch_matching() {
        Some(patchmatch::run_patch_matching(s, &cfg.patchmatch, lr, reference)?)
    } else {
        None
    };
    let mut inputs = vec![motion.warped, lr];
    if cfg.variant == Variant::B {
        inputs.push(g.warp(lr, motion::backward_flow(s, motion.flow)));
    }
    let pm = patchmatch.as_ref().map(|p| p.levels.as_slice());
    let fusion = fusion::fuse(s, &inputs, &context.levels, pm)?;
    let output = fusion::reconstruct_graph(s, motion.warped, lr, &fusion);
    Ok(ForwardOutput { output, motion, context, patchmatch, fusion })
}

/// Bottom/right replication padding applied before the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadRecord {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadRecord {
    pub fn new(height: usize, width: usize, multiple: usize) -> Self {
        let ph = height.div_ceil(multiple) * multiple;
        let pw = width.div_ceil(multiple) * multiple;
        Self {
            height,
            width,
            padded_height: ph,
            padded_width: pw,
            top: 0,
            bottom: ph - height,
            left: 0,
            right: pw - width,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.bottom == 0 && self.right == 0
    }
}

/// Anything that maps an (LR, REF) pair to a high-resolution frame.
pub trait Reconstructor {
    fn reconstruct(&self, lr: &ImageF, reference: &ImageF) -> Result<ImageF>;
}

impl<F> Reconstructor for F
where
    F: Fn(&ImageF, &ImageF) -> Result<ImageF>,
{
    fn reconstruct(&self, lr: &ImageF, reference: &ImageF) -> Result<ImageF> {
        self(lr, reference)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Freshly initialised model; parameter streams derive from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&param_specs(&config), seed::derive(seed, &[seed::hash_str("init")]));
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_against(&param_specs(&config))?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Full-frame inference in 32-bit; pads to the configured multiple, crops
    /// back and clamps to `[0, 1]`.
    pub fn infer(&self, lr: &ImageF, reference: &ImageF) -> Result<ImageF> {
        Ok(self.infer_detailed(lr, reference)?.output)
    }

    pub fn infer_detailed(&self, lr: &ImageF, reference: &ImageF) -> Result<Inference> {
        lr.same_dims(reference)?;
        let (h, w) = lr.dims();
        let pad = PadRecord::new(h, w, self.config.pad_multiple);
        let (lp, rp) = if pad.is_identity() {
            (lr.clone(), reference.clone())
        } else {
            (
                lr.pad_replicate(pad.padded_height, pad.padded_width),
                reference.pad_replicate(pad.padded_height, pad.padded_width),
            )
        };
        let params = self.params.cast::<f32>();
        let g = Graph::<f32>::inference();
        let s = Scope::bind(&g, &params);
        let lt = g.constant(lp.to_tensor());
        let rt = g.constant(rp.to_tensor());
        let out = forward_graph(&s, &self.config, lt, rt)?;
        let crop = |img: ImageF| -> Result<ImageF> {
            if pad.is_identity() {
                Ok(img)
            } else {
                img.crop(0, 0, h, w)
            }
        };
        let raw = ImageF::from_tensor(&g.value(out.output), 0)?;
        let warped = ImageF::from_tensor(&g.value(out.motion.warped), 0)?;
        let mask = g.value(out.fusion.mask);
        let mask: Vec<f32> = (0..h * w).map(|i| mask[[0, 0, i / w, i % w]]).collect();
        let flow = g.value(out.motion.flow);
        let flow: Vec<[f32; 4]> = (0..h * w)
            .map(|i| std::array::from_fn(|c| flow[[0, c, i / w, i % w]]))
            .collect();
        Ok(Inference { output: crop(raw)?.clamped(), warped: crop(warped)?.clamped(), mask, flow, pad })
    }
}

impl Reconstructor for Model {
    fn reconstruct(&self, lr: &ImageF, reference: &ImageF) -> Result<ImageF> {
        self.infer(lr, reference)
    }
}

pub struct Inference {
    pub output: ImageF,
    /// REF warped by the estimated flow.
    pub warped: ImageF,
    /// Blending mask, row-major `H x W`.
    pub mask: Vec<f32>,
    /// Bidirectional flow per pixel.
    pub flow: Vec<[f32; 4]>,
    pub pad: PadRecord,
}

/// Two-stage cascade for 4x temporal upsampling: the outer frames come from
/// their nearest references, the middle one averages two predictions that
/// use the outer results as references.
pub fn upsample_4x<M: Reconstructor + ?Sized>(
    model: &M,
    lr: [&ImageF; 3],
    refs: [&ImageF; 2],
) -> Result<[ImageF; 3]> {
    for img in lr.iter().chain(refs.iter()) {
        lr[0].same_dims(img)?;
    }
    let prev = model.reconstruct(lr[0], refs[0])?;
    let next = model.reconstruct(lr[2], refs[1])?;
    let a = model.reconstruct(lr[1], &prev)?;
    let b = model.reconstruct(lr[1], &next)?;
    let mid = a.blend(0.5, &b, 0.5)?;
    if mid.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cascade produced a non-finite value".into()));
    }
    Ok([prev, mid, next])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MotionConfig;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig { variant, motion: MotionConfig { widths: [8, 8, 8], ..MotionConfig::default() }, ..ModelConfig::default() }
    }

    fn image(h: usize, w: usize, k: usize) -> ImageF {
        ImageF::from_fn(h, w, |y, x, c| ((y * 7 + x * 3 + c * 5 + k) % 19) as f32 / 18.0)
    }

    #[test]
    fn variant_ladder_param_counts() {
        let counts: Vec<usize> = [Variant::B, Variant::I, Variant::D, Variant::Full]
            .iter()
            .map(|&v| param_count(&ModelConfig::with_variant(v)))
            .collect();
        assert!(counts[1] <= counts[2] && counts[2] < counts[3], "{counts:?}");
        let specs = param_specs(&ModelConfig::with_variant(Variant::I));
        assert!(specs.iter().all(|p| !p.name.starts_with("patchmatch") && !p.name.contains("deform")));
    }

    #[test]
    fn output_shape_and_range_for_every_variant() {
        for v in [Variant::B, Variant::I, Variant::D, Variant::Full] {
            let m = Model::new(tiny(v), 3).unwrap();
            let out = m.infer(&image(32, 48, 0), &image(32, 48, 1)).unwrap();
            assert_eq!(out.dims(), (32, 48));
            out.validate().unwrap();
        }
    }

    #[test]
    fn initial_output_is_even_blend() {
        let m = Model::new(tiny(Variant::Full), 3).unwrap();
        let (lr, rf) = (image(16, 16, 0), image(16, 16, 1));
        let out = m.infer(&lr, &rf).unwrap();
        let expect = rf.blend(0.5, &lr, 0.5).unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn padding_path_crops_back() {
        let m = Model::new(tiny(Variant::I), 3).unwrap();
        let det = m.infer_detailed(&image(20, 35, 0), &image(20, 35, 1)).unwrap();
        assert_eq!(det.output.dims(), (20, 35));
        assert_eq!((det.pad.padded_height, det.pad.padded_width), (32, 48));
        let p = PadRecord::new(380, 672, 16);
        assert_eq!((p.padded_height, p.padded_width, p.bottom, p.right), (384, 672, 4, 0));
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Model::new(tiny(Variant::Full), 5).unwrap();
        let (lr, rf) = (image(32, 32, 2), image(32, 32, 3));
        assert_eq!(m.infer(&lr, &rf).unwrap(), m.infer(&lr, &rf).unwrap());
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let m = Model::new(tiny(Variant::I), 3).unwrap();
        let err = m.infer(&image(16, 16, 0), &image(16, 32, 0)).unwrap_err().to_string();
        assert!(err.contains("16x16") && err.contains("16x32"), "{err}");
    }

    #[test]
    fn cascade_with_stub_models() {
        let lr: Vec<ImageF> = (0..3).map(|k| image(8, 8, k)).collect();
        let refs: Vec<ImageF> = (3..5).map(|k| image(8, 8, k)).collect();
        let take_ref = |_: &ImageF, r: &ImageF| -> Result<ImageF> { Ok(r.clone()) };
        let out = upsample_4x(&take_ref, [&lr[0], &lr[1], &lr[2]], [&refs[0], &refs[1]]).unwrap();
        assert_eq!(out[0], refs[0]);
        assert_eq!(out[2], refs[1]);
        assert_eq!(out[1], refs[0].blend(0.5, &refs[1], 0.5).unwrap());
        let take_lr = |l: &ImageF, _: &ImageF| -> Result<ImageF> { Ok(l.clone()) };
        let out = upsample_4x(&take_lr, [&lr[0], &lr[1], &lr[2]], [&refs[0], &refs[1]]).unwrap();
        for k in 0..3 {
            assert_eq!(out[k], lr[k]);
        }
    }
}
