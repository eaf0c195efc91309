//! Procedural clips for smoke tests and toy-scale training: textured scenes
//! under a sub-pixel global translation plus one independently moving disc.

use std::path::Path;

use rand::Rng;

use crate::data::{index_dataset, DatasetIndex, Layout};
use crate::error::Result;
use crate::image::ImageF;
use crate::seed;

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
    vx: f64,
    vy: f64,
    colour: [f64; 3],
}

/// A continuous scene; frame `k` samples it shifted by `k * velocity`.
pub struct Scene {
    waves: Vec<Wave>,
    discs: Vec<Disc>,
    base: [f64; 3],
    vx: f64,
    vy: f64,
}

impl Scene {
    pub fn random(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = seed::rng(seed, &[seed::hash_str("toy-scene")]);
        let waves = (0..5)
            .map(|i| {
                // Mix of coarse structure and detail near the LR cut-off.
                let period = if i < 2 { rng.random_range(12.0..32.0) } else { rng.random_range(3.0..7.0) };
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let f = std::f64::consts::TAU / period;
                Wave {
                    fx: f * theta.cos(),
                    fy: f * theta.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: std::array::from_fn(|_| rng.random_range(0.02..0.09)),
                }
            })
            .collect();
        let discs = (0..4)
            .map(|i| Disc {
                cx: rng.random_range(0.0..width as f64),
                cy: rng.random_range(0.0..height as f64),
                r: rng.random_range(5.0..14.0),
                vx: if i == 0 { rng.random_range(-2.0..2.0) } else { 0.0 },
                vy: if i == 0 { rng.random_range(-2.0..2.0) } else { 0.0 },
                colour: std::array::from_fn(|_| rng.random_range(0.1..0.9)),
            })
            .collect();
        Self {
            waves,
            discs,
            base: std::array::from_fn(|_| rng.random_range(0.35..0.65)),
            vx: rng.random_range(-1.5..1.5),
            vy: rng.random_range(-1.5..1.5),
        }
    }

    fn value(&self, y: f64, x: f64, k: f64, c: usize) -> f64 {
        let (sy, sx) = (y + k * self.vy, x + k * self.vx);
        let mut v = self.base[c];
        for w in &self.waves {
            v += w.amp[c] * (w.fx * sx + w.fy * sy + w.phase).sin();
        }
        for d in &self.discs {
            let (dx, dy) = (sx - d.cx - k * d.vx, sy - d.cy - k * d.vy);
            let dist = (dx * dx + dy * dy).sqrt() - d.r;
            let cover = 1.0 / (1.0 + (dist * 2.0).exp());
            v = v * (1.0 - cover) + d.colour[c] * cover;
        }
        v.clamp(0.0, 1.0)
    }

    pub fn frame(&self, k: usize, height: usize, width: usize) -> ImageF {
        ImageF::from_fn(height, width, |y, x, c| self.value(y as f64, x as f64, k as f64, c) as f32)
    }
}

/// `count` frames of one scene.
pub fn clip(seed: u64, count: usize, height: usize, width: usize) -> Vec<ImageF> {
    let scene = Scene::random(seed, height, width);
    (0..count).map(|k| scene.frame(k, height, width)).collect()
}

/// Writes `count` septuplets as `root/sequences/toy<k>/im1..im7.png` and
/// indexes them.
pub fn write_septuplets(root: &Path, count: usize, size: usize, seed: u64) -> Result<DatasetIndex> {
    for k in 0..count {
        let dir = root.join("sequences").join(format!("toy{k:03}"));
        for (i, f) in clip(seed::derive(seed, &[k as u64]), 7, size, size).iter().enumerate() {
            f.save_png(&dir.join(format!("im{}.png", i + 1)))?;
        }
    }
    index_dataset(root, Layout::Septuplet, None)
}

/// Writes `count` sequences of `frames` frames as `root/<name>/frame_%06d.png`.
pub fn write_sequences(root: &Path, count: usize, frames: usize, height: usize, width: usize, seed: u64) -> Result<DatasetIndex> {
    for k in 0..count {
        let dir = root.join(format!("seq{k:03}"));
        for (i, f) in clip(seed::derive(seed, &[k as u64, 1]), frames, height, width).iter().enumerate() {
            f.save_png(&dir.join(format!("frame_{i:06}.png")))?;
        }
    }
    index_dataset(root, Layout::Sequence, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_move_and_stay_in_range() {
        let c = clip(4, 3, 32, 40);
        assert_eq!(c.len(), 3);
        for f in &c {
            assert_eq!(f.dims(), (32, 40));
            f.validate().unwrap();
        }
        assert_ne!(c[0], c[1]);
        assert_eq!(clip(4, 3, 32, 40), c);
    }

    #[test]
    fn writes_indexable_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let idx = write_septuplets(dir.path(), 2, 32, 1).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.entries[0].id, "toy000");
        let seq = write_sequences(&dir.path().join("seq"), 1, 9, 16, 24, 1).unwrap();
        assert_eq!(seq.entries[0].frames.len(), 9);
    }
}
