//! Dataset indexing, evaluation samples and the training augmentation recipe.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::resample::{degrade_with, resize_bicubic};

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Septuplet,
    Triplet,
    Sequence,
}

impl Layout {
    /// Frames an entry needs (minimum for sequences).
    pub fn frame_count(self) -> usize {
        match self {
            Layout::Septuplet => 7,
            Layout::Triplet => 3,
            Layout::Sequence => 5,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Septuplet => "septuplet",
            Layout::Triplet => "triplet",
            Layout::Sequence => "sequence",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "septuplet" => Ok(Layout::Septuplet),
            "triplet" => Ok(Layout::Triplet),
            "sequence" => Ok(Layout::Sequence),
            other => Err(Error::Config(format!("unknown layout {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    pub frames: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub layout: Layout,
    pub entries: Vec<Entry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: Self = serde_json::from_str(&text)?;
        if index.is_empty() {
            return Err(Error::Data(format!("{}: index has no entries", path.display())));
        }
        Ok(index)
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(p: &Path) -> &str {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("")
}

fn find_frame(files: &[PathBuf], name: &str) -> Option<PathBuf> {
    files.iter().find(|p| is_image(p) && stem(p) == name).cloned()
}

/// Numbered frames `frame_%06d` in ascending order.
fn sequence_frames(files: &[PathBuf]) -> Vec<PathBuf> {
    let mut frames: Vec<(u64, PathBuf)> = files
        .iter()
        .filter(|p| is_image(p))
        .filter_map(|p| stem(p).strip_prefix("frame_")?.parse().ok().map(|n| (n, p.clone())))
        .collect();
    frames.sort();
    frames.into_iter().map(|(_, p)| p).collect()
}

/// Numbered frames of one sequence directory.
pub fn sequence_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let frames = sequence_frames(&sorted_dir(dir)?);
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: no frame_<n> images", dir.display())));
    }
    Ok(frames)
}

/// Directories under `base` (inclusive) that hold at least one `im<k>` file.
fn clip_dirs(base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let files = sorted_dir(base)?;
    if files.iter().any(|p| is_image(p) && stem(p).starts_with("im")) {
        out.push(base.to_path_buf());
    }
    for p in files.iter().filter(|p| p.is_dir()) {
        clip_dirs(p, out)?;
    }
    Ok(())
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Scans `root` for the given layout. Septuplet and triplet clips are looked up
/// under `root/sequences` when it exists and under `root` otherwise; entry ids
/// are the clip paths relative to that base. `list` restricts the index to the
/// ids it names (one per line). Incomplete entries are skipped with a warning.
pub fn index_dataset(root: &Path, layout: Layout, list: Option<&Path>) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{}: dataset root does not exist", root.display())));
    }
    let filter = list.map(read_list).transpose()?;
    let mut entries = Vec::new();
    match layout {
        Layout::Septuplet | Layout::Triplet => {
            let nested = root.join("sequences");
            let base = if nested.is_dir() { nested } else { root.to_path_buf() };
            let mut dirs = Vec::new();
            clip_dirs(&base, &mut dirs)?;
            for dir in dirs {
                let id = dir
                    .strip_prefix(&base)
                    .expect("child of base")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                let files = sorted_dir(&dir)?;
                let frames: Vec<Option<PathBuf>> =
                    (1..=layout.frame_count()).map(|k| find_frame(&files, &format!("im{k}"))).collect();
                if frames.iter().any(Option::is_none) {
                    let found = frames.iter().filter(|f| f.is_some()).count();
                    warn!("skipping {}: {found} of {} frames present", dir.display(), layout.frame_count());
                    continue;
                }
                entries.push(Entry { id, frames: frames.into_iter().flatten().collect() });
            }
        }
        Layout::Sequence => {
            for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
                let id = dir.file_name().expect("named").to_string_lossy().into_owned();
                let frames = sequence_frames(&sorted_dir(&dir)?);
                if frames.len() < layout.frame_count() {
                    warn!("skipping {}: {} frames, need at least {}", dir.display(), frames.len(), layout.frame_count());
                    continue;
                }
                entries.push(Entry { id, frames });
            }
        }
    }
    if let Some(keep) = filter {
        entries.retain(|e| keep.iter().any(|k| k == &e.id));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: no complete {layout} entries found", root.display())));
    }
    Ok(DatasetIndex { root: root.to_path_buf(), layout, entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sequence: String,
    /// One-based frame index of the target frame.
    pub frame: usize,
    /// Reference position relative to the target, -1 or +1.
    pub ref_offset: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub lr: ImageF,
    pub reference: ImageF,
    pub gt: Option<ImageF>,
    pub meta: SampleMeta,
}

/// Degradation and resizing settings shared by training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub factor: usize,
    pub cubic_a: f64,
    pub crop: usize,
    pub max_angle_deg: f64,
    pub flip_prob: f64,
    pub ref_prev_prob: f64,
    /// Frame-sequence inputs are resized to `[height, width]` first.
    pub sequence_size: Option<[usize; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            factor: 4,
            cubic_a: crate::resample::DEFAULT_CUBIC_A,
            crop: 128,
            max_angle_deg: 10.0,
            flip_prob: 0.2,
            ref_prev_prob: 0.5,
            sequence_size: Some([380, 672]),
        }
    }
}

/// Random draws shared by the target and reference frame of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augment {
    /// One-based target index in the septuplet.
    pub t: usize,
    pub ref_offset: i32,
    pub angle_deg: f64,
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

fn rotate_point(y: f64, x: f64, cy: f64, cx: f64, cos: f64, sin: f64) -> (f64, f64) {
    let (dy, dx) = (y - cy, x - cx);
    (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
}

impl Augment {
    /// Draws target, reference side, angle, crop window and flip. The crop is
    /// taken from the region where the rotated frame has no fill pixels when
    /// such a window exists.
    pub fn draw<R: Rng>(rng: &mut R, height: usize, width: usize, cfg: &DataConfig) -> Result<Self> {
        let c = cfg.crop;
        if height < c || width < c {
            return Err(Error::Data(format!("frames {height}x{width} smaller than crop {c}")));
        }
        let t = rng.random_range(2..=6);
        let ref_offset = if rng.random_bool(cfg.ref_prev_prob) { -1 } else { 1 };
        let angle_deg = if cfg.max_angle_deg > 0.0 {
            rng.random_range(-cfg.max_angle_deg..=cfg.max_angle_deg)
        } else {
            0.0
        };
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let (cy, cx) = ((height - 1) as f64 / 2.0, (width - 1) as f64 / 2.0);
        let valid = |top: usize, left: usize| {
            let (t, l) = (top as f64, left as f64);
            let e = (c - 1) as f64;
            [(t, l), (t, l + e), (t + e, l), (t + e, l + e)].iter().all(|&(y, x)| {
                let (sy, sx) = rotate_point(y, x, cy, cx, cos, sin);
                sy >= 0.0 && sy <= (height - 1) as f64 && sx >= 0.0 && sx <= (width - 1) as f64
            })
        };
        let mut window = None;
        for _ in 0..64 {
            let top = rng.random_range(0..=height - c);
            let left = rng.random_range(0..=width - c);
            if valid(top, left) {
                window = Some((top, left));
                break;
            }
        }
        let (top, left) = window.unwrap_or(((height - c) / 2, (width - c) / 2));
        let flip = rng.random_bool(cfg.flip_prob);
        Ok(Self { t, ref_offset, angle_deg, top, left, flip })
    }

    /// Rotates about the frame centre (bilinear, reflected borders), crops
    /// and optionally mirrors.
    pub fn apply(&self, img: &ImageF, crop: usize) -> ImageF {
        let (h, w) = img.dims();
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
        let out = ImageF::from_fn(crop, crop, |y, x, c| {
            let xx = if self.flip { crop - 1 - x } else { x };
            let (sy, sx) =
                rotate_point((self.top + y) as f64, (self.left + xx) as f64, cy, cx, cos, sin);
            bilinear_reflect(img, sy, sx, c)
        });
        out.clamped()
    }
}

fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    let period = 2.0 * m;
    let r = v.rem_euclid(period);
    if r > m {
        period - r
    } else {
        r
    }
}

fn bilinear_reflect(img: &ImageF, y: f64, x: f64, c: usize) -> f32 {
    let (h, w) = img.dims();
    let y = reflect(y, h);
    let x = reflect(x, w);
    let y0 = (y.floor() as usize).min(h - 1);
    let x0 = (x.floor() as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let v = (1.0 - fy) * ((1.0 - fx) * img.get(y0, x0, c) as f64 + fx * img.get(y0, x1, c) as f64)
        + fy * ((1.0 - fx) * img.get(y1, x0, c) as f64 + fx * img.get(y1, x1, c) as f64);
    v as f32
}

/// Builds one augmented training sample from a septuplet.
pub fn make_training_sample<R: Rng>(
    frames: &[ImageF],
    sequence: &str,
    rng: &mut R,
    cfg: &DataConfig,
) -> Result<Sample> {
    if frames.len() != 7 {
        return Err(Error::Data(format!("{sequence}: expected 7 frames, got {}", frames.len())));
    }
    for f in &frames[1..] {
        frames[0].same_dims(f)?;
    }
    let (h, w) = frames[0].dims();
    let aug = Augment::draw(rng, h, w, cfg)?;
    let r = (aug.t as i32 + aug.ref_offset) as usize;
    let gt = aug.apply(&frames[aug.t - 1], cfg.crop);
    let reference = aug.apply(&frames[r - 1], cfg.crop);
    let lr = degrade_with(&gt, cfg.factor, cfg.cubic_a)?;
    Ok(Sample {
        lr,
        reference,
        gt: Some(gt),
        meta: SampleMeta { sequence: sequence.to_string(), frame: aug.t, ref_offset: aug.ref_offset },
    })
}

pub fn load_frames(entry: &Entry) -> Result<Vec<ImageF>> {
    entry.frames.iter().map(|p| ImageF::load(p)).collect()
}

fn prepare_frame(img: ImageF, layout: Layout, cfg: &DataConfig) -> ImageF {
    match (layout, cfg.sequence_size) {
        (Layout::Sequence, Some([h, w])) if img.dims() != (h, w) => resize_bicubic(&img, h, w, cfg.cubic_a).clamped(),
        _ => img,
    }
}

/// The (target, reference) frame pair of an evaluation protocol, one-based.
/// `t` selects the target for frame sequences and is ignored otherwise.
pub fn eval_frames(entry: &Entry, layout: Layout, t: usize) -> Result<(usize, usize)> {
    let (target, reference) = match layout {
        Layout::Septuplet => (4, 5),
        Layout::Triplet => (2, 3),
        Layout::Sequence => (t, t + 1),
    };
    if target == 0 || reference > entry.frames.len() {
        return Err(Error::Data(format!(
            "{}: frame {target} with reference {reference} out of range for {} frames",
            entry.id,
            entry.frames.len()
        )));
    }
    Ok((target, reference))
}

/// Evaluation sample of a protocol; no augmentation.
pub fn make_eval_sample(entry: &Entry, layout: Layout, t: usize, cfg: &DataConfig) -> Result<Sample> {
    let (target, reference) = eval_frames(entry, layout, t)?;
    let gt = prepare_frame(ImageF::load(&entry.frames[target - 1])?, layout, cfg);
    let reference_img = prepare_frame(ImageF::load(&entry.frames[reference - 1])?, layout, cfg);
    gt.same_dims(&reference_img)?;
    let lr = degrade_with(&gt, cfg.factor, cfg.cubic_a)?;
    Ok(Sample {
        lr,
        reference: reference_img,
        gt: Some(gt),
        meta: SampleMeta { sequence: entry.id.clone(), frame: target, ref_offset: 1 },
    })
}

/// Targets evaluated for one entry: one per clip, every frame with a
/// successor for sequences.
pub fn eval_targets(entry: &Entry, layout: Layout) -> Vec<usize> {
    match layout {
        Layout::Septuplet => vec![4],
        Layout::Triplet => vec![2],
        Layout::Sequence => (1..entry.frames.len()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn write_clip(dir: &Path, n: usize, size: usize) {
        fs::create_dir_all(dir).unwrap();
        for k in 1..=n {
            let img = ImageF::from_fn(size, size, |y, x, c| ((y * 3 + x * 5 + c + k * 7) % 17) as f32 / 16.0);
            img.save_png(&dir.join(format!("im{k}.png"))).unwrap();
        }
    }

    fn frames(n: usize, size: usize) -> Vec<ImageF> {
        (0..n)
            .map(|k| ImageF::from_fn(size, size, |y, x, c| ((y * 3 + x * 5 + c + k * 7) % 17) as f32 / 16.0))
            .collect()
    }

    #[test]
    fn single_folder_is_one_septuplet() {
        let root = tempfile::tempdir().unwrap();
        write_clip(&root.path().join("clip"), 7, 8);
        let index = index_dataset(root.path(), Layout::Septuplet, None).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.entries[0].frames.len(), 7);
    }

    #[test]
    fn incomplete_folder_is_skipped() {
        let root = tempfile::tempdir().unwrap();
        write_clip(&root.path().join("a"), 6, 8);
        write_clip(&root.path().join("b"), 7, 8);
        let index = index_dataset(root.path(), Layout::Septuplet, None).unwrap();
        assert_eq!(index.entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["b"]);
        let only_bad = tempfile::tempdir().unwrap();
        write_clip(&only_bad.path().join("a"), 6, 8);
        assert!(index_dataset(only_bad.path(), Layout::Septuplet, None).is_err());
    }

    #[test]
    fn entries_sorted_lexicographically() {
        let root = tempfile::tempdir().unwrap();
        write_clip(&root.path().join("sequences/00002/0001"), 7, 8);
        write_clip(&root.path().join("sequences/00001/0001"), 7, 8);
        let index = index_dataset(root.path(), Layout::Septuplet, None).unwrap();
        let ids: Vec<_> = index.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["00001/0001", "00002/0001"]);
        let list = root.path().join("list.txt");
        fs::write(&list, "00002/0001\n").unwrap();
        let index = index_dataset(root.path(), Layout::Septuplet, Some(&list)).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.entries[0].id, "00002/0001");
    }

    #[test]
    fn sequence_layout_orders_frames_numerically() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("s1");
        fs::create_dir_all(&dir).unwrap();
        for k in [10, 2, 1, 3, 4] {
            ImageF::filled(4, 4, 0.5).save_png(&dir.join(format!("frame_{k:06}.png"))).unwrap();
        }
        let index = index_dataset(root.path(), Layout::Sequence, None).unwrap();
        let names: Vec<_> = index.entries[0].frames.iter().map(|p| stem(p).to_string()).collect();
        assert_eq!(names, ["frame_000001", "frame_000002", "frame_000003", "frame_000004", "frame_000010"]);
    }

    #[test]
    fn training_sample_is_seed_deterministic() {
        let f = frames(7, 40);
        let cfg = DataConfig { crop: 16, ..DataConfig::default() };
        let a = make_training_sample(&f, "x", &mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        let b = make_training_sample(&f, "x", &mut ChaCha8Rng::seed_from_u64(5), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lr.dims(), (16, 16));
        a.lr.validate().unwrap();
        a.reference.validate().unwrap();
        assert!((2..=6).contains(&a.meta.frame));
    }

    #[test]
    fn too_small_frames_rejected() {
        let f = frames(7, 12);
        let cfg = DataConfig { crop: 16, ..DataConfig::default() };
        assert!(make_training_sample(&f, "x", &mut ChaCha8Rng::seed_from_u64(0), &cfg).is_err());
    }

    #[test]
    fn shared_draws_align_target_and_reference() {
        // Identical target and reference frames must stay identical after
        // augmentation because every draw is shared.
        let img = frames(1, 48).remove(0);
        let all = vec![img; 7];
        let cfg = DataConfig { crop: 24, ..DataConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = make_training_sample(&all, "x", &mut rng, &cfg).unwrap();
            assert_eq!(s.gt.as_ref().unwrap(), &s.reference);
        }
    }

    #[test]
    fn zero_angle_crop_matches_plain_crop() {
        let img = frames(1, 20).remove(0);
        let aug = Augment { t: 4, ref_offset: 1, angle_deg: 0.0, top: 3, left: 5, flip: false };
        assert_eq!(aug.apply(&img, 8), img.crop(3, 5, 8, 8).unwrap());
        let flipped = Augment { flip: true, ..aug };
        assert_eq!(flipped.apply(&img, 8), img.crop(3, 5, 8, 8).unwrap().flip_horizontal());
    }

    #[test]
    fn reflection_fold() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(9.0, 5), 1.0);
    }

    #[test]
    fn eval_protocol_frames() {
        let e7 = Entry { id: "a".into(), frames: (1..=7).map(|k| PathBuf::from(format!("im{k}.png"))).collect() };
        assert_eq!(eval_frames(&e7, Layout::Septuplet, 0).unwrap(), (4, 5));
        let e3 = Entry { id: "b".into(), frames: e7.frames[..3].to_vec() };
        assert_eq!(eval_frames(&e3, Layout::Triplet, 0).unwrap(), (2, 3));
        let seq = Entry { id: "c".into(), frames: e7.frames[..5].to_vec() };
        assert_eq!(eval_frames(&seq, Layout::Sequence, 4).unwrap(), (4, 5));
        assert!(eval_frames(&seq, Layout::Sequence, 5).is_err());
        assert_eq!(eval_targets(&seq, Layout::Sequence), vec![1, 2, 3, 4]);
    }

    #[test]
    fn eval_sample_from_disk() {
        let root = tempfile::tempdir().unwrap();
        write_clip(&root.path().join("c"), 7, 16);
        let index = index_dataset(root.path(), Layout::Septuplet, None).unwrap();
        let s = make_eval_sample(&index.entries[0], Layout::Septuplet, 0, &DataConfig::default()).unwrap();
        let f = load_frames(&index.entries[0]).unwrap();
        assert_eq!(s.gt.as_ref().unwrap(), &f[3]);
        assert_eq!(s.reference, f[4]);
        assert_eq!(s.lr, crate::resample::degrade(&f[3], 4).unwrap());
    }
}
