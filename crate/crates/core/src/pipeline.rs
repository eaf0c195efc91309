//! 4x temporal upsampling over frame sequences.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Entry, Layout};
use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::metrics::psnr;
use crate::network::{upsample_4x, Reconstructor};
use crate::resample::degrade_with;

pub const WINDOW: usize = 5;
pub const STRIDE: usize = 4;

/// First frame of each five-frame group.
pub fn window_starts(frames: usize) -> Result<Vec<usize>> {
    if frames < WINDOW {
        return Err(Error::Data(format!("sequence has {frames} frames, at least {WINDOW} are needed")));
    }
    Ok((0..=frames - WINDOW).step_by(STRIDE).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub group: usize,
    /// Zero-based index in the sequence.
    pub frame: usize,
    /// 0, 1, 2 for the frames after the first reference.
    pub position: usize,
    pub psnr: Option<f64>,
}

/// Cascade over one group: the outer frames of `hr` are references, the
/// three inner ones are degraded to form the LR inputs and kept as ground
/// truth.
pub fn upsample_group<M: Reconstructor + ?Sized>(
    model: &M,
    hr: &[ImageF],
    factor: usize,
    cubic_a: f64,
) -> Result<([ImageF; 3], [f64; 3])> {
    if hr.len() != WINDOW {
        return Err(Error::Data(format!("a group has {WINDOW} frames, got {}", hr.len())));
    }
    let lr: Vec<ImageF> = hr[1..4].iter().map(|f| degrade_with(f, factor, cubic_a)).collect::<Result<_>>()?;
    let out = upsample_4x(model, [&lr[0], &lr[1], &lr[2]], [&hr[0], &hr[4]])?;
    let scores = [psnr(&out[0], &hr[1])?, psnr(&out[1], &hr[2])?, psnr(&out[2], &hr[3])?];
    Ok((out, scores))
}

/// Slides the group window over `frames`, writes the generated frames as
/// `frame_%06d.png` and a `psnr.csv` into `out`.
pub fn upsample_sequence<M: Reconstructor + ?Sized>(
    model: &M,
    frames: &[ImageF],
    factor: usize,
    cubic_a: f64,
    out: &Path,
) -> Result<Vec<FrameRecord>> {
    let starts = window_starts(frames.len())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = Vec::new();
    for (group, &s) in starts.iter().enumerate() {
        let (imgs, scores) = upsample_group(model, &frames[s..s + WINDOW], factor, cubic_a)?;
        for (position, (img, score)) in imgs.iter().zip(scores).enumerate() {
            let frame = s + 1 + position;
            img.save_png(&out.join(format!("frame_{frame:06}.png")))?;
            records.push(FrameRecord { group, frame, position, psnr: Some(score) });
        }
    }
    let csv = out.join("psnr.csv");
    let mut text = String::from("group,frame,position,psnr\n");
    for r in &records {
        let p = r.psnr.map_or(String::new(), |v| format!("{v:.6}"));
        text.push_str(&format!("{},{},{},{p}\n", r.group, r.frame, r.position));
    }
    fs::write(&csv, text).map_err(|e| Error::io(&csv, e))?;
    Ok(records)
}

/// Septuplet cascade: frames 2 and 6 are references, 3 to 5 are generated.
pub fn septuplet_cascade<M: Reconstructor + ?Sized>(
    model: &M,
    entry: &Entry,
    factor: usize,
    cubic_a: f64,
) -> Result<[f64; 3]> {
    if entry.frames.len() != Layout::Septuplet.frame_count() {
        return Err(Error::Data(format!("{}: not a septuplet", entry.id)));
    }
    let hr: Vec<ImageF> = entry.frames[1..6].iter().map(|p| ImageF::load(p)).collect::<Result<_>>()?;
    Ok(upsample_group(model, &hr, factor, cubic_a)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PSNR_CAP;
    use crate::toy;

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_starts(5).unwrap(), vec![0]);
        assert_eq!(window_starts(9).unwrap(), vec![0, 4]);
        assert_eq!(window_starts(12).unwrap(), vec![0, 4]);
        assert_eq!(window_starts(13).unwrap(), vec![0, 4, 8]);
        assert!(window_starts(4).is_err());
    }

    #[test]
    fn static_sequence_with_reference_stub_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let frame = toy::clip(2, 1, 16, 16).remove(0);
        let frames = vec![frame.clone(); 9];
        let stub = |_: &ImageF, r: &ImageF| -> Result<ImageF> { Ok(r.clone()) };
        let recs = upsample_sequence(&stub, &frames, 4, -0.5, dir.path()).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs.iter().map(|r| r.frame).collect::<Vec<_>>(), vec![1, 2, 3, 5, 6, 7]);
        assert!(recs.iter().all(|r| r.psnr == Some(PSNR_CAP)));
        let back = ImageF::load(&dir.path().join("frame_000006.png")).unwrap();
        assert_eq!(back, frame.quantized());
        let csv = fs::read_to_string(dir.path().join("psnr.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
    }
}
