//! Protocol evaluation and latency benchmarking.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::MetricSpace;
use crate::data::{eval_targets, make_eval_sample, DataConfig, DatasetIndex, Layout};
use crate::error::{Error, Result};
use crate::metrics::{psnr_in, ssim_in};
use crate::network::Reconstructor;
use crate::toy;

pub const WARMUP: usize = 3;
pub const MIN_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sequence: String,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// The degraded input against ground truth.
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub device: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Layout,
    pub metric_space: MetricSpace,
    pub checkpoint: String,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_baseline_psnr: f64,
    pub mean_baseline_ssim: f64,
    pub samples: Vec<SampleMetrics>,
    /// Filled by `bench`; evaluation reports leave it empty so they stay
    /// reproducible.
    pub timing: Option<Timing>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs `model` over every target of every entry in index order.
pub fn evaluate<M: Reconstructor + ?Sized>(
    model: &M,
    index: &DatasetIndex,
    protocol: Layout,
    space: MetricSpace,
    data: &DataConfig,
    checkpoint: &str,
) -> Result<MetricsReport> {
    if index.is_empty() {
        return Err(Error::Data("evaluation index is empty".into()));
    }
    if index.layout != protocol {
        return Err(Error::Data(format!("protocol {protocol} does not match a {} index", index.layout)));
    }
    let mut samples = Vec::new();
    for entry in &index.entries {
        for t in eval_targets(entry, protocol) {
            let s = make_eval_sample(entry, protocol, t, data)?;
            let gt = s.gt.as_ref().expect("evaluation samples carry ground truth");
            let out = model.reconstruct(&s.lr, &s.reference)?;
            samples.push(SampleMetrics {
                sequence: s.meta.sequence.clone(),
                frame: s.meta.frame,
                psnr: psnr_in(space, &out, gt)?,
                ssim: ssim_in(space, &out, gt)?,
                baseline_psnr: psnr_in(space, &s.lr, gt)?,
                baseline_ssim: ssim_in(space, &s.lr, gt)?,
            });
        }
    }
    Ok(MetricsReport {
        protocol,
        metric_space: space,
        checkpoint: checkpoint.to_string(),
        count: samples.len(),
        mean_psnr: mean(samples.iter().map(|s| s.psnr)),
        mean_ssim: mean(samples.iter().map(|s| s.ssim)),
        mean_baseline_psnr: mean(samples.iter().map(|s| s.baseline_psnr)),
        mean_baseline_ssim: mean(samples.iter().map(|s| s.baseline_ssim)),
        samples,
        timing: None,
    })
}

/// Writes `report.json` and `per_sample.csv` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join("per_sample.csv");
    let mut text = String::from("sequence,frame,psnr,ssim,baseline_psnr,baseline_ssim\n");
    for s in &report.samples {
        text.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            s.sequence, s.frame, s.psnr, s.ssim, s.baseline_psnr, s.baseline_ssim
        ));
    }
    let mut f = fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&csv, e))?;
    Ok((json, csv))
}

/// Device descriptor from `HSTRNET_DEVICE`; only the CPU backend exists.
pub fn device() -> Result<String> {
    match std::env::var("HSTRNET_DEVICE") {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.trim().eq_ignore_ascii_case("cpu") || v.trim().is_empty() => Ok("cpu".into()),
        Ok(v) => Err(Error::Config(format!("HSTRNET_DEVICE={v:?} is not available; only \"cpu\" is supported"))),
    }
}

/// Mean, median and standard deviation of single-frame reconstruction time
/// after `WARMUP` untimed runs.
pub fn benchmark_latency<M: Reconstructor + ?Sized>(
    model: &M,
    height: usize,
    width: usize,
    iterations: usize,
) -> Result<Timing> {
    if iterations < MIN_ITERATIONS {
        return Err(Error::Config(format!("bench needs at least {MIN_ITERATIONS} iterations, got {iterations}")));
    }
    let device = device()?;
    let frames = toy::clip(0x5eed, 2, height, width);
    for _ in 0..WARMUP {
        model.reconstruct(&frames[0], &frames[1])?;
    }
    let mut ms = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        model.reconstruct(&frames[0], &frames[1])?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = mean(ms.iter().copied());
    let std_ms = (ms.iter().map(|v| (v - mean_ms).powi(2)).sum::<f64>() / ms.len() as f64).sqrt();
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    let median_ms = if n % 2 == 1 { ms[n / 2] } else { 0.5 * (ms[n / 2 - 1] + ms[n / 2]) };
    Ok(Timing { height, width, iterations, warmup: WARMUP, mean_ms, median_ms, std_ms, device })
}
