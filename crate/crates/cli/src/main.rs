use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use hstrnet::checkpoint::{load_checkpoint, load_for, Checkpoint};
use hstrnet::config::{MetricSpace, Settings};
use hstrnet::data::{index_dataset, sequence_dir, DatasetIndex, Layout};
use hstrnet::eval::{benchmark_latency, evaluate, write_report};
use hstrnet::metrics::psnr;
use hstrnet::network::Model;
use hstrnet::{pipeline, selftest, toy, train, ImageF};

#[derive(Parser, Debug)]
#[command(name = "hstrnet", version, about = "Reference-based video super-resolution")]
struct Cli {
    /// JSON settings file; a previous run's resolved_config.json also works.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.learning_rate=1e-4`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index a dataset directory, optionally generating a procedural corpus first.
    PrepareData(PrepareArgs),
    Train(TrainArgs),
    Eval(EvalArgs),
    /// Reconstruct one frame from an LR/REF pair.
    Infer(InferArgs),
    /// Cascade over five-frame groups of a frame sequence.
    Upsample4x(UpsampleArgs),
    Bench(BenchArgs),
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct PrepareArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "septuplet")]
    layout: Layout,
    /// Restrict the index to the ids listed one per line.
    #[arg(long)]
    list: Option<PathBuf>,
    /// Write this many procedural clips under the root first.
    #[arg(long)]
    toy: Option<usize>,
    #[arg(long, default_value_t = 96)]
    toy_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct TrainArgs {
    /// Index file or septuplet root; defaults to `train.train_index`.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Index file or dataset root; defaults to `eval.index`.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<Layout>,
    #[arg(long)]
    metric_space: Option<MetricSpace>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct InferArgs {
    #[arg(long)]
    lr: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct UpsampleArgs {
    /// Directory of `frame_<n>` images.
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
struct BenchArgs {
    /// Without a checkpoint a freshly initialised model is timed.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct SelftestArgs {
    /// Gradient checks in 64-bit with the tight tolerance.
    #[arg(long)]
    f64: bool,
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

struct Run {
    settings: Settings,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    /// Model settings came from the user rather than the defaults.
    model_explicit: bool,
}

impl Run {
    fn new(cli: &Cli) -> Result<Self> {
        let mut overrides = cli.overrides.clone();
        if let Some(seed) = cli.seed {
            overrides.push(format!("seed={seed}"));
        }
        let settings = Settings::resolve(cli.config.as_deref(), &overrides)?;
        let from_file = match &cli.config {
            Some(p) => fs::read_to_string(p).map(|t| t.contains("\"model\"")).unwrap_or(false),
            None => false,
        };
        let model_explicit = from_file || overrides.iter().any(|o| o.starts_with("model."));
        Ok(Self { settings, config: cli.config.clone(), overrides, model_explicit })
    }

    fn checkpoint(&mut self, path: &Path) -> Result<Checkpoint> {
        let ck = if self.model_explicit { load_for(path, &self.settings.model)? } else { load_checkpoint(path)? };
        self.settings.model = ck.config.clone();
        Ok(ck)
    }

    fn echo(&self, dir: &Path, command: &str, args: &impl serde::Serialize) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let record = json!({
            "run": {
                "command": command,
                "args": args,
                "config": self.config,
                "overrides": self.overrides,
            },
            "settings": self.settings,
        });
        let path = dir.join("resolved_config.json");
        fs::write(&path, serde_json::to_vec_pretty(&record)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn read_index(path: &Path, layout: Layout) -> Result<DatasetIndex> {
    if path.is_dir() {
        Ok(index_dataset(path, layout, None)?)
    } else {
        Ok(DatasetIndex::load(path)?)
    }
}

fn prepare(run: &Run, a: &PrepareArgs) -> Result<()> {
    if let Some(n) = a.toy {
        match a.layout {
            Layout::Septuplet => {
                toy::write_septuplets(&a.root, n, a.toy_size, run.settings.seed)?;
            }
            Layout::Sequence => {
                toy::write_sequences(&a.root, n, 9, a.toy_size, a.toy_size, run.settings.seed)?;
            }
            Layout::Triplet => bail!(hstrnet::Error::Config("procedural corpora exist for septuplet and sequence layouts".into())),
        }
    }
    let index = index_dataset(&a.root, a.layout, a.list.as_deref())?;
    run.echo(&a.out, "prepare-data", a)?;
    let path = a.out.join("index.json");
    index.save(&path)?;
    println!("indexed {} {} entries into {}", index.len(), a.layout, path.display());
    Ok(())
}

fn cmd_train(run: &Run, a: &TrainArgs) -> Result<()> {
    let src = a
        .index
        .clone()
        .or_else(|| run.settings.train.train_index.clone())
        .ok_or_else(|| hstrnet::Error::Config("no training index: pass --index or set train.train_index".into()))?;
    let index = read_index(&src, Layout::Septuplet)?;
    run.echo(&a.out, "train", a)?;
    let summary = train::train(&run.settings, &index, &a.out, a.resume.as_deref())?;
    if let (Some(first), Some(last)) = (summary.epochs.first(), summary.epochs.last()) {
        info!("epoch loss {:.5} -> {:.5}", first.mean_loss, last.mean_loss);
    }
    println!("{} steps, final checkpoint {}", summary.checkpoint.step, summary.final_path.display());
    Ok(())
}

fn cmd_eval(run: &mut Run, a: &EvalArgs) -> Result<()> {
    let protocol = a.protocol.unwrap_or(run.settings.eval.protocol);
    let space = a.metric_space.unwrap_or(run.settings.eval.metric_space);
    run.settings.eval.protocol = protocol;
    run.settings.eval.metric_space = space;
    let src = a
        .index
        .clone()
        .or_else(|| run.settings.eval.index.clone())
        .ok_or_else(|| hstrnet::Error::Config("no evaluation index: pass --index or set eval.index".into()))?;
    let index = read_index(&src, protocol)?;
    let ck = run.checkpoint(&a.ckpt)?;
    let model = ck.model()?;
    run.echo(&a.out, "eval", a)?;
    let report = evaluate(&model, &index, protocol, space, &run.settings.data, &ck.id())?;
    let (json, _) = write_report(&report, &a.out)?;
    println!(
        "{} samples: PSNR {:.3} dB (input {:.3} dB), SSIM {:.4}; report {}",
        report.count,
        report.mean_psnr,
        report.mean_baseline_psnr,
        report.mean_ssim,
        json.display()
    );
    Ok(())
}

fn cmd_infer(run: &mut Run, a: &InferArgs) -> Result<()> {
    let lr = ImageF::load(&a.lr)?;
    let reference = ImageF::load(&a.reference)?;
    lr.same_dims(&reference)
        .with_context(|| format!("{} and {} differ in size", a.lr.display(), a.reference.display()))?;
    let model = run.checkpoint(&a.ckpt)?.model()?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    run.echo(dir, "infer", a)?;
    let out = model.infer(&lr, &reference)?;
    out.save_png(&a.out)?;
    println!("wrote {} ({}x{})", a.out.display(), out.width(), out.height());
    if let Some(gt) = &a.gt {
        let gt = ImageF::load(gt)?;
        println!("PSNR {:.3} dB", psnr(&out.quantized(), &gt)?);
    }
    Ok(())
}

fn cmd_upsample(run: &mut Run, a: &UpsampleArgs) -> Result<()> {
    let frames: Vec<ImageF> = sequence_dir(&a.sequence)?.iter().map(|p| ImageF::load(p)).collect::<Result<_, _>>()?;
    let model = run.checkpoint(&a.ckpt)?.model()?;
    run.echo(&a.out, "upsample4x", a)?;
    let data = &run.settings.data;
    let records = pipeline::upsample_sequence(&model, &frames, data.factor, data.cubic_a, &a.out)?;
    let mean = |pos: &[usize]| {
        let v: Vec<f64> = records.iter().filter(|r| pos.contains(&r.position)).filter_map(|r| r.psnr).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!(
        "{} frames written to {}; PSNR outer {:.3} dB, middle {:.3} dB",
        records.len(),
        a.out.display(),
        mean(&[0, 2]),
        mean(&[1])
    );
    Ok(())
}

fn cmd_bench(run: &mut Run, a: &BenchArgs) -> Result<()> {
    let b = &mut run.settings.bench;
    b.height = a.height.unwrap_or(b.height);
    b.width = a.width.unwrap_or(b.width);
    b.iterations = a.iterations.unwrap_or(b.iterations);
    let model = match &a.ckpt {
        Some(p) => run.checkpoint(p)?.model()?,
        None => Model::new(run.settings.model.clone(), run.settings.seed)?,
    };
    let b = run.settings.bench.clone();
    let timing = benchmark_latency(&model, b.height, b.width, b.iterations)?;
    if let Some(dir) = &a.out {
        run.echo(dir, "bench", a)?;
        let path = dir.join("bench.json");
        fs::write(&path, serde_json::to_vec_pretty(&timing)?).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{}x{} on {}: median {:.2} ms, mean {:.2} ms, std {:.2} ms over {} runs",
        timing.height, timing.width, timing.device, timing.median_ms, timing.mean_ms, timing.std_ms, timing.iterations
    );
    Ok(())
}

/// Returns whether every check passed.
fn cmd_selftest(a: &SelftestArgs) -> Result<bool> {
    let checks = selftest::run(a.f64, a.ckpt.as_deref())?;
    print!("{}", selftest::render(&checks));
    Ok(checks.iter().all(|c| c.passed))
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if let Command::Selftest(a) = &cli.command {
        return cmd_selftest(a);
    }
    let mut run = Run::new(cli)?;
    match &cli.command {
        Command::PrepareData(a) => prepare(&run, a)?,
        Command::Train(a) => cmd_train(&run, a)?,
        Command::Eval(a) => cmd_eval(&mut run, a)?,
        Command::Infer(a) => cmd_infer(&mut run, a)?,
        Command::Upsample4x(a) => cmd_upsample(&mut run, a)?,
        Command::Bench(a) => cmd_bench(&mut run, a)?,
        Command::Selftest(_) => unreachable!("handled above"),
    }
    Ok(true)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<hstrnet::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
