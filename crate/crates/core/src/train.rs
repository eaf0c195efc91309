//! L1 training loop: a data thread feeds augmented batches through a bounded
//! queue to a single optimiser.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::time::Instant;

use hstr_tensor::{Float, Graph, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_for, save_checkpoint, Checkpoint};
use crate::config::{ModelConfig, Settings};
use crate::data::{load_frames, make_training_sample, DataConfig, DatasetIndex, Entry, Layout};
use crate::error::{Error, Result};
use crate::image::ImageF;
use crate::network::{forward_graph, Model};
use crate::optim::{Adam, AdamState};
use crate::params::Scope;
use crate::seed;

/// Mean absolute difference over all pixels and channels.
pub fn l1_loss(pred: &ImageF, gt: &ImageF) -> Result<f64> {
    pred.same_dims(gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
    Ok(sum / pred.data().len() as f64)
}

/// L1 loss of the unclamped output and the gradient of every parameter.
pub fn loss_and_grads<T: Float>(
    cfg: &ModelConfig,
    params: &BTreeMap<String, Tensor<T>>,
    lr: Tensor<T>,
    reference: Tensor<T>,
    gt: Tensor<T>,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let g = Graph::new();
    let s = Scope::bind(&g, params);
    let out = forward_graph(&s, cfg, g.constant(lr), g.constant(reference))?;
    let loss = g.l1_loss(out.output, g.constant(gt));
    let value = g.value(loss).iter().next().map_or(f64::NAN, |v| v.to_f64().unwrap_or(f64::NAN));
    if !value.is_finite() {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = g.backward(loss);
    let map = s
        .vars()
        .iter()
        .map(|(k, &v)| {
            let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).raw_dim()));
            (k.clone(), t)
        })
        .collect();
    Ok((value, map))
}

/// Model plus optimiser state.
pub struct Trainer {
    pub model: Model,
    pub state: AdamState,
    pub adam: Adam,
}

impl Trainer {
    pub fn new(model: Model, adam: Adam) -> Self {
        let state = AdamState::new(&model.params);
        Self { model, state, adam }
    }

    /// One optimiser step on a batch; returns the loss before the update.
    /// A non-finite loss leaves the parameters untouched.
    pub fn step(&mut self, lr: &Tensor<f32>, reference: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
        let params = self.model.params.cast::<f32>();
        let (loss, grads) = loss_and_grads(&self.model.config, &params, lr.clone(), reference.clone(), gt.clone())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        self.adam.step(&mut self.model.params, &grads, &mut self.state)?;
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub final_path: PathBuf,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

struct Batch {
    step: u64,
    ids: Vec<String>,
    lr: Tensor<f32>,
    reference: Tensor<f32>,
    gt: Tensor<f32>,
}

/// Deterministic visiting order of one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[seed::hash_str("shuffle"), epoch as u64]));
    order
}

struct Producer<'a> {
    entries: &'a [Entry],
    data: &'a DataConfig,
    seed: u64,
    batch_size: usize,
    steps_per_epoch: usize,
    cache: Option<HashMap<usize, Vec<ImageF>>>,
}

impl Producer<'_> {
    fn batch(&mut self, step: u64, order: &[usize]) -> Result<Batch> {
        let epoch = step as usize / self.steps_per_epoch;
        let k = step as usize % self.steps_per_epoch;
        let picks = &order[k * self.batch_size..((k + 1) * self.batch_size).min(order.len())];
        let mut samples = Vec::with_capacity(picks.len());
        for &i in picks {
            let entry = &self.entries[i];
            let frames = match &mut self.cache {
                Some(cache) => {
                    if !cache.contains_key(&i) {
                        cache.insert(i, load_frames(entry)?);
                    }
                    cache[&i].clone()
                }
                None => load_frames(entry)?,
            };
            let mut rng = seed::rng(self.seed, &[seed::hash_str(&entry.id), epoch as u64]);
            samples.push(make_training_sample(&frames, &entry.id, &mut rng, self.data)?);
        }
        let lr: Vec<&ImageF> = samples.iter().map(|s| &s.lr).collect();
        let rf: Vec<&ImageF> = samples.iter().map(|s| &s.reference).collect();
        let gt: Vec<&ImageF> = samples.iter().filter_map(|s| s.gt.as_ref()).collect();
        Ok(Batch {
            step,
            ids: samples.iter().map(|s| format!("{}#{}", s.meta.sequence, s.meta.frame)).collect(),
            lr: ImageF::batch(&lr)?,
            reference: ImageF::batch(&rf)?,
            gt: ImageF::batch(&gt)?,
        })
    }

    fn run(mut self, start: u64, total: u64, tx: SyncSender<Result<Batch>>) {
        let mut order = (usize::MAX, Vec::new());
        for step in start..total {
            let epoch = step as usize / self.steps_per_epoch;
            if order.0 != epoch {
                order = (epoch, epoch_order(self.entries.len(), self.seed, epoch));
            }
            let item = self.batch(step, &order.1);
            let failed = item.is_err();
            if tx.send(item).is_err() || failed {
                return;
            }
        }
    }
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, rec: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Trains from scratch (or from `resume`) and writes `train_log.jsonl`,
/// `epoch_log.jsonl`, periodic `ckpt_<step>.tar` and `final.tar` into `out`.
pub fn train(settings: &Settings, index: &DatasetIndex, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    settings.validate()?;
    if index.is_empty() {
        return Err(Error::Data("training index is empty".into()));
    }
    if index.layout != Layout::Septuplet {
        return Err(Error::Data(format!("training needs a septuplet index, got {}", index.layout)));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let tc = &settings.train;
    let adam = Adam::from_config(tc);
    let (mut tr, start) = match resume {
        Some(path) => {
            let ck = load_for(path, &settings.model)?;
            if ck.config != settings.model {
                return Err(Error::Config(format!("{}: model configuration differs from the run's", path.display())));
            }
            if ck.seed != settings.seed {
                warn!("resuming a run started with seed {} under seed {}", ck.seed, settings.seed);
            }
            let model = ck.model()?;
            let state = ck.optimizer.clone().unwrap_or_else(|| AdamState::new(&model.params));
            (Trainer { model, state, adam }, ck.step)
        }
        None => (Trainer::new(Model::new(settings.model.clone(), settings.seed)?, adam), 0),
    };
    let n = index.len();
    let spe = n.div_ceil(tc.batch_size);
    let mut total = (tc.epochs * spe) as u64;
    if let Some(m) = tc.max_steps {
        total = total.min(m as u64);
    }
    info!("training {} for {} steps ({spe} per epoch) from step {start}", settings.model.variant, total);

    let log_path = out.join("train_log.jsonl");
    let epoch_path = out.join("epoch_log.jsonl");
    let mut log = open_log(&log_path, resume.is_some())?;
    let mut epoch_log = open_log(&epoch_path, resume.is_some())?;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut epoch_losses = Vec::new();

    let producer = Producer {
        entries: &index.entries,
        data: &settings.data,
        seed: settings.seed,
        batch_size: tc.batch_size,
        steps_per_epoch: spe,
        cache: tc.cache_frames.then(HashMap::new),
    };
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel(tc.queue_depth);
        scope.spawn(move || producer.run(start, total, tx));
        for item in rx {
            let batch = item?;
            let t0 = Instant::now();
            let loss = tr.step(&batch.lr, &batch.reference, &batch.gt).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at step {} (samples {})", batch.step, batch.ids.join(", "))),
                other => other,
            })?;
            let rec = StepRecord { step: batch.step + 1, loss, ms: t0.elapsed().as_secs_f64() * 1e3 };
            write_line(&mut log, &log_path, &rec)?;
            steps.push(rec);
            epoch_losses.push(loss);
            let done = batch.step + 1;
            if done % spe as u64 == 0 || done == total {
                let rec = EpochRecord {
                    epoch: batch.step as usize / spe,
                    mean_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64,
                    steps: epoch_losses.len(),
                };
                write_line(&mut epoch_log, &epoch_path, &rec)?;
                epochs.push(rec);
                epoch_losses.clear();
            }
            if tc.checkpoint_interval > 0 && done % tc.checkpoint_interval as u64 == 0 && done != total {
                let ck = Checkpoint::from_model(&tr.model, done, settings.seed, Some(tr.state.clone()));
                save_checkpoint(&ck, &out.join(format!("ckpt_{done:08}.tar")))?;
            }
        }
        Ok(())
    })?;
    let step = start.max(steps.last().map_or(0, |r| r.step));
    let checkpoint = Checkpoint::from_model(&tr.model, step, settings.seed, Some(tr.state.clone()));
    let final_path = out.join("final.tar");
    save_checkpoint(&checkpoint, &final_path)?;
    Ok(TrainSummary { checkpoint, final_path, steps, epochs })
}
