//! Minibatch training with Adam, evaluation and checkpoints.
//!
//! Each document gets its own autodiff graph. Per-document gradients are
//! summed in batch order, so results do not depend on the thread count.

mod adam;
mod checkpoint;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_document, ModelParams, Tdsm};
use crate::tensor::{Graph, Var};
use crate::text::{make_batches, Batch, DatasetStats, EncodedDocument};

pub use adam::{Adam, AdamConfig, StepReport};
pub use checkpoint::{read_tensors, write_tensors, Checkpoint, NamedTensor, FORMAT_VERSION, MAGIC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Worker threads for per-document gradients and evaluation.
    pub threads: usize,
    /// Stop once an epoch's train accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 128,
            epochs: 5,
            seed: 0,
            threads: 1,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        if let Some(t) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("target_train_accuracy must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, measured before each
    /// update.
    pub train_loss: f64,
    /// Fraction of training documents classified correctly before the
    /// update of their batch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub wall_time_secs: f64,
}

/// Loss, prediction and gradients of one document, scaled by `scale`.
struct DocPass {
    loss: f64,
    correct: bool,
    graph: Graph<f32>,
    vars: Vec<Var>,
}

fn doc_pass(model: &Tdsm<f32>, chars: &[u8], n_words: usize, label: usize, scale: f32) -> Result<DocPass> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, true)?;
    let l = model.config.word_len;
    let out = forward_document(&mut g, &model.config, &p, &chars[..n_words * l], &vec![true; n_words])?;
    let loss = g.cross_entropy(out.probs, &[label])?;
    let probs = g.value(out.probs).data();
    let correct = argmax(probs) == label;
    let loss_value = g.value(loss).data()[0] as f64;
    g.backward_with_seed(loss, &[scale])?;
    let vars = p.leaves().into_iter().copied().collect();
    Ok(DocPass {
        loss: loss_value,
        correct,
        graph: g,
        vars,
    })
}

pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn divergence(e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence(format!("non-finite value in {op}")),
        other => other,
    }
}

/// Summed statistics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchReport {
    pub loss_sum: f64,
    pub correct: usize,
    pub docs: usize,
    pub step: StepReport,
}

/// Owns the model and optimizer state.
pub struct Trainer {
    pub model: Tdsm<f32>,
    config: TrainConfig,
    adam: Adam<f32>,
    names: Vec<String>,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(model: Tdsm<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let named = model.params.named();
        let sizes: Vec<usize> = named.iter().map(|(_, t)| t.numel()).collect();
        let names = named.into_iter().map(|(n, _)| n).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", config.threads)))?;
        Ok(Trainer {
            adam: Adam::new(config.adam.clone(), &sizes),
            model,
            config,
            names,
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Mean-loss gradients of a batch, in canonical parameter order, plus
    /// the batch loss sum and correct count.
    pub fn batch_gradients(&self, batch: &Batch) -> Result<(ModelParams<Vec<f32>>, f64, usize)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let scale = 1.0 / b as f32;
        let mut sums: ModelParams<Vec<f32>> = self.model.params.map(|_, t| vec![0.0; t.numel()]);
        let (mut loss_sum, mut correct) = (0.0, 0);
        let chunk = self.config.threads.max(1);
        let docs: Vec<usize> = (0..b).collect();
        for group in docs.chunks(chunk) {
            let passes: Vec<Result<DocPass>> = self.pool.install(|| {
                group
                    .par_iter()
                    .map(|&i| {
                        let n = batch.n_words(i);
                        if n == 0 {
                            return Err(Error::EmptyDocument);
                        }
                        doc_pass(&self.model, batch.doc_chars(i), n, batch.labels[i], scale)
                    })
                    .collect()
            });
            // reduce in document order
            for pass in passes {
                let pass = pass.map_err(divergence)?;
                loss_sum += pass.loss;
                correct += usize::from(pass.correct);
                for (sum, &v) in sums.leaves_mut().into_iter().zip(&pass.vars) {
                    if let Some(grad) = pass.graph.grad(v) {
                        for (s, &d) in sum.iter_mut().zip(grad) {
                            *s += d;
                        }
                    }
                }
            }
        }
        Ok((sums, loss_sum, correct))
    }

    /// One Adam step on `batch`. Parameters are untouched on error.
    pub fn step(&mut self, batch: &Batch) -> Result<BatchReport> {
        let (grads, loss_sum, correct) = self.batch_gradients(batch)?;
        if !loss_sum.is_finite() {
            return Err(Error::Divergence("non-finite training loss".into()));
        }
        let names: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        let grad_refs: Vec<&[f32]> = grads.leaves().into_iter().map(|g| g.as_slice()).collect();
        let mut param_refs: Vec<&mut [f32]> = self
            .model
            .params
            .leaves_mut()
            .into_iter()
            .map(|t| t.data_mut())
            .collect();
        let step = self.adam.step(&names, &mut param_refs, &grad_refs)?;
        Ok(BatchReport {
            loss_sum,
            correct,
            docs: batch.len(),
            step,
        })
    }

    /// One pass over `train` in the epoch's shuffled order. Returns mean
    /// loss and accuracy.
    pub fn train_epoch(&mut self, train: &[EncodedDocument], stats: &DatasetStats, epoch: usize) -> Result<(f64, f64)> {
        let seed = epoch_seed(self.config.seed, epoch);
        let batches = make_batches(train, stats, self.config.batch_size, Some(seed))?;
        let (mut loss, mut correct, mut docs) = (0.0, 0, 0);
        for batch in batches {
            let r = self.step(&batch)?;
            loss += r.loss_sum;
            correct += r.correct;
            docs += r.docs;
        }
        if docs == 0 {
            return Err(Error::Config("no training documents".into()));
        }
        Ok((loss / docs as f64, correct as f64 / docs as f64))
    }

    pub fn evaluate(&self, docs: &[EncodedDocument]) -> Result<Evaluation> {
        self.pool.install(|| evaluate(&self.model, docs))
    }
}

/// Shuffle seed of an epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

/// Accuracy and confusion matrix. `confusion[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub n_docs: usize,
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn from_predictions(labels: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predicted.len() {
            return Err(Error::dim("evaluation", "label and prediction counts differ"));
        }
        if labels.is_empty() {
            return Err(Error::Config("cannot evaluate on zero documents".into()));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        let mut correct = 0;
        for (&l, &p) in labels.iter().zip(predicted) {
            if l >= classes || p >= classes {
                return Err(Error::Config(format!(
                    "class index {} outside the model's {classes} classes",
                    l.max(p) + 1
                )));
            }
            confusion[l][p] += 1;
            correct += usize::from(l == p);
        }
        Ok(Evaluation {
            accuracy: correct as f64 / labels.len() as f64,
            n_docs: labels.len(),
            confusion,
        })
    }
}

/// Predicted class of every document, computed in parallel on the current
/// rayon pool.
pub fn predict_all(model: &Tdsm<f32>, docs: &[EncodedDocument]) -> Result<Vec<usize>> {
    docs.par_iter()
        .map(|d| model.predict(d).map(|p| argmax(&p)))
        .collect()
}

pub fn evaluate(model: &Tdsm<f32>, docs: &[EncodedDocument]) -> Result<Evaluation> {
    let classes = model.config.classes;
    if let Some(d) = docs.iter().find(|d| d.label >= classes) {
        return Err(Error::Config(format!(
            "dataset has class {} but the model has {classes} classes",
            d.label + 1
        )));
    }
    let predicted = predict_all(model, docs)?;
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    Evaluation::from_predictions(&labels, &predicted, classes)
}

/// Datasets and statistics for a run.
pub struct TrainData<'a> {
    pub train: &'a [EncodedDocument],
    pub test: Option<&'a [EncodedDocument]>,
    pub stats: &'a DatasetStats,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_accuracy: Option<f64>,
    /// Set when training stopped at the train accuracy target.
    pub stopped_early: bool,
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(RunDir { dir })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
}

fn save(model: &Tdsm<f32>, epoch: usize, max_words: usize, path: &Path) -> Result<()> {
    Checkpoint {
        model: model.clone(),
        epoch,
        max_words,
    }
    .save(path)
}

/// Runs `config.epochs` epochs. Each epoch's metrics go to `on_epoch` and,
/// with a run directory, to `metrics.jsonl`; `last.ckpt` is rewritten after
/// every epoch and `best.ckpt` whenever the selection accuracy (test if
/// present, else train) improves. With zero epochs only the initial model is
/// saved. On divergence the previous checkpoints are left intact.
pub fn train(
    trainer: &mut Trainer,
    data: &TrainData<'_>,
    run: Option<&RunDir>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainSummary> {
    let max_words = data.stats.max_words;
    let mut log = match run {
        Some(r) => Some(File::create(r.metrics_path())?),
        None => None,
    };
    if let Some(r) = run {
        save(&trainer.model, 0, max_words, &r.last_checkpoint())?;
        save(&trainer.model, 0, max_words, &r.best_checkpoint())?;
    }
    let mut summary = TrainSummary {
        metrics: Vec::new(),
        best_epoch: None,
        best_accuracy: None,
        stopped_early: false,
    };
    let epochs = trainer.config.epochs;
    for epoch in 0..epochs {
        let start = Instant::now();
        let (train_loss, train_accuracy) = trainer.train_epoch(data.train, data.stats, epoch)?;
        let test_accuracy = match data.test {
            Some(test) if !test.is_empty() => Some(trainer.evaluate(test)?.accuracy),
            _ => None,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            train_accuracy,
            test_accuracy,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {} loss {:.5} train acc {:.4} test acc {:?}",
            m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy
        );
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
            f.flush()?;
        }
        on_epoch(&m);
        let selection = test_accuracy.unwrap_or(train_accuracy);
        if let Some(r) = run {
            save(&trainer.model, epoch + 1, max_words, &r.last_checkpoint())?;
            if summary.best_accuracy.is_none_or(|b| selection > b) {
                save(&trainer.model, epoch + 1, max_words, &r.best_checkpoint())?;
            }
        }
        if summary.best_accuracy.is_none_or(|b| selection > b) {
            summary.best_accuracy = Some(selection);
            summary.best_epoch = Some(epoch + 1);
        }
        summary.metrics.push(m);
        if let Some(target) = trainer.config.target_train_accuracy {
            if train_accuracy >= target {
                summary.stopped_early = true;
                break;
            }
        }
    }
    Ok(summary)
}

/// Encodes labeled text, dropping documents without words. Returns the
/// kept documents and the number dropped.
pub fn encode_nonempty(
    docs: &[crate::text::LabeledText],
    codec: &crate::text::CharCodec,
    max_words: usize,
) -> (Vec<EncodedDocument>, usize) {
    let encoded = crate::text::encode_corpus(docs, codec, max_words);
    let before = encoded.len();
    let kept: Vec<EncodedDocument> = encoded.into_iter().filter(|d| d.n_words > 0).collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        warn!("skipping {dropped} documents with no words");
    }
    (kept, dropped)
}

/// Appends one JSON line to `path`.
pub fn append_json_line(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(value)?)?;
    Ok(())
}
