//! The fold training loop and evaluation.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::layers::Mode;
use crate::model::{Model, ModelConfig};
use crate::par;
use crate::pipeline::{write_atomic, ClipSource};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::loss::bce_loss;
use super::optim::RmsProp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub batch_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub iterations: Vec<IterationRecord>,
    /// Test-fold accuracy, filled in by callers that evaluate.
    pub fold_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum LogLine<'a> {
    Run {
        seed: u64,
        train: &'a TrainConfig,
        model: &'a ModelConfig,
    },
    Iteration(&'a IterationRecord),
    Summary {
        fold_accuracy: Option<f64>,
        wall_clock_secs: f64,
    },
}

impl RunLog {
    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }

    /// JSON lines: a run header, one record per iteration, a summary.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![LogLine::Run {
            seed: self.seed,
            train: &self.train,
            model: &self.model,
        }];
        lines.extend(self.iterations.iter().map(LogLine::Iteration));
        lines.push(LogLine::Summary {
            fold_accuracy: self.fold_accuracy,
            wall_clock_secs: self.wall_clock_secs,
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("log lines serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Seeded epoch-style batch order: each pass over the data is a fresh
/// shuffle.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Runs `cfg.iterations` RMSprop updates on batches drawn from `data` and
/// leaves the final-iteration weights in `model`.
pub fn train_fold<S: ClipSource + ?Sized>(model: &mut Model<f32>, data: &S, cfg: &TrainConfig) -> Result<RunLog> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(arg_err!("training needs at least 2 clips, got {}", data.len()));
    }
    let start = Instant::now();
    let batch = cfg.batch_size.min(data.len());
    let mut rng = Rng::new(cfg.seed);
    let mut sampler = BatchSampler::new(data.len());
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let mut records = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let idx = sampler.next(batch, &mut rng);
        let clip_rngs: Vec<Rng> = (0..batch).map(|j| rng.fork(j as u64)).collect();
        let clips = par::map(batch, |j| data.load(idx[j], Mode::Train, &mut clip_rngs[j].clone()));
        let clips = clips.into_iter().collect::<Result<Vec<_>>>()?;

        let cache = model.forward_batch(&clips, Mode::Train)?;
        let (mut loss, mut correct) = (0.0, 0usize);
        let mut grad_p = Vec::with_capacity(batch);
        for (&p, &i) in cache.probs.iter().zip(&idx) {
            let y = data.label(i);
            let (l, g) = bce_loss(f64::from(p), y)?;
            loss += l;
            grad_p.push((g / batch as f64) as f32);
            correct += usize::from(u8::from(p >= 0.5) == y);
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }

        let mut grads = model.backward_batch(&cache, &grad_p)?;
        if let Some(limit) = cfg.grad_clip {
            let norm = global_norm(&grads);
            if norm > limit {
                let s = (limit / norm) as f32;
                grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
            }
        }
        model.update_running_stats(&cache);
        model.zero_grads();
        model.accumulate_grads(&grads)?;
        opt.step(model.params_mut())?;

        let rec = IterationRecord {
            iteration: it,
            loss,
            batch_accuracy: correct as f64 / batch as f64,
        };
        if it % 50 == 0 || it + 1 == cfg.iterations {
            log::info!("iteration {it}: loss {loss:.5}, batch accuracy {:.3}", rec.batch_accuracy);
        }
        records.push(rec);
    }
    Ok(RunLog {
        seed: cfg.seed,
        train: cfg.clone(),
        model: model.config().clone(),
        iterations: records,
        fold_accuracy: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub probability: f64,
    pub label: u8,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Scores predictions with a 0.5 threshold.
pub fn score(probs: impl IntoIterator<Item = (String, f64, u8)>) -> Result<Evaluation> {
    let predictions: Vec<Prediction> = probs
        .into_iter()
        .map(|(clip_id, probability, label)| Prediction {
            clip_id,
            probability,
            label,
            predicted: u8::from(probability >= 0.5),
        })
        .collect();
    if predictions.is_empty() {
        return Err(arg_err!("cannot evaluate an empty clip set"));
    }
    let correct = predictions.iter().filter(|p| p.predicted == p.label).count();
    Ok(Evaluation {
        accuracy: correct as f64 / predictions.len() as f64,
        predictions,
    })
}

/// Eval-mode predictions for every clip of `data`, in chunks of `batch`.
pub fn evaluate<S: ClipSource + ?Sized>(model: &Model<f32>, data: &S, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(arg_err!("cannot evaluate an empty clip set"));
    }
    let mut probs = Vec::with_capacity(data.len());
    let batch = batch.max(1);
    for start in (0..data.len()).step_by(batch) {
        let end = (start + batch).min(data.len());
        let clips = par::map(end - start, |j| data.load(start + j, Mode::Eval, &mut Rng::new(0)));
        let clips = clips.into_iter().collect::<Result<Vec<_>>>()?;
        let cache = model.forward_batch(&clips, Mode::Eval)?;
        for (j, &p) in cache.probs.iter().enumerate() {
            probs.push((data.clip_id(start + j).to_string(), f64::from(p), data.label(start + j)));
        }
    }
    score(probs)
}

/// Fold accuracies with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CvSummary {
    pub fn new(fold_accuracies: Vec<f64>) -> Result<Self> {
        if fold_accuracies.is_empty() {
            return Err(arg_err!("no fold accuracies"));
        }
        let n = fold_accuracies.len() as f64;
        let mean = fold_accuracies.iter().sum::<f64>() / n;
        let var = fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            fold_accuracies,
            mean,
            std: var.sqrt(),
        })
    }
}

impl fmt::Display for CvSummary {
    /// Percentages in the form `97.1±0.55%`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}±{:.2}%", self.mean * 100.0, self.std * 100.0)
    }
}
