//! Full-batch training with early stopping, evaluation, and multi-seed
//! aggregation.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{make_split, Graph, SplitSpec};
use crate::model::{accuracy, cross_entropy, forward_with, loss_and_grad, ModelConfig, ModelParams, PreparedGraph};
use crate::syncdiag::{sync_report, SyncReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Feature dropout on the encoder output.
    pub dropout: f64,
    /// Training labels per class for generated splits.
    pub per_class: usize,
    /// Validation nodes for generated splits.
    pub val_size: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            lr: 0.01,
            weight_decay: 5e-4,
            optimizer: Optimizer::default(),
            patience: 100,
            seed: 0,
            dropout: 0.4,
            per_class: 20,
            val_size: 500,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        self.model.validate()
    }
}

/// One line of the per-run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub test_acc_at_best_val: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time: f64,
    /// Diagnostics of X(T) under the selected parameters.
    pub sync: SyncReport,
    pub log: Vec<EpochRecord>,
}

impl RunResult {
    /// JSON lines: one record per epoch, then `{test_acc, nfe_if_adaptive}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W, nfe_if_adaptive: Option<usize>) -> Result<()> {
        let io = |e| Error::io("<run log>", e);
        for rec in &self.log {
            writeln!(w, "{}", serde_json::to_string(rec)?).map_err(io)?;
        }
        let last = serde_json::json!({
            "test_acc": self.test_acc_at_best_val,
            "nfe_if_adaptive": nfe_if_adaptive,
        });
        writeln!(w, "{last}").map_err(io)?;
        Ok(())
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn optimizer_step(cfg: &TrainConfig, params: &mut [f64], grads: &[f64], st: &mut OptState) {
    st.t += 1;
    match cfg.optimizer {
        Optimizer::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for i in 0..params.len() {
                let g = grads[i] + cfg.weight_decay * params[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                params[i] -= cfg.lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + eps);
            }
        }
        Optimizer::SgdMomentum { momentum } => {
            for i in 0..params.len() {
                let g = grads[i] + cfg.weight_decay * params[i];
                st.m[i] = momentum * st.m[i] + g;
                params[i] -= cfg.lr * st.m[i];
            }
        }
    }
}

fn dropout_mask<R: Rng>(n: usize, d: usize, rate: f64, rng: &mut R) -> Option<Array2<f64>> {
    (rate > 0.0).then(|| {
        let keep = 1.0 / (1.0 - rate);
        Array2::from_shape_simple_fn((n, d), || if rng.random::<f64>() < rate { 0.0 } else { keep })
    })
}

/// Argmax accuracy of the model over `mask` (no dropout).
pub fn evaluate_accuracy(p: &ModelParams, g: &Graph, mask: &[usize]) -> Result<f64> {
    let prepared = PreparedGraph::new(g);
    let tape = forward_with(&prepared, p, None, false)?;
    accuracy(tape.logits(), g.labels(), mask)
}

/// Trains a fresh model on `split`, keeping the parameters with the best
/// validation accuracy (ties go to the lower validation loss).
pub fn train_node_classifier(g: &Graph, split: &SplitSpec, cfg: &TrainConfig) -> Result<(ModelParams, RunResult)> {
    cfg.validate()?;
    let started = Instant::now();
    let train = split.train_indices();
    let val = split.val_indices();
    let test = split.test_indices();
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg.model, g.feature_dim(), g.num_classes(), &mut rng)?;
    let prepared = PreparedGraph::new(g);
    let labels = g.labels();

    let eval = |p: &ModelParams| -> Result<(f64, f64, f64)> {
        let tape = forward_with(&prepared, p, None, false)?;
        let logits = tape.logits();
        Ok((
            accuracy(logits, labels, &val)?,
            cross_entropy(logits, labels, &val)?,
            accuracy(logits, labels, &test)?,
        ))
    };

    let (mut best_val_acc, mut best_val_loss, mut best_test) = eval(&params)?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let n_params = params.num_trainable();
    let mut st = OptState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let mask = dropout_mask(g.num_nodes(), cfg.model.hidden, cfg.dropout, &mut rng);
        let (report, grads) = match loss_and_grad(&prepared, &params, &train, mask.as_ref()) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        if !report.loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let mut flat = params.flatten();
        optimizer_step(cfg, &mut flat, &grads.flatten(), &mut st);
        params.assign(&flat)?;
        let (val_acc, val_loss, test_acc) = match eval(&params) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        epochs_run = epoch;
        log.push(EpochRecord {
            epoch,
            train_loss: report.loss,
            val_acc,
        });
        if val_acc > best_val_acc || (val_acc == best_val_acc && val_loss < best_val_loss) {
            best_val_acc = val_acc;
            best_val_loss = val_loss;
            best_test = test_acc;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let tape = forward_with(&prepared, &best_params, None, false)?;
    let sync = sync_report(tape.final_state(), None, None)?;
    Ok((
        best_params,
        RunResult {
            best_val_acc,
            best_val_loss,
            test_acc_at_best_val: best_test,
            best_epoch,
            epochs_run,
            wall_time: started.elapsed().as_secs_f64(),
            sync,
            log,
        },
    ))
}

/// One entry of a seeded experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub split: usize,
    pub seed: u64,
    /// `None` when the run diverged.
    pub result: Option<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededSummary {
    pub runs: Vec<RunRecord>,
    pub mean_acc: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_acc: f64,
    /// Diverged runs left out of the mean.
    pub excluded: usize,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains `n_splits × n_seeds` models. Split `s` is generated with seed
/// `cfg.seed + s`; run `r` (in split-major order) trains with seed
/// `cfg.seed + r`. Up to `workers` runs execute concurrently.
pub fn run_seeded(
    g: &Graph,
    cfg: &TrainConfig,
    n_splits: usize,
    n_seeds: usize,
    workers: usize,
) -> Result<SeededSummary> {
    if n_splits == 0 || n_seeds == 0 {
        return Err(Error::InvalidArgument("n_splits and n_seeds must be >= 1".into()));
    }
    cfg.validate()?;
    let splits = (0..n_splits)
        .map(|s| make_split(g, cfg.per_class, cfg.val_size, cfg.seed + s as u64))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..n_splits * n_seeds)
        .map(|r| (r / n_seeds, cfg.seed + r as u64))
        .collect();
    let run = |&(split, seed): &(usize, u64)| -> Result<RunRecord> {
        let run_cfg = TrainConfig { seed, ..*cfg };
        match train_node_classifier(g, &splits[split], &run_cfg) {
            Ok((_, result)) => Ok(RunRecord {
                split,
                seed,
                result: Some(result),
            }),
            Err(Error::Diverged { .. }) => Ok(RunRecord {
                split,
                seed,
                result: None,
            }),
            Err(e) => Err(e),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let accs: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.result.as_ref().map(|x| x.test_acc_at_best_val))
        .collect();
    let excluded = runs.len() - accs.len();
    let (mean_acc, std_acc) = mean_std(&accs);
    Ok(SeededSummary {
        runs,
        mean_acc,
        std_acc,
        excluded,
    })
}
