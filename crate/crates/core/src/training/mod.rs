//! Training loop, learning-rate schedule, the multi-run protocol and
//! exclusion of unsuccessful runs.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::dataio::{DatasetSplit, SegmentTensor};
use crate::error::{Error, Result};
use crate::evalmetrics::{error_matrix, segment_scores, ModelReconstructor};
use crate::models::{batch_tensor, LossBreakdown, Model, ModelSpec, PassOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub batch_size: usize,
    pub lr0: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_gamma: f64,
    pub epochs: usize,
    pub runs: usize,
    /// KL weight.
    pub beta: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// A run whose final error exceeds this multiple of its peers' median
    /// is excluded.
    pub fail_threshold: f64,
    /// Sakoe-Chiba band for the soft-DTW loss; `None` uses the full matrix.
    pub dtw_band: Option<usize>,
    /// Score the training pool with normalized DTW every this many epochs
    /// (the last epoch is always scored). 0 scores only the last epoch.
    pub score_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            batch_size: 30,
            lr0: 0.01,
            lr_gamma: 0.999,
            epochs: 80,
            runs: 20,
            beta: 1.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            fail_threshold: 5.0,
            dtw_band: None,
            score_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.runs == 0 {
            return Err(Error::invalid("batch size, epochs and runs must be at least 1"));
        }
        let positive = [("lr0", self.lr0), ("lr_gamma", self.lr_gamma), ("fail_threshold", self.fail_threshold)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be >= 0"));
        }
        Ok(())
    }

    /// Learning rate of `epoch` (0-based): lr0 multiplied by gamma once per
    /// elapsed epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        (0..epoch).fold(self.lr0, |lr, _| lr * self.lr_gamma)
    }

    fn scored(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.score_every > 0 && epoch % self.score_every == 0)
    }
}

/// Seed of run `index` of a multi-run experiment.
pub fn run_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Per-segment normalized DTW (mean over channels) and its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwStats {
    pub mean: f64,
    pub std: f64,
    pub per_segment: Vec<f64>,
}

impl DtwStats {
    pub fn from_scores(per_segment: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_segment);
        Self { mean, std, per_segment }
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Mean normalized DTW of a model's deterministic reconstructions.
pub fn score_segments(model: &Model, segments: &[SegmentTensor]) -> Result<DtwStats> {
    let m = error_matrix(&ModelReconstructor::deterministic(model), segments, "score")?;
    Ok(DtwStats::from_scores(segment_scores(&m)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches, weighted by batch size.
    pub train: LossBreakdown,
    /// Evaluation-mode loss on the validation set, if it is nonempty.
    pub validation: Option<LossBreakdown>,
    /// Normalized DTW over the training pool, on scored epochs.
    pub dtw: Option<DtwStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailReason {
    Numerical { epoch: usize },
    OutlierRun { final_error: f64, peer_median: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Successful,
    Unsuccessful(FailReason),
}

impl RunStatus {
    pub fn is_successful(&self) -> bool {
        *self == RunStatus::Successful
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub run_index: usize,
    pub run_seed: u64,
    /// Training-pool score before the first update.
    pub initial: DtwStats,
    pub records: Vec<EpochRecord>,
    pub status: RunStatus,
}

impl TrainHistory {
    /// Mean normalized DTW of the last scored epoch.
    pub fn final_error(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.dtw.as_ref().map(|d| d.mean))
    }

    pub fn has_non_finite(&self) -> bool {
        self.records.iter().any(|r| {
            let mut vals = vec![r.train.total, r.train.reconstruction];
            vals.extend(&r.train.kl_per_level);
            if let Some(v) = &r.validation {
                vals.push(v.total);
            }
            if let Some(d) = &r.dtw {
                vals.push(d.mean);
            }
            vals.iter().any(|v| !v.is_finite())
        })
    }
}

/// Wall-clock times of one run, kept out of the history so that histories
/// stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTimings {
    pub train_seconds: f64,
    pub validation_seconds: f64,
    pub scoring_seconds: f64,
}

/// Status of a run given the final errors of its peers: unsuccessful if any
/// loss was non-finite, or if its final error exceeds `fail_threshold` times
/// the peers' median.
pub fn mark_unsuccessful(history: &TrainHistory, peer_final_errors: &[f64], cfg: &TrainConfig) -> RunStatus {
    if let RunStatus::Unsuccessful(r @ FailReason::Numerical { .. }) = &history.status {
        return RunStatus::Unsuccessful(r.clone());
    }
    if history.has_non_finite() {
        let epoch = history.records.iter().position(|_| true).unwrap_or(0);
        return RunStatus::Unsuccessful(FailReason::Numerical { epoch });
    }
    let Some(fin) = history.final_error() else {
        return RunStatus::Successful;
    };
    let mut peers: Vec<f64> = peer_final_errors.iter().copied().filter(|v| v.is_finite()).collect();
    if peers.is_empty() {
        return RunStatus::Successful;
    }
    peers.sort_by(f64::total_cmp);
    let n = peers.len();
    let median = if n % 2 == 1 { peers[n / 2] } else { 0.5 * (peers[n / 2 - 1] + peers[n / 2]) };
    if fin > cfg.fail_threshold * median {
        RunStatus::Unsuccessful(FailReason::OutlierRun { final_error: fin, peer_median: median })
    } else {
        RunStatus::Successful
    }
}

fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> LossBreakdown {
    let n: usize = parts.iter().map(|(_, w)| w).sum();
    let levels = parts.first().map_or(0, |(b, _)| b.kl_per_level.len());
    let mut out = LossBreakdown { reconstruction: 0.0, kl_per_level: vec![0.0; levels], total: 0.0 };
    for (b, w) in parts {
        let f = *w as f64 / n as f64;
        out.reconstruction += f * b.reconstruction;
        out.total += f * b.total;
        for (o, k) in out.kl_per_level.iter_mut().zip(&b.kl_per_level) {
            *o += f * k;
        }
    }
    out
}

fn evaluate_set(model: &Model, set: &[SegmentTensor], cfg: &TrainConfig) -> Result<Option<LossBreakdown>> {
    if set.is_empty() {
        return Ok(None);
    }
    let mut parts = Vec::new();
    for chunk in set.chunks(cfg.batch_size) {
        let refs: Vec<&SegmentTensor> = chunk.iter().collect();
        let x = batch_tensor(&refs)?;
        parts.push((model.evaluate_loss(&x, cfg.beta, cfg.dtw_band)?, chunk.len()));
    }
    Ok(Some(weighted_mean(&parts)))
}

/// Trains one model. The run is deterministic in (split, cfg, run_seed).
pub fn train_run(split: &DatasetSplit, cfg: &TrainConfig, run_seed: u64) -> Result<(Model, TrainHistory)> {
    let (m, h, _) = train_run_observed(split, cfg, 0, run_seed, &mut |_, _| Ok(()))?;
    Ok((m, h))
}

/// `train_run` with a callback after every completed epoch (for
/// checkpointing) and wall-clock timings.
pub fn train_run_observed(
    split: &DatasetSplit,
    cfg: &TrainConfig,
    run_index: usize,
    run_seed: u64,
    observer: &mut dyn FnMut(&Model, &EpochRecord) -> Result<()>,
) -> Result<(Model, TrainHistory, RunTimings)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("the training set is empty"));
    }
    let mut model = Model::new(cfg.model.clone(), run_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let mut timings = RunTimings::default();

    let t0 = Instant::now();
    let initial = score_segments(&model, &split.train)?;
    timings.scoring_seconds += t0.elapsed().as_secs_f64();

    let mut history = TrainHistory { run_index, run_seed, initial, records: Vec::new(), status: RunStatus::Successful };
    let mut opts = PassOptions::training(&cfg.model);
    opts.beta = cfg.beta;
    opts.band = cfg.dtw_band;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut lr = cfg.lr0;
    for epoch in 0..cfg.epochs {
        let t = Instant::now();
        order.shuffle(&mut rng);
        let mut parts = Vec::new();
        let mut failed = false;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&SegmentTensor> = chunk.iter().map(|&i| &split.train[i]).collect();
            let x = batch_tensor(&refs)?;
            let lg = model.loss_graph(&x, &opts, &mut rng)?;
            let b = lg.breakdown(cfg.beta);
            let finite = b.total.is_finite();
            parts.push((b, chunk.len()));
            if !finite {
                failed = true;
                break;
            }
            let grads = lg.graph.backward(lg.total)?;
            opt.step(model.params_mut(), &grads, &lg.param_nodes, lr);
            model.update_running_stats(&lg.batch_stats);
            if !model.params().is_finite() {
                failed = true;
                break;
            }
        }
        timings.train_seconds += t.elapsed().as_secs_f64();
        let train = weighted_mean(&parts);
        if failed {
            history.records.push(EpochRecord { epoch, lr, train, validation: None, dtw: None });
            history.status = RunStatus::Unsuccessful(FailReason::Numerical { epoch });
            return Ok((model, history, timings));
        }
        let t = Instant::now();
        let validation = evaluate_set(&model, &split.validation, cfg)?;
        timings.validation_seconds += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let dtw = if cfg.scored(epoch) { Some(score_segments(&model, &split.train)?) } else { None };
        timings.scoring_seconds += t.elapsed().as_secs_f64();
        let record = EpochRecord { epoch, lr, train, validation, dtw };
        observer(&model, &record)?;
        history.records.push(record);
        lr *= cfg.lr_gamma;
    }
    Ok((model, history, timings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub epoch: usize,
    pub runs: usize,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub dtw_mean: Option<f64>,
    pub dtw_std: Option<f64>,
}

/// Mean and std across runs, per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub run_indices: Vec<usize>,
    pub points: Vec<AggregatePoint>,
    /// No run qualified; `points` is empty rather than fabricated.
    pub empty: bool,
}

/// Aggregates the given histories (all of them, or only successful runs).
pub fn aggregate(histories: &[TrainHistory], successful_only: bool) -> Aggregate {
    let runs: Vec<&TrainHistory> =
        histories.iter().filter(|h| !successful_only || h.status.is_successful()).collect();
    let max_epochs = runs.iter().map(|h| h.records.len()).max().unwrap_or(0);
    let points = (0..max_epochs)
        .map(|e| {
            let recs: Vec<&EpochRecord> = runs.iter().filter_map(|h| h.records.get(e)).collect();
            let losses: Vec<f64> = recs.iter().map(|r| r.train.total).collect();
            let dtws: Vec<f64> = recs.iter().filter_map(|r| r.dtw.as_ref().map(|d| d.mean)).collect();
            let (loss_mean, loss_std) = mean_std(&losses);
            let (dm, ds) = mean_std(&dtws);
            AggregatePoint {
                epoch: e,
                runs: recs.len(),
                loss_mean,
                loss_std,
                dtw_mean: (!dtws.is_empty()).then_some(dm),
                dtw_std: (!dtws.is_empty()).then_some(ds),
            }
        })
        .collect();
    Aggregate { run_indices: runs.iter().map(|h| h.run_index).collect(), points, empty: runs.is_empty() }
}

#[derive(Debug, Clone)]
pub struct MultiRun {
    pub models: Vec<Model>,
    pub histories: Vec<TrainHistory>,
    pub timings: Vec<RunTimings>,
    pub all: Aggregate,
    pub successful: Aggregate,
}

/// Number of worker threads: `HVTS_THREADS` if set, else rayon's default.
pub fn worker_threads() -> usize {
    std::env::var("HVTS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// `cfg.runs` independent runs, in parallel, then exclusion and aggregation.
pub fn multi_run(split: &DatasetSplit, cfg: &TrainConfig) -> Result<MultiRun> {
    multi_run_observed(split, cfg, &|_, _, _| Ok(()))
}

/// `multi_run` with a per-epoch callback receiving the run index.
pub fn multi_run_observed(
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &(dyn Fn(usize, &Model, &EpochRecord) -> Result<()> + Sync),
) -> Result<MultiRun> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))?;
    let results: Vec<(Model, TrainHistory, RunTimings)> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| train_run_observed(split, cfg, i, run_seed(cfg.seed, i), &mut |m, r| observer(i, m, r)))
            .collect::<Result<_>>()
    })?;
    let mut models = Vec::new();
    let mut histories = Vec::new();
    let mut timings = Vec::new();
    for (m, h, t) in results {
        models.push(m);
        histories.push(h);
        timings.push(t);
    }
    let finals: Vec<f64> = histories.iter().map(|h| h.final_error().unwrap_or(f64::NAN)).collect();
    let statuses: Vec<RunStatus> = histories
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let peers: Vec<f64> = finals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            mark_unsuccessful(h, &peers, cfg)
        })
        .collect();
    for (h, s) in histories.iter_mut().zip(statuses) {
        h.status = s;
    }
    Ok(MultiRun {
        all: aggregate(&histories, false),
        successful: aggregate(&histories, true),
        models,
        histories,
        timings,
    })
}

/// File name of the checkpoint of `run` after `epoch` (0-based).
pub fn checkpoint_name(run: usize, epoch: usize) -> String {
    format!("run{run:02}_epoch{:04}.hvts", epoch + 1)
}

/// Canonical JSON manifest of one run: config, seeds, status and every
/// per-epoch scalar.
pub fn run_manifest_json(cfg: &TrainConfig, history: &TrainHistory) -> Result<String> {
    #[derive(Serialize)]
    struct RunManifest<'a> {
        config: &'a TrainConfig,
        run_index: usize,
        run_seed: u64,
        status: &'a RunStatus,
        initial: &'a DtwStats,
        epochs: &'a [EpochRecord],
    }
    crate::canonical_json(&RunManifest {
        config: cfg,
        run_index: history.run_index,
        run_seed: history.run_seed,
        status: &history.status,
        initial: &history.initial,
        epochs: &history.records,
    })
}
