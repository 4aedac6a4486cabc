//! Mini-batch training, full-catalog evaluation, early stopping and sweeps.

use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::Split;
use crate::error::{Error, Result};
use crate::losses::{full_catalog_loss, sampled_loss, LossSpec};
use crate::metrics::{aggregate, rank_of_target, MetricName, MetricReport, Rank};
use crate::models::{EncoderKind, Init, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::sampling::{sample_uniform_into, stream, SamplerConfig};
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub d: usize,
    pub encoder_kind: EncoderKind,
    pub seed: u64,
    pub eval_every: usize,
    pub early_stop_patience: usize,
    pub eval_metric: MetricName,
    #[serde(default)]
    pub init: Init,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![5, 10]
}

/// 200 epochs for the full-catalog cross-entropy family, 300 otherwise.
pub fn default_epochs(loss: &LossSpec) -> usize {
    if loss.is_full_catalog() {
        200
    } else {
        300
    }
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        TrainConfig {
            epochs: default_epochs(&loss),
            loss,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            max_len: 50,
            d: 64,
            encoder_kind: EncoderKind::MeanPool,
            seed: 0,
            eval_every: 5,
            early_stop_patience: 10,
            eval_metric: "NDCG@10".parse().expect("valid metric name"),
            init: Init::Normal,
            ks: default_ks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.max_len == 0 || self.d == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, max_len, d and eval_every must be positive".into(),
            ));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("cut-offs must be positive".into()));
        }
        Ok(())
    }

    /// Cut-offs for reports, including the one named by `eval_metric`.
    pub fn report_ks(&self) -> Vec<usize> {
        let mut ks = self.ks.clone();
        if let Some(k) = self.eval_metric.k {
            if !ks.contains(&k) {
                ks.push(k);
            }
        }
        ks
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub history: Vec<usize>,
    pub target: usize,
}

fn truncate(history: &[usize], max_len: usize) -> &[usize] {
    &history[history.len().saturating_sub(max_len)..]
}

/// `([v₁…v_j], v_{j+1})` for every prefix of every training sequence, with
/// histories cut to their last `max_len` items.
pub fn make_training_examples(split: &Split, max_len: usize) -> Vec<Example> {
    let mut out = Vec::new();
    for u in &split.users {
        for j in 1..u.train.len() {
            out.push(Example {
                history: truncate(&u.train[..j], max_len).to_vec(),
                target: u.train[j],
            });
        }
    }
    out
}

/// Loss of one batch on a fresh tape. Returns the tape, the mean-loss
/// node and the parameter bindings.
fn batch_loss(
    params: &ModelParams,
    batch: &[(usize, &Example)],
    cfg: &TrainConfig,
    epoch: u64,
    n_examples: usize,
    with_grad: bool,
) -> Result<(Graph, crate::tensor::Var, crate::models::Bound)> {
    let g = Graph::new();
    let bound = if with_grad {
        params.bind(&g)
    } else {
        params.bind_constant(&g)
    };
    let hists: Vec<&[usize]> = batch.iter().map(|(_, e)| e.history.as_slice()).collect();
    let targets: Vec<usize> = batch.iter().map(|(_, e)| e.target).collect();
    let h = bound.encode(&g, &hists)?;
    let losses = if cfg.loss.is_full_catalog() {
        let scores = bound.score_all(&g, h)?;
        full_catalog_loss(&g, &cfg.loss, scores, &targets)?
    } else {
        let k = cfg.loss.negatives().expect("sampled loss");
        let sampler = SamplerConfig {
            catalog_size: params.item_count,
            k,
            exclude_target: true,
            seed: cfg.seed,
        };
        let mut ids = Vec::with_capacity(batch.len() * (k + 1));
        for &(idx, e) in batch {
            ids.push(e.target);
            sample_uniform_into(&sampler, e.target, epoch * n_examples as u64 + idx as u64, &mut ids)?;
        }
        let scores = bound.score_groups(&g, h, &ids, k + 1)?;
        sampled_loss(&g, &cfg.loss, scores, bound.nce_offset(), params.item_count)?
    };
    let mean = g.mean(losses)?;
    Ok((g, mean, bound))
}

/// Mean loss of `examples` taken as a single batch (example `i` draws its
/// negatives as index `i`) and its gradient for every parameter tensor.
pub fn batch_gradients(
    params: &ModelParams,
    examples: &[Example],
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let batch: Vec<(usize, &Example)> = examples.iter().enumerate().collect();
    let (g, mean, bound) = batch_loss(params, &batch, cfg, epoch, examples.len(), true)?;
    let mut grads = g.backward(mean)?;
    let out = bound
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| {
            grads
                .take(v)
                .map_or_else(|| vec![0.0; t.numel()], |g| g.data().to_vec())
        })
        .collect();
    Ok((g.item(mean)?, out))
}

/// The value half of `batch_gradients`, on a constant tape.
pub fn batch_objective(params: &ModelParams, examples: &[Example], cfg: &TrainConfig, epoch: u64) -> Result<f64> {
    let batch: Vec<(usize, &Example)> = examples.iter().enumerate().collect();
    let (g, mean, _) = batch_loss(params, &batch, cfg, epoch, examples.len(), false)?;
    g.item(mean)
}

/// Examples per bucketing pool, in batches.
const BUCKET_POOL: usize = 16;

/// Shuffled batches for one epoch. Each pool of `BUCKET_POOL` batches is
/// sorted by history length before chunking, so batches hold histories of
/// similar length, then the batch order is shuffled.
fn epoch_batches(examples: &[Example], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = stream(seed, (1 << 63) | epoch);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(examples.len().div_ceil(batch_size));
    for pool in order.chunks_mut(batch_size * BUCKET_POOL) {
        pool.sort_by_key(|&i| examples[i].history.len());
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// One Adam pass over the examples in shuffled, length-bucketed batches.
/// Negatives are drawn per (epoch, example). Returns the mean loss.
pub fn train_epoch(
    params: &mut ModelParams,
    opt: &mut Adam,
    examples: &[Example],
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (bi, chunk) in epoch_batches(examples, cfg.batch_size, cfg.seed, epoch)
        .iter()
        .enumerate()
    {
        let batch: Vec<(usize, &Example)> = chunk.iter().map(|&i| (i, &examples[i])).collect();
        let (g, mean, bound) = batch_loss(params, &batch, cfg, epoch, examples.len(), true)?;
        let value = g.item(mean)?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, batch: bi });
        }
        total += value * chunk.len() as f64;
        let mut grads = g.backward(mean)?;
        let grads: Vec<Option<crate::tensor::Tensor>> = bound.vars.iter().map(|&v| grads.take(v)).collect();
        drop(g);
        let mut bufs: Vec<&mut [f64]> = params.tensors.iter_mut().map(|t| Rc::make_mut(t).data_mut()).collect();
        let grad_refs: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_ref().map(|t| t.data())).collect();
        opt.step(&mut bufs, &grad_refs)?;
        if !params.all_finite() {
            return Err(Error::Divergence { epoch, batch: bi });
        }
    }
    Ok(total / examples.len() as f64)
}

/// Mean loss over the examples without updating anything, batched and
/// ordered as in `train_epoch`.
pub fn eval_loss(params: &ModelParams, examples: &[Example], cfg: &TrainConfig, epoch: u64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for chunk in &epoch_batches(examples, cfg.batch_size, cfg.seed, epoch) {
        let batch: Vec<(usize, &Example)> = chunk.iter().map(|&i| (i, &examples[i])).collect();
        let (g, mean, _) = batch_loss(params, &batch, cfg, epoch, examples.len(), false)?;
        total += g.item(mean)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Val,
    Test,
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(Phase::Val),
            "test" => Ok(Phase::Test),
            _ => Err(Error::Config(format!("unknown phase {s:?}"))),
        }
    }
}

const EVAL_BATCH: usize = 256;

/// Full-catalog rank of each user's held-out item. Validation encodes the
/// training prefix; test appends the validation item.
pub fn eval_ranks(params: &ModelParams, split: &Split, phase: Phase, max_len: usize) -> Result<Vec<Rank>> {
    if split.item_count != params.item_count {
        return Err(Error::Incompatible(format!(
            "model has {} items, data has {}",
            params.item_count, split.item_count
        )));
    }
    let queries: Vec<(Vec<usize>, usize)> = split
        .users
        .iter()
        .map(|u| match phase {
            Phase::Val => (truncate(&u.train, max_len).to_vec(), u.val),
            Phase::Test => {
                let mut h = u.train.clone();
                h.push(u.val);
                (truncate(&h, max_len).to_vec(), u.test)
            }
        })
        .collect();
    let mut ranks = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(EVAL_BATCH) {
        let g = Graph::new();
        let bound = params.bind_constant(&g);
        let hists: Vec<&[usize]> = chunk.iter().map(|(h, _)| h.as_slice()).collect();
        let h = bound.encode(&g, &hists)?;
        let scores = g.value(bound.score_all(&g, h)?);
        for (row, (_, target)) in chunk.iter().enumerate() {
            ranks.push(rank_of_target(scores.row(row), *target)?);
        }
    }
    Ok(ranks)
}

pub fn evaluate(
    params: &ModelParams,
    split: &Split,
    phase: Phase,
    ks: &[usize],
    max_len: usize,
) -> Result<MetricReport> {
    aggregate(&eval_ranks(params, split, phase, max_len)?, ks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config_hash: String,
    /// Mean training loss of each completed epoch.
    pub train_loss: Vec<f64>,
    pub evaluations: Vec<EvalRecord>,
    pub best_epoch: usize,
    pub test: MetricReport,
    pub stopped_early: bool,
}

impl RunHistory {
    /// Validation value of the selection metric at each evaluation.
    pub fn val_curve(&self, metric: MetricName) -> Vec<(usize, f64)> {
        self.evaluations
            .iter()
            .map(|e| (e.epoch, e.report.get(metric).unwrap_or(f64::NAN)))
            .collect()
    }
}

pub struct FitResult {
    pub params: ModelParams,
    pub history: RunHistory,
}

/// Trains from a fresh initialization, evaluating at epoch 0 and every
/// `eval_every` epochs (and at the last epoch). Keeps the parameters with
/// the best validation metric (earliest on ties) and stops after
/// `early_stop_patience` evaluations without improvement.
pub fn fit(cfg: &TrainConfig, split: &Split) -> Result<FitResult> {
    cfg.validate()?;
    let examples = make_training_examples(split, cfg.max_len);
    let nce = matches!(cfg.loss, LossSpec::Nce { .. });
    let mut params = ModelParams::new(split.item_count, cfg.d, cfg.encoder_kind, cfg.init, nce, cfg.seed)?;
    let sizes: Vec<usize> = params.tensors.iter().map(|t| t.numel()).collect();
    let mut opt = Adam::new(cfg.adam(), &sizes);
    let ks = cfg.report_ks();

    let first = evaluate(&params, split, Phase::Val, &ks, cfg.max_len)?;
    let score = |r: &MetricReport| r.get(cfg.eval_metric).expect("metric in report");
    let mut best = (0, score(&first), params.clone());
    let mut evaluations = vec![EvalRecord {
        epoch: 0,
        report: first,
    }];
    let mut train_loss = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        if stale >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
        train_loss.push(train_epoch(&mut params, &mut opt, &examples, cfg, epoch as u64)?);
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let report = evaluate(&params, split, Phase::Val, &ks, cfg.max_len)?;
            let s = score(&report);
            if s > best.1 {
                best = (epoch, s, params.clone());
                stale = 0;
            } else {
                stale += 1;
            }
            evaluations.push(EvalRecord { epoch, report });
        }
    }
    let (best_epoch, _, best_params) = best;
    let test = evaluate(&best_params, split, Phase::Test, &ks, cfg.max_len)?;
    Ok(FitResult {
        params: best_params,
        history: RunHistory {
            config_hash: cfg.hash(),
            train_loss,
            evaluations,
            best_epoch,
            test,
            stopped_early,
        },
    })
}

/// Metric CSV of a finished run: a header and one row of test metrics.
pub fn metrics_csv(report: &MetricReport) -> String {
    let mut out = report.header().join(",");
    out.push('\n');
    let vals: Vec<String> = report.values.iter().map(|v| v.to_string()).collect();
    out.push_str(&vals.join(","));
    out.push('\n');
    out
}

/// Applies `key=value` to a config. Keys are config field names plus
/// `eta`, `alpha` and `k`, which edit the loss in place.
pub fn apply_override(cfg: &TrainConfig, key: &str, value: &str) -> Result<TrainConfig> {
    let mut c = cfg.clone();
    let bad = || Error::Config(format!("bad value {value:?} for {key}"));
    let real = || value.parse::<f64>().map_err(|_| bad());
    let int = || value.parse::<usize>().map_err(|_| bad());
    match key {
        "loss" => c.loss = value.parse()?,
        "eta" => {
            c.loss = if value == "ce" {
                LossSpec::Ce
            } else {
                LossSpec::CeEta { eta: real()? }
            }
        }
        "alpha" => match &mut c.loss {
            LossSpec::Sce { alpha, .. } => *alpha = real()?,
            other => return Err(Error::Config(format!("alpha does not apply to {other}"))),
        },
        "k" => match &mut c.loss {
            LossSpec::Sce { k, .. } | LossSpec::Ssm { k } | LossSpec::Nce { k } => *k = int()?,
            other => return Err(Error::Config(format!("k does not apply to {other}"))),
        },
        "learning_rate" => c.learning_rate = real()?,
        "weight_decay" => c.weight_decay = real()?,
        "epochs" => c.epochs = int()?,
        "batch_size" => c.batch_size = int()?,
        "max_len" => c.max_len = int()?,
        "d" => c.d = int()?,
        "encoder_kind" => c.encoder_kind = value.parse()?,
        "eval_every" => c.eval_every = int()?,
        "early_stop_patience" => c.early_stop_patience = int()?,
        _ => return Err(Error::Config(format!("unknown sweep parameter {key:?}"))),
    }
    c.validate()?;
    Ok(c)
}

/// One sweep axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub loss: String,
    pub params: Vec<String>,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub test: Option<MetricReport>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axes: Vec<String>,
    pub metric_columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["run_id".to_string(), "loss".to_string()];
        header.extend(self.axes.iter().cloned());
        header.extend(["seed".to_string(), "best_epoch".to_string()]);
        header.extend(self.metric_columns.iter().cloned());
        header.push("status".into());
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![r.run_id.clone(), r.loss.clone()];
            fields.extend(r.params.iter().cloned());
            fields.push(r.seed.to_string());
            fields.push(r.best_epoch.map_or(String::new(), |e| e.to_string()));
            match &r.test {
                Some(rep) => fields.extend(rep.values.iter().map(|v| v.to_string())),
                None => fields.extend(self.metric_columns.iter().map(|_| String::new())),
            }
            fields.push(r.status.replace(',', ";"));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Every combination of the grid crossed with every seed, each a full fit.
/// Failed runs are recorded and the sweep continues. `on_row` sees each
/// row as it finishes.
pub fn sweep(
    base: &TrainConfig,
    grid: &[GridAxis],
    seeds: &[u64],
    split: &Split,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<SweepResult> {
    if grid.is_empty() || grid.iter().any(|a| a.values.is_empty()) || seeds.is_empty() {
        return Err(Error::Config("sweep grid and seed list must be nonempty".into()));
    }
    let mut combos: Vec<Vec<&str>> = vec![vec![]];
    for axis in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.as_str());
                    c
                })
            })
            .collect();
    }
    let metric_columns = crate::metrics::report_columns(&base.report_ks())
        .iter()
        .map(ToString::to_string)
        .collect();
    let mut rows = Vec::new();
    for combo in &combos {
        for &seed in seeds {
            let cfg = grid
                .iter()
                .zip(combo)
                .try_fold(TrainConfig { seed, ..base.clone() }, |c, (axis, v)| {
                    apply_override(&c, &axis.name, v)
                });
            let row = match cfg.and_then(|cfg| fit(&cfg, split).map(|f| (cfg, f))) {
                Ok((cfg, f)) => SweepRow {
                    run_id: cfg.hash()[..12].to_string(),
                    loss: cfg.loss.to_string(),
                    params: combo.iter().map(|s| s.to_string()).collect(),
                    seed,
                    best_epoch: Some(f.history.best_epoch),
                    test: Some(f.history.test),
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    run_id: String::new(),
                    loss: base.loss.to_string(),
                    params: combo.iter().map(|s| s.to_string()).collect(),
                    seed,
                    best_epoch: None,
                    test: None,
                    status: format!("error: {e}"),
                },
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(SweepResult {
        axes: grid.iter().map(|a| a.name.clone()).collect(),
        metric_columns,
        rows,
    })
}
