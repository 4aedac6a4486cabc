//! Probability that a sampled softmax loss upper-bounds `−log NDCG` or
//! `−log MRR`.
//!
//! With the target ranked `r₊ ≤ 2^m − 1` out of `|I|` items and `K`
//! negatives drawn uniformly with replacement, the number `ξ` of sampled
//! items scoring at least the target is `Binomial(K, r₊/|I|)`, and
//! `ℓ_SCE ≥ log(1 + αξ)`. Splitting the `K` trials into `g` groups gives
//! `P(ξ ≥ g) ≥ 1 − g(1 − p)^⌊K/g⌋`; the NDCG bound uses `g = ⌈m/α⌉`, the
//! MRR bound `g = ⌈2^m/α⌉`, and `α = 1` is plain sampled softmax.
//!
//! Besides the formulas this module carries the independent checks used to
//! validate them: an exact binomial tail, a Monte Carlo frequency estimate
//! and an exhaustive audit of the full-catalog bound chain.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ce_topn_loss, sce_loss};
use crate::metrics::{mrr, ndcg, rank_of_target, Metric};
use crate::sampling::{sample_uniform_into, stream, SamplerConfig};

/// Inputs of a bounding-probability evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub r_plus: usize,
    pub k: usize,
    pub catalog_size: usize,
    pub alpha: f64,
}

impl BoundQuery {
    pub fn new(r_plus: usize, k: usize, catalog_size: usize, alpha: f64) -> Result<Self> {
        let q = BoundQuery {
            r_plus,
            k,
            catalog_size,
            alpha,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_plus == 0 || self.r_plus > self.catalog_size {
            return Err(Error::Argument(format!(
                "rank {} outside 1..={}",
                self.r_plus, self.catalog_size
            )));
        }
        if self.k == 0 {
            return Err(Error::Argument("K must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha < 1.0 || self.alpha.is_infinite() {
            return Err(Error::Argument(format!(
                "alpha must be finite and >= 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Chance that one uniform draw scores at least the target.
    pub fn hit_probability(&self) -> f64 {
        self.r_plus as f64 / self.catalog_size as f64
    }

    pub fn m(&self) -> u32 {
        m_of_rank(self.r_plus)
    }
}

/// A bounding probability clipped at zero, with the raw formula value kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub probability: f64,
    pub raw: f64,
}

impl BoundEstimate {
    fn from_raw(raw: f64) -> Self {
        BoundEstimate {
            probability: raw.max(0.0),
            raw,
        }
    }
}

/// Smallest `m` with `r₊ ≤ 2^m − 1`, i.e. the bit length of `r₊`.
pub fn m_of_rank(r_plus: usize) -> u32 {
    assert!(r_plus >= 1, "rank must be at least 1");
    usize::BITS - r_plus.leading_zeros()
}

/// `(1 − p)^n`, via `exp(n·log1p(−p))`.
fn pow_complement(p: f64, n: u64) -> f64 {
    if n == 0 {
        1.0
    } else {
        (n as f64 * (-p).ln_1p()).exp()
    }
}

/// `⌈numerator / alpha⌉`, in integer arithmetic when α is integral.
fn ceil_div(numerator: u64, alpha: f64) -> u64 {
    if alpha.fract() == 0.0 && alpha <= u64::MAX as f64 {
        numerator.div_ceil(alpha as u64)
    } else {
        (numerator as f64 / alpha).ceil() as u64
    }
}

/// `1 − g(1 − p)^⌊K/g⌋`, unclipped; defined as 1 for `g = 0`.
fn grouped_bound(k: u64, p: f64, groups: u64) -> f64 {
    if groups == 0 {
        return 1.0;
    }
    1.0 - groups as f64 * pow_complement(p, k / groups)
}

/// Lower bound on `P(ξ ≥ m)` for `ξ ~ Binomial(K, p)`.
pub fn binomial_tail_bound(k: u64, p: f64, m: u64) -> Result<f64> {
    if m > k || !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!(
            "need 0 <= m <= K and p in [0,1], got m={m}, K={k}, p={p}"
        )));
    }
    Ok(grouped_bound(k, p, m))
}

/// Group count of the NDCG bound, `⌈m/α⌉`.
pub fn ndcg_groups(q: &BoundQuery) -> u64 {
    ceil_div(q.m() as u64, q.alpha)
}

/// Group count of the MRR bound, `⌈2^m/α⌉`.
pub fn mrr_groups(q: &BoundQuery) -> u64 {
    ceil_div(1u64 << q.m(), q.alpha)
}

/// Sampled-softmax bound, `1 − m(1 − r₊/|I|)^⌊K/m⌋`. Ignores `q.alpha`.
pub fn ssm_bound_ndcg(q: &BoundQuery) -> Result<BoundEstimate> {
    q.validate()?;
    Ok(BoundEstimate::from_raw(grouped_bound(
        q.k as u64,
        q.hit_probability(),
        q.m() as u64,
    )))
}

/// Scaled cross-entropy bound, `1 − ⌈m/α⌉(1 − r₊/|I|)^⌊K/⌈m/α⌉⌋`.
pub fn sce_bound_ndcg(q: &BoundQuery) -> Result<BoundEstimate> {
    q.validate()?;
    Ok(BoundEstimate::from_raw(grouped_bound(
        q.k as u64,
        q.hit_probability(),
        ndcg_groups(q),
    )))
}

/// MRR variant, `1 − ⌈2^m/α⌉(1 − r₊/|I|)^⌊K/⌈2^m/α⌉⌋`.
pub fn sce_bound_mrr(q: &BoundQuery) -> Result<BoundEstimate> {
    q.validate()?;
    Ok(BoundEstimate::from_raw(grouped_bound(
        q.k as u64,
        q.hit_probability(),
        mrr_groups(q),
    )))
}

pub fn sce_bound(q: &BoundQuery, metric: Metric) -> Result<BoundEstimate> {
    match metric {
        Metric::Ndcg => sce_bound_ndcg(q),
        Metric::Mrr => sce_bound_mrr(q),
    }
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Largest `K` accepted by [`exact_binomial_tail`].
pub const EXACT_TAIL_MAX_K: u64 = 1000;

/// `P(ξ ≥ m)` for `ξ ~ Binomial(K, p)` by summing the upper tail in the
/// log domain.
pub fn exact_binomial_tail(k: u64, p: f64, m: u64) -> Result<f64> {
    if k > EXACT_TAIL_MAX_K {
        return Err(Error::Argument(format!(
            "exact tail supports K <= {EXACT_TAIL_MAX_K}, got {k}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("p must be in [0, 1], got {p}")));
    }
    if m == 0 {
        return Ok(1.0);
    }
    if m > k {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let lf = ln_factorials(k);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let tail: f64 = (m..=k)
        .map(|j| {
            let ln_choose = lf[k as usize] - lf[j as usize] - lf[(k - j) as usize];
            (ln_choose + j as f64 * lp + (k - j) as f64 * lq).exp()
        })
        .sum();
    Ok(tail.min(1.0))
}

/// Outcome of [`mc_verify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOutcome {
    pub r_plus: usize,
    pub trials: u64,
    /// Fraction of trials with `ℓ_SCE ≥ −log NDCG(r₊)`.
    pub ndcg_frequency: f64,
    /// Fraction of trials with `ℓ_SCE ≥ −log MRR(r₊)`.
    pub mrr_frequency: f64,
    /// Trials where `ℓ_SCE < log(1 + αξ) − 1e-9`.
    pub floor_violations: u64,
}

const MC_BLOCK: u64 = 4096;

#[derive(Default, Clone, Copy)]
struct McCounts {
    ndcg: u64,
    mrr: u64,
    violations: u64,
}

/// Empirical frequency with which SCE over `K` uniformly drawn items (with
/// replacement, target included in the pool) upper-bounds the metrics of
/// the target's full-catalog rank. Trial `t` uses sampler stream `t`.
pub fn mc_verify(scores: &[f64], target: usize, k: usize, alpha: f64, trials: u64, seed: u64) -> Result<McOutcome> {
    if trials == 0 {
        return Err(Error::Argument("need at least one trial".into()));
    }
    if alpha.is_nan() || alpha < 1.0 || alpha.is_infinite() {
        return Err(Error::Argument(format!("alpha must be finite and >= 1, got {alpha}")));
    }
    let r = rank_of_target(scores, target)?;
    let cfg = SamplerConfig {
        catalog_size: scores.len(),
        k,
        exclude_target: false,
        seed,
    };
    cfg.validate()?;
    let s_plus = scores[target];
    // ℓ_SCE = log(1 + α Σ exp(s_v − s₊)); tabulate the ratios once
    let ratio: Vec<f64> = scores.iter().map(|&s| (s - s_plus).exp()).collect();
    let need_ndcg = -ndcg(r).ln();
    let need_mrr = -mrr(r).ln();

    let run_block = |block: u64| -> McCounts {
        let mut c = McCounts::default();
        let mut draws = Vec::with_capacity(k);
        for t in block * MC_BLOCK..((block + 1) * MC_BLOCK).min(trials) {
            draws.clear();
            sample_uniform_into(&cfg, target, t, &mut draws).expect("validated sampler");
            let mut sum = 0.0;
            let mut xi = 0u64;
            for &v in &draws {
                sum += ratio[v];
                xi += u64::from(scores[v] >= s_plus);
            }
            let loss = (alpha * sum).ln_1p();
            c.ndcg += u64::from(loss >= need_ndcg);
            c.mrr += u64::from(loss >= need_mrr);
            c.violations += u64::from(loss < (alpha * xi as f64).ln_1p() - 1e-9);
        }
        c
    };
    let blocks = trials.div_ceil(MC_BLOCK);
    let counts = block_reduce(blocks, run_block);
    Ok(McOutcome {
        r_plus: r.get(),
        trials,
        ndcg_frequency: counts.ndcg as f64 / trials as f64,
        mrr_frequency: counts.mrr as f64 / trials as f64,
        floor_violations: counts.violations,
    })
}

#[cfg(feature = "parallel")]
fn block_reduce(blocks: u64, f: impl Fn(u64) -> McCounts + Sync + Send) -> McCounts {
    use rayon::prelude::*;
    let parts: Vec<McCounts> = (0..blocks).into_par_iter().map(f).collect();
    sum_counts(parts)
}

#[cfg(not(feature = "parallel"))]
fn block_reduce(blocks: u64, f: impl Fn(u64) -> McCounts) -> McCounts {
    sum_counts((0..blocks).map(f).collect())
}

fn sum_counts(parts: Vec<McCounts>) -> McCounts {
    parts.into_iter().fold(McCounts::default(), |a, b| McCounts {
        ndcg: a.ndcg + b.ndcg,
        mrr: a.mrr + b.mrr,
        violations: a.violations + b.violations,
    })
}

/// First failure found by [`prop1_audit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Violation {
    pub n: usize,
    pub neg_log_ndcg: f64,
    pub neg_log_mrr: f64,
    pub ce_top_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub r_plus: usize,
    pub checked: usize,
    pub passed: bool,
    pub first_violation: Option<Prop1Violation>,
}

/// Slack allowed in the bound-chain comparisons.
pub const PROP1_SLACK: f64 = 1e-9;

/// Checks `−log NDCG(r₊) ≤ −log MRR(r₊) ≤ ℓ_CE-n` for every `n` in
/// `r₊..=|I|`.
pub fn prop1_audit(scores: &[f64], target: usize) -> Result<Prop1Report> {
    let r = rank_of_target(scores, target)?;
    let a = -ndcg(r).ln();
    let b = -mrr(r).ln();
    let mut checked = 0;
    for n in r.get()..=scores.len() {
        let c = ce_topn_loss(scores, target, n)?.value;
        checked += 1;
        if a > b + PROP1_SLACK || b > c + PROP1_SLACK {
            return Ok(Prop1Report {
                r_plus: r.get(),
                checked,
                passed: false,
                first_violation: Some(Prop1Violation {
                    n,
                    neg_log_ndcg: a,
                    neg_log_mrr: b,
                    ce_top_n: c,
                }),
            });
        }
    }
    Ok(Prop1Report {
        r_plus: r.get(),
        checked,
        passed: true,
        first_violation: None,
    })
}

/// Bounding probabilities over a rank × K grid for one α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundGrid {
    pub catalog_size: usize,
    pub alpha: f64,
    pub metric: Metric,
    pub ranks: Vec<usize>,
    pub ks: Vec<usize>,
    /// `values[i][j]` is the clipped bound at `ranks[i]`, `ks[j]`.
    pub values: Vec<Vec<f64>>,
}

impl BoundGrid {
    /// CSV with a header row of K values and the rank in the first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank");
        for k in &self.ks {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for (r, row) in self.ranks.iter().zip(&self.values) {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn bound_grid(catalog_size: usize, alpha: f64, ranks: &[usize], ks: &[usize], metric: Metric) -> Result<BoundGrid> {
    if ranks.is_empty() || ks.is_empty() {
        return Err(Error::Argument("rank and K lists must be nonempty".into()));
    }
    let values = ranks
        .iter()
        .map(|&r| {
            ks.iter()
                .map(|&k| Ok(sce_bound(&BoundQuery::new(r, k, catalog_size, alpha)?, metric)?.probability))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundGrid {
        catalog_size,
        alpha,
        metric,
        ranks: ranks.to_vec(),
        ks: ks.to_vec(),
        values,
    })
}

/// `1, 2, 5, 10, 20, 50, …` up to and including `max` when it is on the series.
pub fn log_spaced(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for step in [1, 2, 5] {
            let v = decade * step;
            if v > max {
                break 'outer;
            }
            out.push(v);
        }
        decade *= 10;
    }
    out
}

/// Catalog size used for the default grids and battery.
pub const REFERENCE_CATALOG: usize = 12101;

/// Monte Carlo battery over fixed score vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub catalog_size: usize,
    pub ranks: Vec<usize>,
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            catalog_size: REFERENCE_CATALOG,
            ranks: vec![1, 5, 50, 500],
            ks: vec![10, 100, 1000],
            alphas: vec![1.0, 5.0, 100.0],
            trials: 100_000,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCheck {
    pub bound: f64,
    pub frequency: f64,
    /// `3·sqrt(bound·(1 − bound)/trials)`.
    pub slack: f64,
    pub pass: bool,
}

impl MetricCheck {
    fn new(bound: f64, frequency: f64, trials: u64) -> Self {
        let slack = 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
        MetricCheck {
            bound,
            frequency,
            slack,
            pass: frequency >= bound - slack,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryCell {
    pub r_plus: usize,
    pub k: usize,
    pub alpha: f64,
    pub ndcg: MetricCheck,
    pub mrr: MetricCheck,
    pub floor_violations: u64,
    pub pass: bool,
}

/// Standard-normal scores for a catalog, seeded.
pub fn gaussian_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, u64::MAX);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Index of the item holding full-catalog rank `r` (scores must be distinct).
pub fn item_at_rank(scores: &[f64], r: usize) -> Result<usize> {
    if r == 0 || r > scores.len() {
        return Err(Error::Argument(format!("rank {r} outside 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order[r - 1])
}

/// Bound formula used by the battery; swapped out by negative controls.
pub type BoundFormula = dyn Fn(&BoundQuery, Metric) -> Result<BoundEstimate> + Sync;

/// The formulas this module implements.
pub fn theorem_bound(q: &BoundQuery, metric: Metric) -> Result<BoundEstimate> {
    sce_bound(q, metric)
}

/// Runs every (rank, K, α) cell against one shared score vector.
pub fn run_battery(cfg: &BatteryConfig, formula: &BoundFormula) -> Result<Vec<BatteryCell>> {
    if cfg.trials == 0 {
        return Err(Error::Argument("battery needs at least one trial".into()));
    }
    let scores = gaussian_scores(cfg.catalog_size, cfg.seed);
    let mut cells = Vec::new();
    for &r in &cfg.ranks {
        let target = item_at_rank(&scores, r)?;
        for &k in &cfg.ks {
            for &alpha in &cfg.alphas {
                let q = BoundQuery::new(r, k, cfg.catalog_size, alpha)?;
                let mc = mc_verify(
                    &scores,
                    target,
                    k,
                    alpha,
                    cfg.trials,
                    cfg.seed ^ ((r as u64) << 32 | k as u64),
                )?;
                if mc.r_plus != r {
                    return Err(Error::Argument(format!("scores tie at rank {r}")));
                }
                let ndcg = MetricCheck::new(formula(&q, Metric::Ndcg)?.probability, mc.ndcg_frequency, cfg.trials);
                let mrr = MetricCheck::new(formula(&q, Metric::Mrr)?.probability, mc.mrr_frequency, cfg.trials);
                let pass = ndcg.pass && mrr.pass && mc.floor_violations == 0;
                cells.push(BatteryCell {
                    r_plus: r,
                    k,
                    alpha,
                    ndcg,
                    mrr,
                    floor_violations: mc.floor_violations,
                    pass,
                });
            }
        }
    }
    Ok(cells)
}

/// Summary of a batch of full-catalog bound-chain audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Suite {
    pub instances: usize,
    pub comparisons: usize,
    pub failures: usize,
    pub first_failure: Option<Prop1Violation>,
    pub pass: bool,
}

/// Random score vector of length 2–100: Gaussian, heavy-tailed (Student-t,
/// 1.5 degrees of freedom) or Gaussian with near-ties, cycling by index.
pub fn random_instance(seed: u64, index: u64) -> (Vec<f64>, usize) {
    let mut rng = stream(seed, index);
    let n = rng.random_range(2..=100);
    let scores: Vec<f64> = match index % 3 {
        0 => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        1 => {
            let t = StudentT::new(1.5).expect("valid degrees of freedom");
            (0..n).map(|_| t.sample(&mut rng)).collect()
        }
        _ => {
            let base: f64 = rng.sample(StandardNormal);
            (0..n)
                .map(|_| base + 1e-9 * rng.random_range(-3i32..=3) as f64)
                .collect()
        }
    };
    let target = rng.random_range(0..n);
    (scores, target)
}

pub fn prop1_suite(instances: usize, seed: u64) -> Result<Prop1Suite> {
    let mut comparisons = 0;
    let mut failures = 0;
    let mut first_failure = None;
    for i in 0..instances {
        let (scores, target) = random_instance(seed, i as u64);
        let rep = prop1_audit(&scores, target)?;
        comparisons += rep.checked;
        if !rep.passed {
            failures += 1;
            if first_failure.is_none() {
                first_failure = rep.first_violation;
            }
        }
    }
    Ok(Prop1Suite {
        instances,
        comparisons,
        failures,
        first_failure,
        pass: failures == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceFloorSuite {
    pub instances: usize,
    pub failures: usize,
    /// Smallest `ℓ_SCE − log(1 + αξ)` observed.
    pub min_gap: f64,
    pub pass: bool,
}

/// Random `(s₊, negatives, α)` triples, some negatives tied with `s₊`;
/// checks `ℓ_SCE ≥ log(1 + αξ)` with slack 1e-9.
pub fn sce_floor_suite(instances: usize, seed: u64) -> Result<SceFloorSuite> {
    let normal = Normal::new(0.0, 2.0).expect("valid normal");
    let mut failures = 0;
    let mut min_gap = f64::INFINITY;
    for i in 0..instances {
        let mut rng = stream(seed, i as u64);
        let s_plus: f64 = normal.sample(&mut rng);
        let k = rng.random_range(1..=200);
        let negs: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.1) {
                    s_plus
                } else {
                    normal.sample(&mut rng)
                }
            })
            .collect();
        let alpha = 10f64.powf(rng.random_range(0.0..4.0));
        let loss = sce_loss(s_plus, &negs, alpha)?.value;
        let xi = negs.iter().filter(|&&v| v >= s_plus).count() as f64;
        let gap = loss - (alpha * xi).ln_1p();
        min_gap = min_gap.min(gap);
        if gap < -1e-9 {
            failures += 1;
        }
    }
    Ok(SceFloorSuite {
        instances,
        failures,
        min_gap,
        pass: failures == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundSuite {
    pub max_k: u64,
    pub cases: usize,
    pub failures: usize,
    /// Smallest `exact − bound` observed.
    pub min_gap: f64,
    pub pass: bool,
}

/// Exact binomial tail against the grouping bound for every `K ≤ max_k`,
/// `0 ≤ m ≤ K` and `p ∈ {0.05, 0.10, …, 0.95}`, with slack 1e-12.
pub fn tail_bound_suite(max_k: u64) -> Result<TailBoundSuite> {
    let mut cases = 0;
    let mut failures = 0;
    let mut min_gap = f64::INFINITY;
    for k in 1..=max_k {
        for step in 1..=19u32 {
            let p = f64::from(step) * 0.05;
            for m in 0..=k {
                let exact = exact_binomial_tail(k, p, m)?;
                let bound = binomial_tail_bound(k, p, m)?;
                cases += 1;
                min_gap = min_gap.min(exact - bound);
                if exact < bound - 1e-12 {
                    failures += 1;
                }
            }
        }
    }
    Ok(TailBoundSuite {
        max_k,
        cases,
        failures,
        min_gap,
        pass: failures == 0,
    })
}

/// Everything `verify` checks, in report order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub prop1: Prop1Suite,
    pub sce_floor: SceFloorSuite,
    pub tail_bound: TailBoundSuite,
    pub battery: BatteryConfig,
    pub cells: Vec<BatteryCell>,
    pub pass: bool,
}

pub fn verify_all(
    battery: &BatteryConfig,
    prop1_instances: usize,
    sce_floor_instances: usize,
    formula: &BoundFormula,
) -> Result<VerificationReport> {
    let prop1 = prop1_suite(prop1_instances, battery.seed)?;
    let sce_floor = sce_floor_suite(sce_floor_instances, battery.seed)?;
    let tail_bound = tail_bound_suite(30)?;
    let cells = run_battery(battery, formula)?;
    let pass = prop1.pass && sce_floor.pass && tail_bound.pass && cells.iter().all(|c| c.pass);
    Ok(VerificationReport {
        seed: battery.seed,
        prop1,
        sce_floor,
        tail_bound,
        battery: battery.clone(),
        cells,
        pass,
    })
}
