//! Recommendation losses in the unified form `ℓ = −s₊ + log Z`.
//!
//! Each scalar function returns a [`LossValue`] holding both `ℓ` and
//! `log Z`, expressed in the raw score space so that
//! `value + s₊ == normalizer_log` for every loss. The batched versions in
//! [`full_catalog_loss`] and [`sampled_loss`] compute the same quantities
//! on a [`Graph`] so they can be differentiated.

use std::cmp::Ordering;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rank_of_target;
use crate::tensor::{log_sum_exp, softplus, Graph, Tensor, Var};

/// Which loss to train with, together with its parameters.
///
/// Config-string forms: `ce`, `ce-top:{n}`, `ce-eta:{η}`, `bce`, `bpr`,
/// `nce:{K}`, `ssm:{K}`, `sce:{K}:{α}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    Ce,
    CeTopN { n: usize },
    CeEta { eta: f64 },
    Bce,
    Bpr,
    Nce { k: usize },
    Ssm { k: usize },
    Sce { k: usize, alpha: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::CeTopN { n: 0 } => Err(Error::Config("ce-top needs n >= 1".into())),
            LossSpec::CeEta { eta } if eta.is_nan() || eta < 0.0 => {
                Err(Error::Config(format!("ce-eta needs eta >= 0, got {eta}")))
            }
            LossSpec::Nce { k: 0 } | LossSpec::Ssm { k: 0 } | LossSpec::Sce { k: 0, .. } => {
                Err(Error::Config("sampled losses need K >= 1".into()))
            }
            LossSpec::Sce { alpha, .. } if alpha.is_nan() || alpha < 1.0 || alpha.is_infinite() => {
                Err(Error::Config(format!("sce needs a finite alpha >= 1, got {alpha}")))
            }
            _ => Ok(()),
        }
    }

    /// Losses whose normalizer needs scores for the whole catalog.
    pub fn is_full_catalog(&self) -> bool {
        matches!(self, LossSpec::Ce | LossSpec::CeTopN { .. } | LossSpec::CeEta { .. })
    }

    /// Number of sampled negatives per positive, `None` for full-catalog losses.
    pub fn negatives(&self) -> Option<usize> {
        match *self {
            LossSpec::Bce | LossSpec::Bpr => Some(1),
            LossSpec::Nce { k } | LossSpec::Ssm { k } | LossSpec::Sce { k, .. } => Some(k),
            _ => None,
        }
    }

    /// Short kind name, e.g. `sce`.
    pub fn kind(&self) -> &'static str {
        match self {
            LossSpec::Ce => "ce",
            LossSpec::CeTopN { .. } => "ce-top",
            LossSpec::CeEta { .. } => "ce-eta",
            LossSpec::Bce => "bce",
            LossSpec::Bpr => "bpr",
            LossSpec::Nce { .. } => "nce",
            LossSpec::Ssm { .. } => "ssm",
            LossSpec::Sce { .. } => "sce",
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Ce | LossSpec::Bce | LossSpec::Bpr => f.write_str(self.kind()),
            LossSpec::CeTopN { n } => write!(f, "ce-top:{n}"),
            LossSpec::CeEta { eta } => write!(f, "ce-eta:{eta}"),
            LossSpec::Nce { k } => write!(f, "nce:{k}"),
            LossSpec::Ssm { k } => write!(f, "ssm:{k}"),
            LossSpec::Sce { k, alpha } => write!(f, "sce:{k}:{alpha}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("bad {what} in loss {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad("integer"));
        let real = |p: &str| p.parse::<f64>().map_err(|_| bad("number"));
        let spec = match parts.as_slice() {
            ["ce"] => LossSpec::Ce,
            ["bce"] => LossSpec::Bce,
            ["bpr"] => LossSpec::Bpr,
            ["ce-top", n] => LossSpec::CeTopN { n: int(n)? },
            ["ce-eta", eta] => LossSpec::CeEta { eta: real(eta)? },
            ["nce", k] => LossSpec::Nce { k: int(k)? },
            ["ssm", k] => LossSpec::Ssm { k: int(k)? },
            ["sce", k, alpha] => LossSpec::Sce {
                k: int(k)?,
                alpha: real(alpha)?,
            },
            _ => return Err(Error::Config(format!("unknown loss {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for LossSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A loss value and its log-normalizer, in raw score units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub normalizer_log: f64,
}

impl LossValue {
    fn from_normalizer(s_plus: f64, normalizer_log: f64) -> Self {
        LossValue {
            value: normalizer_log - s_plus,
            normalizer_log,
        }
    }
}

fn target_score(scores: &[f64], target: usize) -> Result<f64> {
    scores.get(target).copied().ok_or(Error::Index {
        index: target,
        len: scores.len(),
    })
}

/// Full softmax cross-entropy.
pub fn ce_loss(scores: &[f64], target: usize) -> Result<LossValue> {
    let s = target_score(scores, target)?;
    Ok(LossValue::from_normalizer(s, log_sum_exp(scores, None)?))
}

/// Indicator weights of the `n` best-scored items, ties broken by
/// ascending item id.
pub fn top_n_mask(scores: &[f64], n: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut mask = vec![0.0; scores.len()];
    for &i in order.iter().take(n) {
        mask[i] = 1.0;
    }
    mask
}

/// Cross-entropy restricted to the `n` top-ranked items. When the target
/// ranks below `n` the value is still computed, but it no longer bounds
/// the ranking metrics.
pub fn ce_topn_loss(scores: &[f64], target: usize, n: usize) -> Result<LossValue> {
    let s = target_score(scores, target)?;
    if n == 0 || n > scores.len() {
        return Err(Error::Argument(format!("top-n cut {n} outside 1..={}", scores.len())));
    }
    let mask = top_n_mask(scores, n);
    Ok(LossValue::from_normalizer(s, log_sum_exp(scores, Some(&mask))?))
}

/// Indicator weights of items with `s_v − s₊ ≥ −η·|s₊|`, evaluated as
/// `(s₊ − s_v)/|s₊| ≤ η` so that η equal to the largest such ratio keeps
/// every item. At `s₊ = 0` only items scoring at least `s₊` survive, for
/// every η.
pub fn eta_mask(scores: &[f64], s_plus: f64, eta: f64) -> Vec<f64> {
    let keep = |v: f64| {
        if s_plus == 0.0 {
            v >= s_plus
        } else {
            v >= s_plus || (s_plus - v) / s_plus.abs() <= eta
        }
    };
    scores.iter().map(|&v| if keep(v) { 1.0 } else { 0.0 }).collect()
}

pub fn ce_eta_loss(scores: &[f64], target: usize, eta: f64) -> Result<LossValue> {
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::Argument(format!("eta must be >= 0, got {eta}")));
    }
    let s = target_score(scores, target)?;
    let mut mask = eta_mask(scores, s, eta);
    mask[target] = 1.0;
    Ok(LossValue::from_normalizer(s, log_sum_exp(scores, Some(&mask))?))
}

/// Binary cross-entropy with one sampled negative.
pub fn bce_loss(s_plus: f64, s_minus: f64) -> LossValue {
    LossValue {
        value: softplus(-s_plus) + softplus(s_minus),
        normalizer_log: softplus(s_plus) + softplus(s_minus),
    }
}

/// Bayesian personalized ranking, `−log σ(s₊ − s₋)`.
pub fn bpr_loss(s_plus: f64, s_minus: f64) -> LossValue {
    let m = s_plus.max(s_minus);
    LossValue {
        value: softplus(s_minus - s_plus),
        normalizer_log: m + ((s_plus - m).exp() + (s_minus - m).exp()).ln(),
    }
}

/// Noise-contrastive estimation under uniform noise, with corrected scores
/// `s′ = s − c − log(K/|I|)`. The normalizer is reported in raw score units.
pub fn nce_loss(s_plus: f64, negatives: &[f64], offset: f64, catalog_size: usize) -> Result<LossValue> {
    if negatives.is_empty() {
        return Err(Error::Argument("nce needs at least one negative".into()));
    }
    if catalog_size == 0 {
        return Err(Error::Argument("catalog size must be positive".into()));
    }
    let shift = offset + (negatives.len() as f64 / catalog_size as f64).ln();
    let pos = s_plus - shift;
    let noise: f64 = negatives.iter().map(|&s| softplus(s - shift)).sum();
    Ok(LossValue {
        value: softplus(-pos) + noise,
        normalizer_log: softplus(pos) + noise + shift,
    })
}

/// Sampled softmax: the target plus `K` sampled items in the normalizer.
pub fn ssm_loss(s_plus: f64, negatives: &[f64]) -> Result<LossValue> {
    sce_loss(s_plus, negatives, 1.0)
}

/// Scaled cross-entropy: the sampled part of the normalizer is weighted by α.
pub fn sce_loss(s_plus: f64, negatives: &[f64], alpha: f64) -> Result<LossValue> {
    if negatives.is_empty() {
        return Err(Error::Argument("sampled softmax needs at least one negative".into()));
    }
    if alpha.is_nan() || alpha < 1.0 || alpha.is_infinite() {
        return Err(Error::Argument(format!("alpha must be finite and >= 1, got {alpha}")));
    }
    let mut xs = Vec::with_capacity(negatives.len() + 1);
    xs.push(s_plus);
    xs.extend_from_slice(negatives);
    let mut ws = vec![alpha; xs.len()];
    ws[0] = 1.0;
    Ok(LossValue::from_normalizer(s_plus, log_sum_exp(&xs, Some(&ws))?))
}

/// Scores of a positive and its sampled negatives.
#[derive(Clone, Copy, Debug)]
pub struct SampledScores<'a> {
    pub positive: f64,
    pub negatives: &'a [f64],
    /// Trainable NCE offset `c`; ignored by the other losses.
    pub nce_offset: f64,
    pub catalog_size: usize,
}

/// Dispatches on `spec`. Full-catalog losses need `full = (scores, target)`;
/// the sampled ones need `sampled` with exactly the configured number of
/// negatives.
pub fn loss_eval(
    spec: &LossSpec,
    full: Option<(&[f64], usize)>,
    sampled: Option<SampledScores<'_>>,
) -> Result<LossValue> {
    spec.validate()?;
    if spec.is_full_catalog() {
        let (scores, target) = full.ok_or_else(|| Error::Config(format!("{spec} needs full-catalog scores")))?;
        return match *spec {
            LossSpec::Ce => ce_loss(scores, target),
            LossSpec::CeTopN { n } => ce_topn_loss(scores, target, n),
            LossSpec::CeEta { eta } => ce_eta_loss(scores, target, eta),
            _ => unreachable!(),
        };
    }
    let s = sampled.ok_or_else(|| Error::Config(format!("{spec} needs sampled negatives")))?;
    let k = spec.negatives().expect("sampled loss");
    if s.negatives.len() != k {
        return Err(Error::Config(format!(
            "{spec} expects {k} negatives, got {}",
            s.negatives.len()
        )));
    }
    match *spec {
        LossSpec::Bce => Ok(bce_loss(s.positive, s.negatives[0])),
        LossSpec::Bpr => Ok(bpr_loss(s.positive, s.negatives[0])),
        LossSpec::Nce { .. } => nce_loss(s.positive, s.negatives, s.nce_offset, s.catalog_size),
        LossSpec::Ssm { .. } => ssm_loss(s.positive, s.negatives),
        LossSpec::Sce { alpha, .. } => sce_loss(s.positive, s.negatives, alpha),
        _ => unreachable!(),
    }
}

/// Whether `ce_topn_loss` with cut `n` still bounds the metrics for this
/// query, i.e. `n ≥ r₊`.
pub fn topn_bound_holds(scores: &[f64], target: usize, n: usize) -> Result<bool> {
    Ok(n >= rank_of_target(scores, target)?.get())
}

/// Per-row losses for a full-catalog loss on an `B×N` score matrix.
pub fn full_catalog_loss(g: &Graph, spec: &LossSpec, scores: Var, targets: &[usize]) -> Result<Var> {
    spec.validate()?;
    let vs = g.value(scores);
    let (rows, cols) = vs.dims2()?;
    if targets.len() != rows {
        return Err(Error::Shape(format!("{} targets for {rows} score rows", targets.len())));
    }
    let weights = match *spec {
        LossSpec::Ce => None,
        LossSpec::CeTopN { n } => {
            if n > cols {
                return Err(Error::Argument(format!("top-n cut {n} exceeds catalog {cols}")));
            }
            let mut w = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                w.extend(top_n_mask(vs.row(r), n));
            }
            Some(Rc::new(Tensor::matrix(rows, cols, w)?))
        }
        LossSpec::CeEta { eta } => {
            let mut w = Vec::with_capacity(rows * cols);
            for (r, &t) in targets.iter().enumerate() {
                let row = vs.row(r);
                let mut m = eta_mask(row, row[t], eta);
                m[t] = 1.0;
                w.extend(m);
            }
            Some(Rc::new(Tensor::matrix(rows, cols, w)?))
        }
        _ => return Err(Error::Config(format!("{spec} is not a full-catalog loss"))),
    };
    let lse = g.log_sum_exp(scores, weights)?;
    let pos = g.pick_cols(scores, targets)?;
    g.sub(lse, pos)
}

/// Per-row losses for a sampled loss on a `B×(1+K)` score matrix whose
/// first column holds the positives. `nce_offset` is the scalar `c`.
pub fn sampled_loss(
    g: &Graph,
    spec: &LossSpec,
    scores: Var,
    nce_offset: Option<Var>,
    catalog_size: usize,
) -> Result<Var> {
    spec.validate()?;
    let k = spec
        .negatives()
        .ok_or_else(|| Error::Config(format!("{spec} is not a sampled loss")))?;
    let (rows, cols) = g.value(scores).dims2()?;
    if cols != k + 1 {
        return Err(Error::Shape(format!(
            "{spec} needs {} score columns, got {cols}",
            k + 1
        )));
    }
    let first = vec![0; rows];
    match *spec {
        LossSpec::Ssm { .. } | LossSpec::Sce { .. } => {
            let alpha = if let LossSpec::Sce { alpha, .. } = *spec {
                alpha
            } else {
                1.0
            };
            let w = Tensor::from_fn(vec![rows, cols], |i| if i % cols == 0 { 1.0 } else { alpha });
            let lse = g.log_sum_exp(scores, Some(Rc::new(w)))?;
            let pos = g.pick_cols(scores, &first)?;
            g.sub(lse, pos)
        }
        LossSpec::Bce => {
            let pos = g.pick_cols(scores, &first)?;
            let neg = g.pick_cols(scores, &vec![1; rows])?;
            let a = g.softplus(g.neg(pos)?)?;
            let b = g.softplus(neg)?;
            g.add(a, b)
        }
        LossSpec::Bpr => {
            let pos = g.pick_cols(scores, &first)?;
            let neg = g.pick_cols(scores, &vec![1; rows])?;
            g.softplus(g.sub(neg, pos)?)
        }
        LossSpec::Nce { k } => {
            let c = nce_offset.ok_or_else(|| Error::Config("nce needs an offset parameter".into()))?;
            if catalog_size == 0 {
                return Err(Error::Argument("catalog size must be positive".into()));
            }
            let shifted = g.add_scalar(g.sub(scores, c)?, -(k as f64 / catalog_size as f64).ln());
            // softplus(−x) = softplus(x) − x folds the positive term into the row sum
            let total = g.sum_rows(g.softplus(shifted)?)?;
            let pos = g.pick_cols(shifted, &first)?;
            g.sub(total, pos)
        }
        _ => unreachable!("full-catalog losses have no negatives"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::metrics::{mrr, ndcg};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn decomposes(v: LossValue, s_plus: f64) {
        close(v.value + s_plus, v.normalizer_log, 1e-12);
    }

    #[test]
    fn parse_and_display() {
        for s in [
            "ce",
            "ce-top:10",
            "ce-eta:0.7",
            "bce",
            "bpr",
            "nce:100",
            "ssm:100",
            "sce:100:100",
        ] {
            let spec: LossSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!(
            "sce:3:2.5".parse::<LossSpec>().unwrap(),
            LossSpec::Sce { k: 3, alpha: 2.5 }
        );
        for bad in [
            "",
            "ce:1",
            "sce:10",
            "sce:10:0.5",
            "ssm:0",
            "ce-eta:-1",
            "ce-top:0",
            "foo",
        ] {
            assert!(matches!(bad.parse::<LossSpec>(), Err(Error::Config(_))), "{bad}");
        }
        assert!("ce-eta:inf".parse::<LossSpec>().is_ok());
    }

    #[test]
    fn ce_examples() {
        close(ce_loss(&[0.0, 0.0], 0).unwrap().value, LN2, 1e-15);
        let v = ce_loss(&[1.0, 2.0, 3.0], 2).unwrap();
        close(v.value, (1.0 + (-1f64).exp() + (-2f64).exp()).ln(), 1e-15);
        close(v.value, 0.407606, 1e-6);
        decomposes(v, 3.0);
        let shifted = ce_loss(&[101.0, 102.0, 103.0], 2).unwrap();
        close(shifted.value, v.value, 1e-12);
    }

    #[test]
    fn ce_topn_examples() {
        let scores = [0.3, -1.0, 2.0, 0.7];
        close(
            ce_topn_loss(&scores, 0, 4).unwrap().value,
            ce_loss(&scores, 0).unwrap().value,
            1e-15,
        );
        assert_eq!(ce_topn_loss(&scores, 2, 1).unwrap().value, 0.0);
        let v = ce_topn_loss(&[3.0, 2.0, 1.0], 1, 2).unwrap();
        close(v.value, -2.0 + (3f64.exp() + 2f64.exp()).ln(), 1e-15);
        close(v.value, 1.313262, 1e-6);
        assert!(ce_topn_loss(&scores, 0, 0).is_err());
        assert!(ce_topn_loss(&scores, 0, 5).is_err());
        // tie on the cut: item 0 wins over item 1 by id
        assert_eq!(top_n_mask(&[1.0, 1.0, 0.0], 1), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn ce_eta_examples() {
        assert_eq!(ce_eta_loss(&[0.5, 2.0, -1.0], 1, 0.0).unwrap().value, 0.0);
        let v = ce_eta_loss(&[1.0, 0.5, 2.0], 0, 0.0).unwrap();
        close(v.value, (1.0 + 1f64.exp()).ln(), 1e-15);
        close(v.value, 1.313262, 1e-6);
        let scores = [1.5, -0.3, 0.9, 2.2];
        // threshold max_v (s₊ − s_v)/|s₊| = 1.8 / 1.5
        let full = ce_loss(&scores, 0).unwrap().value;
        close(ce_eta_loss(&scores, 0, 1.2).unwrap().value, full, 1e-15);
        assert!(ce_eta_loss(&scores, 0, 1.1).unwrap().value < full);
        close(ce_eta_loss(&scores, 0, f64::INFINITY).unwrap().value, full, 1e-15);
        // s₊ = 0: only items scoring at least the target survive
        let v = ce_eta_loss(&[0.0, -0.5, 0.25], 0, 100.0).unwrap();
        close(v.value, (1.0 + 0.25f64.exp()).ln(), 1e-15);
        assert!(ce_eta_loss(&scores, 0, -0.1).is_err());
    }

    #[test]
    fn pairwise_examples() {
        close(bce_loss(0.0, 0.0).value, 2.0 * LN2, 1e-15);
        close(bce_loss(1.0, -1.0).value, 2.0 * (1.0 + (-1f64).exp()).ln(), 1e-15);
        close(bce_loss(1.0, -1.0).value, 0.626523, 1e-6);
        assert!(bce_loss(800.0, -800.0).value < 1e-300);
        decomposes(bce_loss(1.3, -0.4), 1.3);

        close(bpr_loss(0.0, 0.0).value, LN2, 1e-15);
        close(bpr_loss(2.0, 0.0).value, 0.126928, 1e-6);
        close(bpr_loss(2.0 + 7.5, 7.5).value, bpr_loss(2.0, 0.0).value, 1e-15);
        decomposes(bpr_loss(0.2, 1.7), 0.2);
    }

    #[test]
    fn nce_examples() {
        let k = 7;
        let v = nce_loss(0.0, &vec![0.0; k], 0.0, k).unwrap();
        close(v.value, (k + 1) as f64 * LN2, 1e-12);
        let v = nce_loss(0.0, &[0.0], 0.0, 2).unwrap();
        close(v.value, 1.5f64.ln() + 3f64.ln(), 1e-12);
        close(v.value, 1.504077, 1e-6);
        decomposes(v, 0.0);
        decomposes(nce_loss(0.8, &[0.1, -2.0, 1.0], 0.37, 50).unwrap(), 0.8);
        // gradient w.r.t. the offset c
        let negs = [0.4, -0.2, 1.1];
        let f = |c: &[f64]| nce_loss(0.9, &negs, c[0], 40).unwrap().value;
        let g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 4, vec![0.9, 0.4, -0.2, 1.1]).unwrap());
        let c = g.param(Tensor::scalar(0.25));
        let l = sampled_loss(&g, &LossSpec::Nce { k: 3 }, s, Some(c), 40).unwrap();
        close(g.value(l).data()[0], f(&[0.25]), 1e-12);
        let grads = g.backward(g.sum(l)).unwrap();
        let fd = central_difference(f, &[0.25], 1e-5);
        assert!(relative_error(grads.get(c).unwrap().data(), &fd) < 1e-6);
    }

    #[test]
    fn ssm_and_sce_examples() {
        close(ssm_loss(0.0, &[0.0; 3]).unwrap().value, 4f64.ln(), 1e-15);
        let v = ssm_loss(1.0, &[0.0, 0.0]).unwrap();
        close(v.value, (1.0 + 2.0 * (-1f64).exp()).ln(), 1e-15);
        close(v.value, 0.551445, 1e-6);
        close(sce_loss(0.0, &[0.0; 3], 2.0).unwrap().value, 7f64.ln(), 1e-15);
        close(sce_loss(0.0, &[0.0], 100.0).unwrap().value, 101f64.ln(), 1e-14);
        close(sce_loss(0.0, &[0.0], 100.0).unwrap().value, 4.615121, 1e-6);
        let negs = [0.3, -1.2, 2.5];
        assert_eq!(ssm_loss(0.7, &negs).unwrap(), sce_loss(0.7, &negs, 1.0).unwrap());
        assert!(sce_loss(0.0, &negs, 0.99).is_err());
        assert!(sce_loss(0.0, &[], 2.0).is_err());
    }

    #[test]
    fn dispatch() {
        let scores = [0.1, 0.9, -0.4];
        assert_eq!(
            loss_eval(&LossSpec::Ce, Some((&scores, 1)), None).unwrap(),
            ce_loss(&scores, 1).unwrap()
        );
        let negs = [0.2, -0.1, 0.5];
        let sampled = SampledScores {
            positive: 0.3,
            negatives: &negs,
            nce_offset: 0.0,
            catalog_size: 10,
        };
        assert_eq!(
            loss_eval(&LossSpec::Sce { k: 3, alpha: 1.0 }, None, Some(sampled)).unwrap(),
            ssm_loss(0.3, &negs).unwrap()
        );
        assert!(matches!(
            loss_eval(&LossSpec::Ssm { k: 3 }, Some((&scores, 1)), None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            loss_eval(&LossSpec::Ssm { k: 2 }, None, Some(sampled)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            loss_eval(&LossSpec::Ce, None, Some(sampled)),
            Err(Error::Config(_))
        ));
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn graph_losses_match_scalar_versions_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let full_specs = [LossSpec::Ce, LossSpec::CeTopN { n: 4 }, LossSpec::CeEta { eta: 0.7 }];
        for spec in full_specs {
            for _ in 0..20 {
                let (b, n) = (3, 7);
                let x0 = random_scores(&mut rng, b * n);
                let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
                let build = |g: &Graph, x: Var| {
                    let l = full_catalog_loss(g, &spec, x, &targets)?;
                    g.mean(l)
                };
                let g = Graph::new();
                let x = g.param(Tensor::matrix(b, n, x0.clone()).unwrap());
                let root = build(&g, x).unwrap();
                let scalar: f64 = (0..b)
                    .map(|r| {
                        loss_eval(&spec, Some((&x0[r * n..(r + 1) * n], targets[r])), None)
                            .unwrap()
                            .value
                    })
                    .sum::<f64>()
                    / b as f64;
                close(g.item(root).unwrap(), scalar, 1e-12);
                let analytic = g.backward(root).unwrap().take(x).unwrap().into_data();
                // masks are piecewise constant; finite differences see the same piece
                let numeric = central_difference(
                    |v| {
                        let g = Graph::new();
                        let x = g.param(Tensor::matrix(b, n, v.to_vec()).unwrap());
                        g.item(build(&g, x).unwrap()).unwrap()
                    },
                    &x0,
                    1e-5,
                );
                assert!(relative_error(&analytic, &numeric) <= 1e-4, "{spec}");
            }
        }
        let sampled_specs = [
            LossSpec::Bce,
            LossSpec::Bpr,
            LossSpec::Nce { k: 3 },
            LossSpec::Ssm { k: 3 },
            LossSpec::Sce { k: 3, alpha: 20.0 },
        ];
        for spec in sampled_specs {
            let cols = spec.negatives().unwrap() + 1;
            for _ in 0..20 {
                let b = 3;
                let x0 = random_scores(&mut rng, b * cols);
                let c0 = rng.random_range(-1.0..1.0);
                let g = Graph::new();
                let x = g.param(Tensor::matrix(b, cols, x0.clone()).unwrap());
                let c = g.param(Tensor::scalar(c0));
                let root = g.mean(sampled_loss(&g, &spec, x, Some(c), 50).unwrap()).unwrap();
                let scalar: f64 = (0..b)
                    .map(|r| {
                        let row = &x0[r * cols..(r + 1) * cols];
                        let s = SampledScores {
                            positive: row[0],
                            negatives: &row[1..],
                            nce_offset: c0,
                            catalog_size: 50,
                        };
                        loss_eval(&spec, None, Some(s)).unwrap().value
                    })
                    .sum::<f64>()
                    / b as f64;
                close(g.item(root).unwrap(), scalar, 1e-12);
                let mut grads = g.backward(root).unwrap();
                let analytic = grads.take(x).unwrap().into_data();
                let numeric = central_difference(
                    |v| {
                        let g = Graph::new();
                        let x = g.param(Tensor::matrix(b, cols, v.to_vec()).unwrap());
                        let c = g.constant(Tensor::scalar(c0));
                        g.item(g.mean(sampled_loss(&g, &spec, x, Some(c), 50).unwrap()).unwrap())
                            .unwrap()
                    },
                    &x0,
                    1e-5,
                );
                assert!(relative_error(&analytic, &numeric) <= 1e-4, "{spec}");
            }
        }
    }

    proptest! {
        #[test]
        fn unified_decomposition(
            scores in proptest::collection::vec(-20.0f64..20.0, 2..30),
            t in 0usize..30,
            alpha in 1.0f64..1e4,
            eta in 0.0f64..5.0,
            c in -3.0f64..3.0,
        ) {
            let t = t % scores.len();
            let s = scores[t];
            let negs: Vec<f64> = scores.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, &v)| v).collect();
            let n = scores.len();
            let values = [
                ce_loss(&scores, t).unwrap(),
                ce_topn_loss(&scores, t, 1 + t % n).unwrap(),
                ce_eta_loss(&scores, t, eta).unwrap(),
                bce_loss(s, negs[0]),
                bpr_loss(s, negs[0]),
                nce_loss(s, &negs, c, 100).unwrap(),
                ssm_loss(s, &negs).unwrap(),
                sce_loss(s, &negs, alpha).unwrap(),
            ];
            for v in values {
                prop_assert!((v.value + s - v.normalizer_log).abs() <= 1e-12 * (1.0 + v.normalizer_log.abs()));
            }
            for v in [values[0], values[2], values[6], values[7]] {
                prop_assert!(v.value >= 0.0);
            }
        }

        #[test]
        fn proposition_chain(
            scores in proptest::collection::vec(-4.0f64..4.0, 1..100),
            t in 0usize..100,
        ) {
            let t = t % scores.len();
            let r = rank_of_target(&scores, t).unwrap();
            let ce = ce_loss(&scores, t).unwrap().value;
            let lhs_ndcg = -ndcg(r).ln();
            let lhs_mrr = -mrr(r).ln();
            prop_assert!(lhs_ndcg <= lhs_mrr + 1e-9);
            for n in r.get()..=scores.len() {
                let top = ce_topn_loss(&scores, t, n).unwrap().value;
                prop_assert!(lhs_mrr <= top + 1e-9);
                prop_assert!(top <= ce + 1e-9);
                prop_assert!(topn_bound_holds(&scores, t, n).unwrap());
            }
        }

        #[test]
        fn eta_monotone_and_reaches_ce(
            scores in proptest::collection::vec(-4.0f64..4.0, 2..40),
            t in 0usize..40,
            e1 in 0.0f64..3.0,
            e2 in 0.0f64..3.0,
        ) {
            let t = t % scores.len();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = ce_eta_loss(&scores, t, lo).unwrap().value;
            let b = ce_eta_loss(&scores, t, hi).unwrap().value;
            prop_assert!(a <= b + 1e-12);
            let s = scores[t];
            if s != 0.0 {
                let thr = scores.iter().map(|v| (s - v) / s.abs()).fold(0.0, f64::max);
                let at = ce_eta_loss(&scores, t, thr).unwrap().value;
                prop_assert!((at - ce_loss(&scores, t).unwrap().value).abs() <= 1e-12);
            }
        }

        #[test]
        fn sce_increasing_in_alpha_and_floor(
            s in -5.0f64..5.0,
            negs in proptest::collection::vec(-5.0f64..5.0, 1..30),
            a1 in 1.0f64..100.0,
            gap in 1e-3f64..100.0,
        ) {
            let lo = sce_loss(s, &negs, a1).unwrap().value;
            let hi = sce_loss(s, &negs, a1 + gap).unwrap().value;
            prop_assert!(hi > lo);
            let xi = negs.iter().filter(|&&v| v >= s).count() as f64;
            prop_assert!(lo >= (1.0 + a1 * xi).ln() - 1e-9);
        }

        #[test]
        fn translation_invariance(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..20),
            shift in -50.0f64..50.0,
            alpha in 1.0f64..50.0,
        ) {
            let moved: Vec<f64> = scores.iter().map(|v| v + shift).collect();
            let tol = 1e-11;
            prop_assert!((ce_loss(&scores, 0).unwrap().value - ce_loss(&moved, 0).unwrap().value).abs() <= tol);
            prop_assert!((ssm_loss(scores[0], &scores[1..]).unwrap().value - ssm_loss(moved[0], &moved[1..]).unwrap().value).abs() <= tol);
            prop_assert!((sce_loss(scores[0], &scores[1..], alpha).unwrap().value - sce_loss(moved[0], &moved[1..], alpha).unwrap().value).abs() <= tol);
            prop_assert!((bpr_loss(scores[0], scores[1]).value - bpr_loss(moved[0], moved[1]).value).abs() <= tol);
        }
    }
}
