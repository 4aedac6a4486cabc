//! Target rank, NDCG/MRR and their `@k` cut-offs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of the target among all scored items, counting every item whose
/// score is at least the target's (the target included).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rank(usize);

impl Rank {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Argument("rank must be at least 1".into()));
        }
        Ok(Rank(r))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// `r₊ = |{v : s_v ≥ s_target}|`. Ties count against the target.
pub fn rank_of_target(scores: &[f64], target: usize) -> Result<Rank> {
    let Some(&s) = scores.get(target) else {
        return Err(Error::Index {
            index: target,
            len: scores.len(),
        });
    };
    // the target counts itself even if its score is NaN
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| i != target && v >= s)
        .count();
    Ok(Rank(above + 1))
}

pub fn ndcg(r: Rank) -> f64 {
    1.0 / ((1 + r.0) as f64).log2()
}

pub fn mrr(r: Rank) -> f64 {
    1.0 / r.0 as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Ndcg,
    Mrr,
}

impl Metric {
    pub fn eval(self, r: Rank) -> f64 {
        match self {
            Metric::Ndcg => ndcg(r),
            Metric::Mrr => mrr(r),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg),
            "mrr" => Ok(Metric::Mrr),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "NDCG",
            Metric::Mrr => "MRR",
        })
    }
}

/// Metric value with zero reward once the target falls below the cut-off.
pub fn metric_at_k(metric: Metric, r: Rank, k: usize) -> f64 {
    if r.0 <= k {
        metric.eval(r)
    } else {
        0.0
    }
}

/// A metric column such as `NDCG@10` or plain `MRR`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MetricName {
    pub metric: Metric,
    pub k: Option<usize>,
}

impl MetricName {
    pub fn eval(self, r: Rank) -> f64 {
        match self.k {
            Some(k) => metric_at_k(self.metric, r, k),
            None => self.metric.eval(r),
        }
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('@') {
            Some((m, k)) => {
                let k: usize = k.parse().map_err(|_| Error::Config(format!("bad cut-off in {s:?}")))?;
                if k == 0 {
                    return Err(Error::Config(format!("cut-off must be positive in {s:?}")));
                }
                Ok(MetricName {
                    metric: m.parse()?,
                    k: Some(k),
                })
            }
            None => Ok(MetricName {
                metric: s.parse()?,
                k: None,
            }),
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "{}@{k}", self.metric),
            None => write!(f, "{}", self.metric),
        }
    }
}

impl Serialize for MetricName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Mean of every metric column over a set of evaluated queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub columns: Vec<MetricName>,
    pub values: Vec<f64>,
    pub queries: usize,
}

impl MetricReport {
    pub fn get(&self, name: MetricName) -> Option<f64> {
        self.columns.iter().position(|&c| c == name).map(|i| self.values[i])
    }

    /// Header fields for the metric columns, e.g. `NDCG@5`.
    pub fn header(&self) -> Vec<String> {
        self.columns.iter().map(ToString::to_string).collect()
    }
}

/// Columns in report order: `NDCG@k` for each k, `MRR@k` for each k, then
/// the uncut NDCG and MRR.
pub fn report_columns(ks: &[usize]) -> Vec<MetricName> {
    let mut cols = Vec::with_capacity(2 * ks.len() + 2);
    for metric in [Metric::Ndcg, Metric::Mrr] {
        cols.extend(ks.iter().map(|&k| MetricName { metric, k: Some(k) }));
    }
    cols.push(MetricName {
        metric: Metric::Ndcg,
        k: None,
    });
    cols.push(MetricName {
        metric: Metric::Mrr,
        k: None,
    });
    cols
}

/// Arithmetic mean of each per-query metric, summed in the given order.
pub fn aggregate(ranks: &[Rank], ks: &[usize]) -> Result<MetricReport> {
    if ranks.is_empty() {
        return Err(Error::Argument("no ranks to aggregate".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Argument("cut-offs must be positive".into()));
    }
    let columns = report_columns(ks);
    let mut values = vec![0.0; columns.len()];
    for &r in ranks {
        for (v, c) in values.iter_mut().zip(&columns) {
            *v += c.eval(r);
        }
    }
    let n = ranks.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(MetricReport {
        columns,
        values,
        queries: ranks.len(),
    })
}
