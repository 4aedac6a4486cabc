//! Per-example cost of a full-catalog loss step versus a sampled one.
//!
//! Both paths run forward and backward for one query on the tape. The full
//! path scores every row of the item table; the sampled path copies the
//! target and `K` negative rows into a small leaf first, so its work does
//! not depend on the catalog size.

use std::rc::Rc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{full_catalog_loss, sampled_loss, LossSpec};
use crate::sampling::{sample_uniform_into, stream, SamplerConfig};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub k: usize,
    pub ns_full: f64,
    pub ns_sampled: f64,
    pub ratio: f64,
}

pub const CSV_HEADER: &str = "size,K,ns_full,ns_sampled,ratio";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.0},{:.0},{:.3}",
            self.size, self.k, self.ns_full, self.ns_sampled, self.ratio
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Random `size × d` table and query, seeded.
pub fn synthetic_params(size: usize, d: usize, seed: u64) -> (Rc<Tensor>, Vec<f64>) {
    let mut rng = stream(seed, 0);
    let table = Tensor::from_fn(vec![size, d], |_| 0.1 * (rng.random::<f64>() - 0.5));
    let query = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    (Rc::new(table), query)
}

/// One forward and backward pass of full cross-entropy for a single query.
pub fn full_step(table: &Rc<Tensor>, query: &[f64], target: usize) -> Result<f64> {
    let g = Graph::new();
    let t = g.param(Rc::clone(table));
    let h = g.param(Tensor::matrix(1, query.len(), query.to_vec())?);
    let scores = g.matmul_bt(h, t)?;
    let loss = g.sum(full_catalog_loss(&g, &LossSpec::Ce, scores, &[target])?);
    let grads = g.backward(loss)?;
    debug_assert_eq!(grads.len(), 2);
    g.item(loss)
}

/// One forward and backward pass of a sampled loss for a single query;
/// the gradient covers only the `K + 1` gathered rows and the query.
pub fn sampled_step(
    table: &Tensor,
    query: &[f64],
    target: usize,
    spec: &LossSpec,
    sampler: &SamplerConfig,
    draw_index: u64,
    ids: &mut Vec<usize>,
) -> Result<f64> {
    let d = query.len();
    ids.clear();
    ids.push(target);
    sample_uniform_into(sampler, target, draw_index, ids)?;
    let mut rows = Vec::with_capacity(ids.len() * d);
    for &id in ids.iter() {
        rows.extend_from_slice(table.row(id));
    }
    let g = Graph::new();
    let r = g.param(Tensor::matrix(ids.len(), d, rows)?);
    let h = g.param(Tensor::matrix(1, d, query.to_vec())?);
    let scores = g.matmul_bt(h, r)?;
    let loss = g.sum(sampled_loss(&g, spec, scores, None, table.shape()[0])?);
    let grads = g.backward(loss)?;
    debug_assert_eq!(grads.len(), 2);
    g.item(loss)
}

/// Median wall time per example of each path over `reps` repetitions
/// (after one warm-up), using SCE with `α = 1` for the sampled path.
pub fn bench_one(size: usize, d: usize, k: usize, reps: usize, seed: u64) -> Result<BenchRow> {
    if size < 2 || k == 0 || d == 0 || reps == 0 {
        return Err(Error::Argument("need size >= 2 and positive d, K, reps".into()));
    }
    if size < k {
        return Err(Error::Argument(format!("catalog size {size} is smaller than K = {k}")));
    }
    let (table, query) = synthetic_params(size, d, seed);
    let spec = LossSpec::Sce { k, alpha: 1.0 };
    let sampler = SamplerConfig {
        catalog_size: size,
        k,
        exclude_target: true,
        seed,
    };
    let mut ids = Vec::with_capacity(k + 1);
    let mut full = Vec::with_capacity(reps);
    let mut sampled = Vec::with_capacity(reps);
    // sampled steps are short, so each timing covers a block of them
    let block = 64;
    for rep in 0..=reps {
        let target = rep % size;
        let t0 = Instant::now();
        std::hint::black_box(full_step(&table, &query, target)?);
        let t_full = t0.elapsed().as_nanos() as f64;

        let t0 = Instant::now();
        for j in 0..block {
            let draw = (rep * block + j) as u64;
            std::hint::black_box(sampled_step(&table, &query, target, &spec, &sampler, draw, &mut ids)?);
        }
        let t_sampled = t0.elapsed().as_nanos() as f64 / block as f64;
        if rep > 0 {
            full.push(t_full);
            sampled.push(t_sampled);
        }
    }
    let (ns_full, ns_sampled) = (median(full), median(sampled));
    Ok(BenchRow {
        size,
        k,
        ns_full,
        ns_sampled,
        ratio: ns_full / ns_sampled,
    })
}
