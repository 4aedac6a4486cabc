//! Seeded uniform negative sampling.
//!
//! Every draw is a pure function of `(seed, draw_index)`: the pair selects
//! a ChaCha8 key and stream, so results never depend on call order or
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub catalog_size: usize,
    pub k: usize,
    /// Draw from the catalog minus the target instead of the full catalog.
    pub exclude_target: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Argument("sampler needs K >= 1".into()));
        }
        let min = if self.exclude_target { 2 } else { 1 };
        if self.catalog_size < min {
            return Err(Error::Argument(format!(
                "catalog of {} items is too small to sample from{}",
                self.catalog_size,
                if self.exclude_target { " without the target" } else { "" }
            )));
        }
        Ok(())
    }
}

/// Generator for one `(seed, draw_index)` pair.
pub fn stream(seed: u64, draw_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw_index);
    rng
}

/// `K` independent uniform draws with replacement.
pub fn sample_uniform(cfg: &SamplerConfig, target: usize, draw_index: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(cfg.k);
    sample_uniform_into(cfg, target, draw_index, &mut out)?;
    Ok(out)
}

/// Like [`sample_uniform`], appending into a caller-owned buffer.
pub fn sample_uniform_into(cfg: &SamplerConfig, target: usize, draw_index: u64, out: &mut Vec<usize>) -> Result<()> {
    cfg.validate()?;
    if target >= cfg.catalog_size {
        return Err(Error::Index {
            index: target,
            len: cfg.catalog_size,
        });
    }
    let mut rng = stream(cfg.seed, draw_index);
    if cfg.exclude_target {
        // draw from n − 1 slots and skip over the target
        let n = cfg.catalog_size - 1;
        out.extend((0..cfg.k).map(|_| {
            let v = rng.random_range(0..n);
            if v >= target {
                v + 1
            } else {
                v
            }
        }));
    } else {
        out.extend((0..cfg.k).map(|_| rng.random_range(0..cfg.catalog_size)));
    }
    Ok(())
}
