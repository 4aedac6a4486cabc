//! Interaction logs: TSV ingest, k-core filtering, leave-one-out splits and a
//! synthetic generator.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::stream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Parses `user<TAB>item<TAB>timestamp` lines. Blank lines are skipped.
pub fn parse_tsv(text: &str) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [user, item, ts] = fields[..] else {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        if user.is_empty() || item.is_empty() {
            return Err(bad("empty user or item id".into()));
        }
        let timestamp = ts
            .trim()
            .parse::<u64>()
            .map_err(|_| bad(format!("timestamp {ts:?} is not a non-negative integer")))?;
        out.push(RawInteraction {
            user: user.to_string(),
            item: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

pub fn load_tsv(path: impl AsRef<Path>) -> Result<Vec<RawInteraction>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}

/// Per-user item sequences over dense ids, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionLog {
    pub sequences: Vec<Vec<usize>>,
    /// Original id of each dense user id.
    pub user_ids: Vec<String>,
    /// Original id of each dense item id.
    pub item_ids: Vec<String>,
}

/// Summary statistics in the usual dataset-table layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    #[serde(rename = "#Users")]
    pub users: usize,
    #[serde(rename = "#Items")]
    pub items: usize,
    #[serde(rename = "#Interactions")]
    pub interactions: usize,
    #[serde(rename = "Density")]
    pub density: f64,
    #[serde(rename = "Avg. Len.")]
    pub avg_len: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// On-disk form of a processed dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub users: usize,
    pub items: usize,
    pub sequences: Vec<Vec<usize>>,
    pub id_maps: IdMaps,
    pub stats: DatasetStats,
}

impl InteractionLog {
    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let (u, i, n) = (self.user_count(), self.item_count(), self.interactions());
        DatasetStats {
            users: u,
            items: i,
            interactions: n,
            density: if u * i == 0 {
                0.0
            } else {
                n as f64 / (u as f64 * i as f64)
            },
            avg_len: if u == 0 { 0.0 } else { n as f64 / u as f64 },
        }
    }

    /// Checks id ranges and map sizes.
    pub fn validate(&self) -> Result<()> {
        if self.sequences.len() != self.user_ids.len() {
            return Err(Error::Config(format!(
                "{} sequences but {} user ids",
                self.sequences.len(),
                self.user_ids.len()
            )));
        }
        for seq in &self.sequences {
            if let Some(&bad) = seq.iter().find(|&&v| v >= self.item_count()) {
                return Err(Error::Index {
                    index: bad,
                    len: self.item_count(),
                });
            }
        }
        Ok(())
    }

    /// Back to raw records, using the sequence position as timestamp.
    pub fn to_raw(&self) -> Vec<RawInteraction> {
        let mut out = Vec::with_capacity(self.interactions());
        for (u, seq) in self.sequences.iter().enumerate() {
            for (t, &v) in seq.iter().enumerate() {
                out.push(RawInteraction {
                    user: self.user_ids[u].clone(),
                    item: self.item_ids[v].clone(),
                    timestamp: t as u64,
                });
            }
        }
        out
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            users: self.user_count(),
            items: self.item_count(),
            sequences: self.sequences.clone(),
            id_maps: IdMaps {
                users: self.user_ids.clone(),
                items: self.item_ids.clone(),
            },
            stats: self.stats(),
        }
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        if file.users != file.id_maps.users.len() || file.items != file.id_maps.items.len() {
            return Err(Error::Config("dataset counts disagree with id maps".into()));
        }
        let log = InteractionLog {
            sequences: file.sequences,
            user_ids: file.id_maps.users,
            item_ids: file.id_maps.items,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_str(&text)?)
    }
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// none remain, then assigns dense ids in first-appearance order and sorts
/// each user's items by timestamp (ties keep file order). Duplicate rows are
/// kept.
pub fn k_core_filter(raw: &[RawInteraction], k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let edges: Vec<(usize, usize)> = raw
        .iter()
        .map(|r| {
            let nu = user_index.len();
            let ni = item_index.len();
            (
                *user_index.entry(&r.user).or_insert(nu),
                *item_index.entry(&r.item).or_insert(ni),
            )
        })
        .collect();
    let mut user_alive = vec![true; user_index.len()];
    let mut item_alive = vec![true; item_index.len()];
    loop {
        let mut user_deg = vec![0usize; user_alive.len()];
        let mut item_deg = vec![0usize; item_alive.len()];
        for &(u, i) in &edges {
            if user_alive[u] && item_alive[i] {
                user_deg[u] += 1;
                item_deg[i] += 1;
            }
        }
        let mut changed = false;
        for (alive, deg) in [(&mut user_alive, &user_deg), (&mut item_alive, &item_deg)] {
            for (a, &d) in alive.iter_mut().zip(deg) {
                if *a && d < k {
                    *a = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_dense = vec![usize::MAX; user_alive.len()];
    let mut item_dense = vec![usize::MAX; item_alive.len()];
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut rows: Vec<Vec<(u64, usize)>> = Vec::new();
    for (r, &(u, i)) in raw.iter().zip(&edges) {
        if !(user_alive[u] && item_alive[i]) {
            continue;
        }
        if user_dense[u] == usize::MAX {
            user_dense[u] = user_ids.len();
            user_ids.push(r.user.clone());
            rows.push(Vec::new());
        }
        if item_dense[i] == usize::MAX {
            item_dense[i] = item_ids.len();
            item_ids.push(r.item.clone());
        }
        rows[user_dense[u]].push((r.timestamp, item_dense[i]));
    }
    if user_ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sequences = rows
        .into_iter()
        .map(|mut row| {
            row.sort_by_key(|&(t, _)| t);
            row.into_iter().map(|(_, v)| v).collect()
        })
        .collect();
    Ok(InteractionLog {
        sequences,
        user_ids,
        item_ids,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub val: usize,
    pub test: usize,
}

/// Per-user split: everything but the last two items, the penultimate item,
/// the last item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub item_count: usize,
    pub users: Vec<UserSplit>,
}

pub fn leave_one_out_split(log: &InteractionLog) -> Result<Split> {
    let users = log
        .sequences
        .iter()
        .enumerate()
        .map(|(u, seq)| match seq[..] {
            [ref train @ .., val, test] if !train.is_empty() => Ok(UserSplit {
                train: train.to_vec(),
                val,
                test,
            }),
            _ => Err(Error::Split {
                user: log.user_ids[u].clone(),
                len: seq.len(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        item_count: log.item_count(),
        users,
    })
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Multiplier on the sampling logits; 1 keeps them at unit scale.
    pub logit_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            items: 500,
            latent_dim: 64,
            min_len: 5,
            max_len: 20,
            seed: 1,
            logit_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.latent_dim == 0 {
            return Err(Error::Argument("users, items and latent_dim must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Argument(format!(
                "bad sequence length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        if self.items < 2 && self.max_len > 1 {
            return Err(Error::Argument("need two items to avoid immediate repeats".into()));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale >= 0.0) {
            return Err(Error::Argument("logit_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `key=value` pairs separated by commas, e.g. `users=2000,items=500,seed=1`.
/// Keys: users, items, dim, min_len, max_len, seed, scale.
impl FromStr for SynthConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?}")))?;
            let bad = || Error::Config(format!("bad value for {key}: {value:?}"));
            let int = || value.parse::<usize>().map_err(|_| bad());
            match key {
                "users" => cfg.users = int()?,
                "items" => cfg.items = int()?,
                "dim" | "latent_dim" => cfg.latent_dim = int()?,
                "min_len" => cfg.min_len = int()?,
                "max_len" => cfg.max_len = int()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "scale" | "logit_scale" => cfg.logit_scale = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown synth key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SynthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={},items={},dim={},min_len={},max_len={},seed={},scale={}",
            self.users, self.items, self.latent_dim, self.min_len, self.max_len, self.seed, self.logit_scale
        )
    }
}

fn normal_table(rows: usize, dim: usize, seed: u64, stream_id: u64) -> Vec<f64> {
    let mut rng = stream(seed, stream_id);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..rows * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Sequences where each step samples an item from a softmax over
/// `⟨0.8·u + 0.2·e_prev, e_v⟩`, never repeating the previous item.
pub fn synth_generate(cfg: &SynthConfig) -> Result<InteractionLog> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let user_vecs = normal_table(cfg.users, d, cfg.seed, u64::MAX);
    let item_vecs = normal_table(cfg.items, d, cfg.seed, u64::MAX - 1);
    let mut logits = vec![0.0; cfg.items];
    let mut query = vec![0.0; d];
    let sequences = (0..cfg.users)
        .map(|u| {
            let mut rng = stream(cfg.seed, u as u64);
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let uvec = &user_vecs[u * d..(u + 1) * d];
            let mut seq: Vec<usize> = Vec::with_capacity(len);
            for _ in 0..len {
                let prev = seq.last().copied();
                for (j, q) in query.iter_mut().enumerate() {
                    *q = 0.8 * uvec[j] + prev.map_or(0.0, |p| 0.2 * item_vecs[p * d + j]);
                }
                for (v, l) in logits.iter_mut().enumerate() {
                    let e = &item_vecs[v * d..(v + 1) * d];
                    *l = cfg.logit_scale * query.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits
                    .iter()
                    .enumerate()
                    .map(|(v, &l)| if Some(v) == prev { 0.0 } else { (l - max).exp() })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut x = rng.random::<f64>() * total;
                let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("some item is allowed");
                for (v, &w) in weights.iter().enumerate() {
                    if x < w {
                        pick = v;
                        break;
                    }
                    x -= w;
                }
                seq.push(pick);
            }
            seq
        })
        .collect();
    Ok(InteractionLog {
        sequences,
        user_ids: (0..cfg.users).map(|u| format!("u{u}")).collect(),
        item_ids: (0..cfg.items).map(|v| format!("i{v}")).collect(),
    })
}
