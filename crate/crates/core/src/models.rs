//! Sequential scorers: a shared item-embedding table, a mean-pool or GRU
//! query encoder, and inner-product scores.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::stream;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanPool,
    Gru,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_pool" => Ok(EncoderKind::MeanPool),
            "gru" => Ok(EncoderKind::Gru),
            _ => Err(Error::Config(format!("unknown encoder {s:?}"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::MeanPool => "mean_pool",
            EncoderKind::Gru => "gru",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Normal with standard deviation 0.02, zero biases.
    #[default]
    Normal,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    Xavier,
}

/// Names of the GRU tensors in storage order.
pub const GRU_TENSORS: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"];

/// Model parameters in declared order: the item table, the GRU tensors
/// when the encoder is a GRU, then the NCE offset when present.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderKind,
    pub d: usize,
    pub item_count: usize,
    pub has_nce_offset: bool,
    pub tensors: Vec<Rc<Tensor>>,
}

impl ModelParams {
    pub fn new(
        item_count: usize,
        d: usize,
        encoder: EncoderKind,
        init: Init,
        has_nce_offset: bool,
        seed: u64,
    ) -> Result<Self> {
        if item_count == 0 || d == 0 {
            return Err(Error::Argument("item_count and d must be positive".into()));
        }
        let shapes = Self::shapes_for(item_count, d, encoder, has_nce_offset);
        let tensors = shapes
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let mut rng = stream(seed, i as u64);
                let t = if shape.len() == 2 {
                    match init {
                        Init::Normal => {
                            let n = Normal::new(0.0, 0.02).expect("valid std");
                            Tensor::from_fn(shape, |_| n.sample(&mut rng))
                        }
                        Init::Xavier => {
                            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                            Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
                        }
                    }
                } else {
                    Tensor::zeros(shape)
                };
                Rc::new(t)
            })
            .collect();
        Ok(ModelParams {
            encoder,
            d,
            item_count,
            has_nce_offset,
            tensors,
        })
    }

    fn shapes_for(item_count: usize, d: usize, encoder: EncoderKind, nce: bool) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![item_count, d]];
        if encoder == EncoderKind::Gru {
            for _ in 0..3 {
                shapes.extend([vec![d, d], vec![d, d], vec![d]]);
            }
        }
        if nce {
            shapes.push(vec![]);
        }
        shapes
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut names = vec!["item_embeddings"];
        if self.encoder == EncoderKind::Gru {
            names.extend(GRU_TENSORS);
        }
        if self.has_nce_offset {
            names.push("nce_offset");
        }
        names
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.tensors[0]
    }

    pub fn nce_offset_index(&self) -> Option<usize> {
        self.has_nce_offset.then(|| self.tensors.len() - 1)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    /// Checks shapes against `d`, `item_count` and the encoder.
    pub fn validate(&self) -> Result<()> {
        let want = Self::shapes_for(self.item_count, self.d, self.encoder, self.has_nce_offset);
        let got: Vec<Vec<usize>> = self.tensors.iter().map(|t| t.shape().to_vec()).collect();
        if want != got {
            return Err(Error::Shape(format!("parameter shapes {got:?}, expected {want:?}")));
        }
        Ok(())
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(Rc::clone(t))).collect(),
            encoder: self.encoder,
            nce: self.has_nce_offset,
        }
    }

    /// Registers every tensor as a constant (no gradients).
    pub fn bind_constant(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(Rc::clone(t))).collect(),
            encoder: self.encoder,
            nce: self.has_nce_offset,
        }
    }
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    encoder: EncoderKind,
    nce: bool,
}

impl Bound {
    pub fn table(&self) -> Var {
        self.vars[0]
    }

    pub fn nce_offset(&self) -> Option<Var> {
        self.nce.then(|| *self.vars.last().expect("nonempty"))
    }

    /// Encodes a batch of histories into a `B×d` matrix.
    pub fn encode(&self, g: &Graph, histories: &[&[usize]]) -> Result<Var> {
        if histories.is_empty() || histories.iter().any(|h| h.is_empty()) {
            return Err(Error::Argument("histories must be nonempty".into()));
        }
        match self.encoder {
            EncoderKind::MeanPool => {
                let ids: Vec<usize> = histories.iter().flat_map(|h| h.iter().copied()).collect();
                let lengths: Vec<usize> = histories.iter().map(|h| h.len()).collect();
                let rows = g.gather_rows(self.table(), &ids)?;
                g.segment_mean(rows, &lengths)
            }
            EncoderKind::Gru => self.encode_gru(g, histories),
        }
    }

    /// Single-layer GRU from a zero state over left-padded histories; padded
    /// steps leave the state untouched.
    fn encode_gru(&self, g: &Graph, histories: &[&[usize]]) -> Result<Var> {
        let b = histories.len();
        let d = g.value(self.table()).dims2()?.1;
        let steps = histories.iter().map(|h| h.len()).max().unwrap_or(0);
        let w = &self.vars[1..10];
        let mut h = g.constant(Tensor::zeros(vec![b, d]));
        for t in 0..steps {
            let mut ids = Vec::with_capacity(b);
            let mut mask = Vec::with_capacity(b * d);
            let mut any_pad = false;
            for hist in histories {
                let offset = steps - hist.len();
                let live = t >= offset;
                any_pad |= !live;
                ids.push(if live { hist[t - offset] } else { hist[0] });
                mask.extend(std::iter::repeat_n(if live { 1.0 } else { 0.0 }, d));
            }
            let x = g.gather_rows(self.table(), &ids)?;
            let gate = |wx: Var, uh: Var, bias: Var, inp: Var, state: Var| -> Result<Var> {
                let a = g.matmul(inp, wx)?;
                let c = g.matmul(state, uh)?;
                g.add_bias(g.add(a, c)?, bias)
            };
            let z = g.sigmoid(gate(w[0], w[1], w[2], x, h)?)?;
            let r = g.sigmoid(gate(w[3], w[4], w[5], x, h)?)?;
            let rh = g.mul(r, h)?;
            let n = g.tanh(gate(w[6], w[7], w[8], x, rh)?)?;
            // h' = n + z ⊙ (h − n)
            let h_new = g.add(n, g.mul(z, g.sub(h, n)?)?)?;
            h = if any_pad {
                let m = g.constant(Tensor::matrix(b, d, mask)?);
                g.add(h, g.mul(m, g.sub(h_new, h)?)?)?
            } else {
                h_new
            };
        }
        Ok(h)
    }

    /// `B×N` scores of every item.
    pub fn score_all(&self, g: &Graph, h: Var) -> Result<Var> {
        g.matmul_bt(h, self.table())
    }

    /// `B×G` scores where row `b` scores `ids[b·G .. (b+1)·G]`.
    pub fn score_groups(&self, g: &Graph, h: Var, ids: &[usize], group: usize) -> Result<Var> {
        g.gather_dot(h, self.table(), ids, group)
    }
}

/// Query vector for one history.
pub fn encode(params: &ModelParams, history: &[usize]) -> Result<Vec<f64>> {
    let g = Graph::new();
    let bound = params.bind_constant(&g);
    let h = bound.encode(&g, &[history])?;
    Ok(g.value(h).data().to_vec())
}

/// Inner products of `h` with every item embedding.
pub fn score_all(params: &ModelParams, h: &[f64]) -> Result<Vec<f64>> {
    let table = params.embeddings();
    if h.len() != params.d {
        return Err(Error::Shape(format!(
            "query of length {} for d = {}",
            h.len(),
            params.d
        )));
    }
    Ok((0..params.item_count)
        .map(|v| table.row(v).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect())
}

/// Inner products of `h` with the listed items, in order.
pub fn score_subset(params: &ModelParams, h: &[f64], ids: &[usize]) -> Result<Vec<f64>> {
    if h.len() != params.d {
        return Err(Error::Shape(format!(
            "query of length {} for d = {}",
            h.len(),
            params.d
        )));
    }
    let table = params.embeddings();
    ids.iter()
        .map(|&v| {
            if v >= params.item_count {
                return Err(Error::Index {
                    index: v,
                    len: params.item_count,
                });
            }
            Ok(table.row(v).iter().zip(h).map(|(a, b)| a * b).sum())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

/// First line of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub encoder: EncoderKind,
    pub d: usize,
    pub item_count: usize,
    pub max_len: usize,
    pub seed: u64,
    pub config_hash: String,
    pub tensors: Vec<TensorHeader>,
}

const CHECKPOINT_FORMAT: &str = "ranklab-checkpoint-v1";

/// Writes a JSON header line followed by every parameter as little-endian
/// f64 in declared order.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    max_len: usize,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        encoder: params.encoder,
        d: params.d,
        item_count: params.item_count,
        max_len,
        seed,
        config_hash: config_hash.into(),
        tensors: params
            .names()
            .into_iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorHeader {
                name: n.into(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(params.numel() * 8);
    for t in &params.tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointHeader)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!(
            "unsupported checkpoint format {:?}",
            header.format
        )));
    }
    let mut blob = bytes[split + 1..].chunks_exact(8);
    if !blob.remainder().is_empty() {
        return Err(Error::Config("checkpoint blob is not a whole number of f64".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for th in &header.tensors {
        let n: usize = th.shape.iter().product();
        let data: Vec<f64> = blob
            .by_ref()
            .take(n)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.len() != n {
            return Err(Error::Config(format!("checkpoint truncated in {}", th.name)));
        }
        tensors.push(Rc::new(Tensor::new(th.shape.clone(), data)?));
    }
    if blob.next().is_some() {
        return Err(Error::Config("checkpoint has trailing data".into()));
    }
    let params = ModelParams {
        encoder: header.encoder,
        d: header.d,
        item_count: header.item_count,
        has_nce_offset: header.tensors.last().is_some_and(|t| t.name == "nce_offset"),
        tensors,
    };
    params.validate()?;
    let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != params.names() {
        return Err(Error::Config(format!("unexpected tensor list {names:?}")));
    }
    Ok((params, header))
}
