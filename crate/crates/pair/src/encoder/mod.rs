//! Compact shared-parameter text encoder: hashed bag-of-features pooled
//! into an embedding, followed by a two-layer tanh MLP. Gradients are
//! closed-form; no autodiff.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Hashed vocabulary size.
    pub v: usize,
    pub d_emb: usize,
    pub d_h: usize,
    /// Output dimension.
    pub d: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.v == 0 || self.d_emb == 0 || self.d_h == 0 || self.d == 0 {
            return Err(PairError::InvalidArgument(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All trainable weights of the encoder. One parameter set serves both
/// query and passage encoding in the shared configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub hash_seed: u64,
    /// V x d_emb, row-major.
    pub embedding: Vec<f64>,
    /// d_emb x d_h, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// d_h x d, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    /// Seeded init: weights and embeddings uniform in [-0.05, 0.05],
    /// biases zero. Values are f32-representable so checkpoints round-trip
    /// exactly.
    pub fn init(dims: EncoderDims, hash_seed: u64, init_seed: u64) -> Result<EncoderParams> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-0.05f32..0.05f32) as f64)
                .collect()
        };
        Ok(EncoderParams {
            dims,
            hash_seed,
            embedding: uniform(dims.v * dims.d_emb),
            w1: uniform(dims.d_emb * dims.d_h),
            b1: vec![0.0; dims.d_h],
            w2: uniform(dims.d_h * dims.d),
            b2: vec![0.0; dims.d],
        })
    }

    pub fn zeros(dims: EncoderDims, hash_seed: u64) -> Result<EncoderParams> {
        dims.validate()?;
        Ok(EncoderParams {
            dims,
            hash_seed,
            embedding: vec![0.0; dims.v * dims.d_emb],
            w1: vec![0.0; dims.d_emb * dims.d_h],
            b1: vec![0.0; dims.d_h],
            w2: vec![0.0; dims.d_h * dims.d],
            b2: vec![0.0; dims.d],
        })
    }

    /// Number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.embedding.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Deterministic bag of hashed features for one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBag {
    /// Sorted, unique ids in [0, V).
    pub feature_ids: Vec<u32>,
    /// Parallel counts, each >= 1.
    pub counts: Vec<u32>,
}

impl FeatureBag {
    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a, seed mixed into the offset basis.
fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Case-folded word-unigram + character-trigram features, hashed modulo V.
pub fn featurize(text: &str, hash_seed: u64, v: usize) -> Result<FeatureBag> {
    let folded = text.to_lowercase();
    let trimmed = folded.trim();
    if trimmed.is_empty() {
        return Err(PairError::InvalidArgument("cannot featurize empty text".into()));
    }
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut bump = |feature: &str| {
        let id = (fnv1a64(feature.as_bytes(), hash_seed) % v as u64) as u32;
        *counts.entry(id).or_insert(0) += 1;
    };
    for token in trimmed.split_whitespace() {
        bump(&format!("w:{token}"));
        let chars: Vec<char> = token.chars().collect();
        for window in chars.windows(3) {
            let tri: String = window.iter().collect();
            bump(&format!("t:{tri}"));
        }
    }
    let (feature_ids, counts) = counts.into_iter().unzip();
    Ok(FeatureBag {
        feature_ids,
        counts,
    })
}

fn check_finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(PairError::NonFinite(format!("encoder layer {layer}")));
    }
    Ok(())
}

/// Count-weighted mean of the embedding rows selected by the bag.
fn pool(params: &EncoderParams, bag: &FeatureBag) -> Vec<f64> {
    let d_emb = params.dims.d_emb;
    let total = bag.total_count() as f64;
    let mut out = vec![0.0; d_emb];
    for (&id, &count) in bag.feature_ids.iter().zip(&bag.counts) {
        let row = &params.embedding[id as usize * d_emb..(id as usize + 1) * d_emb];
        let w = count as f64 / total;
        for (o, &r) in out.iter_mut().zip(row) {
            *o += w * r;
        }
    }
    out
}

/// Forward pass: v = W2^T tanh(W1^T pool + b1) + b2.
pub fn encode(params: &EncoderParams, bag: &FeatureBag) -> Result<Vec<f64>> {
    if let Some(&id) = bag.feature_ids.iter().find(|&&id| id as usize >= params.dims.v) {
        return Err(PairError::InvalidArgument(format!(
            "feature id {id} out of range for V={}",
            params.dims.v
        )));
    }
    let (d_emb, d_h, d) = (params.dims.d_emb, params.dims.d_h, params.dims.d);
    let pooled = pool(params, bag);
    check_finite("pool", &pooled)?;
    let mut hidden = params.b1.clone();
    for (i, &p) in pooled.iter().enumerate() {
        let row = &params.w1[i * d_h..(i + 1) * d_h];
        for (h, &w) in hidden.iter_mut().zip(row) {
            *h += p * w;
        }
    }
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }
    check_finite("hidden", &hidden)?;
    let mut out = params.b2.clone();
    for (j, &h) in hidden.iter().enumerate() {
        let row = &params.w2[j * d..(j + 1) * d];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += h * w;
        }
    }
    check_finite("output", &out)?;
    debug_assert_eq!(pooled.len(), d_emb);
    Ok(out)
}

/// Gradients of `encode` w.r.t. every parameter. Embedding gradients are
/// sparse: only rows touched by some bag carry entries.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub dims: EncoderDims,
    pub embedding_rows: BTreeMap<u32, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(dims: EncoderDims) -> ParamGrads {
        ParamGrads {
            dims,
            embedding_rows: BTreeMap::new(),
            w1: vec![0.0; dims.d_emb * dims.d_h],
            b1: vec![0.0; dims.d_h],
            w2: vec![0.0; dims.d_h * dims.d],
            b2: vec![0.0; dims.d],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.embedding_rows.values_mut() {
            for g in row.iter_mut() {
                *g *= factor;
            }
        }
        for g in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *g *= factor;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        let dense: f64 = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .map(|g| g * g)
            .sum();
        let sparse: f64 = self
            .embedding_rows
            .values()
            .flat_map(|row| row.iter())
            .map(|g| g * g)
            .sum();
        dense + sparse
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(self.embedding_rows.values().flatten())
            .all(|g| g.is_finite())
    }
}

/// Accumulate exact analytic gradients of `encode(params, bag)` against
/// `grad_output` into `grads`.
pub fn accumulate_backward(
    params: &EncoderParams,
    bag: &FeatureBag,
    grad_output: &[f64],
    grads: &mut ParamGrads,
) -> Result<()> {
    let (d_emb, d_h, d) = (params.dims.d_emb, params.dims.d_h, params.dims.d);
    if grad_output.len() != d {
        return Err(PairError::ShapeMismatch(format!(
            "grad_output has length {}, expected {d}",
            grad_output.len()
        )));
    }
    if grads.dims != params.dims {
        return Err(PairError::ShapeMismatch("grad buffer dims".into()));
    }
    if grad_output.iter().any(|g| !g.is_finite()) {
        return Err(PairError::NonFinite("grad_output".into()));
    }

    // Recompute the forward activations.
    let pooled = pool(params, bag);
    let mut hidden = params.b1.clone();
    for (i, &p) in pooled.iter().enumerate() {
        let row = &params.w1[i * d_h..(i + 1) * d_h];
        for (h, &w) in hidden.iter_mut().zip(row) {
            *h += p * w;
        }
    }
    for h in hidden.iter_mut() {
        *h = h.tanh();
    }

    // out = W2^T h + b2
    for (g_b2, &g) in grads.b2.iter_mut().zip(grad_output) {
        *g_b2 += g;
    }
    let mut d_hidden = vec![0.0; d_h];
    for (j, &h) in hidden.iter().enumerate() {
        let w_row = &params.w2[j * d..(j + 1) * d];
        let g_row = &mut grads.w2[j * d..(j + 1) * d];
        let mut acc = 0.0;
        for k in 0..d {
            g_row[k] += h * grad_output[k];
            acc += w_row[k] * grad_output[k];
        }
        d_hidden[j] = acc;
    }

    // h = tanh(pre1)
    let d_pre1: Vec<f64> = d_hidden
        .iter()
        .zip(&hidden)
        .map(|(&dh, &h)| dh * (1.0 - h * h))
        .collect();
    for (g_b1, &g) in grads.b1.iter_mut().zip(&d_pre1) {
        *g_b1 += g;
    }
    let mut d_pool = vec![0.0; d_emb];
    for (i, &p) in pooled.iter().enumerate() {
        let w_row = &params.w1[i * d_h..(i + 1) * d_h];
        let g_row = &mut grads.w1[i * d_h..(i + 1) * d_h];
        let mut acc = 0.0;
        for j in 0..d_h {
            g_row[j] += p * d_pre1[j];
            acc += w_row[j] * d_pre1[j];
        }
        d_pool[i] = acc;
    }

    // pool = count-weighted mean of touched embedding rows.
    let total = bag.total_count() as f64;
    for (&id, &count) in bag.feature_ids.iter().zip(&bag.counts) {
        let w = count as f64 / total;
        let row = grads
            .embedding_rows
            .entry(id)
            .or_insert_with(|| vec![0.0; d_emb]);
        for (g, &dp) in row.iter_mut().zip(&d_pool) {
            *g += w * dp;
        }
    }
    Ok(())
}

/// Convenience wrapper returning a fresh gradient buffer.
pub fn encode_backward(
    params: &EncoderParams,
    bag: &FeatureBag,
    grad_output: &[f64],
) -> Result<ParamGrads> {
    let mut grads = ParamGrads::zeros(params.dims);
    accumulate_backward(params, bag, grad_output, &mut grads)?;
    Ok(grads)
}

/// Role under which a text is encoded. With shared parameters the role is
/// irrelevant to the output; the split configuration (the no-shared-params
/// ablation) keeps two independent parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Passage,
}

/// The dual encoder: either one shared parameter set or two independent
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderModel {
    Shared(EncoderParams),
    Split {
        query: EncoderParams,
        passage: EncoderParams,
    },
}

impl EncoderModel {
    pub fn params(&self, role: Role) -> &EncoderParams {
        match self {
            EncoderModel::Shared(p) => p,
            EncoderModel::Split { query, passage } => match role {
                Role::Query => query,
                Role::Passage => passage,
            },
        }
    }

    pub fn dims(&self) -> EncoderDims {
        self.params(Role::Query).dims
    }

    pub fn hash_seed(&self) -> u64 {
        self.params(Role::Query).hash_seed
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, EncoderModel::Shared(_))
    }

    pub fn encode_text(&self, role: Role, text: &str) -> Result<Vec<f64>> {
        let params = self.params(role);
        let bag = featurize(text, params.hash_seed, params.dims.v)?;
        encode(params, &bag)
    }
}
