//! Teacher implementations: gold-label oracle (optionally noisy), lexical
//! overlap scorer, a mini interaction-feature cross-encoder, and a score
//! cache loaded from file.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, PassageId, QueryId};
use crate::distill::mix_seed;
use crate::error::{PairError, Result};

/// Deterministic relevance scorer in [0, 1].
pub trait Teacher {
    fn score(&self, corpus: &Corpus, query: QueryId, passage: PassageId) -> Result<f64>;
}

/// Scores 1 for gold pairs and 0 otherwise, plus optional clamped
/// Gaussian noise. Enables controlled label-quality experiments.
#[derive(Debug, Clone, Copy)]
pub struct OracleTeacher {
    pub noise_sigma: f64,
    pub seed: u64,
}

impl OracleTeacher {
    pub fn noiseless() -> Self {
        OracleTeacher {
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(sigma: f64, seed: u64) -> Self {
        OracleTeacher {
            noise_sigma: sigma,
            seed,
        }
    }
}

impl Teacher for OracleTeacher {
    fn score(&self, corpus: &Corpus, query: QueryId, passage: PassageId) -> Result<f64> {
        let base = if corpus.is_relevant(query, passage) {
            1.0
        } else {
            0.0
        };
        if self.noise_sigma == 0.0 {
            return Ok(base);
        }
        // per-pair RNG keeps scores independent of evaluation order
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(self.seed, query.0 as u64, passage.0 as u64));
        let normal = Normal::new(0.0, self.noise_sigma)
            .map_err(|_| PairError::InvalidArgument("bad noise sigma".into()))?;
        Ok((base + normal.sample(&mut rng)).clamp(0.0, 1.0))
    }
}

/// Logistic of the fraction of query tokens contained in the passage.
/// Cheap and label-free; monotone in lexical overlap.
#[derive(Debug, Clone, Copy)]
pub struct OverlapTeacher {
    pub slope: f64,
    pub midpoint: f64,
}

impl Default for OverlapTeacher {
    fn default() -> Self {
        OverlapTeacher {
            slope: 8.0,
            midpoint: 0.5,
        }
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

impl OverlapTeacher {
    pub fn overlap(q_text: &str, p_text: &str) -> f64 {
        let q: std::collections::BTreeSet<String> = tokens(q_text).into_iter().collect();
        let p: std::collections::BTreeSet<String> = tokens(p_text).into_iter().collect();
        if q.is_empty() {
            return 0.0;
        }
        q.intersection(&p).count() as f64 / q.len() as f64
    }
}

impl Teacher for OverlapTeacher {
    fn score(&self, corpus: &Corpus, query: QueryId, passage: PassageId) -> Result<f64> {
        let q = corpus
            .query(query)
            .ok_or_else(|| PairError::DanglingId(format!("query {query}")))?;
        let p = corpus
            .passage(passage)
            .ok_or_else(|| PairError::DanglingId(format!("passage {passage}")))?;
        let overlap = OverlapTeacher::overlap(&q.text, &p.text);
        Ok(sigmoid(self.slope * (overlap - self.midpoint)))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy)]
pub struct MiniTeacherConfig {
    /// Hashed feature bins per segment (query, passage, intersection).
    pub v: usize,
    pub d_h: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negs_per_pos: usize,
    pub seed: u64,
}

impl Default for MiniTeacherConfig {
    fn default() -> Self {
        MiniTeacherConfig {
            v: 512,
            d_h: 16,
            epochs: 10,
            lr: 0.5,
            negs_per_pos: 4,
            seed: 0,
        }
    }
}

/// Interaction-feature cross-encoder stand-in: hashed token counts of the
/// query, the passage, and their intersection feed a one-hidden-layer MLP
/// with a sigmoid output, trained with pointwise binary cross-entropy.
#[derive(Debug, Clone)]
pub struct MiniCrossEncoder {
    pub v: usize,
    pub d_h: usize,
    pub hash_seed: u64,
    /// 3V x d_h, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MiniCrossEncoder {
    fn new(cfg: &MiniTeacherConfig) -> MiniCrossEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect()
        };
        MiniCrossEncoder {
            v: cfg.v,
            d_h: cfg.d_h,
            hash_seed: cfg.seed,
            w1: uniform(3 * cfg.v * cfg.d_h),
            b1: vec![0.0; cfg.d_h],
            w2: uniform(cfg.d_h),
            b2: 0.0,
        }
    }

    fn hash_token(&self, token: &str) -> usize {
        let mut h = 0xcbf29ce484222325u64 ^ self.hash_seed;
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        (h % self.v as u64) as usize
    }

    /// Sparse normalized features: query tokens in [0, V), passage tokens
    /// in [V, 2V), intersection tokens in [2V, 3V).
    fn features(&self, q_text: &str, p_text: &str) -> Vec<(usize, f64)> {
        let q_tokens = tokens(q_text);
        let p_tokens = tokens(p_text);
        let q_set: std::collections::BTreeSet<&String> = q_tokens.iter().collect();
        let inter: Vec<&String> = p_tokens.iter().filter(|t| q_set.contains(t)).collect();
        let mut feats: BTreeMap<usize, f64> = BTreeMap::new();
        let mut add = |offset: usize, toks: &[&String]| {
            if toks.is_empty() {
                return;
            }
            let w = 1.0 / toks.len() as f64;
            for t in toks {
                *feats.entry(offset + self.hash_token(t)).or_insert(0.0) += w;
            }
        };
        let q_refs: Vec<&String> = q_tokens.iter().collect();
        let p_refs: Vec<&String> = p_tokens.iter().collect();
        add(0, &q_refs);
        add(self.v, &p_refs);
        add(2 * self.v, &inter);
        feats.into_iter().collect()
    }

    fn forward(&self, feats: &[(usize, f64)]) -> (f64, Vec<f64>) {
        let mut hidden = self.b1.clone();
        for &(i, x) in feats {
            let row = &self.w1[i * self.d_h..(i + 1) * self.d_h];
            for (h, &w) in hidden.iter_mut().zip(row) {
                *h += x * w;
            }
        }
        for h in hidden.iter_mut() {
            *h = h.tanh();
        }
        let z = self.b2 + self.w2.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        (sigmoid(z), hidden)
    }

    pub fn score_texts(&self, q_text: &str, p_text: &str) -> f64 {
        self.forward(&self.features(q_text, p_text)).0
    }

    /// One BCE step on a single (pair, label); returns the loss.
    fn sgd_step(&mut self, q_text: &str, p_text: &str, label: f64, lr: f64) -> f64 {
        let feats = self.features(q_text, p_text);
        let (s, hidden) = self.forward(&feats);
        let eps = 1e-12;
        let loss = -(label * (s + eps).ln() + (1.0 - label) * (1.0 - s + eps).ln());
        let dz = s - label;
        let mut d_hidden = vec![0.0; self.d_h];
        for j in 0..self.d_h {
            d_hidden[j] = self.w2[j] * dz;
            self.w2[j] -= lr * dz * hidden[j];
        }
        self.b2 -= lr * dz;
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&hidden)
            .map(|(&dh, &h)| dh * (1.0 - h * h))
            .collect();
        for j in 0..self.d_h {
            self.b1[j] -= lr * d_pre[j];
        }
        for &(i, x) in &feats {
            let row = &mut self.w1[i * self.d_h..(i + 1) * self.d_h];
            for (w, &dp) in row.iter_mut().zip(&d_pre) {
                *w -= lr * x * dp;
            }
        }
        loss
    }
}

impl Teacher for MiniCrossEncoder {
    fn score(&self, corpus: &Corpus, query: QueryId, passage: PassageId) -> Result<f64> {
        let q = corpus
            .query(query)
            .ok_or_else(|| PairError::DanglingId(format!("query {query}")))?;
        let p = corpus
            .passage(passage)
            .ok_or_else(|| PairError::DanglingId(format!("passage {passage}")))?;
        Ok(self.score_texts(&q.text, &p.text))
    }
}

/// Train the mini cross-encoder on gold positives vs uniformly sampled
/// negatives with pointwise BCE.
pub fn train_mini_cross_encoder(
    corpus: &Corpus,
    cfg: &MiniTeacherConfig,
) -> Result<MiniCrossEncoder> {
    let golds: Vec<(QueryId, PassageId)> = corpus.qrels().collect();
    if golds.is_empty() {
        return Err(PairError::InvalidArgument(
            "cannot train teacher: corpus has no qrels".into(),
        ));
    }
    let passage_ids: Vec<PassageId> = corpus.passages().map(|p| p.id).collect();
    let mut teacher = MiniCrossEncoder::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xbce, golds.len() as u64));
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..golds.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let (qid, pid) = golds[idx];
            let q_text = &corpus.query(qid).unwrap().text;
            teacher.sgd_step(q_text, &corpus.passage(pid).unwrap().text, 1.0, cfg.lr);
            for _ in 0..cfg.negs_per_pos {
                let neg = loop {
                    let cand = passage_ids[rng.gen_range(0..passage_ids.len())];
                    if !corpus.is_relevant(qid, cand) {
                        break cand;
                    }
                };
                teacher.sgd_step(q_text, &corpus.passage(neg).unwrap().text, 0.0, cfg.lr);
            }
        }
    }
    Ok(teacher)
}

/// Teacher backed by a scores cache TSV (`<query_id>\t<passage_id>\t<score>`,
/// internal ids).
#[derive(Debug, Clone, Default)]
pub struct FileTeacher {
    scores: BTreeMap<(QueryId, PassageId), f64>,
}

impl FileTeacher {
    pub fn load(path: &Path) -> Result<FileTeacher> {
        let file =
            std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
        let mut scores = BTreeMap::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let parsed = (|| -> Option<(u32, u32, f64)> {
                if f.len() != 3 {
                    return None;
                }
                Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?))
            })();
            let (q, p, s) = parsed.ok_or_else(|| PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected <query_id>\\t<passage_id>\\t<score>".into(),
            })?;
            scores.insert((QueryId(q), PassageId(p)), s.clamp(0.0, 1.0));
        }
        Ok(FileTeacher { scores })
    }
}

impl Teacher for FileTeacher {
    fn score(&self, _corpus: &Corpus, query: QueryId, passage: PassageId) -> Result<f64> {
        self.scores
            .get(&(query, passage))
            .copied()
            .ok_or_else(|| {
                PairError::InvalidArgument(format!(
                    "score cache has no entry for ({query}, {passage})"
                ))
            })
    }
}
