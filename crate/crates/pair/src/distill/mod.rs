//! Teacher scoring and threshold-based pseudo-label generation.
//!
//! A teacher assigns each (query, passage) pair a relevance score in
//! [0, 1]. Candidates retrieved for a query become positives when scored
//! strictly above s_pos and hard negatives when strictly below s_neg;
//! scores in between are discarded.

pub mod teacher;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{
    write_train_examples, Corpus, ExampleSource, PassageId, QueryId, TrainExample,
};
use crate::encoder::{EncoderModel, Role};
use crate::error::{PairError, Result};
use crate::index::{search, EmbeddingStore};

pub use teacher::{
    train_mini_cross_encoder, FileTeacher, MiniCrossEncoder, MiniTeacherConfig, OracleTeacher,
    OverlapTeacher, Teacher,
};

/// Mix a seed with record ids into a stream-specific RNG seed.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e3779b97f4a7c15;
    for x in [a, b] {
        h ^= x.wrapping_add(0x9e3779b97f4a7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51afd7ed558ccd);
        h ^= h >> 33;
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub struct PseudoLabelConfig {
    pub s_pos: f64,
    pub s_neg: f64,
    pub top_k: usize,
    pub max_negs_per_pos: usize,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        // thresholds 0.9/0.1; desk-scale top_k; 1:4 positive:negative ratio
        PseudoLabelConfig {
            s_pos: 0.9,
            s_neg: 0.1,
            top_k: 50,
            max_negs_per_pos: 4,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_neg && self.s_neg < self.s_pos && self.s_pos <= 1.0) {
            return Err(PairError::InvalidArgument(format!(
                "require 0 <= s_neg < s_pos <= 1, got s_pos={} s_neg={}",
                self.s_pos, self.s_neg
            )));
        }
        if self.top_k == 0 || self.max_negs_per_pos == 0 {
            return Err(PairError::InvalidArgument(
                "top_k and max_negs_per_pos must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PseudoLabelStats {
    pub n_queries_kept: usize,
    pub n_queries_discarded: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Candidates whose score fell inside [s_neg, s_pos].
    pub n_discarded: usize,
}

/// Teacher-derived train examples with provenance scores.
#[derive(Debug, Clone, Default)]
pub struct PseudoLabelSet {
    pub examples: Vec<TrainExample>,
    pub provenance: BTreeMap<(QueryId, PassageId), f64>,
    pub stats: PseudoLabelStats,
}

impl PseudoLabelSet {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_train_examples(path, &self.examples)
    }
}

/// First-stage candidate source for pseudo-labeling.
pub trait CandidateRetriever {
    fn top_k(&self, corpus: &Corpus, query: QueryId, k: usize) -> Result<Vec<PassageId>>;
}

/// Lexical full-scan retriever; serves as the fallback before any trained
/// encoder exists.
pub struct OverlapRetriever;

fn token_set(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

impl CandidateRetriever for OverlapRetriever {
    fn top_k(&self, corpus: &Corpus, query: QueryId, k: usize) -> Result<Vec<PassageId>> {
        let q = corpus
            .query(query)
            .ok_or_else(|| PairError::DanglingId(format!("query {query}")))?;
        let q_tokens = token_set(&q.text);
        let mut scored: Vec<(f64, PassageId)> = corpus
            .passages()
            .map(|p| {
                let p_tokens = token_set(&p.text);
                let inter = q_tokens.intersection(&p_tokens).count();
                let score = if q_tokens.is_empty() {
                    0.0
                } else {
                    inter as f64 / q_tokens.len() as f64
                };
                (score, p.id)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.cmp(&b.1))
        });
        Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
    }
}

/// Dense retriever over a built embedding store.
pub struct StoreRetriever<'a> {
    pub store: &'a EmbeddingStore,
    pub model: &'a EncoderModel,
}

impl CandidateRetriever for StoreRetriever<'_> {
    fn top_k(&self, corpus: &Corpus, query: QueryId, k: usize) -> Result<Vec<PassageId>> {
        let q = corpus
            .query(query)
            .ok_or_else(|| PairError::DanglingId(format!("query {query}")))?;
        let vec = self.model.encode_text(Role::Query, &q.text)?;
        Ok(search(self.store, &vec, k)?
            .into_iter()
            .map(|h| h.passage_id)
            .collect())
    }
}

fn sample_negatives(
    pool: &[PassageId],
    exclude: PassageId,
    max: usize,
    rng_seed: u64,
) -> Vec<PassageId> {
    let mut pool: Vec<PassageId> = pool.iter().copied().filter(|&p| p != exclude).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    pool.shuffle(&mut rng);
    pool.truncate(max);
    pool
}

struct LabeledQuery {
    gold: Vec<PassageId>,
}

fn label_queries(
    corpus: &Corpus,
    queries: &[QueryId],
    retriever: &dyn CandidateRetriever,
    teacher: &dyn Teacher,
    cfg: &PseudoLabelConfig,
    seed: u64,
    gold: impl Fn(QueryId) -> LabeledQuery,
) -> Result<PseudoLabelSet> {
    cfg.validate()?;
    let mut set = PseudoLabelSet::default();
    let mut sorted: Vec<QueryId> = queries.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &qid in &sorted {
        let golds = gold(qid).gold;
        let candidates = retriever.top_k(corpus, qid, cfg.top_k)?;
        if candidates.is_empty() && golds.is_empty() {
            set.stats.n_queries_discarded += 1;
            continue;
        }
        let mut positives: Vec<(PassageId, ExampleSource)> =
            golds.iter().map(|&p| (p, ExampleSource::Gold)).collect();
        let mut negatives: Vec<PassageId> = Vec::new();
        for &pid in &candidates {
            let score = teacher.score(corpus, qid, pid)?;
            set.provenance.insert((qid, pid), score);
            if golds.contains(&pid) {
                continue; // gold positives retained regardless of score
            }
            if score > cfg.s_pos {
                positives.push((pid, ExampleSource::Pseudo));
            } else if score < cfg.s_neg {
                negatives.push(pid);
            } else {
                set.stats.n_discarded += 1;
            }
        }
        if positives.is_empty() {
            set.stats.n_queries_discarded += 1;
            continue;
        }
        set.stats.n_queries_kept += 1;
        for (pid, src) in positives {
            let negs = sample_negatives(
                &negatives,
                pid,
                cfg.max_negs_per_pos,
                mix_seed(seed, qid.0 as u64, pid.0 as u64),
            );
            set.stats.n_pos += 1;
            set.stats.n_neg += negs.len();
            set.examples.push(TrainExample {
                query_id: qid,
                positive_id: pid,
                hard_negative_ids: negs,
                src,
            });
        }
    }
    Ok(set)
}

/// Pseudo-label unlabeled queries: retrieve top-k candidates, score them,
/// and emit one train example per discovered positive. Queries without a
/// positive are discarded and counted.
pub fn generate_pseudo_labels(
    corpus: &Corpus,
    queries: &[QueryId],
    retriever: &dyn CandidateRetriever,
    teacher: &dyn Teacher,
    cfg: &PseudoLabelConfig,
    seed: u64,
) -> Result<PseudoLabelSet> {
    label_queries(corpus, queries, retriever, teacher, cfg, seed, |_| {
        LabeledQuery { gold: vec![] }
    })
}

/// Re-label the labeled corpus: gold positives are always retained
/// (regardless of teacher score); teacher-discovered positives and
/// reliable hard negatives are added from the candidates.
pub fn relabel_labeled_corpus(
    corpus: &Corpus,
    retriever: &dyn CandidateRetriever,
    teacher: &dyn Teacher,
    cfg: &PseudoLabelConfig,
    seed: u64,
) -> Result<PseudoLabelSet> {
    let queries: Vec<QueryId> = corpus.labeled_queries().map(|q| q.id).collect();
    label_queries(corpus, &queries, retriever, teacher, cfg, seed, |qid| {
        LabeledQuery {
            gold: corpus.positives(qid).to_vec(),
        }
    })
}

/// Precision of pseudo positives and pseudo negatives against gold, on a
/// seeded sample of queries. Gold-sourced positives are excluded.
pub fn audit_quality(
    pseudo_set: &PseudoLabelSet,
    gold: &Corpus,
    sample_size: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut queries: Vec<QueryId> = pseudo_set
        .examples
        .iter()
        .map(|e| e.query_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if queries.is_empty() {
        return Err(PairError::InvalidArgument("empty pseudo-label set".into()));
    }
    if sample_size < queries.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        queries.shuffle(&mut rng);
        queries.truncate(sample_size);
        queries.sort_unstable();
    } else if sample_size > queries.len() {
        eprintln!(
            "pair: warning: sample_size {} exceeds {} available queries, using all",
            sample_size,
            queries.len()
        );
    }
    let sampled: BTreeSet<QueryId> = queries.into_iter().collect();
    let mut pos_total = 0usize;
    let mut pos_correct = 0usize;
    let mut neg_total = 0usize;
    let mut neg_correct = 0usize;
    let mut seen_pos: BTreeSet<(QueryId, PassageId)> = BTreeSet::new();
    for ex in &pseudo_set.examples {
        if !sampled.contains(&ex.query_id) {
            continue;
        }
        if ex.src == ExampleSource::Pseudo && seen_pos.insert((ex.query_id, ex.positive_id)) {
            pos_total += 1;
            if gold.is_relevant(ex.query_id, ex.positive_id) {
                pos_correct += 1;
            }
        }
        for &n in &ex.hard_negative_ids {
            neg_total += 1;
            if !gold.is_relevant(ex.query_id, n) {
                neg_correct += 1;
            }
        }
    }
    let acc_pos = if pos_total == 0 {
        1.0
    } else {
        pos_correct as f64 / pos_total as f64
    };
    let acc_neg = if neg_total == 0 {
        1.0
    } else {
        neg_correct as f64 / neg_total as f64
    };
    Ok((acc_pos, acc_neg))
}

/// Write a scores cache as `<query_id>\t<passage_id>\t<score>` TSV
/// (internal ids), loadable as a file teacher.
pub fn write_scores_cache(path: &Path, scores: &BTreeMap<(QueryId, PassageId), f64>) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    for (&(q, p), &s) in scores {
        writeln!(file, "{q}\t{p}\t{s}").map_err(|e| PairError::io(path.display().to_string(), e))?;
    }
    Ok(())
}
