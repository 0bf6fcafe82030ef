//! Similarity scores, in-batch candidate construction, query-centric and
//! passage-centric losses, and their gradients with respect to the batch
//! encodings.
//!
//! The query-centric loss ranks each query's positive against every other
//! positive and every hard negative in the batch. The passage-centric loss
//! anchors at the positive passage and ranks its query against passage
//! negatives. The combined loss is (1 - alpha) * L_Q + alpha * L_P.

use crate::corpus::PassageId;
use crate::error::{PairError, Result};

/// Logit used to mask false in-batch negatives (candidates sharing the
/// anchor's positive passage id). Underflows to zero probability in the
/// softmax.
pub const MASK_LOGIT: f64 = -1e9;

/// Raw dot product (no length normalization).
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(PairError::ShapeMismatch(format!(
            "similarity of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dot(u, v))
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Which passage negatives enter the passage-centric candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PassagePool {
    /// Other examples' positives plus all hard negatives in the batch.
    #[default]
    PositivesAndHardNegs,
    /// Hard negatives only.
    HardNegsOnly,
}

/// Encoded batch: aligned query/positive/hard-negative vectors. Hard
/// negative lists may be ragged across examples.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub q_vecs: Vec<Vec<f64>>,
    pub pos_vecs: Vec<Vec<f64>>,
    pub neg_vecs: Vec<Vec<Vec<f64>>>,
    pub pos_ids: Vec<PassageId>,
    pub neg_ids: Vec<Vec<PassageId>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.q_vecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_vecs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        if b == 0 {
            return Err(PairError::InvalidArgument("empty batch".into()));
        }
        if self.pos_vecs.len() != b
            || self.neg_vecs.len() != b
            || self.pos_ids.len() != b
            || self.neg_ids.len() != b
        {
            return Err(PairError::ShapeMismatch("batch arrays not aligned".into()));
        }
        let d = self.q_vecs[0].len();
        for vec in self
            .q_vecs
            .iter()
            .chain(&self.pos_vecs)
            .chain(self.neg_vecs.iter().flatten())
        {
            if vec.len() != d {
                return Err(PairError::ShapeMismatch("inconsistent vector dims".into()));
            }
            if vec.iter().any(|x| !x.is_finite()) {
                return Err(PairError::NonFinite("batch vector".into()));
            }
        }
        for (negs, ids) in self.neg_vecs.iter().zip(&self.neg_ids) {
            if negs.len() != ids.len() {
                return Err(PairError::ShapeMismatch("negative ids not aligned".into()));
            }
        }
        Ok(())
    }
}

/// What a candidate column refers to, for routing gradients back to the
/// owning vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandRef {
    Query(usize),
    Positive(usize),
    /// (example index, negative index within that example)
    HardNeg(usize, usize),
}

/// Per-row candidate logits with their vector references and the target
/// column of each row.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub logits: Vec<Vec<f64>>,
    pub refs: Vec<Vec<CandRef>>,
    pub targets: Vec<usize>,
}

fn vec_for<'a>(batch: &'a TrainBatch, r: CandRef) -> &'a [f64] {
    match r {
        CandRef::Query(i) => &batch.q_vecs[i],
        CandRef::Positive(i) => &batch.pos_vecs[i],
        CandRef::HardNeg(i, h) => &batch.neg_vecs[i][h],
    }
}

fn id_for(batch: &TrainBatch, r: CandRef) -> Option<PassageId> {
    match r {
        CandRef::Query(_) => None,
        CandRef::Positive(i) => Some(batch.pos_ids[i]),
        CandRef::HardNeg(i, h) => Some(batch.neg_ids[i][h]),
    }
}

/// Query-centric candidates: row i scores q_i against every positive and
/// every hard negative in the batch. Target column is example i's own
/// positive. Candidates sharing the anchor's positive id are masked.
pub fn build_candidates_q(batch: &TrainBatch) -> Result<Candidates> {
    batch.validate()?;
    let b = batch.len();
    let mut cols: Vec<CandRef> = (0..b).map(CandRef::Positive).collect();
    for (i, negs) in batch.neg_vecs.iter().enumerate() {
        for h in 0..negs.len() {
            cols.push(CandRef::HardNeg(i, h));
        }
    }
    let mut logits = Vec::with_capacity(b);
    let mut refs = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for i in 0..b {
        let row: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(c, &r)| {
                if c != i && id_for(batch, r) == Some(batch.pos_ids[i]) {
                    MASK_LOGIT
                } else {
                    dot(&batch.q_vecs[i], vec_for(batch, r))
                }
            })
            .collect();
        logits.push(row);
        refs.push(cols.clone());
        targets.push(i);
    }
    Ok(Candidates {
        logits,
        refs,
        targets,
    })
}

/// Passage-centric candidates: row i anchors at p+_i. Column 0 is the
/// target s(p+_i, q_i); the rest are passage negatives per `pool`.
pub fn build_candidates_p(batch: &TrainBatch, pool: PassagePool) -> Result<Candidates> {
    batch.validate()?;
    let b = batch.len();
    let mut logits = Vec::with_capacity(b);
    let mut refs = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for i in 0..b {
        let mut cols: Vec<CandRef> = vec![CandRef::Query(i)];
        if pool == PassagePool::PositivesAndHardNegs {
            cols.extend((0..b).filter(|&j| j != i).map(CandRef::Positive));
        }
        for (j, negs) in batch.neg_vecs.iter().enumerate() {
            for h in 0..negs.len() {
                cols.push(CandRef::HardNeg(j, h));
            }
        }
        let row: Vec<f64> = cols
            .iter()
            .enumerate()
            .map(|(c, &r)| {
                if c != 0 && id_for(batch, r) == Some(batch.pos_ids[i]) {
                    MASK_LOGIT
                } else {
                    dot(&batch.pos_vecs[i], vec_for(batch, r))
                }
            })
            .collect();
        logits.push(row);
        refs.push(cols);
        targets.push(0);
    }
    Ok(Candidates {
        logits,
        refs,
        targets,
    })
}

/// Mean softmax negative log likelihood over rows, with the gradient
/// w.r.t. every logit: (softmax - onehot(target)) / n_rows.
pub fn nll_loss(logits: &[Vec<f64>], targets: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != targets.len() {
        return Err(PairError::ShapeMismatch(
            "one target column per row required".into(),
        ));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &target) in logits.iter().zip(targets) {
        if target >= row.len() {
            return Err(PairError::ShapeMismatch(format!(
                "target column {target} out of range"
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(PairError::NonFinite("logits".into()));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[target];
        let mut g: Vec<f64> = row.iter().map(|&x| (x - max).exp() / sum_exp / n).collect();
        g[target] -= 1.0 / n;
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Per-batch loss summary.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossReport {
    pub loss_q: f64,
    pub loss_p: f64,
    pub loss_combined: f64,
    pub alpha: f64,
    pub n_examples: usize,
}

/// Gradients of the batch loss w.r.t. every batch vector.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub d_q: Vec<Vec<f64>>,
    pub d_pos: Vec<Vec<f64>>,
    pub d_negs: Vec<Vec<Vec<f64>>>,
}

impl BatchGrads {
    fn zeros_like(batch: &TrainBatch) -> BatchGrads {
        let d = batch.q_vecs[0].len();
        BatchGrads {
            d_q: vec![vec![0.0; d]; batch.len()],
            d_pos: vec![vec![0.0; d]; batch.len()],
            d_negs: batch
                .neg_vecs
                .iter()
                .map(|negs| vec![vec![0.0; d]; negs.len()])
                .collect(),
        }
    }
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, &x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Backpropagate candidate-logit gradients through the dot products,
/// scaled by `weight`, into the vector gradient buffers.
fn backprop_candidates(
    batch: &TrainBatch,
    anchors: &[CandRef],
    cands: &Candidates,
    logit_grads: &[Vec<f64>],
    weight: f64,
    out: &mut BatchGrads,
) {
    for (i, &anchor) in anchors.iter().enumerate() {
        let anchor_vec = vec_for(batch, anchor);
        for ((&r, &logit), &g) in cands.refs[i]
            .iter()
            .zip(&cands.logits[i])
            .zip(&logit_grads[i])
        {
            if logit == MASK_LOGIT {
                continue;
            }
            let g = g * weight;
            if g == 0.0 {
                continue;
            }
            // d anchor += g * cand; d cand += g * anchor
            let cand_vec = vec_for(batch, r);
            let anchor_grad = match anchor {
                CandRef::Query(a) => &mut out.d_q[a],
                CandRef::Positive(a) => &mut out.d_pos[a],
                CandRef::HardNeg(a, h) => &mut out.d_negs[a][h],
            };
            axpy(anchor_grad, g, cand_vec);
            let cand_grad = match r {
                CandRef::Query(c) => &mut out.d_q[c],
                CandRef::Positive(c) => &mut out.d_pos[c],
                CandRef::HardNeg(c, h) => &mut out.d_negs[c][h],
            };
            axpy(cand_grad, g, anchor_vec);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMode {
    /// (1 - alpha) * L_Q + alpha * L_P.
    Combined(f64),
    /// L_Q only; L_P is still computed for reporting but contributes no
    /// gradient.
    QueryOnly,
}

/// Compute the selected loss and its gradients w.r.t. all batch vectors.
pub fn batch_loss(
    batch: &TrainBatch,
    mode: LossMode,
    pool: PassagePool,
) -> Result<(LossReport, BatchGrads)> {
    let alpha = match mode {
        LossMode::Combined(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(PairError::InvalidArgument(format!(
                    "alpha must be in [0, 1], got {a}"
                )));
            }
            a
        }
        LossMode::QueryOnly => 0.0,
    };
    let cands_q = build_candidates_q(batch)?;
    let (loss_q, grads_q) = nll_loss(&cands_q.logits, &cands_q.targets)?;
    let cands_p = build_candidates_p(batch, pool)?;
    let (loss_p, grads_p) = nll_loss(&cands_p.logits, &cands_p.targets)?;

    let mut grads = BatchGrads::zeros_like(batch);
    let q_anchors: Vec<CandRef> = (0..batch.len()).map(CandRef::Query).collect();
    let p_anchors: Vec<CandRef> = (0..batch.len()).map(CandRef::Positive).collect();
    backprop_candidates(batch, &q_anchors, &cands_q, &grads_q, 1.0 - alpha, &mut grads);
    if alpha > 0.0 {
        backprop_candidates(batch, &p_anchors, &cands_p, &grads_p, alpha, &mut grads);
    }
    let report = LossReport {
        loss_q,
        loss_p,
        loss_combined: (1.0 - alpha) * loss_q + alpha * loss_p,
        alpha,
        n_examples: batch.len(),
    };
    Ok((report, grads))
}

/// Combined loss at the given alpha over the default passage pool.
pub fn combined_loss(batch: &TrainBatch, alpha: f64) -> Result<(LossReport, BatchGrads)> {
    batch_loss(batch, LossMode::Combined(alpha), PassagePool::default())
}
