//! Two-stage optimization: pre-training with the combined loss on
//! pseudo-labeled data, then fine-tuning with the query-centric loss on
//! gold plus relabeled data. Adam with linear warm-up and linear decay.

pub mod pipeline;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PassageId, QueryId, TrainExample};
use crate::distill::mix_seed;
use crate::encoder::{
    accumulate_backward, featurize, EncoderDims, EncoderModel, EncoderParams, ParamGrads, Role,
};
use crate::error::{PairError, Result};
use crate::objective::{batch_loss, LossMode, LossReport, PassagePool, TrainBatch};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    /// Accumulation factor: micro_batches are merged into one logical
    /// batch whose in-batch negatives span the union.
    pub micro_batches: usize,
    pub hard_negs_per_pos: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub use_psr_in_finetune: bool,
    pub grad_clip: f64,
    pub v: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub d: usize,
    pub hash_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            batch_size: 32,
            micro_batches: 1,
            hard_negs_per_pos: 4,
            epochs_pretrain: 5,
            epochs_finetune: 5,
            lr: 1e-3,
            warmup_ratio: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            use_psr_in_finetune: false,
            grad_clip: 5.0,
            v: 1 << 18,
            d_emb: 128,
            d_h: 128,
            d: 128,
            hash_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            v: self.v,
            d_emb: self.d_emb,
            d_h: self.d_h,
            d: self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PairError::InvalidArgument(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(PairError::InvalidArgument(format!(
                "warmup_ratio must be in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if self.batch_size < 2 {
            return Err(PairError::InvalidArgument(
                "batch_size must be >= 2".into(),
            ));
        }
        if self.micro_batches == 0 {
            return Err(PairError::InvalidArgument(
                "micro_batches must be >= 1".into(),
            ));
        }
        self.dims().validate()
    }

    /// Parse a flat key=value config file; unknown keys are errors.
    /// '#' starts a comment.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| PairError::io(path.display().to_string(), e))?;
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected key=value".into(),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| PairError::Malformed {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                PairError::InvalidArgument(format!("bad value {value:?} for {key}"))
            })
        }
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "micro_batches" => self.micro_batches = parse(key, value)?,
            "hard_negs_per_pos" => self.hard_negs_per_pos = parse(key, value)?,
            "epochs_pretrain" => self.epochs_pretrain = parse(key, value)?,
            "epochs_finetune" => self.epochs_finetune = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "warmup_ratio" => self.warmup_ratio = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "use_psr_in_finetune" => self.use_psr_in_finetune = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "v" => self.v = parse(key, value)?,
            "d_emb" => self.d_emb = parse(key, value)?,
            "d_h" => self.d_h = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "hash_seed" => self.hash_seed = parse(key, value)?,
            "optimizer" => {
                if value != "adam" {
                    return Err(PairError::InvalidArgument(format!(
                        "unsupported optimizer {value:?} (only adam)"
                    )));
                }
            }
            _ => {
                return Err(PairError::InvalidArgument(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
        Ok(())
    }
}

/// Linear warm-up to `lr` over warmup_ratio * total_steps, then linear
/// decay to zero: lr(0) = 0 and lr(total_steps) = 0 exactly.
pub fn lr_schedule(step: u64, total_steps: u64, lr: f64, warmup_ratio: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let total = total_steps as f64;
    let warmup = warmup_ratio * total;
    let s = step as f64;
    if s < warmup {
        lr * s / warmup
    } else {
        lr * (total - s).max(0.0) / (total - warmup)
    }
}

/// One Adam parameter update (bias-corrected), returning the new value.
/// `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: f64,
    grad: f64,
    m: &mut f64,
    v: &mut f64,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> f64 {
    *m = beta1 * *m + (1.0 - beta1) * grad;
    *v = beta2 * *v + (1.0 - beta2) * grad * grad;
    let m_hat = *m / (1.0 - beta1.powi(t as i32));
    let v_hat = *v / (1.0 - beta2.powi(t as i32));
    param - lr * m_hat / (v_hat.sqrt() + eps)
}

/// Adam first/second moments for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    m_embedding: Vec<f64>,
    v_embedding: Vec<f64>,
    m_w1: Vec<f64>,
    v_w1: Vec<f64>,
    m_b1: Vec<f64>,
    v_b1: Vec<f64>,
    m_w2: Vec<f64>,
    v_w2: Vec<f64>,
    m_b2: Vec<f64>,
    v_b2: Vec<f64>,
}

impl AdamMoments {
    fn zeros(dims: EncoderDims) -> AdamMoments {
        AdamMoments {
            m_embedding: vec![0.0; dims.v * dims.d_emb],
            v_embedding: vec![0.0; dims.v * dims.d_emb],
            m_w1: vec![0.0; dims.d_emb * dims.d_h],
            v_w1: vec![0.0; dims.d_emb * dims.d_h],
            m_b1: vec![0.0; dims.d_h],
            v_b1: vec![0.0; dims.d_h],
            m_w2: vec![0.0; dims.d_h * dims.d],
            v_w2: vec![0.0; dims.d_h * dims.d],
            m_b2: vec![0.0; dims.d],
            v_b2: vec![0.0; dims.d],
        }
    }

    /// Apply one dense Adam step: every parameter is updated, with zero
    /// gradient where the sparse buffer carries no entry.
    #[allow(clippy::too_many_arguments)]
    fn apply(
        &mut self,
        params: &mut EncoderParams,
        grads: &ParamGrads,
        t: u64,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        let d_emb = params.dims.d_emb;
        let dense =
            |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    p[i] = adam_update(p[i], g[i], &mut m[i], &mut v[i], t, lr, beta1, beta2, eps);
                }
            };
        dense(&mut params.w1, &grads.w1, &mut self.m_w1, &mut self.v_w1);
        dense(&mut params.b1, &grads.b1, &mut self.m_b1, &mut self.v_b1);
        dense(&mut params.w2, &grads.w2, &mut self.m_w2, &mut self.v_w2);
        dense(&mut params.b2, &grads.b2, &mut self.m_b2, &mut self.v_b2);
        let zeros = vec![0.0; d_emb];
        for row in 0..params.dims.v {
            let g_row = grads
                .embedding_rows
                .get(&(row as u32))
                .map(Vec::as_slice)
                .unwrap_or(&zeros);
            let base = row * d_emb;
            for i in 0..d_emb {
                params.embedding[base + i] = adam_update(
                    params.embedding[base + i],
                    g_row[i],
                    &mut self.m_embedding[base + i],
                    &mut self.v_embedding[base + i],
                    t,
                    lr,
                    beta1,
                    beta2,
                    eps,
                );
            }
        }
    }
}

/// Gradient buffers matching the model layout.
#[derive(Debug, Clone)]
pub enum ModelGrads {
    Shared(ParamGrads),
    Split {
        query: ParamGrads,
        passage: ParamGrads,
    },
}

impl ModelGrads {
    fn zeros(model: &EncoderModel) -> ModelGrads {
        match model {
            EncoderModel::Shared(p) => ModelGrads::Shared(ParamGrads::zeros(p.dims)),
            EncoderModel::Split { query, passage } => ModelGrads::Split {
                query: ParamGrads::zeros(query.dims),
                passage: ParamGrads::zeros(passage.dims),
            },
        }
    }

    fn for_role(&mut self, role: Role) -> &mut ParamGrads {
        match self {
            ModelGrads::Shared(g) => g,
            ModelGrads::Split { query, passage } => match role {
                Role::Query => query,
                Role::Passage => passage,
            },
        }
    }

    fn squared_norm(&self) -> f64 {
        match self {
            ModelGrads::Shared(g) => g.squared_norm(),
            ModelGrads::Split { query, passage } => query.squared_norm() + passage.squared_norm(),
        }
    }

    fn scale(&mut self, factor: f64) {
        match self {
            ModelGrads::Shared(g) => g.scale(factor),
            ModelGrads::Split { query, passage } => {
                query.scale(factor);
                passage.scale(factor);
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            ModelGrads::Shared(g) => g.is_finite(),
            ModelGrads::Split { query, passage } => query.is_finite() && passage.is_finite(),
        }
    }
}

enum AdamModel {
    Shared(AdamMoments),
    Split {
        query: AdamMoments,
        passage: AdamMoments,
    },
}

/// Mutable optimization state: parameters, Adam moments, step counter,
/// stage tag, loss history.
pub struct TrainState {
    pub model: EncoderModel,
    adam: AdamModel,
    pub step: u64,
    pub stage: String,
    pub loss_history: Vec<LossReport>,
}

impl TrainState {
    pub fn new(model: EncoderModel, stage: &str) -> TrainState {
        let adam = match &model {
            EncoderModel::Shared(p) => AdamModel::Shared(AdamMoments::zeros(p.dims)),
            EncoderModel::Split { query, passage } => AdamModel::Split {
                query: AdamMoments::zeros(query.dims),
                passage: AdamMoments::zeros(passage.dims),
            },
        };
        TrainState {
            model,
            adam,
            step: 0,
            stage: stage.to_string(),
            loss_history: Vec::new(),
        }
    }

    /// Fresh stage: keep parameters, reset moments and step counter.
    pub fn into_stage(self, stage: &str) -> TrainState {
        TrainState::new(self.model, stage)
    }
}

/// One example as sampled into a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchExample {
    pub query_id: QueryId,
    pub positive_id: PassageId,
    pub neg_ids: Vec<PassageId>,
}

/// Seeded shuffle, fixed negatives per example (resampled with
/// replacement when an example's pool is short; H=0 with a warning when
/// it is empty), last partial batch dropped. The logical batch spans
/// micro_batches * batch_size examples.
pub fn make_batches(
    examples: &[TrainExample],
    cfg: &TrainConfig,
    epoch_seed: u64,
) -> Result<Vec<Vec<BatchExample>>> {
    let logical = cfg.batch_size * cfg.micro_batches;
    if examples.len() < logical {
        return Err(PairError::InvalidArgument(format!(
            "need at least {logical} examples per batch, have {}",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    let mut warned_empty = false;
    let mut batches = Vec::new();
    for chunk in order.chunks(logical) {
        if chunk.len() < logical {
            break; // drop last partial batch
        }
        let mut batch = Vec::with_capacity(logical);
        for &idx in chunk {
            let ex = &examples[idx];
            let negs = if ex.hard_negative_ids.is_empty() {
                if !warned_empty {
                    eprintln!(
                        "pair: warning: example for query {} has no hard negatives",
                        ex.query_id
                    );
                    warned_empty = true;
                }
                Vec::new()
            } else {
                let mut neg_rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    epoch_seed,
                    ex.query_id.0 as u64,
                    ex.positive_id.0 as u64,
                ));
                if ex.hard_negative_ids.len() >= cfg.hard_negs_per_pos {
                    let mut pool = ex.hard_negative_ids.clone();
                    pool.shuffle(&mut neg_rng);
                    pool.truncate(cfg.hard_negs_per_pos);
                    pool
                } else {
                    // pad by resampling with replacement
                    use rand::Rng;
                    (0..cfg.hard_negs_per_pos)
                        .map(|_| {
                            ex.hard_negative_ids
                                [neg_rng.gen_range(0..ex.hard_negative_ids.len())]
                        })
                        .collect()
                }
            };
            batch.push(BatchExample {
                query_id: ex.query_id,
                positive_id: ex.positive_id,
                neg_ids: negs,
            });
        }
        batches.push(batch);
    }
    Ok(batches)
}

fn encode_batch(
    model: &EncoderModel,
    corpus: &Corpus,
    batch: &[BatchExample],
) -> Result<TrainBatch> {
    let mut q_vecs = Vec::with_capacity(batch.len());
    let mut pos_vecs = Vec::with_capacity(batch.len());
    let mut neg_vecs = Vec::with_capacity(batch.len());
    for ex in batch {
        let q = corpus
            .query(ex.query_id)
            .ok_or_else(|| PairError::DanglingId(format!("query {}", ex.query_id)))?;
        q_vecs.push(model.encode_text(Role::Query, &q.text)?);
        let p = corpus
            .passage(ex.positive_id)
            .ok_or_else(|| PairError::DanglingId(format!("passage {}", ex.positive_id)))?;
        pos_vecs.push(model.encode_text(Role::Passage, &p.text)?);
        let mut negs = Vec::with_capacity(ex.neg_ids.len());
        for &nid in &ex.neg_ids {
            let n = corpus
                .passage(nid)
                .ok_or_else(|| PairError::DanglingId(format!("passage {nid}")))?;
            negs.push(model.encode_text(Role::Passage, &n.text)?);
        }
        neg_vecs.push(negs);
    }
    Ok(TrainBatch {
        q_vecs,
        pos_vecs,
        neg_vecs,
        pos_ids: batch.iter().map(|e| e.positive_id).collect(),
        neg_ids: batch.iter().map(|e| e.neg_ids.clone()).collect(),
    })
}

fn backprop_role(
    model: &EncoderModel,
    role: Role,
    text_of: &str,
    grad: &[f64],
    grads: &mut ModelGrads,
) -> Result<()> {
    let params = model.params(role);
    let bag = featurize(text_of, params.hash_seed, params.dims.v)?;
    accumulate_backward(params, &bag, grad, grads.for_role(role))
}

/// Encode the batch, compute the selected loss, backpropagate through the
/// encoder, clip, and apply one Adam update at learning rate `lr`.
pub fn train_step(
    state: &mut TrainState,
    corpus: &Corpus,
    batch: &[BatchExample],
    mode: LossMode,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossReport> {
    let encoded = encode_batch(&state.model, corpus, batch)?;
    let (report, vec_grads) = batch_loss(&encoded, mode, PassagePool::default())?;
    if !report.loss_combined.is_finite() {
        let max_logit = encoded
            .q_vecs
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(PairError::NonFinite(format!(
            "loss at step {} (stage {}, max encoding component {max_logit})",
            state.step, state.stage
        )));
    }
    let mut grads = ModelGrads::zeros(&state.model);
    for (i, ex) in batch.iter().enumerate() {
        let q_text = &corpus.query(ex.query_id).unwrap().text;
        backprop_role(&state.model, Role::Query, q_text, &vec_grads.d_q[i], &mut grads)?;
        let p_text = &corpus.passage(ex.positive_id).unwrap().text;
        backprop_role(
            &state.model,
            Role::Passage,
            p_text,
            &vec_grads.d_pos[i],
            &mut grads,
        )?;
        for (h, &nid) in ex.neg_ids.iter().enumerate() {
            let n_text = &corpus.passage(nid).unwrap().text;
            backprop_role(
                &state.model,
                Role::Passage,
                n_text,
                &vec_grads.d_negs[i][h],
                &mut grads,
            )?;
        }
    }
    if !grads.is_finite() {
        return Err(PairError::NonFinite(format!(
            "gradients at step {} (stage {})",
            state.step, state.stage
        )));
    }
    let norm = grads.squared_norm().sqrt();
    if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        grads.scale(cfg.grad_clip / norm);
    }
    state.step += 1;
    let t = state.step;
    let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    match (&mut state.model, &mut state.adam, &grads) {
        (EncoderModel::Shared(p), AdamModel::Shared(a), ModelGrads::Shared(g)) => {
            a.apply(p, g, t, lr, b1, b2, eps);
        }
        (
            EncoderModel::Split { query, passage },
            AdamModel::Split {
                query: aq,
                passage: ap,
            },
            ModelGrads::Split {
                query: gq,
                passage: gp,
            },
        ) => {
            aq.apply(query, gq, t, lr, b1, b2, eps);
            ap.apply(passage, gp, t, lr, b1, b2, eps);
        }
        _ => unreachable!("model/adam/grads layout always matches"),
    }
    state.loss_history.push(report);
    Ok(report)
}

/// Per-step JSON-lines training log record.
#[derive(Serialize)]
struct StepLog<'a> {
    step: u64,
    stage: &'a str,
    loss_q: f64,
    loss_p: f64,
    loss: f64,
    lr: f64,
}

/// Run one full training stage (fresh schedule, seeded epoch shuffles).
pub fn run_stage(
    mut state: TrainState,
    corpus: &Corpus,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    mode: LossMode,
    epochs: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainState> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(PairError::InvalidArgument(format!(
            "no training examples for stage {}",
            state.stage
        )));
    }
    let stage_seed = mix_seed(cfg.seed, fnv_str(&state.stage), 0);
    let probe = make_batches(examples, cfg, stage_seed)?;
    let total_steps = (epochs * probe.len()) as u64;
    for epoch in 0..epochs {
        let batches = make_batches(examples, cfg, mix_seed(stage_seed, epoch as u64, 1))?;
        for batch in &batches {
            let lr = lr_schedule(state.step, total_steps, cfg.lr, cfg.warmup_ratio);
            let report = train_step(&mut state, corpus, batch, mode, cfg, lr)?;
            if let Some(w) = log.as_deref_mut() {
                let record = StepLog {
                    step: state.step,
                    stage: &state.stage,
                    loss_q: report.loss_q,
                    loss_p: report.loss_p,
                    loss: report.loss_combined,
                    lr,
                };
                writeln!(w, "{}", serde_json::to_string(&record).unwrap())
                    .map_err(|e| PairError::io("<train log>", e))?;
            }
        }
    }
    Ok(state)
}

fn fnv_str(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Initialize a model for the given config; `shared = false` draws two
/// independent parameter sets (the no-shared-params ablation).
pub fn init_model(cfg: &TrainConfig, shared: bool) -> Result<EncoderModel> {
    if shared {
        Ok(EncoderModel::Shared(EncoderParams::init(
            cfg.dims(),
            cfg.hash_seed,
            cfg.seed,
        )?))
    } else {
        Ok(EncoderModel::Split {
            query: EncoderParams::init(cfg.dims(), cfg.hash_seed, mix_seed(cfg.seed, 1, 0))?,
            passage: EncoderParams::init(cfg.dims(), cfg.hash_seed, mix_seed(cfg.seed, 2, 0))?,
        })
    }
}

/// Pre-training stage: combined loss over pseudo-labeled examples.
pub fn pretrain(
    corpus: &Corpus,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    model: EncoderModel,
    log: Option<&mut dyn Write>,
) -> Result<EncoderModel> {
    let state = TrainState::new(model, "pretrain");
    let state = run_stage(
        state,
        corpus,
        examples,
        cfg,
        LossMode::Combined(cfg.alpha),
        cfg.epochs_pretrain,
        log,
    )?;
    Ok(state.model)
}

/// Fine-tuning stage: query-centric loss (or combined, for the
/// with-PSR-fine-tuning ablation) over gold plus relabeled examples.
pub fn finetune(
    corpus: &Corpus,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    model: EncoderModel,
    log: Option<&mut dyn Write>,
) -> Result<EncoderModel> {
    let mode = if cfg.use_psr_in_finetune {
        LossMode::Combined(cfg.alpha)
    } else {
        LossMode::QueryOnly
    };
    let state = TrainState::new(model, "finetune");
    let state = run_stage(state, corpus, examples, cfg, mode, cfg.epochs_finetune, log)?;
    Ok(state.model)
}
