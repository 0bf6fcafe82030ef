//! End-to-end experiment driver: split, teach, pseudo-label, two-stage
//! train, index, evaluate. The ablation grid removes one component per
//! variant.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{Corpus, QueryId, TrainExample};
use crate::distill::teacher::{
    train_mini_cross_encoder, MiniTeacherConfig, OracleTeacher, OverlapTeacher, Teacher,
};
use crate::distill::{
    generate_pseudo_labels, mix_seed, relabel_labeled_corpus, CandidateRetriever,
    OverlapRetriever, PseudoLabelConfig, PseudoLabelStats,
};
use crate::encoder::{EncoderModel, Role};
use crate::error::{PairError, Result};
use crate::evalkit::{evaluate, margin_analysis, EvalReport, Judgments, MarginReport};
use crate::index::{batch_search, build_index, EmbeddingStore};
use crate::trainer::{finetune, init_model, pretrain, TrainConfig};

/// Ablation grid: the full method plus five one-component removals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Complete two-stage recipe.
    Full,
    /// Pre-train with the query-centric loss only (alpha = 0).
    NoPsr,
    /// No pseudo-labeled data: both stages train on gold examples.
    NoKd,
    /// Keep the combined loss through fine-tuning.
    PsrFt,
    /// Independent query and passage encoders.
    NoSp,
    /// Fine-tuning only, from random initialization.
    NoPt,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoPsr,
        Variant::NoKd,
        Variant::PsrFt,
        Variant::NoSp,
        Variant::NoPt,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPsr => "no_psr",
            Variant::NoKd => "no_kd",
            Variant::PsrFt => "psr_ft",
            Variant::NoSp => "no_sp",
            Variant::NoPt => "no_pt",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = PairError;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| {
                PairError::InvalidArgument(format!(
                    "unknown variant {s:?} (expected one of full, no_psr, no_kd, psr_ft, no_sp, no_pt)"
                ))
            })
    }
}

/// Which relevance scorer supervises pseudo-labeling.
#[derive(Debug, Clone, Copy)]
pub enum TeacherKind {
    /// Qrel oracle with optional Gaussian label noise.
    Oracle { sigma: f64 },
    /// Untrained lexical-containment scorer.
    Overlap,
    /// Mini cross-encoder trained on the train split's qrels.
    Mini(MiniTeacherConfig),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub pseudo: PseudoLabelConfig,
    pub dev_fraction: f64,
    pub teacher: TeacherKind,
    /// Cutoffs reported by the dev evaluation.
    pub eval_ks: Vec<usize>,
    /// Retrieval depth for the margin analysis.
    pub margin_top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            pseudo: PseudoLabelConfig::default(),
            dev_fraction: 0.2,
            teacher: TeacherKind::Overlap,
            eval_ks: vec![5, 20, 100],
            margin_top_n: 100,
        }
    }
}

/// Everything one variant run produces.
pub struct PipelineOutcome {
    pub variant: Variant,
    pub model: EncoderModel,
    pub store: EmbeddingStore,
    pub eval: EvalReport,
    pub margin: MarginReport,
    /// Stats from labeling unlabeled queries (absent for no_kd).
    pub pseudo_stats: Option<PseudoLabelStats>,
}

fn build_teacher(kind: TeacherKind, train_corpus: &Corpus, seed: u64) -> Result<Box<dyn Teacher>> {
    Ok(match kind {
        TeacherKind::Oracle { sigma } => {
            Box::new(OracleTeacher::with_noise(sigma, mix_seed(seed, 0xacc, 0)))
        }
        TeacherKind::Overlap => Box::new(OverlapTeacher::default()),
        TeacherKind::Mini(mut cfg) => {
            cfg.seed = mix_seed(seed, 0x3e, 0);
            Box::new(train_mini_cross_encoder(train_corpus, &cfg)?)
        }
    })
}

/// Gold training examples with lexically mined hard negatives: one example
/// per qrel, negatives drawn from the retriever's top candidates that are
/// not relevant to the query. The pool is twice the per-positive budget so
/// the batch sampler has room to vary.
pub fn mine_gold_examples(
    corpus: &Corpus,
    retriever: &OverlapRetriever,
    negs_per_pos: usize,
    top_k: usize,
) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for query in corpus.labeled_queries() {
        let candidates = retriever.top_k(corpus, query.id, top_k)?;
        let negs: Vec<_> = candidates
            .iter()
            .copied()
            .filter(|&p| !corpus.is_relevant(query.id, p))
            .take(negs_per_pos.max(1) * 2)
            .collect();
        for &pos in corpus.positives(query.id) {
            out.push(TrainExample {
                query_id: query.id,
                positive_id: pos,
                hard_negative_ids: negs.clone(),
                src: crate::corpus::ExampleSource::Gold,
            });
        }
    }
    Ok(out)
}

/// Run one variant end to end and evaluate it on the dev split.
pub fn run_variant(
    corpus: &Corpus,
    variant: Variant,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    let mut tcfg = cfg.train;
    tcfg.seed = seed;
    match variant {
        Variant::NoPsr => tcfg.alpha = 0.0,
        Variant::PsrFt => tcfg.use_psr_in_finetune = true,
        _ => {}
    }
    tcfg.validate()?;
    cfg.pseudo.validate()?;

    let (train_c, dev_c) = corpus.split(cfg.dev_fraction, mix_seed(seed, 0x5b, 0))?;
    let retriever = OverlapRetriever;
    let gold = mine_gold_examples(
        &train_c,
        &retriever,
        tcfg.hard_negs_per_pos,
        cfg.pseudo.top_k,
    )?;

    let (pretrain_data, finetune_data, pseudo_stats) = if variant == Variant::NoKd {
        (gold.clone(), gold, None)
    } else {
        let teacher = build_teacher(cfg.teacher, &train_c, seed)?;
        let unlabeled: Vec<QueryId> = train_c.unlabeled_queries().map(|q| q.id).collect();
        let pseudo = generate_pseudo_labels(
            &train_c,
            &unlabeled,
            &retriever,
            teacher.as_ref(),
            &cfg.pseudo,
            mix_seed(seed, 0x9d, 0),
        )?;
        let relabel = relabel_labeled_corpus(
            &train_c,
            &retriever,
            teacher.as_ref(),
            &cfg.pseudo,
            mix_seed(seed, 0x9d, 1),
        )?;
        let mut pretrain_data = pseudo.examples.clone();
        pretrain_data.extend(relabel.examples.iter().cloned());
        (pretrain_data, relabel.examples, Some(pseudo.stats))
    };

    let mut model = init_model(&tcfg, variant != Variant::NoSp)?;
    if variant != Variant::NoPt {
        model = pretrain(&train_c, &pretrain_data, &tcfg, model, None)?;
    }
    model = finetune(&train_c, &finetune_data, &tcfg, model, None)?;

    let store = build_index(&train_c, &model)?;
    let dev_queries: Vec<(QueryId, Vec<f64>)> = dev_c
        .labeled_queries()
        .map(|q| Ok((q.id, model.encode_text(Role::Query, &q.text)?)))
        .collect::<Result<_>>()?;
    let k_max = cfg.eval_ks.iter().copied().max().unwrap_or(100);
    let run = batch_search(&store, &dev_queries, k_max, true)?;
    let rankings = crate::evalkit::run_to_rankings(&run);
    let judgments = Judgments::from_corpus(&dev_c);
    let eval = evaluate(&rankings, &judgments, &cfg.eval_ks, variant.label());
    let margin = margin_analysis(&model, &store, &dev_c, cfg.margin_top_n)?;

    Ok(PipelineOutcome {
        variant,
        model,
        store,
        eval,
        margin,
        pseudo_stats,
    })
}

/// One ablation grid row: per-seed reports plus their mean.
pub struct AblationRow {
    pub variant: Variant,
    pub evals: Vec<EvalReport>,
    pub margins: Vec<f64>,
    pub mean: EvalReport,
}

/// Average metric maps across seed runs of the same variant.
pub fn mean_report(reports: &[EvalReport], variant: &str) -> EvalReport {
    let n = reports.len().max(1) as f64;
    let mut mean = EvalReport {
        variant: variant.to_string(),
        n_queries: reports.first().map(|r| r.n_queries).unwrap_or(0),
        mrr_at: Default::default(),
        recall_at: Default::default(),
    };
    for r in reports {
        for (&k, &v) in &r.mrr_at {
            *mean.mrr_at.entry(k).or_insert(0.0) += v / n;
        }
        for (&k, &v) in &r.recall_at {
            *mean.recall_at.entry(k).or_insert(0.0) += v / n;
        }
    }
    mean
}

/// Run each variant over every seed.
pub fn run_ablation(
    corpus: &Corpus,
    variants: &[Variant],
    seeds: &[u64],
    cfg: &PipelineConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut evals = Vec::with_capacity(seeds.len());
        let mut margins = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let outcome = run_variant(corpus, variant, cfg, seed)?;
            margins.push(outcome.margin.margin());
            evals.push(outcome.eval);
        }
        let mean = mean_report(&evals, variant.label());
        rows.push(AblationRow {
            variant,
            evals,
            margins,
            mean,
        });
    }
    Ok(rows)
}
