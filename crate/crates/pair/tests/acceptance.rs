//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line. Everything is seeded, so results are reproducible
//! run to run.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pair::corpus::{Corpus, PassageId, QueryId};
use pair::distill::teacher::{FileTeacher, OracleTeacher};
use pair::distill::{
    audit_quality, generate_pseudo_labels, OverlapRetriever, PseudoLabelConfig,
};
use pair::encoder::checkpoint::serialize as serialize_checkpoint;
use pair::encoder::{
    accumulate_backward, encode, featurize, EncoderDims, EncoderParams, ParamGrads, Role,
};
use pair::evalkit::{evaluate, mrr_at_k, recall_at_k, run_to_rankings, Judgments};
use pair::index::{batch_search, build_index, search, EmbeddingStore, SearchHit};
use pair::objective::{batch_loss, LossMode, PassagePool, TrainBatch};
use pair::synthetic::{topic_fixture, FixtureConfig};
use pair::trainer::pipeline::{
    run_ablation, AblationRow, PipelineConfig, TeacherKind, Variant,
};
use pair::trainer::{finetune, init_model, pretrain, TrainConfig};

/// Print the criterion verdict line, then fail the test if needed.
fn verdict(n: usize, name: &str, ok: bool) {
    println!(
        "acceptance criterion {n} ({name}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed");
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

/// Total flat parameter count, ordered embedding, w1, b1, w2, b2.
fn flat_len(p: &EncoderParams) -> usize {
    p.n_params()
}

fn flat_get(p: &EncoderParams, i: usize) -> f64 {
    let mut i = i;
    for part in [&p.embedding, &p.w1, &p.b1, &p.w2, &p.b2] {
        if i < part.len() {
            return part[i];
        }
        i -= part.len();
    }
    unreachable!("index out of range")
}

fn flat_add(p: &mut EncoderParams, i: usize, eps: f64) {
    let mut i = i;
    for part in [
        &mut p.embedding,
        &mut p.w1,
        &mut p.b1,
        &mut p.w2,
        &mut p.b2,
    ] {
        if i < part.len() {
            part[i] += eps;
            return;
        }
        i -= part.len();
    }
    unreachable!("index out of range")
}

fn flat_grad(g: &ParamGrads, dims: EncoderDims, i: usize) -> f64 {
    let emb_len = dims.v * dims.d_emb;
    if i < emb_len {
        let (row, col) = (i / dims.d_emb, i % dims.d_emb);
        return g
            .embedding_rows
            .get(&(row as u32))
            .map(|r| r[col])
            .unwrap_or(0.0);
    }
    let mut i = i - emb_len;
    for part in [&g.w1, &g.b1, &g.w2, &g.b2] {
        if i < part.len() {
            return part[i];
        }
        i -= part.len();
    }
    unreachable!("index out of range")
}

struct GradCase {
    q_texts: Vec<String>,
    pos_texts: Vec<String>,
    neg_texts: Vec<Vec<String>>,
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let words = ["alpha", "bravo", "carbon", "delta", "ember", "falcon", "gamma", "helix"];
    let n = rng.gen_range(2..6);
    (0..n)
        .map(|_| words[rng.gen_range(0..words.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn case_loss(params: &EncoderParams, case: &GradCase, mode: LossMode) -> f64 {
    let enc = |text: &str| {
        let bag = featurize(text, params.hash_seed, params.dims.v).unwrap();
        encode(params, &bag).unwrap()
    };
    let batch = TrainBatch {
        q_vecs: case.q_texts.iter().map(|t| enc(t)).collect(),
        pos_vecs: case.pos_texts.iter().map(|t| enc(t)).collect(),
        neg_vecs: case
            .neg_texts
            .iter()
            .map(|negs| negs.iter().map(|t| enc(t)).collect())
            .collect(),
        pos_ids: (0..case.q_texts.len() as u32).map(PassageId).collect(),
        neg_ids: case
            .neg_texts
            .iter()
            .enumerate()
            .map(|(i, negs)| {
                (0..negs.len() as u32)
                    .map(|h| PassageId(1000 + (i as u32) * 100 + h))
                    .collect()
            })
            .collect(),
    };
    let (report, _) = batch_loss(&batch, mode, PassagePool::default()).unwrap();
    report.loss_combined
}

fn case_analytic(params: &EncoderParams, case: &GradCase, mode: LossMode) -> ParamGrads {
    let enc = |text: &str| {
        let bag = featurize(text, params.hash_seed, params.dims.v).unwrap();
        encode(params, &bag).unwrap()
    };
    let batch = TrainBatch {
        q_vecs: case.q_texts.iter().map(|t| enc(t)).collect(),
        pos_vecs: case.pos_texts.iter().map(|t| enc(t)).collect(),
        neg_vecs: case
            .neg_texts
            .iter()
            .map(|negs| negs.iter().map(|t| enc(t)).collect())
            .collect(),
        pos_ids: (0..case.q_texts.len() as u32).map(PassageId).collect(),
        neg_ids: case
            .neg_texts
            .iter()
            .enumerate()
            .map(|(i, negs)| {
                (0..negs.len() as u32)
                    .map(|h| PassageId(1000 + (i as u32) * 100 + h))
                    .collect()
            })
            .collect(),
    };
    let (_, grads) = batch_loss(&batch, mode, PassagePool::default()).unwrap();
    let mut pg = ParamGrads::zeros(params.dims);
    let mut back = |text: &str, d: &[f64]| {
        let bag = featurize(text, params.hash_seed, params.dims.v).unwrap();
        accumulate_backward(params, &bag, d, &mut pg).unwrap();
    };
    for (i, t) in case.q_texts.iter().enumerate() {
        back(t, &grads.d_q[i]);
    }
    for (i, t) in case.pos_texts.iter().enumerate() {
        back(t, &grads.d_pos[i]);
    }
    for (i, negs) in case.neg_texts.iter().enumerate() {
        for (h, t) in negs.iter().enumerate() {
            back(t, &grads.d_negs[i][h]);
        }
    }
    pg
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6add);
    let mut ok = true;
    for config in 0..20 {
        let dims = EncoderDims {
            v: 64,
            d_emb: rng.gen_range(3..=8),
            d_h: rng.gen_range(3..=8),
            d: rng.gen_range(4..=16),
        };
        let mut params = EncoderParams::init(dims, config as u64, 100 + config as u64).unwrap();
        // scale up from the tiny training init so gradients are well above
        // finite-difference noise
        for w in params.embedding.iter_mut() {
            *w *= 40.0;
        }
        for w in params.w1.iter_mut().chain(params.w2.iter_mut()) {
            *w *= 4.0;
        }
        let b = if config % 2 == 0 { 2 } else { 4 };
        let h = if config % 4 < 2 { 0 } else { 2 };
        let case = GradCase {
            q_texts: (0..b).map(|_| random_text(&mut rng)).collect(),
            pos_texts: (0..b).map(|_| random_text(&mut rng)).collect(),
            neg_texts: (0..b)
                .map(|_| (0..h).map(|_| random_text(&mut rng)).collect())
                .collect(),
        };
        // union of touched embedding cells plus every dense parameter
        let emb_len = dims.v * dims.d_emb;
        let mut touched: BTreeSet<usize> = BTreeSet::new();
        for text in case
            .q_texts
            .iter()
            .chain(&case.pos_texts)
            .chain(case.neg_texts.iter().flatten())
        {
            let bag = featurize(text, params.hash_seed, dims.v).unwrap();
            for &id in &bag.feature_ids {
                for col in 0..dims.d_emb {
                    touched.insert(id as usize * dims.d_emb + col);
                }
            }
        }
        touched.extend(emb_len..flat_len(&params));
        let mut indices: Vec<usize> = touched.into_iter().collect();
        indices.shuffle(&mut rng);
        indices.truncate(25);

        for mode in [
            LossMode::QueryOnly,        // L_Q
            LossMode::Combined(1.0),    // L_P
            LossMode::Combined(0.1),    // L
        ] {
            let analytic = case_analytic(&params, &case, mode);
            let step = 1e-5;
            for &i in &indices {
                let mut plus = params.clone();
                flat_add(&mut plus, i, step);
                let mut minus = params.clone();
                flat_add(&mut minus, i, -step);
                let numeric =
                    (case_loss(&plus, &case, mode) - case_loss(&minus, &case, mode)) / (2.0 * step);
                let a = flat_grad(&analytic, dims, i);
                // floor keeps near-zero gradients (saturated units) from
                // being judged against finite-difference rounding noise
                let denom = a.abs().max(numeric.abs()).max(1e-4);
                if (a - numeric).abs() / denom >= 1e-5 {
                    eprintln!(
                        "config {config} mode {mode:?} param {i}: analytic {a} vs numeric {numeric} (value {})",
                        flat_get(&params, i)
                    );
                    ok = false;
                }
            }
        }
    }
    let within_budget = start.elapsed() < Duration::from_secs(10);
    if !within_budget {
        eprintln!("gradient check took {:?}", start.elapsed());
    }
    verdict(1, "gradient correctness", ok && within_budget);
}

// ---------------------------------------------------------------------------
// 2. Loss-value oracle

#[test]
fn criterion_2_loss_value_oracle() {
    let mut ok = true;

    // K equal logits -> ln K
    for k in [2usize, 3, 7, 64] {
        let (loss, _) = pair::objective::nll_loss(&vec![vec![0.7; k]], &[0]).unwrap();
        if (loss - (k as f64).ln()).abs() >= 1e-9 {
            eprintln!("uniform-{k}: {loss} vs {}", (k as f64).ln());
            ok = false;
        }
    }

    // target 10 vs two zeros -> ln(1 + 2 e^-10), independent ln_1p route
    let (loss, _) = pair::objective::nll_loss(&vec![vec![10.0, 0.0, 0.0]], &[0]).unwrap();
    let oracle = (2.0 * (-10.0f64).exp()).ln_1p();
    if (loss - oracle).abs() >= 1e-12 {
        eprintln!("strong target: {loss} vs {oracle}");
        ok = false;
    }

    // exact affine combination over alpha
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vec_of = |rng: &mut ChaCha8Rng, d: usize| -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let b = 3;
    let batch = TrainBatch {
        q_vecs: (0..b).map(|_| vec_of(&mut rng, 6)).collect(),
        pos_vecs: (0..b).map(|_| vec_of(&mut rng, 6)).collect(),
        neg_vecs: (0..b)
            .map(|_| (0..2).map(|_| vec_of(&mut rng, 6)).collect())
            .collect(),
        pos_ids: (0..b as u32).map(PassageId).collect(),
        neg_ids: (0..b as u32)
            .map(|i| vec![PassageId(100 + 2 * i), PassageId(101 + 2 * i)])
            .collect(),
    };
    for alpha in [0.0, 0.1, 0.5, 1.0] {
        let (report, _) = batch_loss(&batch, LossMode::Combined(alpha), PassagePool::default())
            .unwrap();
        let expected = (1.0 - alpha) * report.loss_q + alpha * report.loss_p;
        if report.loss_combined != expected {
            eprintln!("alpha {alpha}: {} vs {expected}", report.loss_combined);
            ok = false;
        }
    }

    verdict(2, "loss-value oracle", ok);
}

// ---------------------------------------------------------------------------
// 3. Shared-parameter invariant

#[test]
fn criterion_3_shared_parameter_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = TrainConfig {
        v: 1 << 10,
        d_emb: 16,
        d_h: 16,
        d: 16,
        ..Default::default()
    };
    let shared = init_model(&cfg, true).unwrap();
    let split = init_model(&cfg, false).unwrap();
    let mut ok = true;
    let mut any_split_diff = true;
    for _ in 0..100 {
        let text = random_text(&mut rng);
        let q = shared.encode_text(Role::Query, &text).unwrap();
        let p = shared.encode_text(Role::Passage, &text).unwrap();
        // bit-identical under shared parameters
        if q.iter().zip(&p).any(|(a, b)| a.to_bits() != b.to_bits()) {
            eprintln!("shared roles differ on {text:?}");
            ok = false;
        }
        let q = split.encode_text(Role::Query, &text).unwrap();
        let p = split.encode_text(Role::Passage, &text).unwrap();
        if q == p {
            any_split_diff = false;
        }
    }
    verdict(3, "shared-parameter invariant", ok && any_split_diff);
}

// ---------------------------------------------------------------------------
// 4. Exact retrieval oracle

fn naive_top_k(store: &EmbeddingStore, query: &[f64], k: usize) -> Vec<SearchHit> {
    let mut scored: Vec<(f64, PassageId)> = (0..store.len())
        .map(|i| {
            let score: f64 = store.row(i)
                .iter()
                .zip(query)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            (score, store.ids[i])
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.cmp(&b.1))
    });
    scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, (score, passage_id))| SearchHit {
            passage_id,
            score,
            rank: rank + 1,
        })
        .collect()
}

#[test]
fn criterion_4_exact_retrieval_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    for instance in 0..1000 {
        let m = rng.gen_range(1..=1000);
        let d = rng.gen_range(1..=64);
        let quantize = instance % 3 == 0; // force score ties
        let matrix: Vec<f32> = (0..m * d)
            .map(|_| {
                if quantize {
                    rng.gen_range(-2..=2) as f32
                } else {
                    rng.gen_range(-1.0f32..1.0)
                }
            })
            .collect();
        let store = EmbeddingStore {
            ids: (0..m as u32).map(PassageId).collect(),
            matrix,
            d,
            fingerprint: String::new(),
        };
        let query: Vec<f64> = (0..d)
            .map(|_| {
                if quantize {
                    rng.gen_range(-2..=2) as f64
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let k = rng.gen_range(1..=(m + 3));
        if search(&store, &query, k).unwrap() != naive_top_k(&store, &query, k) {
            eprintln!("instance {instance} (m={m}, d={d}, k={k}) mismatched the oracle");
            ok = false;
        }
    }

    // serial and parallel runs give byte-identical TREC files
    let corpus = topic_fixture(&FixtureConfig {
        n_topics: 5,
        passages_per_topic: 8,
        queries_per_topic: 4,
        labeled_per_topic: 4,
    })
    .unwrap();
    let cfg = TrainConfig {
        v: 1 << 10,
        d_emb: 8,
        d_h: 8,
        d: 8,
        ..Default::default()
    };
    let model = init_model(&cfg, true).unwrap();
    let store = build_index(&corpus, &model).unwrap();
    let queries: Vec<(QueryId, Vec<f64>)> = corpus
        .queries()
        .map(|q| (q.id, model.encode_text(Role::Query, &q.text).unwrap()))
        .collect();
    let serial = batch_search(&store, &queries, 10, false).unwrap();
    let parallel = batch_search(&store, &queries, 10, true).unwrap();
    if serial.to_trec(&corpus).into_bytes() != parallel.to_trec(&corpus).into_bytes() {
        eprintln!("serial and parallel run files differ");
        ok = false;
    }

    verdict(4, "exact retrieval oracle", ok);
}

// ---------------------------------------------------------------------------
// 5 + 6. Fixture pipeline: margin flip and ablation ordering

struct FixtureRuns {
    /// Wall time of the full + no_psr runs only (criterion 5's budget).
    margin_elapsed: Duration,
    rows: Vec<AblationRow>,
}

fn fixture_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            v: 1 << 14,
            d_emb: 32,
            d_h: 32,
            d: 32,
            batch_size: 16,
            hard_negs_per_pos: 4,
            lr: 0.05,
            epochs_pretrain: 30,
            epochs_finetune: 30,
            ..Default::default()
        },
        pseudo: PseudoLabelConfig::default(),
        dev_fraction: 0.2,
        teacher: TeacherKind::Overlap,
        eval_ks: vec![5],
        margin_top_n: 100,
    }
}

fn fixture_runs() -> &'static FixtureRuns {
    static RUNS: OnceLock<FixtureRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let corpus = topic_fixture(&FixtureConfig::default()).unwrap();
        let cfg = fixture_pipeline_config();
        let seeds = [0, 1, 2, 3, 4];
        let start = Instant::now();
        let mut rows =
            run_ablation(&corpus, &[Variant::Full, Variant::NoPsr], &seeds, &cfg).unwrap();
        let margin_elapsed = start.elapsed();
        rows.extend(run_ablation(&corpus, &[Variant::NoKd, Variant::NoPt], &seeds, &cfg).unwrap());
        FixtureRuns {
            margin_elapsed,
            rows,
        }
    })
}

#[test]
fn criterion_5_margin_flip() {
    let runs = fixture_runs();
    let full = &runs.rows[0];
    let no_psr = &runs.rows[1];
    assert_eq!(full.variant, Variant::Full);
    assert_eq!(no_psr.variant, Variant::NoPsr);
    let good_seeds = full
        .margins
        .iter()
        .zip(&no_psr.margins)
        .filter(|&(&f, &n)| f > 0.0 && n < f)
        .count();
    println!(
        "  margins over seeds: full {:?} vs no_psr {:?} ({good_seeds}/5 seeds ordered)",
        full.margins, no_psr.margins
    );
    let within_budget = runs.margin_elapsed < Duration::from_secs(300);
    if !within_budget {
        eprintln!("margin runs took {:?}", runs.margin_elapsed);
    }
    verdict(5, "margin flip", good_seeds >= 4 && within_budget);
}

#[test]
fn criterion_6_ablation_ordering() {
    let runs = fixture_runs();
    let r5 = |variant: Variant| -> f64 {
        let row = runs
            .rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("variant present");
        row.mean.recall_at[&5]
    };
    let (full, no_psr, no_kd, no_pt) = (
        r5(Variant::Full),
        r5(Variant::NoPsr),
        r5(Variant::NoKd),
        r5(Variant::NoPt),
    );
    println!(
        "  mean Recall@5: full {full:.4}, no_psr {no_psr:.4}, no_kd {no_kd:.4}, no_pt {no_pt:.4}"
    );
    verdict(
        6,
        "ablation ordering",
        full >= no_psr && full >= no_kd && full >= no_pt,
    );
}

// ---------------------------------------------------------------------------
// 7. Threshold-quality ordering

#[test]
fn criterion_7_threshold_quality_ordering() {
    let corpus = topic_fixture(&FixtureConfig {
        n_topics: 20,
        passages_per_topic: 10,
        queries_per_topic: 5,
        labeled_per_topic: 5,
    })
    .unwrap();
    let labeled: Vec<QueryId> = corpus.labeled_queries().map(|q| q.id).collect();
    let retriever = OverlapRetriever;
    let avg = |s_pos: f64, s_neg: f64| -> (f64, f64) {
        let cfg = PseudoLabelConfig {
            s_pos,
            s_neg,
            top_k: 20,
            ..Default::default()
        };
        let mut pos_sum = 0.0;
        let mut neg_sum = 0.0;
        for seed in 0..10u64 {
            let teacher = OracleTeacher::with_noise(0.1, seed);
            // labeled queries scored blind so the audit measures the teacher
            let set =
                generate_pseudo_labels(&corpus, &labeled, &retriever, &teacher, &cfg, seed)
                    .unwrap();
            let (p, n) = audit_quality(&set, &corpus, 100, seed).unwrap();
            pos_sum += p;
            neg_sum += n;
        }
        (pos_sum / 10.0, neg_sum / 10.0)
    };
    let (strict_pos, strict_neg) = avg(0.9, 0.1);
    let (loose_pos, loose_neg) = avg(0.6, 0.4);
    println!(
        "  acc at (0.9, 0.1): {strict_pos:.4}/{strict_neg:.4}; at (0.6, 0.4): {loose_pos:.4}/{loose_neg:.4}"
    );
    let ordering = strict_pos >= loose_pos && strict_neg >= loose_neg;

    // exact monotonicity on a fixed score set, via the file teacher
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.tsv");
    let small = Corpus::from_records(
        vec!["q zero".into()],
        (0..8).map(|i| format!("passage number {i}")).collect(),
        vec![],
    )
    .unwrap();
    let scores = [0.95, 0.85, 0.75, 0.65, 0.55, 0.35, 0.15, 0.05];
    let body: String = scores
        .iter()
        .enumerate()
        .map(|(i, s)| format!("0\t{i}\t{s}\n"))
        .collect();
    std::fs::write(&path, body).unwrap();
    let teacher = FileTeacher::load(&path).unwrap();
    let pos_set = |s_pos: f64| -> BTreeSet<PassageId> {
        let cfg = PseudoLabelConfig {
            s_pos,
            s_neg: 0.0,
            top_k: 8,
            ..Default::default()
        };
        generate_pseudo_labels(&small, &[QueryId(0)], &retriever, &teacher, &cfg, 0)
            .unwrap()
            .examples
            .iter()
            .map(|e| e.positive_id)
            .collect()
    };
    let strict = pos_set(0.9);
    let loose = pos_set(0.6);
    let monotone = strict.is_subset(&loose) && strict.len() == 1 && loose.len() == 4;

    verdict(7, "threshold-quality ordering", ordering && monotone);
}

// ---------------------------------------------------------------------------
// 8. Metric oracle

fn brute_mrr(run: &[(u32, Vec<u32>)], qrels: &Judgments<u32, u32>, k: usize) -> f64 {
    let mut total = 0.0;
    for q in qrels.queries() {
        if let Some((_, ranking)) = run.iter().find(|(rq, _)| rq == q) {
            for (pos, p) in ranking.iter().enumerate().take(k) {
                if qrels.is_positive(q, p) {
                    total += 1.0 / (pos + 1) as f64;
                    break;
                }
            }
        }
    }
    total / qrels.n_queries() as f64
}

fn brute_recall(run: &[(u32, Vec<u32>)], qrels: &Judgments<u32, u32>, k: usize) -> f64 {
    let mut hit = 0usize;
    for q in qrels.queries() {
        if let Some((_, ranking)) = run.iter().find(|(rq, _)| rq == q) {
            if ranking.iter().take(k).any(|p| qrels.is_positive(q, p)) {
                hit += 1;
            }
        }
    }
    hit as f64 / qrels.n_queries() as f64
}

#[test]
fn criterion_8_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for _ in 0..200 {
        let n_q = rng.gen_range(1..8);
        let n_p = rng.gen_range(1..20);
        let mut qrels = Judgments::new();
        for q in 0..n_q {
            for p in 0..n_p {
                if rng.gen_bool(0.2) {
                    qrels.add(q, p);
                }
            }
            if rng.gen_bool(0.5) {
                qrels.add(q, rng.gen_range(0..n_p));
            }
        }
        if qrels.n_queries() == 0 {
            continue;
        }
        let mut run: Vec<(u32, Vec<u32>)> = Vec::new();
        for q in 0..n_q {
            if !rng.gen_bool(0.9) {
                continue; // sometimes drop a judged query
            }
            let mut ps: Vec<u32> = (0..n_p).collect();
            ps.shuffle(&mut rng);
            ps.truncate(rng.gen_range(1..=n_p as usize));
            run.push((q, ps));
        }
        let k = rng.gen_range(1..=n_p as usize + 2);
        if (mrr_at_k(&run, &qrels, k) - brute_mrr(&run, &qrels, k)).abs() > 1e-12 {
            ok = false;
        }
        if (recall_at_k(&run, &qrels, k) - brute_recall(&run, &qrels, k)).abs() > 1e-12 {
            ok = false;
        }
    }

    // hand case: first positives at ranks 2 and 5, k = 10
    let mut qrels = Judgments::new();
    qrels.add(0u32, 100u32);
    qrels.add(1u32, 200u32);
    let run = vec![
        (0u32, vec![1, 100, 2, 3, 4]),
        (1u32, vec![5, 6, 7, 8, 200, 9]),
    ];
    if mrr_at_k(&run, &qrels, 10) != 0.35 {
        eprintln!("hand case: {}", mrr_at_k(&run, &qrels, 10));
        ok = false;
    }

    verdict(8, "metric oracle", ok);
}

// ---------------------------------------------------------------------------
// 9. Determinism

/// One full pipeline pass, returning every artifact as bytes.
fn pipeline_artifacts() -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let fixture = topic_fixture(&FixtureConfig {
        n_topics: 10,
        passages_per_topic: 6,
        queries_per_topic: 5,
        labeled_per_topic: 3,
    })
    .unwrap();
    fixture.save(dir.path()).unwrap();
    // ingest from disk so the whole artifact chain is exercised
    let corpus = pair::corpus::ingest(
        &dir.path().join("queries.tsv"),
        &dir.path().join("passages.tsv"),
        Some(&dir.path().join("qrels.txt")),
    )
    .unwrap();
    let cfg = TrainConfig {
        v: 1 << 12,
        d_emb: 16,
        d_h: 16,
        d: 16,
        batch_size: 8,
        hard_negs_per_pos: 2,
        epochs_pretrain: 2,
        epochs_finetune: 2,
        lr: 0.05,
        seed: 9,
        ..Default::default()
    };
    let (train_c, dev_c) = corpus.split(0.2, 9).unwrap();
    let teacher = pair::distill::teacher::OverlapTeacher::default();
    let retriever = OverlapRetriever;
    let pcfg = PseudoLabelConfig {
        top_k: 20,
        ..Default::default()
    };
    let unlabeled: Vec<QueryId> = train_c.unlabeled_queries().map(|q| q.id).collect();
    let pseudo =
        generate_pseudo_labels(&train_c, &unlabeled, &retriever, &teacher, &pcfg, 9).unwrap();
    let relabel =
        pair::distill::relabel_labeled_corpus(&train_c, &retriever, &teacher, &pcfg, 9).unwrap();
    let mut pretrain_data = pseudo.examples.clone();
    pretrain_data.extend(relabel.examples.iter().cloned());

    let model = init_model(&cfg, true).unwrap();
    let model = pretrain(&train_c, &pretrain_data, &cfg, model, None).unwrap();
    let pretrain_ckpt = serialize_checkpoint(&model, "pretrain", serde_json::Value::Null);
    let model = finetune(&train_c, &relabel.examples, &cfg, model, None).unwrap();
    let finetune_ckpt = serialize_checkpoint(&model, "finetune", serde_json::Value::Null);

    let store = build_index(&train_c, &model).unwrap();
    let queries: Vec<(QueryId, Vec<f64>)> = dev_c
        .labeled_queries()
        .map(|q| (q.id, model.encode_text(Role::Query, &q.text).unwrap()))
        .collect();
    let run = batch_search(&store, &queries, 20, false).unwrap();
    let rankings = run_to_rankings(&run);
    let report = evaluate(&rankings, &Judgments::from_corpus(&dev_c), &[5, 20], "full");

    let mut pseudo_bytes = Vec::new();
    for ex in &pseudo.examples {
        pseudo_bytes.extend_from_slice(serde_json::to_string(ex).unwrap().as_bytes());
        pseudo_bytes.push(b'\n');
    }
    vec![
        pseudo_bytes,
        pretrain_ckpt,
        finetune_ckpt,
        store.serialize(),
        run.to_trec(&corpus).into_bytes(),
        serde_json::to_vec(&report).unwrap(),
    ]
}

#[test]
fn criterion_9_determinism() {
    let first = pipeline_artifacts();
    let second = pipeline_artifacts();
    let names = [
        "pseudo labels",
        "pretrain checkpoint",
        "finetune checkpoint",
        "embedding store",
        "run file",
        "eval report",
    ];
    let mut ok = true;
    for ((a, b), name) in first.iter().zip(&second).zip(names) {
        if a != b {
            eprintln!("artifact {name} differs between runs");
            ok = false;
        }
    }
    verdict(9, "determinism", ok);
}
