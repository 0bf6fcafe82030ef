//! Retrieval metrics (MRR@k, Recall@k), the margin analysis over
//! top-retrieved passages, and comparison tables across variants.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Corpus, PassageId, QueryId};
use crate::encoder::{EncoderModel, Role};
use crate::error::{PairError, Result};
use crate::index::{search, EmbeddingStore, RunFile};
use crate::objective::similarity;

/// Positive judgments per query.
#[derive(Debug, Clone, Default)]
pub struct Judgments<Q: Ord, P: Ord> {
    positives: BTreeMap<Q, BTreeSet<P>>,
}

impl<Q: Ord + Clone, P: Ord + Clone> Judgments<Q, P> {
    pub fn new() -> Self {
        Judgments {
            positives: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, q: Q, p: P) {
        self.positives.entry(q).or_default().insert(p);
    }

    pub fn n_queries(&self) -> usize {
        self.positives.len()
    }

    pub fn queries(&self) -> impl Iterator<Item = &Q> {
        self.positives.keys()
    }

    pub fn positives(&self, q: &Q) -> Option<&BTreeSet<P>> {
        self.positives.get(q)
    }

    pub fn is_positive(&self, q: &Q, p: &P) -> bool {
        self.positives.get(q).is_some_and(|s| s.contains(p))
    }
}

impl Judgments<QueryId, PassageId> {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut j = Judgments::new();
        for (q, p) in corpus.qrels() {
            j.add(q, p);
        }
        j
    }
}

/// Mean over judged queries of 1/rank of the first positive within the
/// top k, else 0. Judged queries absent from the run contribute 0.
pub fn mrr_at_k<Q: Ord + Clone, P: Ord + Clone>(
    run: &[(Q, Vec<P>)],
    qrels: &Judgments<Q, P>,
    k: usize,
) -> f64 {
    if qrels.n_queries() == 0 {
        return 0.0;
    }
    let ranked: BTreeMap<&Q, &Vec<P>> = run.iter().map(|(q, ps)| (q, ps)).collect();
    let mut total = 0.0;
    for q in qrels.queries() {
        if let Some(ps) = ranked.get(q) {
            for (i, p) in ps.iter().take(k).enumerate() {
                if qrels.is_positive(q, p) {
                    total += 1.0 / (i + 1) as f64;
                    break;
                }
            }
        } else {
            eprintln!("pair: warning: judged query missing from run, scored 0");
        }
    }
    total / qrels.n_queries() as f64
}

/// Fraction of judged queries whose top k contains at least one positive.
pub fn recall_at_k<Q: Ord + Clone, P: Ord + Clone>(
    run: &[(Q, Vec<P>)],
    qrels: &Judgments<Q, P>,
    k: usize,
) -> f64 {
    if qrels.n_queries() == 0 {
        return 0.0;
    }
    let ranked: BTreeMap<&Q, &Vec<P>> = run.iter().map(|(q, ps)| (q, ps)).collect();
    let mut hit = 0usize;
    for q in qrels.queries() {
        if let Some(ps) = ranked.get(q) {
            if ps.iter().take(k).any(|p| qrels.is_positive(q, p)) {
                hit += 1;
            }
        }
    }
    hit as f64 / qrels.n_queries() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub variant: String,
    pub n_queries: usize,
    pub mrr_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
}

pub fn evaluate<Q: Ord + Clone, P: Ord + Clone>(
    run: &[(Q, Vec<P>)],
    qrels: &Judgments<Q, P>,
    ks: &[usize],
    variant: &str,
) -> EvalReport {
    EvalReport {
        variant: variant.to_string(),
        n_queries: qrels.n_queries(),
        mrr_at: ks.iter().map(|&k| (k, mrr_at_k(run, qrels, k))).collect(),
        recall_at: ks.iter().map(|&k| (k, recall_at_k(run, qrels, k))).collect(),
    }
}

/// Internal-id ranking lists from a run file.
pub fn run_to_rankings(run: &RunFile) -> Vec<(QueryId, Vec<PassageId>)> {
    run.entries
        .iter()
        .map(|(q, hits)| (*q, hits.iter().map(|h| h.passage_id).collect()))
        .collect()
}

/// Parse a TREC run file into external-id rankings, query order by first
/// appearance, hits ordered by the rank column.
pub fn parse_trec_run(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let file =
        std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    let mut order: Vec<String> = Vec::new();
    let mut per_query: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected 6 fields (TREC run format)".into(),
            });
        }
        let rank: usize = f[3].parse().map_err(|_| PairError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad rank {:?}", f[3]),
        })?;
        if !per_query.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        per_query
            .entry(f[0].to_string())
            .or_default()
            .push((rank, f[2].to_string()));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut hits = per_query.remove(&q).unwrap();
            hits.sort();
            (q, hits.into_iter().map(|(_, p)| p).collect())
        })
        .collect())
}

/// Parse a TREC-convention qrels file into external-id judgments. Lines
/// with relevance 0 are ignored.
pub fn parse_trec_qrels(path: &Path) -> Result<Judgments<String, String>> {
    let file =
        std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    let mut j = Judgments::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected <query_id> 0 <passage_id> <rel>".into(),
            });
        }
        if f[3] != "0" {
            j.add(f[0].to_string(), f[2].to_string());
        }
    }
    Ok(j)
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    /// Mean over queries of s(p+, q).
    pub mean_s_pos_q: f64,
    /// Mean over queries of the mean s(p+, p-) over retrieved
    /// non-positives.
    pub mean_s_pos_neg: f64,
    pub std_s_pos_q: f64,
    pub std_s_pos_neg: f64,
    pub n_pairs: usize,
    pub n_skipped: usize,
}

impl MarginReport {
    pub fn margin(&self) -> f64 {
        self.mean_s_pos_q - self.mean_s_pos_neg
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// For each judged query: retrieve top_n, then compare s(p+, q) against
/// the mean s(p+, p-) over retrieved passages that are not gold
/// positives for the query. p+ is the lowest-id gold positive.
pub fn margin_analysis(
    model: &EncoderModel,
    store: &EmbeddingStore,
    eval_corpus: &Corpus,
    top_n: usize,
) -> Result<MarginReport> {
    let mut s_pos_q = Vec::new();
    let mut s_pos_neg = Vec::new();
    let mut skipped = 0usize;
    for query in eval_corpus.queries() {
        let golds = eval_corpus.positives(query.id);
        if golds.is_empty() {
            skipped += 1;
            continue;
        }
        let pos_id = *golds.iter().min().unwrap();
        let pos_text = &eval_corpus.passage(pos_id).unwrap().text;
        let pos_vec = model.encode_text(Role::Passage, pos_text)?;
        let q_vec = model.encode_text(Role::Query, &query.text)?;
        let hits = search(store, &q_vec, top_n)?;
        let mut neg_sims = Vec::new();
        for hit in &hits {
            if golds.contains(&hit.passage_id) {
                continue;
            }
            let neg_text = &eval_corpus.passage(hit.passage_id).unwrap().text;
            let neg_vec = model.encode_text(Role::Passage, neg_text)?;
            neg_sims.push(similarity(&pos_vec, &neg_vec)?);
        }
        if neg_sims.is_empty() {
            skipped += 1;
            continue;
        }
        s_pos_q.push(similarity(&pos_vec, &q_vec)?);
        s_pos_neg.push(neg_sims.iter().sum::<f64>() / neg_sims.len() as f64);
    }
    if s_pos_q.is_empty() {
        return Err(PairError::InvalidArgument(
            "no judged queries available for margin analysis".into(),
        ));
    }
    let (mq, sq) = mean_std(&s_pos_q);
    let (mn, sn) = mean_std(&s_pos_neg);
    Ok(MarginReport {
        mean_s_pos_q: mq,
        mean_s_pos_neg: mn,
        std_s_pos_q: sq,
        std_s_pos_neg: sn,
        n_pairs: s_pos_q.len(),
        n_skipped: skipped,
    })
}

/// Aligned metric table over variants, row order as given. Metric columns
/// are the union of all k values, blank where a report lacks a k.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let ks: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.recall_at.keys().copied())
        .collect();
    let mrr_ks: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.mrr_at.keys().copied())
        .collect();
    let mut out = String::from("variant");
    for k in &mrr_ks {
        out.push_str(&format!("\tMRR@{k}"));
    }
    for k in &ks {
        out.push_str(&format!("\tR@{k}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.variant);
        for k in &mrr_ks {
            match r.mrr_at.get(k) {
                Some(v) => out.push_str(&format!("\t{v:.4}")),
                None => out.push('\t'),
            }
        }
        for k in &ks {
            match r.recall_at.get(k) {
                Some(v) => out.push_str(&format!("\t{v:.4}")),
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}

/// Plot-ready long-format TSV: variant, metric, k, value.
pub fn comparison_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("variant\tmetric\tk\tvalue\n");
    for r in reports {
        for (k, v) in &r.mrr_at {
            out.push_str(&format!("{}\tmrr\t{k}\t{v}\n", r.variant));
        }
        for (k, v) in &r.recall_at {
            out.push_str(&format!("{}\trecall\t{k}\t{v}\n", r.variant));
        }
    }
    out
}

/// Re-parse a comparison TSV, for round-trip checks and downstream
/// tooling.
pub fn parse_comparison_tsv(tsv: &str) -> Result<Vec<(String, String, usize, f64)>> {
    let mut out = Vec::new();
    for (lineno, line) in tsv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(PairError::Malformed {
                path: "<tsv>".into(),
                line: lineno + 1,
                msg: "expected 4 tab-separated fields".into(),
            });
        }
        let k = f[2].parse().map_err(|_| PairError::Malformed {
            path: "<tsv>".into(),
            line: lineno + 1,
            msg: format!("bad k {:?}", f[2]),
        })?;
        let v = f[3].parse().map_err(|_| PairError::Malformed {
            path: "<tsv>".into(),
            line: lineno + 1,
            msg: format!("bad value {:?}", f[3]),
        })?;
        out.push((f[0].to_string(), f[1].to_string(), k, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judg(pairs: &[(u32, u32)]) -> Judgments<u32, u32> {
        let mut j = Judgments::new();
        for &(q, p) in pairs {
            j.add(q, p);
        }
        j
    }

    #[test]
    fn mrr_first_positive_rank_one() {
        let run = vec![(1u32, vec![10u32, 11]), (2, vec![20, 21])];
        let q = judg(&[(1, 10), (2, 20)]);
        assert_eq!(mrr_at_k(&run, &q, 10), 1.0);
    }

    #[test]
    fn mrr_hand_case_ranks_two_and_five() {
        let run = vec![
            (1u32, vec![0u32, 10, 1, 2, 3]),
            (2, vec![4, 5, 6, 7, 20]),
        ];
        let q = judg(&[(1, 10), (2, 20)]);
        let v = mrr_at_k(&run, &q, 10);
        assert_eq!(v, (0.5 + 0.2) / 2.0);
        assert_eq!(v, 0.35);
    }

    #[test]
    fn recall_bounds() {
        let run = vec![(1u32, vec![10u32, 11]), (2, vec![99, 98])];
        let q = judg(&[(1, 10), (2, 20)]);
        assert_eq!(recall_at_k(&run, &q, 2), 0.5);
        // nothing retrieved anywhere -> 0
        let q2 = judg(&[(1, 77)]);
        assert_eq!(recall_at_k(&run, &q2, 10), 0.0);
        // exhaustive ranking with every positive present -> 1
        assert_eq!(recall_at_k(&run, &judg(&[(1, 11)]), usize::MAX), 1.0);
    }

    #[test]
    fn recall_nondecreasing_in_k_and_dominates_mrr() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut docs: Vec<u32> = (0..30).collect();
            docs.shuffle(&mut rng);
            let run = vec![(0u32, docs)];
            let q = judg(&[(0, 4), (0, 9)]);
            let mut prev = 0.0;
            for k in 1..=30 {
                let r = recall_at_k(&run, &q, k);
                assert!(r >= prev);
                assert!(mrr_at_k(&run, &q, k) <= r + 1e-12);
                prev = r;
            }
        }
    }

    #[test]
    fn judged_query_missing_from_run_scores_zero() {
        let run = vec![(1u32, vec![10u32])];
        let q = judg(&[(1, 10), (2, 20)]);
        assert_eq!(mrr_at_k(&run, &q, 5), 0.5);
        assert_eq!(recall_at_k(&run, &q, 5), 0.5);
    }

    #[test]
    fn metrics_match_brute_force_definition_scan() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n_docs = rng.gen_range(1..20u32);
            let n_queries = rng.gen_range(1..6u32);
            let mut qrels = Judgments::new();
            let mut run = Vec::new();
            for q in 0..n_queries {
                let mut docs: Vec<u32> = (0..n_docs).collect();
                use rand::seq::SliceRandom;
                docs.shuffle(&mut rng);
                let keep = rng.gen_range(0..=n_docs) as usize;
                docs.truncate(keep);
                for d in 0..n_docs {
                    if rng.gen_bool(0.2) {
                        qrels.add(q, d);
                    }
                }
                run.push((q, docs));
            }
            if qrels.n_queries() == 0 {
                continue;
            }
            let k = rng.gen_range(1..25usize);
            // brute force directly from the definitions
            let mut mrr_total = 0.0;
            let mut recall_hits = 0usize;
            for q in qrels.queries() {
                let ranked = run.iter().find(|(rq, _)| rq == q);
                if let Some((_, docs)) = ranked {
                    let mut found = None;
                    for (i, d) in docs.iter().enumerate() {
                        if i >= k {
                            break;
                        }
                        if qrels.is_positive(q, d) {
                            found = Some(i + 1);
                            break;
                        }
                    }
                    if let Some(rank) = found {
                        mrr_total += 1.0 / rank as f64;
                        recall_hits += 1;
                    }
                }
            }
            let n = qrels.n_queries() as f64;
            assert!((mrr_at_k(&run, &qrels, k) - mrr_total / n).abs() < 1e-12);
            assert!((recall_at_k(&run, &qrels, k) - recall_hits as f64 / n).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_tsv_round_trips() {
        let reports = vec![
            EvalReport {
                variant: "full".into(),
                n_queries: 10,
                mrr_at: [(10, 0.5)].into(),
                recall_at: [(5, 0.7), (20, 0.9)].into(),
            },
            EvalReport {
                variant: "no_psr".into(),
                n_queries: 10,
                mrr_at: [(10, 0.4)].into(),
                recall_at: [(5, 0.6), (20, 0.8)].into(),
            },
        ];
        let tsv = comparison_tsv(&reports);
        let parsed = parse_comparison_tsv(&tsv).unwrap();
        assert_eq!(parsed.len(), 6);
        assert_eq!(parsed[0], ("full".into(), "mrr".into(), 10, 0.5));
        let table = comparison_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].contains("R@5"));
        assert!(lines[1].starts_with("full"));
        assert!(lines[2].starts_with("no_psr"));
    }
}
