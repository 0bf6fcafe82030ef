//! Corpus ingestion: queries, passages, relevance judgments, and train
//! example files.
//!
//! External files may use arbitrary string ids; ingestion assigns dense
//! internal integer ids in file order and keeps the mapping. Duplicate
//! passage texts are kept as distinct ids. Queries without any qrel are
//! kept and treated as unlabeled.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PassageId(pub u32);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for PassageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    pub id: QueryId,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct Passage {
    pub id: PassageId,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleSource {
    Gold,
    Pseudo,
}

/// One (query, positive, hard negatives) training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    #[serde(rename = "q")]
    pub query_id: QueryId,
    #[serde(rename = "pos")]
    pub positive_id: PassageId,
    #[serde(rename = "negs")]
    pub hard_negative_ids: Vec<PassageId>,
    pub src: ExampleSource,
}

impl TrainExample {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.hard_negative_ids.contains(&self.positive_id) {
            return Err(PairError::InvalidArgument(format!(
                "train example for query {}: positive {} also listed as hard negative",
                self.query_id, self.positive_id
            )));
        }
        if corpus.query(self.query_id).is_none() {
            return Err(PairError::DanglingId(format!("query {}", self.query_id)));
        }
        for &pid in std::iter::once(&self.positive_id).chain(&self.hard_negative_ids) {
            if corpus.passage(pid).is_none() {
                return Err(PairError::DanglingId(format!("passage {}", pid)));
            }
        }
        Ok(())
    }
}

/// Immutable after ingestion; safe for concurrent readers.
#[derive(Debug, Clone)]
pub struct Corpus {
    queries: BTreeMap<QueryId, Query>,
    passages: Vec<Passage>,
    qrels: BTreeSet<(QueryId, PassageId)>,
    positives: BTreeMap<QueryId, Vec<PassageId>>,
    query_ext: BTreeMap<QueryId, String>,
    passage_ext: Vec<String>,
    query_by_ext: HashMap<String, QueryId>,
    passage_by_ext: HashMap<String, PassageId>,
}

impl Corpus {
    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn n_passages(&self) -> usize {
        self.passages.len()
    }

    pub fn n_qrels(&self) -> usize {
        self.qrels.len()
    }

    pub fn query(&self, id: QueryId) -> Option<&Query> {
        self.queries.get(&id)
    }

    pub fn passage(&self, id: PassageId) -> Option<&Passage> {
        self.passages.get(id.0 as usize)
    }

    pub fn queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.values()
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }

    pub fn qrels(&self) -> impl Iterator<Item = (QueryId, PassageId)> + '_ {
        self.qrels.iter().copied()
    }

    pub fn positives(&self, q: QueryId) -> &[PassageId] {
        self.positives.get(&q).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_relevant(&self, q: QueryId, p: PassageId) -> bool {
        self.qrels.contains(&(q, p))
    }

    /// Queries that carry at least one qrel.
    pub fn labeled_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries().filter(|q| !self.positives(q.id).is_empty())
    }

    /// Queries without any qrel, eligible for pseudo-labeling only.
    pub fn unlabeled_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries().filter(|q| self.positives(q.id).is_empty())
    }

    pub fn external_query_id(&self, id: QueryId) -> &str {
        &self.query_ext[&id]
    }

    pub fn external_passage_id(&self, id: PassageId) -> &str {
        &self.passage_ext[id.0 as usize]
    }

    pub fn query_id_by_external(&self, ext: &str) -> Option<QueryId> {
        self.query_by_ext.get(ext).copied()
    }

    pub fn passage_id_by_external(&self, ext: &str) -> Option<PassageId> {
        self.passage_by_ext.get(ext).copied()
    }

    /// Build a corpus directly from in-memory records. External ids are the
    /// decimal internal ids.
    pub fn from_records(
        queries: Vec<String>,
        passages: Vec<String>,
        qrels: Vec<(u32, u32)>,
    ) -> Result<Corpus> {
        let q_lines: Vec<(String, String)> = queries
            .into_iter()
            .enumerate()
            .map(|(i, t)| (i.to_string(), t))
            .collect();
        let p_lines: Vec<(String, String)> = passages
            .into_iter()
            .enumerate()
            .map(|(i, t)| (i.to_string(), t))
            .collect();
        let r_lines: Vec<(String, String)> = qrels
            .into_iter()
            .map(|(q, p)| (q.to_string(), p.to_string()))
            .collect();
        Corpus::assemble(q_lines, p_lines, r_lines, "<memory>")
    }

    fn assemble(
        queries: Vec<(String, String)>,
        passages: Vec<(String, String)>,
        qrels: Vec<(String, String)>,
        qrels_path: &str,
    ) -> Result<Corpus> {
        let mut corpus = Corpus {
            queries: BTreeMap::new(),
            passages: Vec::new(),
            qrels: BTreeSet::new(),
            positives: BTreeMap::new(),
            query_ext: BTreeMap::new(),
            passage_ext: Vec::new(),
            query_by_ext: HashMap::new(),
            passage_by_ext: HashMap::new(),
        };
        for (ext, text) in queries {
            let id = QueryId(corpus.queries.len() as u32);
            if corpus.query_by_ext.insert(ext.clone(), id).is_some() {
                return Err(PairError::InvalidArgument(format!(
                    "duplicate query id {ext:?}"
                )));
            }
            corpus.query_ext.insert(id, ext);
            corpus.queries.insert(id, Query { id, text });
        }
        for (ext, text) in passages {
            let id = PassageId(corpus.passages.len() as u32);
            if corpus.passage_by_ext.insert(ext.clone(), id).is_some() {
                return Err(PairError::InvalidArgument(format!(
                    "duplicate passage id {ext:?}"
                )));
            }
            corpus.passage_ext.push(ext);
            corpus.passages.push(Passage { id, text });
        }
        let mut dangling = Vec::new();
        for (q_ext, p_ext) in qrels {
            let q = corpus.query_by_ext.get(&q_ext).copied();
            let p = corpus.passage_by_ext.get(&p_ext).copied();
            match (q, p) {
                (Some(q), Some(p)) => {
                    if !corpus.qrels.insert((q, p)) {
                        return Err(PairError::InvalidArgument(format!(
                            "duplicate qrel pair ({q_ext}, {p_ext})"
                        )));
                    }
                    corpus.positives.entry(q).or_default().push(p);
                }
                (None, _) => dangling.push(format!("query {q_ext:?}")),
                (_, None) => dangling.push(format!("passage {p_ext:?}")),
            }
        }
        if !dangling.is_empty() {
            return Err(PairError::DanglingId(format!(
                "{}: {}",
                qrels_path,
                dangling.join(", ")
            )));
        }
        Ok(corpus)
    }

    /// Deterministic partition of queries into (train, dev) by seed.
    /// Passages are shared by both splits; qrels follow their query.
    pub fn split(&self, dev_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
            return Err(PairError::InvalidArgument(format!(
                "dev_fraction must be in (0, 1), got {dev_fraction}"
            )));
        }
        let mut ids: Vec<QueryId> = self.queries.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let n_dev = ((ids.len() as f64) * dev_fraction).round() as usize;
        let n_dev = n_dev.clamp(1, ids.len().saturating_sub(1).max(1));
        let dev_set: BTreeSet<QueryId> = ids[..n_dev].iter().copied().collect();
        Ok((
            self.restrict_queries(|q| !dev_set.contains(&q)),
            self.restrict_queries(|q| dev_set.contains(&q)),
        ))
    }

    fn restrict_queries(&self, keep: impl Fn(QueryId) -> bool) -> Corpus {
        let queries: BTreeMap<QueryId, Query> = self
            .queries
            .iter()
            .filter(|(id, _)| keep(**id))
            .map(|(id, q)| (*id, q.clone()))
            .collect();
        let qrels: BTreeSet<(QueryId, PassageId)> = self
            .qrels
            .iter()
            .filter(|(q, _)| keep(*q))
            .copied()
            .collect();
        let mut positives: BTreeMap<QueryId, Vec<PassageId>> = BTreeMap::new();
        for &(q, p) in &qrels {
            positives.entry(q).or_default().push(p);
        }
        let query_ext = self
            .query_ext
            .iter()
            .filter(|(id, _)| keep(**id))
            .map(|(id, e)| (*id, e.clone()))
            .collect();
        let query_by_ext = self
            .query_by_ext
            .iter()
            .filter(|(_, id)| keep(**id))
            .map(|(e, id)| (e.clone(), *id))
            .collect();
        Corpus {
            queries,
            passages: self.passages.clone(),
            qrels,
            positives,
            query_ext,
            passage_ext: self.passage_ext.clone(),
            query_by_ext,
            passage_by_ext: self.passage_by_ext.clone(),
        }
    }

    /// Write the corpus back out in the ingestion formats.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PairError::io(dir.display().to_string(), e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| PairError::io(path.display().to_string(), e))
        };
        let mut q = String::new();
        for query in self.queries.values() {
            q.push_str(&format!(
                "{}\t{}\n",
                self.external_query_id(query.id),
                query.text
            ));
        }
        write("queries.tsv", q)?;
        let mut p = String::new();
        for passage in &self.passages {
            p.push_str(&format!(
                "{}\t{}\n",
                self.external_passage_id(passage.id),
                passage.text
            ));
        }
        write("passages.tsv", p)?;
        let mut r = String::new();
        for &(qid, pid) in &self.qrels {
            r.push_str(&format!(
                "{} 0 {} 1\n",
                self.external_query_id(qid),
                self.external_passage_id(pid)
            ));
        }
        write("qrels.txt", r)
    }
}

fn read_tsv_records(path: &Path) -> Result<Vec<(String, String)>> {
    let file =
        std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| PairError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: "expected <id>\\t<text>".into(),
        })?;
        if text.trim().is_empty() {
            return Err(PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "empty text".into(),
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

fn read_qrels_records(path: &Path) -> Result<Vec<(String, String)>> {
    let file =
        std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(PairError::Malformed {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected <query_id> 0 <passage_id> 1".into(),
            });
        }
        out.push((fields[0].to_string(), fields[2].to_string()));
    }
    Ok(out)
}

/// Ingest and validate a corpus from TSV query/passage files and an
/// optional TREC-convention qrels file.
pub fn ingest(
    queries_path: &Path,
    passages_path: &Path,
    qrels_path: Option<&Path>,
) -> Result<Corpus> {
    let queries = read_tsv_records(queries_path)?;
    let passages = read_tsv_records(passages_path)?;
    let qrels = match qrels_path {
        Some(p) => read_qrels_records(p)?,
        None => Vec::new(),
    };
    let qrels_name = qrels_path
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    Corpus::assemble(queries, passages, qrels, &qrels_name)
}

/// Read train examples from a JSON-lines file.
pub fn read_train_examples(path: &Path) -> Result<Vec<TrainExample>> {
    let file =
        std::fs::File::open(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PairError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainExample = serde_json::from_str(&line).map_err(|e| PairError::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

/// Write train examples as JSON-lines.
pub fn write_train_examples(path: &Path, examples: &[TrainExample]) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| PairError::io(path.display().to_string(), e))?;
    for ex in examples {
        let line = serde_json::to_string(ex).expect("train example serializes");
        writeln!(file, "{line}").map_err(|e| PairError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny() -> Corpus {
        Corpus::from_records(
            vec!["who wrote hamlet".into(), "capital of peru".into(), "speed of light".into()],
            vec![
                "shakespeare wrote hamlet".into(),
                "lima is the capital of peru".into(),
                "light travels fast".into(),
                "unrelated text one".into(),
                "unrelated text two".into(),
            ],
            vec![(0, 0), (1, 1), (2, 2)],
        )
        .unwrap()
    }

    #[test]
    fn counts_after_ingest() {
        let c = tiny();
        assert_eq!(c.n_queries(), 3);
        assert_eq!(c.n_passages(), 5);
        assert_eq!(c.n_qrels(), 3);
    }

    #[test]
    fn dangling_qrel_is_an_error() {
        let err = Corpus::from_records(
            vec!["q".into()],
            vec!["p".into()],
            vec![(0, 7)],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7'), "error should name the offending id: {msg}");
    }

    #[test]
    fn duplicate_qrel_rejected() {
        assert!(Corpus::from_records(
            vec!["q".into()],
            vec!["p".into()],
            vec![(0, 0), (0, 0)],
        )
        .is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let queries: Vec<String> = (0..100).map(|i| format!("query number {i}")).collect();
        let c = Corpus::from_records(queries, vec!["p".into()], vec![]).unwrap();
        let (train, dev) = c.split(0.1, 7).unwrap();
        assert_eq!(train.n_queries(), 90);
        assert_eq!(dev.n_queries(), 10);
        let t: BTreeSet<QueryId> = train.queries().map(|q| q.id).collect();
        let d: BTreeSet<QueryId> = dev.queries().map(|q| q.id).collect();
        assert!(t.is_disjoint(&d));
        assert_eq!(t.len() + d.len(), 100);
        // same seed twice -> identical splits
        let (train2, dev2) = c.split(0.1, 7).unwrap();
        let t2: BTreeSet<QueryId> = train2.queries().map(|q| q.id).collect();
        let d2: BTreeSet<QueryId> = dev2.queries().map(|q| q.id).collect();
        assert_eq!(t, t2);
        assert_eq!(d, d2);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = tiny();
        assert!(c.split(0.0, 1).is_err());
        assert!(c.split(1.0, 1).is_err());
    }

    #[test]
    fn save_ingest_round_trip() {
        let c = tiny();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let c2 = ingest(
            &dir.path().join("queries.tsv"),
            &dir.path().join("passages.tsv"),
            Some(&dir.path().join("qrels.txt")),
        )
        .unwrap();
        assert_eq!(c.n_queries(), c2.n_queries());
        for q in c.queries() {
            assert_eq!(q.text, c2.query(q.id).unwrap().text);
        }
        for p in c.passages() {
            assert_eq!(p.text, c2.passage(p.id).unwrap().text);
        }
        let r1: Vec<_> = c.qrels().collect();
        let r2: Vec<_> = c2.qrels().collect();
        assert_eq!(r1, r2);
    }

    #[test]
    fn unlabeled_queries_are_kept() {
        let c = Corpus::from_records(
            vec!["labeled".into(), "unlabeled".into()],
            vec!["p".into()],
            vec![(0, 0)],
        )
        .unwrap();
        assert_eq!(c.labeled_queries().count(), 1);
        assert_eq!(c.unlabeled_queries().count(), 1);
    }

    #[test]
    fn train_example_json_shape() {
        let ex = TrainExample {
            query_id: QueryId(1),
            positive_id: PassageId(2),
            hard_negative_ids: vec![PassageId(3), PassageId(4)],
            src: ExampleSource::Gold,
        };
        let s = serde_json::to_string(&ex).unwrap();
        assert_eq!(s, r#"{"q":1,"pos":2,"negs":[3,4],"src":"gold"}"#);
        let back: TrainExample = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ex);
    }

    #[test]
    fn positive_in_negs_rejected() {
        let c = tiny();
        let ex = TrainExample {
            query_id: QueryId(0),
            positive_id: PassageId(0),
            hard_negative_ids: vec![PassageId(0)],
            src: ExampleSource::Pseudo,
        };
        assert!(ex.validate(&c).is_err());
    }
}
