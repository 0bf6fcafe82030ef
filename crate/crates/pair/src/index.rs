//! Passage encoding, embedding persistence, and exact top-k
//! maximum-inner-product search over the full collection.

use std::cmp::Ordering;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PassageId, QueryId};
use crate::encoder::checkpoint;
use crate::encoder::{EncoderModel, Role};
use crate::error::{PairError, Result};

pub const STORE_MAGIC: &[u8; 7] = b"PAIREMB";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StoreHeader {
    pub m: usize,
    pub d: usize,
    /// Fingerprint of the checkpoint that produced the embeddings.
    pub fingerprint: String,
}

/// Immutable embedding matrix over a passage collection. Row i holds the
/// encoding of ids[i].
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    pub ids: Vec<PassageId>,
    /// Row-major M x d, stored as f32 (the on-disk precision).
    pub matrix: Vec<f32>,
    pub d: usize,
    pub fingerprint: String,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.d..(i + 1) * self.d]
    }

    pub fn serialize(&self) -> Vec<u8> {
        let header = StoreHeader {
            m: self.len(),
            d: self.d,
            fingerprint: self.fingerprint.clone(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for id in &self.ids {
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<EmbeddingStore> {
        if bytes.len() < 15 || &bytes[0..7] != STORE_MAGIC {
            return Err(PairError::BadStore("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes([bytes[7], bytes[8], bytes[9], bytes[10]]);
        if version != STORE_VERSION {
            return Err(PairError::BadStore(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes([bytes[11], bytes[12], bytes[13], bytes[14]]) as usize;
        if 15 + header_len > bytes.len() {
            return Err(PairError::BadStore("truncated header".into()));
        }
        let header: StoreHeader = serde_json::from_slice(&bytes[15..15 + header_len])
            .map_err(|e| PairError::BadStore(format!("header: {e}")))?;
        let mut pos = 15 + header_len;
        let need = header.m * 4 + header.m * header.d * 4;
        if pos + need != bytes.len() {
            return Err(PairError::BadStore("truncated data".into()));
        }
        let mut ids = Vec::with_capacity(header.m);
        for chunk in bytes[pos..pos + header.m * 4].chunks_exact(4) {
            ids.push(PassageId(u32::from_le_bytes([
                chunk[0], chunk[1], chunk[2], chunk[3],
            ])));
        }
        pos += header.m * 4;
        let matrix = bytes[pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(EmbeddingStore {
            ids,
            matrix,
            d: header.d,
            fingerprint: header.fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())
            .map_err(|e| PairError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<EmbeddingStore> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| PairError::io(path.display().to_string(), e))?;
        EmbeddingStore::deserialize(&bytes)
    }
}

/// Encode every passage in the collection with the checkpoint's
/// passage-role parameters.
pub fn build_index(corpus: &Corpus, model: &EncoderModel) -> Result<EmbeddingStore> {
    let d = model.dims().d;
    let passages: Vec<_> = corpus.passages().collect();
    let rows: Vec<Result<Vec<f64>>> = passages
        .par_iter()
        .map(|p| model.encode_text(Role::Passage, &p.text))
        .collect();
    let mut ids = Vec::with_capacity(passages.len());
    let mut matrix = Vec::with_capacity(passages.len() * d);
    for (p, row) in passages.iter().zip(rows) {
        let row = row?;
        ids.push(p.id);
        matrix.extend(row.iter().map(|&v| v as f32));
    }
    let ckpt_bytes = checkpoint::serialize(model, "", serde_json::Value::Null);
    Ok(EmbeddingStore {
        ids,
        matrix,
        d,
        fingerprint: checkpoint::fingerprint(&ckpt_bytes),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub passage_id: PassageId,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

// Ordering: higher score first; ties broken by ascending passage id.
fn hit_better(a: (f64, PassageId), b: (f64, PassageId)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.1.cmp(&a.1))
}

/// Exact top-k by dot product over all rows. Deterministic tie-break by
/// ascending passage id; returns min(k, M) hits.
pub fn search(store: &EmbeddingStore, query_vec: &[f64], k: usize) -> Result<Vec<SearchHit>> {
    if store.is_empty() {
        return Err(PairError::InvalidArgument("empty embedding store".into()));
    }
    if k == 0 {
        return Err(PairError::InvalidArgument("k must be >= 1".into()));
    }
    if query_vec.len() != store.d {
        return Err(PairError::ShapeMismatch(format!(
            "query dim {} vs store dim {}",
            query_vec.len(),
            store.d
        )));
    }
    // Size-k selection: keep the current worst at the heap top.
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry(f64, PassageId);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            hit_better((self.0, self.1), (other.0, other.1))
        }
    }

    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::with_capacity(k + 1);
    for i in 0..store.len() {
        let row = store.row(i);
        let score: f64 = row
            .iter()
            .zip(query_vec)
            .map(|(&m, &q)| m as f64 * q)
            .sum();
        heap.push(Reverse(Entry(score, store.ids[i])));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut hits: Vec<(f64, PassageId)> = heap.into_iter().map(|Reverse(e)| (e.0, e.1)).collect();
    hits.sort_by(|a, b| hit_better(*b, *a));
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, (score, passage_id))| SearchHit {
            passage_id,
            score,
            rank: i + 1,
        })
        .collect())
}

/// Ranked results per query, in query input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub entries: Vec<(QueryId, Vec<SearchHit>)>,
}

/// Search per query; output order equals input order. With `parallel`,
/// queries fan out over the rayon pool but each query's scan is
/// unchanged, so results are identical to serial execution.
pub fn batch_search(
    store: &EmbeddingStore,
    queries: &[(QueryId, Vec<f64>)],
    k: usize,
    parallel: bool,
) -> Result<RunFile> {
    let results: Vec<Result<Vec<SearchHit>>> = if parallel {
        queries
            .par_iter()
            .map(|(_, vec)| search(store, vec, k))
            .collect()
    } else {
        queries.iter().map(|(_, vec)| search(store, vec, k)).collect()
    };
    let mut entries = Vec::with_capacity(queries.len());
    for ((qid, _), hits) in queries.iter().zip(results) {
        entries.push((*qid, hits?));
    }
    Ok(RunFile { entries })
}

/// Format with 6 significant digits.
pub fn format_score(score: f64) -> String {
    if score == 0.0 {
        return "0.00000".to_string();
    }
    let exp = score.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{score:.decimals$}")
}

impl RunFile {
    /// TREC format: `<query_id> Q0 <passage_id> <rank> <score> pair-toolkit`.
    pub fn to_trec(&self, corpus: &Corpus) -> String {
        let mut out = String::new();
        for (qid, hits) in &self.entries {
            for hit in hits {
                out.push_str(&format!(
                    "{} Q0 {} {} {} pair-toolkit\n",
                    corpus.external_query_id(*qid),
                    corpus.external_passage_id(hit.passage_id),
                    hit.rank,
                    format_score(hit.score)
                ));
            }
        }
        out
    }

    pub fn write_trec(&self, corpus: &Corpus, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_trec(corpus))
            .map_err(|e| PairError::io(path.display().to_string(), e))
    }
}
