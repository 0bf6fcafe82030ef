//! Synthetic topic-clustered corpora with heavy intra-topic lexical
//! overlap, for controlled end-to-end experiments.

use crate::corpus::Corpus;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct FixtureConfig {
    pub n_topics: usize,
    pub passages_per_topic: usize,
    /// Queries per topic; query i targets passage i of its topic.
    pub queries_per_topic: usize,
    /// How many of a topic's queries carry a qrel; the rest are
    /// unlabeled (pseudo-labeling input only).
    pub labeled_per_topic: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_topics: 50,
            passages_per_topic: 20,
            queries_per_topic: 5,
            labeled_per_topic: 3,
        }
    }
}

/// Build a topic-clustered corpus. Passages within a topic share the
/// topic's token set (heavy lexical overlap); each passage adds its own
/// unique tokens, and each query copies a slice of the topic tokens plus
/// two unique tokens of its target passage.
pub fn topic_fixture(cfg: &FixtureConfig) -> Result<Corpus> {
    let topic_words = 6usize;
    let mut queries = Vec::new();
    let mut passages = Vec::new();
    let mut qrels = Vec::new();
    for t in 0..cfg.n_topics {
        for j in 0..cfg.passages_per_topic {
            let mut text: Vec<String> = (0..topic_words).map(|w| format!("top{t}w{w}")).collect();
            text.push(format!("p{t}x{j}a"));
            text.push(format!("p{t}x{j}b"));
            text.push(format!("p{t}x{j}c"));
            passages.push(text.join(" "));
        }
        for i in 0..cfg.queries_per_topic {
            let j = i % cfg.passages_per_topic;
            let mut text: Vec<String> = (0..3)
                .map(|w| format!("top{t}w{}", (i + w) % topic_words))
                .collect();
            text.push(format!("p{t}x{j}a"));
            text.push(format!("p{t}x{j}b"));
            let qid = (t * cfg.queries_per_topic + i) as u32;
            let pid = (t * cfg.passages_per_topic + j) as u32;
            if i < cfg.labeled_per_topic {
                qrels.push((qid, pid));
            }
            queries.push(text.join(" "));
        }
    }
    Corpus::from_records(queries, passages, qrels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let cfg = FixtureConfig {
            n_topics: 4,
            passages_per_topic: 5,
            queries_per_topic: 3,
            labeled_per_topic: 2,
        };
        let c = topic_fixture(&cfg).unwrap();
        assert_eq!(c.n_queries(), 12);
        assert_eq!(c.n_passages(), 20);
        assert_eq!(c.n_qrels(), 8);
        assert_eq!(c.unlabeled_queries().count(), 4);
        // every query's tokens are contained in its gold passage
        for (q, p) in c.qrels() {
            let q_text = &c.query(q).unwrap().text;
            let p_text = &c.passage(p).unwrap().text;
            for tok in q_text.split_whitespace() {
                assert!(p_text.split_whitespace().any(|t| t == tok));
            }
        }
    }
}
