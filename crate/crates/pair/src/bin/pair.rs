//! `pair` command-line entry point: ingest data, train teachers, pseudo-
//! label, run the two training stages, build and query the index, and
//! drive the ablation and threshold experiment grids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use pair::corpus::{self, Corpus, QueryId};
use pair::distill::teacher::{
    train_mini_cross_encoder, FileTeacher, MiniTeacherConfig, OracleTeacher, OverlapTeacher,
    Teacher,
};
use pair::distill::{
    generate_pseudo_labels, relabel_labeled_corpus, CandidateRetriever, OverlapRetriever,
    PseudoLabelConfig, PseudoLabelSet, StoreRetriever,
};
use pair::encoder::checkpoint::{fingerprint, load_checkpoint, serialize as serialize_checkpoint};
use pair::encoder::{EncoderModel, Role};
use pair::evalkit::{
    comparison_table, comparison_tsv, evaluate, margin_analysis, parse_trec_qrels, parse_trec_run,
    EvalReport,
};
use pair::index::{batch_search, build_index, EmbeddingStore};
use pair::trainer::pipeline::{
    mean_report, run_variant, PipelineConfig, TeacherKind, Variant,
};
use pair::trainer::{finetune, init_model, pretrain, TrainConfig};
use pair::{PairError, Result};

#[derive(Parser)]
#[command(name = "pair", version, about = "Dense passage retrieval toolkit")]
struct Cli {
    /// Flat key=value training config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rayon thread count (0 = library default).
    #[arg(long, global = true, env = "PAIR_THREADS")]
    threads: Option<usize>,
    /// Directory for all produced artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override any training config key, e.g. --set alpha=0.2. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate and import a corpus from TSV/qrels files.
    Ingest {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Also write train/dev splits at this held-out fraction.
        #[arg(long)]
        dev_fraction: Option<f64>,
    },
    /// Train the mini cross-encoder teacher and cache its scores.
    TeacherTrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Candidates scored per query.
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 512)]
        feature_bins: usize,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        negs_per_pos: usize,
    },
    /// Teacher-score retrieved candidates into train examples.
    PseudoLabel {
        #[arg(long)]
        corpus: PathBuf,
        /// Teacher: oracle, overlap, mini, or file.
        #[arg(long, default_value = "overlap")]
        teacher: String,
        /// Scores-cache TSV for the file teacher.
        #[arg(long)]
        teacher_file: Option<PathBuf>,
        /// Gaussian label noise for the oracle teacher.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.9)]
        s_pos: f64,
        #[arg(long, default_value_t = 0.1)]
        s_neg: f64,
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        #[arg(long, default_value_t = 4)]
        max_negs: usize,
        /// Relabel the labeled queries (gold retained) instead of
        /// labeling the unlabeled ones.
        #[arg(long)]
        labeled: bool,
        /// Retrieve candidates densely with this checkpoint + store
        /// instead of the lexical fallback.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Stage 1: train with the combined loss on pseudo-labeled data.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Train examples JSONL.
        #[arg(long)]
        examples: PathBuf,
        /// Resume from a checkpoint instead of fresh initialization.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        /// Initialize independent query/passage encoders.
        #[arg(long)]
        no_shared: bool,
    },
    /// Stage 2: fine-tune with the query-centric loss on gold+relabeled data.
    Finetune {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Encode every passage into an embedding store.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Retrieve top-k passages per query into a TREC run file.
    Search {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Search all queries, not only the judged ones.
        #[arg(long)]
        all: bool,
        /// Disable the per-query parallel fan-out.
        #[arg(long)]
        serial: bool,
    },
    /// Score a TREC run against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "5,20,100")]
        k: String,
        #[arg(long, default_value = "run")]
        variant: String,
    },
    /// Positive-anchor margin analysis on judged queries.
    Margin {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 100)]
        top_n: usize,
    },
    /// Run the variant grid end to end and compare.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "full,no_psr,no_kd,psr_ft,no_sp,no_pt")]
        variants: String,
        /// Number of seeds (base seed, base seed + 1, ...).
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "overlap")]
        teacher: String,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0.2)]
        dev_fraction: f64,
        #[arg(long, default_value = "5,20,100")]
        k: String,
        #[arg(long, default_value_t = 0.9)]
        s_pos: f64,
        #[arg(long, default_value_t = 0.1)]
        s_neg: f64,
        #[arg(long, default_value_t = 50)]
        top_k: usize,
    },
    /// Sweep (s_pos, s_neg) pairs: label quality and retrieval impact.
    ThresholdsSweep {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated s_pos:s_neg pairs.
        #[arg(long, default_value = "0.9:0.1,0.8:0.2,0.7:0.3,0.6:0.4")]
        pairs: String,
        #[arg(long, default_value = "oracle")]
        teacher: String,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Queries audited per seed.
        #[arg(long, default_value_t = 100)]
        sample: usize,
        #[arg(long, default_value_t = 50)]
        top_k: usize,
        /// Also train and evaluate retrieval per threshold pair.
        #[arg(long)]
        retrieval: bool,
        #[arg(long, default_value_t = 0.2)]
        dev_fraction: f64,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            eprintln!(
                "pair: error: {}",
                msg.strip_prefix("error: ").unwrap_or(&msg)
            );
            return 1;
        }
    };
    if let Some(n) = cli.threads {
        if n > 0 {
            // ignore failure: the global pool can only be set once
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pair: error: {e}");
            e.exit_code()
        }
    }
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    for kv in &cli.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            PairError::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    let qrels = dir.join("qrels.txt");
    corpus::ingest(
        &dir.join("queries.tsv"),
        &dir.join("passages.tsv"),
        qrels.exists().then_some(qrels.as_path()),
    )
}

/// Write bytes under the out dir as `<prefix>-<fingerprint>.<ext>`.
fn write_artifact(out: &Path, prefix: &str, ext: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| PairError::io(out.display().to_string(), e))?;
    let path = out.join(format!("{prefix}-{}.{ext}", fingerprint(bytes)));
    std::fs::write(&path, bytes).map_err(|e| PairError::io(path.display().to_string(), e))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn parse_ks(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| PairError::InvalidArgument(format!("bad cutoff {s:?}")))
        })
        .collect()
}

fn build_teacher(
    kind: &str,
    sigma: f64,
    seed: u64,
    corpus: &Corpus,
    teacher_file: Option<&Path>,
) -> Result<Box<dyn Teacher>> {
    Ok(match kind {
        "oracle" => Box::new(OracleTeacher::with_noise(sigma, seed)),
        "overlap" => Box::new(OverlapTeacher::default()),
        "mini" => Box::new(train_mini_cross_encoder(
            corpus,
            &MiniTeacherConfig {
                seed,
                ..Default::default()
            },
        )?),
        "file" => {
            let path = teacher_file.ok_or_else(|| {
                PairError::InvalidArgument("file teacher requires --teacher-file".into())
            })?;
            Box::new(FileTeacher::load(path)?)
        }
        other => {
            return Err(PairError::InvalidArgument(format!(
                "unknown teacher {other:?} (expected oracle, overlap, mini, or file)"
            )))
        }
    })
}

fn teacher_kind(kind: &str, sigma: f64) -> Result<TeacherKind> {
    Ok(match kind {
        "oracle" => TeacherKind::Oracle { sigma },
        "overlap" => TeacherKind::Overlap,
        "mini" => TeacherKind::Mini(MiniTeacherConfig::default()),
        other => {
            return Err(PairError::InvalidArgument(format!(
                "unknown teacher {other:?} (expected oracle, overlap, or mini)"
            )))
        }
    })
}

fn examples_bytes(set: &PseudoLabelSet) -> Vec<u8> {
    let mut bytes = Vec::new();
    for ex in &set.examples {
        bytes.extend_from_slice(serde_json::to_string(ex).unwrap().as_bytes());
        bytes.push(b'\n');
    }
    bytes
}

fn save_model(
    out: &Path,
    model: &EncoderModel,
    stage: &str,
    cfg: &TrainConfig,
) -> Result<PathBuf> {
    let bytes = serialize_checkpoint(model, stage, serde_json::to_value(cfg).unwrap());
    write_artifact(out, &format!("checkpoint-{stage}"), "ckpt", &bytes)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = train_config(&cli)?;
    let out = cli.out.clone();
    match cli.cmd {
        Cmd::Ingest {
            queries,
            passages,
            qrels,
            dev_fraction,
        } => {
            let corpus = corpus::ingest(&queries, &passages, qrels.as_deref())?;
            println!(
                "ingested {} queries, {} passages, {} qrels",
                corpus.n_queries(),
                corpus.n_passages(),
                corpus.n_qrels()
            );
            let dir = out.join("corpus");
            corpus.save(&dir)?;
            println!("wrote {}", dir.display());
            if let Some(frac) = dev_fraction {
                let (train, dev) = corpus.split(frac, cfg.seed)?;
                let train_dir = out.join("corpus-train");
                let dev_dir = out.join("corpus-dev");
                train.save(&train_dir)?;
                dev.save(&dev_dir)?;
                println!(
                    "split: {} train / {} dev queries",
                    train.n_queries(),
                    dev.n_queries()
                );
                println!("wrote {}", train_dir.display());
                println!("wrote {}", dev_dir.display());
            }
        }
        Cmd::TeacherTrain {
            corpus,
            top_k,
            epochs,
            lr,
            feature_bins,
            hidden,
            negs_per_pos,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let teacher = train_mini_cross_encoder(
                &corpus,
                &MiniTeacherConfig {
                    v: feature_bins,
                    d_h: hidden,
                    epochs,
                    lr,
                    negs_per_pos,
                    seed: cfg.seed,
                },
            )?;
            let retriever = OverlapRetriever;
            let mut scores: BTreeMap<(QueryId, pair::corpus::PassageId), f64> = BTreeMap::new();
            for query in corpus.queries() {
                for pid in retriever.top_k(&corpus, query.id, top_k)? {
                    let s = teacher.score(&corpus, query.id, pid)?;
                    scores.insert((query.id, pid), s);
                }
            }
            let mut tsv = String::new();
            for (&(q, p), &s) in &scores {
                tsv.push_str(&format!("{q}\t{p}\t{s}\n"));
            }
            println!("scored {} pairs for {} queries", scores.len(), corpus.n_queries());
            write_artifact(&out, "teacher-scores", "tsv", tsv.as_bytes())?;
        }
        Cmd::PseudoLabel {
            corpus,
            teacher,
            teacher_file,
            sigma,
            s_pos,
            s_neg,
            top_k,
            max_negs,
            labeled,
            checkpoint,
            store,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let pcfg = PseudoLabelConfig {
                s_pos,
                s_neg,
                top_k,
                max_negs_per_pos: max_negs,
            };
            let teacher = build_teacher(&teacher, sigma, cfg.seed, &corpus, teacher_file.as_deref())?;
            let dense = match (&checkpoint, &store) {
                (Some(c), Some(s)) => {
                    let (model, _) = load_checkpoint(c)?;
                    Some((model, EmbeddingStore::load(s)?))
                }
                (None, None) => None,
                _ => {
                    return Err(PairError::InvalidArgument(
                        "dense retrieval needs both --checkpoint and --store".into(),
                    ))
                }
            };
            let overlap = OverlapRetriever;
            let dense_ret = dense
                .as_ref()
                .map(|(model, store)| StoreRetriever { store, model });
            let retriever: &dyn CandidateRetriever = match &dense_ret {
                Some(r) => r,
                None => &overlap,
            };
            let set = if labeled {
                relabel_labeled_corpus(&corpus, retriever, teacher.as_ref(), &pcfg, cfg.seed)?
            } else {
                let unlabeled: Vec<QueryId> =
                    corpus.unlabeled_queries().map(|q| q.id).collect();
                generate_pseudo_labels(
                    &corpus,
                    &unlabeled,
                    retriever,
                    teacher.as_ref(),
                    &pcfg,
                    cfg.seed,
                )?
            };
            println!("{}", serde_json::to_string_pretty(&set.stats).unwrap());
            write_artifact(&out, "pseudo-labels", "jsonl", &examples_bytes(&set))?;
            let mut cache = String::new();
            for (&(q, p), &s) in &set.provenance {
                cache.push_str(&format!("{q}\t{p}\t{s}\n"));
            }
            write_artifact(&out, "teacher-scores", "tsv", cache.as_bytes())?;
        }
        Cmd::Pretrain {
            corpus,
            examples,
            init_checkpoint,
            no_shared,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let examples = corpus::read_train_examples(&examples)?;
            let model = match init_checkpoint {
                Some(path) => load_checkpoint(&path)?.0,
                None => init_model(&cfg, !no_shared)?,
            };
            let mut log = Vec::new();
            let model = pretrain(&corpus, &examples, &cfg, model, Some(&mut log))?;
            let path = save_model(&out, &model, "pretrain", &cfg)?;
            let log_path = path.with_extension("log.jsonl");
            std::fs::write(&log_path, log)
                .map_err(|e| PairError::io(log_path.display().to_string(), e))?;
            println!("wrote {}", log_path.display());
        }
        Cmd::Finetune {
            corpus,
            examples,
            checkpoint,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let examples = corpus::read_train_examples(&examples)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let mut log = Vec::new();
            let model = finetune(&corpus, &examples, &cfg, model, Some(&mut log))?;
            let path = save_model(&out, &model, "finetune", &cfg)?;
            let log_path = path.with_extension("log.jsonl");
            std::fs::write(&log_path, log)
                .map_err(|e| PairError::io(log_path.display().to_string(), e))?;
            println!("wrote {}", log_path.display());
        }
        Cmd::Index { corpus, checkpoint } => {
            let corpus = load_corpus_dir(&corpus)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let store = build_index(&corpus, &model)?;
            println!("indexed {} passages at d={}", store.len(), store.d);
            write_artifact(&out, "store", "emb", &store.serialize())?;
        }
        Cmd::Search {
            corpus,
            checkpoint,
            store,
            k,
            all,
            serial,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let store = EmbeddingStore::load(&store)?;
            let queries: Vec<&pair::corpus::Query> = if all {
                corpus.queries().collect()
            } else {
                corpus.labeled_queries().collect()
            };
            let encoded: Vec<(QueryId, Vec<f64>)> = queries
                .iter()
                .map(|q| Ok((q.id, model.encode_text(Role::Query, &q.text)?)))
                .collect::<Result<_>>()?;
            let run = batch_search(&store, &encoded, k, !serial)?;
            let trec = run.to_trec(&corpus);
            println!("searched {} queries at k={k}", encoded.len());
            write_artifact(&out, "run", "trec", trec.as_bytes())?;
        }
        Cmd::Eval {
            run,
            qrels,
            k,
            variant,
        } => {
            let ks = parse_ks(&k)?;
            let rankings = parse_trec_run(&run)?;
            let judgments = parse_trec_qrels(&qrels)?;
            let report = evaluate(&rankings, &judgments, &ks, &variant);
            print!("{}", comparison_table(std::slice::from_ref(&report)));
            write_artifact(
                &out,
                "eval",
                "json",
                serde_json::to_string_pretty(&report).unwrap().as_bytes(),
            )?;
            write_artifact(
                &out,
                "eval",
                "tsv",
                comparison_tsv(std::slice::from_ref(&report)).as_bytes(),
            )?;
        }
        Cmd::Margin {
            corpus,
            checkpoint,
            store,
            top_n,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let store = EmbeddingStore::load(&store)?;
            let report = margin_analysis(&model, &store, &corpus, top_n)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            println!("margin = {:.6}", report.margin());
            write_artifact(
                &out,
                "margin",
                "json",
                serde_json::to_string_pretty(&report).unwrap().as_bytes(),
            )?;
        }
        Cmd::Ablate {
            corpus,
            variants,
            seeds,
            teacher,
            sigma,
            dev_fraction,
            k,
            s_pos,
            s_neg,
            top_k,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let variants: Vec<Variant> = variants
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_>>()?;
            let pcfg = PipelineConfig {
                train: cfg,
                pseudo: PseudoLabelConfig {
                    s_pos,
                    s_neg,
                    top_k,
                    ..Default::default()
                },
                dev_fraction,
                teacher: teacher_kind(&teacher, sigma)?,
                eval_ks: parse_ks(&k)?,
                margin_top_n: 100,
            };
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| cfg.seed + i).collect();
            let rows = pair::trainer::pipeline::run_ablation(&corpus, &variants, &seed_list, &pcfg)?;
            let means: Vec<EvalReport> = rows.iter().map(|r| r.mean.clone()).collect();
            print!("{}", comparison_table(&means));
            for row in &rows {
                let mean_margin: f64 =
                    row.margins.iter().sum::<f64>() / row.margins.len().max(1) as f64;
                println!("{}: mean margin {:.6}", row.variant, mean_margin);
            }
            write_artifact(&out, "ablation", "tsv", comparison_tsv(&means).as_bytes())?;
            let detail: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "variant": r.variant.label(),
                        "mean": r.mean,
                        "per_seed": r.evals,
                        "margins": r.margins,
                    })
                })
                .collect();
            write_artifact(
                &out,
                "ablation",
                "json",
                serde_json::to_string_pretty(&detail).unwrap().as_bytes(),
            )?;
        }
        Cmd::ThresholdsSweep {
            corpus,
            pairs,
            teacher,
            sigma,
            seeds,
            sample,
            top_k,
            retrieval,
            dev_fraction,
        } => {
            let corpus = load_corpus_dir(&corpus)?;
            let mut parsed: Vec<(f64, f64)> = Vec::new();
            for pair in pairs.split(',') {
                let (a, b) = pair.trim().split_once(':').ok_or_else(|| {
                    PairError::InvalidArgument(format!("bad threshold pair {pair:?}"))
                })?;
                let parse = |s: &str| {
                    s.parse::<f64>().map_err(|_| {
                        PairError::InvalidArgument(format!("bad threshold {s:?}"))
                    })
                };
                parsed.push((parse(a)?, parse(b)?));
            }
            let labeled: Vec<QueryId> = corpus.labeled_queries().map(|q| q.id).collect();
            let retriever = OverlapRetriever;
            let mut tsv = String::from("s_pos\ts_neg\tacc_pos\tacc_neg\tmrr@10\trecall@5\n");
            println!("s_pos  s_neg  acc_pos  acc_neg  mrr@10  recall@5");
            for &(s_pos, s_neg) in &parsed {
                let pcfg = PseudoLabelConfig {
                    s_pos,
                    s_neg,
                    top_k,
                    ..Default::default()
                };
                let mut acc_pos_sum = 0.0;
                let mut acc_neg_sum = 0.0;
                for i in 0..seeds as u64 {
                    let seed = cfg.seed + i;
                    let teacher =
                        build_teacher(&teacher, sigma, seed, &corpus, None)?;
                    // labeled queries scored blind (no gold retention) so the
                    // audit measures the teacher, not the retention rule
                    let set = generate_pseudo_labels(
                        &corpus,
                        &labeled,
                        &retriever,
                        teacher.as_ref(),
                        &pcfg,
                        seed,
                    )?;
                    let (acc_pos, acc_neg) =
                        pair::distill::audit_quality(&set, &corpus, sample, seed)?;
                    acc_pos_sum += acc_pos;
                    acc_neg_sum += acc_neg;
                }
                let acc_pos = acc_pos_sum / seeds.max(1) as f64;
                let acc_neg = acc_neg_sum / seeds.max(1) as f64;
                let (mrr10, r5) = if retrieval {
                    let pipeline = PipelineConfig {
                        train: cfg,
                        pseudo: pcfg,
                        dev_fraction,
                        teacher: teacher_kind(&teacher, sigma)?,
                        eval_ks: vec![5, 10],
                        margin_top_n: 100,
                    };
                    let mut evals = Vec::new();
                    for i in 0..seeds as u64 {
                        let outcome =
                            run_variant(&corpus, Variant::Full, &pipeline, cfg.seed + i)?;
                        evals.push(outcome.eval);
                    }
                    let mean = mean_report(&evals, "full");
                    (mean.mrr_at[&10], mean.recall_at[&5])
                } else {
                    (f64::NAN, f64::NAN)
                };
                println!(
                    "{s_pos:<6} {s_neg:<6} {acc_pos:<8.4} {acc_neg:<8.4} {mrr10:<7.4} {r5:<8.4}"
                );
                tsv.push_str(&format!(
                    "{s_pos}\t{s_neg}\t{acc_pos}\t{acc_neg}\t{mrr10}\t{r5}\n"
                ));
            }
            write_artifact(&out, "thresholds", "tsv", tsv.as_bytes())?;
        }
    }
    Ok(())
}
