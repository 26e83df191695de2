//! Subcommands of the `kbtqa` binary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use kbtqa_core::app::{
    answer_all, answer_question, predictions, select_fewshot_examples, AnswerOptions, AppError, FewShotExample,
    GenerationClient, OracleGenerationClient,
};
use kbtqa_core::corpus::Corpus;
use kbtqa_core::dataset::{
    build_retrieval_dataset, instance_labels, split_dataset, validate_annotations, DatasetConfig, NegativeStrategy,
    RetrievalInstance, RetrievalInstanceRecord,
};
use kbtqa_core::eval::{evaluate_qa, evaluate_retrieval, EvalReport, QaReference, DEFAULT_KS};
use kbtqa_core::kb::ingest_kb;
use kbtqa_core::table::{read_questions, read_tables, Question};
use kbtqa_core::train::train_bi_encoder;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, RetrieverKind};
use crate::error::CliError;
use crate::remote::RemoteGenerator;
use crate::service::{RetrieveRequest, ServiceState};
use crate::setup::{build_indexes, build_provider, build_retriever, load_corpus, require_questions, write_indexes};

#[derive(Debug, Parser)]
#[command(name = "kbtqa", version, about = "Knowledge-base augmented table QA: retrieval, training and evaluation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for generated files.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tables: Option<PathBuf>,
    #[arg(long, global = true)]
    pub questions: Option<PathBuf>,
    /// Load indexes written by `index` from this directory.
    #[arg(long, global = true)]
    pub index_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    /// The configured `/generate` endpoint.
    Remote,
    /// Reads the gold answer off the prompt when it is there (for testing).
    Oracle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load KB, tables and questions; write the deduplicated KB and a summary.
    Ingest,
    /// Build and persist per-table triple indexes.
    Index,
    /// Rank triples for one question.
    Retrieve {
        #[arg(long)]
        question: String,
        #[arg(long)]
        table: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        retriever: Option<RetrieverKind>,
    },
    /// Recall@k of a retriever over the questions.
    EvalRetrieval {
        #[arg(long, value_enum)]
        retriever: Option<RetrieverKind>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Training instances with sampled negatives.
    BuildTrainData {
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<NegativeStrategy>,
        #[arg(long)]
        n: Option<usize>,
        /// Hold out this fraction of instances as dev data.
        #[arg(long)]
        dev_ratio: Option<f64>,
    },
    /// Fit the linear bi-encoder on instances from `build-train-data`.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// EM/F1 of a predictions file (`{"id", "answer"}` per line).
    EvalQa {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Retrieve, build the prompt and generate answers.
    Answer {
        #[arg(long, requires = "table")]
        question: Option<String>,
        #[arg(long, requires = "question")]
        table: Option<String>,
        /// Triples in the prompt; 0 is the table-only baseline.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        retriever: Option<RetrieverKind>,
        #[arg(long, value_enum, default_value = "remote")]
        generator: GeneratorKind,
        /// Few-shot examples drawn from --train-questions.
        #[arg(long, default_value_t = 0)]
        fewshot: usize,
        #[arg(long)]
        train_questions: Option<PathBuf>,
    },
    /// Report annotation issues, one JSON object per line.
    Validate {
        /// Exit nonzero when any issue is found.
        #[arg(long)]
        strict: bool,
    },
    /// Serve `POST /retrieve`.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn parse_strategy(s: &str) -> Result<NegativeStrategy, String> {
    s.parse().map_err(|e: kbtqa_core::dataset::DatasetError| e.to_string())
}

impl Cli {
    /// Config file (if any), then environment, then flags.
    pub fn config(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_env();
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.kb, &self.kb);
        set(&mut cfg.tables, &self.tables);
        set(&mut cfg.questions, &self.questions);
        set(&mut cfg.output, &self.output);
        set(&mut cfg.index_dir, &self.index_dir);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, &it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::new("input", format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn read_question_file(path: &Path) -> Result<Vec<Question>, CliError> {
    read_questions(open(path)?).map_err(|e| CliError::new("input", format!("{}: {e}", path.display())))
}

/// Run one parsed command, writing its primary output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.config()?;
    match &cli.command {
        Command::Ingest => ingest(&cfg, out),
        Command::Index => index(&cfg, out),
        Command::Retrieve {
            question,
            table,
            k,
            retriever,
        } => {
            let corpus = load_corpus(&cfg)?;
            let retriever = build_retriever(&cfg, retriever.unwrap_or(cfg.retriever), &corpus)?;
            let state = ServiceState {
                corpus,
                retriever,
                default_k: cfg.retrieval.top_k,
            };
            let resp = state.retrieve(&RetrieveRequest {
                question: question.clone(),
                table_id: table.clone(),
                k: *k,
            })?;
            for t in &resp.triples {
                serde_json::to_writer(&mut *out, t)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
        Command::EvalRetrieval { retriever, ks } => {
            let corpus = load_corpus(&cfg)?;
            require_questions(&cfg, &corpus)?;
            let retriever = build_retriever(&cfg, retriever.unwrap_or(cfg.retriever), &corpus)?;
            let ks = ks.clone().unwrap_or_else(|| DEFAULT_KS.to_vec());
            if ks.contains(&0) {
                return Err(CliError::new("usage", "k values must be >= 1"));
            }
            let r = evaluate_retrieval(retriever.as_ref(), &corpus, &corpus.questions, &ks)?;
            let report = EvalReport::from_retrieval(&r);
            write_json(&cfg.output_dir().join("eval_retrieval.json"), &report)?;
            print_json(out, &report)
        }
        Command::BuildTrainData { strategy, n, dev_ratio } => build_train_data(&cfg, *strategy, *n, *dev_ratio, out),
        Command::Train {
            data,
            dev,
            epochs,
            learning_rate,
            batch_size,
        } => {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = cfg.seed;
            if let Some(e) = epochs {
                tcfg.epochs = *e;
            }
            if let Some(l) = learning_rate {
                tcfg.learning_rate = *l;
            }
            if let Some(b) = batch_size {
                tcfg.batch_size = *b;
            }
            train(&cfg, &tcfg, data.as_deref(), dev.as_deref(), out)
        }
        Command::EvalQa { predictions } => {
            #[derive(Deserialize)]
            struct Prediction {
                #[serde(alias = "question_id")]
                id: String,
                answer: String,
            }
            let qpath = cfg
                .questions
                .as_deref()
                .ok_or_else(|| CliError::new("config", "no questions path (set it in the config or pass --questions)"))?;
            let refs: Vec<QaReference> = read_question_file(qpath)?.iter().map(QaReference::from).collect();
            let preds: HashMap<String, String> = read_jsonl::<Prediction>(predictions)?
                .into_iter()
                .map(|p| (p.id, p.answer))
                .collect();
            let report = EvalReport::from_qa(&evaluate_qa(&preds, &refs));
            write_json(&cfg.output_dir().join("eval_qa.json"), &report)?;
            print_json(out, &report)
        }
        Command::Answer {
            question,
            table,
            k,
            retriever,
            generator,
            fewshot,
            train_questions,
        } => answer(
            &cfg,
            AnswerArgs {
                single: question.clone().zip(table.clone()),
                k: k.unwrap_or(cfg.retrieval.top_k),
                retriever: retriever.unwrap_or(cfg.retriever),
                generator: *generator,
                fewshot: *fewshot,
                train_questions: train_questions.as_deref(),
            },
            out,
        ),
        Command::Validate { strict } => {
            let corpus = load_corpus(&cfg)?;
            require_questions(&cfg, &corpus)?;
            let issues = validate_annotations(&corpus.questions, &corpus.tables, &corpus.graphs);
            for i in &issues {
                serde_json::to_writer(&mut *out, i)?;
                out.write_all(b"\n")?;
            }
            log::info!("{} issues in {} questions", issues.len(), corpus.questions.len());
            if *strict && !issues.is_empty() {
                return Err(CliError::new("validation", format!("{} annotation issues", issues.len())));
            }
            Ok(())
        }
        Command::Serve { host, port } => serve(&cfg, host, *port, out),
    }
}

fn ingest(cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let kb = cfg.kb.as_deref().ok_or_else(|| CliError::new("config", "no kb path"))?;
    let tables = cfg.tables.as_deref().ok_or_else(|| CliError::new("config", "no tables path"))?;
    let store = ingest_kb(open(kb)?).map_err(|e| CliError::new("input", format!("{}: {e}", kb.display())))?;
    let tables_v = read_tables(open(tables)?).map_err(|e| CliError::new("input", format!("{}: {e}", tables.display())))?;
    let questions = match &cfg.questions {
        Some(p) => read_question_file(p)?,
        None => Vec::new(),
    };
    let corpus = Corpus::from_parts(&store, tables_v, questions, &cfg.excluded())?;
    let dir = cfg.output_dir();
    let mut w = create(&dir.join("kb.jsonl"))?;
    store.write_jsonl(&mut w)?;
    w.flush()?;
    let summary = json!({
        "triples": store.len(),
        "tables": corpus.tables.values().map(|t| json!({
            "id": t.id,
            "rows": t.n_rows(),
            "subgraph_triples": corpus.graphs[&t.id].len(),
        })).collect::<Vec<_>>(),
        "questions": corpus.questions.len(),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    print_json(out, &summary)
}

fn index(cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let provider = build_provider(cfg)?;
    let indexes = build_indexes(&corpus, provider.as_ref())?;
    let dir = cfg.index_dir.clone().unwrap_or_else(|| cfg.output_dir().join("index"));
    let manifest = write_indexes(&dir, &indexes, &provider.fingerprint())?;
    print_json(
        out,
        &json!({
            "dir": dir.display().to_string(),
            "fingerprint": manifest.fingerprint,
            "tables": manifest.tables.len(),
            "triples": indexes.values().map(|i| i.len()).sum::<usize>(),
        }),
    )
}

fn build_train_data(
    cfg: &Config,
    strategy: Option<NegativeStrategy>,
    n: Option<usize>,
    dev_ratio: Option<f64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    require_questions(cfg, &corpus)?;
    let strategy = strategy.or(cfg.dataset.strategy).unwrap_or(NegativeStrategy::Knn);
    let dcfg = DatasetConfig {
        strategy,
        n: n.or(cfg.dataset.n),
        seed: Some(cfg.seed),
    };
    let provider = match strategy {
        NegativeStrategy::Knn => Some(build_provider(cfg)?),
        NegativeStrategy::Random => None,
    };
    let built = build_retrieval_dataset::<f64>(
        &corpus.questions,
        &corpus.tables,
        &corpus.graphs,
        &dcfg,
        provider.as_deref(),
    )?;
    let (train, dev) = match dev_ratio {
        Some(r) => {
            let (tr, dv, _) = split_dataset(&built.instances, (1.0 - r, r, 0.0), cfg.seed)?;
            (tr, dv)
        }
        None => (built.instances, Vec::new()),
    };
    let dir = cfg.output_dir();
    let rec = |i: &RetrievalInstance| i.to_record(strategy, dcfg.n(), dcfg.seed);
    write_jsonl(&dir.join("train_data.jsonl"), train.iter().map(rec))?;
    if dev_ratio.is_some() {
        write_jsonl(&dir.join("dev_data.jsonl"), dev.iter().map(rec))?;
    }
    write_jsonl(&dir.join("train_data_issues.jsonl"), &built.issues)?;
    print_json(
        out,
        &json!({
            "strategy": strategy.to_string(),
            "n": dcfg.n(),
            "train": train.len(),
            "dev": dev.len(),
            "issues": built.issues.len(),
        }),
    )
}

fn load_instances(corpus: &Corpus, path: &Path) -> Result<Vec<RetrievalInstance>, CliError> {
    read_jsonl::<RetrievalInstanceRecord>(path)?
        .iter()
        .map(|r| {
            let g = corpus
                .graph(&r.table_id)
                .ok_or_else(|| CliError::new("input", format!("instance {}: unknown table {}", r.question_id, r.table_id)))?;
            Ok(RetrievalInstance::from_record(r, g)?)
        })
        .collect()
}

fn train(
    cfg: &Config,
    tcfg: &kbtqa_core::train::TrainConfig,
    data: Option<&Path>,
    dev: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let dir = cfg.output_dir();
    let data = data.map(Path::to_path_buf).unwrap_or_else(|| dir.join("train_data.jsonl"));
    let dev = match dev {
        Some(p) => Some(p.to_path_buf()),
        None => Some(dir.join("dev_data.jsonl")).filter(|p| p.exists()),
    };
    let train_i = load_instances(&corpus, &data)?;
    let dev_i = dev.as_deref().map(|p| load_instances(&corpus, p)).transpose()?;
    let labels = instance_labels(corpus.graphs.values());
    let (model, log) = train_bi_encoder::<f64>(&train_i, dev_i.as_deref(), &corpus.tables, &labels, tcfg)?;
    let model_path = dir.join("model.bin");
    std::fs::create_dir_all(&dir)?;
    model.save(&model_path)?;
    write_json(&dir.join("train_log.json"), &log)?;
    use kbtqa_core::retrieve::EmbeddingProvider;
    print_json(
        out,
        &json!({
            "model": model_path.display().to_string(),
            "fingerprint": model.fingerprint(),
            "initial_loss": log.initial_loss,
            "final_loss": log.epochs.last().map(|e| e.train_loss),
            "selected_epoch": log.selected_epoch,
        }),
    )
}

struct AnswerArgs<'a> {
    single: Option<(String, String)>,
    k: usize,
    retriever: RetrieverKind,
    generator: GeneratorKind,
    fewshot: usize,
    train_questions: Option<&'a Path>,
}

fn answer(cfg: &Config, a: AnswerArgs<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    if a.single.is_none() {
        require_questions(cfg, &corpus)?;
    }
    let gen: Box<dyn GenerationClient> = match a.generator {
        GeneratorKind::Remote => {
            let url = cfg
                .generation
                .url
                .as_deref()
                .ok_or_else(|| CliError::new("config", "no generation url (set [generation] url or KBTQA_GENERATION_URL)"))?;
            Box::new(RemoteGenerator::new(url, &cfg.http).map_err(|e| CliError::new("generation", e.to_string()))?)
        }
        GeneratorKind::Oracle => Box::new(OracleGenerationClient::from_questions(&corpus.questions)),
    };
    // k = 0 never calls the retriever, so skip building indexes
    let retriever = if a.k == 0 {
        build_retriever(cfg, RetrieverKind::StringMatch, &corpus)?
    } else {
        build_retriever(cfg, a.retriever, &corpus)?
    };
    let opts = AnswerOptions {
        k: a.k,
        max_tokens: cfg.generation.max_tokens,
        temperature: cfg.generation.temperature,
        char_budget: cfg.generation.char_budget,
    };
    let train_qs = match (a.fewshot, a.train_questions) {
        (0, _) => Vec::new(),
        (_, Some(p)) => read_question_file(p)?,
        (_, None) => return Err(CliError::new("usage", "--fewshot needs --train-questions")),
    };
    let provider = if a.fewshot > 0 { Some(build_provider(cfg)?) } else { None };
    let examples_for = |q: &str| -> Result<Vec<FewShotExample>, CliError> {
        match &provider {
            Some(p) => Ok(select_fewshot_examples(q, &train_qs, p.as_ref(), a.fewshot)?),
            None => Ok(Vec::new()),
        }
    };
    let dir = cfg.output_dir();
    let keep_failed = |e: AppError| -> CliError {
        if let AppError::Generation { trace, .. } = &e {
            let _ = write_json(&dir.join("failed_trace.json"), trace);
        }
        e.into()
    };

    if let Some((question, table_id)) = &a.single {
        let (t, g) = corpus
            .table(table_id)
            .zip(corpus.graph(table_id))
            .ok_or_else(|| CliError::new("unknown_table", format!("unknown table {table_id}")))?;
        let ex = examples_for(question)?;
        let trace = answer_question(question, t, g, retriever.as_ref(), gen.as_ref(), &ex, &opts).map_err(keep_failed)?;
        return print_json(out, &trace);
    }

    let mut fewshot = HashMap::new();
    if a.fewshot > 0 {
        for q in &corpus.questions {
            fewshot.insert(q.id.clone(), examples_for(&q.question)?);
        }
    }
    let traces = answer_all(&corpus, &corpus.questions, retriever.as_ref(), gen.as_ref(), &fewshot, &opts)
        .map_err(keep_failed)?;
    let preds = predictions(&traces);
    write_jsonl(&dir.join("traces.jsonl"), &traces)?;
    write_jsonl(
        &dir.join("predictions.jsonl"),
        traces.iter().map(|t| json!({"id": t.question_id, "answer": t.answer})),
    )?;
    let refs: Vec<QaReference> = corpus.questions.iter().map(QaReference::from).collect();
    let report = EvalReport::from_qa(&evaluate_qa(&preds, &refs));
    write_json(&dir.join("eval_qa.json"), &report)?;
    print_json(out, &report)
}

fn serve(cfg: &Config, host: &str, port: u16, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    // blocking HTTP clients must be created outside the runtime
    let retriever = build_retriever(cfg, cfg.retriever, &corpus)?;
    let state = Arc::new(ServiceState {
        corpus,
        retriever,
        default_k: cfg.retrieval.top_k,
    });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        let addr = listener.local_addr()?;
        writeln!(out, "{}", json!({"listening": addr.to_string()}))?;
        out.flush()?;
        log::info!("serving on {addr}");
        crate::service::serve(listener, state).await?;
        Ok(())
    })
}
