//! Command-line interface.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure. Errors are printed as one line on stderr:
//! `drss: error kind=<usage|data|numeric> code=<n>: <message>`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use drss_core::autodiff::GradCheckConfig;
use drss_core::check::{full_objective_gradcheck, ToyDims};
use drss_core::data::Domain;
use drss_core::metrics::{rank_at_1, ScoredPair};
use drss_core::model::{Model, Variant};
use drss_core::omega::correlation_report;
use drss_core::retrieval::{answer, build_index, BlendWeights, InvertedIndex, RetrievalConfig};
use drss_core::synth::{synth_generate, SynthSpec};
use drss_core::trainer::{evaluate, train, EvalMetrics};
use log::info;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{apply_synth, KeyValues, TrainSettings, SYNTH_KEYS, TRAIN_KEYS};
use crate::error::{DrssError, Result};
use crate::history::{format_record, write_history};
use crate::io::{read_kb, read_pairs, read_stopwords, write_atomic, write_pairs};
use crate::pipeline::{build_table, encode_examples};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "DRSS_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "drss", version, about = "Hybrid-CNN sentence-pair matching with domain-relationship transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus its history.
    Train(TrainArgs),
    /// Report ACC, AUC and P@1/R@1/F1@1 of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full objective on a toy model.
    Gradcheck(GradcheckArgs),
    /// Print the head correlation matrix learned by a checkpoint.
    OmegaReport(OmegaReportArgs),
    /// Generate the synthetic source/target splits as TSV files.
    SynthData(SynthArgs),
    /// Build a TF-IDF index over a knowledge base.
    Index(IndexArgs),
    /// Answer a question against an index with a trained matcher.
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file of `key = value` lines (default: $DRSS_CONFIG).
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Source-domain training pairs (TSV).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target-domain training pairs (TSV).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Target-domain dev pairs used for early stopping (TSV).
    #[arg(long)]
    pub dev: PathBuf,
    /// Pre-trained word vectors, one `token v1 .. vl` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Model variant, e.g. drss, drss-adv, ss, fs, tgt-only, fine-tune.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Seed for initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound on training epochs.
    #[arg(long)]
    pub max_epoch: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History file (default: checkpoint path with `.history`).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled pairs (TSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Output head to evaluate with.
    #[arg(long, default_value = "target")]
    pub domain: Domain,
    /// Score a top candidate needs to count as answered.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Variant whose objective is checked.
    #[arg(long, default_value = "drss-adv")]
    pub variant: Variant,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Kv,
}

#[derive(Debug, Args)]
pub struct OmegaReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving source.tsv, target.tsv, dev.tsv and test.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Knowledge base, `id<TAB>question<TAB>answer` per line.
    #[arg(long)]
    pub kb: PathBuf,
    /// Index file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index written by `drss index`.
    #[arg(long, required_unless_present = "kb", conflicts_with = "kb")]
    pub index: Option<PathBuf>,
    /// Knowledge base to index on the fly instead of `--index`.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Candidates recalled before reranking.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Minimum blended score for an answer.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Blend weights `model_prob,emb_cosine,token_overlap`.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub weights: String,
    /// Stopword list for the token-overlap feature.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// The question.
    pub query: String,
}

/// Every long flag, for documentation checks.
pub const DOCUMENTED_FLAGS: &[(&str, &[&str])] = &[
    ("train", &["--config", "--set", "--source", "--target", "--dev", "--embeddings", "--variant", "--seed", "--max-epoch", "--out", "--history"]),
    ("evaluate", &["--checkpoint", "--data", "--domain", "--tau"]),
    ("gradcheck", &["--seed", "--variant", "--samples", "--tolerance"]),
    ("omega-report", &["--checkpoint", "--format"]),
    ("synth-data", &["--config", "--set", "--seed", "--out-dir"]),
    ("index", &["--kb", "--out"]),
    ("query", &["--index", "--kb", "--checkpoint", "--k", "--tau", "--weights", "--stopwords"]),
];

/// Fixed-order metric table followed by `key=value` lines.
pub fn format_metrics(m: &EvalMetrics, ranking: Option<&drss_core::metrics::RankAt1>) -> String {
    let mut s = String::new();
    let auc = m.auc.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
    let _ = writeln!(s, "{:<8}{:>10}", "metric", "value");
    let _ = writeln!(s, "{:<8}{:>10.4}", "ACC", m.accuracy);
    let _ = writeln!(s, "{:<8}{:>10}", "AUC", auc);
    if let Some(r) = ranking {
        let _ = writeln!(s, "{:<8}{:>10.4}", "P@1", r.precision);
        let _ = writeln!(s, "{:<8}{:>10.4}", "R@1", r.recall);
        let _ = writeln!(s, "{:<8}{:>10.4}", "F1@1", r.f1);
    }
    let _ = writeln!(s, "n={}", m.n);
    let _ = writeln!(s, "acc={}", m.accuracy);
    let _ = writeln!(s, "auc={}", m.auc.map_or_else(|| "undefined".to_string(), |a| a.to_string()));
    if let Some(r) = ranking {
        let _ = writeln!(s, "p_at_1={}\nr_at_1={}\nf1_at_1={}", r.precision, r.recall, r.f1);
    }
    s
}

fn load_train_settings(args: &TrainArgs) -> Result<TrainSettings> {
    let mut settings = TrainSettings::default();
    if let Some(path) = &args.config {
        settings.apply(&KeyValues::load(path)?)?;
    }
    settings.apply(&KeyValues::from_overrides(&args.set)?)?;
    let c = &mut settings.train;
    if let Some(v) = args.variant {
        c.variant = v;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(e) = args.max_epoch {
        c.max_epoch = e;
    }
    c.validate().map_err(|e| DrssError::Usage(e.to_string()))?;
    Ok(settings)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let settings = load_train_settings(args)?;
    let cfg = &settings.train;
    let read = |p: &Option<PathBuf>| p.as_deref().map(read_pairs).transpose().map(Option::unwrap_or_default);
    let source = read(&args.source)?;
    let target = read(&args.target)?;
    let dev = read_pairs(&args.dev)?;
    let table = build_table(&[&source, &target], args.embeddings.as_deref(), settings.embedding_dim, cfg.seed)?;
    let d_s = encode_examples(&source, &table.vocab, cfg.classes, "source")?;
    let d_t = encode_examples(&target, &table.vocab, cfg.classes, "target")?;
    let d_dev = encode_examples(&dev, &table.vocab, cfg.classes, "dev")?;
    info!("training {} on {} source / {} target pairs", cfg.variant, d_s.len(), d_t.len());
    let outcome = train(cfg, &table, &d_s, &d_t, &d_dev, &mut |r| info!("{}", format_record(r)))?;
    let history = args.history.clone().unwrap_or_else(|| args.out.with_extension("history"));
    write_history(&history, &outcome.history)?;
    let dev_metrics = evaluate(&outcome.model, &d_dev, Domain::Target)?;
    save_checkpoint(
        &args.out,
        &Checkpoint {
            model: outcome.model,
            omega: outcome.omega,
            train: Some(cfg.clone()),
            epoch: outcome.best_epoch,
            dev: Some(dev_metrics),
        },
    )?;
    print!("{}", format_metrics(&dev_metrics, None));
    println!("best_epoch={}", outcome.best_epoch);
    if let Some(reason) = outcome.aborted {
        return Err(DrssError::Core(drss_core::Error::NonFinite {
            context: format!("training aborted, last good model saved to {}: {reason}", args.out.display()),
        }));
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = &ckpt.model;
    let pairs = read_pairs(&args.data)?;
    let examples = encode_examples(&pairs, &model.vocab, model.config.classes, "data")?;
    let metrics = evaluate(model, &examples, args.domain)?;
    let ranking = if examples.iter().any(|e| e.query_id.is_some()) {
        let m = model.config.hcnn.m;
        let mut scored = Vec::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            let p = model.predict_proba(&drss_core::data::pad_to(&e.s1, m), &drss_core::data::pad_to(&e.s2, m), args.domain)?;
            scored.push(ScoredPair {
                query_id: e.query_id.clone().unwrap_or_else(|| format!("row{i}")),
                candidate_id: format!("{i:09}"),
                score: p.get(1).copied().unwrap_or(0.0),
                gold: e.label == 1,
            });
        }
        Some(rank_at_1(&scored, args.tau)?)
    } else {
        None
    };
    print!("{}", format_metrics(&metrics, ranking.as_ref()));
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let cfg = GradCheckConfig { samples_per_param: args.samples, tolerance: args.tolerance, ..GradCheckConfig::default() };
    let report = full_objective_gradcheck(args.variant, &ToyDims::default(), args.seed, &cfg)?;
    for g in &report.groups {
        println!(
            "group={} max_rel_error={:.3e} checked={} worst={}[{}]",
            g.group, g.max_rel_error, g.checked, g.worst_param, g.worst_index
        );
    }
    println!("tolerance={:e} passed={}", report.tolerance, report.passed);
    Ok(report.passed)
}

fn cmd_omega_report(args: &OmegaReportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let omega = ckpt
        .omega
        .ok_or_else(|| DrssError::Usage(format!("variant {} learns no covariance matrix", ckpt.model.config.variant)))?;
    let report = correlation_report(&omega);
    match args.format {
        ReportFormat::Text => print!("{}", report.render_text()),
        ReportFormat::Kv => print!("{}", report.render_kv()),
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::default();
    if let Some(p) = &args.config {
        apply_synth(&mut spec, &KeyValues::load(p)?)?;
    }
    apply_synth(&mut spec, &KeyValues::from_overrides(&args.set)?)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let data = synth_generate(&spec)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| DrssError::io(&args.out_dir, e))?;
    for (name, split) in [("source", &data.source), ("target", &data.target), ("dev", &data.dev), ("test", &data.test)] {
        let path = args.out_dir.join(format!("{name}.tsv"));
        write_pairs(&path, split)?;
        println!("{}={}", name, path.display());
    }
    Ok(())
}

pub fn read_index(path: &Path) -> Result<InvertedIndex> {
    let bytes = fs::read(path).map_err(|e| DrssError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| DrssError::Data(format!("{}: {e}", path.display())))
}

fn cmd_index(args: &IndexArgs) -> Result<()> {
    let index = build_index(read_kb(&args.kb)?)?;
    let json = serde_json::to_vec(&index).map_err(|e| DrssError::Data(e.to_string()))?;
    write_atomic(&args.out, |w| std::io::Write::write_all(w, &json))?;
    println!("documents={} terms={}", index.len(), index.postings.len());
    Ok(())
}

fn parse_weights(s: &str) -> Result<BlendWeights> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| DrssError::Usage(format!("--weights: `{s}` is not three comma-separated numbers")))?;
    match v[..] {
        [a, b, c] if v.iter().all(|x| x.is_finite() && *x >= 0.0) => Ok(BlendWeights { model_prob: a, emb_cosine: b, token_overlap: c }),
        _ => Err(DrssError::Usage(format!("--weights: expected three non-negative numbers, got `{s}`"))),
    }
}

/// Trace lines for every reranked candidate, then the chosen answer.
pub fn format_answer(ans: &drss_core::retrieval::Answer) -> String {
    let mut s = String::from("# candidate_id, tfidf, model_prob, emb_cosine, token_overlap, blend\n");
    for t in &ans.trace {
        s.push_str(&t.trace_line());
        s.push('\n');
    }
    match (&ans.entry_id, &ans.answer) {
        (Some(id), Some(text)) => {
            let _ = writeln!(s, "answer_id={id}\nanswer={text}");
        }
        _ => s.push_str("answer_id=\nanswer=no answer\n"),
    }
    s
}

fn cmd_query(args: &QueryArgs) -> Result<()> {
    if args.k == 0 {
        return Err(DrssError::Usage("--k must be >= 1".into()));
    }
    let index = match (&args.index, &args.kb) {
        (Some(p), _) => read_index(p)?,
        (None, Some(kb)) => build_index(read_kb(kb)?)?,
        (None, None) => return Err(DrssError::Usage("one of --index or --kb is required".into())),
    };
    let model: Model<f64> = load_checkpoint(&args.checkpoint)?.model;
    let cfg = RetrievalConfig {
        k: args.k,
        weights: parse_weights(&args.weights)?,
        answer_threshold: args.tau,
        stopwords: args.stopwords.as_deref().map(read_stopwords).transpose()?.unwrap_or_default(),
    };
    print!("{}", format_answer(&answer(&args.query, &index, &model, &cfg)?));
    Ok(())
}

/// Help text listing the configuration keys.
fn keys_help() -> String {
    let mut s = String::from("Training configuration keys:\n");
    for (k, d) in TRAIN_KEYS {
        let _ = writeln!(s, "  {k:<18} {d}");
    }
    s.push_str("Synthetic spec keys:\n");
    for (k, d) in SYNTH_KEYS {
        let _ = writeln!(s, "  {k:<18} {d}");
    }
    s
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = <Cli as clap::CommandFactory>::command().after_long_help(keys_help());
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    let msg = e.render().to_string();
                    let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
                    eprintln!("drss: error kind=usage code=2: {}", one_line(first.trim_start_matches("error: ")));
                    2
                }
            };
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("drss: error kind=usage code=2: {}", one_line(&e.to_string()));
            return 2;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => Err(DrssError::Core(drss_core::Error::NonFinite { context: "gradient check exceeded tolerance".into() })),
            Err(e) => Err(e),
        },
        Command::OmegaReport(a) => cmd_omega_report(a),
        Command::SynthData(a) => cmd_synth(a),
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("drss: error kind={} code={code}: {}", e.kind(), one_line(&e.to_string()));
            code
        }
    }
}
