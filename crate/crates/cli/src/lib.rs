//! Command-line driver: training, evaluation, encoding, self-checks, the
//! prior-order sweep, hyperparameter search and synthetic corpora.
//!
//! Exit codes are a stable contract: 0 success, 1 a check failed, 2 a usage
//! or data error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ammi::hashing::synth::{paired_corpus, topic_corpus, PairedCorpusConfig, TopicCorpusConfig};
use ammi::hashing::{
    build_tfidf, drift_report, format_drift_report, index_documents, read_jsonl, read_splits, write_splits,
    write_vocabulary, CodeEncoder, Corpus, Document, Split,
};
use ammi::markov::BitVector;
use ammi::oracle::{dp_suite, gradient_suite, DpOptions, Fault, GradientOptions, OracleReport};
use ammi::training::{
    apply_overrides, order_sweep, order_sweep_csv, run_search, write_metrics, Checkpoint, Hyperparams, Model,
    OrderSweepOptions, SearchSpace, TrainState, Trainer,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, data or files.
    Usage(String),
    /// A check ran and failed.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

impl From<ammi::Error> for CliError {
    fn from(e: ammi::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ammi", version, about = "Discrete codes by adversarially maximized mutual information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder; writes metrics, checkpoint and run info.
    Train(TrainArgs),
    /// Retrieval precision, distinct codes and bit usage of a checkpoint.
    Eval(EvalArgs),
    /// Print `id<TAB>hex-code` for documents.
    Encode(EncodeArgs),
    /// Compare the dynamic programs with enumeration and the gradients
    /// with finite differences.
    OracleCheck(OracleArgs),
    /// Fit priors of several Markov orders to a frozen encoder.
    OrderSweep(SweepArgs),
    /// Train one model per point of a grid or random search space.
    Search(SearchArgs),
    /// Nearest documents at increasing Hamming distances from a query.
    Drift(DriftArgs),
    /// Write a synthetic corpus and a config pointing at it.
    Synth(SynthArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat TOML config; relative corpus paths resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Neighbors per query.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Where to write `eval.json`; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    /// The primary encoder.
    Query,
    /// The paired-document encoder of predictive models.
    Target,
}

#[derive(Clone, Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Documents to encode, JSON lines; defaults to the configured corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "query")]
    pub side: Side,
    /// Output file; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 12)]
    pub max_m: usize,
    #[arg(long, default_value_t = 3)]
    pub max_order: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Random network instances for the gradient check.
    #[arg(long, default_value_t = 3)]
    pub gradient_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write `oracle.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Negative control: corrupt the cross-entropy program.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Prior orders to fit.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub r_list: Vec<usize>,
    /// Step limit of each prior fit.
    #[arg(long, default_value_t = OrderSweepOptions::default().steps)]
    pub steps: usize,
    /// Documents in the batch the priors are fitted to [default: batch_size].
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value = "order-sweep")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// TOML search space: `mode`, `trials`, and an array per swept key.
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value = "search")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct DriftArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query document id.
    #[arg(long)]
    pub query: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8")]
    pub thresholds: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Topic-labelled documents.
    Topic,
    /// Pairs of documents about a shared event.
    Paired,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    /// Override a generator setting, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Encode(a) => cmd_encode(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a).map(|_| ()),
        Command::OrderSweep(a) => cmd_order_sweep(&a).map(|_| ()),
        Command::Search(a) => cmd_search(&a),
        Command::Drift(a) => cmd_drift(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// The configured hyperparameters with corpus paths made absolute.
pub fn load_hyper(args: &ConfigArgs) -> CliResult<Hyperparams> {
    let (mut hyper, base) = match &args.config {
        Some(path) => {
            let hp = Hyperparams::load(path)?;
            (hp, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Hyperparams::default(), PathBuf::new()),
    };
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    hyper = hyper.with_overrides(&overrides)?;
    for p in [&mut hyper.train_path, &mut hyper.validation_path, &mut hyper.test_path] {
        if !p.is_empty() && Path::new(p.as_str()).is_relative() {
            *p = base.join(p.as_str()).to_string_lossy().into_owned();
        }
    }
    Ok(hyper)
}

pub fn load_corpus(hyper: &Hyperparams) -> CliResult<Corpus> {
    if [&hyper.train_path, &hyper.validation_path, &hyper.test_path].iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(
            "train_path, validation_path and test_path must all be set".into(),
        ));
    }
    let raw = read_splits(
        Path::new(&hyper.train_path),
        Path::new(&hyper.validation_path),
        Path::new(&hyper.test_path),
    )?;
    Ok(build_tfidf(&raw, hyper.vocab_size)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(path, text + "\n")
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Timestamps and durations live only here, apart from the primary outputs.
fn write_run_info(dir: &Path, command: &str, hyper: &Hyperparams, started: u64, clock: Instant) -> CliResult<()> {
    write_json(
        &dir.join("run-info.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": hyper.config_hash(),
            "model_hash": hyper.model_hash(),
            "started_unix": started,
            "wall_clock_seconds": clock.elapsed().as_secs_f64(),
        }),
    )
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Trains to completion, checkpointing after every epoch. Returns the final
/// state, whose `best_params` are the parameters of the best epoch.
pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainState> {
    let (started, clock) = (unix_seconds(), Instant::now());
    let hyper = load_hyper(&args.config)?;
    let corpus = load_corpus(&hyper)?;
    let out = &args.out;
    create_dir(out)?;
    write_file(&out.join("config.toml"), hyper.canonical())?;
    write_vocabulary(&out.join("vocab.json"), &corpus.vocab)?;
    log::info!("config hash {}", hyper.config_hash());

    let trainer = Trainer::new(&hyper, &corpus)?;
    let mut state = match &args.checkpoint {
        Some(path) => Checkpoint::load_matching(path, &hyper)?.state,
        None => trainer.init_state(),
    };
    let ckpt = out.join(CHECKPOINT_FILE);
    while !state.finished {
        let left = trainer.batches_per_epoch() - state.batch;
        trainer.run(&mut state, Some(left))?;
        Checkpoint {
            hyper: hyper.clone(),
            state: state.clone(),
        }
        .save(&ckpt)?;
        write_metrics(out, &state.history)?;
    }
    write_metrics(out, &state.history)?;
    write_run_info(out, "train", &hyper, started, clock)?;
    println!(
        "config {} best validation {:.4} at epoch {} of {}",
        hyper.config_hash(),
        state.best_score,
        state.best_epoch,
        state.epoch
    );
    Ok(state)
}

/// Fraction of codes with each bit set.
pub fn bit_usage(codes: &[BitVector], m: usize) -> Vec<f64> {
    let mut ones = vec![0usize; m];
    for c in codes {
        for (i, n) in ones.iter_mut().enumerate() {
            *n += usize::from(c.get(i));
        }
    }
    ones.iter().map(|&n| n as f64 / codes.len().max(1) as f64).collect()
}

fn distinct(codes: &[BitVector]) -> usize {
    let mut sorted: Vec<&BitVector> = codes.iter().collect();
    sorted.sort_by(|a, b| a.words().cmp(b.words()));
    sorted.dedup();
    sorted.len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    /// The validation task of the model on the test split.
    pub precision: f64,
    /// Label precision on the test split, when labelled.
    pub label_precision: Option<f64>,
    /// Pair-matching precision on the test split, when pairs exist.
    pub pair_precision: Option<f64>,
    /// Size of the pair-matching candidate pool.
    pub pair_candidates: usize,
    pub train_documents: usize,
    /// Distinct codes the primary encoder assigns to the train split.
    pub distinct_train_codes: usize,
    /// Per-bit fraction of ones over the test split.
    pub bit_usage: Vec<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "k": self.k,
            "precision": self.precision,
            "label_precision": self.label_precision,
            "pair_precision": self.pair_precision,
            "pair_candidates": self.pair_candidates,
            "train_documents": self.train_documents,
            "distinct_train_codes": self.distinct_train_codes,
            "bit_usage": self.bit_usage,
        })
    }
}

/// Loads a checkpoint whose model shape matches the configuration.
fn load_checkpoint(path: &Path, hyper: &Hyperparams) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if ck.hyper.model_hash() != hyper.model_hash() {
        return Err(CliError::Usage(format!(
            "checkpoint was trained with a different model shape (model hash {} vs {})",
            ck.hyper.model_hash(),
            hyper.model_hash()
        )));
    }
    Ok(ck)
}

pub fn evaluate(model: &Model, params: &ammi::nn::ParamStore, corpus: &Corpus, k: usize) -> CliResult<EvalReport> {
    let precision = model.score(params, corpus, Split::Test, k)?;
    let label_precision = if corpus.is_labeled(Split::Test) && corpus.is_labeled(Split::Train) {
        Some(ammi::hashing::label_precision(&model.encoder, params, corpus, Split::Test, k)?)
    } else {
        None
    };
    let pair_precision = if corpus.queries_with_pairs(Split::Test).is_empty() {
        None
    } else {
        Some(ammi::hashing::pair_precision(
            &model.encoder,
            model.target_encoder(),
            params,
            corpus,
            Split::Test,
            k,
        )?)
    };
    let train: Vec<&Document> = corpus.train.iter().collect();
    let train_codes = model.encoder.encode(params, &train)?;
    let test: Vec<&Document> = corpus.test.iter().collect();
    let test_codes = model.encoder.encode(params, &test)?;
    Ok(EvalReport {
        k,
        precision,
        label_precision,
        pair_precision,
        pair_candidates: corpus.pair_targets().len(),
        train_documents: train.len(),
        distinct_train_codes: distinct(&train_codes),
        bit_usage: bit_usage(&test_codes, model.encoder.m),
    })
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let hyper = load_hyper(&args.config)?;
    let ck = load_checkpoint(&args.checkpoint, &hyper)?;
    let corpus = load_corpus(&hyper)?;
    let model = Model::for_corpus(&ck.hyper, &corpus)?;
    let report = evaluate(&model, &ck.state.best_params, &corpus, args.k)?;

    println!("top-{} precision (test): {:.4}", report.k, report.precision);
    if let Some(p) = report.label_precision {
        println!("label precision: {p:.4}");
    }
    if let Some(p) = report.pair_precision {
        println!("pair-matching precision: {p:.4} over {} candidates", report.pair_candidates);
    }
    println!(
        "distinct codes: {} over {} train documents",
        report.distinct_train_codes, report.train_documents
    );
    let dead = report.bit_usage.iter().filter(|&&u| u == 0.0 || u == 1.0).count();
    let usage: Vec<String> = report.bit_usage.iter().map(|u| format!("{u:.2}")).collect();
    println!("bit usage: [{}] ({dead} constant bits)", usage.join(" "));

    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&dir)?;
    write_json(&dir.join("eval.json"), &report.to_json())?;
    Ok(report)
}

fn split_docs(corpus: &Corpus, split: SplitArg) -> Vec<&Document> {
    match split {
        SplitArg::Train => corpus.train.iter().collect(),
        SplitArg::Validation => corpus.validation.iter().collect(),
        SplitArg::Test => corpus.test.iter().collect(),
        SplitArg::All => corpus.all().collect(),
    }
}

pub fn encode_lines(encoder: &CodeEncoder, params: &ammi::nn::ParamStore, docs: &[&Document]) -> CliResult<String> {
    let codes = encoder.encode(params, docs)?;
    let mut s = String::new();
    for (d, c) in docs.iter().zip(codes) {
        s.push_str(&d.id);
        s.push('\t');
        s.push_str(&c.to_hex());
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_encode(args: &EncodeArgs) -> CliResult<()> {
    let hyper = load_hyper(&args.config)?;
    let ck = load_checkpoint(&args.checkpoint, &hyper)?;
    let corpus = load_corpus(&hyper)?;
    let model = Model::for_corpus(&ck.hyper, &corpus)?;
    let encoder = match args.side {
        Side::Query => &model.encoder,
        Side::Target => model
            .posterior
            .as_ref()
            .ok_or_else(|| CliError::Usage("this model has no paired-document encoder".into()))?,
    };
    let extra;
    let docs: Vec<&Document> = match &args.input {
        Some(path) => {
            extra = corpus.vocab.vectorize(&read_jsonl(path)?)?;
            extra.iter().collect()
        }
        None => split_docs(&corpus, args.split),
    };
    let text = encode_lines(encoder, &ck.state.best_params, &docs)?;
    match &args.out {
        Some(path) => write_file(path, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn print_report(name: &str, r: &OracleReport) {
    println!("{name}: {} comparisons", r.cases);
    for (check, err) in &r.max_error {
        println!("  {check:<26} max error {err:.3e}");
    }
}

/// Returns both reports; fails with exit code 1 when any comparison is out
/// of tolerance.
pub fn cmd_oracle_check(args: &OracleArgs) -> CliResult<(OracleReport, OracleReport)> {
    if args.trials == 0 {
        log::warn!("zero trials: the enumeration check is vacuous");
    }
    let dp = dp_suite(&DpOptions {
        max_m: args.max_m,
        max_order: args.max_order,
        trials: args.trials,
        seed: args.seed,
        fault: args.inject_fault.then_some(Fault::CrossEntropy),
        ..Default::default()
    })?;
    print_report("dynamic programs vs enumeration", &dp);
    let grad = gradient_suite(&GradientOptions {
        trials: args.gradient_trials,
        seed: args.seed,
        ..Default::default()
    })?;
    print_report("gradients vs central differences", &grad);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_json(
            &dir.join("oracle.json"),
            &json!({ "dynamic_programs": dp, "gradients": grad }),
        )?;
    }
    let failures: Vec<_> = dp.failures.iter().chain(&grad.failures).collect();
    if failures.is_empty() {
        println!("all checks passed");
        return Ok((dp, grad));
    }
    let mut msg = format!("{} comparisons out of tolerance", failures.len());
    for f in failures.iter().take(20) {
        msg.push_str(&format!("\n  {} {}: error {:.3e}", f.check, f.case, f.error));
    }
    Err(CliError::Check(msg))
}

pub fn cmd_order_sweep(args: &SweepArgs) -> CliResult<ammi::training::OrderSweepReport> {
    let (started, clock) = (unix_seconds(), Instant::now());
    let hyper = load_hyper(&args.config)?;
    let corpus = load_corpus(&hyper)?;
    let opts = OrderSweepOptions {
        steps: args.steps,
        batch: args.batch,
        ..Default::default()
    };
    let report = order_sweep(&corpus, &hyper, &args.r_list, &opts)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("order-sweep.csv"), order_sweep_csv(&report))?;
    let value = serde_json::to_value(&report).map_err(|e| CliError::Usage(e.to_string()))?;
    write_json(&args.out.join("order-sweep.json"), &value)?;
    write_run_info(&args.out, "order-sweep", &hyper, started, clock)?;
    println!("encoder trained for {} epochs; batch of {}", report.partial_epochs, report.batch_size);
    println!("{:>3} {:>12} {:>12} {:>12}", "r", "prior bits", "optimum", "reference");
    let ln2 = std::f64::consts::LN_2;
    for row in &report.rows {
        println!(
            "{:>3} {:>12.5} {:>12.5} {:>12.5}",
            row.r,
            row.cross_entropy / ln2,
            row.projection / ln2,
            row.reference / ln2
        );
    }
    Ok(report)
}

pub fn cmd_search(args: &SearchArgs) -> CliResult<()> {
    let (started, clock) = (unix_seconds(), Instant::now());
    let hyper = load_hyper(&args.config)?;
    let corpus = load_corpus(&hyper)?;
    let text = fs::read_to_string(&args.space).map_err(|e| io_err(&args.space, e))?;
    let space = SearchSpace::from_toml(&text)?;
    let runs = run_search(&corpus, &hyper, &space)?;
    create_dir(&args.out)?;
    let mut csv = String::from("index,seed,overrides,config_hash,best_score,best_epoch\n");
    for r in &runs {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.index,
            r.seed,
            r.overrides.join(" "),
            r.config_hash,
            r.best_score,
            r.best_epoch
        ));
    }
    write_file(&args.out.join("search.csv"), csv)?;
    let value = serde_json::to_value(&runs).map_err(|e| CliError::Usage(e.to_string()))?;
    write_json(&args.out.join("search.json"), &value)?;
    write_run_info(&args.out, "search", &hyper, started, clock)?;
    if let Some(best) = runs.iter().max_by(|a, b| a.best_score.total_cmp(&b.best_score)) {
        println!("best {:.4}: {}", best.best_score, best.overrides.join(" "));
    }
    Ok(())
}

pub fn cmd_drift(args: &DriftArgs) -> CliResult<()> {
    let hyper = load_hyper(&args.config)?;
    let ck = load_checkpoint(&args.checkpoint, &hyper)?;
    let corpus = load_corpus(&hyper)?;
    let model = Model::for_corpus(&ck.hyper, &corpus)?;
    let params = &ck.state.best_params;
    let query = corpus
        .find(&args.query)
        .ok_or_else(|| CliError::Usage(format!("no document `{}`", args.query)))?;
    let train: Vec<&Document> = corpus.train.iter().filter(|d| d.id != query.id).collect();
    let index = index_documents(&train, model.target_encoder().encode(params, &train)?, model.encoder.m)?;
    let code = model.encoder.encode_one(params, query)?;
    let rows = drift_report(&code, &index, &args.thresholds)?;
    print!("{}", format_drift_report(&query.id, &rows));
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let (raw, vocab) = match args.kind {
        SynthKind::Topic => {
            let cfg: TopicCorpusConfig = apply_overrides(&TopicCorpusConfig::default(), &overrides)?;
            (topic_corpus(&cfg)?, cfg.vocab)
        }
        SynthKind::Paired => {
            let cfg: PairedCorpusConfig = apply_overrides(&PairedCorpusConfig::default(), &overrides)?;
            (paired_corpus(&cfg)?, cfg.vocab + cfg.entities)
        }
    };
    write_splits(&args.out, &raw)?;
    let hyper = Hyperparams {
        vocab_size: vocab,
        train_path: "train.jsonl".into(),
        validation_path: "validation.jsonl".into(),
        test_path: "test.jsonl".into(),
        ..Default::default()
    };
    write_file(&args.out.join("config.toml"), hyper.canonical())?;
    println!(
        "{} train, {} validation, {} test documents in {}",
        raw.train.len(),
        raw.validation.len(),
        raw.test.len(),
        args.out.display()
    );
    Ok(())
}
