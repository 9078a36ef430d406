//! Command-line front end: `generate`, `train`, `evaluate`, `recommend` and
//! `export`.
//!
//! Exit codes: 0 on success, 2 for usage, configuration or input errors, 3
//! when training diverges.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{evaluate, filter_repeats, split, EvalOptions, EvalReport, Split, SplitSpec};
use crate::factors::{export_factors, DecayWeights, ScoringModel};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::io::synth::{generate_synthetic, SynthSpec, TAXONOMY_FILE, TRANSACTIONS_FILE};
use crate::io::transactions::{load_transactions, LoadedLog};
use crate::ranker::{recommend_at_level, CascadeConfig, RankMode};
use crate::taxonomy::Taxonomy;
use crate::trainer::{append_diagnostics, train_parallel, train_with, ModelConfig, TrainError, TrainOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "model.tfm";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str =
    "config_hash,mu,K,lambda,U,N,auc,meanrank,cat_auc_L1,cat_auc_L2,cat_auc_L3,coldstart_rank,users";

/// A failed command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::NonFiniteRow { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tfrec", version, about = "Taxonomy-aware latent factor recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, or train and score one model per --mu value.
    Evaluate(EvaluateArgs),
    /// Emit top-k recommendations as CSV.
    Recommend(RecommendArgs),
    /// Dump factor matrices as CSV.
    Export(ExportArgs),
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',').map(|v| v.trim().parse().map_err(|_| format!("invalid list element {v:?}"))).collect()
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub users: usize,
    /// Children per node, top-down, e.g. 23,11,6,7.
    #[arg(long, default_value = "23,11,6,7")]
    pub branching: String,
    #[arg(long, default_value_t = 4.0)]
    pub mean_transactions: f64,
    /// Relative weights of basket sizes 1, 2, 3, ...
    #[arg(long, default_value = "0.6,0.3,0.1")]
    pub basket_sizes: String,
    #[arg(long, default_value_t = 0.1)]
    pub concentration: f64,
    #[arg(long, default_value_t = 0.7)]
    pub focus: f64,
    #[arg(long, default_value_t = 1.0)]
    pub popularity_exponent: f64,
    /// Co-purchase strength.
    #[arg(long, default_value_t = 0.4)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub cold_start_fraction: f64,
}

impl GenerateArgs {
    fn spec(&self) -> CliResult<SynthSpec> {
        let branching = parse_list(&self.branching).map_err(|e| usage(format!("invalid --branching: {e}")))?;
        let basket_size_weights =
            parse_list(&self.basket_sizes).map_err(|e| usage(format!("invalid --basket-sizes: {e}")))?;
        let spec = SynthSpec {
            users: self.users,
            branching,
            mean_transactions: self.mean_transactions,
            basket_size_weights,
            preference_concentration: self.concentration,
            focus: self.focus,
            popularity_exponent: self.popularity_exponent,
            copurchase_strength: self.beta,
            cold_start_fraction: self.cold_start_fraction,
            seed: self.seed,
        };
        spec.validate().map_err(usage)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Plain latent factors (U=1, N=0).
    Mf0,
    /// Plain latent factors with a first-order Markov term (U=1, N=1).
    #[value(alias = "fpmc")]
    Mf1,
    /// Four taxonomy levels, no Markov term.
    Tf40,
    /// Four taxonomy levels, first-order Markov term.
    Tf41,
}

impl Preset {
    fn levels_and_order(self, taxonomy: &Taxonomy) -> (usize, usize) {
        let four = 4.min(taxonomy.depth() + 1);
        match self {
            Preset::Mf0 => (1, 0),
            Preset::Mf1 => (1, 1),
            Preset::Tf40 => (four, 0),
            Preset::Tf41 => (four, 1),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding taxonomy.tsv and transactions.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub transactions: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> CliResult<(PathBuf, PathBuf)> {
        let pick = |explicit: &Option<PathBuf>, name: &str, flag: &str| match (explicit, &self.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(usage(format!("either --data or --{flag} is required"))),
        };
        Ok((pick(&self.taxonomy, TAXONOMY_FILE, "taxonomy")?, pick(&self.transactions, TRANSACTIONS_FILE, "transactions")?))
    }

    fn load(&self) -> CliResult<(LoadedLog, BTreeMap<String, String>)> {
        let (tax_path, log_path) = self.paths()?;
        let taxonomy = Taxonomy::load(&tax_path).map_err(|e| usage(format!("{}: {e}", tax_path.display())))?;
        let loaded = load_transactions(&log_path, &taxonomy).map_err(|e| usage(format!("{}: {e}", log_path.display())))?;
        if loaded.unknown_items > 0 {
            log::warn!("{} unknown item ids routed to UNCATEGORIZED", loaded.unknown_items);
        }
        let paths = BTreeMap::from([
            ("taxonomy".to_string(), tax_path.display().to_string()),
            ("transactions".to_string(), log_path.display().to_string()),
        ]);
        Ok((loaded, paths))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_prev_transactions: Option<usize>,
    #[arg(long)]
    pub taxonomy_update_levels: Option<usize>,
    #[arg(long)]
    pub sibling_mix: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cache_threshold: Option<f64>,
}

impl ModelArgs {
    /// Preset first, explicit flags on top. Without a preset the model uses
    /// every taxonomy level and no Markov term.
    fn config(&self, taxonomy: &Taxonomy, base: Option<ModelConfig>) -> CliResult<ModelConfig> {
        let mut c = base.unwrap_or_else(|| ModelConfig::tf(taxonomy, 0));
        if let Some(p) = self.preset {
            let (levels, order) = p.levels_and_order(taxonomy);
            c.taxonomy_update_levels = levels;
            c.max_prev_transactions = order;
            if levels == 1 {
                c.sibling_mix = 0.0;
            }
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(factors, lambda, epsilon, alpha, max_prev_transactions, taxonomy_update_levels, sibling_mix, epochs, threads, seed, cache_threshold);
        c.validate(taxonomy).map_err(usage)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Mean per-user training fraction; omit to train on every transaction.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub split_sigma: f64,
    #[arg(long = "holdout-T", default_value_t = 1)]
    pub holdout_t: usize,
    /// Seed of the split; defaults to the model seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

impl SplitArgs {
    fn spec(&self, mu: f64, model_seed: u64) -> CliResult<SplitSpec> {
        let spec = SplitSpec {
            mu,
            sigma: self.split_sigma,
            holdout: self.holdout_t,
            seed: self.split_seed.unwrap_or(model_seed),
        };
        spec.validate().map_err(usage)?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Reuse the model and split settings recorded in a manifest; other
    /// flags override them.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exhaustive,
    Cascaded,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[arg(long, value_enum, default_value = "exhaustive")]
    pub mode: ModeArg,
    /// Cascade fractions from the highest category level down; a single
    /// value applies to every level.
    #[arg(long)]
    pub cascade_k: Option<String>,
    /// Keep upper levels whole and use the single --cascade-k value only at
    /// the lowest category level.
    #[arg(long)]
    pub cascade_lowest_only: bool,
}

impl RankArgs {
    fn mode(&self, taxonomy: &Taxonomy) -> CliResult<RankMode> {
        if self.mode == ModeArg::Exhaustive {
            return Ok(RankMode::Exhaustive);
        }
        let raw = self.cascade_k.as_deref().unwrap_or("0.5");
        let fractions: Vec<f64> = parse_list(raw).map_err(|e| usage(format!("invalid --cascade-k: {e}")))?;
        let cfg = match (fractions.as_slice(), self.cascade_lowest_only) {
            ([f], true) => CascadeConfig::lowest_level(*f, taxonomy),
            (_, true) => return Err(usage("--cascade-lowest-only takes a single --cascade-k value")),
            ([f], false) => CascadeConfig::uniform(*f, taxonomy),
            (_, false) => CascadeConfig::new(fractions),
        }
        .map_err(|e| usage(format!("invalid --cascade-k: {e}")))?;
        if cfg.fractions().len() > taxonomy.depth() {
            return Err(usage(format!("--cascade-k has more than {} values", taxonomy.depth())));
        }
        Ok(RankMode::Cascaded(cfg))
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained model; its manifest supplies the model and split settings.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated training fractions; one results row per value.
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub split_sigma: f64,
    #[arg(long = "holdout-T", default_value_t = 1)]
    pub holdout_t: usize,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[command(flatten)]
    pub rank: RankArgs,
    /// Keep training purchases in the ranked universe.
    #[arg(long)]
    pub keep_train_items: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Results CSV to append to; defaults to results.csv in --out.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Taxonomy level of the recommended nodes (0 = items).
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    /// Drop items the user already bought.
    #[arg(long)]
    pub filter_repeats: bool,
    /// Comma-separated user ids; all users by default.
    #[arg(long)]
    pub users: Option<String>,
    #[command(flatten)]
    pub rank: RankArgs,
    /// Output CSV; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub paths: BTreeMap<String, String>,
    pub build_id: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            model: None,
            split: None,
            synth: None,
            paths: BTreeMap::new(),
            build_id: build_id(),
            started_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> CliResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n").map_err(|e| usage(format!("{}: {e}", dir.display())))
    }
}

pub fn build_id() -> String {
    match option_env!("TFREC_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash(config: &ModelConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(config).expect("config serializes"));
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| usage(format!("{}: {e}", path.display()))
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = args.spec()?;
    let corpus = generate_synthetic(&spec).map_err(usage)?;
    corpus.write_to(&args.out).map_err(io_err(&args.out))?;
    let mut manifest = RunManifest::new("generate");
    manifest.synth = Some(spec);
    manifest.paths.insert("out".into(), args.out.display().to_string());
    manifest.write(&args.out)?;
    log::info!(
        "wrote {} users, {} transactions, {} leaves to {}",
        corpus.log.user_count(),
        corpus.log.transaction_count(),
        corpus.taxonomy.leaves().len(),
        args.out.display()
    );
    Ok(())
}

fn run_training(log_data: &LoadedLog, split: Option<&Split>, config: &ModelConfig) -> CliResult<TrainOutcome> {
    let train_log = split.map_or(&log_data.log, |s| &s.train);
    let outcome = if config.threads > 1 {
        train_parallel(train_log, &log_data.taxonomy, config, None)?
    } else {
        train_with(train_log, &log_data.taxonomy, config, None)?
    };
    Ok(outcome)
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let base = args.from_manifest.as_ref().map(RunManifest::load).transpose()?;
    let (data, paths) = args.data.load()?;
    let config = args.model.config(&data.taxonomy, base.as_ref().and_then(|m| m.model.clone()))?;
    let split_spec = match (args.split.mu, base.as_ref().and_then(|m| m.split.clone())) {
        (Some(mu), _) => Some(args.split.spec(mu, config.seed)?),
        (None, recorded) => recorded,
    };
    let split = split_spec.as_ref().map(|s| split(&data.log, s)).transpose().map_err(usage)?;
    create_dir(&args.out)?;
    let outcome = run_training(&data, split.as_ref(), &config)?;
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint {
        store: outcome.store,
        taxonomy_update_levels: config.taxonomy_update_levels,
        max_prev_transactions: config.max_prev_transactions,
    };
    save_checkpoint(&ckpt, &ckpt_path).map_err(usage)?;
    let diag = args.out.join(DIAGNOSTICS_FILE);
    if diag.exists() {
        std::fs::remove_file(&diag).map_err(io_err(&diag))?;
    }
    append_diagnostics(&diag, &outcome.epochs).map_err(io_err(&diag))?;
    let mut manifest = RunManifest::new("train");
    manifest.model = Some(config);
    manifest.split = split_spec;
    manifest.paths = paths;
    manifest.paths.insert("checkpoint".into(), ckpt_path.display().to_string());
    manifest.write(&args.out)?;
    Ok(())
}

fn results_row(config: &ModelConfig, mu: Option<f64>, report: &EvalReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let cat = |i: usize| opt(report.level_auc.get(i).copied().flatten());
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        config_hash(config),
        opt(mu),
        config.factors,
        config.lambda,
        config.taxonomy_update_levels,
        config.max_prev_transactions,
        report.mean_auc,
        report.mean_meanrank,
        cat(0),
        cat(1),
        cat(2),
        opt(report.cold_start_mean_rank),
        report.users_evaluated
    )
}

fn append_results(path: &Path, rows: &[String]) -> CliResult<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut text = String::new();
    if fresh {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(io_err(path))
}

fn score(
    data: &LoadedLog,
    ckpt_store: &crate::factors::FactorStore,
    config: &ModelConfig,
    split: Option<&Split>,
    mode: &RankMode,
    exclude_train_items: bool,
) -> CliResult<EvalReport> {
    let split = split.ok_or_else(|| usage("evaluation needs a split: pass --mu or a checkpoint trained with --mu"))?;
    let test = filter_repeats(&split.test, &split.train);
    if test.is_empty() {
        return Err(usage("the test slice is empty after removing repeated purchases"));
    }
    let view = data.taxonomy.restrict_levels(config.taxonomy_update_levels).map_err(usage)?;
    let model = ScoringModel::new(ckpt_store, &view, config.decay());
    let options = EvalOptions { mode: mode.clone(), threads: config.threads, exclude_train_items };
    evaluate(&model, &split.train, &test, &options).map_err(usage)
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let (data, paths) = args.data.load()?;
    let mode = args.rank.mode(&data.taxonomy)?;
    let mus: Option<Vec<f64>> =
        args.mu.as_deref().map(parse_list).transpose().map_err(|e| usage(format!("invalid --mu: {e}")))?;
    create_dir(&args.out)?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut manifest = RunManifest::new("evaluate");
    manifest.paths = paths;
    let split_args = SplitArgs {
        mu: None,
        split_sigma: args.split_sigma,
        holdout_t: args.holdout_t,
        split_seed: args.split_seed,
    };
    if let Some(ckpt_path) = &args.checkpoint {
        let ckpt = load_checkpoint(ckpt_path, &data.taxonomy).map_err(|e| usage(format!("{}: {e}", ckpt_path.display())))?;
        let recorded = recorded_manifest(ckpt_path)?;
        let mut config = args.model.config(&data.taxonomy, recorded.as_ref().and_then(|m| m.model.clone()))?;
        config.taxonomy_update_levels = ckpt.taxonomy_update_levels;
        config.max_prev_transactions = ckpt.max_prev_transactions;
        config.factors = ckpt.store.k();
        if ckpt.store.user_count() != data.log.user_count() {
            return Err(usage(format!(
                "checkpoint has {} users but the log has {}",
                ckpt.store.user_count(),
                data.log.user_count()
            )));
        }
        let spec = match (&mus, recorded.as_ref().and_then(|m| m.split.clone())) {
            (Some(m), _) if m.len() == 1 => split_args.spec(m[0], config.seed)?,
            (Some(_), _) => return Err(usage("--checkpoint takes a single --mu value")),
            (None, Some(s)) => s,
            (None, None) => return Err(usage("no split recorded for this checkpoint; pass --mu")),
        };
        let s = split(&data.log, &spec).map_err(usage)?;
        let report = score(&data, &ckpt.store, &config, Some(&s), &mode, !args.keep_train_items)?;
        rows.push(results_row(&config, Some(spec.mu), &report));
        reports.push(report);
        manifest.model = Some(config);
        manifest.split = Some(spec);
        manifest.paths.insert("checkpoint".into(), ckpt_path.display().to_string());
    } else {
        let mus = mus.ok_or_else(|| usage("pass --checkpoint or at least one --mu value"))?;
        let config = args.model.config(&data.taxonomy, None)?;
        for mu in mus {
            let spec = split_args.spec(mu, config.seed)?;
            let s = split(&data.log, &spec).map_err(usage)?;
            let outcome = run_training(&data, Some(&s), &config)?;
            let report = score(&data, &outcome.store, &config, Some(&s), &mode, !args.keep_train_items)?;
            rows.push(results_row(&config, Some(mu), &report));
            reports.push(report);
            manifest.split = Some(spec);
        }
        manifest.model = Some(config);
    }
    let results = args.results.clone().unwrap_or_else(|| args.out.join(RESULTS_FILE));
    append_results(&results, &rows)?;
    manifest.paths.insert("results".into(), results.display().to_string());
    manifest.write(&args.out)?;
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])
    } else {
        serde_json::to_string_pretty(&reports)
    };
    println!("{}", json.expect("report serializes"));
    Ok(())
}

/// The manifest written next to a checkpoint, if any. Checkpoints carry only
/// factor matrices and dimensions; the decay base comes from here.
fn recorded_manifest(checkpoint: &Path) -> CliResult<Option<RunManifest>> {
    let path = checkpoint.parent().map(|d| d.join(MANIFEST_FILE)).filter(|p| p.exists());
    path.map(RunManifest::load).transpose()
}

fn recorded_model(checkpoint: &Path) -> CliResult<Option<ModelConfig>> {
    Ok(recorded_manifest(checkpoint)?.and_then(|m| m.model))
}

fn cmd_recommend(args: &RecommendArgs) -> CliResult<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (data, _) = args.data.load()?;
    let tax = &data.taxonomy;
    if args.level >= tax.depth() {
        return Err(usage(format!("--level must be below {}", tax.depth())));
    }
    let mode = args.rank.mode(tax)?;
    let ckpt =
        load_checkpoint(&args.checkpoint, tax).map_err(|e| usage(format!("{}: {e}", args.checkpoint.display())))?;
    let view = tax.restrict_levels(ckpt.taxonomy_update_levels).map_err(usage)?;
    let alpha = recorded_model(&args.checkpoint)?.map_or(ModelConfig::default().alpha, |m| m.alpha);
    let model = ScoringModel::new(&ckpt.store, &view, DecayWeights::new(alpha, ckpt.max_prev_transactions));
    let users: Vec<usize> = match &args.users {
        Some(list) => parse_list(list).map_err(|e| usage(format!("invalid --users: {e}")))?,
        None => (0..ckpt.store.user_count()).collect(),
    };
    let mut out = String::from("user_id,rank,node_id,score,level\n");
    for u in users {
        if u >= ckpt.store.user_count() {
            return Err(usage(format!("user {u} is not in the checkpoint")));
        }
        let history = data.log.recent(u, ckpt.max_prev_transactions);
        let seen = args.filter_repeats.then(|| data.log.purchased(u));
        let recs = recommend_at_level(&model, u, &history, args.k, &mode, seen.as_ref(), args.level).map_err(usage)?;
        for (rank, (node, score)) in recs.iter().enumerate() {
            let ext = tax.nodes()[*node].external_id.map_or_else(|| node.to_string(), |e| e.to_string());
            let _ = writeln!(out, "{u},{},{ext},{score},{}", rank + 1, tax.level(*node));
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, out).map_err(io_err(path)),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_export(args: &ExportArgs) -> CliResult<()> {
    let (data, _) = args.data.load()?;
    let ckpt = load_checkpoint(&args.checkpoint, &data.taxonomy)
        .map_err(|e| usage(format!("{}: {e}", args.checkpoint.display())))?;
    let view = data.taxonomy.restrict_levels(ckpt.taxonomy_update_levels).map_err(usage)?;
    export_factors(&ckpt.store, &view, &args.out).map_err(io_err(&args.out))
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Export(a) => cmd_export(a),
    }
}

/// Parses `std::env::args`, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
