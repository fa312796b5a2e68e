//! Command-line front end. `run` maps every outcome onto an exit code:
//! 0 success, 1 usage error, 2 data error, 3 internal error.
//!
//! Typical offline order: embed → cluster → thresholds → expand →
//! train-base → train-adjust → tune-threshold → build-snapshot → serve.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::clustering::{elbow_sweep, kfold_stability, kmeans, Clustering, KMeansParams, DEFAULT_FOLDS, DEFAULT_MAX_ITER};
use crate::config::{parse_p, PipelineConfig};
use crate::embedding::{fallback_embed, format_row, load_embeddings, EmbeddingSet};
use crate::error::Error;
use crate::expansion::{render_table, to_jsonl, Expander, FilterConfig};
use crate::features::{FeatureExtractor, DEFAULT_FEATURE_DIM};
use crate::index::DEFAULT_K;
use crate::matching::{
    build_snapshot, load_market_thresholds, load_scoring_model, load_snapshot_dir, save_market_thresholds,
    write_snapshot_dir, CampaignFile, MarketThresholds, SnapshotInputs, SnapshotManifest,
};
use crate::relevance::{
    train_adjustment, train_base, tune_market_threshold, AdjustmentParams, Dataset, GbdtModel, GbdtParams, Predict,
};
use crate::report::{relevance_report, threshold_report, tpr_csv, tpr_sweep, ExpansionLabelSet, TprParams};
use crate::service::{self, AppState};
use crate::thresholds::{build_threshold_table, ThresholdTable, DEFAULT_MIN_CLUSTER_SIZE, DEFAULT_P, DEFAULT_P_GRID};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

const DEFAULT_EMBED_DIM: usize = 64;
const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "semexpand", version, about = "Semantic keyword expansion and broad-match serving")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Pipeline config (JSON); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fallback-embed a keyword list into an embedding TSV.
    Embed(EmbedArgs),
    /// k-means over one market's embeddings.
    Cluster(ClusterArgs),
    /// Mean held-in WCSS for several cluster counts.
    Elbow(ElbowArgs),
    /// k-fold assignment consistency of a cluster count.
    Stability(StabilityArgs),
    /// Per-cluster distance thresholds at quantile p.
    Thresholds(ThresholdsArgs),
    /// Expand keywords into filtered semantic variants.
    Expand(ExpandArgs),
    /// Train the base relevance model.
    TrainBase(TrainBaseArgs),
    /// Stack adjustment trees on a frozen base model.
    TrainAdjust(TrainAdjustArgs),
    /// Per-grade RMSE of a stacked model against its base.
    EvalRelevance(EvalRelevanceArgs),
    /// Tune a market's relevance threshold for a precision target.
    TuneThreshold(TuneThresholdArgs),
    /// TPR of expansions against labels over a quantile grid.
    SweepTpr(SweepTprArgs),
    /// Distribution summary of a threshold table.
    ThresholdReport(ThresholdReportArgs),
    /// Validate inputs and write a snapshot directory.
    BuildSnapshot(BuildSnapshotArgs),
    /// Match queries against a snapshot.
    Match(MatchArgs),
    /// Serve expansion and matching over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// One keyword per line, optionally `market<TAB>keyword`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub keyword: Vec<String>,
    /// Market for lines without one.
    #[arg(long)]
    pub market: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub market: String,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long = "clusters", short = 'M')]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ElbowArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k_list: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long = "clusters", short = 'M')]
    pub clusters: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub clustering: PathBuf,
    /// Quantile as a fraction (0.999999) or percentage (99.9999).
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExpandFormat {
    Jsonl,
    Table,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub keyword: Vec<String>,
    /// One keyword per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Expand every advertiser keyword of the market.
    #[arg(long)]
    pub campaigns: Option<PathBuf>,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    #[arg(long)]
    pub no_filters: bool,
    #[arg(long, value_enum, default_value_t = ExpandFormat::Jsonl)]
    pub format: ExpandFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainBaseArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-stage training RMSE as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainAdjustArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of adjustment trees (t_r).
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 50)]
    pub min_leaf: usize,
    /// Lift the bounds on adjustment tree count and depth.
    #[arg(long)]
    pub allow_unbounded: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRelevanceArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub stacked: PathBuf,
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneThresholdArgs {
    /// Stacked or base model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub market: String,
    #[arg(long)]
    pub precision_target: Option<f64>,
    /// Market threshold file to create or update.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepTprArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Comma-separated quantiles (fractions or percentages).
    #[arg(long, value_delimiter = ',')]
    pub p_list: Vec<String>,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdReportArgs {
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildSnapshotArgs {
    #[arg(long)]
    pub campaigns: Option<PathBuf>,
    /// Expansion JSON-lines files; may be repeated.
    #[arg(long, required = true)]
    pub expansions: Vec<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub market_thresholds: PathBuf,
    #[arg(long)]
    pub version: u64,
    /// Output snapshot directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// With --clustering-dir and --thresholds-dir, enables online expansion.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub clustering_dir: Option<PathBuf>,
    #[arg(long)]
    pub thresholds_dir: Option<PathBuf>,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    #[arg(long)]
    pub no_filters: bool,
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    pub feature_dim: usize,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub market: Option<String>,
    /// Batch file of `market<TAB>query` lines.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
}

impl Ctx {
    fn path(&self, flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        flag.clone()
            .or_else(|| cfg.clone())
            .ok_or_else(|| usage(format!("--{name} is required (or set it in the config)")))
    }

    fn embeddings(&self, c: &CorpusArgs) -> CliResult<EmbeddingSet> {
        let p = self.path(&c.embeddings, &self.cfg.paths.embeddings, "embeddings")?;
        Ok(load_embeddings(p, &c.market)?)
    }

    /// Explicit `--out`, else a file in the configured output directory,
    /// else stdout.
    fn out(&self, flag: &Option<PathBuf>, default_name: &str) -> Option<PathBuf> {
        flag.clone()
            .or_else(|| self.cfg.paths.output_dir.as_ref().map(|d| d.join(default_name)))
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.params.seed).unwrap_or(DEFAULT_SEED)
    }

    fn clusters(&self, flag: Option<usize>) -> CliResult<usize> {
        flag.or(self.cfg.params.clusters)
            .ok_or_else(|| usage("--clusters (M) is required (or set M in the config)"))
    }

    fn k(&self, flag: Option<usize>) -> usize {
        flag.or(self.cfg.params.k_neighbors).unwrap_or(DEFAULT_K)
    }

    fn min_cluster_size(&self, flag: Option<usize>) -> usize {
        flag.or(self.cfg.params.min_cluster_size)
            .unwrap_or(DEFAULT_MIN_CLUSTER_SIZE)
    }

    fn p(&self, flag: &Option<String>) -> CliResult<f64> {
        match flag {
            Some(s) => Ok(parse_p(s)?),
            None => Ok(self.cfg.params.p.unwrap_or(DEFAULT_P)),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Internal(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn json_line<T: serde::Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn execute(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // Fails only if a pool already exists (e.g. repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { cfg };
    match cli.command {
        Command::Embed(a) => cmd_embed(&ctx, a),
        Command::Cluster(a) => cmd_cluster(&ctx, a),
        Command::Elbow(a) => cmd_elbow(&ctx, a),
        Command::Stability(a) => cmd_stability(&ctx, a),
        Command::Thresholds(a) => cmd_thresholds(&ctx, a),
        Command::Expand(a) => cmd_expand(&ctx, a),
        Command::TrainBase(a) => cmd_train_base(&ctx, a),
        Command::TrainAdjust(a) => cmd_train_adjust(&ctx, a),
        Command::EvalRelevance(a) => cmd_eval_relevance(&ctx, a),
        Command::TuneThreshold(a) => cmd_tune_threshold(&ctx, a),
        Command::SweepTpr(a) => cmd_sweep_tpr(&ctx, a),
        Command::ThresholdReport(a) => cmd_threshold_report(&ctx, a),
        Command::BuildSnapshot(a) => cmd_build_snapshot(&ctx, a),
        Command::Match(a) => cmd_match(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a, cli.threads),
    }
}

fn cmd_embed(ctx: &Ctx, a: EmbedArgs) -> CliResult {
    let dim = a.dim.or(ctx.cfg.params.dim).unwrap_or(DEFAULT_EMBED_DIM);
    let mut lines: Vec<String> = a.keyword.clone();
    if let Some(p) = &a.input {
        lines.extend(read_text(p)?.lines().map(str::to_string));
    }
    if lines.is_empty() {
        return Err(usage("nothing to embed: pass --input or --keyword"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = String::new();
    for line in &lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (market, keyword) = match line.split_once('\t') {
            Some((m, k)) => (m.trim().to_string(), k.trim().to_string()),
            None => match &a.market {
                Some(m) => (m.clone(), line.trim().to_string()),
                None => return Err(usage(format!("line {line:?} has no market and --market is not set"))),
            },
        };
        if !seen.insert((market.clone(), keyword.clone())) {
            continue;
        }
        let v = fallback_embed(&keyword, dim)?;
        out.push_str(&format_row(&market, &keyword, v.as_slice()));
        out.push('\n');
    }
    emit(ctx.out(&a.out, "embeddings.tsv").as_deref(), &out)
}

fn cmd_cluster(ctx: &Ctx, a: ClusterArgs) -> CliResult {
    let set = ctx.embeddings(&a.corpus)?;
    let mut params = KMeansParams::new(ctx.clusters(a.clusters)?, ctx.seed(a.seed));
    params.max_iter = a.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    let c = kmeans(&set, params)?;
    let text = json_line(&c)?;
    emit(ctx.out(&a.out, &format!("clustering/{}.json", a.corpus.market)).as_deref(), &text)
}

fn cmd_elbow(ctx: &Ctx, a: ElbowArgs) -> CliResult {
    let set = ctx.embeddings(&a.corpus)?;
    let rows = elbow_sweep(&set, &a.k_list, ctx.seed(a.seed), a.folds)?;
    let mut out = String::from("M,mean_wcss\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.m, r.mean_wcss);
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_stability(ctx: &Ctx, a: StabilityArgs) -> CliResult {
    let set = ctx.embeddings(&a.corpus)?;
    let r = kfold_stability(&set, ctx.clusters(a.clusters)?, a.folds, ctx.seed(a.seed))?;
    emit(a.out.as_deref(), &json_line(&r)?)
}

fn cmd_thresholds(ctx: &Ctx, a: ThresholdsArgs) -> CliResult {
    let p = ctx.p(&a.p)?;
    let set = ctx.embeddings(&a.corpus)?;
    let c = Clustering::load(&a.clustering)?;
    let table = build_threshold_table(&c, &set, p, ctx.min_cluster_size(a.min_cluster_size))?;
    emit(
        ctx.out(&a.out, &format!("thresholds/{}.jsonl", a.corpus.market)).as_deref(),
        &table.to_jsonl()?,
    )
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn cmd_expand(ctx: &Ctx, a: ExpandArgs) -> CliResult {
    let mut keywords = a.keyword.clone();
    if let Some(p) = &a.keywords {
        keywords.extend(read_lines(p)?);
    }
    let campaigns = a.campaigns.clone();
    if let Some(p) = &campaigns {
        keywords.extend(CampaignFile::load(p)?.keywords(&a.corpus.market));
    }
    if a.keyword.is_empty() && a.keywords.is_none() && campaigns.is_none() {
        return Err(usage("nothing to expand: pass --keyword, --keywords or --campaigns"));
    }
    let set = ctx.embeddings(&a.corpus)?;
    let clustering = Clustering::load(&a.clustering)?;
    let table = ThresholdTable::load(&a.thresholds)?;
    let filters = if a.no_filters {
        FilterConfig::disabled()
    } else {
        FilterConfig::default()
    };
    let ex = Expander::new(set, clustering, table, ctx.k(a.k), filters)?;
    let records = ex.expand_many(&keywords)?;
    let text = match a.format {
        ExpandFormat::Jsonl => to_jsonl(&records)?,
        ExpandFormat::Table => render_table(&records),
    };
    emit(a.out.as_deref(), &text)
}

fn load_dataset(ctx_path: Option<PathBuf>, name: &str) -> CliResult<Dataset> {
    let p = ctx_path.ok_or_else(|| usage(format!("--{name} is required (or set it in the config)")))?;
    Ok(Dataset::load_csv(p)?)
}

fn cmd_train_base(ctx: &Ctx, a: TrainBaseArgs) -> CliResult {
    let data = load_dataset(a.data.clone().or(ctx.cfg.paths.base_dataset.clone()), "data")?;
    let defaults = GbdtParams::default();
    let params = GbdtParams {
        trees: a.trees.or(ctx.cfg.params.trees).unwrap_or(defaults.trees),
        learning_rate: a.learning_rate.or(ctx.cfg.params.learning_rate).unwrap_or(defaults.learning_rate),
        max_depth: a.max_depth,
        min_leaf: a.min_leaf,
    };
    let trained = train_base(&data, &params)?;
    if let Some(p) = &a.curve {
        let mut out = String::from("stage,train_rmse\n");
        for (i, r) in trained.stage_rmse.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, r);
        }
        emit(Some(p), &out)?;
    }
    emit(ctx.out(&a.out, "model_base.json").as_deref(), &json_line(&trained.model)?)
}

fn cmd_train_adjust(ctx: &Ctx, a: TrainAdjustArgs) -> CliResult {
    let base = GbdtModel::load(&a.base)?;
    let data = load_dataset(a.data.clone().or(ctx.cfg.paths.new_dataset.clone()), "data")?;
    let defaults = AdjustmentParams::default();
    let params = AdjustmentParams {
        trees: a.trees.or(ctx.cfg.params.t_r).unwrap_or(defaults.trees),
        max_depth: a.max_depth.or(ctx.cfg.params.adjustment_depth).unwrap_or(defaults.max_depth),
        rate: a.rate,
        min_leaf: a.min_leaf,
        allow_unbounded: a.allow_unbounded || ctx.cfg.params.allow_unbounded_adjustment.unwrap_or(false),
    };
    let stacked = train_adjustment(&base, &data, &params)?;
    emit(ctx.out(&a.out, "model.json").as_deref(), &json_line(&stacked)?)
}

fn cmd_eval_relevance(ctx: &Ctx, a: EvalRelevanceArgs) -> CliResult {
    let base = GbdtModel::load(&a.base)?;
    let stacked = load_scoring_model(&a.stacked)?;
    let holdout = load_dataset(a.holdout.clone().or(ctx.cfg.paths.holdout_dataset.clone()), "holdout")?;
    let report = relevance_report(&base, &stacked, &holdout)?;
    if let Some(p) = &a.out_csv {
        emit(Some(p), &report.to_csv())?;
    }
    let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    json.push('\n');
    emit(a.out_json.as_deref(), &json)
}

fn cmd_tune_threshold(ctx: &Ctx, a: TuneThresholdArgs) -> CliResult {
    let model = load_scoring_model(&a.model)?;
    let holdout = load_dataset(a.holdout.clone().or(ctx.cfg.paths.holdout_dataset.clone()), "holdout")?;
    let target = a
        .precision_target
        .or(ctx.cfg.params.precision_target)
        .ok_or_else(|| usage("--precision-target is required"))?;
    let preds: Vec<f64> = holdout
        .rows
        .iter()
        .map(|x| model.predict(x))
        .collect::<crate::error::Result<_>>()?;
    let tuned = tune_market_threshold(&preds, &holdout.labels, &a.market, target)?;
    if !tuned.attainable {
        eprintln!(
            "warning: precision {target} is not attainable in {}; threshold passes nothing",
            a.market
        );
    }
    if let Some(p) = &a.out {
        let mut table: MarketThresholds = if p.exists() {
            load_market_thresholds(p)?
        } else {
            BTreeMap::new()
        };
        table.insert(a.market.clone(), Some(tuned.threshold));
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_market_thresholds(&table, p)?;
    }
    emit(None, &json_line(&tuned)?)
}

fn cmd_sweep_tpr(ctx: &Ctx, a: SweepTprArgs) -> CliResult {
    let p_list: Vec<f64> = if a.p_list.is_empty() {
        DEFAULT_P_GRID.to_vec()
    } else {
        a.p_list.iter().map(|s| parse_p(s)).collect::<crate::error::Result<_>>()?
    };
    let labels_path = ctx.path(&a.labels, &ctx.cfg.paths.labels, "labels")?;
    let labels = ExpansionLabelSet::load(labels_path)?;
    let set = ctx.embeddings(&a.corpus)?;
    let clustering = Clustering::load(&a.clustering)?;
    let params = TprParams {
        k_neighbors: ctx.k(a.k),
        min_cluster_size: ctx.min_cluster_size(a.min_cluster_size),
        filters: FilterConfig::default(),
    };
    let rows = tpr_sweep(&set, &clustering, &labels, &p_list, &params)?;
    emit(a.out.as_deref(), &tpr_csv(&rows))
}

fn cmd_threshold_report(_ctx: &Ctx, a: ThresholdReportArgs) -> CliResult {
    let table = ThresholdTable::load(&a.thresholds)?;
    let report = threshold_report(&table)?;
    if let Some(p) = &a.out_csv {
        emit(Some(p), &report.to_csv())?;
    }
    emit(a.out_json.as_deref(), &json_line(&report)?)
}

fn cmd_build_snapshot(ctx: &Ctx, a: BuildSnapshotArgs) -> CliResult {
    let campaigns_path = ctx.path(&a.campaigns, &ctx.cfg.paths.campaigns, "campaigns")?;
    let out = ctx
        .path(&a.out, &ctx.cfg.paths.snapshot_dir, "out")?;
    let campaigns = CampaignFile::load(campaigns_path)?;
    let mut expansions = Vec::new();
    for p in &a.expansions {
        expansions.extend(crate::expansion::load_jsonl(p)?);
    }
    let model = load_scoring_model(&a.model)?;
    let thresholds = load_market_thresholds(&a.market_thresholds)?;
    let k = ctx.k(a.k);
    let filters = if a.no_filters {
        FilterConfig::disabled()
    } else {
        FilterConfig::default()
    };
    let mut expanders = BTreeMap::new();
    match (&a.embeddings, &a.clustering_dir, &a.thresholds_dir) {
        (Some(emb), Some(cdir), Some(tdir)) => {
            for m in campaigns.markets() {
                let cpath = cdir.join(format!("{m}.json"));
                let tpath = tdir.join(format!("{m}.jsonl"));
                if !cpath.exists() || !tpath.exists() {
                    continue;
                }
                let ex = Expander::new(
                    load_embeddings(emb, &m)?,
                    Clustering::load(&cpath)?,
                    ThresholdTable::load(&tpath)?,
                    k,
                    filters.clone(),
                )?;
                expanders.insert(m, ex);
            }
        }
        (None, None, None) => {}
        _ => {
            return Err(usage(
                "--embeddings, --clustering-dir and --thresholds-dir must be given together",
            ))
        }
    }
    let inputs = SnapshotInputs {
        campaigns,
        expansions,
        model,
        thresholds,
        extractor: FeatureExtractor::new(a.feature_dim)?,
        expanders,
    };
    let manifest = SnapshotManifest {
        version: a.version,
        feature_dim: a.feature_dim,
        k_neighbors: k,
        filters: !a.no_filters,
        expander_markets: inputs.expanders.keys().cloned().collect(),
    };
    // Versions on disk only move forward; validate by building before
    // anything is written.
    let previous = crate::matching::load_manifest(&out).ok().map(|m| m.version);
    let snap = build_snapshot(inputs.clone(), a.version, previous)?;
    write_snapshot_dir(&out, &inputs, &manifest)?;
    let summary = serde_json::json!({
        "version": snap.version,
        "markets": snap.markets.iter().map(|(m, d)| (m.clone(), serde_json::json!({
            "keywords": d.n_keywords(),
            "items": d.n_items(),
            "expansions": d.expansions.len(),
            "threshold": d.threshold,
            "online_expansion": d.expander.is_some(),
        }))).collect::<serde_json::Map<_, _>>(),
    });
    emit(None, &json_line(&summary)?)
}

fn cmd_match(ctx: &Ctx, a: MatchArgs) -> CliResult {
    let dir = ctx.path(&a.snapshot, &ctx.cfg.paths.snapshot_dir, "snapshot")?;
    let mut queries: Vec<(String, String)> = Vec::new();
    match (&a.query, &a.market) {
        (Some(q), Some(m)) => queries.push((m.clone(), q.clone())),
        (Some(_), None) => return Err(usage("--query needs --market")),
        _ => {}
    }
    if let Some(p) = &a.queries {
        for (i, line) in read_text(p)?.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (m, q) = line.split_once('\t').ok_or(Error::Parse {
                line: i + 1,
                message: "expected market<TAB>query".into(),
            })?;
            queries.push((m.to_string(), q.to_string()));
        }
    }
    if queries.is_empty() {
        return Err(usage("nothing to match: pass --query/--market or --queries"));
    }
    let snap = load_snapshot_dir(&dir, None)?;
    let mut out = String::new();
    for (m, q) in &queries {
        out.push_str(&crate::matching::to_jsonl(&snap.match_query(q, m)?)?);
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_serve(ctx: &Ctx, a: ServeArgs, threads: Option<usize>) -> CliResult {
    let dir = ctx.path(&a.snapshot, &ctx.cfg.paths.snapshot_dir, "snapshot")?;
    let port = a.port.or(ctx.cfg.params.port).unwrap_or(8080);
    let addr: SocketAddr = format!("{}:{port}", a.host)
        .parse()
        .map_err(|e| usage(format!("bad listen address: {e}")))?;
    let state = Arc::new(AppState::new(dir));
    state.refresh()?;
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        builder.worker_threads(n);
    }
    let rt = builder
        .enable_all()
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    rt.block_on(service::serve(state, addr))?;
    Ok(())
}
