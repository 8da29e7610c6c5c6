//! Command-line driver: `pretrain`, `embed`, `eval-link`, `eval-node` and
//! `selfcheck`.
//!
//! Options come from flags and, optionally, a `--config` file of
//! `key = value` lines (keys are the long flag names, `-` or `_`); flags
//! win. Every text artifact starts with `#` lines holding the resolved
//! configuration.

pub mod selfcheck;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};

use crate::error::Error;
use crate::eval::{
    classify_nodes, evaluate_links, ClassifyConfig, FewShotSplit, LinkSplit, Metrics, Scorer, DEFAULT_HOLDOUT,
};
use crate::graph::{load_edge_list, load_labels, EigenMode, Graph};
use crate::init::InitConfig;
use crate::layer::ModelConfig;
use crate::pretrain::{embed, resume, train, Checkpoint, Embedding, NegativePool, TrainConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIMENSION: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_SELFCHECK: i32 = 6;

/// Default shots per class for `eval-node`.
pub const DEFAULT_K_SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Pretrain,
    Embed,
    EvalLink,
    EvalNode,
    Selfcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Embed => "embed",
            Self::EvalLink => "eval-link",
            Self::EvalNode => "eval-node",
            Self::Selfcheck => "selfcheck",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rgfm",
    version,
    about = "Pretrain and evaluate a product-bundle graph foundation model"
)]
pub struct Args {
    pub command: Command,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dimension of both factors.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub k_shots: Option<usize>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// largest | smallest
    #[arg(long)]
    pub eigen_mode: Option<String>,
    /// dot | distance
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// batch | full
    #[arg(long)]
    pub negative_pool: Option<String>,
    #[arg(long)]
    pub freeze_samples: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Whether `--dim`/`--layers` were given; checked against a loaded
    /// checkpoint.
    pub model_explicit: bool,
    pub k_shots: usize,
    pub holdout: f64,
    pub threads: usize,
    pub scorer: Scorer,
}

/// Failure of a CLI run, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format { .. } | Error::Checkpoint(_) => EXIT_IO,
            Error::Dimension { .. } => EXIT_DIMENSION,
            Error::Argument(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::io(path, e)))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            )));
        };
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn take<T: FromStr>(file: &mut BTreeMap<String, String>, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
    let from_file = file.remove(key);
    if flag.is_some() {
        return Ok(flag);
    }
    from_file
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::usage(format!("config key {key}: cannot parse {v:?}")))
        })
        .transpose()
}

fn parse_enum<T: FromStr<Err = Error>>(v: Option<String>) -> CliResult<Option<T>> {
    v.map(|s| s.parse::<T>().map_err(CliError::from)).transpose()
}

impl RunConfig {
    /// Merges flags over the config file and validates the result.
    pub fn resolve(args: Args) -> CliResult<Self> {
        let mut file = match &args.config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let f = &mut file;
        let graph = take(f, "graph", args.graph)?;
        let labels = take(f, "labels", args.labels)?;
        let checkpoint = take(f, "checkpoint", args.checkpoint)?;
        let out = take(f, "out", args.out)?;
        let epochs = take(f, "epochs", args.epochs)?;
        let batch_size = take(f, "batch_size", args.batch_size)?;
        let lr = take(f, "lr", args.lr)?;
        let dropout = take(f, "dropout", args.dropout)?;
        let seed = take(f, "seed", args.seed)?;
        let dim = take(f, "dim", args.dim)?;
        let layers = take(f, "layers", args.layers)?;
        let hidden = take(f, "hidden", args.hidden)?;
        let k_shots = take(f, "k_shots", args.k_shots)?;
        let holdout = take(f, "holdout", args.holdout)?;
        let threads = take(f, "threads", args.threads)?;
        let eigen_mode = parse_enum::<EigenMode>(take(f, "eigen_mode", args.eigen_mode)?)?;
        let scorer = parse_enum::<Scorer>(take(f, "scorer", args.scorer)?)?;
        let temperature = take(f, "temperature", args.temperature)?;
        let negative_pool = parse_enum::<NegativePool>(take(f, "negative_pool", args.negative_pool)?)?;
        let freeze = take(f, "freeze_samples", args.freeze_samples.then_some(true))?;
        if let Some(k) = file.keys().next() {
            return Err(CliError::usage(format!("unknown config key {k:?}")));
        }

        let mut model = ModelConfig::default();
        if let Some(d) = dim {
            model.dim_h = d;
            model.dim_s = d;
        }
        if let Some(l) = layers {
            model.layers = l;
        }
        if let Some(h) = hidden {
            model.hidden = h;
        }
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            epochs: epochs.unwrap_or(defaults.epochs),
            batch_size: batch_size.unwrap_or(defaults.batch_size),
            learning_rate: lr.unwrap_or(defaults.learning_rate),
            dropout: dropout.unwrap_or(defaults.dropout),
            seed: seed.unwrap_or(defaults.seed),
            temperature: temperature.unwrap_or(defaults.temperature),
            negative_pool: negative_pool.unwrap_or(defaults.negative_pool),
            freeze_samples: freeze.unwrap_or(false),
            ..defaults
        };
        let init = InitConfig {
            k: None,
            eigen_mode: eigen_mode.unwrap_or_default(),
        };
        let cfg = Self {
            command: args.command,
            graph,
            labels,
            checkpoint,
            out,
            model,
            init,
            train,
            model_explicit: dim.is_some() || layers.is_some() || hidden.is_some(),
            k_shots: k_shots.unwrap_or(DEFAULT_K_SHOTS),
            holdout: holdout.unwrap_or(DEFAULT_HOLDOUT),
            threads: threads.unwrap_or(1),
            scorer: scorer.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let need = |p: &Option<PathBuf>, flag: &str| -> CliResult<()> {
            match p {
                Some(_) => Ok(()),
                None => Err(CliError::usage(format!("{} requires --{flag}", self.command.name()))),
            }
        };
        match self.command {
            Command::Pretrain => {
                need(&self.graph, "graph")?;
                need(&self.out, "out")?;
            }
            Command::Embed | Command::EvalLink => {
                need(&self.graph, "graph")?;
                need(&self.checkpoint, "checkpoint")?;
                need(&self.out, "out")?;
            }
            Command::EvalNode => {
                need(&self.graph, "graph")?;
                need(&self.labels, "labels")?;
                need(&self.checkpoint, "checkpoint")?;
                need(&self.out, "out")?;
            }
            Command::Selfcheck => {}
        }
        if self.threads == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        if self.k_shots == 0 {
            return Err(CliError::usage("--k-shots must be >= 1"));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(CliError::usage(format!(
                "--holdout must be in (0, 1), got {}",
                self.holdout
            )));
        }
        self.model.validate()?;
        self.init.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// `(key, value)` pairs of everything that influences the output.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let t = &self.train;
        let m = &self.model;
        vec![
            ("command", self.command.name().to_string()),
            ("graph", path(&self.graph)),
            ("labels", path(&self.labels)),
            ("checkpoint", path(&self.checkpoint)),
            ("dim_h", m.dim_h.to_string()),
            ("dim_s", m.dim_s.to_string()),
            ("kappa_h", m.kappa_h.to_string()),
            ("kappa_s", m.kappa_s.to_string()),
            ("layers", m.layers.to_string()),
            ("hidden", m.hidden.to_string()),
            ("eigen_mode", format!("{:?}", self.init.eigen_mode).to_lowercase()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.learning_rate.to_string()),
            ("dropout", t.dropout.to_string()),
            ("seed", t.seed.to_string()),
            ("samples_per_anchor", t.samples_per_anchor.to_string()),
            ("tree_depth", t.tree_depth.to_string()),
            ("branch_cap", t.branch_cap.to_string()),
            ("temperature", t.temperature.to_string()),
            ("negative_pool", format!("{:?}", t.negative_pool).to_lowercase()),
            ("freeze_samples", t.freeze_samples.to_string()),
            ("k_shots", self.k_shots.to_string()),
            ("holdout", self.holdout.to_string()),
            ("scorer", self.scorer.to_string()),
            ("threads", self.threads.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn header(&self) -> String {
        let mut s = String::from("# config\n");
        for (k, v) in self.resolved() {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn load_graph(cfg: &RunConfig) -> CliResult<Graph> {
    Ok(load_edge_list(cfg.graph.as_ref().expect("validated"))?)
}

/// Loads the checkpoint and checks explicit model flags against it.
fn load_checkpoint(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(cfg.checkpoint.as_ref().expect("validated"))?;
    let m = ck.model();
    if cfg.model_explicit {
        for (what, want, got) in [
            ("dimension", cfg.model.dim_h, m.dim_h),
            ("layer count", cfg.model.layers, m.layers),
            ("hidden width", cfg.model.hidden, m.hidden),
        ] {
            if want != got {
                return Err(CliError {
                    code: EXIT_DIMENSION,
                    message: format!("checkpoint {what} is {got}, --config/flags ask for {want}"),
                });
            }
        }
    }
    Ok(ck)
}

/// Text form of an embedding table: header, `num_nodes dim`, then one row
/// per node with 17 significant digits.
pub fn format_embedding(header: &str, emb: &Embedding) -> String {
    let mut s = String::from(header);
    s.push_str(&format!("{} {}\n", emb.num_nodes(), emb.dim()));
    for (i, row) in emb.rows.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in row {
            s.push_str(&format!(" {v:.16e}"));
        }
        s.push('\n');
    }
    s
}

fn metrics_outputs(cfg: &RunConfig, m: &Metrics) -> CliResult<()> {
    let out = cfg.out.as_ref().expect("validated");
    let resolved = cfg.resolved();
    write(out, &m.to_key_value(&resolved))?;
    write(&json_path(out), &m.to_json(&resolved))
}

/// `<out>.json` next to the key=value report.
pub fn json_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `<out>.trace` next to the checkpoint.
pub fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace");
    PathBuf::from(s)
}

/// Runs one command. Returns the lines to print on success.
pub fn run(cfg: &RunConfig) -> CliResult<Vec<String>> {
    match cfg.command {
        Command::Pretrain => {
            let g = load_graph(cfg)?;
            let out_path = cfg.out.as_ref().expect("validated");
            let out = match &cfg.checkpoint {
                Some(_) => {
                    let ck = load_checkpoint(cfg)?;
                    resume(&g, ck, cfg.train.epochs)?
                }
                None => train(&g, cfg.model, cfg.init, cfg.train)?,
            };
            out.checkpoint.save(out_path)?;
            let mut trace = cfg.header();
            trace.push_str("# epoch mean_loss\n");
            let first = out.checkpoint.epochs_done as usize - out.trace.len();
            for (i, l) in out.trace.iter().enumerate() {
                trace.push_str(&format!("{} {l:.17e}\n", first + i));
            }
            write(&trace_path(out_path), &trace)?;
            Ok(vec![format!(
                "trained {} epochs on {} nodes; final mean loss {}",
                out.trace.len(),
                g.num_nodes(),
                out.trace.last().map_or("n/a".into(), |l| format!("{l:.6}"))
            )])
        }
        Command::Embed => {
            let g = load_graph(cfg)?;
            let ck = load_checkpoint(cfg)?;
            let emb = embed(&g, &ck)?;
            write(
                cfg.out.as_ref().expect("validated"),
                &format_embedding(&cfg.header(), &emb),
            )?;
            Ok(vec![format!("embedded {} nodes, dim {}", emb.num_nodes(), emb.dim())])
        }
        Command::EvalLink => {
            let g = load_graph(cfg)?;
            let ck = load_checkpoint(cfg)?;
            let split = LinkSplit::new(&g, cfg.holdout, cfg.train.seed)?;
            let (auc, ap) = evaluate_links(&g, &split, &ck, cfg.scorer)?;
            let m = Metrics {
                auc: Some(auc),
                ap: Some(ap),
                seed: cfg.train.seed,
                ..Metrics::default()
            };
            metrics_outputs(cfg, &m)?;
            Ok(vec![format!("auc={auc:.6} ap={ap:.6}")])
        }
        Command::EvalNode => {
            let mut g = load_graph(cfg)?;
            let labels = load_labels(cfg.labels.as_ref().expect("validated"), g.num_nodes())?;
            g.set_labels(labels.clone())?;
            let ck = load_checkpoint(cfg)?;
            let emb = embed(&g, &ck)?;
            let split = FewShotSplit::new(&labels, cfg.k_shots, cfg.train.seed)?;
            let r = classify_nodes(&emb.rows, &labels, &split, &ClassifyConfig::default())?;
            let m = Metrics {
                acc: Some(r.accuracy),
                weighted_f1: Some(r.weighted_f1),
                seed: cfg.train.seed,
                k: Some(cfg.k_shots),
                ..Metrics::default()
            };
            metrics_outputs(cfg, &m)?;
            Ok(vec![format!("acc={:.6} weighted_f1={:.6}", r.accuracy, r.weighted_f1)])
        }
        Command::Selfcheck => {
            let results = selfcheck::run_all();
            let mut lines: Vec<String> = results
                .iter()
                .map(|r| {
                    format!(
                        "{} {}: {}/{} (worst {:.3e})",
                        if r.ok() { "PASS" } else { "FAIL" },
                        r.name,
                        r.passed,
                        r.total,
                        r.worst
                    )
                })
                .collect();
            let failed = results.iter().filter(|r| !r.ok()).count();
            lines.push(format!("{} suites passed, {failed} failed", results.len() - failed));
            if failed > 0 {
                return Err(CliError {
                    code: EXIT_SELFCHECK,
                    message: lines.join("\n"),
                });
            }
            Ok(lines)
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("RGFM_LOG", "warn")).try_init();
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = RunConfig::resolve(args).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
        pool.install(|| run(&cfg))
    });
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("rgfm: error: {}", e.message);
            e.code
        }
    }
}
