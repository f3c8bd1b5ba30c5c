//! The `coe` command line: cluster, score, coordinate, evaluate, simulate.
//!
//! Every subcommand writes CSV to `--out` (through a temporary file, so a failed
//! run leaves no partial output) and a run manifest to `<out>.manifest.json`.
//! Rows are ordered by question id whatever `--jobs` is. Exit codes: 0 success,
//! 1 data error, 2 configuration error, 3 oracle or transport failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clustering::{EntailmentOracle, ExactMatchOracle, ProbMode};
use crate::coordination::{coordinate, CoordinationConfig};
use crate::distribution::{coe, ensemble_mean, Quadrant};
use crate::divergence::DivergenceKind;
use crate::error::{file_error, Error, Result};
use crate::evaluation::{
    baseline_mean_se, baseline_regular_entropy, evaluate, ScoredItem, DEFAULT_RETENTION,
};
use crate::harness::dataset::{
    label_correctness, load_dataset, write_atomic, Matcher, QuestionRecord,
};
use crate::harness::{CachedOracle, EntailmentCache, MatrixOracle, RemoteConfig, RemoteOracle};
use crate::pipeline::{build_question, QuestionEnsemble, WeightScheme};
use crate::simulator::{regime_sweep, RegimeSpec};

#[derive(Debug, Parser)]
#[command(
    name = "coe",
    version,
    about = "Collaborative Entropy for ensembles of answerers"
)]
pub struct Cli {
    /// TOML file with default flag values; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shared semantic clustering of every question's responses.
    Cluster(ClusterArgs),
    /// Per-question CoE reports.
    Score(ScoreArgs),
    /// Run the CoE-guided coordination heuristic per question.
    Coordinate(CoordinateArgs),
    /// Selective-prediction summary of score files.
    Evaluate(EvaluateArgs),
    /// Synthetic ensembles from the four uncertainty regimes.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// exact | matrix:<path> | remote
    #[arg(long)]
    oracle: Option<String>,
    /// Entailment cache file, read before and updated after the run.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Remote oracle URL; falls back to COE_NLI_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    /// Remote oracle timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated list of kl, js, wasserstein, hellinger.
    #[arg(long)]
    divergence: Option<String>,
    /// logprob | frequency
    #[arg(long = "prob-mode")]
    prob_mode: Option<String>,
    /// exact | contains | oracle
    #[arg(long)]
    matcher: Option<String>,
    /// uniform, or a JSON file mapping model name to weight.
    #[arg(long)]
    weights: Option<String>,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CoordinateArgs {
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "t-max")]
    t_max: Option<usize>,
    #[arg(long = "weight-floor")]
    weight_floor: Option<f64>,
    /// Weight factor 1 − SE/ln l instead of 1 − SE.
    #[arg(long = "normalized-entropy")]
    normalized_entropy: bool,
    /// Per-iteration trace CSV.
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Score CSV files produced by `coe score`.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// CSV with columns question_id,correct overriding the score files' labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated retention fractions.
    #[arg(long)]
    retention: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// q1 | q2 | q3 | q4 | all
    #[arg(long, default_value = "all")]
    quadrant: String,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds per quadrant.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long = "alpha-sharp")]
    alpha_sharp: Option<f64>,
    #[arg(long = "alpha-flat")]
    alpha_flat: Option<f64>,
    #[arg(long)]
    sharpen: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    divergence: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Defaults loadable from `--config`.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    divergence: Option<String>,
    epsilon: Option<f64>,
    t_max: Option<usize>,
    weight_floor: Option<f64>,
    prob_mode: Option<String>,
    matcher: Option<String>,
    weights: Option<String>,
    oracle: Option<String>,
    cache: Option<PathBuf>,
    endpoint: Option<String>,
    timeout: Option<f64>,
    jobs: Option<usize>,
    retention: Option<String>,
    seed: Option<u64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("coe: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let started = Instant::now();
    let (name, outputs, mut manifest) = match cli.command {
        Command::Cluster(a) => ("cluster", cmd_cluster(&a, &file)?, a.manifest(&file)),
        Command::Score(a) => ("score", cmd_score(&a, &file)?, a.manifest(&file)),
        Command::Coordinate(a) => ("coordinate", cmd_coordinate(&a, &file)?, a.manifest(&file)),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(&a, &file)?, a.manifest(&file)),
        Command::Simulate(a) => ("simulate", cmd_simulate(&a, &file)?, a.manifest(&file)),
    };
    let primary = outputs
        .first()
        .cloned()
        .expect("every command writes output");
    manifest.subcommand = name.to_string();
    manifest.outputs = outputs;
    manifest.started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64() - started.elapsed().as_secs_f64())
        .unwrap_or(0.0);
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    let path = manifest_path(&primary);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// `<out>.manifest.json`
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Provenance of one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub wall_clock_secs: f64,
}

fn manifest(config: serde_json::Value, inputs: Vec<PathBuf>) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        inputs,
        ..Default::default()
    }
}

// ---------------------------------------------------------------------------
// Flag resolution

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    let items = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty list `{s}`")));
    }
    Ok(items)
}

fn resolve_kinds(flag: Option<&String>, file: &FileConfig) -> Result<Vec<DivergenceKind>> {
    let s = flag
        .or(file.divergence.as_ref())
        .map(String::as_str)
        .unwrap_or("kl");
    let mut kinds: Vec<DivergenceKind> = parse_list(s)?;
    let mut seen = Vec::new();
    kinds.retain(|k| {
        let fresh = !seen.contains(k);
        seen.push(k.clone());
        fresh
    });
    Ok(kinds)
}

fn resolve_retention(flag: Option<&String>, file: &FileConfig) -> Result<Vec<f64>> {
    match flag.or(file.retention.as_ref()) {
        None => Ok(DEFAULT_RETENTION.to_vec()),
        Some(s) => s
            .split(',')
            .map(|p| {
                let r: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad retention `{p}`")))?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("retention {r} outside (0, 1]")));
                }
                Ok(r)
            })
            .collect(),
    }
}

fn resolve_weights(flag: Option<&String>, file: &FileConfig) -> Result<WeightScheme> {
    match flag.or(file.weights.as_ref()).map(String::as_str) {
        None | Some("uniform") => Ok(WeightScheme::Uniform),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("weights file {path}: {e}")))?;
            let map: BTreeMap<String, f64> = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("weights file {path}: {e}")))?;
            Ok(WeightScheme::ByName(map))
        }
    }
}

struct OracleSetup {
    inner: Box<dyn EntailmentOracle>,
    cache: EntailmentCache,
    cache_path: Option<PathBuf>,
    jobs: usize,
}

impl OracleArgs {
    fn oracle_name<'a>(&'a self, file: &'a FileConfig) -> &'a str {
        self.oracle
            .as_deref()
            .or(file.oracle.as_deref())
            .unwrap_or("exact")
    }

    fn jobs(&self, file: &FileConfig) -> usize {
        self.jobs.or(file.jobs).unwrap_or(1).max(1)
    }

    fn cache_path(&self, file: &FileConfig) -> Option<PathBuf> {
        self.cache.clone().or_else(|| file.cache.clone())
    }

    fn setup(&self, file: &FileConfig) -> Result<OracleSetup> {
        let name = self.oracle_name(file);
        let inner: Box<dyn EntailmentOracle> = if name == "exact" {
            Box::new(ExactMatchOracle)
        } else if let Some(path) = name.strip_prefix("matrix:") {
            Box::new(MatrixOracle::load(path)?)
        } else if name == "remote" {
            let mut cfg =
                RemoteConfig::from_env_or(self.endpoint.clone().or(file.endpoint.clone()))?;
            if let Some(t) = self.timeout.or(file.timeout) {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Config(format!("timeout must be > 0, got {t}")));
                }
                cfg.timeout = Duration::from_secs_f64(t);
            }
            Box::new(RemoteOracle::new(cfg)?)
        } else {
            return Err(Error::Config(format!("unknown oracle `{name}`")));
        };
        let cache_path = self.cache_path(file);
        let cache = match &cache_path {
            Some(p) => EntailmentCache::load(p)?,
            None => EntailmentCache::new(),
        };
        Ok(OracleSetup {
            inner,
            cache,
            cache_path,
            jobs: self.jobs(file),
        })
    }

    fn manifest_config(&self, file: &FileConfig) -> serde_json::Value {
        json!({
            "oracle": self.oracle_name(file),
            "cache": self.cache_path(file),
            "jobs": self.jobs(file),
        })
    }
}

/// Runs `work` over every record with a private cache buffer per record, then
/// merges the buffers in record order and persists the cache.
fn for_each_record<T, F>(records: &[QuestionRecord], setup: OracleSetup, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&QuestionRecord, &dyn EntailmentOracle) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let inner = setup.inner.as_ref();
    let base = &setup.cache;
    let results: Vec<Result<(T, EntailmentCache)>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let cached = CachedOracle::new(inner, base);
                let out = work(r, &cached)?;
                Ok((out, cached.into_buffer()))
            })
            .collect()
    });
    let mut outputs = Vec::with_capacity(records.len());
    let mut cache = setup.cache.clone();
    for (record, res) in records.iter().zip(results) {
        let (out, buffer) = res.map_err(|e| Error::Question {
            question_id: record.question_id.clone(),
            source: Box::new(e),
        })?;
        cache.merge(buffer);
        outputs.push(out);
    }
    if let Some(path) = &setup.cache_path {
        cache.save(path)?;
    }
    Ok(outputs)
}

fn load_sorted(path: &Path) -> Result<Vec<QuestionRecord>> {
    let mut records = load_dataset(path)?;
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    Ok(records)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(file_error(path))?;
    Ok(csv::Reader::from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// cluster

impl ClusterArgs {
    fn manifest(&self, file: &FileConfig) -> RunManifest {
        manifest(
            self.oracle.manifest_config(file),
            vec![self.dataset.clone()],
        )
    }
}

fn cmd_cluster(a: &ClusterArgs, file: &FileConfig) -> Result<Vec<PathBuf>> {
    let records = load_sorted(&a.dataset)?;
    let setup = a.oracle.setup(file)?;
    let spaces = for_each_record(&records, setup, |r, oracle| {
        crate::clustering::cluster_pool(&r.samples(), oracle)
    })?;
    let mut rows = Vec::new();
    for (r, space) in records.iter().zip(&spaces) {
        for (i, s) in r.samples().iter().enumerate() {
            let c = space.cluster_of(i);
            rows.push(vec![
                r.question_id.clone(),
                i.to_string(),
                r.models[s.model_index].name.clone(),
                c.to_string(),
                (space.representatives()[c] == i).to_string(),
                s.text.clone(),
            ]);
        }
    }
    write_csv(
        &a.out,
        &[
            "question_id",
            "sample_index",
            "model",
            "cluster",
            "representative",
            "text",
        ],
        &rows,
    )?;
    Ok(vec![a.out.clone()])
}

// ---------------------------------------------------------------------------
// score

/// Column order of `coe score` output.
pub const SCORE_HEADER: [&str; 15] = [
    "question_id",
    "divergence",
    "n_models",
    "n_clusters",
    "u_aleatoric",
    "u_epistemic",
    "u_coe",
    "quadrant",
    "per_model_se",
    "per_model_div",
    "mean_se",
    "regular_entropy",
    "p_false",
    "answer",
    "correct",
];

struct ScoreSettings {
    kinds: Vec<DivergenceKind>,
    mode: ProbMode,
    matcher: Matcher,
    weights: WeightScheme,
}

impl ScoreArgs {
    fn settings(&self, file: &FileConfig) -> Result<ScoreSettings> {
        Ok(ScoreSettings {
            kinds: resolve_kinds(self.divergence.as_ref(), file)?,
            mode: self
                .prob_mode
                .as_ref()
                .or(file.prob_mode.as_ref())
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or_default(),
            matcher: self
                .matcher
                .as_ref()
                .or(file.matcher.as_ref())
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or_default(),
            weights: resolve_weights(self.weights.as_ref(), file)?,
        })
    }

    fn config_json(&self, file: &FileConfig) -> serde_json::Value {
        let mut cfg = self.oracle.manifest_config(file);
        let s = self.settings(file).ok();
        let obj = cfg.as_object_mut().expect("object");
        if let Some(s) = s {
            obj.insert(
                "divergence".into(),
                json!(s.kinds.iter().map(|k| k.name()).collect::<Vec<_>>()),
            );
            obj.insert("prob_mode".into(), json!(s.mode.to_string()));
            obj.insert("matcher".into(), json!(s.matcher.to_string()));
        }
        obj.insert(
            "weights".into(),
            json!(self
                .weights
                .clone()
                .or(file.weights.clone())
                .unwrap_or("uniform".into())),
        );
        cfg
    }

    fn manifest(&self, file: &FileConfig) -> RunManifest {
        manifest(self.config_json(file), vec![self.dataset.clone()])
    }
}

fn label(record: &QuestionRecord, answer: &str, matcher: Matcher) -> Result<Option<bool>> {
    match label_correctness(record, answer, matcher) {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingLabel(_)) | Err(Error::MissingField(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn bool_cell(v: Option<bool>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

fn regular_entropy(record: &QuestionRecord, q: &QuestionEnsemble) -> Option<f64> {
    let per_model: Option<Vec<f64>> = record
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.regular_entropy.or_else(|| {
                let own: Vec<_> = q
                    .samples
                    .iter()
                    .filter(|s| s.model_index == i)
                    .cloned()
                    .collect();
                baseline_regular_entropy(&own).ok()
            })
        })
        .collect();
    per_model.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_p_false(record: &QuestionRecord) -> Option<f64> {
    let v: Option<Vec<f64>> = record.models.iter().map(|m| m.p_false).collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn cmd_score(a: &ScoreArgs, file: &FileConfig) -> Result<Vec<PathBuf>> {
    let s = a.settings(file)?;
    let records = load_sorted(&a.dataset)?;
    let setup = a.oracle.setup(file)?;
    let per_record = for_each_record(&records, setup, |r, oracle| {
        let q = build_question(r, oracle, s.mode, &s.weights)?;
        let (_, answer) = q.majority_answer();
        let correct = label(r, answer, s.matcher)?;
        let reg = regular_entropy(r, &q);
        let pf = mean_p_false(r);
        let mut rows = Vec::new();
        for kind in &s.kinds {
            let rep = coe(&q.ensemble, kind)?;
            rows.push(vec![
                r.question_id.clone(),
                kind.name().to_string(),
                q.ensemble.num_models().to_string(),
                q.ensemble.num_clusters().to_string(),
                rep.u_aleatoric.to_string(),
                rep.u_epistemic.to_string(),
                rep.u_coe.to_string(),
                rep.quadrant.name().to_string(),
                join(&rep.per_model_se),
                join(&rep.per_model_div),
                baseline_mean_se(&rep.per_model_se)?.to_string(),
                opt(reg),
                opt(pf),
                answer.to_string(),
                bool_cell(correct),
            ]);
        }
        Ok(rows)
    })?;
    let rows: Vec<Vec<String>> = per_record.into_iter().flatten().collect();
    write_csv(&a.out, &SCORE_HEADER, &rows)?;
    Ok(vec![a.out.clone()])
}

// ---------------------------------------------------------------------------
// coordinate

impl CoordinateArgs {
    fn config(&self, file: &FileConfig) -> CoordinationConfig {
        let d = CoordinationConfig::default();
        CoordinationConfig {
            epsilon: self.epsilon.or(file.epsilon).unwrap_or(d.epsilon),
            t_max: self.t_max.or(file.t_max).unwrap_or(d.t_max),
            weight_floor: self
                .weight_floor
                .or(file.weight_floor)
                .unwrap_or(d.weight_floor),
            normalized_entropy: self.normalized_entropy,
            divergence_kind: d.divergence_kind,
        }
    }

    fn manifest(&self, file: &FileConfig) -> RunManifest {
        let mut cfg = self.score.config_json(file);
        let c = self.config(file);
        let obj = cfg.as_object_mut().expect("object");
        obj.insert("epsilon".into(), json!(c.epsilon));
        obj.insert("t_max".into(), json!(c.t_max));
        obj.insert("weight_floor".into(), json!(c.weight_floor));
        obj.insert("normalized_entropy".into(), json!(c.normalized_entropy));
        manifest(cfg, vec![self.score.dataset.clone()])
    }
}

pub const COORDINATE_HEADER: [&str; 11] = [
    "question_id",
    "divergence",
    "iterations_used",
    "converged",
    "initial_u_coe",
    "final_u_coe",
    "consensus_cluster",
    "answer_cluster",
    "answer",
    "correct",
    "final_weights",
];

pub const TRACE_HEADER: [&str; 8] = [
    "question_id",
    "divergence",
    "iteration",
    "u_aleatoric",
    "u_epistemic",
    "u_coe",
    "weights",
    "argmax_clusters",
];

fn cmd_coordinate(a: &CoordinateArgs, file: &FileConfig) -> Result<Vec<PathBuf>> {
    let s = a.score.settings(file)?;
    let base_cfg = a.config(file);
    let records = load_sorted(&a.score.dataset)?;
    let setup = a.score.oracle.setup(file)?;
    let per_record = for_each_record(&records, setup, |r, oracle| {
        let q = build_question(r, oracle, s.mode, &s.weights)?;
        let mut rows = Vec::new();
        let mut trace_rows = Vec::new();
        for kind in &s.kinds {
            let cfg = CoordinationConfig {
                divergence_kind: kind.clone(),
                ..base_cfg.clone()
            };
            let tr = coordinate(&q.ensemble, &cfg)?;
            let answer_cluster = tr
                .consensus_cluster
                .unwrap_or_else(|| ensemble_mean(&tr.final_state).argmax());
            let answer = q.representative_text(answer_cluster);
            let correct = label(r, answer, s.matcher)?;
            rows.push(vec![
                r.question_id.clone(),
                kind.name().to_string(),
                tr.iterations_used.to_string(),
                tr.converged.to_string(),
                tr.initial_u_coe().to_string(),
                tr.final_u_coe().to_string(),
                tr.consensus_cluster
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
                answer_cluster.to_string(),
                answer.to_string(),
                bool_cell(correct),
                join(tr.final_state.weights()),
            ]);
            for rec in &tr.records {
                let argmax: Vec<String> = rec
                    .distributions
                    .iter()
                    .map(|d| d.argmax().to_string())
                    .collect();
                trace_rows.push(vec![
                    r.question_id.clone(),
                    kind.name().to_string(),
                    rec.iteration.to_string(),
                    rec.u_aleatoric.to_string(),
                    rec.u_epistemic.to_string(),
                    rec.u_coe.to_string(),
                    join(&rec.weights),
                    argmax.join(";"),
                ]);
            }
        }
        Ok((rows, trace_rows))
    })?;
    let (rows, traces): (Vec<_>, Vec<_>) = per_record.into_iter().unzip();
    let rows: Vec<Vec<String>> = rows.into_iter().flatten().collect();
    write_csv(&a.score.out, &COORDINATE_HEADER, &rows)?;
    let mut outputs = vec![a.score.out.clone()];
    if let Some(path) = &a.trace_out {
        let traces: Vec<Vec<String>> = traces.into_iter().flatten().collect();
        write_csv(path, &TRACE_HEADER, &traces)?;
        outputs.push(path.clone());
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// evaluate

impl EvaluateArgs {
    fn manifest(&self, file: &FileConfig) -> RunManifest {
        let retention = resolve_retention(self.retention.as_ref(), file).unwrap_or_default();
        let mut inputs = self.scores.clone();
        inputs.extend(self.labels.clone());
        manifest(json!({ "retention": retention }), inputs)
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    question_id: String,
    divergence: String,
    u_aleatoric: f64,
    u_epistemic: f64,
    u_coe: f64,
    mean_se: f64,
    #[serde(deserialize_with = "csv::invalid_option")]
    regular_entropy: Option<f64>,
    #[serde(deserialize_with = "csv::invalid_option")]
    p_false: Option<f64>,
    #[serde(deserialize_with = "csv::invalid_option")]
    correct: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    question_id: String,
    correct: bool,
}

#[derive(Default)]
struct QuestionScores {
    correct: Option<bool>,
    u_aleatoric: f64,
    mean_se: f64,
    regular_entropy: Option<f64>,
    p_false: Option<f64>,
    by_kind: BTreeMap<String, (f64, f64)>,
}

/// Column order of `coe evaluate` output, before the retention columns.
pub const EVAL_HEADER: [&str; 4] = ["metric", "n_items", "auroc", "aurac"];

fn cmd_evaluate(a: &EvaluateArgs, file: &FileConfig) -> Result<Vec<PathBuf>> {
    let retention = resolve_retention(a.retention.as_ref(), file)?;
    let mut questions: BTreeMap<String, QuestionScores> = BTreeMap::new();
    let mut kinds: Vec<String> = Vec::new();
    for path in &a.scores {
        let mut rdr = csv_reader(path)?;
        for row in rdr.deserialize() {
            let row: ScoreRow = row.map_err(|e| csv_error(path, e))?;
            if !kinds.contains(&row.divergence) {
                kinds.push(row.divergence.clone());
            }
            let q = questions.entry(row.question_id.clone()).or_default();
            q.correct = q.correct.or(row.correct);
            q.u_aleatoric = row.u_aleatoric;
            q.mean_se = row.mean_se;
            q.regular_entropy = row.regular_entropy;
            q.p_false = row.p_false;
            q.by_kind
                .insert(row.divergence, (row.u_coe, row.u_epistemic));
        }
    }
    if let Some(path) = &a.labels {
        let mut rdr = csv_reader(path)?;
        for row in rdr.deserialize() {
            let row: LabelRow = row.map_err(|e| csv_error(path, e))?;
            if let Some(q) = questions.get_mut(&row.question_id) {
                q.correct = Some(row.correct);
            }
        }
    }
    if questions.is_empty() {
        return Err(Error::EmptyInput("no scored questions".into()));
    }
    let unlabeled: Vec<&String> = questions
        .iter()
        .filter(|(_, q)| q.correct.is_none())
        .map(|(id, _)| id)
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::MissingLabel(format!(
            "{} ({} unlabeled questions)",
            unlabeled[0],
            unlabeled.len()
        )));
    }
    for (id, q) in &questions {
        if let Some(k) = kinds.iter().find(|k| !q.by_kind.contains_key(*k)) {
            return Err(Error::MissingField(format!(
                "question {id} has no `{k}` row"
            )));
        }
    }

    type Extract = Box<dyn Fn(&QuestionScores) -> Option<f64>>;
    let mut metrics: Vec<(String, Extract)> = Vec::new();
    for k in &kinds {
        let key = k.clone();
        metrics.push((
            format!("u_coe[{k}]"),
            Box::new(move |q| Some(q.by_kind[&key].0)),
        ));
    }
    metrics.push(("u_aleatoric".into(), Box::new(|q| Some(q.u_aleatoric))));
    for k in &kinds {
        let key = k.clone();
        metrics.push((
            format!("u_epistemic[{k}]"),
            Box::new(move |q| Some(q.by_kind[&key].1)),
        ));
    }
    metrics.push(("mean_se".into(), Box::new(|q| Some(q.mean_se))));
    metrics.push(("regular_entropy".into(), Box::new(|q| q.regular_entropy)));
    metrics.push(("p_false".into(), Box::new(|q| q.p_false)));

    let mut header: Vec<String> = EVAL_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(
        retention
            .iter()
            .map(|r| format!("rejection_accuracy@{r:.2}")),
    );
    let mut rows = Vec::new();
    for (name, extract) in &metrics {
        let items: Option<Vec<ScoredItem>> = questions
            .iter()
            .map(|(id, q)| {
                extract(q).map(|u| ScoredItem::new(id.clone(), u, q.correct.expect("checked")))
            })
            .map(|o| o.transpose())
            .collect::<Result<Option<Vec<_>>>>()?;
        // Optional baselines are reported only when every question carries them.
        let Some(items) = items else { continue };
        let summary = evaluate(&items, &retention)?;
        let mut row = vec![
            name.clone(),
            summary.n_items.to_string(),
            summary.auroc.to_string(),
            summary.aurac.to_string(),
        ];
        row.extend(
            summary
                .rejection_accuracy
                .iter()
                .map(|(_, acc)| acc.to_string()),
        );
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&a.out, &header_refs, &rows)?;
    Ok(vec![a.out.clone()])
}

// ---------------------------------------------------------------------------
// simulate

impl SimulateArgs {
    fn specs(&self, file: &FileConfig) -> Result<Vec<RegimeSpec>> {
        let quadrants: Vec<Quadrant> = if self.quadrant.trim().eq_ignore_ascii_case("all") {
            Quadrant::ALL.to_vec()
        } else {
            parse_list(&self.quadrant).map_err(|e| Error::InvalidSpec(e.to_string()))?
        };
        if self.seeds == 0 {
            return Err(Error::InvalidSpec("--seeds must be ≥ 1".into()));
        }
        let d = RegimeSpec::default();
        let first = self.seed.or(file.seed).unwrap_or(0);
        let mut specs = Vec::new();
        for q in quadrants {
            for seed in first..first + self.seeds {
                let spec = RegimeSpec {
                    quadrant: q,
                    k: self.k.unwrap_or(d.k),
                    l: self.l.unwrap_or(d.l),
                    alpha_sharp: self.alpha_sharp.unwrap_or(d.alpha_sharp),
                    alpha_flat: self.alpha_flat.unwrap_or(d.alpha_flat),
                    sharpen: self.sharpen.unwrap_or(d.sharpen),
                    noise: self.noise.unwrap_or(d.noise),
                    seed,
                };
                spec.validate()?;
                specs.push(spec);
            }
        }
        Ok(specs)
    }

    fn manifest(&self, file: &FileConfig) -> RunManifest {
        let kinds = resolve_kinds(self.divergence.as_ref(), file).unwrap_or_default();
        manifest(
            json!({
                "quadrant": self.quadrant,
                "seed": self.seed.or(file.seed).unwrap_or(0),
                "seeds": self.seeds,
                "specs": self.specs(file).ok().and_then(|s| s.first().cloned()),
                "divergence": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
            }),
            vec![],
        )
    }
}

pub const SIMULATE_HEADER: [&str; 9] = [
    "quadrant",
    "seed",
    "k",
    "l",
    "divergence",
    "u_aleatoric",
    "u_epistemic",
    "u_coe",
    "classified",
];

fn cmd_simulate(a: &SimulateArgs, file: &FileConfig) -> Result<Vec<PathBuf>> {
    let specs = a.specs(file)?;
    let kinds = resolve_kinds(a.divergence.as_ref(), file)?;
    let mut rows = Vec::new();
    for kind in &kinds {
        for row in regime_sweep(&specs, kind)? {
            rows.push(vec![
                row.quadrant.short().to_string(),
                row.seed.to_string(),
                row.k.to_string(),
                row.l.to_string(),
                kind.name().to_string(),
                row.u_aleatoric.to_string(),
                row.u_epistemic.to_string(),
                row.u_coe.to_string(),
                row.classified.short().to_string(),
            ]);
        }
    }
    write_csv(&a.out, &SIMULATE_HEADER, &rows)?;
    Ok(vec![a.out.clone()])
}
