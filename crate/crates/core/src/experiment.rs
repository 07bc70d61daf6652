//! Run configuration and experiment drivers.
//!
//! Configuration is a flat set of `key = value` settings. They can come from
//! a TOML file, from command-line flags or from sweep axes; all three go
//! through [`RunConfig::set`]. Output files are comma-separated text with a
//! `#`-prefixed header that echoes the fully resolved configuration.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bound::{bound_rhs, estimate_constants, BoundConstants, EstimateOptions};
use crate::channel::{ChannelModel, FadingKind};
use crate::error::{Error, Result};
use crate::model_state::ModelParams;
use crate::rng::{stream, Stream};
use crate::server::{init, run_rounds, RoundRecord, RoundRngs, RunOutcome, Setup};
use crate::sparsifier::{gamma_of, Strategy, StrategyKind};
use crate::task::{
    dirichlet_partition, gen_synthetic, train_test_split, ClientData, Dataset, LogisticTask, MlpTask,
    PartitionSpec, QuadraticTask, Task,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskName {
    Quadratic,
    Logistic,
    Mlp,
}

impl TaskName {
    fn as_str(self) -> &'static str {
        match self {
            TaskName::Quadratic => "quadratic",
            TaskName::Logistic => "logistic",
            TaskName::Mlp => "mlp",
        }
    }
}

/// A full experiment description. Defaults follow the reference setup:
/// 20 clients, Dirichlet α = 0.3, Rayleigh fading with unit mean gain,
/// ρ_r = 0.3 and ρ_k = 0.2.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub task: TaskName,
    /// Model dimension. Required for the quadratic, derived for classifiers
    /// (a value given for a classifier must match the derived one).
    pub d: Option<usize>,
    pub clients: usize,
    pub rounds: Option<usize>,
    pub rho_r: f64,
    pub rho_k: f64,
    pub eta: f64,
    pub alpha: f64,
    pub fading: FadingKind,
    pub mu_h: f64,
    /// Only used by Gaussian-gain fading; derived otherwise.
    pub sigma_h_sq: f64,
    pub sigma_z_sq: f64,
    pub seed: Option<u64>,
    /// Seed for problem generation (data, partition, quadratic). Defaults to `seed`.
    pub data_seed: Option<u64>,
    pub init_scale: f64,
    /// Magnitude-ratio bound used when evaluating γ.
    pub beta: f64,
    pub test_fraction: f64,
    pub features: usize,
    pub classes: usize,
    pub hidden: usize,
    pub samples: usize,
    pub separation: f64,
    pub l2: f64,
    pub data_file: Option<PathBuf>,
    /// Largest eigenvalue of the quadratic's curvature matrix.
    pub curvature: f64,
    pub center_scale: f64,
    /// Scale of the per-client quadratic centre offsets.
    pub spread: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: StrategyKind::AgeTopK,
            task: TaskName::Logistic,
            d: None,
            clients: 20,
            rounds: None,
            rho_r: 0.3,
            rho_k: 0.2,
            eta: 0.1,
            alpha: 0.3,
            fading: FadingKind::Rayleigh,
            mu_h: 1.0,
            sigma_h_sq: 0.0,
            sigma_z_sq: 1e-4,
            seed: None,
            data_seed: None,
            init_scale: 0.01,
            beta: 1.0,
            test_fraction: 0.2,
            features: 99,
            classes: 10,
            hidden: 32,
            samples: 2500,
            separation: 3.0,
            l2: 0.0,
            data_file: None,
            curvature: 1.0,
            center_scale: 1.0,
            spread: 0.5,
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::config(format!("invalid value '{value}' for '{key}'")))
}

fn canonical_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl RunConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let v = value.trim();
        match key.as_str() {
            "strategy" => self.strategy = v.parse()?,
            "task" => {
                self.task = match v.to_ascii_lowercase().as_str() {
                    "quadratic" => TaskName::Quadratic,
                    "logistic" | "logistic_regression" => TaskName::Logistic,
                    "mlp" => TaskName::Mlp,
                    _ => return Err(Error::config(format!("unknown task '{v}' (quadratic, logistic, mlp)"))),
                }
            }
            "d" => self.d = Some(parse_num(&key, v)?),
            "clients" | "n" => self.clients = parse_num(&key, v)?,
            "rounds" | "t" => self.rounds = Some(parse_num(&key, v)?),
            "rho_r" => self.rho_r = parse_num(&key, v)?,
            "rho_k" => self.rho_k = parse_num(&key, v)?,
            "eta" => self.eta = parse_num(&key, v)?,
            "alpha" => self.alpha = parse_num(&key, v)?,
            "fading" => self.fading = v.parse()?,
            "mu_h" => self.mu_h = parse_num(&key, v)?,
            "sigma_h_sq" => self.sigma_h_sq = parse_num(&key, v)?,
            "sigma_z_sq" => self.sigma_z_sq = parse_num(&key, v)?,
            "seed" => self.seed = Some(parse_num(&key, v)?),
            "data_seed" => self.data_seed = Some(parse_num(&key, v)?),
            "init_scale" => self.init_scale = parse_num(&key, v)?,
            "beta" => self.beta = parse_num(&key, v)?,
            "test_fraction" => self.test_fraction = parse_num(&key, v)?,
            "features" | "p" => self.features = parse_num(&key, v)?,
            "classes" => self.classes = parse_num(&key, v)?,
            "hidden" => self.hidden = parse_num(&key, v)?,
            "samples" => self.samples = parse_num(&key, v)?,
            "separation" => self.separation = parse_num(&key, v)?,
            "l2" => self.l2 = parse_num(&key, v)?,
            "data_file" => self.data_file = Some(PathBuf::from(v)),
            "curvature" => self.curvature = parse_num(&key, v)?,
            "center_scale" => self.center_scale = parse_num(&key, v)?,
            "spread" => self.spread = parse_num(&key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(Error::config(format!("unknown config field '{key}'"))),
        }
        Ok(())
    }

    /// Applies every entry of a flat TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config file: {}", e.message())))?;
        for (key, value) in &table {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(Error::config(format!("config field '{key}' must be a scalar"))),
            };
            self.set(key, &text)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config '{}': {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_toml(&text)?;
        Ok(cfg)
    }

    /// Model dimension implied by the task settings.
    pub fn d(&self) -> Result<usize> {
        let derived = match self.task {
            TaskName::Quadratic => {
                return self.d.ok_or_else(|| Error::config("missing field 'd' (required for the quadratic task)"))
            }
            TaskName::Logistic => self.classes * (self.features + 1),
            TaskName::Mlp => self.hidden * (self.features + 1) + self.classes * (self.hidden + 1),
        };
        match self.d {
            Some(d) if d != derived => Err(Error::config(format!(
                "d={d} does not match the {} parameter count {derived}",
                self.task.as_str()
            ))),
            _ => Ok(derived),
        }
    }

    /// Candidate count `⌊ρ_r d⌋`.
    pub fn r(&self) -> Result<usize> {
        Ok((self.rho_r * self.d()? as f64).floor() as usize)
    }

    /// Transmit count `⌊ρ_k d⌋`.
    pub fn k(&self) -> Result<usize> {
        Ok((self.rho_k * self.d()? as f64).floor() as usize)
    }

    pub fn rounds(&self) -> Result<usize> {
        self.rounds.ok_or_else(|| Error::config("missing field 'rounds'"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::config("missing field 'seed'"))
    }

    pub fn strategy_params(&self) -> Result<Strategy> {
        Strategy::normalized(self.strategy, self.d()?, self.r()?, self.k()?)
    }

    pub fn channel(&self) -> Result<ChannelModel> {
        ChannelModel::from_parts(self.fading, self.mu_h, self.sigma_h_sq, self.sigma_z_sq)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho_r", self.rho_r), ("rho_k", self.rho_k)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1] (got {v})")));
            }
        }
        if self.rho_k > self.rho_r {
            return Err(Error::config(format!(
                "rho_k ({}) must not exceed rho_r ({})",
                self.rho_k, self.rho_r
            )));
        }
        let (d, r, k) = (self.d()?, self.r()?, self.k()?);
        if d == 0 || k == 0 || k > r || r > d {
            return Err(Error::config(format!(
                "derived sizes must satisfy 1 <= k <= r <= d (d={d}, r={r}, k={k})"
            )));
        }
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be > 0 (got {})", self.eta)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0 (got {})", self.alpha)));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::config(format!("beta must be >= 1 (got {})", self.beta)));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::config("init_scale must be >= 0"));
        }
        if self.task != TaskName::Quadratic && (self.features == 0 || self.classes < 2) {
            return Err(Error::config("classification tasks need features >= 1 and classes >= 2"));
        }
        self.rounds()?;
        self.seed()?;
        self.channel()?;
        self.strategy_params()?;
        Ok(())
    }

    /// Resolved settings in a stable order, as `(key, value)` pairs that
    /// [`RunConfig::set`] accepts back.
    pub fn echo_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "unset".into());
        let mut pairs = vec![
            ("strategy", self.strategy.to_string()),
            ("task", self.task.as_str().to_string()),
            ("d", opt(self.d().ok().map(|d| d.to_string()))),
            ("clients", self.clients.to_string()),
            ("rounds", opt(self.rounds.map(|v| v.to_string()))),
            ("rho_r", self.rho_r.to_string()),
            ("rho_k", self.rho_k.to_string()),
            ("eta", self.eta.to_string()),
            ("alpha", self.alpha.to_string()),
            ("fading", self.fading.to_string()),
            ("mu_h", self.mu_h.to_string()),
            ("sigma_h_sq", self.sigma_h_sq.to_string()),
            ("sigma_z_sq", self.sigma_z_sq.to_string()),
            ("seed", opt(self.seed.map(|v| v.to_string()))),
            ("data_seed", opt(self.data_seed.or(self.seed).map(|v| v.to_string()))),
            ("init_scale", self.init_scale.to_string()),
            ("beta", self.beta.to_string()),
        ];
        match self.task {
            TaskName::Quadratic => {
                pairs.push(("curvature", self.curvature.to_string()));
                pairs.push(("center_scale", self.center_scale.to_string()));
                pairs.push(("spread", self.spread.to_string()));
            }
            TaskName::Logistic | TaskName::Mlp => {
                pairs.push(("test_fraction", self.test_fraction.to_string()));
                pairs.push(("features", self.features.to_string()));
                pairs.push(("classes", self.classes.to_string()));
                if self.task == TaskName::Mlp {
                    pairs.push(("hidden", self.hidden.to_string()));
                }
                pairs.push(("l2", self.l2.to_string()));
                match &self.data_file {
                    Some(p) => pairs.push(("data_file", p.display().to_string())),
                    None => {
                        pairs.push(("samples", self.samples.to_string()));
                        pairs.push(("separation", self.separation.to_string()));
                    }
                }
            }
        }
        pairs
    }

    /// `#`-prefixed header block: resolved settings plus derived sizes.
    pub fn header(&self, title: &str) -> String {
        let mut s = format!("# {title}\n");
        for (k, v) in self.echo_pairs() {
            let _ = writeln!(s, "# {k} = {v}");
        }
        if let (Ok(r), Ok(k)) = (self.strategy_params().map(|s| s.r()), self.k()) {
            let _ = writeln!(s, "# derived r = {r}");
            let _ = writeln!(s, "# derived k = {k}");
        }
        if let Ok(ch) = self.channel() {
            let _ = writeln!(s, "# derived sigma_h_sq = {}", ch.sigma_h_sq());
        }
        s
    }
}

/// Settings from a config file (if any) overlaid with `overrides`, validated.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `1,2,5` or a half-open range `0..20`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (parse_num("seeds", a)?, parse_num("seeds", b)?);
        if a >= b {
            return Err(Error::config(format!("empty seed range '{text}'")));
        }
        return Ok((a..b).collect());
    }
    let seeds = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num("seeds", s))
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::config("empty seed list"));
    }
    Ok(seeds)
}

/// Builds the fixed run environment and the initial model.
pub fn build_setup(cfg: &RunConfig) -> Result<(Setup, ModelParams)> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let data_seed = cfg.data_seed.unwrap_or(seed);
    let d = cfg.d()?;
    let (task, clients, train_eval, test_eval) = match cfg.task {
        TaskName::Quadratic => {
            let mut rng = stream(data_seed, Stream::Task);
            let q = QuadraticTask::random(d, cfg.curvature, &mut rng)?;
            let centers = q.client_centers(cfg.clients, cfg.center_scale, cfg.spread, &mut rng);
            let clients = centers.into_iter().map(ClientData::Center).collect();
            (Task::Quadratic(q), clients, None, None)
        }
        TaskName::Logistic | TaskName::Mlp => {
            let data = match &cfg.data_file {
                Some(path) => Dataset::load(path)?,
                None => gen_synthetic(
                    cfg.features,
                    cfg.classes,
                    cfg.samples,
                    cfg.separation,
                    &mut stream(data_seed, Stream::Data),
                )?,
            };
            if data.feature_dim() != cfg.features {
                return Err(Error::config(format!(
                    "dataset has {} features but config says {}",
                    data.feature_dim(),
                    cfg.features
                )));
            }
            let (train, test) = train_test_split(&data, cfg.test_fraction, &mut stream(data_seed, Stream::Split))?;
            let spec = PartitionSpec { alpha: cfg.alpha, clients: cfg.clients };
            let parts = dirichlet_partition(&train, spec, &mut stream(data_seed, Stream::Partition))?;
            let task = if cfg.task == TaskName::Logistic {
                Task::Logistic(LogisticTask { p: cfg.features, classes: cfg.classes, l2: cfg.l2 })
            } else {
                Task::Mlp(MlpTask { p: cfg.features, hidden: cfg.hidden, classes: cfg.classes, l2: cfg.l2 })
            };
            let test = if cfg.test_fraction > 0.0 { Some(test) } else { None };
            (task, parts.into_iter().map(ClientData::Samples).collect(), Some(train), test)
        }
    };
    let theta0 = task.init_params(cfg.init_scale, &mut stream(seed, Stream::Init))?;
    let setup = Setup {
        task,
        clients,
        channel: cfg.channel()?,
        strategy: cfg.strategy_params()?,
        eta: cfg.eta,
        train_eval,
        test_eval,
    };
    Ok((setup, theta0))
}

/// Runs a configuration in memory.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let (setup, theta0) = build_setup(cfg)?;
    let mut rngs = RoundRngs::from_seed(cfg.seed()?);
    let state = init(&setup, theta0, &mut rngs)?;
    run_rounds(&setup, state, cfg.rounds()?, &mut rngs)
}

/// Decimal text with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

pub const METRICS_COLUMNS: &str = "round,loss,grad_norm_sq,train_accuracy,test_accuracy,max_age,mean_age";

pub fn metrics_row(rec: &RoundRecord, timing: bool) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{}",
        rec.round,
        fmt_real(rec.loss),
        fmt_real(rec.grad_norm_sq),
        fmt_opt(rec.train_accuracy),
        fmt_opt(rec.test_accuracy),
        rec.max_age,
        fmt_real(rec.mean_age),
    );
    if timing {
        let _ = write!(row, ",{:.3}", rec.wall_ms);
    }
    row
}

/// Writes the metrics file: config header, one row per round and, for an
/// aborted run, a trailing `# ABORTED` marker line.
pub fn write_metrics<W: Write>(mut out: W, cfg: &RunConfig, outcome: &RunOutcome, timing: bool) -> Result<()> {
    out.write_all(cfg.header("agetopk run metrics").as_bytes())?;
    write!(out, "{METRICS_COLUMNS}")?;
    if timing {
        write!(out, ",wall_ms")?;
    }
    writeln!(out)?;
    for rec in &outcome.records {
        writeln!(out, "{}", metrics_row(rec, timing))?;
    }
    if let Some(abort) = &outcome.aborted {
        writeln!(out, "# ABORTED round={} reason={}", abort.round, abort.reason)?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn out_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| Error::config("missing output path ('out')"))
}

/// Runs one configuration and writes its metrics file to `cfg.out`.
/// Divergence still writes the partial file; check [`RunOutcome::aborted`].
pub fn run_single(cfg: &RunConfig, timing: bool) -> Result<RunOutcome> {
    let path = out_path(cfg)?;
    let outcome = run(cfg)?;
    write_metrics(create(path)?, cfg, &outcome, timing)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }

    pub fn std_err(xs: &[f64]) -> f64 {
        Stat::of(xs).std / (xs.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub runs: usize,
    pub aborted: usize,
    pub loss: Stat,
    pub grad_norm_sq: Stat,
    pub train_accuracy: Stat,
    pub test_accuracy: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("a sweep needs at least one value and one seed"));
        }
        for v in &self.values {
            self.member(v, self.seeds[0])?;
        }
        Ok(())
    }

    /// Configuration for one sweep cell.
    pub fn member(&self, value: &str, seed: u64) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        cfg.set(&self.axis, value)?;
        cfg.seed = Some(seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs every (value, seed) cell in parallel and summarises the final
/// round of each cell per axis value.
pub fn sweep(spec: &SweepSpec) -> Result<SweepSummary> {
    spec.validate()?;
    let cells: Vec<(usize, u64)> = (0..spec.values.len())
        .flat_map(|v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<(usize, RunOutcome)> = cells
        .par_iter()
        .map(|&(v, seed)| {
            let cfg = spec.member(&spec.values[v], seed)?;
            Ok((v, run(&cfg)?))
        })
        .collect::<Result<_>>()?;

    let rows = spec
        .values
        .iter()
        .enumerate()
        .map(|(vi, value)| {
            let finals: Vec<(bool, Option<&RoundRecord>)> = results
                .iter()
                .filter(|(v, _)| *v == vi)
                .map(|(_, o)| (o.aborted.is_some(), o.records.last()))
                .collect();
            let collect = |f: &dyn Fn(&RoundRecord) -> Option<f64>| -> Vec<f64> {
                finals.iter().filter_map(|(_, r)| r.and_then(f)).collect()
            };
            SweepRow {
                value: value.clone(),
                runs: finals.len(),
                aborted: finals.iter().filter(|(a, _)| *a).count(),
                loss: Stat::of(&collect(&|r| Some(r.loss))),
                grad_norm_sq: Stat::of(&collect(&|r| Some(r.grad_norm_sq))),
                train_accuracy: Stat::of(&collect(&|r| r.train_accuracy)),
                test_accuracy: Stat::of(&collect(&|r| r.test_accuracy)),
            }
        })
        .collect();
    Ok(SweepSummary { spec: spec.clone(), rows })
}

pub const SWEEP_COLUMNS: &str = "value,runs,aborted,final_loss_mean,final_loss_std,final_grad_norm_sq_mean,final_grad_norm_sq_std,final_train_accuracy_mean,final_train_accuracy_std,final_test_accuracy_mean,final_test_accuracy_std";

pub fn write_sweep<W: Write>(mut out: W, summary: &SweepSummary) -> Result<()> {
    let spec = &summary.spec;
    out.write_all(spec.base.header("agetopk sweep summary").as_bytes())?;
    writeln!(out, "# sweep axis = {}", spec.axis)?;
    writeln!(out, "# sweep values = {}", spec.values.join(","))?;
    let seeds: Vec<String> = spec.seeds.iter().map(u64::to_string).collect();
    writeln!(out, "# sweep seeds = {}", seeds.join(","))?;
    writeln!(out, "{SWEEP_COLUMNS}")?;
    for row in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.value,
            row.runs,
            row.aborted,
            fmt_real(row.loss.mean),
            fmt_real(row.loss.std),
            fmt_real(row.grad_norm_sq.mean),
            fmt_real(row.grad_norm_sq.std),
            fmt_real(row.train_accuracy.mean),
            fmt_real(row.train_accuracy.std),
            fmt_real(row.test_accuracy.mean),
            fmt_real(row.test_accuracy.std),
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn run_sweep(spec: &SweepSpec, path: &Path) -> Result<SweepSummary> {
    let summary = sweep(spec)?;
    write_sweep(create(path)?, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rounds: usize,
    /// Seed average of the time-mean squared gradient norm.
    pub empirical_mean: f64,
    pub standard_error: f64,
    pub rhs: f64,
    pub transient: f64,
    pub floor: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<Checkpoint>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checkpoints.iter().all(|c| c.pass)
    }
}

/// Compares seed-averaged time-mean `‖∇f(θ^t)‖²` against the bound at each
/// checkpoint. Every replicate shares the problem instance (generated from
/// `data_seed`, defaulting to the first seed) and differs in θ⁰ and the
/// channel/selection randomness.
///
/// Constants: L, σ_g² and f* exactly; G² as the maximum client-average
/// squared gradient norm over every visited model; E f(θ⁰) as the seed
/// average; γ from the configured β. A checkpoint passes when
/// `mean + 2 standard errors <= rhs`.
pub fn bound_check(cfg: &RunConfig, checkpoints: &[usize], seeds: &[u64]) -> Result<BoundReport> {
    if cfg.task != TaskName::Quadratic {
        return Err(Error::config("bound-check requires the quadratic task"));
    }
    if seeds.is_empty() || checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::config("bound-check needs seeds and positive checkpoints"));
    }
    let horizon = *checkpoints.iter().max().expect("nonempty");
    let mut base = cfg.clone();
    base.data_seed = Some(cfg.data_seed.unwrap_or(seeds[0]));
    base.rounds = Some(horizon);

    let runs: Vec<(RunOutcome, ModelParams, Setup)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut member = base.clone();
            member.seed = Some(seed);
            let (setup, theta0) = build_setup(&member)?;
            let mut rngs = RoundRngs::from_seed(seed);
            let state = init(&setup, theta0.clone(), &mut rngs)?;
            let outcome = run_rounds(&setup, state, horizon, &mut rngs)?;
            if let Some(a) = &outcome.aborted {
                return Err(Error::Divergence { round: a.round, reason: a.reason.clone() });
            }
            Ok((outcome, theta0, setup))
        })
        .collect::<Result<_>>()?;

    let setup = &runs[0].2;
    let inits: Vec<ModelParams> = runs.iter().map(|r| r.1.clone()).collect();
    let exact = estimate_constants(&setup.task, &setup.clients, &inits, EstimateOptions::default())?;
    let visited_g_sq = runs
        .iter()
        .flat_map(|r| r.0.records.iter().map(|rec| rec.client_grad_norm_sq))
        .fold(exact.g_sq, f64::max);
    let f0 = inits
        .iter()
        .map(|t| setup.task.global_loss(t, &setup.clients))
        .sum::<Result<f64>>()?
        / inits.len() as f64;
    let strategy = setup.strategy;
    let constants = BoundConstants {
        l: exact.l,
        g_sq: visited_g_sq,
        sigma_g_sq: exact.sigma_g_sq,
        mu_h: setup.channel.mu_h(),
        sigma_h_sq: setup.channel.sigma_h_sq(),
        sigma_z_sq: setup.channel.sigma_z_sq(),
        gamma: gamma_of(strategy.d(), strategy.r(), strategy.k(), cfg.beta)?.gamma,
        k: strategy.k(),
        n: setup.clients.len(),
        eta: setup.eta,
        f0,
        f_star: exact.f_star,
    };

    let mut rows = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let per_seed: Vec<f64> = runs
            .iter()
            .map(|r| r.0.records[..t].iter().map(|rec| rec.grad_norm_sq).sum::<f64>() / t as f64)
            .collect();
        let stat = Stat::of(&per_seed);
        let se = Stat::std_err(&per_seed);
        let rhs = bound_rhs(&constants, t)?;
        rows.push(Checkpoint {
            rounds: t,
            empirical_mean: stat.mean,
            standard_error: se,
            rhs,
            transient: constants.transient(t),
            floor: constants.floor(),
            pass: stat.mean + 2.0 * se <= rhs,
        });
    }
    Ok(BoundReport { constants, seeds: seeds.to_vec(), checkpoints: rows })
}

pub const BOUND_COLUMNS: &str = "rounds,empirical_mean,standard_error,bound_rhs,transient,floor,pass";

pub fn write_bound_report<W: Write>(mut out: W, cfg: &RunConfig, report: &BoundReport) -> Result<()> {
    out.write_all(cfg.header("agetopk bound check").as_bytes())?;
    let c = &report.constants;
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    writeln!(out, "# seeds = {}", seeds.join(","))?;
    for (name, v) in [
        ("L", c.l),
        ("G_sq", c.g_sq),
        ("sigma_g_sq", c.sigma_g_sq),
        ("mu_h", c.mu_h),
        ("sigma_h_sq", c.sigma_h_sq),
        ("sigma_z_sq", c.sigma_z_sq),
        ("gamma", c.gamma),
        ("f0", c.f0),
        ("f_star", c.f_star),
    ] {
        writeln!(out, "# constant {name} = {}", fmt_real(v))?;
    }
    writeln!(out, "# constant B1 = {}", fmt_real(crate::bound::compute_b1(c)))?;
    writeln!(out, "# constant B2 = {}", fmt_real(crate::bound::compute_b2(c)))?;
    writeln!(out, "{BOUND_COLUMNS}")?;
    for cp in &report.checkpoints {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cp.rounds,
            fmt_real(cp.empirical_mean),
            fmt_real(cp.standard_error),
            fmt_real(cp.rhs),
            fmt_real(cp.transient),
            fmt_real(cp.floor),
            if cp.pass { "pass" } else { "fail" }
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn run_bound_check(cfg: &RunConfig, checkpoints: &[usize], seeds: &[u64], path: &Path) -> Result<BoundReport> {
    let report = bound_check(cfg, checkpoints, seeds)?;
    write_bound_report(create(path)?, cfg, &report)?;
    Ok(report)
}
