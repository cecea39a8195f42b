//! Config-driven experiment runs: parsing, CSV traces, summaries and
//! manifests.
//!
//! A config file is JSON. The short form only needs the problem size, the
//! algorithms and a seed:
//!
//! ```json
//! {"N": 100, "K": 5, "d": 5, "T": 5000, "algorithms": ["UCB_MNL", "DBL_MNL"], "seed": 7}
//! ```
//!
//! Parsing materializes every default into an [`ExperimentSpec`], which is
//! what the manifest records; a manifest or a serialized spec is itself a
//! valid config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::assortment::count_assortments;
use crate::error::{MnlError, Result};
use crate::estimation::{ConfidenceConfig, MleOptions};
use crate::policies::{default_sampling_scale, Algorithm, PolicyConfig, SUP_FAMILY_LIMIT};
use crate::simulator::{
    mean_std, run_replications, ContextDistribution, EnvironmentConfig, RegretTrace, RevenueMode, RunSummary, Seeds,
};

pub const TRACE_COLUMNS: [&str; 8] =
    ["replication", "algorithm", "t", "episode_or_level", "inst_regret", "cum_regret", "cum_wall_ns", "flags"];
pub const SUMMARY_COLUMNS: [&str; 6] =
    ["algorithm", "T", "replications", "mean_final_regret", "std_final_regret", "mean_runtime_s"];

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "MNL_BANDIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceGranularity {
    #[serde(rename = "EVERY_ROUND")]
    EveryRound,
    /// Keeps rounds with `t % n == 0` plus the final round.
    #[serde(rename = "EVERY_NTH")]
    EveryNth(usize),
}

impl TraceGranularity {
    pub fn from_every(n: usize) -> Result<Self> {
        match n {
            0 => Err(MnlError::Config("trace_every must be at least 1".into())),
            1 => Ok(Self::EveryRound),
            n => Ok(Self::EveryNth(n)),
        }
    }

    pub fn keeps(self, t: usize, horizon: usize) -> bool {
        match self {
            Self::EveryRound => true,
            Self::EveryNth(n) => t.is_multiple_of(n) || t == horizon,
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub environment: EnvironmentConfig,
    pub policies: Vec<PolicyConfig>,
    pub replications: usize,
    pub output_dir: PathBuf,
    pub trace: TraceGranularity,
    /// Write cumulative wall-clock time into traces. Off by default so that
    /// trace files are reproducible byte for byte.
    pub record_wall_clock: bool,
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let env = &self.environment;
        env.validate()?;
        if self.policies.is_empty() {
            return Err(MnlError::Config("at least one algorithm is required".into()));
        }
        if self.replications == 0 {
            return Err(MnlError::Config("replications must be at least 1".into()));
        }
        if let TraceGranularity::EveryNth(0) = self.trace {
            return Err(MnlError::Config("trace granularity must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(MnlError::Config("threads must be at least 1".into()));
        }
        let mut seen = Vec::new();
        for p in &self.policies {
            if seen.contains(&p.algorithm) {
                return Err(MnlError::Config(format!("algorithm {} listed twice", p.algorithm)));
            }
            seen.push(p.algorithm);
            if p.horizon != env.horizon || p.capacity != env.capacity {
                return Err(MnlError::Config(format!(
                    "{}: horizon and capacity must match the environment",
                    p.algorithm
                )));
            }
            p.validate(env.n_items, env.d)?;
            if p.algorithm == Algorithm::SupCbMnl {
                let count = count_assortments(env.n_items, env.capacity);
                if count > SUP_FAMILY_LIMIT {
                    return Err(MnlError::TooLarge { count, limit: SUP_FAMILY_LIMIT });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfidence {
    kappa: Option<f64>,
    sigma0: Option<f64>,
    delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    algorithm: Algorithm,
    t0: Option<usize>,
    radius_scale: Option<f64>,
    sampling_scale: Option<f64>,
    rng_stream: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawAlgorithm {
    Tag(String),
    Detailed(RawPolicy),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    theta_star: Option<u64>,
    context: Option<u64>,
    choice: Option<u64>,
    policy: Option<u64>,
}

/// The short config form.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "N")]
    n_items: usize,
    #[serde(rename = "K")]
    capacity: usize,
    d: usize,
    #[serde(rename = "T")]
    horizon: usize,
    algorithms: Vec<RawAlgorithm>,
    seed: u64,
    replications: Option<usize>,
    context_dist: Option<ContextDistribution>,
    revenue_mode: Option<RevenueMode>,
    normalize_features: Option<bool>,
    seeds: Option<RawSeeds>,
    confidence: Option<RawConfidence>,
    t0: Option<usize>,
    output_dir: Option<PathBuf>,
    trace_every: Option<usize>,
    record_wall_clock: Option<bool>,
    threads: Option<usize>,
}

pub const DEFAULT_REPLICATIONS: usize = 20;
pub const DEFAULT_KAPPA: f64 = 0.25;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_OUTPUT_DIR: &str = "results";

impl RawConfig {
    fn resolve(self) -> Result<ExperimentSpec> {
        let seeds = match self.seeds {
            None => Seeds::uniform(self.seed),
            Some(s) => Seeds {
                theta_star: s.theta_star.unwrap_or(self.seed),
                context: s.context.unwrap_or(self.seed),
                choice: s.choice.unwrap_or(self.seed),
                policy: s.policy.unwrap_or(self.seed),
            },
        };
        let environment = EnvironmentConfig {
            n_items: self.n_items,
            capacity: self.capacity,
            d: self.d,
            horizon: self.horizon,
            context_dist: self.context_dist.unwrap_or(ContextDistribution::Gaussian),
            revenue_mode: self.revenue_mode.unwrap_or(RevenueMode::Uniform),
            seeds,
            normalize_features: self.normalize_features.unwrap_or(true),
        };
        environment.validate()?;
        let raw_conf = self.confidence.unwrap_or(RawConfidence { kappa: None, sigma0: None, delta: None });
        let confidence = ConfidenceConfig::new(
            raw_conf.kappa.unwrap_or(DEFAULT_KAPPA),
            raw_conf.sigma0.unwrap_or_else(|| environment.sigma0()),
            raw_conf.delta.unwrap_or(DEFAULT_DELTA),
        )?;

        let mut policies = Vec::with_capacity(self.algorithms.len());
        for entry in self.algorithms {
            let raw = match entry {
                RawAlgorithm::Tag(tag) => RawPolicy {
                    algorithm: tag.parse()?,
                    t0: None,
                    radius_scale: None,
                    sampling_scale: None,
                    rng_stream: None,
                },
                RawAlgorithm::Detailed(p) => p,
            };
            let t0 = raw.t0.or(self.t0);
            let mut policy = PolicyConfig::new(raw.algorithm, self.horizon, self.capacity, confidence);
            // Materialize the initialization length so the manifest is explicit.
            policy.t0 = match (t0, raw.algorithm) {
                (Some(t0), _) => Some(t0),
                (None, Algorithm::DblMnl) => None,
                (None, _) => Some(policy.resolved_t0(self.d)),
            };
            policy.radius_scale = raw.radius_scale.unwrap_or(1.0);
            policy.sampling_scale = raw.sampling_scale.unwrap_or_else(|| default_sampling_scale(confidence.kappa));
            policy.rng_stream = raw.rng_stream.unwrap_or(0);
            policy.mle = MleOptions::default();
            policies.push(policy);
        }
        let spec = ExperimentSpec {
            environment,
            policies,
            replications: self.replications.unwrap_or(DEFAULT_REPLICATIONS),
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            trace: TraceGranularity::from_every(self.trace_every.unwrap_or(1))?,
            record_wall_clock: self.record_wall_clock.unwrap_or(false),
            threads: self.threads,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses a config in any accepted form: the short form, a serialized
/// [`ExperimentSpec`], or a run manifest.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(config_error)?;
    let object = value.as_object().ok_or_else(|| MnlError::Config("config must be a JSON object".into()))?;
    let spec = if object.contains_key("spec") {
        serde_json::from_str::<Manifest>(text).map_err(config_error)?.spec
    } else if object.contains_key("environment") {
        serde_json::from_str::<ExperimentSpec>(text).map_err(config_error)?
    } else {
        serde_json::from_str::<RawConfig>(text).map_err(config_error)?.resolve()?
    };
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| MnlError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        MnlError::Config(msg) => MnlError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn config_error(e: serde_json::Error) -> MnlError {
    MnlError::Config(e.to_string())
}

/// `%.12g`-style formatting.
pub fn fmt_g12(x: f64) -> String {
    const SIG: i32 = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", (SIG - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..SIG).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (SIG - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes one algorithm's traces, decimated per `granularity`.
pub fn write_trace_csv<W: Write>(out: W, traces: &[RegretTrace], granularity: TraceGranularity) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for trace in traces {
        let horizon = trace.records.len();
        let tag = trace.algorithm.tag();
        for r in trace.records.iter().filter(|r| granularity.keeps(r.t, horizon)) {
            w.write_record([
                trace.replication.to_string(),
                tag.to_string(),
                r.t.to_string(),
                r.episode_or_level.map_or(String::new(), |v| v.to_string()),
                fmt_g12(r.inst_regret),
                fmt_g12(r.cum_regret),
                r.cum_wall_ns.map_or(String::new(), |v| v.to_string()),
                r.flags.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        w.write_record([
            s.algorithm.tag().to_string(),
            s.horizon.to_string(),
            s.replications.to_string(),
            fmt_g12(s.mean_final_regret),
            fmt_g12(s.std_final_regret),
            s.mean_runtime_s.map_or(String::new(), fmt_g12),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seeds: Seeds,
    pub final_regret: f64,
    pub runtime_s: f64,
    pub parameter_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRecord {
    pub algorithm: Algorithm,
    pub trace_file: String,
    pub replications: Vec<ReplicationRecord>,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub version: String,
    pub created_unix_s: u64,
    pub runs: Vec<AlgorithmRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<RunSummary>,
    pub manifest: Manifest,
    pub trace_files: Vec<PathBuf>,
}

pub fn trace_file_name(algorithm: Algorithm) -> String {
    format!("trace_{}.csv", algorithm.tag())
}

/// Runs every policy in `spec` and writes traces, `summary.csv` and
/// `manifest.json` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let mut summaries = Vec::new();
    let mut runs = Vec::new();
    let mut trace_files = Vec::new();
    for policy in &spec.policies {
        log::info!(
            "running {} for {} replications (T = {})",
            policy.algorithm,
            spec.replications,
            spec.environment.horizon
        );
        let (traces, summary) =
            run_replications(&spec.environment, policy, spec.replications, spec.threads, spec.record_wall_clock)?;
        let name = trace_file_name(policy.algorithm);
        let path = spec.output_dir.join(&name);
        write_trace_csv(std::io::BufWriter::new(fs::File::create(&path)?), &traces, spec.trace)?;
        log::info!(
            "{}: mean final regret {:.3} (std {:.3})",
            policy.algorithm,
            summary.mean_final_regret,
            summary.std_final_regret
        );
        runs.push(AlgorithmRecord {
            algorithm: policy.algorithm,
            trace_file: name,
            replications: traces
                .iter()
                .map(|t| ReplicationRecord {
                    replication: t.replication,
                    seeds: spec.environment.seeds.for_replication(t.replication),
                    final_regret: t.final_regret(),
                    runtime_s: t.runtime_s(),
                    parameter_updates: t.parameter_updates,
                })
                .collect(),
        });
        summaries.push(summary);
        trace_files.push(path);
    }
    write_summary_csv(fs::File::create(spec.output_dir.join("summary.csv"))?, &summaries)?;
    let manifest = Manifest {
        spec: spec.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        runs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(spec.output_dir.join("manifest.json"), json + "\n")?;
    Ok(ExperimentReport { summaries, manifest, trace_files })
}

/// Summaries from trace CSV files. Each (algorithm, replication) contributes
/// its last row; runtimes are reported only when every trace carries them.
pub fn summarize_trace_files<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<RunSummary>> {
    // replication -> (t, cum_regret, cum_wall_ns)
    type LastRows = BTreeMap<usize, (usize, f64, Option<u64>)>;
    let mut finals: BTreeMap<Algorithm, LastRows> = BTreeMap::new();
    for path in paths {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().ne(TRACE_COLUMNS) {
            return Err(MnlError::InvalidInput(format!("{} is not a trace file", path.display())));
        }
        for row in reader.records() {
            let row = row?;
            let bad = |field: &str| MnlError::InvalidInput(format!("{}: bad {field} in row {:?}", path.display(), row));
            let replication: usize = row[0].parse().map_err(|_| bad("replication"))?;
            let algorithm: Algorithm = row[1].parse()?;
            let t: usize = row[2].parse().map_err(|_| bad("t"))?;
            let cum: f64 = row[5].parse().map_err(|_| bad("cum_regret"))?;
            let wall = if row[6].is_empty() { None } else { Some(row[6].parse().map_err(|_| bad("cum_wall_ns"))?) };
            let slot = finals.entry(algorithm).or_default().entry(replication).or_insert((0, 0.0, None));
            if t >= slot.0 {
                *slot = (t, cum, wall);
            }
        }
    }
    let mut out = Vec::new();
    for (algorithm, reps) in finals {
        let values: Vec<f64> = reps.values().map(|v| v.1).collect();
        let (mean, std) = mean_std(&values);
        let horizon = reps.values().map(|v| v.0).max().unwrap_or(0);
        let walls: Option<Vec<f64>> = reps.values().map(|v| v.2.map(|ns| ns as f64 * 1e-9)).collect();
        out.push(RunSummary {
            algorithm,
            horizon,
            replications: reps.len(),
            mean_final_regret: mean,
            std_final_regret: std,
            mean_runtime_s: walls.map(|w| mean_std(&w).0),
        });
    }
    Ok(out)
}

/// Process exit code for an error.
pub fn exit_code(err: &MnlError) -> i32 {
    match err.root() {
        MnlError::Config(_) | MnlError::UnknownAlgorithm(_) => 2,
        MnlError::TooLarge { .. } => 4,
        _ => 3,
    }
}
