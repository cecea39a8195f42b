//! Synthetic environments, the round loop and replication batches.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MnlError, Result};
use crate::estimation::{min_eigenvalue, GramMatrix};
use crate::model::{expected_revenue, oracle_assortment, sample_choice, ContextSlate, MnlParameter};
use crate::policies::{policy_factory, Algorithm, Policy, PolicyConfig};
use crate::rng::{derive_seed, stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextDistribution {
    /// Standard normal vectors, optionally clipped into the unit ball.
    #[serde(rename = "GAUSSIAN")]
    Gaussian,
    /// Uniform on the unit sphere.
    #[serde(rename = "SPHERE")]
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevenueMode {
    /// Every item has revenue 1.
    #[serde(rename = "UNIFORM")]
    Uniform,
    /// Revenues drawn from `(0, 1]` per item and round.
    #[serde(rename = "RANDOM_POSITIVE")]
    RandomPositive,
}

/// Stream seeds. Each replication derives its own set from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub theta_star: u64,
    pub context: u64,
    pub choice: u64,
    pub policy: u64,
}

impl Seeds {
    pub fn uniform(seed: u64) -> Self {
        Self { theta_star: seed, context: seed, choice: seed, policy: seed }
    }

    /// Seeds of replication `r`.
    pub fn for_replication(&self, r: usize) -> Self {
        let r = r as u64;
        Self {
            theta_star: derive_seed(self.theta_star, "theta_star", r),
            context: derive_seed(self.context, "context", r),
            choice: derive_seed(self.choice, "choice", r),
            policy: derive_seed(self.policy, "policy", r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(rename = "N")]
    pub n_items: usize,
    #[serde(rename = "K")]
    pub capacity: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub context_dist: ContextDistribution,
    pub revenue_mode: RevenueMode,
    pub seeds: Seeds,
    pub normalize_features: bool,
}

impl EnvironmentConfig {
    pub fn new(n_items: usize, capacity: usize, d: usize, horizon: usize, seed: u64) -> Self {
        Self {
            n_items,
            capacity,
            d,
            horizon,
            context_dist: ContextDistribution::Gaussian,
            revenue_mode: RevenueMode::Uniform,
            seeds: Seeds::uniform(seed),
            normalize_features: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.d == 0 || self.horizon == 0 || self.capacity == 0 {
            return Err(MnlError::Config("N, K, d and T must all be positive".into()));
        }
        if self.capacity > self.n_items {
            return Err(MnlError::Config(format!("K = {} exceeds N = {}", self.capacity, self.n_items)));
        }
        Ok(())
    }

    /// Lower bound on `lambda_min(E[x x^T])` for this context distribution.
    pub fn sigma0(&self) -> f64 {
        default_sigma0(self.context_dist, self.normalize_features, self.d)
    }
}

/// `1/d` on the sphere, 1 for raw Gaussian vectors, and a Monte-Carlo
/// estimate from `10^5` draws (fixed stream) for clipped Gaussian vectors.
pub fn default_sigma0(dist: ContextDistribution, normalize: bool, d: usize) -> f64 {
    match (dist, normalize) {
        (ContextDistribution::Sphere, _) => 1.0 / d as f64,
        (ContextDistribution::Gaussian, false) => 1.0,
        (ContextDistribution::Gaussian, true) => {
            const DRAWS: usize = 100_000;
            let mut rng = stream(0, "sigma0", d as u64);
            let mut second = DMatrix::<f64>::zeros(d, d);
            for _ in 0..DRAWS {
                let x = draw_context(&mut rng, dist, true, d);
                second.syger(1.0, &x, &x, 1.0);
            }
            second /= DRAWS as f64;
            let second = (&second + second.transpose()) * 0.5;
            min_eigenvalue(&GramMatrix::from_matrix(second).expect("symmetric by construction"))
        }
    }
}

fn draw_context(rng: &mut StreamRng, dist: ContextDistribution, normalize: bool, d: usize) -> DVector<f64> {
    let x = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    match dist {
        ContextDistribution::Sphere => {
            let norm = x.norm();
            x / norm
        }
        ContextDistribution::Gaussian if normalize => {
            let norm = x.norm();
            x / norm.max(1.0)
        }
        ContextDistribution::Gaussian => x,
    }
}

/// One replication's environment: the true parameter and the context and
/// choice streams.
pub struct Environment {
    config: EnvironmentConfig,
    theta_star: MnlParameter,
    context_rng: StreamRng,
    choice_rng: StreamRng,
}

impl Environment {
    /// Builds the environment from the seeds in `config` as given.
    pub fn new(config: EnvironmentConfig) -> Result<Self> {
        config.validate()?;
        let mut theta_rng = StreamRng::seed_from_u64(config.seeds.theta_star);
        let theta: Vec<f64> = (0..config.d).map(|_| theta_rng.random::<f64>()).collect();
        Ok(Self {
            theta_star: MnlParameter::from_slice(&theta)?,
            context_rng: StreamRng::seed_from_u64(config.seeds.context),
            choice_rng: StreamRng::seed_from_u64(config.seeds.choice),
            config,
        })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn theta_star(&self) -> &MnlParameter {
        &self.theta_star
    }

    /// Draws the slate of round `t`.
    pub fn next_slate(&mut self, t: usize) -> Result<ContextSlate> {
        let c = &self.config;
        let features: Vec<DVector<f64>> = (0..c.n_items)
            .map(|_| draw_context(&mut self.context_rng, c.context_dist, c.normalize_features, c.d))
            .collect();
        let revenues = match c.revenue_mode {
            RevenueMode::Uniform => vec![1.0; c.n_items],
            RevenueMode::RandomPositive => (0..c.n_items).map(|_| 1.0 - self.context_rng.random::<f64>()).collect(),
        };
        if c.context_dist == ContextDistribution::Gaussian && !c.normalize_features {
            ContextSlate::unbounded(t, features, revenues)
        } else {
            ContextSlate::new(t, features, revenues)
        }
    }

    /// Uniform draw for the choice of the current round.
    pub fn next_choice_draw(&mut self) -> f64 {
        self.choice_rng.random::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub episode_or_level: Option<usize>,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub cum_wall_ns: Option<u64>,
    /// `;`-separated diagnostic flags.
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub algorithm: Algorithm,
    pub replication: usize,
    pub records: Vec<TraceRecord>,
    /// Time spent inside `select` and `update`, in nanoseconds.
    pub runtime_ns: u64,
    pub parameter_updates: usize,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn runtime_s(&self) -> f64 {
        self.runtime_ns as f64 * 1e-9
    }
}

/// Runs `policy` for the environment's horizon. Regret is measured with
/// expected revenue under the true parameter; only `select` and `update`
/// are timed.
pub fn run_one(env: &mut Environment, policy: &mut dyn Policy, record_wall_clock: bool) -> Result<RegretTrace> {
    let horizon = env.config.horizon;
    let capacity = env.config.capacity;
    let mut records = Vec::with_capacity(horizon);
    let mut cum_regret = 0.0;
    let mut wall_ns: u64 = 0;
    let at = |round: usize| move |e: MnlError| MnlError::AtRound { round, source: Box::new(e) };

    for t in 1..=horizon {
        let slate = env.next_slate(t).map_err(at(t))?;

        let started = Instant::now();
        let offer = policy.select(&slate).map_err(at(t))?;
        wall_ns += started.elapsed().as_nanos() as u64;

        let best = oracle_assortment(&slate, &env.theta_star, capacity).map_err(at(t))?;
        let inst_regret = expected_revenue(&slate, &best, &env.theta_star).map_err(at(t))?
            - expected_revenue(&slate, &offer, &env.theta_star).map_err(at(t))?;
        let u = env.next_choice_draw();
        let outcome = sample_choice(&slate, &offer, &env.theta_star, u).map_err(at(t))?;

        let started = Instant::now();
        policy.update(&slate, &offer, &outcome).map_err(at(t))?;
        wall_ns += started.elapsed().as_nanos() as u64;

        let info = policy.round_info();
        cum_regret += inst_regret;
        records.push(TraceRecord {
            t,
            episode_or_level: info.episode_or_level,
            inst_regret,
            cum_regret,
            cum_wall_ns: record_wall_clock.then_some(wall_ns),
            flags: info.flags.join(";"),
        });
    }
    Ok(RegretTrace {
        algorithm: policy.algorithm(),
        replication: 0,
        records,
        runtime_ns: wall_ns,
        parameter_updates: policy.parameter_updates(),
    })
}

/// Runs replication `r`: environment seeds and the policy stream derive from
/// `(base seeds, r)`, so every algorithm sees the same environments.
pub fn run_replication(
    env_config: &EnvironmentConfig,
    policy_config: &PolicyConfig,
    r: usize,
    record_wall_clock: bool,
) -> Result<RegretTrace> {
    let seeds = env_config.seeds.for_replication(r);
    let wrap = |e: MnlError| MnlError::Replication { replication: r, seed: seeds.theta_star, source: Box::new(e) };
    let mut config = env_config.clone();
    config.seeds = seeds;
    let mut env = Environment::new(config).map_err(wrap)?;
    let rng = stream(seeds.policy, policy_config.algorithm.tag(), policy_config.rng_stream);
    let mut policy = policy_factory(policy_config, env_config.n_items, env_config.d, rng).map_err(wrap)?;
    let mut trace = run_one(&mut env, policy.as_mut(), record_wall_clock).map_err(wrap)?;
    trace.replication = r;
    Ok(trace)
}

/// Runs `replications` independent replications, optionally on a dedicated
/// thread pool. Traces come back ordered by replication index.
pub fn run_replications(
    env_config: &EnvironmentConfig,
    policy_config: &PolicyConfig,
    replications: usize,
    threads: Option<usize>,
    record_wall_clock: bool,
) -> Result<(Vec<RegretTrace>, RunSummary)> {
    if replications == 0 {
        return Err(MnlError::Config("at least one replication is required".into()));
    }
    env_config.validate()?;
    policy_config.validate(env_config.n_items, env_config.d)?;
    let run = |r: usize| run_replication(env_config, policy_config, r, record_wall_clock);
    let traces: Result<Vec<RegretTrace>> = match threads {
        Some(n) if n > 1 => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MnlError::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| (0..replications).into_par_iter().map(run).collect())
        }
        _ => (0..replications).map(run).collect(),
    };
    let traces = traces?;
    let summary = RunSummary::from_traces(&traces)?;
    Ok((traces, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub replications: usize,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    /// `None` when the traces carry no timing.
    pub mean_runtime_s: Option<f64>,
}

impl RunSummary {
    /// Aggregates traces of a single algorithm and horizon.
    pub fn from_traces(traces: &[RegretTrace]) -> Result<Self> {
        let first = traces.first().ok_or_else(|| MnlError::InvalidInput("no traces to summarize".into()))?;
        let horizon = first.records.len();
        if traces.iter().any(|t| t.algorithm != first.algorithm || t.records.len() != horizon) {
            return Err(MnlError::InvalidInput("traces mix algorithms or horizons".into()));
        }
        let finals: Vec<f64> = traces.iter().map(RegretTrace::final_regret).collect();
        let (mean, std) = mean_std(&finals);
        let runtimes: Vec<f64> = traces.iter().map(RegretTrace::runtime_s).collect();
        Ok(Self {
            algorithm: first.algorithm,
            horizon,
            replications: traces.len(),
            mean_final_regret: mean,
            std_final_regret: std,
            mean_runtime_s: Some(mean_std(&runtimes).0),
        })
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
