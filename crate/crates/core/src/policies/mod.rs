//! Sequential assortment policies.
//!
//! Every policy alternates strictly between [`Policy::select`] (offer an
//! assortment for the round's slate) and [`Policy::update`] (observe the
//! choice). Calling them out of order is a [`MnlError::Protocol`] error.

mod dbl;
mod ons;
mod sup;
mod ucb;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MnlError, Result};
use crate::estimation::{ConfidenceConfig, MleOptions};
use crate::model::{Assortment, ChoiceOutcome, ContextSlate, MnlParameter};
use crate::rng::{random_subset, StreamRng};

pub use dbl::{DblMnl, EpisodeSchedule};
pub use ons::UcbMnlOns;
pub use sup::{SupCbMnl, SUP_FAMILY_LIMIT};
pub use ucb::{Phase, UcbMnl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "UCB_MNL")]
    UcbMnl,
    #[serde(rename = "UCB_MNL_ONS")]
    UcbMnlOns,
    #[serde(rename = "DBL_MNL")]
    DblMnl,
    #[serde(rename = "SUPCB_MNL")]
    SupCbMnl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::UcbMnl, Algorithm::UcbMnlOns, Algorithm::DblMnl, Algorithm::SupCbMnl];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::UcbMnl => "UCB_MNL",
            Algorithm::UcbMnlOns => "UCB_MNL_ONS",
            Algorithm::DblMnl => "DBL_MNL",
            Algorithm::SupCbMnl => "SUPCB_MNL",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = MnlError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL.into_iter().find(|a| a.tag() == s).ok_or_else(|| MnlError::UnknownAlgorithm(s.to_string()))
    }
}

/// Everything needed to build one policy instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub algorithm: Algorithm,
    pub horizon: usize,
    pub capacity: usize,
    pub confidence: ConfidenceConfig,
    /// Length of the random initialization phase; `None` uses
    /// [`default_t0`].
    pub t0: Option<usize>,
    pub rng_stream: u64,
    /// Multiplier on the confidence radius. 1 is the theoretical radius and
    /// 0 turns the policy greedy.
    pub radius_scale: f64,
    /// Multiplier on DBL-MNL's random-sampling budget `q_k`.
    pub sampling_scale: f64,
    pub mle: MleOptions,
}

/// Default multiplier on DBL-MNL's sampling budget. The theoretical constant
/// `288 / (K sigma0 kappa^4)` exceeds every episode length at practical
/// scales, which would make the policy explore at random forever; this
/// rescales the leading constant to `1 / (K sigma0)`.
pub fn default_sampling_scale(kappa: f64) -> f64 {
    kappa.powi(4) / 288.0
}

impl PolicyConfig {
    pub fn new(algorithm: Algorithm, horizon: usize, capacity: usize, confidence: ConfidenceConfig) -> Self {
        Self {
            algorithm,
            horizon,
            capacity,
            confidence,
            t0: None,
            rng_stream: 0,
            radius_scale: 1.0,
            sampling_scale: default_sampling_scale(confidence.kappa),
            mle: MleOptions::default(),
        }
    }

    pub fn validate(&self, n_items: usize, dim: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(MnlError::Config("horizon T must be at least 1".into()));
        }
        if self.capacity == 0 || self.capacity > n_items {
            return Err(MnlError::Config(format!("capacity K = {} must be in [1, N = {n_items}]", self.capacity)));
        }
        if dim == 0 {
            return Err(MnlError::Config("dimension d must be at least 1".into()));
        }
        self.confidence.validate()?;
        if let Some(t0) = self.t0 {
            if t0 > self.horizon {
                return Err(MnlError::Config(format!("T0 = {t0} exceeds horizon {}", self.horizon)));
            }
            if t0 == 0 && self.algorithm != Algorithm::DblMnl {
                return Err(MnlError::Config(format!("{} needs T0 >= 1 initialization rounds", self.algorithm)));
            }
        }
        if !(self.radius_scale >= 0.0 && self.radius_scale.is_finite()) {
            return Err(MnlError::Config("radius_scale must be finite and nonnegative".into()));
        }
        if !(self.sampling_scale >= 0.0 && self.sampling_scale.is_finite()) {
            return Err(MnlError::Config("sampling_scale must be finite and nonnegative".into()));
        }
        if self.algorithm == Algorithm::DblMnl && self.capacity as f64 > 18.0 / self.confidence.kappa.powi(4) {
            log::warn!("K = {} exceeds 18 / kappa^4; DBL-MNL guarantees assume otherwise", self.capacity);
        }
        Ok(())
    }

    /// Initialization length actually used.
    pub fn resolved_t0(&self, dim: usize) -> usize {
        self.t0.unwrap_or_else(|| default_t0(self.horizon, dim, self.capacity, self.confidence.sigma0))
    }
}

/// `ceil(max{4 (d + log T) / (sigma0^2 K), 2d / K})` capped at `T / 10`, but
/// never below `ceil(2d / K)` nor above `T`.
pub fn default_t0(horizon: usize, dim: usize, capacity: usize, sigma0: f64) -> usize {
    let (t, d, k) = (horizon as f64, dim as f64, capacity as f64);
    let spanning = (2.0 * d / k).ceil();
    let raw = (4.0 * (d + t.ln()) / (sigma0 * sigma0 * k)).max(spanning).ceil();
    let capped = raw.min((t / 10.0).floor()).max(spanning);
    (capped as usize).clamp(1, horizon.max(1))
}

/// Diagnostics about the most recent selection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundInfo {
    /// DBL-MNL episode or supCB-MNL level, when meaningful.
    pub episode_or_level: Option<usize>,
    pub flags: Vec<&'static str>,
}

pub trait Policy: Send {
    fn algorithm(&self) -> Algorithm;

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment>;

    fn update(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()>;

    /// Diagnostics for the last `select`/`update` pair.
    fn round_info(&self) -> RoundInfo {
        RoundInfo::default()
    }

    /// Number of parameter re-estimations performed so far.
    fn parameter_updates(&self) -> usize;

    /// Current parameter estimate, if one exists yet.
    fn estimate(&self) -> Option<&MnlParameter>;
}

/// Tracks the select/update alternation.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepGuard {
    pending: Option<Assortment>,
}

impl StepGuard {
    pub(crate) fn begin(&mut self) -> Result<()> {
        if self.pending.is_some() {
            return Err(MnlError::Protocol("select called twice without update".into()));
        }
        Ok(())
    }

    pub(crate) fn offered(&mut self, assortment: &Assortment) {
        self.pending = Some(assortment.clone());
    }

    pub(crate) fn finish(&mut self, assortment: &Assortment) -> Result<()> {
        match self.pending.take() {
            Some(offered) if &offered == assortment => Ok(()),
            Some(offered) => {
                self.pending = Some(offered);
                Err(MnlError::Protocol("update received a different assortment than was offered".into()))
            }
            None => Err(MnlError::Protocol("update called without a preceding select".into())),
        }
    }
}

pub(crate) fn random_offer(rng: &mut StreamRng, n_items: usize, capacity: usize) -> Result<Assortment> {
    Assortment::new(random_subset(rng, n_items, capacity), capacity, n_items)
}

/// Builds the policy described by `config` for an environment with
/// `n_items` items of dimension `dim`.
pub fn policy_factory(config: &PolicyConfig, n_items: usize, dim: usize, rng: StreamRng) -> Result<Box<dyn Policy>> {
    config.validate(n_items, dim)?;
    Ok(match config.algorithm {
        Algorithm::UcbMnl => Box::new(UcbMnl::new(config.clone(), n_items, dim, rng)?),
        Algorithm::UcbMnlOns => Box::new(UcbMnlOns::new(config.clone(), n_items, dim, rng)?),
        Algorithm::DblMnl => Box::new(DblMnl::new(config.clone(), n_items, dim, rng)?),
        Algorithm::SupCbMnl => Box::new(SupCbMnl::new(config.clone(), n_items, dim, rng)?),
    })
}

/// Offers a uniformly random size-`K` assortment every round.
pub struct UniformRandomPolicy {
    n_items: usize,
    capacity: usize,
    rng: StreamRng,
    guard: StepGuard,
}

impl UniformRandomPolicy {
    pub fn new(n_items: usize, capacity: usize, rng: StreamRng) -> Self {
        Self { n_items, capacity, rng, guard: StepGuard::default() }
    }
}

impl Policy for UniformRandomPolicy {
    fn algorithm(&self) -> Algorithm {
        Algorithm::UcbMnl
    }

    fn select(&mut self, _slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        let offer = random_offer(&mut self.rng, self.n_items, self.capacity)?;
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, _slate: &ContextSlate, assortment: &Assortment, _outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)
    }

    fn round_info(&self) -> RoundInfo {
        RoundInfo { episode_or_level: None, flags: vec!["random"] }
    }

    fn parameter_updates(&self) -> usize {
        0
    }

    fn estimate(&self) -> Option<&MnlParameter> {
        None
    }
}

/// Offers the revenue-optimal assortment under a known parameter.
pub struct OraclePolicy {
    theta_star: MnlParameter,
    capacity: usize,
    guard: StepGuard,
}

impl OraclePolicy {
    pub fn new(theta_star: MnlParameter, capacity: usize) -> Self {
        Self { theta_star, capacity, guard: StepGuard::default() }
    }
}

impl Policy for OraclePolicy {
    fn algorithm(&self) -> Algorithm {
        Algorithm::UcbMnl
    }

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        let offer = crate::model::oracle_assortment(slate, &self.theta_star, self.capacity)?;
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, _slate: &ContextSlate, assortment: &Assortment, _outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)
    }

    fn parameter_updates(&self) -> usize {
        0
    }

    fn estimate(&self) -> Option<&MnlParameter> {
        Some(&self.theta_star)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_tags_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.tag().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.tag()));
        }
        assert!(matches!("TS_MNL".parse::<Algorithm>(), Err(MnlError::UnknownAlgorithm(_))));
    }

    #[test]
    fn default_t0_formula() {
        // 4 (5 + ln 5000) / (0.04 * 5) = 270.3...
        assert_eq!(default_t0(5000, 5, 5, 0.2), 271);
        // Capped at T / 10.
        assert_eq!(default_t0(1000, 5, 5, 0.2), 100);
        // Never below 2d / K.
        assert_eq!(default_t0(20, 5, 1, 0.9), 10);
        assert!(default_t0(3, 5, 1, 0.9) <= 3);
    }

    #[test]
    fn config_validation() {
        let conf = ConfidenceConfig::new(0.25, 0.2, 0.05).unwrap();
        let mut c = PolicyConfig::new(Algorithm::UcbMnl, 100, 2, conf);
        assert!(c.validate(10, 3).is_ok());
        c.t0 = Some(0);
        assert!(matches!(c.validate(10, 3), Err(MnlError::Config(_))));
        c.t0 = Some(101);
        assert!(c.validate(10, 3).is_err());
        c.t0 = None;
        c.capacity = 11;
        assert!(c.validate(10, 3).is_err());
        c.capacity = 2;
        c.horizon = 0;
        assert!(c.validate(10, 3).is_err());
    }

    #[test]
    fn guard_enforces_alternation() {
        let mut g = StepGuard::default();
        let a = Assortment::new(vec![0], 1, 2).unwrap();
        let b = Assortment::new(vec![1], 1, 2).unwrap();
        assert!(g.finish(&a).is_err());
        g.begin().unwrap();
        g.offered(&a);
        assert!(g.begin().is_err());
        assert!(g.finish(&b).is_err());
        g.finish(&a).unwrap();
        g.begin().unwrap();
    }
}
