use nalgebra::DVector;

use crate::assortment::{argmax_assortment, optimistic_utilities_factored};
use crate::error::{MnlError, Result};
use crate::estimation::{
    mle_fit, online_newton_step_factored, radius_online, round_gradient, GramFactor, GramMatrix, SampleLog,
};
use crate::model::{Assortment, ChoiceOutcome, ContextSlate, MnlParameter};
use crate::rng::StreamRng;

use super::{random_offer, Algorithm, Policy, PolicyConfig, RoundInfo, StepGuard};

/// UCB-MNL with the online Newton update.
///
/// After initialization the policy keeps only a `d x d` Gram matrix (with
/// learning-phase terms weighted by `kappa / 2`) and the current estimate;
/// each round costs `O(K d^2 + d^3)` regardless of `t`. The initialization
/// samples are fitted once by maximum likelihood at `T0` and then dropped.
pub struct UcbMnlOns {
    config: PolicyConfig,
    n_items: usize,
    dim: usize,
    t0: usize,
    rng: StreamRng,
    guard: StepGuard,
    round: usize,
    gram: GramMatrix,
    init_log: Option<SampleLog>,
    theta_hat: MnlParameter,
    factor: Option<GramFactor>,
    last_gradient: DVector<f64>,
    updates: usize,
    info: RoundInfo,
}

impl UcbMnlOns {
    pub fn new(config: PolicyConfig, n_items: usize, dim: usize, rng: StreamRng) -> Result<Self> {
        config.validate(n_items, dim)?;
        let t0 = config.resolved_t0(dim);
        Ok(Self {
            config,
            n_items,
            dim,
            t0,
            rng,
            guard: StepGuard::default(),
            round: 0,
            gram: GramMatrix::zeros(dim),
            init_log: Some(SampleLog::new(dim)),
            theta_hat: MnlParameter::zeros(dim),
            factor: None,
            last_gradient: DVector::zeros(dim),
            updates: 0,
            info: RoundInfo::default(),
        })
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// Most recent per-round loss gradient.
    pub fn last_gradient(&self) -> &DVector<f64> {
        &self.last_gradient
    }

    /// Number of past observations held in memory.
    pub fn retained_samples(&self) -> usize {
        self.init_log.as_ref().map_or(0, SampleLog::len)
    }

    /// Overrides the current estimate (used to start from a known point).
    pub fn set_estimate(&mut self, theta: MnlParameter) -> Result<()> {
        if theta.dim() != self.dim {
            return Err(MnlError::DimensionMismatch { expected: self.dim, got: theta.dim() });
        }
        self.theta_hat = theta;
        Ok(())
    }

    fn radius(&self) -> Result<f64> {
        let k = self.config.capacity;
        // The radius is defined for t K >= 4.
        let t = self.round.max(4usize.div_ceil(k));
        Ok(self.config.radius_scale * radius_online(t, self.dim, k, self.config.confidence.kappa, self.t0)?)
    }
}

impl Policy for UcbMnlOns {
    fn algorithm(&self) -> Algorithm {
        Algorithm::UcbMnlOns
    }

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        if slate.dim() != self.dim || slate.n_items() != self.n_items {
            return Err(MnlError::InvalidInput("slate shape does not match the policy".into()));
        }
        self.round += 1;
        self.info = RoundInfo::default();
        let offer = if let (true, Some(factor)) = (self.round > self.t0, self.factor.as_ref()) {
            let alpha = self.radius()?;
            let z = optimistic_utilities_factored(slate, &self.theta_hat, factor, alpha)?;
            argmax_assortment(z.z(), slate.revenues(), self.config.capacity)?
        } else {
            self.info.flags.push("init");
            random_offer(&mut self.rng, self.n_items, self.config.capacity)?
        };
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)?;
        if self.round <= self.t0 {
            self.gram.add_assortment(slate, assortment, 1.0);
            let log = self.init_log.as_mut().expect("initialization log present until T0");
            log.push(slate, assortment, outcome)?;
            if self.round == self.t0 {
                let report = mle_fit(log, &self.theta_hat, &self.config.mle)?;
                self.updates += 1;
                if report.converged {
                    self.theta_hat = report.theta_hat;
                } else {
                    self.info.flags.push("mle_not_converged");
                }
                self.init_log = None;
                self.factor = Some(self.gram.factor()?);
            }
            return Ok(());
        }
        let gradient = round_gradient(slate, assortment, outcome, &self.theta_hat)?;
        self.gram.add_assortment(slate, assortment, self.config.confidence.kappa / 2.0);
        let factor = self.gram.factor()?;
        self.theta_hat = online_newton_step_factored(&self.theta_hat, &factor, &gradient);
        self.factor = Some(factor);
        self.last_gradient = gradient;
        self.updates += 1;
        Ok(())
    }

    fn round_info(&self) -> RoundInfo {
        self.info.clone()
    }

    fn parameter_updates(&self) -> usize {
        self.updates
    }

    fn estimate(&self) -> Option<&MnlParameter> {
        self.factor.as_ref().map(|_| &self.theta_hat)
    }
}
