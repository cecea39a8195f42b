use crate::assortment::{argmax_assortment, optimistic_utilities_factored};
use crate::error::{MnlError, Result};
use crate::estimation::{mle_fit, radius_ucb, GramFactor, GramMatrix, SampleLog};
use crate::model::{Assortment, ChoiceOutcome, ContextSlate, MnlParameter};
use crate::rng::StreamRng;

use super::{random_offer, Algorithm, Policy, PolicyConfig, RoundInfo, StepGuard};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Learn,
}

/// UCB-MNL: random size-`K` offers for `T0` rounds, then optimistic
/// assortments from the full-history MLE refit after every round.
pub struct UcbMnl {
    config: PolicyConfig,
    n_items: usize,
    dim: usize,
    t0: usize,
    rng: StreamRng,
    guard: StepGuard,
    round: usize,
    log: SampleLog,
    theta_hat: MnlParameter,
    factor: Option<GramFactor>,
    fits: usize,
    info: RoundInfo,
    width_sq_sum: f64,
    init_min_eigenvalue: Option<f64>,
}

impl UcbMnl {
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
            log: SampleLog::new(dim),
            theta_hat: MnlParameter::zeros(dim),
            factor: None,
            fits: 0,
            info: RoundInfo::default(),
            width_sq_sum: 0.0,
            init_min_eigenvalue: None,
        })
    }

    pub fn phase(&self) -> Phase {
        if self.round < self.t0 || self.factor.is_none() {
            Phase::Init
        } else {
            Phase::Learn
        }
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn log(&self) -> &SampleLog {
        &self.log
    }

    pub fn gram(&self) -> &GramMatrix {
        self.log.gram()
    }

    /// Sum over learning rounds of `max_{i in S_t} |x_ti|^2_{V_{t-1}^{-1}}`.
    pub fn width_sq_sum(&self) -> f64 {
        self.width_sq_sum
    }

    /// `lambda_min(V_{T0})`, once initialization has finished.
    pub fn init_min_eigenvalue(&self) -> Option<f64> {
        self.init_min_eigenvalue
    }

    fn refit(&mut self) -> Result<()> {
        let report = mle_fit(&self.log, &self.theta_hat, &self.config.mle)?;
        self.fits += 1;
        if report.converged {
            self.theta_hat = report.theta_hat;
        } else {
            log::debug!("UCB-MNL round {}: MLE did not converge, keeping previous estimate", self.round);
            self.info.flags.push("mle_not_converged");
        }
        self.factor = Some(self.log.gram().factor()?);
        Ok(())
    }
}

impl Policy for UcbMnl {
    fn algorithm(&self) -> Algorithm {
        Algorithm::UcbMnl
    }

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        if slate.dim() != self.dim || slate.n_items() != self.n_items {
            return Err(MnlError::InvalidInput("slate shape does not match the policy".into()));
        }
        self.round += 1;
        self.info = RoundInfo::default();
        let offer = match &self.factor {
            Some(factor) if self.round > self.t0 => {
                let alpha = self.config.radius_scale * radius_ucb(self.round, self.dim, self.config.confidence.kappa)?;
                let z = optimistic_utilities_factored(slate, &self.theta_hat, factor, alpha)?;
                let offer = argmax_assortment(z.z(), slate.revenues(), self.config.capacity)?;
                let widest =
                    offer.items().iter().map(|&i| factor.weighted_norm_sq(slate.feature(i))).fold(0.0, f64::max);
                self.width_sq_sum += widest;
                offer
            }
            _ => {
                self.info.flags.push("init");
                random_offer(&mut self.rng, self.n_items, self.config.capacity)?
            }
        };
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)?;
        self.log.push(slate, assortment, outcome)?;
        if self.round == self.t0 {
            self.init_min_eigenvalue = Some(self.log.gram().min_eigenvalue());
        }
        if self.round >= self.t0 {
            self.refit()?;
        }
        Ok(())
    }

    fn round_info(&self) -> RoundInfo {
        self.info.clone()
    }

    fn parameter_updates(&self) -> usize {
        self.fits
    }

    fn estimate(&self) -> Option<&MnlParameter> {
        self.factor.as_ref().map(|_| &self.theta_hat)
    }
}
