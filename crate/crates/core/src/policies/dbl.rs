use crate::assortment::{argmax_assortment, optimistic_utilities_factored};
use crate::error::{MnlError, Result};
use crate::estimation::{dbl_sampling_budget, mle_fit, radius_dbl, GramFactor, GramMatrix, SampleLog};
use crate::model::{Assortment, ChoiceOutcome, ContextSlate, MnlParameter};
use crate::rng::StreamRng;

use super::{random_offer, Algorithm, Policy, PolicyConfig, RoundInfo, StepGuard};

/// Doubling episodes: `tau_0 = 0`, `tau_k = d 2^(k-1)` for `k >= 1`.
/// Episode 1 is the `d` initialization rounds and episode `k >= 2` spans
/// rounds `tau_{k-1} + 1 ..= tau_k`, so it lasts `tau_k / 2` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSchedule {
    dim: usize,
    episode: usize,
    sampling_budget: f64,
    radius: f64,
}

impl EpisodeSchedule {
    fn new(dim: usize) -> Self {
        Self { dim, episode: 1, sampling_budget: 0.0, radius: 0.0 }
    }

    /// Last round of episode `k`.
    pub fn boundary(dim: usize, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            dim << (k - 1)
        }
    }

    /// Episode containing round `t >= 1`.
    pub fn episode_of(dim: usize, t: usize) -> usize {
        let mut k = 1;
        while Self::boundary(dim, k) < t {
            k += 1;
        }
        k
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn start(&self) -> usize {
        Self::boundary(self.dim, self.episode - 1)
    }

    pub fn end(&self) -> usize {
        Self::boundary(self.dim, self.episode)
    }

    /// `q_k` of the current episode.
    pub fn sampling_budget(&self) -> f64 {
        self.sampling_budget
    }

    /// `alpha_k` of the current episode.
    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// DBL-MNL: the estimate and confidence geometry are frozen within doubling
/// episodes and refit from the previous episode's samples only.
pub struct DblMnl {
    config: PolicyConfig,
    n_items: usize,
    dim: usize,
    rng: StreamRng,
    guard: StepGuard,
    round: usize,
    schedule: EpisodeSchedule,
    theta_hat: MnlParameter,
    /// Gram matrix of the previous episode.
    frozen_gram: GramMatrix,
    frozen_factor: Option<GramFactor>,
    /// Samples (and live Gram) of the current episode.
    episode_log: SampleLog,
    fallback: bool,
    fits: usize,
    info: RoundInfo,
}

impl DblMnl {
    pub fn new(config: PolicyConfig, n_items: usize, dim: usize, rng: StreamRng) -> Result<Self> {
        config.validate(n_items, dim)?;
        Ok(Self {
            config,
            n_items,
            dim,
            rng,
            guard: StepGuard::default(),
            round: 0,
            schedule: EpisodeSchedule::new(dim),
            theta_hat: MnlParameter::zeros(dim),
            frozen_gram: GramMatrix::zeros(dim),
            frozen_factor: None,
            episode_log: SampleLog::new(dim),
            fallback: false,
            fits: 0,
            info: RoundInfo::default(),
        })
    }

    pub fn schedule(&self) -> &EpisodeSchedule {
        &self.schedule
    }

    /// `W_{k-1}`: the Gram matrix frozen at the start of the current episode.
    pub fn frozen_gram(&self) -> &GramMatrix {
        &self.frozen_gram
    }

    /// Live Gram matrix of the current episode.
    pub fn live_gram(&self) -> &GramMatrix {
        self.episode_log.gram()
    }

    /// Whether the current episode offers at random because the previous
    /// episode's design was singular.
    pub fn in_fallback(&self) -> bool {
        self.fallback
    }

    /// Starts the next episode: refit on the previous episode's samples,
    /// freeze its Gram matrix and reset the live one.
    fn start_episode(&mut self) -> Result<()> {
        let next = self.schedule.episode + 1;
        let end = EpisodeSchedule::boundary(self.dim, next);
        let kappa = self.config.confidence.kappa;
        self.schedule.episode = next;
        self.schedule.radius = self.config.radius_scale * radius_dbl(end, self.n_items, kappa)?;
        self.schedule.sampling_budget = self.config.sampling_scale
            * dbl_sampling_budget(
                end,
                self.n_items,
                self.dim,
                self.config.capacity,
                self.config.confidence.sigma0,
                kappa,
            )?;

        self.fallback = false;
        match mle_fit(&self.episode_log, &self.theta_hat, &self.config.mle) {
            Ok(report) => {
                self.fits += 1;
                if report.converged {
                    self.theta_hat = report.theta_hat;
                } else {
                    log::debug!("DBL-MNL episode {next}: MLE did not converge, keeping previous estimate");
                    self.info.flags.push("mle_not_converged");
                }
            }
            Err(MnlError::SingularDesign { .. }) => self.fallback = true,
            Err(e) => return Err(e),
        }
        self.frozen_gram = self.episode_log.gram().clone();
        self.frozen_factor = match self.frozen_gram.factor() {
            Ok(f) => Some(f),
            Err(MnlError::SingularDesign { .. }) => {
                self.fallback = true;
                None
            }
            Err(e) => return Err(e),
        };
        self.episode_log.clear();
        Ok(())
    }
}

impl Policy for DblMnl {
    fn algorithm(&self) -> Algorithm {
        Algorithm::DblMnl
    }

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        if slate.dim() != self.dim || slate.n_items() != self.n_items {
            return Err(MnlError::InvalidInput("slate shape does not match the policy".into()));
        }
        self.round += 1;
        self.info = RoundInfo::default();
        if self.round > self.schedule.end() {
            self.start_episode()?;
        }
        self.info.episode_or_level = Some(self.schedule.episode);
        let k = self.config.capacity;

        let offer = if self.schedule.episode == 1 {
            self.info.flags.push("init");
            random_offer(&mut self.rng, self.n_items, k)?
        } else if self.fallback {
            self.info.flags.push("fallback_random");
            random_offer(&mut self.rng, self.n_items, k)?
        } else {
            let remaining = (self.schedule.end() - self.round) as f64;
            let budget = self.schedule.sampling_budget;
            let threshold = k as f64 * budget * self.config.confidence.sigma0 / 2.0;
            if remaining <= budget && self.episode_log.gram().min_eigenvalue() <= threshold {
                self.info.flags.push("explore");
                random_offer(&mut self.rng, self.n_items, k)?
            } else {
                let factor = self.frozen_factor.as_ref().expect("factor present outside fallback");
                let z = optimistic_utilities_factored(slate, &self.theta_hat, factor, self.schedule.radius)?;
                argmax_assortment(z.z(), slate.revenues(), k)?
            }
        };
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)?;
        self.episode_log.push(slate, assortment, outcome)
    }

    fn round_info(&self) -> RoundInfo {
        self.info.clone()
    }

    fn parameter_updates(&self) -> usize {
        self.fits
    }

    fn estimate(&self) -> Option<&MnlParameter> {
        (self.fits > 0).then_some(&self.theta_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_double_from_d() {
        let b: Vec<usize> = (0..6).map(|k| EpisodeSchedule::boundary(4, k)).collect();
        assert_eq!(b, vec![0, 4, 8, 16, 32, 64]);
        for k in 2..10 {
            let len = EpisodeSchedule::boundary(3, k) - EpisodeSchedule::boundary(3, k - 1);
            assert_eq!(len, EpisodeSchedule::boundary(3, k) / 2);
        }
        assert_eq!(EpisodeSchedule::episode_of(4, 1), 1);
        assert_eq!(EpisodeSchedule::episode_of(4, 4), 1);
        assert_eq!(EpisodeSchedule::episode_of(4, 5), 2);
        assert_eq!(EpisodeSchedule::episode_of(4, 9), 3);
        assert_eq!(EpisodeSchedule::episode_of(4, 17), 4);
    }
}
