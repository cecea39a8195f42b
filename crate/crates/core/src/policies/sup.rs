use crate::assortment::all_assortments;
use crate::error::{MnlError, Result};
use crate::estimation::{mle_fit, radius_sup, GramFactor, SampleLog};
use crate::model::{revenue_from_utilities, Assortment, ChoiceOutcome, ContextSlate, MnlParameter};
use crate::rng::StreamRng;

use super::{random_offer, Algorithm, Policy, PolicyConfig, RoundInfo, StepGuard};

/// Largest assortment family supCB-MNL will enumerate.
pub const SUP_FAMILY_LIMIT: u128 = 100_000;

/// Per-level estimator fed by the initialization rounds plus `Psi_l`.
struct Level {
    log: SampleLog,
    theta: MnlParameter,
    factor: Option<GramFactor>,
    dirty: bool,
}

/// supCB-MNL: layered elimination over the full assortment family, with one
/// independent estimator per level.
pub struct SupCbMnl {
    config: PolicyConfig,
    n_items: usize,
    dim: usize,
    t0: usize,
    rng: StreamRng,
    guard: StepGuard,
    round: usize,
    family: Vec<Vec<usize>>,
    levels: Vec<Level>,
    /// `psi[0]` holds exploitation rounds, `psi[l]` exploration rounds of level `l`.
    psi: Vec<Vec<usize>>,
    chain: Vec<Vec<usize>>,
    pending: Option<usize>,
    fits: usize,
    info: RoundInfo,
}

impl SupCbMnl {
    pub fn new(config: PolicyConfig, n_items: usize, dim: usize, rng: StreamRng) -> Result<Self> {
        config.validate(n_items, dim)?;
        let t0 = config.resolved_t0(dim);
        let family = all_assortments(n_items, config.capacity, SUP_FAMILY_LIMIT)?;
        let n_levels = Self::level_count(config.horizon);
        let levels = (0..n_levels)
            .map(|_| Level { log: SampleLog::new(dim), theta: MnlParameter::zeros(dim), factor: None, dirty: true })
            .collect();
        Ok(Self {
            config,
            n_items,
            dim,
            t0,
            rng,
            guard: StepGuard::default(),
            round: 0,
            family,
            levels,
            psi: vec![Vec::new(); n_levels + 1],
            chain: Vec::new(),
            pending: None,
            fits: 0,
            info: RoundInfo::default(),
        })
    }

    /// `L = max(1, floor(log2(T) / 2))`.
    pub fn level_count(horizon: usize) -> usize {
        ((horizon as f64).log2() / 2.0).floor().max(1.0) as usize
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    /// The candidate family `A_1`, lexicographically ordered.
    pub fn family(&self) -> &[Vec<usize>] {
        &self.family
    }

    /// Round index sets `Psi_0, ..., Psi_L`.
    pub fn psi_sets(&self) -> &[Vec<usize>] {
        &self.psi
    }

    /// Family indices of `A_1, A_2, ...` visited in the latest round.
    pub fn last_chain(&self) -> &[Vec<usize>] {
        &self.chain
    }

    /// Estimate held by `level` (1-based), if its design is invertible.
    pub fn level_estimate(&self, level: usize) -> Option<&MnlParameter> {
        let lv = self.levels.get(level.checked_sub(1)?)?;
        lv.factor.as_ref().map(|_| &lv.theta)
    }

    fn refresh(&mut self, level: usize) -> Result<()> {
        let lv = &mut self.levels[level];
        if !lv.dirty {
            return Ok(());
        }
        lv.dirty = false;
        match mle_fit(&lv.log, &lv.theta, &self.config.mle) {
            Ok(report) => {
                self.fits += 1;
                if report.converged {
                    lv.theta = report.theta_hat;
                } else {
                    self.info.flags.push("mle_not_converged");
                }
                lv.factor = Some(lv.log.gram().factor()?);
            }
            Err(MnlError::SingularDesign { .. }) => lv.factor = None,
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn best_by<F: Fn(&[usize]) -> f64>(&self, candidates: &[usize], score: F) -> (usize, f64) {
        let mut best = (candidates[0], f64::NEG_INFINITY);
        for &c in candidates {
            let s = score(&self.family[c]);
            if s > best.1 {
                best = (c, s);
            }
        }
        best
    }

    fn learn_step(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        let k = self.config.capacity;
        let horizon = self.config.horizon.max(2);
        let alpha = self.config.radius_scale * radius_sup(horizon, self.n_items, self.config.confidence.kappa)?;
        let exploit_threshold = 1.0 / (horizon as f64).sqrt();
        let n_levels = self.levels.len();

        let mut active: Vec<usize> = (0..self.family.len()).collect();
        for level in 1..=n_levels {
            self.chain.push(active.clone());
            self.refresh(level - 1)?;
            let lv = &self.levels[level - 1];
            let Some(factor) = lv.factor.as_ref() else {
                self.info.flags.push("singular_level");
                self.pending = Some(level);
                self.info.episode_or_level = Some(level);
                return random_offer(&mut self.rng, self.n_items, k);
            };

            let mut widths = vec![0.0; self.n_items];
            let mut in_play = vec![false; self.n_items];
            for &c in &active {
                for &i in &self.family[c] {
                    in_play[i] = true;
                }
            }
            let mut widest: f64 = 0.0;
            for i in (0..self.n_items).filter(|&i| in_play[i]) {
                widths[i] = alpha * factor.weighted_norm(slate.feature(i));
                widest = widest.max(widths[i]);
            }
            let big_w = 2.0 * widest;
            let utilities = slate.utilities(&lv.theta)?;
            let revenue = |s: &[usize]| revenue_from_utilities(&utilities, slate.revenues(), s);

            let exploit = big_w <= exploit_threshold;
            let capped = !exploit && big_w <= 0.5f64.powi(level as i32) && level == n_levels;
            if exploit || capped {
                if capped {
                    self.info.flags.push("level_cap");
                }
                let (best, _) = self.best_by(&active, revenue);
                self.pending = Some(0);
                self.info.episode_or_level = Some(0);
                return Assortment::new(self.family[best].clone(), k, self.n_items);
            }
            if big_w > 0.5f64.powi(level as i32) {
                let (best, _) = self.best_by(&active, |s: &[usize]| s.iter().map(|&i| widths[i]).sum());
                self.pending = Some(level);
                self.info.episode_or_level = Some(level);
                return Assortment::new(self.family[best].clone(), k, self.n_items);
            }
            let (_, top) = self.best_by(&active, revenue);
            let margin = 2.0 * 0.5f64.powi(level as i32);
            active.retain(|&c| revenue(&self.family[c]) >= top - margin);
        }
        unreachable!("the last level always selects")
    }
}

impl Policy for SupCbMnl {
    fn algorithm(&self) -> Algorithm {
        Algorithm::SupCbMnl
    }

    fn select(&mut self, slate: &ContextSlate) -> Result<Assortment> {
        self.guard.begin()?;
        if slate.dim() != self.dim || slate.n_items() != self.n_items {
            return Err(MnlError::InvalidInput("slate shape does not match the policy".into()));
        }
        self.round += 1;
        self.info = RoundInfo::default();
        self.chain.clear();
        self.pending = None;
        let offer = if self.round <= self.t0 {
            self.info.flags.push("init");
            random_offer(&mut self.rng, self.n_items, self.config.capacity)?
        } else {
            self.learn_step(slate)?
        };
        self.guard.offered(&offer);
        Ok(offer)
    }

    fn update(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()> {
        self.guard.finish(assortment)?;
        match self.pending {
            None => {
                for lv in &mut self.levels {
                    lv.log.push(slate, assortment, outcome)?;
                    lv.dirty = true;
                }
            }
            Some(0) => self.psi[0].push(self.round),
            Some(level) => {
                self.psi[level].push(self.round);
                let lv = &mut self.levels[level - 1];
                lv.log.push(slate, assortment, outcome)?;
                lv.dirty = true;
            }
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
        let first = &self.levels[0];
        first.factor.as_ref().map(|_| &first.theta)
    }
}
