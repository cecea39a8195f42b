//! The multinomial-logit choice model.
//!
//! An assortment `S` of items is offered; item `i` has utility `x_i . theta`
//! and the no-purchase (outside) option has utility 0. Item `i` is chosen
//! with probability `exp(u_i) / (1 + sum_{j in S} exp(u_j))`.
//!
//! Probability vectors are always laid out as the assortment items in their
//! stored order followed by the outside option.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MnlError, Result};

const NORM_SLACK: f64 = 1e-9;

/// Features and revenues of all `N` items in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSlate {
    round: usize,
    dim: usize,
    features: Vec<DVector<f64>>,
    revenues: Vec<f64>,
}

impl ContextSlate {
    /// Builds a slate enforcing `||x_i|| <= 1` and `|r_i| <= 1`.
    pub fn new(round: usize, features: Vec<DVector<f64>>, revenues: Vec<f64>) -> Result<Self> {
        let slate = Self::unbounded(round, features, revenues)?;
        if let Some((i, x)) = slate.features.iter().enumerate().find(|(_, x)| x.norm() > 1.0 + NORM_SLACK) {
            return Err(MnlError::InvalidInput(format!("feature vector {i} has norm {} > 1", x.norm())));
        }
        Ok(slate)
    }

    /// Builds a slate without the unit-norm bound on features. Used for
    /// unclipped Gaussian contexts.
    pub fn unbounded(round: usize, features: Vec<DVector<f64>>, revenues: Vec<f64>) -> Result<Self> {
        if round == 0 {
            return Err(MnlError::InvalidInput("rounds are numbered from 1".into()));
        }
        if features.is_empty() {
            return Err(MnlError::InvalidInput("slate needs at least one item".into()));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(MnlError::InvalidInput("feature dimension must be positive".into()));
        }
        if revenues.len() != features.len() {
            return Err(MnlError::DimensionMismatch { expected: features.len(), got: revenues.len() });
        }
        for x in &features {
            if x.len() != dim {
                return Err(MnlError::DimensionMismatch { expected: dim, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(MnlError::InvalidInput("non-finite feature".into()));
            }
        }
        if let Some(r) = revenues.iter().find(|r| !r.is_finite() || r.abs() > 1.0) {
            return Err(MnlError::InvalidInput(format!("revenue {r} outside [-1, 1]")));
        }
        Ok(Self { round, dim, features, revenues })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn n_items(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, item: usize) -> &DVector<f64> {
        &self.features[item]
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn revenues(&self) -> &[f64] {
        &self.revenues
    }

    /// `x_i . theta` for every item.
    pub fn utilities(&self, theta: &MnlParameter) -> Result<Vec<f64>> {
        if theta.dim() != self.dim {
            return Err(MnlError::DimensionMismatch { expected: self.dim, got: theta.dim() });
        }
        Ok(self.features.iter().map(|x| x.dot(theta.values())).collect())
    }
}

/// A utility parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MnlParameter(DVector<f64>);

impl MnlParameter {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(MnlError::InvalidInput("parameter dimension must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MnlError::InvalidInput("parameter has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// A set of at most `capacity` distinct items, kept in ascending index order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assortment {
    items: Vec<usize>,
    capacity: usize,
}

impl Assortment {
    /// Validates and sorts `items`. `n_items` is the number of items in the
    /// slate the assortment will be offered from.
    pub fn new(mut items: Vec<usize>, capacity: usize, n_items: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(MnlError::InvalidAssortment("capacity must be at least 1".into()));
        }
        if items.is_empty() {
            return Err(MnlError::InvalidAssortment("assortment is empty".into()));
        }
        if items.len() > capacity {
            return Err(MnlError::InvalidAssortment(format!("{} items exceed capacity {capacity}", items.len())));
        }
        if let Some(&index) = items.iter().find(|&&i| i >= n_items) {
            return Err(MnlError::InvalidItem { index, n_items });
        }
        items.sort_unstable();
        if items.windows(2).any(|w| w[0] == w[1]) {
            return Err(MnlError::InvalidAssortment("duplicate items".into()));
        }
        Ok(Self { items, capacity })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    fn check(&self, n_items: usize) -> Result<()> {
        match self.items.iter().find(|&&i| i >= n_items) {
            Some(&index) => Err(MnlError::InvalidItem { index, n_items }),
            None => Ok(()),
        }
    }
}

/// What the user picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    Item(usize),
    Outside,
}

/// A single multinomial draw over an offered assortment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceOutcome {
    chosen: Choice,
    response: Vec<u8>,
}

impl ChoiceOutcome {
    pub fn new(assortment: &Assortment, chosen: Choice) -> Result<Self> {
        let mut response = vec![0u8; assortment.len() + 1];
        match chosen {
            Choice::Item(item) => {
                let pos = assortment
                    .items()
                    .iter()
                    .position(|&i| i == item)
                    .ok_or_else(|| MnlError::InvalidAssortment(format!("chosen item {item} not offered")))?;
                response[pos] = 1;
            }
            Choice::Outside => *response.last_mut().expect("nonempty") = 1,
        }
        Ok(Self { chosen, response })
    }

    pub fn chosen(&self) -> Choice {
        self.chosen
    }

    /// One-hot response over the assortment items then the outside option.
    pub fn response(&self) -> &[u8] {
        &self.response
    }

    /// Position of the chosen item within the assortment, `None` for outside.
    pub fn chosen_position(&self) -> Option<usize> {
        let last = self.response.len() - 1;
        self.response.iter().position(|&y| y == 1).filter(|&p| p != last)
    }

    /// Serialized index: the item index, or `n_items` for the outside option.
    pub fn encode(&self, n_items: usize) -> usize {
        match self.chosen {
            Choice::Item(i) => i,
            Choice::Outside => n_items,
        }
    }

    /// `y - p` for each entry of the response.
    pub fn noise(&self, probabilities: &[f64]) -> Vec<f64> {
        self.response.iter().zip(probabilities).map(|(&y, &p)| f64::from(y) - p).collect()
    }
}

/// Choice probabilities from raw utilities of the offered items, outside last.
pub fn probabilities_from_utilities(utilities: &[f64]) -> Vec<f64> {
    let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
    let mut probs: Vec<f64> = utilities.iter().map(|u| (u - shift).exp()).collect();
    let outside = (-shift).exp();
    let total: f64 = outside + probs.iter().sum::<f64>();
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs.push(outside / total);
    probs
}

/// `sum_i r_i exp(u_i) / (1 + sum_j exp(u_j))` over the given items.
pub fn revenue_from_utilities(utilities: &[f64], revenues: &[f64], items: &[usize]) -> f64 {
    let shift = items.iter().map(|&i| utilities[i]).fold(0.0_f64, f64::max);
    let mut numerator = 0.0;
    let mut denominator = (-shift).exp();
    for &i in items {
        let w = (utilities[i] - shift).exp();
        numerator += revenues[i] * w;
        denominator += w;
    }
    numerator / denominator
}

pub fn choice_probabilities(slate: &ContextSlate, assortment: &Assortment, theta: &MnlParameter) -> Result<Vec<f64>> {
    assortment.check(slate.n_items())?;
    if theta.dim() != slate.dim() {
        return Err(MnlError::DimensionMismatch { expected: slate.dim(), got: theta.dim() });
    }
    let utilities: Vec<f64> = assortment.items().iter().map(|&i| slate.feature(i).dot(theta.values())).collect();
    Ok(probabilities_from_utilities(&utilities))
}

pub fn expected_revenue(slate: &ContextSlate, assortment: &Assortment, theta: &MnlParameter) -> Result<f64> {
    let probs = choice_probabilities(slate, assortment, theta)?;
    Ok(assortment.items().iter().zip(&probs).map(|(&i, p)| slate.revenues()[i] * p).sum())
}

/// Inverse-CDF draw with `u` in `[0, 1)`; the items in assortment order come
/// first, then the outside option.
pub fn sample_choice(
    slate: &ContextSlate,
    assortment: &Assortment,
    theta: &MnlParameter,
    u: f64,
) -> Result<ChoiceOutcome> {
    if !(0.0..1.0).contains(&u) {
        return Err(MnlError::InvalidInput(format!("uniform draw {u} not in [0, 1)")));
    }
    let probs = choice_probabilities(slate, assortment, theta)?;
    let chosen = pick_by_cdf(&probs, u).map_or(Choice::Outside, |pos| Choice::Item(assortment.items()[pos]));
    ChoiceOutcome::new(assortment, chosen)
}

/// Position of the interval containing `u`, `None` when it falls in the last
/// (outside) interval.
fn pick_by_cdf(probs: &[f64], u: f64) -> Option<usize> {
    let last = probs.len() - 1;
    let mut cumulative = 0.0;
    for (pos, p) in probs[..last].iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Some(pos);
        }
    }
    None
}

/// Revenue-maximizing assortment under the true parameter.
pub fn oracle_assortment(slate: &ContextSlate, theta_star: &MnlParameter, capacity: usize) -> Result<Assortment> {
    let utilities = slate.utilities(theta_star)?;
    crate::assortment::argmax_assortment(&utilities, slate.revenues(), capacity)
}
