//! Optimistic utilities and exact revenue maximization over assortments of
//! bounded size.
//!
//! For weights `w_i = exp(u_i)` the expected revenue of `S` is
//! `R(S) = sum_S w_i r_i / (1 + sum_S w_i)`, and `R(S) >= lambda` holds iff
//! `sum_S w_i (r_i - lambda) >= lambda`. The optimal revenue is therefore the
//! root of the decreasing function
//! `g(lambda) = max_{1 <= |S| <= K} sum_S w_i (r_i - lambda) - lambda`,
//! whose inner maximization is a sort. [`argmax_assortment`] bisects on
//! `lambda` and then reads off the maximizing set. With uniform positive
//! revenues the objective only depends on `sum_S w_i`, so the top `K`
//! utilities are optimal.

use nalgebra::DVector;

use crate::error::{MnlError, Result};
use crate::estimation::{GramFactor, GramMatrix};
use crate::model::{revenue_from_utilities, Assortment, ContextSlate, MnlParameter};

const MAX_BISECTIONS: usize = 200;
const BISECTION_WIDTH: f64 = 1e-12;
const ENUMERATION_LIMIT: u128 = 1_000_000;
const TIE_EPS: f64 = 1e-14;

/// Per-item upper confidence utilities `z_i = x_i . theta_hat + width_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticUtilities {
    round: usize,
    means: Vec<f64>,
    widths: Vec<f64>,
    z: Vec<f64>,
}

impl OptimisticUtilities {
    pub fn new(round: usize, means: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if means.len() != widths.len() {
            return Err(MnlError::DimensionMismatch { expected: means.len(), got: widths.len() });
        }
        if widths.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(MnlError::InvalidInput("confidence widths must be nonnegative".into()));
        }
        let z = means.iter().zip(&widths).map(|(m, w)| m + w).collect();
        Ok(Self { round, means, widths, z })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }
}

/// `z_i = x_i . theta_hat + alpha |x_i|_{V^{-1}}` for every item.
pub fn optimistic_utilities(
    slate: &ContextSlate,
    theta_hat: &MnlParameter,
    gram: &GramMatrix,
    alpha: f64,
) -> Result<OptimisticUtilities> {
    if gram.dim() != slate.dim() {
        return Err(MnlError::DimensionMismatch { expected: slate.dim(), got: gram.dim() });
    }
    optimistic_utilities_factored(slate, theta_hat, &gram.factor()?, alpha)
}

pub fn optimistic_utilities_factored(
    slate: &ContextSlate,
    theta_hat: &MnlParameter,
    factor: &GramFactor,
    alpha: f64,
) -> Result<OptimisticUtilities> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(MnlError::InvalidInput(format!("confidence radius must be nonnegative, got {alpha}")));
    }
    let means = slate.utilities(theta_hat)?;
    let widths = if alpha == 0.0 {
        vec![0.0; slate.n_items()]
    } else {
        slate.features().iter().map(|x| alpha * factor.weighted_norm(x)).collect()
    };
    OptimisticUtilities::new(slate.round(), means, widths)
}

/// `sum_S r_i exp(z_i) / (1 + sum_S exp(z_j))`
pub fn optimistic_revenue(slate: &ContextSlate, assortment: &Assortment, z: &OptimisticUtilities) -> Result<f64> {
    if z.z.len() != slate.n_items() {
        return Err(MnlError::DimensionMismatch { expected: slate.n_items(), got: z.z.len() });
    }
    if let Some(&index) = assortment.items().iter().find(|&&i| i >= slate.n_items()) {
        return Err(MnlError::InvalidItem { index, n_items: slate.n_items() });
    }
    Ok(revenue_from_utilities(&z.z, slate.revenues(), assortment.items()))
}

fn check_inputs(utilities: &[f64], revenues: &[f64], capacity: usize) -> Result<()> {
    if capacity == 0 {
        return Err(MnlError::InvalidInput("capacity K must be at least 1".into()));
    }
    if utilities.is_empty() {
        return Err(MnlError::InvalidInput("no items to choose from".into()));
    }
    if utilities.len() != revenues.len() {
        return Err(MnlError::DimensionMismatch { expected: utilities.len(), got: revenues.len() });
    }
    if utilities.iter().chain(revenues).any(|v| !v.is_finite()) {
        return Err(MnlError::InvalidInput("non-finite utility or revenue".into()));
    }
    Ok(())
}

/// Indices sorted by descending score, ties to the smaller index.
fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Exact maximizer of the MNL expected revenue over assortments of size at
/// most `capacity`.
pub fn argmax_assortment(utilities: &[f64], revenues: &[f64], capacity: usize) -> Result<Assortment> {
    check_inputs(utilities, revenues, capacity)?;
    let n = utilities.len();
    let k = capacity.min(n);
    let uniform = revenues.iter().all(|&r| r == revenues[0]) && revenues[0] > 0.0;
    let mut items = if uniform {
        rank_desc(utilities).into_iter().take(k).collect()
    } else {
        bisect_threshold(utilities, revenues, k)
    };
    items.sort_unstable();
    let assortment = Assortment::new(items, capacity, n)?;
    if !uniform && revenue_from_utilities(utilities, revenues, assortment.items()) <= 0.0 {
        log::warn!("degenerate instance: best nonempty assortment has nonpositive revenue");
    }
    Ok(assortment)
}

fn bisect_threshold(utilities: &[f64], revenues: &[f64], k: usize) -> Vec<usize> {
    let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
    let weights: Vec<f64> = utilities.iter().map(|u| (u - shift).exp()).collect();
    let outside = (-shift).exp();
    let mut terms = vec![0.0; weights.len()];

    // Best set for the linearized objective at `lambda`, and its value minus
    // the outside term. At least one item is always taken.
    let mut select = |lambda: f64| -> (Vec<usize>, f64) {
        for (t, (w, r)) in terms.iter_mut().zip(weights.iter().zip(revenues)) {
            *t = w * (r - lambda);
        }
        let order = rank_desc(&terms);
        let mut chosen = vec![order[0]];
        let mut value = terms[order[0]];
        for &i in order.iter().skip(1).take(k - 1) {
            if terms[i] <= 0.0 {
                break;
            }
            chosen.push(i);
            value += terms[i];
        }
        (chosen, value - lambda * outside)
    };

    let rmin = revenues.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = revenues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = rmin.min(0.0);
    let mut hi = rmax.max(0.0);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < BISECTION_WIDTH {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if select(mid).1 >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    select(lo).0
}

/// `sum_{k=1}^{K} C(N, k)`, saturating.
pub fn count_assortments(n: usize, capacity: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 1..=capacity.min(n) {
        binom = binom.saturating_mul((n - k + 1) as u128) / k as u128;
        total = total.saturating_add(binom);
    }
    total
}

/// Every assortment of size `1..=capacity` over `n` items, in lexicographic
/// order of their sorted item lists.
pub fn all_assortments(n: usize, capacity: usize, limit: u128) -> Result<Vec<Vec<usize>>> {
    let count = count_assortments(n, capacity);
    if count > limit {
        return Err(MnlError::TooLarge { count, limit });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = Vec::with_capacity(capacity);
    fn walk(start: usize, n: usize, capacity: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in start..n {
            current.push(i);
            out.push(current.clone());
            if current.len() < capacity {
                walk(i + 1, n, capacity, current, out);
            }
            current.pop();
        }
    }
    walk(0, n, capacity, &mut current, &mut out);
    Ok(out)
}

/// Exhaustive search over all assortments of size at most `capacity`; ties go
/// to the lexicographically smallest item list.
pub fn enumerate_oracle(utilities: &[f64], revenues: &[f64], capacity: usize) -> Result<Assortment> {
    check_inputs(utilities, revenues, capacity)?;
    let n = utilities.len();
    let candidates = all_assortments(n, capacity, ENUMERATION_LIMIT)?;
    let mut best: Option<(f64, &Vec<usize>)> = None;
    // Lexicographic generation order means the first of several tied sets wins.
    for items in &candidates {
        let value = revenue_from_utilities(utilities, revenues, items);
        if best.is_none_or(|(b, _)| value > b + TIE_EPS) {
            best = Some((value, items));
        }
    }
    let (_, items) = best.expect("at least one candidate");
    Assortment::new(items.clone(), capacity, n)
}

/// Utilities `x_i . theta` turned into a plain weight-space helper for tests
/// and diagnostics.
pub fn weights(utilities: &[f64]) -> DVector<f64> {
    DVector::from_iterator(utilities.len(), utilities.iter().map(|u| u.exp()))
}
