//! Maximum-likelihood estimation for the MNL model, the online Newton update,
//! Gram-matrix bookkeeping and the confidence radii used by the policies.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MnlError, Result};
use crate::model::{Assortment, ChoiceOutcome, ContextSlate, MnlParameter};

/// Smallest eigenvalue accepted as invertible.
pub const SINGULAR_EIGENVALUE: f64 = 1e-12;

/// Accumulated outer products `sum w x x^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
}

impl GramMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { matrix: DMatrix::zeros(dim, dim) }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(MnlError::InvalidInput("Gram matrix must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(MnlError::InvalidInput(format!("Gram matrix not symmetric (gap {asym:e})")));
        }
        Ok(Self { matrix })
    }

    /// Batch construction from a list of vectors.
    pub fn from_vectors<'a, I>(dim: usize, vectors: I) -> Self
    where
        I: IntoIterator<Item = &'a DVector<f64>>,
    {
        let mut gram = Self::zeros(dim);
        for x in vectors {
            gram.add_outer(x, 1.0);
        }
        gram
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `V += weight * x x^T`
    pub fn add_outer(&mut self, x: &DVector<f64>, weight: f64) {
        self.add_outer_slice(x.as_slice(), weight);
    }

    pub(crate) fn add_outer_slice(&mut self, x: &[f64], weight: f64) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        for (j, &xj) in x.iter().enumerate() {
            let wxj = weight * xj;
            for (i, &xi) in x.iter().enumerate() {
                self.matrix[(i, j)] += wxj * xi;
            }
        }
    }

    /// Adds the outer products of every offered item.
    pub fn add_assortment(&mut self, slate: &ContextSlate, assortment: &Assortment, weight: f64) {
        for &i in assortment.items() {
            self.add_outer(slate.feature(i), weight);
        }
    }

    pub fn add(&mut self, other: &GramMatrix) {
        self.matrix += &other.matrix;
    }

    pub fn reset(&mut self) {
        self.matrix.fill(0.0);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self)
    }

    /// Cholesky factorization for repeated weighted-norm queries.
    pub fn factor(&self) -> Result<GramFactor> {
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue <= SINGULAR_EIGENVALUE {
            return Err(MnlError::SingularDesign { min_eigenvalue });
        }
        Cholesky::new(self.matrix.clone()).map(GramFactor).ok_or(MnlError::SingularDesign { min_eigenvalue })
    }
}

/// A factorized invertible Gram matrix.
#[derive(Debug, Clone)]
pub struct GramFactor(Cholesky<f64, Dyn>);

impl GramFactor {
    /// `sqrt(x^T V^{-1} x)` through a triangular solve.
    pub fn weighted_norm(&self, x: &DVector<f64>) -> f64 {
        self.weighted_norm_sq(x).sqrt()
    }

    pub fn weighted_norm_sq(&self, x: &DVector<f64>) -> f64 {
        let l = self.0.l_dirty();
        let d = x.len();
        // Forward substitution L z = x; then |z|^2 = x^T V^{-1} x.
        let mut z = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..d {
            let mut s = x[i];
            for (j, zj) in z.iter().enumerate().take(i) {
                s -= l[(i, j)] * zj;
            }
            z[i] = s / l[(i, i)];
            total += z[i] * z[i];
        }
        total
    }

    /// `V^{-1} v`
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0.solve(v)
    }
}

pub fn weighted_norm(gram: &GramMatrix, x: &DVector<f64>) -> Result<f64> {
    if x.len() != gram.dim() {
        return Err(MnlError::DimensionMismatch { expected: gram.dim(), got: x.len() });
    }
    Ok(gram.factor()?.weighted_norm(x))
}

pub fn min_eigenvalue(gram: &GramMatrix) -> f64 {
    if gram.dim() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(gram.matrix.clone()).eigenvalues.min()
}

/// The offered features and response of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    round: usize,
    items: Vec<usize>,
    /// Row-major `|S| x d`.
    features: Vec<f64>,
    chosen: Option<usize>,
}

impl Observation {
    pub fn new(slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<Self> {
        if outcome.response().len() != assortment.len() + 1 {
            return Err(MnlError::DimensionMismatch { expected: assortment.len() + 1, got: outcome.response().len() });
        }
        let mut features = Vec::with_capacity(assortment.len() * slate.dim());
        for &i in assortment.items() {
            if i >= slate.n_items() {
                return Err(MnlError::InvalidItem { index: i, n_items: slate.n_items() });
            }
            features.extend_from_slice(slate.feature(i).as_slice());
        }
        Ok(Self {
            round: slate.round(),
            items: assortment.items().to_vec(),
            features,
            chosen: outcome.chosen_position(),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    /// Position of the chosen item within the offered items.
    pub fn chosen_position(&self) -> Option<usize> {
        self.chosen
    }

    pub fn feature_rows(&self, dim: usize) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(dim)
    }
}

/// Observed rounds entering a likelihood, with their running Gram matrix.
#[derive(Debug, Clone)]
pub struct SampleLog {
    dim: usize,
    records: Vec<Observation>,
    gram: GramMatrix,
}

impl SampleLog {
    pub fn new(dim: usize) -> Self {
        Self { dim, records: Vec::new(), gram: GramMatrix::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    /// Unweighted Gram matrix of every offered feature in the log.
    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn push(&mut self, slate: &ContextSlate, assortment: &Assortment, outcome: &ChoiceOutcome) -> Result<()> {
        if slate.dim() != self.dim {
            return Err(MnlError::DimensionMismatch { expected: self.dim, got: slate.dim() });
        }
        self.push_observation(Observation::new(slate, assortment, outcome)?)
    }

    pub fn push_observation(&mut self, obs: Observation) -> Result<()> {
        if let Some(last) = self.records.last() {
            if obs.round <= last.round {
                return Err(MnlError::InvalidInput(format!(
                    "rounds must increase: {} after {}",
                    obs.round, last.round
                )));
            }
        }
        if obs.features.len() != obs.items.len() * self.dim {
            return Err(MnlError::DimensionMismatch { expected: obs.items.len() * self.dim, got: obs.features.len() });
        }
        for row in obs.features.chunks_exact(self.dim) {
            self.gram.add_outer_slice(row, 1.0);
        }
        self.records.push(obs);
        Ok(())
    }

    /// The sub-log made of the given rounds.
    pub fn restrict(&self, rounds: &[usize]) -> SampleLog {
        let mut sub = SampleLog::new(self.dim);
        for obs in &self.records {
            if rounds.contains(&obs.round) {
                sub.push_observation(obs.clone()).expect("records are already ordered");
            }
        }
        sub
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.gram.reset();
    }
}

struct Evaluation {
    loss: f64,
    gradient: Vec<f64>,
    hessian: Option<Vec<f64>>,
}

fn evaluate(log: &SampleLog, theta: &[f64], with_gradient: bool, with_hessian: bool) -> Evaluation {
    let d = log.dim;
    let mut loss = 0.0;
    let mut gradient = if with_gradient { vec![0.0; d] } else { Vec::new() };
    let mut hessian = if with_hessian { Some(vec![0.0; d * d]) } else { None };
    let mut utilities: Vec<f64> = Vec::new();
    let mut mean = vec![0.0; d];

    for obs in &log.records {
        utilities.clear();
        utilities.extend(obs.features.chunks_exact(d).map(|row| dot(row, theta)));
        let shift = utilities.iter().copied().fold(0.0_f64, f64::max);
        let mut total = (-shift).exp();
        for u in utilities.iter_mut() {
            *u = (*u - shift).exp();
            total += *u;
        }
        // utilities now hold unnormalized weights.
        let lse = shift + total.ln();
        loss += lse;
        if let Some(pos) = obs.chosen {
            loss -= dot(&obs.features[pos * d..(pos + 1) * d], theta);
        }
        if !with_gradient {
            continue;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for (pos, row) in obs.features.chunks_exact(d).enumerate() {
            let p = utilities[pos] / total;
            let y = if obs.chosen == Some(pos) { 1.0 } else { 0.0 };
            for k in 0..d {
                gradient[k] += (p - y) * row[k];
                mean[k] += p * row[k];
            }
            if let Some(h) = hessian.as_mut() {
                for a in 0..d {
                    let pa = p * row[a];
                    for b in 0..=a {
                        h[a * d + b] += pa * row[b];
                    }
                }
            }
        }
        if let Some(h) = hessian.as_mut() {
            for a in 0..d {
                for b in 0..=a {
                    h[a * d + b] -= mean[a] * mean[b];
                }
            }
        }
    }
    if let Some(h) = hessian.as_mut() {
        for a in 0..d {
            for b in 0..a {
                h[b * d + a] = h[a * d + b];
            }
        }
    }
    Evaluation { loss, gradient, hessian }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_theta(log: &SampleLog, theta: &MnlParameter) -> Result<()> {
    if theta.dim() != log.dim {
        return Err(MnlError::DimensionMismatch { expected: log.dim, got: theta.dim() });
    }
    Ok(())
}

/// `sum_t [ -sum_i y_ti x_ti . theta + log(1 + sum_j exp(x_tj . theta)) ]`
pub fn mnl_neg_log_likelihood(log: &SampleLog, theta: &MnlParameter) -> Result<f64> {
    check_theta(log, theta)?;
    if log.is_empty() {
        return Err(MnlError::InvalidInput("empty sample log".into()));
    }
    Ok(evaluate(log, theta.values().as_slice(), false, false).loss)
}

/// `sum_t sum_i (p_ti - y_ti) x_ti`
pub fn mnl_gradient(log: &SampleLog, theta: &MnlParameter) -> Result<DVector<f64>> {
    check_theta(log, theta)?;
    Ok(DVector::from_vec(evaluate(log, theta.values().as_slice(), true, false).gradient))
}

/// Hessian of the negative log-likelihood.
pub fn mnl_hessian(log: &SampleLog, theta: &MnlParameter) -> Result<DMatrix<f64>> {
    check_theta(log, theta)?;
    let d = log.dim;
    let h = evaluate(log, theta.values().as_slice(), true, true).hessian.expect("requested");
    Ok(DMatrix::from_row_slice(d, d, &h))
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub theta_hat: MnlParameter,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton iterations on the negative log-likelihood from `init`.
///
/// Fails with `SingularDesign` when the offered features do not span the
/// parameter space. A run that exhausts `max_iter` returns a report with
/// `converged == false`.
pub fn mle_fit(log: &SampleLog, init: &MnlParameter, options: &MleOptions) -> Result<MleReport> {
    check_theta(log, init)?;
    let min_eigenvalue = log.gram.min_eigenvalue();
    if log.is_empty() || min_eigenvalue <= SINGULAR_EIGENVALUE {
        return Err(MnlError::SingularDesign { min_eigenvalue });
    }
    let d = log.dim;
    let mut theta = init.values().clone();
    let mut iterations = 0;
    loop {
        let eval = evaluate(log, theta.as_slice(), true, true);
        let gradient = DVector::from_vec(eval.gradient);
        let gradient_norm = gradient.norm();
        if gradient_norm <= options.tol || iterations >= options.max_iter {
            return Ok(MleReport {
                theta_hat: MnlParameter::new(theta)?,
                gradient_norm,
                iterations,
                converged: gradient_norm <= options.tol,
            });
        }
        iterations += 1;
        let hessian = DMatrix::from_row_slice(d, d, eval.hessian.as_deref().expect("requested"));
        let direction = match Cholesky::new(hessian) {
            Some(chol) => chol.solve(&gradient),
            None => gradient.clone(),
        };
        let decrement = gradient.dot(&direction);
        if !decrement.is_finite() {
            return Ok(MleReport { theta_hat: MnlParameter::new(theta)?, gradient_norm, iterations, converged: false });
        }
        // Near the optimum the predicted decrease drops below the rounding
        // noise of the summed loss and Armijo can no longer tell steps apart;
        // there the full Newton step is taken without a line search.
        if decrement < (1e-8 * eval.loss.abs().max(1.0)).min(1e-3) {
            theta -= &direction;
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=options.max_halvings {
            let candidate = &theta - &direction * step;
            let loss = evaluate(log, candidate.as_slice(), false, false).loss;
            if loss <= eval.loss - 1e-4 * step * decrement {
                theta = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            let gradient_norm = DVector::from_vec(evaluate(log, theta.as_slice(), true, false).gradient).norm();
            return Ok(MleReport {
                theta_hat: MnlParameter::new(theta)?,
                gradient_norm,
                iterations,
                converged: gradient_norm <= options.tol,
            });
        }
    }
}

/// Per-round loss gradient `sum_{i in S} (p_i(theta) - y_i) x_i`.
pub fn round_gradient(
    slate: &ContextSlate,
    assortment: &Assortment,
    outcome: &ChoiceOutcome,
    theta: &MnlParameter,
) -> Result<DVector<f64>> {
    let probs = crate::model::choice_probabilities(slate, assortment, theta)?;
    let mut g = DVector::zeros(slate.dim());
    for (pos, &i) in assortment.items().iter().enumerate() {
        let y = f64::from(outcome.response()[pos]);
        g.axpy(probs[pos] - y, slate.feature(i), 1.0);
    }
    Ok(g)
}

/// Minimizer of `0.5 |theta - prev|^2_V + (theta - prev) . g`, i.e.
/// `prev - V^{-1} g`.
pub fn online_newton_step(
    theta_prev: &MnlParameter,
    gram_next: &GramMatrix,
    gradient: &DVector<f64>,
) -> Result<MnlParameter> {
    if gradient.len() != theta_prev.dim() || gram_next.dim() != theta_prev.dim() {
        return Err(MnlError::DimensionMismatch { expected: theta_prev.dim(), got: gradient.len() });
    }
    let factor = gram_next.factor()?;
    Ok(online_newton_step_factored(theta_prev, &factor, gradient))
}

pub fn online_newton_step_factored(
    theta_prev: &MnlParameter,
    factor: &GramFactor,
    gradient: &DVector<f64>,
) -> MnlParameter {
    MnlParameter::new(theta_prev.values() - factor.solve(gradient)).expect("finite update")
}

/// Model constants assumed known to the learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    /// Lower bound on `p_i p_0` near the true parameter, in `(0, 1]`.
    pub kappa: f64,
    /// Lower bound on the minimum eigenvalue of `E[x x^T]`.
    pub sigma0: f64,
    /// Failure probability in `(0, 1)`.
    pub delta: f64,
}

impl ConfidenceConfig {
    pub fn new(kappa: f64, sigma0: f64, delta: f64) -> Result<Self> {
        let config = Self { kappa, sigma0, delta };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(MnlError::Config(format!("kappa must be in (0, 1], got {}", self.kappa)));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(MnlError::Config(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(MnlError::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(MnlError::Domain(format!("kappa must be positive, got {kappa}")))
    }
}

/// UCB-MNL width `(1 / 2 kappa) sqrt(2 d log(1 + t/d) + 2 log t)`.
pub fn radius_ucb(t: usize, d: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if t == 0 || d == 0 {
        return Err(MnlError::Domain("radius_ucb needs t >= 1 and d >= 1".into()));
    }
    let (t, d) = (t as f64, d as f64);
    Ok((2.0 * d * (1.0 + t / d).ln() + 2.0 * t.ln()).sqrt() / (2.0 * kappa))
}

/// Width for the online-update variant:
/// `sqrt(T0 + (8/kappa) d log(1 + t/d) + (8/kappa + 16/3) log(ceil(2 log2(tK/2)) t^4) + 4)`.
pub fn radius_online(t: usize, d: usize, k: usize, kappa: f64, t0: usize) -> Result<f64> {
    check_kappa(kappa)?;
    if t * k < 4 {
        return Err(MnlError::Domain(format!("radius_online needs tK >= 4, got t={t}, K={k}")));
    }
    let (tf, df) = (t as f64, d as f64);
    let levels = (2.0 * (tf * k as f64 / 2.0).log2()).ceil();
    let inner = t0 as f64
        + 8.0 / kappa * df * (1.0 + tf / df).ln()
        + (8.0 / kappa + 16.0 / 3.0) * (levels.ln() + 4.0 * tf.ln())
        + 4.0;
    Ok(inner.sqrt())
}

/// DBL-MNL episode width `(5 / kappa) sqrt(log(tau^2 N / 4))`.
pub fn radius_dbl(tau: usize, n_items: usize, kappa: f64) -> Result<f64> {
    radius_dbl_real(tau as f64, n_items as f64, kappa)
}

/// [`radius_dbl`] over real-valued arguments.
pub fn radius_dbl_real(tau: f64, n_items: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let arg = tau * tau * n_items / 4.0;
    if arg <= 1.0 {
        return Err(MnlError::Domain(format!("radius_dbl needs tau^2 N > 4, got {}", 4.0 * arg)));
    }
    Ok(5.0 / kappa * arg.ln().sqrt())
}

/// DBL-MNL random-sampling budget
/// `(288 / (K sigma0 kappa^4)) (4 d^2 + log(tau^2 N / 4))`.
pub fn dbl_sampling_budget(tau: usize, n_items: usize, d: usize, k: usize, sigma0: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let arg = (tau as f64).powi(2) * n_items as f64 / 4.0;
    if arg <= 1.0 || k == 0 || sigma0 <= 0.0 {
        return Err(MnlError::Domain("dbl_sampling_budget needs tau^2 N > 4, K >= 1, sigma0 > 0".into()));
    }
    let scale = 288.0 / (k as f64 * sigma0 * kappa.powi(4));
    Ok(scale * (4.0 * (d * d) as f64 + arg.ln()))
}

/// supCB-MNL width `(5 / kappa) sqrt(2 log(T N log2 T))`.
pub fn radius_sup(horizon: usize, n_items: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let t = horizon as f64;
    let arg = t * n_items as f64 * t.log2();
    if arg <= 1.0 {
        return Err(MnlError::Domain(format!("radius_sup needs T N log2 T > 1, got {arg}")));
    }
    Ok(5.0 / kappa * (2.0 * arg.ln()).sqrt())
}

/// `(5 / kappa) sqrt(log(1/delta)) |x|_{V^{-1}}`
pub fn prediction_error_bound(gram: &GramMatrix, x: &DVector<f64>, kappa: f64, delta: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MnlError::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(5.0 / kappa * (1.0 / delta).ln().sqrt() * weighted_norm(gram, x)?)
}
