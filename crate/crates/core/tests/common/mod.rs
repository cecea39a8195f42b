#![allow(dead_code)]

use mnl_bandit::estimation::SampleLog;
use mnl_bandit::model::{sample_choice, Assortment, ContextSlate, MnlParameter};
use mnl_bandit::nalgebra::{DMatrix, DVector};
use mnl_bandit::rng::{random_subset, stream, StreamRng};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, "tests", 0)
}

pub fn unit_ball_vector(rng: &mut StreamRng, d: usize) -> DVector<f64> {
    let x = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let n = x.norm();
    x / n.max(1.0)
}

pub fn random_theta(rng: &mut StreamRng, d: usize, scale: f64) -> MnlParameter {
    MnlParameter::from_slice(&(0..d).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>()).unwrap()
}

pub fn random_slate(rng: &mut StreamRng, round: usize, n: usize, d: usize, mixed_revenue: bool) -> ContextSlate {
    let features = (0..n).map(|_| unit_ball_vector(rng, d)).collect();
    let revenues = (0..n).map(|_| if mixed_revenue { rng.random_range(-0.3..1.0) } else { 1.0 }).collect();
    ContextSlate::new(round, features, revenues).unwrap()
}

/// A log of `rounds` rounds where random size-`k` assortments are offered
/// and choices are drawn from `theta`.
pub fn simulated_log(rng: &mut StreamRng, rounds: usize, n: usize, k: usize, theta: &MnlParameter) -> SampleLog {
    let d = theta.dim();
    let mut log = SampleLog::new(d);
    for t in 1..=rounds {
        let slate = random_slate(rng, t, n, d, false);
        let a = Assortment::new(random_subset(rng, n, k), k, n).unwrap();
        let outcome = sample_choice(&slate, &a, theta, rng.random::<f64>()).unwrap();
        log.push(&slate, &a, &outcome).unwrap();
    }
    log
}

pub fn random_spd(rng: &mut StreamRng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

/// Unstabilized MNL probabilities: items in order, outside last.
pub fn naive_probabilities(utilities: &[f64]) -> Vec<f64> {
    let total: f64 = 1.0 + utilities.iter().map(|u| u.exp()).sum::<f64>();
    let mut p: Vec<f64> = utilities.iter().map(|u| u.exp() / total).collect();
    p.push(1.0 / total);
    p
}

pub fn naive_revenue(utilities: &[f64], revenues: &[f64], items: &[usize]) -> f64 {
    let total: f64 = 1.0 + items.iter().map(|&i| utilities[i].exp()).sum::<f64>();
    items.iter().map(|&i| revenues[i] * utilities[i].exp()).sum::<f64>() / total
}

/// Every nonempty subset of `0..n` with at most `k` items.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n))
        .filter(|m| m.count_ones() as usize <= k)
        .map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect())
        .collect()
}
