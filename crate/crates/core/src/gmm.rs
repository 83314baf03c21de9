//! Diagonal-covariance Gaussian mixtures fit by expectation-maximization,
//! with farthest-point seeding and BIC-based component selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{MemoryError, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const CONVERGENCE_TOL: f64 = 1e-4;
const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(Vec::len).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    /// Per-iteration log-likelihood; non-decreasing by construction of EM.
    pub trace: Vec<f64>,
}

fn to_f64(points: &[Vec<f32>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| p.iter().map(|&x| x as f64).collect())
        .collect()
}

/// Fits a k-component diagonal GMM. Deterministic given `seed`.
pub fn fit_gmm(points: &[Vec<f32>], k: usize, seed: u64) -> Result<GmmModel> {
    fit_gmm_detailed(points, k, seed).map(|fit| fit.model)
}

pub fn fit_gmm_detailed(points: &[Vec<f32>], k: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(MemoryError::InvalidArgument("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(MemoryError::InvalidArgument(format!(
            "k={k} exceeds point count {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(MemoryError::InvalidArgument("points must share one dimension".into()));
    }
    let data = to_f64(points);
    let n = data.len();

    let centers = farthest_point_seeds(&data, k, seed);
    // Hard assignment to the seed centers initializes the responsibilities.
    let mut resp = vec![vec![0.0f64; k]; n];
    for (i, p) in data.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                sq_dist(p, &centers[a])
                    .partial_cmp(&sq_dist(p, &centers[b]))
                    .unwrap()
            })
            .unwrap();
        resp[i][nearest] = 1.0;
    }

    let mut model = m_step(&data, &resp, k, dim);
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (new_resp, ll) = e_step(&data, &model);
        debug_assert!(
            ll >= prev_ll - 1e-9,
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        trace.push(ll);
        resp = new_resp;
        model = m_step(&data, &resp, k, dim);
        if (ll - prev_ll).abs() < CONVERGENCE_TOL {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }
    Ok(GmmFit { model, log_likelihood: prev_ll, trace })
}

/// Responsibilities p(z | point), computed in log-space; they sum to 1.
pub fn posterior(model: &GmmModel, point: &[f32]) -> Vec<f64> {
    let p: Vec<f64> = point.iter().map(|&x| x as f64).collect();
    let logs: Vec<f64> = (0..model.k())
        .map(|z| model.weights[z].max(1e-300).ln() + log_density(&p, &model.means[z], &model.variances[z]))
        .collect();
    softmax_from_logs(&logs)
}

/// Hard cluster assignment, argmax of the posterior; ties take the lower index.
pub fn assign(model: &GmmModel, point: &[f32]) -> usize {
    let post = posterior(model, point);
    post.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn log_likelihood(model: &GmmModel, points: &[Vec<f32>]) -> f64 {
    let data = to_f64(points);
    data.iter()
        .map(|p| {
            let logs: Vec<f64> = (0..model.k())
                .map(|z| {
                    model.weights[z].max(1e-300).ln()
                        + log_density(p, &model.means[z], &model.variances[z])
                })
                .collect();
            log_sum_exp(&logs)
        })
        .sum()
}

/// Picks k in `[1, min(k_max, n)]` minimizing the Bayesian Information
/// Criterion; ties go to the smaller k.
pub fn select_k(points: &[Vec<f32>], k_max: usize, seed: u64) -> Result<usize> {
    if points.is_empty() {
        return Err(MemoryError::InvalidArgument("select_k requires points".into()));
    }
    let dim = points[0].len() as f64;
    let n = points.len() as f64;
    let upper = k_max.max(1).min(points.len());
    let mut best = (f64::INFINITY, 1usize);
    for k in 1..=upper {
        let fit = fit_gmm_detailed(points, k, seed)?;
        let params = (k as f64 - 1.0) + 2.0 * k as f64 * dim;
        let bic = -2.0 * fit.log_likelihood + params * n.ln();
        if bic < best.0 - 1e-12 {
            best = (bic, k);
        }
    }
    Ok(best.1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn farthest_point_seeds(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..data.len());
    let mut centers = vec![data[first].clone()];
    let mut min_dist: Vec<f64> = data.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let next = min_dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        centers.push(data[next].clone());
        for (i, p) in data.iter().enumerate() {
            min_dist[i] = min_dist[i].min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn log_density(p: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        let v = var[i];
        let d = p[i] - mean[i];
        acc += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + d * d / v);
    }
    acc
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn softmax_from_logs(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

fn e_step(data: &[Vec<f64>], model: &GmmModel) -> (Vec<Vec<f64>>, f64) {
    let k = model.k();
    let mut resp = Vec::with_capacity(data.len());
    let mut ll = 0.0;
    for p in data {
        let logs: Vec<f64> = (0..k)
            .map(|z| {
                model.weights[z].max(1e-300).ln()
                    + log_density(p, &model.means[z], &model.variances[z])
            })
            .collect();
        ll += log_sum_exp(&logs);
        resp.push(softmax_from_logs(&logs));
    }
    (resp, ll)
}

fn m_step(data: &[Vec<f64>], resp: &[Vec<f64>], k: usize, dim: usize) -> GmmModel {
    let n = data.len() as f64;
    let mut weights = vec![0.0f64; k];
    let mut means = vec![vec![0.0f64; dim]; k];
    let mut variances = vec![vec![0.0f64; dim]; k];
    for (p, r) in data.iter().zip(resp) {
        for z in 0..k {
            weights[z] += r[z];
            for i in 0..dim {
                means[z][i] += r[z] * p[i];
            }
        }
    }
    for z in 0..k {
        let nz = weights[z].max(1e-12);
        for i in 0..dim {
            means[z][i] /= nz;
        }
    }
    for (p, r) in data.iter().zip(resp) {
        for z in 0..k {
            for i in 0..dim {
                let d = p[i] - means[z][i];
                variances[z][i] += r[z] * d * d;
            }
        }
    }
    for z in 0..k {
        let nz = weights[z].max(1e-12);
        for i in 0..dim {
            variances[z][i] = (variances[z][i] / nz).max(VARIANCE_FLOOR);
        }
        weights[z] /= n;
    }
    // Renormalize against accumulated float error.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GmmModel { weights, means, variances }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_identical_points() {
        let points = vec![vec![0.25f32, -0.5, 0.3]; 10];
        let model = fit_gmm(&points, 1, 7).unwrap();
        assert_eq!(model.k(), 1);
        assert!((model.weights[0] - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((model.means[0][i] - points[0][i] as f64).abs() < 1e-6);
            assert!((model.variances[0][i] - VARIANCE_FLOOR).abs() < 1e-12);
        }
    }

    #[test]
    fn k_exceeding_points_is_invalid() {
        let points = vec![vec![0.0f32, 1.0]];
        assert!(fit_gmm(&points, 2, 0).is_err());
    }

    #[test]
    fn posterior_single_component_and_symmetry() {
        let points = vec![vec![0.0f32], vec![1.0f32]];
        let model = fit_gmm(&points, 1, 0).unwrap();
        let post = posterior(&model, &[0.3]);
        assert_eq!(post, vec![1.0]);

        let symmetric = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            variances: vec![vec![0.25], vec![0.25]],
        };
        let post = posterior(&symmetric, &[0.0]);
        assert!((post[0] - 0.5).abs() < 1e-12);
        assert!((post[1] - 0.5).abs() < 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn posterior_saturates_at_component_mean_for_separated_model() {
        // Components 10 sigma apart; a point at component 0's mean.
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![10.0]],
            variances: vec![vec![1.0], vec![1.0]],
        };
        let post = posterior(&model, &[0.0]);
        assert!(post[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn select_k_trivial_cases() {
        let one = vec![vec![0.1f32, 0.2]];
        assert_eq!(select_k(&one, 5, 3).unwrap(), 1);
        let same = vec![vec![0.1f32, 0.2]; 12];
        assert_eq!(select_k(&same, 5, 3).unwrap(), 1);
    }
}
