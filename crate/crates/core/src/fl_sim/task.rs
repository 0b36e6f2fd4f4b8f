//! Synthetic ridge-regression tasks with known optimum and curvature.
//!
//! User `i` holds `n_i` samples and the loss
//! `F_i(w) = |A_i w - b_i|^2 / (2 n_i) + (lambda / 2) |w|^2` with
//! `lambda = mu / 2`. The sample covariance `A_i^T A_i / n_i` is built with a
//! prescribed spectrum whose extremes are `mu - lambda` and `L - lambda`, so every
//! `F_i` is exactly `mu`-strongly convex and `L`-smooth (for `d >= 2`). Targets
//! are chosen so that `F_i` is minimised at a chosen point `t_i`; the spread of
//! the `t_i` sets the divergence between the global and local optima.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crypto::Seed;
use crate::error::{Error, Result};

/// Shape of the synthetic data; cohort size and dimension come from the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    /// Fewest samples any user holds (at least `dim`).
    pub samples_min: usize,
    /// Most samples any user holds.
    pub samples_max: usize,
    /// Distance scale of the local optima from their common centre.
    pub heterogeneity: f64,
    /// Norm scale of the common centre.
    pub scale: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            samples_min: 40,
            samples_max: 80,
            heterogeneity: 0.5,
            scale: 3.0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.samples_min < dim.max(1) {
            return Err(Error::config(
                "task.samples_min",
                format!("must be at least dim = {dim}"),
            ));
        }
        if self.samples_max < self.samples_min {
            return Err(Error::config("task.samples_max", "must be at least samples_min"));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return Err(Error::config("task.heterogeneity", "must be finite and non-negative"));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::config("task.scale", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One user's data and the quadratic form of its loss.
#[derive(Clone, Debug)]
pub struct LocalDataset {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// beta_i = n_i / sum of n_j.
    pub weight: f64,
    pub ridge: f64,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl LocalDataset {
    pub fn new(features: DMatrix<f64>, targets: DVector<f64>, weight: f64, ridge: f64) -> Self {
        let n = features.nrows() as f64;
        let d = features.ncols();
        let hessian = features.tr_mul(&features) / n + DMatrix::identity(d, d) * ridge;
        let linear = features.tr_mul(&targets) / n;
        let constant = targets.norm_squared() / (2.0 * n);
        LocalDataset {
            features,
            targets,
            weight,
            ridge,
            hessian,
            linear,
            constant,
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.hessian * w)) - self.linear.dot(w) + self.constant
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.hessian * w - &self.linear
    }

    /// Mean gradient over the given sample indices, plus the ridge term.
    pub fn batch_gradient(&self, w: &DVector<f64>, batch: &[usize]) -> DVector<f64> {
        let mut g = w * self.ridge;
        let scale = 1.0 / batch.len() as f64;
        for &k in batch {
            let row = self.features.row(k);
            let residual = row.dot(&w.transpose()) - self.targets[k];
            g.axpy(residual * scale, &row.transpose(), 1.0);
        }
        g
    }

    /// (smallest, largest) Hessian eigenvalue.
    pub fn curvature(&self) -> (f64, f64) {
        spectrum_bounds(&self.hessian)
    }
}

/// A federated ridge problem with its exact solution.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub datasets: Vec<LocalDataset>,
    pub optimum: DVector<f64>,
    pub optimal_loss: f64,
    pub local_optima: Vec<DVector<f64>>,
    /// Gamma = F* - sum_i beta_i F_i*.
    pub divergence: f64,
    pub mu: f64,
    pub smoothness: f64,
}

impl SyntheticTask {
    pub fn users(&self) -> usize {
        self.datasets.len()
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.datasets.iter().map(|d| d.weight).collect()
    }

    /// Global objective F(w) = sum_i beta_i F_i(w).
    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        self.datasets.iter().map(|d| d.weight * d.loss(w)).sum()
    }

    pub fn gap(&self, w: &DVector<f64>) -> f64 {
        self.loss(w) - self.optimal_loss
    }
}

fn spectrum_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    (eig.min(), eig.max())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Builds the per-user datasets and the exact global optimum.
pub fn make_synthetic_task(
    users: usize,
    dim: usize,
    mu: f64,
    smoothness: f64,
    spec: &TaskSpec,
    seed: &Seed,
) -> Result<SyntheticTask> {
    if users == 0 {
        return Err(Error::config("users", "need at least one user"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::config("mu", "must be positive"));
    }
    if !(smoothness >= mu && smoothness.is_finite()) {
        return Err(Error::config("L", "must be finite and at least mu"));
    }
    spec.validate(dim)?;
    let mut rng = ChaCha8Rng::from_seed(*seed.as_bytes());
    let ridge = mu / 2.0;
    let center = gaussian_vector(&mut rng, dim) * (spec.scale / (dim as f64).sqrt());

    let sizes: Vec<usize> = (0..users)
        .map(|_| rng.random_range(spec.samples_min..=spec.samples_max))
        .collect();
    let total: usize = sizes.iter().sum();

    let mut datasets = Vec::with_capacity(users);
    let mut local_optima = Vec::with_capacity(users);
    for &n in &sizes {
        // Covariance eigenvalues: endpoints pinned, interior uniform.
        let (lo, hi) = (mu - ridge, smoothness - ridge);
        let mut spectrum: Vec<f64> = (0..dim)
            .map(|k| match k {
                0 => lo,
                k if k == dim - 1 => hi,
                _ => rng.random_range(lo..=hi),
            })
            .collect();
        spectrum.sort_by(f64::total_cmp);
        let rotation = gaussian_matrix(&mut rng, dim, dim).qr().q();
        let frame = gaussian_matrix(&mut rng, n, dim).qr().q();
        let root = DMatrix::from_diagonal(&DVector::from_iterator(dim, spectrum.iter().map(|e| e.sqrt())));
        let features = frame * root * rotation.transpose() * (n as f64).sqrt();

        let local = &center + gaussian_vector(&mut rng, dim) * (spec.heterogeneity / (dim as f64).sqrt());
        // With H = A^T A / n: A^T b / n = (H + ridge) t  gives  argmin F_i = t.
        let inverse_spectrum = DMatrix::from_diagonal(&DVector::from_iterator(dim, spectrum.iter().map(|e| 1.0 / e)));
        let h_inv_t = &rotation * inverse_spectrum * rotation.transpose() * &local;
        let targets = &features * (&local + h_inv_t * ridge);
        datasets.push(LocalDataset::new(features, targets, n as f64 / total as f64, ridge));
        local_optima.push(local);
    }

    let hessian = datasets
        .iter()
        .fold(DMatrix::zeros(dim, dim), |acc, d| acc + d.hessian() * d.weight);
    let linear = datasets
        .iter()
        .fold(DVector::zeros(dim), |acc, d| acc + &d.linear * d.weight);
    let optimum = Cholesky::new(hessian)
        .ok_or_else(|| Error::config("task", "global Hessian is not positive definite"))?
        .solve(&linear);
    let mut task = SyntheticTask {
        datasets,
        optimum,
        optimal_loss: 0.0,
        local_optima,
        divergence: 0.0,
        mu,
        smoothness,
    };
    task.optimal_loss = task.loss(&task.optimum);
    task.divergence = task.optimal_loss
        - task
            .datasets
            .iter()
            .zip(&task.local_optima)
            .map(|(d, t)| d.weight * d.loss(t))
            .sum::<f64>();
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(users: usize, heterogeneity: f64) -> SyntheticTask {
        let spec = TaskSpec {
            heterogeneity,
            ..Default::default()
        };
        make_synthetic_task(users, 6, 0.5, 4.0, &spec, &Seed::from_u64(3)).unwrap()
    }

    #[test]
    fn curvature_matches_the_request() {
        let t = task(4, 0.5);
        for d in &t.datasets {
            let (lo, hi) = d.curvature();
            assert!((lo - 0.5).abs() < 1e-9, "mu read back as {lo}");
            assert!((hi - 4.0).abs() < 1e-9, "L read back as {hi}");
        }
        let w: f64 = t.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_optima_are_stationary() {
        let t = task(3, 0.8);
        for (d, opt) in t.datasets.iter().zip(&t.local_optima) {
            assert!(d.gradient(opt).norm() < 1e-9);
        }
        assert!(t.divergence > 0.0);
    }

    #[test]
    fn homogeneous_users_share_the_optimum() {
        let t = task(5, 0.0);
        assert!(t.divergence.abs() < 1e-9, "Gamma = {}", t.divergence);
        for opt in &t.local_optima {
            assert!((opt - &t.optimum).norm() < 1e-9);
        }
    }

    #[test]
    fn single_user_optimum_solves_the_normal_equations() {
        let t = task(1, 0.3);
        let d = &t.datasets[0];
        let n = d.len() as f64;
        // (A^T A / n + lambda I) w = A^T b / n, solved by LU as an independent route.
        let lhs = d.features.tr_mul(&d.features) / n + DMatrix::identity(6, 6) * d.ridge;
        let rhs = d.features.tr_mul(&d.targets) / n;
        let direct = lhs.lu().solve(&rhs).unwrap();
        assert!((direct - &t.optimum).norm() < 1e-9);
    }

    #[test]
    fn loss_and_gradients_agree_with_the_samples() {
        let t = task(2, 0.5);
        let d = &t.datasets[1];
        let w = DVector::from_fn(6, |i, _| i as f64 * 0.1 - 0.2);
        let residual = &d.features * &w - &d.targets;
        let direct = residual.norm_squared() / (2.0 * d.len() as f64) + d.ridge / 2.0 * w.norm_squared();
        assert!((d.loss(&w) - direct).abs() < 1e-9 * direct.max(1.0));
        let all: Vec<usize> = (0..d.len()).collect();
        assert!((d.batch_gradient(&w, &all) - d.gradient(&w)).norm() < 1e-9);
        let g = t
            .datasets
            .iter()
            .fold(DVector::zeros(6), |acc, d| acc + d.gradient(&t.optimum) * d.weight);
        assert!(g.norm() < 1e-9);
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = TaskSpec {
            samples_min: 3,
            ..Default::default()
        };
        assert!(matches!(
            make_synthetic_task(2, 6, 1.0, 2.0, &spec, &Seed::default()),
            Err(Error::Config { field, .. }) if field == "task.samples_min"
        ));
        assert!(make_synthetic_task(2, 6, 2.0, 1.0, &TaskSpec::default(), &Seed::default()).is_err());
    }
}
