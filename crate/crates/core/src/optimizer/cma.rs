use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const DEFAULT_SIGMA0: f64 = 0.3;
pub const DEFAULT_POPSIZE: usize = 50;
const MAX_CONDITION: f64 = 1e14;

/// Optional overrides of the standard strategy constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CmaConstants {
    pub c_sigma: Option<f64>,
    pub d_sigma: Option<f64>,
    pub c_c: Option<f64>,
    pub c_1: Option<f64>,
    pub c_mu: Option<f64>,
}

/// CMA-ES state in normalized `[0, 1]^d` coordinates.
#[derive(Clone, Debug)]
pub struct CmaState {
    dim: usize,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    generation: usize,
    weights: Vec<f64>,
    popsize: usize,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    seed: u64,
    pending: Option<Vec<DVector<f64>>>,
    reconditions: usize,
}

/// Starts at the box centre with `C = I`.
pub fn cma_init(dim: usize, sigma0: f64, popsize: usize, seed: u64) -> Result<CmaState> {
    CmaState::new(dim, sigma0, popsize, seed, CmaConstants::default())
}

impl CmaState {
    pub fn new(dim: usize, sigma0: f64, popsize: usize, seed: u64, constants: CmaConstants) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpace(
                "search space has no continuous parameters".into(),
            ));
        }
        if popsize < 4 {
            return Err(Error::InvalidArgument(format!(
                "popsize must be at least 4, got {popsize}"
            )));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        let n = dim as f64;
        let mu = popsize / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((popsize as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = constants.c_sigma.unwrap_or((mu_eff + 2.0) / (n + mu_eff + 5.0));
        let d_sigma = constants
            .d_sigma
            .unwrap_or(1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma);
        let c_c = constants
            .c_c
            .unwrap_or((4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n));
        let c_1 = constants.c_1.unwrap_or(2.0 / ((n + 1.3).powi(2) + mu_eff));
        let c_mu = constants
            .c_mu
            .unwrap_or((1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Ok(Self {
            dim,
            mean: DVector::from_element(dim, 0.5),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            path_sigma: DVector::zeros(dim),
            path_c: DVector::zeros(dim),
            generation: 0,
            weights,
            popsize,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            seed,
            pending: None,
            reconditions: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn popsize(&self) -> usize {
        self.popsize
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn reconditions(&self) -> usize {
        self.reconditions
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.scales.max();
        let min = self.scales.min();
        (max * max) / (min * min)
    }

    /// Samples the next population and returns it clipped to the unit box.
    ///
    /// The unclipped samples are kept for the following [`tell`](Self::tell).
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let mut rng = rng_for(self.seed, &[self.generation as u64]);
        let mut raw = Vec::with_capacity(self.popsize);
        for _ in 0..self.popsize {
            let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut rng));
            let y = &self.basis * z.component_mul(&self.scales);
            raw.push(&self.mean + y * self.sigma);
        }
        let repaired = raw
            .iter()
            .map(|x| x.iter().map(|v| v.clamp(0.0, 1.0)).collect())
            .collect();
        self.pending = Some(raw);
        repaired
    }

    /// Updates the distribution from fitness values (larger is better).
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        let raw = self
            .pending
            .take()
            .ok_or_else(|| Error::OptimizationFailure("tell called without a pending ask".into()))?;
        if fitness.len() != raw.len() {
            return Err(Error::OptimizationFailure(format!(
                "expected {} fitness values, got {}",
                raw.len(),
                fitness.len()
            )));
        }
        // stable sort: ties keep sample order, non-finite values rank last
        let key = |f: f64| if f.is_finite() { f } else { f64::NEG_INFINITY };
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| key(fitness[b]).total_cmp(&key(fitness[a])));

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order
            .iter()
            .take(self.weights.len())
            .map(|&i| (&raw[i] - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt_y = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.scales);
        let cs = self.c_sigma;
        self.path_sigma = &self.path_sigma * (1.0 - cs) + inv_sqrt_y * (cs * (2.0 - cs) * self.mu_eff).sqrt();
        let ps_norm = self.path_sigma.norm();
        let generations = (self.generation + 1) as f64;
        let denom = (1.0 - (1.0 - cs).powf(2.0 * generations)).sqrt();
        let h_sigma = if ps_norm / denom < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        let cc = self.c_c;
        self.path_c = &self.path_c * (1.0 - cc) + &y_w * (h_sigma * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        let delta = (1.0 - h_sigma) * cc * (2.0 - cc);
        let weight_sum: f64 = self.weights.iter().sum();
        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += y * y.transpose() * *w;
        }
        self.cov = &self.cov * (1.0 + self.c_1 * delta - self.c_1 - self.c_mu * weight_sum)
            + &self.path_c * self.path_c.transpose() * self.c_1
            + rank_mu * self.c_mu;

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        self.refresh_eigensystem()
    }

    fn refresh_eigensystem(&mut self) -> Result<()> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimizationFailure("covariance became non-finite".into()));
        }
        let max = eig.eigenvalues.max();
        if !(max > 0.0) {
            return Err(Error::OptimizationFailure("covariance collapsed".into()));
        }
        let floor = max / MAX_CONDITION;
        let mut values = eig.eigenvalues.clone();
        let mut changed = false;
        for v in values.iter_mut() {
            if *v < floor {
                *v = floor;
                changed = true;
            }
        }
        if changed {
            self.reconditions += 1;
            log::debug!(
                "covariance re-conditioned at generation {} (seed {})",
                self.generation,
                self.seed
            );
        }
        self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64], target: &[f64]) -> f64 {
        -x.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    #[test]
    fn initial_state() {
        let s = cma_init(3, DEFAULT_SIGMA0, DEFAULT_POPSIZE, 1).unwrap();
        assert_eq!(s.mean(), &[0.5, 0.5, 0.5]);
        assert_eq!(s.sigma(), 0.3);
        let s = cma_init(2, 0.3, 4, 1).unwrap();
        assert_eq!(s.weights().len(), 2);
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(cma_init(2, 0.3, 3, 1).is_err());
        assert!(cma_init(0, 0.3, 10, 1).is_err());
    }

    #[test]
    fn same_seed_same_population() {
        let mut a = cma_init(4, 0.3, 10, 99).unwrap();
        let mut b = cma_init(4, 0.3, 10, 99).unwrap();
        assert_eq!(a.ask(), b.ask());
        let mut c = cma_init(4, 0.3, 10, 100).unwrap();
        assert_ne!(a.ask(), c.ask());
    }

    #[test]
    fn samples_inside_box() {
        let mut s = cma_init(3, 5.0, 40, 3).unwrap();
        for x in s.ask() {
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn tiny_sigma_collapses_to_mean() {
        let mut s = cma_init(2, 1e-300, 8, 3).unwrap();
        for x in s.ask() {
            assert_eq!(x, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn sphere_converges() {
        let target = [0.2, 0.7, 0.45, 0.9, 0.33];
        let mut s = cma_init(5, 0.3, 50, 11).unwrap();
        let mut best = f64::NEG_INFINITY;
        for _ in 0..200 {
            let pop = s.ask();
            let fit: Vec<f64> = pop.iter().map(|x| sphere(x, &target)).collect();
            best = fit.iter().copied().fold(best, f64::max);
            s.tell(&fit).unwrap();
            if best > -1e-12 {
                break;
            }
        }
        assert!(best > -1e-12, "best {best}");
    }

    #[test]
    fn identical_fitness_is_well_defined() {
        let mut s = cma_init(3, 0.3, 12, 5).unwrap();
        for _ in 0..5 {
            let pop = s.ask();
            s.tell(&vec![1.0; pop.len()]).unwrap();
        }
        assert!(s.mean().iter().all(|v| v.is_finite()));
        assert!(s.sigma().is_finite() && s.sigma() > 0.0);
    }

    #[test]
    fn non_finite_fitness_ranked_last() {
        let mut s = cma_init(2, 0.3, 6, 5).unwrap();
        let pop = s.ask();
        let mut fit: Vec<f64> = pop.iter().map(|x| sphere(x, &[0.3, 0.3])).collect();
        fit[0] = f64::NAN;
        fit[1] = f64::INFINITY;
        s.tell(&fit).unwrap();
        assert!(s.mean().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tell_requires_ask() {
        let mut s = cma_init(2, 0.3, 6, 5).unwrap();
        assert!(s.tell(&[0.0; 6]).is_err());
        s.ask();
        assert!(s.tell(&[0.0; 5]).is_err());
    }

    #[test]
    fn covariance_stays_symmetric_positive() {
        let mut s = cma_init(3, 0.3, 10, 8).unwrap();
        for _ in 0..100 {
            let pop = s.ask();
            // strongly ill-conditioned objective
            let fit: Vec<f64> = pop
                .iter()
                .map(|x| -(1e6 * (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) + 1e-3 * (x[2] - 0.5).powi(2)))
                .collect();
            s.tell(&fit).unwrap();
            let c = s.covariance();
            assert_eq!(c, &c.transpose());
            assert!(s.condition_number() <= MAX_CONDITION * 1.0001);
        }
    }
}
