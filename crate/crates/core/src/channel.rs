//! Loss-dephasing Kraus channels in factored form.
//!
//! Loss operators `A_k` have one nonzero band, `<n-k|A_k|n> = a_k(n)`, and
//! dephasing operators `B_l` are diagonal with entries `b_l(n)`. The channel
//! stores those coefficients and materializes `N_i = B_l A_k` on request.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codes::CodePair;
use crate::error::{Error, Result};
use crate::fock::{FockOperator, FockState, C64};

pub const DEFAULT_EPS_KRAUS: f64 = 1e-9;
pub const DEFAULT_COUNT_FLOOR: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub gamma_t: f64,
    pub kappa_t: f64,
}

impl NoisePoint {
    pub fn new(gamma_t: f64, kappa_t: f64) -> Result<Self> {
        for (name, v) in [("gamma_t", gamma_t), ("kappa_t", kappa_t)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self { gamma_t, kappa_t })
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `ln p` and `ln(1 - p)` for the loss probability `p = 1 - e^{-gamma_t}`.
fn loss_logs(gamma_t: f64) -> (f64, f64) {
    ((-(-gamma_t).exp_m1()).ln(), -gamma_t)
}

/// Binomial probabilities `C(n,k) p^k (1-p)^{n-k}` for `k = 0..=n`.
pub fn binomial_pmf(gamma_t: f64, n: usize) -> Vec<f64> {
    if gamma_t == 0.0 {
        let mut out = vec![0.0; n + 1];
        out[0] = 1.0;
        return out;
    }
    let lf = ln_factorials(n);
    let (lp, lq) = loss_logs(gamma_t);
    (0..=n)
        .map(|k| (lf[n] - lf[k] - lf[n - k] + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

/// Poisson probabilities for `l = 0..len`, with `0^0 = 1`.
pub fn poisson_pmf(lambda: f64, len: usize) -> Vec<f64> {
    if lambda == 0.0 {
        let mut out = vec![0.0; len];
        if len > 0 {
            out[0] = 1.0;
        }
        return out;
    }
    let lf = ln_factorials(len);
    let ll = lambda.ln();
    (0..len)
        .map(|l| (-lambda + l as f64 * ll - lf[l]).exp())
        .collect()
}

/// Smallest `k` with `sum_{j > k} pmf[j] < eps`, summing from the top.
fn quantile_from_top(pmf: &[f64], eps: f64) -> usize {
    let mut tail = 0.0;
    for k in (1..pmf.len()).rev() {
        // tail currently holds sum_{j > k}
        if tail + pmf[k] >= eps {
            return k;
        }
        tail += pmf[k];
    }
    0
}

fn poisson_support(lambda: f64) -> usize {
    (lambda + 30.0 * lambda.sqrt() + 60.0).ceil() as usize
}

/// Number of loss operators `max(k_max + 1, floor)`, where `k_max` is the
/// smallest cutoff whose binomial tail at `n_max` is below `eps`.
pub fn loss_count(gamma_t: f64, n_max: usize, eps: f64, floor: usize) -> usize {
    let pmf = binomial_pmf(gamma_t, n_max);
    (quantile_from_top(&pmf, eps) + 1).max(floor)
}

/// Number of dephasing operators `max(l_max + 1, floor)` for the Poisson
/// distribution with mean `kappa_t n_max^2`.
pub fn deph_count(kappa_t: f64, n_max: usize, eps: f64, floor: usize) -> usize {
    let lambda = kappa_t * (n_max as f64).powi(2);
    let pmf = poisson_pmf(lambda, poisson_support(lambda));
    (quantile_from_top(&pmf, eps) + 1).max(floor)
}

/// `a_k(n) = sqrt(C(n,k) p^k e^{-gamma_t (n-k)})` for `k < count`, `n < dim`.
fn loss_coefficients(gamma_t: f64, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let lf = ln_factorials(dim);
    let (lp, lq) = loss_logs(gamma_t);
    (0..count)
        .map(|k| {
            (0..dim)
                .map(|n| {
                    if n < k {
                        0.0
                    } else if gamma_t == 0.0 {
                        if k == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let log = lf[n] - lf[k] - lf[n - k] + k as f64 * lp + (n - k) as f64 * lq;
                        (0.5 * log).exp()
                    }
                })
                .collect()
        })
        .collect()
}

/// `b_l(n) = sqrt(Poisson(l; kappa_t n^2))` for `l < count`, `n < dim`.
fn deph_coefficients(kappa_t: f64, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let lf = ln_factorials(count);
    (0..count)
        .map(|l| {
            (0..dim)
                .map(|n| {
                    let lambda = kappa_t * (n as f64).powi(2);
                    if lambda == 0.0 {
                        if l == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (0.5 * (-lambda + l as f64 * lambda.ln() - lf[l])).exp()
                    }
                })
                .collect()
        })
        .collect()
}

fn check_finite(rows: &[Vec<f64>], what: &str) -> Result<()> {
    if rows.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalConsistency(format!(
            "non-finite {what} coefficient"
        )))
    }
}

fn loss_operator(coeffs: &[f64], k: usize) -> FockOperator {
    let dim = coeffs.len();
    let m = DMatrix::from_fn(dim, dim, |row, col| {
        if col >= k && row == col - k {
            C64::new(coeffs[col], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    FockOperator::from_matrix(m).expect("square by construction")
}

/// Loss operators `A_0 ..= A_{k_max}`.
pub fn build_loss_kraus(gamma_t: f64, dim: usize, k_max: usize) -> Result<Vec<FockOperator>> {
    NoisePoint::new(gamma_t, 0.0)?;
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if k_max >= dim {
        return Err(Error::InvalidArgument(format!(
            "k_max {k_max} must be below dim {dim}"
        )));
    }
    let coeffs = loss_coefficients(gamma_t, dim, k_max + 1);
    check_finite(&coeffs, "loss")?;
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| loss_operator(c, k))
        .collect())
}

/// Diagonal dephasing operators `B_0 ..= B_{l_max}`.
pub fn build_deph_kraus(kappa_t: f64, dim: usize, l_max: usize) -> Result<Vec<FockOperator>> {
    NoisePoint::new(0.0, kappa_t)?;
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let coeffs = deph_coefficients(kappa_t, dim, l_max + 1);
    check_finite(&coeffs, "dephasing")?;
    coeffs
        .iter()
        .map(|row| {
            let diag: Vec<C64> = row.iter().map(|&b| C64::new(b, 0.0)).collect();
            FockOperator::diagonal(&diag)
        })
        .collect()
}

/// Composed channel `N_i = B_l A_k` with `i = l * loss_count + k`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    pub dim: usize,
    pub noise: NoisePoint,
    pub loss_count: usize,
    pub deph_count: usize,
    /// Levels `0..support_levels` on which completeness was certified.
    pub support_levels: usize,
    pub completeness_error: f64,
    pub eps_kraus: f64,
    loss: Vec<Vec<f64>>,
    deph: Vec<Vec<f64>>,
}

impl KrausChannel {
    pub fn len(&self) -> usize {
        self.loss_count * self.deph_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(l, k)` for operator index `i`.
    pub fn split_index(&self, i: usize) -> (usize, usize) {
        (i / self.loss_count, i % self.loss_count)
    }

    /// `a_k(n)` rows, indexed `[k][n]`.
    pub fn loss_coefficients(&self) -> &[Vec<f64>] {
        &self.loss
    }

    /// `b_l(n)` rows, indexed `[l][n]`.
    pub fn deph_coefficients(&self) -> &[Vec<f64>] {
        &self.deph
    }

    pub fn operator(&self, i: usize) -> Result<FockOperator> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "operator index {i} out of range for {} operators",
                self.len()
            )));
        }
        let (l, k) = self.split_index(i);
        let dim = self.dim;
        let (a, b) = (&self.loss[k], &self.deph[l]);
        let m = DMatrix::from_fn(dim, dim, |row, col| {
            if col >= k && row == col - k {
                C64::new(b[row] * a[col], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        FockOperator::from_matrix(m)
    }

    pub fn operators(&self) -> Result<Vec<FockOperator>> {
        (0..self.len()).map(|i| self.operator(i)).collect()
    }

    /// `N_i |psi>` without materializing the operator.
    pub fn apply(&self, i: usize, state: &FockState) -> Result<FockState> {
        if state.dim() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "state dimension {} does not match channel dimension {}",
                state.dim(),
                self.dim
            )));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_into(i, state.amplitudes().as_slice(), &mut out);
        FockState::from_slice(&out)
    }

    pub(crate) fn apply_into(&self, i: usize, psi: &[C64], out: &mut [C64]) {
        let (l, k) = self.split_index(i);
        let (a, b) = (&self.loss[k], &self.deph[l]);
        out.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        for n in k..self.dim {
            out[n - k] = psi[n] * (a[n] * b[n - k]);
        }
    }

    /// `sum_i <n|N_i^dag N_i|n>` for every level.
    pub fn completeness_diagonal(&self) -> Vec<f64> {
        let beta: Vec<f64> = (0..self.dim)
            .map(|m| self.deph.iter().map(|row| row[m] * row[m]).sum())
            .collect();
        (0..self.dim)
            .map(|n| {
                self.loss
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k <= n)
                    .map(|(k, a)| a[n] * a[n] * beta[n - k])
                    .sum()
            })
            .collect()
    }

    /// Largest `|1 - sum_i <n|N_i^dag N_i|n>|` over levels below `support_levels`.
    pub fn certify_completeness(&self, support_levels: usize) -> f64 {
        self.completeness_diagonal()
            .iter()
            .take(support_levels)
            .map(|c| (1.0 - c).abs())
            .fold(0.0, f64::max)
    }

    /// The same channel with the highest-order loss operator removed.
    ///
    /// The result is not re-certified; its `completeness_error` is measured.
    pub fn without_last_loss(&self) -> Result<Self> {
        if self.loss_count < 2 {
            return Err(Error::InvalidArgument(
                "channel has a single loss operator".into(),
            ));
        }
        let mut out = self.clone();
        out.loss.pop();
        out.loss_count -= 1;
        out.completeness_error = out.certify_completeness(out.support_levels);
        Ok(out)
    }
}

/// Support selection for certification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMode {
    /// The code pair's `(1 - eps_kraus)` photon-number quantile.
    #[default]
    Quantile,
    /// Every level below the truncation dimension.
    Strict,
}

impl std::str::FromStr for SupportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quantile" => Ok(SupportMode::Quantile),
            "strict" => Ok(SupportMode::Strict),
            other => Err(Error::Config(format!("unknown support mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelOptions {
    pub eps_kraus: f64,
    pub floors: (usize, usize),
    pub support: SupportMode,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self {
            eps_kraus: DEFAULT_EPS_KRAUS,
            floors: (DEFAULT_COUNT_FLOOR, DEFAULT_COUNT_FLOOR),
            support: SupportMode::Quantile,
        }
    }
}

/// Builds and certifies the loss-dephasing channel.
///
/// Each factor is cut at `eps_kraus / 2`, so the composed defect on levels
/// `0..=n_max_support` stays below `eps_kraus`. A strength of exactly zero
/// contributes a single identity factor.
pub fn compose_channel(
    noise: NoisePoint,
    dim: usize,
    n_max_support: usize,
    eps_kraus: f64,
    floors: (usize, usize),
) -> Result<KrausChannel> {
    let noise = NoisePoint::new(noise.gamma_t, noise.kappa_t)?;
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if !(eps_kraus > 0.0 && eps_kraus < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_kraus must lie in (0, 1), got {eps_kraus}"
        )));
    }
    if n_max_support > dim {
        return Err(Error::InvalidArgument(format!(
            "support level {n_max_support} exceeds dimension {dim}"
        )));
    }
    let n_max = n_max_support.min(dim - 1);
    let half = 0.5 * eps_kraus;
    let loss_count = if noise.gamma_t == 0.0 {
        1
    } else {
        loss_count(noise.gamma_t, n_max, half, floors.0).min(dim)
    };
    let deph_count = if noise.kappa_t == 0.0 {
        1
    } else {
        deph_count(noise.kappa_t, n_max, half, floors.1)
    };
    let loss = loss_coefficients(noise.gamma_t, dim, loss_count);
    let deph = deph_coefficients(noise.kappa_t, dim, deph_count);
    check_finite(&loss, "loss")?;
    check_finite(&deph, "dephasing")?;
    let mut channel = KrausChannel {
        dim,
        noise,
        loss_count,
        deph_count,
        support_levels: n_max + 1,
        completeness_error: 0.0,
        eps_kraus,
        loss,
        deph,
    };
    let eps_trunc = channel.certify_completeness(channel.support_levels);
    if eps_trunc >= eps_kraus {
        return Err(Error::IncompleteChannel { eps_trunc, eps_kraus });
    }
    channel.completeness_error = eps_trunc;
    Ok(channel)
}

/// Support level for a code pair under the given mode.
pub fn support_level(code: &CodePair, options: &ChannelOptions) -> usize {
    match options.support {
        SupportMode::Quantile => code.support_quantile(options.eps_kraus).min(code.dim - 1),
        SupportMode::Strict => code.dim - 1,
    }
}

/// Channel on the code's truncation space, certified on its support.
pub fn channel_for_code(
    code: &CodePair,
    noise: NoisePoint,
    options: &ChannelOptions,
) -> Result<KrausChannel> {
    compose_channel(
        noise,
        code.dim,
        support_level(code, options),
        options.eps_kraus,
        options.floors,
    )
}

/// Peak memory `alpha (d_L N_K)^2 bytes_per_element` of a QEC-matrix evaluation.
pub fn estimate_memory(d_l: usize, n_k: usize, bytes_per_element: usize, alpha_factor: f64) -> f64 {
    let side = (d_l * n_k) as f64;
    alpha_factor * side * side * bytes_per_element as f64
}
