use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{finish_pair, CodeFamily, CodePair, Truncation};
use crate::error::{Error, Result};
use crate::fock::{accumulate_coherent, FockState, C64};

/// Largest lattice index `max(|2k + mu|, |l|)` a codeword sum may reach.
pub const GKP_WINDOW_CAP: usize = 60;

const MIN_DIM: usize = 16;
const DIM_GUARD: usize = 16;

/// Finite-energy GKP parameters with `alpha` real.
///
/// `Im(beta)` is not free: it is fixed to `pi / (2 alpha)` so that the
/// lattice cell satisfies `beta alpha^* - beta^* alpha = i pi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GkpParams {
    pub alpha: f64,
    pub beta_real: f64,
    pub delta: f64,
}

impl GkpParams {
    pub fn new(alpha: f64, beta_real: f64, delta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta_real.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta_real must be finite, got {beta_real}"
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "delta must be positive, got {delta}"
            )));
        }
        Ok(Self {
            alpha,
            beta_real,
            delta,
        })
    }

    /// Hexagonal lattice, `alpha = sqrt(pi / sqrt 3)` and `Re(beta) = alpha / 2`.
    pub fn hexagonal(delta: f64) -> Self {
        let alpha = (PI / 3f64.sqrt()).sqrt();
        Self {
            alpha,
            beta_real: 0.5 * alpha,
            delta,
        }
    }

    pub fn beta(&self) -> C64 {
        C64::new(self.beta_real, FRAC_PI_2 / self.alpha)
    }
}

/// Cutoff `ceil(-ln(eps_tol) / (2 delta^2))`, never below 16.
pub fn gkp_truncation(delta: f64, eps_tol: f64) -> usize {
    let raw = -eps_tol.ln() / (2.0 * delta * delta);
    // absorb rounding in ln so exact integers do not round up
    let cut = (raw - 1e-9).ceil();
    if cut.is_finite() && cut > MIN_DIM as f64 {
        cut as usize
    } else {
        MIN_DIM
    }
}

/// Envelope-damped norm of a coherent state, `||e^{-delta^2 n}|gamma>||`.
fn damped_norm_sq_rate(delta: f64) -> f64 {
    -(-2.0 * delta * delta).exp_m1()
}

struct Lattice {
    alpha: f64,
    beta: C64,
    radius_sq: f64,
    a_max: i64,
    l_max: i64,
}

impl Lattice {
    fn new(params: &GkpParams, eps_tol: f64) -> Result<Self> {
        let beta = params.beta();
        let rate = damped_norm_sq_rate(params.delta);
        // omitted terms have damped norm exp(-rate |gamma|^2 / 2) < eps_tol / 100
        let radius_sq = 2.0 * (100.0 / eps_tol).ln() / rate;
        let radius = radius_sq.sqrt();
        // extent of the ellipse |a alpha + l beta| <= R in the (a, l) plane
        let a_extent = radius * beta.norm() / (params.alpha * beta.im);
        let l_extent = radius / beta.im;
        let window = a_extent.max(l_extent).ceil();
        if !window.is_finite() || window > GKP_WINDOW_CAP as f64 {
            return Err(Error::LatticeWindow {
                window: if window.is_finite() {
                    window as usize
                } else {
                    usize::MAX
                },
                cap: GKP_WINDOW_CAP,
            });
        }
        Ok(Self {
            alpha: params.alpha,
            beta,
            radius_sq,
            a_max: a_extent.floor() as i64,
            l_max: l_extent.floor() as i64,
        })
    }

    /// Unnormalized `e^{-delta^2 n} sum_{k,l} phase |(2k + mu) alpha + l beta>` on `len` levels.
    fn codeword(&self, logical: u8, delta: f64, len: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); len];
        let damping = delta * delta;
        let mu = logical as i64;
        for l in -self.l_max..=self.l_max {
            let lf = l as f64;
            let half_chord_sq = self.radius_sq - (lf * self.beta.im).powi(2);
            if half_chord_sq < 0.0 {
                continue;
            }
            let half_chord = half_chord_sq.sqrt();
            let lo = ((-half_chord - lf * self.beta.re) / self.alpha).ceil() as i64;
            let hi = ((half_chord - lf * self.beta.re) / self.alpha).floor() as i64;
            let lo = lo.max(-self.a_max - 1);
            let hi = hi.min(self.a_max + 1);
            for a in lo..=hi {
                if (a - mu).rem_euclid(2) != 0 {
                    continue;
                }
                let k = (a - mu) / 2;
                let gamma = C64::new(a as f64 * self.alpha, 0.0) + self.beta * lf;
                if gamma.norm_sqr() > self.radius_sq {
                    continue;
                }
                // e^{-i pi k l} for |0_L>, e^{-i pi (k l + l/2)} for |1_L>
                let sign = if (k * l).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let phase = if mu == 0 {
                    C64::new(sign, 0.0)
                } else {
                    C64::from_polar(sign, -0.5 * PI * lf)
                };
                accumulate_coherent(&mut out, gamma, damping, phase);
            }
        }
        out
    }
}

fn tail_fraction(amplitudes: &[C64], dim: usize) -> f64 {
    let total: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    let tail: f64 = amplitudes[dim.min(amplitudes.len())..]
        .iter()
        .map(|c| c.norm_sqr())
        .sum();
    if total > 0.0 {
        tail / total
    } else {
        f64::INFINITY
    }
}

/// Finite-energy GKP codewords `e^{-delta^2 n}|mu_L>` on a truncated basis.
///
/// The dimension starts at [`gkp_truncation`] plus a guard and grows until
/// the discarded tail of both codewords is below `eps_tol`.
pub fn build_gkp(params: &GkpParams, truncation: &Truncation) -> Result<CodePair> {
    let params = GkpParams::new(params.alpha, params.beta_real, params.delta)?;
    let eps = truncation.eps_tol;
    let lattice = Lattice::new(&params, eps)?;
    let mut dim = (gkp_truncation(params.delta, eps) + DIM_GUARD).min(truncation.max_dim);
    loop {
        let padded = 2 * dim + 32;
        let raw0 = lattice.codeword(0, params.delta, padded);
        let raw1 = lattice.codeword(1, params.delta, padded);
        let tail = tail_fraction(&raw0, dim).max(tail_fraction(&raw1, dim));
        if tail < eps {
            let k0 = FockState::from_slice(&raw0[..dim])?;
            let k1 = FockState::from_slice(&raw1[..dim])?;
            return finish_pair(CodeFamily::Gkp, k0, k1, tail);
        }
        if dim >= truncation.max_dim {
            return Err(Error::Truncation(format!(
                "GKP tail mass {tail:e} at dimension {dim} is not below {eps:e} (cap {})",
                truncation.max_dim
            )));
        }
        dim = ((dim as f64 * 1.25).ceil() as usize).min(truncation.max_dim);
    }
}
