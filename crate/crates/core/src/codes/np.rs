use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{finish_pair, CodeFamily, CodePair, Truncation};
use crate::error::{Error, Result};
use crate::fock::{displace_real, guard_levels, squeeze_real, FockState, C64};

/// Number-phase code parameters: skewness `f`, spacing `s`, envelope squeezing
/// `r` and envelope mean photon number `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpParams {
    pub f: f64,
    pub s: u32,
    pub r: f64,
    pub n: f64,
}

impl NpParams {
    pub fn new(f: f64, s: u32, r: f64, n: f64) -> Result<Self> {
        if !f.is_finite() || !r.is_finite() || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite NP parameters f={f}, r={r}, n={n}"
            )));
        }
        if s == 0 {
            return Err(Error::InvalidArgument("spacing s must be positive".into()));
        }
        let min = r.sinh().powi(2);
        if n < min {
            return Err(Error::InvalidEnvelope { n, min });
        }
        Ok(Self { f, s, r, n })
    }

    /// Real displacement of the envelope, `sqrt(n - sinh^2 r)`.
    pub fn envelope_alpha(&self) -> f64 {
        (self.n - self.r.sinh().powi(2)).max(0.0).sqrt()
    }
}

/// Envelope amplitudes `theta_m = <m|D(alpha_env) S(r)|0>` for `m < len`.
///
/// The unitaries act on a space padded by [`guard_levels`] so the returned
/// amplitudes are free of truncation-edge artefacts.
pub fn np_envelope(params: &NpParams, len: usize) -> Result<Vec<C64>> {
    let params = NpParams::new(params.f, params.s, params.r, params.n)?;
    let alpha = params.envelope_alpha();
    let padded = len + guard_levels(alpha, params.r) + 8;
    let mut state = vec![0.0; padded];
    state[0] = 1.0;
    if params.r != 0.0 {
        state = squeeze_real(params.r, &state)?;
    }
    if alpha != 0.0 {
        state = displace_real(alpha, &state)?;
    }
    Ok(state.iter().take(len).map(|&x| C64::new(x, 0.0)).collect())
}

fn quadratic_phase(f: f64, s: u32, level: usize) -> C64 {
    if f == 0.0 {
        return C64::new(1.0, 0.0);
    }
    let n = level as f64;
    let s = s as f64;
    C64::from_polar(1.0, -f * PI * n * n / (2.0 * s * s))
}

/// Unnormalized `|+>_L` and `|->_L` on `dim` levels built from `theta`.
pub fn np_plus_minus(params: &NpParams, theta: &[C64], dim: usize) -> Result<(FockState, FockState)> {
    let s = params.s as usize;
    let mut plus = vec![C64::new(0.0, 0.0); dim];
    let mut minus = vec![C64::new(0.0, 0.0); dim];
    for (m, &t) in theta.iter().enumerate() {
        let level = s * m;
        if level >= dim {
            break;
        }
        let amp = t * quadratic_phase(params.f, params.s, level);
        plus[level] = amp;
        minus[level] = if m % 2 == 0 { amp } else { -amp };
    }
    Ok((FockState::from_slice(&plus)?, FockState::from_slice(&minus)?))
}

fn provisional_dim(params: &NpParams) -> f64 {
    let s = params.s as f64;
    let sh2 = params.r.sinh().powi(2);
    let ch2 = params.r.cosh().powi(2);
    let spread = params.n + 3.0 * sh2 * ch2 + params.n * (2.0 * params.r.abs()).exp();
    2.0 * s * spread + 8.0 * s
}

/// Largest relative weight either logical codeword places on levels `>= dim`.
fn codeword_tail(theta: &[C64], s: usize, dim: usize) -> f64 {
    let first_out = dim.div_ceil(s);
    let mut total = [0.0f64; 2];
    let mut tail = [0.0f64; 2];
    for (m, t) in theta.iter().enumerate() {
        let w = t.norm_sqr();
        total[m % 2] += w;
        if m >= first_out {
            tail[m % 2] += w;
        }
    }
    (0..2)
        .map(|i| {
            if total[i] > 0.0 {
                tail[i] / total[i]
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn grow(params: &NpParams, truncation: &Truncation) -> Result<(usize, Vec<C64>, f64)> {
    let s = params.s as usize;
    let cap = truncation.max_dim;
    let mut dim = (provisional_dim(params).ceil() as usize).clamp(2, cap);
    loop {
        // envelope terms well past the cutoff, so the tail is measured rather than assumed
        let len = dim.div_ceil(s) + 32;
        let theta = np_envelope(params, len)?;
        let tail = codeword_tail(&theta, s, dim);
        if tail < truncation.eps_tol {
            return Ok((dim, theta, tail));
        }
        if dim >= cap {
            return Err(Error::Truncation(format!(
                "NP tail mass {tail:e} at dimension {dim} is not below {:e} (cap {cap})",
                truncation.eps_tol
            )));
        }
        dim = ((dim as f64 * 1.5).ceil() as usize).min(cap);
    }
}

/// Truncation dimension at which both NP codewords have tail below `eps_tol`.
pub fn np_truncation(params: &NpParams, truncation: &Truncation) -> Result<usize> {
    let params = NpParams::new(params.f, params.s, params.r, params.n)?;
    grow(&params, truncation).map(|(dim, _, _)| dim)
}

/// Finite-energy number-phase codewords with a displaced squeezed envelope.
pub fn build_np(params: &NpParams, truncation: &Truncation) -> Result<CodePair> {
    let params = NpParams::new(params.f, params.s, params.r, params.n)?;
    let (dim, theta, tail) = grow(&params, truncation)?;
    let (plus, minus) = np_plus_minus(&params, &theta, dim)?;
    let root = std::f64::consts::FRAC_1_SQRT_2;
    let zero = FockState::new((plus.amplitudes() + minus.amplitudes()) * C64::new(root, 0.0))?;
    let one = FockState::new((plus.amplitudes() - minus.amplitudes()) * C64::new(root, 0.0))?;
    finish_pair(CodeFamily::Np, zero, one, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{number_translation, rotation};

    fn poisson_amplitude(alpha: f64, m: usize) -> f64 {
        let log = -0.5 * alpha * alpha + m as f64 * alpha.ln()
            - 0.5 * (1..=m).map(|k| (k as f64).ln()).sum::<f64>();
        log.exp()
    }

    #[test]
    fn envelope_matches_coherent_amplitudes() {
        let p = NpParams::new(0.0, 1, 0.0, 2.5).unwrap();
        let theta = np_envelope(&p, 30).unwrap();
        let alpha = 2.5f64.sqrt();
        for (m, t) in theta.iter().enumerate() {
            assert!(
                (t - C64::new(poisson_amplitude(alpha, m), 0.0)).norm() < 1e-10,
                "m={m}"
            );
        }
    }

    #[test]
    fn envelope_mean_matches_n() {
        for &(r, n) in &[(0.0, 1.0), (0.3, 2.0), (-0.4, 4.0), (0.4, 1.0)] {
            let p = NpParams::new(0.0, 1, r, n).unwrap();
            let theta = np_envelope(&p, 80).unwrap();
            let mean: f64 = theta
                .iter()
                .enumerate()
                .map(|(m, t)| m as f64 * t.norm_sqr())
                .sum();
            assert!((mean - n).abs() < 1e-8, "r={r} n={n} mean={mean}");
        }
    }

    #[test]
    fn invalid_envelope_rejected() {
        let err = NpParams::new(0.0, 2, 1.0, 0.5);
        assert!(matches!(err, Err(Error::InvalidEnvelope { .. })));
        assert!(NpParams::new(0.0, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cat_code_limit() {
        let p = NpParams::new(0.0, 1, 0.0, 1.0).unwrap();
        let code = build_np(&p, &Truncation::default()).unwrap();
        assert!(code.tail_mass < 1e-8);
        let c0 = code.ket0.amplitudes();
        let c1 = code.ket1.amplitudes();
        // even and odd coherent-state superpositions
        let even_norm: f64 = (0..40)
            .step_by(2)
            .map(|m| poisson_amplitude(1.0, m).powi(2))
            .sum::<f64>()
            .sqrt();
        for m in 0..code.dim {
            let expected = poisson_amplitude(1.0, m) / even_norm;
            if m % 2 == 0 {
                assert!((c0[m].re - expected).abs() < 1e-9);
                assert_eq!(c1[m], C64::new(0.0, 0.0));
            } else {
                assert_eq!(c0[m], C64::new(0.0, 0.0));
            }
        }
        assert_eq!(code.raw_overlap, C64::new(0.0, 0.0));
    }

    #[test]
    fn plus_state_mean_photon() {
        let p = NpParams::new(0.3, 3, 0.2, 2.0).unwrap();
        let theta = np_envelope(&p, 60).unwrap();
        let (plus, _) = np_plus_minus(&p, &theta, 180).unwrap();
        let mean: f64 = plus
            .probabilities()
            .iter()
            .enumerate()
            .map(|(k, w)| k as f64 * w)
            .sum::<f64>()
            / plus.norm().powi(2);
        let target: f64 = theta
            .iter()
            .enumerate()
            .map(|(m, t)| t.norm_sqr() * 3.0 * m as f64)
            .sum();
        assert!((mean - target).abs() < 1e-9);
        assert!((mean - 6.0).abs() < 1e-6);
    }

    #[test]
    fn zero_skew_has_real_amplitudes() {
        let p = NpParams::new(0.0, 2, 0.0, 2.0).unwrap();
        let code = build_np(&p, &Truncation::default()).unwrap();
        assert!(code.ket0.amplitudes().iter().all(|c| c.im.abs() < 1e-14));
    }

    #[test]
    fn truncation_examples() {
        let t = Truncation::default();
        let small = np_truncation(&NpParams::new(0.0, 1, 0.0, 1.0).unwrap(), &t).unwrap();
        assert!(small <= 40);
        let s5 = np_truncation(&NpParams::new(0.0, 5, 0.0, 4.0).unwrap(), &t).unwrap();
        assert!(s5 >= 40);
        let flat = np_truncation(&NpParams::new(0.0, 2, 0.0, 4.0).unwrap(), &t).unwrap();
        let squeezed = np_truncation(&NpParams::new(0.0, 2, 0.4, 4.0).unwrap(), &t).unwrap();
        assert!(squeezed > flat);
    }

    #[test]
    fn truncation_cap_reported() {
        let t = Truncation::new(1e-8, 30).unwrap();
        let err = build_np(&NpParams::new(0.0, 5, 0.0, 4.0).unwrap(), &t);
        assert!(matches!(err, Err(Error::Truncation(_))));
    }

    #[test]
    fn support_on_multiples_of_s() {
        let p = NpParams::new(0.5, 3, 0.1, 3.0).unwrap();
        let code = build_np(&p, &Truncation::default()).unwrap();
        for ket in code.kets() {
            for (k, c) in ket.amplitudes().iter().enumerate() {
                if k % 3 != 0 {
                    assert_eq!(*c, C64::new(0.0, 0.0));
                }
            }
        }
    }

    /// `<mu_L|S_X|mu_L>` from the envelope alone: `2 sum theta_m theta_{m-2}` over one parity.
    fn shift_overlap_oracle(theta: &[C64], parity: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for m in (parity..theta.len()).step_by(2) {
            den += theta[m].norm_sqr();
            if m >= 2 {
                num += (theta[m].conj() * theta[m - 2]).re;
            }
        }
        num / den
    }

    #[test]
    fn number_phase_stabilizers() {
        // S_Z = R(2 pi / s); S_X = e^{i 2 f pi} R(2 f pi / s) Sigma_{2s}
        let (f, s) = (0.5, 2u32);
        for &(n, floor) in &[(4.0, 0.84), (8.0, 0.9)] {
            let p = NpParams::new(f, s, 0.0, n).unwrap();
            let code = build_np(&p, &Truncation::default()).unwrap();
            let theta = np_envelope(&p, code.dim).unwrap();
            let dim = code.dim;
            let sz = rotation(2.0 * PI / s as f64, dim).unwrap();
            let shift = number_translation(2 * s as usize, dim).unwrap();
            let sx = rotation(2.0 * f * PI / s as f64, dim)
                .unwrap()
                .compose(&shift)
                .unwrap();
            let global = C64::from_polar(1.0, 2.0 * f * PI);
            for (mu, ket) in code.kets().iter().enumerate() {
                let z = ket.inner(&sz.apply(ket).unwrap());
                assert!((z - C64::new(1.0, 0.0)).norm() < 1e-12);
                let x = ket.inner(&sx.apply(ket).unwrap()) * global;
                assert!(x.im.abs() < 1e-9, "{x}");
                assert!((x.re - shift_overlap_oracle(&theta, mu)).abs() < 1e-9);
                assert!(x.re > floor, "n={n}: {x}");
            }
        }
    }
}
