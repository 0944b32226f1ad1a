//! Logical codeword pairs for GKP, number-phase and trivial Fock encodings.

mod gkp;
mod np;

pub use gkp::{build_gkp, gkp_truncation, GkpParams, GKP_WINDOW_CAP};
pub use np::{build_np, np_envelope, np_plus_minus, np_truncation, NpParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockState, C64};

pub const DEFAULT_EPS_TOL: f64 = 1e-8;
pub const HARD_DIM_CAP: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Gkp,
    Np,
    #[serde(rename = "trivial")]
    TrivialFock,
}

impl CodeFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodeFamily::Gkp => "gkp",
            CodeFamily::Np => "np",
            CodeFamily::TrivialFock => "trivial",
        }
    }
}

impl std::fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CodeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gkp" => Ok(CodeFamily::Gkp),
            "np" => Ok(CodeFamily::Np),
            "trivial" | "fock" => Ok(CodeFamily::TrivialFock),
            other => Err(Error::Config(format!("unknown code family '{other}'"))),
        }
    }
}

/// Truncation tolerance and the largest dimension construction may grow to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub eps_tol: f64,
    pub max_dim: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            eps_tol: DEFAULT_EPS_TOL,
            max_dim: HARD_DIM_CAP,
        }
    }
}

impl Truncation {
    pub fn new(eps_tol: f64, max_dim: usize) -> Result<Self> {
        if !(eps_tol > 0.0 && eps_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_tol must lie in (0, 1), got {eps_tol}"
            )));
        }
        if max_dim < 2 {
            return Err(Error::InvalidDimension(max_dim));
        }
        Ok(Self { eps_tol, max_dim })
    }
}

/// Two orthonormal logical codewords and their construction metadata.
#[derive(Clone, Debug)]
pub struct CodePair {
    pub family: CodeFamily,
    pub dim: usize,
    pub ket0: FockState,
    pub ket1: FockState,
    /// `<0_L|1_L>` before orthogonalization.
    pub raw_overlap: C64,
    /// Photon statistics of the maximally mixed logical state.
    pub mean_photon: f64,
    pub photon_variance: f64,
    /// Largest probability weight either codeword had above `dim`.
    pub tail_mass: f64,
}

/// Serializable digest of a [`CodePair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSummary {
    pub family: CodeFamily,
    pub dim: usize,
    pub raw_overlap_abs: f64,
    pub mean_photon: f64,
    pub photon_variance: f64,
    pub tail_mass: f64,
}

impl CodePair {
    pub(crate) fn assemble(
        family: CodeFamily,
        ket0: FockState,
        ket1: FockState,
        raw_overlap: C64,
        tail_mass: f64,
    ) -> Result<Self> {
        let dim = ket0.dim();
        if ket1.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "codeword dimensions differ: {} vs {}",
                dim,
                ket1.dim()
            )));
        }
        let p0 = ket0.probabilities();
        let p1 = ket1.probabilities();
        let mixed: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| 0.5 * (a + b)).collect();
        let stats = PhotonStats::from_probabilities(mixed);
        Ok(Self {
            family,
            dim,
            ket0,
            ket1,
            raw_overlap,
            mean_photon: stats.mean,
            photon_variance: stats.variance,
            tail_mass,
        })
    }

    /// Normalizes and orthogonalizes two arbitrary states into a code pair.
    pub fn from_states(family: CodeFamily, raw0: FockState, raw1: FockState) -> Result<Self> {
        finish_pair(family, raw0, raw1, 0.0)
    }

    pub fn kets(&self) -> [&FockState; 2] {
        [&self.ket0, &self.ket1]
    }

    /// Photon distribution of the maximally mixed logical state.
    pub fn mixed_probabilities(&self) -> Vec<f64> {
        self.ket0
            .probabilities()
            .iter()
            .zip(self.ket1.probabilities())
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Smallest level `L` such that both codewords carry less than `eps`
    /// probability above `L`.
    pub fn support_quantile(&self, eps: f64) -> usize {
        let level = |probs: Vec<f64>| {
            let mut tail = 0.0;
            for n in (0..probs.len()).rev() {
                tail += probs[n];
                if tail >= eps {
                    return n;
                }
            }
            0
        };
        level(self.ket0.probabilities()).max(level(self.ket1.probabilities()))
    }

    pub fn summary(&self) -> CodeSummary {
        CodeSummary {
            family: self.family,
            dim: self.dim,
            raw_overlap_abs: self.raw_overlap.norm(),
            mean_photon: self.mean_photon,
            photon_variance: self.photon_variance,
            tail_mass: self.tail_mass,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotonStats {
    pub mean: f64,
    pub variance: f64,
    probabilities: Vec<f64>,
}

impl PhotonStats {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (n, p) in probabilities.iter().enumerate() {
            let n = n as f64;
            mean += n * p;
            second += n * n * p;
        }
        Self {
            mean,
            variance: (second - mean * mean).max(0.0),
            probabilities,
        }
    }

    /// Probability weight on levels `>= level`.
    pub fn tail_mass_at(&self, level: usize) -> f64 {
        self.probabilities.iter().skip(level).sum()
    }
}

pub fn photon_stats(state: &FockState) -> PhotonStats {
    PhotonStats::from_probabilities(state.probabilities())
}

/// Symmetric (Lowdin) orthonormalization of two normalized states.
///
/// Returns the orthonormal pair and the input overlap `<a|b>`.
pub fn lowdin_pair(a: &FockState, b: &FockState) -> Result<(FockState, FockState, C64)> {
    let overlap = a.inner(b);
    let s = overlap.norm();
    if s >= 1.0 - 1e-9 {
        return Err(Error::NumericalConsistency(format!(
            "codewords are nearly linearly dependent (|overlap| = {s})"
        )));
    }
    if s == 0.0 {
        return Ok((a.clone(), b.clone(), overlap));
    }
    // S^{-1/2} for S = [[1, s u], [s u*, 1]] is c I + d J with J = [[0, u], [u*, 0]].
    let u = overlap / s;
    let plus = (1.0 + s).powf(-0.5);
    let minus = (1.0 - s).powf(-0.5);
    let c = 0.5 * (plus + minus);
    let d = 0.5 * (plus - minus);
    let va = a.amplitudes();
    let vb = b.amplitudes();
    let new_a = va * C64::new(c, 0.0) + vb * (u.conj() * d);
    let new_b = vb * C64::new(c, 0.0) + va * (u * d);
    Ok((FockState::new(new_a)?, FockState::new(new_b)?, overlap))
}

/// `|0>` and `|1>` as the two codewords.
pub fn build_trivial_fock(dim: usize) -> Result<CodePair> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    CodePair::assemble(
        CodeFamily::TrivialFock,
        FockState::basis(dim, 0)?,
        FockState::basis(dim, 1)?,
        C64::new(0.0, 0.0),
        0.0,
    )
}

/// Normalizes both states, orthogonalizes them and records statistics.
pub(crate) fn finish_pair(
    family: CodeFamily,
    raw0: FockState,
    raw1: FockState,
    tail_mass: f64,
) -> Result<CodePair> {
    let k0 = raw0.normalized()?;
    let k1 = raw1.normalized()?;
    let (o0, o1, overlap) = lowdin_pair(&k0, &k1)?;
    CodePair::assemble(family, o0, o1, overlap, tail_mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_code_is_standard_basis() {
        let code = build_trivial_fock(2).unwrap();
        assert_eq!(code.ket0, FockState::basis(2, 0).unwrap());
        assert_eq!(code.ket1, FockState::basis(2, 1).unwrap());
        assert_eq!(code.ket0.inner(&code.ket1), C64::new(0.0, 0.0));
        assert_eq!(code.mean_photon, 0.5);
        assert!(matches!(build_trivial_fock(1), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn stats_of_vacuum() {
        let s = photon_stats(&FockState::vacuum(5).unwrap());
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.tail_mass_at(1), 0.0);
    }

    #[test]
    fn stats_of_coherent_state() {
        let s = photon_stats(&FockState::coherent(C64::new(1.0, 0.0), 40).unwrap());
        assert!((s.mean - 1.0).abs() < 1e-6);
        assert!((s.variance - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stats_of_squeezed_vacuum() {
        let dim = 60;
        let psi = crate::fock::squeeze(0.4, dim)
            .unwrap()
            .apply(&FockState::vacuum(dim).unwrap())
            .unwrap();
        let s = photon_stats(&psi);
        assert!((s.mean - 0.4f64.sinh().powi(2)).abs() < 1e-6);
    }

    fn sample_pair() -> (FockState, FockState) {
        let a = FockState::from_slice(&[
            C64::new(0.6, 0.1),
            C64::new(0.3, -0.2),
            C64::new(0.1, 0.4),
            C64::new(-0.2, 0.0),
        ])
        .unwrap()
        .normalized()
        .unwrap();
        let b = FockState::from_slice(&[
            C64::new(0.5, 0.0),
            C64::new(-0.1, 0.3),
            C64::new(0.2, 0.2),
            C64::new(0.4, -0.3),
        ])
        .unwrap()
        .normalized()
        .unwrap();
        (a, b)
    }

    #[test]
    fn lowdin_output_is_orthonormal() {
        let (a, b) = sample_pair();
        let (x, y, overlap) = lowdin_pair(&a, &b).unwrap();
        assert!(overlap.norm() > 0.1);
        assert!(x.inner(&y).norm() < 1e-12);
        assert!((x.norm() - 1.0).abs() < 1e-12);
        assert!((y.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lowdin_is_symmetric_under_swap() {
        let (a, b) = sample_pair();
        let (x, y, _) = lowdin_pair(&a, &b).unwrap();
        let (y2, x2, _) = lowdin_pair(&b, &a).unwrap();
        assert_eq!(x, x2);
        assert_eq!(y, y2);
    }

    #[test]
    fn lowdin_rejects_parallel_states() {
        let (a, _) = sample_pair();
        assert!(lowdin_pair(&a, &a).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("GKP".parse::<CodeFamily>().unwrap(), CodeFamily::Gkp);
        assert_eq!("trivial".parse::<CodeFamily>().unwrap(), CodeFamily::TrivialFock);
        assert!("cat".parse::<CodeFamily>().is_err());
    }
}
