//! QEC matrix, near-optimal fidelity and the transpose-channel oracle.
//!
//! Two routes compute the same number. The literal route builds the
//! `(2 N_K) x (2 N_K)` Gram matrix `M = V^dag V`, takes its square root and
//! partial trace. The reduced route uses `sqrt(V^dag V) = V^dag (V V^dag)^{-1/2} V`
//! to get
//!
//! `F = 1/4 sum_{mu,nu} || Q^{-1/4} E_{mu nu} Q^{-1/4} ||_F^2`,
//!
//! with `E_{mu nu} = N(|mu><nu|)` and `Q = E_00 + E_11 = N(P)`, whose cost no
//! longer depends on the number of Kraus operators. `Q` is split into the
//! connected components of its sparsity pattern before diagonalizing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{channel_for_code, ChannelOptions, KrausChannel, NoisePoint};
use crate::codes::{build_trivial_fock, CodePair};
use crate::error::{Error, Result};
use crate::fock::{hermitian_eigen, hermitian_sqrt, hermiticity_defect, C64};

pub const LOGICAL_DIM: usize = 2;
/// Relative eigenvalue clamp for `sqrt(M)`.
pub const SQRT_CLAMP: f64 = 1e-12;
/// Relative support cutoff for `N(P)^{-1/2}` in the oracle.
pub const ORACLE_SUPPORT_CUTOFF: f64 = 1e-10;
pub const ORACLE_MAX_DIM: usize = 64;
pub const ORACLE_MAX_KRAUS: usize = 64;
/// Lowest per-stage budget, so exact evaluations are never flagged for rounding.
pub const BUDGET_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct QecMatrix {
    pub n_k: usize,
    /// Indexed `[mu * n_k + l, nu * n_k + k]`.
    pub entries: DMatrix<C64>,
    /// Hermiticity defect before symmetrization.
    pub hermiticity_defect: f64,
    pub eps_trunc: f64,
    pub tail_mass: f64,
    pub dim: usize,
}

impl QecMatrix {
    pub fn d_l(&self) -> usize {
        LOGICAL_DIM
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub eps_trunc: f64,
    pub tail_mass: f64,
    pub n_k: usize,
    pub dim: usize,
    pub hermiticity_defect: f64,
    /// `|tr M - d_L| / d_L`.
    pub trace_defect: f64,
    /// Clamped eigenvalue magnitude relative to `tr M`.
    pub clamped_mass: f64,
    /// Smallest eigenvalue over the largest, before clamping.
    pub min_eigenvalue_ratio: f64,
    pub flagged: bool,
}

impl Diagnostics {
    /// Per-stage error budget: two orders of magnitude below the infidelity.
    pub fn budget(f_tilde: f64) -> f64 {
        (1e-2 * (1.0 - f_tilde)).max(BUDGET_FLOOR)
    }

    fn flag(&mut self, f_tilde: f64) {
        let budget = Self::budget(f_tilde);
        self.flagged = self.hermiticity_defect > budget
            || self.trace_defect > budget
            || self.clamped_mass > budget
            || self.min_eigenvalue_ratio < -1e-10;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub f_tilde: f64,
    /// Lower bound on the optimal fidelity, equal to `f_tilde`.
    pub f_lower: f64,
    /// Upper bound `(1 + f_tilde) / 2`.
    pub f_upper: f64,
    pub diagnostics: Diagnostics,
}

impl FidelityResult {
    fn from_parts(raw: f64, mut diagnostics: Diagnostics) -> Result<Self> {
        if !raw.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&raw) {
            return Err(Error::NumericalConsistency(format!(
                "near-optimal fidelity {raw} outside [0, 1]"
            )));
        }
        let f_tilde = raw.clamp(0.0, 1.0);
        diagnostics.flag(f_tilde);
        Ok(Self {
            f_tilde,
            f_lower: f_tilde,
            f_upper: 0.5 * (1.0 + f_tilde),
            diagnostics,
        })
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.f_tilde
    }
}

fn check_dims(code: &CodePair, channel: &KrausChannel) -> Result<()> {
    if code.dim != channel.dim {
        return Err(Error::InvalidArgument(format!(
            "code dimension {} does not match channel dimension {}",
            code.dim, channel.dim
        )));
    }
    Ok(())
}

/// Gram matrix `M_{[mu l],[nu k]} = <mu_L|N_l^dag N_k|nu_L>`.
pub fn qec_matrix(code: &CodePair, channel: &KrausChannel) -> Result<QecMatrix> {
    check_dims(code, channel)?;
    let n_k = channel.len();
    let dim = code.dim;
    let mut v = DMatrix::<C64>::zeros(dim, LOGICAL_DIM * n_k);
    let mut buf = vec![C64::new(0.0, 0.0); dim];
    for (mu, ket) in code.kets().iter().enumerate() {
        let psi = ket.amplitudes().as_slice();
        for i in 0..n_k {
            channel.apply_into(i, psi, &mut buf);
            v.column_mut(mu * n_k + i).copy_from_slice(&buf);
        }
    }
    let gram = v.adjoint() * &v;
    let defect = hermiticity_defect(&gram);
    let entries = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    Ok(QecMatrix {
        n_k,
        entries,
        hermiticity_defect: defect,
        eps_trunc: channel.completeness_error,
        tail_mass: code.tail_mass,
        dim,
    })
}

/// `||Tr_L sqrt(M)||_F^2 / d_L^2` from an assembled QEC matrix.
pub fn near_optimal_fidelity(m: &QecMatrix) -> Result<FidelityResult> {
    let n_k = m.n_k;
    if m.entries.nrows() != LOGICAL_DIM * n_k || m.entries.ncols() != LOGICAL_DIM * n_k {
        return Err(Error::InvalidArgument(format!(
            "QEC matrix is {}x{}, expected {}",
            m.entries.nrows(),
            m.entries.ncols(),
            LOGICAL_DIM * n_k
        )));
    }
    let root = hermitian_sqrt(&m.entries, SQRT_CLAMP)?;
    let s = &root.matrix;
    let mut norm_sq = 0.0;
    for l in 0..n_k {
        for k in 0..n_k {
            let t: C64 = (0..LOGICAL_DIM).map(|mu| s[(mu * n_k + l, mu * n_k + k)]).sum();
            norm_sq += t.norm_sqr();
        }
    }
    let trace = m.trace();
    let d = LOGICAL_DIM as f64;
    let diagnostics = Diagnostics {
        eps_trunc: m.eps_trunc,
        tail_mass: m.tail_mass,
        n_k,
        dim: m.dim,
        hermiticity_defect: m.hermiticity_defect,
        trace_defect: (trace - d).abs() / d,
        clamped_mass: root.clamped_mass / trace.max(f64::MIN_POSITIVE),
        min_eigenvalue_ratio: ratio(root.min_eigenvalue, root.max_eigenvalue),
        flagged: false,
    };
    FidelityResult::from_parts(norm_sq / (d * d), diagnostics)
}

fn ratio(min: f64, max: f64) -> f64 {
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// `E_{mu nu} = N(|mu><nu|)` for `(mu, nu)` in `(0,0), (1,1), (0,1)`.
fn channel_images(code: &CodePair, channel: &KrausChannel) -> [DMatrix<C64>; 3] {
    let dim = code.dim;
    let loss = channel.loss_coefficients();
    let deph = channel.deph_coefficients();
    // A_k |mu> as columns of a dim x K matrix per logical state
    let images: Vec<DMatrix<C64>> = code
        .kets()
        .iter()
        .map(|ket| {
            let psi = ket.amplitudes();
            DMatrix::from_fn(dim, loss.len(), |row, k| {
                if row + k < dim {
                    psi[row + k] * loss[k][row + k]
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        })
        .collect();
    // D_{mn} = sum_l b_l(m) b_l(n)
    let weights = DMatrix::from_fn(dim, dim, |m, n| deph.iter().map(|b| b[m] * b[n]).sum::<f64>());
    let image = |a: &DMatrix<C64>, b: &DMatrix<C64>| {
        let mut out = a * b.adjoint();
        out.zip_apply(&weights, |z, w| *z *= w);
        out
    };
    [
        image(&images[0], &images[0]),
        image(&images[1], &images[1]),
        image(&images[0], &images[1]),
    ]
}

/// Connected components of the nonzero pattern of a Hermitian matrix,
/// skipping rows that are identically zero.
fn components(q: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let n = q.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if q[(i, j)] != C64::new(0.0, 0.0) || q[(j, i)] != C64::new(0.0, 0.0) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let live = (0..n).any(|j| q[(i, j)] != C64::new(0.0, 0.0));
        if !live {
            continue;
        }
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
}

fn submatrix(m: &DMatrix<C64>, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Near-optimal fidelity by the reduced route, without forming `M`.
pub fn fast_fidelity(code: &CodePair, channel: &KrausChannel) -> Result<FidelityResult> {
    check_dims(code, channel)?;
    let [e00, e11, e01] = channel_images(code, channel);
    let q_raw = &e00 + &e11;
    let hermiticity = hermiticity_defect(&q_raw);
    let q = (&q_raw + q_raw.adjoint()) * C64::new(0.5, 0.0);
    let groups = components(&q);

    let mut spectra = Vec::with_capacity(groups.len());
    for g in &groups {
        spectra.push(hermitian_eigen(&submatrix(&q, g, g))?);
    }
    let lambda_max = spectra
        .iter()
        .filter_map(|(v, _)| v.last().copied())
        .fold(0.0, f64::max);
    let lambda_min = spectra
        .iter()
        .filter_map(|(v, _)| v.first().copied())
        .fold(f64::INFINITY, f64::min);
    let cutoff = SQRT_CLAMP * lambda_max;
    let mut clamped = 0.0;
    // W_c = U_+ Lambda_+^{-1/4} per component
    let frames: Vec<DMatrix<C64>> = spectra
        .iter()
        .map(|(values, vectors)| {
            let keep: Vec<usize> = (0..values.len())
                .filter(|&j| {
                    let ok = values[j] > cutoff && values[j] > 0.0;
                    if !ok {
                        clamped += values[j].abs();
                    }
                    ok
                })
                .collect();
            DMatrix::from_fn(vectors.nrows(), keep.len(), |r, c| {
                vectors[(r, keep[c])] * values[keep[c]].powf(-0.25)
            })
        })
        .collect();

    let sandwiched = |e: &DMatrix<C64>| -> f64 {
        let mut total = 0.0;
        for (a, ga) in groups.iter().enumerate() {
            for (b, gb) in groups.iter().enumerate() {
                let block = submatrix(e, ga, gb);
                if block.iter().all(|z| *z == C64::new(0.0, 0.0)) {
                    continue;
                }
                let x = frames[a].adjoint() * block * &frames[b];
                total += x.norm_squared();
            }
        }
        total
    };
    let norm_sq = sandwiched(&e00) + sandwiched(&e11) + 2.0 * sandwiched(&e01);

    let trace: f64 = q.diagonal().iter().map(|z| z.re).sum();
    let d = LOGICAL_DIM as f64;
    let diagnostics = Diagnostics {
        eps_trunc: channel.completeness_error,
        tail_mass: code.tail_mass,
        n_k: channel.len(),
        dim: code.dim,
        hermiticity_defect: hermiticity,
        trace_defect: (trace - d).abs() / d,
        clamped_mass: clamped / trace.max(f64::MIN_POSITIVE),
        min_eigenvalue_ratio: ratio(lambda_min.min(0.0), lambda_max),
        flagged: false,
    };
    FidelityResult::from_parts(norm_sq / (d * d), diagnostics)
}

/// Builds the certified channel for `code` and evaluates it by the reduced route.
pub fn evaluate(code: &CodePair, noise: NoisePoint, options: &ChannelOptions) -> Result<FidelityResult> {
    let channel = channel_for_code(code, noise, options)?;
    fast_fidelity(code, &channel)
}

/// Transpose-channel recovery `R_i = P N_i^dag N(P)^{-1/2}` with every
/// operator materialized densely.
pub fn transpose_channel_recovery(code: &CodePair, channel: &KrausChannel) -> Result<Vec<DMatrix<C64>>> {
    check_dims(code, channel)?;
    guard_oracle(code, channel)?;
    let ops = channel.operators()?;
    let k0 = code.ket0.amplitudes();
    let k1 = code.ket1.amplitudes();
    let projector = k0 * k0.adjoint() + k1 * k1.adjoint();
    let mut image = DMatrix::<C64>::zeros(code.dim, code.dim);
    for n in &ops {
        image += n.matrix() * &projector * n.matrix().adjoint();
    }
    let (values, vectors) = hermitian_eigen(&image)?;
    let lambda_max = values.last().copied().unwrap_or(0.0);
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let factor = if lambda > ORACLE_SUPPORT_CUTOFF * lambda_max && lambda > 0.0 {
            lambda.powf(-0.5)
        } else {
            0.0
        };
        scaled.column_mut(j).scale_mut(factor);
    }
    let inv_sqrt = scaled * vectors.adjoint();
    Ok(ops
        .iter()
        .map(|n| &projector * n.matrix().adjoint() * &inv_sqrt)
        .collect())
}

fn guard_oracle(code: &CodePair, channel: &KrausChannel) -> Result<()> {
    if code.dim > ORACLE_MAX_DIM || channel.len() > ORACLE_MAX_KRAUS {
        return Err(Error::OracleScale(format!(
            "dim {} and {} Kraus operators exceed the oracle limits ({ORACLE_MAX_DIM}, {ORACLE_MAX_KRAUS})",
            code.dim,
            channel.len()
        )));
    }
    Ok(())
}

/// Entanglement fidelity of transpose-channel recovery after the channel, on
/// the maximally mixed code state.
pub fn transpose_channel_oracle(code: &CodePair, channel: &KrausChannel) -> Result<f64> {
    let recovery = transpose_channel_recovery(code, channel)?;
    let ops = channel.operators()?;
    let kets = [code.ket0.amplitudes(), code.ket1.amplitudes()];
    let mut total = 0.0;
    for mu in 0..LOGICAL_DIM {
        for nu in 0..LOGICAL_DIM {
            let input = kets[mu] * kets[nu].adjoint();
            let mut noisy = DMatrix::<C64>::zeros(code.dim, code.dim);
            for n in &ops {
                noisy += n.matrix() * &input * n.matrix().adjoint();
            }
            let mut recovered = DMatrix::<C64>::zeros(code.dim, code.dim);
            for r in &recovery {
                recovered += r * &noisy * r.adjoint();
            }
            let amp = (kets[mu].adjoint() * &recovered * kets[nu])[(0, 0)];
            total += amp.re;
        }
    }
    Ok(total / (LOGICAL_DIM * LOGICAL_DIM) as f64)
}

/// Trivial `|0>, |1>` encoding at the given noise point.
pub fn baseline_fidelity(noise: NoisePoint, dim: usize) -> Result<FidelityResult> {
    if dim < 4 {
        return Err(Error::InvalidDimension(dim));
    }
    let code = build_trivial_fock(dim)?;
    evaluate(&code, noise, &ChannelOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::compose_channel;
    use crate::codes::{build_gkp, build_np, lowdin_pair, GkpParams, NpParams, Truncation};
    use crate::fock::FockState;

    fn random_code(dim: usize, seed: u64) -> CodePair {
        let mut x = seed;
        let mut next = || {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut amps = |decay: f64| -> FockState {
            let v: Vec<C64> = (0..dim)
                .map(|n| C64::new(next(), next()) * (-decay * n as f64).exp())
                .collect();
            FockState::from_slice(&v).unwrap().normalized().unwrap()
        };
        let a = amps(0.3);
        let b = amps(0.3);
        let (o0, o1, overlap) = lowdin_pair(&a, &b).unwrap();
        CodePair::assemble(crate::codes::CodeFamily::TrivialFock, o0, o1, overlap, 0.0).unwrap()
    }

    fn partial_channel(code: &CodePair, gamma: f64, kappa: f64, n_max: usize) -> KrausChannel {
        compose_channel(
            NoisePoint::new(gamma, kappa).unwrap(),
            code.dim,
            n_max,
            1e-6,
            (3, 3),
        )
        .unwrap()
    }

    fn strict_channel(code: &CodePair, gamma: f64, kappa: f64) -> KrausChannel {
        compose_channel(
            NoisePoint::new(gamma, kappa).unwrap(),
            code.dim,
            code.dim - 1,
            1e-9,
            (3, 3),
        )
        .unwrap()
    }

    #[test]
    fn identity_channel_gives_unit_matrix() {
        let code = build_trivial_fock(6).unwrap();
        let ch = strict_channel(&code, 0.0, 0.0);
        let m = qec_matrix(&code, &ch).unwrap();
        assert_eq!(m.entries, DMatrix::identity(2, 2));
        let f = near_optimal_fidelity(&m).unwrap();
        assert_eq!(f.f_tilde, 1.0);
        assert_eq!(f.f_upper, 1.0);
        assert!(!f.diagnostics.flagged);
    }

    #[test]
    fn matrix_entries_match_inner_products() {
        let code = random_code(8, 7);
        let ch = compose_channel(NoisePoint::new(0.2, 0.0).unwrap(), 8, 2, 0.5, (3, 1)).unwrap();
        assert_eq!(ch.len(), 3);
        let m = qec_matrix(&code, &ch).unwrap();
        let ops = ch.operators().unwrap();
        let kets = code.kets();
        for mu in 0..2 {
            for nu in 0..2 {
                for l in 0..3 {
                    for k in 0..3 {
                        let lhs = ops[l].apply(kets[mu]).unwrap();
                        let rhs = ops[k].apply(kets[nu]).unwrap();
                        let direct = lhs.inner(&rhs);
                        assert!((m.entries[(mu * 3 + l, nu * 3 + k)] - direct).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn knill_laflamme_matrix_is_perfect() {
        // M = I_2 (x) c with tr c = 1
        let c = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.7, 0.0),
                C64::new(0.1, 0.2),
                C64::new(0.1, -0.2),
                C64::new(0.3, 0.0),
            ],
        );
        let mut entries = DMatrix::zeros(4, 4);
        entries.view_mut((0, 0), (2, 2)).copy_from(&c);
        entries.view_mut((2, 2), (2, 2)).copy_from(&c);
        let m = QecMatrix {
            n_k: 2,
            entries,
            hermiticity_defect: 0.0,
            eps_trunc: 0.0,
            tail_mass: 0.0,
            dim: 4,
        };
        let f = near_optimal_fidelity(&m).unwrap();
        assert!((f.f_tilde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn routes_agree_on_random_codes() {
        for seed in 0..6u64 {
            let code = random_code(10 + seed as usize, seed);
            let ch = strict_channel(&code, 0.05 + 0.03 * seed as f64, 0.002 * seed as f64);
            let literal = near_optimal_fidelity(&qec_matrix(&code, &ch).unwrap()).unwrap();
            let fast = fast_fidelity(&code, &ch).unwrap();
            assert!((literal.f_tilde - fast.f_tilde).abs() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn trivial_code_matches_oracle() {
        let code = build_trivial_fock(4).unwrap();
        let ch = strict_channel(&code, 0.2, 0.0);
        let f = fast_fidelity(&code, &ch).unwrap();
        let oracle = transpose_channel_oracle(&code, &ch).unwrap();
        assert!((f.f_tilde - oracle).abs() < 1e-8);
    }

    #[test]
    fn oracle_within_bounds_on_random_codes() {
        for seed in 10..14u64 {
            let code = random_code(12, seed);
            let ch = partial_channel(&code, 0.15, 0.008, 6);
            assert!(ch.len() <= 64);
            let f = fast_fidelity(&code, &ch).unwrap();
            let oracle = transpose_channel_oracle(&code, &ch).unwrap();
            assert!((f.f_tilde - oracle).abs() < 1e-7);
            assert!(oracle >= f.f_lower - 1e-7 && oracle <= f.f_upper + 1e-7);
        }
    }

    #[test]
    fn recovery_is_trace_non_increasing() {
        let code = random_code(10, 3);
        let ch = partial_channel(&code, 0.1, 0.005, 6);
        let r = transpose_channel_recovery(&code, &ch).unwrap();
        let mut sum = DMatrix::<C64>::zeros(10, 10);
        for ri in &r {
            sum += ri.adjoint() * ri;
        }
        let (values, _) = hermitian_eigen(&sum).unwrap();
        assert!(values.iter().all(|&v| v <= 1.0 + 1e-9));
    }

    #[test]
    fn oracle_guard() {
        let code = build_trivial_fock(65).unwrap();
        let ch = strict_channel(&code, 0.0, 0.0);
        assert!(matches!(
            transpose_channel_oracle(&code, &ch),
            Err(Error::OracleScale(_))
        ));
    }

    #[test]
    fn permuting_kraus_order_leaves_fidelity() {
        let code = random_code(9, 21);
        let ch = strict_channel(&code, 0.12, 0.004);
        let m = qec_matrix(&code, &ch).unwrap();
        let n_k = m.n_k;
        let perm: Vec<usize> = (0..n_k).rev().collect();
        let idx = |i: usize| (i / n_k) * n_k + perm[i % n_k];
        let permuted = DMatrix::from_fn(2 * n_k, 2 * n_k, |r, c| m.entries[(idx(r), idx(c))]);
        let mp = QecMatrix {
            entries: permuted,
            ..m.clone()
        };
        let a = near_optimal_fidelity(&m).unwrap().f_tilde;
        let b = near_optimal_fidelity(&mp).unwrap().f_tilde;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn baseline_behaviour() {
        assert_eq!(
            baseline_fidelity(NoisePoint::new(0.0, 0.0).unwrap(), 8)
                .unwrap()
                .f_tilde,
            1.0
        );
        let mut prev = 1.0;
        for g in [0.01, 0.04, 0.08, 0.12, 0.15] {
            let f = baseline_fidelity(NoisePoint::new(g, 0.0).unwrap(), 8)
                .unwrap()
                .f_tilde;
            assert!(f <= prev);
            prev = f;
        }
        assert!(baseline_fidelity(NoisePoint::new(0.1, 0.0).unwrap(), 3).is_err());
    }

    #[test]
    fn gkp_and_np_routes_agree() {
        let t = Truncation::default();
        let gkp = build_gkp(&GkpParams::hexagonal(0.5), &t).unwrap();
        let np = build_np(&NpParams::new(0.3, 2, 0.1, 2.0).unwrap(), &t).unwrap();
        for code in [gkp, np] {
            let ch = channel_for_code(
                &code,
                NoisePoint::new(0.05, 1e-3).unwrap(),
                &ChannelOptions::default(),
            )
            .unwrap();
            let literal = near_optimal_fidelity(&qec_matrix(&code, &ch).unwrap()).unwrap();
            let fast = fast_fidelity(&code, &ch).unwrap();
            assert!((literal.f_tilde - fast.f_tilde).abs() < 1e-9);
            assert!(!fast.diagnostics.flagged, "{:?}", fast.diagnostics);
            assert!(fast.f_tilde > 0.5 && fast.f_tilde < 1.0);
        }
    }

    #[test]
    fn identity_channel_exact_for_codes() {
        let code = build_gkp(&GkpParams::hexagonal(0.4), &Truncation::default()).unwrap();
        let f = evaluate(
            &code,
            NoisePoint::new(0.0, 0.0).unwrap(),
            &ChannelOptions::default(),
        )
        .unwrap();
        assert!((f.f_tilde - 1.0).abs() < 1e-9);
    }
}
