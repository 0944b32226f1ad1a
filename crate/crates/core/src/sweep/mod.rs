//! Noise-grid sweeps comparing optimized GKP and NP codes.

mod boundary;
mod checkpoint;
mod output;
mod shape;

pub use boundary::{extract_boundary, BoundaryPoint, Polyline};
pub use checkpoint::{load_checkpoint, CheckpointLine, CHECKPOINT_FILE};
pub use output::{
    fmt_float, write_boundary_csv, write_cells_csv, write_regions_csv, BOUNDARY_HEADER, CELLS_HEADER,
    REGIONS_HEADER,
};
pub use shape::{second_differences, shape_report, CurvatureCount, ShapeReport};

use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::NoisePoint;
use crate::codes::CodeFamily;
use crate::error::{Error, Result};
use crate::optimizer::{optimize_code, OptimizationRecord, OptimizerSettings, Scale, SearchSpace};
use crate::qec::{baseline_fidelity, FidelityResult};
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
pub const BASELINE_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub gamma_values: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub spec_tag: String,
}

impl NoiseGrid {
    pub fn new(gamma_values: Vec<f64>, kappa_values: Vec<f64>, spec_tag: &str) -> Result<Self> {
        for (name, v) in [("gamma", &gamma_values), ("kappa", &kappa_values)] {
            if v.is_empty() {
                return Err(Error::Config(format!("empty {name} axis")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!(
                    "{name} values must be finite and non-negative"
                )));
            }
            if v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "{name} values must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            gamma_values,
            kappa_values,
            spec_tag: spec_tag.to_string(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.gamma_values.len(), self.kappa_values.len())
    }

    pub fn len(&self) -> usize {
        self.gamma_values.len() * self.kappa_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, gamma_t: f64, kappa_t: f64) -> Option<(usize, usize)> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-12);
        let i = self.gamma_values.iter().position(|&g| close(g, gamma_t))?;
        let j = self.kappa_values.iter().position(|&k| close(k, kappa_t))?;
        Some((i, j))
    }
}

/// Rounds grid arithmetic to a clean decimal.
fn tidy(v: f64) -> f64 {
    (v * 1e10).round() / 1e10
}

/// Published grid: gamma 0.010..0.150 in steps of 0.005, kappa 0.0001..0.0012
/// in steps of 0.0001 followed by 0.0018..0.0072 in steps of 0.0006.
pub fn paper_grid() -> NoiseGrid {
    let gammas = (0..29).map(|i| tidy(0.01 + 0.005 * i as f64)).collect();
    let mut kappas: Vec<f64> = (1..=12).map(|i| tidy(1e-4 * i as f64)).collect();
    kappas.extend((3..=12).map(|i| tidy(6e-4 * i as f64)));
    kappas.dedup();
    NoiseGrid::new(gammas, kappas, "paper").expect("static grid is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Smoke,
    Small,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smoke" => Ok(Preset::Smoke),
            "small" => Ok(Preset::Small),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

pub fn desk_grid(preset: Preset) -> NoiseGrid {
    let (g, k, tag) = match preset {
        Preset::Smoke => (vec![0.01, 0.08, 0.15], vec![1e-4, 1.2e-3, 7.2e-3], "smoke"),
        Preset::Small => (
            vec![0.01, 0.025, 0.05, 0.08, 0.115, 0.15],
            vec![1e-4, 3e-4, 1.2e-3, 3e-3, 7.2e-3],
            "small",
        ),
        Preset::Full => return paper_grid(),
    };
    NoiseGrid::new(g, k, tag).expect("static grid is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    GkpStrict,
    NpStrict,
    Undecided,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::GkpStrict => "gkp-strict",
            Region::NpStrict => "np-strict",
            Region::Undecided => "undecided",
        }
    }
}

/// Strict advantage when one family's lower bound `f` beats the other's
/// upper bound `(1 + f) / 2`.
pub fn strict_region(gkp_f: f64, np_f: f64) -> Region {
    if gkp_f > 0.5 * (1.0 + np_f) {
        Region::GkpStrict
    } else if np_f > 0.5 * (1.0 + gkp_f) {
        Region::NpStrict
    } else {
        Region::Undecided
    }
}

/// Labels every cell; non-finite entries are undecided.
pub fn strict_regions(gkp_f: &[Vec<f64>], np_f: &[Vec<f64>]) -> Result<Vec<Vec<Region>>> {
    if gkp_f.len() != np_f.len() || gkp_f.iter().zip(np_f).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::InvalidArgument("fidelity matrices differ in shape".into()));
    }
    Ok(gkp_f
        .iter()
        .zip(np_f)
        .map(|(ga, na)| {
            ga.iter()
                .zip(na)
                .map(|(&g, &n)| {
                    if g.is_finite() && n.is_finite() {
                        strict_region(g, n)
                    } else {
                        Region::Undecided
                    }
                })
                .collect()
        })
        .collect())
}

/// Budgets, seeds and search boxes of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seed: u64,
    pub restarts: usize,
    pub gkp_budget: usize,
    pub np_budget: usize,
    pub gkp_space: SearchSpace,
    pub np_space: SearchSpace,
    pub settings: OptimizerSettings,
    pub baseline_dim: usize,
}

impl SweepConfig {
    pub fn for_scale(scale: Scale, seed: u64) -> Self {
        let settings = OptimizerSettings {
            truncation: scale.truncation(),
            ..OptimizerSettings::default()
        };
        Self {
            seed,
            restarts: 1,
            gkp_budget: settings.default_budget(),
            np_budget: settings.default_budget(),
            gkp_space: SearchSpace::gkp(scale),
            np_space: SearchSpace::np(scale),
            settings,
            baseline_dim: BASELINE_DIM,
        }
    }

    pub fn fingerprint(&self, grid: &NoiseGrid) -> String {
        let body = serde_json::to_vec(&(grid, self)).expect("config serializes");
        sha256_hex(&body)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything computed at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    pub noise: NoisePoint,
    pub gkp: Option<OptimizationRecord>,
    pub np: Option<OptimizationRecord>,
    pub baseline: Option<FidelityResult>,
}

impl CellRecord {
    fn family_f(record: &Option<OptimizationRecord>) -> Option<f64> {
        record
            .as_ref()
            .filter(|r| !r.best_fidelity.diagnostics.flagged)
            .map(|r| r.best_fidelity.f_tilde)
    }

    pub fn gkp_f(&self) -> Option<f64> {
        Self::family_f(&self.gkp)
    }

    pub fn np_f(&self) -> Option<f64> {
        Self::family_f(&self.np)
    }

    /// Published when both families produced unflagged results.
    pub fn is_published(&self) -> bool {
        self.gkp_f().is_some() && self.np_f().is_some()
    }

    /// Families whose optimized fidelity fell below the baseline.
    pub fn baseline_violations(&self) -> Vec<CodeFamily> {
        let Some(base) = self.baseline.filter(|b| !b.diagnostics.flagged) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if self.gkp_f().is_some_and(|f| f < base.f_tilde) {
            out.push(CodeFamily::Gkp);
        }
        if self.np_f().is_some_and(|f| f < base.f_tilde) {
            out.push(CodeFamily::Np);
        }
        out
    }
}

fn cell_error(family: CodeFamily, noise: NoisePoint, e: &Error) {
    log::warn!(
        "{family} at ({}, {}) produced no result: {e}",
        noise.gamma_t,
        noise.kappa_t
    );
}

/// Optimizes both families and evaluates the baseline at cell `(i, j)`.
pub fn compute_cell(grid: &NoiseGrid, config: &SweepConfig, i: usize, j: usize) -> Result<CellRecord> {
    let noise = NoisePoint::new(grid.gamma_values[i], grid.kappa_values[j])?;
    let run = |family: CodeFamily, space: &SearchSpace, budget: usize, tag: u64| {
        let seed = derive_seed(config.seed, &[i as u64, j as u64, tag]);
        match optimize_code(
            family,
            noise,
            space,
            budget,
            seed,
            config.restarts,
            &config.settings,
        ) {
            Ok(r) => Ok(Some(r)),
            Err(e @ Error::OptimizationFailure(_)) => {
                cell_error(family, noise, &e);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let gkp = run(CodeFamily::Gkp, &config.gkp_space, config.gkp_budget, 0)?;
    let np = run(CodeFamily::Np, &config.np_space, config.np_budget, 1)?;
    let baseline = match baseline_fidelity(noise, config.baseline_dim) {
        Ok(b) => Some(b),
        Err(e) => {
            cell_error(CodeFamily::TrivialFock, noise, &e);
            None
        }
    };
    Ok(CellRecord {
        i,
        j,
        noise,
        gkp,
        np,
        baseline,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub grid: NoiseGrid,
    /// Row-major over `(gamma index, kappa index)`.
    pub cells: Vec<CellRecord>,
    /// `F_GKP - F_NP`, NaN-free: unpublished cells are `None`.
    pub delta_f: Vec<Vec<Option<f64>>>,
    pub regions: Vec<Vec<Region>>,
    pub boundary: Vec<Polyline>,
}

impl SweepResult {
    /// Assembles derived fields from completed cells.
    pub fn from_cells(grid: NoiseGrid, mut cells: Vec<CellRecord>) -> Result<Self> {
        let (ng, nk) = grid.shape();
        cells.sort_by_key(|c| (c.i, c.j));
        if cells.len() != ng * nk
            || cells
                .iter()
                .enumerate()
                .any(|(n, c)| (c.i, c.j) != (n / nk, n % nk))
        {
            return Err(Error::Checkpoint(format!(
                "expected {} distinct cells, found {}",
                ng * nk,
                cells.len()
            )));
        }
        let gkp = Self::matrix(&cells, nk, |c| c.is_published().then(|| c.gkp_f()).flatten());
        let np = Self::matrix(&cells, nk, |c| c.is_published().then(|| c.np_f()).flatten());
        let delta: Vec<Vec<f64>> = gkp
            .iter()
            .zip(&np)
            .map(|(g, n)| g.iter().zip(n).map(|(a, b)| a - b).collect())
            .collect();
        let regions = strict_regions(&gkp, &np)?;
        let boundary = extract_boundary(&delta, &grid);
        let delta_f = delta
            .iter()
            .map(|row| row.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            grid,
            cells,
            delta_f,
            regions,
            boundary,
        })
    }

    fn matrix(cells: &[CellRecord], nk: usize, f: impl Fn(&CellRecord) -> Option<f64>) -> Vec<Vec<f64>> {
        cells
            .chunks(nk)
            .map(|row| row.iter().map(|c| f(c).unwrap_or(f64::NAN)).collect())
            .collect()
    }

    pub fn cell(&self, i: usize, j: usize) -> &CellRecord {
        &self.cells[i * self.grid.kappa_values.len() + j]
    }

    pub fn region_at(&self, gamma_t: f64, kappa_t: f64) -> Option<Region> {
        self.grid
            .contains(gamma_t, kappa_t)
            .map(|(i, j)| self.regions[i][j])
    }

    /// Optimized fidelity matrix of one family, NaN where unavailable.
    pub fn fidelity_matrix(&self, family: CodeFamily) -> Vec<Vec<f64>> {
        let nk = self.grid.kappa_values.len();
        Self::matrix(&self.cells, nk, |c| match family {
            CodeFamily::Gkp => c.gkp_f(),
            CodeFamily::Np => c.np_f(),
            CodeFamily::TrivialFock => c.baseline.filter(|b| !b.diagnostics.flagged).map(|b| b.f_tilde),
        })
    }

    /// Canonical serialization used for the resume idempotence check.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(format!("cannot serialize sweep: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub gkp: ShapeReport,
    pub np: ShapeReport,
    pub region_counts: [usize; 3],
    pub boundary_vertices: usize,
    /// Smallest and largest kappa/gamma ratio over boundary vertices.
    pub boundary_ratio_range: Option<(f64, f64)>,
    pub baseline_violations: Vec<(f64, f64, CodeFamily)>,
    pub unpublished_cells: usize,
}

/// Curvature diagnostics, region tallies and baseline comparison.
pub fn shape_diagnostics(result: &SweepResult) -> SweepReport {
    let g = &result.grid;
    let gkp = shape_report(
        &result.fidelity_matrix(CodeFamily::Gkp),
        &g.gamma_values,
        &g.kappa_values,
    );
    let np = shape_report(
        &result.fidelity_matrix(CodeFamily::Np),
        &g.gamma_values,
        &g.kappa_values,
    );
    let mut region_counts = [0; 3];
    for r in result.regions.iter().flatten() {
        region_counts[*r as usize] += 1;
    }
    let ratios: Vec<f64> = result
        .boundary
        .iter()
        .flatten()
        .filter(|p| p.gamma_t > 0.0)
        .map(|p| p.kappa_t / p.gamma_t)
        .collect();
    let boundary_ratio_range = (!ratios.is_empty()).then(|| {
        (
            ratios.iter().copied().fold(f64::INFINITY, f64::min),
            ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    let baseline_violations = result
        .cells
        .iter()
        .flat_map(|c| {
            c.baseline_violations()
                .into_iter()
                .map(move |f| (c.noise.gamma_t, c.noise.kappa_t, f))
        })
        .collect();
    SweepReport {
        gkp,
        np,
        region_counts,
        boundary_vertices: result.boundary.iter().map(Vec::len).sum(),
        boundary_ratio_range,
        baseline_violations,
        unpublished_cells: result.cells.iter().filter(|c| !c.is_published()).count(),
    }
}

/// Controls persistence and early stopping of [`run_sweep`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    /// Append-only checkpoint file; resumed from when it exists.
    pub checkpoint: Option<&'a Path>,
    /// Compute at most this many new cells, then stop.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepProgress {
    Complete(Box<SweepResult>),
    Partial { completed: usize, total: usize },
}

/// Runs every missing cell of `grid`, persisting each one as it finishes.
pub fn run_sweep(grid: &NoiseGrid, config: &SweepConfig, options: &RunOptions) -> Result<SweepProgress> {
    let fingerprint = config.fingerprint(grid);
    let (mut done, writer) = match options.checkpoint {
        Some(path) => {
            let (cells, writer) = checkpoint::open(path, &fingerprint, grid.len())?;
            (cells, Some(writer))
        }
        None => (Vec::new(), None),
    };
    let (ng, nk) = grid.shape();
    let mut pending: Vec<(usize, usize)> = (0..ng)
        .flat_map(|i| (0..nk).map(move |j| (i, j)))
        .filter(|&(i, j)| !done.iter().any(|c| c.i == i && c.j == j))
        .collect();
    if let Some(limit) = options.stop_after {
        pending.truncate(limit);
    }
    log::info!(
        "sweep {}: {} cells done, {} to run",
        grid.spec_tag,
        done.len(),
        pending.len()
    );
    let writer = writer.map(Mutex::new);
    let fresh: Vec<CellRecord> = pending
        .par_iter()
        .map(|&(i, j)| {
            let cell = compute_cell(grid, config, i, j)?;
            if let Some(w) = &writer {
                w.lock()
                    .map_err(|_| Error::Checkpoint("checkpoint writer poisoned".into()))?
                    .append(&cell)?;
            }
            log::info!("cell ({i}, {j}) done");
            Ok(cell)
        })
        .collect::<Result<_>>()?;
    done.extend(fresh);
    if done.len() < grid.len() {
        return Ok(SweepProgress::Partial {
            completed: done.len(),
            total: grid.len(),
        });
    }
    Ok(SweepProgress::Complete(Box::new(SweepResult::from_cells(
        grid.clone(),
        done,
    )?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_counts_and_spacing() {
        let g = paper_grid();
        assert_eq!(g.gamma_values.len(), 29);
        assert_eq!(g.gamma_values[0], 0.01);
        assert_eq!(g.gamma_values[28], 0.15);
        assert_eq!(g.kappa_values.len(), 22);
        let i12 = g.kappa_values.iter().position(|&k| k == 0.0012).unwrap();
        assert_eq!(g.kappa_values[i12 + 1], 0.0018);
        assert!(g.kappa_values.iter().all(|&k| (1e-4..=7.2e-3).contains(&k)));
        assert_eq!(*g.kappa_values.last().unwrap(), 0.0072);
    }

    #[test]
    fn desk_grids() {
        let smoke = desk_grid(Preset::Smoke);
        for (g, k) in [(0.01, 1e-4), (0.15, 1e-4), (0.01, 7.2e-3), (0.15, 7.2e-3)] {
            assert!(smoke.contains(g, k).is_some());
        }
        assert_eq!(smoke.len(), 9);
        let small = desk_grid(Preset::Small);
        assert_eq!(small.shape(), (6, 5));
        let full = desk_grid(Preset::Full);
        assert_eq!(full, paper_grid());
        let lo_g = full.gamma_values[0];
        let hi_g = *full.gamma_values.last().unwrap();
        let lo_k = full.kappa_values[0];
        let hi_k = *full.kappa_values.last().unwrap();
        assert!(small.gamma_values.iter().all(|g| (lo_g..=hi_g).contains(g)));
        assert!(small.kappa_values.iter().all(|k| (lo_k..=hi_k).contains(k)));
        assert!(small.contains(0.05, 0.0012).is_some());
    }

    #[test]
    fn grid_validation() {
        assert!(NoiseGrid::new(vec![0.1, 0.1], vec![0.0], "x").is_err());
        assert!(NoiseGrid::new(vec![-0.1], vec![0.0], "x").is_err());
        assert!(NoiseGrid::new(vec![], vec![0.0], "x").is_err());
    }

    #[test]
    fn strict_region_examples() {
        assert_eq!(strict_region(0.99, 0.97), Region::GkpStrict);
        assert_eq!(strict_region(0.99, 0.985), Region::Undecided);
        assert_eq!(strict_region(0.97, 0.99), Region::NpStrict);
        assert_eq!(strict_region(0.9, 0.9), Region::Undecided);
        let r = strict_regions(&[vec![0.99, f64::NAN]], &[vec![0.97, 0.5]]).unwrap();
        assert_eq!(r, vec![vec![Region::GkpStrict, Region::Undecided]]);
        assert!(strict_regions(&[vec![0.9]], &[vec![0.9, 0.9]]).is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let grid = desk_grid(Preset::Smoke);
        let a = SweepConfig::for_scale(Scale::Desk, 1);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(&grid), b.fingerprint(&grid));
        b.seed = 2;
        assert_ne!(a.fingerprint(&grid), b.fingerprint(&grid));
        assert_eq!(a.fingerprint(&grid).len(), 64);
    }
}
