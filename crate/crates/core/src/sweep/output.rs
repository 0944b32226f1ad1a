use std::io::Write;

use super::{Polyline, SweepResult};
use crate::codes::CodeFamily;
use crate::error::{Error, Result};
use crate::optimizer::OptimizationRecord;
use crate::qec::FidelityResult;

pub const CELLS_HEADER: [&str; 18] = [
    "gamma_t",
    "kappa_t",
    "family",
    "f_tilde",
    "f_lower",
    "f_upper",
    "alpha",
    "beta_real",
    "delta",
    "f",
    "s",
    "r",
    "n",
    "eps_trunc",
    "tail_mass",
    "n_kraus",
    "dim",
    "flagged",
];
pub const BOUNDARY_HEADER: [&str; 4] = ["polyline", "vertex", "gamma_t", "kappa_t"];
pub const REGIONS_HEADER: [&str; 4] = ["gamma_t", "kappa_t", "region", "delta_f"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn fidelity_fields(f: &FidelityResult) -> [String; 3] {
    [fmt_float(f.f_tilde), fmt_float(f.f_lower), fmt_float(f.f_upper)]
}

fn diagnostic_fields(f: &FidelityResult) -> [String; 5] {
    let d = &f.diagnostics;
    [
        fmt_float(d.eps_trunc),
        fmt_float(d.tail_mass),
        d.n_k.to_string(),
        d.dim.to_string(),
        d.flagged.to_string(),
    ]
}

fn param_fields(record: Option<&OptimizationRecord>) -> [String; 7] {
    let mut out: [String; 7] = Default::default();
    let Some(r) = record else { return out };
    for (name, value) in r.param_names.iter().zip(&r.best_params) {
        let slot = match name.as_str() {
            "alpha" => 0,
            "beta_real" => 1,
            "delta" => 2,
            "f" => 3,
            "s" => 4,
            "r" => 5,
            "n" => 6,
            _ => continue,
        };
        out[slot] = if name == "s" {
            format!("{}", *value as u32)
        } else {
            fmt_float(*value)
        };
    }
    out
}

/// One row per cell and family (GKP, NP, trivial baseline).
pub fn write_cells_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CELLS_HEADER).map_err(csv_err)?;
    for cell in &result.cells {
        let noise = [fmt_float(cell.noise.gamma_t), fmt_float(cell.noise.kappa_t)];
        let families: [(CodeFamily, Option<&OptimizationRecord>, Option<FidelityResult>); 3] = [
            (
                CodeFamily::Gkp,
                cell.gkp.as_ref(),
                cell.gkp.as_ref().map(|r| r.best_fidelity),
            ),
            (
                CodeFamily::Np,
                cell.np.as_ref(),
                cell.np.as_ref().map(|r| r.best_fidelity),
            ),
            (CodeFamily::TrivialFock, None, cell.baseline),
        ];
        for (family, record, fid) in families {
            let mut row: Vec<String> = noise.to_vec();
            row.push(family.as_str().to_string());
            match &fid {
                Some(f) => row.extend(fidelity_fields(f)),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            row.extend(param_fields(record));
            match &fid {
                Some(f) => row.extend(diagnostic_fields(f)),
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 4));
                    row.push("true".into());
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_boundary_csv<W: Write>(boundary: &[Polyline], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDARY_HEADER).map_err(csv_err)?;
    for (id, line) in boundary.iter().enumerate() {
        for (k, p) in line.iter().enumerate() {
            w.write_record([
                id.to_string(),
                k.to_string(),
                fmt_float(p.gamma_t),
                fmt_float(p.kappa_t),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_regions_csv<W: Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REGIONS_HEADER).map_err(csv_err)?;
    for (i, g) in result.grid.gamma_values.iter().enumerate() {
        for (j, k) in result.grid.kappa_values.iter().enumerate() {
            let delta = result.delta_f[i][j].map(fmt_float).unwrap_or_default();
            w.write_record([
                fmt_float(*g),
                fmt_float(*k),
                result.regions[i][j].as_str().to_string(),
                delta,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
