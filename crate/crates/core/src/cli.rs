//! Command-line front end: `eval`, `optimize`, `sweep` and `plan`.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channel::{deph_count, estimate_memory, loss_count, ChannelOptions, NoisePoint, SupportMode};
use crate::codes::{
    build_gkp, build_np, build_trivial_fock, gkp_truncation, np_truncation, CodeFamily, CodePair,
    CodeSummary, GkpParams, NpParams, Truncation, DEFAULT_EPS_TOL,
};
use crate::error::{Error, Result};
use crate::optimizer::{
    optimize_code, repeatability_report, CmaConstants, OptimizationRecord, OptimizerSettings, Scale,
    SearchSpace, DEFAULT_GENERATIONS,
};
use crate::qec::{baseline_fidelity, evaluate, FidelityResult, LOGICAL_DIM};
use crate::sweep::{
    desk_grid, run_sweep, sha256_hex, shape_diagnostics, write_boundary_csv, write_cells_csv,
    write_regions_csv, Preset, RunOptions, SweepConfig, SweepProgress, SweepReport, CHECKPOINT_FILE,
    SCHEMA_VERSION,
};

pub const OUT_ENV: &str = "BOSONBOUND_OUT";
pub const DEFAULT_OUT: &str = "bosonbound-out";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRACE_HEADER: [&str; 7] = ["seed", "run", "generation", "best", "mean", "sigma", "condition"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GkpBlock {
    pub alpha: f64,
    pub beta_real: f64,
    pub delta: f64,
}

impl Default for GkpBlock {
    fn default() -> Self {
        let hex = GkpParams::hexagonal(0.3);
        Self {
            alpha: hex.alpha,
            beta_real: hex.beta_real,
            delta: hex.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpBlock {
    pub f: f64,
    pub s: u32,
    pub r: f64,
    pub n: f64,
}

impl Default for NpBlock {
    fn default() -> Self {
        Self {
            f: 0.5,
            s: 2,
            r: 0.0,
            n: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerBlock {
    /// Evaluations per run; defaults to 60 generations of `popsize`.
    pub budget: Option<usize>,
    pub restarts: usize,
    /// Seeds to run; empty means the top-level seed.
    pub seeds: Vec<u64>,
    pub popsize: usize,
    pub sigma0: f64,
    pub constants: CmaConstants,
}

impl Default for OptimizerBlock {
    fn default() -> Self {
        Self {
            budget: None,
            restarts: 1,
            seeds: Vec::new(),
            popsize: crate::optimizer::DEFAULT_POPSIZE,
            sigma0: crate::optimizer::DEFAULT_SIGMA0,
            constants: CmaConstants::default(),
        }
    }
}

impl OptimizerBlock {
    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(DEFAULT_GENERATIONS * self.popsize)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub gkp_budget: Option<usize>,
    pub np_budget: Option<usize>,
    /// Stop after computing this many new cells.
    pub stop_after: Option<usize>,
    /// Discard an existing checkpoint instead of resuming it.
    pub fresh: bool,
}

/// Every setting of a run. Loaded from TOML, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub preset: Preset,
    pub family: CodeFamily,
    pub gamma_t: f64,
    pub kappa_t: f64,
    pub eps_tol: f64,
    pub eps_kraus: f64,
    pub loss_floor: usize,
    pub deph_floor: usize,
    pub support: SupportMode,
    /// Truncation cap; defaults to 220 at desk scale and 2048 at paper scale.
    pub max_dim: Option<usize>,
    /// Re-evaluate with tolerances two orders below the measured infidelity.
    pub tighten: bool,
    pub memory_alpha: f64,
    pub bytes_per_element: usize,
    pub memory_budget_gib: f64,
    pub trivial_dim: usize,
    pub gkp: GkpBlock,
    pub np: NpBlock,
    pub optimizer: OptimizerBlock,
    pub sweep: SweepBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        let channel = ChannelOptions::default();
        Self {
            seed: 1,
            workers: 0,
            out: None,
            paper_scale: false,
            preset: Preset::Smoke,
            family: CodeFamily::Gkp,
            gamma_t: 0.05,
            kappa_t: 1e-4,
            eps_tol: DEFAULT_EPS_TOL,
            eps_kraus: channel.eps_kraus,
            loss_floor: channel.floors.0,
            deph_floor: channel.floors.1,
            support: channel.support,
            max_dim: None,
            tighten: false,
            memory_alpha: 3.0,
            bytes_per_element: 16,
            memory_budget_gib: 4.0,
            trivial_dim: crate::sweep::BASELINE_DIM,
            gkp: GkpBlock::default(),
            np: NpBlock::default(),
            optimizer: OptimizerBlock::default(),
            sweep: SweepBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn scale(&self) -> Scale {
        if self.paper_scale {
            Scale::Paper
        } else {
            Scale::Desk
        }
    }

    pub fn noise(&self) -> Result<NoisePoint> {
        NoisePoint::new(self.gamma_t, self.kappa_t).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn truncation(&self) -> Result<Truncation> {
        let max_dim = self.max_dim.unwrap_or(self.scale().truncation().max_dim);
        Truncation::new(self.eps_tol, max_dim).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn channel(&self) -> ChannelOptions {
        ChannelOptions {
            eps_kraus: self.eps_kraus,
            floors: (self.loss_floor, self.deph_floor),
            support: self.support,
        }
    }

    pub fn optimizer_settings(&self) -> Result<OptimizerSettings> {
        Ok(OptimizerSettings {
            sigma0: self.optimizer.sigma0,
            popsize: self.optimizer.popsize,
            constants: self.optimizer.constants,
            truncation: self.truncation()?,
            channel: self.channel(),
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.optimizer.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.optimizer.seeds.clone()
        }
    }

    /// Output directory: config or flag, then the environment, then the default.
    pub fn resolve_out(&mut self) {
        if self.out.is_none() {
            let dir = std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            self.out = Some(dir);
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# cannot render config: {e}\n"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub family: CodeFamily,
    pub dim: usize,
    pub loss_count: usize,
    pub deph_count: usize,
    pub n_kraus: usize,
    pub memory_bytes: f64,
    pub memory_budget_bytes: f64,
    pub over_budget: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Eval {
        family: CodeFamily,
        param_names: Vec<String>,
        params: Vec<f64>,
        code: CodeSummary,
        eps_tol: f64,
        eps_kraus: f64,
        result: FidelityResult,
    },
    Optimize {
        records: Vec<OptimizationRecord>,
        repeatability: Option<f64>,
    },
    Sweep {
        directory: PathBuf,
        completed: usize,
        total: usize,
        result_sha256: Option<String>,
        report: Option<SweepReport>,
    },
    Plan(PlanReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub timestamp_unix: u64,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub payload: Payload,
}

#[derive(Debug, Parser)]
#[command(
    name = "bosonbound",
    version,
    about = "Bosonic code benchmarking: GKP versus number-phase codes"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed (default 1)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = single-threaded)
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory (default: $BOSONBOUND_OUT or ./bosonbound-out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Lift desk-scale caps (delta down to 0.18, n up to 4, dim cap 2048)
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Sweep grid: smoke, small or full
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Increase log verbosity
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Default, Args)]
pub struct PointArgs {
    /// gkp, np or trivial
    #[arg(long)]
    pub family: Option<CodeFamily>,
    /// Loss strength gamma*t
    #[arg(long = "gamma-t")]
    pub gamma_t: Option<f64>,
    /// Dephasing strength kappa*t
    #[arg(long = "kappa-t")]
    pub kappa_t: Option<f64>,
    /// Fock truncation tail tolerance
    #[arg(long)]
    pub eps_tol: Option<f64>,
    /// Kraus completeness tolerance
    #[arg(long)]
    pub eps_kraus: Option<f64>,
    /// Certification support: quantile or strict
    #[arg(long)]
    pub support: Option<SupportMode>,
    /// Truncation dimension cap
    #[arg(long)]
    pub max_dim: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct CodeArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "beta-real", allow_hyphen_values = true)]
    pub beta_real: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub s: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long)]
    pub n: Option<f64>,
    /// Fock cutoff of the trivial code
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one code at one noise point
    Eval {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        code: CodeArgs,
        /// Tighten eps_tol and eps_kraus to 1% of the measured infidelity
        #[arg(long)]
        tighten: bool,
    },
    /// Optimize code parameters at one noise point
    Optimize {
        #[command(flatten)]
        point: PointArgs,
        /// Evaluations per run
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        popsize: Option<usize>,
        #[arg(long)]
        sigma0: Option<f64>,
        /// Comma-separated seeds; more than one adds a repeatability report
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Optimize both families over a noise grid and extract the boundary
    Sweep {
        /// Evaluations per GKP run
        #[arg(long)]
        gkp_budget: Option<usize>,
        /// Evaluations per NP run (per value of s)
        #[arg(long)]
        np_budget: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        popsize: Option<usize>,
        /// Stop after this many new cells (resume later)
        #[arg(long)]
        stop_after: Option<usize>,
        /// Ignore and replace an existing checkpoint
        #[arg(long)]
        fresh: bool,
    },
    /// Predict truncation, Kraus counts and memory for one code
    Plan {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        code: CodeArgs,
        /// Memory budget the estimate is checked against
        #[arg(long)]
        memory_budget_gib: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eval { .. } => "eval",
            Command::Optimize { .. } => "optimize",
            Command::Sweep { .. } => "sweep",
            Command::Plan { .. } => "plan",
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl PointArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.family, self.family);
        set(&mut c.gamma_t, self.gamma_t);
        set(&mut c.kappa_t, self.kappa_t);
        set(&mut c.eps_tol, self.eps_tol);
        set(&mut c.eps_kraus, self.eps_kraus);
        set(&mut c.support, self.support);
        if self.max_dim.is_some() {
            c.max_dim = self.max_dim;
        }
    }
}

impl CodeArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.gkp.alpha, self.alpha);
        set(&mut c.gkp.beta_real, self.beta_real);
        set(&mut c.gkp.delta, self.delta);
        set(&mut c.np.f, self.f);
        set(&mut c.np.s, self.s);
        set(&mut c.np.r, self.r);
        set(&mut c.np.n, self.n);
        set(&mut c.trivial_dim, self.dim);
    }
}

/// Merges the config file (if any) with command-line flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let common = &cli.common;
    set(&mut c.seed, common.seed);
    set(&mut c.workers, common.workers);
    if common.out.is_some() {
        c.out = common.out.clone();
    }
    c.paper_scale |= common.paper_scale;
    set(&mut c.preset, common.preset);
    match &cli.command {
        Command::Eval { point, code, tighten } => {
            point.apply(&mut c);
            code.apply(&mut c);
            c.tighten |= *tighten;
        }
        Command::Optimize {
            point,
            budget,
            restarts,
            popsize,
            sigma0,
            seeds,
        } => {
            point.apply(&mut c);
            if budget.is_some() {
                c.optimizer.budget = *budget;
            }
            set(&mut c.optimizer.restarts, *restarts);
            set(&mut c.optimizer.popsize, *popsize);
            set(&mut c.optimizer.sigma0, *sigma0);
            if !seeds.is_empty() {
                c.optimizer.seeds = seeds.clone();
            }
        }
        Command::Sweep {
            gkp_budget,
            np_budget,
            restarts,
            popsize,
            stop_after,
            fresh,
        } => {
            if gkp_budget.is_some() {
                c.sweep.gkp_budget = *gkp_budget;
            }
            if np_budget.is_some() {
                c.sweep.np_budget = *np_budget;
            }
            set(&mut c.optimizer.restarts, *restarts);
            set(&mut c.optimizer.popsize, *popsize);
            if stop_after.is_some() {
                c.sweep.stop_after = *stop_after;
            }
            c.sweep.fresh |= *fresh;
        }
        Command::Plan {
            point,
            code,
            memory_budget_gib,
        } => {
            point.apply(&mut c);
            code.apply(&mut c);
            set(&mut c.memory_budget_gib, *memory_budget_gib);
        }
    }
    c.resolve_out();
    Ok(c)
}

fn build_code(c: &RunConfig, truncation: &Truncation) -> Result<(CodePair, Vec<String>, Vec<f64>)> {
    let names = crate::optimizer::family_param_names(c.family);
    match c.family {
        CodeFamily::Gkp => {
            let p = GkpParams::new(c.gkp.alpha, c.gkp.beta_real, c.gkp.delta)?;
            Ok((
                build_gkp(&p, truncation)?,
                names,
                vec![p.alpha, p.beta_real, p.delta],
            ))
        }
        CodeFamily::Np => {
            let p = NpParams::new(c.np.f, c.np.s, c.np.r, c.np.n)?;
            Ok((build_np(&p, truncation)?, names, vec![p.f, p.s as f64, p.r, p.n]))
        }
        CodeFamily::TrivialFock => Ok((
            build_trivial_fock(c.trivial_dim)?,
            names,
            vec![c.trivial_dim as f64],
        )),
    }
}

fn eval_once(c: &RunConfig) -> Result<Payload> {
    let noise = c.noise()?;
    let truncation = c.truncation()?;
    let (code, param_names, params) = build_code(c, &truncation)?;
    let result = match c.family {
        CodeFamily::TrivialFock => baseline_fidelity(noise, c.trivial_dim)?,
        _ => evaluate(&code, noise, &c.channel())?,
    };
    Ok(Payload::Eval {
        family: c.family,
        param_names,
        params,
        code: code.summary(),
        eps_tol: c.eps_tol,
        eps_kraus: c.eps_kraus,
        result,
    })
}

pub fn cmd_eval(c: &mut RunConfig) -> Result<Payload> {
    let payload = eval_once(c)?;
    if !c.tighten {
        return Ok(payload);
    }
    let Payload::Eval { result, .. } = &payload else {
        unreachable!()
    };
    let target = (1e-2 * result.infidelity()).max(1e-15);
    if target >= c.eps_tol && target >= c.eps_kraus {
        return Ok(payload);
    }
    c.eps_tol = c.eps_tol.min(target);
    c.eps_kraus = c.eps_kraus.min(target);
    log::info!(
        "tightened eps_tol to {:e} and eps_kraus to {:e}",
        c.eps_tol,
        c.eps_kraus
    );
    eval_once(c)
}

pub fn cmd_optimize(c: &RunConfig) -> Result<(Payload, Vec<String>)> {
    let settings = c.optimizer_settings()?;
    let budget = c.optimizer.budget();
    if budget < settings.popsize {
        return Err(Error::Config(format!(
            "budget {budget} is smaller than the population size {}",
            settings.popsize
        )));
    }
    let space = SearchSpace::for_family(c.family, c.scale())?;
    let noise = c.noise()?;
    let mut records = Vec::new();
    let mut trace = Vec::new();
    for seed in c.seeds() {
        let record = optimize_code(
            c.family,
            noise,
            &space,
            budget,
            seed,
            c.optimizer.restarts,
            &settings,
        )?;
        for row in &record.trace {
            trace.push(
                [
                    seed.to_string(),
                    row.run.to_string(),
                    row.generation.to_string(),
                    crate::sweep::fmt_float(row.best),
                    crate::sweep::fmt_float(row.mean),
                    crate::sweep::fmt_float(row.sigma),
                    crate::sweep::fmt_float(row.condition),
                ]
                .join(","),
            );
        }
        records.push(record);
    }
    let repeatability = if records.len() > 1 {
        Some(repeatability_report(&records)?)
    } else {
        None
    };
    Ok((
        Payload::Optimize {
            records,
            repeatability,
        },
        trace,
    ))
}

pub fn sweep_config(c: &RunConfig) -> Result<SweepConfig> {
    let settings = c.optimizer_settings()?;
    let default_budget = c.optimizer.budget();
    let config = SweepConfig {
        seed: c.seed,
        restarts: c.optimizer.restarts,
        gkp_budget: c.sweep.gkp_budget.unwrap_or(default_budget),
        np_budget: c.sweep.np_budget.unwrap_or(default_budget),
        gkp_space: SearchSpace::gkp(c.scale()),
        np_space: SearchSpace::np(c.scale()),
        settings,
        baseline_dim: c.trivial_dim,
    };
    for budget in [config.gkp_budget, config.np_budget] {
        if budget < settings.popsize {
            return Err(Error::Config(format!(
                "budget {budget} is smaller than the population size {}",
                settings.popsize
            )));
        }
    }
    Ok(config)
}

fn create_out(path: &Path, name: &str) -> Result<fs::File> {
    Ok(fs::File::create(path.join(name))?)
}

pub fn cmd_sweep(c: &RunConfig) -> Result<Payload> {
    let out = c.out_dir();
    fs::create_dir_all(&out)?;
    let grid = desk_grid(c.preset);
    let config = sweep_config(c)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    if c.sweep.fresh && checkpoint.exists() {
        fs::remove_file(&checkpoint)?;
    }
    let options = RunOptions {
        checkpoint: Some(&checkpoint),
        stop_after: c.sweep.stop_after,
    };
    match run_sweep(&grid, &config, &options)? {
        SweepProgress::Partial { completed, total } => Ok(Payload::Sweep {
            directory: out,
            completed,
            total,
            result_sha256: None,
            report: None,
        }),
        SweepProgress::Complete(result) => {
            let json = result.to_json()?;
            fs::write(out.join("sweep.json"), &json)?;
            write_cells_csv(&result, create_out(&out, "cells.csv")?)?;
            write_boundary_csv(&result.boundary, create_out(&out, "boundary.csv")?)?;
            write_regions_csv(&result, create_out(&out, "regions.csv")?)?;
            let report = shape_diagnostics(&result);
            fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&report).map_err(|e| Error::Io(std::io::Error::other(e)))?,
            )?;
            for (g, k, family) in &report.baseline_violations {
                log::warn!("{family} optimum falls below the trivial code at ({g}, {k})");
            }
            Ok(Payload::Sweep {
                directory: out,
                completed: grid.len(),
                total: grid.len(),
                result_sha256: Some(sha256_hex(json.as_bytes())),
                report: Some(report),
            })
        }
    }
}

pub fn cmd_plan(c: &RunConfig) -> Result<PlanReport> {
    let truncation = c.truncation()?;
    let dim = match c.family {
        CodeFamily::Gkp => {
            GkpParams::new(c.gkp.alpha, c.gkp.beta_real, c.gkp.delta)?;
            gkp_truncation(c.gkp.delta, c.eps_tol)
        }
        CodeFamily::Np => np_truncation(&NpParams::new(c.np.f, c.np.s, c.np.r, c.np.n)?, &truncation)?,
        CodeFamily::TrivialFock => c.trivial_dim,
    };
    let noise = c.noise()?;
    let n_max = dim.saturating_sub(1);
    let half = 0.5 * c.eps_kraus;
    let loss = loss_count(noise.gamma_t, n_max, half, c.loss_floor).min(dim.max(c.loss_floor));
    let deph = deph_count(noise.kappa_t, n_max, half, c.deph_floor);
    let n_kraus = loss * deph;
    let memory_bytes = estimate_memory(LOGICAL_DIM, n_kraus, c.bytes_per_element, c.memory_alpha);
    let memory_budget_bytes = c.memory_budget_gib * f64::from(1u32 << 30);
    Ok(PlanReport {
        family: c.family,
        dim,
        loss_count: loss,
        deph_count: deph,
        n_kraus,
        memory_bytes,
        memory_budget_bytes,
        over_budget: memory_bytes > memory_budget_bytes,
    })
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn append_record(out: &Path, record: &ResultRecord) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join(RESULTS_FILE))?;
    let mut line = serde_json::to_string(record).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    Ok(())
}

fn write_trace(out: &Path, rows: &[String]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut text = TRACE_HEADER.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(out.join("trace.csv"), text)?;
    Ok(())
}

/// Runs one parsed command inside a pool of `workers` threads.
pub fn execute(cli: &Cli) -> Result<ResultRecord> {
    let mut config = effective_config(cli)?;
    log::info!("effective config:\n{}", config.to_toml());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let out = config.out_dir();
    let payload = pool.install(|| -> Result<Payload> {
        match &cli.command {
            Command::Eval { .. } => cmd_eval(&mut config),
            Command::Optimize { .. } => {
                let (payload, trace) = cmd_optimize(&config)?;
                write_trace(&out, &trace)?;
                Ok(payload)
            }
            Command::Sweep { .. } => cmd_sweep(&config),
            Command::Plan { .. } => {
                let report = cmd_plan(&config)?;
                if report.over_budget {
                    log::warn!(
                        "predicted peak memory {:.3e} bytes exceeds the budget of {:.3e} bytes",
                        report.memory_bytes,
                        report.memory_budget_bytes
                    );
                }
                Ok(Payload::Plan(report))
            }
        }
    })?;
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        timestamp_unix: now_unix(),
        command: cli.command.name().to_string(),
        config_hash: config.hash(),
        config,
        payload,
    };
    append_record(&out, &record)?;
    Ok(record)
}

fn summarize(record: &ResultRecord) -> String {
    match &record.payload {
        Payload::Eval { family, result, code, .. } => format!(
            "{family}: f_tilde = {:.12} in [{:.12}, {:.12}] (dim {}, n_kraus {}, mean photon {:.4}){}",
            result.f_tilde,
            result.f_lower,
            result.f_upper,
            code.dim,
            result.diagnostics.n_k,
            code.mean_photon,
            if result.diagnostics.flagged { " FLAGGED" } else { "" }
        ),
        Payload::Optimize { records, repeatability } => {
            let mut s = String::new();
            for r in records {
                let params: Vec<String> = r
                    .param_names
                    .iter()
                    .zip(&r.best_params)
                    .map(|(n, v)| format!("{n} = {v:.6}"))
                    .collect();
                s.push_str(&format!(
                    "{}: f_tilde = {:.12} at {} ({} evaluations)\n",
                    r.family,
                    r.best_fidelity.f_tilde,
                    params.join(", "),
                    r.evaluations
                ));
            }
            if let Some(rep) = repeatability {
                s.push_str(&format!("repeatability = {rep:.3e}\n"));
            }
            s.trim_end().to_string()
        }
        Payload::Sweep { directory, completed, total, report, .. } => match report {
            Some(r) => format!(
                "sweep complete: {total} cells, regions gkp/np/undecided = {:?}, {} boundary vertices, outputs in {}",
                r.region_counts,
                r.boundary_vertices,
                directory.display()
            ),
            None => format!("sweep paused: {completed}/{total} cells in {}", directory.display()),
        },
        Payload::Plan(p) => format!(
            "{}: dim {}, kraus {} x {} = {}, peak memory {:.3e} bytes{}",
            p.family,
            p.dim,
            p.loss_count,
            p.deph_count,
            p.n_kraus,
            p.memory_bytes,
            if p.over_budget { " (over budget)" } else { "" }
        ),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(record) => {
            println!("{}", summarize(&record));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("bosonbound").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 7\ngamma_t = 0.1\n[np]\ns = 4\n").unwrap();
        let p = path.to_str().unwrap();
        let cli = parse(&[
            "--config",
            p,
            "eval",
            "--family",
            "np",
            "--gamma-t",
            "0.02",
            "--out",
            "x",
        ]);
        let c = effective_config(&cli).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.gamma_t, 0.02);
        assert_eq!(c.np.s, 4);
        assert_eq!(c.family, CodeFamily::Np);
        assert_eq!(c.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn negative_values_parse() {
        let cli = parse(&["eval", "--beta-real", "-0.6734", "--r", "-0.2"]);
        let c = effective_config(&cli).unwrap();
        assert_eq!(c.gkp.beta_real, -0.6734);
        assert_eq!(c.np.r, -0.2);
    }

    #[test]
    fn plan_reports_appendix_dimension_and_counts() {
        let mut c = RunConfig {
            gamma_t: 0.0,
            kappa_t: 0.0,
            ..RunConfig::default()
        };
        c.gkp.delta = 0.18;
        let p = cmd_plan(&c).unwrap();
        assert_eq!(p.dim, 285);
        assert_eq!(p.n_kraus, c.loss_floor * c.deph_floor);
        c.gamma_t = 0.05;
        c.kappa_t = 1e-3;
        let p = cmd_plan(&c).unwrap();
        assert_eq!(p.n_kraus, p.loss_count * p.deph_count);
        assert!(p.memory_bytes > 0.0);
    }

    #[test]
    fn optimize_budget_below_popsize_is_config_error() {
        let mut c = RunConfig::default();
        c.optimizer.budget = Some(10);
        let err = cmd_optimize(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(run(["bosonbound", "eval", "--bogus"]), 2);
    }
}
