//! Box-constrained CMA-ES search over code parameters.

mod cma;

pub use cma::{cma_init, CmaConstants, CmaState, DEFAULT_POPSIZE, DEFAULT_SIGMA0};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelOptions, NoisePoint};
use crate::codes::{
    build_gkp, build_np, CodeFamily, CodePair, GkpParams, NpParams, Truncation, HARD_DIM_CAP,
};
use crate::error::{Error, Result};
use crate::qec::{evaluate, FidelityResult};
use crate::rng::derive_seed;

pub const DESK_DIM_CAP: usize = 220;
pub const DEFAULT_GENERATIONS: usize = 60;

/// Parameter sets reachable at laptop scale or at the full published scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn truncation(&self) -> Truncation {
        let max_dim = match self {
            Scale::Desk => DESK_DIM_CAP,
            Scale::Paper => HARD_DIM_CAP,
        };
        Truncation {
            max_dim,
            ..Truncation::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParam {
    pub name: String,
    pub values: Vec<u32>,
}

/// Continuous box plus an optional discrete parameter enumerated by restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub discrete: Option<DiscreteParam>,
}

impl SearchSpace {
    pub fn new(
        names: Vec<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        discrete: Option<DiscreteParam>,
    ) -> Result<Self> {
        let space = Self {
            names,
            lower,
            upper,
            discrete,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty()
            || self.names.len() != self.lower.len()
            || self.names.len() != self.upper.len()
        {
            return Err(Error::InvalidSpace(format!(
                "{} names, {} lower and {} upper bounds",
                self.names.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for ((name, lo), hi) in self.names.iter().zip(&self.lower).zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "degenerate bounds for {name}: [{lo}, {hi}]"
                )));
            }
        }
        if let Some(d) = &self.discrete {
            if d.values.is_empty() {
                return Err(Error::InvalidSpace(format!(
                    "no values for discrete parameter {}",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn gkp(scale: Scale) -> Self {
        let root_pi = std::f64::consts::PI.sqrt();
        let delta_lo = match scale {
            Scale::Desk => 0.3,
            Scale::Paper => 0.18,
        };
        Self {
            names: vec!["alpha".into(), "beta_real".into(), "delta".into()],
            lower: vec![0.1, -root_pi, delta_lo],
            upper: vec![root_pi, root_pi, 0.6],
            discrete: None,
        }
    }

    pub fn np(scale: Scale) -> Self {
        let n_hi = match scale {
            Scale::Desk => 3.0,
            Scale::Paper => 4.0,
        };
        Self {
            names: vec!["f".into(), "r".into(), "n".into()],
            lower: vec![0.0, -0.4, 1.0],
            upper: vec![1.0, 0.4, n_hi],
            discrete: Some(DiscreteParam {
                name: "s".into(),
                values: (1..=5).collect(),
            }),
        }
    }

    pub fn for_family(family: CodeFamily, scale: Scale) -> Result<Self> {
        match family {
            CodeFamily::Gkp => Ok(Self::gkp(scale)),
            CodeFamily::Np => Ok(Self::np(scale)),
            CodeFamily::TrivialFock => Err(Error::InvalidSpace("the trivial code has no parameters".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Discrete assignments to enumerate; a single `None` when there are none.
    pub fn assignments(&self) -> Vec<Option<u32>> {
        match &self.discrete {
            Some(d) => d.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Everything besides the search box that shapes an optimization run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub sigma0: f64,
    pub popsize: usize,
    pub constants: CmaConstants,
    pub truncation: Truncation,
    pub channel: ChannelOptions,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            sigma0: DEFAULT_SIGMA0,
            popsize: DEFAULT_POPSIZE,
            constants: CmaConstants::default(),
            truncation: Scale::Desk.truncation(),
            channel: ChannelOptions::default(),
        }
    }
}

impl OptimizerSettings {
    pub fn default_budget(&self) -> usize {
        DEFAULT_GENERATIONS * self.popsize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub run: usize,
    pub generation: usize,
    /// Best fitness seen so far in this run.
    pub best: f64,
    /// Mean fitness of the generation.
    pub mean: f64,
    pub sigma: f64,
    pub condition: f64,
}

/// Outcome of one CMA-ES run over a black-box objective.
#[derive(Clone, Debug)]
pub struct CmaRun<T> {
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub best_payload: Option<T>,
    pub evaluations: usize,
    pub successes: usize,
    pub reconditions: usize,
    pub trace: Vec<TraceRow>,
}

/// Maximizes `objective` over the box of `space` for `budget / popsize`
/// generations. The objective returns a fitness and an optional payload;
/// a missing payload marks a failed evaluation.
pub fn maximize<T, F>(
    space: &SearchSpace,
    objective: F,
    budget: usize,
    seed: u64,
    settings: &OptimizerSettings,
    run: usize,
) -> Result<CmaRun<T>>
where
    T: Send + Clone,
    F: Fn(&[f64]) -> (f64, Option<T>) + Sync,
{
    space.validate()?;
    if budget < settings.popsize {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is smaller than the population size {}",
            settings.popsize
        )));
    }
    let mut state = CmaState::new(
        space.dim(),
        settings.sigma0,
        settings.popsize,
        seed,
        settings.constants,
    )?;
    let generations = budget / settings.popsize;
    let mut best_value = f64::NEG_INFINITY;
    let mut best_params = space.denormalize(state.mean());
    let mut best_payload = None;
    let mut evaluations = 0;
    let mut successes = 0;
    let mut trace = Vec::with_capacity(generations);
    for generation in 0..generations {
        let population = state.ask();
        let params: Vec<Vec<f64>> = population.iter().map(|x| space.denormalize(x)).collect();
        let results: Vec<(f64, Option<T>)> = params.par_iter().map(|p| objective(p)).collect();
        let fitness: Vec<f64> = results.iter().map(|r| r.0).collect();
        evaluations += results.len();
        for (i, (value, payload)) in results.into_iter().enumerate() {
            if payload.is_some() {
                successes += 1;
            }
            if value > best_value {
                best_value = value;
                best_params = params[i].clone();
                best_payload = payload;
            }
        }
        let finite: Vec<f64> = fitness.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        state.tell(&fitness)?;
        trace.push(TraceRow {
            run,
            generation,
            best: best_value,
            mean,
            sigma: state.sigma(),
            condition: state.condition_number(),
        });
    }
    Ok(CmaRun {
        best_params,
        best_value,
        best_payload,
        evaluations,
        successes,
        reconditions: state.reconditions(),
        trace,
    })
}

/// Canonical parameter names of a family, discrete parameters included.
pub fn family_param_names(family: CodeFamily) -> Vec<String> {
    let names: &[&str] = match family {
        CodeFamily::Gkp => &["alpha", "beta_real", "delta"],
        CodeFamily::Np => &["f", "s", "r", "n"],
        CodeFamily::TrivialFock => &["dim"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Builds a code from continuous parameters in search-space order plus the
/// discrete assignment. Returns the full canonical parameter vector too.
pub fn build_candidate(
    family: CodeFamily,
    params: &[f64],
    discrete: Option<u32>,
    truncation: &Truncation,
) -> Result<(CodePair, Vec<f64>)> {
    match family {
        CodeFamily::Gkp => {
            let [alpha, beta_real, delta] = take3(params)?;
            let code = build_gkp(&GkpParams::new(alpha, beta_real, delta)?, truncation)?;
            Ok((code, vec![alpha, beta_real, delta]))
        }
        CodeFamily::Np => {
            let [f, r, n] = take3(params)?;
            let s = discrete.ok_or_else(|| Error::InvalidSpace("NP candidates need a value of s".into()))?;
            let code = build_np(&NpParams::new(f, s, r, n)?, truncation)?;
            Ok((code, vec![f, s as f64, r, n]))
        }
        CodeFamily::TrivialFock => Err(Error::InvalidSpace("the trivial code is not optimized".into())),
    }
}

fn take3(p: &[f64]) -> Result<[f64; 3]> {
    p.try_into()
        .map_err(|_| Error::InvalidSpace(format!("expected 3 continuous parameters, got {}", p.len())))
}

/// Fitness of one candidate: `f_tilde`, or 0 when construction fails or the
/// diagnostics are flagged.
pub fn candidate_fitness(
    family: CodeFamily,
    params: &[f64],
    discrete: Option<u32>,
    noise: NoisePoint,
    settings: &OptimizerSettings,
) -> (f64, Option<(FidelityResult, Vec<f64>)>) {
    let outcome = build_candidate(family, params, discrete, &settings.truncation)
        .and_then(|(code, full)| evaluate(&code, noise, &settings.channel).map(|f| (f, full)));
    match outcome {
        Ok((f, full)) if !f.diagnostics.flagged => (f.f_tilde, Some((f, full))),
        Ok(_) => (0.0, None),
        Err(e) => {
            log::trace!("candidate {params:?} (s = {discrete:?}) rejected: {e}");
            (0.0, None)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub assignment: Option<u32>,
    pub restart: usize,
    pub seed: u64,
    pub best: f64,
    pub best_params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub noise: NoisePoint,
    pub family: CodeFamily,
    pub param_names: Vec<String>,
    pub best_params: Vec<f64>,
    pub best_fidelity: FidelityResult,
    pub evaluations: usize,
    pub reconditions: usize,
    pub per_restart: Vec<RestartSummary>,
    pub trace: Vec<TraceRow>,
}

impl OptimizationRecord {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.best_params[i])
    }
}

/// Runs CMA-ES for every discrete assignment and `restarts` seeds each,
/// spending `budget` evaluations per run, and keeps the best candidate.
pub fn optimize_code(
    family: CodeFamily,
    noise: NoisePoint,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    restarts: usize,
    settings: &OptimizerSettings,
) -> Result<OptimizationRecord> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let mut best: Option<(FidelityResult, Vec<f64>)> = None;
    let mut per_restart = Vec::new();
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut reconditions = 0;
    for (a, assignment) in space.assignments().into_iter().enumerate() {
        for restart in 0..restarts {
            let run_seed = derive_seed(seed, &[a as u64, restart as u64]);
            let run_index = per_restart.len();
            let objective = |p: &[f64]| candidate_fitness(family, p, assignment, noise, settings);
            let run = maximize(space, objective, budget, run_seed, settings, run_index)?;
            evaluations += run.evaluations;
            reconditions += run.reconditions;
            trace.extend(run.trace);
            let summary = match run.best_payload {
                Some((fid, full)) => {
                    let s = RestartSummary {
                        assignment,
                        restart,
                        seed: run_seed,
                        best: fid.f_tilde,
                        best_params: full.clone(),
                    };
                    if best.as_ref().is_none_or(|(b, _)| fid.f_tilde > b.f_tilde) {
                        best = Some((fid, full));
                    }
                    s
                }
                None => RestartSummary {
                    assignment,
                    restart,
                    seed: run_seed,
                    best: 0.0,
                    best_params: Vec::new(),
                },
            };
            log::info!(
                "{family} at ({}, {}): s = {assignment:?}, restart {restart}: best {}",
                noise.gamma_t,
                noise.kappa_t,
                summary.best
            );
            per_restart.push(summary);
        }
    }
    let (best_fidelity, best_params) = best.ok_or_else(|| {
        Error::OptimizationFailure(format!(
            "no successful {family} evaluation in {evaluations} candidates"
        ))
    })?;
    Ok(OptimizationRecord {
        noise,
        family,
        param_names: family_param_names(family),
        best_params,
        best_fidelity,
        evaluations,
        reconditions,
        per_restart,
        trace,
    })
}

/// Largest pairwise fidelity spread relative to the smallest infidelity.
pub fn repeatability_report(records: &[OptimizationRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "repeatability needs at least 2 records, got {}",
            records.len()
        )));
    }
    let first = &records[0];
    if records
        .iter()
        .any(|r| r.family != first.family || r.noise != first.noise)
    {
        return Err(Error::InvalidArgument(
            "records differ in family or noise point".into(),
        ));
    }
    let f: Vec<f64> = records.iter().map(|r| r.best_fidelity.f_tilde).collect();
    let mut spread: f64 = 0.0;
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            spread = spread.max((f[i] - f[j]).abs());
        }
    }
    if spread == 0.0 {
        return Ok(0.0);
    }
    let min_infidelity = f.iter().map(|v| 1.0 - v).fold(f64::INFINITY, f64::min);
    Ok(spread / min_infidelity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2() -> SearchSpace {
        SearchSpace::new(
            vec!["x".into(), "y".into()],
            vec![-3.0, 10.0],
            vec![5.0, 12.0],
            None,
        )
        .unwrap()
    }

    fn small_settings(popsize: usize) -> OptimizerSettings {
        OptimizerSettings {
            popsize,
            ..OptimizerSettings::default()
        }
    }

    #[test]
    fn presets_are_valid() {
        for scale in [Scale::Desk, Scale::Paper] {
            SearchSpace::gkp(scale).validate().unwrap();
            SearchSpace::np(scale).validate().unwrap();
        }
        assert_eq!(SearchSpace::gkp(Scale::Paper).lower[2], 0.18);
        assert_eq!(SearchSpace::gkp(Scale::Desk).lower[2], 0.3);
        assert_eq!(SearchSpace::np(Scale::Desk).upper[2], 3.0);
        assert_eq!(SearchSpace::np(Scale::Paper).upper[2], 4.0);
        assert_eq!(SearchSpace::np(Scale::Desk).assignments().len(), 5);
        assert_eq!(SearchSpace::gkp(Scale::Desk).assignments(), vec![None]);
        assert!(SearchSpace::for_family(CodeFamily::TrivialFock, Scale::Desk).is_err());
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = SearchSpace::new(vec!["x".into()], vec![1.0], vec![1.0], None).unwrap_err();
        assert!(matches!(err, Error::InvalidSpace(_)));
        assert!(SearchSpace::new(vec!["x".into()], vec![0.0, 1.0], vec![1.0, 2.0], None).is_err());
    }

    #[test]
    fn normalize_roundtrip() {
        let s = box2();
        let p = vec![1.5, 11.2];
        let back = s.denormalize(&s.normalize(&p));
        assert!((back[0] - p[0]).abs() < 1e-14 && (back[1] - p[1]).abs() < 1e-14);
        assert_eq!(s.denormalize(&[0.5, 0.5]), vec![1.0, 11.0]);
    }

    #[test]
    fn argmax_survives_affine_rescaling() {
        // separable quadratic with a known argmax in original coordinates
        let s = box2();
        let target = [2.2, 10.7];
        let obj = |p: &[f64]| {
            let v = -(p[0] - target[0]).powi(2) - 40.0 * (p[1] - target[1]).powi(2);
            (v, Some(()))
        };
        let run = maximize(&s, obj, 50 * 120, 4, &small_settings(50), 0).unwrap();
        assert!((run.best_params[0] - target[0]).abs() < 1e-4);
        assert!((run.best_params[1] - target[1]).abs() < 1e-4);

        // same objective on the unit box directly
        let unit =
            SearchSpace::new(vec!["u".into(), "v".into()], vec![0.0, 0.0], vec![1.0, 1.0], None).unwrap();
        let scaled = |u: &[f64]| obj(&s.denormalize(u));
        let run_u = maximize(&unit, scaled, 50 * 120, 4, &small_settings(50), 0).unwrap();
        let back = s.denormalize(&run_u.best_params);
        assert!((back[0] - run.best_params[0]).abs() < 1e-12);
        assert!((back[1] - run.best_params[1]).abs() < 1e-12);
    }

    #[test]
    fn incumbent_trace_is_monotone() {
        let s = box2();
        let obj = |p: &[f64]| (-(p[0] * p[0]) - (p[1] - 11.0).powi(2), Some(()));
        let run = maximize(&s, obj, 20 * 30, 9, &small_settings(20), 0).unwrap();
        assert_eq!(run.trace.len(), 30);
        for w in run.trace.windows(2) {
            assert!(w[1].best >= w[0].best);
        }
    }

    #[test]
    fn one_dimensional_mean_converges_monotonically() {
        let s = SearchSpace::new(vec!["x".into()], vec![0.0], vec![1.0], None).unwrap();
        let mut state = CmaState::new(1, 0.3, 10, 17, CmaConstants::default()).unwrap();
        state.ask();
        state.tell(&[0.0; 10]).unwrap();
        let mut distances = Vec::new();
        for _ in 0..60 {
            let pop = state.ask();
            let fit: Vec<f64> = pop.iter().map(|x| -(s.denormalize(x)[0] - 0.5).powi(2)).collect();
            state.tell(&fit).unwrap();
            distances.push((state.mean()[0] - 0.5).abs());
        }
        assert!(distances[59] < 1e-8);
        // per-generation distances are noisy; their 5-generation log averages
        // must shrink strictly once the step size has adapted
        let blocks: Vec<f64> = distances[10..]
            .chunks(5)
            .map(|c| c.iter().map(|d| d.max(1e-300).ln()).sum::<f64>() / c.len() as f64)
            .collect();
        for w in blocks.windows(2) {
            assert!(w[1] < w[0], "{blocks:?}");
        }
    }

    #[test]
    fn sample_mean_matches_distribution_mean() {
        let n = 100_000;
        let mut state = CmaState::new(2, 0.01, n, 3, CmaConstants::default()).unwrap();
        let pop = state.ask();
        for d in 0..2 {
            let mean = pop.iter().map(|x| x[d]).sum::<f64>() / n as f64;
            let se = 0.01 / (n as f64).sqrt();
            assert!((mean - 0.5).abs() < 4.0 * se, "dim {d}: {mean}");
        }
    }

    #[test]
    fn budget_below_popsize_rejected() {
        let s = box2();
        let obj = |_: &[f64]| (0.0, Some(()));
        assert!(matches!(
            maximize(&s, obj, 10, 1, &small_settings(20), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn build_candidate_orders_parameters() {
        let t = Scale::Desk.truncation();
        let (code, full) = build_candidate(CodeFamily::Np, &[0.5, 0.0, 2.0], Some(2), &t).unwrap();
        assert_eq!(full, vec![0.5, 2.0, 0.0, 2.0]);
        assert_eq!(code.family, CodeFamily::Np);
        assert!(build_candidate(CodeFamily::Np, &[0.5, 0.0, 2.0], None, &t).is_err());
        assert!(build_candidate(CodeFamily::Gkp, &[1.0, 0.5], None, &t).is_err());
    }

    #[test]
    fn infeasible_candidate_scores_zero() {
        let settings = OptimizerSettings::default();
        let noise = NoisePoint::new(0.05, 1e-4).unwrap();
        // alpha = 0.1 needs a lattice window far above the cap
        let (f, payload) = candidate_fitness(CodeFamily::Gkp, &[0.1, 0.0, 0.3], None, noise, &settings);
        assert_eq!(f, 0.0);
        assert!(payload.is_none());
    }

    fn quick_np(seed: u64) -> OptimizationRecord {
        let settings = OptimizerSettings {
            popsize: 8,
            ..OptimizerSettings::default()
        };
        let mut space = SearchSpace::np(Scale::Desk);
        space.discrete = Some(DiscreteParam {
            name: "s".into(),
            values: vec![1, 2],
        });
        let noise = NoisePoint::new(0.05, 1e-3).unwrap();
        optimize_code(CodeFamily::Np, noise, &space, 16, seed, 1, &settings).unwrap()
    }

    #[test]
    fn optimize_code_is_deterministic_and_consistent() {
        let a = quick_np(5);
        let b = quick_np(5);
        assert_eq!(a, b);
        assert_eq!(a.evaluations, 2 * 16);
        assert_eq!(a.per_restart.len(), 2);
        let max = a.per_restart.iter().map(|r| r.best).fold(0.0, f64::max);
        assert_eq!(a.best_fidelity.f_tilde, max);
        assert_eq!(a.param_names, family_param_names(CodeFamily::Np));
        let s = a.param("s").unwrap();
        assert!(s == 1.0 || s == 2.0);
        assert_eq!(repeatability_report(&[a.clone(), b]).unwrap(), 0.0);
        assert!(repeatability_report(&[a]).is_err());
    }

    #[test]
    fn all_failures_is_an_optimization_error() {
        let settings = OptimizerSettings {
            popsize: 4,
            truncation: Truncation {
                max_dim: 4,
                ..Truncation::default()
            },
            ..OptimizerSettings::default()
        };
        let noise = NoisePoint::new(0.05, 1e-3).unwrap();
        let err = optimize_code(
            CodeFamily::Gkp,
            noise,
            &SearchSpace::gkp(Scale::Desk),
            4,
            1,
            1,
            &settings,
        )
        .unwrap_err();
        assert!(matches!(err, Error::OptimizationFailure(_)));
    }
}
