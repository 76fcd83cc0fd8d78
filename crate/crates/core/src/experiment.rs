//! Multi-trial method comparisons, parameter sweeps and their CSV/JSON output.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    formula_budget, latin_hypercube, random_search, sample_uniform, BudgetMode,
};
use crate::domain::{check_assignment, Assignment, SearchSpace};
use crate::error::{Error, Result};
use crate::extproc::spawn_evaluator;
use crate::grat::OmegaPolicy;
use crate::hierarchy::{build_hierarchy, TuningQuery};
use crate::objectives::{builtin, EvaluationLedger, ObjectiveHandle};
use crate::par::{self, Execution};
use crate::rng::{self, derive_seed};
use crate::runtime::{tune_with, MessageEvent, StopCriteria, TuneOptions, TuningReport};

pub const CSV_HEADER: &str = "trial,method,objective,eta,omega,iters,best,evals,last_best_iter";

/// z value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

// Stream ids far above any node id.
const INIT_STREAM: u64 = u64::MAX;
const RANDOM_STREAM: u64 = u64::MAX - 1;
const LHS_STREAM: u64 = u64::MAX - 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grat,
    Random,
    Lhs,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grat" => Ok(Method::Grat),
            "random" => Ok(Method::Random),
            "lhs" => Ok(Method::Lhs),
            _ => Err(Error::Config(format!(
                "method must be grat|random|lhs, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Grat => "grat",
            Method::Random => "random",
            Method::Lhs => "lhs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eta,
    Iterations,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(SweepAxis::Eta),
            "iterations" | "iters" => Ok(SweepAxis::Iterations),
            _ => Err(Error::Config(format!(
                "sweep axis must be eta|iterations, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: String,
    pub methods: Vec<Method>,
    pub eta: usize,
    pub omega: u32,
    pub c: usize,
    pub iters: usize,
    pub trials: usize,
    pub seed: u64,
    pub budget_mode: BudgetMode,
    pub omega_policy: OmegaPolicy,
    pub patience: Option<usize>,
    pub target: Option<f64>,
    /// Start point for every trial; drawn uniformly per trial when absent.
    pub initial: Option<Assignment>,
    /// Trial-level worker cap; 0 uses every core.
    pub workers: usize,
    pub execution: Execution,
    /// Record the message trace of the first trial's hierarchical run.
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: "hartmann3".into(),
            methods: vec![Method::Grat, Method::Random, Method::Lhs],
            eta: 10,
            omega: 1,
            c: 2,
            iters: 15,
            trials: 100,
            seed: 0,
            budget_mode: BudgetMode::Measured,
            omega_policy: OmegaPolicy::Fixed,
            patience: None,
            target: None,
            initial: None,
            workers: 0,
            execution: Execution::Parallel,
            trace: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.methods.is_empty() {
            problems.push("methods: at least one method is required".to_string());
        }
        if self.eta == 0 {
            problems.push("eta: must be at least 1".into());
        }
        if self.omega == 0 {
            problems.push("omega: must be at least 1".into());
        }
        if self.c < 2 {
            problems.push("c: must be at least 2".into());
        }
        if self.iters == 0 {
            problems.push("iters: must be at least 1".into());
        }
        if self.trials == 0 {
            problems.push("trials: must be at least 1".into());
        }
        if self.patience == Some(0) {
            problems.push("patience: must be at least 1".into());
        }
        if self.budget_mode == BudgetMode::Measured
            && !self.methods.contains(&Method::Grat)
            && self.methods.iter().any(|m| *m != Method::Grat)
        {
            problems.push("budget-mode: `measured` needs grat among the methods".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn stop(&self) -> StopCriteria {
        StopCriteria {
            max_iterations: self.iters,
            patience: self.patience,
            target: self.target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: Method,
    pub objective: String,
    pub eta: usize,
    pub omega: u32,
    pub iters: usize,
    pub best: f64,
    pub evals: u64,
    pub last_best_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub eta: usize,
    pub iters: usize,
    pub trials: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_evals: f64,
    pub mean_last_best_iter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<MethodSummary>,
    #[serde(skip)]
    pub trace: Option<Vec<MessageEvent>>,
}

/// Sample mean and standard error of the mean (0 for a single sample).
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Resolves a CLI objective name. `extproc:<command>` needs the space the
/// evaluator serves.
pub fn resolve_objective(name: &str, space: Option<&SearchSpace>) -> Result<ObjectiveHandle> {
    if let Some(command) = name.strip_prefix("extproc:") {
        let space = space.ok_or_else(|| {
            Error::Config("extproc objectives need a search space from --config".into())
        })?;
        return Ok(Arc::new(spawn_evaluator(command, space.clone())?));
    }
    builtin(name)
}

struct TrialOutcome {
    rows: Vec<TrialRow>,
    trace: Option<Vec<MessageEvent>>,
}

fn row(
    cfg: &ExperimentConfig,
    objective: &str,
    trial: usize,
    method: Method,
    r: &TuningReport,
) -> TrialRow {
    TrialRow {
        trial,
        method,
        objective: objective.to_owned(),
        eta: cfg.eta,
        omega: cfg.omega,
        iters: cfg.iters,
        best: r.incumbent_response,
        evals: r.evaluations,
        last_best_iter: r.last_best_iteration,
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    objective: &ObjectiveHandle,
    trial: usize,
) -> Result<TrialOutcome> {
    let space = objective.space();
    let trial_seed = derive_seed(cfg.seed, trial as u64);
    let initial = match &cfg.initial {
        Some(a) => a.clone(),
        None => sample_uniform(space, &mut rng::stream(trial_seed, INIT_STREAM)),
    };
    let name = objective.name();
    let mut rows = Vec::new();
    let mut trace = None;
    let mut measured = None;

    if cfg.methods.contains(&Method::Grat) {
        let mut query = TuningQuery::new(space.clone(), initial);
        query.c = cfg.c;
        query.eta = cfg.eta;
        query.omega = cfg.omega;
        query.omega_policy = cfg.omega_policy;
        query.stop = cfg.stop();
        let tree = build_hierarchy(&query)?;
        let ledger = EvaluationLedger::new();
        let options = TuneOptions {
            execution: cfg.execution,
            record_messages: cfg.trace && trial == 0,
        };
        let outcome = tune_with(
            &tree,
            &query,
            objective.as_ref(),
            &ledger,
            trial_seed,
            &options,
        )?;
        if options.record_messages {
            trace = Some(outcome.messages);
        }
        measured = Some(outcome.report.evaluations);
        rows.push(row(cfg, name, trial, Method::Grat, &outcome.report));
    }

    let budget = match cfg.budget_mode {
        BudgetMode::Formula => formula_budget(cfg.c, cfg.eta, cfg.iters),
        BudgetMode::Measured => measured.unwrap_or(0),
    };
    for &method in &cfg.methods {
        let report = match method {
            Method::Grat => continue,
            Method::Random => random_search(
                space,
                objective.as_ref(),
                &EvaluationLedger::new(),
                budget,
                &mut rng::stream(trial_seed, RANDOM_STREAM),
            )?,
            Method::Lhs => latin_hypercube(
                space,
                objective.as_ref(),
                &EvaluationLedger::new(),
                budget,
                &mut rng::stream(trial_seed, LHS_STREAM),
            )?,
        };
        rows.push(row(cfg, name, trial, method, &report));
    }
    Ok(TrialOutcome { rows, trace })
}

/// Runs `cfg.trials` independent repetitions of every configured method.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    objective: &ObjectiveHandle,
) -> Result<ExperimentResults> {
    cfg.validate()?;
    if let Some(initial) = &cfg.initial {
        check_assignment(objective.space(), initial)?;
    }
    let outcomes = par::map_range(cfg.trials, cfg.workers, cfg.execution, |t| {
        run_trial(cfg, objective, t)
    });
    let mut rows = Vec::new();
    let mut trace = None;
    for outcome in outcomes {
        let outcome = outcome?;
        rows.extend(outcome.rows);
        trace = trace.or(outcome.trace);
    }
    let summary = summarize(&rows);
    Ok(ExperimentResults {
        rows,
        summary,
        trace,
    })
}

/// One experiment per axis value, concatenated in long format.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
    objective: &ObjectiveHandle,
) -> Result<ExperimentResults> {
    if values.is_empty() {
        return Err(Error::Config(
            "sweep: at least one value is required".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut trace = None;
    for &v in values {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::Eta => point.eta = v,
            SweepAxis::Iterations => point.iters = v,
        }
        let results = run_experiment(&point, objective)?;
        rows.extend(results.rows);
        trace = trace.or(results.trace);
    }
    let summary = summarize(&rows);
    Ok(ExperimentResults {
        rows,
        summary,
        trace,
    })
}

/// Per (eta, iters, method) statistics in first-appearance order.
pub fn summarize(rows: &[TrialRow]) -> Vec<MethodSummary> {
    type Group<'r> = ((usize, usize, Method), Vec<&'r TrialRow>);
    let mut groups: Vec<Group> = Vec::new();
    for r in rows {
        let key = (r.eta, r.iters, r.method);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((eta, iters, method), members)| {
            let bests: Vec<f64> = members.iter().map(|r| r.best).collect();
            let (mean, std_err) = mean_and_std_err(&bests);
            let n = members.len() as f64;
            MethodSummary {
                method,
                eta,
                iters,
                trials: members.len(),
                mean,
                std_err,
                ci_low: mean - Z95 * std_err,
                ci_high: mean + Z95 * std_err,
                mean_evals: members.iter().map(|r| r.evals as f64).sum::<f64>() / n,
                mean_last_best_iter: members.iter().map(|r| r.last_best_iter as f64).sum::<f64>()
                    / n,
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl ExperimentResults {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.trial,
                r.method,
                csv_field(&r.objective),
                r.eta,
                r.omega,
                r.iters,
                r.best,
                r.evals,
                r.last_best_iter
            ));
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::from("method,eta,iters,trials,mean,std_err,ci95_low,ci95_high,mean_evals,mean_last_best_iter\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.1},{:.2}\n",
                s.method,
                s.eta,
                s.iters,
                s.trials,
                s.mean,
                s.std_err,
                s.ci_low,
                s.ci_high,
                s.mean_evals,
                s.mean_last_best_iter
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}
