//! Matched-budget comparison methods: uniform random search and Latin
//! hypercube sampling.
//!
//! Both report in sample units: iteration `k` is the `k`-th fresh evaluation,
//! so `last_best_iteration` is the index of the sample that produced the
//! incumbent.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Assignment, HyperParameterSpec, ParamKind, Scale, SearchSpace, Value};
use crate::error::{Error, Result};
use crate::objectives::{EvaluationLedger, Objective};
use crate::runtime::{IterationRecord, TuningReport};

/// Attempts per budget unit before giving up on drawing an unseen point.
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// `c * eta * iterations`.
    Formula,
    /// Exactly the fresh evaluations the hierarchical run consumed.
    Measured,
}

impl FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "formula" => Ok(BudgetMode::Formula),
            "measured" => Ok(BudgetMode::Measured),
            _ => Err(Error::Config(format!(
                "budget mode must be formula|measured, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetMode::Formula => "formula",
            BudgetMode::Measured => "measured",
        })
    }
}

pub fn formula_budget(c: usize, eta: usize, iterations: usize) -> u64 {
    (c * eta * iterations) as u64
}

/// Maps `frac` in `[0, 1)` onto a real interval, in log space for log10.
fn real_at(lo: f64, hi: f64, scale: Scale, frac: f64) -> f64 {
    let v = match scale {
        Scale::Linear => lo + frac * (hi - lo),
        Scale::Log10 => {
            let (a, b) = (lo.log10(), hi.log10());
            10f64.powf(a + frac * (b - a))
        }
    };
    v.clamp(lo, hi)
}

fn uniform_value<R: Rng + ?Sized>(spec: &HyperParameterSpec, rng: &mut R) -> Value {
    match spec.kind() {
        ParamKind::RealInterval { lo, hi, scale } => {
            Value::Real(real_at(*lo, *hi, *scale, rng.random()))
        }
        ParamKind::Nominal { values } => {
            Value::Label(values[rng.random_range(0..values.len())].clone())
        }
    }
}

/// One uniform draw over the space: reals uniform on their (possibly log)
/// interval, nominals uniform over labels, fixed values copied.
pub fn sample_uniform<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Assignment {
    space
        .params()
        .iter()
        .map(|spec| {
            let value = match space.fixed().get(spec.name()) {
                Some(v) => v.clone(),
                None => uniform_value(spec, rng),
            };
            (spec.name().to_owned(), value)
        })
        .collect()
}

/// A Latin hypercube design of `budget` rows over the tuned reals; tuned
/// nominals are drawn uniformly per row.
pub fn latin_design<R: Rng + ?Sized>(
    space: &SearchSpace,
    budget: usize,
    rng: &mut R,
) -> Vec<Assignment> {
    let mut rows: Vec<Assignment> = vec![Assignment::new(); budget];
    for spec in space.params() {
        if let Some(v) = space.fixed().get(spec.name()) {
            rows.iter_mut().for_each(|r| r.set(spec.name(), v.clone()));
            continue;
        }
        match spec.kind() {
            ParamKind::RealInterval { lo, hi, scale } => {
                let mut strata: Vec<usize> = (0..budget).collect();
                strata.shuffle(rng);
                for (row, stratum) in rows.iter_mut().zip(strata) {
                    let u: f64 = rng.random();
                    let frac = ((stratum as f64 + u) / budget as f64).min(1.0);
                    row.set(spec.name(), real_at(*lo, *hi, *scale, frac));
                }
            }
            ParamKind::Nominal { .. } => {
                rows.iter_mut()
                    .for_each(|r| r.set(spec.name(), uniform_value(spec, rng)));
            }
        }
    }
    rows
}

struct Tracker {
    incumbent: Option<(Assignment, f64)>,
    last_best: usize,
    trace: Vec<IterationRecord>,
    start: u64,
}

impl Tracker {
    fn new(ledger: &EvaluationLedger) -> Self {
        Self {
            incumbent: None,
            last_best: 0,
            trace: Vec::new(),
            start: ledger.count(),
        }
    }

    /// Evaluates `a` if unseen. Returns false on a cache hit.
    fn offer(
        &mut self,
        objective: &dyn Objective,
        ledger: &EvaluationLedger,
        a: Assignment,
    ) -> Result<bool> {
        let before = ledger.count();
        let value = ledger.evaluate(objective, &a)?;
        if ledger.count() == before {
            return Ok(false);
        }
        let iteration = self.trace.len() + 1;
        let improved = self
            .incumbent
            .as_ref()
            .is_none_or(|(_, best)| value < *best);
        if improved {
            self.incumbent = Some((a, value));
            self.last_best = iteration;
        }
        let incumbent = self.incumbent.as_ref().map_or(value, |(_, v)| *v);
        self.trace.push(IterationRecord {
            iteration,
            incumbent,
            fresh_evaluations: 1,
            improved,
        });
        Ok(true)
    }

    fn finish(self, ledger: &EvaluationLedger) -> TuningReport {
        let (incumbent, incumbent_response) = self.incumbent.expect("budget >= 1");
        TuningReport {
            incumbent,
            incumbent_response,
            iterations_run: self.trace.len(),
            last_best_iteration: self.last_best,
            evaluations: ledger.count() - self.start,
            per_iteration_trace: self.trace,
        }
    }
}

fn check_budget(budget: u64) -> Result<usize> {
    if budget == 0 {
        return Err(Error::Config("baseline budget must be at least 1".into()));
    }
    Ok(budget as usize)
}

/// Evaluates `budget` fresh uniform draws; cache collisions are redrawn.
pub fn random_search<R: Rng + ?Sized>(
    space: &SearchSpace,
    objective: &dyn Objective,
    ledger: &EvaluationLedger,
    budget: u64,
    rng: &mut R,
) -> Result<TuningReport> {
    let budget = check_budget(budget)?;
    let mut tracker = Tracker::new(ledger);
    let mut attempts = 0;
    while tracker.trace.len() < budget {
        attempts += 1;
        if attempts > budget * MAX_REDRAWS {
            return Err(Error::SpaceExhausted { attempts });
        }
        tracker.offer(objective, ledger, sample_uniform(space, rng))?;
    }
    Ok(tracker.finish(ledger))
}

/// Evaluates a `budget`-row Latin hypercube design. Rows that collide with
/// cached points are replaced by uniform draws.
pub fn latin_hypercube<R: Rng + ?Sized>(
    space: &SearchSpace,
    objective: &dyn Objective,
    ledger: &EvaluationLedger,
    budget: u64,
    rng: &mut R,
) -> Result<TuningReport> {
    let budget = check_budget(budget)?;
    let mut tracker = Tracker::new(ledger);
    for row in latin_design(space, budget, rng) {
        let mut fresh = tracker.offer(objective, ledger, row)?;
        let mut attempts = 0;
        while !fresh {
            attempts += 1;
            if attempts > MAX_REDRAWS {
                return Err(Error::SpaceExhausted { attempts });
            }
            fresh = tracker.offer(objective, ledger, sample_uniform(space, rng))?;
        }
    }
    Ok(tracker.finish(ledger))
}
