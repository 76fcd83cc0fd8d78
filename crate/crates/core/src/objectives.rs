//! Response functions, the evaluation ledger, and built-in benchmarks.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};

use crate::domain::{
    canonical_key, check_assignment, Assignment, CanonicalKey, HyperParameterSpec, SearchSpace,
};
use crate::error::{Error, Result};

/// A response function over a search space. Lower is better.
///
/// Implementations must be deterministic for a fixed assignment.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn space(&self) -> &SearchSpace;
    fn evaluate(&self, a: &Assignment) -> Result<f64>;
}

pub type ObjectiveHandle = Arc<dyn Objective>;

impl fmt::Debug for dyn Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name())
            .finish()
    }
}

type Slot = Arc<Mutex<Option<f64>>>;

/// Counter plus memoization cache through which every objective call flows.
///
/// Concurrent callers asking for the same key block on that key's slot, so
/// each key is computed at most once.
#[derive(Debug)]
pub struct EvaluationLedger {
    cache: Mutex<HashMap<CanonicalKey, Slot>>,
    count: AtomicU64,
    cap: Option<u64>,
    caching: bool,
}

impl Default for EvaluationLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl EvaluationLedger {
    pub fn new() -> Self {
        Self {
            cache: Mutex::new(HashMap::new()),
            count: AtomicU64::new(0),
            cap: None,
            caching: true,
        }
    }

    pub fn with_cap(cap: u64) -> Self {
        Self {
            cap: Some(cap),
            ..Self::new()
        }
    }

    /// A ledger that counts every call and never serves from cache.
    pub fn uncached() -> Self {
        Self {
            caching: false,
            ..Self::new()
        }
    }

    /// Fresh evaluations so far.
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn cap(&self) -> Option<u64> {
        self.cap
    }

    /// Cached response for `a`, if any.
    pub fn lookup(&self, a: &Assignment) -> Option<f64> {
        let slot = self.lock_cache().get(&canonical_key(a)).cloned()?;
        let value = *slot.lock().unwrap_or_else(PoisonError::into_inner);
        value
    }

    pub fn evaluate(&self, objective: &dyn Objective, a: &Assignment) -> Result<f64> {
        check_assignment(objective.space(), a)?;
        if !self.caching {
            self.reserve()?;
            return Self::call(objective, a).inspect_err(|_| self.release());
        }
        let slot = {
            let mut cache = self.lock_cache();
            Arc::clone(cache.entry(canonical_key(a)).or_default())
        };
        let mut value = slot.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(v) = *value {
            return Ok(v);
        }
        self.reserve()?;
        match Self::call(objective, a) {
            Ok(v) => {
                *value = Some(v);
                Ok(v)
            }
            Err(e) => {
                self.release();
                Err(e)
            }
        }
    }

    fn call(objective: &dyn Objective, a: &Assignment) -> Result<f64> {
        let v = objective.evaluate(a)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                candidate: Box::new(a.clone()),
                reason: format!("non-finite response {v}"),
            })
        }
    }

    fn reserve(&self) -> Result<()> {
        let cap = self.cap.unwrap_or(u64::MAX);
        self.count
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
                (n < cap).then_some(n + 1)
            })
            .map(|_| ())
            .map_err(|_| Error::BudgetExhausted { cap })
    }

    fn release(&self) {
        self.count.fetch_sub(1, Ordering::SeqCst);
    }

    fn lock_cache(&self) -> std::sync::MutexGuard<'_, HashMap<CanonicalKey, Slot>> {
        self.cache.lock().unwrap_or_else(PoisonError::into_inner)
    }
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];

const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann_sum(x: &[f64], a: &[&[f64]; 4], p: &[&[f64]; 4]) -> f64 {
    (0..4)
        .map(|i| {
            let inner: f64 = x
                .iter()
                .enumerate()
                .map(|(j, &xj)| a[i][j] * (xj - p[i][j]).powi(2))
                .sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum()
}

/// Hartmann function of dimension 3, 4 or 6 on the unit box.
///
/// Dimensions 3 and 6 return `-Σ α_i exp(-Σ_j A_ij (x_j - P_ij)²)`. Dimension
/// 4 truncates the 6-d matrices to their first four columns and rescales as
/// `(1.1 - Σ ...) / 0.839`.
pub fn hartmann(d: usize, x: &[f64]) -> Result<f64> {
    if x.len() != d {
        return Err(Error::Domain(format!(
            "hartmann{d} takes {d} coordinates, got {}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("coordinate {v} outside [0, 1]")));
    }
    let rows3 = HARTMANN3_A.each_ref().map(|r| r.as_slice());
    let prow3 = HARTMANN3_P.each_ref().map(|r| r.as_slice());
    let rows6 = HARTMANN6_A.each_ref().map(|r| r.as_slice());
    let prow6 = HARTMANN6_P.each_ref().map(|r| r.as_slice());
    match d {
        3 => Ok(-hartmann_sum(x, &rows3, &prow3)),
        4 => Ok((1.1 - hartmann_sum(x, &rows6, &prow6)) / 0.839),
        6 => Ok(-hartmann_sum(x, &rows6, &prow6)),
        _ => Err(Error::Domain(format!(
            "no Hartmann function of dimension {d}"
        ))),
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `d` linear unit-interval parameters `x1..xd`, all tuned.
pub fn make_box_space(d: usize) -> Result<SearchSpace> {
    if d == 0 {
        return Err(Error::InvalidSpace(
            "box dimension must be at least 1".into(),
        ));
    }
    let params = (1..=d)
        .map(|i| HyperParameterSpec::real(format!("x{i}"), 0.0, 1.0))
        .collect::<Result<_>>()?;
    SearchSpace::all_objective(params)
}

type BoxFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;

/// A function of a real vector, exposed over a box space.
pub struct BoxObjective {
    name: String,
    space: SearchSpace,
    coords: Vec<String>,
    f: Box<BoxFn>,
}

impl BoxObjective {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        f: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let space = make_box_space(d)?;
        let coords = space.objective_names();
        Ok(Self {
            name: name.into(),
            space,
            coords,
            f: Box::new(f),
        })
    }

    pub fn coordinates(&self, a: &Assignment) -> Result<Vec<f64>> {
        self.coords
            .iter()
            .map(|c| {
                a.real(c)
                    .ok_or_else(|| Error::InvalidAssignment(format!("{c}: missing real value")))
            })
            .collect()
    }
}

impl Objective for BoxObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, a: &Assignment) -> Result<f64> {
        (self.f)(&self.coordinates(a)?)
    }
}

/// Built-in objective by CLI name: `hartmann3`, `hartmann4`, `hartmann6`,
/// `sphere` (3-d) or `sphere<d>`.
pub fn builtin(name: &str) -> Result<ObjectiveHandle> {
    let objective = match name {
        "hartmann3" => BoxObjective::new(name, 3, |x| hartmann(3, x))?,
        "hartmann4" => BoxObjective::new(name, 4, |x| hartmann(4, x))?,
        "hartmann6" => BoxObjective::new(name, 6, |x| hartmann(6, x))?,
        "sphere" => BoxObjective::new(name, 3, |x| Ok(sphere(x)))?,
        _ => match name.strip_prefix("sphere").map(str::parse::<usize>) {
            Some(Ok(d)) => BoxObjective::new(name, d, |x| Ok(sphere(x)))?,
            _ => return Err(Error::Config(format!("unknown objective `{name}`"))),
        },
    };
    Ok(Arc::new(objective))
}
