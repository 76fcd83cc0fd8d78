//! Guided randomized agent-based tuning: the terminal search strategy, result
//! aggregation at internal agents and feedback preparation at the root.
//!
//! A terminal agent owning parameter `λ_i` splits its domain into `η` slots
//! and draws one candidate per slot. Every other tuned parameter either keeps
//! the value of the feedback point (weight `ω`) or moves to a random point of
//! one of the other `η - 1` slots (weight 1 each). Fixed parameters are
//! copied. The best of the feedback point and the `η` candidates is reported.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Assignment, HyperParameterSpec, ParamKind, Scale, SearchSpace, Value};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyNode;
use crate::objectives::{EvaluationLedger, Objective};

/// A terminal's report: its parameter, best point found and its response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubResult {
    pub param: String,
    pub best_assignment: Assignment,
    pub best_response: f64,
}

/// Start points for the next iteration, one per tuned parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub per_param: BTreeMap<String, Assignment>,
}

impl Feedback {
    /// The slice of this feedback that concerns `names`.
    pub fn restrict(&self, names: &[String]) -> Feedback {
        let per_param = names
            .iter()
            .filter_map(|n| self.per_param.get(n).map(|a| (n.clone(), a.clone())))
            .collect();
        Feedback { per_param }
    }
}

/// Number of slots a parameter is split into. Nominal domains cap it at the
/// label count.
pub fn slot_count(spec: &HyperParameterSpec, eta: usize) -> usize {
    match spec.kind() {
        ParamKind::RealInterval { .. } => eta,
        ParamKind::Nominal { values } => eta.min(values.len()),
    }
}

fn to_search(scale: Scale, v: f64) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log10 => v.log10(),
    }
}

fn from_search(scale: Scale, t: f64) -> f64 {
    match scale {
        Scale::Linear => t,
        Scale::Log10 => 10f64.powf(t),
    }
}

fn check_slot(s: usize, eta: usize) -> Result<()> {
    if s == 0 || s > eta {
        Err(Error::InvalidSlot { slot: s, eta })
    } else {
        Ok(())
    }
}

/// Value-space bounds `[a, b)` of slot `s` (1-based) of a real interval split
/// into `eta` equal parts, in log space for log10 parameters. The last slot
/// also admits `hi`.
pub fn slot_bounds(lo: f64, hi: f64, scale: Scale, eta: usize, s: usize) -> Result<(f64, f64)> {
    check_slot(s, eta)?;
    let (tlo, thi) = (to_search(scale, lo), to_search(scale, hi));
    let width = (thi - tlo) / eta as f64;
    let a = if s == 1 {
        lo
    } else {
        from_search(scale, tlo + (s - 1) as f64 * width)
    };
    let b = if s == eta {
        hi
    } else {
        from_search(scale, tlo + s as f64 * width)
    };
    Ok((a, b))
}

fn draw_in_slot<R: Rng + ?Sized>(
    lo: f64,
    hi: f64,
    scale: Scale,
    eta: usize,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    let (a, b) = slot_bounds(lo, hi, scale, eta, s)?;
    let (tlo, thi) = (to_search(scale, lo), to_search(scale, hi));
    let width = (thi - tlo) / eta as f64;
    let u: f64 = rng.random();
    let v = from_search(scale, tlo + ((s - 1) as f64 + u) * width);
    Ok(v.clamp(a, b.next_down().max(a)))
}

/// The slot (1-based) holding real value `v`.
pub fn real_slot_of(lo: f64, hi: f64, scale: Scale, eta: usize, v: f64) -> usize {
    let (tlo, thi) = (to_search(scale, lo), to_search(scale, hi));
    let guess = ((to_search(scale, v) - tlo) / (thi - tlo) * eta as f64).floor();
    let mut s = (guess.max(0.0) as usize + 1).min(eta);
    // Rounding in the guess can be off by one at slot edges.
    while s > 1 && v < slot_bounds(lo, hi, scale, eta, s).map_or(lo, |(a, _)| a) {
        s -= 1;
    }
    while s < eta && v >= slot_bounds(lo, hi, scale, eta, s).map_or(hi, |(_, b)| b) {
        s += 1;
    }
    s
}

/// Tracks labels already drawn for one parameter within one strategy call,
/// so nominal slot draws are made without replacement.
#[derive(Clone, Debug, Default)]
pub struct DrawSession {
    drawn: Vec<usize>,
}

/// A uniform draw from slot `s` of `spec`'s domain.
///
/// Nominal parameters ignore the slot geometry and draw a label not yet drawn
/// in `session`; once every label has been drawn, draws repeat uniformly over
/// the whole set.
pub fn uniform_rand_slot<R: Rng + ?Sized>(
    spec: &HyperParameterSpec,
    eta: usize,
    s: usize,
    session: &mut DrawSession,
    rng: &mut R,
) -> Result<Value> {
    check_slot(s, eta)?;
    match spec.kind() {
        ParamKind::RealInterval { lo, hi, scale } => {
            draw_in_slot(*lo, *hi, *scale, eta, s, rng).map(Value::Real)
        }
        ParamKind::Nominal { values } => {
            let remaining: Vec<usize> = (0..values.len())
                .filter(|i| !session.drawn.contains(i))
                .collect();
            let idx = if remaining.is_empty() {
                rng.random_range(0..values.len())
            } else {
                remaining[rng.random_range(0..remaining.len())]
            };
            session.drawn.push(idx);
            Ok(Value::Label(values[idx].clone()))
        }
    }
}

/// Keeps `current` with probability `ω / (ω + η - 1)`; otherwise moves to a
/// uniform point of one of the other `η - 1` slots.
///
/// For nominal parameters `η` is clamped to the label count and a move picks
/// one of the other labels uniformly.
pub fn weighted_rand<R: Rng + ?Sized>(
    spec: &HyperParameterSpec,
    current: &Value,
    omega: u32,
    eta: usize,
    rng: &mut R,
) -> Result<Value> {
    if !spec.contains(current) {
        return Err(Error::InvalidAssignment(format!(
            "{}: {current} not in domain",
            spec.name()
        )));
    }
    let slots = slot_count(spec, eta);
    if slots <= 1 {
        return Ok(current.clone());
    }
    let omega = omega.max(1) as usize;
    let pick = rng.random_range(0..omega + slots - 1);
    if pick < omega {
        return Ok(current.clone());
    }
    let other = pick - omega;
    match spec.kind() {
        ParamKind::RealInterval { lo, hi, scale } => {
            let v = current.as_real().expect("checked by contains");
            let own = real_slot_of(*lo, *hi, *scale, eta, v);
            // `other` indexes the slots with `own` skipped.
            let target = if other + 1 >= own {
                other + 2
            } else {
                other + 1
            };
            draw_in_slot(*lo, *hi, *scale, eta, target, rng).map(Value::Real)
        }
        ParamKind::Nominal { values } => {
            let label = current.as_label().expect("checked by contains");
            let own = values
                .iter()
                .position(|v| v == label)
                .expect("checked by contains");
            let mut idx = rng.random_range(0..values.len() - 1);
            if idx >= own {
                idx += 1;
            }
            Ok(Value::Label(values[idx].clone()))
        }
    }
}

/// The `η + 1` candidate points of one strategy call: the feedback point
/// followed by one candidate per slot of the agent's parameter.
pub fn generate_candidates<R: Rng + ?Sized>(
    agent: &HierarchyNode,
    space: &SearchSpace,
    feedback_point: &Assignment,
    eta: usize,
    omega: u32,
    rng: &mut R,
) -> Result<Vec<Assignment>> {
    let [param] = agent.primary.as_slice() else {
        return Err(Error::InvalidQuery(format!(
            "agent {} is not a terminal",
            agent.id
        )));
    };
    let spec = space
        .param(param)
        .ok_or_else(|| Error::InvalidQuery(format!("unknown parameter `{param}`")))?;
    let complement: Vec<&HyperParameterSpec> = agent
        .complement
        .iter()
        .map(|n| {
            space
                .param(n)
                .ok_or_else(|| Error::InvalidQuery(format!("unknown `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut session = DrawSession::default();
    let mut candidates = Vec::with_capacity(eta + 1);
    candidates.push(feedback_point.clone());
    for s in 1..=eta {
        let mut cand = Assignment::new();
        cand.set(
            param.clone(),
            uniform_rand_slot(spec, eta, s, &mut session, rng)?,
        );
        for other in &complement {
            let current = feedback_point.get(other.name()).ok_or_else(|| {
                Error::InvalidAssignment(format!("{}: missing from feedback", other.name()))
            })?;
            cand.set(
                other.name(),
                weighted_rand(other, current, omega, eta, rng)?,
            );
        }
        for (name, value) in space.fixed() {
            cand.set(name.clone(), value.clone());
        }
        candidates.push(cand);
    }
    Ok(candidates)
}

/// Index of the minimum; the lowest index wins ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// One terminal strategy call: generate candidates, evaluate them through the
/// ledger and report the best.
#[allow(clippy::too_many_arguments)]
pub fn run_tuning_algorithm<R: Rng + ?Sized>(
    agent: &HierarchyNode,
    space: &SearchSpace,
    feedback_point: &Assignment,
    eta: usize,
    omega: u32,
    objective: &dyn Objective,
    ledger: &EvaluationLedger,
    rng: &mut R,
) -> Result<SubResult> {
    let mut candidates = generate_candidates(agent, space, feedback_point, eta, omega, rng)?;
    let responses = candidates
        .iter()
        .map(|c| ledger.evaluate(objective, c))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin(&responses).expect("at least the feedback point");
    Ok(SubResult {
        param: agent.primary[0].clone(),
        best_assignment: candidates.swap_remove(best),
        best_response: responses[best],
    })
}

/// Set union of the children's reports.
pub fn aggregate_results(parts: Vec<Vec<SubResult>>) -> Result<Vec<SubResult>> {
    let mut merged: Vec<SubResult> = Vec::new();
    for r in parts.into_iter().flatten() {
        match merged.iter().find(|m| m.param == r.param) {
            Some(m) if *m == r => {}
            Some(_) => return Err(Error::DuplicateParam(r.param)),
            None => merged.push(r),
        }
    }
    Ok(merged)
}

/// Sends each parameter's agent the best point found by any *other* agent.
///
/// `order` lists the tuned parameters in declaration order; it drives the
/// lowest-index tie-break. With a single parameter the agent gets its own
/// point back.
pub fn prepare_feedback(results: &[SubResult], order: &[String]) -> Result<Feedback> {
    let mut indexed = Vec::with_capacity(order.len());
    for name in order {
        let mut matching = results.iter().filter(|r| &r.param == name);
        let r = matching
            .next()
            .ok_or_else(|| Error::IncompleteResults(name.clone()))?;
        if matching.next().is_some() {
            return Err(Error::DuplicateParam(name.clone()));
        }
        indexed.push(r);
    }
    if let Some(stray) = results.iter().find(|r| !order.contains(&r.param)) {
        return Err(Error::DuplicateParam(stray.param.clone()));
    }
    let mut per_param = BTreeMap::new();
    for (i, name) in order.iter().enumerate() {
        let partner = indexed
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i || order.len() == 1)
            .fold(None, |best: Option<&SubResult>, (_, r)| match best {
                Some(b) if b.best_response <= r.best_response => best,
                _ => Some(r),
            })
            .expect("at least one partner");
        per_param.insert(name.clone(), partner.best_assignment.clone());
    }
    Ok(Feedback { per_param })
}

/// How the root adjusts `ω` between iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaPolicy {
    #[default]
    Fixed,
    /// Lower `ω` by one (floor 1) once the incumbent has stalled for this
    /// many consecutive iterations.
    DecayOnStall(usize),
}

impl FromStr for OmegaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fixed" {
            return Ok(OmegaPolicy::Fixed);
        }
        match s.strip_prefix("decay:").map(str::parse::<usize>) {
            Some(Ok(p)) if p >= 1 => Ok(OmegaPolicy::DecayOnStall(p)),
            _ => Err(Error::Config(format!(
                "omega policy must be `fixed` or `decay:<p>` with p >= 1, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for OmegaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaPolicy::Fixed => f.write_str("fixed"),
            OmegaPolicy::DecayOnStall(p) => write!(f, "decay:{p}"),
        }
    }
}

/// Next `ω` given the per-iteration incumbent history.
pub fn adapt_omega(history: &[f64], omega: u32, policy: OmegaPolicy) -> u32 {
    match policy {
        OmegaPolicy::Fixed => omega,
        OmegaPolicy::DecayOnStall(p) => {
            let stalled = history
                .windows(2)
                .rev()
                .take_while(|w| w[1] >= w[0])
                .count();
            if stalled >= p {
                omega.saturating_sub(1).max(1)
            } else {
                omega
            }
        }
    }
}
