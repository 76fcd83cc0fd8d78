//! Drives the iterated tuning phase over a built agent tree.
//!
//! Agents are in-process tasks exchanging typed messages. An internal agent
//! forwards each request to its children (concurrently under
//! [`Execution::Parallel`]), merges their replies and informs its parent. The
//! root owns all cross-iteration state: incumbent, trace, `ω` and the stop
//! decision. Terminal agents own a private RNG seeded from the master seed and
//! their node id, so results do not depend on scheduling.

use std::fmt;
use std::sync::{Mutex, PoisonError};

use serde::{Deserialize, Serialize};

use crate::domain::Assignment;
use crate::error::{Error, Result};
use crate::grat::{adapt_omega, aggregate_results, prepare_feedback, run_tuning_algorithm};
use crate::grat::{Feedback, SubResult};
use crate::hierarchy::{Hierarchy, HierarchyNode, NodeId, TuningQuery};
use crate::objectives::{EvaluationLedger, Objective};
use crate::par::{self, Execution};
use crate::rng::{self, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_iterations: usize,
    /// Stop after this many consecutive iterations without improvement.
    pub patience: Option<usize>,
    /// Stop once the incumbent response is at or below this value.
    pub target: Option<f64>,
}

impl StopCriteria {
    pub fn iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            patience: None,
            target: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidQuery(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidQuery("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Root-side record of one iteration. Iteration 0 is the bootstrap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub incumbent: f64,
    pub fresh_evaluations: u64,
    /// Whether the incumbent strictly improved during this iteration.
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub incumbent: Assignment,
    pub incumbent_response: f64,
    pub iterations_run: usize,
    pub last_best_iteration: usize,
    pub evaluations: u64,
    pub per_iteration_trace: Vec<IterationRecord>,
}

impl TuningReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report is always serializable")
    }
}

pub fn should_stop(criteria: &StopCriteria, trace: &[IterationRecord]) -> bool {
    let Some(last) = trace.last() else {
        return false;
    };
    if last.iteration >= criteria.max_iterations {
        return true;
    }
    if let Some(p) = criteria.patience {
        if trace.iter().rev().take_while(|r| !r.improved).count() >= p {
            return true;
        }
    }
    criteria.target.is_some_and(|t| last.incumbent <= t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    /// Parent asks a child to bootstrap.
    Start,
    /// Parent asks a child to run one tuning iteration.
    Tune,
    /// Child reports its results to the parent.
    Inform,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::Start => "start",
            MessageKind::Tune => "tune",
            MessageKind::Inform => "inform",
        })
    }
}

/// One message crossing a tree edge. `node` is the receiver for asks and the
/// sender for informs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageEvent {
    pub iteration: usize,
    pub node: NodeId,
    pub kind: MessageKind,
}

/// Renders events as `iter,node,kind` lines in canonical order.
pub fn format_trace(events: &[MessageEvent]) -> String {
    let mut sorted = events.to_vec();
    sorted.sort();
    sorted
        .iter()
        .map(|e| format!("{},{},{}\n", e.iteration, e.node, e.kind))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TuneOptions {
    pub execution: Execution,
    pub record_messages: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            execution: Execution::Parallel,
            record_messages: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub report: TuningReport,
    /// Canonically ordered; empty unless recording was requested.
    pub messages: Vec<MessageEvent>,
}

enum Request<'a> {
    Start(&'a Assignment),
    Tune { feedback: &'a Feedback, omega: u32 },
}

impl Request<'_> {
    fn kind(&self) -> MessageKind {
        match self {
            Request::Start(_) => MessageKind::Start,
            Request::Tune { .. } => MessageKind::Tune,
        }
    }
}

struct Context<'a> {
    query: &'a TuningQuery,
    objective: &'a dyn Objective,
    ledger: &'a EvaluationLedger,
    execution: Execution,
    log: Option<&'a Mutex<Vec<MessageEvent>>>,
    iteration: usize,
}

impl Context<'_> {
    fn record(&self, node: NodeId, kind: MessageKind) {
        if let Some(log) = self.log {
            log.lock()
                .unwrap_or_else(PoisonError::into_inner)
                .push(MessageEvent {
                    iteration: self.iteration,
                    node,
                    kind,
                });
        }
    }
}

enum Agent<'t> {
    Terminal {
        node: &'t HierarchyNode,
        rng: Box<StreamRng>,
    },
    Internal {
        node: &'t HierarchyNode,
        children: Vec<Agent<'t>>,
    },
}

impl<'t> Agent<'t> {
    fn spawn(tree: &'t Hierarchy, id: NodeId, master_seed: u64) -> Self {
        let node = tree.node(id);
        if node.is_terminal() {
            Agent::Terminal {
                node,
                rng: Box::new(rng::stream(master_seed, id as u64)),
            }
        } else {
            let children = node
                .children
                .iter()
                .map(|&c| Agent::spawn(tree, c, master_seed))
                .collect();
            Agent::Internal { node, children }
        }
    }

    fn node(&self) -> &'t HierarchyNode {
        match self {
            Agent::Terminal { node, .. } | Agent::Internal { node, .. } => node,
        }
    }

    fn handle(&mut self, request: &Request<'_>, ctx: &Context<'_>) -> Result<Vec<SubResult>> {
        match self {
            Agent::Terminal { node, rng } => {
                let wrap = |e: Error| Error::Agent {
                    agent: node.id,
                    source: Box::new(e),
                };
                let param = &node.primary[0];
                let result = match request {
                    Request::Start(initial) => {
                        let response = ctx.ledger.evaluate(ctx.objective, initial).map_err(wrap)?;
                        SubResult {
                            param: param.clone(),
                            best_assignment: (*initial).clone(),
                            best_response: response,
                        }
                    }
                    Request::Tune { feedback, omega } => {
                        let start = feedback
                            .per_param
                            .get(param)
                            .ok_or_else(|| wrap(Error::IncompleteResults(param.clone())))?;
                        run_tuning_algorithm(
                            node,
                            &ctx.query.space,
                            start,
                            ctx.query.eta,
                            *omega,
                            ctx.objective,
                            ctx.ledger,
                            rng,
                        )
                        .map_err(wrap)?
                    }
                };
                Ok(vec![result])
            }
            Agent::Internal { node, children } => {
                let parts = par::map_mut(children, ctx.execution, |child| {
                    let child_id = child.node().id;
                    ctx.record(child_id, request.kind());
                    let reply = match request {
                        Request::Start(initial) => child.handle(&Request::Start(initial), ctx),
                        Request::Tune { feedback, omega } => {
                            let slice = feedback.restrict(&child.node().primary);
                            child.handle(
                                &Request::Tune {
                                    feedback: &slice,
                                    omega: *omega,
                                },
                                ctx,
                            )
                        }
                    };
                    if reply.is_ok() {
                        ctx.record(child_id, MessageKind::Inform);
                    }
                    reply
                });
                let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
                aggregate_results(parts).map_err(|e| Error::Agent {
                    agent: node.id,
                    source: Box::new(e),
                })
            }
        }
    }
}

/// Runs the tuning iterations of `query` over `tree` with a fresh ledger.
pub fn tune(
    tree: &Hierarchy,
    query: &TuningQuery,
    objective: &dyn Objective,
    master_seed: u64,
) -> Result<TuningReport> {
    let ledger = EvaluationLedger::new();
    tune_with(
        tree,
        query,
        objective,
        &ledger,
        master_seed,
        &TuneOptions::default(),
    )
    .map(|o| o.report)
}

pub fn tune_with(
    tree: &Hierarchy,
    query: &TuningQuery,
    objective: &dyn Objective,
    ledger: &EvaluationLedger,
    master_seed: u64,
    options: &TuneOptions,
) -> Result<TuneOutcome> {
    query.validate()?;
    let order = query.space.objective_names();
    if tree.root().primary != order {
        return Err(Error::InvalidQuery(
            "tree was not built from this query".into(),
        ));
    }
    let log = options.record_messages.then(|| Mutex::new(Vec::new()));
    let mut root = Agent::spawn(tree, 0, master_seed);
    let start_count = ledger.count();
    let mut ctx = Context {
        query,
        objective,
        ledger,
        execution: options.execution,
        log: log.as_ref(),
        iteration: 0,
    };

    let mut results = root.handle(&Request::Start(&query.initial_values), &ctx)?;
    let mut incumbent = best_of(&mut results, &order);
    let mut last_best_iteration = 0;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        incumbent: incumbent.best_response,
        fresh_evaluations: ledger.count() - start_count,
        improved: true,
    }];
    let mut feedback = prepare_feedback(&results, &order)?;
    let mut omega = query.omega;

    loop {
        ctx.iteration += 1;
        let before = ledger.count();
        let mut results = root.handle(
            &Request::Tune {
                feedback: &feedback,
                omega,
            },
            &ctx,
        )?;
        let best = best_of(&mut results, &order);
        let improved = best.best_response < incumbent.best_response;
        if improved {
            incumbent = best;
            last_best_iteration = ctx.iteration;
        }
        trace.push(IterationRecord {
            iteration: ctx.iteration,
            incumbent: incumbent.best_response,
            fresh_evaluations: ledger.count() - before,
            improved,
        });
        if should_stop(&query.stop, &trace) {
            break;
        }
        feedback = prepare_feedback(&results, &order)?;
        let history: Vec<f64> = trace.iter().map(|r| r.incumbent).collect();
        omega = adapt_omega(&history, omega, query.omega_policy);
    }

    let iterations_run = ctx.iteration;
    let mut messages = log
        .map(|l| l.into_inner().unwrap_or_else(PoisonError::into_inner))
        .unwrap_or_default();
    messages.sort();
    Ok(TuneOutcome {
        report: TuningReport {
            incumbent: incumbent.best_assignment,
            incumbent_response: incumbent.best_response,
            iterations_run,
            last_best_iteration,
            evaluations: ledger.count() - start_count,
            per_iteration_trace: trace,
        },
        messages,
    })
}

/// Sorts `results` into declaration order and returns the first minimum.
fn best_of(results: &mut [SubResult], order: &[String]) -> SubResult {
    results.sort_by_key(|r| order.iter().position(|n| *n == r.param));
    results
        .iter()
        .fold(None, |best: Option<&SubResult>, r| match best {
            Some(b) if b.best_response <= r.best_response => best,
            _ => Some(r),
        })
        .cloned()
        .expect("every tree has at least one terminal")
}
