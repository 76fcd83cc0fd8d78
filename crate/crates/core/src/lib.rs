//! Hierarchical, agent-based hyper-parameter tuning.
//!
//! The tuned parameters are split recursively into a tree of agents
//! ([`hierarchy`]). Terminal agents each own one parameter and run a guided
//! randomized search around the start point they are given ([`grat`]);
//! internal agents merge their children's reports; the root turns the merged
//! reports into the next iteration's start points ([`runtime`]). Every
//! objective call flows through an [`objectives::EvaluationLedger`] that
//! counts and memoizes, so the comparison baselines ([`baselines`]) can be run
//! at exactly matched budgets ([`experiment`]).

pub mod baselines;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod extproc;
pub mod grat;
pub mod hierarchy;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod runtime;

pub use domain::{Assignment, HyperParameterSpec, SearchSpace, Value};
pub use error::{Error, Result};
pub use hierarchy::{build_hierarchy, Hierarchy, TuningQuery};
pub use objectives::{EvaluationLedger, Objective, ObjectiveHandle};
pub use runtime::{tune, StopCriteria, TuningReport};
