//! `hier-tune`: multi-trial experiments comparing hierarchical GRAT tuning with
//! random and Latin hypercube search.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde_json::Value as Json;

use hiertune::baselines::{sample_uniform, BudgetMode};
use hiertune::experiment::{
    resolve_objective, run_experiment, sweep, ExperimentConfig, Method, SweepAxis,
};
use hiertune::extproc::check_conformance;
use hiertune::grat::OmegaPolicy;
use hiertune::runtime::format_trace;
use hiertune::{build_hierarchy, Assignment, SearchSpace, TuningQuery};

#[derive(Parser, Debug)]
#[command(name = "hier-tune", version, about)]
struct Cli {
    /// hartmann3|hartmann4|hartmann6|sphere|sphere<d>|extproc:<command>
    #[arg(long)]
    objective: Option<String>,
    /// Slots per terminal agent.
    #[arg(long)]
    eta: Option<usize>,
    /// Keep weight for complement parameters.
    #[arg(long)]
    omega: Option<u32>,
    /// Maximum children per internal agent.
    #[arg(long)]
    c: Option<usize>,
    /// Iterations per hierarchical run.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of grat,random,lhs.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Shorthand for `--method grat,<baseline>`; `none` runs grat alone.
    #[arg(long, conflicts_with = "method")]
    baseline: Option<String>,
    /// formula (c·η·I samples) or measured (what GRAT actually spent).
    #[arg(long)]
    budget_mode: Option<String>,
    /// fixed or decay:<p>
    #[arg(long)]
    omega_policy: Option<String>,
    /// Stop after this many iterations without improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Stop once the incumbent reaches this value.
    #[arg(long, allow_hyphen_values = true)]
    target: Option<f64>,
    /// Concurrent trials; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Write per-trial rows to a .csv or .json file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the agent hierarchy as JSON and exit.
    #[arg(long)]
    dump_tree: bool,
    /// Write the first trial's message trace (iter,node,kind) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Search-space document with an optional `run` section of defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat the experiment along eta or iterations.
    #[arg(long, requires = "sweep_values")]
    sweep_axis: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "sweep_axis")]
    sweep_values: Option<Vec<usize>>,
    /// Run the protocol conformance check against an extproc objective and exit.
    #[arg(long)]
    check_evaluator: bool,
}

/// Defaults read from the config file's `run` section. Flags take precedence.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    objective: Option<String>,
    eta: Option<usize>,
    omega: Option<u32>,
    c: Option<usize>,
    iters: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    methods: Option<Vec<String>>,
    baseline: Option<String>,
    budget_mode: Option<String>,
    omega_policy: Option<String>,
    patience: Option<usize>,
    target: Option<f64>,
    workers: Option<usize>,
    initial: Option<Assignment>,
    sweep_axis: Option<String>,
    sweep_values: Option<Vec<usize>>,
}

fn read_config(path: &Path) -> Result<(Option<SearchSpace>, RunSection)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut doc: Json =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let run = match doc.as_object_mut().and_then(|o| o.remove("run")) {
        Some(run) => serde_json::from_value(run).context("config `run` section")?,
        None => RunSection::default(),
    };
    let has_space = doc.as_object().is_some_and(|o| !o.is_empty());
    let space = if has_space {
        Some(SearchSpace::from_value(doc).context("config search space")?)
    } else {
        None
    };
    Ok((space, run))
}

fn parse<T: FromStr<Err = hiertune::Error>>(flag: &str, raw: &str) -> Result<T> {
    raw.parse().with_context(|| format!("--{flag}"))
}

fn methods(list: Option<Vec<String>>, baseline: Option<String>) -> Result<Option<Vec<Method>>> {
    if let Some(b) = baseline {
        let mut m = vec![Method::Grat];
        match b.as_str() {
            "none" => {}
            "random" | "lhs" => m.push(parse("baseline", &b)?),
            _ => bail!("--baseline must be random|lhs|none, got `{b}`"),
        }
        return Ok(Some(m));
    }
    let Some(list) = list else { return Ok(None) };
    let mut parsed = Vec::new();
    for name in list {
        let m: Method = parse("method", name.trim())?;
        if !parsed.contains(&m) {
            parsed.push(m);
        }
    }
    Ok(Some(parsed))
}

struct Plan {
    cfg: ExperimentConfig,
    space: Option<SearchSpace>,
    sweep: Option<(SweepAxis, Vec<usize>)>,
}

fn plan(cli: &Cli) -> Result<Plan> {
    let (space, run) = match &cli.config {
        Some(path) => read_config(path)?,
        None => (None, RunSection::default()),
    };
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = cli.objective.clone().or(run.objective) {
        cfg.objective = v;
    }
    macro_rules! pick {
        ($($field:ident),*) => {$(
            if let Some(v) = cli.$field.or(run.$field) {
                cfg.$field = v;
            }
        )*};
    }
    pick!(eta, omega, c, iters, trials, seed, workers);
    cfg.patience = cli.patience.or(run.patience);
    cfg.target = cli.target.or(run.target);
    cfg.initial = run.initial;

    let from_flags = methods(cli.method.clone(), cli.baseline.clone())?;
    let from_run = methods(run.methods, run.baseline)?;
    if let Some(m) = from_flags.or(from_run) {
        cfg.methods = m;
    }
    if let Some(raw) = cli.budget_mode.as_ref().or(run.budget_mode.as_ref()) {
        cfg.budget_mode = parse::<BudgetMode>("budget-mode", raw)?;
    }
    if let Some(raw) = cli.omega_policy.as_ref().or(run.omega_policy.as_ref()) {
        cfg.omega_policy = parse::<OmegaPolicy>("omega-policy", raw)?;
    }
    cfg.trace = cli.trace.is_some();

    let axis = cli.sweep_axis.as_ref().or(run.sweep_axis.as_ref());
    let values = cli.sweep_values.clone().or(run.sweep_values);
    let sweep = match (axis, values) {
        (Some(a), Some(v)) => Some((parse::<SweepAxis>("sweep-axis", a)?, v)),
        (None, None) => None,
        _ => bail!("sweep needs both an axis and values"),
    };
    if let Some((_, v)) = &sweep {
        if v.is_empty() {
            bail!("--sweep-values: at least one value is required");
        }
    }
    cfg.validate()?;
    Ok(Plan { cfg, space, sweep })
}

fn dump_tree(cfg: &ExperimentConfig, space: &SearchSpace) -> Result<String> {
    let start = match &cfg.initial {
        Some(a) => a.clone(),
        None => sample_uniform(space, &mut hiertune::rng::stream(cfg.seed, 0)),
    };
    let mut query = TuningQuery::new(space.clone(), start);
    query.c = cfg.c;
    query.eta = cfg.eta;
    query.omega = cfg.omega;
    Ok(build_hierarchy(&query)?.to_json())
}

fn run(cli: Cli) -> Result<()> {
    let Plan {
        cfg,
        space,
        sweep: sweep_plan,
    } = plan(&cli)?;
    let is_extproc = cfg.objective.starts_with("extproc:");

    if cli.check_evaluator {
        let Some(command) = cfg.objective.strip_prefix("extproc:") else {
            bail!("--check-evaluator needs an extproc:<command> objective");
        };
        let space = space.context("--check-evaluator needs a search space from --config")?;
        let mut rng = hiertune::rng::stream(cfg.seed, 0);
        let probes: Vec<Assignment> = (0..8).map(|_| sample_uniform(&space, &mut rng)).collect();
        let report = check_conformance(command, &space, &probes)?;
        return emit(&format!(
            "evaluator conforms: {} evaluations, exit {}\n",
            report.evaluations, report.exit_status
        ));
    }

    // Builtins only need their own space; a config space must agree with it.
    let space_for_objective = if is_extproc { space.as_ref() } else { None };
    if cli.dump_tree && !is_extproc {
        let f = resolve_objective(&cfg.objective, None)?;
        return emit(&format!("{}\n", dump_tree(&cfg, f.space())?));
    }
    if cli.dump_tree {
        let space = space.context("extproc objectives need a search space from --config")?;
        return emit(&format!("{}\n", dump_tree(&cfg, &space)?));
    }
    let out_format = match &cli.out {
        None => None,
        Some(path) => match path.extension().and_then(|e| e.to_str()) {
            Some(ext @ ("csv" | "json")) => Some(ext.to_owned()),
            _ => bail!("--out must end in .csv or .json: {}", path.display()),
        },
    };
    let objective = resolve_objective(&cfg.objective, space_for_objective)?;
    if let (false, Some(space)) = (is_extproc, &space) {
        if space != objective.space() {
            bail!(
                "the config search space does not match built-in objective `{}`",
                cfg.objective
            );
        }
    }

    let results = match &sweep_plan {
        Some((axis, values)) => sweep(&cfg, *axis, values, &objective)?,
        None => run_experiment(&cfg, &objective)?,
    };
    emit(&results.summary_table())?;

    if let (Some(path), Some(format)) = (&cli.out, out_format) {
        let body = if format == "csv" {
            results.to_csv()
        } else {
            results.to_json()
        };
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &cli.trace {
        let events = results.trace.as_deref().unwrap_or_default();
        fs::write(path, format_trace(events))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Writes to stdout. A closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hier-tune: {e:#}");
            ExitCode::from(2)
        }
    }
}
