//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hiertune::baselines::{latin_hypercube, random_search};
use hiertune::domain::{Assignment, HyperParameterSpec, ParamKind, SearchSpace, Value};
use hiertune::experiment::{mean_and_std_err, run_experiment, ExperimentConfig, Method, Z95};
use hiertune::grat::{prepare_feedback, uniform_rand_slot, weighted_rand, DrawSession, SubResult};
use hiertune::hierarchy::{build_hierarchy, TuningQuery};
use hiertune::objectives::{builtin, hartmann, EvaluationLedger, Objective, ObjectiveHandle};
use hiertune::runtime::{tune_with, StopCriteria, TuneOptions};
use hiertune::{baselines::BudgetMode, Error};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("l{i}")).collect()
}

fn box_query(n: usize, c: usize) -> TuningQuery {
    let params = names(n)
        .into_iter()
        .map(|name| HyperParameterSpec::real(name, 0.0, 1.0).unwrap())
        .collect();
    let space = SearchSpace::all_objective(params).unwrap();
    let start = names(n).into_iter().map(|name| (name, 0.5)).collect();
    let mut q = TuningQuery::new(space, start);
    q.c = c;
    q
}

fn hierarchy_shape() -> Outcome {
    let tree = build_hierarchy(&box_query(5, 2)).map_err(|e| e.to_string())?;
    let terminals = tree.terminals().count();
    let expected_height = (5f64.log2()).ceil() as usize;
    ensure(
        terminals == 5 && tree.len() == 9 && tree.height() == 3 && expected_height == 3,
        || {
            format!(
                "n=5: {} nodes, {terminals} terminals, height {}",
                tree.len(),
                tree.height()
            )
        },
    )?;
    let four = build_hierarchy(&box_query(4, 2)).map_err(|e| e.to_string())?;
    // (1 - n c) / (1 - c) at n = 4, c = 2.
    let formula = (1 - 4 * 2) / (1 - 2);
    ensure(four.len() == formula as usize, || {
        format!("n=4: {} nodes, formula {formula}", four.len())
    })?;
    Ok(format!(
        "n=5 -> 9 nodes/5 terminals/height 3; n=4 -> {} nodes",
        four.len()
    ))
}

fn sampling_laws() -> Outcome {
    const DRAWS: usize = 100_000;
    let spec = HyperParameterSpec::real("x", 0.0, 1.0).unwrap();
    let current = Value::Real(0.42);
    let mut notes = Vec::new();
    for (i, &(omega, eta)) in [(1u32, 4usize), (3, 4), (2, 5)].iter().enumerate() {
        let mut r = rng(100 + i as u64);
        let p = omega as f64 / (omega as f64 + eta as f64 - 1.0);
        let mut kept = 0usize;
        let mut per_slot = vec![0usize; eta];
        for _ in 0..DRAWS {
            let v =
                weighted_rand(&spec, &current, omega, eta, &mut r).map_err(|e| e.to_string())?;
            if v == current {
                kept += 1;
            } else {
                let x = v.as_real().unwrap();
                per_slot[((x * eta as f64).floor() as usize).min(eta - 1)] += 1;
            }
        }
        let freq = kept as f64 / DRAWS as f64;
        let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
        ensure((freq - p).abs() <= 3.0 * se, || {
            format!(
                "(ω={omega}, η={eta}): keep {freq:.5} vs {p:.5} (3se={:.5})",
                3.0 * se
            )
        })?;
        // Each other slot carries probability 1 / (ω + η - 1); the current
        // value's own slot is never a move target.
        let q = 1.0 / (omega as f64 + eta as f64 - 1.0);
        let own = (0.42 * eta as f64).floor() as usize;
        for (s, &count) in per_slot.iter().enumerate() {
            let f = count as f64 / DRAWS as f64;
            let expect = if s == own { 0.0 } else { q };
            let se = (expect * (1.0 - expect) / DRAWS as f64).sqrt();
            ensure((f - expect).abs() <= 3.0 * se.max(1e-12), || {
                format!("(ω={omega}, η={eta}) slot {}: {f:.5} vs {expect:.5}", s + 1)
            })?;
        }
        notes.push(format!("({omega},{eta}) keep={freq:.4}/{p:.4}"));
    }

    // Slot containment over linear, log10 and nominal specs.
    let linear = HyperParameterSpec::real("x", -2.0, 3.0).unwrap();
    let log = HyperParameterSpec::log10("C", 1e-2, 1e13).unwrap();
    let nominal = HyperParameterSpec::nominal("k", ["poly", "linear", "rbf", "sigmoid"]).unwrap();
    let mut r = rng(7);
    let eta = 7;
    for n in 0..DRAWS {
        let s = n % eta + 1;
        for spec in [&linear, &log] {
            let v = uniform_rand_slot(spec, eta, s, &mut DrawSession::default(), &mut r)
                .map_err(|e| e.to_string())?
                .as_real()
                .unwrap();
            let ParamKind::RealInterval { lo, hi, scale } = spec.kind() else {
                unreachable!()
            };
            let (tl, th, t) = match scale {
                hiertune::domain::Scale::Linear => (*lo, *hi, v),
                hiertune::domain::Scale::Log10 => (lo.log10(), hi.log10(), v.log10()),
            };
            let w = (th - tl) / eta as f64;
            let (a, b) = (tl + (s - 1) as f64 * w, tl + s as f64 * w);
            // 1e-9 of a slot width absorbs log10/pow round trips.
            let slack = 1e-9 * w;
            ensure(
                t >= a - slack && t < b + slack && spec.contains(&Value::Real(v)),
                || format!("{} slot {s}/{eta}: {v} outside", spec.name()),
            )?;
        }
    }
    for _ in 0..DRAWS / 4 {
        let mut session = DrawSession::default();
        let mut seen: Vec<String> = (1..=4)
            .map(|s| {
                uniform_rand_slot(&nominal, 4, s, &mut session, &mut r)
                    .unwrap()
                    .as_label()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        seen.sort();
        seen.dedup();
        ensure(seen.len() == 4, || {
            format!("nominal draws repeated a label: {seen:?}")
        })?;
    }
    Ok(notes.join(", "))
}

fn feedback_law() -> Outcome {
    let mut r = rng(2024);
    for case in 0..10_000 {
        let n = r.random_range(1..=8);
        let order = names(n);
        // Few distinct responses so that ties are frequent.
        let psi: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64 * 0.25).collect();
        let mut results: Vec<SubResult> = (0..n)
            .map(|j| SubResult {
                param: order[j].clone(),
                best_assignment: Assignment::new().with("owner", j as f64),
                best_response: psi[j],
            })
            .collect();
        results.shuffle(&mut r);
        let fb = prepare_feedback(&results, &order).map_err(|e| e.to_string())?;
        for (i, name) in order.iter().enumerate() {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if j == i && n > 1 {
                    continue;
                }
                if best.is_none_or(|b| psi[j] < psi[b]) {
                    best = Some(j);
                }
            }
            let got = fb.per_param[name].real("owner").unwrap() as usize;
            ensure(got == best.unwrap(), || {
                format!(
                    "case {case}: λ{} got V{} expected V{} (ψ={psi:?})",
                    i + 1,
                    got + 1,
                    best.unwrap() + 1
                )
            })?;
            ensure(n == 1 || got != i, || format!("case {case}: self feedback"))?;
        }
    }
    Ok("10000 random result sets".into())
}

fn grat_beats_random() -> Outcome {
    let compare = |objective: &str| -> Result<(f64, f64, f64, f64), String> {
        let cfg = ExperimentConfig {
            objective: objective.into(),
            methods: vec![Method::Grat, Method::Random],
            eta: 10,
            // Keep and move equally likely: ω = η - 1.
            omega: 9,
            iters: 30,
            c: 2,
            trials: 100,
            seed: 20_240_601,
            budget_mode: BudgetMode::Measured,
            ..ExperimentConfig::default()
        };
        let f = builtin(objective).map_err(|e| e.to_string())?;
        let res = run_experiment(&cfg, &f).map_err(|e| e.to_string())?;
        let pick = |m: Method| -> Vec<f64> {
            res.rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.best)
                .collect()
        };
        let (grat, random) = (pick(Method::Grat), pick(Method::Random));
        let gaps: Vec<f64> = random.iter().zip(&grat).map(|(r, g)| r - g).collect();
        let (gap, gap_se) = mean_and_std_err(&gaps);
        Ok((
            mean_and_std_err(&grat).0,
            mean_and_std_err(&random).0,
            gap,
            gap_se,
        ))
    };
    let (g6, r6, gap6, se6) = compare("hartmann6")?;
    let (g3, r3, gap3, se3) = compare("hartmann3")?;
    ensure(g6 <= r6 && gap6 - Z95 * se6 > 0.0, || {
        format!(
            "hartmann6: grat {g6:.4} vs random {r6:.4}, improvement {gap6:.4} ± {:.4}",
            Z95 * se6
        )
    })?;
    let diff_se = (se6 * se6 + se3 * se3).sqrt();
    ensure(gap6 - gap3 - Z95 * diff_se > 0.0, || {
        format!(
            "improvement h6 {gap6:.4} vs h3 {gap3:.4} (95% margin {:.4})",
            Z95 * diff_se
        )
    })?;
    Ok(format!(
        "h6 grat {g6:.4} random {r6:.4} (gap {gap6:.4}±{:.4}); h3 grat {g3:.4} random {r3:.4} (gap {gap3:.4}±{:.4})",
        Z95 * se6,
        Z95 * se3
    ))
}

/// Independent transcription of the Hartmann constants, stored per coordinate
/// (columns of the usual 4 x d tables).
fn hartmann_oracle(x: &[f64]) -> f64 {
    let alpha = [1.0, 1.2, 3.0, 3.2];
    let (a, p): (Vec<[f64; 4]>, Vec<[f64; 4]>) = if x.len() == 3 {
        (
            vec![
                [3.0, 0.1, 3.0, 0.1],
                [10.0, 10.0, 10.0, 10.0],
                [30.0, 35.0, 30.0, 35.0],
            ],
            vec![
                [3689e-4, 4699e-4, 1091e-4, 381e-4],
                [1170e-4, 4387e-4, 8732e-4, 5743e-4],
                [2673e-4, 7470e-4, 5547e-4, 8828e-4],
            ],
        )
    } else {
        (
            vec![
                [10.0, 0.05, 3.0, 17.0],
                [3.0, 10.0, 3.5, 8.0],
                [17.0, 17.0, 1.7, 0.05],
                [3.5, 0.1, 10.0, 10.0],
                [1.7, 8.0, 17.0, 0.1],
                [8.0, 14.0, 8.0, 14.0],
            ],
            vec![
                [1312e-4, 2329e-4, 2348e-4, 4047e-4],
                [1696e-4, 4135e-4, 1451e-4, 8828e-4],
                [5569e-4, 8307e-4, 3522e-4, 8732e-4],
                [124e-4, 3736e-4, 2883e-4, 5743e-4],
                [8283e-4, 1004e-4, 3047e-4, 1091e-4],
                [5886e-4, 9991e-4, 6650e-4, 381e-4],
            ],
        )
    };
    let mut total = 0.0;
    for i in 0..4 {
        let mut e = 0.0;
        for j in 0..x.len() {
            e += a[j][i] * (x[j] - p[j][i]) * (x[j] - p[j][i]);
        }
        total += alpha[i] * (-e).exp();
    }
    -total
}

fn random_lower_bound(d: usize, samples: usize, seed: u64) -> f64 {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    let mut r = rng(seed + t as u64);
                    let mut x = vec![0.0; d];
                    let mut best = f64::INFINITY;
                    for _ in 0..samples.div_ceil(threads) {
                        x.iter_mut().for_each(|v| *v = r.random());
                        best = best.min(hartmann_oracle(&x));
                    }
                    best
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold(f64::INFINITY, f64::min)
    })
}

fn benchmark_correctness() -> Outcome {
    let cases: [(&[f64], f64); 2] = [
        (&[0.114614, 0.555649, 0.852547], -3.86278),
        (
            &[0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573],
            -3.32237,
        ),
    ];
    let mut notes = Vec::new();
    for (x, published) in cases {
        let d = x.len();
        let oracle = hartmann_oracle(x);
        let value = hartmann(d, x).map_err(|e| e.to_string())?;
        let floor = random_lower_bound(d, 10_000_000, 31 * d as u64);
        ensure(
            (value - oracle).abs() <= 1e-4 && (value - published).abs() <= 1e-4,
            || format!("hartmann{d}: {value} vs oracle {oracle} / published {published}"),
        )?;
        ensure(floor >= oracle - 1e-4, || {
            format!("hartmann{d}: random search found {floor} below the optimum {oracle}")
        })?;
        // A few random probes against the oracle, and negativity.
        let mut r = rng(d as u64);
        for _ in 0..100_000 {
            let p: Vec<f64> = (0..d).map(|_| r.random()).collect();
            let (v, o) = (hartmann(d, &p).unwrap(), hartmann_oracle(&p));
            ensure((v - o).abs() <= 1e-12 && v < 0.0, || {
                format!("hartmann{d} at {p:?}: {v} vs {o}")
            })?;
        }
        notes.push(format!("h{d}={value:.5} (10^7-sample floor {floor:.5})"));
    }
    Ok(notes.join(", "))
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        objective: "hartmann3".into(),
        methods: vec![Method::Grat],
        trials: 10,
        seed: 99,
        workers: 0,
        ..ExperimentConfig::default()
    };
    let f = builtin("hartmann3").map_err(|e| e.to_string())?;
    let a = run_experiment(&cfg, &f)
        .map_err(|e| e.to_string())?
        .to_csv();
    let b = run_experiment(&cfg, &f)
        .map_err(|e| e.to_string())?
        .to_csv();
    let seq = ExperimentConfig {
        workers: 1,
        execution: hiertune::par::Execution::Sequential,
        ..cfg
    };
    let c = run_experiment(&seq, &f)
        .map_err(|e| e.to_string())?
        .to_csv();
    ensure(a == b, || "two concurrent runs differ".into())?;
    ensure(a == c, || "concurrent and sequential runs differ".into())?;
    Ok(format!(
        "{} identical bytes (concurrent x2, sequential)",
        a.len()
    ))
}

/// Smooth synthetic response over arbitrary mixed spaces.
struct Synthetic {
    space: SearchSpace,
    name: String,
}

impl Objective for Synthetic {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, a: &Assignment) -> hiertune::Result<f64> {
        let mut total = 0.0;
        for (k, spec) in self.space.params().iter().enumerate() {
            let phase = 0.3 + 0.1 * k as f64;
            total += match (spec.kind(), a.get(spec.name())) {
                (ParamKind::RealInterval { lo, hi, scale }, Some(Value::Real(v))) => {
                    let t = match scale {
                        hiertune::domain::Scale::Linear => (v - lo) / (hi - lo),
                        hiertune::domain::Scale::Log10 => {
                            (v.log10() - lo.log10()) / (hi.log10() - lo.log10())
                        }
                    };
                    (t - phase).powi(2) + 0.05 * (9.0 * t).sin()
                }
                (ParamKind::Nominal { values }, Some(Value::Label(l))) => {
                    let idx = values.iter().position(|x| x == l).unwrap_or(0);
                    0.1 * ((idx + k) % values.len()) as f64
                }
                _ => return Err(Error::Domain(format!("bad value for {}", spec.name()))),
            };
        }
        Ok(total)
    }
}

fn random_config(r: &mut ChaCha8Rng, case: usize) -> (TuningQuery, ObjectiveHandle) {
    let d = r.random_range(1..=6);
    let mut params = Vec::new();
    for k in 0..d {
        let name = format!("p{k}");
        params.push(match r.random_range(0..3) {
            0 => HyperParameterSpec::real(name, -1.0, 2.0).unwrap(),
            1 => HyperParameterSpec::log10(name, 1e-3, 1e4).unwrap(),
            _ => {
                let labels: Vec<String> = (0..r.random_range(1..=5))
                    .map(|i| format!("v{i}"))
                    .collect();
                HyperParameterSpec::nominal(name, labels).unwrap()
            }
        });
    }
    // Occasionally hold the last parameter fixed.
    let mut fixed = BTreeMap::new();
    let mut objective: Vec<String> = params.iter().map(|p| p.name().to_owned()).collect();
    if d > 1 && r.random_bool(0.3) {
        let last = objective.pop().unwrap();
        let spec = params.last().unwrap();
        let v = match spec.kind() {
            ParamKind::RealInterval { lo, .. } => Value::Real(*lo),
            ParamKind::Nominal { values } => Value::Label(values[0].clone()),
        };
        fixed.insert(last, v);
    }
    let space = SearchSpace::new(params, objective, fixed).unwrap();
    let start = hiertune::baselines::sample_uniform(&space, r);
    let mut q = TuningQuery::new(space.clone(), start);
    q.c = r.random_range(2..=4);
    q.eta = r.random_range(1..=8);
    q.omega = r.random_range(1..=4);
    q.stop = StopCriteria::iterations(r.random_range(1..=6));
    if r.random_bool(0.3) {
        q.omega_policy = hiertune::grat::OmegaPolicy::DecayOnStall(r.random_range(1..=3));
    }
    let f: ObjectiveHandle = Arc::new(Synthetic {
        space,
        name: format!("synthetic{case}"),
    });
    (q, f)
}

fn budget_accounting() -> Outcome {
    let mut r = rng(4242);
    let mut checked = 0;
    for case in 0..200 {
        let (q, f) = random_config(&mut r, case);
        let tree = build_hierarchy(&q).map_err(|e| e.to_string())?;
        let ledger = EvaluationLedger::new();
        let out = tune_with(
            &tree,
            &q,
            f.as_ref(),
            &ledger,
            case as u64,
            &TuneOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let n = q.space.objective_names().len() as u64;
        let bound = n * (q.eta as u64 + 1) * out.report.iterations_run as u64 + 1;
        ensure(
            ledger.count() == out.report.evaluations && out.report.evaluations <= bound,
            || {
                format!(
                    "case {case}: {} evaluations > bound {bound}",
                    out.report.evaluations
                )
            },
        )?;
        // Baselines consume exactly their budget whenever the space has room.
        let budget = out.report.evaluations.min(5);
        let has_real = q.space.params().iter().any(|p| {
            q.space.is_objective(p.name()) && matches!(p.kind(), ParamKind::RealInterval { .. })
        });
        if has_real {
            for lhs in [false, true] {
                let l = EvaluationLedger::new();
                let mut br = rng(case as u64);
                let rep = if lhs {
                    latin_hypercube(&q.space, f.as_ref(), &l, budget, &mut br)
                } else {
                    random_search(&q.space, f.as_ref(), &l, budget, &mut br)
                }
                .map_err(|e| e.to_string())?;
                ensure(rep.evaluations == budget && l.count() == budget, || {
                    format!("case {case}: baseline used {} of {budget}", rep.evaluations)
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "200 GRAT runs within n(η+1)I+1; {checked} baseline pairs exact"
    ))
}

fn incumbent_monotonicity() -> Outcome {
    let mut r = rng(777);
    for case in 0..100 {
        let (q, f) = random_config(&mut r, case);
        let tree = build_hierarchy(&q).map_err(|e| e.to_string())?;
        let ledger = EvaluationLedger::new();
        let rep = tune_with(
            &tree,
            &q,
            f.as_ref(),
            &ledger,
            1000 + case as u64,
            &TuneOptions::default(),
        )
        .map_err(|e| e.to_string())?
        .report;
        for w in rep.per_iteration_trace.windows(2) {
            ensure(w[1].incumbent <= w[0].incumbent, || {
                format!("case {case}: incumbent rose")
            })?;
        }
        ensure(rep.last_best_iteration <= rep.iterations_run, || {
            format!(
                "case {case}: last best {} > run {}",
                rep.last_best_iteration, rep.iterations_run
            )
        })?;
        let min = rep
            .per_iteration_trace
            .iter()
            .map(|t| t.incumbent)
            .fold(f64::INFINITY, f64::min);
        let actual = f.evaluate(&rep.incumbent).map_err(|e| e.to_string())?;
        ensure(
            min == rep.incumbent_response && actual == rep.incumbent_response,
            || {
                format!(
                    "case {case}: incumbent {} vs trace min {min} / re-evaluated {actual}",
                    rep.incumbent_response
                )
            },
        )?;
    }
    Ok("100 random configurations".into())
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "hierarchy shape",
            limit: Duration::from_secs(1),
            run: hierarchy_shape,
        },
        Criterion {
            name: "sampling laws",
            limit: Duration::from_secs(10),
            run: sampling_laws,
        },
        Criterion {
            name: "feedback law",
            limit: Duration::from_secs(5),
            run: feedback_law,
        },
        Criterion {
            name: "GRAT beats random at matched budget",
            limit: Duration::from_secs(180),
            run: grat_beats_random,
        },
        Criterion {
            name: "benchmark correctness",
            limit: Duration::from_secs(60),
            run: benchmark_correctness,
        },
        Criterion {
            name: "determinism",
            limit: Duration::from_secs(30),
            run: determinism,
        },
        Criterion {
            name: "budget accounting",
            limit: Duration::from_secs(60),
            run: budget_accounting,
        },
        Criterion {
            name: "incumbent monotonicity",
            limit: Duration::from_secs(60),
            run: incumbent_monotonicity,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= c.limit {
                Ok(detail)
            } else {
                Err(format!("took {elapsed:.2?}, limit {:?}", c.limit))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS  {:<38} {elapsed:>9.2?}  {detail}", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<38} {elapsed:>9.2?}  {why}", c.name);
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
