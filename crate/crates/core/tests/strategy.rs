use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hiertune::experiment::{mean_and_std_err, sweep, ExperimentConfig, Method, SweepAxis};
use hiertune::grat::{generate_candidates, real_slot_of, run_tuning_algorithm};
use hiertune::objectives::{builtin, hartmann, EvaluationLedger};
use hiertune::{build_hierarchy, Assignment, TuningQuery};

fn start() -> Assignment {
    Assignment::new()
        .with("x1", 0.3)
        .with("x2", 0.6)
        .with("x3", 0.9)
}

#[test]
fn hartmann3_result_matches_a_replayed_brute_force() {
    let f = builtin("hartmann3").unwrap();
    let query = TuningQuery::new(f.space().clone(), start());
    let tree = build_hierarchy(&query).unwrap();
    for (k, agent) in tree.terminals().enumerate() {
        for seed in 0..20u64 {
            let rng = ChaCha8Rng::seed_from_u64(seed * 31 + k as u64);
            let ledger = EvaluationLedger::new();
            let got = run_tuning_algorithm(
                agent,
                f.space(),
                &start(),
                10,
                2,
                f.as_ref(),
                &ledger,
                &mut rng.clone(),
            )
            .unwrap();

            // Replay from the same stream, then evaluate with the bare formula.
            let cands =
                generate_candidates(agent, f.space(), &start(), 10, 2, &mut rng.clone()).unwrap();
            assert_eq!(cands.len(), 11);
            let values: Vec<f64> = cands
                .iter()
                .map(|c| {
                    let x: Vec<f64> = ["x1", "x2", "x3"]
                        .iter()
                        .map(|n| c.real(n).unwrap())
                        .collect();
                    hartmann(3, &x).unwrap()
                })
                .collect();
            let mut best = 0;
            for (j, v) in values.iter().enumerate() {
                if *v < values[best] {
                    best = j;
                }
            }
            assert_eq!(got.best_response, values[best]);
            assert_eq!(got.best_assignment, cands[best]);
            assert!(got.best_response <= values[0]);

            // Candidate s holds the owned parameter in slot s.
            let param = &agent.primary[0];
            for (s, c) in cands.iter().enumerate().skip(1) {
                let v = c.real(param).unwrap();
                assert_eq!(
                    real_slot_of(0.0, 1.0, hiertune::domain::Scale::Linear, 10, v),
                    s
                );
            }
        }
    }
}

#[test]
fn more_slots_do_not_hurt_on_average() {
    let cfg = ExperimentConfig {
        objective: "hartmann3".into(),
        methods: vec![Method::Grat],
        iters: 5,
        trials: 200,
        seed: 11,
        ..ExperimentConfig::default()
    };
    let f = builtin("hartmann3").unwrap();
    let res = sweep(&cfg, SweepAxis::Eta, &[2, 4, 8], &f).unwrap();
    let means: Vec<(f64, f64)> = [2, 4, 8]
        .iter()
        .map(|&eta| {
            let xs: Vec<f64> = res
                .rows
                .iter()
                .filter(|r| r.eta == eta)
                .map(|r| r.best)
                .collect();
            assert_eq!(xs.len(), 200);
            mean_and_std_err(&xs)
        })
        .collect();
    for w in means.windows(2) {
        let ((a, sa), (b, sb)) = (w[0], w[1]);
        // Non-increasing up to sampling noise.
        assert!(b <= a + 1.96 * (sa * sa + sb * sb).sqrt(), "{means:?}");
    }
    assert!(means[2].0 < means[0].0, "{means:?}");
}

#[test]
fn iteration_sweep_produces_one_block_per_value() {
    let cfg = ExperimentConfig {
        objective: "hartmann3".into(),
        methods: vec![Method::Grat, Method::Random, Method::Lhs],
        trials: 3,
        ..ExperimentConfig::default()
    };
    let f = builtin("hartmann3").unwrap();
    let res = sweep(&cfg, SweepAxis::Iterations, &[5, 10, 15, 20], &f).unwrap();
    let csv = res.to_csv();
    assert_eq!(csv.lines().count(), 1 + 4 * 3 * 3);
    for iters in [5, 10, 15, 20] {
        assert_eq!(res.rows.iter().filter(|r| r.iters == iters).count(), 9);
    }
}
