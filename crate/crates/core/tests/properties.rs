use proptest::prelude::*;

use batchts::argmaxprob::ProbMethod;
use batchts::argmaxprob::{exact_log_probs, prob_quadrature, GaussianProfile, DEFAULT_QUAD_TOL};
use batchts::batching::{fixed_endpoints, ipase_batch_size, P2Estimate, ScheduleSpec};
use batchts::metrics::RegretLedger;
use batchts::rng::{Purpose, RngStream};
use batchts::sampler::{AgentState, ArmPosterior};

fn profile_strategy(max_arms: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max_arms).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.01f64..3.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_probabilities_sum_to_one((m, v) in profile_strategy(6)) {
        let pv = prob_quadrature(&GaussianProfile::new(m, v).unwrap(), DEFAULT_QUAD_TOL).unwrap();
        let total: f64 = pv.probs.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9, "sum {}", total);
        prop_assert!(pv.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn permuting_arms_permutes_probabilities((m, v) in profile_strategy(5), rot in 0usize..5) {
        let n = m.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let base = prob_quadrature(&GaussianProfile::new(m.clone(), v.clone()).unwrap(), DEFAULT_QUAD_TOL).unwrap();
        let pm: Vec<f64> = perm.iter().map(|&i| m[i]).collect();
        let pvar: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let moved = prob_quadrature(&GaussianProfile::new(pm, pvar).unwrap(), DEFAULT_QUAD_TOL).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((moved.probs[k] - base.probs[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn raising_a_mean_never_lowers_its_probability((m, v) in profile_strategy(4), bump in 0.01f64..2.0) {
        let before = prob_quadrature(&GaussianProfile::new(m.clone(), v.clone()).unwrap(), DEFAULT_QUAD_TOL).unwrap();
        let mut m2 = m;
        m2[0] += bump;
        let after = prob_quadrature(&GaussianProfile::new(m2, v).unwrap(), DEFAULT_QUAD_TOL).unwrap();
        prop_assert!(after.probs[0] >= before.probs[0] - 1e-9);
    }

    #[test]
    fn log_probabilities_match_probabilities((m, v) in profile_strategy(4)) {
        let profile = GaussianProfile::new(m, v).unwrap();
        let pv = prob_quadrature(&profile, DEFAULT_QUAD_TOL).unwrap();
        let logs = exact_log_probs(&profile).unwrap();
        for (p, lp) in pv.probs.iter().zip(&logs) {
            if *p > 1e-6 {
                prop_assert!((lp.exp() - p).abs() <= 1e-8 * p.max(1e-3), "{} vs {}", lp.exp(), p);
            }
        }
    }

    #[test]
    fn batch_fold_equals_per_step_updates(seed in any::<u64>(), sizes in prop::collection::vec(1u64..40, 1..8)) {
        let mut agent = AgentState::new(3).unwrap();
        let mut reference = [ArmPosterior::default(); 3];
        let mut ts = RngStream::for_replicate(seed, 0, Purpose::Thompson);
        let mut rewards = RngStream::for_replicate(seed, 0, Purpose::Rewards);
        for size in sizes {
            agent.open_batch(agent.time() + size).unwrap();
            let mut seen = Vec::new();
            for _ in 0..size {
                let arm = agent.sample_action(&mut ts).unwrap();
                let r: f64 = rand::Rng::random_range(&mut rewards, -5.0..5.0);
                agent.record_observation(arm, r).unwrap();
                seen.push((arm, r));
                // Frozen: nothing moves until the batch closes.
                prop_assert_eq!(agent.posteriors(), &reference[..]);
            }
            agent.close_batch().unwrap();
            for (arm, r) in seen {
                reference[arm].update(r);
            }
            prop_assert_eq!(agent.posteriors(), &reference[..]);
        }
    }

    #[test]
    fn ipase_size_is_monotone_in_p2(a in 1e-12f64..1.0, b in 1e-12f64..1.0, remaining in 1u64..1_000_000) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let est = |p: f64| P2Estimate { p2: p, log_p2: p.ln(), method: ProbMethod::ClosedForm };
        let big = ipase_batch_size(&est(lo), remaining);
        let small = ipase_batch_size(&est(hi), remaining);
        prop_assert!(big >= small);
        prop_assert!((1..=remaining).contains(&small));
    }

    #[test]
    fn fixed_schedules_increase_to_the_horizon(
        horizon in 1u64..5000,
        which in 0usize..4,
        p in 0.3f64..3.0,
        ratio in 1.05f64..3.0,
        size in 1u64..50,
    ) {
        let spec = match which {
            0 => ScheduleSpec::PerStep,
            1 => ScheduleSpec::Constant { size },
            2 => ScheduleSpec::Polynomial { p },
            _ => ScheduleSpec::Geometric { ratio },
        };
        let ends = fixed_endpoints(&spec, horizon).unwrap();
        prop_assert_eq!(*ends.last().unwrap(), horizon);
        prop_assert!(ends.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ends[0] >= 1);
    }

    #[test]
    fn ledger_conserves_counts_and_effort(steps in prop::collection::vec((0usize..4, prop::collection::vec(0.0f64..1.0, 4)), 1..300)) {
        let mut ledger = RegretLedger::new(vec![0.0, 0.1, 0.5, 1.0], vec![]);
        for (arm, raw) in &steps {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let probs: Vec<f64> = raw.iter().map(|x| (x + 1e-9 / 4.0) / total).collect();
            ledger.step_update(*arm, &[1.0, 0.5, 0.25, 0.0], &probs).unwrap();
        }
        let t = steps.len() as f64;
        prop_assert_eq!(ledger.pull_counts().iter().sum::<u64>(), steps.len() as u64);
        prop_assert!((ledger.effort().iter().sum::<f64>() - t).abs() <= 1e-9);
        prop_assert_eq!(ledger.random_regret(), ledger.per_arm_regret()[1..].iter().sum::<f64>());
    }
}
