mod common;

use proptest::prelude::*;
use sbcert_core::certificate::{CertificateTemplate, Mode, SbcSolution};
use sbcert_core::complexity::{binomial_tail, epsilon2, min_samples, ConfidenceBudget};
use sbcert_core::composition::{risk_bound, small_gain_check_with};
use sbcert_core::lp::solve_lp;
use sbcert_core::region::{BoxRegion, RegionSpec};
use sbcert_core::rng::StreamSeed;
use sbcert_core::sampling::{draw_dataset, Dataset};
use sbcert_core::scenario::{synthesize, Pinned, ScenarioOptions};
use sbcert_core::system::{Agent, Edge, LinearAgent, NetworkTopology, NoiseKind};

fn solution(gamma: f64, lambda: f64, kappa: f64, alpha: f64, rho: f64) -> SbcSolution {
    SbcSolution {
        agent_id: "a".into(),
        mode: Mode::StochasticSmallGain,
        template: CertificateTemplate::new(vec![vec![2]], vec![[0.0, 1.0]]).unwrap(),
        q: vec![1.0],
        gamma,
        lambda,
        psi: 0.0,
        alpha,
        rho,
        kappa,
        eta_star: -1.0,
        epsilon1: 0.1,
        beta1: 0.0,
        beta2: 0.01,
        confidence: 0.99,
        confidence_void: false,
        w_inf_sq: 1.0,
    }
}

/// Scalar noisy toy agent `x+ = 0.5 x + 0.02 w + 0.05 s` on `[1, 4]`.
fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let agent = Agent::Linear(LinearAgent::from_rows(&[vec![0.5]], &[0.0], &[vec![0.02]], &[vec![0.05]], NoiseKind::StandardGaussian).unwrap());
    let region = RegionSpec::new(
        BoxRegion::from_intervals(&[[1.0, 4.0]]).unwrap(),
        BoxRegion::from_intervals(&[[1.0, 2.0]]).unwrap(),
        BoxRegion::from_intervals(&[[3.5, 4.0]]).unwrap(),
        BoxRegion::from_intervals(&[[0.0, 4.0]]).unwrap(),
    )
    .unwrap();
    draw_dataset(&agent, &region, n, 3, &StreamSeed::new(seed), 0, "toy").unwrap()
}

fn toy_eta(d: &Dataset, mu: f64) -> f64 {
    let template = CertificateTemplate::new(vec![vec![0], vec![2]], vec![[0.0, 0.5], [0.0, 2.0]]).unwrap();
    let pinned = Pinned { alpha: Some(0.5), rho: Some(0.1), ..Pinned::default() };
    let budget = ConfidenceBudget { beta1: 0.01, beta2: 0.01, mu, epsilon1: 0.1, variance_bound: 1.0, c: 6, m: 1, exponent: 2 };
    let v = synthesize(d, &template, &[0.5], &budget, &pinned, &ScenarioOptions::new(Mode::StochasticSmallGain, mu), None).unwrap();
    v.eta_star.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_is_nonincreasing_in_n(eps in 1e-3f64..0.5, c in 1usize..10, n in 0u64..5000, step in 1u64..500) {
        let a = binomial_tail(n, &[eps], c).unwrap();
        let b = binomial_tail(n + step, &[eps], c).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12));
    }

    #[test]
    fn tail_matches_incomplete_beta(eps in 1e-4f64..0.9, c in 1usize..12, n in 0u64..100_000) {
        let got = binomial_tail(n, &[eps, eps / 2.0], c).unwrap();
        let want = common::tail_by_beta(n, &[eps, eps / 2.0], c);
        prop_assert!((got - want).abs() <= 1e-9 * want + 1e-290, "{got} vs {want}");
    }

    #[test]
    fn min_samples_monotone(eps in 1e-3f64..0.3, c in 1usize..8, beta in 1e-6f64..0.1) {
        let n = min_samples(&[eps], beta, c).unwrap();
        prop_assert!(min_samples(&[eps], beta / 10.0, c).unwrap() >= n);
        prop_assert!(min_samples(&[eps], beta, c + 1).unwrap() >= n);
        prop_assert!(min_samples(&[eps, eps], beta, c).unwrap() >= n);
        prop_assert!(min_samples(&[eps * 0.5], beta, c).unwrap() >= n);
    }

    #[test]
    fn epsilon2_monotone(e1 in 0.0f64..1.0, l in 1.0f64..10.0, k in 1u32..6, bump in 1.0f64..2.0) {
        let base = epsilon2(e1, l, k).unwrap();
        prop_assert!(epsilon2(e1 * 0.9, l, k).unwrap() <= base);
        prop_assert!(epsilon2(e1, l * bump, k).unwrap() <= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn risk_bound_in_unit_interval(g in 0.0f64..1.0, l in 1.0f64..100.0, psi in 0.0f64..10.0, kappa in 0.01f64..0.99, t in 0u64..10_000) {
        let v = risk_bound(g, l, psi, kappa, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if t == 0 {
            prop_assert!((v - g / l).abs() < 1e-12);
        }
    }

    #[test]
    fn small_gain_is_permutation_invariant(
        params in proptest::collection::vec((0.0f64..1.0, 1.0f64..5.0, 0.1f64..0.99, 0.01f64..1.0, 0.0f64..0.1), 1..7),
        seed in any::<u64>(),
        all_pairs in any::<bool>(),
    ) {
        let m = params.len();
        let sols: Vec<SbcSolution> = params.iter().map(|&(g, l, k, a, r)| solution(g, l, k, a, r)).collect();
        let mut edges = Vec::new();
        for i in 1..m {
            edges.push(Edge { reader: i, source: (seed as usize + i) % i, offset: 0 });
        }
        let topo = NetworkTopology { agents: m, edges };
        let mut perm: Vec<usize> = (0..m).collect();
        perm.rotate_left(seed as usize % m);
        perm.swap(0, m - 1);
        let mut permuted = sols.clone();
        for (i, s) in sols.iter().enumerate() {
            permuted[perm[i]] = s.clone();
        }
        let a = small_gain_check_with(&sols, &topo, all_pairs).unwrap();
        let b = small_gain_check_with(&permuted, &topo.relabel(&perm), all_pairs).unwrap();
        prop_assert_eq!(a.pass, b.pass);
        prop_assert!((a.sum_gamma - b.sum_gamma).abs() < 1e-12);
        for i in 0..m {
            prop_assert!((a.gains.pi[i] - b.gains.pi[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn solver_is_deterministic(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let lp = common::random_lp(&mut r, 3, 5);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        // infeasible results carry a NaN objective
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Extra samples only add constraints.
    #[test]
    fn more_samples_never_lower_eta(seed in any::<u64>(), n in 20usize..120, extra in 1usize..120) {
        let d = toy_dataset(n + extra, seed);
        let small = toy_eta(&d.prefix(n), 0.05);
        let large = toy_eta(&d, 0.05);
        prop_assert!(large >= small - 1e-9, "{small} -> {large}");
    }

    /// Raising the empirical-mean margin can only tighten the decrease rows.
    #[test]
    fn larger_mu_never_lowers_eta(seed in any::<u64>(), mu in 0.0f64..0.2, bump in 0.0f64..0.2) {
        let d = toy_dataset(80, seed);
        prop_assert!(toy_eta(&d, mu + bump) >= toy_eta(&d, mu) - 1e-9);
    }
}
