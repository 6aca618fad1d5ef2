use std::path::Path;

use sbcert_core::composition::{certify_small_gain, risk_bound};
use sbcert_core::config::PipelineConfig;
use sbcert_core::error::Error;
use sbcert_core::pipeline::{build_network, certify, draw_datasets, sample_size, synthesize_all};
use sbcert_core::scenario::ScenarioVerdict;
use sbcert_core::system::NetworkTopology;
use sbcert_core::validate::{grid_check, GridOptions};

fn toy() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_deterministic.json");
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.samples_override = Some(1500);
    cfg
}

fn verdicts(cfg: &PipelineConfig) -> Vec<ScenarioVerdict> {
    let network = build_network(cfg, None).unwrap();
    let plan = sample_size(cfg).unwrap();
    let data = draw_datasets(cfg, &network, &plan).unwrap();
    synthesize_all(cfg, &data, &plan).unwrap()
}

#[test]
fn identical_data_gives_identical_verdicts() {
    let cfg = toy();
    let a = verdicts(&cfg);
    assert!(a.iter().all(|v| v.feasible_for_rop));
    assert_eq!(a, verdicts(&cfg));
}

#[test]
fn failed_small_gain_falls_back_only_when_allowed() {
    let mut cfg = toy();
    let mut vs = verdicts(&cfg);
    // a large interaction gain breaks the column condition
    vs[1].solution.as_mut().unwrap().rho = 100.0;

    cfg.fallback_to_relaxed = false;
    assert!(matches!(certify(&cfg, &vs, &[]), Err(Error::SmallGain(_))));

    cfg.fallback_to_relaxed = true;
    let report = certify(&cfg, &vs, &[]).unwrap();
    assert!(report.fell_back);
    assert!(report.fallback_reason.unwrap().contains("column"));
    assert_eq!(report.certificate.rule, "deterministic-finite");
}

#[test]
fn single_agent_composition_is_the_agent_bound() {
    let vs = verdicts(&toy());
    let mut s = vs[0].solution.clone().unwrap();
    s.psi = 0.01;
    s.mode = sbcert_core::certificate::Mode::StochasticSmallGain;
    for t in [0u64, 1, 10, 500] {
        let cert = certify_small_gain(std::slice::from_ref(&s), &NetworkTopology { agents: 1, edges: vec![] }, t, false).unwrap();
        let direct = risk_bound(s.gamma, s.lambda, s.psi, s.kappa, t).unwrap();
        // the composed factor is shrunk towards 1 by 1e-9 of its gap
        assert!((cert.bound - direct).abs() <= 1e-7 * direct.max(1e-12), "T={t}: {} vs {direct}", cert.bound);
    }
}

#[test]
fn finer_grid_never_lowers_maxima() {
    let cfg = toy();
    let vs = verdicts(&cfg);
    let network = build_network(&cfg, None).unwrap();
    let regions = cfg.regions().unwrap();
    let opts = |per_axis| GridOptions { per_axis, interaction_per_axis: 3, replicates: 1, mu: 0.0, seed: cfg.seed };
    for (i, v) in vs.iter().enumerate() {
        let sol = v.solution.as_ref().unwrap();
        let coarse = grid_check(sol, &regions[i], &network.agents[i], &opts(10)).unwrap();
        let fine = grid_check(sol, &regions[i], &network.agents[i], &opts(100)).unwrap();
        for kind in sol.mode.residual_kinds() {
            let (c, f) = (coarse.max_of(*kind).unwrap(), fine.max_of(*kind).unwrap());
            assert!(f >= c, "agent {i} {}: {c} -> {f}", kind.name());
        }
    }
}
