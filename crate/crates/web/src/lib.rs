//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string. The
//! `*_json` functions are the same operations without the bindgen
//! wrapper, so they can be tested natively.

use sbcert_core::complexity::{epsilon2, min_samples};
use sbcert_core::composition::{risk_bound, risk_branch};
use sbcert_core::config::{AgentSpec, PipelineConfig};
use sbcert_core::pipeline::{build_network, certify, draw_datasets, sample_size, synthesize_all};
use sbcert_core::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const TOY_CONFIG: &str = include_str!("../../../configs/toy_deterministic.json");

/// Bound on the probability of reaching the collision level within `t`
/// steps, for `t = 0..=horizon` in at most `points` samples.
pub fn risk_curve_json(gamma: f64, lambda: f64, psi: f64, kappa: f64, horizon: u32, points: u32) -> Result<Value> {
    let points = points.clamp(2, 2000).min(horizon + 1).max(1);
    let mut t = Vec::new();
    let mut bound = Vec::new();
    for k in 0..points {
        let step = if points == 1 { 0 } else { (k as u64 * horizon as u64) / (points as u64 - 1) };
        if t.last() == Some(&step) {
            continue;
        }
        t.push(step);
        bound.push(risk_bound(gamma, lambda, psi, kappa, step)?);
    }
    Ok(json!({ "t": t, "bound": bound, "branch": risk_branch(lambda, psi, kappa) }))
}

/// Scenario sample count for `m` contraction factors sharing one `L_g`.
pub fn sample_size_json(epsilon1: f64, beta2: f64, l_g: f64, exponent: u32, c: u32, m: u32) -> Result<Value> {
    let eps2 = epsilon2(epsilon1, l_g, exponent)?;
    let n = min_samples(&vec![eps2; m.max(1) as usize], beta2, c as usize)?;
    Ok(json!({ "epsilon2": eps2, "n": n }))
}

/// Synthesizes certificates for the three-agent scalar chain
/// `x+ = a x + d w` and composes them.
pub fn toy_certificate_json(a: f64, d: f64, kappa: f64, samples: u32, seed: u64, points: u32) -> Result<Value> {
    let mut cfg = PipelineConfig::from_json(TOY_CONFIG)?;
    if let AgentSpec::Linear { a: ref mut am, d: ref mut dm, .. } = cfg.agents {
        *am = vec![vec![a]];
        *dm = vec![vec![d]];
    }
    cfg.kappa_grid = vec![kappa];
    cfg.seed = seed;
    cfg.samples_override = Some(samples as u64);
    cfg.validate()?;

    let network = build_network(&cfg, None)?;
    let plan = sample_size(&cfg)?;
    let data = draw_datasets(&cfg, &network, &plan)?;
    let verdicts = synthesize_all(&cfg, &data, &plan)?;
    let region = cfg.regions()?.remove(0);
    let (lo, hi) = (region.state.lo()[0], region.state.hi()[0]);
    let n = points.max(2) as usize;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();

    let agents: Vec<Value> = verdicts
        .iter()
        .map(|v| match &v.solution {
            Some(s) => json!({
                "agent": v.agent_id,
                "feasible": v.feasible_for_rop,
                "eta_star": v.eta_star,
                "q": s.q,
                "gamma": s.gamma,
                "lambda": s.lambda,
                "barrier": xs.iter().map(|&x| s.template.evaluate(&s.q, &[x])).collect::<Vec<_>>(),
            }),
            None => json!({ "agent": v.agent_id, "feasible": false, "eta_star": v.eta_star }),
        })
        .collect();
    let certificate = match certify(&cfg, &verdicts, &[]) {
        Ok(r) => json!({ "rule": r.certificate.rule, "bound": r.certificate.bound, "horizon": r.certificate.horizon, "fell_back": r.fell_back }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    Ok(json!({
        "required_samples": plan.required(0),
        "samples": samples,
        "x": xs,
        "initial": [region.initial.lo()[0], region.initial.hi()[0]],
        "collision": [region.collision.lo()[0], region.collision.hi()[0]],
        "agents": agents,
        "certificate": certificate,
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn risk_curve(gamma: f64, lambda: f64, psi: f64, kappa: f64, horizon: u32, points: u32) -> std::result::Result<String, JsValue> {
    to_js(risk_curve_json(gamma, lambda, psi, kappa, horizon, points))
}

#[wasm_bindgen]
pub fn sample_size_for(epsilon1: f64, beta2: f64, l_g: f64, exponent: u32, c: u32, m: u32) -> std::result::Result<String, JsValue> {
    to_js(sample_size_json(epsilon1, beta2, l_g, exponent, c, m))
}

#[wasm_bindgen]
pub fn toy_certificate(a: f64, d: f64, kappa: f64, samples: u32, seed: u32, points: u32) -> std::result::Result<String, JsValue> {
    to_js(toy_certificate_json(a, d, kappa, samples, seed as u64, points))
}
