//! Risk bounds and the rules that turn per-agent certificates into a
//! network certificate.
//!
//! Small-gain composition sums the agent certificates when the column sums
//! of `-Lambda + Delta` are negative; relaxed composition adds per-agent
//! risk bounds; the deterministic rules give collision-free horizons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::certificate::{Mode, SbcSolution};
use crate::error::{invalid, Error, Result};
use crate::system::NetworkTopology;

/// Safety factor on the chosen column-sum level: `pi = (1 - 1e-9) max_i pi_i`.
pub const PI_SHRINK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainMatrices {
    /// Diagonal entries `1 - kappa_i`.
    pub lambda_hat: Vec<f64>,
    /// `delta[i][j] = rho_i / alpha_j` where agent `i` reads agent `j`.
    pub delta: Vec<Vec<f64>>,
    /// Column sums of `-Lambda + Delta`.
    pub pi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallGainCheck {
    pub gains: GainMatrices,
    pub sum_gamma: f64,
    pub sum_lambda: f64,
    pub pass: bool,
    /// Columns with `pi_j >= 0`.
    pub violating_columns: Vec<usize>,
}

impl SmallGainCheck {
    pub fn diagnostic(&self) -> String {
        let mut parts = Vec::new();
        if self.sum_lambda <= self.sum_gamma {
            parts.push(format!("sum of lambda ({}) does not exceed sum of gamma ({})", self.sum_lambda, self.sum_gamma));
        }
        for &j in &self.violating_columns {
            parts.push(format!("column {j} has pi = {} >= 0", self.gains.pi[j]));
        }
        parts.join("; ")
    }
}

/// Gain matrices on the topology's edges, or on every ordered pair when
/// `all_pairs` is set.
pub fn gain_matrices(solutions: &[SbcSolution], topology: &NetworkTopology, all_pairs: bool) -> Result<GainMatrices> {
    let m = solutions.len();
    crate::error::check_dim("agents in topology", m, topology.agents)?;
    let pairs: BTreeSet<(usize, usize)> = if all_pairs {
        (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect()
    } else {
        topology.edges.iter().map(|e| (e.reader, e.source)).collect()
    };
    let mut delta = vec![vec![0.0; m]; m];
    for &(i, j) in &pairs {
        if i == j {
            return Err(invalid(format!("self-edge on agent {i}")));
        }
        let alpha = solutions[j].alpha;
        if !(alpha > 0.0) {
            return Err(invalid(format!("agent {j} has alpha = {alpha}; the gain rho_{i}/alpha_{j} is undefined")));
        }
        delta[i][j] = solutions[i].rho / alpha;
    }
    let lambda_hat: Vec<f64> = solutions.iter().map(|s| 1.0 - s.kappa).collect();
    let pi = (0..m).map(|j| -lambda_hat[j] + (0..m).map(|i| delta[i][j]).sum::<f64>()).collect();
    Ok(GainMatrices { lambda_hat, delta, pi })
}

pub fn small_gain_check_with(solutions: &[SbcSolution], topology: &NetworkTopology, all_pairs: bool) -> Result<SmallGainCheck> {
    if solutions.is_empty() {
        return Err(invalid("no agents to compose"));
    }
    if let Some(s) = solutions.iter().find(|s| s.mode.is_relaxed()) {
        return Err(invalid(format!("agent {} was synthesized in relaxed mode", s.agent_id)));
    }
    let gains = gain_matrices(solutions, topology, all_pairs)?;
    let sum_gamma = solutions.iter().map(|s| s.gamma).sum::<f64>();
    let sum_lambda = solutions.iter().map(|s| s.lambda).sum::<f64>();
    let violating_columns: Vec<usize> = gains.pi.iter().enumerate().filter(|(_, p)| !(**p < 0.0)).map(|(j, _)| j).collect();
    let pass = sum_lambda > sum_gamma && violating_columns.is_empty();
    Ok(SmallGainCheck { gains, sum_gamma, sum_lambda, pass, violating_columns })
}

/// Topology-aware small-gain check.
pub fn small_gain_check(solutions: &[SbcSolution], topology: &NetworkTopology) -> Result<SmallGainCheck> {
    small_gain_check_with(solutions, topology, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composed {
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub kappa: f64,
    pub pi_chosen: f64,
    pub confidence: f64,
    pub confidence_void: bool,
}

fn composed_confidence(solutions: &[SbcSolution]) -> (f64, bool) {
    let void = solutions.iter().any(|s| s.confidence_void);
    let spent: f64 = solutions.iter().map(|s| s.beta1 + s.beta2).sum();
    if void {
        (0.0, true)
    } else {
        ((1.0 - spent).max(0.0), false)
    }
}

/// Sums of the agent levels and `kappa = 1 + (1 - 1e-9) max_i pi_i`.
pub fn compose(solutions: &[SbcSolution], check: &SmallGainCheck) -> Result<Composed> {
    if !check.pass {
        return Err(Error::SmallGain(check.diagnostic()));
    }
    let pi_max = check.gains.pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pi_chosen = (1.0 - PI_SHRINK) * pi_max;
    let (confidence, confidence_void) = composed_confidence(solutions);
    Ok(Composed {
        gamma: check.sum_gamma,
        lambda: check.sum_lambda,
        psi: solutions.iter().map(|s| s.psi).sum(),
        kappa: 1.0 + pi_chosen,
        pi_chosen,
        confidence,
        confidence_void,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskBranch {
    /// `lambda >= psi / (1 - kappa)`.
    Saturating,
    /// `lambda < psi / (1 - kappa)`.
    Geometric,
}

pub fn risk_branch(lambda: f64, psi: f64, kappa: f64) -> RiskBranch {
    if lambda >= psi / (1.0 - kappa) {
        RiskBranch::Saturating
    } else {
        RiskBranch::Geometric
    }
}

/// Probability bound of reaching the collision set within `T` steps from
/// the initial set, clamped to `[0, 1]`.
pub fn risk_bound(gamma: f64, lambda: f64, psi: f64, kappa: f64, horizon: u64) -> Result<f64> {
    if !(gamma >= 0.0 && lambda > gamma && lambda.is_finite()) {
        return Err(invalid(format!("risk bound needs 0 <= gamma < lambda (gamma = {gamma}, lambda = {lambda})")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(invalid(format!("kappa = {kappa} must lie in (0, 1)")));
    }
    if !(psi >= 0.0 && psi.is_finite()) {
        return Err(invalid("psi must be finite and nonnegative"));
    }
    let t = horizon as f64;
    let v = match risk_branch(lambda, psi, kappa) {
        RiskBranch::Saturating => 1.0 - (1.0 - gamma / lambda) * (t * (-psi / lambda).ln_1p()).exp(),
        RiskBranch::Geometric => {
            let kt = kappa.powf(t);
            gamma / lambda * kt + psi / ((1.0 - kappa) * lambda) * (1.0 - kt)
        }
    };
    Ok(v.clamp(0.0, 1.0))
}

/// `min(1, (gamma + (rho w_inf^2 + psi) T) / lambda)`.
pub fn relaxed_agent_risk(gamma: f64, lambda: f64, rho: f64, psi: f64, w_inf_sq: f64, horizon: u64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be positive")));
    }
    if gamma < 0.0 || rho < 0.0 || psi < 0.0 || w_inf_sq < 0.0 {
        return Err(invalid("gamma, rho, psi and w_inf^2 must be nonnegative"));
    }
    let drift = rho * w_inf_sq + psi;
    Ok(((gamma + drift * horizon as f64) / lambda).min(1.0))
}

/// `(min(1, sum delta_i), max(0, 1 - sum beta_i))`.
pub fn relaxed_compose(deltas: &[f64], betas: &[f64]) -> Result<(f64, f64)> {
    crate::error::check_dim("per-agent betas", deltas.len(), betas.len())?;
    let total = deltas.iter().sum::<f64>().min(1.0);
    let confidence = (1.0 - betas.iter().sum::<f64>()).max(0.0);
    Ok((total, confidence))
}

/// Collision-free horizon `(lambda - gamma) / (rho w_inf^2)`, infinite when
/// the interaction gain vanishes.
pub fn deterministic_horizon(gamma: f64, lambda: f64, rho: f64, w_inf_sq: f64) -> Result<f64> {
    if !(lambda > gamma) {
        return Err(invalid(format!("lambda = {lambda} must exceed gamma = {gamma}")));
    }
    let drift = rho * w_inf_sq;
    Ok(if drift == 0.0 { f64::INFINITY } else { (lambda - gamma) / drift })
}

/// `(min_i T_i, max(0, 1 - sum beta2_i))`.
pub fn deterministic_compose(horizons: &[f64], betas2: &[f64]) -> Result<(f64, f64)> {
    if horizons.is_empty() {
        return Err(invalid("no horizons to compose"));
    }
    crate::error::check_dim("per-agent betas", horizons.len(), betas2.len())?;
    let t = horizons.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((t, (1.0 - betas2.iter().sum::<f64>()).max(0.0)))
}

/// Network-level result of any composition rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCertificate {
    pub mode: Mode,
    pub rule: String,
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub kappa: Option<f64>,
    pub pi_chosen: Option<f64>,
    /// Horizon the bound refers to; `"inf"` for infinite-horizon statements.
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub horizon: f64,
    pub bound: f64,
    pub branch: Option<RiskBranch>,
    pub confidence: f64,
    pub confidence_void: bool,
    pub gains: Option<GainMatrices>,
    pub per_agent_delta: Option<Vec<f64>>,
    #[serde(default, with = "crate::serde_ext::vec_f64_or_inf")]
    pub per_agent_horizon: Vec<f64>,
    pub per_agent: Vec<SbcSolution>,
    pub notes: Vec<String>,
}

impl RiskCertificate {
    fn base(mode: Mode, rule: &str, solutions: &[SbcSolution]) -> Self {
        let (confidence, confidence_void) = composed_confidence(solutions);
        RiskCertificate {
            mode,
            rule: rule.to_string(),
            gamma: solutions.iter().map(|s| s.gamma).sum(),
            lambda: solutions.iter().map(|s| s.lambda).sum(),
            psi: solutions.iter().map(|s| s.psi).sum(),
            kappa: None,
            pi_chosen: None,
            horizon: 0.0,
            bound: 1.0,
            branch: None,
            confidence,
            confidence_void,
            gains: None,
            per_agent_delta: None,
            per_agent_horizon: Vec::new(),
            per_agent: solutions.to_vec(),
            notes: Vec::new(),
        }
    }
}

/// Small-gain certificate with the risk bound over `horizon` steps.
pub fn certify_small_gain(solutions: &[SbcSolution], topology: &NetworkTopology, horizon: u64, all_pairs: bool) -> Result<RiskCertificate> {
    let check = small_gain_check_with(solutions, topology, all_pairs)?;
    let c = compose(solutions, &check)?;
    let mut cert = RiskCertificate::base(Mode::StochasticSmallGain, "small-gain", solutions);
    cert.bound = risk_bound(c.gamma, c.lambda, c.psi, c.kappa, horizon)?;
    cert.branch = Some(risk_branch(c.lambda, c.psi, c.kappa));
    cert.kappa = Some(c.kappa);
    cert.pi_chosen = Some(c.pi_chosen);
    cert.horizon = horizon as f64;
    cert.gains = Some(check.gains);
    if cert.branch == Some(RiskBranch::Saturating) {
        cert.notes.push("bound does not depend on the composed contraction factor on this branch".into());
    }
    Ok(cert)
}

/// Union-bound certificate. Agents synthesized with a contraction factor
/// below 1 also satisfy the relaxed decrease condition, so small-gain
/// solutions are accepted too.
pub fn certify_relaxed(solutions: &[SbcSolution], horizon: u64) -> Result<RiskCertificate> {
    if solutions.is_empty() {
        return Err(invalid("no agents to compose"));
    }
    let deltas = solutions
        .iter()
        .map(|s| relaxed_agent_risk(s.gamma, s.lambda, s.rho, s.psi, s.w_inf_sq, horizon))
        .collect::<Result<Vec<_>>>()?;
    let betas: Vec<f64> = solutions.iter().map(|s| s.beta1 + s.beta2).collect();
    let (total, confidence) = relaxed_compose(&deltas, &betas)?;
    let mode = if solutions.iter().all(|s| s.mode.is_deterministic()) { Mode::DeterministicRelaxed } else { Mode::StochasticRelaxed };
    let mut cert = RiskCertificate::base(mode, "relaxed", solutions);
    cert.bound = total;
    cert.horizon = horizon as f64;
    if !cert.confidence_void {
        cert.confidence = confidence;
    }
    for (s, d) in solutions.iter().zip(&deltas) {
        if *d >= 1.0 {
            cert.notes.push(format!("agent {}: per-agent bound is vacuous at this horizon", s.agent_id));
        }
    }
    cert.per_agent_delta = Some(deltas);
    Ok(cert)
}

/// Finite-horizon zero-collision certificate for deterministic agents.
pub fn certify_deterministic_relaxed(solutions: &[SbcSolution]) -> Result<RiskCertificate> {
    if solutions.is_empty() {
        return Err(invalid("no agents to compose"));
    }
    let horizons = solutions
        .iter()
        .map(|s| deterministic_horizon(s.gamma, s.lambda, s.rho, s.w_inf_sq))
        .collect::<Result<Vec<_>>>()?;
    let betas: Vec<f64> = solutions.iter().map(|s| s.beta2).collect();
    let (t, confidence) = deterministic_compose(&horizons, &betas)?;
    let mut cert = RiskCertificate::base(Mode::DeterministicRelaxed, "deterministic-finite", solutions);
    cert.bound = 0.0;
    cert.horizon = t;
    if !cert.confidence_void {
        cert.confidence = confidence;
    }
    cert.per_agent_horizon = horizons;
    Ok(cert)
}

/// Infinite-horizon zero-collision certificate for deterministic agents
/// under the small-gain condition.
pub fn deterministic_infinite(solutions: &[SbcSolution], topology: &NetworkTopology, all_pairs: bool) -> Result<RiskCertificate> {
    if let Some(s) = solutions.iter().find(|s| s.mode != Mode::DeterministicSmallGain) {
        return Err(invalid(format!("agent {} is not a deterministic small-gain solution", s.agent_id)));
    }
    let check = small_gain_check_with(solutions, topology, all_pairs)?;
    let c = compose(solutions, &check)?;
    let mut cert = RiskCertificate::base(Mode::DeterministicSmallGain, "deterministic-infinite", solutions);
    cert.kappa = Some(c.kappa);
    cert.pi_chosen = Some(c.pi_chosen);
    cert.horizon = f64::INFINITY;
    cert.bound = 0.0;
    cert.gains = Some(check.gains);
    Ok(cert)
}
