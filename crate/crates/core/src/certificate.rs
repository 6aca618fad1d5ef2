//! Polynomial certificate templates and the constraint residuals of the
//! scenario programs.
//!
//! A certificate is `B(q, x) = sum_j q_j x^{e_j}` over a fixed monomial
//! basis. For a fixed contraction factor every residual is affine in the
//! decision tuple `(gamma, lambda, psi, alpha, rho, q)`; [`residual_forms`]
//! returns those affine forms (what the linear program consumes) and
//! [`residuals`] evaluates the same conditions directly from their
//! definitions, which the scenario builder uses as a cross-check.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::sampling::SamplePoint;

/// Strict positivity of `gamma` and `lambda` is enforced as `>= STRICT_FLOOR`.
pub const STRICT_FLOOR: f64 = 1e-9;

/// Default margin of the relaxed level-gap condition.
pub const DEFAULT_VARRHO: f64 = -1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateTemplate {
    /// Exponent vector of every monomial.
    pub basis: Vec<Vec<u32>>,
    /// Coefficient box `[lo_j, hi_j]` per monomial.
    pub bounds: Vec<[f64; 2]>,
}

/// Symmetric coefficient matrix over "half" monomials such that
/// `B(x) = z(x)^T P z(x)`; entry `(i, k, j, w)` means `P[i][k] += w q_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramStructure {
    pub half_monomials: Vec<Vec<u32>>,
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl CertificateTemplate {
    pub fn new(basis: Vec<Vec<u32>>, bounds: Vec<[f64; 2]>) -> Result<Self> {
        let t = CertificateTemplate { basis, bounds };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis.is_empty() {
            return Err(invalid("template needs at least one monomial"));
        }
        check_dim("coefficient bounds", self.basis.len(), self.bounds.len())?;
        let n = self.basis[0].len();
        if n == 0 || self.basis.iter().any(|e| e.len() != n) {
            return Err(invalid("all exponent vectors must share one positive length"));
        }
        for (j, [lo, hi]) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(invalid(format!("coefficient {j} has an empty box [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.basis[0].len()
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|e| e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product())
            .collect()
    }

    pub fn evaluate(&self, q: &[f64], x: &[f64]) -> f64 {
        self.features(x).iter().zip(q).map(|(f, c)| f * c).sum()
    }

    /// Splits every monomial `e` into `u + v` with `u`, `v` as equal as
    /// possible; odd coordinates alternate their extra unit between the two
    /// halves so that, e.g., `x0 x1` becomes the off-diagonal pair `(x0, x1)`.
    pub fn gram_structure(&self) -> GramStructure {
        let mut index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        let mut half_monomials = Vec::new();
        let mut intern = |m: Vec<u32>, half: &mut Vec<Vec<u32>>| -> usize {
            *index.entry(m.clone()).or_insert_with(|| {
                half.push(m);
                half.len() - 1
            })
        };
        let mut entries = Vec::new();
        for (j, e) in self.basis.iter().enumerate() {
            let mut u = Vec::with_capacity(e.len());
            let mut v = Vec::with_capacity(e.len());
            let mut give_u = true;
            for &k in e {
                let (mut a, mut b) = (k / 2, k / 2);
                if k % 2 == 1 {
                    if give_u {
                        a += 1;
                    } else {
                        b += 1;
                    }
                    give_u = !give_u;
                }
                u.push(a);
                v.push(b);
            }
            let iu = intern(u, &mut half_monomials);
            let iv = intern(v, &mut half_monomials);
            if iu == iv {
                entries.push((iu, iu, j, 1.0));
            } else {
                entries.push((iu, iv, j, 0.5));
                entries.push((iv, iu, j, 0.5));
            }
        }
        GramStructure { half_monomials, entries }
    }

    /// Largest Gerschgorin row sum `max_i sum_k |P_ik|` over all
    /// coefficients in their boxes; bounds the spectral radius of `P`.
    pub fn gerschgorin_bound(&self) -> f64 {
        let g = self.gram_structure();
        let mut rows = vec![0.0; g.half_monomials.len()];
        for &(i, _, j, w) in &g.entries {
            let [lo, hi] = self.bounds[j];
            rows[i] += w * lo.abs().max(hi.abs());
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn validate_p_max(&self, p_max: f64) -> Result<()> {
        let g = self.gerschgorin_bound();
        if g > p_max * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "coefficient boxes allow a Gerschgorin bound of {g}, above the declared P_max = {p_max}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "sg")]
    StochasticSmallGain,
    #[serde(rename = "relaxed")]
    StochasticRelaxed,
    #[serde(rename = "det-sg")]
    DeterministicSmallGain,
    #[serde(rename = "det-relaxed")]
    DeterministicRelaxed,
}

impl Mode {
    pub fn is_deterministic(self) -> bool {
        matches!(self, Mode::DeterministicSmallGain | Mode::DeterministicRelaxed)
    }

    pub fn is_relaxed(self) -> bool {
        matches!(self, Mode::StochasticRelaxed | Mode::DeterministicRelaxed)
    }

    pub fn uses_psi(self) -> bool {
        !self.is_deterministic()
    }

    pub fn uses_alpha(self) -> bool {
        !self.is_relaxed()
    }

    pub fn relaxed_counterpart(self) -> Mode {
        if self.is_deterministic() {
            Mode::DeterministicRelaxed
        } else {
            Mode::StochasticRelaxed
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::StochasticSmallGain => "sg",
            Mode::StochasticRelaxed => "relaxed",
            Mode::DeterministicSmallGain => "det-sg",
            Mode::DeterministicRelaxed => "det-relaxed",
        }
    }

    /// Conditions checked for this mode, in report order.
    pub fn residual_kinds(self) -> &'static [ResidualKind] {
        use ResidualKind::*;
        match self {
            Mode::StochasticSmallGain => &[G1, G2, G3, G4, G5],
            Mode::StochasticRelaxed => &[G1, G3, G4, G5, G6],
            Mode::DeterministicSmallGain => &[G2, G3, G4, G5],
            Mode::DeterministicRelaxed => &[G3, G4, G5, G6],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sg" => Ok(Mode::StochasticSmallGain),
            "relaxed" => Ok(Mode::StochasticRelaxed),
            "det-sg" => Ok(Mode::DeterministicSmallGain),
            "det-relaxed" => Ok(Mode::DeterministicRelaxed),
            _ => Err(invalid(format!("unknown mode '{s}' (expected sg, relaxed, det-sg or det-relaxed)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResidualKind {
    /// Nonnegativity `-B`.
    G1,
    /// Radial growth `alpha ||x||^2 - B`.
    G2,
    /// Initial level `B - gamma` on the initial set.
    G3,
    /// Collision level `lambda - B` on the collision set.
    G4,
    /// Expected decrease.
    G5,
    /// Level gap.
    G6,
}

impl ResidualKind {
    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::G1 => "g1",
            ResidualKind::G2 => "g2",
            ResidualKind::G3 => "g3",
            ResidualKind::G4 => "g4",
            ResidualKind::G5 => "g5",
            ResidualKind::G6 => "g6",
        }
    }
}

/// The scalar parameters in the order used by affine forms; coefficients
/// `q_1..q_r` follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Gamma,
    Lambda,
    Psi,
    Alpha,
    Rho,
}

pub const PARAMS: [Param; 5] = [Param::Gamma, Param::Lambda, Param::Psi, Param::Alpha, Param::Rho];

impl Param {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::Gamma => "gamma",
            Param::Lambda => "lambda",
            Param::Psi => "psi",
            Param::Alpha => "alpha",
            Param::Rho => "rho",
        }
    }
}

/// Candidate `(gamma, lambda, psi, alpha, rho, q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTuple {
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub alpha: f64,
    pub rho: f64,
    pub q: Vec<f64>,
}

impl DecisionTuple {
    pub fn zeros(r: usize) -> Self {
        DecisionTuple { gamma: 0.0, lambda: 0.0, psi: 0.0, alpha: 0.0, rho: 0.0, q: vec![0.0; r] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.gamma, self.lambda, self.psi, self.alpha, self.rho];
        v.extend_from_slice(&self.q);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        DecisionTuple { gamma: v[0], lambda: v[1], psi: v[2], alpha: v[3], rho: v[4], q: v[5..].to_vec() }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Gamma => self.gamma,
            Param::Lambda => self.lambda,
            Param::Psi => self.psi,
            Param::Alpha => self.alpha,
            Param::Rho => self.rho,
        }
    }
}

/// Everything besides the decision tuple that a residual depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualContext {
    pub mode: Mode,
    pub kappa: f64,
    /// Empirical-mean slack; ignored by the deterministic modes.
    pub mu: f64,
    pub varrho: f64,
    /// Horizon entering the deterministic level-gap condition.
    pub horizon: f64,
    /// `max ||w||^2` over the interaction set.
    pub w_inf_sq: f64,
}

impl ResidualContext {
    pub fn new(mode: Mode, kappa: f64, mu: f64) -> Self {
        ResidualContext { mode, kappa, mu, varrho: DEFAULT_VARRHO, horizon: 0.0, w_inf_sq: 0.0 }
    }

    /// Contraction factor actually used: relaxed modes fix it to 1.
    pub fn effective_kappa(&self) -> f64 {
        if self.mode.is_relaxed() {
            1.0
        } else {
            self.kappa
        }
    }

    fn effective_mu(&self) -> f64 {
        if self.mode.is_deterministic() {
            0.0
        } else {
            self.mu
        }
    }
}

/// `coeffs . theta + constant` with `theta` laid out as [`DecisionTuple::to_vec`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    fn zero(r: usize) -> Self {
        AffineForm { coeffs: vec![0.0; PARAMS.len() + r], constant: 0.0 }
    }

    fn set_q(&mut self, v: impl IntoIterator<Item = f64>) {
        for (c, x) in self.coeffs[PARAMS.len()..].iter_mut().zip(v) {
            *c = x;
        }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.coeffs.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + self.constant
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn successor_mean_features(template: &CertificateTemplate, point: &SamplePoint) -> Vec<f64> {
    let mut acc = vec![0.0; template.len()];
    for s in &point.successors {
        for (a, f) in acc.iter_mut().zip(template.features(s)) {
            *a += f;
        }
    }
    let k = point.successors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

/// Affine forms of the sample-dependent residuals that are active at
/// `point`. Indicator conditions appear only when the point lies in their
/// region; the level-gap condition is sample-free (see [`level_gap_form`]).
pub fn residual_forms(template: &CertificateTemplate, point: &SamplePoint, ctx: &ResidualContext) -> Vec<(ResidualKind, AffineForm)> {
    let r = template.len();
    let phi = template.features(&point.x_hat);
    let mut out = Vec::with_capacity(5);
    for &kind in ctx.mode.residual_kinds() {
        let mut f = AffineForm::zero(r);
        match kind {
            ResidualKind::G1 => f.set_q(phi.iter().map(|v| -v)),
            ResidualKind::G2 => {
                f.coeffs[Param::Alpha.index()] = norm_sq(&point.x_hat);
                f.set_q(phi.iter().map(|v| -v));
            }
            ResidualKind::G3 => {
                if !point.in_x0 {
                    continue;
                }
                f.coeffs[Param::Gamma.index()] = -1.0;
                f.set_q(phi.iter().copied());
            }
            ResidualKind::G4 => {
                if !point.in_xc {
                    continue;
                }
                f.coeffs[Param::Lambda.index()] = 1.0;
                f.set_q(phi.iter().map(|v| -v));
            }
            ResidualKind::G5 => {
                let kappa = ctx.effective_kappa();
                let mean = successor_mean_features(template, point);
                f.set_q(mean.iter().zip(&phi).map(|(m, p)| m - kappa * p));
                f.coeffs[Param::Rho.index()] = -norm_sq(&point.w_hat);
                if ctx.mode.uses_psi() {
                    f.coeffs[Param::Psi.index()] = -1.0;
                }
                f.constant = ctx.effective_mu();
            }
            ResidualKind::G6 => continue,
        }
        out.push((kind, f));
    }
    out
}

/// The level-gap condition of the relaxed modes, or `None` otherwise.
pub fn level_gap_form(r: usize, ctx: &ResidualContext) -> Option<AffineForm> {
    if !ctx.mode.is_relaxed() {
        return None;
    }
    let mut f = AffineForm::zero(r);
    f.coeffs[Param::Gamma.index()] = 1.0;
    f.coeffs[Param::Lambda.index()] = -1.0;
    if ctx.mode.is_deterministic() {
        f.coeffs[Param::Rho.index()] = ctx.w_inf_sq * ctx.horizon;
    }
    f.constant = -ctx.varrho;
    Some(f)
}

/// Residuals of the mode evaluated straight from their definitions, one per
/// entry of [`Mode::residual_kinds`]; indicator conditions read 0 outside
/// their region.
pub fn residuals(template: &CertificateTemplate, point: &SamplePoint, theta: &DecisionTuple, ctx: &ResidualContext) -> Vec<(ResidualKind, f64)> {
    let b = |x: &[f64]| template.evaluate(&theta.q, x);
    let bx = b(&point.x_hat);
    if !ctx.mode.is_deterministic() && point.successors.len() == 1 && ctx.mu > 0.0 {
        log::debug!("stochastic residual evaluated from a single successor");
    }
    ctx.mode
        .residual_kinds()
        .iter()
        .map(|&kind| {
            let v = match kind {
                ResidualKind::G1 => -bx,
                ResidualKind::G2 => theta.alpha * norm_sq(&point.x_hat) - bx,
                ResidualKind::G3 => {
                    if point.in_x0 {
                        bx - theta.gamma
                    } else {
                        0.0
                    }
                }
                ResidualKind::G4 => {
                    if point.in_xc {
                        theta.lambda - bx
                    } else {
                        0.0
                    }
                }
                ResidualKind::G5 => {
                    let mean = point.successors.iter().map(|s| b(s)).sum::<f64>() / point.successors.len() as f64;
                    let psi = if ctx.mode.uses_psi() { theta.psi } else { 0.0 };
                    mean - ctx.effective_kappa() * bx - theta.rho * norm_sq(&point.w_hat) - psi + ctx.effective_mu()
                }
                ResidualKind::G6 => {
                    let drift = if ctx.mode.is_deterministic() { theta.rho * ctx.w_inf_sq * ctx.horizon } else { 0.0 };
                    theta.gamma + drift - theta.lambda - ctx.varrho
                }
            };
            (kind, v)
        })
        .collect()
}

/// A synthesized sub-barrier certificate together with its accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcSolution {
    pub agent_id: String,
    pub mode: Mode,
    pub template: CertificateTemplate,
    pub q: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub alpha: f64,
    pub rho: f64,
    pub kappa: f64,
    pub eta_star: f64,
    pub epsilon1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub confidence: f64,
    /// Set when the dataset was smaller than the required sample count, so
    /// no confidence statement is attached.
    #[serde(default)]
    pub confidence_void: bool,
    /// `max ||w||^2` over the agent's interaction set.
    pub w_inf_sq: f64,
}

impl SbcSolution {
    pub fn tuple(&self) -> DecisionTuple {
        DecisionTuple {
            gamma: self.gamma,
            lambda: self.lambda,
            psi: self.psi,
            alpha: self.alpha,
            rho: self.rho,
            q: self.q.clone(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.template.evaluate(&self.q, x)
    }
}
