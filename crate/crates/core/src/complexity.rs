//! A-priori sample sizes and Lipschitz constants.
//!
//! Everything here is a pure function of user budgets: the empirical batch
//! size `N_hat`, the scenario sample count `N` (minimal `N` whose binomial
//! tail drops below `beta2`), the map `eps1 -> eps2`, and the Lipschitz
//! constant `L_g` of the constraint functions for linear and nonlinear
//! agents.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBudget {
    pub beta1: f64,
    pub beta2: f64,
    /// Allowed error of the empirical mean.
    pub mu: f64,
    pub epsilon1: f64,
    /// Upper bound on the variance of the certificate at a successor.
    pub variance_bound: f64,
    /// Number of free decision variables of the scenario program.
    pub c: usize,
    /// Cardinality of the contraction-factor grid.
    pub m: usize,
    /// Dimension exponent in `eps2 = (eps1 / L_g)^exponent`.
    pub exponent: u32,
}

impl ConfidenceBudget {
    pub fn validate(&self, deterministic: bool) -> Result<()> {
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !deterministic && !(self.beta1 > 0.0 && self.beta1 <= 1.0) {
            return Err(invalid(format!("beta1 = {} must lie in (0, 1]", self.beta1)));
        }
        if !(self.beta2 > 0.0 && self.beta2 <= 1.0) {
            return Err(invalid(format!("beta2 = {} must lie in (0, 1]", self.beta2)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(invalid(format!("mu = {} must be finite and nonnegative", self.mu)));
        }
        if !in_unit(self.epsilon1) {
            return Err(invalid(format!("epsilon1 = {} must lie in [0, 1]", self.epsilon1)));
        }
        if !deterministic && !(self.variance_bound > 0.0 && self.variance_bound.is_finite()) {
            return Err(invalid("variance bound Q must be positive"));
        }
        if self.c == 0 || self.m == 0 || self.exponent == 0 {
            return Err(invalid("c, m and the exponent must be positive"));
        }
        Ok(())
    }

    /// Per-agent confidence `1 - beta1 - beta2` (`1 - beta2` without noise).
    pub fn confidence(&self, deterministic: bool) -> f64 {
        let b1 = if deterministic { 0.0 } else { self.beta1 };
        (1.0 - b1 - self.beta2).max(0.0)
    }
}

/// `ceil(Q / (beta1 mu^2))`.
pub fn empirical_batch_size(variance_bound: f64, beta1: f64, mu: f64) -> Result<usize> {
    if !(variance_bound > 0.0) {
        return Err(invalid("variance bound Q must be positive"));
    }
    if !(beta1 > 0.0 && beta1 <= 1.0) {
        return Err(invalid("beta1 must lie in (0, 1]"));
    }
    if !(mu > 0.0) {
        return Err(invalid("mu = 0 requires an infinite empirical batch"));
    }
    let v = (variance_bound / (beta1 * mu * mu)).ceil();
    if !v.is_finite() || v > usize::MAX as f64 {
        return Err(invalid("empirical batch size overflows"));
    }
    Ok((v as usize).max(1))
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_eps(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(invalid("epsilon list is empty"));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(invalid(format!("epsilon {e} must lie in (0, 1)")));
    }
    Ok(())
}

/// Natural log of [`binomial_tail`].
///
/// Terms are built with the exact ratio recurrence
/// `t_j = t_{j-1} (N - j + 1) / j * eps / (1 - eps)` in log space, then
/// combined by log-sum-exp with compensated summation.
pub fn log_binomial_tail(n: u64, eps: &[f64], c: usize) -> Result<f64> {
    check_eps(eps)?;
    if c == 0 {
        return Err(invalid("c must be positive"));
    }
    Ok(log_tail_unchecked(n, eps, c))
}

/// Also accepts `eps = 1`, whose only surviving term is `j = N` (present
/// while `N < c`).
fn log_tail_unchecked(n: u64, eps: &[f64], c: usize) -> f64 {
    let nf = n as f64;
    let jmax = (c as u64 - 1).min(n);
    let mut logs = Vec::with_capacity(eps.len() * (jmax as usize + 1));
    for &e in eps {
        if e >= 1.0 {
            if n < c as u64 {
                logs.push(0.0);
            }
            continue;
        }
        let (le, l1e) = (e.ln(), (-e).ln_1p());
        let mut lt = nf * l1e;
        logs.push(lt);
        for j in 1..=jmax {
            let jf = j as f64;
            lt += (nf - jf + 1.0).ln() - jf.ln() + le - l1e;
            logs.push(lt);
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let mut acc = CompensatedSum::default();
    for l in &logs {
        acc.add((l - top).exp());
    }
    top + acc.value().ln()
}

/// `sum_k sum_{j<c} C(N, j) eps_k^j (1 - eps_k)^(N - j)`.
pub fn binomial_tail(n: u64, eps: &[f64], c: usize) -> Result<f64> {
    Ok(log_binomial_tail(n, eps, c)?.exp())
}

/// Minimal `N` with `binomial_tail(N, eps, c) <= beta2`, by galloping and
/// bisection over the nonincreasing tail. Comparisons are made on logs.
pub fn min_samples(eps: &[f64], beta2: f64, c: usize) -> Result<u64> {
    check_eps(eps)?;
    min_samples_unchecked(eps, beta2, c)
}

fn min_samples_unchecked(eps: &[f64], beta2: f64, c: usize) -> Result<u64> {
    if !(beta2 > 0.0) || beta2.is_nan() {
        return Err(invalid("beta2 must be positive"));
    }
    if c == 0 {
        return Err(invalid("c must be positive"));
    }
    let target = beta2.ln();
    let ok = |n: u64| -> Result<bool> { Ok(log_tail_unchecked(n, eps, c) <= target) };
    if ok(0)? {
        return Ok(0);
    }
    let (mut lo, mut hi) = (0u64, 1u64);
    while !ok(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).filter(|h| *h < 1 << 62).ok_or_else(|| invalid("sample size overflows"))?;
    }
    // invariant: tail(lo) > beta2 >= tail(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `(eps1 / L_g)^exponent`.
pub fn epsilon2(epsilon1: f64, l_g: f64, exponent: u32) -> Result<f64> {
    if !(l_g > 0.0 && l_g.is_finite()) {
        return Err(invalid(format!("L_g = {l_g} must be positive and finite")));
    }
    if !(epsilon1 >= 0.0) {
        return Err(invalid("epsilon1 must be nonnegative"));
    }
    if epsilon1 > l_g {
        return Err(invalid(format!("epsilon1 = {epsilon1} exceeds L_g = {l_g}")));
    }
    if exponent == 0 {
        return Err(invalid("exponent must be positive"));
    }
    Ok((epsilon1 / l_g).powi(exponent as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum DynamicsBounds {
    /// Frobenius-norm bounds on the state and interaction matrices.
    /// `offset_norm` bounds the affine term `||b||`; zero recovers the
    /// purely linear form.
    Linear {
        l_a: f64,
        l_d: f64,
        #[serde(default)]
        offset_norm: f64,
    },
    /// `||f|| <= l_f`, and `f` is `l_x`-Lipschitz in `x`, `l_w`-Lipschitz in `w`.
    Nonlinear { l_f: f64, l_x: f64, l_w: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBounds {
    pub dynamics: DynamicsBounds,
    /// Bound on the largest eigenvalue of the certificate's coefficient matrix.
    pub p_max: f64,
    pub l_alpha: f64,
    pub l_rho: f64,
    /// Bound on `||x||` over the state set.
    pub s: f64,
    /// Bound on `||w||` over the interaction set.
    pub s_prime: f64,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBreakdown {
    /// Shared slope of the initial/collision/nonnegativity conditions.
    pub level_sets: f64,
    pub g5_x: f64,
    pub g5_w: f64,
    pub l_g: f64,
}

impl LipschitzBounds {
    pub fn validate(&self) -> Result<()> {
        let mut vals = vec![self.p_max, self.l_alpha, self.l_rho, self.s, self.s_prime];
        match self.dynamics {
            DynamicsBounds::Linear { l_a, l_d, offset_norm } => vals.extend([l_a, l_d, offset_norm]),
            DynamicsBounds::Nonlinear { l_f, l_x, l_w } => vals.extend([l_f, l_x, l_w]),
        }
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("Lipschitz bounds must be finite and nonnegative"));
        }
        // kappa = 1 is admitted for the relaxed programs
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(invalid(format!("kappa = {} must lie in (0, 1]", self.kappa)));
        }
        Ok(())
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        LipschitzBounds { kappa, ..self.clone() }
    }

    pub fn breakdown(&self) -> Result<LipschitzBreakdown> {
        self.validate()?;
        let (p, s, sp) = (self.p_max, self.s, self.s_prime);
        let level_sets = 2.0 * s * (p + self.l_alpha);
        let (g5_x, g5_w) = match self.dynamics {
            DynamicsBounds::Linear { l_a, l_d, offset_norm } => {
                let reach = l_a * s + l_d * sp + offset_norm;
                let gx = 2.0 * p * (l_a * reach + self.kappa * s);
                let gw = 2.0 * p * l_d * reach + 2.0 * self.l_rho * sp;
                (gx, gw)
            }
            DynamicsBounds::Nonlinear { l_f, l_x, l_w } => {
                let gx = 2.0 * p * (l_f * l_x + self.kappa * s);
                let gw = 2.0 * p * l_f * l_w + 2.0 * self.l_rho * sp;
                (gx, gw)
            }
        };
        let l_g = level_sets.max(g5_x.hypot(g5_w));
        Ok(LipschitzBreakdown { level_sets, g5_x, g5_w, l_g })
    }

    pub fn l_g(&self) -> Result<f64> {
        Ok(self.breakdown()?.l_g)
    }
}

/// `L_g` for a linear agent; rejects nonlinear bounds.
pub fn lipschitz_linear(b: &LipschitzBounds) -> Result<f64> {
    match b.dynamics {
        DynamicsBounds::Linear { .. } => b.l_g(),
        DynamicsBounds::Nonlinear { .. } => Err(invalid("expected linear dynamics bounds")),
    }
}

/// `L_g` for a nonlinear agent; rejects linear bounds.
pub fn lipschitz_nonlinear(b: &LipschitzBounds) -> Result<f64> {
    match b.dynamics {
        DynamicsBounds::Nonlinear { .. } => b.l_g(),
        DynamicsBounds::Linear { .. } => Err(invalid("expected nonlinear dynamics bounds")),
    }
}

/// How `L_g` is attached to the contraction-factor grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaPolicy {
    /// One `L_g` for the whole grid, evaluated at the largest factor.
    #[default]
    MaxOverGrid,
    /// A separate `L_g` (hence `eps2`) per grid value.
    PerKappa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_hat: usize,
    pub kappa_grid: Vec<f64>,
    pub l_g: Vec<f64>,
    pub epsilon2: Vec<f64>,
    pub n: u64,
    pub c: usize,
}

/// Steps 1 to 3 of the construction: `N_hat`, `eps2` per grid value and `N`.
///
/// `l_g_override` replaces the computed constant (useful when the
/// dynamics bounds are not available but `L_g` is).
pub fn sample_plan(
    budget: &ConfidenceBudget,
    bounds: Option<&LipschitzBounds>,
    kappa_grid: &[f64],
    policy: KappaPolicy,
    l_g_override: Option<f64>,
    deterministic: bool,
) -> Result<SamplePlan> {
    budget.validate(deterministic)?;
    if kappa_grid.len() != budget.m {
        return Err(invalid(format!("kappa grid has {} values but m = {}", kappa_grid.len(), budget.m)));
    }
    let n_hat = if deterministic { 1 } else { empirical_batch_size(budget.variance_bound, budget.beta1, budget.mu)? };
    let l_g: Vec<f64> = match (l_g_override, bounds) {
        (Some(l), _) => vec![l; kappa_grid.len()],
        (None, Some(b)) => match policy {
            KappaPolicy::MaxOverGrid => {
                let kmax = kappa_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                vec![b.with_kappa(kmax).l_g()?; kappa_grid.len()]
            }
            KappaPolicy::PerKappa => kappa_grid.iter().map(|&k| b.with_kappa(k).l_g()).collect::<Result<_>>()?,
        },
        (None, None) => return Err(invalid("either Lipschitz bounds or an explicit L_g is required")),
    };
    let eps2 = l_g.iter().map(|&l| epsilon2(budget.epsilon1, l, budget.exponent)).collect::<Result<Vec<_>>>()?;
    if eps2.iter().any(|&e| e <= 0.0) {
        return Err(invalid("epsilon1 = 0 needs infinitely many samples"));
    }
    let n = min_samples_unchecked(&eps2, budget.beta2, budget.c)?;
    Ok(SamplePlan { n_hat, kappa_grid: kappa_grid.to_vec(), l_g, epsilon2: eps2, n, c: budget.c })
}
