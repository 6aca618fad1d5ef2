//! Scenario programs: assembly as an epigraph LP, per-contraction-factor
//! solves and the feasibility verdict.
//!
//! For a fixed contraction factor every residual is affine in the decision
//! tuple, so `min eta  s.t.  residual(sample, theta) - eta <= 0` for every
//! sampled residual is a linear program in `(eta, free parameters, q)`.

use serde::{Deserialize, Serialize};

use crate::certificate::{
    level_gap_form, residual_forms, residuals, AffineForm, CertificateTemplate, DecisionTuple, Mode, Param, ResidualContext,
    ResidualKind, SbcSolution, DEFAULT_VARRHO, PARAMS, STRICT_FLOOR,
};
use crate::complexity::ConfidenceBudget;
use crate::error::{invalid, Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, FEAS_TOL};
use crate::par;
use crate::sampling::Dataset;

/// Values fixed ahead of the optimization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pinned {
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub psi: Option<f64>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
}

impl Pinned {
    pub fn get(&self, p: Param) -> Option<f64> {
        match p {
            Param::Gamma => self.gamma,
            Param::Lambda => self.lambda,
            Param::Psi => self.psi,
            Param::Alpha => self.alpha,
            Param::Rho => self.rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub mode: Mode,
    pub mu: f64,
    #[serde(default = "default_varrho")]
    pub varrho: f64,
    /// Horizon of the deterministic level-gap condition.
    #[serde(default)]
    pub horizon: f64,
    /// Upper limits for `alpha` and `rho` when they are free (the Lipschitz
    /// bounds assume them).
    #[serde(default)]
    pub alpha_cap: Option<f64>,
    #[serde(default)]
    pub rho_cap: Option<f64>,
    /// Tighten `gamma` and `lambda` to the extreme values the data allows
    /// at the optimal `eta`.
    #[serde(default = "default_true")]
    pub tighten_levels: bool,
}

fn default_varrho() -> f64 {
    DEFAULT_VARRHO
}

fn default_true() -> bool {
    true
}

impl ScenarioOptions {
    pub fn new(mode: Mode, mu: f64) -> Self {
        ScenarioOptions { mode, mu, varrho: DEFAULT_VARRHO, horizon: 0.0, alpha_cap: None, rho_cap: None, tighten_levels: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    Eta,
    Param(Param),
    Coef(usize),
}

/// Which decision variables are free, and their LP columns.
#[derive(Clone, Debug, PartialEq)]
pub struct VarLayout {
    pub vars: Vec<Var>,
    /// Value of every scalar parameter that is not free (mode exclusions
    /// read 0).
    pub fixed: [Option<f64>; 5],
    pub r: usize,
}

impl VarLayout {
    pub fn new(mode: Mode, pinned: &Pinned, r: usize) -> Self {
        let mut vars = vec![Var::Eta];
        let mut fixed = [None; 5];
        for p in PARAMS {
            let excluded = (p == Param::Psi && !mode.uses_psi()) || (p == Param::Alpha && !mode.uses_alpha());
            if excluded {
                if pinned.get(p).is_some_and(|v| v != 0.0) {
                    log::debug!("{} is not used in mode {mode}; ignoring its pinned value", p.name());
                }
                fixed[p.index()] = Some(0.0);
            } else if let Some(v) = pinned.get(p) {
                fixed[p.index()] = Some(v);
            } else {
                vars.push(Var::Param(p));
            }
        }
        vars.extend((0..r).map(Var::Coef));
        VarLayout { vars, fixed, r }
    }

    pub fn names(&self) -> Vec<String> {
        self.vars
            .iter()
            .map(|v| match v {
                Var::Eta => "eta".to_string(),
                Var::Param(p) => p.name().to_string(),
                Var::Coef(j) => format!("q{}", j + 1),
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.vars.len()
    }

    fn theta_index(v: Var) -> Option<usize> {
        match v {
            Var::Eta => None,
            Var::Param(p) => Some(p.index()),
            Var::Coef(j) => Some(PARAMS.len() + j),
        }
    }

    /// LP row for `form(theta) - eta <= 0`.
    fn row(&self, f: &AffineForm) -> (Vec<f64>, f64) {
        let mut row = Vec::with_capacity(self.count());
        for &v in &self.vars {
            row.push(match Self::theta_index(v) {
                None => -1.0,
                Some(k) => f.coeffs[k],
            });
        }
        let mut constant = f.constant;
        for (k, fixed) in self.fixed.iter().enumerate() {
            if let Some(val) = fixed {
                constant += f.coeffs[k] * val;
            }
        }
        (row, -constant)
    }

    /// Decision tuple and `eta` from an LP point.
    pub fn decode(&self, x: &[f64]) -> (DecisionTuple, f64) {
        let mut theta = vec![0.0; PARAMS.len() + self.r];
        for (k, fixed) in self.fixed.iter().enumerate() {
            if let Some(v) = fixed {
                theta[k] = *v;
            }
        }
        let mut eta = f64::NAN;
        for (&v, &val) in self.vars.iter().zip(x) {
            match Self::theta_index(v) {
                None => eta = val,
                Some(k) => theta[k] = val,
            }
        }
        (DecisionTuple::from_slice(&theta), eta)
    }
}

/// The assembled scenario program and the bookkeeping needed to read it.
#[derive(Clone, Debug)]
pub struct ScenarioProgram {
    pub lp: LinearProgram,
    pub layout: VarLayout,
    pub context: ResidualContext,
    /// `(sample index, condition)` per LP row; `None` marks the sample-free
    /// level-gap row.
    pub row_kinds: Vec<(Option<usize>, ResidualKind)>,
}

fn context(opts: &ScenarioOptions, kappa: f64, w_inf_sq: f64) -> ResidualContext {
    ResidualContext { mode: opts.mode, kappa, mu: opts.mu, varrho: opts.varrho, horizon: opts.horizon, w_inf_sq }
}

/// Builds the epigraph LP for one contraction factor.
pub fn build_sop(
    dataset: &Dataset,
    template: &CertificateTemplate,
    kappa: f64,
    pinned: &Pinned,
    opts: &ScenarioOptions,
) -> Result<ScenarioProgram> {
    template.validate()?;
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    crate::error::check_dim("template dimension", dataset.state_dim(), template.dim())?;
    let relaxed = opts.mode.is_relaxed();
    if relaxed {
        if kappa != 1.0 {
            log::debug!("relaxed mode ignores kappa = {kappa}");
        }
    } else if !(kappa > 0.0 && kappa < 1.0) {
        return Err(invalid(format!("kappa = {kappa} must lie in (0, 1)")));
    }
    if !(opts.varrho < 0.0) && relaxed {
        return Err(invalid("the level-gap margin varrho must be negative"));
    }
    let ctx = context(opts, kappa, dataset.region.interaction.max_norm_sq());
    let layout = VarLayout::new(opts.mode, pinned, template.len());

    let per_point = par::map_indexed(dataset.len(), |l| residual_forms(template, &dataset.points[l], &ctx));
    consistency_check(dataset, template, &ctx, &per_point)?;

    let n_rows: usize = per_point.iter().map(Vec::len).sum::<usize>() + usize::from(relaxed);
    let mut lp = LinearProgram::new(layout.count());
    lp.reserve_rows(n_rows);
    lp.names = layout.names();
    lp.objective[0] = 1.0;
    let mut row_kinds = Vec::with_capacity(n_rows);
    for (l, forms) in per_point.iter().enumerate() {
        for (kind, f) in forms {
            let (row, rhs) = layout.row(f);
            lp.add_row(&row, Relation::Le, rhs)?;
            row_kinds.push((Some(l), *kind));
        }
    }
    if let Some(f) = level_gap_form(template.len(), &ctx) {
        let (row, rhs) = layout.row(&f);
        lp.add_row(&row, Relation::Le, rhs)?;
        row_kinds.push((None, ResidualKind::G6));
    }

    for (col, &v) in layout.vars.iter().enumerate() {
        let (lo, hi) = match v {
            Var::Eta => (f64::NEG_INFINITY, f64::INFINITY),
            Var::Param(Param::Gamma) | Var::Param(Param::Lambda) => (STRICT_FLOOR, f64::INFINITY),
            Var::Param(Param::Psi) => (0.0, f64::INFINITY),
            Var::Param(Param::Alpha) => (STRICT_FLOOR, opts.alpha_cap.unwrap_or(f64::INFINITY)),
            Var::Param(Param::Rho) => (0.0, opts.rho_cap.unwrap_or(f64::INFINITY)),
            Var::Coef(j) => (template.bounds[j][0], template.bounds[j][1]),
        };
        lp.set_bounds(col, lo, hi);
    }
    Ok(ScenarioProgram { lp, layout, context: ctx, row_kinds })
}

/// Evaluates the affine forms against the direct residual definitions at a
/// fixed probe tuple for a few representative samples.
fn consistency_check(
    dataset: &Dataset,
    template: &CertificateTemplate,
    ctx: &ResidualContext,
    forms: &[Vec<(ResidualKind, AffineForm)>],
) -> Result<()> {
    let r = template.len();
    let probe: Vec<f64> = (0..PARAMS.len() + r).map(|k| 0.37 + 0.11 * k as f64).collect();
    let theta = DecisionTuple::from_slice(&probe);
    let mut picks = vec![0, dataset.len() - 1];
    picks.extend(dataset.points.iter().position(|p| p.in_x0));
    picks.extend(dataset.points.iter().position(|p| p.in_xc));
    for l in picks {
        let direct = residuals(template, &dataset.points[l], &theta, ctx);
        for (kind, f) in &forms[l] {
            let d = direct.iter().find(|(k, _)| k == kind).map(|(_, v)| *v).unwrap_or(f64::NAN);
            let a = f.eval(&probe);
            if !((a - d).abs() <= 1e-9 * (1.0 + d.abs())) {
                return Err(Error::Invariant(format!(
                    "residual {} of sample {l} is not affine in the decision variables ({a} vs {d})",
                    kind.name()
                )));
            }
        }
    }
    Ok(())
}

/// Largest residual over the rows that exist in the program (indicator
/// conditions only where their flag is set), evaluated directly.
pub fn max_active_residual(dataset: &Dataset, template: &CertificateTemplate, theta: &DecisionTuple, ctx: &ResidualContext) -> f64 {
    let per_point = par::map_indexed(dataset.len(), |l| {
        let p = &dataset.points[l];
        residuals(template, p, theta, ctx)
            .into_iter()
            .filter(|(k, _)| match k {
                ResidualKind::G3 => p.in_x0,
                ResidualKind::G4 => p.in_xc,
                ResidualKind::G6 => l == 0,
                _ => true,
            })
            .map(|(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    per_point.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaSolve {
    pub kappa: f64,
    pub status: LpStatus,
    pub eta: Option<f64>,
    pub iterations: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub agent_id: String,
    pub mode: Mode,
    /// `None` when no contraction factor produced an optimal program.
    pub solution: Option<SbcSolution>,
    pub epsilon1: f64,
    pub eta_star: Option<f64>,
    pub feasible_for_rop: bool,
    pub confidence: f64,
    pub confidence_void: bool,
    pub kappa_grid: Vec<f64>,
    pub per_kappa: Vec<KappaSolve>,
    /// Directly evaluated maximum residual at the returned solution.
    pub max_residual: Option<f64>,
    pub free_variables: Vec<String>,
    pub samples: usize,
    pub required_samples: Option<u64>,
    pub tolerance: f64,
}

/// Free-variable names for a configuration (their count is `c`).
pub fn free_variables(mode: Mode, pinned: &Pinned, r: usize) -> Vec<String> {
    VarLayout::new(mode, pinned, r).names()
}

/// Checks that `budget.c` equals the number of free decision variables.
pub fn check_free_count(mode: Mode, pinned: &Pinned, r: usize, c: usize) -> Result<()> {
    let names = free_variables(mode, pinned, r);
    if names.len() != c {
        return Err(invalid(format!(
            "budget declares c = {c} but the program has {} free variables: {}",
            names.len(),
            names.join(", ")
        )));
    }
    Ok(())
}

/// The contraction factors actually solved: relaxed modes use only 1.
pub fn effective_grid(mode: Mode, grid: &[f64]) -> Vec<f64> {
    if mode.is_relaxed() {
        vec![1.0]
    } else {
        grid.to_vec()
    }
}

/// Solves one program per grid value, keeps the smallest `eta*` (first in
/// grid order on ties) and issues the verdict `eta* + eps1 <= 0`.
pub fn synthesize(
    dataset: &Dataset,
    template: &CertificateTemplate,
    kappa_grid: &[f64],
    budget: &ConfidenceBudget,
    pinned: &Pinned,
    opts: &ScenarioOptions,
    required_samples: Option<u64>,
) -> Result<ScenarioVerdict> {
    let mode = opts.mode;
    let grid = effective_grid(mode, kappa_grid);
    if grid.is_empty() {
        return Err(invalid("kappa grid is empty"));
    }
    if grid.len() != budget.m {
        return Err(invalid(format!("kappa grid has {} values but m = {}", grid.len(), budget.m)));
    }
    check_free_count(mode, pinned, template.len(), budget.c)?;
    budget.validate(mode.is_deterministic())?;

    let programs = grid
        .iter()
        .map(|&k| build_sop(dataset, template, k, pinned, opts))
        .collect::<Result<Vec<_>>>()?;
    let solves = par::map_indexed(programs.len(), |i| solve_lp(&programs[i].lp));
    let mut per_kappa = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (i, sol) in solves.into_iter().enumerate() {
        let sol = sol?;
        let eta = (sol.status == LpStatus::Optimal).then(|| sol.x[0]);
        per_kappa.push(KappaSolve {
            kappa: grid[i],
            status: sol.status,
            eta,
            iterations: sol.iterations,
            rows: programs[i].lp.num_rows(),
        });
        if let Some(e) = eta {
            if best.as_ref().is_none_or(|(_, _, b)| e < *b) {
                best = Some((i, sol.x, e));
            }
        }
    }

    let required_ok = required_samples.is_none_or(|n| dataset.len() as u64 >= n);
    if !required_ok {
        log::warn!(
            "agent {}: {} samples is below the required {}; the confidence statement is void",
            dataset.agent_id,
            dataset.len(),
            required_samples.unwrap_or(0)
        );
    }
    let deterministic = mode.is_deterministic();
    let confidence = if required_ok { budget.confidence(deterministic) } else { 0.0 };
    let mut verdict = ScenarioVerdict {
        agent_id: dataset.agent_id.clone(),
        mode,
        solution: None,
        epsilon1: budget.epsilon1,
        eta_star: None,
        feasible_for_rop: false,
        confidence,
        confidence_void: !required_ok,
        kappa_grid: grid.clone(),
        per_kappa,
        max_residual: None,
        free_variables: programs[0].layout.names(),
        samples: dataset.len(),
        required_samples,
        tolerance: FEAS_TOL,
    };
    let Some((i, x, eta)) = best else { return Ok(verdict) };
    let prog = &programs[i];
    let (mut theta, _) = prog.layout.decode(&x);
    if opts.tighten_levels {
        tighten(dataset, template, &prog.layout, &mut theta, eta);
    }
    let max_residual = max_active_residual(dataset, template, &theta, &prog.context);
    let kappa = prog.context.effective_kappa();
    verdict.solution = Some(SbcSolution {
        agent_id: dataset.agent_id.clone(),
        mode,
        template: template.clone(),
        q: theta.q.clone(),
        gamma: theta.gamma,
        lambda: theta.lambda,
        psi: theta.psi,
        alpha: theta.alpha,
        rho: theta.rho,
        kappa,
        eta_star: eta,
        epsilon1: budget.epsilon1,
        beta1: if deterministic { 0.0 } else { budget.beta1 },
        beta2: budget.beta2,
        confidence,
        confidence_void: !required_ok,
        w_inf_sq: prog.context.w_inf_sq,
    });
    verdict.eta_star = Some(eta);
    verdict.feasible_for_rop = eta + budget.epsilon1 <= 0.0;
    verdict.max_residual = Some(max_residual);
    Ok(verdict)
}

/// Moves free `gamma` down and free `lambda` up as far as the sampled
/// initial and collision conditions allow at level `eta`. The maximum
/// residual is unchanged and the risk bounds only improve.
fn tighten(dataset: &Dataset, template: &CertificateTemplate, layout: &VarLayout, theta: &mut DecisionTuple, eta: f64) {
    let free = |p: Param| layout.vars.contains(&Var::Param(p));
    if free(Param::Gamma) {
        let top = dataset
            .points
            .iter()
            .filter(|p| p.in_x0)
            .map(|p| template.evaluate(&theta.q, &p.x_hat) - eta)
            .fold(f64::NEG_INFINITY, f64::max);
        let g = top.max(STRICT_FLOOR);
        if g <= theta.gamma {
            theta.gamma = g;
        }
    }
    if free(Param::Lambda) {
        let low = dataset
            .points
            .iter()
            .filter(|p| p.in_xc)
            .map(|p| template.evaluate(&theta.q, &p.x_hat) + eta)
            .fold(f64::INFINITY, f64::min);
        if low.is_finite() && low >= theta.lambda {
            theta.lambda = low;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{BoxRegion, RegionSpec};
    use crate::sampling::SamplePoint;

    fn scalar_region() -> RegionSpec {
        let x = BoxRegion::from_intervals(&[[-2.0, 2.0]]).unwrap();
        RegionSpec::new(
            x.clone(),
            BoxRegion::from_intervals(&[[-0.5, 0.5]]).unwrap(),
            BoxRegion::from_intervals(&[[1.5, 2.0]]).unwrap(),
            BoxRegion::from_intervals(&[[0.0, 0.0]]).unwrap(),
        )
        .unwrap()
    }

    fn dataset(points: Vec<SamplePoint>) -> Dataset {
        Dataset { points, region: scalar_region(), seed: 0, agent_id: "t".into(), n_hat: 1 }
    }

    fn pt(x: f64, succ: f64) -> SamplePoint {
        let r = scalar_region();
        SamplePoint { x_hat: vec![x], w_hat: vec![0.0], successors: vec![vec![succ]], in_x0: r.initial.contains(&[x]), in_xc: r.collision.contains(&[x]) }
    }

    #[test]
    fn everything_pinned_gives_max_residual() {
        let t = CertificateTemplate::new(vec![vec![2]], vec![[0.0, 0.0]]).unwrap();
        let ds = dataset(vec![pt(1.0, 0.5)]);
        let pinned = Pinned { gamma: Some(1.0), lambda: Some(3.0), psi: Some(0.0), alpha: Some(0.5), rho: Some(0.0) };
        let opts = ScenarioOptions::new(Mode::StochasticSmallGain, 0.0);
        let prog = build_sop(&ds, &t, 0.5, &pinned, &opts).unwrap();
        assert_eq!(prog.lp.num_vars(), 2); // eta and the single coefficient (fixed by its box)
        let s = solve_lp(&prog.lp).unwrap();
        // g2 = 0.5 * 1 - 0 is the largest residual
        assert!((s.x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn initial_row_appears_once() {
        let t = CertificateTemplate::new(vec![vec![2]], vec![[1.0, 1.0]]).unwrap();
        let ds = dataset(vec![pt(0.2, 0.1), pt(1.0, 0.4)]);
        let opts = ScenarioOptions::new(Mode::StochasticSmallGain, 0.0);
        let prog = build_sop(&ds, &t, 0.5, &Pinned::default(), &opts).unwrap();
        let g3: Vec<_> = prog.row_kinds.iter().filter(|(_, k)| *k == ResidualKind::G3).collect();
        assert_eq!(g3, vec![&(Some(0), ResidualKind::G3)]);
        let gamma_col = prog.layout.vars.iter().position(|v| *v == Var::Param(Param::Gamma)).unwrap();
        let row = prog.row_kinds.iter().position(|(_, k)| *k == ResidualKind::G3).unwrap();
        let (a, _, rhs) = prog.lp.row(row);
        assert_eq!(a[gamma_col], -1.0);
        assert_eq!(a[0], -1.0);
        assert!((a[a.len() - 1] - 0.04).abs() < 1e-15);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn free_variable_count() {
        let pinned = Pinned { lambda: Some(10.0), psi: Some(1e-4), alpha: Some(1e-4), rho: Some(9e-7), gamma: None };
        let names = free_variables(Mode::StochasticSmallGain, &pinned, 5);
        assert_eq!(names, vec!["eta", "gamma", "q1", "q2", "q3", "q4", "q5"]);
        check_free_count(Mode::StochasticSmallGain, &pinned, 5, 7).unwrap();
        let err = check_free_count(Mode::StochasticSmallGain, &pinned, 5, 6).unwrap_err().to_string();
        assert!(err.contains("eta, gamma, q1"));
        // deterministic modes drop psi, relaxed modes drop alpha
        assert!(!free_variables(Mode::DeterministicSmallGain, &Pinned::default(), 1).contains(&"psi".to_string()));
        assert!(!free_variables(Mode::StochasticRelaxed, &Pinned::default(), 1).contains(&"alpha".to_string()));
    }
}
