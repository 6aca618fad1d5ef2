//! Dense simplex solver for small-width linear programs.
//!
//! Scenario programs have a handful of variables and up to millions of
//! rows. The solver therefore works on the dual: with the primal written as
//! `min c^T x  s.t.  G x <= h` (relations flipped and finite bounds turned
//! into rows), the dual `min h^T y  s.t.  G^T y = -c, y >= 0` has only `n`
//! equality rows. A revised primal simplex with an explicit `n x n` basis
//! inverse runs on it; the primal optimum is read off the simplex
//! multipliers, and the primal rows whose dual columns are basic are the
//! active constraints.
//!
//! Pricing is Dantzig's rule, switching to Bland's rule for the rest of a
//! phase after a streak of degenerate pivots. Everything is sequential and
//! deterministic: identical inputs give an identical pivot sequence.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Absolute feasibility tolerance promised for returned points.
pub const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 30;
const REINVERT_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

/// `min objective . x` subject to row constraints and variable bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub names: Vec<String>,
    coeffs: Vec<f64>,
    relations: Vec<Relation>,
    rhs: Vec<f64>,
}

impl LinearProgram {
    /// Program over `n` free variables with a zero objective.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            names: (0..n).map(|j| format!("x{j}")).collect(),
            coeffs: Vec::new(),
            relations: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn reserve_rows(&mut self, extra: usize) {
        self.coeffs.reserve(extra * self.num_vars());
        self.relations.reserve(extra);
        self.rhs.reserve(extra);
    }

    pub fn add_row(&mut self, row: &[f64], relation: Relation, rhs: f64) -> Result<()> {
        check_dim("constraint row", self.num_vars(), row.len())?;
        self.coeffs.extend_from_slice(row);
        self.relations.push(relation);
        self.rhs.push(rhs);
        Ok(())
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn row(&self, i: usize) -> (&[f64], Relation, f64) {
        let n = self.num_vars();
        (&self.coeffs[i * n..(i + 1) * n], self.relations[i], self.rhs[i])
    }

    /// Largest violation of any row or bound at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.num_rows() {
            let (a, rel, b) = self.row(i);
            let ax: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
            let v = match rel {
                Relation::Le => ax - b,
                Relation::Ge => b - ax,
            };
            worst = worst.max(v);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Plain-text canonical form, one item per line, numbers in `{:e}`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "lp vars {} rows {}", self.num_vars(), self.num_rows()).unwrap();
        write!(s, "minimize").unwrap();
        for c in &self.objective {
            write!(s, " {c:e}").unwrap();
        }
        s.push('\n');
        for j in 0..self.num_vars() {
            writeln!(s, "var {j} {} {:e} {:e}", self.names[j], self.lower[j], self.upper[j]).unwrap();
        }
        for i in 0..self.num_rows() {
            let (a, rel, b) = self.row(i);
            let op = match rel {
                Relation::Le => "<=",
                Relation::Ge => ">=",
            };
            write!(s, "row {i}").unwrap();
            for v in a {
                write!(s, " {v:e}").unwrap();
            }
            writeln!(s, " {op} {b:e}").unwrap();
        }
        s
    }
}

/// Where a row of the internal `G x <= h` form came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOrigin {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point (empty unless optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Constraints carrying a positive multiplier at the optimum.
    pub active: Vec<RowOrigin>,
}

struct Canonical {
    n: usize,
    g: Vec<f64>,
    h: Vec<f64>,
    origin: Vec<RowOrigin>,
}

fn canonicalize(lp: &LinearProgram) -> Canonical {
    let n = lp.num_vars();
    let bound_rows = lp.lower.iter().chain(&lp.upper).filter(|b| b.is_finite()).count();
    let m = lp.num_rows() + bound_rows;
    let mut g = Vec::with_capacity(m * n);
    let mut h = Vec::with_capacity(m);
    let mut origin = Vec::with_capacity(m);
    for i in 0..lp.num_rows() {
        let (a, rel, b) = lp.row(i);
        match rel {
            Relation::Le => {
                g.extend_from_slice(a);
                h.push(b);
            }
            Relation::Ge => {
                g.extend(a.iter().map(|v| -v));
                h.push(-b);
            }
        }
        origin.push(RowOrigin::Row(i));
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            g.extend((0..n).map(|k| if k == j { -1.0 } else { 0.0 }));
            h.push(-lp.lower[j]);
            origin.push(RowOrigin::Lower(j));
        }
        if lp.upper[j].is_finite() {
            g.extend((0..n).map(|k| if k == j { 1.0 } else { 0.0 }));
            h.push(lp.upper[j]);
            origin.push(RowOrigin::Upper(j));
        }
    }
    Canonical { n, g, h, origin }
}

enum DualOutcome {
    Optimal { pi: Vec<f64>, basic: Vec<(usize, f64)> },
    /// Phase I could not reach a feasible dual point.
    Infeasible,
    /// The dual objective decreases without bound.
    Unbounded,
}

/// Revised simplex on `min h^T y  s.t.  A y = r, y >= 0` where column `j`
/// of `A` is `g[j n .. (j + 1) n]`.
struct Revised<'a> {
    n: usize,
    m: usize,
    g: &'a [f64],
    h: &'a [f64],
    r: Vec<f64>,
    sign: Vec<f64>,
    /// Column ids; `m + i` is the artificial of row `i`.
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    since_reinvert: usize,
    iterations: usize,
    max_iterations: usize,
}

#[derive(PartialEq)]
enum Phase {
    One,
    Two,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a> Revised<'a> {
    fn new(n: usize, g: &'a [f64], h: &'a [f64], r: Vec<f64>) -> Self {
        let m = h.len();
        let sign: Vec<f64> = r.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut binv = vec![0.0; n * n];
        for i in 0..n {
            binv[i * n + i] = sign[i];
        }
        let xb = r.iter().map(|v| v.abs()).collect();
        Revised {
            n,
            m,
            g,
            h,
            r,
            sign,
            basis: (m..m + n).collect(),
            is_basic: vec![false; m],
            binv,
            xb,
            since_reinvert: 0,
            iterations: 0,
            max_iterations: 50 * (n + 10) + 20 * m,
        }
    }

    fn col(&self, id: usize) -> std::borrow::Cow<'a, [f64]> {
        if id < self.m {
            std::borrow::Cow::Borrowed(&self.g[id * self.n..(id + 1) * self.n])
        } else {
            let i = id - self.m;
            let mut e = vec![0.0; self.n];
            e[i] = self.sign[i];
            std::borrow::Cow::Owned(e)
        }
    }

    fn cost(&self, id: usize, phase: &Phase) -> f64 {
        match (phase, id < self.m) {
            (Phase::One, true) => 0.0,
            (Phase::One, false) => 1.0,
            (Phase::Two, true) => self.h[id],
            (Phase::Two, false) => 0.0,
        }
    }

    fn multipliers(&self, phase: &Phase) -> Vec<f64> {
        let n = self.n;
        let mut pi = vec![0.0; n];
        for (i, &id) in self.basis.iter().enumerate() {
            let cb = self.cost(id, phase);
            if cb != 0.0 {
                for k in 0..n {
                    pi[k] += cb * self.binv[i * n + k];
                }
            }
        }
        pi
    }

    fn ftran(&self, col: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|i| (0..n).map(|k| self.binv[i * n + k] * col[k]).sum()).collect()
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut b = DMatrix::zeros(n, n);
        for (p, &id) in self.basis.iter().enumerate() {
            let c = self.col(id);
            for k in 0..n {
                b[(k, p)] = c[k];
            }
        }
        b
    }

    fn reinvert(&mut self) {
        let n = self.n;
        let b = self.basis_matrix();
        match b.lu().try_inverse() {
            Some(inv) => {
                for i in 0..n {
                    for k in 0..n {
                        self.binv[i * n + k] = inv[(i, k)];
                    }
                }
                self.xb = self.ftran(&self.r.clone());
                for v in self.xb.iter_mut() {
                    if *v < 0.0 && *v > -FEAS_TOL {
                        *v = 0.0;
                    }
                }
            }
            None => log::warn!("basis refactorization failed; keeping the updated inverse"),
        }
        self.since_reinvert = 0;
    }

    fn pivot(&mut self, leave: usize, enter: usize, u: &[f64]) {
        let n = self.n;
        let theta = self.xb[leave] / u[leave];
        for i in 0..n {
            if i != leave {
                self.xb[i] -= theta * u[i];
                if self.xb[i] < 0.0 && self.xb[i] > -FEAS_TOL {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[leave] = theta.max(0.0);
        let piv = u[leave];
        for k in 0..n {
            self.binv[leave * n + k] /= piv;
        }
        for i in 0..n {
            if i != leave && u[i] != 0.0 {
                let f = u[i];
                for k in 0..n {
                    self.binv[i * n + k] -= f * self.binv[leave * n + k];
                }
            }
        }
        let old = self.basis[leave];
        if old < self.m {
            self.is_basic[old] = false;
        }
        self.basis[leave] = enter;
        self.is_basic[enter] = true;
        self.iterations += 1;
        self.since_reinvert += 1;
        if self.since_reinvert >= REINVERT_EVERY {
            self.reinvert();
        }
    }

    fn run(&mut self, phase: Phase) -> Result<PhaseEnd> {
        let n = self.n;
        let mut bland = false;
        let mut streak = 0;
        loop {
            if self.iterations > self.max_iterations {
                return Err(Error::Invariant("simplex iteration limit reached".into()));
            }
            let pi = self.multipliers(&phase);
            let mut enter = None;
            let mut best = -OPT_TOL;
            for j in 0..self.m {
                if self.is_basic[j] {
                    continue;
                }
                let gj = &self.g[j * n..(j + 1) * n];
                let d = self.cost(j, &phase) - gj.iter().zip(&pi).map(|(a, b)| a * b).sum::<f64>();
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = enter else { return Ok(PhaseEnd::Optimal) };
            let u = self.ftran(&self.col(q));
            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            for i in 0..n {
                if u[i] <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.xb[i] / u[i];
                let take = match leave {
                    None => true,
                    Some(l) => {
                        let tie = (ratio - theta).abs() <= 1e-12 * theta.abs().max(1.0);
                        if tie {
                            if bland {
                                self.basis[i] < self.basis[l]
                            } else {
                                u[i] > u[l]
                            }
                        } else {
                            ratio < theta
                        }
                    }
                };
                if take {
                    leave = Some(i);
                    theta = ratio;
                }
            }
            let Some(l) = leave else { return Ok(PhaseEnd::Unbounded) };
            if theta <= 1e-14 {
                streak += 1;
                if streak >= DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                streak = 0;
            }
            self.pivot(l, q, &u);
        }
    }

    /// Swap artificials left in the basis at zero level for structural
    /// columns where possible; rows without a usable pivot are redundant.
    fn drive_out_artificials(&mut self) {
        let n = self.n;
        for p in 0..n {
            if self.basis[p] < self.m {
                continue;
            }
            let row: Vec<f64> = self.binv[p * n..(p + 1) * n].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.m {
                if self.is_basic[j] {
                    continue;
                }
                let gj = &self.g[j * n..(j + 1) * n];
                let v: f64 = gj.iter().zip(&row).map(|(a, b)| a * b).sum();
                if v.abs() > 1e-7 && best.is_none_or(|(_, b)| v.abs() > b) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((j, _)) = best {
                let u = self.ftran(&self.col(j));
                self.xb[p] = 0.0;
                self.pivot(p, j, &u);
            }
        }
    }

    fn solve(mut self) -> Result<(DualOutcome, usize)> {
        let scale = self.r.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        self.run(Phase::One)?;
        self.reinvert();
        let infeas: f64 = self.basis.iter().zip(&self.xb).filter(|(id, _)| **id >= self.m).map(|(_, v)| *v).sum();
        if infeas > FEAS_TOL * scale {
            return Ok((DualOutcome::Infeasible, self.iterations));
        }
        self.drive_out_artificials();
        if let PhaseEnd::Unbounded = self.run(Phase::Two)? {
            return Ok((DualOutcome::Unbounded, self.iterations));
        }
        // multipliers from a fresh factorization of the final basis
        let b = self.basis_matrix();
        let cb: Vec<f64> = self.basis.iter().map(|&id| self.cost(id, &Phase::Two)).collect();
        let pi = b
            .transpose()
            .lu()
            .solve(&nalgebra::DVector::from_vec(cb))
            .ok_or_else(|| Error::Invariant("singular final basis".into()))?;
        self.reinvert();
        let basic = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(id, v)| **id < self.m && **v > 0.0)
            .map(|(id, v)| (*id, *v))
            .collect();
        Ok((DualOutcome::Optimal { pi: pi.as_slice().to_vec(), basic }, self.iterations))
    }
}

/// Solves `lp`. Infeasible and unbounded programs are reported through the
/// status, not as errors; errors signal malformed input or numerical
/// breakdown.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    if lp.objective.iter().chain(&lp.rhs).chain(&lp.coeffs).any(|v| !v.is_finite()) {
        return Err(invalid("objective, rows and right-hand sides must be finite"));
    }
    if lp.lower.iter().chain(&lp.upper).any(|v| v.is_nan()) {
        return Err(invalid("NaN variable bound"));
    }
    let fail = |status, iterations| LpSolution { status, x: Vec::new(), objective: f64::NAN, iterations, active: Vec::new() };
    if (0..n).any(|j| lp.lower[j] > lp.upper[j]) {
        return Ok(fail(LpStatus::Infeasible, 0));
    }
    let canon = canonicalize(lp);
    if n == 0 {
        let feasible = canon.h.iter().all(|&v| v >= -FEAS_TOL);
        return Ok(if feasible {
            LpSolution { status: LpStatus::Optimal, x: Vec::new(), objective: 0.0, iterations: 0, active: Vec::new() }
        } else {
            fail(LpStatus::Infeasible, 0)
        });
    }
    let r: Vec<f64> = lp.objective.iter().map(|c| -c).collect();
    let (outcome, iterations) = Revised::new(n, &canon.g, &canon.h, r).solve()?;
    match outcome {
        DualOutcome::Optimal { pi, basic } => {
            let x = pi;
            let objective = lp.objective_value(&x);
            let active = basic.iter().map(|(id, _)| canon.origin[*id]).collect();
            Ok(LpSolution { status: LpStatus::Optimal, x, objective, iterations, active })
        }
        DualOutcome::Unbounded => Ok(fail(LpStatus::Infeasible, iterations)),
        DualOutcome::Infeasible => {
            let status = if primal_is_feasible(&canon)? { LpStatus::Unbounded } else { LpStatus::Infeasible };
            Ok(fail(status, iterations))
        }
    }
}

/// Solves `min t  s.t.  G x - t <= h, t >= 0`, which is always feasible
/// and bounded; the primal is feasible iff the optimum is (near) zero.
fn primal_is_feasible(canon: &Canonical) -> Result<bool> {
    let n = canon.n + 1;
    let m = canon.h.len() + 1;
    let mut g = Vec::with_capacity(m * n);
    for i in 0..canon.h.len() {
        g.extend_from_slice(&canon.g[i * canon.n..(i + 1) * canon.n]);
        g.push(-1.0);
    }
    g.extend(std::iter::repeat_n(0.0, canon.n));
    g.push(-1.0);
    let mut h = canon.h.clone();
    h.push(0.0);
    let mut r = vec![0.0; n];
    r[canon.n] = -1.0;
    match Revised::new(n, &g, &h, r).solve()?.0 {
        DualOutcome::Optimal { pi, .. } => Ok(pi[canon.n] <= FEAS_TOL),
        _ => Err(Error::Invariant("feasibility subproblem did not reach an optimum".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(n: usize, c: &[f64]) -> LinearProgram {
        let mut p = LinearProgram::new(n);
        p.objective = c.to_vec();
        p
    }

    #[test]
    fn epigraph_of_constant() {
        let mut p = lp(1, &[1.0]);
        p.add_row(&[-1.0], Relation::Le, -3.0).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
        assert_eq!(s.active, vec![RowOrigin::Row(0)]);
    }

    #[test]
    fn min_max_abs() {
        // variables (x, eta)
        let mut p = lp(2, &[0.0, 1.0]);
        p.add_row(&[1.0, -1.0], Relation::Le, 0.0).unwrap();
        p.add_row(&[-1.0, -1.0], Relation::Le, 0.0).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.x[0].abs() < 1e-12 && s.x[1].abs() < 1e-12);
    }

    #[test]
    fn unbounded_and_infeasible() {
        let mut p = lp(1, &[1.0]);
        p.add_row(&[1.0], Relation::Le, 5.0).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);

        let mut p = lp(1, &[1.0]);
        p.add_row(&[1.0], Relation::Ge, 5.0).unwrap();
        p.add_row(&[1.0], Relation::Le, 4.0).unwrap();
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        let mut p = lp(2, &[1.0, 1.0]);
        p.set_bounds(0, 2.0, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);

        assert_eq!(solve_lp(&lp(2, &[0.0, 1.0])).unwrap().status, LpStatus::Unbounded);
        let free = solve_lp(&lp(2, &[0.0, 0.0])).unwrap();
        assert_eq!(free.status, LpStatus::Optimal);
    }

    #[test]
    fn bounds_and_ge_rows() {
        // max x + y  s.t.  x + 2y <= 4, x >= 1, 0 <= y <= 1.5, x <= 3
        let mut p = lp(2, &[-1.0, -1.0]);
        p.add_row(&[1.0, 2.0], Relation::Le, 4.0).unwrap();
        p.add_row(&[1.0, 0.0], Relation::Ge, 1.0).unwrap();
        p.set_bounds(0, f64::NEG_INFINITY, 3.0);
        p.set_bounds(1, 0.0, 1.5);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
        assert!((s.objective + 3.5).abs() < 1e-12);
        assert!(p.max_violation(&s.x) <= FEAS_TOL);
    }

    #[test]
    fn deterministic_pivoting() {
        let mut p = lp(3, &[1.0, -2.0, 0.5]);
        for k in 0..40 {
            let t = k as f64 * 0.37;
            p.add_row(&[t.sin(), t.cos(), -1.0], Relation::Le, 1.0 + 0.1 * t.cos()).unwrap();
        }
        p.set_bounds(0, -5.0, 5.0);
        p.set_bounds(1, -5.0, 5.0);
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn text_dump_lists_everything() {
        let mut p = lp(2, &[0.0, 1.0]);
        p.add_row(&[1.0, -1.0], Relation::Ge, 2.0).unwrap();
        p.set_bounds(0, 0.0, 1.0);
        let t = p.to_text();
        assert!(t.starts_with("lp vars 2 rows 1\n"));
        assert!(t.contains("row 0 1e0 -1e0 >= 2e0"));
        assert!(t.contains("var 0 x0 0e0 1e0"));
    }

    #[test]
    fn row_width_checked() {
        let mut p = lp(2, &[0.0, 1.0]);
        assert!(p.add_row(&[1.0], Relation::Le, 0.0).is_err());
    }
}
