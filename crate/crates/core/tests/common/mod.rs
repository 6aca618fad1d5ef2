//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbcert_core::lp::{LinearProgram, Relation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------------- LPs

/// Box-bounded random LP with `n` variables and `m` extra rows. The box
/// keeps it bounded; random rows may make it infeasible.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new(n);
    lp.objective = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    for j in 0..n {
        let lo = rng.random_range(-10.0..0.0);
        let hi = rng.random_range(0.0..10.0);
        lp.set_bounds(j, lo, hi);
    }
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let rel = if rng.random_bool(0.5) { Relation::Le } else { Relation::Ge };
        lp.add_row(&row, rel, rng.random_range(-4.0..4.0)).unwrap();
    }
    lp
}

/// All constraints as `a x <= b`, bounds included.
fn halfspaces(lp: &LinearProgram) -> Vec<(Vec<f64>, f64)> {
    let n = lp.num_vars();
    let mut out = Vec::new();
    for i in 0..lp.num_rows() {
        let (row, rel, rhs) = lp.row(i);
        match rel {
            Relation::Le => out.push((row.to_vec(), rhs)),
            Relation::Ge => out.push((row.iter().map(|v| -v).collect(), -rhs)),
        }
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        if lp.upper[j].is_finite() {
            e[j] = 1.0;
            out.push((e.clone(), lp.upper[j]));
        }
        if lp.lower[j].is_finite() {
            e[j] = -1.0;
            out.push((e, -lp.lower[j]));
        }
    }
    out
}

fn combinations(k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Optimal objective of a bounded LP by enumerating every vertex, `None`
/// if no vertex is feasible.
pub fn vertex_optimum(lp: &LinearProgram, tol: f64) -> Option<f64> {
    let n = lp.num_vars();
    let hs = halfspaces(lp);
    let mut best: Option<f64> = None;
    for set in combinations(n, hs.len()) {
        let a = DMatrix::from_fn(n, n, |r, c| hs[set[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| hs[set[r]].1);
        let Some(x) = a.clone().lu().solve(&b) else { continue };
        if (&a * &x - &b).amax() > 1e-9 {
            continue;
        }
        let feasible = hs.iter().all(|(row, rhs)| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= rhs + tol);
        if feasible {
            let obj: f64 = lp.objective.iter().zip(x.iter()).map(|(c, v)| c * v).sum();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

// ------------------------------------------------------- binomial tails

/// `sum_k P(Bin(N, eps_k) <= c - 1)` through the regularized incomplete
/// beta function.
pub fn tail_by_beta(n: u64, eps: &[f64], c: usize) -> f64 {
    eps.iter()
        .map(|&e| {
            if (n as usize) < c {
                1.0
            } else {
                statrs::function::beta::beta_reg((n - c as u64 + 1) as f64, c as f64, 1.0 - e)
            }
        })
        .sum()
}

// ------------------------------------------------------------- Lipschitz

/// Random symmetric matrix with spectral norm exactly `norm`.
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, norm: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let s = (&m + m.transpose()) * 0.5;
    let top = SymmetricEigen::new(s.clone()).eigenvalues.amax();
    if top == 0.0 {
        return DMatrix::zeros(n, n);
    }
    s * (norm / top)
}

/// Random matrix with Frobenius norm exactly `norm`.
pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, norm: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let f = m.norm();
    if f == 0.0 {
        m
    } else {
        m * (norm / f)
    }
}

/// Uniform point in the Euclidean ball of radius `r`.
pub fn in_ball<R: Rng>(rng: &mut R, n: usize, r: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            return v * r;
        }
    }
}

pub fn quad(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * p * x)[(0, 0)]
}

// ------------------------------------------------------------ risk bound

/// Direct evaluation of both branches with integer powers.
pub fn risk_saturating(gamma: f64, lambda: f64, psi: f64, t: i32) -> f64 {
    1.0 - (1.0 - gamma / lambda) * (1.0 - psi / lambda).powi(t)
}

pub fn risk_geometric(gamma: f64, lambda: f64, psi: f64, kappa: f64, t: i32) -> f64 {
    let kt = kappa.powi(t);
    gamma / lambda * kt + psi / ((1.0 - kappa) * lambda) * (1.0 - kt)
}
