//! Empirical cross-checks: Monte Carlo collision counting and dense-grid
//! evaluation of the certificate conditions, plus CSV plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificate::{residuals, ResidualContext, ResidualKind, SbcSolution};
use crate::error::{check_dim, invalid, Result};
use crate::par;
use crate::region::{BoxRegion, RegionSpec};
use crate::rng::{tag, StreamSeed};
use crate::sampling::SamplePoint;
use crate::system::{Agent, Network};

/// Which joint event counts as a collision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionEvent {
    /// Some agent is in its collision set.
    #[default]
    AnyAgent,
    /// All agents are in their collision sets at the same time (the
    /// product collision set).
    AllAgents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub trials: u64,
    pub collisions: u64,
    pub empirical_rate: f64,
    /// Exact one-sided 99% upper confidence limit of the collision rate.
    pub upper_99: f64,
    pub horizon: u64,
    pub seed: u64,
    pub event: CollisionEvent,
}

/// One-sided Clopper-Pearson upper limit at level `level` for `k`
/// successes out of `n`.
pub fn clopper_pearson_upper(k: u64, n: u64, level: f64) -> f64 {
    if n == 0 || k >= n {
        return 1.0;
    }
    // P(X <= k | p) = 1 - I_p(k + 1, n - k) decreases in p; find where it
    // equals 1 - level.
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let target = level;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if statrs::function::beta::beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    hi
}

fn initial_state(regions: &[RegionSpec], seed: &StreamSeed, trial: u64) -> Vec<f64> {
    let mut x0 = Vec::new();
    for (i, r) in regions.iter().enumerate() {
        let mut rng = seed.stream(&[tag::MONTE_CARLO_INIT, trial, i as u64]);
        x0.extend(r.initial.sample(&mut rng));
    }
    x0
}

fn in_collision(network: &Network, regions: &[RegionSpec], x: &[f64], event: CollisionEvent) -> bool {
    let offsets = network.offsets();
    let mut hits = regions
        .iter()
        .enumerate()
        .map(|(i, r)| r.collision.contains(&x[offsets[i]..offsets[i] + r.state_dim()]));
    match event {
        CollisionEvent::AnyAgent => hits.any(|h| h),
        CollisionEvent::AllAgents => hits.all(|h| h),
    }
}

fn check_regions(network: &Network, regions: &[RegionSpec]) -> Result<()> {
    check_dim("regions", network.agents.len(), regions.len())?;
    for (a, r) in network.agents.iter().zip(regions) {
        r.validate()?;
        check_dim("region state dimension", a.state_dim(), r.state_dim())?;
    }
    Ok(())
}

/// Whether trial `trial` visits the collision set at some `k` in `[0, T)`.
pub fn trial_collides(network: &Network, regions: &[RegionSpec], horizon: u64, seed: &StreamSeed, trial: u64, event: CollisionEvent) -> Result<bool> {
    let mut x = initial_state(regions, seed, trial);
    for k in 0..horizon {
        if in_collision(network, regions, &x, event) {
            return Ok(true);
        }
        if k + 1 < horizon {
            x = network.step(&x, k, seed, trial)?;
        }
    }
    Ok(false)
}

/// Counts trials whose trajectory, started uniformly in the product of the
/// initial sets, hits the collision event within the horizon.
pub fn monte_carlo_risk(
    network: &Network,
    regions: &[RegionSpec],
    horizon: u64,
    trials: u64,
    seed: &StreamSeed,
    event: CollisionEvent,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    check_regions(network, regions)?;
    let hits = par::map_indexed(trials as usize, |t| trial_collides(network, regions, horizon, seed, t as u64, event));
    let mut collisions = 0u64;
    for h in hits {
        collisions += u64::from(h?);
    }
    Ok(MonteCarloReport {
        trials,
        collisions,
        empirical_rate: collisions as f64 / trials as f64,
        upper_99: clopper_pearson_upper(collisions, trials, 0.99),
        horizon,
        seed: seed.root(),
        event,
    })
}

/// Trajectories of the first `count` Monte Carlo trials.
pub fn sample_trajectories(network: &Network, regions: &[RegionSpec], horizon: u64, count: u64, seed: &StreamSeed) -> Result<Vec<Vec<Vec<f64>>>> {
    check_regions(network, regions)?;
    (0..count)
        .map(|t| crate::system::simulate(network, &initial_state(regions, seed, t), horizon as usize, seed, t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub per_axis: usize,
    /// Points per axis of the interaction grid used for the decrease
    /// condition.
    pub interaction_per_axis: usize,
    pub replicates: usize,
    pub mu: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMax {
    pub condition: String,
    pub max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub per_axis: usize,
    pub interaction_per_axis: usize,
    pub replicates: usize,
    pub maxima: Vec<ConditionMax>,
}

impl GridReport {
    pub fn max_of(&self, kind: ResidualKind) -> Option<f64> {
        self.maxima.iter().find(|c| c.condition == kind.name()).map(|c| c.max)
    }
}

/// Certificate and residuals at one state-grid point (interaction-free
/// conditions only).
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceRow {
    pub x: Vec<f64>,
    pub b: f64,
    pub residuals: Vec<(ResidualKind, f64)>,
}

fn context_for(solution: &SbcSolution, mu: f64) -> ResidualContext {
    let mut ctx = ResidualContext::new(solution.mode, solution.kappa, mu);
    ctx.w_inf_sq = solution.w_inf_sq;
    ctx
}

/// Evaluates the conditions that do not involve successors on the state
/// grid; indicator conditions are reported only inside their region.
pub fn residual_surface(solution: &SbcSolution, region: &RegionSpec, per_axis: usize) -> Result<Vec<SurfaceRow>> {
    check_dim("template dimension", region.state_dim(), solution.template.dim())?;
    let theta = solution.tuple();
    let ctx = context_for(solution, 0.0);
    let grid = region.state.grid(per_axis);
    let rows = par::map_indexed(grid.len(), |i| {
        let x = &grid[i];
        let point = SamplePoint {
            x_hat: x.clone(),
            w_hat: vec![0.0; region.interaction_dim()],
            successors: vec![x.clone()],
            in_x0: region.initial.contains(x),
            in_xc: region.collision.contains(x),
        };
        let residuals = residuals(&solution.template, &point, &theta, &ctx)
            .into_iter()
            .filter(|(k, _)| match k {
                ResidualKind::G1 | ResidualKind::G2 => true,
                ResidualKind::G3 => point.in_x0,
                ResidualKind::G4 => point.in_xc,
                _ => false,
            })
            .collect();
        SurfaceRow { x: x.clone(), b: solution.evaluate(x), residuals }
    });
    Ok(rows)
}

fn coordinate_stream(seed: &StreamSeed, x: &[f64], w: &[f64]) -> rand_chacha::ChaCha12Rng {
    let mut ids = vec![tag::GRID_NOISE];
    ids.extend(x.iter().chain(w).map(|v| v.to_bits()));
    seed.stream(&ids)
}

/// Per-condition maxima over dense grids. The decrease condition is
/// estimated on the product of the state and interaction grids with fresh
/// noise replicates; the noise at a grid point depends only on its
/// coordinates, so refining a grid never lowers a reported maximum.
pub fn grid_check(solution: &SbcSolution, region: &RegionSpec, agent: &Agent, opts: &GridOptions) -> Result<GridReport> {
    if opts.per_axis < 2 || opts.interaction_per_axis < 1 || opts.replicates < 1 {
        return Err(invalid("grid check needs per_axis >= 2, interaction_per_axis >= 1 and replicates >= 1"));
    }
    check_dim("agent interaction dimension", agent.interaction_dim(), region.interaction_dim())?;
    let surface = residual_surface(solution, region, opts.per_axis)?;
    let mut maxima: Vec<ConditionMax> = Vec::new();
    let mut record = |kind: ResidualKind, v: f64| {
        if let Some(c) = maxima.iter_mut().find(|c| c.condition == kind.name()) {
            c.max = c.max.max(v);
            c.points += 1;
        } else {
            maxima.push(ConditionMax { condition: kind.name().to_string(), max: v, points: 1 });
        }
    };
    for row in &surface {
        for &(k, v) in &row.residuals {
            record(k, v);
        }
    }

    let seed = StreamSeed::new(opts.seed);
    let theta = solution.tuple();
    let ctx = context_for(solution, opts.mu);
    let xs = region.state.grid(opts.per_axis);
    let ws = w_grid(&region.interaction, opts.interaction_per_axis);
    let g5 = par::map_indexed(xs.len(), |i| -> Result<f64> {
        let x = &xs[i];
        let mut best = f64::NEG_INFINITY;
        for w in &ws {
            let mut rng = coordinate_stream(&seed, x, w);
            let successors = (0..opts.replicates).map(|_| agent.step(x, w, &mut rng)).collect::<Result<Vec<_>>>()?;
            let point = SamplePoint { x_hat: x.clone(), w_hat: w.clone(), successors, in_x0: false, in_xc: false };
            let v = residuals(&solution.template, &point, &theta, &ctx)
                .into_iter()
                .find(|(k, _)| *k == ResidualKind::G5)
                .map(|(_, v)| v)
                .unwrap_or(f64::NEG_INFINITY);
            best = best.max(v);
        }
        Ok(best)
    });
    for v in g5 {
        record(ResidualKind::G5, v?);
    }
    if let Some(c) = maxima.iter_mut().find(|c| c.condition == ResidualKind::G5.name()) {
        c.points *= ws.len();
    }
    maxima.sort_by(|a, b| a.condition.cmp(&b.condition));
    Ok(GridReport { per_axis: opts.per_axis, interaction_per_axis: opts.interaction_per_axis, replicates: opts.replicates, maxima })
}

fn w_grid(b: &BoxRegion, per_axis: usize) -> Vec<Vec<f64>> {
    if per_axis == 1 {
        vec![b.midpoint()]
    } else {
        b.grid(per_axis)
    }
}

/// Rows `x_0, ..., x_{n-1}, B, g1, g2, g3, g4` (blank where a condition is
/// inactive).
pub fn write_surface_csv(rows: &[SurfaceRow], path: &Path) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.x.len());
    let mut s = String::new();
    for i in 0..n {
        write!(s, "x_{i},").unwrap();
    }
    s.push_str("B,g1,g2,g3,g4\n");
    for r in rows {
        for v in &r.x {
            write!(s, "{v:e},").unwrap();
        }
        write!(s, "{:e}", r.b).unwrap();
        for kind in [ResidualKind::G1, ResidualKind::G2, ResidualKind::G3, ResidualKind::G4] {
            s.push(',');
            if let Some((_, v)) = r.residuals.iter().find(|(k, _)| *k == kind) {
                write!(s, "{v:e}").unwrap();
            }
        }
        s.push('\n');
    }
    write_file(path, &s)
}

/// Rows `trial, k, agent, state coordinates...`.
pub fn write_trajectories_csv(network: &Network, trajectories: &[Vec<Vec<f64>>], path: &Path) -> Result<()> {
    let offsets = network.offsets();
    let width = network.agents.iter().map(Agent::state_dim).max().unwrap_or(0);
    let mut s = String::from("trial,k,agent");
    for i in 0..width {
        write!(s, ",s_{i}").unwrap();
    }
    s.push('\n');
    for (t, traj) in trajectories.iter().enumerate() {
        for (k, x) in traj.iter().enumerate() {
            for (i, a) in network.agents.iter().enumerate() {
                write!(s, "{t},{k},{i}").unwrap();
                for v in &x[offsets[i]..offsets[i] + a.state_dim()] {
                    write!(s, ",{v:e}").unwrap();
                }
                s.push('\n');
            }
        }
    }
    write_file(path, &s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
