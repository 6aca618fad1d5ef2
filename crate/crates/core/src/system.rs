//! Agent dynamics, network topology and trajectory simulation.
//!
//! Agents are closed-loop black boxes: the deployed controller is already
//! folded into the transition map, so a linear agent reads
//! `x+ = A x + b + D w + R s` with `s` drawn from its [`NoiseSpec`], and a
//! nonlinear agent reads `x+ = f(x, w) + R s`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::region::{BoxRegion, RegionSpec};
use crate::rng::{tag, StreamSeed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    StandardGaussian,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub dim: usize,
}

impl NoiseSpec {
    pub fn gaussian(dim: usize) -> Self {
        NoiseSpec { kind: NoiseKind::StandardGaussian, dim }
    }

    pub fn none(dim: usize) -> Self {
        NoiseSpec { kind: NoiseKind::None, dim }
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind == NoiseKind::None
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            NoiseKind::StandardGaussian => (0..self.dim).map(|_| rng.sample(StandardNormal)).collect(),
            NoiseKind::None => vec![0.0; self.dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearAgent {
    a: DMatrix<f64>,
    b: DVector<f64>,
    d: DMatrix<f64>,
    r: DMatrix<f64>,
    noise: NoiseSpec,
}

impl LinearAgent {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, d: DMatrix<f64>, r: DMatrix<f64>, noise: NoiseSpec) -> Result<Self> {
        let n = a.nrows();
        check_dim("state matrix columns", n, a.ncols())?;
        check_dim("affine offset", n, b.len())?;
        check_dim("interaction matrix rows", n, d.nrows())?;
        check_dim("noise gain rows", n, r.nrows())?;
        check_dim("noise gain columns", noise.dim, r.ncols())?;
        Ok(LinearAgent { a, b, d, r, noise })
    }

    /// Build from row-major nested vectors.
    pub fn from_rows(a: &[Vec<f64>], b: &[f64], d: &[Vec<f64>], r: &[Vec<f64>], noise: NoiseKind) -> Result<Self> {
        let a = matrix_from_rows(a)?;
        let d = matrix_from_rows(d)?;
        let r = matrix_from_rows(r)?;
        let dim = r.ncols();
        Self::new(a, DVector::from_column_slice(b), d, r, NoiseSpec { kind: noise, dim })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub type TransitionFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Agent given only through a deterministic transition oracle `f(x, w)`;
/// noise is added outside as `R s`.
#[derive(Clone)]
pub struct NonlinearAgent {
    transition: Arc<TransitionFn>,
    state_dim: usize,
    interaction_dim: usize,
    r: DMatrix<f64>,
    noise: NoiseSpec,
}

impl NonlinearAgent {
    pub fn new(
        transition: Arc<TransitionFn>,
        state_dim: usize,
        interaction_dim: usize,
        r: DMatrix<f64>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        check_dim("noise gain rows", state_dim, r.nrows())?;
        check_dim("noise gain columns", noise.dim, r.ncols())?;
        Ok(NonlinearAgent { transition, state_dim, interaction_dim, r, noise })
    }
}

impl fmt::Debug for NonlinearAgent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearAgent")
            .field("state_dim", &self.state_dim)
            .field("interaction_dim", &self.interaction_dim)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum Agent {
    Linear(LinearAgent),
    Nonlinear(NonlinearAgent),
}

impl Agent {
    pub fn state_dim(&self) -> usize {
        match self {
            Agent::Linear(a) => a.a.nrows(),
            Agent::Nonlinear(a) => a.state_dim,
        }
    }

    pub fn interaction_dim(&self) -> usize {
        match self {
            Agent::Linear(a) => a.d.ncols(),
            Agent::Nonlinear(a) => a.interaction_dim,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        match self {
            Agent::Linear(a) => a.noise,
            Agent::Nonlinear(a) => a.noise,
        }
    }

    fn noise_gain(&self) -> &DMatrix<f64> {
        match self {
            Agent::Linear(a) => &a.r,
            Agent::Nonlinear(a) => &a.r,
        }
    }

    /// Noise-free part of the transition.
    pub fn drift(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        check_dim("interaction", self.interaction_dim(), w.len())?;
        match self {
            Agent::Linear(a) => {
                let x = DVector::from_column_slice(x);
                let w = DVector::from_column_slice(w);
                let y = &a.a * x + &a.b + &a.d * w;
                Ok(y.as_slice().to_vec())
            }
            Agent::Nonlinear(a) => {
                let y = (a.transition)(x, w);
                check_dim("transition output", a.state_dim, y.len())?;
                Ok(y)
            }
        }
    }

    /// One transition with an explicit noise realization.
    pub fn step_with_noise(&self, x: &[f64], w: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_dim("noise sample", self.noise().dim, noise.len())?;
        let mut y = self.drift(x, w)?;
        let r = self.noise_gain();
        for (i, yi) in y.iter_mut().enumerate() {
            for (j, s) in noise.iter().enumerate() {
                *yi += r[(i, j)] * s;
            }
        }
        Ok(y)
    }

    /// One transition with noise drawn from the agent's noise spec.
    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], w: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let noise = self.noise();
        if noise.is_deterministic() {
            return self.drift(x, w);
        }
        let s = noise.draw(rng);
        self.step_with_noise(x, w, &s)
    }
}

/// Free-function form of [`Agent::step`].
pub fn step<R: Rng + ?Sized>(agent: &Agent, x: &[f64], w: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    agent.step(x, w, rng)
}

/// Agent `reader` sees the full state of agent `source` in the interaction
/// coordinates `offset .. offset + dim(x_source)`. Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub reader: usize,
    pub source: usize,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub agents: usize,
    pub edges: Vec<Edge>,
}

impl NetworkTopology {
    pub fn new(agents: usize, edges: Vec<Edge>) -> Result<Self> {
        let t = NetworkTopology { agents, edges };
        t.validate_indices()?;
        Ok(t)
    }

    /// Chain where agent `i` reads agent `i - 1`.
    pub fn chain(agents: usize) -> Self {
        let edges = (1..agents).map(|i| Edge { reader: i, source: i - 1, offset: 0 }).collect();
        NetworkTopology { agents, edges }
    }

    /// Every agent reads every other agent. Only meaningful for gain
    /// bookkeeping; embeddings all use offset 0.
    pub fn all_to_all(agents: usize) -> Self {
        let edges = (0..agents)
            .flat_map(|i| (0..agents).filter(move |&j| j != i).map(move |j| Edge { reader: i, source: j, offset: 0 }))
            .collect();
        NetworkTopology { agents, edges }
    }

    fn validate_indices(&self) -> Result<()> {
        for e in &self.edges {
            if e.reader >= self.agents || e.source >= self.agents {
                return Err(invalid(format!("edge {e:?} references a missing agent")));
            }
            if e.reader == e.source {
                return Err(invalid(format!("self-edge on agent {}", e.reader)));
            }
        }
        Ok(())
    }

    pub fn in_degree_per_source(&self) -> Vec<usize> {
        let mut deg = vec![0; self.agents];
        for e in &self.edges {
            deg[e.source] += 1;
        }
        deg
    }

    /// Permute agent labels: agent `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { reader: perm[e.reader], source: perm[e.source], offset: e.offset })
            .collect();
        NetworkTopology { agents: self.agents, edges }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub agents: Vec<Agent>,
    pub topology: NetworkTopology,
}

impl Network {
    pub fn new(agents: Vec<Agent>, topology: NetworkTopology) -> Result<Self> {
        check_dim("topology agent count", agents.len(), topology.agents)?;
        topology.validate_indices()?;
        for e in &topology.edges {
            let need = e.offset + agents[e.source].state_dim();
            if need > agents[e.reader].interaction_dim() {
                return Err(invalid(format!(
                    "edge {e:?}: source state does not fit into the reader's interaction vector"
                )));
            }
        }
        Ok(Network { agents, topology })
    }

    pub fn stacked_dim(&self) -> usize {
        self.agents.iter().map(Agent::state_dim).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.agents
            .iter()
            .map(|a| {
                let o = acc;
                acc += a.state_dim();
                o
            })
            .collect()
    }

    /// Interaction vector of every agent, assembled from the stacked state.
    pub fn interactions(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let offsets = self.offsets();
        let mut ws: Vec<Vec<f64>> = self.agents.iter().map(|a| vec![0.0; a.interaction_dim()]).collect();
        for e in &self.topology.edges {
            let n = self.agents[e.source].state_dim();
            let src = &x[offsets[e.source]..offsets[e.source] + n];
            ws[e.reader][e.offset..e.offset + n].copy_from_slice(src);
        }
        ws
    }

    /// One synchronous network step; agent `i` at time `k` draws its noise
    /// from stream `(SIMULATION, trial, i, k)`.
    pub fn step(&self, x: &[f64], k: u64, seed: &StreamSeed, trial: u64) -> Result<Vec<f64>> {
        check_dim("stacked state", self.stacked_dim(), x.len())?;
        let offsets = self.offsets();
        let ws = self.interactions(x);
        let mut next = Vec::with_capacity(x.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = &x[offsets[i]..offsets[i] + agent.state_dim()];
            let yi = if agent.noise().is_deterministic() {
                agent.drift(xi, &ws[i])?
            } else {
                let mut rng = seed.stream(&[tag::SIMULATION, trial, i as u64, k]);
                agent.step(xi, &ws[i], &mut rng)?
            };
            next.extend(yi);
        }
        Ok(next)
    }
}

/// Trajectory `[x(0), ..., x(T)]` of the interconnected network.
pub fn simulate(network: &Network, x0: &[f64], horizon: usize, seed: &StreamSeed, trial: u64) -> Result<Vec<Vec<f64>>> {
    check_dim("initial stacked state", network.stacked_dim(), x0.len())?;
    let mut traj = Vec::with_capacity(horizon + 1);
    traj.push(x0.to_vec());
    for k in 0..horizon {
        let next = network.step(&traj[k], k as u64, seed, trial)?;
        traj.push(next);
    }
    Ok(traj)
}

/// Vehicle platoon: `M` identical closed-loop followers in a chain.
#[derive(Clone, Debug)]
pub struct Platoon {
    pub network: Network,
    pub regions: Vec<RegionSpec>,
}

/// Open-loop platoon matrices and the deployed feedback, folded together.
pub mod platoon {
    pub const A_OPEN: [[f64; 2]; 2] = [[1.0, -1.0], [0.0, 1.0]];
    /// Linear part of `u = K x + u0`.
    pub const FEEDBACK: [[f64; 2]; 2] = [[-0.2, 1.1], [0.01, -0.9]];
    pub const FEEDBACK_OFFSET: [f64; 2] = [0.1, 0.0];
    pub const NOISE_GAIN: [f64; 2] = [0.03, 0.06];
    pub const STATE: [[f64; 2]; 2] = [[0.0, 0.7], [-3.55, 0.2]];
    pub const INITIAL: [[f64; 2]; 2] = [[0.35, 0.7], [-0.9, 0.2]];
    pub const COLLISION: [[f64; 2]; 2] = [[0.0, 0.3], [-3.55, -2.9]];
}

pub fn platoon_agent(interconnection_degree: f64) -> LinearAgent {
    use platoon::*;
    let a = DMatrix::from_fn(2, 2, |i, j| A_OPEN[i][j] + FEEDBACK[i][j]);
    let b = DVector::from_column_slice(&FEEDBACK_OFFSET);
    let d = DMatrix::from_row_slice(2, 2, &[0.0, interconnection_degree, 0.0, 0.0]);
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&NOISE_GAIN));
    LinearAgent::new(a, b, d, r, NoiseSpec::gaussian(2)).expect("platoon dimensions are consistent")
}

pub fn platoon_regions() -> RegionSpec {
    use platoon::*;
    let state = BoxRegion::from_intervals(&STATE).expect("valid box");
    RegionSpec::new(
        state.clone(),
        BoxRegion::from_intervals(&INITIAL).expect("valid box"),
        BoxRegion::from_intervals(&COLLISION).expect("valid box"),
        state,
    )
    .expect("platoon regions are consistent")
}

pub fn build_platoon(agents: usize, interconnection_degree: f64) -> Result<Platoon> {
    if agents == 0 {
        return Err(invalid("a platoon needs at least one vehicle"));
    }
    let agent = platoon_agent(interconnection_degree);
    let network = Network::new(vec![Agent::Linear(agent); agents], NetworkTopology::chain(agents))?;
    Ok(Platoon { network, regions: vec![platoon_regions(); agents] })
}
