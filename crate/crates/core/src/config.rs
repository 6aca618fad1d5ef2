//! JSON pipeline configuration.
//!
//! One document describes the agents, their regions, the certificate
//! template, the confidence budget, the contraction-factor grid, pinned
//! parameters, Lipschitz data, the horizon and the validation settings.
//! Missing optional fields fall back to values derived from the rest of the
//! document (norm bounds from the regions, `P_max` from the coefficient
//! boxes, matrix bounds from built-in agents).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::{CertificateTemplate, Mode, DEFAULT_VARRHO};
use crate::complexity::{ConfidenceBudget, DynamicsBounds, KappaPolicy, LipschitzBounds};
use crate::error::{invalid, Result};
use crate::region::{BoxRegion, RegionSpec};
use crate::scenario::{free_variables, Pinned};
use crate::system::{platoon, Edge, NetworkTopology, NoiseKind};
use crate::validate::CollisionEvent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologySpec {
    Chain,
    None,
    Edges(Vec<Edge>),
}

impl TopologySpec {
    pub fn build(&self, agents: usize) -> Result<NetworkTopology> {
        match self {
            TopologySpec::Chain => Ok(NetworkTopology::chain(agents)),
            TopologySpec::None => NetworkTopology::new(agents, Vec::new()),
            TopologySpec::Edges(e) => NetworkTopology::new(agents, e.clone()),
        }
    }
}

fn default_topology() -> TopologySpec {
    TopologySpec::Chain
}

fn default_noise() -> NoiseKind {
    NoiseKind::StandardGaussian
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    /// Identical closed-loop vehicles in a chain.
    Platoon { count: usize, interconnection_degree: f64 },
    /// Identical linear agents `x+ = A x + b + D w + R s`.
    Linear {
        count: usize,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        d: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        #[serde(default = "default_noise")]
        noise: NoiseKind,
        #[serde(default = "default_topology")]
        topology: TopologySpec,
    },
    /// Identical agents whose noise-free transition is answered by an
    /// external program (see the command-line front end).
    External {
        count: usize,
        command: Vec<String>,
        state_dim: usize,
        interaction_dim: usize,
        r: Vec<Vec<f64>>,
        #[serde(default = "default_noise")]
        noise: NoiseKind,
        #[serde(default = "default_topology")]
        topology: TopologySpec,
    },
}

impl AgentSpec {
    pub fn count(&self) -> usize {
        match self {
            AgentSpec::Platoon { count, .. } | AgentSpec::Linear { count, .. } | AgentSpec::External { count, .. } => *count,
        }
    }

    pub fn set_count(&mut self, m: usize) {
        match self {
            AgentSpec::Platoon { count, .. } | AgentSpec::Linear { count, .. } | AgentSpec::External { count, .. } => *count = m,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            AgentSpec::Platoon { .. } => false,
            AgentSpec::Linear { noise, .. } | AgentSpec::External { noise, .. } => *noise == NoiseKind::None,
        }
    }
}

/// Budget as written in the config; `c` and `m` are derived and only
/// checked when given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    #[serde(default)]
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default)]
    pub mu: f64,
    pub epsilon1: f64,
    #[serde(default)]
    pub variance_bound: f64,
    /// Defaults to state dimension plus interaction dimension.
    #[serde(default)]
    pub exponent: Option<u32>,
    #[serde(default)]
    pub c: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipschitzSpec {
    pub dynamics: Option<DynamicsBounds>,
    pub p_max: Option<f64>,
    pub l_alpha: Option<f64>,
    pub l_rho: Option<f64>,
    pub s: Option<f64>,
    pub s_prime: Option<f64>,
    /// Use this constant instead of computing one.
    pub l_g: Option<f64>,
    pub kappa_policy: KappaPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationSpec {
    pub trials: u64,
    pub event: CollisionEvent,
    pub grid_per_axis: usize,
    pub interaction_per_axis: usize,
    pub replicates: usize,
    pub trajectories: u64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec { trials: 10_000, event: CollisionEvent::AnyAgent, grid_per_axis: 100, interaction_per_axis: 3, replicates: 11, trajectories: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionsSpec {
    pub state: BoxRegion,
    pub initial: BoxRegion,
    pub collision: BoxRegion,
    pub interaction: BoxRegion,
}

impl RegionsSpec {
    pub fn build(&self) -> Result<RegionSpec> {
        RegionSpec::new(self.state.clone(), self.initial.clone(), self.collision.clone(), self.interaction.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub agents: AgentSpec,
    /// Same regions for every agent; built-in platoons default to their own.
    #[serde(default)]
    pub regions: Option<RegionsSpec>,
    /// Per-agent overrides of the leader-style degenerate interaction set.
    #[serde(default)]
    pub interaction_overrides: Vec<(usize, BoxRegion)>,
    pub template: CertificateTemplate,
    pub budget: BudgetSpec,
    #[serde(default = "default_grid")]
    pub kappa_grid: Vec<f64>,
    #[serde(default)]
    pub pinned: Pinned,
    #[serde(default)]
    pub lipschitz: LipschitzSpec,
    pub horizon: u64,
    #[serde(default = "default_varrho")]
    pub varrho: f64,
    #[serde(default)]
    pub fallback_to_relaxed: bool,
    #[serde(default)]
    pub all_pairs_gain: bool,
    /// Use this many samples instead of the computed minimum (the
    /// confidence statement is void when it is smaller).
    #[serde(default)]
    pub samples_override: Option<u64>,
    #[serde(default)]
    pub validation: ValidationSpec,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid() -> Vec<f64> {
    vec![0.9, 0.99]
}

fn default_varrho() -> f64 {
    DEFAULT_VARRHO
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| crate::Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON (field order of the struct, shortest round-trip floats).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical JSON with the output directory blanked, so the
    /// same run written to two places has one hash.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.canonical_json().as_bytes()))
    }

    pub fn agent_count(&self) -> usize {
        self.agents.count()
    }

    pub fn regions(&self) -> Result<Vec<RegionSpec>> {
        let base = match (&self.regions, &self.agents) {
            (Some(r), _) => r.build()?,
            (None, AgentSpec::Platoon { .. }) => crate::system::platoon_regions(),
            (None, _) => return Err(invalid("regions are required for non-platoon agents")),
        };
        let mut out = vec![base; self.agent_count()];
        for (i, b) in &self.interaction_overrides {
            let r = out.get_mut(*i).ok_or_else(|| invalid(format!("interaction override for missing agent {i}")))?;
            r.interaction = b.clone();
        }
        Ok(out)
    }

    pub fn kappa_grid(&self) -> Vec<f64> {
        crate::scenario::effective_grid(self.mode, &self.kappa_grid)
    }

    pub fn free_variables(&self) -> Vec<String> {
        free_variables(self.mode, &self.pinned, self.template.len())
    }

    pub fn budget(&self) -> Result<ConfidenceBudget> {
        let regions = self.regions()?;
        let exponent = self.budget.exponent.unwrap_or((regions[0].state_dim() + regions[0].interaction_dim()) as u32);
        Ok(ConfidenceBudget {
            beta1: self.budget.beta1,
            beta2: self.budget.beta2,
            mu: self.budget.mu,
            epsilon1: self.budget.epsilon1,
            variance_bound: self.budget.variance_bound,
            c: self.free_variables().len(),
            m: self.kappa_grid().len(),
            exponent,
        })
    }

    /// Lipschitz data for agent `i` at contraction factor 1 (the plan sets
    /// the factor); `None` when only an explicit `L_g` is configured.
    pub fn lipschitz_bounds(&self, i: usize) -> Result<Option<LipschitzBounds>> {
        let spec = &self.lipschitz;
        let dynamics = match (&spec.dynamics, &self.agents) {
            (Some(d), _) => d.clone(),
            (None, AgentSpec::Platoon { interconnection_degree, .. }) => {
                let a = crate::system::platoon_agent(*interconnection_degree);
                DynamicsBounds::Linear { l_a: a.a().norm(), l_d: a.d().norm(), offset_norm: a.b().norm() }
            }
            (None, AgentSpec::Linear { a, b, d, .. }) => DynamicsBounds::Linear {
                l_a: crate::system::matrix_from_rows(a)?.norm(),
                l_d: crate::system::matrix_from_rows(d)?.norm(),
                offset_norm: b.iter().map(|v| v * v).sum::<f64>().sqrt(),
            },
            (None, AgentSpec::External { .. }) => {
                if spec.l_g.is_some() {
                    return Ok(None);
                }
                return Err(invalid("external agents need lipschitz.dynamics or lipschitz.l_g"));
            }
        };
        let regions = self.regions()?;
        let r = &regions[i];
        let l_alpha = match spec.l_alpha.or(self.pinned.alpha) {
            Some(v) => v,
            None if !self.mode.uses_alpha() => 0.0,
            None => return Err(invalid("alpha is free: lipschitz.l_alpha must bound it")),
        };
        let l_rho = match spec.l_rho.or(self.pinned.rho) {
            Some(v) => v,
            None => return Err(invalid("rho is free: lipschitz.l_rho must bound it")),
        };
        Ok(Some(LipschitzBounds {
            dynamics,
            p_max: spec.p_max.unwrap_or_else(|| self.template.gerschgorin_bound()),
            l_alpha,
            l_rho,
            s: spec.s.unwrap_or_else(|| r.state.max_norm()),
            s_prime: spec.s_prime.unwrap_or_else(|| r.interaction.max_norm()),
            kappa: 1.0,
        }))
    }

    pub fn validate(&self) -> Result<()> {
        if self.agent_count() == 0 {
            return Err(invalid("at least one agent is required"));
        }
        self.template.validate()?;
        let regions = self.regions()?;
        crate::error::check_dim("template dimension", regions[0].state_dim(), self.template.dim())?;
        let deterministic = self.mode.is_deterministic();
        if deterministic && !self.agents.is_deterministic() {
            return Err(invalid(format!("mode {} requires noise-free agents", self.mode)));
        }
        for (name, v, used) in [("psi", self.pinned.psi, self.mode.uses_psi()), ("alpha", self.pinned.alpha, self.mode.uses_alpha())] {
            if !used && v.is_some_and(|v| v != 0.0) {
                log::warn!("{name} is not used in mode {}; ignoring its pinned value", self.mode);
            }
        }
        if !deterministic && self.agents.is_deterministic() {
            log::warn!("stochastic mode on noise-free agents");
        }
        if !self.mode.is_relaxed() && self.kappa_grid.iter().any(|k| !(*k > 0.0 && *k < 1.0)) {
            return Err(invalid("kappa grid values must lie in (0, 1)"));
        }
        if self.mode.is_relaxed() && !(self.varrho < 0.0) {
            return Err(invalid("varrho must be negative"));
        }
        let budget = self.budget()?;
        if let Some(c) = self.budget.c {
            crate::scenario::check_free_count(self.mode, &self.pinned, self.template.len(), c)?;
        }
        budget.validate(deterministic)?;
        if let Some(p) = self.lipschitz.p_max {
            self.template.validate_p_max(p)?;
        }
        for i in 0..self.agent_count() {
            if let Some(b) = self.lipschitz_bounds(i)? {
                b.validate()?;
            }
        }
        if let AgentSpec::Linear { topology, count, .. } | AgentSpec::External { topology, count, .. } = &self.agents {
            topology.build(*count)?;
        }
        Ok(())
    }

    /// The vehicle platoon at a budget that runs on a laptop in minutes.
    pub fn platoon_desk(agents: usize) -> Self {
        PipelineConfig {
            mode: Mode::StochasticSmallGain,
            seed: 20_240_501,
            output_dir: PathBuf::from("out/platoon-desk"),
            agents: AgentSpec::Platoon { count: agents, interconnection_degree: 0.01 },
            regions: None,
            interaction_overrides: Vec::new(),
            template: desk_template(),
            budget: BudgetSpec {
                beta1: 1e-4,
                beta2: 1e-2,
                mu: 0.08,
                epsilon1: 0.3,
                variance_bound: 7e-6,
                exponent: Some(3),
                c: Some(9),
            },
            kappa_grid: vec![0.9, 0.99],
            pinned: Pinned { lambda: Some(25.0), alpha: Some(1e-4), rho: Some(9e-7), ..Pinned::default() },
            lipschitz: LipschitzSpec { p_max: Some(0.4), ..LipschitzSpec::default() },
            horizon: 100,
            varrho: DEFAULT_VARRHO,
            fallback_to_relaxed: true,
            all_pairs_gain: false,
            samples_override: None,
            validation: ValidationSpec { trials: 10_000, grid_per_axis: 100, interaction_per_axis: 3, replicates: 11, ..ValidationSpec::default() },
        }
    }

    /// The vehicle platoon at the published budget (hundreds of thousands
    /// of samples per agent).
    pub fn platoon_published(agents: usize) -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out/platoon-published"),
            template: CertificateTemplate {
                basis: vec![vec![2, 0], vec![4, 0], vec![1, 1], vec![0, 4], vec![0, 2]],
                bounds: vec![[-0.001, 0.001], [-0.001, 0.001], [-0.001, 0.001], [-0.14, 0.14], [-0.001, 0.001]],
            },
            budget: BudgetSpec {
                beta1: 1e-4,
                beta2: 1e-4,
                mu: 0.08,
                epsilon1: 0.08,
                variance_bound: 7e-6,
                exponent: Some(3),
                c: Some(7),
            },
            pinned: Pinned { lambda: Some(10.0), psi: Some(1e-4), alpha: Some(1e-4), rho: Some(9e-7), gamma: None },
            lipschitz: LipschitzSpec {
                dynamics: Some(DynamicsBounds::Linear { l_a: PUBLISHED_L_A, l_d: 0.01, offset_norm: 0.0 }),
                p_max: Some(0.14),
                l_alpha: Some(1e-4),
                l_rho: Some(9e-7),
                s: Some(3.8148),
                s_prime: Some(3.15),
                l_g: None,
                kappa_policy: KappaPolicy::MaxOverGrid,
            },
            fallback_to_relaxed: false,
            ..Self::platoon_desk(agents)
        }
    }
}

/// State-matrix bound that, with the published norm bounds, reproduces the
/// published `L_g = 1.7804`; recovered numerically, not a unique choice.
pub const PUBLISHED_L_A: f64 = 0.818_557_779_015_552_8;

/// Basis `{1, d^2, d^4, d v, v^4, v^2}` over the state `(d, v)`.
pub fn desk_template() -> CertificateTemplate {
    CertificateTemplate {
        basis: vec![vec![0, 0], vec![2, 0], vec![4, 0], vec![1, 1], vec![0, 4], vec![0, 2]],
        bounds: vec![[0.0, 0.35], [-0.01, 0.01], [-0.01, 0.01], [-0.01, 0.01], [-0.4, 0.4], [-0.02, 0.02]],
    }
}

/// Region bundle of the built-in platoon, spelled out for config files.
pub fn platoon_regions_spec() -> RegionsSpec {
    RegionsSpec {
        state: BoxRegion::from_intervals(&platoon::STATE).expect("valid"),
        initial: BoxRegion::from_intervals(&platoon::INITIAL).expect("valid"),
        collision: BoxRegion::from_intervals(&platoon::COLLISION).expect("valid"),
        interaction: BoxRegion::from_intervals(&platoon::STATE).expect("valid"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        PipelineConfig::platoon_desk(5).validate().unwrap();
        PipelineConfig::platoon_published(100).validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_hash() {
        let cfg = PipelineConfig::platoon_desk(5);
        let back = PipelineConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.sha256(), cfg.sha256());
        assert_eq!(cfg.sha256().len(), 64);
    }

    #[test]
    fn inconsistent_c_names_free_variables() {
        let mut cfg = PipelineConfig::platoon_desk(5);
        cfg.budget.c = Some(7);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("eta, gamma, psi, q1"), "{msg}");
    }

    #[test]
    fn deterministic_mode_needs_noise_free_agents() {
        let mut cfg = PipelineConfig::platoon_desk(2);
        cfg.mode = Mode::DeterministicSmallGain;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_lipschitz_defaults() {
        let cfg = PipelineConfig::platoon_desk(2);
        let b = cfg.lipschitz_bounds(0).unwrap().unwrap();
        let DynamicsBounds::Linear { l_a, l_d, offset_norm } = b.dynamics else { panic!() };
        assert!((l_a - 0.6601f64.sqrt()).abs() < 1e-12);
        assert!((l_d - 0.01).abs() < 1e-15);
        assert!((offset_norm - 0.1).abs() < 1e-15);
        assert!((b.s - (0.49f64 + 3.55 * 3.55).sqrt()).abs() < 1e-12);
        assert_eq!(b.p_max, 0.4);
    }
}
