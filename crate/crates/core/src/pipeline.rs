//! Config-driven orchestration: sample sizes, data collection, per-agent
//! synthesis, composition and validation, each step producing a JSON report.
//!
//! Reports carry provenance (config hash, root seed, dataset hashes) and no
//! timestamps, so reruns with the same config are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::{Mode, SbcSolution};
use crate::complexity::{sample_plan, LipschitzBreakdown, SamplePlan};
use crate::composition::{
    certify_deterministic_relaxed, certify_relaxed, certify_small_gain, deterministic_infinite, RiskCertificate,
};
use crate::config::{AgentSpec, PipelineConfig};
use crate::error::{invalid, Error, Result};
use crate::region::RegionSpec;
use crate::rng::StreamSeed;
use crate::sampling::{draw_dataset, load_dataset, save_dataset, Dataset, SAMPLING_MEASURE};
use crate::scenario::{build_sop, synthesize, ScenarioOptions, ScenarioVerdict};
use crate::system::{matrix_from_rows, Agent, LinearAgent, Network, NoiseSpec, NonlinearAgent, TransitionFn};
use crate::validate::{
    grid_check, monte_carlo_risk, residual_surface, sample_trajectories, write_surface_csv, write_trajectories_csv,
    GridOptions, GridReport, MonteCarloReport,
};

pub const TOOL: &str = "sbcert";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHash {
    pub agent_id: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub datasets: Vec<DatasetHash>,
}

impl Provenance {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Provenance {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.sha256(),
            seed: cfg.seed,
            mode: cfg.mode,
            datasets: Vec::new(),
        }
    }
}

pub fn agent_id(i: usize) -> String {
    format!("agent-{i}")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), message: e.to_string() })
}

// ---------------------------------------------------------------- network

/// Builds the agents and topology described by the config. External agents
/// need `oracle`, the noise-free transition supplied by the caller.
pub fn build_network(cfg: &PipelineConfig, oracle: Option<Arc<TransitionFn>>) -> Result<Network> {
    let m = cfg.agent_count();
    match &cfg.agents {
        AgentSpec::Platoon { interconnection_degree, .. } => Ok(crate::system::build_platoon(m, *interconnection_degree)?.network),
        AgentSpec::Linear { a, b, d, r, noise, topology, .. } => {
            let agent = LinearAgent::from_rows(a, b, d, r, *noise)?;
            Network::new(vec![Agent::Linear(agent); m], topology.build(m)?)
        }
        AgentSpec::External { state_dim, interaction_dim, r, noise, topology, .. } => {
            let oracle = oracle.ok_or_else(|| invalid("external agents need a transition oracle"))?;
            let r = matrix_from_rows(r)?;
            let noise = NoiseSpec { kind: *noise, dim: r.ncols() };
            let agent = NonlinearAgent::new(oracle, *state_dim, *interaction_dim, r, noise)?;
            Network::new(vec![Agent::Nonlinear(agent); m], topology.build(m)?)
        }
    }
}

// ------------------------------------------------------------ sample size

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPlan {
    pub agent_id: String,
    /// Lipschitz breakdown per grid value (absent with an explicit `L_g`).
    pub lipschitz: Vec<LipschitzBreakdown>,
    pub plan: SamplePlan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeReport {
    pub provenance: Provenance,
    pub free_variables: Vec<String>,
    pub epsilon1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub exponent: u32,
    pub agents: Vec<AgentPlan>,
    /// Samples actually drawn per agent (the minimum unless overridden).
    pub samples: u64,
    pub n_hat: usize,
}

impl SampleSizeReport {
    pub fn required(&self, agent: usize) -> u64 {
        self.agents[agent].plan.n
    }
}

/// Steps 1 to 3 for every agent. Identical agents get identical plans.
pub fn sample_size(cfg: &PipelineConfig) -> Result<SampleSizeReport> {
    let budget = cfg.budget()?;
    let grid = cfg.kappa_grid();
    let deterministic = cfg.mode.is_deterministic();
    let mut agents = Vec::with_capacity(cfg.agent_count());
    for i in 0..cfg.agent_count() {
        let bounds = cfg.lipschitz_bounds(i)?;
        let lipschitz = match &bounds {
            Some(b) => grid.iter().map(|&k| b.with_kappa(k).breakdown()).collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let l_g_min = match (cfg.lipschitz.l_g, lipschitz.is_empty()) {
            (Some(l), _) => l,
            (None, false) => lipschitz.iter().map(|b| b.l_g).fold(f64::INFINITY, f64::min),
            (None, true) => return Err(invalid("no Lipschitz data")),
        };
        if budget.epsilon1 > l_g_min {
            return Err(invalid(format!("epsilon1 = {} exceeds L_g = {l_g_min}", budget.epsilon1)));
        }
        let plan = sample_plan(&budget, bounds.as_ref(), &grid, cfg.lipschitz.kappa_policy, cfg.lipschitz.l_g, deterministic)?;
        agents.push(AgentPlan { agent_id: agent_id(i), lipschitz, plan });
    }
    let n_hat = agents[0].plan.n_hat;
    let required = agents.iter().map(|a| a.plan.n).max().unwrap_or(0);
    Ok(SampleSizeReport {
        provenance: Provenance::new(cfg),
        free_variables: cfg.free_variables(),
        epsilon1: budget.epsilon1,
        beta1: budget.beta1,
        beta2: budget.beta2,
        exponent: budget.exponent,
        agents,
        samples: cfg.samples_override.unwrap_or(required),
        n_hat,
    })
}

// ---------------------------------------------------------------- collect

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub agent_id: String,
    pub path: String,
    pub sha256: String,
    pub n: usize,
    pub n_hat: usize,
    /// Data rows in the CSV: `N * (N_hat + 1)`.
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub sampling: String,
    pub datasets: Vec<ManifestEntry>,
}

pub fn dataset_path(out: &Path, i: usize) -> PathBuf {
    out.join("datasets").join(format!("{}.csv", agent_id(i)))
}

/// Draws every agent's dataset in memory.
pub fn draw_datasets(cfg: &PipelineConfig, network: &Network, plan: &SampleSizeReport) -> Result<Vec<Dataset>> {
    let regions = cfg.regions()?;
    let seed = StreamSeed::new(cfg.seed);
    let n = usize::try_from(plan.samples).map_err(|_| invalid("sample count does not fit in memory"))?;
    network
        .agents
        .iter()
        .zip(&regions)
        .enumerate()
        .map(|(i, (agent, region))| draw_dataset(agent, region, n, plan.n_hat, &seed, i as u64, &agent_id(i)))
        .collect()
}

/// Draws and writes one dataset per agent under `out/datasets`, plus
/// `out/manifest.json`.
pub fn collect(cfg: &PipelineConfig, network: &Network, out: &Path) -> Result<(Manifest, Vec<Dataset>)> {
    let plan = sample_size(cfg)?;
    let datasets = draw_datasets(cfg, network, &plan)?;
    let mut entries = Vec::with_capacity(datasets.len());
    for (i, d) in datasets.iter().enumerate() {
        let path = dataset_path(out, i);
        save_dataset(d, &path)?;
        entries.push(ManifestEntry {
            agent_id: d.agent_id.clone(),
            path: relative(out, &path),
            sha256: sha256_file(&path)?,
            n: d.len(),
            n_hat: d.n_hat,
            rows: d.len() * (d.n_hat + 1),
        });
    }
    let mut provenance = Provenance::new(cfg);
    provenance.datasets = entries.iter().map(|e| DatasetHash { agent_id: e.agent_id.clone(), path: e.path.clone(), sha256: e.sha256.clone() }).collect();
    let manifest = Manifest { provenance, sampling: SAMPLING_MEASURE.to_string(), datasets: entries };
    write_json(&manifest, &out.join("manifest.json"))?;
    Ok((manifest, datasets))
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

/// Loads the datasets listed in a manifest and checks their hashes.
pub fn load_manifest(out: &Path) -> Result<(Manifest, Vec<Dataset>)> {
    let manifest: Manifest = read_json(&out.join("manifest.json"))?;
    let mut datasets = Vec::with_capacity(manifest.datasets.len());
    for e in &manifest.datasets {
        let path = out.join(&e.path);
        let digest = sha256_file(&path)?;
        if digest != e.sha256 {
            return Err(invalid(format!("{}: hash {digest} does not match the manifest", path.display())));
        }
        datasets.push(load_dataset(&path)?);
    }
    Ok((manifest, datasets))
}

// ------------------------------------------------------------- synthesize

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub provenance: Provenance,
    pub verdicts: Vec<ScenarioVerdict>,
    pub all_feasible: bool,
}

pub fn scenario_options(cfg: &PipelineConfig) -> ScenarioOptions {
    ScenarioOptions {
        mode: cfg.mode,
        mu: if cfg.mode.is_deterministic() { 0.0 } else { cfg.budget.mu },
        varrho: cfg.varrho,
        horizon: cfg.horizon as f64,
        alpha_cap: cfg.lipschitz.l_alpha,
        rho_cap: cfg.lipschitz.l_rho,
        tighten_levels: true,
    }
}

/// Solves the scenario programs of every agent. Agents run sequentially;
/// the programs of one agent (one per grid value) run in parallel.
pub fn synthesize_all(cfg: &PipelineConfig, datasets: &[Dataset], plan: &SampleSizeReport) -> Result<Vec<ScenarioVerdict>> {
    crate::error::check_dim("dataset count", cfg.agent_count(), datasets.len())?;
    let budget = cfg.budget()?;
    let opts = scenario_options(cfg);
    datasets
        .iter()
        .enumerate()
        .map(|(i, d)| synthesize(d, &cfg.template, &cfg.kappa_grid(), &budget, &cfg.pinned, &opts, Some(plan.required(i))))
        .collect()
}

pub fn synthesis_report(cfg: &PipelineConfig, verdicts: Vec<ScenarioVerdict>, datasets: &[DatasetHash]) -> SynthesisReport {
    let mut provenance = Provenance::new(cfg);
    provenance.datasets = datasets.to_vec();
    let all_feasible = verdicts.iter().all(|v| v.feasible_for_rop);
    SynthesisReport { provenance, verdicts, all_feasible }
}

/// Writes the plain-text LP of every (agent, grid value) pair.
pub fn dump_programs(cfg: &PipelineConfig, datasets: &[Dataset], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let opts = scenario_options(cfg);
    let mut paths = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        for (j, &k) in cfg.kappa_grid().iter().enumerate() {
            let prog = build_sop(d, &cfg.template, k, &cfg.pinned, &opts)?;
            let path = dir.join(format!("{}-kappa{j}.lp.txt", agent_id(i)));
            fs::write(&path, prog.lp.to_text())?;
            paths.push(path);
        }
    }
    Ok(paths)
}

// ---------------------------------------------------------------- certify

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub provenance: Provenance,
    pub requested_mode: Mode,
    pub fell_back: bool,
    /// Why the requested rule was not used, when it was not.
    pub fallback_reason: Option<String>,
    pub certificate: RiskCertificate,
}

/// Composes the per-agent solutions with the rule of the configured mode,
/// falling back to the union bound when the small-gain check fails and
/// the config allows it.
pub fn certify(cfg: &PipelineConfig, verdicts: &[ScenarioVerdict], datasets: &[DatasetHash]) -> Result<CertificateReport> {
    crate::error::check_dim("verdict count", cfg.agent_count(), verdicts.len())?;
    let failing: Vec<&str> = verdicts.iter().filter(|v| !v.feasible_for_rop).map(|v| v.agent_id.as_str()).collect();
    if !failing.is_empty() {
        return Err(Error::Infeasible(format!("agents without a certificate: {}", failing.join(", "))));
    }
    let solutions: Vec<SbcSolution> = verdicts.iter().map(|v| v.solution.clone().expect("feasible verdicts carry a solution")).collect();
    let topology = match &cfg.agents {
        AgentSpec::Platoon { .. } => crate::system::NetworkTopology::chain(cfg.agent_count()),
        AgentSpec::Linear { topology, .. } | AgentSpec::External { topology, .. } => topology.build(cfg.agent_count())?,
    };
    let composed = match cfg.mode {
        Mode::StochasticSmallGain => certify_small_gain(&solutions, &topology, cfg.horizon, cfg.all_pairs_gain),
        Mode::DeterministicSmallGain => deterministic_infinite(&solutions, &topology, cfg.all_pairs_gain),
        Mode::StochasticRelaxed => certify_relaxed(&solutions, cfg.horizon),
        Mode::DeterministicRelaxed => certify_deterministic_relaxed(&solutions),
    };
    let (mut certificate, fell_back, reason) = match composed {
        Ok(c) => (c, false, None),
        Err(Error::SmallGain(msg)) if cfg.fallback_to_relaxed => {
            log::warn!("small-gain check failed ({msg}); falling back to the union bound");
            let c = if cfg.mode.is_deterministic() {
                certify_deterministic_relaxed(&solutions)?
            } else {
                certify_relaxed(&solutions, cfg.horizon)?
            };
            (c, true, Some(msg))
        }
        Err(e) => return Err(e),
    };
    if let Some(note) = rounding_note(certificate.bound) {
        certificate.notes.push(note);
    }
    let mut provenance = Provenance::new(cfg);
    provenance.datasets = datasets.to_vec();
    Ok(CertificateReport { provenance, requested_mode: cfg.mode, fell_back, fallback_reason: reason, certificate })
}

/// Flags bounds that would be understated when rounded to whole percent.
pub fn rounding_note(bound: f64) -> Option<String> {
    let pct = (bound * 100.0).round();
    (bound > 0.0 && bound < 1.0 && pct >= 1.0 && pct / 100.0 < bound)
        .then(|| format!("exact bound {bound:.6e}; rounding it to {pct}% would understate the risk"))
}

// --------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub provenance: Provenance,
    pub monte_carlo: MonteCarloReport,
    pub certified_bound: f64,
    /// `rate <= bound + 3 sqrt(bound / trials)`.
    pub consistent: bool,
    pub slack: f64,
    pub grid: Vec<GridReport>,
    /// Largest grid residual per agent minus `eta* + eps1`; positive values
    /// mark points where the sampled certificate does not extend.
    pub grid_excess: Vec<f64>,
    pub files: Vec<String>,
}

pub fn consistency_slack(bound: f64, trials: u64) -> f64 {
    3.0 * (bound.max(0.0) / trials as f64).sqrt()
}

/// Monte Carlo risk, grid residual checks and plot CSVs in `out`.
pub fn validate(cfg: &PipelineConfig, network: &Network, report: &CertificateReport, out: &Path) -> Result<ValidationReport> {
    let regions: Vec<RegionSpec> = cfg.regions()?;
    let seed = StreamSeed::new(cfg.seed);
    let v = &cfg.validation;
    let horizon = cfg.horizon;
    let mc = monte_carlo_risk(network, &regions, horizon, v.trials, &seed, v.event)?;
    let bound = report.certificate.bound;
    let slack = consistency_slack(bound, v.trials);
    let consistent = mc.empirical_rate <= bound + slack;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut grid = Vec::new();
    let mut grid_excess = Vec::new();
    let opts = GridOptions {
        per_axis: v.grid_per_axis,
        interaction_per_axis: v.interaction_per_axis,
        replicates: v.replicates,
        mu: if cfg.mode.is_deterministic() { 0.0 } else { cfg.budget.mu },
        seed: cfg.seed,
    };
    for (i, sol) in report.certificate.per_agent.iter().enumerate() {
        let g = grid_check(sol, &regions[i], &network.agents[i], &opts)?;
        let worst = sol.mode.residual_kinds().iter().filter_map(|k| g.max_of(*k)).fold(f64::NEG_INFINITY, f64::max);
        grid_excess.push(worst - (sol.eta_star + sol.epsilon1));
        grid.push(g);
        if regions[i].state_dim() == 2 {
            let rows = residual_surface(sol, &regions[i], v.grid_per_axis)?;
            let path = out.join(format!("surface-{}.csv", agent_id(i)));
            write_surface_csv(&rows, &path)?;
            files.push(relative(out, &path));
        }
    }
    if v.trajectories > 0 {
        let traj = sample_trajectories(network, &regions, horizon, v.trajectories, &seed)?;
        let path = out.join("trajectories.csv");
        write_trajectories_csv(network, &traj, &path)?;
        files.push(relative(out, &path));
    }
    Ok(ValidationReport {
        provenance: report.provenance.clone(),
        monte_carlo: mc,
        certified_bound: bound,
        consistent,
        slack,
        grid,
        grid_excess,
        files,
    })
}

// ------------------------------------------------------------------- demo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub sample_size: SampleSizeReport,
    pub manifest: Manifest,
    pub synthesis: SynthesisReport,
    pub certificate: Option<CertificateReport>,
    pub validation: Option<ValidationReport>,
    pub error: Option<String>,
}

/// Runs every step and writes each report under `out`. Stops after
/// synthesis if some agent is not certified, after certification if the
/// composition fails; the partial report records why.
pub fn run_all(cfg: &PipelineConfig, oracle: Option<Arc<TransitionFn>>, out: &Path) -> Result<DemoReport> {
    fs::create_dir_all(out)?;
    write_json(cfg, &out.join("config.json"))?;
    let network = build_network(cfg, oracle)?;
    let plan = sample_size(cfg)?;
    write_json(&plan, &out.join("sample_size.json"))?;
    let (manifest, datasets) = collect(cfg, &network, out)?;
    let hashes = manifest.provenance.datasets.clone();
    let verdicts = synthesize_all(cfg, &datasets, &plan)?;
    let synthesis = synthesis_report(cfg, verdicts, &hashes);
    write_json(&synthesis, &out.join("verdicts.json"))?;
    let mut demo = DemoReport { sample_size: plan, manifest, synthesis, certificate: None, validation: None, error: None };
    let cert = match certify(cfg, &demo.synthesis.verdicts, &hashes) {
        Ok(c) => c,
        Err(e @ (Error::Infeasible(_) | Error::SmallGain(_))) => {
            demo.error = Some(e.to_string());
            write_json(&demo, &out.join("report.json"))?;
            return Ok(demo);
        }
        Err(e) => return Err(e),
    };
    write_json(&cert, &out.join("certificate.json"))?;
    let validation = validate(cfg, &network, &cert, out)?;
    write_json(&validation, &out.join("validation.json"))?;
    demo.certificate = Some(cert);
    demo.validation = Some(validation);
    write_json(&demo, &out.join("report.json"))?;
    Ok(demo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_flag() {
        assert!(rounding_note(1.0987e-2).is_some());
        assert!(rounding_note(0.8).is_none());
        assert!(rounding_note(0.0).is_none());
    }

    #[test]
    fn published_sample_size() {
        let cfg = PipelineConfig::platoon_published(3);
        let r = sample_size(&cfg).unwrap();
        assert_eq!(r.agents[0].plan.n, 244_993);
        assert_eq!(r.n_hat, 11);
        assert!((r.agents[0].lipschitz[1].l_g - 1.7804).abs() < 5e-5);
    }

    #[test]
    fn epsilon_above_lipschitz_is_rejected() {
        let mut cfg = PipelineConfig::platoon_published(1);
        cfg.budget.epsilon1 = 1.0;
        cfg.lipschitz.l_g = Some(0.5);
        assert!(sample_size(&cfg).is_err());
    }
}
