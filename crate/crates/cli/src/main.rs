use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sbcert_core::certificate::Mode;
use sbcert_core::config::{AgentSpec, PipelineConfig};
use sbcert_core::pipeline::{self, CertificateReport, SynthesisReport};
use sbcert_core::system::TransitionFn;

mod oracle;

#[derive(Parser)]
#[command(name = "sbcert", version, about = "Data-driven barrier certificates and collision-risk bounds for networks of black-box agents")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; without it the built-in vehicle platoon is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Number of agents (overrides the config).
    #[arg(long, global = true)]
    agents: Option<usize>,
    /// Built-in platoon at the laptop-sized budget instead of the full one.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the Lipschitz constant, eps2 per contraction factor, N and N_hat.
    SampleSize,
    /// Draw one dataset per agent and write the manifest.
    Collect,
    /// Solve the scenario programs for the collected datasets.
    Synthesize {
        /// Also write every scenario LP in plain text to this directory.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Compose per-agent verdicts into a network certificate.
    Certify {
        /// Verdicts file (default: OUT/verdicts.json).
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Monte Carlo and grid cross-checks of a certificate.
    Validate {
        /// Certificate file (default: OUT/certificate.json).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Run every step on the vehicle platoon (or the given config).
    #[command(alias = "run")]
    PlatoonDemo,
    /// Print the effective config as JSON.
    PrintConfig,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None if c.desk_scale => PipelineConfig::platoon_desk(5),
        None => PipelineConfig::platoon_published(100),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if let Some(m) = c.agents {
        cfg.agents.set_count(m);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn oracle_for(cfg: &PipelineConfig) -> Result<Option<Arc<TransitionFn>>> {
    match &cfg.agents {
        AgentSpec::External { command, state_dim, .. } => Ok(Some(oracle::Oracle::spawn(command, *state_dim)?.into_transition())),
        _ => Ok(None),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn or_default(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

/// Exit status of a finished run: 0 certified, 1 valid run without a certificate.
fn run(cli: Cli) -> Result<u8> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Cmd::PrintConfig => print_json(&cfg)?,
        Cmd::SampleSize => {
            let r = pipeline::sample_size(&cfg)?;
            let mut shown: Vec<&sbcert_core::complexity::SamplePlan> = Vec::new();
            for a in &r.agents {
                if shown.contains(&&a.plan) {
                    continue;
                }
                shown.push(&a.plan);
                eprintln!("{}: L_g = {:?}, eps2 = {:?}, N = {}, N_hat = {}", a.agent_id, a.plan.l_g, a.plan.epsilon2, a.plan.n, a.plan.n_hat);
            }
            if shown.len() == 1 && r.agents.len() > 1 {
                eprintln!("(same plan for all {} agents)", r.agents.len());
            }
            print_json(&r)?;
        }
        Cmd::Collect => {
            let network = pipeline::build_network(&cfg, oracle_for(&cfg)?)?;
            let (manifest, _) = pipeline::collect(&cfg, &network, &out)?;
            eprintln!("wrote {} datasets to {}", manifest.datasets.len(), out.display());
        }
        Cmd::Synthesize { dump_lp } => {
            let plan = pipeline::sample_size(&cfg)?;
            let (manifest, datasets) = pipeline::load_manifest(&out)?;
            if let Some(dir) = dump_lp {
                pipeline::dump_programs(&cfg, &datasets, &dir)?;
            }
            let verdicts = pipeline::synthesize_all(&cfg, &datasets, &plan)?;
            let report = pipeline::synthesis_report(&cfg, verdicts, &manifest.provenance.datasets);
            pipeline::write_json(&report, &out.join("verdicts.json"))?;
            for v in &report.verdicts {
                eprintln!("{}: eta* = {:?}, eta* + eps1 <= 0: {}", v.agent_id, v.eta_star, v.feasible_for_rop);
            }
            if !report.all_feasible {
                return Ok(1);
            }
        }
        Cmd::Certify { verdicts } => {
            let path = or_default(&verdicts, &out, "verdicts.json");
            let s: SynthesisReport = pipeline::read_json(&path)?;
            let report = pipeline::certify(&cfg, &s.verdicts, &s.provenance.datasets)?;
            pipeline::write_json(&report, &out.join("certificate.json"))?;
            let c = &report.certificate;
            eprintln!("rule {}: bound {:.6e} over horizon {}, confidence {}", c.rule, c.bound, c.horizon, c.confidence);
            for n in &c.notes {
                eprintln!("note: {n}");
            }
        }
        Cmd::Validate { certificate } => {
            let path = or_default(&certificate, &out, "certificate.json");
            let cert: CertificateReport = pipeline::read_json(&path)?;
            let network = pipeline::build_network(&cfg, oracle_for(&cfg)?)?;
            let v = pipeline::validate(&cfg, &network, &cert, &out)?;
            pipeline::write_json(&v, &out.join("validation.json"))?;
            let mc = &v.monte_carlo;
            eprintln!(
                "{} collisions in {} trials (rate {:.3e}, 99% upper {:.3e}); certified {:.3e}; consistent: {}",
                mc.collisions, mc.trials, mc.empirical_rate, mc.upper_99, v.certified_bound, v.consistent
            );
            if !v.consistent {
                return Ok(1);
            }
        }
        Cmd::PlatoonDemo => {
            let demo = pipeline::run_all(&cfg, oracle_for(&cfg)?, &out)?;
            if let Some(e) = &demo.error {
                eprintln!("{e}");
                return Ok(1);
            }
            let c = &demo.certificate.as_ref().expect("certified").certificate;
            let v = demo.validation.as_ref().expect("validated");
            eprintln!(
                "{} agents, N = {}: bound {:.6e} (confidence {}), Monte Carlo rate {:.3e}; reports in {}",
                cfg.agent_count(),
                demo.sample_size.samples,
                c.bound,
                c.confidence,
                v.monte_carlo.empirical_rate,
                out.display()
            );
            if !v.consistent {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use sbcert_core::Error as E;
    match e.downcast_ref::<E>() {
        Some(E::Infeasible(_) | E::SmallGain(_)) => 1,
        Some(E::Io(_)) => 3,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("sbcert") {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
