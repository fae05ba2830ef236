use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use congestion_pricing::harness::{self, scenarios, ExperimentConfig, Method};

#[derive(Parser)]
#[command(
    name = "cpricing",
    version,
    about = "Day-to-day bottleneck simulation and learned congestion pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name (parallel, single, sioux) or scenario file; overrides the config.
    #[arg(long)]
    scenario: Option<String>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides CPRICING_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scenario {
            cfg.scenario = s.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let out = harness::output_root(self.out.as_deref(), &cfg);
        Ok((cfg, out))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    DpDdpg,
    FullyDistributed,
    Centralized,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::DpDdpg => Method::DpDdpg,
            MethodArg::FullyDistributed => Method::FullyDistributed,
            MethodArg::Centralized => Method::Centralized,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the zero-toll dynamics to convergence and write baseline metrics.
    Simulate(Common),
    /// Train a pricing method for every configured set.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "dp-ddpg")]
        method: MethodArg,
    },
    /// Run one greedy cycle of a saved distributed policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Act at every pair instead of only where queues persist.
        #[arg(long)]
        no_switching: bool,
    },
    /// Train and evaluate all methods under the same budget.
    Compare(Common),
    /// Write a scenario as a TOML scenario file.
    ExportScenario {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate(c) => {
            let (cfg, out) = c.load()?;
            let s = harness::simulate(&cfg, &out.join("simulate"))?;
            println!(
                "converged: {} after {} days; total wait {:.6}; total travel time {:.6}",
                s.converged,
                s.wait_trace.len(),
                s.record.total_wait(),
                s.record.total_travel_time()
            );
        }
        Command::Train { common, method } => {
            let (cfg, out) = common.load()?;
            let method = Method::from(method);
            let logs = harness::train(&cfg, method, &out)?;
            for s in &logs {
                println!(
                    "{} set {}: final total wait {:.6}",
                    method.as_str(),
                    s.set,
                    s.evaluation.final_total_wait()
                );
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            no_switching,
        } => {
            let (cfg, out) = common.load()?;
            let log = harness::evaluate(&cfg, &checkpoint, !no_switching, &out)?;
            println!("final total wait {:.6}", log.final_total_wait());
        }
        Command::Compare(c) => {
            let (cfg, out) = c.load()?;
            for s in harness::compare(&cfg, &out)? {
                println!(
                    "{} set {}: final total wait {:.6}",
                    s.method.as_str(),
                    s.set,
                    s.final_total_wait
                );
            }
        }
        Command::ExportScenario { scenario, out } => {
            let net = scenarios::resolve_scenario(&scenario)?;
            scenarios::save_scenario_file(&net, &out)?;
        }
    }
    Ok(())
}
