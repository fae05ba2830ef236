//! Experiment orchestration behind the command-line tool.

pub mod config;
pub mod scenarios;
pub mod tntp;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::run_centralized_training;
use crate::controller::{
    run_cycle, run_training, write_set_logs, Agents, Cooperation, CycleLog, LearnerMode, Phase, Scenario, SetLog,
    ZeroTollRun,
};
use crate::ddpg::DdpgLearner;
use crate::error::{Error, Result};
use crate::within_day::DAY_CSV_HEADER;
pub use config::ExperimentConfig;

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "CPRICING_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DpDdpg,
    FullyDistributed,
    Centralized,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DpDdpg, Method::FullyDistributed, Method::Centralized];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DpDdpg => "dp_ddpg",
            Method::FullyDistributed => "fully_distributed",
            Method::Centralized => "centralized",
        }
    }
}

/// `--out` wins, then the environment variable, then the config, then `runs`.
pub fn output_root(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Builds the scenario named by the config and runs it to its zero-toll
/// fixed point.
pub fn prepare_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    match &cfg.behavior {
        None => scenarios::prepare(&cfg.scenario, cfg.convergence_eps, cfg.max_convergence_days),
        Some(b) => {
            let mut net = scenarios::resolve_scenario(&cfg.scenario)?;
            net.params = b.clone();
            Scenario::prepare(net, cfg.convergence_eps, cfg.max_convergence_days)
        }
    }
}

/// Trains `method` for every set of the config. Checkpoints go below `out`
/// when given.
pub fn train_method(
    scenario: &Scenario,
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<SetLog>> {
    match method {
        Method::DpDdpg => run_training(scenario, &cfg.ddpg, &cfg.control, Cooperation::FULL, seed, out),
        Method::FullyDistributed => run_training(scenario, &cfg.ddpg, &cfg.control, Cooperation::NONE, seed, out),
        Method::Centralized => run_centralized_training(
            scenario,
            &cfg.ddpg,
            &cfg.control,
            cfg.centralized_breakpoints,
            seed,
            out,
        ),
    }
}

/// Writes the zero-toll convergence trace and the converged day.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<ZeroTollRun> {
    let mut net = scenarios::resolve_scenario(&cfg.scenario)?;
    if let Some(b) = &cfg.behavior {
        net.params = b.clone();
    }
    let run = ZeroTollRun::run(net, cfg.convergence_eps, cfg.max_convergence_days)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let trace_path = out.join("convergence.csv");
    let mut trace = BufWriter::new(fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?);
    writeln!(trace, "day,total_wait")?;
    for (d, w) in run.wait_trace.iter().enumerate() {
        writeln!(trace, "{},{w}", d + 1)?;
    }
    trace.flush()?;

    let day_path = out.join("baseline_day.csv");
    let mut day = BufWriter::new(fs::File::create(&day_path).map_err(|e| Error::io(&day_path, e))?);
    writeln!(day, "{DAY_CSV_HEADER}")?;
    let ids: Vec<usize> = run.net.bottlenecks.iter().map(|b| b.id).collect();
    run.record.write_csv_rows(&mut day, 0, &ids)?;
    day.flush()?;

    let stats_path = out.join("baseline.json");
    fs::write(&stats_path, serde_json::to_string_pretty(&run.baseline)?).map_err(|e| Error::io(&stats_path, e))?;
    run.state.save(&out.join("snapshot.json"))?;
    Ok(run)
}

/// Trains one method and writes its CSVs and checkpoints to `out/<method>`.
pub fn train(cfg: &ExperimentConfig, method: Method, out: &Path) -> Result<Vec<SetLog>> {
    let scenario = prepare_scenario(cfg)?;
    let dir = out.join(method.as_str());
    let logs = train_method(&scenario, cfg, method, cfg.seed, Some(&dir.join("checkpoints")))?;
    write_set_logs(&dir, method.as_str(), &scenario, &logs)?;
    Ok(logs)
}

/// One greedy cycle of a saved distributed-policy checkpoint.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, switching: bool, out: &Path) -> Result<CycleLog> {
    let scenario = prepare_scenario(cfg)?;
    let learner = DdpgLearner::load(checkpoint)?;
    let mut agents = Agents::from_learner(LearnerMode::Shared, learner, cfg.seed);
    let coop = if switching {
        Cooperation::FULL
    } else {
        Cooperation::NONE
    };
    let log = run_cycle(&scenario, &mut agents, &cfg.control, coop, Phase::Eval, 0, 1)?;
    let set = SetLog {
        set: 0,
        cycles: Vec::new(),
        evaluation: log.clone(),
    };
    write_set_logs(&out.join("evaluate"), "evaluate", &scenario, &[set])?;
    Ok(log)
}

/// Final-evaluation summary of one set.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub set: usize,
    pub final_total_wait: f64,
    pub final_travel_time: f64,
}

/// Trains and evaluates all methods under the same budget and seed; writes
/// a combined metrics CSV and a per-set summary.
pub fn compare(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Summary>> {
    let scenario = prepare_scenario(cfg)?;
    let dir = out.join("compare");
    let mut all = Vec::new();
    let mut summary = Vec::new();
    for m in Method::ALL {
        let logs = train_method(&scenario, cfg, m, cfg.seed, None)?;
        for s in &logs {
            summary.push(Summary {
                method: m,
                set: s.set,
                final_total_wait: s.evaluation.final_total_wait(),
                final_travel_time: s.evaluation.final_travel_time(),
            });
        }
        all.push((m, logs));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("metrics.csv");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    writeln!(w, "{}", crate::controller::metrics_header(&scenario.net))?;
    for (m, logs) in &all {
        for s in logs {
            for log in s.cycles.iter().chain(std::iter::once(&s.evaluation)) {
                crate::controller::write_metrics_rows(&mut w, m.as_str(), log)?;
            }
        }
    }
    w.flush()?;
    let path = dir.join("summary.csv");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
    writeln!(w, "method,set,final_total_wait,final_travel_time,baseline_total_wait")?;
    for s in &summary {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.method.as_str(),
            s.set,
            s.final_total_wait,
            s.final_travel_time,
            scenario.baseline_total_wait()
        )?;
    }
    w.flush()?;
    Ok(summary)
}
