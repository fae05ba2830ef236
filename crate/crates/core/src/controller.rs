//! Distributed pricing: one deterministic-policy agent applied at every
//! (tolled bottleneck, slot) pair, cooperating through a reward term shared
//! across bottlenecks and through switching learning off where the local
//! moving-average wait is negligible.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::day_to_day::{compute_baseline, evolve_one_day, run_to_convergence, BaselineStats, EvolutionState};
use crate::ddpg::{DdpgConfig, DdpgLearner, Transition};
use crate::error::{Error, Result};
use crate::net_model::Network;
use crate::within_day::{simulate_day, DayRecord};

/// Three-component observation of one (bottleneck, slot) pair.
pub type SlotState = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerMode {
    /// One learner and one replay buffer for every pair.
    #[default]
    Shared,
    /// An independent learner per (bottleneck, slot) pair.
    PerPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Half-width `n` of the switching window.
    pub n_window: usize,
    /// Switching threshold on the windowed mean wait.
    pub dw: f64,
    pub cycle_days: usize,
    pub cycles_per_set: usize,
    pub sets: usize,
    pub toll_floor: f64,
    /// Learner updates per day; `None` means one per active pair.
    pub updates_per_day: Option<usize>,
    pub learner_mode: LearnerMode,
    /// Exploration std multiplier applied once per cycle.
    pub noise_decay: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            n_window: 1,
            dw: 0.1,
            cycle_days: 40,
            cycles_per_set: 15,
            sets: 10,
            toll_floor: 0.0,
            updates_per_day: None,
            learner_mode: LearnerMode::Shared,
            noise_decay: 1.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dw >= 0.0) {
            return Err(Error::Config(format!("dw = {} must be non-negative", self.dw)));
        }
        if self.cycle_days == 0 || self.cycles_per_set == 0 || self.sets == 0 {
            return Err(Error::Config(
                "cycle_days, cycles_per_set and sets must be positive".into(),
            ));
        }
        if !(self.noise_decay > 0.0) {
            return Err(Error::Config(format!(
                "noise_decay = {} must be positive",
                self.noise_decay
            )));
        }
        if !self.toll_floor.is_finite() {
            return Err(Error::Config("toll_floor must be finite".into()));
        }
        Ok(())
    }
}

/// Per-tolled-bottleneck scale factors of the observation and reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizers {
    /// Positions of the tolled bottlenecks.
    pub tolled: Vec<usize>,
    pub mu: Vec<f64>,
    /// Mean baseline wait over the slots where the baseline queued.
    pub norm: Vec<f64>,
}

impl Normalizers {
    pub fn new(net: &Network, baseline: &BaselineStats) -> Result<Self> {
        let tolled = net.tolled();
        if tolled.is_empty() {
            return Err(Error::Config("scenario has no tolled bottleneck".into()));
        }
        let norm = baseline.norms_for(&tolled)?;
        let mu = tolled.iter().map(|&i| net.bottlenecks[i].capacity_mu).collect();
        Ok(Self { tolled, mu, norm })
    }

    pub fn len(&self) -> usize {
        self.tolled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tolled.is_empty()
    }
}

/// Observation of every tolled pair, `[tolled k][slot]`: relative excess
/// inflow, normalized wait and normalized toll deviation from the day mean.
pub fn build_states(day: &DayRecord, norms: &Normalizers) -> Vec<Vec<SlotState>> {
    norms
        .tolled
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mu = norms.mu[k];
            let scale = norms.norm[k];
            let tolls = &day.toll[i];
            let mean_toll = tolls.iter().sum::<f64>() / tolls.len() as f64;
            (0..tolls.len())
                .map(|t| {
                    [
                        (day.inflow[i][t] - mu) / mu,
                        day.wait[i][t] / scale,
                        (tolls[t] - mean_toll) / scale,
                    ]
                })
                .collect()
        })
        .collect()
}

/// Adds `actions[k][t]` to the toll of every active pair and clamps at
/// `floor`; inactive pairs keep their toll.
pub fn apply_actions(
    tolls: &mut [Vec<f64>],
    tolled: &[usize],
    actions: &[Vec<f64>],
    active: &[Vec<bool>],
    floor: f64,
    bound: f64,
) -> Result<()> {
    for (k, &i) in tolled.iter().enumerate() {
        for (t, (&b, &on)) in actions[k].iter().zip(&active[k]).enumerate() {
            if !(b.abs() <= bound) {
                return Err(Error::Precondition(format!(
                    "action {b} at bottleneck position {i}, slot {t} exceeds bound {bound}"
                )));
            }
            if on {
                tolls[i][t] = (tolls[i][t] + b).max(floor);
            }
        }
    }
    Ok(())
}

/// Mean over all slots of each tolled bottleneck's normalized wait,
/// averaged over the tolled set.
pub fn shared_term(day: &DayRecord, norms: &Normalizers) -> f64 {
    let sum: f64 = norms
        .tolled
        .iter()
        .zip(&norms.norm)
        .map(|(&i, n)| {
            let w = &day.wait[i];
            w.iter().sum::<f64>() / w.len() as f64 / n
        })
        .sum();
    sum / norms.len() as f64
}

/// Cooperative reward `[tolled k][slot]`: the pair's own normalized wait
/// plus the network-wide shared term, negated.
pub fn shared_reward(day: &DayRecord, norms: &Normalizers) -> Vec<Vec<f64>> {
    let shared = shared_term(day, norms);
    norms
        .tolled
        .iter()
        .zip(&norms.norm)
        .map(|(&i, n)| day.wait[i].iter().map(|w| -(w / n + shared)).collect())
        .collect()
}

/// `active[k][t]` is false where the mean wait over slots `t-n..=t+n` is
/// below `dw`; slots outside the day count as zero wait.
pub fn switching_mask(waits: &[&[f64]], n_window: usize, dw: f64) -> Vec<Vec<bool>> {
    let width = (2 * n_window + 1) as f64;
    waits
        .iter()
        .map(|w| {
            let horizon = w.len();
            (0..horizon)
                .map(|t| {
                    let lo = t.saturating_sub(n_window);
                    let hi = (t + n_window).min(horizon - 1);
                    let mean = w[lo..=hi].iter().sum::<f64>() / width;
                    !(mean < dw)
                })
                .collect()
        })
        .collect()
}

/// The zero-toll converged state a cycle restarts from, plus its normalizers.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub net: Network,
    pub snapshot: EvolutionState,
    pub baseline: BaselineStats,
    /// The day `snapshot` plays under zero tolls.
    pub baseline_record: DayRecord,
    pub norms: Normalizers,
    pub converged: bool,
    /// Total wait of every day of the zero-toll run.
    pub wait_trace: Vec<f64>,
}

/// The zero-toll day-to-day run a scenario is calibrated from.
#[derive(Clone, Debug)]
pub struct ZeroTollRun {
    pub net: Network,
    /// State on the last simulated day.
    pub state: EvolutionState,
    pub baseline: BaselineStats,
    /// The day `state` plays under zero tolls.
    pub record: DayRecord,
    pub converged: bool,
    pub wait_trace: Vec<f64>,
}

impl ZeroTollRun {
    pub fn run(net: Network, eps: f64, max_days: usize) -> Result<Self> {
        let zero = zero_tolls(&net);
        let mut state = EvolutionState::initial(&net, &zero)?;
        let conv = run_to_convergence(&mut state, &net, &zero, eps, max_days)?;
        if !conv.converged {
            log::warn!("zero-toll dynamics did not converge within {max_days} days; using the last state");
        }
        let baseline = compute_baseline(&net, &state)?;
        let record = simulate_day(&net, &state.departures, &zero)?;
        Ok(Self {
            net,
            state,
            baseline,
            record,
            converged: conv.converged,
            wait_trace: conv.wait_trace,
        })
    }
}

impl Scenario {
    /// Runs the zero-toll day-to-day dynamics to convergence and freezes the
    /// result.
    pub fn prepare(net: Network, eps: f64, max_days: usize) -> Result<Self> {
        Self::from_run(ZeroTollRun::run(net, eps, max_days)?)
    }

    /// Fails when a tolled bottleneck never queues in the run.
    pub fn from_run(run: ZeroTollRun) -> Result<Self> {
        let norms = Normalizers::new(&run.net, &run.baseline)?;
        Ok(Self {
            net: run.net,
            snapshot: run.state,
            baseline: run.baseline,
            baseline_record: run.record,
            norms,
            converged: run.converged,
            wait_trace: run.wait_trace,
        })
    }

    pub fn baseline_total_wait(&self) -> f64 {
        self.baseline_record.total_wait()
    }

    pub fn baseline_travel_time(&self) -> f64 {
        self.baseline_record.total_travel_time()
    }
}

pub fn zero_tolls(net: &Network) -> Vec<Vec<f64>> {
    vec![vec![0.0; net.horizon()]; net.n_bottlenecks()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    /// 1-based day within the cycle.
    pub day: usize,
    pub total_travel_time: f64,
    pub total_wait: f64,
    /// Per bottleneck (all of them, network order).
    pub wait_sums: Vec<f64>,
    pub active_pairs: usize,
    pub critic_loss: Option<f64>,
}

impl DayMetrics {
    pub fn from_record(day: usize, rec: &DayRecord, active_pairs: usize, critic_loss: Option<f64>) -> Self {
        Self {
            day,
            total_travel_time: rec.total_travel_time(),
            total_wait: rec.total_wait(),
            wait_sums: rec.wait_sums(),
            active_pairs,
            critic_loss,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub set: usize,
    pub cycle: usize,
    pub phase: Phase,
    pub days: Vec<DayMetrics>,
    /// `[day][tolled k][slot]` tolls in force on each simulated day.
    pub tolls: Vec<Vec<Vec<f64>>>,
}

impl CycleLog {
    pub fn final_total_wait(&self) -> f64 {
        self.days.last().map_or(0.0, |d| d.total_wait)
    }

    pub fn final_travel_time(&self) -> f64 {
        self.days.last().map_or(0.0, |d| d.total_travel_time)
    }
}

/// Which parts of the cooperative scheme a distributed controller uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cooperation {
    pub shared_reward: bool,
    pub switching: bool,
}

impl Cooperation {
    pub const FULL: Self = Self {
        shared_reward: true,
        switching: true,
    };
    pub const NONE: Self = Self {
        shared_reward: false,
        switching: false,
    };
}

/// The learner(s) behind a distributed controller.
#[derive(Clone, Debug)]
pub struct Agents {
    mode: LearnerMode,
    cfg: DdpgConfig,
    seed: u64,
    shared: DdpgLearner,
    per_pair: BTreeMap<(usize, usize), DdpgLearner>,
}

impl Agents {
    /// Wraps an existing learner, e.g. one loaded from a checkpoint.
    pub fn from_learner(mode: LearnerMode, learner: DdpgLearner, seed: u64) -> Self {
        Self {
            mode,
            cfg: learner.config().clone(),
            seed,
            shared: learner,
            per_pair: BTreeMap::new(),
        }
    }

    pub fn new(mode: LearnerMode, cfg: DdpgConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            mode,
            shared: DdpgLearner::new(cfg.clone(), seed)?,
            cfg,
            seed,
            per_pair: BTreeMap::new(),
        })
    }

    pub fn shared(&self) -> &DdpgLearner {
        &self.shared
    }

    pub fn shared_mut(&mut self) -> &mut DdpgLearner {
        &mut self.shared
    }

    fn learner(&mut self, key: (usize, usize)) -> Result<&mut DdpgLearner> {
        match self.mode {
            LearnerMode::Shared => Ok(&mut self.shared),
            LearnerMode::PerPair => {
                if !self.per_pair.contains_key(&key) {
                    let seed = mix_seed(self.seed, &[key.0 as u64, key.1 as u64]);
                    let mut l = DdpgLearner::new(self.cfg.clone(), seed)?;
                    l.set_noise_std(self.shared.noise_std());
                    self.per_pair.insert(key, l);
                }
                Ok(self.per_pair.get_mut(&key).expect("inserted above"))
            }
        }
    }

    pub fn set_noise_std(&mut self, std: f64) {
        self.shared.set_noise_std(std);
        for l in self.per_pair.values_mut() {
            l.set_noise_std(std);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.shared.is_finite() && self.per_pair.values().all(DdpgLearner::is_finite)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.shared.save(&dir.join("learner.ckpt"))?;
        for ((k, t), l) in &self.per_pair {
            l.save(&dir.join(format!("learner_{k}_{t}.ckpt")))?;
        }
        Ok(())
    }
}

/// Deterministic seed derivation (splitmix64 over the parts).
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed;
    for &p in std::iter::once(&0x9e37_79b9_7f4a_7c15).chain(parts) {
        x = x.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

/// Runs one cycle from the zero-toll snapshot. In the training phase the
/// agents explore, store transitions of the active pairs and learn; in the
/// evaluation phase they act greedily and nothing is stored.
pub fn run_cycle(
    scenario: &Scenario,
    agents: &mut Agents,
    cfg: &ControlConfig,
    coop: Cooperation,
    phase: Phase,
    set: usize,
    cycle: usize,
) -> Result<CycleLog> {
    let net = &scenario.net;
    let norms = &scenario.norms;
    let bound = agents.cfg.action_bound;
    let train = phase == Phase::Train;

    let mut state = scenario.snapshot.clone();
    let mut tolls = zero_tolls(net);
    let mut record = scenario.baseline_record.clone();
    let mut log = CycleLog {
        set,
        cycle,
        phase,
        days: Vec::with_capacity(cfg.cycle_days),
        tolls: Vec::with_capacity(cfg.cycle_days),
    };

    for d in 0..cfg.cycle_days {
        let states = build_states(&record, norms);
        let active = if coop.switching {
            let waits: Vec<&[f64]> = norms.tolled.iter().map(|&i| record.wait[i].as_slice()).collect();
            switching_mask(&waits, cfg.n_window, cfg.dw)
        } else {
            vec![vec![true; net.horizon()]; norms.len()]
        };

        let mut actions = vec![vec![0.0; net.horizon()]; norms.len()];
        for (k, row) in states.iter().enumerate() {
            for (t, s) in row.iter().enumerate() {
                if active[k][t] {
                    actions[k][t] = agents.learner((k, t))?.act(s, train)?[0];
                }
            }
        }
        apply_actions(&mut tolls, &norms.tolled, &actions, &active, cfg.toll_floor, bound)?;

        let next = evolve_one_day(&mut state, net, &tolls)?;
        let n_active = active.iter().flatten().filter(|&&a| a).count();
        let mut critic_loss = None;
        if train {
            let rewards = if coop.shared_reward {
                shared_reward(&next, norms)
            } else {
                crate::baselines::fully_distributed_reward(&next, norms)
            };
            let next_states = build_states(&next, norms);
            let done = d + 1 == cfg.cycle_days;
            for k in 0..norms.len() {
                for t in 0..net.horizon() {
                    if !active[k][t] {
                        continue;
                    }
                    agents.learner((k, t))?.remember(Transition {
                        key: (k, t),
                        state: states[k][t].to_vec(),
                        action: vec![actions[k][t]],
                        reward: rewards[k][t],
                        next_state: next_states[k][t].to_vec(),
                        done,
                    })?;
                }
            }
            critic_loss = train_agents(agents, cfg, &active)?;
        }

        log.days
            .push(DayMetrics::from_record(d + 1, &next, n_active, critic_loss));
        log.tolls.push(norms.tolled.iter().map(|&i| tolls[i].clone()).collect());
        record = next;
    }
    if !agents.is_finite() {
        return Err(Error::NonFinite("learner parameters"));
    }
    Ok(log)
}

fn train_agents(agents: &mut Agents, cfg: &ControlConfig, active: &[Vec<bool>]) -> Result<Option<f64>> {
    let mut loss = 0.0;
    let mut n = 0usize;
    let mut record = |stats: Option<crate::ddpg::UpdateStats>| {
        if let Some(s) = stats {
            loss += s.critic_loss;
            n += 1;
        }
    };
    match agents.mode {
        LearnerMode::Shared => {
            let n_active = active.iter().flatten().filter(|&&a| a).count();
            for _ in 0..cfg.updates_per_day.unwrap_or(n_active) {
                record(agents.shared.train_step()?);
            }
        }
        LearnerMode::PerPair => {
            for (k, row) in active.iter().enumerate() {
                for (t, &on) in row.iter().enumerate() {
                    if on {
                        for _ in 0..cfg.updates_per_day.unwrap_or(1) {
                            record(agents.learner((k, t))?.train_step()?);
                        }
                    }
                }
            }
        }
    }
    Ok((n > 0).then(|| loss / n as f64))
}

/// Logs of one set: the training cycles and a final greedy evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetLog {
    pub set: usize,
    pub cycles: Vec<CycleLog>,
    pub evaluation: CycleLog,
}

/// Trains `cfg.sets` independent sets of `cfg.cycles_per_set` cycles each.
/// Learner parameters carry over between the cycles of a set; every set
/// starts from a fresh learner. With `out`, per-set CSVs and checkpoints are
/// written below it.
pub fn run_training(
    scenario: &Scenario,
    ddpg: &DdpgConfig,
    cfg: &ControlConfig,
    coop: Cooperation,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<SetLog>> {
    cfg.validate()?;
    (0..cfg.sets)
        .map(|set| {
            let mut agents = Agents::new(cfg.learner_mode, ddpg.clone(), mix_seed(seed, &[set as u64]))?;
            let base_noise = ddpg.noise();
            let mut cycles = Vec::with_capacity(cfg.cycles_per_set);
            for cycle in 0..cfg.cycles_per_set {
                agents.set_noise_std(base_noise * cfg.noise_decay.powi(cycle as i32));
                let log = run_cycle(scenario, &mut agents, cfg, coop, Phase::Train, set, cycle + 1)?;
                log::info!(
                    "set {set} cycle {}: final total wait {:.3} (baseline {:.3})",
                    cycle + 1,
                    log.final_total_wait(),
                    scenario.baseline_total_wait()
                );
                if let Some(dir) = out {
                    agents.save(&dir.join(format!("set{set}")).join(format!("cycle{}", cycle + 1)))?;
                }
                cycles.push(log);
            }
            let evaluation = run_cycle(
                scenario,
                &mut agents,
                cfg,
                coop,
                Phase::Eval,
                set,
                cfg.cycles_per_set + 1,
            )?;
            Ok(SetLog {
                set,
                cycles,
                evaluation,
            })
        })
        .collect()
}

pub fn metrics_header(net: &Network) -> String {
    let mut h = String::from("method,set,phase,cycle,day,total_travel_time,total_wait");
    for b in &net.bottlenecks {
        h.push_str(&format!(",wait_b{}", b.id));
    }
    h
}

/// Appends one row per day of `log` to a metrics CSV.
pub fn write_metrics_rows<W: Write>(out: &mut W, method: &str, log: &CycleLog) -> std::io::Result<()> {
    for d in &log.days {
        write!(
            out,
            "{method},{},{},{},{},{},{}",
            log.set,
            log.phase.as_str(),
            log.cycle,
            d.day,
            d.total_travel_time,
            d.total_wait
        )?;
        for w in &d.wait_sums {
            write!(out, ",{w}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub const TOLL_HEADER: &str = "method,set,phase,cycle,day,bottleneck,slot,toll";

pub fn write_toll_rows<W: Write>(
    out: &mut W,
    method: &str,
    log: &CycleLog,
    net: &Network,
    tolled: &[usize],
) -> std::io::Result<()> {
    for (d, day_tolls) in log.tolls.iter().enumerate() {
        for (k, &i) in tolled.iter().enumerate() {
            for (t, toll) in day_tolls[k].iter().enumerate() {
                writeln!(
                    out,
                    "{method},{},{},{},{},{},{},{toll}",
                    log.set,
                    log.phase.as_str(),
                    log.cycle,
                    d + 1,
                    net.bottlenecks[i].id,
                    t + 1
                )?;
            }
        }
    }
    Ok(())
}

/// Writes `metrics.csv` and `tolls.csv` for a batch of set logs.
pub fn write_set_logs(dir: &Path, method: &str, scenario: &Scenario, sets: &[SetLog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    writeln!(metrics, "{}", metrics_header(&scenario.net))?;
    let toll_path = dir.join("tolls.csv");
    let mut tolls = BufWriter::new(fs::File::create(&toll_path).map_err(|e| Error::io(&toll_path, e))?);
    writeln!(tolls, "{TOLL_HEADER}")?;
    for s in sets {
        for log in s.cycles.iter().chain(std::iter::once(&s.evaluation)) {
            write_metrics_rows(&mut metrics, method, log)?;
            write_toll_rows(&mut tolls, method, log, &scenario.net, &scenario.norms.tolled)?;
        }
    }
    metrics.flush()?;
    tolls.flush()?;
    Ok(())
}
