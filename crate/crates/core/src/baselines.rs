//! Comparison controllers: a centralized learner that moves a few
//! piecewise-linear toll knots per bottleneck, and the distributed learner
//! stripped of the shared reward term.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{
    build_states, mix_seed, zero_tolls, ControlConfig, CycleLog, DayMetrics, Normalizers, Phase, Scenario, SetLog,
};
use crate::day_to_day::evolve_one_day;
use crate::ddpg::{DdpgConfig, DdpgLearner, Transition};
use crate::error::{Error, Result};
use crate::within_day::DayRecord;

pub const DEFAULT_BREAKPOINTS: usize = 8;

/// A toll schedule defined by values at `breakpoints` (1-based slots),
/// linear in between and constant outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseToll {
    pub breakpoints: Vec<usize>,
    pub values: Vec<f64>,
}

impl PiecewiseToll {
    pub fn new(breakpoints: Vec<usize>, values: Vec<f64>, horizon: usize) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "piecewise toll values",
                expected: breakpoints.len(),
                actual: values.len(),
            });
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints[0] < 1 || *breakpoints.last().unwrap() > horizon
        {
            return Err(Error::Precondition(format!(
                "breakpoints {breakpoints:?} must be strictly increasing within [1, {horizon}]"
            )));
        }
        Ok(Self { breakpoints, values })
    }

    /// `k` breakpoints spread evenly over `[1, horizon]`, all values zero.
    pub fn uniform(k: usize, horizon: usize) -> Result<Self> {
        let k = k.min(horizon).max(1);
        let bps = if k == 1 {
            vec![1]
        } else {
            (0..k)
                .map(|j| 1 + ((j * (horizon - 1)) as f64 / (k - 1) as f64).round() as usize)
                .collect()
        };
        Self::new(bps, vec![0.0; k], horizon)
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Toll at 1-based slot `slot`.
    pub fn eval(&self, slot: usize) -> f64 {
        let b = &self.breakpoints;
        let v = &self.values;
        if slot <= b[0] {
            return v[0];
        }
        if slot >= *b.last().unwrap() {
            return *v.last().unwrap();
        }
        let j = b.partition_point(|&x| x <= slot) - 1;
        let frac = (slot - b[j]) as f64 / (b[j + 1] - b[j]) as f64;
        v[j] + frac * (v[j + 1] - v[j])
    }

    pub fn schedule(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon).map(|s| self.eval(s)).collect()
    }
}

/// Local-only reward `[tolled k][slot]`: the pair's own normalized wait,
/// negated.
pub fn fully_distributed_reward(day: &DayRecord, norms: &Normalizers) -> Vec<Vec<f64>> {
    norms
        .tolled
        .iter()
        .zip(&norms.norm)
        .map(|(&i, n)| day.wait[i].iter().map(|w| -(w / n)).collect())
        .collect()
}

/// Scalar reward of the centralized learner: the negated sum over tolled
/// bottlenecks of the mean normalized wait.
pub fn centralized_reward(day: &DayRecord, norms: &Normalizers) -> f64 {
    -norms
        .tolled
        .iter()
        .zip(&norms.norm)
        .map(|(&i, n)| day.wait[i].iter().sum::<f64>() / day.wait[i].len() as f64 / n)
        .sum::<f64>()
}

/// Which slots of each tolled bottleneck feed the centralized state.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralLayout {
    pub slots: Vec<Vec<usize>>,
}

impl CentralLayout {
    /// The slots with a baseline queue.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let rec = &scenario.baseline_record;
        Self {
            slots: scenario
                .norms
                .tolled
                .iter()
                .map(|&i| (0..rec.horizon()).filter(|&t| rec.wait[i][t] > 1e-9).collect())
                .collect(),
        }
    }

    pub fn state_dim(&self) -> usize {
        3 * self.slots.iter().map(Vec::len).sum::<usize>()
    }

    pub fn global_state(&self, day: &DayRecord, norms: &Normalizers) -> Vec<f64> {
        let states = build_states(day, norms);
        let mut out = Vec::with_capacity(self.state_dim());
        for (k, slots) in self.slots.iter().enumerate() {
            for &t in slots {
                out.extend_from_slice(&states[k][t]);
            }
        }
        out
    }
}

/// Adds `action` (laid out bottleneck-major, one entry per knot) to the
/// knot values, clamps at `floor` and returns the rebuilt schedules of the
/// tolled bottlenecks.
pub fn centralized_step(
    pieces: &mut [PiecewiseToll],
    action: &[f64],
    floor: f64,
    bound: f64,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let total: usize = pieces.iter().map(PiecewiseToll::len).sum();
    if action.len() != total {
        return Err(Error::DimensionMismatch {
            context: "centralized action",
            expected: total,
            actual: action.len(),
        });
    }
    let mut a = action.iter();
    for p in pieces.iter_mut() {
        for v in &mut p.values {
            let b = *a.next().expect("length checked");
            if !(b.abs() <= bound) {
                return Err(Error::Precondition(format!("knot action {b} exceeds bound {bound}")));
            }
            *v = (*v + b).max(floor);
        }
    }
    Ok(pieces.iter().map(|p| p.schedule(horizon)).collect())
}

/// Learner and knot layout of the centralized baseline.
#[derive(Clone, Debug)]
pub struct Centralized {
    pub learner: DdpgLearner,
    pub layout: CentralLayout,
    pub breakpoints: usize,
}

impl Centralized {
    pub fn new(scenario: &Scenario, base: &DdpgConfig, breakpoints: usize, seed: u64) -> Result<Self> {
        let layout = CentralLayout::from_scenario(scenario);
        let knots = PiecewiseToll::uniform(breakpoints, scenario.net.horizon())?.len();
        let cfg = DdpgConfig {
            state_dim: layout.state_dim(),
            action_dim: knots * scenario.norms.len(),
            ..base.clone()
        };
        Ok(Self {
            learner: DdpgLearner::new(cfg, seed)?,
            layout,
            breakpoints,
        })
    }
}

/// One cycle of the centralized baseline; one transition per day.
pub fn run_centralized_cycle(
    scenario: &Scenario,
    agent: &mut Centralized,
    cfg: &ControlConfig,
    phase: Phase,
    set: usize,
    cycle: usize,
) -> Result<CycleLog> {
    let net = &scenario.net;
    let norms = &scenario.norms;
    let horizon = net.horizon();
    let train = phase == Phase::Train;
    let bound = agent.learner.config().action_bound;
    let mut pieces = (0..norms.len())
        .map(|_| PiecewiseToll::uniform(agent.breakpoints, horizon))
        .collect::<Result<Vec<_>>>()?;

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
        let s = agent.layout.global_state(&record, norms);
        let action = agent.learner.act(&s, train)?;
        let schedules = centralized_step(&mut pieces, &action, cfg.toll_floor, bound, horizon)?;
        for (k, &i) in norms.tolled.iter().enumerate() {
            tolls[i].clone_from(&schedules[k]);
        }
        let next = evolve_one_day(&mut state, net, &tolls)?;
        let mut critic_loss = None;
        if train {
            agent.learner.remember(Transition {
                key: (0, 0),
                state: s,
                action,
                reward: centralized_reward(&next, norms),
                next_state: agent.layout.global_state(&next, norms),
                done: d + 1 == cfg.cycle_days,
            })?;
            let mut sum = 0.0;
            let mut n = 0usize;
            for _ in 0..cfg.updates_per_day.unwrap_or(1) {
                if let Some(st) = agent.learner.train_step()? {
                    sum += st.critic_loss;
                    n += 1;
                }
            }
            critic_loss = (n > 0).then(|| sum / n as f64);
        }
        log.days.push(DayMetrics::from_record(
            d + 1,
            &next,
            norms.len() * horizon,
            critic_loss,
        ));
        log.tolls.push(schedules);
        record = next;
    }
    if !agent.learner.is_finite() {
        return Err(Error::NonFinite("centralized learner parameters"));
    }
    Ok(log)
}

/// Sets × cycles of the centralized baseline, fresh learner per set.
pub fn run_centralized_training(
    scenario: &Scenario,
    ddpg: &DdpgConfig,
    cfg: &ControlConfig,
    breakpoints: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<SetLog>> {
    cfg.validate()?;
    (0..cfg.sets)
        .map(|set| {
            let mut agent = Centralized::new(scenario, ddpg, breakpoints, mix_seed(seed, &[set as u64]))?;
            let base_noise = ddpg.noise();
            let mut cycles = Vec::with_capacity(cfg.cycles_per_set);
            for cycle in 0..cfg.cycles_per_set {
                agent
                    .learner
                    .set_noise_std(base_noise * cfg.noise_decay.powi(cycle as i32));
                cycles.push(run_centralized_cycle(
                    scenario,
                    &mut agent,
                    cfg,
                    Phase::Train,
                    set,
                    cycle + 1,
                )?);
                if let Some(dir) = out {
                    let dir = dir.join(format!("set{set}")).join(format!("cycle{}", cycle + 1));
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    agent.learner.save(&dir.join("learner.ckpt"))?;
                }
            }
            let evaluation =
                run_centralized_cycle(scenario, &mut agent, cfg, Phase::Eval, set, cfg.cycles_per_set + 1)?;
            Ok(SetLog {
                set,
                cycles,
                evaluation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::shared_reward;
    use crate::within_day::Diagnostics;
    use approx::assert_relative_eq;

    fn day(waits: Vec<Vec<f64>>) -> DayRecord {
        let h = waits[0].len();
        let nb = waits.len();
        DayRecord {
            inflow: vec![vec![0.0; h]; nb],
            queue_len: waits.clone(),
            wait: waits,
            toll: vec![vec![0.0; h]; nb],
            departures: vec![vec![0.0; h]],
            cost: vec![vec![0.0; h]],
            arrival: vec![vec![0.0; h]],
            travel_time: vec![vec![0.0; h]],
            diagnostics: Diagnostics::default(),
        }
    }

    fn two() -> Normalizers {
        Normalizers {
            tolled: vec![0, 1],
            mu: vec![1.0, 1.0],
            norm: vec![2.0, 4.0],
        }
    }

    #[test]
    fn interpolation_of_constants() {
        let mut p = vec![PiecewiseToll::new(vec![1, 10], vec![0.0, 0.0], 10).unwrap()];
        let s = centralized_step(&mut p, &[1.0, 1.0], 0.0, 1.5, 10).unwrap();
        assert_eq!(s[0], vec![1.0; 10]);
    }

    #[test]
    fn zero_action_keeps_schedule() {
        let mut p = vec![PiecewiseToll::new(vec![2, 5], vec![1.0, 4.0], 6).unwrap()];
        let before = p[0].schedule(6);
        let after = centralized_step(&mut p, &[0.0, 0.0], 0.0, 1.5, 6).unwrap();
        assert_eq!(after[0], before);
        assert_eq!(before, vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn step_checks_dimension_and_bound() {
        let mut p = vec![PiecewiseToll::uniform(3, 10).unwrap()];
        assert!(matches!(
            centralized_step(&mut p, &[0.0], 0.0, 1.5, 10),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(centralized_step(&mut p, &[0.0, 2.0, 0.0], 0.0, 1.5, 10).is_err());
    }

    #[test]
    fn knots_are_exact_and_segments_affine() {
        let p = PiecewiseToll::new(vec![1, 4, 9], vec![3.0, 0.0, 5.0], 12).unwrap();
        assert_eq!(p.eval(1), 3.0);
        assert_eq!(p.eval(4), 0.0);
        assert_eq!(p.eval(9), 5.0);
        assert_eq!(p.eval(12), 5.0);
        for s in 5..8 {
            assert_relative_eq!(p.eval(s + 1) - p.eval(s), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_knots_span_horizon() {
        let p = PiecewiseToll::uniform(8, 80).unwrap();
        assert_eq!(p.breakpoints.first(), Some(&1));
        assert_eq!(p.breakpoints.last(), Some(&80));
        assert_eq!(p.len(), 8);
        assert!(PiecewiseToll::new(vec![3, 3], vec![0.0, 0.0], 5).is_err());
        assert!(PiecewiseToll::new(vec![0, 3], vec![0.0, 0.0], 5).is_err());
    }

    #[test]
    fn local_reward_values() {
        assert!(fully_distributed_reward(&day(vec![vec![0.0; 3]; 2]), &two())
            .iter()
            .flatten()
            .all(|&r| r == 0.0));
        let d = day(vec![vec![0.0, 2.0, 4.0, 0.0], vec![1.0, 1.0, 2.0, 0.0]]);
        let r = fully_distributed_reward(&d, &two());
        assert_eq!(r[0], vec![0.0, -1.0, -2.0, 0.0]);
        assert_eq!(r[1], vec![-0.25, -0.25, -0.5, 0.0]);
    }

    #[test]
    fn decomposition_identity() {
        let d = day(vec![vec![0.0, 2.0, 4.0, 0.0], vec![1.0, 1.0, 2.0, 0.0]]);
        let n = two();
        let local = fully_distributed_reward(&d, &n);
        let shared = shared_reward(&d, &n);
        for k in 0..2 {
            for t in 0..4 {
                assert_relative_eq!(local[k][t] - shared[k][t], 0.5, epsilon = 1e-15);
            }
        }
        assert_relative_eq!(centralized_reward(&d, &n), -1.0, epsilon = 1e-15);
    }
}
