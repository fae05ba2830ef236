//! Day-to-day evolution of departure-time and route choice.
//!
//! Each day the experienced costs enter a finite memory, the perceived cost is
//! an exponentially weighted average of it, and travellers whose current
//! alternative is more than `delta_br` worse than the best one re-choose by a
//! multinomial logit over every (route, departure slot) alternative of their
//! OD pair.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{BehaviorParams, Network, Topology};
use crate::within_day::{simulate_day, DayRecord};

/// Waits at or below this are treated as zero.
pub const ZERO_WAIT_TOL: f64 = 1e-9;

/// Consecutive quiet days required by [`run_to_convergence`].
pub const CONVERGENCE_STREAK: usize = 5;

pub const SNAPSHOT_VERSION: u32 = 1;

/// The last `t_mem` days of experienced costs, newest at the back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMemory {
    capacity: usize,
    history: VecDeque<Vec<Vec<f64>>>,
}

impl CostMemory {
    pub fn new(t_mem: usize) -> Self {
        Self {
            capacity: t_mem.max(1),
            history: VecDeque::with_capacity(t_mem.max(1)),
        }
    }

    pub fn push(&mut self, cost: Vec<Vec<f64>>) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(cost);
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn latest(&self) -> Option<&Vec<Vec<f64>>> {
        self.history.back()
    }
}

/// Weighted average of the remembered costs: weight `lambda^(k-1)` for the
/// day `k` days back, normalized over the days actually held.
pub fn perceived_costs(memory: &CostMemory, params: &BehaviorParams) -> Result<Vec<Vec<f64>>> {
    let latest = memory.latest().ok_or(Error::NotInitialized)?;
    if params.lambda_mem == 0.0 || memory.len() == 1 {
        return Ok(latest.clone());
    }
    let days = memory.len().min(params.t_mem);
    let mut out = vec![vec![0.0; latest.first().map_or(0, Vec::len)]; latest.len()];
    let mut norm = 0.0;
    let mut weight = 1.0;
    for cost in memory.history.iter().rev().take(days) {
        for (o, c) in out.iter_mut().zip(cost) {
            for (o, c) in o.iter_mut().zip(c) {
                *o += weight * c;
            }
        }
        norm += weight;
        weight *= params.lambda_mem;
    }
    for v in out.iter_mut().flatten() {
        *v /= norm;
    }
    Ok(out)
}

/// Logit choice probabilities over every (route, slot) alternative of one OD
/// pair. `routes` are route positions; the output rows follow that order.
pub fn logit_shares(perceived: &[Vec<f64>], theta: f64, routes: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut min = f64::INFINITY;
    for &z in routes {
        for &c in &perceived[z] {
            if c.is_nan() {
                return Err(Error::NonFinite("perceived cost"));
            }
            min = min.min(c);
        }
    }
    if !min.is_finite() {
        return Err(Error::DegenerateChoice(routes.first().copied().unwrap_or(0)));
    }
    let mut out: Vec<Vec<f64>> = routes
        .iter()
        .map(|&z| perceived[z].iter().map(|&c| (-theta * (c - min)).exp()).collect())
        .collect();
    let total: f64 = out.iter().flatten().sum();
    for p in out.iter_mut().flatten() {
        *p /= total;
    }
    Ok(out)
}

/// Logit shares for every OD pair laid out as a `[route][slot]` grid.
pub fn choice_shares(perceived: &[Vec<f64>], theta: f64, topo: &Topology) -> Result<Vec<Vec<f64>>> {
    let mut shares = vec![Vec::new(); perceived.len()];
    for (od, routes) in topo.od_routes.iter().enumerate() {
        let p = logit_shares(perceived, theta, routes).map_err(|e| match e {
            Error::DegenerateChoice(_) => Error::DegenerateChoice(od),
            e => e,
        })?;
        for (&z, row) in routes.iter().zip(p) {
            shares[z] = row;
        }
    }
    Ok(shares)
}

/// Travellers stay on an alternative whose perceived cost is within
/// `delta_br` of the cheapest alternative of their OD pair; the mass of every
/// other alternative is pooled and re-spread by `shares`.
pub fn apply_bounded_rationality(
    prev: &[Vec<f64>],
    perceived: &[Vec<f64>],
    shares: &[Vec<f64>],
    delta_br: f64,
    od_routes: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let mut next = prev.to_vec();
    for routes in od_routes {
        let min = routes
            .iter()
            .flat_map(|&z| perceived[z].iter().copied())
            .fold(f64::INFINITY, f64::min);
        let mut movers = 0.0;
        for &z in routes {
            for (t, &c) in perceived[z].iter().enumerate() {
                if !(c - min <= delta_br) {
                    movers += next[z][t];
                    next[z][t] = 0.0;
                }
            }
        }
        if movers > 0.0 {
            for &z in routes {
                for (n, p) in next[z].iter_mut().zip(&shares[z]) {
                    *n += movers * p;
                }
            }
        }
    }
    next
}

/// Mutable day-to-day state of one scenario instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub day: usize,
    /// `[route][slot]` departures of the next day to simulate.
    pub departures: Vec<Vec<f64>>,
    pub memory: CostMemory,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    state: EvolutionState,
}

impl EvolutionState {
    /// Day-zero state: every OD pair spread by logit over the costs of an
    /// empty network under `tolls`.
    pub fn initial(net: &Network, tolls: &[Vec<f64>]) -> Result<Self> {
        let topo = net.topology()?;
        let empty = vec![vec![0.0; net.horizon()]; net.n_routes()];
        let rec = simulate_day(net, &empty, tolls)?;
        let shares = choice_shares(&rec.cost, net.params.theta, &topo)?;
        let mut departures = shares;
        for (z, row) in departures.iter_mut().enumerate() {
            let demand = net.od_pairs[topo.route_od[z]].demand;
            row.iter_mut().for_each(|p| *p *= demand);
        }
        let mut memory = CostMemory::new(net.params.t_mem);
        memory.push(rec.cost);
        Ok(Self {
            day: 0,
            departures,
            memory,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            version: SNAPSHOT_VERSION,
            state: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s)?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Checkpoint(format!(
                "state snapshot version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        Ok(snap.state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Demand carried per OD pair.
    pub fn od_totals(&self, topo: &Topology) -> Vec<f64> {
        topo.od_routes
            .iter()
            .map(|routes| routes.iter().flat_map(|&z| &self.departures[z]).sum())
            .collect()
    }
}

/// Simulates today with `tolls`, then moves `state` to tomorrow's departures.
pub fn evolve_one_day(state: &mut EvolutionState, net: &Network, tolls: &[Vec<f64>]) -> Result<DayRecord> {
    let topo = net.topology()?;
    let rec = simulate_day(net, &state.departures, tolls)?;
    state.memory.push(rec.cost.clone());
    let perceived = perceived_costs(&state.memory, &net.params)?;
    let shares = choice_shares(&perceived, net.params.theta, &topo)?;
    state.departures = apply_bounded_rationality(
        &state.departures,
        &perceived,
        &shares,
        net.params.delta_br,
        &topo.od_routes,
    );
    state.day += 1;
    Ok(rec)
}

#[derive(Clone, Debug)]
pub struct Convergence {
    pub converged: bool,
    pub days_used: usize,
    pub last_record: DayRecord,
    /// Total wait of every simulated day.
    pub wait_trace: Vec<f64>,
}

/// Iterates [`evolve_one_day`] until the day-over-day relative change of the
/// total waiting time stays below `eps` for [`CONVERGENCE_STREAK`] days in a
/// row, or `max_days` have been simulated.
pub fn run_to_convergence(
    state: &mut EvolutionState,
    net: &Network,
    tolls: &[Vec<f64>],
    eps: f64,
    max_days: usize,
) -> Result<Convergence> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps = {eps} must be positive")));
    }
    if max_days == 0 {
        return Err(Error::Precondition("max_days must be positive".into()));
    }
    let empty_system = net.total_demand() == 0.0;
    let mut streak = 0;
    let mut prev: Option<f64> = None;
    let mut wait_trace = Vec::new();
    for day in 1..=max_days {
        let rec = evolve_one_day(state, net, tolls)?;
        let w = rec.total_wait();
        wait_trace.push(w);
        if empty_system {
            return Ok(Convergence {
                converged: true,
                days_used: day,
                last_record: rec,
                wait_trace,
            });
        }
        if let Some(p) = prev {
            if relative_change(p, w) < eps {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        prev = Some(w);
        if streak >= CONVERGENCE_STREAK || day == max_days {
            return Ok(Convergence {
                converged: streak >= CONVERGENCE_STREAK,
                days_used: day,
                last_record: rec,
                wait_trace,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn relative_change(prev: f64, now: f64) -> f64 {
    let diff = (now - prev).abs();
    if diff == 0.0 {
        0.0
    } else if prev.abs() <= ZERO_WAIT_TOL {
        f64::INFINITY
    } else {
        diff / prev.abs()
    }
}

/// Normalizers taken from the zero-toll converged day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub w0_sum: Vec<f64>,
    pub nz_count: Vec<usize>,
    /// `w0_sum / nz_count`, `None` where the bottleneck never queued.
    pub norm: Vec<Option<f64>>,
}

impl BaselineStats {
    pub fn from_record(rec: &DayRecord) -> Self {
        let mut w0_sum = Vec::new();
        let mut nz_count = Vec::new();
        let mut norm = Vec::new();
        for waits in &rec.wait {
            let sum: f64 = waits.iter().sum();
            let nz = waits.iter().filter(|&&w| w > ZERO_WAIT_TOL).count();
            w0_sum.push(sum);
            nz_count.push(nz);
            norm.push((nz > 0 && sum > 0.0).then(|| sum / nz as f64));
        }
        Self { w0_sum, nz_count, norm }
    }

    /// Positions of bottlenecks with a positive baseline wait.
    pub fn congested(&self) -> Vec<usize> {
        (0..self.norm.len()).filter(|&i| self.norm[i].is_some()).collect()
    }

    /// Normalizers for `bottlenecks`, or a configuration error naming the
    /// first one that never queued at baseline.
    pub fn norms_for(&self, bottlenecks: &[usize]) -> Result<Vec<f64>> {
        bottlenecks
            .iter()
            .map(|&i| {
                self.norm.get(i).copied().flatten().ok_or_else(|| {
                    Error::Config(format!(
                        "bottleneck at position {i} has no baseline queue and cannot normalize states"
                    ))
                })
            })
            .collect()
    }
}

/// Baseline statistics of the day `state` is about to play with no tolls.
pub fn compute_baseline(net: &Network, state: &EvolutionState) -> Result<BaselineStats> {
    let zero = vec![vec![0.0; net.horizon()]; net.n_bottlenecks()];
    let rec = simulate_day(net, &state.departures, &zero)?;
    Ok(BaselineStats::from_record(&rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenarios::build_scenario_parallel;
    use crate::net_model::{Bottleneck, OdPair, Route};
    use approx::assert_relative_eq;

    fn params(lambda: f64, t_mem: usize) -> BehaviorParams {
        BehaviorParams {
            alpha: 1.0,
            beta: 0.45,
            gamma: 1.2,
            theta: 0.05,
            lambda_mem: lambda,
            t_mem,
            delta_br: 0.5,
            t_star: 1,
            horizon: 1,
        }
    }

    #[test]
    fn perceived_lambda_zero_is_yesterday() {
        let mut m = CostMemory::new(3);
        m.push(vec![vec![1.0, 2.0]]);
        m.push(vec![vec![0.1, 0.7]]);
        assert_eq!(perceived_costs(&m, &params(0.0, 3)).unwrap(), vec![vec![0.1, 0.7]]);
    }

    #[test]
    fn perceived_weighted_average() {
        let mut m = CostMemory::new(2);
        m.push(vec![vec![10.0]]);
        m.push(vec![vec![20.0]]);
        let p = perceived_costs(&m, &params(0.5, 2)).unwrap();
        assert_relative_eq!(p[0][0], (20.0 + 0.5 * 10.0) / 1.5, epsilon = 1e-12);
    }

    #[test]
    fn perceived_constant_history_and_warmup() {
        let mut m = CostMemory::new(4);
        for _ in 0..4 {
            m.push(vec![vec![7.25, 3.0]]);
        }
        let p = perceived_costs(&m, &params(0.8, 4)).unwrap();
        assert_relative_eq!(p[0][0], 7.25, epsilon = 1e-12);
        assert_relative_eq!(p[0][1], 3.0, epsilon = 1e-12);

        // two of four days held: weights 1 and lambda only
        let mut m = CostMemory::new(4);
        m.push(vec![vec![10.0]]);
        m.push(vec![vec![20.0]]);
        let p = perceived_costs(&m, &params(0.5, 4)).unwrap();
        assert_relative_eq!(p[0][0], 25.0 / 1.5, epsilon = 1e-12);
    }

    #[test]
    fn perceived_empty_memory() {
        assert!(matches!(
            perceived_costs(&CostMemory::new(2), &params(0.0, 2)),
            Err(Error::NotInitialized)
        ));
    }

    #[test]
    fn memory_ring_drops_oldest() {
        let mut m = CostMemory::new(2);
        for c in [1.0, 2.0, 3.0] {
            m.push(vec![vec![c]]);
        }
        assert_eq!(m.len(), 2);
        let p = perceived_costs(&m, &params(0.5, 2)).unwrap();
        assert_relative_eq!(p[0][0], (3.0 + 0.5 * 2.0) / 1.5, epsilon = 1e-12);
    }

    #[test]
    fn logit_examples() {
        let p = logit_shares(&[vec![4.0, 4.0]], 0.3, &[0]).unwrap();
        assert_eq!(p, vec![vec![0.5, 0.5]]);

        let p = logit_shares(&[vec![0.0, 1e6]], 0.05, &[0]).unwrap();
        assert_relative_eq!(p[0][0], 1.0);
        assert!(p[0][1] < 1e-300);

        let p = logit_shares(&[vec![0.0, f64::INFINITY]], 0.05, &[0]).unwrap();
        assert_eq!(p[0], vec![1.0, 0.0]);

        assert!(matches!(
            logit_shares(&[vec![f64::INFINITY; 3]], 0.05, &[0]),
            Err(Error::DegenerateChoice(_))
        ));
        assert!(logit_shares(&[vec![f64::NAN, 1.0]], 0.05, &[0]).is_err());
    }

    #[test]
    fn logit_three_costs_against_high_precision() {
        // exp(-0.5), exp(-1), exp(-1.5) normalized, evaluated to 30 digits
        // with mpmath.
        let want = [0.50648039105565403, 0.3071958857184984, 0.18632372322584758];
        let p = logit_shares(&[vec![10.0], vec![20.0], vec![30.0]], 0.05, &[0, 1, 2]).unwrap();
        for (p, w) in p.iter().zip(want) {
            assert_relative_eq!(p[0], w, epsilon = 1e-14);
        }
    }

    #[test]
    fn bounded_rationality_limits() {
        let prev = vec![vec![30.0, 70.0]];
        let perceived = vec![vec![1.0, 5.0]];
        let shares = vec![vec![0.9, 0.1]];
        let od = vec![vec![0]];

        let same = apply_bounded_rationality(&prev, &perceived, &shares, 1e9, &od);
        assert_eq!(same, prev);

        let next = apply_bounded_rationality(&prev, &perceived, &shares, 0.0, &od);
        // 70 movers: 63 to the cheap slot, 7 back
        assert_relative_eq!(next[0][0], 93.0, epsilon = 1e-12);
        assert_relative_eq!(next[0][1], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn bounded_rationality_two_routes_hand_computed() {
        // Demand 100; gap 2 exceeds delta 1.5, so the 40 on the dear
        // route move and split by logit shares (theta = 0.5).
        let prev = vec![vec![60.0], vec![40.0]];
        let perceived = vec![vec![10.0], vec![12.0]];
        let shares = logit_shares(&perceived, 0.5, &[0, 1]).unwrap();
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        let next = apply_bounded_rationality(&prev, &perceived, &shares, 1.5, &[vec![0, 1]]);
        assert_relative_eq!(next[0][0], 60.0 + 40.0 * p0, epsilon = 1e-12);
        assert_relative_eq!(next[1][0], 40.0 * (1.0 - p0), epsilon = 1e-12);
        assert_relative_eq!(next[0][0] + next[1][0], 100.0, epsilon = 1e-12);
    }

    fn tiny(demand: f64, horizon: usize) -> Network {
        Network {
            bottlenecks: vec![Bottleneck {
                id: 1,
                capacity_mu: 1.0,
                tolled: true,
            }],
            routes: vec![Route {
                id: 0,
                od_pair: 0,
                bottlenecks: vec![1],
                segment_free_times: vec![1, 1],
            }],
            od_pairs: vec![OdPair {
                id: 0,
                demand,
                routes: vec![0],
            }],
            params: BehaviorParams {
                t_star: 1,
                horizon,
                ..params(0.0, 1)
            },
        }
    }

    #[test]
    fn zero_demand_stays_empty() {
        let net = tiny(0.0, 10);
        let tolls = vec![vec![0.0; 10]];
        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        for _ in 0..5 {
            let rec = evolve_one_day(&mut st, &net, &tolls).unwrap();
            assert_eq!(rec.total_wait(), 0.0);
        }
        assert!(st.departures.iter().flatten().all(|&f| f == 0.0));

        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        let c = run_to_convergence(&mut st, &net, &tolls, 1e-3, 50).unwrap();
        assert!(c.converged);
        assert_eq!(c.days_used, 1);
    }

    #[test]
    fn single_alternative_keeps_demand() {
        let net = tiny(5.0, 1);
        let tolls = vec![vec![0.0]];
        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        for _ in 0..4 {
            evolve_one_day(&mut st, &net, &tolls).unwrap();
            assert_eq!(st.departures, vec![vec![5.0]]);
        }
    }

    #[test]
    fn eps_must_be_positive() {
        let net = tiny(1.0, 5);
        let tolls = vec![vec![0.0; 5]];
        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        assert!(run_to_convergence(&mut st, &net, &tolls, 0.0, 10).is_err());
    }

    #[test]
    fn baseline_from_waits() {
        let mut rec = simulate_day(&tiny(0.0, 4), &[vec![0.0; 4]], &[vec![0.0; 4]]).unwrap();
        rec.wait = vec![vec![0.0, 2.0, 4.0, 0.0], vec![0.0; 4]];
        let b = BaselineStats::from_record(&rec);
        assert_eq!(b.w0_sum, vec![6.0, 0.0]);
        assert_eq!(b.nz_count, vec![2, 0]);
        assert_eq!(b.norm, vec![Some(3.0), None]);
        assert_eq!(b.congested(), vec![0]);
        assert!(b.norms_for(&[0, 1]).is_err());
        assert_eq!(b.norms_for(&[0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn snapshot_round_trip() {
        let net = build_scenario_parallel();
        let tolls = vec![vec![0.0; net.horizon()]; 3];
        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        evolve_one_day(&mut st, &net, &tolls).unwrap();
        let back = EvolutionState::from_json(&st.to_json().unwrap()).unwrap();
        assert_eq!(back, st);
        let bad = st.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(EvolutionState::from_json(&bad).is_err());
    }

    #[test]
    fn parallel_zero_toll_run_settles() {
        let net = build_scenario_parallel();
        let tolls = vec![vec![0.0; net.horizon()]; 3];
        let mut st = EvolutionState::initial(&net, &tolls).unwrap();
        let c = run_to_convergence(&mut st, &net, &tolls, 1e-3, 2000).unwrap();
        assert!(c.converged, "not converged after {} days", c.days_used);
        let topo = net.topology().unwrap();
        assert_relative_eq!(st.od_totals(&topo)[0], net.total_demand(), max_relative = 1e-9);
    }
}
