//! One day of traffic: departure cohorts travel their routes through point
//! queues in discrete slots.
//!
//! Cohorts are fluid masses. A cohort that reaches bottleneck `i` at slot `e`
//! joins the queue `N_i(e)` and leaves after `N_i(e) / mu_i` slots. The real
//! exit time is split between the two neighbouring integer slots in
//! proportion to its fractional part, so every fragment of a cohort always
//! sits on an integer slot and FIFO order is kept exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::Network;

/// One slot of the point-queue recursion: `max(0, n + inflow - mu)`.
pub fn step_queue(n_now: f64, inflow: f64, mu: f64) -> f64 {
    (n_now + inflow - mu).max(0.0)
}

/// Waiting time in slots for a queue of `n` vehicles at capacity `mu`.
pub fn waiting_time(n: f64, mu: f64) -> Result<f64> {
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::InvalidCapacity(mu));
    }
    Ok(n / mu)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mass whose trip was pushed past the last slot of the day.
    pub overflow_mass: f64,
    /// Number of (route, departure slot) alternatives that touched the
    /// horizon clamp, whether or not they carried mass.
    pub overflow_alternatives: usize,
    /// Mass that reached its destination.
    pub arrived_mass: f64,
}

/// Everything observed on one simulated day. Slot indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    /// `[bottleneck][slot]` vehicles joining the queue during the slot.
    pub inflow: Vec<Vec<f64>>,
    /// `[bottleneck][slot]` queue at the start of the slot.
    pub queue_len: Vec<Vec<f64>>,
    /// `[bottleneck][slot]` `queue_len / mu`.
    pub wait: Vec<Vec<f64>>,
    /// `[bottleneck][slot]` toll charged on leaving in that slot.
    pub toll: Vec<Vec<f64>>,
    /// `[route][slot]` departing mass.
    pub departures: Vec<Vec<f64>>,
    /// `[route][departure slot]` generalized cost.
    pub cost: Vec<Vec<f64>>,
    /// `[route][departure slot]` mean destination arrival slot, clamped to the
    /// horizon.
    pub arrival: Vec<Vec<f64>>,
    /// `[route][departure slot]` mean door-to-door travel time in slots.
    pub travel_time: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl DayRecord {
    pub fn horizon(&self) -> usize {
        self.wait.first().map_or(0, Vec::len)
    }

    /// Sum of `wait[i][t]` over all bottlenecks and slots.
    pub fn total_wait(&self) -> f64 {
        self.wait.iter().flatten().sum()
    }

    pub fn wait_sums(&self) -> Vec<f64> {
        self.wait.iter().map(|w| w.iter().sum()).collect()
    }

    /// Vehicle-weighted travel time, free flow plus queueing.
    pub fn total_travel_time(&self) -> f64 {
        self.departures
            .iter()
            .zip(&self.travel_time)
            .flat_map(|(f, tt)| f.iter().zip(tt).map(|(f, tt)| f * tt))
            .sum()
    }

    pub fn total_departures(&self) -> f64 {
        self.departures.iter().flatten().sum()
    }

    /// Writes the per-(bottleneck, slot) columns. Slots are printed 1-based.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W, day: usize, bottleneck_ids: &[usize]) -> std::io::Result<()> {
        for (i, id) in bottleneck_ids.iter().enumerate() {
            for t in 0..self.horizon() {
                writeln!(
                    out,
                    "{day},{id},{},{},{},{},{}",
                    t + 1,
                    self.inflow[i][t],
                    self.queue_len[i][t],
                    self.wait[i][t],
                    self.toll[i][t]
                )?;
            }
        }
        Ok(())
    }
}

pub const DAY_CSV_HEADER: &str = "day,bottleneck,slot,inflow,queue,wait,toll";

/// One bottleneck passage of a cohort fragment.
#[derive(Clone, Debug, PartialEq)]
pub struct Passage {
    pub route: usize,
    pub departure: usize,
    pub bottleneck: usize,
    pub entry_slot: usize,
    pub exit_time: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug)]
struct Fragment {
    route: usize,
    departure: usize,
    leg: usize,
    time: usize,
    weight: f64,
}

impl Fragment {
    fn key(&self) -> (usize, usize, usize, usize) {
        (self.route, self.departure, self.leg, self.time)
    }
}

#[derive(Clone, Copy, Default)]
struct CohortAcc {
    toll: f64,
    travel: f64,
    schedule: f64,
    arrival: f64,
    overflow: bool,
}

/// Simulates one day for the given departures `[route][slot]` and tolls
/// `[bottleneck][slot]`.
pub fn simulate_day(net: &Network, departures: &[Vec<f64>], toll: &[Vec<f64>]) -> Result<DayRecord> {
    run(net, departures, toll, None)
}

/// As [`simulate_day`], also returning every bottleneck passage in
/// processing order.
pub fn simulate_day_traced(
    net: &Network,
    departures: &[Vec<f64>],
    toll: &[Vec<f64>],
) -> Result<(DayRecord, Vec<Passage>)> {
    let mut trace = Vec::new();
    let rec = run(net, departures, toll, Some(&mut trace))?;
    Ok((rec, trace))
}

fn check_grid(what: &'static str, grid: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if grid.len() != rows {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: rows,
            actual: grid.len(),
        });
    }
    for row in grid {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: cols,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Precondition(format!("{what} must be finite and non-negative")));
        }
    }
    Ok(())
}

fn run(
    net: &Network,
    departures: &[Vec<f64>],
    toll: &[Vec<f64>],
    mut trace: Option<&mut Vec<Passage>>,
) -> Result<DayRecord> {
    let topo = net.topology()?;
    let p = &net.params;
    let horizon = p.horizon;
    let nb = net.n_bottlenecks();
    let nr = net.n_routes();
    check_grid("departures", departures, nr, horizon)?;
    check_grid("toll", toll, nb, horizon)?;

    let mu = net.capacities();
    let last = horizon - 1;
    let t_star = p.t_star_index();

    let mut inflow = vec![vec![0.0; horizon]; nb];
    let mut queue_len = vec![vec![0.0; horizon]; nb];
    let mut wait = vec![vec![0.0; horizon]; nb];
    let mut acc = vec![vec![CohortAcc::default(); horizon]; nr];
    let mut diagnostics = Diagnostics::default();

    let mut arrive = |acc: &mut CohortAcc, dep: usize, time: usize, weight: f64, mass: f64| {
        let a = time as f64;
        acc.travel += weight * (a - dep as f64);
        acc.schedule += weight
            * if time < t_star {
                p.beta * (t_star - time) as f64
            } else {
                p.gamma * (time - t_star) as f64
            };
        acc.arrival += weight * a.min(last as f64);
        if time > last {
            acc.overflow = true;
            diagnostics.overflow_mass += weight * mass;
        }
        diagnostics.arrived_mass += weight * mass;
    };

    let mut buckets: Vec<Vec<Fragment>> = vec![Vec::new(); horizon];
    for (z, path) in topo.route_paths.iter().enumerate() {
        let segs = &net.routes[z].segment_free_times;
        for dep in 0..horizon {
            let time = dep + segs[0] as usize;
            if path.is_empty() {
                arrive(&mut acc[z][dep], dep, time, 1.0, departures[z][dep]);
            } else {
                buckets[time.min(last)].push(Fragment {
                    route: z,
                    departure: dep,
                    leg: 0,
                    time,
                    weight: 1.0,
                });
            }
        }
    }

    for t in 0..horizon {
        for i in 0..nb {
            if t > 0 {
                queue_len[i][t] = step_queue(queue_len[i][t - 1], inflow[i][t - 1], mu[i]);
            }
            wait[i][t] = queue_len[i][t] / mu[i];
        }

        // Zero-length segments can push fragments back into this same slot.
        while !buckets[t].is_empty() {
            let mut batch = std::mem::take(&mut buckets[t]);
            batch.sort_unstable_by_key(Fragment::key);
            let mut merged: Vec<Fragment> = Vec::with_capacity(batch.len());
            for f in batch {
                match merged.last_mut() {
                    Some(m) if m.key() == f.key() => m.weight += f.weight,
                    _ => merged.push(f),
                }
            }

            for f in merged {
                let path = &topo.route_paths[f.route];
                let segs = &net.routes[f.route].segment_free_times;
                let b = path[f.leg];
                let mass = departures[f.route][f.departure];
                inflow[b][t] += mass * f.weight;

                let exit = f.time as f64 + wait[b][t];
                let floor = exit.floor();
                let frac = exit - floor;
                let floor = floor as usize;
                let cohort = &mut acc[f.route][f.departure];
                cohort.toll += f.weight * toll[b][floor.min(last)];
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(Passage {
                        route: f.route,
                        departure: f.departure,
                        bottleneck: b,
                        entry_slot: f.time,
                        exit_time: exit,
                        weight: f.weight,
                    });
                }

                for (slot, w) in [(floor, f.weight * (1.0 - frac)), (floor + 1, f.weight * frac)] {
                    if w <= 0.0 {
                        continue;
                    }
                    let next = slot + segs[f.leg + 1] as usize;
                    if f.leg + 1 < path.len() {
                        buckets[next.min(last)].push(Fragment {
                            route: f.route,
                            departure: f.departure,
                            leg: f.leg + 1,
                            time: next,
                            weight: w,
                        });
                    } else {
                        arrive(&mut acc[f.route][f.departure], f.departure, next, w, mass);
                    }
                }
            }
        }
    }

    let mut cost = vec![vec![0.0; horizon]; nr];
    let mut arrival = vec![vec![0.0; horizon]; nr];
    let mut travel_time = vec![vec![0.0; horizon]; nr];
    for z in 0..nr {
        for dep in 0..horizon {
            let a = &acc[z][dep];
            cost[z][dep] = a.toll + p.alpha * a.travel + a.schedule;
            arrival[z][dep] = a.arrival;
            travel_time[z][dep] = a.travel;
            if a.overflow {
                diagnostics.overflow_alternatives += 1;
            }
        }
    }
    if diagnostics.overflow_mass > 0.0 {
        log::debug!(
            "{:.3} vehicles pushed past the horizon of {horizon} slots",
            diagnostics.overflow_mass
        );
    }

    Ok(DayRecord {
        inflow,
        queue_len,
        wait,
        toll: toll.to_vec(),
        departures: departures.to_vec(),
        cost,
        arrival,
        travel_time,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::{BehaviorParams, Bottleneck, OdPair, Route};
    use approx::assert_relative_eq;

    pub(crate) fn single_route(mu: f64, segs: Vec<u32>, horizon: usize, t_star: usize) -> Network {
        Network {
            bottlenecks: vec![Bottleneck {
                id: 0,
                capacity_mu: mu,
                tolled: true,
            }],
            routes: vec![Route {
                id: 0,
                od_pair: 0,
                bottlenecks: vec![0],
                segment_free_times: segs,
            }],
            od_pairs: vec![OdPair {
                id: 0,
                demand: 0.0,
                routes: vec![0],
            }],
            params: BehaviorParams {
                alpha: 1.0,
                beta: 0.45,
                gamma: 1.2,
                theta: 0.05,
                lambda_mem: 0.0,
                t_mem: 1,
                delta_br: 0.5,
                t_star,
                horizon,
            },
        }
    }

    #[test]
    fn queue_step_branches() {
        assert_eq!(step_queue(5.0, 3.0, 2.0), 6.0);
        assert_eq!(step_queue(0.0, 1.0, 2.0), 0.0);
        assert_eq!(step_queue(0.0, 5.0, 2.0), 3.0);
    }

    #[test]
    fn waiting_time_values() {
        assert_eq!(waiting_time(6.0, 2.0).unwrap(), 3.0);
        assert_eq!(waiting_time(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(waiting_time(7.0, 2.0).unwrap(), 3.5);
        assert!(matches!(waiting_time(1.0, 0.0), Err(Error::InvalidCapacity(_))));
        assert!(waiting_time(1.0, -2.0).is_err());
    }

    #[test]
    fn uncongested_cost_is_free_flow_plus_schedule() {
        let net = single_route(2.0, vec![4, 6], 40, 30);
        let dep = vec![vec![0.0; 40]];
        let toll = vec![vec![0.0; 40]];
        let rec = simulate_day(&net, &dep, &toll).unwrap();
        assert_eq!(rec.total_wait(), 0.0);
        for t in 0..30 {
            let arr = t + 10;
            let sched = if arr < 29 {
                0.45 * (29 - arr) as f64
            } else {
                1.2 * (arr - 29) as f64
            };
            assert_relative_eq!(rec.cost[0][t], 10.0 + sched, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_vehicles_at_unit_capacity() {
        // Slot 1 (1-based) is index 0 here.
        let net = single_route(1.0, vec![0, 0], 5, 3);
        let mut dep = vec![vec![0.0; 5]];
        dep[0][0] = 2.0;
        let rec = simulate_day(&net, &dep, &[vec![0.0; 5]]).unwrap();
        assert_eq!(rec.queue_len[0][1], 1.0);
        assert_eq!(rec.wait[0][1], 1.0);
        assert_eq!(rec.queue_len[0][2], 0.0);
    }

    #[test]
    fn early_arrival_cost_example() {
        // Departure at slot 10, ten free slots, desired arrival 30.
        let net = single_route(5.0, vec![5, 5], 80, 30);
        let rec = simulate_day(&net, &[vec![0.0; 80]], &[vec![0.0; 80]]).unwrap();
        assert_relative_eq!(rec.cost[0][9], 14.5, epsilon = 1e-12);
        assert_eq!(rec.arrival[0][9], 19.0);
    }

    #[test]
    fn toll_charged_at_floor_of_exit() {
        let net = single_route(2.0, vec![0, 0], 10, 5);
        let mut dep = vec![vec![0.0; 10]];
        dep[0][0] = 3.0; // queue at slot 1 is 1 vehicle, wait 0.5
        let mut toll = vec![vec![0.0; 10]];
        toll[0][1] = 7.0;
        toll[0][2] = 100.0;
        let rec = simulate_day(&net, &dep, &toll).unwrap();
        assert_eq!(rec.wait[0][1], 0.5);
        // entry 1, exit 1.5: charged toll of slot 1, travel time 0.5
        assert_relative_eq!(rec.travel_time[0][1], 0.5);
        let sched = 0.5 * 0.45 * 3.0 + 0.5 * 0.45 * 2.0;
        assert_relative_eq!(rec.cost[0][1], 7.0 + 0.5 + sched, epsilon = 1e-12);
    }

    #[test]
    fn horizon_overflow_is_flagged() {
        let net = single_route(1.0, vec![3, 3], 10, 5);
        let mut dep = vec![vec![0.0; 10]];
        dep[0][8] = 1.0;
        let rec = simulate_day(&net, &dep, &[vec![0.0; 10]]).unwrap();
        assert!(rec.diagnostics.overflow_mass > 0.0);
        assert_eq!(rec.arrival[0][8], 9.0);
        // late penalty uses the true arrival slot 14
        assert_relative_eq!(rec.cost[0][8], 6.0 + 1.2 * 10.0);
        assert_relative_eq!(rec.diagnostics.arrived_mass, 1.0);
    }

    #[test]
    fn dimension_errors() {
        let net = single_route(1.0, vec![0, 0], 5, 3);
        assert!(matches!(
            simulate_day(&net, &[vec![0.0; 4]], &[vec![0.0; 5]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(simulate_day(&net, &[vec![-1.0; 5]], &[vec![0.0; 5]]).is_err());
    }

    #[test]
    fn csv_rows() {
        let net = single_route(1.0, vec![0, 0], 2, 1);
        let rec = simulate_day(&net, &[vec![2.0, 0.0]], &[vec![0.0, 0.5]]).unwrap();
        let mut buf = Vec::new();
        rec.write_csv_rows(&mut buf, 3, &[29]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3,29,1,2,0,0,0\n3,29,2,0,1,1,0.5\n");
    }
}
