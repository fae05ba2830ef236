//! Static scenario description: bottlenecks, routes, OD pairs and the
//! behavioural parameters of the travellers.
//!
//! Ids are external labels (a Sioux Falls bottleneck keeps its link number).
//! Every per-route or per-bottleneck array elsewhere in the crate is indexed by
//! *position* in the corresponding vector of [`Network`], not by id.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub id: usize,
    /// Service capacity in vehicles per slot.
    pub capacity_mu: f64,
    #[serde(default)]
    pub tolled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: usize,
    pub od_pair: usize,
    /// Bottleneck ids in traversal order.
    pub bottlenecks: Vec<usize>,
    /// Free-flow slots per segment; segment `k` ends at bottleneck `k`, the
    /// last one ends at the destination.
    pub segment_free_times: Vec<u32>,
}

impl Route {
    pub fn free_flow_time(&self) -> u32 {
        self.segment_free_times.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub id: usize,
    /// Vehicles per day.
    pub demand: f64,
    /// Route ids serving this pair.
    pub routes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    /// Value of time per slot.
    pub alpha: f64,
    /// Early-arrival penalty per slot.
    pub beta: f64,
    /// Late-arrival penalty per slot.
    pub gamma: f64,
    /// Logit scale.
    pub theta: f64,
    /// Memory weight of the perceived-cost average.
    pub lambda_mem: f64,
    /// Memory horizon in days.
    pub t_mem: usize,
    /// Bounded-rationality threshold.
    pub delta_br: f64,
    /// Desired arrival slot, 1-based.
    pub t_star: usize,
    /// Slots per day.
    pub horizon: usize,
}

impl BehaviorParams {
    /// `t_star` as a 0-based slot index.
    pub fn t_star_index(&self) -> usize {
        self.t_star.saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub bottlenecks: Vec<Bottleneck>,
    pub routes: Vec<Route>,
    pub od_pairs: Vec<OdPair>,
    pub params: BehaviorParams,
}

/// A broken invariant found by [`validate_network`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonPositiveCapacity {
        bottleneck: usize,
        capacity: f64,
    },
    DuplicateBottleneckId(usize),
    DuplicateRouteId(usize),
    DuplicateOdId(usize),
    DanglingBottleneck {
        route: usize,
        bottleneck: usize,
    },
    SegmentCount {
        route: usize,
        bottlenecks: usize,
        segments: usize,
    },
    UnknownOdPair {
        route: usize,
        od_pair: usize,
    },
    RouteOdMismatch {
        route: usize,
        od_pair: usize,
    },
    DanglingRoute {
        od_pair: usize,
        route: usize,
    },
    NegativeDemand {
        od_pair: usize,
        demand: f64,
    },
    NoRoutes(usize),
    Param(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NonPositiveCapacity { bottleneck, capacity } => {
                write!(f, "bottleneck {bottleneck}: capacity {capacity} is not positive")
            }
            DuplicateBottleneckId(id) => write!(f, "duplicate bottleneck id {id}"),
            DuplicateRouteId(id) => write!(f, "duplicate route id {id}"),
            DuplicateOdId(id) => write!(f, "duplicate OD pair id {id}"),
            DanglingBottleneck { route, bottleneck } => {
                write!(f, "route {route} references missing bottleneck {bottleneck}")
            }
            SegmentCount {
                route,
                bottlenecks,
                segments,
            } => write!(
                f,
                "route {route}: {segments} segment times for {bottlenecks} bottlenecks (need {})",
                bottlenecks + 1
            ),
            UnknownOdPair { route, od_pair } => {
                write!(f, "route {route} references missing OD pair {od_pair}")
            }
            RouteOdMismatch { route, od_pair } => {
                write!(
                    f,
                    "route {route} is listed under OD pair {od_pair} but belongs elsewhere"
                )
            }
            DanglingRoute { od_pair, route } => {
                write!(f, "OD pair {od_pair} references missing route {route}")
            }
            NegativeDemand { od_pair, demand } => {
                write!(f, "OD pair {od_pair}: negative demand {demand}")
            }
            NoRoutes(od) => write!(f, "OD pair {od} has no routes"),
            Param(msg) => write!(f, "behaviour parameters: {msg}"),
        }
    }
}

/// Checks every structural invariant of `net`. An empty result means the
/// network can be simulated.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut seen = HashSet::new();
    for b in &net.bottlenecks {
        if !seen.insert(b.id) {
            out.push(Violation::DuplicateBottleneckId(b.id));
        }
        if !(b.capacity_mu > 0.0) || !b.capacity_mu.is_finite() {
            out.push(Violation::NonPositiveCapacity {
                bottleneck: b.id,
                capacity: b.capacity_mu,
            });
        }
    }

    let od_ids: HashSet<usize> = net.od_pairs.iter().map(|o| o.id).collect();
    let mut route_od = HashMap::new();
    for r in &net.routes {
        if route_od.insert(r.id, r.od_pair).is_some() {
            out.push(Violation::DuplicateRouteId(r.id));
        }
        for &b in &r.bottlenecks {
            if !seen.contains(&b) {
                out.push(Violation::DanglingBottleneck {
                    route: r.id,
                    bottleneck: b,
                });
            }
        }
        if r.segment_free_times.len() != r.bottlenecks.len() + 1 {
            out.push(Violation::SegmentCount {
                route: r.id,
                bottlenecks: r.bottlenecks.len(),
                segments: r.segment_free_times.len(),
            });
        }
        if !od_ids.contains(&r.od_pair) {
            out.push(Violation::UnknownOdPair {
                route: r.id,
                od_pair: r.od_pair,
            });
        }
    }

    let mut seen_od = HashSet::new();
    for od in &net.od_pairs {
        if !seen_od.insert(od.id) {
            out.push(Violation::DuplicateOdId(od.id));
        }
        if !(od.demand >= 0.0) {
            out.push(Violation::NegativeDemand {
                od_pair: od.id,
                demand: od.demand,
            });
        }
        if od.routes.is_empty() {
            out.push(Violation::NoRoutes(od.id));
        }
        for r in &od.routes {
            match route_od.get(r) {
                None => out.push(Violation::DanglingRoute {
                    od_pair: od.id,
                    route: *r,
                }),
                Some(&owner) if owner != od.id => out.push(Violation::RouteOdMismatch {
                    route: *r,
                    od_pair: od.id,
                }),
                _ => {}
            }
        }
    }

    out.extend(validate_params(&net.params).into_iter().map(Violation::Param));
    out
}

fn validate_params(p: &BehaviorParams) -> Vec<String> {
    let mut out = Vec::new();
    if !(p.alpha > 0.0) {
        out.push(format!("alpha = {} must be positive", p.alpha));
    }
    if !(p.beta >= 0.0) {
        out.push(format!("beta = {} must be non-negative", p.beta));
    } else if p.beta >= p.alpha {
        log::warn!(
            "beta = {} >= alpha = {}: early arrival is never worth queueing for",
            p.beta,
            p.alpha
        );
    }
    if !(p.gamma > 0.0) {
        out.push(format!("gamma = {} must be positive", p.gamma));
    }
    if !(p.theta > 0.0) {
        out.push(format!("theta = {} must be positive", p.theta));
    }
    if !(0.0..1.0).contains(&p.lambda_mem) {
        out.push(format!("lambda_mem = {} must lie in [0, 1)", p.lambda_mem));
    }
    if p.t_mem < 1 {
        out.push("t_mem must be at least 1".into());
    }
    if !(p.delta_br >= 0.0) {
        out.push(format!("delta_br = {} must be non-negative", p.delta_br));
    }
    if p.t_star < 1 || p.t_star > p.horizon {
        out.push(format!("t_star = {} outside [1, horizon = {}]", p.t_star, p.horizon));
    }
    out
}

/// Position-resolved view of a valid network, used by the simulators.
#[derive(Clone, Debug)]
pub struct Topology {
    /// Per route: bottleneck positions in traversal order.
    pub route_paths: Vec<Vec<usize>>,
    /// Per OD pair: route positions.
    pub od_routes: Vec<Vec<usize>>,
    /// Per route: OD position.
    pub route_od: Vec<usize>,
}

impl Network {
    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn n_bottlenecks(&self) -> usize {
        self.bottlenecks.len()
    }

    pub fn n_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.od_pairs.iter().map(|o| o.demand).sum()
    }

    /// Positions of the tolled bottlenecks (the set `I`).
    pub fn tolled(&self) -> Vec<usize> {
        self.bottlenecks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.tolled)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.bottlenecks.iter().map(|b| b.capacity_mu).collect()
    }

    pub fn bottleneck_position(&self, id: usize) -> Option<usize> {
        self.bottlenecks.iter().position(|b| b.id == id)
    }

    /// Resolves id references to positions; fails with the violation list if
    /// the network is not valid.
    pub fn topology(&self) -> Result<Topology> {
        let violations = validate_network(self);
        if !violations.is_empty() {
            let msg = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::InvalidNetwork(msg));
        }
        let b_pos: HashMap<usize, usize> = self.bottlenecks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let r_pos: HashMap<usize, usize> = self.routes.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let od_pos: HashMap<usize, usize> = self.od_pairs.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
        Ok(Topology {
            route_paths: self
                .routes
                .iter()
                .map(|r| r.bottlenecks.iter().map(|b| b_pos[b]).collect())
                .collect(),
            od_routes: self
                .od_pairs
                .iter()
                .map(|o| o.routes.iter().map(|r| r_pos[r]).collect())
                .collect(),
            route_od: self.routes.iter().map(|r| od_pos[&r.od_pair]).collect(),
        })
    }
}
