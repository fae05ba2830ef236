//! Built-in scenarios, the scenario file format and the Sioux Falls builder.
//!
//! A scenario file is TOML holding a [`Network`]: a `[params]` table and
//! `[[bottlenecks]]`, `[[routes]]`, `[[od_pairs]]` arrays with the field
//! names of the corresponding structs, plus `version = 1`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tntp::{load_tntp, load_trips, TntpNetwork};
use crate::controller::Scenario;
use crate::error::{Error, Result};
use crate::net_model::{validate_network, BehaviorParams, Bottleneck, Network, OdPair, Route};

pub const SCENARIO_VERSION: u32 = 1;

fn parallel_params() -> BehaviorParams {
    BehaviorParams {
        alpha: 1.0,
        beta: 0.45,
        gamma: 1.2,
        theta: 0.05,
        lambda_mem: 0.0,
        t_mem: 1,
        delta_br: 0.5,
        t_star: 30,
        horizon: 80,
    }
}

/// Demand of the parallel scenario, vehicles per day.
pub const PARALLEL_DEMAND: f64 = 205.0;
/// Capacities of the three parallel bottlenecks, vehicles per slot.
pub const PARALLEL_CAPACITY: [f64; 3] = [9.0, 10.0, 11.0];
/// Free-flow slots before and after each parallel bottleneck.
pub const PARALLEL_SEGMENTS: [[u32; 2]; 3] = [[3, 3], [3, 3], [3, 3]];

/// One OD pair served by three routes, each crossing its own tolled
/// bottleneck. Capacity and demand are chosen so that all three bottlenecks
/// queue in the zero-toll converged state.
pub fn build_scenario_parallel() -> Network {
    let bottlenecks = (0..3)
        .map(|k| Bottleneck {
            id: k + 1,
            capacity_mu: PARALLEL_CAPACITY[k],
            tolled: true,
        })
        .collect();
    let routes = (0..3)
        .map(|k| Route {
            id: k + 1,
            od_pair: 1,
            bottlenecks: vec![k + 1],
            segment_free_times: PARALLEL_SEGMENTS[k].to_vec(),
        })
        .collect();
    Network {
        bottlenecks,
        routes,
        od_pairs: vec![OdPair {
            id: 1,
            demand: PARALLEL_DEMAND,
            routes: vec![1, 2, 3],
        }],
        params: parallel_params(),
    }
}

pub const SINGLE_DEMAND: f64 = 75.0;
pub const SINGLE_CAPACITY: f64 = 10.0;

/// One OD pair, one route, one tolled bottleneck; behaviour as in the
/// parallel scenario.
pub fn build_scenario_single() -> Network {
    Network {
        bottlenecks: vec![Bottleneck {
            id: 1,
            capacity_mu: SINGLE_CAPACITY,
            tolled: true,
        }],
        routes: vec![Route {
            id: 1,
            od_pair: 1,
            bottlenecks: vec![1],
            segment_free_times: vec![3, 3],
        }],
        od_pairs: vec![OdPair {
            id: 1,
            demand: SINGLE_DEMAND,
            routes: vec![1],
        }],
        params: parallel_params(),
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    version: u32,
    params: BehaviorParams,
    bottlenecks: Vec<Bottleneck>,
    routes: Vec<Route>,
    od_pairs: Vec<OdPair>,
}

pub fn scenario_to_toml(net: &Network) -> Result<String> {
    let file = ScenarioFile {
        version: SCENARIO_VERSION,
        params: net.params.clone(),
        bottlenecks: net.bottlenecks.clone(),
        routes: net.routes.clone(),
        od_pairs: net.od_pairs.clone(),
    };
    toml::to_string(&file).map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
}

pub fn scenario_from_toml(text: &str) -> Result<Network> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(format!("invalid scenario file: {e}")))?;
    if file.version != SCENARIO_VERSION {
        return Err(Error::Config(format!(
            "unsupported scenario version {} (expected {SCENARIO_VERSION})",
            file.version
        )));
    }
    let net = Network {
        bottlenecks: file.bottlenecks,
        routes: file.routes,
        od_pairs: file.od_pairs,
        params: file.params,
    };
    net.topology()?;
    Ok(net)
}

pub fn load_scenario_file(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_toml(&text)
}

pub fn save_scenario_file(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_toml(net)?).map_err(|e| Error::io(path, e))
}

/// Directory holding the shipped data files; `CPRICING_DATA` overrides it.
pub fn data_dir() -> PathBuf {
    std::env::var_os("CPRICING_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiouxOd {
    pub origin: usize,
    pub dest: usize,
    /// Vehicles per day before `demand_scale`; when absent the trip-table
    /// entry is used.
    #[serde(default)]
    pub demand: Option<f64>,
    /// Explicit node paths; when empty the `k_routes` shortest paths by
    /// free-flow time are used.
    #[serde(default)]
    pub routes: Vec<Vec<usize>>,
}

/// Everything the Sioux Falls scenario needs beyond the TNTP files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiouxCalibration {
    pub version: u32,
    /// TNTP network and trip files, relative to the calibration file.
    pub network_file: PathBuf,
    #[serde(default)]
    pub trips_file: Option<PathBuf>,
    /// Free-flow minutes per slot; link slots are `max(1, round(fft / slot_minutes))`.
    pub slot_minutes: f64,
    /// Vehicles per slot per unit of TNTP capacity.
    pub capacity_scale: f64,
    #[serde(default = "default_demand_scale")]
    pub demand_scale: f64,
    pub k_routes: usize,
    pub tolled_links: Vec<usize>,
    pub target_congested: Vec<usize>,
    pub params: BehaviorParams,
    pub od: Vec<SiouxOd>,
}

fn default_demand_scale() -> f64 {
    1.0
}

impl SiouxCalibration {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.network_file = base.join(&c.network_file);
        c.trips_file = c.trips_file.map(|t| base.join(t));
        Ok(c)
    }

    /// The shipped calibration.
    pub fn shipped() -> Result<Self> {
        Self::load(&data_dir().join("sioux_calibration.toml"))
    }

    fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported calibration version {}",
                self.version
            )));
        }
        if !(self.slot_minutes > 0.0 && self.capacity_scale > 0.0 && self.demand_scale >= 0.0) {
            return Err(Error::Config(
                "slot_minutes and capacity_scale must be positive, demand_scale non-negative".into(),
            ));
        }
        if self.k_routes == 0 {
            return Err(Error::Config("k_routes must be positive".into()));
        }
        Ok(())
    }
}

/// Outgoing links per node: `(term node, link number, free-flow time)`.
fn adjacency(tntp: &TntpNetwork) -> Vec<Vec<(usize, usize, f64)>> {
    let mut adj = vec![Vec::new(); tntp.nodes + 1];
    for (k, l) in tntp.links.iter().enumerate() {
        adj[l.init_node].push((l.term_node, k + 1, l.free_flow_time));
    }
    adj
}

fn dijkstra(
    adj: &[Vec<(usize, usize, f64)>],
    src: usize,
    dst: usize,
    banned_nodes: &HashSet<usize>,
    banned_links: &HashSet<usize>,
) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    dist[src] = 0.0;
    loop {
        let u = (0..n)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))?;
        if u == dst {
            break;
        }
        done[u] = true;
        for &(v, link, w) in &adj[u] {
            if banned_nodes.contains(&v) || banned_links.contains(&link) {
                continue;
            }
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                prev[v] = u;
            }
        }
    }
    let mut path = vec![dst];
    while *path.last().unwrap() != src {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Some(path)
}

fn path_links(tntp: &TntpNetwork, nodes: &[usize]) -> Result<Vec<usize>> {
    nodes
        .windows(2)
        .map(|w| {
            tntp.link_number(w[0], w[1])
                .ok_or_else(|| Error::Config(format!("no link {} -> {} in the network", w[0], w[1])))
        })
        .collect()
}

fn path_cost(tntp: &TntpNetwork, nodes: &[usize]) -> f64 {
    path_links(tntp, nodes)
        .map(|ls| ls.iter().map(|&l| tntp.links[l - 1].free_flow_time).sum())
        .unwrap_or(f64::INFINITY)
}

/// The `k` shortest loopless node paths by free-flow time (Yen's algorithm),
/// ties broken by node sequence.
pub fn k_shortest_paths(tntp: &TntpNetwork, src: usize, dst: usize, k: usize) -> Vec<Vec<usize>> {
    let adj = adjacency(tntp);
    let Some(first) = dijkstra(&adj, src, dst, &HashSet::new(), &HashSet::new()) else {
        return Vec::new();
    };
    let mut found = vec![first];
    let mut candidates: BTreeSet<(u64, Vec<usize>)> = BTreeSet::new();
    while found.len() < k {
        let last = found.last().unwrap().clone();
        for i in 0..last.len() - 1 {
            let root = &last[..=i];
            let mut banned_links = HashSet::new();
            for p in &found {
                if p.len() > i + 1 && &p[..=i] == root {
                    if let Some(l) = tntp.link_number(p[i], p[i + 1]) {
                        banned_links.insert(l);
                    }
                }
            }
            let banned_nodes: HashSet<usize> = root[..i].iter().copied().collect();
            if let Some(spur) = dijkstra(&adj, root[i], dst, &banned_nodes, &banned_links) {
                let mut full = root[..i].to_vec();
                full.extend(spur);
                if !found.contains(&full) {
                    // free-flow times are finite; order them exactly through their bits
                    candidates.insert((path_cost(tntp, &full).to_bits(), full));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, p)) => found.push(p),
            None => break,
        }
    }
    found
}

/// Builds the Sioux Falls network: every link traversed by some route is a
/// bottleneck whose id is its TNTP link number.
pub fn build_scenario_sioux(tntp: &TntpNetwork, calib: &SiouxCalibration) -> Result<Network> {
    calib.validate()?;
    let trips = match &calib.trips_file {
        Some(p) if calib.od.iter().any(|o| o.demand.is_none()) => Some(load_trips(p)?),
        _ => None,
    };
    let slots = |fft: f64| ((fft / calib.slot_minutes).round() as u32).max(1);

    let mut used: BTreeMap<usize, ()> = BTreeMap::new();
    let mut routes = Vec::new();
    let mut od_pairs = Vec::new();
    for (o_idx, od) in calib.od.iter().enumerate() {
        let od_id = o_idx + 1;
        let base = match (od.demand, &trips) {
            (Some(d), _) => d,
            (None, Some(t)) => t.get(od.origin, od.dest),
            (None, None) => {
                return Err(Error::Config(format!(
                    "OD {} -> {} has no demand and no trip table is configured",
                    od.origin, od.dest
                )))
            }
        };
        let paths = if od.routes.is_empty() {
            k_shortest_paths(tntp, od.origin, od.dest, calib.k_routes)
        } else {
            od.routes.clone()
        };
        if paths.is_empty() {
            return Err(Error::Config(format!("no path from {} to {}", od.origin, od.dest)));
        }
        let mut ids = Vec::new();
        for p in paths {
            if p.first() != Some(&od.origin) || p.last() != Some(&od.dest) {
                return Err(Error::Config(format!(
                    "route {p:?} does not join {} and {}",
                    od.origin, od.dest
                )));
            }
            let links = path_links(tntp, &p)?;
            let mut segs = vec![0];
            segs.extend(links.iter().map(|&l| slots(tntp.links[l - 1].free_flow_time)));
            for &l in &links {
                used.insert(l, ());
            }
            let id = routes.len() + 1;
            routes.push(Route {
                id,
                od_pair: od_id,
                bottlenecks: links,
                segment_free_times: segs,
            });
            ids.push(id);
        }
        od_pairs.push(OdPair {
            id: od_id,
            demand: base * calib.demand_scale,
            routes: ids,
        });
    }
    for &l in &calib.tolled_links {
        if !used.contains_key(&l) {
            return Err(Error::Config(format!("tolled link {l} is not on any route")));
        }
    }
    let bottlenecks = used
        .keys()
        .map(|&l| Bottleneck {
            id: l,
            capacity_mu: tntp.links[l - 1].capacity * calib.capacity_scale,
            tolled: calib.tolled_links.contains(&l),
        })
        .collect();
    let net = Network {
        bottlenecks,
        routes,
        od_pairs,
        params: calib.params.clone(),
    };
    let v = validate_network(&net);
    if !v.is_empty() {
        return Err(Error::InvalidNetwork(
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(net)
}

/// Loads the shipped TNTP files and calibration.
pub fn load_sioux() -> Result<(Network, SiouxCalibration)> {
    let calib = SiouxCalibration::shipped()?;
    let tntp = load_tntp(&calib.network_file)?;
    Ok((build_scenario_sioux(&tntp, &calib)?, calib))
}

/// Congested bottleneck ids of a prepared scenario against a target set.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub congested: Vec<usize>,
    pub missing: Vec<usize>,
    pub extra: Vec<usize>,
}

impl CalibrationReport {
    pub fn matches(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty()
    }
}

/// Compares the baseline-congested links with `target`; a mismatch is
/// logged as a warning, the scenario stays usable.
pub fn calibration_report(
    net: &Network,
    baseline: &crate::day_to_day::BaselineStats,
    target: &[usize],
) -> CalibrationReport {
    let congested: Vec<usize> = baseline
        .congested()
        .into_iter()
        .map(|i| net.bottlenecks[i].id)
        .collect();
    let missing = target
        .iter()
        .copied()
        .filter(|l| !congested.contains(l))
        .collect::<Vec<_>>();
    let extra = congested
        .iter()
        .copied()
        .filter(|l| !target.contains(l))
        .collect::<Vec<_>>();
    let report = CalibrationReport {
        congested,
        missing,
        extra,
    };
    if !report.matches() {
        log::warn!(
            "calibration misses its congestion target: congested {:?}, missing {:?}, extra {:?}",
            report.congested,
            report.missing,
            report.extra
        );
    }
    report
}

/// Named built-in scenario or a scenario file path.
pub fn resolve_scenario(name: &str) -> Result<Network> {
    match name {
        "parallel" => Ok(build_scenario_parallel()),
        "single" => Ok(build_scenario_single()),
        "sioux" => Ok(load_sioux()?.0),
        path => load_scenario_file(Path::new(path)),
    }
}

/// Prepares a zero-toll converged scenario; Sioux Falls additionally checks
/// its calibration target.
pub fn prepare(name: &str, eps: f64, max_days: usize) -> Result<Scenario> {
    let net = resolve_scenario(name)?;
    let scenario = Scenario::prepare(net, eps, max_days)?;
    if name == "sioux" {
        let calib = SiouxCalibration::shipped()?;
        calibration_report(&scenario.net, &scenario.baseline, &calib.target_congested);
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tntp::parse_tntp;

    #[test]
    fn parallel_shape() {
        let net = build_scenario_parallel();
        assert_eq!(net.routes.len(), 3);
        assert_eq!(net.tolled().len(), 3);
        assert_eq!(net.params.horizon, 80);
        assert_eq!(net.params.t_star, 30);
    }

    #[test]
    fn scenario_toml_round_trip() {
        for net in [build_scenario_parallel(), build_scenario_single()] {
            let text = scenario_to_toml(&net).unwrap();
            assert_eq!(scenario_from_toml(&text).unwrap(), net);
        }
        assert!(scenario_from_toml("version = 2").is_err());
    }

    #[test]
    fn shipped_scenario_files_match_builders() {
        let dir = data_dir().join("scenarios");
        assert_eq!(
            load_scenario_file(&dir.join("parallel.toml")).unwrap(),
            build_scenario_parallel()
        );
        assert_eq!(
            load_scenario_file(&dir.join("single.toml")).unwrap(),
            build_scenario_single()
        );
    }

    fn grid() -> TntpNetwork {
        // 1 -> 2 -> 4 (2 + 2), 1 -> 3 -> 4 (1 + 4), 1 -> 4 (5), 2 -> 3 (1)
        let text = "<NUMBER OF NODES> 4\n<NUMBER OF LINKS> 6\n<END OF METADATA>\n\
            1 2 10 1 2 0 0 0 0 1 ;\n2 4 10 1 2 0 0 0 0 1 ;\n1 3 10 1 1 0 0 0 0 1 ;\n\
            3 4 10 1 4 0 0 0 0 1 ;\n1 4 10 1 5.5 0 0 0 0 1 ;\n2 3 10 1 1 0 0 0 0 1 ;\n";
        parse_tntp(text, "grid").unwrap()
    }

    #[test]
    fn yen_orders_paths() {
        let p = k_shortest_paths(&grid(), 1, 4, 4);
        assert_eq!(p, vec![vec![1, 2, 4], vec![1, 3, 4], vec![1, 4], vec![1, 2, 3, 4]]);
        assert_eq!(k_shortest_paths(&grid(), 4, 1, 3), Vec::<Vec<usize>>::new());
        assert_eq!(k_shortest_paths(&grid(), 1, 4, 10).len(), 4);
    }

    #[test]
    fn shipped_sioux_tntp_shape() {
        let calib = SiouxCalibration::shipped().unwrap();
        let tntp = load_tntp(&calib.network_file).unwrap();
        assert_eq!(tntp.nodes, 24);
        assert_eq!(tntp.links.len(), 76);
        assert_eq!(tntp.link_number(10, 16), Some(29));
        assert_eq!(tntp.link_number(19, 17), Some(58));
    }

    #[test]
    fn sioux_tolled_set() {
        let (net, _) = load_sioux().unwrap();
        let ids: Vec<usize> = net.tolled().into_iter().map(|i| net.bottlenecks[i].id).collect();
        assert_eq!(ids, vec![29, 48, 53, 58]);
        assert_eq!(net.params.horizon, 250);
        assert_eq!(net.params.t_star, 75);
    }

    #[test]
    fn tolled_link_off_route_is_rejected() {
        let mut calib = SiouxCalibration::shipped().unwrap();
        let tntp = load_tntp(&calib.network_file).unwrap();
        calib.tolled_links.push(1);
        assert!(build_scenario_sioux(&tntp, &calib).is_err());
    }
}
