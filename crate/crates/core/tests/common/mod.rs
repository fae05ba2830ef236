#![allow(dead_code)]

use congestion_pricing::{BehaviorParams, Bottleneck, Network, OdPair, Route};
use rand::Rng;

pub fn params(horizon: usize) -> BehaviorParams {
    BehaviorParams {
        alpha: 1.0,
        beta: 0.45,
        gamma: 1.2,
        theta: 0.05,
        lambda_mem: 0.0,
        t_mem: 1,
        delta_br: 0.5,
        t_star: horizon / 2 + 1,
        horizon,
    }
}

/// Random network with up to 4 bottlenecks, up to 20 slots and one to three
/// OD pairs. Routes visit distinct bottlenecks in random order.
pub fn random_network<R: Rng>(rng: &mut R) -> Network {
    let nb = rng.random_range(1..=4);
    let horizon = rng.random_range(4..=20);
    let bottlenecks = (0..nb)
        .map(|k| Bottleneck {
            id: k + 1,
            capacity_mu: rng.random_range(0.5..5.0),
            tolled: rng.random_bool(0.5),
        })
        .collect();
    let n_od = rng.random_range(1..=3);
    let mut routes = Vec::new();
    let mut od_pairs = Vec::new();
    for od in 1..=n_od {
        let mut ids = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let mut pool: Vec<usize> = (1..=nb).collect();
            let len = rng.random_range(0..=nb);
            let mut path = Vec::new();
            for _ in 0..len {
                path.push(pool.swap_remove(rng.random_range(0..pool.len())));
            }
            let segs = (0..=path.len()).map(|_| rng.random_range(0..3)).collect();
            let id = routes.len() + 1;
            routes.push(Route {
                id,
                od_pair: od,
                bottlenecks: path,
                segment_free_times: segs,
            });
            ids.push(id);
        }
        od_pairs.push(OdPair {
            id: od,
            demand: rng.random_range(0.0..40.0),
            routes: ids,
        });
    }
    Network {
        bottlenecks,
        routes,
        od_pairs,
        params: params(horizon),
    }
}

pub fn random_departures<R: Rng>(net: &Network, rng: &mut R) -> Vec<Vec<f64>> {
    let t = net.params.horizon;
    net.routes
        .iter()
        .map(|_| {
            (0..t)
                .map(|_| {
                    if rng.random_bool(0.6) {
                        rng.random_range(0.0..6.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn random_tolls<R: Rng>(net: &Network, rng: &mut R) -> Vec<Vec<f64>> {
    let t = net.params.horizon;
    net.bottlenecks
        .iter()
        .map(|_| (0..t).map(|_| rng.random_range(0.0..3.0)).collect())
        .collect()
}

pub fn zero_grid(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; cols]; rows]
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
