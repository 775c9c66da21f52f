//! Shared fixtures and an independent policy replayer used by the
//! integration suites.
//!
//! The replayer deliberately avoids the solver's internals: it walks the
//! exported policy strings action by action against a fixed truth
//! assignment, so agreement with the solver's expected cost is evidence
//! rather than tautology.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use canbet::netmodel::{
    CovariateNames, EdgeKey, Intersection, NetworkFile, Road, RoadNetwork,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Bare network: unit-free roads given as (from, to, length, blockage prior);
/// a `Some` prior marks the road stochastic.
pub fn net_from_edges(ids: &[&str], roads: &[(&str, &str, f64, Option<f64>)]) -> RoadNetwork {
    let file = NetworkFile {
        covariate_names: CovariateNames {
            node_local: vec![],
            node_global: vec![],
            edge_local: vec![],
            edge_global: vec![],
        },
        intersections: ids
            .iter()
            .map(|id| Intersection {
                id: (*id).into(),
                local: vec![],
                global: vec![],
            })
            .collect(),
        roads: roads
            .iter()
            .map(|&(a, b, length, p)| Road {
                from: a.into(),
                to: b.into(),
                length,
                exists: true,
                stochastic: p.is_some(),
                block_probability: p.unwrap_or(0.0),
                local: vec![],
                global: vec![],
            })
            .collect(),
    };
    RoadNetwork::from_file(file).expect("test network is well formed")
}

/// The worked four-intersection example used across the suites.
pub fn diamond() -> RoadNetwork {
    net_from_edges(
        &["A", "B", "C", "D"],
        &[
            ("A", "B", 0.5, None),
            ("B", "C", 0.9, None),
            ("A", "C", 1.0, None),
            ("B", "D", 1.0, Some(0.5)),
            ("C", "D", 1.0, None),
        ],
    )
}

/// Tracked-road order as the exported policy lists it, recovered from any
/// one key (every key carries the full list).
fn tracked_order(policy: &BTreeMap<String, String>) -> Vec<EdgeKey> {
    let Some(key) = policy.keys().next() else {
        return vec![];
    };
    let (_, parts) = key.split_once('|').expect("keys carry a node prefix");
    if parts.is_empty() {
        return vec![];
    }
    parts
        .split(',')
        .map(|part| {
            let (road, _) = part.rsplit_once('=').expect("road=state parts");
            let (a, b) = road.split_once('-').expect("dashed road name");
            EdgeKey::new(a, b)
        })
        .collect()
}

/// Walk an exported policy under one truth assignment for the stochastic
/// roads.  Returns the realized cost, or `None` when the policy declares the
/// traveller stranded.  Panics on malformed or incomplete policies: a missing
/// state, an illegal traverse, or a walk that never terminates are all
/// solver bugs the oracle must surface.
pub fn replay(
    net: &RoadNetwork,
    policy: &BTreeMap<String, String>,
    source: &str,
    dest: &str,
    repair_wait: f64,
    truth: &BTreeMap<EdgeKey, bool>,
) -> Option<f64> {
    if source == dest {
        return Some(0.0);
    }
    let tracked = tracked_order(policy);
    let mut knowledge: Vec<char> = vec!['U'; tracked.len()];
    let mut here = net.node_idx(&source.into()).expect("source exists");
    let dest = net.node_idx(&dest.into()).expect("destination exists");
    let mut cost = 0.0;
    for _ in 0..10_000 {
        let here_id = net.node_id(here).clone();
        for (pos, road) in tracked.iter().enumerate() {
            if knowledge[pos] == 'U' && (road.first() == &here_id || road.second() == &here_id) {
                knowledge[pos] = if truth[road] { 'B' } else { 'O' };
            }
        }
        if here == dest {
            return Some(cost);
        }
        let parts: Vec<String> = tracked
            .iter()
            .zip(&knowledge)
            .map(|(road, state)| format!("{road}={state}"))
            .collect();
        let key = format!("{here_id}|{}", parts.join(","));
        let action = policy
            .get(&key)
            .unwrap_or_else(|| panic!("policy has no entry for reached state {key}"));
        if action == "stranded" {
            return None;
        }
        let (verb, road) = action.split_once(' ').expect("verb and road");
        let (a, b) = road.split_once('-').expect("dashed road name");
        let road = EdgeKey::new(a, b);
        let over = road.other(&here_id).expect("action leaves the current node");
        let length = net.road(&road).expect("action uses a real road").length;
        match verb {
            "traverse" => {
                if let Some(pos) = tracked.iter().position(|t| t == &road) {
                    assert_eq!(knowledge[pos], 'O', "traversed {road} without knowing it open");
                }
                cost += length;
            }
            "wait" => {
                let pos = tracked
                    .iter()
                    .position(|t| t == &road)
                    .expect("waits only make sense on stochastic roads");
                assert_eq!(knowledge[pos], 'B', "waited on {road} not known blocked");
                knowledge[pos] = 'O';
                cost += repair_wait + length;
            }
            other => panic!("unknown action verb {other}"),
        }
        here = net.node_idx(over).expect("road endpoint exists");
    }
    panic!("policy walk did not terminate");
}

/// Expected cost by brute force: enumerate all 2^r truth assignments over
/// the stochastic roads, replay the policy under each, and weight by the
/// blockage priors.  Infinite when any positive-weight realization strands
/// the traveller.
pub fn enumerated_cost(
    net: &RoadNetwork,
    policy: &BTreeMap<String, String>,
    source: &str,
    dest: &str,
    repair_wait: f64,
) -> f64 {
    let stochastic: Vec<(EdgeKey, f64)> = net
        .existing_roads()
        .filter(|(_, r)| r.stochastic)
        .map(|(_, r)| (r.key(), r.block_probability))
        .collect();
    assert!(stochastic.len() <= 20, "enumeration oracle is exponential");
    let mut total = 0.0;
    for mask in 0u32..1 << stochastic.len() {
        let mut weight = 1.0;
        let mut truth = BTreeMap::new();
        for (pos, (road, p)) in stochastic.iter().enumerate() {
            let blocked = mask >> pos & 1 == 1;
            weight *= if blocked { *p } else { 1.0 - *p };
            truth.insert(road.clone(), blocked);
        }
        if weight == 0.0 {
            continue;
        }
        match replay(net, policy, source, dest, repair_wait, &truth) {
            Some(cost) => total += weight * cost,
            None => return f64::INFINITY,
        }
    }
    total
}

/// A solvable random instance: connected network of 3 to 6 intersections,
/// at most 5 stochastic roads with priors inside (0.1, 0.9), and a repair
/// wait that is finite half the time.
pub fn random_ctp_case(seed: u64) -> (RoadNetwork, String, String, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n: usize = rng.random_range(3..=6);
        let density: f64 = rng.random_range(0.4..0.9);
        let mut roads: Vec<(usize, usize, f64, Option<f64>)> = vec![];
        let mut stochastic = 0;
        for i in 0..n {
            for j in i + 1..n {
                if !rng.random_bool(density) {
                    continue;
                }
                let length: f64 = rng.random_range(0.5..2.0);
                let p = if stochastic < 5 && rng.random_bool(0.5) {
                    stochastic += 1;
                    Some(rng.random_range(0.1..0.9))
                } else {
                    None
                };
                roads.push((i, j, length, p));
            }
        }
        if !connected(n, &roads) {
            continue;
        }
        let ids: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let road_refs: Vec<(&str, &str, f64, Option<f64>)> = roads
            .iter()
            .map(|&(i, j, length, p)| (id_refs[i], id_refs[j], length, p))
            .collect();
        let net = net_from_edges(&id_refs, &road_refs);
        let repair_wait = if rng.random_bool(0.5) {
            rng.random_range(0.5..3.0)
        } else {
            f64::INFINITY
        };
        return (net, "N0".to_owned(), format!("N{}", n - 1), repair_wait);
    }
}

fn connected(n: usize, roads: &[(usize, usize, f64, Option<f64>)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(i, j, _, _) in roads {
            let over = if i == v { j } else if j == v { i } else { continue };
            if !seen[over] {
                seen[over] = true;
                stack.push(over);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
