//! Deterministic shortest paths and path enumeration.
//!
//! All queries here treat the network as fully known: existing roads are
//! traversable unless listed in the caller's blocked set, and stochastic
//! flags are ignored.  Recourse-aware routing under uncertainty lives in
//! [`crate::ctp`].
//!
//! Equal-cost ties are always broken towards the lexicographically smallest
//! node sequence, so every query is a pure function of its inputs.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::netmodel::{EdgeKey, NetworkError, NodeId, RoadNetwork};

/// Simple-path enumeration is exponential; refuse networks above this size.
pub const PATH_ENUMERATION_ROAD_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("no route from `{from}` to `{to}` avoiding the blocked roads")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("path enumeration supports at most {limit} existing roads, this network has {roads}")]
    TooManyRoads { roads: usize, limit: usize },
    #[error("geodesic census needs distinct endpoints, got `{0}` twice")]
    IdenticalEndpoints(NodeId),
}

/// A walk through the network with its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

impl Route {
    /// The roads traversed, in order.
    pub fn roads(&self) -> Vec<EdgeKey> {
        self.nodes
            .windows(2)
            .map(|w| EdgeKey::new(w[0].clone(), w[1].clone()))
            .collect()
    }
}

/// Comparison slack for recognising equal-cost paths assembled in different
/// summation orders.
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

// Min-heap on cost, then node index, via reversed comparison.
impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra distances from `source` to every node, skipping roads in
/// `blocked`.  Unreachable nodes get `f64::INFINITY`.
pub fn distances_from(
    net: &RoadNetwork,
    source: &NodeId,
    blocked: &BTreeSet<EdgeKey>,
) -> Result<Vec<f64>, RoutingError> {
    let s = net.node_idx(source)?;
    let mut dist = vec![f64::INFINITY; net.node_count()];
    dist[s] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(State { cost: 0.0, node: s });
    while let Some(State { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &(next, ri) in net.incident(node) {
            let road = net.road_at(ri);
            if blocked.contains(&road.key()) {
                continue;
            }
            let cand = cost + road.length;
            if cand < dist[next] {
                dist[next] = cand;
                heap.push(State {
                    cost: cand,
                    node: next,
                });
            }
        }
    }
    Ok(dist)
}

/// Cheapest route between two intersections, avoiding `blocked` roads.
/// Among equal-cost routes the lexicographically smallest node sequence is
/// returned.
pub fn shortest_path(
    net: &RoadNetwork,
    from: &NodeId,
    to: &NodeId,
    blocked: &BTreeSet<EdgeKey>,
) -> Result<Route, RoutingError> {
    let s = net.node_idx(from)?;
    net.node_idx(to)?;
    let to_target = distances_from(net, to, blocked)?;
    if !to_target[s].is_finite() {
        return Err(RoutingError::Unreachable {
            from: from.clone(),
            to: to.clone(),
        });
    }
    // Walk greedily from the source: at each step take the smallest-id
    // neighbour that still lies on some cheapest continuation.
    let mut nodes = vec![from.clone()];
    let mut cost = 0.0;
    let mut at = s;
    while net.node_id(at) != to {
        let mut chosen: Option<(usize, f64)> = None;
        for &(next, ri) in net.incident(at) {
            let road = net.road_at(ri);
            if blocked.contains(&road.key()) {
                continue;
            }
            if close(road.length + to_target[next], to_target[at]) {
                let better = match chosen {
                    None => true,
                    Some((cur, _)) => net.node_id(next) < net.node_id(cur),
                };
                if better {
                    chosen = Some((next, road.length));
                }
            }
        }
        let (next, length) = chosen.expect("shortest-path walk cannot dead-end");
        cost += length;
        nodes.push(net.node_id(next).clone());
        at = next;
    }
    Ok(Route { nodes, cost })
}

/// Every cheapest route between two intersections, sorted lexicographically
/// by node sequence.
pub fn geodesics(
    net: &RoadNetwork,
    from: &NodeId,
    to: &NodeId,
    blocked: &BTreeSet<EdgeKey>,
) -> Result<Vec<Route>, RoutingError> {
    let s = net.node_idx(from)?;
    let t = net.node_idx(to)?;
    let to_target = distances_from(net, to, blocked)?;
    if !to_target[s].is_finite() {
        return Err(RoutingError::Unreachable {
            from: from.clone(),
            to: to.clone(),
        });
    }
    let mut out = Vec::new();
    let mut prefix = vec![from.clone()];
    fn descend(
        net: &RoadNetwork,
        blocked: &BTreeSet<EdgeKey>,
        to_target: &[f64],
        at: usize,
        t: usize,
        cost: f64,
        prefix: &mut Vec<NodeId>,
        out: &mut Vec<Route>,
    ) {
        if at == t {
            out.push(Route {
                nodes: prefix.clone(),
                cost,
            });
            return;
        }
        for &(next, ri) in net.incident(at) {
            let road = net.road_at(ri);
            if blocked.contains(&road.key()) {
                continue;
            }
            if close(road.length + to_target[next], to_target[at]) {
                prefix.push(net.node_id(next).clone());
                descend(net, blocked, to_target, next, t, cost + road.length, prefix, out);
                prefix.pop();
            }
        }
    }
    descend(net, blocked, &to_target, s, t, 0.0, &mut prefix, &mut out);
    out.sort_by(|a, b| a.nodes.cmp(&b.nodes));
    Ok(out)
}

/// Geodesic counts from `source`: for each node, its distance and the number
/// of distinct cheapest routes reaching it.  Counts are floats because they
/// grow combinatorially.
pub fn geodesic_counts(
    net: &RoadNetwork,
    source: &NodeId,
    blocked: &BTreeSet<EdgeKey>,
) -> Result<(Vec<f64>, Vec<f64>), RoutingError> {
    let s = net.node_idx(source)?;
    let dist = distances_from(net, source, blocked)?;
    let mut sigma = vec![0.0; net.node_count()];
    sigma[s] = 1.0;
    // Positive lengths make distance a topological order for geodesic edges.
    let mut order: Vec<usize> = (0..net.node_count()).filter(|&v| dist[v].is_finite()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    for &u in &order {
        for &(v, ri) in net.incident(u) {
            let road = net.road_at(ri);
            if blocked.contains(&road.key()) {
                continue;
            }
            if dist[v] > dist[u] && close(dist[u] + road.length, dist[v]) {
                sigma[v] += sigma[u];
            }
        }
    }
    Ok((dist, sigma))
}

/// Every simple (no repeated intersection) route between two intersections
/// avoiding `blocked` roads, sorted by cost, then lexicographically.
/// Exponential, so guarded by [`PATH_ENUMERATION_ROAD_LIMIT`]; this is the
/// enumeration oracle the cheaper queries are tested against.
pub fn simple_paths(
    net: &RoadNetwork,
    from: &NodeId,
    to: &NodeId,
    blocked: &BTreeSet<EdgeKey>,
) -> Result<Vec<Route>, RoutingError> {
    let roads = net.existing_roads().count();
    if roads > PATH_ENUMERATION_ROAD_LIMIT {
        return Err(RoutingError::TooManyRoads {
            roads,
            limit: PATH_ENUMERATION_ROAD_LIMIT,
        });
    }
    let s = net.node_idx(from)?;
    let t = net.node_idx(to)?;
    let mut out = Vec::new();
    let mut on_path = vec![false; net.node_count()];
    let mut prefix = vec![from.clone()];
    on_path[s] = true;
    fn descend(
        net: &RoadNetwork,
        blocked: &BTreeSet<EdgeKey>,
        at: usize,
        t: usize,
        cost: f64,
        on_path: &mut Vec<bool>,
        prefix: &mut Vec<NodeId>,
        out: &mut Vec<Route>,
    ) {
        if at == t {
            out.push(Route {
                nodes: prefix.clone(),
                cost,
            });
            return;
        }
        for &(next, ri) in net.incident(at) {
            if on_path[next] || blocked.contains(&net.road_at(ri).key()) {
                continue;
            }
            on_path[next] = true;
            prefix.push(net.node_id(next).clone());
            descend(net, blocked, next, t, cost + net.road_at(ri).length, on_path, prefix, out);
            prefix.pop();
            on_path[next] = false;
        }
    }
    descend(net, blocked, s, t, 0.0, &mut on_path, &mut prefix, &mut out);
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.nodes.cmp(&b.nodes)));
    Ok(out)
}

/// Geodesic structure of one node pair: total count plus, for every node and
/// road, how many of the cheapest routes pass through it.  Counts for the
/// endpoints themselves equal the total.
#[derive(Clone, Debug)]
pub struct GeodesicCensus {
    pub distance: f64,
    pub count: f64,
    /// Indexed like the network's intersection list.
    pub through_node: Vec<f64>,
    /// Indexed like the network's road list.
    pub through_road: Vec<f64>,
}

pub fn geodesic_census(
    net: &RoadNetwork,
    from: &NodeId,
    to: &NodeId,
) -> Result<GeodesicCensus, RoutingError> {
    if from == to {
        return Err(RoutingError::IdenticalEndpoints(from.clone()));
    }
    let t = net.node_idx(to)?;
    let none = BTreeSet::new();
    let (from_source, sigma_source) = geodesic_counts(net, from, &none)?;
    let (from_target, sigma_target) = geodesic_counts(net, to, &none)?;
    let distance = from_source[t];
    if !distance.is_finite() {
        return Err(RoutingError::Unreachable {
            from: from.clone(),
            to: to.clone(),
        });
    }
    let count = sigma_source[t];
    let on_geodesic = |part: f64| close(part, distance);
    let through_node = (0..net.node_count())
        .map(|k| {
            if on_geodesic(from_source[k] + from_target[k]) {
                sigma_source[k] * sigma_target[k]
            } else {
                0.0
            }
        })
        .collect();
    let through_road = net
        .roads()
        .iter()
        .map(|road| {
            if !road.exists {
                return 0.0;
            }
            let (a, b) = (
                net.node_idx(&road.from).expect("validated endpoint"),
                net.node_idx(&road.to).expect("validated endpoint"),
            );
            let mut n = 0.0;
            if on_geodesic(from_source[a] + road.length + from_target[b]) {
                n += sigma_source[a] * sigma_target[b];
            }
            if on_geodesic(from_source[b] + road.length + from_target[a]) {
                n += sigma_source[b] * sigma_target[a];
            }
            n
        })
        .collect();
    Ok(GeodesicCensus {
        distance,
        count,
        through_node,
        through_road,
    })
}
