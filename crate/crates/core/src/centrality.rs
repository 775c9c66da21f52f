//! Node and road centrality: classical geodesic measures plus a
//! blockage-aware betweenness that scores a road by the expected detour its
//! blockage inflicts on travellers who only discover it on arrival.
//!
//! The classical family (degree, closeness, node and edge betweenness) uses
//! informed shortest paths.  The blockage-aware score for road (i,j)
//! aggregates, over origin-destination pairs, the difference between the
//! expected adaptive travel cost with the road pinned blocked and pinned
//! open; pairs are either all unordered pairs with equal weight or an
//! explicit trip-frequency list.  The normalizing divisor (n-1)(n-2) is
//! kept for the equal-weight mode even though unordered pairs number
//! n(n-1)/2; trip lists normalize by total weight.
//!
//! Sampled mode shares one set of blockage realizations across every road
//! and pair (common random numbers), so that sampling noise cancels when
//! roads are compared or the scores feed a fixed-point loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ctp::{self, CtpError, CtpQuery, ForcedState, PolicyWalker};
use crate::netmodel::{EdgeKey, NetworkError, NodeId, RoadNetwork};
use crate::routing::{self, RoutingError};

/// Origin-destination weighting for the blockage-aware score.
#[derive(Clone, Debug, PartialEq)]
pub enum PairWeights {
    /// Every unordered node pair, unit weight, verbatim (n-1)(n-2) divisor.
    Equal,
    /// Explicit (from, to, trips) triples; scores normalize by total trips.
    Trips(Vec<(NodeId, NodeId, f64)>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CbMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

impl std::fmt::Display for CbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CbMode::Exact => write!(f, "exact"),
            CbMode::Sampled { .. } => write!(f, "sampled"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanadianBetweenness {
    pub scores: BTreeMap<EdgeKey, f64>,
    /// Per-road standard error of the sampled estimate; `None` for exact.
    pub std_errors: Option<BTreeMap<EdgeKey, f64>>,
    /// Pairs dropped because the destination was unreachable even with the
    /// road under study open.
    pub skipped_pairs: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeScores {
    pub degree: usize,
    pub closeness: f64,
    pub betweenness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeScores {
    pub betweenness: f64,
    pub canadian_betweenness: f64,
    pub canadian_std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralityReport {
    pub nodes: BTreeMap<NodeId, NodeScores>,
    pub roads: BTreeMap<EdgeKey, EdgeScores>,
    pub mode: CbMode,
    pub skipped_pairs: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Error)]
pub enum CentralityError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Ctp(#[from] CtpError),
    #[error("network is disconnected; unreachable pairs: {}", list_pairs(.pairs))]
    Disconnected { pairs: Vec<(NodeId, NodeId)> },
    #[error("pair weight for `{from}`-`{to}` must be a positive number, got {weight}")]
    BadWeight { from: NodeId, to: NodeId, weight: f64 },
    #[error("pair `{from}`-`{to}` listed twice")]
    DuplicatePair { from: NodeId, to: NodeId },
    #[error("pair endpoints must differ, got `{0}` twice")]
    IdenticalPair(NodeId),
    #[error("empty pair list")]
    NoPairs,
    #[error("sampled mode needs at least one realization")]
    NoSamples,
}

fn list_pairs(pairs: &[(NodeId, NodeId)]) -> String {
    let head: Vec<String> = pairs.iter().take(4).map(|(a, b)| format!("{a}-{b}")).collect();
    if pairs.len() > 4 {
        format!("{} and {} more", head.join(", "), pairs.len() - 4)
    } else {
        head.join(", ")
    }
}

/// All-pairs informed distances; errors with the unreachable pairs when the
/// network is disconnected.
fn full_distances(net: &RoadNetwork) -> Result<Vec<Vec<f64>>, CentralityError> {
    let n = net.node_count();
    let none = BTreeSet::new();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        rows.push(routing::distances_from(net, net.node_id(i), &none)?);
    }
    let mut missing = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if !rows[i][j].is_finite() {
                missing.push((net.node_id(i).clone(), net.node_id(j).clone()));
            }
        }
    }
    if missing.is_empty() {
        Ok(rows)
    } else {
        Err(CentralityError::Disconnected { pairs: missing })
    }
}

/// Inverse average distance (n-1)/sum per node.
pub fn closeness(net: &RoadNetwork) -> Result<BTreeMap<NodeId, f64>, CentralityError> {
    let dist = full_distances(net)?;
    let n = net.node_count();
    let mut out = BTreeMap::new();
    for i in 0..n {
        let sum: f64 = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).sum();
        let c = if n > 1 { (n - 1) as f64 / sum } else { 0.0 };
        out.insert(net.node_id(i).clone(), c);
    }
    Ok(out)
}

fn pair_norm(n: usize) -> f64 {
    if n > 2 {
        ((n - 1) * (n - 2)) as f64
    } else {
        1.0
    }
}

/// Average over ordered pairs (k,l), k,l distinct from the node, of the
/// fraction of k-l geodesics passing through it, divided by (n-1)(n-2).
pub fn node_betweenness(net: &RoadNetwork) -> Result<BTreeMap<NodeId, f64>, CentralityError> {
    full_distances(net)?;
    let n = net.node_count();
    let mut acc = vec![0.0; n];
    for k in 0..n {
        for l in (k + 1)..n {
            let census = routing::geodesic_census(net, net.node_id(k), net.node_id(l))?;
            for (i, item) in acc.iter_mut().enumerate() {
                if i != k && i != l {
                    // Both orientations of the unordered pair.
                    *item += 2.0 * census.through_node[i] / census.count;
                }
            }
        }
    }
    let norm = pair_norm(n);
    Ok((0..n)
        .map(|i| (net.node_id(i).clone(), acc[i] / norm))
        .collect())
}

/// As node betweenness with traversal fractions per road; pairs touching
/// either endpoint of the road are excluded from its sum.
pub fn edge_betweenness(net: &RoadNetwork) -> Result<BTreeMap<EdgeKey, f64>, CentralityError> {
    full_distances(net)?;
    let n = net.node_count();
    let road_ends: Vec<Option<(usize, usize)>> = net
        .roads()
        .iter()
        .map(|r| {
            if r.exists {
                Some((net.node_idx(&r.from).unwrap(), net.node_idx(&r.to).unwrap()))
            } else {
                None
            }
        })
        .collect();
    let mut acc = vec![0.0; road_ends.len()];
    for k in 0..n {
        for l in (k + 1)..n {
            let census = routing::geodesic_census(net, net.node_id(k), net.node_id(l))?;
            for (ri, ends) in road_ends.iter().enumerate() {
                let Some((a, b)) = ends else { continue };
                if [k, l].iter().any(|x| x == a || x == b) {
                    continue;
                }
                acc[ri] += 2.0 * census.through_road[ri] / census.count;
            }
        }
    }
    let norm = pair_norm(n);
    Ok(road_ends
        .iter()
        .enumerate()
        .filter_map(|(ri, ends)| {
            ends.map(|_| (net.roads()[ri].key(), acc[ri] / norm))
        })
        .collect())
}

/// Resolved (source, dest, weight) pairs in deterministic order, plus the
/// normalizing divisor.
fn resolve_pairs(
    net: &RoadNetwork,
    weights: &PairWeights,
) -> Result<(Vec<(usize, usize, f64)>, f64), CentralityError> {
    match weights {
        PairWeights::Equal => {
            let n = net.node_count();
            let mut pairs = Vec::new();
            for k in 0..n {
                for l in 0..k {
                    pairs.push((k, l, 1.0));
                }
            }
            Ok((pairs, pair_norm(n)))
        }
        PairWeights::Trips(list) => {
            if list.is_empty() {
                return Err(CentralityError::NoPairs);
            }
            let mut seen = BTreeSet::new();
            let mut pairs = Vec::with_capacity(list.len());
            let mut total = 0.0;
            for (from, to, w) in list {
                if from == to {
                    return Err(CentralityError::IdenticalPair(from.clone()));
                }
                let k = net.node_idx(from)?;
                let l = net.node_idx(to)?;
                if !seen.insert((k.min(l), k.max(l))) {
                    return Err(CentralityError::DuplicatePair {
                        from: from.clone(),
                        to: to.clone(),
                    });
                }
                if !(w.is_finite() && *w > 0.0) {
                    return Err(CentralityError::BadWeight {
                        from: from.clone(),
                        to: to.clone(),
                        weight: *w,
                    });
                }
                pairs.push((k, l, *w));
                total += w;
            }
            Ok((pairs, total))
        }
    }
}

fn push_skip(skipped: &mut BTreeSet<(NodeId, NodeId)>, net: &RoadNetwork, k: usize, l: usize) {
    let (a, b) = (net.node_id(k).clone(), net.node_id(l).clone());
    skipped.insert(if a <= b { (a, b) } else { (b, a) });
}

/// Expected blockage detour per road, aggregated over origin-destination
/// pairs.  Pair evaluations run concurrently; aggregation order is fixed.
pub fn canadian_betweenness(
    net: &RoadNetwork,
    repair_wait: f64,
    weights: &PairWeights,
    mode: &CbMode,
) -> Result<CanadianBetweenness, CentralityError> {
    let (pairs, norm) = resolve_pairs(net, weights)?;
    match *mode {
        CbMode::Exact => exact_cb(net, repair_wait, &pairs, norm),
        CbMode::Sampled { samples, seed } => {
            if samples == 0 {
                return Err(CentralityError::NoSamples);
            }
            sampled_cb(net, repair_wait, &pairs, norm, samples, seed)
        }
    }
}

fn exact_cb(
    net: &RoadNetwork,
    repair_wait: f64,
    pairs: &[(usize, usize, f64)],
    norm: f64,
) -> Result<CanadianBetweenness, CentralityError> {
    let mut scores = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    for (_, road) in net.existing_roads() {
        let key = road.key();
        let deltas: Vec<Result<f64, CtpError>> = pairs
            .par_iter()
            .map(|&(k, l, w)| {
                ctp::delta_distance(net, net.node_id(k), net.node_id(l), &key, repair_wait)
                    .map(|d| w * d)
            })
            .collect();
        let mut sum = 0.0;
        for (&(k, l, _), delta) in pairs.iter().zip(deltas) {
            match delta {
                Ok(wd) => sum += wd,
                Err(CtpError::UnreachableBaseline { .. }) => push_skip(&mut skipped, net, k, l),
                Err(e) => return Err(e.into()),
            }
        }
        scores.insert(key, sum / norm);
    }
    Ok(CanadianBetweenness {
        scores,
        std_errors: None,
        skipped_pairs: skipped.into_iter().collect(),
    })
}

enum PairSample {
    /// Per-realization cost differences (blocked minus open).
    Diffs(Vec<f64>),
    /// Open scenario stranded in some realization: drop the pair.
    Skip,
    /// Blocked scenario stranded while open completes: infinite detour.
    Unbounded,
}

fn sampled_cb(
    net: &RoadNetwork,
    repair_wait: f64,
    pairs: &[(usize, usize, f64)],
    norm: f64,
    samples: usize,
    seed: u64,
) -> Result<CanadianBetweenness, CentralityError> {
    // One realization table shared by every road and pair.
    let mut stochastic: Vec<(usize, f64)> = net
        .existing_roads()
        .filter(|(_, r)| r.stochastic && r.block_probability > 0.0 && r.block_probability < 1.0)
        .map(|(ri, r)| (ri, r.block_probability))
        .collect();
    stochastic.sort_by(|a, b| net.road_at(a.0).key().cmp(&net.road_at(b.0).key()));
    let road_count = net.roads().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<bool>> = (0..samples)
        .map(|_| {
            let mut row = vec![false; road_count];
            for &(ri, p) in &stochastic {
                row[ri] = rng.random_bool(p);
            }
            row
        })
        .collect();

    let mut scores = BTreeMap::new();
    let mut errors = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    for (_, road) in net.existing_roads() {
        let key = road.key();
        let outcomes: Vec<Result<PairSample, CtpError>> = pairs
            .par_iter()
            .map(|&(k, l, _)| {
                let base = CtpQuery::new(net.node_id(k).clone(), net.node_id(l).clone())
                    .with_repair_wait(repair_wait);
                let mut open = PolicyWalker::new(
                    net,
                    &base.clone().with_forced(key.clone(), ForcedState::Open),
                )?;
                let mut blocked = PolicyWalker::new(
                    net,
                    &base.with_forced(key.clone(), ForcedState::Blocked),
                )?;
                let mut diffs = Vec::with_capacity(samples);
                for row in &draws {
                    let draw = |ri: usize| row[ri];
                    let co = open.walk(&draw);
                    let cb = blocked.walk(&draw);
                    match (co, cb) {
                        (None, _) => return Ok(PairSample::Skip),
                        (Some(_), None) => return Ok(PairSample::Unbounded),
                        (Some(o), Some(b)) => diffs.push(b - o),
                    }
                }
                Ok(PairSample::Diffs(diffs))
            })
            .collect();

        let mut aggregate = vec![0.0; samples];
        let mut score = 0.0;
        let mut unbounded = false;
        for (&(k, l, w), outcome) in pairs.iter().zip(outcomes) {
            match outcome? {
                PairSample::Skip => push_skip(&mut skipped, net, k, l),
                PairSample::Unbounded => unbounded = true,
                PairSample::Diffs(diffs) => {
                    let mean = diffs.iter().sum::<f64>() / samples as f64;
                    score += w * mean.max(0.0);
                    for (agg, d) in aggregate.iter_mut().zip(&diffs) {
                        *agg += w * d;
                    }
                }
            }
        }
        if unbounded {
            scores.insert(key.clone(), f64::INFINITY);
            errors.insert(key, f64::INFINITY);
        } else {
            let m = samples as f64;
            let agg_mean = aggregate.iter().sum::<f64>() / m;
            let var = if samples > 1 {
                aggregate.iter().map(|a| (a - agg_mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            scores.insert(key.clone(), score / norm);
            errors.insert(key, (var / m).sqrt() / norm);
        }
    }
    Ok(CanadianBetweenness {
        scores,
        std_errors: Some(errors),
        skipped_pairs: skipped.into_iter().collect(),
    })
}

/// Every measure in one pass over the network.
pub fn centrality_report(
    net: &RoadNetwork,
    repair_wait: f64,
    weights: &PairWeights,
    mode: &CbMode,
) -> Result<CentralityReport, CentralityError> {
    let close = closeness(net)?;
    let node_b = node_betweenness(net)?;
    let edge_b = edge_betweenness(net)?;
    let canadian = canadian_betweenness(net, repair_wait, weights, mode)?;
    let mut nodes = BTreeMap::new();
    for (id, c) in close {
        let degree = net.degree(&id)?;
        let betweenness = node_b[&id];
        nodes.insert(
            id,
            NodeScores {
                degree,
                closeness: c,
                betweenness,
            },
        );
    }
    let mut roads = BTreeMap::new();
    for (key, b) in edge_b {
        roads.insert(
            key.clone(),
            EdgeScores {
                betweenness: b,
                canadian_betweenness: canadian.scores[&key],
                canadian_std_error: canadian.std_errors.as_ref().map(|m| m[&key]),
            },
        );
    }
    Ok(CentralityReport {
        nodes,
        roads,
        mode: *mode,
        skipped_pairs: canadian.skipped_pairs,
    })
}
