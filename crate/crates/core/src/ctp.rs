//! Travel planning when roads may be blocked and a blockage is only
//! discovered on arrival at one of its endpoints.
//!
//! The traveller knows each road's blockage probability but not its state;
//! reaching an intersection reveals the true state of every road meeting it
//! (the source's roads are revealed at the start).  A plan therefore trades
//! committed travel cost against information, and the solver computes the
//! plan minimising expected total cost, with an optional "wait x_r for
//! repair" action at roads known to be blocked.
//!
//! Two layers cooperate:
//!
//! - the *believer* values a (location, knowledge) state under the prior
//!   probabilities.  Within fixed knowledge, movement is deterministic, so
//!   each knowledge layer reduces to a cheapest-route problem whose exits
//!   are the destination, "reveal" nodes with unresolved incident roads,
//!   and wait-and-traverse offers at known-blocked roads;
//! - the *evaluator* replays the believer's decisions while resolving each
//!   revelation according to the realized truth, which may be pinned per
//!   road via [`CtpQuery::forced`].  A forced state the believer considered
//!   impossible (a never-stochastic road turning out blocked) simply enters
//!   the knowledge as a fact and the believer re-derives its plan from
//!   there.
//!
//! Knowledge states form a DAG (unknown roads resolve, blocked roads can
//! only be repaired), so the memoized recursion terminates; the per-road
//! 2-bit encoding caps tracked roads at 32 and the guard keeps exact solves
//! well below that.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::netmodel::{EdgeKey, NetworkError, NodeId, RoadNetwork};

/// Default cap on the number of tracked (stochastic or forced) roads for the
/// exact solver; the memo is bounded by nodes × 3^tracked.
pub const DEFAULT_STATE_GUARD: usize = 14;

const UNKNOWN: u8 = 0;
const OPEN: u8 = 1;
const BLOCKED: u8 = 2;

/// Realized truth pinned onto one road, hidden from the traveller until the
/// road is revealed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcedState {
    Open,
    Blocked,
}

/// One travel query.
#[derive(Clone, Debug)]
pub struct CtpQuery {
    pub source: NodeId,
    pub dest: NodeId,
    /// Cost of waiting for a blocked road to clear before traversing it;
    /// infinity disables waiting.
    pub repair_wait: f64,
    /// Roads whose realized state is pinned; any existing road may appear,
    /// including never-stochastic ones (the "removal unknown to the
    /// traveller" counterfactual).
    pub forced: BTreeMap<EdgeKey, ForcedState>,
    pub guard_max_stochastic: usize,
}

impl CtpQuery {
    pub fn new(source: impl Into<NodeId>, dest: impl Into<NodeId>) -> Self {
        CtpQuery {
            source: source.into(),
            dest: dest.into(),
            repair_wait: f64::INFINITY,
            forced: BTreeMap::new(),
            guard_max_stochastic: DEFAULT_STATE_GUARD,
        }
    }

    pub fn with_repair_wait(mut self, x_r: f64) -> Self {
        self.repair_wait = x_r;
        self
    }

    pub fn with_forced(mut self, road: EdgeKey, state: ForcedState) -> Self {
        self.forced.insert(road, state);
        self
    }
}

/// What the plan does next from some state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CtpAction {
    Traverse(EdgeKey),
    Wait(EdgeKey),
}

impl std::fmt::Display for CtpAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CtpAction::Traverse(road) => write!(f, "traverse {road}"),
            CtpAction::Wait(road) => write!(f, "wait {road}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CtpSolution {
    /// Expected total cost under the optimal plan, with forced roads
    /// resolving to their pinned state and all others to their blockage
    /// probability; infinity when the destination can be unreachable with
    /// no wait recourse.
    pub expected_cost: f64,
    /// Action at the start, evaluated at the most probable initial
    /// revelation outcome (ties resolve to open); `None` when source equals
    /// destination or no plan exists.
    pub first_action: Option<CtpAction>,
    /// Optimal action per visited (location, knowledge) state.  Keys look
    /// like `B|A-C=O,B-D=U`; values are `traverse a-b`, `wait a-b`, or
    /// `stranded`.
    pub policy: BTreeMap<String, String>,
    pub node_expansions: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationResult {
    /// Mean realized cost over the completed journeys.
    pub mean: f64,
    pub std_error: f64,
    /// Fraction of realizations in which the destination was unreachable.
    pub unreachable_fraction: f64,
    pub realizations: usize,
}

#[derive(Debug, Error)]
pub enum CtpError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{tracked} roads need state tracking, above the exact-solver guard of {limit}")]
    GuardExceeded { tracked: usize, limit: usize },
    #[error("repair wait must be a positive number or infinity, got {0}")]
    BadRepairWait(f64),
    #[error("forced road `{0}` does not exist in the network")]
    ForcedNonexistentRoad(EdgeKey),
    #[error("destination `{dest}` unreachable from `{from}` even with `{road}` open; no baseline to compare against")]
    UnreachableBaseline {
        from: NodeId,
        dest: NodeId,
        road: EdgeKey,
    },
    #[error("need at least one realization")]
    NoRealizations,
}

// ---- knowledge codec -------------------------------------------------------

fn kget(k: u64, i: usize) -> u8 {
    ((k >> (2 * i)) & 3) as u8
}

fn kset(k: u64, i: usize, state: u8) -> u64 {
    (k & !(3u64 << (2 * i))) | ((state as u64) << (2 * i))
}

fn state_char(state: u8) -> char {
    match state {
        OPEN => 'O',
        BLOCKED => 'B',
        _ => 'U',
    }
}

// ---- solver ----------------------------------------------------------------

/// Where the believer's within-layer walk ends.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Exit {
    AtDest,
    /// Walk onto a node with unresolved incident roads, triggering a
    /// revelation there.
    Reveal { node: usize },
    /// Walk to `node`, pay the repair wait for `road`, traverse it.
    Wait { node: usize, road: usize },
    Stranded,
}

#[derive(Clone, Copy, Debug)]
struct LayerChoice {
    value: f64,
    walk_cost: f64,
    exit: Exit,
    /// Road taken first when the walk moves at all.
    first_hop: Option<usize>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Solver<'a> {
    net: &'a RoadNetwork,
    source: usize,
    dest: usize,
    repair_wait: f64,
    /// Tracked road indices in edge-key order; everything else is always
    /// open.
    tracked: Vec<usize>,
    /// road index -> position in `tracked`.
    tracked_pos: HashMap<usize, usize>,
    /// Blockage probability as the traveller believes it.
    believed_p: Vec<f64>,
    /// Realized truth: pinned state, or None for "draw from believed_p".
    truth: Vec<Option<ForcedState>>,
    /// Per node: positions in `tracked` of its incident roads.
    node_tracked: Vec<Vec<usize>>,
    v_memo: HashMap<(usize, u64), LayerChoice>,
    e_memo: HashMap<(usize, u64), f64>,
    expansions: u64,
}

impl<'a> Solver<'a> {
    fn new(net: &'a RoadNetwork, query: &CtpQuery) -> Result<Self, CtpError> {
        let source = net.node_idx(&query.source)?;
        let dest = net.node_idx(&query.dest)?;
        if !(query.repair_wait > 0.0) {
            return Err(CtpError::BadRepairWait(query.repair_wait));
        }
        for road in query.forced.keys() {
            let idx = net
                .road_idx(road)
                .map_err(|_| CtpError::ForcedNonexistentRoad(road.clone()))?;
            if !net.road_at(idx).exists {
                return Err(CtpError::ForcedNonexistentRoad(road.clone()));
            }
        }

        let mut tracked: Vec<usize> = net
            .existing_roads()
            .filter(|(_, r)| {
                (r.stochastic && r.block_probability > 0.0) || query.forced.contains_key(&r.key())
            })
            .map(|(i, _)| i)
            .collect();
        tracked.sort_by(|&a, &b| net.road_at(a).key().cmp(&net.road_at(b).key()));

        let tracked_pos: HashMap<usize, usize> =
            tracked.iter().enumerate().map(|(p, &ri)| (ri, p)).collect();
        let believed_p = tracked
            .iter()
            .map(|&ri| {
                let road = net.road_at(ri);
                if road.stochastic {
                    road.block_probability
                } else {
                    0.0
                }
            })
            .collect();
        let truth = tracked
            .iter()
            .map(|&ri| query.forced.get(&net.road_at(ri).key()).copied())
            .collect();
        let mut node_tracked = vec![Vec::new(); net.node_count()];
        for (pos, &ri) in tracked.iter().enumerate() {
            let road = net.road_at(ri);
            for end in [&road.from, &road.to] {
                node_tracked[net.node_idx(end)?].push(pos);
            }
        }
        Ok(Solver {
            net,
            source,
            dest,
            repair_wait: query.repair_wait,
            tracked,
            tracked_pos,
            believed_p,
            truth,
            node_tracked,
            v_memo: HashMap::new(),
            e_memo: HashMap::new(),
            expansions: 0,
        })
    }

    fn check_guard(&self, limit: usize) -> Result<(), CtpError> {
        let cap = limit.min(32); // 2-bit packing in a u64
        if self.tracked.len() > cap {
            return Err(CtpError::GuardExceeded {
                tracked: self.tracked.len(),
                limit: cap,
            });
        }
        Ok(())
    }

    fn unresolved(&self, node: usize, k: u64) -> Vec<usize> {
        self.node_tracked[node]
            .iter()
            .copied()
            .filter(|&pos| kget(k, pos) == UNKNOWN)
            .collect()
    }

    fn is_settled(&self, node: usize, k: u64) -> bool {
        self.node_tracked[node]
            .iter()
            .all(|&pos| kget(k, pos) != UNKNOWN)
    }

    /// Is this road traversable under knowledge `k`?
    fn road_open(&self, road_idx: usize, k: u64) -> bool {
        match self.tracked_pos.get(&road_idx) {
            Some(&pos) => kget(k, pos) == OPEN,
            None => true,
        }
    }

    /// Believer value of being at `v` under knowledge `k` (all roads at `v`
    /// already revealed), together with the plan achieving it.
    fn layer_choice(&mut self, v: usize, k: u64) -> LayerChoice {
        if let Some(&c) = self.v_memo.get(&(v, k)) {
            return c;
        }
        let choice = self.solve_layer(v, k);
        self.v_memo.insert((v, k), choice);
        choice
    }

    fn solve_layer(&mut self, v: usize, k: u64) -> LayerChoice {
        if v == self.dest {
            return LayerChoice {
                value: 0.0,
                walk_cost: 0.0,
                exit: Exit::AtDest,
                first_hop: None,
            };
        }
        debug_assert!(self.is_settled(v, k), "layer source must be revealed");

        let n = self.net.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[v] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { cost: 0.0, node: v });
        // (total, preference class, node, road): lower wins, ties prefer
        // finishing over revealing over waiting, then smaller indices.
        let mut candidates: Vec<(f64, u8, usize, usize, f64, Exit)> = Vec::new();

        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            self.expansions += 1;
            if node == self.dest {
                candidates.push((cost, 0, node, usize::MAX, cost, Exit::AtDest));
                continue;
            }
            if !self.is_settled(node, k) {
                let arrive = self.believer_arrival(node, k);
                candidates.push((
                    cost + arrive,
                    1,
                    node,
                    usize::MAX,
                    cost,
                    Exit::Reveal { node },
                ));
                continue;
            }
            // Wait offers at this settled node.
            if self.repair_wait.is_finite() {
                let incident = self.node_tracked[node].clone();
                for pos in incident {
                    if kget(k, pos) != BLOCKED {
                        continue;
                    }
                    let ri = self.tracked[pos];
                    let road = self.net.road_at(ri);
                    let over = self.net.node_idx(road.key().other(self.net.node_id(node)).unwrap())
                        .expect("road endpoint exists");
                    let repaired = kset(k, pos, OPEN);
                    let arrive = self.believer_arrival(over, repaired);
                    candidates.push((
                        cost + self.repair_wait + road.length + arrive,
                        2,
                        node,
                        ri,
                        cost,
                        Exit::Wait { node, road: ri },
                    ));
                }
            }
            for &(next, ri) in self.net.incident(node) {
                if !self.road_open(ri, k) {
                    continue;
                }
                let cand = cost + self.net.road_at(ri).length;
                if cand < dist[next] {
                    dist[next] = cand;
                    pred[next] = Some((node, ri));
                    heap.push(HeapEntry {
                        cost: cand,
                        node: next,
                    });
                }
            }
        }

        let best = candidates
            .into_iter()
            .filter(|c| c.0.is_finite())
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| a.2.cmp(&b.2))
                    .then_with(|| a.3.cmp(&b.3))
            });
        match best {
            None => LayerChoice {
                value: f64::INFINITY,
                walk_cost: 0.0,
                exit: Exit::Stranded,
                first_hop: None,
            },
            Some((value, _, exit_node, _, walk_cost, exit)) => LayerChoice {
                value,
                walk_cost,
                exit,
                first_hop: first_hop_to(&pred, v, exit_node),
            },
        }
    }

    /// Believer expectation on stepping onto `node`: resolve its unrevealed
    /// roads under the believed probabilities.
    fn believer_arrival(&mut self, node: usize, k: u64) -> f64 {
        if node == self.dest {
            return 0.0;
        }
        let unresolved = self.unresolved(node, k);
        self.branch(&unresolved, k, 0, &mut |s, k| s.layer_choice(node, k).value)
    }

    /// Sum over joint outcomes of `unresolved[at..]` with believed
    /// probabilities, weighting `leaf` at each fully resolved knowledge.
    /// Zero-probability outcomes are skipped, never multiplied.
    fn branch(
        &mut self,
        unresolved: &[usize],
        k: u64,
        at: usize,
        leaf: &mut dyn FnMut(&mut Self, u64) -> f64,
    ) -> f64 {
        if at == unresolved.len() {
            return leaf(self, k);
        }
        let pos = unresolved[at];
        let p = self.believed_p[pos];
        let mut total = 0.0;
        if p < 1.0 {
            total += (1.0 - p) * self.branch(unresolved, kset(k, pos, OPEN), at + 1, leaf);
        }
        if p > 0.0 {
            total += p * self.branch(unresolved, kset(k, pos, BLOCKED), at + 1, leaf);
        }
        total
    }

    /// Truth-weighted branch: forced roads resolve to their pinned state,
    /// others follow the believed (= true) probability.
    fn truth_branch(
        &mut self,
        unresolved: &[usize],
        k: u64,
        at: usize,
        leaf: &mut dyn FnMut(&mut Self, u64) -> f64,
    ) -> f64 {
        if at == unresolved.len() {
            return leaf(self, k);
        }
        let pos = unresolved[at];
        match self.truth[pos] {
            Some(ForcedState::Open) => {
                self.truth_branch(unresolved, kset(k, pos, OPEN), at + 1, leaf)
            }
            Some(ForcedState::Blocked) => {
                self.truth_branch(unresolved, kset(k, pos, BLOCKED), at + 1, leaf)
            }
            None => {
                let p = self.believed_p[pos];
                let mut total = 0.0;
                if p < 1.0 {
                    total += (1.0 - p)
                        * self.truth_branch(unresolved, kset(k, pos, OPEN), at + 1, leaf);
                }
                if p > 0.0 {
                    total +=
                        p * self.truth_branch(unresolved, kset(k, pos, BLOCKED), at + 1, leaf);
                }
                total
            }
        }
    }

    /// Expected realized cost of following the believer's plan from `v`
    /// under `k`, revelations resolved by the truth distribution.
    fn eval_truth(&mut self, v: usize, k: u64) -> f64 {
        if v == self.dest {
            return 0.0;
        }
        if let Some(&e) = self.e_memo.get(&(v, k)) {
            return e;
        }
        let choice = self.layer_choice(v, k);
        let value = match choice.exit {
            Exit::Stranded => f64::INFINITY,
            Exit::AtDest => choice.walk_cost,
            Exit::Reveal { node } => choice.walk_cost + self.truth_arrival(node, k),
            Exit::Wait { node, road } => {
                let r = self.net.road_at(road);
                let over = self
                    .net
                    .node_idx(r.key().other(self.net.node_id(node)).unwrap())
                    .expect("road endpoint exists");
                let pos = self.tracked_pos[&road];
                choice.walk_cost
                    + self.repair_wait
                    + r.length
                    + self.truth_arrival(over, kset(k, pos, OPEN))
            }
        };
        self.e_memo.insert((v, k), value);
        value
    }

    fn truth_arrival(&mut self, node: usize, k: u64) -> f64 {
        if node == self.dest {
            return 0.0;
        }
        let unresolved = self.unresolved(node, k);
        self.truth_branch(&unresolved, k, 0, &mut |s, k| s.eval_truth(node, k))
    }

    /// Most probable initial revelation outcome at the source, ties
    /// resolving to open.
    fn modal_initial_knowledge(&self) -> u64 {
        let mut k = 0u64;
        for &pos in &self.node_tracked[self.source] {
            let state = match self.truth[pos] {
                Some(ForcedState::Open) => OPEN,
                Some(ForcedState::Blocked) => BLOCKED,
                None => {
                    if self.believed_p[pos] > 0.5 {
                        BLOCKED
                    } else {
                        OPEN
                    }
                }
            };
            k = kset(k, pos, state);
        }
        k
    }

    fn action_of(&self, choice: &LayerChoice) -> Option<CtpAction> {
        match (choice.exit, choice.first_hop) {
            (Exit::Stranded, _) => None,
            (Exit::Wait { road, .. }, None) => {
                Some(CtpAction::Wait(self.net.road_at(road).key()))
            }
            (_, Some(ri)) => Some(CtpAction::Traverse(self.net.road_at(ri).key())),
            (Exit::AtDest, None) | (Exit::Reveal { .. }, None) => None,
        }
    }

    fn state_key(&self, node: usize, k: u64) -> String {
        let mut parts = Vec::with_capacity(self.tracked.len());
        for (pos, &ri) in self.tracked.iter().enumerate() {
            parts.push(format!(
                "{}={}",
                self.net.road_at(ri).key(),
                state_char(kget(k, pos))
            ));
        }
        format!("{}|{}", self.net.node_id(node), parts.join(","))
    }

    /// Evaluated states only cover decision points (revelations, waits); a
    /// step-by-step replay also passes through the interior nodes of
    /// multi-road walks.  Close over those successors so every state a replay
    /// can reach has an entry.
    fn close_policy(&mut self) {
        let mut stack: Vec<(usize, u64)> = self.v_memo.keys().copied().collect();
        let mut seen: BTreeSet<(usize, u64)> = stack.iter().copied().collect();
        while let Some((node, k)) = stack.pop() {
            if node == self.dest {
                continue;
            }
            let choice = self.layer_choice(node, k);
            let Some(ri) = choice.first_hop else { continue };
            let road = self.net.road_at(ri);
            let over = self
                .net
                .node_idx(road.key().other(self.net.node_id(node)).unwrap())
                .expect("road endpoint exists");
            // Revealing successors restart from states the solve evaluated.
            if over != self.dest && self.is_settled(over, k) && seen.insert((over, k)) {
                stack.push((over, k));
            }
        }
    }

    fn export_policy(&mut self) -> BTreeMap<String, String> {
        self.close_policy();
        let mut policy = BTreeMap::new();
        for (&(node, k), choice) in &self.v_memo {
            if node == self.dest {
                continue;
            }
            let action = match self.action_of(choice) {
                Some(a) => a.to_string(),
                None => "stranded".to_owned(),
            };
            policy.insert(self.state_key(node, k), action);
        }
        policy
    }
}

fn first_hop_to(pred: &[Option<(usize, usize)>], v: usize, mut node: usize) -> Option<usize> {
    if node == v || node == usize::MAX {
        return None;
    }
    loop {
        let (prev, road) = pred[node].expect("exit nodes are reached through the walk");
        if prev == v {
            return Some(road);
        }
        node = prev;
    }
}

/// Compute the expected-cost-optimal adaptive plan for `query`.
pub fn solve_exact(net: &RoadNetwork, query: &CtpQuery) -> Result<CtpSolution, CtpError> {
    let mut solver = Solver::new(net, query)?;
    solver.check_guard(query.guard_max_stochastic)?;
    let expected_cost = solver.truth_arrival(solver.source, 0);
    let first_action = if solver.source == solver.dest {
        None
    } else {
        let k0 = solver.modal_initial_knowledge();
        let choice = solver.layer_choice(solver.source, k0);
        solver.action_of(&choice)
    };
    Ok(CtpSolution {
        expected_cost,
        first_action,
        policy: solver.export_policy(),
        node_expansions: solver.expansions,
    })
}

/// Monte Carlo estimate of the realized cost of following the optimal plan.
/// Tracked-road states are drawn independently (forced roads keep their
/// pinned state); above the guard the walker falls back to optimistic
/// replanning.  Deterministic given `seed`.
pub fn simulate_policy(
    net: &RoadNetwork,
    query: &CtpQuery,
    realizations: usize,
    seed: u64,
) -> Result<SimulationResult, CtpError> {
    if realizations == 0 {
        return Err(CtpError::NoRealizations);
    }
    let mut solver = Solver::new(net, query)?;
    let exact = solver.tracked.len() <= query.guard_max_stochastic.min(32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costs = Vec::with_capacity(realizations);
    let mut failures = 0usize;
    for _ in 0..realizations {
        let z: Vec<u8> = (0..solver.tracked.len())
            .map(|pos| {
                let blocked = match solver.truth[pos] {
                    Some(ForcedState::Open) => false,
                    Some(ForcedState::Blocked) => true,
                    None => rng.random_bool(solver.believed_p[pos]),
                };
                if blocked {
                    BLOCKED
                } else {
                    OPEN
                }
            })
            .collect();
        let walked = if exact {
            replay_exact(&mut solver, &z)
        } else {
            replay_optimistic(&solver, &z)
        };
        match walked {
            Some(cost) => costs.push(cost),
            None => failures += 1,
        }
    }
    let m = costs.len();
    let (mean, std_error) = if m == 0 {
        (f64::INFINITY, 0.0)
    } else {
        let mean = costs.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        (mean, (var / m as f64).sqrt())
    };
    Ok(SimulationResult {
        mean,
        std_error,
        unreachable_fraction: failures as f64 / realizations as f64,
        realizations,
    })
}

/// Walk the believer-optimal plan under a fully drawn realization.
fn replay_exact(solver: &mut Solver, z: &[u8]) -> Option<f64> {
    let reveal = |k: u64, node: usize, solver: &Solver| -> u64 {
        let mut k = k;
        for &pos in &solver.node_tracked[node] {
            if kget(k, pos) == UNKNOWN {
                k = kset(k, pos, z[pos]);
            }
        }
        k
    };
    let mut at = solver.source;
    let mut k = reveal(0, at, solver);
    let mut cost = 0.0;
    while at != solver.dest {
        let choice = solver.layer_choice(at, k);
        match choice.exit {
            Exit::Stranded => return None,
            Exit::AtDest => {
                cost += choice.walk_cost;
                at = solver.dest;
            }
            Exit::Reveal { node } => {
                cost += choice.walk_cost;
                at = node;
                k = reveal(k, node, solver);
            }
            Exit::Wait { node, road } => {
                let r = solver.net.road_at(road);
                let over = solver
                    .net
                    .node_idx(r.key().other(solver.net.node_id(node)).unwrap())
                    .expect("road endpoint exists");
                cost += choice.walk_cost + solver.repair_wait + r.length;
                k = kset(k, solver.tracked_pos[&road], OPEN);
                at = over;
                k = reveal(k, at, solver);
            }
        }
    }
    Some(cost)
}

/// Fallback walker for state spaces above the guard: plan as if every
/// unrevealed road were open (blocked roads cost an extra repair wait),
/// follow one hop, update knowledge, repeat.
fn replay_optimistic(solver: &Solver, z: &[u8]) -> Option<f64> {
    let net = solver.net;
    let n = net.node_count();
    let mut known = vec![UNKNOWN; solver.tracked.len()];
    let reveal = |known: &mut Vec<u8>, node: usize| {
        for &pos in &solver.node_tracked[node] {
            if known[pos] == UNKNOWN {
                known[pos] = z[pos];
            }
        }
    };
    let mut at = solver.source;
    reveal(&mut known, at);
    let mut cost = 0.0;
    let step_cap = 4 * n * (2 * solver.tracked.len() + 2) + 64;
    for _ in 0..step_cap {
        if at == solver.dest {
            return Some(cost);
        }
        // Dijkstra under current optimism; blocked roads carry the repair
        // surcharge when waiting is allowed.
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[at] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { cost: 0.0, node: at });
        while let Some(HeapEntry { cost: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, ri) in net.incident(node) {
                let surcharge = match solver.tracked_pos.get(&ri) {
                    Some(&pos) if known[pos] == BLOCKED => {
                        if solver.repair_wait.is_finite() {
                            solver.repair_wait
                        } else {
                            continue;
                        }
                    }
                    _ => 0.0,
                };
                let cand = d + surcharge + net.road_at(ri).length;
                if cand < dist[next] {
                    dist[next] = cand;
                    pred[next] = Some((node, ri));
                    heap.push(HeapEntry {
                        cost: cand,
                        node: next,
                    });
                }
            }
        }
        if !dist[solver.dest].is_finite() {
            return None;
        }
        let hop = first_hop_to(&pred, at, solver.dest).expect("positive distance to go");
        let road = net.road_at(hop);
        if let Some(&pos) = solver.tracked_pos.get(&hop) {
            if known[pos] == BLOCKED {
                cost += solver.repair_wait;
                known[pos] = OPEN;
            }
        }
        cost += road.length;
        at = net
            .node_idx(road.key().other(net.node_id(at)).unwrap())
            .expect("road endpoint exists");
        reveal(&mut known, at);
    }
    None
}

/// Replays the believer-optimal plan under externally supplied realizations,
/// so callers can reuse one set of draws across many queries (common random
/// numbers).  Solves lazily and memoizes across walks.
pub(crate) struct PolicyWalker<'a> {
    solver: Solver<'a>,
}

impl<'a> PolicyWalker<'a> {
    pub(crate) fn new(net: &'a RoadNetwork, query: &CtpQuery) -> Result<Self, CtpError> {
        let solver = Solver::new(net, query)?;
        solver.check_guard(32)?;
        Ok(PolicyWalker { solver })
    }

    /// Realized cost when road index `ri` is blocked iff `blocked(ri)`;
    /// forced roads keep their pinned state regardless.  `None` = stranded.
    pub(crate) fn walk(&mut self, blocked: &dyn Fn(usize) -> bool) -> Option<f64> {
        let z: Vec<u8> = (0..self.solver.tracked.len())
            .map(|pos| {
                let is_blocked = match self.solver.truth[pos] {
                    Some(ForcedState::Open) => false,
                    Some(ForcedState::Blocked) => true,
                    None => blocked(self.solver.tracked[pos]),
                };
                if is_blocked {
                    BLOCKED
                } else {
                    OPEN
                }
            })
            .collect();
        replay_exact(&mut self.solver, &z)
    }
}

/// Expected extra cost of the optimal plan when `road` is blocked (and that
/// is discovered only at an endpoint) versus when it is open: the difference
/// of the two pinned-truth expectations, floored at zero.
pub fn delta_distance(
    net: &RoadNetwork,
    source: &NodeId,
    dest: &NodeId,
    road: &EdgeKey,
    repair_wait: f64,
) -> Result<f64, CtpError> {
    let base = CtpQuery::new(source.clone(), dest.clone()).with_repair_wait(repair_wait);
    let open = solve_exact(
        net,
        &base.clone().with_forced(road.clone(), ForcedState::Open),
    )?;
    if !open.expected_cost.is_finite() {
        return Err(CtpError::UnreachableBaseline {
            from: source.clone(),
            dest: dest.clone(),
            road: road.clone(),
        });
    }
    let blocked = solve_exact(net, &base.with_forced(road.clone(), ForcedState::Blocked))?;
    Ok((blocked.expected_cost - open.expected_cost).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing;
    use crate::testnet;
    use approx::assert_abs_diff_eq;

    fn fig3_query() -> CtpQuery {
        CtpQuery::new("A", "D")
    }

    #[test]
    fn canonical_plan_tries_the_stochastic_shortcut() {
        let net = testnet::figure3();
        let sol = solve_exact(&net, &fig3_query()).unwrap();
        assert_abs_diff_eq!(sol.expected_cost, 1.95, epsilon = 1e-12);
        assert_eq!(
            sol.first_action,
            Some(CtpAction::Traverse(EdgeKey::new("A", "B")))
        );
        assert_eq!(sol.policy["A|B-D=U"], "traverse A-B");
        assert_eq!(sol.policy["B|B-D=B"], "traverse B-C");
        assert!(sol.node_expansions > 0);
    }

    #[test]
    fn forced_blockage_realizes_the_long_detour() {
        let net = testnet::figure3();
        let query = fig3_query().with_forced(EdgeKey::new("B", "D"), ForcedState::Blocked);
        let sol = solve_exact(&net, &query).unwrap();
        assert_abs_diff_eq!(sol.expected_cost, 2.4, epsilon = 1e-12);
    }

    #[test]
    fn certain_shortcut_equals_the_direct_route() {
        let net = testnet::figure3();
        let mut probs = BTreeMap::new();
        probs.insert(EdgeKey::new("B", "D"), 0.0);
        let certain = net.with_block_probabilities(&probs).unwrap();
        let sol = solve_exact(&certain, &fig3_query()).unwrap();
        assert_eq!(sol.expected_cost, 1.5);
    }

    #[test]
    fn double_blockage_waits_at_the_far_road() {
        let net = testnet::figure3();
        let query = fig3_query()
            .with_repair_wait(10.0)
            .with_forced(EdgeKey::new("B", "D"), ForcedState::Blocked)
            .with_forced(EdgeKey::new("C", "D"), ForcedState::Blocked);
        let sol = solve_exact(&net, &query).unwrap();
        assert_abs_diff_eq!(sol.expected_cost, 12.4, epsilon = 1e-12);
    }

    #[test]
    fn complete_blockade_without_waiting_is_infinite() {
        let net = testnet::figure3();
        let query = fig3_query()
            .with_forced(EdgeKey::new("B", "D"), ForcedState::Blocked)
            .with_forced(EdgeKey::new("C", "D"), ForcedState::Blocked);
        let sol = solve_exact(&net, &query).unwrap();
        assert_eq!(sol.expected_cost, f64::INFINITY);
    }

    #[test]
    fn surprise_blockage_forces_a_wait() {
        // Deterministic chain; blocking the middle road is a surprise the
        // traveller discovers at its near end.
        let net = testnet::path4();
        let query = CtpQuery::new("A", "D")
            .with_repair_wait(3.0)
            .with_forced(EdgeKey::new("B", "C"), ForcedState::Blocked);
        let sol = solve_exact(&net, &query).unwrap();
        assert_abs_diff_eq!(sol.expected_cost, 6.0, epsilon = 1e-12);
        let delta = delta_distance(&net, &"A".into(), &"D".into(), &EdgeKey::new("B", "C"), 3.0)
            .unwrap();
        assert_abs_diff_eq!(delta, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_road_delta_is_the_repair_wait() {
        let net = testnet::pair5();
        let delta =
            delta_distance(&net, &"A".into(), &"B".into(), &EdgeKey::new("A", "B"), 7.0).unwrap();
        assert_abs_diff_eq!(delta, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn canonical_delta_values() {
        let net = testnet::figure3();
        let a: NodeId = "A".into();
        let d: NodeId = "D".into();
        let ac = delta_distance(&net, &a, &d, &EdgeKey::new("A", "C"), f64::INFINITY).unwrap();
        assert_eq!(ac, 0.0);
        let bd = delta_distance(&net, &a, &d, &EdgeKey::new("B", "D"), f64::INFINITY).unwrap();
        assert_abs_diff_eq!(bd, 0.9, epsilon = 1e-12);
        let cd2 = delta_distance(&net, &a, &d, &EdgeKey::new("C", "D"), 2.0).unwrap();
        let cd4 = delta_distance(&net, &a, &d, &EdgeKey::new("C", "D"), 4.0).unwrap();
        assert_abs_diff_eq!(cd2, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cd4, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!((cd4 - cd2) / 2.0, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn first_action_follows_the_modal_revelation() {
        let mut file = testnet::figure3_file();
        // Make the source-incident road A-B stochastic and likely blocked.
        file.roads[0].stochastic = true;
        file.roads[0].block_probability = 0.9;
        let net = crate::netmodel::RoadNetwork::from_file(file).unwrap();
        let sol = solve_exact(&net, &fig3_query().with_repair_wait(100.0)).unwrap();
        // Modal outcome: A-B blocked; best plan then starts towards C.
        assert_eq!(
            sol.first_action,
            Some(CtpAction::Traverse(EdgeKey::new("A", "C")))
        );
    }

    #[test]
    fn waiting_at_the_source_is_a_wait_action() {
        let net = testnet::pair5();
        let query = CtpQuery::new("A", "B")
            .with_repair_wait(7.0)
            .with_forced(EdgeKey::new("A", "B"), ForcedState::Blocked);
        let sol = solve_exact(&net, &query).unwrap();
        assert_abs_diff_eq!(sol.expected_cost, 12.0, epsilon = 1e-12);
        assert_eq!(sol.first_action, Some(CtpAction::Wait(EdgeKey::new("A", "B"))));
    }

    #[test]
    fn guard_rejects_oversized_state_spaces() {
        let file = {
            let mut f = testnet::star(15).to_file();
            for road in &mut f.roads {
                road.stochastic = true;
                road.block_probability = 0.5;
            }
            f
        };
        let net = crate::netmodel::RoadNetwork::from_file(file).unwrap();
        let err = solve_exact(&net, &CtpQuery::new("L0", "L14")).unwrap_err();
        assert!(matches!(err, CtpError::GuardExceeded { tracked: 15, .. }), "{err}");
    }

    #[test]
    fn bad_repair_wait_is_rejected() {
        let net = testnet::figure3();
        for bad in [0.0, -1.0, f64::NAN] {
            let err = solve_exact(&net, &fig3_query().with_repair_wait(bad)).unwrap_err();
            assert!(matches!(err, CtpError::BadRepairWait(_)), "{err}");
        }
    }

    #[test]
    fn forced_road_must_exist() {
        let net = testnet::figure3();
        let query = fig3_query().with_forced(EdgeKey::new("A", "D"), ForcedState::Blocked);
        assert!(matches!(
            solve_exact(&net, &query),
            Err(CtpError::ForcedNonexistentRoad(_))
        ));
    }

    #[test]
    fn simulation_agrees_with_the_exact_expectation() {
        let net = testnet::figure3();
        let sim = simulate_policy(&net, &fig3_query(), 20_000, 7).unwrap();
        assert!(sim.std_error > 0.0);
        assert!(
            (sim.mean - 1.95).abs() < 3.0 * sim.std_error,
            "mean {} se {}",
            sim.mean,
            sim.std_error
        );
        assert_eq!(sim.unreachable_fraction, 0.0);
        let again = simulate_policy(&net, &fig3_query(), 20_000, 7).unwrap();
        assert_eq!(sim, again);
    }

    #[test]
    fn deterministic_simulation_has_zero_error() {
        let net = testnet::figure3();
        let mut probs = BTreeMap::new();
        probs.insert(EdgeKey::new("B", "D"), 0.0);
        let certain = net.with_block_probabilities(&probs).unwrap();
        let sim = simulate_policy(&certain, &fig3_query(), 50, 1).unwrap();
        assert_eq!(sim.mean, 1.5);
        assert_eq!(sim.std_error, 0.0);
    }

    #[test]
    fn complete_blockade_simulates_as_unreachable() {
        let net = testnet::figure3();
        let query = fig3_query()
            .with_forced(EdgeKey::new("B", "D"), ForcedState::Blocked)
            .with_forced(EdgeKey::new("C", "D"), ForcedState::Blocked);
        let sim = simulate_policy(&net, &query, 10, 3).unwrap();
        assert_eq!(sim.unreachable_fraction, 1.0);
        assert_eq!(sim.mean, f64::INFINITY);
    }

    #[test]
    fn oversized_simulation_falls_back_to_replanning() {
        let file = {
            let mut f = testnet::star(15).to_file();
            for road in &mut f.roads {
                road.stochastic = true;
                road.block_probability = 0.3;
            }
            f
        };
        let net = crate::netmodel::RoadNetwork::from_file(file).unwrap();
        let query = CtpQuery::new("L0", "L14").with_repair_wait(5.0);
        let sim = simulate_policy(&net, &query, 200, 11).unwrap();
        assert_eq!(sim.unreachable_fraction, 0.0);
        assert!(sim.mean >= 2.0); // two unit spokes minimum
        let again = simulate_policy(&net, &query, 200, 11).unwrap();
        assert_eq!(sim, again);
    }

    #[test]
    fn expected_cost_dominates_the_informed_bound() {
        let net = testnet::figure3();
        let sol = solve_exact(&net, &fig3_query()).unwrap();
        let informed = routing::shortest_path(&net, &"A".into(), &"D".into(), &Default::default())
            .unwrap()
            .cost;
        assert!(sol.expected_cost >= informed);
    }
}
