//! Synthetic scenarios with known ground truth: a random or grid road
//! network, standard-normal covariates, and a deployment panel drawn from
//! the probit model at chosen coefficients. Used for recovery studies.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::centrality::{canadian_betweenness, CbMode, CentralityError, PairWeights};
use crate::glm::{Coefficients, DeploymentPanel, GlmError};
use crate::netmodel::{
    CovariateNames, EdgeKey, Intersection, NetworkError, NetworkFile, Road, RoadNetwork,
};
use crate::prob::std_normal_cdf;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Topology {
    /// Every intersection pair gets a road independently with this density.
    Random { nodes: usize, density: f64 },
    /// Lattice with roads between horizontal and vertical neighbours.
    Grid { rows: usize, cols: usize },
}

/// Generator settings. Covariate widths per block follow the lengths of the
/// coefficient vectors, and the lag depth follows `coefficients.tau`.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub topology: Topology,
    /// True generating coefficients (mu, alpha, beta, gamma, delta, tau).
    pub coefficients: Coefficients,
    pub periods: usize,
    pub seed: u64,
    /// When set, this edge-global slot carries the Canadian betweenness
    /// computed self-consistently with the generating probabilities each
    /// period. Exact betweenness, so practical for small networks only.
    pub cb_slot: Option<usize>,
    /// Repair wait used by the injected betweenness.
    pub repair_wait: f64,
    /// Topology re-draws allowed before giving up on connectivity.
    pub max_retries: usize,
}

impl ScenarioConfig {
    pub fn new(topology: Topology, coefficients: Coefficients, periods: usize, seed: u64) -> Self {
        ScenarioConfig {
            topology,
            coefficients,
            periods,
            seed,
            cb_slot: None,
            repair_wait: f64::INFINITY,
            max_retries: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub network: RoadNetwork,
    pub panel: DeploymentPanel,
    /// Generating probability per road per period.
    pub probabilities: BTreeMap<EdgeKey, Vec<f64>>,
    /// Per-period injected betweenness, present when `cb_slot` was set.
    pub betweenness_trajectory: Option<Vec<BTreeMap<EdgeKey, f64>>>,
}

#[derive(Debug, Error)]
pub enum SimgenError {
    #[error("need at least two intersections")]
    TooFewNodes,
    #[error("edge density must lie in (0, 1]")]
    BadDensity,
    #[error("grid must contain at least two intersections")]
    BadGrid,
    #[error("periods must be at least 1")]
    NoPeriods,
    #[error("betweenness slot {slot} outside the edge-global block of width {width}")]
    BadSlot { slot: usize, width: usize },
    #[error("repair wait must be positive")]
    BadRepairWait,
    #[error("no connected network within {0} attempts; raise density or retries")]
    RetriesExhausted(usize),
    #[error("betweenness injection failed: {0}")]
    Betweenness(#[from] CentralityError),
    #[error("injected betweenness did not settle within {0} iterations")]
    CbDiverged(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

const CB_TOL: f64 = 1e-9;
const CB_MAX_ITER: usize = 100;

pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario, SimgenError> {
    let coef = &config.coefficients;
    if config.periods == 0 {
        return Err(SimgenError::NoPeriods);
    }
    if let Some(slot) = config.cb_slot {
        if slot >= coef.delta.len() {
            return Err(SimgenError::BadSlot {
                slot,
                width: coef.delta.len(),
            });
        }
        if !(config.repair_wait > 0.0) {
            return Err(SimgenError::BadRepairWait);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (ids, edges, lengths) = draw_topology(&config.topology, config.max_retries, &mut rng)?;

    let names = |prefix: &str, k: usize| (0..k).map(|i| format!("{prefix}{i}")).collect();
    let mut normal = |k: usize| -> Vec<f64> {
        (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let intersections: Vec<Intersection> = ids
        .iter()
        .map(|id| Intersection {
            id: id.as_str().into(),
            local: normal(coef.alpha.len()),
            global: normal(coef.beta.len()),
        })
        .collect();
    let roads: Vec<Road> = edges
        .iter()
        .zip(&lengths)
        .map(|(&(i, j), &length)| Road {
            from: ids[i].as_str().into(),
            to: ids[j].as_str().into(),
            length,
            exists: true,
            stochastic: false,
            block_probability: 0.0,
            local: normal(coef.gamma.len()),
            global: normal(coef.delta.len()),
        })
        .collect();
    let base = RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames {
            node_local: names("nl", coef.alpha.len()),
            node_global: names("ng", coef.beta.len()),
            edge_local: names("el", coef.gamma.len()),
            edge_global: names("eg", coef.delta.len()),
        },
        intersections,
        roads,
    })?;

    let road_keys: Vec<EdgeKey> = base.existing_roads().map(|(_, r)| r.key()).collect();
    let lags = coef.tau.len();
    let mut history: Vec<Vec<bool>> = Vec::with_capacity(config.periods);
    let mut probabilities: BTreeMap<EdgeKey, Vec<f64>> =
        road_keys.iter().map(|k| (k.clone(), Vec::new())).collect();
    let mut cb_trajectory = config.cb_slot.map(|_| Vec::new());
    let mut entries = Vec::new();
    // Zero-padded so lexicographic period order matches time order.
    let width = config.periods.to_string().len();
    let labels: Vec<String> = (1..=config.periods).map(|t| format!("t{t:0width$}")).collect();
    let mut net = base;
    let mut cb_state: BTreeMap<EdgeKey, f64> =
        road_keys.iter().map(|k| (k.clone(), 0.0)).collect();

    for t in 0..config.periods {
        let probs = match config.cb_slot {
            None => period_probabilities(&net, coef, &history, t, lags)?,
            Some(slot) => {
                // Within-period fixed point: the injected covariate must be
                // the betweenness of the same probabilities it generates.
                let mut settled = None;
                for _ in 0..CB_MAX_ITER {
                    net = net.with_edge_global_slot(slot, &cb_state)?;
                    let probs = period_probabilities(&net, coef, &history, t, lags)?;
                    let believed = net.with_block_probabilities(
                        &road_keys.iter().cloned().zip(probs.iter().copied()).collect(),
                    )?;
                    let cb = canadian_betweenness(
                        &believed,
                        config.repair_wait,
                        &PairWeights::Equal,
                        &CbMode::Exact,
                    )?;
                    let delta = cb
                        .scores
                        .iter()
                        .map(|(k, v)| (v - cb_state[k]).abs())
                        .fold(0.0_f64, f64::max);
                    cb_state = cb.scores;
                    if delta < CB_TOL {
                        settled = Some(probs);
                        break;
                    }
                }
                let probs = settled.ok_or(SimgenError::CbDiverged(CB_MAX_ITER))?;
                net = net.with_edge_global_slot(slot, &cb_state)?;
                cb_trajectory.as_mut().unwrap().push(cb_state.clone());
                probs
            }
        };
        let mut outcomes = Vec::with_capacity(road_keys.len());
        for (idx, key) in road_keys.iter().enumerate() {
            let p = probs[idx];
            probabilities.get_mut(key).unwrap().push(p);
            let y = rng.random_bool(p);
            outcomes.push(y);
            entries.push((key.clone(), labels[t].clone(), y));
        }
        history.push(outcomes);
    }

    let panel = DeploymentPanel::new(labels, entries)?;
    Ok(Scenario {
        network: net,
        panel,
        probabilities,
        betweenness_trajectory: cb_trajectory,
    })
}

/// Probit probabilities for period `t` given the realized history; lags
/// reaching before the first period read as zero.
fn period_probabilities(
    net: &RoadNetwork,
    coef: &Coefficients,
    history: &[Vec<bool>],
    t: usize,
    lags: usize,
) -> Result<Vec<f64>, SimgenError> {
    let mut out = Vec::new();
    for (idx, road) in net.existing_roads() {
        let from = net.node(&road.from)?;
        let to = net.node(&road.to)?;
        let mut eta = coef.mu;
        for (a, (f, g)) in coef.alpha.iter().zip(from.local.iter().zip(&to.local)) {
            eta += a * (f + g);
        }
        for (b, (f, g)) in coef.beta.iter().zip(from.global.iter().zip(&to.global)) {
            eta += b * (f + g);
        }
        for (g, v) in coef.gamma.iter().zip(&road.local) {
            eta += g * v;
        }
        for (d, v) in coef.delta.iter().zip(&road.global) {
            eta += d * v;
        }
        for (k, tau) in (1..=lags).zip(&coef.tau) {
            let lagged = t >= k && history[t - k][idx];
            if lagged {
                eta += tau;
            }
        }
        out.push(std_normal_cdf(eta));
    }
    Ok(out)
}

type Drawn = (Vec<String>, Vec<(usize, usize)>, Vec<f64>);

fn draw_topology(
    topology: &Topology,
    max_retries: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Drawn, SimgenError> {
    match *topology {
        Topology::Random { nodes, density } => {
            if nodes < 2 {
                return Err(SimgenError::TooFewNodes);
            }
            if !(density > 0.0 && density <= 1.0) {
                return Err(SimgenError::BadDensity);
            }
            let ids: Vec<String> = (0..nodes).map(|i| format!("N{i}")).collect();
            for _ in 0..max_retries.max(1) {
                let mut edges = Vec::new();
                let mut lengths = Vec::new();
                for i in 0..nodes {
                    for j in i + 1..nodes {
                        if rng.random_bool(density) {
                            edges.push((i, j));
                            lengths.push(rng.random_range(0.5..2.0));
                        }
                    }
                }
                if connected(nodes, &edges) {
                    return Ok((ids, edges, lengths));
                }
            }
            Err(SimgenError::RetriesExhausted(max_retries.max(1)))
        }
        Topology::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows * cols < 2 {
                return Err(SimgenError::BadGrid);
            }
            let ids: Vec<String> = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| format!("R{r}C{c}")))
                .collect();
            let at = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            let mut lengths = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((at(r, c), at(r, c + 1)));
                        lengths.push(rng.random_range(0.5..2.0));
                    }
                    if r + 1 < rows {
                        edges.push((at(r, c), at(r + 1, c)));
                        lengths.push(rng.random_range(0.5..2.0));
                    }
                }
            }
            Ok((ids, edges, lengths))
        }
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// CSV of the generating probabilities: `road_from,road_to,period,probability`.
pub fn probabilities_csv(scenario: &Scenario) -> String {
    let mut out = String::from("road_from,road_to,period,probability\n");
    for (road, per_period) in &scenario.probabilities {
        for (t, p) in per_period.iter().enumerate() {
            let period = &scenario.panel.periods()[t];
            out.push_str(&format!("{},{},{period},{p}\n", road.first(), road.second()));
        }
    }
    out
}
