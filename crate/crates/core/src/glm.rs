//! Probit regression for per-road deployment probability.
//!
//! The linear predictor for road (i, j) is
//!
//! ```text
//! eta_ij = mu + (X_i + X_j) a + (Z_i + Z_j) b + X_ij g + Z_ij d + sum_k tau_k Y_{ij,t-k}
//! ```
//!
//! with node covariates entered as the sum over the road's endpoints and an
//! optional lag window over the binary outcome panel.  Fitting is Newton on
//! the observed information with an optional ridge penalty on everything but
//! the intercept; the default penalty 1e-6 keeps sparse panels (roads that
//! never saw a deployment) away from separation.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{EdgeKey, NetworkError, RoadNetwork};
use crate::prob::{log_std_normal_cdf, probit_score, probit_weight, std_normal_cdf};

pub const DEFAULT_RIDGE: f64 = 1e-6;
const MAX_NEWTON_ITER: usize = 100;
const GRADIENT_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 8.0;

/// Which covariate blocks enter the model, the lag order, and where the
/// recourse-importance score is injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub node_local: bool,
    pub node_global: bool,
    pub edge_local: bool,
    pub edge_global: bool,
    /// Lag order K; lag columns hold Y_{ij,t-1} .. Y_{ij,t-K}.
    pub lags: usize,
    /// Index within the edge-global block that receives the computed
    /// betweenness value in the coupled fit; `None` for a plain model.
    pub cb_slot: Option<usize>,
    /// Ridge penalty on non-intercept coefficients.
    pub ridge: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            node_local: true,
            node_global: true,
            edge_local: true,
            edge_global: true,
            lags: 0,
            cb_slot: None,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Fitted coefficient blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub tau: Vec<f64>,
    #[serde(skip)]
    pub covariance: Option<DMatrix<f64>>,
}

impl Coefficients {
    pub fn zero(layout: &BlockLayout) -> Self {
        Coefficients {
            mu: 0.0,
            alpha: vec![0.0; layout.alpha.len()],
            beta: vec![0.0; layout.beta.len()],
            gamma: vec![0.0; layout.gamma.len()],
            delta: vec![0.0; layout.delta.len()],
            tau: vec![0.0; layout.tau.len()],
            covariance: None,
        }
    }

    /// Stack the blocks in design-column order.
    pub fn pack(&self) -> DVector<f64> {
        let mut v = vec![self.mu];
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.tau);
        DVector::from_vec(v)
    }

    pub fn unpack(layout: &BlockLayout, theta: &DVector<f64>) -> Self {
        let take = |r: &Range<usize>| theta.as_slice()[r.clone()].to_vec();
        Coefficients {
            mu: theta[0],
            alpha: take(&layout.alpha),
            beta: take(&layout.beta),
            gamma: take(&layout.gamma),
            delta: take(&layout.delta),
            tau: take(&layout.tau),
            covariance: None,
        }
    }
}

/// Column spans of each block in the design matrix; column 0 is the
/// intercept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub alpha: Range<usize>,
    pub beta: Range<usize>,
    pub gamma: Range<usize>,
    pub delta: Range<usize>,
    pub tau: Range<usize>,
}

impl BlockLayout {
    fn new(na: usize, nb: usize, ng: usize, nd: usize, k: usize) -> Self {
        let a = 1..1 + na;
        let b = a.end..a.end + nb;
        let g = b.end..b.end + ng;
        let d = g.end..g.end + nd;
        let t = d.end..d.end + k;
        BlockLayout {
            alpha: a,
            beta: b,
            gamma: g,
            delta: d,
            tau: t,
        }
    }

    pub fn columns(&self) -> usize {
        self.tau.end
    }
}

/// Binary outcome panel: one {0,1} value per existing road per period.
#[derive(Clone, Debug, PartialEq)]
pub struct DeploymentPanel {
    periods: Vec<String>,
    outcomes: BTreeMap<EdgeKey, Vec<Option<bool>>>,
}

impl DeploymentPanel {
    pub fn new(
        periods: Vec<String>,
        entries: impl IntoIterator<Item = (EdgeKey, String, bool)>,
    ) -> Result<Self, GlmError> {
        let index: BTreeMap<&str, usize> = periods
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        if index.len() != periods.len() {
            return Err(GlmError::DuplicatePeriod);
        }
        let mut outcomes: BTreeMap<EdgeKey, Vec<Option<bool>>> = BTreeMap::new();
        for (road, period, y) in entries {
            let &t = index
                .get(period.as_str())
                .ok_or_else(|| GlmError::UnknownPeriod(period.clone()))?;
            let row = outcomes
                .entry(road.clone())
                .or_insert_with(|| vec![None; periods.len()]);
            if row[t].replace(y).is_some() {
                return Err(GlmError::DuplicateOutcome { road, period });
            }
        }
        Ok(DeploymentPanel { periods, outcomes })
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn roads(&self) -> impl Iterator<Item = &EdgeKey> {
        self.outcomes.keys()
    }

    pub fn outcome(&self, road: &EdgeKey, period_idx: usize) -> Option<bool> {
        self.outcomes.get(road).and_then(|row| row[period_idx])
    }

    /// Restrict to a single period (used by sequential updating).
    pub fn slice(&self, period: &str) -> Result<DeploymentPanel, GlmError> {
        let t = self.period_index(period)?;
        let outcomes = self
            .outcomes
            .iter()
            .map(|(road, row)| (road.clone(), vec![row[t]]))
            .collect();
        Ok(DeploymentPanel {
            periods: vec![period.to_owned()],
            outcomes,
        })
    }

    pub fn period_index(&self, period: &str) -> Result<usize, GlmError> {
        self.periods
            .iter()
            .position(|p| p == period)
            .ok_or_else(|| GlmError::UnknownPeriod(period.to_owned()))
    }
}

/// Response window: one labelled period, or "ever deployed" across the whole
/// panel (no lags in that mode).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResponseWindow {
    Period(String),
    AnyPeriod,
}

/// Assembled design: rows follow the network's existing-road order.
#[derive(Clone, Debug)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub response: Vec<bool>,
    pub roads: Vec<EdgeKey>,
    pub labels: Vec<String>,
    pub layout: BlockLayout,
}

#[derive(Debug, Error)]
pub enum GlmError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("unknown period `{0}`")]
    UnknownPeriod(String),
    #[error("duplicate period label in panel")]
    DuplicatePeriod,
    #[error("duplicate outcome for road `{road}` in period `{period}`")]
    DuplicateOutcome { road: EdgeKey, period: String },
    #[error("panel is missing road `{road}` in period `{period}`")]
    MissingOutcome { road: EdgeKey, period: String },
    #[error(
        "period `{period}` has only {available} earlier periods, but the model needs {lags} lags"
    )]
    InsufficientHistory {
        period: String,
        lags: usize,
        available: usize,
    },
    #[error("lagged terms require a single response period, not the any-period aggregate")]
    LagsWithAggregate,
    #[error("betweenness slot {slot} outside the edge-global block of width {width}")]
    BadSlot { slot: usize, width: usize },
    #[error("design matrix has no rows")]
    EmptyDesign,
    #[error("design has {design} columns but the coefficient vector has {coefficients}")]
    DimensionMismatch { design: usize, coefficients: usize },
    #[error("response is all {}; the unpenalized fit diverges, set ridge > 0", if *.0 { "ones" } else { "zeros" })]
    DegenerateResponse(bool),
    #[error(
        "Newton failed to converge after {iterations} iterations (max |gradient| = {max_gradient:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        max_gradient: f64,
    },
    #[error("observed information is singular; reduce covariates or raise ridge")]
    SingularInformation,
    #[error("failed to read panel {path}: {message}")]
    PanelIo { path: String, message: String },
    #[error("panel record {row}: {message}")]
    PanelFormat { row: usize, message: String },
}

/// Build the design matrix and response for one model and response window.
pub fn build_design(
    net: &RoadNetwork,
    spec: &ModelSpec,
    panel: &DeploymentPanel,
    window: &ResponseWindow,
) -> Result<Design, GlmError> {
    let names = net.covariate_names();
    let na = if spec.node_local { names.node_local.len() } else { 0 };
    let nb = if spec.node_global { names.node_global.len() } else { 0 };
    let ng = if spec.edge_local { names.edge_local.len() } else { 0 };
    let nd = if spec.edge_global { names.edge_global.len() } else { 0 };
    if let Some(slot) = spec.cb_slot {
        if !spec.edge_global || slot >= nd {
            return Err(GlmError::BadSlot { slot, width: nd });
        }
    }
    let layout = BlockLayout::new(na, nb, ng, nd, spec.lags);

    let t = match window {
        ResponseWindow::Period(label) => {
            let t = panel.period_index(label)?;
            if t < spec.lags {
                return Err(GlmError::InsufficientHistory {
                    period: label.clone(),
                    lags: spec.lags,
                    available: t,
                });
            }
            Some(t)
        }
        ResponseWindow::AnyPeriod => {
            if spec.lags > 0 {
                return Err(GlmError::LagsWithAggregate);
            }
            None
        }
    };

    let outcome = |road: &EdgeKey, idx: usize| -> Result<bool, GlmError> {
        panel.outcome(road, idx).ok_or_else(|| GlmError::MissingOutcome {
            road: road.clone(),
            period: panel.periods()[idx].clone(),
        })
    };

    let mut labels = vec!["intercept".to_owned()];
    if spec.node_local {
        labels.extend(names.node_local.iter().map(|n| format!("node_local:{n}")));
    }
    if spec.node_global {
        labels.extend(names.node_global.iter().map(|n| format!("node_global:{n}")));
    }
    if spec.edge_local {
        labels.extend(names.edge_local.iter().map(|n| format!("edge_local:{n}")));
    }
    if spec.edge_global {
        labels.extend(names.edge_global.iter().map(|n| format!("edge_global:{n}")));
    }
    for k in 1..=spec.lags {
        labels.push(format!("lag{k}"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut response = Vec::new();
    let mut roads = Vec::new();
    for (_, road) in net.existing_roads() {
        let key = road.key();
        let from = net.node(&road.from)?;
        let to = net.node(&road.to)?;
        let mut row = Vec::with_capacity(layout.columns());
        row.push(1.0);
        if spec.node_local {
            row.extend(from.local.iter().zip(&to.local).map(|(a, b)| a + b));
        }
        if spec.node_global {
            row.extend(from.global.iter().zip(&to.global).map(|(a, b)| a + b));
        }
        if spec.edge_local {
            row.extend_from_slice(&road.local);
        }
        if spec.edge_global {
            row.extend_from_slice(&road.global);
        }
        let y = match t {
            Some(t) => {
                for k in 1..=spec.lags {
                    row.push(if outcome(&key, t - k)? { 1.0 } else { 0.0 });
                }
                outcome(&key, t)?
            }
            None => {
                let mut any = false;
                for idx in 0..panel.periods().len() {
                    any |= outcome(&key, idx)?;
                }
                any
            }
        };
        rows.push(row);
        response.push(y);
        roads.push(key);
    }

    let ncols = layout.columns();
    let matrix = DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten());
    Ok(Design {
        matrix,
        response,
        roads,
        labels,
        layout,
    })
}

/// Result of a Newton fit.
#[derive(Clone, Debug)]
pub struct ProbitFit {
    pub theta: DVector<f64>,
    /// Inverse of the (penalized) observed information at the optimum, if it
    /// could be formed.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub max_abs_gradient: f64,
    /// True when some fitted linear predictor left [-8, 8] at termination.
    pub separation: bool,
    pub log_likelihood: f64,
    /// Penalized log-likelihood after each accepted Newton step.
    pub objective_trace: Vec<f64>,
}

fn bernoulli_probit_loglik(eta: &DVector<f64>, y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| log_std_normal_cdf(if yi { e } else { -e }))
        .sum()
}

fn penalty(theta: &DVector<f64>, ridge: f64) -> f64 {
    let tail = theta.rows(1, theta.len() - 1);
    0.5 * ridge * tail.norm_squared()
}

/// Maximize the Bernoulli-probit log-likelihood minus (ridge/2) times the
/// squared norm of the non-intercept coefficients.
pub fn fit_probit(x: &DMatrix<f64>, y: &[bool], ridge: f64) -> Result<ProbitFit, GlmError> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(GlmError::EmptyDesign);
    }
    assert_eq!(n, y.len(), "response length must match design rows");
    if ridge == 0.0 && y.iter().all(|&v| v == y[0]) {
        return Err(GlmError::DegenerateResponse(y[0]));
    }

    let mut theta = DVector::zeros(p);
    let mut eta = x * &theta;
    let mut objective = bernoulli_probit_loglik(&eta, y) - penalty(&theta, ridge);
    let mut trace = vec![objective];
    let mut max_grad = f64::INFINITY;

    for iter in 1..=MAX_NEWTON_ITER {
        let scores = DVector::from_iterator(
            n,
            eta.iter().zip(y).map(|(&e, &yi)| probit_score(e, yi)),
        );
        let mut grad = x.transpose() * scores;
        for j in 1..p {
            grad[j] -= ridge * theta[j];
        }
        max_grad = grad.amax();
        if max_grad < GRADIENT_TOL {
            let separation = eta.iter().any(|&e| e.abs() > SEPARATION_BOUND);
            let info = information(x, &eta, y, ridge);
            let covariance = info.clone().cholesky().map(|c| c.inverse());
            return Ok(ProbitFit {
                covariance,
                iterations: iter - 1,
                max_abs_gradient: max_grad,
                separation,
                log_likelihood: bernoulli_probit_loglik(&eta, y),
                objective_trace: trace,
                theta,
            });
        }

        let info = information(x, &eta, y, ridge);
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| info.lu().solve(&grad))
            .ok_or(GlmError::SingularInformation)?;

        // Step-halving keeps the penalized objective nondecreasing, up to
        // rounding: near the optimum of a many-row fit the true improvement
        // of the last Newton steps sits below the representable resolution
        // of the objective, and rejecting them would stall the quadratic
        // phase that actually drives the gradient under its tolerance.
        let slack = 1e-12 * (1.0 + objective.abs());
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + scale * &step;
            let cand_eta = x * &cand;
            let cand_obj = bernoulli_probit_loglik(&cand_eta, y) - penalty(&cand, ridge);
            if cand_obj.is_finite() && cand_obj >= objective - slack {
                theta = cand;
                eta = cand_eta;
                objective = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(objective);
    }

    Err(GlmError::NonConvergence {
        iterations: MAX_NEWTON_ITER,
        max_gradient: max_grad,
    })
}

fn information(x: &DMatrix<f64>, eta: &DVector<f64>, y: &[bool], ridge: f64) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let w = probit_weight(eta[i], y[i]);
        let row = x.row(i);
        // info += w * row^T row, lower triangle then mirrored
        for a in 0..p {
            for b in 0..=a {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    for j in 1..p {
        info[(j, j)] += ridge;
    }
    info
}

/// Per-road probabilities Φ(x·θ).
pub fn predict_probs(x: &DMatrix<f64>, theta: &DVector<f64>) -> Result<Vec<f64>, GlmError> {
    if x.ncols() != theta.len() {
        return Err(GlmError::DimensionMismatch {
            design: x.ncols(),
            coefficients: theta.len(),
        });
    }
    Ok((x * theta).iter().map(|&e| std_normal_cdf(e)).collect())
}

/// A fitted model: coefficients in block form plus the design they came from.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub coefficients: Coefficients,
    pub design: Design,
    pub fit: ProbitFit,
}

impl FittedModel {
    pub fn probabilities(&self) -> Vec<f64> {
        predict_probs(&self.design.matrix, &self.fit.theta).expect("design matches its own fit")
    }
}

/// Assemble the design for `window` and fit the probit model.
pub fn fit_model(
    net: &RoadNetwork,
    spec: &ModelSpec,
    panel: &DeploymentPanel,
    window: &ResponseWindow,
) -> Result<FittedModel, GlmError> {
    let design = build_design(net, spec, panel, window)?;
    let fit = fit_probit(&design.matrix, &design.response, spec.ridge)?;
    let mut coefficients = Coefficients::unpack(&design.layout, &fit.theta);
    coefficients.covariance = fit.covariance.clone();
    Ok(FittedModel {
        coefficients,
        design,
        fit,
    })
}

// ---- panel CSV I/O ---------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
struct PanelRecord {
    road_from: String,
    road_to: String,
    period: String,
    y: u8,
}

/// Read a `road_from,road_to,period,y` CSV.  Periods are ordered by
/// `period_order` when given, otherwise sorted lexicographically.
pub fn load_panel(
    path: impl AsRef<Path>,
    period_order: Option<&[String]>,
) -> Result<DeploymentPanel, GlmError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| GlmError::PanelIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut entries = Vec::new();
    let mut seen_periods = BTreeSet::new();
    for (idx, record) in reader.deserialize::<PanelRecord>().enumerate() {
        let record = record.map_err(|e| GlmError::PanelFormat {
            row: idx + 1,
            message: e.to_string(),
        })?;
        let y = match record.y {
            0 => false,
            1 => true,
            other => {
                return Err(GlmError::PanelFormat {
                    row: idx + 1,
                    message: format!("outcome must be 0 or 1, got {other}"),
                })
            }
        };
        seen_periods.insert(record.period.clone());
        entries.push((
            EdgeKey::new(record.road_from, record.road_to),
            record.period,
            y,
        ));
    }
    let periods = match period_order {
        Some(order) => order.to_vec(),
        None => seen_periods.into_iter().collect(),
    };
    DeploymentPanel::new(periods, entries)
}

pub fn save_panel(panel: &DeploymentPanel, path: impl AsRef<Path>) -> Result<(), GlmError> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| GlmError::PanelIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for road in panel.roads().cloned().collect::<Vec<_>>() {
        for (t, period) in panel.periods().iter().enumerate() {
            if let Some(y) = panel.outcome(&road, t) {
                writer
                    .serialize(PanelRecord {
                        road_from: road.first().to_string(),
                        road_to: road.second().to_string(),
                        period: period.clone(),
                        y: y as u8,
                    })
                    .map_err(|e| GlmError::PanelIo {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
            }
        }
    }
    writer.flush().map_err(|e| GlmError::PanelIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testnet;
    use approx::assert_abs_diff_eq;

    fn uniform_panel(net: &RoadNetwork, periods: &[&str], y: bool) -> DeploymentPanel {
        let entries = net.existing_roads().flat_map(|(_, road)| {
            periods
                .iter()
                .map(move |p| (road.key(), p.to_string(), y))
                .collect::<Vec<_>>()
        });
        DeploymentPanel::new(periods.iter().map(|p| p.to_string()).collect(), entries).unwrap()
    }

    fn intercept_spec() -> ModelSpec {
        ModelSpec {
            lags: 0,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn bare_network_yields_a_column_of_ones() {
        let net = testnet::figure3();
        let panel = uniform_panel(&net, &["t1"], false);
        let design = build_design(
            &net,
            &intercept_spec(),
            &panel,
            &ResponseWindow::Period("t1".into()),
        )
        .unwrap();
        assert_eq!(design.matrix.shape(), (5, 1));
        assert!(design.matrix.iter().all(|&v| v == 1.0));
        assert_eq!(design.labels, ["intercept"]);
        assert!(design.response.iter().all(|&y| !y));
    }

    #[test]
    fn lag_column_copies_previous_outcome() {
        let net = testnet::figure3();
        let mut entries = Vec::new();
        for (_, road) in net.existing_roads() {
            let key = road.key();
            entries.push((key.clone(), "t1".to_string(), key == EdgeKey::new("B", "D")));
            entries.push((key, "t2".to_string(), false));
        }
        let panel =
            DeploymentPanel::new(vec!["t1".into(), "t2".into()], entries).unwrap();
        let spec = ModelSpec {
            lags: 1,
            ..ModelSpec::default()
        };
        let design =
            build_design(&net, &spec, &panel, &ResponseWindow::Period("t2".into())).unwrap();
        assert_eq!(design.matrix.ncols(), 2);
        let row = design
            .roads
            .iter()
            .position(|k| *k == EdgeKey::new("B", "D"))
            .unwrap();
        assert_eq!(design.matrix[(row, 1)], 1.0);
        for (i, key) in design.roads.iter().enumerate() {
            if *key != EdgeKey::new("B", "D") {
                assert_eq!(design.matrix[(i, 1)], 0.0);
            }
        }
    }

    #[test]
    fn node_covariates_enter_as_endpoint_sums() {
        let mut file = testnet::figure3_file();
        file.covariate_names.node_global = vec!["z".into()];
        for (i, node) in file.intersections.iter_mut().enumerate() {
            node.global = vec![(i + 1) as f64]; // A=1, B=2, C=3, D=4
        }
        let net = RoadNetwork::from_file(file).unwrap();
        let panel = uniform_panel(&net, &["t1"], false);
        let design = build_design(
            &net,
            &ModelSpec::default(),
            &panel,
            &ResponseWindow::Period("t1".into()),
        )
        .unwrap();
        let row = design
            .roads
            .iter()
            .position(|k| *k == EdgeKey::new("A", "B"))
            .unwrap();
        assert_eq!(design.matrix[(row, 1)], 3.0); // z_A + z_B = 1 + 2
        assert_eq!(design.labels[1], "node_global:z");
    }

    #[test]
    fn missing_period_is_reported_by_name() {
        let net = testnet::figure3();
        let panel = uniform_panel(&net, &["t1"], false);
        let err = build_design(
            &net,
            &intercept_spec(),
            &panel,
            &ResponseWindow::Period("t9".into()),
        )
        .unwrap_err();
        assert!(err.to_string().contains("t9"), "{err}");
    }

    #[test]
    fn lags_demand_enough_history() {
        let net = testnet::figure3();
        let panel = uniform_panel(&net, &["t1", "t2"], false);
        let spec = ModelSpec {
            lags: 2,
            ..ModelSpec::default()
        };
        let err =
            build_design(&net, &spec, &panel, &ResponseWindow::Period("t2".into())).unwrap_err();
        assert!(matches!(err, GlmError::InsufficientHistory { .. }), "{err}");
    }

    #[test]
    fn balanced_intercept_fit_is_zero() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let y: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let fit = fit_probit(&x, &y, DEFAULT_RIDGE).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 0.0, epsilon = 1e-12);
        assert!(!fit.separation);
    }

    #[test]
    fn unbalanced_intercept_fit_matches_the_normal_quantile() {
        let x = DMatrix::from_element(1000, 1, 1.0);
        let y: Vec<bool> = (0..1000).map(|i| i < 975).collect();
        let fit = fit_probit(&x, &y, 0.0).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 1.9599639845400542, epsilon = 1e-8);
    }

    #[test]
    fn intercept_fit_reproduces_the_empirical_mean() {
        let x = DMatrix::from_element(1000, 1, 1.0);
        let y: Vec<bool> = (0..1000).map(|i| i < 975).collect();
        let fit = fit_probit(&x, &y, 0.0).unwrap();
        let mean = predict_probs(&x, &fit.theta).unwrap().iter().sum::<f64>() / 1000.0;
        assert_abs_diff_eq!(mean, 0.975, epsilon = 1e-10);
    }

    #[test]
    fn constant_response_without_ridge_is_rejected() {
        let x = DMatrix::from_element(8, 1, 1.0);
        let err = fit_probit(&x, &vec![true; 8], 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        assert!(fit_probit(&x, &vec![true; 8], DEFAULT_RIDGE).is_ok());
    }

    #[test]
    fn huge_margin_sets_the_separation_flag() {
        let n = 50;
        let x = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1e6 } else { -1e6 });
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let fit = fit_probit(&x, &y, 0.0).unwrap();
        assert!(fit.separation);
    }

    #[test]
    fn newton_trace_is_monotone_with_ridge() {
        let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { (i as f64) / 10.0 - 2.0 });
        let y: Vec<bool> = (0..40).map(|i| (i * 7) % 3 == 0).collect();
        let fit = fit_probit(&x, &y, 0.5).unwrap();
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "{:?}", fit.objective_trace);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = DMatrix::from_fn(30, 3, |i, j| match j {
            0 => 1.0,
            1 => ((i * 13) % 7) as f64 / 3.0 - 1.0,
            _ => ((i * 5) % 11) as f64 / 5.0 - 1.0,
        });
        let y: Vec<bool> = (0..30).map(|i| (i * 3) % 5 < 2).collect();
        let theta = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let eta = &x * &theta;
        let scores = DVector::from_iterator(
            30,
            eta.iter().zip(&y).map(|(&e, &yi)| probit_score(e, yi)),
        );
        let grad = x.transpose() * scores;
        let h = 1e-6;
        for j in 0..3 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (bernoulli_probit_loglik(&(&x * &up), &y)
                - bernoulli_probit_loglik(&(&x * &dn), &y))
                / (2.0 * h);
            assert_abs_diff_eq!(grad[j], fd, epsilon = 1e-5 * grad[j].abs().max(1.0));
        }
    }

    #[test]
    fn prediction_reference_points() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.9599639845400542, -8.0]);
        let theta = DVector::from_vec(vec![1.0]);
        let p = predict_probs(&x, &theta).unwrap();
        assert_eq!(p[0], 0.5);
        assert_abs_diff_eq!(p[1], 0.975, epsilon = 1e-12);
        assert!(p[2] < 1e-14 && p[2] >= 0.0);
    }

    #[test]
    fn prediction_rejects_dimension_mismatch() {
        let x = DMatrix::from_element(2, 2, 1.0);
        let theta = DVector::from_vec(vec![0.0]);
        assert!(matches!(
            predict_probs(&x, &theta),
            Err(GlmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn any_period_response_is_the_disjunction() {
        let net = testnet::figure3();
        let mut entries = Vec::new();
        for (_, road) in net.existing_roads() {
            let key = road.key();
            entries.push((key.clone(), "t1".to_string(), key == EdgeKey::new("A", "B")));
            entries.push((key, "t2".to_string(), false));
        }
        let panel = DeploymentPanel::new(vec!["t1".into(), "t2".into()], entries).unwrap();
        let design = build_design(
            &net,
            &intercept_spec(),
            &panel,
            &ResponseWindow::AnyPeriod,
        )
        .unwrap();
        let hits: Vec<&EdgeKey> = design
            .roads
            .iter()
            .zip(&design.response)
            .filter(|(_, &y)| y)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(hits, [&EdgeKey::new("A", "B")]);
    }

    #[test]
    fn panel_round_trips_through_csv() {
        let net = testnet::figure3();
        let mut entries = Vec::new();
        for (i, (_, road)) in net.existing_roads().enumerate() {
            entries.push((road.key(), "t1".to_string(), i % 2 == 0));
            entries.push((road.key(), "t2".to_string(), i % 3 == 0));
        }
        let panel = DeploymentPanel::new(vec!["t1".into(), "t2".into()], entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        save_panel(&panel, &path).unwrap();
        let back = load_panel(&path, None).unwrap();
        assert_eq!(panel, back);
    }

    #[test]
    fn coefficients_pack_unpack_round_trip() {
        let layout = BlockLayout::new(2, 1, 0, 3, 2);
        let coef = Coefficients {
            mu: 0.5,
            alpha: vec![1.0, -1.0],
            beta: vec![2.0],
            gamma: vec![],
            delta: vec![0.1, 0.2, 0.3],
            tau: vec![-0.5, 0.25],
            covariance: None,
        };
        let packed = coef.pack();
        assert_eq!(packed.len(), layout.columns());
        assert_eq!(Coefficients::unpack(&layout, &packed), coef);
    }
}
