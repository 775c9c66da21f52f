//! Alternating estimation of deployment probabilities and the betweenness
//! covariate that depends on them.
//!
//! The deployment model may include the blockage-aware betweenness of each
//! road among its covariates, but that betweenness is itself computed from
//! deployment probabilities.  The loop breaks the circularity: start from
//! all-zero probabilities, score roads under the current probabilities,
//! refit the probit model with the scores injected into the designated
//! covariate slot, damp the predicted probabilities into the current ones,
//! and repeat until the largest per-road change falls under `tol`.
//!
//! Nothing guarantees a fixed point exists or is unique, so the loop also
//! watches for stalling: five consecutive non-shrinking updates abort with
//! advice to raise the damping.  With a sampled betweenness mode the same
//! seed is reused every iteration, making the iterated map deterministic
//! and the trajectory reproducible.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::centrality::{self, CbMode, CentralityError, PairWeights};
use crate::glm::{self, Coefficients, DeploymentPanel, GlmError, ModelSpec, ResponseWindow};
use crate::netmodel::{EdgeKey, NetworkError, RoadNetwork};

/// Updates must shrink within this many consecutive iterations.
pub const OSCILLATION_WINDOW: usize = 5;

#[derive(Clone, Debug)]
pub struct FixedPointOptions {
    /// Stop when no probability moves by this much (infinity norm).
    pub tol: f64,
    pub max_iter: usize,
    /// Weight kept on the previous iterate; 0 is the undamped alternation.
    pub damping: f64,
    /// Repair wait used inside the betweenness computation.
    pub repair_wait: f64,
    pub weights: PairWeights,
    pub mode: CbMode,
    pub window: ResponseWindow,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-6,
            max_iter: 100,
            damping: 0.5,
            repair_wait: f64::INFINITY,
            weights: PairWeights::Equal,
            mode: CbMode::Exact,
            window: ResponseWindow::AnyPeriod,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointState {
    pub iteration: usize,
    pub probabilities: BTreeMap<EdgeKey, f64>,
    pub coefficients: Coefficients,
    pub max_delta: f64,
    /// (iteration, max_delta) per completed iteration.
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum CoupledError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("betweenness computation failed at iteration {iteration}: {source}")]
    Betweenness {
        iteration: usize,
        source: CentralityError,
    },
    #[error("model fit failed at iteration {iteration}: {source}")]
    Fit { iteration: usize, source: GlmError },
    #[error(
        "probability updates stopped shrinking for {window} consecutive iterations \
         (aborted at iteration {iteration}); the alternation appears to oscillate, \
         try damping closer to 1"
    )]
    Oscillating { iteration: usize, window: usize },
    #[error("damping must lie in [0, 1), got {0}")]
    BadDamping(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTol(f64),
}

/// Do the last `window` update steps fail to shrink?
fn non_decreasing_tail(history: &[(usize, f64)], window: usize) -> bool {
    if history.len() <= window {
        return false;
    }
    history[history.len() - (window + 1)..]
        .windows(2)
        .all(|w| w[1].1 >= w[0].1)
}

/// Run the alternation to convergence, iteration budget, or detected
/// oscillation.  Without a designated betweenness slot the loop degenerates
/// to damped iteration on a fixed probit fit.
pub fn fit_coupled(
    net: &RoadNetwork,
    spec: &ModelSpec,
    panel: &DeploymentPanel,
    options: &FixedPointOptions,
) -> Result<FixedPointState, CoupledError> {
    if !(options.damping >= 0.0 && options.damping < 1.0) {
        return Err(CoupledError::BadDamping(options.damping));
    }
    if !(options.tol > 0.0) {
        return Err(CoupledError::BadTol(options.tol));
    }

    let mut p: BTreeMap<EdgeKey, f64> = panel.roads().cloned().map(|k| (k, 0.0)).collect();
    let mut history: Vec<(usize, f64)> = Vec::new();
    for m in 1..=options.max_iter {
        let believed = net.with_block_probabilities(&p)?;
        let refit_net = match spec.cb_slot {
            Some(slot) => {
                let cb = centrality::canadian_betweenness(
                    &believed,
                    options.repair_wait,
                    &options.weights,
                    &options.mode,
                )
                .map_err(|source| CoupledError::Betweenness {
                    iteration: m,
                    source,
                })?;
                net.with_edge_global_slot(slot, &cb.scores)?
            }
            None => net.clone(),
        };
        let fitted = glm::fit_model(&refit_net, spec, panel, &options.window)
            .map_err(|source| CoupledError::Fit {
                iteration: m,
                source,
            })?;
        let predicted = fitted.probabilities();
        let mut max_delta = 0.0f64;
        for (road, &p_hat) in fitted.design.roads.iter().zip(&predicted) {
            let prev = p.get(road).copied().unwrap_or(0.0);
            let next = (1.0 - options.damping) * p_hat + options.damping * prev;
            max_delta = max_delta.max((next - prev).abs());
            p.insert(road.clone(), next);
        }
        history.push((m, max_delta));
        if max_delta < options.tol {
            return Ok(FixedPointState {
                iteration: m,
                probabilities: p,
                coefficients: fitted.coefficients,
                max_delta,
                history,
                converged: true,
            });
        }
        if non_decreasing_tail(&history, OSCILLATION_WINDOW) {
            return Err(CoupledError::Oscillating {
                iteration: m,
                window: OSCILLATION_WINDOW,
            });
        }
        if m == options.max_iter {
            return Ok(FixedPointState {
                iteration: m,
                probabilities: p,
                coefficients: fitted.coefficients,
                max_delta,
                history,
                converged: false,
            });
        }
    }
    unreachable!("loop returns on its last iteration");
}

/// Convergence history as `iteration,max_delta` CSV.
pub fn trajectory_csv(state: &FixedPointState) -> String {
    let mut out = String::from("iteration,max_delta\n");
    for (i, d) in &state.history {
        out.push_str(&format!("{i},{d}\n"));
    }
    out
}
