//! Turn per-road expert probability assessments into a Gaussian coefficient
//! prior, and expose expert opinion as an extra covariate column.
//!
//! The prior construction: repeatedly draw a deployment probability per road
//! from the expert's belief (a Beta matched to the stated mean and s.d.),
//! probit-transform, solve the flat-prior linear model against the road
//! covariates, and average the resulting Gaussians into one moment-matched
//! prior.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::GaussianPrior;
use crate::glm::{build_design, DeploymentPanel, GlmError, ModelSpec, ResponseWindow};
use crate::netmodel::{EdgeKey, NetworkError, RoadNetwork};
use crate::prob::std_normal_quantile;

/// Drawn probabilities are clamped here before the probit transform.
const PROBABILITY_CLAMP: f64 = 1e-6;

/// One expert's belief about one road.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoadBelief {
    /// Believed deployment probability, in (0, 1).
    pub mean: f64,
    /// Standard deviation of the belief; must admit a Beta with the given
    /// mean, i.e. sd^2 < mean(1-mean).
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertAssessment {
    pub expert: String,
    pub beliefs: BTreeMap<EdgeKey, RoadBelief>,
}

impl ExpertAssessment {
    pub fn new(
        expert: impl Into<String>,
        beliefs: impl IntoIterator<Item = (EdgeKey, RoadBelief)>,
    ) -> Result<Self, ElicitError> {
        let expert = expert.into();
        let mut map = BTreeMap::new();
        for (road, belief) in beliefs {
            check_belief(&road, belief)?;
            if map.insert(road.clone(), belief).is_some() {
                return Err(ElicitError::DuplicateRoad { expert, road });
            }
        }
        Ok(ExpertAssessment {
            expert,
            beliefs: map,
        })
    }
}

fn check_belief(road: &EdgeKey, belief: RoadBelief) -> Result<(), ElicitError> {
    let RoadBelief { mean, sd } = belief;
    if !(mean > 0.0 && mean < 1.0) {
        return Err(ElicitError::BadMean {
            road: road.clone(),
            mean,
        });
    }
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(ElicitError::BadSd {
            road: road.clone(),
            sd,
        });
    }
    if sd * sd >= mean * (1.0 - mean) {
        return Err(ElicitError::InfeasibleBeta {
            road: road.clone(),
            mean,
            sd,
        });
    }
    Ok(())
}

/// Beta(a, b) with the belief's mean and standard deviation.
fn beta_parameters(belief: RoadBelief) -> (f64, f64) {
    let RoadBelief { mean, sd } = belief;
    let nu = mean * (1.0 - mean) / (sd * sd) - 1.0;
    (mean * nu, (1.0 - mean) * nu)
}

#[derive(Clone, Copy, Debug)]
pub struct ElicitConfig {
    /// Auxiliary noise variance of the probit-scale linear model.
    pub sigma2: f64,
    /// Total repetitions; the first uses the stated means, the rest draw.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ElicitConfig {
    fn default() -> Self {
        ElicitConfig {
            sigma2: 1.0,
            repetitions: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("road `{road}`: mean {mean} outside (0, 1)")]
    BadMean { road: EdgeKey, mean: f64 },
    #[error("road `{road}`: uncertainty {sd} must be positive and finite")]
    BadSd { road: EdgeKey, sd: f64 },
    #[error(
        "road `{road}`: no Beta distribution has mean {mean} and s.d. {sd}; need sd^2 < mean(1-mean)"
    )]
    InfeasibleBeta { road: EdgeKey, mean: f64, sd: f64 },
    #[error("assessment by `{expert}` does not cover road `{road}`")]
    MissingRoad { expert: String, road: EdgeKey },
    #[error("duplicate road `{road}` in assessment by `{expert}`")]
    DuplicateRoad { expert: String, road: EdgeKey },
    #[error("covariates are collinear, so the flat-prior posterior is undefined; drop columns or fit with ridge instead")]
    RankDeficient,
    #[error("lag coefficients cannot be elicited; elicit against a lag-free model")]
    LagsUnsupported,
    #[error("sigma2 must be finite and positive")]
    BadSigma,
    #[error("need at least one repetition")]
    NoRepetitions,
    #[error("failed to read assessments {path}: {message}")]
    Io { path: String, message: String },
    #[error("assessment record {row}: {message}")]
    Format { row: usize, message: String },
}

/// Gaussian coefficient prior from one expert's road probabilities.
///
/// Per repetition r: take p_ij from the expert (the stated means at r = 0,
/// Beta draws afterwards), clamp away from {0, 1}, and regress the probit
/// quantiles on the road covariates. Under a flat prior that "posterior" is
/// Gaussian with mean (X'X)^-1 X'z and covariance sigma2 (X'X)^-1. The R
/// Gaussians are averaged as an equal-weight mixture whose exact first two
/// moments form the returned prior.
///
/// Roads assessed but absent from the network are ignored; the reverse is an
/// error.
pub fn elicit_prior(
    net: &RoadNetwork,
    spec: &ModelSpec,
    assessment: &ExpertAssessment,
    config: &ElicitConfig,
) -> Result<GaussianPrior, ElicitError> {
    if !(config.sigma2.is_finite() && config.sigma2 > 0.0) {
        return Err(ElicitError::BadSigma);
    }
    if config.repetitions == 0 {
        return Err(ElicitError::NoRepetitions);
    }
    if spec.lags > 0 {
        return Err(ElicitError::LagsUnsupported);
    }

    // The design assembly only needs covariates; feed it a throwaway
    // single-period panel so the road ordering and block layout stay
    // identical to a real fit.
    let period = "assessed".to_owned();
    let entries: Vec<_> = net
        .existing_roads()
        .map(|(_, road)| (road.key(), period.clone(), false))
        .collect();
    let panel = DeploymentPanel::new(vec![period.clone()], entries)?;
    let design = build_design(net, spec, &panel, &ResponseWindow::Period(period))?;

    let mut beliefs = Vec::with_capacity(design.roads.len());
    for road in &design.roads {
        let belief = assessment
            .beliefs
            .get(road)
            .ok_or_else(|| ElicitError::MissingRoad {
                expert: assessment.expert.clone(),
                road: road.clone(),
            })?;
        check_belief(road, *belief)?;
        beliefs.push(*belief);
    }

    let x = &design.matrix;
    let xtx = x.transpose() * x;
    let factor = Cholesky::new(xtx).ok_or(ElicitError::RankDeficient)?;
    let wls_cov = factor.inverse() * config.sigma2;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r_total = config.repetitions;
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(r_total);
    for r in 0..r_total {
        let z = DVector::from_iterator(
            beliefs.len(),
            beliefs.iter().map(|&belief| {
                let p = if r == 0 {
                    belief.mean
                } else {
                    let (a, b) = beta_parameters(belief);
                    rng.sample(Beta::new(a, b).expect("feasibility checked"))
                };
                std_normal_quantile(p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
            }),
        );
        means.push(factor.solve(&(x.transpose() * z)));
    }

    let dim = x.ncols();
    let mut mean = DVector::zeros(dim);
    for m in &means {
        mean += m;
    }
    mean /= r_total as f64;
    let mut scatter = DMatrix::zeros(dim, dim);
    for m in &means {
        let d = m - &mean;
        scatter += &d * d.transpose();
    }
    scatter /= r_total as f64;

    Ok(GaussianPrior::new(mean, wls_cov + scatter).expect("mixture moments are SPD"))
}

/// How expert opinion enters the model as a covariate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpinionCovariate {
    /// The stated probability itself.
    Probability,
    /// 1 when the stated probability reaches the threshold; ties round up.
    Indicator { threshold: f64 },
}

/// Column for the edge-local block, ordered like the network's existing
/// roads.
pub fn expert_covariate(
    net: &RoadNetwork,
    assessment: &ExpertAssessment,
    mode: OpinionCovariate,
) -> Result<Vec<f64>, ElicitError> {
    net.existing_roads()
        .map(|(_, road)| {
            let belief = assessment.beliefs.get(&road.key()).ok_or_else(|| {
                ElicitError::MissingRoad {
                    expert: assessment.expert.clone(),
                    road: road.key(),
                }
            })?;
            Ok(match mode {
                OpinionCovariate::Probability => belief.mean,
                OpinionCovariate::Indicator { threshold } => {
                    if belief.mean >= threshold {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct AssessmentRecord {
    road_from: String,
    road_to: String,
    mean: f64,
    sd: f64,
    expert_id: String,
}

/// Read `road_from,road_to,mean,sd,expert_id` rows, grouped per expert in
/// id order.
pub fn load_assessments(path: impl AsRef<Path>) -> Result<Vec<ExpertAssessment>, ElicitError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| ElicitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut grouped: BTreeMap<String, Vec<(EdgeKey, RoadBelief)>> = BTreeMap::new();
    for (idx, record) in reader.deserialize::<AssessmentRecord>().enumerate() {
        let record = record.map_err(|e| ElicitError::Format {
            row: idx + 1,
            message: e.to_string(),
        })?;
        grouped.entry(record.expert_id).or_default().push((
            EdgeKey::new(record.road_from, record.road_to),
            RoadBelief {
                mean: record.mean,
                sd: record.sd,
            },
        ));
    }
    grouped
        .into_iter()
        .map(|(expert, beliefs)| ExpertAssessment::new(expert, beliefs))
        .collect()
}

pub fn save_assessments(
    assessments: &[ExpertAssessment],
    path: impl AsRef<Path>,
) -> Result<(), ElicitError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| ElicitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    for assessment in assessments {
        for (road, belief) in &assessment.beliefs {
            writer
                .serialize(AssessmentRecord {
                    road_from: road.first().to_string(),
                    road_to: road.second().to_string(),
                    mean: belief.mean,
                    sd: belief.sd,
                    expert_id: assessment.expert.clone(),
                })
                .map_err(io_err)?;
        }
    }
    writer
        .flush()
        .map_err(|e| ElicitError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}
