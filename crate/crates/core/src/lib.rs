//! Modelling adversarial road interdiction on weighted networks.
//!
//! The crate couples three ingredients:
//!
//! - a Canadian-traveller solver ([`ctp`]): expected-cost-optimal travel plans
//!   when roads block with known probability and a blockage is only revealed
//!   on arrival at an endpoint;
//! - centrality measures ([`centrality`]), including a recourse-aware edge
//!   importance score ("Canadian betweenness") defined as the expected extra
//!   travel cost a blockage of that edge inflicts, averaged over trips;
//! - a probit GLM over roads ([`glm`]) whose covariates may include that
//!   importance score, closed into a fixed point by [`coupled`] because the
//!   deployment probabilities feed back into the importance computation.
//!
//! Around that core: Bayesian sequential updating and prediction pooling
//! ([`bayes`]), expert-assessment priors ([`elicit`]), synthetic scenario
//! generation ([`simgen`]), and a reproducible file-based CLI ([`cli`]).

pub mod bayes;
pub mod centrality;
pub mod cli;
pub mod coupled;
pub mod ctp;
pub mod elicit;
pub mod glm;
pub mod netmodel;
pub mod prob;
pub mod routing;
pub mod simgen;

pub use netmodel::{EdgeKey, NodeId, RoadNetwork};

#[cfg(test)]
pub(crate) mod testnet;
