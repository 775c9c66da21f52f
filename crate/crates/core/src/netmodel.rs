//! Graph data model, covariate storage, validation and file I/O.
//!
//! A [`RoadNetwork`] is an undirected weighted graph: intersections carry
//! local (`X_i`) and global (`Z_i`) covariate vectors, roads carry a length,
//! an existence indicator, covariates (`X_ij`, `Z_ij`), and a blockage prior
//! used by traversal queries.  Networks are immutable after construction;
//! "mutation" happens through explicit copy operations such as
//! [`RoadNetwork::with_block_probabilities`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an intersection.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Unordered endpoint pair naming a road.  Endpoints are stored sorted, so
/// `EdgeKey::new("B", "A")` and `EdgeKey::new("A", "B")` are equal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    a: NodeId,
    b: NodeId,
}

impl EdgeKey {
    pub fn new(x: impl Into<NodeId>, y: impl Into<NodeId>) -> Self {
        let (x, y) = (x.into(), y.into());
        if x <= y {
            EdgeKey { a: x, b: y }
        } else {
            EdgeKey { a: y, b: x }
        }
    }

    pub fn first(&self) -> &NodeId {
        &self.a
    }

    pub fn second(&self) -> &NodeId {
        &self.b
    }

    /// The endpoint opposite `n`, or `None` if `n` is not an endpoint.
    pub fn other(&self, n: &NodeId) -> Option<&NodeId> {
        if *n == self.a {
            Some(&self.b)
        } else if *n == self.b {
            Some(&self.a)
        } else {
            None
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

impl From<&NodeId> for NodeId {
    fn from(n: &NodeId) -> Self {
        n.clone()
    }
}

/// Per-block covariate labels.  The length of each list fixes the covariate
/// dimension for that block network-wide.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateNames {
    pub node_local: Vec<String>,
    pub node_global: Vec<String>,
    pub edge_local: Vec<String>,
    pub edge_global: Vec<String>,
}

/// An intersection with its covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intersection {
    pub id: NodeId,
    /// Local covariates `X_i`: properties of the place itself.
    pub local: Vec<f64>,
    /// Global covariates `Z_i`: properties derived from the network role of
    /// the intersection (degree, closeness, ...).
    pub global: Vec<f64>,
}

/// A road between two intersections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Road {
    pub from: NodeId,
    pub to: NodeId,
    /// Traversal cost `L_ij`; must be positive and finite.
    pub length: f64,
    /// Existence indicator `I_ij`.  Non-existing roads are kept for modelling
    /// but never traversed.
    pub exists: bool,
    /// Whether the road's state is uncertain in traversal queries.
    pub stochastic: bool,
    /// Blockage prior `p_ij`; only consulted when `stochastic` is true.
    pub block_probability: f64,
    /// Local covariates `X_ij`.
    pub local: Vec<f64>,
    /// Global covariates `Z_ij`; the slot where centrality-derived values are
    /// injected lives here.
    pub global: Vec<f64>,
}

impl Road {
    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.from.clone(), self.to.clone())
    }
}

/// Raw on-disk schema.  Unknown fields are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub covariate_names: CovariateNames,
    pub intersections: Vec<Intersection>,
    pub roads: Vec<Road>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Warning => f.write_str("warning"),
            Severity::Error => f.write_str("error"),
        }
    }
}

/// One validation finding.  Errors violate a hard invariant; warnings flag
/// conditions (disconnection, degenerate probabilities) that downstream
/// operations may still reject individually.
#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.severity, self.message)
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("network validation failed: {}", format_errors(.0))]
    Validation(Vec<Diagnostic>),
    #[error("unknown intersection id `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown road `{0}`")]
    UnknownRoad(EdgeKey),
    #[error("block probability {value} for road `{road}` outside [0, 1]")]
    InvalidProbability { road: EdgeKey, value: f64 },
    #[error("edge-global slot {slot} out of range (dimension {dim})")]
    SlotOutOfRange { slot: usize, dim: usize },
}

fn format_errors(diags: &[Diagnostic]) -> String {
    let errors: Vec<String> = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.clone())
        .collect();
    errors.join("; ")
}

/// Validate a raw network file.  Returns every finding; the list is empty iff
/// all invariants hold and the existing-road subgraph is connected.
pub fn validate_file(file: &NetworkFile) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let err = |msg: String| Diagnostic {
        severity: Severity::Error,
        message: msg,
    };
    let warn = |msg: String| Diagnostic {
        severity: Severity::Warning,
        message: msg,
    };

    let names = &file.covariate_names;
    let mut index: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for (i, node) in file.intersections.iter().enumerate() {
        if index.insert(&node.id, i).is_some() {
            diags.push(err(format!("duplicate intersection id `{}`", node.id)));
        }
        if node.local.len() != names.node_local.len() {
            diags.push(err(format!(
                "intersection `{}` has {} local covariates, expected {}",
                node.id,
                node.local.len(),
                names.node_local.len()
            )));
        }
        if node.global.len() != names.node_global.len() {
            diags.push(err(format!(
                "intersection `{}` has {} global covariates, expected {}",
                node.id,
                node.global.len(),
                names.node_global.len()
            )));
        }
    }

    let mut seen_pairs: BTreeSet<EdgeKey> = BTreeSet::new();
    for road in &file.roads {
        let key = road.key();
        if road.from == road.to {
            diags.push(err(format!("road `{key}` is a self-loop")));
        }
        for end in [&road.from, &road.to] {
            if !index.contains_key(end) {
                diags.push(err(format!(
                    "road `{key}` references unknown intersection `{end}`"
                )));
            }
        }
        if !seen_pairs.insert(key.clone()) {
            diags.push(err(format!("duplicate road `{key}`")));
        }
        if !(road.length > 0.0 && road.length.is_finite()) {
            diags.push(err(format!(
                "road `{key}` has non-positive or non-finite length {}",
                road.length
            )));
        }
        if !(0.0..=1.0).contains(&road.block_probability) || road.block_probability.is_nan() {
            diags.push(err(format!(
                "road `{key}` has block probability {} outside [0, 1]",
                road.block_probability
            )));
        } else if road.stochastic
            && (road.block_probability == 0.0 || road.block_probability == 1.0)
        {
            diags.push(warn(format!(
                "stochastic road `{key}` has degenerate block probability {}",
                road.block_probability
            )));
        }
        if road.local.len() != names.edge_local.len() {
            diags.push(err(format!(
                "road `{key}` has {} local covariates, expected {}",
                road.local.len(),
                names.edge_local.len()
            )));
        }
        if road.global.len() != names.edge_global.len() {
            diags.push(err(format!(
                "road `{key}` has {} global covariates, expected {}",
                road.global.len(),
                names.edge_global.len()
            )));
        }
    }

    // Connectivity of the existing-road subgraph: a warning, not an error.
    if diags.iter().all(|d| d.severity != Severity::Error) && file.intersections.len() > 1 {
        let n = file.intersections.len();
        let mut adj = vec![Vec::new(); n];
        for road in file.roads.iter().filter(|r| r.exists) {
            let (i, j) = (index[&road.from], index[&road.to]);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        let unreached: Vec<&str> = file
            .intersections
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, node)| node.id.as_str())
            .collect();
        if !unreached.is_empty() {
            diags.push(warn(format!(
                "existing-road subgraph is not connected; unreachable from `{}`: {}",
                file.intersections[0].id,
                unreached.join(", ")
            )));
        }
    }

    diags
}

/// Validated, immutable road network.
#[derive(Clone, Debug)]
pub struct RoadNetwork {
    names: CovariateNames,
    nodes: Vec<Intersection>,
    roads: Vec<Road>,
    node_index: BTreeMap<NodeId, usize>,
    edge_index: BTreeMap<EdgeKey, usize>,
    /// Per node: `(neighbour node index, road index)` over existing roads.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl RoadNetwork {
    /// Build from parts, rejecting any error-severity finding.
    pub fn new(
        covariate_names: CovariateNames,
        intersections: Vec<Intersection>,
        roads: Vec<Road>,
    ) -> Result<Self, NetworkError> {
        Self::from_file(NetworkFile {
            covariate_names,
            intersections,
            roads,
        })
    }

    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        let diags = validate_file(&file);
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(NetworkError::Validation(diags));
        }
        let NetworkFile {
            covariate_names,
            intersections,
            mut roads,
        } = file;
        // Normalise endpoint order so the unordered pair has one spelling.
        for road in &mut roads {
            if road.from > road.to {
                std::mem::swap(&mut road.from, &mut road.to);
            }
        }
        let node_index: BTreeMap<NodeId, usize> = intersections
            .iter()
            .enumerate()
            .map(|(i, node)| (node.id.clone(), i))
            .collect();
        let edge_index: BTreeMap<EdgeKey, usize> = roads
            .iter()
            .enumerate()
            .map(|(i, r)| (r.key(), i))
            .collect();
        let mut adjacency = vec![Vec::new(); intersections.len()];
        for (ri, road) in roads.iter().enumerate() {
            if road.exists {
                let (i, j) = (node_index[&road.from], node_index[&road.to]);
                adjacency[i].push((j, ri));
                adjacency[j].push((i, ri));
            }
        }
        // Deterministic neighbour order regardless of file order.
        for list in &mut adjacency {
            list.sort_by(|a, b| roads[a.1].key().cmp(&roads[b.1].key()));
        }
        Ok(RoadNetwork {
            names: covariate_names,
            nodes: intersections,
            roads,
            node_index,
            edge_index,
            adjacency,
        })
    }

    /// Re-run validation on this network.  Construction already rejected
    /// errors, so only warnings can come back.
    pub fn validate(&self) -> Vec<Diagnostic> {
        validate_file(&self.to_file())
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            covariate_names: self.names.clone(),
            intersections: self.nodes.clone(),
            roads: self.roads.clone(),
        }
    }

    pub fn covariate_names(&self) -> &CovariateNames {
        &self.names
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.nodes
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    /// Roads with `exists == true`, with their indices.
    pub fn existing_roads(&self) -> impl Iterator<Item = (usize, &Road)> {
        self.roads.iter().enumerate().filter(|(_, r)| r.exists)
    }

    pub fn node_idx(&self, id: &NodeId) -> Result<usize, NetworkError> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownNode(id.clone()))
    }

    pub fn node_id(&self, idx: usize) -> &NodeId {
        &self.nodes[idx].id
    }

    pub fn node(&self, id: &NodeId) -> Result<&Intersection, NetworkError> {
        Ok(&self.nodes[self.node_idx(id)?])
    }

    pub fn road_idx(&self, key: &EdgeKey) -> Result<usize, NetworkError> {
        self.edge_index
            .get(key)
            .copied()
            .ok_or_else(|| NetworkError::UnknownRoad(key.clone()))
    }

    pub fn road(&self, key: &EdgeKey) -> Result<&Road, NetworkError> {
        Ok(&self.roads[self.road_idx(key)?])
    }

    pub fn road_at(&self, idx: usize) -> &Road {
        &self.roads[idx]
    }

    /// Existing roads incident to a node, as `(neighbour index, road index)`.
    pub fn incident(&self, node_idx: usize) -> &[(usize, usize)] {
        &self.adjacency[node_idx]
    }

    /// Number of existing roads meeting the intersection.
    pub fn degree(&self, id: &NodeId) -> Result<usize, NetworkError> {
        Ok(self.adjacency[self.node_idx(id)?].len())
    }

    /// Copy of the network with blockage priors replaced road-by-road.  A road
    /// becomes stochastic exactly when its new prior lies strictly inside
    /// (0, 1).  Roads absent from `probs` are unchanged.
    pub fn with_block_probabilities(
        &self,
        probs: &BTreeMap<EdgeKey, f64>,
    ) -> Result<Self, NetworkError> {
        let mut out = self.clone();
        for (key, &p) in probs {
            let idx = out.road_idx(key)?;
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(NetworkError::InvalidProbability {
                    road: key.clone(),
                    value: p,
                });
            }
            let road = &mut out.roads[idx];
            road.block_probability = p;
            road.stochastic = p > 0.0 && p < 1.0;
        }
        Ok(out)
    }

    /// Copy of the network with one edge-global covariate slot overwritten for
    /// every road present in `values`.
    pub fn with_edge_global_slot(
        &self,
        slot: usize,
        values: &BTreeMap<EdgeKey, f64>,
    ) -> Result<Self, NetworkError> {
        let dim = self.names.edge_global.len();
        if slot >= dim {
            return Err(NetworkError::SlotOutOfRange { slot, dim });
        }
        let mut out = self.clone();
        for (key, &v) in values {
            let idx = out.road_idx(key)?;
            out.roads[idx].global[slot] = v;
        }
        Ok(out)
    }
}

/// Load and validate a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text).map_err(|source| NetworkError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    RoadNetwork::from_file(file)
}

/// Write the network back out as pretty-printed JSON.
pub fn save_network(network: &RoadNetwork, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&network.to_file()).expect("network serialises");
    std::fs::write(path, text + "\n").map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testnet;

    #[test]
    fn canonical_network_loads_and_validates() {
        let net = testnet::figure3();
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.roads().len(), 5);
        assert!(net.validate().is_empty());
    }

    #[test]
    fn canonical_degrees() {
        let net = testnet::figure3();
        assert_eq!(net.degree(&"A".into()).unwrap(), 2);
        assert_eq!(net.degree(&"B".into()).unwrap(), 3);
        assert_eq!(net.degree(&"C".into()).unwrap(), 3);
        assert_eq!(net.degree(&"D".into()).unwrap(), 2);
    }

    #[test]
    fn degree_sums_to_twice_existing_roads() {
        let net = testnet::figure3();
        let total: usize = net
            .intersections()
            .iter()
            .map(|n| net.degree(&n.id).unwrap())
            .sum();
        assert_eq!(total, 2 * net.existing_roads().count());
    }

    #[test]
    fn unknown_node_is_an_error() {
        let net = testnet::figure3();
        assert!(matches!(
            net.degree(&"Z".into()),
            Err(NetworkError::UnknownNode(_))
        ));
    }

    #[test]
    fn single_node_network_is_valid_with_zero_degree() {
        let net = RoadNetwork::new(
            CovariateNames::default(),
            vec![Intersection {
                id: "A".into(),
                local: vec![],
                global: vec![],
            }],
            vec![],
        )
        .unwrap();
        assert_eq!(net.degree(&"A".into()).unwrap(), 0);
        assert!(net.validate().is_empty());
    }

    #[test]
    fn zero_length_road_is_rejected_naming_the_road() {
        let mut file = testnet::figure3_file();
        file.roads[2].length = 0.0;
        let diags = validate_file(&file);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Error);
        assert!(diags[0].message.contains("B-C"), "{}", diags[0].message);
        assert!(RoadNetwork::from_file(file).is_err());
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let mut file = testnet::figure3_file();
        file.roads[0].to = "Z".into();
        let diags = validate_file(&file);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains('Z')));
    }

    #[test]
    fn duplicate_road_is_rejected() {
        let mut file = testnet::figure3_file();
        let dup = file.roads[0].clone();
        file.roads.push(dup);
        assert!(validate_file(&file)
            .iter()
            .any(|d| d.message.contains("duplicate road")));
    }

    #[test]
    fn covariate_mismatch_names_the_intersection() {
        let mut file = testnet::figure3_file();
        file.covariate_names.node_local = vec!["market".into()];
        let diags = validate_file(&file);
        let errors: Vec<_> = diags
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .collect();
        assert_eq!(errors.len(), 4); // every intersection now mismatches
        assert!(errors[0].message.contains('A'));
    }

    #[test]
    fn isolated_intersection_is_a_single_warning() {
        let mut file = testnet::figure3_file();
        file.intersections.push(Intersection {
            id: "E".into(),
            local: vec![],
            global: vec![],
        });
        let diags = validate_file(&file);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(diags[0].message.contains('E'));
    }

    #[test]
    fn unknown_json_fields_are_rejected() {
        let text = r#"{"covariate_names":{"node_local":[],"node_global":[],"edge_local":[],"edge_global":[]},"intersections":[],"roads":[],"extra":1}"#;
        assert!(serde_json::from_str::<NetworkFile>(text).is_err());
    }

    #[test]
    fn save_load_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = testnet::figure3();
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(net.to_file(), back.to_file());
    }

    #[test]
    fn endpoint_order_is_normalised() {
        let mut file = testnet::figure3_file();
        let first = &mut file.roads[0];
        std::mem::swap(&mut first.from, &mut first.to);
        let net = RoadNetwork::from_file(file).unwrap();
        let road = net.road(&EdgeKey::new("A", "B")).unwrap();
        assert_eq!(road.from, "A".into());
        assert_eq!(road.to, "B".into());
    }

    #[test]
    fn with_block_probabilities_flips_stochastic_flag() {
        let net = testnet::figure3();
        let mut probs = BTreeMap::new();
        probs.insert(EdgeKey::new("A", "B"), 0.3);
        probs.insert(EdgeKey::new("B", "D"), 0.0);
        let out = net.with_block_probabilities(&probs).unwrap();
        assert!(out.road(&EdgeKey::new("A", "B")).unwrap().stochastic);
        assert!(!out.road(&EdgeKey::new("B", "D")).unwrap().stochastic);
        // the original is untouched
        assert!(net.road(&EdgeKey::new("B", "D")).unwrap().stochastic);
    }
}
