//! Shared fixture builders for unit tests.

use crate::netmodel::{
    CovariateNames, Intersection, NetworkFile, Road, RoadNetwork,
};

fn node(id: &str) -> Intersection {
    Intersection {
        id: id.into(),
        local: vec![],
        global: vec![],
    }
}

fn road(from: &str, to: &str, length: f64, stochastic: bool, p: f64) -> Road {
    Road {
        from: from.into(),
        to: to.into(),
        length,
        exists: true,
        stochastic,
        block_probability: p,
        local: vec![],
        global: vec![],
    }
}

/// The four-intersection scenario used throughout: deterministic roads
/// A-B (0.5), B-C (0.9), C-D (1.0), A-C (1.0) and a stochastic road
/// B-D (1.0) that blocks with probability one half.
pub fn figure3_file() -> NetworkFile {
    NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B"), node("C"), node("D")],
        roads: vec![
            road("A", "B", 0.5, false, 0.0),
            road("A", "C", 1.0, false, 0.0),
            road("B", "C", 0.9, false, 0.0),
            road("B", "D", 1.0, true, 0.5),
            road("C", "D", 1.0, false, 0.0),
        ],
    }
}

pub fn figure3() -> RoadNetwork {
    RoadNetwork::from_file(figure3_file()).unwrap()
}

/// Path A-B-C with unit lengths.
pub fn path3() -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B"), node("C")],
        roads: vec![road("A", "B", 1.0, false, 0.0), road("B", "C", 1.0, false, 0.0)],
    })
    .unwrap()
}

/// Path A-B-C-D with unit lengths, all deterministic.
pub fn path4() -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B"), node("C"), node("D")],
        roads: vec![
            road("A", "B", 1.0, false, 0.0),
            road("B", "C", 1.0, false, 0.0),
            road("C", "D", 1.0, false, 0.0),
        ],
    })
    .unwrap()
}

/// Star with centre `H` and `leaves` unit spokes.
pub fn star(leaves: usize) -> RoadNetwork {
    let mut intersections = vec![node("H")];
    let mut roads = Vec::new();
    for i in 0..leaves {
        let id = format!("L{i}");
        intersections.push(node(&id));
        roads.push(road("H", &id, 1.0, false, 0.0));
    }
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections,
        roads,
    })
    .unwrap()
}

/// Two intersections joined by one road of length 5.
pub fn pair5() -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B")],
        roads: vec![road("A", "B", 5.0, false, 0.0)],
    })
    .unwrap()
}

/// Unit-length cycle A-B-C-D-A.
pub fn cycle4() -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B"), node("C"), node("D")],
        roads: vec![
            road("A", "B", 1.0, false, 0.0),
            road("B", "C", 1.0, false, 0.0),
            road("C", "D", 1.0, false, 0.0),
            road("A", "D", 1.0, false, 0.0),
        ],
    })
    .unwrap()
}

/// Unit-length triangle A-B-C.
pub fn triangle() -> RoadNetwork {
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections: vec![node("A"), node("B"), node("C")],
        roads: vec![
            road("A", "B", 1.0, false, 0.0),
            road("A", "C", 1.0, false, 0.0),
            road("B", "C", 1.0, false, 0.0),
        ],
    })
    .unwrap()
}

/// Two unit-length cliques of sizes `a` and `b` joined by a unit bridge
/// between `P0` and `Q0`.
pub fn bridged_cliques(a: usize, b: usize) -> RoadNetwork {
    let mut intersections = Vec::new();
    let mut roads = Vec::new();
    for i in 0..a {
        intersections.push(node(&format!("P{i}")));
    }
    for i in 0..b {
        intersections.push(node(&format!("Q{i}")));
    }
    for i in 0..a {
        for j in (i + 1)..a {
            roads.push(road(&format!("P{i}"), &format!("P{j}"), 1.0, false, 0.0));
        }
    }
    for i in 0..b {
        for j in (i + 1)..b {
            roads.push(road(&format!("Q{i}"), &format!("Q{j}"), 1.0, false, 0.0));
        }
    }
    roads.push(road("P0", "Q0", 1.0, false, 0.0));
    RoadNetwork::from_file(NetworkFile {
        covariate_names: CovariateNames::default(),
        intersections,
        roads,
    })
    .unwrap()
}
