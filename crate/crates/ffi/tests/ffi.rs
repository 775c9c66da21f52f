//! Exercise the C ABI from Rust: handle lifecycle, out-pointer results,
//! error codes, and the per-thread error message.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use canbet_ffi::*;

/// Four intersections; B-D may be blocked with probability one half.
/// A-B costs 0.5, B-C 0.9, the rest 1.0.
const DIAMOND: &str = r#"{
  "covariate_names": {"node_local": [], "node_global": [], "edge_local": [], "edge_global": []},
  "intersections": [
    {"id": "A", "local": [], "global": []},
    {"id": "B", "local": [], "global": []},
    {"id": "C", "local": [], "global": []},
    {"id": "D", "local": [], "global": []}
  ],
  "roads": [
    {"from": "A", "to": "B", "length": 0.5, "exists": true, "stochastic": false, "block_probability": 0.0, "local": [], "global": []},
    {"from": "B", "to": "C", "length": 0.9, "exists": true, "stochastic": false, "block_probability": 0.0, "local": [], "global": []},
    {"from": "A", "to": "C", "length": 1.0, "exists": true, "stochastic": false, "block_probability": 0.0, "local": [], "global": []},
    {"from": "B", "to": "D", "length": 1.0, "exists": true, "stochastic": true, "block_probability": 0.5, "local": [], "global": []},
    {"from": "C", "to": "D", "length": 1.0, "exists": true, "stochastic": false, "block_probability": 0.0, "local": [], "global": []}
  ]
}"#;

fn network() -> *mut CanbetNetwork {
    let json = CString::new(DIAMOND).unwrap();
    let mut net = ptr::null_mut();
    let status = unsafe { canbet_network_from_json(json.as_ptr(), &mut net) };
    assert_eq!(status, CanbetStatus::Ok);
    assert!(!net.is_null());
    net
}

fn last_error() -> String {
    let ptr = canbet_last_error();
    assert!(!ptr.is_null(), "a failing call must leave a message");
    unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_owned()
}

#[test]
fn version_is_a_static_string() {
    let version = unsafe { CStr::from_ptr(canbet_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_rejects_missing_files_with_data_error() {
    let path = CString::new("/nonexistent/net.json").unwrap();
    let mut net = ptr::null_mut();
    let status = unsafe { canbet_network_load(path.as_ptr(), &mut net) };
    assert_eq!(status, CanbetStatus::DataError);
    assert!(net.is_null() || false, "out must stay untouched on failure");
    assert!(last_error().contains("/nonexistent/net.json"));
}

#[test]
fn load_roundtrips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    std::fs::write(&path, DIAMOND).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { canbet_network_load(c_path.as_ptr(), &mut net) },
        CanbetStatus::Ok
    );
    let (mut nodes, mut roads) = (0usize, 0usize);
    assert_eq!(
        unsafe { canbet_network_counts(net, &mut nodes, &mut roads) },
        CanbetStatus::Ok
    );
    assert_eq!((nodes, roads), (4, 5));
    unsafe { canbet_network_free(net) };
}

#[test]
fn null_arguments_are_reported_not_crashed() {
    let net = network();
    let a = CString::new("A").unwrap();
    let mut cost = 0.0;
    assert_eq!(
        unsafe {
            canbet_route_distance(ptr::null(), a.as_ptr(), a.as_ptr(), ptr::null(), 0, &mut cost)
        },
        CanbetStatus::NullPointer
    );
    assert_eq!(
        unsafe { canbet_route_distance(net, ptr::null(), a.as_ptr(), ptr::null(), 0, &mut cost) },
        CanbetStatus::NullPointer
    );
    assert!(last_error().contains("from"));
    unsafe { canbet_network_free(net) };
    unsafe { canbet_network_free(ptr::null_mut()) };
    unsafe { canbet_string_free(ptr::null_mut()) };
}

#[test]
fn route_distance_avoids_blocked_roads() {
    let net = network();
    let a = CString::new("A").unwrap();
    let d = CString::new("D").unwrap();
    let mut cost = 0.0;
    assert_eq!(
        unsafe { canbet_route_distance(net, a.as_ptr(), d.as_ptr(), ptr::null(), 0, &mut cost) },
        CanbetStatus::Ok
    );
    assert_eq!(cost, 1.5);

    let bd = CString::new("B-D").unwrap();
    let blocked = [bd.as_ptr()];
    assert_eq!(
        unsafe { canbet_route_distance(net, a.as_ptr(), d.as_ptr(), blocked.as_ptr(), 1, &mut cost) },
        CanbetStatus::Ok
    );
    assert_eq!(cost, 2.0);

    let bogus = CString::new("A-Z").unwrap();
    let blocked = [bogus.as_ptr()];
    assert_eq!(
        unsafe { canbet_route_distance(net, a.as_ptr(), d.as_ptr(), blocked.as_ptr(), 1, &mut cost) },
        CanbetStatus::DataError
    );
    unsafe { canbet_network_free(net) };
}

#[test]
fn ctp_solve_returns_cost_and_first_action() {
    let net = network();
    let a = CString::new("A").unwrap();
    let d = CString::new("D").unwrap();
    let mut cost = 0.0;
    let mut action: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe {
            canbet_ctp_solve(net, a.as_ptr(), d.as_ptr(), f64::INFINITY, &mut cost, &mut action)
        },
        CanbetStatus::Ok
    );
    assert!((cost - 1.95).abs() < 1e-12);
    let text = unsafe { CStr::from_ptr(action) }.to_str().unwrap().to_owned();
    assert_eq!(text, "traverse A-B");
    unsafe { canbet_string_free(action) };

    let z = CString::new("Z").unwrap();
    assert_eq!(
        unsafe {
            canbet_ctp_solve(net, a.as_ptr(), z.as_ptr(), f64::INFINITY, &mut cost, ptr::null_mut())
        },
        CanbetStatus::DataError
    );
    assert!(last_error().contains("Z"));
    unsafe { canbet_network_free(net) };
}

#[test]
fn delta_distance_matches_known_value() {
    let net = network();
    let a = CString::new("A").unwrap();
    let d = CString::new("D").unwrap();
    let c = CString::new("C").unwrap();
    let mut delta = -1.0;
    // Blocking A-C changes nothing for the A -> D journey.
    assert_eq!(
        unsafe {
            canbet_delta_distance(
                net,
                a.as_ptr(),
                d.as_ptr(),
                a.as_ptr(),
                c.as_ptr(),
                f64::INFINITY,
                &mut delta,
            )
        },
        CanbetStatus::Ok
    );
    assert_eq!(delta, 0.0);
    unsafe { canbet_network_free(net) };
}

#[test]
fn reports_serve_road_and_node_scores() {
    let net = network();
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { canbet_centrality_report(net, f64::INFINITY, &mut report) },
        CanbetStatus::Ok
    );

    let c = CString::new("C").unwrap();
    let d = CString::new("D").unwrap();
    let (mut eb, mut cb) = (-1.0, -1.0);
    assert_eq!(
        unsafe { canbet_report_road(report, c.as_ptr(), d.as_ptr(), &mut eb, &mut cb) },
        CanbetStatus::Ok
    );
    assert!(eb >= 0.0 && cb >= 0.0);

    let (mut closeness, mut betweenness) = (0.0, -1.0);
    assert_eq!(
        unsafe { canbet_report_node(report, c.as_ptr(), &mut closeness, &mut betweenness) },
        CanbetStatus::Ok
    );
    assert!(closeness > 0.0);

    let z = CString::new("Z").unwrap();
    assert_eq!(
        unsafe { canbet_report_node(report, z.as_ptr(), &mut closeness, &mut betweenness) },
        CanbetStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { canbet_report_road(report, c.as_ptr(), z.as_ptr(), &mut eb, &mut cb) },
        CanbetStatus::InvalidArgument
    );
    unsafe { canbet_report_free(report) };
    unsafe { canbet_report_free(ptr::null_mut()) };
    unsafe { canbet_network_free(net) };
}

#[test]
fn invalid_utf8_is_its_own_status() {
    let net = network();
    let bad = [0xffu8, 0xfe, 0x00];
    let mut cost = 0.0;
    let a = CString::new("A").unwrap();
    assert_eq!(
        unsafe {
            canbet_route_distance(
                net,
                bad.as_ptr() as *const c_char,
                a.as_ptr(),
                ptr::null(),
                0,
                &mut cost,
            )
        },
        CanbetStatus::InvalidUtf8
    );
    unsafe { canbet_network_free(net) };
}

#[test]
fn generated_header_covers_the_surface() {
    let header = include_str!("../include/canbet.h");
    for symbol in [
        "canbet_version",
        "canbet_last_error",
        "canbet_network_load",
        "canbet_network_from_json",
        "canbet_network_free",
        "canbet_network_counts",
        "canbet_route_distance",
        "canbet_ctp_solve",
        "canbet_delta_distance",
        "canbet_centrality_report",
        "canbet_report_road",
        "canbet_report_node",
        "canbet_report_free",
        "canbet_string_free",
        "CANBET_STATUS_OK",
        "CANBET_STATUS_NUMERICAL_ERROR",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
