//! C ABI over the road-network library.
//!
//! Conventions:
//!
//! - every function returns a [`CanbetStatus`]; results come back through
//!   out-pointers, which may be NULL when the caller does not want that value;
//! - handles are opaque and must be released with their `_free` function,
//!   which tolerates NULL;
//! - on failure the message is kept per thread and readable through
//!   [`canbet_last_error`]; the pointer stays valid until the next failing
//!   call on the same thread.
//!
//! The generated header lands in `include/canbet.h` at build time.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use canbet::centrality::{centrality_report, CbMode, CentralityError, CentralityReport, PairWeights};
use canbet::ctp::{delta_distance, solve_exact, CtpError, CtpQuery};
use canbet::netmodel::{load_network, NetworkError, NetworkFile, RoadNetwork};
use canbet::routing::{shortest_path, RoutingError};
use canbet::{EdgeKey, NodeId};

/// Outcome of a call. Anything but `Ok` leaves a message for
/// [`canbet_last_error`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanbetStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was malformed or out of range.
    InvalidArgument = 3,
    /// The input data violated an invariant (unknown id, unreachable pair, ...).
    DataError = 4,
    /// A computation failed numerically or tripped a resource guard.
    NumericalError = 5,
}

/// Opaque road network.
pub struct CanbetNetwork(RoadNetwork);

/// Opaque centrality report: per-node and per-road scores, computed once.
pub struct CanbetReport(CentralityReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: CanbetStatus, message: String) -> CanbetStatus {
    let text = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message held a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
    status
}

fn net_err(e: NetworkError) -> CanbetStatus {
    fail(CanbetStatus::DataError, e.to_string())
}

fn routing_err(e: RoutingError) -> CanbetStatus {
    fail(CanbetStatus::DataError, e.to_string())
}

fn ctp_err(e: CtpError) -> CanbetStatus {
    let status = match &e {
        CtpError::GuardExceeded { .. } => CanbetStatus::NumericalError,
        CtpError::BadRepairWait(_) => CanbetStatus::InvalidArgument,
        _ => CanbetStatus::DataError,
    };
    fail(status, e.to_string())
}

fn centrality_err(e: CentralityError) -> CanbetStatus {
    match e {
        CentralityError::Network(inner) => net_err(inner),
        CentralityError::Routing(inner) => routing_err(inner),
        CentralityError::Ctp(inner) => ctp_err(inner),
        other => fail(CanbetStatus::DataError, other.to_string()),
    }
}

/// Panics must not unwind into C; turn them into an error status instead.
fn guarded(body: impl FnOnce() -> CanbetStatus) -> CanbetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(
            CanbetStatus::NumericalError,
            "internal panic; the handle may be in an inconsistent state".to_owned(),
        ),
    }
}

unsafe fn arg_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CanbetStatus> {
    if ptr.is_null() {
        return Err(fail(
            CanbetStatus::NullPointer,
            format!("{what} must not be NULL"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(CanbetStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn arg_handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, CanbetStatus> {
    ptr.as_ref().ok_or_else(|| {
        fail(
            CanbetStatus::NullPointer,
            format!("{what} handle must not be NULL"),
        )
    })
}

fn parse_road(token: &str) -> Result<EdgeKey, CanbetStatus> {
    match token.split_once('-') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(EdgeKey::new(a, b)),
        _ => Err(fail(
            CanbetStatus::InvalidArgument,
            format!("road `{token}` must be written FROM-TO"),
        )),
    }
}

unsafe fn store<T>(out: *mut T, value: T) {
    if !out.is_null() {
        *out = value;
    }
}

/// Library version as a static NUL-terminated string; never free it.
#[no_mangle]
pub extern "C" fn canbet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failure on this thread, or NULL when none happened.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn canbet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |text| text.as_ptr())
    })
}

/// Load a network from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer; on `Ok`
/// the caller owns the handle and must release it with
/// [`canbet_network_free`].
#[no_mangle]
pub unsafe extern "C" fn canbet_network_load(
    path: *const c_char,
    out: *mut *mut CanbetNetwork,
) -> CanbetStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CanbetStatus::NullPointer, "out must not be NULL".to_owned());
        }
        let path = match arg_str(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_network(path) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CanbetNetwork(net)));
                CanbetStatus::Ok
            }
            Err(e) => net_err(e),
        }
    })
}

/// Parse a network from a JSON string instead of a file.
///
/// # Safety
/// Same contract as [`canbet_network_load`].
#[no_mangle]
pub unsafe extern "C" fn canbet_network_from_json(
    json: *const c_char,
    out: *mut *mut CanbetNetwork,
) -> CanbetStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CanbetStatus::NullPointer, "out must not be NULL".to_owned());
        }
        let json = match arg_str(json, "json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let file: NetworkFile = match serde_json::from_str(json) {
            Ok(file) => file,
            Err(e) => return fail(CanbetStatus::DataError, format!("failed to parse json: {e}")),
        };
        match RoadNetwork::from_file(file) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CanbetNetwork(net)));
                CanbetStatus::Ok
            }
            Err(e) => net_err(e),
        }
    })
}

/// Release a network handle. NULL is a no-op.
///
/// # Safety
/// `net` must come from a `canbet_network_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn canbet_network_free(net: *mut CanbetNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Intersection and existing-road counts. Either out-pointer may be NULL.
///
/// # Safety
/// `net` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_network_counts(
    net: *const CanbetNetwork,
    out_intersections: *mut usize,
    out_roads: *mut usize,
) -> CanbetStatus {
    guarded(|| {
        let net = match arg_handle(net, "network") {
            Ok(n) => n,
            Err(status) => return status,
        };
        store(out_intersections, net.0.node_count());
        store(out_roads, net.0.existing_roads().count());
        CanbetStatus::Ok
    })
}

/// Shortest distance between two intersections, avoiding `blocked` roads
/// (`blocked_len` strings of the form `FROM-TO`; pass NULL/0 for none).
///
/// # Safety
/// `net` must be a live handle; `blocked` must point to `blocked_len`
/// NUL-terminated strings; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_route_distance(
    net: *const CanbetNetwork,
    from: *const c_char,
    to: *const c_char,
    blocked: *const *const c_char,
    blocked_len: usize,
    out_distance: *mut f64,
) -> CanbetStatus {
    guarded(|| {
        let net = match arg_handle(net, "network") {
            Ok(n) => n,
            Err(status) => return status,
        };
        let (from, to) = match (arg_str(from, "from"), arg_str(to, "to")) {
            (Ok(f), Ok(t)) => (f, t),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        let mut avoid = BTreeSet::new();
        if blocked_len > 0 {
            if blocked.is_null() {
                return fail(
                    CanbetStatus::NullPointer,
                    "blocked must not be NULL when blocked_len > 0".to_owned(),
                );
            }
            for i in 0..blocked_len {
                let token = match arg_str(*blocked.add(i), "blocked road") {
                    Ok(s) => s,
                    Err(status) => return status,
                };
                let key = match parse_road(token) {
                    Ok(k) => k,
                    Err(status) => return status,
                };
                if let Err(e) = net.0.road(&key) {
                    return net_err(e);
                }
                avoid.insert(key);
            }
        }
        match shortest_path(&net.0, &NodeId::new(from), &NodeId::new(to), &avoid) {
            Ok(route) => {
                store(out_distance, route.cost);
                CanbetStatus::Ok
            }
            Err(e) => routing_err(e),
        }
    })
}

/// Expected cost of the optimal travel plan with recourse, and the first
/// action as a newly allocated string (`traverse A-B`, `wait A-B`, or `none`;
/// free it with [`canbet_string_free`]). `repair_wait` is the cost of waiting
/// at a blocked road; pass INFINITY to forbid waiting.
///
/// # Safety
/// `net` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_ctp_solve(
    net: *const CanbetNetwork,
    from: *const c_char,
    to: *const c_char,
    repair_wait: f64,
    out_cost: *mut f64,
    out_first_action: *mut *mut c_char,
) -> CanbetStatus {
    guarded(|| {
        let net = match arg_handle(net, "network") {
            Ok(n) => n,
            Err(status) => return status,
        };
        let (from, to) = match (arg_str(from, "from"), arg_str(to, "to")) {
            (Ok(f), Ok(t)) => (f, t),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        let query = CtpQuery::new(from, to).with_repair_wait(repair_wait);
        match solve_exact(&net.0, &query) {
            Ok(solution) => {
                store(out_cost, solution.expected_cost);
                if !out_first_action.is_null() {
                    let text = solution
                        .first_action
                        .map(|a| a.to_string())
                        .unwrap_or_else(|| "none".to_owned());
                    let text = CString::new(text).expect("action text has no NUL");
                    *out_first_action = text.into_raw();
                }
                CanbetStatus::Ok
            }
            Err(e) => ctp_err(e),
        }
    })
}

/// Expected extra travel cost for the `road_from`-`road_to` journey leg when
/// the named road blocks, against the journey `from` -> `to`.
///
/// # Safety
/// `net` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_delta_distance(
    net: *const CanbetNetwork,
    from: *const c_char,
    to: *const c_char,
    road_from: *const c_char,
    road_to: *const c_char,
    repair_wait: f64,
    out_delta: *mut f64,
) -> CanbetStatus {
    guarded(|| {
        let net = match arg_handle(net, "network") {
            Ok(n) => n,
            Err(status) => return status,
        };
        let parts = (
            arg_str(from, "from"),
            arg_str(to, "to"),
            arg_str(road_from, "road_from"),
            arg_str(road_to, "road_to"),
        );
        let (from, to, rf, rt) = match parts {
            (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
            (Err(s), _, _, _) | (_, Err(s), _, _) | (_, _, Err(s), _) | (_, _, _, Err(s)) => {
                return s
            }
        };
        let road = EdgeKey::new(rf, rt);
        match delta_distance(&net.0, &NodeId::new(from), &NodeId::new(to), &road, repair_wait) {
            Ok(delta) => {
                store(out_delta, delta);
                CanbetStatus::Ok
            }
            Err(e) => ctp_err(e),
        }
    })
}

/// Compute closeness, betweenness, and the blocking-aware road score for the
/// whole network, equal trip weights, exact evaluation.
///
/// # Safety
/// `net` must be a live handle and `out` writable; on `Ok` the caller owns
/// the report and must release it with [`canbet_report_free`].
#[no_mangle]
pub unsafe extern "C" fn canbet_centrality_report(
    net: *const CanbetNetwork,
    repair_wait: f64,
    out: *mut *mut CanbetReport,
) -> CanbetStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CanbetStatus::NullPointer, "out must not be NULL".to_owned());
        }
        let net = match arg_handle(net, "network") {
            Ok(n) => n,
            Err(status) => return status,
        };
        match centrality_report(&net.0, repair_wait, &PairWeights::Equal, &CbMode::Exact) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(CanbetReport(report)));
                CanbetStatus::Ok
            }
            Err(e) => centrality_err(e),
        }
    })
}

/// Scores of one road from a report. Either out-pointer may be NULL.
///
/// # Safety
/// `report` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_report_road(
    report: *const CanbetReport,
    road_from: *const c_char,
    road_to: *const c_char,
    out_betweenness: *mut f64,
    out_canadian_betweenness: *mut f64,
) -> CanbetStatus {
    guarded(|| {
        let report = match arg_handle(report, "report") {
            Ok(r) => r,
            Err(status) => return status,
        };
        let (rf, rt) = match (arg_str(road_from, "road_from"), arg_str(road_to, "road_to")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        let key = EdgeKey::new(rf, rt);
        match report.0.roads.get(&key) {
            Some(scores) => {
                store(out_betweenness, scores.betweenness);
                store(out_canadian_betweenness, scores.canadian_betweenness);
                CanbetStatus::Ok
            }
            None => fail(
                CanbetStatus::InvalidArgument,
                format!("road `{key}` is not in the report"),
            ),
        }
    })
}

/// Scores of one intersection from a report. Either out-pointer may be NULL.
///
/// # Safety
/// `report` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn canbet_report_node(
    report: *const CanbetReport,
    id: *const c_char,
    out_closeness: *mut f64,
    out_betweenness: *mut f64,
) -> CanbetStatus {
    guarded(|| {
        let report = match arg_handle(report, "report") {
            Ok(r) => r,
            Err(status) => return status,
        };
        let id = match arg_str(id, "id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match report.0.nodes.get(&NodeId::new(id)) {
            Some(scores) => {
                store(out_closeness, scores.closeness);
                store(out_betweenness, scores.betweenness);
                CanbetStatus::Ok
            }
            None => fail(
                CanbetStatus::InvalidArgument,
                format!("intersection `{id}` is not in the report"),
            ),
        }
    })
}

/// Release a centrality report. NULL is a no-op.
///
/// # Safety
/// `report` must come from [`canbet_centrality_report`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn canbet_report_free(report: *mut CanbetReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Release a string allocated by this library. NULL is a no-op.
///
/// # Safety
/// `s` must come from a function documented to allocate and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn canbet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
