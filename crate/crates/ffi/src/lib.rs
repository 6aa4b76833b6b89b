//! C ABI over the `routeguard` library.
//!
//! Every fallible function returns an [`RgStatus`]; on failure a message is
//! kept per thread and can be fetched with [`rg_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller releases with the
//! matching `*_free` function. Array arguments are `(pointer, length)` pairs
//! and lengths are checked against the handle's dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use routeguard::allocation::{solve_lexicographic, DifferenceMatrix};
use routeguard::attack::{make_zone_attack_types, AttackType, SelectionMatrix};
use routeguard::cost::{bpr_cost, expected_link_cost, poly_coefficients, BprParams, ExpectedCostParams};
use routeguard::network::{generate_routes, parse_tntp, Network};
use routeguard::partition::Partition;
use routeguard::posterior::{likelihood_weights, Observation};
use routeguard::routing::{best_response_flow, system_optimal_flow, RoutingSolution, SolverOptions};
use routeguard::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    ValidationError = 4,
    DimensionMismatch = 5,
    Infeasible = 6,
    NonConvex = 7,
    EmptyPairSet = 8,
    IoError = 9,
    Panic = 10,
    Internal = 11,
}

/// Opaque network handle.
pub struct RgNetwork(Network);

/// Opaque partition handle.
pub struct RgPartition(Partition);

/// Opaque list of attack types.
pub struct RgAttackSet(Vec<AttackType>);

/// Marks a link that belongs to no group in [`rg_partition_new`].
pub const RG_UNSENSED: usize = usize::MAX;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RgStatus {
    match e {
        Error::MissingTag(_) | Error::Parse { .. } | Error::Toml(_) | Error::Json(_) | Error::Csv(_) => {
            RgStatus::ParseError
        }
        Error::Dimension { .. } | Error::OutOfRange { .. } => RgStatus::DimensionMismatch,
        Error::Infeasible(_) | Error::Disconnected { .. } => RgStatus::Infeasible,
        Error::NonConvex { .. } => RgStatus::NonConvex,
        Error::EmptyPairSet => RgStatus::EmptyPairSet,
        Error::Io(_) => RgStatus::IoError,
        Error::Stage { source, .. } => status_of(source),
        _ => RgStatus::ValidationError,
    }
}

struct Fail(RgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside routeguard".into());
            RgStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(RgStatus::NullPointer, "null pointer argument".into())
}

unsafe fn r<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn w<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn input<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, expected: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len != expected {
        return Err(Fail(
            RgStatus::DimensionMismatch,
            format!("{what}: buffer holds {len}, need {expected}"),
        ));
    }
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RgStatus::InvalidArgument, "string is not UTF-8".into()))
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the full message length in bytes, excluding
/// the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// Network

/// Parses TNTP network and trips tables given as NUL-terminated strings.
///
/// # Safety
/// Both strings must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_network_parse_tntp(
    net_text: *const c_char,
    trips_text: *const c_char,
    out: *mut *mut RgNetwork,
) -> RgStatus {
    guard(|| {
        let out = w(out)?;
        let net = parse_tntp(text(net_text)?.as_bytes(), text(trips_text)?.as_bytes())?;
        *out = Box::into_raw(Box::new(RgNetwork(net)));
        Ok(())
    })
}

/// Parses TNTP network and trips files.
///
/// # Safety
/// Both paths must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_network_load_tntp(
    net_path: *const c_char,
    trips_path: *const c_char,
    out: *mut *mut RgNetwork,
) -> RgStatus {
    guard(|| {
        let out = w(out)?;
        let open = |p: &str| std::fs::File::open(p).map(std::io::BufReader::new).map_err(Error::from);
        let net = parse_tntp(open(text(net_path)?)?, open(text(trips_path)?)?)?;
        *out = Box::into_raw(Box::new(RgNetwork(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_network_free(net: *mut RgNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Writes node, link, OD-pair and route counts; any output may be null.
///
/// # Safety
/// `net` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_network_dims(
    net: *const RgNetwork,
    num_nodes: *mut usize,
    num_links: *mut usize,
    num_od: *mut usize,
    num_routes: *mut usize,
) -> RgStatus {
    guard(|| {
        let n = &r(net)?.0;
        for (p, v) in [
            (num_nodes, n.num_nodes()),
            (num_links, n.num_links()),
            (num_od, n.od_pairs().len()),
            (num_routes, n.num_routes()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Link capacities into `out[0..len]`, `len` equal to the link count.
///
/// # Safety
/// `net` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_network_capacities(net: *const RgNetwork, out: *mut f64, len: usize) -> RgStatus {
    guard(|| {
        let n = &r(net)?.0;
        output(out, len, n.num_links(), "capacities")?.copy_from_slice(&n.capacities());
        Ok(())
    })
}

/// Replaces the routes with the `k` free-flow shortest loop-free paths per
/// OD pair. `short_od` (nullable) receives the number of OD pairs with
/// fewer than `k` paths.
///
/// # Safety
/// `net` must be a live handle; `short_od` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rg_network_generate_routes(net: *mut RgNetwork, k: usize, short_od: *mut usize) -> RgStatus {
    guard(|| {
        let n = &mut w(net)?.0;
        let g = generate_routes(n, k)?;
        if let Some(s) = short_od.as_mut() {
            *s = g.warning_count();
        }
        n.set_routes(g.routes)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Partition and attacks

/// Builds a partition from a per-link group index (`RG_UNSENSED` for links
/// in no group) and per-group costs.
///
/// # Safety
/// `group_of_link` must hold `num_links` entries and `costs` `num_groups`.
#[no_mangle]
pub unsafe extern "C" fn rg_partition_new(
    group_of_link: *const usize,
    num_links: usize,
    costs: *const f64,
    num_groups: usize,
    out: *mut *mut RgPartition,
) -> RgStatus {
    guard(|| {
        let out = w(out)?;
        let owner = input(group_of_link, num_links)?;
        let costs = input(costs, num_groups)?;
        let mut groups = vec![Vec::new(); num_groups];
        for (l, &g) in owner.iter().enumerate() {
            if g == RG_UNSENSED {
                continue;
            }
            groups
                .get_mut(g)
                .ok_or_else(|| Fail(RgStatus::DimensionMismatch, format!("link {l} names group {g}")))?
                .push(l);
        }
        let p = Partition::new(groups, costs.to_vec(), num_links)?;
        *out = Box::into_raw(Box::new(RgPartition(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rg_partition_free(p: *mut RgPartition) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// One zone attack type per group: mean `mean_scale * c` on the group's
/// links, deviation `rel_std * c` everywhere.
///
/// # Safety
/// `partition` must be live; `capacity` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_attack_zone_types(
    partition: *const RgPartition,
    capacity: *const f64,
    len: usize,
    mean_scale: f64,
    rel_std: f64,
    out: *mut *mut RgAttackSet,
) -> RgStatus {
    guard(|| {
        let out = w(out)?;
        let types = make_zone_attack_types(&r(partition)?.0, input(capacity, len)?, mean_scale, rel_std)?;
        *out = Box::into_raw(Box::new(RgAttackSet(types)));
        Ok(())
    })
}

/// Builds a set of `num_types` types over `num_links` links from row-major
/// `num_types x num_links` mean and deviation arrays.
///
/// # Safety
/// `mu` and `sigma` must each hold `num_types * num_links` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_attack_set_new(
    mu: *const f64,
    sigma: *const f64,
    num_types: usize,
    num_links: usize,
    out: *mut *mut RgAttackSet,
) -> RgStatus {
    guard(|| {
        let out = w(out)?;
        let n = num_types
            .checked_mul(num_links)
            .ok_or_else(|| Fail(RgStatus::InvalidArgument, "size overflow".into()))?;
        let (mu, sigma) = (input(mu, n)?, input(sigma, n)?);
        let types = (0..num_types)
            .map(|i| {
                let rows = i * num_links..(i + 1) * num_links;
                AttackType::new(i, mu[rows.clone()].to_vec(), sigma[rows].to_vec())
            })
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(RgAttackSet(types)));
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rg_attack_set_free(set: *mut RgAttackSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of types in the set (0 for a null handle).
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rg_attack_set_len(set: *const RgAttackSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the mean and deviation vectors of type `index`.
///
/// # Safety
/// `set` must be live; `mu` and `sigma` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_attack_set_get(
    set: *const RgAttackSet,
    index: usize,
    mu: *mut f64,
    sigma: *mut f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        let s = &r(set)?.0;
        let t = s
            .get(index)
            .ok_or_else(|| Fail(RgStatus::InvalidArgument, format!("type {index} out of {}", s.len())))?;
        output(mu, len, t.num_links(), "mu")?.copy_from_slice(&t.mu);
        output(sigma, len, t.num_links(), "sigma")?.copy_from_slice(&t.sigma);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Routing

/// Routing result written by the solver entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RgSolveInfo {
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub nonconvex: bool,
}

/// Solver settings; `rg_solver_defaults` fills recommended values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RgSolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Continue on negative curvature instead of failing.
    pub tolerate_nonconvex: bool,
}

#[no_mangle]
pub extern "C" fn rg_solver_defaults() -> RgSolverOptions {
    let d = SolverOptions::default();
    RgSolverOptions {
        tol: d.tol,
        max_iter: d.max_iter,
        tolerate_nonconvex: false,
    }
}

fn options(o: &RgSolverOptions) -> SolverOptions {
    SolverOptions {
        tol: o.tol,
        max_iter: o.max_iter,
        nonconvex: if o.tolerate_nonconvex {
            routeguard::NonconvexPolicy::Tolerate
        } else {
            routeguard::NonconvexPolicy::Reject
        },
        ..SolverOptions::default()
    }
}

unsafe fn emit(sol: RoutingSolution, z: *mut f64, z_len: usize, info: *mut RgSolveInfo) -> Result<(), Fail> {
    output(z, z_len, sol.z.len(), "route flow")?.copy_from_slice(&sol.z);
    if let Some(i) = info.as_mut() {
        *i = RgSolveInfo {
            objective: sol.objective,
            gap: sol.gap,
            iterations: sol.iterations,
            converged: sol.converged,
            nonconvex: sol.nonconvex,
        };
    }
    Ok(())
}

/// Minimum-cost routing with known ambient flow `f` (length = link count).
/// Route flows go to `z` (length = route count).
///
/// # Safety
/// Handles must be live, arrays sized as stated, `info` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rg_system_optimal(
    net: *const RgNetwork,
    f: *const f64,
    f_len: usize,
    opts: *const RgSolverOptions,
    z: *mut f64,
    z_len: usize,
    info: *mut RgSolveInfo,
) -> RgStatus {
    guard(|| {
        let sol = system_optimal_flow(&r(net)?.0, input(f, f_len)?, &options(r(opts)?))?;
        emit(sol, z, z_len, info)
    })
}

/// Best response to type `type_index` of `set` given reported flow `f_hat`.
///
/// # Safety
/// Handles must be live, arrays sized as stated, `info` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rg_best_response(
    net: *const RgNetwork,
    set: *const RgAttackSet,
    type_index: usize,
    f_hat: *const f64,
    f_len: usize,
    opts: *const RgSolverOptions,
    z: *mut f64,
    z_len: usize,
    info: *mut RgSolveInfo,
) -> RgStatus {
    guard(|| {
        let types = &r(set)?.0;
        let t = types
            .get(type_index)
            .ok_or_else(|| Fail(RgStatus::InvalidArgument, format!("type {type_index} out of {}", types.len())))?;
        let sol = best_response_flow(&r(net)?.0, t, input(f_hat, f_len)?, &options(r(opts)?))?;
        emit(sol, z, z_len, info)
    })
}

// ---------------------------------------------------------------------------
// Kernels

#[no_mangle]
pub extern "C" fn rg_bpr_cost(y: f64, f: f64, b: f64, w: f64, c: f64) -> f64 {
    bpr_cost(y, f, &BprParams { b, w, c })
}

#[no_mangle]
pub extern "C" fn rg_expected_link_cost(y: f64, b: f64, w: f64, c: f64, mu_tilde: f64, sigma: f64) -> f64 {
    expected_link_cost(y, &ExpectedCostParams { bpr: BprParams { b, w, c }, mu_tilde, sigma })
}

/// Coefficients of `y^1..y^5` of `y * psi(y)` into `out[0..5]`.
///
/// # Safety
/// `out` must hold 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_poly_coefficients(
    b: f64,
    w: f64,
    c: f64,
    mu_tilde: f64,
    sigma: f64,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        let z = poly_coefficients(&ExpectedCostParams { bpr: BprParams { b, w, c }, mu_tilde, sigma });
        output(out, 5, 5, "coefficients")?.copy_from_slice(&z.0);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Allocation and posterior

/// Allocation summary written by [`rg_solve_lexicographic`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RgAllocationInfo {
    pub alpha: f64,
    pub avg: f64,
    pub cost: f64,
}

/// Exact lexicographic allocation for a row-major `n_p x n_g` matrix `m`,
/// group costs `q` (length `n_g`) and budget `gamma`. `x` receives 0/1 per
/// group.
///
/// # Safety
/// `m` must hold `n_p * n_g` doubles, `q` and `x` `n_g` entries each.
#[no_mangle]
pub unsafe extern "C" fn rg_solve_lexicographic(
    m: *const f64,
    n_p: usize,
    n_g: usize,
    q: *const f64,
    gamma: f64,
    x: *mut u8,
    info: *mut RgAllocationInfo,
) -> RgStatus {
    guard(|| {
        let n = n_p
            .checked_mul(n_g)
            .ok_or_else(|| Fail(RgStatus::InvalidArgument, "size overflow".into()))?;
        let values = input(m, n)?;
        let rows = (0..n_p).map(|i| values[i * n_g..(i + 1) * n_g].to_vec()).collect();
        let dm = DifferenceMatrix::from_rows(rows)?;
        let a = solve_lexicographic(&dm, input(q, n_g)?, gamma)?;
        for (o, &s) in output(x, n_g, n_g, "selection")?.iter_mut().zip(&a.x) {
            *o = u8::from(s);
        }
        if let Some(i) = info.as_mut() {
            *i = RgAllocationInfo { alpha: a.alpha, avg: a.avg, cost: a.cost };
        }
        Ok(())
    })
}

/// Type weights from attack values `obs` seen on the sorted link ids
/// `sensed` (both of length `n_s`). `omega` must hold one entry per type.
///
/// # Safety
/// `set` must be live; arrays sized as stated.
#[no_mangle]
pub unsafe extern "C" fn rg_likelihood_weights(
    set: *const RgAttackSet,
    sensed: *const usize,
    obs: *const f64,
    n_s: usize,
    omega: *mut f64,
    n_a: usize,
) -> RgStatus {
    guard(|| {
        let types = &r(set)?.0;
        let n_l = types.first().map_or(0, AttackType::num_links);
        let sel = SelectionMatrix::new(input(sensed, n_s)?.to_vec(), n_l)?;
        let o = Observation::new(sel, input(obs, n_s)?.to_vec())?;
        let wts = likelihood_weights(&o, types)?;
        output(omega, n_a, types.len(), "weights")?.copy_from_slice(&wts.omega);
        Ok(())
    })
}
