//! C ABI over `mvncop`.
//!
//! Every fallible function returns an [`MvncStatus`]; on failure the message
//! is available from [`mvnc_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Strings returned
//! by the library are released with [`mvnc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mvncop::inference::{fit, FitOptions, FitResult, Method};
use mvncop::io::{area_model, parse_data, parse_graph, report_json, AreaData};
use mvncop::margins::{Family, Link, MarginSpec};
use mvncop::normal::{std_normal_cdf, std_normal_quantile, SymMatrix};
use mvncop::rectangle::{rectangle_exchangeable, rectangle_rqmc, Rectangle, RqmcConfig};
use mvncop::structures::Graph;
use mvncop::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Parse = 4,
    IsolatedNode = 5,
    NotPositiveDefinite = 6,
    Numerical = 7,
    NotConverged = 8,
    Io = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MvncStatus {
    match e {
        Error::NotPositiveDefinite { .. } => MvncStatus::NotPositiveDefinite,
        Error::InvalidArgument(_) => MvncStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => MvncStatus::DimensionMismatch,
        Error::Parse { .. } => MvncStatus::Parse,
        Error::IsolatedNode(_) => MvncStatus::IsolatedNode,
        Error::NonFiniteStart | Error::HessianNotNegativeDefinite | Error::BudgetExceeded { .. } => {
            MvncStatus::Numerical
        }
        Error::Io(_) => MvncStatus::Io,
    }
}

struct Fail(MvncStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MvncStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<MvncStatus, Fail>) -> MvncStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == MvncStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MvncStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(MvncStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn parsed<T: std::str::FromStr>(p: *const c_char, what: &str) -> Result<T, Fail> {
    let s = str_arg(p, what)?;
    s.parse().map_err(|_| Fail(MvncStatus::InvalidArgument, format!("unknown {what} '{s}'")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn mvnc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Standard normal cdf.
#[no_mangle]
pub extern "C" fn mvnc_std_normal_cdf(x: f64) -> f64 {
    std_normal_cdf(x)
}

/// Standard normal quantile; `p` must lie in `[0, 1]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvnc_std_normal_quantile(p: f64, out: *mut f64) -> MvncStatus {
    guard(|| {
        write(out, std_normal_quantile(p)?, "out")?;
        Ok(MvncStatus::Ok)
    })
}

/// RQMC probability of `lower < Z < upper` for `Z ~ N(0, R)`, with `R` a
/// `d×d` row-major correlation matrix. `points` or `shifts` of 0 select the
/// defaults.
///
/// # Safety
/// `lower` and `upper` must hold `d` values, `corr` `d*d`; `prob` and
/// `error` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mvnc_rect_rqmc(
    d: usize,
    lower: *const f64,
    upper: *const f64,
    corr: *const f64,
    points: usize,
    shifts: usize,
    seed: u64,
    prob: *mut f64,
    error: *mut f64,
) -> MvncStatus {
    guard(|| {
        let rect = Rectangle::new(slice(lower, d, "lower")?.to_vec(), slice(upper, d, "upper")?.to_vec())?;
        let r = SymMatrix::new(d, slice(corr, d * d, "corr")?.to_vec())?;
        r.validate_correlation()?;
        let base = RqmcConfig::default_for_dim(d, seed);
        let cfg = RqmcConfig::new(
            if points == 0 { base.points_per_shift } else { points },
            if shifts == 0 { base.num_shifts } else { shifts },
            seed,
        )?;
        let est = rectangle_rqmc(&rect, &r, &cfg)?;
        write(prob, est.probability, "prob")?;
        write(error, est.error, "error")?;
        Ok(MvncStatus::Ok)
    })
}

/// Probability of `lower < Z < upper` under the exchangeable correlation
/// `rho` in `[0, 1)`.
///
/// # Safety
/// `lower` and `upper` must hold `d` values; `prob` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvnc_rect_exchangeable(
    d: usize,
    lower: *const f64,
    upper: *const f64,
    rho: f64,
    prob: *mut f64,
) -> MvncStatus {
    guard(|| {
        let rect = Rectangle::new(slice(lower, d, "lower")?.to_vec(), slice(upper, d, "upper")?.to_vec())?;
        write(prob, rectangle_exchangeable(&rect, rho)?, "prob")?;
        Ok(MvncStatus::Ok)
    })
}

/// Neighbourhood graph.
pub struct MvncGraph {
    graph: Graph,
}

/// Area data set.
pub struct MvncDataset {
    area: AreaData,
}

/// Fitted model.
pub struct MvncFit {
    result: FitResult,
    margin: MarginSpec,
    structure: &'static str,
}

/// Parses node (`id,x,y`) and edge (`id_a,id_b`) CSV text.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvnc_graph_parse(
    nodes_csv: *const c_char,
    edges_csv: *const c_char,
    out: *mut *mut MvncGraph,
) -> MvncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let graph = parse_graph(str_arg(nodes_csv, "nodes_csv")?, str_arg(edges_csv, "edges_csv")?)?;
        out.write(Box::into_raw(Box::new(MvncGraph { graph })));
        Ok(MvncStatus::Ok)
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvnc_graph_node_count(graph: *const MvncGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.node_count())
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvnc_graph_free(graph: *mut MvncGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Parses area data CSV (`node,y[,offset],x1..xp`) for `family`. `d` of 0
/// infers the number of nodes from the first block; a nonzero `intercept`
/// prepends a column of ones.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mvnc_dataset_parse(
    csv: *const c_char,
    d: usize,
    family: *const c_char,
    intercept: i32,
    out: *mut *mut MvncDataset,
) -> MvncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let family: Family = parsed(family, "family")?;
        let area = parse_data(str_arg(csv, "csv")?, (d > 0).then_some(d), family, intercept != 0)?;
        out.write(Box::into_raw(Box::new(MvncDataset { area })));
        Ok(MvncStatus::Ok)
    })
}

/// Observations (`n`) and units per observation (`d`).
///
/// # Safety
/// `data` must be a live handle; `n` and `d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mvnc_dataset_shape(data: *const MvncDataset, n: *mut usize, d: *mut usize) -> MvncStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("data"))?.area.dataset;
        write(n, data.n(), "n")?;
        write(d, data.d(), "d")?;
        Ok(MvncStatus::Ok)
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvnc_dataset_free(data: *mut MvncDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fits a copula model. A null `graph` selects the exchangeable structure,
/// otherwise CAR. `link` may be null for the family default. `method` is
/// `dt`, `sl` or `exact`; `seed`, `points` and `shifts` apply to `sl`
/// (0 selects default sizes). When the optimizer does not converge the
/// handle is still returned together with `MVNC_STATUS_NOT_CONVERGED`.
///
/// # Safety
/// Handles must be live or null as documented; strings NUL-terminated;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit(
    data: *const MvncDataset,
    graph: *const MvncGraph,
    family: *const c_char,
    link: *const c_char,
    method: *const c_char,
    seed: u64,
    points: usize,
    shifts: usize,
    out: *mut *mut MvncFit,
) -> MvncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let area = &data.as_ref().ok_or_else(|| null("data"))?.area;
        let family: Family = parsed(family, "family")?;
        let link: Option<Link> = if link.is_null() { None } else { Some(parsed(link, "link")?) };
        let method: Method = parsed(method, "method")?;
        let graph = graph.as_ref().map(|g| g.graph.clone());
        let model = area_model(family, link, graph, &area.dataset)?;
        let d = area.dataset.d();
        let rqmc = (method == Method::Sl).then(|| {
            let base = RqmcConfig::default_for_dim(d, seed);
            RqmcConfig::new(
                if points == 0 { base.points_per_shift } else { points },
                if shifts == 0 { base.num_shifts } else { shifts },
                seed,
            )
        });
        let rqmc = rqmc.transpose()?;
        let opts = FitOptions { rqmc, covariate_names: area.covariate_names.clone(), ..FitOptions::default() };
        let result = fit(method, &model, &area.dataset, &opts)?;
        let converged = result.converged;
        let iterations = result.iterations;
        out.write(Box::into_raw(Box::new(MvncFit {
            result,
            margin: model.margin.clone(),
            structure: model.correlation.name(),
        })));
        if converged {
            Ok(MvncStatus::Ok)
        } else {
            Err(Fail(MvncStatus::NotConverged, format!("optimizer did not converge after {iterations} iterations")))
        }
    })
}

/// Number of estimated parameters, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit_parameter_count(fit: *const MvncFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.estimates.len())
}

/// Estimate and standard error of parameter `k`; the SE is NaN when the
/// Hessian was unusable.
///
/// # Safety
/// `fit` must be a live handle; `estimate` and `se` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit_parameter(
    fit: *const MvncFit,
    k: usize,
    estimate: *mut f64,
    se: *mut f64,
) -> MvncStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let e = f.result.estimates.get(k).ok_or_else(|| {
            Fail(MvncStatus::InvalidArgument, format!("parameter index {k} out of range"))
        })?;
        write(estimate, e.estimate, "estimate")?;
        write(se, e.se.unwrap_or(f64::NAN), "se")?;
        Ok(MvncStatus::Ok)
    })
}

/// Maximized log-likelihood, or NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit_loglik(fit: *const MvncFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.loglik)
}

/// JSON report; release with [`mvnc_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit_report_json(fit: *const MvncFit, out: *mut *mut c_char) -> MvncStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let text = report_json(&f.result, &f.margin, f.structure).to_string();
        let c = CString::new(text).map_err(|e| Fail(MvncStatus::InvalidArgument, e.to_string()))?;
        out.write(c.into_raw());
        Ok(MvncStatus::Ok)
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvnc_fit_free(fit: *mut MvncFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvnc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
