//! C interface to `rmtcorr`.
//!
//! Matrices cross the boundary as row-major `double` buffers. Objects are
//! opaque handles released with their `*_free` function. Every fallible call
//! returns an [`RmtStatus`]; on failure the message is kept per thread and
//! can be read with [`rmt_last_error`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use rmtcorr::correlation::{self, CorrelationMatrix, ReturnMatrix};
use rmtcorr::modes::{self, ModeDecomposition};
use rmtcorr::{dynamics, ensembles, powermap, states, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Numeric = 3,
    Data = 4,
    Domain = 5,
    Io = 6,
    Format = 7,
    /// Output buffer shorter than required.
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmtComponent {
    Market = 0,
    Group = 1,
    Random = 2,
}

/// Summary statistics of one correlation matrix. Missing values are NaN
/// (and `neg_count` is -1).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RmtEpochStats {
    pub mean_c: f64,
    pub mean_abs_c: f64,
    pub df: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub lambda_max: f64,
    pub lambda_min_emerging: f64,
    pub neg_count: i64,
}

/// Opaque correlation matrix.
pub struct RmtCorrelation(CorrelationMatrix);

/// Opaque mode decomposition.
pub struct RmtModes(ModeDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RmtStatus {
    match e {
        Error::Parameter(_) => RmtStatus::InvalidParameter,
        Error::Numeric(_) => RmtStatus::Numeric,
        Error::Data(_) | Error::Degenerate { .. } => RmtStatus::Data,
        Error::Domain(_) => RmtStatus::Domain,
        Error::Io { .. } => RmtStatus::Io,
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => RmtStatus::Format,
    }
}

enum Fail {
    Status(RmtStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(RmtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(RmtStatus::InvalidParameter, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmtStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal panic".to_string());
            RmtStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Fail> {
    if len < need {
        return Err(Fail::Status(
            RmtStatus::BufferTooSmall,
            format!("buffer holds {len} values, {need} required"),
        ));
    }
    if p.is_null() {
        return Err(null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn write_matrix(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("a{i}")).collect()
}

/// Copies the last error message of this thread into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length, 0 if there is none.
#[no_mangle]
pub unsafe extern "C" fn rmt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rmt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Marchenko-Pastur support edges for `Q = T/N` and variance `sigma2`.
#[no_mangle]
pub unsafe extern "C" fn rmt_mp_bounds(
    q: f64,
    sigma2: f64,
    lambda_min: *mut f64,
    lambda_max: *mut f64,
) -> RmtStatus {
    guard(|| {
        if lambda_min.is_null() || lambda_max.is_null() {
            return Err(null("output pointer"));
        }
        if !(q > 0.0 && sigma2 > 0.0) {
            return Err(invalid("q and sigma2 must be positive"));
        }
        let (lo, hi) = ensembles::mp_bounds(q, sigma2);
        *lambda_min = lo;
        *lambda_max = hi;
        Ok(())
    })
}

/// Continuous part of the Marchenko-Pastur density.
#[no_mangle]
pub extern "C" fn rmt_mp_density(lambda: f64, q: f64, sigma2: f64) -> f64 {
    ensembles::mp_density(lambda, q, sigma2)
}

/// `sign(x) |x|^(1 + epsilon)`.
#[no_mangle]
pub extern "C" fn rmt_power_map_value(x: f64, epsilon: f64) -> f64 {
    powermap::power_map_value(x, epsilon)
}

/// Correlation of the epoch of length `epoch_len` ending at return index `tau`.
///
/// `returns` is `n x t`, row-major, one row per asset.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_epoch(
    returns: *const f64,
    n: usize,
    t: usize,
    tau: usize,
    epoch_len: usize,
    out: *mut *mut RmtCorrelation,
) -> RmtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 || t == 0 {
            return Err(invalid("n and t must be positive"));
        }
        let data = slice(returns, n * t, "returns")?;
        let r = ReturnMatrix::from_matrix(DMatrix::from_row_slice(n, t, data))?;
        let c = correlation::epoch_correlation(&r, tau, epoch_len)?;
        *out = Box::into_raw(Box::new(RmtCorrelation(c)));
        Ok(())
    })
}

/// Wraps an existing `n x n` row-major correlation matrix estimated from
/// `epoch_len` observations.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_from_matrix(
    values: *const f64,
    n: usize,
    epoch_len: usize,
    out: *mut *mut RmtCorrelation,
) -> RmtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let data = slice(values, n * n, "values")?;
        let c = CorrelationMatrix::new(
            DMatrix::from_row_slice(n, n, data),
            epoch_len.saturating_sub(1),
            epoch_len,
            labels(n),
        )?;
        *out = Box::into_raw(Box::new(RmtCorrelation(c)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_free(c: *mut RmtCorrelation) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Dimension `N`, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_dim(c: *const RmtCorrelation) -> usize {
    c.as_ref().map_or(0, |c| c.0.dim())
}

/// Copies the `N x N` matrix, row-major, into `buf`.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_values(
    c: *const RmtCorrelation,
    buf: *mut f64,
    len: usize,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        let n = c.0.dim();
        write_matrix(&c.0.c, out_slice(buf, len, n * n)?);
        Ok(())
    })
}

/// Eigenvalues in descending order.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_eigenvalues(
    c: *const RmtCorrelation,
    buf: *mut f64,
    len: usize,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        let pairs = modes::eigendecompose(&c.0)?;
        out_slice(buf, len, pairs.values.len())?[..pairs.values.len()]
            .copy_from_slice(&pairs.values);
        Ok(())
    })
}

/// Power-mapped copy of `c` as a new handle.
#[no_mangle]
pub unsafe extern "C" fn rmt_correlation_power_map(
    c: *const RmtCorrelation,
    epsilon: f64,
    out: *mut *mut RmtCorrelation,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mapped = c.0.power_mapped(epsilon)?;
        *out = Box::into_raw(Box::new(RmtCorrelation(mapped)));
        Ok(())
    })
}

/// Smallest emerging eigenvalue and negative-eigenvalue count after the power map.
#[no_mangle]
pub unsafe extern "C" fn rmt_emerging_spectrum(
    c: *const RmtCorrelation,
    epsilon: f64,
    lambda_min: *mut f64,
    neg_count: *mut usize,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        if lambda_min.is_null() || neg_count.is_null() {
            return Err(null("output pointer"));
        }
        let s = powermap::emerging_spectrum(&c.0, epsilon)?;
        *lambda_min = s.lambda_min;
        *neg_count = s.neg_count;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rmt_epoch_stats(
    c: *const RmtCorrelation,
    epsilon: f64,
    out: *mut RmtEpochStats,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = dynamics::epoch_stats(&c.0, epsilon)?;
        *out = RmtEpochStats {
            mean_c: s.mean_c,
            mean_abs_c: s.mean_abs_c,
            df: s.df,
            variance: s.variance,
            skewness: s.skewness.unwrap_or(f64::NAN),
            kurtosis: s.kurtosis.unwrap_or(f64::NAN),
            lambda_max: s.lambda_max,
            lambda_min_emerging: s.lambda_min_emerging.unwrap_or(f64::NAN),
            neg_count: s.neg_count.map_or(-1, |k| k as i64),
        };
        Ok(())
    })
}

/// Splits `c` into market, group and random components; `n_group` counts
/// the market mode plus the group modes.
#[no_mangle]
pub unsafe extern "C" fn rmt_modes_decompose(
    c: *const RmtCorrelation,
    n_group: usize,
    out: *mut *mut RmtModes,
) -> RmtStatus {
    guard(|| {
        let c = handle(c, "correlation")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = modes::decompose_modes(&c.0, n_group)?;
        *out = Box::into_raw(Box::new(RmtModes(d)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rmt_modes_free(m: *mut RmtModes) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Copies one `N x N` component, row-major, into `buf`.
#[no_mangle]
pub unsafe extern "C" fn rmt_modes_component(
    m: *const RmtModes,
    which: RmtComponent,
    buf: *mut f64,
    len: usize,
) -> RmtStatus {
    guard(|| {
        let m = handle(m, "modes")?;
        let mat = match which {
            RmtComponent::Market => &m.0.market,
            RmtComponent::Group => &m.0.group,
            RmtComponent::Random => &m.0.random,
        };
        write_matrix(mat, out_slice(buf, len, mat.len())?);
        Ok(())
    })
}

/// Eigenvalues above the Marchenko-Pastur edge for `q`, minus one, at least 1.
#[no_mangle]
pub unsafe extern "C" fn rmt_suggest_n_group(
    eigenvalues: *const f64,
    len: usize,
    q: f64,
    out: *mut usize,
) -> RmtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = slice(eigenvalues, len, "eigenvalues")?;
        *out = modes::suggest_n_group(values, q);
        Ok(())
    })
}

/// Classical MDS of an `n x n` row-major dissimilarity matrix into `k_dim`
/// dimensions. `coords` receives `n x k_dim` values, row-major; `*dims_used`
/// is the number of non-degenerate dimensions (the rest are zero).
#[no_mangle]
pub unsafe extern "C" fn rmt_classical_mds(
    dissimilarity: *const f64,
    n: usize,
    k_dim: usize,
    coords: *mut f64,
    len: usize,
    dims_used: *mut usize,
) -> RmtStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let d = DMatrix::from_row_slice(n, n, slice(dissimilarity, n * n, "dissimilarity")?);
        let emb = states::classical_mds(&d, k_dim)?;
        let out = out_slice(coords, len, n * k_dim)?;
        out[..n * k_dim].fill(0.0);
        for i in 0..n {
            for j in 0..emb.dims() {
                out[i * k_dim + j] = emb.coords[(i, j)];
            }
        }
        if !dims_used.is_null() {
            *dims_used = emb.dims();
        }
        Ok(())
    })
}

/// Row-stochastic `k x k` transition probabilities of a 0-based state path.
#[no_mangle]
pub unsafe extern "C" fn rmt_transition_matrix(
    path: *const usize,
    len: usize,
    k: usize,
    probs: *mut f64,
    probs_len: usize,
) -> RmtStatus {
    guard(|| {
        let path = slice(path, len, "path")?;
        let t = states::transition_matrix(path, k)?;
        let out = out_slice(probs, probs_len, k * k)?;
        for (a, row) in t.probs.iter().enumerate() {
            out[a * k..(a + 1) * k].copy_from_slice(row);
        }
        Ok(())
    })
}
