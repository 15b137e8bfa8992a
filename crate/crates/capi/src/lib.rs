//! C interface to the coopmec solvers.
//!
//! Objects are opaque heap handles created by `*_new`/`*_from_*` calls and
//! released with the matching `*_free`. Every fallible call returns a
//! [`CoopmecStatus`]; on failure a description is kept per thread and can
//! be copied out with [`coopmec_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coopmec::bench::{baseline_all_local, solve_scheme};
use coopmec::channel::{realize, ChannelRealization, Fading, Topology};
use coopmec::config::parse_experiment;
use coopmec::model::{BsCapacity, Case, Scheme, SolveReport, SystemConfig};
use coopmec::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopmecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    OutOfRange = 3,
    Infeasible = 4,
    CaseMismatch = 5,
    /// Bisection, barrier or objective evaluation failure.
    Numerical = 6,
    Parse = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopmecCase {
    /// Case I if the BS capacity is infinite, else Case II.
    Auto = 0,
    Abundant = 1,
    Finite = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopmecMethod {
    Optimized = 0,
    EqualBandwidth = 1,
    EqualTime = 2,
    AllOffload = 3,
    AllLocal = 4,
}

/// System parameters.
pub struct CoopmecConfig(SystemConfig);

/// Normalized channel gains of one realization.
pub struct CoopmecChannel(ChannelRealization);

/// Result of a solve.
pub struct CoopmecReport(SolveReport);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CoopmecStatus {
    match e {
        Error::InvalidConfig(_) => CoopmecStatus::InvalidConfig,
        Error::OutOfRange { .. } => CoopmecStatus::OutOfRange,
        Error::Infeasible(_) => CoopmecStatus::Infeasible,
        Error::CaseMismatch(_) => CoopmecStatus::CaseMismatch,
        Error::Parse(_) => CoopmecStatus::Parse,
        Error::Io(_) | Error::Csv(_) => CoopmecStatus::Io,
        Error::InfiniteEnergy { .. } | Error::ZeroDenominator | Error::Bisection(_) | Error::Convex(_) => {
            CoopmecStatus::Numerical
        }
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CoopmecStatus>) -> CoopmecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoopmecStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            CoopmecStatus::Panic
        }
    }
}

fn fail(e: Error) -> CoopmecStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> CoopmecStatus {
    set_error(format!("{what} is null"));
    CoopmecStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CoopmecStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn coopmec_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Reference parameters for `n_users` users.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_reference(n_users: usize, out: *mut *mut CoopmecConfig) -> CoopmecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n_users == 0 {
            return Err(fail(Error::OutOfRange {
                what: "n_users",
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            }));
        }
        put(out, CoopmecConfig(SystemConfig::reference(n_users)));
        Ok(())
    })
}

/// Parses a TOML config document (same keys as the command-line tool).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_from_toml(text: *const c_char, out: *mut *mut CoopmecConfig) -> CoopmecStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| fail(Error::Parse("config is not UTF-8".into())))?;
        let exp = parse_experiment(text).map_err(fail)?;
        put(out, CoopmecConfig(exp.system));
        Ok(())
    })
}

/// Sets the BS computation capacity in Hz; `INFINITY` selects Case I.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_set_bs_capacity(cfg: *mut CoopmecConfig, hz: f64) -> CoopmecStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.bs_capacity = if hz == f64::INFINITY {
            BsCapacity::Infinite
        } else if hz > 0.0 && hz.is_finite() {
            BsCapacity::Finite(hz)
        } else {
            return Err(fail(Error::OutOfRange {
                what: "bs capacity",
                value: hz,
                lo: 0.0,
                hi: f64::INFINITY,
            }));
        };
        Ok(())
    })
}

/// Sets the system bandwidth in Hz.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_set_bandwidth(cfg: *mut CoopmecConfig, hz: f64) -> CoopmecStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        if !(hz > 0.0 && hz.is_finite()) {
            return Err(fail(Error::OutOfRange {
                what: "bandwidth",
                value: hz,
                lo: 0.0,
                hi: f64::INFINITY,
            }));
        }
        cfg.0.bandwidth_hz = hz;
        Ok(())
    })
}

/// Number of users, or 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_n_users(cfg: *const CoopmecConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.n_users)
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopmec_config_free(cfg: *mut CoopmecConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Draws user distances uniformly in 5..50 m (relay at 30 m from the BS)
/// and one fading realization, both from `seed`.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coopmec_channel_sample(
    cfg: *const CoopmecConfig,
    seed: u64,
    fading: bool,
    out: *mut *mut CoopmecChannel,
) -> CoopmecStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let topo = Topology::uniform(cfg.n_users, 5.0, 50.0, 30.0, seed);
        let fading = if fading { Fading::On } else { Fading::Off };
        let chan = realize(&topo, cfg, seed, fading).map_err(fail)?;
        put(out, CoopmecChannel(chan));
        Ok(())
    })
}

/// Channel from normalized gains (Hz/W): `n` user-to-relay gains `h` and
/// the relay-to-BS gain `g`.
///
/// # Safety
/// `h` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn coopmec_channel_from_gains(
    h: *const f64,
    n: usize,
    g: f64,
    out: *mut *mut CoopmecChannel,
) -> CoopmecStatus {
    guard(|| {
        if h.is_null() {
            return Err(null("h"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let h = std::slice::from_raw_parts(h, n).to_vec();
        if let Some(&bad) = h.iter().chain([&g]).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(fail(Error::OutOfRange {
                what: "channel gain",
                value: bad,
                lo: 0.0,
                hi: f64::INFINITY,
            }));
        }
        put(out, CoopmecChannel(ChannelRealization { h, g, seed: 0 }));
        Ok(())
    })
}

/// # Safety
/// `chan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopmec_channel_free(chan: *mut CoopmecChannel) {
    if !chan.is_null() {
        drop(Box::from_raw(chan));
    }
}

/// Minimizes the average power with `method` under `case`.
///
/// # Safety
/// `cfg` and `chan` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn coopmec_solve(
    cfg: *const CoopmecConfig,
    chan: *const CoopmecChannel,
    case: CoopmecCase,
    method: CoopmecMethod,
    out: *mut *mut CoopmecReport,
) -> CoopmecStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.0;
        let chan = &deref(chan, "chan")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if chan.h.len() != cfg.n_users {
            return Err(fail(Error::Parse(format!(
                "channel has {} users, config has {}",
                chan.h.len(),
                cfg.n_users
            ))));
        }
        let case = match case {
            CoopmecCase::Auto => cfg.case(),
            CoopmecCase::Abundant => Case::Abundant,
            CoopmecCase::Finite => Case::Finite,
        };
        let scheme = match method {
            CoopmecMethod::Optimized => Scheme::Optimized,
            CoopmecMethod::EqualBandwidth => Scheme::EqualBandwidth,
            CoopmecMethod::EqualTime => Scheme::EqualTime,
            CoopmecMethod::AllOffload => Scheme::AllOffload,
            CoopmecMethod::AllLocal => {
                let rep = baseline_all_local(cfg, chan).map_err(fail)?;
                put(out, CoopmecReport(rep));
                return Ok(());
            }
        };
        let rep = solve_scheme(cfg, chan, case, scheme).map_err(fail)?;
        put(out, CoopmecReport(rep));
        Ok(())
    })
}

/// Average power in W, or NaN for a null handle.
///
/// # Safety
/// `rep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_avg_power(rep: *const CoopmecReport) -> f64 {
    rep.as_ref().map_or(f64::NAN, |r| r.0.avg_power_w)
}

/// Writes `(t1, t2, t3, t4)` in seconds to `out[0..4]`.
///
/// # Safety
/// `rep` must be a live handle; `out` must have room for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_times(rep: *const CoopmecReport, out: *mut f64) -> CoopmecStatus {
    guard(|| {
        let s = &deref(rep, "rep")?.0.schedule;
        if out.is_null() {
            return Err(null("out"));
        }
        for (i, v) in [s.t1_s, s.t2_s, s.t3_s, s.t4_s].into_iter().enumerate() {
            *out.add(i) = v;
        }
        Ok(())
    })
}

unsafe fn copy_users(
    rep: *const CoopmecReport,
    out: *mut f64,
    len: usize,
    pick: fn(&SolveReport) -> &[f64],
) -> CoopmecStatus {
    guard(|| {
        let v = pick(&deref(rep, "rep")?.0);
        if out.is_null() {
            return Err(null("out"));
        }
        if len < v.len() {
            set_error(format!("buffer holds {len} values, need {}", v.len()));
            return Err(CoopmecStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// Writes the offloading ratios to `out[0..N]`.
///
/// # Safety
/// `rep` must be a live handle; `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_ratios(rep: *const CoopmecReport, out: *mut f64, len: usize) -> CoopmecStatus {
    copy_users(rep, out, len, |r| &r.schedule.r)
}

/// Writes the bandwidth shares (Hz) to `out[0..N]`.
///
/// # Safety
/// `rep` must be a live handle; `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_bandwidths(
    rep: *const CoopmecReport,
    out: *mut f64,
    len: usize,
) -> CoopmecStatus {
    copy_users(rep, out, len, |r| &r.schedule.b)
}

/// Number of outer ratio updates and total inner iterations.
///
/// # Safety
/// `rep` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_iterations(
    rep: *const CoopmecReport,
    outer: *mut usize,
    inner: *mut usize,
) -> CoopmecStatus {
    guard(|| {
        let r = &deref(rep, "rep")?.0;
        if outer.is_null() || inner.is_null() {
            return Err(null("out"));
        }
        *outer = r.dinkelbach_trace.len();
        *inner = r.inner_iterations();
        Ok(())
    })
}

/// Optimality residual of the final iterate, or NaN for a null handle.
///
/// # Safety
/// `rep` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_kkt_residual(rep: *const CoopmecReport) -> f64 {
    rep.as_ref().map_or(f64::NAN, |r| r.0.kkt_residual)
}

/// # Safety
/// `rep` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopmec_report_free(rep: *mut CoopmecReport) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}
