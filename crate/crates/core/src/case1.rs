//! Abundant BS capacity: a fractional-programming outer loop over the
//! average power `theta`, and block coordinate descent inside it that
//! alternates between
//!
//! * the offloading-ratio/bandwidth block, solved in closed form from the
//!   multipliers `(lambda, epsilon)` of `sum b <= B` and `sum c r <= z`,
//!   with `epsilon` found by bisection for fixed `lambda` and `lambda` by an
//!   outer bisection on `sum b = B`;
//! * the time block `(t1, t2, t3)`, a small convex program handed to
//!   [`crate::convex`].

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelRealization;
use crate::convex::{self, BarrierOptions, Embedded, LinearConstraint, SmoothObjective, SmoothProgram};
use crate::error::{Error, Result};
use crate::model::{Case, InnerRun, RatioStep, Schedule, Scheme, SolveReport, SystemConfig};
use crate::objective::{self, tx_kernel_derivatives};
use crate::oracle;

const BISECT_STEPS: usize = 200;
const MAX_DOUBLINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Times {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl Times {
    pub fn of(s: &Schedule) -> Self {
        Times {
            t1: s.t1_s,
            t2: s.t2_s,
            t3: s.t3_s,
        }
    }
}

/// Multipliers of the bandwidth step and the primal point they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint {
    /// Multiplier of `sum b <= B`.
    pub lambda: f64,
    /// Multiplier of `sum c r <= z`.
    pub epsilon: f64,
    pub r_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub z_star: f64,
    /// `f^{-1}(lambda h_n)`: the optimal payload-to-bandwidth ratio.
    pub alpha: Vec<f64>,
    /// Users with a positive offloading ratio.
    pub active_set: Vec<bool>,
    /// Every user computes locally; the bandwidth constraint is slack and
    /// `lambda` is reported as zero.
    pub all_local: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcdState {
    pub schedule: Schedule,
    pub theta: f64,
    /// `N(x) - theta D(x)` at `schedule`.
    pub objective_value: f64,
    pub iter: usize,
}

#[derive(Clone, Debug)]
pub struct BcdRun {
    pub state: BcdState,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Multipliers of the last bandwidth step, when the scheme has them.
    pub dual: Option<DualPoint>,
}

#[derive(Clone, Debug)]
pub struct Case1Options {
    pub bcd_max_iter: usize,
    pub bcd_rel_tol: f64,
    pub outer_max_iter: usize,
    pub outer_tol: f64,
    pub barrier_tol: f64,
}

impl Default for Case1Options {
    fn default() -> Self {
        Case1Options {
            bcd_max_iter: 50,
            bcd_rel_tol: 1e-6,
            outer_max_iter: 30,
            outer_tol: 1e-6,
            barrier_tol: 1e-10,
        }
    }
}

/// `g(v) = (v - 1) e^v + 1`, by series near zero where the closed form
/// cancels.
fn ratio_kernel(v: f64) -> f64 {
    if v < 0.5 {
        let mut term = v; // v^k / k! for k = 1
        let mut sum = 0.0;
        for k in 2..30 {
            term *= v / k as f64;
            let add = term * (k - 1) as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        v * v.exp() - v.exp_m1()
    }
}

/// `f(x) = (t1 x - t2) e^{t1 x / t2} + t2`, the bandwidth price of a
/// payload-to-bandwidth ratio `x`.
pub fn f_eval(t1: f64, t2: f64, x: f64) -> f64 {
    t2 * ratio_kernel(t1 * x / t2)
}

/// Inverse of [`f_eval`] on `x >= 0`.
pub fn f_inverse(t1: f64, t2: f64, y: f64) -> Result<f64> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::OutOfRange {
            what: "f_inverse argument",
            value: y,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    // f(x) ~ t1^2 x^2 / (2 t2) near zero
    let mut hi = ((2.0 * t2 * y).sqrt() / t1).max(f64::MIN_POSITIVE);
    let mut lo = 0.0;
    let mut n = 0;
    while f_eval(t1, t2, hi) < y {
        lo = hi;
        hi *= 2.0;
        n += 1;
        if n > 2000 {
            return Err(Error::Bisection("f_inverse bracket".into()));
        }
    }
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f_eval(t1, t2, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Optimal auxiliary payload rate for a given `epsilon`, clamped at zero.
fn z_of_epsilon(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, eps: f64) -> f64 {
    let z = t.t3 * cfg.bandwidth_hz / t.t1 * (eps * chan.g / t.t1).ln();
    z.max(0.0)
}

/// Optimal ratio of user `n` for a known transmit exponent factor
/// `e^{t1 alpha / t2}`.
fn ratio_given(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, n: usize, growth: f64, eps: f64) -> f64 {
    let c = cfg.rate_nat_per_s[n];
    let radicand = (t.t1 * c / chan.h[n] * growth + eps * c) / (3.0 * cfg.local_power(n) * t.t1);
    (1.0 - radicand.sqrt()).max(0.0)
}

/// Closed-form minimizer of the partial Lagrangian for given multipliers.
pub fn primal_from_duals(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: Times,
    lambda: f64,
    epsilon: f64,
) -> Result<DualPoint> {
    if !(lambda >= 0.0) || !(epsilon >= 0.0) {
        return Err(Error::OutOfRange {
            what: "multiplier",
            value: lambda.min(epsilon),
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let alpha = (0..cfg.n_users)
        .map(|n| f_inverse(t.t1, t.t2, lambda * chan.h[n]))
        .collect::<Result<Vec<_>>>()?;
    let dp = point_at(cfg, chan, t, lambda, &alpha, epsilon);
    if lambda == 0.0 && dp.active_set.iter().any(|&a| a) {
        return Err(Error::Bisection(
            "lambda = 0 leaves the bandwidth of active users undefined".into(),
        ));
    }
    Ok(dp)
}

fn point_at(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: Times,
    lambda: f64,
    alpha: &[f64],
    eps: f64,
) -> DualPoint {
    let n = cfg.n_users;
    let mut r_star = vec![0.0; n];
    let mut b_star = vec![0.0; n];
    let mut active_set = vec![false; n];
    for i in 0..n {
        let growth = (t.t1 * alpha[i] / t.t2).exp();
        let r = ratio_given(cfg, chan, t, i, growth, eps);
        debug_assert!(r < 1.0);
        if r > 0.0 && alpha[i] > 0.0 {
            r_star[i] = r;
            b_star[i] = cfg.rate_nat_per_s[i] * r / alpha[i];
            active_set[i] = true;
        } else if r > 0.0 {
            // lambda = 0: flagged by the caller
            r_star[i] = r;
            b_star[i] = f64::INFINITY;
            active_set[i] = true;
        }
    }
    DualPoint {
        lambda,
        epsilon: eps,
        r_star,
        b_star,
        z_star: z_of_epsilon(cfg, chan, t, eps),
        alpha: alpha.to_vec(),
        active_set,
        all_local: false,
    }
}

fn payload(cfg: &SystemConfig, r: &[f64]) -> f64 {
    r.iter().zip(&cfg.rate_nat_per_s).map(|(r, c)| r * c).sum()
}

/// Finds `epsilon` with `sum c r*(epsilon) = z*(epsilon)`. `eval` maps an
/// `epsilon` to the ratios it induces; they must be nonincreasing in it.
fn epsilon_crossing<T, F>(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, eps_hi: f64, eval: F) -> (f64, T)
where
    F: Fn(f64) -> (f64, T),
{
    let mut lo = t.t1 / chan.g;
    let (p_lo, at_lo) = eval(lo);
    if p_lo <= 0.0 || eps_hi <= lo {
        return (lo, at_lo);
    }
    let mut hi = eps_hi;
    let mut best = (f64::INFINITY, lo, at_lo);
    for _ in 0..BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, at) = eval(mid);
        let z = z_of_epsilon(cfg, chan, t, mid);
        let gap = p - z;
        let done = gap.abs() <= 1e-9 * z.max(1.0);
        if gap.abs() < best.0 {
            best = (gap.abs(), mid, at);
        }
        if done {
            break;
        }
        if gap > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (best.1, best.2)
}

/// Upper end of the epsilon bracket: every user is inactive above it.
fn epsilon_ceiling(cfg: &SystemConfig, t: Times) -> f64 {
    (0..cfg.n_users)
        .map(|n| 3.0 * cfg.local_power(n) * t.t1 / cfg.rate_nat_per_s[n])
        .fold(0.0, f64::max)
        * (1.0 + 1e-12)
}

fn inner_with_alpha(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, lambda: f64, alpha: &[f64]) -> DualPoint {
    let (_, dp) = epsilon_crossing(cfg, chan, t, epsilon_ceiling(cfg, t), |eps| {
        let dp = point_at(cfg, chan, t, lambda, alpha, eps);
        (payload(cfg, &dp.r_star), dp)
    });
    dp
}

/// For fixed `lambda`, bisects `epsilon` until the payload constraint
/// holds with equality.
pub fn inner_bisect_epsilon(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, lambda: f64) -> Result<DualPoint> {
    if !(lambda > 0.0) {
        return Err(Error::OutOfRange {
            what: "lambda",
            value: lambda,
            lo: f64::MIN_POSITIVE,
            hi: f64::INFINITY,
        });
    }
    let alpha = (0..cfg.n_users)
        .map(|n| f_inverse(t.t1, t.t2, lambda * chan.h[n]))
        .collect::<Result<Vec<_>>>()?;
    let mut dp = inner_with_alpha(cfg, chan, t, lambda, &alpha);
    if dp.active_set.iter().all(|a| !a) {
        dp.epsilon = t.t1 / chan.g;
        dp.z_star = 0.0;
    }
    Ok(dp)
}

fn all_local_point(cfg: &SystemConfig, chan: &ChannelRealization, t: Times) -> DualPoint {
    let n = cfg.n_users;
    DualPoint {
        lambda: 0.0,
        epsilon: t.t1 / chan.g,
        r_star: vec![0.0; n],
        b_star: vec![0.0; n],
        z_star: 0.0,
        alpha: vec![0.0; n],
        active_set: vec![false; n],
        all_local: true,
    }
}

/// Bisects `lambda` until the whole band is used, running the epsilon
/// search at every probe.
pub fn outer_bisect_lambda(cfg: &SystemConfig, chan: &ChannelRealization, t: Times) -> Result<DualPoint> {
    let n = cfg.n_users;
    let big_b = cfg.bandwidth_hz;

    // lambda -> 0+: alpha -> 0. If nobody offloads even then, nobody ever does.
    let zero = inner_with_alpha(cfg, chan, t, 0.0, &vec![0.0; n]);
    if zero.active_set.iter().all(|a| !a) {
        return Ok(all_local_point(cfg, chan, t));
    }

    let used = |lambda: f64| -> Result<(f64, DualPoint)> {
        let dp = inner_bisect_epsilon(cfg, chan, t, lambda)?;
        Ok((dp.b_star.iter().sum(), dp))
    };

    let mean_rate = cfg.rate_nat_per_s.iter().sum::<f64>() / n as f64;
    let alpha_ref = 0.5 * mean_rate * n as f64 / big_b;
    let mut h_sorted = chan.h.clone();
    h_sorted.sort_by(f64::total_cmp);
    let lambda_ref = f_eval(t.t1, t.t2, alpha_ref) / h_sorted[n / 2];

    let (mut lo, mut hi);
    let mut hi_point;
    let (s_ref, p_ref) = used(lambda_ref)?;
    if s_ref > big_b {
        // the right lambda can be many decades away; widen the step each time
        lo = lambda_ref;
        hi = 2.0 * lambda_ref;
        let mut step = 2.0;
        let mut k = 0;
        loop {
            let (s, p) = used(hi)?;
            if s <= big_b {
                hi_point = (s, p);
                break;
            }
            lo = hi;
            step *= 2.0;
            hi *= step;
            k += 1;
            if k > MAX_DOUBLINGS {
                return Err(Error::Bisection("lambda bracket expansion (up)".into()));
            }
        }
    } else {
        hi = lambda_ref;
        hi_point = (s_ref, p_ref);
        lo = 0.5 * lambda_ref;
        let mut step = 2.0;
        let mut k = 0;
        loop {
            let (s, p) = used(lo)?;
            if s > big_b {
                break;
            }
            hi = lo;
            hi_point = (s, p);
            step *= 2.0;
            lo /= step;
            k += 1;
            if k > MAX_DOUBLINGS {
                return Err(Error::Bisection("lambda bracket expansion (down)".into()));
            }
        }
    }

    for _ in 0..BISECT_STEPS {
        if big_b - hi_point.0 <= 1e-9 * big_b {
            break;
        }
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let (s, p) = used(mid)?;
        if s > big_b {
            lo = mid;
        } else {
            hi = mid;
            hi_point = (s, p);
        }
    }
    Ok(hi_point.1)
}

/// Ratios for fixed bandwidths: per-user stationarity in `r` is monotone,
/// solved by bisection, inside the same epsilon crossing as the free case.
fn ratios_for_fixed_bandwidth(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, b: &[f64]) -> (Vec<f64>, f64) {
    let n = cfg.n_users;
    let user_ratio = |i: usize, eps: f64| -> f64 {
        if !(b[i] > 0.0) {
            return 0.0;
        }
        let c = cfg.rate_nat_per_s[i];
        let k = 3.0 * cfg.local_power(i) * t.t1;
        let slope = |r: f64| -> f64 {
            t.t1 * c / chan.h[i] * (t.t1 * c * r / (t.t2 * b[i])).exp() - k * (1.0 - r) * (1.0 - r) + eps * c
        };
        if slope(0.0) >= 0.0 {
            return 0.0;
        }
        if slope(1.0) <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BISECT_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let (eps, r) = epsilon_crossing(cfg, chan, t, epsilon_ceiling(cfg, t), |eps| {
        let r: Vec<f64> = (0..n).map(|i| user_ratio(i, eps)).collect();
        (payload(cfg, &r), r)
    });
    let gap = (payload(cfg, &r) - z_of_epsilon(cfg, chan, t, eps)).abs();
    let scale = cfg.rate_nat_per_s.iter().sum::<f64>();
    (r, gap / scale)
}

/// Bandwidths for full offloading: `b_n = c_n / f^{-1}(lambda h_n)` with
/// `lambda` bisected onto `sum b = B`.
fn bandwidth_for_full_offload(cfg: &SystemConfig, chan: &ChannelRealization, t: Times) -> Result<(Vec<f64>, f64)> {
    let n = cfg.n_users;
    let big_b = cfg.bandwidth_hz;
    let alloc = |lambda: f64| -> Result<Vec<f64>> {
        (0..n)
            .map(|i| Ok(cfg.rate_nat_per_s[i] / f_inverse(t.t1, t.t2, lambda * chan.h[i])?))
            .collect()
    };
    let mut hi = 1e-12;
    let mut k = 0;
    while alloc(hi)?.iter().sum::<f64>() > big_b {
        hi *= 2.0;
        k += 1;
        if k > 8 * MAX_DOUBLINGS {
            return Err(Error::Bisection("full-offload lambda bracket".into()));
        }
    }
    let mut lo = hi / 2.0;
    k = 0;
    while alloc(lo)?.iter().sum::<f64>() <= big_b {
        hi = lo;
        lo /= 2.0;
        k += 1;
        if k > 8 * MAX_DOUBLINGS {
            return Err(Error::Bisection("full-offload lambda bracket".into()));
        }
    }
    let mut b = alloc(hi)?;
    for _ in 0..BISECT_STEPS {
        if big_b - b.iter().sum::<f64>() <= 1e-9 * big_b {
            break;
        }
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let cand = alloc(mid)?;
        if cand.iter().sum::<f64>() > big_b {
            lo = mid;
        } else {
            hi = mid;
            b = cand;
        }
    }
    let resid = (big_b - b.iter().sum::<f64>()).abs() / big_b;
    Ok((b, resid))
}

/// `N(x) - theta D(x)` with the Case I latency.
pub fn parametric_value(cfg: &SystemConfig, chan: &ChannelRealization, theta: f64, s: &Schedule) -> Result<f64> {
    Ok(objective::numerator(cfg, chan, s)? - theta * objective::denominator(s, Case::Abundant))
}

/// Result of one ratio/bandwidth block update.
struct RbStep {
    r: Vec<f64>,
    b: Vec<f64>,
    dual: Option<DualPoint>,
    residual: f64,
}

fn rb_block(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: Times,
    scheme: Scheme,
    current_b: &[f64],
) -> Result<RbStep> {
    match scheme {
        Scheme::Optimized | Scheme::EqualTime => {
            let dp = outer_bisect_lambda(cfg, chan, t)?;
            let residual = oracle::kkt_residual(cfg, chan, t, &dp).max_violation();
            Ok(RbStep {
                r: dp.r_star.clone(),
                b: dp.b_star.clone(),
                dual: Some(dp),
                residual,
            })
        }
        Scheme::EqualBandwidth => {
            let (r, residual) = ratios_for_fixed_bandwidth(cfg, chan, t, current_b);
            Ok(RbStep {
                r,
                b: current_b.to_vec(),
                dual: None,
                residual,
            })
        }
        Scheme::AllOffload => {
            let (b, residual) = bandwidth_for_full_offload(cfg, chan, t)?;
            Ok(RbStep {
                r: vec![1.0; cfg.n_users],
                b,
                dual: None,
                residual,
            })
        }
    }
}

/// Replaces `(r, b)` with the block optimum for the current times; the
/// objective never increases.
pub fn optimize_rb(cfg: &SystemConfig, chan: &ChannelRealization, state: &BcdState) -> Result<BcdState> {
    optimize_rb_scheme(cfg, chan, state, Scheme::Optimized).map(|(s, _, _)| s)
}

fn optimize_rb_scheme(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    state: &BcdState,
    scheme: Scheme,
) -> Result<(BcdState, Option<DualPoint>, f64)> {
    let t = Times::of(&state.schedule);
    let step = rb_block(cfg, chan, t, scheme, &state.schedule.b)?;
    let mut cand = state.schedule.clone();
    cand.r = step.r;
    cand.b = step.b;
    let v = parametric_value(cfg, chan, state.theta, &cand)?;
    let next = if v <= state.objective_value {
        BcdState {
            schedule: cand,
            theta: state.theta,
            objective_value: v,
            iter: state.iter,
        }
    } else {
        state.clone()
    };
    Ok((next, step.dual, step.residual))
}

/// Objective of the time block for fixed `(r, b)`: perspective-exponential
/// transmit terms plus terms linear in the times.
struct TimeObjective {
    /// `(weight, slope)` per transmitting user: `w F(k t1, t2)`.
    users: Vec<(f64, f64)>,
    /// `(weight, slope)` of the relay link: `w F(k t1, t3)`.
    coop: (f64, f64),
    /// Coefficient of `t1` from local computing.
    local: f64,
    constant: f64,
    theta: f64,
}

impl TimeObjective {
    fn new(cfg: &SystemConfig, chan: &ChannelRealization, theta: f64, r: &[f64], b: &[f64]) -> Self {
        let mut users = Vec::new();
        let mut local = 0.0;
        for i in 0..cfg.n_users {
            let keep = 1.0 - r[i];
            local += cfg.local_power(i) * keep * keep * keep;
            if r[i] > 0.0 {
                users.push((b[i] / chan.h[i], cfg.rate_nat_per_s[i] * r[i] / b[i]));
            }
        }
        let big_b = cfg.bandwidth_hz;
        TimeObjective {
            users,
            coop: (big_b / chan.g, payload(cfg, r) / big_b),
            local,
            constant: cfg.total_overhead(),
            theta,
        }
    }
}

impl SmoothObjective for TimeObjective {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (t1, t2, t3) = (x[0], x[1], x[2]);
        if !(t2 > 0.0 && t3 > 0.0) {
            return f64::INFINITY;
        }
        let mut v = self.local * t1 + self.constant - self.theta * (t1 + t2 + t3);
        for &(w, k) in &self.users {
            v += w * t2 * (k * t1 / t2).exp_m1();
        }
        v + self.coop.0 * t3 * (self.coop.1 * t1 / t3).exp_m1()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let (t1, t2, t3) = (x[0], x[1], x[2]);
        g[0] = self.local - self.theta;
        g[1] = -self.theta;
        g[2] = -self.theta;
        for &(w, k) in &self.users {
            let (_, d, _) = tx_kernel_derivatives(k * t1, t2);
            g[0] += w * k * d[0];
            g[1] += w * d[1];
        }
        let (w, k) = self.coop;
        let (_, d, _) = tx_kernel_derivatives(k * t1, t3);
        g[0] += w * k * d[0];
        g[2] += w * d[1];
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (t1, t2, t3) = (x[0], x[1], x[2]);
        let mut h = DMatrix::zeros(3, 3);
        let mut add = |w: f64, k: f64, s: f64, j: usize| {
            let (_, _, dd) = tx_kernel_derivatives(k * t1, s);
            h[(0, 0)] += w * k * k * dd[0];
            h[(0, j)] += w * k * dd[1];
            h[(j, 0)] += w * k * dd[1];
            h[(j, j)] += w * dd[2];
        };
        for &(w, k) in &self.users {
            add(w, k, t2, 1);
        }
        add(self.coop.0, self.coop.1, t3, 2);
        Some(h)
    }
}

/// Solves the time block over `(t1, t2, t3)` for fixed `(r, b)`.
pub fn optimize_times(cfg: &SystemConfig, chan: &ChannelRealization, state: &BcdState) -> Result<BcdState> {
    optimize_times_scheme(cfg, chan, state, Scheme::Optimized, 1e-10)
}

fn optimize_times_scheme(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    state: &BcdState,
    scheme: Scheme,
    tol: f64,
) -> Result<BcdState> {
    let s = &state.schedule;
    let obj = TimeObjective::new(cfg, chan, state.theta, &s.r, &s.b);
    let (tl, tu) = (cfg.t_min_s, cfg.t_max_s);
    let fixed_t1 = tu - tl <= 1e-12 * tu;
    let tie = scheme == Scheme::EqualTime;

    // reduced coordinates: [t1]? , t2, [t3]?
    let mut cols: Vec<[f64; 3]> = Vec::new();
    let mut offset = [0.0; 3];
    if fixed_t1 {
        offset[0] = tl;
    } else {
        cols.push([1.0, 0.0, 0.0]);
    }
    if tie {
        cols.push([0.0, 1.0, 1.0]);
    } else {
        cols.push([0.0, 1.0, 0.0]);
        cols.push([0.0, 0.0, 1.0]);
    }
    let jac = DMatrix::from_fn(3, cols.len(), |i, j| cols[j][i]);
    let emb = Embedded::new(&obj, jac, DVector::from_column_slice(&offset));

    let rows = vec![
        LinearConstraint::new(vec![-1.0, 0.0, 0.0], -tl),
        LinearConstraint::new(vec![1.0, 0.0, 0.0], tu),
        LinearConstraint::new(vec![-1.0, 1.0, 1.0], 0.0),
        LinearConstraint::new(vec![0.0, -1.0, 0.0], 0.0),
        LinearConstraint::new(vec![0.0, 0.0, -1.0], 0.0),
    ];
    let reduced_rows = emb.pull_back(&rows)?;

    // strictly interior start near the current times
    let t1 = if fixed_t1 {
        tl
    } else {
        let margin = 1e-6 * (tu - tl);
        s.t1_s.clamp(tl + margin, tu - margin)
    };
    let busy = (s.t2_s + s.t3_s).min(t1 * (1.0 - 1e-6));
    let (t2, t3) = if tie {
        (0.5 * busy, 0.5 * busy)
    } else {
        let share = if s.t2_s + s.t3_s > 0.0 {
            s.t2_s / (s.t2_s + s.t3_s)
        } else {
            0.5
        };
        let share = share.clamp(1e-6, 1.0 - 1e-6);
        (busy * share, busy * (1.0 - share))
    };
    let (t2, t3) = if t2 > 0.0 && t3 > 0.0 {
        (t2, t3)
    } else {
        (0.25 * t1, 0.25 * t1)
    };
    let mut z0 = Vec::new();
    if !fixed_t1 {
        z0.push(t1);
    }
    z0.push(t2);
    if !tie {
        z0.push(t3);
    }

    let mut prog = SmoothProgram::new(&emb, z0);
    prog.constraints = reduced_rows;
    let out = match convex::minimize_with(&prog, &BarrierOptions::with_tol(tol)) {
        Ok(o) => o,
        Err(convex::ConvexError::MaxIterations { best }) => *best,
        Err(e) => return Err(e.into()),
    };
    let x = emb.lift(&out.x_star);
    let mut cand = s.clone();
    cand.t1_s = x[0];
    cand.t2_s = x[1];
    cand.t3_s = x[2];
    cand.t4_s = 0.0;
    let v = parametric_value(cfg, chan, state.theta, &cand)?;
    if v <= state.objective_value {
        Ok(BcdState {
            schedule: cand,
            theta: state.theta,
            objective_value: v,
            iter: state.iter,
        })
    } else {
        Ok(state.clone())
    }
}

/// Alternates the two blocks from `start` for a fixed `theta`.
pub fn bcd_solve(cfg: &SystemConfig, chan: &ChannelRealization, theta: f64, start: &Schedule) -> Result<BcdRun> {
    bcd_solve_with(cfg, chan, theta, start, Scheme::Optimized, &Case1Options::default())
}

pub fn bcd_solve_with(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    start: &Schedule,
    scheme: Scheme,
    opts: &Case1Options,
) -> Result<BcdRun> {
    let v0 = parametric_value(cfg, chan, theta, start)?;
    let mut state = BcdState {
        schedule: start.clone(),
        theta,
        objective_value: v0,
        iter: 0,
    };
    let mut trace = vec![v0];
    let mut dual = None;
    let mut converged = false;
    for it in 1..=opts.bcd_max_iter {
        let prev = state.objective_value;
        let (next, dp, _) = optimize_rb_scheme(cfg, chan, &state, scheme)?;
        dual = dp.or(dual);
        state = optimize_times_scheme(cfg, chan, &next, scheme, opts.barrier_tol)?;
        state.iter = it;
        trace.push(state.objective_value);
        let scale = objective::numerator(cfg, chan, &state.schedule)?.max(f64::MIN_POSITIVE);
        if prev - state.objective_value <= opts.bcd_rel_tol * scale {
            converged = true;
            break;
        }
    }
    Ok(BcdRun {
        state,
        trace,
        converged,
        dual,
    })
}

fn start_schedule(cfg: &SystemConfig, scheme: Scheme) -> Schedule {
    let n = cfg.n_users;
    let t1 = cfg.t_max_s;
    let r = if scheme == Scheme::AllOffload { 1.0 } else { 0.5 };
    Schedule {
        t1_s: t1,
        t2_s: 0.25 * t1,
        t3_s: 0.25 * t1,
        t4_s: 0.0,
        r: vec![r; n],
        b: vec![cfg.bandwidth_hz / n as f64; n],
    }
}

/// Average power of the all-local schedule at the shortest slot with the
/// two transmit phases at a quarter slot each: an upper bound on the optimum.
pub fn initial_theta(cfg: &SystemConfig) -> f64 {
    let tl = cfg.t_min_s;
    let local: f64 = (0..cfg.n_users).map(|n| cfg.local_power(n)).sum();
    (local * tl + cfg.total_overhead()) / (1.5 * tl)
}

pub fn solve_case1(cfg: &SystemConfig, chan: &ChannelRealization) -> Result<SolveReport> {
    solve_case1_with(cfg, chan, Scheme::Optimized, &Case1Options::default())
}

pub fn solve_case1_with(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    scheme: Scheme,
    opts: &Case1Options,
) -> Result<SolveReport> {
    if cfg.case() != Case::Abundant {
        return Err(Error::CaseMismatch("case 1 needs an infinite BS capacity"));
    }
    let clock = Instant::now();
    let mut x = start_schedule(cfg, scheme);
    let mut theta = match scheme {
        Scheme::Optimized | Scheme::EqualTime => initial_theta(cfg),
        _ => objective::avg_power(cfg, chan, &x, Case::Abundant)?,
    };

    let mut ratio_trace = Vec::new();
    let mut inner_runs = Vec::new();
    let mut converged = false;
    for _ in 0..opts.outer_max_iter {
        let run = bcd_solve_with(cfg, chan, theta, &x, scheme, opts)?;
        inner_runs.push(InnerRun {
            iterations: run.state.iter,
            converged: run.converged,
            trace: run.trace,
        });
        x = run.state.schedule;
        let num = objective::numerator(cfg, chan, &x)?;
        let den = objective::denominator(&x, Case::Abundant);
        let residual = num - theta * den;
        ratio_trace.push(RatioStep { theta, residual });
        if residual.abs() <= opts.outer_tol * den {
            converged = true;
            break;
        }
        theta = num / den;
    }

    // one more bandwidth step at the final times gives the reported
    // multipliers; it is the block minimizer up to the bisection
    // tolerance, so it may lose a few ulps against the BCD iterate
    let t = Times::of(&x);
    let step = rb_block(cfg, chan, t, scheme, &x.b)?;
    let mut cand = x.clone();
    cand.r = step.r;
    cand.b = step.b;
    let before = objective::avg_power(cfg, chan, &x, Case::Abundant)?;
    let after = objective::avg_power(cfg, chan, &cand, Case::Abundant)?;
    let (mut schedule, avg, dual) = if after <= before * (1.0 + 1e-10) {
        (cand, after, step.dual)
    } else {
        (x, before, None)
    };
    let kkt = step.residual;
    schedule.release_idle_bandwidth();
    if avg < theta {
        ratio_trace.push(RatioStep {
            theta: avg,
            residual: 0.0,
        });
    }
    Ok(SolveReport {
        case: Case::Abundant,
        schedule,
        avg_power_w: avg,
        dinkelbach_trace: ratio_trace,
        inner_runs,
        kkt_residual: kkt,
        runtime_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged,
        dual,
    })
}

/// Ratio/bandwidth-block energy at fixed times as a generic convex program, solved
/// directly with the barrier method over `(r, b / B)`. Used to check the
/// dual machinery.
struct RbPrimal<'a> {
    cfg: &'a SystemConfig,
    chan: &'a ChannelRealization,
    t: Times,
    theta: f64,
}

impl RbPrimal<'_> {
    fn n(&self) -> usize {
        self.cfg.n_users
    }
}

impl SmoothObjective for RbPrimal<'_> {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (cfg, t, n) = (self.cfg, self.t, self.n());
        let big_b = cfg.bandwidth_hz;
        let mut v = cfg.total_overhead() - self.theta * (t.t1 + t.t2 + t.t3);
        let mut pay = 0.0;
        for i in 0..n {
            let (r, beta) = (x[i], x[n + i]);
            if !(beta > 0.0) || !(0.0..=1.0).contains(&r) {
                return f64::INFINITY;
            }
            let c = cfg.rate_nat_per_s[i];
            let a = t.t1 * c * r / (t.t2 * big_b);
            v += t.t2 * big_b / self.chan.h[i] * beta * (a / beta).exp_m1();
            v += cfg.local_power(i) * t.t1 * (1.0 - r).powi(3);
            pay += c * r;
        }
        v + t.t3 * big_b / self.chan.g * (t.t1 * pay / (t.t3 * big_b)).exp_m1()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let (cfg, t, n) = (self.cfg, self.t, self.n());
        let big_b = cfg.bandwidth_hz;
        let pay = payload(cfg, &x[..n]);
        let coop = t.t1 / self.chan.g * (t.t1 * pay / (t.t3 * big_b)).exp();
        for i in 0..n {
            let (r, beta) = (x[i], x[n + i]);
            let c = cfg.rate_nat_per_s[i];
            let w = t.t2 * big_b / self.chan.h[i];
            let k = t.t1 * c / (t.t2 * big_b);
            let (_, d, _) = tx_kernel_derivatives(k * r, beta);
            g[i] = w * k * d[0] - 3.0 * cfg.local_power(i) * t.t1 * (1.0 - r).powi(2) + coop * c;
            g[n + i] = w * d[1];
        }
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let (cfg, t, n) = (self.cfg, self.t, self.n());
        let big_b = cfg.bandwidth_hz;
        let pay = payload(cfg, &x[..n]);
        let coop2 = t.t1 * t.t1 / (self.chan.g * t.t3 * big_b) * (t.t1 * pay / (t.t3 * big_b)).exp();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let (r, beta) = (x[i], x[n + i]);
            let c = cfg.rate_nat_per_s[i];
            let w = t.t2 * big_b / self.chan.h[i];
            let k = t.t1 * c / (t.t2 * big_b);
            let (_, _, dd) = tx_kernel_derivatives(k * r, beta);
            h[(i, i)] += w * k * k * dd[0] + 6.0 * cfg.local_power(i) * t.t1 * (1.0 - r);
            h[(i, n + i)] += w * k * dd[1];
            h[(n + i, i)] += w * k * dd[1];
            h[(n + i, n + i)] += w * dd[2];
            for j in 0..n {
                h[(i, j)] += coop2 * c * cfg.rate_nat_per_s[j];
            }
        }
        Some(h)
    }
}

/// Direct primal solution of the ratio/bandwidth block at fixed times:
/// returns `(r, b, N - theta D)`.
pub fn solve_rb_primal(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: Times,
    theta: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = cfg.n_users;
    let obj = RbPrimal { cfg, chan, t, theta };
    let mut start = vec![0.25; n];
    start.extend(std::iter::repeat_n(0.5 / n as f64, n));
    let mut prog = SmoothProgram::new(&obj, start);
    for i in 0..n {
        prog = prog.bounds(i, 0.0, 1.0).bounds(n + i, 0.0, f64::INFINITY);
    }
    let mut sum_b = vec![0.0; 2 * n];
    sum_b[n..].iter_mut().for_each(|v| *v = 1.0);
    prog = prog.constraint(sum_b, 1.0);
    let out = convex::minimize(&prog, tol)?;
    let r = out.x_star[..n].to_vec();
    let b = out.x_star[n..].iter().map(|v| v * cfg.bandwidth_hz).collect();
    Ok((r, b, out.value))
}

/// Gradient of the time-block objective, exposed for finite-difference
/// checks.
pub fn time_block_gradient(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    s: &Schedule,
    at: [f64; 3],
) -> ([f64; 3], f64, Option<DMatrix<f64>>) {
    let obj = TimeObjective::new(cfg, chan, theta, &s.r, &s.b);
    let mut g = [0.0; 3];
    obj.gradient(&at, &mut g);
    (g, obj.value(&at), obj.hessian(&at))
}

/// Value and gradient of the direct ratio/bandwidth objective at
/// `x = (r, b / B)`, exposed for finite-difference checks.
pub fn rb_primal_gradient(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: Times,
    theta: f64,
    x: &[f64],
) -> (Vec<f64>, f64) {
    let obj = RbPrimal { cfg, chan, t, theta };
    let mut g = vec![0.0; x.len()];
    obj.gradient(x, &mut g);
    (g, obj.value(x))
}
