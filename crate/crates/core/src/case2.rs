//! Finite BS capacity: the fractional program is handled as in Case I, but
//! the inner problem at fixed `theta` is nonconvex. With `q_n = t1 r_n`
//! and `p_n = t2 b_n` its objective splits as `gamma = psi - eta` with both
//! parts jointly convex, and a DC iteration minimizes `psi` minus the
//! tangent plane of `eta` until the values settle.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelRealization;
use crate::convex::{self, BarrierOptions, Embedded, LinearConstraint, SmoothObjective, SmoothProgram};
use crate::error::{Error, Result};
use crate::model::{Case, InnerRun, RatioStep, Schedule, Scheme, SolveReport, SystemConfig};
use crate::objective::{self, tx_kernel_derivatives};

/// A point of the substituted problem. `q_n = t1 r_n` (s), `p_n = t2 b_n`
/// (Hz s).
#[derive(Clone, Debug, PartialEq)]
pub struct DcaPoint {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub iter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcSplit {
    pub psi_value: f64,
    pub eta_value: f64,
    pub gamma_value: f64,
}

/// `coeffs . pack(x) + offset` over the packed layout
/// `(t1, t2, t3, t4, q_1..q_N, p_1..p_N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFunctional {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl AffineFunctional {
    pub fn eval(&self, pt: &DcaPoint) -> f64 {
        let x = pack(pt, 1.0);
        self.coeffs.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + self.offset
    }
}

#[derive(Clone, Debug)]
pub struct DcaOptions {
    /// Relative change of the subproblem value that ends the iteration.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub barrier_tol: f64,
}

impl Default for DcaOptions {
    fn default() -> Self {
        DcaOptions {
            rel_tol: 1e-3,
            max_iter: 15,
            barrier_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Case2Options {
    pub dca: DcaOptions,
    pub outer_max_iter: usize,
    pub outer_tol: f64,
}

impl Default for Case2Options {
    fn default() -> Self {
        Case2Options {
            dca: DcaOptions::default(),
            outer_max_iter: 30,
            outer_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DcaRun {
    pub point: DcaPoint,
    /// Subproblem optimal values, starting with `gamma` at the start point.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// [`stationarity`] of `gamma` at the returned point.
    pub stationarity: f64,
}

pub fn to_schedule(pt: &DcaPoint) -> Schedule {
    Schedule {
        t1_s: pt.t1,
        t2_s: pt.t2,
        t3_s: pt.t3,
        t4_s: pt.t4,
        r: pt.q.iter().map(|q| q / pt.t1).collect(),
        b: pt.p.iter().map(|p| if *p > 0.0 { p / pt.t2 } else { 0.0 }).collect(),
    }
}

pub fn from_schedule(s: &Schedule) -> DcaPoint {
    DcaPoint {
        t1: s.t1_s,
        t2: s.t2_s,
        t3: s.t3_s,
        t4: s.t4_s,
        q: s.r.iter().map(|r| r * s.t1_s).collect(),
        p: s.b.iter().map(|b| b * s.t2_s).collect(),
        iter: 0,
    }
}

/// Packs a point; `p` is divided by `p_scale`.
fn pack(pt: &DcaPoint, p_scale: f64) -> Vec<f64> {
    let mut x = vec![pt.t1, pt.t2, pt.t3, pt.t4];
    x.extend_from_slice(&pt.q);
    x.extend(pt.p.iter().map(|p| p / p_scale));
    x
}

fn unpack(x: &[f64], n: usize, p_scale: f64, iter: usize) -> DcaPoint {
    DcaPoint {
        t1: x[0],
        t2: x[1],
        t3: x[2],
        t4: x[3],
        q: x[4..4 + n].to_vec(),
        p: x[4 + n..4 + 2 * n].iter().map(|s| s * p_scale).collect(),
        iter,
    }
}

/// Convex part in the solver's variables `(t1..t4, q, s = p / B)`.
struct Psi<'a> {
    cfg: &'a SystemConfig,
    chan: &'a ChannelRealization,
}

impl Psi<'_> {
    fn n(&self) -> usize {
        self.cfg.n_users
    }
}

impl SmoothObjective for Psi<'_> {
    fn dim(&self) -> usize {
        4 + 2 * self.n()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let (cfg, n) = (self.cfg, self.n());
        let big_b = cfg.bandwidth_hz;
        let t1 = y[0];
        if !(t1 > 0.0) {
            return f64::INFINITY;
        }
        let mut v = cfg.total_overhead();
        let mut pay = 0.0;
        for i in 0..n {
            let (q, s) = (y[4 + i], y[4 + n + i]);
            let c = cfg.rate_nat_per_s[i];
            match objective::tx_energy_kernel(c * q / big_b, s) {
                Some(e) => v += big_b / self.chan.h[i] * e,
                None => return f64::INFINITY,
            }
            v += cfg.local_power(i) * (t1 + 3.0 * q * q / t1);
            pay += c * q;
        }
        match objective::tx_energy_kernel(pay / big_b, y[2]) {
            Some(e) => v + big_b / self.chan.g * e,
            None => f64::INFINITY,
        }
    }

    fn gradient(&self, y: &[f64], g: &mut [f64]) {
        let (cfg, n) = (self.cfg, self.n());
        let big_b = cfg.bandwidth_hz;
        let t1 = y[0];
        g.iter_mut().for_each(|v| *v = 0.0);
        let pay: f64 = (0..n).map(|i| cfg.rate_nat_per_s[i] * y[4 + i]).sum();
        let (_, dc, _) = tx_kernel_derivatives(pay / big_b, y[2]);
        g[2] = big_b / self.chan.g * dc[1];
        for i in 0..n {
            let (q, s) = (y[4 + i], y[4 + n + i]);
            let c = cfg.rate_nat_per_s[i];
            let k = cfg.local_power(i);
            let (_, du, _) = tx_kernel_derivatives(c * q / big_b, s);
            g[0] += k * (1.0 - 3.0 * q * q / (t1 * t1));
            g[4 + i] = c / self.chan.h[i] * du[0] + c / self.chan.g * dc[0] + 6.0 * k * q / t1;
            g[4 + n + i] = big_b / self.chan.h[i] * du[1];
        }
    }

    fn hessian(&self, y: &[f64]) -> Option<DMatrix<f64>> {
        let (cfg, n) = (self.cfg, self.n());
        let big_b = cfg.bandwidth_hz;
        let t1 = y[0];
        let mut h = DMatrix::zeros(4 + 2 * n, 4 + 2 * n);
        let pay: f64 = (0..n).map(|i| cfg.rate_nat_per_s[i] * y[4 + i]).sum();
        let (_, _, dd) = tx_kernel_derivatives(pay / big_b, y[2]);
        let g = self.chan.g;
        h[(2, 2)] = big_b / g * dd[2];
        for i in 0..n {
            let (q, s) = (y[4 + i], y[4 + n + i]);
            let c = cfg.rate_nat_per_s[i];
            let k = cfg.local_power(i);
            let hi = self.chan.h[i];
            let (_, _, du) = tx_kernel_derivatives(c * q / big_b, s);
            let (qi, si) = (4 + i, 4 + n + i);
            h[(qi, qi)] += c * c / (hi * big_b) * du[0] + 6.0 * k / t1;
            h[(qi, si)] += c / hi * du[1];
            h[(si, qi)] += c / hi * du[1];
            h[(si, si)] += big_b / hi * du[2];
            h[(0, 0)] += 6.0 * k * q * q / (t1 * t1 * t1);
            h[(0, qi)] -= 6.0 * k * q / (t1 * t1);
            h[(qi, 0)] -= 6.0 * k * q / (t1 * t1);
            h[(qi, 2)] += c / g * dd[1];
            h[(2, qi)] += c / g * dd[1];
            for j in 0..n {
                h[(qi, 4 + j)] += c * cfg.rate_nat_per_s[j] / (g * big_b) * dd[0];
            }
        }
        Some(h)
    }
}

fn check_pairs(pt: &DcaPoint) -> Result<()> {
    for (i, (&q, &p)) in pt.q.iter().zip(&pt.p).enumerate() {
        if q > 0.0 && !(p > 0.0) {
            return Err(Error::InfiniteEnergy { user: i });
        }
    }
    Ok(())
}

/// Convex part: transmit energies plus `sum K_n (t1 + 3 q_n^2 / t1)` and
/// the fixed overheads, with `K_n = kappa_n X^3 c_n^3`.
pub fn psi(cfg: &SystemConfig, chan: &ChannelRealization, pt: &DcaPoint) -> Result<f64> {
    check_pairs(pt)?;
    let v = Psi { cfg, chan }.value(&pack(pt, cfg.bandwidth_hz));
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InfiniteEnergy { user: cfg.n_users })
    }
}

/// Concave part with flipped sign: `sum K_n (q_n^3 / t1^2 + 3 q_n) +
/// theta (t1 + t2 + t3 + t4)`.
pub fn eta(cfg: &SystemConfig, theta: f64, pt: &DcaPoint) -> f64 {
    let t1 = pt.t1;
    let cubic: f64 =
        pt.q.iter()
            .enumerate()
            .map(|(i, &q)| cfg.local_power(i) * (q * q * q / (t1 * t1) + 3.0 * q))
            .sum();
    cubic + theta * (pt.t1 + pt.t2 + pt.t3 + pt.t4)
}

/// Inner objective `N - theta D` evaluated on the schedule.
pub fn gamma(cfg: &SystemConfig, chan: &ChannelRealization, theta: f64, pt: &DcaPoint) -> Result<f64> {
    let s = to_schedule(pt);
    Ok(objective::numerator(cfg, chan, &s)? - theta * objective::denominator(&s, Case::Finite))
}

pub fn dc_split(cfg: &SystemConfig, chan: &ChannelRealization, theta: f64, pt: &DcaPoint) -> Result<DcSplit> {
    let psi_value = psi(cfg, chan, pt)?;
    let eta_value = eta(cfg, theta, pt);
    Ok(DcSplit {
        psi_value,
        eta_value,
        gamma_value: psi_value - eta_value,
    })
}

/// Tangent plane of `eta` at `anchor`.
pub fn eta_linearize(cfg: &SystemConfig, theta: f64, anchor: &DcaPoint) -> AffineFunctional {
    let n = cfg.n_users;
    let t1 = anchor.t1;
    let mut coeffs = vec![0.0; 4 + 2 * n];
    coeffs[0] = theta;
    coeffs[1] = theta;
    coeffs[2] = theta;
    coeffs[3] = theta;
    for (i, &q) in anchor.q.iter().enumerate() {
        let k = cfg.local_power(i);
        coeffs[4 + i] = 3.0 * k * (q * q / (t1 * t1) + 1.0);
        coeffs[0] -= 2.0 * k * q * q * q / (t1 * t1 * t1);
    }
    let x = pack(anchor, 1.0);
    let at: f64 = coeffs.iter().zip(&x).map(|(a, b)| a * b).sum();
    AffineFunctional {
        coeffs,
        offset: eta(cfg, theta, anchor) - at,
    }
}

/// `psi - eta_bar` in solver variables.
struct Subproblem<'a> {
    psi: Psi<'a>,
    lin: Vec<f64>,
    offset: f64,
}

impl SmoothObjective for Subproblem<'_> {
    fn dim(&self) -> usize {
        self.psi.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let l: f64 = self.lin.iter().zip(y).map(|(a, b)| a * b).sum();
        self.psi.value(y) - l - self.offset
    }

    fn gradient(&self, y: &[f64], g: &mut [f64]) {
        self.psi.gradient(y, g);
        for (gi, a) in g.iter_mut().zip(&self.lin) {
            *gi -= a;
        }
    }

    fn hessian(&self, y: &[f64]) -> Option<DMatrix<f64>> {
        self.psi.hessian(y)
    }
}

/// Affine restriction `y = J z + o` for the baseline schemes.
struct Restriction {
    jac: DMatrix<f64>,
    offset: DVector<f64>,
    /// For each reduced coordinate, a full coordinate equal to it.
    lead: Vec<usize>,
}

impl Restriction {
    fn new(cfg: &SystemConfig, scheme: Scheme) -> Self {
        let n = cfg.n_users;
        let dim = 4 + 2 * n;
        let fixed_t1 = cfg.t_max_s - cfg.t_min_s <= 1e-12 * cfg.t_max_s;
        let mut offset = DVector::zeros(dim);
        let mut cols: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();

        let mut t1_col = vec![(0, 1.0)];
        if scheme == Scheme::AllOffload {
            t1_col.extend((0..n).map(|i| (4 + i, 1.0)));
        }
        if fixed_t1 {
            for (k, w) in &t1_col {
                offset[*k] = w * cfg.t_min_s;
            }
        } else {
            cols.push((0, t1_col));
        }

        let mut t2_col = vec![(1, 1.0)];
        if scheme == Scheme::EqualTime {
            t2_col.push((2, 1.0));
        }
        if scheme == Scheme::EqualBandwidth {
            t2_col.extend((0..n).map(|i| (4 + n + i, 1.0 / n as f64)));
        }
        cols.push((1, t2_col));
        if scheme != Scheme::EqualTime {
            cols.push((2, vec![(2, 1.0)]));
        }
        cols.push((3, vec![(3, 1.0)]));
        if scheme != Scheme::AllOffload {
            cols.extend((0..n).map(|i| (4 + i, vec![(4 + i, 1.0)])));
        }
        if scheme != Scheme::EqualBandwidth {
            cols.extend((0..n).map(|i| (4 + n + i, vec![(4 + n + i, 1.0)])));
        }

        let mut jac = DMatrix::zeros(dim, cols.len());
        for (j, (_, entries)) in cols.iter().enumerate() {
            for &(k, w) in entries {
                jac[(k, j)] = w;
            }
        }
        Restriction {
            jac,
            offset,
            lead: cols.iter().map(|(k, _)| *k).collect(),
        }
    }

    fn reduce(&self, y: &[f64]) -> Vec<f64> {
        self.lead.iter().map(|&k| y[k]).collect()
    }
}

/// Constraint rows in the solver variables.
fn full_rows(cfg: &SystemConfig) -> Vec<LinearConstraint> {
    let n = cfg.n_users;
    let dim = 4 + 2 * n;
    let unit = |pairs: &[(usize, f64)]| {
        let mut a = vec![0.0; dim];
        for &(k, w) in pairs {
            a[k] += w;
        }
        a
    };
    let f_b = cfg.bs_capacity.hz();
    let mut rows = vec![
        LinearConstraint::new(unit(&[(0, -1.0)]), -cfg.t_min_s),
        LinearConstraint::new(unit(&[(0, 1.0)]), cfg.t_max_s),
        LinearConstraint::new(unit(&[(0, -1.0), (1, 1.0), (2, 1.0), (3, 1.0)]), 0.0),
        LinearConstraint::new(unit(&[(1, -1.0)]), 0.0),
        LinearConstraint::new(unit(&[(2, -1.0)]), 0.0),
        LinearConstraint::new(unit(&[(3, -1.0)]), 0.0),
    ];
    let mut cap = unit(&[(3, -1.0)]);
    let mut band = unit(&[(1, -1.0)]);
    for i in 0..n {
        cap[4 + i] = cfg.cycles_per_nat * cfg.rate_nat_per_s[i] / f_b;
        band[4 + n + i] = 1.0;
    }
    rows.push(LinearConstraint::new(cap, 0.0));
    rows.push(LinearConstraint::new(band, 0.0));
    for i in 0..n {
        rows.push(LinearConstraint::new(unit(&[(4 + i, -1.0)]), 0.0));
        rows.push(LinearConstraint::new(unit(&[(4 + i, 1.0), (0, -1.0)]), 0.0));
        rows.push(LinearConstraint::new(unit(&[(4 + n + i, -1.0)]), 0.0));
    }
    rows
}

/// Strictly feasible start for a scheme.
pub fn initial_point(cfg: &SystemConfig, scheme: Scheme) -> Result<DcaPoint> {
    let n = cfg.n_users;
    let f_b = cfg.bs_capacity.hz();
    if !f_b.is_finite() {
        return Err(Error::CaseMismatch("case 2 needs a finite BS capacity"));
    }
    let fixed_t1 = cfg.t_max_s - cfg.t_min_s <= 1e-12 * cfg.t_max_s;
    let t1 = if fixed_t1 {
        cfg.t_min_s
    } else {
        cfg.t_max_s - 1e-3 * (cfg.t_max_s - cfg.t_min_s)
    };
    let big_b = cfg.bandwidth_hz;
    let x = cfg.cycles_per_nat;
    let pt = if scheme == Scheme::AllOffload {
        let rho = x * cfg.rate_nat_per_s.iter().sum::<f64>() / f_b;
        if rho >= 1.0 - 1e-9 {
            return Err(Error::Infeasible(format!(
                "full offloading needs {rho:.3} slots of BS time per slot"
            )));
        }
        let t2 = t1 * (1.0 - rho) / 4.0;
        DcaPoint {
            t1,
            t2,
            t3: t2,
            t4: t1 * (rho + (1.0 - rho) / 3.0),
            q: vec![t1; n],
            p: vec![big_b * t2 / (2 * n) as f64; n],
            iter: 0,
        }
    } else {
        let t = t1 / 4.0;
        let share = if scheme == Scheme::EqualBandwidth { 1.0 } else { 0.5 };
        DcaPoint {
            t1,
            t2: t,
            t3: t,
            t4: t,
            q: cfg
                .rate_nat_per_s
                .iter()
                .map(|c| (0.5 * t1).min(f_b * t / (2.0 * n as f64 * x * c)))
                .collect(),
            p: vec![share * big_b * t / n as f64; n],
            iter: 0,
        }
    };
    Ok(pt)
}

/// [`initial_point`] with its payloads scaled down until offloading stops
/// being ruinous on this channel; a start with astronomically large power
/// leaves the first subproblem badly scaled.
fn start_point(cfg: &SystemConfig, chan: &ChannelRealization, scheme: Scheme) -> Result<DcaPoint> {
    let base = initial_point(cfg, scheme)?;
    if scheme == Scheme::AllOffload {
        return Ok(base);
    }
    let power = |pt: &DcaPoint| objective::avg_power(cfg, chan, &to_schedule(pt), Case::Finite);
    let mut best = (power(&base)?, base.clone());
    for k in [1e-1, 1e-2, 1e-3] {
        let mut pt = base.clone();
        pt.q.iter_mut().for_each(|q| *q *= k);
        let v = power(&pt)?;
        if v < best.0 {
            best = (v, pt);
        }
    }
    Ok(best.1)
}

/// Minimizes `psi - eta_bar` linearized at `anchor`; returns the new point
/// and the subproblem value there. Never worse than the anchor.
pub fn dca_subproblem(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    anchor: &DcaPoint,
) -> Result<(DcaPoint, f64)> {
    subproblem_scheme(cfg, chan, theta, anchor, Scheme::Optimized, 1e-10)
}

fn subproblem_scheme(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    anchor: &DcaPoint,
    scheme: Scheme,
    tol: f64,
) -> Result<(DcaPoint, f64)> {
    let n = cfg.n_users;
    let big_b = cfg.bandwidth_hz;
    let lin = eta_linearize(cfg, theta, anchor);
    let sub = Subproblem {
        psi: Psi { cfg, chan },
        lin: lin.coeffs.clone(),
        offset: lin.offset,
    };
    let restr = Restriction::new(cfg, scheme);
    let emb = Embedded::new(&sub, restr.jac.clone(), restr.offset.clone());
    let rows = emb.pull_back(&full_rows(cfg))?;

    let y_anchor = pack(anchor, big_b);
    let anchor_value = sub.value(&y_anchor);
    // pull the start a little toward a central point so it has slack
    let center = pack(&initial_point(cfg, scheme)?, big_b);
    let y0: Vec<f64> = y_anchor.iter().zip(&center).map(|(a, c)| 0.99 * a + 0.01 * c).collect();
    let mut prog = SmoothProgram::new(&emb, restr.reduce(&y0));
    prog.constraints = rows;
    let out = match convex::minimize_with(&prog, &BarrierOptions::with_tol(tol)) {
        Ok(o) => o,
        Err(convex::ConvexError::MaxIterations { best }) => *best,
        Err(e) => return Err(e.into()),
    };
    let y = emb.lift(&out.x_star);
    let value = sub.value(&y);
    if value <= anchor_value {
        Ok((unpack(&y, n, big_b, anchor.iter + 1), value))
    } else {
        let mut same = anchor.clone();
        same.iter += 1;
        Ok((same, anchor_value))
    }
}

/// Distance from `-grad gamma` to the normal cone of the active
/// constraints at `pt`, within the scheme's restriction, relative to
/// `max(1, |grad psi|)`. Zero at a KKT point of `gamma`. Users with
/// `q = p = 0` are treated as fixed.
pub fn stationarity(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    pt: &DcaPoint,
    scheme: Scheme,
) -> Result<f64> {
    let big_b = cfg.bandwidth_hz;
    let psi = Psi { cfg, chan };
    let n = cfg.n_users;
    let y = pack(pt, big_b);
    // psi is not differentiable where q_n = p_n = 0; such users are held
    // local and only the face they span is checked
    let local: Vec<usize> = (0..n).filter(|&i| y[4 + i] == 0.0 && y[4 + n + i] == 0.0).collect();
    let mut y_grad = y.clone();
    for &i in &local {
        y_grad[4 + n + i] = f64::MIN_POSITIVE;
    }
    let mut gpsi = vec![0.0; y.len()];
    psi.gradient(&y_grad, &mut gpsi);
    // eta does not depend on p, so its tangent is layout independent
    let geta = eta_linearize(cfg, theta, pt).coeffs;

    let restr = Restriction::new(cfg, scheme);
    let emb = Embedded::new(&psi, restr.jac.clone(), restr.offset.clone());
    let rows = emb.pull_back(&full_rows(cfg))?;
    let jt = restr.jac.transpose();
    let gpsi_z = &jt * DVector::from_vec(gpsi);
    let mut r = &gpsi_z - &jt * DVector::from_vec(geta);
    let z = restr.reduce(&y);
    let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut active: Vec<DVector<f64>> = rows
        .iter()
        .filter(|row| {
            let a = DVector::from_column_slice(&row.coeffs);
            row.slack(&z) <= 1e-6 * (1.0 + a.norm() * zmax)
        })
        .map(|row| DVector::from_column_slice(&row.coeffs))
        .collect();
    for &i in &local {
        for k in [4 + i, 4 + n + i] {
            let a = restr.jac.row(k).transpose();
            if a.amax() > 0.0 {
                active.push(-&a);
                active.push(a);
            }
        }
    }
    // nonnegative least squares for the multipliers by coordinate descent
    let mut mu = vec![0.0; active.len()];
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for (m, a) in mu.iter_mut().zip(&active) {
            let aa = a.norm_squared();
            let next = (*m - a.dot(&r) / aa).max(0.0);
            let d = next - *m;
            if d != 0.0 {
                r.axpy(d, a, 1.0);
                *m = next;
                moved = moved.max(d.abs() * aa.sqrt());
            }
        }
        if moved <= 1e-15 * (1.0 + gpsi_z.norm()) {
            break;
        }
    }
    Ok(r.norm() / gpsi_z.norm().max(1.0))
}

/// DC iteration at fixed `theta` from `start`.
pub fn dca_solve(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    start: &DcaPoint,
    opts: &DcaOptions,
) -> Result<DcaRun> {
    dca_solve_scheme(cfg, chan, theta, start, Scheme::Optimized, opts)
}

fn dca_solve_scheme(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    theta: f64,
    start: &DcaPoint,
    scheme: Scheme,
    opts: &DcaOptions,
) -> Result<DcaRun> {
    let mut point = start.clone();
    point.iter = 0;
    let mut prev = gamma(cfg, chan, theta, &point)?;
    let mut trace = vec![prev];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (next, value) = subproblem_scheme(cfg, chan, theta, &point, scheme, opts.barrier_tol)?;
        point = next;
        trace.push(value);
        if (prev - value).abs() <= opts.rel_tol * (1.0 + prev.abs()) {
            converged = true;
            break;
        }
        prev = value;
    }
    let stationarity = stationarity(cfg, chan, theta, &point, scheme)?;
    Ok(DcaRun {
        iterations: point.iter,
        point,
        trace,
        converged,
        stationarity,
    })
}

pub fn solve_case2(cfg: &SystemConfig, chan: &ChannelRealization) -> Result<SolveReport> {
    solve_case2_with(cfg, chan, Scheme::Optimized, &Case2Options::default())
}

pub fn solve_case2_with(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    scheme: Scheme,
    opts: &Case2Options,
) -> Result<SolveReport> {
    if cfg.case() != Case::Finite {
        return Err(Error::CaseMismatch("case 2 needs a finite BS capacity"));
    }
    let clock = Instant::now();
    let ratio = |pt: &DcaPoint| -> Result<(f64, f64)> {
        let s = to_schedule(pt);
        Ok((
            objective::numerator(cfg, chan, &s)?,
            objective::denominator(&s, Case::Finite),
        ))
    };
    let mut x = start_point(cfg, chan, scheme)?;
    let (num0, den0) = ratio(&x)?;
    let mut theta = num0 / den0;

    let mut ratio_trace = Vec::new();
    let mut inner_runs = Vec::new();
    let mut converged = false;
    for _ in 0..opts.outer_max_iter {
        let run = dca_solve_scheme(cfg, chan, theta, &x, scheme, &opts.dca)?;
        inner_runs.push(InnerRun {
            iterations: run.iterations,
            converged: run.converged,
            trace: run.trace,
        });
        x = run.point;
        let (num, den) = ratio(&x)?;
        let residual = num - theta * den;
        ratio_trace.push(RatioStep { theta, residual });
        if residual.abs() <= opts.outer_tol * den {
            converged = true;
            break;
        }
        theta = num / den;
    }

    let mut schedule = to_schedule(&x);
    let mut avg = objective::avg_power(cfg, chan, &schedule, Case::Finite)?;
    if scheme != Scheme::AllOffload && scheme != Scheme::EqualBandwidth {
        // users the barrier kept at a vanishing ratio go fully local
        for i in 0..cfg.n_users {
            if schedule.r[i] < 1e-6 {
                let mut cand = schedule.clone();
                cand.r[i] = 0.0;
                cand.b[i] = 0.0;
                let v = objective::avg_power(cfg, chan, &cand, Case::Finite)?;
                if v <= avg * (1.0 + 1e-12) {
                    schedule = cand;
                    avg = v;
                }
            }
        }
    }
    schedule.release_idle_bandwidth();
    let kkt_residual = stationarity(cfg, chan, avg, &from_schedule(&schedule), scheme)?;
    if avg < theta {
        ratio_trace.push(RatioStep {
            theta: avg,
            residual: 0.0,
        });
    }
    Ok(SolveReport {
        case: Case::Finite,
        schedule,
        avg_power_w: avg,
        dinkelbach_trace: ratio_trace,
        inner_runs,
        kkt_residual,
        runtime_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged,
        dual: None,
    })
}

/// Gradient of `psi` in the packed layout with `p` in Hz s, for
/// finite-difference checks.
pub fn psi_gradient(cfg: &SystemConfig, chan: &ChannelRealization, pt: &DcaPoint) -> Vec<f64> {
    let n = cfg.n_users;
    let big_b = cfg.bandwidth_hz;
    let psi = Psi { cfg, chan };
    let mut g = vec![0.0; 4 + 2 * n];
    psi.gradient(&pack(pt, big_b), &mut g);
    for v in &mut g[4 + n..] {
        *v /= big_b;
    }
    g
}

/// Hessian of `psi` in solver variables (`p / B`), for checks.
pub fn psi_hessian_scaled(cfg: &SystemConfig, chan: &ChannelRealization, pt: &DcaPoint) -> DMatrix<f64> {
    Psi { cfg, chan }
        .hessian(&pack(pt, cfg.bandwidth_hz))
        .expect("analytic")
}

/// Gradient of `psi` in solver variables, for checks against
/// [`psi_hessian_scaled`].
pub fn psi_gradient_scaled(cfg: &SystemConfig, chan: &ChannelRealization, y: &[f64]) -> Vec<f64> {
    let psi = Psi { cfg, chan };
    let mut g = vec![0.0; y.len()];
    psi.gradient(y, &mut g);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_feasible;
    use approx::assert_relative_eq;

    fn cfg(n: usize) -> SystemConfig {
        SystemConfig::reference(n)
    }

    fn chan3() -> ChannelRealization {
        ChannelRealization {
            h: vec![5e6, 1e6, 2e5],
            g: 3.7e5,
            seed: 0,
        }
    }

    fn sample_point() -> DcaPoint {
        DcaPoint {
            t1: 1.2,
            t2: 0.3,
            t3: 0.35,
            t4: 0.4,
            q: vec![0.5, 0.2, 0.05],
            p: vec![1.2e5, 0.8e5, 0.4e5],
            iter: 0,
        }
    }

    #[test]
    fn schedule_map() {
        let pt = DcaPoint {
            t1: 2.0,
            t2: 0.5,
            t3: 0.5,
            t4: 0.5,
            q: vec![1.0, 0.0],
            p: vec![2e5, 0.0],
            iter: 0,
        };
        let s = to_schedule(&pt);
        assert_eq!(s.r, vec![0.5, 0.0]);
        assert_eq!(s.b, vec![4e5, 0.0]);
        let back = to_schedule(&from_schedule(&s));
        for i in 0..2 {
            assert!((back.r[i] - s.r[i]).abs() <= 1e-12);
            assert!((back.b[i] - s.b[i]).abs() <= 1e-12 * s.b[i].max(1.0));
        }
    }

    #[test]
    fn zero_payload_split() {
        let cfg = cfg(2);
        let ch = ChannelRealization {
            h: vec![1e6, 1e6],
            g: 1e6,
            seed: 0,
        };
        let pt = DcaPoint {
            t1: 1.0,
            t2: 0.2,
            t3: 0.2,
            t4: 0.2,
            q: vec![0.0; 2],
            p: vec![0.0; 2],
            iter: 0,
        };
        let local: f64 = (0..2).map(|i| cfg.local_power(i)).sum();
        assert_relative_eq!(psi(&cfg, &ch, &pt).unwrap(), local, max_relative = 1e-14);
        assert_relative_eq!(eta(&cfg, 2.0, &pt), 2.0 * 1.6, max_relative = 1e-14);
    }

    #[test]
    fn split_identity() {
        let cfg = cfg(3);
        let ch = chan3();
        let pt = sample_point();
        let d = dc_split(&cfg, &ch, 1.7, &pt).unwrap();
        let direct = gamma(&cfg, &ch, 1.7, &pt).unwrap();
        assert!((d.gamma_value - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn psi_rejects_payload_without_bandwidth() {
        let cfg = cfg(3);
        let mut pt = sample_point();
        pt.p[1] = 0.0;
        assert!(matches!(
            psi(&cfg, &chan3(), &pt),
            Err(Error::InfiniteEnergy { user: 1 })
        ));
    }

    #[test]
    fn psi_golden_single_user() {
        // N = 1, h = 2e6, g = 1e6, t = (1, 0.3, 0.4, 0.2), q = 0.6, p = 2.5e5,
        // evaluated independently at 50 digits
        let cfg = cfg(1);
        let ch = ChannelRealization {
            h: vec![2e6],
            g: 1e6,
            seed: 0,
        };
        let pt = DcaPoint {
            t1: 1.0,
            t2: 0.3,
            t3: 0.4,
            t4: 0.2,
            q: vec![0.6],
            p: vec![2.5e5],
            iter: 0,
        };
        assert_relative_eq!(psi(&cfg, &ch, &pt).unwrap(), PSI_GOLDEN, max_relative = 1e-12);
        assert_relative_eq!(eta(&cfg, 0.9, &pt), ETA_GOLDEN, max_relative = 1e-12);
    }

    const PSI_GOLDEN: f64 = 14.864873640003159;
    const ETA_GOLDEN: f64 = 8.514;

    #[test]
    fn linearization_anchor_and_gradient() {
        let cfg = cfg(3);
        let pt = sample_point();
        let theta = 1.3;
        let lin = eta_linearize(&cfg, theta, &pt);
        assert!((lin.eval(&pt) - eta(&cfg, theta, &pt)).abs() <= 1e-12 * eta(&cfg, theta, &pt));
        let x = pack(&pt, 1.0);
        for k in 0..x.len() {
            let h = 1e-6 * x[k].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd =
                (eta(&cfg, theta, &unpack(&xp, 3, 1.0, 0)) - eta(&cfg, theta, &unpack(&xm, 3, 1.0, 0))) / (2.0 * h);
            let a = lin.coeffs[k];
            assert!(
                (fd - a).abs() <= 1e-5 * a.abs().max(1e-8),
                "coordinate {k}: {fd} vs {a}"
            );
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let cfg = cfg(3);
        let ch = chan3();
        let y = pack(&sample_point(), cfg.bandwidth_hz);
        let h = psi_hessian_scaled(&cfg, &ch, &sample_point());
        for k in 0..y.len() {
            let step = 1e-6 * y[k].abs();
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += step;
            ym[k] -= step;
            let gp = psi_gradient_scaled(&cfg, &ch, &yp);
            let gm = psi_gradient_scaled(&cfg, &ch, &ym);
            for j in 0..y.len() {
                let fd = (gp[j] - gm[j]) / (2.0 * step);
                let scale = h[(j, k)].abs().max(1e-6 * h[(j, j)].abs().max(h[(k, k)].abs()));
                assert!(
                    (fd - h[(j, k)]).abs() <= 1e-4 * scale,
                    "({j},{k}): {fd} vs {}",
                    h[(j, k)]
                );
            }
        }
    }

    #[test]
    fn subproblem_chain_and_feasibility() {
        let cfg = cfg(3);
        let ch = chan3();
        let anchor = initial_point(&cfg, Scheme::Optimized).unwrap();
        let theta = 2.0;
        let (next, value) = dca_subproblem(&cfg, &ch, theta, &anchor).unwrap();
        let g_anchor = gamma(&cfg, &ch, theta, &anchor).unwrap();
        let g_next = gamma(&cfg, &ch, theta, &next).unwrap();
        assert!(g_next <= value + 1e-9);
        assert!(value <= g_anchor + 1e-9);
        assert!(check_feasible(&cfg, &to_schedule(&next)).is_ok());
        let cap: f64 = (0..3)
            .map(|i| cfg.cycles_per_nat * cfg.rate_nat_per_s[i] * next.q[i])
            .sum();
        assert!(cap <= cfg.bs_capacity.hz() * next.t4 + 1e-9 * cfg.bs_capacity.hz());
    }

    #[test]
    fn dca_trace_and_fixed_point() {
        let cfg = cfg(3);
        let ch = chan3();
        let theta = 1.0;
        let opts = DcaOptions {
            rel_tol: 1e-9,
            max_iter: 200,
            ..Default::default()
        };
        let run = dca_solve(
            &cfg,
            &ch,
            theta,
            &initial_point(&cfg, Scheme::Optimized).unwrap(),
            &opts,
        )
        .unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", run.trace);
        }
        let (_, again) = dca_subproblem(&cfg, &ch, theta, &run.point).unwrap();
        assert!((again - run.trace.last().unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn solve_case2_properties() {
        let cfg = cfg(3);
        let ch = chan3();
        let rep = solve_case2(&cfg, &ch).unwrap();
        assert!(rep.converged);
        for w in rep.dinkelbach_trace.windows(2) {
            assert!(w[1].theta <= w[0].theta + 1e-9);
        }
        assert!(
            check_feasible(&cfg, &rep.schedule).is_ok(),
            "{:?}",
            check_feasible(&cfg, &rep.schedule)
        );
        let local: f64 = (0..3).map(|i| cfg.local_power(i)).sum();
        assert!(rep.avg_power_w < local);
    }

    #[test]
    fn all_offload_needs_capacity() {
        let mut cfg = cfg(3);
        cfg.bs_capacity = crate::model::BsCapacity::Finite(1e12);
        assert!(initial_point(&cfg, Scheme::AllOffload).is_ok());
        cfg.bs_capacity = crate::model::BsCapacity::Finite(4e8);
        assert!(matches!(
            initial_point(&cfg, Scheme::AllOffload),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn restricted_schemes_hold_their_ties() {
        let cfg = cfg(3);
        let ch = chan3();
        let opts = Case2Options::default();
        let et = solve_case2_with(&cfg, &ch, Scheme::EqualTime, &opts).unwrap();
        assert!((et.schedule.t2_s - et.schedule.t3_s).abs() <= 1e-12);
        let eb = solve_case2_with(&cfg, &ch, Scheme::EqualBandwidth, &opts).unwrap();
        for b in &eb.schedule.b {
            assert!((b - cfg.bandwidth_hz / 3.0).abs() <= 1e-6 * cfg.bandwidth_hz);
        }
    }

    #[test]
    fn rejects_infinite_capacity() {
        let cfg = cfg(2).with_capacity(crate::model::BsCapacity::Infinite);
        let ch = ChannelRealization {
            h: vec![1e6, 1e6],
            g: 1e6,
            seed: 0,
        };
        assert!(matches!(solve_case2(&cfg, &ch), Err(Error::CaseMismatch(_))));
    }
}
