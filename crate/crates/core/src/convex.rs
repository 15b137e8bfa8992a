//! Log-barrier interior-point method for smooth convex objectives under
//! linear inequalities `a.x <= c` and box bounds.
//!
//! Each outer stage centres `f(x) - mu * sum(ln s_i)` with damped Newton
//! steps, then shrinks `mu` by [`BarrierOptions::mu_factor`]. With `m`
//! inequality rows the final iterate is within `m * mu` of optimal.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// A twice-differentiable convex function. `value` returns `+inf` outside
/// its domain so line searches can back off.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    /// Exact Hessian if available; otherwise the solver differences the
    /// gradient.
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `coeffs . x <= rhs`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        LinearConstraint { coeffs, rhs }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.rhs - dot(&self.coeffs, x)
    }
}

pub struct SmoothProgram<'a> {
    pub objective: &'a dyn SmoothObjective,
    pub constraints: Vec<LinearConstraint>,
    /// Per-coordinate bounds; use infinities for free coordinates.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Must satisfy every constraint and bound with positive slack.
    pub start: Vec<f64>,
}

impl<'a> SmoothProgram<'a> {
    pub fn new(objective: &'a dyn SmoothObjective, start: Vec<f64>) -> Self {
        let n = objective.dim();
        SmoothProgram {
            objective,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            start,
        }
    }

    pub fn constraint(mut self, coeffs: Vec<f64>, rhs: f64) -> Self {
        self.constraints.push(LinearConstraint::new(coeffs, rhs));
        self
    }

    pub fn bounds(mut self, i: usize, lo: f64, hi: f64) -> Self {
        self.lower[i] = lo;
        self.upper[i] = hi;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub x_star: Vec<f64>,
    pub value: f64,
    /// Norm of the Lagrangian gradient at `x_star` using the barrier
    /// multiplier estimates.
    pub grad_norm: f64,
    pub barrier_mu_final: f64,
    pub newton_iters: usize,
    /// Multiplier estimate `mu / s_i` per row: constraints first, then
    /// finite lower bounds, then finite upper bounds, in coordinate order.
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error("start point has no strict interior: row {row} slack {slack:e}")]
    NoStrictInterior { row: usize, slack: f64 },
    #[error("barrier method hit the iteration limit")]
    MaxIterations { best: Box<SolveOutcome> },
    #[error("objective is not finite at the start point")]
    BadStart,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("restricted constraint is infeasible for every point: row {row}")]
    EmptyRestriction { row: usize },
}

#[derive(Clone, Debug)]
pub struct BarrierOptions {
    /// Target bound `m * mu` on the duality gap.
    pub tol: f64,
    /// Stop centring when half the squared Newton decrement, relative to
    /// `mu`, drops below it.
    pub newton_tol: f64,
    pub mu_factor: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            tol: 1e-8,
            newton_tol: 1e-14,
            mu_factor: 10.0,
            max_newton: 3000,
        }
    }
}

impl BarrierOptions {
    pub fn with_tol(tol: f64) -> Self {
        BarrierOptions {
            tol,
            ..Default::default()
        }
    }
}

pub fn minimize(prog: &SmoothProgram<'_>, tol: f64) -> Result<SolveOutcome, ConvexError> {
    minimize_with(prog, &BarrierOptions::with_tol(tol))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Rows {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl Rows {
    fn from_program(prog: &SmoothProgram<'_>) -> Result<Rows, ConvexError> {
        let n = prog.objective.dim();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for con in &prog.constraints {
            if con.coeffs.len() != n {
                return Err(ConvexError::Dimension(format!(
                    "constraint has {} coefficients, objective has {n}",
                    con.coeffs.len()
                )));
            }
            rows.push((con.coeffs.clone(), con.rhs));
        }
        if prog.lower.len() != n || prog.upper.len() != n || prog.start.len() != n {
            return Err(ConvexError::Dimension("bounds or start".into()));
        }
        for i in 0..n {
            if prog.lower[i].is_finite() {
                let mut a = vec![0.0; n];
                a[i] = -1.0;
                rows.push((a, -prog.lower[i]));
            }
        }
        for i in 0..n {
            if prog.upper[i].is_finite() {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                rows.push((a, prog.upper[i]));
            }
        }
        let m = rows.len();
        let mut a = DMatrix::zeros(m, n);
        let mut c = DVector::zeros(m);
        for (i, (coeffs, rhs)) in rows.into_iter().enumerate() {
            for (j, v) in coeffs.into_iter().enumerate() {
                a[(i, j)] = v;
            }
            c[i] = rhs;
        }
        Ok(Rows { a, c })
    }

    fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c - &self.a * x
    }
}

fn barrier_value(f: &dyn SmoothObjective, rows: &Rows, x: &DVector<f64>, mu: f64) -> f64 {
    let s = rows.slack(x);
    if s.iter().any(|&v| !(v > 0.0)) {
        return f64::INFINITY;
    }
    let fx = f.value(x.as_slice());
    if !fx.is_finite() {
        return f64::INFINITY;
    }
    fx - mu * s.iter().map(|v| v.ln()).sum::<f64>()
}

fn gradient(f: &dyn SmoothObjective, x: &DVector<f64>) -> DVector<f64> {
    let mut g = vec![0.0; x.len()];
    f.gradient(x.as_slice(), &mut g);
    DVector::from_vec(g)
}

/// Central differences of the gradient, with steps kept inside the
/// feasible region.
fn numeric_hessian(f: &dyn SmoothObjective, rows: &Rows, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let s = rows.slack(x);
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut step = 1e-6 * x[j].abs().max(1.0);
        for i in 0..rows.a.nrows() {
            let aij = rows.a[(i, j)].abs();
            if aij > 0.0 {
                step = step.min(0.25 * s[i] / aij);
            }
        }
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (gradient(f, &xp) - gradient(f, &xm)) / (2.0 * step);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

fn solve_spd(mut h: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut shift = 0.0;
    loop {
        if let Some(ch) = h.clone().cholesky() {
            return ch.solve(rhs);
        }
        let next = if shift == 0.0 { 1e-14 * scale } else { shift * 10.0 };
        for i in 0..h.nrows() {
            h[(i, i)] += next - shift;
        }
        shift = next;
    }
}

pub fn minimize_with(prog: &SmoothProgram<'_>, opts: &BarrierOptions) -> Result<SolveOutcome, ConvexError> {
    let f = prog.objective;
    let rows = Rows::from_program(prog)?;
    let m = rows.a.nrows();
    let mut x = DVector::from_column_slice(&prog.start);
    let s0 = rows.slack(&x);
    if let Some((row, &slack)) = s0.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(ConvexError::NoStrictInterior { row, slack });
    }
    let f0 = f.value(x.as_slice());
    if !f0.is_finite() {
        return Err(ConvexError::BadStart);
    }

    let mut mu = if m == 0 {
        0.0
    } else {
        (f0.abs().max(opts.tol) / m as f64).max(opts.tol / m as f64)
    };
    let mut iters = 0usize;

    loop {
        // centring
        let mut polish = 0;
        loop {
            let s = rows.slack(&x);
            let inv_s = s.map(|v| 1.0 / v);
            let gf = gradient(f, &x);
            let grad = &gf + rows.a.transpose() * (&inv_s * mu);
            let hf = f.hessian(x.as_slice()).unwrap_or_else(|| numeric_hessian(f, &rows, &x));
            let weighted = DMatrix::from_fn(m, x.len(), |i, j| rows.a[(i, j)] * inv_s[i]);
            let hess = hf + weighted.transpose() * &weighted * mu;
            let dx = -solve_spd(hess, &grad);
            let slope = grad.dot(&dx);
            let decrement = -slope * 0.5;
            if decrement <= opts.newton_tol * mu {
                break;
            }
            let phi = barrier_value(f, &rows, &x, mu);
            let adx = &rows.a * &dx;
            if decrement <= 1e-15 * (1.0 + phi.abs()) {
                // Line searches cannot see progress below the rounding level
                // of phi; a few plain Newton steps still sharpen the centre.
                polish += 1;
                if polish > 3 {
                    break;
                }
                let mut alpha: f64 = 1.0;
                for i in 0..m {
                    if adx[i] > 0.0 {
                        alpha = alpha.min(0.99 * s[i] / adx[i]);
                    }
                }
                let cand = &x + &dx * alpha;
                if barrier_value(f, &rows, &cand, mu).is_finite() {
                    x = cand;
                    iters += 1;
                    continue;
                }
                break;
            }
            iters += 1;
            if iters > opts.max_newton {
                return Err(ConvexError::MaxIterations {
                    best: Box::new(outcome(f, &rows, &x, mu, iters)),
                });
            }
            let mut alpha: f64 = 1.0;
            for i in 0..m {
                if adx[i] > 0.0 {
                    alpha = alpha.min(0.99 * s[i] / adx[i]);
                }
            }
            let mut moved = false;
            while alpha > 1e-18 {
                let cand = &x + &dx * alpha;
                let v = barrier_value(f, &rows, &cand, mu);
                if v.is_finite() && v <= phi + 0.25 * alpha * slope {
                    x = cand;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                // no representable decrease left at this mu
                break;
            }
        }
        if m == 0 || m as f64 * mu <= opts.tol {
            break;
        }
        mu /= opts.mu_factor;
    }
    Ok(outcome(f, &rows, &x, mu, iters))
}

fn outcome(f: &dyn SmoothObjective, rows: &Rows, x: &DVector<f64>, mu: f64, iters: usize) -> SolveOutcome {
    let s = rows.slack(x);
    let lam = s.map(|v| mu / v);
    let grad_l = gradient(f, x) + rows.a.transpose() * &lam;
    SolveOutcome {
        x_star: x.as_slice().to_vec(),
        value: f.value(x.as_slice()),
        grad_norm: grad_l.norm(),
        barrier_mu_final: mu,
        newton_iters: iters,
        multipliers: lam.as_slice().to_vec(),
    }
}

/// An objective seen through the affine map `x = jac * z + offset`, used to
/// tie or freeze variables of a larger program.
pub struct Embedded<'a> {
    pub inner: &'a dyn SmoothObjective,
    pub jac: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl<'a> Embedded<'a> {
    pub fn new(inner: &'a dyn SmoothObjective, jac: DMatrix<f64>, offset: DVector<f64>) -> Self {
        assert_eq!(jac.nrows(), inner.dim());
        assert_eq!(offset.len(), inner.dim());
        Embedded { inner, jac, offset }
    }

    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        let x = &self.jac * DVector::from_column_slice(z) + &self.offset;
        x.as_slice().to_vec()
    }

    /// Rewrites full-space rows in the reduced coordinates, dropping rows
    /// the map makes constant.
    pub fn pull_back(&self, rows: &[LinearConstraint]) -> Result<Vec<LinearConstraint>, ConvexError> {
        let mut out = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let a = DVector::from_column_slice(&row.coeffs);
            let coeffs = self.jac.transpose() * &a;
            let rhs = row.rhs - a.dot(&self.offset);
            let scale = a.amax().max(1.0);
            if coeffs.amax() <= 1e-15 * scale {
                if rhs < 0.0 {
                    return Err(ConvexError::EmptyRestriction { row: i });
                }
                continue;
            }
            out.push(LinearConstraint::new(coeffs.as_slice().to_vec(), rhs));
        }
        Ok(out)
    }
}

impl SmoothObjective for Embedded<'_> {
    fn dim(&self) -> usize {
        self.jac.ncols()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.inner.value(&self.lift(z))
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let x = self.lift(z);
        let mut g = vec![0.0; x.len()];
        self.inner.gradient(&x, &mut g);
        let gz = self.jac.transpose() * DVector::from_vec(g);
        grad.copy_from_slice(gz.as_slice());
    }

    fn hessian(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        let x = self.lift(z);
        let h = self.inner.hessian(&x)?;
        Some(self.jac.transpose() * h * &self.jac)
    }
}
