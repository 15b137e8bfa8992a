//! Independent checks for the solvers: exhaustive grid search and
//! multistart coordinate descent on the average power, and the KKT
//! residuals of the bandwidth step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::case1::{f_eval, DualPoint, Times};
use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::model::{check_feasible, Case, Schedule, SystemConfig};
use crate::objective;

pub const MAX_GRID_POINTS: f64 = 1e8;

/// `steps` points from `lo` to `hi`, both included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Self {
        Axis { lo, hi, steps }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.lo];
        }
        (0..self.steps)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

/// Grid over a feasible-by-construction parameterization:
///
/// * `t1` directly;
/// * `busy = (t2 + t3 + t4) / t1`;
/// * `split[0]` is the share of the busy time given to `t2`; in Case II
///   `split[1]` divides the rest between `t3` and `t4`;
/// * one `ratio` axis per user;
/// * bandwidth by stick breaking: user `n < N-1` gets a `bandwidth` fraction
///   of what is left, the last user the remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub case: Case,
    pub t1: Axis,
    pub busy: Axis,
    pub split: Vec<Axis>,
    pub ratio: Axis,
    pub bandwidth: Axis,
}

impl GridSpec {
    /// Every axis with `steps` points over its natural range; time shares
    /// stay away from zero so transmit phases are never empty.
    pub fn uniform(cfg: &SystemConfig, case: Case, steps: usize) -> Self {
        let edge = 0.5 / steps as f64;
        let splits = match case {
            Case::Abundant => 1,
            Case::Finite => 2,
        };
        GridSpec {
            case,
            t1: Axis::new(cfg.t_min_s, cfg.t_max_s, steps),
            busy: Axis::new(edge, 1.0, steps),
            split: vec![Axis::new(edge, 1.0 - edge, steps); splits],
            ratio: Axis::new(0.0, 1.0, steps),
            bandwidth: Axis::new(0.0, 1.0, steps),
        }
    }

    pub fn size(&self, n_users: usize) -> f64 {
        let mut s = self.t1.steps as f64 * self.busy.steps as f64;
        for a in &self.split {
            s *= a.steps as f64;
        }
        s * (self.ratio.steps as f64).powi(n_users as i32)
            * (self.bandwidth.steps as f64).powi(n_users.saturating_sub(1) as i32)
    }

    fn validate(&self, n_users: usize) -> Result<()> {
        let want = match self.case {
            Case::Abundant => 1,
            Case::Finite => 2,
        };
        if self.split.len() != want {
            return Err(Error::Parse(format!(
                "grid for case {} needs {want} split axes",
                self.case
            )));
        }
        let axes = [self.t1, self.busy, self.ratio, self.bandwidth]
            .into_iter()
            .chain(self.split.iter().copied());
        for a in axes {
            if a.steps < 2 || !(a.lo < a.hi) {
                return Err(Error::Parse(format!("bad grid axis {a:?}")));
            }
        }
        let size = self.size(n_users);
        if size > MAX_GRID_POINTS {
            return Err(Error::OutOfRange {
                what: "grid size",
                value: size,
                lo: 0.0,
                hi: MAX_GRID_POINTS,
            });
        }
        Ok(())
    }
}

fn mixed_radix(mut k: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for d in out.iter_mut() {
        *d = k % radix;
        k /= radix;
    }
    out
}

/// Exhaustive minimization of the average power over `spec`. Infeasible
/// points are skipped. Returns the best schedule and its average power.
pub fn grid_search(cfg: &SystemConfig, chan: &ChannelRealization, spec: &GridSpec) -> Result<(Schedule, f64)> {
    let n = cfg.n_users;
    spec.validate(n)?;
    let big_b = cfg.bandwidth_hz;
    let f_b = cfg.bs_capacity.hz();
    let ratios = spec.ratio.points();
    let fracs = spec.bandwidth.points();
    let nr = ratios.len();

    let r_vectors: Vec<Vec<usize>> = (0..nr.pow(n as u32)).map(|k| mixed_radix(k, nr, n)).collect();
    let b_vectors: Vec<Vec<f64>> = (0..fracs.len().pow(n.saturating_sub(1) as u32))
        .map(|k| {
            let idx = mixed_radix(k, fracs.len(), n - 1);
            let mut left = big_b;
            let mut b = Vec::with_capacity(n);
            for &i in &idx {
                let share = left * fracs[i];
                b.push(share);
                left -= share;
            }
            b.push(left);
            b
        })
        .collect();

    // time points as (t1, t2, t3, t4)
    let mut times = Vec::new();
    for t1 in spec.t1.points() {
        for busy in spec.busy.points() {
            let total = busy * t1;
            let s0 = spec.split[0].points();
            for &a in &s0 {
                let t2 = total * a;
                match spec.case {
                    Case::Abundant => times.push([t1, t2, total - t2, 0.0]),
                    Case::Finite => {
                        for c in spec.split[1].points() {
                            let rest = total - t2;
                            times.push([t1, t2, rest * c, rest * (1.0 - c)]);
                        }
                    }
                }
            }
        }
    }

    let payload_rate: Vec<f64> = r_vectors
        .iter()
        .map(|rv| {
            rv.iter()
                .enumerate()
                .map(|(i, &k)| ratios[k] * cfg.rate_nat_per_s[i])
                .sum()
        })
        .collect();

    let best = times
        .par_iter()
        .enumerate()
        .map(|(ti, &[t1, t2, t3, t4])| {
            let den = match spec.case {
                Case::Abundant => t1 + t2 + t3,
                Case::Finite => t1 + t2 + t3 + t4,
            };
            // per-user local + transmit energy for every (ratio, bandwidth vector)
            let mut user = vec![vec![0.0; nr * b_vectors.len()]; n];
            for i in 0..n {
                let c = cfg.rate_nat_per_s[i];
                for (ri, &r) in ratios.iter().enumerate() {
                    let keep = 1.0 - r;
                    let local = cfg.local_power(i) * t1 * keep * keep * keep;
                    for (bi, b) in b_vectors.iter().enumerate() {
                        let tx =
                            objective::tx_energy_kernel(t1 * c * r, t2 * b[i]).map_or(f64::INFINITY, |e| e / chan.h[i]);
                        user[i][ri * b_vectors.len() + bi] = local + tx;
                    }
                }
            }
            let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
            for (rk, rv) in r_vectors.iter().enumerate() {
                let pay = payload_rate[rk];
                if spec.case == Case::Finite && t1 * cfg.cycles_per_nat * pay > f_b * t4 {
                    continue;
                }
                let coop = match objective::tx_energy_kernel(t1 * pay, t3 * big_b) {
                    Some(e) => e / chan.g,
                    None => continue,
                };
                for bk in 0..b_vectors.len() {
                    let mut e = coop;
                    for (i, &ri) in rv.iter().enumerate() {
                        e += user[i][ri * b_vectors.len() + bk];
                    }
                    if e < best.0 {
                        best = (e, rk, bk);
                    }
                }
            }
            let v = (best.0 + cfg.total_overhead()) / den;
            (v, ti, best.1, best.2)
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX, usize::MAX),
            |a, b| if (b.0, b.1) < (a.0, a.1) { b } else { a },
        );

    if !best.0.is_finite() {
        return Err(Error::Infeasible("no feasible grid point".into()));
    }
    let [t1, t2, t3, t4] = times[best.1];
    let r: Vec<f64> = r_vectors[best.2].iter().map(|&k| ratios[k]).collect();
    let b = b_vectors[best.3]
        .iter()
        .zip(&r)
        .map(|(&b, &r)| if r > 0.0 { b } else { 0.0 })
        .collect();
    let s = Schedule {
        t1_s: t1,
        t2_s: t2,
        t3_s: t3,
        t4_s: t4,
        r,
        b,
    };
    let v = objective::avg_power(cfg, chan, &s, spec.case)?;
    Ok((s, v))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search of `f` on `[0, 1]`, also trying the end points
/// and `x0`. Returns the best point seen.
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, x0: f64, f0: f64, iters: usize) -> (f64, f64) {
    let mut best = (x0, f0);
    let keep = |x: f64, v: f64, best: &mut (f64, f64)| {
        if v < best.1 {
            *best = (x, v);
        }
    };
    for x in [0.0, 1.0] {
        let v = f(x);
        keep(x, v, &mut best);
    }
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    keep(c, fc, &mut best);
    keep(d, fd, &mut best);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            keep(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            keep(d, fd, &mut best);
        }
    }
    best
}

/// Cyclic coordinate descent with golden-section line searches from
/// `n_starts` uniform random points of the unit box. At least three sweeps
/// per start; stops a start when a sweep improves by less than `1e-12`
/// relative. Deterministic given `seed`.
pub fn multistart_minimize<F>(dim: usize, f: F, n_starts: usize, seed: u64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (vec![0.5; dim], f(&vec![0.5; dim]));
    for _ in 0..n_starts.max(1) {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut v = f(&x);
        for sweep in 0.. {
            let before = v;
            for k in 0..dim {
                let mut y = x.clone();
                let (xk, vk) = golden_section(
                    |t| {
                        y[k] = t;
                        f(&y)
                    },
                    x[k],
                    v,
                    60,
                );
                x[k] = xk;
                v = vk;
            }
            let small = before.is_finite() && before - v <= 1e-12 * v.abs().max(1e-300);
            if sweep >= 2 && (small || sweep >= 200) {
                break;
            }
        }
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Number of unit-box coordinates used by [`unit_to_schedule`].
pub fn unit_dim(n_users: usize, case: Case) -> usize {
    let times = match case {
        Case::Abundant => 3,
        Case::Finite => 4,
    };
    times + 2 * n_users
}

/// Maps a unit-box point to a schedule satisfying every timing, ratio and
/// bandwidth constraint. Layout: `t1`, busy fraction, one or two time
/// splits, then `N` ratios and `N` bandwidth weights. Bandwidth is shared
/// among transmitting users in proportion to their weights.
pub fn unit_to_schedule(cfg: &SystemConfig, case: Case, u: &[f64]) -> Schedule {
    let n = cfg.n_users;
    let t1 = cfg.t_min_s + u[0] * (cfg.t_max_s - cfg.t_min_s);
    let busy = u[1] * t1;
    let (t2, t3, t4, k) = match case {
        Case::Abundant => (busy * u[2], busy * (1.0 - u[2]), 0.0, 3),
        Case::Finite => {
            let rest = busy * (1.0 - u[2]);
            (busy * u[2], rest * u[3], rest * (1.0 - u[3]), 4)
        }
    };
    let r: Vec<f64> = u[k..k + n].to_vec();
    let w = &u[k + n..k + 2 * n];
    let total: f64 = (0..n).filter(|&i| r[i] > 0.0).map(|i| w[i]).sum();
    let b = (0..n)
        .map(|i| {
            if r[i] > 0.0 && total > 0.0 {
                cfg.bandwidth_hz * w[i] / total
            } else {
                0.0
            }
        })
        .collect();
    Schedule {
        t1_s: t1,
        t2_s: t2,
        t3_s: t3,
        t4_s: t4,
        r,
        b,
    }
}

/// Multistart coordinate descent on the average power. Infeasible points
/// count as `+inf`, so the result is always feasible.
pub fn multistart_descent(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    case: Case,
    n_starts: usize,
    seed: u64,
) -> Result<(Schedule, f64)> {
    let eval = |u: &[f64]| -> f64 {
        let s = unit_to_schedule(cfg, case, u);
        if check_feasible(cfg, &s).is_err() {
            return f64::INFINITY;
        }
        objective::avg_power(cfg, chan, &s, case).unwrap_or(f64::INFINITY)
    };
    let (u, v) = multistart_minimize(unit_dim(cfg.n_users, case), eval, n_starts, seed);
    if !v.is_finite() {
        return Err(Error::Infeasible("multistart found no feasible point".into()));
    }
    Ok((unit_to_schedule(cfg, case, &u), v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KktCondition {
    /// Derivative of the Lagrangian in `b_n`.
    BandwidthStationarity,
    /// Derivative in `r_n`, with its sign conditions at the bounds.
    RatioStationarity,
    /// Derivative in the auxiliary relay rate `z`.
    RelayStationarity,
    /// `epsilon (sum c r - z) = 0`.
    PayloadSlackness,
    /// `lambda (sum b - B) = 0`.
    BandwidthSlackness,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktEntry {
    pub condition: KktCondition,
    pub user: Option<usize>,
    /// Signed, scaled residual.
    pub residual: f64,
    /// How far the condition fails: `|residual|` for equalities, the
    /// wrong-signed part for inequalities.
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktReport {
    pub entries: Vec<KktEntry>,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.entries.iter().map(|e| e.violation).fold(0.0, f64::max)
    }

    pub fn of(&self, cond: KktCondition) -> impl Iterator<Item = &KktEntry> {
        self.entries.iter().filter(move |e| e.condition == cond)
    }
}

enum Sense {
    Zero,
    NonNeg,
    NonPos,
}

fn entry(condition: KktCondition, user: Option<usize>, residual: f64, sense: Sense) -> KktEntry {
    let violation = match sense {
        Sense::Zero => residual.abs(),
        Sense::NonNeg => (-residual).max(0.0),
        Sense::NonPos => residual.max(0.0),
    };
    KktEntry {
        condition,
        user,
        residual,
        violation: if residual.is_nan() { f64::INFINITY } else { violation },
    }
}

/// Scaled KKT residuals of the bandwidth step at fixed times. Every
/// derivative is divided by the magnitude of its largest term.
pub fn kkt_residual(cfg: &SystemConfig, chan: &ChannelRealization, t: Times, dual: &DualPoint) -> KktReport {
    use KktCondition::*;
    let n = cfg.n_users;
    let big_b = cfg.bandwidth_hz;
    let (lambda, eps) = (dual.lambda, dual.epsilon);
    let mut entries = Vec::new();
    let mut payload = 0.0;

    for i in 0..n {
        let (r, b) = (dual.r_star[i], dual.b_star[i]);
        let c = cfg.rate_nat_per_s[i];
        let h = chan.h[i];
        payload += c * r;
        // ratio of payload to bandwidth; for idle users the limit the
        // multiplier selects
        let alpha = if r > 0.0 && b > 0.0 { c * r / b } else { dual.alpha[i] };
        let growth = (t.t1 * alpha / t.t2).exp();

        if b > 0.0 {
            let price = f_eval(t.t1, t.t2, alpha) / h;
            let scale = lambda.max(price).max(f64::MIN_POSITIVE);
            entries.push(entry(
                BandwidthStationarity,
                Some(i),
                (lambda - price) / scale,
                Sense::Zero,
            ));
        } else if !dual.all_local {
            // one-sided limit of the derivative at b = 0 along ratio alpha
            let price = f_eval(t.t1, t.t2, alpha) / h;
            let scale = lambda.max(price).max(f64::MIN_POSITIVE);
            entries.push(entry(
                BandwidthStationarity,
                Some(i),
                (lambda - price) / scale,
                Sense::NonNeg,
            ));
        }

        let tx = t.t1 * c / h * growth;
        let local = 3.0 * cfg.local_power(i) * t.t1 * (1.0 - r) * (1.0 - r);
        let scale = (3.0 * cfg.local_power(i) * t.t1).max(tx + eps * c);
        let d = (tx - local + eps * c) / scale;
        let sense = if r <= 0.0 {
            Sense::NonNeg
        } else if r >= 1.0 {
            Sense::NonPos
        } else {
            Sense::Zero
        };
        entries.push(entry(RatioStationarity, Some(i), d, sense));
    }

    let z = dual.z_star;
    let relay = t.t1 / chan.g * (t.t1 * z / (t.t3 * big_b)).exp();
    let scale = relay.max(eps).max(f64::MIN_POSITIVE);
    let sense = if z > 0.0 { Sense::Zero } else { Sense::NonNeg };
    entries.push(entry(RelayStationarity, None, (relay - eps) / scale, sense));

    let pay_scale = cfg.rate_nat_per_s.iter().sum::<f64>();
    let pay_gap = (payload - z) / pay_scale;
    entries.push(entry(
        PayloadSlackness,
        None,
        pay_gap,
        if eps > 0.0 { Sense::Zero } else { Sense::NonPos },
    ));

    let used: f64 = dual.b_star.iter().sum();
    let band_gap = (used - big_b) / big_b;
    let sense = if lambda > 0.0 { Sense::Zero } else { Sense::NonPos };
    entries.push(entry(BandwidthSlackness, None, band_gap, sense));

    KktReport { entries }
}
