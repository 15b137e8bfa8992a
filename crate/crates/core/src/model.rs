//! Domain types shared by every solver: the system configuration, the
//! decision variables of a schedule and the report a solve produces.
//!
//! All quantities are SI internally (W, J, Hz, s, nat, cycles). Unit
//! conversions for the friendlier config-file spellings live in
//! [`crate::config`].

use std::fmt;

use crate::case1::DualPoint;

/// Absolute slack allowed on every inequality in [`check_feasible`].
pub const FEAS_TOL: f64 = 1e-9;

/// Computation capacity of the base station.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BsCapacity {
    /// Abundant capacity: remote execution time is negligible (Case I).
    Infinite,
    /// Finite capacity in cycles/s (Case II).
    Finite(f64),
}

impl BsCapacity {
    pub fn hz(self) -> f64 {
        match self {
            BsCapacity::Infinite => f64::INFINITY,
            BsCapacity::Finite(f) => f,
        }
    }
}

/// Which of the two formulations is being solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    /// Abundant BS capacity, latency `t1 + t2 + t3`.
    Abundant,
    /// Finite BS capacity, latency `t1 + t2 + t3 + t4`.
    Finite,
}

impl Case {
    pub fn number(self) -> u8 {
        match self {
            Case::Abundant => 1,
            Case::Finite => 2,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub n_users: usize,
    /// System bandwidth B (Hz).
    pub bandwidth_hz: f64,
    /// CPU cycles needed per nat of task data (X).
    pub cycles_per_nat: f64,
    /// Chip energy coefficient per user (power = kappa * f^3).
    pub kappa: Vec<f64>,
    /// Task data accumulated per second per user (nat/s).
    pub rate_nat_per_s: Vec<f64>,
    /// Fixed energy overhead per user per slot (J).
    pub overhead_j: Vec<f64>,
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub bs_capacity: BsCapacity,
    /// Noise power spectral density (W/Hz).
    pub noise_density_w_per_hz: f64,
    /// Pathloss at the reference distance, linear.
    pub pathloss_ref_gain: f64,
    pub pathloss_ref_dist_m: f64,
    pub pathloss_exponent: f64,
}

impl SystemConfig {
    /// The default numerical setup: 1 MHz, X = 100, kappa = 1e-24,
    /// c = 1.5e6 nat/s, f_B = 5 GHz, -60 dB at 10 m, exponent 3 and a noise
    /// density of 1e-10 mW/Hz.
    pub fn reference(n_users: usize) -> Self {
        SystemConfig {
            n_users,
            bandwidth_hz: 1e6,
            cycles_per_nat: 100.0,
            kappa: vec![1e-24; n_users],
            rate_nat_per_s: vec![1.5e6; n_users],
            overhead_j: vec![0.0; n_users],
            t_min_s: 0.5,
            t_max_s: 2.0,
            bs_capacity: BsCapacity::Finite(5e9),
            noise_density_w_per_hz: 1e-13,
            pathloss_ref_gain: 1e-6,
            pathloss_ref_dist_m: 10.0,
            pathloss_exponent: 3.0,
        }
    }

    pub fn case(&self) -> Case {
        match self.bs_capacity {
            BsCapacity::Infinite => Case::Abundant,
            BsCapacity::Finite(_) => Case::Finite,
        }
    }

    /// `kappa_n X^3 c_n^3`: local computing power of user `n` when it runs
    /// its whole task locally (W).
    pub fn local_power(&self, n: usize) -> f64 {
        let xc = self.cycles_per_nat * self.rate_nat_per_s[n];
        self.kappa[n] * xc * xc * xc
    }

    pub fn total_overhead(&self) -> f64 {
        self.overhead_j.iter().sum()
    }

    pub fn with_capacity(mut self, cap: BsCapacity) -> Self {
        self.bs_capacity = cap;
        self
    }
}

/// One violated configuration invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Returns every violated invariant of `cfg`; `Ok` iff there are none.
pub fn validate_config(cfg: &SystemConfig) -> Result<(), Vec<ConfigViolation>> {
    let mut out = Vec::new();
    let mut bad = |field: &'static str, message: String| out.push(ConfigViolation { field, message });

    if cfg.n_users == 0 {
        bad("n_users", "must be at least 1".into());
    }
    let positive = [
        ("bandwidth_hz", cfg.bandwidth_hz),
        ("cycles_per_nat", cfg.cycles_per_nat),
        ("t_min_s", cfg.t_min_s),
        ("t_max_s", cfg.t_max_s),
        ("noise_density_w_per_hz", cfg.noise_density_w_per_hz),
        ("pathloss_ref_gain", cfg.pathloss_ref_gain),
        ("pathloss_ref_dist_m", cfg.pathloss_ref_dist_m),
        ("pathloss_exponent", cfg.pathloss_exponent),
    ];
    for (field, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            bad(field, format!("must be positive and finite, got {v}"));
        }
    }
    if let BsCapacity::Finite(f) = cfg.bs_capacity {
        if !(f > 0.0 && f.is_finite()) {
            bad("bs_capacity_hz", format!("must be positive or infinite, got {f}"));
        }
    }
    if cfg.t_min_s > cfg.t_max_s {
        bad(
            "t_min_s",
            format!("t_min_s > t_max_s ({} > {})", cfg.t_min_s, cfg.t_max_s),
        );
    }

    let lists: [(&'static str, &[f64], bool); 3] = [
        ("kappa", &cfg.kappa, true),
        ("rate_nat_per_s", &cfg.rate_nat_per_s, true),
        ("overhead_j", &cfg.overhead_j, false),
    ];
    for (field, list, strict) in lists {
        if list.len() != cfg.n_users {
            bad(
                field,
                format!("length mismatch: {} entries for {} users", list.len(), cfg.n_users),
            );
        }
        for (i, &v) in list.iter().enumerate() {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                let bound = if strict { "positive" } else { "nonnegative" };
                bad(field, format!("entry {i} must be {bound}, got {v}"));
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Decision variables of both cases. `t4_s` is zero in Case I.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub t1_s: f64,
    pub t2_s: f64,
    pub t3_s: f64,
    pub t4_s: f64,
    /// Offloading ratios in [0, 1].
    pub r: Vec<f64>,
    /// Bandwidth shares (Hz).
    pub b: Vec<f64>,
}

impl Schedule {
    /// Zeroes the bandwidth of users that offload nothing; their transmit
    /// energy is zero either way.
    pub fn release_idle_bandwidth(&mut self) {
        for (r, b) in self.r.iter().zip(self.b.iter_mut()) {
            if *r == 0.0 {
                *b = 0.0;
            }
        }
    }

    pub fn all_local(n: usize, t1: f64, t2: f64, t3: f64, t4: f64) -> Self {
        Schedule {
            t1_s: t1,
            t2_s: t2,
            t3_s: t3,
            t4_s: t4,
            r: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn n_users(&self) -> usize {
        self.r.len()
    }
}

/// A schedule constraint that does not hold.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub constraint: &'static str,
    /// How far the constraint is violated, in its own units.
    pub excess: f64,
    pub user: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.user {
            Some(n) => write!(f, "{} (user {n}) violated by {:e}", self.constraint, self.excess),
            None => write!(f, "{} violated by {:e}", self.constraint, self.excess),
        }
    }
}

/// Evaluates every schedule constraint of the case selected by `cfg`.
pub fn check_feasible(cfg: &SystemConfig, s: &Schedule) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut check = |constraint: &'static str, excess: f64, user: Option<usize>| {
        if !(excess <= FEAS_TOL) {
            out.push(Violation {
                constraint,
                excess,
                user,
            });
        }
    };
    let n = cfg.n_users;
    if s.r.len() != n || s.b.len() != n {
        out.push(Violation {
            constraint: "dimension",
            excess: (s.r.len().max(s.b.len()) as f64 - n as f64).abs(),
            user: None,
        });
        return Err(out);
    }

    check("t1 >= t_min", cfg.t_min_s - s.t1_s, None);
    check("t1 <= t_max", s.t1_s - cfg.t_max_s, None);
    check("t2 >= 0", -s.t2_s, None);
    check("t3 >= 0", -s.t3_s, None);
    check("t4 >= 0", -s.t4_s, None);
    check("t2 + t3 + t4 <= t1", s.t2_s + s.t3_s + s.t4_s - s.t1_s, None);

    let mut payload = 0.0;
    for i in 0..n {
        check("r >= 0", -s.r[i], Some(i));
        check("r <= 1", s.r[i] - 1.0, Some(i));
        check("b >= 0", -s.b[i], Some(i));
        let pair = if (s.r[i] > 0.0) != (s.b[i] > 0.0) { 1.0 } else { 0.0 };
        check("r = 0 iff b = 0", pair, Some(i));
        payload += s.t1_s * cfg.cycles_per_nat * cfg.rate_nat_per_s[i] * s.r[i];
    }
    check("sum b <= B", s.b.iter().sum::<f64>() - cfg.bandwidth_hz, None);
    if s.r.iter().any(|&r| r > 0.0) {
        check("t2 > 0 with payload", if s.t2_s > 0.0 { 0.0 } else { 1.0 }, None);
        check("t3 > 0 with payload", if s.t3_s > 0.0 { 0.0 } else { 1.0 }, None);
    }
    match cfg.bs_capacity {
        BsCapacity::Infinite => check("t4 = 0 in case 1", s.t4_s.abs(), None),
        BsCapacity::Finite(f_b) => {
            // compared in seconds of BS time
            check("BS capacity", payload / f_b - s.t4_s, None);
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Which resource-allocation scheme a solver runs. Everything except
/// `Optimized` freezes or ties part of the decision variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Optimized,
    /// `b_n = B / N` for every user.
    EqualBandwidth,
    /// `t2 = t3`.
    EqualTime,
    /// `r_n = 1` for every user.
    AllOffload,
}

/// One outer fractional-programming iteration: the ratio used and the
/// residual `N(x) - theta * D(x)` at the inner solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioStep {
    pub theta: f64,
    pub residual: f64,
}

/// One inner (BCD or DCA) run at a fixed ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerRun {
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration, starting with the value at the
    /// start point.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub case: Case,
    pub schedule: Schedule,
    /// Converged average power N(x)/D(x) (W).
    pub avg_power_w: f64,
    pub dinkelbach_trace: Vec<RatioStep>,
    pub inner_runs: Vec<InnerRun>,
    /// Case I: worst KKT violation of the multiplier certificate. Case II:
    /// relative projected gradient of `N - theta D` at the schedule.
    pub kkt_residual: f64,
    pub runtime_ms: f64,
    pub converged: bool,
    /// Final multipliers of the bandwidth step (Case I only).
    pub dual: Option<DualPoint>,
}

impl SolveReport {
    pub fn inner_iterations(&self) -> usize {
        self.inner_runs.iter().map(|r| r.iterations).sum()
    }
}
