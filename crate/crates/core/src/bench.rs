//! Baselines, parameter sweeps and the CSV writer behind the CLI.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::case1::{solve_case1_with, Case1Options};
use crate::case2::{solve_case2_with, Case2Options};
use crate::channel::{realize, ChannelRealization, Fading};
use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::model::{BsCapacity, Case, Schedule, Scheme, SolveReport, SystemConfig};
use crate::objective;
use crate::oracle::{grid_search, multistart_descent, GridSpec};

/// Runs `scheme` with the machinery of `case`. Case I ignores a finite BS
/// capacity; Case II needs one.
pub fn solve_scheme(cfg: &SystemConfig, chan: &ChannelRealization, case: Case, scheme: Scheme) -> Result<SolveReport> {
    match case {
        Case::Abundant => {
            let cfg = cfg.clone().with_capacity(BsCapacity::Infinite);
            solve_case1_with(&cfg, chan, scheme, &Case1Options::default())
        }
        Case::Finite => solve_case2_with(cfg, chan, scheme, &Case2Options::default()),
    }
}

pub fn baseline_equal_bandwidth(cfg: &SystemConfig, chan: &ChannelRealization, case: Case) -> Result<SolveReport> {
    solve_scheme(cfg, chan, case, Scheme::EqualBandwidth)
}

pub fn baseline_equal_time(cfg: &SystemConfig, chan: &ChannelRealization, case: Case) -> Result<SolveReport> {
    solve_scheme(cfg, chan, case, Scheme::EqualTime)
}

pub fn baseline_all_offload(cfg: &SystemConfig, chan: &ChannelRealization, case: Case) -> Result<SolveReport> {
    solve_scheme(cfg, chan, case, Scheme::AllOffload)
}

/// Everything computed locally. Nothing is transmitted, so the transmit
/// slots are zero and the power `sum K_n + sum E_n / t1` is smallest at
/// `t1 = t_max`.
pub fn baseline_all_local(cfg: &SystemConfig, chan: &ChannelRealization) -> Result<SolveReport> {
    let clock = Instant::now();
    let schedule = Schedule::all_local(cfg.n_users, cfg.t_max_s, 0.0, 0.0, 0.0);
    let case = cfg.case();
    let avg = objective::avg_power(cfg, chan, &schedule, case)?;
    Ok(SolveReport {
        case,
        schedule,
        avg_power_w: avg,
        dinkelbach_trace: Vec::new(),
        inner_runs: Vec::new(),
        kkt_residual: 0.0,
        runtime_ms: clock.elapsed().as_secs_f64() * 1e3,
        converged: true,
        dual: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Optimized,
    EqualBandwidth,
    EqualTime,
    AllOffload,
    AllLocal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Optimized,
        Method::EqualBandwidth,
        Method::EqualTime,
        Method::AllOffload,
        Method::AllLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Optimized => "optimized",
            Method::EqualBandwidth => "equal_bandwidth",
            Method::EqualTime => "equal_time",
            Method::AllOffload => "all_offload",
            Method::AllLocal => "all_local",
        }
    }

    pub fn run(self, cfg: &SystemConfig, chan: &ChannelRealization, case: Case) -> Result<SolveReport> {
        match self {
            Method::Optimized => solve_scheme(cfg, chan, case, Scheme::Optimized),
            Method::EqualBandwidth => baseline_equal_bandwidth(cfg, chan, case),
            Method::EqualTime => baseline_equal_time(cfg, chan, case),
            Method::AllOffload => baseline_all_offload(cfg, chan, case),
            Method::AllLocal => {
                let cfg = match case {
                    Case::Abundant => cfg.clone().with_capacity(BsCapacity::Infinite),
                    Case::Finite => cfg.clone(),
                };
                baseline_all_local(&cfg, chan)
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    /// System bandwidth (Hz).
    Bandwidth,
    /// BS computation capacity (Hz).
    BsCapacity,
    /// Multiplier on every task rate.
    CScale,
    /// Noise density (W/Hz).
    Sigma2,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Bandwidth => "B",
            SweepVar::BsCapacity => "f_B",
            SweepVar::CScale => "c_scale",
            SweepVar::Sigma2 => "sigma2",
        }
    }

    pub fn apply(self, cfg: &mut SystemConfig, value: f64) {
        match self {
            SweepVar::Bandwidth => cfg.bandwidth_hz = value,
            SweepVar::BsCapacity => cfg.bs_capacity = BsCapacity::Finite(value),
            SweepVar::CScale => cfg.rate_nat_per_s.iter_mut().for_each(|c| *c *= value),
            SweepVar::Sigma2 => cfg.noise_density_w_per_hz = value,
        }
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" => Ok(SweepVar::Bandwidth),
            "f_B" | "fB" => Ok(SweepVar::BsCapacity),
            "c_scale" => Ok(SweepVar::CScale),
            "sigma2" => Ok(SweepVar::Sigma2),
            _ => Err(Error::Parse(format!("unknown sweep variable {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseChoice {
    One,
    Two,
    /// From the configured BS capacity.
    Auto,
}

impl CaseChoice {
    pub fn resolve(self, cfg: &SystemConfig) -> Case {
        match self {
            CaseChoice::One => Case::Abundant,
            CaseChoice::Two => Case::Finite,
            CaseChoice::Auto => cfg.case(),
        }
    }
}

impl FromStr for CaseChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(CaseChoice::One),
            "2" => Ok(CaseChoice::Two),
            "auto" => Ok(CaseChoice::Auto),
            _ => Err(Error::Parse(format!("case must be 1, 2 or auto, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub base: Experiment,
    /// Swept variable and its values; `None` runs the base config once.
    pub sweep: Option<(SweepVar, Vec<f64>)>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub case: CaseChoice,
    pub fading: Fading,
    /// Write measured solve times; off gives byte-identical reruns.
    pub record_runtime: bool,
}

impl ExperimentSpec {
    pub fn new(base: Experiment) -> Self {
        ExperimentSpec {
            base,
            sweep: None,
            seeds: vec![0],
            methods: vec![Method::Optimized],
            case: CaseChoice::Auto,
            fading: Fading::On,
            record_runtime: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Parse("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Parse("at least one method is required".into()));
        }
        if let Some((var, values)) = &self.sweep {
            if values.is_empty() {
                return Err(Error::Parse(format!("no values for sweep over {}", var.name())));
            }
            if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Parse(format!("sweep values must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Clone, Debug)]
pub struct Row {
    pub seed: u64,
    pub case: Case,
    pub method: Method,
    pub config: SystemConfig,
    pub outcome: std::result::Result<SolveReport, String>,
}

impl Row {
    pub fn ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn avg_power(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.avg_power_w)
    }
}

fn run_one(spec: &ExperimentSpec, cfg: &SystemConfig, seed: u64) -> Vec<Row> {
    let case = spec.case.resolve(cfg);
    let chan = spec.base.topology(seed);
    let chan = realize(&chan, cfg, seed, spec.fading);
    spec.methods
        .iter()
        .map(|&method| {
            let outcome = chan
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|ch| method.run(cfg, ch, case).map_err(|e| e.to_string()));
            Row {
                seed,
                case,
                method,
                config: cfg.clone(),
                outcome,
            }
        })
        .collect()
}

/// Every (value, seed) pair, each running all methods. Rows come back in
/// (value, seed, method) order whatever order the solves finish in.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<Row>> {
    spec.validate()?;
    let configs: Vec<SystemConfig> = match &spec.sweep {
        None => vec![spec.base.system.clone()],
        Some((var, values)) => values
            .iter()
            .map(|&v| {
                let mut cfg = spec.base.system.clone();
                var.apply(&mut cfg, v);
                cfg
            })
            .collect(),
    };
    let jobs: Vec<(&SystemConfig, u64)> = configs
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rows: Vec<Vec<Row>> = jobs.par_iter().map(|&(cfg, seed)| run_one(spec, cfg, seed)).collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn csv_header(n_users: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "seed",
        "case",
        "method",
        "B_hz",
        "fB_hz",
        "sigma2_w_hz",
        "N",
        "avg_power_w",
        "t1_s",
        "t2_s",
        "t3_s",
        "t4_s",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=n_users).map(|i| format!("r_{i}")));
    h.extend((1..=n_users).map(|i| format!("b_{i}")));
    h.extend(
        [
            "dinkelbach_iters",
            "inner_iters",
            "kkt_residual",
            "runtime_ms",
            "status",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Shortest round-trip text, with an exponent for very large or small values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn row_record(row: &Row, record_runtime: bool) -> Vec<String> {
    let cfg = &row.config;
    let n = cfg.n_users;
    let fb = match (row.case, cfg.bs_capacity) {
        (Case::Finite, BsCapacity::Finite(f)) => num(f),
        _ => "inf".to_string(),
    };
    let mut rec = vec![
        row.seed.to_string(),
        row.case.number().to_string(),
        row.method.name().to_string(),
        num(cfg.bandwidth_hz),
        fb,
        num(cfg.noise_density_w_per_hz),
        n.to_string(),
    ];
    match &row.outcome {
        Ok(rep) => {
            let s = &rep.schedule;
            rec.push(num(rep.avg_power_w));
            rec.extend([s.t1_s, s.t2_s, s.t3_s, s.t4_s].into_iter().map(num));
            rec.extend(s.r.iter().copied().map(num));
            rec.extend(s.b.iter().copied().map(num));
            rec.push(rep.dinkelbach_trace.len().to_string());
            rec.push(rep.inner_iterations().to_string());
            rec.push(num(rep.kkt_residual));
            rec.push(num(if record_runtime { rep.runtime_ms } else { 0.0 }));
            rec.push("ok".into());
        }
        Err(msg) => {
            rec.extend(std::iter::repeat_n(String::new(), 5 + 2 * n + 4));
            rec.push(format!("error: {msg}"));
        }
    }
    rec
}

/// Writes the header and rows. Rows of a sweep share one user count.
pub fn write_csv<W: Write>(out: W, rows: &[Row], record_runtime: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.config.n_users);
    w.write_record(csv_header(n))?;
    for row in rows {
        w.write_record(row_record(row, record_runtime))?;
    }
    w.flush()?;
    Ok(())
}

/// Oracle comparison on one small instance.
#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub seed: u64,
    pub case: Case,
    pub solver: f64,
    pub oracle: f64,
}

impl VerifyOutcome {
    /// Solver no worse than the oracle (up to `slack`) and within `rel` of it.
    pub fn passes(&self, rel: f64, slack: f64) -> bool {
        self.solver <= self.oracle * (1.0 + slack) && (self.solver - self.oracle).abs() <= rel * self.oracle
    }
}

/// Solver against grid search and multistart descent on two-user
/// instances, one per seed, in both cases.
pub fn verify_small(seeds: &[u64], grid_steps: usize, starts: usize) -> Result<Vec<VerifyOutcome>> {
    let exp = Experiment::reference(2);
    let mut out = Vec::new();
    for &seed in seeds {
        for case in [Case::Abundant, Case::Finite] {
            let cfg = match case {
                Case::Abundant => exp.system.clone().with_capacity(BsCapacity::Infinite),
                Case::Finite => exp.system.clone(),
            };
            let chan = realize(&exp.topology(seed), &cfg, seed, Fading::On)?;
            let solver = solve_scheme(&cfg, &chan, case, Scheme::Optimized)?.avg_power_w;
            let (_, grid) = grid_search(&cfg, &chan, &GridSpec::uniform(&cfg, case, grid_steps))?;
            let (_, multi) = multistart_descent(&cfg, &chan, case, starts, seed)?;
            out.push(VerifyOutcome {
                seed,
                case,
                solver,
                oracle: grid.min(multi),
            });
        }
    }
    Ok(out)
}
