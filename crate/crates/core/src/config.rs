//! TOML configuration. Keys are the [`SystemConfig`] field names plus
//! `bandwidth_mhz`, `bs_capacity_ghz` and `sigma2_mw_per_hz` in the units
//! used when describing experiments, and the topology keys `user_dist_m`
//! and `coop_bs_dist_m`. Missing keys take the reference values; unknown
//! keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::channel::Topology;
use crate::error::{Error, Result};
use crate::model::{validate_config, BsCapacity, SystemConfig};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerUser {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerUser {
    fn expand(self, n: usize) -> Vec<f64> {
        match self {
            PerUser::Scalar(v) => vec![v; n],
            PerUser::List(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Capacity {
    Hz(f64),
    Marker(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Distances {
    List(Vec<f64>),
    Spec(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_users: Option<usize>,
    bandwidth_hz: Option<f64>,
    bandwidth_mhz: Option<f64>,
    cycles_per_nat: Option<f64>,
    kappa: Option<PerUser>,
    rate_nat_per_s: Option<PerUser>,
    overhead_j: Option<PerUser>,
    t_min_s: Option<f64>,
    t_max_s: Option<f64>,
    bs_capacity_hz: Option<Capacity>,
    bs_capacity_ghz: Option<Capacity>,
    noise_density_w_per_hz: Option<f64>,
    sigma2_mw_per_hz: Option<f64>,
    pathloss_ref_gain: Option<f64>,
    pathloss_ref_dist_m: Option<f64>,
    pathloss_exponent: Option<f64>,
    user_dist_m: Option<Distances>,
    coop_bs_dist_m: Option<f64>,
}

/// Where user distances come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologySpec {
    Fixed(Vec<f64>),
    /// Uniform in `[lo, hi]` metres, drawn from the experiment seed.
    Uniform {
        lo: f64,
        hi: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub system: SystemConfig,
    pub users: TopologySpec,
    pub coop_bs_dist_m: f64,
}

impl Experiment {
    /// The reference setup: uniform user distances in 5..50 m and a relay
    /// 30 m from the BS.
    pub fn reference(n_users: usize) -> Self {
        Experiment {
            system: SystemConfig::reference(n_users),
            users: TopologySpec::Uniform { lo: 5.0, hi: 50.0 },
            coop_bs_dist_m: 30.0,
        }
    }

    pub fn topology(&self, seed: u64) -> Topology {
        match &self.users {
            TopologySpec::Fixed(d) => Topology {
                user_dist_m: d.clone(),
                coop_bs_dist_m: self.coop_bs_dist_m,
            },
            TopologySpec::Uniform { lo, hi } => {
                Topology::uniform(self.system.n_users, *lo, *hi, self.coop_bs_dist_m, seed)
            }
        }
    }
}

fn one_of<T>(a: Option<T>, b: Option<T>, names: &str) -> Result<Option<T>> {
    match (a, b) {
        (Some(_), Some(_)) => Err(Error::Parse(format!("give only one of {names}"))),
        (a, b) => Ok(a.or(b)),
    }
}

fn capacity(c: Capacity, scale: f64) -> Result<BsCapacity> {
    match c {
        Capacity::Hz(v) => Ok(BsCapacity::Finite(v * scale)),
        Capacity::Marker(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinite") => {
            Ok(BsCapacity::Infinite)
        }
        Capacity::Marker(s) => Err(Error::Parse(format!("bad BS capacity {s:?}"))),
    }
}

fn parse_uniform(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Parse(format!("bad distance spec {s:?}, expected uniform(lo,hi)"));
    let inner = s
        .trim()
        .strip_prefix("uniform(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(bad)?;
    let mut parts = inner.split(',').map(|p| p.trim().parse::<f64>());
    match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(lo)), Some(Ok(hi)), None) if lo > 0.0 && lo < hi => Ok((lo, hi)),
        _ => Err(bad()),
    }
}

pub fn parse_experiment(text: &str) -> Result<Experiment> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let n = raw.n_users.unwrap_or(5);
    let mut exp = Experiment::reference(n);
    let cfg = &mut exp.system;

    let mhz = raw.bandwidth_mhz.map(|v| v * 1e6);
    if let Some(v) = one_of(raw.bandwidth_hz, mhz, "bandwidth_hz, bandwidth_mhz")? {
        cfg.bandwidth_hz = v;
    }
    let cap_hz = raw.bs_capacity_hz.map(|c| capacity(c, 1.0)).transpose()?;
    let cap_ghz = raw.bs_capacity_ghz.map(|c| capacity(c, 1e9)).transpose()?;
    if let Some(c) = one_of(cap_hz, cap_ghz, "bs_capacity_hz, bs_capacity_ghz")? {
        cfg.bs_capacity = c;
    }
    let mw = raw.sigma2_mw_per_hz.map(|v| v * 1e-3);
    if let Some(v) = one_of(
        raw.noise_density_w_per_hz,
        mw,
        "noise_density_w_per_hz, sigma2_mw_per_hz",
    )? {
        cfg.noise_density_w_per_hz = v;
    }
    if let Some(v) = raw.cycles_per_nat {
        cfg.cycles_per_nat = v;
    }
    if let Some(v) = raw.kappa {
        cfg.kappa = v.expand(n);
    }
    if let Some(v) = raw.rate_nat_per_s {
        cfg.rate_nat_per_s = v.expand(n);
    }
    if let Some(v) = raw.overhead_j {
        cfg.overhead_j = v.expand(n);
    }
    if let Some(v) = raw.t_min_s {
        cfg.t_min_s = v;
    }
    if let Some(v) = raw.t_max_s {
        cfg.t_max_s = v;
    }
    if let Some(v) = raw.pathloss_ref_gain {
        cfg.pathloss_ref_gain = v;
    }
    if let Some(v) = raw.pathloss_ref_dist_m {
        cfg.pathloss_ref_dist_m = v;
    }
    if let Some(v) = raw.pathloss_exponent {
        cfg.pathloss_exponent = v;
    }
    validate_config(cfg).map_err(Error::InvalidConfig)?;

    match raw.user_dist_m {
        Some(Distances::List(d)) => {
            if d.len() != n {
                return Err(Error::Parse(format!(
                    "user_dist_m has {} entries, n_users is {n}",
                    d.len()
                )));
            }
            if d.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Parse("user distances must be positive".into()));
            }
            exp.users = TopologySpec::Fixed(d);
        }
        Some(Distances::Spec(s)) => {
            let (lo, hi) = parse_uniform(&s)?;
            exp.users = TopologySpec::Uniform { lo, hi };
        }
        None => {}
    }
    if let Some(d) = raw.coop_bs_dist_m {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Parse("coop_bs_dist_m must be positive".into()));
        }
        exp.coop_bs_dist_m = d;
    }
    Ok(exp)
}

pub fn load_experiment(path: &Path) -> Result<Experiment> {
    parse_experiment(&std::fs::read_to_string(path)?)
}
