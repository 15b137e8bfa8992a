//! Normalized channel gains from distance-based pathloss and Rayleigh
//! block fading. A gain here is link gain over noise density (Hz/W).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::model::SystemConfig;

/// RNG stream used for fading draws; topology sampling uses stream 0.
const FADING_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// User -> cooperative node gains.
    pub h: Vec<f64>,
    /// Cooperative node -> BS gain.
    pub g: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub user_dist_m: Vec<f64>,
    pub coop_bs_dist_m: f64,
}

impl Topology {
    /// User distances drawn uniformly from `[lo, hi]` metres.
    pub fn uniform(n: usize, lo: f64, hi: f64, coop_bs_dist_m: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_dist_m = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        Topology {
            user_dist_m,
            coop_bs_dist_m,
        }
    }

    /// User distances used for the ten-user bandwidth/offloading study.
    pub fn ten_user_table() -> Self {
        Topology {
            user_dist_m: vec![17.42, 31.58, 38.47, 12.31, 8.35, 27.42, 48.18, 20.31, 42.33, 15.07],
            coop_bs_dist_m: 30.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fading {
    On,
    Off,
}

/// Linear pathloss `g0 (d / d0)^-a`.
pub fn pathloss(d_m: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(d_m > 0.0 && d_m.is_finite()) {
        return Err(Error::OutOfRange {
            what: "distance",
            value: d_m,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(cfg.pathloss_ref_gain * (d_m / cfg.pathloss_ref_dist_m).powf(-cfg.pathloss_exponent))
}

/// Power gain of a Rayleigh-faded link: an Exp(1) draw.
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = rng.sample(Exp1);
        if x > 0.0 {
            return x;
        }
    }
}

/// One block-fading realization of all links.
pub fn realize(topo: &Topology, cfg: &SystemConfig, seed: u64, fading: Fading) -> Result<ChannelRealization> {
    if topo.user_dist_m.len() != cfg.n_users {
        return Err(Error::Parse(format!(
            "topology has {} users, config has {}",
            topo.user_dist_m.len(),
            cfg.n_users
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(FADING_STREAM);
    let mut fade = || match fading {
        Fading::On => sample_rayleigh(&mut rng),
        Fading::Off => 1.0,
    };
    let sigma2 = cfg.noise_density_w_per_hz;
    let mut h = Vec::with_capacity(cfg.n_users);
    for &d in &topo.user_dist_m {
        h.push(pathloss(d, cfg)? * fade() / sigma2);
    }
    let g = pathloss(topo.coop_bs_dist_m, cfg)? * fade() / sigma2;
    Ok(ChannelRealization { h, g, seed })
}
