//! Minimum average-power offloading for multi-user mobile edge computing
//! with a cooperative relay node and streaming tasks.
//!
//! * [`case1`]: infinite BS capacity, fractional programming around block
//!   coordinate descent with closed-form bandwidth/ratio steps.
//! * [`case2`]: finite BS capacity, fractional programming around a
//!   difference-of-convex iteration.
//! * [`oracle`]: brute-force and multistart checks.
//! * [`bench`]: baselines, parameter sweeps and CSV output.

pub mod bench;
pub mod case1;
pub mod case2;
pub mod channel;
pub mod config;
pub mod convex;
pub mod error;
pub mod model;
pub mod objective;
pub mod oracle;

pub use error::{Error, Result};
