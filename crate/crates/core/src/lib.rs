//! Load balancing for many-query model evaluation.
//!
//! A [`balancer`] fronts a pool of model servers speaking a small HTTP +
//! JSON [`protocol`], starting servers through a scheduler [`backends`]
//! implementation as demand requires. The [`backends::sim`] emulator replays
//! the same workloads under per-job and bulk allocation, [`metrics`] turns
//! task timestamps into overhead and SLR figures, and [`clients`] provides
//! the sampling, experiment and quadrature drivers used by [`bench`].

pub mod backends;
pub mod balancer;
pub mod bench;
pub mod clients;
pub mod dist;
pub mod metrics;
pub mod models;
pub mod protocol;
pub mod time;

pub use time::Nanos;
