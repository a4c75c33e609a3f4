//! Simulation laboratory for battery/ultracapacitor hybrid energy storage
//! in electric vehicles.
//!
//! The crate models a battery-electric vehicle whose storage is a battery
//! pack in parallel with an ultracapacitor bank behind its own converter. A
//! speed-tracking driver follows a drive cycle, a management strategy splits
//! the electrical demand between the two devices each second, and a
//! semi-empirical fade model charges every ampere-hour against battery
//! life. On top of the stepped simulation sit the experiments: range until
//! empty, fleet aging over repeated cycles, strategy comparison, heuristic
//! tuning by particle swarm, capacity-fade identification by staged genetic
//! fits, and tabular Q-learning of threshold policies.
//!
//! Modules:
//! - [`cycles`]: drive-cycle parsing, resampling, and bundled fixtures
//! - [`plant`]: driver, electric machine, converters, vehicle dynamics
//! - [`storage`]: battery and ultracapacitor electrical models
//! - [`aging`]: severity-factor capacity-fade model
//! - [`ems`]: power-split strategies and Q-learning
//! - [`optimize`]: particle swarm, genetic algorithm, and the fitting flows
//! - [`harness`]: the assembled simulator and experiments
//! - [`config`]: every parameter, with TOML round-tripping

pub mod aging;
pub mod config;
pub mod cycles;
pub mod ems;
pub mod error;
pub mod harness;
pub mod optimize;
pub mod plant;
pub mod storage;
pub mod table;

pub use error::{Error, Result};
