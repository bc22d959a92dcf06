//! Scheduling DAG tasks over time-varying vehicular clouds.

pub mod channel;
pub mod dag;
pub mod mobility;
pub mod sched;
pub mod rfid;
pub mod baselines;
pub mod bench;
