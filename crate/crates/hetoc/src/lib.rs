//! Runtime side of the `hetoc` compiler: device detection, the parallel
//! executor, duty-ratio sweeps and the command-line driver.

pub mod cli;
pub mod detect;
pub mod runtime;
pub mod sweep;
pub mod workload;
