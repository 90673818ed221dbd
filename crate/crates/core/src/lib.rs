pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod gc;
pub mod metrics;
pub mod policy;
pub mod sched;
pub mod sim;
pub mod stats;
pub mod time;
pub mod trace;
pub mod workload;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
pub use time::SimTime;
