//! Seeded discrete-event simulation of an AMR swarm coordinated by
//! load-balancing controller elections.

pub mod agents;
pub mod audit;
pub mod config;
pub mod engine;
pub mod faults;
pub mod metrics;
pub mod tasks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConfigError, SimConfig};
pub use engine::{run, RunOutput, SimError};
pub use metrics::MetricsReport;

/// Independent random stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
