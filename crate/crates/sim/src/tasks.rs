//! Seeded Poisson task arrivals.

use agentflow::Tick;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::rng_stream;

const ARRIVALS: u64 = 1;
const OWNERS: u64 = 2;

/// Arrival ticks in `[start, end)` of a Poisson process with
/// `rate_per_min / 60 / ticks_per_second` arrivals per tick.
pub fn generate_tasks(
    rate_per_min: f64,
    start: Tick,
    end: Tick,
    ticks_per_second: u64,
    seed: u64,
) -> Vec<Tick> {
    let per_tick = rate_per_min / 60.0 / ticks_per_second as f64;
    if per_tick <= 0.0 || end <= start {
        return Vec::new();
    }
    let gaps = Exp::new(per_tick).expect("positive rate");
    let mut rng = rng_stream(seed, ARRIVALS);
    let mut t = start as f64;
    let mut out = Vec::new();
    loop {
        t += gaps.sample(&mut rng);
        if t >= end as f64 {
            return out;
        }
        out.push(t.floor() as Tick);
    }
}

/// Issuing AMR index for each task, drawn on its own stream so arrival times
/// do not depend on swarm size.
pub fn assign_owners(tasks: usize, n_amrs: usize, seed: u64) -> Vec<usize> {
    let mut rng: ChaCha8Rng = rng_stream(seed, OWNERS);
    (0..tasks).map(|_| rng.random_range(0..n_amrs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_empty() {
        assert!(generate_tasks(0.0, 0, 600_000, 1000, 1).is_empty());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        assert_eq!(
            generate_tasks(600.0, 0, 60_000, 1000, 9),
            generate_tasks(600.0, 0, 60_000, 1000, 9)
        );
        assert_ne!(
            generate_tasks(600.0, 0, 60_000, 1000, 9),
            generate_tasks(600.0, 0, 60_000, 1000, 10)
        );
    }

    #[test]
    fn ten_minutes_at_600_per_minute_is_within_three_sigma() {
        let sigma = 6000f64.sqrt();
        let mut total = 0.0;
        for seed in 0..30 {
            let n = generate_tasks(600.0, 0, 600_000, 1000, seed).len() as f64;
            assert!((n - 6000.0).abs() <= 3.0 * sigma, "seed {seed}: {n}");
            total += n;
        }
        // The 30-seed mean has standard error sigma / sqrt(30).
        let mean = total / 30.0;
        assert!(
            (mean - 6000.0).abs() <= 3.0 * sigma / 30f64.sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn arrivals_are_sorted_and_in_range() {
        let a = generate_tasks(1000.0, 100, 5_000, 1000, 3);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| (100..5_000).contains(&t)));
    }
}
