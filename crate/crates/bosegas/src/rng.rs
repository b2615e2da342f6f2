//! Deterministic random-number streams.
//!
//! Every stochastic routine takes a 64-bit seed and derives independent
//! streams from it with ChaCha's counter-mode stream facility, so results are
//! reproducible bit for bit regardless of thread count: worker `shard` always
//! sees the same stream, and outputs are merged in shard order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for the given seed and shard index. Distinct shards are independent
/// streams of the same keyed cipher.
pub fn stream_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    rng
}

/// One Poisson(mean) draw. Uses inversion for small means and the
/// transformed-rejection method for large ones.
pub fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    use rand::distributions::Distribution;
    if mean <= 0.0 {
        return 0;
    }
    let dist = rand_distr::Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream_reproduces() {
        let a: Vec<u64> = stream_rng(7, 3).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u64> = stream_rng(7, 3).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_shards_differ() {
        let a: Vec<u64> = stream_rng(7, 0).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u64> = stream_rng(7, 1).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn poisson_mean_is_roughly_right() {
        let mut rng = stream_rng(11, 0);
        let n = 20_000;
        let mean = 4.5;
        let total: u64 = (0..n).map(|_| poisson(&mut rng, mean)).sum();
        let observed = total as f64 / n as f64;
        // 5 sigma band for the sample mean of Poisson(4.5).
        let band = 5.0 * (mean / n as f64).sqrt();
        assert!((observed - mean).abs() < band, "{observed} vs {mean}");
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = stream_rng(1, 0);
        assert_eq!(poisson(&mut rng, 0.0), 0);
    }
}
