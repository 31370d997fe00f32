use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Draws training batches with replacement so that each draw is positive with
/// probability `max(min_fraction, empirical positive rate)`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    p_pos: f64,
}

impl WeightedSampler {
    pub fn new(task_id: &str, labels: &[u8], min_fraction: f64) -> Result<Self> {
        let (positives, negatives): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| labels[i] == 1);
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::DegenerateLabels(task_id.to_string()));
        }
        let rate = positives.len() as f64 / labels.len() as f64;
        Ok(Self {
            positives,
            negatives,
            p_pos: rate.max(min_fraction),
        })
    }

    pub fn p_pos(&self) -> f64 {
        self.p_pos
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let pool = if rng.gen_bool(self.p_pos) {
            &self.positives
        } else {
            &self.negatives
        };
        pool[rng.gen_range(0..pool.len())]
    }

    /// One epoch: `ceil(n / batch_size)` batches of `batch_size` draws.
    pub fn epoch<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let batches = self.len().div_ceil(batch_size);
        (0..batches)
            .map(|_| (0..batch_size).map(|_| self.draw(rng)).collect())
            .collect()
    }
}

/// A random permutation of `0..n` cut into batches (the last may be short).
pub fn shuffled_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize, positives: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < positives)).collect()
    }

    #[test]
    fn probability_follows_max_rule() {
        let s = WeightedSampler::new("t", &labels(1000, 10), 0.3).unwrap();
        assert_eq!(s.p_pos(), 0.3);
        // 9.6 expected positives per batch of 32.
        assert!((s.p_pos() * 32.0 - 9.6).abs() < 1e-12);
        let s = WeightedSampler::new("t", &labels(100, 50), 0.3).unwrap();
        assert_eq!(s.p_pos(), 0.5);
    }

    #[test]
    fn monte_carlo_positive_fraction() {
        let ys = labels(10_000, 100);
        let s = WeightedSampler::new("t", &ys, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 10_000;
        let pos = (0..draws).filter(|_| ys[s.draw(&mut rng)] == 1).count();
        let frac = pos as f64 / draws as f64;
        assert!((frac - 0.30).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn epoch_shape_and_determinism() {
        let s = WeightedSampler::new("t", &labels(70, 7), 0.3).unwrap();
        let a = s.epoch(32, &mut ChaCha8Rng::seed_from_u64(4));
        let b = s.epoch(32, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a
            .iter()
            .all(|batch| batch.len() == 32 && batch.iter().all(|&i| i < 70)));
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            WeightedSampler::new("t", &[1, 1, 1], 0.3),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn shuffled_batches_cover_once() {
        let b = shuffled_batches(20, 8, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [8, 8, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }
}
