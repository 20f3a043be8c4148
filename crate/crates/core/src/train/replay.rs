use rand::seq::index::sample;
use rand::Rng;

/// Returned by [`ReplayBuffer::sample`] while the buffer holds fewer
/// transitions than a batch needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmingUp {
    pub have: usize,
    pub need: usize,
}

/// Fixed-capacity ring buffer; once full, each push overwrites the oldest
/// entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch` distinct entries chosen uniformly, in random order.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>, WarmingUp> {
        if self.items.len() < batch || batch == 0 {
            return Err(WarmingUp { have: self.items.len(), need: batch.max(1) });
        }
        Ok(sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        (1..=4).for_each(|v| b.push(v));
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn full_batch_is_a_shuffle() {
        let mut b = ReplayBuffer::new(10);
        (0..6).for_each(|v| b.push(v));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut got: Vec<i32> = b.sample(6, &mut rng).unwrap().into_iter().copied().collect();
        got.sort();
        assert_eq!(got, (0..6).collect::<Vec<_>>());
        assert_eq!(b.sample(7, &mut rng).unwrap_err(), WarmingUp { have: 6, need: 7 });
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 20;
        let mut b = ReplayBuffer::new(n);
        (0..n).for_each(|v| b.push(v));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0f64; n];
        let (draws, batch) = (100_000 / 5, 5);
        for _ in 0..draws {
            for &i in b.sample(batch, &mut rng).unwrap() {
                counts[i] += 1.0;
            }
        }
        let expected = (draws * batch) as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 19 degrees of freedom: mean 19, sd sqrt(38).
        assert!(chi2 < 19.0 + 3.0 * 38f64.sqrt(), "chi2 {chi2}");
        for c in counts {
            assert!((c - expected).abs() < 3.0 * expected.sqrt(), "{c} vs {expected}");
        }
    }
}
