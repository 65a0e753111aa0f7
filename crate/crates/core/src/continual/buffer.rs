use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class rehearsal memory filled by reservoir sampling, so each class
/// keeps a uniform sample of everything offered for it.
#[derive(Debug, Clone)]
pub struct RehearsalBuffer<T> {
    capacity: usize,
    stores: BTreeMap<usize, Reservoir<T>>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
struct Reservoir<T> {
    items: Vec<T>,
    seen: u64,
}

impl<T> RehearsalBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        RehearsalBuffer {
            capacity,
            stores: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Offers one item of `class`.
    pub fn offer(&mut self, class: usize, item: T) {
        let store = self.stores.entry(class).or_insert_with(|| Reservoir {
            items: Vec::new(),
            seen: 0,
        });
        if store.items.len() < self.capacity {
            store.items.push(item);
        } else {
            let j = self.rng.gen_range(0..=store.seen);
            if (j as usize) < self.capacity {
                store.items[j as usize] = item;
            }
        }
        store.seen += 1;
    }

    pub fn update(&mut self, samples: impl IntoIterator<Item = (usize, T)>) {
        for (class, item) in samples {
            self.offer(class, item);
        }
    }

    pub fn len(&self) -> usize {
        self.stores.values().map(|s| s.items.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_len(&self, class: usize) -> usize {
        self.stores.get(&class).map_or(0, |s| s.items.len())
    }

    pub fn classes(&self) -> Vec<usize> {
        self.stores.keys().copied().collect()
    }

    /// All stored items with their class, in class order.
    pub fn items(&self) -> Vec<(usize, &T)> {
        self.stores
            .iter()
            .flat_map(|(&c, s)| s.items.iter().map(move |t| (c, t)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_stream_is_kept_whole() {
        let mut b = RehearsalBuffer::new(50, 1);
        b.update((0..10).map(|i| (3, i)));
        assert_eq!(b.class_len(3), 10);
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn long_stream_is_capped() {
        let mut b = RehearsalBuffer::new(50, 1);
        b.update((0..1000).map(|i| (0, i)));
        b.update((0..1000).map(|i| (1, i)));
        assert_eq!(b.class_len(0), 50);
        assert_eq!(b.len(), 100);
        assert_eq!(b.classes(), vec![0, 1]);
    }

    #[test]
    fn retention_frequency_matches_binomial() {
        let (n, cap, trials) = (100usize, 50usize, 10_000usize);
        let mut kept = vec![0usize; n];
        for trial in 0..trials {
            let mut b = RehearsalBuffer::new(cap, trial as u64);
            b.update((0..n).map(|i| (0, i)));
            for (_, &i) in b.items() {
                kept[i] += 1;
            }
        }
        let p = cap as f64 / n as f64;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        for (i, &k) in kept.iter().enumerate() {
            let f = k as f64 / trials as f64;
            assert!((f - p).abs() <= 3.0 * sd, "element {i}: {f}");
        }
    }
}
