use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{PreparedGraph, UnitRef};

/// A stored unit with its label and the graph it must be replayed with.
#[derive(Debug, Clone)]
pub struct BufferItem {
    /// The unit in the original dataset.
    pub unit: UnitRef,
    pub label: usize,
    pub graph: Arc<PreparedGraph>,
    /// Row of the unit inside `graph` for node units; `None` for graph units.
    pub node: Option<usize>,
}

/// Fixed-capacity replay memory with class-balancing replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    by_class: BTreeMap<usize, Vec<BufferItem>>,
    len: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            by_class: BTreeMap::new(),
            len: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        self.by_class.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferItem> {
        self.by_class.values().flatten()
    }

    /// Item at a flat position in class order.
    fn at(&self, mut idx: usize) -> &BufferItem {
        for items in self.by_class.values() {
            if idx < items.len() {
                return &items[idx];
            }
            idx -= items.len();
        }
        unreachable!("index within len")
    }

    /// Appends every item, then evicts until the capacity holds: each
    /// eviction takes a uniformly random item from the most populated class,
    /// lowest class id first on ties. Returns the number of evictions.
    pub fn extend_and_rebalance(&mut self, items: impl IntoIterator<Item = BufferItem>) -> usize {
        for item in items {
            self.by_class.entry(item.label).or_default().push(item);
            self.len += 1;
        }
        let mut removed = 0;
        while self.len > self.capacity {
            // max_by_key returns the last maximum; iterate in reverse so the lowest id wins ties.
            let (&class, _) = self
                .by_class
                .iter()
                .rev()
                .max_by_key(|(_, v)| v.len())
                .expect("non-empty buffer");
            let items = self.by_class.get_mut(&class).expect("present");
            let victim = self.rng.random_range(0..items.len());
            items.swap_remove(victim);
            if items.is_empty() {
                self.by_class.remove(&class);
            }
            self.len -= 1;
            removed += 1;
        }
        removed
    }

    /// `k` items drawn uniformly with replacement; empty if the buffer is.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Vec<&BufferItem> {
        if self.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| self.at(rng.random_range(0..self.len))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{prepared, rng};
    use proptest::prelude::*;

    fn items(graph: &Arc<PreparedGraph>, label: usize, n: usize, start: usize) -> Vec<BufferItem> {
        (0..n)
            .map(|i| BufferItem {
                unit: UnitRef::Graph(start + i),
                label,
                graph: graph.clone(),
                node: None,
            })
            .collect()
    }

    #[test]
    fn balances_two_classes() {
        let g = prepared(3, 2, 2, 0);
        let mut buf = ReplayBuffer::new(4, 1);
        assert_eq!(buf.extend_and_rebalance(items(&g, 0, 4, 0)), 0);
        assert_eq!(buf.extend_and_rebalance(items(&g, 1, 4, 4)), 4);
        assert_eq!(buf.class_counts(), BTreeMap::from([(0, 2), (1, 2)]));
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let g = prepared(3, 2, 2, 0);
        let mut buf = ReplayBuffer::new(0, 1);
        buf.extend_and_rebalance(items(&g, 0, 5, 0));
        assert!(buf.is_empty());
        assert!(buf.sample(3, &mut rng(0)).is_empty());
    }

    #[test]
    fn sampling_edge_cases() {
        let g = prepared(3, 2, 2, 0);
        let mut buf = ReplayBuffer::new(10, 1);
        buf.extend_and_rebalance(items(&g, 3, 1, 7));
        assert!(buf.sample(0, &mut rng(0)).is_empty());
        let s = buf.sample(3, &mut rng(0));
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|i| i.unit == UnitRef::Graph(7)));
    }

    #[test]
    fn sampling_is_uniform() {
        let g = prepared(3, 2, 2, 0);
        let mut buf = ReplayBuffer::new(10, 1);
        buf.extend_and_rebalance(items(&g, 0, 2, 0));
        buf.extend_and_rebalance(items(&g, 1, 3, 2));
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for item in buf.sample(draws, &mut rng(42)) {
            let UnitRef::Graph(i) = item.unit else { unreachable!() };
            counts[i] += 1;
        }
        let p = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = prepared(3, 2, 2, 0);
        let run = |seed| {
            let mut buf = ReplayBuffer::new(5, seed);
            buf.extend_and_rebalance(items(&g, 0, 6, 0));
            buf.extend_and_rebalance(items(&g, 1, 6, 6));
            buf.iter().map(|i| i.unit).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }

    proptest! {
        #[test]
        fn rebalance_invariants(
            capacity in 0usize..40,
            batches in proptest::collection::vec(proptest::collection::vec((0usize..6, 1usize..15), 1..4), 1..5),
            seed in any::<u64>(),
        ) {
            let g = prepared(3, 2, 2, 0);
            let mut buf = ReplayBuffer::new(capacity, seed);
            let mut next = 0;
            for batch in batches {
                let before = buf.class_counts();
                let mut added = Vec::new();
                for (class, n) in batch {
                    added.extend(items(&g, class, n, next));
                    next += n;
                }
                let mut offered = before.clone();
                for it in &added {
                    *offered.entry(it.label).or_default() += 1;
                }
                let removed = buf.extend_and_rebalance(added);
                prop_assert!(buf.len() <= capacity);
                prop_assert_eq!(buf.len(), buf.iter().count());
                let counts = buf.class_counts();
                if removed > 0 {
                    // Every class that lost items sits at the top, within one of each other.
                    let max = counts.values().copied().max().unwrap_or(0);
                    for (class, &had) in &offered {
                        let now = counts.get(class).copied().unwrap_or(0);
                        prop_assert!(now <= max);
                        if now < had {
                            prop_assert!(max - now <= 1);
                        }
                    }
                }
            }
        }
    }
}
