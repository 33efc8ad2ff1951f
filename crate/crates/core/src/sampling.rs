//! Budget-respecting sampling primitives.

use rand::Rng;

use crate::error::Result;
use crate::types::{Allocation, BudgetPlan, Record, Stratification};

/// Fixed-capacity uniform sample of a stream of unknown length
/// (Algorithm R). After `n` offers every offered item is held with
/// probability `min(capacity / n, 1)`.
///
/// Items are only buffered; nothing is resolved until the owner drains the
/// reservoir, so evicted records never cost an oracle call.
#[derive(Debug, Clone)]
pub struct Reservoir<T = Record> {
    capacity: usize,
    seen: u64,
    held: Vec<T>,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, seen: 0, held: Vec::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) {
        self.seen += 1;
        if self.held.len() < self.capacity {
            self.held.push(item);
        } else if self.capacity > 0 {
            let j = rng.random_range(0..self.seen);
            if j < self.capacity as u64 {
                self.held[j as usize] = item;
            }
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn held(&self) -> &[T] {
        &self.held
    }

    pub fn into_held(self) -> Vec<T> {
        self.held
    }
}

/// Zero-based stratum of a record.
pub fn route(record: &Record, strata: &Stratification) -> Result<usize> {
    strata.route(record.proxy)
}

/// Uniform sample without replacement of at most `budget` records from a
/// stream whose length is not known in advance.
pub fn uniform_sample<I, R>(segment: I, budget: usize, rng: &mut R) -> Vec<Record>
where
    I: IntoIterator<Item = Record>,
    R: Rng + ?Sized,
{
    let mut reservoir = Reservoir::new(budget);
    for record in segment {
        reservoir.offer(record, rng);
    }
    reservoir.into_held()
}

/// Splits `total` into integer parts proportional to `weights` by the
/// largest-remainder method; parts sum to `total` exactly. Ties go to the
/// lower index. All-zero weights split evenly.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let k = weights.len();
    if k == 0 {
        return Vec::new();
    }
    let sum: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
    let shares: Vec<f64> = if sum > 0.0 {
        weights
            .iter()
            .map(|&w| if w.is_finite() && w > 0.0 { w / sum * total as f64 } else { 0.0 })
            .collect()
    } else {
        vec![total as f64 / k as f64; k]
    };
    let mut parts: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

/// Per-stratum reservoir capacities for one segment.
///
/// Every stratum first receives the plan's defensive floor; the remaining
/// calls follow the allocation's share above that floor, rounded by largest
/// remainder, so capacities sum to exactly `plan.total`.
pub fn capacities(alloc: &Allocation, plan: &BudgetPlan) -> Vec<u64> {
    let k = alloc.k() as u64;
    let floor = plan.defensive_floor();
    let rest = plan.total - floor * k;
    let n = plan.total as f64;
    let above: Vec<f64> = alloc.fractions().iter().map(|&a| (n * a - floor as f64).max(0.0)).collect();
    largest_remainder(&above, rest).into_iter().map(|c| c + floor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn records(n: u64) -> Vec<Record> {
        (0..n).map(|i| Record::new(i, 0.5)).collect()
    }

    #[test]
    fn zero_capacity_holds_nothing() {
        let mut rng = rng_for(1);
        let mut r = Reservoir::new(0);
        for rec in records(100) {
            r.offer(rec, &mut rng);
        }
        assert!(r.held().is_empty());
        assert_eq!(r.seen(), 100);
    }

    #[test]
    fn large_capacity_keeps_everything_in_order() {
        let mut rng = rng_for(1);
        let held = uniform_sample(records(50), 80, &mut rng);
        assert_eq!(held, records(50));
        assert!(uniform_sample(records(50), 0, &mut rng).is_empty());
    }

    #[test]
    fn held_size_is_min_of_seen_and_capacity() {
        let mut rng = rng_for(3);
        let mut r = Reservoir::new(7);
        for (i, rec) in records(30).into_iter().enumerate() {
            r.offer(rec, &mut rng);
            assert_eq!(r.held().len(), (i + 1).min(7));
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let a = uniform_sample(records(1000), 10, &mut rng_for(42));
        let b = uniform_sample(records(1000), 10, &mut rng_for(42));
        assert_eq!(a, b);
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 7).iter().sum::<u64>(), 7);
        assert_eq!(largest_remainder(&[0.0, 1.0], 9), vec![0, 9]);
        assert_eq!(largest_remainder(&[], 9), Vec::<u64>::new());
    }

    #[test]
    fn capacities_respect_floor_and_total() {
        let plan = BudgetPlan::with_defensive_fraction(500, 0.1, 3, 0.8).unwrap();
        let alloc = Allocation::new(vec![0.0, 0.2, 0.8]).unwrap();
        let caps = capacities(&alloc, &plan);
        assert_eq!(caps.iter().sum::<u64>(), 500);
        assert!(caps.iter().all(|&c| c >= plan.defensive_floor()));
        assert_eq!(caps[0], plan.defensive_floor());
        let uniform = capacities(&Allocation::uniform(3), &BudgetPlan::new(100, 0, 3, 0.8).unwrap());
        assert_eq!(uniform, vec![34, 33, 33]);
    }
}
