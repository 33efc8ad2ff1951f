use crate::types::{Allocation, BudgetPlan, SegmentStats};

use super::smoothing::EwmaState;

/// Estimated optimal split of the dynamic budget from one segment's sample:
/// normalized `w_hat * sigma_hat`. When every product is zero the split
/// falls back to `w_hat` alone, and to uniform when that is zero as well.
pub fn raw_allocation(stats: &SegmentStats) -> Allocation {
    let k = stats.k().max(1);
    let products: Vec<f64> = stats.strata.iter().map(|c| c.w_hat * c.sigma_hat).collect();
    Allocation::from_weights(&products)
        .or_else(|_| {
            let w: Vec<f64> = stats.strata.iter().map(|c| c.w_hat).collect();
            Allocation::from_weights(&w)
        })
        .unwrap_or_else(|_| Allocation::uniform(k))
}

/// Adds the defensive floor: `a_k <- (N1 / K + N2 * a_k) / N`.
pub fn compose_defensive(dynamic: &Allocation, plan: &BudgetPlan) -> Allocation {
    let k = dynamic.k() as f64;
    let n = plan.total as f64;
    let n1 = plan.defensive as f64;
    let n2 = plan.dynamic() as f64;
    let fractions: Vec<f64> = dynamic.fractions().iter().map(|&a| (n1 / k + n2 * a) / n).collect();
    Allocation::from_weights(&fractions).unwrap_or_else(|_| Allocation::uniform(dynamic.k()))
}

/// Blends the previous segment's estimated split into the smoothed dynamic
/// allocation and returns the allocation to use next, defensive floor
/// included.
pub fn get_alloc(state: &mut EwmaState, prev_stats: &SegmentStats, plan: &BudgetPlan) -> Allocation {
    if prev_stats.total_count() > 0 {
        state.update(raw_allocation(prev_stats).fractions());
    }
    compose_defensive(&smoothed_dynamic(state, plan.k), plan)
}

pub(crate) fn smoothed_dynamic(state: &EwmaState, k: usize) -> Allocation {
    state
        .current()
        .and_then(|c| Allocation::from_weights(c).ok())
        .unwrap_or_else(|| Allocation::uniform(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::StratumStats;

    fn stats(cells: &[(u64, f64, f64)]) -> SegmentStats {
        let total: u64 = cells.iter().map(|c| c.0).sum();
        SegmentStats {
            strata: cells
                .iter()
                .map(|&(count, p_hat, sigma_hat)| StratumStats {
                    count,
                    p_hat,
                    sigma_hat,
                    w_hat: p_hat.sqrt() * count as f64 / total as f64,
                    ..Default::default()
                })
                .collect(),
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn defensive_composition() {
        let plan = BudgetPlan::new(100, 10, 2, 1.0).unwrap();
        let mut state = EwmaState::ewma(1.0);
        let a = get_alloc(&mut state, &stats(&[(50, 1.0, 1.0), (50, 1.0, 3.0)]), &plan);
        assert!(close(state.current().unwrap(), &[0.25, 0.75]));
        assert!(close(a.fractions(), &[0.275, 0.725]), "{a:?}");
    }

    #[test]
    fn symmetric_gives_uniform() {
        let plan = BudgetPlan::new(90, 9, 3, 0.8).unwrap();
        let mut state = EwmaState::ewma(0.8);
        let a = get_alloc(&mut state, &stats(&[(10, 0.5, 2.0); 3]), &plan);
        assert!(close(a.fractions(), &[1.0 / 3.0; 3]));
    }

    #[test]
    fn zero_rate_stratum_keeps_floor() {
        let plan = BudgetPlan::new(100, 30, 3, 0.8).unwrap();
        let mut state = EwmaState::ewma(0.8);
        let a = get_alloc(&mut state, &stats(&[(10, 0.0, 0.0), (10, 0.5, 1.0), (10, 1.0, 2.0)]), &plan);
        assert!(a.fractions()[0] >= 30.0 / 100.0 / 3.0 - 1e-12);
        assert!((a.fractions()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fallbacks() {
        let zero_sigma = stats(&[(10, 1.0, 0.0), (30, 1.0, 0.0)]);
        assert!(close(raw_allocation(&zero_sigma).fractions(), &[0.25, 0.75]));
        let nothing = stats(&[(10, 0.0, 0.0), (30, 0.0, 0.0)]);
        assert!(close(raw_allocation(&nothing).fractions(), &[0.5, 0.5]));
    }

    #[test]
    fn empty_segment_leaves_state() {
        let plan = BudgetPlan::new(100, 10, 2, 0.5).unwrap();
        let mut state = EwmaState::ewma(0.5);
        state.update(&[0.2, 0.8]);
        get_alloc(&mut state, &SegmentStats { strata: vec![StratumStats::default(); 2] }, &plan);
        assert_eq!(state.observations(), 1);
    }
}
