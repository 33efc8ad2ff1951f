//! Smoothing of strata boundaries and allocations across segments.

use serde::{Deserialize, Serialize};

/// How successive per-segment observations are blended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothing {
    /// `current' = alpha * latest + (1 - alpha) * current`. With `alpha = 0`
    /// the first observation is frozen; with `alpha = 1` only the latest
    /// observation counts.
    Ewma { alpha: f64 },
    /// Unweighted running mean over every observation so far.
    HistoryAverage,
}

/// A smoothed vector. The first observation initializes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    current: Option<Vec<f64>>,
    mode: Smoothing,
    observations: u64,
}

impl EwmaState {
    pub fn new(mode: Smoothing) -> Self {
        Self { current: None, mode, observations: 0 }
    }

    pub fn ewma(alpha: f64) -> Self {
        Self::new(Smoothing::Ewma { alpha })
    }

    pub fn mode(&self) -> Smoothing {
        self.mode
    }

    pub fn current(&self) -> Option<&[f64]> {
        self.current.as_deref()
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// Blends in one observation. An observation of a different length than
    /// the current vector replaces it.
    pub fn update(&mut self, x: &[f64]) -> &[f64] {
        self.observations += 1;
        let n = self.observations as f64;
        match self.current.as_mut() {
            Some(cur) if cur.len() == x.len() => {
                let weight = match self.mode {
                    Smoothing::Ewma { alpha } => alpha,
                    Smoothing::HistoryAverage => 1.0 / n,
                };
                for (c, &v) in cur.iter_mut().zip(x) {
                    *c = weight * v + (1.0 - weight) * *c;
                }
            }
            _ => self.current = Some(x.to_vec()),
        }
        self.current.as_deref().expect("initialized above")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_observation_initializes() {
        let mut s = EwmaState::ewma(0.3);
        assert!(s.current().is_none());
        assert_eq!(s.update(&[1.0, 2.0]), &[1.0, 2.0]);
    }

    #[test]
    fn ewma_orientation() {
        let mut s = EwmaState::ewma(0.8);
        s.update(&[0.0]);
        let v = s.update(&[1.0])[0];
        assert!((v - 0.8).abs() < 1e-15);
        let mut frozen = EwmaState::ewma(0.0);
        frozen.update(&[0.25]);
        frozen.update(&[0.9]);
        assert_eq!(frozen.current().unwrap(), &[0.25]);
        let mut latest = EwmaState::ewma(1.0);
        latest.update(&[0.25]);
        latest.update(&[0.9]);
        assert_eq!(latest.current().unwrap(), &[0.9]);
    }

    #[test]
    fn history_average_is_running_mean() {
        let mut s = EwmaState::new(Smoothing::HistoryAverage);
        for x in [1.0, 2.0, 6.0] {
            s.update(&[x]);
        }
        assert!((s.current().unwrap()[0] - 3.0).abs() < 1e-15);
    }
}
