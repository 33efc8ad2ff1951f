//! Synthetic streams with known parameters.
//!
//! A stream interleaves `K` substreams round-robin: record `i` comes from
//! substream `i mod K`, whose statistic is Gaussian with mean `mu_k` and
//! standard deviation `sigma_k`, and whose predicate flag is an independent
//! Bernoulli(`p_k`) draw. At each shift position every substream's
//! parameters are redrawn.
//!
//! Proxies interpolate between the statistic and uniform noise,
//! `beta * g + (1 - beta) * U(0, 1)`, then get rescaled into `[0, 1]`.
//! [`generate_stream`] materializes the stream and min-max normalizes over
//! all of it. [`SynthGenerator`] yields records one at a time and instead
//! applies a fixed affine map derived from the parameter ranges, so huge
//! streams can be produced in constant memory.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, rng_for, StreamRng};
use crate::types::{OracleOutcome, Record};

/// Upper end of the range `sigma_k` is drawn from.
pub const SIGMA_MAX: f64 = 3.0;
/// Width of each substream's mean range: `mu_k` is drawn from
/// `[MU_SPACING * k, MU_SPACING * (k + 1)]`.
pub const MU_SPACING: f64 = 3.0;
/// Proxy interpolation weight used by the shift benchmark.
pub const DEFAULT_BETA: f64 = 0.75;

const STATS: u64 = 0x57A7;

/// Generating parameters of every substream in one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub p: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl StreamParams {
    pub fn new(p: Vec<f64>, sigma: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let params = Self { p, sigma, mu };
        params.validate()?;
        Ok(params)
    }

    /// Draws `p ~ U[0, 1]`, `sigma ~ U[0, 3]` and `mu_k ~ U[3k, 3k + 3]`,
    /// redrawing the rates in the (measure-zero) case where all are zero.
    pub fn sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let mut p: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        while !p.iter().any(|&x| x > 0.0) {
            p = (0..k).map(|_| rng.random::<f64>()).collect();
        }
        let sigma = (0..k).map(|_| rng.random_range(0.0..=SIGMA_MAX)).collect();
        let mu = (0..k)
            .map(|i| rng.random_range(MU_SPACING * i as f64..=MU_SPACING * (i + 1) as f64))
            .collect();
        Self { p, sigma, mu }
    }

    pub fn k(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.p.len();
        if k == 0 || self.sigma.len() != k || self.mu.len() != k {
            return Err(Error::invalid("stream parameters need one p, sigma and mu per substream"));
        }
        if self.p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("predicate rates must lie in [0, 1]"));
        }
        if !self.p.iter().any(|&p| p > 0.0) {
            return Err(Error::invalid("at least one substream needs a positive predicate rate"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("sigma must be finite and nonnegative, mu finite"));
        }
        Ok(())
    }

    /// Mean of the statistic over predicate-matching records when every
    /// substream contributes equally many records.
    pub fn matching_mean(&self) -> f64 {
        let num: f64 = self.p.iter().zip(&self.mu).map(|(p, m)| p * m).sum();
        num / self.p.iter().sum::<f64>()
    }

    /// Mean of the statistic over all records, ignoring the predicate.
    pub fn mean(&self) -> f64 {
        self.mu.iter().sum::<f64>() / self.mu.len() as f64
    }
}

/// A materialized synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub records: Vec<Record>,
    /// Positions where a new regime starts, ascending.
    pub shift_indices: Vec<u64>,
    /// `regimes[r]` generates records between consecutive shifts.
    pub regimes: Vec<StreamParams>,
}

impl SynthStream {
    pub fn k(&self) -> usize {
        self.regimes[0].k()
    }

    /// Regime in force at position `i`.
    pub fn regime_at(&self, i: u64) -> usize {
        self.shift_indices.partition_point(|&s| s <= i)
    }

    pub fn substream_of(&self, i: u64) -> usize {
        (i % self.k() as u64) as usize
    }

    pub fn iter_ok(&self) -> impl Iterator<Item = Result<Record>> + '_ {
        self.records.iter().copied().map(Ok)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Interpolates each statistic with uniform noise and min-max normalizes
/// the result. Constant input yields all `0.5`.
pub fn make_proxy(groundtruth: &[f64], beta: f64, seed: u64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let mut rng = rng_for(derive_seed(seed, label::PROXY_NOISE));
    let raw: Vec<f64> = groundtruth.iter().map(|&g| beta * g + (1.0 - beta) * rng.random::<f64>()).collect();
    Ok(min_max(raw))
}

fn min_max(mut values: Vec<f64>) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        values.iter_mut().for_each(|v| *v = 0.5);
        return values;
    }
    let span = hi - lo;
    values.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
    values
}

/// Regime schedule plus the random state for statistics and flags.
#[derive(Debug, Clone)]
struct Source {
    regimes: Vec<StreamParams>,
    shift_indices: Vec<u64>,
    rng: StreamRng,
    regime: usize,
}

impl Source {
    fn new(regimes: Vec<StreamParams>, shift_indices: Vec<u64>, seed: u64) -> Self {
        Self { regimes, shift_indices, rng: rng_for(derive_seed(seed, STATS)), regime: 0 }
    }

    fn random(n_shifts: usize, length: u64, k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one substream"));
        }
        if length < k as u64 {
            return Err(Error::invalid("stream must be at least as long as the number of substreams"));
        }
        if n_shifts as u64 >= length {
            return Err(Error::invalid("more shifts than positions in the stream"));
        }
        let mut rng = rng_for(derive_seed(seed, label::SHIFTS));
        let mut shifts: Vec<u64> = index::sample(&mut rng, (length - 1) as usize, n_shifts)
            .into_iter()
            .map(|i| i as u64 + 1)
            .collect();
        shifts.sort_unstable();
        let regimes = (0..=n_shifts).map(|_| StreamParams::sample(k, &mut rng)).collect();
        Ok(Self::new(regimes, shifts, seed))
    }

    /// Statistic and flag of position `i`; positions must come in order.
    fn draw(&mut self, i: u64) -> OracleOutcome {
        while self.regime < self.shift_indices.len() && self.shift_indices[self.regime] <= i {
            self.regime += 1;
        }
        let params = &self.regimes[self.regime];
        let s = (i % params.k() as u64) as usize;
        let z: f64 = self.rng.sample(StandardNormal);
        let stat = params.mu[s] + params.sigma[s] * z;
        let matches = self.rng.random::<f64>() < params.p[s];
        OracleOutcome::new(matches, stat)
    }
}

/// Stream of `length` records with `n_shifts` sudden parameter shifts at
/// uniformly drawn positions. Proxies are min-max normalized over the whole
/// stream.
pub fn generate_stream(n_shifts: usize, length: u64, k: usize, beta: f64, seed: u64) -> Result<SynthStream> {
    check_beta(beta)?;
    let source = Source::random(n_shifts, length, k, seed)?;
    materialize(source, length, beta, seed)
}

/// Stream of `length` records from a single fixed regime.
pub fn generate_stationary(params: &StreamParams, length: u64, beta: f64, seed: u64) -> Result<SynthStream> {
    params.validate()?;
    check_beta(beta)?;
    materialize(Source::new(vec![params.clone()], Vec::new(), seed), length, beta, seed)
}

fn materialize(mut source: Source, length: u64, beta: f64, seed: u64) -> Result<SynthStream> {
    let outcomes: Vec<OracleOutcome> = (0..length).map(|i| source.draw(i)).collect();
    let stats: Vec<f64> = outcomes.iter().map(|o| o.stat).collect();
    let proxies = make_proxy(&stats, beta, seed)?;
    let records = outcomes
        .into_iter()
        .zip(proxies)
        .enumerate()
        .map(|(i, (o, proxy))| Record::labeled(i as u64, proxy, o))
        .collect();
    Ok(SynthStream { records, shift_indices: source.shift_indices, regimes: source.regimes })
}

/// Constant-memory record generator.
///
/// Proxies map `beta * g + (1 - beta) * u` linearly from
/// `[beta * lo, beta * hi + 1 - beta]` onto `[0, 1]` and clamp, where
/// `[lo, hi] = [-3 * SIGMA_MAX, MU_SPACING * K + 3 * SIGMA_MAX]` covers the
/// statistic's range up to three standard deviations.
#[derive(Debug, Clone)]
pub struct SynthGenerator {
    source: Source,
    noise: StreamRng,
    beta: f64,
    lo: f64,
    span: f64,
    next: u64,
    length: u64,
}

impl SynthGenerator {
    pub fn new(n_shifts: usize, length: u64, k: usize, beta: f64, seed: u64) -> Result<Self> {
        check_beta(beta)?;
        let source = Source::random(n_shifts, length, k, seed)?;
        let g_lo = -3.0 * SIGMA_MAX;
        let g_hi = MU_SPACING * k as f64 + 3.0 * SIGMA_MAX;
        let lo = beta * g_lo;
        let hi = beta * g_hi + (1.0 - beta);
        Ok(Self {
            source,
            noise: rng_for(derive_seed(seed, label::PROXY_NOISE)),
            beta,
            lo,
            span: hi - lo,
            next: 0,
            length,
        })
    }

    pub fn shift_indices(&self) -> &[u64] {
        &self.source.shift_indices
    }

    pub fn regimes(&self) -> &[StreamParams] {
        &self.source.regimes
    }
}

impl Iterator for SynthGenerator {
    type Item = Record;

    fn next(&mut self) -> Option<Record> {
        if self.next >= self.length {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let outcome = self.source.draw(i);
        let raw = self.beta * outcome.stat + (1.0 - self.beta) * self.noise.random::<f64>();
        let proxy = ((raw - self.lo) / self.span).clamp(0.0, 1.0);
        Some(Record::labeled(i, proxy, outcome))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.length - self.next) as usize;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_stream(3, 2_000, 3, DEFAULT_BETA, 7).unwrap();
        let b = generate_stream(3, 2_000, 3, DEFAULT_BETA, 7).unwrap();
        let c = generate_stream(3, 2_000, 3, DEFAULT_BETA, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.shift_indices.len(), 3);
        assert_eq!(a.regimes.len(), 4);
        assert!(a.shift_indices.windows(2).all(|w| w[0] < w[1]));
        assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.proxy)));
    }

    #[test]
    fn parameter_ranges() {
        let mut rng = rng_for(1);
        for _ in 0..200 {
            let p = StreamParams::sample(3, &mut rng);
            p.validate().unwrap();
            for k in 0..3 {
                assert!((3.0 * k as f64..=3.0 * (k + 1) as f64).contains(&p.mu[k]));
                assert!((0.0..=SIGMA_MAX).contains(&p.sigma[k]));
            }
        }
    }

    #[test]
    fn proxy_edge_cases() {
        assert_eq!(make_proxy(&[2.0, 2.0, 2.0], 1.0, 1).unwrap(), vec![0.5; 3]);
        let p = make_proxy(&[1.0, 3.0, 2.0], 1.0, 1).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.5]);
        assert!(make_proxy(&[1.0], 1.5, 1).is_err());
    }

    #[test]
    fn regime_lookup() {
        let s = generate_stream(2, 100, 3, 0.5, 4).unwrap();
        assert_eq!(s.regime_at(0), 0);
        assert_eq!(s.regime_at(s.shift_indices[0]), 1);
        assert_eq!(s.regime_at(99), 2);
        assert_eq!(s.substream_of(5), 2);
    }

    #[test]
    fn streaming_generator_matches_materialized_labels() {
        let s = generate_stream(2, 500, 3, 0.75, 11).unwrap();
        let g = SynthGenerator::new(2, 500, 3, 0.75, 11).unwrap();
        assert_eq!(g.shift_indices(), &s.shift_indices[..]);
        let labels: Vec<_> = g.map(|r| r.label).collect();
        let expected: Vec<_> = s.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, expected);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_stream(0, 2, 3, 0.5, 1).is_err());
        assert!(generate_stream(10, 10, 3, 0.5, 1).is_err());
        assert!(generate_stream(0, 10, 0, 0.5, 1).is_err());
        assert_eq!(generate_stream(0, 10, 3, 0.5, 1).unwrap().shift_indices, Vec::<u64>::new());
    }
}
