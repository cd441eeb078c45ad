//! Latency model of the pointer-chasing probe.
//!
//! A probe is timed as `chain_length` dependent loads that always hit, followed
//! by the probed load itself. Per-access latencies are uniform over the
//! configured ranges; an optional jitter and a coarse timestamp quantum sit on
//! top.

use rand::Rng;

use crate::error::{Result, SimError};

/// Latency class of one timed access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Hit,
    Miss,
}

impl Class {
    pub fn is_hit(self) -> bool {
        self == Class::Hit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyProfile {
    /// Inclusive cycle range of an L1 hit.
    pub hit: (u64, u64),
    /// Inclusive cycle range of an L1 miss (served by L2).
    pub miss: (u64, u64),
    /// Upper bound of a uniform extra delay added to every measurement.
    pub jitter: u64,
    pub chain_length: u64,
    /// Timestamp granularity; totals are rounded down to a multiple of it.
    pub quantum: u64,
    /// Totals at or above this are classified as misses.
    pub threshold: u64,
}

impl LatencyProfile {
    /// Sandy Bridge / Skylake L1D and L2 latencies.
    pub fn intel() -> Self {
        Self { hit: (4, 5), miss: (12, 12), jitter: 0, chain_length: 7, quantum: 1, threshold: 40 }
    }

    /// Zen: L2 at 17 cycles, with a coarse timestamp counter.
    pub fn amd_zen(quantum: u64) -> Self {
        Self { hit: (4, 5), miss: (17, 17), jitter: 0, chain_length: 7, quantum, threshold: 45 }
    }

    pub fn with_jitter(mut self, jitter: u64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_threshold(mut self, threshold: u64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SimError::Parameter(format!("latency profile: {what}")));
        if self.hit.0 > self.hit.1 || self.miss.0 > self.miss.1 {
            return bad("empty latency range");
        }
        if self.quantum == 0 {
            return bad("quantum must be at least 1");
        }
        if self.miss.0 <= self.hit.0 && self.miss.1 <= self.hit.1 {
            return bad("miss latency must exceed hit latency");
        }
        Ok(())
    }

    /// Smallest and largest total a probe of `class` can produce.
    pub fn total_range(&self, class: Class) -> (u64, u64) {
        let (lo, hi) = match class {
            Class::Hit => self.hit,
            Class::Miss => self.miss,
        };
        let q = |v: u64| v / self.quantum * self.quantum;
        (
            q(self.chain_length * self.hit.0 + lo),
            q(self.chain_length * self.hit.1 + hi + self.jitter),
        )
    }

    pub fn classify(&self, total_cycles: u64) -> Class {
        if total_cycles >= self.threshold {
            Class::Miss
        } else {
            Class::Hit
        }
    }
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self::intel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub total_cycles: u64,
    pub classified: Class,
}

fn sample_total<R: Rng + ?Sized>(p: &LatencyProfile, class: Class, rng: &mut R) -> u64 {
    let mut total = 0;
    for _ in 0..p.chain_length {
        total += rng.random_range(p.hit.0..=p.hit.1);
    }
    let (lo, hi) = match class {
        Class::Hit => p.hit,
        Class::Miss => p.miss,
    };
    total += rng.random_range(lo..=hi);
    if p.jitter > 0 {
        total += rng.random_range(0..=p.jitter);
    }
    total / p.quantum * p.quantum
}

/// Times one probe whose true outcome is `class`.
pub fn measure<R: Rng + ?Sized>(profile: &LatencyProfile, class: Class, rng: &mut R) -> Observation {
    let total_cycles = sample_total(profile, class, rng);
    Observation { total_cycles, classified: profile.classify(total_cycles) }
}

/// Picks a hit/miss threshold from `samples` observations of each class.
///
/// Separable samples give the midpoint between the slowest hit and the fastest
/// miss; overlapping ones give the threshold with the fewest misclassified
/// samples (lowest such threshold on ties).
pub fn calibrate_threshold<R: Rng + ?Sized>(profile: &LatencyProfile, samples: usize, rng: &mut R) -> Result<u64> {
    profile.validate()?;
    if samples < 2 {
        return Err(SimError::Parameter("calibration needs at least 2 samples per class".into()));
    }
    let hits: Vec<u64> = (0..samples).map(|_| sample_total(profile, Class::Hit, rng)).collect();
    let misses: Vec<u64> = (0..samples).map(|_| sample_total(profile, Class::Miss, rng)).collect();
    let max_hit = *hits.iter().max().unwrap();
    let min_miss = *misses.iter().min().unwrap();
    if max_hit < min_miss {
        // ties go to Miss, so any t in (max_hit, min_miss] separates
        return Ok((max_hit + min_miss).div_ceil(2).max(max_hit + 1));
    }
    let lo = *hits.iter().min().unwrap();
    let hi = *misses.iter().max().unwrap();
    let errors = |t: u64| hits.iter().filter(|&&h| h >= t).count() + misses.iter().filter(|&&m| m < t).count();
    let (best, err) = (lo..=hi + 1).map(|t| (t, errors(t))).min_by_key(|&(t, e)| (e, t)).unwrap();
    if err * 2 >= samples {
        return Err(SimError::Unclassifiable(format!(
            "best threshold {best} still misclassifies {err} of {} samples",
            2 * samples
        )));
    }
    Ok(best)
}

/// Fraction of `samples` probes per class that `profile` misclassifies.
pub fn misclassification_rate<R: Rng + ?Sized>(profile: &LatencyProfile, samples: usize, rng: &mut R) -> f64 {
    let mut wrong = 0;
    for class in [Class::Hit, Class::Miss] {
        for _ in 0..samples {
            if measure(profile, class, rng).classified != class {
                wrong += 1;
            }
        }
    }
    wrong as f64 / (2 * samples) as f64
}
