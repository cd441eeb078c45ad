//! Eviction probability of line 0 under LRU and its pseudo-LRU approximations.
//!
//! An 8-way target set is warmed up into a random or sequential initial
//! condition, then one of two access sequences is replayed in a loop. After
//! every loop iteration we record whether line 0 is still resident; the
//! fraction of trials where it is gone is the eviction probability.
//!
//! * Sequence 1: `0 1 2 3 4 5 6 7 8`
//! * Sequence 2: `0 (x) 1 (x) 2 ... (x) 7`, each optional `x` taken at random,
//!   with at least one taken per iteration.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::cache::CacheSet;
use crate::error::{Result, SimError};
use crate::par;
use crate::policy::PolicyKind;
use crate::rng::{derive_seed, stream_rng};

/// Associativity of the analysed set.
pub const WAYS: usize = 8;
/// Tag of the conflicting line: line 8 of Sequence 1 and line `x` of Sequence 2.
pub const CONFLICT_TAG: u64 = 8;
/// First tag of the pool of unrelated lines used during warm-up.
pub const POOL_BASE: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sequence {
    Seq1,
    Seq2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitCondition {
    Random,
    Sequential,
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sequence::Seq1 => "seq1",
            Sequence::Seq2 => "seq2",
        })
    }
}

impl FromStr for Sequence {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seq1" | "1" => Ok(Sequence::Seq1),
            "seq2" | "2" => Ok(Sequence::Seq2),
            o => Err(SimError::Parameter(format!("unknown sequence `{o}`"))),
        }
    }
}

impl fmt::Display for InitCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitCondition::Random => "random",
            InitCondition::Sequential => "sequential",
        })
    }
}

impl FromStr for InitCondition {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "rand" => Ok(InitCondition::Random),
            "sequential" | "seq" => Ok(InitCondition::Sequential),
            o => Err(SimError::Parameter(format!("unknown initial condition `{o}`"))),
        }
    }
}

/// How the initial condition is produced.
///
/// Warm-up is `scramble` uniform accesses over lines 0-7 and the pool (so the
/// set holds some of lines 0-7 and probably other lines, in random ways),
/// followed by `passes` passes over lines 0-7 (shuffled for the random
/// condition, ascending for the sequential one). During a pass each line may
/// be followed by a pool line with probability `insert_prob`; `tail` more pool
/// lines are touched at the very end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupParams {
    pub pool_size: u64,
    pub scramble: usize,
    pub passes: usize,
    pub insert_prob: f64,
    /// Whether the last line of a pass may be followed by an insertion too.
    pub insert_after_last: bool,
    pub tail: usize,
}

impl WarmupParams {
    /// Calibrated defaults for each initial condition.
    pub fn for_init(init: InitCondition) -> Self {
        match init {
            InitCondition::Random => Self {
                pool_size: 4,
                scramble: 8,
                passes: 1,
                insert_prob: 0.375,
                insert_after_last: false,
                tail: 0,
            },
            InitCondition::Sequential => Self {
                pool_size: 3,
                scramble: 14,
                passes: 2,
                insert_prob: 0.0,
                insert_after_last: true,
                tail: 1,
            },
        }
    }

    /// No scrambling and no foreign lines: just the ordered pass.
    pub fn clean() -> Self {
        Self { pool_size: 0, scramble: 0, passes: 1, insert_prob: 0.0, insert_after_last: false, tail: 0 }
    }
}

/// Probability that each optional `x` slot of Sequence 2 is taken.
pub const DEFAULT_SEQ2_INSERT_PROB: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSpec {
    pub policy: PolicyKind,
    pub sequence: Sequence,
    pub init: InitCondition,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    pub warmup: WarmupParams,
    pub seq2_insert_prob: f64,
}

impl AnalysisSpec {
    pub fn new(policy: PolicyKind, sequence: Sequence, init: InitCondition, iterations: usize) -> Self {
        Self {
            policy,
            sequence,
            init,
            iterations,
            trials: 10_000,
            seed: 0,
            warmup: WarmupParams::for_init(init),
            seq2_insert_prob: DEFAULT_SEQ2_INSERT_PROB,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.trials == 0 {
            return Err(SimError::Parameter("iterations and trials must be at least 1".into()));
        }
        let probs = [self.warmup.insert_prob, self.seq2_insert_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.seq2_insert_prob == 0.0 {
            return Err(SimError::Parameter(
                "insertion probabilities must lie in [0,1] (Sequence 2 needs a nonzero one)".into(),
            ));
        }
        if self.warmup.pool_size == 0 && (self.warmup.insert_prob > 0.0 || self.warmup.tail > 0) {
            return Err(SimError::Parameter("warm-up insertions need a non-empty pool".into()));
        }
        self.policy.validate(WAYS)
    }
}

/// Eviction probability of line 0, one entry per loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionProbability {
    pub trials: usize,
    pub per_iteration: Vec<f64>,
}

impl EvictionProbability {
    /// Probability after the last iteration.
    pub fn p(&self) -> f64 {
        *self.per_iteration.last().expect("at least one iteration")
    }

    pub fn at(&self, iteration: usize) -> f64 {
        self.per_iteration[iteration - 1]
    }

    pub fn stderr_at(&self, iteration: usize) -> f64 {
        let p = self.at(iteration);
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Brings `set` into the requested initial condition.
pub fn warm_up<R: RngCore>(set: &mut CacheSet, init: InitCondition, params: &WarmupParams, rng: &mut R) {
    let universe = WAYS as u64 + params.pool_size;
    let pool_line = |rng: &mut R| POOL_BASE + rng.random_range(0..params.pool_size);
    for _ in 0..params.scramble {
        let pick = rng.random_range(0..universe);
        set.access(if pick < WAYS as u64 { pick } else { POOL_BASE + pick - WAYS as u64 });
    }
    for _ in 0..params.passes {
        let mut order: Vec<u64> = (0..WAYS as u64).collect();
        if init == InitCondition::Random {
            order.shuffle(rng);
        }
        for (i, line) in order.into_iter().enumerate() {
            set.access(line);
            let may_insert = i + 1 < WAYS || params.insert_after_last;
            if may_insert && params.pool_size > 0 && rng.random_bool(params.insert_prob) {
                set.access(pool_line(rng));
            }
        }
    }
    for _ in 0..params.tail {
        set.access(pool_line(rng));
    }
}

/// Replays one iteration of `sequence` into `set`.
pub fn run_sequence<R: RngCore>(set: &mut CacheSet, sequence: Sequence, insert_prob: f64, rng: &mut R) {
    match sequence {
        Sequence::Seq1 => {
            for line in 0..=WAYS as u64 {
                set.access(line);
            }
        }
        Sequence::Seq2 => {
            let slots = WAYS - 1;
            let taken = loop {
                let t: Vec<bool> = (0..slots).map(|_| rng.random_bool(insert_prob)).collect();
                if t.iter().any(|&b| b) {
                    break t;
                }
            };
            for line in 0..WAYS {
                set.access(line as u64);
                if line < slots && taken[line] {
                    set.access(CONFLICT_TAG);
                }
            }
        }
    }
}

/// Per-iteration eviction flags of one trial.
pub fn run_trial(spec: &AnalysisSpec, trial: usize) -> Vec<bool> {
    let mut rng = stream_rng(spec.seed, &[trial as u64]);
    let mut set = CacheSet::new(spec.policy, WAYS, derive_seed(spec.seed, &[trial as u64, 1]))
        .expect("validated policy");
    warm_up(&mut set, spec.init, &spec.warmup, &mut rng);
    (0..spec.iterations)
        .map(|_| {
            run_sequence(&mut set, spec.sequence, spec.seq2_insert_prob, &mut rng);
            !set.contains(0)
        })
        .collect()
}

fn tally(spec: &AnalysisSpec, flags: &[Vec<bool>]) -> EvictionProbability {
    let mut counts = vec![0usize; spec.iterations];
    for f in flags {
        for (c, &e) in counts.iter_mut().zip(f) {
            *c += e as usize;
        }
    }
    EvictionProbability {
        trials: spec.trials,
        per_iteration: counts.iter().map(|&c| c as f64 / spec.trials as f64).collect(),
    }
}

/// Runs all trials (in parallel when enabled) and tallies the probabilities.
pub fn run_table1(spec: &AnalysisSpec) -> Result<EvictionProbability> {
    spec.validate()?;
    let flags = par::map_indexed(spec.trials, |t| run_trial(spec, t));
    Ok(tally(spec, &flags))
}

/// Single-threaded twin of [`run_table1`].
pub fn run_table1_seq(spec: &AnalysisSpec) -> Result<EvictionProbability> {
    spec.validate()?;
    let flags = par::map_indexed_seq(spec.trials, |t| run_trial(spec, t));
    Ok(tally(spec, &flags))
}

/// One row of the published-layout table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub policy: PolicyKind,
    pub sequence: Sequence,
    pub init: InitCondition,
    pub iteration: usize,
    pub p: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Loop-iteration rows reported per cell; the last stands for "8 or more".
pub const REPORTED_ITERATIONS: [usize; 4] = [1, 2, 3, 8];

/// Runs every (init, sequence) cell for each policy and returns rows in
/// policy, init, sequence, iteration order. Each initial condition uses its
/// calibrated warm-up; the other knobs come from `base`.
pub fn table1(policies: &[PolicyKind], trials: usize, seed: u64, base: &AnalysisSpec) -> Result<Vec<TableRow>> {
    let max_iter = *REPORTED_ITERATIONS.last().unwrap();
    let mut rows = Vec::new();
    for (pi, &policy) in policies.iter().enumerate() {
        for (ii, init) in [InitCondition::Random, InitCondition::Sequential].into_iter().enumerate() {
            for (si, sequence) in [Sequence::Seq1, Sequence::Seq2].into_iter().enumerate() {
                let spec = AnalysisSpec {
                    policy,
                    sequence,
                    init,
                    iterations: max_iter,
                    trials,
                    seed: derive_seed(seed, &[pi as u64, ii as u64, si as u64]),
                    warmup: WarmupParams::for_init(init),
                    ..*base
                };
                let ev = run_table1(&spec)?;
                rows.extend(REPORTED_ITERATIONS.iter().map(|&k| TableRow {
                    policy,
                    sequence,
                    init,
                    iteration: k,
                    p: ev.at(k),
                    stderr: ev.stderr_at(k),
                    trials,
                }));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(policy: PolicyKind, sequence: Sequence, init: InitCondition, iterations: usize) -> AnalysisSpec {
        AnalysisSpec::new(policy, sequence, init, iterations).with_trials(500).with_seed(11)
    }

    #[test]
    fn sequential_init_without_insertions_holds_lines_in_order() {
        let mut set = CacheSet::new(PolicyKind::TrueLru, WAYS, 0).unwrap();
        let params = WarmupParams::clean();
        warm_up(&mut set, InitCondition::Sequential, &params, &mut stream_rng(0, &[]));
        assert_eq!(set.resident_tags(), (0..8).collect::<Vec<_>>());
        match set.state() {
            crate::policy::ReplacementState::TrueLru { ages } => {
                assert_eq!(ages, &vec![7, 6, 5, 4, 3, 2, 1, 0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn random_init_is_reproducible() {
        let params = WarmupParams::for_init(InitCondition::Random);
        let run = || {
            let mut set = CacheSet::new(PolicyKind::TreePlru, WAYS, 0).unwrap();
            warm_up(&mut set, InitCondition::Random, &params, &mut stream_rng(42, &[3]));
            set
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lru_always_evicts_line_zero() {
        for sequence in [Sequence::Seq1, Sequence::Seq2] {
            for init in [InitCondition::Random, InitCondition::Sequential] {
                let ev = run_table1(&spec(PolicyKind::TrueLru, sequence, init, 4)).unwrap();
                assert!(ev.per_iteration.iter().all(|&p| p == 1.0), "{sequence} {init}");
            }
        }
    }

    #[test]
    fn seq2_always_takes_an_insertion() {
        let mut set = CacheSet::new(PolicyKind::TrueLru, 16, 0).unwrap();
        let mut rng = stream_rng(5, &[]);
        for _ in 0..200 {
            run_sequence(&mut set, Sequence::Seq2, 0.05, &mut rng);
        }
        assert!(set.contains(CONFLICT_TAG));
    }

    #[test]
    fn same_seed_same_probability() {
        let s = spec(PolicyKind::BIT_PLRU, Sequence::Seq2, InitCondition::Random, 3);
        assert_eq!(run_table1(&s).unwrap(), run_table1(&s).unwrap());
        assert_eq!(run_table1(&s).unwrap(), run_table1_seq(&s).unwrap());
    }

    #[test]
    fn trial_count_one_gives_zero_or_one() {
        let s = spec(PolicyKind::TreePlru, Sequence::Seq1, InitCondition::Random, 3).with_trials(1);
        let ev = run_table1(&s).unwrap();
        assert!(ev.per_iteration.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn rejects_zero_iterations() {
        assert!(run_table1(&spec(PolicyKind::TreePlru, Sequence::Seq1, InitCondition::Random, 0)).is_err());
    }
}
