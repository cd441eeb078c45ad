//! Replacement policies and their per-set state.
//!
//! Every policy keeps its state per set and exposes the same three hooks:
//! [`ReplacementState::victim`] on a miss into a full set, [`ReplacementState::on_hit`]
//! and [`ReplacementState::on_fill`]. The recency-based policies treat hits and
//! fills alike; FIFO only reacts to fills and Random to nothing at all.

use std::fmt;
use std::str::FromStr;

use crate::cache::LineMeta;
use crate::error::{Result, SimError};
use crate::rng::SplitMix64;

/// Largest associativity supported (state is kept in 64-bit masks).
pub const MAX_WAYS: usize = 64;

/// What Bit-PLRU does when an access would leave every MRU-bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BitPlruReset {
    /// Clear every bit, then set the accessed way's bit again.
    #[default]
    KeepAccessed,
    /// Clear every bit, including the one just accessed.
    ClearAll,
}

/// Replacement policy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    TrueLru,
    TreePlru,
    BitPlru(BitPlruReset),
    Fifo,
    Random,
}

impl PolicyKind {
    pub const BIT_PLRU: PolicyKind = PolicyKind::BitPlru(BitPlruReset::KeepAccessed);

    /// The policies with a recency state that the channels can exploit.
    pub const LRU_FAMILY: [PolicyKind; 3] =
        [PolicyKind::TrueLru, PolicyKind::TreePlru, PolicyKind::BIT_PLRU];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::TrueLru => "lru",
            PolicyKind::TreePlru => "tree-plru",
            PolicyKind::BitPlru(BitPlruReset::KeepAccessed) => "bit-plru",
            PolicyKind::BitPlru(BitPlruReset::ClearAll) => "bit-plru-clear",
            PolicyKind::Fifo => "fifo",
            PolicyKind::Random => "random",
        }
    }

    /// Checks that the policy can manage a set of `ways` ways.
    pub fn validate(self, ways: usize) -> Result<()> {
        if ways == 0 || ways > MAX_WAYS {
            return Err(SimError::Geometry(format!(
                "associativity must be in 1..={MAX_WAYS}, got {ways}"
            )));
        }
        if self == PolicyKind::TreePlru && !ways.is_power_of_two() {
            return Err(SimError::TreeAssociativity(ways));
        }
        Ok(())
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lru" | "true-lru" | "truelru" => Ok(PolicyKind::TrueLru),
            "tree-plru" | "treeplru" | "plru" => Ok(PolicyKind::TreePlru),
            "bit-plru" | "bitplru" | "mru" => Ok(PolicyKind::BIT_PLRU),
            "bit-plru-clear" => Ok(PolicyKind::BitPlru(BitPlruReset::ClearAll)),
            "fifo" => Ok(PolicyKind::Fifo),
            "random" | "rand" => Ok(PolicyKind::Random),
            other => Err(SimError::Parameter(format!("unknown policy `{other}`"))),
        }
    }
}

/// Per-set replacement metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplacementState {
    /// `ages[way]`, a permutation of `0..N` with 0 the most recently used.
    TrueLru { ages: Vec<u8> },
    /// N-1 node bits in heap order (children of node `i` are `2i+1`, `2i+2`).
    /// A clear bit sends the victim search to the left child.
    TreePlru { bits: u64, ways: usize },
    /// One MRU-bit per way.
    BitPlru { mru: u64, ways: usize, reset: BitPlruReset },
    /// Fill stamp per way; the smallest stamp is the oldest fill.
    Fifo { stamps: Vec<u64>, next: u64 },
    Random { rng: SplitMix64, ways: usize },
}

impl ReplacementState {
    /// Reset state for a set of `ways` ways. `seed` only matters for Random.
    pub fn new(kind: PolicyKind, ways: usize, seed: u64) -> Result<Self> {
        kind.validate(ways)?;
        Ok(match kind {
            PolicyKind::TrueLru => ReplacementState::TrueLru {
                // way 0 is the oldest in a cold set
                ages: (0..ways).rev().map(|a| a as u8).collect(),
            },
            PolicyKind::TreePlru => ReplacementState::TreePlru { bits: 0, ways },
            PolicyKind::BitPlru(reset) => ReplacementState::BitPlru { mru: 0, ways, reset },
            PolicyKind::Fifo => ReplacementState::Fifo { stamps: vec![0; ways], next: 1 },
            PolicyKind::Random => ReplacementState::Random { rng: SplitMix64::new(seed), ways },
        })
    }

    pub fn ways(&self) -> usize {
        match self {
            ReplacementState::TrueLru { ages } => ages.len(),
            ReplacementState::TreePlru { ways, .. }
            | ReplacementState::BitPlru { ways, .. }
            | ReplacementState::Random { ways, .. } => *ways,
            ReplacementState::Fifo { stamps, .. } => stamps.len(),
        }
    }

    /// Picks the way to evict from a full set. Only Random mutates (its PRNG).
    pub fn victim(&mut self) -> usize {
        match self {
            ReplacementState::TrueLru { ages } => {
                let oldest = (ages.len() - 1) as u8;
                ages.iter().position(|&a| a == oldest).expect("ages form a permutation")
            }
            ReplacementState::TreePlru { bits, ways } => tree_victim(*bits, *ways),
            ReplacementState::BitPlru { mru, ways, .. } => {
                let free = !*mru & low_mask(*ways);
                // an all-ones mask cannot survive an update, but a caller may
                // still hand us one through a hand-built state
                if free == 0 {
                    0
                } else {
                    free.trailing_zeros() as usize
                }
            }
            ReplacementState::Fifo { stamps, .. } => stamps
                .iter()
                .enumerate()
                .min_by_key(|&(_, s)| *s)
                .map(|(w, _)| w)
                .expect("at least one way"),
            ReplacementState::Random { rng, ways } => rng.below(*ways as u64) as usize,
        }
    }

    /// Records a hit on `way`.
    pub fn on_hit(&mut self, way: usize) {
        match self {
            ReplacementState::Fifo { .. } | ReplacementState::Random { .. } => {}
            _ => self.touch(way),
        }
    }

    /// Records that `way` was just filled by a miss.
    pub fn on_fill(&mut self, way: usize) {
        match self {
            ReplacementState::Fifo { stamps, next } => {
                stamps[way] = *next;
                *next += 1;
            }
            ReplacementState::Random { .. } => {}
            _ => self.touch(way),
        }
    }

    fn touch(&mut self, way: usize) {
        debug_assert!(way < self.ways());
        match self {
            ReplacementState::TrueLru { ages } => {
                let old = ages[way];
                for a in ages.iter_mut() {
                    if *a < old {
                        *a += 1;
                    }
                }
                ages[way] = 0;
            }
            ReplacementState::TreePlru { bits, ways } => *bits = tree_touch(*bits, *ways, way),
            ReplacementState::BitPlru { mru, ways, reset } => {
                let full = low_mask(*ways);
                *mru |= 1 << way;
                if *mru == full {
                    *mru = match reset {
                        BitPlruReset::ClearAll => 0,
                        BitPlruReset::KeepAccessed => 1 << way,
                    };
                }
            }
            ReplacementState::Fifo { .. } | ReplacementState::Random { .. } => {}
        }
    }

    /// Number of state bits a hardware implementation would keep.
    pub fn state_bits(&self) -> usize {
        let n = self.ways();
        match self {
            ReplacementState::TrueLru { .. } => n * (usize::BITS - (n - 1).leading_zeros()) as usize,
            ReplacementState::TreePlru { .. } => n - 1,
            ReplacementState::BitPlru { .. } => n,
            ReplacementState::Fifo { .. } => (usize::BITS - (n - 1).leading_zeros()) as usize,
            ReplacementState::Random { .. } => 0,
        }
    }
}

/// Victim selection for a full set.
///
/// Rejects sets that still hold an invalid way: those must be filled first.
pub fn find_victim(state: &mut ReplacementState, set: &[LineMeta]) -> Result<usize> {
    if let Some(w) = set.iter().position(|l| !l.valid) {
        return Err(SimError::InvalidWayPresent(w));
    }
    Ok(state.victim())
}

fn low_mask(ways: usize) -> u64 {
    if ways == 64 {
        u64::MAX
    } else {
        (1u64 << ways) - 1
    }
}

fn tree_victim(bits: u64, ways: usize) -> usize {
    let mut node = 0;
    while node < ways - 1 {
        node = 2 * node + 1 + ((bits >> node) & 1) as usize;
    }
    node - (ways - 1)
}

fn tree_touch(mut bits: u64, ways: usize, way: usize) -> u64 {
    let mut node = way + ways - 1;
    while node > 0 {
        let parent = (node - 1) / 2;
        if node == 2 * parent + 1 {
            // came from the left: point right
            bits |= 1 << parent;
        } else {
            bits &= !(1 << parent);
        }
        node = parent;
    }
    bits
}
