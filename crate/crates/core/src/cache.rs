//! Set-associative cache model.

use crate::error::{Result, SimError};
use crate::policy::{find_victim, PolicyKind, ReplacementState};
use crate::rng::derive_seed;

/// Shape of a set-associative cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheGeometry {
    pub num_sets: usize,
    pub ways: usize,
    pub line_size: usize,
}

impl Default for CacheGeometry {
    /// 32 KiB, 8-way, 64 sets of 64-byte lines: the L1D of the machines the
    /// channels were demonstrated on.
    fn default() -> Self {
        Self { num_sets: 64, ways: 8, line_size: 64 }
    }
}

impl CacheGeometry {
    pub fn new(num_sets: usize, ways: usize, line_size: usize) -> Result<Self> {
        let g = Self { num_sets, ways, line_size };
        g.validate()?;
        Ok(g)
    }

    /// A single set of `ways` ways, handy for target-set experiments.
    pub fn single_set(ways: usize) -> Self {
        Self { num_sets: 1, ways, line_size: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.num_sets.is_power_of_two() {
            return Err(SimError::Geometry(format!(
                "number of sets must be a power of two, got {}",
                self.num_sets
            )));
        }
        if !self.line_size.is_power_of_two() {
            return Err(SimError::Geometry(format!(
                "line size must be a power of two, got {}",
                self.line_size
            )));
        }
        if self.ways == 0 {
            return Err(SimError::Geometry("associativity must be at least 1".into()));
        }
        Ok(())
    }

    fn offset_bits(&self) -> u32 {
        self.line_size.trailing_zeros()
    }

    fn index_bits(&self) -> u32 {
        self.num_sets.trailing_zeros()
    }

    /// Splits an address into `(tag, set index)`.
    pub fn decompose(&self, addr: Address) -> (u64, usize) {
        let line = addr.0 >> self.offset_bits();
        let set = (line & (self.num_sets as u64 - 1)) as usize;
        let tag = line >> self.index_bits();
        (tag, set)
    }

    /// The line-aligned address with the given tag and set index.
    pub fn compose(&self, tag: u64, set: usize) -> Address {
        debug_assert!(set < self.num_sets);
        Address(((tag << self.index_bits()) | set as u64) << self.offset_bits())
    }
}

/// A raw byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(pub u64);

impl From<u64> for Address {
    fn from(v: u64) -> Self {
        Address(v)
    }
}

/// Metadata of one cache way. `tag` is meaningless while `valid` is false.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LineMeta {
    pub valid: bool,
    pub tag: u64,
    /// Only the partition-locked cache ever sets this.
    pub locked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Hit,
    Miss,
    /// Served uncached because the chosen victim was locked.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub kind: AccessKind,
    /// Way hit or filled; `None` for a bypass.
    pub way: Option<usize>,
    /// Tag of the valid line replaced by a miss.
    pub evicted_tag: Option<u64>,
}

impl AccessOutcome {
    pub fn is_hit(&self) -> bool {
        self.kind == AccessKind::Hit
    }
}

/// One set: its lines plus the policy state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheSet {
    pub(crate) lines: Vec<LineMeta>,
    pub(crate) state: ReplacementState,
}

impl CacheSet {
    pub fn new(policy: PolicyKind, ways: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            lines: vec![LineMeta::default(); ways],
            state: ReplacementState::new(policy, ways, seed)?,
        })
    }

    pub fn lines(&self) -> &[LineMeta] {
        &self.lines
    }

    pub fn state(&self) -> &ReplacementState {
        &self.state
    }

    pub fn lookup(&self, tag: u64) -> Option<usize> {
        self.lines.iter().position(|l| l.valid && l.tag == tag)
    }

    pub fn contains(&self, tag: u64) -> bool {
        self.lookup(tag).is_some()
    }

    /// Tags of the valid lines, in way order.
    pub fn resident_tags(&self) -> Vec<u64> {
        self.lines.iter().filter(|l| l.valid).map(|l| l.tag).collect()
    }

    fn first_invalid(&self) -> Option<usize> {
        self.lines.iter().position(|l| !l.valid)
    }

    /// The way a miss would fill: the lowest invalid way, else the policy's victim.
    pub(crate) fn fill_target(&mut self) -> usize {
        match self.first_invalid() {
            Some(w) => w,
            None => find_victim(&mut self.state, &self.lines).expect("set is full"),
        }
    }

    pub(crate) fn install(&mut self, way: usize, tag: u64) -> Option<u64> {
        let old = self.lines[way];
        self.lines[way] = LineMeta { valid: true, tag, locked: false };
        self.state.on_fill(way);
        old.valid.then_some(old.tag)
    }

    /// Hit or fill; the touched way becomes most recently used.
    pub fn access(&mut self, tag: u64) -> AccessOutcome {
        if let Some(way) = self.lookup(tag) {
            self.state.on_hit(way);
            return AccessOutcome { kind: AccessKind::Hit, way: Some(way), evicted_tag: None };
        }
        let way = self.fill_target();
        let evicted_tag = self.install(way, tag);
        AccessOutcome { kind: AccessKind::Miss, way: Some(way), evicted_tag }
    }

    /// Invalidates the line holding `tag`. Returns whether it was resident.
    pub fn flush(&mut self, tag: u64) -> bool {
        match self.lookup(tag) {
            Some(w) => {
                self.lines[w] = LineMeta::default();
                true
            }
            None => false,
        }
    }
}

/// A set-associative cache with one replacement state per set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheModel {
    geometry: CacheGeometry,
    policy: PolicyKind,
    sets: Vec<CacheSet>,
}

impl CacheModel {
    /// `seed` feeds the Random policy; each set gets its own derived stream.
    pub fn new(geometry: CacheGeometry, policy: PolicyKind, seed: u64) -> Result<Self> {
        geometry.validate()?;
        policy.validate(geometry.ways)?;
        let sets = (0..geometry.num_sets)
            .map(|s| CacheSet::new(policy, geometry.ways, derive_seed(seed, &[s as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { geometry, policy, sets })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn set(&self, index: usize) -> &CacheSet {
        &self.sets[index]
    }

    pub(crate) fn set_mut(&mut self, index: usize) -> &mut CacheSet {
        &mut self.sets[index]
    }

    pub fn lookup(&self, addr: Address) -> Option<usize> {
        let (tag, set) = self.geometry.decompose(addr);
        self.sets[set].lookup(tag)
    }

    pub fn access(&mut self, addr: Address) -> AccessOutcome {
        let (tag, set) = self.geometry.decompose(addr);
        self.sets[set].access(tag)
    }

    pub fn flush(&mut self, addr: Address) -> bool {
        let (tag, set) = self.geometry.decompose(addr);
        self.sets[set].flush(tag)
    }

    /// Convenience for target-set experiments: access `tag` in set `set`.
    pub fn access_line(&mut self, set: usize, tag: u64) -> AccessOutcome {
        self.sets[set].access(tag)
    }

    pub fn flush_line(&mut self, set: usize, tag: u64) -> bool {
        self.sets[set].flush(tag)
    }

    pub fn contains_line(&self, set: usize, tag: u64) -> bool {
        self.sets[set].contains(tag)
    }
}
