//! Partition-locked (PL) cache: per-line lock bits, in the original design
//! and in the fixed design that also freezes the replacement state on
//! accesses to locked lines.

use std::fmt;
use std::str::FromStr;

use crate::cache::{AccessKind, AccessOutcome, Address, CacheGeometry, CacheModel, CacheSet};
use crate::channel::{
    alternating_message, run_covert_channel_on, ChannelConfig, ChannelRun, NoiseModel, Protocol, ScheduleMode,
    ScheduleModel, TargetCache,
};
use crate::error::{Result, SimError};
use crate::policy::{find_victim, PolicyKind};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlVariant {
    /// Locked lines are never evicted, but hits on them still update the
    /// replacement state.
    Original,
    /// Hits on locked lines leave the replacement state alone.
    LruLocked,
}

impl fmt::Display for PlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlVariant::Original => "original",
            PlVariant::LruLocked => "lru-locked",
        })
    }
}

impl FromStr for PlVariant {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "orig" => Ok(PlVariant::Original),
            "lru-locked" | "lrulocked" | "locked" | "fixed" => Ok(PlVariant::LruLocked),
            o => Err(SimError::Parameter(format!("unknown PL cache variant `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlCache {
    cache: CacheModel,
    variant: PlVariant,
    bypass_touch: bool,
}

// `bypass_touch`: in the original design, a bypassed fill counts as an access
// to the locked victim way. Off by default: nothing was filled, so nothing is
// updated.
fn pl_access_set(set: &mut CacheSet, tag: u64, variant: PlVariant, bypass_touch: bool) -> AccessOutcome {
    if let Some(way) = set.lookup(tag) {
        if variant == PlVariant::Original || !set.lines[way].locked {
            set.state.on_hit(way);
        }
        return AccessOutcome { kind: AccessKind::Hit, way: Some(way), evicted_tag: None };
    }
    let way = match set.lines.iter().position(|l| !l.valid) {
        Some(w) => w,
        None => {
            let v = find_victim(&mut set.state, &set.lines).expect("set is full");
            if set.lines[v].locked {
                if variant == PlVariant::Original && bypass_touch {
                    set.state.on_hit(v);
                }
                return AccessOutcome { kind: AccessKind::Bypass, way: None, evicted_tag: None };
            }
            v
        }
    };
    let evicted_tag = set.install(way, tag);
    AccessOutcome { kind: AccessKind::Miss, way: Some(way), evicted_tag }
}

impl PlCache {
    pub fn new(geometry: CacheGeometry, policy: PolicyKind, variant: PlVariant, seed: u64) -> Result<Self> {
        Ok(Self { cache: CacheModel::new(geometry, policy, seed)?, variant, bypass_touch: false })
    }

    /// Makes a bypassed fill update the replacement state as if the locked
    /// victim had been accessed. Only affects [`PlVariant::Original`].
    pub fn with_bypass_touch(mut self, on: bool) -> Self {
        self.bypass_touch = on;
        self
    }

    pub fn variant(&self) -> PlVariant {
        self.variant
    }

    pub fn cache(&self) -> &CacheModel {
        &self.cache
    }

    pub fn access_line(&mut self, set: usize, tag: u64) -> AccessOutcome {
        pl_access_set(self.cache.set_mut(set), tag, self.variant, self.bypass_touch)
    }

    pub fn access(&mut self, addr: Address) -> AccessOutcome {
        let (tag, set) = self.cache.geometry().decompose(addr);
        self.access_line(set, tag)
    }

    /// Fetches the line if needed, then locks it. Returns false if the fetch
    /// was bypassed and there is nothing to lock.
    pub fn lock_line(&mut self, set: usize, tag: u64) -> bool {
        if !self.cache.contains_line(set, tag) {
            self.access_line(set, tag);
        }
        let s = self.cache.set_mut(set);
        match s.lookup(tag) {
            Some(w) => {
                s.lines[w].locked = true;
                true
            }
            None => false,
        }
    }

    /// Clears the lock bit; never evicts. A no-op for unlocked or absent lines.
    pub fn unlock_line(&mut self, set: usize, tag: u64) {
        let s = self.cache.set_mut(set);
        if let Some(w) = s.lookup(tag) {
            s.lines[w].locked = false;
        }
    }

    pub fn lock(&mut self, addr: Address) -> bool {
        let (tag, set) = self.cache.geometry().decompose(addr);
        self.lock_line(set, tag)
    }

    pub fn unlock(&mut self, addr: Address) {
        let (tag, set) = self.cache.geometry().decompose(addr);
        self.unlock_line(set, tag)
    }

    pub fn is_locked(&self, set: usize, tag: u64) -> bool {
        let s = self.cache.set(set);
        s.lookup(tag).is_some_and(|w| s.lines()[w].locked)
    }
}

impl TargetCache for PlCache {
    fn touch(&mut self, set: usize, tag: u64) -> AccessOutcome {
        self.access_line(set, tag)
    }
}

/// The attack on a PL cache: the sender's line is locked and the channel runs
/// under ideal scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct PlDemo {
    pub variant: PlVariant,
    pub protocol: Protocol,
    pub message: Vec<u8>,
    pub run: ChannelRun,
}

/// Runs the channel over a PL cache of `variant` with the sender's line locked
/// (line N for the no-shared-memory protocol, line 0 for the shared one).
pub fn pl_attack_demo(
    variant: PlVariant,
    cfg: &ChannelConfig,
    message: &[u8],
    rounds_per_bit: u64,
    bypass_touch: bool,
    seed: u64,
) -> Result<PlDemo> {
    cfg.validate()?;
    let mut cache =
        PlCache::new(cfg.geometry(), cfg.policy, variant, derive_seed(seed, &[3]))?.with_bypass_touch(bypass_touch);
    if !cache.lock_line(cfg.target_set, cfg.sender_line()) {
        return Err(SimError::Parameter("could not lock the sender's line".into()));
    }
    let mut sched = ScheduleModel::new(ScheduleMode::Ideal, 1, 1);
    sched.tr = sched.receiver_work(cfg);
    sched.ts = sched.tr * rounds_per_bit.max(1);
    let run = run_covert_channel_on(&mut cache, cfg, &sched, &NoiseModel::none(), message, seed)?;
    Ok(PlDemo { variant, protocol: cfg.protocol, message: message.to_vec(), run })
}

/// The alternating-message demo of the no-shared-memory channel (d = 1).
pub fn figure_demo(variant: PlVariant, policy: PolicyKind, bits: usize, bypass_touch: bool, seed: u64) -> Result<PlDemo> {
    let cfg = ChannelConfig::new(Protocol::NoSharedMemory, 1).with_policy(policy);
    pl_attack_demo(variant, &cfg, &alternating_message(bits), 1, bypass_touch, seed)
}
