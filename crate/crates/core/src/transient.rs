//! A bounds-check-bypass victim whose only trace of the secret is the
//! replacement state (or tags) of one cache set, and a receiver that reads it
//! back through the LRU channels.
//!
//! The victim computes `probe[set_map(array[i])]` behind `i < len`. With an
//! out-of-bounds `i` the access runs speculatively and is squashed: the
//! architectural result is dropped, the cache side effect stays.
//!
//! 256 byte values do not fit in the usable sets, so a byte is recovered as
//! base-`usable_sets` digits, one pass per digit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{AccessOutcome, CacheModel};
use crate::channel::{ChannelConfig, Protocol, TargetCache};
use crate::error::{Result, SimError};
use crate::policy::PolicyKind;
use crate::rng::{derive_seed, stream_rng};
use crate::timing::{measure, Class, LatencyProfile};

/// Tag of the shared probe line used by the flush+reload receiver.
pub const PROBE_TAG: u64 = 0x5000;
/// First tag of lines touched by background noise.
const NOISE_TAG: u64 = 0x7000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeakChannel {
    FlushReload,
    LruAlg1,
    LruAlg2,
}

impl fmt::Display for LeakChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeakChannel::FlushReload => "flush-reload",
            LeakChannel::LruAlg1 => "lru-alg1",
            LeakChannel::LruAlg2 => "lru-alg2",
        })
    }
}

impl FromStr for LeakChannel {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flush-reload" | "fr" => Ok(LeakChannel::FlushReload),
            "lru-alg1" | "alg1" | "shared" => Ok(LeakChannel::LruAlg1),
            "lru-alg2" | "alg2" | "noshared" => Ok(LeakChannel::LruAlg2),
            o => Err(SimError::Parameter(format!("unknown leak channel `{o}`"))),
        }
    }
}

impl LeakChannel {
    fn protocol(self) -> Protocol {
        match self {
            LeakChannel::LruAlg2 => Protocol::NoSharedMemory,
            _ => Protocol::SharedMemory,
        }
    }

    /// The probe class that signals "this set was touched".
    fn signal(self) -> Class {
        match self {
            LeakChannel::LruAlg2 => Class::Miss,
            _ => Class::Hit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gadget {
    /// The bounds-checked array.
    pub public: Vec<u8>,
    /// Lies right after `public` in memory.
    pub secret: Vec<u8>,
    pub num_sets: usize,
    pub ways: usize,
}

impl Gadget {
    pub fn new(secret: &[u8]) -> Self {
        Self { public: vec![0; 16], secret: secret.to_vec(), num_sets: 64, ways: 8 }
    }

    /// One set holds the pointer-chasing chain; the rest can encode values.
    pub fn usable_sets(&self) -> usize {
        self.num_sets - 1
    }

    /// Digit `pass` of `v` in base `usable_sets`.
    pub fn set_map(&self, v: u8, pass: u32) -> usize {
        (v as usize / self.usable_sets().pow(pass)) % self.usable_sets()
    }

    /// Digits needed to cover every byte value.
    pub fn passes(&self) -> u32 {
        let mut p = 1;
        while self.usable_sets().pow(p) < 256 {
            p += 1;
        }
        p
    }

    /// Index the attacker passes to read `secret[j]`.
    pub fn attack_index(&self, j: usize) -> usize {
        self.public.len() + j
    }

    fn channel_cfg(&self, channel: LeakChannel, set: usize, d: usize, latency: LatencyProfile) -> ChannelConfig {
        ChannelConfig {
            protocol: channel.protocol(),
            ways: self.ways,
            d,
            num_sets: self.num_sets,
            target_set: set,
            policy: PolicyKind::TrueLru,
            latency,
            preload: true,
        }
    }

    fn encode_tag(&self, channel: LeakChannel) -> u64 {
        match channel {
            LeakChannel::FlushReload => PROBE_TAG,
            LeakChannel::LruAlg1 => 0,
            LeakChannel::LruAlg2 => self.ways as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeculativeAccess {
    pub set: usize,
    pub tag: u64,
    pub squashed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimRun {
    /// What the victim returns to its caller.
    pub architectural: Option<u8>,
    pub access: Option<SpeculativeAccess>,
    pub outcome: Option<AccessOutcome>,
}

/// Runs the gadget once with `index`; digit `pass` of the loaded value picks
/// the set.
pub fn victim_run<C: TargetCache>(
    gadget: &Gadget,
    cache: &mut C,
    index: usize,
    channel: LeakChannel,
    pass: u32,
) -> VictimRun {
    let in_bounds = index < gadget.public.len();
    let value = if in_bounds {
        Some(gadget.public[index])
    } else {
        gadget.secret.get(index - gadget.public.len()).copied()
    };
    let Some(v) = value else {
        return VictimRun { architectural: None, access: None, outcome: None };
    };
    let access = SpeculativeAccess { set: gadget.set_map(v, pass), tag: gadget.encode_tag(channel), squashed: !in_bounds };
    let outcome = cache.touch(access.set, access.tag);
    VictimRun { architectural: in_bounds.then_some(v), access: Some(access), outcome: Some(outcome) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryParams {
    pub channel: LeakChannel,
    pub d: usize,
    pub latency: LatencyProfile,
    /// Triggers per digit before votes are counted.
    pub repetitions: usize,
    /// Hard budget of victim triggers per byte.
    pub max_triggers: usize,
    /// Probability that a foreign line lands in each usable set between the
    /// victim's access and the decode.
    pub noise: f64,
    pub seed: u64,
}

impl RecoveryParams {
    pub fn new(channel: LeakChannel) -> Self {
        Self {
            channel,
            d: 4,
            latency: LatencyProfile::intel(),
            repetitions: 1,
            max_triggers: 4,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryReport {
    pub recovered: Vec<Option<u8>>,
    pub triggers: Vec<usize>,
    pub victim_accesses: usize,
    pub victim_misses: usize,
}

impl RecoveryReport {
    pub fn correct(&self, secret: &[u8]) -> usize {
        self.recovered.iter().zip(secret).filter(|(r, s)| **r == Some(**s)).count()
    }

    pub fn unresolved(&self) -> usize {
        self.recovered.iter().filter(|r| r.is_none()).count()
    }
}

/// Threshold that never turns a non-signalling probe into a signal: the
/// slowest possible hit when a miss signals, the fastest miss otherwise.
pub fn one_sided_threshold(latency: &LatencyProfile, signal: Class) -> u64 {
    match signal {
        Class::Miss => latency.total_range(Class::Hit).1 + 1,
        Class::Hit => latency.total_range(Class::Miss).0,
    }
}

struct Receiver<'a> {
    gadget: &'a Gadget,
    params: &'a RecoveryParams,
    cfgs: Vec<ChannelConfig>,
    rng: ChaCha8Rng,
}

impl Receiver<'_> {
    fn prepare(&mut self, cache: &mut CacheModel) {
        for cfg in &self.cfgs {
            match self.params.channel {
                LeakChannel::FlushReload => {
                    cache.flush_line(cfg.target_set, PROBE_TAG);
                }
                _ => {
                    for l in cfg.init_lines() {
                        cache.touch(cfg.target_set, l);
                    }
                }
            }
        }
    }

    fn noise(&mut self, cache: &mut CacheModel) {
        if self.params.noise <= 0.0 {
            return;
        }
        for s in 0..self.gadget.usable_sets() {
            if self.rng.random_bool(self.params.noise) {
                let tag = NOISE_TAG + self.rng.random_range(0..16);
                cache.touch(s, tag);
            }
        }
    }

    /// Sets that signalled in this round.
    fn decode(&mut self, cache: &mut CacheModel) -> Vec<usize> {
        let signal = self.params.channel.signal();
        let mut hot = Vec::new();
        for cfg in &self.cfgs {
            let s = cfg.target_set;
            let probe = match self.params.channel {
                LeakChannel::FlushReload => cache.touch(s, PROBE_TAG),
                _ => {
                    for l in cfg.decode_lines() {
                        cache.touch(s, l);
                    }
                    cache.touch(s, 0)
                }
            };
            let class = if probe.is_hit() { Class::Hit } else { Class::Miss };
            if measure(&cfg.latency, class, &mut self.rng).classified == signal {
                hot.push(s);
            }
        }
        hot
    }
}

/// Recovers every secret byte through `params.channel`.
pub fn recover_secret(gadget: &Gadget, params: &RecoveryParams) -> Result<RecoveryReport> {
    if params.repetitions == 0 || params.max_triggers == 0 {
        return Err(SimError::Parameter("repetitions and trigger budget must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.noise) {
        return Err(SimError::Parameter("noise must be a probability".into()));
    }
    if gadget.num_sets < 2 || !gadget.num_sets.is_power_of_two() {
        return Err(SimError::Geometry("need a power-of-two number of sets, at least 2".into()));
    }
    let passes = gadget.passes() as usize;
    if params.max_triggers < passes {
        return Err(SimError::Parameter(format!("a byte needs at least {passes} triggers")));
    }
    let mut latency = params.latency;
    latency.threshold = one_sided_threshold(&latency, params.channel.signal());
    let cfgs: Vec<ChannelConfig> = (0..gadget.usable_sets())
        .map(|s| gadget.channel_cfg(params.channel, s, params.d, latency))
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let mut cache = CacheModel::new(cfgs[0].geometry(), PolicyKind::TrueLru, derive_seed(params.seed, &[3]))?;
    if params.channel != LeakChannel::FlushReload {
        for c in &cfgs {
            for l in c.init_lines().chain(c.decode_lines()) {
                cache.touch(c.target_set, l);
            }
        }
    }
    let mut rx = Receiver { gadget, params, cfgs, rng: stream_rng(params.seed, &[4]) };
    let mut report = RecoveryReport { recovered: Vec::new(), triggers: Vec::new(), victim_accesses: 0, victim_misses: 0 };

    for j in 0..gadget.secret.len() {
        let index = gadget.attack_index(j);
        let mut used = 0;
        let mut digits = Vec::with_capacity(passes);
        for pass in 0..passes {
            // leave at least one trigger for each remaining pass
            let reserve = passes - pass - 1;
            let mut votes = vec![0usize; gadget.usable_sets()];
            let mut rounds = 0;
            let winner = loop {
                rx.prepare(&mut cache);
                let run = victim_run(gadget, &mut cache, index, params.channel, pass as u32);
                if let Some(o) = run.outcome {
                    report.victim_accesses += 1;
                    report.victim_misses += usize::from(!o.is_hit());
                }
                rx.noise(&mut cache);
                for s in rx.decode(&mut cache) {
                    votes[s] += 1;
                }
                used += 1;
                rounds += 1;
                let best = *votes.iter().max().unwrap();
                let leaders: Vec<usize> = (0..votes.len()).filter(|&s| votes[s] == best).collect();
                let settled = best > 0 && leaders.len() == 1;
                if rounds >= params.repetitions && (settled || used + reserve >= params.max_triggers) {
                    break settled.then(|| leaders[0]);
                }
            };
            digits.push(winner);
        }
        report.triggers.push(used);
        let value = digits
            .iter()
            .rev()
            .try_fold(0usize, |acc, d| d.map(|d| acc * gadget.usable_sets() + d))
            .filter(|&v| v < 256)
            .map(|v| v as u8);
        report.recovered.push(value);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_map_digits() {
        let g = Gadget::new(b"A");
        assert_eq!(g.usable_sets(), 63);
        assert_eq!(g.passes(), 2);
        assert_eq!(g.set_map(65, 0), 2);
        assert_eq!(g.set_map(65, 1), 1);
        assert_eq!(g.set_map(0, 0), 0);
    }

    #[test]
    fn out_of_bounds_has_no_architectural_result() {
        let g = Gadget::new(&[200]);
        let mut c = CacheModel::new(crate::CacheGeometry::default(), PolicyKind::TrueLru, 0).unwrap();
        let r = victim_run(&g, &mut c, g.attack_index(0), LeakChannel::LruAlg1, 0);
        assert_eq!(r.architectural, None);
        assert_eq!(r.access.unwrap().set, 200 % 63);
        assert!(r.access.unwrap().squashed);
        let r = victim_run(&g, &mut c, 3, LeakChannel::LruAlg1, 0);
        assert_eq!(r.architectural, Some(0));
    }

    #[test]
    fn one_sided_thresholds_for_intel() {
        let p = LatencyProfile::intel();
        assert_eq!(one_sided_threshold(&p, Class::Miss), 41);
        assert_eq!(one_sided_threshold(&p, Class::Hit), 40);
    }

    #[test]
    fn recovers_a_letter() {
        let g = Gadget::new(b"A");
        for ch in [LeakChannel::LruAlg1, LeakChannel::LruAlg2, LeakChannel::FlushReload] {
            let r = recover_secret(&g, &RecoveryParams::new(ch)).unwrap();
            assert_eq!(r.recovered, vec![Some(b'A')], "{ch}");
        }
    }
}
