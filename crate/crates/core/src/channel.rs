//! The one-bit LRU channels and the multi-bit covert-channel driver.
//!
//! Line `i` of the protocol is tag `i` in the target set. With shared memory
//! the receiver cycles lines `0..=N` and the sender touches line 0; without it
//! the receiver owns lines `0..N` and the sender owns line `N`.
//!
//! Actors never branch on access outcomes, so each one is a lazy generator of
//! timestamped accesses and the schedule is a merge of those streams.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::cache::{AccessKind, AccessOutcome, CacheGeometry, CacheModel, CacheSet};
use crate::error::{Result, SimError};
use crate::eval::{runlength_filter, ErrorReport};
use crate::par;
use crate::plru_analysis::{warm_up, InitCondition, WarmupParams};
use crate::policy::PolicyKind;
use crate::rng::{derive_seed, stream_rng};
use crate::timing::{measure, Class, LatencyProfile, Observation};

/// First tag of the background-noise lines.
pub const NOISE_BASE: u64 = 1 << 20;

/// Anything the protocols can run on: the plain cache or the PL cache.
pub trait TargetCache {
    fn touch(&mut self, set: usize, tag: u64) -> AccessOutcome;
}

impl TargetCache for CacheModel {
    fn touch(&mut self, set: usize, tag: u64) -> AccessOutcome {
        self.access_line(set, tag)
    }
}

impl TargetCache for CacheSet {
    fn touch(&mut self, _set: usize, tag: u64) -> AccessOutcome {
        self.access(tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    /// Sender and receiver share line 0; a hit on the probe means 1.
    SharedMemory,
    /// The sender uses its own line N; a miss on the probe means 1.
    NoSharedMemory,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::SharedMemory => "shared",
            Protocol::NoSharedMemory => "noshared",
        })
    }
}

impl FromStr for Protocol {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shared" | "alg1" | "1" => Ok(Protocol::SharedMemory),
            "noshared" | "alg2" | "2" => Ok(Protocol::NoSharedMemory),
            o => Err(SimError::Parameter(format!("unknown protocol `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelConfig {
    pub protocol: Protocol,
    /// Associativity N.
    pub ways: usize,
    /// Receiver accesses before the sleep.
    pub d: usize,
    pub num_sets: usize,
    pub target_set: usize,
    pub policy: PolicyKind,
    pub latency: LatencyProfile,
    /// Touch every protocol line once before the first bit.
    pub preload: bool,
}

impl ChannelConfig {
    pub fn new(protocol: Protocol, d: usize) -> Self {
        Self {
            protocol,
            ways: 8,
            d,
            num_sets: 64,
            target_set: 0,
            policy: PolicyKind::TrueLru,
            latency: LatencyProfile::intel(),
            preload: true,
        }
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn geometry(&self) -> CacheGeometry {
        CacheGeometry { num_sets: self.num_sets, ways: self.ways, line_size: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        self.policy.validate(self.ways)?;
        self.latency.validate()?;
        let max_d = match self.protocol {
            Protocol::SharedMemory => self.ways + 1,
            Protocol::NoSharedMemory => self.ways,
        };
        if self.d < 1 || self.d > max_d {
            return Err(SimError::Parameter(format!("d must lie in 1..={max_d}, got {}", self.d)));
        }
        if self.target_set >= self.num_sets {
            return Err(SimError::Parameter(format!("target set {} out of range", self.target_set)));
        }
        Ok(())
    }

    /// Last receiver line (inclusive).
    fn last_receiver_line(&self) -> u64 {
        match self.protocol {
            Protocol::SharedMemory => self.ways as u64,
            Protocol::NoSharedMemory => self.ways as u64 - 1,
        }
    }

    pub fn init_lines(&self) -> std::ops::Range<u64> {
        0..self.d as u64
    }

    pub fn decode_lines(&self) -> std::ops::Range<u64> {
        (self.d as u64).min(self.last_receiver_line() + 1)..self.last_receiver_line() + 1
    }

    /// The line the sender touches to send a 1.
    pub fn sender_line(&self) -> u64 {
        match self.protocol {
            Protocol::SharedMemory => 0,
            Protocol::NoSharedMemory => self.ways as u64,
        }
    }

    /// Maps a probe's latency class to a bit.
    pub fn decode(&self, class: Class) -> u8 {
        match (self.protocol, class) {
            (Protocol::SharedMemory, Class::Hit) | (Protocol::NoSharedMemory, Class::Miss) => 1,
            _ => 0,
        }
    }

    /// Target-set accesses of one receiver iteration, probe included.
    pub fn receiver_accesses(&self) -> u64 {
        self.init_lines().count() as u64 + self.decode_lines().count() as u64 + 1
    }

    /// Brings the protocol lines into the cache.
    pub fn prime<C: TargetCache>(&self, cache: &mut C) {
        for l in 0..=self.last_receiver_line() {
            cache.touch(self.target_set, l);
        }
        if self.protocol == Protocol::NoSharedMemory {
            cache.touch(self.target_set, self.sender_line());
        }
    }
}

fn class_of(o: &AccessOutcome) -> Class {
    if o.kind == AccessKind::Hit {
        Class::Hit
    } else {
        Class::Miss
    }
}

/// Result of one ideal (init, encode, decode) round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitTransfer {
    pub bit: u8,
    pub observation: Observation,
    pub probe: AccessKind,
    /// The sender's access, if it sent a 1.
    pub sender: Option<AccessOutcome>,
}

/// One ideal round; `noise` tags are touched while the receiver sleeps.
pub fn ideal_round<C: TargetCache, R: RngCore>(
    cache: &mut C,
    cfg: &ChannelConfig,
    m: u8,
    noise: &[u64],
    rng: &mut R,
) -> BitTransfer {
    let s = cfg.target_set;
    for l in cfg.init_lines() {
        cache.touch(s, l);
    }
    let sender = (m == 1).then(|| cache.touch(s, cfg.sender_line()));
    for &t in noise {
        cache.touch(s, t);
    }
    for l in cfg.decode_lines() {
        cache.touch(s, l);
    }
    let probe = cache.touch(s, 0);
    let observation = measure(&cfg.latency, class_of(&probe), rng);
    BitTransfer { bit: cfg.decode(observation.classified), observation, probe: probe.kind, sender }
}

fn require(cfg: &ChannelConfig, p: Protocol) -> Result<()> {
    cfg.validate()?;
    if cfg.protocol != p {
        return Err(SimError::Parameter(format!("configuration is for the {} protocol", cfg.protocol)));
    }
    Ok(())
}

/// One bit over the shared-memory channel.
pub fn transfer_bit_shared<C: TargetCache, R: RngCore>(
    cache: &mut C,
    cfg: &ChannelConfig,
    m: u8,
    rng: &mut R,
) -> Result<BitTransfer> {
    require(cfg, Protocol::SharedMemory)?;
    Ok(ideal_round(cache, cfg, m, &[], rng))
}

/// One bit over the channel without shared memory.
pub fn transfer_bit_noshared<C: TargetCache, R: RngCore>(
    cache: &mut C,
    cfg: &ChannelConfig,
    m: u8,
    rng: &mut R,
) -> Result<BitTransfer> {
    require(cfg, Protocol::NoSharedMemory)?;
    Ok(ideal_round(cache, cfg, m, &[], rng))
}

/// Fraction of trials in which `iterations` back-to-back ideal rounds sending
/// `m` decode it correctly in the last round, starting from a warmed-up set.
pub fn repeated_send_accuracy(
    cfg: &ChannelConfig,
    m: u8,
    init: InitCondition,
    iterations: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let ok = par::map_indexed(trials, |t| {
        let mut rng = stream_rng(seed, &[t as u64]);
        let mut set = CacheSet::new(cfg.policy, cfg.ways, derive_seed(seed, &[t as u64, 1])).expect("validated");
        warm_up(&mut set, init, &WarmupParams::for_init(init), &mut rng);
        let mut last = 0;
        for _ in 0..iterations {
            last = ideal_round(&mut set, cfg, m, &[], &mut rng).bit;
        }
        last == m
    });
    Ok(ok.iter().filter(|&&b| b).count() as f64 / trials.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleMode {
    /// Every receiver round is init, encode, decode in that order.
    Ideal,
    /// Both actors run at once; their accesses interleave by timestamp.
    HyperThreaded,
    /// Actors take turns owning the core for `quantum` cycles.
    TimeSliced,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Ideal => "ideal",
            ScheduleMode::HyperThreaded => "hyperthreaded",
            ScheduleMode::TimeSliced => "timesliced",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(ScheduleMode::Ideal),
            "hyperthreaded" | "ht" | "smt" => Ok(ScheduleMode::HyperThreaded),
            "timesliced" | "ts" => Ok(ScheduleMode::TimeSliced),
            o => Err(SimError::Parameter(format!("unknown schedule mode `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleModel {
    pub mode: ScheduleMode,
    /// Cycles the sender spends on each bit.
    pub ts: u64,
    /// Receiver sampling period.
    pub tr: u64,
    /// Slice length under time slicing.
    pub quantum: u64,
    /// Cycles per memory access (chain loads included).
    pub access_cost: u64,
    /// Cycles per iteration of the sender's encode loop.
    pub encode_cost: u64,
}

impl ScheduleModel {
    pub fn new(mode: ScheduleMode, ts: u64, tr: u64) -> Self {
        Self { mode, ts, tr, quantum: ts, access_cost: 32, encode_cost: 100 }
    }

    pub fn with_quantum(mut self, quantum: u64) -> Self {
        self.quantum = quantum;
        self
    }

    /// Cycles one receiver iteration needs, pointer chase included.
    pub fn receiver_work(&self, cfg: &ChannelConfig) -> u64 {
        (cfg.receiver_accesses() + cfg.latency.chain_length) * self.access_cost
    }

    pub fn validate(&self, cfg: &ChannelConfig) -> Result<()> {
        if self.access_cost == 0 || self.encode_cost == 0 {
            return Err(SimError::Parameter("access and encode costs must be positive".into()));
        }
        if self.ts < self.encode_cost {
            return Err(SimError::Parameter(format!(
                "Ts={} is shorter than one encode ({} cycles)",
                self.ts, self.encode_cost
            )));
        }
        let needed = self.receiver_work(cfg);
        if self.tr < needed {
            return Err(SimError::InfeasiblePeriod { tr: self.tr, needed });
        }
        if self.mode == ScheduleMode::TimeSliced && self.quantum == 0 {
            return Err(SimError::Parameter("time-slice quantum must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Expected background accesses to the target set per 1000 cycles.
    pub rate: f64,
    pub tag_pool: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { rate: 0.0, tag_pool: 16 }
    }

    pub fn new(rate: f64) -> Self {
        Self { rate, tag_pool: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) || (self.rate > 0.0 && self.tag_pool == 0) {
            return Err(SimError::Parameter("noise rate must be >= 0 with a non-empty tag pool".into()));
        }
        Ok(())
    }
}

/// One timed probe by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeRecord {
    /// Timestamp taken right before the decode phase.
    pub time: u64,
    pub window: usize,
    pub sent: u8,
    pub total_cycles: u64,
    pub class: Class,
    pub decoded: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRun {
    pub received: Vec<u8>,
    pub trace: Vec<ProbeRecord>,
    pub sender_hits: u64,
    pub sender_misses: u64,
    pub cycles: u64,
    pub error: ErrorReport,
}

/// Majority of the decoded bits in each Ts window; ties give 0 and empty
/// windows give nothing. Input must be ordered by window.
pub fn majority_decode(trace: &[ProbeRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        let w = trace[i].window;
        let (mut ones, mut n) = (0, 0);
        while i < trace.len() && trace[i].window == w {
            ones += trace[i].decoded as usize;
            n += 1;
            i += 1;
        }
        out.push(u8::from(2 * ones > n));
    }
    out
}

/// Which slices of the timeline an actor may run in.
#[derive(Debug, Clone, Copy)]
enum Share {
    Always,
    Slot { quantum: u64, slot: u64, slots: u64 },
}

impl Share {
    /// Earliest time at or after `t` when the actor holds the core.
    fn run_at(self, t: u64) -> u64 {
        match self {
            Share::Always => t,
            Share::Slot { quantum, slot, slots } => {
                let k = t / quantum;
                if k % slots == slot {
                    t
                } else {
                    let next = k + (slot + slots - k % slots) % slots;
                    next * quantum
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Access(u64),
    Probe { t_last: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: u64,
    actor: u8,
    op: Op,
}

struct Receiver {
    share: Share,
    cost: u64,
    chain_cost: u64,
    tr: u64,
    end: u64,
    init: Vec<u64>,
    decode: Vec<u64>,
    step: usize,
    clock: u64,
    target: u64,
    t_last: u64,
}

impl Receiver {
    fn next(&mut self) -> Option<Event> {
        let n_init = self.init.len();
        loop {
            if self.step < n_init {
                let t = self.share.run_at(self.clock);
                self.clock = t + self.cost;
                self.step += 1;
                return Some(Event { time: t, actor: 0, op: Op::Access(self.init[self.step - 1]) });
            }
            if self.step == n_init {
                // spin on the timestamp counter
                let t = self.share.run_at(self.clock.max(self.target));
                if t >= self.end {
                    return None;
                }
                self.t_last = t;
                self.target = t + self.tr;
                self.clock = t;
                self.step += 1;
                continue;
            }
            let j = self.step - n_init - 1;
            let t = self.share.run_at(self.clock);
            if j < self.decode.len() {
                self.clock = t + self.cost;
                self.step += 1;
                return Some(Event { time: t, actor: 0, op: Op::Access(self.decode[j]) });
            }
            self.clock = t + self.chain_cost + self.cost;
            self.step = 0;
            return Some(Event { time: t, actor: 0, op: Op::Probe { t_last: self.t_last } });
        }
    }
}

struct Sender<'a> {
    share: Share,
    message: &'a [u8],
    ts: u64,
    cost: u64,
    tag: u64,
    clock: u64,
    end: u64,
}

impl Sender<'_> {
    fn next(&mut self) -> Option<Event> {
        loop {
            let t = self.share.run_at(self.clock);
            if t >= self.end {
                return None;
            }
            let w = (t / self.ts) as usize;
            if self.message[w] == 1 {
                self.clock = t + self.cost;
                return Some(Event { time: t, actor: 1, op: Op::Access(self.tag) });
            }
            self.clock = (w as u64 + 1) * self.ts;
        }
    }
}

struct Noise {
    share: Share,
    gap: Option<Exp<f64>>,
    pool: u64,
    clock: f64,
    end: u64,
    rng: ChaCha8Rng,
}

impl Noise {
    fn new(share: Share, noise: &NoiseModel, end: u64, rng: ChaCha8Rng) -> Self {
        let gap = (noise.rate > 0.0).then(|| Exp::new(noise.rate / 1000.0).expect("positive rate"));
        Self { share, gap, pool: noise.tag_pool, clock: 0.0, end, rng }
    }

    fn next_time(&mut self) -> Option<u64> {
        let gap = self.gap.as_ref()?;
        self.clock += gap.sample(&mut self.rng);
        let t = self.share.run_at(self.clock as u64);
        self.clock = self.clock.max(t as f64);
        (t < self.end).then_some(t)
    }

    fn tag(&mut self) -> u64 {
        NOISE_BASE + self.rng.random_range(0..self.pool)
    }

    fn next(&mut self) -> Option<Event> {
        let t = self.next_time()?;
        Some(Event { time: t, actor: 2, op: Op::Access(self.tag()) })
    }
}

struct Recorder<'a> {
    cfg: &'a ChannelConfig,
    message: &'a [u8],
    ts: u64,
    lat_rng: ChaCha8Rng,
    trace: Vec<ProbeRecord>,
    sender_hits: u64,
    sender_misses: u64,
}

impl Recorder<'_> {
    fn probe(&mut self, outcome: &AccessOutcome, t_last: u64) {
        let obs = measure(&self.cfg.latency, class_of(outcome), &mut self.lat_rng);
        self.record(obs, t_last);
    }

    fn record(&mut self, obs: Observation, t_last: u64) {
        let window = (t_last / self.ts) as usize;
        self.trace.push(ProbeRecord {
            time: t_last,
            window,
            sent: self.message[window],
            total_cycles: obs.total_cycles,
            class: obs.classified,
            decoded: self.cfg.decode(obs.classified),
        });
    }

    fn sender(&mut self, o: &AccessOutcome) {
        if o.is_hit() {
            self.sender_hits += 1;
        } else {
            self.sender_misses += 1;
        }
    }
}

/// Sends `message` over the channel on `cache`, one bit per Ts window.
pub fn run_covert_channel_on<C: TargetCache>(
    cache: &mut C,
    cfg: &ChannelConfig,
    sched: &ScheduleModel,
    noise: &NoiseModel,
    message: &[u8],
    seed: u64,
) -> Result<ChannelRun> {
    cfg.validate()?;
    sched.validate(cfg)?;
    noise.validate()?;
    if message.is_empty() {
        return Err(SimError::Parameter("message must not be empty".into()));
    }
    if message.iter().any(|&b| b > 1) {
        return Err(SimError::Parameter("message must consist of 0/1 bits".into()));
    }
    if cfg.preload {
        cfg.prime(cache);
    }
    let end = message.len() as u64 * sched.ts;
    let set = cfg.target_set;
    let mut rec = Recorder {
        cfg,
        message,
        ts: sched.ts,
        lat_rng: stream_rng(seed, &[2]),
        trace: Vec::new(),
        sender_hits: 0,
        sender_misses: 0,
    };
    let noise_gen = |share| Noise::new(share, noise, end, stream_rng(seed, &[1]));

    if sched.mode == ScheduleMode::Ideal {
        let mut nz = noise_gen(Share::Always);
        let mut pending = nz.next_time();
        let mut tags = Vec::new();
        let mut k = 0u64;
        while k * sched.tr < end {
            let t = k * sched.tr;
            tags.clear();
            while pending.is_some_and(|nt| nt < t + sched.tr) {
                tags.push(nz.tag());
                pending = nz.next_time();
            }
            let m = message[(t / sched.ts) as usize];
            let r = ideal_round(cache, cfg, m, &tags, &mut rec.lat_rng);
            if let Some(o) = &r.sender {
                rec.sender(o);
            }
            rec.record(r.observation, t);
            k += 1;
        }
    } else {
        let shares: [Share; 3] = match sched.mode {
            ScheduleMode::TimeSliced => {
                let slots = if noise.rate > 0.0 { 3 } else { 2 };
                let q = sched.quantum;
                [0, 1, 2].map(|slot| Share::Slot { quantum: q, slot, slots })
            }
            _ => [Share::Always; 3],
        };
        let mut rx = Receiver {
            share: shares[0],
            cost: sched.access_cost,
            chain_cost: cfg.latency.chain_length * sched.access_cost,
            tr: sched.tr,
            end,
            init: cfg.init_lines().collect(),
            decode: cfg.decode_lines().collect(),
            step: 0,
            clock: 0,
            target: 0,
            t_last: 0,
        };
        let mut tx = Sender {
            share: shares[1],
            message,
            ts: sched.ts,
            cost: sched.encode_cost,
            tag: cfg.sender_line(),
            clock: 0,
            end,
        };
        let mut nz = noise_gen(shares[2]);
        let mut heads = [rx.next(), tx.next(), nz.next()];
        loop {
            // earliest event; ties go to the lower actor id
            let Some(i) = (0..3)
                .filter(|&i| heads[i].is_some())
                .min_by_key(|&i| (heads[i].unwrap().time, i))
            else {
                break;
            };
            let ev = heads[i].unwrap();
            match ev.op {
                Op::Access(tag) => {
                    let o = cache.touch(set, tag);
                    if ev.actor == 1 {
                        rec.sender(&o);
                    }
                }
                Op::Probe { t_last } => {
                    let o = cache.touch(set, 0);
                    rec.probe(&o, t_last);
                }
            }
            heads[i] = match i {
                0 => rx.next(),
                1 => tx.next(),
                _ => nz.next(),
            };
        }
    }

    let received = majority_decode(&rec.trace);
    let error = ErrorReport::new(message, &received);
    Ok(ChannelRun {
        received,
        trace: rec.trace,
        sender_hits: rec.sender_hits,
        sender_misses: rec.sender_misses,
        cycles: end,
        error,
    })
}

/// [`run_covert_channel_on`] over a fresh cache built from `cfg`.
pub fn run_covert_channel(
    cfg: &ChannelConfig,
    sched: &ScheduleModel,
    noise: &NoiseModel,
    message: &[u8],
    seed: u64,
) -> Result<ChannelRun> {
    cfg.validate()?;
    let mut cache = CacheModel::new(cfg.geometry(), cfg.policy, derive_seed(seed, &[3]))?;
    run_covert_channel_on(&mut cache, cfg, sched, noise, message, seed)
}

/// `len` random bits from `seed`.
pub fn random_message(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = stream_rng(seed, &[0x006d_7367]);
    (0..len).map(|_| rng.random_range(0..2u8)).collect()
}

pub fn alternating_message(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i % 2) as u8).collect()
}

/// Parameter grid of a sweep; each cell sends the same message.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ChannelConfig,
    pub sched: ScheduleModel,
    pub noise: NoiseModel,
    pub protocols: Vec<Protocol>,
    pub ds: Vec<usize>,
    pub ts: Vec<u64>,
    pub tr: Vec<u64>,
    pub message_bits: usize,
    pub repetitions: usize,
    /// Runs of identical received bits longer than this are flagged as noise.
    pub max_run: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(base: ChannelConfig, sched: ScheduleModel, noise: NoiseModel) -> Self {
        Self {
            base,
            sched,
            noise,
            protocols: vec![base.protocol],
            ds: (1..=base.ways).collect(),
            ts: vec![4500, 6000, 12000, 30000],
            tr: vec![600, 1000, 3000],
            message_bits: 128,
            repetitions: 30,
            max_run: 16,
            seed: 0,
        }
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &d in &self.ds {
                for &ts in &self.ts {
                    for &tr in &self.tr {
                        out.push(SweepCell { protocol, d, ts, tr });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepCell {
    pub protocol: Protocol,
    pub d: usize,
    pub ts: u64,
    pub tr: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub sent_bits: usize,
    pub received_bits: usize,
    pub edit_distance: usize,
    pub error_rate: f64,
    /// Message bits per million simulated cycles.
    pub bits_per_mcycle: f64,
    pub effective_bits_per_mcycle: f64,
    /// Received bits inside runs longer than `max_run`.
    pub flagged_bits: usize,
    pub sender_misses: u64,
}

fn protocol_id(p: Protocol) -> u64 {
    match p {
        Protocol::SharedMemory => 1,
        Protocol::NoSharedMemory => 2,
    }
}

/// Runs one sweep cell. Its seed depends only on the cell's parameters.
pub fn run_cell(spec: &SweepSpec, cell: SweepCell) -> Result<SweepRow> {
    let cfg = ChannelConfig { protocol: cell.protocol, d: cell.d, ..spec.base };
    let sched = ScheduleModel { ts: cell.ts, tr: cell.tr, ..spec.sched };
    let base = random_message(spec.message_bits, spec.seed);
    let message: Vec<u8> = base.iter().copied().cycle().take(base.len() * spec.repetitions).collect();
    let seed = derive_seed(spec.seed, &[protocol_id(cell.protocol), cell.d as u64, cell.ts, cell.tr]);
    let run = run_covert_channel(&cfg, &sched, &spec.noise, &message, seed)?;
    let filtered = runlength_filter(&run.received, spec.max_run)?;
    let bits_per_mcycle = message.len() as f64 * 1e6 / run.cycles as f64;
    Ok(SweepRow {
        cell,
        sent_bits: message.len(),
        received_bits: run.received.len(),
        edit_distance: run.error.edit_distance,
        error_rate: run.error.error_rate,
        bits_per_mcycle,
        effective_bits_per_mcycle: bits_per_mcycle * (1.0 - run.error.error_rate).max(0.0),
        flagged_bits: filtered.discarded.iter().map(|&(_, n)| n).sum(),
        sender_misses: run.sender_misses,
    })
}

/// All cells of `spec`, in protocol, d, Ts, Tr order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let cells = spec.cells();
    if cells.is_empty() || spec.message_bits == 0 || spec.repetitions == 0 {
        return Err(SimError::Parameter("sweep grid and message must be non-empty".into()));
    }
    par::map_indexed(cells.len(), |i| run_cell(spec, cells[i])).into_iter().collect()
}

/// Single-threaded twin of [`sweep`].
pub fn sweep_seq(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let cells = spec.cells();
    par::map_indexed_seq(cells.len(), |i| run_cell(spec, cells[i])).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_for(cfg: &ChannelConfig) -> CacheModel {
        CacheModel::new(cfg.geometry(), cfg.policy, 0).unwrap()
    }

    #[test]
    fn shared_memory_walkthrough() {
        let cfg = ChannelConfig::new(Protocol::SharedMemory, 8);
        let mut rng = stream_rng(0, &[]);
        for m in [0, 1, 0, 1, 1, 0] {
            let mut c = set_for(&cfg);
            let r = transfer_bit_shared(&mut c, &cfg, m, &mut rng).unwrap();
            assert_eq!(r.probe, if m == 1 { AccessKind::Hit } else { AccessKind::Miss });
        }
    }

    #[test]
    fn no_shared_memory_walkthrough() {
        let cfg = ChannelConfig::new(Protocol::NoSharedMemory, 4);
        let mut c = set_for(&cfg);
        cfg.prime(&mut c);
        let mut rng = stream_rng(0, &[]);
        assert_eq!(transfer_bit_noshared(&mut c, &cfg, 0, &mut rng).unwrap().probe, AccessKind::Hit);
        assert_eq!(transfer_bit_noshared(&mut c, &cfg, 1, &mut rng).unwrap().probe, AccessKind::Miss);
        assert_eq!(transfer_bit_noshared(&mut c, &cfg, 0, &mut rng).unwrap().probe, AccessKind::Hit);
    }

    #[test]
    fn wrong_protocol_is_rejected() {
        let cfg = ChannelConfig::new(Protocol::SharedMemory, 4);
        let mut c = set_for(&cfg);
        assert!(transfer_bit_noshared(&mut c, &cfg, 1, &mut stream_rng(0, &[])).is_err());
    }

    #[test]
    fn slot_share_skips_foreign_slices() {
        let s = Share::Slot { quantum: 100, slot: 1, slots: 2 };
        assert_eq!(s.run_at(0), 100);
        assert_eq!(s.run_at(150), 150);
        assert_eq!(s.run_at(200), 300);
        let r = Share::Slot { quantum: 100, slot: 0, slots: 3 };
        assert_eq!(r.run_at(120), 300);
    }

    #[test]
    fn infeasible_tr_is_rejected() {
        let cfg = ChannelConfig::new(Protocol::SharedMemory, 4);
        let sched = ScheduleModel::new(ScheduleMode::Ideal, 6000, 100);
        let e = run_covert_channel(&cfg, &sched, &NoiseModel::none(), &[1, 0], 0).unwrap_err();
        assert!(matches!(e, SimError::InfeasiblePeriod { tr: 100, .. }));
    }

    #[test]
    fn majority_ties_go_to_zero() {
        let rec = |window, decoded| ProbeRecord {
            time: 0,
            window,
            sent: 0,
            total_cycles: 0,
            class: Class::Hit,
            decoded,
        };
        let t = [rec(0, 1), rec(0, 0), rec(1, 1), rec(1, 1), rec(1, 0), rec(3, 0)];
        assert_eq!(majority_decode(&t), vec![0, 1, 0]);
    }
}
