//! Channel-quality and replacement-policy metrics.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::cache::{AccessKind, Address, CacheGeometry, CacheModel};
use crate::error::{Result, SimError};
use crate::par;
use crate::policy::PolicyKind;
use crate::rng::stream_rng;

/// Levenshtein distance with unit costs (Wagner-Fischer, two rows).
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub sent_len: usize,
    pub received_len: usize,
    pub edit_distance: usize,
    pub error_rate: f64,
}

impl ErrorReport {
    pub fn new(sent: &[u8], received: &[u8]) -> Self {
        let d = edit_distance(sent, received);
        Self {
            sent_len: sent.len(),
            received_len: received.len(),
            edit_distance: d,
            error_rate: if sent.is_empty() { 0.0 } else { d as f64 / sent.len() as f64 },
        }
    }
}

/// A retained stretch of a filtered bit string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub bits: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterResult {
    pub segments: Vec<Segment>,
    /// `(start, len)` of every discarded run.
    pub discarded: Vec<(usize, usize)>,
}

impl FilterResult {
    pub fn flagged(&self) -> bool {
        !self.discarded.is_empty()
    }

    pub fn retained(&self) -> Vec<u8> {
        self.segments.iter().flat_map(|s| s.bits.iter().copied()).collect()
    }
}

/// Drops runs of identical bits longer than `max_run`: the signature of a
/// channel drowned by noise rather than a message.
pub fn runlength_filter(bits: &[u8], max_run: usize) -> Result<FilterResult> {
    if max_run == 0 {
        return Err(SimError::Parameter("max_run must be at least 1".into()));
    }
    let mut out = FilterResult::default();
    let mut i = 0;
    while i < bits.len() {
        let mut j = i;
        while j < bits.len() && bits[j] == bits[i] {
            j += 1;
        }
        if j - i > max_run {
            out.discarded.push((i, j - i));
        } else {
            match out.segments.last_mut() {
                Some(s) if s.start + s.bits.len() == i => s.bits.extend_from_slice(&bits[i..j]),
                _ => out.segments.push(Segment { start: i, bits: bits[i..j].to_vec() }),
            }
        }
        i = j;
    }
    Ok(out)
}

/// Centered sliding mean; the window shrinks at the edges.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = vec![0.0; xs.len() + 1];
    for (i, x) in xs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
    }
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(xs.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Smooths `latencies`, thresholds at the median and samples the middle of
/// every `period`-long slot. A 1 means slower than the median.
pub fn moving_average_decode(latencies: &[f64], window: usize, period: usize) -> Result<Vec<u8>> {
    if window == 0 || period == 0 {
        return Err(SimError::Parameter("window and period must be at least 1".into()));
    }
    if latencies.is_empty() {
        return Ok(Vec::new());
    }
    let smooth = moving_average(latencies, window);
    let lo = smooth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        return Err(SimError::Unclassifiable("constant latency series carries no signal".into()));
    }
    let mut thr = median(&smooth);
    if thr >= hi {
        thr = (lo + hi) / 2.0;
    }
    Ok((0..latencies.len() / period)
        .map(|k| u8::from(smooth[k * period + period / 2] > thr))
        .collect())
}

/// How cleanly `period` splits the series into slow and fast slots: the gap
/// between the upper and lower halves of the slot means, relative to the
/// series range. 1 is a perfect square wave.
pub fn period_separation(latencies: &[f64], period: usize) -> f64 {
    let slots = latencies.len() / period.max(1);
    if period == 0 || slots < 2 {
        return 0.0;
    }
    let mut means: Vec<f64> = latencies
        .chunks_exact(period)
        .map(|c| c.iter().sum::<f64>() / period as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let lo = latencies.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = latencies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        return 0.0;
    }
    let h = means.len() / 2;
    let low = means[..h].iter().sum::<f64>() / h as f64;
    let high = means[means.len() - h..].iter().sum::<f64>() / h as f64;
    (high - low) / (hi - lo)
}

/// Scans `periods` and returns the best-separating one (the shortest on ties).
pub fn best_fit_period(latencies: &[f64], periods: std::ops::RangeInclusive<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for p in periods {
        let s = period_separation(latencies, p);
        if best.is_none_or(|(_, b)| s > b + 1e-12) {
            best = Some((p, s));
        }
    }
    best.filter(|&(_, s)| s > 0.0).map(|(p, _)| p)
}

/// A replayable sequence of byte addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub id: String,
    pub addrs: Vec<u64>,
}

impl AccessTrace {
    /// One hex address per line (optional `0x`), `#` starts a comment.
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self> {
        let mut addrs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let hex = line.strip_prefix("0x").or_else(|| line.strip_prefix("0X")).unwrap_or(line);
            let a = u64::from_str_radix(hex, 16)
                .map_err(|e| SimError::TraceParse { line: n + 1, msg: format!("`{line}`: {e}") })?;
            addrs.push(a);
        }
        Ok(Self { id: id.into(), addrs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| SimError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::parse(id, &text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# trace {}\n", self.id);
        for a in &self.addrs {
            s.push_str(&format!("{a:x}\n"));
        }
        s
    }

    /// `lines` consecutive lines, scanned `passes` times.
    pub fn sequential(geometry: &CacheGeometry, lines: u64, passes: usize) -> Self {
        let ls = geometry.line_size as u64;
        let addrs = (0..passes).flat_map(|_| (0..lines).map(move |l| l * ls)).collect();
        Self { id: format!("seq-{lines}x{passes}"), addrs }
    }

    /// `count` accesses `stride` bytes apart, scanned `passes` times.
    pub fn strided(stride: u64, count: u64, passes: usize) -> Self {
        let addrs = (0..passes).flat_map(|_| (0..count).map(move |i| i * stride)).collect();
        Self { id: format!("stride-{stride}x{count}x{passes}"), addrs }
    }

    /// N+1 lines conflicting in set 0, accessed round-robin `passes` times:
    /// the pattern that makes true LRU miss on every access.
    pub fn cyclic_conflict(geometry: &CacheGeometry, passes: usize) -> Self {
        let n = geometry.ways as u64 + 1;
        let addrs = (0..passes)
            .flat_map(|_| (0..n).map(|t| geometry.compose(t, 0).0))
            .collect();
        Self { id: format!("cyclic-{n}x{passes}"), addrs }
    }

    /// `len` line accesses drawn from a Zipf(`exponent`) distribution over `lines` lines.
    pub fn zipf(geometry: &CacheGeometry, lines: u64, exponent: f64, len: usize, seed: u64) -> Result<Self> {
        let dist = Zipf::new(lines as f64, exponent)
            .map_err(|e| SimError::Parameter(format!("zipf: {e}")))?;
        let mut rng = stream_rng(seed, &[0x21bf]);
        // scatter ranks over the address space so hot lines do not share a set
        let ls = geometry.line_size as u64;
        let addrs = (0..len)
            .map(|_| {
                let rank = dist.sample(&mut rng) as u64 - 1;
                rank.wrapping_mul(0x9e37_79b9) % (lines * 4) * ls + rng.random_range(0..ls)
            })
            .collect();
        Ok(Self { id: format!("zipf-{lines}-{exponent}"), addrs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissRateReport {
    pub trace: String,
    pub policy: PolicyKind,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// First touches of each line; identical under every policy.
    pub compulsory: u64,
    pub miss_rate: f64,
}

impl MissRateReport {
    /// Miss rate over the accesses that are not first touches.
    pub fn steady_state_miss_rate(&self) -> f64 {
        let rest = self.accesses - self.compulsory;
        if rest == 0 {
            0.0
        } else {
            (self.misses - self.compulsory) as f64 / rest as f64
        }
    }
}

/// Replays `trace` through a fresh cache.
pub fn miss_rate(trace: &AccessTrace, geometry: CacheGeometry, policy: PolicyKind, seed: u64) -> Result<MissRateReport> {
    if trace.addrs.is_empty() {
        return Err(SimError::Parameter(format!("trace `{}` is empty", trace.id)));
    }
    let mut cache = CacheModel::new(geometry, policy, seed)?;
    let ls = geometry.line_size as u64;
    let mut seen = HashSet::new();
    let (mut hits, mut misses, mut compulsory) = (0, 0, 0);
    for &a in &trace.addrs {
        if seen.insert(a / ls) {
            compulsory += 1;
        }
        match cache.access(Address(a)).kind {
            AccessKind::Hit => hits += 1,
            AccessKind::Miss | AccessKind::Bypass => misses += 1,
        }
    }
    let accesses = trace.addrs.len() as u64;
    Ok(MissRateReport {
        trace: trace.id.clone(),
        policy,
        accesses,
        hits,
        misses,
        compulsory,
        miss_rate: misses as f64 / accesses as f64,
    })
}

/// Every (trace, policy) pair, in trace-major order.
pub fn miss_rate_grid(
    traces: &[AccessTrace],
    geometry: CacheGeometry,
    policies: &[PolicyKind],
    seed: u64,
) -> Result<Vec<MissRateReport>> {
    let np = policies.len();
    par::map_indexed(traces.len() * np, |i| miss_rate(&traces[i / np], geometry, policies[i % np], seed))
        .into_iter()
        .collect()
}

/// Line addresses evicted while replaying `trace`, in order.
pub fn victim_sequence(trace: &[u64], geometry: CacheGeometry, policy: PolicyKind, seed: u64) -> Result<Vec<u64>> {
    let mut cache = CacheModel::new(geometry, policy, seed)?;
    let mut out = Vec::new();
    for &a in trace {
        let (_, set) = geometry.decompose(Address(a));
        if let Some(tag) = cache.access(Address(a)).evicted_tag {
            out.push(geometry.compose(tag, set).0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance(b"0101", b"0101"), 0);
        assert_eq!(edit_distance(b"", b"101"), 3);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn filter_drops_long_runs() {
        assert!(runlength_filter(&[1; 6], 4).unwrap().segments.is_empty());
        let r = runlength_filter(&[0, 1, 0, 1], 4).unwrap();
        assert_eq!(r.segments, vec![Segment { start: 0, bits: vec![0, 1, 0, 1] }]);
        assert!(!r.flagged());
        assert!(runlength_filter(&[1], 0).is_err());
    }

    #[test]
    fn square_wave_decodes_alternating() {
        let p = 5;
        let lat: Vec<f64> = (0..40).map(|i| if (i / p) % 2 == 0 { 35.0 } else { 45.0 }).collect();
        assert_eq!(moving_average_decode(&lat, 1, p).unwrap(), vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(best_fit_period(&lat, 2..=9), Some(5));
        assert!(moving_average_decode(&[40.0; 20], 3, 4).is_err());
    }

    #[test]
    fn trace_parse_reports_line_numbers() {
        let t = AccessTrace::parse("t", "# hdr\n0x40\n80  # c\n\n").unwrap();
        assert_eq!(t.addrs, vec![0x40, 0x80]);
        match AccessTrace::parse("t", "40\nzz\n") {
            Err(SimError::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let back = AccessTrace::parse("t", &t.to_text()).unwrap();
        assert_eq!(back.addrs, t.addrs);
    }

    #[test]
    fn fitting_working_set_only_misses_compulsorily() {
        let g = CacheGeometry::default();
        let t = AccessTrace::sequential(&g, 64 * 8, 5);
        for p in [PolicyKind::TrueLru, PolicyKind::TreePlru, PolicyKind::Fifo, PolicyKind::Random] {
            let r = miss_rate(&t, g, p, 1).unwrap();
            assert_eq!(r.misses, r.compulsory, "{p}");
            assert_eq!(r.steady_state_miss_rate(), 0.0);
        }
    }
}
