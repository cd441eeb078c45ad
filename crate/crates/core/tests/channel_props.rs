use std::collections::HashMap;

use lrusim::channel::{majority_decode, run_covert_channel, ProbeRecord};
use lrusim::eval::{edit_distance, moving_average, runlength_filter, ErrorReport};
use lrusim::secure::pl_attack_demo;
use lrusim::timing::{calibrate_threshold, misclassification_rate};
use lrusim::transient::{recover_secret, Gadget, LeakChannel, RecoveryParams};
use lrusim::{
    CacheGeometry, ChannelConfig, Class, LatencyProfile, NoiseModel, PlCache, PlVariant, PolicyKind, Protocol,
    ScheduleMode, ScheduleModel,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain recursive Levenshtein, memoized on suffix positions.
fn lev(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        lev(&a[1..], &b[1..], memo)
    } else {
        1 + lev(&a[1..], b, memo).min(lev(a, &b[1..], memo)).min(lev(&a[1..], &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn bits(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, 0..max)
}

proptest! {
    #[test]
    fn edit_distance_matches_recursive_oracle(a in bits(14), b in bits(14)) {
        prop_assert_eq!(edit_distance(&a, &b), lev(&a, &b, &mut HashMap::new()));
    }

    #[test]
    fn edit_distance_is_a_metric(a in bits(20), b in bits(20), c in bits(20)) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn error_rate_is_distance_over_sent(a in bits(30), b in bits(30)) {
        let r = ErrorReport::new(&a, &b);
        prop_assert_eq!(r.edit_distance, edit_distance(&a, &b));
        if !a.is_empty() {
            prop_assert!((r.error_rate - r.edit_distance as f64 / a.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn runlength_filter_partitions_the_input(b in bits(200), max_run in 1usize..10) {
        let f = runlength_filter(&b, max_run).unwrap();
        let kept: usize = f.segments.iter().map(|s| s.bits.len()).sum();
        let dropped: usize = f.discarded.iter().map(|&(_, n)| n).sum();
        prop_assert_eq!(kept + dropped, b.len());
        for s in &f.segments {
            prop_assert_eq!(&b[s.start..s.start + s.bits.len()], &s.bits[..]);
            for run in s.bits.chunk_by(|x, y| x == y) {
                prop_assert!(run.len() <= max_run);
            }
        }
        for &(start, n) in &f.discarded {
            prop_assert!(n > max_run);
            prop_assert!(b[start..start + n].iter().all(|&x| x == b[start]));
        }
        prop_assert_eq!(f.flagged(), b.chunk_by(|x, y| x == y).any(|r| r.len() > max_run));
    }

    #[test]
    fn moving_average_matches_naive(xs in prop::collection::vec(-1e3f64..1e3, 1..60), window in 1usize..9) {
        let got = moving_average(&xs, window);
        let half = window / 2;
        for (i, g) in got.iter().enumerate() {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(xs.len());
            let want = xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            prop_assert!((g - want).abs() < 1e-9);
        }
    }

    #[test]
    fn majority_ignores_order_within_windows(
        votes in prop::collection::vec(prop::collection::vec(0u8..2, 1..9), 1..20),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = |window, decoded| ProbeRecord { time: 0, window, sent: 0, total_cycles: 0, class: Class::Hit, decoded };
        let mut trace = Vec::new();
        let mut shuffled = Vec::new();
        for (w, v) in votes.iter().enumerate() {
            trace.extend(v.iter().map(|&d| rec(w, d)));
            let mut s = v.clone();
            s.shuffle(&mut rng);
            shuffled.extend(s.into_iter().map(|d| rec(w, d)));
        }
        let want: Vec<u8> = votes.iter().map(|v| u8::from(2 * v.iter().filter(|&&x| x == 1).count() > v.len())).collect();
        prop_assert_eq!(majority_decode(&trace), want.clone());
        prop_assert_eq!(majority_decode(&shuffled), want);
    }

    #[test]
    fn separable_profiles_calibrate_cleanly(
        hit_lo in 1u64..10, hit_span in 0u64..3, gap in 1u64..20, miss_span in 0u64..5, seed in any::<u64>(),
    ) {
        let hit = (hit_lo, hit_lo + hit_span);
        let miss_lo = hit.1 + gap;
        let base = LatencyProfile { hit, miss: (miss_lo, miss_lo + miss_span), jitter: 0, chain_length: 0, quantum: 1, threshold: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = calibrate_threshold(&base, 64, &mut rng).unwrap();
        prop_assert!(t > base.total_range(Class::Hit).1 || t <= base.total_range(Class::Miss).0);
        prop_assert_eq!(misclassification_rate(&base.with_threshold(t), 500, &mut rng), 0.0);
    }

    #[test]
    fn locked_lines_are_never_evicted(
        ops in prop::collection::vec((0u8..3, 0u64..10), 1..300),
        variant in prop::sample::select(vec![PlVariant::Original, PlVariant::LruLocked]),
        policy in prop::sample::select(vec![PolicyKind::TrueLru, PolicyKind::TreePlru, PolicyKind::BIT_PLRU, PolicyKind::Fifo, PolicyKind::Random]),
        touch in any::<bool>(),
    ) {
        let geo = CacheGeometry::single_set(4);
        let mut pl = PlCache::new(geo, policy, variant, 5).unwrap().with_bypass_touch(touch);
        let mut locked = std::collections::HashSet::new();
        for (op, tag) in ops {
            match op {
                0 => {
                    let o = pl.access_line(0, tag);
                    if let Some(ev) = o.evicted_tag {
                        prop_assert!(!locked.contains(&ev));
                    }
                }
                1 => {
                    if pl.lock_line(0, tag) {
                        locked.insert(tag);
                    }
                }
                _ => {
                    pl.unlock_line(0, tag);
                    locked.remove(&tag);
                }
            }
            for &t in &locked {
                prop_assert!(pl.is_locked(0, t));
            }
        }
    }

    #[test]
    fn lru_locked_leaks_nothing(
        (a, b) in (1usize..24).prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n))),
        protocol in prop::sample::select(vec![Protocol::SharedMemory, Protocol::NoSharedMemory]),
    ) {
        let cfg = ChannelConfig::new(protocol, 1);
        let ra = pl_attack_demo(PlVariant::LruLocked, &cfg, &a, 1, false, 0).unwrap();
        let rb = pl_attack_demo(PlVariant::LruLocked, &cfg, &b, 1, false, 0).unwrap();
        let classes = |d: &lrusim::secure::PlDemo| d.run.trace.iter().map(|r| r.class).collect::<Vec<_>>();
        prop_assert_eq!(classes(&ra), classes(&rb));
    }

    #[test]
    fn ideal_noiseless_noshared_channel_is_exact(
        msg in prop::collection::vec(0u8..2, 1..40),
        d in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let cfg = ChannelConfig::new(Protocol::NoSharedMemory, d);
        let sched = ScheduleModel::new(ScheduleMode::Ideal, 6000, 600);
        let run = run_covert_channel(&cfg, &sched, &NoiseModel::none(), &msg, seed).unwrap();
        prop_assert_eq!(run.received, msg);
        prop_assert_eq!(run.error.edit_distance, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn noiseless_flush_reload_recovers_any_secret(secret in prop::collection::vec(any::<u8>(), 1..6), seed in any::<u64>()) {
        let mut p = RecoveryParams::new(LeakChannel::FlushReload);
        p.seed = seed;
        let r = recover_secret(&Gadget::new(&secret), &p).unwrap();
        prop_assert_eq!(r.correct(&secret), secret.len());
    }

    #[test]
    fn gadget_digits_reassemble_the_byte(v in any::<u8>()) {
        let g = Gadget::new(&[]);
        let base = g.usable_sets();
        let back: usize = (0..g.passes()).map(|p| g.set_map(v, p) * base.pow(p)).sum();
        prop_assert_eq!(back, v as usize);
        for p in 0..g.passes() {
            prop_assert!(g.set_map(v, p) < base);
        }
    }
}
