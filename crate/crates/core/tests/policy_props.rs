use std::collections::{HashSet, VecDeque};

use lrusim::eval::{miss_rate, victim_sequence, AccessTrace};
use lrusim::{BitPlruReset, CacheGeometry, CacheSet, PolicyKind, ReplacementState};
use proptest::prelude::*;

/// Recency list, front = most recent. Nothing shared with the library.
struct LruOracle {
    ways: usize,
    order: VecDeque<u64>,
}

impl LruOracle {
    fn access(&mut self, tag: u64) -> (bool, Option<u64>) {
        if let Some(i) = self.order.iter().position(|&t| t == tag) {
            self.order.remove(i);
            self.order.push_front(tag);
            return (true, None);
        }
        let evicted = if self.order.len() == self.ways { self.order.pop_back() } else { None };
        self.order.push_front(tag);
        (false, evicted)
    }
}

/// Tree-PLRU over an explicit node array indexed by (lo, hi) ranges; `true`
/// sends the victim search right.
struct TreeOracle {
    ways: usize,
    nodes: std::collections::HashMap<(usize, usize), bool>,
}

impl TreeOracle {
    fn new(ways: usize) -> Self {
        Self { ways, nodes: Default::default() }
    }

    fn victim(&self) -> usize {
        let (mut lo, mut hi) = (0, self.ways);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if *self.nodes.get(&(lo, hi)).unwrap_or(&false) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn touch(&mut self, way: usize) {
        let (mut lo, mut hi) = (0, self.ways);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let right = way >= mid;
            // point away from the accessed half
            self.nodes.insert((lo, hi), !right);
            if right {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}

fn tags(pool: u64, len: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0..pool, 1..len)
}

fn ways_pow2() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 2, 4, 8, 16])
}

fn any_policy() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(vec![
        PolicyKind::TrueLru,
        PolicyKind::TreePlru,
        PolicyKind::BIT_PLRU,
        PolicyKind::BitPlru(BitPlruReset::ClearAll),
        PolicyKind::Fifo,
        PolicyKind::Random,
    ])
}

proptest! {
    #[test]
    fn true_lru_matches_recency_list(ways in 1usize..12, seq in tags(20, 400)) {
        let mut set = CacheSet::new(PolicyKind::TrueLru, ways, 0).unwrap();
        let mut oracle = LruOracle { ways, order: VecDeque::new() };
        for &t in &seq {
            let o = set.access(t);
            let (hit, evicted) = oracle.access(t);
            prop_assert_eq!(o.is_hit(), hit);
            prop_assert_eq!(o.evicted_tag, evicted);
        }
    }

    #[test]
    fn true_lru_ages_stay_a_permutation(ways in 1usize..16, seq in tags(40, 300)) {
        let mut set = CacheSet::new(PolicyKind::TrueLru, ways, 0).unwrap();
        for &t in &seq {
            set.access(t);
            let ReplacementState::TrueLru { ages } = set.state() else { unreachable!() };
            let mut sorted: Vec<usize> = ages.iter().map(|&a| a as usize).collect();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..ways).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tree_plru_matches_range_oracle(ways in ways_pow2(), seq in tags(24, 400)) {
        let mut set = CacheSet::new(PolicyKind::TreePlru, ways, 0).unwrap();
        let mut oracle = TreeOracle::new(ways);
        let mut resident: Vec<Option<u64>> = vec![None; ways];
        for &t in &seq {
            let o = set.access(t);
            let way = match resident.iter().position(|&r| r == Some(t)) {
                Some(w) => w,
                None => resident.iter().position(|r| r.is_none()).unwrap_or_else(|| oracle.victim()),
            };
            prop_assert_eq!(o.is_hit(), resident[way] == Some(t));
            prop_assert_eq!(o.way, Some(way));
            resident[way] = Some(t);
            oracle.touch(way);
        }
        prop_assert_eq!(set.state().state_bits(), ways - 1);
    }

    #[test]
    fn tree_plru_never_evicts_the_line_just_touched(ways in prop::sample::select(vec![2usize, 4, 8, 16]), seq in tags(40, 300)) {
        let mut set = CacheSet::new(PolicyKind::TreePlru, ways, 0).unwrap();
        let mut last = None;
        for &t in &seq {
            let o = set.access(t);
            if let (Some(prev), Some(ev)) = (last, o.evicted_tag) {
                prop_assert_ne!(prev, ev);
            }
            last = Some(t);
        }
    }

    #[test]
    fn bit_plru_never_saturates(ways in 2usize..16, seq in tags(30, 300)) {
        let mut set = CacheSet::new(PolicyKind::BIT_PLRU, ways, 0).unwrap();
        for &t in &seq {
            set.access(t);
            let ReplacementState::BitPlru { mru, .. } = set.state() else { unreachable!() };
            prop_assert_ne!(mru.count_ones() as usize, ways);
            // the accessed way always keeps its bit
            let way = set.lookup(t).unwrap();
            prop_assert!(mru & (1 << way) != 0);
        }
    }

    #[test]
    fn two_way_policies_agree(seq in tags(5, 2000)) {
        let mut sets: Vec<CacheSet> = [PolicyKind::TrueLru, PolicyKind::TreePlru, PolicyKind::BIT_PLRU]
            .into_iter()
            .map(|p| CacheSet::new(p, 2, 0).unwrap())
            .collect();
        for &t in &seq {
            let o: Vec<_> = sets.iter_mut().map(|s| s.access(t)).collect();
            prop_assert_eq!(o[0], o[1]);
            prop_assert_eq!(o[1], o[2]);
        }
    }

    #[test]
    fn fifo_ignores_rehits(seq in tags(16, 300), picks in prop::collection::vec(any::<prop::sample::Index>(), 300)) {
        let geo = CacheGeometry::single_set(4);
        let mut shadow = CacheSet::new(PolicyKind::Fifo, 4, 0).unwrap();
        let mut with_hits = Vec::new();
        for (i, &t) in seq.iter().enumerate() {
            with_hits.push(t * 64);
            shadow.access(t);
            if i % 2 == 0 {
                let r = shadow.resident_tags();
                let extra = r[picks[i].index(r.len())];
                shadow.access(extra);
                with_hits.push(extra * 64);
            }
        }
        let base: Vec<u64> = seq.iter().map(|t| t * 64).collect();
        prop_assert_eq!(
            victim_sequence(&base, geo, PolicyKind::Fifo, 0).unwrap(),
            victim_sequence(&with_hits, geo, PolicyKind::Fifo, 0).unwrap()
        );
    }

    #[test]
    fn invalid_ways_fill_first_in_order(policy in any_policy(), seq in tags(64, 100)) {
        let mut set = CacheSet::new(policy, 8, 3).unwrap();
        let mut distinct = 0;
        let mut seen = HashSet::new();
        for &t in &seq {
            let o = set.access(t);
            if seen.insert(t) && distinct < 8 {
                prop_assert_eq!(o.way, Some(distinct));
                prop_assert_eq!(o.evicted_tag, None);
                distinct += 1;
            }
        }
    }

    #[test]
    fn resident_lines_never_duplicate(policy in any_policy(), seq in tags(30, 300)) {
        let mut set = CacheSet::new(policy, 8, 1).unwrap();
        for &t in &seq {
            set.access(t);
            prop_assert!(set.contains(t));
            let r = set.resident_tags();
            let uniq: HashSet<_> = r.iter().collect();
            prop_assert_eq!(uniq.len(), r.len());
        }
    }

    #[test]
    fn compulsory_misses_do_not_depend_on_policy(addrs in prop::collection::vec(0u64..1 << 16, 1..500)) {
        let geo = CacheGeometry::new(16, 4, 64).unwrap();
        let trace = AccessTrace { id: "p".into(), addrs };
        let first = miss_rate(&trace, geo, PolicyKind::TrueLru, 0).unwrap().compulsory;
        for p in [PolicyKind::TreePlru, PolicyKind::BIT_PLRU, PolicyKind::Fifo, PolicyKind::Random] {
            let r = miss_rate(&trace, geo, p, 9).unwrap();
            prop_assert_eq!(r.compulsory, first);
            prop_assert!(r.misses >= r.compulsory);
            prop_assert_eq!(r.hits + r.misses, r.accesses);
        }
    }

    #[test]
    fn miss_rate_is_deterministic(addrs in prop::collection::vec(0u64..1 << 14, 1..300), seed in any::<u64>()) {
        let geo = CacheGeometry::new(8, 2, 64).unwrap();
        let trace = AccessTrace { id: "d".into(), addrs };
        prop_assert_eq!(
            miss_rate(&trace, geo, PolicyKind::Random, seed).unwrap(),
            miss_rate(&trace, geo, PolicyKind::Random, seed).unwrap()
        );
    }

    #[test]
    fn small_working_sets_only_miss_compulsorily(policy in any_policy(), passes in 1usize..20) {
        let geo = CacheGeometry::default();
        let trace = AccessTrace::sequential(&geo, (geo.num_sets * geo.ways) as u64, passes);
        let r = miss_rate(&trace, geo, policy, 0).unwrap();
        prop_assert_eq!(r.misses, r.compulsory);
        prop_assert_eq!(r.steady_state_miss_rate(), 0.0);
    }

    #[test]
    fn trace_text_round_trips(addrs in prop::collection::vec(any::<u64>(), 0..100)) {
        let t = AccessTrace { id: "rt".into(), addrs };
        let back = AccessTrace::parse("rt", &t.to_text()).unwrap();
        prop_assert_eq!(back, t);
    }
}

#[test]
fn cyclic_conflict_thrashes_lru_only() {
    let geo = CacheGeometry::single_set(8);
    let trace = AccessTrace::cyclic_conflict(&geo, 50);
    assert_eq!(miss_rate(&trace, geo, PolicyKind::TrueLru, 0).unwrap().steady_state_miss_rate(), 1.0);
    for seed in 0..10 {
        assert!(miss_rate(&trace, geo, PolicyKind::Random, seed).unwrap().miss_rate < 1.0);
    }
}
