use std::collections::BTreeMap;

use emtopk::bench::SELECT_RANK_BOUND;
use emtopk::bigk::Point;
use emtopk::em::{BlockStore, EmConfig};
use emtopk::facade::{oracle_topk, FacadeConfig, QueryPath, TopK};
use emtopk::flgroup::FlGroup;
use emtopk::key::Key;
use emtopk::smallk::SmallK;
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Insert(u16, u32),
    Delete(usize),
    Query(u16, u16, usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        5 => (any::<u16>(), any::<u32>()).prop_map(|(x, y)| Op::Insert(x, y)),
        2 => any::<usize>().prop_map(Op::Delete),
        3 => (any::<u16>(), any::<u16>(), 1usize..300).prop_map(|(a, b, k)| Op::Query(a, b, k)),
    ]
}

fn store(b: usize) -> BlockStore {
    BlockStore::new(EmConfig::new(b, 1 << 16, 64).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Both query paths agree with the oracle, and the small-k path is taken.
    #[test]
    fn facade_matches_oracle(b in prop::sample::select(vec![8usize, 16, 32]), ops in prop::collection::vec(op(), 1..600)) {
        let mut st = store(b);
        let mut t = TopK::new(&mut st, FacadeConfig::default()).unwrap();
        let mut live: BTreeMap<Key, Key> = BTreeMap::new();
        let mut used_y = std::collections::HashSet::new();
        for o in ops {
            match o {
                Op::Insert(x, y) => {
                    let (x, y) = (x as Key + 1, y as Key + 1);
                    if live.contains_key(&x) || !used_y.insert(y) {
                        continue;
                    }
                    t.insert(&mut st, x, y).unwrap();
                    live.insert(x, y);
                }
                Op::Delete(i) => {
                    if live.is_empty() {
                        continue;
                    }
                    let x = *live.keys().nth(i % live.len()).unwrap();
                    let p = t.delete(&mut st, x).unwrap();
                    prop_assert_eq!(Some(p.y), live.remove(&x));
                }
                Op::Query(a, c, k) => {
                    let (x1, x2) = (a.min(c) as Key, a.max(c) as Key + 1);
                    let pts: Vec<Point> = live.iter().map(|(&x, &y)| Point::new(x, y)).collect();
                    let (got, trace) = t.query_topk_traced(&mut st, x1, x2, k).unwrap();
                    prop_assert_eq!(got, oracle_topk(&pts, x1, x2, k));
                    if k < t.k_threshold() {
                        prop_assert_eq!(trace.path, QueryPath::SmallK);
                    }
                }
            }
        }
        prop_assert!(t.audit(&st).is_ok());
    }

    // Approximate selection returns an in-range point of rank in [k, bound*k].
    #[test]
    fn smallk_selection_rank(seed in any::<u64>(), n in 50usize..1500) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts: Vec<Point> = Vec::new();
        let mut xs = std::collections::HashSet::new();
        while pts.len() < n {
            let x = rng.gen_range(1..1u64 << 32);
            if xs.insert(x) {
                pts.push(Point::new(x, rng.gen::<u64>() >> 4 | 1));
            }
        }
        let mut st = store(32);
        let t = SmallK::build(&mut st, pts.clone(), None).unwrap();
        let l = t.params().l;
        for _ in 0..40 {
            let a = rng.gen_range(0..1u64 << 32);
            let c = rng.gen_range(0..1u64 << 32);
            let (x1, x2) = (a.min(c), a.max(c));
            let k = rng.gen_range(1..=l);
            let inr: Vec<&Point> = pts.iter().filter(|p| x1 <= p.x && p.x <= x2).collect();
            match t.select_approx(&mut st, x1, x2, k).unwrap() {
                None => prop_assert!(inr.len() < k),
                Some(p) => {
                    prop_assert!(x1 <= p.x && p.x <= x2);
                    let r = inr.iter().filter(|q| q.y >= p.y).count();
                    prop_assert!(r >= k && r <= SELECT_RANK_BOUND * k, "rank {} for k {}", r, k);
                }
            }
        }
    }

    // The group audit holds after any sequence of updates.
    #[test]
    fn flgroup_audit_holds(ops in prop::collection::vec((0usize..4, any::<u16>(), any::<bool>()), 1..400)) {
        let (f, l) = (4, 16);
        let mut st = store(16);
        let mut g = FlGroup::new(&mut st, f, l).unwrap();
        let mut owner: BTreeMap<Key, usize> = BTreeMap::new();
        for (i, v, del) in ops {
            let v = v as Key;
            match owner.get(&v).copied() {
                Some(j) if del => {
                    g.delete(&mut st, j, v).unwrap();
                    owner.remove(&v);
                }
                None if g.set_len(i) < l => {
                    g.insert(&mut st, i, v).unwrap();
                    owner.insert(v, i);
                }
                _ => continue,
            }
            prop_assert!(g.audit(&st).is_ok(), "{:?}", g.audit(&st));
        }
    }
}
