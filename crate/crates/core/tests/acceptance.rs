//! Acceptance suite. Each test checks one criterion and writes a single
//! `criterion N: PASS|FAIL ...` line straight to stderr, so the line shows up
//! even when the harness captures test output.

use std::collections::HashSet;
use std::io::Write;

use emtopk::aurs::{aurs_select, rank_bound_factor, RankedSource};
use emtopk::bench::{self, AuditMode, Distribution, GenParams, Mix, RunConfig, Structure, WorkloadOp};
use emtopk::bigk::{BigK, Point};
use emtopk::em::{BlockStore, EmConfig};
use emtopk::facade::{oracle_topk, FacadeConfig, TopK};
use emtopk::flgroup::FlGroup;
use emtopk::heap_select::{concat_heaps, select_top, HeapSource};
use emtopk::key::Key;
use emtopk::sketch::{pivot_count, sketch_union_select, Sketch, SketchLayout};
use emtopk::smallk::SmallK;
use emtopk::Error;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn report(n: u32, failures: &[String], detail: &str) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    let mut line = format!("criterion {n}: {status} {detail}");
    if let Some(f) = failures.first() {
        line.push_str(&format!(" ({} failures, first: {f})", failures.len()));
    }
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(failures.is_empty(), "{line}");
}

fn config(b: usize) -> EmConfig {
    EmConfig::new(b, 1 << 16, 64).unwrap()
}

fn store(b: usize) -> BlockStore {
    BlockStore::new(config(b))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<Point> {
    let mut xs = HashSet::new();
    let mut ys = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.gen_range(1..span);
        let y = rng.gen_range(1..1u64 << 50);
        if xs.insert(x) && ys.insert(y) {
            out.push(Point::new(x, y));
        }
    }
    out
}

fn log_uniform(rng: &mut ChaCha8Rng, max: usize) -> usize {
    let e = rng.gen_range(0.0..=(max.max(1) as f64).ln());
    (e.exp() as usize).clamp(1, max.max(1))
}

// 1: exact answers from the facade and from the large-k structure alone.
#[test]
fn criterion_1_exact_topk() {
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut queries = 0usize;
    for b in [8, 16, 32] {
        for seed in 1..=10u64 {
            let n = 1usize << (9 + (seed - 1) % 6);
            let distribution = if seed % 2 == 0 { Distribution::Clustered } else { Distribution::Uniform };
            let mut ops = bench::generate(GenParams { n, distribution, seed, mix: Mix::Mixed });
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
            for i in 0..1000 {
                let a = rng.gen_range(-1.0e4..1.01e6);
                let c = rng.gen_range(-1.0e4..1.01e6);
                let k = if i % 10 == 0 { n } else { log_uniform(&mut rng, n) };
                ops.push(WorkloadOp::Query { x1: f64::min(a, c), x2: f64::max(a, c), k });
            }
            ops.push(WorkloadOp::Query { x1: -1.0e9, x2: 1.0e9, k: n });
            queries = queries.max(ops.iter().filter(|o| o.tag() == 'Q').count());
            for structure in [Structure::Facade, Structure::BigK] {
                let cfg = RunConfig { structure, audit: AuditMode::Final, oracle: true, facade: FacadeConfig::default() };
                let rep = bench::run(config(b), &ops, &cfg).unwrap();
                runs += 1;
                for (i, m) in rep.mismatches.iter().chain(&rep.audit_failures) {
                    failures.push(format!("B={b} seed={seed} {structure:?} op {i}: {m}"));
                }
            }
        }
    }
    report(1, &failures, &format!("{runs} runs, n up to 16384, up to {queries} queries per run"));
}

// 2: the exact answer is contained in the candidate set of every query.
#[test]
fn criterion_2_candidates_cover_answer() {
    let mut failures = Vec::new();
    let mut checked = 0;
    for b in [8, 16, 32] {
        for (seed, n) in [(1u64, 300usize), (2, 2000), (3, 6000)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + b as u64);
            let pts = random_points(&mut rng, n, 1 << 30);
            let mut st = store(b);
            let t = BigK::build(&mut st, pts.clone()).unwrap();
            for _ in 0..300 {
                let a = rng.gen_range(0..1u64 << 30);
                let c = rng.gen_range(0..1u64 << 30);
                let (x1, x2) = (a.min(c), a.max(c));
                let k = log_uniform(&mut rng, n);
                let (got, trace) = t.query_topk_traced(&mut st, x1, x2, k).unwrap();
                let want = oracle_topk(&pts, x1, x2, k);
                checked += 1;
                if got != want {
                    failures.push(format!("B={b} n={n} wrong answer for [{x1}, {x2}] k={k}"));
                }
                let cand: HashSet<Point> = trace.candidates.iter().copied().collect();
                if let Some(p) = want.iter().find(|p| !cand.contains(p)) {
                    failures.push(format!("B={b} n={n} answer point {p:?} not a candidate"));
                }
            }
        }
    }
    report(2, &failures, &format!("{checked} traced queries"));
}

// 3: invariants hold after every update, and every maintenance path runs.
#[test]
fn criterion_3_bigk_invariants_under_fuzz() {
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for b in [4, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(b as u64);
        let mut st = store(b);
        let mut t = BigK::new(&mut st).unwrap();
        t.set_token_tracking(true);
        let pool = random_points(&mut rng, 20_000, 1 << 20);
        let mut next = 0;
        let mut live: Vec<Point> = Vec::new();
        let mut n0 = 1;
        let mut global = 0;
        for step in 0..10_000 {
            // grow to ~1500, shrink towards ~200, then grow again
            let phase = (step / 2500) % 2 == 0;
            let p_insert = if phase { 0.75 } else { 0.3 };
            if live.is_empty() || rng.gen_bool(p_insert) {
                let p = pool[next];
                next += 1;
                t.insert(&mut st, p).unwrap();
                live.push(p);
            } else {
                let p = live.swap_remove(rng.gen_range(0..live.len()));
                t.delete(&mut st, p).unwrap();
            }
            if t.len() >= 2 * n0 || 2 * t.len() <= n0 {
                t.rebuild_all(&mut st);
                t.set_token_tracking(true);
                n0 = t.len().max(1);
                global += 1;
            }
            if let Err(v) = t.audit_invariants() {
                failures.push(format!("B={b} step {step}: {v}"));
                break;
            }
            if step % 500 == 0 && !live.is_empty() {
                let k = log_uniform(&mut rng, live.len());
                if t.query_topk(&mut st, 0, u64::MAX - 1, k).unwrap() != oracle_topk(&live, 0, u64::MAX - 1, k) {
                    failures.push(format!("B={b} step {step}: wrong top-{k}"));
                }
            }
        }
        let s = t.stats();
        if s.push_downs == 0 || s.pull_ups == 0 || s.draining_pull_ups == 0 || s.subtree_rebuilds == 0 || global == 0 {
            failures.push(format!("B={b}: a maintenance path never ran: {s:?}, global rebuilds {global}"));
        }
        detail.push(format!(
            "B={b}: push_downs={} pull_ups={} draining={} subtree_rebuilds={} global={global}",
            s.push_downs, s.pull_ups, s.draining_pull_ups, s.subtree_rebuilds
        ));
    }
    report(3, &failures, &detail.join("; "));
}

/// Exact local ranks behind a ranked source; returns the element of rank
/// `ceil(rho)` or a higher-ranked one still inside `[rho, c*rho)`.
struct Exact {
    desc: Vec<Key>,
    c: f64,
    high: bool,
}

impl RankedSource for Exact {
    fn len(&self) -> usize {
        self.desc.len()
    }

    fn max_element(&self, _: &mut BlockStore) -> Key {
        self.desc[0]
    }

    fn rank_select(&self, _: &mut BlockStore, rho: f64) -> Key {
        let lo = rho.ceil() as usize;
        let hi = ((self.c * rho).ceil() as usize - 1).clamp(lo, self.desc.len());
        self.desc[if self.high { hi } else { lo } - 1]
    }
}

fn sketch_fuzz(failures: &mut Vec<String>) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (f, l) = (8, 32);
    let mut st = store(32);
    let mut g = FlGroup::new(&mut st, f, l).unwrap();
    let mut sets: Vec<Vec<Key>> = vec![Vec::new(); f];
    let mut used = HashSet::new();
    let mut queries = 0;
    for step in 0..10_000 {
        let i = rng.gen_range(0..f);
        if sets[i].len() < l && (sets[i].is_empty() || rng.gen_bool(0.55)) {
            let v = rng.gen_range(0..1u64 << 40);
            if !used.insert(v) {
                continue;
            }
            g.insert(&mut st, i, v).unwrap();
            sets[i].push(v);
        } else if !sets[i].is_empty() {
            let at = rng.gen_range(0..sets[i].len());
            let v = sets[i].swap_remove(at);
            used.remove(&v);
            g.delete(&mut st, i, v).unwrap();
        }
        if let Err(e) = g.audit(&st) {
            failures.push(format!("group fuzz step {step}: {e}"));
            return queries;
        }
        let a1 = rng.gen_range(0..f);
        let a2 = rng.gen_range(a1..f);
        let union: Vec<Key> = sets[a1..=a2].iter().flatten().copied().collect();
        if union.is_empty() {
            continue;
        }
        let k = rng.gen_range(1..=union.len());
        queries += 1;
        match g.query(&mut st, a1, a2, k).unwrap() {
            Some(x) => {
                let r = union.iter().filter(|&&v| v >= x).count();
                if r < k || r >= 8 * k {
                    failures.push(format!("group query rank {r} for k {k}"));
                }
            }
            None => {
                let lb: usize = sets[a1..=a2].iter().filter(|s| !s.is_empty()).map(|s| 1usize << (pivot_count(s.len()) - 1)).sum();
                if lb >= k {
                    failures.push(format!("group query gave minus infinity for k {k} with certified rank {lb}"));
                }
            }
        }
    }
    queries
}

// 4: rank windows of sketches, the group structure and approximate union
// selection.
#[test]
fn criterion_4_sketch_windows_and_selection() {
    let mut failures = Vec::new();
    let group_queries = sketch_fuzz(&mut failures);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut union_checks = 0;
    for _ in 0..2000 {
        let m = rng.gen_range(1..=6);
        let lists: Vec<Vec<Key>> = (0..m)
            .map(|_| {
                let len = rng.gen_range(1..=100);
                let mut v: Vec<Key> = (0..len).map(|_| rng.gen::<u64>() >> 1).collect();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v.dedup();
                v
            })
            .collect();
        let sketches: Vec<Sketch> = lists.iter().map(|l| Sketch::build(l)).collect();
        for (s, l) in sketches.iter().zip(&lists) {
            if let Err(e) = s.audit(l) {
                failures.push(format!("sketch audit: {e}"));
            }
        }
        let union: Vec<Key> = lists.iter().flatten().copied().collect();
        let k = rng.gen_range(1..=union.len());
        union_checks += 1;
        match sketch_union_select(&sketches, k).unwrap() {
            Some(x) => {
                let r = union.iter().filter(|&&v| v >= x).count();
                if r < k || r >= 8 * k {
                    failures.push(format!("union select rank {r} for k {k}"));
                }
            }
            None => {
                let lb: usize = sketches.iter().map(|s| 1usize << (s.pivots.len() - 1)).sum();
                if lb >= k {
                    failures.push(format!("union select gave minus infinity for k {k}"));
                }
            }
        }
    }

    // approximate union-rank selection, every valid k on small instances
    let c = 2u64;
    let bound = rank_bound_factor(c) as usize;
    let mut st = store(16);
    let mut aurs_runs = 0;
    let mut worst = 0.0f64;
    for trial in 0..300 {
        let m = rng.gen_range(1..=6);
        let sources: Vec<Exact> = (0..m)
            .map(|i| {
                let len = rng.gen_range(1..=64);
                let mut v: Vec<Key> = (0..len).map(|_| rng.gen::<u64>() >> 1).collect();
                v.sort_unstable_by(|a, b| b.cmp(a));
                v.dedup();
                Exact { desc: v, c: c as f64, high: (trial + i) % 2 == 0 }
            })
            .collect();
        let union: Vec<Key> = sources.iter().flat_map(|s| s.desc.iter().copied()).collect();
        let min_len = sources.iter().map(|s| s.desc.len()).min().unwrap();
        for k in 1..=union.len() {
            let res = aurs_select(&mut st, &sources, c, k);
            if k * c as usize > min_len {
                if !matches!(res, Err(Error::KOutOfRange(_))) {
                    failures.push(format!("aurs accepted k {k} with smallest set {min_len}"));
                }
                continue;
            }
            aurs_runs += 1;
            let x = res.unwrap().value;
            let r = union.iter().filter(|&&v| v >= x).count();
            worst = worst.max(r as f64 / k as f64);
            if r < k || r > bound * k {
                failures.push(format!("aurs rank {r} for k {k}, m {m}"));
            }
        }
    }
    report(
        4,
        &failures,
        &format!("{group_queries} group queries, {union_checks} union selections, {aurs_runs} selections (worst rank/k {worst:.2}, bound {bound})"),
    );
}

// 5: the compressed sets fit one block exactly when the layout says so.
#[test]
fn criterion_5_bit_budget() {
    let mut failures = Vec::new();
    let (mut built, mut rejected) = (0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for wb in [32u32, 64] {
        for b in [8usize, 16, 32, 64] {
            for f in [1usize, 2, 4, 8, 16] {
                for l in (0..=8).map(|e| 1usize << e) {
                    let mut st = BlockStore::new(EmConfig::new(b, 1 << 20, wb).unwrap());
                    let layout = SketchLayout::new(f, l).unwrap();
                    let fits = layout.check_budget(b, wb).is_ok()
                        && emtopk::flgroup::PrefixLayout::new(f, l, b).check_budget(b, wb).is_ok();
                    let contents: Vec<Vec<Key>> =
                        (0..f).map(|i| (0..l).map(|j| ((i * l + j) as u64 + 1) << 8).collect()).collect();
                    let tag = format!("wb={wb} B={b} f={f} l={l}");
                    match FlGroup::build(&mut st, f, l, contents) {
                        Err(Error::Params(_)) if !fits => rejected += 1,
                        Err(e) => failures.push(format!("{tag}: {e}")),
                        Ok(_) if !fits => failures.push(format!("{tag}: built although the layout does not fit")),
                        Ok(mut g) => {
                            built += 1;
                            let check = |g: &FlGroup, st: &BlockStore, when: &str, failures: &mut Vec<String>| {
                                let (sk, pr) = g.stored_sets(st);
                                for words in [sk.pack(b, wb), pr.pack(b, wb)] {
                                    match words {
                                        Ok(w) if w.len() <= b && w.iter().all(|&x| wb == 64 || x < 1u64 << wb) => {}
                                        Ok(w) => failures.push(format!("{tag} {when}: {} words or a word too wide", w.len())),
                                        Err(e) => failures.push(format!("{tag} {when}: {e}")),
                                    }
                                }
                            };
                            check(&g, &st, "after build", &mut failures);
                            // churn a few values so the sets repack
                            for _ in 0..4 * f {
                                let i = rng.gen_range(0..f);
                                let v = g.set_values(i)[0];
                                g.delete(&mut st, i, v).unwrap();
                                g.insert(&mut st, i, v + 1).unwrap();
                            }
                            check(&g, &st, "after updates", &mut failures);
                        }
                    }
                }
            }
        }
    }
    report(5, &failures, &format!("{built} configurations built, {rejected} rejected"));
}

fn least_squares3(rows: &[([f64; 3], f64)]) -> [f64; 3] {
    let mut a = [[0.0f64; 4]; 3];
    for (x, y) in rows {
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += x[i] * x[j];
            }
            a[i][3] += x[i] * y;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let factor = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}

/// Largest allowed growth of amortized update I/Os per doubling of n.
const UPDATE_DELTA: [(&str, f64); 3] = [("bigk", 3.0), ("flgroup", 6.0), ("smallk", 6.0)];
const FIT_TOLERANCE: f64 = 0.25;

// 6: I/O scaling at B = 16.
#[test]
fn criterion_6_io_scaling() {
    let b = 16;
    let mut failures = Vec::new();
    let ns: Vec<usize> = (9..=14).map(|e| 1usize << e).collect();

    // (a) query cost against a + b lg n + c k/B, on ranges covering most points
    let ks = [1usize, 16, 64, 256, 512];
    let mut cells = Vec::new();
    let mut heap_checked = 0;
    let mut exhausted = 0;
    for &n in &ns {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let pts = random_points(&mut rng, n, 1 << 40);
        let mut st = store(b);
        let t = BigK::build(&mut st, pts).unwrap();
        for &k in &ks {
            let mut total = 0u64;
            let mut full = 0;
            let reps = 40;
            for _ in 0..reps {
                let x1 = rng.gen_range(0..1u64 << 35);
                let x2 = (1u64 << 40) - rng.gen_range(0..1u64 << 35);
                let before = st.stats();
                let (_, trace) = t.query_topk_traced(&mut st, x1, x2, k).unwrap();
                total += st.stats().since(before).total();
                heap_checked += 1;
                if trace.s_r < trace.t {
                    full += 1;
                }
                if trace.heap_reads > 3 * trace.t + 1 {
                    failures.push(format!("n={n} k={k}: {} heap reads for t={}", trace.heap_reads, trace.t));
                }
            }
            // the heap ran out before t nodes: the query read every node in range
            if full == reps {
                exhausted += 1;
            }
            cells.push((n, k, total as f64 / reps as f64, full == reps));
        }
    }
    let features = |n: usize, k: usize| [1.0, (n as f64).log2(), k as f64 / b as f64];
    let fit_cells = |only_full_heap: bool| {
        let rows: Vec<([f64; 3], f64)> =
            cells.iter().filter(|c| !(only_full_heap && c.3)).map(|&(n, k, io, _)| (features(n, k), io)).collect();
        let coef = least_squares3(&rows);
        let eval = move |n: usize, k: usize| features(n, k).iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>();
        (coef, eval)
    };
    let (coef, eval) = fit_cells(false);
    let mut worst_resid = 0.0f64;
    for &(n, k, io, _) in &cells {
        let fit = eval(n, k);
        let r = (io - fit).abs() / io;
        worst_resid = worst_resid.max(r);
        if r > FIT_TOLERANCE {
            failures.push(format!("query cell n={n} k={k}: mean {io:.1}, fit {fit:.1}"));
        }
    }
    // diagnostic only: the same fit over cells where the heap had t nodes
    let (_, eval_full) = fit_cells(true);
    let worst_full = cells.iter().filter(|c| !c.3).map(|&(n, k, io, _)| (io - eval_full(n, k)).abs() / io).fold(0.0, f64::max);

    // (b) amortized update cost per doubling
    let mut growth = Vec::new();
    for (name, delta) in UPDATE_DELTA {
        let costs: Vec<f64> = ns
            .iter()
            .map(|&n| match name {
                "bigk" => bench::bigk_update_cost(config(b), n, 7),
                "flgroup" => bench::flgroup_update_cost(config(b), n, 7),
                _ => bench::smallk_update_cost(config(b), n, 7),
            })
            .collect();
        let worst = costs.windows(2).map(|w| w[1] - w[0]).fold(f64::MIN, f64::max);
        growth.push(format!("{name} {:.2}..{:.2} (max step {worst:.2}, allowed {delta})", costs[0], costs[costs.len() - 1]));
        if worst > delta {
            failures.push(format!("{name} update cost grows by {worst:.2} per doubling: {costs:?}"));
        }
    }

    // (c) single heaps and concatenations outside the structure
    heap_checked += heap_checks(&mut failures);

    report(
        6,
        &failures,
        &format!(
            "query fit {:.1} + {:.2} lg n + {:.2} k/B, worst residual {:.0}%, heap exhausted in {exhausted}/{} cells (worst residual {:.0}% without them); {}; {heap_checked} heap selections",
            coef[0],
            coef[1],
            coef[2],
            worst_resid * 100.0,
            cells.len(),
            worst_full * 100.0,
            growth.join(", ")
        ),
    );
}

/// Binary max-heaps stored as arrays; a node is `(heap, index)`.
struct ArrayHeaps(Vec<Vec<u64>>);

impl HeapSource for ArrayHeaps {
    type Node = (usize, usize);

    fn key(&self, n: Self::Node) -> u64 {
        self.0[n.0][n.1]
    }

    fn children(&self, n: Self::Node, out: &mut Vec<Self::Node>) {
        for c in [2 * n.1 + 1, 2 * n.1 + 2] {
            if c < self.0[n.0].len() {
                out.push((n.0, c));
            }
        }
    }
}

fn heap_checks(failures: &mut Vec<String>) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut checked = 0;
    for _ in 0..300 {
        let m = rng.gen_range(1..=8);
        let heaps: Vec<Vec<u64>> = (0..m)
            .map(|_| {
                let len = rng.gen_range(1..=200);
                // a sorted array is a valid heap; shuffle within heap order by
                // building through std's BinaryHeap instead
                let h: std::collections::BinaryHeap<u64> = (0..len).map(|_| rng.gen::<u64>() >> 1).collect();
                h.into_vec()
            })
            .collect();
        let src = ArrayHeaps(heaps);
        let roots: Vec<(usize, usize)> = (0..m).map(|i| (i, 0)).collect();
        let mut all: Vec<u64> = src.0.iter().flatten().copied().collect();
        all.sort_unstable_by(|a, b| b.cmp(a));
        for single in [true, false] {
            let r = if single { &roots[..1] } else { &roots[..] };
            let size: usize = r.iter().map(|&(i, _)| src.0[i].len()).sum();
            let t = rng.gen_range(1..=size);
            let heap = concat_heaps(&src, r);
            let sel = select_top(&src, &heap, t);
            checked += 1;
            let mut want: Vec<u64> = r.iter().flat_map(|&(i, _)| src.0[i].iter().copied()).collect();
            want.sort_unstable_by(|a, b| b.cmp(a));
            want.truncate(t);
            let mut got = sel.keys.clone();
            got.sort_unstable_by(|a, b| b.cmp(a));
            if got != want {
                failures.push(format!("heap selection of {t} returned the wrong keys"));
            }
            if sel.reads > 3 * t + 1 {
                failures.push(format!("heap selection of {t} read {} nodes", sel.reads));
            }
        }
    }
    checked
}

// 7: rebuilt structures match from-scratch builds.
#[test]
fn criterion_7_rebuilds_match_fresh() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // large-k structure
    let mut bigk_checks = 0;
    for b in [4, 8, 16] {
        let pool = random_points(&mut rng, 1024, 1 << 20);
        let mut st = store(b);
        let mut t = BigK::new(&mut st).unwrap();
        let mut live = Vec::new();
        let grid: Vec<Key> = (0..=12).map(|i| i * ((1 << 20) / 12)).collect();
        let mut compare = |t: &BigK, st: &mut BlockStore, live: &[Point], what: &str, failures: &mut Vec<String>| {
            let mut fresh_store = store(b);
            let fresh = BigK::build(&mut fresh_store, live.to_vec()).unwrap();
            for (i, &x1) in grid.iter().enumerate() {
                for &x2 in &grid[i..] {
                    for k in [1, 2, 5, 40, live.len()] {
                        let a = t.query_topk(st, x1, x2, k).unwrap();
                        let f = fresh.query_topk(&mut fresh_store, x1, x2, k).unwrap();
                        if a != f || a != oracle_topk(live, x1, x2, k) {
                            failures.push(format!("B={b} after {what}: query [{x1}, {x2}] k={k} differs"));
                            return;
                        }
                    }
                }
            }
            bigk_checks += 1;
        };
        for &p in &pool {
            let before = t.stats().subtree_rebuilds;
            t.insert(&mut st, p).unwrap();
            live.push(p);
            if t.stats().subtree_rebuilds > before {
                compare(&t, &mut st, &live, "subtree rebuild", &mut failures);
            }
        }
        for _ in 0..600 {
            let p = live.swap_remove(rng.gen_range(0..live.len()));
            t.delete(&mut st, p).unwrap();
        }
        t.rebuild_all(&mut st);
        compare(&t, &mut st, &live, "global rebuild", &mut failures);
    }

    // small-k tree: groups of rebuilt nodes equal fresh ones
    let mut groups = 0;
    let mut rebuilds = 0;
    for (b, n) in [(16usize, 2000usize), (32, 3000)] {
        let pool = random_points(&mut rng, n, 1 << 30);
        let mut st = store(b);
        let mut t = SmallK::new(&mut st, None).unwrap();
        let mut live: Vec<Point> = Vec::new();
        for (i, &p) in pool.iter().enumerate() {
            let before = t.stats();
            t.insert(&mut st, p).unwrap();
            live.push(p);
            if i % 5 == 4 {
                let q = live.swap_remove(rng.gen_range(0..live.len()));
                t.delete(&mut st, q.x).unwrap();
            }
            let after = t.stats();
            if after.subtree_rebuilds > before.subtree_rebuilds || after.global_rebuilds > before.global_rebuilds {
                rebuilds += 1;
                let root = t.last_rebuilt().unwrap();
                for u in t.internal_nodes(root) {
                    groups += 1;
                    if let Err(e) = t.group_matches_fresh(&st, u) {
                        failures.push(format!("B={b} op {i}: {e}"));
                    }
                }
            }
        }
        if let Err(e) = t.audit(&st) {
            failures.push(format!("B={b}: {e}"));
        }
    }

    // facade stays exact through its own rebuilds
    let mut st = store(16);
    let pts = random_points(&mut rng, 1500, 1 << 30);
    let mut f = TopK::build(&mut st, pts[..200].to_vec(), FacadeConfig::default()).unwrap();
    let mut live = pts[..200].to_vec();
    for &p in &pts[200..] {
        f.insert(&mut st, p.x, p.y).unwrap();
        live.push(p);
    }
    for _ in 0..1200 {
        let p = live.swap_remove(rng.gen_range(0..live.len()));
        f.delete(&mut st, p.x).unwrap();
    }
    f.rebuild_all(&mut st).unwrap();
    let mut facade_queries = 0;
    for _ in 0..500 {
        let a = rng.gen_range(0..1u64 << 30);
        let c = rng.gen_range(0..1u64 << 30);
        let k = log_uniform(&mut rng, live.len());
        facade_queries += 1;
        if f.query_topk(&mut st, a.min(c), a.max(c), k).unwrap() != oracle_topk(&live, a.min(c), a.max(c), k) {
            failures.push(format!("facade differs from the oracle on k={k}"));
        }
    }
    if f.stats().global_rebuilds == 0 {
        failures.push("facade never rebuilt".into());
    }

    report(
        7,
        &failures,
        &format!(
            "{bigk_checks} large-k comparisons, {groups} groups over {rebuilds} small-k rebuilds, {facade_queries} facade queries after {} global rebuilds",
            f.stats().global_rebuilds
        ),
    );
}
