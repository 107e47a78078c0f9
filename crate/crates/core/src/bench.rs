//! Workloads, the brute-force oracle, a checked runner and I/O scaling
//! measurements.
//!
//! Workload files are line-oriented. Reals are written as the hexadecimal bit
//! pattern of an IEEE-754 double so that runs reproduce exactly:
//!
//! ```text
//! I <x> <score>      insert
//! D <x>              delete
//! Q <x1> <x2> <k>    top-k query
//! S <x1> <x2> <k>    approximate k-selection probe
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bigk::{BigK, Point};
use crate::em::{BlockStore, EmConfig, IoStats};
use crate::error::{Error, Result};
use crate::facade::{FacadeConfig, TopK};
use crate::flgroup::FlGroup;
use crate::key::{self, Key};
use crate::smallk::SmallK;

pub use crate::facade::oracle_topk;

/// Output rank bound checked for approximate selections.
pub const SELECT_RANK_BOUND: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WorkloadOp {
    Insert { x: f64, score: f64 },
    Delete { x: f64 },
    Query { x1: f64, x2: f64, k: usize },
    Select { x1: f64, x2: f64, k: usize },
}

impl WorkloadOp {
    pub fn tag(&self) -> char {
        match self {
            WorkloadOp::Insert { .. } => 'I',
            WorkloadOp::Delete { .. } => 'D',
            WorkloadOp::Query { .. } => 'Q',
            WorkloadOp::Select { .. } => 'S',
        }
    }
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn format_workload(ops: &[WorkloadOp]) -> String {
    let mut s = String::new();
    for op in ops {
        let _ = match *op {
            WorkloadOp::Insert { x, score } => writeln!(s, "I {} {}", hex(x), hex(score)),
            WorkloadOp::Delete { x } => writeln!(s, "D {}", hex(x)),
            WorkloadOp::Query { x1, x2, k } => writeln!(s, "Q {} {} {k}", hex(x1), hex(x2)),
            WorkloadOp::Select { x1, x2, k } => writeln!(s, "S {} {} {k}", hex(x1), hex(x2)),
        };
    }
    s
}

pub fn parse_workload(text: &str) -> Result<Vec<WorkloadOp>> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        let real = |s: &str| -> Result<f64> {
            let bits = u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|_| err(format!("bad real {s:?}")))?;
            let v = f64::from_bits(bits);
            if v.is_nan() {
                return Err(err(format!("NaN in {s:?}")));
            }
            Ok(v)
        };
        let count = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad count {s:?}")));
        let arity = |n: usize| {
            if f.len() != n {
                Err(err(format!("{} expects {} fields, got {}", f[0], n - 1, f.len() - 1)))
            } else {
                Ok(())
            }
        };
        let op = match f[0] {
            "I" => {
                arity(3)?;
                WorkloadOp::Insert { x: real(f[1])?, score: real(f[2])? }
            }
            "D" => {
                arity(2)?;
                WorkloadOp::Delete { x: real(f[1])? }
            }
            "Q" | "S" => {
                arity(4)?;
                let (x1, x2, k) = (real(f[1])?, real(f[2])?, count(f[3])?);
                if f[0] == "Q" {
                    WorkloadOp::Query { x1, x2, k }
                } else {
                    WorkloadOp::Select { x1, x2, k }
                }
            }
            other => return Err(err(format!("unknown op {other:?}"))),
        };
        ops.push(op);
    }
    Ok(ops)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    Uniform,
    Clustered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mix {
    InsertOnly,
    /// Inserts interleaved with deletes, queries and selection probes.
    Mixed,
    /// All inserts first, then `n` queries.
    QueryHeavy,
}

#[derive(Clone, Copy, Debug)]
pub struct GenParams {
    pub n: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub mix: Mix,
}

struct Gen {
    rng: ChaCha8Rng,
    dist: Distribution,
    centers: Vec<f64>,
    xs: HashSet<u64>,
    scores: HashSet<u64>,
}

impl Gen {
    fn new(seed: u64, dist: Distribution) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..8).map(|_| rng.gen_range(0.0..1.0e6)).collect();
        Gen { rng, dist, centers, xs: HashSet::new(), scores: HashSet::new() }
    }

    fn coord(&mut self) -> f64 {
        match self.dist {
            Distribution::Uniform => self.rng.gen_range(0.0..1.0e6),
            Distribution::Clustered => {
                let c = self.centers[self.rng.gen_range(0..self.centers.len())];
                let spread: f64 = (0..4).map(|_| self.rng.gen_range(-1.0..1.0)).sum();
                c + spread * 2.0e3
            }
        }
    }

    fn point(&mut self) -> (f64, f64) {
        let x = loop {
            let x = self.coord();
            if self.xs.insert(x.to_bits()) {
                break x;
            }
        };
        let s = loop {
            let s: f64 = self.rng.gen_range(-1.0e9..1.0e9);
            if self.scores.insert(s.to_bits()) {
                break s;
            }
        };
        (x, s)
    }

    fn range(&mut self) -> (f64, f64) {
        let a = self.coord();
        let b = self.coord();
        (a.min(b), a.max(b))
    }

    /// Log-uniform k in `[1, max]`.
    fn k(&mut self, max: usize) -> usize {
        let e = self.rng.gen_range(0.0..=(max.max(1) as f64).ln());
        (e.exp() as usize).clamp(1, max.max(1))
    }
}

/// Deterministic workload: the same parameters give the same operations.
pub fn generate(p: GenParams) -> Vec<WorkloadOp> {
    let mut g = Gen::new(p.seed, p.distribution);
    let mut ops = Vec::new();
    let mut live: Vec<f64> = Vec::new();
    match p.mix {
        Mix::InsertOnly | Mix::QueryHeavy => {
            for _ in 0..p.n {
                let (x, score) = g.point();
                live.push(x);
                ops.push(WorkloadOp::Insert { x, score });
            }
            if p.mix == Mix::QueryHeavy {
                for i in 0..p.n {
                    let (x1, x2) = g.range();
                    let k = g.k(p.n);
                    ops.push(if i % 10 == 9 {
                        WorkloadOp::Select { x1, x2, k: g.rng.gen_range(1..=4) }
                    } else {
                        WorkloadOp::Query { x1, x2, k }
                    });
                }
            }
        }
        Mix::Mixed => {
            let mut inserted = 0;
            while inserted < p.n {
                let r: f64 = g.rng.gen();
                if r < 0.6 || live.is_empty() {
                    let (x, score) = g.point();
                    live.push(x);
                    inserted += 1;
                    ops.push(WorkloadOp::Insert { x, score });
                } else if r < 0.75 {
                    let i = g.rng.gen_range(0..live.len());
                    ops.push(WorkloadOp::Delete { x: live.swap_remove(i) });
                } else if r < 0.95 {
                    let (x1, x2) = g.range();
                    let k = g.k(live.len());
                    ops.push(WorkloadOp::Query { x1, x2, k });
                } else {
                    let (x1, x2) = g.range();
                    ops.push(WorkloadOp::Select { x1, x2, k: g.rng.gen_range(1..=4) });
                }
            }
        }
    }
    ops
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Facade,
    BigK,
    SmallK,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditMode {
    Off,
    Final,
    EveryOp,
}

#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub structure: Structure,
    pub audit: AuditMode,
    pub oracle: bool,
    pub facade: FacadeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { structure: Structure::Facade, audit: AuditMode::Final, oracle: true, facade: FacadeConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub index: usize,
    pub op: char,
    pub io: IoStats,
    /// Points returned, 1/0 for a selection, or empty when skipped.
    pub result: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub records: Vec<OpRecord>,
    /// `(op index, message)`; op index is 0-based.
    pub mismatches: Vec<(usize, String)>,
    pub audit_failures: Vec<(usize, String)>,
    /// Operations the structure does not support (e.g. top-k on the small-k
    /// tree alone), or selections with k above its limit.
    pub skipped: usize,
    pub total: IoStats,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.audit_failures.is_empty()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("index,op,reads,writes,result\n");
        for r in &self.records {
            let res = r.result.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", r.index, r.op, r.io.reads, r.io.writes, res);
        }
        s
    }

    /// Mean I/Os per operation of the given kind.
    pub fn mean_io(&self, op: char) -> Option<f64> {
        let v: Vec<u64> = self.records.iter().filter(|r| r.op == op && r.result.is_some()).map(|r| r.io.total()).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<u64>() as f64 / v.len() as f64)
        }
    }
}

enum Target {
    Facade(TopK),
    BigK { t: BigK, n0: usize },
    SmallK(SmallK),
}

impl Target {
    fn new(store: &mut BlockStore, cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.structure {
            Structure::Facade => Target::Facade(TopK::new(store, cfg.facade)?),
            Structure::BigK => Target::BigK { t: BigK::new(store)?, n0: 1 },
            Structure::SmallK => Target::SmallK(SmallK::new(store, cfg.facade.smallk_l)?),
        })
    }

    fn insert(&mut self, store: &mut BlockStore, p: Point, live: &HashSet<Point>) -> Result<()> {
        match self {
            Target::Facade(t) => t.insert(store, p.x, p.y),
            Target::BigK { t, n0 } => {
                if live.iter().any(|q| q.x == p.x || q.y == p.y) {
                    return Err(Error::Duplicate(format!("point ({:#x}, {:#x})", p.x, p.y)));
                }
                t.insert(store, p)?;
                if t.len() >= 2 * *n0 {
                    t.rebuild_all(store);
                    *n0 = t.len();
                }
                Ok(())
            }
            Target::SmallK(t) => t.insert(store, p),
        }
    }

    fn delete(&mut self, store: &mut BlockStore, x: Key, live: &HashSet<Point>) -> Result<Point> {
        match self {
            Target::Facade(t) => t.delete(store, x),
            Target::BigK { t, n0 } => {
                let p = *live
                    .iter()
                    .find(|p| p.x == x)
                    .ok_or_else(|| Error::NotFound(format!("x-coordinate {x:#x}")))?;
                t.delete(store, p)?;
                if 2 * t.len() <= *n0 {
                    t.rebuild_all(store);
                    *n0 = t.len().max(1);
                }
                Ok(p)
            }
            Target::SmallK(t) => t.delete(store, x),
        }
    }

    fn query(&mut self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Option<Result<Vec<Point>>> {
        match self {
            Target::Facade(t) => Some(t.query_topk(store, x1, x2, k)),
            Target::BigK { t, .. } => Some(t.query_topk(store, x1, x2, k)),
            Target::SmallK(_) => None,
        }
    }

    fn select(&mut self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Option<Result<Option<Point>>> {
        let s = match self {
            Target::Facade(t) => t.smallk()?,
            Target::BigK { .. } => return None,
            Target::SmallK(t) => &*t,
        };
        if k > s.params().l {
            return None;
        }
        Some(s.select_approx(store, x1, x2, k))
    }

    fn audit(&self, store: &BlockStore) -> std::result::Result<(), String> {
        match self {
            Target::Facade(t) => t.audit(store),
            Target::BigK { t, .. } => t.audit_invariants().map_err(|v| v.to_string()),
            Target::SmallK(t) => t.audit(store),
        }
    }
}

/// Runs `ops`, checking queries and selections against the oracle and
/// auditing per `cfg.audit`.
pub fn run(config: EmConfig, ops: &[WorkloadOp], cfg: &RunConfig) -> Result<RunReport> {
    let mut store = BlockStore::new(config);
    let mut target = Target::new(&mut store, cfg)?;
    let mut live: HashSet<Point> = HashSet::new();
    let mut rep = RunReport::default();
    let enc = |v: f64| key::encode(v);
    for (i, op) in ops.iter().enumerate() {
        let before = store.stats();
        let mut result = None;
        match *op {
            WorkloadOp::Insert { x, score } => {
                let p = Point::new(enc(x)?, enc(score)?);
                match target.insert(&mut store, p, &live) {
                    Ok(()) => {
                        live.insert(p);
                        result = Some(1);
                    }
                    Err(e) => rep.mismatches.push((i, format!("insert failed: {e}"))),
                }
            }
            WorkloadOp::Delete { x } => match target.delete(&mut store, enc(x)?, &live) {
                Ok(p) => {
                    live.remove(&p);
                    result = Some(1);
                }
                Err(e) => rep.mismatches.push((i, format!("delete failed: {e}"))),
            },
            WorkloadOp::Query { x1, x2, k } => {
                let (a, b) = (enc(x1)?, enc(x2)?);
                match target.query(&mut store, a, b, k) {
                    None => rep.skipped += 1,
                    Some(Err(e)) => rep.mismatches.push((i, format!("query failed: {e}"))),
                    Some(Ok(got)) => {
                        result = Some(got.len());
                        if cfg.oracle {
                            let pts: Vec<Point> = live.iter().copied().collect();
                            let want = oracle_topk(&pts, a, b, k);
                            let (g, w): (HashSet<Point>, HashSet<Point>) = (got.iter().copied().collect(), want.iter().copied().collect());
                            if g != w {
                                rep.mismatches.push((i, format!("top-{k} differs: {} returned, {} expected", got.len(), want.len())));
                            }
                        }
                    }
                }
            }
            WorkloadOp::Select { x1, x2, k } => {
                let (a, b) = (enc(x1)?, enc(x2)?);
                match target.select(&mut store, a, b, k) {
                    None => rep.skipped += 1,
                    Some(Err(e)) => rep.mismatches.push((i, format!("selection failed: {e}"))),
                    Some(Ok(got)) => {
                        result = Some(got.is_some() as usize);
                        if cfg.oracle {
                            let in_q: Vec<&Point> = live.iter().filter(|p| a <= p.x && p.x <= b).collect();
                            match got {
                                None if in_q.len() >= k => rep.mismatches.push((i, format!("no selection with {} points in range", in_q.len()))),
                                None => {}
                                Some(e) => {
                                    let r = in_q.iter().filter(|p| p.y >= e.y).count();
                                    if !live.contains(&e) || e.x < a || e.x > b || r < k || r > SELECT_RANK_BOUND * k {
                                        rep.mismatches.push((i, format!("selection rank {r} outside [{k}, {}]", SELECT_RANK_BOUND * k)));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        rep.records.push(OpRecord { index: i, op: op.tag(), io: store.stats().since(before), result });
        if cfg.audit == AuditMode::EveryOp {
            if let Err(e) = target.audit(&store) {
                rep.audit_failures.push((i, e));
            }
        }
    }
    if cfg.audit == AuditMode::Final {
        if let Err(e) = target.audit(&store) {
            rep.audit_failures.push((ops.len().saturating_sub(1), e));
        }
    }
    rep.total = store.stats();
    Ok(rep)
}

/// One row of a scaling table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleRow {
    pub n: usize,
    pub structure: &'static str,
    pub mean_update_io: f64,
    pub mean_query_io: f64,
}

/// A measured query: `(n, k, I/Os)`.
pub type QuerySample = (usize, usize, u64);

fn distinct_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    let mut xs = HashSet::new();
    let mut ys = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = rng.gen_range(1..1u64 << 40);
        let y = rng.gen_range(1..1u64 << 40);
        if xs.insert(x) && ys.insert(y) {
            out.push(Point::new(x, y));
        }
    }
    out
}

/// Amortized update I/Os of the large-k structure: `n` insertions into an
/// empty structure followed by `n/2` deletions and `n/2` insertions, with
/// global rebuilds, over the whole sequence.
pub fn bigk_update_cost(config: EmConfig, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = distinct_points(&mut rng, n + n / 2);
    let mut store = BlockStore::new(config);
    let mut t = BigK::new(&mut store).expect("block size");
    let mut n0 = 1;
    let mut live: Vec<Point> = Vec::new();
    let mut ops = 0;
    let step = |t: &mut BigK, store: &mut BlockStore, n0: &mut usize| {
        if t.len() >= 2 * *n0 || 2 * t.len() <= *n0 {
            t.rebuild_all(store);
            *n0 = t.len().max(1);
        }
    };
    for &p in &pts[..n] {
        t.insert(&mut store, p).unwrap();
        live.push(p);
        step(&mut t, &mut store, &mut n0);
        ops += 1;
    }
    for &p in &pts[n..] {
        let q = live.swap_remove(rng.gen_range(0..live.len()));
        t.delete(&mut store, q).unwrap();
        step(&mut t, &mut store, &mut n0);
        t.insert(&mut store, p).unwrap();
        live.push(p);
        step(&mut t, &mut store, &mut n0);
        ops += 2;
    }
    store.stats().total() as f64 / ops as f64
}

/// Same update sequence on the small-k tree (which rebuilds itself).
pub fn smallk_update_cost(config: EmConfig, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = distinct_points(&mut rng, n + n / 2);
    let mut store = BlockStore::new(config);
    let mut t = SmallK::new(&mut store, None).expect("small-k fits");
    let mut live: Vec<Point> = Vec::new();
    let mut ops = 0;
    for &p in &pts[..n] {
        t.insert(&mut store, p).unwrap();
        live.push(p);
        ops += 1;
    }
    for &p in &pts[n..] {
        let q = live.swap_remove(rng.gen_range(0..live.len()));
        t.delete(&mut store, q.x).unwrap();
        t.insert(&mut store, p).unwrap();
        live.push(p);
        ops += 2;
    }
    store.stats().total() as f64 / ops as f64
}

/// Amortized update I/Os of a two-set group holding `n` values in total:
/// random replacements that keep both sets near capacity.
pub fn flgroup_update_cost(config: EmConfig, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, l) = (2, n / 2);
    let mut store = BlockStore::new(config);
    let vals = distinct_points(&mut rng, n + 2 * n);
    let mut sets: Vec<Vec<Key>> = vec![Vec::new(); f];
    for (i, p) in vals[..n - f].iter().enumerate() {
        sets[i % f].push(p.y);
    }
    let mut g = FlGroup::build(&mut store, f, l, sets.clone()).expect("group fits");
    let before = store.stats();
    let mut ops = 0;
    for p in &vals[n..] {
        let i = rng.gen_range(0..f);
        if sets[i].len() >= l - 1 {
            let j = rng.gen_range(0..sets[i].len());
            let v = sets[i].swap_remove(j);
            g.delete(&mut store, i, v).unwrap();
            ops += 1;
        }
        g.insert(&mut store, i, p.y).unwrap();
        sets[i].push(p.y);
        ops += 1;
    }
    store.stats().since(before).total() as f64 / ops as f64
}

/// Query I/Os of the large-k structure on `n` random points, for `queries`
/// random ranges and k spread over `[1, n]`.
pub fn bigk_query_samples(config: EmConfig, n: usize, queries: usize, seed: u64) -> Vec<QuerySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = distinct_points(&mut rng, n);
    let mut store = BlockStore::new(config);
    let t = BigK::build(&mut store, pts).expect("distinct points");
    let mut out = Vec::with_capacity(queries);
    for _ in 0..queries {
        let a = rng.gen_range(0..1u64 << 40);
        let b = rng.gen_range(0..1u64 << 40);
        let e = rng.gen_range(0.0..=(n as f64).ln());
        let k = (e.exp() as usize).clamp(1, n);
        let before = store.stats();
        t.query_topk(&mut store, a.min(b), a.max(b), k).unwrap();
        out.push((n, k, store.stats().since(before).total()));
    }
    out
}

/// Mean update and query I/Os per `n` for the facade.
pub fn scale(config: EmConfig, ns: &[usize], queries: usize, seed: u64) -> Vec<ScaleRow> {
    let mut rows = Vec::new();
    for &n in ns {
        let ops = generate(GenParams { n, distribution: Distribution::Uniform, seed, mix: Mix::InsertOnly });
        let mut q = generate(GenParams { n: queries, distribution: Distribution::Uniform, seed: seed + 1, mix: Mix::QueryHeavy });
        q.retain(|o| matches!(o, WorkloadOp::Query { .. }));
        let mut all = ops;
        all.extend(q);
        let cfg = RunConfig { audit: AuditMode::Off, oracle: false, ..RunConfig::default() };
        let rep = run(config, &all, &cfg).expect("generated workload runs");
        rows.push(ScaleRow {
            n,
            structure: "facade",
            mean_update_io: rep.mean_io('I').unwrap_or(0.0),
            mean_query_io: rep.mean_io('Q').unwrap_or(0.0),
        });
    }
    rows
}

pub fn scale_csv(rows: &[ScaleRow]) -> String {
    let mut s = String::from("n,structure,mean_update_io,mean_query_io\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.3},{:.3}", r.n, r.structure, r.mean_update_io, r.mean_query_io);
    }
    s
}
