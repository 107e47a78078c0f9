//! Approximate range k-selection for small k.
//!
//! A weight-balanced B-tree over x-coordinates. Every node `u` has a set
//! `G_u` of the `C2 * l` highest scores in its subtree. An internal node keeps
//! an (f, C2*l)-group over its children's G-sets plus a score B-tree on their
//! union; a leaf keeps an x-index and a score B-tree of its elements. A query
//! splits `[x1, x2]` into canonical ranges, runs approximate union-rank
//! selection over the multi-slabs and selects exactly inside boundary leaves.

use crate::aurs::{aurs_select, AursOutcome, RankedSource};
use crate::bigk::Point;
use crate::em::{ceil_log2, BlockStore, IoStats};
use crate::error::{Error, Result};
use crate::flgroup::{FlGroup, PrefixLayout};
use crate::key::Key;
use crate::osbtree::OsBTree;
use crate::sketch::{SketchLayout, C3};
use crate::wbb::{CanonicalRange, NodeId, Rebalance, Wbb, WbbParams};

/// G-sets hold `C2 * l` scores.
pub const C2: usize = 8;
/// Rank window factor of the group queries, used as the AURS constant.
pub const AURS_C: u64 = C3 as u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmallkParams {
    /// Largest supported k.
    pub l: usize,
    /// G-set size `C2 * l`.
    pub g: usize,
    pub branching: usize,
    pub leaf_capacity: usize,
    /// The `N` the branching was derived from.
    pub n_frozen: usize,
}

impl SmallkParams {
    /// Whether groups of up to `2 * branching` sets of `C2 * l` values fit
    /// their packed blocks. A rebuilt node never has more children than that.
    pub fn fits(block_words: usize, word_bits: u32, branching: usize, l: usize) -> bool {
        let (f, gl) = (2 * branching, C2 * l);
        let sk = SketchLayout::new(f, gl).and_then(|s| s.check_budget(block_words, word_bits));
        let pr = PrefixLayout::new(f, gl, block_words).check_budget(block_words, word_bits);
        sk.is_ok() && pr.is_ok()
    }

    /// Largest `l` that fits with the minimum branching of 4.
    pub fn max_l(block_words: usize, word_bits: u32) -> Option<usize> {
        let mut best = None;
        for l in 1..=4096 {
            if Self::fits(block_words, word_bits, 4, l) {
                best = Some(l);
            } else if best.is_some() {
                break;
            }
        }
        best
    }

    /// Branching `sqrt(B lg N)`, lowered until the group blocks fit.
    pub fn choose(block_words: usize, word_bits: u32, n_frozen: usize, l: Option<usize>) -> Result<Self> {
        let l = match l {
            Some(l) => l,
            None => Self::max_l(block_words, word_bits)
                .ok_or_else(|| Error::Params(format!("no l fits a {block_words}-word block")))?,
        };
        if l == 0 || !Self::fits(block_words, word_bits, 4, l) {
            return Err(Error::Params(format!(
                "l = {l} does not fit: groups of {} sets of {} values exceed a {block_words}-word block",
                8,
                C2 * l
            )));
        }
        let lg = ceil_log2(n_frozen.max(2) as u64).max(1) as f64;
        let mut a = ((block_words as f64 * lg).sqrt().floor() as usize).max(4);
        while a > 4 && !Self::fits(block_words, word_bits, a, l) {
            a -= 1;
        }
        Ok(SmallkParams {
            l,
            g: C2 * l,
            branching: a,
            leaf_capacity: a * l * block_words,
            n_frozen,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SmallkStats {
    pub global_rebuilds: u64,
    pub subtree_rebuilds: u64,
    /// Levels at which an update changed a G-set.
    pub propagations: u64,
    pub evictions: u64,
    pub backfills: u64,
    /// Multi-slabs answered by exact merging because their G-union was
    /// smaller than `AURS_C * k`.
    pub fallback_sources: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SelectTrace {
    pub leaf_pieces: usize,
    pub multislabs: usize,
    pub aurs_sources: usize,
    pub fallback_sources: usize,
    /// I/Os spent reading boundary leaves.
    pub leaf_io: u64,
    pub aurs: Option<AursOutcome>,
}

#[derive(Debug)]
enum Aux {
    Leaf { xs: OsBTree<(Key, Key)>, scores: OsBTree<Key> },
    Internal { fl: FlGroup, scores: OsBTree<Key> },
}

impl Aux {
    fn scores(&self) -> &OsBTree<Key> {
        match self {
            Aux::Leaf { scores, .. } | Aux::Internal { scores, .. } => scores,
        }
    }
}

struct SlabSource<'a> {
    fl: &'a FlGroup,
    a1: usize,
    a2: usize,
    len: usize,
}

impl RankedSource for SlabSource<'_> {
    fn len(&self) -> usize {
        self.len
    }

    fn max_element(&self, store: &mut BlockStore) -> Key {
        self.fl.max_in_range(store, self.a1, self.a2).expect("nonempty source")
    }

    fn rank_select(&self, store: &mut BlockStore, rho: f64) -> Key {
        let k = (rho.ceil() as usize).clamp(1, self.len);
        match self.fl.query(store, self.a1, self.a2, k) {
            Ok(Some(v)) => v,
            // Window lower bounds sum to more than half the union, so the
            // minimum has rank below 2k.
            _ => self.fl.min_in_range(store, self.a1, self.a2).expect("nonempty source"),
        }
    }
}

#[derive(Debug)]
pub struct SmallK {
    params: SmallkParams,
    base: Wbb,
    aux: Vec<Option<Aux>>,
    /// (score, x) of every live element.
    by_score: OsBTree<(Key, Key)>,
    len: usize,
    /// Live count at the last global rebuild.
    n0: usize,
    l_request: Option<usize>,
    last_rebuilt: Option<NodeId>,
    stats: SmallkStats,
}

impl SmallK {
    pub fn new(store: &mut BlockStore, l: Option<usize>) -> Result<Self> {
        Self::build(store, Vec::new(), l)
    }

    /// Builds on `points` (distinct x, distinct scores). `l` defaults to the
    /// largest value whose groups fit a block.
    pub fn build(store: &mut BlockStore, mut points: Vec<Point>, l: Option<usize>) -> Result<Self> {
        points.sort_unstable_by_key(|p| p.x);
        if let Some(w) = points.windows(2).find(|w| w[0].x == w[1].x) {
            return Err(Error::Duplicate(format!("x-coordinate {:#x}", w[0].x)));
        }
        let mut ys: Vec<Key> = points.iter().map(|p| p.y).collect();
        ys.sort_unstable();
        if let Some(w) = ys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Duplicate(format!("score {:#x}", w[0])));
        }
        let n = points.len();
        let params = SmallkParams::choose(store.block_words(), store.word_bits(), (2 * n).max(2), l)?;
        let base = Wbb::build(
            store,
            WbbParams::new(params.branching, params.leaf_capacity)?,
            points.iter().map(|p| p.x).collect(),
        );
        let by_score = OsBTree::build(store, points.iter().map(|p| (p.y, p.x)).collect());
        let mut t = SmallK {
            params,
            base,
            aux: Vec::new(),
            by_score,
            len: n,
            n0: n.max(1),
            l_request: l,
            last_rebuilt: None,
            stats: SmallkStats::default(),
        };
        t.aux.resize_with(t.base.id_bound(), || None);
        let root = t.base.root();
        t.build_aux(store, root, &points)?;
        Ok(t)
    }

    pub fn params(&self) -> SmallkParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stats(&self) -> SmallkStats {
        self.stats
    }

    pub fn base(&self) -> &Wbb {
        &self.base
    }

    /// Root of the most recently rebuilt subtree (the whole tree after a
    /// global rebuild).
    pub fn last_rebuilt(&self) -> Option<NodeId> {
        self.last_rebuilt
    }

    /// `N` as currently frozen.
    pub fn n_frozen(&self) -> usize {
        self.params.n_frozen
    }

    /// Live points in x order, uncharged.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.len);
        for z in self.base.leaves(self.base.root()) {
            if let Some(Aux::Leaf { xs, .. }) = &self.aux[z] {
                out.extend(xs.keys_uncharged().into_iter().map(|(x, y)| Point::new(x, y)));
            }
        }
        out
    }

    /// Stored G-set of node `u`, descending, uncharged.
    pub fn g_set(&self, u: NodeId) -> Vec<Key> {
        let s = self.aux[u].as_ref().expect("live node").scores();
        let mut v = s.keys_uncharged();
        v.reverse();
        v.truncate(self.params.g);
        v
    }

    /// Builds the secondary structures of the subtree of `u` from its live
    /// points (sorted by x) and returns `G_u`, descending.
    fn build_aux(&mut self, store: &mut BlockStore, u: NodeId, pts: &[Point]) -> Result<Vec<Key>> {
        let g = self.params.g;
        let node = self.base.node(u).clone();
        let mut top: Vec<Key>;
        if node.is_leaf() {
            let xs = OsBTree::build(store, pts.iter().map(|p| (p.x, p.y)).collect());
            top = pts.iter().map(|p| p.y).collect();
            let scores = OsBTree::build(store, top.clone());
            self.aux[u] = Some(Aux::Leaf { xs, scores });
        } else {
            let mut sets = Vec::with_capacity(node.children.len());
            let mut start = 0;
            for &c in &node.children {
                let hi = self.base.node(c).hi;
                let end = start + pts[start..].partition_point(|p| p.x < hi);
                sets.push(self.build_aux(store, c, &pts[start..end])?);
                start = end;
            }
            top = sets.iter().flatten().copied().collect();
            let scores = OsBTree::build(store, top.clone());
            let fl = FlGroup::build(store, sets.len(), g, sets)?;
            self.aux[u] = Some(Aux::Internal { fl, scores });
        }
        top.sort_unstable_by(|a, b| b.cmp(a));
        top.truncate(g);
        Ok(top)
    }

    fn leaf_of(&self, z: NodeId) -> (&OsBTree<(Key, Key)>, &OsBTree<Key>) {
        match self.aux[z].as_ref() {
            Some(Aux::Leaf { xs, scores }) => (xs, scores),
            _ => panic!("node {z} is not a leaf"),
        }
    }

    fn live_in_leaf(&self, store: &mut BlockStore, z: NodeId, x: Key) -> Option<Key> {
        let (xs, _) = self.leaf_of(z);
        xs.range(store, &(x, 0), &(x, Key::MAX)).first().map(|e| e.1)
    }

    fn in_g(&self, store: &mut BlockStore, u: NodeId, y: Key) -> bool {
        self.aux[u].as_ref().unwrap().scores().rank_desc(store, &y) <= self.params.g
    }

    pub fn insert(&mut self, store: &mut BlockStore, p: Point) -> Result<()> {
        if let Some((s, _)) = self.by_score.ceil(store, &(p.y, 0)) {
            if s == p.y {
                return Err(Error::Duplicate(format!("score {:#x}", p.y)));
            }
        }
        let (path, rebalance) = match self.base.insert_key(store, p.x) {
            Ok(r) => (r.path, r.rebalance),
            Err(Error::Duplicate(_)) => {
                // A deleted element may still hold this x-coordinate.
                let path = self.base.locate_leaf(store, p.x);
                if self.live_in_leaf(store, *path.last().unwrap(), p.x).is_some() {
                    return Err(Error::Duplicate(format!("x-coordinate {:#x}", p.x)));
                }
                (path, None)
            }
            Err(e) => return Err(e),
        };
        self.by_score.insert(store, (p.y, p.x));
        let z = *path.last().unwrap();
        if let Some(Aux::Leaf { xs, scores }) = self.aux[z].as_mut() {
            xs.insert(store, (p.x, p.y));
            scores.insert(store, p.y);
        }
        self.len += 1;
        let g = self.params.g;
        for d in (1..path.len()).rev() {
            let (child, parent) = (path[d], path[d - 1]);
            if !self.in_g(store, child, p.y) {
                break;
            }
            self.stats.propagations += 1;
            let slot = self.base.child_slot(parent, p.x);
            let Some(Aux::Internal { fl, scores }) = self.aux[parent].as_mut() else {
                unreachable!("parent is internal")
            };
            if fl.set_len(slot) == g {
                let low = fl.min_in_range(store, slot, slot).expect("full set");
                fl.delete(store, slot, low)?;
                scores.remove(store, &low);
                self.stats.evictions += 1;
            }
            fl.insert(store, slot, p.y)?;
            scores.insert(store, p.y);
        }
        if let Some(rb) = rebalance {
            self.rebuild_subtree(store, &path, rb.rebuild_depth(), Some(rb))?;
        }
        self.maybe_global_rebuild(store)
    }

    /// Deletes the element at `x` and returns it.
    pub fn delete(&mut self, store: &mut BlockStore, x: Key) -> Result<Point> {
        let path = self.base.locate_leaf(store, x);
        let z = *path.last().unwrap();
        let y = self
            .live_in_leaf(store, z, x)
            .ok_or_else(|| Error::NotFound(format!("x-coordinate {x:#x}")))?;
        let mut was_in = self.in_g(store, z, y);
        if let Some(Aux::Leaf { xs, scores }) = self.aux[z].as_mut() {
            xs.remove(store, &(x, y));
            scores.remove(store, &y);
        }
        self.by_score.remove(store, &(y, x));
        self.len -= 1;
        let g = self.params.g;
        for d in (1..path.len()).rev() {
            let (child, parent) = (path[d], path[d - 1]);
            if !was_in {
                break;
            }
            self.stats.propagations += 1;
            was_in = self.in_g(store, parent, y);
            // The child's new g-th score is the one entering G_child.
            let fill = self.aux[child].as_ref().unwrap().scores().select_desc(store, g);
            let slot = self.base.child_slot(parent, x);
            let Some(Aux::Internal { fl, scores }) = self.aux[parent].as_mut() else {
                unreachable!("parent is internal")
            };
            fl.delete(store, slot, y)?;
            scores.remove(store, &y);
            if let Some(v) = fill {
                fl.insert(store, slot, v)?;
                scores.insert(store, v);
                self.stats.backfills += 1;
            }
        }
        self.maybe_global_rebuild(store)?;
        Ok(Point::new(x, y))
    }

    /// Rebuilds the base subtree of `path[depth]` together with all its
    /// secondary structures. The slab is unchanged, so nothing above it is
    /// affected.
    pub fn rebuild_subtree(&mut self, store: &mut BlockStore, path: &[NodeId], depth: usize, event: Option<Rebalance>) -> Result<NodeId> {
        self.stats.subtree_rebuilds += 1;
        let old = path[depth];
        let mut pts = Vec::new();
        for z in self.base.leaves(old) {
            let (xs, _) = self.leaf_of(z);
            pts.extend(xs.scan(store).into_iter().map(|(x, y)| Point::new(x, y)));
        }
        for u in self.base.subtree(old) {
            self.aux[u] = None;
        }
        let new = self.base.rebuild(store, path, depth, event);
        self.aux.resize_with(self.base.id_bound(), || None);
        self.build_aux(store, new, &pts)?;
        self.last_rebuilt = Some(new);
        Ok(new)
    }

    fn maybe_global_rebuild(&mut self, store: &mut BlockStore) -> Result<()> {
        if self.len >= 2 * self.n0 || 2 * self.len <= self.n0 {
            self.rebuild_all(store)?;
        }
        Ok(())
    }

    /// Destroys and rebuilds everything with `N = 2n`, dropping deleted
    /// x-coordinates.
    pub fn rebuild_all(&mut self, store: &mut BlockStore) -> Result<()> {
        let mut pts = Vec::with_capacity(self.len);
        for z in self.base.leaves(self.base.root()) {
            let (xs, _) = self.leaf_of(z);
            pts.extend(xs.scan(store).into_iter().map(|(x, y)| Point::new(x, y)));
        }
        let mut stats = self.stats;
        stats.global_rebuilds += 1;
        *self = SmallK::build(store, pts, self.l_request)?;
        self.stats = stats;
        self.last_rebuilt = Some(self.base.root());
        Ok(())
    }

    /// A point of `S ∩ [x1, x2]` such that between `k` and `O(k)` in-range
    /// points score at least as high, or `None` when fewer than `k` points
    /// are in range.
    pub fn select_approx(&self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<Option<Point>> {
        self.select_approx_traced(store, x1, x2, k).map(|r| r.0)
    }

    pub fn select_approx_traced(&self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<(Option<Point>, SelectTrace)> {
        if x1 > x2 {
            return Err(Error::InvalidRange(format!("[{x1:#x}, {x2:#x}]")));
        }
        if k == 0 || k > self.params.l {
            return Err(Error::KOutOfRange(format!("k = {k}, supported 1..={}", self.params.l)));
        }
        let mut trace = SelectTrace::default();
        let mut pool: Vec<Key> = Vec::new();
        let mut sources = Vec::new();
        for piece in self.base.canonical_ranges(store, x1, x2) {
            match piece {
                CanonicalRange::Leaf(z) => {
                    trace.leaf_pieces += 1;
                    let before = store.stats();
                    let (xs, _) = self.leaf_of(z);
                    pool.extend(xs.range(store, &(x1, 0), &(x2, Key::MAX)).into_iter().map(|e| e.1));
                    trace.leaf_io += store.stats().since(before).total();
                }
                CanonicalRange::MultiSlab { node, first, last } => {
                    trace.multislabs += 1;
                    let Some(Aux::Internal { fl, .. }) = self.aux[node].as_ref() else {
                        unreachable!("multi-slab on an internal node")
                    };
                    let len = fl.union_len(store, first, last);
                    if len as u64 >= AURS_C * k as u64 {
                        sources.push(SlabSource { fl, a1: first, a2: last, len });
                    } else {
                        // Every child's G-set is its whole subtree here.
                        trace.fallback_sources += 1;
                        for i in first..=last {
                            pool.extend(fl.read_set(store, i));
                        }
                    }
                }
            }
        }
        trace.aurs_sources = sources.len();
        let mut best: Option<Key> = None;
        if !sources.is_empty() {
            let out = aurs_select(store, &sources, AURS_C, k)?;
            best = Some(out.value);
            trace.aurs = Some(out);
        }
        if pool.len() >= k {
            store.note_scratch(pool.len());
            let (_, kth, _) = pool.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
            best = best.max(Some(*kth));
        }
        let Some(s) = best else {
            return Ok((None, trace));
        };
        let (y, x) = self.by_score.ceil(store, &(s, 0)).expect("selected score is live");
        debug_assert_eq!(y, s);
        Ok((Some(Point::new(x, y)), trace))
    }

    /// Records a fallback in the statistics; queries take `&self`.
    pub fn note_fallbacks(&mut self, trace: &SelectTrace) {
        self.stats.fallback_sources += trace.fallback_sources as u64;
    }

    /// Checks the base tree, every G-set against its subtree, the group and
    /// score B-tree contents of every internal node, and the `N` window.
    pub fn audit(&self, store: &BlockStore) -> std::result::Result<(), String> {
        self.base.audit()?;
        if self.len > 0 && !(self.len..=4 * self.len).contains(&self.params.n_frozen) {
            return Err(format!("N = {} outside [n, 4n] for n = {}", self.params.n_frozen, self.len));
        }
        let mut total = 0;
        self.audit_rec(store, self.base.root(), &mut total)?;
        if total != self.len || self.by_score.len() != self.len {
            return Err(format!("{total} points in leaves, {} in score index, len {}", self.by_score.len(), self.len));
        }
        Ok(())
    }

    /// Returns the oracle G-set of `u`.
    fn audit_rec(&self, store: &BlockStore, u: NodeId, total: &mut usize) -> std::result::Result<Vec<Key>, String> {
        let g = self.params.g;
        let node = self.base.node(u);
        let mut all: Vec<Key> = match self.aux[u].as_ref() {
            None => return Err(format!("node {u} has no secondary structures")),
            Some(Aux::Leaf { xs, scores }) => {
                let pts = xs.keys_uncharged();
                if let Some(p) = pts.iter().find(|p| !node.contains(p.0)) {
                    return Err(format!("leaf {u} holds x {:#x} outside its slab", p.0));
                }
                *total += pts.len();
                let mut ys: Vec<Key> = pts.iter().map(|p| p.1).collect();
                ys.sort_unstable();
                if ys != scores.keys_uncharged() {
                    return Err(format!("leaf {u}: score B-tree differs from x-index"));
                }
                ys
            }
            Some(Aux::Internal { fl, scores }) => {
                if fl.f() != node.children.len() {
                    return Err(format!("node {u}: group has {} sets, node has {} children", fl.f(), node.children.len()));
                }
                let mut union = Vec::new();
                for (i, &c) in node.children.iter().enumerate() {
                    let gc = self.audit_rec(store, c, total)?;
                    if fl.set_values(i) != gc {
                        return Err(format!("node {u}: group set {i} is not G of child {c}"));
                    }
                    union.extend(gc);
                }
                union.sort_unstable();
                if union != scores.keys_uncharged() {
                    return Err(format!("node {u}: score B-tree differs from the union of child G-sets"));
                }
                fl.audit(store).map_err(|e| format!("node {u}: {e}"))?;
                union
            }
        };
        all.sort_unstable_by(|a, b| b.cmp(a));
        all.truncate(g);
        if all != self.g_set(u) {
            return Err(format!("node {u}: stored G-set differs from the top {g} scores"));
        }
        Ok(all)
    }

    /// Nodes in the subtree of `u` that have a group.
    pub fn internal_nodes(&self, u: NodeId) -> Vec<NodeId> {
        self.base.subtree(u).into_iter().filter(|&v| !self.base.node(v).is_leaf()).collect()
    }

    /// Compares the group of internal node `u` with one built from scratch on
    /// the children's current G-sets, over every `(a1, a2, k)`. Runs in a
    /// scratch store, so the caller's counters are untouched.
    pub fn group_matches_fresh(&self, store: &BlockStore, u: NodeId) -> std::result::Result<(), String> {
        let Some(Aux::Internal { fl, .. }) = self.aux[u].as_ref() else {
            return Err(format!("node {u} is not internal"));
        };
        let sets: Vec<Vec<Key>> = self.base.node(u).children.iter().map(|&c| self.g_set(c)).collect();
        let mut scratch = BlockStore::new(*store.config());
        let fresh = FlGroup::build(&mut scratch, sets.len(), self.params.g, sets).map_err(|e| e.to_string())?;
        let (s1, p1) = fl.stored_sets(store);
        let (s2, p2) = fresh.stored_sets(&scratch);
        if s1 != s2 || p1 != p2 {
            return Err(format!("node {u}: packed blocks differ from a fresh build"));
        }
        let mut mine = BlockStore::new(*store.config());
        let copy = FlGroup::build(&mut mine, fl.f(), fl.l(), (0..fl.f()).map(|i| fl.set_values(i)).collect())
            .map_err(|e| e.to_string())?;
        for a1 in 0..fresh.f() {
            for a2 in a1..fresh.f() {
                let n = fresh.union_len(&mut scratch, a1, a2);
                for k in 1..=n {
                    let x = copy.query(&mut mine, a1, a2, k).map_err(|e| e.to_string())?;
                    let y = fresh.query(&mut scratch, a1, a2, k).map_err(|e| e.to_string())?;
                    if x != y {
                        return Err(format!("node {u}: query ({a1}, {a2}, {k}) gives {x:?}, fresh gives {y:?}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn io_since(store: &BlockStore, before: IoStats) -> IoStats {
        store.stats().since(before)
    }
}
