//! External priority search tree for large-k top-k queries.
//!
//! Points `(x, y)` live in the pilot sets of a binary-ish tree (the bold
//! tree) obtained by hanging a balanced binary tree over the children of every
//! base node of a weight-balanced B-tree on the x-coordinates. Each pilot set
//! holds the highest points of its slab not claimed by an ancestor.

use std::collections::HashSet;

use crate::em::{ceil_log2, BlockId, BlockStore};
use crate::error::{Error, Result};
use crate::heap_select::{concat_heaps, select_top, HeapSource};
use crate::key::Key;
use crate::wbb::{NodeId, Wbb, WbbParams};

pub type BoldId = usize;

/// Lemma constant for the number of selected representatives.
pub const PHI: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub x: Key,
    pub y: Key,
}

impl Point {
    pub fn new(x: Key, y: Key) -> Self {
        Point { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HostKind {
    /// Internal node of the binary tree over a base node's children.
    SecondaryInternal,
    /// Leaf of a secondary tree whose only child is the next secondary root.
    SlabLeafBridge,
    /// Stands for a base-tree leaf.
    BoldLeaf,
}

#[derive(Clone, Debug)]
struct BoldNode {
    lo: Key,
    hi: Key,
    parent: Option<BoldId>,
    children: Vec<BoldId>,
    /// Sorted by descending y.
    pilot: Vec<Point>,
    /// Base node whose representative blocks hold this node's representative.
    host: Option<NodeId>,
    kind: HostKind,
    anchor: BlockId,
    ins_tokens: i64,
    del_tokens: i64,
}

impl BoldNode {
    fn rep(&self) -> Option<Key> {
        self.pilot.last().map(|p| p.y)
    }

    fn covered_by(&self, x1: Key, x2: Key) -> bool {
        x1 <= self.lo && self.hi - 1 <= x2
    }

    fn contains(&self, x: Key) -> bool {
        self.lo <= x && x < self.hi
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BigkStats {
    pub push_downs: u64,
    pub pull_ups: u64,
    pub draining_pull_ups: u64,
    pub subtree_rebuilds: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PullUp {
    Normal,
    Draining,
}

/// Sizes of the intermediate sets of one query.
#[derive(Clone, Debug, Default)]
pub struct QueryTrace {
    pub q1: usize,
    pub pi: usize,
    pub t: usize,
    pub heap_reads: usize,
    pub s_r: usize,
    pub q2: usize,
    pub s_r_star: usize,
    pub q3: usize,
    /// `Q1 ∪ Q2 ∪ Q3`.
    pub candidates: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    PilotOverflow { node: BoldId, size: usize },
    SparseWithDescendants { node: BoldId, size: usize },
    HeapOrder { node: BoldId },
    OutsideSlab { node: BoldId, x: Key },
    Unsorted { node: BoldId },
    CountMismatch { expected: usize, found: usize },
    DuplicateX { x: Key },
    Structure(String),
    Base(String),
    TokenInvariant1 { node: BoldId, tokens: i64, size: usize },
    TokenInvariant2 { node: BoldId, tokens: i64, size: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug)]
pub struct BigK {
    b: usize,
    wbb: Wbb,
    bold: Vec<Option<BoldNode>>,
    free: Vec<BoldId>,
    root: BoldId,
    /// Per base node: root of its secondary tree, or its bold leaf.
    top: Vec<Option<BoldId>>,
    rep_anchor: Vec<Option<BlockId>>,
    len: usize,
    track_tokens: bool,
    stats: BigkStats,
}

struct HeapView<'a>(&'a BigK);

impl HeapSource for HeapView<'_> {
    type Node = BoldId;
    fn key(&self, n: BoldId) -> u64 {
        self.0.node(n).rep().expect("heap nodes have pilots")
    }
    fn children(&self, n: BoldId, out: &mut Vec<BoldId>) {
        out.extend(self.0.node(n).children.iter().copied().filter(|&c| !self.0.node(c).pilot.is_empty()));
    }
}

impl BigK {
    pub fn new(store: &mut BlockStore) -> Result<Self> {
        Self::build(store, Vec::new())
    }

    /// Builds the structure on `points` (distinct x and distinct y).
    pub fn build(store: &mut BlockStore, mut points: Vec<Point>) -> Result<Self> {
        let b = store.block_words();
        if b < 4 {
            return Err(Error::Params(format!("block size {b} too small, need B >= 4")));
        }
        points.sort_unstable_by_key(|p| p.x);
        if let Some(w) = points.windows(2).find(|w| w[0].x == w[1].x) {
            return Err(Error::Duplicate(format!("x-coordinate {:#x}", w[0].x)));
        }
        let mut ys: Vec<Key> = points.iter().map(|p| p.y).collect();
        ys.sort_unstable();
        if let Some(w) = ys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Duplicate(format!("score {:#x}", w[0])));
        }
        let params = WbbParams::new(b, b)?;
        let wbb = Wbb::build(store, params, points.iter().map(|p| p.x).collect());
        let mut t = BigK {
            b,
            wbb,
            bold: Vec::new(),
            free: Vec::new(),
            root: 0,
            top: Vec::new(),
            rep_anchor: Vec::new(),
            len: points.len(),
            track_tokens: cfg!(debug_assertions),
            stats: BigkStats::default(),
        };
        t.grow_tables();
        let root_u = t.wbb.root();
        t.root = t.build_bold(store, root_u, None, None);
        t.populate(store, t.root, points);
        Ok(t)
    }

    pub fn block_words(&self) -> usize {
        self.b
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of x-coordinates in the base tree, deleted ones included.
    pub fn base_len(&self) -> usize {
        self.wbb.len()
    }

    pub fn base(&self) -> &Wbb {
        &self.wbb
    }

    pub fn stats(&self) -> BigkStats {
        self.stats
    }

    pub fn set_token_tracking(&mut self, on: bool) {
        self.track_tokens = on;
    }

    /// Number of selected representatives for a query asking for `k` points.
    pub fn select_count(&self, k: usize) -> usize {
        let n = self.wbb.len().max(2);
        PHI * (ceil_log2(n as u64) as usize + k.div_ceil(self.b))
    }

    /// All live points, uncharged.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.len);
        for n in self.bold.iter().flatten() {
            out.extend_from_slice(&n.pilot);
        }
        out
    }

    pub fn bold_node_count(&self) -> usize {
        self.bold.iter().flatten().count()
    }

    fn node(&self, id: BoldId) -> &BoldNode {
        self.bold[id].as_ref().expect("live bold node")
    }

    fn node_mut(&mut self, id: BoldId) -> &mut BoldNode {
        self.bold[id].as_mut().expect("live bold node")
    }

    fn grow_tables(&mut self) {
        let n = self.wbb.id_bound();
        if self.top.len() < n {
            self.top.resize(n, None);
            self.rep_anchor.resize(n, None);
        }
    }

    fn pilot_blocks(&self, len: usize) -> usize {
        (2 * len).div_ceil(self.b).max(1)
    }

    fn read_pilot(&self, store: &mut BlockStore, v: BoldId) {
        let n = self.node(v);
        store.touch_read(n.anchor, self.pilot_blocks(n.pilot.len()));
    }

    fn write_pilot(&self, store: &mut BlockStore, v: BoldId) {
        let n = self.node(v);
        store.touch_write(n.anchor, self.pilot_blocks(n.pilot.len()));
        self.write_rep(store, v);
    }

    fn rep_blocks(&self, u: NodeId) -> usize {
        let f = self.wbb.node(u).children.len();
        (2 * (2 * f)).div_ceil(self.b).max(1)
    }

    /// Reads the representative of `v` (one block of its host's blocks).
    fn read_rep(&self, store: &mut BlockStore, v: BoldId) {
        match self.node(v).host.and_then(|u| self.rep_anchor[u]) {
            Some(a) => store.touch_read(a, 1),
            None => store.touch_read(self.node(v).anchor, 1),
        }
    }

    fn write_rep(&self, store: &mut BlockStore, v: BoldId) {
        if let Some(a) = self.node(v).host.and_then(|u| self.rep_anchor[u]) {
            store.touch_write(a, 1);
        }
    }

    fn alloc_bold(&mut self, store: &mut BlockStore, lo: Key, hi: Key, parent: Option<BoldId>, host: Option<NodeId>, kind: HostKind) -> BoldId {
        let node = BoldNode {
            lo,
            hi,
            parent,
            children: Vec::new(),
            pilot: Vec::new(),
            host,
            kind,
            anchor: store.alloc(),
            ins_tokens: 0,
            del_tokens: 0,
        };
        if let Some(id) = self.free.pop() {
            self.bold[id] = Some(node);
            id
        } else {
            self.bold.push(Some(node));
            self.bold.len() - 1
        }
    }

    /// Creates the bold nodes for the base subtree of `u`; returns its top.
    fn build_bold(&mut self, store: &mut BlockStore, u: NodeId, parent: Option<BoldId>, host: Option<NodeId>) -> BoldId {
        let (lo, hi, leaf, kids) = {
            let n = self.wbb.node(u);
            (n.lo, n.hi, n.is_leaf(), n.children.clone())
        };
        let id = if leaf {
            self.alloc_bold(store, lo, hi, parent, host, HostKind::BoldLeaf)
        } else {
            self.rep_anchor[u] = Some(store.alloc());
            let id = self.build_secondary(store, u, &kids, parent);
            store.touch_write(self.rep_anchor[u].unwrap(), self.rep_blocks(u));
            id
        };
        self.top[u] = Some(id);
        id
    }

    fn build_secondary(&mut self, store: &mut BlockStore, u: NodeId, kids: &[NodeId], parent: Option<BoldId>) -> BoldId {
        if kids.len() == 1 {
            let c = kids[0];
            let (lo, hi, leaf) = {
                let n = self.wbb.node(c);
                (n.lo, n.hi, n.is_leaf())
            };
            if leaf {
                return self.build_bold(store, c, parent, Some(u));
            }
            let bridge = self.alloc_bold(store, lo, hi, parent, Some(u), HostKind::SlabLeafBridge);
            let child = self.build_bold(store, c, Some(bridge), None);
            self.node_mut(bridge).children.push(child);
            return bridge;
        }
        let lo = self.wbb.node(kids[0]).lo;
        let hi = self.wbb.node(*kids.last().unwrap()).hi;
        let id = self.alloc_bold(store, lo, hi, parent, Some(u), HostKind::SecondaryInternal);
        let mid = kids.len() / 2;
        let l = self.build_secondary(store, u, &kids[..mid], Some(id));
        let r = self.build_secondary(store, u, &kids[mid..], Some(id));
        self.node_mut(id).children = vec![l, r];
        id
    }

    fn bold_subtree(&self, v: BoldId) -> Vec<BoldId> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.node(n).children.iter().rev());
        }
        out
    }

    /// Grounds `points` below `top` (an empty subtree) and fills the pilot
    /// sets so that every node holds exactly B points or has no points below
    /// it: the B highest points of the slab go to the node, the rest to the
    /// children by x.
    fn populate(&mut self, store: &mut BlockStore, top: BoldId, mut points: Vec<Point>) {
        points.sort_unstable_by(|a, b| b.y.cmp(&a.y));
        store.touch_read(self.node(top).anchor, (2 * points.len()).div_ceil(self.b));
        let mut work = vec![(top, points)];
        while let Some((v, mut pts)) = work.pop() {
            let kids = self.node(v).children.clone();
            let rest = if kids.is_empty() { Vec::new() } else { pts.split_off(pts.len().min(self.b)) };
            {
                let n = self.node_mut(v);
                n.pilot = pts;
                n.ins_tokens = 0;
                n.del_tokens = 0;
            }
            self.write_pilot(store, v);
            for c in kids {
                let (lo, hi) = (self.node(c).lo, self.node(c).hi);
                let mine = rest.iter().copied().filter(|p| lo <= p.x && p.x < hi).collect();
                work.push((c, mine));
            }
        }
    }

    fn children_nonempty(&self, v: BoldId) -> bool {
        self.node(v).children.iter().any(|&c| !self.node(c).pilot.is_empty())
    }

    fn underflows(&self, v: BoldId) -> bool {
        self.node(v).pilot.len() < self.b / 2 && self.children_nonempty(v)
    }

    /// At most two pull-ups at `v` until it holds B points or drains,
    /// repairing children in between.
    fn remedy(&mut self, store: &mut BlockStore, v: BoldId, tokens: bool) {
        for _ in 0..2 {
            if self.node(v).pilot.len() >= self.b || !self.children_nonempty(v) {
                break;
            }
            let res = self.pull_up(store, v, tokens);
            let kids = self.node(v).children.clone();
            if res == PullUp::Draining {
                break;
            }
            for c in kids {
                if self.underflows(c) {
                    self.remedy(store, c, tokens);
                }
            }
        }
    }

    /// Moves the `min(B/2, B - |pilot(v)|)` highest points of the children's
    /// pilot sets into `pilot(v)`.
    pub fn pull_up_at(&mut self, store: &mut BlockStore, v: BoldId) -> PullUp {
        let tokens = self.track_tokens;
        self.pull_up(store, v, tokens)
    }

    fn pull_up(&mut self, store: &mut BlockStore, v: BoldId, tokens: bool) -> PullUp {
        self.stats.pull_ups += 1;
        let need = (self.b / 2).min(self.b.saturating_sub(self.node(v).pilot.len()));
        let kids = self.node(v).children.clone();
        let mut union: Vec<(Point, BoldId)> = Vec::new();
        for &c in &kids {
            self.read_pilot(store, c);
            union.extend(self.node(c).pilot.iter().map(|&p| (p, c)));
        }
        self.read_pilot(store, v);
        let draining = union.len() < need;
        union.sort_unstable_by(|a, b| b.0.y.cmp(&a.0.y));
        union.truncate(need);
        for &(p, c) in &union {
            let cn = self.node_mut(c);
            let pos = cn.pilot.iter().position(|q| *q == p).unwrap();
            cn.pilot.remove(pos);
            if tokens {
                cn.del_tokens += 1;
            }
        }
        let moved = union.len();
        {
            let n = self.node_mut(v);
            n.pilot.extend(union.iter().map(|e| e.0));
            if tokens {
                n.del_tokens -= moved as i64;
            }
        }
        for &c in &kids {
            self.write_pilot(store, c);
            if tokens && self.node(c).kind == HostKind::BoldLeaf {
                self.node_mut(c).del_tokens = 0;
            }
        }
        self.write_pilot(store, v);
        if draining {
            self.stats.draining_pull_ups += 1;
            for w in self.bold_subtree(v) {
                let n = self.node_mut(w);
                n.ins_tokens = 0;
                n.del_tokens = 0;
            }
            PullUp::Draining
        } else {
            PullUp::Normal
        }
    }

    /// Moves the `|pilot(v)| - B` lowest points of an overflowing pilot set
    /// to the children, cascading.
    pub fn push_down(&mut self, store: &mut BlockStore, v: BoldId) {
        if self.node(v).pilot.len() <= 2 * self.b || self.node(v).children.is_empty() {
            return;
        }
        self.stats.push_downs += 1;
        let tokens = self.track_tokens;
        self.read_pilot(store, v);
        let moved = {
            let b = self.b;
            let n = self.node_mut(v);
            let moved = n.pilot.split_off(b);
            if tokens {
                n.ins_tokens -= moved.len() as i64;
            }
            moved
        };
        self.write_pilot(store, v);
        let kids = self.node(v).children.clone();
        for c in kids {
            let (lo, hi) = (self.node(c).lo, self.node(c).hi);
            let mine: Vec<Point> = moved.iter().copied().filter(|p| lo <= p.x && p.x < hi).collect();
            if mine.is_empty() {
                continue;
            }
            self.read_pilot(store, c);
            {
                let cn = self.node_mut(c);
                let mut merged = mine.clone();
                merged.extend_from_slice(&cn.pilot);
                cn.pilot = merged;
                if tokens && cn.kind != HostKind::BoldLeaf {
                    cn.ins_tokens += mine.len() as i64;
                }
            }
            self.write_pilot(store, c);
            self.push_down(store, c);
        }
    }

    fn find_live(&self, store: &mut BlockStore, x: Key) -> Option<Point> {
        let mut v = self.root;
        loop {
            self.read_pilot(store, v);
            let n = self.node(v);
            if let Some(p) = n.pilot.iter().find(|p| p.x == x) {
                return Some(*p);
            }
            match n.children.iter().find(|&&c| self.node(c).contains(x)) {
                Some(&c) => v = c,
                None => return None,
            }
        }
    }

    pub fn insert(&mut self, store: &mut BlockStore, p: Point) -> Result<()> {
        let report = match self.wbb.insert_key(store, p.x) {
            Ok(r) => Some(r),
            Err(Error::Duplicate(_)) => {
                // The x-coordinate may belong to a deleted point.
                if self.find_live(store, p.x).is_some() {
                    return Err(Error::Duplicate(format!("x-coordinate {:#x}", p.x)));
                }
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(r) = &report {
            for &u in &r.path {
                if !self.wbb.node(u).is_leaf() {
                    store.touch_read(self.rep_anchor[u].unwrap(), self.rep_blocks(u));
                }
            }
        }
        let v = self.placement(p);
        {
            let tokens = self.track_tokens;
            let n = self.node_mut(v);
            let pos = n.pilot.partition_point(|q| q.y > p.y);
            n.pilot.insert(pos, p);
            if tokens && n.kind != HostKind::BoldLeaf {
                n.ins_tokens += 1;
            }
        }
        self.read_pilot(store, v);
        self.write_pilot(store, v);
        self.len += 1;
        self.push_down(store, v);
        if let Some(r) = report {
            if let Some(rb) = r.rebalance {
                self.rebuild_subtree(store, &r.path, rb.rebuild_depth(), Some(rb));
            }
        }
        Ok(())
    }

    /// Node whose pilot set takes a new point: the first node on the x-path
    /// that the point outranks, or whose pilot set is below B with empty
    /// children, or the bold leaf.
    fn placement(&self, p: Point) -> BoldId {
        let mut v = self.root;
        loop {
            let n = self.node(v);
            if n.children.is_empty() {
                return v;
            }
            match n.rep() {
                None => return v,
                Some(r) if p.y > r => return v,
                _ => {}
            }
            if n.pilot.len() < self.b && !self.children_nonempty(v) {
                return v;
            }
            v = *n.children.iter().find(|&&c| self.node(c).contains(p.x)).expect("slab partition");
        }
    }

    pub fn delete(&mut self, store: &mut BlockStore, p: Point) -> Result<()> {
        let mut v = self.root;
        let mut last_host = None;
        let found = loop {
            let n = self.node(v);
            if n.host != last_host {
                if let Some(u) = n.host {
                    store.touch_read(self.rep_anchor[u].unwrap(), self.rep_blocks(u));
                }
                last_host = n.host;
            }
            match n.rep() {
                None => break None,
                Some(r) if p.y >= r => break Some(v),
                _ => {}
            }
            match n.children.iter().find(|&&c| self.node(c).contains(p.x)) {
                Some(&c) => v = c,
                None => break None,
            }
        };
        let not_found = || Error::NotFound(format!("point ({:#x}, {:#x})", p.x, p.y));
        let v = found.ok_or_else(not_found)?;
        self.read_pilot(store, v);
        let tokens = self.track_tokens;
        {
            let n = self.node_mut(v);
            let pos = n.pilot.iter().position(|q| *q == p).ok_or_else(not_found)?;
            n.pilot.remove(pos);
            if tokens && n.kind != HostKind::BoldLeaf {
                n.del_tokens += 1;
            }
        }
        self.write_pilot(store, v);
        self.len -= 1;
        if self.underflows(v) {
            self.remedy(store, v, tokens);
        }
        Ok(())
    }

    /// Grounds and rebuilds the subtree of `path[depth]` in the base tree and
    /// the corresponding bold subtree.
    pub fn rebuild_subtree(&mut self, store: &mut BlockStore, path: &[NodeId], depth: usize, event: Option<crate::wbb::Rebalance>) {
        self.stats.subtree_rebuilds += 1;
        let old_u = path[depth];
        let old_top = self.top[old_u].expect("top of base node");
        let bold_parent = self.node(old_top).parent;
        let mut points = Vec::new();
        for v in self.bold_subtree(old_top) {
            self.read_pilot(store, v);
            let n = self.bold[v].take().unwrap();
            points.extend_from_slice(&n.pilot);
            store.free(n.anchor);
            self.free.push(v);
        }
        for u in self.wbb.subtree(old_u) {
            self.top[u] = None;
            if let Some(a) = self.rep_anchor[u].take() {
                store.free(a);
            }
        }
        let host = bold_parent.and_then(|b| self.node(b).host);
        let new_u = self.wbb.rebuild(store, path, depth, event);
        self.grow_tables();
        let new_top = self.build_bold(store, new_u, bold_parent, host);
        match bold_parent {
            Some(b) => {
                let bn = self.node_mut(b);
                let slot = bn.children.iter().position(|&c| c == old_top).unwrap();
                bn.children[slot] = new_top;
            }
            None => self.root = new_top,
        }
        self.populate(store, new_top, points);
    }

    /// Rebuilds everything from the live points, dropping deleted
    /// x-coordinates from the base tree.
    pub fn rebuild_all(&mut self, store: &mut BlockStore) {
        let points = self.points();
        for n in self.bold.iter().flatten() {
            store.touch_read(n.anchor, self.pilot_blocks(n.pilot.len()));
            store.free(n.anchor);
        }
        for a in self.rep_anchor.iter().flatten() {
            store.free(*a);
        }
        let track = self.track_tokens;
        let stats = self.stats;
        *self = BigK::build(store, points).expect("live set is valid");
        self.track_tokens = track;
        self.stats = stats;
    }

    fn bold_path(&self, store: &mut BlockStore, x: Key) -> Vec<BoldId> {
        let mut path = vec![self.root];
        let mut v = self.root;
        self.read_pilot(store, v);
        loop {
            let n = self.node(v);
            match n.children.iter().find(|&&c| self.node(c).contains(x)) {
                Some(&c) => {
                    v = c;
                    self.read_pilot(store, v);
                    path.push(v);
                }
                None => return path,
            }
        }
    }

    pub fn query_topk(&self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<Vec<Point>> {
        self.query_topk_traced(store, x1, x2, k).map(|r| r.0)
    }

    /// The k highest points with x in `[x1, x2]`, in descending y order.
    pub fn query_topk_traced(&self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<(Vec<Point>, QueryTrace)> {
        if x1 > x2 {
            return Err(Error::InvalidRange(format!("{x1:#x} > {x2:#x}")));
        }
        let mut trace = QueryTrace::default();
        if k == 0 {
            return Ok((Vec::new(), trace));
        }
        let in_q = |p: &Point| x1 <= p.x && p.x <= x2;
        let p1 = self.bold_path(store, x1);
        let p2 = self.bold_path(store, x2);
        let mut seen: HashSet<BoldId> = HashSet::new();
        let mut cand: Vec<Point> = Vec::new();
        for &v in p1.iter().chain(p2.iter()) {
            if seen.insert(v) {
                cand.extend(self.node(v).pilot.iter().filter(|p| in_q(p)));
            }
        }
        trace.q1 = cand.len();
        let common = p1.iter().zip(&p2).take_while(|(a, b)| a == b).count();
        let on_paths: HashSet<BoldId> = p1[common - 1..].iter().chain(&p2[common - 1..]).copied().collect();
        let mut pi = Vec::new();
        for &v in &on_paths {
            for &c in &self.node(v).children {
                if !on_paths.contains(&c) && self.node(c).covered_by(x1, x2) {
                    self.read_rep(store, c);
                    if !self.node(c).pilot.is_empty() {
                        pi.push(c);
                    }
                }
            }
        }
        pi.sort_unstable();
        trace.pi = pi.len();
        let view = HeapView(self);
        let heap = concat_heaps(&view, &pi);
        store.note_scratch(2 * heap.fan_in());
        let t = self.select_count(k);
        trace.t = t;
        let sel = select_top(&view, &heap, t);
        trace.heap_reads = sel.reads;
        if sel.reads > 0 {
            store.touch_read(self.node(self.root).anchor, sel.reads);
        }
        let s_r: HashSet<BoldId> = sel.nodes.iter().copied().collect();
        trace.s_r = s_r.len();
        let before = cand.len();
        for &v in &sel.nodes {
            if seen.insert(v) {
                self.read_pilot(store, v);
                cand.extend(self.node(v).pilot.iter().filter(|p| in_q(p)));
            }
        }
        trace.q2 = cand.len() - before;
        let mut star = Vec::new();
        for &v in &sel.nodes {
            let n = self.node(v);
            if let Some(par) = n.parent {
                for &s in &self.node(par).children {
                    if s != v && !s_r.contains(&s) && self.node(s).covered_by(x1, x2) {
                        star.push(s);
                    }
                }
            }
            star.extend_from_slice(&n.children);
        }
        let before = cand.len();
        for v in star {
            if seen.insert(v) {
                trace.s_r_star += 1;
                self.read_pilot(store, v);
                cand.extend(self.node(v).pilot.iter().filter(|p| in_q(p)));
            }
        }
        trace.q3 = cand.len() - before;
        store.note_scratch(2 * cand.len());
        let mut out = cand.clone();
        out.sort_unstable_by(|a, b| b.y.cmp(&a.y));
        out.truncate(k);
        store.touch_write(self.node(self.root).anchor, (2 * out.len()).div_ceil(self.b));
        trace.candidates = cand;
        Ok((out, trace))
    }

    /// All points in `[x1, x2] x [y_min, inf)`.
    pub fn report_3sided(&self, store: &mut BlockStore, x1: Key, x2: Key, y_min: Key) -> Vec<Point> {
        let mut out = Vec::new();
        if x1 > x2 {
            return out;
        }
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            self.read_pilot(store, v);
            let n = self.node(v);
            out.extend(n.pilot.iter().filter(|p| x1 <= p.x && p.x <= x2 && p.y >= y_min));
            match n.rep() {
                Some(r) if r >= y_min => {}
                _ => continue,
            }
            for &c in &n.children {
                let cn = self.node(c);
                if cn.hi > x1 && cn.lo <= x2 && !cn.pilot.is_empty() {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// Checks pilot invariants, heap order, slab containment, conservation,
    /// base-tree balance and (when tracked) the token invariants.
    pub fn audit_invariants(&self) -> std::result::Result<(), Violation> {
        self.wbb.audit().map_err(Violation::Base)?;
        let mut total = 0;
        let mut xs = HashSet::new();
        for v in self.bold_subtree(self.root) {
            let n = self.node(v);
            total += n.pilot.len();
            if n.children.len() > 2 {
                return Err(Violation::Structure(format!("node {v} has {} children", n.children.len())));
            }
            if n.pilot.windows(2).any(|w| w[0].y <= w[1].y) {
                return Err(Violation::Unsorted { node: v });
            }
            if n.pilot.len() > 2 * self.b {
                return Err(Violation::PilotOverflow { node: v, size: n.pilot.len() });
            }
            for p in &n.pilot {
                if !n.contains(p.x) {
                    return Err(Violation::OutsideSlab { node: v, x: p.x });
                }
                if !xs.insert(p.x) {
                    return Err(Violation::DuplicateX { x: p.x });
                }
            }
            let mut prev_hi = None;
            for &c in &n.children {
                let cn = self.node(c);
                if cn.parent != Some(v) || cn.lo < n.lo || cn.hi > n.hi || prev_hi.is_some_and(|h| cn.lo < h) {
                    return Err(Violation::Structure(format!("child {c} of {v} misplaced")));
                }
                prev_hi = Some(cn.hi);
                if let (Some(r), Some(top)) = (n.rep(), cn.pilot.first()) {
                    if top.y >= r {
                        return Err(Violation::HeapOrder { node: v });
                    }
                }
                if n.pilot.is_empty() && !cn.pilot.is_empty() {
                    return Err(Violation::SparseWithDescendants { node: v, size: 0 });
                }
            }
            if n.pilot.len() < self.b / 2 && self.children_nonempty(v) {
                return Err(Violation::SparseWithDescendants { node: v, size: n.pilot.len() });
            }
            if self.track_tokens {
                let size = n.pilot.len() as i64;
                let b = self.b as i64;
                if n.ins_tokens < size - b {
                    return Err(Violation::TokenInvariant1 { node: v, tokens: n.ins_tokens, size: n.pilot.len() });
                }
                let desc_empty = self.bold_subtree(v).iter().skip(1).all(|&d| self.node(d).pilot.is_empty());
                if !desc_empty && n.del_tokens < b - size {
                    return Err(Violation::TokenInvariant2 { node: v, tokens: n.del_tokens, size: n.pilot.len() });
                }
            }
        }
        if total != self.len {
            return Err(Violation::CountMismatch { expected: self.len, found: total });
        }
        Ok(())
    }
}
