//! Weight-balanced B-tree over x-coordinates.
//!
//! Generic over the branching parameter `a` and the leaf capacity `k`. A
//! level-`i` node (leaves at level 0) must have weight in `[W_i/4, W_i]` with
//! `W_i = k * a^i`; the root is only bounded from above. Keys are never
//! removed: deleted elements keep their x-coordinate in the tree until the
//! owner rebuilds globally.
//!
//! Node slabs are half-open key intervals `[lo, hi)`. The first child of a
//! node inherits the node's `lo`; every other child starts at its smallest key.
//! The root covers the whole key domain `[0, KEY_END)`.

use crate::em::{BlockId, BlockStore};
use crate::error::{Error, Result};
use crate::key::{Key, KEY_END};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WbbParams {
    pub branching: usize,
    pub leaf_capacity: usize,
}

impl WbbParams {
    pub fn new(branching: usize, leaf_capacity: usize) -> Result<Self> {
        if branching < 4 {
            return Err(Error::Params(format!("branching must be >= 4, got {branching}")));
        }
        if leaf_capacity < 1 {
            return Err(Error::Params("leaf capacity must be >= 1".into()));
        }
        Ok(WbbParams {
            branching,
            leaf_capacity,
        })
    }

    /// Upper weight bound `W_i` of a level-`i` node.
    pub fn max_weight(&self, level: u32) -> u64 {
        let mut w = self.leaf_capacity as u64;
        for _ in 0..level {
            w = w.saturating_mul(self.branching as u64);
        }
        w
    }
}

#[derive(Clone, Debug)]
pub struct WbbNode {
    pub level: u32,
    pub weight: usize,
    /// Inclusive lower end of the slab.
    pub lo: Key,
    /// Exclusive upper end of the slab.
    pub hi: Key,
    pub children: Vec<NodeId>,
    /// Sorted keys; leaves only.
    pub keys: Vec<Key>,
    birth_weight: usize,
    bulk: bool,
    anchor: BlockId,
}

impl WbbNode {
    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }

    pub fn contains(&self, x: Key) -> bool {
        self.lo <= x && x < self.hi
    }

    /// Whether the slab, restricted to the key domain, lies inside `[x1, x2]`.
    pub fn covered_by(&self, x1: Key, x2: Key) -> bool {
        x1 <= self.lo && self.hi - 1 <= x2
    }
}

/// Outcome of [`Wbb::insert_key`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertReport {
    /// Root-to-leaf path the key was inserted along.
    pub path: Vec<NodeId>,
    pub rebalance: Option<Rebalance>,
}

/// The highest node that exceeded its weight bound and the subtree to rebuild.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rebalance {
    pub unbalanced: NodeId,
    /// Position of the unbalanced node on the insertion path.
    pub depth: usize,
    /// Parent of the unbalanced node; `None` means the root itself overflowed
    /// and the whole tree must be rebuilt.
    pub rebuild_at: Option<NodeId>,
}

impl Rebalance {
    /// Depth on the insertion path of the subtree root to rebuild.
    pub fn rebuild_depth(&self) -> usize {
        self.depth.saturating_sub(1)
    }
}

/// A piece of a canonical decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanonicalRange {
    /// A leaf whose slab intersects (but may not be covered by) the query.
    Leaf(NodeId),
    /// Children `first..=last` of an internal node, all covered by the query.
    MultiSlab { node: NodeId, first: usize, last: usize },
}

/// Record of a subtree rebuild, kept for amortization audits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RebuildEvent {
    pub level: u32,
    pub weight: usize,
    /// Insertions that reached the unbalanced node since it was (re)built.
    pub inserts_into_unbalanced: usize,
    pub unbalanced_level: u32,
    /// The unbalanced node came from the initial bulk load (full leaves).
    pub from_bulk_load: bool,
}

#[derive(Debug)]
pub struct Wbb {
    params: WbbParams,
    nodes: Vec<Option<WbbNode>>,
    free: Vec<NodeId>,
    root: NodeId,
    rebuilds: Vec<RebuildEvent>,
}

impl Wbb {
    pub fn new(store: &mut BlockStore, params: WbbParams) -> Self {
        Self::build(store, params, Vec::new())
    }

    /// Builds a tree on `keys` (distinct, any order).
    pub fn build(store: &mut BlockStore, params: WbbParams, mut keys: Vec<Key>) -> Self {
        keys.sort_unstable();
        keys.dedup();
        let mut t = Wbb {
            params,
            nodes: Vec::new(),
            free: Vec::new(),
            root: 0,
            rebuilds: Vec::new(),
        };
        let level = t.root_level_for(keys.len());
        t.root = t.build_sub(store, &keys, level, 0, KEY_END, true);
        t
    }

    pub fn params(&self) -> WbbParams {
        self.params
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &WbbNode {
        self.nodes[id].as_ref().expect("live wbb node")
    }

    /// Upper bound (exclusive) on node ids, for side tables indexed by id.
    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.node(self.root).weight
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of levels (a single leaf has height 1).
    pub fn height(&self) -> usize {
        self.node(self.root).level as usize + 1
    }

    pub fn rebuild_log(&self) -> &[RebuildEvent] {
        &self.rebuilds
    }

    pub fn anchor(&self, id: NodeId) -> BlockId {
        self.node(id).anchor
    }

    fn root_level_for(&self, n: usize) -> u32 {
        let mut level = 0;
        while (n as u64) * 2 > self.params.max_weight(level) {
            level += 1;
        }
        level
    }

    fn alloc(&mut self, node: WbbNode) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            id
        } else {
            self.nodes.push(Some(node));
            self.nodes.len() - 1
        }
    }

    /// Bulk loads pack leaves to capacity; rebuilds leave every node half full.
    fn build_sub(&mut self, store: &mut BlockStore, keys: &[Key], level: u32, lo: Key, hi: Key, bulk: bool) -> NodeId {
        let anchor = store.alloc();
        if level == 0 {
            store.touch_write(anchor, store.blocks_for_words(keys.len()));
            return self.alloc(WbbNode {
                level,
                weight: keys.len(),
                lo,
                hi,
                children: Vec::new(),
                keys: keys.to_vec(),
                birth_weight: keys.len(),
                bulk,
                anchor,
            });
        }
        let target = if bulk && level == 1 {
            self.params.leaf_capacity
        } else {
            (self.params.max_weight(level - 1) / 2).max(1) as usize
        };
        let parts = keys.len().div_ceil(target).max(1);
        let mut children = Vec::with_capacity(parts);
        let mut start = 0;
        for i in 0..parts {
            let end = start + (keys.len() - start) / (parts - i);
            let chunk = &keys[start..end];
            let c_lo = if i == 0 { lo } else { chunk[0] };
            let c_hi = if i + 1 == parts { hi } else { keys[end] };
            children.push(self.build_sub(store, chunk, level - 1, c_lo, c_hi, bulk));
            start = end;
        }
        store.touch_write(anchor, 1);
        self.alloc(WbbNode {
            level,
            weight: keys.len(),
            lo,
            hi,
            children,
            keys: Vec::new(),
            birth_weight: keys.len(),
            bulk,
            anchor,
        })
    }

    /// Index of the child of internal `node` whose slab contains `x`
    /// (clamped to the extreme children).
    pub fn child_slot(&self, node: NodeId, x: Key) -> usize {
        let n = self.node(node);
        let cs = &n.children;
        let pos = cs.partition_point(|&c| self.node(c).lo <= x);
        pos.saturating_sub(1)
    }

    /// Root-to-leaf path to the leaf whose slab contains `x`.
    pub fn locate_leaf(&self, store: &mut BlockStore, x: Key) -> Vec<NodeId> {
        let mut path = vec![self.root];
        let mut cur = self.root;
        store.touch_read(self.anchor(cur), 1);
        while !self.node(cur).is_leaf() {
            cur = self.node(cur).children[self.child_slot(cur, x)];
            store.touch_read(self.anchor(cur), 1);
            path.push(cur);
        }
        path
    }

    fn leaf_key_blocks(&self, store: &BlockStore, len: usize) -> usize {
        // Leaf key lists larger than a block are organized as B-trees.
        let b = store.block_words();
        if len <= b {
            1
        } else {
            1 + crate::em::lg_base(b as f64, len as f64).ceil() as usize
        }
    }

    pub fn contains(&self, store: &mut BlockStore, x: Key) -> bool {
        let path = self.locate_leaf(store, x);
        let leaf = self.node(*path.last().unwrap());
        let blocks = self.leaf_key_blocks(store, leaf.keys.len());
        store.touch_read(leaf.anchor, blocks);
        leaf.keys.binary_search(&x).is_ok()
    }

    /// Adds `x` and increments weights along its path. Reports the highest
    /// node whose weight now exceeds its bound; the caller must then call
    /// [`Wbb::rebuild`] before the next insertion.
    pub fn insert_key(&mut self, store: &mut BlockStore, x: Key) -> Result<InsertReport> {
        if x == KEY_END {
            return Err(Error::Precondition("key out of domain".into()));
        }
        let path = self.locate_leaf(store, x);
        let leaf_id = *path.last().unwrap();
        let blocks = {
            let leaf = self.node(leaf_id);
            if leaf.keys.binary_search(&x).is_ok() {
                return Err(Error::Duplicate(format!("x-coordinate {x:#x} already in base tree")));
            }
            self.leaf_key_blocks(store, leaf.keys.len() + 1)
        };
        {
            let leaf = self.nodes[leaf_id].as_mut().unwrap();
            let pos = leaf.keys.partition_point(|&k| k < x);
            leaf.keys.insert(pos, x);
        }
        store.touch_read(self.anchor(leaf_id), blocks.saturating_sub(1));
        let mut rebalance = None;
        for (depth, &id) in path.iter().enumerate() {
            let node = self.nodes[id].as_mut().unwrap();
            node.weight += 1;
            let anchor = node.anchor;
            let over = node.weight as u64 > self.params.max_weight(node.level);
            store.touch_write(anchor, if depth + 1 == path.len() { blocks } else { 1 });
            if over && rebalance.is_none() {
                rebalance = Some(Rebalance {
                    unbalanced: id,
                    depth,
                    rebuild_at: if depth == 0 { None } else { Some(path[depth - 1]) },
                });
            }
        }
        Ok(InsertReport { path, rebalance })
    }

    /// All node ids in the subtree of `id`, preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.node(n).children.iter().rev());
        }
        out
    }

    /// Leaves of the subtree of `id`, left to right.
    pub fn leaves(&self, id: NodeId) -> Vec<NodeId> {
        self.subtree(id).into_iter().filter(|&n| self.node(n).is_leaf()).collect()
    }

    /// Rebuilds the subtree rooted at `path[depth]` (the whole tree for
    /// `depth == 0`, choosing a fresh height). Returns the new subtree root,
    /// which replaces the old one in its parent's child list.
    pub fn rebuild(&mut self, store: &mut BlockStore, path: &[NodeId], depth: usize, event: Option<Rebalance>) -> NodeId {
        let old = path[depth];
        if let Some(rb) = event {
            let u = self.node(rb.unbalanced);
            self.rebuilds.push(RebuildEvent {
                level: self.node(old).level,
                weight: self.node(old).weight,
                inserts_into_unbalanced: u.weight - u.birth_weight,
                unbalanced_level: u.level,
                from_bulk_load: u.bulk,
            });
        }
        let (lo, hi, level, birth, bulk) = {
            let n = self.node(old);
            (n.lo, n.hi, n.level, n.birth_weight, n.bulk)
        };
        let mut keys = Vec::with_capacity(self.node(old).weight);
        for id in self.subtree(old) {
            let n = self.nodes[id].take().unwrap();
            store.touch_read(n.anchor, store.blocks_for_words(n.keys.len().max(n.children.len())));
            keys.extend_from_slice(&n.keys);
            store.free(n.anchor);
            self.free.push(id);
        }
        let level = if depth == 0 { self.root_level_for(keys.len()) } else { level };
        let new = self.build_sub(store, &keys, level, lo, hi, false);
        if depth > 0 {
            // The subtree root stands for the same slab; its insertion count
            // keeps running across the rebuild.
            let n = self.nodes[new].as_mut().unwrap();
            n.birth_weight = birth;
            n.bulk = bulk;
        }
        if depth == 0 {
            self.root = new;
        } else {
            let parent = path[depth - 1];
            let p = self.nodes[parent].as_mut().unwrap();
            let slot = p.children.iter().position(|&c| c == old).expect("child of parent");
            p.children[slot] = new;
        }
        new
    }

    /// Minimum set of canonical ranges covering `[x1, x2]`, left to right.
    pub fn canonical_ranges(&self, store: &mut BlockStore, x1: Key, x2: Key) -> Vec<CanonicalRange> {
        let mut out = Vec::new();
        if x1 > x2 {
            return out;
        }
        let root = self.node(self.root);
        store.touch_read(root.anchor, 1);
        if root.is_leaf() {
            out.push(CanonicalRange::Leaf(self.root));
        } else {
            self.canon_rec(store, self.root, x1, x2, &mut out);
        }
        out
    }

    fn canon_rec(&self, store: &mut BlockStore, id: NodeId, x1: Key, x2: Key, out: &mut Vec<CanonicalRange>) {
        let n = self.node(id);
        if n.is_leaf() {
            out.push(CanonicalRange::Leaf(id));
            return;
        }
        let i1 = self.child_slot(id, x1.max(n.lo));
        let i2 = self.child_slot(id, x2.min(n.hi - 1));
        let covered = |i: usize| self.node(n.children[i]).covered_by(x1, x2);
        let descend = |store: &mut BlockStore, i: usize, out: &mut Vec<CanonicalRange>| {
            let c = n.children[i];
            store.touch_read(self.node(c).anchor, 1);
            self.canon_rec(store, c, x1, x2, out);
        };
        if i1 == i2 && !covered(i1) {
            descend(store, i1, out);
            return;
        }
        let first = if covered(i1) {
            i1
        } else {
            descend(store, i1, out);
            i1 + 1
        };
        let right_partial = !covered(i2);
        let last = if right_partial { i2 as isize - 1 } else { i2 as isize };
        if first as isize <= last {
            out.push(CanonicalRange::MultiSlab {
                node: id,
                first,
                last: last as usize,
            });
        }
        if right_partial {
            descend(store, i2, out);
        }
    }

    /// Checks slab partitioning, weight sums and weight bounds.
    pub fn audit(&self) -> std::result::Result<(), String> {
        self.audit_rec(self.root, true)
    }

    fn audit_rec(&self, id: NodeId, is_root: bool) -> std::result::Result<(), String> {
        let n = self.node(id);
        let max_w = self.params.max_weight(n.level);
        if n.weight as u64 > max_w {
            return Err(format!("node {id} level {} weight {} > {}", n.level, n.weight, max_w));
        }
        if !is_root && (n.weight as u64) * 4 < max_w {
            return Err(format!("node {id} level {} weight {} < W/4 = {}", n.level, n.weight, max_w / 4));
        }
        if n.is_leaf() {
            if n.keys.len() != n.weight {
                return Err(format!("leaf {id} weight {} != {} keys", n.weight, n.keys.len()));
            }
            if n.keys.iter().any(|&k| !n.contains(k)) {
                return Err(format!("leaf {id} holds a key outside its slab"));
            }
            return Ok(());
        }
        let mut sum = 0;
        let mut expect_lo = n.lo;
        for &c in &n.children {
            let cn = self.node(c);
            if cn.level + 1 != n.level {
                return Err(format!("child {c} of {id} at wrong level"));
            }
            if cn.lo != expect_lo {
                return Err(format!("child {c} of {id} does not continue the partition"));
            }
            expect_lo = cn.hi;
            sum += cn.weight;
            self.audit_rec(c, false)?;
        }
        if expect_lo != n.hi {
            return Err(format!("children of {id} do not end at its hi"));
        }
        if sum != n.weight {
            return Err(format!("node {id} weight {} != children sum {sum}", n.weight));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(a: usize, k: usize) -> WbbParams {
        WbbParams::new(a, k).unwrap()
    }

    #[test]
    fn locate_leaf_finds_slab() {
        let mut store = BlockStore::with_block_words(4);
        let t = Wbb::build(&mut store, params(4, 4), (1..=16).collect());
        t.audit().unwrap();
        let path = t.locate_leaf(&mut store, 5);
        let leaf = t.node(*path.last().unwrap());
        assert!(leaf.contains(5) && leaf.keys.contains(&5));
        assert_eq!(path.len(), t.height());
        // brute-force membership for every key
        for x in 1..=16u64 {
            let p = t.locate_leaf(&mut store, x);
            assert!(t.node(*p.last().unwrap()).keys.contains(&x));
        }
        let left = t.locate_leaf(&mut store, 0);
        assert_eq!(*left.last().unwrap(), t.leaves(t.root())[0]);
    }

    #[test]
    fn bulk_load_packs_leaves() {
        let mut store = BlockStore::with_block_words(4);
        let t = Wbb::build(&mut store, params(4, 4), (1..=16).collect());
        let p = t.locate_leaf(&mut store, 5);
        assert_eq!(t.node(*p.last().unwrap()).keys, vec![5, 6, 7, 8]);
    }

    #[test]
    fn insert_reports_threshold_crossing() {
        let mut store = BlockStore::with_block_words(4);
        let mut t = Wbb::build(&mut store, params(4, 4), vec![10, 20]);
        // single leaf root with capacity 4: third and fourth insert fit
        assert_eq!(t.insert_key(&mut store, 11).unwrap().rebalance, None);
        assert_eq!(t.insert_key(&mut store, 12).unwrap().rebalance, None);
        let r = t.insert_key(&mut store, 13).unwrap();
        let rb = r.rebalance.expect("weight 5 > W_0 = 4");
        assert_eq!(rb.unbalanced, t.root());
        assert_eq!(rb.rebuild_at, None);
        assert!(matches!(t.insert_key(&mut store, 13), Err(Error::Duplicate(_))));
        t.rebuild(&mut store, &r.path, 0, Some(rb));
        t.audit().unwrap();
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn random_inserts_keep_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = BlockStore::with_block_words(8);
        let mut t = Wbb::new(&mut store, params(4, 8));
        let mut keys: Vec<u64> = (0..5000).map(|i| i * 3 + 1).collect();
        keys.shuffle(&mut rng);
        for (i, &k) in keys.iter().enumerate() {
            let rep = t.insert_key(&mut store, k).unwrap();
            if let Some(rb) = rep.rebalance {
                assert!(rep.path[..=rb.depth].contains(&rb.unbalanced));
                t.rebuild(&mut store, &rep.path, rb.rebuild_depth(), Some(rb));
            }
            if i % 500 == 0 {
                t.audit().unwrap();
            }
        }
        t.audit().unwrap();
        // height bound: log_a(n / k) + O(1)
        let bound = ((5000.0f64 / 8.0).ln() / 4f64.ln()).ceil() as usize + 2;
        assert!(t.height() <= bound, "height {} > {}", t.height(), bound);
        // WBB charging: a level-l unbalanced node absorbed >= W_l/4 inserts
        // (its birth weight is at most W_l/2 + 1 and it must exceed W_l).
        for ev in t.rebuild_log().iter().filter(|e| !e.from_bulk_load) {
            let w = t.params().max_weight(ev.unbalanced_level) as usize;
            assert!(ev.inserts_into_unbalanced * 4 >= w, "{ev:?}");
        }
        let _ = rng.gen::<u8>();
    }

    #[test]
    fn canonical_ranges_cover_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = BlockStore::with_block_words(4);
        let keys: Vec<u64> = (0..700).map(|i| i * 10 + 5).collect();
        let t = Wbb::build(&mut store, params(4, 4), keys.clone());
        let whole = t.canonical_ranges(&mut store, 0, KEY_END - 1);
        assert_eq!(whole.len(), 1);
        assert!(matches!(whole[0], CanonicalRange::MultiSlab { first: 0, .. }));
        let inside = t.canonical_ranges(&mut store, 16, 18);
        assert_eq!(inside.len(), 1);
        assert!(matches!(inside[0], CanonicalRange::Leaf(_)));
        for _ in 0..300 {
            let a = rng.gen_range(0..7100u64);
            let b = rng.gen_range(a..7100u64);
            let ranges = t.canonical_ranges(&mut store, a, b);
            assert!(ranges.len() <= 2 * t.height() + 2);
            let mut covered = Vec::new();
            for r in &ranges {
                match *r {
                    CanonicalRange::Leaf(l) => covered.extend(t.node(l).keys.iter().copied().filter(|&k| k >= a && k <= b)),
                    CanonicalRange::MultiSlab { node, first, last } => {
                        for &c in &t.node(node).children[first..=last] {
                            assert!(t.node(c).covered_by(a, b));
                            for leaf in t.leaves(c) {
                                covered.extend_from_slice(&t.node(leaf).keys);
                            }
                        }
                    }
                }
            }
            let want: Vec<u64> = keys.iter().copied().filter(|&k| k >= a && k <= b).collect();
            assert_eq!(covered, want, "query [{a}, {b}]");
        }
    }
}
