//! Block-resident order-statistic B+-tree.
//!
//! Fanout is `max(4, B)`; every node occupies one block and every visited node
//! is charged one read, every modified node one write. Internal entries carry
//! the child's key count and the maximum/minimum *score* of the keys below it,
//! which gives rank, select and range-max in `O(lg_B n)` I/Os.
//!
//! Deletions do not merge nodes. Once the number of deletions since the last
//! bulk build exceeds half the size at that build, the tree is rebuilt, which
//! keeps the height logarithmic at `O(1/B)` amortized I/Os per deletion.

use std::fmt::Debug;

use crate::em::{BlockId, BlockStore};

/// Keys stored in an [`OsBTree`]. `score` is the value aggregated by the
/// range-max/range-min queries.
pub trait TreeKey: Ord + Copy + Debug {
    fn score(&self) -> u64;
}

impl TreeKey for u64 {
    fn score(&self) -> u64 {
        *self
    }
}

/// `(primary, score)` pairs, e.g. `(x, score)` or `(set index, value)`.
impl TreeKey for (u64, u64) {
    fn score(&self) -> u64 {
        self.1
    }
}

#[derive(Clone, Copy, Debug)]
struct Summary<K> {
    min_key: K,
    count: usize,
    max_score: u64,
    min_score: u64,
}

#[derive(Clone, Debug)]
enum Node<K> {
    Leaf(Vec<K>),
    Internal(Vec<Entry<K>>),
}

#[derive(Clone, Copy, Debug)]
struct Entry<K> {
    child: usize,
    sum: Summary<K>,
}

#[derive(Debug)]
pub struct OsBTree<K: TreeKey> {
    nodes: Vec<Option<Node<K>>>,
    anchors: Vec<Option<BlockId>>,
    free: Vec<usize>,
    root: Option<usize>,
    len: usize,
    cap: usize,
    built_len: usize,
    deletes: usize,
}

impl<K: TreeKey> OsBTree<K> {
    pub fn new(block_words: usize) -> Self {
        OsBTree {
            nodes: Vec::new(),
            anchors: Vec::new(),
            free: Vec::new(),
            root: None,
            len: 0,
            cap: block_words.max(4),
            built_len: 0,
            deletes: 0,
        }
    }

    /// Bulk-loads `keys` (any order, distinct) into a fresh tree.
    pub fn build(store: &mut BlockStore, mut keys: Vec<K>) -> Self {
        let mut t = OsBTree::new(store.block_words());
        keys.sort_unstable();
        keys.dedup();
        t.bulk_load(store, keys);
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of blocks occupied.
    pub fn blocks(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    pub fn height(&self) -> usize {
        let mut h = 0;
        let mut cur = self.root;
        while let Some(id) = cur {
            h += 1;
            cur = match self.node(id) {
                Node::Leaf(_) => None,
                Node::Internal(es) => Some(es[0].child),
            };
        }
        h
    }

    fn node(&self, id: usize) -> &Node<K> {
        self.nodes[id].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: usize) -> &mut Node<K> {
        self.nodes[id].as_mut().expect("live node")
    }

    fn alloc_node(&mut self, store: &mut BlockStore, node: Node<K>) -> usize {
        let anchor = store.alloc();
        if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            self.anchors[id] = Some(anchor);
            id
        } else {
            self.nodes.push(Some(node));
            self.anchors.push(Some(anchor));
            self.nodes.len() - 1
        }
    }

    fn release(&mut self, store: &mut BlockStore, id: usize) {
        if let Some(a) = self.anchors[id].take() {
            store.free(a);
        }
        self.nodes[id] = None;
        self.free.push(id);
    }

    fn rd(&self, store: &mut BlockStore, id: usize) {
        store.touch_read(self.anchors[id].expect("anchor"), 1);
    }

    fn wr(&self, store: &mut BlockStore, id: usize) {
        store.touch_write(self.anchors[id].expect("anchor"), 1);
    }

    fn summarize(&self, id: usize) -> Summary<K> {
        match self.node(id) {
            Node::Leaf(keys) => Summary {
                min_key: keys[0],
                count: keys.len(),
                max_score: keys.iter().map(|k| k.score()).max().unwrap(),
                min_score: keys.iter().map(|k| k.score()).min().unwrap(),
            },
            Node::Internal(es) => Summary {
                min_key: es[0].sum.min_key,
                count: es.iter().map(|e| e.sum.count).sum(),
                max_score: es.iter().map(|e| e.sum.max_score).max().unwrap(),
                min_score: es.iter().map(|e| e.sum.min_score).min().unwrap(),
            },
        }
    }

    fn bulk_load(&mut self, store: &mut BlockStore, keys: Vec<K>) {
        for id in 0..self.nodes.len() {
            if self.nodes[id].is_some() {
                self.release(store, id);
            }
        }
        self.nodes.clear();
        self.anchors.clear();
        self.free.clear();
        self.len = keys.len();
        self.built_len = keys.len();
        self.deletes = 0;
        self.root = None;
        if keys.is_empty() {
            return;
        }
        // Fill nodes to 3/4 so that subsequent inserts do not split at once.
        let fill = (self.cap * 3 / 4).max(2);
        let mut level: Vec<usize> = keys
            .chunks(fill)
            .map(|c| self.alloc_node(store, Node::Leaf(c.to_vec())))
            .collect();
        for &id in &level {
            self.wr(store, id);
        }
        while level.len() > 1 {
            let mut next = Vec::new();
            for group in level.chunks(fill) {
                let entries = group
                    .iter()
                    .map(|&c| Entry {
                        child: c,
                        sum: self.summarize(c),
                    })
                    .collect();
                let id = self.alloc_node(store, Node::Internal(entries));
                self.wr(store, id);
                next.push(id);
            }
            level = next;
        }
        self.root = Some(level[0]);
    }

    /// All keys in ascending order, without charging I/O (audits, rebuilds
    /// that account their own cost).
    pub fn keys_uncharged(&self) -> Vec<K> {
        let mut out = Vec::with_capacity(self.len);
        if let Some(r) = self.root {
            self.collect(r, &mut out);
        }
        out
    }

    fn collect(&self, id: usize, out: &mut Vec<K>) {
        match self.node(id) {
            Node::Leaf(keys) => out.extend_from_slice(keys),
            Node::Internal(es) => {
                for e in es {
                    self.collect(e.child, out);
                }
            }
        }
    }

    /// Reads every block of the tree and returns its keys in ascending order.
    pub fn scan(&self, store: &mut BlockStore) -> Vec<K> {
        for (id, n) in self.nodes.iter().enumerate() {
            if n.is_some() {
                self.rd(store, id);
            }
        }
        self.keys_uncharged()
    }

    fn child_for(es: &[Entry<K>], key: &K) -> usize {
        // last entry whose min key is <= key
        match es.binary_search_by(|e| e.sum.min_key.cmp(key)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn contains(&self, store: &mut BlockStore, key: &K) -> bool {
        let mut cur = self.root;
        while let Some(id) = cur {
            self.rd(store, id);
            match self.node(id) {
                Node::Leaf(keys) => return keys.binary_search(key).is_ok(),
                Node::Internal(es) => cur = Some(es[Self::child_for(es, key)].child),
            }
        }
        false
    }

    /// Inserts `key`; returns false if it was already present.
    pub fn insert(&mut self, store: &mut BlockStore, key: K) -> bool {
        let Some(root) = self.root else {
            let id = self.alloc_node(store, Node::Leaf(vec![key]));
            self.wr(store, id);
            self.root = Some(id);
            self.len = 1;
            return true;
        };
        let (inserted, split) = self.insert_rec(store, root, key);
        if let Some(right) = split {
            let entries = vec![
                Entry {
                    child: root,
                    sum: self.summarize(root),
                },
                Entry {
                    child: right,
                    sum: self.summarize(right),
                },
            ];
            let id = self.alloc_node(store, Node::Internal(entries));
            self.wr(store, id);
            self.root = Some(id);
        }
        if inserted {
            self.len += 1;
        }
        inserted
    }

    fn insert_rec(&mut self, store: &mut BlockStore, id: usize, key: K) -> (bool, Option<usize>) {
        self.rd(store, id);
        let cap = self.cap;
        let child_pos = match self.node_mut(id) {
            Node::Leaf(keys) => {
                match keys.binary_search(&key) {
                    Ok(_) => return (false, None),
                    Err(pos) => keys.insert(pos, key),
                }
                let split = if keys.len() > cap {
                    let right = keys.split_off(keys.len() / 2);
                    Some(right)
                } else {
                    None
                };
                self.wr(store, id);
                let split = split.map(|right| {
                    let rid = self.alloc_node(store, Node::Leaf(right));
                    self.wr(store, rid);
                    rid
                });
                return (true, split);
            }
            Node::Internal(es) => Self::child_for(es, &key),
        };
        let child = match self.node(id) {
            Node::Internal(es) => es[child_pos].child,
            Node::Leaf(_) => unreachable!(),
        };
        let (inserted, split) = self.insert_rec(store, child, key);
        if !inserted {
            return (false, None);
        }
        let child_sum = self.summarize(child);
        let split_entry = split.map(|s| Entry {
            child: s,
            sum: self.summarize(s),
        });
        let overflow = match self.node_mut(id) {
            Node::Internal(es) => {
                es[child_pos].sum = child_sum;
                if let Some(e) = split_entry {
                    es.insert(child_pos + 1, e);
                }
                if es.len() > cap {
                    Some(es.split_off(es.len() / 2))
                } else {
                    None
                }
            }
            Node::Leaf(_) => unreachable!(),
        };
        self.wr(store, id);
        let split = overflow.map(|right| {
            let rid = self.alloc_node(store, Node::Internal(right));
            self.wr(store, rid);
            rid
        });
        (true, split)
    }

    /// Removes `key`; returns false if it was absent.
    pub fn remove(&mut self, store: &mut BlockStore, key: &K) -> bool {
        let Some(root) = self.root else {
            return false;
        };
        if !self.remove_rec(store, root, key) {
            return false;
        }
        self.len -= 1;
        self.deletes += 1;
        // Collapse empty root / single-child internal roots.
        loop {
            let Some(r) = self.root else { break };
            match self.node(r) {
                Node::Leaf(keys) if keys.is_empty() => {
                    self.release(store, r);
                    self.root = None;
                }
                Node::Internal(es) if es.len() == 1 => {
                    let c = es[0].child;
                    self.release(store, r);
                    self.root = Some(c);
                    continue;
                }
                _ => {}
            }
            break;
        }
        if self.deletes > (self.built_len / 2).max(self.cap) {
            let keys = self.scan(store);
            self.bulk_load(store, keys);
        }
        true
    }

    fn remove_rec(&mut self, store: &mut BlockStore, id: usize, key: &K) -> bool {
        self.rd(store, id);
        let pos = match self.node_mut(id) {
            Node::Leaf(keys) => {
                return match keys.binary_search(key) {
                    Ok(p) => {
                        keys.remove(p);
                        self.wr(store, id);
                        true
                    }
                    Err(_) => false,
                };
            }
            Node::Internal(es) => Self::child_for(es, key),
        };
        let child = match self.node(id) {
            Node::Internal(es) => es[pos].child,
            Node::Leaf(_) => unreachable!(),
        };
        if !self.remove_rec(store, child, key) {
            return false;
        }
        let empty = match self.node(child) {
            Node::Leaf(keys) => keys.is_empty(),
            Node::Internal(es) => es.is_empty(),
        };
        if empty {
            self.release(store, child);
            if let Node::Internal(es) = self.node_mut(id) {
                es.remove(pos);
            }
        } else {
            let sum = self.summarize(child);
            if let Node::Internal(es) = self.node_mut(id) {
                es[pos].sum = sum;
            }
        }
        self.wr(store, id);
        true
    }

    /// Number of keys strictly greater than `key`.
    pub fn count_greater(&self, store: &mut BlockStore, key: &K) -> usize {
        let mut acc = 0;
        let mut cur = self.root;
        while let Some(id) = cur {
            self.rd(store, id);
            match self.node(id) {
                Node::Leaf(keys) => {
                    let pos = keys.partition_point(|k| k <= key);
                    acc += keys.len() - pos;
                    cur = None;
                }
                Node::Internal(es) => {
                    let i = Self::child_for(es, key);
                    acc += es[i + 1..].iter().map(|e| e.sum.count).sum::<usize>();
                    cur = Some(es[i].child);
                }
            }
        }
        acc
    }

    /// Descending rank: number of keys `>= key` (1 for the maximum).
    pub fn rank_desc(&self, store: &mut BlockStore, key: &K) -> usize {
        let mut acc = 0;
        let mut cur = self.root;
        while let Some(id) = cur {
            self.rd(store, id);
            match self.node(id) {
                Node::Leaf(keys) => {
                    let pos = keys.partition_point(|k| k < key);
                    acc += keys.len() - pos;
                    cur = None;
                }
                Node::Internal(es) => {
                    let i = Self::child_for(es, key);
                    acc += es[i + 1..].iter().map(|e| e.sum.count).sum::<usize>();
                    cur = Some(es[i].child);
                }
            }
        }
        acc
    }

    /// The `r`-th largest key (1-based).
    pub fn select_desc(&self, store: &mut BlockStore, r: usize) -> Option<K> {
        if r == 0 || r > self.len {
            return None;
        }
        // r-th largest == (len - r)-th smallest, 0-based
        let mut idx = self.len - r;
        let mut cur = self.root;
        while let Some(id) = cur {
            self.rd(store, id);
            match self.node(id) {
                Node::Leaf(keys) => return keys.get(idx).copied(),
                Node::Internal(es) => {
                    let mut next = None;
                    for e in es {
                        if idx < e.sum.count {
                            next = Some(e.child);
                            break;
                        }
                        idx -= e.sum.count;
                    }
                    cur = next;
                }
            }
        }
        None
    }

    pub fn max(&self, store: &mut BlockStore) -> Option<K> {
        self.select_desc(store, 1)
    }

    pub fn min(&self, store: &mut BlockStore) -> Option<K> {
        self.select_desc(store, self.len)
    }

    /// Smallest key `>= key`.
    pub fn ceil(&self, store: &mut BlockStore, key: &K) -> Option<K> {
        let greater_eq = self.rank_desc(store, key);
        if greater_eq == 0 {
            None
        } else {
            self.select_desc(store, greater_eq)
        }
    }

    /// All keys in `[lo, hi]`, ascending. Charges the two boundary paths and
    /// every leaf in between.
    pub fn range(&self, store: &mut BlockStore, lo: &K, hi: &K) -> Vec<K> {
        let mut out = Vec::new();
        if let Some(r) = self.root {
            if lo <= hi {
                self.range_rec(store, r, lo, hi, &mut out);
            }
        }
        out
    }

    fn range_rec(&self, store: &mut BlockStore, id: usize, lo: &K, hi: &K, out: &mut Vec<K>) {
        self.rd(store, id);
        match self.node(id) {
            Node::Leaf(keys) => out.extend(keys.iter().filter(|k| *k >= lo && *k <= hi)),
            Node::Internal(es) => {
                let first = Self::child_for(es, lo);
                for e in es.iter().skip(first) {
                    if e.sum.min_key > *hi {
                        break;
                    }
                    self.range_rec(store, e.child, lo, hi, out);
                }
            }
        }
    }

    /// Maximum and minimum score among keys in `[lo, hi]`.
    pub fn score_bounds_in_range(&self, store: &mut BlockStore, lo: &K, hi: &K) -> Option<(u64, u64)> {
        let root = self.root?;
        if lo > hi {
            return None;
        }
        self.bounds_rec(store, root, lo, hi, None)
    }

    // `sub_hi_excl` is an exclusive upper bound on the keys of the subtree;
    // children lying entirely inside [lo, hi] are answered from their summary.
    fn bounds_rec(
        &self,
        store: &mut BlockStore,
        id: usize,
        lo: &K,
        hi: &K,
        sub_hi_excl: Option<K>,
    ) -> Option<(u64, u64)> {
        self.rd(store, id);
        match self.node(id) {
            Node::Leaf(keys) => {
                let mut it = keys.iter().filter(|k| *k >= lo && *k <= hi).map(|k| k.score());
                let first = it.next()?;
                Some(it.fold((first, first), |(mx, mn), s| (mx.max(s), mn.min(s))))
            }
            Node::Internal(es) => {
                let mut acc: Option<(u64, u64)> = None;
                for (i, e) in es.iter().enumerate() {
                    let c_hi_excl = es.get(i + 1).map(|n| n.sum.min_key).or(sub_hi_excl);
                    if c_hi_excl.is_some_and(|h| h <= *lo) {
                        continue;
                    }
                    if e.sum.min_key > *hi {
                        break;
                    }
                    let fully = e.sum.min_key >= *lo && c_hi_excl.is_some_and(|h| h <= *hi);
                    let b = if fully {
                        Some((e.sum.max_score, e.sum.min_score))
                    } else {
                        self.bounds_rec(store, e.child, lo, hi, c_hi_excl)
                    };
                    if let Some(b) = b {
                        acc = Some(match acc {
                            None => b,
                            Some(a) => (a.0.max(b.0), a.1.min(b.1)),
                        });
                    }
                }
                acc
            }
        }
    }
}
