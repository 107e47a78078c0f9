//! An (f, l)-group: `f` disjoint sets of at most `l` values each, with a
//! one-block compressed sketch set for approximate union-rank queries over
//! any contiguous range of sets, and a one-block prefix set holding the rank
//! pairs of the largest elements of every set.

use crate::bitpack::{BitReader, BitWriter};
use crate::em::{ceil_log2, lg_base, BlockId, BlockStore, Word};
use crate::error::{Error, Result};
use crate::key::Key;
use crate::osbtree::OsBTree;
use crate::sketch::{fresh_rank, in_window, pivot_count, select_by_windows, CompressedSketchSet, SetRanks, SketchLayout};

/// Widths of the packed prefix set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrefixLayout {
    pub f: usize,
    pub l: usize,
    /// Prefix length: `ceil(sqrt(B) * lg_B(fl))`, at most `l`.
    pub p: usize,
    pub count_bits: u32,
    pub global_bits: u32,
    pub local_bits: u32,
}

impl PrefixLayout {
    pub fn new(f: usize, l: usize, block_words: usize) -> Self {
        let p = prefix_threshold(f, l, block_words).ceil() as usize;
        let p = p.clamp(1, l);
        PrefixLayout {
            f,
            l,
            p,
            count_bits: ceil_log2(p as u64 + 1),
            global_bits: ceil_log2((f * l) as u64),
            local_bits: ceil_log2(l as u64),
        }
    }

    pub fn packed_bits(&self) -> usize {
        self.f * (self.count_bits as usize + self.p * (self.global_bits + self.local_bits) as usize)
    }

    pub fn check_budget(&self, block_words: usize, word_bits: u32) -> Result<()> {
        let budget = block_words * word_bits as usize;
        if self.packed_bits() > budget {
            return Err(Error::Params(format!(
                "compressed prefix set needs {} bits, block holds {budget} (f = {}, l = {}, p = {})",
                self.packed_bits(),
                self.f,
                self.l,
                self.p
            )));
        }
        Ok(())
    }
}

/// `sqrt(B) * lg_B(fl)`.
pub fn prefix_threshold(f: usize, l: usize, block_words: usize) -> f64 {
    (block_words as f64).sqrt() * lg_base(block_words as f64, (f * l) as f64)
}

/// Per set, `(global rank, local rank)` of its largest elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedPrefixSet {
    pub layout: PrefixLayout,
    pub sets: Vec<Vec<(usize, usize)>>,
}

impl CompressedPrefixSet {
    pub fn empty(layout: PrefixLayout) -> Self {
        CompressedPrefixSet {
            layout,
            sets: vec![Vec::new(); layout.f],
        }
    }

    pub fn pack(&self, block_words: usize, word_bits: u32) -> Result<Vec<Word>> {
        let lay = &self.layout;
        lay.check_budget(block_words, word_bits)?;
        let mut w = BitWriter::new(word_bits);
        for s in &self.sets {
            if s.len() > lay.p {
                return Err(Error::Precondition(format!("prefix of {} > {} entries", s.len(), lay.p)));
            }
            w.put(s.len() as u64, lay.count_bits);
            for slot in 0..lay.p {
                let (g, r) = s.get(slot).copied().unwrap_or((1, 1));
                w.put(g as u64 - 1, lay.global_bits);
                w.put(r as u64 - 1, lay.local_bits);
            }
        }
        Ok(w.finish(block_words))
    }

    pub fn unpack(layout: PrefixLayout, words: &[Word], word_bits: u32) -> Self {
        let mut rd = BitReader::new(words, word_bits);
        let mut sets = Vec::with_capacity(layout.f);
        for _ in 0..layout.f {
            let count = rd.get(layout.count_bits) as usize;
            let mut s = Vec::with_capacity(count);
            for slot in 0..layout.p {
                let g = rd.get(layout.global_bits) as usize + 1;
                let r = rd.get(layout.local_bits) as usize + 1;
                if slot < count {
                    s.push((g, r));
                }
            }
            sets.push(s);
        }
        CompressedPrefixSet { layout, sets }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlStats {
    pub expansions: u64,
    pub shrinks: u64,
    pub dangling: u64,
    pub large_repairs: u64,
    pub small_repairs: u64,
    pub prefix_backfills: u64,
}

#[derive(Debug)]
pub struct FlGroup {
    f: usize,
    l: usize,
    block_words: usize,
    word_bits: u32,
    sets: Vec<OsBTree<Key>>,
    global: OsBTree<Key>,
    /// Keyed by (set index, value), for range maxima.
    by_set: OsBTree<(u64, Key)>,
    sketch_layout: SketchLayout,
    prefix_layout: PrefixLayout,
    sketch_block: BlockId,
    prefix_block: BlockId,
    stats: FlStats,
}

impl FlGroup {
    pub fn new(store: &mut BlockStore, f: usize, l: usize) -> Result<Self> {
        Self::build(store, f, l, vec![Vec::new(); f])
    }

    /// Builds a group from `f` disjoint sets of at most `l` values each.
    pub fn build(store: &mut BlockStore, f: usize, l: usize, contents: Vec<Vec<Key>>) -> Result<Self> {
        let block_words = store.block_words();
        let word_bits = store.word_bits();
        let sketch_layout = SketchLayout::new(f, l)?;
        sketch_layout.check_budget(block_words, word_bits)?;
        let prefix_layout = PrefixLayout::new(f, l, block_words);
        prefix_layout.check_budget(block_words, word_bits)?;
        if contents.len() != f {
            return Err(Error::Params(format!("{} sets given, f = {f}", contents.len())));
        }
        let mut all: Vec<Key> = Vec::new();
        let mut tagged = Vec::new();
        let mut sets = Vec::with_capacity(f);
        for (i, c) in contents.into_iter().enumerate() {
            if c.len() > l {
                return Err(Error::Capacity(format!("set {i} has {} > l = {l} values", c.len())));
            }
            all.extend_from_slice(&c);
            tagged.extend(c.iter().map(|&v| (i as u64, v)));
            sets.push(OsBTree::build(store, c));
        }
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::Duplicate("value occurs twice in the group".into()));
        }
        let g = FlGroup {
            f,
            l,
            block_words,
            word_bits,
            sets,
            global: OsBTree::build(store, all),
            by_set: OsBTree::build(store, tagged),
            sketch_layout,
            prefix_layout,
            sketch_block: store.alloc(),
            prefix_block: store.alloc(),
            stats: FlStats::default(),
        };
        let (sk, pr) = g.recompute(store);
        g.store_sketch(store, &sk)?;
        g.store_prefix(store, &pr)?;
        Ok(g)
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn set_len(&self, i: usize) -> usize {
        self.sets[i].len()
    }

    pub fn stats(&self) -> FlStats {
        self.stats
    }

    pub fn sketch_layout(&self) -> SketchLayout {
        self.sketch_layout
    }

    pub fn prefix_layout(&self) -> PrefixLayout {
        self.prefix_layout
    }

    /// Values of set `i` in descending order, uncharged.
    pub fn set_values(&self, i: usize) -> Vec<Key> {
        let mut v = self.sets[i].keys_uncharged();
        v.reverse();
        v
    }

    /// Reads set `i` in descending order.
    pub fn read_set(&self, store: &mut BlockStore, i: usize) -> Vec<Key> {
        let mut v = self.sets[i].scan(store);
        v.reverse();
        v
    }

    pub fn contains(&self, store: &mut BlockStore, i: usize, e: Key) -> bool {
        self.sets[i].contains(store, &e)
    }

    /// Space in blocks: indexes plus the two packed blocks.
    pub fn blocks(&self) -> usize {
        self.sets.iter().map(|s| s.blocks()).sum::<usize>() + self.global.blocks() + self.by_set.blocks() + 2
    }

    fn check_set(&self, i: usize) -> Result<()> {
        if i >= self.f {
            return Err(Error::Params(format!("set index {i} out of range (f = {})", self.f)));
        }
        Ok(())
    }

    /// Sketch and prefix sets recomputed from the indexes, uncharged.
    fn recompute(&self, _store: &mut BlockStore) -> (CompressedSketchSet, CompressedPrefixSet) {
        let all = {
            let mut v = self.global.keys_uncharged();
            v.reverse();
            v
        };
        let grank = |x: Key| all.partition_point(|&y| y > x) + 1;
        let mut sk = CompressedSketchSet::empty(self.sketch_layout);
        let mut pr = CompressedPrefixSet::empty(self.prefix_layout);
        for i in 0..self.f {
            let desc = self.set_values(i);
            let size = desc.len();
            sk.sets[i] = SetRanks {
                size,
                pivots: (1..=pivot_count(size))
                    .map(|j| {
                        let r = fresh_rank(j, size);
                        (grank(desc[r - 1]), r)
                    })
                    .collect(),
            };
            pr.sets[i] = desc.iter().take(self.prefix_layout.p).enumerate().map(|(r0, &x)| (grank(x), r0 + 1)).collect();
        }
        (sk, pr)
    }

    fn load_sketch(&self, store: &mut BlockStore) -> CompressedSketchSet {
        let b = store.read(self.sketch_block);
        CompressedSketchSet::unpack(self.sketch_layout, b.words(), self.word_bits)
    }

    fn store_sketch(&self, store: &mut BlockStore, s: &CompressedSketchSet) -> Result<()> {
        let words = s.pack(self.block_words, self.word_bits)?;
        store.write(self.sketch_block, crate::em::Block::from_words(words));
        Ok(())
    }

    fn load_prefix(&self, store: &mut BlockStore) -> CompressedPrefixSet {
        let b = store.read(self.prefix_block);
        CompressedPrefixSet::unpack(self.prefix_layout, b.words(), self.word_bits)
    }

    fn store_prefix(&self, store: &mut BlockStore, p: &CompressedPrefixSet) -> Result<()> {
        let words = p.pack(self.block_words, self.word_bits)?;
        store.write(self.prefix_block, crate::em::Block::from_words(words));
        Ok(())
    }

    /// Sketch and prefix set as stored, uncharged.
    pub fn stored_sets(&self, store: &BlockStore) -> (CompressedSketchSet, CompressedPrefixSet) {
        let s = store.peek(self.sketch_block);
        let p = store.peek(self.prefix_block);
        (
            CompressedSketchSet::unpack(self.sketch_layout, s.words(), self.word_bits),
            CompressedPrefixSet::unpack(self.prefix_layout, p.words(), self.word_bits),
        )
    }

    /// A value whose rank in the union of sets `a1..=a2` (0-based) lies in
    /// `[k, 8k)`, or `None` for minus infinity.
    pub fn query(&self, store: &mut BlockStore, a1: usize, a2: usize, k: usize) -> Result<Option<Key>> {
        if a1 > a2 || a2 >= self.f {
            return Err(Error::InvalidRange(format!("sets [{a1}, {a2}] with f = {}", self.f)));
        }
        let sk = self.load_sketch(store);
        let total: usize = sk.sets[a1..=a2].iter().map(|s| s.size).sum();
        if k == 0 || k > total {
            return Err(Error::KOutOfRange(format!("k = {k} with sub-union size {total}")));
        }
        let lists: Vec<Vec<std::cmp::Reverse<usize>>> = sk.sets[a1..=a2]
            .iter()
            .map(|s| s.pivots.iter().map(|&(g, _)| std::cmp::Reverse(g)).collect())
            .collect();
        let refs: Vec<&[std::cmp::Reverse<usize>]> = lists.iter().map(|v| v.as_slice()).collect();
        match select_by_windows(&refs, k) {
            None => Ok(None),
            Some((i, j)) => {
                let g = lists[i][j - 1].0;
                Ok(self.global.select_desc(store, g))
            }
        }
    }

    /// Size of the union of sets `a1..=a2`, from one read of the sketch block.
    pub fn union_len(&self, store: &mut BlockStore, a1: usize, a2: usize) -> usize {
        let sk = self.load_sketch(store);
        sk.sets[a1..=a2].iter().map(|s| s.size).sum()
    }

    /// Maximum of the union of sets `a1..=a2`.
    pub fn max_in_range(&self, store: &mut BlockStore, a1: usize, a2: usize) -> Option<Key> {
        self.by_set
            .score_bounds_in_range(store, &(a1 as u64, 0), &(a2 as u64, Key::MAX))
            .map(|b| b.0)
    }

    /// Minimum of the union of sets `a1..=a2`.
    pub fn min_in_range(&self, store: &mut BlockStore, a1: usize, a2: usize) -> Option<Key> {
        self.by_set
            .score_bounds_in_range(store, &(a1 as u64, 0), &(a2 as u64, Key::MAX))
            .map(|b| b.1)
    }

    /// Global rank of the element of local rank `r` in set `i`, from one read
    /// of the prefix block.
    pub fn prefix_lookup(&self, store: &mut BlockStore, i: usize, r: usize) -> Option<usize> {
        let pr = self.load_prefix(store);
        pr.sets.get(i)?.get(r.checked_sub(1)?).map(|e| e.0)
    }

    /// Fresh pivot `j` of set `i` given the current size: its global rank,
    /// through the indexes (large windows) or the prefix block (small ones).
    fn repair(&mut self, store: &mut BlockStore, i: usize, j: usize, size: usize, prefix: &CompressedPrefixSet) -> (usize, usize) {
        let r = fresh_rank(j, size);
        let threshold = prefix_threshold(self.f, self.l, self.block_words);
        if ((1usize << j) as f64) < threshold && r <= self.prefix_layout.p {
            self.stats.small_repairs += 1;
            let g = prefix.sets[i][r - 1].0;
            (g, r)
        } else {
            self.stats.large_repairs += 1;
            let v = self.sets[i].select_desc(store, r).expect("rank within set");
            (self.global.rank_desc(store, &v), r)
        }
    }

    /// Replaces dangling and out-of-window pivots of set `i`. Small windows
    /// share the prefix block already read by this update.
    fn fix_windows(&mut self, store: &mut BlockStore, sk: &mut CompressedSketchSet, i: usize, dangling: Option<usize>, pr: &CompressedPrefixSet) {
        let size = sk.sets[i].size;
        for j in 1..=sk.sets[i].pivots.len() {
            let (_, r) = sk.sets[i].pivots[j - 1];
            if in_window(j, r) && dangling != Some(j) {
                continue;
            }
            if dangling == Some(j) {
                self.stats.dangling += 1;
            }
            sk.sets[i].pivots[j - 1] = self.repair(store, i, j, size, pr);
        }
    }

    pub fn insert(&mut self, store: &mut BlockStore, i: usize, e: Key) -> Result<()> {
        self.check_set(i)?;
        if self.sets[i].len() >= self.l {
            return Err(Error::Capacity(format!("set {i} already holds l = {} values", self.l)));
        }
        if !self.global.insert(store, e) {
            return Err(Error::Duplicate(format!("value {e:#x} already in the group")));
        }
        self.sets[i].insert(store, e);
        self.by_set.insert(store, (i as u64, e));
        let r_new = self.global.rank_desc(store, &e);
        let r_loc = self.sets[i].rank_desc(store, &e);

        let mut pr = self.load_prefix(store);
        for s in pr.sets.iter_mut() {
            for e in s.iter_mut() {
                if e.0 >= r_new {
                    e.0 += 1;
                }
            }
        }
        let p = self.prefix_layout.p;
        if r_loc <= p {
            let s = &mut pr.sets[i];
            for e in s.iter_mut() {
                if e.1 >= r_loc {
                    e.1 += 1;
                }
            }
            s.insert(r_loc - 1, (r_new, r_loc));
            s.truncate(p);
        }
        self.store_prefix(store, &pr)?;

        let mut sk = self.load_sketch(store);
        for s in sk.sets.iter_mut() {
            for pv in s.pivots.iter_mut() {
                if pv.0 >= r_new {
                    pv.0 += 1;
                }
            }
        }
        let size = sk.sets[i].size + 1;
        sk.sets[i].size = size;
        for pv in sk.sets[i].pivots.iter_mut() {
            if pv.1 >= r_loc {
                pv.1 += 1;
            }
        }
        if size.is_power_of_two() {
            // the new pivot's window holds only the smallest element
            self.stats.expansions += 1;
            let min = self.sets[i].min(store).expect("nonempty set");
            let g = self.global.rank_desc(store, &min);
            sk.sets[i].pivots.push((g, size));
        }
        self.fix_windows(store, &mut sk, i, None, &pr);
        self.store_sketch(store, &sk)?;
        Ok(())
    }

    pub fn delete(&mut self, store: &mut BlockStore, i: usize, e: Key) -> Result<()> {
        self.check_set(i)?;
        if !self.sets[i].contains(store, &e) {
            return Err(Error::NotFound(format!("value {e:#x} not in set {i}")));
        }
        let r_old = self.global.rank_desc(store, &e);
        let r_loc = self.sets[i].rank_desc(store, &e);
        self.sets[i].remove(store, &e);
        self.global.remove(store, &e);
        self.by_set.remove(store, &(i as u64, e));
        let new_size = self.sets[i].len();

        let mut pr = self.load_prefix(store);
        for s in pr.sets.iter_mut() {
            for e in s.iter_mut() {
                if e.0 > r_old {
                    e.0 -= 1;
                }
            }
        }
        let p = self.prefix_layout.p;
        if r_loc <= p {
            let s = &mut pr.sets[i];
            s.remove(r_loc - 1);
            for e in s.iter_mut() {
                if e.1 > r_loc {
                    e.1 -= 1;
                }
            }
            if new_size >= p {
                self.stats.prefix_backfills += 1;
                let v = self.sets[i].select_desc(store, p).expect("p-th element");
                let g = self.global.rank_desc(store, &v);
                s.push((g, p));
            }
        }
        self.store_prefix(store, &pr)?;

        let mut sk = self.load_sketch(store);
        let old_size = sk.sets[i].size;
        let mut dangling = sk.sets[i].pivots.iter().position(|pv| pv.1 == r_loc).map(|j0| j0 + 1);
        for s in sk.sets.iter_mut() {
            for pv in s.pivots.iter_mut() {
                if pv.0 > r_old {
                    pv.0 -= 1;
                }
            }
        }
        for pv in sk.sets[i].pivots.iter_mut() {
            if pv.1 > r_loc {
                pv.1 -= 1;
            }
        }
        sk.sets[i].size = new_size;
        if old_size.is_power_of_two() {
            self.stats.shrinks += 1;
            sk.sets[i].pivots.pop();
            if dangling == Some(old_size.trailing_zeros() as usize + 1) {
                dangling = None;
            }
        }
        self.fix_windows(store, &mut sk, i, dangling, &pr);
        self.store_sketch(store, &sk)?;
        Ok(())
    }

    /// Checks windows, rank pairs and sizes against the indexes.
    pub fn audit(&self, store: &BlockStore) -> std::result::Result<(), String> {
        let (sk, pr) = self.stored_sets(store);
        let all = {
            let mut v = self.global.keys_uncharged();
            v.reverse();
            v
        };
        let mut total = 0;
        for i in 0..self.f {
            let desc = self.set_values(i);
            total += desc.len();
            if desc.len() > self.l {
                return Err(format!("set {i} exceeds l"));
            }
            let s = &sk.sets[i];
            if s.size != desc.len() || s.pivots.len() != pivot_count(desc.len()) {
                return Err(format!("set {i}: sketch size {} / {} pivots for {} values", s.size, s.pivots.len(), desc.len()));
            }
            for (j0, &(g, r)) in s.pivots.iter().enumerate() {
                if !in_window(j0 + 1, r) {
                    return Err(format!("set {i} pivot {} has local rank {r}", j0 + 1));
                }
                let v = desc[r - 1];
                let true_g = all.partition_point(|&y| y > v) + 1;
                if g != true_g {
                    return Err(format!("set {i} pivot {} global rank {g}, true {true_g}", j0 + 1));
                }
            }
            let want: Vec<(usize, usize)> = desc
                .iter()
                .take(self.prefix_layout.p)
                .enumerate()
                .map(|(r0, &x)| (all.partition_point(|&y| y > x) + 1, r0 + 1))
                .collect();
            if pr.sets[i] != want {
                return Err(format!("set {i} prefix {:?} != {want:?}", pr.sets[i]));
            }
        }
        if total != all.len() || self.by_set.len() != total {
            return Err("index sizes disagree".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(b: usize) -> BlockStore {
        BlockStore::with_block_words(b)
    }

    #[test]
    fn expansion_at_power_of_two() {
        let mut st = store(16);
        let mut g = FlGroup::new(&mut st, 4, 8).unwrap();
        for v in [50, 40, 30] {
            g.insert(&mut st, 0, v).unwrap();
        }
        let (sk, _) = g.stored_sets(&st);
        assert_eq!(sk.sets[0].pivots.len(), 2);
        g.insert(&mut st, 0, 10).unwrap();
        let (sk, _) = g.stored_sets(&st);
        assert_eq!(sk.sets[0].pivots.len(), 3);
        // new pivot is the smallest element, global rank 4, local rank 4
        assert_eq!(sk.sets[0].pivots[2], (4, 4));
        g.audit(&st).unwrap();
        g.delete(&mut st, 0, 40).unwrap();
        let (sk, _) = g.stored_sets(&st);
        assert_eq!(sk.sets[0].pivots.len(), 2);
        g.audit(&st).unwrap();
    }

    #[test]
    fn insert_max_shifts_global_ranks() {
        let mut st = store(16);
        let mut g = FlGroup::build(&mut st, 3, 8, vec![vec![10, 20, 30], vec![15, 25], vec![5]]).unwrap();
        let (before, _) = g.stored_sets(&st);
        g.insert(&mut st, 2, 1000).unwrap();
        let (after, _) = g.stored_sets(&st);
        for i in 0..2 {
            for (a, b) in before.sets[i].pivots.iter().zip(&after.sets[i].pivots) {
                assert_eq!(a.0 + 1, b.0);
                assert_eq!(a.1, b.1);
            }
        }
        assert_eq!(after.sets[2].pivots[0], (1, 1));
        g.audit(&st).unwrap();
    }

    #[test]
    fn prefix_lookup_one_read() {
        let mut st = store(16);
        let g = FlGroup::build(&mut st, 2, 8, vec![vec![3, 9, 7], vec![8, 1]]).unwrap();
        let before = st.stats();
        assert_eq!(g.prefix_lookup(&mut st, 0, 1), Some(1));
        assert_eq!(st.stats().since(before).reads, 1);
        assert_eq!(g.prefix_lookup(&mut st, 1, 1), Some(2));
        assert_eq!(g.prefix_lookup(&mut st, 1, 3), None);
    }

    #[test]
    fn rejections() {
        let mut st = store(16);
        let mut g = FlGroup::new(&mut st, 2, 2).unwrap();
        g.insert(&mut st, 0, 1).unwrap();
        assert!(matches!(g.insert(&mut st, 1, 1), Err(Error::Duplicate(_))));
        g.insert(&mut st, 0, 2).unwrap();
        assert!(matches!(g.insert(&mut st, 0, 3), Err(Error::Capacity(_))));
        assert!(matches!(g.delete(&mut st, 1, 1), Err(Error::NotFound(_))));
        assert!(matches!(g.query(&mut st, 0, 1, 3), Err(Error::KOutOfRange(_))));
        assert!(FlGroup::new(&mut store(4), 64, 64).is_err());
    }

    #[test]
    fn fuzz_windows_and_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (f, l) = (8, 16);
        let mut st = store(32);
        let mut g = FlGroup::new(&mut st, f, l).unwrap();
        let mut sets: Vec<Vec<Key>> = vec![Vec::new(); f];
        for step in 0..4000 {
            let i = rng.gen_range(0..f);
            if sets[i].len() < l && (sets[i].is_empty() || rng.gen_bool(0.55)) {
                let v = rng.gen_range(0..1_000_000u64);
                if sets.iter().any(|s| s.contains(&v)) {
                    continue;
                }
                g.insert(&mut st, i, v).unwrap();
                sets[i].push(v);
            } else if !sets[i].is_empty() {
                let at = rng.gen_range(0..sets[i].len());
                let v = sets[i].swap_remove(at);
                g.delete(&mut st, i, v).unwrap();
            }
            if let Err(e) = g.audit(&st) {
                panic!("step {step}: {e}");
            }
            let a1 = rng.gen_range(0..f);
            let a2 = rng.gen_range(a1..f);
            let union: Vec<Key> = sets[a1..=a2].iter().flatten().copied().collect();
            if !union.is_empty() {
                let k = rng.gen_range(1..=union.len());
                if let Some(x) = g.query(&mut st, a1, a2, k).unwrap() {
                    let r = union.iter().filter(|&&v| v >= x).count();
                    assert!(r >= k && r < 8 * k, "rank {r} k {k}");
                }
                assert_eq!(g.max_in_range(&mut st, a1, a2), union.iter().copied().max());
                assert_eq!(g.min_in_range(&mut st, a1, a2), union.iter().copied().min());
            }
        }
        let s = g.stats();
        assert!(s.expansions > 0 && s.shrinks > 0 && s.dangling > 0);
        assert!(s.large_repairs > 0 && s.small_repairs > 0 && s.prefix_backfills > 0);
    }
}
