//! Logarithmic sketches and their bit-packed form.
//!
//! A sketch of a set `L` keeps, for `j = 1..=floor(lg |L|) + 1`, a pivot whose
//! rank in `L` (1 = largest) lies in `[2^(j-1), 2^j)`.

use crate::bitpack::{BitReader, BitWriter};
use crate::em::{ceil_log2, floor_log2, Word};
use crate::error::{Error, Result};
use crate::key::Key;

/// Approximation factor of [`sketch_union_select`]: results have union rank
/// in `[k, C3 * k)`.
pub const C3: usize = 8;

/// Number of pivots of a set of `len` elements.
pub fn pivot_count(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        floor_log2(len as u64) as usize + 1
    }
}

/// Local rank given to a freshly chosen `j`-th pivot of a set of `len`
/// elements: `floor(1.5 * 2^(j-1))`, clamped to the window and the set.
pub fn fresh_rank(j: usize, len: usize) -> usize {
    let lo = 1usize << (j - 1);
    let r = (3 * lo) / 2;
    r.max(lo).min(2 * lo - 1).min(len)
}

/// Whether local rank `r` is valid for pivot `j`.
pub fn in_window(j: usize, r: usize) -> bool {
    r >= 1 << (j - 1) && r < 1 << j
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sketch {
    /// Pivot values; entry `j - 1` is pivot `j`.
    pub pivots: Vec<Key>,
    /// Local ranks of the pivots.
    pub ranks: Vec<usize>,
    pub len: usize,
}

impl Sketch {
    /// Builds the sketch of `desc`, a list sorted in descending order.
    pub fn build(desc: &[Key]) -> Self {
        let m = pivot_count(desc.len());
        let ranks: Vec<usize> = (1..=m).map(|j| fresh_rank(j, desc.len())).collect();
        Sketch {
            pivots: ranks.iter().map(|&r| desc[r - 1]).collect(),
            ranks,
            len: desc.len(),
        }
    }

    /// Checks the windows against the true contents of the set.
    pub fn audit(&self, desc: &[Key]) -> std::result::Result<(), String> {
        if self.len != desc.len() || self.pivots.len() != pivot_count(desc.len()) {
            return Err(format!("sketch of {} pivots for {} elements", self.pivots.len(), desc.len()));
        }
        for (i, &p) in self.pivots.iter().enumerate() {
            let r = desc.partition_point(|&x| x > p) + 1;
            if r > desc.len() || desc[r - 1] != p {
                return Err(format!("pivot {} is not an element", i + 1));
            }
            if !in_window(i + 1, r) || r != self.ranks[i] {
                return Err(format!("pivot {} has rank {r}, stored {}", i + 1, self.ranks[i]));
            }
        }
        Ok(())
    }
}

/// Core selection over pivot lists. `sets[i][j - 1]` is pivot `j` of set `i`,
/// ordered so that larger means higher. Returns `(set, j)` of the highest
/// pivot whose lower bound `sum_i 2^(j_i - 1)` on its union rank reaches `k`,
/// or `None` when no pivot does.
pub fn select_by_windows<K: Ord + Copy>(sets: &[&[K]], k: usize) -> Option<(usize, usize)> {
    let mut all: Vec<(K, usize, usize)> = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        for (j0, &v) in s.iter().enumerate() {
            all.push((v, i, j0 + 1));
        }
    }
    all.sort_unstable_by(|a, b| b.0.cmp(&a.0));
    let mut lb = 0usize;
    for (_, i, j) in all {
        let prev = if j >= 2 { 1usize << (j - 2) } else { 0 };
        lb = lb - prev + (1usize << (j - 1));
        if lb >= k {
            return Some((i, j));
        }
    }
    None
}

/// A value of union rank in `[k, 8k)` among the sketched sets, or `None`
/// (minus infinity) when the sketches cannot certify rank `k`.
pub fn sketch_union_select(sketches: &[Sketch], k: usize) -> Result<Option<Key>> {
    let total: usize = sketches.iter().map(|s| s.len).sum();
    if k == 0 || k > total {
        return Err(Error::KOutOfRange(format!("k = {k} with union size {total}")));
    }
    let lists: Vec<&[Key]> = sketches.iter().map(|s| s.pivots.as_slice()).collect();
    Ok(select_by_windows(&lists, k).map(|(i, j)| sketches[i].pivots[j - 1]))
}

/// Field widths of a compressed sketch set for parameters `f`, `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SketchLayout {
    pub f: usize,
    pub l: usize,
    pub global_bits: u32,
    pub local_bits: u32,
    pub size_bits: u32,
    pub slots: usize,
}

impl SketchLayout {
    pub fn new(f: usize, l: usize) -> Result<Self> {
        if f == 0 || l == 0 {
            return Err(Error::Params(format!("f = {f}, l = {l} must be positive")));
        }
        Ok(SketchLayout {
            f,
            l,
            global_bits: ceil_log2((f * l) as u64),
            local_bits: ceil_log2(l as u64),
            size_bits: ceil_log2(l as u64 + 1),
            slots: pivot_count(l),
        })
    }

    /// `f * (floor(lg l) + 1) * 2 * ceil(lg(fl))`.
    pub fn formula_bits(&self) -> usize {
        self.f * self.slots * 2 * self.global_bits as usize
    }

    /// Exact size of the packed encoding.
    pub fn packed_bits(&self) -> usize {
        self.f * (self.size_bits as usize + self.slots * (self.global_bits + self.local_bits) as usize)
    }

    /// Fails unless both the formula bound and the exact size fit a block.
    pub fn check_budget(&self, block_words: usize, word_bits: u32) -> Result<()> {
        let budget = block_words * word_bits as usize;
        let need = self.formula_bits().max(self.packed_bits());
        if need > budget {
            return Err(Error::Params(format!(
                "compressed sketch set needs {need} bits, block holds {budget} (f = {}, l = {})",
                self.f, self.l
            )));
        }
        Ok(())
    }
}

/// Ranks describing one set's sketch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetRanks {
    pub size: usize,
    /// `(global rank, local rank)` per pivot, `j` ascending.
    pub pivots: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedSketchSet {
    pub layout: SketchLayout,
    pub sets: Vec<SetRanks>,
}

impl CompressedSketchSet {
    pub fn empty(layout: SketchLayout) -> Self {
        CompressedSketchSet {
            layout,
            sets: vec![SetRanks::default(); layout.f],
        }
    }

    /// Packs into exactly `block_words` words.
    pub fn pack(&self, block_words: usize, word_bits: u32) -> Result<Vec<Word>> {
        self.layout.check_budget(block_words, word_bits)?;
        let lay = &self.layout;
        let mut w = BitWriter::new(word_bits);
        for s in &self.sets {
            if s.size > lay.l || s.pivots.len() != pivot_count(s.size) {
                return Err(Error::Precondition(format!("set of size {} with {} pivots", s.size, s.pivots.len())));
            }
            w.put(s.size as u64, lay.size_bits);
            for slot in 0..lay.slots {
                let (g, r) = s.pivots.get(slot).copied().unwrap_or((1, 1));
                w.put(g as u64 - 1, lay.global_bits);
                w.put(r as u64 - 1, lay.local_bits);
            }
        }
        debug_assert_eq!(w.bits_written(), lay.packed_bits());
        Ok(w.finish(block_words))
    }

    pub fn unpack(layout: SketchLayout, words: &[Word], word_bits: u32) -> Self {
        let mut rd = BitReader::new(words, word_bits);
        let mut sets = Vec::with_capacity(layout.f);
        for _ in 0..layout.f {
            let size = rd.get(layout.size_bits) as usize;
            let mut pivots = Vec::new();
            for slot in 0..layout.slots {
                let g = rd.get(layout.global_bits) as usize + 1;
                let r = rd.get(layout.local_bits) as usize + 1;
                if slot < pivot_count(size) {
                    pivots.push((g, r));
                }
            }
            sets.push(SetRanks { size, pivots });
        }
        CompressedSketchSet { layout, sets }
    }
}
