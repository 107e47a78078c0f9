//! Simulated external memory.
//!
//! A [`BlockStore`] is an unbounded disk of `B`-word blocks. Every block
//! transfer goes through [`BlockStore::read`]/[`BlockStore::write`] (or the
//! multi-block [`BlockStore::touch_read`]/[`BlockStore::touch_write`] used by
//! structures whose nodes live in typed arenas) and is counted in [`IoStats`].
//! In-memory work is free.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// A word is an opaque 64-bit pattern; only the low `word_bits` bits are used
/// by bit-packed layouts.
pub type Word = u64;

/// Machine parameters of the external-memory model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmConfig {
    /// Words per block.
    pub block_words: usize,
    /// Words of main memory.
    pub memory_words: usize,
    /// Bits per word.
    pub word_bits: u32,
    /// Seed for workload generation.
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            block_words: 16,
            memory_words: 1 << 16,
            word_bits: 64,
            seed: 1,
        }
    }
}

impl EmConfig {
    pub fn new(block_words: usize, memory_words: usize, word_bits: u32) -> Result<Self> {
        let cfg = EmConfig {
            block_words,
            memory_words,
            word_bits,
            seed: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_words < 2 {
            return Err(Error::Config(format!("B must be >= 2, got {}", self.block_words)));
        }
        if self.memory_words < 2 * self.block_words {
            return Err(Error::Config(format!(
                "M must be >= 2B, got M={} B={}",
                self.memory_words, self.block_words
            )));
        }
        if self.word_bits == 0 || self.word_bits > 64 {
            return Err(Error::Config(format!("word_bits must be in 1..=64, got {}", self.word_bits)));
        }
        Ok(())
    }

    /// Checks that a word can hold a rank of an input of `max_input` elements.
    pub fn check_input_size(&self, max_input: u64) -> Result<()> {
        let need = ceil_log2(max_input.max(2));
        if need > self.word_bits {
            return Err(Error::Config(format!(
                "word_bits={} cannot address {} elements (need {})",
                self.word_bits, max_input, need
            )));
        }
        Ok(())
    }

    /// Parses the `key=value` config format (`B=16`, `M=1024`, `word_bits=64`,
    /// `seed=7`). Blank lines and `#` comments are ignored; unknown keys are
    /// returned as extras so callers can consume their own settings.
    pub fn parse(text: &str) -> Result<(Self, Vec<(String, String)>)> {
        let mut cfg = EmConfig::default();
        let mut extras = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse {
                line: lineno + 1,
                msg: format!("invalid {what}: {value:?}"),
            };
            match key {
                "B" => cfg.block_words = value.parse().map_err(|_| bad("B"))?,
                "M" => cfg.memory_words = value.parse().map_err(|_| bad("M"))?,
                "word_bits" => cfg.word_bits = value.parse().map_err(|_| bad("word_bits"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                _ => extras.push((key.to_string(), value.to_string())),
            }
        }
        cfg.validate()?;
        Ok((cfg, extras))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// Identifier of a block on the simulated disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(u64);

impl BlockId {
    pub fn raw(self) -> u64 {
        self.0
    }
}

/// The contents of one block: exactly `B` words.
#[derive(Clone, PartialEq, Eq)]
pub struct Block {
    words: Vec<Word>,
}

impl Block {
    pub fn zeroed(block_words: usize) -> Self {
        Block {
            words: vec![0; block_words],
        }
    }

    pub fn from_words(words: Vec<Word>) -> Self {
        Block { words }
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [Word] {
        &mut self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block({} words)", self.words.len())
    }
}

/// Read/write counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
}

impl IoStats {
    pub fn new(reads: u64, writes: u64) -> Self {
        IoStats { reads, writes }
    }

    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }

    /// Counter difference `self - earlier`.
    pub fn since(&self, earlier: IoStats) -> IoStats {
        IoStats {
            reads: self.reads - earlier.reads,
            writes: self.writes - earlier.writes,
        }
    }
}

/// Simulated disk. Allocation is free; blocks are never reused.
#[derive(Debug)]
pub struct BlockStore {
    config: EmConfig,
    // Only blocks that have been written hold contents; allocated-but-unwritten
    // blocks read back as zeros.
    contents: HashMap<BlockId, Block>,
    next_id: u64,
    freed: u64,
    stats: IoStats,
    scratch_peak: usize,
}

impl BlockStore {
    pub fn new(config: EmConfig) -> Self {
        BlockStore {
            config,
            contents: HashMap::new(),
            next_id: 0,
            freed: 0,
            stats: IoStats::default(),
            scratch_peak: 0,
        }
    }

    pub fn with_block_words(block_words: usize) -> Self {
        let config = EmConfig {
            block_words,
            memory_words: (block_words * block_words * 64).max(1 << 16),
            ..EmConfig::default()
        };
        Self::new(config)
    }

    pub fn config(&self) -> &EmConfig {
        &self.config
    }

    pub fn block_words(&self) -> usize {
        self.config.block_words
    }

    pub fn word_bits(&self) -> u32 {
        self.config.word_bits
    }

    /// Number of blocks needed to hold `words` words (at least one).
    pub fn blocks_for_words(&self, words: usize) -> usize {
        words.div_ceil(self.config.block_words).max(1)
    }

    pub fn alloc(&mut self) -> BlockId {
        let id = BlockId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Marks a block as no longer used by its owner. The id is not recycled.
    pub fn free(&mut self, id: BlockId) {
        self.check(id);
        self.contents.remove(&id);
        self.freed += 1;
    }

    pub fn allocated(&self) -> u64 {
        self.next_id
    }

    /// Blocks currently holding data (allocated and not freed).
    pub fn live_blocks(&self) -> u64 {
        self.next_id - self.freed
    }

    fn check(&self, id: BlockId) {
        assert!(id.0 < self.next_id, "block {:?} was never allocated", id);
    }

    pub fn read(&mut self, id: BlockId) -> Block {
        self.check(id);
        self.stats.reads += 1;
        self.contents
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Block::zeroed(self.config.block_words))
    }

    pub fn write(&mut self, id: BlockId, block: Block) {
        self.check(id);
        assert_eq!(
            block.len(),
            self.config.block_words,
            "block must hold exactly B words"
        );
        self.stats.writes += 1;
        self.contents.insert(id, block);
    }

    /// Uncharged inspection used by audits and tests.
    pub fn peek(&self, id: BlockId) -> Block {
        self.check(id);
        self.contents
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Block::zeroed(self.config.block_words))
    }

    /// Charges `blocks` reads of a structure node anchored at `id`.
    ///
    /// Tree nodes are kept in typed arenas rather than serialized words; each
    /// node owns an anchor block and is charged by the number of blocks its
    /// contents would occupy.
    pub fn touch_read(&mut self, id: BlockId, blocks: usize) {
        self.check(id);
        self.stats.reads += blocks as u64;
    }

    pub fn touch_write(&mut self, id: BlockId, blocks: usize) {
        self.check(id);
        self.stats.writes += blocks as u64;
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    pub fn reset_stats(&mut self) -> IoStats {
        let old = self.stats;
        self.stats = IoStats::default();
        old
    }

    /// Records the in-memory working set of an operation, in words.
    pub fn note_scratch(&mut self, words: usize) {
        self.scratch_peak = self.scratch_peak.max(words);
    }

    pub fn scratch_peak(&self) -> usize {
        self.scratch_peak
    }

    /// Whether every recorded working set fitted in `M` words.
    pub fn scratch_within_memory(&self) -> bool {
        self.scratch_peak <= self.config.memory_words
    }
}

/// `ceil(log2(x))` for `x >= 1`.
pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// `floor(log2(x))` for `x >= 1`.
pub fn floor_log2(x: u64) -> u32 {
    assert!(x >= 1);
    63 - x.leading_zeros()
}

/// `lg_b x = max(1, log_b x)`.
pub fn lg_base(b: f64, x: f64) -> f64 {
    if x <= 1.0 {
        return 1.0;
    }
    (x.ln() / b.ln()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> BlockStore {
        BlockStore::with_block_words(8)
    }

    #[test]
    fn alloc_gives_distinct_zero_blocks_without_io() {
        let mut s = store();
        let a = s.alloc();
        let b = s.alloc();
        assert_ne!(a, b);
        assert_eq!(s.stats(), IoStats::new(0, 0));
        let ids: std::collections::HashSet<_> = (0..1000).map(|_| s.alloc()).collect();
        assert_eq!(ids.len(), 1000);
        assert_eq!(s.stats(), IoStats::new(0, 0));
        assert_eq!(s.read(a).words(), &[0; 8]);
    }

    #[test]
    fn read_write_roundtrip_and_counts() {
        let mut s = store();
        let id = s.alloc();
        let x = Block::from_words((0..8).map(|i| i * 0x0101_0101).collect());
        s.write(id, x.clone());
        assert_eq!(s.read(id), x);
        assert_eq!(s.stats(), IoStats::new(1, 1));

        let y = Block::from_words(vec![u64::MAX; 8]);
        s.write(id, y.clone());
        assert_eq!(s.read(id), y);

        s.reset_stats();
        for _ in 0..3 {
            s.read(id);
        }
        s.write(id, x.clone());
        s.write(id, x);
        assert_eq!(s.stats(), IoStats::new(3, 2));
    }

    #[test]
    fn counters_are_per_store() {
        let mut a = store();
        let b = store();
        let id = a.alloc();
        a.read(id);
        assert_eq!(a.stats(), IoStats::new(1, 0));
        assert_eq!(b.stats(), IoStats::new(0, 0));
        a.reset_stats();
        assert_eq!(a.stats(), IoStats::new(0, 0));
    }

    #[test]
    #[should_panic(expected = "never allocated")]
    fn unknown_id_panics() {
        let mut s = store();
        let mut other = store();
        other.alloc();
        other.alloc();
        let id = other.alloc();
        s.read(id);
    }

    #[test]
    fn config_parse() {
        let (cfg, extra) = EmConfig::parse("B=16\nM=1024\n# c\nword_bits=64\nseed=9\nsmall_l=8\n").unwrap();
        assert_eq!(cfg.block_words, 16);
        assert_eq!(cfg.memory_words, 1024);
        assert_eq!(cfg.seed, 9);
        assert_eq!(extra, vec![("small_l".to_string(), "8".to_string())]);
        assert!(EmConfig::parse("B=16\nM=16\n").is_err());
        assert!(EmConfig::parse("B16").is_err());
    }

    #[test]
    fn log_helpers() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(128), 7);
        assert_eq!(ceil_log2(129), 8);
        assert_eq!(floor_log2(8), 3);
        assert_eq!(floor_log2(15), 3);
        assert_eq!(lg_base(16.0, 4.0), 1.0);
        assert!((lg_base(16.0, 256.0) - 2.0).abs() < 1e-12);
    }
}
