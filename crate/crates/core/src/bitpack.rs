//! Fixed-width bit fields packed into words of `word_bits` bits.
//!
//! Fields are written most-significant bit first. Each word carries
//! `word_bits` payload bits in its low end; bit 0 of the stream is the top
//! payload bit of word 0.

use crate::em::Word;

pub struct BitWriter {
    words: Vec<Word>,
    word_bits: u32,
    pos: usize,
}

impl BitWriter {
    pub fn new(word_bits: u32) -> Self {
        assert!((1..=64).contains(&word_bits));
        BitWriter {
            words: Vec::new(),
            word_bits,
            pos: 0,
        }
    }

    pub fn bits_written(&self) -> usize {
        self.pos
    }

    /// Appends the low `width` bits of `value`, MSB first.
    pub fn put(&mut self, value: u64, width: u32) {
        assert!(width == 64 || value >> width == 0, "value {value} does not fit in {width} bits");
        for b in (0..width).rev() {
            let bit = (value >> b) & 1;
            let w = self.pos / self.word_bits as usize;
            let off = self.word_bits - 1 - (self.pos % self.word_bits as usize) as u32;
            if w == self.words.len() {
                self.words.push(0);
            }
            self.words[w] |= bit << off;
            self.pos += 1;
        }
    }

    /// Finishes the stream, zero-padding to `min_words` words.
    pub fn finish(mut self, min_words: usize) -> Vec<Word> {
        if self.words.len() < min_words {
            self.words.resize(min_words, 0);
        }
        self.words
    }
}

pub struct BitReader<'a> {
    words: &'a [Word],
    word_bits: u32,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(words: &'a [Word], word_bits: u32) -> Self {
        BitReader { words, word_bits, pos: 0 }
    }

    pub fn get(&mut self, width: u32) -> u64 {
        let mut v = 0u64;
        for _ in 0..width {
            let w = self.pos / self.word_bits as usize;
            let off = self.word_bits - 1 - (self.pos % self.word_bits as usize) as u32;
            v = (v << 1) | ((self.words[w] >> off) & 1);
            self.pos += 1;
        }
        v
    }

    pub fn seek(&mut self, bit: usize) {
        self.pos = bit;
    }
}
