//! Fixed-width label bitsets.

use std::fmt;

const WORD_BITS: usize = 64;

/// A set of label ids drawn from `0..width`, stored as packed 64-bit words.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    width: usize,
    words: Vec<u64>,
}

impl LabelSet {
    pub fn empty(width: usize) -> Self {
        Self { width, words: vec![0; width.div_ceil(WORD_BITS)] }
    }

    pub fn full(width: usize) -> Self {
        let mut set = Self::empty(width);
        for id in 0..width {
            set.insert(id);
        }
        set
    }

    /// Builds a set from ids; ids `>= width` are ignored.
    pub fn from_ids<I: IntoIterator<Item = usize>>(width: usize, ids: I) -> Self {
        let mut set = Self::empty(width);
        for id in ids {
            if id < width {
                set.insert(id);
            }
        }
        set
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn contains(&self, id: usize) -> bool {
        id < self.width && self.words[id / WORD_BITS] & (1u64 << (id % WORD_BITS)) != 0
    }

    /// Inserts `id`. Returns `true` if it was not already present.
    ///
    /// Panics if `id >= width`.
    #[inline]
    pub fn insert(&mut self, id: usize) -> bool {
        assert!(id < self.width, "label id {id} out of range {}", self.width);
        let word = &mut self.words[id / WORD_BITS];
        let mask = 1u64 << (id % WORD_BITS);
        let fresh = *word & mask == 0;
        *word |= mask;
        fresh
    }

    #[inline]
    pub fn remove(&mut self, id: usize) -> bool {
        if id >= self.width {
            return false;
        }
        let word = &mut self.words[id / WORD_BITS];
        let mask = 1u64 << (id % WORD_BITS);
        let present = *word & mask != 0;
        *word &= !mask;
        present
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &LabelSet) {
        debug_assert_eq!(self.width, other.width);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn intersect_with(&mut self, other: &LabelSet) {
        debug_assert_eq!(self.width, other.width);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    pub fn difference_with(&mut self, other: &LabelSet) {
        debug_assert_eq!(self.width, other.width);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn intersection(&self, other: &LabelSet) -> LabelSet {
        let mut out = self.clone();
        out.intersect_with(other);
        out
    }

    pub fn difference(&self, other: &LabelSet) -> LabelSet {
        let mut out = self.clone();
        out.difference_with(other);
        out
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    pub fn union_len(&self, other: &LabelSet) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a | b).count_ones() as usize).sum()
    }

    pub fn is_disjoint(&self, other: &LabelSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Ids in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD_BITS + bit)
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}
