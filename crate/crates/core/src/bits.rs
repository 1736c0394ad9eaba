//! Fixed-width bitset over `u64` words.
//!
//! Derivation (extent/intent computation) is the mining hot path: both
//! directions reduce to AND-folds over row or column masks, so the set type
//! is a thin wrapper around a word vector with the unused high bits of the
//! last word kept at zero (which makes `Eq`/`Hash` derivable).

/// Dense bitset with a fixed universe size.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BitSet {
    nbits: usize,
    words: Vec<u64>,
}

impl BitSet {
    /// Empty set over a universe of `nbits` elements.
    pub fn empty(nbits: usize) -> Self {
        BitSet {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    /// Full set {0, .., nbits-1}.
    pub fn full(nbits: usize) -> Self {
        let mut words = vec![!0u64; nbits.div_ceil(64)];
        if let Some(last) = words.last_mut() {
            let tail = nbits % 64;
            if tail != 0 {
                *last = (1u64 << tail) - 1;
            }
        }
        BitSet { nbits, words }
    }

    /// Build from element indices (must be < nbits).
    pub fn from_indices(nbits: usize, indices: &[usize]) -> Self {
        let mut s = BitSet::empty(nbits);
        for &i in indices {
            s.insert(i);
        }
        s
    }

    /// Universe size this set ranges over.
    pub fn universe(&self) -> usize {
        self.nbits
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.nbits);
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        debug_assert!(i < self.nbits);
        self.words[i / 64] &= !(1u64 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.nbits && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Number of elements in the set.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// In-place intersection with another set over the same universe.
    pub fn intersect_assign(&mut self, other: &BitSet) {
        debug_assert_eq!(self.nbits, other.nbits);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
    }

    /// True when every element of `self` is in `other`.
    pub fn is_subset(&self, other: &BitSet) -> bool {
        debug_assert_eq!(self.nbits, other.nbits);
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// True when `self` and `other` share no element.
    pub fn is_disjoint(&self, other: &BitSet) -> bool {
        debug_assert_eq!(self.nbits, other.nbits);
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// Raw words, little-endian bit order; unused high bits are zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Ascending iterator over set elements.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let tz = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(wi * 64 + tz)
                }
            })
        })
    }

    /// Set elements as a sorted index vector.
    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}
