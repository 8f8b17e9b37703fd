//! Strictly ascending coordinate multi-indices and permutation-sign bookkeeping.
//!
//! Internally indices are 0-based. Everything that crosses an I/O boundary
//! (serialization, display, parsing) uses 1-based coordinates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly ascending list of distinct coordinate indices (0-based).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(Vec<usize>);

/// Sign of a permutation, or the marker for a tuple with a repeated index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    /// The tuple contains a repeated index; the corresponding wedge vanishes.
    Zero,
}

impl Parity {
    pub fn sign(self) -> i32 {
        match self {
            Parity::Even => 1,
            Parity::Odd => -1,
            Parity::Zero => 0,
        }
    }

    fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::Zero => Parity::Zero,
        }
    }
}

impl MultiIndex {
    /// The empty multi-index (valency 0), the basis of 0-forms.
    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    /// Builds from 0-based indices, which must already be strictly ascending.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMultiIndex(format!(
                "indices {:?} are not strictly ascending",
                indices.iter().map(|i| i + 1).collect::<Vec<_>>()
            )));
        }
        Ok(MultiIndex(indices))
    }

    /// Builds from 1-based indices as written in documents and on the command line.
    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::InvalidMultiIndex(
                "coordinate indices are 1-based; found 0".into(),
            ));
        }
        MultiIndex::new(indices.iter().map(|i| i - 1).collect())
    }

    pub fn single(i: usize) -> Self {
        MultiIndex(vec![i])
    }

    /// Sorts an arbitrary tuple, returning the ascending multi-index and the
    /// parity of the sorting permutation. Repeated entries yield `Parity::Zero`.
    pub fn sort_with_parity(tuple: &[usize]) -> (Option<MultiIndex>, Parity) {
        let mut v = tuple.to_vec();
        let mut parity = Parity::Even;
        // insertion sort, counting transpositions
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && v[j - 1] > v[j] {
                v.swap(j - 1, j);
                parity = parity.flip();
                j -= 1;
            }
        }
        if v.windows(2).any(|w| w[0] == w[1]) {
            return (None, Parity::Zero);
        }
        (Some(MultiIndex(v)), parity)
    }

    pub fn valency(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Concatenates `self` and `other` and sorts, as for `dx^self ∧ dx^other`.
    pub fn join(&self, other: &MultiIndex) -> (Option<MultiIndex>, Parity) {
        // merge counting inversions: each element of `other` jumps over the
        // elements of `self` greater than it
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let mut inversions = 0usize;
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    inversions += a.len() - i;
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => return (None, Parity::Zero),
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        let parity = if inversions.is_multiple_of(2) { Parity::Even } else { Parity::Odd };
        (Some(MultiIndex(out)), parity)
    }

    /// Inserts coordinate `j` in front (`dx^j ∧ dx^self`) and sorts.
    pub fn prepend(&self, j: usize) -> (Option<MultiIndex>, Parity) {
        MultiIndex::single(j).join(self)
    }

    /// Removes the entry at `position`, returning the remainder.
    pub fn remove_at(&self, position: usize) -> MultiIndex {
        let mut v = self.0.clone();
        v.remove(position);
        MultiIndex(v)
    }

    /// All multi-indices of the given valency in `dim` coordinates, in lexicographic order.
    pub fn all(dim: usize, valency: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        if valency > dim {
            return out;
        }
        let mut cur: Vec<usize> = (0..valency).collect();
        loop {
            out.push(MultiIndex(cur.clone()));
            // advance to next combination
            let mut i = valency;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < dim - valency + i {
                    cur[i] += 1;
                    for t in i + 1..valency {
                        cur[t] = cur[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Number of leading entries that are horizontal (< n), i.e. the split
    /// position ⋆ of a bundle multi-index (entries are ascending, so the
    /// horizontal ones always form a prefix).
    pub fn horizontal_prefix_len(&self, n: usize) -> usize {
        self.0.partition_point(|&i| i < n)
    }

    pub fn split_at(&self, position: usize) -> (MultiIndex, MultiIndex) {
        (
            MultiIndex(self.0[..position].to_vec()),
            MultiIndex(self.0[position..].to_vec()),
        )
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, ")")
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        MultiIndex::from_one_based(&v).map_err(serde::de::Error::custom)
    }
}

/// Binomial coefficient as `usize`; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorting_tracks_parity() {
        let (m, p) = MultiIndex::sort_with_parity(&[2, 0, 1]);
        assert_eq!(m.unwrap().indices(), &[0, 1, 2]);
        assert_eq!(p, Parity::Even);
        let (m, p) = MultiIndex::sort_with_parity(&[1, 0]);
        assert_eq!(m.unwrap().indices(), &[0, 1]);
        assert_eq!(p, Parity::Odd);
        let (m, p) = MultiIndex::sort_with_parity(&[1, 3, 1]);
        assert!(m.is_none());
        assert_eq!(p, Parity::Zero);
    }

    #[test]
    fn join_matches_sorting() {
        let a = MultiIndex::new(vec![0, 3]).unwrap();
        let b = MultiIndex::new(vec![1, 2]).unwrap();
        let (j, p) = a.join(&b);
        let (s, q) = MultiIndex::sort_with_parity(&[0, 3, 1, 2]);
        assert_eq!(j, s);
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_unsorted_and_zero_based_input() {
        assert!(MultiIndex::new(vec![2, 1]).is_err());
        assert!(MultiIndex::from_one_based(&[0, 1]).is_err());
        assert_eq!(MultiIndex::from_one_based(&[1, 3]).unwrap().indices(), &[0, 2]);
    }

    #[test]
    fn enumeration_counts() {
        for dim in 0..7 {
            for val in 0..=dim + 1 {
                let all = MultiIndex::all(dim, val);
                assert_eq!(all.len(), binomial(dim, val));
                assert!(all.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn horizontal_prefix() {
        let m = MultiIndex::from_one_based(&[1, 2, 4, 5]).unwrap();
        assert_eq!(m.horizontal_prefix_len(3), 2);
        assert_eq!(m.horizontal_prefix_len(0), 0);
        assert_eq!(m.horizontal_prefix_len(9), 4);
    }
}
