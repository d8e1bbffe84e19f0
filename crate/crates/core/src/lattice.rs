//! Finite boxes in Z^d with a fixed lexicographic site index.

use crate::error::{Error, Result};

/// A lattice point.
pub type Site = Vec<i64>;

/// Inclusive box `[lo, hi]` in Z^d. Sites are indexed lexicographically with the
/// first coordinate most significant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl LatticeBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidBox(format!("bounds {lo:?} and {hi:?} have mismatched dimension")));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidBox(format!("lo {lo:?} exceeds hi {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    /// One-dimensional box `[lo, hi]`.
    pub fn interval(lo: i64, hi: i64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|a| self.extent(a)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dim() && site.iter().enumerate().all(|(a, &c)| c >= self.lo[a] && c <= self.hi[a])
    }

    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let mut idx = 0usize;
        for (a, &c) in site.iter().enumerate() {
            idx = idx * self.extent(a) + (c - self.lo[a]) as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let d = self.dim();
        let mut out = vec![0; d];
        for a in (0..d).rev() {
            let e = self.extent(a);
            out[a] = self.lo[a] + (idx % e) as i64;
            idx /= e;
        }
        out
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |i| self.site(i))
    }

    /// The box shifted by `a`.
    pub fn translate(&self, a: &[i64]) -> LatticeBox {
        LatticeBox {
            lo: self.lo.iter().zip(a).map(|(l, s)| l + s).collect(),
            hi: self.hi.iter().zip(a).map(|(h, s)| h + s).collect(),
        }
    }

    pub fn intersect(&self, other: &LatticeBox) -> Option<LatticeBox> {
        let lo: Vec<i64> = self.lo.iter().zip(&other.lo).map(|(a, b)| *a.max(b)).collect();
        let hi: Vec<i64> = self.hi.iter().zip(&other.hi).map(|(a, b)| *a.min(b)).collect();
        LatticeBox::new(lo, hi).ok()
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &LatticeBox) -> LatticeBox {
        LatticeBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| *a.max(b)).collect(),
        }
    }

    /// Grows the box by `k` in every direction.
    pub fn pad(&self, k: i64) -> LatticeBox {
        LatticeBox {
            lo: self.lo.iter().map(|c| c - k).collect(),
            hi: self.hi.iter().map(|c| c + k).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &LatticeBox) -> bool {
        self.dim() == other.dim() && other.contains(&self.lo) && other.contains(&self.hi)
    }

    /// Smallest box containing every site, or `None` for an empty set.
    pub fn bounding(sites: &[Site]) -> Option<LatticeBox> {
        let first = sites.first()?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for s in sites {
            for a in 0..lo.len() {
                lo[a] = lo[a].min(s[a]);
                hi[a] = hi[a].max(s[a]);
            }
        }
        Some(LatticeBox { lo, hi })
    }

    /// Index pairs of nearest-neighbour bonds inside the box, each once with i < j.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            let s = self.site(i);
            for a in 0..self.dim() {
                let mut t = s.clone();
                t[a] += 1;
                if let Some(j) = self.index_of(&t) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

impl std::fmt::Display for LatticeBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

/// l1 lattice distance.
pub fn l1_distance(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// l1 distance from a site to a set (i64::MAX for the empty set).
pub fn distance_to_set(site: &[i64], set: &[Site]) -> i64 {
    set.iter().map(|s| l1_distance(site, s)).min().unwrap_or(i64::MAX)
}

/// Unit vector along `axis` in dimension `d`.
pub fn unit(d: usize, axis: usize) -> Site {
    let mut e = vec![0; d];
    e[axis] = 1;
    e
}

pub fn add(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[i64], b: &[i64]) -> Site {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn index_roundtrip_2d() {
        let b = LatticeBox::new(vec![-1, 2], vec![1, 4]).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!(b.site(0), vec![-1, 2]);
        assert_eq!(b.site(1), vec![-1, 3]);
        assert_eq!(b.site(3), vec![0, 2]);
        for i in 0..b.len() {
            assert_eq!(b.index_of(&b.site(i)), Some(i));
        }
        assert_eq!(b.bonds().len(), 12);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(LatticeBox::new(vec![2], vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(lo in prop::collection::vec(-5i64..5, 1..4), ext in prop::collection::vec(0i64..4, 3)) {
            let hi: Vec<i64> = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
            let b = LatticeBox::new(lo.clone(), hi).unwrap();
            for i in 0..b.len() {
                prop_assert_eq!(b.index_of(&b.site(i)), Some(i));
            }
        }
    }
}
