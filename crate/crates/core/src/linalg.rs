//! Symmetric eigensolvers.
//!
//! Nearest-neighbour chains are solved with Sturm-count bisection and twisted
//! factorizations, which keep small eigenvector components accurate relative to
//! their own size. Everything else goes through the dense nalgebra solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues in increasing order with matching unit eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.vectors.column(k).into_owned()
    }

    /// Smallest distance between consecutive eigenvalues (infinite for n < 2).
    pub fn min_gap(&self) -> f64 {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Distance from eigenvalue `k` to the rest of the spectrum.
    pub fn isolation(&self, k: usize) -> f64 {
        let mut g = f64::INFINITY;
        if k > 0 {
            g = g.min(self.values[k] - self.values[k - 1]);
        }
        if k + 1 < self.values.len() {
            g = g.min(self.values[k + 1] - self.values[k]);
        }
        g
    }
}

/// Dense symmetric eigendecomposition, sorted ascending.
pub fn dense_eigen(m: &DMatrix<f64>) -> Eigen {
    let n = m.nrows();
    if n == 0 {
        return Eigen { values: vec![], vectors: DMatrix::zeros(0, 0) };
    }
    let se = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(k));
    }
    Eigen { values, vectors }
}

/// Dense eigenvalues only, sorted ascending.
pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert!(diag.is_empty() || off.len() + 1 == diag.len(), "off-diagonal length must be n-1");
        Self { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(self.diag.clone()));
        for (i, &b) in self.off.iter().enumerate() {
            m[(i, i + 1)] = b;
            m[(i + 1, i)] = b;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }

    /// Number of eigenvalues strictly below `lambda`.
    pub fn count_below(&self, lambda: f64) -> usize {
        sturm_count(&self.diag, &self.off, lambda)
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        let pad = 1e-12 * (lo.abs().max(hi.abs()) + 1.0);
        (lo - pad, hi + pad)
    }

    /// The k-th smallest eigenvalue (0-based) by bisection to full precision.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let (lo, hi) = self.gershgorin();
        bisect_eigenvalue(&self.diag, &self.off, k, lo, hi)
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.off.iter().all(|b| *b == 0.0) {
            let mut v = self.diag.clone();
            v.sort_by(f64::total_cmp);
            return v;
        }
        (0..self.len()).map(|k| self.eigenvalue(k)).collect()
    }

    /// Eigenvalues in the half-open window `[lo, hi)`.
    pub fn eigenvalues_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let first = self.count_below(lo);
        let last = self.count_below(hi);
        let (glo, ghi) = self.gershgorin();
        (first..last).map(|k| bisect_eigenvalue(&self.diag, &self.off, k, glo.max(lo - 1e-300), ghi.min(hi))).collect()
    }

    /// Eigendecomposition with componentwise-accurate eigenvectors. The matrix
    /// is split at exactly vanishing couplings; each irreducible block is solved
    /// by bisection plus a twisted factorization.
    pub fn eigen(&self) -> Eigen {
        let n = self.len();
        let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(n);
        let mut start = 0;
        for end in 0..n {
            if end + 1 == n || self.off[end] == 0.0 {
                let d = &self.diag[start..=end];
                let o = &self.off[start..end];
                let (lo, hi) = Tridiagonal::new(d.to_vec(), o.to_vec()).gershgorin();
                for k in 0..d.len() {
                    let lambda = bisect_eigenvalue(d, o, k, lo, hi);
                    let z = twisted_vector(d, o, lambda);
                    let mut full = DVector::zeros(n);
                    full.rows_mut(start, d.len()).copy_from(&z);
                    pairs.push((lambda, full));
                }
                start = end + 1;
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = Vec::with_capacity(n);
        for (c, (l, v)) in pairs.into_iter().enumerate() {
            values.push(l);
            vectors.set_column(c, &v);
        }
        Eigen { values, vectors }
    }
}

fn sturm_count(diag: &[f64], off: &[f64], lambda: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0f64;
    for i in 0..diag.len() {
        let b2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
        d = if i == 0 { diag[0] - lambda } else { (diag[i] - lambda) - b2 / d };
        if d == 0.0 {
            d = -f64::MIN_POSITIVE;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn bisect_eigenvalue(diag: &[f64], off: &[f64], k: usize, mut lo: f64, mut hi: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-300 {
            return mid;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

fn guard(p: f64, scale: f64) -> f64 {
    let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    if p.abs() < tiny {
        if p < 0.0 {
            -tiny
        } else {
            tiny
        }
    } else {
        p
    }
}

/// Unit eigenvector of an irreducible tridiagonal block for an accurate eigenvalue.
fn twisted_vector(diag: &[f64], off: &[f64], lambda: f64) -> DVector<f64> {
    let n = diag.len();
    if n == 1 {
        return DVector::from_element(1, 1.0);
    }
    let scale = diag.iter().map(|a| (a - lambda).abs()).chain(off.iter().map(|b| b.abs())).fold(0.0, f64::max);
    let mut dp = vec![0.0; n];
    let mut dm = vec![0.0; n];
    dp[0] = guard(diag[0] - lambda, scale);
    for i in 1..n {
        dp[i] = guard(diag[i] - lambda - off[i - 1] * off[i - 1] / dp[i - 1], scale);
    }
    dm[n - 1] = guard(diag[n - 1] - lambda, scale);
    for i in (0..n - 1).rev() {
        dm[i] = guard(diag[i] - lambda - off[i] * off[i] / dm[i + 1], scale);
    }
    let k = (0..n)
        .min_by(|&a, &b| {
            let ga = (dp[a] + dm[a] - (diag[a] - lambda)).abs();
            let gb = (dp[b] + dm[b] - (diag[b] - lambda)).abs();
            ga.total_cmp(&gb)
        })
        .unwrap();
    let mut z = vec![0.0; n];
    z[k] = 1.0;
    for i in (0..k).rev() {
        z[i] = -off[i] * z[i + 1] / dp[i];
    }
    for i in k + 1..n {
        z[i] = -off[i - 1] * z[i - 1] / dm[i];
    }
    // Rescale before normalising so that huge intermediate ratios cannot overflow.
    let m = z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut v = DVector::from_iterator(n, z.into_iter().map(|c| c / m));
    let norm = v.norm();
    v /= norm;
    v
}

/// Sign-normalises `v` so that its largest-magnitude component is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
}

/// max |UᵀU − I|.
pub fn orthogonality_defect(u: &DMatrix<f64>) -> f64 {
    let g = u.transpose() * u;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let t = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - t).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn free_chain_matches_closed_form() {
        let n = 6;
        let t = Tridiagonal::new(vec![0.0; n], vec![1.0; n - 1]);
        let mut exact: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos()).collect();
        exact.sort_by(f64::total_cmp);
        for (a, b) in t.eigenvalues().iter().zip(&exact) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn tiny_components_keep_relative_accuracy() {
        // Strongly disordered chain: the eigenvector anchored at site 0 has
        // components of order eps^k at distance k.
        let eps = 1e-3;
        let diag: Vec<f64> = (0..12).map(|i| i as f64 * 3.0).collect();
        let t = Tridiagonal::new(diag.clone(), vec![eps; 11]);
        let e = t.eigen();
        let v = e.vector(0);
        // Leading order: psi(k) ~ prod_{j=1..k} eps / (V_0 - V_j).
        let mut lead = 1.0;
        for k in 1..12 {
            lead *= eps / (diag[0] - diag[k]);
            let rel = (v[k] / v[0] - lead).abs() / lead.abs();
            assert!(rel < 1e-4, "component {k}: {} vs {}", v[k] / v[0], lead);
        }
    }

    #[test]
    fn splits_at_zero_coupling() {
        let t = Tridiagonal::new(vec![1.0, 2.0, 1.5], vec![0.0, 0.5]);
        let e = t.eigen();
        assert!(orthogonality_defect(&e.vectors) < 1e-14);
        let d = dense_eigen(&t.to_dense());
        for (a, b) in e.values.iter().zip(&d.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn tridiagonal_agrees_with_dense(
            diag in prop::collection::vec(-5.0f64..5.0, 2..12),
            seed_off in prop::collection::vec(0.01f64..1.0, 11),
        ) {
            let n = diag.len();
            let off: Vec<f64> = seed_off[..n - 1].to_vec();
            let t = Tridiagonal::new(diag, off);
            let e = t.eigen();
            let d = dense_eigen(&t.to_dense());
            for (a, b) in e.values.iter().zip(&d.values) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!(orthogonality_defect(&e.vectors) < 1e-8);
            let m = t.to_dense();
            for k in 0..n {
                let v = e.vector(k);
                let r = &m * &v - &v * e.values[k];
                prop_assert!(r.amax() < 1e-10);
            }
        }
    }
}
