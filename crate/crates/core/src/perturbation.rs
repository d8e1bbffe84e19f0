//! Rayleigh–Schrödinger coefficients, isolated-branch bounds and
//! Hellmann–Feynman derivatives.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::linalg::dense_eigen;
use crate::operator::FiniteOperator;

/// Coefficients of E(eps) = sum eps^k E_k and psi(eps) = sum eps^k psi_k
/// anchored at a base site, with <psi_k, e_n> = 0 for k >= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCoefficients {
    pub base_site: Site,
    pub base_index: usize,
    pub order: usize,
    pub energies: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl SeriesCoefficients {
    pub fn energy_sum(&self, eps: f64) -> f64 {
        self.energies.iter().rev().fold(0.0, |acc, e| acc * eps + e)
    }

    pub fn vector_sum(&self, eps: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.vectors[0].len());
        for v in self.vectors.iter().rev() {
            out = out * eps + v;
        }
        out
    }

    /// CSV with columns order, E_j, ||psi_j||, growth ratio.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "order,energy,vector_norm,growth_ratio")?;
        for k in 0..=self.order {
            let ratio = if k > 0 && self.energies[k - 1] != 0.0 {
                (self.energies[k] / self.energies[k - 1]).abs()
            } else {
                f64::NAN
            };
            writeln!(w, "{k},{:e},{:e},{:e}", self.energies[k], self.vectors[k].norm(), ratio)?;
        }
        Ok(())
    }
}

/// Smallest pairwise separation of the diagonal, or the offending pair.
pub fn diagonal_separation(v: &[f64]) -> Result<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut delta = f64::INFINITY;
    for w in idx.windows(2) {
        let gap = v[w[1]] - v[w[0]];
        if gap < 1e-10 {
            return Err(Error::DegenerateDiagonal { i: w[0].min(w[1]), j: w[0].max(w[1]), gap });
        }
        delta = delta.min(gap);
    }
    Ok(delta)
}

/// Order-by-order solution of (V + eps Phi) psi = E psi anchored at `base`.
pub fn rs_series(h: &FiniteOperator, base: &[i64], order: usize) -> Result<SeriesCoefficients> {
    let n = h
        .lattice()
        .index_of(base)
        .ok_or_else(|| Error::InvalidInput(format!("site {base:?} is not in {}", h.lattice())))?;
    let v = h.diagonal();
    diagonal_separation(v)?;
    let phi = h.hopping_dense();
    let dim = h.dim();
    let e0 = v[n];
    let mut energies = vec![e0];
    let mut vectors = vec![DVector::from_fn(dim, |i, _| if i == n { 1.0 } else { 0.0 })];
    for k in 1..=order {
        let phi_prev = &phi * &vectors[k - 1];
        let ek = phi_prev[n];
        energies.push(ek);
        let mut psi = DVector::zeros(dim);
        for m in 0..dim {
            if m == n {
                continue;
            }
            let mut rhs = -phi_prev[m];
            for j in 1..=k {
                rhs += energies[j] * vectors[k - j][m];
            }
            psi[m] = rhs / (v[m] - e0);
        }
        vectors.push(psi);
    }
    Ok(SeriesCoefficients { base_site: base.to_vec(), base_index: n, order, energies, vectors })
}

/// Growth diagnostics of a computed series.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// Per-order growth ratios (|E_k|/|E_j|)^(1/(k-j)) between consecutive nonzero coefficients.
    pub radii: Vec<f64>,
    pub delta: f64,
    /// Smallest C with |E_j| <= (C ||Phi|| / delta)^j for all computed j >= 1.
    pub bound_constant: f64,
    /// Set when some growth ratio exceeds 1/eps.
    pub diverging: bool,
}

pub fn convergence_report(coeffs: &SeriesCoefficients, delta: f64, phi_norm: f64, eps: f64) -> Result<ConvergenceReport> {
    if coeffs.order < 3 {
        return Err(Error::InvalidInput("convergence report needs order >= 3".into()));
    }
    let nonzero: Vec<(usize, f64)> = coeffs
        .energies
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, e)| **e != 0.0)
        .map(|(k, e)| (k, e.abs()))
        .collect();
    let radii: Vec<f64> = if nonzero.len() < 2 {
        vec![0.0; coeffs.order.saturating_sub(1)]
    } else {
        nonzero.windows(2).map(|w| (w[1].1 / w[0].1).powf(1.0 / (w[1].0 - w[0].0) as f64)).collect()
    };
    let bound_constant = if phi_norm == 0.0 {
        0.0
    } else {
        nonzero.iter().map(|&(k, e)| e.powf(1.0 / k as f64) * delta / phi_norm).fold(0.0, f64::max)
    };
    let diverging = radii.iter().any(|&r| r > 1.0 / eps);
    Ok(ConvergenceReport { radii, delta, bound_constant, diverging })
}

/// Eigenpair of an isolated branch anchored at a regular site, with derivatives
/// and the measured ratios to the perturbative bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct IsolatedBranch {
    pub energy: f64,
    pub vector: DVector<f64>,
    pub d_energy: f64,
    pub d_vector: DVector<f64>,
    /// f(x0 + omega.n) and its derivative.
    pub potential: f64,
    pub d_potential: f64,
    pub delta: f64,
    /// eps * ||phi||_inf / delta.
    pub bound: f64,
    /// Bound used for derivatives (see `isolated_branch`).
    pub derivative_bound: f64,
    pub energy_slack: f64,
    pub vector_slack: f64,
    pub d_energy_slack: f64,
    pub d_vector_slack: f64,
}

impl IsolatedBranch {
    pub fn bounds_hold(&self) -> bool {
        [self.energy_slack, self.vector_slack, self.d_energy_slack, self.d_vector_slack].iter().all(|s| *s <= 1.0)
    }
}

/// Isolated branch near (f(x0 + omega.n), e_n) of the family `x -> H(x)`.
///
/// Bounds are eps ||phi||_inf / delta for |E - f| and |psi - e_n|_inf. For the
/// derivatives the family is differentiated through the diagonal as well, so the
/// bound is eps / delta * max(||phi'||_inf, ||phi||_inf * D / delta) with D the
/// largest |f'| on the box.
pub fn isolated_branch<F>(family: F, base: &[i64], x0: f64) -> Result<IsolatedBranch>
where
    F: Fn(f64) -> Result<FiniteOperator>,
{
    let h0 = family(x0)?;
    let n = h0
        .lattice()
        .index_of(base)
        .ok_or_else(|| Error::InvalidInput(format!("site {base:?} is not in {}", h0.lattice())))?;
    let v = h0.diagonal();
    let delta = (0..v.len()).filter(|&m| m != n).map(|m| (v[m] - v[n]).abs()).fold(f64::INFINITY, f64::min);
    let eps = h0.eps();
    let phi_sup = h0.edges().map(|(_, w)| w.abs()).fold(0.0, f64::max);
    if eps * phi_sup >= delta / 4.0 {
        return Err(Error::HypothesisViolation(format!(
            "eps ||phi|| = {:e} is not below delta/4 = {:e}",
            eps * phi_sup,
            delta / 4.0
        )));
    }
    let eig = h0.eigen();
    let window = 2.0 * eps * phi_sup;
    let near: Vec<usize> = (0..eig.values.len()).filter(|&k| (eig.values[k] - v[n]).abs() <= window).collect();
    if near.len() > 1 {
        let gap = (eig.values[near[1]] - eig.values[near[0]]).abs();
        return Err(Error::BranchAmbiguity { index: n, gap });
    }
    let k = (0..eig.values.len())
        .max_by(|&a, &b| eig.vectors[(n, a)].abs().total_cmp(&eig.vectors[(n, b)].abs()))
        .unwrap();
    let mut psi = eig.vector(k);
    if psi[n] < 0.0 {
        psi.neg_mut();
    }
    let energy = eig.values[k];

    let h = 1e-6 * x0.abs().max(1.0);
    let dh = (family(x0 + h)?.to_dense() - family(x0 - h)?.to_dense()) / (2.0 * h);
    let d_energy = (psi.transpose() * &dh * &psi)[(0, 0)];
    let hpsi = &dh * &psi;
    let mut d_vector = DVector::zeros(psi.len());
    for j in 0..eig.values.len() {
        if j == k {
            continue;
        }
        let u = eig.vector(j);
        let c = u.dot(&hpsi) / (energy - eig.values[j]);
        d_vector += u * c;
    }
    let potential = v[n];
    let d_diag: Vec<f64> = (0..v.len()).map(|m| dh[(m, m)]).collect();
    let d_potential = d_diag[n];
    let d_max = d_diag.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let d_phi = (0..v.len())
        .flat_map(|i| (0..v.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| dh[(i, j)].abs())
        .fold(0.0, f64::max)
        / eps.max(f64::MIN_POSITIVE);
    let bound = eps * phi_sup / delta;
    let derivative_bound = eps / delta * d_phi.max(phi_sup * d_max / delta);
    let mut e_n = DVector::zeros(psi.len());
    e_n[n] = 1.0;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else if num == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(IsolatedBranch {
        energy,
        vector: psi.clone(),
        d_energy,
        d_vector: d_vector.clone(),
        potential,
        d_potential,
        delta,
        bound,
        derivative_bound,
        energy_slack: ratio((energy - potential).abs(), bound),
        vector_slack: ratio((psi - e_n).amax(), bound),
        d_energy_slack: ratio((d_energy - d_potential).abs(), derivative_bound),
        d_vector_slack: ratio(d_vector.amax(), derivative_bound),
    })
}

/// Step for the central difference of a matrix family at t0.
pub fn family_step(t0: f64) -> f64 {
    1e-6 * t0.abs().max(1.0)
}

/// lambda'(t0) = <A'(t0) psi, psi> for the `branch`-th smallest eigenvalue, with
/// A' from a central difference.
pub fn hellmann_feynman<F>(family: F, t0: f64, branch: usize) -> Result<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let a0 = family(t0);
    let eig = dense_eigen(&a0);
    if branch >= eig.values.len() {
        return Err(Error::InvalidInput(format!("branch {branch} out of range")));
    }
    let gap = eig.isolation(branch);
    if gap <= 1e-8 {
        return Err(Error::GapTooSmall { gap });
    }
    let h = family_step(t0);
    let da = (family(t0 + h) - family(t0 - h)) / (2.0 * h);
    let psi = eig.vector(branch);
    Ok((psi.transpose() * da * &psi)[(0, 0)])
}

/// lambda' = f'(t) |<psi, e_k>|^2 for A(t) = A0 + f(t) e_k e_k^T, given
/// f(t) and f'(t).
pub fn hellmann_feynman_rank_one(a0: &DMatrix<f64>, site: usize, f_value: f64, f_derivative: f64, branch: usize) -> Result<f64> {
    let mut a = a0.clone();
    a[(site, site)] += f_value;
    let eig = dense_eigen(&a);
    let gap = eig.isolation(branch);
    if gap <= 1e-8 {
        return Err(Error::GapTooSmall { gap });
    }
    let c = eig.vectors[(site, branch)];
    Ok(f_derivative * c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeBox;
    use crate::operator::build_h;
    use crate::sampling::{FrequencyVector, SamplingFunction};
    use proptest::prelude::*;

    fn maryland_box(eps: f64, x: f64, lo: i64, hi: i64) -> FiniteOperator {
        let f = SamplingFunction::tangent(1.0).unwrap();
        let om = FrequencyVector::unchecked(vec![0.381966]).unwrap();
        build_h(&f, &om, eps, x, &LatticeBox::interval(lo, hi).unwrap()).unwrap()
    }

    #[test]
    fn order_zero() {
        let h = maryland_box(0.01, 0.1, -4, 4);
        let s = rs_series(&h, &[0], 0).unwrap();
        assert_eq!(s.energies, vec![(std::f64::consts::PI * 0.1).tan()]);
        assert_eq!(s.vectors[0][4], 1.0);
        assert_eq!(s.vectors[0].sum(), 1.0);
    }

    #[test]
    fn two_by_two_second_order() {
        // V = diag(0, g), Phi = offdiag(1): lower eigenvalue
        // (g - sqrt(g^2 + 4 eps^2)) / 2 = -eps^2 / g + eps^4 / g^3 - ...
        let g = 0.7;
        let h = FiniteOperator::laplacian(LatticeBox::interval(0, 1).unwrap(), 1.0, vec![0.0, g]).unwrap();
        let s = rs_series(&h, &[0], 6).unwrap();
        assert!((s.energies[2] + 1.0 / g).abs() < 1e-14);
        assert!((s.energies[4] - 1.0 / g.powi(3)).abs() < 1e-13);
        // Brute-force Taylor fit of the exact branch.
        let exact = |e: f64| (g - (g * g + 4.0 * e * e).sqrt()) / 2.0;
        let e = 1e-3;
        let fitted = (exact(e) - exact(-e)) / 2.0;
        assert!(fitted.abs() < 1e-18);
        let c2 = (exact(e) + exact(-e)) / (2.0 * e * e);
        assert!((c2 - s.energies[2]).abs() < 1e-5);
    }

    #[test]
    fn series_matches_eigensolver_on_nine_sites() {
        let eps = 1e-2;
        let h = maryland_box(eps, 0.05, -4, 4);
        let s = rs_series(&h, &[0], 6).unwrap();
        let eig = h.eigen();
        let k = (0..9).max_by(|&a, &b| eig.vectors[(4, a)].abs().total_cmp(&eig.vectors[(4, b)].abs())).unwrap();
        let exact = eig.values[k];
        let sum = s.energy_sum(eps);
        assert!(((sum - exact) / exact).abs() < 1e-8, "{sum} vs {exact}");
        // Orthogonality to psi_0 and odd orders vanish for nearest-neighbour hopping.
        for j in 1..=6 {
            assert!(s.vectors[j][4].abs() < 1e-12);
            if j % 2 == 1 {
                assert_eq!(s.energies[j], 0.0);
            }
        }
    }

    #[test]
    fn degenerate_diagonal_rejected() {
        let h = FiniteOperator::laplacian(LatticeBox::interval(0, 2).unwrap(), 0.1, vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(rs_series(&h, &[0], 3), Err(Error::DegenerateDiagonal { .. })));
    }

    #[test]
    fn report_trivial_and_stable() {
        let h = FiniteOperator::laplacian(LatticeBox::interval(0, 2).unwrap(), 0.0, vec![0.0, 1.0, 2.0]).unwrap();
        let mut diag_only = h.clone();
        for i in 0..2 {
            diag_only.set_weight(i, i + 1, 0.0).unwrap();
        }
        let s = rs_series(&diag_only, &[1], 4).unwrap();
        let r = convergence_report(&s, 1.0, 0.0, 0.01).unwrap();
        assert!(r.radii.iter().all(|&x| x == 0.0));
        assert_eq!(r.bound_constant, 0.0);

        let mut consts = Vec::new();
        for eps in [1e-2, 1e-3] {
            let h = maryland_box(eps, 0.05, -4, 4);
            let delta = diagonal_separation(h.diagonal()).unwrap();
            let s = rs_series(&h, &[0], 8).unwrap();
            let r = convergence_report(&s, delta, 2.0, eps).unwrap();
            assert!(!r.diverging);
            consts.push(r.bound_constant);
        }
        // The coefficients do not depend on eps at all.
        assert!((consts[0] - consts[1]).abs() < 1e-12 * consts[0]);
    }

    #[test]
    fn near_degenerate_pair_diverges() {
        let eps = 1e-2;
        let h = FiniteOperator::laplacian(LatticeBox::interval(0, 1).unwrap(), eps, vec![0.0, 1e-5]).unwrap();
        let s = rs_series(&h, &[0], 6).unwrap();
        let r = convergence_report(&s, 1e-5, 1.0, eps).unwrap();
        assert!(r.diverging);
    }

    #[test]
    fn isolated_branch_zero_eps() {
        let b = isolated_branch(|x| Ok(maryland_box(0.0, x, -4, 4)), &[1], 0.05).unwrap();
        let f = |y: f64| (std::f64::consts::PI * y).tan();
        assert!((b.energy - f(0.05 + 0.381966)).abs() < 1e-14);
        let fp = std::f64::consts::PI / (std::f64::consts::PI * (0.05 + 0.381966)).cos().powi(2);
        assert!((b.d_energy - fp).abs() < 1e-5 * fp);
        assert_eq!(b.vector[5], 1.0);
    }

    #[test]
    fn isolated_branch_bounds_hold() {
        let b = isolated_branch(|x| Ok(maryland_box(1e-3, x, -4, 4)), &[0], 0.05).unwrap();
        assert!(b.bounds_hold(), "{b:?}");
        assert!(b.energy_slack > 0.0);
    }

    #[test]
    fn huge_site_does_not_affect_other_branch() {
        let with = |x: f64| {
            let mut h = maryland_box(1e-3, x, -4, 4);
            h.set_diagonal(8, 1e9);
            Ok(h)
        };
        let a = isolated_branch(with, &[0], 0.05).unwrap();
        let b = isolated_branch(|x| Ok(maryland_box(1e-3, x, -4, 4)), &[0], 0.05).unwrap();
        assert!((a.energy - b.energy).abs() < 1e-9);
    }

    #[test]
    fn hf_trivial_cases() {
        let d = hellmann_feynman(|t| DMatrix::from_diagonal(&DVector::from_vec(vec![t, 1.0])), -3.0, 0).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        // |<psi, e_k>|^2 = 0.25 with f' = 2.
        let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 3f64.sqrt(), 3f64.sqrt(), 2.0]);
        // Eigenvectors of [[0, s3],[s3, 2]] are (s3, -1)/2 and (1, s3)/2.
        let r = hellmann_feynman_rank_one(&a0, 1, 0.0, 2.0, 0).unwrap();
        assert!((r - 0.5).abs() < 1e-14);
        assert!(matches!(
            hellmann_feynman(|_| DMatrix::identity(2, 2), 0.0, 0),
            Err(Error::GapTooSmall { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn series_oracle(seed in 0u64..1000, x in -0.3f64..0.3) {
            let eps = 1e-2;
            let h = maryland_box(eps, x + seed as f64 * 1e-4, -3, 3);
            prop_assume!(diagonal_separation(h.diagonal()).map(|d| d > 0.1).unwrap_or(false));
            let s = rs_series(&h, &[0], 8).unwrap();
            let delta = diagonal_separation(h.diagonal()).unwrap();
            let r = convergence_report(&s, delta, 2.0, eps).unwrap();
            let growth = r.radii.iter().copied().fold(0.0, f64::max) * eps;
            let eig = h.eigen();
            let k = (0..7).max_by(|&a, &b| eig.vectors[(3, a)].abs().total_cmp(&eig.vectors[(3, b)].abs())).unwrap();
            let err = (s.energy_sum(eps) - eig.values[k]).abs();
            prop_assert!(err <= 2.0 * growth.powi(9) + 1e-13 * (1.0 + eig.values[k].abs()));
            for j in 1..=8 {
                prop_assert!(s.vectors[j][3].abs() <= 1e-12);
            }
            prop_assert_eq!(s.energies[1], 0.0);
        }
    }
}
