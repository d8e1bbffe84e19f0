//! Homotopy diagonalization, Jacobi separation, cluster decay, partial 2x2
//! diagonalization, projection derivatives and unique continuation.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{distance_to_set, l1_distance, LatticeBox, Site};
use crate::linalg::{dense_eigen, orthogonality_defect, Eigen, Tridiagonal};
use crate::operator::FiniteOperator;

/// Continuation schedule for the homotopy parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyOptions {
    /// Starting value; `None` picks a value that makes the diagonal dominant.
    pub t_max: Option<f64>,
    /// Number of schedule points including the final t = 0.
    pub steps: usize,
    /// Decades spanned by the geometric part of the schedule.
    pub decades: f64,
    /// Substeps used when a step loses track of a branch.
    pub refine: usize,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self { t_max: None, steps: 64, decades: 12.0, refine: 16 }
    }
}

/// Orthogonal frames U(x) whose column j is the eigenvector continued from
/// e_j at large t, for every x on a grid.
#[derive(Clone, Debug)]
pub struct DiagonalizerPath {
    pub lattice: LatticeBox,
    pub x_grid: Vec<f64>,
    pub frames: Vec<DMatrix<f64>>,
    /// Eigenvalue carried by each column, per grid point.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Schedule used at each x (t_max may differ between grid points).
    pub t_schedules: Vec<Vec<f64>>,
    /// Smallest consecutive eigenvalue gap met anywhere on the (x, t) grid.
    pub kappa: f64,
    /// Smallest overlap <psi_j(x_i), psi_j(x_{i+1})> over neighbouring grid points.
    pub min_x_overlap: f64,
}

impl DiagonalizerPath {
    pub fn max_orthogonality_defect(&self) -> f64 {
        self.frames.iter().map(orthogonality_defect).fold(0.0, f64::max)
    }

    /// max over x and the given columns of |psi_j - e_j|_inf.
    pub fn column_deviation(&self, columns: &[usize]) -> f64 {
        let mut worst = 0.0f64;
        for u in &self.frames {
            for &j in columns {
                for i in 0..u.nrows() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((u[(i, j)] - e).abs());
                }
            }
        }
        worst
    }
}

/// One continued frame at a fixed x.
#[derive(Clone, Debug)]
pub struct TrackedFrame {
    pub frame: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub schedule: Vec<f64>,
    pub kappa: f64,
}

/// Homotopy schedule from `t_max` geometrically down to `t_max * 10^-decades`, then 0.
pub fn schedule(t_max: f64, opts: &HomotopyOptions) -> Vec<f64> {
    let geo = opts.steps.saturating_sub(1).max(1);
    let mut s: Vec<f64> = (0..geo)
        .map(|k| t_max * 10f64.powf(-opts.decades * k as f64 / (geo.max(2) - 1) as f64))
        .collect();
    s.push(0.0);
    s
}

/// A t_max at which the t-term dominates hopping and the spread of the diagonal.
pub fn default_t_max(op0: &FiniteOperator, t_slopes: &[f64]) -> f64 {
    let spread = {
        let d = op0.diagonal();
        d.iter().copied().fold(f64::NEG_INFINITY, f64::max) - d.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let hop: f64 = op0.eps() * 2.0 * op0.lattice().dim() as f64;
    let mut s = t_slopes.to_vec();
    s.sort_by(f64::total_cmp);
    let min_gap = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let min_gap = if min_gap.is_finite() && min_gap > 0.0 { min_gap } else { 1.0 };
    4.0 * (hop + spread + 1.0) / min_gap * 10.0
}

fn collapse_threshold(values: &[f64]) -> f64 {
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    10.0 * 1e-13 * scale
}

fn greedy_match(prev: &DMatrix<f64>, next: &Eigen) -> (Vec<usize>, Vec<f64>) {
    let n = prev.ncols();
    let o = prev.transpose() * &next.vectors;
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            entries.push((i, j, o[(i, j)]));
        }
    }
    entries.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    let mut assign = vec![usize::MAX; n];
    let mut overlap = vec![0.0; n];
    let mut taken = vec![false; n];
    for (i, j, v) in entries {
        if assign[i] == usize::MAX && !taken[j] {
            assign[i] = j;
            overlap[i] = v;
            taken[j] = true;
        }
    }
    (assign, overlap)
}

fn apply_match(next: &Eigen, assign: &[usize], overlap: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = assign.len();
    let mut frame = DMatrix::zeros(n, n);
    let mut vals = vec![0.0; n];
    for c in 0..n {
        let mut v = next.vector(assign[c]);
        if overlap[c] < 0.0 {
            v.neg_mut();
        }
        frame.set_column(c, &v);
        vals[c] = next.values[assign[c]];
    }
    (frame, vals)
}

/// Continues the frame of `family(x, t)` from `t_max` down to 0 at one x.
pub fn track_frame<F>(family: &F, x: f64, t_max: f64, opts: &HomotopyOptions) -> Result<TrackedFrame>
where
    F: Fn(f64, f64) -> Result<FiniteOperator>,
{
    let sched = schedule(t_max, opts);
    let top = family(x, sched[0])?.eigen();
    let n = top.values.len();
    let mut kappa = top.min_gap();
    // Columns labelled by sites: the eigenvector with the largest component at j.
    let mut frame = DMatrix::zeros(n, n);
    let mut vals = vec![0.0; n];
    let mut used = vec![false; n];
    for j in 0..n {
        let k = (0..n)
            .filter(|&k| !used[k])
            .max_by(|&a, &b| top.vectors[(j, a)].abs().total_cmp(&top.vectors[(j, b)].abs()))
            .unwrap();
        if top.vectors[(j, k)].abs() < 0.5 {
            return Err(Error::SignFlip { x, t: sched[0], overlap: top.vectors[(j, k)].abs() });
        }
        used[k] = true;
        let mut v = top.vector(k);
        if v[j] < 0.0 {
            v.neg_mut();
        }
        frame.set_column(j, &v);
        vals[j] = top.values[k];
    }
    let mut t_prev = sched[0];
    for &t in &sched[1..] {
        let next = family(x, t)?.eigen();
        let gap = next.min_gap();
        if gap < collapse_threshold(&next.values) {
            return Err(Error::GapCollapse { x, t, gap });
        }
        kappa = kappa.min(gap);
        let (assign, overlap) = greedy_match(&frame, &next);
        if overlap.iter().all(|o| o.abs() >= 0.5) {
            (frame, vals) = apply_match(&next, &assign, &overlap);
        } else {
            // One refinement pass with linear substeps.
            for s in 1..=opts.refine {
                let ts = t_prev + (t - t_prev) * s as f64 / opts.refine as f64;
                let sub = family(x, ts)?.eigen();
                let gap = sub.min_gap();
                if gap < collapse_threshold(&sub.values) {
                    return Err(Error::GapCollapse { x, t: ts, gap });
                }
                kappa = kappa.min(gap);
                let (assign, overlap) = greedy_match(&frame, &sub);
                let worst = overlap.iter().map(|o| o.abs()).fold(1.0, f64::min);
                if worst < 0.5 {
                    return Err(Error::SignFlip { x, t: ts, overlap: worst });
                }
                (frame, vals) = apply_match(&sub, &assign, &overlap);
            }
        }
        t_prev = t;
    }
    Ok(TrackedFrame { frame, eigenvalues: vals, schedule: sched, kappa })
}

/// Runs `track_frame` over an x-grid in parallel. `t_max(x)` supplies the
/// starting homotopy value per grid point.
pub fn diagonalize_homotopy<F, T>(family: F, lattice: &LatticeBox, x_grid: &[f64], t_max: T, opts: &HomotopyOptions) -> Result<DiagonalizerPath>
where
    F: Fn(f64, f64) -> Result<FiniteOperator> + Sync,
    T: Fn(f64) -> Result<f64> + Sync,
{
    let tracked: Vec<TrackedFrame> = x_grid
        .par_iter()
        .map(|&x| {
            let tm = match opts.t_max {
                Some(v) => v,
                None => t_max(x)?,
            };
            track_frame(&family, x, tm, opts)
        })
        .collect::<Result<_>>()?;
    let kappa = tracked.iter().map(|t| t.kappa).fold(f64::INFINITY, f64::min);
    let mut min_x_overlap = 1.0f64;
    for w in tracked.windows(2) {
        for j in 0..w[0].frame.ncols() {
            min_x_overlap = min_x_overlap.min(w[0].frame.column(j).dot(&w[1].frame.column(j)));
        }
    }
    let mut frames = Vec::with_capacity(tracked.len());
    let mut eigenvalues = Vec::with_capacity(tracked.len());
    let mut t_schedules = Vec::with_capacity(tracked.len());
    for t in tracked {
        frames.push(t.frame);
        eigenvalues.push(t.eigenvalues);
        t_schedules.push(t.schedule);
    }
    Ok(DiagonalizerPath {
        lattice: lattice.clone(),
        x_grid: x_grid.to_vec(),
        frames,
        eigenvalues,
        t_schedules,
        kappa,
        min_x_overlap,
    })
}

/// Smallest eigenvalue gap of a Jacobi matrix whose diagonal lies in
/// `[a, a + length]` (endpoints exempt) and whose couplings are at least
/// `coupling_floor` in magnitude.
pub fn jacobi_separation(j: &DMatrix<f64>, window: (f64, f64), coupling_floor: f64) -> Result<f64> {
    let n = j.nrows();
    let (a, length) = window;
    for r in 0..n {
        for c in 0..n {
            if r.abs_diff(c) > 1 && j[(r, c)] != 0.0 {
                return Err(Error::HypothesisViolation(format!("J[{r},{c}] = {} is outside the tridiagonal band", j[(r, c)])));
            }
            if r.abs_diff(c) == 1 && j[(r, c)] != j[(c, r)] {
                return Err(Error::HypothesisViolation(format!("J is not symmetric at ({r},{c})")));
            }
        }
    }
    for i in 0..n.saturating_sub(1) {
        if j[(i, i + 1)].abs() < coupling_floor {
            return Err(Error::HypothesisViolation(format!(
                "|J[{i},{}]| = {:e} < {coupling_floor:e}",
                i + 1,
                j[(i, i + 1)].abs()
            )));
        }
    }
    for i in 1..n.saturating_sub(1) {
        let v = j[(i, i)];
        if v < a || v > a + length {
            return Err(Error::HypothesisViolation(format!("J[{i},{i}] = {v} outside [{a}, {}]", a + length)));
        }
    }
    let t = Tridiagonal::new((0..n).map(|i| j[(i, i)]).collect(), (0..n.saturating_sub(1)).map(|i| j[(i, i + 1)]).collect());
    let vals = t.eigenvalues();
    Ok(vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min))
}

/// Disjoint site clusters (box indices) with the separation of their potentials.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<usize>>,
    /// min |V_m - V_n| over m, n in different clusters.
    pub eta: f64,
    /// Spectral gap of a tracked eigenvalue, when one is being followed.
    pub delta: Option<f64>,
    /// Energy bound (second-largest potential value).
    pub w: f64,
}

impl ClusterPartition {
    /// Validates disjointness and coverage and measures eta.
    pub fn new(h: &FiniteOperator, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let n = h.dim();
        let mut owner = vec![usize::MAX; n];
        for (c, members) in clusters.iter().enumerate() {
            for &i in members {
                if i >= n || owner[i] != usize::MAX {
                    return Err(Error::HypothesisViolation(format!("index {i} is repeated or outside the box")));
                }
                owner[i] = c;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(Error::HypothesisViolation("clusters do not cover the box".into()));
        }
        let v = h.diagonal();
        let mut eta = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                if owner[i] != owner[j] {
                    eta = eta.min((v[i] - v[j]).abs());
                }
            }
        }
        if eta <= 0.0 {
            return Err(Error::HypothesisViolation("clusters are not separated".into()));
        }
        let w = crate::operator::second_largest(&v.iter().map(|x| x.abs()).collect::<Vec<_>>()).unwrap_or(0.0);
        Ok(Self { clusters, eta, delta: None, w })
    }

    fn owner(&self, n: usize) -> Vec<usize> {
        let mut owner = vec![0; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                owner[i] = c;
            }
        }
        owner
    }

    fn cluster_sites(&self, lattice: &LatticeBox, c: usize) -> Vec<Site> {
        self.clusters[c].iter().map(|&i| lattice.site(i)).collect()
    }
}

/// Fitted constants of the cluster decay bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDecayReport {
    /// Cluster assigned to each eigenvector (sorted eigenvalue order).
    pub assignments: Vec<usize>,
    /// Smallest C with |psi(n)| <= C (eta/eps)^{-dist(n, A_j)}, i.e. the
    /// separation measured in units of the hopping.
    pub eta_constant: f64,
    /// Smallest C with |psi(n)| <= C eps^{dist(n, A_j)} (infinite when eps = 0 and some tail is nonzero).
    pub eps_constant: f64,
}

pub fn cluster_decay_check(h: &FiniteOperator, partition: &ClusterPartition) -> Result<ClusterDecayReport> {
    let eig = h.eigen();
    let n = h.dim();
    let lattice = h.lattice();
    let sites: Vec<Vec<Site>> = (0..partition.clusters.len()).map(|c| partition.cluster_sites(lattice, c)).collect();
    let mut assignments = Vec::with_capacity(n);
    let mut eta_c = 0.0f64;
    let mut eps_c = 0.0f64;
    for k in 0..n {
        let v = eig.vector(k);
        let masses: Vec<f64> = partition.clusters.iter().map(|m| m.iter().map(|&i| v[i] * v[i]).sum()).collect();
        let (best, mass) = masses
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, m)| (c, *m))
            .unwrap();
        if mass < 0.5 {
            return Err(Error::AssignmentAmbiguity { index: k, mass });
        }
        assignments.push(best);
        for i in 0..n {
            let dist = distance_to_set(&lattice.site(i), &sites[best]) as i32;
            let a = v[i].abs();
            let e = h.eps();
            let scaled = if dist == 0 || a == 0.0 { a } else if e > 0.0 { a * (partition.eta / e).powi(dist) } else { f64::INFINITY };
            eta_c = eta_c.max(scaled);
            let c = if dist == 0 { a } else if e > 0.0 { a / e.powi(dist) } else if a == 0.0 { 0.0 } else { f64::INFINITY };
            eps_c = eps_c.max(c);
        }
    }
    Ok(ClusterDecayReport { assignments, eta_constant: eta_c, eps_constant: eps_c })
}

/// Eigenvalue shifts caused by deleting the inter-cluster edges.
#[derive(Clone, Debug, PartialEq)]
pub struct DropReport {
    pub max_shift: f64,
    /// max_shift * eta / eps^2.
    pub constant: f64,
    pub shifts: Vec<f64>,
}

pub fn partial_2x2_drop(h: &FiniteOperator, partition: &ClusterPartition) -> Result<(FiniteOperator, DropReport)> {
    let eps = h.eps();
    if eps >= partition.eta {
        return Err(Error::HypothesisViolation(format!("eps = {eps} is not below eta = {}", partition.eta)));
    }
    let owner = partition.owner(h.dim());
    let mut dropped = h.clone();
    let cross: Vec<(usize, usize)> = h.edges().filter(|((i, j), _)| owner[*i] != owner[*j]).map(|(e, _)| e).collect();
    for (i, j) in cross {
        dropped.set_weight(i, j, 0.0)?;
    }
    let before = h.eigenvalues();
    let after = dropped.eigenvalues();
    let shifts: Vec<f64> = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).collect();
    let max_shift = shifts.iter().copied().fold(0.0, f64::max);
    let constant = if eps > 0.0 { max_shift * partition.eta / (eps * eps) } else { 0.0 };
    Ok((dropped, DropReport { max_shift, constant, shifts }))
}

/// dP/dt of the spectral projection of a rank-one family and the fitted constant.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionDerivativeReport {
    pub dp: DMatrix<f64>,
    pub f_prime: f64,
    pub delta: f64,
    /// Smallest C with |dP_mn| <= C |f'| / delta * eta^{-dist(A_r,k) - dist(k,A_s)}.
    pub constant: f64,
}

/// Projection derivative for A(t) = H0 + f(t) e_k e_k^T at branch `branch`
/// (sorted index) by central differences.
pub fn projection_derivative_bound<F>(
    h0: &FiniteOperator,
    site: usize,
    f: F,
    t0: f64,
    branch: usize,
    partition: &ClusterPartition,
) -> Result<ProjectionDerivativeReport>
where
    F: Fn(f64) -> f64,
{
    let base = h0.to_dense();
    let at = |t: f64| {
        let mut a = base.clone();
        a[(site, site)] += f(t);
        a
    };
    let eig = dense_eigen(&at(t0));
    let delta = eig.isolation(branch);
    if delta <= 1e-8 {
        return Err(Error::GapTooSmall { gap: delta });
    }
    let h = crate::perturbation::family_step(t0);
    let proj = |t: f64| {
        let v: DVector<f64> = dense_eigen(&at(t)).vector(branch);
        &v * v.transpose()
    };
    let dp = (proj(t0 + h) - proj(t0 - h)) / (2.0 * h);
    let f_prime = (f(t0 + h) - f(t0 - h)) / (2.0 * h);
    let lattice = h0.lattice();
    let owner = partition.owner(h0.dim());
    let k_site = lattice.site(site);
    let dist_to_k: Vec<i32> = (0..partition.clusters.len())
        .map(|c| partition.cluster_sites(lattice, c).iter().map(|s| l1_distance(s, &k_site)).min().unwrap_or(0) as i32)
        .collect();
    let mut constant = 0.0f64;
    if f_prime != 0.0 {
        for m in 0..h0.dim() {
            for n in 0..h0.dim() {
                let pow = dist_to_k[owner[m]] + dist_to_k[owner[n]];
                constant = constant.max(dp[(m, n)].abs() * delta * partition.eta.powi(pow) / f_prime.abs());
            }
        }
    }
    Ok(ProjectionDerivativeReport { dp, f_prime, delta, constant })
}

/// Step counts of the recursive reachability rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachabilityResult {
    pub reachable: BTreeMap<Site, usize>,
    pub max_steps: usize,
    pub certified: bool,
    pub unreachable: Vec<Site>,
}

fn closed_neighbourhood(n: &[i64]) -> Vec<Site> {
    let mut out = vec![n.to_vec()];
    for a in 0..n.len() {
        for s in [-1, 1] {
            let mut m = n.to_vec();
            m[a] += s;
            out.push(m);
        }
    }
    out
}

/// Fixed-point iteration of the reachability rule: m in A is reachable at step
/// k when some neighbour n in A u B has its punctured neighbourhood (without m)
/// reachable within k - 1 steps. B is reachable at step 0.
pub fn ducp_reach(a: &[Site], b: &[Site]) -> ReachabilityResult {
    let mut reach: BTreeMap<Site, usize> = b.iter().map(|s| (s.clone(), 0)).collect();
    let a_set: BTreeSet<Site> = a.iter().cloned().collect();
    let mut step = 0;
    loop {
        step += 1;
        let mut added = Vec::new();
        for m in &a_set {
            if reach.contains_key(m) {
                continue;
            }
            let ok = closed_neighbourhood(m).into_iter().skip(1).any(|n| {
                (a_set.contains(&n) || reach.contains_key(&n))
                    && closed_neighbourhood(&n).iter().filter(|q| *q != m).all(|q| reach.get(q).is_some_and(|&k| k < step))
            });
            if ok {
                added.push(m.clone());
            }
        }
        if added.is_empty() {
            break;
        }
        for m in added {
            reach.insert(m, step);
        }
    }
    let unreachable: Vec<Site> = a_set.iter().filter(|m| !reach.contains_key(*m)).cloned().collect();
    let max_steps = a_set.iter().filter_map(|m| reach.get(m)).copied().max().unwrap_or(0);
    let certified = !a_set.is_empty() && unreachable.is_empty();
    ReachabilityResult { reachable: reach, max_steps, certified, unreachable }
}

/// Guaranteed and observed size of an eigenfunction on the continuation set.
#[derive(Clone, Debug, PartialEq)]
pub struct UcpBound {
    /// Site of B where |psi| is largest.
    pub site: Site,
    pub bound: f64,
    pub observed: f64,
    pub steps: usize,
}

/// |psi| on B is at least |A u B|^{-1} (2^d eps + |E| + W)^{-N} eps^N, which is
/// the unit-hopping bound when eps = 1.
pub fn unique_continuation_lower_bound(
    h: &FiniteOperator,
    psi: &DVector<f64>,
    energy: f64,
    a: &[Site],
    b: &[Site],
    reach: &ReachabilityResult,
    w: f64,
) -> Result<UcpBound> {
    if !reach.certified {
        return Err(Error::HypothesisViolation("A is not reachable from B".into()));
    }
    let lattice = h.lattice();
    let union: BTreeSet<Site> = a.iter().chain(b).cloned().collect();
    let mut norm2 = 0.0;
    for s in &union {
        let i = lattice
            .index_of(s)
            .ok_or_else(|| Error::InvalidInput(format!("site {s:?} is not in {lattice}")))?;
        norm2 += psi[i] * psi[i];
    }
    let norm = norm2.sqrt();
    if norm < 1.0 - 1e-12 {
        return Err(Error::NormTooSmall { norm });
    }
    let (site, observed) = b
        .iter()
        .map(|s| (s.clone(), psi[lattice.index_of(s).unwrap()].abs()))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or_else(|| Error::InvalidInput("B is empty".into()))?;
    let eps = h.eps();
    let d = lattice.dim() as i32;
    let n = reach.max_steps as i32;
    let bound = (2f64.powi(d) * eps + energy.abs() + w).powi(-n) * eps.powi(n) / union.len() as f64;
    if observed < bound {
        return Err(Error::HypothesisViolation(format!("observed {observed:e} below the continuation bound {bound:e}")));
    }
    Ok(UcpBound { site, bound, observed, steps: reach.max_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(eps: f64, diag: Vec<f64>) -> FiniteOperator {
        let n = diag.len() as i64;
        FiniteOperator::laplacian(LatticeBox::interval(0, n - 1).unwrap(), eps, diag).unwrap()
    }

    #[test]
    fn zero_hopping_gives_identity_frames() {
        let fam = |x: f64, t: f64| Ok(chain(0.0, vec![x + 0.1 * t, 1.0 + 0.5 * t, 2.0 + 0.9 * t]));
        let bx = LatticeBox::interval(0, 2).unwrap();
        let path = diagonalize_homotopy(fam, &bx, &[0.0, 0.3], |_| Ok(100.0), &HomotopyOptions::default()).unwrap();
        for u in &path.frames {
            assert_eq!(u, &DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn two_site_branch_matches_closed_form() {
        // d = (0, 0.3): diagonal f_t(x) and f_t(x + 0.3) with f = tan.
        let eps = 1e-3;
        let f = |y: f64, t: f64| (std::f64::consts::PI * y).tan() + t * (y + 0.5);
        let fam = move |x: f64, t: f64| Ok(chain(eps, vec![f(x, t), f(x + 0.3, t)]));
        let grid: Vec<f64> = (0..9).map(|i| -0.2 + 0.05 * i as f64).collect();
        let bx = LatticeBox::interval(0, 1).unwrap();
        let path = diagonalize_homotopy(fam, &bx, &grid, |_| Ok(1e3), &HomotopyOptions::default()).unwrap();
        for (k, &x) in grid.iter().enumerate() {
            let (a, b) = (f(x, 0.0), f(x + 0.3, 0.0));
            // Lower eigenvector of [[a, e],[e, b]] with a < b: (1, -theta) normalised, theta = e / (b - a) approx.
            let theta = ((b - a) - ((b - a).powi(2) + 4.0 * eps * eps).sqrt()) / (2.0 * eps);
            let v = DVector::from_vec(vec![1.0, theta]).normalize();
            let col = path.frames[k].column(0);
            assert!((col[0] - v[0]).abs() < 1e-12 && (col[1] - v[1]).abs() < 1e-12);
            assert!((col - DVector::from_vec(vec![1.0, 0.0])).amax() <= 2.0 * eps / (b - a));
        }
        assert!(path.max_orthogonality_defect() < 1e-12);
        assert!(path.min_x_overlap > 0.9);
    }

    #[test]
    fn free_jacobi_gaps() {
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((jacobi_separation(&two, (0.0, 0.0), 1.0).unwrap() - 2.0).abs() < 1e-14);
        let n = 6;
        let j = Tridiagonal::new(vec![0.0; n], vec![1.0; n - 1]).to_dense();
        let mut ev: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64 * std::f64::consts::PI / 7.0).cos()).collect();
        ev.sort_by(f64::total_cmp);
        let oracle = ev.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        assert!((jacobi_separation(&j, (0.0, 0.0), 1.0).unwrap() - oracle).abs() < 1e-13);
        let mut bad = j.clone();
        bad[(0, 3)] = 0.1;
        bad[(3, 0)] = 0.1;
        assert!(matches!(jacobi_separation(&bad, (0.0, 0.0), 1.0), Err(Error::HypothesisViolation(_))));
        assert!(jacobi_separation(&j, (0.0, 0.0), 2.0).is_err());
    }

    #[test]
    fn whole_box_cluster() {
        let h = chain(0.1, vec![0.0, 0.3, 0.7]);
        let p = ClusterPartition::new(&h, vec![vec![0, 1], vec![2]]).unwrap();
        assert!((p.eta - 0.4).abs() < 1e-15);
        let single = ClusterPartition { clusters: vec![vec![0, 1, 2]], eta: 1.0, delta: None, w: 0.0 };
        let r = cluster_decay_check(&h, &single).unwrap();
        assert!(r.eta_constant <= 1.0);
    }

    #[test]
    fn two_site_off_mass() {
        let (eps, eta) = (1e-3, 0.5);
        let h = chain(eps, vec![0.0, eta]);
        let p = ClusterPartition::new(&h, vec![vec![0], vec![1]]).unwrap();
        let r = cluster_decay_check(&h, &p).unwrap();
        assert_eq!(r.assignments, vec![0, 1]);
        // |psi(other)| = eps / eta to leading order, so both constants are set
        // by one hop at ratio eps / eta.
        assert!((r.eta_constant - 1.0).abs() < 1e-5);
        assert!((r.eps_constant - 1.0 / eta).abs() < 1e-4);
    }

    #[test]
    fn ambiguous_assignment() {
        // Free 4-chain eigenvectors put at most 0.4 sin^2(2pi/5) < 0.5 on a site.
        let h = chain(1.0, vec![0.0, 1e-6, 2e-6, 3e-6]);
        let p = ClusterPartition::new(&h, vec![vec![0], vec![1], vec![2], vec![3]]).unwrap();
        assert!(matches!(cluster_decay_check(&h, &p), Err(Error::AssignmentAmbiguity { .. })));
    }

    #[test]
    fn drop_two_by_two() {
        let (eps, eta) = (1e-3, 0.5);
        let h = chain(eps, vec![0.0, eta]);
        let p = ClusterPartition::new(&h, vec![vec![0], vec![1]]).unwrap();
        let (_, r) = partial_2x2_drop(&h, &p).unwrap();
        let exact = (eta - (eta * eta + 4.0 * eps * eps).sqrt()) / 2.0;
        assert!((r.max_shift - exact.abs()).abs() < 1e-15);
        assert!((r.constant - 1.0).abs() < 1e-4);
        let p1 = ClusterPartition { clusters: vec![vec![0, 1]], eta, delta: None, w: 0.0 };
        assert_eq!(partial_2x2_drop(&h, &p1).unwrap().1.max_shift, 0.0);
        let big = chain(0.9, vec![0.0, eta]);
        assert!(partial_2x2_drop(&big, &p).is_err());
    }

    #[test]
    fn projection_derivative_two_by_two() {
        let eps = 0.1;
        let h = chain(eps, vec![0.0, 0.0]);
        let p = ClusterPartition { clusters: vec![vec![0], vec![1]], eta: 1.0, delta: None, w: 0.0 };
        let f = |t: f64| t;
        let t0 = 1.0;
        let r = projection_derivative_bound(&h, 1, f, t0, 0, &p).unwrap();
        // Lower projection of [[0, e],[e, t]]: P00 = (1 + t/r)/2 with r = sqrt(t^2 + 4e^2).
        let rr = (t0 * t0 + 4.0 * eps * eps).sqrt();
        let dp00 = 0.5 * (1.0 / rr - t0 * t0 / rr.powi(3));
        assert!((r.dp[(0, 0)] - dp00).abs() < 1e-8);
        assert!((r.f_prime - 1.0).abs() < 1e-9);
        let zero = projection_derivative_bound(&h, 1, |_| 0.5, t0, 0, &p).unwrap();
        assert!(zero.dp.amax() < 1e-9 && zero.constant == 0.0);
    }

    #[test]
    fn reach_one_d() {
        let a: Vec<Site> = (0..5).map(|i| vec![i]).collect();
        let b = vec![vec![-2], vec![-1]];
        let r = ducp_reach(&a, &b);
        assert!(r.certified);
        for i in 0..5 {
            assert_eq!(r.reachable[&vec![i]], i as usize + 1);
        }
        assert!(!ducp_reach(&a, &[]).certified);
    }

    #[test]
    fn boundary_layer_is_ducp() {
        let a: Vec<Site> = LatticeBox::new(vec![0, 0], vec![2, 3]).unwrap().sites().collect();
        let b: Vec<Site> = LatticeBox::new(vec![-2, -2], vec![4, 5])
            .unwrap()
            .sites()
            .filter(|s| !a.contains(s) && distance_to_set(s, &a) <= 2)
            .collect();
        assert!(ducp_reach(&a, &b).certified);
    }

    #[test]
    fn psi_on_b_dominates_bound() {
        let h = chain(1.0, vec![0.0; 4]);
        let mut psi = DVector::zeros(4);
        psi[0] = 1.0 / 2f64.sqrt();
        psi[1] = 1.0 / 2f64.sqrt();
        let a = vec![vec![2], vec![3]];
        let b = vec![vec![0], vec![1]];
        let reach = ducp_reach(&a, &b);
        let u = unique_continuation_lower_bound(&h, &psi, 0.0, &a, &b, &reach, 1.0).unwrap();
        assert!(u.observed >= 0.5f64.sqrt() - 1e-15 && u.observed > u.bound);
        let small = psi.clone() * 0.5;
        assert!(matches!(
            unique_continuation_lower_bound(&h, &small, 0.0, &a, &b, &reach, 1.0),
            Err(Error::NormTooSmall { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn continuation_bound_never_violated(seed in 0u64..10_000, w in 0.5f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<i64> = (-2..=6).collect();
            let diag: Vec<f64> = sites.iter().map(|_| rng.random_range(-w..=w)).collect();
            let h = FiniteOperator::laplacian(LatticeBox::interval(-2, 6).unwrap(), 1.0, diag).unwrap();
            let a: Vec<Site> = (0..5).map(|i| vec![i]).collect();
            let b = vec![vec![-2], vec![-1], vec![5], vec![6]];
            let reach = ducp_reach(&a, &b);
            let eig = h.eigen();
            for k in 0..9 {
                prop_assert!(unique_continuation_lower_bound(&h, &eig.vector(k), eig.values[k], &a, &b, &reach, w).is_ok());
            }
        }

        #[test]
        fn drop_shifts_are_second_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = 1e-3;
            let mut diag: Vec<f64> = (0..6).map(|i| if i < 3 { rng.random_range(0.0..0.1) } else { 1.0 + rng.random_range(0.0..0.1) }).collect();
            diag.swap(2, 4);
            let h = chain(eps, diag);
            let owner: Vec<usize> = h.diagonal().iter().map(|v| if *v < 0.5 { 0 } else { 1 }).collect();
            let clusters = vec![(0..6).filter(|&i| owner[i] == 0).collect(), (0..6).filter(|&i| owner[i] == 1).collect()];
            let p = ClusterPartition::new(&h, clusters).unwrap();
            let (_, r) = partial_2x2_drop(&h, &p).unwrap();
            prop_assert!(r.max_shift <= 4.0 * eps * eps / p.eta);
        }
    }
}
