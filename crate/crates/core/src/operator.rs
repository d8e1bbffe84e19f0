//! Finite-volume operators H(x) = eps * Laplacian + f(x + omega.n), their
//! edge-interpolated block variants, hopping families and coupling graphs.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{l1_distance, sub, LatticeBox, Site};
use crate::linalg::{dense_eigen, Eigen, Tridiagonal};
use crate::movingblock::{BlockFrame, Layer};
use crate::sampling::{FrequencyVector, SamplingFunction};

/// Symmetric operator on a lattice box: diagonal potential plus hopping
/// `eps * weight` on listed edges.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteOperator {
    lattice: LatticeBox,
    eps: f64,
    diagonal: Vec<f64>,
    /// (i, j) with i < j -> weight in [-1, 1].
    edges: BTreeMap<(usize, usize), f64>,
}

impl FiniteOperator {
    /// Nearest-neighbour Laplacian hopping with weight 1.
    pub fn laplacian(lattice: LatticeBox, eps: f64, diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.len() != lattice.len() {
            return Err(Error::InvalidInput(format!(
                "diagonal has {} entries for a box of {} sites",
                diagonal.len(),
                lattice.len()
            )));
        }
        let edges = lattice.bonds().into_iter().map(|e| (e, 1.0)).collect();
        Ok(Self { lattice, eps, diagonal, edges })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Edges as ((i, j), weight) with i < j.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.edges.iter().map(|(k, v)| (*k, *v))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.get(&key).copied().unwrap_or(0.0)
    }

    /// Sets the weight of an edge; weights outside [-1, 1] are rejected.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if i == j || i >= self.dim() || j >= self.dim() {
            return Err(Error::InvalidInput(format!("bad edge ({i}, {j})")));
        }
        if !(-1.0..=1.0).contains(&w) {
            return Err(Error::InvalidInput(format!("edge weight {w} outside [-1, 1]")));
        }
        let key = if i < j { (i, j) } else { (j, i) };
        if w == 0.0 {
            self.edges.remove(&key);
        } else {
            self.edges.insert(key, w);
        }
        Ok(())
    }

    pub fn set_diagonal(&mut self, i: usize, v: f64) {
        self.diagonal[i] = v;
    }

    /// Matrix entry including the eps factor.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diagonal[i]
        } else {
            self.eps * self.weight(i, j)
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diagonal[i];
        }
        for (&(i, j), &w) in &self.edges {
            m[(i, j)] = self.eps * w;
            m[(j, i)] = self.eps * w;
        }
        m
    }

    /// The potential-free part Phi (edge weights without eps).
    pub fn hopping_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), &w) in &self.edges {
            m[(i, j)] = w;
            m[(j, i)] = w;
        }
        m
    }

    /// True when the operator is a 1-d chain with nearest-neighbour edges only.
    pub fn is_chain(&self) -> bool {
        self.lattice.dim() == 1 && self.edges.keys().all(|&(i, j)| j == i + 1)
    }

    /// Tridiagonal form of a chain.
    pub fn tridiagonal(&self) -> Option<Tridiagonal> {
        if !self.is_chain() {
            return None;
        }
        let n = self.dim();
        let off = (0..n.saturating_sub(1)).map(|i| self.eps * self.weight(i, i + 1)).collect();
        Some(Tridiagonal::new(self.diagonal.clone(), off))
    }

    /// Eigendecomposition; chains use the componentwise-accurate tridiagonal solver.
    pub fn eigen(&self) -> Eigen {
        match self.tridiagonal() {
            Some(t) => t.eigen(),
            None => dense_eigen(&self.to_dense()),
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.tridiagonal() {
            Some(t) => t.eigenvalues(),
            None => crate::linalg::dense_eigenvalues(&self.to_dense()),
        }
    }

    /// Restriction to a sub-box.
    pub fn restrict(&self, sub_box: &LatticeBox) -> Result<FiniteOperator> {
        if !sub_box.is_subset_of(&self.lattice) {
            return Err(Error::InvalidBox(format!("{sub_box} is not inside {}", self.lattice)));
        }
        let map: Vec<usize> = sub_box.sites().map(|s| self.lattice.index_of(&s).unwrap()).collect();
        let diagonal = map.iter().map(|&i| self.diagonal[i]).collect();
        let mut edges = BTreeMap::new();
        for (a, &i) in map.iter().enumerate() {
            for (b, &j) in map.iter().enumerate().skip(a + 1) {
                let w = self.weight(i, j);
                if w != 0.0 {
                    edges.insert((a, b), w);
                }
            }
        }
        Ok(FiniteOperator { lattice: sub_box.clone(), eps: self.eps, diagonal, edges })
    }

    /// Writes `# site <index> <coords>` header lines followed by `i j value`
    /// triplets (i <= j) for every nonzero entry.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# dim {} box {}", self.lattice.dim(), self.lattice)?;
        for (i, s) in self.lattice.sites().enumerate() {
            let coords: Vec<String> = s.iter().map(|c| c.to_string()).collect();
            writeln!(w, "# site {i} {}", coords.join(" "))?;
        }
        let n = self.dim();
        for i in 0..n {
            if self.diagonal[i] != 0.0 {
                writeln!(w, "{i} {i} {:e}", self.diagonal[i])?;
            }
            for j in i + 1..n {
                let v = self.entry(i, j);
                if v != 0.0 {
                    writeln!(w, "{i} {j} {v:e}")?;
                }
            }
        }
        Ok(())
    }
}

fn potential(f: &SamplingFunction, omega: &FrequencyVector, x: f64, lattice: &LatticeBox) -> Result<Vec<f64>> {
    if omega.dim() != lattice.dim() {
        return Err(Error::InvalidInput(format!(
            "frequency dimension {} does not match box dimension {}",
            omega.dim(),
            lattice.dim()
        )));
    }
    lattice
        .sites()
        .map(|n| {
            let phase = omega.phase(x, &n);
            f.eval(phase).map_err(|e| match e {
                Error::PoleProximity { phase, .. } => Error::PoleProximity { phase, site: Some(n.clone()) },
                other => other,
            })
        })
        .collect()
}

/// H(x) on `lattice`: diagonal f(x + omega.n), hopping eps on nearest neighbours.
pub fn build_h(f: &SamplingFunction, omega: &FrequencyVector, eps: f64, x: f64, lattice: &LatticeBox) -> Result<FiniteOperator> {
    FiniteOperator::laplacian(lattice.clone(), eps, potential(f, omega, x, lattice)?)
}

/// The moving-block operator H'_{R'}(x): diagonal at the true x, edges touching
/// R_- weighted s = (x - x0)/omega_1, edges touching R_+ weighted 1 - s.
pub fn interpolated_block(
    f: &SamplingFunction,
    omega: &FrequencyVector,
    eps: f64,
    x: f64,
    x0: f64,
    frame: &BlockFrame,
) -> Result<FiniteOperator> {
    frame.check_consistent()?;
    let w1 = omega.omega[0];
    let s = (x - x0) / w1;
    if !(-1e-12..=1.0 + 1e-12).contains(&s) {
        return Err(Error::InvalidInput(format!("x = {x} is outside [x0, x0 + omega_1]")));
    }
    let s = s.clamp(0.0, 1.0);
    let lattice = frame.r_prime().clone();
    let mut op = build_h(f, omega, eps, x, &lattice)?;
    let bonds: Vec<(usize, usize)> = op.edges.keys().copied().collect();
    for (i, j) in bonds {
        let w = edge_interpolation_weight(frame.layer_of_index(i), frame.layer_of_index(j), s);
        op.set_weight(i, j, w)?;
    }
    Ok(op)
}

/// Weight of an R' edge between two layers at interpolation parameter s.
pub fn edge_interpolation_weight(a: Layer, b: Layer, s: f64) -> f64 {
    match (a, b) {
        (Layer::Minus, _) | (_, Layer::Minus) => s,
        (Layer::Plus, _) | (_, Layer::Plus) => 1.0 - s,
        _ => 1.0,
    }
}

/// Second-largest |f(x + omega.n)| over the box. Sites next to a pole count as
/// the (single) infinite value.
pub fn largest_entry_bound(f: &SamplingFunction, omega: &FrequencyVector, x: f64, lattice: &LatticeBox) -> Result<f64> {
    let mut vals: Vec<f64> = Vec::with_capacity(lattice.len());
    for n in lattice.sites() {
        match f.eval(omega.phase(x, &n)) {
            Ok(v) => vals.push(v.abs()),
            Err(Error::PoleProximity { .. }) => vals.push(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    second_largest(&vals)
        .ok_or_else(|| Error::InvalidInput("largest_entry_bound needs at least two sites".into()))
}

/// Second-largest element of a list.
pub fn second_largest(vals: &[f64]) -> Option<f64> {
    if vals.len() < 2 {
        return None;
    }
    let mut v = vals.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Some(v[1])
}

/// 1-periodic coefficient function of a hopping matrix.
pub type PeriodicFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One quasiperiodic hopping matrix: entries Phi_{m,n}(x) = phi_{m-n}(x + omega.n).
#[derive(Clone)]
pub struct HoppingLevel {
    pub terms: Vec<(Site, PeriodicFn)>,
}

impl std::fmt::Debug for HoppingLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let offsets: Vec<&Site> = self.terms.iter().map(|t| &t.0).collect();
        f.debug_struct("HoppingLevel").field("offsets", &offsets).finish()
    }
}

impl HoppingLevel {
    /// Largest l1 length of an offset.
    pub fn range(&self) -> i64 {
        self.terms.iter().map(|(m, _)| m.iter().map(|c| c.abs()).sum::<i64>()).max().unwrap_or(0)
    }

    pub fn entry(&self, omega: &FrequencyVector, x: f64, m: &[i64], n: &[i64]) -> f64 {
        let diff = sub(m, n);
        self.terms.iter().filter(|(k, _)| *k == diff).map(|(_, phi)| phi(omega.phase(x, n))).sum()
    }
}

/// Hopping family Phi^1, Phi^2, ... with level j of range at most j * R.
#[derive(Clone, Debug)]
pub struct HoppingFamily {
    pub range_step: i64,
    pub levels: Vec<HoppingLevel>,
}

impl HoppingFamily {
    pub fn new(range_step: i64, levels: Vec<HoppingLevel>) -> Result<Self> {
        for (j, l) in levels.iter().enumerate() {
            if l.range() > (j as i64 + 1) * range_step {
                return Err(Error::InvalidInput(format!(
                    "level {} has range {} > {}",
                    j + 1,
                    l.range(),
                    (j as i64 + 1) * range_step
                )));
            }
            for (k, _) in &l.terms {
                let neg: Site = k.iter().map(|c| -c).collect();
                if !l.terms.iter().any(|(q, _)| *q == neg) {
                    return Err(Error::InvalidInput(format!("offset {k:?} has no partner {neg:?}")));
                }
            }
        }
        Ok(Self { range_step, levels })
    }

    /// The nearest-neighbour Laplacian as the only level.
    pub fn laplacian(d: usize) -> Self {
        let mut terms: Vec<(Site, PeriodicFn)> = Vec::new();
        for a in 0..d {
            for sgn in [1, -1] {
                let mut k = vec![0; d];
                k[a] = sgn;
                terms.push((k, Arc::new(|_| 1.0)));
            }
        }
        Self { range_step: 1, levels: vec![HoppingLevel { terms }] }
    }

    /// sum_j eps^j * max_m (sup|phi^j_m| + sup|phi^j_m'|), sampled on a phase grid.
    pub fn norm_eps(&self, eps: f64) -> f64 {
        const GRID: usize = 1024;
        let h = 1e-6;
        let mut total = 0.0;
        for (j, level) in self.levels.iter().enumerate() {
            let mut best = 0.0f64;
            for (_, phi) in &level.terms {
                let mut sup = 0.0f64;
                let mut sup_d = 0.0f64;
                for i in 0..GRID {
                    let y = -0.5 + (i as f64 + 0.5) / GRID as f64;
                    sup = sup.max(phi(y).abs());
                    sup_d = sup_d.max(((phi(y + h) - phi(y - h)) / (2.0 * h)).abs());
                }
                best = best.max(sup + sup_d);
            }
            total += eps.powi(j as i32 + 1) * best;
        }
        total
    }
}

/// Graph on lattice sites with an edge wherever some level couples two sites;
/// the edge length is the first level that does.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingGraph {
    pub vertices: Vec<Site>,
    /// (i, j, length) with i < j.
    pub edges: Vec<(usize, usize, usize)>,
}

impl CouplingGraph {
    pub fn from_edges(vertices: Vec<Site>, edges: Vec<(usize, usize, usize)>) -> Self {
        Self { vertices, edges }
    }

    /// Lengths of all edges touching vertex `v`.
    pub fn lengths_at(&self, v: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == v || e.1 == v).map(|e| e.2).collect()
    }
}

pub fn coupling_graph(family: &HoppingFamily, omega: &FrequencyVector, x0: f64, lattice: &LatticeBox) -> CouplingGraph {
    let vertices: Vec<Site> = lattice.sites().collect();
    let max_range = family.range_step * family.levels.len() as i64;
    let mut edges = Vec::new();
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            if l1_distance(&vertices[i], &vertices[j]) > max_range {
                continue;
            }
            let len = family.levels.iter().position(|l| {
                l.entry(omega, x0, &vertices[i], &vertices[j]) != 0.0 || l.entry(omega, x0, &vertices[j], &vertices[i]) != 0.0
            });
            if let Some(k) = len {
                edges.push((i, j, k + 1));
            }
        }
    }
    CouplingGraph { vertices, edges }
}
