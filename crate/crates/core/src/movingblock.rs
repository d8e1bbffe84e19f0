//! Covariant moving blocks: frames, block diagonalizers, copy registries,
//! conjugation of H(x) and extraction of the new diagonal function f2.

mod library;

pub use library::*;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::blockdiag::{diagonalize_homotopy, ducp_reach, track_frame, default_t_max, DiagonalizerPath, HomotopyOptions, ReachabilityResult, TrackedFrame};
use crate::error::{Error, Result};
use crate::lattice::{add, distance_to_set, sub, unit, LatticeBox, Site};
use crate::operator::{build_h, interpolated_block, FiniteOperator};
use crate::sampling::{FrequencyVector, SamplingFunction};

/// Position of a site of R' relative to the e1-layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layer {
    /// First e1-layer, switched on as x moves from x0 to x0 + omega_1.
    Minus,
    Zero,
    /// Last e1-layer, switched off over the same interval.
    Plus,
}

/// Geometry of one moving block: S, S u (S+e1), R, R0 and R'.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFrame {
    base: Vec<Site>,
    doubled: Vec<Site>,
    r_box: LatticeBox,
    r_zero: LatticeBox,
    r_prime: LatticeBox,
    radius: usize,
    x0: f64,
}

impl BlockFrame {
    /// Smallest frame with dist(S u (S+e1), Z^d \ R0) = `radius`.
    pub fn new(base: Vec<Site>, radius: usize, x0: f64) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::InvalidBox("the base block is empty".into()));
        }
        if radius == 0 {
            return Err(Error::InvalidInput("separation radius must be positive".into()));
        }
        let d = base[0].len();
        if d == 0 || base.iter().any(|s| s.len() != d) {
            return Err(Error::InvalidBox("base block sites have inconsistent dimension".into()));
        }
        let e1 = unit(d, 0);
        let set: BTreeSet<Site> = base.iter().cloned().chain(base.iter().map(|s| add(s, &e1))).collect();
        let doubled: Vec<Site> = set.into_iter().collect();
        let r_zero = LatticeBox::bounding(&doubled).unwrap().pad(radius as i64 - 1);
        let mut lo = r_zero.lo().to_vec();
        lo[0] -= 1;
        let r_box = LatticeBox::new(lo.clone(), r_zero.hi().to_vec())?;
        let mut hi = r_zero.hi().to_vec();
        hi[0] += 1;
        let r_prime = LatticeBox::new(lo, hi)?;
        let mut base = base;
        base.sort();
        base.dedup();
        Ok(Self { base, doubled, r_box, r_zero, r_prime, radius, x0 })
    }

    pub fn base(&self) -> &[Site] {
        &self.base
    }

    /// S u (S + e1), sorted.
    pub fn doubled(&self) -> &[Site] {
        &self.doubled
    }

    pub fn doubled_box(&self) -> LatticeBox {
        LatticeBox::bounding(&self.doubled).unwrap()
    }

    pub fn r_box(&self) -> &LatticeBox {
        &self.r_box
    }

    pub fn r_zero(&self) -> &LatticeBox {
        &self.r_zero
    }

    pub fn r_prime(&self) -> &LatticeBox {
        &self.r_prime
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn dim(&self) -> usize {
        self.r_prime.dim()
    }

    pub fn layer_of(&self, site: &[i64]) -> Layer {
        if site[0] == self.r_prime.lo()[0] {
            Layer::Minus
        } else if site[0] == self.r_prime.hi()[0] {
            Layer::Plus
        } else {
            Layer::Zero
        }
    }

    pub fn layer_of_index(&self, i: usize) -> Layer {
        self.layer_of(&self.r_prime.site(i))
    }

    /// Measured dist(S u (S+e1), Z^d \ R0).
    pub fn measured_radius(&self) -> usize {
        let (lo, hi) = (self.r_zero.lo(), self.r_zero.hi());
        self.doubled
            .iter()
            .map(|s| (0..s.len()).map(|k| (s[k] - lo[k] + 1).min(hi[k] - s[k] + 1)).min().unwrap())
            .min()
            .unwrap()
            .max(0) as usize
    }

    /// Nesting (gen1), the layer decomposition of R' and the separation radius.
    pub fn check_consistent(&self) -> Result<()> {
        let e1 = unit(self.dim(), 0);
        let shifted = self.r_box.translate(&e1);
        let inter = self
            .r_box
            .intersect(&shifted)
            .ok_or_else(|| Error::FrameMismatch("R and R + e1 do not intersect".into()))?;
        if inter != self.r_zero || self.r_box.hull(&shifted) != self.r_prime {
            return Err(Error::FrameMismatch("R0 or R' does not match R".into()));
        }
        if let Some(s) = self.doubled.iter().find(|s| !self.r_zero.contains(s)) {
            return Err(Error::FrameMismatch(format!("(gen1) fails: {s:?} is outside R0 = {}", self.r_zero)));
        }
        let layer = self.r_prime.len() / self.r_prime.extent(0);
        if self.r_prime.len() != self.r_zero.len() + 2 * layer {
            return Err(Error::FrameMismatch("R' is not R- u R0 u R+".into()));
        }
        if self.measured_radius() < self.radius {
            return Err(Error::FrameMismatch(format!(
                "separation radius {} is below the configured {}",
                self.measured_radius(),
                self.radius
            )));
        }
        Ok(())
    }

    /// Candidate continuation sets inside the thickness-two layer around S u (S+e1).
    pub fn b_candidates(&self) -> Vec<(String, Vec<Site>)> {
        let shell: Vec<(Site, i64)> = self
            .r_prime
            .sites()
            .filter(|s| self.doubled.binary_search(s).is_err())
            .map(|s| {
                let d = distance_to_set(&s, &self.doubled);
                (s, d)
            })
            .filter(|(_, d)| *d <= 2)
            .collect();
        let lo = self.doubled.iter().map(|s| s[0]).min().unwrap();
        let hi = self.doubled.iter().map(|s| s[0]).max().unwrap();
        let pick = |p: &dyn Fn(&Site, i64) -> bool| -> Vec<Site> { shell.iter().filter(|(s, d)| p(s, *d)).map(|(s, _)| s.clone()).collect() };
        let mut out = vec![
            ("layer".to_string(), pick(&|_, _| true)),
            ("left".to_string(), pick(&|s, _| s[0] < lo)),
            ("right".to_string(), pick(&|s, _| s[0] > hi)),
        ];
        if self.dim() > 1 {
            out.push(("left claw".to_string(), pick(&|s, d| s[0] < lo || (d == 1 && s[0] <= hi))));
            out.push(("right claw".to_string(), pick(&|s, d| s[0] > hi || (d == 1 && s[0] >= lo))));
        }
        out
    }

    /// The certified candidate with the smaller maximal |V| at phase x.
    pub fn select_b(&self, f: &SamplingFunction, omega: &FrequencyVector, x: f64) -> Result<BSelection> {
        let mut best: Option<BSelection> = None;
        for (name, sites) in self.b_candidates() {
            let reach = ducp_reach(&self.doubled, &sites);
            if !reach.certified {
                continue;
            }
            let max_potential = sites
                .iter()
                .map(|s| f.eval(omega.phase(x, s)).map(f64::abs).unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            if best.as_ref().is_none_or(|b| max_potential < b.max_potential) {
                best = Some(BSelection { name, sites, reach, max_potential });
            }
        }
        best.ok_or_else(|| Error::HypothesisViolation("no continuation layer reaches S u (S+e1)".into()))
    }
}

/// Continuation set chosen at one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct BSelection {
    pub name: String,
    pub sites: Vec<Site>,
    pub reach: ReachabilityResult,
    pub max_potential: f64,
}

/// `n` equally spaced points covering [x0, x0 + omega_1].
pub fn phase_grid(x0: f64, omega1: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| x0 + omega1 * k as f64 / (n - 1) as f64).collect()
}

/// Builds the frame and checks (gen2) on an `grid_points`-point grid: every
/// site of R' outside S u (S+e1) is regular for H(x).
pub fn build_frame(
    base: Vec<Site>,
    radius: usize,
    x0: f64,
    f: &SamplingFunction,
    omega: &FrequencyVector,
    c_reg: f64,
    grid_points: usize,
) -> Result<BlockFrame> {
    let frame = BlockFrame::new(base, radius, x0)?;
    if frame.dim() != omega.dim() {
        return Err(Error::FrameMismatch(format!("frame dimension {} but frequency dimension {}", frame.dim(), omega.dim())));
    }
    frame.check_consistent()?;
    let outer: Vec<Site> = frame.r_prime.sites().filter(|s| frame.doubled.binary_search(s).is_err()).collect();
    let checks: Vec<Result<()>> = phase_grid(x0, omega.omega[0], grid_points)
        .into_par_iter()
        .map(|x| {
            for s in &outer {
                match f.certify_regularity(omega.phase(x, s), c_reg) {
                    Ok(c) if !c.is_regular() => return Err(Error::Gen2Violation { x, site: s.clone() }),
                    Ok(_) | Err(Error::PoleProximity { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            frame.select_b(f, omega, x).map(|_| ())
        })
        .collect();
    checks.into_iter().collect::<Result<()>>()?;
    Ok(frame)
}

/// H(x) data shared by every block: f, omega and eps.
#[derive(Clone, Debug)]
pub struct Model {
    pub f: SamplingFunction,
    pub omega: FrequencyVector,
    pub eps: f64,
}

impl Model {
    pub fn h(&self, x: f64, lattice: &LatticeBox) -> Result<FiniteOperator> {
        build_h(&self.f, &self.omega, self.eps, x, lattice)
    }
}

/// U_{R'}(x) on the block grid together with everything needed to evaluate
/// it at other phases of [x0, x0 + omega_1].
#[derive(Clone, Debug)]
pub struct MovingBlockFamily {
    pub frame: BlockFrame,
    pub model: Model,
    pub options: HomotopyOptions,
    pub path: DiagonalizerPath,
    /// Smallest gap of H_{S u (S+e1)} over the grid and t-samples, divided by eps.
    pub separation: f64,
}

/// t-values at which the separation of H_{S u (S+e1)} is sampled.
pub const SEPARATION_T: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn gen3(e: Error) -> Error {
    match e {
        Error::GapCollapse { x, t, gap } => Error::Gen3Violation { x, t, gap },
        other => other,
    }
}

impl MovingBlockFamily {
    /// H'_{R'}(x) built from f_t.
    pub fn block(&self, x: f64, t: f64) -> Result<FiniteOperator> {
        interpolated_block(&self.model.f.with_t(t), &self.model.omega, self.model.eps, x, self.frame.x0, &self.frame)
    }

    fn t_max(&self, x: f64) -> Result<f64> {
        let op = self.block(x, 0.0)?;
        let slopes: Vec<f64> = self
            .frame
            .r_prime
            .sites()
            .map(|s| SamplingFunction::reduce(self.model.omega.phase(x, &s)).map(|y| y + 0.5))
            .collect::<Result<_>>()?;
        Ok(default_t_max(&op, &slopes))
    }

    /// U_{R'}(x) for x in [x0, x0 + omega_1].
    pub fn diagonalize(&self, x: f64) -> Result<TrackedFrame> {
        if self.model.eps == 0.0 {
            let op = self.block(x, 0.0)?;
            let n = op.dim();
            return Ok(TrackedFrame { frame: DMatrix::identity(n, n), eigenvalues: op.diagonal().to_vec(), schedule: vec![0.0], kappa: f64::INFINITY });
        }
        let tm = match self.options.t_max {
            Some(v) => v,
            None => self.t_max(x)?,
        };
        track_frame(&|x, t| self.block(x, t), x, tm, &self.options).map_err(gen3)
    }

    /// max |U - 1| on the rows and columns of the decoupled layer at each endpoint.
    pub fn endpoint_split_defect(&self) -> f64 {
        let first = &self.path.frames[0];
        let last = self.path.frames.last().unwrap();
        let n = first.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                if self.frame.layer_of_index(i) == Layer::Minus || self.frame.layer_of_index(j) == Layer::Minus {
                    worst = worst.max((first[(i, j)] - e).abs());
                }
                if self.frame.layer_of_index(i) == Layer::Plus || self.frame.layer_of_index(j) == Layer::Plus {
                    worst = worst.max((last[(i, j)] - e).abs());
                }
            }
        }
        worst
    }

    /// max |U(x0)[i, j] - U(x0 + omega_1)[i - e1, j - e1]| over i, j in R0 u R+.
    pub fn translation_defect(&self) -> f64 {
        let first = &self.path.frames[0];
        let last = self.path.frames.last().unwrap();
        let rp = &self.frame.r_prime;
        let e1 = unit(self.frame.dim(), 0);
        let idx: Vec<(usize, usize)> = rp
            .sites()
            .enumerate()
            .filter(|(i, _)| self.frame.layer_of_index(*i) != Layer::Minus)
            .map(|(i, s)| (i, rp.index_of(&sub(&s, &e1)).unwrap()))
            .collect();
        let mut worst = 0.0f64;
        for &(i, ii) in &idx {
            for &(j, jj) in &idx {
                worst = worst.max((first[(i, j)] - last[(ii, jj)]).abs());
            }
        }
        worst
    }
}

/// Checks the gap hypotheses and diagonalizes H'_{R'} on the block grid.
pub fn build_u0(frame: BlockFrame, model: Model, grid_points: usize, c_sep: f64, options: HomotopyOptions) -> Result<MovingBlockFamily> {
    frame.check_consistent()?;
    let grid = phase_grid(frame.x0, model.omega.omega[0], grid_points);
    let ss_box = frame.doubled_box();
    let mut separation = f64::INFINITY;
    if model.eps > 0.0 {
        let gaps: Vec<(f64, f64, f64)> = grid
            .par_iter()
            .map(|&x| {
                let mut worst = (x, 0.0, f64::INFINITY);
                for &t in &SEPARATION_T {
                    let vals = build_h(&model.f.with_t(t), &model.omega, model.eps, x, &ss_box)?.eigenvalues();
                    let g = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                    if g < worst.2 {
                        worst = (x, t, g);
                    }
                }
                Ok(worst)
            })
            .collect::<Result<_>>()?;
        for (x, t, gap) in gaps {
            if gap < c_sep * model.eps {
                return Err(Error::SeparationViolation { x, t, gap, required: c_sep * model.eps });
            }
            separation = separation.min(gap / model.eps);
        }
    }
    let mut family = MovingBlockFamily {
        frame,
        model,
        options,
        path: DiagonalizerPath {
            lattice: LatticeBox::interval(0, 0)?,
            x_grid: vec![],
            frames: vec![],
            eigenvalues: vec![],
            t_schedules: vec![],
            kappa: f64::INFINITY,
            min_x_overlap: 1.0,
        },
        separation,
    };
    family.path = if family.model.eps == 0.0 {
        let tracked: Vec<TrackedFrame> = grid.iter().map(|&x| family.diagonalize(x)).collect::<Result<_>>()?;
        DiagonalizerPath {
            lattice: family.frame.r_prime.clone(),
            x_grid: grid.clone(),
            eigenvalues: tracked.iter().map(|t| t.eigenvalues.clone()).collect(),
            frames: tracked.into_iter().map(|t| t.frame).collect(),
            t_schedules: vec![vec![0.0]; grid.len()],
            kappa: f64::INFINITY,
            min_x_overlap: 1.0,
        }
    } else {
        let fam = &family;
        diagonalize_homotopy(|x, t| fam.block(x, t), &fam.frame.r_prime, &grid, |x| fam.t_max(x), &fam.options).map_err(gen3)?
    };
    Ok(family)
}

/// One translated copy of a block: support R' - a with base phase x0 + u.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyPlacement {
    pub family: usize,
    pub shift: Site,
    pub base_phase: f64,
    pub support: LatticeBox,
}

impl CopyPlacement {
    fn describe(&self) -> String {
        format!("family {} shift {:?} on {}", self.family, self.shift, self.support)
    }
}

/// Phase offset u in [0, omega_1) of the copy indexed by `shift`, if it exists.
fn copy_offset(frame: &BlockFrame, omega: &FrequencyVector, x: f64, shift: &[i64]) -> Option<f64> {
    const TOL: f64 = 1e-12;
    let v = omega.phase(x, &shift.iter().map(|a| -a).collect::<Vec<_>>()) - frame.x0;
    let mut u = v - v.floor();
    if u >= 1.0 - TOL {
        u -= 1.0;
    }
    (u < omega.omega[0] - TOL).then_some(u.max(0.0))
}

/// Every copy whose support meets `analysis_box`. With `strict`, copies that
/// straddle the box boundary are an error. Overlapping supports raise (gen4).
pub fn copy_placements(families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox, strict: bool) -> Result<Vec<CopyPlacement>> {
    let Some(first) = families.first() else { return Ok(vec![]) };
    let frames: Vec<&BlockFrame> = families.iter().map(|f| &f.frame).collect();
    frame_placements(&frames, &first.model.omega, x, analysis_box, strict)
}

/// Geometry-only version of [`copy_placements`].
pub fn frame_placements(frames: &[&BlockFrame], omega: &FrequencyVector, x: f64, analysis_box: &LatticeBox, strict: bool) -> Result<Vec<CopyPlacement>> {
    let mut out: Vec<CopyPlacement> = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let rp = &frame.r_prime;
        let d = rp.dim();
        let lo: Vec<i64> = (0..d).map(|k| analysis_box.lo()[k] - rp.hi()[k]).collect();
        let hi: Vec<i64> = (0..d).map(|k| analysis_box.hi()[k] - rp.lo()[k]).collect();
        for shift in LatticeBox::new(lo, hi)?.sites() {
            let Some(u) = copy_offset(frame, omega, x, &shift) else { continue };
            let support = rp.translate(&shift.iter().map(|a| -a).collect::<Vec<_>>());
            if support.intersect(analysis_box).is_none() {
                continue;
            }
            if strict && !support.is_subset_of(analysis_box) {
                return Err(Error::InvalidBox(format!("copy on {support} straddles the analysis box {analysis_box}")));
            }
            out.push(CopyPlacement { family: fi, shift, base_phase: frame.x0 + u, support });
        }
    }
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            if out[i].support.intersect(&out[j].support).is_some() {
                return Err(Error::Gen4Violation { first: out[i].describe(), second: out[j].describe() });
            }
        }
    }
    Ok(out)
}

/// Smallest box containing `analysis_box` and every copy meeting it.
pub fn padded_analysis_box(families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox) -> Result<LatticeBox> {
    let mut bx = analysis_box.clone();
    for _ in 0..16 {
        let mut next = bx.clone();
        for c in copy_placements(families, x, &bx, false)? {
            next = next.hull(&c.support);
        }
        if next == bx {
            return Ok(bx);
        }
        bx = next;
    }
    Err(Error::InvalidBox("copy supports keep growing the analysis box".into()))
}

/// U2(x) restricted to an analysis box that contains every copy it meets.
#[derive(Clone, Debug)]
pub struct AssembledU2 {
    pub lattice: LatticeBox,
    pub x: f64,
    pub copies: Vec<CopyPlacement>,
    pub frames: Vec<TrackedFrame>,
    /// H'_{R'} at each copy's base phase.
    pub blocks: Vec<FiniteOperator>,
    pub u: DMatrix<f64>,
    /// (copy, R' index) for every box site covered by a copy.
    pub owner: Vec<Option<(usize, usize)>>,
}

pub fn assemble_u2(families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox) -> Result<AssembledU2> {
    let copies = copy_placements(families, x, analysis_box, true)?;
    let n = analysis_box.len();
    let mut u = DMatrix::identity(n, n);
    let mut owner = vec![None; n];
    let mut frames = Vec::with_capacity(copies.len());
    let mut blocks = Vec::with_capacity(copies.len());
    for (ci, c) in copies.iter().enumerate() {
        let fam = &families[c.family];
        let tracked = fam.diagonalize(c.base_phase)?;
        let rp = &fam.frame.r_prime;
        let map: Vec<(usize, usize)> = c
            .support
            .sites()
            .map(|s| (analysis_box.index_of(&s).unwrap(), rp.index_of(&add(&s, &c.shift)).unwrap()))
            .collect();
        for &(bi, ri) in &map {
            owner[bi] = Some((ci, ri));
            for &(bj, rj) in &map {
                u[(bi, bj)] = tracked.frame[(ri, rj)];
            }
        }
        blocks.push(fam.block(c.base_phase, 0.0)?);
        frames.push(tracked);
    }
    Ok(AssembledU2 { lattice: analysis_box.clone(), x, copies, frames, blocks, u, owner })
}

/// H2(x) = U2^T H(x) U2 on the analysis box with its diagonal read as f2.
#[derive(Clone, Debug)]
pub struct ConjugatedOperator {
    pub lattice: LatticeBox,
    pub x: f64,
    pub eps: f64,
    pub h2: DMatrix<f64>,
    /// x + omega.n for every box site.
    pub phases: Vec<f64>,
    pub f2: Vec<f64>,
    pub f2_prime: Vec<f64>,
    /// Edges (k, l, value) of H - H' that survive the block diagonalization.
    pub residual_edges: Vec<(usize, usize, f64)>,
    pub u2: AssembledU2,
    /// max |(H2)_mm - block eigenvalue| over copy sites at distance >= 2 from the copy boundary.
    pub strat2_defect: f64,
}

impl ConjugatedOperator {
    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        self.lattice.index_of(site)
    }

    /// Largest per-index difference between the sorted spectra of H2 and `h`.
    pub fn spectrum_defect(&self, h: &FiniteOperator) -> f64 {
        let a = crate::linalg::dense_eigenvalues(&self.h2);
        let b = h.eigenvalues();
        a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    /// Entries H2[m, n] with m in `block` and n outside it.
    pub fn couplings_leaving(&self, block: &[Site]) -> Vec<(Site, Site, f64)> {
        let inside: Vec<bool> = self.lattice.sites().map(|s| block.contains(&s)).collect();
        let mut out = Vec::new();
        for m in 0..self.lattice.len() {
            if !inside[m] {
                continue;
            }
            for (n, &other) in inside.iter().enumerate() {
                if !other && self.h2[(m, n)] != 0.0 {
                    out.push((self.lattice.site(m), self.lattice.site(n), self.h2[(m, n)]));
                }
            }
        }
        out
    }
}

/// Conjugates H(x) on `analysis_box` by U2(x) and extracts f2 and f2'.
///
/// H2 is assembled as diag(block eigenvalues) plus the conjugated residual
/// edges, so tiny entries keep their relative accuracy. f2' comes from the
/// variational formula applied to H'_{R'} including the interpolated edges.
pub fn conjugate_and_extract(model: &Model, families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox) -> Result<ConjugatedOperator> {
    let h = model.h(x, analysis_box)?;
    let u2 = assemble_u2(families, x, analysis_box)?;
    let n = analysis_box.len();
    let phases: Vec<f64> = analysis_box.sites().map(|s| model.omega.phase(x, &s)).collect();
    let mut lambda = h.diagonal().to_vec();
    for (m, o) in u2.owner.iter().enumerate() {
        if let Some((c, r)) = *o {
            lambda[m] = u2.frames[c].eigenvalues[r];
        }
    }
    let mut residual_edges = Vec::new();
    for ((k, l), w) in h.edges() {
        let block_w = match (u2.owner[k], u2.owner[l]) {
            (Some((ck, rk)), Some((cl, rl))) if ck == cl => u2.blocks[ck].weight(rk.min(rl), rk.max(rl)),
            _ => 0.0,
        };
        let r = model.eps * (w - block_w);
        if r != 0.0 {
            residual_edges.push((k, l, r));
        }
    }
    let mut h2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lambda.clone()));
    for &(k, l, r) in &residual_edges {
        let uk = u2.u.row(k).transpose();
        let ul = u2.u.row(l).transpose();
        let outer = &uk * ul.transpose();
        h2 += (&outer + outer.transpose()) * r;
    }
    let f2: Vec<f64> = (0..n).map(|m| h2[(m, m)]).collect();
    let w1 = model.omega.omega[0];
    let mut f2_prime = vec![0.0; n];
    for m in 0..n {
        f2_prime[m] = match u2.owner[m] {
            None => model.f.eval_derivative(phases[m])?,
            Some((c, j)) => {
                let fam = &families[u2.copies[c].family];
                let frame = &u2.frames[c].frame;
                let rp = &fam.frame.r_prime;
                let base = u2.copies[c].base_phase;
                let mut s = 0.0;
                for (i, site) in rp.sites().enumerate() {
                    let v = frame[(i, j)];
                    if v != 0.0 {
                        s += model.f.eval_derivative(model.omega.phase(base, &site))? * v * v;
                    }
                }
                for ((a, b), _) in u2.blocks[c].edges() {
                    let rate = match (fam.frame.layer_of_index(a), fam.frame.layer_of_index(b)) {
                        (Layer::Minus, _) | (_, Layer::Minus) => 1.0 / w1,
                        (Layer::Plus, _) | (_, Layer::Plus) => -1.0 / w1,
                        _ => 0.0,
                    };
                    if rate != 0.0 {
                        s += 2.0 * model.eps * rate * frame[(a, j)] * frame[(b, j)];
                    }
                }
                s
            }
        };
    }
    let mut strat2_defect = 0.0f64;
    for (m, o) in u2.owner.iter().enumerate() {
        if let Some((c, _)) = *o {
            let site = analysis_box.site(m);
            let sup = &u2.copies[c].support;
            let depth = (0..site.len()).map(|k| (site[k] - sup.lo()[k] + 1).min(sup.hi()[k] - site[k] + 1)).min().unwrap();
            if depth >= 2 {
                strat2_defect = strat2_defect.max((f2[m] - lambda[m]).abs());
            }
        }
    }
    Ok(ConjugatedOperator { lattice: analysis_box.clone(), x, eps: model.eps, h2, phases, f2, f2_prime, residual_edges, u2, strat2_defect })
}

/// max |f2(x)[m] - f2(x + omega.n)[m - n]| between the two conjugations.
pub fn f2_covariance_defect(model: &Model, families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox, shift: &[i64]) -> Result<f64> {
    let a = conjugate_and_extract(model, families, x, analysis_box)?;
    let moved = analysis_box.translate(&shift.iter().map(|k| -k).collect::<Vec<_>>());
    let b = conjugate_and_extract(model, families, model.omega.phase(x, shift), &moved)?;
    let mut worst = 0.0f64;
    for (m, site) in analysis_box.sites().enumerate() {
        let k = moved.index_of(&sub(&site, shift)).unwrap();
        let diff = (a.f2[m] - b.f2[k]).abs();
        if diff > 1e-6 {
            return Err(Error::CovarianceMismatch { x, site, difference: diff });
        }
        worst = worst.max(diff);
    }
    Ok(worst)
}

/// max |U2(x + omega.n)[i - n, j - n] - U2(x)[i, j]|.
pub fn u2_covariance_defect(families: &[MovingBlockFamily], x: f64, analysis_box: &LatticeBox, shift: &[i64]) -> Result<f64> {
    let omega = &families
        .first()
        .ok_or_else(|| Error::InvalidInput("no block families".into()))?
        .model
        .omega;
    let a = assemble_u2(families, x, analysis_box)?;
    let moved = analysis_box.translate(&shift.iter().map(|k| -k).collect::<Vec<_>>());
    let b = assemble_u2(families, omega.phase(x, shift), &moved)?;
    Ok(matrix_shift_defect(&a.u, analysis_box, &b.u, &moved, shift))
}

fn matrix_shift_defect(a: &DMatrix<f64>, abox: &LatticeBox, b: &DMatrix<f64>, bbox: &LatticeBox, shift: &[i64]) -> f64 {
    let map: Vec<usize> = abox.sites().map(|s| bbox.index_of(&sub(&s, shift)).unwrap()).collect();
    let mut worst = 0.0f64;
    for i in 0..map.len() {
        for j in 0..map.len() {
            worst = worst.max((a[(i, j)] - b[(map[i], map[j])]).abs());
        }
    }
    worst
}

/// U0(x) alone (the single moving copy, not periodized) on `analysis_box`.
pub fn u0_at(family: &MovingBlockFamily, x: f64, analysis_box: &LatticeBox) -> Result<DMatrix<f64>> {
    let w1 = family.model.omega.omega[0];
    let steps = ((x - family.frame.x0) / w1 + 1e-12).floor();
    let m = steps as i64;
    let base = (x - steps * w1).max(family.frame.x0);
    let mut shift = vec![0; family.frame.dim()];
    shift[0] = m;
    let support = family.frame.r_prime.translate(&shift.iter().map(|a| -a).collect::<Vec<_>>());
    if !support.is_subset_of(analysis_box) {
        return Err(Error::InvalidBox(format!("U0 support {support} is not inside {analysis_box}")));
    }
    let tracked = family.diagonalize(base)?;
    let n = analysis_box.len();
    let mut u = DMatrix::identity(n, n);
    let rp = &family.frame.r_prime;
    let map: Vec<(usize, usize)> = support
        .sites()
        .map(|s| (analysis_box.index_of(&s).unwrap(), rp.index_of(&add(&s, &shift)).unwrap()))
        .collect();
    for &(bi, ri) in &map {
        for &(bj, rj) in &map {
            u[(bi, bj)] = tracked.frame[(ri, rj)];
        }
    }
    Ok(u)
}

/// max |U0(x + omega_1)[i - e1, j - e1] - U0(x)[i, j]|.
pub fn u0_covariance_defect(family: &MovingBlockFamily, x: f64, analysis_box: &LatticeBox) -> Result<f64> {
    let e1 = unit(family.frame.dim(), 0);
    let a = u0_at(family, x, analysis_box)?;
    let moved = analysis_box.translate(&e1.iter().map(|k| -k).collect::<Vec<_>>());
    let b = u0_at(family, x + family.model.omega.omega[0], &moved)?;
    Ok(matrix_shift_defect(&a, analysis_box, &b, &moved, &e1))
}

/// Whether S_sing(x - omega.n) = S_sing(x) + n holds, comparing `bx` with `bx + n`.
pub fn singular_set_covariant(f: &SamplingFunction, omega: &FrequencyVector, c_reg: f64, x: f64, shift: &[i64], bx: &LatticeBox) -> Result<bool> {
    let here: BTreeSet<Site> = crate::sampling::singular_set(f, omega, x, bx, c_reg)?.into_iter().collect();
    let back: Vec<i64> = shift.iter().map(|k| -k).collect();
    let there: BTreeSet<Site> = crate::sampling::singular_set(f, omega, omega.phase(x, &back), &bx.translate(shift), c_reg)?
        .into_iter()
        .map(|s| sub(&s, shift))
        .collect();
    Ok(here == there)
}

/// First (x, site) where a singular site of `bx` lies outside every copy of S u (S+e1).
pub fn uncovered_singular_site(
    frames: &[&BlockFrame],
    f: &SamplingFunction,
    omega: &FrequencyVector,
    c_reg: f64,
    xs: &[f64],
    bx: &LatticeBox,
) -> Result<Option<(f64, Site)>> {
    let found: Vec<Result<Option<(f64, Site)>>> = xs
        .par_iter()
        .map(|&x| {
            let copies = frame_placements(frames, omega, x, bx, false)?;
            let covered: BTreeSet<Site> = copies
                .iter()
                .flat_map(|c| {
                    let neg: Vec<i64> = c.shift.iter().map(|a| -a).collect();
                    frames[c.family].doubled.iter().map(move |s| add(s, &neg)).collect::<Vec<_>>()
                })
                .collect();
            let sing = crate::sampling::singular_set(f, omega, x, bx, c_reg)?;
            Ok(sing.into_iter().find(|s| !covered.contains(s)).map(|s| (x, s)))
        })
        .collect();
    for r in found {
        if let Some(hit) = r? {
            return Ok(Some(hit));
        }
    }
    Ok(None)
}
