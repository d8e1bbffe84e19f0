//! Ready-made geometries for the worked examples, the hypothesis checklist
//! and the scaling sweeps run on them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;

use super::*;
use crate::fit::fit_power_law;
use crate::sampling::{verify_diophantine, PieceSpec};

/// A flat window of f with its energy and the predicted derivative exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularWindow {
    pub left: f64,
    pub right: f64,
    pub energy: f64,
    pub predicted_mu: Option<f64>,
}

/// Base block, separation radius and anchor of one moving block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub base: Vec<Site>,
    pub radius: usize,
    pub x0: f64,
}

/// Everything needed to build the moving blocks of an example.
#[derive(Clone, Debug)]
pub struct ExampleSetup {
    pub name: String,
    pub f: SamplingFunction,
    pub omega: FrequencyVector,
    pub c_reg: f64,
    pub c_sep: f64,
    pub blocks: Vec<BlockSpec>,
    pub analysis_box: LatticeBox,
    pub windows: Vec<SingularWindow>,
    pub note: Option<String>,
}

/// Default x-grid resolution per omega_1 period.
pub const GRID_POINTS: usize = 128;

/// Moving blocks of an example built at one eps.
#[derive(Clone, Debug)]
pub struct MovingBlockRun {
    pub model: Model,
    pub families: Vec<MovingBlockFamily>,
    pub analysis_box: LatticeBox,
}

impl ExampleSetup {
    pub fn model(&self, eps: f64) -> Model {
        Model { f: self.f.clone(), omega: self.omega.clone(), eps }
    }

    pub fn frames(&self, grid_points: usize) -> Result<Vec<BlockFrame>> {
        self.blocks
            .iter()
            .map(|b| build_frame(b.base.clone(), b.radius, b.x0, &self.f, &self.omega, self.c_reg, grid_points))
            .collect()
    }

    pub fn build(&self, eps: f64, grid_points: usize, options: &HomotopyOptions) -> Result<MovingBlockRun> {
        let model = self.model(eps);
        let families = self
            .frames(grid_points)?
            .into_iter()
            .map(|fr| build_u0(fr, model.clone(), grid_points, self.c_sep, options.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(MovingBlockRun { model, families, analysis_box: self.analysis_box.clone() })
    }
}

impl MovingBlockRun {
    /// Conjugation on the analysis box, widened to the copies it meets.
    pub fn conjugate(&self, x: f64) -> Result<ConjugatedOperator> {
        let bx = padded_analysis_box(&self.families, x, &self.analysis_box)?;
        conjugate_and_extract(&self.model, &self.families, x, &bx)
    }

    /// A pair (x, m) with x in some block interval [x0, x0 + omega_1) and m in
    /// that block's S u (S+e1) such that x + omega.m = y mod 1.
    pub fn locate(&self, y: f64) -> Option<(f64, Site)> {
        for fam in &self.families {
            for m in fam.frame.doubled() {
                if let Some(u) = copy_offset(&fam.frame, &self.model.omega, y, m) {
                    return Some((fam.frame.x0() + u, m.clone()));
                }
            }
        }
        None
    }

    /// f2'(y) read off the conjugation at the representative from [`Self::locate`].
    pub fn f2_prime_at_phase(&self, y: f64) -> Result<f64> {
        let (x, m) = self
            .locate(y)
            .ok_or_else(|| Error::HypothesisViolation(format!("phase {y} is not covered by any block")))?;
        let c = self.conjugate(x)?;
        Ok(c.f2_prime[c.index_of(&m).unwrap()])
    }
}

/// Worst-case eps-power of entry (i, j) of U_{R'}: inside the singular block
/// columns are O(1), regular columns decay with |i - j|, singular columns with
/// the distance to the block.
pub fn worst_case_exponent(frame: &BlockFrame, i: &[i64], j: &[i64]) -> i64 {
    let block = frame.doubled();
    if block.contains(&j.to_vec()) {
        distance_to_set(i, block)
    } else {
        crate::lattice::l1_distance(i, j)
    }
}

/// Index of the flat piece containing the reduced phase, if any.
fn flat_piece_of(f: &SamplingFunction, phase: f64) -> Option<usize> {
    let y = phase - phase.round();
    f.flat_pieces().iter().position(|&(l, r, _)| y >= l && y <= r)
}

/// Twice the number of lattice steps from the flat cluster of the site with
/// phase `y` to the nearest site off every flat piece.
pub fn predicted_mu(f: &SamplingFunction, omega: &FrequencyVector, y: f64) -> Option<f64> {
    const RADIUS: i64 = 16;
    let d = omega.dim();
    let piece = flat_piece_of(f, y)?;
    let origin = vec![0; d];
    let mut cluster: BTreeSet<Site> = BTreeSet::new();
    let mut queue = VecDeque::from([origin.clone()]);
    cluster.insert(origin);
    let neighbours = |s: &Site| -> Vec<Site> {
        (0..d)
            .flat_map(|k| {
                [-1, 1].into_iter().map(move |sg| {
                    let mut t = s.clone();
                    t[k] += sg;
                    t
                })
            })
            .collect::<Vec<_>>()
    };
    while let Some(s) = queue.pop_front() {
        for t in neighbours(&s) {
            if t.iter().all(|c| c.abs() <= RADIUS) && !cluster.contains(&t) && flat_piece_of(f, omega.phase(y, &t)) == Some(piece) {
                cluster.insert(t.clone());
                queue.push_back(t);
            }
        }
    }
    let mut dist: BTreeMap<Site, i64> = cluster.iter().map(|s| (s.clone(), 0)).collect();
    let mut queue: VecDeque<Site> = cluster.iter().cloned().collect();
    while let Some(s) = queue.pop_front() {
        let k = dist[&s];
        if k > RADIUS {
            break;
        }
        for t in neighbours(&s) {
            if dist.contains_key(&t) {
                continue;
            }
            if flat_piece_of(f, omega.phase(y, &t)).is_none() {
                return Some(2.0 * (k + 1) as f64);
            }
            dist.insert(t.clone(), k + 1);
            queue.push_back(t);
        }
    }
    None
}

/// Sites n with x0 + (n + s) omega_1 in [left, right] for some s in [0, 1].
pub fn doubled_range(left: f64, right: f64, x0: f64, omega1: f64) -> (i64, i64) {
    let lo = ((left - x0) / omega1 - 1.0 - 1e-12).ceil() as i64;
    let hi = ((right - x0) / omega1 + 1e-12).floor() as i64;
    (lo, hi)
}

/// One block in d = 1 covering the given windows, anchored at `x0`.
pub fn block_for_windows(windows: &[(f64, f64)], x0: f64, omega1: f64, radius: usize) -> Result<BlockSpec> {
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for &(l, r) in windows {
        let (a, b) = doubled_range(l, r, x0, omega1);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    if hi <= lo {
        return Err(Error::InvalidBox("windows do not produce a block with at least two sites".into()));
    }
    Ok(BlockSpec { base: (lo..hi).map(|n| vec![n]).collect(), radius, x0 })
}

/// Data of the single-flat-piece example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example1Config {
    /// Left end a of the flat piece.
    pub left: f64,
    /// Length L of the flat piece.
    pub length: f64,
    /// Energy E on the flat piece.
    pub energy: f64,
    pub omega: f64,
    /// omega_2, ..., omega_d for the higher-dimensional variant.
    pub perpendicular: Vec<f64>,
    pub tangent_scale: f64,
    pub c_reg: f64,
    /// Overrides the default E_reg = max(|f(b - M omega)|, |f(b + (M+1) omega)|).
    pub e_reg: Option<f64>,
    /// Smallest admissible beta (as a fraction of omega).
    pub beta_floor: f64,
    pub c_sep: f64,
    pub radius: usize,
}

impl Example1Config {
    /// omega = (3 - sqrt 5)/10, L = 4.4 omega centred at 0, E = 0, so M = 5.
    pub fn canonical() -> Self {
        let omega = (3.0 - 5f64.sqrt()) / 10.0;
        Self {
            left: -2.2 * omega,
            length: 4.4 * omega,
            energy: 0.0,
            omega,
            perpendicular: vec![],
            tangent_scale: 20.0,
            c_reg: 10.0,
            e_reg: None,
            beta_floor: 0.05,
            c_sep: 0.05,
            radius: 3,
        }
    }

    /// L / omega = p + z.
    pub fn p(&self) -> u64 {
        (self.length / self.omega + 1e-12).floor() as u64
    }

    pub fn z(&self) -> f64 {
        let q = self.length / self.omega;
        let z = q - q.floor();
        if z > 1.0 - 1e-9 {
            0.0
        } else {
            z
        }
    }

    pub fn beta(&self) -> f64 {
        self.z().min(1.0 - self.z())
    }

    pub fn m(&self) -> i64 {
        (self.length / (2.0 * self.omega) - 1e-12).ceil() as i64 + 2
    }

    /// Centre b of the flat piece.
    pub fn b(&self) -> f64 {
        self.left + self.length / 2.0
    }

    pub fn sampling(&self) -> Result<SamplingFunction> {
        let f = SamplingFunction::single_flat(self.left, self.length, self.energy, self.tangent_scale, f64::INFINITY)?;
        let e_reg = match self.e_reg {
            Some(e) => e,
            None => {
                let m = self.m() as f64;
                let a = f.eval(self.b() - m * self.omega)?.abs();
                let b = f.eval(self.b() + (m + 1.0) * self.omega)?.abs();
                a.max(b)
            }
        };
        SamplingFunction::single_flat(self.left, self.length, self.energy, self.tangent_scale, e_reg)
    }

    pub fn frequency(&self) -> Result<FrequencyVector> {
        let mut w = vec![self.omega];
        w.extend(&self.perpendicular);
        FrequencyVector::unchecked(w)
    }

    pub fn setup(&self) -> Result<ExampleSetup> {
        let f = self.sampling()?;
        let omega = self.frequency()?;
        let d = omega.dim();
        let x0 = self.b() - self.omega;
        let block = block_for_windows(&[(self.left, self.left + self.length)], x0, self.omega, self.radius)?;
        let base: Vec<Site> = block
            .base
            .iter()
            .map(|s| {
                let mut v = vec![0; d];
                v[0] = s[0];
                v
            })
            .collect();
        let frame = BlockFrame::new(base.clone(), self.radius, x0)?;
        let analysis_box = frame.r_prime().pad(1);
        let predicted = predicted_mu(&f, &omega, self.b());
        Ok(ExampleSetup {
            name: if d == 1 { "example1".into() } else { "example2".into() },
            f,
            omega,
            c_reg: self.c_reg,
            c_sep: self.c_sep,
            blocks: vec![BlockSpec { base, radius: self.radius, x0 }],
            analysis_box,
            windows: vec![SingularWindow { left: self.left, right: self.left + self.length, energy: self.energy, predicted_mu: predicted }],
            note: None,
        })
    }

    /// Evaluates (f1), (z1)-(z5), (gen0) and the Diophantine scan.
    pub fn verify(&self) -> HypothesisReport {
        let mut report = HypothesisReport::default();
        let f = match self.sampling() {
            Ok(f) => {
                report.push("(f1)", true, format!("{} monotone pieces, poles at +-1/2", f.pieces().len()));
                f
            }
            Err(e) => {
                report.push("(f1)", false, e.to_string());
                return report;
            }
        };
        let (a, r) = (self.left, self.left + self.length);
        report.push("(z1)", a > -0.5 && r < 0.5, format!("f = {} on [{a:.6}, {r:.6}]", self.energy));
        let z = self.z();
        let z_ok = z > 1e-9 && z < 1.0 - 1e-9 && self.beta() >= self.beta_floor;
        report.push("(z2)", z_ok, format!("L = ({} + {z:.6}) omega, beta = {:.6}", self.p(), self.beta()));
        let margin = self.beta() * self.omega;
        let bad = (0..Z3_SCAN)
            .into_par_iter()
            .map(|k| -0.5 + (k as f64 + 0.5) / Z3_SCAN as f64)
            .filter(|y| *y < a - margin || *y > r + margin)
            .find_first(|&y| matches!(f.certify_regularity(y, self.c_reg), Ok(c) if !c.is_regular()));
        report.push(
            "(z3)",
            bad.is_none(),
            match bad {
                Some(y) => format!("singular at phase {y:.6}"),
                None => format!("regular outside [{:.6}, {:.6}]", a - margin, r + margin),
            },
        );
        let m = self.m() as f64;
        let lo = self.b() - m * self.omega;
        let hi = self.b() + (m + 1.0) * self.omega;
        report.push("(z4)", lo > -0.5 && hi < 0.5, format!("M = {}, points span [{lo:.6}, {hi:.6}]", self.m()));
        if !self.perpendicular.is_empty() {
            let omega = match self.frequency() {
                Ok(o) => o,
                Err(e) => {
                    report.push("(z5)", false, e.to_string());
                    return report;
                }
            };
            let d = omega.dim();
            let reach = LatticeBox::new(vec![-6; d], vec![6; d]).unwrap();
            let mut witness = None;
            'outer: for k in 0..=64 {
                let x = a + self.length * k as f64 / 64.0;
                for n in reach.sites() {
                    if n.iter().map(|c| c.abs()).sum::<i64>() > 6 || n[1..].iter().all(|c| *c == 0) {
                        continue;
                    }
                    if matches!(f.certify_regularity(omega.phase(x, &n), self.c_reg), Ok(c) if !c.is_regular()) {
                        witness = Some((x, n));
                        break 'outer;
                    }
                }
            }
            report.push(
                "(z5)",
                witness.is_none(),
                match witness {
                    Some((x, n)) => format!("singular at x = {x:.6}, n = {n:?}"),
                    None => "regular at all perpendicular shifts with |n|_1 <= 6".into(),
                },
            );
        }
        report.push_result("(gen0)", gen0_witness(&f, self.c_reg));
        let mut w = vec![self.omega];
        w.extend(&self.perpendicular);
        let radius = if w.len() == 1 { 2000 } else { 60 };
        match verify_diophantine(&w, radius) {
            Ok(fv) => report.push("diophantine", fv.c_dio > 0.0, format!("C_dio = {:.3e} for tau = {} up to |n| = {radius}", fv.c_dio, fv.tau_dio)),
            Err(e) => report.push("diophantine", false, e.to_string()),
        }
        report
    }
}

/// Phases scanned for (gen0); each scan point costs a full regularity certificate.
const GEN0_SCAN: usize = 2000;
/// Phases scanned for (z3).
const Z3_SCAN: usize = 1000;

fn gen0_witness(f: &SamplingFunction, c_reg: f64) -> std::result::Result<String, String> {
    let e_reg = f.e_reg();
    if !e_reg.is_finite() {
        return Err("E_reg is not set".into());
    }
    let hit = (0..GEN0_SCAN).into_par_iter().find_first(|&k| {
        let y = -0.5 + (k as f64 + 0.5) / GEN0_SCAN as f64;
        matches!(f.eval(y), Ok(v) if v.abs() >= e_reg)
            && matches!(f.certify_regularity(y, c_reg), Ok(c) if !c.is_regular())
    });
    if let Some(k) = hit {
        let y = -0.5 + (k as f64 + 0.5) / GEN0_SCAN as f64;
        let v = f.eval(y).unwrap_or(f64::NAN);
        return Err(format!("|f| = {:.3} >= E_reg = {e_reg:.3} but singular at {y:.6}", v.abs()));
    }
    Ok(format!("regular wherever |f| >= E_reg = {e_reg:.4}"))
}

/// Pass/fail line of the checklist.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub witness: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HypothesisReport {
    pub items: Vec<CheckItem>,
    pub recommendation: Option<String>,
}

impl HypothesisReport {
    pub fn push(&mut self, name: &str, passed: bool, witness: impl Into<String>) {
        self.items.push(CheckItem { name: name.to_string(), passed, witness: witness.into() });
    }

    fn push_result(&mut self, name: &str, r: std::result::Result<String, String>) {
        match r {
            Ok(w) => self.push(name, true, w),
            Err(w) => self.push(name, false, w),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckItem> {
        self.items.iter().find(|i| !i.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }

    /// `name = pass|fail ; witness` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            let _ = writeln!(s, "{} = {} ; {}", i.name, if i.passed { "pass" } else { "fail" }, i.witness);
        }
        if let Some(r) = &self.recommendation {
            let _ = writeln!(s, "recommendation = {r}");
        }
        s
    }
}

/// Checklist for an example's block construction. With `construct`, the
/// block diagonalizations are run at `eps` to check (gen3) and separation.
pub fn verify_setup(setup: &ExampleSetup, eps: f64, grid_points: usize, construct: bool) -> HypothesisReport {
    let mut report = HypothesisReport::default();
    report.push("(f1)", true, format!("{} pieces", setup.f.pieces().len()));
    report.push_result("(gen0)", gen0_witness(&setup.f, setup.c_reg));
    let mut frames = Vec::new();
    let mut geometry = Vec::new();
    for (j, b) in setup.blocks.iter().enumerate() {
        match BlockFrame::new(b.base.clone(), b.radius, b.x0).and_then(|fr| fr.check_consistent().map(|_| fr)) {
            Ok(fr) => {
                report.push(&format!("(gen1) block {j}"), true, format!("S u (S+e1) in R0 = {}", fr.r_zero()));
                report.push(&format!("radius block {j}"), fr.measured_radius() >= b.radius, format!("dist = {}", fr.measured_radius()));
                geometry.push(fr);
            }
            Err(e) => report.push(&format!("(gen1) block {j}"), false, e.to_string()),
        }
        match build_frame(b.base.clone(), b.radius, b.x0, &setup.f, &setup.omega, setup.c_reg, grid_points) {
            Ok(fr) => {
                report.push(&format!("(gen2) block {j}"), true, format!("R' = {} regular off S u (S+e1)", fr.r_prime()));
                frames.push(fr);
            }
            Err(e) => report.push(&format!("(gen2) block {j}"), false, e.to_string()),
        }
    }
    let merge_hint = "blocks interfere; treat the flat intervals as one singular set and build a single merged block";
    if setup.blocks.len() > 1 && frames.len() < setup.blocks.len() {
        report.recommendation = Some(merge_hint.into());
    }
    if geometry.len() == setup.blocks.len() && !geometry.is_empty() {
        let refs: Vec<&BlockFrame> = geometry.iter().collect();
        let scan_box = geometry.iter().skip(1).fold(geometry[0].r_prime().clone(), |b, f| b.hull(f.r_prime()));
        let pad = geometry.iter().map(|f| f.r_prime().extent(0)).max().unwrap() as i64;
        let scan_box = scan_box.pad(pad);
        let xs: Vec<f64> = (0..512).map(|k| (k as f64 + 0.5) / 512.0 - 0.5).collect();
        let gen4 = xs.iter().try_for_each(|&x| frame_placements(&refs, &setup.omega, x, &scan_box, false).map(|_| ()));
        match gen4 {
            Ok(()) => report.push("(gen4)", true, "copy supports disjoint over 512 phases"),
            Err(e) => {
                report.push("(gen4)", false, e.to_string());
                if setup.blocks.len() > 1 {
                    report.recommendation = Some(merge_hint.into());
                }
            }
        }
        let xs: Vec<f64> = (0..128).map(|k| (k as f64 + 0.5) / 128.0 - 0.5).collect();
        match uncovered_singular_site(&refs, &setup.f, &setup.omega, setup.c_reg, &xs, &setup.analysis_box) {
            Ok(None) => report.push("coverage", true, "singular sites lie in copies of S u (S+e1)"),
            Ok(Some((x, s))) => report.push("coverage", false, format!("site {s:?} singular at x = {x:.6} is not covered")),
            Err(e) => report.push("coverage", false, e.to_string()),
        }
        if construct && frames.len() == setup.blocks.len() {
            let model = setup.model(eps);
            for (j, fr) in frames.into_iter().enumerate() {
                match build_u0(fr, model.clone(), grid_points, setup.c_sep, HomotopyOptions::default()) {
                    Ok(fam) => {
                        report.push(&format!("(gen3) block {j}"), true, format!("kappa = {:.3e}", fam.path.kappa));
                        report.push(&format!("separation block {j}"), true, format!("min gap / eps = {:.4}", fam.separation));
                    }
                    Err(e @ Error::SeparationViolation { .. }) => {
                        report.push(&format!("(gen3) block {j}"), true, "not reached");
                        report.push(&format!("separation block {j}"), false, e.to_string());
                    }
                    Err(e) => report.push(&format!("(gen3) block {j}"), false, e.to_string()),
                }
            }
        }
    }
    for (k, w) in setup.windows.iter().enumerate() {
        report.push(
            &format!("window {k}"),
            true,
            format!(
                "[{:.6}, {:.6}] at E = {}, predicted mu = {}",
                w.left,
                w.right,
                w.energy,
                w.predicted_mu.map_or("-".to_string(), |m| m.to_string())
            ),
        );
    }
    report
}

fn chain_sampling(windows: &[(f64, f64, f64)], scale: f64, e_reg: f64) -> Result<SamplingFunction> {
    let mut specs = vec![PieceSpec::tangent(-0.5, windows[0].0, scale)];
    for (k, &(l, r, e)) in windows.iter().enumerate() {
        if k > 0 {
            specs.push(PieceSpec::linear_join(windows[k - 1].1, l));
        }
        specs.push(PieceSpec::flat(l, r, e));
    }
    specs.push(PieceSpec::tangent(windows.last().unwrap().1, 0.5, scale));
    SamplingFunction::from_specs(&specs, e_reg)
}

fn windows_with_prediction(f: &SamplingFunction, omega: &FrequencyVector) -> Vec<SingularWindow> {
    f.flat_pieces()
        .into_iter()
        .map(|(l, r, e)| SingularWindow { left: l, right: r, energy: e, predicted_mu: predicted_mu(f, omega, 0.5 * (l + r)) })
        .collect()
}

pub fn example1() -> Result<ExampleSetup> {
    Example1Config::canonical().setup()
}

/// The single flat piece in d = 2 with a small omega_1 so that (z5) holds.
pub fn example2_config() -> Example1Config {
    let omega = (3.0 - 5f64.sqrt()) / 80.0;
    Example1Config {
        left: -2.2 * omega,
        length: 4.4 * omega,
        omega,
        perpendicular: vec![(3.0 - 5f64.sqrt()) / 2.0],
        tangent_scale: 335.0,
        ..Example1Config::canonical()
    }
}

pub fn example2() -> Result<ExampleSetup> {
    example2_config().setup()
}

/// Two well separated flat pieces with independent blocks.
pub fn example3() -> Result<ExampleSetup> {
    let w = (3.0 - 5f64.sqrt()) / 20.0;
    let half = 2.2 * w;
    let wins = [(-0.25 - half, -0.25 + half, -30.0), (0.25 - half, 0.25 + half, 30.0)];
    let f = chain_sampling(&wins, 25.0, 33.0)?;
    let omega = FrequencyVector::unchecked(vec![w])?;
    let blocks = wins
        .iter()
        .map(|&(l, r, _)| block_for_windows(&[(l, r)], 0.5 * (l + r) - w, w, 3))
        .collect::<Result<Vec<_>>>()?;
    let frame = BlockFrame::new(blocks[0].base.clone(), 3, blocks[0].x0)?;
    Ok(ExampleSetup {
        name: "example3".into(),
        windows: windows_with_prediction(&f, &omega),
        f,
        omega,
        c_reg: 10.0,
        c_sep: 0.05,
        blocks,
        analysis_box: frame.r_prime().pad(1),
        note: None,
    })
}

/// Two flat pieces too close for separate blocks, merged into one.
pub fn example4() -> Result<ExampleSetup> {
    let w = (3.0 - 5f64.sqrt()) / 10.0;
    let wins = [(-2.2 * w, -0.8 * w, -5.0), (0.8 * w, 2.2 * w, 5.0)];
    let f = chain_sampling(&wins, 20.0, 8.0)?;
    let omega = FrequencyVector::unchecked(vec![w])?;
    let merged = block_for_windows(&[(wins[0].0, wins[0].1), (wins[1].0, wins[1].1)], -w, w, 3)?;
    let frame = BlockFrame::new(merged.base.clone(), 3, merged.x0)?;
    Ok(ExampleSetup {
        name: "example4".into(),
        windows: windows_with_prediction(&f, &omega),
        f,
        omega,
        c_reg: 10.0,
        c_sep: 0.05,
        blocks: vec![merged],
        analysis_box: frame.r_prime().pad(1),
        note: Some("separate blocks per piece overlap; merged into one singular set".into()),
    })
}

/// The two-block version of [`example4`], which fails (gen4).
pub fn example4_separate() -> Result<ExampleSetup> {
    let mut s = example4()?;
    let w = s.omega.omega[0];
    s.blocks = s
        .windows
        .iter()
        .map(|win| block_for_windows(&[(win.left, win.right)], 0.5 * (win.left + win.right) - w, w, 3))
        .collect::<Result<Vec<_>>>()?;
    s.name = "example4-separate".into();
    s.note = None;
    Ok(s)
}

/// Chain of 2k - 1 intervals of length omega/2 with I_{j+1} = I_j + omega.
pub fn example5(k: usize) -> Result<ExampleSetup> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let w = (3.0 - 5f64.sqrt()) / 10.0;
    let n = 2 * k - 1;
    let wins: Vec<(f64, f64, f64)> = (0..n)
        .map(|j| {
            let c = (j as f64 - (k - 1) as f64) * w;
            (c - 0.25 * w, c + 0.25 * w, 10.0 * (j as f64 - (k - 1) as f64))
        })
        .collect();
    let e_max = 10.0 * (k - 1) as f64;
    let f = chain_sampling(&wins, 20.0, e_max + 3.0)?;
    let omega = FrequencyVector::unchecked(vec![w])?;
    let spans: Vec<(f64, f64)> = wins.iter().map(|&(l, r, _)| (l, r)).collect();
    let block = block_for_windows(&spans, -w, w, 3)?;
    let frame = BlockFrame::new(block.base.clone(), 3, block.x0)?;
    Ok(ExampleSetup {
        name: format!("example5-k{k}"),
        windows: windows_with_prediction(&f, &omega),
        f,
        omega,
        c_reg: 10.0,
        c_sep: 0.05,
        blocks: vec![block],
        analysis_box: frame.r_prime().pad(1),
        note: None,
    })
}

/// A star of intervals in d = 2: the centre piece is flanked by pieces at
/// +-omega_1 and +-omega_2. Only exponents are predicted; no blocks are built.
pub fn example6() -> Result<ExampleSetup> {
    let w1 = (3.0 - 5f64.sqrt()) / 20.0;
    let w2 = (5f64.sqrt() - 1.0) / 4.0;
    let centres = [(-w2, -20.0), (-w1, -10.0), (0.0, 0.0), (w1, 10.0), (w2, 20.0)];
    let wins: Vec<(f64, f64, f64)> = centres.iter().map(|&(c, e)| (c - 0.25 * w1, c + 0.25 * w1, e)).collect();
    let f = chain_sampling(&wins, 20.0, 23.0)?;
    let omega = FrequencyVector::unchecked(vec![w1, w2])?;
    Ok(ExampleSetup {
        name: "example6".into(),
        windows: windows_with_prediction(&f, &omega),
        f,
        omega,
        c_reg: 10.0,
        c_sep: 0.05,
        blocks: vec![],
        analysis_box: LatticeBox::new(vec![-3, -3], vec![3, 3])?,
        note: Some("tree of intervals; exponents predicted from escape distances only".into()),
    })
}

/// All named examples.
pub fn example_library() -> Result<Vec<ExampleSetup>> {
    Ok(vec![example1()?, example2()?, example3()?, example4()?, example5(2)?, example6()?])
}

pub fn example_by_name(name: &str) -> Result<ExampleSetup> {
    match name {
        "example1" => example1(),
        "example2" => example2(),
        "example3" => example3(),
        "example4" => example4(),
        "example4-separate" => example4_separate(),
        "example6" => example6(),
        _ => {
            if let Some(k) = name.strip_prefix("example5-k").and_then(|k| k.parse().ok()) {
                example5(k)
            } else if name == "example5" {
                example5(2)
            } else {
                Err(Error::InvalidInput(format!("unknown example `{name}`")))
            }
        }
    }
}

/// Fitted exponent of the smallest f2' over a flat window.
#[derive(Clone, Debug, PartialEq)]
pub struct MuFit {
    pub window: SingularWindow,
    pub eps: Vec<f64>,
    /// min f2' over the window samples, per eps.
    pub floor: Vec<f64>,
    /// median f2' over the window samples, per eps.
    pub median: Vec<f64>,
    pub fitted: f64,
    pub residual: f64,
}

impl MuFit {
    /// |fitted - predicted| <= band.
    pub fn within(&self, band: f64) -> bool {
        self.window.predicted_mu.is_some_and(|p| (self.fitted - p).abs() <= band)
    }
}

/// f2' samples over each window of `setup` at every eps, and log-log fits of the floor.
pub fn mu_fits(setup: &ExampleSetup, eps_list: &[f64], samples: usize, grid_points: usize) -> Result<Vec<MuFit>> {
    let runs: Vec<MovingBlockRun> = eps_list
        .par_iter()
        .map(|&e| setup.build(e, grid_points, &HomotopyOptions::default()))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for w in &setup.windows {
        let ys: Vec<f64> = (0..samples).map(|k| w.left + (w.right - w.left) * (k as f64 + 0.5) / samples as f64).collect();
        let mut floor = Vec::new();
        let mut median = Vec::new();
        for run in &runs {
            let mut vals: Vec<f64> = ys.par_iter().map(|&y| run.f2_prime_at_phase(y)).collect::<Result<_>>()?;
            vals.sort_by(f64::total_cmp);
            floor.push(vals[0]);
            median.push(vals[vals.len() / 2]);
        }
        let fit = fit_power_law(eps_list, &floor).ok_or_else(|| Error::HypothesisViolation("f2' floor is not positive".into()))?;
        out.push(MuFit { window: w.clone(), eps: eps_list.to_vec(), floor, median, fitted: fit.slope, residual: fit.residual });
    }
    Ok(out)
}

/// Fitted eps-exponent of one H2 coupling leaving the singular block.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeExponent {
    pub x: f64,
    pub from: Site,
    pub to: Site,
    pub values: Vec<f64>,
    pub fitted: f64,
}

/// Exponents of all residual couplings from the first block's S u (S+e1)
/// to the rest of the box, at each x in `xs`.
pub fn residual_exponents(setup: &ExampleSetup, eps_list: &[f64], xs: &[f64], grid_points: usize) -> Result<Vec<EdgeExponent>> {
    let runs: Vec<MovingBlockRun> = eps_list
        .par_iter()
        .map(|&e| setup.build(e, grid_points, &HomotopyOptions::default()))
        .collect::<Result<_>>()?;
    let block: Vec<Site> = runs[0].families[0].frame.doubled().to_vec();
    let per_x: Vec<Vec<EdgeExponent>> = xs
        .par_iter()
        .map(|&x| {
            let mut table: BTreeMap<(Site, Site), Vec<f64>> = BTreeMap::new();
            for (k, run) in runs.iter().enumerate() {
                for (m, n, v) in run.conjugate(x)?.couplings_leaving(&block) {
                    table.entry((m, n)).or_insert_with(|| vec![0.0; runs.len()])[k] = v.abs();
                }
            }
            Ok(table
                .into_iter()
                .filter(|(_, v)| v.iter().all(|a| *a > 0.0))
                .map(|((from, to), values)| {
                    let fitted = fit_power_law(eps_list, &values).map_or(f64::NAN, |f| f.slope);
                    EdgeExponent { x, from, to, values, fitted }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_x.into_iter().flatten().collect())
}

/// Fitted exponent of one entry of U_{R'}(x) against its worst-case power.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternEntry {
    pub x: f64,
    pub row: Site,
    pub column: Site,
    pub displayed: i64,
    pub fitted: f64,
}

/// Entry exponents of the first block's diagonalizer at each x in `xs`.
/// Entries that vanish at some eps are skipped.
pub fn pattern_exponents(setup: &ExampleSetup, eps_list: &[f64], xs: &[f64], grid_points: usize) -> Result<Vec<PatternEntry>> {
    let runs: Vec<MovingBlockRun> = eps_list
        .par_iter()
        .map(|&e| setup.build(e, grid_points, &HomotopyOptions::default()))
        .collect::<Result<_>>()?;
    let fam0 = &runs[0].families[0];
    let rp = fam0.frame.r_prime().clone();
    let mut out = Vec::new();
    for &x in xs {
        let frames: Vec<DMatrix<f64>> = runs.iter().map(|r| r.families[0].diagonalize(x).map(|t| t.frame)).collect::<Result<_>>()?;
        for (i, row) in rp.sites().enumerate() {
            for (j, col) in rp.sites().enumerate() {
                let vals: Vec<f64> = frames.iter().map(|u| u[(i, j)].abs()).collect();
                if vals.contains(&0.0) {
                    continue;
                }
                let fitted = fit_power_law(eps_list, &vals).map_or(f64::NAN, |f| f.slope);
                out.push(PatternEntry { x, displayed: worst_case_exponent(&fam0.frame, &row, &col), row: row.clone(), column: col.clone(), fitted });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_geometry() {
        let cfg = Example1Config::canonical();
        assert_eq!(cfg.p(), 4);
        assert!((cfg.z() - 0.4).abs() < 1e-9);
        assert_eq!(cfg.m(), 5);
        let s = cfg.setup().unwrap();
        assert_eq!(s.blocks[0].base, (-2..=2).map(|i| vec![i]).collect::<Vec<_>>());
        assert_eq!(s.analysis_box, LatticeBox::interval(-6, 7).unwrap());
        assert_eq!(s.windows[0].predicted_mu, Some(2.0));
    }

    #[test]
    fn canonical_checklist_passes() {
        let r = Example1Config::canonical().verify();
        assert!(r.all_passed(), "{}", r.to_text());
    }

    #[test]
    fn integer_multiple_fails_z2() {
        let mut cfg = Example1Config::canonical();
        cfg.length = 3.0 * cfg.omega;
        cfg.left = -1.5 * cfg.omega;
        let r = cfg.verify();
        assert!(!r.get("(z2)").unwrap().passed);
        assert_eq!(r.first_failure().unwrap().name, "(z2)");
    }

    #[test]
    fn chain_predictions() {
        let s = example5(2).unwrap();
        let mus: Vec<Option<f64>> = s.windows.iter().map(|w| w.predicted_mu).collect();
        assert_eq!(mus, vec![Some(2.0), Some(4.0), Some(2.0)]);
        assert_eq!(s.blocks[0].base, (-1..=1).map(|i| vec![i]).collect::<Vec<_>>());
        let s3 = example5(3).unwrap();
        assert_eq!(s3.windows[2].predicted_mu, Some(6.0));
    }

    #[test]
    fn tree_predictions() {
        let s = example6().unwrap();
        let mus: Vec<Option<f64>> = s.windows.iter().map(|w| w.predicted_mu).collect();
        assert_eq!(mus, vec![Some(2.0), Some(2.0), Some(4.0), Some(2.0), Some(2.0)]);
    }

    #[test]
    fn worst_case_pattern_corners() {
        let s = example1().unwrap();
        let fr = BlockFrame::new(s.blocks[0].base.clone(), 3, s.blocks[0].x0).unwrap();
        assert_eq!(worst_case_exponent(&fr, &[-5], &[6]), 11);
        assert_eq!(worst_case_exponent(&fr, &[-5], &[-2]), 3);
        assert_eq!(worst_case_exponent(&fr, &[0], &[3]), 0);
        assert_eq!(worst_case_exponent(&fr, &[4], &[0]), 1);
        assert_eq!(worst_case_exponent(&fr, &[-2], &[5]), 7);
    }

    #[test]
    fn separate_close_blocks_recommend_merge() {
        let r = verify_setup(&example4_separate().unwrap(), 1e-2, 16, false);
        assert!(!r.get("(gen4)").unwrap_or_else(|| panic!("{}", r.to_text())).passed, "{}", r.to_text());
        assert!(r.recommendation.is_some());
    }
}
