//! Localization diagnostics and the integrated density of states.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_line, fit_power_law};
use crate::lattice::{distance_to_set, LatticeBox, Site};
use crate::linalg::dense_eigenvalues;
use crate::operator::{build_h, FiniteOperator};
use crate::sampling::{FrequencyVector, SamplingFunction};

/// Cube of side `size` centred at the origin (for even sizes the extra site is on the left).
pub fn centred_box(size: usize, d: usize) -> Result<LatticeBox> {
    if size == 0 {
        return Err(Error::InvalidBox("box size must be positive".into()));
    }
    let lo = -((size / 2) as i64);
    let hi = lo + size as i64 - 1;
    LatticeBox::new(vec![lo; d], vec![hi; d])
}

/// `count` phases in [-1/2, 1/2) drawn from `seed`, rejecting any whose box
/// operator would hit a pole.
pub fn draw_phases(f: &SamplingFunction, omega: &FrequencyVector, bx: &LatticeBox, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: f64 = rng.random_range(-0.5..0.5);
        if bx.sites().all(|n| f.eval(omega.phase(x, &n)).is_ok()) {
            out.push(x);
        }
    }
    out
}

/// Pooled eigenvalues of all phase samples inside [center - half_width, center + half_width).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenWindow {
    pub center: f64,
    pub half_width: f64,
    pub eigenvalues: Vec<f64>,
}

/// Phase-averaged normalized eigenvalue counting function.
#[derive(Clone, Debug, PartialEq)]
pub struct IdsCurve {
    pub energy_grid: Vec<f64>,
    pub counts: Vec<f64>,
    pub box_size: usize,
    pub eps: f64,
    /// Number of sites times number of phase samples.
    pub normalization: f64,
    pub window: Option<EigenWindow>,
}

impl IdsCurve {
    /// Difference quotient of the curve on the grid midpoints.
    pub fn derivative(&self) -> Vec<(f64, f64)> {
        self.energy_grid
            .windows(2)
            .zip(self.counts.windows(2))
            .map(|(e, c)| (0.5 * (e[0] + e[1]), (c[1] - c[0]) / (e[1] - e[0])))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# eps = {:e}, box size = {}", self.eps, self.box_size)?;
        writeln!(w, "energy,value")?;
        for (e, c) in self.energy_grid.iter().zip(&self.counts) {
            writeln!(w, "{e:.12e},{c:.12e}")?;
        }
        Ok(())
    }

    pub fn write_derivative_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# eps = {:e}, box size = {}", self.eps, self.box_size)?;
        writeln!(w, "energy,density")?;
        for (e, c) in self.derivative() {
            writeln!(w, "{e:.12e},{c:.12e}")?;
        }
        Ok(())
    }
}

enum BoxSpectrum {
    Chain(crate::linalg::Tridiagonal),
    Dense(Vec<f64>),
}

impl BoxSpectrum {
    fn of(h: &FiniteOperator) -> Self {
        match h.tridiagonal() {
            Some(t) => BoxSpectrum::Chain(t),
            None => BoxSpectrum::Dense(dense_eigenvalues(&h.to_dense())),
        }
    }

    fn count_le(&self, e: f64) -> usize {
        match self {
            BoxSpectrum::Chain(t) => t.count_below(e.next_up()),
            BoxSpectrum::Dense(v) => v.partition_point(|x| *x <= e),
        }
    }

    fn within(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            BoxSpectrum::Chain(t) => t.eigenvalues_in(lo, hi),
            BoxSpectrum::Dense(v) => v.iter().copied().filter(|x| *x >= lo && *x < hi).collect(),
        }
    }
}

/// IDS of H(x) on a centred box of side `box_size`, averaged over the phases `xs`.
/// With `window = Some((center, half_width))` the eigenvalues near `center`
/// are pooled as well, for spike fitting.
pub fn compute_ids_at(
    f: &SamplingFunction,
    omega: &FrequencyVector,
    eps: f64,
    box_size: usize,
    xs: &[f64],
    energy_grid: &[f64],
    window: Option<(f64, f64)>,
) -> Result<IdsCurve> {
    if energy_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("energy grid must be increasing".into()));
    }
    if xs.is_empty() {
        return Err(Error::InvalidInput("no phase samples".into()));
    }
    let bx = centred_box(box_size, omega.dim())?;
    let per_x: Vec<(Vec<usize>, Vec<f64>)> = xs
        .par_iter()
        .map(|&x| {
            let spec = BoxSpectrum::of(&build_h(f, omega, eps, x, &bx)?);
            let counts = energy_grid.iter().map(|&e| spec.count_le(e)).collect();
            let near = window.map_or_else(Vec::new, |(c, w)| spec.within(c - w, c + w));
            Ok((counts, near))
        })
        .collect::<Result<_>>()?;
    let normalization = (bx.len() * xs.len()) as f64;
    let mut counts = vec![0.0; energy_grid.len()];
    let mut pooled = Vec::new();
    for (c, near) in per_x {
        for (acc, k) in counts.iter_mut().zip(c) {
            *acc += k as f64;
        }
        pooled.extend(near);
    }
    counts.iter_mut().for_each(|c| *c /= normalization);
    pooled.sort_by(f64::total_cmp);
    Ok(IdsCurve {
        energy_grid: energy_grid.to_vec(),
        counts,
        box_size,
        eps,
        normalization,
        window: window.map(|(center, half_width)| EigenWindow { center, half_width, eigenvalues: pooled }),
    })
}

/// [`compute_ids_at`] with `x_samples` pole-free phases drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn compute_ids(
    f: &SamplingFunction,
    omega: &FrequencyVector,
    eps: f64,
    box_size: usize,
    x_samples: usize,
    energy_grid: &[f64],
    seed: u64,
    window: Option<(f64, f64)>,
) -> Result<IdsCurve> {
    let bx = centred_box(box_size, omega.dim())?;
    let xs = draw_phases(f, omega, &bx, x_samples, seed);
    compute_ids_at(f, omega, eps, box_size, &xs, energy_grid, window)
}

/// Peak of the smoothed density near the target energy at one eps.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikePeak {
    pub eps: f64,
    pub location: f64,
    pub height: f64,
    pub width: f64,
    /// Eigenvalues within one width of the peak.
    pub mass: usize,
    /// 10-90% interquantile range of those eigenvalues; unlike the width it
    /// does not depend on the kernel.
    pub spread: f64,
    pub background: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikeFit {
    pub peaks: Vec<SpikePeak>,
    pub height_exponent: f64,
    pub width_exponent: f64,
    pub spread_exponent: f64,
}

impl SpikeFit {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# height exponent = {:.6}, width exponent = {:.6}, spread exponent = {:.6}",
            self.height_exponent, self.width_exponent, self.spread_exponent
        )?;
        writeln!(w, "eps,height,width,spread,location,mass")?;
        for p in &self.peaks {
            writeln!(w, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}", p.eps, p.height, p.width, p.spread, p.location, p.mass)?;
        }
        Ok(())
    }
}

/// Fewest eigenvalues that count as a spike rather than a stray level.
pub const MIN_SPIKE_MASS: usize = 20;

/// Highest local maximum of the Gaussian-smoothed density of the pooled
/// window eigenvalues within eps/2 of `energy`, with bandwidth 0.5 eps^mu.
pub fn find_spike(curve: &IdsCurve, energy: f64, mu: f64) -> Result<SpikePeak> {
    let win = curve
        .window
        .as_ref()
        .ok_or_else(|| Error::PeakNotFound("curve carries no eigenvalue window".into()))?;
    let eps = curve.eps;
    let h = 0.5 * eps.powf(mu);
    let span = 0.5 * eps;
    if win.center - win.half_width > energy - span - 8.0 * h || win.center + win.half_width < energy + span + 8.0 * h {
        return Err(Error::PeakNotFound("eigenvalue window does not cover the search range".into()));
    }
    let ev = &win.eigenvalues;
    let norm = curve.normalization * h * (2.0 * std::f64::consts::PI).sqrt();
    let density = |e: f64| -> f64 {
        let a = ev.partition_point(|v| *v < e - 6.0 * h);
        let b = ev.partition_point(|v| *v <= e + 6.0 * h);
        ev[a..b].iter().map(|v| (-0.5 * ((v - e) / h).powi(2)).exp()).sum::<f64>() / norm
    };
    let background = {
        let lo = energy - 1.0;
        let hi = energy + 1.0;
        let i = |e: f64| interpolate(&curve.energy_grid, &curve.counts, e);
        match (i(lo), i(hi)) {
            (Some(a), Some(b)) => (b - a) / (hi - lo),
            _ => {
                let a = ev.partition_point(|v| *v < lo.max(win.center - win.half_width));
                let b = ev.partition_point(|v| *v < hi.min(win.center + win.half_width));
                (b - a) as f64 / (curve.normalization * (hi.min(win.center + win.half_width) - lo.max(win.center - win.half_width)))
            }
        }
    };
    let step = h / 4.0;
    let n = (2.0 * span / step).ceil() as usize + 1;
    let grid = |k: usize| energy - span + k as f64 * step;
    let occupied = |e: f64| {
        let a = ev.partition_point(|v| *v < e - 4.0 * h);
        a < ev.len() && ev[a] <= e + 4.0 * h
    };
    let mut best: Option<(f64, f64)> = None;
    let mut prev = (f64::NAN, 0.0, 0.0);
    for k in 0..n {
        let e = grid(k);
        let v = if occupied(e) { density(e) } else { 0.0 };
        // prev holds (e, value, value before it).
        if prev.0.is_finite() && prev.1 > 0.0 && prev.1 >= prev.2 && prev.1 > v && best.is_none_or(|b| prev.1 > b.1) {
            best = Some((prev.0, prev.1));
        }
        prev = (e, v, prev.1);
    }
    let (location, height) = best.ok_or_else(|| Error::PeakNotFound(format!("no local maximum within {span:e} of {energy}")))?;
    let half = height / 2.0;
    let mut left = location;
    while density(left) > half && location - left < 2.0 * span {
        left -= step / 4.0;
    }
    let mut right = location;
    while density(right) > half && right - location < 2.0 * span {
        right += step / 4.0;
    }
    let width = right - left;
    let (a, b) = (ev.partition_point(|v| *v < location - width), ev.partition_point(|v| *v <= location + width));
    let mass = b - a;
    let spread = if mass >= 2 {
        let q = |p: f64| ev[a + ((mass - 1) as f64 * p).round() as usize];
        q(0.9) - q(0.1)
    } else {
        0.0
    };
    let peak = SpikePeak { eps, location, height, width, mass, spread, background };
    if height <= 2.0 * background {
        return Err(Error::PeakNotFound(format!("peak {height:.3e} does not exceed twice the background {background:.3e}")));
    }
    if mass < MIN_SPIKE_MASS {
        return Err(Error::PeakNotFound(format!("peak at {location:.6e} carries only {mass} eigenvalues")));
    }
    Ok(peak)
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > *xs.last().unwrap() {
        return None;
    }
    let k = xs.partition_point(|v| *v < x).max(1).min(xs.len() - 1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    Some(ys[k - 1] + t * (ys[k] - ys[k - 1]))
}

/// Log-log slopes of spike height and width against eps.
pub fn spike_fit(curves: &[IdsCurve], energy: f64, mu: f64) -> Result<SpikeFit> {
    if curves.len() < 3 {
        return Err(Error::InvalidInput("spike fits need at least three eps values".into()));
    }
    let (lo, hi) = curves.iter().fold((f64::INFINITY, 0f64), |(a, b), c| (a.min(c.eps), b.max(c.eps)));
    if hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::InvalidInput("eps values must span at least one decade".into()));
    }
    let peaks: Vec<SpikePeak> = curves.iter().map(|c| find_spike(c, energy, mu)).collect::<Result<_>>()?;
    let eps: Vec<f64> = peaks.iter().map(|p| p.eps).collect();
    let heights: Vec<f64> = peaks.iter().map(|p| p.height).collect();
    let widths: Vec<f64> = peaks.iter().map(|p| p.width).collect();
    let hf = fit_power_law(&eps, &heights).ok_or_else(|| Error::PeakNotFound("height fit failed".into()))?;
    let wf = fit_power_law(&eps, &widths).ok_or_else(|| Error::PeakNotFound("width fit failed".into()))?;
    let spreads: Vec<f64> = peaks.iter().map(|p| p.spread).collect();
    let spread_exponent = fit_power_law(&eps, &spreads).map_or(f64::NAN, |f| f.slope);
    Ok(SpikeFit { peaks, height_exponent: hf.slope, width_exponent: wf.slope, spread_exponent })
}

/// Shell maxima of an eigenvector around a site set, with an exponential fit.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayProfile {
    pub center: Vec<Site>,
    /// (distance, max |psi| on that shell).
    pub samples: Vec<(i64, f64)>,
    /// -d log|psi| / d dist; infinite when the vector lives on the centre only.
    pub fitted_rate: f64,
    pub fitted_prefactor: f64,
    pub residual: f64,
}

impl DecayProfile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# rate = {:.6}, prefactor = {:.6e}, residual = {:.3e}", self.fitted_rate, self.fitted_prefactor, self.residual)?;
        writeln!(w, "dist,amp")?;
        for (d, a) in &self.samples {
            writeln!(w, "{d},{a:.12e}")?;
        }
        Ok(())
    }
}

/// Amplitudes below this fraction of the largest one are rounding noise.
pub const DECAY_FLOOR: f64 = 1e-13;

/// Shell-maximum profile of `eigvec` around `center` (a site or a block).
pub fn decay_profile(h: &FiniteOperator, eigvec: &DVector<f64>, center: &[Site]) -> Result<DecayProfile> {
    let bx = h.lattice();
    if eigvec.len() != bx.len() {
        return Err(Error::InvalidInput(format!("vector of length {} on a box of {} sites", eigvec.len(), bx.len())));
    }
    if center.is_empty() {
        return Err(Error::InvalidInput("empty centre".into()));
    }
    let mut shells: Vec<f64> = Vec::new();
    for (i, n) in bx.sites().enumerate() {
        let d = distance_to_set(&n, center) as usize;
        if shells.len() <= d {
            shells.resize(d + 1, 0.0);
        }
        shells[d] = shells[d].max(eigvec[i].abs());
    }
    let samples: Vec<(i64, f64)> = shells.iter().enumerate().map(|(d, a)| (d as i64, *a)).collect();
    let top = shells.iter().copied().fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|(_, a)| *a > DECAY_FLOOR * top)
        .map(|(d, a)| (*d as f64, a.ln()))
        .unzip();
    let (fitted_rate, fitted_prefactor, residual) = match fit_line(&xs, &ys) {
        Some(fit) => (-fit.slope, fit.intercept.exp(), fit.residual),
        None => (f64::INFINITY, top, 0.0),
    };
    Ok(DecayProfile { center: center.to_vec(), samples, fitted_rate, fitted_prefactor, residual })
}

/// Inverse participation ratio sum |psi|^4 of a normalized vector.
pub fn ipr(eigvec: &DVector<f64>) -> f64 {
    eigvec.iter().map(|v| v.powi(4)).sum()
}
