//! Piecewise monotone 1-periodic sampling functions with flat pieces,
//! regularity certificates and Diophantine frequency vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};

/// Evaluation closer than this to 1/2 + Z is refused.
pub const POLE_GUARD: f64 = 1e-12;
/// Step of the one-sided difference quotients used at kinks.
pub const KINK_STEP: f64 = 1e-8;
const JOIN_TOL: f64 = 1e-9;

/// Closed-form increasing map used on a monotone piece (before the offset).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MonotoneKind {
    /// `scale * tan(pi y)`.
    Tangent { scale: f64 },
    /// `slope * y`.
    Linear { slope: f64 },
    /// `scale * sign(y - center) * |y - center|^exponent`.
    OddPower { scale: f64, exponent: f64, center: f64 },
}

impl MonotoneKind {
    fn value(&self, y: f64) -> f64 {
        match *self {
            MonotoneKind::Tangent { scale } => scale * (std::f64::consts::PI * y).tan(),
            MonotoneKind::Linear { slope } => slope * y,
            MonotoneKind::OddPower { scale, exponent, center } => {
                let u = y - center;
                scale * u.signum() * u.abs().powf(exponent)
            }
        }
    }

    fn derivative(&self, y: f64) -> f64 {
        match *self {
            MonotoneKind::Tangent { scale } => {
                let c = (std::f64::consts::PI * y).cos();
                scale * std::f64::consts::PI / (c * c)
            }
            MonotoneKind::Linear { slope } => slope,
            MonotoneKind::OddPower { scale, exponent, center } => {
                let u = (y - center).abs();
                if exponent == 1.0 {
                    scale
                } else {
                    scale * exponent * u.powf(exponent - 1.0)
                }
            }
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            MonotoneKind::Tangent { scale } => scale > 0.0 && scale.is_finite(),
            MonotoneKind::Linear { slope } => slope > 0.0 && slope.is_finite(),
            MonotoneKind::OddPower { scale, exponent, center } => {
                scale > 0.0 && exponent >= 1.0 && exponent.is_finite() && center.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSampling(format!("{self:?} is not an increasing Lipschitz map")))
        }
    }
}

/// One piece of the tiling of (-1/2, 1/2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    /// `f = value` on `[left, left + length]`.
    Flat { left: f64, length: f64, value: f64 },
    /// `f = kind(y) + offset` on `(left, right)`.
    Monotone { left: f64, right: f64, kind: MonotoneKind, offset: f64 },
}

impl Piece {
    pub fn left(&self) -> f64 {
        match *self {
            Piece::Flat { left, .. } | Piece::Monotone { left, .. } => left,
        }
    }

    pub fn right(&self) -> f64 {
        match *self {
            Piece::Flat { left, length, .. } => left + length,
            Piece::Monotone { right, .. } => right,
        }
    }

    fn value(&self, y: f64) -> f64 {
        match *self {
            Piece::Flat { value, .. } => value,
            Piece::Monotone { kind, offset, .. } => kind.value(y) + offset,
        }
    }

    fn derivative(&self, y: f64) -> f64 {
        match *self {
            Piece::Flat { .. } => 0.0,
            Piece::Monotone { kind, .. } => kind.derivative(y),
        }
    }

    fn touches_pole(&self) -> bool {
        self.left() <= -0.5 || self.right() >= 0.5
    }
}

/// Serialized description of a piece; missing offsets (and missing linear
/// slopes) are solved from continuity with the neighbouring pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub kind: PieceKind,
    pub left: f64,
    pub right: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceKind {
    Flat,
    Tangent,
    Linear,
    OddPower,
}

impl PieceSpec {
    pub fn flat(left: f64, right: f64, value: f64) -> Self {
        Self::bare(PieceKind::Flat, left, right).with_value(value)
    }

    pub fn tangent(left: f64, right: f64, scale: f64) -> Self {
        let mut p = Self::bare(PieceKind::Tangent, left, right);
        p.scale = Some(scale);
        p
    }

    /// Linear piece whose slope and offset are fixed by its neighbours.
    pub fn linear_join(left: f64, right: f64) -> Self {
        Self::bare(PieceKind::Linear, left, right)
    }

    pub fn linear(left: f64, right: f64, slope: f64) -> Self {
        let mut p = Self::bare(PieceKind::Linear, left, right);
        p.slope = Some(slope);
        p
    }

    pub fn odd_power(left: f64, right: f64, scale: f64, exponent: f64, center: f64) -> Self {
        let mut p = Self::bare(PieceKind::OddPower, left, right);
        p.scale = Some(scale);
        p.exponent = Some(exponent);
        p.center = Some(center);
        p
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = Some(offset);
        self
    }

    fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    fn bare(kind: PieceKind, left: f64, right: f64) -> Self {
        Self { kind, left, right, value: None, scale: None, slope: None, exponent: None, center: None, offset: None }
    }
}

/// 1-periodic non-decreasing sampling function with poles at 1/2 + Z,
/// optionally deformed by the homotopy term `t * frac(x - 1/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingFunction {
    pieces: Vec<Piece>,
    e_reg: f64,
    t: f64,
}

impl SamplingFunction {
    pub fn new(pieces: Vec<Piece>, e_reg: f64) -> Result<Self> {
        validate(&pieces)?;
        Ok(Self { pieces, e_reg, t: 0.0 })
    }

    /// Builds from specs, solving missing offsets and join slopes by continuity.
    pub fn from_specs(specs: &[PieceSpec], e_reg: f64) -> Result<Self> {
        Self::new(resolve_specs(specs)?, e_reg)
    }

    /// Maryland model `scale * tan(pi x)`.
    pub fn tangent(scale: f64) -> Result<Self> {
        Self::new(
            vec![Piece::Monotone { left: -0.5, right: 0.5, kind: MonotoneKind::Tangent { scale }, offset: 0.0 }],
            f64::INFINITY,
        )
    }

    /// A single flat piece `[left, left+length]` at `value` with scaled-tangent flanks.
    pub fn single_flat(left: f64, length: f64, value: f64, scale: f64, e_reg: f64) -> Result<Self> {
        Self::from_specs(
            &[
                PieceSpec::tangent(-0.5, left, scale),
                PieceSpec::flat(left, left + length, value),
                PieceSpec::tangent(left + length, 0.5, scale),
            ],
            e_reg,
        )
    }

    /// The same function with homotopy parameter `t`.
    pub fn with_t(&self, t: f64) -> Self {
        Self { pieces: self.pieces.clone(), e_reg: self.e_reg, t }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn e_reg(&self) -> f64 {
        self.e_reg
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Flat pieces as `(left, right, value)`.
    pub fn flat_pieces(&self) -> Vec<(f64, f64, f64)> {
        self.pieces
            .iter()
            .filter_map(|p| match *p {
                Piece::Flat { left, length, value } => Some((left, left + length, value)),
                _ => None,
            })
            .collect()
    }

    /// `x` reduced into [-1/2, 1/2), refusing points next to a pole.
    pub fn reduce(x: f64) -> Result<f64> {
        let y = x - x.round();
        if 0.5 - y.abs() < POLE_GUARD {
            return Err(Error::PoleProximity { phase: x, site: None });
        }
        Ok(y)
    }

    fn piece_at(&self, y: f64) -> &Piece {
        let i = self.pieces.partition_point(|p| p.right() < y);
        &self.pieces[i.min(self.pieces.len() - 1)]
    }

    fn base_value(&self, y: f64) -> f64 {
        self.piece_at(y).value(y)
    }

    /// f_t(x).
    pub fn eval(&self, x: f64) -> Result<f64> {
        let y = Self::reduce(x)?;
        Ok(self.base_value(y) + self.t * (y + 0.5))
    }

    /// f_t'(x); at a kink the smaller one-sided difference quotient.
    pub fn eval_derivative(&self, x: f64) -> Result<f64> {
        let y = Self::reduce(x)?;
        let near_joint = self.pieces[..self.pieces.len() - 1].iter().any(|p| (p.right() - y).abs() <= KINK_STEP);
        let d = if near_joint {
            let h = KINK_STEP;
            let up = (self.base_value(y + h) - self.base_value(y)) / h;
            let down = (self.base_value(y) - self.base_value(y - h)) / h;
            up.min(down)
        } else {
            self.piece_at(y).derivative(y)
        };
        Ok(d + self.t)
    }

    fn interior_joints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces[..self.pieces.len() - 1].iter().map(|p| p.right())
    }

    /// Largest reduced y with f_t(y) <= level (f_t is continuous and non-decreasing on (-1/2,1/2)).
    fn preimage_edge(&self, level: f64, upper: bool) -> f64 {
        let f = |y: f64| self.base_value(y) + self.t * (y + 0.5);
        let mut lo = -0.5 + 2.0 * POLE_GUARD;
        let mut hi = 0.5 - 2.0 * POLE_GUARD;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let v = f(mid);
            let go_right = if upper { v <= level } else { v < level };
            if go_right {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Checks (cr0)-(cr2) at `x0` on 10^4-point grids.
    pub fn certify_regularity(&self, x0: f64, c_reg: f64) -> Result<RegularityCertificate> {
        const GRID: usize = 10_000;
        const SLACK: f64 = 1e-10;
        let y0 = Self::reduce(x0)?;
        let f0 = self.base_value(y0) + self.t * (y0 + 0.5);
        let a = self.preimage_edge(f0 - 2.0, true);
        let b = self.preimage_edge(f0 + 2.0, false);
        let mut failure = None;

        // (cr0): strictly increasing on the window, no flat piece inside.
        let grid: Vec<f64> = (0..GRID).map(|i| a + (b - a) * (i as f64 + 0.5) / GRID as f64).collect();
        let mut values = Vec::with_capacity(GRID);
        for &y in &grid {
            values.push(self.eval(y)?);
        }
        if self.t == 0.0 && self.flat_pieces().iter().any(|&(l, r, _)| l < b && r > a) {
            failure = Some("flat piece inside the pre-image window".to_string());
        } else if values.windows(2).any(|w| w[1] <= w[0]) {
            failure = Some("not one-to-one on the pre-image window".to_string());
        }

        // (cr1): D_min <= f' <= C_reg D_min with D_min >= 1.
        let mut derivs = Vec::with_capacity(GRID + 8);
        for &y in &grid {
            derivs.push(self.eval_derivative(y)?);
        }
        for j in self.interior_joints() {
            if j > a && j < b {
                derivs.push(self.eval_derivative(j)?);
            }
        }
        let d_min = derivs.iter().copied().fold(f64::INFINITY, f64::min);
        let d_max = derivs.iter().copied().fold(0.0, f64::max);
        if failure.is_none() {
            if d_min < 1.0 {
                failure = Some(format!("D_min = {d_min:.3e} < 1"));
            } else if d_max > c_reg * d_min * (1.0 + SLACK) {
                failure = Some(format!("derivative ratio {:.3} exceeds C_reg = {c_reg}", d_max / d_min));
            }
        }

        // (cr2): |g'| <= C_reg D_min off the +-1 window, g = 1/(f - f0).
        if failure.is_none() {
            let a1 = self.preimage_edge(f0 - 1.0, true);
            let b1 = self.preimage_edge(f0 + 1.0, false);
            let span = a1 + 1.0 - b1;
            let bound = c_reg * d_min * (1.0 + SLACK);
            for i in 0..GRID {
                let z = b1 + span * (i as f64 + 0.5) / GRID as f64;
                let (Ok(v), Ok(dv)) = (self.eval(z), self.eval_derivative(z)) else { continue };
                let g = dv / ((v - f0) * (v - f0));
                if g > bound {
                    failure = Some(format!("|g'| = {g:.3e} exceeds C_reg*D_min at {z}"));
                    break;
                }
            }
        }

        Ok(RegularityCertificate {
            x0,
            c_reg,
            d_min: d_min.max(0.0),
            d_max,
            window: (a, b),
            status: if failure.is_none() { Regularity::Regular } else { Regularity::Singular },
            failure,
        })
    }
}

impl SamplingFunction {
    /// Smallest C_reg for which `x0` passes (cr1) and (cr2); infinite when
    /// (cr0) fails or D_min < 1.
    pub fn smallest_c_reg(&self, x0: f64) -> Result<f64> {
        let c = self.certify_regularity(x0, f64::MAX)?;
        if !c.is_regular() {
            return Ok(f64::INFINITY);
        }
        let mut lo = 1.0;
        let mut hi = (c.d_max / c.d_min).max(1.0);
        while !self.certify_regularity(x0, hi)?.is_regular() {
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.certify_regularity(x0, mid)?.is_regular() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

fn validate(pieces: &[Piece]) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidSampling(m));
    if pieces.is_empty() {
        return bad("no pieces".into());
    }
    if (pieces[0].left() + 0.5).abs() > 1e-15 || (pieces[pieces.len() - 1].right() - 0.5).abs() > 1e-15 {
        return bad("pieces must tile (-1/2, 1/2)".into());
    }
    for p in pieces {
        if p.right().is_nan() || p.left().is_nan() || p.right() <= p.left() {
            return bad(format!("empty piece {p:?}"));
        }
        match p {
            Piece::Flat { value, .. } => {
                if p.touches_pole() {
                    return bad("a flat piece cannot reach a pole".into());
                }
                if !value.is_finite() {
                    return bad("flat value must be finite".into());
                }
            }
            Piece::Monotone { kind, offset, .. } => {
                kind.check()?;
                if !offset.is_finite() {
                    return bad("offset must be finite".into());
                }
                if p.touches_pole() && !matches!(kind, MonotoneKind::Tangent { .. }) {
                    return bad("pieces adjacent to +-1/2 must be tangent so that f(+-1/2) = +-inf".into());
                }
                if let MonotoneKind::Tangent { .. } = kind {
                    if p.left() < -0.5 || p.right() > 0.5 {
                        return bad("tangent piece crosses a pole".into());
                    }
                }
            }
        }
    }
    for w in pieces.windows(2) {
        let (l, r) = (&w[0], &w[1]);
        if (l.right() - r.left()).abs() > 1e-15 {
            return bad(format!("gap or overlap between pieces at {} and {}", l.right(), r.left()));
        }
        let vl = l.value(l.right());
        let vr = r.value(r.left());
        if (vl - vr).abs() > JOIN_TOL * (1.0 + vl.abs()) {
            return bad(format!("jump discontinuity at {}: {vl} vs {vr}", l.right()));
        }
    }
    Ok(())
}

fn kind_of(spec: &PieceSpec) -> Result<Option<MonotoneKind>> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::InvalidSampling(format!("{:?} piece needs `{name}`", spec.kind)))
    };
    Ok(match spec.kind {
        PieceKind::Flat => None,
        PieceKind::Tangent => Some(MonotoneKind::Tangent { scale: need(spec.scale, "scale")? }),
        PieceKind::Linear => spec.slope.map(|slope| MonotoneKind::Linear { slope }),
        PieceKind::OddPower => Some(MonotoneKind::OddPower {
            scale: need(spec.scale, "scale")?,
            exponent: need(spec.exponent, "exponent")?,
            center: spec.center.unwrap_or(0.0),
        }),
    })
}

fn resolve_specs(specs: &[PieceSpec]) -> Result<Vec<Piece>> {
    let n = specs.len();
    let mut resolved: Vec<Option<Piece>> = vec![None; n];
    for (i, s) in specs.iter().enumerate() {
        match s.kind {
            PieceKind::Flat => {
                let value = s
                    .value
                    .ok_or_else(|| Error::InvalidSampling("flat piece needs `value`".into()))?;
                resolved[i] = Some(Piece::Flat { left: s.left, length: s.right - s.left, value });
            }
            _ => {
                if let (Some(kind), Some(offset)) = (kind_of(s)?, s.offset) {
                    resolved[i] = Some(Piece::Monotone { left: s.left, right: s.right, kind, offset });
                }
            }
        }
    }
    loop {
        let mut progress = false;
        for i in 0..n {
            if resolved[i].is_some() {
                continue;
            }
            let s = &specs[i];
            let left_val = if i > 0 { resolved[i - 1].map(|p| p.value(p.right())) } else { None };
            let right_val = resolved.get(i + 1).and_then(|p| p.map(|p| p.value(p.left())));
            let piece = match kind_of(s)? {
                Some(kind) => {
                    let probe = Piece::Monotone { left: s.left, right: s.right, kind, offset: 0.0 };
                    if let Some(v) = left_val {
                        Some(Piece::Monotone { left: s.left, right: s.right, kind, offset: v - probe.value(s.left) })
                    } else {
                        right_val.map(|v| Piece::Monotone {
                            left: s.left,
                            right: s.right,
                            kind,
                            offset: v - probe.value(s.right),
                        })
                    }
                }
                None => match (left_val, right_val) {
                    (Some(vl), Some(vr)) => {
                        let slope = (vr - vl) / (s.right - s.left);
                        Some(Piece::Monotone {
                            left: s.left,
                            right: s.right,
                            kind: MonotoneKind::Linear { slope },
                            offset: vl - slope * s.left,
                        })
                    }
                    _ => None,
                },
            };
            if piece.is_some() {
                resolved[i] = piece;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    resolved
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::InvalidSampling(format!("piece {i} is underdetermined"))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularity {
    Regular,
    Singular,
}

/// Outcome of the (cr0)-(cr2) checks at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityCertificate {
    pub x0: f64,
    pub c_reg: f64,
    pub d_min: f64,
    pub d_max: f64,
    /// Reduced pre-image window of (f(x0)-2, f(x0)+2).
    pub window: (f64, f64),
    pub status: Regularity,
    /// First failed check, if any.
    pub failure: Option<String>,
}

impl RegularityCertificate {
    pub fn is_regular(&self) -> bool {
        self.status == Regularity::Regular
    }
}

/// Frequency vector with a finite-radius Diophantine certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    /// Certified constant for `tau_dio`.
    pub c_dio: f64,
    pub tau_dio: f64,
    /// Certified constant for the alternative exponent d + 2.
    pub c_dio_alt: f64,
    pub scan_radius: u64,
}

impl FrequencyVector {
    /// Wraps `omega` without a Diophantine scan (c_dio = 0).
    pub fn unchecked(omega: Vec<f64>) -> Result<Self> {
        check_order(&omega)?;
        let d = omega.len() as f64;
        Ok(Self { omega, c_dio: 0.0, tau_dio: d + 1.5, c_dio_alt: 0.0, scan_radius: 0 })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// x + omega . n.
    pub fn phase(&self, x: f64, n: &[i64]) -> f64 {
        x + self.omega.iter().zip(n).map(|(w, k)| w * *k as f64).sum::<f64>()
    }
}

fn check_order(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::InvalidFrequency("empty frequency vector".into()));
    }
    let ok = omega[0] > 0.0 && omega.windows(2).all(|w| w[0] < w[1]) && *omega.last().unwrap() < 0.5;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidFrequency(format!("{omega:?} is not 0 < w1 < ... < wd < 1/2")))
    }
}

/// Distance to the nearest integer.
pub fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Brute-force Diophantine certificate over 0 < |n|_inf <= scan_radius for
/// tau = d + 1.5 (primary) and d + 2.
pub fn verify_diophantine(omega: &[f64], scan_radius: u64) -> Result<FrequencyVector> {
    check_order(omega)?;
    let d = omega.len();
    let r = scan_radius as i64;
    let total = (2 * r + 1).checked_pow(d as u32).unwrap_or(i64::MAX);
    if total > 500_000_000 {
        return Err(Error::InvalidFrequency(format!("scan of {total} vectors is too large")));
    }
    let tau = d as f64 + 1.5;
    let tau_alt = d as f64 + 2.0;
    let mut c = f64::INFINITY;
    let mut c_alt = f64::INFINITY;
    let mut n = vec![-r; d];
    loop {
        // Half space: first nonzero coordinate positive.
        if let Some(first) = n.iter().find(|&&k| k != 0) {
            if *first > 0 {
                let s: f64 = omega.iter().zip(&n).map(|(w, k)| w * *k as f64).sum();
                let dist = dist_to_integer(s);
                if dist < 1e-12 {
                    return Err(Error::NearRational { n: n.clone(), distance: dist });
                }
                let norm = n.iter().map(|k| k.abs()).max().unwrap() as f64;
                c = c.min(dist * norm.powf(tau));
                c_alt = c_alt.min(dist * norm.powf(tau_alt));
            }
        }
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(FrequencyVector {
                    omega: omega.to_vec(),
                    c_dio: if c.is_finite() { c } else { 0.0 },
                    tau_dio: tau,
                    c_dio_alt: if c_alt.is_finite() { c_alt } else { 0.0 },
                    scan_radius,
                });
            }
            a -= 1;
            if n[a] < r {
                n[a] += 1;
                break;
            }
            n[a] = -r;
        }
    }
}

/// Sites of `bx` where f fails the regularity certificate at x + omega.n.
/// A site next to a pole counts as regular.
pub fn singular_set(f: &SamplingFunction, omega: &FrequencyVector, x: f64, bx: &LatticeBox, c_reg: f64) -> Result<Vec<Site>> {
    let mut out = Vec::new();
    for n in bx.sites() {
        match f.certify_regularity(omega.phase(x, &n), c_reg) {
            Ok(cert) if !cert.is_regular() => out.push(n),
            Ok(_) | Err(Error::PoleProximity { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golden() -> f64 {
        (3.0 - 5f64.sqrt()) / 2.0
    }

    #[test]
    fn tangent_at_origin() {
        let f = SamplingFunction::tangent(1.0).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn flat_piece_value_and_derivative() {
        let f = SamplingFunction::single_flat(-0.1, 0.2, 0.0, 1.0, 100.0).unwrap();
        assert_eq!(f.eval(0.05).unwrap(), 0.0);
        assert_eq!(f.eval_derivative(0.05).unwrap(), 0.0);
    }

    #[test]
    fn homotopy_term() {
        let f = SamplingFunction::tangent(1.0).unwrap().with_t(1.0);
        // tan(pi/4) + frac(0.25 - 0.5) = 1 + 0.75, computed independently.
        let expected = (std::f64::consts::PI / 4.0).tan() + (0.25f64 - 0.5).rem_euclid(1.0);
        assert!((f.eval(0.25).unwrap() - expected).abs() < 1e-15);
        assert!((f.eval(0.25).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn pole_guard() {
        let f = SamplingFunction::tangent(1.0).unwrap();
        assert!(matches!(f.eval(0.5), Err(Error::PoleProximity { .. })));
        assert!(matches!(f.eval(1.5 - 1e-14), Err(Error::PoleProximity { .. })));
        assert!(f.eval(0.5 - 1e-9).is_ok());
    }

    #[test]
    fn rejects_jump() {
        let pieces = vec![
            Piece::Monotone { left: -0.5, right: 0.0, kind: MonotoneKind::Tangent { scale: 1.0 }, offset: 0.0 },
            Piece::Monotone { left: 0.0, right: 0.5, kind: MonotoneKind::Tangent { scale: 1.0 }, offset: 1.0 },
        ];
        assert!(matches!(SamplingFunction::new(pieces, 10.0), Err(Error::InvalidSampling(_))));
    }

    #[test]
    fn rejects_flat_at_pole() {
        let specs = [PieceSpec::flat(-0.5, 0.0, 0.0), PieceSpec::tangent(0.0, 0.5, 1.0)];
        assert!(SamplingFunction::from_specs(&specs, 1.0).is_err());
    }

    #[test]
    fn kink_derivative_is_smallest_number() {
        let f = SamplingFunction::from_specs(
            &[
                PieceSpec::tangent(-0.5, -0.2, 1.0),
                PieceSpec::linear(-0.2, 0.2, 10.0).with_offset(0.0),
                PieceSpec::tangent(0.2, 0.5, 1.0),
            ],
            10.0,
        )
        .unwrap();
        let tan_side = std::f64::consts::PI / (std::f64::consts::PI * 0.2).cos().powi(2);
        let d = f.eval_derivative(-0.2).unwrap();
        assert!((d - tan_side).abs() < 1e-5, "{d} vs {tan_side}");
    }

    #[test]
    fn linear_join_solves_slope() {
        let f = SamplingFunction::from_specs(
            &[
                PieceSpec::tangent(-0.5, -0.3, 1.0),
                PieceSpec::flat(-0.3, -0.2, -1.0),
                PieceSpec::linear_join(-0.2, 0.2),
                PieceSpec::flat(0.2, 0.3, 1.0),
                PieceSpec::tangent(0.3, 0.5, 1.0),
            ],
            10.0,
        )
        .unwrap();
        assert!((f.eval(0.0).unwrap()).abs() < 1e-14);
        assert!((f.eval_derivative(0.1).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_is_regular() {
        let f = SamplingFunction::tangent(1.0).unwrap();
        let c = f.certify_regularity(0.0, 10.0).unwrap();
        assert!(c.is_regular(), "{:?}", c.failure);
        // Oracle: f' = pi sec^2(pi y) on the window |tan(pi y)| < 2.
        let y_edge = 2f64.atan() / std::f64::consts::PI;
        assert!((c.window.1 - y_edge).abs() < 1e-9);
        assert!((c.d_min - std::f64::consts::PI).abs() < 1e-6);
        assert!((c.d_max / c.d_min - 5.0).abs() < 1e-2);
    }

    #[test]
    fn smallest_c_reg_of_scaled_tangent() {
        // (2/pi) tan: f' ranges over [2, 2(1 + pi^2)] on the window.
        let f = SamplingFunction::tangent(2.0 / std::f64::consts::PI).unwrap();
        let c = f.smallest_c_reg(0.0).unwrap();
        assert!((c - (1.0 + std::f64::consts::PI.powi(2))).abs() < 2e-2, "{c}");
        assert!(!f.certify_regularity(0.0, 10.0).unwrap().is_regular());
        assert!(f.certify_regularity(0.0, c * 1.001).unwrap().is_regular());
    }

    #[test]
    fn flat_piece_point_is_singular() {
        let f = SamplingFunction::single_flat(-0.1, 0.2, 0.0, 5.0, 100.0).unwrap();
        let c = f.certify_regularity(0.0, 10.0).unwrap();
        assert!(!c.is_regular());
    }

    #[test]
    fn margin_point_is_regular_when_window_excludes_flat() {
        let (left, len, s) = (-0.1, 0.2, 20.0);
        let f = SamplingFunction::single_flat(left, len, 0.0, s, 1e3).unwrap();
        // First phase right of the piece with f >= 2 + margin.
        let right = left + len;
        let off = s * (std::f64::consts::PI * right).tan();
        let y = ((2.5 + off) / s).atan() / std::f64::consts::PI;
        assert!((f.eval(y).unwrap() - 2.5).abs() < 1e-9);
        let c = f.certify_regularity(y, 10.0).unwrap();
        assert!(c.is_regular(), "{:?}", c.failure);
        assert!(c.window.0 > right);
        // Closer than f = 2 the window reaches the flat piece.
        let y_close = ((1.5 + off) / s).atan() / std::f64::consts::PI;
        assert!(!f.certify_regularity(y_close, 10.0).unwrap().is_regular());
    }

    #[test]
    fn diophantine_golden() {
        let fv = verify_diophantine(&[golden()], 10_000).unwrap();
        assert!(fv.c_dio > 0.0);
        assert_eq!(fv.tau_dio, 2.5);
        // Oracle: direct scan at tau = 2.5.
        let oracle = (1..=10_000i64)
            .map(|n| dist_to_integer(n as f64 * golden()) * (n as f64).powf(2.5))
            .fold(f64::INFINITY, f64::min);
        assert!((fv.c_dio - oracle).abs() <= 1e-15 * oracle.max(1.0));
    }

    #[test]
    fn diophantine_rational() {
        assert!(matches!(verify_diophantine(&[1.0 / 3.0], 100), Err(Error::NearRational { .. })));
    }

    #[test]
    fn diophantine_2d() {
        let fv = verify_diophantine(&[golden(), 2f64.sqrt() - 1.0], 1000).unwrap();
        assert!(fv.c_dio > 0.0 && fv.c_dio_alt >= fv.c_dio);
    }

    #[test]
    fn singular_set_monotone_is_empty() {
        let f = SamplingFunction::tangent(1.0).unwrap();
        let om = FrequencyVector::unchecked(vec![golden()]).unwrap();
        let bx = LatticeBox::interval(-10, 10).unwrap();
        // tan has f' = pi(1 + f^2), so windows f0 +- 2 need C_reg around 18.
        assert!(singular_set(&f, &om, 0.1, &bx, 20.0).unwrap().is_empty());
    }

    #[test]
    fn singular_set_matches_membership_scan() {
        let om = 0.05;
        let f = SamplingFunction::single_flat(-0.11, 0.22, 0.0, 20.0, 1e3).unwrap();
        let fv = FrequencyVector::unchecked(vec![om]).unwrap();
        let bx = LatticeBox::interval(-8, 8).unwrap();
        let x = 0.003;
        let got = singular_set(&f, &fv, x, &bx, 10.0).unwrap();
        let oracle: Vec<Site> =
            (-8..=8).filter(|&n| { let p = x + om * n as f64; (-0.11..=0.11).contains(&p) }).map(|n| vec![n]).collect();
        assert_eq!(got, oracle);
        // Covariance: S(x - omega n) = S(x) - n on the shifted box.
        let shifted = singular_set(&f, &fv, x - 2.0 * om, &bx.translate(&[2]), 10.0).unwrap();
        let expect: Vec<Site> = got.iter().map(|s| vec![s[0] + 2]).collect();
        assert_eq!(shifted, expect);
    }

    proptest! {
        #[test]
        fn periodic_on_dyadic_points(k in -(1i64 << 19)..(1i64 << 19), m in -3i64..3) {
            let f = SamplingFunction::single_flat(-0.1, 0.2, 0.5, 3.0, 100.0).unwrap().with_t(0.7);
            let x = k as f64 / (1u64 << 20) as f64;
            prop_assume!(f.eval(x).is_ok());
            prop_assert_eq!(f.eval(x + m as f64).unwrap(), f.eval(x).unwrap());
        }

        #[test]
        fn homotopy_is_additive(x in -0.49f64..0.49, t in 0.0f64..5.0, dt in 0.0f64..5.0) {
            let f = SamplingFunction::single_flat(-0.1, 0.2, 0.5, 3.0, 100.0).unwrap();
            let a = f.with_t(t).eval(x).unwrap();
            let b = f.with_t(t + dt).eval(x).unwrap();
            let frac = (x - 0.5).rem_euclid(1.0);
            prop_assert!((b - a - dt * frac).abs() <= 1e-12 * (1.0 + a.abs()));
            let da = f.with_t(t).eval_derivative(x).unwrap();
            let db = f.with_t(t + dt).eval_derivative(x).unwrap();
            prop_assert!(db >= da);
        }

        #[test]
        fn diophantine_constant_shrinks(r in 1u64..300) {
            let a = verify_diophantine(&[golden()], r).unwrap();
            let b = verify_diophantine(&[golden()], r + 50).unwrap();
            prop_assert!(b.c_dio <= a.c_dio);
        }
    }
}
