//! Assumption verifiers for (A1)–(A3), the `(p, q)` exponent regions in exact
//! rational arithmetic, the perturbation criterion for separable potentials
//! close to constants, and the sign test behind the mountain-pass geometry.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fermi::{
    curvature_check, extract, separable_arcs, separable_curvature, separable_window,
    ExtractOptions, GridSpec,
};
use crate::hill1d::{Hill1D, Potential1D};
use crate::oscillatory::{CurveQuadrature, Side};
use crate::planewave::{a3_check, ExtendedZoneField, Label, PotentialMode, SeparableField, Vec2};
use crate::quad::gauss_legendre;
use crate::split_label;

pub type Q = Ratio<i64>;

/// An exponent in `[1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exponent {
    Finite(Q),
    Infinite,
}

impl Exponent {
    pub fn new(num: i64, den: i64) -> Self {
        Exponent::Finite(Q::new(num, den))
    }

    pub fn int(n: i64) -> Self {
        Exponent::Finite(Q::from_integer(n))
    }

    /// `1/p`, with `1/∞ = 0`.
    pub fn recip(self) -> Q {
        match self {
            Exponent::Finite(p) => p.recip(),
            Exponent::Infinite => Q::from_integer(0),
        }
    }

    /// Hölder conjugate `p' = p/(p − 1)`.
    pub fn conjugate(self) -> Self {
        let r = Q::from_integer(1) - self.recip();
        if r == Q::from_integer(0) {
            Exponent::Infinite
        } else {
            Exponent::Finite(r.recip())
        }
    }

    /// `self < bound` where `bound = None` means `∞`.
    fn lt(self, bound: Option<Q>) -> bool {
        match (self, bound) {
            (Exponent::Finite(p), Some(b)) => p < b,
            (Exponent::Finite(_), None) => true,
            (Exponent::Infinite, _) => false,
        }
    }

    fn gt(self, bound: Q) -> bool {
        match self {
            Exponent::Finite(p) => p > bound,
            Exponent::Infinite => true,
        }
    }

    fn finite(self) -> Option<Q> {
        match self {
            Exponent::Finite(p) => Some(p),
            Exponent::Infinite => None,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Exponent::Finite(p) => *p.numer() as f64 / *p.denom() as f64,
            Exponent::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) if *p.denom() == 1 => write!(f, "{}", p.numer()),
            Exponent::Finite(p) => write!(f, "{}/{}", p.numer(), p.denom()),
            Exponent::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t, "inf" | "infinity" | "∞") {
            return Ok(Exponent::Infinite);
        }
        let bad =
            || Error::InvalidInput(format!("cannot parse exponent {s:?} (use n, n/m or inf)"));
        let (a, b) = match t.split_once('/') {
            Some((a, b)) => (
                a.trim().parse::<i64>().map_err(|_| bad())?,
                b.trim().parse::<i64>().map_err(|_| bad())?,
            ),
            None => (t.parse::<i64>().map_err(|_| bad())?, 1),
        };
        if b <= 0 {
            return Err(bad());
        }
        let p = Q::new(a, b);
        if p < Q::from_integer(1) {
            return Err(Error::InvalidInput(format!("exponent {s} below 1")));
        }
        Ok(Exponent::Finite(p))
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Verdicts of the exponent conditions at `(d, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentRegion {
    pub d: usize,
    pub p: Exponent,
    pub q: Exponent,
    /// Full resolvent range (both branches with the `p ≤ d/2` split).
    pub admissible: bool,
    /// `0 ≤ 1/p − 1/q < 2/d`, `1 ≤ p ≤ 2 ≤ q ≤ ∞`.
    pub nonresonant: bool,
    /// Resonant range in the `p`-branch form.
    pub resonant: bool,
    /// Resonant range in the Riesz-diagram form.
    pub resonant_riesz: bool,
    /// Gutiérrez' range for the Helmholtz operator.
    pub gutierrez: bool,
    /// `p = q'` with `2(d+1)/(d−1) < q < 2d/(d−2)`.
    pub self_dual: bool,
}

fn qi(n: i64) -> Q {
    Q::from_integer(n)
}

/// `q > lower` and `q < pd/(d − 2p)` when `p ≤ d/2`.
fn upper_ok(d: i64, p: Q, q: Exponent) -> bool {
    if p <= Q::new(d, 2) {
        let den = qi(d) - qi(2) * p;
        if den == qi(0) {
            q.lt(None)
        } else {
            q.lt(Some(p * qi(d) / den))
        }
    } else {
        true
    }
}

fn admissible(d: i64, p: Exponent, q: Exponent) -> bool {
    let Some(p) = p.finite() else { return false };
    let p1 = Q::new(2 * (d + 1), d + 3);
    let p2 = Q::new(2 * d, d + 1);
    if p >= qi(1) && p < p1 {
        q.gt(qi(2 * d) * p / (qi(2) + p * qi(d - 3))) && upper_ok(d, p, q)
    } else if p >= p1 && p < p2 {
        q.gt(qi(2) * p / (qi(2 * d) - p * qi(d + 1))) && upper_ok(d, p, q)
    } else {
        false
    }
}

fn resonant(d: i64, p: Exponent, q: Exponent) -> bool {
    let Some(p) = p.finite() else { return false };
    let p1 = Q::new(2 * (d + 1), d + 3);
    let p2 = Q::new(2 * d, d + 1);
    if p >= qi(1) && p <= p1 {
        q.gt(qi(2 * d) * p / (qi(2) + p * qi(d - 3)))
    } else if p > p1 && p < p2 {
        q.gt(qi(2) * p / (qi(2 * d) - p * qi(d + 1)))
    } else {
        false
    }
}

fn resonant_riesz(d: i64, p: Exponent, q: Exponent) -> bool {
    let (a, b) = (p.recip(), q.recip());
    Q::new(d + 1, 2) - qi(d) * a + b < qi(0) && Q::new(3 - d, 2) + qi(d) * b - a < qi(0)
}

fn nonresonant(d: i64, p: Exponent, q: Exponent) -> bool {
    let (a, b) = (p.recip(), q.recip());
    let diff = a - b;
    diff >= qi(0) && diff < Q::new(2, d) && a >= Q::new(1, 2) && b <= Q::new(1, 2)
}

fn gutierrez(d: i64, p: Exponent, q: Exponent) -> bool {
    let (a, b) = (p.recip(), q.recip());
    let diff = a - b;
    a > Q::new(d + 1, 2 * d)
        && b < Q::new(d - 1, 2 * d)
        && diff >= Q::new(2, d + 1)
        && diff <= Q::new(2, d)
}

fn self_dual(d: i64, p: Exponent, q: Exponent) -> bool {
    if q.conjugate() != p {
        return false;
    }
    let lo = Q::new(2 * (d + 1), d - 1);
    let hi = if d == 2 {
        None
    } else {
        Some(Q::new(2 * d, d - 2))
    };
    q.gt(lo) && q.lt(hi)
}

pub fn exponent_region(d: usize, p: Exponent, q: Exponent) -> Result<ExponentRegion> {
    if d < 2 {
        return Err(Error::InvalidInput("exponent regions need d ≥ 2".into()));
    }
    for e in [p, q] {
        if let Exponent::Finite(v) = e {
            if v < qi(1) {
                return Err(Error::InvalidInput(format!("exponent {e} below 1")));
            }
        }
    }
    let di = d as i64;
    Ok(ExponentRegion {
        d,
        p,
        q,
        admissible: admissible(di, p, q),
        nonresonant: nonresonant(di, p, q),
        resonant: resonant(di, p, q),
        resonant_riesz: resonant_riesz(di, p, q),
        gutierrez: gutierrez(di, p, q),
        self_dual: self_dual(di, p, q),
    })
}

/// Whether `(p, q)` lies exactly on one of the lines bounding the resonant region.
fn on_resonant_boundary(d: i64, p: Exponent, q: Exponent) -> bool {
    let (a, b) = (p.recip(), q.recip());
    Q::new(d + 1, 2) - qi(d) * a + b == qi(0)
        || Q::new(3 - d, 2) + qi(d) * b - a == qi(0)
        || p == Exponent::Finite(Q::new(2 * (d + 1), d + 3))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub d: usize,
    pub points: usize,
    /// Grid points exactly on a boundary line (skipped).
    pub boundary: usize,
    pub inside: usize,
    pub disagreements: usize,
    pub witnesses: Vec<(Exponent, Exponent)>,
}

/// Compare the two forms of the resonant region on the grid
/// `1/p = (2i+1)/(2n)`, `1/q = j/n` (`0 ≤ i < n`, `0 ≤ j ≤ n`, so `q = ∞` is included).
pub fn region_equivalence_scan(d: usize, n: usize) -> Result<EquivalenceReport> {
    if d < 2 {
        return Err(Error::InvalidInput("exponent regions need d ≥ 2".into()));
    }
    let n = n as i64;
    let di = d as i64;
    let pts: Vec<(Exponent, Exponent)> = (0..n)
        .flat_map(|i| {
            (0..=n).map(move |j| {
                let p = Exponent::Finite(Q::new(2 * n, 2 * i + 1));
                let q = if j == 0 {
                    Exponent::Infinite
                } else {
                    Exponent::Finite(Q::new(n, j))
                };
                (p, q)
            })
        })
        .collect();
    let verdicts: Vec<Option<(bool, bool)>> = pts
        .par_iter()
        .map(|&(p, q)| {
            if on_resonant_boundary(di, p, q) {
                None
            } else {
                Some((resonant(di, p, q), resonant_riesz(di, p, q)))
            }
        })
        .collect();
    let mut rep = EquivalenceReport {
        d,
        points: pts.len(),
        boundary: 0,
        inside: 0,
        disagreements: 0,
        witnesses: vec![],
    };
    for (pt, v) in pts.iter().zip(&verdicts) {
        match v {
            None => rep.boundary += 1,
            Some((a, b)) => {
                rep.inside += usize::from(*a);
                if a != b {
                    rep.disagreements += 1;
                    if rep.witnesses.len() < 10 {
                        rep.witnesses.push(*pt);
                    }
                }
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionConfig {
    pub rho: f64,
    /// Fermi levels checked across `[λ − ρ, λ + ρ]`.
    pub levels: usize,
    pub grid_cells: usize,
    /// Vertices of `F_λ` used for smoothness and (A3) samples.
    pub samples: usize,
    /// Base step of the divided differences.
    pub smooth_h: f64,
    /// Points per axis of the `x`-grid for sup norms.
    pub nx: usize,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        AssumptionConfig {
            rho: 0.5,
            levels: 5,
            grid_cells: 64,
            samples: 8,
            smooth_h: 0.02,
            nx: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A1Report {
    pub pass: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelCheck {
    pub tau: f64,
    pub regular: bool,
    pub min_curvature: f64,
    pub witness: Option<Vec2>,
    pub components: usize,
    pub closed: bool,
    pub bridges: usize,
}

/// Stability of third divided differences under halving the step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessStats {
    pub h: f64,
    pub lambda_d3: [f64; 2],
    pub psi_d3: [f64; 2],
    /// `max|D³(h/2)| ≤ 2 max|D³(h)| + 1e−4` for both.
    pub stable: bool,
    pub note: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Report {
    pub pass: bool,
    pub levels: Vec<LevelCheck>,
    pub min_curvature: f64,
    pub witness: Option<(f64, Vec2)>,
    /// Bounding box `[lo, hi]` of the curves: a window `U ⊃ F_τ`.
    pub window: [Vec2; 2],
    pub smoothness: Option<SmoothnessStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Summary {
    pub pass: bool,
    pub samples: usize,
    pub max_ratio: f64,
    /// Max `‖ψ‖∞/‖ψ‖₂` per shell `‖s‖∞`.
    pub by_shell: Vec<f64>,
    pub witness: Option<(Vec2, Label)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub lambda: f64,
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: A3Summary,
    pub regular_frequency: bool,
    pub pass: bool,
}

fn check_a1(field: &ExtendedZoneField) -> A1Report {
    let mut reasons = vec!["A = I".to_string()];
    let mut pass = true;
    match field {
        ExtendedZoneField::Free { mu, .. } => {
            pass &= mu.is_finite();
            reasons.push(format!("constant potential μ = {mu}"));
        }
        ExtendedZoneField::Separable(f) => {
            for (c, h) in f.parts().iter().enumerate() {
                let (lo, hi) = (h.potential().min(), h.potential().max());
                let ok = lo.is_finite() && hi.is_finite();
                pass &= ok;
                reasons.push(format!("V_{} real, {lo} ≤ V ≤ {hi}", c + 1));
            }
        }
        ExtendedZoneField::PlaneWave(p) => match p.spec().mode() {
            PotentialMode::Fourier(table) => {
                let mut worst: f64 = 0.0;
                for (n, c) in table {
                    let cm = p.spec().coefficient([-n[0], -n[1]]);
                    worst = worst.max((cm - c.conj()).norm());
                }
                let ok = worst <= 1e-12;
                pass &= ok;
                reasons.push(format!(
                    "Fourier table Hermitian (defect {worst:e}), |V − V̂(0)| ≤ {}",
                    p.spec().oscillation_bound()
                ));
                if !ok {
                    reasons.push("V is not real".into());
                }
            }
            PotentialMode::Separable(parts) => {
                for (c, v) in parts.iter().enumerate() {
                    reasons.push(format!("V_{} real, {} ≤ V ≤ {}", c + 1, v.min(), v.max()));
                }
            }
        },
    }
    A1Report { pass, reasons }
}

fn third_difference(f: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((f(2.0 * h)? - 2.0 * f(h)? + 2.0 * f(-h)? - f(-2.0 * h)?) / (2.0 * h * h * h))
}

fn smoothness(field: &ExtendedZoneField, pts: &[(Vec2, Vec2)], h: f64) -> Result<SmoothnessStats> {
    let (x, y) = ([0.25, 0.6], [0.7, 0.1]);
    let mut lam = [0.0f64; 2];
    let mut psi = [0.0f64; 2];
    for &(k, n) in pts {
        for (i, step) in [h, 0.5 * h].into_iter().enumerate() {
            let at = |t: f64| [k[0] + t * n[0], k[1] + t * n[1]];
            let dl = third_difference(|t| field.lambda(at(t)), step)?;
            let dr = third_difference(|t| field.psi_pair(x, y, at(t)).map(|z| z.re), step)?;
            let di = third_difference(|t| field.psi_pair(x, y, at(t)).map(|z| z.im), step)?;
            lam[i] = lam[i].max(dl.abs());
            psi[i] = psi[i].max(dr.abs().max(di.abs()));
        }
    }
    let stable = lam[1] <= 2.0 * lam[0] + 1e-4 && psi[1] <= 2.0 * psi[0] + 1e-4;
    Ok(SmoothnessStats {
        h,
        lambda_d3: lam,
        psi_d3: psi,
        stable,
        note: "divided-difference proxy; Hölder classes are not certifiable numerically",
    })
}

fn a3_generic(field: &ExtendedZoneField, kappas: &[Vec2], nx: usize) -> Result<A3Summary> {
    let xs: Vec<Vec2> = (0..nx)
        .flat_map(|i| {
            (0..nx).map(move |j| [(i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / nx as f64])
        })
        .collect();
    let rows: Vec<(Vec2, Label, f64)> = kappas
        .par_iter()
        .map(|&kap| {
            let sp = field.sheet_point(kap)?;
            let vals: Vec<f64> = xs.iter().map(|&x| sp.eval(x).norm()).collect();
            let l2 = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
            let sup = vals.iter().copied().fold(0.0, f64::max);
            let (k0, s0) = split_label(kap[0]);
            let (k1, s1) = split_label(kap[1]);
            Ok(([k0, k1], [s0, s1], sup / l2))
        })
        .collect::<Result<_>>()?;
    summarize_a3(rows.into_iter())
}

fn summarize_a3(rows: impl Iterator<Item = (Vec2, Label, f64)>) -> Result<A3Summary> {
    let mut max_ratio: f64 = 0.0;
    let mut witness = None;
    let mut by_shell: Vec<f64> = vec![];
    let mut samples = 0;
    for (k, s, r) in rows {
        samples += 1;
        let sh = s[0].unsigned_abs().max(s[1].unsigned_abs()) as usize;
        if by_shell.len() <= sh {
            by_shell.resize(sh + 1, 0.0);
        }
        by_shell[sh] = by_shell[sh].max(r);
        if r > max_ratio {
            max_ratio = r;
            witness = Some((k, s));
        }
    }
    let growing = by_shell.len() >= 3 && by_shell.windows(2).all(|w| w[1] > w[0] * 1.05);
    Ok(A3Summary {
        pass: max_ratio.is_finite() && !growing,
        samples,
        max_ratio,
        by_shell,
        witness,
    })
}

/// (A1) structurally, (A2)(b) by curvature checks at `levels` Fermi levels in
/// `[λ − ρ, λ + ρ]`, (A2)(a) by a divided-difference proxy, (A3) by sup-norm
/// ratios over sampled eigenfunctions.
pub fn verify_assumptions(
    field: &ExtendedZoneField,
    lambda: f64,
    cfg: &AssumptionConfig,
) -> Result<AssumptionReport> {
    if field.d() != 2 {
        return Err(Error::InvalidInput(
            "assumption checks are implemented for d = 2".into(),
        ));
    }
    let a1 = check_a1(field);
    let n = cfg.levels.max(1);
    let taus: Vec<f64> = if n == 1 {
        vec![lambda]
    } else {
        (0..n)
            .map(|i| lambda - cfg.rho + 2.0 * cfg.rho * i as f64 / (n - 1) as f64)
            .collect()
    };
    let mut levels = vec![];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut center = None;
    for &tau in &taus {
        let surf = extract(
            field,
            tau,
            GridSpec::auto(field, tau, cfg.grid_cells),
            ExtractOptions::default(),
        )?;
        for v in surf.vertices() {
            for c in 0..2 {
                lo[c] = lo[c].min(v.kappa[c]);
                hi[c] = hi[c].max(v.kappa[c]);
            }
        }
        let row = match curvature_check(&surf) {
            Ok(r) => LevelCheck {
                tau,
                regular: true,
                min_curvature: r.min_curvature,
                witness: r.witness,
                components: r.components,
                closed: r.all_closed && !surf.is_empty(),
                bridges: r.bridges,
            },
            Err(Error::IrregularFrequency { kappa, .. }) => LevelCheck {
                tau,
                regular: false,
                min_curvature: f64::NAN,
                witness: Some([kappa[0], kappa[1]]),
                components: surf.components.len(),
                closed: false,
                bridges: surf.bridge_count(),
            },
            Err(e) => return Err(e),
        };
        if (tau - lambda).abs() < 1e-12 || (center.is_none() && tau > lambda) {
            center = Some(surf);
        }
        levels.push(row);
    }
    let center = match center {
        Some(s) if (s.tau - lambda).abs() < 1e-12 => s,
        _ => extract(
            field,
            lambda,
            GridSpec::auto(field, lambda, cfg.grid_cells),
            ExtractOptions::default(),
        )?,
    };
    let regular_frequency = center.irregular.is_empty() && !center.is_empty();
    let mut min_curvature = f64::INFINITY;
    let mut witness = None;
    for l in &levels {
        if !(l.min_curvature >= min_curvature) {
            min_curvature = l.min_curvature;
            witness = l.witness.map(|w| (l.tau, w));
        }
    }
    let geometry_ok = levels
        .iter()
        .all(|l| l.regular && l.closed && l.bridges == 0 && l.min_curvature > 0.0);
    let verts: Vec<_> = center.vertices().filter(|v| !v.bridge).collect();
    let stride = (verts.len() / cfg.samples.max(1)).max(1);
    let picks: Vec<(Vec2, Vec2)> = verts
        .iter()
        .step_by(stride)
        .take(cfg.samples)
        .map(|v| (v.kappa, v.normal))
        .collect();
    let smooth = if picks.is_empty() {
        None
    } else {
        Some(smoothness(field, &picks, cfg.smooth_h)?)
    };
    let a2 = A2Report {
        pass: geometry_ok && smooth.as_ref().is_some_and(|s| s.stable),
        levels,
        min_curvature,
        witness,
        window: [lo, hi],
        smoothness: smooth,
    };
    // (A3): the sampled curve points plus a few labels around them.
    let mut kappas: Vec<Vec2> = picks.iter().map(|p| p.0).collect();
    for s in -2i64..=2 {
        for t in -2i64..=2 {
            kappas.push([0.3 + 2.0 * PI * s as f64, -0.7 + 2.0 * PI * t as f64]);
        }
    }
    let a3 = match field {
        ExtendedZoneField::PlaneWave(p) => {
            let bx = p.truncation();
            let samples: Vec<(Vec2, Label)> = kappas
                .iter()
                .map(|k| {
                    let (k0, s0) = split_label(k[0]);
                    let (k1, s1) = split_label(k[1]);
                    ([k0, k1], [s0, s1])
                })
                .filter(|(_, s)| bx.is_interior(*s))
                .collect();
            let rep = a3_check(p, &samples, cfg.nx)?;
            let witness = rep
                .rows
                .iter()
                .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
                .map(|r| (r.k, r.s));
            A3Summary {
                pass: !rep.growing,
                samples: rep.rows.len(),
                max_ratio: rep.max_ratio,
                by_shell: rep.by_shell,
                witness,
            }
        }
        _ => a3_generic(field, &kappas, cfg.nx)?,
    };
    let pass = a1.pass && a2.pass && a3.pass && regular_frequency;
    Ok(AssumptionReport {
        lambda,
        a1,
        a2,
        a3,
        regular_frequency,
        pass,
    })
}

/// Result of the perturbation criterion for `V = V₁(x₁) + V₂(x₂)` near `(μ₁, μ₂)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub eps: f64,
    /// `I = [−π + ε/(8π), π − ε/(8π)]`.
    pub interval: [f64; 2],
    pub min_second_derivative: [f64; 2],
    /// `max_I |E − (μ + k²)|`, `|E' − 2k|`, `|E'' − 2|` per part.
    pub deviation: [[f64; 3]; 2],
    pub bound: f64,
    pub convex: bool,
    pub deviation_ok: bool,
    /// `(μ₁+μ₂+ε, μ₁+μ₂+π²−ε)`.
    pub target_window: [f64; 2],
    pub admissible_window: [f64; 2],
    pub window_ok: bool,
    /// `F_λ ⊂ I × I` for the sampled `λ`.
    pub fermi_inside: bool,
    pub sampled_lambdas: Vec<f64>,
    /// Minimal curvature of `F_λ` at the window midpoint.
    pub mid_curvature: f64,
    pub pass: bool,
    pub witness: Option<String>,
}

pub fn perturbation_check(
    v1: &Potential1D,
    v2: &Potential1D,
    mu1: f64,
    mu2: f64,
    eps: f64,
) -> Result<PerturbationReport> {
    if !(eps > 0.0 && eps < 0.5 * PI * PI) {
        return Err(Error::InvalidInput(format!(
            "ε = {eps} must lie in (0, π²/2)"
        )));
    }
    let edge = PI - eps / (8.0 * PI);
    let bound = (eps / 4.0).min(1.0);
    let hills = [Hill1D::new(v1.clone(), 3)?, Hill1D::new(v2.clone(), 3)?];
    let mus = [mu1, mu2];
    let nk = 401;
    let ks: Vec<f64> = (0..nk).map(|i| edge * i as f64 / (nk - 1) as f64).collect();
    let mut min_e2 = [f64::INFINITY; 2];
    let mut deviation = [[0.0f64; 3]; 2];
    let mut witness = None;
    for c in 0..2 {
        for &k in &ks {
            let e = hills[c].band_energy(1, k)?;
            let (d1, d2) = hills[c].band_derivatives(1, k)?;
            if d2 < min_e2[c] {
                min_e2[c] = d2;
                if d2 <= 0.0 && witness.is_none() {
                    witness = Some(format!("E''_{} = {d2} at k = {k}", c + 1));
                }
            }
            let dev = [
                (e - mus[c] - k * k).abs(),
                (d1 - 2.0 * k).abs(),
                (d2 - 2.0).abs(),
            ];
            for i in 0..3 {
                deviation[c][i] = deviation[c][i].max(dev[i]);
            }
        }
    }
    let convex = min_e2.iter().all(|&v| v > 0.0);
    let worst = deviation.iter().flatten().copied().fold(0.0, f64::max);
    let deviation_ok = worst < bound;
    if !deviation_ok && witness.is_none() {
        witness = Some(format!("deviation {worst} ≥ {bound}"));
    }
    let field = SeparableField::new(vec![v1.clone(), v2.clone()], 3)?;
    let (alo, ahi) = separable_window(&field)?;
    let target = [mu1 + mu2 + eps, mu1 + mu2 + PI * PI - eps];
    let window_ok = alo <= target[0] && target[1] <= ahi;
    if !window_ok && witness.is_none() {
        witness = Some(format!(
            "window ({}, {}) not inside ({alo}, {ahi})",
            target[0], target[1]
        ));
    }
    let lambdas: Vec<f64> = (1..8)
        .map(|i| target[0] + (target[1] - target[0]) * i as f64 / 8.0)
        .collect();
    let mut fermi_inside = true;
    for &lam in &lambdas {
        match separable_arcs(&field, lam, 65) {
            Ok(a) => {
                let out = a
                    .arcs
                    .iter()
                    .flatten()
                    .find(|p| p[0].abs() > edge || p[1].abs() > edge);
                if let Some(p) = out {
                    fermi_inside = false;
                    witness.get_or_insert(format!("F_{lam} leaves I × I at {p:?}"));
                }
            }
            Err(e) => {
                fermi_inside = false;
                witness.get_or_insert(format!("F_{lam}: {e}"));
            }
        }
    }
    let mid = 0.5 * (target[0] + target[1]);
    let mut mid_curvature = f64::NAN;
    if let Ok(a) = separable_arcs(&field, mid, 129) {
        mid_curvature = f64::INFINITY;
        for p in a.arcs.iter().flatten() {
            mid_curvature = mid_curvature.min(separable_curvature(&field, *p)?);
        }
    }
    let pass = convex && deviation_ok && window_ok && fermi_inside && mid_curvature > 0.0;
    Ok(PerturbationReport {
        eps,
        interval: [-edge, edge],
        min_second_derivative: min_e2,
        deviation,
        bound,
        convex,
        deviation_ok,
        target_window: target,
        admissible_window: [alo, ahi],
        window_ok,
        fermi_inside,
        sampled_lambdas: lambdas,
        mid_curvature,
        pass,
        witness,
    })
}

/// `I_± = ∓∫_Ω ∫_{K_±} |Ψ(x,κ)|²/(Λ(κ) − λ) dκ dx` with
/// `K_± = {δ ≤ ±(Λ − λ) ≤ 2δ}`, by the coarea formula: Gauss-Legendre in
/// `τ`, trapezoid along `F_τ`, and a midpoint `x`-grid for `∫_Ω |Ψ|²`.
pub fn mountain_pass_sign(
    field: &ExtendedZoneField,
    lambda: f64,
    delta: f64,
    side: Side,
) -> Result<f64> {
    mountain_pass_sign_with(field, lambda, delta, side, 8, 256, 64)
}

pub fn mountain_pass_sign_with(
    field: &ExtendedZoneField,
    lambda: f64,
    delta: f64,
    side: Side,
    tau_nodes: usize,
    curve_nodes: usize,
    grid_cells: usize,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("δ must be positive".into()));
    }
    if field.d() != 2 {
        return Err(Error::InvalidInput(
            "mountain-pass sign is implemented for d = 2".into(),
        ));
    }
    let sgn = side.sign();
    let (a, b) = (lambda + sgn * delta, lambda + sgn * 2.0 * delta);
    let (lo, hi) = (a.min(b), a.max(b));
    if lo <= field.bottom()? {
        return Err(Error::EmptyLevelSet { lambda, delta });
    }
    let (xg, wg) = gauss_legendre(tau_nodes);
    let nx = 16;
    let xs: Vec<Vec2> = (0..nx)
        .flat_map(|i| {
            (0..nx).map(move |j| [(i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / nx as f64])
        })
        .collect();
    let vol = (2.0 * PI).powi(2);
    let mut total = 0.0;
    for (t, w) in xg.iter().zip(&wg) {
        let tau = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
        let surf = extract(
            field,
            tau,
            GridSpec::auto(field, tau, grid_cells),
            ExtractOptions::default(),
        )?;
        if surf.is_empty() {
            return Err(Error::EmptyLevelSet { lambda, delta });
        }
        let cq = CurveQuadrature::build(&surf, field, curve_nodes)?;
        // Node weights carry 1/|B|; ∫_Ω |Ψ|² dx by the x-grid mean.
        let (line, _) = cq.integrate(|nd| {
            let m = xs.iter().map(|&x| nd.sheet.eval(x).norm_sqr()).sum::<f64>() / xs.len() as f64;
            crate::Complex64::new(m, 0.0)
        });
        total += 0.5 * (hi - lo) * w * vol * line.re / (tau - lambda);
    }
    Ok(-sgn * total)
}
