//! One-dimensional Floquet problem `-φ'' + Vφ = Eφ`, `φ(1) = e^{ik}φ(0)`, solved
//! with exact transfer matrices for piecewise-constant 1-periodic potentials.
//!
//! Bands are located through the Hill discriminant `D(E) = tr M(E)`: the `l`-th
//! band is the monotone branch of `D` between two consecutive critical points,
//! and `E_l(k)` solves `D(E) = 2 cos k` on it.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// JSON form of a 1-periodic potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Potential1DSpec {
    Cells { cells: Vec<[f64; 2]> },
    Samples { samples: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub start: f64,
    pub len: f64,
    pub value: f64,
}

/// Piecewise-constant 1-periodic potential on `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential1D {
    spec: Potential1DSpec,
    cells: Vec<Cell>,
}

impl Potential1D {
    pub fn from_cells(cells: &[(f64, f64)]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput(
                "potential needs at least one cell".into(),
            ));
        }
        let total: f64 = cells.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "cell lengths sum to {total}, expected 1"
            )));
        }
        let mut out = Vec::with_capacity(cells.len());
        let mut x = 0.0;
        for &(len, value) in cells {
            if !(len > 0.0) || !value.is_finite() {
                return Err(Error::InvalidInput(format!("bad cell ({len}, {value})")));
            }
            out.push(Cell {
                start: x,
                len,
                value,
            });
            x += len;
        }
        Ok(Potential1D {
            spec: Potential1DSpec::Cells {
                cells: cells.iter().map(|&(a, b)| [a, b]).collect(),
            },
            cells: out,
        })
    }

    /// Samples `v_j = V(j/n)`, `j = 0..n`, of a periodic potential; linear
    /// interpolation between samples is replaced by its cell averages.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 8 {
            return Err(Error::InvalidInput(format!(
                "need at least 8 samples, got {n}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let h = 1.0 / n as f64;
        let cells: Vec<Cell> = (0..n)
            .map(|j| Cell {
                start: j as f64 * h,
                len: h,
                value: 0.5 * (samples[j] + samples[(j + 1) % n]),
            })
            .collect();
        Ok(Potential1D {
            spec: Potential1DSpec::Samples {
                samples: samples.to_vec(),
            },
            cells,
        })
    }

    pub fn constant(mu: f64) -> Self {
        Self::from_cells(&[(1.0, mu)]).expect("constant potential")
    }

    /// Sample `f` at `j/n` and build the potential from the samples.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let s: Vec<f64> = (0..n).map(|j| f(j as f64 / n as f64)).collect();
        Self::from_samples(&s)
    }

    pub fn from_spec(spec: &Potential1DSpec) -> Result<Self> {
        match spec {
            Potential1DSpec::Cells { cells } => {
                let c: Vec<(f64, f64)> = cells.iter().map(|c| (c[0], c[1])).collect();
                Self::from_cells(&c)
            }
            Potential1DSpec::Samples { samples } => Self::from_samples(samples),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Potential1DSpec =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn spec(&self) -> &Potential1DSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn min(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.value)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.value)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.cells.iter().map(|c| c.len * c.value).sum()
    }

    /// `‖V − μ‖_∞` of the cell representation.
    pub fn sup_deviation(&self, mu: f64) -> f64 {
        self.cells
            .iter()
            .map(|c| (c.value - mu).abs())
            .fold(0.0, f64::max)
    }

    /// Value at `x` (periodically extended).
    pub fn value(&self, x: f64) -> f64 {
        let t = x - x.floor();
        self.cells
            .iter()
            .rev()
            .find(|c| c.start <= t)
            .map(|c| c.value)
            .unwrap_or(self.cells[0].value)
    }
}

/// Entire functions `C(x) = cos √x`, `S(x) = sin √x / √x` and derivatives in `x`.
#[derive(Debug, Clone, Copy)]
struct Trig {
    c: f64,
    s: f64,
    ds: f64,
    d2s: f64,
}

fn trig(x: f64) -> Trig {
    if x.abs() < 1.0 {
        let mut c = 0.0;
        let mut s = 0.0;
        let mut ds = 0.0;
        let mut d2s = 0.0;
        // even = (-1)^n / (2n)!, odd = (-1)^n / (2n+1)!; xn = x^n, x1 = x^{n-1}, x2 = x^{n-2}.
        let mut even = 1.0;
        let (mut xn, mut x1, mut x2) = (1.0, 0.0, 0.0);
        for n in 0..24usize {
            let nf = n as f64;
            if n > 0 {
                even *= -1.0 / ((2.0 * nf - 1.0) * (2.0 * nf));
            }
            let odd = even / (2.0 * nf + 1.0);
            c += even * xn;
            s += odd * xn;
            ds += nf * odd * x1;
            let t2 = nf * (nf - 1.0) * odd * x2;
            d2s += t2;
            if n >= 3 && t2.abs() < 1e-19 && (even * xn).abs() < 1e-19 {
                break;
            }
            x2 = x1;
            x1 = xn;
            xn *= x;
        }
        Trig { c, s, ds, d2s }
    } else {
        let (c, s) = if x > 0.0 {
            let r = x.sqrt();
            (r.cos(), r.sin() / r)
        } else {
            let r = (-x).sqrt();
            (r.cosh(), r.sinh() / r)
        };
        let ds = (c - s) / (2.0 * x);
        let d2s = -(s + 6.0 * ds) / (4.0 * x);
        Trig { c, s, ds, d2s }
    }
}

/// `(C, S)` only.
fn trig_cs(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        let mut c = 0.0;
        let mut s = 0.0;
        let mut even = 1.0;
        let mut xn = 1.0;
        for n in 0..24usize {
            let nf = n as f64;
            if n > 0 {
                even *= -1.0 / ((2.0 * nf - 1.0) * (2.0 * nf));
            }
            let t = even * xn;
            c += t;
            s += t / (2.0 * nf + 1.0);
            if n >= 2 && t.abs() < 1e-19 {
                break;
            }
            xn *= x;
        }
        (c, s)
    } else if x > 0.0 {
        let r = x.sqrt();
        (r.cos(), r.sin() / r)
    } else {
        let r = (-x).sqrt();
        (r.cosh(), r.sinh() / r)
    }
}

/// `(1 − S(y)) / y`, regular at `y = 0`.
fn one_minus_s_over(y: f64) -> f64 {
    if y.abs() < 1.0 {
        let mut acc = 0.0;
        let mut fact = 6.0; // (2n+1)! for n = 1
        for n in 1..24usize {
            let nf = n as f64;
            if n > 1 {
                fact *= (2.0 * nf) * (2.0 * nf + 1.0);
            }
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * y.powi(n as i32 - 1) / fact;
        }
        acc
    } else {
        (1.0 - trig(y).s) / y
    }
}

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn add(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn scale(a: &M2, s: f64) -> M2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

const ID: M2 = [[1.0, 0.0], [0.0, 1.0]];

/// Propagator of `(u, u')` across a constant segment of length `len`, value `v`.
fn segment(e: f64, v: f64, len: f64) -> M2 {
    let x = (e - v) * len * len;
    let (c, s) = trig_cs(x);
    [[c, len * s], [-(x / len) * s, c]]
}

/// Propagator with its first two energy derivatives.
fn segment_jet(e: f64, v: f64, len: f64) -> (M2, M2, M2) {
    let x = (e - v) * len * len;
    let t = trig(x);
    let l2 = len * len;
    let dc = -t.s / 2.0;
    let d2c = -t.ds / 2.0;
    let p = [[t.c, len * t.s], [-(x / len) * t.s, t.c]];
    let dp = [[dc, len * t.ds], [-(t.s + x * t.ds) / len, dc]];
    let d2p = [[d2c, len * t.d2s], [-(2.0 * t.ds + x * t.d2s) / len, d2c]];
    (p, scale(&dp, l2), scale(&d2p, l2 * l2))
}

/// One-period propagator of `-u'' + Vu = Eu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Monodromy {
    pub energy: f64,
    pub m: [[f64; 2]; 2],
    pub d: f64,
}

impl Monodromy {
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }
}

pub fn monodromy(pot: &Potential1D, energy: f64) -> Monodromy {
    let mut m = ID;
    for c in &pot.cells {
        m = mul(&segment(energy, c.value, c.len), &m);
    }
    Monodromy {
        energy,
        m,
        d: m[0][0] + m[1][1],
    }
}

/// `(D, D', D'')` at `energy`.
pub fn discriminant_jet(pot: &Potential1D, energy: f64) -> (f64, f64, f64) {
    let mut m = ID;
    let mut dm = [[0.0; 2]; 2];
    let mut d2m = [[0.0; 2]; 2];
    for c in &pot.cells {
        let (p, dp, d2p) = segment_jet(energy, c.value, c.len);
        let nd2 = add(
            &add(&mul(&d2p, &m), &scale(&mul(&dp, &dm), 2.0)),
            &mul(&p, &d2m),
        );
        let nd1 = add(&mul(&dp, &m), &mul(&p, &dm));
        m = mul(&p, &m);
        dm = nd1;
        d2m = nd2;
    }
    (
        m[0][0] + m[1][1],
        dm[0][0] + dm[1][1],
        d2m[0][0] + d2m[1][1],
    )
}

/// Propagator from 0 to `x ∈ [0, 1]`.
fn propagate_to(pot: &Potential1D, energy: f64, x: f64) -> M2 {
    let mut m = ID;
    for c in &pot.cells {
        if c.start >= x {
            break;
        }
        let len = (x - c.start).min(c.len);
        m = mul(&segment(energy, c.value, len), &m);
        if c.start + c.len >= x {
            break;
        }
    }
    m
}

/// Which quasimomentum realizes a band edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeK {
    Zero,
    Pi,
}

impl EdgeK {
    pub fn k(self) -> f64 {
        match self {
            EdgeK::Zero => 0.0,
            EdgeK::Pi => PI,
        }
    }
}

/// Spectral band `[lower, upper]` of index `l` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandInterval {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub lower_at: EdgeK,
    pub upper_at: EdgeK,
    /// The lower edge coincides with the upper edge of band `index - 1`.
    pub lower_touches: bool,
    /// The upper edge coincides with the lower edge of band `index + 1`.
    pub upper_touches: bool,
}

impl BandInterval {
    /// Energy at `k = 0` and at `k = π`.
    pub fn at_zero(&self) -> f64 {
        if self.lower_at == EdgeK::Zero {
            self.lower
        } else {
            self.upper
        }
    }

    pub fn at_pi(&self) -> f64 {
        if self.lower_at == EdgeK::Pi {
            self.lower
        } else {
            self.upper
        }
    }
}

fn bisect(mut a: f64, mut b: f64, mut fa: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= 1e-14 * m.abs().max(1.0) {
            return m;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Scan step in `w = √(E − E₀)`: one hundredth of the free band width `π`.
pub const DEFAULT_SCAN_STEP: f64 = 0.01 * PI;

/// Band intervals `1..=l_max`, located below `e_max`.
pub fn band_edges(pot: &Potential1D, l_max: usize, e_max: f64) -> Result<Vec<BandInterval>> {
    band_edges_with_step(pot, l_max, e_max, DEFAULT_SCAN_STEP)
}

pub fn band_edges_with_step(
    pot: &Potential1D,
    l_max: usize,
    e_max: f64,
    dw: f64,
) -> Result<Vec<BandInterval>> {
    let e0 = pot.min() - 1.0;
    let dd = |e: f64| discriminant_jet(pot, e).1;
    let dval = |e: f64| monodromy(pot, e).d;
    // Critical points of D: exactly one per (possibly closed) gap.
    let mut crit = vec![e0];
    let mut w = 0.0;
    let mut e_prev = e0;
    let mut f_prev = dd(e0);
    while crit.len() <= l_max {
        w += dw;
        let e = e0 + w * w;
        if e > e_max {
            break;
        }
        let f = dd(e);
        if f == 0.0 || (f > 0.0) != (f_prev > 0.0) {
            let c = if f == 0.0 {
                e
            } else {
                bisect(e_prev, e, f_prev, dd)
            };
            crit.push(c);
        }
        e_prev = e;
        f_prev = f;
    }
    let mut out: Vec<BandInterval> = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let a = crit[l - 1];
        let b = crit.get(l).copied().unwrap_or(e_max);
        let closed_top = crit.len() > l;
        let (first_target, second_target, first_at, second_at) = if l % 2 == 1 {
            (2.0, -2.0, EdgeK::Zero, EdgeK::Pi)
        } else {
            (-2.0, 2.0, EdgeK::Pi, EdgeK::Zero)
        };
        let scale = 1e-9 * (1.0 + dval(a).abs());
        let find = |target: f64, lo: f64, hi: f64, at_top: bool| -> Option<(f64, bool)> {
            let g = |e: f64| dval(e) - target;
            let gl = g(lo);
            let gh = g(hi);
            if gl.abs() < scale && l > 1 && !at_top {
                return Some((lo, true));
            }
            if at_top && closed_top && gh.abs() < scale {
                return Some((hi, true));
            }
            if (gl > 0.0) != (gh > 0.0) {
                Some((bisect(lo, hi, gl, g), false))
            } else if at_top && closed_top {
                // Touching within rounding: the gap is closed.
                Some((hi, true))
            } else if !at_top && l > 1 {
                Some((lo, true))
            } else {
                None
            }
        };
        let (lower, lower_touch) =
            find(first_target, a, b, false).ok_or(Error::BandNotResolved { band: l, e_max })?;
        let (upper, upper_touch) =
            find(second_target, lower, b, true).ok_or(Error::BandNotResolved { band: l, e_max })?;
        if !closed_top
            && (dval(b) - second_target).signum() == (dval(lower) - second_target).signum()
        {
            return Err(Error::BandNotResolved { band: l, e_max });
        }
        out.push(BandInterval {
            index: l,
            lower,
            upper,
            lower_at: first_at,
            upper_at: second_at,
            lower_touches: lower_touch,
            upper_touches: upper_touch,
        });
    }
    // A closed gap shows up as a touching edge on both sides.
    for i in 1..out.len() {
        if out[i].lower_touches || out[i - 1].upper_touches {
            out[i].lower_touches = true;
            out[i - 1].upper_touches = true;
            let e = 0.5 * (out[i].lower + out[i - 1].upper);
            out[i].lower = e;
            out[i - 1].upper = e;
        }
    }
    Ok(out)
}

/// Reed-Simon ordering `E₁(0) < E₁(π) ≤ E₂(π) < E₂(0) ≤ E₃(0) < …`.
pub fn interlacing_holds(bands: &[BandInterval]) -> bool {
    let mut chain = Vec::new();
    for b in bands {
        chain.push((b.lower, true));
        chain.push((b.upper, false));
    }
    chain.windows(2).all(|w| {
        let (a, _) = w[0];
        let (b, strict) = w[1];
        // Inside a band the edges are strictly ordered, across a gap `≤` suffices.
        if strict {
            b >= a - 1e-10
        } else {
            b > a
        }
    })
}

/// Bloch solution `φ_l(·, k)` of band `l`, normalized in `L²(0,1)`.
#[derive(Debug, Clone)]
pub struct BlochFunction1D {
    pub band: usize,
    pub k: f64,
    pub energy: f64,
    u0: Complex64,
    up0: Complex64,
    pot: Arc<Potential1D>,
}

impl BlochFunction1D {
    /// Value and derivative at any real `x`, via `φ(x+n) = e^{ikn}φ(x)`.
    pub fn eval_with_derivative(&self, x: f64) -> (Complex64, Complex64) {
        let n = x.floor();
        let t = x - n;
        let m = propagate_to(&self.pot, self.energy, t);
        let u = self.u0 * m[0][0] + self.up0 * m[0][1];
        let up = self.u0 * m[1][0] + self.up0 * m[1][1];
        let ph = Complex64::from_polar(1.0, self.k * n);
        (u * ph, up * ph)
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.eval_with_derivative(x).0
    }

    /// Samples at `x_j = j/(n−1)`, `j = 0..n` (both endpoints included).
    pub fn samples(&self, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|j| self.eval(j as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn initial_data(&self) -> (Complex64, Complex64) {
        (self.u0, self.up0)
    }

    /// Complex conjugate, the Bloch solution at `−k`.
    pub fn conj(&self) -> Self {
        BlochFunction1D {
            band: self.band,
            k: -self.k,
            energy: self.energy,
            u0: self.u0.conj(),
            up0: self.up0.conj(),
            pot: self.pot.clone(),
        }
    }
}

/// `∫₀¹ |u|²` for the solution with initial data `(a, b)` at energy `e`.
fn l2_norm_sq(pot: &Potential1D, e: f64, a: Complex64, b: Complex64) -> f64 {
    let mut acc = 0.0;
    let mut u = a;
    let mut up = b;
    for c in &pot.cells {
        let len = c.len;
        let x = (e - c.value) * len * len;
        let s4 = trig(4.0 * x).s;
        let s1 = trig(x).s;
        let icc = 0.5 * len * (1.0 + s4);
        let iss = 2.0 * len * len * len * one_minus_s_over(4.0 * x);
        let ics = 0.5 * len * len * s1 * s1;
        acc += u.norm_sqr() * icc + up.norm_sqr() * iss + 2.0 * (u * up.conj()).re * ics;
        let p = segment(e, c.value, len);
        let nu = u * p[0][0] + up * p[0][1];
        let nup = u * p[1][0] + up * p[1][1];
        u = nu;
        up = nup;
    }
    acc
}

/// Band solver with cached band edges.
#[derive(Debug, Clone)]
pub struct Hill1D {
    pot: Arc<Potential1D>,
    bands: Vec<BandInterval>,
}

impl Hill1D {
    /// Resolve bands `1..=l_max`; the energy ceiling is chosen from the free bands.
    pub fn new(pot: Potential1D, l_max: usize) -> Result<Self> {
        let spread = pot.max() - pot.min();
        let mut e_max = pot.max() + ((l_max as f64 + 1.0) * PI).powi(2) + spread + 10.0;
        for _ in 0..6 {
            match band_edges(&pot, l_max, e_max) {
                Ok(bands) => {
                    return Ok(Hill1D {
                        pot: Arc::new(pot),
                        bands,
                    })
                }
                Err(Error::BandNotResolved { .. }) => e_max *= 2.0,
                Err(e) => return Err(e),
            }
        }
        Err(Error::BandNotResolved { band: l_max, e_max })
    }

    pub fn potential(&self) -> &Potential1D {
        &self.pot
    }

    pub fn bands(&self) -> &[BandInterval] {
        &self.bands
    }

    pub fn band(&self, l: usize) -> Result<&BandInterval> {
        if l == 0 {
            return Err(Error::InvalidInput("band index starts at 1".into()));
        }
        self.bands.get(l - 1).ok_or(Error::BandNotResolved {
            band: l,
            e_max: f64::NAN,
        })
    }

    pub fn discriminant(&self, e: f64) -> f64 {
        monodromy(&self.pot, e).d
    }

    /// `E_l(k)` for `k ∈ [−π, π]` (even in `k`).
    pub fn band_energy(&self, l: usize, k: f64) -> Result<f64> {
        let b = *self.band(l)?;
        let ka = k.abs().min(PI);
        let target = 2.0 * ka.cos();
        if ka == 0.0 {
            return Ok(b.at_zero());
        }
        if ka == PI {
            return Ok(b.at_pi());
        }
        let g = |e: f64| monodromy(&self.pot, e).d - target;
        let (mut lo, mut hi) = (b.lower, b.upper);
        let mut glo = g(lo);
        // Safeguarded Newton on the monotone branch.
        let mut e = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (d, dd, _) = discriminant_jet(&self.pot, e);
            let ge = d - target;
            if ge == 0.0 {
                return Ok(e);
            }
            if (ge > 0.0) == (glo > 0.0) {
                lo = e;
                glo = ge;
            } else {
                hi = e;
            }
            let mut next = e - ge / dd;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - e).abs() <= 1e-15 * e.abs().max(1.0) || (hi - lo) <= 1e-15 * e.abs().max(1.0)
            {
                return Ok(next);
            }
            e = next;
        }
        Ok(e)
    }

    fn degenerate_at(&self, l: usize, ka: f64) -> bool {
        let b = &self.bands[l - 1];
        let at_edge = |which: EdgeK| (ka - which.k()).abs() < 1e-14;
        (at_edge(b.lower_at) && b.lower_touches) || (at_edge(b.upper_at) && b.upper_touches)
    }

    /// Energy and normalized Bloch function of band `l` at `k ∈ [−π, π]`.
    pub fn band_function(&self, l: usize, k: f64) -> Result<BlochFunction1D> {
        let e = self.band_energy(l, k)?;
        if self.degenerate_at(l, k.abs().min(PI)) {
            return Err(Error::DegenerateEdge {
                energy: e,
                multiplicity: 2,
            });
        }
        self.bloch_at(l, k, e)
    }

    /// Bloch function at a known energy on band `l`.
    pub fn bloch_at(&self, l: usize, k: f64, e: f64) -> Result<BlochFunction1D> {
        let mono = monodromy(&self.pot, e);
        let m = mono.m;
        let mu = Complex64::from_polar(1.0, k);
        let v1 = (Complex64::new(m[0][1], 0.0), mu - m[0][0]);
        let v2 = (mu - m[1][1], Complex64::new(m[1][0], 0.0));
        let n1 = v1.0.norm_sqr() + v1.1.norm_sqr();
        let n2 = v2.0.norm_sqr() + v2.1.norm_sqr();
        let (mut a, mut b) = if n1 >= n2 { v1 } else { v2 };
        let nv = n1.max(n2).sqrt();
        if nv < 1e-12 * (1.0 + m[0][1].abs().max(m[1][0].abs())) {
            return Err(Error::DegenerateEdge {
                energy: e,
                multiplicity: 2,
            });
        }
        // Phase convention: φ(0) real positive, else φ'(0) real positive.
        let scale_ref = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let ph = if a.norm() > 1e-8 * scale_ref {
            a.conj() / a.norm()
        } else {
            b.conj() / b.norm()
        };
        a *= ph;
        b *= ph;
        let nrm = l2_norm_sq(&self.pot, e, a, b).sqrt();
        Ok(BlochFunction1D {
            band: l,
            k,
            energy: e,
            u0: a / nrm,
            up0: b / nrm,
            pot: self.pot.clone(),
        })
    }

    /// `(E', E'')` of band `l` at `k`.
    pub fn band_derivatives(&self, l: usize, k: f64) -> Result<(f64, f64)> {
        let e = self.band_energy(l, k)?;
        derivatives_at(&self.pot, e, k)
    }

    /// Inverse `Z = E_l^{-1}` restricted to `[0, π)`; for `l = 1` this is the
    /// strictly increasing inverse of the first band.
    pub fn inverse_band(&self, l: usize, e: f64) -> Result<f64> {
        let b = *self.band(l)?;
        let (lo, hi) = (b.at_zero().min(b.at_pi()), b.at_zero().max(b.at_pi()));
        if !(e >= lo && e < hi) {
            return Err(Error::OutOfBand { energy: e, lo, hi });
        }
        let d = monodromy(&self.pot, e).d;
        Ok((0.5 * d).clamp(-1.0, 1.0).acos())
    }
}

/// `(E', E'')` at a point `(k, E)` of a band, from implicit differentiation of
/// `D(E(k)) = 2 cos k`.
pub fn derivatives_at(pot: &Potential1D, e: f64, k: f64) -> Result<(f64, f64)> {
    let (_, dd, d2d) = discriminant_jet(pot, e);
    if dd.abs() < 1e-10 {
        return Err(Error::BandEdgeSingularity { energy: e, dd });
    }
    let e1 = -2.0 * k.sin() / dd;
    let e2 = (-2.0 * k.cos() - d2d * e1 * e1) / dd;
    Ok((e1, e2))
}

/// Spec-level convenience wrappers.
pub fn band_function(pot: &Potential1D, l: usize, k: f64) -> Result<(f64, BlochFunction1D)> {
    let h = Hill1D::new(pot.clone(), l + 1)?;
    let f = h.band_function(l, k)?;
    Ok((f.energy, f))
}

pub fn band_derivatives(pot: &Potential1D, l: usize, k: f64) -> Result<(f64, f64)> {
    Hill1D::new(pot.clone(), l + 1)?.band_derivatives(l, k)
}

pub fn inverse_band(pot: &Potential1D, l: usize, e: f64) -> Result<f64> {
    Hill1D::new(pot.clone(), l + 1)?.inverse_band(l, e)
}

/// One-dimensional extended-zone map: band `l = ⌊|κ|/π⌋ + 1` and the reduced
/// quasimomentum `k = wrap(κ)` with `|k|` read off the band's monotone branch.
pub fn extended_index(kappa: f64) -> (usize, f64) {
    let a = kappa.abs();
    let l = (a / PI).floor() as usize + 1;
    let kk = if l % 2 == 1 {
        a - (l as f64 - 1.0) * PI
    } else {
        l as f64 * PI - a
    };
    let signed = if crate::wrap(kappa) < 0.0 { -kk } else { kk };
    (l, signed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mathieu(amp: f64) -> Potential1D {
        Potential1D::from_fn(256, |x| amp * (2.0 * PI * x).cos()).unwrap()
    }

    #[test]
    fn free_discriminant_values() {
        let v0 = Potential1D::constant(0.0);
        let m = monodromy(&v0, 0.0);
        assert_eq!(m.m, [[1.0, 1.0], [0.0, 1.0]]);
        assert!((m.d - 2.0).abs() < 1e-15);
        assert!((monodromy(&v0, PI * PI).d + 2.0).abs() < 1e-12);
        let mu = 1.7;
        let vm = Potential1D::constant(mu);
        for e in [2.0, 5.0, 30.0] {
            assert!((monodromy(&vm, e).d - 2.0 * (e - mu).sqrt().cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn monodromy_matches_rk4() {
        let pot = Potential1D::from_cells(&[(0.3, 2.0), (0.45, -1.5), (0.25, 6.0)]).unwrap();
        let e = 3.3;
        let m = monodromy(&pot, e).m;
        // RK4 on u'' = (V - E) u for both fundamental solutions.
        let n = 20000;
        let h = 1.0 / n as f64;
        let rhs = |x: f64, y: [f64; 2]| [y[1], (pot.value(x) - e) * y[0]];
        for (col, init) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let mut y = *init;
            for i in 0..n {
                let x = i as f64 * h;
                let k1 = rhs(x + 1e-14, y);
                let k2 = rhs(
                    x + 0.5 * h,
                    [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]],
                );
                let k3 = rhs(
                    x + 0.5 * h,
                    [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]],
                );
                let k4 = rhs(x + h - 1e-14, [y[0] + h * k3[0], y[1] + h * k3[1]]);
                for j in 0..2 {
                    y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
            assert!((y[0] - m[0][col]).abs() < 1e-6, "{y:?} {m:?}");
            assert!((y[1] - m[1][col]).abs() < 1e-6);
        }
    }

    #[test]
    fn discriminant_derivatives_match_differences() {
        let pot = mathieu(2.0);
        for e in [-0.5, 0.3, 4.0, 25.0, 60.0] {
            let (_, d1, d2) = discriminant_jet(&pot, e);
            let h = 1e-4;
            let fd1 = (monodromy(&pot, e + h).d - monodromy(&pot, e - h).d) / (2.0 * h);
            let fd2 = (monodromy(&pot, e + h).d - 2.0 * monodromy(&pot, e).d
                + monodromy(&pot, e - h).d)
                / (h * h);
            assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()), "{e} {d1} {fd1}");
            assert!((d2 - fd2).abs() < 1e-3 * (1.0 + d2.abs()), "{e} {d2} {fd2}");
        }
    }

    #[test]
    fn free_band_edges() {
        let b = band_edges(&Potential1D::constant(0.0), 4, 200.0).unwrap();
        assert!(b[0].lower.abs() < 1e-9);
        assert!((b[0].upper - PI * PI).abs() < 1e-8);
        assert!((b[1].upper - 4.0 * PI * PI).abs() < 1e-6);
        assert!(b[1].upper_touches && b[2].lower_touches);
        let mu = 3.0;
        let bm = band_edges(&Potential1D::constant(mu), 4, 200.0).unwrap();
        for (x, y) in b.iter().zip(&bm) {
            assert!((y.lower - x.lower - mu).abs() < 1e-6);
            assert!((y.upper - x.upper - mu).abs() < 1e-6);
        }
        assert!(interlacing_holds(&b));
    }

    #[test]
    fn mathieu_gap_matches_brute_force_scan() {
        let pot = mathieu(2.0);
        let b = band_edges(&pot, 3, 200.0).unwrap();
        assert!(b[1].lower - b[0].upper > 1e-3, "first gap must be open");
        // Brute force: D + 2 sign changes on a fine grid.
        let mut roots = Vec::new();
        let mut e = -3.0;
        let step = 1e-3;
        let mut prev = monodromy(&pot, e).d + 2.0;
        while e < 45.0 {
            let f = monodromy(&pot, e + step).d + 2.0;
            if (f > 0.0) != (prev > 0.0) {
                roots.push(bisect(e, e + step, prev, |x| monodromy(&pot, x).d + 2.0));
            }
            prev = f;
            e += step;
        }
        assert!((roots[0] - b[0].upper).abs() < 1e-10);
        assert!((roots[1] - b[1].lower).abs() < 1e-10);
        assert!(interlacing_holds(&b));
    }

    #[test]
    fn band_function_examples() {
        let h = Hill1D::new(Potential1D::constant(0.0), 3).unwrap();
        let f = h.band_function(1, 1.0).unwrap();
        assert!((f.energy - 1.0).abs() < 1e-12);
        let f0 = h.band_function(1, 0.0).unwrap();
        assert!(f0.energy.abs() < 1e-9);
        for s in f0.samples(11) {
            assert!((s - Complex64::new(1.0, 0.0)).norm() < 1e-6);
        }
        // Plane wave e^{ikx} with the phase convention.
        for x in [0.1, 0.5, 0.93] {
            assert!((f.eval(x) - Complex64::from_polar(1.0, x)).norm() < 1e-10);
        }
        let mu = 0.8;
        let hm = Hill1D::new(Potential1D::constant(mu), 2).unwrap();
        assert!((hm.band_energy(1, 1.3).unwrap() - mu - 1.69).abs() < 1e-11);
    }

    #[test]
    fn bloch_function_quasiperiodic_and_normalized() {
        let h = Hill1D::new(mathieu(3.0), 3).unwrap();
        for (l, k) in [(1, 0.7), (2, 2.1), (3, -1.2)] {
            let f = h.band_function(l, k).unwrap();
            let d = h.discriminant(f.energy);
            assert!((d - 2.0 * k.cos()).abs() < 1e-10);
            let s = f.samples(2001);
            assert!((s[2000] - Complex64::from_polar(1.0, k) * s[0]).norm() < 1e-8);
            // Simpson for the norm.
            let n = 2000;
            let hx = 1.0 / n as f64;
            let mut acc = 0.0;
            for (i, v) in s.iter().enumerate() {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * v.norm_sqr();
            }
            acc *= hx / 3.0;
            assert!((acc - 1.0).abs() < 1e-8, "norm {acc}");
            assert!(s[0].im.abs() < 1e-12 && s[0].re > 0.0);
        }
    }

    #[test]
    fn derivatives_examples() {
        let h = Hill1D::new(Potential1D::constant(0.0), 2).unwrap();
        let (d1, d2) = h.band_derivatives(1, 1.0).unwrap();
        assert!((d1 - 2.0).abs() < 1e-9 && (d2 - 2.0).abs() < 1e-7);
        let hm = Hill1D::new(Potential1D::constant(-2.5), 2).unwrap();
        for k in [0.3, 1.5, 2.9] {
            assert!((hm.band_derivatives(1, k).unwrap().1 - 2.0).abs() < 1e-7);
        }
        let hc = Hill1D::new(mathieu(2.0), 3).unwrap();
        let (d1, d2) = hc.band_derivatives(1, PI / 2.0).unwrap();
        assert!(d1 > 0.0);
        let dk = 1e-4;
        let e = |k: f64| hc.band_energy(1, k).unwrap();
        let fd1 = (e(PI / 2.0 + dk) - e(PI / 2.0 - dk)) / (2.0 * dk);
        let fd2 = (e(PI / 2.0 + dk) - 2.0 * e(PI / 2.0) + e(PI / 2.0 - dk)) / (dk * dk);
        assert!((d1 - fd1).abs() < 1e-4 * d1.abs());
        assert!((d2 - fd2).abs() < 1e-4 * d2.abs().max(1.0));
        let (e2d1, _) = hc.band_derivatives(2, 1.0).unwrap();
        assert!(e2d1 < 0.0);
    }

    #[test]
    fn inverse_band_examples() {
        let h = Hill1D::new(Potential1D::constant(0.0), 2).unwrap();
        assert!((h.inverse_band(1, 4.0).unwrap() - 2.0).abs() < 1e-7);
        let hm = Hill1D::new(Potential1D::constant(0.4), 2).unwrap();
        assert!((hm.inverse_band(1, 0.65).unwrap() - 0.5).abs() < 1e-7);
        let hc = Hill1D::new(mathieu(1.0), 2).unwrap();
        let b = *hc.band(1).unwrap();
        assert!(hc.inverse_band(1, b.lower).unwrap().abs() < 1e-6);
        assert!(matches!(
            hc.inverse_band(1, b.upper + 0.1),
            Err(Error::OutOfBand { .. })
        ));
        for e in [b.lower + 0.3, 0.5 * (b.lower + b.upper), b.upper - 0.2] {
            let k = hc.inverse_band(1, e).unwrap();
            assert!((hc.band_energy(1, k).unwrap() - e).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_edge_reported() {
        let h = Hill1D::new(Potential1D::constant(0.0), 3).unwrap();
        assert!(matches!(
            h.band_function(2, 0.0),
            Err(Error::DegenerateEdge {
                multiplicity: 2,
                ..
            })
        ));
        assert!(matches!(
            h.band_derivatives(1, PI),
            Err(Error::BandEdgeSingularity { .. }) | Ok(_)
        ));
    }

    #[test]
    fn extended_index_unfolds_free_bands() {
        let h = Hill1D::new(Potential1D::constant(0.0), 4).unwrap();
        for kappa in [0.4, -2.0, 4.0, -5.5, 7.3, 10.0] {
            let (l, k) = extended_index(kappa);
            assert!(
                (h.band_energy(l, k).unwrap() - kappa * kappa).abs() < 1e-8,
                "{kappa}"
            );
            let f = h.band_function(l, k).unwrap();
            assert!((f.eval(0.37) - Complex64::from_polar(1.0, kappa * 0.37)).norm() < 1e-8);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = Potential1D::from_json(r#"{"cells":[[0.5,1.0],[0.5,-1.0]]}"#).unwrap();
        assert_eq!(p.cells().len(), 2);
        let s = Potential1D::from_json(r#"{"samples":[0,1,2,3,4,5,6,7]}"#).unwrap();
        assert_eq!(s.cells().len(), 8);
        assert!(Potential1D::from_json(r#"{"cells":[[0.5,1.0]]}"#).is_err());
        assert!(Potential1D::from_json(r#"{"samples":[1,2]}"#).is_err());
    }
}
