//! Plane-wave Galerkin solver for the cell problems `H(k) = (-i∇ + k)² + V` and the
//! extended-zone functions `Λ(k + 2πs) = λ_s(k)`, `Ψ(x, k + 2πs) = ψ_s(x, k)`.
//!
//! Vectors in momentum and position space are stored as `[f64; 2]`; for `d = 1`
//! the second coordinate is ignored and labels carry a zero second entry.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hill1d::{extended_index, BlochFunction1D, Hill1D, Potential1D, Potential1DSpec};
use crate::{split_label, wrap};

pub type Vec2 = [f64; 2];
pub type Label = [i64; 2];

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone)]
pub enum PotentialMode {
    /// `V(x) = Σ_i V_i(x_i)`.
    Separable(Vec<Potential1D>),
    /// Finitely supported Fourier table, `V(x) = Σ_n V̂(n) e^{2πi⟨n,x⟩}`.
    Fourier(Vec<(Label, Complex64)>),
}

/// A real ℤ^d-periodic potential, `d ∈ {1, 2}`.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    d: usize,
    mode: PotentialMode,
}

/// On-disk form of [`PotentialSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PotentialSpecJson {
    Fourier {
        d: usize,
        /// Rows `[n1, (n2,) re, im]`.
        coeffs: Vec<Vec<f64>>,
    },
    Separable {
        #[serde(default)]
        d: Option<usize>,
        parts: Vec<Potential1DSpec>,
    },
}

fn check_dim(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "dimension {d} not supported (1 or 2)"
        )))
    }
}

impl PotentialSpec {
    pub fn fourier(d: usize, coeffs: Vec<(Label, Complex64)>) -> Result<Self> {
        check_dim(d)?;
        let mut table: HashMap<Label, Complex64> = HashMap::new();
        for (n, c) in &coeffs {
            if d == 1 && n[1] != 0 {
                return Err(Error::InvalidInput(format!(
                    "label {n:?} has a second index in d = 1"
                )));
            }
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite coefficient at {n:?}"
                )));
            }
            *table.entry(*n).or_default() += c;
        }
        for (n, c) in &table {
            let m = [-n[0], -n[1]];
            let cm = table.get(&m).copied().unwrap_or_default();
            if (cm - c.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                return Err(Error::InvalidInput(format!(
                    "Fourier table not Hermitian: V̂({m:?}) = {cm} but conj V̂({n:?}) = {}",
                    c.conj()
                )));
            }
        }
        let mut coeffs: Vec<(Label, Complex64)> =
            table.into_iter().filter(|(_, c)| c.norm() > 0.0).collect();
        coeffs.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(PotentialSpec {
            d,
            mode: PotentialMode::Fourier(coeffs),
        })
    }

    pub fn separable(parts: Vec<Potential1D>) -> Result<Self> {
        let d = parts.len();
        check_dim(d)?;
        Ok(PotentialSpec {
            d,
            mode: PotentialMode::Separable(parts),
        })
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(d, 0.0)
    }

    pub fn constant(d: usize, mu: f64) -> Self {
        Self::fourier(d, vec![([0, 0], Complex64::new(mu, 0.0))]).expect("constant potential")
    }

    /// `amp · sin²(2πx) cos(2πy)`.
    pub fn sin2_cos(amp: f64) -> Self {
        let q = Complex64::new(amp / 4.0, 0.0);
        let e = Complex64::new(-amp / 8.0, 0.0);
        Self::fourier(
            2,
            vec![
                ([0, 1], q),
                ([0, -1], q),
                ([2, 1], e),
                ([2, -1], e),
                ([-2, 1], e),
                ([-2, -1], e),
            ],
        )
        .expect("valid table")
    }

    pub fn from_json_value(v: &PotentialSpecJson) -> Result<Self> {
        match v {
            PotentialSpecJson::Fourier { d, coeffs } => {
                check_dim(*d)?;
                let mut out = Vec::with_capacity(coeffs.len());
                for row in coeffs {
                    if row.len() != d + 2 {
                        return Err(Error::InvalidInput(format!(
                            "coefficient row {row:?} must have {} entries",
                            d + 2
                        )));
                    }
                    let mut n = [0i64; 2];
                    for i in 0..*d {
                        if row[i].fract() != 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "non-integer index in {row:?}"
                            )));
                        }
                        n[i] = row[i] as i64;
                    }
                    out.push((n, Complex64::new(row[*d], row[d + 1])));
                }
                Self::fourier(*d, out)
            }
            PotentialSpecJson::Separable { d, parts } => {
                if let Some(d) = d {
                    if *d != parts.len() {
                        return Err(Error::InvalidInput(format!(
                            "separable potential with d = {d} needs {d} parts, got {}",
                            parts.len()
                        )));
                    }
                }
                let p: Result<Vec<Potential1D>> =
                    parts.iter().map(Potential1D::from_spec).collect();
                Self::separable(p?)
            }
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: PotentialSpecJson =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_json_value(&v)
    }

    pub fn to_json_value(&self) -> PotentialSpecJson {
        match &self.mode {
            PotentialMode::Fourier(c) => PotentialSpecJson::Fourier {
                d: self.d,
                coeffs: c
                    .iter()
                    .map(|(n, v)| {
                        let mut row: Vec<f64> = n[..self.d].iter().map(|&i| i as f64).collect();
                        row.push(v.re);
                        row.push(v.im);
                        row
                    })
                    .collect(),
            },
            PotentialMode::Separable(p) => PotentialSpecJson::Separable {
                d: Some(self.d),
                parts: p.iter().map(|q| q.spec().clone()).collect(),
            },
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mode(&self) -> &PotentialMode {
        &self.mode
    }

    pub fn separable_parts(&self) -> Option<&[Potential1D]> {
        match &self.mode {
            PotentialMode::Separable(p) => Some(p),
            PotentialMode::Fourier(_) => None,
        }
    }

    /// `V̂(n)`.
    pub fn coefficient(&self, n: Label) -> Complex64 {
        match &self.mode {
            PotentialMode::Fourier(c) => c
                .binary_search_by(|e| e.0.cmp(&n))
                .map(|i| c[i].1)
                .unwrap_or_default(),
            PotentialMode::Separable(parts) => {
                let mut acc = Complex64::default();
                for (i, p) in parts.iter().enumerate() {
                    let other_zero = (0..self.d).all(|j| j == i || n[j] == 0);
                    if other_zero {
                        acc += cell_fourier(p, n[i]);
                    }
                }
                acc
            }
        }
    }

    /// Value at `x` (Fourier sum or sum of 1D parts).
    pub fn value(&self, x: Vec2) -> f64 {
        match &self.mode {
            PotentialMode::Fourier(c) => c
                .iter()
                .map(|(n, v)| {
                    let ph = TWO_PI * (n[0] as f64 * x[0] + n[1] as f64 * x[1]);
                    (v * Complex64::from_polar(1.0, ph)).re
                })
                .sum(),
            PotentialMode::Separable(p) => p.iter().enumerate().map(|(i, q)| q.value(x[i])).sum(),
        }
    }

    /// Largest `‖n‖_∞` in a Fourier table (`None` for separable parts).
    pub fn fourier_extent(&self) -> Option<i64> {
        match &self.mode {
            PotentialMode::Fourier(c) => Some(
                c.iter()
                    .map(|(n, _)| n[0].abs().max(n[1].abs()))
                    .max()
                    .unwrap_or(0),
            ),
            PotentialMode::Separable(_) => None,
        }
    }

    /// `Σ |V̂(n)|`, an upper bound for `‖V − V̂(0)‖_∞` of Fourier tables.
    pub fn oscillation_bound(&self) -> f64 {
        match &self.mode {
            PotentialMode::Fourier(c) => c
                .iter()
                .filter(|(n, _)| *n != [0, 0])
                .map(|(_, v)| v.norm())
                .sum(),
            PotentialMode::Separable(p) => p.iter().map(|q| q.sup_deviation(q.mean())).sum(),
        }
    }
}

/// Fourier coefficient of a piecewise-constant 1-periodic function.
fn cell_fourier(p: &Potential1D, n: i64) -> Complex64 {
    if n == 0 {
        return Complex64::new(p.mean(), 0.0);
    }
    let w = -TWO_PI * n as f64;
    let mut acc = Complex64::default();
    for c in p.cells() {
        let a = Complex64::from_polar(1.0, w * c.start);
        let b = Complex64::from_polar(1.0, w * (c.start + c.len));
        acc += c.value * (b - a) / Complex64::new(0.0, w);
    }
    acc
}

/// Label set `{s : ‖s‖_∞ ≤ S}` in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationBox {
    pub d: usize,
    pub s: usize,
}

impl TruncationBox {
    pub fn new(d: usize, s: usize) -> Result<Self> {
        check_dim(d)?;
        if s < 2 {
            return Err(Error::InvalidInput(format!(
                "truncation S = {s} must be at least 2"
            )));
        }
        Ok(TruncationBox { d, s })
    }

    pub fn width(&self) -> usize {
        2 * self.s + 1
    }

    pub fn dim(&self) -> usize {
        self.width().pow(self.d as u32)
    }

    pub fn labels(&self) -> Vec<Label> {
        let s = self.s as i64;
        if self.d == 1 {
            (-s..=s).map(|a| [a, 0]).collect()
        } else {
            let mut v = Vec::with_capacity(self.dim());
            for a in -s..=s {
                for b in -s..=s {
                    v.push([a, b]);
                }
            }
            v
        }
    }

    pub fn index_of(&self, l: Label) -> Option<usize> {
        let s = self.s as i64;
        let w = self.width();
        if l[0].abs() > s || l[1].abs() > s || (self.d == 1 && l[1] != 0) {
            return None;
        }
        let a = (l[0] + s) as usize;
        if self.d == 1 {
            Some(a)
        } else {
            Some(a * w + (l[1] + s) as usize)
        }
    }

    /// Labels with `‖s‖_∞ ≤ S − 1`, whose eigenvalues are not polluted by the cut.
    pub fn is_interior(&self, l: Label) -> bool {
        let m = self.s as i64 - 1;
        l[0].abs() <= m && l[1].abs() <= m && (self.d == 2 || l[1] == 0)
    }
}

/// Dense `V̂` table over label differences.
#[derive(Debug, Clone)]
struct HatTable {
    bx: TruncationBox,
    span: i64,
    vals: Vec<Complex64>,
}

impl HatTable {
    fn new(spec: &PotentialSpec, bx: TruncationBox) -> Self {
        let span = 2 * bx.s as i64;
        let w = (2 * span + 1) as usize;
        let mut vals = vec![Complex64::default(); if bx.d == 1 { w } else { w * w }];
        let range: Vec<i64> = (-span..=span).collect();
        for &a in &range {
            if bx.d == 1 {
                vals[(a + span) as usize] = spec.coefficient([a, 0]);
            } else {
                for &b in &range {
                    vals[(a + span) as usize * w + (b + span) as usize] = spec.coefficient([a, b]);
                }
            }
        }
        HatTable { bx, span, vals }
    }

    fn get(&self, n: Label) -> Complex64 {
        let w = (2 * self.span + 1) as usize;
        let a = (n[0] + self.span) as usize;
        if self.bx.d == 1 {
            self.vals[a]
        } else {
            self.vals[a * w + (n[1] + self.span) as usize]
        }
    }
}

fn assemble_with(hat: &HatTable, k: Vec2) -> DMatrix<Complex64> {
    let labels = hat.bx.labels();
    let n = labels.len();
    let d = hat.bx.d;
    DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (labels[i], labels[j]);
        let mut v = hat.get([a[0] - b[0], a[1] - b[1]]);
        if i == j {
            let mut e = 0.0;
            for c in 0..d {
                let q = k[c] + TWO_PI * a[c] as f64;
                e += q * q;
            }
            v += e;
        }
        v
    })
}

/// `H(k)_{s,s'} = |k + 2πs|² δ_{ss'} + V̂(s − s')` on the truncation box.
pub fn assemble(spec: &PotentialSpec, k: Vec2, bx: TruncationBox) -> DMatrix<Complex64> {
    assemble_with(&HatTable::new(spec, bx), k)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

/// Dense Hermitian eigensolver; each eigenvector is rotated so that its largest
/// component is real and positive.
pub fn eigensolve(h: DMatrix<Complex64>) -> Result<Spectrum> {
    let n = h.nrows();
    let eig =
        nalgebra::SymmetricEigen::try_new(h, f64::EPSILON, 100_000).ok_or(Error::NoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let mut best = 0;
        for r in 0..n {
            if v[r].norm() > v[best].norm() + 1e-14 {
                best = r;
            }
        }
        let ph = v[best].conj() / v[best].norm();
        for r in 0..n {
            vectors[(r, col)] = v[r] * ph;
        }
    }
    Ok(Spectrum { values, vectors })
}

fn top_two(col: nalgebra::DVectorView<'_, Complex64>) -> (usize, f64, f64) {
    let mut i1 = 0;
    let mut m1 = -1.0;
    let mut m2 = -1.0;
    for (r, c) in col.iter().enumerate() {
        let a = c.norm();
        if a > m1 {
            m2 = m1;
            m1 = a;
            i1 = r;
        } else if a > m2 {
            m2 = a;
        }
    }
    (i1, m1, m2)
}

/// Dominant-component labeling: eigenpair `i` gets the label `s` maximizing
/// `|c_s|`. Fails if the top two moduli are within `1e-6` or two eigenpairs
/// claim the same label.
pub fn label_extended_zone(spec: &Spectrum, bx: TruncationBox, k: Vec2) -> Result<Vec<Label>> {
    let labels = bx.labels();
    let n = labels.len();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (r, m1, m2) = top_two(spec.vectors.column(i));
        if m1 - m2 < 1e-6 || taken[r] {
            return Err(Error::AmbiguousLabeling {
                k: k[..bx.d].to_vec(),
                gap: if taken[r] { 0.0 } else { m1 - m2 },
            });
        }
        taken[r] = true;
        out.push(labels[r]);
    }
    Ok(out)
}

/// Fallback labeling that always yields a bijection: eigenpairs in ascending
/// order pick the unassigned label with the largest `|c_s|`, ties going to the
/// lexicographically smallest label.
pub fn label_greedy(spec: &Spectrum, bx: TruncationBox) -> Vec<Label> {
    let labels = bx.labels();
    let n = labels.len();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let col = spec.vectors.column(i);
        let mut best = usize::MAX;
        let mut bm = -1.0;
        for r in 0..n {
            if taken[r] {
                continue;
            }
            let a = col[r].norm();
            if a > bm + 1e-12 {
                bm = a;
                best = r;
            }
        }
        taken[best] = true;
        out.push(labels[best]);
    }
    out
}

/// Eigen data at one reduced quasimomentum, labeled.
#[derive(Debug, Clone)]
pub struct KData {
    pub k: Vec2,
    pub spectrum: Spectrum,
    /// Label of each eigenpair.
    pub labels: Vec<Label>,
    /// Eigenpair index for each box label (box order).
    pub index_of_label: Vec<usize>,
    /// The strict dominant-component rule failed and the greedy fallback was used.
    pub fallback: bool,
}

impl KData {
    fn build(hat: &HatTable, k: Vec2) -> Result<Self> {
        let bx = hat.bx;
        let spectrum = eigensolve(assemble_with(hat, k))?;
        let (labels, fallback) = match label_extended_zone(&spectrum, bx, k) {
            Ok(l) => (l, false),
            Err(Error::AmbiguousLabeling { .. }) => (label_greedy(&spectrum, bx), true),
            Err(e) => return Err(e),
        };
        let mut index_of_label = vec![0; labels.len()];
        for (i, l) in labels.iter().enumerate() {
            index_of_label[bx.index_of(*l).expect("label in box")] = i;
        }
        Ok(KData {
            k,
            spectrum,
            labels,
            index_of_label,
            fallback,
        })
    }

    pub fn eigenpair(&self, s: Label, bx: TruncationBox) -> Option<BlochEigenpair> {
        let i = self.index_of_label[bx.index_of(s)?];
        Some(BlochEigenpair {
            k: self.k,
            s,
            lambda: self.spectrum.values[i],
            coeffs: self.spectrum.vectors.column(i).iter().copied().collect(),
        })
    }
}

/// `ψ_s(x, k) = Σ_{s'} c_{s'} e^{i⟨k + 2πs', x⟩}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlochEigenpair {
    pub k: Vec2,
    pub s: Label,
    pub lambda: f64,
    pub coeffs: Vec<Complex64>,
}

impl BlochEigenpair {
    pub fn eval(&self, bx: TruncationBox, x: Vec2) -> Complex64 {
        eval_plane_waves(&self.coeffs, bx, self.k, x)
    }
}

fn eval_plane_waves<'a>(
    coeffs: impl IntoIterator<Item = &'a Complex64>,
    bx: TruncationBox,
    k: Vec2,
    x: Vec2,
) -> Complex64 {
    let s = bx.s as i64;
    let w = bx.width();
    // Factorized phases e^{i(k_c + 2πm)x_c}.
    let phases: Vec<Vec<Complex64>> = (0..bx.d)
        .map(|c| {
            (-s..=s)
                .map(|m| Complex64::from_polar(1.0, (k[c] + TWO_PI * m as f64) * x[c]))
                .collect()
        })
        .collect();
    let mut acc = Complex64::default();
    for (i, c) in coeffs.into_iter().enumerate() {
        let p = if bx.d == 1 {
            phases[0][i]
        } else {
            phases[0][i / w] * phases[1][i % w]
        };
        acc += c * p;
    }
    acc
}

/// Extended-zone functions computed by plane-wave diagonalization, with a
/// per-k cache of eigen data.
#[derive(Debug)]
pub struct PlaneWaveField {
    spec: PotentialSpec,
    bx: TruncationBox,
    hat: HatTable,
    cache: Mutex<HashMap<[u64; 2], Arc<KData>>>,
    cache_limit: usize,
    grids: Mutex<HashMap<[u64; 3], ReducedGrid>>,
}

type ReducedGrid = Arc<Vec<(Vec<f64>, Vec<usize>)>>;

impl Clone for PlaneWaveField {
    fn clone(&self) -> Self {
        PlaneWaveField::new(self.spec.clone(), self.bx).expect("validated")
    }
}

impl PlaneWaveField {
    pub fn new(spec: PotentialSpec, bx: TruncationBox) -> Result<Self> {
        if spec.d() != bx.d {
            return Err(Error::InvalidInput(format!(
                "potential d = {} but box d = {}",
                spec.d(),
                bx.d
            )));
        }
        let hat = HatTable::new(&spec, bx);
        let per_entry = bx.dim() * bx.dim() * 16 + 1;
        let cache_limit = (256usize << 20) / per_entry;
        Ok(PlaneWaveField {
            spec,
            bx,
            hat,
            cache: Mutex::new(HashMap::new()),
            cache_limit: cache_limit.max(4),
            grids: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn truncation(&self) -> TruncationBox {
        self.bx
    }

    pub fn solve(&self, k: Vec2) -> Result<Arc<KData>> {
        let key = [
            k[0].to_bits(),
            if self.bx.d == 1 { 0 } else { k[1].to_bits() },
        ];
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let data = Arc::new(KData::build(&self.hat, k)?);
        let mut c = self.cache.lock().expect("cache lock");
        if c.len() >= self.cache_limit {
            c.clear();
        }
        c.insert(key, data.clone());
        Ok(data)
    }

    fn sheet(&self, kappa: Vec2) -> Result<(Arc<KData>, usize, Label)> {
        let mut k = [0.0; 2];
        let mut s = [0i64; 2];
        for c in 0..self.bx.d {
            let (kc, sc) = split_label(kappa[c]);
            k[c] = kc;
            s[c] = sc;
        }
        if !self.bx.is_interior(s) {
            return Err(Error::OutsideSampledRegion {
                kappa: kappa[..self.bx.d].to_vec(),
            });
        }
        let data = self.solve(k)?;
        let i = data.index_of_label[self.bx.index_of(s).expect("interior label")];
        Ok((data, i, s))
    }

    pub fn eigenpair(&self, kappa: Vec2) -> Result<BlochEigenpair> {
        let (data, _, s) = self.sheet(kappa)?;
        Ok(data.eigenpair(s, self.bx).expect("interior label"))
    }

    pub fn lambda(&self, kappa: Vec2) -> Result<f64> {
        let (data, i, _) = self.sheet(kappa)?;
        Ok(data.spectrum.values[i])
    }

    pub fn psi(&self, x: Vec2, kappa: Vec2) -> Result<Complex64> {
        let (data, i, _) = self.sheet(kappa)?;
        Ok(eval_plane_waves(
            data.spectrum.vectors.column(i).iter(),
            self.bx,
            data.k,
            x,
        ))
    }

    /// Gradient (Hellmann-Feynman) and Hessian (second-order perturbation) of
    /// the sheet through `κ`.
    pub fn derivatives(&self, kappa: Vec2) -> Result<(Vec2, [[f64; 2]; 2])> {
        let (data, n, _) = self.sheet(kappa)?;
        let labels = self.bx.labels();
        let v = &data.spectrum.vectors;
        let lam = &data.spectrum.values;
        let dim = labels.len();
        let d = self.bx.d;
        let mut grad = [0.0; 2];
        // (∂_c H) c_n has entries 2(k + 2πs)_c c_{n,s}.
        let mut dh: Vec<Vec<Complex64>> = Vec::with_capacity(d);
        for c in 0..d {
            let col: Vec<Complex64> = (0..dim)
                .map(|r| v[(r, n)] * 2.0 * (data.k[c] + TWO_PI * labels[r][c] as f64))
                .collect();
            grad[c] = (0..dim).map(|r| (v[(r, n)].conj() * col[r]).re).sum();
            dh.push(col);
        }
        // Matrix elements ⟨m|∂_c H|n⟩ for all m.
        let proj: Vec<Vec<Complex64>> = dh
            .iter()
            .map(|col| {
                (0..dim)
                    .map(|m| {
                        (0..dim)
                            .map(|r| v[(r, m)].conj() * col[r])
                            .sum::<Complex64>()
                    })
                    .collect()
            })
            .collect();
        let mut hess = [[0.0; 2]; 2];
        for a in 0..d {
            for b in 0..d {
                let mut acc = if a == b { 2.0 } else { 0.0 };
                for m in 0..dim {
                    if m == n {
                        continue;
                    }
                    let gap = lam[n] - lam[m];
                    if gap.abs() < 1e-13 {
                        continue;
                    }
                    acc += 2.0 * (proj[a][m].conj() * proj[b][m]).re / gap;
                }
                hess[a][b] = acc;
            }
        }
        Ok((grad, hess))
    }

    /// Eigenvalues and label maps on the reduced lattice `wrap(offset + m h)`,
    /// `m ∈ {0..N}^d`, memoized per lattice.
    fn reduced_grid(&self, offset: Vec2, h: f64, np: usize, d: usize) -> Result<ReducedGrid> {
        let key = [
            (offset[0] / h * 1e9).round() as u64,
            (offset[1] / h * 1e9).round() as u64,
            h.to_bits(),
        ];
        if let Some(v) = self.grids.lock().expect("grid lock").get(&key) {
            return Ok(v.clone());
        }
        let canon = |c: usize, m: usize| wrap(offset[c] + m as f64 * h);
        let keys: Vec<[usize; 2]> = (0..if d == 1 { 1 } else { np })
            .flat_map(|b| (0..np).map(move |a| [a, b]))
            .collect();
        let solved: Vec<Result<(Vec<f64>, Vec<usize>)>> = keys
            .par_iter()
            .map(|&[a, b]| {
                let k = [canon(0, a), if d == 1 { 0.0 } else { canon(1, b) }];
                KData::build(&self.hat, k).map(|kd| (kd.spectrum.values, kd.index_of_label))
            })
            .collect();
        let solved = Arc::new(solved.into_iter().collect::<Result<Vec<_>>>()?);
        let mut g = self.grids.lock().expect("grid lock");
        if g.len() >= 8 {
            g.clear();
        }
        g.insert(key, solved.clone());
        Ok(solved)
    }

    /// `Λ` on the grid `origin + (i h, j h)`. When `2π/h` is an integer `N`
    /// the grid folds onto `N^d` reduced quasimomenta, one eigensolve each.
    pub fn lambda_grid(&self, origin: Vec2, h: f64, n: [usize; 2]) -> Result<Vec<f64>> {
        let d = self.bx.d;
        let nn = [n[0], if d == 1 { 1 } else { n[1] }];
        let period = TWO_PI / h;
        let np = period.round();
        if (period - np).abs() > 1e-9 * period || np < 1.0 {
            let pts: Vec<Vec2> = (0..nn[1])
                .flat_map(|j| {
                    (0..nn[0]).map(move |i| [origin[0] + i as f64 * h, origin[1] + j as f64 * h])
                })
                .collect();
            return pts.par_iter().map(|&p| self.lambda(p)).collect();
        }
        let np = np as usize;
        let offset = [
            origin[0].rem_euclid(h),
            if d == 1 { 0.0 } else { origin[1].rem_euclid(h) },
        ];
        let solved = self.reduced_grid(offset, h, np, d)?;
        let canon = |c: usize, m: usize| wrap(offset[c] + m as f64 * h);
        let reduced =
            |c: usize, kap: f64| ((kap - offset[c]) / h).round().rem_euclid(np as f64) as usize;
        let mut out = Vec::with_capacity(nn[0] * nn[1]);
        for j in 0..nn[1] {
            for i in 0..nn[0] {
                let kap = [origin[0] + i as f64 * h, origin[1] + j as f64 * h];
                let ra = reduced(0, kap[0]);
                let rb = if d == 2 { reduced(1, kap[1]) } else { 0 };
                let mut s = [0i64; 2];
                s[0] = ((kap[0] - canon(0, ra)) / TWO_PI).round() as i64;
                if d == 2 {
                    s[1] = ((kap[1] - canon(1, rb)) / TWO_PI).round() as i64;
                }
                if !self.bx.is_interior(s) {
                    return Err(Error::OutsideSampledRegion {
                        kappa: kap[..d].to_vec(),
                    });
                }
                let (vals, idx) = &solved[rb * np + ra];
                out.push(vals[idx[self.bx.index_of(s).expect("interior")]]);
            }
        }
        Ok(out)
    }
}

/// Extended-zone functions built from 1D band functions of a separable potential.
#[derive(Debug, Clone)]
pub struct SeparableField {
    parts: Vec<Hill1D>,
}

impl SeparableField {
    pub fn new(parts: Vec<Potential1D>, l_max: usize) -> Result<Self> {
        check_dim(parts.len())?;
        let parts: Result<Vec<Hill1D>> = parts.into_iter().map(|p| Hill1D::new(p, l_max)).collect();
        Ok(SeparableField { parts: parts? })
    }

    pub fn parts(&self) -> &[Hill1D] {
        &self.parts
    }

    fn index(&self, c: usize, kappa: f64) -> Result<(usize, f64)> {
        let (l, k) = extended_index(kappa);
        if l > self.parts[c].bands().len() {
            return Err(Error::OutsideSampledRegion { kappa: vec![kappa] });
        }
        Ok((l, k))
    }

    /// `(E, E', E'')` of coordinate `c` at `κ_c`.
    pub fn part_jet(&self, c: usize, kappa: f64) -> Result<(f64, f64, f64)> {
        let (l, k) = self.index(c, kappa)?;
        let h = &self.parts[c];
        let e = h.band_energy(l, k)?;
        match crate::hill1d::derivatives_at(h.potential(), e, k) {
            Ok((d1, d2)) => Ok((e, d1, d2)),
            Err(Error::BandEdgeSingularity { .. }) => {
                // Closed gap: the extended-zone branch is smooth across it.
                let dk = 1e-5;
                let (_, a1, a2) = self.part_jet(c, kappa - dk * kappa.signum())?;
                let (_, b1, b2) = self.part_jet(c, kappa - 2.0 * dk * kappa.signum())?;
                Ok((e, 2.0 * a1 - b1, 2.0 * a2 - b2))
            }
            Err(e) => Err(e),
        }
    }

    /// Bloch function of coordinate `c` on the sheet through `κ_c`.
    pub fn part_function(&self, c: usize, kappa: f64) -> Result<BlochFunction1D> {
        let (l, k) = self.index(c, kappa)?;
        match self.parts[c].band_function(l, k) {
            Err(Error::DegenerateEdge { .. }) => {
                let (l2, k2) = self.index(c, kappa - 1e-9 * kappa.signum())?;
                self.parts[c].band_function(l2, k2)
            }
            r => r,
        }
    }

    pub fn part_psi(&self, c: usize, x: f64, kappa: f64) -> Result<Complex64> {
        Ok(self.part_function(c, kappa)?.eval(x))
    }
}

/// `Ψ(·, κ)` at a fixed `κ`, cheap to evaluate at many `x`.
#[derive(Debug, Clone)]
pub enum SheetPoint {
    Plane(Vec2),
    Product(Vec<BlochFunction1D>),
    Modes {
        data: Arc<KData>,
        index: usize,
        bx: TruncationBox,
    },
}

impl SheetPoint {
    pub fn eval(&self, x: Vec2) -> Complex64 {
        match self {
            SheetPoint::Plane(k) => Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1]),
            SheetPoint::Product(fs) => fs.iter().enumerate().map(|(c, f)| f.eval(x[c])).product(),
            SheetPoint::Modes { data, index, bx } => {
                eval_plane_waves(data.spectrum.vectors.column(*index).iter(), *bx, data.k, x)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExtendedZoneField {
    /// Constant potential `μ`: `Λ(κ) = |κ|² + μ`, `Ψ(x, κ) = e^{i⟨κ,x⟩}`.
    Free {
        d: usize,
        mu: f64,
    },
    Separable(SeparableField),
    PlaneWave(PlaneWaveField),
}

impl ExtendedZoneField {
    pub fn free(d: usize) -> Self {
        ExtendedZoneField::Free { d, mu: 0.0 }
    }

    pub fn separable(parts: Vec<Potential1D>) -> Result<Self> {
        Ok(ExtendedZoneField::Separable(SeparableField::new(parts, 8)?))
    }

    pub fn plane_wave(spec: PotentialSpec, s: usize) -> Result<Self> {
        let bx = TruncationBox::new(spec.d(), s)?;
        Ok(ExtendedZoneField::PlaneWave(PlaneWaveField::new(spec, bx)?))
    }

    pub fn d(&self) -> usize {
        match self {
            ExtendedZoneField::Free { d, .. } => *d,
            ExtendedZoneField::Separable(s) => s.parts.len(),
            ExtendedZoneField::PlaneWave(p) => p.bx.d,
        }
    }

    pub fn lambda(&self, kappa: Vec2) -> Result<f64> {
        match self {
            ExtendedZoneField::Free { d, mu } => {
                Ok(mu + (0..*d).map(|c| kappa[c] * kappa[c]).sum::<f64>())
            }
            ExtendedZoneField::Separable(f) => {
                let mut acc = 0.0;
                for c in 0..f.parts.len() {
                    let (l, k) = f.index(c, kappa[c])?;
                    acc += f.parts[c].band_energy(l, k)?;
                }
                Ok(acc)
            }
            ExtendedZoneField::PlaneWave(p) => p.lambda(kappa),
        }
    }

    pub fn psi(&self, x: Vec2, kappa: Vec2) -> Result<Complex64> {
        match self {
            ExtendedZoneField::Free { d, .. } => Ok(Complex64::from_polar(
                1.0,
                (0..*d).map(|c| kappa[c] * x[c]).sum::<f64>(),
            )),
            ExtendedZoneField::Separable(f) => {
                let mut acc = Complex64::new(1.0, 0.0);
                for c in 0..f.parts.len() {
                    acc *= f.part_psi(c, x[c], kappa[c])?;
                }
                Ok(acc)
            }
            ExtendedZoneField::PlaneWave(p) => p.psi(x, kappa),
        }
    }

    pub fn sheet_point(&self, kappa: Vec2) -> Result<SheetPoint> {
        match self {
            ExtendedZoneField::Free { d, .. } => {
                let mut k = kappa;
                if *d == 1 {
                    k[1] = 0.0;
                }
                Ok(SheetPoint::Plane(k))
            }
            ExtendedZoneField::Separable(f) => Ok(SheetPoint::Product(
                (0..f.parts.len())
                    .map(|c| f.part_function(c, kappa[c]))
                    .collect::<Result<_>>()?,
            )),
            ExtendedZoneField::PlaneWave(p) => {
                let (data, index, _) = p.sheet(kappa)?;
                Ok(SheetPoint::Modes {
                    data,
                    index,
                    bx: p.bx,
                })
            }
        }
    }

    /// `(Λ(κ), Ψ(x, κ))`.
    pub fn evaluate(&self, x: Vec2, kappa: Vec2) -> Result<(f64, Complex64)> {
        Ok((self.lambda(kappa)?, self.psi(x, kappa)?))
    }

    /// `Ψ(x, κ) conj Ψ(y, κ)` with a single sheet lookup.
    pub fn psi_pair(&self, x: Vec2, y: Vec2, kappa: Vec2) -> Result<Complex64> {
        match self {
            ExtendedZoneField::PlaneWave(p) => {
                let (data, i, _) = p.sheet(kappa)?;
                let col = data.spectrum.vectors.column(i);
                let a = eval_plane_waves(col.iter(), p.bx, data.k, x);
                let b = eval_plane_waves(col.iter(), p.bx, data.k, y);
                Ok(a * b.conj())
            }
            _ => Ok(self.psi(x, kappa)? * self.psi(y, kappa)?.conj()),
        }
    }

    /// `(Λ, ∇Λ, ∇²Λ)` from analytic sheet-local formulas.
    pub fn jet(&self, kappa: Vec2) -> Result<(f64, Vec2, [[f64; 2]; 2])> {
        match self {
            ExtendedZoneField::Free { d, mu } => {
                let mut g = [0.0; 2];
                let mut h = [[0.0; 2]; 2];
                for c in 0..*d {
                    g[c] = 2.0 * kappa[c];
                    h[c][c] = 2.0;
                }
                Ok((self.lambda(kappa)? + 0.0 * mu, g, h))
            }
            ExtendedZoneField::Separable(f) => {
                let mut lam = 0.0;
                let mut g = [0.0; 2];
                let mut h = [[0.0; 2]; 2];
                for c in 0..f.parts.len() {
                    let (e, e1, e2) = f.part_jet(c, kappa[c])?;
                    lam += e;
                    g[c] = e1;
                    h[c][c] = e2;
                }
                Ok((lam, g, h))
            }
            ExtendedZoneField::PlaneWave(p) => {
                let (g, h) = p.derivatives(kappa)?;
                Ok((p.lambda(kappa)?, g, h))
            }
        }
    }

    /// `Λ` on `origin + (i h, j h)`, row-major with `i` fastest.
    pub fn lambda_grid(&self, origin: Vec2, h: f64, n: [usize; 2]) -> Result<Vec<f64>> {
        let d = self.d();
        let n1 = if d == 1 { 1 } else { n[1] };
        match self {
            ExtendedZoneField::PlaneWave(p) => p.lambda_grid(origin, h, n),
            ExtendedZoneField::Separable(f) => {
                let axis = |c: usize, m: usize| -> Result<Vec<f64>> {
                    (0..m)
                        .into_par_iter()
                        .map(|i| {
                            let kap = origin[c] + i as f64 * h;
                            let (l, k) = f.index(c, kap)?;
                            f.parts[c].band_energy(l, k)
                        })
                        .collect()
                };
                let a = axis(0, n[0])?;
                let b = if d == 2 { axis(1, n1)? } else { vec![0.0] };
                let (a, b) = (&a, &b);
                Ok((0..n1)
                    .flat_map(|j| a.iter().map(move |x| x + b[j]))
                    .collect())
            }
            ExtendedZoneField::Free { .. } => (0..n1)
                .flat_map(|j| {
                    (0..n[0]).map(move |i| [origin[0] + i as f64 * h, origin[1] + j as f64 * h])
                })
                .map(|p| self.lambda(p))
                .collect(),
        }
    }

    /// Lowest value of `Λ` (the bottom of the spectrum).
    pub fn bottom(&self) -> Result<f64> {
        match self {
            ExtendedZoneField::Free { mu, .. } => Ok(*mu),
            ExtendedZoneField::Separable(f) => {
                f.parts.iter().map(|h| h.band(1).map(|b| b.lower)).sum()
            }
            ExtendedZoneField::PlaneWave(p) => Ok(p.solve([0.0, 0.0])?.spectrum.values[0]),
        }
    }

    /// Radius bound `R` with `Λ(κ) > τ` whenever `‖κ‖_∞ > R`.
    pub fn radius_bound(&self, tau: f64) -> f64 {
        let osc = match self {
            ExtendedZoneField::Free { mu, .. } => mu.abs(),
            ExtendedZoneField::Separable(f) => f
                .parts
                .iter()
                .map(|h| h.potential().max().abs().max(h.potential().min().abs()))
                .sum(),
            ExtendedZoneField::PlaneWave(p) => {
                p.spec.coefficient([0, 0]).re.abs() + p.spec.oscillation_bound()
            }
        };
        ((tau + osc).max(0.0)).sqrt() + 2.0 * PI
    }
}

/// One row of a band sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: Vec2,
    pub s: Label,
    pub lambda: f64,
}

/// Uniform tensor grid on `B` with `n` points per axis, endpoints `±π` included.
pub fn k_grid(d: usize, n: usize) -> Vec<Vec2> {
    let axis: Vec<f64> = (0..n)
        .map(|i| -PI + TWO_PI * i as f64 / (n - 1) as f64)
        .collect();
    if d == 1 {
        axis.iter().map(|&a| [a, 0.0]).collect()
    } else {
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| [a, b]))
            .collect()
    }
}

/// Interior-label eigenvalues over a k-grid.
pub fn band_sweep(spec: &PotentialSpec, bx: TruncationBox, ks: &[Vec2]) -> Result<Vec<SweepRow>> {
    let hat = HatTable::new(spec, bx);
    let per_k: Vec<Result<Vec<SweepRow>>> = ks
        .par_iter()
        .map(|&k| {
            let data = KData::build(&hat, k)?;
            let mut rows: Vec<SweepRow> = bx
                .labels()
                .into_iter()
                .filter(|s| bx.is_interior(*s))
                .map(|s| SweepRow {
                    k,
                    s,
                    lambda: data.spectrum.values[data.index_of_label[bx.index_of(s).unwrap()]],
                })
                .collect();
            rows.sort_by(|a, b| a.s.cmp(&b.s));
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_k {
        out.extend(r?);
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k1,k2,s1,s2,lambda\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.15e},{:.15e},{},{},{:.15e}",
            r.k[0], r.k[1], r.s[0], r.s[1], r.lambda
        );
    }
    s
}

/// Admissible constants for `c|s|² − C ≤ λ_s(k) ≤ C|s|² + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBounds {
    pub c: f64,
    pub big_c: f64,
    pub samples: usize,
    pub violations: usize,
}

/// Tightest constants over the sampled `(s, k)`: `C` first from the upper
/// bound and `λ_0 ≥ −C`, then the largest `c` compatible with that `C`.
pub fn growth_bounds_check(
    spec: &PotentialSpec,
    ks: &[Vec2],
    bx: TruncationBox,
    s_max: usize,
) -> Result<GrowthBounds> {
    let rows: Vec<SweepRow> = band_sweep(spec, bx, ks)?
        .into_iter()
        .filter(|r| {
            r.s[0].unsigned_abs() as usize <= s_max && r.s[1].unsigned_abs() as usize <= s_max
        })
        .collect();
    let norm2 = |s: Label| (s[0] * s[0] + s[1] * s[1]) as f64;
    let mut big_c: f64 = 0.0;
    for r in &rows {
        big_c = big_c.max(r.lambda / (norm2(r.s) + 1.0)).max(-r.lambda);
    }
    let mut c = f64::INFINITY;
    for r in &rows {
        if r.s != [0, 0] {
            c = c.min((r.lambda + big_c) / norm2(r.s));
        }
    }
    let violations = rows
        .iter()
        .filter(|r| {
            let n = norm2(r.s);
            r.lambda < c * n - big_c - 1e-9 || r.lambda > big_c * n + big_c + 1e-9
        })
        .count();
    Ok(GrowthBounds {
        c,
        big_c,
        samples: rows.len(),
        violations,
    })
}

/// `‖ψ_s(·,k)‖_∞ / ‖ψ_s(·,k)‖_{L²(Ω)}` per sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Row {
    pub k: Vec2,
    pub s: Label,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A3Report {
    pub rows: Vec<A3Row>,
    pub max_ratio: f64,
    /// Max ratio per shell `‖s‖_∞ = 0, 1, …`.
    pub by_shell: Vec<f64>,
    /// The per-shell maximum keeps increasing with `‖s‖_∞`.
    pub growing: bool,
}

pub fn a3_check(field: &PlaneWaveField, samples: &[(Vec2, Label)], nx: usize) -> Result<A3Report> {
    let bx = field.bx;
    let xs: Vec<Vec2> = if bx.d == 1 {
        (0..nx).map(|i| [i as f64 / nx as f64, 0.0]).collect()
    } else {
        (0..nx)
            .flat_map(|i| (0..nx).map(move |j| [i as f64 / nx as f64, j as f64 / nx as f64]))
            .collect()
    };
    let rows: Vec<Result<A3Row>> = samples
        .par_iter()
        .map(|&(k, s)| {
            let data = field.solve(k)?;
            let e = data
                .eigenpair(s, bx)
                .ok_or(Error::OutsideSampledRegion { kappa: k.to_vec() })?;
            let l2 = e.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let sup = xs.iter().map(|&x| e.eval(bx, x).norm()).fold(0.0, f64::max);
            Ok(A3Row {
                k,
                s,
                ratio: sup / l2,
            })
        })
        .collect();
    let rows: Vec<A3Row> = rows.into_iter().collect::<Result<_>>()?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let shells = rows
        .iter()
        .map(|r| r.s[0].abs().max(r.s[1].abs()) as usize)
        .max()
        .unwrap_or(0)
        + 1;
    let mut by_shell = vec![0.0f64; shells];
    for r in &rows {
        let sh = r.s[0].abs().max(r.s[1].abs()) as usize;
        by_shell[sh] = by_shell[sh].max(r.ratio);
    }
    let growing = by_shell.len() >= 3 && by_shell.windows(2).all(|w| w[1] > w[0] * 1.05);
    Ok(A3Report {
        rows,
        max_ratio,
        by_shell,
        growing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_hamiltonian_is_diagonal() {
        let bx = TruncationBox::new(2, 3).unwrap();
        let k = [0.3, -1.1];
        let h = assemble(&PotentialSpec::zero(2), k, bx);
        for (i, s) in bx.labels().iter().enumerate() {
            let e = (k[0] + TWO_PI * s[0] as f64).powi(2) + (k[1] + TWO_PI * s[1] as f64).powi(2);
            assert!((h[(i, i)].re - e).abs() < 1e-12);
            for j in 0..bx.dim() {
                if j != i {
                    assert_eq!(h[(i, j)], Complex64::default());
                }
            }
        }
        let hm = assemble(&PotentialSpec::constant(2, 1.5), k, bx);
        assert!(
            ((&hm - &h)
                - DMatrix::<Complex64>::identity(bx.dim(), bx.dim()) * Complex64::new(1.5, 0.0))
            .norm()
                < 1e-12
        );
    }

    #[test]
    fn sin2_cos_coefficients_match_samples() {
        let spec = PotentialSpec::sin2_cos(0.2);
        assert_eq!(spec.coefficient([0, 1]), Complex64::new(0.05, 0.0));
        assert_eq!(spec.coefficient([-2, 1]), Complex64::new(-0.025, 0.0));
        assert_eq!(spec.coefficient([1, 0]), Complex64::default());
        // Numerical DFT of samples as an independent check.
        let n = 16;
        for m in [[0i64, 1], [2, 1], [2, -1], [1, 1], [0, 0]] {
            let mut acc = Complex64::default();
            for i in 0..n {
                for j in 0..n {
                    let x = [i as f64 / n as f64, j as f64 / n as f64];
                    let v = 0.2 * (TWO_PI * x[0]).sin().powi(2) * (TWO_PI * x[1]).cos();
                    acc += v * Complex64::from_polar(
                        1.0,
                        -TWO_PI * (m[0] as f64 * x[0] + m[1] as f64 * x[1]),
                    );
                }
            }
            acc /= (n * n) as f64;
            assert!((acc - spec.coefficient(m)).norm() < 1e-14, "{m:?}");
        }
        assert!((spec.value([0.25, 0.0]) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn non_hermitian_table_rejected() {
        let bad = PotentialSpec::fourier(2, vec![([1, 0], Complex64::new(0.1, 0.0))]);
        assert!(matches!(bad, Err(Error::InvalidInput(_))));
        let j = r#"{"mode":"fourier","d":2,"coeffs":[[1,0,0.1,0.2],[-1,0,0.1,-0.2]]}"#;
        let s = PotentialSpec::from_json(j).unwrap();
        assert_eq!(s.coefficient([-1, 0]), Complex64::new(0.1, -0.2));
        let back = serde_json::to_string(&s.to_json_value()).unwrap();
        assert_eq!(
            PotentialSpec::from_json(&back).unwrap().coefficient([1, 0]),
            Complex64::new(0.1, 0.2)
        );
        let sep =
            r#"{"mode":"separable","parts":[{"cells":[[1.0,0.5]]},{"samples":[0,0,0,0,0,0,0,0]}]}"#;
        let s = PotentialSpec::from_json(sep).unwrap();
        assert_eq!(s.d(), 2);
        assert!((s.coefficient([0, 0]).re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eigensolve_small_cases() {
        let h =
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0].map(|v| Complex64::new(v, 0.0)));
        let s = eigensolve(h).unwrap();
        assert!((s.values[0] + 1.0).abs() < 1e-14 && (s.values[1] - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            [3.0, -1.0, 2.0]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect(),
        ));
        assert_eq!(eigensolve(d).unwrap().values, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn eigensolve_matches_characteristic_polynomial() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let mut h = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in i + 1..n {
                let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        let s = eigensolve(h.clone()).unwrap();
        // det(H - λ) vanishes at each eigenvalue (relative to its scale).
        for &l in &s.values {
            let m = &h - DMatrix::<Complex64>::identity(n, n) * Complex64::new(l, 0.0);
            let det = m.clone().determinant();
            let scale: f64 = s
                .values
                .iter()
                .map(|v| (v - l).abs().max(1e-3))
                .product::<f64>()
                / 1e-3;
            assert!(det.norm() < 1e-9 * scale.max(1.0), "{det}");
        }
        // Residuals and orthonormality.
        let v = &s.vectors;
        let gram = v.adjoint() * v;
        assert!((gram - DMatrix::<Complex64>::identity(n, n)).norm() < 1e-12);
        for i in 0..n {
            let r = &h * v.column(i) - v.column(i) * Complex64::new(s.values[i], 0.0);
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn free_labels_reproduce_exact_eigenvalues() {
        let bx = TruncationBox::new(2, 4).unwrap();
        let spec = PotentialSpec::zero(2);
        for k in [[0.0, 0.0], [PI, -PI], [0.4, 2.2]] {
            let sp = eigensolve(assemble(&spec, k, bx)).unwrap();
            let labels = label_extended_zone(&sp, bx, k).unwrap();
            for (i, s) in labels.iter().enumerate() {
                let e =
                    (k[0] + TWO_PI * s[0] as f64).powi(2) + (k[1] + TWO_PI * s[1] as f64).powi(2);
                assert!((sp.values[i] - e).abs() < 1e-10);
                let idx = bx.index_of(*s).unwrap();
                assert!((sp.vectors[(idx, i)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_tensor_identity_small() {
        let p1 = Potential1D::from_cells(&[(0.4, 1.0), (0.6, -0.5)]).unwrap();
        let p2 = Potential1D::from_cells(&[(0.5, 0.3), (0.5, 0.0)]).unwrap();
        let spec2 = PotentialSpec::separable(vec![p1.clone(), p2.clone()]).unwrap();
        let bx2 = TruncationBox::new(2, 4).unwrap();
        let bx1 = TruncationBox::new(1, 4).unwrap();
        let k = [0.7, -1.9];
        let e2 = eigensolve(assemble(&spec2, k, bx2)).unwrap().values;
        let a = eigensolve(assemble(
            &PotentialSpec::separable(vec![p1]).unwrap(),
            [k[0], 0.0],
            bx1,
        ))
        .unwrap()
        .values;
        let b = eigensolve(assemble(
            &PotentialSpec::separable(vec![p2]).unwrap(),
            [k[1], 0.0],
            bx1,
        ))
        .unwrap()
        .values;
        let mut sums: Vec<f64> = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| x + y))
            .collect();
        sums.sort_by(f64::total_cmp);
        for (x, y) in e2.iter().zip(&sums) {
            assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn field_variants_agree_for_constant_potential() {
        let mu = 0.7;
        let free = ExtendedZoneField::Free { d: 2, mu };
        let pw = ExtendedZoneField::plane_wave(PotentialSpec::constant(2, mu), 4).unwrap();
        let sep = ExtendedZoneField::separable(vec![
            Potential1D::constant(mu),
            Potential1D::constant(0.0),
        ])
        .unwrap();
        for kappa in [[0.3, 0.2], [4.0, -2.5], [-7.0, 1.1]] {
            let l0 = free.lambda(kappa).unwrap();
            assert!((pw.lambda(kappa).unwrap() - l0).abs() < 1e-10);
            assert!((sep.lambda(kappa).unwrap() - l0).abs() < 1e-8);
            let x = [0.3, 1.7];
            let p0 = free.psi(x, kappa).unwrap();
            assert!((pw.psi(x, kappa).unwrap() - p0).norm() < 1e-10);
            assert!((sep.psi(x, kappa).unwrap() - p0).norm() < 1e-7);
            let (_, g, h) = pw.jet(kappa).unwrap();
            assert!(
                (g[0] - 2.0 * kappa[0]).abs() < 1e-9
                    && (h[1][1] - 2.0).abs() < 1e-9
                    && h[0][1].abs() < 1e-9
            );
            let (_, gs, hs) = sep.jet(kappa).unwrap();
            assert!((gs[1] - 2.0 * kappa[1]).abs() < 1e-6 && (hs[0][0] - 2.0).abs() < 1e-5);
        }
        assert!(matches!(
            pw.lambda([40.0, 0.0]),
            Err(Error::OutsideSampledRegion { .. })
        ));
    }

    #[test]
    fn plane_wave_quasiperiodic_and_derivatives() {
        let pw = ExtendedZoneField::plane_wave(PotentialSpec::sin2_cos(2.0), 4).unwrap();
        let kappa = [1.3, 0.4];
        let x = [0.21, 0.67];
        let p = pw.psi(x, kappa).unwrap();
        let shifted = pw.psi([x[0] + 2.0, x[1] - 1.0], kappa).unwrap();
        let ph = Complex64::from_polar(1.0, wrap(kappa[0]) * 2.0 - wrap(kappa[1]));
        assert!((shifted - ph * p).norm() < 1e-10);
        let (l, g, h) = pw.jet(kappa).unwrap();
        let dk = 1e-4;
        let f = |a: f64, b: f64| pw.lambda([kappa[0] + a, kappa[1] + b]).unwrap();
        assert!((g[0] - (f(dk, 0.0) - f(-dk, 0.0)) / (2.0 * dk)).abs() < 1e-6);
        assert!((g[1] - (f(0.0, dk) - f(0.0, -dk)) / (2.0 * dk)).abs() < 1e-6);
        assert!((h[0][0] - (f(dk, 0.0) - 2.0 * l + f(-dk, 0.0)) / (dk * dk)).abs() < 1e-3);
        let fd01 = (f(dk, dk) - f(dk, -dk) - f(-dk, dk) + f(-dk, -dk)) / (4.0 * dk * dk);
        assert!((h[0][1] - fd01).abs() < 1e-3, "{} {fd01}", h[0][1]);
    }

    #[test]
    fn reduced_grid_matches_pointwise() {
        let pw = PlaneWaveField::new(
            PotentialSpec::sin2_cos(0.2),
            TruncationBox::new(2, 3).unwrap(),
        )
        .unwrap();
        let h = TWO_PI / 8.0;
        let origin = [-PI + 0.5 * h, -PI + 0.5 * h];
        let g = pw.lambda_grid(origin, h, [16, 12]).unwrap();
        for (j, i) in [(0usize, 0usize), (3, 11), (11, 15), (7, 8)] {
            let v = pw
                .lambda([origin[0] + i as f64 * h, origin[1] + j as f64 * h])
                .unwrap();
            assert!((g[j * 16 + i] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn growth_and_a3_for_free_case() {
        let bx = TruncationBox::new(2, 3).unwrap();
        let ks = k_grid(2, 5);
        let g = growth_bounds_check(&PotentialSpec::zero(2), &ks, bx, 2).unwrap();
        assert_eq!(g.violations, 0);
        assert!(g.c > 0.0);
        let pw = PlaneWaveField::new(PotentialSpec::zero(2), bx).unwrap();
        let samples: Vec<(Vec2, Label)> = vec![
            ([0.2, 0.1], [0, 0]),
            ([1.0, -2.0], [1, 2]),
            ([3.0, 0.0], [-2, 1]),
        ];
        let r = a3_check(&pw, &samples, 8).unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12);
        assert!(!r.growing);
    }
}
