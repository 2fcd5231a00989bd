//! Floquet-Bloch transform `U f(x,k) = |B|^{-1/2} Σ_n f(x−n) e^{i⟨n,k⟩}` and its
//! inverse `U⁻¹g(x) = |B|^{-1/2} ∫_B g(x,k) dk`, on cell-wise midpoint grids.
//!
//! With this normalization `U` is unitary for the plain measure `dk` on `B`.
//! All quadratures are midpoint rules in `x` and periodic rectangle rules in `k`,
//! so the discrete transform is exactly unitary once the k-grid has at least as
//! many points per axis as the support has cells.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::planewave::{ExtendedZoneField, Label, PlaneWaveField, Vec2};
use crate::zone_volume;

const TWO_PI: f64 = 2.0 * PI;

/// Finitely supported function sampled at `x = n + (i + ½)/m` in every cell `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    pub d: usize,
    pub m: usize,
    pub cells: Vec<(Label, Vec<Complex64>)>,
}

fn local_points(d: usize, m: usize) -> Vec<Vec2> {
    let h = 1.0 / m as f64;
    if d == 1 {
        (0..m).map(|i| [(i as f64 + 0.5) * h, 0.0]).collect()
    } else {
        (0..m)
            .flat_map(|i| (0..m).map(move |j| [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]))
            .collect()
    }
}

fn dot(n: Label, k: Vec2, d: usize) -> f64 {
    (0..d).map(|c| n[c] as f64 * k[c]).sum()
}

impl SampledFunction {
    /// Sample `f` on the cells `lo..=hi` (componentwise).
    pub fn from_fn(
        d: usize,
        m: usize,
        lo: Label,
        hi: Label,
        f: impl Fn(Vec2) -> Complex64,
    ) -> Result<Self> {
        if !(d == 1 || d == 2) || m == 0 {
            return Err(Error::InvalidInput(format!(
                "bad sampling d = {d}, m = {m}"
            )));
        }
        let pts = local_points(d, m);
        let mut cells = Vec::new();
        let (lo1, hi1) = if d == 1 { (0, 0) } else { (lo[1], hi[1]) };
        for a in lo[0]..=hi[0] {
            for b in lo1..=hi1 {
                let n = [a, b];
                let vals = pts
                    .iter()
                    .map(|p| f([n[0] as f64 + p[0], n[1] as f64 + p[1]]))
                    .collect();
                cells.push((n, vals));
            }
        }
        Ok(SampledFunction { d, m, cells })
    }

    pub fn points_per_cell(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn cell_volume_weight(&self) -> f64 {
        (1.0 / self.m as f64).powi(self.d as i32)
    }

    /// `(‖f‖_{L^p})^p` by the midpoint rule (`p = ∞` gives the max).
    pub fn lp_norm(&self, p: f64) -> f64 {
        let it = self
            .cells
            .iter()
            .flat_map(|(_, v)| v.iter().map(|z| z.norm()));
        if p.is_infinite() {
            it.fold(0.0, f64::max)
        } else {
            (it.map(|a| a.powf(p)).sum::<f64>() * self.cell_volume_weight()).powf(1.0 / p)
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0)
    }

    /// Componentwise cell range `(lo, hi)`.
    pub fn support(&self) -> (Label, Label) {
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for (n, _) in &self.cells {
            for c in 0..2 {
                lo[c] = lo[c].min(n[c]);
                hi[c] = hi[c].max(n[c]);
            }
        }
        (lo, hi)
    }
}

/// Samples of a function on `Ω × B`, quasiperiodically extended in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetField {
    pub d: usize,
    pub m: usize,
    /// k-points per axis; `k_j = −π + 2πj/N`.
    pub nk: usize,
    /// `values[k_index * points + x_index]`.
    pub values: Vec<Complex64>,
    /// Cell range of the function the field came from, if known.
    pub support: Option<(Label, Label)>,
}

/// Periodic grid on `B` with `nk` points per axis.
pub fn k_points(d: usize, nk: usize) -> Vec<Vec2> {
    let axis: Vec<f64> = (0..nk)
        .map(|j| -PI + TWO_PI * j as f64 / nk as f64)
        .collect();
    if d == 1 {
        axis.iter().map(|&a| [a, 0.0]).collect()
    } else {
        axis.iter()
            .flat_map(|&a| axis.iter().map(move |&b| [a, b]))
            .collect()
    }
}

impl FloquetField {
    pub fn k_grid(&self) -> Vec<Vec2> {
        k_points(self.d, self.nk)
    }

    pub fn k_weight(&self) -> f64 {
        (TWO_PI / self.nk as f64).powi(self.d as i32)
    }

    pub fn x_weight(&self) -> f64 {
        (1.0 / self.m as f64).powi(self.d as i32)
    }

    pub fn points(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn get(&self, k_index: usize, x_index: usize) -> Complex64 {
        self.values[k_index * self.points() + x_index]
    }

    /// `‖g‖_{L²(Ω×B)}`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.k_weight() * self.x_weight())
            .sqrt()
    }
}

pub fn transform(f: &SampledFunction, nk: usize) -> FloquetField {
    let ks = k_points(f.d, nk);
    let p = f.points_per_cell();
    let norm = zone_volume(f.d).powf(-0.5);
    let mut values = vec![Complex64::default(); ks.len() * p];
    for (ki, k) in ks.iter().enumerate() {
        for (n, vals) in &f.cells {
            // x ∈ Ω picks up f on cell n = −(lattice shift), weight e^{−i⟨n,k⟩}.
            let ph = Complex64::from_polar(norm, -dot(*n, *k, f.d));
            for (xi, v) in vals.iter().enumerate() {
                values[ki * p + xi] += ph * v;
            }
        }
    }
    FloquetField {
        d: f.d,
        m: f.m,
        nk,
        values,
        support: Some(f.support()),
    }
}

/// Inverse transform at one grid point, with an aliasing flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseValue {
    pub value: Complex64,
    /// The k-grid cannot separate cell `n` from `n ± N` within the support.
    pub alias_risk: bool,
}

/// `U⁻¹g` at `x = n + x_local(x_index)`.
pub fn inverse(g: &FloquetField, cell: Label, x_index: usize) -> InverseValue {
    let norm = zone_volume(g.d).powf(-0.5);
    let p = g.points();
    let mut acc = Complex64::default();
    for (ki, k) in g.k_grid().iter().enumerate() {
        acc += g.values[ki * p + x_index] * Complex64::from_polar(1.0, dot(cell, *k, g.d));
    }
    let alias_risk = match g.support {
        Some((lo, hi)) => (0..g.d).any(|c| {
            let a = lo[c].min(cell[c]);
            let b = hi[c].max(cell[c]);
            (b - a + 1) as usize > g.nk
        }),
        None => (0..g.d).any(|c| (2 * cell[c].unsigned_abs() as usize) >= g.nk),
    };
    InverseValue {
        value: acc * norm * g.k_weight(),
        alias_risk,
    }
}

/// `U⁻¹g` on the cells `lo..=hi`.
pub fn inverse_on(g: &FloquetField, lo: Label, hi: Label) -> (SampledFunction, bool) {
    let mut risk = false;
    let (lo1, hi1) = if g.d == 1 { (0, 0) } else { (lo[1], hi[1]) };
    let mut cells = Vec::new();
    for a in lo[0]..=hi[0] {
        for b in lo1..=hi1 {
            let vals = (0..g.points())
                .map(|xi| {
                    let v = inverse(g, [a, b], xi);
                    risk |= v.alias_risk;
                    v.value
                })
                .collect();
            cells.push(([a, b], vals));
        }
    }
    (
        SampledFunction {
            d: g.d,
            m: g.m,
            cells,
        },
        risk,
    )
}

/// Orthonormal Bloch basis used for coefficient tables.
pub enum Basis<'a> {
    /// Plane waves `e^{i⟨k+2πs,x⟩}` for `s` in the alias window of the x-grid.
    Free,
    /// All eigenpairs of a plane-wave solver (its full truncation box).
    PlaneWave(&'a PlaneWaveField),
    /// Any extended-zone field restricted to the given labels.
    Field(&'a ExtendedZoneField, Vec<Label>),
}

fn alias_window(d: usize, m: usize) -> Vec<Label> {
    let lo = -((m / 2) as i64);
    let hi = lo + m as i64 - 1;
    if d == 1 {
        (lo..=hi).map(|a| [a, 0]).collect()
    } else {
        (lo..=hi)
            .flat_map(|a| (lo..=hi).map(move |b| [a, b]))
            .collect()
    }
}

/// Basis functions at `k` sampled on the Ω-grid, with their labels.
fn basis_at(
    basis: &Basis<'_>,
    d: usize,
    m: usize,
    k: Vec2,
) -> Result<Vec<(Label, Vec<Complex64>)>> {
    let pts = local_points(d, m);
    match basis {
        Basis::Free => Ok(alias_window(d, m)
            .into_iter()
            .map(|s| {
                let kap = [k[0] + TWO_PI * s[0] as f64, k[1] + TWO_PI * s[1] as f64];
                (
                    s,
                    pts.iter()
                        .map(|x| Complex64::from_polar(1.0, dot2(kap, *x, d)))
                        .collect(),
                )
            })
            .collect()),
        Basis::PlaneWave(f) => {
            let bx = f.truncation();
            let data = f.solve(k)?;
            Ok(bx
                .labels()
                .into_iter()
                .map(|s| {
                    let e = data.eigenpair(s, bx).expect("box label");
                    (s, pts.iter().map(|x| e.eval(bx, *x)).collect())
                })
                .collect())
        }
        Basis::Field(f, labels) => labels
            .iter()
            .map(|&s| {
                let kap = [k[0] + TWO_PI * s[0] as f64, k[1] + TWO_PI * s[1] as f64];
                let v: Result<Vec<Complex64>> = pts.iter().map(|x| f.psi(*x, kap)).collect();
                Ok((s, v?))
            })
            .collect(),
    }
}

fn dot2(a: Vec2, b: Vec2, d: usize) -> f64 {
    (0..d).map(|c| a[c] * b[c]).sum()
}

/// One entry `⟨Uf(·,k), ψ_s(·,k)⟩`, computed through `Uf` and directly from `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefRow {
    pub k: Vec2,
    pub s: Label,
    pub value: Complex64,
    pub direct: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefTable {
    pub d: usize,
    pub nk: usize,
    pub rows: Vec<CoefRow>,
}

impl CoefTable {
    pub fn k_weight(&self) -> f64 {
        (TWO_PI / self.nk as f64).powi(self.d as i32)
    }

    /// Largest `|value − direct|`.
    pub fn max_route_gap(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.value - r.direct).norm())
            .fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("k1,k2,s1,s2,re,im\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.15e},{:.15e},{},{},{:.15e},{:.15e}",
                r.k[0], r.k[1], r.s[0], r.s[1], r.value.re, r.value.im
            );
        }
        s
    }
}

pub fn coefficients(f: &SampledFunction, nk: usize, basis: &Basis<'_>) -> Result<CoefTable> {
    let uf = transform(f, nk);
    let wx = f.cell_volume_weight();
    let norm = zone_volume(f.d).powf(-0.5);
    let mut rows = Vec::new();
    for (ki, k) in uf.k_grid().iter().enumerate() {
        let b = basis_at(basis, f.d, f.m, *k)?;
        for (s, psi) in b {
            let mut via = Complex64::default();
            for (xi, p) in psi.iter().enumerate() {
                via += uf.get(ki, xi) * p.conj();
            }
            // Direct: ψ on cell n is e^{i⟨k,n⟩} times its Ω values.
            let mut direct = Complex64::default();
            for (n, vals) in &f.cells {
                let ph = Complex64::from_polar(1.0, -dot(*n, *k, f.d));
                let mut acc = Complex64::default();
                for (xi, v) in vals.iter().enumerate() {
                    acc += v * psi[xi].conj();
                }
                direct += ph * acc;
            }
            rows.push(CoefRow {
                k: *k,
                s,
                value: via * wx,
                direct: direct * wx * norm,
            });
        }
    }
    Ok(CoefTable { d: f.d, nk, rows })
}

/// `‖(⟨Uh,ψ_s⟩)‖_{L^r(B×ℤ^d)}`; `r = ∞` is the max over the sampled table,
/// a lower bound for the essential supremum.
pub fn mixed_norm(table: &CoefTable, r: f64) -> f64 {
    if r.is_infinite() {
        return table
            .rows
            .iter()
            .map(|row| row.value.norm())
            .fold(0.0, f64::max);
    }
    // Fixed summation order: rows are stored k-major, s-minor.
    let sum: f64 = table.rows.iter().map(|row| row.value.norm().powf(r)).sum();
    (sum * table.k_weight()).powf(1.0 / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planewave::{PotentialSpec, TruncationBox};
    use rand::{Rng, SeedableRng};

    fn random_f(seed: u64, d: usize, m: usize) -> SampledFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let lo = [rng.gen_range(-2..=0), rng.gen_range(-2..=0)];
        let hi = [lo[0] + rng.gen_range(0..3), lo[1] + rng.gen_range(0..3)];
        let mut f = SampledFunction::from_fn(d, m, lo, hi, |_| Complex64::default()).unwrap();
        for (_, v) in f.cells.iter_mut() {
            for z in v.iter_mut() {
                *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        f
    }

    #[test]
    fn indicator_of_one_cell() {
        let f =
            SampledFunction::from_fn(2, 3, [0, 0], [0, 0], |_| Complex64::new(1.0, 0.0)).unwrap();
        let g = transform(&f, 4);
        let c = zone_volume(2).powf(-0.5);
        assert!(g.values.iter().all(|z| (z - c).norm() < 1e-15));
    }

    #[test]
    fn two_cell_sum() {
        let f =
            SampledFunction::from_fn(2, 2, [0, 0], [1, 0], |_| Complex64::new(1.0, 0.0)).unwrap();
        let g = transform(&f, 6);
        let c = zone_volume(2).powf(-0.5);
        for (ki, k) in g.k_grid().iter().enumerate() {
            let want = c * (1.0 + Complex64::from_polar(1.0, -k[0]));
            assert!((g.get(ki, 0) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn isometry_and_round_trip() {
        for seed in 0..10 {
            let f = random_f(seed, 2, 3);
            let g = transform(&f, 4);
            assert!((g.l2_norm() - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
            let (lo, hi) = f.support();
            let (back, risk) = inverse_on(&g, lo, hi);
            assert!(!risk);
            for ((_, a), (_, b)) in f.cells.iter().zip(&back.cells) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coarse_k_grid_flags_aliasing() {
        let f =
            SampledFunction::from_fn(1, 4, [0, 0], [3, 0], |x| Complex64::new(x[0], 0.0)).unwrap();
        let g = transform(&f, 2);
        assert!(inverse(&g, [3, 0], 0).alias_risk);
        let g = transform(&f, 4);
        assert!(!inverse(&g, [3, 0], 0).alias_risk);
    }

    #[test]
    fn plancherel_free_basis() {
        let f = random_f(3, 2, 4);
        let t = coefficients(&f, 4, &Basis::Free).unwrap();
        assert!(t.max_route_gap() < 1e-12);
        assert!((mixed_norm(&t, 2.0) - f.l2_norm()).abs() < 1e-12);
        assert!(mixed_norm(&t, f64::INFINITY) > 0.0);
    }

    #[test]
    fn plancherel_plane_wave_basis() {
        let bx = TruncationBox::new(2, 2).unwrap();
        let pw = PlaneWaveField::new(PotentialSpec::sin2_cos(3.0), bx).unwrap();
        let f = random_f(5, 2, bx.width());
        let t = coefficients(&f, 3, &Basis::PlaneWave(&pw)).unwrap();
        assert!(t.max_route_gap() < 1e-12);
        assert!((mixed_norm(&t, 2.0) - f.l2_norm()).abs() < 1e-10 * f.l2_norm());
    }

    #[test]
    fn free_coefficients_localize() {
        let k0 = [0.9, -0.4];
        let s0 = [1i64, 0];
        let kap = [k0[0] + TWO_PI, k0[1]];
        // Plane wave under a wide smooth cutoff; coefficients peak at (k0, s0).
        let w = 4.0;
        let f = SampledFunction::from_fn(2, 8, [-4, -4], [3, 3], |x| {
            let r2 = (x[0] * x[0] + x[1] * x[1]) / (w * w);
            Complex64::from_polar((-r2 * 4.0).exp(), kap[0] * x[0] + kap[1] * x[1])
        })
        .unwrap();
        let t = coefficients(&f, 8, &Basis::Free).unwrap();
        let best = t
            .rows
            .iter()
            .max_by(|a, b| a.value.norm().total_cmp(&b.value.norm()))
            .unwrap();
        assert_eq!(best.s, s0);
    }

    #[test]
    fn tiny_grid_by_hand() {
        // One cell, one sample, two k-points: |coef| = |B|^{-1/2}|f| for each k.
        let f =
            SampledFunction::from_fn(1, 1, [0, 0], [0, 0], |_| Complex64::new(2.0, 0.0)).unwrap();
        let t = coefficients(&f, 2, &Basis::Free).unwrap();
        assert_eq!(t.rows.len(), 2);
        let c = 2.0 / (TWO_PI).sqrt();
        assert!((mixed_norm(&t, f64::INFINITY) - c).abs() < 1e-14);
        assert!((mixed_norm(&t, 2.0) - 2.0).abs() < 1e-14);
    }
}
