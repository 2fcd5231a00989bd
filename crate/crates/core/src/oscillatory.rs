//! Oscillatory building blocks of the kernel analysis: the Plemelj-Sokhotski
//! limit, Fresnel-phase Fourier transforms, the stationary-phase remainder
//! `Ξ`, Fermi-curve integrals `a_{x,y}(τ)`, farfield leading terms, Dirichlet
//! shell functions and the Hankel function `H⁽¹⁾`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fermi::{level_curvature, Component, FermiSurface};
use crate::planewave::{ExtendedZoneField, SheetPoint, Vec2};
use crate::quad::{gauss_legendre, loglog_slope};
use crate::Complex64;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Even `C^∞` cutoff: `χ = 1` on `[−ρ/2, ρ/2]`, `χ = 0` outside `(−ρ, ρ)`, and
/// in between `χ = φ(1−u)/(φ(1−u)+φ(u))` with `u = 2|t|/ρ − 1`, `φ(s) = e^{−1/s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffChi {
    pub rho: f64,
    /// Indicator of `[−ρ, ρ]` instead of the smooth profile.
    pub flat: bool,
}

impl CutoffChi {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cutoff radius must be positive, got {rho}"
            )));
        }
        Ok(CutoffChi { rho, flat: false })
    }

    pub fn flat(rho: f64) -> Result<Self> {
        Ok(CutoffChi {
            flat: true,
            ..Self::new(rho)?
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        if self.flat {
            return if a <= self.rho { 1.0 } else { 0.0 };
        }
        if a <= 0.5 * self.rho {
            return 1.0;
        }
        if a >= self.rho {
            return 0.0;
        }
        let u = 2.0 * a / self.rho - 1.0;
        let phi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
        let (p, q) = (phi(1.0 - u), phi(u));
        p / (p + q)
    }
}

/// Complex samples of a density on the uniform grid `λ − ρ + 2ρ i/(n−1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledDensity {
    pub lambda: f64,
    pub rho: f64,
    pub values: Vec<Complex64>,
}

impl SampledDensity {
    /// `n` must be odd (so `λ` is a node) and at least 65.
    pub fn new(lambda: f64, rho: f64, values: Vec<Complex64>) -> Result<Self> {
        let n = values.len();
        if n < 65 || n % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "density needs an odd number ≥ 65 of samples, got {n}"
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidInput("window radius must be positive".into()));
        }
        Ok(SampledDensity {
            lambda,
            rho,
            values,
        })
    }

    pub fn from_fn(lambda: f64, rho: f64, n: usize, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let h = 2.0 * rho / (n.max(2) - 1) as f64;
        Self::new(
            lambda,
            rho,
            (0..n).map(|i| f(lambda - rho + i as f64 * h)).collect(),
        )
    }

    pub fn step(&self) -> f64 {
        2.0 * self.rho / (self.values.len() - 1) as f64
    }

    pub fn taus(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.values.len())
            .map(|i| self.lambda - self.rho + i as f64 * h)
            .collect()
    }

    pub fn center(&self) -> Complex64 {
        self.values[self.values.len() / 2]
    }

    /// Hölder estimate `(β, C)` from `|a(λ+t) − a(λ)| ≈ C|t|^β` over the
    /// inner quarter of the window.
    pub fn holder(&self) -> (f64, f64) {
        let c = self.values.len() / 2;
        let h = self.step();
        let m = (c / 4).max(4);
        let mut ts = Vec::new();
        let mut ds = Vec::new();
        for i in 1..=m {
            let d = 0.5
                * ((self.values[c + i] - self.center()).norm()
                    + (self.values[c - i] - self.center()).norm());
            if d > 0.0 {
                ts.push(i as f64 * h);
                ds.push(d);
            }
        }
        if ts.len() < 2 {
            return (1.0, 0.0);
        }
        let (beta, _) = loglog_slope(&ts, &ds);
        let coef = ts
            .iter()
            .zip(&ds)
            .map(|(t, d)| d / t.powf(beta))
            .fold(0.0, f64::max);
        (beta, coef)
    }
}

/// Which boundary value: `+` for `τ − λ − i0`, `−` for `τ − λ + i0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

fn check_window(a: &SampledDensity, lambda: f64, chi: &CutoffChi) -> Result<()> {
    if (a.lambda - lambda).abs() > 1e-12 * (1.0 + lambda.abs()) {
        return Err(Error::WindowMismatch(format!(
            "density centered at {}, requested λ = {lambda}",
            a.lambda
        )));
    }
    if (a.rho - chi.rho).abs() > 1e-12 * chi.rho {
        return Err(Error::WindowMismatch(format!(
            "density half-width {} but cutoff ρ = {}",
            a.rho, chi.rho
        )));
    }
    Ok(())
}

/// `lim_{ε→0} ∫ χ(τ−λ) a(τ)/(τ − λ ∓ iε) dτ = ∫ χ(t)(a(λ+t) − a(λ))/t dt ± iπ a(λ)`.
/// The principal-value part integrates the piecewise-linear interpolant of
/// `χ(t)(a(λ+t) − a(λ))` against `1/t` exactly.
pub fn plemelj_limit(
    a: &SampledDensity,
    lambda: f64,
    chi: &CutoffChi,
    side: Side,
) -> Result<Complex64> {
    check_window(a, lambda, chi)?;
    let n = a.values.len();
    let c = n / 2;
    let h = a.step();
    let a0 = a.center();
    let g: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = (i as f64 - c as f64) * h;
            (a.values[i] - a0) * chi.eval(t)
        })
        .collect();
    let mut pv = Complex64::new(0.0, 0.0);
    for i in 0..n - 1 {
        let (t0, t1) = ((i as f64 - c as f64) * h, (i as f64 + 1.0 - c as f64) * h);
        if i == c || i + 1 == c {
            // g vanishes at t = 0: ∫ g/t = slope·h.
            pv += if i == c { g[i + 1] } else { -g[i] };
            continue;
        }
        let slope = (g[i + 1] - g[i]) / h;
        pv += slope * h + (g[i] - slope * t0) * (t1 / t0).ln();
    }
    Ok(pv + I * PI * side.sign() * a0)
}

/// `∫ χ(t) a(λ+t)/(t ∓ iε) dt` for the same interpolant.
pub fn plemelj_regularized(
    a: &SampledDensity,
    lambda: f64,
    chi: &CutoffChi,
    side: Side,
    eps: f64,
) -> Result<Complex64> {
    check_window(a, lambda, chi)?;
    if !(eps > 0.0) {
        return Err(Error::EpsilonZero);
    }
    let n = a.values.len();
    let c = n / 2;
    let h = a.step();
    let cpole = I * side.sign() * eps;
    let g: Vec<Complex64> = (0..n)
        .map(|i| a.values[i] * chi.eval((i as f64 - c as f64) * h))
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n - 1 {
        let (t0, t1) = ((i as f64 - c as f64) * h, (i as f64 + 1.0 - c as f64) * h);
        let slope = (g[i + 1] - g[i]) / h;
        let logs = (Complex64::new(t1, 0.0) - cpole).ln() - (Complex64::new(t0, 0.0) - cpole).ln();
        acc += slope * h + (g[i] + slope * (cpole - t0)) * logs;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub rms: f64,
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Log-log slope of `|regularized(ε) − limit|` against `ε`.
pub fn plemelj_rate(
    a: &SampledDensity,
    lambda: f64,
    chi: &CutoffChi,
    eps_list: &[f64],
) -> Result<RateFit> {
    let lim = plemelj_limit(a, lambda, chi, Side::Plus)?;
    let errors: Vec<f64> = eps_list
        .iter()
        .map(|&e| plemelj_regularized(a, lambda, chi, Side::Plus, e).map(|v| (v - lim).norm()))
        .collect::<Result<_>>()?;
    let (slope, rms) = loglog_slope(eps_list, &errors);
    Ok(RateFit {
        slope,
        rms,
        eps: eps_list.to_vec(),
        errors,
    })
}

/// Symmetric invertible form on `ℝ^m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticForm {
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column `j` for eigenvalue `j`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub signature: i32,
    pub abs_det: f64,
}

impl QuadraticForm {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let m = matrix.len();
        if m == 0 || matrix.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput(
                "form must be a non-empty square matrix".into(),
            ));
        }
        for i in 0..m {
            for j in 0..i {
                if matrix[i][j] != matrix[j][i] {
                    return Err(Error::InvalidInput("form must be symmetric".into()));
                }
            }
        }
        let a = DMatrix::from_fn(m, m, |i, j| matrix[i][j]);
        let eig = SymmetricEigen::new(a);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let abs_det = eigenvalues.iter().product::<f64>().abs();
        if abs_det < 1e-10 {
            return Err(Error::SingularForm(abs_det));
        }
        let signature = eigenvalues
            .iter()
            .map(|&l| if l > 0.0 { 1 } else { -1 })
            .sum();
        let eigenvectors = (0..m)
            .map(|j| (0..m).map(|i| eig.eigenvectors[(i, j)]).collect())
            .collect();
        Ok(QuadraticForm {
            matrix,
            eigenvalues,
            eigenvectors,
            signature,
            abs_det,
        })
    }

    pub fn diag(d: &[f64]) -> Result<Self> {
        let m = d.len();
        Self::new(
            (0..m)
                .map(|i| (0..m).map(|j| if i == j { d[i] } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    fn apply(&self, x: &[f64]) -> f64 {
        let m = self.dim();
        (0..m)
            .map(|i| (0..m).map(|j| x[i] * self.matrix[i][j] * x[j]).sum::<f64>())
            .sum()
    }

    /// `⟨ξ, A⁻¹ξ⟩` through the eigendecomposition.
    fn inverse_apply(&self, xi: &[f64]) -> f64 {
        (0..self.dim())
            .map(|j| {
                let p: f64 = self.eigenvectors[j]
                    .iter()
                    .zip(xi)
                    .map(|(v, x)| v * x)
                    .sum();
                p * p / self.eigenvalues[j]
            })
            .sum()
    }

    fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |a, l| a.max(l.abs()))
    }
}

/// `F(e^{iσ⟨x,Ax⟩})(ξ) = (2σ)^{−m/2}|det A|^{−1/2} e^{iπ sgn(A)/4} e^{−i⟨ξ,A⁻¹ξ⟩/(4σ)}`
/// with `F g(ξ) = (2π)^{−m/2} ∫ g(x) e^{−i⟨x,ξ⟩} dx`.
pub fn fresnel_ft(form: &QuadraticForm, sigma: f64, xi: &[f64]) -> Result<Complex64> {
    if xi.len() != form.dim() || !(sigma > 0.0) {
        return Err(Error::InvalidInput(
            "fresnel_ft needs σ > 0 and ξ of the form's dimension".into(),
        ));
    }
    let m = form.dim() as f64;
    let modulus = (2.0 * sigma).powf(-0.5 * m) / form.abs_det.sqrt();
    let phase = PI * form.signature as f64 / 4.0 - form.inverse_apply(xi) / (4.0 * sigma);
    Ok(Complex64::from_polar(modulus, phase))
}

/// Gauss-Legendre panels over `[a, b]` no wider than `width(x)` at their far end.
fn adaptive_panels(a: f64, b: f64, width: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut x = a;
    while x < b {
        let mut w = width(x);
        w = w.min(width((x + w).min(b))).min(b - x);
        out.push((x, x + w));
        x += w;
    }
    out
}

/// `(2π)^{−1/2} ∫ exp(i a σ x² − η x² − i ξ x) dx` by Gauss-Legendre panels
/// resolving the local frequency `|2aσx − ξ|`.
fn damped_fresnel_1d(a: f64, sigma: f64, xi: f64, eta: f64) -> Complex64 {
    let l = (40.0 / eta).sqrt();
    let (gx, gw) = gauss_legendre(10);
    let freq = |x: f64| (2.0 * a * sigma * x).abs() + xi.abs() + 1.0;
    let panels = adaptive_panels(-l, l, |x| (2.0 * PI / (3.0 * freq(x.abs()))).min(0.5));
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, q) in panels {
        let (c, r) = (0.5 * (p + q), 0.5 * (q - p));
        for (t, w) in gx.iter().zip(&gw) {
            let x = c + r * t;
            acc +=
                Complex64::from_polar((-eta * x * x).exp(), a * sigma * x * x - xi * x) * (w * r);
        }
    }
    acc / (2.0 * PI).sqrt()
}

/// Damped-quadrature value of the Fresnel transform: the form is diagonalized
/// by an orthogonal change of variables, each axis integrated with Gaussian
/// damping `e^{−η|x|²}`, and the damping removed by Richardson extrapolation
/// over `η₀, η₀/2, η₀/4, η₀/8`.
pub fn fresnel_damped(form: &QuadraticForm, sigma: f64, xi: &[f64]) -> Result<Complex64> {
    if xi.len() != form.dim() || !(sigma > 0.0) {
        return Err(Error::InvalidInput(
            "fresnel_damped needs σ > 0 and ξ of the form's dimension".into(),
        ));
    }
    let m = form.dim();
    let xi_rot: Vec<f64> = (0..m)
        .map(|j| {
            form.eigenvectors[j]
                .iter()
                .zip(xi)
                .map(|(v, x)| v * x)
                .sum()
        })
        .collect();
    let eta0 = 0.04 * sigma * form.norm();
    let levels = 4;
    let mut table: Vec<Complex64> = (0..levels)
        .map(|l| {
            let eta = eta0 / 2f64.powi(l as i32);
            (0..m)
                .map(|j| damped_fresnel_1d(form.eigenvalues[j], sigma, xi_rot[j], eta))
                .product()
        })
        .collect();
    // Neville extrapolation to η = 0 with nodes η₀/2^l.
    for k in 1..levels {
        for l in (k..levels).rev() {
            let f = 2f64.powi(k as i32);
            table[l] = (f * table[l] - table[l - 1]) / (f - 1.0);
        }
    }
    Ok(table[levels - 1])
}

/// `Ξ(f) = ∫ f e^{iσ⟨x,Ax⟩} dx − f(0)(π/σ)^{m/2}|det A|^{−1/2} e^{iπ sgn(A)/4}` for `f`
/// supported in `[−R, R]^m`, `m ∈ {1, 2}`. Panels double until the integral
/// changes by less than `1e-12 + 1e-10·|∫|`.
pub fn xi_correction(
    f: &dyn Fn(&[f64]) -> Complex64,
    support: f64,
    form: &QuadraticForm,
    sigma: f64,
) -> Result<Complex64> {
    let m = form.dim();
    if !(1..=2).contains(&m) {
        return Err(Error::InvalidInput(
            "xi_correction supports m = 1 or 2".into(),
        ));
    }
    let (gx, gw) = gauss_legendre(12);
    let freq = 2.0 * sigma * form.norm() * support * (m as f64).sqrt() + 1.0;
    let mut panels = ((2.0 * support * freq / (2.0 * PI)).ceil() as usize).max(4);
    let integrate = |np: usize| -> Complex64 {
        let h = 2.0 * support / np as f64;
        let nodes: Vec<(f64, f64)> = (0..np)
            .flat_map(|p| {
                let c = -support + (p as f64 + 0.5) * h;
                gx.iter()
                    .zip(&gw)
                    .map(move |(t, w)| (c + 0.5 * h * t, 0.5 * h * w))
            })
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        if m == 1 {
            for &(x, w) in &nodes {
                let p = [x];
                acc += f(&p) * Complex64::from_polar(w, sigma * form.apply(&p));
            }
        } else {
            for &(x, wx) in &nodes {
                for &(y, wy) in &nodes {
                    let p = [x, y];
                    acc += f(&p) * Complex64::from_polar(wx * wy, sigma * form.apply(&p));
                }
            }
        }
        acc
    };
    let mut prev = integrate(panels);
    let mut last_change = f64::INFINITY;
    for _ in 0..8 {
        panels *= 2;
        let cur = integrate(panels);
        last_change = (cur - prev).norm();
        prev = cur;
        if last_change < 1e-12 + 1e-10 * cur.norm() {
            let lead = f(&vec![0.0; m]) * (PI / sigma).powf(0.5 * m as f64) / form.abs_det.sqrt()
                * Complex64::from_polar(1.0, PI * form.signature as f64 / 4.0);
            return Ok(cur - lead);
        }
    }
    Err(Error::QuadratureNotConverged(last_change))
}

/// `|Ξ(f)|` over `sigmas` and its log-log slope.
pub fn xi_decay(
    f: &dyn Fn(&[f64]) -> Complex64,
    support: f64,
    form: &QuadraticForm,
    sigmas: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let vals: Vec<f64> = sigmas
        .iter()
        .map(|&s| xi_correction(f, support, form, s).map(|v| v.norm()))
        .collect::<Result<_>>()?;
    Ok((loglog_slope(sigmas, &vals).0, vals))
}

/// Smooth bump `exp(1 − 1/(1 − |x|²))` on the unit ball, equal to 1 at 0.
pub fn bump(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Options for Fermi-curve quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveQuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_samples: usize,
    pub max_samples: usize,
}

impl Default for CurveQuadOptions {
    fn default() -> Self {
        CurveQuadOptions {
            rel_tol: 1e-6,
            abs_tol: 1e-10,
            min_samples: 64,
            max_samples: 1 << 14,
        }
    }
}

/// A closed Fermi curve component seen as `κ(θ) = c + r(θ)(cos θ, sin θ)`
/// about its vertex centroid `c`. Requires the polyline to be star-shaped
/// about `c`.
pub struct RadialCurve<'a> {
    field: &'a ExtendedZoneField,
    tau: f64,
    center: Vec2,
    poly: Vec<Vec2>,
    slack: f64,
}

/// Point of a radial curve with what the quadratures need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPoint {
    pub kappa: Vec2,
    pub grad: Vec2,
    pub hess: [[f64; 2]; 2],
    /// `r(θ)/|∂_r Λ|`, the coarea weight `dH/|∇Λ|` per unit angle.
    pub weight: f64,
}

impl<'a> RadialCurve<'a> {
    pub fn new(
        field: &'a ExtendedZoneField,
        surface: &FermiSurface,
        comp: &Component,
    ) -> Result<Self> {
        if !comp.closed || comp.vertices.len() < 3 {
            return Err(Error::InvalidInput(
                "radial parametrization needs a closed component".into(),
            ));
        }
        let n = comp.vertices.len() as f64;
        let center = comp.vertices.iter().fold([0.0, 0.0], |a, v| {
            [a[0] + v.kappa[0] / n, a[1] + v.kappa[1] / n]
        });
        Ok(RadialCurve {
            field,
            tau: surface.tau,
            center,
            poly: comp.vertices.iter().map(|v| v.kappa).collect(),
            slack: surface.grid.h,
        })
    }

    /// Polyline radius along `θ`; errors unless the ray meets it exactly once.
    fn poly_radius(&self, theta: f64) -> Result<f64> {
        let e = [theta.cos(), theta.sin()];
        let n = self.poly.len();
        let mut hits = Vec::new();
        for i in 0..n {
            let p = [
                self.poly[i][0] - self.center[0],
                self.poly[i][1] - self.center[1],
            ];
            let q = [
                self.poly[(i + 1) % n][0] - self.center[0],
                self.poly[(i + 1) % n][1] - self.center[1],
            ];
            let d = [q[0] - p[0], q[1] - p[1]];
            let den = e[0] * d[1] - e[1] * d[0];
            if den.abs() < 1e-300 {
                continue;
            }
            let t = (e[0] * p[1] - e[1] * p[0]) / -den;
            let r = (p[0] * d[1] - p[1] * d[0]) / den;
            if (0.0..1.0).contains(&t) && r > 0.0 {
                hits.push(r);
            }
        }
        match hits.len() {
            1 => Ok(hits[0]),
            _ => Err(Error::InvalidInput(format!(
                "Fermi component is not star-shaped about its centroid ({} crossings at θ = {theta:.4})",
                hits.len()
            ))),
        }
    }

    pub fn point(&self, theta: f64) -> Result<RadialPoint> {
        let e = [theta.cos(), theta.sin()];
        let at = |r: f64| [self.center[0] + r * e[0], self.center[1] + r * e[1]];
        let g = |r: f64| -> Result<f64> { Ok(self.field.lambda(at(r))? - self.tau) };
        let r0 = self.poly_radius(theta)?;
        let tol = 1e-13 * (1.0 + self.tau.abs());
        // Newton from the polyline radius, falling back to a bracketed solve.
        let mut r = r0;
        for _ in 0..8 {
            let kappa = at(r);
            let (lam, grad, hess) = self.field.jet(kappa)?;
            let f = lam - self.tau;
            let dr = grad[0] * e[0] + grad[1] * e[1];
            if f.abs() <= tol && dr > 1e-12 {
                return Ok(RadialPoint {
                    kappa,
                    grad,
                    hess,
                    weight: r / dr,
                });
            }
            let step = f / dr;
            if !(dr > 1e-12) || step.abs() > self.slack {
                break;
            }
            r -= step;
        }
        let mut delta = self.slack;
        let (mut a, mut b, mut fa, mut fb);
        loop {
            a = (r0 - delta).max(0.0);
            b = r0 + delta;
            fa = g(a)?;
            fb = g(b)?;
            if fa < 0.0 && fb >= 0.0 {
                break;
            }
            delta *= 2.0;
            if delta > 16.0 * self.slack + r0 {
                return Err(Error::InvalidInput(format!(
                    "no radial bracket at θ = {theta:.4}"
                )));
            }
        }
        let mut side = 0i8;
        for it in 0..100 {
            r = if it % 6 == 5 {
                0.5 * (a + b)
            } else {
                (a * fb - b * fa) / (fb - fa)
            };
            let f = g(r)?;
            if f.abs() <= tol || b - a < 1e-15 * (1.0 + r) {
                break;
            }
            if f < 0.0 {
                a = r;
                fa = f;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = r;
                fb = f;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        let kappa = at(r);
        let (_, grad, hess) = self.field.jet(kappa)?;
        let dr = grad[0] * e[0] + grad[1] * e[1];
        if dr.abs() < 1e-12 {
            return Err(Error::IrregularFrequency {
                tau: self.tau,
                kappa: kappa.to_vec(),
                gradnorm: dr.abs(),
            });
        }
        Ok(RadialPoint {
            kappa,
            grad,
            hess,
            weight: r / dr.abs(),
        })
    }

    /// Periodic trapezoid rule in `θ`, doubling until converged.
    pub fn integrate(
        &self,
        f: &dyn Fn(&RadialPoint) -> Result<Complex64>,
        opts: CurveQuadOptions,
    ) -> Result<Complex64> {
        let mut n = opts.min_samples.max(8);
        let mut sum = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let p = self.point(2.0 * PI * i as f64 / n as f64)?;
            sum += f(&p)? * p.weight;
        }
        let mut value = sum * (2.0 * PI / n as f64);
        let mut change = f64::INFINITY;
        while n < opts.max_samples {
            for i in 0..n {
                let p = self.point(2.0 * PI * (i as f64 + 0.5) / n as f64)?;
                sum += f(&p)? * p.weight;
            }
            n *= 2;
            let next = sum * (2.0 * PI / n as f64);
            change = (next - value).norm();
            value = next;
            if change <= opts.abs_tol || change <= opts.rel_tol * value.norm() {
                return Ok(value);
            }
        }
        Err(Error::QuadratureNotConverged(change))
    }
}

/// A quadrature node on a Fermi curve: `∫_{F_τ} f dH¹/(|B||∇Λ|) ≈ Σ weight·f(κ)`.
#[derive(Debug, Clone)]
pub struct CurveNode {
    pub kappa: Vec2,
    pub weight: f64,
    pub sheet: SheetPoint,
}

/// Fixed-resolution periodic trapezoid nodes on every component of `F_τ`.
/// Even-indexed nodes form the rule at half resolution, used as the error
/// estimate.
#[derive(Debug, Clone)]
pub struct CurveQuadrature {
    pub tau: f64,
    pub nodes: Vec<CurveNode>,
}

impl CurveQuadrature {
    pub fn build(surface: &FermiSurface, field: &ExtendedZoneField, n: usize) -> Result<Self> {
        if let Some(w) = surface.irregular.first() {
            return Err(Error::IrregularFrequency {
                tau: surface.tau,
                kappa: w.kappa.to_vec(),
                gradnorm: w.gradnorm,
            });
        }
        let n = n.max(8) & !1;
        let vol = (2.0 * PI).powi(2);
        let mut nodes = Vec::with_capacity(n * surface.components.len());
        for comp in &surface.components {
            let curve = RadialCurve::new(field, surface, comp)?;
            let pts: Vec<Result<CurveNode>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let p = curve.point(2.0 * PI * i as f64 / n as f64)?;
                    Ok(CurveNode {
                        kappa: p.kappa,
                        weight: p.weight * 2.0 * PI / (n as f64 * vol),
                        sheet: field.sheet_point(p.kappa)?,
                    })
                })
                .collect();
            for p in pts {
                nodes.push(p?);
            }
        }
        Ok(CurveQuadrature {
            tau: surface.tau,
            nodes,
        })
    }

    /// `(Σ w f, |full − half-resolution|)`.
    pub fn integrate(&self, f: impl Fn(&CurveNode) -> Complex64) -> (Complex64, f64) {
        let mut full = Complex64::new(0.0, 0.0);
        let mut half = Complex64::new(0.0, 0.0);
        for (i, nd) in self.nodes.iter().enumerate() {
            let v = f(nd) * nd.weight;
            full += v;
            if i % 2 == 0 {
                half += v * 2.0;
            }
        }
        (full, (full - half).norm())
    }

    /// `a_{x,y}(τ)` with its error estimate.
    pub fn density(&self, x: Vec2, y: Vec2) -> (Complex64, f64) {
        self.integrate(|nd| nd.sheet.eval(x) * nd.sheet.eval(y).conj())
    }
}

/// `a_{x,y}(τ) = |B|^{-1} ∫_{F_τ} Ψ(x,k) conj Ψ(y,k) / |∇Λ(k)| dH¹(k)`.
pub fn fermi_oscillatory(
    surface: &FermiSurface,
    field: &ExtendedZoneField,
    x: Vec2,
    y: Vec2,
) -> Result<Complex64> {
    fermi_oscillatory_with(surface, field, x, y, CurveQuadOptions::default())
}

pub fn fermi_oscillatory_with(
    surface: &FermiSurface,
    field: &ExtendedZoneField,
    x: Vec2,
    y: Vec2,
    opts: CurveQuadOptions,
) -> Result<Complex64> {
    if let Some(w) = surface.irregular.first() {
        return Err(Error::IrregularFrequency {
            tau: surface.tau,
            kappa: w.kappa.to_vec(),
            gradnorm: w.gradnorm,
        });
    }
    let vol = (2.0 * PI).powi(2);
    let mut acc = Complex64::new(0.0, 0.0);
    for comp in &surface.components {
        let curve = RadialCurve::new(field, surface, comp)?;
        acc += curve.integrate(&|p: &RadialPoint| field.psi_pair(x, y, p.kappa), opts)?;
    }
    Ok(acc / vol)
}

/// A resonant point `k ∈ F_λ` with `ν(k) = ±(x−y)/|x−y|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonantPoint {
    pub kappa: Vec2,
    pub sign: i8,
    pub curvature: f64,
    pub gradnorm: f64,
}

/// Resonant points of every component, located on the polyline normals and
/// refined by angular bisection on the radial parametrization.
pub fn resonant_points(
    surface: &FermiSurface,
    field: &ExtendedZoneField,
    dir: Vec2,
) -> Result<Vec<ResonantPoint>> {
    let nd = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let v = [dir[0] / nd, dir[1] / nd];
    let mut out = Vec::new();
    for comp in &surface.components {
        let curve = RadialCurve::new(field, surface, comp)?;
        let theta_of = |k: Vec2| (k[1] - curve.center[1]).atan2(k[0] - curve.center[0]);
        let cross = |g: Vec2, s: f64| (g[0] * v[1] - g[1] * v[0]) * s;
        let nv = comp.vertices.len();
        for sign in [1i8, -1] {
            let s = sign as f64;
            let mut found = false;
            for i in 0..nv {
                let (a, b) = (&comp.vertices[i], &comp.vertices[(i + 1) % nv]);
                let (ca, cb) = (cross(a.normal, s), cross(b.normal, s));
                let facing = (a.normal[0] * v[0] + a.normal[1] * v[1]) * s > 0.0;
                if !(facing && (ca <= 0.0) != (cb <= 0.0)) {
                    continue;
                }
                let (mut t0, mut t1) = (theta_of(a.kappa), theta_of(b.kappa));
                if t1 - t0 > PI {
                    t1 -= 2.0 * PI;
                } else if t0 - t1 > PI {
                    t1 += 2.0 * PI;
                }
                let mut c0 = ca;
                let mut p = curve.point(0.5 * (t0 + t1))?;
                for _ in 0..60 {
                    let tm = 0.5 * (t0 + t1);
                    p = curve.point(tm)?;
                    let cm = cross(p.grad, s);
                    if (cm <= 0.0) == (c0 <= 0.0) {
                        t0 = tm;
                        c0 = cm;
                    } else {
                        t1 = tm;
                    }
                    if (t1 - t0).abs() < 1e-13 {
                        break;
                    }
                }
                let gn = (p.grad[0] * p.grad[0] + p.grad[1] * p.grad[1]).sqrt();
                out.push(ResonantPoint {
                    kappa: p.kappa,
                    sign,
                    curvature: level_curvature(p.grad, p.hess),
                    gradnorm: gn,
                });
                found = true;
            }
            if !found {
                return Err(Error::NoResonantPoint {
                    direction: v.to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// Stationary-phase leading term of `a_{x,y}(λ)` for `σ = |x−y| ≥ 1`:
/// `(2π/σ)^{1/2} Σ_± e^{∓iπ/4} Ψ(x,k±) conj Ψ(y,k±) / (|B||∇Λ(k±)|) 𝒦(k±)^{−1/2}`.
/// The sign convention `sgn(A) = d − 1 = 1` with `∓` reproduces the
/// `J₀(√λ σ)/(4π)` asymptotics of the free case.
pub fn farfield_leading(
    surface: &FermiSurface,
    field: &ExtendedZoneField,
    x: Vec2,
    y: Vec2,
) -> Result<Complex64> {
    let dir = [x[0] - y[0], x[1] - y[1]];
    let sigma = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    if sigma < 1.0 {
        return Err(Error::InvalidInput(format!(
            "farfield needs |x − y| ≥ 1, got {sigma}"
        )));
    }
    let vol = (2.0 * PI).powi(2);
    let mut acc = Complex64::new(0.0, 0.0);
    for rp in resonant_points(surface, field, dir)? {
        if rp.curvature <= 1e-10 {
            return Err(Error::CurvatureVanishes {
                kappa: rp.kappa.to_vec(),
            });
        }
        let h = field.psi_pair(x, y, rp.kappa)? / (vol * rp.gradnorm);
        let phase = Complex64::from_polar(1.0, -(rp.sign as f64) * PI / 4.0);
        acc += h * phase / rp.curvature.sqrt();
    }
    Ok(acc * (2.0 * PI / sigma).sqrt())
}

/// `D_N(z) = Σ_{|m| ≤ N} e^{imz} = sin((N+½)z)/sin(z/2)`, `D_{−1} = 0`.
pub fn dirichlet_kernel(n: i64, z: f64) -> f64 {
    if n < 0 {
        return 0.0;
    }
    let s = (0.5 * z).sin();
    if s.abs() < 1e-8 {
        return 1.0 + 2.0 * (1..=n).map(|m| (m as f64 * z).cos()).sum::<f64>();
    }
    ((n as f64 + 0.5) * z).sin() / s
}

/// `Σ_{lo < ‖m‖∞ ≤ hi} e^{i⟨m,ξ⟩} = Π_p D_hi(ξ_p) − Π_p D_lo(ξ_p)`.
pub fn dirichlet_range(xi: &[f64], lo: i64, hi: i64) -> f64 {
    let p = |n: i64| xi.iter().map(|&z| dirichlet_kernel(n, z)).product::<f64>();
    p(hi) - p(lo)
}

/// `g_j(ξ) = Π_p D_{2^j}(ξ_p) − Π_p D_{2^{j−1}}(ξ_p)`, the sum over `2^{j−1} < ‖m‖∞ ≤ 2^j`.
pub fn dirichlet_shell(xi: &[f64], j: u32) -> f64 {
    assert!(j >= 1, "shell index starts at 1");
    dirichlet_range(xi, 1 << (j - 1), 1 << j)
}

/// Lattice shell `R_j`: `R_0 = {0}`, `R_j = {m : 2^{j−1} ≤ ‖m‖∞ < 2^j}`.
pub fn shell_bounds(j: u32) -> (i64, i64) {
    if j == 0 {
        (-1, 0)
    } else {
        ((1i64 << (j - 1)) - 1, (1i64 << j) - 1)
    }
}

pub fn shell_index(m: &[i64]) -> u32 {
    let n = m.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
    if n == 0 {
        0
    } else {
        64 - n.leading_zeros()
    }
}

/// `Σ_{m ∈ R_j} e^{i⟨m,ξ⟩}` for the partitioning shells of [`shell_bounds`].
pub fn shell_kernel(xi: &[f64], j: u32) -> f64 {
    let (lo, hi) = shell_bounds(j);
    dirichlet_range(xi, lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShellGrowth {
    pub js: Vec<u32>,
    pub integrals: Vec<f64>,
    /// Least-squares slope of `log₂ ∫_K |g_j|` against `j`.
    pub exponent: f64,
    pub rms: f64,
    /// `exponent ≤ 1 + δ + 0.1`.
    pub within: bool,
}

/// `∫_K |g_j(ξ', s)| dξ'` over a box `K ⊂ ℝ^{d−1}` (`d − 1 ≤ 2`) for each `j`.
pub fn shell_integral_bound(
    js: &[u32],
    k: &[(f64, f64)],
    s: f64,
    delta: f64,
) -> Result<ShellGrowth> {
    let integrals: Vec<f64> = js
        .iter()
        .map(|&j| shell_integral(j, k, s))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
    let ys: Vec<f64> = integrals.iter().map(|v| v.log2()).collect();
    let (exponent, _, rms) = crate::quad::linear_fit(&xs, &ys);
    Ok(ShellGrowth {
        js: js.to_vec(),
        integrals,
        exponent,
        rms,
        within: exponent <= 1.0 + delta + 0.1,
    })
}

pub fn shell_integral(j: u32, k: &[(f64, f64)], s: f64) -> Result<f64> {
    shell_difference_integral(j, k, s, None)
}

/// `∫_K |g_j(ξ', s) − g_j(ξ', t)|` (or `∫_K |g_j(ξ', s)|` without `t`), Gauss-Legendre
/// panels resolving the period `2π/2^j`.
pub fn shell_difference_integral(j: u32, k: &[(f64, f64)], s: f64, t: Option<f64>) -> Result<f64> {
    let m = k.len();
    if !(1..=2).contains(&m) {
        return Err(Error::InvalidInput(
            "shell integrals support d − 1 ∈ {1, 2}".into(),
        ));
    }
    let (gx, gw) = gauss_legendre(8);
    let per = 2.0 * PI / (1u64 << j) as f64;
    let nodes: Vec<Vec<(f64, f64)>> = k
        .iter()
        .map(|&(a, b)| {
            let np = (((b - a) / per) * 16.0).ceil().max(8.0) as usize;
            let h = (b - a) / np as f64;
            (0..np)
                .flat_map(|p| {
                    let c = a + (p as f64 + 0.5) * h;
                    gx.iter()
                        .zip(&gw)
                        .map(move |(x, w)| (c + 0.5 * h * x, 0.5 * h * w))
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    let g = |xi: &[f64], last: f64| {
        let mut p = xi.to_vec();
        p.push(last);
        dirichlet_shell(&p, j)
    };
    let val = |xi: &[f64]| match t {
        None => g(xi, s).abs(),
        Some(t) => (g(xi, s) - g(xi, t)).abs(),
    };
    let mut acc = 0.0;
    if m == 1 {
        for &(x, w) in &nodes[0] {
            acc += w * val(&[x]);
        }
    } else {
        for &(x, wx) in &nodes[0] {
            for &(y, wy) in &nodes[1] {
                acc += wx * wy * val(&[x, y]);
            }
        }
    }
    Ok(acc)
}

/// Fitted exponent of `∫_K |g_j(·, s) − g_j(·, s+h)|` against `h`.
pub fn shell_holder_exponent(
    j: u32,
    k: &[(f64, f64)],
    s: f64,
    hs: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let vals: Vec<f64> = hs
        .iter()
        .map(|&h| shell_difference_integral(j, k, s, Some(s + h)))
        .collect::<Result<_>>()?;
    Ok((loglog_slope(hs, &vals).0, vals))
}

// ---- Bessel and Hankel functions ----

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn bessel_series(nu: u32, z: Complex64) -> (Complex64, Complex64) {
    let q = z * z * 0.25;
    let mut j = Complex64::new(0.0, 0.0);
    let mut term = match nu {
        0 => Complex64::new(1.0, 0.0),
        _ => z * 0.5,
    };
    // Σ_k (−q)^k / (k!(k+ν)!) · (z/2)^ν, and the harmonic-number sums for Y.
    let mut ysum = Complex64::new(0.0, 0.0);
    let mut hk = 0.0; // H_k
    let mut hk1 = if nu == 0 { 0.0 } else { 1.0 }; // H_{k+ν}
    for k in 0..200 {
        if k > 0 {
            term *= -q / (k as f64 * (k + nu as usize) as f64);
            hk += 1.0 / k as f64;
            hk1 += 1.0 / (k + nu as usize) as f64;
        }
        j += term;
        ysum += term * (hk + hk1);
        if term.norm() < 1e-17 * j.norm().max(1e-300) && k > 2 {
            break;
        }
    }
    let lg = (z * 0.5).ln() + EULER_GAMMA;
    let y = match nu {
        0 => (2.0 / PI) * (lg * j - ysum * 0.5),
        _ => (2.0 / PI) * lg * j - 2.0 / (PI * z) - ysum / PI,
    };
    (j, y)
}

/// `H⁽¹⁾_ν(z)` from the Laplace-type integral
/// `(2/(πz))^{1/2} e^{i(z − νπ/2 − π/4)}/Γ(ν+½) ∫₀^∞ e^{−u} u^{ν−½}(1 + iu/(2z))^{ν−½} du`,
/// valid for `Im z ≥ 0, z ≠ 0`; `u = s²` removes the endpoint singularity.
pub fn hankel_h1_integral(nu: u32, z: Complex64) -> Complex64 {
    let (gx, gw) = gauss_legendre(20);
    let smax = 7.0;
    let scale = z.norm().sqrt().min(1.0);
    let panels = ((smax / (0.25 * scale)).ceil() as usize).max(28);
    let h = smax / panels as f64;
    let expo = nu as f64 - 0.5;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let c = (p as f64 + 0.5) * h;
        for (t, w) in gx.iter().zip(&gw) {
            let s = c + 0.5 * h * t;
            let u = s * s;
            let f = (Complex64::new(1.0, 0.0) + I * u / (z * 2.0)).powf(expo);
            acc += f * (2.0 * (-u).exp() * s.powi(2 * nu as i32) * 0.5 * h * w);
        }
    }
    let gamma = if nu == 0 { PI.sqrt() } else { 0.5 * PI.sqrt() };
    (2.0 / (PI * z)).sqrt() * (I * (z - nu as f64 * PI / 2.0 - PI / 4.0)).exp() * acc / gamma
}

/// `J_ν` and `Y_ν` (`ν ∈ {0, 1}`) by ascending series, for moderate `|z|`.
pub fn bessel_jy(nu: u32, z: Complex64) -> Result<(Complex64, Complex64)> {
    if nu > 1 {
        return Err(Error::InvalidInput(format!(
            "Bessel order {nu} not supported (only 0 and 1)"
        )));
    }
    if z.norm() == 0.0 {
        return Err(Error::OriginSingularity);
    }
    Ok(bessel_series(nu, z))
}

/// Hankel function of the first kind, principal branch, `Im z ≥ 0`. Series
/// for `|z| < 8`, the Laplace integral above for larger `|z|` (it is the
/// resummed Hankel asymptotic expansion and stays accurate at the switch).
pub fn hankel_h1(nu: f64, z: Complex64) -> Result<Complex64> {
    if z.norm() == 0.0 {
        return Err(Error::OriginSingularity);
    }
    if z.im < 0.0 {
        return Err(Error::InvalidInput("hankel_h1 requires Im z ≥ 0".into()));
    }
    let n = if nu == 0.0 {
        0
    } else if nu == 1.0 {
        1
    } else {
        return Err(Error::InvalidInput(format!(
            "Hankel order {nu} not supported (only 0 and 1)"
        )));
    };
    if z.norm() < 8.0 {
        let (j, y) = bessel_series(n, z);
        Ok(j + I * y)
    } else {
        Ok(hankel_h1_integral(n, z))
    }
}

/// Truncated Hankel asymptotic expansion `√(2/(πz)) e^{i(z−νπ/2−π/4)} Σ_{k<K} i^k a_k(ν)/z^k`.
pub fn hankel_asymptotic(nu: u32, z: Complex64, terms: usize) -> Complex64 {
    let mu = 4.0 * (nu * nu) as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut a = Complex64::new(1.0, 0.0);
    for k in 0..terms {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= I * (mu - odd * odd) / (k as f64 * 8.0 * z);
        }
        sum += a;
    }
    (2.0 / (PI * z)).sqrt() * (I * (z - nu as f64 * PI / 2.0 - PI / 4.0)).exp() * sum
}

/// Free outgoing Green's function `(i/4) H₀⁽¹⁾(√(λ + iε) r)` in `d = 2`.
pub fn free_green_2d(lambda: f64, eps: f64, r: f64) -> Result<Complex64> {
    let k = Complex64::new(lambda, eps).sqrt();
    Ok(I * 0.25 * hankel_h1(0.0, k * r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fermi::{extract, ExtractOptions, GridSpec};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn cutoff_profile() {
        let chi = CutoffChi::new(0.4).unwrap();
        assert_eq!(chi.eval(0.1), 1.0);
        assert_eq!(chi.eval(0.4), 0.0);
        assert_eq!(chi.eval(-0.3), chi.eval(0.3));
        let mut prev = 1.0;
        for i in 0..100 {
            let v = chi.eval(0.2 + 0.2 * i as f64 / 100.0);
            assert!((0.0..=1.0).contains(&v) && v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn plemelj_constant_density() {
        let (lam, rho) = (3.0, 0.5);
        let chi = CutoffChi::flat(rho).unwrap();
        let a = SampledDensity::from_fn(lam, rho, 129, |_| c(1.0)).unwrap();
        let lim = plemelj_limit(&a, lam, &chi, Side::Plus).unwrap();
        assert!((lim - I * PI).norm() < 1e-14);
        for eps in [0.1, 0.01] {
            let r = plemelj_regularized(&a, lam, &chi, Side::Plus, eps).unwrap();
            assert!((r - I * 2.0 * (rho / eps).atan()).norm() < 1e-12);
        }
        let m = plemelj_limit(&a, lam, &chi, Side::Minus).unwrap();
        assert!((m + I * PI).norm() < 1e-14);
    }

    #[test]
    fn plemelj_linear_and_exponential() {
        let (lam, rho) = (1.0, 0.6);
        let chi = CutoffChi::new(rho).unwrap();
        let a = SampledDensity::from_fn(lam, rho, 257, |t| c(t - lam)).unwrap();
        let lim = plemelj_limit(&a, lam, &chi, Side::Plus).unwrap();
        let want: f64 = crate::quad::Composite::new(-rho, rho, 64, 10).integrate(|t| chi.eval(t));
        assert!((lim.re - want).abs() < 1e-4 && lim.im.abs() < 1e-15);
        // p.v.∫_{−ρ}^{ρ} e^t/t dt = 2 Shi(ρ).
        let chi = CutoffChi::flat(rho).unwrap();
        let a = SampledDensity::from_fn(lam, rho, 4097, |t| c((t - lam).exp())).unwrap();
        let lim = plemelj_limit(&a, lam, &chi, Side::Plus).unwrap();
        let mut shi = 0.0;
        let mut term = rho;
        for k in 0..20 {
            shi += term / (2 * k + 1) as f64;
            term *= rho * rho / ((2 * k + 2) * (2 * k + 3)) as f64;
        }
        assert!(
            (lim.re - 2.0 * shi).abs() < 1e-6,
            "{} {}",
            lim.re,
            2.0 * shi
        );
        assert!((lim.im - PI).abs() < 1e-14);
        assert!(matches!(
            plemelj_limit(&a, lam + 0.1, &chi, Side::Plus),
            Err(Error::WindowMismatch(_))
        ));
    }

    #[test]
    fn plemelj_rates_for_holder_densities() {
        let (lam, rho) = (0.0, 1.0);
        let chi = CutoffChi::new(rho).unwrap();
        let eps: Vec<f64> = (0..6).map(|i| 0.1 * 2f64.powi(-i)).collect();
        for beta in [0.3, 0.5, 1.0] {
            let a = SampledDensity::from_fn(lam, rho, (1 << 16) + 1, |t| {
                c(1.0 + t.signum() * t.abs().powf(beta))
            })
            .unwrap();
            let fit = plemelj_rate(&a, lam, &chi, &eps).unwrap();
            assert!(fit.slope >= beta - 0.1, "β = {beta}: slope {}", fit.slope);
            let (b, _) = a.holder();
            assert!((b - beta).abs() < 0.05, "{b}");
        }
    }

    #[test]
    fn fresnel_examples() {
        let a = QuadraticForm::diag(&[1.0]).unwrap();
        let v = fresnel_ft(&a, 1.0, &[0.0]).unwrap();
        assert!((v - Complex64::new(0.5, 0.5)).norm() < 1e-15);
        let m = QuadraticForm::diag(&[1.0, -1.0]).unwrap();
        assert_eq!(m.signature, 0);
        let v0 = fresnel_ft(&m, 2.0, &[0.0, 0.0]).unwrap();
        assert!((v0.arg()).abs() < 1e-15);
        let xi = [0.3, -0.7];
        let v1 = fresnel_ft(&m, 2.0, &xi).unwrap();
        let ph = Complex64::from_polar(1.0, -(0.09 - 0.49) / 8.0);
        assert!((v1 - v0 * ph).norm() < 1e-15);
        assert!(matches!(
            QuadraticForm::diag(&[1.0, 0.0]),
            Err(Error::SingularForm(_))
        ));
    }

    #[test]
    fn fresnel_closed_form_matches_damped_quadrature() {
        let forms = [
            QuadraticForm::diag(&[1.0]).unwrap(),
            QuadraticForm::diag(&[-1.0]).unwrap(),
            QuadraticForm::new(vec![vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap(),
        ];
        for f in &forms {
            for sigma in [1.0, 7.0] {
                let xi: Vec<f64> = (0..f.dim()).map(|i| 0.4 + 0.3 * i as f64).collect();
                let a = fresnel_ft(f, sigma, &xi).unwrap();
                let b = fresnel_damped(f, sigma, &xi).unwrap();
                assert!((a - b).norm() < 1e-5 * a.norm(), "{a} {b}");
            }
        }
    }

    #[test]
    fn xi_correction_properties() {
        let a = QuadraticForm::diag(&[1.0]).unwrap();
        let f = |x: &[f64]| c(bump(x));
        let g = |x: &[f64]| c(x[0] * x[0] * bump(x));
        let sum = |x: &[f64]| f(x) + g(x);
        let (xf, xg, xs) = (
            xi_correction(&f, 1.0, &a, 20.0).unwrap(),
            xi_correction(&g, 1.0, &a, 20.0).unwrap(),
            xi_correction(&sum, 1.0, &a, 20.0).unwrap(),
        );
        assert!((xf + xg - xs).norm() < 1e-10);
        let lead = (PI / 100.0).sqrt();
        assert!(xi_correction(&f, 1.0, &a, 100.0).unwrap().norm() < 0.02 * lead);
    }

    #[test]
    fn free_fermi_integral_and_farfield() {
        let field = ExtendedZoneField::free(2);
        let lam = 5.0;
        let s = extract(
            &field,
            lam,
            GridSpec::aligned(3.0, 32),
            ExtractOptions::default(),
        )
        .unwrap();
        let a = fermi_oscillatory(&s, &field, [0.2, 0.1], [0.2, 0.1]).unwrap();
        assert!((a - c(1.0 / (4.0 * PI))).norm() < 1e-10);
        let (x, y) = ([3.3, -1.0], [0.1, 0.4]);
        let axy = fermi_oscillatory(&s, &field, x, y).unwrap();
        let ayx = fermi_oscillatory(&s, &field, y, x).unwrap();
        assert!((axy - ayx.conj()).norm() < 1e-12);
        let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let (j0, _) = bessel_jy(0, c(lam.sqrt() * r)).unwrap();
        assert!(
            (axy - j0 / (4.0 * PI)).norm() < 1e-8,
            "{axy} {}",
            j0 / (4.0 * PI)
        );
        // Farfield at σ = 40: resonant points ±√λ v and the J₀ asymptotics.
        let (x, y) = ([30.0, 24.0], [-2.0, 0.0]);
        let rp = resonant_points(&s, &field, [32.0, 24.0]).unwrap();
        assert_eq!(rp.len(), 2);
        for p in &rp {
            let want = [
                p.sign as f64 * lam.sqrt() * 0.8,
                p.sign as f64 * lam.sqrt() * 0.6,
            ];
            assert!((p.kappa[0] - want[0]).abs() < 1e-9 && (p.kappa[1] - want[1]).abs() < 1e-9);
        }
        let lead = farfield_leading(&s, &field, x, y).unwrap();
        let z = lam.sqrt() * 40.0;
        let asym = (2.0 / (PI * z)).sqrt() * (z - PI / 4.0).cos() / (4.0 * PI);
        assert!((lead.re - asym).abs() < 1e-9 && lead.im.abs() < 1e-9);
    }

    #[test]
    fn dirichlet_shells() {
        assert!((dirichlet_shell(&[0.0], 1) - 2.0).abs() < 1e-12);
        assert!((dirichlet_shell(&[0.0, 0.0], 1) - 16.0).abs() < 1e-12);
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        };
        for j in 1..=6u32 {
            for _ in 0..10 {
                let xi = [next(), next()];
                let (lo, hi) = (1i64 << (j - 1), 1i64 << j);
                let mut direct = 0.0;
                for a in -hi..=hi {
                    for b in -hi..=hi {
                        let n = a.abs().max(b.abs());
                        if n > lo {
                            direct += (a as f64 * xi[0] + b as f64 * xi[1]).cos();
                        }
                    }
                }
                assert!((dirichlet_shell(&xi, j) - direct).abs() < 1e-9);
                let shifted = [xi[0] + 2.0 * PI, xi[1]];
                assert!((dirichlet_shell(&shifted, j) - dirichlet_shell(&xi, j)).abs() < 1e-8);
            }
        }
        assert_eq!(shell_index(&[0, 0]), 0);
        assert_eq!(shell_index(&[1, 0]), 1);
        assert_eq!(shell_index(&[-3, 2]), 2);
        assert_eq!(shell_index(&[4, 0]), 3);
        assert!((shell_kernel(&[0.0, 0.0], 2) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn hankel_values() {
        let h = hankel_h1(0.0, c(1.0)).unwrap();
        assert!(
            (h - Complex64::new(0.765_197_686_557_966_6, 0.088_256_964_215_676_96)).norm() < 1e-13
        );
        for z in [0.5, 1.0, 3.0, 6.0, 7.9, 9.0] {
            for nu in [0u32, 1] {
                let (j, y) = bessel_series(nu, c(z));
                let integ = hankel_h1_integral(nu, c(z));
                assert!(
                    (j + I * y - integ).norm() < 1e-10 * integ.norm(),
                    "ν={nu} z={z}"
                );
            }
        }
        let zc = Complex64::new(4.0, 0.3);
        let (j, y) = bessel_series(0, zc);
        assert!((j + I * y - hankel_h1_integral(0, zc)).norm() < 1e-10);
        for z in [40.0, 100.0] {
            let h = hankel_h1(0.0, c(z)).unwrap();
            assert!((h - hankel_asymptotic(0, c(z), 12)).norm() < 1e-12 * h.norm());
        }
        let (j, y) = bessel_series(0, c(9.0));
        let h9 = hankel_h1(0.0, c(9.0)).unwrap();
        assert!((j.re * j.re + y.re * y.re - h9.norm_sqr()).abs() < 1e-9);
        assert!(matches!(
            hankel_h1(0.0, c(0.0)),
            Err(Error::OriginSingularity)
        ));
    }
}
