//! Resolvent kernels `K^ε(x,y) = ⨍_B Σ_s ψ_s(x,k) conj ψ_s(y,k)/(λ_s(k) − λ − iε) dk`,
//! the nonresonant/resonant split by the cutoff `χ(λ_s(k) − λ)`, the limits
//! `K_2^±` through Fermi-curve densities, and dyadic-shell restrictions.
//!
//! Two routes are used. k-sums run over a midpoint grid of `B` times labels
//! (for free and separable fields the sum factorizes per axis). The resonant
//! limit goes through the coarea formula: `a_{x,y}(τ)` on a τ-grid, then the
//! Plemelj limit.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fermi::{curvature_check, extract, ExtractOptions, GridSpec};
use crate::hill1d::BlochFunction1D;
use crate::oscillatory::{
    plemelj_limit, plemelj_regularized, shell_index, shell_kernel, CurveQuadrature, CutoffChi,
    RateFit, SampledDensity, Side,
};
use crate::planewave::{assemble, eigensolve, ExtendedZoneField, Spectrum, TruncationBox, Vec2};
use crate::quad::loglog_slope;
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub lambda: f64,
    /// Cutoff radius `ρ` of `χ`.
    pub rho: f64,
    pub eps: f64,
    /// Extended-zone truncation `‖s‖∞ ≤ S` for k-sums (plane-wave box size).
    pub s: usize,
    /// k-points per axis of the midpoint grid on `B` (even).
    pub nk: usize,
    /// τ-grid points over `[λ − ρ, λ + ρ]` (odd, ≥ 65).
    pub tau_points: usize,
    /// Trapezoid nodes per Fermi-curve component.
    pub theta_points: usize,
    /// Marching-squares nodes per `2π` for Fermi-curve extraction.
    pub grid_cells: usize,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        ResolventConfig {
            lambda: 5.0,
            rho: 0.5,
            eps: 0.05,
            s: 12,
            nk: 256,
            tau_points: 129,
            theta_points: 1024,
            grid_cells: 64,
        }
    }
}

impl ResolventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidInput("rho must be positive".into()));
        }
        if self.nk < 2 || self.nk % 2 == 1 {
            return Err(Error::InvalidInput("nk must be even and ≥ 2".into()));
        }
        if self.tau_points < 65 || self.tau_points % 2 == 0 {
            return Err(Error::InvalidInput(
                "tau_points must be odd and ≥ 65".into(),
            ));
        }
        if self.theta_points < 8 {
            return Err(Error::InvalidInput("theta_points must be ≥ 8".into()));
        }
        Ok(())
    }

    /// k-grid density resolving the `ε`-wide resonance: `N ≈ 14·2√λ/ε`, even.
    pub fn nk_for_eps(lambda: f64, eps: f64) -> usize {
        let n = (28.0 * lambda.abs().sqrt().max(1.0) / eps.abs()).ceil() as usize;
        n + n % 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub x: Vec2,
    pub y: Vec2,
    pub value: Complex64,
    pub k1: Complex64,
    pub k2: Complex64,
    /// Truncation tail plus quadrature estimate.
    pub error: f64,
    pub shell: Option<u32>,
}

pub fn kernel_csv(values: &[KernelValue]) -> String {
    let mut s = String::from("x1,x2,y1,y2,re,im,re_K1,im_K1,re_K2,im_K2,err\n");
    for v in values {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3e}",
            v.x[0],
            v.x[1],
            v.y[0],
            v.y[1],
            v.value.re,
            v.value.im,
            v.k1.re,
            v.k1.im,
            v.k2.re,
            v.k2.im,
            v.error
        );
    }
    s
}

/// Weight applied to `1/(E − λ − iε)` in a k-sum.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    Full,
    Nonresonant,
    Resonant,
}

/// One axis of a factorized spectral sum: nodes `κ_j = −extent + (j + ½)h`.
#[derive(Debug, Clone)]
struct AxisTable {
    kappa: Vec<f64>,
    energy: Vec<f64>,
    funcs: Option<Vec<BlochFunction1D>>,
    /// Indices sorted by energy.
    order: Vec<usize>,
}

impl AxisTable {
    fn build(field: &ExtendedZoneField, c: usize, extent: f64, nk: usize) -> Result<Self> {
        let h = 2.0 * PI / nk as f64;
        let count = (2.0 * extent / h).round() as usize;
        let kappa: Vec<f64> = (0..count).map(|j| -extent + (j as f64 + 0.5) * h).collect();
        let (energy, funcs) = match field {
            ExtendedZoneField::Free { d, mu } => {
                let share = mu / *d as f64;
                (
                    kappa.iter().map(|k| k * k + share).collect::<Vec<f64>>(),
                    None,
                )
            }
            ExtendedZoneField::Separable(f) => {
                let fs: Vec<BlochFunction1D> = kappa
                    .par_iter()
                    .map(|&k| f.part_function(c, k))
                    .collect::<Result<_>>()?;
                (fs.iter().map(|b| b.energy).collect(), Some(fs))
            }
            ExtendedZoneField::PlaneWave(_) => unreachable!("plane-wave sums use eigen data"),
        };
        let mut order: Vec<usize> = (0..kappa.len()).collect();
        order.sort_by(|&a, &b| energy[a].total_cmp(&energy[b]));
        Ok(AxisTable {
            kappa,
            energy,
            funcs,
            order,
        })
    }

    /// `φ_j(x) conj φ_j(y)` for every node.
    fn products(&self, x: f64, y: f64) -> Vec<Complex64> {
        match &self.funcs {
            None => self
                .kappa
                .iter()
                .map(|k| Complex64::from_polar(1.0, k * (x - y)))
                .collect(),
            Some(fs) => fs.iter().map(|f| f.eval(x) * f.eval(y).conj()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum KGrid {
    Axes {
        axes: Vec<AxisTable>,
        nk: usize,
        tail: Option<Vec<AxisTable>>,
        inner: f64,
    },
    Modes {
        data: Vec<(Vec2, Arc<Spectrum>)>,
        bx: TruncationBox,
        nk: usize,
        tail: Vec<AxisTable>,
        inner: f64,
    },
}

fn weight(part: Part, chi: &CutoffChi, de: f64, eps: f64) -> Complex64 {
    let c = match part {
        Part::Full => 1.0,
        Part::Nonresonant => 1.0 - chi.eval(de),
        Part::Resonant => chi.eval(de),
    };
    if c == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let inv = c / (de * de + eps * eps);
    Complex64::new(de * inv, eps * inv)
}

/// `Σ_{a,b} A₁[a] A₂[b] w(E₁[a] + E₂[b])`, optionally skipping pairs with both
/// `|κ| < inner`.
fn axes_sum(
    axes: &[AxisTable],
    x: Vec2,
    y: Vec2,
    lambda: f64,
    eps: f64,
    chi: &CutoffChi,
    part: Part,
    skip_inner: Option<f64>,
) -> Complex64 {
    let prods: Vec<Vec<Complex64>> = axes
        .iter()
        .enumerate()
        .map(|(c, a)| a.products(x[c], y[c]))
        .collect();
    if axes.len() == 1 {
        let a = &axes[0];
        return (0..a.kappa.len())
            .filter(|&i| skip_inner.is_none_or(|r| a.kappa[i].abs() >= r))
            .map(|i| prods[0][i] * weight(part, chi, a.energy[i] - lambda, eps))
            .sum();
    }
    let (a1, a2) = (&axes[0], &axes[1]);
    (0..a1.kappa.len())
        .into_par_iter()
        .map(|i| {
            let e1 = a1.energy[i] - lambda;
            let inner1 = skip_inner.is_some_and(|r| a1.kappa[i].abs() < r);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut visit = |j: usize| {
                if inner1 && skip_inner.is_some_and(|r| a2.kappa[j].abs() < r) {
                    return;
                }
                acc += prods[1][j] * weight(part, chi, e1 + a2.energy[j], eps);
            };
            if part == Part::Resonant {
                // Only |E − λ| < ρ contributes: a contiguous range in energy order.
                let lo = a2.order.partition_point(|&j| e1 + a2.energy[j] <= -chi.rho);
                let hi = a2.order.partition_point(|&j| e1 + a2.energy[j] < chi.rho);
                for &j in &a2.order[lo..hi] {
                    visit(j);
                }
            } else {
                for j in 0..a2.kappa.len() {
                    visit(j);
                }
            }
            prods[0][i] * acc
        })
        .sum()
}

/// Resolvent kernels of a field at one configuration. Eigen data and Fermi
/// curves are built lazily once and shared.
pub struct Resolvent<'a> {
    field: &'a ExtendedZoneField,
    cfg: ResolventConfig,
    chi: CutoffChi,
    kgrid: OnceLock<Result<KGrid>>,
    curves: OnceLock<Result<Vec<CurveQuadrature>>>,
}

impl<'a> Resolvent<'a> {
    pub fn new(field: &'a ExtendedZoneField, cfg: ResolventConfig) -> Result<Self> {
        cfg.validate()?;
        if field.d() != 2 && !matches!(field, ExtendedZoneField::Free { .. }) {
            return Err(Error::InvalidInput(
                "kernels are implemented for d = 2 (or free d = 1)".into(),
            ));
        }
        Ok(Resolvent {
            field,
            cfg,
            chi: CutoffChi::new(cfg.rho)?,
            kgrid: OnceLock::new(),
            curves: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ResolventConfig {
        &self.cfg
    }

    pub fn chi(&self) -> &CutoffChi {
        &self.chi
    }

    pub fn field(&self) -> &ExtendedZoneField {
        self.field
    }

    fn kgrid(&self) -> Result<&KGrid> {
        self.kgrid
            .get_or_init(|| self.build_kgrid())
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn build_kgrid(&self) -> Result<KGrid> {
        let nk = self.cfg.nk;
        let d = self.field.d();
        let free_tail = |inner: f64| -> Result<Vec<AxisTable>> {
            let free = ExtendedZoneField::Free { d, mu: 0.0 };
            (0..d)
                .map(|c| AxisTable::build(&free, c, 2.0 * inner, nk.min(64)))
                .collect()
        };
        match self.field {
            ExtendedZoneField::Free { .. } => {
                let extent = (2 * self.cfg.s + 1) as f64 * PI;
                let axes = (0..d)
                    .map(|c| AxisTable::build(self.field, c, extent, nk))
                    .collect::<Result<_>>()?;
                Ok(KGrid::Axes {
                    axes,
                    nk,
                    tail: Some(free_tail(extent)?),
                    inner: extent,
                })
            }
            ExtendedZoneField::Separable(f) => {
                let bands = f.parts().iter().map(|h| h.bands().len()).min().unwrap_or(1);
                let extent = (bands.min(2 * self.cfg.s + 1)) as f64 * PI;
                let axes = (0..d)
                    .map(|c| AxisTable::build(self.field, c, extent, nk))
                    .collect::<Result<_>>()?;
                Ok(KGrid::Axes {
                    axes,
                    nk,
                    tail: Some(free_tail(extent)?),
                    inner: extent,
                })
            }
            ExtendedZoneField::PlaneWave(p) => {
                let bx = TruncationBox::new(d, self.cfg.s.max(1))?;
                let h = 2.0 * PI / nk as f64;
                let ks: Vec<Vec2> = (0..nk)
                    .flat_map(|j| {
                        (0..nk)
                            .map(move |i| [-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h])
                    })
                    .collect();
                let data: Vec<(Vec2, Arc<Spectrum>)> = ks
                    .par_iter()
                    .map(|&k| Ok((k, Arc::new(eigensolve(assemble(p.spec(), k, bx))?))))
                    .collect::<Result<_>>()?;
                let inner = (2 * bx.s + 1) as f64 * PI;
                Ok(KGrid::Modes {
                    data,
                    bx,
                    nk,
                    tail: free_tail(inner)?,
                    inner,
                })
            }
        }
    }

    /// k-sum of one part of the kernel, with the free-surrogate tail estimate.
    fn ksum(&self, x: Vec2, y: Vec2, eps: f64, part: Part) -> Result<(Complex64, f64)> {
        let lambda = self.cfg.lambda;
        let chi = &self.chi;
        match self.kgrid()? {
            KGrid::Axes {
                axes,
                nk,
                tail,
                inner,
            } => {
                let norm = (*nk as f64).powi(axes.len() as i32);
                let v = axes_sum(axes, x, y, lambda, eps, chi, part, None) / norm;
                let t = match tail {
                    Some(t) if part != Part::Resonant => {
                        let tnk = (2.0 * PI / (t[0].kappa[1] - t[0].kappa[0])).round();
                        (axes_sum(t, x, y, lambda, eps, chi, part, Some(*inner - 1e-9))
                            / tnk.powi(t.len() as i32))
                        .norm()
                    }
                    _ => 0.0,
                };
                Ok((v, t))
            }
            KGrid::Modes {
                data,
                bx,
                nk,
                tail,
                inner,
            } => {
                let labels = bx.labels();
                let v: Complex64 = data
                    .par_iter()
                    .map(|(k, sp)| {
                        let wave = |p: Vec2| -> Vec<Complex64> {
                            labels
                                .iter()
                                .map(|s| {
                                    let kx = (k[0] + 2.0 * PI * s[0] as f64) * p[0]
                                        + (k[1] + 2.0 * PI * s[1] as f64) * p[1];
                                    Complex64::from_polar(1.0, kx)
                                })
                                .collect()
                        };
                        let (wx, wy) = (wave(x), wave(y));
                        let mut acc = Complex64::new(0.0, 0.0);
                        for n in 0..sp.values.len() {
                            let w = weight(part, chi, sp.values[n] - lambda, eps);
                            if w == Complex64::new(0.0, 0.0) {
                                continue;
                            }
                            let col = sp.vectors.column(n);
                            let px: Complex64 = col.iter().zip(&wx).map(|(c, e)| c * e).sum();
                            let py: Complex64 = col.iter().zip(&wy).map(|(c, e)| c * e).sum();
                            acc += px * py.conj() * w;
                        }
                        acc
                    })
                    .sum::<Complex64>()
                    / (*nk as f64).powi(2);
                let t = if part == Part::Resonant {
                    0.0
                } else {
                    let tnk = (2.0 * PI / (tail[0].kappa[1] - tail[0].kappa[0])).round();
                    (axes_sum(tail, x, y, lambda, eps, chi, part, Some(*inner - 1e-9))
                        / tnk.powi(2))
                    .norm()
                };
                Ok((v, t))
            }
        }
    }

    /// Full `K^ε(x, y)` at the configured `ε`.
    pub fn kernel_eps(&self, x: Vec2, y: Vec2) -> Result<KernelValue> {
        self.kernel_eps_at(x, y, self.cfg.eps)
    }

    pub fn kernel_eps_at(&self, x: Vec2, y: Vec2, eps: f64) -> Result<KernelValue> {
        if eps == 0.0 {
            return Err(Error::EpsilonZero);
        }
        let (k1, t1) = self.ksum(x, y, eps, Part::Nonresonant)?;
        let (k2, _) = self.ksum(x, y, eps, Part::Resonant)?;
        let value = k1 + k2;
        if t1 > 0.1 * value.norm() {
            return Err(Error::TailDominant {
                tail: t1,
                value: value.norm(),
            });
        }
        Ok(KernelValue {
            x,
            y,
            value,
            k1,
            k2,
            error: t1,
            shell: None,
        })
    }

    /// `(K₁^ε, K₂^ε)` by k-sums; `ε = 0` is allowed for `K₁` only.
    pub fn kernel_split(&self, x: Vec2, y: Vec2, eps: f64) -> Result<(Complex64, Complex64)> {
        let (k1, _) = self.ksum(x, y, eps, Part::Nonresonant)?;
        if eps == 0.0 {
            return Err(Error::EpsilonZero);
        }
        let (k2, _) = self.ksum(x, y, eps, Part::Resonant)?;
        Ok((k1, k2))
    }

    /// `K₁^ε` alone, with its tail estimate (`ε = 0` allowed).
    pub fn kernel_nonresonant(&self, x: Vec2, y: Vec2, eps: f64) -> Result<(Complex64, f64)> {
        self.ksum(x, y, eps, Part::Nonresonant)
    }

    /// `K₂^ε` by the k-sum route.
    pub fn kernel_resonant_ksum(&self, x: Vec2, y: Vec2, eps: f64) -> Result<Complex64> {
        if eps == 0.0 {
            return Err(Error::EpsilonZero);
        }
        Ok(self.ksum(x, y, eps, Part::Resonant)?.0)
    }

    /// Unevaluated `K^ε` check: value of the k-sum `K^ε` over the full grid
    /// without the split.
    pub fn kernel_eps_unsplit(&self, x: Vec2, y: Vec2, eps: f64) -> Result<Complex64> {
        if eps == 0.0 {
            return Err(Error::EpsilonZero);
        }
        Ok(self.ksum(x, y, eps, Part::Full)?.0)
    }

    pub fn taus(&self) -> Vec<f64> {
        let n = self.cfg.tau_points;
        let (l, r) = (self.cfg.lambda, self.cfg.rho);
        (0..n)
            .map(|i| l - r + 2.0 * r * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Fermi-curve quadratures on the τ-grid.
    pub fn curves(&self) -> Result<&[CurveQuadrature]> {
        self.curves
            .get_or_init(|| self.build_curves())
            .as_ref()
            .map(|v| v.as_slice())
            .map_err(|e| e.clone())
    }

    fn build_curves(&self) -> Result<Vec<CurveQuadrature>> {
        self.taus()
            .into_iter()
            .map(|tau| {
                let grid = GridSpec::auto(self.field, tau, self.cfg.grid_cells);
                let surf = extract(self.field, tau, grid, ExtractOptions::default())?;
                let rep = curvature_check(&surf)?;
                if surf.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "empty Fermi curve at τ = {tau}"
                    )));
                }
                if !rep.all_closed || rep.bridges > 0 {
                    return Err(Error::InvalidInput(format!(
                        "Fermi curve at τ = {tau} is open or crosses a gap"
                    )));
                }
                CurveQuadrature::build(&surf, self.field, self.cfg.theta_points)
            })
            .collect()
    }

    /// `τ ↦ a_{x,y}(τ)` on the τ-grid, with the largest quadrature estimate.
    pub fn density(&self, x: Vec2, y: Vec2) -> Result<(SampledDensity, f64)> {
        self.density_with(|c| c.density(x, y))
    }

    fn density_with(
        &self,
        f: impl Fn(&CurveQuadrature) -> (Complex64, f64) + Sync,
    ) -> Result<(SampledDensity, f64)> {
        let curves = self.curves()?;
        let vals: Vec<(Complex64, f64)> = curves.par_iter().map(&f).collect();
        let err = vals.iter().map(|v| v.1).fold(0.0, f64::max);
        let d = SampledDensity::new(
            self.cfg.lambda,
            self.cfg.rho,
            vals.into_iter().map(|v| v.0).collect(),
        )?;
        Ok((d, err))
    }

    /// `K₂^±(x, y)` via the Plemelj limit of the Fermi-curve density.
    pub fn kernel_resonant_limit(&self, x: Vec2, y: Vec2, side: Side) -> Result<Complex64> {
        let (a, _) = self.density(x, y)?;
        plemelj_limit(&a, self.cfg.lambda, &self.chi, side)
    }

    /// `K₂^ε(x, y)` through the same density (coarea route).
    pub fn kernel_resonant_eps(&self, x: Vec2, y: Vec2, eps: f64) -> Result<Complex64> {
        let (a, _) = self.density(x, y)?;
        let side = if eps > 0.0 { Side::Plus } else { Side::Minus };
        plemelj_regularized(&a, self.cfg.lambda, &self.chi, side, eps.abs())
    }

    /// Rate of `K₂^ε → K₂^+` and the empirical Hölder exponent of `a_{x,y}`.
    pub fn resonant_rate(&self, x: Vec2, y: Vec2, eps_list: &[f64]) -> Result<(RateFit, f64)> {
        let (a, _) = self.density(x, y)?;
        let fit = crate::oscillatory::plemelj_rate(&a, self.cfg.lambda, &self.chi, eps_list)?;
        Ok((fit, a.holder().0))
    }

    /// `K^± = K₁^0 + K₂^±`.
    pub fn kernel_limit(&self, x: Vec2, y: Vec2, side: Side) -> Result<KernelValue> {
        let (k1, tail) = self.kernel_nonresonant(x, y, 0.0)?;
        let (a, qerr) = self.density(x, y)?;
        let k2 = plemelj_limit(&a, self.cfg.lambda, &self.chi, side)?;
        let value = k1 + k2;
        if tail > 0.1 * value.norm() {
            return Err(Error::TailDominant {
                tail,
                value: value.norm(),
            });
        }
        Ok(KernelValue {
            x,
            y,
            value,
            k1,
            k2,
            error: tail + qerr,
            shell: None,
        })
    }

    /// `K* = ½ Re(K⁺ + K⁻)`.
    pub fn kernel_star(&self, x: Vec2, y: Vec2) -> Result<f64> {
        let (k1, _) = self.kernel_nonresonant(x, y, 0.0)?;
        let (a, _) = self.density(x, y)?;
        let p = plemelj_limit(&a, self.cfg.lambda, &self.chi, Side::Plus)?;
        let m = plemelj_limit(&a, self.cfg.lambda, &self.chi, Side::Minus)?;
        Ok((k1 + 0.5 * (p + m)).re)
    }

    /// Log-log slope of `|K₂^±(y + σv, y)|` over `sigmas`.
    pub fn decay_fit(&self, side: Side, sigmas: &[f64], v: Vec2, y: Vec2) -> Result<DecayFit> {
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let u = [v[0] / n, v[1] / n];
        let values: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                self.kernel_resonant_limit([y[0] + s * u[0], y[1] + s * u[1]], y, side)
                    .map(|k| k.norm())
            })
            .collect::<Result<_>>()?;
        let (slope, rms) = loglog_slope(sigmas, &values);
        Ok(DecayFit {
            sigmas: sigmas.to_vec(),
            values,
            slope,
            rms,
        })
    }

    /// `U(K^{ε,j}(·, y))(x, l)` by the coarea route:
    /// `∫ χ(τ−λ)/(τ−λ−iε) ∫_{F_τ} Ψ(x,k) conj Ψ(y,k) G_j(l−k)/(|B||∇Λ|) dH dτ`,
    /// with `G_j` the lattice shell sum of [`shell_kernel`]. `eps = 0` gives the `+` limit.
    pub fn floquet_kernel_transform(
        &self,
        j: u32,
        x: Vec2,
        y: Vec2,
        l: Vec2,
        eps: f64,
    ) -> Result<Complex64> {
        let (b, _) = self.density_with(|c| {
            c.integrate(|nd| {
                let g = shell_kernel(&[l[0] - nd.kappa[0], l[1] - nd.kappa[1]], j);
                nd.sheet.eval(x) * nd.sheet.eval(y).conj() * g
            })
        })?;
        if eps == 0.0 {
            plemelj_limit(&b, self.cfg.lambda, &self.chi, Side::Plus)
        } else {
            let side = if eps > 0.0 { Side::Plus } else { Side::Minus };
            plemelj_regularized(&b, self.cfg.lambda, &self.chi, side, eps.abs())
        }
    }

    /// Direct route: `Σ_{m ∈ R_j} e^{i⟨m,l⟩} K₂^ε(x − m, y)` with `K₂^ε` from k-sums.
    pub fn floquet_kernel_transform_direct(
        &self,
        j: u32,
        x: Vec2,
        y: Vec2,
        l: Vec2,
        eps: f64,
    ) -> Result<Complex64> {
        let (lo, hi) = crate::oscillatory::shell_bounds(j);
        let mut acc = Complex64::new(0.0, 0.0);
        for a in -hi..=hi {
            for b in -hi..=hi {
                if a.abs().max(b.abs()) <= lo {
                    continue;
                }
                let m = [a as f64, b as f64];
                let k = self.kernel_resonant_ksum([x[0] - m[0], x[1] - m[1]], y, eps)?;
                acc += Complex64::from_polar(1.0, m[0] * l[0] + m[1] * l[1]) * k;
            }
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub sigmas: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub rms: f64,
}

/// `K^{·,j}`: the value if `[x] − [y] ∈ R_j`, else zero.
pub fn shell_restrict(v: &KernelValue, j: u32) -> KernelValue {
    let m = [
        (v.x[0].floor() - v.y[0].floor()) as i64,
        (v.x[1].floor() - v.y[1].floor()) as i64,
    ];
    let inside = shell_index(&m) == j;
    let zero = Complex64::new(0.0, 0.0);
    KernelValue {
        value: if inside { v.value } else { zero },
        k1: if inside { v.k1 } else { zero },
        k2: if inside { v.k2 } else { zero },
        error: if inside { v.error } else { 0.0 },
        shell: Some(j),
        ..*v
    }
}

/// Largest `ρ ≤ ρ_max` (halving) such that Fermi curves at 9 levels across
/// `[λ − ρ, λ + ρ]` are closed, bridge-free, with `|∇Λ| > 1e−3` and
/// curvature `> 1e−3`.
pub fn select_rho(
    field: &ExtendedZoneField,
    lambda: f64,
    rho_max: f64,
    grid_cells: usize,
) -> Result<f64> {
    let mut rho = rho_max;
    for _ in 0..6 {
        let ok = (0..9).all(|i| {
            let tau = lambda - rho + 2.0 * rho * i as f64 / 8.0;
            let grid = GridSpec::auto(field, tau, grid_cells);
            let opts = ExtractOptions {
                grad_threshold: 1e-3,
                ..Default::default()
            };
            match extract(field, tau, grid, opts).and_then(|s| curvature_check(&s).map(|r| (s, r)))
            {
                Ok((s, r)) => !s.is_empty() && r.positive && r.min_curvature > 1e-3,
                Err(_) => false,
            }
        });
        if ok {
            return Ok(rho);
        }
        rho *= 0.5;
    }
    Err(Error::InvalidInput(format!(
        "no admissible cutoff radius ≤ {rho_max} at λ = {lambda}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillatory::{bessel_jy, free_green_2d};

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn split_adds_up_and_symmetries() {
        let field = ExtendedZoneField::free(2);
        let cfg = ResolventConfig {
            s: 4,
            nk: 64,
            eps: 0.3,
            ..Default::default()
        };
        let r = Resolvent::new(&field, cfg).unwrap();
        let (x, y) = ([0.3, 1.2], [-0.4, 0.1]);
        let (k1, k2) = r.kernel_split(x, y, 0.3).unwrap();
        let full = r.kernel_eps_unsplit(x, y, 0.3).unwrap();
        assert!((k1 + k2 - full).norm() < 1e-10 * full.norm());
        let back = r.kernel_eps_unsplit(y, x, -0.3).unwrap();
        assert!((full - back.conj()).norm() < 1e-10 * full.norm());
        let m = [1.0, 0.0];
        let a = r.kernel_eps_unsplit([x[0] + m[0], x[1]], y, 0.3).unwrap();
        let b = r.kernel_eps_unsplit(x, [y[0] - m[0], y[1]], 0.3).unwrap();
        assert!((a - b).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn free_resonant_limit_at_diagonal() {
        let field = ExtendedZoneField::free(2);
        let cfg = ResolventConfig {
            theta_points: 64,
            ..Default::default()
        };
        let r = Resolvent::new(&field, cfg).unwrap();
        let x = [0.2, 0.7];
        let k = r.kernel_resonant_limit(x, x, Side::Plus).unwrap();
        assert!((k.im - 0.25).abs() < 1e-10);
        let (a, _) = r.density(x, [x[0] + 1.5, x[1]]).unwrap();
        for (t, v) in r.taus().iter().zip(&a.values) {
            let (j0, _) = bessel_jy(0, c(t.sqrt() * 1.5)).unwrap();
            assert!((v - j0 / (4.0 * PI)).norm() < 1e-9);
        }
        let kp = r
            .kernel_resonant_limit([1.0, 2.0], [0.0, 0.5], Side::Plus)
            .unwrap();
        let km = r
            .kernel_resonant_limit([0.0, 0.5], [1.0, 2.0], Side::Minus)
            .unwrap();
        assert!((kp - km.conj()).norm() < 1e-12);
    }

    #[test]
    fn free_kernel_matches_hankel_coarse() {
        let field = ExtendedZoneField::free(2);
        let eps = 0.5;
        let cfg = ResolventConfig {
            lambda: 5.0,
            eps,
            s: 8,
            nk: ResolventConfig::nk_for_eps(5.0, eps),
            ..Default::default()
        };
        let r = Resolvent::new(&field, cfg).unwrap();
        let y = [0.3, 0.2];
        for dx in [1.0, 2.0] {
            let k = r.kernel_eps([y[0] + dx, y[1]], y).unwrap();
            let g = free_green_2d(5.0, eps, dx).unwrap();
            assert!((k.value - g).norm() < 0.01 * g.norm(), "{} {g}", k.value);
        }
    }

    #[test]
    fn shells_partition() {
        let v = KernelValue {
            x: [3.5, 1.2],
            y: [0.1, 0.4],
            value: c(1.0),
            k1: c(0.5),
            k2: c(0.5),
            error: 0.0,
            shell: None,
        };
        let hits: Vec<u32> = (0..6)
            .filter(|&j| shell_restrict(&v, j).value != c(0.0))
            .collect();
        assert_eq!(hits, vec![2]);
        let same = KernelValue { x: [0.5, 0.5], ..v };
        assert_eq!(shell_restrict(&same, 0).value, c(1.0));
        assert_eq!(shell_restrict(&same, 1).value, c(0.0));
    }
}
