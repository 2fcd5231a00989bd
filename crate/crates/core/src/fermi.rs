//! Fermi curves `F_τ = {κ : Λ(κ) = τ}` in the extended zone (`d = 2`): marching
//! squares on a grid of `Λ`, vertices refined on the grid edges, then normals,
//! `|∇Λ|` and curvature per vertex.
//!
//! Where the labeled `Λ` jumps across a Bragg line and `τ` lies inside the jump,
//! the edge root-finder collapses onto the discontinuity instead of a level
//! point. Such vertices are kept (so curves stay closed) and flagged as gap
//! bridges.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::planewave::{ExtendedZoneField, Label, SeparableField, Vec2};
use crate::{split_label, wrap};

const TWO_PI: f64 = 2.0 * PI;

/// Grid `origin + (i h, j h)`, `0 ≤ i < n[0]`, `0 ≤ j < n[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub origin: Vec2,
    pub h: f64,
    pub n: [usize; 2],
}

impl GridSpec {
    /// Square window `[−Mπ, Mπ]²` covering `|κ| ≤ radius`, with `cells_per_zone`
    /// (even) nodes per `2π`, shifted by half a step so no node sits on a
    /// Bragg line `κ_i ∈ πℤ`.
    pub fn aligned(radius: f64, cells_per_zone: usize) -> Self {
        let n_zone = cells_per_zone + cells_per_zone % 2;
        let m = (radius / PI).ceil().max(1.0) as usize;
        let h = TWO_PI / n_zone as f64;
        let origin = -(m as f64) * PI + 0.5 * h;
        let n = m * n_zone;
        GridSpec {
            origin: [origin, origin],
            h,
            n: [n, n],
        }
    }

    /// Window sized from `Λ ≳ |κ|² − osc`.
    pub fn auto(field: &ExtendedZoneField, tau: f64, cells_per_zone: usize) -> Self {
        Self::aligned(field.radius_bound(tau) - TWO_PI + 0.5, cells_per_zone)
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }
}

/// How derivatives of `Λ` at vertices are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CurvatureMethod {
    /// Fourth-order central differences with step `h`.
    FiniteDifference { h: f64 },
    /// Closed-form derivatives of the sheet through the vertex.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vertex {
    pub kappa: Vec2,
    /// Unit normal `∇Λ/|∇Λ|` (outward for the region `Λ < τ`).
    pub normal: Vec2,
    pub gradnorm: f64,
    pub curvature: f64,
    /// `|Λ(κ) − τ|` after refinement.
    pub residual: f64,
    /// The vertex sits on a jump of `Λ`, not on the level set.
    pub bridge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Component {
    pub vertices: Vec<Vertex>,
    pub closed: bool,
}

impl Component {
    /// Signed area (positive for counterclockwise curves).
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| {
                let (a, b) = (v[i].kappa, v[(i + 1) % n].kappa);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn length(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        let m = if self.closed { n } else { n.saturating_sub(1) };
        (0..m).map(|i| dist(v[i].kappa, v[(i + 1) % n].kappa)).sum()
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Irregular {
    pub kappa: Vec2,
    pub gradnorm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FermiSurface {
    pub tau: f64,
    pub grid: GridSpec,
    pub method: CurvatureMethod,
    pub components: Vec<Component>,
    /// Vertices with `|∇Λ|` below the regularity threshold.
    pub irregular: Vec<Irregular>,
}

impl FermiSurface {
    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.components.iter().flat_map(|c| c.vertices.iter())
    }

    pub fn bridge_count(&self) -> usize {
        self.vertices().filter(|v| v.bridge).count()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("component_id,k1,k2,nu1,nu2,gradnorm,curvature\n");
        for (ci, c) in self.components.iter().enumerate() {
            for v in &c.vertices {
                let _ = writeln!(
                    s,
                    "{ci},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                    v.kappa[0], v.kappa[1], v.normal[0], v.normal[1], v.gradnorm, v.curvature
                );
            }
        }
        s
    }
}

/// Options for [`extract`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtractOptions {
    /// Vertex tolerance `|Λ − τ|`.
    pub tol: f64,
    /// Regularity threshold on `|∇Λ|`.
    pub grad_threshold: f64,
    pub method: Option<CurvatureMethod>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            tol: 1e-6,
            grad_threshold: 1e-4,
            method: None,
        }
    }
}

/// Edge id: `(i, j, dir)` with `dir = 0` for `(i,j)–(i+1,j)`, `1` for `(i,j)–(i,j+1)`.
type EdgeId = (usize, usize, u8);

fn edge_ends(g: &GridSpec, e: EdgeId) -> (Vec2, Vec2) {
    let (i, j, d) = e;
    let a = g.point(i, j);
    let b = if d == 0 {
        g.point(i + 1, j)
    } else {
        g.point(i, j + 1)
    };
    (a, b)
}

/// Root of `Λ − τ` on the segment `a → b` (values `fa`, `fb` of opposite sign),
/// by the Illinois variant of regula falsi with a bisection safeguard.
fn refine_edge(
    field: &ExtendedZoneField,
    tau: f64,
    a: Vec2,
    b: Vec2,
    fa: f64,
    fb: f64,
    tol: f64,
) -> Result<(Vec2, f64, bool)> {
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let (mut t0, mut t1, mut f0, mut f1) = (0.0f64, 1.0f64, fa, fb);
    let mut side = 0i8;
    let mut best = (at(0.5), f64::INFINITY);
    let target = 1e-3 * tol;
    for it in 0..200 {
        let mut t = (t0 * f1 - t1 * f0) / (f1 - f0);
        if !(t > t0 && t < t1) || it % 8 == 7 {
            t = 0.5 * (t0 + t1);
        }
        let p = at(t);
        let f = field.lambda(p)? - tau;
        if f.abs() < best.1 {
            best = (p, f.abs());
        }
        if f.abs() <= target || (t1 - t0) < 1e-15 {
            break;
        }
        if (f < 0.0) == (f0 < 0.0) {
            t0 = t;
            f0 = f;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        } else {
            t1 = t;
            f1 = f;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
    }
    if best.1 > tol {
        // Interval collapsed onto a discontinuity of Λ.
        let t = 0.5 * (t0 + t1);
        let p = at(t);
        let r = (field.lambda(p)? - tau).abs();
        return Ok((p, r.min(best.1), true));
    }
    Ok((best.0, best.1, false))
}

/// `(∇Λ, ∇²Λ)` at `κ`.
pub fn derivatives(
    field: &ExtendedZoneField,
    kappa: Vec2,
    method: CurvatureMethod,
) -> Result<(Vec2, [[f64; 2]; 2])> {
    match method {
        CurvatureMethod::Analytic => {
            let (_, g, h) = field.jet(kappa)?;
            Ok((g, h))
        }
        CurvatureMethod::FiniteDifference { h } => {
            let f = |a: f64, b: f64| field.lambda([kappa[0] + a * h, kappa[1] + b * h]);
            let c = f(0.0, 0.0)?;
            let mut g = [0.0; 2];
            let mut hs = [[0.0; 2]; 2];
            for ax in 0..2 {
                let e = |s: f64| if ax == 0 { f(s, 0.0) } else { f(0.0, s) };
                let (p1, m1, p2, m2) = (e(1.0)?, e(-1.0)?, e(2.0)?, e(-2.0)?);
                g[ax] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
                hs[ax][ax] = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * h * h);
            }
            let cross =
                |s: f64| -> Result<f64> { Ok(f(s, s)? - f(s, -s)? - f(-s, s)? + f(-s, -s)?) };
            let mixed = (16.0 * cross(1.0)? - cross(2.0)?) / (48.0 * h * h);
            hs[0][1] = mixed;
            hs[1][0] = mixed;
            Ok((g, hs))
        }
    }
}

/// Level-set curvature `(Λ₁₁Λ₂² − 2Λ₁₂Λ₁Λ₂ + Λ₂₂Λ₁²)/|∇Λ|³`.
pub fn level_curvature(g: Vec2, h: [[f64; 2]; 2]) -> f64 {
    let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
    (h[0][0] * g[1] * g[1] - 2.0 * h[0][1] * g[0] * g[1] + h[1][1] * g[0] * g[0]) / (n * n * n)
}

pub fn default_method(field: &ExtendedZoneField, grid: &GridSpec) -> CurvatureMethod {
    match field {
        ExtendedZoneField::PlaneWave(_) => CurvatureMethod::Analytic,
        _ => CurvatureMethod::FiniteDifference {
            h: grid.h.min(0.05),
        },
    }
}

pub fn extract(
    field: &ExtendedZoneField,
    tau: f64,
    grid: GridSpec,
    opts: ExtractOptions,
) -> Result<FermiSurface> {
    if field.d() != 2 {
        return Err(Error::InvalidInput("surface extraction needs d = 2".into()));
    }
    let method = opts.method.unwrap_or_else(|| default_method(field, &grid));
    let [nx, ny] = grid.n;
    let vals: Vec<f64> = field
        .lambda_grid(grid.origin, grid.h, grid.n)?
        .into_iter()
        .map(|v| v - tau)
        .collect();
    let val = |i: usize, j: usize| vals[j * nx + i];
    let neg = |v: f64| v < 0.0;

    // Crossing edges.
    let mut edges: Vec<EdgeId> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx && neg(val(i, j)) != neg(val(i + 1, j)) {
                edges.push((i, j, 0));
            }
            if j + 1 < ny && neg(val(i, j)) != neg(val(i, j + 1)) {
                edges.push((i, j, 1));
            }
        }
    }
    let refined: Vec<Result<(Vec2, f64, bool)>> = edges
        .par_iter()
        .map(|&e| {
            let (a, b) = edge_ends(&grid, e);
            let (fa, fb) = if e.2 == 0 {
                (val(e.0, e.1), val(e.0 + 1, e.1))
            } else {
                (val(e.0, e.1), val(e.0, e.1 + 1))
            };
            refine_edge(field, tau, a, b, fa, fb, opts.tol)
        })
        .collect();
    let mut points: HashMap<EdgeId, (Vec2, f64, bool)> = HashMap::with_capacity(edges.len());
    for (e, r) in edges.iter().zip(refined) {
        points.insert(*e, r?);
    }

    // Oriented segments per cell, region Λ < τ on the left.
    let mut next: HashMap<EdgeId, EdgeId> = HashMap::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let c = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            let corners = [
                grid.point(i, j),
                grid.point(i + 1, j),
                grid.point(i + 1, j + 1),
                grid.point(i, j + 1),
            ];
            let cell_edges: [EdgeId; 4] = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let crossing: Vec<usize> = (0..4)
                .filter(|&e| neg(c[e]) != neg(c[(e + 1) % 4]))
                .collect();
            let pairs: Vec<(usize, usize, Option<usize>)> = match crossing.len() {
                0 => continue,
                2 => vec![(crossing[0], crossing[1], None)],
                4 => {
                    let center = 0.25 * (c[0] + c[1] + c[2] + c[3]);
                    if neg(center) == neg(c[0]) {
                        vec![(0, 1, Some(1)), (2, 3, Some(3))]
                    } else {
                        vec![(3, 0, Some(0)), (1, 2, Some(2))]
                    }
                }
                _ => unreachable!("a square has an even number of sign changes"),
            };
            for (ea, eb, cut) in pairs {
                let (pa, pb) = (points[&cell_edges[ea]].0, points[&cell_edges[eb]].0);
                let t = [pb[0] - pa[0], pb[1] - pa[1]];
                let score = |k: usize| {
                    let w = [corners[k][0] - pa[0], corners[k][1] - pa[1]];
                    let cr = t[0] * w[1] - t[1] * w[0];
                    if neg(c[k]) {
                        cr
                    } else {
                        -cr
                    }
                };
                let s: f64 = match cut {
                    Some(k) => score(k),
                    None => (0..4).map(score).sum(),
                };
                let (from, to) = if s >= 0.0 { (ea, eb) } else { (eb, ea) };
                next.insert(cell_edges[from], cell_edges[to]);
            }
        }
    }

    // Chain segments into polylines.
    let mut prev: HashMap<EdgeId, EdgeId> = HashMap::new();
    for (a, b) in &next {
        prev.insert(*b, *a);
    }
    let mut visited: HashMap<EdgeId, bool> = HashMap::new();
    let mut starts: Vec<EdgeId> = next.keys().copied().collect();
    starts.sort();
    let mut chains: Vec<(Vec<EdgeId>, bool)> = Vec::new();
    // Open chains first start where no predecessor exists.
    let mut open_starts: Vec<EdgeId> = starts
        .iter()
        .copied()
        .filter(|e| !prev.contains_key(e))
        .collect();
    open_starts.sort();
    for s in open_starts.into_iter().chain(starts.iter().copied()) {
        if visited.contains_key(&s) {
            continue;
        }
        let mut chain = vec![s];
        visited.insert(s, true);
        let mut cur = s;
        let mut closed = false;
        while let Some(&n) = next.get(&cur) {
            if n == s {
                closed = true;
                break;
            }
            if visited.contains_key(&n) {
                break;
            }
            visited.insert(n, true);
            chain.push(n);
            cur = n;
        }
        chains.push((chain, closed));
    }

    let mut components = Vec::new();
    let mut irregular = Vec::new();
    for (chain, closed) in chains {
        let verts: Vec<Result<Vertex>> = chain
            .par_iter()
            .map(|e| {
                let (p, residual, bridge) = points[e];
                let (g, h) = derivatives(field, p, method)?;
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                let normal = if gn > 0.0 {
                    [g[0] / gn, g[1] / gn]
                } else {
                    [0.0, 0.0]
                };
                let curvature = if gn > 0.0 {
                    level_curvature(g, h)
                } else {
                    f64::NAN
                };
                Ok(Vertex {
                    kappa: p,
                    normal,
                    gradnorm: gn,
                    curvature,
                    residual,
                    bridge,
                })
            })
            .collect();
        let vertices: Vec<Vertex> = verts.into_iter().collect::<Result<_>>()?;
        for v in &vertices {
            if !v.bridge && v.gradnorm < opts.grad_threshold {
                irregular.push(Irregular {
                    kappa: v.kappa,
                    gradnorm: v.gradnorm,
                });
            }
        }
        components.push(Component { vertices, closed });
    }
    Ok(FermiSurface {
        tau,
        grid,
        method,
        components,
        irregular,
    })
}

/// Result of the curvature check for (A2)(b).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub min_curvature: f64,
    /// Vertex where the minimum is attained.
    pub witness: Option<Vec2>,
    pub components: usize,
    pub all_closed: bool,
    pub bridges: usize,
    /// Closed, bridge-free and strictly positive curvature at every vertex.
    pub positive: bool,
}

pub fn curvature_check(surface: &FermiSurface) -> Result<CurvatureReport> {
    if let Some(w) = surface.irregular.first() {
        return Err(Error::IrregularFrequency {
            tau: surface.tau,
            kappa: w.kappa.to_vec(),
            gradnorm: w.gradnorm,
        });
    }
    let mut min = f64::INFINITY;
    let mut witness = None;
    for v in surface.vertices().filter(|v| !v.bridge) {
        if v.curvature < min {
            min = v.curvature;
            witness = Some(v.kappa);
        }
    }
    let all_closed = surface.components.iter().all(|c| c.closed);
    let bridges = surface.bridge_count();
    Ok(CurvatureReport {
        min_curvature: min,
        witness,
        components: surface.components.len(),
        all_closed,
        bridges,
        positive: min > 0.0 && all_closed && bridges == 0 && !surface.is_empty(),
    })
}

/// `F_τ` folded into `B`, split into runs of constant label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedZoneSurface {
    pub tau: f64,
    pub components: Vec<ReducedComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedComponent {
    pub label: Label,
    pub points: Vec<Vec2>,
}

fn fold(p: Vec2) -> (Vec2, Label) {
    let (k0, s0) = split_label(p[0]);
    let (k1, s1) = split_label(p[1]);
    ([k0, k1], [s0, s1])
}

pub fn reduce_zone(surface: &FermiSurface) -> ReducedZoneSurface {
    let mut components = Vec::new();
    for c in &surface.components {
        let mut runs: Vec<ReducedComponent> = Vec::new();
        for v in &c.vertices {
            let (k, s) = fold(v.kappa);
            match runs.last_mut() {
                Some(r) if r.label == s => r.points.push(k),
                _ => runs.push(ReducedComponent {
                    label: s,
                    points: vec![k],
                }),
            }
        }
        if c.closed && runs.len() > 1 && runs[0].label == runs[runs.len() - 1].label {
            let last = runs.pop().expect("non-empty");
            let mut pts = last.points;
            pts.extend(runs[0].points.drain(..));
            runs[0].points = pts;
        }
        components.extend(runs);
    }
    ReducedZoneSurface {
        tau: surface.tau,
        components,
    }
}

/// Idempotent folding of a point already in `B`.
pub fn fold_point(p: Vec2) -> Vec2 {
    [wrap(p[0]), wrap(p[1])]
}

/// Smallest `τ` (to `tol`) at which the folded free Fermi circle splits into
/// more than one component, found by bisection on `[lo, hi]`.
pub fn free_fold_threshold(lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let field = ExtendedZoneField::free(2);
    let count = |tau: f64| -> Result<usize> {
        let g = GridSpec::aligned(tau.sqrt() + 0.5, 64);
        Ok(
            reduce_zone(&extract(&field, tau, g, ExtractOptions::default())?)
                .components
                .len(),
        )
    };
    let (mut a, mut b) = (lo, hi);
    if count(a)? > 1 || count(b)? <= 1 {
        return Err(Error::InvalidInput(format!(
            "threshold not bracketed by [{lo}, {hi}]"
        )));
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        if count(m)? > 1 {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// The four quadrant arcs of a separable first-band Fermi curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparableArcs {
    pub lambda: f64,
    /// Parameter `r` per sample, per arc.
    pub params: [Vec<f64>; 4],
    pub arcs: [Vec<Vec2>; 4],
    /// `max |Λ − λ|` over all samples.
    pub max_residual: f64,
}

impl SeparableArcs {
    /// Arcs concatenated into one counterclockwise polyline (shared endpoints once).
    pub fn closed_curve(&self) -> Vec<Vec2> {
        let mut out = Vec::new();
        for a in &self.arcs {
            out.extend_from_slice(&a[..a.len() - 1]);
        }
        out
    }

    /// Largest gap between the end of one arc and the start of the next.
    pub fn chain_gap(&self) -> f64 {
        (0..4)
            .map(|i| {
                dist(
                    *self.arcs[i].last().expect("arc"),
                    self.arcs[(i + 1) % 4][0],
                )
            })
            .fold(0.0, f64::max)
    }
}

/// Admissible window `E₁(0)+E₂(0) < λ < min{E₁(0)+E₂(π), E₁(π)+E₂(0)}`.
pub fn separable_window(field: &SeparableField) -> Result<(f64, f64)> {
    let b1 = field.parts()[0].band(1)?;
    let b2 = field.parts()[1].band(1)?;
    Ok((
        b1.at_zero() + b2.at_zero(),
        (b1.at_zero() + b2.at_pi()).min(b1.at_pi() + b2.at_zero()),
    ))
}

/// `γ₁(r) = (Z₁(λ−r), Z₂(r))`, `γ₂(r) = (−Z₁(r), Z₂(λ−r))`, `γ₃ = −γ₁`,
/// `γ₄(r) = (Z₁(r), −Z₂(λ−r))`, each with `n` samples. The parameter is
/// `r = r_lo + (r_hi − r_lo) sin²θ` with `θ` uniform, which clusters samples
/// at the arc ends where `Z` has square-root behavior.
pub fn separable_arcs(field: &SeparableField, lambda: f64, n: usize) -> Result<SeparableArcs> {
    let (lo, hi) = separable_window(field)?;
    if !(lambda > lo && lambda < hi) {
        return Err(Error::FrequencyOutsideWindow { lambda, lo, hi });
    }
    let h1 = &field.parts()[0];
    let h2 = &field.parts()[1];
    let e1 = h1.band(1)?.at_zero();
    let e2 = h2.band(1)?.at_zero();
    let z1 = |e: f64| {
        if e <= e1 {
            Ok(0.0)
        } else {
            h1.inverse_band(1, e)
        }
    };
    let z2 = |e: f64| {
        if e <= e2 {
            Ok(0.0)
        } else {
            h2.inverse_band(1, e)
        }
    };
    let thetas: Vec<f64> = (0..n)
        .map(|i| 0.5 * PI * i as f64 / (n - 1) as f64)
        .collect();
    let mut params: [Vec<f64>; 4] = Default::default();
    let mut arcs: [Vec<Vec2>; 4] = Default::default();
    for (a, (rlo, rhi)) in [
        (e2, lambda - e1),
        (e1, lambda - e2),
        (e2, lambda - e1),
        (e1, lambda - e2),
    ]
    .into_iter()
    .enumerate()
    {
        for &t in &thetas {
            let r = rlo + (rhi - rlo) * t.sin().powi(2);
            let p = match a {
                0 => [z1(lambda - r)?, z2(r)?],
                1 => [-z1(r)?, z2(lambda - r)?],
                2 => [-z1(lambda - r)?, -z2(r)?],
                _ => [z1(r)?, -z2(lambda - r)?],
            };
            params[a].push(r);
            arcs[a].push(p);
        }
    }
    let mut max_residual: f64 = 0.0;
    for arc in &arcs {
        for p in arc {
            let v = h1.band_energy(1, p[0])? + h2.band_energy(1, p[1])?;
            max_residual = max_residual.max((v - lambda).abs());
        }
    }
    Ok(SeparableArcs {
        lambda,
        params,
        arcs,
        max_residual,
    })
}

/// Closed-form curvature `(E₁''E₂'² + E₂''E₁'²)/(E₁'² + E₂'²)^{3/2}` at `k`.
pub fn separable_curvature(field: &SeparableField, k: Vec2) -> Result<f64> {
    let (_, a1, a2) = field.part_jet(0, k[0])?;
    let (_, b1, b2) = field.part_jet(1, k[1])?;
    Ok((a2 * b1 * b1 + b2 * a1 * a1) / (a1 * a1 + b1 * b1).powf(1.5))
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Vec2], b: &[Vec2]) -> f64 {
    let one = |x: &[Vec2], y: &[Vec2]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist(*p, *q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// SVG drawing of several surfaces, one color per surface.
pub fn surfaces_svg(surfaces: &[FermiSurface], size: f64) -> String {
    let colors = ["red", "black", "green", "blue", "orange", "purple"];
    let extent = surfaces
        .iter()
        .flat_map(|s| s.vertices())
        .map(|v| v.kappa[0].abs().max(v.kappa[1].abs()))
        .fold(PI, f64::max)
        * 1.05;
    let sc = size / (2.0 * extent);
    let tx = |p: Vec2| ((p[0] + extent) * sc, (extent - p[1]) * sc);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (cx, cy) = tx([0.0, 0.0]);
    let _ = writeln!(
        s,
        r##"<line x1="0" y1="{cy:.2}" x2="{size}" y2="{cy:.2}" stroke="#999" stroke-width="0.5"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line x1="{cx:.2}" y1="0" x2="{cx:.2}" y2="{size}" stroke="#999" stroke-width="0.5"/>"##
    );
    let (bx0, by0) = tx([-PI, PI]);
    let w = TWO_PI * sc;
    let _ = writeln!(
        s,
        r##"<rect x="{bx0:.2}" y="{by0:.2}" width="{w:.2}" height="{w:.2}" fill="none" stroke="#ccc" stroke-dasharray="4 3"/>"##
    );
    for (i, surf) in surfaces.iter().enumerate() {
        let col = colors[i % colors.len()];
        for c in &surf.components {
            let pts: Vec<String> = c
                .vertices
                .iter()
                .map(|v| {
                    let (x, y) = tx(v.kappa);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let tag = if c.closed { "polygon" } else { "polyline" };
            let _ = writeln!(
                s,
                r#"<{tag} points="{}" fill="none" stroke="{col}" stroke-width="1.2"><title>tau = {}</title></{tag}>"#,
                pts.join(" "),
                surf.tau
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hill1d::Potential1D;

    #[test]
    fn free_circle() {
        let f = ExtendedZoneField::free(2);
        let tau = 5.0;
        let s = extract(
            &f,
            tau,
            GridSpec::aligned(3.0, 64),
            ExtractOptions::default(),
        )
        .unwrap();
        assert_eq!(s.components.len(), 1);
        let c = &s.components[0];
        assert!(c.closed && c.signed_area() > 0.0);
        for v in &c.vertices {
            let r = (v.kappa[0].powi(2) + v.kappa[1].powi(2)).sqrt();
            assert!((r - tau.sqrt()).abs() < 1e-9);
            assert!((v.curvature - tau.powf(-0.5)).abs() < 1e-8);
            // Outward normal equals the radial direction.
            assert!((v.normal[0] * v.kappa[0] + v.normal[1] * v.kappa[1]) / r > 0.999);
        }
        let rep = curvature_check(&s).unwrap();
        assert!(rep.positive);
    }

    #[test]
    fn empty_below_spectrum() {
        let f = ExtendedZoneField::free(2);
        for tau in [-1.0, 0.0] {
            let s = extract(
                &f,
                tau,
                GridSpec::aligned(1.0, 32),
                ExtractOptions::default(),
            )
            .unwrap();
            assert!(s.is_empty());
        }
    }

    #[test]
    fn reduced_zone_examples() {
        let f = ExtendedZoneField::free(2);
        let s1 = extract(
            &f,
            1.0,
            GridSpec::aligned(1.5, 64),
            ExtractOptions::default(),
        )
        .unwrap();
        assert_eq!(reduce_zone(&s1).components.len(), 1);
        let s15 = extract(
            &f,
            15.0,
            GridSpec::aligned(4.5, 64),
            ExtractOptions::default(),
        )
        .unwrap();
        assert!(reduce_zone(&s15).components.len() > 1);
        let p = [0.3, -2.0];
        assert_eq!(fold_point(fold_point(p)), fold_point(p));
    }

    #[test]
    fn coarea_displacement() {
        let f = ExtendedZoneField::free(2);
        let (tau, dt) = (5.0, 0.01);
        let g = GridSpec::aligned(3.0, 64);
        let a = extract(&f, tau, g, ExtractOptions::default()).unwrap();
        let b = extract(&f, tau + dt, g, ExtractOptions::default()).unwrap();
        let ra = a
            .vertices()
            .map(|v| (v.kappa[0].powi(2) + v.kappa[1].powi(2)).sqrt())
            .sum::<f64>()
            / a.vertices().count() as f64;
        let rb = b
            .vertices()
            .map(|v| (v.kappa[0].powi(2) + v.kappa[1].powi(2)).sqrt())
            .sum::<f64>()
            / b.vertices().count() as f64;
        let want = dt / (2.0 * tau.sqrt());
        assert!(((rb - ra) - want).abs() < 0.05 * want);
    }

    #[test]
    fn separable_arcs_free() {
        let field = SeparableField::new(
            vec![Potential1D::constant(0.0), Potential1D::constant(0.0)],
            3,
        )
        .unwrap();
        let arcs = separable_arcs(&field, 5.0, 65).unwrap();
        assert!(arcs.chain_gap() < 1e-7);
        assert!(arcs.max_residual < 1e-8);
        for p in arcs.closed_curve() {
            assert!(((p[0].powi(2) + p[1].powi(2)).sqrt() - 5f64.sqrt()).abs() < 1e-7);
        }
        assert!(matches!(
            separable_arcs(&field, 12.0, 9),
            Err(Error::FrequencyOutsideWindow { .. })
        ));
    }

    #[test]
    fn separable_curvature_two_ways() {
        let v1 = Potential1D::from_fn(128, |x| 0.6 * (2.0 * PI * x).cos()).unwrap();
        let parts = vec![v1, Potential1D::constant(0.3)];
        let sep = SeparableField::new(parts.clone(), 4).unwrap();
        let field = ExtendedZoneField::separable(parts).unwrap();
        let (lo, hi) = separable_window(&sep).unwrap();
        let lambda = 0.5 * (lo + hi);
        let arcs = separable_arcs(&sep, lambda, 41).unwrap();
        let surf = extract(
            &field,
            lambda,
            GridSpec::aligned(3.0, 96),
            ExtractOptions::default(),
        )
        .unwrap();
        assert_eq!(surf.components.len(), 1);
        for v in surf.vertices() {
            let k = separable_curvature(&sep, v.kappa).unwrap();
            assert!(
                (k - v.curvature).abs() < 1e-3 * k.abs(),
                "{k} {}",
                v.curvature
            );
            assert!(k > 0.0);
        }
        let pts: Vec<Vec2> = surf.vertices().map(|v| v.kappa).collect();
        assert!(hausdorff(&pts, &arcs.closed_curve()) < 2.0 * surf.grid.h);
    }

    #[test]
    fn svg_and_csv_render() {
        let f = ExtendedZoneField::free(2);
        let s = extract(
            &f,
            2.0,
            GridSpec::aligned(2.0, 32),
            ExtractOptions::default(),
        )
        .unwrap();
        let svg = surfaces_svg(&[s.clone()], 400.0);
        assert!(svg.starts_with("<svg") && svg.contains("polygon"));
        assert!(s.csv().lines().count() > 10);
    }
}
