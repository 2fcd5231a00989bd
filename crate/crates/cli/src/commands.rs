use std::f64::consts::PI;
use std::fmt::Write as _;

use bloch_lap::checks::{
    exponent_region, mountain_pass_sign, perturbation_check, region_equivalence_scan,
    verify_assumptions, Exponent,
};
use bloch_lap::fermi::{curvature_check, extract, surfaces_svg, ExtractOptions, GridSpec};
use bloch_lap::hill1d::{band_edges, interlacing_holds, Hill1D, Potential1D};
use bloch_lap::oscillatory::{farfield_leading, resonant_points, Side};
use bloch_lap::planewave::{
    band_sweep, k_grid, sweep_csv, ExtendedZoneField, PotentialMode, PotentialSpec,
    PotentialSpecJson, SweepRow, TruncationBox,
};
use bloch_lap::resolvent::{kernel_csv, Resolvent};
use bloch_lap::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::cache;
use crate::config::{Format, RunConfig};
use crate::output::OutDir;
use crate::Failure;

type Res = Result<(), Failure>;

fn spec(c: &RunConfig) -> Result<PotentialSpec, Failure> {
    match &c.potential {
        None => Ok(PotentialSpec::zero(c.d)),
        Some(p) => Ok(PotentialSpec::from_json_value(p)?),
    }
}

fn potential_1d(c: &RunConfig) -> Result<Potential1D, Failure> {
    match &c.potential {
        None => Ok(Potential1D::constant(0.0)),
        Some(PotentialSpecJson::Separable { parts, .. }) => Ok(Potential1D::from_spec(&parts[0])?),
        Some(p) => {
            let s = PotentialSpec::from_json_value(p)?;
            Ok(Potential1D::from_fn(4096, |x| s.value([x, 0.0]))?)
        }
    }
}

fn field(c: &RunConfig) -> Result<ExtendedZoneField, Failure> {
    if c.d != 2 {
        return Err(Failure::Validation(format!(
            "this command needs d = 2, got d = {}",
            c.d
        )));
    }
    let s = spec(c)?;
    Ok(match s.mode() {
        PotentialMode::Fourier(t) if t.is_empty() => ExtendedZoneField::free(2),
        PotentialMode::Separable(parts) => ExtendedZoneField::separable(parts.clone())?,
        PotentialMode::Fourier(_) => ExtendedZoneField::plane_wave(s, c.s)?,
    })
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.replace('-', "m")
}

pub fn bands(c: &RunConfig, out: &mut OutDir) -> Res {
    if c.d == 1 {
        return bands_1d(c, out);
    }
    let spec = spec(c)?;
    let bx = TruncationBox::new(2, c.s)?;
    let key = cache::sweep_key(&c.potential, c.d, c.s, c.grid);
    let cached = c.cache_dir.as_deref().and_then(|d| cache::load(d, &key));
    let hit = cached.is_some();
    let rows = match cached {
        Some(r) => r,
        None => {
            let r = band_sweep(&spec, bx, &k_grid(2, c.grid))?;
            if let Some(dir) = &c.cache_dir {
                if let Err(e) = cache::store(dir, &key, &r) {
                    out.warn(format!("cache write failed: {e}"));
                }
            }
            r
        }
    };
    if c.cache_dir.is_some() {
        eprintln!("cache {} ({key})", if hit { "hit" } else { "miss" });
    }
    if c.wants(Format::Csv) {
        out.write("bands.csv", sweep_csv(&rows).as_bytes())?;
    }
    if c.wants(Format::Json) {
        out.write_json("gaps.json", &gap_report(c, &rows))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BandRange {
    band: usize,
    min: f64,
    max: f64,
}

fn gap_report(c: &RunConfig, rows: &[SweepRow]) -> serde_json::Value {
    // Rows come grouped by k; sort each group to get the n-th band.
    let mut groups: Vec<Vec<f64>> = Vec::new();
    let mut last = None;
    for r in rows {
        if last != Some(r.k) {
            groups.push(Vec::new());
            last = Some(r.k);
        }
        groups.last_mut().unwrap().push(r.lambda);
    }
    for g in &mut groups {
        g.sort_by(f64::total_cmp);
    }
    let nb = groups.iter().map(Vec::len).min().unwrap_or(0).min(10);
    let ranges: Vec<BandRange> = (0..nb)
        .map(|n| BandRange {
            band: n + 1,
            min: groups.iter().map(|g| g[n]).fold(f64::INFINITY, f64::min),
            max: groups
                .iter()
                .map(|g| g[n])
                .fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let gaps: Vec<[f64; 2]> = ranges
        .windows(2)
        .filter(|w| w[1].min > w[0].max)
        .map(|w| [w[0].max, w[1].min])
        .collect();
    let free_dev = c.potential.is_none().then(|| {
        rows.iter()
            .map(|r| {
                let want = (r.k[0] + 2.0 * PI * r.s[0] as f64).powi(2)
                    + (r.k[1] + 2.0 * PI * r.s[1] as f64).powi(2);
                (r.lambda - want).abs()
            })
            .fold(0.0, f64::max)
    });
    json!({
        "d": 2,
        "S": c.s,
        "grid": c.grid,
        "eigenvalues": rows.len(),
        "bands": ranges,
        "gaps": gaps,
        "max_free_deviation": free_dev,
    })
}

fn bands_1d(c: &RunConfig, out: &mut OutDir) -> Res {
    let pot = potential_1d(c)?;
    let edges = band_edges(&pot, c.l_max, c.e_max)?;
    let interlacing = interlacing_holds(&edges);
    if !interlacing {
        out.warn("band edges violate the interlacing chain".into());
    }
    if c.wants(Format::Csv) {
        let h = Hill1D::new(pot, c.l_max)?;
        let mut s = String::from("k,l,E\n");
        for i in 0..c.grid {
            let k = -PI + 2.0 * PI * i as f64 / (c.grid - 1) as f64;
            for l in 1..=c.l_max {
                let _ = writeln!(s, "{k:.15e},{l},{:.15e}", h.band_energy(l, k)?);
            }
        }
        out.write("bands.csv", s.as_bytes())?;
    }
    if c.wants(Format::Json) {
        let gaps: Vec<[f64; 2]> = edges
            .windows(2)
            .filter(|w| w[1].lower > w[0].upper)
            .map(|w| [w[0].upper, w[1].lower])
            .collect();
        out.write_json(
            "gaps.json",
            &json!({ "d": 1, "bands": edges, "gaps": gaps, "interlacing": interlacing }),
        )?;
    }
    Ok(())
}

pub fn fermi(c: &RunConfig, out: &mut OutDir) -> Res {
    let f = field(c)?;
    let mut surfaces = Vec::new();
    let mut reports = Vec::new();
    for &tau in &c.taus {
        let s = extract(
            &f,
            tau,
            GridSpec::auto(&f, tau, c.cells_per_zone),
            ExtractOptions::default(),
        )?;
        let entry = match curvature_check(&s) {
            Ok(r) => {
                json!({ "tau": tau, "regular": true, "curvature": r, "lengths": s.components.iter().map(|c| c.length()).collect::<Vec<_>>() })
            }
            Err(Error::IrregularFrequency {
                kappa, gradnorm, ..
            }) => {
                out.warn(format!(
                    "τ = {tau} is irregular: |∇Λ| = {gradnorm:e} at κ = {kappa:?}"
                ));
                json!({ "tau": tau, "regular": false, "witness": kappa, "gradnorm": gradnorm })
            }
            Err(e) => return Err(e.into()),
        };
        if s.is_empty() {
            out.warn(format!("F_τ is empty for τ = {tau}"));
        }
        if c.wants(Format::Csv) {
            out.write(
                &format!("fermi_tau{}.csv", fmt_num(tau)),
                s.csv().as_bytes(),
            )?;
        }
        reports.push(entry);
        surfaces.push(s);
    }
    if c.wants(Format::Json) {
        out.write_json("fermi.json", &reports)?;
    }
    if c.wants(Format::Svg) {
        out.write("fermi.svg", surfaces_svg(&surfaces, 600.0).as_bytes())?;
    }
    Ok(())
}

pub fn kernel(c: &RunConfig, out: &mut OutDir) -> Res {
    let f = field(c)?;
    let r = Resolvent::new(&f, c.resolvent)?;
    let v = c.unit_direction();
    let y = c.y;
    let mut fits = serde_json::Map::new();
    for (name, side) in [("plus", Side::Plus), ("minus", Side::Minus)] {
        let fit = r.decay_fit(side, &c.sigmas, v, y)?;
        fits.insert(
            name.into(),
            serde_json::to_value(&fit).expect("serializable"),
        );
    }
    if c.wants(Format::Csv) {
        let vals = c
            .sigmas
            .iter()
            .map(|&s| r.kernel_limit([y[0] + s * v[0], y[1] + s * v[1]], y, Side::Plus))
            .collect::<bloch_lap::Result<Vec<_>>>()?;
        out.write("kernel.csv", kernel_csv(&vals).as_bytes())?;
    }
    if c.wants(Format::Json) {
        out.write_json(
            "decay.json",
            &json!({ "lambda": c.resolvent.lambda, "direction": v, "y": y, "expected_slope": -0.5, "fits": fits }),
        )?;
    }
    Ok(())
}

fn random_pairs(c: &RunConfig) -> Vec<(Exponent, Exponent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    (0..c.random_pairs)
        .map(|_| {
            let a: i64 = rng.gen_range(1..=60);
            let b: i64 = rng.gen_range(0..=60);
            let q = if b == 0 {
                Exponent::Infinite
            } else {
                Exponent::new(60, b)
            };
            (Exponent::new(60, a), q)
        })
        .collect()
}

pub fn verify(c: &RunConfig, out: &mut OutDir) -> Res {
    let f = field(c)?;
    let lambda = c.resolvent.lambda;
    let assumptions = verify_assumptions(&f, lambda, &c.assumptions)?;
    if !assumptions.pass {
        out.warn(format!("assumptions fail at λ = {lambda}"));
    }
    let mut pairs = Vec::new();
    for (p, q) in c.pairs.iter().copied().chain(random_pairs(c)) {
        pairs.push(json!({ "p": p, "q": q, "region": exponent_region(c.d, p, q)? }));
    }
    let scans = [2usize, 3]
        .iter()
        .map(|&d| region_equivalence_scan(d, c.scan_n))
        .collect::<bloch_lap::Result<Vec<_>>>()?;
    let perturbation = match &c.potential {
        Some(PotentialSpecJson::Separable { parts, .. }) if parts.len() == 2 => {
            let v1 = Potential1D::from_spec(&parts[0])?;
            let v2 = Potential1D::from_spec(&parts[1])?;
            let (m1, m2) = (v1.mean(), v2.mean());
            Some(perturbation_check(&v1, &v2, m1, m2, c.perturbation_eps)?)
        }
        _ => None,
    };
    out.write_json(
        "verify.json",
        &json!({ "assumptions": assumptions, "exponent_pairs": pairs, "equivalence_scans": scans, "perturbation": perturbation }),
    )?;
    Ok(())
}

pub fn farfield(c: &RunConfig, out: &mut OutDir) -> Res {
    let f = field(c)?;
    let lambda = c.resolvent.lambda;
    let v = c.unit_direction();
    let y = c.y;
    let x = [y[0] + c.sigma * v[0], y[1] + c.sigma * v[1]];
    let surface = extract(
        &f,
        lambda,
        GridSpec::auto(&f, lambda, c.cells_per_zone),
        ExtractOptions::default(),
    )?;
    let points = resonant_points(&surface, &f, [x[0] - y[0], x[1] - y[1]])?;
    let lead = farfield_leading(&surface, &f, x, y)?;
    let r = Resolvent::new(&f, c.resolvent)?;
    let k2 = r.kernel_resonant_limit(x, y, Side::Plus)?;
    // Im K₂⁺ ≈ π Re a(λ) far out; compare against the stationary-phase term.
    let ratio = k2.im / (PI * lead.re);
    out.write_json(
        "farfield.json",
        &json!({
            "lambda": lambda, "sigma": c.sigma, "x": x, "y": y,
            "resonant_points": points,
            "leading": lead,
            "k2_plus": k2,
            "im_ratio": ratio,
        }),
    )?;
    Ok(())
}

pub fn nlh_geometry(c: &RunConfig, out: &mut OutDir) -> Res {
    let f = field(c)?;
    let lambda = c.resolvent.lambda;
    let surface = extract(
        &f,
        lambda,
        GridSpec::auto(&f, lambda, c.cells_per_zone),
        ExtractOptions::default(),
    )?;
    let curvature = curvature_check(&surface)?;
    let plus = mountain_pass_sign(&f, lambda, c.delta, Side::Plus)?;
    let minus = mountain_pass_sign(&f, lambda, c.delta, Side::Minus)?;
    if !(plus < 0.0 && minus < 0.0) {
        out.warn(format!(
            "mountain-pass values not both negative: {plus}, {minus}"
        ));
    }
    out.write_json(
        "nlh_geometry.json",
        &json!({
            "lambda": lambda, "delta": c.delta,
            "curvature": curvature,
            "mountain_pass": { "plus": plus, "minus": minus, "negative": plus < 0.0 && minus < 0.0 },
        }),
    )?;
    Ok(())
}
