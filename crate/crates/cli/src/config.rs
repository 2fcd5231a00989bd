//! Run configuration: JSON documents merged with command-line flags.

use std::path::{Path, PathBuf};

use bloch_lap::checks::{AssumptionConfig, Exponent};
use bloch_lap::planewave::PotentialSpecJson;
use bloch_lap::resolvent::ResolventConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Fully resolved configuration of one run. Every field has a default; see
/// docs/config.md for the table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    /// Inline potential. `None` means `V ≡ 0`.
    pub potential: Option<PotentialSpecJson>,
    pub d: usize,
    /// Plane-wave truncation `‖s‖∞ ≤ S` for band sweeps and Fermi surfaces.
    #[serde(rename = "S")]
    pub s: usize,
    /// k-points per axis of the band-sweep grid (endpoints ±π included).
    pub grid: usize,
    pub l_max: usize,
    pub e_max: f64,
    pub taus: Vec<f64>,
    pub cells_per_zone: usize,
    pub sigmas: Vec<f64>,
    pub direction: [f64; 2],
    pub y: [f64; 2],
    pub sigma: f64,
    pub delta: f64,
    pub perturbation_eps: f64,
    pub scan_n: usize,
    pub pairs: Vec<(Exponent, Exponent)>,
    pub random_pairs: usize,
    pub resolvent: ResolventConfig,
    pub assumptions: AssumptionConfig,
    pub formats: Vec<Format>,
    pub seed: u64,
    pub output: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

pub fn default_sigmas() -> Vec<f64> {
    (0..12).map(|i| 5.0 * 20f64.powf(i as f64 / 11.0)).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            potential: None,
            d: 2,
            s: 4,
            grid: 17,
            l_max: 6,
            e_max: 400.0,
            taus: vec![5.0, 15.0, 30.0, 40.0],
            cells_per_zone: 64,
            sigmas: default_sigmas(),
            direction: [1.0, 0.3],
            y: [0.2, 0.1],
            sigma: 50.0,
            delta: 0.1,
            perturbation_eps: 3.0,
            scan_n: 100,
            pairs: Vec::new(),
            random_pairs: 8,
            resolvent: ResolventConfig::default(),
            assumptions: AssumptionConfig::default(),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
            seed: 0,
            output: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Params {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Potential JSON file, or `builtin:NAME` (zero, sin2cos, sin2cos-strong, separable-cos).
    #[arg(long)]
    pub potential: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Formats to emit (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the eigen-data cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Plane-wave truncation S.
    #[arg(long = "S", visible_alias = "s-max")]
    pub s: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub e_max: Option<f64>,
    /// Fermi levels (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tau: Option<Vec<f64>>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub nk: Option<usize>,
    #[arg(long)]
    pub theta_points: Option<usize>,
    #[arg(long)]
    pub tau_points: Option<usize>,
    /// Distances |x − y| of the decay scan (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Direction v of x − y, as `v1,v2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub direction: Option<Vec<f64>>,
    /// Base point y, as `y1,y2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Exponent pair to classify, as `p,q` (repeatable; `inf` allowed).
    #[arg(long)]
    pub pair: Vec<String>,
}

fn potential_dim(p: &PotentialSpecJson) -> usize {
    match p {
        PotentialSpecJson::Fourier { d, .. } => *d,
        PotentialSpecJson::Separable { parts, .. } => parts.len(),
    }
}

fn pair_of(name: &str, v: &[f64]) -> Result<[f64; 2], Failure> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(invalid(format!(
            "{name} needs two comma-separated values, got {}",
            v.len()
        ))),
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn builtin_potential(name: &str) -> Result<Option<PotentialSpecJson>, Failure> {
    use bloch_lap::hill1d::Potential1D;
    use bloch_lap::planewave::PotentialSpec;
    let cos_part =
        |mu: f64| Potential1D::from_fn(64, |x| mu + 0.1 * (2.0 * std::f64::consts::PI * x).cos());
    let spec = match name {
        "zero" => return Ok(None),
        "sin2cos" => PotentialSpec::sin2_cos(0.2),
        "sin2cos-strong" => PotentialSpec::sin2_cos(2.0),
        "separable-cos" => {
            let p = cos_part(0.0).map_err(|e| Failure::Internal(e.into()))?;
            PotentialSpec::separable(vec![p.clone(), p]).map_err(|e| Failure::Internal(e.into()))?
        }
        other => return Err(invalid(format!("unknown builtin potential '{other}'"))),
    };
    Ok(Some(spec.to_json_value()))
}

/// The `potential` field of a manifest or config may also be a file path
/// relative to the config; resolve it before deserializing the rest.
fn resolve_potential_path(v: &mut serde_json::Value, base: &Path) -> Result<(), Failure> {
    if let Some(serde_json::Value::String(p)) = v.get("potential").cloned() {
        let loaded = if let Some(name) = p.strip_prefix("builtin:") {
            serde_json::to_value(builtin_potential(name)?).expect("serializable")
        } else {
            let path = base.join(&p);
            read_json::<serde_json::Value>(&path)?
        };
        v["potential"] = loaded;
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let mut v: serde_json::Value = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_potential_path(&mut v, base)?;
    serde_json::from_value(v).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Config file (if any), then flags, then validation.
pub fn resolve(command: &str, p: &Params) -> Result<RunConfig, Failure> {
    let mut c = match &p.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(cmd) = &c.command {
        if cmd != command {
            return Err(invalid(format!("config is for '{cmd}', not '{command}'")));
        }
    }
    c.command = Some(command.to_string());
    if let Some(src) = &p.potential {
        c.potential = match src.strip_prefix("builtin:") {
            Some(name) => builtin_potential(name)?,
            None => Some(read_json(Path::new(src))?),
        };
    }
    macro_rules! set {
        ($flag:ident => $($field:ident).+) => {
            if let Some(v) = p.$flag.clone() {
                c.$($field).+ = v;
            }
        };
    }
    if p.d.is_none() {
        if let Some(pd) = c.potential.as_ref().map(potential_dim) {
            c.d = pd;
        }
    }
    set!(output => output);
    set!(format => formats);
    set!(seed => seed);
    set!(d => d);
    set!(s => s);
    set!(grid => grid);
    set!(l_max => l_max);
    set!(e_max => e_max);
    set!(tau => taus);
    set!(cells => cells_per_zone);
    set!(lambda => resolvent.lambda);
    set!(rho => resolvent.rho);
    set!(eps => resolvent.eps);
    set!(nk => resolvent.nk);
    set!(theta_points => resolvent.theta_points);
    set!(tau_points => resolvent.tau_points);
    set!(sigmas => sigmas);
    set!(sigma => sigma);
    set!(delta => delta);
    if let Some(dir) = &p.cache_dir {
        c.cache_dir = Some(dir.clone());
    }
    if let Some(v) = &p.direction {
        c.direction = pair_of("direction", v)?;
    }
    if let Some(v) = &p.y {
        c.y = pair_of("y", v)?;
    }
    for s in &p.pair {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| invalid(format!("pair '{s}' must be 'p,q'")))?;
        let pa = a
            .trim()
            .parse::<Exponent>()
            .map_err(|e| invalid(format!("pair '{s}': {e}")))?;
        let pb = b
            .trim()
            .parse::<Exponent>()
            .map_err(|e| invalid(format!("pair '{s}': {e}")))?;
        c.pairs.push((pa, pb));
    }
    if c.cache_dir.is_none() {
        c.cache_dir = std::env::var_os("BLOCHLAP_CACHE_DIR").map(PathBuf::from);
    }
    c.validate()?;
    Ok(c)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.d == 1 || self.d == 2) {
            return Err(invalid(format!("d = {} not supported (1 or 2)", self.d)));
        }
        if let Some(p) = &self.potential {
            let d = potential_dim(p);
            if d != self.d {
                return Err(invalid(format!(
                    "potential has dimension {d} but d = {}",
                    self.d
                )));
            }
        }
        if self.s == 0 {
            return Err(invalid("S must be ≥ 1"));
        }
        if self.grid < 2 {
            return Err(invalid("grid must be ≥ 2"));
        }
        if self.l_max == 0 || !(self.e_max > 0.0) {
            return Err(invalid("l_max and e_max must be positive"));
        }
        if self.cells_per_zone < 4 {
            return Err(invalid("cells_per_zone must be ≥ 4"));
        }
        if self.sigmas.len() < 2 || self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("sigmas needs at least two positive distances"));
        }
        if self.direction[0].hypot(self.direction[1]) == 0.0 {
            return Err(invalid("direction must be nonzero"));
        }
        if !(self.sigma >= 1.0) {
            return Err(invalid("sigma must be ≥ 1"));
        }
        if !(self.delta > 0.0) || !(self.perturbation_eps > 0.0) {
            return Err(invalid("delta and perturbation_eps must be positive"));
        }
        if self.formats.is_empty() {
            return Err(invalid("at least one output format is required"));
        }
        self.resolvent
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    pub fn unit_direction(&self) -> [f64; 2] {
        let n = self.direction[0].hypot(self.direction[1]);
        [self.direction[0] / n, self.direction[1] / n]
    }
}
