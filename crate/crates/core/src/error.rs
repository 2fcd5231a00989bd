use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    // hill1d
    #[error("band {band} not resolved below E = {e_max}; refine the energy scan")]
    BandNotResolved { band: usize, e_max: f64 },
    #[error("degenerate band edge at E = {energy} (multiplicity {multiplicity})")]
    DegenerateEdge { energy: f64, multiplicity: usize },
    #[error("|D'(E)| = {dd:e} too small at E = {energy}; k is at a band edge")]
    BandEdgeSingularity { energy: f64, dd: f64 },
    #[error("energy {energy} outside band 1 range [{lo}, {hi})")]
    OutOfBand { energy: f64, lo: f64, hi: f64 },

    // planewave
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error("ambiguous labeling at k = {k:?}: top two |c_s| differ by {gap:e}")]
    AmbiguousLabeling { k: Vec<f64>, gap: f64 },
    #[error("quasimomentum {kappa:?} outside the sampled region")]
    OutsideSampledRegion { kappa: Vec<f64> },

    // fermi
    #[error("irregular frequency τ = {tau}: |∇Λ| = {gradnorm:e} at κ = {kappa:?}")]
    IrregularFrequency {
        tau: f64,
        kappa: Vec<f64>,
        gradnorm: f64,
    },
    #[error("frequency {lambda} outside the admissible window ({lo}, {hi})")]
    FrequencyOutsideWindow { lambda: f64, lo: f64, hi: f64 },

    // oscillatory
    #[error("density grid does not match the cutoff window: {0}")]
    WindowMismatch(String),
    #[error("quadratic form is singular (|det A| = {0:e})")]
    SingularForm(f64),
    #[error("oscillatory quadrature did not converge (last change {0:e})")]
    QuadratureNotConverged(f64),
    #[error("no resonant point found for direction {direction:?}")]
    NoResonantPoint { direction: Vec<f64> },
    #[error("curvature vanishes at κ = {kappa:?}")]
    CurvatureVanishes { kappa: Vec<f64> },
    #[error("Hankel function evaluated at the origin")]
    OriginSingularity,

    // resolvent
    #[error("ε = 0 is not allowed here; use the limiting operations")]
    EpsilonZero,
    #[error("truncation tail {tail:e} exceeds 10% of the kernel value {value:e}")]
    TailDominant { tail: f64, value: f64 },

    // checks
    #[error("level set K_± is empty for λ = {lambda}, δ = {delta}")]
    EmptyLevelSet { lambda: f64, delta: f64 },
}
