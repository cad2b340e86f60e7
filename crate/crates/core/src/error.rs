use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("damping rate must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("oscillator frequency must be nonnegative, got {0}")]
    NegativeFrequency(f64),
    #[error("mean thermal occupation must be nonnegative, got {0}")]
    NegativeOccupation(f64),
    #[error("temperature ratio hbar*omega0/(k_B T) must be positive, got {0}")]
    NonPositiveTemperatureRatio(f64),
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("truncation needs N = {required}, above the cap {cap}")]
    TruncationExceeded { required: usize, cap: usize },
    #[error("two-point state needs n1 >= n_th (n1 = {n1}, n_th = {n_th})")]
    TwoPointOutOfRange { n1: usize, n_th: f64 },
    #[error("superposition weight p = {0} must be < 1")]
    SuperpositionWeight(f64),
    #[error("probability vector invalid: {0}")]
    InvalidDistribution(String),
    #[error("generator needs N >= 2, got {0}")]
    GeneratorTooSmall(usize),
    #[error("coherence band offset must be >= 1 (use the population generator for s = 0)")]
    ZeroBand,
    #[error("coupling product vanishes at n = {0}; chain cannot be symmetrized")]
    DegenerateChain(usize),
    #[error("spectral machinery needs n_th > 0")]
    ZeroTemperatureSpectrum,
    #[error("state length {state} does not match generator length {generator}")]
    LengthMismatch { state: usize, generator: usize },
    #[error("band offset {s} exceeds the configured cap {cap}")]
    BandCapExceeded { s: usize, cap: usize },
    #[error("ODE step size underflow at t = {0}")]
    StepSizeUnderflow(f64),
    #[error("density matrix has eigenvalue {0} below -1e-10")]
    NotPositive(f64),
    #[error("rate fit has only {0} usable samples (need 5)")]
    TooFewSamples(usize),
    #[error("rate fit is unreliable (r^2 = {0})")]
    PoorFit(f64),
    #[error("time grids differ")]
    GridMismatch,
    #[error("state has divergent (truncation-dependent) moments")]
    DivergentMoments,
    #[error("no nonnegative distribution on the given support matches the first {0} thermal moments")]
    InfeasibleSupport(usize),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl Error {
    /// Errors caused by the caller's parameters rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateChain(_)
                | Error::StepSizeUnderflow(_)
                | Error::NotPositive(_)
                | Error::TooFewSamples(_)
                | Error::PoorFit(_)
                | Error::GridMismatch
                | Error::DivergentMoments
        )
    }
}
