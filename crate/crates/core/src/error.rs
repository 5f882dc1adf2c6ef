use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("degenerate trap: omega_beta vanishes (delta = 0 and U_dc = 0)")]
    DegenerateTrap,
    #[error("field too close to the anti-crossing: |Delta| = {delta:e} rad/s is below the floor {floor:e}")]
    AntiCrossing { delta: f64, floor: f64 },
    #[error("imaginary {mode} frequency: radicand {radicand:e} is negative")]
    ImaginaryFrequency { mode: &'static str, radicand: f64 },
    #[error("no root in bracket [{lo:e}, {hi:e}]")]
    NoRootInBracket { lo: f64, hi: f64 },
    #[error("bracket [{lo:e}, {hi:e}] is not on the requested dispersive branch")]
    BracketOffBranch { lo: f64, hi: f64 },
    #[error("quadrature did not converge: successive estimates differ by {relative:e}")]
    QuadratureNotConverged { relative: f64 },
    #[error("singular factorization denominator at tau = {tau:e}")]
    SingularFactorization { tau: f64 },
    #[error("echo kernel pole at tau = {tau:e}")]
    EchoPole { tau: f64 },
    #[error("square-root branch lost at tau = {tau:e}")]
    BranchTracking { tau: f64 },
    #[error("beta mode unstable: freq {freq:e} <= 2 chi {chi:e}")]
    UnstableBeta { freq: f64, chi: f64 },
}
