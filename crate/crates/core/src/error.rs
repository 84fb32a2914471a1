use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dispersive formula invalid: |omega_q - omega_r| = {detuning:.6e} rad/s is below tolerance {tolerance:.6e} rad/s")]
    DegenerateDetuning { detuning: f64, tolerance: f64 },

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("tone {index} at {frequency} Hz violates Nyquist limit of {nyquist} Hz")]
    Nyquist {
        index: usize,
        frequency: f64,
        nyquist: f64,
    },

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("heterodyne detection unsupported: trace carrier {carrier} Hz, LO {lo} Hz")]
    HeterodyneUnsupported { carrier: f64, lo: f64 },

    #[error("unknown device id {0}")]
    UnknownDevice(u32),

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("integrator step rejected: dt * rate = {product:.3} exceeds 0.1")]
    StepTooLarge { product: f64 },

    #[error("drive frequency {frequency} Hz outside simulated band ({low} Hz, {high} Hz)")]
    DriveOutOfBand { frequency: f64, low: f64, high: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("config hash mismatch: have {existing}, got {incoming}")]
    ConfigHashMismatch { existing: String, incoming: String },

    #[error("trace format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::UnknownDevice(_)
            | Error::LengthMismatch { .. }
            | Error::ConfigHashMismatch { .. } => 2,
            _ => 1,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
