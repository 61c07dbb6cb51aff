use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid spectral band: {0}")]
    InvalidBand(String),

    #[error("joint spectral intensity is zero everywhere on the grid")]
    ZeroIntensity,

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("g2 is undefined: `{count}` is zero")]
    UndefinedRatio { count: &'static str },

    #[error("no root in [{lo:e}, {hi:e}] for target {target:e}")]
    NoRoot { target: f64, lo: f64, hi: f64 },

    #[error("discrimination efficiency diverges for a threshold detector (k = 0)")]
    Divergent,

    #[error("tag stream is not time-ordered: {time} ps after {previous} ps")]
    Unsorted { previous: u64, time: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("truncation bound {bound:e} exceeds tolerance {tolerance:e}")]
    Truncation { bound: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("{value} is outside [0, 1]"),
        });
    }
    Ok(())
}

pub(crate) fn check_non_negative(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("{value} must be finite and non-negative"),
        });
    }
    Ok(())
}
