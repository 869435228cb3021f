use alloc::string::String;
use core::fmt;

use crate::model::ClassId;

/// Errors raised by the core numerics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix did not have the expected length.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A label or class index is outside `0..C`.
    ClassOutOfRange { class: ClassId, classes: usize },
    /// A class has zero count and no smoothing was requested.
    UnobservedClass(ClassId),
    /// A class carries all of the frequency mass, so `f(c)^α` cannot be tuned.
    DegenerateFrequency(ClassId),
    /// More negatives were requested than there are classes left to draw from.
    TooManyNegatives { requested: usize, available: usize },
    /// The gradient for a class contains NaN or infinity.
    NonFiniteGradient { class: ClassId },
    /// Any other invalid setting.
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::ClassOutOfRange { class, classes } => {
                write!(f, "class {} out of range for {classes} classes", class.0)
            }
            Error::UnobservedClass(c) => write!(
                f,
                "class {} never occurs and smoothing is 0; use a positive smoothing count",
                c.0
            ),
            Error::DegenerateFrequency(c) => {
                write!(f, "class {} has frequency 1; need at least two classes in use", c.0)
            }
            Error::TooManyNegatives {
                requested,
                available,
            } => write!(
                f,
                "requested {requested} expected negatives but only {available} classes are available"
            ),
            Error::NonFiniteGradient { class } => {
                write!(f, "non-finite gradient for class {}", class.0)
            }
            Error::InvalidConfig(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
