use alloc::string::String;
use core::fmt;

/// Errors from the model, data and training APIs. Shape errors inside tensor
/// operations are programming errors and panic instead.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// An argument broke an operation's precondition.
    Invalid(String),
    /// A gradient contained NaN or infinity.
    NonFiniteGradient { tensor: String },
    /// A parameter became NaN or infinite after an update.
    NonFiniteParameter { tensor: String },
    /// The training cost was not finite.
    NonFiniteCost { epoch: usize, batch: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the arithmetic rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::Invalid(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFiniteGradient { tensor } => write!(f, "non-finite gradient for {tensor}"),
            Error::NonFiniteParameter { tensor } => write!(f, "non-finite value in parameter {tensor}"),
            Error::NonFiniteCost { epoch, batch } => {
                write!(f, "non-finite cost at epoch {epoch}, batch {batch}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
