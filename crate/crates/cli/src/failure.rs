use nafe_core::Error;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// An error message with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: DATA, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: NUMERICAL, message: message.into() }
    }

    /// Errors raised while reading or checking user data.
    pub fn from_data_error(e: Error) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::data(e.to_string())
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_numerical() => NUMERICAL,
            Error::InvalidConfig(_) | Error::Domain(_) | Error::Dimension { .. } => USAGE,
            _ => DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}
