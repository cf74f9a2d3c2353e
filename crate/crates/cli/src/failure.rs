use std::fmt;
use std::process::ExitCode;

/// An error together with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub usage: bool,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            usage: true,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            usage: false,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(if self.usage { 2 } else { 1 })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<beatrack::Error> for Failure {
    fn from(e: beatrack::Error) -> Self {
        use beatrack::Error::*;
        let usage = matches!(e, Config(_) | Audio(_) | Parse { .. });
        Self {
            usage,
            message: e.to_string(),
        }
    }
}

impl From<beatrack_tensor::TensorError> for Failure {
    fn from(e: beatrack_tensor::TensorError) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
