use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Invalid flags or config; nothing has been written.
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        write!(f, "error[{kind}]: {}", crate::config::one_line(msg))
    }
}

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn runtime_err(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(tcheby::Error, std::io::Error, csv::Error, serde_json::Error);
