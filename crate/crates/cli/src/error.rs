use std::fmt;

/// Domain error reported as `error[<category>]: <message>` with exit status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {one_line}", self.category)
    }
}

pub trait Context<T> {
    fn cat(self, category: &'static str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn cat(self, category: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(category, e.to_string()))
    }
}
