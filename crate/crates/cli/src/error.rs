use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::NotConverged(_) => exit::NOT_CONVERGED,
            CliError::Infeasible(_) => exit::INFEASIBLE,
        }
    }
}

impl From<isingrisk::Error> for CliError {
    fn from(e: isingrisk::Error) -> Self {
        match e {
            isingrisk::Error::Infeasible { pairs } => {
                let mut msg = format!("{} pair(s) cannot be realized by binary variables:", pairs.len());
                for (i, j, m2) in pairs {
                    msg.push_str(&format!("\n  ({i}, {j}): implied M2 = {m2}"));
                }
                CliError::Infeasible(msg)
            }
            isingrisk::Error::Singular(m) => CliError::NotConverged(format!("singular system: {m}")),
            other => CliError::Input(other.to_string()),
        }
    }
}
