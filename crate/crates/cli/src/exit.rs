use std::fmt;

use sidefit::experiments::ExperimentError;
use sidefit::sideinfo::SideInfoError;
use sidefit::LearnError;

pub const OTHER: u8 = 1;
pub const INFEASIBLE: u8 = 2;
pub const SOLVER: u8 = 3;
pub const CONFIG: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Experiment(ExperimentError),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Solver(m) => f.write_str(m),
            CliError::Experiment(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Experiment(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn side_info_code(e: &SideInfoError) -> u8 {
    match e {
        SideInfoError::Contradictory(_) => INFEASIBLE,
        _ => CONFIG,
    }
}

fn learn_code(e: &LearnError) -> u8 {
    match e {
        LearnError::Contradictory { .. }
        | LearnError::Infeasible { .. }
        | LearnError::Certificate { .. }
        | LearnError::DeltaViolation { .. } => INFEASIBLE,
        LearnError::Solver(_) | LearnError::Unbounded => SOLVER,
        LearnError::SideInfo(s) => side_info_code(s),
        LearnError::Config(_) | LearnError::Set(_) | LearnError::Poly(_) => CONFIG,
        LearnError::Program(_) | LearnError::Sos(_) => OTHER,
    }
}

/// 0 success, 2 infeasible side information, 3 solver failure, 4 bad configuration.
pub fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Config(_) => CONFIG,
        CliError::Solver(_) => SOLVER,
        CliError::Io(_) => OTHER,
        CliError::Experiment(e) => match e.root() {
            ExperimentError::Config(_) | ExperimentError::Json(_) | ExperimentError::Set(_) => CONFIG,
            ExperimentError::Learn(l) => learn_code(l),
            ExperimentError::SideInfo(s) => side_info_code(s),
            ExperimentError::NoAdmissibleControl => SOLVER,
            ExperimentError::Dynamics(_) | ExperimentError::Io(_) | ExperimentError::Stage { .. } => OTHER,
        },
    }
}
