use geoflow::continuation::ContinuationError;
use geoflow::geometry::GeometryError;
use geoflow::network::NetworkError;
use geoflow::powerflow::PowerFlowError;
use geoflow::sweep::SweepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable files, malformed cases.
    #[error("{0}")]
    Input(String),
    /// The numerics failed (non-convergence, singular Jacobian, ...).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Input(format!("case: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PowerFlowError> for CliError {
    fn from(e: PowerFlowError) -> Self {
        CliError::Numerical(format!("power flow: {e}"))
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Numerical(format!("geometry: {e}"))
    }
}

impl From<ContinuationError> for CliError {
    fn from(e: ContinuationError) -> Self {
        CliError::Numerical(format!("continuation: {e}"))
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Geometry(g) => g.into(),
            SweepError::Continuation(c) => c.into(),
            SweepError::NoCalibrationNose | SweepError::NoCpfData => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
