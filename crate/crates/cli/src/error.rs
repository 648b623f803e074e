use affine_stereo::calibration::CalibrationError;
use affine_stereo::io::FormatError;
use affine_stereo::keypoints::KeypointError;
use affine_stereo::registration::RegistrationError;
use affine_stereo::sim::SimError;
use affine_stereo::stereo::StereoError;
use affine_stereo::surface::SurfaceError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input.
    #[error("{0}")]
    Input(String),
    /// A numerical stage failed (degenerate geometry, singular system).
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
            CliError::NonConvergence(_) => "non_convergence",
        }
    }

    /// One-line JSON report for stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error line serialises")
    }
}

pub fn input(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::DidNotConverge { .. } => CliError::NonConvergence(e.to_string()),
            CalibrationError::InvalidInput(_) | CalibrationError::TooFewPoints { .. } => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<StereoError> for CliError {
    fn from(e: StereoError) -> Self {
        match e {
            StereoError::InvalidInput(_) => CliError::Input(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SurfaceError> for CliError {
    fn from(e: SurfaceError) -> Self {
        match e {
            SurfaceError::InvalidConfig(_) | SurfaceError::InvalidInput(_) | SurfaceError::TooFewPoints { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::CollinearPoints => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<KeypointError> for CliError {
    fn from(e: KeypointError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Stereo(e) => e.into(),
            SimError::Calibration(e) => e.into(),
            SimError::InvalidConfig(_) => CliError::Input(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let nc: CliError = CalibrationError::DidNotConverge {
            iterations: 3,
            gradient_norm: 1.0,
        }
        .into();
        assert_eq!(nc.exit_code(), 4);
        let deg: CliError = CalibrationError::DegenerateConfiguration.into();
        assert_eq!(deg.exit_code(), 3);
        let bad: CliError = SimError::InvalidConfig("x".into()).into();
        assert_eq!(bad.exit_code(), 2);
    }

    #[test]
    fn json_line_is_single_line() {
        let e = CliError::Numerical("line one\nline two".into());
        let line = e.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["code"], 3);
        assert_eq!(v["error"], "numerical");
    }
}
