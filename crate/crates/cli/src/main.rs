mod commands;
mod config;
mod error;
mod files;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{
    CalibrateArgs, Common, DetectArgs, FitSurfaceArgs, PipelineArgs, RegisterArgs, SimulateArgs, TriangulateArgs,
};
use error::CliError;

/// Affine stereo-microscope calibration, reconstruction and registration.
#[derive(Debug, Parser)]
#[command(name = "affine-stereo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its data files.
    Simulate(SimulateArgs),
    /// Extract one sub-pixel keypoint per heatmap.
    Detect(DetectArgs),
    /// Calibrate the camera pair from 3D-2D correspondences.
    Calibrate(CalibrateArgs),
    /// Filter stereo matches and triangulate them into a point cloud.
    Triangulate(TriangulateArgs),
    /// Fit a robust bicubic surface to a point cloud.
    FitSurface(FitSurfaceArgs),
    /// Register reconstructed landmarks to robot coordinates.
    Register(RegisterArgs),
    /// Run every stage on a simulated scene and write a summary.
    Pipeline(PipelineArgs),
}

fn report<T: Serialize>(r: Result<T, CliError>) -> Result<String, CliError> {
    r.map(|v| serde_json::to_string(&v).expect("reports serialise"))
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let common = &cli.common;
    match &cli.command {
        Command::Simulate(a) => report(commands::simulate(a, common)),
        Command::Detect(a) => report(commands::detect(a)),
        Command::Calibrate(a) => report(commands::calibrate(a, common)),
        Command::Triangulate(a) => report(commands::triangulate(a, common)),
        Command::FitSurface(a) => report(commands::fit_surface_cmd(a, common)),
        Command::Register(a) => report(commands::register_cmd(a, common)),
        Command::Pipeline(a) => report(commands::pipeline(a, common)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first: Vec<&str> = text
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let err = CliError::Input(first.join(" ").trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(line) => {
            let _ = writeln!(std::io::stdout(), "{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
