use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use vortexmag::{Error, ErrorKind};

mod commands;
mod config;
mod report;

use commands::{Context, Crystal, OdmrRequest, SimulateRequest};
use config::RunConfig;

/// NV-center vector magnetometry with azimuthally polarized excitation.
#[derive(Debug, Parser)]
#[command(name = "vortexmag", version)]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for fit starts, noise and bootstrap (overrides fit.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct CrystalArgs {
    /// Label fitted axes against the (111) tetrahedral set.
    #[arg(long, value_parser = ["111"])]
    crystal: Option<String>,
    /// Azimuth of the first in-plane crystal axis, degrees.
    #[arg(long, default_value_t = 0.0, requires = "crystal")]
    crystal_azimuth: f64,
}

impl CrystalArgs {
    fn get(&self) -> Option<Crystal> {
        self.crystal.as_ref().map(|_| Crystal {
            azimuth_deg: self.crystal_azimuth,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render excitation patterns to CSV and PGM.
    SimulatePattern {
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<f64>,
        /// JSON file with a list of labeled orientations.
        #[arg(long, conflicts_with_all = ["theta", "phi"])]
        orientations: Option<PathBuf>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        background: Option<f64>,
        /// Add Poisson noise seeded by --seed.
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value = "pattern")]
        name: String,
        #[arg(long, default_value_t = 16)]
        bits: u8,
    },
    /// Fit the NV axis orientation to a scan image CSV.
    FitOrientation {
        image: PathBuf,
        #[command(flatten)]
        crystal: CrystalArgs,
        #[arg(long)]
        n_starts: Option<usize>,
    },
    /// Fit an ODMR spectrum and invert it for |B| and the cone angle.
    Odmr {
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long, conflicts_with = "spectrum")]
        field_gauss: Option<f64>,
        #[arg(long, conflicts_with = "spectrum")]
        alpha_deg: Option<f64>,
        #[arg(long)]
        linewidth: Option<f64>,
        #[arg(long)]
        depth: Option<f64>,
        /// Gaussian noise sigma for simulated spectra.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Solve for the field direction from cone constraints in a JSON file.
    Reconstruct { constraints: PathBuf },
    /// Fit every scan and spectrum in two directories, pair them by file
    /// stem and reconstruct the field.
    Pipeline {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        spectra: PathBuf,
        #[command(flatten)]
        crystal: CrystalArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulatePattern { .. } => "simulate-pattern",
            Command::FitOrientation { .. } => "fit-orientation",
            Command::Odmr { .. } => "odmr",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn exit_code(err: &Error) -> ExitCode {
    match err.kind() {
        ErrorKind::Validation => ExitCode::from(2),
        ErrorKind::Numerical => ExitCode::from(3),
        ErrorKind::Io => ExitCode::from(4),
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    exit_code(err)
}

fn emit(ctx: &Context, command: &str, result: &Value) -> Result<(), Error> {
    let doc = ctx.envelope(command).wrap(result);
    let text = serde_json::to_string_pretty(&doc).expect("reports serialize");
    // a closed pipe downstream is not an error of ours
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(out) = &ctx.out {
        std::fs::create_dir_all(out)?;
        report::write_json(&out.join(format!("{command}.json")), &doc)?;
    }
    Ok(())
}

fn run(cli: Cli) -> ExitCode {
    let mut config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(seed) = cli.seed {
        config.fit.seed = seed;
    }
    match &cli.command {
        Command::FitOrientation { n_starts: Some(n), .. } => config.fit.n_starts = *n,
        Command::Odmr { linewidth, depth, .. } => {
            if let Some(w) = linewidth {
                config.odmr.linewidth_mhz = *w;
            }
            if let Some(d) = depth {
                config.odmr.contrast_depth = *d;
            }
        }
        _ => {}
    }
    if let Err(e) = config.validate() {
        return fail(&e);
    }
    if let Some(out) = &cli.out {
        if let Err(e) = std::fs::create_dir_all(out) {
            return fail(&e.into());
        }
    }
    let ctx = Context {
        config_hash: config.hash(),
        seed: config.fit.seed,
        config,
        out: cli.out.clone(),
    };
    let command = cli.command.name();

    let outcome = match cli.command {
        Command::SimulatePattern {
            theta,
            phi,
            orientations,
            amplitude,
            background,
            noise,
            name,
            bits,
        } => commands::simulate_patterns(
            &ctx,
            &SimulateRequest {
                theta_deg: theta,
                phi_deg: phi,
                orientations,
                amplitude,
                background,
                noise,
                name,
                bits,
            },
        )
        .map(|v| (v, None)),
        Command::FitOrientation { image, crystal, .. } => {
            commands::fit_orientation_cmd(&ctx, &image, crystal.get()).map(|v| (v, None))
        }
        Command::Odmr {
            spectrum,
            field_gauss,
            alpha_deg,
            noise,
            ..
        } => commands::odmr_cmd(
            &ctx,
            &OdmrRequest {
                spectrum,
                field_gauss,
                alpha_deg,
                noise,
            },
        )
        .map(|v| (v, None)),
        Command::Reconstruct { constraints } => commands::reconstruct_cmd(&ctx, &constraints).map(|v| (v, None)),
        Command::Pipeline { scans, spectra, crystal } => {
            commands::pipeline_cmd(&ctx, &scans, &spectra, crystal.get()).map(|o| (o.report, o.error))
        }
    };

    match outcome {
        Ok((value, partial_error)) => {
            if let Err(e) = emit(&ctx, command, &value) {
                return fail(&e);
            }
            match partial_error {
                Some(e) => fail(&e),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    run(cli)
}
