use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hdrcal::report::commands;
use hdrcal::report::config::{Algorithm, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hdrcal", version, about = "Calibrated minimal-exposure linear HDR imaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the CRF and its linear window from one calibration shot.
    Calibrate(Common),
    /// Plan, capture and fuse the test target.
    Recover(Common),
    /// Run every algorithm on the comparison ladder.
    Compare(Common),
    /// Repeat recovery over the configured illumination factors.
    Sweep(Common),
    /// Write raw captures of the test target.
    SimulateCapture(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "HDRCAL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "illum-factor")]
    illum_factor: Option<f64>,
    /// proposed, slope_weight, hat, snr or gaussian_time.
    #[arg(long)]
    algo: Option<Algorithm>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, hdrcal::Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(f) = self.illum_factor {
            cfg.illumination_factor = f;
        }
        if let Some(a) = self.algo {
            cfg.algorithm = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), hdrcal::Error> {
    match cli.command {
        Command::Calibrate(c) => {
            let run = commands::cmd_calibrate(&c.load()?)?;
            let lr = &run.calibration.linear_range;
            println!("calibration exposure: {:.4e} s", run.exposure);
            println!("first unsaturated patch: {} dB", lr.first_unsaturated_db);
            println!("v_max = {:.1}, v_min = {:.1}, LDR_E = {:.2} dB", lr.v_max, lr.v_min, lr.ldr_e);
        }
        Command::Recover(c) => {
            let cfg = c.load()?;
            let run = commands::cmd_recover(&cfg)?;
            let name = cfg.algorithm.name();
            let times: Vec<String> = run.plan.exposure_times.iter().map(|t| format!("{t:.3e}")).collect();
            println!("exposures: [{}] s", times.join(", "));
            println!("max |error|: {:.3} dB", run.report.max_abs_error(name).unwrap_or(f64::NAN));
        }
        Command::Compare(c) => {
            let report = commands::cmd_compare(&c.load()?)?;
            for (name, _) in &report.measured {
                println!("{name:>16}: max |error| {:.3} dB", report.max_abs_error(name).unwrap_or(f64::NAN));
            }
        }
        Command::Sweep(c) => {
            let report = commands::cmd_sweep(&c.load()?)?;
            for r in &report.rows {
                match r.max_abs_error {
                    Some(e) => println!("factor {:<10} {:<12} max |error| {e:.3} dB", r.factor, r.status.as_str()),
                    None => println!("factor {:<10} {:<12} {}", r.factor, r.status.as_str(), r.message),
                }
            }
        }
        Command::SimulateCapture(c) => {
            for path in commands::cmd_simulate_capture(&c.load()?)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hdrcal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
