//! Command-line surface: scenario runs, calibration, custom spectra, and the
//! Monte Carlo cross-check.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::calibrate::calibrate;
use crate::config::{parse_config, parse_targets, RunConfig};
use crate::error::{Error, Result};
use crate::output::emit_results;
use crate::scenarios::{
    mc_crosscheck, run_array_sweep, run_detuning_sweep, run_polarization_sweep, run_power_sweep,
    run_two_channel, ScenarioResult, SqueezeModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const SCENARIOS: &[&str] = &[
    "two-channel",
    "detuning-sweep",
    "power-sweep",
    "polarization-sweep",
    "array-sweep",
];

#[derive(Debug, Parser)]
#[command(name = "flysq", version, about = "Multi-channel squeezed-light simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one of the bench scenarios.
    Run {
        /// Scenario name (see --help for the list).
        scenario: String,
        #[arg(short, long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit the free model constants to a target file.
    Calibrate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        targets: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Noise spectrum of one configured channel.
    Spectrum {
        #[arg(short, long)]
        config: PathBuf,
        /// Channel id from the config file.
        #[arg(long)]
        channel: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo validation of the analytic spin spectra.
    Crosscheck {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        trajectories: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: &Path, seed: Option<u64>, output: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = parse_config(&read_to_string(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("FLYSQ_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                // ignore the error if a pool is already installed
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        } else {
            eprintln!("warning: ignoring unparsable FLYSQ_THREADS={v}");
        }
    }
}

fn run_scenario(name: &str, model: &SqueezeModel, grid: &[f64]) -> Result<ScenarioResult> {
    let powers: Vec<f64> = (0..=30).map(|i| 0.5e-3 * i as f64).collect();
    match name {
        "two-channel" | "two_channel" => run_two_channel(model, grid),
        "detuning-sweep" | "detuning_sweep" => run_detuning_sweep(model, 81),
        "power-sweep" | "power_sweep" => run_power_sweep(model, &powers),
        "polarization-sweep" | "polarization_sweep" => run_polarization_sweep(model, 19),
        "array-sweep" | "array_sweep" => run_array_sweep(model, grid),
        other => Err(Error::config(format!(
            "unknown scenario `{other}`; valid names: {}",
            SCENARIOS.join(", ")
        ))),
    }
}

fn print_summaries(res: &ScenarioResult) {
    println!("scenario: {}", res.scenario);
    for run in &res.runs {
        for s in &run.summaries {
            println!(
                "  {:<18} {:<8} {:>8.3} dB at {:.0} kHz (angle {:.3} rad)",
                run.label,
                s.channel_id,
                s.v_min_db,
                res.reference_freq_hz / 1e3,
                s.angle_rad
            );
        }
    }
    for curve in &res.curves {
        let best = curve
            .v_min_db
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        println!(
            "  curve {:<24} {} points, best {:.3} dB",
            curve.name,
            curve.x.len(),
            best
        );
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            config,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed, output.as_deref())?;
            let model = cfg.model();
            let grid = cfg.spectrum.frequencies();
            let res = run_scenario(&scenario, &model, &grid)?;
            let dir = Path::new(&cfg.output_dir).join(res.scenario.clone());
            let files = emit_results(std::slice::from_ref(&res), &cfg, &dir)?;
            print_summaries(&res);
            println!("wrote {} files to {}", files.len(), dir.display());
            Ok(())
        }
        Command::Calibrate {
            config,
            targets,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed, output.as_deref())?;
            let set = parse_targets(&read_to_string(&targets)?)?;
            let outcome = calibrate(&cfg.model(), &set)?;
            println!("calibration finished: rms residual {:.4} dB", outcome.rms_db);
            println!(
                "  iterations {}, evaluations {}, converged: {}",
                outcome.iterations, outcome.evaluations, outcome.converged
            );
            for (name, value) in &outcome.values {
                println!("  {name:<22} = {value:.6e}");
            }
            for (name, err) in &outcome.errors_db {
                println!("  target {name:<28} error {err:+.4} dB");
            }
            if let Some(c) = outcome.ceiling_db {
                println!("  grid max squeezing {c:.3} dB");
            }
            if let Some(w) = &outcome.warning {
                eprintln!("warning: {w}");
            }
            let dir = Path::new(&cfg.output_dir).join("calibrate");
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("calibration.json");
            let json = serde_json::to_string_pretty(&outcome)
                .map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(&path, json).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Spectrum {
            config,
            channel,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed, output.as_deref())?;
            let model = cfg.model();
            let solved = model.solve(&cfg.channels)?;
            let spec = solved.spectrum(&model, &channel, &cfg.spectrum.frequencies())?;
            let summary = solved.v_min_db(&model, &channel, crate::scenarios::REFERENCE_FREQ_HZ)?;
            let res = ScenarioResult {
                scenario: "spectrum".into(),
                reference_freq_hz: crate::scenarios::REFERENCE_FREQ_HZ,
                runs: vec![crate::scenarios::ScenarioRun {
                    label: format!("spectrum_{channel}"),
                    spectra: vec![spec],
                    summaries: vec![],
                }],
                curves: vec![],
                all_off_db: 0.0,
            };
            let dir = Path::new(&cfg.output_dir).join("spectrum");
            let files = emit_results(std::slice::from_ref(&res), &cfg, &dir)?;
            println!(
                "channel {channel}: {summary:.3} dB at {:.0} kHz",
                crate::scenarios::REFERENCE_FREQ_HZ / 1e3
            );
            println!("wrote {} files to {}", files.len(), dir.display());
            Ok(())
        }
        Command::Crosscheck {
            config,
            trajectories,
            seed,
            output,
        } => {
            let cfg = load_config(&config, seed, output.as_deref())?;
            let report = mc_crosscheck(&cfg.model(), cfg.seed, trajectories)?;
            println!(
                "crosscheck: {} trajectories, max |z| = {:.3}",
                report.trajectories, report.max_abs_z
            );
            let dir = Path::new(&cfg.output_dir).join("crosscheck");
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("crosscheck.json");
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(&path, json).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

/// Entry point; returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_thread_pool();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with zero exit
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e @ Error::Numerical(_)) => {
            eprintln!("error: {e}");
            EXIT_NUMERICAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path) -> PathBuf {
        let path = dir.join("config.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(
            f,
            r#"
seed = 7
output_dir = "{}"

[[channels]]
id = "ch1"
power_w = 4.5e-3
detuning_hz = 3.48e8

[spectrum]
f_min_hz = 1.0e4
f_max_hz = 1.0e5
points = 8
scale = "log"
"#,
            dir.join("out").display()
        )
        .unwrap();
        path
    }

    #[test]
    fn unknown_scenario_exits_with_config_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path());
        let code = cli_main([
            "flysq",
            "run",
            "warp-drive",
            "-c",
            cfg.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn missing_config_file_exits_with_config_code() {
        let code = cli_main(["flysq", "run", "two-channel", "-c", "/nonexistent.toml"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn spectrum_command_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path());
        let code = cli_main([
            "flysq",
            "spectrum",
            "-c",
            cfg.to_str().unwrap(),
            "--channel",
            "ch1",
        ]);
        assert_eq!(code, EXIT_OK);
        let csv = dir.path().join("out/spectrum/spectrum_ch1.csv");
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with(crate::output::SPECTRUM_CSV_HEADER));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn version_and_help_exit_zero() {
        assert_eq!(cli_main(["flysq", "--version"]), EXIT_OK);
        assert_eq!(cli_main(["flysq", "--help"]), EXIT_OK);
    }
}
