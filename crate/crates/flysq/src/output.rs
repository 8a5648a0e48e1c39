//! Result serialization: spectra as CSV, scalar summaries as JSON, and a
//! gnuplot script mirroring the bench presentation (noise vs. frequency in
//! dB against the shot-noise line).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::optics::NoiseSpectrum;
use crate::scenarios::ScenarioResult;

pub const SPECTRUM_CSV_HEADER: &str = "freq_hz,v_min,v_max,v_min_db,angle_rad";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Render one spectrum as CSV. `.` decimal separator, LF line endings, no
/// locale dependence; identical inputs produce identical bytes.
pub fn spectrum_csv(spec: &NoiseSpectrum) -> String {
    let mut out = String::with_capacity(64 * (spec.frequencies.len() + 1));
    out.push_str(SPECTRUM_CSV_HEADER);
    out.push('\n');
    for i in 0..spec.frequencies.len() {
        let v_min_db = 10.0 * spec.v_min[i].log10();
        writeln!(
            out,
            "{},{},{},{},{}",
            spec.frequencies[i], spec.v_min[i], spec.v_max[i], v_min_db, spec.angle_min[i]
        )
        .expect("string write");
    }
    out
}

fn curve_csv(x_label: &str, x: &[f64], y: &[f64]) -> String {
    let mut out = String::new();
    out.push_str(x_label);
    out.push_str(",v_min_db\n");
    for (a, b) in x.iter().zip(y) {
        writeln!(out, "{a},{b}").expect("string write");
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    results: &'a [ScenarioResult],
    constants: Constants,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Constants {
    nonlinear_gain: f64,
    base_optical_depth: f64,
    depump_sat_power_w: f64,
    pump_sat_power_w: f64,
    pump_coeff: f64,
    squeezing_cutoff_rad_s: f64,
    efficiency: f64,
    tech_noise: f64,
    spin_noise_scale: f64,
}

impl Constants {
    fn from_config(cfg: &RunConfig) -> Self {
        Constants {
            nonlinear_gain: cfg.optics.nonlinear_gain,
            base_optical_depth: cfg.optics.base_optical_depth,
            depump_sat_power_w: cfg.optics.depump_sat_power,
            pump_sat_power_w: cfg.optics.pump_sat_power,
            pump_coeff: cfg.optics.pump_coeff,
            squeezing_cutoff_rad_s: cfg.optics.squeezing_cutoff,
            efficiency: cfg.optics.efficiency,
            tech_noise: cfg.optics.tech_noise,
            spin_noise_scale: cfg.spin_noise_scale,
        }
    }
}

/// Write spectra, summary and plot script for the given results.
///
/// Returns the paths written. The directory is created if missing; an
/// unwritable destination errors out without consuming the results.
pub fn emit_results(
    results: &[ScenarioResult],
    config: &RunConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    // unique trace name per emitted spectrum
    let mut traces: Vec<(String, &NoiseSpectrum)> = Vec::new();
    for res in results {
        for run in &res.runs {
            for spec in &run.spectra {
                let short = spec.channel_id.clone();
                let unique = results
                    .iter()
                    .flat_map(|r| r.runs.iter())
                    .flat_map(|r| r.spectra.iter())
                    .filter(|s| s.channel_id == short)
                    .count()
                    == 1;
                let name = if unique {
                    short
                } else {
                    format!("{}_{}", spec.channel_id, run.label)
                };
                traces.push((name, spec));
            }
        }
    }

    for (name, spec) in &traces {
        let path = dir.join(format!("spectrum_{name}.csv"));
        fs::write(&path, spectrum_csv(spec)).map_err(io_err(&path))?;
        written.push(path);
    }

    for res in results {
        for curve in &res.curves {
            let path = dir.join(format!("curve_{}_{}.csv", res.scenario, curve.name));
            fs::write(&path, curve_csv(&curve.x_label, &curve.x, &curve.v_min_db))
                .map_err(io_err(&path))?;
            written.push(path);
        }
    }

    let summary = Summary {
        seed: config.seed,
        results,
        constants: Constants::from_config(config),
        config,
    };
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join("plot.gp");
    fs::write(&path, plot_script(&traces)).map_err(io_err(&path))?;
    written.push(path);

    Ok(written)
}

fn plot_script(traces: &[(String, &NoiseSpectrum)]) -> String {
    let mut out = String::new();
    out.push_str("# gnuplot script: minimum-quadrature noise vs detection frequency\n");
    out.push_str("set datafile separator ','\n");
    out.push_str("set logscale x\n");
    out.push_str("set xlabel 'detection frequency (Hz)'\n");
    out.push_str("set ylabel 'noise relative to shot noise (dB)'\n");
    out.push_str("set key below\n");
    out.push_str("set grid\n");
    out.push_str("# shot-noise reference\n");
    out.push_str("snl(x) = 0\n");
    if traces.is_empty() {
        out.push_str("plot snl(x) w l lw 2 lc rgb 'black' t 'shot noise'\n");
        return out;
    }
    out.push_str("plot \\\n");
    for (name, _) in traces {
        writeln!(
            out,
            "    'spectrum_{name}.csv' u 1:4 skip 1 w l t '{name}', \\"
        )
        .expect("string write");
    }
    out.push_str("    snl(x) w l lw 2 lc rgb 'black' t 'shot noise'\n");
    out
}
