//! TOML configuration ingestion: the run configuration and the calibration
//! target file. Frequencies are Hz and powers are W at this boundary;
//! internal code works in angular frequency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationSet, CeilingTarget, ParamId, PointTarget, TargetScenario};
use crate::error::{Error, Result};
use crate::kinetics::{build_region_graph, CellConfig, ChannelConfig};
use crate::optics::OpticalParams;
use crate::scenarios::{SqueezeModel, DEFAULT_SPIN_NOISE_SCALE};
use crate::spin::AtomParams;

/// Spectrum-grid spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    Log,
    Linear,
}

/// Detection-frequency grid (Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumGrid {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
    pub scale: GridScale,
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        SpectrumGrid {
            f_min_hz: 5.0e3,
            f_max_hz: 2.0e6,
            points: 160,
            scale: GridScale::Log,
        }
    }
}

impl SpectrumGrid {
    pub fn validate(&self) -> Result<()> {
        if self.f_min_hz <= 0.0 {
            return Err(Error::config(
                "spectrum.f_min_hz: spectrum grid must exclude DC",
            ));
        }
        if self.f_max_hz <= self.f_min_hz {
            return Err(Error::config("spectrum.f_max_hz must exceed f_min_hz"));
        }
        if self.points < 2 {
            return Err(Error::config("spectrum.points must be at least 2"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.scale {
                    GridScale::Log => self.f_min_hz * (self.f_max_hz / self.f_min_hz).powf(t),
                    GridScale::Linear => self.f_min_hz + (self.f_max_hz - self.f_min_hz) * t,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCell {
    length_m: f64,
    diameter_m: f64,
    coherence_lifetime_s: f64,
    wall_collision_interval_s: f64,
    temperature_c: f64,
    mean_thermal_speed_mps: f64,
}

impl Default for RawCell {
    fn default() -> Self {
        let c = CellConfig::default();
        RawCell {
            length_m: c.length,
            diameter_m: c.diameter,
            coherence_lifetime_s: c.coherence_lifetime,
            wall_collision_interval_s: c.wall_collision_interval,
            temperature_c: c.temperature,
            mean_thermal_speed_mps: c.mean_thermal_speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAtom {
    hyperfine_splitting_hz: f64,
    excited_linewidth_hz: f64,
    cg_ratio: f64,
}

impl Default for RawAtom {
    fn default() -> Self {
        let a = AtomParams::default();
        RawAtom {
            hyperfine_splitting_hz: a.hyperfine_splitting,
            excited_linewidth_hz: a.excited_linewidth,
            cg_ratio: a.cg_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOptics {
    nonlinear_gain: f64,
    base_optical_depth: f64,
    depump_sat_power_w: f64,
    pump_sat_power_w: f64,
    pump_coeff: f64,
    squeezing_cutoff_rad_s: f64,
    efficiency: f64,
    tech_noise: f64,
}

impl Default for RawOptics {
    fn default() -> Self {
        let o = OpticalParams::default();
        RawOptics {
            nonlinear_gain: o.nonlinear_gain,
            base_optical_depth: o.base_optical_depth,
            depump_sat_power_w: o.depump_sat_power,
            pump_sat_power_w: o.pump_sat_power,
            pump_coeff: o.pump_coeff,
            squeezing_cutoff_rad_s: o.squeezing_cutoff,
            efficiency: o.efficiency,
            tech_noise: o.tech_noise,
        }
    }
}

fn default_beam_diameter() -> f64 {
    1.5e-3
}

fn default_enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    id: String,
    power_w: f64,
    #[serde(default = "default_beam_diameter")]
    beam_diameter_m: f64,
    #[serde(default)]
    polarization_angle_rad: f64,
    #[serde(default)]
    detuning_hz: f64,
    #[serde(default)]
    position_m: (f64, f64),
    #[serde(default = "default_enabled")]
    enabled: bool,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_noise_scale() -> f64 {
    DEFAULT_SPIN_NOISE_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: String,
    #[serde(default = "default_noise_scale")]
    c_d: f64,
    #[serde(default)]
    cell: RawCell,
    #[serde(default)]
    atom: RawAtom,
    #[serde(default)]
    optics: RawOptics,
    #[serde(default)]
    channels: Vec<RawChannel>,
    #[serde(default)]
    spectrum: SpectrumGrid,
}

/// A fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub cell: CellConfig,
    pub atom: AtomParams,
    pub optics: OpticalParams,
    /// Langevin noise scale c_D (rad/s).
    pub spin_noise_scale: f64,
    pub channels: Vec<ChannelConfig>,
    pub spectrum: SpectrumGrid,
}

impl RunConfig {
    pub fn model(&self) -> SqueezeModel {
        SqueezeModel {
            cell: self.cell.clone(),
            atom: self.atom.clone(),
            optics: self.optics.clone(),
            noise_scale: self.spin_noise_scale,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("empty config uses defaults")
    }
}

/// Parse and validate a TOML run configuration. Unknown keys, missing
/// required keys and malformed numbers are reported with their key path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let cell = CellConfig {
        length: raw.cell.length_m,
        diameter: raw.cell.diameter_m,
        coherence_lifetime: raw.cell.coherence_lifetime_s,
        wall_collision_interval: raw.cell.wall_collision_interval_s,
        temperature: raw.cell.temperature_c,
        mean_thermal_speed: raw.cell.mean_thermal_speed_mps,
    };
    cell.validate()?;
    let atom = AtomParams {
        hyperfine_splitting: raw.atom.hyperfine_splitting_hz,
        excited_linewidth: raw.atom.excited_linewidth_hz,
        cg_ratio: raw.atom.cg_ratio,
        intrinsic_decay: cell.intrinsic_decay(),
    };
    atom.validate()?;
    let optics = OpticalParams {
        nonlinear_gain: raw.optics.nonlinear_gain,
        base_optical_depth: raw.optics.base_optical_depth,
        depump_sat_power: raw.optics.depump_sat_power_w,
        pump_sat_power: raw.optics.pump_sat_power_w,
        pump_coeff: raw.optics.pump_coeff,
        squeezing_cutoff: raw.optics.squeezing_cutoff_rad_s,
        efficiency: raw.optics.efficiency,
        tech_noise: raw.optics.tech_noise,
    };
    optics.validate()?;
    if raw.c_d < 0.0 {
        return Err(Error::config("c_d must be non-negative"));
    }
    let mut channels = Vec::with_capacity(raw.channels.len());
    let mut seen = std::collections::BTreeSet::new();
    for rc in raw.channels {
        if !seen.insert(rc.id.clone()) {
            return Err(Error::config(format!(
                "channels: duplicate channel id `{}`",
                rc.id
            )));
        }
        channels.push(ChannelConfig {
            id: rc.id,
            power: rc.power_w,
            beam_diameter: rc.beam_diameter_m,
            polarization_angle: rc.polarization_angle_rad,
            detuning: rc.detuning_hz,
            position: rc.position_m,
            enabled: rc.enabled,
        });
    }
    // geometry check surfaces the computed fill fraction
    build_region_graph(&cell, &channels)?;
    raw.spectrum.validate()?;
    Ok(RunConfig {
        seed: raw.seed,
        output_dir: raw.output_dir,
        cell,
        atom,
        optics,
        spin_noise_scale: raw.c_d,
        channels,
        spectrum: raw.spectrum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    name: String,
    powers_w: Vec<f64>,
    #[serde(default)]
    detuning_hz: f64,
    #[serde(default)]
    observe: usize,
    freq_hz: f64,
    observed_db: f64,
    #[serde(default = "default_weight")]
    weight: f64,
    #[serde(default = "default_fit_tolerance")]
    fit_tolerance_db: f64,
}

fn default_weight() -> f64 {
    1.0
}

fn default_fit_tolerance() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTargets {
    free: Vec<ParamId>,
    targets: Vec<RawTarget>,
    #[serde(default)]
    ceiling: Option<CeilingTarget>,
    #[serde(default)]
    bounds: BTreeMap<ParamId, (f64, f64)>,
}

/// Parse a calibration target file. Bounds omitted for a free parameter fall
/// back to the shipped defaults.
pub fn parse_targets(text: &str) -> Result<CalibrationSet> {
    let raw: RawTargets = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let defaults = CalibrationSet::paper_defaults();
    let mut bounds = defaults.bounds;
    for (id, b) in raw.bounds {
        bounds.insert(id, b);
    }
    let targets = raw
        .targets
        .into_iter()
        .map(|t| PointTarget {
            name: t.name,
            scenario: TargetScenario {
                powers_w: t.powers_w,
                detuning_hz: t.detuning_hz,
                observe: t.observe,
            },
            freq_hz: t.freq_hz,
            observed_db: t.observed_db,
            weight: t.weight,
            fit_tolerance_db: t.fit_tolerance_db,
        })
        .collect();
    let set = CalibrationSet {
        free: raw.free,
        targets,
        ceiling: raw.ceiling,
        bounds,
    };
    set.validate()?;
    Ok(set)
}

/// The shipped calibration target file, matching
/// [`CalibrationSet::paper_defaults`].
pub fn default_targets_toml() -> String {
    let set = CalibrationSet::paper_defaults();
    let mut out = String::new();
    out.push_str("# Calibration targets: quoted squeezing levels at 40 kHz plus the\n");
    out.push_str("# low-frequency anchor and the maximum-squeezing ceiling.\n\n");
    out.push_str("free = [\n");
    for id in &set.free {
        out.push_str(&format!("    \"{}\",\n", id.name()));
    }
    out.push_str("]\n");
    for t in &set.targets {
        out.push_str("\n[[targets]]\n");
        out.push_str(&format!("name = \"{}\"\n", t.name));
        let powers: Vec<String> = t
            .scenario
            .powers_w
            .iter()
            .map(|p| format!("{p:e}"))
            .collect();
        out.push_str(&format!("powers_w = [{}]\n", powers.join(", ")));
        out.push_str(&format!("detuning_hz = {:e}\n", t.scenario.detuning_hz));
        out.push_str(&format!("observe = {}\n", t.scenario.observe));
        out.push_str(&format!("freq_hz = {:e}\n", t.freq_hz));
        out.push_str(&format!("observed_db = {}\n", t.observed_db));
        out.push_str(&format!("weight = {}\n", t.weight));
        out.push_str(&format!("fit_tolerance_db = {}\n", t.fit_tolerance_db));
    }
    if let Some(c) = &set.ceiling {
        out.push_str("\n[ceiling]\n");
        out.push_str(&format!("target_db = {}\n", c.target_db));
        out.push_str(&format!("tolerance_db = {}\n", c.tolerance_db));
        out.push_str(&format!("max_power_w = {:e}\n", c.max_power_w));
        out.push_str(&format!("detuning_span_hz = {:e}\n", c.detuning_span_hz));
        out.push_str(&format!("power_points = {}\n", c.power_points));
        out.push_str(&format!("detuning_points = {}\n", c.detuning_points));
    }
    out.push_str("\n[bounds]\n");
    for (id, (lo, hi)) in &set.bounds {
        out.push_str(&format!("{} = [{lo:e}, {hi:e}]\n", id.name()));
    }
    out
}
