//! Reproductions of the five bench experiments as scenario runs, plus the
//! Monte Carlo cross-check of the analytic spectra.
//!
//! Every runner shares one pipeline: build the compartment graph for the
//! enabled channels, derive pump rates from power and detuning, solve the
//! steady coherence distribution, and read out per-channel quadrature noise.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{build_region_graph, exchange_matrix, CellConfig, ChannelConfig};
use crate::langevin::{ensemble_psd, EnsemblePsd};
use crate::optics::{
    channel_covariance_at, min_variance, noise_spectrum, pump_rate, to_decibel, NoiseSpectrum,
    OpticalParams,
};
use crate::spin::{assemble_drift, spin_noise_psd, steady_state, AtomParams, DriftSystem,
    PumpDrive, SpinState};

/// Detection frequency for scalar readouts (Hz).
pub const REFERENCE_FREQ_HZ: f64 = 4.0e4;

/// Fitted Langevin noise scale c_D (rad/s); see the calibration targets.
pub const DEFAULT_SPIN_NOISE_SCALE: f64 = 6684.615065748965;

/// Everything needed to evaluate the forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeModel {
    pub cell: CellConfig,
    pub atom: AtomParams,
    pub optics: OpticalParams,
    /// Langevin diffusion scale c_D (rad/s); also sets the spin-noise
    /// feed-through into the optical quadratures.
    pub noise_scale: f64,
}

impl Default for SqueezeModel {
    fn default() -> Self {
        let cell = CellConfig::default();
        let atom = AtomParams {
            intrinsic_decay: cell.intrinsic_decay(),
            ..AtomParams::default()
        };
        SqueezeModel {
            cell,
            atom,
            optics: OpticalParams::default(),
            noise_scale: DEFAULT_SPIN_NOISE_SCALE,
        }
    }
}

/// A solved cell: steady spin state plus the drift system behind it.
#[derive(Debug, Clone)]
pub struct SolvedCell {
    pub channels: Vec<ChannelConfig>,
    pub system: DriftSystem,
    pub spin: SpinState,
}

impl SqueezeModel {
    /// Solve the steady state for the enabled channels.
    pub fn solve(&self, channels: &[ChannelConfig]) -> Result<SolvedCell> {
        let enabled: Vec<ChannelConfig> =
            channels.iter().filter(|c| c.enabled).cloned().collect();
        let graph = build_region_graph(&self.cell, &enabled)?;
        let rates = exchange_matrix(&graph);
        let pumps: Vec<PumpDrive> = enabled
            .iter()
            .map(|ch| {
                let delta = ch.detuning_from_f1(self.atom.hyperfine_splitting);
                Ok(PumpDrive {
                    rate: pump_rate(ch.power, delta, &self.optics, &self.atom)?,
                    phase: 2.0 * ch.polarization_angle,
                })
            })
            .collect::<Result<_>>()?;
        let system = assemble_drift(&graph, &rates, &pumps, &self.atom, self.noise_scale)?;
        let spin = steady_state(&system)?;
        Ok(SolvedCell {
            channels: enabled,
            system,
            spin,
        })
    }

    /// Minimum-variance level of one channel at one detection frequency (dB).
    pub fn observed_v_min_db(
        &self,
        channels: &[ChannelConfig],
        observe_id: &str,
        freq_hz: f64,
    ) -> Result<f64> {
        let solved = self.solve(channels)?;
        solved.v_min_db(self, observe_id, freq_hz)
    }
}

impl SolvedCell {
    pub fn region_of(&self, id: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.id == id)
            .map(|i| i + 1)
            .ok_or_else(|| Error::config(format!("no enabled channel `{id}`")))
    }

    pub fn spectrum(
        &self,
        model: &SqueezeModel,
        id: &str,
        freq_grid_hz: &[f64],
    ) -> Result<NoiseSpectrum> {
        let region = self.region_of(id)?;
        let ch = &self.channels[region - 1];
        noise_spectrum(
            ch,
            region,
            &self.spin,
            &self.system,
            &model.optics,
            &model.atom,
            freq_grid_hz,
        )
    }

    pub fn v_min_db(&self, model: &SqueezeModel, id: &str, freq_hz: f64) -> Result<f64> {
        let region = self.region_of(id)?;
        let ch = &self.channels[region - 1];
        let cov = channel_covariance_at(
            ch,
            region,
            &self.spin,
            &self.system,
            &model.optics,
            &model.atom,
            2.0 * std::f64::consts::PI * freq_hz,
        )?;
        to_decibel(min_variance(&cov).v_min)
    }
}

/// A channel with the bench defaults (1.5 mm beam, x polarization).
pub fn bench_channel(id: &str, power_w: f64, detuning_hz: f64) -> ChannelConfig {
    let mut ch = ChannelConfig::new(id, power_w);
    ch.detuning = detuning_hz;
    ch
}

/// Detuning of the +348 MHz (blue of F'=2) operating point, config frame.
pub const DETUNING_BLUE_348: f64 = 3.48e8;
/// Detuning of the 56 MHz red of F'=1 operating point, config frame.
pub const DETUNING_RED_56: f64 = -(814.5e6 + 56.0e6);

/// Scalar summary for one channel of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel_id: String,
    pub power_w: f64,
    pub detuning_hz: f64,
    pub v_min_db: f64,
    pub angle_rad: f64,
}

/// One configuration of the cell with full spectra for observed channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub label: String,
    pub spectra: Vec<NoiseSpectrum>,
    pub summaries: Vec<ChannelSummary>,
}

/// A named 1-D sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub name: String,
    pub x_label: String,
    pub x: Vec<f64>,
    pub v_min_db: Vec<f64>,
}

/// Output of one scenario: spectra-bearing runs and/or sweep curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub reference_freq_hz: f64,
    pub runs: Vec<ScenarioRun>,
    pub curves: Vec<SweepCurve>,
    /// Noise level with every channel off: the vacuum identity, exactly 0 dB.
    pub all_off_db: f64,
}

fn summarize(
    model: &SqueezeModel,
    solved: &SolvedCell,
    id: &str,
    freq_hz: f64,
) -> Result<ChannelSummary> {
    let region = solved.region_of(id)?;
    let ch = &solved.channels[region - 1];
    let cov = channel_covariance_at(
        ch,
        region,
        &solved.spin,
        &solved.system,
        &model.optics,
        &model.atom,
        2.0 * std::f64::consts::PI * freq_hz,
    )?;
    let mv = min_variance(&cov);
    Ok(ChannelSummary {
        channel_id: id.to_string(),
        power_w: ch.power,
        detuning_hz: ch.detuning,
        v_min_db: to_decibel(mv.v_min)?,
        angle_rad: mv.angle_min,
    })
}

fn spectrum_run(
    model: &SqueezeModel,
    label: &str,
    channels: &[ChannelConfig],
    observe: &[&str],
    grid: &[f64],
) -> Result<ScenarioRun> {
    let solved = model.solve(channels)?;
    let mut spectra = Vec::new();
    let mut summaries = Vec::new();
    for id in observe {
        spectra.push(solved.spectrum(model, id, grid)?);
        summaries.push(summarize(model, &solved, id, REFERENCE_FREQ_HZ)?);
    }
    Ok(ScenarioRun {
        label: label.to_string(),
        spectra,
        summaries,
    })
}

/// The all-off identity: an undriven channel carries vacuum, 0 dB exactly.
fn vacuum_level_db(optics: &OpticalParams) -> f64 {
    use crate::optics::{apply_loss, shear_covariance, QuadCovariance};
    let sheared = shear_covariance(0.0).expect("g = 0 is valid");
    let out: QuadCovariance =
        apply_loss(&sheared, optics.efficiency).expect("validated efficiency");
    to_decibel(min_variance(&out).v_min).expect("vacuum variance is 1")
}

/// Two-channel mutual-enhancement runs: each channel alone and with its
/// partner, spectra observed on both sides.
pub fn run_two_channel(model: &SqueezeModel, grid: &[f64]) -> Result<ScenarioResult> {
    let ch1 = bench_channel("ch1", 4.5e-3, DETUNING_BLUE_348);
    let ch2 = bench_channel("ch2", 11.0e-3, DETUNING_BLUE_348);
    let runs = vec![
        spectrum_run(model, "ch1_alone", &[ch1.clone()], &["ch1"], grid)?,
        spectrum_run(
            model,
            "ch1_with_ch2",
            &[ch1.clone(), ch2.clone()],
            &["ch1"],
            grid,
        )?,
        spectrum_run(model, "ch2_alone", &[ch2.clone()], &["ch2"], grid)?,
        spectrum_run(model, "ch2_with_ch1", &[ch1, ch2], &["ch2"], grid)?,
    ];
    Ok(ScenarioResult {
        scenario: "two_channel".into(),
        reference_freq_hz: REFERENCE_FREQ_HZ,
        runs,
        curves: vec![],
        all_off_db: vacuum_level_db(&model.optics),
    })
}

/// Detuning dependence of the channel-1 squeezed quadrature with and without
/// channel 2 (5 mW / 6 mW).
pub fn run_detuning_sweep(model: &SqueezeModel, points: usize) -> Result<ScenarioResult> {
    let n = points.max(9);
    let dets: Vec<f64> = (0..n)
        .map(|i| -1.0e9 + 2.0e9 * i as f64 / (n - 1) as f64)
        .collect();
    let eval = |with_partner: bool| -> Result<Vec<f64>> {
        dets.par_iter()
            .map(|&det| {
                let mut chans = vec![bench_channel("ch1", 5.0e-3, det)];
                if with_partner {
                    chans.push(bench_channel("ch2", 6.0e-3, det));
                }
                model.observed_v_min_db(&chans, "ch1", REFERENCE_FREQ_HZ)
            })
            .collect()
    };
    let without = eval(false)?;
    let with = eval(true)?;
    Ok(ScenarioResult {
        scenario: "detuning_sweep".into(),
        reference_freq_hz: REFERENCE_FREQ_HZ,
        runs: vec![],
        curves: vec![
            SweepCurve {
                name: "ch1_without_ch2".into(),
                x_label: "detuning_hz".into(),
                x: dets.clone(),
                v_min_db: without,
            },
            SweepCurve {
                name: "ch1_with_ch2".into(),
                x_label: "detuning_hz".into(),
                x: dets,
                v_min_db: with,
            },
        ],
        all_off_db: vacuum_level_db(&model.optics),
    })
}

/// Power dependence of channel 1 at the near-resonant operating point, with
/// and without a fixed 6 mW partner. Zero-power points carry no output light
/// and are skipped.
pub fn run_power_sweep(model: &SqueezeModel, powers_w: &[f64]) -> Result<ScenarioResult> {
    let kept: Vec<f64> = powers_w.iter().copied().filter(|&p| p > 0.0).collect();
    let eval = |with_partner: bool| -> Result<Vec<f64>> {
        kept.par_iter()
            .map(|&p| {
                let mut chans = vec![bench_channel("ch1", p, DETUNING_RED_56)];
                if with_partner {
                    chans.push(bench_channel("ch2", 6.0e-3, DETUNING_RED_56));
                }
                model.observed_v_min_db(&chans, "ch1", REFERENCE_FREQ_HZ)
            })
            .collect()
    };
    let without = eval(false)?;
    let with = eval(true)?;
    Ok(ScenarioResult {
        scenario: "power_sweep".into(),
        reference_freq_hz: REFERENCE_FREQ_HZ,
        runs: vec![],
        curves: vec![
            SweepCurve {
                name: "ch1_without_ch2".into(),
                x_label: "power_w".into(),
                x: kept.clone(),
                v_min_db: without,
            },
            SweepCurve {
                name: "ch1_with_ch2".into(),
                x_label: "power_w".into(),
                x: kept,
                v_min_db: with,
            },
        ],
        all_off_db: vacuum_level_db(&model.optics),
    })
}

/// Noise reduction of channel 1 versus the relative polarization angle of a
/// 6 mW partner, relative to the partner-off baseline.
pub fn run_polarization_sweep(model: &SqueezeModel, points: usize) -> Result<ScenarioResult> {
    let n = points.max(7);
    let angles: Vec<f64> = (0..n)
        .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64)
        .collect();
    let ch1 = bench_channel("ch1", 4.5e-3, DETUNING_BLUE_348);
    let baseline =
        model.observed_v_min_db(std::slice::from_ref(&ch1), "ch1", REFERENCE_FREQ_HZ)?;
    let with: Vec<f64> = angles
        .par_iter()
        .map(|&a| {
            let mut ch2 = bench_channel("ch2", 6.0e-3, DETUNING_BLUE_348);
            ch2.polarization_angle = a;
            model.observed_v_min_db(&[ch1.clone(), ch2], "ch1", REFERENCE_FREQ_HZ)
        })
        .collect::<Result<_>>()?;
    let reduction: Vec<f64> = with.iter().map(|db| baseline - db).collect();
    Ok(ScenarioResult {
        scenario: "polarization_sweep".into(),
        reference_freq_hz: REFERENCE_FREQ_HZ,
        runs: vec![],
        curves: vec![
            SweepCurve {
                name: "ch1_noise_db".into(),
                x_label: "relative_angle_rad".into(),
                x: angles.clone(),
                v_min_db: with,
            },
            SweepCurve {
                name: "ch1_reduction_db".into(),
                x_label: "relative_angle_rad".into(),
                x: angles,
                v_min_db: reduction,
            },
        ],
        all_off_db: vacuum_level_db(&model.optics),
    })
}

/// 2x2 array: channel D observed with 1..4 channels enabled, plus the 7 mW
/// single-channel comparison run.
pub fn run_array_sweep(model: &SqueezeModel, grid: &[f64]) -> Result<ScenarioResult> {
    let spacing = 8.0e-3;
    let names = ["a", "b", "c", "d"];
    let positions = [
        (-spacing / 2.0, spacing / 2.0),
        (spacing / 2.0, spacing / 2.0),
        (-spacing / 2.0, -spacing / 2.0),
        (spacing / 2.0, -spacing / 2.0),
    ];
    let mk = |idx: usize| {
        let mut ch = bench_channel(names[idx], 4.25e-3, DETUNING_BLUE_348);
        ch.position = positions[idx];
        ch
    };
    // channel D first, partners join one at a time
    let order = [3usize, 0, 1, 2];
    let mut runs = Vec::new();
    let mut counts = Vec::new();
    let mut d_levels = Vec::new();
    for k in 1..=4usize {
        let chans: Vec<ChannelConfig> = order[..k].iter().map(|&i| mk(i)).collect();
        let run = spectrum_run(model, &format!("array_{k}_on"), &chans, &["d"], grid)?;
        counts.push(k as f64);
        d_levels.push(run.summaries[0].v_min_db);
        runs.push(run);
    }
    let single = spectrum_run(
        model,
        "single_7mw",
        &[bench_channel("single", 7.0e-3, DETUNING_BLUE_348)],
        &["single"],
        grid,
    )?;
    runs.push(single);
    Ok(ScenarioResult {
        scenario: "array_sweep".into(),
        reference_freq_hz: REFERENCE_FREQ_HZ,
        runs,
        curves: vec![SweepCurve {
            name: "channel_d_vs_count".into(),
            x_label: "channels_enabled".into(),
            x: counts,
            v_min_db: d_levels,
        }],
        all_off_db: vacuum_level_db(&model.optics),
    })
}

/// Result of the single-channel threshold scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub power_w: f64,
    pub solo_v_min: f64,
    pub paired_gain_db: f64,
}

/// Search a power grid for a point where the lone channel sits within
/// `epsilon` of shot noise yet gains at least `min_gain_db` of squeezing when
/// a 6 mW partner turns on.
pub fn threshold_scan(
    model: &SqueezeModel,
    powers_w: &[f64],
    epsilon: f64,
    min_gain_db: f64,
) -> Result<Option<ThresholdPoint>> {
    for &p in powers_w.iter().filter(|&&p| p > 0.0) {
        let solo_db = model.observed_v_min_db(
            &[bench_channel("ch1", p, DETUNING_BLUE_348)],
            "ch1",
            REFERENCE_FREQ_HZ,
        )?;
        let solo_v = 10f64.powf(solo_db / 10.0);
        if (solo_v - 1.0).abs() > epsilon {
            continue;
        }
        let paired_db = model.observed_v_min_db(
            &[
                bench_channel("ch1", p, DETUNING_BLUE_348),
                bench_channel("ch2", 6.0e-3, DETUNING_BLUE_348),
            ],
            "ch1",
            REFERENCE_FREQ_HZ,
        )?;
        let gain = solo_db - paired_db;
        if gain >= min_gain_db {
            return Ok(Some(ThresholdPoint {
                power_w: p,
                solo_v_min: solo_v,
                paired_gain_db: gain,
            }));
        }
    }
    Ok(None)
}

/// Maximum single-channel squeezing (positive dB) over a power and detuning
/// grid.
pub fn max_single_channel_squeezing_db(
    model: &SqueezeModel,
    powers_w: &[f64],
    detunings_hz: &[f64],
) -> Result<f64> {
    let best = powers_w
        .par_iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let mut local: f64 = 0.0;
            for &det in detunings_hz {
                let db = model.observed_v_min_db(
                    &[bench_channel("probe", p, det)],
                    "probe",
                    REFERENCE_FREQ_HZ,
                )?;
                local = local.max(-db);
            }
            Ok(local)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(best.into_iter().fold(0.0, f64::max))
}

/// Monte Carlo versus analytic spin PSD comparison on the two-channel system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub freqs_hz: Vec<f64>,
    /// Per region, per frequency.
    pub analytic: Vec<Vec<f64>>,
    pub monte_carlo: Vec<Vec<f64>>,
    pub z_scores: Vec<Vec<f64>>,
    pub max_abs_z: f64,
    pub trajectories: usize,
}

/// Run the Langevin ensemble on the two-channel configuration and compare
/// the Welch spectra against the analytic linear-response prediction.
pub fn mc_crosscheck(model: &SqueezeModel, seed: u64, trajectories: usize) -> Result<CrosscheckReport> {
    let chans = [
        bench_channel("ch1", 4.5e-3, DETUNING_BLUE_348),
        bench_channel("ch2", 11.0e-3, DETUNING_BLUE_348),
    ];
    let solved = model.solve(&chans)?;
    crosscheck_system(&solved.system, &solved.spin, seed, trajectories)
}

/// Cross-check an arbitrary drift system (exposed for tests).
pub fn crosscheck_system(
    system: &DriftSystem,
    spin: &SpinState,
    seed: u64,
    trajectories: usize,
) -> Result<CrosscheckReport> {
    if trajectories == 0 {
        return Err(Error::parameter("need at least one trajectory"));
    }
    let scale = system.rate_scale();
    let dt = (0.09 / scale).min(2.0e-7);
    let duration = 0.08;
    let initial = DVector::from_vec(spin.coherence.clone());
    let ens: EnsemblePsd = ensemble_psd(system, &initial, duration, dt, seed, trajectories)?;

    // compare on a fixed log grid clear of both the resolution floor and the
    // discretization ceiling
    let lo: f64 = 2.0e3;
    let hi: f64 = 6.0e4;
    let n_cmp = 12usize;
    let grid: Vec<f64> = (0..n_cmp)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n_cmp - 1) as f64))
        .collect();
    let n_regions = system.n_regions();
    let mut freqs = Vec::with_capacity(n_cmp);
    let mut analytic = vec![Vec::with_capacity(n_cmp); n_regions];
    let mut mc = vec![Vec::with_capacity(n_cmp); n_regions];
    let mut z = vec![Vec::with_capacity(n_cmp); n_regions];
    let mut max_abs_z: f64 = 0.0;
    for f in grid {
        let k = ens
            .freqs_hz
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - f).abs().partial_cmp(&(b.1 - f).abs()).expect("finite")
            })
            .map(|(i, _)| i)
            .expect("non-empty PSD grid");
        let fk = ens.freqs_hz[k];
        freqs.push(fk);
        let s = spin_noise_psd(system, 2.0 * std::f64::consts::PI * fk)?;
        for r in 0..n_regions {
            let diff = ens.mean[r][k] - s[r];
            let se = ens.stderr[r][k];
            let zrk = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            analytic[r].push(s[r]);
            mc[r].push(ens.mean[r][k]);
            z[r].push(zrk);
            max_abs_z = max_abs_z.max(zrk.abs());
        }
    }
    Ok(CrosscheckReport {
        freqs_hz: freqs,
        analytic,
        monte_carlo: mc,
        z_scores: z,
        max_abs_z,
        trajectories,
    })
}
