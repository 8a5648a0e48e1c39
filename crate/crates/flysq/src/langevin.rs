//! Euler-Maruyama integration of the coherence Langevin system and Welch
//! spectral estimation, used as the Monte Carlo cross-check of the analytic
//! frequency-domain solution.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spin::DriftSystem;

/// Hard cap on the number of samples kept in the returned time series.
const MAX_KEPT_SAMPLES: usize = 65_536;
/// Preferred Welch segment length (power of two).
const WELCH_SEGMENT: usize = 16_384;

/// Welch periodogram of the coherence fluctuations.
#[derive(Debug, Clone)]
pub struct WelchPsd {
    /// Positive analysis frequencies (Hz), DC and Nyquist excluded.
    pub freqs_hz: Vec<f64>,
    /// Two-sided PSD per region, folded onto positive frequencies
    /// (units 1/Hz relative to the diffusion normalization).
    pub psd: Vec<Vec<f64>>,
    /// Number of averaged segments.
    pub segments: usize,
}

/// Result of one stochastic trajectory.
#[derive(Debug, Clone)]
pub struct SimulatedTrajectory {
    /// Sample times of the decimated series (s).
    pub times: Vec<f64>,
    /// Decimated coherence per region: `series[region][sample]`.
    pub series: Vec<Vec<Complex64>>,
    /// Welch PSD estimate over the stationary part of the run.
    pub psd: WelchPsd,
}

/// RNG for trajectory `index` of an ensemble with the given master seed.
/// Distinct indices select independent ChaCha streams, so the ensemble is
/// reproducible regardless of scheduling order.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Integrate `d sigma = (A sigma + b) dt + sqrt(D) dW` from `initial`.
///
/// Complex white noise: the real and imaginary increments are independent,
/// each of variance `D_ii dt / 2`. The step size must resolve the fastest
/// rate in the drift (checked against an infinity-norm bound on the spectrum,
/// which is conservative). The Welch estimate skips the first eighth of the
/// run so the ensemble statistics are taken from the stationary regime.
pub fn simulate_langevin(
    sys: &DriftSystem,
    initial: &DVector<Complex64>,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<SimulatedTrajectory> {
    let mut rng = trajectory_rng(seed, 0);
    simulate_langevin_with_rng(sys, initial, duration, dt, &mut rng)
}

/// As [`simulate_langevin`], with a caller-provided RNG (used by ensembles).
pub fn simulate_langevin_with_rng(
    sys: &DriftSystem,
    initial: &DVector<Complex64>,
    duration: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedTrajectory> {
    let n = sys.n_regions();
    if initial.len() != n {
        return Err(Error::parameter(format!(
            "initial state has {} entries for {} regions",
            initial.len(),
            n
        )));
    }
    if dt <= 0.0 || duration <= 0.0 {
        return Err(Error::parameter("duration and dt must be positive"));
    }
    let scale = sys.rate_scale();
    if dt * scale >= 0.1 {
        return Err(Error::parameter(format!(
            "dt = {dt:.3e} too coarse: dt * |A| = {:.3} >= 0.1 (need dt < {:.3e})",
            dt * scale,
            0.1 / scale
        )));
    }
    let nsteps = (duration / dt).round() as usize;
    if nsteps < 16 {
        return Err(Error::parameter("duration too short for the step size"));
    }

    let decimate = (nsteps / MAX_KEPT_SAMPLES).max(1);
    let noise_amp: Vec<f64> = sys
        .diffusion
        .iter()
        .map(|&d| (d * dt / 2.0).sqrt())
        .collect();

    // streaming Welch state, started after the burn-in
    let burn = nsteps / 8;
    let seg = WELCH_SEGMENT.min(((nsteps - burn) / 4).next_power_of_two() / 2).max(256);
    let hop = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos()))
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let mut buffers: Vec<Vec<Complex64>> = vec![Vec::with_capacity(seg); n];
    let mut psd_acc = vec![vec![0.0f64; seg]; n];
    let mut segments = 0usize;
    let mut scratch = vec![Complex64::new(0.0, 0.0); seg];

    let mut state = initial.clone();
    let mut times = Vec::with_capacity(nsteps / decimate + 1);
    let mut series: Vec<Vec<Complex64>> = vec![Vec::with_capacity(nsteps / decimate + 1); n];

    let a = &sys.drift;
    let b = &sys.drive;
    let mut drift_step = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for step in 0..=nsteps {
        if step % decimate == 0 {
            times.push(step as f64 * dt);
            for r in 0..n {
                series[r].push(state[r]);
            }
        }
        if step == nsteps {
            break;
        }
        a.mul_to(&state, &mut drift_step);
        for r in 0..n {
            let dw = Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal));
            state[r] += (drift_step[r] + b[r]) * dt + noise_amp[r] * dw;
        }
        if step + 1 > burn {
            for r in 0..n {
                buffers[r].push(state[r]);
            }
            if buffers[0].len() == seg {
                for r in 0..n {
                    for (i, (&x, &w)) in buffers[r].iter().zip(&window).enumerate() {
                        scratch[i] = x * w;
                    }
                    fft.process(&mut scratch);
                    for (acc, v) in psd_acc[r].iter_mut().zip(&scratch) {
                        *acc += v.norm_sqr() * dt / window_power;
                    }
                    buffers[r].drain(..hop);
                }
                segments += 1;
            }
        }
    }

    // fold two-sided bins onto positive frequencies
    let nfreq = seg / 2 - 1;
    let mut freqs_hz = Vec::with_capacity(nfreq);
    let mut psd = vec![Vec::with_capacity(nfreq); n];
    let norm = 1.0 / segments.max(1) as f64;
    for k in 1..seg / 2 {
        freqs_hz.push(k as f64 / (seg as f64 * dt));
        for r in 0..n {
            let folded = 0.5 * (psd_acc[r][k] + psd_acc[r][seg - k]) * norm;
            psd[r].push(folded);
        }
    }

    Ok(SimulatedTrajectory {
        times,
        series,
        psd: WelchPsd {
            freqs_hz,
            psd,
            segments,
        },
    })
}

/// Ensemble-averaged Welch PSD with per-bin standard errors.
#[derive(Debug, Clone)]
pub struct EnsemblePsd {
    pub freqs_hz: Vec<f64>,
    /// Mean PSD per region.
    pub mean: Vec<Vec<f64>>,
    /// Standard error of the mean per region.
    pub stderr: Vec<Vec<f64>>,
    pub trajectories: usize,
}

/// Run `n_traj` independent trajectories (parallel) and average their PSDs.
pub fn ensemble_psd(
    sys: &DriftSystem,
    initial: &DVector<Complex64>,
    duration: f64,
    dt: f64,
    master_seed: u64,
    n_traj: usize,
) -> Result<EnsemblePsd> {
    use rayon::prelude::*;
    if n_traj == 0 {
        return Err(Error::parameter("ensemble needs at least one trajectory"));
    }
    let runs: Vec<SimulatedTrajectory> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i as u64);
            simulate_langevin_with_rng(sys, initial, duration, dt, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let freqs = runs[0].psd.freqs_hz.clone();
    let n_regions = sys.n_regions();
    let nf = freqs.len();
    let mut mean = vec![vec![0.0; nf]; n_regions];
    let mut m2 = vec![vec![0.0; nf]; n_regions];
    // Welford in trajectory order: deterministic despite parallel integration
    for (t, run) in runs.iter().enumerate() {
        let count = (t + 1) as f64;
        for r in 0..n_regions {
            for k in 0..nf {
                let x = run.psd.psd[r][k];
                let delta = x - mean[r][k];
                mean[r][k] += delta / count;
                m2[r][k] += delta * (x - mean[r][k]);
            }
        }
    }
    let denom = (n_traj.max(2) - 1) as f64 * n_traj as f64;
    let stderr = m2
        .iter()
        .map(|row| row.iter().map(|&s| (s / denom).sqrt()).collect())
        .collect();
    Ok(EnsemblePsd {
        freqs_hz: freqs,
        mean,
        stderr,
        trajectories: n_traj,
    })
}
