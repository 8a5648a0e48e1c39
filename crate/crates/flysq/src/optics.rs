//! Mapping from the steady spin state and laser parameters to quadrature
//! noise: self-rotation shear, Gaussian covariance algebra, loss channels,
//! and the per-channel noise spectrum.
//!
//! The squeezing mechanism is modeled as a single-mode Gaussian shear of the
//! orthogonal-polarization vacuum, P -> P + 2 g X, whose strength is set by
//! the drive power, the dispersive lineshape, the depumping-reduced optical
//! depth, and the projection of the local ground-state coherence onto the
//! channel's own dark state.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::ChannelConfig;
use crate::spin::{AtomParams, DriftSystem, SpinState};

/// Calibrated optical-model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalParams {
    /// Nonlinear gain of the self-rotation shear (1/W).
    pub nonlinear_gain: f64,
    /// Unsaturated optical depth.
    pub base_optical_depth: f64,
    /// Depumping saturation power (W) at the reference lineshape.
    pub depump_sat_power: f64,
    /// Pump-rate saturation power (W).
    pub pump_sat_power: f64,
    /// Pump-rate coefficient (s^-1 per W at unit lineshape).
    pub pump_coeff: f64,
    /// Squeezing-bandwidth cutoff (rad/s).
    pub squeezing_cutoff: f64,
    /// Detection efficiency in (0, 1].
    pub efficiency: f64,
    /// Technical-noise coefficient (rad/s); enters as a_tech / omega.
    pub tech_noise: f64,
}

impl Default for OpticalParams {
    /// Constants fitted to the two-channel and four-channel array data; see
    /// the calibration targets shipped with the CLI.
    fn default() -> Self {
        OpticalParams {
            nonlinear_gain: 1513.933508221806,
            base_optical_depth: 10.0,
            depump_sat_power: 1.8088377047072404e-2,
            pump_sat_power: 5.844465803771242e-3,
            pump_coeff: 1.8527110288892467e8,
            squeezing_cutoff: 15_707.963267948966, // 2 pi * 2.5 kHz
            efficiency: 1.0,
            tech_noise: 4.443762912629549e4,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nonlinear_gain", self.nonlinear_gain),
            ("base_optical_depth", self.base_optical_depth),
            ("depump_sat_power", self.depump_sat_power),
            ("pump_sat_power", self.pump_sat_power),
            ("pump_coeff", self.pump_coeff),
            ("squeezing_cutoff", self.squeezing_cutoff),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.tech_noise < 0.0 {
            return Err(Error::domain("tech_noise must be non-negative"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::domain(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        Ok(())
    }
}

/// Two-resonance absorption lineshape, normalized so each term peaks at 1.
/// `detuning` is referenced to the lower excited state (F'=1).
pub fn absorption_lineshape(detuning: f64, atom: &AtomParams) -> f64 {
    let g2 = atom.excited_linewidth * atom.excited_linewidth;
    let d1 = detuning;
    let d2 = detuning - atom.hyperfine_splitting;
    g2 / (d1 * d1 + g2) + g2 / (d2 * d2 + g2)
}

/// Signed two-resonance dispersive lineshape; the opposite signs of the two
/// terms reflect the opposite couplings to the two excited states.
pub fn dispersive_lineshape(detuning: f64, atom: &AtomParams) -> f64 {
    let g = atom.excited_linewidth;
    let d1 = detuning;
    let d2 = detuning - atom.hyperfine_splitting;
    d1 * g / (d1 * d1 + g * g) - d2 * g / (d2 * d2 + g * g)
}

/// Optical-pumping rate for the given drive power and detuning (from F'=1).
pub fn pump_rate(power: f64, detuning: f64, opt: &OpticalParams, atom: &AtomParams) -> Result<f64> {
    if power < 0.0 {
        return Err(Error::domain("power must be non-negative"));
    }
    let l = absorption_lineshape(detuning, atom);
    Ok(opt.pump_coeff * power * l / (1.0 + power / opt.pump_sat_power))
}

/// Depumping-reduced effective optical depth at the given power/detuning.
pub fn effective_optical_depth(
    power: f64,
    detuning: f64,
    opt: &OpticalParams,
    atom: &AtomParams,
) -> f64 {
    let l = absorption_lineshape(detuning, atom);
    opt.base_optical_depth / (1.0 + power * l / opt.depump_sat_power)
}

/// d g / d(coherence projection): the shear per unit aligned coherence.
pub fn shear_coupling(channel: &ChannelConfig, opt: &OpticalParams, atom: &AtomParams) -> f64 {
    let delta = channel.detuning_from_f1(atom.hyperfine_splitting);
    let od = effective_optical_depth(channel.power, delta, opt, atom);
    opt.nonlinear_gain * channel.power * od * dispersive_lineshape(delta, atom).abs()
}

/// Projection of the local coherence onto the channel's own dark state,
/// floored at zero: misaligned coherence suppresses rather than inverts the
/// nonlinearity.
pub fn coherence_projection(channel: &ChannelConfig, coherence: Complex64) -> f64 {
    let rot = Complex64::from_polar(1.0, -2.0 * channel.polarization_angle);
    (coherence * rot).re.max(0.0)
}

/// Self-rotation shear strength for one channel.
pub fn shear_parameter(
    channel: &ChannelConfig,
    coherence: Complex64,
    opt: &OpticalParams,
    atom: &AtomParams,
) -> f64 {
    shear_coupling(channel, opt, atom) * coherence_projection(channel, coherence)
}

/// 2x2 quadrature covariance in shot-noise units (vacuum = identity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCovariance {
    pub matrix: Matrix2<f64>,
}

impl QuadCovariance {
    pub fn vacuum() -> Self {
        QuadCovariance {
            matrix: Matrix2::identity(),
        }
    }

    pub fn det(&self) -> f64 {
        self.matrix.determinant()
    }
}

/// Covariance of vacuum sheared by P -> P + 2 g X; det V = 1 exactly.
pub fn shear_covariance(g: f64) -> Result<QuadCovariance> {
    if g < 0.0 {
        return Err(Error::domain("shear parameter must be non-negative"));
    }
    let m = Matrix2::new(1.0, 2.0 * g, 2.0 * g, 1.0 + 4.0 * g * g);
    Ok(QuadCovariance { matrix: m })
}

/// Beam-splitter loss channel: V' = eta V + (1 - eta) I.
pub fn apply_loss(v: &QuadCovariance, eta: f64) -> Result<QuadCovariance> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::parameter(format!(
            "efficiency must lie in (0, 1], got {eta}"
        )));
    }
    Ok(QuadCovariance {
        matrix: v.matrix * eta + Matrix2::identity() * (1.0 - eta),
    })
}

/// Balanced n-way split with vacuum entering the open ports: each output is
/// V' = V/n + (1 - 1/n) I.
pub fn split_squeezed(v: &QuadCovariance, n_ways: usize) -> Result<QuadCovariance> {
    if n_ways < 2 {
        return Err(Error::parameter("split requires at least 2 outputs"));
    }
    let inv = 1.0 / n_ways as f64;
    Ok(QuadCovariance {
        matrix: v.matrix * inv + Matrix2::identity() * (1.0 - inv),
    })
}

/// Extremal quadrature variances and the minor-axis orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinVariance {
    pub v_min: f64,
    pub v_max: f64,
    /// Orientation of the minimum-variance quadrature in [0, pi); ties break
    /// toward 0.
    pub angle_min: f64,
}

/// Eigen-decompose a 2x2 symmetric covariance.
pub fn min_variance(v: &QuadCovariance) -> MinVariance {
    let a = v.matrix[(0, 0)];
    let b = v.matrix[(1, 1)];
    let c = 0.5 * (v.matrix[(0, 1)] + v.matrix[(1, 0)]);
    let mean = 0.5 * (a + b);
    let half_diff = 0.5 * (a - b);
    let radius = (half_diff * half_diff + c * c).sqrt();
    let v_min = mean - radius;
    let v_max = mean + radius;
    let angle_min = if radius <= f64::EPSILON * mean.abs() {
        0.0 // isotropic: tie-break toward angle 0
    } else {
        // major axis of the *maximum* eigenvalue, then rotate a quarter turn
        let major = 0.5 * (2.0 * c).atan2(a - b);
        let minor = major + std::f64::consts::FRAC_PI_2;
        minor.rem_euclid(std::f64::consts::PI)
    };
    MinVariance {
        v_min,
        v_max,
        angle_min,
    }
}

/// Shot-noise-relative level in decibel; negative means squeezing.
pub fn to_decibel(v: f64) -> Result<f64> {
    if v <= 0.0 {
        return Err(Error::domain(format!(
            "variance must be positive for dB conversion, got {v}"
        )));
    }
    Ok(10.0 * v.log10())
}

/// Minimum-variance noise spectrum of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub channel_id: String,
    /// Detection frequencies (Hz).
    pub frequencies: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    /// Minimum-variance quadrature angle per frequency (rad).
    pub angle_min: Vec<f64>,
}

/// Compute the measured covariance of one channel at angular frequency
/// `omega`, given the full spin system (for the excess-noise feed-through).
///
/// The shear rolls off as `g(w) = g_dc / sqrt(1 + (w/w_c)^2)`; the sheared
/// vacuum passes the detection-loss channel; spin-projection noise mapped
/// through the shear coupling and 1/w technical noise add to both
/// quadratures.
pub fn channel_covariance_at(
    channel: &ChannelConfig,
    region: usize,
    spin: &SpinState,
    sys: &DriftSystem,
    opt: &OpticalParams,
    atom: &AtomParams,
    omega: f64,
) -> Result<QuadCovariance> {
    if omega <= 0.0 {
        return Err(Error::domain(
            "spectrum grid must exclude DC (technical noise diverges)",
        ));
    }
    let kappa = shear_coupling(channel, opt, atom);
    let g_dc = kappa * coherence_projection(channel, spin.coherence[region]);
    let rolloff = 1.0 / (1.0 + (omega / opt.squeezing_cutoff).powi(2)).sqrt();
    let sheared = shear_covariance(g_dc * rolloff)?;
    let lossy = apply_loss(&sheared, opt.efficiency)?;
    let spin_psd = crate::spin::spin_noise_psd(sys, omega)?[region];
    let excess = kappa * kappa * spin_psd + opt.tech_noise / omega;
    Ok(QuadCovariance {
        matrix: lossy.matrix + Matrix2::identity() * excess,
    })
}

/// Evaluate the minimum-variance spectrum of one channel over a frequency
/// grid (Hz). The grid must not contain DC.
pub fn noise_spectrum(
    channel: &ChannelConfig,
    region: usize,
    spin: &SpinState,
    sys: &DriftSystem,
    opt: &OpticalParams,
    atom: &AtomParams,
    freq_grid_hz: &[f64],
) -> Result<NoiseSpectrum> {
    opt.validate()?;
    if freq_grid_hz.iter().any(|&f| f <= 0.0) {
        return Err(Error::domain("spectrum grid must exclude DC"));
    }
    let mut v_min = Vec::with_capacity(freq_grid_hz.len());
    let mut v_max = Vec::with_capacity(freq_grid_hz.len());
    let mut angle = Vec::with_capacity(freq_grid_hz.len());
    for &f in freq_grid_hz {
        let omega = 2.0 * std::f64::consts::PI * f;
        let cov = channel_covariance_at(channel, region, spin, sys, opt, atom, omega)?;
        let mv = min_variance(&cov);
        v_min.push(mv.v_min);
        v_max.push(mv.v_max);
        angle.push(mv.angle_min);
    }
    Ok(NoiseSpectrum {
        channel_id: channel.id.clone(),
        frequencies: freq_grid_hz.to_vec(),
        v_min,
        v_max,
        angle_min: angle,
    })
}

/// Rotate a covariance by `phi` (used in tests and angle diagnostics).
pub fn rotate_covariance(v: &QuadCovariance, phi: f64) -> QuadCovariance {
    let (s, c) = phi.sin_cos();
    let r = Matrix2::new(c, -s, s, c);
    QuadCovariance {
        matrix: r * v.matrix * r.transpose(),
    }
}

/// Variance of the quadrature at angle `phi` (rotation-scan oracle helper).
pub fn quadrature_variance(v: &QuadCovariance, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    let u = Vector2::new(c, s);
    (u.transpose() * v.matrix * u)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn atom() -> AtomParams {
        AtomParams::default()
    }

    #[test]
    fn pump_rate_limits() {
        let opt = OpticalParams::default();
        let a = atom();
        assert_eq!(pump_rate(0.0, 1.0e9, &opt, &a).unwrap(), 0.0);
        // saturation: P -> inf approaches c_p * P_sat * L
        let l = absorption_lineshape(5.0e8, &a);
        let hi = pump_rate(1.0e3, 5.0e8, &opt, &a).unwrap();
        assert_relative_eq!(
            hi,
            opt.pump_coeff * opt.pump_sat_power * l,
            max_relative = 1e-4
        );
        assert!(pump_rate(-1.0, 0.0, &opt, &a).is_err());
    }

    #[test]
    fn absorption_lineshape_is_symmetric_about_midpoint() {
        let a = atom();
        let mid = a.hyperfine_splitting / 2.0;
        for &off in &[1.0e6, 5.0e7, 3.0e8] {
            assert_relative_eq!(
                absorption_lineshape(mid + off, &a),
                absorption_lineshape(mid - off, &a),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn dispersive_lineshape_values() {
        let a = atom();
        let g = a.excited_linewidth;
        let delta = a.hyperfine_splitting;
        // at detuning 0 only the second term contributes: +Delta g/(Delta^2+g^2)
        assert_relative_eq!(
            dispersive_lineshape(0.0, &a),
            delta * g / (delta * delta + g * g),
            max_relative = 1e-12
        );
        // midway between resonances both terms are positive
        let d_mid = dispersive_lineshape(delta / 2.0, &a);
        let term = (delta / 2.0) * g / ((delta / 2.0).powi(2) + g * g);
        assert_relative_eq!(d_mid, 2.0 * term, max_relative = 1e-12);
        assert!(d_mid > 0.0);
        // far detuned the dispersion dies off
        assert!(dispersive_lineshape(1.0e13, &a).abs() < 1e-4);
        assert!(dispersive_lineshape(-1.0e13, &a).abs() < 1e-4);
    }

    #[test]
    fn shear_vanishes_without_coherence_and_peaks_aligned() {
        let opt = OpticalParams::default();
        let a = atom();
        let mut ch = ChannelConfig::new("ch1", 4.5e-3);
        ch.detuning = 3.48e8;
        assert_eq!(
            shear_parameter(&ch, Complex64::new(0.0, 0.0), &opt, &a),
            0.0
        );
        let aligned = shear_parameter(&ch, Complex64::new(1.0, 0.0), &opt, &a);
        assert_relative_eq!(aligned, shear_coupling(&ch, &opt, &a), max_relative = 1e-12);
        // 45 degree relative angle with coherence from the other channel: the
        // projection cos(90 deg) = 0 kills the shear
        ch.polarization_angle = PI / 4.0;
        let sigma_other = Complex64::from_polar(0.7, 0.0); // phase 2*theta2 = 0
        assert_eq!(shear_parameter(&ch, sigma_other, &opt, &a), 0.0);
    }

    #[test]
    fn projection_depends_only_on_relative_angle() {
        let mut ch = ChannelConfig::new("c", 1.0e-3);
        for &(t1, t2) in &[(0.0, 0.3), (0.4, 0.7), (1.2, 1.5)] {
            ch.polarization_angle = t1;
            let p1 = coherence_projection(&ch, Complex64::from_polar(0.9, 2.0 * t2));
            ch.polarization_angle = 0.0;
            let p2 = coherence_projection(&ch, Complex64::from_polar(0.9, 2.0 * (t2 - t1)));
            assert_relative_eq!(p1, p2, max_relative = 1e-12);
        }
        // even and pi-periodic in the relative angle
        ch.polarization_angle = 0.0;
        let sig = |dt: f64| Complex64::from_polar(0.8, 2.0 * dt);
        for &dt in &[0.2, 0.9, 1.4] {
            assert_relative_eq!(
                coherence_projection(&ch, sig(dt)),
                coherence_projection(&ch, sig(-dt)),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                coherence_projection(&ch, sig(dt)),
                coherence_projection(&ch, sig(dt + PI)),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn shear_covariance_matches_eigen_oracle() {
        // brute-force rotation scan as the independent oracle
        let v = shear_covariance(1.0).unwrap();
        let mut best = f64::INFINITY;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..200_000 {
            let phi = PI * i as f64 / 200_000.0;
            let var = quadrature_variance(&v, phi);
            best = best.min(var);
            worst = worst.max(var);
        }
        let mv = min_variance(&v);
        assert_relative_eq!(mv.v_min, best, max_relative = 1e-8);
        assert_relative_eq!(mv.v_max, worst, max_relative = 1e-8);
        // frozen values from the oracle: 3 -+ 2 sqrt(2)
        assert_relative_eq!(mv.v_min, 0.17157287525381, max_relative = 1e-10);
        assert_relative_eq!(mv.v_max, 5.82842712474619, max_relative = 1e-10);
    }

    #[test]
    fn shear_is_symplectic() {
        for i in 0..=100 {
            let g = 0.1 * i as f64;
            let v = shear_covariance(g).unwrap();
            assert!((v.det() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(
            shear_covariance(0.0).unwrap().matrix,
            Matrix2::identity()
        );
        assert!(shear_covariance(-0.1).is_err());
    }

    #[test]
    fn loss_moves_toward_vacuum_and_preserves_squeezing_sign() {
        let v = shear_covariance(0.8).unwrap();
        assert_eq!(apply_loss(&v, 1.0).unwrap(), v);
        let half = apply_loss(&v, 0.5).unwrap();
        let mv = min_variance(&half);
        // 0.5 * v_min + 0.5 stays below 1 whenever v_min < 1
        assert!(min_variance(&v).v_min < 1.0);
        assert!(mv.v_min < 1.0);
        assert!(apply_loss(&v, 0.0).is_err());
        assert!(apply_loss(&v, 1.5).is_err());
        // worked example: v_min 0.5 at eta 0.5 -> 0.75
        let diag = QuadCovariance {
            matrix: Matrix2::new(0.5, 0.0, 0.0, 2.0),
        };
        let out = apply_loss(&diag, 0.5).unwrap();
        assert_relative_eq!(min_variance(&out).v_min, 0.75, max_relative = 1e-12);
    }

    #[test]
    fn split_dilutes_squeezing() {
        // 1.5 dB squeezed input: v_min = 10^-0.15 = 0.70795; two-way split
        let vin = 10f64.powf(-0.15);
        let v = QuadCovariance {
            matrix: Matrix2::new(vin, 0.0, 0.0, 1.0 / vin),
        };
        let out = split_squeezed(&v, 2).unwrap();
        let vmin = min_variance(&out).v_min;
        assert_relative_eq!(vmin, vin / 2.0 + 0.5, max_relative = 1e-12);
        assert_relative_eq!(to_decibel(vmin).unwrap(), -0.686, epsilon = 2e-3);
        // vacuum in, vacuum out
        let vac = split_squeezed(&QuadCovariance::vacuum(), 7).unwrap();
        assert_eq!(vac.matrix, Matrix2::identity());
        // n -> infinity approaches vacuum
        let big = split_squeezed(&v, 1_000_000).unwrap();
        assert!((big.matrix - Matrix2::identity()).norm() < 1e-5);
        assert!(split_squeezed(&v, 1).is_err());
    }

    #[test]
    fn min_variance_ties_and_rotation() {
        let mv = min_variance(&QuadCovariance::vacuum());
        assert_eq!(mv.angle_min, 0.0);
        assert_eq!(mv.v_min, 1.0);
        assert_eq!(mv.v_max, 1.0);

        let v = shear_covariance(0.6).unwrap();
        let base = min_variance(&v);
        for &phi in &[0.3, 1.0, 2.5] {
            let rot = rotate_covariance(&v, phi);
            let mv = min_variance(&rot);
            assert_relative_eq!(mv.v_min, base.v_min, max_relative = 1e-12);
            let expect = (base.angle_min + phi).rem_euclid(PI);
            let delta = (mv.angle_min - expect).rem_euclid(PI);
            let dist = delta.min(PI - delta);
            assert!(dist < 1e-9, "angle off by {dist}");
        }
    }

    #[test]
    fn decibel_mapping() {
        assert_eq!(to_decibel(1.0).unwrap(), 0.0);
        assert!((to_decibel(0.901).unwrap() + 0.45).abs() < 5e-3);
        assert!((to_decibel(0.841).unwrap() + 0.75).abs() < 5e-3);
        assert!(to_decibel(0.0).is_err());
        assert!(to_decibel(-1.0).is_err());
    }

    #[test]
    fn vmin_monotone_in_shear() {
        let mut prev_min = f64::INFINITY;
        let mut prev_max = 0.0;
        for i in 0..=50 {
            let g = 0.2 * i as f64;
            let mv = min_variance(&shear_covariance(g).unwrap());
            if i > 0 {
                assert!(mv.v_min < prev_min);
                assert!(mv.v_max > prev_max);
            }
            prev_min = mv.v_min;
            prev_max = mv.v_max;
            // uncertainty product of the pure shear is exactly 1
            assert_relative_eq!(mv.v_min * mv.v_max, 1.0, max_relative = 1e-9);
        }
    }
}
