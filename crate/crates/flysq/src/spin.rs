//! Coupled dynamics of the ground-state Zeeman coherence across regions.
//!
//! Each region carries one complex coherence amplitude sigma (the Delta-m = 2
//! ground-state coherence, normalized so |sigma| = 1 is the fully pumped dark
//! state). Optical pumping drives a channel's coherence toward phase 2*theta;
//! atoms exchanging between regions carry their coherence with them; the
//! Langevin forcing has a fluctuation-dissipation-shaped diagonal diffusion.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{RateMatrix, RegionGraph};

/// Atomic constants of the probed line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomParams {
    /// Excited-state hyperfine splitting (Hz).
    pub hyperfine_splitting: f64,
    /// Effective excited-state linewidth (Hz); natural linewidth by default,
    /// calibration may inflate it to absorb Doppler broadening.
    pub excited_linewidth: f64,
    /// Ratio of the two single-photon coupling strengths g1/g2.
    pub cg_ratio: f64,
    /// Intrinsic ground-state decay rate (s^-1), 1/T2 of the coated cell.
    pub intrinsic_decay: f64,
}

impl Default for AtomParams {
    fn default() -> Self {
        AtomParams {
            hyperfine_splitting: 814.5e6,
            excited_linewidth: 2.0 * std::f64::consts::PI * 5.75e6,
            cg_ratio: 1.0,
            intrinsic_decay: 1.0 / 0.030,
        }
    }
}

impl AtomParams {
    pub fn validate(&self) -> Result<()> {
        if self.hyperfine_splitting <= 0.0
            || self.excited_linewidth <= 0.0
            || self.intrinsic_decay <= 0.0
        {
            return Err(Error::domain(
                "hyperfine splitting, linewidth and intrinsic decay must be positive",
            ));
        }
        Ok(())
    }
}

/// Optical pumping applied to one channel region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpDrive {
    /// Pump rate toward the local dark state (s^-1).
    pub rate: f64,
    /// Phase of the pumped coherence: twice the polarization angle (rad).
    pub phase: f64,
}

/// Steady-state coherence per region.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    /// Coherence amplitude per region; index 0 is the dark region.
    pub coherence: Vec<Complex64>,
    /// Pump rate per region (0 for the dark region).
    pub pump_rates: Vec<f64>,
}

/// The linear Langevin system d(sigma)/dt = A sigma + b + F(t).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSystem {
    /// Drift matrix (s^-1): decay + pumping on the diagonal plus coherence
    /// transport between regions.
    pub drift: DMatrix<Complex64>,
    /// Drive vector (s^-1): Gamma_p * exp(i 2 theta) per channel region.
    pub drive: DVector<Complex64>,
    /// Diagonal of the diffusion matrix (s^-1 scaled by the noise constant).
    pub diffusion: DVector<f64>,
    /// Pump rate per region, kept for downstream consumers.
    pub pump_rates: Vec<f64>,
}

impl DriftSystem {
    pub fn n_regions(&self) -> usize {
        self.drive.len()
    }

    /// Upper bound on the spectral radius from the infinity norm; used for
    /// integrator step-size checks.
    pub fn rate_scale(&self) -> f64 {
        (0..self.drift.nrows())
            .map(|i| {
                (0..self.drift.ncols())
                    .map(|j| self.drift[(i, j)].norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Assemble the drift system for the given kinetics and pump configuration.
///
/// The transport part acts on the per-atom coherence: a region's amplitude
/// relaxes toward its neighbors' at the atom-exchange rates, which for the
/// flux-balanced `RateMatrix` is its transpose. Row sums of the transport
/// block vanish, so a uniform coherence is unaffected by exchange alone.
///
/// Diffusion follows the fluctuation-dissipation form
/// `D_ii = c_D (Gamma_0 + Gamma_p_i)` with `c_D` a calibration constant.
pub fn assemble_drift(
    graph: &RegionGraph,
    rates: &RateMatrix,
    pumps: &[PumpDrive],
    atom: &AtomParams,
    noise_scale: f64,
) -> Result<DriftSystem> {
    atom.validate()?;
    let n = graph.n_regions();
    if rates.n_regions() != n {
        return Err(Error::config(
            "rate matrix size does not match the region graph",
        ));
    }
    if pumps.len() != graph.n_channels() {
        return Err(Error::config(format!(
            "expected {} pump drives, got {}",
            graph.n_channels(),
            pumps.len()
        )));
    }
    if pumps.iter().any(|p| p.rate < 0.0) {
        return Err(Error::domain("pump rates must be non-negative"));
    }
    if noise_scale < 0.0 {
        return Err(Error::domain("noise scale must be non-negative"));
    }

    let gamma0 = atom.intrinsic_decay;
    let mut pump_rates = vec![0.0; n];
    for (c, p) in pumps.iter().enumerate() {
        pump_rates[c + 1] = p.rate;
    }

    let mut drift = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            // transpose of the atom-number generator = intensive transport
            drift[(i, j)] = Complex64::new(rates.rates[(j, i)], 0.0);
        }
        drift[(i, i)] -= Complex64::new(gamma0 + pump_rates[i], 0.0);
    }

    let mut drive = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for (c, p) in pumps.iter().enumerate() {
        drive[c + 1] = Complex64::from_polar(p.rate, p.phase);
    }

    let diffusion =
        DVector::from_iterator(n, pump_rates.iter().map(|&gp| noise_scale * (gamma0 + gp)));

    let sys = DriftSystem {
        drift,
        drive,
        diffusion,
        pump_rates,
    };
    // Gershgorin: every disc sits at Re <= -(Gamma0 + Gamma_p_i) < 0, because
    // each row's off-diagonal transport mass equals the transport part of the
    // diagonal. A non-negative abscissa here is a construction bug.
    debug_assert!(gershgorin_abscissa(&sys.drift) < 0.0);
    Ok(sys)
}

fn gershgorin_abscissa(a: &DMatrix<Complex64>) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let radius: f64 = (0..a.ncols())
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].norm())
                .sum();
            a[(i, i)].re + radius
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `A sigma + b = 0` for the steady coherence distribution.
pub fn steady_state(sys: &DriftSystem) -> Result<SpinState> {
    let lu = sys.drift.clone().lu();
    let rhs = -&sys.drive;
    let sigma = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("steady state: drift matrix is singular"))?;
    let b_norm = sys.drive.norm();
    if b_norm > 0.0 {
        let residual = (&sys.drift * &sigma + &sys.drive).norm();
        if residual > 1e-10 * b_norm {
            return Err(Error::numerical(format!(
                "steady state residual {residual:.3e} exceeds 1e-10 * |b| = {:.3e}; \
                 condition estimate {:.3e}",
                1e-10 * b_norm,
                condition_estimate(&sys.drift)
            )));
        }
    }
    Ok(SpinState {
        coherence: sigma.iter().copied().collect(),
        pump_rates: sys.pump_rates.clone(),
    })
}

/// One-norm condition estimate via explicit inversion; the matrices here are
/// tiny (N+1 wide), so this is cheap and dependable.
fn condition_estimate(a: &DMatrix<Complex64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Frequency-domain response `chi(omega) = (i omega I - A)^-1` (units: s).
pub fn susceptibility(sys: &DriftSystem, omega: f64) -> Result<DMatrix<Complex64>> {
    let n = sys.n_regions();
    let mut m = -sys.drift.clone();
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.0, omega);
    }
    let cond = condition_estimate(&m);
    let inv = m.try_inverse().ok_or_else(|| {
        Error::numerical(format!(
            "susceptibility: (i w I - A) singular at omega = {omega:.3e}"
        ))
    })?;
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::numerical(format!(
            "susceptibility ill-conditioned at omega = {omega:.3e}: cond ~ {cond:.3e}"
        )));
    }
    Ok(inv)
}

/// Two-sided spectral density of the coherence fluctuations per region:
/// `S_i(omega) = [chi D chi^dagger]_ii` (units: 1/(rad/s) times the noise
/// constant's units).
pub fn spin_noise_psd(sys: &DriftSystem, omega: f64) -> Result<Vec<f64>> {
    let chi = susceptibility(sys, omega)?;
    let n = sys.n_regions();
    let mut s = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += chi[(i, j)].norm_sqr() * sys.diffusion[j];
        }
        s[i] = acc;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{build_region_graph, exchange_matrix, CellConfig, ChannelConfig};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn graph_n(n: usize) -> (RegionGraph, RateMatrix) {
        let cell = CellConfig::default();
        let chans: Vec<_> = (0..n)
            .map(|i| ChannelConfig::new(format!("ch{}", i + 1), 5.0e-3))
            .collect();
        let g = build_region_graph(&cell, &chans).unwrap();
        let k = exchange_matrix(&g);
        (g, k)
    }

    fn zero_rates(n_regions: usize) -> RateMatrix {
        RateMatrix {
            rates: DMatrix::zeros(n_regions, n_regions),
        }
    }

    #[test]
    fn saturated_pump_reaches_dark_state() {
        let (g, _) = graph_n(1);
        let atom = AtomParams::default();
        // no exchange, pump far above Gamma0
        let sys = assemble_drift(
            &g,
            &zero_rates(2),
            &[PumpDrive {
                rate: 1.0e6,
                phase: 0.0,
            }],
            &atom,
            0.0,
        )
        .unwrap();
        let ss = steady_state(&sys).unwrap();
        let sigma = ss.coherence[1];
        assert!((sigma.re - 1.0).abs() < 1e-4, "sigma = {sigma}");
        assert!(sigma.im.abs() < 1e-12);
    }

    #[test]
    fn pumps_off_gives_zero_everywhere() {
        let (g, k) = graph_n(2);
        let atom = AtomParams::default();
        let off = PumpDrive { rate: 0.0, phase: 0.0 };
        let sys = assemble_drift(&g, &k, &[off, off], &atom, 0.0).unwrap();
        let ss = steady_state(&sys).unwrap();
        for s in ss.coherence {
            assert_eq!(s, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn drive_phase_doubles_polarization_angle() {
        let (g, k) = graph_n(1);
        let atom = AtomParams::default();
        let sys = assemble_drift(
            &g,
            &k,
            &[PumpDrive {
                rate: 500.0,
                phase: 2.0 * (PI / 2.0),
            }],
            &atom,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(sys.drive[1].re, -500.0, max_relative = 1e-12);
        assert!(sys.drive[1].im.abs() < 1e-9);
    }

    #[test]
    fn symmetric_channels_have_identical_coherence() {
        let (g, k) = graph_n(2);
        let atom = AtomParams::default();
        let p = PumpDrive { rate: 2.0e3, phase: 0.0 };
        let sys = assemble_drift(&g, &k, &[p, p], &atom, 0.0).unwrap();
        let ss = steady_state(&sys).unwrap();
        let d = (ss.coherence[1] - ss.coherence[2]).norm();
        assert!(d <= 1e-12 * ss.coherence[1].norm());
    }

    /// Independent oracle: Cramer's rule on the literal 3x3 system for one
    /// parameter set (ch1 unpumped, ch2 pumped, exchange on).
    #[test]
    fn unpumped_channel_imports_dark_coherence() {
        let (g, k) = graph_n(2);
        let atom = AtomParams::default();
        let gp = 3.0e3;
        let sys = assemble_drift(
            &g,
            &k,
            &[
                PumpDrive { rate: 0.0, phase: 0.0 },
                PumpDrive { rate: gp, phase: 0.0 },
            ],
            &atom,
            0.0,
        )
        .unwrap();
        let ss = steady_state(&sys).unwrap();

        // oracle: real 3x3 Cramer solve, built from first principles
        let g0 = atom.intrinsic_decay;
        let r = 1.0 / g.transit_times[0];
        let rho = (g.volume_fractions[1] / g.volume_fractions[0]) * r;
        // rows: dark, ch1, ch2 ; unknowns sigma0, sigma1, sigma2
        let a = [
            [-(g0 + 2.0 * rho), rho, rho],
            [r, -(g0 + r), 0.0],
            [r, 0.0, -(g0 + gp + r)],
        ];
        let b = [0.0, 0.0, -gp];
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(&a);
        let mut sol = [0.0; 3];
        for col in 0..3 {
            let mut m = a;
            for row in 0..3 {
                m[row][col] = b[row];
            }
            sol[col] = det3(&m) / d;
        }

        for i in 0..3 {
            assert_relative_eq!(ss.coherence[i].re, sol[i], max_relative = 1e-10);
            assert!(ss.coherence[i].im.abs() < 1e-14);
        }
        // coherence imported from the dark region: ch1 tracks the reservoir
        assert!(sol[1] > 0.0);
        assert_relative_eq!(sol[1], sol[0], max_relative = 1e-3);
    }

    #[test]
    fn infinite_decay_kills_coherence() {
        let (g, k) = graph_n(1);
        let mut atom = AtomParams::default();
        atom.intrinsic_decay = 1.0e12;
        let sys = assemble_drift(
            &g,
            &k,
            &[PumpDrive { rate: 1.0e3, phase: 0.0 }],
            &atom,
            0.0,
        )
        .unwrap();
        let ss = steady_state(&sys).unwrap();
        for s in &ss.coherence {
            assert!(s.norm() < 1e-8);
        }
    }

    #[test]
    fn steady_state_residual_is_tight() {
        let (g, k) = graph_n(3);
        let atom = AtomParams::default();
        let pumps: Vec<_> = [1.0e3, 5.0e3, 2.0e4]
            .iter()
            .map(|&rate| PumpDrive { rate, phase: 0.3 })
            .collect();
        let sys = assemble_drift(&g, &k, &pumps, &atom, 0.0).unwrap();
        let ss = steady_state(&sys).unwrap();
        let sigma = DVector::from_vec(ss.coherence.clone());
        let res = (&sys.drift * sigma + &sys.drive).norm();
        assert!(res <= 1e-10 * sys.drive.norm());
    }

    #[test]
    fn coherence_magnitude_bounded_by_one() {
        let (g, k) = graph_n(2);
        let atom = AtomParams::default();
        for &(p1, p2) in &[(1.0e2, 1.0e5), (5.0e4, 5.0e4), (1.0e7, 3.0e2)] {
            let sys = assemble_drift(
                &g,
                &k,
                &[
                    PumpDrive { rate: p1, phase: 0.0 },
                    PumpDrive { rate: p2, phase: 0.4 },
                ],
                &atom,
                0.0,
            )
            .unwrap();
            let ss = steady_state(&sys).unwrap();
            for s in &ss.coherence {
                assert!(s.norm() <= 1.0 + 1e-9, "|sigma| = {}", s.norm());
            }
        }
    }

    #[test]
    fn adding_a_pumped_channel_never_lowers_coherence_elsewhere() {
        let cell = CellConfig::default();
        let atom = AtomParams::default();
        for &(gp1, gp2) in &[(5.0e2, 1.0e3), (2.0e3, 8.0e3), (1.0e4, 3.0e4), (4.0e4, 4.0e2)] {
            let one = build_region_graph(&cell, &[ChannelConfig::new("a", 1.0)]).unwrap();
            let k1 = exchange_matrix(&one);
            let sys1 = assemble_drift(
                &one,
                &k1,
                &[PumpDrive { rate: gp1, phase: 0.0 }],
                &atom,
                0.0,
            )
            .unwrap();
            let base = steady_state(&sys1).unwrap();

            let two = build_region_graph(
                &cell,
                &[ChannelConfig::new("a", 1.0), ChannelConfig::new("b", 1.0)],
            )
            .unwrap();
            let k2 = exchange_matrix(&two);
            let sys2 = assemble_drift(
                &two,
                &k2,
                &[
                    PumpDrive { rate: gp1, phase: 0.0 },
                    PumpDrive { rate: gp2, phase: 0.0 },
                ],
                &atom,
                0.0,
            )
            .unwrap();
            let paired = steady_state(&sys2).unwrap();

            assert!(paired.coherence[0].norm() >= base.coherence[0].norm() - 1e-12);
            assert!(paired.coherence[1].norm() >= base.coherence[1].norm() - 1e-12);
        }
    }

    #[test]
    fn susceptibility_limits() {
        let (g, k) = graph_n(1);
        let atom = AtomParams::default();
        let sys = assemble_drift(
            &g,
            &k,
            &[PumpDrive { rate: 1.0e3, phase: 0.0 }],
            &atom,
            0.0,
        )
        .unwrap();
        // chi(0) = -A^{-1}
        let chi0 = susceptibility(&sys, 0.0).unwrap();
        let inv = (-sys.drift.clone()).try_inverse().unwrap();
        assert!((chi0.clone() - inv).norm() <= 1e-12 * chi0.norm());
        // ||chi(w)|| ~ 1/w at large w
        let w1 = 1.0e9;
        let chi = susceptibility(&sys, w1).unwrap();
        assert_relative_eq!(chi.norm() * w1, (sys.n_regions() as f64).sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn scalar_lorentzian_psd() {
        // single dark region, no channels: A = -Gamma0
        let cell = CellConfig::default();
        let g = build_region_graph(&cell, &[]).unwrap();
        let k = exchange_matrix(&g);
        let mut atom = AtomParams::default();
        atom.intrinsic_decay = 150.0;
        let c_d = 2.5;
        let sys = assemble_drift(&g, &k, &[], &atom, c_d).unwrap();
        let d = c_d * 150.0;
        for &w in &[0.0, 40.0, 150.0, 1.0e3, 4.0e4] {
            let s = spin_noise_psd(&sys, w).unwrap()[0];
            assert_relative_eq!(s, d / (w * w + 150.0 * 150.0), max_relative = 1e-12);
        }
        // |chi|^2 for the scalar case is an exact Lorentzian
        let chi = susceptibility(&sys, 450.0).unwrap()[(0, 0)];
        assert_relative_eq!(
            chi.norm_sqr(),
            1.0 / (450.0f64.powi(2) + 150.0f64.powi(2)),
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_diffusion_gives_zero_psd() {
        let (g, k) = graph_n(2);
        let atom = AtomParams::default();
        let p = PumpDrive { rate: 1.0e3, phase: 0.0 };
        let sys = assemble_drift(&g, &k, &[p, p], &atom, 0.0).unwrap();
        for &s in &spin_noise_psd(&sys, 2.0e5).unwrap() {
            assert_eq!(s, 0.0);
        }
    }

    /// Quadrature oracle: integrating the scalar PSD over frequency recovers
    /// the closed-form variance D/(2 Gamma).
    #[test]
    fn psd_integral_matches_lyapunov_variance() {
        let cell = CellConfig::default();
        let g = build_region_graph(&cell, &[]).unwrap();
        let k = exchange_matrix(&g);
        let mut atom = AtomParams::default();
        let gamma = 200.0;
        atom.intrinsic_decay = gamma;
        let c_d = 3.0;
        let sys = assemble_drift(&g, &k, &[], &atom, c_d).unwrap();
        let d = c_d * gamma;

        // trapezoid over [-X, X], X = 1e4 * Gamma; tail correction is ~1e-4
        let x = 1.0e4 * gamma;
        let n = 400_000usize;
        let h = 2.0 * x / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = -x + i as f64 * h;
            let s = spin_noise_psd(&sys, w).unwrap()[0];
            let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += weight * s;
        }
        let var = acc * h / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(var, d / (2.0 * gamma), max_relative = 1e-3);
    }
}
