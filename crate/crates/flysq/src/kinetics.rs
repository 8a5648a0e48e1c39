//! Compartment model of the cell: channel regions, the dark region, and the
//! atom-exchange rates that couple them.
//!
//! The cell is treated as well stirred: an atom's position is not tracked,
//! only which region it currently occupies. Each illuminated beam is a
//! cylindrical region; everything else is the dark region. Exchange between a
//! channel and the dark region is a first-order rate process set by the
//! transit time through the beam, with the return rate fixed by stationarity
//! of the uniform density.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default mean thermal speed (m/s), chosen so a 1.5 mm beam gives the
/// apparatus transit time of 5 us.
pub const DEFAULT_MEAN_SPEED: f64 = 300.0;

/// Vapor-cell geometry and coherence timescales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Cell length (m).
    pub length: f64,
    /// Inner diameter (m).
    pub diameter: f64,
    /// Ground-state coherence lifetime (s).
    pub coherence_lifetime: f64,
    /// Mean time between wall collisions (s); informational, the coating is
    /// assumed coherence-preserving.
    pub wall_collision_interval: f64,
    /// Operating temperature (deg C); informational.
    pub temperature: f64,
    /// Mean thermal speed used for transit times (m/s).
    pub mean_thermal_speed: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            length: 0.075,
            diameter: 0.025,
            coherence_lifetime: 0.030,
            wall_collision_interval: 1.0e-4,
            temperature: 55.0,
            mean_thermal_speed: DEFAULT_MEAN_SPEED,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length <= 0.0 || self.diameter <= 0.0 {
            return Err(Error::domain("cell dimensions must be positive"));
        }
        if self.coherence_lifetime <= 0.0 || self.wall_collision_interval <= 0.0 {
            return Err(Error::domain("cell timescales must be positive"));
        }
        if self.coherence_lifetime <= self.wall_collision_interval {
            return Err(Error::domain(
                "coherence lifetime must exceed the wall-collision interval",
            ));
        }
        if self.mean_thermal_speed <= 0.0 {
            return Err(Error::domain("mean thermal speed must be positive"));
        }
        Ok(())
    }

    /// Intrinsic ground-state decay rate 1/T2 (s^-1).
    pub fn intrinsic_decay(&self) -> f64 {
        1.0 / self.coherence_lifetime
    }
}

/// One optical channel: a beam position, power, polarization and detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub id: String,
    /// Input power before the cell (W).
    pub power: f64,
    /// Beam diameter inside the cell (m).
    pub beam_diameter: f64,
    /// Linear-polarization angle from the x axis (rad), interpreted mod pi.
    pub polarization_angle: f64,
    /// Laser detuning (Hz) relative to the F=2 -> F'=2 transition.
    pub detuning: f64,
    /// Beam position in the transverse plane (m); recorded, unused by the
    /// well-stirred kinetics.
    pub position: (f64, f64),
    pub enabled: bool,
}

impl ChannelConfig {
    pub fn new(id: impl Into<String>, power: f64) -> Self {
        ChannelConfig {
            id: id.into(),
            power,
            beam_diameter: 1.5e-3,
            polarization_angle: 0.0,
            detuning: 0.0,
            position: (0.0, 0.0),
            enabled: true,
        }
    }

    pub fn validate(&self, cell: &CellConfig) -> Result<()> {
        if self.power < 0.0 {
            return Err(Error::domain(format!(
                "channel `{}`: power must be non-negative",
                self.id
            )));
        }
        if self.beam_diameter <= 0.0 {
            return Err(Error::domain(format!(
                "channel `{}`: beam diameter must be positive",
                self.id
            )));
        }
        if self.beam_diameter >= cell.diameter {
            return Err(Error::domain(format!(
                "channel `{}`: beam diameter {} m does not fit in the cell bore {} m",
                self.id, self.beam_diameter, cell.diameter
            )));
        }
        Ok(())
    }

    /// Detuning re-referenced to the lower excited state F'=1 (Hz), the frame
    /// in which the two-resonance lineshapes are written.
    pub fn detuning_from_f1(&self, hyperfine_splitting: f64) -> f64 {
        self.detuning + hyperfine_splitting
    }
}

/// Transit time of an atom crossing a beam at the given mean speed.
pub fn transit_time(channel: &ChannelConfig, mean_speed: f64) -> Result<f64> {
    if channel.beam_diameter <= 0.0 {
        return Err(Error::domain("beam diameter must be positive"));
    }
    if mean_speed <= 0.0 {
        return Err(Error::domain("mean speed must be positive"));
    }
    Ok(channel.beam_diameter / mean_speed)
}

/// The compartment layout: region 0 is the dark region, regions 1..=N are the
/// enabled channels in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    /// Fraction of the cell volume occupied by each region; index 0 is dark.
    pub volume_fractions: Vec<f64>,
    /// Transit time through each channel region (s); one entry per channel.
    pub transit_times: Vec<f64>,
    /// Ids of the enabled channels, in region order (region i+1 <-> ids[i]).
    pub channel_ids: Vec<String>,
}

impl RegionGraph {
    /// Number of regions including the dark region.
    pub fn n_regions(&self) -> usize {
        self.volume_fractions.len()
    }

    /// Number of channel regions.
    pub fn n_channels(&self) -> usize {
        self.transit_times.len()
    }
}

/// Build the compartment layout from the cell and the enabled channels.
///
/// Channel volume fractions are area ratios of cylinders of equal length:
/// `(d_beam/2)^2 / (d_cell/2)^2`. Disabled channels contribute no region.
pub fn build_region_graph(cell: &CellConfig, channels: &[ChannelConfig]) -> Result<RegionGraph> {
    cell.validate()?;
    let mut fractions = Vec::new();
    let mut taus = Vec::new();
    let mut ids = Vec::new();
    for ch in channels.iter().filter(|c| c.enabled) {
        ch.validate(cell)?;
        let f = (ch.beam_diameter / cell.diameter).powi(2);
        fractions.push(f);
        taus.push(transit_time(ch, cell.mean_thermal_speed)?);
        ids.push(ch.id.clone());
    }
    let total: f64 = fractions.iter().sum();
    if total >= 1.0 {
        return Err(Error::config(format!(
            "channel regions fill fraction {total:.4} of the cell cross-section; must be < 1"
        )));
    }
    let mut volume_fractions = vec![1.0 - total];
    volume_fractions.extend(fractions);
    Ok(RegionGraph {
        volume_fractions,
        transit_times: taus,
        channel_ids: ids,
    })
}

/// Kinetic exchange-rate matrix on atom numbers.
///
/// `K[(i, j)]` is the flow rate (s^-1, per atom in region j) from region j
/// into region i; diagonal entries are minus the total outflow, so every
/// column sums to zero and the uniform density is stationary: `K f = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    pub rates: DMatrix<f64>,
}

impl RateMatrix {
    pub fn n_regions(&self) -> usize {
        self.rates.nrows()
    }
}

/// Derive the exchange rates from the region graph.
///
/// A channel loses atoms to the dark region at `1/tau`; the dark region feeds
/// each channel at `(f_i/f_0)/tau_i` so that pairwise fluxes balance. Beams
/// are spatially disjoint, so there is no direct channel-to-channel term.
pub fn exchange_matrix(graph: &RegionGraph) -> RateMatrix {
    let n = graph.n_regions();
    let f0 = graph.volume_fractions[0];
    let mut k = DMatrix::zeros(n, n);
    for (c, &tau) in graph.transit_times.iter().enumerate() {
        let i = c + 1;
        let fi = graph.volume_fractions[i];
        let out = 1.0 / tau;
        let back = (fi / f0) * out;
        k[(0, i)] = out;
        k[(i, i)] = -out;
        k[(i, 0)] = back;
        k[(0, 0)] -= back;
    }
    RateMatrix { rates: k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn channel(d: f64) -> ChannelConfig {
        let mut ch = ChannelConfig::new("ch", 4.5e-3);
        ch.beam_diameter = d;
        ch
    }

    #[test]
    fn transit_time_matches_apparatus() {
        let ch = channel(1.5e-3);
        assert_relative_eq!(transit_time(&ch, 300.0).unwrap(), 5.0e-6, max_relative = 1e-12);
        assert_relative_eq!(
            transit_time(&channel(3.0e-3), 300.0).unwrap(),
            10.0e-6,
            max_relative = 1e-12
        );
        assert_relative_eq!(transit_time(&ch, 600.0).unwrap(), 2.5e-6, max_relative = 1e-12);
    }

    #[test]
    fn transit_time_rejects_nonpositive_inputs() {
        assert!(transit_time(&channel(0.0), 300.0).is_err());
        assert!(transit_time(&channel(1.5e-3), 0.0).is_err());
        assert!(transit_time(&channel(1.5e-3), -1.0).is_err());
    }

    #[test]
    fn single_channel_fractions() {
        let cell = CellConfig::default();
        let g = build_region_graph(&cell, &[channel(1.5e-3)]).unwrap();
        // (0.75/12.5)^2 = 0.0036
        assert_relative_eq!(g.volume_fractions[1], 0.0036, max_relative = 1e-12);
        assert_relative_eq!(g.volume_fractions[0], 0.9964, max_relative = 1e-12);
    }

    #[test]
    fn empty_and_four_channel_fractions() {
        let cell = CellConfig::default();
        let g = build_region_graph(&cell, &[]).unwrap();
        assert_eq!(g.n_regions(), 1);
        assert_relative_eq!(g.volume_fractions[0], 1.0);

        let chans: Vec<_> = (0..4).map(|_| channel(1.5e-3)).collect();
        let g = build_region_graph(&cell, &chans).unwrap();
        assert_relative_eq!(g.volume_fractions[0], 1.0 - 4.0 * 0.0036, max_relative = 1e-12);
    }

    #[test]
    fn overfull_cross_section_rejected() {
        let cell = CellConfig::default();
        // 278 beams of 1.5 mm: 278 * 0.0036 = 1.0008 >= 1
        let chans: Vec<_> = (0..278).map(|_| channel(1.5e-3)).collect();
        let err = build_region_graph(&cell, &chans).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
        assert!(err.to_string().contains("1.000"), "message: {err}");
    }

    #[test]
    fn disabled_channels_contribute_nothing() {
        let cell = CellConfig::default();
        let mut off = channel(1.5e-3);
        off.enabled = false;
        let with = build_region_graph(&cell, &[channel(1.5e-3), off]).unwrap();
        let without = build_region_graph(&cell, &[channel(1.5e-3)]).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn exchange_rates_match_flux_balance() {
        let cell = CellConfig::default();
        let g = build_region_graph(&cell, &[channel(1.5e-3)]).unwrap();
        let k = exchange_matrix(&g);
        assert_relative_eq!(k.rates[(0, 1)], 2.0e5, max_relative = 1e-12);
        let expected = (0.0036 / 0.9964) * 2.0e5; // ~722.6 s^-1
        assert_relative_eq!(k.rates[(1, 0)], expected, max_relative = 1e-12);
        assert!((k.rates[(1, 0)] - 722.6).abs() < 0.1);
    }

    #[test]
    fn columns_sum_to_zero_and_uniform_density_is_stationary() {
        let cell = CellConfig::default();
        let chans: Vec<_> = [1.0e-3, 1.5e-3, 2.5e-3].iter().map(|&d| channel(d)).collect();
        let g = build_region_graph(&cell, &chans).unwrap();
        let k = exchange_matrix(&g);
        let scale = k.rates.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        for j in 0..k.n_regions() {
            let col: f64 = (0..k.n_regions()).map(|i| k.rates[(i, j)]).sum();
            assert!(col.abs() <= 1e-12 * scale);
        }
        let f = nalgebra::DVector::from_vec(g.volume_fractions.clone());
        let kf = &k.rates * f;
        assert!(kf.amax() <= 1e-12 * scale);
    }

    #[test]
    fn doubling_beam_diameter_halves_outflow_and_quadruples_fraction() {
        let cell = CellConfig::default();
        let g1 = build_region_graph(&cell, &[channel(1.0e-3)]).unwrap();
        let g2 = build_region_graph(&cell, &[channel(2.0e-3)]).unwrap();
        let k1 = exchange_matrix(&g1);
        let k2 = exchange_matrix(&g2);
        assert_relative_eq!(k2.rates[(0, 1)], 0.5 * k1.rates[(0, 1)], max_relative = 1e-12);
        assert_relative_eq!(
            g2.volume_fractions[1],
            4.0 * g1.volume_fractions[1],
            max_relative = 1e-12
        );
    }
}
