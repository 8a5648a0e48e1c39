//! Fitting the free model constants to the published data points.
//!
//! The optimizer is a plain Nelder-Mead simplex in the log of the free
//! parameters, with box bounds enforced by clamping at evaluation time. The
//! loss for each point target is its dB error normalized by the target's
//! tolerance, raised to the fourth power: flat inside the tolerance band,
//! steep outside, so the fit refuses to trade one point past its band for
//! small gains elsewhere. The squeezing ceiling enters the same way around
//! its bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::{bench_channel, max_single_channel_squeezing_db, SqueezeModel};

/// Identifies one calibratable constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    NonlinearGain,
    BaseOpticalDepth,
    DepumpSatPower,
    PumpSatPower,
    PumpCoeff,
    SqueezingCutoff,
    Efficiency,
    TechNoise,
    SpinNoiseScale,
}

impl ParamId {
    pub const ALL: [ParamId; 9] = [
        ParamId::NonlinearGain,
        ParamId::BaseOpticalDepth,
        ParamId::DepumpSatPower,
        ParamId::PumpSatPower,
        ParamId::PumpCoeff,
        ParamId::SqueezingCutoff,
        ParamId::Efficiency,
        ParamId::TechNoise,
        ParamId::SpinNoiseScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::NonlinearGain => "nonlinear_gain",
            ParamId::BaseOpticalDepth => "base_optical_depth",
            ParamId::DepumpSatPower => "depump_sat_power",
            ParamId::PumpSatPower => "pump_sat_power",
            ParamId::PumpCoeff => "pump_coeff",
            ParamId::SqueezingCutoff => "squeezing_cutoff",
            ParamId::Efficiency => "efficiency",
            ParamId::TechNoise => "tech_noise",
            ParamId::SpinNoiseScale => "spin_noise_scale",
        }
    }

    pub fn get(self, model: &SqueezeModel) -> f64 {
        match self {
            ParamId::NonlinearGain => model.optics.nonlinear_gain,
            ParamId::BaseOpticalDepth => model.optics.base_optical_depth,
            ParamId::DepumpSatPower => model.optics.depump_sat_power,
            ParamId::PumpSatPower => model.optics.pump_sat_power,
            ParamId::PumpCoeff => model.optics.pump_coeff,
            ParamId::SqueezingCutoff => model.optics.squeezing_cutoff,
            ParamId::Efficiency => model.optics.efficiency,
            ParamId::TechNoise => model.optics.tech_noise,
            ParamId::SpinNoiseScale => model.noise_scale,
        }
    }

    pub fn set(self, model: &mut SqueezeModel, value: f64) {
        match self {
            ParamId::NonlinearGain => model.optics.nonlinear_gain = value,
            ParamId::BaseOpticalDepth => model.optics.base_optical_depth = value,
            ParamId::DepumpSatPower => model.optics.depump_sat_power = value,
            ParamId::PumpSatPower => model.optics.pump_sat_power = value,
            ParamId::PumpCoeff => model.optics.pump_coeff = value,
            ParamId::SqueezingCutoff => model.optics.squeezing_cutoff = value,
            ParamId::Efficiency => model.optics.efficiency = value,
            ParamId::TechNoise => model.optics.tech_noise = value,
            ParamId::SpinNoiseScale => model.noise_scale = value,
        }
    }
}

/// The cell configuration a point target is measured on: a set of co-located
/// drive powers at one common detuning, observed at one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScenario {
    /// Input powers (W), one enabled channel per entry.
    pub powers_w: Vec<f64>,
    /// Common detuning (Hz) relative to F=2 -> F'=2.
    pub detuning_hz: f64,
    /// Index of the observed channel.
    pub observe: usize,
}

impl TargetScenario {
    pub fn evaluate(&self, model: &SqueezeModel, freq_hz: f64) -> Result<f64> {
        if self.observe >= self.powers_w.len() {
            return Err(Error::config(format!(
                "target observes channel {} of {}",
                self.observe,
                self.powers_w.len()
            )));
        }
        let channels: Vec<_> = self
            .powers_w
            .iter()
            .enumerate()
            .map(|(i, &p)| bench_channel(&format!("t{i}"), p, self.detuning_hz))
            .collect();
        model.observed_v_min_db(&channels, &format!("t{}", self.observe), freq_hz)
    }
}

/// One measured data point the fit must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTarget {
    pub name: String,
    pub scenario: TargetScenario,
    /// Detection frequency (Hz).
    pub freq_hz: f64,
    /// Measured level (dB relative to shot noise).
    pub observed_db: f64,
    pub weight: f64,
    /// Half-width of the acceptance band used to normalize the loss (dB).
    pub fit_tolerance_db: f64,
}

/// The maximum-squeezing bound over a power/detuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingTarget {
    /// Bound on achievable single-channel squeezing (positive dB).
    pub target_db: f64,
    pub tolerance_db: f64,
    pub max_power_w: f64,
    /// Detunings scanned over [-span, +span] around F'=2.
    pub detuning_span_hz: f64,
    pub power_points: usize,
    pub detuning_points: usize,
}

impl CeilingTarget {
    pub fn evaluate(&self, model: &SqueezeModel) -> Result<f64> {
        let powers: Vec<f64> = (1..=self.power_points)
            .map(|i| self.max_power_w * i as f64 / self.power_points as f64)
            .collect();
        let dets: Vec<f64> = (0..self.detuning_points)
            .map(|i| {
                -self.detuning_span_hz
                    + 2.0 * self.detuning_span_hz * i as f64
                        / (self.detuning_points - 1) as f64
            })
            .collect();
        max_single_channel_squeezing_db(model, &powers, &dets)
    }
}

/// Free parameters, bounds, and targets of one calibration problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub free: Vec<ParamId>,
    pub targets: Vec<PointTarget>,
    pub ceiling: Option<CeilingTarget>,
    pub bounds: BTreeMap<ParamId, (f64, f64)>,
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        let n_targets = self.targets.len() + usize::from(self.ceiling.is_some());
        if n_targets < 5 {
            return Err(Error::config(format!(
                "calibration needs at least 5 targets, got {n_targets}"
            )));
        }
        for id in &self.free {
            match self.bounds.get(id) {
                None => {
                    return Err(Error::config(format!(
                        "free parameter `{}` has no bounds",
                        id.name()
                    )))
                }
                Some(&(lo, hi)) => {
                    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                        return Err(Error::config(format!(
                            "bounds for `{}` must be finite, positive and ordered",
                            id.name()
                        )));
                    }
                }
            }
        }
        for t in &self.targets {
            if t.fit_tolerance_db <= 0.0 || t.weight < 0.0 {
                return Err(Error::config(format!(
                    "target `{}`: weight must be >= 0 and tolerance > 0",
                    t.name
                )));
            }
        }
        Ok(())
    }

    /// The shipped target set: the two-channel and array data points plus
    /// the low-frequency anchor and the squeezing ceiling.
    pub fn paper_defaults() -> Self {
        let mw = 1.0e-3;
        let blue = 3.48e8;
        let point = |name: &str,
                     powers_mw: &[f64],
                     observe: usize,
                     freq_hz: f64,
                     observed_db: f64,
                     tol: f64| PointTarget {
            name: name.into(),
            scenario: TargetScenario {
                powers_w: powers_mw.iter().map(|p| p * mw).collect(),
                detuning_hz: blue,
                observe,
            },
            freq_hz,
            observed_db,
            weight: 1.0,
            fit_tolerance_db: tol,
        };
        let targets = vec![
            point("fig2_ch1_alone", &[4.5], 0, 4.0e4, 0.0, 0.09),
            point("fig2_ch1_with_ch2", &[4.5, 11.0], 0, 4.0e4, -0.45, 0.08),
            point("fig5_array_channel_d", &[4.25, 4.25, 4.25, 4.25], 3, 4.0e4, -0.75, 0.09),
            point("fig5_single_7mw", &[7.0], 0, 4.0e4, -0.75, 0.115),
            point("fig2_ch1_with_ch2_10khz", &[4.5, 11.0], 0, 1.0e4, -0.05, 0.08),
        ];
        let mut bounds = BTreeMap::new();
        bounds.insert(ParamId::NonlinearGain, (1.0, 5.0e4));
        bounds.insert(ParamId::BaseOpticalDepth, (1.0, 1.0e2));
        bounds.insert(ParamId::DepumpSatPower, (2.0e-5, 5.0e-2));
        bounds.insert(ParamId::PumpSatPower, (2.0e-3, 2.0e-1));
        bounds.insert(ParamId::PumpCoeff, (1.0e6, 5.0e9));
        bounds.insert(
            ParamId::SqueezingCutoff,
            (2.0 * std::f64::consts::PI * 2.5e3, 2.0 * std::f64::consts::PI * 2.0e5),
        );
        bounds.insert(ParamId::Efficiency, (0.5, 1.0));
        bounds.insert(ParamId::TechNoise, (1.0e2, 8.0e4));
        bounds.insert(ParamId::SpinNoiseScale, (1.0e3, 1.0e10));
        CalibrationSet {
            free: vec![
                ParamId::NonlinearGain,
                ParamId::PumpCoeff,
                ParamId::PumpSatPower,
                ParamId::DepumpSatPower,
                ParamId::SqueezingCutoff,
                ParamId::SpinNoiseScale,
                ParamId::TechNoise,
            ],
            targets,
            ceiling: Some(CeilingTarget {
                target_db: 1.5,
                tolerance_db: 0.10,
                max_power_w: 15.0e-3,
                detuning_span_hz: 1.0e9,
                power_points: 12,
                detuning_points: 21,
            }),
            bounds,
        }
    }
}

/// Result of a calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub fitted: SqueezeModel,
    /// Fitted values of the free parameters, by name.
    pub values: BTreeMap<String, f64>,
    /// Plain (unweighted) dB RMS over the point targets.
    pub rms_db: f64,
    /// Model-vs-target error per point target, in dB.
    pub errors_db: BTreeMap<String, f64>,
    /// Ceiling level at the fit (positive dB), if a ceiling target was set.
    pub ceiling_db: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Set when the residual exceeds the 0.3 dB quality gate.
    pub warning: Option<String>,
    /// (iteration, best objective) at every improvement.
    pub log: Vec<(usize, f64)>,
}

struct Objective<'a> {
    seed: &'a SqueezeModel,
    set: &'a CalibrationSet,
}

impl Objective<'_> {
    fn model_at(&self, log_x: &[f64]) -> SqueezeModel {
        let mut model = self.seed.clone();
        for (id, &lx) in self.set.free.iter().zip(log_x) {
            let (lo, hi) = self.set.bounds[id];
            let v = lx.exp().clamp(lo, hi);
            id.set(&mut model, v);
        }
        model
    }

    /// Quartic tolerance-normalized loss; unstable parameter regions (solver
    /// failures) evaluate to +inf so the simplex rejects the step.
    fn loss(&self, log_x: &[f64]) -> f64 {
        let model = self.model_at(log_x);
        let mut total = 0.0;
        for t in &self.set.targets {
            match t.scenario.evaluate(&model, t.freq_hz) {
                Ok(db) => {
                    let e = (db - t.observed_db) / t.fit_tolerance_db;
                    total += t.weight * e.powi(4);
                }
                Err(_) => return f64::INFINITY,
            }
        }
        if let Some(c) = &self.set.ceiling {
            match c.evaluate(&model) {
                Ok(level) => {
                    let e = (level - c.target_db) / c.tolerance_db;
                    total += e.powi(4);
                }
                Err(_) => return f64::INFINITY,
            }
        }
        if total.is_nan() {
            f64::INFINITY
        } else {
            total
        }
    }
}

/// Plain Nelder-Mead with standard coefficients. Returns the best vertex,
/// its value, iterations used, evaluation count, convergence flag, and an
/// improvement log.
#[allow(clippy::type_complexity)]
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    rel_tol: f64,
) -> (Vec<f64>, f64, usize, usize, bool, Vec<(usize, f64)>) {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let mut log = Vec::new();
    let mut best_seen = f64::INFINITY;

    let mut iter = 0usize;
    let mut converged = false;
    while iter < max_iter {
        iter += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in simplex"));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if values[best] < best_seen {
            best_seen = values[best];
            log.push((iter, best_seen));
        }

        // relative simplex diameter against the best vertex
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < rel_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| {
                order[..n]
                    .iter()
                    .map(|&i| simplex[i][d])
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| c + (c - w))
            .collect();
        let f_reflect = eval(&reflect, &mut evals);

        if f_reflect < values[best] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let f_expand = eval(&expand, &mut evals);
            if f_expand < f_reflect {
                simplex[worst] = expand;
                values[worst] = f_expand;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_reflect;
            }
        } else if f_reflect < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_reflect;
        } else {
            let contract: Vec<f64> = if f_reflect < values[worst] {
                centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| c + 0.5 * (r - c))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(&simplex[worst])
                    .map(|(c, w)| c + 0.5 * (w - c))
                    .collect()
            };
            let f_contract = eval(&contract, &mut evals);
            if f_contract < values[worst].min(f_reflect) {
                simplex[worst] = contract;
                values[worst] = f_contract;
            } else {
                // shrink toward the best vertex
                let anchor = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for d in 0..n {
                        simplex[i][d] = anchor[d] + 0.5 * (simplex[i][d] - anchor[d]);
                    }
                    values[i] = eval(&simplex[i], &mut evals);
                }
            }
        }
    }

    let best_idx = (0..=n)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN"))
        .expect("non-empty simplex");
    (
        simplex[best_idx].clone(),
        values[best_idx],
        iter,
        evals,
        converged,
        log,
    )
}

/// Fit the free constants to the target set, starting from `seed`.
///
/// Deterministic given the seed model and target set. Runs the simplex to
/// convergence (relative diameter < 1e-6 or 2000 iterations), then twice
/// more from the incumbent with a smaller initial step.
pub fn calibrate(seed: &SqueezeModel, set: &CalibrationSet) -> Result<CalibrationOutcome> {
    set.validate()?;
    seed.optics.validate()?;
    let objective = Objective { seed, set };

    let mut x: Vec<f64> = set
        .free
        .iter()
        .map(|id| {
            let (lo, hi) = set.bounds[id];
            id.get(seed).clamp(lo, hi).ln()
        })
        .collect();

    let mut iterations = 0usize;
    let mut evaluations = 0usize;
    let mut converged = true;
    let mut log = Vec::new();
    let mut value = f64::INFINITY;

    if !x.is_empty() {
        for &step in &[0.15, 0.03, 0.006] {
            let mut f = |lx: &[f64]| objective.loss(lx);
            let (bx, bv, it, ev, conv, mut lg) = nelder_mead(&mut f, &x, step, 2000, 1e-6);
            x = bx;
            value = bv;
            iterations += it;
            evaluations += ev;
            converged &= conv;
            log.append(&mut lg);
        }
    } else {
        value = objective.loss(&x);
        evaluations = 1;
    }

    let fitted = objective.model_at(&x);
    let mut errors_db = BTreeMap::new();
    let mut sum_sq = 0.0;
    for t in &set.targets {
        let db = t.scenario.evaluate(&fitted, t.freq_hz)?;
        let e = db - t.observed_db;
        errors_db.insert(t.name.clone(), e);
        sum_sq += e * e;
    }
    let rms_db = (sum_sq / set.targets.len().max(1) as f64).sqrt();
    let ceiling_db = match &set.ceiling {
        Some(c) => Some(c.evaluate(&fitted)?),
        None => None,
    };
    let values = set
        .free
        .iter()
        .map(|id| (id.name().to_string(), id.get(&fitted)))
        .collect();
    let warning = if rms_db > 0.3 {
        Some(format!(
            "calibration residual {rms_db:.3} dB exceeds the 0.3 dB quality gate"
        ))
    } else {
        None
    };
    let _ = value;
    Ok(CalibrationOutcome {
        fitted,
        values,
        rms_db,
        errors_db,
        ceiling_db,
        iterations,
        evaluations,
        converged,
        warning,
        log,
    })
}

/// Build a synthetic target set whose observed values are the model's own
/// predictions at the given constants (used for round-trip validation).
pub fn synthetic_targets(model: &SqueezeModel) -> Result<Vec<PointTarget>> {
    let mw = 1.0e-3;
    let blue = 3.48e8;
    let red = crate::scenarios::DETUNING_RED_56;
    let specs: Vec<(&str, Vec<f64>, usize, f64, f64)> = vec![
        ("syn_single_2mw", vec![2.0 * mw], 0, blue, 4.0e4),
        ("syn_single_7mw", vec![7.0 * mw], 0, blue, 4.0e4),
        ("syn_single_12mw", vec![12.0 * mw], 0, blue, 4.0e4),
        ("syn_pair_40khz", vec![4.5 * mw, 11.0 * mw], 0, blue, 4.0e4),
        ("syn_pair_10khz", vec![4.5 * mw, 11.0 * mw], 0, blue, 1.0e4),
        ("syn_pair_100khz", vec![4.5 * mw, 11.0 * mw], 0, blue, 1.0e5),
        ("syn_red_5mw", vec![5.0 * mw], 0, red, 4.0e4),
        ("syn_red_10mw", vec![10.0 * mw], 0, red, 4.0e4),
        ("syn_mid_3mw", vec![3.0 * mw], 0, -2.5e8, 4.0e4),
        ("syn_array", vec![4.25 * mw; 4], 3, blue, 4.0e4),
    ];
    specs
        .into_iter()
        .map(|(name, powers_w, observe, detuning_hz, freq_hz)| {
            let scenario = TargetScenario {
                powers_w,
                detuning_hz,
                observe,
            };
            let observed_db = scenario.evaluate(model, freq_hz)?;
            Ok(PointTarget {
                name: name.into(),
                scenario,
                freq_hz,
                observed_db,
                weight: 1.0,
                fit_tolerance_db: 0.01,
            })
        })
        .collect()
}
