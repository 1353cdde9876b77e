//! Two-arm projection interferometer and threshold photon counting.
//!
//! The input `alpha|R> + beta|L>` is split 50:50. Arm R carries a fork
//! hologram and single-mode fiber that transmit `|l=+1>`, arm L the mirror
//! image for `|l=-1>`. The fibers meet at a 50:50 coupler with outputs X and
//! Y, and arm L picks up the interferometer phase `phi`:
//!
//! ```text
//! X = (A_R + e^{i phi} A_L)/sqrt2     Y = (A_R - e^{i phi} A_L)/sqrt2
//! A_R = sqrt(eta_R/2) (alpha + sqrt(eps_R) beta)
//! A_L = sqrt(eta_L/2) (beta + sqrt(eps_L) alpha)
//! ```
//!
//! `eps` is the power leaked from the opposite qubit mode relative to the
//! arm's target transmission `eta`; the leaked amplitude keeps the phase of
//! the input component it came from. For an ideal device this reduces to
//! `X = (alpha + e^{i phi} beta)/2`, so `phi = 0, pi/2, pi, 3pi/2` send
//! `|H>, |A>, |V>, |D>` to X.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qubit::PureQubit;
use crate::seed;

/// Hologram diffraction efficiency of the fork gratings.
pub const DIFFRACTION_EFFICIENCY: f64 = 0.8;
/// Single-mode fiber coupling efficiency of the converted mode.
pub const FIBER_COUPLING: f64 = 0.8;
/// Power lost at the tap that injects the phase-reference beam.
pub const REFERENCE_TAP_LOSS: f64 = 0.25;

/// Converts a suppression in dB (positive or negative) to a power ratio.
pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(-db.abs() / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    X,
    Y,
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Blocked {
    #[default]
    None,
    R,
    L,
}

/// Hologram + fiber mode projector in one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorPath {
    /// OAM value converted to the fundamental mode.
    pub target_l: i32,
    /// Power transmission of the target mode.
    pub efficiency: f64,
    /// Power coupling of other modes, relative to `efficiency`.
    #[serde(default)]
    pub leakage: BTreeMap<i32, f64>,
}

impl ProjectorPath {
    pub fn ideal(target_l: i32) -> Self {
        Self {
            target_l,
            efficiency: 1.0,
            leakage: BTreeMap::new(),
        }
    }

    /// Nominal projector: diffraction x coupling, no leakage.
    pub fn nominal(target_l: i32) -> Self {
        Self {
            efficiency: DIFFRACTION_EFFICIENCY * FIBER_COUPLING,
            ..Self::ideal(target_l)
        }
    }

    /// Builds a projector from absolute fiber couplings per input mode,
    /// scaled by the hologram diffraction efficiency.
    pub fn from_couplings(target_l: i32, couplings: &[(i32, f64)]) -> Result<Self> {
        let eta = couplings
            .iter()
            .find(|(l, _)| *l == target_l)
            .map(|(_, c)| *c)
            .ok_or_else(|| invalid("couplings", format!("no entry for target l={target_l}")))?;
        let leakage = couplings
            .iter()
            .filter(|(l, _)| *l != target_l)
            .map(|&(l, c)| (l, c / eta))
            .collect();
        let p = Self {
            target_l,
            efficiency: DIFFRACTION_EFFICIENCY * eta,
            leakage,
        };
        p.validate()?;
        Ok(p)
    }

    /// Measured R-arm couplings (target `l = +1`).
    pub fn measured_r() -> Self {
        Self::from_couplings(
            1,
            &[(-2, 0.001), (-1, 0.005), (0, 0.001), (1, 0.823), (2, 0.057)],
        )
        .expect("valid preset")
    }

    /// Measured L-arm couplings (target `l = -1`).
    pub fn measured_l() -> Self {
        Self::from_couplings(
            -1,
            &[(-2, 0.028), (-1, 0.778), (0, 0.017), (1, 0.0003), (2, 0.0004)],
        )
        .expect("valid preset")
    }

    pub fn with_leakage(mut self, l: i32, relative: f64) -> Self {
        self.leakage.insert(l, relative);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency", format!("{} not in [0, 1]", self.efficiency)));
        }
        for (l, e) in &self.leakage {
            if !(0.0..=1.0).contains(e) {
                return Err(invalid("leakage", format!("l={l}: {e} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Amplitude transmission for input mode `l`.
    pub fn amplitude(&self, l: i32) -> f64 {
        if l == self.target_l {
            self.efficiency.sqrt()
        } else {
            (self.efficiency * self.leakage.get(&l).copied().unwrap_or(0.0)).sqrt()
        }
    }

    /// Leakage of the opposite qubit mode.
    pub fn qubit_leakage(&self) -> f64 {
        self.leakage.get(&-self.target_l).copied().unwrap_or(0.0)
    }
}

/// State of the interferometer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferometerConfig {
    pub r_path: ProjectorPath,
    pub l_path: ProjectorPath,
    /// Set-point of the interferometer phase (rad).
    pub phase: f64,
    /// Unknown offset between set-point and actual phase (rad).
    #[serde(default)]
    pub phase_offset: f64,
    /// Random-walk growth of the phase (rad / sqrt(s)); zero disables drift.
    #[serde(default)]
    pub phase_drift: f64,
    /// Transverse overlap of the two fiber modes at the output coupler;
    /// scales the interference term and so the fringe visibility.
    #[serde(default = "one")]
    pub mode_overlap: f64,
    #[serde(default)]
    pub blocked: Blocked,
    /// Fraction lost at the reference-beam tap.
    #[serde(default)]
    pub reference_tap_loss: f64,
}

fn one() -> f64 {
    1.0
}

/// "A few degrees in a few seconds": 2 degrees per sqrt(second).
pub const DEFAULT_PHASE_DRIFT: f64 = 2.0 * PI / 180.0;

impl InterferometerConfig {
    /// Perfect transmission and mode rejection.
    pub fn ideal() -> Self {
        Self {
            r_path: ProjectorPath::ideal(1),
            l_path: ProjectorPath::ideal(-1),
            phase: 0.0,
            phase_offset: 0.0,
            phase_drift: 0.0,
            mode_overlap: 1.0,
            blocked: Blocked::None,
            reference_tap_loss: 0.0,
        }
    }

    /// Nominal device: 65% per projector, 25% reference-tap loss, given
    /// relative leakage and mode overlap.
    pub fn nominal(leakage: f64, mode_overlap: f64) -> Self {
        Self {
            r_path: ProjectorPath::nominal(1).with_leakage(-1, leakage),
            l_path: ProjectorPath::nominal(-1).with_leakage(1, leakage),
            mode_overlap,
            reference_tap_loss: REFERENCE_TAP_LOSS,
            ..Self::ideal()
        }
    }

    /// Projectors with the measured per-mode couplings.
    pub fn measured(mode_overlap: f64) -> Self {
        Self {
            r_path: ProjectorPath::measured_r(),
            l_path: ProjectorPath::measured_l(),
            mode_overlap,
            reference_tap_loss: REFERENCE_TAP_LOSS,
            ..Self::ideal()
        }
    }

    pub fn with_phase(&self, phase: f64) -> Self {
        Self {
            phase: phase.rem_euclid(TAU),
            ..self.clone()
        }
    }

    pub fn with_blocked(&self, blocked: Blocked) -> Self {
        Self {
            blocked,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.r_path.validate()?;
        self.l_path.validate()?;
        if !self.phase.is_finite() || !self.phase_offset.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        if !(self.phase_drift >= 0.0) {
            return Err(invalid("phase_drift", format!("{} < 0", self.phase_drift)));
        }
        if !(0.0..=1.0).contains(&self.mode_overlap) {
            return Err(invalid("mode_overlap", format!("{} not in [0, 1]", self.mode_overlap)));
        }
        if !(0.0..=1.0).contains(&self.reference_tap_loss) {
            return Err(invalid(
                "reference_tap_loss",
                format!("{} not in [0, 1]", self.reference_tap_loss),
            ));
        }
        Ok(())
    }

    /// Actual phase between the arms.
    pub fn effective_phase(&self) -> f64 {
        (self.phase + self.phase_offset).rem_euclid(TAU)
    }

    /// Fiber-output amplitudes `(A_R, A_L)` of each arm.
    pub fn arm_amplitudes(&self, input: &PureQubit) -> (Complex64, Complex64) {
        let (alpha, beta) = (input.alpha(), input.beta());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a_r = if self.blocked == Blocked::R {
            Complex64::new(0.0, 0.0)
        } else {
            (alpha * self.r_path.amplitude(1) + beta * self.r_path.amplitude(-1)) * s
        };
        let a_l = if self.blocked == Blocked::L {
            Complex64::new(0.0, 0.0)
        } else {
            (beta * self.l_path.amplitude(-1) + alpha * self.l_path.amplitude(1)) * s
        };
        (a_r, a_l)
    }

    /// Mean detected power fraction at `port` for interferometer phase `phase`.
    pub fn port_power_at(&self, input: &PureQubit, port: Port, phase: f64) -> f64 {
        let (a_r, a_l) = self.arm_amplitudes(input);
        let e = Complex64::from_polar(1.0, phase);
        let sign = match port {
            Port::X => 1.0,
            Port::Y => -1.0,
        };
        let cross = (a_r.conj() * e * a_l).re;
        let t = 1.0 - self.reference_tap_loss;
        t * 0.5 * (a_r.norm_sqr() + a_l.norm_sqr() + sign * 2.0 * self.mode_overlap * cross)
    }

    pub fn port_power(&self, input: &PureQubit, port: Port) -> f64 {
        self.port_power_at(input, port, self.effective_phase())
    }
}

/// Coherent output amplitudes at X and Y (mode overlap not applied).
pub fn output_amplitudes(input: &PureQubit, cfg: &InterferometerConfig) -> (Complex64, Complex64) {
    let (a_r, a_l) = cfg.arm_amplitudes(input);
    let e = Complex64::from_polar(1.0, cfg.effective_phase());
    let k = ((1.0 - cfg.reference_tap_loss) / 2.0).sqrt();
    ((a_r + e * a_l) * k, (a_r - e * a_l) * k)
}

/// Photon-counting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Mean photon number per weak coherent pulse.
    pub mean_photons: f64,
    /// Detector quantum efficiency.
    pub detector_efficiency: f64,
    /// Background click probability per measurement.
    pub background: f64,
    /// Default measurements per configuration.
    pub trials: u64,
    /// Time between measurements (s); only used by phase drift.
    #[serde(default = "default_trial_period")]
    pub trial_period: f64,
}

fn default_trial_period() -> f64 {
    1e-4
}

impl DetectionConfig {
    /// Weak coherent pulses with 0.6 photons, 1e-3 background clicks and an
    /// assumed 50% detector efficiency.
    pub fn experimental() -> Self {
        Self {
            mean_photons: 0.6,
            detector_efficiency: 0.5,
            background: 1e-3,
            trials: 1_000_000,
            trial_period: default_trial_period(),
        }
    }

    /// Unit efficiency, no background.
    pub fn ideal(mean_photons: f64, trials: u64) -> Self {
        Self {
            mean_photons,
            detector_efficiency: 1.0,
            background: 0.0,
            trials,
            trial_period: default_trial_period(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photons >= 0.0 && self.mean_photons.is_finite()) {
            return Err(invalid("mean_photons", format!("{}", self.mean_photons)));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(invalid(
                "detector_efficiency",
                format!("{} not in [0, 1]", self.detector_efficiency),
            ));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(invalid("background", format!("{} not in [0, 1]", self.background)));
        }
        if !(self.trial_period > 0.0) {
            return Err(invalid("trial_period", format!("{}", self.trial_period)));
        }
        Ok(())
    }

    /// Click probability for a given detected power fraction.
    pub fn click_probability(&self, power_fraction: f64) -> f64 {
        let mu = self.mean_photons * self.detector_efficiency * power_fraction;
        1.0 - (-mu).exp() * (1.0 - self.background)
    }
}

/// `1 - exp(-mu_eff) (1 - n_bg)` with `mu_eff = mu * QE * P_port`.
pub fn click_probability(
    input: &PureQubit,
    cfg: &InterferometerConfig,
    det: &DetectionConfig,
    port: Port,
) -> f64 {
    det.click_probability(cfg.port_power(input, port))
}

/// Fringe visibility `(max - min)/(max + min)` of the click probability at
/// `port` over `samples` equally spaced phases.
pub fn fringe_visibility(
    input: &PureQubit,
    cfg: &InterferometerConfig,
    det: &DetectionConfig,
    port: Port,
    samples: usize,
) -> f64 {
    contrast(samples, |phase| det.click_probability(cfg.port_power_at(input, port, phase)))
}

/// Interference contrast of the transmitted power itself, without
/// detector saturation or background.
pub fn optical_visibility(input: &PureQubit, cfg: &InterferometerConfig, port: Port, samples: usize) -> f64 {
    contrast(samples, |phase| cfg.port_power_at(input, port, phase))
}

fn contrast(samples: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..samples {
        let p = f(TAU * k as f64 / samples as f64);
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if hi + lo == 0.0 {
        0.0
    } else {
        (hi - lo) / (hi + lo)
    }
}

/// Phase bins recorded alongside counts: the reference-camera bins for a
/// 120-bin analysis, i.e. 60 folded bins of 6 degrees in phase.
pub const PHASE_BINS: usize = 60;

/// Center (degrees) of the phase bin containing `phase`.
pub fn phase_bin_deg(phase: f64, bins: usize) -> f64 {
    let width = 360.0 / bins as f64;
    let k = ((phase.rem_euclid(TAU)).to_degrees() / width).round() as usize % bins;
    k as f64 * width
}

/// Detection statistics for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub configuration_id: String,
    pub port: Port,
    pub phase_bin_deg: f64,
    pub trials: u64,
    pub clicks: u64,
    pub seed: u64,
}

impl CountRecord {
    pub fn rate(&self) -> f64 {
        self.clicks as f64 / self.trials as f64
    }

    pub const CSV_HEADER: &'static str = "configuration_id,port,phase_bin_deg,trials,clicks,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.configuration_id, self.port, self.phase_bin_deg, self.trials, self.clicks, self.seed
        )
    }
}

/// Writes records as CSV, preceded by `# key=value` comment lines.
pub fn write_counts_csv<W: Write>(
    mut out: W,
    records: &[CountRecord],
    comments: &[(&str, String)],
) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{}", CountRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Monte Carlo realization of `trials` weak-pulse measurements at `port`.
///
/// Without drift the click count is one binomial draw. With drift the phase
/// follows a Wiener process sampled once per trial.
pub fn simulate_counts(
    configuration_id: &str,
    input: &PureQubit,
    cfg: &InterferometerConfig,
    det: &DetectionConfig,
    port: Port,
    trials: u64,
    seed: u64,
) -> Result<CountRecord> {
    cfg.validate()?;
    det.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let mut rng = seed::rng(seed);
    let clicks = if cfg.phase_drift > 0.0 {
        let step = cfg.phase_drift * det.trial_period.sqrt();
        let mut phase = cfg.effective_phase();
        let mut clicks = 0u64;
        for _ in 0..trials {
            let p = det.click_probability(cfg.port_power_at(input, port, phase));
            if rng.gen::<f64>() < p {
                clicks += 1;
            }
            let z: f64 = rng.sample(StandardNormal);
            phase += step * z;
        }
        clicks
    } else {
        let p = click_probability(input, cfg, det, port).clamp(0.0, 1.0);
        Binomial::new(trials, p)
            .map_err(|e| invalid("click probability", e.to_string()))?
            .sample(&mut rng)
    };
    Ok(CountRecord {
        configuration_id: configuration_id.to_string(),
        port,
        phase_bin_deg: phase_bin_deg(cfg.phase, PHASE_BINS),
        trials,
        clicks,
        seed,
    })
}

/// Phase seen by the back-propagated reference beam.
///
/// Backwards, the `l = +1` component emerges from arm L and carries the arm
/// phase, so the reference superposition is `LG+1 + e^{-i phi} LG-1`.
pub fn reference_phase(signal_phase: f64) -> f64 {
    (-signal_phase).rem_euclid(TAU)
}

/// Signal phase recovered from a reference-beam phase.
pub fn signal_phase(reference_phase: f64) -> f64 {
    (-reference_phase).rem_euclid(TAU)
}

/// Phase drift from a geometric path difference: 12 deg / (cm GHz).
pub fn phase_sensitivity_geometric(delta_l_cm: f64, delta_nu_ghz: f64) -> f64 {
    12.0 * delta_l_cm * delta_nu_ghz
}

/// Phase drift from a fiber-length imbalance via material dispersion:
/// -0.1 deg / (cm GHz).
pub fn phase_sensitivity_dispersion(delta_l_fib_cm: f64, delta_nu_ghz: f64) -> f64 {
    -0.1 * delta_l_fib_cm * delta_nu_ghz
}
