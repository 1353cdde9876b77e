//! Fringe calibration, qubit tomography runs and fidelity limits.
//!
//! Fringe samples are indexed by the dark-axis angle `alpha_d` of the
//! reference camera. A fitted phase `theta` places the fringe minimum at
//! `2 alpha_d = theta`; for an equal-weight input `theta` equals the
//! input's relative phase (0, pi/2, pi, 3pi/2 for H, D, V, A).

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apparatus::{
    fringe_visibility, optical_visibility, phase_bin_deg, signal_phase, simulate_counts, Blocked, CountRecord,
    DetectionConfig, InterferometerConfig, Port, PHASE_BINS,
};
use crate::error::{invalid, Error, Result};
use crate::fit::linear_least_squares;
use crate::phasecam::angle_diff;
use crate::qubit::{
    stokes_from_probabilities, BasisProbabilities, DensityMatrix, NamedState, PureQubit,
    StokesVector, PAIR_SUM_TOLERANCE,
};
use crate::seed;

/// Visibility below which a calibration flags misalignment.
pub const MISALIGNMENT_VISIBILITY: f64 = 0.8;

/// Sinusoidal fit `A (1 - V cos(2 alpha_d - theta))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub visibility: f64,
    /// Fringe minimum position in `2 alpha_d`, in [0, 2pi).
    pub theta: f64,
    /// RMS residual relative to the offset.
    pub residual: f64,
}

impl FringeFit {
    pub fn model(&self, alpha_d: f64) -> f64 {
        self.offset * (1.0 - self.visibility * (2.0 * alpha_d - self.theta).cos())
    }
}

/// Least-squares fringe fit over `(alpha_d, mean clicks)` samples.
///
/// Needs at least 8 samples whose `2 alpha_d` values cover half a period.
pub fn fit_fringe(samples: &[(f64, f64)]) -> Result<FringeFit> {
    if samples.len() < 8 {
        return Err(Error::InsufficientData(format!("{} samples, need 8", samples.len())));
    }
    let mut xs: Vec<f64> = samples.iter().map(|(a, _)| (2.0 * a).rem_euclid(TAU)).collect();
    xs.sort_by(f64::total_cmp);
    let mut gap = xs[0] + TAU - xs[xs.len() - 1];
    for w in xs.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    if TAU - gap < PI - 1e-9 {
        return Err(Error::InsufficientData(format!(
            "samples span {:.1} deg of the fringe, need 180",
            (TAU - gap).to_degrees()
        )));
    }
    let n = samples.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, &(alpha, y)) in samples.iter().enumerate() {
        let x = 2.0 * alpha;
        a[(i, 0)] = 1.0;
        a[(i, 1)] = x.cos();
        a[(i, 2)] = x.sin();
        b[i] = y;
    }
    let sol = linear_least_squares(&a, &b)?;
    let (c0, c1, c2) = (sol.params[0], sol.params[1], sol.params[2]);
    if !(c0 > 0.0) {
        return Err(Error::FitFailed(format!("fringe offset {c0} not positive")));
    }
    let amp = c1.hypot(c2);
    Ok(FringeFit {
        offset: c0,
        visibility: (amp / c0).min(1.0),
        theta: (c2.atan2(c1) + PI).rem_euclid(TAU),
        residual: (sol.cost / n as f64).sqrt() / c0,
    })
}

/// Theoretical fringe minimum for a probe mode.
pub fn theoretical_theta(mode: NamedState) -> Option<f64> {
    match mode {
        NamedState::H => Some(0.0),
        NamedState::D => Some(PI / 2.0),
        NamedState::V => Some(PI),
        NamedState::A => Some(1.5 * PI),
        _ => None,
    }
}

/// Phase scan used by [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    /// Dark-axis bins over [0, pi).
    pub bins: usize,
    pub trials_per_bin: u64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            bins: PHASE_BINS,
            trials_per_bin: 20_000,
        }
    }
}

/// Records a fringe of `input` at port X over the camera dark-axis bins.
///
/// The camera reads the phase of the reference beam; the signal sees the
/// conjugate phase plus the device's phase offset.
pub fn scan_fringe(
    id: &str,
    input: &PureQubit,
    device: &InterferometerConfig,
    det: &DetectionConfig,
    scan: &ScanSpec,
    seed: u64,
) -> Result<(Vec<(f64, f64)>, Vec<CountRecord>)> {
    if scan.bins < 8 {
        return Err(invalid("bins", format!("{} < 8", scan.bins)));
    }
    let rows: Vec<Result<((f64, f64), CountRecord)>> = (0..scan.bins)
        .into_par_iter()
        .map(|k| {
            let alpha_d = PI * k as f64 / scan.bins as f64;
            let phi = signal_phase(2.0 * alpha_d + PI);
            let rec = simulate_counts(
                &format!("{id}/alpha_d={:.1}", alpha_d.to_degrees()),
                input,
                &device.with_phase(phi),
                det,
                Port::X,
                scan.trials_per_bin,
                seed::derive_seed(seed, k as u64),
            )?;
            Ok(((alpha_d, rec.rate()), rec))
        })
        .collect();
    let mut samples = Vec::with_capacity(scan.bins);
    let mut records = Vec::with_capacity(scan.bins);
    for r in rows {
        let (s, rec) = r?;
        samples.push(s);
        records.push(rec);
    }
    Ok((samples, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCalibration {
    pub mode: NamedState,
    pub fit: FringeFit,
    pub theta_deg: f64,
    pub theory_deg: f64,
    /// `theta - theory`, wrapped to (-180, 180].
    pub deviation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub modes: Vec<ModeCalibration>,
    /// Rotation of the orthogonal cross closest to the fitted angles.
    pub cross_rotation_deg: f64,
    /// Best-fit cross arms (theory + rotation) in degrees.
    pub cross_deg: Vec<f64>,
    /// Mean and population spread of |theta - theory|.
    pub mean_deviation_deg: f64,
    pub deviation_spread_deg: f64,
    /// Smallest fitted visibility.
    pub visibility: f64,
    pub misaligned: bool,
}

/// Summarizes fitted fringes against the theoretical positions.
pub fn calibration_report(fits: &[(NamedState, FringeFit)]) -> Result<CalibrationReport> {
    if fits.is_empty() {
        return Err(Error::InsufficientData("no probe modes".into()));
    }
    let mut modes = Vec::with_capacity(fits.len());
    for &(mode, fit) in fits {
        let theory = theoretical_theta(mode)
            .ok_or_else(|| invalid("probe mode", format!("{mode} is not an equatorial mode")))?;
        modes.push(ModeCalibration {
            mode,
            fit,
            theta_deg: fit.theta.to_degrees(),
            theory_deg: theory.to_degrees(),
            deviation_deg: angle_diff(fit.theta, theory).to_degrees(),
        });
    }
    let (s, c) = modes.iter().fold((0.0, 0.0), |(s, c), m| {
        let d = m.deviation_deg.to_radians();
        (s + d.sin(), c + d.cos())
    });
    let rotation = s.atan2(c).to_degrees();
    let abs: Vec<f64> = modes.iter().map(|m| m.deviation_deg.abs()).collect();
    let n = abs.len() as f64;
    let mean = abs.iter().sum::<f64>() / n;
    let spread = (abs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let visibility = modes.iter().map(|m| m.fit.visibility).fold(f64::INFINITY, f64::min);
    Ok(CalibrationReport {
        cross_deg: modes
            .iter()
            .map(|m| (m.theory_deg + rotation).rem_euclid(360.0))
            .collect(),
        modes,
        cross_rotation_deg: rotation,
        mean_deviation_deg: mean,
        deviation_spread_deg: spread,
        visibility,
        misaligned: visibility < MISALIGNMENT_VISIBILITY,
    })
}

/// Scans and fits H, D, V and A, then compares with theory.
pub fn calibrate(
    device: &InterferometerConfig,
    det: &DetectionConfig,
    scan: &ScanSpec,
    seed: u64,
) -> Result<(CalibrationReport, Vec<CountRecord>)> {
    let probes = [NamedState::H, NamedState::D, NamedState::V, NamedState::A];
    let mut fits = Vec::new();
    let mut records = Vec::new();
    for (i, mode) in probes.into_iter().enumerate() {
        let (samples, recs) = scan_fringe(
            &format!("calib/{mode}"),
            &mode.qubit(),
            device,
            det,
            scan,
            seed::derive_seed(seed, i as u64),
        )?;
        fits.push((mode, fit_fringe(&samples)?));
        records.extend(recs);
    }
    Ok((calibration_report(&fits)?, records))
}

/// Mode overlap giving a click-fringe visibility of `target` for an
/// equal-weight input, found by bisection.
pub fn tune_visibility(
    device: &InterferometerConfig,
    det: &DetectionConfig,
    target: f64,
) -> Result<InterferometerConfig> {
    tune_overlap(device, target, |c| fringe_visibility(&NamedState::H.qubit(), c, det, Port::X, 360))
}

/// Mode overlap giving an optical (power) fringe visibility of `target`.
pub fn tune_optical_visibility(device: &InterferometerConfig, target: f64) -> Result<InterferometerConfig> {
    tune_overlap(device, target, |c| optical_visibility(&NamedState::H.qubit(), c, Port::X, 360))
}

// visibility grows monotonically with the overlap
fn tune_overlap(
    device: &InterferometerConfig,
    target: f64,
    visibility: impl Fn(&InterferometerConfig) -> f64,
) -> Result<InterferometerConfig> {
    let vis = |g: f64| {
        visibility(&InterferometerConfig {
            mode_overlap: g,
            ..device.clone()
        })
    };
    if !(target > 0.0) || target > vis(1.0) {
        return Err(invalid(
            "visibility",
            format!("{target} not reachable (max {:.4})", vis(1.0)),
        ));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if vis(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(InterferometerConfig {
        mode_overlap: 0.5 * (lo + hi),
        ..device.clone()
    })
}

/// One measurement configuration of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    BlockedR,
    BlockedL,
    /// Interferometer phase in radians, snapped to the camera phase bins.
    Phase { phi: f64 },
}

impl Setting {
    fn label(&self) -> String {
        match self {
            Setting::BlockedR => "blocked-R".into(),
            Setting::BlockedL => "blocked-L".into(),
            Setting::Phase { phi } => format!("phi={}", phase_bin_deg(*phi, PHASE_BINS)),
        }
    }

    fn phase_bin(&self) -> Option<i64> {
        match self {
            Setting::Phase { phi } => Some((phase_bin_deg(*phi, PHASE_BINS) / (360.0 / PHASE_BINS as f64)).round() as i64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub setting: Setting,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchedule {
    pub entries: Vec<ScheduleEntry>,
}

fn bin_of(phi: f64) -> i64 {
    Setting::Phase { phi }.phase_bin().expect("phase setting")
}

impl MeasurementSchedule {
    /// Both blocked configurations and the four fringe phases.
    pub fn standard(fringe_trials: u64, blocked_trials: u64) -> Self {
        let mut entries = vec![
            ScheduleEntry { setting: Setting::BlockedL, trials: blocked_trials },
            ScheduleEntry { setting: Setting::BlockedR, trials: blocked_trials },
        ];
        for k in 0..4 {
            entries.push(ScheduleEntry {
                setting: Setting::Phase { phi: k as f64 * PI / 2.0 },
                trials: fringe_trials,
            });
        }
        Self { entries }
    }

    /// Checks that all six projectors are covered and trials are positive.
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.trials == 0) {
            return Err(invalid("trials", format!("{} has zero trials", e.setting.label())));
        }
        let has = |s: Setting| self.entries.iter().any(|e| e.setting == s);
        let bins: Vec<i64> = self.entries.iter().filter_map(|e| e.setting.phase_bin()).collect();
        let missing: Vec<&str> = [
            ("R (blocked-L)", has(Setting::BlockedL)),
            ("L (blocked-R)", has(Setting::BlockedR)),
            ("H (phi=0)", bins.contains(&bin_of(0.0))),
            ("A (phi=90)", bins.contains(&bin_of(PI / 2.0))),
            ("V (phi=180)", bins.contains(&bin_of(PI))),
            ("D (phi=270)", bins.contains(&bin_of(1.5 * PI))),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| n)
        .collect();
        if !missing.is_empty() {
            return Err(invalid("schedule", format!("missing projectors: {}", missing.join(", "))));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TomographyOptions {
    /// Subtract the detector background rate before normalizing.
    #[serde(default)]
    pub subtract_background: bool,
    /// Added to every phase set-point, e.g. minus a calibrated offset.
    #[serde(default)]
    pub phase_correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub records: Vec<CountRecord>,
    pub probabilities: BasisProbabilities,
    /// Stokes vector from the normalized rates, before any projection.
    pub stokes: StokesVector,
    /// Binomial standard deviations of `(S1, S2, S3)`.
    pub stokes_sigma: [f64; 3],
    pub density: DensityMatrix,
    pub fidelity: f64,
    pub fidelity_sigma: f64,
}

#[derive(Clone, Copy)]
struct Rate {
    value: f64,
    var: f64,
}

// p = a / (a + b) and its delta-method variance
fn ratio(a: Rate, b: Rate, what: &str) -> Result<(f64, f64)> {
    let s = a.value + b.value;
    if !(s > 0.0) {
        return Err(Error::ZeroCounts(what.to_string()));
    }
    let p = a.value / s;
    let var = (b.value * b.value * a.var + a.value * a.value * b.var) / s.powi(4);
    Ok((p, var))
}

/// Runs a schedule on `input` and reconstructs the state.
///
/// Blocked settings average ports X and Y; phase settings use port X only.
/// Child seeds are derived from `seed` by entry index and port.
pub fn run_tomography(
    input: &PureQubit,
    schedule: &MeasurementSchedule,
    device: &InterferometerConfig,
    det: &DetectionConfig,
    options: &TomographyOptions,
    seed: u64,
) -> Result<TomographyResult> {
    schedule.validate()?;
    device.validate()?;
    det.validate()?;
    let jobs: Vec<(usize, ScheduleEntry, Port)> = schedule
        .entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            let ports: &[Port] = match e.setting {
                Setting::Phase { .. } => &[Port::X],
                _ => &[Port::X, Port::Y],
            };
            ports.iter().map(move |&p| (i, *e, p))
        })
        .collect();
    let records: Vec<CountRecord> = jobs
        .par_iter()
        .map(|&(i, e, port)| {
            let cfg = match e.setting {
                Setting::BlockedR => device.with_blocked(Blocked::R),
                Setting::BlockedL => device.with_blocked(Blocked::L),
                Setting::Phase { phi } => device.with_phase(phi + options.phase_correction),
            };
            let port_index = if port == Port::X { 0 } else { 1 };
            let mut rec = simulate_counts(
                &format!("{}#{i}", e.setting.label()),
                input,
                &cfg,
                det,
                port,
                e.trials,
                seed::derive_seed(seed, 2 * i as u64 + port_index),
            )?;
            if let Setting::Phase { phi } = e.setting {
                rec.phase_bin_deg = phase_bin_deg(phi, PHASE_BINS);
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let bg = if options.subtract_background { det.background } else { 0.0 };
    let rate = |pred: &dyn Fn(&Setting) -> bool| -> Rate {
        let (mut clicks, mut trials) = (0u64, 0u64);
        for (rec, (_, e, _)) in records.iter().zip(&jobs) {
            if pred(&e.setting) {
                clicks += rec.clicks;
                trials += rec.trials;
            }
        }
        if trials == 0 {
            return Rate { value: 0.0, var: 0.0 };
        }
        let r = clicks as f64 / trials as f64;
        Rate {
            value: (r - bg).max(0.0),
            var: r * (1.0 - r) / trials as f64,
        }
    };
    let at = |phi: f64| {
        let b = bin_of(phi);
        rate(&|s: &Setting| s.phase_bin() == Some(b))
    };
    let (p_r, v_r) = ratio(
        rate(&|s| *s == Setting::BlockedL),
        rate(&|s| *s == Setting::BlockedR),
        "blocked-L/blocked-R",
    )?;
    let (p_h, v_h) = ratio(at(0.0), at(PI), "phi=0/phi=180")?;
    let (p_d, v_d) = ratio(at(1.5 * PI), at(PI / 2.0), "phi=270/phi=90")?;
    let probabilities = BasisProbabilities {
        p_r,
        p_l: 1.0 - p_r,
        p_h,
        p_v: 1.0 - p_h,
        p_d,
        p_a: 1.0 - p_d,
    };
    let stokes = stokes_from_probabilities(&probabilities, PAIR_SUM_TOLERANCE)?;
    let stokes_sigma = [2.0 * v_r.sqrt(), 2.0 * v_h.sqrt(), 2.0 * v_d.sqrt()];
    let density = DensityMatrix::from_stokes(&stokes).project_physical();
    let fidelity = density.fidelity(&input.to_vector())?;
    let target = crate::qubit::pure_to_stokes(input)?.as_array();
    let fidelity_sigma = 0.5
        * target
            .iter()
            .zip(&stokes_sigma)
            .map(|(n, s)| (n * s).powi(2))
            .sum::<f64>()
            .sqrt();
    Ok(TomographyResult {
        records,
        probabilities,
        stokes,
        stokes_sigma,
        density,
        fidelity,
        fidelity_sigma,
    })
}

/// Device imperfections that cap the measurable fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub visibility: f64,
    /// Relative leakage between the qubit modes.
    pub leakage: f64,
    /// Calibration offset (rad).
    pub calibration_offset: f64,
    /// Coupling imbalance between orthogonal HG modes.
    pub coupling_imbalance: f64,
}

impl ErrorBudget {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid("visibility", format!("{} not in [0, 1]", self.visibility)));
        }
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(invalid("leakage", format!("{} not in [0, 1]", self.leakage)));
        }
        if !self.calibration_offset.is_finite() {
            return Err(invalid("calibration_offset", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.coupling_imbalance) {
            return Err(invalid(
                "coupling_imbalance",
                format!("{} not in [0, 1]", self.coupling_imbalance),
            ));
        }
        Ok(())
    }

    /// Budget of a simulated device: click-fringe visibility of an
    /// equal-weight input (which already includes any imbalance), the
    /// larger qubit leakage and the phase offset.
    pub fn of_device(device: &InterferometerConfig, det: &DetectionConfig) -> Self {
        let aligned = InterferometerConfig {
            phase_offset: 0.0,
            phase_drift: 0.0,
            ..device.clone()
        };
        Self {
            visibility: fringe_visibility(&NamedState::H.qubit(), &aligned, det, Port::X, 720),
            leakage: device.r_path.qubit_leakage().max(device.l_path.qubit_leakage()),
            calibration_offset: device.phase_offset,
            coupling_imbalance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityBounds {
    pub f_max_equatorial: f64,
    pub f_max_poles: f64,
    pub visibility_loss: f64,
}

/// `F_eq = (1 + V - dEta^2/2)/2 - dTheta^2`, `F_poles = 1 - eps`.
pub fn fidelity_bounds(b: &ErrorBudget) -> Result<FidelityBounds> {
    b.validate()?;
    let loss = b.coupling_imbalance.powi(2) / 2.0;
    Ok(FidelityBounds {
        f_max_equatorial: 0.5 * (1.0 + b.visibility - loss) - b.calibration_offset.powi(2),
        f_max_poles: 1.0 - b.leakage,
        visibility_loss: loss,
    })
}

impl FidelityBounds {
    /// Bound for a pure target with Stokes vector `n`: poles and equator
    /// mix by the weights `n1^2` and `n2^2 + n3^2`.
    pub fn for_state(&self, n: &StokesVector) -> f64 {
        let pole = n.s1 * n.s1;
        pole * self.f_max_poles + (1.0 - pole) * self.f_max_equatorial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub efficiency: f64,
}

impl Stage {
    pub fn new(name: &str, efficiency: f64) -> Self {
        Self {
            name: name.to_string(),
            efficiency,
        }
    }
}

/// Product of stage efficiencies; the empty chain transmits everything.
pub fn efficiency_budget(stages: &[Stage]) -> Result<f64> {
    for s in stages {
        if !(0.0..=1.0).contains(&s.efficiency) {
            return Err(invalid(&s.name, format!("efficiency {} not in [0, 1]", s.efficiency)));
        }
    }
    Ok(stages.iter().map(|s| s.efficiency).product())
}

/// Loss chain of the qubit device, detectors excluded.
pub fn detection_chain() -> Vec<Stage> {
    vec![
        Stage::new("input split and mode filtering", 0.5),
        Stage::new("hologram diffraction and optics", 0.8),
        Stage::new("fiber coupling", 0.8),
        Stage::new("reference-beam splitter", 0.75),
    ]
}

/// Converts a ratio to dB (negative for losses).
pub fn ratio_to_db(r: f64) -> f64 {
    10.0 * r.log10()
}
