//! Config-driven front end behind the `oamtomo` binary.
//!
//! Every artifact carries the SHA-256 of its inputs and the master seed:
//! `# config_sha256=` / `# seed=` comment lines in CSV and PGM files, and
//! `config_sha256` / `seed` fields in JSON. Nothing depends on the clock,
//! so reruns with the same inputs write byte-identical files.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apparatus::{
    self, db_to_ratio, phase_sensitivity_dispersion, phase_sensitivity_geometric, reference_phase,
    write_counts_csv, CountRecord, DetectionConfig, InterferometerConfig,
};
use crate::image::{BitDepth, Bitmap};
use crate::phasecam::{
    self, angle_diff, average_frames, enhance, extract_phase, fit_ring, synthesize_frame, Defects,
    FrameGeometry, FrameNoise, FrameTruth, PhaseFrame, RingFit,
};
use crate::qubit::{pure_to_stokes, DensityJson, DensityMatrix, NamedState, PureQubit};
use crate::qudit::{
    self, counts_to_powers, extension_budget, reconstruct_qudit, simulate_qudit_counts,
    write_qudit_counts_csv, ExtensionBudget, ExtensionPreset, InputSplit, NetworkConfig,
    ProjectorSet, QuditCount, QuditState,
};
use crate::seed::{derive_seed, rng};
use crate::tomo::{
    self, calibrate, detection_chain, efficiency_budget, fidelity_bounds, run_tomography,
    tune_optical_visibility, tune_visibility, CalibrationReport, ErrorBudget, FidelityBounds, MeasurementSchedule,
    ScanSpec, ScheduleEntry, TomographyOptions,
};
use crate::{Complex64, Error};

// Child-seed streams under the master seed.
const STREAM_CALIBRATION: u64 = 0;
const STREAM_TOMOGRAPHY: u64 = 1;
const STREAM_FRAMES: u64 = 2;
const STREAM_QUDIT: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "oamtomo", version, about = "Simulate and analyze OAM qubit/qudit tomography")]
pub struct Cli {
    /// Master seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format of tabular artifacts and of `budget` output.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibration, tomography of every input, reference frames and summary.
    Simulate { config: PathBuf },
    /// Fringe calibration with the H, D, V and A probes.
    Calibrate { config: PathBuf },
    /// Tomography of the qubit inputs.
    Tomograph { config: PathBuf },
    /// Reconstruction of the four-dimensional inputs.
    Qudit { config: PathBuf },
    /// Extract the interferometer phase from stored PGM frames.
    AnalyzeFrames(AnalyzeArgs),
    /// Render synthetic phase-reference frames with ground-truth sidecars.
    GenFrames(GenArgs),
    /// Efficiency, phase-sensitivity, fidelity and extension budgets.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Directory of `.pgm` frames; `<stem>.json` sidecars add truth columns.
    pub dir: PathBuf,
    /// Fit the ring on the stack average and write `ringfit.json`.
    #[arg(long)]
    pub fit: bool,
    /// Use a stored ring fit instead of fitting.
    #[arg(long, conflicts_with = "fit")]
    pub ringfit: Option<PathBuf>,
    /// Angular bins (positive multiple of 8).
    #[arg(long, default_value_t = phasecam::DEFAULT_BINS)]
    pub bins: usize,
    /// Median-filter and contrast-stretch frames first.
    #[arg(long)]
    pub enhance: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 360)]
    pub count: usize,
    /// Draw phases uniformly at random instead of an even grid.
    #[arg(long)]
    pub random: bool,
    /// Lateral offset of LG-1 (fraction of the waist).
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    /// Relative wavefront tilt (rad per waist).
    #[arg(long, default_value_t = 0.0)]
    pub tilt: f64,
    /// Intensity factor on one side of the dark line.
    #[arg(long, default_value_t = 1.0)]
    pub imbalance: f64,
    /// Photo-electrons at the pattern peak; noiseless when absent.
    #[arg(long)]
    pub photons: Option<f64>,
    /// Uniform background as a fraction of the peak.
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 330)]
    pub size: usize,
    /// Beam waist in pixels.
    #[arg(long, default_value_t = 55.0)]
    pub waist: f64,
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BudgetArgs {
    /// Arm length difference (cm).
    #[arg(long = "dL", default_value_t = 1.0)]
    pub d_l: f64,
    /// Wavelength detuning (GHz).
    #[arg(long = "dnu", default_value_t = 1.0)]
    pub d_nu: f64,
    /// Show only this extension preset (Current, 3BS, OAM-sorter).
    #[arg(long)]
    pub preset: Option<String>,
    /// Fringe visibility for the fidelity bound.
    #[arg(long, default_value_t = 0.99)]
    pub visibility: f64,
    /// Mode suppression between the qubit modes (dB).
    #[arg(long, default_value_t = 25.0)]
    pub suppression_db: f64,
    /// Calibration offset (deg).
    #[arg(long, default_value_t = 0.0)]
    pub offset_deg: f64,
    /// Coupling imbalance between orthogonal equatorial modes.
    #[arg(long, default_value_t = 0.0)]
    pub imbalance: f64,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn config_err(path: &str, e: impl fmt::Display) -> CliError {
    CliError::Config(format!("`{path}`: {e}"))
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// Experiment config

/// One experiment: device, detection, inputs, schedule and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub device: DeviceSpec,
    #[serde(default)]
    pub detection: DetectionSpec,
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub options: TomographyOptions,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default)]
    pub frames: FramesSpec,
    #[serde(default)]
    pub qudit: QuditSpec,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevicePreset {
    Ideal,
    #[default]
    Nominal,
    Measured,
    Inline,
}

/// The qubit interferometer: a preset plus adjustments, or an inline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    #[serde(default)]
    pub preset: DevicePreset,
    /// Suppression of the opposite qubit mode in each projector (dB), `nominal` only.
    #[serde(default = "default_suppression")]
    pub suppression_db: f64,
    pub mode_overlap: Option<f64>,
    /// Target click-fringe visibility, background included; tunes `mode_overlap`.
    pub visibility: Option<f64>,
    /// Target interference contrast of the transmitted power; tunes `mode_overlap`.
    pub optical_visibility: Option<f64>,
    #[serde(default)]
    pub phase_offset_deg: f64,
    /// Random-walk phase drift (deg / sqrt(s)).
    #[serde(default)]
    pub phase_drift_deg: f64,
    /// Full interferometer description for `inline`.
    pub config: Option<InterferometerConfig>,
}

fn default_suppression() -> f64 {
    25.0
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            preset: DevicePreset::Nominal,
            suppression_db: default_suppression(),
            mode_overlap: None,
            visibility: None,
            optical_visibility: None,
            phase_offset_deg: 0.0,
            phase_drift_deg: 0.0,
            config: None,
        }
    }
}

impl DeviceSpec {
    pub fn build(&self, det: &DetectionConfig) -> CliResult<InterferometerConfig> {
        let mut cfg = match self.preset {
            DevicePreset::Ideal => InterferometerConfig::ideal(),
            DevicePreset::Nominal => InterferometerConfig::nominal(db_to_ratio(self.suppression_db), 1.0),
            DevicePreset::Measured => InterferometerConfig::measured(1.0),
            DevicePreset::Inline => self
                .config
                .clone()
                .ok_or_else(|| config_err("device.config", "required when preset is `inline`"))?,
        };
        if self.config.is_some() && self.preset != DevicePreset::Inline {
            return Err(config_err("device.config", "only allowed with preset `inline`"));
        }
        let targets = [self.mode_overlap.is_some(), self.visibility.is_some(), self.optical_visibility.is_some()];
        if targets.iter().filter(|t| **t).count() > 1 {
            return Err(config_err(
                "device",
                "give at most one of mode_overlap, visibility, optical_visibility",
            ));
        }
        if let Some(g) = self.mode_overlap {
            cfg.mode_overlap = g;
        }
        if !self.phase_offset_deg.is_finite() {
            return Err(config_err("device.phase_offset_deg", "must be finite"));
        }
        if !(self.phase_drift_deg >= 0.0 && self.phase_drift_deg.is_finite()) {
            return Err(config_err("device.phase_drift_deg", "must be >= 0"));
        }
        if self.preset != DevicePreset::Inline || self.phase_offset_deg != 0.0 {
            cfg.phase_offset = self.phase_offset_deg.to_radians();
        }
        if self.preset != DevicePreset::Inline || self.phase_drift_deg != 0.0 {
            cfg.phase_drift = self.phase_drift_deg.to_radians();
        }
        cfg.validate().map_err(|e| config_err("device", e))?;
        if let Some(v) = self.visibility {
            cfg = tune_visibility(&cfg, det, v).map_err(|e| config_err("device.visibility", e))?;
        }
        if let Some(v) = self.optical_visibility {
            cfg = tune_optical_visibility(&cfg, v).map_err(|e| config_err("device.optical_visibility", e))?;
        }
        Ok(cfg)
    }
}

/// Detection parameters; the per-configuration trials come from the schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSpec {
    #[serde(default = "default_mu")]
    pub mean_photons: f64,
    #[serde(default = "default_qe")]
    pub detector_efficiency: f64,
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default = "default_period")]
    pub trial_period: f64,
}

fn default_mu() -> f64 {
    DetectionConfig::experimental().mean_photons
}
fn default_qe() -> f64 {
    DetectionConfig::experimental().detector_efficiency
}
fn default_background() -> f64 {
    DetectionConfig::experimental().background
}
fn default_period() -> f64 {
    DetectionConfig::experimental().trial_period
}

impl Default for DetectionSpec {
    fn default() -> Self {
        let p = DetectionConfig::experimental();
        Self {
            mean_photons: p.mean_photons,
            detector_efficiency: p.detector_efficiency,
            background: p.background,
            trial_period: p.trial_period,
        }
    }
}

impl DetectionSpec {
    pub fn build(&self, trials: u64) -> CliResult<DetectionConfig> {
        let d = DetectionConfig {
            mean_photons: self.mean_photons,
            detector_efficiency: self.detector_efficiency,
            background: self.background,
            trials,
            trial_period: self.trial_period,
        };
        d.validate().map_err(|e| config_err("detection", e))?;
        Ok(d)
    }
}

/// Input state: a named mode, Bloch angles, or raw amplitudes
/// (two for a qubit over `|R>, |L>`; four for a qudit over `l = -3, -1, +1, +3`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Named(NamedState),
    Bloch { theta_deg: f64, phi_deg: f64 },
    /// `[re, im]` pairs; normalized on load.
    Amplitudes(Vec<[f64; 2]>),
}

#[derive(Debug, Clone)]
pub enum Input {
    Qubit { label: String, state: PureQubit },
    Qudit { label: String, state: QuditState },
}

impl InputSpec {
    fn build(&self, index: usize) -> CliResult<Input> {
        let path = format!("inputs[{index}]");
        match self {
            InputSpec::Named(s) => Ok(Input::Qubit {
                label: s.to_string(),
                state: s.qubit(),
            }),
            InputSpec::Bloch { theta_deg, phi_deg } => {
                if !(theta_deg.is_finite() && phi_deg.is_finite()) {
                    return Err(config_err(&path, "angles must be finite"));
                }
                Ok(Input::Qubit {
                    label: format!("bloch({theta_deg},{phi_deg})"),
                    state: PureQubit::from_bloch_angles(theta_deg.to_radians(), phi_deg.to_radians()),
                })
            }
            InputSpec::Amplitudes(a) => {
                let c: Vec<Complex64> = a.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(config_err(&path, "amplitudes must be finite and not all zero"));
                }
                let label = format!("input{index}");
                match c.len() {
                    2 => Ok(Input::Qubit {
                        label,
                        state: PureQubit::new(c[0] / n, c[1] / n).map_err(|e| config_err(&path, e))?,
                    }),
                    4 => Ok(Input::Qudit {
                        label,
                        state: QuditState::normalized([c[0], c[1], c[2], c[3]]).map_err(|e| config_err(&path, e))?,
                    }),
                    k => Err(config_err(&path, format!("{k} amplitudes; expected 2 or 4"))),
                }
            }
        }
    }
}

/// Tomography schedule: the standard six projectors, or explicit entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_trials")]
    pub fringe_trials: u64,
    #[serde(default = "default_trials")]
    pub blocked_trials: u64,
    pub entries: Option<Vec<ScheduleEntry>>,
}

fn default_trials() -> u64 {
    1_000_000
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            fringe_trials: default_trials(),
            blocked_trials: default_trials(),
            entries: None,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> CliResult<MeasurementSchedule> {
        let s = match &self.entries {
            Some(entries) => {
                for (i, e) in entries.iter().enumerate() {
                    if e.trials == 0 {
                        return Err(config_err(&format!("schedule.entries[{i}].trials"), "must be >= 1"));
                    }
                }
                MeasurementSchedule { entries: entries.clone() }
            }
            None => {
                if self.fringe_trials == 0 {
                    return Err(config_err("schedule.fringe_trials", "must be >= 1"));
                }
                if self.blocked_trials == 0 {
                    return Err(config_err("schedule.blocked_trials", "must be >= 1"));
                }
                MeasurementSchedule::standard(self.fringe_trials, self.blocked_trials)
            }
        };
        s.validate().map_err(|e| config_err("schedule", e))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    #[serde(default = "default_calibration_bins")]
    pub bins: usize,
    #[serde(default = "default_calibration_trials")]
    pub trials_per_bin: u64,
}

fn default_calibration_bins() -> usize {
    ScanSpec::default().bins
}
fn default_calibration_trials() -> u64 {
    ScanSpec::default().trials_per_bin
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        let s = ScanSpec::default();
        Self {
            bins: s.bins,
            trials_per_bin: s.trials_per_bin,
        }
    }
}

impl CalibrationSpec {
    fn build(&self) -> CliResult<ScanSpec> {
        if self.bins < 8 {
            return Err(config_err("calibration.bins", "must be >= 8"));
        }
        if self.trials_per_bin == 0 {
            return Err(config_err("calibration.trials_per_bin", "must be >= 1"));
        }
        Ok(ScanSpec {
            bins: self.bins,
            trials_per_bin: self.trials_per_bin,
        })
    }
}

/// Phase-camera frames rendered by `simulate`, one per schedule phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub geometry: FrameGeometry,
    #[serde(default)]
    pub defects: Defects,
    #[serde(default)]
    pub noise: FrameNoise,
}

fn yes() -> bool {
    true
}

impl Default for FramesSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            geometry: FrameGeometry::default(),
            defects: Defects::default(),
            noise: FrameNoise::default(),
        }
    }
}

/// Four-path network used for qudit inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuditSpec {
    /// Crosstalk suppression between paths (dB).
    #[serde(default = "default_qudit_suppression")]
    pub suppression_db: f64,
    #[serde(default = "default_split")]
    pub input: InputSplit,
    #[serde(default = "default_qudit_trials")]
    pub trials: u64,
    /// Include the crosstalk in the reconstruction model.
    #[serde(default = "yes")]
    pub model_crosstalk: bool,
}

fn default_qudit_suppression() -> f64 {
    qudit::crosstalk_suppression_db(2)
}
fn default_split() -> InputSplit {
    InputSplit::Cascade
}
fn default_qudit_trials() -> u64 {
    100_000
}

impl Default for QuditSpec {
    fn default() -> Self {
        Self {
            suppression_db: default_qudit_suppression(),
            input: default_split(),
            trials: default_qudit_trials(),
            model_crosstalk: true,
        }
    }
}

impl QuditSpec {
    fn build(&self) -> CliResult<(NetworkConfig, NetworkConfig)> {
        if self.trials == 0 {
            return Err(config_err("qudit.trials", "must be >= 1"));
        }
        if !self.suppression_db.is_finite() {
            return Err(config_err("qudit.suppression_db", "must be finite"));
        }
        let mut device = NetworkConfig::cascade(self.suppression_db);
        device.input = self.input;
        device.validate().map_err(|e| config_err("qudit", e))?;
        let model = if self.model_crosstalk {
            device.clone()
        } else {
            device.without_crosstalk()
        };
        Ok((device, model))
    }
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub seed: u64,
    pub device: InterferometerConfig,
    pub detection: DetectionConfig,
    pub schedule: MeasurementSchedule,
    pub scan: ScanSpec,
    pub inputs: Vec<Input>,
    pub network: NetworkConfig,
    pub network_model: NetworkConfig,
}

/// Parses a config, reporting the JSON path, line and column of the first error.
pub fn parse_config(bytes: &[u8]) -> CliResult<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        CliError::Config(format!(
            "`{path}` (line {}, column {}): {}",
            inner.line(),
            inner.column(),
            strip_position(&inner.to_string())
        ))
    })?;
    de.end().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn strip_position(msg: &str) -> &str {
    msg.rfind(" at line ").map_or(msg, |i| &msg[..i])
}

impl Experiment {
    pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = parse_config(&bytes)?;
        Self::from_config(config, sha256_hex(&bytes), seed_override)
    }

    pub fn from_config(config: ExperimentConfig, sha256: String, seed_override: Option<u64>) -> CliResult<Self> {
        let schedule = config.schedule.build()?;
        let detection = config.detection.build(schedule.entries[0].trials)?;
        let device = config.device.build(&detection)?;
        let scan = config.calibration.build()?;
        if config.inputs.is_empty() {
            return Err(config_err("inputs", "at least one input is required"));
        }
        let inputs = config
            .inputs
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(i))
            .collect::<CliResult<Vec<_>>>()?;
        let (network, network_model) = config.qudit.build()?;
        config
            .frames
            .geometry
            .validate()
            .map_err(|e| config_err("frames.geometry", e))?;
        config
            .frames
            .defects
            .validate()
            .map_err(|e| config_err("frames.defects", e))?;
        Ok(Self {
            seed: seed_override.unwrap_or(config.seed),
            config,
            sha256,
            device,
            detection,
            schedule,
            scan,
            inputs,
            network,
            network_model,
        })
    }

    fn qubits(&self) -> Vec<(String, PureQubit)> {
        self.inputs
            .iter()
            .filter_map(|i| match i {
                Input::Qubit { label, state } => Some((label.clone(), *state)),
                _ => None,
            })
            .collect()
    }

    fn qudits(&self) -> Vec<(String, QuditState)> {
        self.inputs
            .iter()
            .filter_map(|i| match i {
                Input::Qudit { label, state } => Some((label.clone(), state.clone())),
                _ => None,
            })
            .collect()
    }

    fn provenance(&self) -> Vec<(&'static str, String)> {
        vec![("config_sha256", self.sha256.clone()), ("seed", self.seed.to_string())]
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Artifacts

#[derive(Debug, Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, sha: &str, seed: u64, body: T) -> CliResult<()> {
    let stamped = Stamped {
        config_sha256: sha,
        seed,
        body,
    };
    let mut text = serde_json::to_string_pretty(&stamped)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", path.display()))
    })?))
}

fn write_counts(dir: &Path, stem: &str, format: Format, records: &[CountRecord], prov: &[(&str, String)]) -> CliResult<PathBuf> {
    match format {
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            let mut w = create(&path)?;
            write_counts_csv(&mut w, records, prov)?;
            w.flush()?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            #[derive(Serialize)]
            struct Body<'a> {
                records: &'a [CountRecord],
            }
            write_json(&path, &prov[0].1, prov[1].1.parse().unwrap_or(0), Body { records })?;
            Ok(path)
        }
    }
}

#[derive(Debug, Serialize)]
struct QubitResultJson {
    input: String,
    target: [[f64; 2]; 2],
    density: DensityJson,
    fidelity: f64,
    fidelity_sigma: f64,
    fidelity_bound: f64,
    stokes_raw: [f64; 3],
    stokes_sigma: [f64; 3],
    probabilities: [f64; 6],
}

#[derive(Debug, Serialize)]
struct DensitiesJson {
    device: InterferometerConfig,
    detection: DetectionConfig,
    bounds: FidelityBounds,
    states: Vec<QubitResultJson>,
}

#[derive(Debug, Serialize)]
struct QuditResultJson {
    input: String,
    target: Vec<[f64; 2]>,
    density: DensityJson,
    raw_density: DensityJson,
    residual: f64,
    fidelity: f64,
}

#[derive(Debug, Serialize)]
struct QuditJson {
    condition_number: f64,
    trials: u64,
    states: Vec<QuditResultJson>,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// Per-input tomography outcome, for summaries.
#[derive(Debug, Clone)]
pub struct Fidelity {
    pub label: String,
    pub fidelity: f64,
    pub sigma: f64,
}

fn summary_line(prefix: &str, fids: &[Fidelity]) -> String {
    let parts: Vec<String> = fids.iter().map(|f| format!("{}={:.4}", f.label, f.fidelity)).collect();
    format!("{prefix}: {}", parts.join(" "))
}

fn run_qubit_tomography(exp: &Experiment, dir: &Path, format: Format) -> CliResult<Vec<Fidelity>> {
    let qubits = exp.qubits();
    if qubits.is_empty() {
        return Ok(Vec::new());
    }
    let stream = derive_seed(exp.seed, STREAM_TOMOGRAPHY);
    let budget = ErrorBudget::of_device(&exp.device, &exp.detection);
    let bounds = fidelity_bounds(&budget)?;
    let mut records = Vec::new();
    let mut states = Vec::new();
    let mut fids = Vec::new();
    for (i, (label, q)) in qubits.iter().enumerate() {
        let res = run_tomography(
            q,
            &exp.schedule,
            &exp.device,
            &exp.detection,
            &exp.config.options,
            derive_seed(stream, i as u64),
        )?;
        for mut r in res.records.iter().cloned() {
            r.configuration_id = format!("{label}/{}", r.configuration_id);
            records.push(r);
        }
        let p = &res.probabilities;
        states.push(QubitResultJson {
            input: label.clone(),
            target: [pair(q.alpha()), pair(q.beta())],
            density: res.density.to_json(),
            fidelity: res.fidelity,
            fidelity_sigma: res.fidelity_sigma,
            fidelity_bound: bounds.for_state(&pure_to_stokes(q)?),
            stokes_raw: res.stokes.as_array(),
            stokes_sigma: res.stokes_sigma,
            probabilities: [p.p_r, p.p_l, p.p_h, p.p_v, p.p_d, p.p_a],
        });
        fids.push(Fidelity {
            label: label.clone(),
            fidelity: res.fidelity,
            sigma: res.fidelity_sigma,
        });
    }
    let prov = exp.provenance();
    write_counts(dir, "counts", format, &records, &prov)?;
    write_json(
        &dir.join("densities.json"),
        &exp.sha256,
        exp.seed,
        DensitiesJson {
            device: exp.device.clone(),
            detection: exp.detection,
            bounds,
            states,
        },
    )?;
    Ok(fids)
}

fn run_calibration(exp: &Experiment, dir: &Path, format: Format) -> CliResult<CalibrationReport> {
    let (report, records) = calibrate(
        &exp.device,
        &exp.detection,
        &exp.scan,
        derive_seed(exp.seed, STREAM_CALIBRATION),
    )?;
    write_counts(dir, "calibration_counts", format, &records, &exp.provenance())?;
    write_json(&dir.join("calibration.json"), &exp.sha256, exp.seed, &report)?;
    Ok(report)
}

fn calibration_line(r: &CalibrationReport) -> String {
    let parts: Vec<String> = r
        .modes
        .iter()
        .map(|m| format!("{}={:.2}", m.mode, m.theta_deg))
        .collect();
    format!(
        "calibration theta(deg): {} | mean deviation {:.2} +/- {:.2} deg | visibility {:.3}{}",
        parts.join(" "),
        r.mean_deviation_deg,
        r.deviation_spread_deg,
        r.visibility,
        if r.misaligned { " | MISALIGNED" } else { "" }
    )
}

fn run_qudits(exp: &Experiment, dir: &Path, format: Format) -> CliResult<Vec<Fidelity>> {
    let qudits = exp.qudits();
    if qudits.is_empty() {
        return Ok(Vec::new());
    }
    let set = ProjectorSet::standard();
    let (_, cond) = set.conditioning(&exp.network_model)?;
    let det = DetectionConfig {
        trials: exp.config.qudit.trials,
        ..exp.detection
    };
    let stream = derive_seed(exp.seed, STREAM_QUDIT);
    let mut all_counts: Vec<QuditCount> = Vec::new();
    let mut states = Vec::new();
    let mut fids = Vec::new();
    for (i, (label, state)) in qudits.iter().enumerate() {
        let psi = state.to_vector();
        let rho = DensityMatrix::from_pure(&psi)?;
        let counts = simulate_qudit_counts(&rho, &set, &exp.network, &det, det.trials, derive_seed(stream, i as u64))?;
        let powers = counts_to_powers(&counts, &det)?;
        let rec = reconstruct_qudit(&powers, &set, &exp.network_model)?;
        let fidelity = rec.density.fidelity(&psi)?;
        for mut c in counts {
            c.configuration_id = format!("{label}/{}", c.configuration_id);
            all_counts.push(c);
        }
        states.push(QuditResultJson {
            input: label.clone(),
            target: psi.iter().map(|z| pair(*z)).collect(),
            density: rec.density.to_json(),
            raw_density: rec.raw.to_json(),
            residual: rec.residual,
            fidelity,
        });
        fids.push(Fidelity {
            label: label.clone(),
            fidelity,
            sigma: f64::NAN,
        });
    }
    let prov = exp.provenance();
    match format {
        Format::Csv => {
            let mut w = create(&dir.join("qudit_counts.csv"))?;
            write_qudit_counts_csv(&mut w, &all_counts, &prov)?;
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                configuration_id: &'a str,
                port: usize,
                trials: u64,
                clicks: u64,
                seed: u64,
            }
            #[derive(Serialize)]
            struct Body<'a> {
                records: Vec<Row<'a>>,
            }
            let records = all_counts
                .iter()
                .map(|c| Row {
                    configuration_id: &c.configuration_id,
                    port: c.port,
                    trials: c.trials,
                    clicks: c.clicks,
                    seed: c.seed,
                })
                .collect();
            write_json(&dir.join("qudit_counts.json"), &exp.sha256, exp.seed, Body { records })?;
        }
    }
    write_json(
        &dir.join("qudit.json"),
        &exp.sha256,
        exp.seed,
        QuditJson {
            condition_number: cond,
            trials: det.trials,
            states,
        },
    )?;
    Ok(fids)
}

/// Reference-beam frames for each distinct phase set-point of the schedule.
fn render_schedule_frames(exp: &Experiment, dir: &Path) -> CliResult<usize> {
    let spec = &exp.config.frames;
    if !spec.enabled {
        return Ok(0);
    }
    let bins: BTreeSet<i64> = exp
        .schedule
        .entries
        .iter()
        .filter_map(|e| match e.setting {
            tomo::Setting::Phase { phi } => {
                Some((apparatus::phase_bin_deg(phi + exp.config.options.phase_correction, apparatus::PHASE_BINS) * 1000.0).round() as i64)
            }
            _ => None,
        })
        .collect();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let stream = derive_seed(exp.seed, STREAM_FRAMES);
    let jobs: Vec<(usize, f64)> = bins.iter().enumerate().map(|(k, b)| (k, *b as f64 / 1000.0)).collect();
    jobs.par_iter()
        .map(|&(k, deg)| -> CliResult<()> {
            let actual = deg.to_radians() + exp.device.phase_offset;
            let phi_ref = reference_phase(actual);
            let seed = derive_seed(stream, k as u64);
            let frame = synthesize_frame(phi_ref, &spec.defects, &spec.noise, &spec.geometry, &mut rng(seed))?;
            let comment = format!(
                "config_sha256={}\nseed={}\nframe_seed={seed}\nsetpoint_deg={deg}\nreference_phi_deg={}",
                exp.sha256,
                exp.seed,
                phi_ref.to_degrees()
            );
            let mut w = create(&frames_dir.join(format!("phase_{:07.3}.pgm", deg)))?;
            frame.bitmap.write_pgm(&mut w, Some(&comment))?;
            w.flush()?;
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    Ok(jobs.len())
}

fn out_dir(cli_out: &Option<PathBuf>, cfg_out: Option<&PathBuf>) -> CliResult<PathBuf> {
    let dir = cli_out
        .clone()
        .or_else(|| cfg_out.cloned())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_simulate(cli: &Cli, config: &Path) -> CliResult<()> {
    let exp = Experiment::load(config, cli.seed)?;
    let dir = out_dir(&cli.out, exp.config.out.as_ref())?;
    let format = cli.format.unwrap_or(Format::Csv);
    let report = run_calibration(&exp, &dir, format)?;
    let mut fids = run_qubit_tomography(&exp, &dir, format)?;
    fids.extend(run_qudits(&exp, &dir, format)?);
    let frames = render_schedule_frames(&exp, &dir)?;
    println!("{}", calibration_line(&report));
    println!("{}", summary_line("fidelity", &fids));
    eprintln!("wrote artifacts ({frames} frames) to {}", dir.display());
    Ok(())
}

pub fn cmd_calibrate(cli: &Cli, config: &Path) -> CliResult<()> {
    let exp = Experiment::load(config, cli.seed)?;
    let dir = out_dir(&cli.out, exp.config.out.as_ref())?;
    let report = run_calibration(&exp, &dir, cli.format.unwrap_or(Format::Csv))?;
    println!("{}", calibration_line(&report));
    Ok(())
}

pub fn cmd_tomograph(cli: &Cli, config: &Path) -> CliResult<()> {
    let exp = Experiment::load(config, cli.seed)?;
    if exp.qubits().is_empty() {
        return Err(config_err("inputs", "no qubit inputs"));
    }
    let dir = out_dir(&cli.out, exp.config.out.as_ref())?;
    let fids = run_qubit_tomography(&exp, &dir, cli.format.unwrap_or(Format::Csv))?;
    println!("{}", summary_line("fidelity", &fids));
    Ok(())
}

pub fn cmd_qudit(cli: &Cli, config: &Path) -> CliResult<()> {
    let exp = Experiment::load(config, cli.seed)?;
    if exp.qudits().is_empty() {
        return Err(config_err("inputs", "no four-amplitude inputs"));
    }
    let dir = out_dir(&cli.out, exp.config.out.as_ref())?;
    let fids = run_qudits(&exp, &dir, cli.format.unwrap_or(Format::Csv))?;
    println!("{}", summary_line("qudit fidelity", &fids));
    Ok(())
}

/// One analyzed frame.
#[derive(Debug, Clone, Serialize)]
pub struct FramePhase {
    pub frame_id: String,
    pub alpha_d_deg: f64,
    pub phi_deg: f64,
    pub min_bin_index: usize,
    pub residual: f64,
    pub phi_true_deg: Option<f64>,
    pub error_deg: Option<f64>,
}

pub fn cmd_analyze_frames(cli: &Cli, args: &AnalyzeArgs) -> CliResult<()> {
    phasecam::validate_bins(args.bins).map_err(|e| config_err("--bins", e))?;
    if !args.fit && args.ringfit.is_none() {
        return Err(CliError::Config("no ring fit: pass --fit or --ringfit <path>".into()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", args.dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Runtime(format!("no .pgm frames in {}", args.dir.display())));
    }

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&(args.fit, args.bins, args.enhance))?);
    let mut frames = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = fs::read(p)?;
        hasher.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        hasher.update(&bytes);
        let bitmap = Bitmap::read_pgm(BufReader::new(bytes.as_slice()))
            .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let frame = PhaseFrame::new(bitmap).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        frames.push(if args.enhance { enhance(&frame) } else { frame });
        ids.push(p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let ring = match &args.ringfit {
        Some(path) => {
            let text = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read ring fit {}: {e}", path.display())))?;
            hasher.update(&text);
            serde_json::from_slice::<RingFit>(&text)
                .map_err(|e| CliError::Config(format!("ring fit {}: {e}", path.display())))?
        }
        None => fit_ring(&average_frames(&frames)?)?,
    };
    let sha = format!("{:x}", hasher.finalize());
    let seed = cli.seed.unwrap_or(0);
    let dir = out_dir(&cli.out, None)?;
    if args.fit {
        write_json(&dir.join("ringfit.json"), &sha, seed, ring)?;
    }

    let rows: Vec<FramePhase> = frames
        .par_iter()
        .zip(ids.par_iter())
        .zip(paths.par_iter())
        .map(|((f, id), p)| -> CliResult<FramePhase> {
            let est = extract_phase(&f.intensity(), &ring, args.bins)?;
            let truth = read_truth(&p.with_extension("json"))?;
            let phi_true = truth.map(|t| t.phi_rad);
            Ok(FramePhase {
                frame_id: id.clone(),
                alpha_d_deg: est.alpha_d.to_degrees(),
                phi_deg: est.phi.to_degrees(),
                min_bin_index: est.min_bin,
                residual: est.residual,
                phi_true_deg: phi_true.map(|t| t.rem_euclid(2.0 * PI).to_degrees()),
                error_deg: phi_true.map(|t| angle_diff(est.phi, t).to_degrees()),
            })
        })
        .collect::<CliResult<_>>()?;

    match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = create(&dir.join("phases.csv"))?;
            writeln!(w, "# config_sha256={sha}")?;
            writeln!(w, "# seed={seed}")?;
            writeln!(w, "# bins={}", args.bins)?;
            let truth = rows.iter().any(|r| r.phi_true_deg.is_some());
            write!(w, "frame_id,alpha_d_deg,phi_deg,min_bin_index,residual")?;
            writeln!(w, "{}", if truth { ",phi_true_deg,error_deg" } else { "" })?;
            for r in &rows {
                write!(w, "{},{},{},{},{}", r.frame_id, r.alpha_d_deg, r.phi_deg, r.min_bin_index, r.residual)?;
                if truth {
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    write!(w, ",{},{}", opt(r.phi_true_deg), opt(r.error_deg))?;
                }
                writeln!(w)?;
            }
            w.flush()?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Body<'a> {
                bins: usize,
                ring_fit: RingFit,
                frames: &'a [FramePhase],
            }
            write_json(&dir.join("phases.json"), &sha, seed, Body { bins: args.bins, ring_fit: ring, frames: &rows })?;
        }
    }
    let max_err = rows.iter().filter_map(|r| r.error_deg).map(f64::abs).fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    match max_err {
        Some(e) => println!("analyzed {} frames; max |error| {e:.3} deg", rows.len()),
        None => println!("analyzed {} frames", rows.len()),
    }
    Ok(())
}

fn read_truth(path: &Path) -> CliResult<Option<FrameTruth>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read(path)?;
    serde_json::from_slice(&text)
        .map(Some)
        .map_err(|e| CliError::Runtime(format!("sidecar {}: {e}", path.display())))
}

// the truth carries its own per-frame seed
#[derive(Serialize)]
struct Sidecar<'a> {
    config_sha256: &'a str,
    master_seed: u64,
    #[serde(flatten)]
    truth: &'a FrameTruth,
}

pub fn cmd_gen_frames(cli: &Cli, args: &GenArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(config_err("--count", "must be >= 1"));
    }
    let geometry = FrameGeometry {
        width: args.size,
        height: args.size,
        center: ((args.size as f64 - 1.0) / 2.0, (args.size as f64 - 1.0) / 2.0),
        waist_px: args.waist,
        depth: if args.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight },
        ..FrameGeometry::default()
    };
    geometry.validate().map_err(|e| config_err("--size/--waist", e))?;
    let defects = Defects {
        offset: args.offset,
        tilt: args.tilt,
        lobe_imbalance: args.imbalance,
    };
    defects.validate().map_err(|e| config_err("--offset/--tilt/--imbalance", e))?;
    if args.photons.is_some_and(|p| !(p > 0.0)) {
        return Err(config_err("--photons", "must be > 0"));
    }
    if !(args.background >= 0.0) {
        return Err(config_err("--background", "must be >= 0"));
    }
    let noise = FrameNoise {
        photons_at_peak: args.photons,
        background: args.background,
    };
    let seed = cli.seed.unwrap_or(0);
    let sha = sha256_hex(&serde_json::to_vec(args)?);
    let dir = out_dir(&cli.out, None)?;
    let width = (args.count - 1).to_string().len().max(4);
    (0..args.count)
        .into_par_iter()
        .map(|k| -> CliResult<()> {
            let frame_seed = derive_seed(seed, k as u64);
            let mut r = rng(frame_seed);
            let phi = if args.random {
                r.gen::<f64>() * 2.0 * PI
            } else {
                2.0 * PI * k as f64 / args.count as f64
            };
            let frame = synthesize_frame(phi, &defects, &noise, &geometry, &mut r)?;
            let id = format!("frame_{k:0width$}");
            let truth = FrameTruth {
                frame_id: id.clone(),
                phi_rad: phi,
                phi_deg: phi.to_degrees(),
                alpha_d_deg: ((phi - PI) / 2.0).rem_euclid(PI).to_degrees(),
                defects,
                noise,
                geometry,
                seed: frame_seed,
            };
            let comment = format!("config_sha256={sha}\nseed={seed}\nframe_id={id}\nphi_deg={}", truth.phi_deg);
            let mut w = create(&dir.join(format!("{id}.pgm")))?;
            frame.bitmap.write_pgm(&mut w, Some(&comment))?;
            w.flush()?;
            let mut text = serde_json::to_string_pretty(&Sidecar {
                config_sha256: &sha,
                master_seed: seed,
                truth: &truth,
            })?;
            text.push('\n');
            fs::write(dir.join(format!("{id}.json")), text)?;
            Ok(())
        })
        .collect::<CliResult<Vec<()>>>()?;
    println!("wrote {} frames to {}", args.count, dir.display());
    Ok(())
}

/// Everything `budget` reports.
#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    pub stages: Vec<tomo::Stage>,
    pub detection_efficiency: f64,
    pub detection_loss_db: f64,
    pub delta_l_cm: f64,
    pub delta_nu_ghz: f64,
    pub geometric_phase_deg: f64,
    pub dispersion_phase_deg: f64,
    pub error_budget: ErrorBudget,
    pub bounds: FidelityBounds,
    pub extensions: Vec<ExtensionBudget>,
}

pub fn budget_report(args: &BudgetArgs) -> CliResult<BudgetReport> {
    let presets = match &args.preset {
        Some(p) => vec![ExtensionPreset::parse(p).map_err(|e| config_err("--preset", e))?],
        None => ExtensionPreset::ALL.to_vec(),
    };
    let stages = detection_chain();
    let eff = efficiency_budget(&stages)?;
    let error_budget = ErrorBudget {
        visibility: args.visibility,
        leakage: db_to_ratio(args.suppression_db),
        calibration_offset: args.offset_deg.to_radians(),
        coupling_imbalance: args.imbalance,
    };
    let bounds = fidelity_bounds(&error_budget).map_err(|e| config_err("budget", e))?;
    Ok(BudgetReport {
        detection_efficiency: eff,
        detection_loss_db: tomo::ratio_to_db(eff),
        stages,
        delta_l_cm: args.d_l,
        delta_nu_ghz: args.d_nu,
        geometric_phase_deg: phase_sensitivity_geometric(args.d_l, args.d_nu),
        dispersion_phase_deg: phase_sensitivity_dispersion(args.d_l, args.d_nu),
        error_budget,
        bounds,
        extensions: presets.into_iter().map(extension_budget).collect(),
    })
}

pub fn cmd_budget(cli: &Cli, args: &BudgetArgs) -> CliResult<()> {
    let r = budget_report(args)?;
    let mut out = std::io::stdout().lock();
    match cli.format {
        Some(Format::Json) => {
            let sha = sha256_hex(&serde_json::to_vec(args)?);
            let stamped = Stamped {
                config_sha256: &sha,
                seed: cli.seed.unwrap_or(0),
                body: &r,
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&stamped)?)?;
        }
        Some(Format::Csv) => {
            writeln!(out, "section,name,value")?;
            for s in &r.stages {
                writeln!(out, "efficiency,{},{}", s.name, s.efficiency)?;
            }
            writeln!(out, "efficiency,total,{}", r.detection_efficiency)?;
            writeln!(out, "phase,geometric_deg,{}", r.geometric_phase_deg)?;
            writeln!(out, "phase,dispersion_deg,{}", r.dispersion_phase_deg)?;
            writeln!(out, "fidelity,max_equatorial,{}", r.bounds.f_max_equatorial)?;
            writeln!(out, "fidelity,max_poles,{}", r.bounds.f_max_poles)?;
            for e in &r.extensions {
                writeln!(out, "extension,{},dimension={};loss={};suppression_db={}", e.preset, e.dimension, e.loss, e.crosstalk_suppression_db)?;
            }
        }
        None => {
            writeln!(out, "Detection efficiency")?;
            for s in &r.stages {
                writeln!(out, "  {:<34} {:>6.1}%", s.name, 100.0 * s.efficiency)?;
            }
            writeln!(out, "  {:<34} {:>6.1}%  ({:.2} dB)", "total", 100.0 * r.detection_efficiency, r.detection_loss_db)?;
            writeln!(out, "Phase sensitivity (dL = {} cm, dnu = {} GHz)", r.delta_l_cm, r.delta_nu_ghz)?;
            writeln!(out, "  {:<34} {:>8.3} deg", "geometric", r.geometric_phase_deg)?;
            writeln!(out, "  {:<34} {:>8.3} deg", "fiber dispersion", r.dispersion_phase_deg)?;
            writeln!(
                out,
                "Fidelity bounds (V = {}, eps = {:.2e}, offset = {} deg, dEta = {})",
                r.error_budget.visibility, r.error_budget.leakage, args.offset_deg, r.error_budget.coupling_imbalance
            )?;
            writeln!(out, "  {:<34} {:>7.2}%", "equatorial states", 100.0 * r.bounds.f_max_equatorial)?;
            writeln!(out, "  {:<34} {:>7.2}%", "poles", 100.0 * r.bounds.f_max_poles)?;
            writeln!(out, "Extensions")?;
            writeln!(out, "  {:<12} {:>9} {:>7} {:>16}", "preset", "dimension", "loss", "crosstalk")?;
            for e in &r.extensions {
                writeln!(
                    out,
                    "  {:<12} {:>9} {:>6.0}% {:>12} dB",
                    e.preset.to_string(),
                    e.dimension,
                    100.0 * e.loss,
                    format!(">{}", e.crosstalk_suppression_db)
                )?;
            }
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate { config } => cmd_simulate(&cli, config),
        Command::Calibrate { config } => cmd_calibrate(&cli, config),
        Command::Tomograph { config } => cmd_tomograph(&cli, config),
        Command::Qudit { config } => cmd_qudit(&cli, config),
        Command::AnalyzeFrames(a) => cmd_analyze_frames(&cli, a),
        Command::GenFrames(a) => cmd_gen_frames(&cli, a),
        Command::Budget(a) => cmd_budget(&cli, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"seed": 7, "inputs": [{"named": "H"}]}"#
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config(minimal().as_bytes()).unwrap();
        let exp = Experiment::from_config(cfg, "x".into(), None).unwrap();
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.schedule.entries.len(), 6);
        assert_eq!(exp.detection.mean_photons, 0.6);
        assert_eq!(exp.device.r_path.qubit_leakage(), db_to_ratio(25.0));
    }

    #[test]
    fn negative_trials_name_the_field() {
        let text = "{\"seed\": 1,\n \"inputs\": [{\"named\": \"R\"}],\n \"schedule\": {\"fringe_trials\": -5}}";
        let e = parse_config(text.as_bytes()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let msg = e.to_string();
        assert!(msg.contains("schedule.fringe_trials"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn zero_trials_rejected_after_parse() {
        let text = r#"{"seed": 1, "inputs": [{"named": "R"}], "schedule": {"blocked_trials": 0}}"#;
        let cfg = parse_config(text.as_bytes()).unwrap();
        let e = Experiment::from_config(cfg, String::new(), None).unwrap_err();
        assert!(e.to_string().contains("schedule.blocked_trials"), "{e}");
    }

    #[test]
    fn seed_is_required() {
        let e = parse_config(br#"{"inputs": [{"named": "R"}]}"#).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn unknown_field_rejected_with_path() {
        let e = parse_config(br#"{"seed": 1, "inputs": [], "device": {"leak": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("device"), "{e}");
    }

    #[test]
    fn input_kinds() {
        let text = r#"{"seed": 1, "inputs": [
            {"named": "D"},
            {"bloch": {"theta_deg": 90, "phi_deg": 0}},
            {"amplitudes": [[1, 0], [0, 1]]},
            {"amplitudes": [[0, -1], [1, 0], [1, 0], [-1, 0]]}
        ]}"#;
        let exp = Experiment::from_config(parse_config(text.as_bytes()).unwrap(), String::new(), None).unwrap();
        assert_eq!(exp.qubits().len(), 3);
        let qd = exp.qudits();
        assert_eq!(qd.len(), 1);
        let ex = QuditState::example();
        for (a, b) in qd[0].1.amplitudes().iter().zip(ex.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
        let (_, d) = &exp.qubits()[2];
        assert!((d.beta() - NamedState::D.qubit().beta()).norm() < 1e-15);
    }

    #[test]
    fn three_amplitudes_rejected() {
        let text = r#"{"seed": 1, "inputs": [{"amplitudes": [[1, 0], [0, 1], [0, 0]]}]}"#;
        let e = Experiment::from_config(parse_config(text.as_bytes()).unwrap(), String::new(), None).unwrap_err();
        assert!(e.to_string().contains("inputs[0]"), "{e}");
    }

    #[test]
    fn visibility_target_tunes_overlap() {
        let text = r#"{"seed": 1, "inputs": [{"named": "H"}], "device": {"preset": "ideal", "visibility": 0.93}}"#;
        let exp = Experiment::from_config(parse_config(text.as_bytes()).unwrap(), String::new(), None).unwrap();
        let v = apparatus::fringe_visibility(&NamedState::H.qubit(), &exp.device, &exp.detection, apparatus::Port::X, 360);
        assert!((v - 0.93).abs() < 1e-6, "{v}");
    }

    #[test]
    fn inline_device_requires_config() {
        let text = r#"{"seed": 1, "inputs": [{"named": "H"}], "device": {"preset": "inline"}}"#;
        let e = Experiment::from_config(parse_config(text.as_bytes()).unwrap(), String::new(), None).unwrap_err();
        assert!(e.to_string().contains("device.config"), "{e}");
    }

    #[test]
    fn budget_defaults() {
        let args = BudgetArgs {
            d_l: 1.0,
            d_nu: 1.0,
            preset: Some("OAM-sorter".into()),
            visibility: 0.99,
            suppression_db: 25.0,
            offset_deg: 0.0,
            imbalance: 0.0,
        };
        let r = budget_report(&args).unwrap();
        assert!((r.detection_efficiency - 0.24).abs() < 1e-12);
        assert!((r.geometric_phase_deg - 12.0).abs() < 1e-12);
        assert!((r.dispersion_phase_deg + 0.1).abs() < 1e-12);
        assert!((r.bounds.f_max_equatorial - 0.995).abs() < 1e-12);
        assert_eq!(r.extensions.len(), 1);
        assert_eq!(r.extensions[0].dimension, 15);
        assert_eq!(r.extensions[0].loss, 0.40);
    }

    #[test]
    fn unknown_preset_is_config_error() {
        let args = BudgetArgs {
            d_l: 1.0,
            d_nu: 1.0,
            preset: Some("5BS".into()),
            visibility: 0.99,
            suppression_db: 25.0,
            offset_deg: 0.0,
            imbalance: 0.0,
        };
        assert_eq!(budget_report(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sha_is_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
