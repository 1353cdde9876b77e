//! Four-path extension over `l in {-3, -1, +1, +3}`.
//!
//! Path `i` projects onto basis mode `i` (index order `-3, -1, +1, +3`).
//! A tree of 50:50 combiners recombines the paths:
//!
//! ```text
//! stage 1:  u = (a0 + e^{i phi1} a1)/sqrt2    port 0 = (a0 - e^{i phi1} a1)/sqrt2
//!           v = (a2 + e^{i phi2} a3)/sqrt2    port 1 = (a2 - e^{i phi2} a3)/sqrt2
//! stage 2:  port 2 = (u + e^{i phi3} v)/sqrt2  port 3 = (u - e^{i phi3} v)/sqrt2
//! ```
//!
//! Tomography uses sixteen shutter/phase settings: four single-path
//! populations and, for each of the six path pairs, two relative phases.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apparatus::{db_to_ratio, DetectionConfig, ProjectorPath, DIFFRACTION_EFFICIENCY, FIBER_COUPLING};
use crate::error::{invalid, Error, Result};
use crate::qubit::{gell_mann_basis, DensityMatrix};
use crate::seed;
use crate::Complex64;

pub const DIM: usize = 4;
/// OAM value of each basis index.
pub const MODES: [i32; DIM] = [-3, -1, 1, 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct QuditState {
    amplitudes: [Complex64; DIM],
}

impl QuditState {
    pub fn new(amplitudes: [Complex64; DIM]) -> Result<Self> {
        let n: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(amplitudes: [Complex64; DIM]) -> Result<Self> {
        let n: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(Error::NotNormalized(0.0));
        }
        Self::new(amplitudes.map(|a| a / n))
    }

    /// Basis state `|l>`.
    pub fn basis(l: i32) -> Result<Self> {
        let i = mode_index(l)?;
        let mut a = [ZERO; DIM];
        a[i] = Complex64::new(1.0, 0.0);
        Self::new(a)
    }

    /// `(|+1> + |-1> - |+3> - i|-3>)/2`.
    pub fn example() -> Self {
        Self::new([
            Complex64::new(0.0, -0.5),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ])
        .expect("unit norm")
    }

    /// Haar-random pure state.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut a = [ZERO; DIM];
        for v in a.iter_mut() {
            *v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        Self::normalized(a).expect("nonzero with probability one")
    }

    pub fn amplitudes(&self) -> &[Complex64; DIM] {
        &self.amplitudes
    }

    pub fn to_vector(&self) -> Vec<Complex64> {
        self.amplitudes.to_vec()
    }
}

pub fn mode_index(l: i32) -> Result<usize> {
    MODES
        .iter()
        .position(|&m| m == l)
        .ok_or_else(|| invalid("l", format!("{l} is not one of {MODES:?}")))
}

/// Suppression of neighboring modes at the fiber for a given `|delta l|`.
pub fn crosstalk_suppression_db(delta_l: u32) -> f64 {
    match delta_l {
        0 => 0.0,
        1 => 17.0,
        _ => 27.0,
    }
}

/// Rejects mode sets with adjacent OAM values, whose crosstalk is too high.
pub fn validate_mode_set(modes: &[i32]) -> Result<()> {
    for (i, a) in modes.iter().enumerate() {
        for b in &modes[i + 1..] {
            if a == b {
                return Err(invalid("modes", format!("l={a} listed twice")));
            }
            if (a - b).abs() == 1 {
                return Err(invalid(
                    "modes",
                    format!(
                        "l={a} and l={b} differ by 1: crosstalk suppression is only {} dB, use spacing 2",
                        crosstalk_suppression_db(1)
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// How the input is distributed over the four projector paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSplit {
    /// Three cascaded 50:50 splitters: amplitude 1/2 into every path.
    Cascade,
    /// Lossless mode sorter: each mode routed to its own path.
    Sorter,
}

impl InputSplit {
    fn amplitude(self) -> f64 {
        match self {
            InputSplit::Cascade => 0.5,
            InputSplit::Sorter => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `phi1, phi2, phi3` (rad).
    pub phases: [f64; 3],
    pub open: [bool; DIM],
    pub paths: [ProjectorPath; DIM],
    pub input: InputSplit,
}

impl NetworkConfig {
    /// Sorter input, perfect projectors, everything open.
    pub fn lossless() -> Self {
        Self {
            phases: [0.0; 3],
            open: [true; DIM],
            paths: MODES.map(ProjectorPath::ideal),
            input: InputSplit::Sorter,
        }
    }

    /// Cascade input with nominal projectors and the given crosstalk
    /// suppression (dB) between all path pairs.
    pub fn cascade(suppression_db: f64) -> Self {
        let eps = db_to_ratio(suppression_db);
        let paths = MODES.map(|l| {
            let mut p = ProjectorPath::nominal(l);
            p.efficiency = DIFFRACTION_EFFICIENCY * FIBER_COUPLING;
            for m in MODES {
                if m != l {
                    p = p.with_leakage(m, eps);
                }
            }
            p
        });
        Self {
            phases: [0.0; 3],
            open: [true; DIM],
            paths,
            input: InputSplit::Cascade,
        }
    }

    /// Same device without any crosstalk.
    pub fn without_crosstalk(&self) -> Self {
        let mut c = self.clone();
        for p in c.paths.iter_mut() {
            p.leakage.clear();
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (p, &l) in self.paths.iter().zip(&MODES) {
            p.validate()?;
            if p.target_l != l {
                return Err(invalid("paths", format!("path for l={l} targets l={}", p.target_l)));
            }
        }
        if let Some(p) = self.phases.iter().find(|p| !p.is_finite()) {
            return Err(invalid("phases", format!("{p}")));
        }
        if !self.open.iter().any(|&o| o) {
            return Err(Error::AllPathsBlocked);
        }
        Ok(())
    }

    /// 4x4 map from input mode amplitudes to output-port amplitudes.
    pub fn transfer_matrix(&self) -> Result<DMatrix<Complex64>> {
        self.validate()?;
        let s = self.input.amplitude();
        // projector stage: rows are paths, columns input modes
        let proj = DMatrix::from_fn(DIM, DIM, |i, j| {
            if self.open[i] {
                Complex64::new(s * self.paths[i].amplitude(MODES[j]), 0.0)
            } else {
                ZERO
            }
        });
        Ok(combiner(&self.phases) * proj)
    }
}

/// Unitary of the combiner tree, rows are output ports.
pub fn combiner(phases: &[f64; 3]) -> DMatrix<Complex64> {
    let e = |p: f64| Complex64::from_polar(1.0, p);
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let (e1, e2, e3) = (e(phases[0]), e(phases[1]), e(phases[2]));
    let mut m = DMatrix::zeros(DIM, DIM);
    m[(0, 0)] = h;
    m[(0, 1)] = -h * e1;
    m[(1, 2)] = h;
    m[(1, 3)] = -h * e2;
    let half = Complex64::new(0.5, 0.0);
    // u = (a0 + e1 a1)/sqrt2, v = (a2 + e2 a3)/sqrt2
    for (port, sign) in [(2, 1.0), (3, -1.0)] {
        m[(port, 0)] = half;
        m[(port, 1)] = half * e1;
        m[(port, 2)] = half * e3 * sign;
        m[(port, 3)] = half * e3 * e2 * sign;
    }
    m
}

/// Power fractions `|C_ki|^2` of the combiner tree; they do not depend on the phases.
const WEIGHTS: [[f64; DIM]; DIM] = [
    [0.5, 0.5, 0.0, 0.0],
    [0.0, 0.0, 0.5, 0.5],
    [0.25, 0.25, 0.25, 0.25],
    [0.25, 0.25, 0.25, 0.25],
];

/// Path-space density `P rho P^dagger` after the projectors and shutters.
fn path_density(rho: &DMatrix<Complex64>, cfg: &NetworkConfig) -> Result<DMatrix<Complex64>> {
    cfg.validate()?;
    let s = cfg.input.amplitude();
    let proj = DMatrix::from_fn(DIM, DIM, |i, j| {
        if cfg.open[i] {
            Complex64::new(s * cfg.paths[i].amplitude(MODES[j]), 0.0)
        } else {
            ZERO
        }
    });
    Ok(&proj * rho * proj.adjoint())
}

// Diagonal terms use the fixed weights, so phases act only through
// interference between open paths.
fn port_probabilities(sigma: &DMatrix<Complex64>, phases: &[f64; 3]) -> [f64; DIM] {
    let c = combiner(phases);
    [0, 1, 2, 3].map(|k| {
        let mut p = 0.0;
        for i in 0..DIM {
            p += WEIGHTS[k][i] * sigma[(i, i)].re;
            for j in i + 1..DIM {
                if sigma[(i, j)] != ZERO {
                    p += 2.0 * (c[(k, i)].conj() * c[(k, j)] * sigma[(j, i)]).re;
                }
            }
        }
        p
    })
}

/// Detection probability per output port for a pure input.
pub fn network_probabilities(state: &QuditState, cfg: &NetworkConfig) -> Result<[f64; DIM]> {
    let psi = DVector::from_column_slice(state.amplitudes());
    let sigma = path_density(&(&psi * psi.adjoint()), cfg)?;
    Ok(port_probabilities(&sigma, &cfg.phases))
}

/// Port probabilities `diag(T rho T^dagger)` for a mixed input.
pub fn network_probabilities_mixed(rho: &DensityMatrix, cfg: &NetworkConfig) -> Result<[f64; DIM]> {
    if rho.dim() != DIM {
        return Err(Error::DimensionMismatch { expected: DIM, got: rho.dim() });
    }
    let sigma = path_density(rho.matrix(), cfg)?;
    Ok(port_probabilities(&sigma, &cfg.phases))
}

/// One tomographic setting: shutters, phases and the port read out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSetting {
    pub label: String,
    pub open: [bool; DIM],
    pub phases: [f64; 3],
    pub port: usize,
}

impl ProjectorSetting {
    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            phases: self.phases,
            open: self.open,
            ..base.clone()
        }
    }

    /// POVM element `T_k^dagger T_k` of this setting on a device model.
    pub fn effect(&self, model: &NetworkConfig) -> Result<DMatrix<Complex64>> {
        let t = self.apply(model).transfer_matrix()?;
        let row = t.row(self.port).into_owned();
        Ok(row.adjoint() * row)
    }
}

/// Port where paths `i` and `j` meet.
fn meeting_port(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 1) => 0,
        (2, 3) => 1,
        _ => 2,
    }
}

/// Phases giving relative phase `delta` between paths `i < j` at their port.
fn pair_phases(i: usize, j: usize, delta: f64) -> [f64; 3] {
    // port amplitude ~ a_i + e^{i delta} a_j up to a global factor
    match (i, j) {
        (0, 1) => [delta + PI, 0.0, 0.0],
        (2, 3) => [0.0, delta + PI, 0.0],
        (0, 2) | (1, 2) => [0.0, 0.0, delta],
        (0, 3) | (1, 3) => [0.0, 0.0, delta],
        _ => unreachable!("pairs are ordered"),
    }
}

/// The sixteen settings: populations then pairs at relative phase 0 and pi/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSet {
    pub settings: Vec<ProjectorSetting>,
}

impl ProjectorSet {
    pub fn standard() -> Self {
        let mut settings = Vec::with_capacity(16);
        for i in 0..DIM {
            let mut open = [false; DIM];
            open[i] = true;
            settings.push(ProjectorSetting {
                label: format!("pop({:+})", MODES[i]),
                open,
                phases: [0.0; 3],
                port: if i < 2 { 0 } else { 1 },
            });
        }
        for i in 0..DIM {
            for j in i + 1..DIM {
                for (tag, delta) in [(0, 0.0), (90, PI / 2.0)] {
                    let mut open = [false; DIM];
                    open[i] = true;
                    open[j] = true;
                    settings.push(ProjectorSetting {
                        label: format!("pair({:+},{:+})/phi={tag}", MODES[i], MODES[j]),
                        open,
                        phases: pair_phases(i, j, delta),
                        port: meeting_port(i, j),
                    });
                }
            }
        }
        Self { settings }
    }

    /// Rows `Tr(E_k G_m)` over the Hermitian basis `{I, g_1..g_15}`.
    pub fn measurement_matrix(&self, model: &NetworkConfig) -> Result<DMatrix<f64>> {
        let mut basis = vec![DMatrix::<Complex64>::identity(DIM, DIM)];
        basis.extend(gell_mann_basis(DIM));
        let mut a = DMatrix::zeros(self.settings.len(), basis.len());
        for (k, s) in self.settings.iter().enumerate() {
            let e = s.effect(model)?;
            for (m, g) in basis.iter().enumerate() {
                a[(k, m)] = (&e * g).trace().re;
            }
        }
        Ok(a)
    }

    /// Rank and 2-norm condition number of the measurement matrix.
    pub fn conditioning(&self, model: &NetworkConfig) -> Result<(usize, f64)> {
        let a = self.measurement_matrix(model)?;
        let sv = a.svd(false, false).singular_values;
        let max = sv.max();
        let tol = max * 1e-10;
        let rank = sv.iter().filter(|&&s| s > tol).count();
        let min = sv.min();
        Ok((rank, if min > tol { max / min } else { f64::INFINITY }))
    }
}

/// Clicks for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuditCount {
    pub configuration_id: String,
    pub port: usize,
    pub trials: u64,
    pub clicks: u64,
    pub seed: u64,
}

pub fn write_qudit_counts_csv<W: Write>(mut out: W, counts: &[QuditCount], comments: &[(&str, String)]) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "configuration_id,port,phase_bin_deg,trials,clicks,seed")?;
    for c in counts {
        writeln!(out, "{},{},,{},{},{}", c.configuration_id, c.port, c.trials, c.clicks, c.seed)?;
    }
    Ok(())
}

/// Simulates `trials` weak-pulse measurements per setting.
pub fn simulate_qudit_counts(
    rho: &DensityMatrix,
    set: &ProjectorSet,
    device: &NetworkConfig,
    det: &DetectionConfig,
    trials: u64,
    master_seed: u64,
) -> Result<Vec<QuditCount>> {
    det.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    set.settings
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let probs = network_probabilities_mixed(rho, &s.apply(device))?;
            let p = det.click_probability(probs[s.port].max(0.0)).clamp(0.0, 1.0);
            let seed = seed::derive_seed(master_seed, k as u64);
            let clicks = Binomial::new(trials, p)
                .map_err(|e| invalid("click probability", e.to_string()))?
                .sample(&mut seed::rng(seed));
            Ok(QuditCount {
                configuration_id: s.label.clone(),
                port: s.port,
                trials,
                clicks,
                seed,
            })
        })
        .collect()
}

/// Mean detected power per setting, inverting the click statistics.
pub fn counts_to_powers(counts: &[QuditCount], det: &DetectionConfig) -> Result<Vec<f64>> {
    let scale = det.mean_photons * det.detector_efficiency;
    if !(scale > 0.0) {
        return Err(invalid("detection", "mean photon number and efficiency must be positive"));
    }
    counts
        .iter()
        .map(|c| {
            if c.clicks >= c.trials {
                return Err(invalid(&c.configuration_id, "every trial clicked; detector saturated"));
            }
            let f = 1.0 - c.clicks as f64 / c.trials as f64;
            Ok((-(f / (1.0 - det.background)).ln()).max(0.0) / scale)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuditReconstruction {
    /// Least-squares estimate normalized to unit trace (may be unphysical).
    pub raw: DensityMatrix,
    /// Physical estimate; equal to `raw` when that is already physical.
    pub density: DensityMatrix,
    /// `|A x - b|` of the linear fit.
    pub residual: f64,
    pub condition_number: f64,
}

/// Least-squares inversion of per-setting powers.
pub fn reconstruct_qudit(powers: &[f64], set: &ProjectorSet, model: &NetworkConfig) -> Result<QuditReconstruction> {
    if powers.len() != set.settings.len() {
        return Err(Error::DimensionMismatch { expected: set.settings.len(), got: powers.len() });
    }
    let a = set.measurement_matrix(model)?;
    let (rank, cond) = set.conditioning(model)?;
    if rank < DIM * DIM {
        return Err(Error::RankDeficient { rank, required: DIM * DIM });
    }
    let b = DVector::from_column_slice(powers);
    let sol = crate::fit::linear_least_squares(&a, &b)?;
    let mut basis = vec![DMatrix::<Complex64>::identity(DIM, DIM)];
    basis.extend(gell_mann_basis(DIM));
    let mut m = DMatrix::<Complex64>::zeros(DIM, DIM);
    for (x, g) in sol.params.iter().zip(&basis) {
        m += g * Complex64::new(*x, 0.0);
    }
    let tr = m.trace().re;
    if !(tr > 0.0) {
        return Err(Error::InvalidDensity(format!("reconstructed trace {tr}")));
    }
    m /= Complex64::new(tr, 0.0);
    // remove rounding asymmetry before validation
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let raw = DensityMatrix::from_matrix(m)?;
    Ok(QuditReconstruction {
        density: raw.project_physical(),
        raw,
        residual: sol.cost.sqrt(),
        condition_number: cond,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtensionPreset {
    Current,
    #[serde(rename = "3BS")]
    ThreeBs,
    #[serde(rename = "OAM-sorter")]
    OamSorter,
}

impl ExtensionPreset {
    pub const ALL: [ExtensionPreset; 3] = [Self::Current, Self::ThreeBs, Self::OamSorter];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "current" => Ok(Self::Current),
            "3bs" => Ok(Self::ThreeBs),
            "oam-sorter" | "sorter" => Ok(Self::OamSorter),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

impl fmt::Display for ExtensionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Current => "Current",
            Self::ThreeBs => "3BS",
            Self::OamSorter => "OAM-sorter",
        })
    }
}

/// Expected dimension, loss and crosstalk of a device design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtensionBudget {
    pub preset: ExtensionPreset,
    pub dimension: u32,
    /// Fractional loss.
    pub loss: f64,
    /// Lower bound on crosstalk suppression (dB).
    pub crosstalk_suppression_db: f64,
}

pub fn extension_budget(preset: ExtensionPreset) -> ExtensionBudget {
    let (dimension, loss, crosstalk_suppression_db) = match preset {
        ExtensionPreset::Current => (2, 0.75, 27.0),
        ExtensionPreset::ThreeBs => (4, 0.88, 27.0),
        ExtensionPreset::OamSorter => (15, 0.40, 30.0),
    };
    ExtensionBudget {
        preset,
        dimension,
        loss,
        crosstalk_suppression_db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    // Builds the network by propagating each beam splitter by hand.
    fn oracle_ports(psi: &[Complex64; 4], cfg: &NetworkConfig) -> [f64; 4] {
        let s = cfg.input.amplitude();
        let mut a = [ZERO; 4];
        for i in 0..4 {
            if !cfg.open[i] {
                continue;
            }
            for j in 0..4 {
                let t = if i == j {
                    cfg.paths[i].efficiency.sqrt()
                } else {
                    (cfg.paths[i].efficiency * cfg.paths[i].leakage.get(&MODES[j]).copied().unwrap_or(0.0)).sqrt()
                };
                a[i] += psi[j] * s * t;
            }
        }
        let bs = |x: Complex64, y: Complex64, phi: f64| {
            let y = y * Complex64::from_polar(1.0, phi);
            ((x + y) * FRAC_1_SQRT_2, (x - y) * FRAC_1_SQRT_2)
        };
        let (u, p0) = bs(a[0], a[1], cfg.phases[0]);
        let (v, p1) = bs(a[2], a[3], cfg.phases[1]);
        let (p2, p3) = bs(u, v, cfg.phases[2]);
        [p0.norm_sqr(), p1.norm_sqr(), p2.norm_sqr(), p3.norm_sqr()]
    }

    #[test]
    fn example_state_matches_oracle() {
        let psi = QuditState::example();
        for cfg in [
            NetworkConfig { phases: [0.3, 1.2, 2.5], ..NetworkConfig::lossless() },
            NetworkConfig { phases: [0.0, PI / 2.0, PI], ..NetworkConfig::cascade(27.0) },
        ] {
            let p = network_probabilities(&psi, &cfg).unwrap();
            let o = oracle_ports(psi.amplitudes(), &cfg);
            for k in 0..4 {
                assert!((p[k] - o[k]).abs() < 1e-14, "port {k}: {} vs {}", p[k], o[k]);
            }
        }
    }

    #[test]
    fn single_path_is_phase_independent() {
        let psi = QuditState::basis(1).unwrap();
        let mut cfg = NetworkConfig::lossless();
        cfg.open = [false, false, true, false];
        let first = network_probabilities(&psi, &cfg).unwrap();
        assert_eq!(first, [0.0, 0.5, 0.25, 0.25]);
        for k in 0..20 {
            cfg.phases = [k as f64 * 0.3, k as f64 * 1.1, k as f64 * 0.7];
            assert_eq!(network_probabilities(&psi, &cfg).unwrap(), first);
        }
    }

    #[test]
    fn pair_reduces_to_qubit_fringe() {
        let psi = QuditState::normalized([ZERO, c(1.0, 0.0), c(1.0, 0.0), ZERO]).unwrap();
        let mut cfg = NetworkConfig::lossless();
        cfg.open = [false, true, true, false];
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..360 {
            cfg.phases[2] = (k as f64).to_radians();
            let p = network_probabilities(&psi, &cfg).unwrap()[2];
            lo = lo.min(p);
            hi = hi.max(p);
        }
        assert!(lo < 1e-12);
        assert!((hi - lo) / (hi + lo) > 1.0 - 1e-12);
    }

    #[test]
    fn all_blocked_is_an_error() {
        let mut cfg = NetworkConfig::lossless();
        cfg.open = [false; 4];
        assert!(matches!(network_probabilities(&QuditState::example(), &cfg), Err(Error::AllPathsBlocked)));
    }

    #[test]
    fn projector_set_is_complete() {
        let set = ProjectorSet::standard();
        assert_eq!(set.settings.len(), 16);
        for model in [NetworkConfig::lossless(), NetworkConfig::cascade(27.0).without_crosstalk()] {
            let (rank, cond) = set.conditioning(&model).unwrap();
            assert_eq!(rank, 16);
            assert!(cond.is_finite());
        }
    }

    #[test]
    fn rank_deficient_set_rejected() {
        let mut set = ProjectorSet::standard();
        set.settings.truncate(15);
        let powers = vec![0.1; 15];
        assert!(matches!(
            reconstruct_qudit(&powers, &set, &NetworkConfig::lossless()),
            Err(Error::RankDeficient { .. })
        ));
    }

    fn exact_powers(rho: &DensityMatrix, set: &ProjectorSet, dev: &NetworkConfig) -> Vec<f64> {
        set.settings
            .iter()
            .map(|s| network_probabilities_mixed(rho, &s.apply(dev)).unwrap()[s.port])
            .collect()
    }

    #[test]
    fn noiseless_inversion() {
        let set = ProjectorSet::standard();
        let model = NetworkConfig::cascade(27.0).without_crosstalk();
        let mut rng = seed::rng(17);
        for _ in 0..20 {
            let psi = QuditState::random(&mut rng);
            let rho = DensityMatrix::from_pure(psi.amplitudes()).unwrap();
            let r = reconstruct_qudit(&exact_powers(&rho, &set, &model), &set, &model).unwrap();
            assert!(r.residual < 1e-10);
            assert!(r.raw.frobenius_distance(&rho) < 1e-10);
            assert!(r.density.fidelity(&psi.to_vector()).unwrap() > 0.999);
        }
    }

    #[test]
    fn maximally_mixed_input() {
        let set = ProjectorSet::standard();
        let dev = NetworkConfig::cascade(27.0).without_crosstalk();
        let rho = DensityMatrix::maximally_mixed(4).unwrap();
        let det = DetectionConfig::ideal(1.0, 1);
        let counts = simulate_qudit_counts(&rho, &set, &dev, &det, 1_000_000, 3).unwrap();
        let r = reconstruct_qudit(&counts_to_powers(&counts, &det).unwrap(), &set, &dev).unwrap();
        assert!(r.raw.frobenius_distance(&rho) < 0.02, "{}", r.raw.frobenius_distance(&rho));
    }

    #[test]
    fn crosstalk_preset_reconstruction() {
        // crosstalk is part of the calibrated model; one detected photon per trial on average
        let set = ProjectorSet::standard();
        let device = NetworkConfig::cascade(27.0);
        let det = DetectionConfig::ideal(1.0, 1);
        let mut rng = seed::rng(99);
        let mut fs: Vec<f64> = (0..40)
            .map(|k| {
                let psi = QuditState::random(&mut rng);
                let rho = DensityMatrix::from_pure(psi.amplitudes()).unwrap();
                let counts = simulate_qudit_counts(&rho, &set, &device, &det, 100_000, k).unwrap();
                let r = reconstruct_qudit(&counts_to_powers(&counts, &det).unwrap(), &set, &device).unwrap();
                r.density.fidelity(&psi.to_vector()).unwrap()
            })
            .collect();
        fs.sort_by(f64::total_cmp);
        assert!(fs[20] >= 0.99, "median {}", fs[20]);
        assert!(fs[0] >= 0.95, "worst {}", fs[0]);
    }

    #[test]
    fn uncalibrated_crosstalk_bias_is_small() {
        let set = ProjectorSet::standard();
        let device = NetworkConfig::cascade(27.0);
        let model = device.without_crosstalk();
        let mut rng = seed::rng(5);
        for _ in 0..20 {
            let psi = QuditState::random(&mut rng);
            let rho = DensityMatrix::from_pure(psi.amplitudes()).unwrap();
            let r = reconstruct_qudit(&exact_powers(&rho, &set, &device), &set, &model).unwrap();
            assert!(r.density.fidelity(&psi.to_vector()).unwrap() > 0.98);
        }
    }

    #[test]
    fn mode_set_validator() {
        assert!(validate_mode_set(&MODES).is_ok());
        assert!(validate_mode_set(&[-1, 0, 1]).is_err());
        assert!(validate_mode_set(&[1, 1]).is_err());
        assert_eq!(crosstalk_suppression_db(1), 17.0);
        assert_eq!(crosstalk_suppression_db(2), 27.0);
    }

    #[test]
    fn table_rows() {
        let r = extension_budget(ExtensionPreset::Current);
        assert_eq!((r.dimension, r.loss, r.crosstalk_suppression_db), (2, 0.75, 27.0));
        let r = extension_budget(ExtensionPreset::ThreeBs);
        assert_eq!((r.dimension, r.loss, r.crosstalk_suppression_db), (4, 0.88, 27.0));
        let r = extension_budget(ExtensionPreset::parse("OAM-sorter").unwrap());
        assert_eq!((r.dimension, r.loss, r.crosstalk_suppression_db), (15, 0.40, 30.0));
        assert!(matches!(ExtensionPreset::parse("5BS"), Err(Error::UnknownPreset(_))));
        for p in ExtensionPreset::ALL {
            assert_eq!(ExtensionPreset::parse(&p.to_string()).unwrap(), p);
        }
    }

    proptest! {
        #[test]
        fn lossless_network_is_unitary(
            re in proptest::array::uniform4(-1.0f64..1.0),
            im in proptest::array::uniform4(-1.0f64..1.0),
            phases in proptest::array::uniform3(0.0..std::f64::consts::TAU),
        ) {
            prop_assume!(re.iter().chain(&im).map(|x| x * x).sum::<f64>() > 1e-3);
            let psi = QuditState::normalized([0, 1, 2, 3].map(|k| c(re[k], im[k]))).unwrap();
            let cfg = NetworkConfig { phases, ..NetworkConfig::lossless() };
            let total: f64 = network_probabilities(&psi, &cfg).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn single_open_path_projects(path in 0usize..4, s in any::<u64>(), phases in proptest::array::uniform3(0.0..6.3f64)) {
            let psi = QuditState::random(&mut seed::rng(s));
            let mut cfg = NetworkConfig::lossless();
            cfg.open = [false; 4];
            cfg.open[path] = true;
            let p0 = network_probabilities(&psi, &cfg).unwrap();
            cfg.phases = phases;
            let p1 = network_probabilities(&psi, &cfg).unwrap();
            prop_assert_eq!(p0, p1);
            let total: f64 = p1.iter().sum();
            prop_assert!((total - psi.amplitudes()[path].norm_sqr()).abs() < 1e-14);
        }
    }
}
