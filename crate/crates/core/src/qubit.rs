//! Qubit and qudit states: density matrices, Stokes vectors, fidelity and
//! the projection onto physical states.
//!
//! Basis conventions: `|0> = |l=+1> = |R>`, `|1> = |l=-1> = |L>`, and
//!
//! ```text
//! |H> = (|R> + |L>)/sqrt2     |V> = (|R> - |L>)/sqrt2
//! |D> = (|R> + i|L>)/sqrt2    |A> = (|R> - i|L>)/sqrt2
//! ```
//!
//! The density matrix is `rho = (1 + S1 sz + S2 sx + S3 sy)/2`, so a pure
//! state `a|0> + b|1>` has `S = (|a|^2 - |b|^2, 2 Re(a b*), -2 Im(a b*))`.
//! With these signs `|D>` sits at `S3 = +1` and `S3 = p_D - p_A`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-12;

/// Default tolerance on complementary-pair sums of measured probabilities.
pub const PAIR_SUM_TOLERANCE: f64 = 0.05;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Pure qubit `alpha|0> + beta|1>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PureQubit {
    alpha: Complex64,
    beta: Complex64,
}

impl PureQubit {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let n = alpha.norm_sqr() + beta.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self { alpha, beta })
    }

    /// Point on the Bloch sphere at polar angle `theta` from `|R>` and
    /// azimuth `phi`: `cos(theta/2)|R> + e^{i phi} sin(theta/2)|L>`.
    pub fn from_bloch_angles(theta: f64, phi: f64) -> Self {
        Self {
            alpha: Complex64::new((theta / 2.0).cos(), 0.0),
            beta: Complex64::from_polar((theta / 2.0).sin(), phi),
        }
    }

    /// `a|R> + b e^{i phi}|L>` with real `a, b`, normalized.
    pub fn equatorial(a: f64, b: f64, phi: f64) -> Result<Self> {
        let n = (a * a + b * b).sqrt();
        if n == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Self::new(Complex64::new(a / n, 0.0), Complex64::from_polar(b / n, phi))
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    pub fn to_vector(&self) -> Vec<Complex64> {
        vec![self.alpha, self.beta]
    }

    /// Relative phase arg(beta) - arg(alpha) in [0, 2pi).
    pub fn relative_phase(&self) -> f64 {
        (self.beta.arg() - self.alpha.arg()).rem_euclid(std::f64::consts::TAU)
    }
}

/// The six tomography states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NamedState {
    R,
    L,
    H,
    V,
    D,
    A,
}

impl NamedState {
    pub const ALL: [NamedState; 6] = [
        NamedState::R,
        NamedState::L,
        NamedState::H,
        NamedState::D,
        NamedState::V,
        NamedState::A,
    ];

    pub fn qubit(self) -> PureQubit {
        let s = FRAC_1_SQRT_2;
        let (alpha, beta) = match self {
            NamedState::R => (ONE, ZERO),
            NamedState::L => (ZERO, ONE),
            NamedState::H => (ONE * s, ONE * s),
            NamedState::V => (ONE * s, -ONE * s),
            NamedState::D => (ONE * s, I * s),
            NamedState::A => (ONE * s, -I * s),
        };
        PureQubit { alpha, beta }
    }

    /// The orthogonal partner within the same basis.
    pub fn orthogonal(self) -> Self {
        match self {
            NamedState::R => NamedState::L,
            NamedState::L => NamedState::R,
            NamedState::H => NamedState::V,
            NamedState::V => NamedState::H,
            NamedState::D => NamedState::A,
            NamedState::A => NamedState::D,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R" => Some(NamedState::R),
            "L" => Some(NamedState::L),
            "H" => Some(NamedState::H),
            "V" => Some(NamedState::V),
            "D" => Some(NamedState::D),
            "A" => Some(NamedState::A),
            _ => None,
        }
    }
}

impl fmt::Display for NamedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Stokes parameters `(S1, S2, S3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesVector {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub const fn new(s1: f64, s2: f64, s3: f64) -> Self {
        Self { s1, s2, s3 }
    }

    pub fn norm(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }
}

/// Probabilities measured in the three mutually unbiased bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisProbabilities {
    pub p_r: f64,
    pub p_l: f64,
    pub p_h: f64,
    pub p_v: f64,
    pub p_d: f64,
    pub p_a: f64,
}

impl BasisProbabilities {
    /// Exact probabilities for a density matrix (dimension 2).
    pub fn of(rho: &DensityMatrix) -> Result<Self> {
        // clamp rounding such as 1 + 2e-16 for pure states
        let p = |s: NamedState| rho.fidelity(&s.qubit().to_vector()).map(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            p_r: p(NamedState::R)?,
            p_l: p(NamedState::L)?,
            p_h: p(NamedState::H)?,
            p_v: p(NamedState::V)?,
            p_d: p(NamedState::D)?,
            p_a: p(NamedState::A)?,
        })
    }

    pub fn get(&self, s: NamedState) -> f64 {
        match s {
            NamedState::R => self.p_r,
            NamedState::L => self.p_l,
            NamedState::H => self.p_h,
            NamedState::V => self.p_v,
            NamedState::D => self.p_d,
            NamedState::A => self.p_a,
        }
    }
}

/// `S1 = p_R - p_L`, `S2 = p_H - p_V`, `S3 = p_D - p_A`.
///
/// Each complementary pair must sum to one within `tolerance`.
pub fn stokes_from_probabilities(p: &BasisProbabilities, tolerance: f64) -> Result<StokesVector> {
    let all = [p.p_r, p.p_l, p.p_h, p.p_v, p.p_d, p.p_a];
    if let Some(&bad) = all.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::ProbabilityRange(bad));
    }
    for (name, a, b) in [
        ("R/L", p.p_r, p.p_l),
        ("H/V", p.p_h, p.p_v),
        ("D/A", p.p_d, p.p_a),
    ] {
        if (a + b - 1.0).abs() > tolerance {
            return Err(Error::PairSum {
                name,
                sum: a + b,
                tolerance,
            });
        }
    }
    Ok(StokesVector::new(p.p_r - p.p_l, p.p_h - p.p_v, p.p_d - p.p_a))
}

pub fn pure_to_stokes(q: &PureQubit) -> Result<StokesVector> {
    let n = q.alpha.norm_sqr() + q.beta.norm_sqr();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(n));
    }
    let c = q.alpha * q.beta.conj();
    Ok(StokesVector::new(
        q.alpha.norm_sqr() - q.beta.norm_sqr(),
        2.0 * c.re,
        -2.0 * c.im,
    ))
}

/// Generalized Gell-Mann basis for dimension `d`: diagonal generators
/// first, then symmetric and antisymmetric off-diagonal pairs `(j < k)`.
/// For `d = 2` the order is `(sz, sx, sy)`, matching the Stokes labels.
/// Each generator `g` satisfies `Tr(g g') = 2 delta`.
pub fn gell_mann_basis(d: usize) -> Vec<DMatrix<Complex64>> {
    let mut basis = Vec::with_capacity(d * d - 1);
    for l in 1..d {
        let scale = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..l {
            m[(j, j)] = ONE * scale;
        }
        m[(l, l)] = ONE * (-(l as f64) * scale);
        basis.push(m);
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = DMatrix::zeros(d, d);
            m[(j, k)] = ONE;
            m[(k, j)] = ONE;
            basis.push(m);
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = DMatrix::zeros(d, d);
            m[(j, k)] = -I;
            m[(k, j)] = I;
            basis.push(m);
        }
    }
    basis
}

/// Hermitian, unit-trace density operator of dimension 2 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<Complex64>,
    physicalized: bool,
}

impl DensityMatrix {
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        let d = matrix.nrows();
        if matrix.ncols() != d {
            return Err(Error::InvalidDensity(format!(
                "{}x{} is not square",
                d,
                matrix.ncols()
            )));
        }
        if d != 2 && d != 4 {
            return Err(Error::InvalidDensity(format!("unsupported dimension {d}")));
        }
        for i in 0..d {
            for j in 0..d {
                if (matrix[(i, j)] - matrix[(j, i)].conj()).norm() > HERMITIAN_TOL {
                    return Err(Error::InvalidDensity(format!(
                        "not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        Ok(Self {
            matrix,
            physicalized: false,
        })
    }

    /// Row-major real and imaginary parts.
    pub fn from_parts(dim: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != dim * dim || im.len() != dim * dim {
            return Err(Error::InvalidDensity(format!(
                "expected {} entries, got {} and {}",
                dim * dim,
                re.len(),
                im.len()
            )));
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| {
            Complex64::new(re[i * dim + j], im[i * dim + j])
        });
        Self::from_matrix(m)
    }

    /// `rho = (1 + S1 sz + S2 sx + S3 sy)/2`.
    pub fn from_stokes(s: &StokesVector) -> Self {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new((1.0 + s.s1) / 2.0, 0.0),
                Complex64::new(s.s2 / 2.0, -s.s3 / 2.0),
                Complex64::new(s.s2 / 2.0, s.s3 / 2.0),
                Complex64::new((1.0 - s.s1) / 2.0, 0.0),
            ],
        );
        Self {
            matrix: m,
            physicalized: false,
        }
    }

    /// `rho = 1/d + (1/2) sum_k b_k g_k` over [`gell_mann_basis`].
    pub fn from_bloch(d: usize, bloch: &[f64]) -> Result<Self> {
        if bloch.len() != d * d - 1 {
            return Err(Error::DimensionMismatch {
                expected: d * d - 1,
                got: bloch.len(),
            });
        }
        let mut m = DMatrix::<Complex64>::identity(d, d) * ONE.unscale(d as f64);
        for (b, g) in bloch.iter().zip(gell_mann_basis(d)) {
            m += g * Complex64::new(b / 2.0, 0.0);
        }
        Self::from_matrix(hermitize(m))
    }

    /// `|psi><psi|` for a normalized vector.
    pub fn from_pure(psi: &[Complex64]) -> Result<Self> {
        let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        let d = psi.len();
        let m = DMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
        Self::from_matrix(m)
    }

    pub fn maximally_mixed(d: usize) -> Result<Self> {
        Self::from_matrix(DMatrix::identity(d, d) * ONE.unscale(d as f64))
    }

    /// Convex mixture `w * a + (1 - w) * b`.
    pub fn mix(a: &Self, b: &Self, w: f64) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        let m = &a.matrix * Complex64::new(w, 0.0) + &b.matrix * Complex64::new(1.0 - w, 0.0);
        Self::from_matrix(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)]
    }

    /// Whether [`project_physical`](Self::project_physical) produced this matrix.
    pub fn physicalized(&self) -> bool {
        self.physicalized
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Stokes vector `S_i = Tr(rho sigma_i)`; qubits only.
    pub fn stokes(&self) -> Result<StokesVector> {
        if self.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.dim(),
            });
        }
        let b = self.bloch_vector();
        Ok(StokesVector::new(b[0], b[1], b[2]))
    }

    /// Generalized Bloch vector `b_k = Tr(rho g_k)`, length `d^2 - 1`.
    pub fn bloch_vector(&self) -> Vec<f64> {
        gell_mann_basis(self.dim())
            .iter()
            .map(|g| (&self.matrix * g).trace().re)
            .collect()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.matrix.clone().symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_unstable_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.eigenvalues()[0] >= -tol
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// `<psi|rho|psi>` for a normalized target vector.
    pub fn fidelity(&self, target: &[Complex64]) -> Result<f64> {
        if target.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: target.len(),
            });
        }
        let n: f64 = target.iter().map(|c| c.norm_sqr()).sum();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n));
        }
        let d = self.dim();
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += target[i].conj() * self.matrix[(i, j)] * target[j];
            }
        }
        Ok(acc.re)
    }

    /// Frobenius distance to another matrix of the same dimension.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }

    /// Nearest unit-trace positive semidefinite matrix in Frobenius norm.
    ///
    /// Eigenvalues are projected onto the probability simplex while the
    /// eigenvectors are kept. Matrices that are already positive
    /// semidefinite come back unchanged, so the operation is idempotent.
    pub fn project_physical(&self) -> Self {
        let eig = self.matrix.clone().symmetric_eigen();
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min >= -HERMITIAN_TOL {
            return Self {
                matrix: self.matrix.clone(),
                physicalized: true,
            };
        }
        let projected = project_to_simplex(&values);
        let d = self.dim();
        let v = &eig.eigenvectors;
        let mut m = DMatrix::<Complex64>::zeros(d, d);
        for (k, &lam) in projected.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            let col = v.column(k);
            m += (col * col.adjoint()) * Complex64::new(lam, 0.0);
        }
        Self {
            matrix: hermitize(m),
            physicalized: true,
        }
    }

    pub fn to_json(&self) -> DensityJson {
        let d = self.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                re.push(self.matrix[(i, j)].re);
                im.push(self.matrix[(i, j)].im);
            }
        }
        DensityJson {
            dim: d,
            re,
            im,
            physicalized: self.physicalized,
            stokes: self.bloch_vector(),
        }
    }

    pub fn from_json(j: &DensityJson) -> Result<Self> {
        let mut rho = Self::from_parts(j.dim, &j.re, &j.im)?;
        rho.physicalized = j.physicalized;
        Ok(rho)
    }
}

/// JSON form of a density matrix. `stokes` holds the generalized Bloch
/// vector (the three Stokes parameters for a qubit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub physicalized: bool,
    pub stokes: Vec<f64>,
}

fn hermitize(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
    let adj = m.adjoint();
    (m + adj) * Complex64::new(0.5, 0.0)
}

/// Euclidean projection of `v` onto `{x >= 0, sum x = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}
