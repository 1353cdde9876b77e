//! Laguerre-Gaussian and Hermite-Gaussian transverse fields.
//!
//! Fields are sampled at cell midpoints of a uniform N x N grid, so the
//! discrete inner product `sum(conj(f) * g) * pitch^2` is the midpoint-rule
//! quadrature of the continuous overlap integral.
//!
//! The Laguerre polynomial argument is `2 r^2 / w(z)^2`. Writing it as
//! `2 r^2 / w(z)` is dimensionally inconsistent; the squared width is the
//! form that keeps LG modes orthonormal. Only `p > 0` modes are affected.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Bitmap, BitDepth};

/// Minimum fraction of mode energy a grid must capture.
pub const ENERGY_CAPTURE: f64 = 0.9999;

/// Azimuthal (`l`) and radial (`p`) indices of an LG mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub l: i32,
    pub p: u32,
}

impl ModeIndex {
    pub const fn new(l: i32, p: u32) -> Self {
        Self { l, p }
    }

    /// Mode order `|l| + 2p`.
    pub fn order(&self) -> u32 {
        self.l.unsigned_abs() + 2 * self.p
    }
}

/// Gaussian beam parameters at an axial position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    /// Waist radius (m).
    pub w0: f64,
    /// Wavelength (m).
    pub wavelength: f64,
    /// Axial position relative to the waist (m).
    pub z: f64,
}

impl BeamGeometry {
    pub fn new(w0: f64, wavelength: f64, z: f64) -> Result<Self> {
        let g = Self { w0, wavelength, z };
        g.validate()?;
        Ok(g)
    }

    /// Waist-plane geometry.
    pub fn at_waist(w0: f64, wavelength: f64) -> Result<Self> {
        Self::new(w0, wavelength, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::InvalidGeometry(format!("w0 = {}", self.w0)));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "wavelength = {}",
                self.wavelength
            )));
        }
        if !self.z.is_finite() {
            return Err(Error::InvalidGeometry(format!("z = {}", self.z)));
        }
        Ok(())
    }

    pub fn rayleigh_length(&self) -> f64 {
        PI * self.w0 * self.w0 / self.wavelength
    }

    /// Beam radius w(z).
    pub fn width(&self) -> f64 {
        let zr = self.rayleigh_length();
        self.w0 * (1.0 + (self.z / zr).powi(2)).sqrt()
    }

    /// Inverse radius of curvature 1/R(z); zero at the waist.
    pub fn inverse_curvature(&self) -> f64 {
        let zr = self.rayleigh_length();
        self.z / (self.z * self.z + zr * zr)
    }

    /// Radius of curvature R(z); infinite at the waist.
    pub fn curvature_radius(&self) -> f64 {
        1.0 / self.inverse_curvature()
    }

    /// Gouy phase arctan(z / z_R).
    pub fn gouy_phase(&self) -> f64 {
        (self.z / self.rayleigh_length()).atan()
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.wavelength
    }

    /// Copy at a different axial position.
    pub fn at(&self, z: f64) -> Self {
        Self { z, ..*self }
    }
}

/// Layout of a square sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Samples per side.
    pub n: usize,
    /// Half the physical side length (m).
    pub half_width: f64,
    /// Physical coordinate of the grid center (m).
    pub center: (f64, f64),
}

impl GridSpec {
    pub const REFERENCE_N: usize = 256;
    pub const REFERENCE_HALF_WIDTHS: f64 = 4.0;

    pub fn new(n: usize, half_width: f64) -> Self {
        Self {
            n,
            half_width,
            center: (0.0, 0.0),
        }
    }

    /// 256 x 256 samples over +/- 4 w(z).
    pub fn reference(geom: &BeamGeometry) -> Self {
        Self::new(
            Self::REFERENCE_N,
            Self::REFERENCE_HALF_WIDTHS * geom.width(),
        )
    }

    pub fn pitch(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Midpoint coordinate of sample index `i` along one axis.
    pub fn coordinate(&self, i: usize, axis_center: f64) -> f64 {
        axis_center - self.half_width + (i as f64 + 0.5) * self.pitch()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::GridMismatch(format!("n = {} (need >= 2)", self.n)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::GridMismatch(format!(
                "half width = {}",
                self.half_width
            )));
        }
        Ok(())
    }
}

/// Generalized Laguerre polynomial `L_n^alpha(x)` by the three-term recurrence.
pub fn laguerre(n: u32, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Normalization constant K_lp = sqrt(2/pi * p! / (|l| + p)!).
pub fn normalization_constant(mode: ModeIndex) -> f64 {
    let al = mode.l.unsigned_abs();
    (2.0 / PI * factorial(mode.p) / factorial(al + mode.p)).sqrt()
}

/// Unit-power LG amplitude at transverse point (x, y) relative to the beam axis.
pub fn lg_amplitude(mode: ModeIndex, geom: &BeamGeometry, x: f64, y: f64) -> Complex64 {
    let w = geom.width();
    let r2 = x * x + y * y;
    let al = mode.l.unsigned_abs();
    let rho2 = 2.0 * r2 / (w * w);
    let radial = normalization_constant(mode) / w
        * rho2.powf(al as f64 / 2.0)
        * (-r2 / (w * w)).exp()
        * laguerre(mode.p, al as f64, rho2);
    let theta = y.atan2(x);
    let phase = mode.l as f64 * theta - geom.wavenumber() * r2 * geom.inverse_curvature() / 2.0
        + (2 * mode.p + al + 1) as f64 * geom.gouy_phase();
    Complex64::from_polar(radial, phase)
}

/// Fraction of an LG mode's power inside radius `radius`.
///
/// Integrates the radial density in `u = 2 r^2 / w^2` with Simpson's rule.
pub fn energy_within(mode: ModeIndex, geom: &BeamGeometry, radius: f64) -> f64 {
    let w = geom.width();
    let upper = 2.0 * radius * radius / (w * w);
    let al = mode.l.unsigned_abs();
    let scale = factorial(mode.p) / factorial(al + mode.p);
    let density = |u: f64| {
        let lag = laguerre(mode.p, al as f64, u);
        scale * u.powi(al as i32) * (-u).exp() * lag * lag
    };
    let steps = 4000;
    let h = upper / steps as f64;
    let mut acc = density(0.0) + density(upper);
    for i in 1..steps {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * density(i as f64 * h);
    }
    (acc * h / 3.0).min(1.0)
}

/// Sampled complex field on a square grid, stored row-major (row = y index).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    n: usize,
    pitch: f64,
    center: (f64, f64),
    samples: Vec<Complex64>,
}

impl ComplexField {
    pub fn from_samples(
        n: usize,
        pitch: f64,
        center: (f64, f64),
        samples: Vec<Complex64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::GridMismatch(format!("n = {n} (need >= 2)")));
        }
        if !(pitch > 0.0) {
            return Err(Error::GridMismatch(format!("pitch = {pitch}")));
        }
        if samples.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "{} samples for a {n}x{n} grid",
                samples.len()
            )));
        }
        Ok(Self {
            n,
            pitch,
            center,
            samples,
        })
    }

    /// Samples `f(x, y)` at the cell midpoints of `grid`.
    pub fn sample<F>(grid: &GridSpec, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Complex64,
    {
        grid.validate()?;
        let n = grid.n;
        let mut samples = Vec::with_capacity(n * n);
        for iy in 0..n {
            let y = grid.coordinate(iy, grid.center.1);
            for ix in 0..n {
                let x = grid.coordinate(ix, grid.center.0);
                samples.push(f(x, y));
            }
        }
        Self::from_samples(n, grid.pitch(), grid.center, samples)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn get(&self, ix: usize, iy: usize) -> Complex64 {
        self.samples[iy * self.n + ix]
    }

    /// Physical (x, y) of sample (ix, iy).
    pub fn position(&self, ix: usize, iy: usize) -> (f64, f64) {
        let half = self.pitch * self.n as f64 / 2.0;
        (
            self.center.0 - half + (ix as f64 + 0.5) * self.pitch,
            self.center.1 - half + (iy as f64 + 0.5) * self.pitch,
        )
    }

    /// Squared L2 norm under midpoint quadrature.
    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.n == other.n && self.pitch == other.pitch && self.center == other.center
    }

    /// Inner product `<self|other>`: sum of conj(self) * other * pitch^2.
    pub fn overlap(&self, other: &Self) -> Result<Complex64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch(format!(
                "(n={}, pitch={}, center={:?}) vs (n={}, pitch={}, center={:?})",
                self.n, self.pitch, self.center, other.n, other.pitch, other.center
            )));
        }
        let sum: Complex64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(sum * self.pitch * self.pitch)
    }

    /// Copy rescaled to unit norm. A zero field is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|c| *c /= norm);
        out
    }

    /// Binary raster: `u64 n`, `f64 pitch`, `f64 cx`, `f64 cy`, then
    /// interleaved `re, im` pairs, all little-endian, row-major.
    pub fn write_raster<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.n as u64).to_le_bytes())?;
        out.write_all(&self.pitch.to_le_bytes())?;
        out.write_all(&self.center.0.to_le_bytes())?;
        out.write_all(&self.center.1.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * 16);
        for c in &self.samples {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raster<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input
                .read_exact(&mut word)
                .map_err(|e| Error::Raster(format!("truncated header: {e}")))?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut input)?) as usize;
        let pitch = f64::from_le_bytes(next(&mut input)?);
        let cx = f64::from_le_bytes(next(&mut input)?);
        let cy = f64::from_le_bytes(next(&mut input)?);
        if !(2..=1 << 16).contains(&n) {
            return Err(Error::Raster(format!("implausible grid size {n}")));
        }
        let mut payload = vec![0u8; n * n * 16];
        input
            .read_exact(&mut payload)
            .map_err(|e| Error::Raster(format!("truncated payload: {e}")))?;
        let samples = payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Self::from_samples(n, pitch, (cx, cy), samples)
    }

    /// Intensity scaled to the peak as an 8-bit bitmap, +y at the top.
    pub fn intensity_bitmap(&self) -> Bitmap {
        let intensity = self.intensity();
        let peak = intensity.iter().cloned().fold(0.0, f64::max);
        let n = self.n;
        let mut pixels = vec![0u16; n * n];
        for iy in 0..n {
            let row = n - 1 - iy;
            for ix in 0..n {
                let v = if peak > 0.0 {
                    intensity[iy * n + ix] / peak
                } else {
                    0.0
                };
                pixels[row * n + ix] = (v * 255.0).round() as u16;
            }
        }
        Bitmap::new(n, n, BitDepth::Eight, pixels).expect("dimensions match")
    }
}

/// Sampled, unit-power LG field.
pub fn lg_field(mode: ModeIndex, geom: &BeamGeometry, grid: &GridSpec) -> Result<ComplexField> {
    geom.validate()?;
    let captured = energy_within(mode, geom, grid.half_width);
    if captured < ENERGY_CAPTURE {
        return Err(Error::GridTooSmall {
            captured,
            required: ENERGY_CAPTURE,
        });
    }
    let (cx, cy) = grid.center;
    ComplexField::sample(grid, |x, y| lg_amplitude(mode, geom, x - cx, y - cy))
}

/// Superposition `a |l=+1> + b e^{i phi} |l=-1>` of p = 0 modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquatorialSuperposition {
    relative_phase: f64,
    a: f64,
    b: f64,
}

impl EquatorialSuperposition {
    pub fn new(relative_phase: f64, a: f64, b: f64) -> Result<Self> {
        let norm = a * a + b * b;
        if a < 0.0 || b < 0.0 || (norm - 1.0).abs() > 1e-12 || !relative_phase.is_finite() {
            return Err(Error::InvalidSuperposition(norm));
        }
        Ok(Self {
            relative_phase: relative_phase.rem_euclid(TAU),
            a,
            b,
        })
    }

    /// Equal-weight (a = b) state: a rotated TEM01 pattern.
    pub fn equal_weight(relative_phase: f64) -> Self {
        Self::new(relative_phase, 0.5f64.sqrt(), 0.5f64.sqrt()).expect("valid by construction")
    }

    pub fn relative_phase(&self) -> f64 {
        self.relative_phase
    }

    pub fn amplitudes(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Point amplitude (unnormalized only through grid truncation).
    pub fn amplitude(&self, geom: &BeamGeometry, x: f64, y: f64) -> Complex64 {
        let plus = lg_amplitude(ModeIndex::new(1, 0), geom, x, y);
        let minus = lg_amplitude(ModeIndex::new(-1, 0), geom, x, y);
        plus * self.a + minus * Complex64::from_polar(self.b, self.relative_phase)
    }
}

/// Sampled superposition, renormalized on the grid.
pub fn hg_superposition(
    sup: &EquatorialSuperposition,
    geom: &BeamGeometry,
    grid: &GridSpec,
) -> Result<ComplexField> {
    let plus = lg_field(ModeIndex::new(1, 0), geom, grid)?;
    let minus = lg_field(ModeIndex::new(-1, 0), geom, grid)?;
    let coeff = Complex64::from_polar(sup.b, sup.relative_phase);
    let samples = plus
        .samples
        .iter()
        .zip(&minus.samples)
        .map(|(p, m)| p * sup.a + m * coeff)
        .collect();
    Ok(ComplexField::from_samples(plus.n, plus.pitch, plus.center, samples)?.normalized())
}

/// Orientation of the nodal line of an equal-weight superposition with
/// relative phase `phi`, measured from the horizontal, in [0, pi).
pub fn dark_axis_angle(phi: f64) -> f64 {
    let a = ((phi - PI) / 2.0).rem_euclid(PI);
    // rem_euclid can round up to exactly pi
    if a >= PI {
        0.0
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> BeamGeometry {
        BeamGeometry::at_waist(1e-3, 795e-9).unwrap()
    }

    #[test]
    fn laguerre_matches_closed_forms() {
        for &x in &[0.0, 0.3, 1.7, 5.0] {
            for &a in &[0.0, 1.0, 3.0] {
                assert!((laguerre(1, a, x) - (1.0 + a - x)).abs() < 1e-12);
                let l2 = ((x - a - 2.0).powi(2) - (a + 2.0)) / 2.0;
                assert!((laguerre(2, a, x) - l2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vortex_has_central_null() {
        let g = geom();
        assert_eq!(lg_amplitude(ModeIndex::new(1, 0), &g, 0.0, 0.0).norm(), 0.0);
        assert_eq!(lg_amplitude(ModeIndex::new(-2, 1), &g, 0.0, 0.0).norm(), 0.0);
    }

    #[test]
    fn fundamental_gaussian_peaks_at_center_with_unit_norm() {
        let g = geom();
        let grid = GridSpec::reference(&g);
        let f = lg_field(ModeIndex::new(0, 0), &g, &grid).unwrap();
        assert!((f.norm_sqr() - 1.0).abs() < 1e-6);
        let intensity = f.intensity();
        let (imax, _) = intensity
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let (ix, iy) = (imax % grid.n, imax / grid.n);
        // even grid: the four central samples share the peak
        assert!((ix as i64 - 128).abs() <= 1 && (iy as i64 - 128).abs() <= 1);
        let peak = lg_amplitude(ModeIndex::new(0, 0), &g, 0.0, 0.0).norm_sqr();
        assert!((peak - 2.0 / (PI * 1e-6)).abs() / peak < 1e-12);
    }

    #[test]
    fn l2_p1_has_zero_ring_and_refinement_agrees() {
        let g = geom();
        let mode = ModeIndex::new(2, 1);
        // L_1^2(u) = 3 - u vanishes at 2 r^2 / w^2 = 3
        let r0 = g.w0 * 1.5f64.sqrt();
        for k in 0..8 {
            let t = k as f64 * PI / 4.0;
            let v = lg_amplitude(mode, &g, r0 * t.cos(), r0 * t.sin()).norm_sqr();
            assert!(v < 1e-20 * lg_amplitude(mode, &g, g.w0, 0.0).norm_sqr().max(1.0));
        }
        let coarse = GridSpec::reference(&g);
        let fine = GridSpec::new(4 * coarse.n, coarse.half_width);
        let nc = lg_field(mode, &g, &coarse).unwrap().norm_sqr();
        let nf = lg_field(mode, &g, &fine).unwrap().norm_sqr();
        assert!((nc - nf).abs() < 1e-6, "{nc} vs {nf}");
        assert!((nc - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_too_small_rejected() {
        let g = geom();
        let grid = GridSpec::new(64, 1.5 * g.w0);
        assert!(matches!(
            lg_field(ModeIndex::new(3, 1), &g, &grid),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(BeamGeometry::new(-1.0, 1e-6, 0.0).is_err());
        assert!(BeamGeometry::new(1e-3, 0.0, 0.0).is_err());
    }

    #[test]
    fn overlaps_of_basic_modes() {
        let g = geom();
        let grid = GridSpec::reference(&g);
        let p1 = lg_field(ModeIndex::new(1, 0), &g, &grid).unwrap();
        let m1 = lg_field(ModeIndex::new(-1, 0), &g, &grid).unwrap();
        let p2 = lg_field(ModeIndex::new(2, 0), &g, &grid).unwrap();
        assert!((p1.overlap(&p1).unwrap() - 1.0).norm() < 1e-6);
        assert!(p1.overlap(&m1).unwrap().norm() < 1e-8);
        assert!(p1.overlap(&p2).unwrap().norm() < 1e-8);
    }

    #[test]
    fn overlap_rejects_grid_mismatch() {
        let g = geom();
        let a = lg_field(ModeIndex::new(1, 0), &g, &GridSpec::reference(&g)).unwrap();
        let b = lg_field(ModeIndex::new(1, 0), &g, &GridSpec::new(128, 4.0 * g.w0)).unwrap();
        assert!(matches!(a.overlap(&b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn superposition_cases() {
        let g = geom();
        let grid = GridSpec::new(128, 4.0 * g.w0);
        let only_plus = EquatorialSuperposition::new(0.3, 1.0, 0.0).unwrap();
        let f = hg_superposition(&only_plus, &g, &grid).unwrap();
        let lg = lg_field(ModeIndex::new(1, 0), &g, &grid).unwrap();
        for (a, b) in f.samples().iter().zip(lg.samples()) {
            assert!((a - b).norm() < 1e-9);
        }

        // phi = pi: mode V, dark line along the horizontal
        let v = EquatorialSuperposition::equal_weight(PI);
        assert_eq!(dark_axis_angle(v.relative_phase()), 0.0);
        for k in 1..20 {
            let x = (k as f64 - 10.0) * 0.2 * g.w0;
            assert!(v.amplitude(&g, x, 0.0).norm() < 1e-9);
        }
        // phi = 0: mode H, dark line along the vertical
        let h = EquatorialSuperposition::equal_weight(0.0);
        assert!((dark_axis_angle(0.0) - PI / 2.0).abs() < 1e-15);
        assert!(h.amplitude(&g, 0.0, 0.7 * g.w0).norm() < 1e-9);
        assert!(h.amplitude(&g, 0.7 * g.w0, 0.0).norm() > 1.0);

        assert!(EquatorialSuperposition::new(0.0, 0.8, 0.8).is_err());
        assert!(EquatorialSuperposition::new(0.0, -0.6, 0.8).is_err());
    }

    #[test]
    fn dark_axis_examples() {
        assert_eq!(dark_axis_angle(PI), 0.0);
        assert!((dark_axis_angle(0.0) - PI / 2.0).abs() < 1e-15);
        assert!((dark_axis_angle(1.5 * PI) - PI / 4.0).abs() < 1e-15);
        assert!((dark_axis_angle(PI + TAU) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn raster_round_trip() {
        let g = geom();
        let f = lg_field(ModeIndex::new(-1, 1), &g, &GridSpec::new(16, 5.0 * g.w0)).unwrap();
        let mut buf = Vec::new();
        f.write_raster(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 16 * 16 * 16);
        assert_eq!(&buf[..8], &16u64.to_le_bytes());
        let back = ComplexField::read_raster(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert!(ComplexField::read_raster(&buf[..100]).is_err());
    }
}
