//! Camera frames of the phase-reference beam and the dark-axis routine.
//!
//! The reference beam leaves the interferometer as `LG+1 + e^{i phi} LG-1`,
//! a two-lobe pattern whose nodal line sits at `alpha_d = (phi - pi)/2`
//! (mod pi) from the image x-axis. [`extract_phase`] finds that line by
//! angular binning and returns `phi = 2 alpha_d + pi`.
//!
//! Pixel coordinates: column `c`, row `r` (row 0 at the top). Angles are
//! measured counter-clockwise from +x with `x = c - cx`, `y = cy - r`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions, Residuals};
use crate::image::{median3x3, percentile, BitDepth, Bitmap};
use crate::Complex64;

pub const DEFAULT_BINS: usize = 120;
pub const MIN_FRAME_SIDE: usize = 64;
/// Radius of interest in units of the fitted ring width.
pub const ROI_WIDTHS: f64 = 2.0;

/// A camera frame with optional synthesis ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFrame {
    pub bitmap: Bitmap,
    /// Exposure in expected photo-electrons at the brightest pixel; zero if unknown.
    pub exposure: f64,
    /// Reference-beam phase used to render the frame.
    pub phi_true: Option<f64>,
}

impl PhaseFrame {
    pub fn new(bitmap: Bitmap) -> Result<Self> {
        if bitmap.width() < MIN_FRAME_SIDE || bitmap.height() < MIN_FRAME_SIDE {
            return Err(Error::Image(format!(
                "frame {}x{} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
                bitmap.width(),
                bitmap.height()
            )));
        }
        Ok(Self {
            bitmap,
            exposure: 0.0,
            phi_true: None,
        })
    }

    pub fn intensity(&self) -> Intensity {
        Intensity {
            width: self.bitmap.width(),
            height: self.bitmap.height(),
            values: self.bitmap.to_f64(),
        }
    }
}

/// Floating-point image, row-major with row 0 on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Intensity {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Intensity {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    /// Bilinear sample at fractional pixel position; zero outside.
    pub fn sample(&self, col: f64, row: f64) -> f64 {
        let c0 = col.floor();
        let r0 = row.floor();
        let (fc, fr) = (col - c0, row - r0);
        let mut acc = 0.0;
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
                let c = c0 + dc;
                let r = r0 + dr;
                if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
                    acc += wc * wr * self.get(c as usize, r as usize);
                }
            }
        }
        acc
    }

    /// Rotates counter-clockwise by `angle` about pixel position `center`.
    pub fn rotate_about(&self, center: (f64, f64), angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let mut values = vec![0.0; self.values.len()];
        for row in 0..self.height {
            for col in 0..self.width {
                let x = col as f64 - center.0;
                let y = center.1 - row as f64;
                // inverse rotation finds the source point
                let xs = c * x + s * y;
                let ys = -s * x + c * y;
                values[row * self.width + col] = self.sample(center.0 + xs, center.1 - ys);
            }
        }
        Self { values, ..self.clone() }
    }
}

/// Rotates a bitmap by 90 degrees counter-clockwise.
pub fn rotate90(bitmap: &Bitmap) -> Bitmap {
    let (w, h) = (bitmap.width(), bitmap.height());
    let mut px = vec![0u16; w * h];
    for r in 0..h {
        for c in 0..w {
            // new image is h wide, w tall
            let (nc, nr) = (r, w - 1 - c);
            px[nr * h + nc] = bitmap.get(c, r);
        }
    }
    Bitmap::new(h, w, bitmap.depth(), px).expect("same pixel count")
}

/// Ring fit rotated along with [`rotate90`] for an image of width `width`.
pub fn rotate90_ring(ring: &RingFit, width: usize) -> RingFit {
    RingFit {
        center: (ring.center.1, (width - 1) as f64 - ring.center.0),
        initial_center: (ring.initial_center.1, (width - 1) as f64 - ring.initial_center.0),
        ..*ring
    }
}

/// Where and how large the beam appears on the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
    /// Beam axis in pixel coordinates (column, row).
    pub center: (f64, f64),
    /// Gaussian waist in pixels.
    pub waist_px: f64,
    /// Sub-samples per pixel side.
    pub supersample: usize,
    pub depth: BitDepth,
    /// Gray level of the ideal pattern's peak, as a fraction of full scale.
    pub peak_level: f64,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self {
            width: 330,
            height: 330,
            center: (164.5, 164.5),
            waist_px: 55.0,
            supersample: 2,
            depth: BitDepth::Eight,
            peak_level: 0.9,
        }
    }
}

impl FrameGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_FRAME_SIDE || self.height < MIN_FRAME_SIDE {
            return Err(invalid("geometry", format!("{}x{} below minimum", self.width, self.height)));
        }
        if !(self.waist_px > 0.0) || self.supersample == 0 || !(self.peak_level > 0.0 && self.peak_level <= 1.0) {
            return Err(invalid("geometry", "waist, supersample and peak level must be positive"));
        }
        let r = ROI_WIDTHS * self.waist_px;
        let (cx, cy) = self.center;
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > (self.width - 1) as f64 || cy + r > (self.height - 1) as f64 {
            return Err(invalid(
                "geometry",
                format!("beam of radius {r} px at ({cx}, {cy}) does not fit the {}x{} image", self.width, self.height),
            ));
        }
        Ok(())
    }
}

/// Misalignments of the LG-1 component relative to LG+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Defects {
    /// Lateral shift along x, as a fraction of the waist.
    #[serde(default)]
    pub offset: f64,
    /// Relative wavefront tilt: phase ramp across one waist along x (rad).
    #[serde(default)]
    pub tilt: f64,
    /// Intensity factor applied to the half-plane on one side of the ideal dark line.
    #[serde(default = "unit")]
    pub lobe_imbalance: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for Defects {
    fn default() -> Self {
        Self {
            offset: 0.0,
            tilt: 0.0,
            lobe_imbalance: 1.0,
        }
    }
}

impl Defects {
    pub fn validate(&self) -> Result<()> {
        if !(self.offset.abs() <= 0.5) {
            return Err(invalid("offset", format!("{} outside +/-0.5 waists", self.offset)));
        }
        if !self.tilt.is_finite() {
            return Err(invalid("tilt", "must be finite"));
        }
        if !(self.lobe_imbalance > 0.0 && self.lobe_imbalance.is_finite()) {
            return Err(invalid("lobe_imbalance", format!("{}", self.lobe_imbalance)));
        }
        Ok(())
    }
}

/// Shot noise and background.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameNoise {
    /// Expected photo-electrons at the ideal peak; `None` renders noiseless.
    pub photons_at_peak: Option<f64>,
    /// Uniform background, as a fraction of the ideal peak.
    #[serde(default)]
    pub background: f64,
}

/// `LG_{l=+-1, p=0}` at the waist: `sqrt(4/pi) (x +- i y) e^{-r^2/w^2} / w^2`.
fn lg_pm1(sign: f64, x: f64, y: f64, w: f64) -> Complex64 {
    let k = (4.0 / PI).sqrt() / (w * w);
    Complex64::new(x, sign * y) * (k * (-(x * x + y * y) / (w * w)).exp())
}

/// Renders `|LG+1 + e^{i phi} LG-1'|^2` onto the sensor, where `LG-1'` carries the defects.
pub fn synthesize_frame<R: Rng>(
    phi: f64,
    defects: &Defects,
    noise: &FrameNoise,
    geometry: &FrameGeometry,
    rng: &mut R,
) -> Result<PhaseFrame> {
    geometry.validate()?;
    defects.validate()?;
    if !phi.is_finite() {
        return Err(invalid("phi", "must be finite"));
    }
    if !(noise.background >= 0.0) {
        return Err(invalid("background", format!("{}", noise.background)));
    }
    let w = geometry.waist_px;
    let coeff = Complex64::from_polar(1.0, phi);
    let dx = defects.offset * w;
    let field = |x: f64, y: f64| {
        let a = lg_pm1(1.0, x, y, w);
        let b = lg_pm1(-1.0, x - dx, y, w) * Complex64::from_polar(1.0, defects.tilt * x / w);
        a + coeff * b
    };
    // the ideal pattern peaks at r = w/sqrt2 along the bright axis
    let bright = (phi - PI) / 2.0 + PI / 2.0;
    let rp = w / 2f64.sqrt();
    let (px, py) = (rp * bright.cos(), rp * bright.sin());
    let peak = (lg_pm1(1.0, px, py, w) + coeff * lg_pm1(-1.0, px, py, w)).norm_sqr();
    // unit normal to the ideal dark line
    let normal = (bright.cos(), bright.sin());

    let s = geometry.supersample;
    let (cx, cy) = geometry.center;
    let width = geometry.width;
    let rel: Vec<f64> = (0..geometry.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..width).map(move |col| {
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        let x = col as f64 - 0.5 + (i as f64 + 0.5) / s as f64 - cx;
                        let y = cy - (row as f64 - 0.5 + (j as f64 + 0.5) / s as f64);
                        let mut v = field(x, y).norm_sqr();
                        if x * normal.0 + y * normal.1 > 0.0 {
                            v *= defects.lobe_imbalance;
                        }
                        acc += v;
                    }
                }
                acc / (s * s) as f64 / peak + noise.background
            })
        })
        .collect();

    let full = geometry.depth.max_value() as f64 * geometry.peak_level;
    let values: Vec<f64> = match noise.photons_at_peak {
        Some(n) if n > 0.0 => rel
            .iter()
            .map(|&v| {
                let mean = v * n;
                let k = if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(rng)
                } else {
                    0.0
                };
                k / n * full
            })
            .collect(),
        Some(_) => return Err(invalid("photons_at_peak", "must be positive")),
        None => rel.iter().map(|v| v * full).collect(),
    };
    Ok(PhaseFrame {
        bitmap: Bitmap::quantize(geometry.width, geometry.height, geometry.depth, &values)?,
        exposure: noise.photons_at_peak.unwrap_or(0.0),
        phi_true: Some(phi.rem_euclid(TAU)),
    })
}

/// 3x3 median filter followed by a midtone stretch.
///
/// The stretch maps the 1st..99th percentile range onto [0, 1], clamps,
/// applies `3t^2 - 2t^3` and rescales to the bit depth. A flat image is
/// returned unchanged.
pub fn enhance(frame: &PhaseFrame) -> PhaseFrame {
    let bm = &frame.bitmap;
    let med = median3x3(&bm.to_f64(), bm.width(), bm.height());
    let lo = percentile(&med, 0.01);
    let hi = percentile(&med, 0.99);
    let max = bm.depth().max_value() as f64;
    let out: Vec<f64> = if hi > lo {
        med.iter()
            .map(|&v| {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                (3.0 * t * t - 2.0 * t * t * t) * max
            })
            .collect()
    } else {
        med
    };
    PhaseFrame {
        bitmap: Bitmap::quantize(bm.width(), bm.height(), bm.depth(), &out).expect("same size"),
        ..frame.clone()
    }
}

/// Pixel-wise mean of a stack of equally sized frames.
pub fn average_frames(frames: &[PhaseFrame]) -> Result<Intensity> {
    let first = frames.first().ok_or_else(|| Error::Image("empty frame stack".into()))?;
    let (w, h) = (first.bitmap.width(), first.bitmap.height());
    let mut acc = vec![0.0; w * h];
    for f in frames {
        if f.bitmap.width() != w || f.bitmap.height() != h {
            return Err(Error::Image("frames differ in size".into()));
        }
        for (a, &p) in acc.iter_mut().zip(f.bitmap.pixels()) {
            *a += p as f64;
        }
    }
    let n = frames.len() as f64;
    Ok(Intensity {
        width: w,
        height: h,
        values: acc.into_iter().map(|v| v / n).collect(),
    })
}

/// Beam center and analysis radius from a doughnut fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingFit {
    /// Fitted center (column, row).
    pub center: (f64, f64),
    pub radius_of_interest: f64,
    /// Fitted ring width `w`.
    pub width: f64,
    /// First-moment estimate the fit started from.
    pub initial_center: (f64, f64),
    /// RMS residual relative to the fitted amplitude.
    pub residual: f64,
}

impl RingFit {
    /// A ring fit placed by hand.
    pub fn manual(center: (f64, f64), width: f64) -> Self {
        Self {
            center,
            radius_of_interest: ROI_WIDTHS * width,
            width,
            initial_center: center,
            residual: 0.0,
        }
    }
}

struct Doughnut<'a> {
    img: &'a Intensity,
}

impl Residuals for Doughnut<'_> {
    fn len(&self) -> usize {
        self.img.values.len()
    }

    // params: amplitude, width, cx, cy, background
    fn eval(&self, p: &[f64], r: &mut [f64], mut jac: Option<&mut [f64]>) {
        let (a, w, cx, cy, b) = (p[0], p[1], p[2], p[3], p[4]);
        let w2 = w * w;
        for row in 0..self.img.height {
            for col in 0..self.img.width {
                let i = row * self.img.width + col;
                let x = col as f64 - cx;
                let y = row as f64 - cy;
                let q = (x * x + y * y) / w2;
                let e = (-2.0 * q).exp();
                let model = a * q * e + b;
                r[i] = model - self.img.values[i];
                if let Some(j) = jac.as_deref_mut() {
                    // dq/dw = -2q/w, d(q e)/dq = e (1 - 2q)
                    let dfdq = a * e * (1.0 - 2.0 * q);
                    let row_j = &mut j[5 * i..5 * i + 5];
                    row_j[0] = q * e;
                    row_j[1] = dfdq * (-2.0 * q / w);
                    row_j[2] = dfdq * (-2.0 * x / w2);
                    row_j[3] = dfdq * (-2.0 * y / w2);
                    row_j[4] = 1.0;
                }
            }
        }
    }
}

/// Intensity-weighted center and `sqrt(<r^2>)` of an image.
pub fn moments(img: &Intensity) -> Result<((f64, f64), f64)> {
    let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for row in 0..img.height {
        for col in 0..img.width {
            let v = img.get(col, row);
            s += v;
            sx += v * col as f64;
            sy += v * row as f64;
        }
    }
    if !(s > 0.0) {
        return Err(Error::FitFailed("image has no intensity".into()));
    }
    let (cx, cy) = (sx / s, sy / s);
    let mut s2 = 0.0;
    for row in 0..img.height {
        for col in 0..img.width {
            let dx = col as f64 - cx;
            let dy = row as f64 - cy;
            s2 += img.get(col, row) * (dx * dx + dy * dy);
        }
    }
    Ok(((cx, cy), (s2 / s).sqrt()))
}

/// Fits `A (r/w)^2 exp(-2 r^2/w^2) + B` to an averaged stack.
///
/// The start point comes from intensity moments: the doughnut has
/// `<r^2> = w^2` once background is negligible.
pub fn fit_ring(avg: &Intensity) -> Result<RingFit> {
    let (c0, w0) = moments(avg)?;
    let peak = avg.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = percentile(&avg.values, 0.05);
    if !(peak - floor > 0.0) {
        return Err(Error::FitFailed("degenerate intensity".into()));
    }
    let amp = (peak - floor) * std::f64::consts::E / 0.5;
    let ring = fit_from(avg, [amp, w0, c0.0, c0.1, floor]).or_else(|_| {
        // a strong background inflates the moments; retry above the floor
        let lifted = Intensity {
            values: avg.values.iter().map(|v| (v - floor).max(0.0)).collect(),
            ..avg.clone()
        };
        let (c1, w1) = moments(&lifted)?;
        fit_from(avg, [amp, w1, c1.0, c1.1, floor])
    })?;
    Ok(RingFit {
        initial_center: c0,
        ..ring
    })
}

fn fit_from(avg: &Intensity, start: [f64; 5]) -> Result<RingFit> {
    let sol = levenberg_marquardt(&Doughnut { img: avg }, &start, LmOptions::default())?;
    let p = &sol.params;
    let (a, w, cx, cy) = (p[0], p[1].abs(), p[2], p[3]);
    if !(a > 0.0) || !(w > 0.0) || !w.is_finite() {
        return Err(Error::FitFailed(format!("unphysical ring parameters a={a}, w={w}")));
    }
    if cx < 0.0 || cy < 0.0 || cx > (avg.width - 1) as f64 || cy > (avg.height - 1) as f64 {
        return Err(Error::FitFailed(format!("center ({cx:.1}, {cy:.1}) outside image")));
    }
    let residual = (sol.cost / avg.values.len() as f64).sqrt() / (a * 0.5 / std::f64::consts::E);
    Ok(RingFit {
        center: (cx, cy),
        radius_of_interest: ROI_WIDTHS * w,
        width: w,
        initial_center: (start[2], start[3]),
        residual,
    })
}

/// Angular intensity profile and its processed, folded form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinProfile {
    pub bins: usize,
    /// Mean intensity per bin over [0, 2pi).
    pub raw: Vec<f64>,
    /// Folded and 90-degree-subtracted, before smoothing (length bins/2).
    pub subtracted: Vec<f64>,
    /// After smoothing over a 45-degree sector (length bins/2).
    pub processed: Vec<f64>,
}

impl BinProfile {
    /// Bin angle of index `k`; bins are centered on `2 pi k / N`.
    pub fn angle(&self, k: usize) -> f64 {
        TAU * k as f64 / self.bins as f64
    }
}

/// Result of [`extract_phase`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    /// Dark-axis angle in [0, pi).
    pub alpha_d: f64,
    /// Reference-beam phase in [0, 2pi).
    pub phi: f64,
    pub min_bin: usize,
    /// RMS misfit of the processed profile to a pure `cos 2(alpha - alpha_d)`,
    /// relative to its amplitude.
    pub residual: f64,
    pub profile: BinProfile,
}

pub fn validate_bins(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(8) {
        return Err(Error::InvalidBinCount(n));
    }
    Ok(())
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Angular-binning estimate of the dark axis.
///
/// 1. mean intensity per angular bin within the radius of interest;
/// 2. fold opposite bins, `I_f(k) = I(k) + I(k + N/2)`;
/// 3. subtract the bin a quarter turn away, `I_f(k) - I_f(k + N/4)`;
/// 4. smooth with a circular 45-degree window (angles mod pi);
/// 5. the minimum bin gives `alpha_d`, lowest index on ties.
pub fn extract_phase(img: &Intensity, ring: &RingFit, bins: usize) -> Result<PhaseEstimate> {
    validate_bins(bins)?;
    let (cx, cy) = ring.center;
    let r2max = ring.radius_of_interest * ring.radius_of_interest;
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for row in 0..img.height {
        let y = cy - row as f64;
        for col in 0..img.width {
            let x = col as f64 - cx;
            if x * x + y * y > r2max || (x == 0.0 && y == 0.0) {
                continue;
            }
            let angle = y.atan2(x).rem_euclid(TAU);
            let k = (bins as f64 * angle / TAU + 0.5).floor() as usize % bins;
            sum[k] += img.get(col, row);
            count[k] += 1;
        }
    }
    if let Some(k) = count.iter().position(|&c| c == 0) {
        return Err(Error::EmptyBin(k));
    }
    let raw: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let half = bins / 2;
    let folded: Vec<f64> = (0..half).map(|k| raw[k] + raw[k + half]).collect();
    let subtracted: Vec<f64> = (0..half).map(|k| folded[k] - folded[(k + bins / 4) % half]).collect();
    let reach = bins / 16;
    let processed: Vec<f64> = (0..half)
        .map(|k| {
            (0..=2 * reach)
                .map(|j| subtracted[(k + half + j - reach) % half])
                .sum::<f64>()
                / (2 * reach + 1) as f64
        })
        .collect();
    let min_bin = argmin(&processed);
    let profile = BinProfile {
        bins,
        raw,
        subtracted,
        processed,
    };
    let alpha_d = profile.angle(min_bin);
    let phi = (2.0 * alpha_d + PI).rem_euclid(TAU);
    let residual = cosine_misfit(&profile.processed, bins, alpha_d);
    Ok(PhaseEstimate {
        alpha_d,
        phi,
        min_bin,
        residual,
        profile,
    })
}

fn cosine_misfit(profile: &[f64], bins: usize, alpha_d: f64) -> f64 {
    // least squares of y = c - a cos 2(alpha - alpha_d)
    let n = profile.len() as f64;
    let basis: Vec<f64> = (0..profile.len())
        .map(|k| (2.0 * (TAU * k as f64 / bins as f64 - alpha_d)).cos())
        .collect();
    let mean_y = profile.iter().sum::<f64>() / n;
    let mean_b = basis.iter().sum::<f64>() / n;
    let (mut sbb, mut sby) = (0.0, 0.0);
    for (b, y) in basis.iter().zip(profile) {
        sbb += (b - mean_b) * (b - mean_b);
        sby += (b - mean_b) * (y - mean_y);
    }
    let slope = if sbb > 0.0 { sby / sbb } else { 0.0 };
    let rss: f64 = basis
        .iter()
        .zip(profile)
        .map(|(b, y)| {
            let e = y - mean_y - slope * (b - mean_b);
            e * e
        })
        .sum();
    if slope == 0.0 {
        return 0.0;
    }
    (rss / n).sqrt() / slope.abs()
}

/// Ground truth written next to synthetic frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: String,
    pub phi_rad: f64,
    pub phi_deg: f64,
    pub alpha_d_deg: f64,
    pub defects: Defects,
    pub noise: FrameNoise,
    pub geometry: FrameGeometry,
    pub seed: u64,
}

/// Signed angular difference `a - b` wrapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::dark_axis_angle;
    use crate::modes::{lg_amplitude, BeamGeometry, ModeIndex};

    #[test]
    fn closed_form_matches_lg_modes() {
        let w = 37.0;
        let geom = BeamGeometry::at_waist(w, 1.0).unwrap();
        for &(x, y) in &[(0.0, 0.0), (3.0, -4.0), (-20.0, 11.5), (60.0, 70.0)] {
            for l in [1, -1] {
                let a = lg_amplitude(ModeIndex::new(l, 0), &geom, x, y);
                let b = lg_pm1(l as f64, x, y, w);
                assert!((a - b).norm() < 1e-15, "{l} {x} {y}: {a} vs {b}");
            }
        }
    }
    use crate::seed;

    fn ideal(phi: f64) -> PhaseFrame {
        let mut rng = seed::rng(0);
        synthesize_frame(phi, &Defects::default(), &FrameNoise::default(), &FrameGeometry::default(), &mut rng).unwrap()
    }

    fn true_ring() -> RingFit {
        let g = FrameGeometry::default();
        RingFit::manual(g.center, g.waist_px)
    }

    #[test]
    fn phi_pi_has_horizontal_dark_line() {
        let f = ideal(PI);
        let g = FrameGeometry::default();
        let row = g.center.1.round() as usize;
        let col = (g.center.0 + g.waist_px * 0.7).round() as usize;
        // on the x axis (nearly dark) versus the y axis (bright)
        let dark = f.bitmap.get(col, row) as f64;
        let bright = f.bitmap.get(g.center.0.round() as usize, (g.center.1 - g.waist_px * 0.7).round() as usize) as f64;
        assert!(dark < 0.05 * bright, "{dark} vs {bright}");
        let est = extract_phase(&f.intensity(), &true_ring(), DEFAULT_BINS).unwrap();
        assert_eq!(est.min_bin, 0);
        assert!((est.phi - PI).abs() < 1e-12);
    }

    #[test]
    fn periodic_in_phi() {
        assert_eq!(ideal(0.0).bitmap, ideal(TAU).bitmap);
    }

    #[test]
    fn misalignment_makes_one_lobe_brighter() {
        let mut rng = seed::rng(0);
        let g = FrameGeometry::default();
        // a pure shift keeps the lobes balanced; the tilt that comes with it does not
        let d = Defects { offset: 0.1, tilt: 0.3, ..Defects::default() };
        let f = synthesize_frame(PI, &d, &FrameNoise::default(), &g, &mut rng).unwrap();
        let img = f.intensity();
        let (mut upper, mut lower) = (0.0, 0.0);
        for row in 0..g.height {
            for col in 0..g.width {
                if (row as f64) < g.center.1 {
                    upper += img.get(col, row);
                } else {
                    lower += img.get(col, row);
                }
            }
        }
        assert!((upper / lower - 1.0).abs() > 0.05, "{upper} {lower}");
        let est = extract_phase(&img, &true_ring(), 120).unwrap();
        assert!(angle_diff(est.phi, PI).abs() <= TAU / 120.0 + 1e-9);
    }

    #[test]
    fn geometry_must_fit() {
        let g = FrameGeometry { waist_px: 100.0, ..FrameGeometry::default() };
        let mut rng = seed::rng(0);
        assert!(synthesize_frame(0.0, &Defects::default(), &FrameNoise::default(), &g, &mut rng).is_err());
        let d = Defects { offset: 0.6, ..Defects::default() };
        assert!(synthesize_frame(0.0, &d, &FrameNoise::default(), &FrameGeometry::default(), &mut rng).is_err());
    }

    #[test]
    fn bins_must_divide_by_eight() {
        let f = ideal(0.0);
        assert!(matches!(extract_phase(&f.intensity(), &true_ring(), 100), Err(Error::InvalidBinCount(100))));
        assert!(extract_phase(&f.intensity(), &true_ring(), 0).is_err());
    }

    #[test]
    fn ring_outside_image_gives_empty_bins() {
        let f = ideal(0.0);
        let ring = RingFit::manual((-500.0, -500.0), 10.0);
        assert!(matches!(extract_phase(&f.intensity(), &ring, 120), Err(Error::EmptyBin(_))));
    }

    #[test]
    fn ideal_frames_every_degree_within_one_bin() {
        let ring = true_ring();
        let worst = (0..360)
            .into_par_iter()
            .map(|k| {
                let phi = (k as f64).to_radians();
                let est = extract_phase(&ideal(phi).intensity(), &ring, 120).unwrap();
                angle_diff(est.phi, phi).abs()
            })
            .reduce(|| 0.0, f64::max);
        assert!(worst <= TAU / 120.0 + 1e-9, "worst error {} deg", worst.to_degrees());
    }

    #[test]
    fn scale_invariance_and_determinism() {
        let f = ideal(1.0);
        let a = extract_phase(&f.intensity(), &true_ring(), 120).unwrap();
        let b = extract_phase(&f.intensity().scaled(3.0), &true_ring(), 120).unwrap();
        assert_eq!(a.min_bin, b.min_bin);
        let c = extract_phase(&f.intensity(), &true_ring(), 120).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn smoothing_moves_minimum_less_than_sector() {
        for k in 0..36 {
            let phi = k as f64 * 10f64.to_radians();
            let est = extract_phase(&ideal(phi).intensity(), &true_ring(), 120).unwrap();
            let raw_min = argmin(&est.profile.subtracted);
            let d = (raw_min as i64 - est.min_bin as i64).rem_euclid(60);
            let d = d.min(60 - d);
            assert!(d as f64 * 3.0 <= 22.5);
        }
    }

    #[test]
    fn lobe_imbalance_moves_at_most_one_bin() {
        let mut rng = seed::rng(0);
        let g = FrameGeometry::default();
        for k in 0..12 {
            let phi = k as f64 * 0.5;
            let f0 = ideal(phi);
            let d = Defects { lobe_imbalance: 1.5, ..Defects::default() };
            let f1 = synthesize_frame(phi, &d, &FrameNoise::default(), &g, &mut rng).unwrap();
            let a = extract_phase(&f0.intensity(), &true_ring(), 120).unwrap();
            let b = extract_phase(&f1.intensity(), &true_ring(), 120).unwrap();
            let diff = (a.min_bin as i64 - b.min_bin as i64).rem_euclid(60);
            assert!(diff.min(60 - diff) <= 1, "phi {phi}: {} vs {}", a.min_bin, b.min_bin);
        }
    }

    #[test]
    fn rotation_shifts_dark_axis() {
        let ring = true_ring();
        for (k, delta) in [(0, 0.3), (1, 1.1), (2, 2.0)] {
            let phi = 0.7 + k as f64;
            let img = ideal(phi).intensity();
            let rotated = img.rotate_about(ring.center, delta);
            let a = extract_phase(&img, &ring, 120).unwrap();
            let b = extract_phase(&rotated, &ring, 120).unwrap();
            let shift = angle_diff(2.0 * b.alpha_d, 2.0 * (a.alpha_d + delta)).abs() / 2.0;
            assert!(shift <= TAU / 120.0 + 1e-9, "delta {delta}: {}", shift.to_degrees());
        }
    }

    #[test]
    fn rotate90_shifts_phi_by_pi() {
        let f = ideal(1.0);
        let ring = true_ring();
        let a = extract_phase(&f.intensity(), &ring, 120).unwrap();
        let rf = PhaseFrame::new(rotate90(&f.bitmap)).unwrap();
        let b = extract_phase(&rf.intensity(), &rotate90_ring(&ring, f.bitmap.width()), 120).unwrap();
        assert!(angle_diff(b.phi, a.phi + PI).abs() < 1e-9);
    }

    #[test]
    fn dark_axis_matches_modes_module() {
        for k in 0..8 {
            let phi = 0.1 + k as f64 * 0.77;
            let est = extract_phase(&ideal(phi).intensity(), &true_ring(), 120).unwrap();
            let d = angle_diff(2.0 * est.alpha_d, 2.0 * dark_axis_angle(phi)).abs() / 2.0;
            assert!(d <= TAU / 120.0 + 1e-9, "phi {phi}: {} deg", d.to_degrees());
        }
    }

    #[test]
    fn enhance_properties() {
        let flat = PhaseFrame::new(Bitmap::new(64, 64, BitDepth::Eight, vec![77; 64 * 64]).unwrap()).unwrap();
        assert_eq!(enhance(&flat).bitmap, flat.bitmap);

        let mut px = vec![100u16; 64 * 64];
        px[30 * 64 + 30] = 255;
        let dead = PhaseFrame::new(Bitmap::new(64, 64, BitDepth::Eight, px).unwrap()).unwrap();
        let out = enhance(&dead);
        assert_eq!(out.bitmap.get(30, 30), out.bitmap.get(29, 29));

        // background fluctuations outside the beam shrink
        let mut rng = seed::rng(5);
        let noise = FrameNoise { photons_at_peak: Some(400.0), background: 0.1 };
        let f = synthesize_frame(0.5, &Defects::default(), &noise, &FrameGeometry::default(), &mut rng).unwrap();
        let e = enhance(&f);
        let corner_std = |bm: &Bitmap| {
            let v: Vec<f64> = (0..40).flat_map(|r| (0..40).map(move |c| (c, r))).map(|(c, r)| bm.get(c, r) as f64).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!(corner_std(&e.bitmap) < corner_std(&f.bitmap));
    }

    fn uniform_stack(g: &FrameGeometry, noise: &FrameNoise, n: usize) -> Vec<PhaseFrame> {
        (0..n)
            .map(|k| {
                let mut rng = seed::rng(seed::derive_seed(9, k as u64));
                synthesize_frame(TAU * k as f64 / n as f64, &Defects::default(), noise, g, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn ring_fit_recovers_center_and_shift() {
        let g = FrameGeometry { center: (160.3, 166.8), ..FrameGeometry::default() };
        let stack = uniform_stack(&g, &FrameNoise::default(), 36);
        let fit = fit_ring(&average_frames(&stack).unwrap()).unwrap();
        assert!((fit.center.0 - g.center.0).abs() < 0.5 && (fit.center.1 - g.center.1).abs() < 0.5, "{:?}", fit.center);
        assert!((fit.width - g.waist_px).abs() < 0.5, "{}", fit.width);

        let g2 = FrameGeometry { center: (g.center.0 + 5.0, g.center.1 + 3.0), ..g };
        let fit2 = fit_ring(&average_frames(&uniform_stack(&g2, &FrameNoise::default(), 36)).unwrap()).unwrap();
        assert!((fit2.center.0 - fit.center.0 - 5.0).abs() < 0.5);
        assert!((fit2.center.1 - fit.center.1 - 3.0).abs() < 0.5);
    }

    #[test]
    fn background_biases_moments_not_enhanced_fit() {
        let g = FrameGeometry { center: (140.0, 150.0), ..FrameGeometry::default() };
        let noise = FrameNoise { photons_at_peak: Some(200.0), background: 0.3 };
        let stack = uniform_stack(&g, &noise, 36);
        let raw = fit_ring(&average_frames(&stack).unwrap()).unwrap();
        let moment_err = ((raw.initial_center.0 - g.center.0).powi(2) + (raw.initial_center.1 - g.center.1).powi(2)).sqrt();
        assert!(moment_err > 0.5, "moment center error {moment_err}");
        let enhanced: Vec<PhaseFrame> = stack.iter().map(enhance).collect();
        let fit = fit_ring(&average_frames(&enhanced).unwrap()).unwrap();
        assert!((fit.center.0 - g.center.0).abs() < 0.5 && (fit.center.1 - g.center.1).abs() < 0.5, "{:?}", fit.center);
    }

    #[test]
    fn fit_rejects_blank_stack() {
        let blank = Intensity { width: 64, height: 64, values: vec![0.0; 64 * 64] };
        assert!(fit_ring(&blank).is_err());
    }
}
