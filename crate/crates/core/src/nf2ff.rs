//! Planar near-field to far-field transformation.
//!
//! The tangential field on the scan plane is expanded into plane waves,
//!
//! ```text
//! f_x(kx, ky) = ∫∫ E_x(x', y', d) e^{+j(kx x' + ky y')} dx' dy'
//! ```
//!
//! (and likewise `f_y`), evaluated as a zero-padded 2D DFT weighted by the
//! cell area `dx·dy`. The far field then follows from
//!
//! ```text
//! E_θ ∝ f_x cos φ + f_y sin φ
//! E_φ ∝ cos θ (−f_x sin φ + f_y cos φ)
//! ```
//!
//! at `kx = k0 sin θ cos φ`, `ky = k0 sin θ sin φ`. The common radial factor
//! `j k e^{−jkr} / (2πr)` is dropped because every downstream use is
//! peak-normalized.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldsynth::FieldMap;

/// Lowest level reported in a pattern cut.
pub const CUT_FLOOR_DB: f64 = -80.0;
/// Default floor below which samples are ignored by [`pattern_error`].
pub const DEFAULT_ERROR_FLOOR_DB: f64 = -30.0;
pub const DEFAULT_PAD_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CutPlane {
    E,
    H,
}

impl std::str::FromStr for CutPlane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "e" => Ok(CutPlane::E),
            "H" | "h" => Ok(CutPlane::H),
            _ => Err(Error::Config(format!("unknown cut plane '{s}' (expected E or H)"))),
        }
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Polarization::X),
            "y" | "Y" => Ok(Polarization::Y),
            _ => Err(Error::Config(format!("unknown polarization '{s}' (expected x or y)"))),
        }
    }
}

/// `f_x`, `f_y` sampled on a centred wavenumber grid, indexed `[ky][kx]`.
#[derive(Debug, Clone)]
pub struct PlaneWaveSpectrum {
    pub fx: Array2<Complex64>,
    pub fy: Array2<Complex64>,
    pub kx_axis: Vec<f64>,
    pub ky_axis: Vec<f64>,
    pub k0: f64,
}

impl PlaneWaveSpectrum {
    /// Spectrum with the given values on uniform axes. Used for building
    /// spectra by hand; [`plane_wave_spectrum`] is the usual constructor.
    pub fn new(
        fx: Array2<Complex64>,
        fy: Array2<Complex64>,
        kx_axis: Vec<f64>,
        ky_axis: Vec<f64>,
        k0: f64,
    ) -> Result<Self> {
        if fx.dim() != fy.dim() || fx.dim() != (ky_axis.len(), kx_axis.len()) {
            return Err(Error::Shape(format!(
                "spectrum arrays {:?}/{:?} do not match axes ({}, {})",
                fx.dim(),
                fy.dim(),
                ky_axis.len(),
                kx_axis.len()
            )));
        }
        let increasing = |a: &[f64]| a.len() >= 2 && a.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&kx_axis) || !increasing(&ky_axis) {
            return Err(Error::Config("wavenumber axes must be increasing".into()));
        }
        if !(k0 > 0.0) {
            return Err(Error::Config("k0 must be positive".into()));
        }
        Ok(PlaneWaveSpectrum {
            fx,
            fy,
            kx_axis,
            ky_axis,
            k0,
        })
    }

    pub fn dkx(&self) -> f64 {
        self.kx_axis[1] - self.kx_axis[0]
    }

    pub fn dky(&self) -> f64 {
        self.ky_axis[1] - self.ky_axis[0]
    }

    /// Bilinear interpolation of `(f_x, f_y)` at an arbitrary wavenumber.
    /// The DFT spectrum is periodic, so indices wrap around.
    pub fn interpolate(&self, kx: f64, ky: f64) -> (Complex64, Complex64) {
        let (ny, nx) = self.fx.dim();
        let u = (kx - self.kx_axis[0]) / self.dkx();
        let v = (ky - self.ky_axis[0]) / self.dky();
        let (i0, tu) = (u.floor(), u - u.floor());
        let (j0, tv) = (v.floor(), v - v.floor());
        let wrap = |i: f64, n: usize| (i as i64).rem_euclid(n as i64) as usize;
        let (i0, i1) = (wrap(i0, nx), wrap(i0 + 1.0, nx));
        let (j0, j1) = (wrap(j0, ny), wrap(j0 + 1.0, ny));
        let blend = |a: &Array2<Complex64>| {
            a[[j0, i0]] * ((1.0 - tu) * (1.0 - tv))
                + a[[j0, i1]] * (tu * (1.0 - tv))
                + a[[j1, i0]] * ((1.0 - tu) * tv)
                + a[[j1, i1]] * (tu * tv)
        };
        (blend(&self.fx), blend(&self.fy))
    }

    /// `Σ(|f_x|² + |f_y|²) · dkx · dky / (2π)²`
    pub fn energy(&self) -> f64 {
        let s: f64 = self
            .fx
            .iter()
            .chain(self.fy.iter())
            .map(|v| v.norm_sqr())
            .sum();
        s * self.dkx() * self.dky() / (4.0 * PI * PI)
    }
}

/// Far-field components over a `(θ, φ)` grid, indexed `[θ][φ]`.
#[derive(Debug, Clone)]
pub struct FarFieldPattern {
    pub e_theta: Array2<Complex64>,
    pub e_phi: Array2<Complex64>,
    pub theta_axis: Vec<f64>,
    pub phi_axis: Vec<f64>,
}

impl FarFieldPattern {
    pub fn new(
        e_theta: Array2<Complex64>,
        e_phi: Array2<Complex64>,
        theta_axis: Vec<f64>,
        phi_axis: Vec<f64>,
    ) -> Result<Self> {
        let want = (theta_axis.len(), phi_axis.len());
        if e_theta.dim() != want || e_phi.dim() != want {
            return Err(Error::Shape(format!(
                "pattern arrays {:?}/{:?} do not match axes {:?}",
                e_theta.dim(),
                e_phi.dim(),
                want
            )));
        }
        check_theta(&theta_axis)?;
        Ok(FarFieldPattern {
            e_theta,
            e_phi,
            theta_axis,
            phi_axis,
        })
    }
}

fn check_theta(theta_axis: &[f64]) -> Result<()> {
    const SLACK: f64 = 1e-12;
    match theta_axis
        .iter()
        .find(|t| !(**t >= -SLACK && **t <= PI / 2.0 + SLACK))
    {
        Some(t) => Err(Error::Domain(format!(
            "θ = {t} rad is outside the forward hemisphere [0, π/2]"
        ))),
        None => Ok(()),
    }
}

fn fft_2d_inverse(buf: &mut Array2<Complex64>) {
    let (rows, cols) = buf.dim();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_inverse(cols);
    let col_fft = planner.plan_fft_inverse(rows);
    for mut row in buf.rows_mut() {
        let mut line = row.to_vec();
        row_fft.process(&mut line);
        row.iter_mut().zip(line).for_each(|(d, s)| *d = s);
    }
    let mut line = vec![Complex64::new(0.0, 0.0); rows];
    for mut col in buf.columns_mut() {
        line.iter_mut().zip(col.iter()).for_each(|(d, s)| *d = *s);
        col_fft.process(&mut line);
        col.iter_mut().zip(line.iter()).for_each(|(d, s)| *d = *s);
    }
}

/// Centred wavenumber axis for a padded length `p` and spacing `d`:
/// `k_m = 2π m / (p d)` for `m ∈ [−⌊p/2⌋, p − ⌊p/2⌋)`, spanning `[−π/d, π/d)`.
fn wavenumber_axis(p: usize, d: f64) -> (Vec<f64>, i64) {
    let m0 = -((p / 2) as i64);
    let dk = 2.0 * PI / (p as f64 * d);
    ((0..p as i64).map(|m| (m0 + m) as f64 * dk).collect(), m0)
}

/// Plane-wave spectrum of a fully-sampled map by zero-padded 2D DFT.
pub fn plane_wave_spectrum(map: &FieldMap, pad_factor: usize) -> Result<PlaneWaveSpectrum> {
    let g = &map.grid;
    if !(1..=16).contains(&pad_factor) {
        return Err(Error::Config(format!(
            "pad factor {pad_factor} outside [1, 16]"
        )));
    }
    if !g.is_fully_sampled() {
        return Err(Error::NyquistViolation {
            dx: g.dx,
            dy: g.dy,
            half_lambda: 0.5 * g.wavelength(),
        });
    }
    let (px, py) = (g.nx * pad_factor, g.ny * pad_factor);
    let (kx_axis, mx0) = wavenumber_axis(px, g.dx);
    let (ky_axis, my0) = wavenumber_axis(py, g.dy);
    let (x0, y0) = (g.x(0), g.y(0));
    let area = g.dx * g.dy;

    let transform = |field: &Array2<Complex64>| {
        let mut buf = Array2::<Complex64>::zeros((py, px));
        buf.slice_mut(ndarray::s![..g.ny, ..g.nx]).assign(field);
        fft_2d_inverse(&mut buf);
        // reorder to centred axes and restore the physical origin x0, y0
        Array2::from_shape_fn((py, px), |(b, a)| {
            let sa = (mx0 + a as i64).rem_euclid(px as i64) as usize;
            let sb = (my0 + b as i64).rem_euclid(py as i64) as usize;
            let shift = Complex64::from_polar(area, kx_axis[a] * x0 + ky_axis[b] * y0);
            buf[[sb, sa]] * shift
        })
    };
    let fx = transform(&map.ex);
    let fy = transform(&map.ey);
    PlaneWaveSpectrum::new(fx, fy, kx_axis, ky_axis, g.k0())
}

/// Far-field components from a plane-wave spectrum.
pub fn to_farfield(
    spec: &PlaneWaveSpectrum,
    theta_axis: &[f64],
    phi_axis: &[f64],
) -> Result<FarFieldPattern> {
    check_theta(theta_axis)?;
    let shape = (theta_axis.len(), phi_axis.len());
    let mut e_theta = Array2::zeros(shape);
    let mut e_phi = Array2::zeros(shape);
    for (a, &theta) in theta_axis.iter().enumerate() {
        let (st, ct) = theta.sin_cos();
        for (b, &phi) in phi_axis.iter().enumerate() {
            let (sp, cp) = phi.sin_cos();
            let (fx, fy) = spec.interpolate(spec.k0 * st * cp, spec.k0 * st * sp);
            e_theta[[a, b]] = fx * cp + fy * sp;
            e_phi[[a, b]] = (fy * cp - fx * sp) * ct;
        }
    }
    FarFieldPattern::new(e_theta, e_phi, theta_axis.to_vec(), phi_axis.to_vec())
}

/// Peak-normalized principal-plane cut in dB over `[−90°, 90°]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCut {
    pub angle_axis: Vec<f64>,
    pub level_db: Vec<f64>,
    pub plane: CutPlane,
}

impl PatternCut {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("angle_deg,level_db\n");
        for (a, l) in self.angle_axis.iter().zip(&self.level_db) {
            let _ = writeln!(s, "{a},{l}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the two-column CSV written by [`PatternCut::to_csv`].
    pub fn from_csv(text: &str, plane: CutPlane) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("angle_deg,level_db") => {}
            other => {
                return Err(Error::Config(format!(
                    "expected header 'angle_deg,level_db', found {other:?}"
                )))
            }
        }
        let (mut angle_axis, mut level_db) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse = |f: Option<&str>| {
                f.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                    Error::Config(format!("malformed cut row {}: '{line}'", n + 2))
                })
            };
            let mut fields = line.split(',');
            angle_axis.push(parse(fields.next())?);
            level_db.push(parse(fields.next())?);
        }
        Ok(PatternCut {
            angle_axis,
            level_db,
            plane,
        })
    }

    pub fn read_csv(path: &Path, plane: CutPlane) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, plane)
    }
}

fn nearest_phi(phi_axis: &[f64], target: f64) -> Option<usize> {
    let circ = |a: f64| {
        let d = (a - target).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let best = (0..phi_axis.len()).min_by(|&a, &b| circ(phi_axis[a]).total_cmp(&circ(phi_axis[b])))?;
    let mut sorted: Vec<f64> = phi_axis.iter().map(|p| p.rem_euclid(2.0 * PI)).collect();
    sorted.sort_by(f64::total_cmp);
    let mut step = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    if let (Some(first), Some(last)) = (sorted.first(), sorted.last()) {
        step = step.max(first + 2.0 * PI - last);
    }
    (circ(phi_axis[best]) <= step.max(1e-9) + 1e-12).then_some(best)
}

/// Extracts the co-polarized principal-plane cut.
///
/// | plane | polarization | φ cut | component |
/// |-------|--------------|-------|-----------|
/// | E     | x            | 0°    | E_θ       |
/// | H     | x            | 90°   | E_φ       |
/// | E     | y            | 90°   | E_θ       |
/// | H     | y            | 0°    | E_φ       |
///
/// Negative angles come from the `φ + 180°` half-plane.
pub fn extract_cut(
    pattern: &FarFieldPattern,
    plane: CutPlane,
    polarization: Polarization,
) -> Result<PatternCut> {
    let phi_c = match (plane, polarization) {
        (CutPlane::E, Polarization::X) | (CutPlane::H, Polarization::Y) => 0.0,
        _ => PI / 2.0,
    };
    let component = match plane {
        CutPlane::E => &pattern.e_theta,
        CutPlane::H => &pattern.e_phi,
    };
    let missing = |p: f64| {
        Error::Config(format!(
            "pattern has no φ column within one grid step of {:.1}°",
            p.to_degrees()
        ))
    };
    let fwd = nearest_phi(&pattern.phi_axis, phi_c).ok_or_else(|| missing(phi_c))?;
    let back = nearest_phi(&pattern.phi_axis, phi_c + PI).ok_or_else(|| missing(phi_c + PI))?;

    let mut order: Vec<usize> = (0..pattern.theta_axis.len()).collect();
    order.sort_by(|&a, &b| pattern.theta_axis[a].total_cmp(&pattern.theta_axis[b]));
    let (mut angle_axis, mut mag) = (Vec::new(), Vec::new());
    for &t in order.iter().rev() {
        let theta = pattern.theta_axis[t];
        if theta.abs() < 1e-12 {
            continue;
        }
        angle_axis.push(-theta.to_degrees());
        mag.push(component[[t, back]].norm());
    }
    for &t in &order {
        angle_axis.push(pattern.theta_axis[t].to_degrees());
        mag.push(component[[t, fwd]].norm());
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::DegeneratePattern);
    }
    let level_db = mag
        .iter()
        .map(|m| {
            if *m > 0.0 {
                (20.0 * (m / peak).log10()).max(CUT_FLOOR_DB)
            } else {
                CUT_FLOOR_DB
            }
        })
        .collect();
    Ok(PatternCut {
        angle_axis,
        level_db,
        plane,
    })
}

/// Mean absolute dB difference over samples where either cut is at or
/// above `floor_db`.
pub fn pattern_error(a: &PatternCut, b: &PatternCut, floor_db: f64) -> Result<f64> {
    let same_axis = a.angle_axis.len() == b.angle_axis.len()
        && a
            .angle_axis
            .iter()
            .zip(&b.angle_axis)
            .all(|(x, y)| (x - y).abs() <= 1e-9);
    if !same_axis || a.level_db.len() != b.level_db.len() {
        return Err(Error::Shape("pattern cuts have different angle axes".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.level_db.iter().zip(&b.level_db) {
        if x.max(*y) >= floor_db {
            sum += (x - y).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// θ in `[0°, 90°]` at `step_deg`, φ at the four principal half-planes.
pub fn principal_axes(step_deg: f64) -> (Vec<f64>, Vec<f64>) {
    let n = (90.0 / step_deg).round() as usize;
    let theta = (0..=n)
        .map(|i| (i as f64 * 90.0 / n as f64).to_radians())
        .collect();
    let phi = [0.0, 90.0, 180.0, 270.0]
        .iter()
        .map(|d: &f64| d.to_radians())
        .collect();
    (theta, phi)
}

/// E- and H-plane cuts of a field map, at 1° resolution.
pub fn principal_cuts(
    map: &FieldMap,
    pad_factor: usize,
    polarization: Polarization,
) -> Result<(PatternCut, PatternCut)> {
    let spec = plane_wave_spectrum(map, pad_factor)?;
    let (theta, phi) = principal_axes(1.0);
    let ff = to_farfield(&spec, &theta, &phi)?;
    Ok((
        extract_cut(&ff, CutPlane::E, polarization)?,
        extract_cut(&ff, CutPlane::H, polarization)?,
    ))
}

/// Co-polarized axis of a measured map: the component with more energy.
pub fn dominant_polarization(map: &FieldMap) -> Polarization {
    let px: f64 = map.ex.iter().map(|v| v.norm_sqr()).sum();
    let py: f64 = map.ey.iter().map(|v| v.norm_sqr()).sum();
    if px >= py {
        Polarization::X
    } else {
        Polarization::Y
    }
}
