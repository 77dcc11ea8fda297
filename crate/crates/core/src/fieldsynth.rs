//! Synthetic near-field maps and analytic far-field references built from
//! superpositions of infinitesimal (Hertzian) dipoles.
//!
//! Time convention is `e^{+jωt}`: outgoing waves carry `e^{-jkr}`, and a
//! plane wave travelling along `k` varies as `e^{-j k·r}`. The plane-wave
//! spectrum in [`crate::nf2ff`] uses the matching `e^{+j(kx x + ky y)}`
//! kernel, so a field tilted towards `+kx` peaks at `+kx` in the spectrum.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nf2ff::FarFieldPattern;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;

/// Cap reported by [`check_truncation`] when every border sample is zero.
pub const TRUNCATION_MARGIN_CAP_DB: f64 = 300.0;

pub type Vec3 = [f64; 3];
pub type CVec3 = [Complex64; 3];

/// Uniform planar sampling grid at height `z_d` above the antenna.
///
/// Sample `(i, j)` sits at `x_i = (i - (nx-1)/2)·dx`, `y_j = (j - (ny-1)/2)·dy`,
/// so the grid is centred on the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub z_d: f64,
    pub freq_hz: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, z_d: f64, freq_hz: f64) -> Result<Self> {
        let grid = GridSpec {
            nx,
            ny,
            dx,
            dy,
            z_d,
            freq_hz,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid with spacing and scan distance given in wavelengths.
    pub fn square_in_wavelengths(
        n: usize,
        spacing_lambda: f64,
        z_lambda: f64,
        freq_hz: f64,
    ) -> Result<Self> {
        let lambda = C0 / freq_hz;
        Self::new(
            n,
            n,
            spacing_lambda * lambda,
            spacing_lambda * lambda,
            z_lambda * lambda,
            freq_hz,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.nx, self.ny
            )));
        }
        let positive = [self.dx, self.dy, self.z_d, self.freq_hz];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "grid spacing, scan distance and frequency must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.freq_hz
    }

    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    /// True iff both spacings are at most half a wavelength.
    pub fn is_fully_sampled(&self) -> bool {
        let half = 0.5 * self.wavelength();
        // relative slack so spacings computed as 0.5·λ compare equal
        self.dx <= half * (1.0 + 1e-12) && self.dy <= half * (1.0 + 1e-12)
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.nx as f64 - 1.0)) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.ny as f64 - 1.0)) * self.dy
    }

    /// Width `a` and height `b` of the scan plane.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }

    /// Grid kept by selecting every `factor`-th sample starting at index 0.
    pub fn decimated(&self, factor: usize) -> GridSpec {
        let nx = self.nx.div_ceil(factor);
        let ny = self.ny.div_ceil(factor);
        GridSpec {
            nx,
            ny,
            dx: self.dx * factor as f64,
            dy: self.dy * factor as f64,
            ..*self
        }
    }
}

/// Infinitesimal electric dipole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    pub position: Vec3,
    pub orientation: Vec3,
    pub amplitude: Complex64,
}

impl DipoleSource {
    pub fn new(position: Vec3, orientation: Vec3, amplitude: Complex64) -> Result<Self> {
        let norm = dot(&orientation, &orientation).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "dipole orientation must be a unit vector (norm {norm})"
            )));
        }
        if !(position.iter().all(|v| v.is_finite()) && amplitude.is_finite()) {
            return Err(Error::Config("dipole parameters must be finite".into()));
        }
        Ok(DipoleSource {
            position,
            orientation,
            amplitude,
        })
    }

    fn moment(&self) -> CVec3 {
        self.orientation.map(|o| self.amplitude * o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaScene {
    pub sources: Vec<DipoleSource>,
    pub freq_hz: f64,
}

impl AntennaScene {
    pub fn new(sources: Vec<DipoleSource>, freq_hz: f64) -> Result<Self> {
        let scene = AntennaScene { sources, freq_hz };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("antenna scene has no sources".into()));
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(Error::Config("scene frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.freq_hz
    }

    /// Copy with every complex amplitude multiplied by `c`.
    pub fn scaled(&self, c: Complex64) -> AntennaScene {
        let mut out = self.clone();
        for s in &mut out.sources {
            s.amplitude *= c;
        }
        out
    }

    /// Copy with every source moved by `offset` metres.
    pub fn translated(&self, offset: Vec3) -> AntennaScene {
        let mut out = self.clone();
        for s in &mut out.sources {
            for (p, o) in s.position.iter_mut().zip(offset) {
                *p += o;
            }
        }
        out
    }

    /// Axis along which the broadside far field is mostly polarized.
    pub fn dominant_polarization(&self) -> crate::nf2ff::Polarization {
        let (mut px, mut py) = (0.0, 0.0);
        let mut sum = [Complex64::new(0.0, 0.0); 2];
        for s in &self.sources {
            let m = s.moment();
            sum[0] += m[0];
            sum[1] += m[1];
            px += m[0].norm_sqr();
            py += m[1].norm_sqr();
        }
        // coherent sum first, incoherent power as tie-break for cancelling arrays
        let (cx, cy) = (sum[0].norm_sqr(), sum[1].norm_sqr());
        let (wx, wy) = if (cx - cy).abs() > 1e-12 * (cx + cy) {
            (cx, cy)
        } else {
            (px, py)
        };
        if wx >= wy {
            crate::nf2ff::Polarization::X
        } else {
            crate::nf2ff::Polarization::Y
        }
    }
}

/// Tangential field samples `ex`, `ey` on the scan plane, indexed `[j][i]`
/// (row = y, column = x).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub grid: GridSpec,
    pub ex: Array2<Complex64>,
    pub ey: Array2<Complex64>,
}

impl FieldMap {
    pub fn new(grid: GridSpec, ex: Array2<Complex64>, ey: Array2<Complex64>) -> Result<Self> {
        grid.validate()?;
        let want = (grid.ny, grid.nx);
        if ex.dim() != want || ey.dim() != want {
            return Err(Error::Shape(format!(
                "field arrays {:?}/{:?} do not match grid {:?}",
                ex.dim(),
                ey.dim(),
                want
            )));
        }
        if ex.iter().chain(ey.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "field map".into(),
            });
        }
        Ok(FieldMap { grid, ex, ey })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        FieldMap {
            grid,
            ex: Array2::zeros((grid.ny, grid.nx)),
            ey: Array2::zeros((grid.ny, grid.nx)),
        }
    }

    /// `sqrt(|ex|² + |ey|²)` per sample.
    pub fn total_magnitude(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.ex.dim());
        ndarray::Zip::from(&mut out)
            .and(&self.ex)
            .and(&self.ey)
            .for_each(|o, a, b| *o = (a.norm_sqr() + b.norm_sqr()).sqrt());
        out
    }

    /// Sum of `|ex|² + |ey|²` over all samples.
    pub fn power(&self) -> f64 {
        self.ex
            .iter()
            .chain(self.ey.iter())
            .map(|v| v.norm_sqr())
            .sum()
    }

    /// Keeps samples `(factor·j, factor·i)`.
    pub fn decimate(&self, factor: usize) -> FieldMap {
        let g = self.grid.decimated(factor);
        let pick = |a: &Array2<Complex64>| {
            Array2::from_shape_fn((g.ny, g.nx), |(j, i)| a[[j * factor, i * factor]])
        };
        FieldMap {
            grid: g,
            ex: pick(&self.ex),
            ey: pick(&self.ey),
        }
    }
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Complete field of an infinitesimal dipole, including the reactive
/// `1/r²` and `1/r³` terms:
///
/// `E = e^{-jkr} { k² (p - r̂(r̂·p)) / r + (3 r̂(r̂·p) - p)(1/r³ + jk/r²) }`
///
/// The constant `1/(4πε₀)` is dropped.
pub fn hertzian_dipole_field(src: &DipoleSource, point: Vec3, freq_hz: f64) -> Result<CVec3> {
    let r_vec = [
        point[0] - src.position[0],
        point[1] - src.position[1],
        point[2] - src.position[2],
    ];
    let r = dot(&r_vec, &r_vec).sqrt();
    if r <= 1e-15 * (1.0 + dot(&point, &point).sqrt()) {
        return Err(Error::SingularPoint);
    }
    let k = 2.0 * PI * freq_hz / C0;
    let r_hat = r_vec.map(|v| v / r);
    let p = src.moment();
    let r_dot_p = p[0] * r_hat[0] + p[1] * r_hat[1] + p[2] * r_hat[2];
    let phase = Complex64::from_polar(1.0, -k * r);
    let near = Complex64::new(1.0 / (r * r * r), k / (r * r));
    let far = k * k / r;
    let mut e = [Complex64::new(0.0, 0.0); 3];
    for c in 0..3 {
        let transverse = p[c] - r_hat[c] * r_dot_p;
        let radial = r_hat[c] * r_dot_p * 3.0 - p[c];
        e[c] = phase * (transverse * far + radial * near);
    }
    Ok(e)
}

/// Samples the superposed dipole field on every grid point of the scan plane.
pub fn synthesize_nearfield(scene: &AntennaScene, grid: &GridSpec) -> Result<FieldMap> {
    scene.validate()?;
    grid.validate()?;
    if (scene.freq_hz - grid.freq_hz).abs() > 1e-9 * scene.freq_hz {
        return Err(Error::Config(format!(
            "scene frequency {} Hz does not match grid frequency {} Hz",
            scene.freq_hz, grid.freq_hz
        )));
    }
    if let Some(s) = scene.sources.iter().find(|s| s.position[2] >= grid.z_d) {
        return Err(Error::Config(format!(
            "source at z = {} m is not behind the scan plane z = {} m",
            s.position[2], grid.z_d
        )));
    }
    let mut ex = Array2::zeros((grid.ny, grid.nx));
    let mut ey = Array2::zeros((grid.ny, grid.nx));
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let point = [grid.x(i), grid.y(j), grid.z_d];
            let (mut sx, mut sy) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for src in &scene.sources {
                let e = hertzian_dipole_field(src, point, scene.freq_hz)?;
                sx += e[0];
                sy += e[1];
            }
            ex[[j, i]] = sx;
            ey[[j, i]] = sy;
        }
    }
    FieldMap::new(*grid, ex, ey)
}

/// Unit vectors `(r̂, θ̂, φ̂)` for a direction.
pub(crate) fn spherical_basis(theta: f64, phi: f64) -> (Vec3, Vec3, Vec3) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (
        [st * cp, st * sp, ct],
        [ct * cp, ct * sp, -st],
        [-sp, cp, 0.0],
    )
}

/// Far field of the scene: each dipole contributes its element pattern
/// `(θ̂·p, φ̂·p)` times the phase-centre factor `e^{+jk r̂·r_n}`.
/// The common radial factor is dropped.
pub fn analytic_farfield(
    scene: &AntennaScene,
    theta_axis: &[f64],
    phi_axis: &[f64],
) -> Result<FarFieldPattern> {
    scene.validate()?;
    let k = 2.0 * PI / scene.wavelength();
    let shape = (theta_axis.len(), phi_axis.len());
    let mut e_theta = Array2::zeros(shape);
    let mut e_phi = Array2::zeros(shape);
    for (a, &theta) in theta_axis.iter().enumerate() {
        for (b, &phi) in phi_axis.iter().enumerate() {
            let (r_hat, t_hat, p_hat) = spherical_basis(theta, phi);
            let (mut et, mut ep) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for s in &scene.sources {
                let af = s.amplitude * Complex64::from_polar(1.0, k * dot(&r_hat, &s.position));
                et += af * dot(&t_hat, &s.orientation);
                ep += af * dot(&p_hat, &s.orientation);
            }
            e_theta[[a, b]] = et;
            e_phi[[a, b]] = ep;
        }
    }
    FarFieldPattern::new(e_theta, e_phi, theta_axis.to_vec(), phi_axis.to_vec())
}

/// Families of synthetic antennas drawn by [`random_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneProfile {
    Single,
    LinearArray,
    PlanarArray,
    RandomCluster,
}

impl SceneProfile {
    pub const ALL: [SceneProfile; 4] = [
        SceneProfile::Single,
        SceneProfile::LinearArray,
        SceneProfile::PlanarArray,
        SceneProfile::RandomCluster,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SceneProfile::Single => "single",
            SceneProfile::LinearArray => "linear_array",
            SceneProfile::PlanarArray => "planar_array",
            SceneProfile::RandomCluster => "random_cluster",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            SceneProfile::Single => 0x5349_4e47,
            SceneProfile::LinearArray => 0x4c49_4e45,
            SceneProfile::PlanarArray => 0x504c_414e,
            SceneProfile::RandomCluster => 0x434c_5553,
        }
    }
}

impl std::str::FromStr for SceneProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scene profile '{s}'")))
    }
}

impl std::fmt::Display for SceneProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Edge-tapered element weight at normalized position `u ∈ [-1, 1]`:
/// a Gaussian whose value at `|u| = 1` is `edge_db` below the centre.
fn gaussian_taper(u: f64, edge_db: f64) -> f64 {
    let edge = 10f64.powf(edge_db / 20.0);
    edge.powf(u * u)
}

fn axis_orientation(rng: &mut ChaCha8Rng) -> Vec3 {
    if rng.random_bool(0.5) {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    }
}

/// Deterministic synthetic antenna for `(seed, profile)`.
///
/// Frequencies are drawn from 1–10 GHz and every length is scaled by the
/// wavelength, so all scenes have the same electrical size ranges:
///
/// | profile          | elements    | spacing     | taper (edge)  | steering |
/// |------------------|-------------|-------------|---------------|----------|
/// | `single`         | 1           | –           | –             | –        |
/// | `linear_array`   | 2–8 on x or y | 0.4–0.7 λ | 0 to −25 dB   | ±20°     |
/// | `planar_array`   | 3–8 × 3–8   | 0.4–0.7 λ   | −15 to −35 dB | 0–15°    |
/// | `random_cluster` | 2–6         | within 2 λ cube | amplitude 0.2–1, random phase | – |
///
/// Array elements share an x or y orientation; cluster elements are
/// randomly oriented. Sources lie at `z ∈ [−1, 0] λ`.
pub fn random_scene(seed: u64, profile: SceneProfile) -> AntennaScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ profile.tag().rotate_left(32));
    let freq_hz = rng.random_range(1.0e9..10.0e9);
    let lambda = C0 / freq_hz;
    let k = 2.0 * PI / lambda;
    let global_phase = Complex64::from_polar(1.0, rng.random_range(-PI..PI));
    let mut sources = Vec::new();
    match profile {
        SceneProfile::Single => {
            let orientation = axis_orientation(&mut rng);
            let position = [
                rng.random_range(-1.0..1.0) * lambda,
                rng.random_range(-1.0..1.0) * lambda,
                rng.random_range(-0.5..0.0) * lambda,
            ];
            sources.push(DipoleSource {
                position,
                orientation,
                amplitude: global_phase,
            });
        }
        SceneProfile::LinearArray => {
            let n = rng.random_range(2..=8usize);
            let along_x = rng.random_bool(0.5);
            let orientation = axis_orientation(&mut rng);
            let spacing = rng.random_range(0.4..0.7) * lambda;
            let edge_db = rng.random_range(-25.0..0.0);
            let steer = rng.random_range(-20f64..20.0).to_radians();
            let z = rng.random_range(-0.5..0.0) * lambda;
            for m in 0..n {
                let u = m as f64 - 0.5 * (n as f64 - 1.0);
                let pos_along = u * spacing;
                let taper = if n > 1 {
                    gaussian_taper(u / (0.5 * (n as f64 - 1.0)), edge_db)
                } else {
                    1.0
                };
                let position = if along_x {
                    [pos_along, 0.0, z]
                } else {
                    [0.0, pos_along, z]
                };
                // progressive phase e^{+jk sin(θ0) u d} steers the main beam to θ0
                let amplitude = global_phase
                    * Complex64::from_polar(taper, k * steer.sin() * pos_along);
                sources.push(DipoleSource {
                    position,
                    orientation,
                    amplitude,
                });
            }
        }
        SceneProfile::PlanarArray => {
            let nx = rng.random_range(3..=8usize);
            let ny = rng.random_range(3..=8usize);
            let orientation = axis_orientation(&mut rng);
            let sx = rng.random_range(0.4..0.7) * lambda;
            let sy = rng.random_range(0.4..0.7) * lambda;
            let edge_db = rng.random_range(-35.0..-15.0);
            let theta0 = rng.random_range(0f64..15.0).to_radians();
            let phi0 = rng.random_range(0.0..2.0 * PI);
            let z = rng.random_range(-0.5..0.0) * lambda;
            let (kx0, ky0) = (
                k * theta0.sin() * phi0.cos(),
                k * theta0.sin() * phi0.sin(),
            );
            for my in 0..ny {
                for mx in 0..nx {
                    let ux = mx as f64 - 0.5 * (nx as f64 - 1.0);
                    let uy = my as f64 - 0.5 * (ny as f64 - 1.0);
                    let (x, y) = (ux * sx, uy * sy);
                    let taper = gaussian_taper(ux / (0.5 * (nx as f64 - 1.0)), edge_db)
                        * gaussian_taper(uy / (0.5 * (ny as f64 - 1.0)), edge_db);
                    let amplitude =
                        global_phase * Complex64::from_polar(taper, kx0 * x + ky0 * y);
                    sources.push(DipoleSource {
                        position: [x, y, z],
                        orientation,
                        amplitude,
                    });
                }
            }
        }
        SceneProfile::RandomCluster => {
            let n = rng.random_range(2..=6usize);
            for _ in 0..n {
                let position = [
                    rng.random_range(-1.0..1.0) * lambda,
                    rng.random_range(-1.0..1.0) * lambda,
                    rng.random_range(-1.0..0.0) * lambda,
                ];
                // uniform direction on the sphere
                let cos_t: f64 = rng.random_range(-1.0..1.0);
                let az = rng.random_range(0.0..2.0 * PI);
                let sin_t = (1.0 - cos_t * cos_t).sqrt();
                let orientation = [sin_t * az.cos(), sin_t * az.sin(), cos_t];
                let amplitude = Complex64::from_polar(
                    rng.random_range(0.2..1.0),
                    rng.random_range(-PI..PI),
                );
                sources.push(DipoleSource {
                    position,
                    orientation,
                    amplitude,
                });
            }
        }
    }
    AntennaScene { sources, freq_hz }
}

/// Outcome of the scan-plane truncation criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationCheck {
    pub passes: bool,
    /// Plane maximum over the largest border sample, in dB (capped).
    pub margin_db: f64,
}

/// Checks that every border sample of `sqrt(|ex|²+|ey|²)` lies at least
/// `threshold_db` below the maximum over the plane.
pub fn check_truncation(map: &FieldMap, threshold_db: f64) -> Result<TruncationCheck> {
    let mag = map.total_magnitude();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::DegenerateMap);
    }
    let (ny, nx) = mag.dim();
    let mut edge: f64 = 0.0;
    for i in 0..nx {
        edge = edge.max(mag[[0, i]]).max(mag[[ny - 1, i]]);
    }
    for j in 0..ny {
        edge = edge.max(mag[[j, 0]]).max(mag[[j, nx - 1]]);
    }
    let margin_db = if edge > 0.0 {
        (20.0 * (peak / edge).log10()).min(TRUNCATION_MARGIN_CAP_DB)
    } else {
        TRUNCATION_MARGIN_CAP_DB
    };
    Ok(TruncationCheck {
        passes: margin_db >= threshold_db,
        margin_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z_dipole() -> DipoleSource {
        DipoleSource::new([0.0; 3], [0.0, 0.0, 1.0], Complex64::new(1.0, 0.0)).unwrap()
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec::square_in_wavelengths(n, 0.5, 4.0, 3.0e9).unwrap()
    }

    #[test]
    fn on_axis_theta_component_vanishes() {
        let f = 3.0e9;
        let e = hertzian_dipole_field(&z_dipole(), [0.0, 0.0, 0.7], f).unwrap();
        // θ̂ on the z axis lies in the xy-plane
        assert!(e[0].norm() < 1e-12 * e[2].norm());
        assert!(e[1].norm() < 1e-12 * e[2].norm());
    }

    #[test]
    fn far_zone_follows_sine_law() {
        let f = 3.0e9;
        let k = 2.0 * PI * f / C0;
        let r = 50.0 / k;
        let e_theta = |theta: f64| {
            let (rh, th, _) = spherical_basis(theta, 0.3);
            let e = hertzian_dipole_field(&z_dipole(), rh.map(|v| v * r), f).unwrap();
            (e[0] * th[0] + e[1] * th[1] + e[2] * th[2]).norm()
        };
        let ratio = e_theta(PI / 2.0) / e_theta(PI / 6.0);
        assert!((ratio - 2.0).abs() < 0.04, "ratio {ratio}");
    }

    #[test]
    fn field_is_linear_in_amplitude() {
        let mut a = z_dipole();
        a.orientation = [0.6, 0.0, 0.8];
        let mut b = a;
        b.amplitude *= 2.0;
        let p = [0.03, -0.02, 0.4];
        let ea = hertzian_dipole_field(&a, p, 2e9).unwrap();
        let eb = hertzian_dipole_field(&b, p, 2e9).unwrap();
        for c in 0..3 {
            assert!((eb[c] - ea[c] * 2.0).norm() <= 1e-15 * eb[c].norm().max(1e-300));
        }
    }

    #[test]
    fn coincident_point_is_rejected() {
        let err = hertzian_dipole_field(&z_dipole(), [0.0; 3], 1e9).unwrap_err();
        assert!(matches!(err, Error::SingularPoint));
    }

    #[test]
    fn orientation_must_be_unit() {
        assert!(DipoleSource::new([0.0; 3], [1.0, 1.0, 0.0], Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn centred_x_dipole_map_is_mirror_symmetric() {
        let g = grid(24);
        let src = DipoleSource::new([0.0; 3], [1.0, 0.0, 0.0], Complex64::new(1.0, 0.0)).unwrap();
        let scene = AntennaScene::new(vec![src], g.freq_hz).unwrap();
        let map = synthesize_nearfield(&scene, &g).unwrap();
        let n = g.nx;
        for j in 0..n {
            for i in 0..n {
                let v = map.ex[[j, i]].norm();
                for w in [map.ex[[j, n - 1 - i]].norm(), map.ex[[n - 1 - j, i]].norm()] {
                    assert!((v - w).abs() <= 1e-9 * v.max(1e-300), "({j},{i})");
                }
            }
        }
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(AntennaScene::new(vec![], 1e9).is_err());
        let scene = AntennaScene {
            sources: vec![],
            freq_hz: 3e9,
        };
        assert!(synthesize_nearfield(&scene, &grid(4)).is_err());
    }

    #[test]
    fn frequency_mismatch_is_a_config_error() {
        let scene = AntennaScene::new(vec![z_dipole()], 1e9).unwrap();
        assert!(matches!(
            synthesize_nearfield(&scene, &grid(4)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn opposite_colocated_sources_cancel() {
        let g = grid(8);
        let a = DipoleSource::new([0.01, 0.0, -0.02], [0.0, 1.0, 0.0], Complex64::new(0.3, 0.4))
            .unwrap();
        let mut b = a;
        b.amplitude = -a.amplitude;
        let scene = AntennaScene::new(vec![a, b], g.freq_hz).unwrap();
        let map = synthesize_nearfield(&scene, &g).unwrap();
        assert!(map.ex.iter().chain(map.ey.iter()).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn synthesis_scales_with_complex_amplitude() {
        let scene = random_scene(11, SceneProfile::RandomCluster);
        let g = GridSpec::square_in_wavelengths(16, 0.5, 4.0, scene.freq_hz).unwrap();
        let c = Complex64::new(-0.7, 1.9);
        let base = synthesize_nearfield(&scene, &g).unwrap();
        let scaled = synthesize_nearfield(&scene.scaled(c), &g).unwrap();
        for (a, b) in base.ex.iter().zip(scaled.ex.iter()) {
            assert!((a * c - b).norm() <= 1e-12 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn finer_grid_contains_coarse_grid() {
        let scene = random_scene(5, SceneProfile::LinearArray);
        let coarse = GridSpec::square_in_wavelengths(11, 0.5, 4.0, scene.freq_hz).unwrap();
        let fine = GridSpec {
            nx: 21,
            ny: 21,
            dx: coarse.dx / 2.0,
            dy: coarse.dy / 2.0,
            ..coarse
        };
        let a = synthesize_nearfield(&scene, &coarse).unwrap();
        let b = synthesize_nearfield(&scene, &fine).unwrap().decimate(2);
        assert_eq!(a.grid.nx, b.grid.nx);
        for (u, v) in a.ex.iter().zip(b.ex.iter()) {
            assert!((u - v).norm() <= 1e-12 * u.norm().max(1e-300));
        }
    }

    #[test]
    fn z_dipole_far_field_is_sine_pattern() {
        let scene = AntennaScene::new(vec![z_dipole()], 1e9).unwrap();
        let thetas: Vec<f64> = (0..10).map(|i| i as f64 * 0.15).collect();
        let ff = analytic_farfield(&scene, &thetas, &[0.0, 1.0, 2.5]).unwrap();
        for (a, t) in thetas.iter().enumerate() {
            for b in 0..3 {
                assert!((ff.e_theta[[a, b]].norm() - t.sin()).abs() < 1e-12);
                assert!(ff.e_phi[[a, b]].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_element_array_nulls_at_endfire() {
        let f = 1e9;
        let d = C0 / f / 2.0;
        let mk = |x: f64| {
            DipoleSource::new([x, 0.0, 0.0], [0.0, 0.0, 1.0], Complex64::new(1.0, 0.0)).unwrap()
        };
        let scene = AntennaScene::new(vec![mk(-d / 2.0), mk(d / 2.0)], f).unwrap();
        let ff = analytic_farfield(&scene, &[PI / 2.0, 0.0_f64.max(0.3)], &[0.0]).unwrap();
        // array factor 2cos((π/2) sinθ cosφ) = 0 at θ=90°, φ=0
        assert!(ff.e_theta[[0, 0]].norm() < 1e-12);
        let af = 2.0 * ((PI / 2.0) * 0.3f64.sin()).cos();
        assert!((ff.e_theta[[1, 0]].norm() - af * 0.3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn uniform_array_peaks_broadside() {
        let f = 2e9;
        let d = C0 / f / 2.0;
        let sources = (0..6)
            .map(|m| {
                DipoleSource::new(
                    [(m as f64 - 2.5) * d, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    Complex64::new(1.0, 0.0),
                )
                .unwrap()
            })
            .collect();
        let scene = AntennaScene::new(sources, f).unwrap();
        let thetas: Vec<f64> = (0..=90).map(|d| (d as f64).to_radians()).collect();
        let ff = analytic_farfield(&scene, &thetas, &[0.0]).unwrap();
        // y-dipoles: in the φ=0 plane the field is entirely E_φ
        let best = (0..thetas.len())
            .max_by(|&a, &b| ff.e_phi[[a, 0]].norm().total_cmp(&ff.e_phi[[b, 0]].norm()))
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn random_scene_is_deterministic() {
        for p in SceneProfile::ALL {
            assert_eq!(random_scene(42, p), random_scene(42, p));
        }
        assert_ne!(
            random_scene(1, SceneProfile::PlanarArray),
            random_scene(2, SceneProfile::PlanarArray)
        );
        assert_eq!(random_scene(9, SceneProfile::Single).sources.len(), 1);
    }

    #[test]
    fn planar_population_is_valid() {
        for seed in 0..1000 {
            let scene = random_scene(seed, SceneProfile::PlanarArray);
            scene.validate().unwrap();
            let z_d = 4.0 * scene.wavelength();
            for s in &scene.sources {
                assert!(s.position[2] < z_d);
                let n = dot(&s.orientation, &s.orientation).sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn truncation_limits() {
        let g = grid(6);
        let flat = FieldMap {
            grid: g,
            ex: Array2::from_elem((6, 6), Complex64::new(2.0, 0.0)),
            ey: Array2::zeros((6, 6)),
        };
        let t = check_truncation(&flat, 40.0).unwrap();
        assert!(!t.passes);
        assert!(t.margin_db.abs() < 1e-12);

        let mut spot = FieldMap::zeros(g);
        spot.ey[[2, 3]] = Complex64::new(0.0, 1.0);
        let t = check_truncation(&spot, 40.0).unwrap();
        assert!(t.passes);
        assert_eq!(t.margin_db, TRUNCATION_MARGIN_CAP_DB);

        assert!(matches!(
            check_truncation(&FieldMap::zeros(g), 40.0),
            Err(Error::DegenerateMap)
        ));
    }

    #[test]
    fn directive_array_passes_truncation_on_large_plane() {
        // 8x8 strongly tapered broadside array
        let f = 3e9;
        let lambda = C0 / f;
        let mut sources = Vec::new();
        for my in 0..8 {
            for mx in 0..8 {
                let ux = (mx as f64 - 3.5) / 3.5;
                let uy = (my as f64 - 3.5) / 3.5;
                let w = gaussian_taper(ux, -35.0) * gaussian_taper(uy, -35.0);
                sources.push(
                    DipoleSource::new(
                        [ux * 3.5 * 0.5 * lambda, uy * 3.5 * 0.5 * lambda, 0.0],
                        [1.0, 0.0, 0.0],
                        Complex64::new(w, 0.0),
                    )
                    .unwrap(),
                );
            }
        }
        let scene = AntennaScene::new(sources, f).unwrap();
        let g = GridSpec::square_in_wavelengths(86, 0.5, 4.0, f).unwrap();
        let map = synthesize_nearfield(&scene, &g).unwrap();
        let t = check_truncation(&map, 40.0).unwrap();
        assert!(t.passes, "margin {}", t.margin_db);
    }
}
