//! Classical interpolation baselines on decimated channel maps: bicubic
//! convolution, ordinary Kriging and sparse recovery in a DCT basis.
//!
//! All three treat anchors as sitting at full-grid indices
//! `(factor·j, factor·i)` and return maps clamped to `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::ChannelMap;
use crate::error::{Error, Result};

fn check_grid(low: &ChannelMap, factor: usize, target: usize) -> Result<()> {
    let (h, w) = low.dim();
    if factor == 0 || h != target.div_ceil(factor) || w != target.div_ceil(factor) {
        return Err(Error::Shape(format!(
            "{h}x{w} map cannot come from a {target}-sample grid decimated by {factor}"
        )));
    }
    Ok(())
}

/// Keys cubic convolution kernel with `a = −0.5`.
fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Row of samples with two linearly extrapolated ghosts on each side.
fn ghosted(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    if n == 1 {
        return vec![row[0]; 5];
    }
    let (a, b) = (row[0], row[1]);
    let (y, z) = (row[n - 2], row[n - 1]);
    let mut out = Vec::with_capacity(n + 4);
    out.extend([3.0 * a - 2.0 * b, 2.0 * a - b]);
    out.extend_from_slice(row);
    out.extend([2.0 * z - y, 3.0 * z - 2.0 * y]);
    out
}

fn cubic_axis(row: &[f64], factor: usize, target: usize) -> Vec<f64> {
    let g = ghosted(row);
    let last = row.len() - 1;
    (0..target)
        .map(|t| {
            let u = t as f64 / factor as f64;
            let i = (u.floor() as usize).min(last);
            let fr = u - i as f64;
            // `g[i + 2]` is `row[i]`.
            (0..4).map(|m| keys(fr - (m as f64 - 1.0)) * g[i + 1 + m]).sum()
        })
        .collect()
}

/// Separable bicubic convolution onto the full grid.
pub fn bicubic_upsample(low: &ChannelMap, factor: usize, target: usize) -> Result<ChannelMap> {
    check_grid(low, factor, target)?;
    let (h, _) = low.dim();
    let rows: Vec<Vec<f64>> = low
        .values
        .rows()
        .into_iter()
        .map(|r| cubic_axis(&r.to_vec(), factor, target))
        .collect();
    let mut out = ndarray::Array2::zeros((target, target));
    for i in 0..target {
        let col: Vec<f64> = (0..h).map(|j| rows[j][i]).collect();
        for (j, v) in cubic_axis(&col, factor, target).into_iter().enumerate() {
            out[[j, i]] = v;
        }
    }
    Ok(low.with_values(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramKind {
    Exponential,
    Gaussian,
    Spherical,
}

/// Isotropic variogram; distances are in full-grid samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.sill > self.nugget && self.range > 0.0) {
            return Err(Error::Config(format!("invalid variogram {self:?}")));
        }
        Ok(())
    }

    /// Shape function rising from 0 to 1.
    fn shape(kind: VariogramKind, h: f64, range: f64) -> f64 {
        let r = h / range;
        match kind {
            VariogramKind::Exponential => 1.0 - (-r).exp(),
            VariogramKind::Gaussian => 1.0 - (-r * r).exp(),
            VariogramKind::Spherical => {
                if r < 1.0 {
                    1.5 * r - 0.5 * r.powi(3)
                } else {
                    1.0
                }
            }
        }
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + (self.sill - self.nugget) * Self::shape(self.kind, h, self.range)
        }
    }
}

/// Empirical semivariogram `(lag, γ)` with unit-width bins over all pairs.
pub fn empirical_variogram(points: &[(f64, f64)], values: &[f64], max_lag: f64, bin: f64) -> Vec<(f64, f64)> {
    let nb = (max_lag / bin).ceil() as usize;
    let mut sum = vec![0.0; nb];
    let mut lag = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            let h = ((points[a].0 - points[b].0).powi(2) + (points[a].1 - points[b].1).powi(2)).sqrt();
            let k = (h / bin) as usize;
            if k < nb {
                sum[k] += 0.5 * (values[a] - values[b]).powi(2);
                lag[k] += h;
                count[k] += 1;
            }
        }
    }
    (0..nb)
        .filter(|&k| count[k] > 0)
        .map(|k| (lag[k] / count[k] as f64, sum[k] / count[k] as f64))
        .collect()
}

/// Least-squares fit of every variogram family over a range grid; the sill
/// follows in closed form. Returns the family with the lowest residual.
pub fn fit_variogram(points: &[(f64, f64)], values: &[f64], spacing: f64) -> Result<VariogramModel> {
    let max_lag = {
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for p in points {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
        0.5 * ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt()
    };
    let emp = empirical_variogram(points, values, max_lag.max(spacing), spacing);
    if emp.is_empty() || emp.iter().all(|e| e.1 <= 0.0) {
        return Err(Error::DegenerateMap);
    }
    let mut best: Option<(f64, VariogramModel)> = None;
    for kind in [VariogramKind::Exponential, VariogramKind::Gaussian, VariogramKind::Spherical] {
        for step in 0..80 {
            let range = spacing * 0.5 * 1.07f64.powi(step);
            let f: Vec<f64> = emp.iter().map(|(h, _)| VariogramModel::shape(kind, *h, range)).collect();
            let ff: f64 = f.iter().map(|v| v * v).sum();
            let fy: f64 = f.iter().zip(&emp).map(|(a, (_, g))| a * g).sum();
            if ff <= 0.0 || fy <= 0.0 {
                continue;
            }
            let sill = fy / ff;
            let sse: f64 = f.iter().zip(&emp).map(|(a, (_, g))| (sill * a - g).powi(2)).sum();
            if best.as_ref().is_none_or(|(s, _)| sse < *s) {
                best = Some((
                    sse,
                    VariogramModel {
                        kind,
                        nugget: 0.0,
                        sill,
                        range,
                    },
                ));
            }
        }
    }
    best.map(|(_, m)| m).ok_or(Error::DegenerateMap)
}

/// Ordinary Kriging with a global neighbourhood, solved once per map.
///
/// Predictions use the dual form `z(x) = Σ bᵢ γ(x, xᵢ) + c`.
pub struct Kriging {
    points: Vec<(f64, f64)>,
    variogram: VariogramModel,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dual: DVector<f64>,
}

impl Kriging {
    pub fn fit(points: Vec<(f64, f64)>, values: &[f64], variogram: VariogramModel) -> Result<Self> {
        variogram.validate()?;
        if points.len() < 3 || points.len() != values.len() {
            return Err(Error::Config("Kriging needs at least 3 samples with values".into()));
        }
        match Self::solve(&points, values, variogram) {
            Ok(k) => Ok(k),
            Err(_) => {
                let jitter = (variogram.sill - variogram.nugget) * 1e-6;
                log::warn!("singular Kriging system; retrying with nugget {jitter:.3e}");
                let v = VariogramModel {
                    nugget: variogram.nugget + jitter,
                    ..variogram
                };
                Self::solve(&points, values, v)
            }
        }
    }

    fn solve(points: &[(f64, f64)], values: &[f64], variogram: VariogramModel) -> Result<Self> {
        let n = points.len();
        let mut k = DMatrix::zeros(n + 1, n + 1);
        for a in 0..n {
            for b in 0..n {
                k[(a, b)] = variogram.gamma(dist(points[a], points[b]));
            }
            k[(a, n)] = 1.0;
            k[(n, a)] = 1.0;
        }
        let lu = k.lu();
        let mut rhs = DVector::zeros(n + 1);
        for (a, v) in values.iter().enumerate() {
            rhs[a] = *v;
        }
        let dual = lu
            .solve(&rhs)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("ordinary Kriging system".into()))?;
        Ok(Kriging {
            points: points.to_vec(),
            variogram,
            lu,
            dual,
        })
    }

    pub fn variogram(&self) -> &VariogramModel {
        &self.variogram
    }

    pub fn predict(&self, x: (f64, f64)) -> f64 {
        let n = self.points.len();
        let mut z = self.dual[n];
        for (a, p) in self.points.iter().enumerate() {
            z += self.dual[a] * self.variogram.gamma(dist(x, *p));
        }
        z
    }

    /// Primal Kriging weights at `x` (they sum to one).
    pub fn weights_at(&self, x: (f64, f64)) -> Result<Vec<f64>> {
        let n = self.points.len();
        let mut rhs = DVector::zeros(n + 1);
        for (a, p) in self.points.iter().enumerate() {
            rhs[a] = self.variogram.gamma(dist(x, *p));
        }
        rhs[n] = 1.0;
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("ordinary Kriging system".into()))?;
        Ok(sol.iter().take(n).copied().collect())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Anchor coordinates `(x, y)` in full-grid samples and their values.
fn anchors(low: &ChannelMap, factor: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    let f = factor as f64;
    low.values
        .indexed_iter()
        .map(|((j, i), v)| ((i as f64 * f, j as f64 * f), *v))
        .unzip()
}

/// Ordinary Kriging onto the full grid. Without a model, one is fitted to
/// the map's empirical semivariogram.
pub fn kriging_upsample(
    low: &ChannelMap,
    factor: usize,
    target: usize,
    model: Option<VariogramModel>,
) -> Result<ChannelMap> {
    check_grid(low, factor, target)?;
    let (points, values) = anchors(low, factor);
    let model = match model {
        Some(m) => m,
        None => fit_variogram(&points, &values, factor as f64)?,
    };
    let k = Kriging::fit(points, &values, model)?;
    let out = ndarray::Array2::from_shape_fn((target, target), |(j, i)| k.predict((i as f64, j as f64)));
    Ok(low.with_values(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsConfig {
    /// Weight of the `ℓ1` penalty on DCT coefficients.
    pub lambda: f64,
    pub iters: usize,
    /// Relative objective change treated as converged.
    pub tol: f64,
    /// Refit the surviving coefficients by least squares, removing the
    /// shrinkage bias.
    #[serde(default)]
    pub debias: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            lambda: 1e-3,
            iters: 500,
            tol: 1e-10,
            debias: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsResult {
    pub map: ChannelMap,
    pub converged: bool,
    /// Objective after every iteration.
    pub objective: Vec<f64>,
}

/// Orthonormal DCT-II matrix; row `k` is the `k`-th basis vector.
pub fn dct_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, x| {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        s * (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2 * n) as f64).cos()
    })
}

/// Least-squares refit on the support of `c` when it is small enough to be
/// determined by the samples.
fn debias(c: &mut DMatrix<f64>, phi: &DMatrix<f64>, y: &DMatrix<f64>) {
    let peak = c.abs().max();
    let support: Vec<(usize, usize)> = (0..c.nrows())
        .flat_map(|k| (0..c.ncols()).map(move |l| (k, l)))
        .filter(|&(k, l)| c[(k, l)].abs() > 1e-6 * peak)
        .collect();
    let m = y.len();
    if support.is_empty() || support.len() > m / 2 {
        return;
    }
    let n = y.nrows();
    let a = DMatrix::from_fn(m, support.len(), |r, s| {
        let (k, l) = support[s];
        phi[(r % n, k)] * phi[(r / n, l)]
    });
    let rhs = DVector::from_iterator(m, (0..m).map(|r| y[(r % n, r / n)]));
    if let Ok(sol) = a.svd(true, true).solve(&rhs, 1e-12) {
        for (s, &(k, l)) in support.iter().enumerate() {
            c[(k, l)] = sol[s];
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Sparse recovery: `min ½‖Φ C Φᵀ − Y‖² + λ‖C‖₁` over 2D DCT coefficients
/// `C`, where `Φ` holds the inverse-DCT rows at the anchor indices. Solved
/// by monotone FISTA with backtracking on the step size.
pub fn cs_reconstruct(low: &ChannelMap, factor: usize, target: usize, config: &CsConfig) -> Result<CsResult> {
    check_grid(low, factor, target)?;
    if !(config.lambda >= 0.0) || config.iters == 0 {
        return Err(Error::Config("CS needs lambda >= 0 and at least one iteration".into()));
    }
    let d = dct_matrix(target);
    let n = low.dim().0;
    // Φ = (Dᵀ) restricted to anchor rows.
    let phi = DMatrix::from_fn(n, target, |r, k| d[(k, r * factor)]);
    let y = DMatrix::from_fn(n, n, |j, i| low.values[[j, i]]);
    let objective = |c: &DMatrix<f64>| -> (f64, DMatrix<f64>) {
        let r = &phi * c * phi.transpose() - &y;
        (0.5 * r.norm_squared(), r)
    };
    let l1 = |c: &DMatrix<f64>| c.iter().map(|v| v.abs()).sum::<f64>();

    let total = |f: f64, c: &DMatrix<f64>| f + config.lambda * l1(c);

    // Monotone FISTA: the momentum point `z` may wander, the iterate `c`
    // only moves when the objective does not increase.
    let mut c = DMatrix::zeros(target, target);
    let mut z = c.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0;
    let mut best = total(objective(&c).0, &c);
    let mut history = Vec::with_capacity(config.iters);
    let mut converged = false;
    for _ in 0..config.iters {
        let (fz, rz) = objective(&z);
        let grad = phi.transpose() * &rz * &phi;
        let (u, fu) = loop {
            let step = 1.0 / lip;
            let cand = (&z - &grad * step).map(|v| soft(v, config.lambda * step));
            let (cf, _) = objective(&cand);
            let diff = &cand - &z;
            let q = fz + grad.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if cf <= q + 1e-15 * q.abs().max(1.0) || lip > 1e12 {
                break (cand, cf);
            }
            lip *= 2.0;
        };
        let fu_total = total(fu, &u);
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let accepted = fu_total <= best;
        let prev = best;
        let next = if accepted { u.clone() } else { c.clone() };
        z = &next + (&u - &next) * (t / tn) + (&next - &c) * ((t - 1.0) / tn);
        c = next;
        t = tn;
        if accepted {
            best = fu_total;
        }
        history.push(best);
        if accepted && prev - best <= config.tol * best.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("CS reconstruction stopped after {} iterations without converging", config.iters);
    }
    if config.debias {
        debias(&mut c, &phi, &y);
    }
    let img = d.transpose() * &c * &d;
    let out = ndarray::Array2::from_shape_fn((target, target), |(j, i)| img[(j, i)]);
    Ok(CsResult {
        map: low.with_values(out),
        converged,
        objective: history,
    })
}
