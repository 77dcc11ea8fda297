//! Training losses with analytic gradients.
//!
//! Every loss takes `(target, pred)` and returns the scalar together with its
//! gradient with respect to `pred`, the argument a network controls.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataio::ChannelKind;
use crate::error::{Error, Result};

/// Floor applied to pooled SSIM terms before they are raised to a power.
const POOLED_FLOOR: f64 = 1e-6;
/// Added to local variances before the square root so `σ` stays
/// differentiable on flat patches.
const VARIANCE_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array2<f64>,
}

fn check_shapes(target: &Array2<f64>, pred: &Array2<f64>) -> Result<()> {
    if target.dim() != pred.dim() {
        return Err(Error::Shape(format!(
            "target {:?} and prediction {:?} differ",
            target.dim(),
            pred.dim()
        )));
    }
    if target.is_empty() {
        return Err(Error::Shape("empty map".into()));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error. The subgradient at ties is 0.
pub fn mae(target: &Array2<f64>, pred: &Array2<f64>) -> Result<LossValue> {
    check_shapes(target, pred)?;
    let n = target.len() as f64;
    let mut value = 0.0;
    let grad = Zip::from(target).and(pred).map_collect(|&t, &p| {
        value += (p - t).abs();
        sign(p - t) / n
    });
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseVariant {
    /// `min(|d|, 1 − |d|)`, the wrap-around distance on the unit circle.
    #[default]
    Symmetric,
    /// `min(|d|, |d − 1|)`, which only wraps for positive `d`.
    Literal,
}

impl std::str::FromStr for PhaseVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(PhaseVariant::Symmetric),
            "literal" => Ok(PhaseVariant::Literal),
            _ => Err(Error::Config(format!("unknown phase-loss variant '{s}'"))),
        }
    }
}

impl std::fmt::Display for PhaseVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhaseVariant::Symmetric => "symmetric",
            PhaseVariant::Literal => "literal",
        })
    }
}

fn check_unit(map: &Array2<f64>, what: &str) -> Result<()> {
    if map.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!("{what} values must lie in [0, 1]")));
    }
    Ok(())
}

/// Periodic phase loss on normalized phase maps, with `d = target − pred`.
pub fn periodic_phase_loss(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    variant: PhaseVariant,
) -> Result<LossValue> {
    check_shapes(target, pred)?;
    check_unit(target, "target phase")?;
    check_unit(pred, "predicted phase")?;
    let n = target.len() as f64;
    let mut value = 0.0;
    let grad = Zip::from(target).and(pred).map_collect(|&t, &p| {
        let d = t - p;
        let direct = d.abs();
        // Second branch and its derivative with respect to `pred`.
        let (wrapped, dwrapped) = match variant {
            PhaseVariant::Symmetric => (1.0 - d.abs(), sign(d)),
            PhaseVariant::Literal => ((d - 1.0).abs(), -sign(d - 1.0)),
        };
        if direct < wrapped {
            value += direct;
            -sign(d) / n
        } else if wrapped < direct {
            value += wrapped;
            dwrapped / n
        } else {
            value += direct;
            0.0
        }
    });
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    pub scales: usize,
    pub scale_weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        let c2 = 0.03f64.powi(2);
        MsSsimConfig {
            scales: 3,
            scale_weights: vec![1.0 / 3.0; 3],
            window: 11,
            sigma: 1.5,
            c1: 0.01f64.powi(2),
            c2,
            c3: c2 / 2.0,
        }
    }
}

impl MsSsimConfig {
    pub fn single_scale() -> Self {
        MsSsimConfig {
            scales: 1,
            scale_weights: vec![1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.scale_weights.len() != self.scales {
            return Err(Error::Config(format!(
                "{} scale weights for {} scales",
                self.scale_weights.len(),
                self.scales
            )));
        }
        let sum: f64 = self.scale_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.scale_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("scale weights must be non-negative and sum to 1".into()));
        }
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Config("window size must be odd".into()));
        }
        if !(self.sigma > 0.0 && self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return Err(Error::Config("window sigma and stabilizers must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        g.into_iter().map(|v| v / total).collect()
    }

    /// Checks that every scale of an `h × w` map still covers the window.
    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let (mut h, mut w) = (h, w);
        for k in 1..=self.scales {
            if h < self.window || w < self.window {
                return Err(Error::Config(format!(
                    "MS-SSIM scale {k} is {h}x{w}, smaller than the {}x{} window; use at most {} scales",
                    self.window,
                    self.window,
                    k - 1
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }
}

/// Separable "valid" correlation with the Gaussian window.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let k = g.len();
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::zeros((h, ow));
    for j in 0..h {
        for i in 0..ow {
            let mut acc = 0.0;
            for (t, gt) in g.iter().enumerate() {
                acc += gt * img[[j, i + t]];
            }
            rows[[j, i]] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for j in 0..oh {
        for t in 0..k {
            let gt = g[t];
            let src = rows.row(j + t);
            let mut dst = out.row_mut(j);
            dst.scaled_add(gt, &src);
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads a valid-size map back onto the
/// input grid.
fn filter_adjoint(map: &Array2<f64>, g: &[f64], dim: (usize, usize)) -> Array2<f64> {
    let k = g.len();
    let (oh, ow) = map.dim();
    let mut rows = Array2::zeros((dim.0, ow));
    for j in 0..oh {
        for t in 0..k {
            let src = map.row(j);
            let mut dst = rows.row_mut(j + t);
            dst.scaled_add(g[t], &src);
        }
    }
    let mut out = Array2::zeros(dim);
    for j in 0..dim.0 {
        for i in 0..ow {
            let v = rows[[j, i]];
            for (t, gt) in g.iter().enumerate() {
                out[[j, i + t]] += gt * v;
            }
        }
    }
    out
}

/// 2×2 average pooling; a trailing odd row or column is dropped.
fn pool2(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(j, i)| {
        0.25 * (img[[2 * j, 2 * i]]
            + img[[2 * j + 1, 2 * i]]
            + img[[2 * j, 2 * i + 1]]
            + img[[2 * j + 1, 2 * i + 1]])
    })
}

fn pool2_adjoint(grad: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::zeros(dim);
    for ((j, i), g) in grad.indexed_iter() {
        let q = 0.25 * g;
        out[[2 * j, 2 * i]] += q;
        out[[2 * j + 1, 2 * i]] += q;
        out[[2 * j, 2 * i + 1]] += q;
        out[[2 * j + 1, 2 * i + 1]] += q;
    }
    out
}

/// Mean-pooled luminance, contrast and structure terms of one scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimComponents {
    pub l: f64,
    pub c: f64,
    pub s: f64,
}

/// Per-scale statistics together with the adjoint seeds needed for
/// gradients of each pooled term.
struct ScaleTerms {
    means: SsimComponents,
    // d(mean term)/d(local stat) maps: (dμ_pred, dE[pred²], dE[target·pred]).
    dl: [Array2<f64>; 3],
    dc: [Array2<f64>; 3],
    ds: [Array2<f64>; 3],
}

fn scale_terms(x: &Array2<f64>, y: &Array2<f64>, cfg: &MsSsimConfig, g: &[f64]) -> ScaleTerms {
    let mx = filter_valid(x, g);
    let my = filter_valid(y, g);
    let exx = filter_valid(&(x * x), g);
    let eyy = filter_valid(&(y * y), g);
    let exy = filter_valid(&(x * y), g);
    let dim = mx.dim();
    let p = mx.len() as f64;
    let (c1, c2, c3) = (cfg.c1, cfg.c2, cfg.c3);
    let mut sums = [0.0; 3];
    let mut dl = [Array2::zeros(dim), Array2::zeros(dim), Array2::zeros(dim)];
    let mut dc = dl.clone();
    let mut ds = dl.clone();
    for j in 0..dim.0 {
        for i in 0..dim.1 {
            let (ux, uy) = (mx[[j, i]], my[[j, i]]);
            let vx_raw = exx[[j, i]] - ux * ux;
            let vy_raw = eyy[[j, i]] - uy * uy;
            let cxy = exy[[j, i]] - ux * uy;
            let sx = (vx_raw.max(0.0) + VARIANCE_EPS).sqrt();
            let sy = (vy_raw.max(0.0) + VARIANCE_EPS).sqrt();
            let vx = sx * sx;
            let vy = sy * sy;
            // dσ_pred / dvar_pred, zero where the variance was clamped.
            let dsy = if vy_raw > 0.0 { 0.5 / sy } else { 0.0 };

            let ln = 2.0 * ux * uy + c1;
            let ld = ux * ux + uy * uy + c1;
            let l = ln / ld;
            let dl_du = 2.0 * ux / ld - ln * 2.0 * uy / (ld * ld);

            let cn = 2.0 * sx * sy + c2;
            let cd = vx + vy + c2;
            let c = cn / cd;
            let dc_dvar = 2.0 * sx * dsy / cd - cn * (2.0 * sy * dsy) / (cd * cd);

            let sn = cxy + c3;
            let sd = sx * sy + c3;
            let s = sn / sd;
            let ds_dcov = 1.0 / sd;
            let ds_dvar = -sn * sx * dsy / (sd * sd);

            sums[0] += l;
            sums[1] += c;
            sums[2] += s;

            // Chain from (μ, var, cov) to (μ, E[y²], E[xy]):
            // var = E[y²] − μ², cov = E[xy] − μx·μ.
            let put = |m: &mut [Array2<f64>; 3], d_mu: f64, d_var: f64, d_cov: f64| {
                m[0][[j, i]] = (d_mu - 2.0 * uy * d_var - ux * d_cov) / p;
                m[1][[j, i]] = d_var / p;
                m[2][[j, i]] = d_cov / p;
            };
            put(&mut dl, dl_du, 0.0, 0.0);
            put(&mut dc, 0.0, dc_dvar, 0.0);
            put(&mut ds, 0.0, ds_dvar, ds_dcov);
        }
    }
    ScaleTerms {
        means: SsimComponents {
            l: sums[0] / p,
            c: sums[1] / p,
            s: sums[2] / p,
        },
        dl,
        dc,
        ds,
    }
}

/// Gradient with respect to `y` of a pooled term, given its local-stat seeds.
fn pull_back(seeds: &[Array2<f64>; 3], x: &Array2<f64>, y: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let dim = y.dim();
    let a = filter_adjoint(&seeds[0], g, dim);
    let b = filter_adjoint(&seeds[1], g, dim);
    let c = filter_adjoint(&seeds[2], g, dim);
    a + &(2.0 * y * &b) + &(x * &c)
}

/// Luminance, contrast and structure terms of single-scale SSIM.
pub fn ssim_components(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    config: &MsSsimConfig,
) -> Result<SsimComponents> {
    check_shapes(target, pred)?;
    config.validate()?;
    let (h, w) = target.dim();
    if h < config.window || w < config.window {
        return Err(Error::Config(format!(
            "{h}x{w} map is smaller than the {}x{} window",
            config.window, config.window
        )));
    }
    Ok(scale_terms(target, pred, config, &config.taps()).means)
}

/// Multi-scale SSIM and its gradient with respect to `pred`.
///
/// Pooled terms are floored at a small positive value before
/// exponentiation; a floored term contributes no gradient.
pub fn ms_ssim(target: &Array2<f64>, pred: &Array2<f64>, config: &MsSsimConfig) -> Result<LossValue> {
    check_shapes(target, pred)?;
    config.validate()?;
    config.check_size(target.nrows(), target.ncols())?;
    let g = config.taps();
    let m = config.scales;
    let mut xs = vec![target.clone()];
    let mut ys = vec![pred.clone()];
    for _ in 1..m {
        let x = pool2(xs.last().unwrap());
        let y = pool2(ys.last().unwrap());
        xs.push(x);
        ys.push(y);
    }
    let terms: Vec<ScaleTerms> = (0..m).map(|k| scale_terms(&xs[k], &ys[k], config, &g)).collect();

    let floor = |v: f64| (v.max(POOLED_FLOOR), v > POOLED_FLOOR);
    let mut log_ms = 0.0;
    // Per scale: coefficient applied to the gradient of each pooled term.
    let mut coeffs = Vec::with_capacity(m);
    for (k, t) in terms.iter().enumerate() {
        let w = config.scale_weights[k];
        let (c, c_live) = floor(t.means.c);
        let (s, s_live) = floor(t.means.s);
        log_ms += w * (c.ln() + s.ln());
        let mut coef = [0.0, if c_live { w / c } else { 0.0 }, if s_live { w / s } else { 0.0 }];
        if k == m - 1 {
            let (l, l_live) = floor(t.means.l);
            log_ms += w * l.ln();
            coef[0] = if l_live { w / l } else { 0.0 };
        }
        coeffs.push(coef);
    }
    let value = log_ms.exp();

    let mut grad: Option<Array2<f64>> = None;
    for k in (0..m).rev() {
        let t = &terms[k];
        let [cl, cc, cs] = coeffs[k];
        let mut gk = Array2::zeros(ys[k].dim());
        for (coef, seeds) in [(cl, &t.dl), (cc, &t.dc), (cs, &t.ds)] {
            if coef != 0.0 {
                gk.scaled_add(value * coef, &pull_back(seeds, &xs[k], &ys[k], &g));
            }
        }
        if let Some(coarse) = grad.take() {
            gk += &pool2_adjoint(&coarse, ys[k].dim());
        }
        grad = Some(gk);
    }
    Ok(LossValue {
        value,
        grad: grad.unwrap(),
    })
}

/// `1 − MS-SSIM`.
pub fn ms_ssim_loss(target: &Array2<f64>, pred: &Array2<f64>, config: &MsSsimConfig) -> Result<LossValue> {
    let v = ms_ssim(target, pred, config)?;
    Ok(LossValue {
        value: 1.0 - v.value,
        grad: -v.grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_mag: f64,
    pub beta_mag: f64,
    pub alpha_phase: f64,
    pub beta_phase: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_mag: 1.0,
            beta_mag: 1.0,
            alpha_phase: 0.6,
            beta_phase: 0.4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_mag, self.beta_mag, self.alpha_phase, self.beta_phase];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.alpha_mag + self.beta_mag <= 0.0 || self.alpha_phase + self.beta_phase <= 0.0 {
            return Err(Error::Config("each composite needs a positive weight".into()));
        }
        Ok(())
    }
}

fn weighted(a: f64, first: Option<LossValue>, b: f64, second: Option<LossValue>, dim: (usize, usize)) -> LossValue {
    let mut out = LossValue {
        value: 0.0,
        grad: Array2::zeros(dim),
    };
    for (w, part) in [(a, first), (b, second)] {
        if let Some(p) = part {
            out.value += w * p.value;
            out.grad.scaled_add(w, &p.grad);
        }
    }
    out
}

/// `α·MAE + β·(1 − MS-SSIM)` on magnitude maps.
pub fn composite_mag(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    weights: &LossWeights,
    config: &MsSsimConfig,
) -> Result<LossValue> {
    weights.validate()?;
    let (a, b) = (weights.alpha_mag, weights.beta_mag);
    let first = if a > 0.0 { Some(mae(target, pred)?) } else { None };
    let second = if b > 0.0 { Some(ms_ssim_loss(target, pred, config)?) } else { None };
    Ok(weighted(a, first, b, second, target.dim()))
}

/// `α·L_pp + β·(1 − MS-SSIM)` on normalized phase maps.
pub fn composite_phase(
    target: &Array2<f64>,
    pred: &Array2<f64>,
    weights: &LossWeights,
    config: &MsSsimConfig,
    variant: PhaseVariant,
) -> Result<LossValue> {
    weights.validate()?;
    let (a, b) = (weights.alpha_phase, weights.beta_phase);
    let first = if a > 0.0 { Some(periodic_phase_loss(target, pred, variant)?) } else { None };
    let second = if b > 0.0 { Some(ms_ssim_loss(target, pred, config)?) } else { None };
    Ok(weighted(a, first, b, second, target.dim()))
}

/// Training objective for one channel kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ChannelKind,
    pub weights: LossWeights,
    pub ms_ssim: MsSsimConfig,
    pub phase_variant: PhaseVariant,
}

impl Objective {
    pub fn new(kind: ChannelKind) -> Self {
        Objective {
            kind,
            weights: LossWeights::default(),
            ms_ssim: MsSsimConfig::default(),
            phase_variant: PhaseVariant::default(),
        }
    }

    pub fn eval(&self, target: &Array2<f64>, pred: &Array2<f64>) -> Result<LossValue> {
        match self.kind {
            ChannelKind::Magnitude => composite_mag(target, pred, &self.weights, &self.ms_ssim),
            ChannelKind::Phase => {
                composite_phase(target, pred, &self.weights, &self.ms_ssim, self.phase_variant)
            }
        }
    }

    /// Per-map error used for method comparison: MAE for magnitude, the
    /// periodic loss for phase.
    pub fn pixel_error(kind: ChannelKind, target: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
        match kind {
            ChannelKind::Magnitude => Ok(mae(target, pred)?.value),
            ChannelKind::Phase => Ok(periodic_phase_loss(target, pred, PhaseVariant::Symmetric)?.value),
        }
    }
}

/// Central-difference gradient of `f` at `x`, for audits.
pub fn numeric_gradient<F>(x: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut probe = x.clone();
    let mut out = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (j, i) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[j, i]];
        probe[[j, i]] = orig + h;
        let up = f(&probe);
        probe[[j, i]] = orig - h;
        let down = f(&probe);
        probe[[j, i]] = orig;
        out[[j, i]] = (up - down) / (2.0 * h);
    }
    out
}

/// Smooth bumps plus a little texture, all values inside `[0, 1]`.
pub fn random_test_map(h: usize, w: usize, seed: u64) -> Array2<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(2.0..(h.max(w) as f64 / 2.0).max(2.5)),
                rng.random_range(-0.4..0.4),
            )
        })
        .collect();
    let mut out = Array2::from_shape_fn((h, w), |(j, i)| {
        let mut v = 0.5;
        for &(cx, cy, r, a) in &bumps {
            let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
            v += a * (-d2 / (2.0 * r * r)).exp();
        }
        v
    });
    out.mapv_inplace(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.02, 0.98));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use proptest::prelude::*;

    fn full(h: usize, w: usize, v: f64) -> Array2<f64> {
        Array2::from_elem((h, w), v)
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn mae_values() {
        let a = random_test_map(8, 8, 1);
        assert_eq!(mae(&a, &a).unwrap().value, 0.0);
        assert!((mae(&full(4, 4, 0.5), &full(4, 4, 0.25)).unwrap().value - 0.25).abs() < 1e-15);
        assert!(mae(&full(4, 4, 0.5), &full(4, 5, 0.5)).is_err());
    }

    #[test]
    fn mae_gradient_matches_differences() {
        let t = random_test_map(16, 16, 2);
        let p = random_test_map(16, 16, 3);
        assert!(t.iter().zip(p.iter()).all(|(a, b)| (a - b).abs() > 1e-4));
        let g = mae(&t, &p).unwrap().grad;
        let n = numeric_gradient(&p, 1e-6, |q| mae(&t, q).unwrap().value);
        let err = g.iter().zip(n.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn ssim_component_identities() {
        let cfg = MsSsimConfig::single_scale();
        let y = random_test_map(24, 24, 4);
        let same = ssim_components(&y, &y, &cfg).unwrap();
        for v in [same.l, same.c, same.s] {
            assert!((v - 1.0).abs() < 1e-9, "{same:?}");
        }
        let shifted = y.mapv(|v| v + 0.1);
        let sh = ssim_components(&y, &shifted, &cfg).unwrap();
        assert!((sh.c - 1.0).abs() < 1e-9 && (sh.s - 1.0).abs() < 1e-9, "{sh:?}");
        assert!(sh.l < 1.0);

        // Local structure term on the inverted map is negative on textured
        // regions; the pooled value is too.
        let inv = y.mapv(|v| 1.0 - v);
        let g = cfg.taps();
        let t = scale_terms(&y, &inv, &cfg, &g);
        assert!(t.means.s < 0.0);
        assert!(ssim_components(&full(8, 8, 0.5), &full(8, 8, 0.5), &cfg).is_err());
    }

    #[test]
    fn ms_ssim_identities() {
        let cfg = MsSsimConfig::default();
        let y = random_test_map(48, 48, 5);
        let v = ms_ssim(&y, &y, &cfg).unwrap();
        assert!((v.value - 1.0).abs() < 1e-9);
        assert!(ms_ssim_loss(&y, &y, &cfg).unwrap().value.abs() < 1e-9);

        let single = MsSsimConfig::single_scale();
        let z = random_test_map(48, 48, 6);
        let c = ssim_components(&y, &z, &single).unwrap();
        let m = ms_ssim(&y, &z, &single).unwrap().value;
        assert!((m - c.l * c.c * c.s.max(POOLED_FLOOR)).abs() < 1e-12);
    }

    #[test]
    fn too_many_scales_names_the_scale() {
        let cfg = MsSsimConfig {
            scales: 5,
            scale_weights: vec![0.2; 5],
            ..MsSsimConfig::default()
        };
        let y = random_test_map(86, 86, 1);
        let err = ms_ssim(&y, &y, &cfg).unwrap_err().to_string();
        assert!(err.contains("scale 4"), "{err}");
        assert!(MsSsimConfig::default().check_size(86, 86).is_ok());
    }

    #[test]
    fn ms_ssim_gradient_matches_differences() {
        let cfg = MsSsimConfig::default();
        let t = random_test_map(48, 48, 7);
        let p = random_test_map(48, 48, 8);
        let g = ms_ssim(&t, &p, &cfg).unwrap().grad;
        let n = numeric_gradient(&p, 1e-4, |q| ms_ssim(&t, q, &cfg).unwrap().value);
        let err = max_rel(&g, &n);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn filter_adjoint_is_transpose() {
        let g = MsSsimConfig::default().taps();
        let a = random_test_map(20, 17, 9);
        let b = random_test_map(10, 7, 10);
        let lhs: f64 = (filter_valid(&a, &g) * &b).sum();
        let rhs: f64 = (&a * &filter_adjoint(&b, &g, a.dim())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let c = random_test_map(9, 11, 11);
        let d = random_test_map(4, 5, 12);
        let lhs: f64 = (pool2(&c) * &d).sum();
        let rhs: f64 = (&c * &pool2_adjoint(&d, c.dim())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn phase_loss_hand_values() {
        let hi = full(4, 4, 0.99);
        let lo = full(4, 4, 0.01);
        let sym = PhaseVariant::Symmetric;
        let lit = PhaseVariant::Literal;
        assert!((periodic_phase_loss(&hi, &lo, sym).unwrap().value - 0.02).abs() < 1e-12);
        assert!((periodic_phase_loss(&hi, &lo, lit).unwrap().value - 0.02).abs() < 1e-12);
        assert!((periodic_phase_loss(&lo, &hi, sym).unwrap().value - 0.02).abs() < 1e-12);
        assert!((periodic_phase_loss(&lo, &hi, lit).unwrap().value - 0.98).abs() < 1e-12);
        assert_eq!(periodic_phase_loss(&hi, &hi, sym).unwrap().value, 0.0);
        assert!(periodic_phase_loss(&full(2, 2, 1.2), &hi.slice(s![..2, ..2]).to_owned(), sym).is_err());
        // The boundary pair {0, 1} is the same point on the circle.
        assert_eq!(periodic_phase_loss(&full(2, 2, 0.0), &full(2, 2, 1.0), sym).unwrap().value, 0.0);
    }

    #[test]
    fn phase_loss_gradients() {
        for variant in [PhaseVariant::Symmetric, PhaseVariant::Literal] {
            let t = random_test_map(16, 16, 13);
            let p = random_test_map(16, 16, 14).mapv(|v| (v + 0.45) % 1.0);
            let g = periodic_phase_loss(&t, &p, variant).unwrap().grad;
            let n = numeric_gradient(&p, 1e-7, |q| periodic_phase_loss(&t, q, variant).unwrap().value);
            let err = g.iter().zip(n.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-6, "{variant:?}: {err}");
        }
    }

    #[test]
    fn composites() {
        let cfg = MsSsimConfig::default();
        let t = random_test_map(48, 48, 15);
        let p = random_test_map(48, 48, 16);
        let w = LossWeights::default();
        assert!(composite_mag(&t, &t, &w, &cfg).unwrap().value.abs() < 1e-9);
        let mae_only = LossWeights { beta_mag: 0.0, ..w };
        assert_eq!(composite_mag(&t, &p, &mae_only, &cfg).unwrap(), mae(&t, &p).unwrap());
        let both = composite_mag(&t, &p, &w, &cfg).unwrap().value;
        let parts = mae(&t, &p).unwrap().value + 1.0 - ms_ssim(&t, &p, &cfg).unwrap().value;
        assert!((both - parts).abs() < 1e-9);

        let sym = PhaseVariant::Symmetric;
        let pp_only = LossWeights { alpha_phase: 1.0, beta_phase: 0.0, ..w };
        assert_eq!(
            composite_phase(&t, &p, &pp_only, &cfg, sym).unwrap(),
            periodic_phase_loss(&t, &p, sym).unwrap()
        );
        assert!(composite_phase(&t, &t, &w, &cfg, sym).unwrap().value.abs() < 1e-9);
        let mix = composite_phase(&t, &p, &w, &cfg, sym).unwrap().value;
        let parts = 0.6 * periodic_phase_loss(&t, &p, sym).unwrap().value
            + 0.4 * (1.0 - ms_ssim(&t, &p, &cfg).unwrap().value);
        assert!((mix - parts).abs() < 1e-9);
        assert!(LossWeights { alpha_mag: -1.0, ..w }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_phase_loss_is_a_metric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let l = |x: f64, y: f64| periodic_phase_loss(&full(1, 1, x), &full(1, 1, y), PhaseVariant::Symmetric).unwrap().value;
            prop_assert!(l(a, b) >= 0.0);
            prop_assert!((l(a, b) - l(b, a)).abs() < 1e-15);
            prop_assert!(l(a, c) <= l(a, b) + l(b, c) + 1e-12);
        }

        #[test]
        fn ms_ssim_in_unit_interval(s1 in 0u64..1000, s2 in 0u64..1000) {
            let v = ms_ssim(&random_test_map(48, 48, s1), &random_test_map(48, 48, s2), &MsSsimConfig::default()).unwrap().value;
            prop_assert!(v > 0.0 && v <= 1.0 + 1e-12);
        }
    }
}
