//! Studies over synthetic scenes: restored-map metrics, end-to-end far-field
//! agreement, method and factor comparisons, magnitude/phase error
//! attribution and noise sweeps, plus CSV and SVG report output.
//!
//! Restored-map metrics are computed on normalized `[0, 1]` maps and average
//! the x and y field components of a scene.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{bicubic_upsample, cs_reconstruct, kriging_upsample, CsConfig, VariogramModel};
use crate::dataio::{add_noise, channel_maps, combine_channels, downsample, ChannelKind, ChannelMap, Dataset};
use crate::error::{Error, Result};
use crate::fieldsynth::{analytic_farfield, synthesize_nearfield, AntennaScene, FieldMap, GridSpec};
use crate::losses::{mae, ms_ssim, periodic_phase_loss, MsSsimConfig, PhaseVariant};
use crate::neuralnet::{self, NetParams};
use crate::nf2ff::{
    extract_cut, pattern_error, principal_axes, principal_cuts, CutPlane, PatternCut, Polarization,
    DEFAULT_ERROR_FLOOR_DB, DEFAULT_PAD_FACTOR,
};

/// Lowest level drawn in pattern plots.
pub const PLOT_FLOOR_DB: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    NfsNet,
    Bicubic,
    Kriging,
    Cs,
    /// Ground-truth full-grid maps; the pipeline's discretization floor.
    Identity,
}

impl Method {
    pub const RESTORING: [Method; 4] = [Method::NfsNet, Method::Bicubic, Method::Kriging, Method::Cs];

    pub fn name(self) -> &'static str {
        match self {
            Method::NfsNet => "nfsnet",
            Method::Bicubic => "bicubic",
            Method::Kriging => "kriging",
            Method::Cs => "cs",
            Method::Identity => "identity",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nfsnet" | "nfs-net" | "net" => Ok(Method::NfsNet),
            "bicubic" => Ok(Method::Bicubic),
            "kriging" => Ok(Method::Kriging),
            "cs" => Ok(Method::Cs),
            "identity" => Ok(Method::Identity),
            _ => Err(Error::Config(format!(
                "unknown method '{s}' (expected nfsnet, bicubic, kriging, cs or identity)"
            ))),
        }
    }
}

/// Everything the restoration methods need besides the maps.
#[derive(Debug, Clone, Default)]
pub struct Restorer {
    pub magnitude_net: Option<NetParams<f32>>,
    pub phase_net: Option<NetParams<f32>>,
    /// Fixed Kriging variogram; fitted per map when absent.
    pub variogram: Option<VariogramModel>,
    pub cs: CsConfig,
}

impl Restorer {
    /// Loads the two parameter bundles and checks their channel kinds.
    pub fn with_networks(magnitude: &Path, phase: &Path) -> Result<Self> {
        let load = |dir: &Path, want: ChannelKind| -> Result<NetParams<f32>> {
            let (net, kind) = neuralnet::load_params(dir, None)?;
            match kind {
                Some(k) if k != want => Err(Error::Config(format!(
                    "{} holds a {k:?} network, expected {want:?}",
                    dir.display()
                ))),
                _ => Ok(net),
            }
        };
        Ok(Restorer {
            magnitude_net: Some(load(magnitude, ChannelKind::Magnitude)?),
            phase_net: Some(load(phase, ChannelKind::Phase)?),
            ..Restorer::default()
        })
    }

    fn net(&self, kind: ChannelKind) -> Result<&NetParams<f32>> {
        let net = match kind {
            ChannelKind::Magnitude => self.magnitude_net.as_ref(),
            ChannelKind::Phase => self.phase_net.as_ref(),
        };
        net.ok_or_else(|| Error::Config(format!("no trained {kind:?} network loaded")))
    }

    /// Restores one decimated map to `target × target` samples. The identity
    /// method returns `high`, which it requires.
    pub fn restore_map(
        &self,
        method: Method,
        low: &ChannelMap,
        high: Option<&ChannelMap>,
        factor: usize,
        target: usize,
    ) -> Result<ChannelMap> {
        let out = match method {
            Method::Identity => high
                .cloned()
                .ok_or_else(|| Error::Config("the identity method needs the full-grid map".into()))?,
            Method::Bicubic => bicubic_upsample(low, factor, target)?,
            Method::Kriging => kriging_upsample(low, factor, target, self.variogram)?,
            Method::Cs => cs_reconstruct(low, factor, target, &self.cs)?.map,
            Method::NfsNet => {
                let net = self.net(low.kind)?;
                if net.config.in_size != target {
                    return Err(Error::Shape(format!(
                        "network restores {0}x{0} maps, pipeline needs {target}x{target}",
                        net.config.in_size
                    )));
                }
                neuralnet::restore(net, &[low], factor)?.remove(0)
            }
        };
        if out.dim() != (target, target) {
            return Err(Error::Shape(format!("{method} returned {:?}", out.dim())));
        }
        Ok(out)
    }
}

/// Normalized magnitude and phase maps of both tangential components,
/// indexed `[component][kind]` with x before y and magnitude before phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub maps: [[ChannelMap; 2]; 2],
}

impl ChannelSet {
    pub fn from_field(field: &FieldMap) -> Result<Self> {
        let (xm, xp) = channel_maps(&field.ex)?;
        let (ym, yp) = channel_maps(&field.ey)?;
        Ok(ChannelSet {
            maps: [[xm, xp], [ym, yp]],
        })
    }

    pub fn map(&self, kind: ChannelKind) -> [&ChannelMap; 2] {
        let k = kind_index(kind);
        [&self.maps[0][k], &self.maps[1][k]]
    }

    fn try_map(&self, mut f: impl FnMut(&ChannelMap) -> Result<ChannelMap>) -> Result<Self> {
        let [[a, b], [c, d]] = &self.maps;
        Ok(ChannelSet {
            maps: [[f(a)?, f(b)?], [f(c)?, f(d)?]],
        })
    }

    pub fn downsample(&self, factor: usize) -> Result<Self> {
        self.try_map(|m| downsample(m, factor))
    }

    /// Magnitude from `self`, phase from `other`.
    pub fn mix(&self, other: &ChannelSet) -> ChannelSet {
        let [[xm, _], [ym, _]] = &self.maps;
        let [[_, xp], [_, yp]] = &other.maps;
        ChannelSet {
            maps: [[xm.clone(), xp.clone()], [ym.clone(), yp.clone()]],
        }
    }

    /// Denormalizes and recombines into a complex near-field map.
    pub fn to_field(&self, grid: GridSpec) -> Result<FieldMap> {
        let [[xm, xp], [ym, yp]] = &self.maps;
        FieldMap::new(grid, combine_channels(xm, xp)?, combine_channels(ym, yp)?)
    }
}

fn kind_index(kind: ChannelKind) -> usize {
    match kind {
        ChannelKind::Magnitude => 0,
        ChannelKind::Phase => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub factor: usize,
    pub pad_factor: usize,
    /// Pattern error counts samples where either cut is at or above this.
    pub floor_db: f64,
    /// Second floor reported alongside, to show sensitivity to the choice.
    pub alt_floor_db: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            factor: 3,
            pad_factor: DEFAULT_PAD_FACTOR,
            floor_db: DEFAULT_ERROR_FLOOR_DB,
            alt_floor_db: -40.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.factor, 2 | 3) {
            return Err(Error::Config(format!("factor must be 2 or 3, got {}", self.factor)));
        }
        if self.pad_factor == 0 {
            return Err(Error::Config("pad factor must be positive".into()));
        }
        if !(self.floor_db < 0.0 && self.alt_floor_db < 0.0) {
            return Err(Error::Config("pattern error floors must be negative dB levels".into()));
        }
        Ok(())
    }
}

/// E- and H-plane pattern errors in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternErrors {
    pub e_plane: f64,
    pub h_plane: f64,
    pub e_plane_alt: f64,
    pub h_plane_alt: f64,
}

impl PatternErrors {
    /// Mean of the two planes at the main floor.
    pub fn mean(&self) -> f64 {
        0.5 * (self.e_plane + self.h_plane)
    }

    pub fn mean_alt(&self) -> f64 {
        0.5 * (self.e_plane_alt + self.h_plane_alt)
    }
}

/// Analytic E- and H-plane cuts of a scene at 1° resolution.
pub fn reference_cuts(scene: &AntennaScene, polarization: Polarization) -> Result<(PatternCut, PatternCut)> {
    let (theta, phi) = principal_axes(1.0);
    let ff = analytic_farfield(scene, &theta, &phi)?;
    Ok((
        extract_cut(&ff, CutPlane::E, polarization)?,
        extract_cut(&ff, CutPlane::H, polarization)?,
    ))
}

struct Scored {
    cuts: (PatternCut, PatternCut),
    errors: PatternErrors,
}

fn score(
    set: &ChannelSet,
    grid: GridSpec,
    reference: &(PatternCut, PatternCut),
    polarization: Polarization,
    cfg: &PipelineConfig,
) -> Result<Scored> {
    let field = set.to_field(grid).map_err(|e| e.in_stage("recombine"))?;
    let cuts = principal_cuts(&field, cfg.pad_factor, polarization).map_err(|e| e.in_stage("nf2ff"))?;
    let err = |a: &PatternCut, b: &PatternCut, floor| pattern_error(a, b, floor).map_err(|e| e.in_stage("compare"));
    let errors = PatternErrors {
        e_plane: err(&cuts.0, &reference.0, cfg.floor_db)?,
        h_plane: err(&cuts.1, &reference.1, cfg.floor_db)?,
        e_plane_alt: err(&cuts.0, &reference.0, cfg.alt_floor_db)?,
        h_plane_alt: err(&cuts.1, &reference.1, cfg.alt_floor_db)?,
    };
    Ok(Scored { cuts, errors })
}

/// Restored-map agreement with the full-grid truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMetrics {
    pub mag_mae: f64,
    pub phase_lpp: f64,
    pub mag_ms_ssim: f64,
    pub phase_ms_ssim: f64,
}

impl MapMetrics {
    pub fn between(truth: &ChannelSet, restored: &ChannelSet) -> Result<Self> {
        let ssim = MsSsimConfig::default();
        let mut m = MapMetrics {
            mag_mae: 0.0,
            phase_lpp: 0.0,
            mag_ms_ssim: 0.0,
            phase_ms_ssim: 0.0,
        };
        for c in 0..2 {
            let [tm, tp] = &truth.maps[c];
            let [rm, rp] = &restored.maps[c];
            m.mag_mae += 0.5 * mae(&tm.values, &rm.values)?.value;
            m.phase_lpp += 0.5 * periodic_phase_loss(&tp.values, &rp.values, PhaseVariant::Symmetric)?.value;
            m.mag_ms_ssim += 0.5 * ms_ssim(&tm.values, &rm.values, &ssim)?.value;
            m.phase_ms_ssim += 0.5 * ms_ssim(&tp.values, &rp.values, &ssim)?.value;
        }
        Ok(m)
    }
}

/// Result of one scene through the full pipeline.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub method: Method,
    pub polarization: Polarization,
    pub truth: ChannelSet,
    pub restored: ChannelSet,
    pub cuts: (PatternCut, PatternCut),
    pub reference: (PatternCut, PatternCut),
    pub errors: PatternErrors,
}

impl EndToEnd {
    pub fn pattern_error(&self) -> f64 {
        self.errors.mean()
    }

    pub fn map_metrics(&self) -> Result<MapMetrics> {
        MapMetrics::between(&self.truth, &self.restored)
    }
}

/// Restores a decimated complex near-field map onto `size × size` samples
/// at `1/factor` of its spacing. Normalization constants come from the
/// decimated samples themselves.
pub fn restore_field(
    low: &FieldMap,
    factor: usize,
    size: usize,
    method: Method,
    restorer: &Restorer,
) -> Result<FieldMap> {
    if method == Method::Identity {
        return Err(Error::Config("the identity method has nothing to restore from".into()));
    }
    if low.grid.nx != size.div_ceil(factor.max(1)) || low.grid.ny != low.grid.nx {
        return Err(Error::Shape(format!(
            "{}x{} map cannot come from a {size}-sample grid decimated by {factor}",
            low.grid.nx, low.grid.ny
        )));
    }
    let lows = ChannelSet::from_field(low).map_err(|e| e.in_stage("normalize"))?;
    let restored = lows.try_map(|m| {
        restorer
            .restore_map(method, m, None, factor, size)
            .map_err(|e| e.in_stage("restore"))
    })?;
    let grid = GridSpec::new(
        size,
        size,
        low.grid.dx / factor as f64,
        low.grid.dy / factor as f64,
        low.grid.z_d,
        low.grid.freq_hz,
    )?;
    restored.to_field(grid)
}

/// Optional measurement noise, added to the full-grid field before
/// normalization and decimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub snr_db: f64,
    pub seed: u64,
}

/// Synthesize, normalize, decimate, restore, recombine, transform and
/// compare one scene against its analytic far field.
pub fn end_to_end(
    scene: &AntennaScene,
    grid: &GridSpec,
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
    noise: Option<Noise>,
) -> Result<EndToEnd> {
    let near = synthesize_nearfield(scene, grid).map_err(|e| e.in_stage("synthesize"))?;
    end_to_end_from(scene, &near, method, restorer, cfg, noise)
}

/// [`end_to_end`] on an already synthesized near field.
pub fn end_to_end_from(
    scene: &AntennaScene,
    near: &FieldMap,
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
    noise: Option<Noise>,
) -> Result<EndToEnd> {
    cfg.validate()?;
    let polarization = scene.dominant_polarization();
    let reference = reference_cuts(scene, polarization).map_err(|e| e.in_stage("reference"))?;
    let truth = prepare_truth(near, noise)?;
    let restored = restore_set(&truth, method, restorer, cfg.factor)?;
    let scored = score(&restored, near.grid, &reference, polarization, cfg)?;
    Ok(EndToEnd {
        method,
        polarization,
        truth,
        restored,
        cuts: scored.cuts,
        reference,
        errors: scored.errors,
    })
}

fn prepare_truth(near: &FieldMap, noise: Option<Noise>) -> Result<ChannelSet> {
    let noisy;
    let field = match noise {
        Some(n) => {
            noisy = add_noise(near, n.snr_db, n.seed).map_err(|e| e.in_stage("noise"))?;
            &noisy
        }
        None => near,
    };
    ChannelSet::from_field(field).map_err(|e| e.in_stage("normalize"))
}

fn restore_set(truth: &ChannelSet, method: Method, restorer: &Restorer, factor: usize) -> Result<ChannelSet> {
    if method == Method::Identity {
        return Ok(truth.clone());
    }
    let lows = truth.downsample(factor).map_err(|e| e.in_stage("downsample"))?;
    let target = truth.maps[0][0].dim().0;
    let mut out = lows.clone();
    for c in 0..2 {
        for k in 0..2 {
            out.maps[c][k] = restorer
                .restore_map(method, &lows.maps[c][k], None, factor, target)
                .map_err(|e| e.in_stage("restore"))?;
        }
    }
    Ok(out)
}

/// Pattern errors for the four ground-truth/restored combinations of
/// magnitude and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub gm_gp: f64,
    pub gm_rp: f64,
    pub rm_gp: f64,
    pub rm_rp: f64,
}

pub fn error_attribution(
    scene: &AntennaScene,
    near: &FieldMap,
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
) -> Result<Attribution> {
    cfg.validate()?;
    let polarization = scene.dominant_polarization();
    let reference = reference_cuts(scene, polarization).map_err(|e| e.in_stage("reference"))?;
    let truth = prepare_truth(near, None)?;
    let restored = restore_set(&truth, method, restorer, cfg.factor)?;
    let run = |set: &ChannelSet| -> Result<f64> {
        Ok(score(set, near.grid, &reference, polarization, cfg)?.errors.mean())
    };
    Ok(Attribution {
        gm_gp: run(&truth)?,
        gm_rp: run(&truth.mix(&restored))?,
        rm_gp: run(&restored.mix(&truth))?,
        rm_rp: run(&restored)?,
    })
}

/// Pattern error per SNR. All levels share one noise realization, scaled.
pub fn snr_sweep(
    scene: &AntennaScene,
    near: &FieldMap,
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
    snrs_db: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    snrs_db
        .iter()
        .map(|&snr_db| {
            let r = end_to_end_from(scene, near, method, restorer, cfg, Some(Noise { snr_db, seed }))?;
            Ok((snr_db, r.pattern_error()))
        })
        .collect()
}

/// One report cell: a scene through one method at one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene: usize,
    pub method: Method,
    pub factor: usize,
    pub outcome: std::result::Result<(MapMetrics, PatternErrors), String>,
}

impl EvalRow {
    pub fn pattern_error(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|(_, p)| p.mean())
    }

    pub fn metrics(&self) -> Option<&MapMetrics> {
        self.outcome.as_ref().ok().map(|(m, _)| m)
    }
}

pub const REPORT_COLUMNS: &str = "scene,method,factor,mag_mae,phase_lpp,mag_ms_ssim,phase_ms_ssim,\
e_plane_db,h_plane_db,pattern_db,floor_db,pattern_db_alt,alt_floor_db,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// CSV with `#` comment lines describing the averaging protocol.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        s.push_str("# map metrics on normalized [0,1] maps, averaged over the x and y components of each scene\n");
        s.push_str("# pattern_db is the mean of the E- and H-plane errors against the analytic far field\n");
        s.push_str(REPORT_COLUMNS);
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},", r.scene, r.method, r.factor);
            match &r.outcome {
                Ok((m, p)) => {
                    let _ = writeln!(
                        s,
                        "{:.9e},{:.9e},{:.9e},{:.9e},{:.6},{:.6},{:.6},{},{:.6},{},ok",
                        m.mag_mae,
                        m.phase_lpp,
                        m.mag_ms_ssim,
                        m.phase_ms_ssim,
                        p.e_plane,
                        p.h_plane,
                        p.mean(),
                        c.floor_db,
                        p.mean_alt(),
                        c.alt_floor_db
                    );
                }
                Err(msg) => {
                    let msg = msg.replace([',', '\n'], ";");
                    let _ = writeln!(s, ",,,,,,,{},,{},failed: {msg}", c.floor_db, c.alt_floor_db);
                }
            }
        }
        s
    }

    /// Mean pattern error of one method and factor over its successful rows.
    pub fn mean_pattern_error(&self, method: Method, factor: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.factor == factor)
            .filter_map(EvalRow::pattern_error)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn row(&self, scene: usize, method: Method, factor: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.scene == scene && r.method == method && r.factor == factor)
    }

    /// Every (scene, method, factor) combination has a row.
    pub fn is_complete(&self, scenes: &[usize], methods: &[Method], factors: &[usize]) -> bool {
        scenes.iter().all(|&s| {
            methods
                .iter()
                .all(|&m| factors.iter().all(|&f| self.row(s, m, f).is_some()))
        })
    }

    /// `method,factor,mean_pattern_db,failed` per combination present.
    pub fn summary_csv(&self) -> String {
        let mut keys: Vec<(Method, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.factor)) {
                keys.push((r.method, r.factor));
            }
        }
        let mut s = String::from("method,factor,mean_pattern_db,failed\n");
        for (m, f) in keys {
            let failed = self
                .rows
                .iter()
                .filter(|r| r.method == m && r.factor == f && r.outcome.is_err())
                .count();
            let mean = self.mean_pattern_error(m, f).map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{m},{f},{mean},{failed}");
        }
        s
    }
}

/// Runs every scene through every method at every factor. Failures are
/// recorded in the row rather than aborting the study.
pub fn compare(
    dataset: &Dataset,
    scenes: &[usize],
    methods: &[Method],
    factors: &[usize],
    restorer: &Restorer,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    compare_with(dataset, scenes, methods, factors, restorer, cfg, |_, _, _| {})
}

/// [`compare`], handing every successful pipeline run to `inspect` along
/// with its scene index and factor.
pub fn compare_with(
    dataset: &Dataset,
    scenes: &[usize],
    methods: &[Method],
    factors: &[usize],
    restorer: &Restorer,
    cfg: &PipelineConfig,
    mut inspect: impl FnMut(usize, usize, &EndToEnd),
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(scenes.len() * methods.len() * factors.len());
    for &s in scenes {
        let (scene, near) = dataset.scene_field(s)?;
        for &factor in factors {
            let c = PipelineConfig { factor, ..*cfg };
            for &method in methods {
                let outcome = end_to_end_from(&scene, &near, method, restorer, &c, None)
                    .and_then(|r| {
                        inspect(s, factor, &r);
                        Ok((r.map_metrics()?, r.errors))
                    })
                    .map_err(|e| {
                        log::warn!("scene {s} {method} factor {factor}: {e}");
                        e.to_string()
                    });
                rows.push(EvalRow {
                    scene: s,
                    method,
                    factor,
                    outcome,
                });
            }
        }
        log::info!("evaluated scene {s}");
    }
    Ok(EvalReport { config: *cfg, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub scene: usize,
    pub errors: Attribution,
}

pub fn attribution_study(
    dataset: &Dataset,
    scenes: &[usize],
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
) -> Result<Vec<AttributionRow>> {
    scenes
        .iter()
        .map(|&s| {
            let (scene, near) = dataset.scene_field(s)?;
            Ok(AttributionRow {
                scene: s,
                errors: error_attribution(&scene, &near, method, restorer, cfg)?,
            })
        })
        .collect()
}

pub fn attribution_csv(rows: &[AttributionRow]) -> String {
    let mut s = String::from("scene,gm_gp,gm_rp,rm_gp,rm_rp\n");
    for r in rows {
        let e = &r.errors;
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{:.6}", r.scene, e.gm_gp, e.gm_rp, e.rm_gp, e.rm_rp);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub mean_pattern_db: f64,
    pub scenes: usize,
}

/// Scene-averaged pattern error per SNR level. Scene `s` uses noise seed
/// `seed + s`.
pub fn snr_study(
    dataset: &Dataset,
    scenes: &[usize],
    method: Method,
    restorer: &Restorer,
    cfg: &PipelineConfig,
    snrs_db: &[f64],
    seed: u64,
) -> Result<Vec<SnrRow>> {
    if scenes.is_empty() || snrs_db.is_empty() {
        return Err(Error::Config("the SNR study needs at least one scene and one level".into()));
    }
    let mut sums = vec![0.0; snrs_db.len()];
    for &s in scenes {
        let (scene, near) = dataset.scene_field(s)?;
        let sweep = snr_sweep(&scene, &near, method, restorer, cfg, snrs_db, seed.wrapping_add(s as u64))?;
        for (acc, (_, e)) in sums.iter_mut().zip(sweep) {
            *acc += e;
        }
    }
    Ok(snrs_db
        .iter()
        .zip(sums)
        .map(|(&snr_db, sum)| SnrRow {
            snr_db,
            mean_pattern_db: sum / scenes.len() as f64,
            scenes: scenes.len(),
        })
        .collect())
}

pub fn snr_csv(rows: &[SnrRow]) -> String {
    let mut s = String::from("snr_db,mean_pattern_db,scenes\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{}", r.snr_db, r.mean_pattern_db, r.scenes);
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Self-contained SVG overlay of pattern cuts, levels clamped at
/// [`PLOT_FLOOR_DB`].
pub fn overlay_svg(title: &str, series: &[(&str, &PatternCut)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |deg: f64| left + (deg.clamp(-90.0, 90.0) + 90.0) / 180.0 * pw;
    let y_of = |db: f64| top + (-db.clamp(PLOT_FLOOR_DB, 0.0)) / -PLOT_FLOOR_DB * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    for deg in (-90..=90).step_by(30) {
        let x = x_of(deg as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{deg}</text>"##,
            top + ph,
            top + ph + 16.0
        );
    }
    for db in (PLOT_FLOOR_DB as i32..=0).step_by(10) {
        let y = y_of(db as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{db}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">angle (deg)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">level (dB)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, cut)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = cut
            .angle_axis
            .iter()
            .zip(&cut.level_db)
            .filter(|(a, _)| a.abs() <= 90.0)
            .map(|(a, l)| format!("{:.2},{:.2}", x_of(*a), y_of(*l)))
            .collect();
        let dash = if i == 0 { "" } else { r#" stroke-dasharray="6 3""# };
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + pw - 150.0,
            left + pw - 120.0,
            left + pw - 114.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
