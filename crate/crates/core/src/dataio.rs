//! Training pairs: normalized channel maps, 3×3 (or 2×2) decimation,
//! rotation augmentation, receiver-noise injection and dataset bundles.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, ArrayRef, BlobWriter};
use crate::error::{Error, Result};
use crate::fieldsynth::{random_scene, synthesize_nearfield, FieldMap, GridSpec, SceneProfile};

pub const DATASET_FORMAT: &str = "nfsnet-dataset";
pub const FIELD_MAP_FORMAT: &str = "nfsnet-fieldmap";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Magnitude,
    Phase,
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mag" | "magnitude" => Ok(ChannelKind::Magnitude),
            "phase" => Ok(ChannelKind::Phase),
            _ => Err(Error::Config(format!(
                "unknown channel '{s}' (expected mag or phase)"
            ))),
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::Magnitude => "mag",
            ChannelKind::Phase => "phase",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldComponent {
    Ex,
    Ey,
}

/// Affine map back to physical magnitude: `raw = value·scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Denorm {
    pub offset: f64,
    pub scale: f64,
}

/// One real channel normalized to `[0, 1]`.
///
/// Phase channels are fixed affinely, `[−π, π) ↔ [0, 1)`, and carry no
/// denormalization record.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    pub values: Array2<f64>,
    pub kind: ChannelKind,
    pub denorm: Option<Denorm>,
}

impl ChannelMap {
    pub fn new(values: Array2<f64>, kind: ChannelKind, denorm: Option<Denorm>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("channel values must lie in [0, 1]".into()));
        }
        match (kind, denorm) {
            (ChannelKind::Magnitude, Some(d)) if d.scale > 0.0 && d.offset.is_finite() => {}
            (ChannelKind::Magnitude, _) => {
                return Err(Error::Config(
                    "magnitude channel needs a positive denormalization scale".into(),
                ))
            }
            (ChannelKind::Phase, None) => {}
            (ChannelKind::Phase, Some(_)) => {
                return Err(Error::Config("phase channels carry no denormalization".into()))
            }
        }
        Ok(ChannelMap {
            values,
            kind,
            denorm,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Same metadata, new values (clamped to `[0, 1]`).
    pub fn with_values(&self, mut values: Array2<f64>) -> ChannelMap {
        values.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        ChannelMap {
            values,
            kind: self.kind,
            denorm: self.denorm,
        }
    }
}

/// Reduces an angle to `[−π, π)`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = (v + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub fn normalize(raw: &Array2<f64>, kind: ChannelKind) -> Result<ChannelMap> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot normalize non-finite values".into()));
    }
    match kind {
        ChannelKind::Magnitude => {
            if raw.iter().any(|v| *v < 0.0) {
                return Err(Error::Domain("magnitudes must be non-negative".into()));
            }
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let scale = hi - lo;
            if !(scale > 0.0) {
                return Err(Error::DegenerateNormalization);
            }
            let values = raw.mapv(|v| ((v - lo) / scale).clamp(0.0, 1.0));
            Ok(ChannelMap {
                values,
                kind,
                denorm: Some(Denorm { offset: lo, scale }),
            })
        }
        ChannelKind::Phase => {
            if raw.iter().any(|v| !(-PI..PI).contains(v)) {
                return Err(Error::Domain("phase values must lie in [−π, π)".into()));
            }
            let values = raw.mapv(|v| ((v + PI) / (2.0 * PI)).clamp(0.0, 1.0));
            Ok(ChannelMap {
                values,
                kind,
                denorm: None,
            })
        }
    }
}

pub fn denormalize(map: &ChannelMap) -> Array2<f64> {
    match (map.kind, map.denorm) {
        (ChannelKind::Magnitude, Some(d)) => map.values.mapv(|v| v * d.scale + d.offset),
        (ChannelKind::Magnitude, None) => map.values.clone(),
        (ChannelKind::Phase, _) => map.values.mapv(|v| wrap_phase(v * 2.0 * PI - PI)),
    }
}

/// Keeps samples `(factor·j, factor·i)`; an `n`-sample axis becomes
/// `ceil(n / factor)` samples.
pub fn downsample(high: &ChannelMap, factor: usize) -> Result<ChannelMap> {
    if !matches!(factor, 2 | 3) {
        return Err(Error::Config(format!(
            "unsupported downsampling factor {factor} (expected 2 or 3)"
        )));
    }
    let (h, w) = high.dim();
    let values = Array2::from_shape_fn((h.div_ceil(factor), w.div_ceil(factor)), |(j, i)| {
        high.values[[j * factor, i * factor]]
    });
    Ok(ChannelMap {
        values,
        kind: high.kind,
        denorm: high.denorm,
    })
}

/// Counter-clockwise quarter turn of a square array.
pub fn rot90<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let n = a.nrows();
    Array2::from_shape_fn(a.dim(), |(j, i)| a[[i, n - 1 - j]].clone())
}

/// `[original, rot90, rot180, rot270]`.
pub fn augment_rotations(map: &ChannelMap) -> Result<Vec<ChannelMap>> {
    let (h, w) = map.dim();
    if h != w {
        return Err(Error::Shape(format!(
            "rotation augmentation needs a square map, got {h}x{w}"
        )));
    }
    let mut out = vec![map.clone()];
    for _ in 0..3 {
        let last = out.last().unwrap();
        out.push(last.with_values(rot90(&last.values)));
    }
    Ok(out)
}

/// Adds circular complex Gaussian noise to both field components.
///
/// The noise variance per complex sample is the mean signal power per sample
/// divided by `10^(snr_db/10)`.
pub fn add_noise(map: &FieldMap, snr_db: f64, seed: u64) -> Result<FieldMap> {
    if !snr_db.is_finite() {
        return Err(Error::Config("SNR must be finite".into()));
    }
    let n = 2 * map.ex.len();
    let signal = map.power() / n as f64;
    let sigma = (signal / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = map.clone();
    for v in noisy.ex.iter_mut().chain(noisy.ey.iter_mut()) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re, im) * sigma;
    }
    Ok(noisy)
}

/// Splits a complex field component into normalized magnitude and phase.
pub fn channel_maps(field: &Array2<Complex64>) -> Result<(ChannelMap, ChannelMap)> {
    let mag = normalize(&field.mapv(|v| v.norm()), ChannelKind::Magnitude)?;
    let phase = normalize(&field.mapv(|v| wrap_phase(v.arg())), ChannelKind::Phase)?;
    Ok((mag, phase))
}

/// Recombines denormalized magnitude and phase into a complex field.
pub fn combine_channels(mag: &ChannelMap, phase: &ChannelMap) -> Result<Array2<Complex64>> {
    if mag.dim() != phase.dim() {
        return Err(Error::Shape(format!(
            "magnitude {:?} and phase {:?} differ",
            mag.dim(),
            phase.dim()
        )));
    }
    let m = denormalize(mag);
    let p = denormalize(phase);
    let mut out = Array2::zeros(m.dim());
    ndarray::Zip::from(&mut out)
        .and(&m)
        .and(&p)
        .for_each(|o, &a, &b| *o = Complex64::from_polar(a.max(0.0), b));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub id: usize,
    pub scene_index: usize,
    pub scene_seed: u64,
    pub profile: SceneProfile,
    pub rotation: u8,
    pub channel: FieldComponent,
    pub kind: ChannelKind,
    pub freq_hz: f64,
    pub z_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub low: ChannelMap,
    pub high: ChannelMap,
    pub meta: PairMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    /// Samples per side of the fully-sampled grid.
    pub grid_n: usize,
    pub spacing_lambda: f64,
    pub z_lambda: f64,
    pub profiles: Vec<SceneProfile>,
    pub split_ratio: f64,
    pub factor: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_scenes: 50,
            grid_n: 86,
            spacing_lambda: 0.5,
            z_lambda: 4.0,
            profiles: SceneProfile::ALL.to_vec(),
            split_ratio: 0.8,
            factor: 3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::Config("dataset needs at least one scene".into()));
        }
        if self.grid_n < 2 {
            return Err(Error::Config("grid must have at least 2 samples per side".into()));
        }
        if self.profiles.is_empty() {
            return Err(Error::Config("no scene profiles selected".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(Error::Config("split ratio must be in (0, 1]".into()));
        }
        if !(self.spacing_lambda > 0.0 && self.spacing_lambda <= 0.5) {
            return Err(Error::Config(
                "fully-sampled spacing must be in (0, 0.5] wavelengths".into(),
            ));
        }
        if !(self.z_lambda > 0.0) {
            return Err(Error::Config("scan distance must be positive".into()));
        }
        if !matches!(self.factor, 2 | 3) {
            return Err(Error::Config(format!(
                "unsupported downsampling factor {}",
                self.factor
            )));
        }
        Ok(())
    }

    pub fn grid_for(&self, freq_hz: f64) -> Result<GridSpec> {
        GridSpec::square_in_wavelengths(self.grid_n, self.spacing_lambda, self.z_lambda, freq_hz)
    }
}

/// Per-scene seed derived from the dataset seed (SplitMix64 finalizer).
pub fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub seed: u64,
    pub profile: SceneProfile,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub meta: PairMeta,
    pub denorm: Option<Denorm>,
    pub low: ArrayRef,
    pub high: ArrayRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub ratio: f64,
    pub train_scenes: Vec<usize>,
    pub test_scenes: Vec<usize>,
    /// Entry ids.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub scenes: Vec<SceneRecord>,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub scenes: Vec<SceneRecord>,
    pub pairs: Vec<SamplePair>,
    pub split: Split,
}

fn quantize(map: &mut ChannelMap) {
    map.values.mapv_inplace(|v| v as f32 as f64);
}

/// Synthesizes, normalizes, augments and decimates `n_scenes` random antennas.
///
/// Each scene yields `2 components × 2 kinds × 4 rotations` pairs. The split
/// is drawn over scenes so every rotation of an antenna stays on one side.
/// Stored values are rounded to `f32` so the in-memory dataset equals its
/// on-disk form.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scenes = Vec::with_capacity(config.n_scenes);
    let mut pairs = Vec::new();
    for index in 0..config.n_scenes {
        let profile = config.profiles[rng.random_range(0..config.profiles.len())];
        let seed = scene_seed(config.seed, index);
        let scene = random_scene(seed, profile);
        let grid = config.grid_for(scene.freq_hz)?;
        let field = synthesize_nearfield(&scene, &grid)?;
        scenes.push(SceneRecord {
            index,
            seed,
            profile,
            freq_hz: scene.freq_hz,
        });
        for (component, values) in [(FieldComponent::Ex, &field.ex), (FieldComponent::Ey, &field.ey)] {
            let (mag, phase) = channel_maps(values)?;
            for (kind, base) in [(ChannelKind::Magnitude, mag), (ChannelKind::Phase, phase)] {
                for (rotation, mut high) in augment_rotations(&base)?.into_iter().enumerate() {
                    quantize(&mut high);
                    let low = downsample(&high, config.factor)?;
                    pairs.push(SamplePair {
                        low,
                        high,
                        meta: PairMeta {
                            id: pairs.len(),
                            scene_index: index,
                            scene_seed: seed,
                            profile,
                            rotation: rotation as u8,
                            channel: component,
                            kind,
                            freq_hz: scene.freq_hz,
                            z_d: grid.z_d,
                        },
                    });
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..config.n_scenes).collect();
    order.shuffle(&mut rng);
    let n_train = ((config.n_scenes as f64) * config.split_ratio).round() as usize;
    let n_train = n_train.clamp(1, config.n_scenes);
    let mut train_scenes = order[..n_train].to_vec();
    let mut test_scenes = order[n_train..].to_vec();
    train_scenes.sort_unstable();
    test_scenes.sort_unstable();
    let in_train = |s: usize| train_scenes.binary_search(&s).is_ok();
    let (train, test) = pairs
        .iter()
        .map(|p| p.meta.id)
        .partition(|&id| in_train(pairs[id].meta.scene_index));
    let split = Split {
        ratio: config.split_ratio,
        train_scenes: train_scenes.clone(),
        test_scenes,
        train,
        test,
    };
    Ok(Dataset {
        config: config.clone(),
        scenes,
        pairs,
        split,
    })
}

fn map_from(values: Vec<f32>, r: &ArrayRef) -> Result<Array2<f64>> {
    match r.shape.as_slice() {
        [h, w] => Array2::from_shape_vec((*h, *w), values.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Shape(e.to_string())),
        other => Err(Error::Shape(format!("expected a 2D array, got shape {other:?}"))),
    }
}

impl Dataset {
    pub fn manifest(&self) -> (DatasetManifest, BlobWriter) {
        let mut blob = BlobWriter::new();
        let entries = self
            .pairs
            .iter()
            .map(|p| {
                let (lh, lw) = p.low.dim();
                let (hh, hw) = p.high.dim();
                let low = blob.push(&[lh, lw], p.low.values.iter().map(|v| *v as f32));
                let high = blob.push(&[hh, hw], p.high.values.iter().map(|v| *v as f32));
                ManifestEntry {
                    meta: p.meta.clone(),
                    denorm: p.high.denorm,
                    low,
                    high,
                }
            })
            .collect();
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: BUNDLE_VERSION,
            seed: self.config.seed,
            config: self.config.clone(),
            scenes: self.scenes.clone(),
            entries,
            split: self.split.clone(),
        };
        (manifest, blob)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (manifest, blob) = self.manifest();
        bundle::write_bundle(dir, &manifest, blob)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = bundle::read_manifest(dir)?;
        bundle::check_header(&manifest.format, manifest.version, DATASET_FORMAT, BUNDLE_VERSION)?;
        let blob = bundle::read_blob(dir)?;
        let mut pairs = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let low = map_from(blob.read(&e.low)?, &e.low)?;
            let high = map_from(blob.read(&e.high)?, &e.high)?;
            pairs.push(SamplePair {
                low: ChannelMap::new(low, e.meta.kind, e.denorm)?,
                high: ChannelMap::new(high, e.meta.kind, e.denorm)?,
                meta: e.meta.clone(),
            });
        }
        Ok(Dataset {
            config: manifest.config,
            scenes: manifest.scenes,
            pairs,
            split: manifest.split,
        })
    }

    /// Pairs of one kind on one side of the split.
    pub fn subset(&self, kind: ChannelKind, train: bool) -> Vec<&SamplePair> {
        let ids = if train { &self.split.train } else { &self.split.test };
        ids.iter()
            .map(|&id| &self.pairs[id])
            .filter(|p| p.meta.kind == kind)
            .collect()
    }

    /// Scene record and its regenerated field map.
    pub fn scene_field(&self, scene_index: usize) -> Result<(crate::fieldsynth::AntennaScene, FieldMap)> {
        let rec = self
            .scenes
            .get(scene_index)
            .ok_or_else(|| Error::Config(format!("no scene {scene_index} in dataset")))?;
        let scene = random_scene(rec.seed, rec.profile);
        let grid = self.config.grid_for(scene.freq_hz)?;
        let field = synthesize_nearfield(&scene, &grid)?;
        Ok((scene, field))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldMapManifest {
    format: String,
    version: u32,
    grid: GridSpec,
    ex_re: ArrayRef,
    ex_im: ArrayRef,
    ey_re: ArrayRef,
    ey_im: ArrayRef,
}

/// Writes a complex field map as a bundle (four `f32` planes).
pub fn save_field_map(map: &FieldMap, dir: &Path) -> Result<()> {
    let mut blob = BlobWriter::new();
    let shape = [map.grid.ny, map.grid.nx];
    let ex_re = blob.push(&shape, map.ex.iter().map(|v| v.re as f32));
    let ex_im = blob.push(&shape, map.ex.iter().map(|v| v.im as f32));
    let ey_re = blob.push(&shape, map.ey.iter().map(|v| v.re as f32));
    let ey_im = blob.push(&shape, map.ey.iter().map(|v| v.im as f32));
    let manifest = FieldMapManifest {
        format: FIELD_MAP_FORMAT.into(),
        version: BUNDLE_VERSION,
        grid: map.grid,
        ex_re,
        ex_im,
        ey_re,
        ey_im,
    };
    bundle::write_bundle(dir, &manifest, blob)
}

pub fn load_field_map(dir: &Path) -> Result<FieldMap> {
    let m: FieldMapManifest = bundle::read_manifest(dir)?;
    bundle::check_header(&m.format, m.version, FIELD_MAP_FORMAT, BUNDLE_VERSION)?;
    let blob = bundle::read_blob(dir)?;
    let plane = |re: &ArrayRef, im: &ArrayRef| -> Result<Array2<Complex64>> {
        let r = map_from(blob.read(re)?, re)?;
        let i = map_from(blob.read(im)?, im)?;
        if r.dim() != i.dim() {
            return Err(Error::Shape("real and imaginary planes differ".into()));
        }
        Ok(ndarray::Zip::from(&r).and(&i).map_collect(|a, b| Complex64::new(*a, *b)))
    };
    FieldMap::new(m.grid, plane(&m.ex_re, &m.ex_im)?, plane(&m.ey_re, &m.ey_im)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn magnitude_min_max() {
        let m = normalize(&array![[0.0, 5.0, 10.0]], ChannelKind::Magnitude).unwrap();
        assert_eq!(m.values, array![[0.0, 0.5, 1.0]]);
        assert_eq!(m.denorm, Some(Denorm { offset: 0.0, scale: 10.0 }));
        assert!(matches!(
            normalize(&array![[2.0, 2.0]], ChannelKind::Magnitude),
            Err(Error::DegenerateNormalization)
        ));
    }

    #[test]
    fn phase_affine_map() {
        let m = normalize(&array![[-PI, 0.0]], ChannelKind::Phase).unwrap();
        assert_eq!(m.values, array![[0.0, 0.5]]);
        assert!(m.denorm.is_none());
        assert!(normalize(&array![[PI]], ChannelKind::Phase).is_err());
    }

    proptest! {
        #[test]
        fn magnitude_round_trip(v in proptest::collection::vec(0.0f64..1e3, 16)) {
            let raw = Array2::from_shape_vec((4, 4), v).unwrap();
            prop_assume!(raw.iter().cloned().fold(f64::MIN, f64::max) - raw.iter().cloned().fold(f64::MAX, f64::min) > 1e-6);
            let back = denormalize(&normalize(&raw, ChannelKind::Magnitude).unwrap());
            for (a, b) in raw.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn phase_round_trip(v in proptest::collection::vec(-PI..PI, 9)) {
            let raw = Array2::from_shape_vec((3, 3), v).unwrap();
            let back = denormalize(&normalize(&raw, ChannelKind::Phase).unwrap());
            for (a, b) in raw.iter().zip(back.iter()) {
                let d = wrap_phase(a - b);
                prop_assert!(d.abs() < 1e-9);
            }
        }
    }

    fn ramp(n: usize) -> ChannelMap {
        let v = Array2::from_shape_fn((n, n), |(j, i)| (j * n + i) as f64 / (n * n) as f64);
        ChannelMap::new(v, ChannelKind::Magnitude, Some(Denorm { offset: 0.0, scale: 1.0 })).unwrap()
    }

    #[test]
    fn downsample_shapes_and_selection() {
        let high = ramp(86);
        let low3 = downsample(&high, 3).unwrap();
        assert_eq!(low3.dim(), (29, 29));
        let low2 = downsample(&high, 2).unwrap();
        assert_eq!(low2.dim(), (43, 43));
        for ((j, i), v) in low3.values.indexed_iter() {
            assert_eq!(*v, high.values[[3 * j, 3 * i]]);
        }
        assert!(downsample(&high, 1).is_err());
        assert!(downsample(&high, 4).is_err());
        let frac = (29.0f64 * 29.0) / (86.0 * 86.0);
        assert!((frac - 0.114).abs() < 0.001);
    }

    #[test]
    fn rotations_form_a_group() {
        let m = ramp(7);
        let rots = augment_rotations(&m).unwrap();
        assert_eq!(rots.len(), 4);
        assert_eq!(rots[0], m);
        assert_eq!(rot90(&rots[3].values), m.values);
        assert_eq!(rots[2].values, rot90(&rot90(&m.values)));
        let rect = ChannelMap::new(Array2::zeros((2, 3)), ChannelKind::Phase, None).unwrap();
        assert!(augment_rotations(&rect).is_err());
        assert_eq!(3418 * rots.len(), 13_672);
    }

    fn small_field() -> FieldMap {
        let scene = random_scene(8, SceneProfile::PlanarArray);
        let g = GridSpec::square_in_wavelengths(86, 0.5, 4.0, scene.freq_hz).unwrap();
        synthesize_nearfield(&scene, &g).unwrap()
    }

    #[test]
    fn noise_levels() {
        let map = small_field();
        let quiet = add_noise(&map, 300.0, 1).unwrap();
        for (a, b) in map.ex.iter().zip(quiet.ex.iter()) {
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1e-12 * map.power().sqrt()));
        }
        let noisy = add_noise(&map, 20.0, 7).unwrap();
        let noise: f64 = noisy
            .ex
            .iter()
            .zip(map.ex.iter())
            .chain(noisy.ey.iter().zip(map.ey.iter()))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let snr = 10.0 * (map.power() / noise).log10();
        assert!((19.5..=20.5).contains(&snr), "realized {snr}");
        assert_eq!(noisy, add_noise(&map, 20.0, 7).unwrap());
        assert!(add_noise(&map, f64::NAN, 7).is_err());
    }

    #[test]
    fn dataset_counts_split_and_leakage() {
        let config = DatasetConfig {
            n_scenes: 10,
            grid_n: 12,
            seed: 3,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&config).unwrap();
        assert_eq!(ds.pairs.len(), 160);
        assert_eq!(ds.split.train_scenes.len(), 8);
        assert_eq!(ds.split.test_scenes.len(), 2);
        for id in &ds.split.test {
            let s = ds.pairs[*id].meta.scene_index;
            assert!(!ds.split.train_scenes.contains(&s));
        }
        assert_eq!(ds.split.train.len() + ds.split.test.len(), 160);
        assert!(ds.pairs.iter().all(|p| p.low.dim() == (4, 4)));
    }

    #[test]
    fn bundle_round_trip_is_exact() {
        let config = DatasetConfig {
            n_scenes: 3,
            grid_n: 10,
            seed: 5,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let first = std::fs::read(dir.path().join("arrays.bin")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join("arrays.bin")).unwrap());
    }

    #[test]
    fn field_map_bundle() {
        let map = small_field();
        let dir = tempfile::tempdir().unwrap();
        save_field_map(&map, dir.path()).unwrap();
        let back = load_field_map(dir.path()).unwrap();
        assert_eq!(back.grid, map.grid);
        for (a, b) in map.ex.iter().zip(back.ex.iter()) {
            assert!((a - b).norm() <= 1e-6 * a.norm().max(1e-30));
        }
        std::fs::write(dir.path().join("manifest.json"), "{ nope").unwrap();
        assert!(matches!(load_field_map(dir.path()), Err(Error::Manifest { .. })));
    }
}
