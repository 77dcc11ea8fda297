//! Encoder-decoder restoration network with skip connections, trained
//! from scratch on CPU.
//!
//! Inputs are bilinearly pre-upsampled to the full grid, reflect-padded to a
//! side divisible by `2^stages`, and the output is cropped back.

mod layers;
mod tensor;
mod train;
mod unet;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, ArrayRef, BlobWriter};
use crate::dataio::{ChannelKind, ChannelMap, BUNDLE_VERSION};
use crate::error::{Error, Result};

pub use tensor::{Real, Tensor4};
pub use train::{
    adam_step, adam_update, evaluate, lr_schedule, train, train_from, AdamState, EpochLoss, LossHistory, TrainConfig,
    TrainOutcome,
};
pub use unet::{backward, forward_eval, forward_train, logit, NetParams, Param, Tape, UNetConfig, BN_MOMENTUM};

pub const PARAMS_FORMAT: &str = "nfsnet-params";

/// Bilinear upsampling that puts `low[j][i]` at full-grid index
/// `(factor·j, factor·i)`. Samples past the last anchor are extrapolated
/// linearly; results are clamped to `[0, 1]`.
pub fn upsample_input(low: &ChannelMap, factor: usize, target: usize) -> Result<ChannelMap> {
    let (h, w) = low.dim();
    if factor == 0 || h != target.div_ceil(factor) || w != target.div_ceil(factor) {
        return Err(Error::Shape(format!(
            "{h}x{w} map cannot come from a {target}-sample grid decimated by {factor}"
        )));
    }
    let weights = |n: usize| -> Vec<(usize, f64)> {
        (0..target)
            .map(|t| {
                if n == 1 {
                    return (0, 0.0);
                }
                let u = t as f64 / factor as f64;
                let i0 = (u.floor() as usize).min(n - 2);
                (i0, u - i0 as f64)
            })
            .collect()
    };
    let (wy, wx) = (weights(h), weights(w));
    let v = &low.values;
    let at = |j: usize, i: usize| v[[j.min(h - 1), i.min(w - 1)]];
    let values = Array2::from_shape_fn((target, target), |(j, i)| {
        let (j0, fy) = wy[j];
        let (i0, fx) = wx[i];
        let top = (1.0 - fx) * at(j0, i0) + fx * at(j0, i0 + 1);
        let bottom = (1.0 - fx) * at(j0 + 1, i0) + fx * at(j0 + 1, i0 + 1);
        (1.0 - fy) * top + fy * bottom
    });
    Ok(low.with_values(values))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Offset of the valid region inside the padded map.
fn pad_offset(in_size: usize, pad_to: usize) -> usize {
    (pad_to - in_size) / 2
}

/// Writes a reflect-padded copy of `map` into `dst` (`pad_to × pad_to`).
fn pad_into<T: Real>(map: &Array2<f64>, pad_to: usize, dst: &mut [T]) {
    let n = map.nrows();
    let off = pad_offset(n, pad_to) as isize;
    for j in 0..pad_to {
        let sj = reflect(j as isize - off, n);
        for i in 0..pad_to {
            let si = reflect(i as isize - off, n);
            dst[j * pad_to + i] = T::of(map[[sj, si]]);
        }
    }
}

fn crop<T: Real>(src: &[T], in_size: usize, pad_to: usize) -> Array2<f64> {
    let off = pad_offset(in_size, pad_to);
    Array2::from_shape_fn((in_size, in_size), |(j, i)| src[(j + off) * pad_to + i + off].get())
}

/// Adjoint of the crop: places a gradient map inside a zero padded plane.
fn uncrop<T: Real>(grad: &Array2<f64>, pad_to: usize, dst: &mut [T]) {
    let n = grad.nrows();
    let off = pad_offset(n, pad_to);
    dst.fill(T::zero());
    for ((j, i), g) in grad.indexed_iter() {
        dst[(j + off) * pad_to + i + off] = T::of(*g);
    }
}

/// Stacks upsampled, padded inputs into a network batch.
pub fn input_batch<T: Real>(config: &UNetConfig, maps: &[&Array2<f64>]) -> Result<Tensor4<T>> {
    let p = config.pad_to;
    let mut x = Tensor4::zeros([maps.len(), 1, p, p]);
    for (s, m) in maps.iter().enumerate() {
        if m.dim() != (config.in_size, config.in_size) {
            return Err(Error::Shape(format!(
                "network expects {0}x{0} maps, got {1:?}",
                config.in_size,
                m.dim()
            )));
        }
        pad_into(m, p, x.sample_mut(s));
    }
    Ok(x)
}

/// Restores full-grid maps from decimated ones in evaluation mode.
pub fn restore<T: Real>(net: &NetParams<T>, lows: &[&ChannelMap], factor: usize) -> Result<Vec<ChannelMap>> {
    let c = &net.config;
    let ups = lows
        .iter()
        .map(|l| upsample_input(l, factor, c.in_size))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Array2<f64>> = ups.iter().map(|u| &u.values).collect();
    let x = input_batch::<T>(c, &refs)?;
    let y = forward_eval(net, &x)?;
    Ok(ups
        .iter()
        .enumerate()
        .map(|(s, u)| u.with_values(crop(y.sample(s), c.in_size, c.pad_to)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedRef {
    name: String,
    array: ArrayRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsManifest {
    format: String,
    version: u32,
    config: UNetConfig,
    #[serde(default)]
    kind: Option<ChannelKind>,
    params: Vec<NamedRef>,
    buffers: Vec<NamedRef>,
}

/// Writes parameters as a bundle of `f32` arrays.
pub fn save_params(net: &NetParams<f32>, kind: Option<ChannelKind>, dir: &Path) -> Result<()> {
    let mut blob = BlobWriter::new();
    let mut refs = |ps: &[Param<f32>]| -> Vec<NamedRef> {
        ps.iter()
            .map(|p| NamedRef {
                name: p.name.clone(),
                array: blob.push(&p.shape, p.value.iter().copied()),
            })
            .collect()
    };
    let params = refs(&net.params);
    let buffers = refs(&net.buffers);
    let manifest = ParamsManifest {
        format: PARAMS_FORMAT.into(),
        version: BUNDLE_VERSION,
        config: net.config.clone(),
        kind,
        params,
        buffers,
    };
    bundle::write_bundle(dir, &manifest, blob)
}

/// Reads a parameter bundle. With `expect`, the stored network must have
/// the same layout.
pub fn load_params(dir: &Path, expect: Option<&UNetConfig>) -> Result<(NetParams<f32>, Option<ChannelKind>)> {
    let m: ParamsManifest = bundle::read_manifest(dir)?;
    bundle::check_header(&m.format, m.version, PARAMS_FORMAT, BUNDLE_VERSION)?;
    m.config.validate()?;
    if let Some(want) = expect {
        if want.base_channels != m.config.base_channels || want.stages != m.config.stages {
            return Err(Error::Shape(format!(
                "stored network has base_channels {} and {} stages, expected {} and {}",
                m.config.base_channels, m.config.stages, want.base_channels, want.stages
            )));
        }
    }
    let blob = bundle::read_blob(dir)?;
    let read = |rs: &[NamedRef]| -> Result<Vec<Param<f32>>> {
        rs.iter()
            .map(|r| {
                Ok(Param {
                    name: r.name.clone(),
                    shape: r.array.shape.clone(),
                    value: blob.read(&r.array)?,
                })
            })
            .collect()
    };
    let net = NetParams {
        config: m.config,
        params: read(&m.params)?,
        buffers: read(&m.buffers)?,
    };
    net.check_layout()?;
    Ok((net, m.kind))
}

#[cfg(test)]
mod tests;
