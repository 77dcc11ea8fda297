use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub stages: usize,
    /// Side of the fully-sampled map the network restores.
    pub in_size: usize,
    /// Internal side after reflect padding; divisible by `2^stages`.
    pub pad_to: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Predict a correction on top of the upsampled input (in logit space)
    /// instead of the map itself.
    #[serde(default)]
    pub residual: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            base_channels: 64,
            stages: 4,
            in_size: 86,
            pad_to: 96,
            kernel: 3,
            pool: 2,
            residual: false,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel != 3 || self.pool != 2 {
            return Err(Error::Config("only 3x3 kernels with 2x2 pooling are supported".into()));
        }
        if self.base_channels == 0 || self.stages == 0 || self.in_size < 2 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        let m = 1usize << self.stages;
        if self.pad_to % m != 0 {
            return Err(Error::Config(format!(
                "pad_to {} is not divisible by 2^{}",
                self.pad_to, self.stages
            )));
        }
        if self.pad_to < self.in_size || self.pad_to - self.in_size >= self.in_size {
            return Err(Error::Config(format!(
                "pad_to {} must lie in [{}, {})",
                self.pad_to,
                self.in_size,
                2 * self.in_size
            )));
        }
        Ok(())
    }

    /// Channel width of encoder stage `k` (0-based); `k == stages` is the
    /// bottleneck.
    pub fn width(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Smallest multiple of `2^stages` not below `n`.
    pub fn pad_for(n: usize, stages: usize) -> usize {
        let m = 1usize << stages;
        n.div_ceil(m) * m
    }
}

/// One named parameter or statistics array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    cout: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
}

#[derive(Debug, Clone, Copy)]
struct Up {
    w: usize,
    b: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<Block>,
    bottleneck: Block,
    ups: Vec<Up>,
    dec: Vec<Block>,
    head: Conv,
}

struct Builder<T> {
    params: Vec<Param<T>>,
    buffers: Vec<Param<T>>,
}

impl<T: Real> Builder<T> {
    fn param(&mut self, name: String, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        self.params.push(Param {
            name,
            shape,
            value: vec![T::zero(); len],
        });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, len: usize, fill: f64) -> usize {
        self.buffers.push(Param {
            name,
            shape: vec![len],
            value: vec![T::of(fill); len],
        });
        self.buffers.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        Conv {
            w: self.param(format!("{name}.weight"), vec![cout, cin, k, k]),
            b: self.param(format!("{name}.bias"), vec![cout]),
            cout,
            k,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.param(format!("{name}.gamma"), vec![c]);
        self.params[gamma].value.fill(T::one());
        Bn {
            gamma,
            beta: self.param(format!("{name}.beta"), vec![c]),
            mean: self.buffer(format!("{name}.running_mean"), c, 0.0),
            var: self.buffer(format!("{name}.running_var"), c, 1.0),
        }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize) -> Block {
        Block {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3),
            bn1: self.bn(&format!("{name}.bn1"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3),
            bn2: self.bn(&format!("{name}.bn2"), cout),
        }
    }
}

fn build<T: Real>(config: &UNetConfig) -> (Layout, Builder<T>) {
    let mut b = Builder {
        params: Vec::new(),
        buffers: Vec::new(),
    };
    let s = config.stages;
    let mut enc = Vec::with_capacity(s);
    let mut cin = 1;
    for k in 0..s {
        enc.push(b.block(&format!("enc{}", k + 1), cin, config.width(k)));
        cin = config.width(k);
    }
    let bottleneck = b.block("bottleneck", cin, config.width(s));
    let mut ups = Vec::with_capacity(s);
    let mut dec = Vec::with_capacity(s);
    for k in (0..s).rev() {
        let (cin, cout) = (config.width(k + 1), config.width(k));
        let name = format!("up{}", k + 1);
        ups.push(Up {
            w: b.param(format!("{name}.weight"), vec![cin, cout, 2, 2]),
            b: b.param(format!("{name}.bias"), vec![cout]),
            cout,
        });
        dec.push(b.block(&format!("dec{}", k + 1), 2 * cout, cout));
    }
    let head = b.conv("head", config.width(0), 1, 1);
    (
        Layout {
            enc,
            bottleneck,
            ups,
            dec,
            head,
        },
        b,
    )
}

/// Weights, biases and batch-norm state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub config: UNetConfig,
    pub params: Vec<Param<T>>,
    /// Batch-norm running statistics (not trained by gradient).
    pub buffers: Vec<Param<T>>,
}

impl<T: Real> NetParams<T> {
    /// He-normal convolution weights, zero biases, identity batch-norm.
    /// The output head starts at zero in residual mode.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, mut b) = build::<T>(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skip_head = config.residual;
        for (i, p) in b.params.iter_mut().enumerate() {
            if !p.name.ends_with(".weight") || (skip_head && i == layout.head.w) {
                continue;
            }
            let fan_in: usize = if p.name.starts_with("up") {
                p.shape[0]
            } else {
                p.shape[1..].iter().product()
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in p.value.iter_mut() {
                *v = T::of(dist.sample(&mut rng));
            }
        }
        Ok(NetParams {
            config: config.clone(),
            params: b.params,
            buffers: b.buffers,
        })
    }

    /// Zero-filled arrays shaped like the trainable parameters.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        let conv = |ps: &Vec<Param<T>>| {
            ps.iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|v| U::of(v.get())).collect(),
                })
                .collect()
        };
        NetParams {
            config: self.config.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }

    /// Checks names and shapes against the layout `config` implies.
    pub fn check_layout(&self) -> Result<()> {
        let (_, b) = build::<T>(&self.config);
        let same = |a: &[Param<T>], e: &[Param<T>]| {
            a.len() == e.len()
                && a.iter()
                    .zip(e)
                    .all(|(x, y)| x.name == y.name && x.shape == y.shape && x.value.len() == y.value.len())
        };
        if !same(&self.params, &b.params) || !same(&self.buffers, &b.buffers) {
            return Err(Error::Shape(format!(
                "parameters do not match a network with base_channels {} and {} stages",
                self.config.base_channels, self.config.stages
            )));
        }
        Ok(())
    }

    /// `(name, [channels, height, width])` of every stage output for an
    /// input of side `pad_to`, in execution order.
    pub fn stage_shapes(&self) -> Vec<(String, [usize; 3])> {
        let c = &self.config;
        let mut out = Vec::new();
        let mut side = c.pad_to;
        for k in 0..c.stages {
            out.push((format!("enc{}", k + 1), [c.width(k), side, side]));
            side /= 2;
            out.push((format!("pool{}", k + 1), [c.width(k), side, side]));
        }
        out.push(("bottleneck".into(), [c.width(c.stages), side, side]));
        for k in (0..c.stages).rev() {
            side *= 2;
            out.push((format!("up{}", k + 1), [c.width(k), side, side]));
            out.push((format!("concat{}", k + 1), [2 * c.width(k), side, side]));
            out.push((format!("dec{}", k + 1), [c.width(k), side, side]));
        }
        out.push(("head".into(), [1, side, side]));
        out
    }
}

struct BlockCache<T> {
    x: Tensor4<T>,
    bn1: BnCache<T>,
    a1: Tensor4<T>,
    bn2: BnCache<T>,
    a2: Tensor4<T>,
}

/// Activations retained by a training-mode forward pass.
pub struct Tape<T> {
    enc: Vec<BlockCache<T>>,
    pools: Vec<(Vec<u32>, [usize; 4])>,
    bottleneck: BlockCache<T>,
    up_inputs: Vec<Tensor4<T>>,
    dec: Vec<BlockCache<T>>,
    head_in: Tensor4<T>,
    out: Tensor4<T>,
}

fn check<T: Real>(t: &Tensor4<T>, layer: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer.to_string(),
        })
    }
}

/// Batch-norm statistics source for a forward pass.
enum Stats<'a, T> {
    /// Batch statistics; running estimates are updated.
    Update(&'a mut [Param<T>]),
    /// Frozen running estimates.
    Frozen(&'a [Param<T>]),
}

fn block_forward<T: Real>(
    params: &[Param<T>],
    stats: &mut Stats<'_, T>,
    blk: &Block,
    x: Tensor4<T>,
    name: &str,
) -> Result<(Tensor4<T>, Option<BlockCache<T>>)> {
    let mut run = |x: &Tensor4<T>, conv: &Conv, bn: &Bn, tag: &str| -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
        let z = conv_forward(x, &params[conv.w].value, &params[conv.b].value, conv.cout, conv.k);
        check(&z, &format!("{name}.{tag}conv"))?;
        let (gamma, beta) = (&params[bn.gamma].value, &params[bn.beta].value);
        let (mut a, cache) = match stats {
            Stats::Update(buffers) => {
                let (mean, var) = two_mut(buffers, bn.mean, bn.var);
                let (a, c) = bn_forward_train(&z, gamma, beta, &mut mean.value, &mut var.value, BN_MOMENTUM);
                (a, Some(c))
            }
            Stats::Frozen(buffers) => (
                bn_forward_eval(&z, gamma, beta, &buffers[bn.mean].value, &buffers[bn.var].value),
                None,
            ),
        };
        relu_inplace(&mut a);
        check(&a, &format!("{name}.{tag}bn"))?;
        Ok((a, cache))
    };
    let (a1, c1) = run(&x, &blk.conv1, &blk.bn1, "1.")?;
    let (a2, c2) = run(&a1, &blk.conv2, &blk.bn2, "2.")?;
    let cache = match (c1, c2) {
        (Some(bn1), Some(bn2)) => Some(BlockCache {
            x,
            bn1,
            a1,
            bn2,
            a2: a2.clone(),
        }),
        _ => None,
    };
    Ok((a2, cache))
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn block_backward<T: Real>(
    net: &NetParams<T>,
    blk: &Block,
    cache: &BlockCache<T>,
    mut dy: Tensor4<T>,
    grads: &mut [Vec<T>],
) -> Tensor4<T> {
    relu_backward(&cache.a2, &mut dy);
    let dz2 = bn_backward_into(net, &blk.bn2, &cache.bn2, &dy, grads);
    let mut da1 = conv_backward_into(net, &blk.conv2, &cache.a1, &dz2, grads, true).unwrap();
    relu_backward(&cache.a1, &mut da1);
    let dz1 = bn_backward_into(net, &blk.bn1, &cache.bn1, &da1, grads);
    conv_backward_into(net, &blk.conv1, &cache.x, &dz1, grads, true).unwrap()
}

fn bn_backward_into<T: Real>(
    net: &NetParams<T>,
    bn: &Bn,
    cache: &BnCache<T>,
    dy: &Tensor4<T>,
    grads: &mut [Vec<T>],
) -> Tensor4<T> {
    let (dg, db) = two_mut(grads, bn.gamma, bn.beta);
    bn_backward(cache, &net.params[bn.gamma].value, dy, dg, db)
}

fn conv_backward_into<T: Real>(
    net: &NetParams<T>,
    conv: &Conv,
    x: &Tensor4<T>,
    dy: &Tensor4<T>,
    grads: &mut [Vec<T>],
    need_dx: bool,
) -> Option<Tensor4<T>> {
    let (dw, db) = two_mut(grads, conv.w, conv.b);
    conv_backward(x, &net.params[conv.w].value, dy, conv.k, dw, db, need_dx)
}

/// Training-mode forward pass on a `[n, 1, pad_to, pad_to]` batch.
///
/// Uses batch statistics and updates the running estimates; the returned
/// tape feeds [`backward`].
pub fn forward_train<T: Real>(net: &mut NetParams<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, Tape<T>)> {
    let NetParams {
        config,
        params,
        buffers,
    } = net;
    let (y, tape) = run(config, params, Stats::Update(buffers), x)?;
    Ok((y, tape.expect("training pass records a tape")))
}

/// Inference with frozen batch-norm statistics.
pub fn forward_eval<T: Real>(net: &NetParams<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    Ok(run(&net.config, &net.params, Stats::Frozen(&net.buffers), x)?.0)
}

fn run<T: Real>(
    config: &UNetConfig,
    params: &[Param<T>],
    mut stats: Stats<'_, T>,
    x: &Tensor4<T>,
) -> Result<(Tensor4<T>, Option<Tape<T>>)> {
    let p = config.pad_to;
    if x.c() != 1 || x.h() != p || x.w() != p {
        return Err(Error::Shape(format!(
            "network expects [n, 1, {p}, {p}] input, got {:?}",
            x.shape
        )));
    }
    let train = matches!(stats, Stats::Update(_));
    let layout = build::<T>(config).0;
    let mut enc = Vec::new();
    let mut skips = Vec::new();
    let mut pools = Vec::new();
    let mut h = x.clone();
    for (k, blk) in layout.enc.iter().enumerate() {
        let (a, cache) = block_forward(params, &mut stats, blk, h, &format!("enc{}", k + 1))?;
        let (pooled, arg) = maxpool_forward(&a);
        pools.push((arg, a.shape));
        skips.push(a);
        enc.extend(cache);
        h = pooled;
    }
    let (mut h, bottleneck) = block_forward(params, &mut stats, &layout.bottleneck, h, "bottleneck")?;
    let mut up_inputs = Vec::new();
    let mut dec = Vec::new();
    for (i, (up, blk)) in layout.ups.iter().zip(&layout.dec).enumerate() {
        let k = config.stages - i;
        let u = convt_forward(&h, &params[up.w].value, &params[up.b].value, up.cout);
        check(&u, &format!("up{k}"))?;
        let skip = skips.pop().expect("one skip per stage");
        let cat = concat(&skip, &u);
        if train {
            up_inputs.push(h);
        }
        let (a, cache) = block_forward(params, &mut stats, blk, cat, &format!("dec{k}"))?;
        dec.extend(cache);
        h = a;
    }
    let head = &layout.head;
    let mut z = conv_forward(&h, &params[head.w].value, &params[head.b].value, 1, 1);
    check(&z, "head")?;
    if config.residual {
        for (v, b) in z.data.iter_mut().zip(&x.data) {
            *v += logit(*b);
        }
    }
    for v in z.data.iter_mut() {
        *v = sigmoid(*v);
    }
    let tape = match bottleneck {
        Some(bottleneck) if train => Some(Tape {
            enc,
            pools,
            bottleneck,
            up_inputs,
            dec,
            head_in: h,
            out: z.clone(),
        }),
        _ => None,
    };
    Ok((z, tape))
}

/// Logit of a map value, clipped away from 0 and 1.
pub fn logit<T: Real>(v: T) -> T {
    let e = T::of(1e-4);
    let v = v.max(e).min(T::one() - e);
    (v / (T::one() - v)).ln()
}

/// Parameter gradients for an upstream gradient `dout` on the network
/// output (same shape as the output).
pub fn backward<T: Real>(net: &NetParams<T>, tape: &Tape<T>, dout: &Tensor4<T>) -> Result<Vec<Vec<T>>> {
    let layout = build::<T>(&net.config).0;
    let mut grads = net.zeros_like();
    let mut dz = dout.clone();
    for (g, y) in dz.data.iter_mut().zip(&tape.out.data) {
        *g = *g * *y * (T::one() - *y);
    }
    let mut dh = conv_backward_into(net, &layout.head, &tape.head_in, &dz, &mut grads, true).unwrap();
    let mut dskips = Vec::new();
    for (i, (up, blk)) in layout.ups.iter().zip(&layout.dec).enumerate().rev() {
        let dcat = block_backward(net, blk, &tape.dec[i], dh, &mut grads);
        let (dskip, du) = split(&dcat, up.cout);
        dskips.push(dskip);
        let (dw, db) = two_mut(&mut grads, up.w, up.b);
        dh = convt_backward(&tape.up_inputs[i], &net.params[up.w].value, &du, dw, db);
    }
    let mut dh = block_backward(net, &layout.bottleneck, &tape.bottleneck, dh, &mut grads);
    for k in (0..layout.enc.len()).rev() {
        let (arg, shape) = &tape.pools[k];
        let mut da = maxpool_backward(&dh, arg, *shape);
        // Skip gradients were collected shallowest first.
        let dskip = &dskips[k];
        for (a, b) in da.data.iter_mut().zip(&dskip.data) {
            *a += *b;
        }
        dh = block_backward(net, &layout.enc[k], &tape.enc[k], da, &mut grads);
    }
    for (g, p) in grads.iter().zip(&net.params) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: p.name.clone(),
            });
        }
    }
    Ok(grads)
}
