use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor4};
use super::unet::{backward, forward_eval, forward_train, NetParams, UNetConfig};
use super::{crop, input_batch, uncrop, upsample_input};
use crate::dataio::{ChannelKind, Dataset, SamplePair};
use crate::error::{Error, Result};
use crate::losses::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub decay_every: usize,
    pub total_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full schedule: 200 epochs decaying every 50 for magnitude, 300 decaying
    /// every 75 for phase.
    pub fn full(kind: ChannelKind) -> Self {
        let (decay_every, total_epochs) = match kind {
            ChannelKind::Magnitude => (50, 200),
            ChannelKind::Phase => (75, 300),
        };
        TrainConfig {
            batch_size: 15,
            lr0: 1e-3,
            lr_decay_factor: 10.0,
            decay_every,
            total_epochs,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    /// Short CPU schedule: 30 epochs with one decay step.
    pub fn toy(kind: ChannelKind) -> Self {
        TrainConfig {
            decay_every: 20,
            total_epochs: 30,
            ..Self::full(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_epochs == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch size, epochs and decay interval must be positive".into()));
        }
        if self.decay_every > self.total_epochs {
            return Err(Error::Config(format!(
                "decay interval {} exceeds {} epochs",
                self.decay_every, self.total_epochs
            )));
        }
        if !(self.lr0 > 0.0 && self.lr_decay_factor > 0.0 && self.eps > 0.0) {
            return Err(Error::Config("learning rate, decay factor and epsilon must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("ADAM betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Step decay: `lr0 / factor^floor(epoch / decay_every)`.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr0 / config.lr_decay_factor.powi((epoch / config.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &NetParams<T>) -> Self {
        AdamState {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }
}

/// Bias-corrected ADAM update of one array at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Real>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    config: &TrainConfig,
) {
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i].get();
        let mi = b1 * m[i].get() + (1.0 - b1) * g;
        let vi = b2 * v[i].get() + (1.0 - b2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + config.eps);
        value[i] = T::of(value[i].get() - step);
    }
}

pub fn adam_step<T: Real>(
    net: &mut NetParams<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    config: &TrainConfig,
) {
    state.t += 1;
    for (i, p) in net.params.iter_mut().enumerate() {
        adam_update(&mut p.value, &grads[i], &mut state.m[i], &mut state.v[i], state.t, lr, config);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Validation loss of the freshly initialized network.
    pub initial_val: f64,
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn final_val(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }

    /// `epoch,train_loss,val_loss` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.9e},{:.9e}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

pub struct TrainOutcome {
    pub params: NetParams<f32>,
    pub history: LossHistory,
}

/// Precomputed network inputs and targets for one side of the split.
struct Prepared {
    inputs: Vec<Array2<f64>>,
    targets: Vec<Array2<f64>>,
}

fn prepare(pairs: &[&SamplePair], config: &UNetConfig, factor: usize) -> Result<Prepared> {
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for p in pairs {
        inputs.push(upsample_input(&p.low, factor, config.in_size)?.values);
        targets.push(p.high.values.clone());
    }
    Ok(Prepared { inputs, targets })
}

fn batch_loss<T: Real>(
    out: &Tensor4<T>,
    targets: &[&Array2<f64>],
    config: &UNetConfig,
    objective: &Objective,
    want_grad: bool,
) -> Result<(f64, Option<Tensor4<T>>)> {
    let n = targets.len();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor4::zeros(out.shape));
    for (s, t) in targets.iter().enumerate() {
        let pred = crop(out.sample(s), config.in_size, config.pad_to);
        let l = objective.eval(t, &pred)?;
        total += l.value;
        if let Some(g) = grad.as_mut() {
            uncrop(&(l.grad / n as f64), config.pad_to, g.sample_mut(s));
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean objective over prepared samples in evaluation mode.
fn mean_loss(net: &NetParams<f32>, data: &Prepared, objective: &Objective, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let n = data.inputs.len();
    for start in (0..n).step_by(batch) {
        let end = (start + batch).min(n);
        let refs: Vec<&Array2<f64>> = data.inputs[start..end].iter().collect();
        let x = input_batch::<f32>(&net.config, &refs)?;
        let y = forward_eval(net, &x)?;
        let t: Vec<&Array2<f64>> = data.targets[start..end].iter().collect();
        total += batch_loss(&y, &t, &net.config, objective, false)?.0 * (end - start) as f64;
    }
    Ok(total / n as f64)
}

/// Mean objective of `net` over the pairs, in evaluation mode.
pub fn evaluate(net: &NetParams<f32>, pairs: &[&SamplePair], objective: &Objective, factor: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    mean_loss(net, &prepare(pairs, &net.config, factor)?, objective, 16)
}

/// Mini-batch training of one network on one channel kind.
///
/// Training pairs are reshuffled every epoch with a seeded generator. The
/// validation loss uses the held-out split (the training split when the
/// held-out split is empty).
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    unet: &UNetConfig,
    objective: &Objective,
) -> Result<TrainOutcome> {
    unet.validate()?;
    train_from(dataset, config, NetParams::<f32>::init(unet, config.seed)?, objective)
}

/// [`train`] starting from existing parameters, e.g. to adapt a network to
/// another decimation factor. `config.seed` only drives the shuffling.
pub fn train_from(
    dataset: &Dataset,
    config: &TrainConfig,
    mut net: NetParams<f32>,
    objective: &Objective,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.check_layout()?;
    let unet = &net.config.clone();
    let kind = objective.kind;
    if unet.in_size != dataset.config.grid_n {
        return Err(Error::Config(format!(
            "network in_size {} differs from the dataset grid {}",
            unet.in_size, dataset.config.grid_n
        )));
    }
    objective.ms_ssim.check_size(unet.in_size, unet.in_size)?;
    let factor = dataset.config.factor;
    let train_pairs = dataset.subset(kind, true);
    if train_pairs.is_empty() {
        return Err(Error::Config(format!("no {kind:?} pairs in the training split")));
    }
    let mut val_pairs = dataset.subset(kind, false);
    if val_pairs.is_empty() {
        val_pairs = train_pairs.clone();
    }
    let train_data = prepare(&train_pairs, unet, factor)?;
    let val_data = prepare(&val_pairs, unet, factor)?;

    let mut adam = AdamState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut history = LossHistory {
        initial_val: mean_loss(&net, &val_data, objective, config.batch_size)?,
        epochs: Vec::with_capacity(config.total_epochs),
    };
    log::info!(
        "{kind:?}: {} training / {} validation maps, {} parameters, initial val {:.5}",
        train_data.inputs.len(),
        val_data.inputs.len(),
        net.n_params(),
        history.initial_val
    );
    let mut order: Vec<usize> = (0..train_data.inputs.len()).collect();
    for epoch in 0..config.total_epochs {
        let lr = lr_schedule(config, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<&Array2<f64>> = chunk.iter().map(|&i| &train_data.inputs[i]).collect();
            let targets: Vec<&Array2<f64>> = chunk.iter().map(|&i| &train_data.targets[i]).collect();
            let x = input_batch::<f32>(unet, &inputs)?;
            let step = forward_train(&mut net, &x).and_then(|(y, tape)| {
                let (loss, dout) = batch_loss(&y, &targets, unet, objective, true)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite { layer: "loss".into() });
                }
                Ok((loss, backward(&net, &tape, &dout.expect("gradient requested"))?))
            });
            let (loss, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFinite { layer }) => {
                    log::error!("non-finite values in {layer} at epoch {epoch}");
                    return Err(Error::Diverged {
                        epoch,
                        history: Box::new(history),
                    });
                }
                Err(e) => return Err(e),
            };
            total += loss * chunk.len() as f64;
            adam_step(&mut net, &grads, &mut adam, lr, config);
        }
        let train_loss = total / order.len() as f64;
        let val_loss = mean_loss(&net, &val_data, objective, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                history: Box::new(history),
            });
        }
        log::info!("{kind:?} epoch {epoch}: lr {lr:.1e} train {train_loss:.5} val {val_loss:.5}");
        history.epochs.push(EpochLoss {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainOutcome { params: net, history })
}
