//! Trains a small restoration network on a freshly synthesized dataset and
//! saves its parameter bundle.
//!
//! `cargo run --release --example train_network -- [mag|phase] [epochs] [out_dir]`
//!
//! The defaults finish in about a minute. The toy preset used by the
//! acceptance suite is `UNetConfig { base_channels: 16, .. }` with
//! `TrainConfig::toy` on an 80-scene dataset.

use std::path::PathBuf;

use nfsnet::baselines::bicubic_upsample;
use nfsnet::dataio::{build_dataset, ChannelKind, DatasetConfig};
use nfsnet::losses::Objective;
use nfsnet::neuralnet::{restore, save_params, train, TrainConfig, UNetConfig};

fn main() -> nfsnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: ChannelKind = args.first().map(|s| s.parse()).transpose()?.unwrap_or(ChannelKind::Phase);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let out = args.get(2).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nfsnet_net"));

    let ds = build_dataset(&DatasetConfig {
        n_scenes: 12,
        grid_n: 48,
        seed: 5,
        ..DatasetConfig::default()
    })?;
    let unet = UNetConfig {
        base_channels: 4,
        stages: 3,
        in_size: 48,
        pad_to: 48,
        ..UNetConfig::default()
    };
    let config = TrainConfig {
        total_epochs: epochs,
        decay_every: epochs.div_ceil(2).max(1),
        seed: 1,
        ..TrainConfig::toy(kind)
    };
    let outcome = train(&ds, &config, &unet, &Objective::new(kind))?;
    print!("{}", outcome.history.to_csv());
    println!("initial validation loss {:.4}", outcome.history.initial_val);
    save_params(&outcome.params, Some(kind), &out)?;
    println!("parameters written to {}", out.display());

    let pair = ds.subset(kind, false)[0];
    let net = restore(&outcome.params, &[&pair.low], ds.config.factor)?.remove(0);
    let bic = bicubic_upsample(&pair.low, ds.config.factor, 48)?;
    println!(
        "held-out map error: network {:.4}, bicubic {:.4}",
        Objective::pixel_error(kind, &pair.high.values, &net.values)?,
        Objective::pixel_error(kind, &pair.high.values, &bic.values)?
    );
    Ok(())
}
