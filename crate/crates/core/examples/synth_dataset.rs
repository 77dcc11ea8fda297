//! Builds a small seeded dataset, saves it as a bundle and reloads it.
//!
//! `cargo run --release --example synth_dataset -- [out_dir]`

use std::path::PathBuf;

use nfsnet::dataio::{build_dataset, ChannelKind, Dataset, DatasetConfig};

fn main() -> nfsnet::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nfsnet_dataset"));
    let config = DatasetConfig {
        n_scenes: 10,
        grid_n: 48,
        seed: 11,
        ..DatasetConfig::default()
    };
    let ds = build_dataset(&config)?;
    ds.save(&out)?;
    let back = Dataset::load(&out)?;
    assert_eq!(back.pairs.len(), ds.pairs.len());

    println!("bundle written to {}", out.display());
    println!("held-out scenes: {:?}", ds.split.test_scenes);
    for kind in [ChannelKind::Magnitude, ChannelKind::Phase] {
        let train = ds.subset(kind, true);
        let test = ds.subset(kind, false);
        let p = train[0];
        println!(
            "{kind}: {} training / {} held-out pairs, low {:?} -> high {:?}",
            train.len(),
            test.len(),
            p.low.dim(),
            p.high.dim()
        );
    }
    Ok(())
}
