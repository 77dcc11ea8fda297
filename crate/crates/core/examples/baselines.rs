//! Restores one decimated magnitude map with the classical interpolators.
//!
//! `cargo run --release --example baselines -- [factor]`

use std::time::Instant;

use nfsnet::baselines::{bicubic_upsample, cs_reconstruct, kriging_upsample, CsConfig};
use nfsnet::dataio::{channel_maps, downsample};
use nfsnet::fieldsynth::{random_scene, synthesize_nearfield, GridSpec, SceneProfile};
use nfsnet::losses::mae;

fn main() -> nfsnet::Result<()> {
    let factor = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scene = random_scene(4, SceneProfile::LinearArray);
    let grid = GridSpec::square_in_wavelengths(48, 0.5, 4.0, scene.freq_hz)?;
    let near = synthesize_nearfield(&scene, &grid)?;
    let (high, _) = channel_maps(&near.ex)?;
    let low = downsample(&high, factor)?;
    println!("{:?} samples decimated by {factor} to {:?}", high.dim(), low.dim());

    let cs = CsConfig {
        debias: true,
        ..CsConfig::default()
    };
    let runs: [(&str, Box<dyn Fn() -> nfsnet::Result<_>>); 3] = [
        ("bicubic", Box::new(|| bicubic_upsample(&low, factor, 48))),
        ("kriging", Box::new(|| kriging_upsample(&low, factor, 48, None))),
        ("cs", Box::new(|| cs_reconstruct(&low, factor, 48, &cs).map(|r| r.map))),
    ];
    for (name, run) in runs {
        let t0 = Instant::now();
        let out = run()?;
        println!(
            "{name:>8}: MAE {:.4} in {:.2} s",
            mae(&high.values, &out.values)?.value,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
