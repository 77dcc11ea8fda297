//! Pattern error of the bicubic pipeline as receiver noise grows.
//!
//! `cargo run --release --example snr_sweep`

use nfsnet::eval::{snr_sweep, Method, PipelineConfig, Restorer};
use nfsnet::fieldsynth::{random_scene, synthesize_nearfield, GridSpec, SceneProfile};

fn main() -> nfsnet::Result<()> {
    let scene = random_scene(6, SceneProfile::PlanarArray);
    let grid = GridSpec::square_in_wavelengths(48, 0.5, 4.0, scene.freq_hz)?;
    let near = synthesize_nearfield(&scene, &grid)?;
    let snrs = [0.0, 10.0, 20.0, 30.0, 40.0, 300.0];
    let curve = snr_sweep(&scene, &near, Method::Bicubic, &Restorer::default(), &PipelineConfig::default(), &snrs, 3)?;
    println!("snr_db,pattern_db");
    for (snr, e) in curve {
        println!("{snr},{e:.3}");
    }
    Ok(())
}
