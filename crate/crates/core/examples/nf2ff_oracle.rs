//! Transforms a synthesized near field to far-field cuts and compares them
//! with the dipoles' analytic far field.
//!
//! `cargo run --release --example nf2ff_oracle -- [seed]`

use nfsnet::eval::reference_cuts;
use nfsnet::fieldsynth::{check_truncation, random_scene, synthesize_nearfield, GridSpec, SceneProfile};
use nfsnet::nf2ff::{pattern_error, principal_cuts};

fn main() -> nfsnet::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1001);
    let scene = random_scene(seed, SceneProfile::PlanarArray);
    let grid = GridSpec::square_in_wavelengths(86, 0.5, 4.0, scene.freq_hz)?;
    let near = synthesize_nearfield(&scene, &grid)?;
    let trunc = check_truncation(&near, 40.0)?;
    println!(
        "{} dipoles at {:.2} GHz, edge margin {:.1} dB",
        scene.sources.len(),
        scene.freq_hz / 1e9,
        trunc.margin_db
    );

    let pol = scene.dominant_polarization();
    let (e, h) = principal_cuts(&near, 4, pol)?;
    let (e_ref, h_ref) = reference_cuts(&scene, pol)?;
    println!("E-plane error {:.3} dB", pattern_error(&e, &e_ref, -30.0)?);
    println!("H-plane error {:.3} dB", pattern_error(&h, &h_ref, -30.0)?);
    println!("angle   E(nf2ff)  E(analytic)");
    for i in (0..e.angle_axis.len()).step_by(15) {
        println!("{:>5.0} {:>9.2} {:>11.2}", e.angle_axis[i], e.level_db[i], e_ref.level_db[i]);
    }
    Ok(())
}
