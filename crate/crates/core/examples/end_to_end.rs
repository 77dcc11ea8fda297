//! Runs the full restoration pipeline for one scene with every classical
//! method, then splits the bicubic error into magnitude and phase parts.
//!
//! `cargo run --release --example end_to_end -- [mag_net_dir phase_net_dir]`
//!
//! With two trained parameter bundles the network method is included.

use std::path::Path;

use nfsnet::eval::{end_to_end, error_attribution, Method, PipelineConfig, Restorer};
use nfsnet::fieldsynth::{random_scene, synthesize_nearfield, GridSpec, SceneProfile};

fn main() -> nfsnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (restorer, mut methods) = match args.as_slice() {
        [m, p] => (Restorer::with_networks(Path::new(m), Path::new(p))?, vec![Method::NfsNet]),
        _ => (Restorer::default(), vec![]),
    };
    methods.extend([Method::Bicubic, Method::Kriging, Method::Cs, Method::Identity]);

    let scene = random_scene(2, SceneProfile::PlanarArray);
    let grid = GridSpec::square_in_wavelengths(48, 0.5, 4.0, scene.freq_hz)?;
    let cfg = PipelineConfig::default();
    println!("method    E-plane  H-plane  (dB, floor {} dB)", cfg.floor_db);
    for m in methods {
        let r = end_to_end(&scene, &grid, m, &restorer, &cfg, None)?;
        println!("{:<8} {:>8.3} {:>8.3}", m.to_string(), r.errors.e_plane, r.errors.h_plane);
    }

    let near = synthesize_nearfield(&scene, &grid)?;
    let a = error_attribution(&scene, &near, Method::Bicubic, &restorer, &cfg)?;
    println!(
        "bicubic attribution: truth mag + truth phase {:.3}, truth mag + restored phase {:.3}, \
         restored mag + truth phase {:.3}, both restored {:.3}",
        a.gm_gp, a.gm_rp, a.rm_gp, a.rm_rp
    );
    Ok(())
}
