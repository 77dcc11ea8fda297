//! Evaluates the training losses on a few maps and checks one gradient.
//!
//! `cargo run --release --example loss_functions`

use ndarray::Array2;
use nfsnet::losses::{
    composite_mag, composite_phase, mae, ms_ssim, numeric_gradient, periodic_phase_loss, random_test_map,
    LossWeights, MsSsimConfig, PhaseVariant,
};

fn main() -> nfsnet::Result<()> {
    let near = Array2::from_elem((8, 8), 0.01);
    let far = Array2::from_elem((8, 8), 0.99);
    for v in [PhaseVariant::Symmetric, PhaseVariant::Literal] {
        println!(
            "L_pp {v}: (0.99, 0.01) -> {:.2}, (0.01, 0.99) -> {:.2}",
            periodic_phase_loss(&far, &near, v)?.value,
            periodic_phase_loss(&near, &far, v)?.value
        );
    }

    let cfg = MsSsimConfig::default();
    let w = LossWeights::default();
    let target = random_test_map(48, 48, 1);
    let rescaled = target.mapv(|v| 0.9 * v + 0.05);
    let other = random_test_map(48, 48, 2);
    for (name, pred) in [("rescaled", &rescaled), ("unrelated", &other)] {
        println!(
            "{name:>9}: MAE {:.4}  MS-SSIM {:.4}  magnitude loss {:.4}  phase loss {:.4}",
            mae(&target, pred)?.value,
            ms_ssim(&target, pred, &cfg)?.value,
            composite_mag(&target, pred, &w, &cfg)?.value,
            composite_phase(&target, pred, &w, &cfg, PhaseVariant::Symmetric)?.value
        );
    }

    let small = random_test_map(12, 12, 3);
    let pred = random_test_map(12, 12, 4);
    let analytic = periodic_phase_loss(&small, &pred, PhaseVariant::Symmetric)?.grad;
    let numeric = numeric_gradient(&pred, 1e-7, |p| {
        periodic_phase_loss(&small, p, PhaseVariant::Symmetric).unwrap().value
    });
    let err = (&analytic - &numeric).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("L_pp gradient vs central differences: max abs diff {err:.2e}");
    Ok(())
}
