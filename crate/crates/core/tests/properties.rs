use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;

use nfsnet::baselines::{bicubic_upsample, kriging_upsample, Kriging, VariogramKind, VariogramModel};
use nfsnet::dataio::{normalize, ChannelKind};
use nfsnet::eval::ChannelSet;
use nfsnet::fieldsynth::{analytic_farfield, random_scene, synthesize_nearfield, FieldMap, GridSpec, SceneProfile};
use nfsnet::neuralnet::{restore, NetParams, UNetConfig};
use nfsnet::nf2ff::{plane_wave_spectrum, principal_cuts, Polarization};

fn profile() -> impl Strategy<Value = SceneProfile> {
    prop::sample::select(SceneProfile::ALL.to_vec())
}

fn complex_map(n: usize, values: &[(f64, f64)]) -> Array2<Complex64> {
    Array2::from_shape_fn((n, n), |(j, i)| {
        let (re, im) = values[(j * n + i) % values.len()];
        Complex64::new(re, im)
    })
}

fn magnitude_map(n: usize, values: &[f64]) -> nfsnet::dataio::ChannelMap {
    let raw = Array2::from_shape_fn((n, n), |(j, i)| values[(j * n + i) % values.len()]);
    normalize(&raw, ChannelKind::Magnitude).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_energy_matches_map_energy(
        n in 4usize..24,
        spacing in 0.2f64..0.5,
        pad in 1usize..5,
        values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64),
    ) {
        let grid = GridSpec::square_in_wavelengths(n, spacing, 3.0, 5e9).unwrap();
        let map = FieldMap::new(grid, complex_map(n, &values), complex_map(n, &values[values.len() / 2..])).unwrap();
        let spatial = map.power() * grid.dx * grid.dy;
        prop_assume!(spatial > 0.0);
        let e = plane_wave_spectrum(&map, pad).unwrap().energy();
        prop_assert!((e - spatial).abs() <= 1e-9 * spatial);
    }

    #[test]
    fn cuts_are_peak_normalized_and_floored(seed in 0u64..500, p in profile()) {
        let scene = random_scene(seed, p);
        let grid = GridSpec::square_in_wavelengths(32, 0.5, 4.0, scene.freq_hz).unwrap();
        let near = synthesize_nearfield(&scene, &grid).unwrap();
        for pol in [Polarization::X, Polarization::Y] {
            let (e, h) = principal_cuts(&near, 2, pol).unwrap();
            for cut in [e, h] {
                prop_assert_eq!(cut.level_db.len(), 181);
                let max = cut.level_db.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert!(max.abs() < 1e-9);
                prop_assert!(cut.level_db.iter().all(|v| v.is_finite() && *v >= -80.0));
            }
        }
    }

    #[test]
    fn far_field_magnitude_ignores_scene_translation(
        seed in 0u64..500,
        p in profile(),
        dx in -1.0f64..1.0,
        dy in -1.0f64..1.0,
    ) {
        let scene = random_scene(seed, p);
        let lambda = scene.wavelength();
        let moved = scene.translated([dx * lambda, dy * lambda, 0.0]);
        let theta: Vec<f64> = (0..10).map(|i| i as f64 * 0.15).collect();
        let phi: Vec<f64> = (0..8).map(|i| i as f64 * PI / 4.0).collect();
        let a = analytic_farfield(&scene, &theta, &phi).unwrap();
        let b = analytic_farfield(&moved, &theta, &phi).unwrap();
        let scale = a.e_theta.iter().chain(a.e_phi.iter()).map(|v| v.norm()).fold(0.0, f64::max);
        for (x, y) in a.e_theta.iter().zip(&b.e_theta).chain(a.e_phi.iter().zip(&b.e_phi)) {
            prop_assert!((x.norm() - y.norm()).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn complex_rescaling_leaves_cuts_unchanged(seed in 0u64..500, p in profile(), mag in 0.01f64..100.0, ph in -PI..PI) {
        let scene = random_scene(seed, p);
        let grid = GridSpec::square_in_wavelengths(24, 0.5, 4.0, scene.freq_hz).unwrap();
        let a = synthesize_nearfield(&scene, &grid).unwrap();
        let b = synthesize_nearfield(&scene.scaled(Complex64::from_polar(mag, ph)), &grid).unwrap();
        let pol = scene.dominant_polarization();
        let (ca, cb) = (principal_cuts(&a, 2, pol).unwrap(), principal_cuts(&b, 2, pol).unwrap());
        for (x, y) in ca.0.level_db.iter().zip(&cb.0.level_db).chain(ca.1.level_db.iter().zip(&cb.1.level_db)) {
            prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn channel_split_round_trips(n in 3usize..16, values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..40)) {
        let grid = GridSpec::square_in_wavelengths(n, 0.5, 4.0, 3e9).unwrap();
        let field = FieldMap::new(grid, complex_map(n, &values), complex_map(n, &values[values.len() / 3..])).unwrap();
        // constant magnitudes have no min-max range to normalize by
        let set = ChannelSet::from_field(&field);
        prop_assume!(set.is_ok());
        let back = set.unwrap().to_field(grid).unwrap();
        let scale = field.ex.iter().chain(field.ey.iter()).map(|v| v.norm()).fold(1e-12, f64::max);
        for (a, b) in field.ex.iter().zip(&back.ex).chain(field.ey.iter().zip(&back.ey)) {
            prop_assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn interpolators_pass_through_the_anchors(
        low_n in 4usize..9,
        factor in 2usize..4,
        values in prop::collection::vec(0.0f64..1.0, 4..81),
    ) {
        let low = magnitude_map(low_n, &values);
        let target = (low_n - 1) * factor + 1;
        let model = VariogramModel { kind: VariogramKind::Exponential, nugget: 0.0, sill: 1.0, range: 2.0 * factor as f64 };
        for up in [bicubic_upsample(&low, factor, target).unwrap(), kriging_upsample(&low, factor, target, Some(model)).unwrap()] {
            for ((j, i), v) in low.values.indexed_iter() {
                prop_assert!((up.values[[j * factor, i * factor]] - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kriging_weights_sum_to_one(
        points in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..12),
        at in (0.0f64..10.0, 0.0f64..10.0),
        range in 0.5f64..8.0,
    ) {
        let mut uniq = points.clone();
        uniq.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-3 && (a.1 - b.1).abs() < 1e-3);
        let values: Vec<f64> = uniq.iter().map(|p| p.0.sin() + p.1).collect();
        let model = VariogramModel { kind: VariogramKind::Exponential, nugget: 0.0, sill: 1.0, range };
        if let Ok(k) = Kriging::fit(uniq, &values, model) {
            let w = k.weights_at(at).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn network_output_stays_in_unit_interval(seed in 0u64..1000, values in prop::collection::vec(0.0f64..1.0, 4..64)) {
        let config = UNetConfig { base_channels: 2, stages: 2, in_size: 12, pad_to: 12, ..UNetConfig::default() };
        let net = NetParams::<f64>::init(&config, seed).unwrap();
        let low = magnitude_map(4, &values);
        let out = restore(&net, &[&low], 3).unwrap();
        prop_assert_eq!(out[0].dim(), (12, 12));
        prop_assert!(out[0].values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
