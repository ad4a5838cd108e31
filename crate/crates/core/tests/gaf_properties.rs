use std::time::Instant;

use gafvit::gaf::{
    encode_feature, encode_matrix, gadf, gadf_from_angles, gasf, gasf_from_angles, normalize_series,
    reconstruct_from_gasf, to_polar, FeatureMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

/// Random series of length 2..=128 mixing smooth, noisy and heavy-tailed
/// shapes; redrawn if constant.
fn random_series(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let m = rng.random_range(2..=128);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let kind = rng.random_range(0..3);
        let s: Vec<f64> = (0..m)
            .map(|j| {
                let u: f64 = rng.random_range(-1.0..1.0);
                match kind {
                    0 => scale * u,
                    1 => scale * ((j as f64 * 0.3).sin() + 0.2 * u),
                    _ => scale * u.powi(3) / (1.0 - u.abs()).max(1e-3),
                }
            })
            .collect();
        if s.iter().any(|&v| v != s[0]) {
            return s;
        }
    }
}

#[test]
fn invariant_suite_on_random_series() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_trig = 0.0f64;
    let mut worst_round_trip = 0.0f64;
    for _ in 0..1000 {
        let series = random_series(&mut rng);
        let norm = normalize_series(&series).unwrap();
        let f = norm.values();
        assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        let s = gasf(&norm);
        let d = gadf(&norm);
        let m = f.len();
        for j in 0..m {
            assert!((s[(j, j)] - (2.0 * f[j] * f[j] - 1.0)).abs() <= TOL);
            assert_eq!(d[(j, j)], 0.0);
            for k in 0..m {
                assert_eq!(s[(j, k)], s[(k, j)]);
                assert_eq!(d[(j, k)], -d[(k, j)]);
                assert!((-1.0..=1.0).contains(&s[(j, k)]) && (-1.0..=1.0).contains(&d[(j, k)]));
            }
        }
        let angles = to_polar(&norm).angles;
        let st = gasf_from_angles(&angles);
        let dt = gadf_from_angles(&angles);
        for (a, b) in s.as_slice().iter().zip(st.as_slice()).chain(d.as_slice().iter().zip(dt.as_slice())) {
            worst_trig = worst_trig.max((a - b).abs());
        }
        let diag: Vec<f64> = (0..m).map(|j| s[(j, j)]).collect();
        let back = reconstruct_from_gasf(&diag).unwrap();
        for (a, b) in back.values().iter().zip(f) {
            let err = (a - b).abs();
            worst_round_trip = worst_round_trip.max(err);
            // One rounding step of 2f²−1 near −1 moves the recovered f by
            // about ε/(4f), so only f away from zero can meet TOL.
            let bound = TOL.max(f64::EPSILON / (2.0 * b));
            assert!(err <= bound, "round trip at f = {b:e} off by {err:e}");
        }
    }
    let elapsed = start.elapsed();
    eprintln!("worst trig {worst_trig:e}, worst round trip {worst_round_trip:e}, {elapsed:?}");
    assert!(worst_trig <= TOL, "algebraic vs trigonometric differ by {worst_trig:e}");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
}

#[test]
fn three_feature_sample_gives_six_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let columns: Vec<Vec<f64>> = (0..3).map(|_| (0..99).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let fm = FeatureMatrix::from_columns(&columns, &["speed", "accel", "jerk"], 0.1).unwrap();
    let image = encode_matrix(&fm).unwrap();
    assert_eq!(image.shape(), (99, 99, 6));
    assert_eq!(
        image.channel_names(),
        ["speed/gasf", "speed/gadf", "accel/gasf", "accel/gadf", "jerk/gasf", "jerk/gadf"]
    );
    let pair = encode_feature(&columns[1]).unwrap();
    assert_eq!(image.channel(2).unwrap(), pair.gasf);
    assert_eq!(image.channel(3).unwrap(), pair.gadf);
}

#[test]
fn encoding_ignores_affine_rescaling() {
    let series = [3.0, -1.0, 4.0, 1.5, 9.0, 2.6];
    let scaled: Vec<f64> = series.iter().map(|v| 2.5 * v - 7.0).collect();
    let a = encode_feature(&series).unwrap();
    let b = encode_feature(&scaled).unwrap();
    for (x, y) in a.gasf.as_slice().iter().zip(b.gasf.as_slice()) {
        assert!((x - y).abs() < 1e-12);
    }
}
