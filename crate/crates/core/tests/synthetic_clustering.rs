use gafvit::clustering::{
    class_summaries, elbow_select, label_dataset, matched_agreement, qb_cluster, qb_cluster_endpoints, theta_grid,
    DistanceMode, EndpointFeature,
};
use gafvit::data::{synth_generate, Regime};
use gafvit::gaf::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(seed: u64, counts: &[usize]) -> (Vec<FeatureMatrix>, Vec<usize>) {
    let d = synth_generate(&Regime::reference(), counts, seed).unwrap();
    let labels = d.labels().unwrap();
    (d.samples.into_iter().map(|s| s.features).collect(), labels)
}

#[test]
fn elbow_recovers_four_regimes() {
    let (data, truth) = features(11, &[100, 100, 100, 100]);
    let r = elbow_select(&data, &theta_grid(0.02, 0.5, 0.02), DistanceMode::Angular).unwrap();
    assert!(!r.degenerate);
    assert_eq!(r.clusters, 4, "{:?}", r.table);
    let model = qb_cluster(&data, r.threshold, DistanceMode::Angular).unwrap();
    let (labels, _) = label_dataset(&model, &data);
    assert!(matched_agreement(&truth, &labels).unwrap() >= 0.95);
}

#[test]
fn elbow_is_deterministic() {
    let (data, _) = features(3, &[30, 30, 30, 30]);
    let grid = theta_grid(0.02, 0.5, 0.02);
    assert_eq!(
        elbow_select(&data, &grid, DistanceMode::Angular).unwrap(),
        elbow_select(&data, &grid, DistanceMode::Angular).unwrap()
    );
}

/// Forty unit vectors in two tight bundles 90° apart.
fn bundles(seed: u64) -> (Vec<EndpointFeature>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..40 {
        let k = rng.random_range(0..2usize);
        let angle = k as f64 * std::f64::consts::FRAC_PI_2 + rng.random_range(-0.05..0.05);
        let r = rng.random_range(0.5..3.0);
        e.push(EndpointFeature::new(vec![r * angle.cos(), r * angle.sin(), 0.0]).unwrap());
        truth.push(k);
    }
    (e, truth)
}

#[test]
fn two_bundles_and_replay_oracle() {
    let (e, truth) = bundles(5);
    let model = qb_cluster_endpoints(&e, 0.1, DistanceMode::Angular).unwrap();
    assert_eq!(model.num_clusters(), 2);
    assert_eq!(matched_agreement(&truth, &model.assignments).unwrap(), 1.0);

    // Replay: rebuild centroids from the decision log step by step and check
    // every recorded choice against an exhaustive nearest-centroid search.
    let mut sums: Vec<(Vec<f64>, usize)> = Vec::new();
    for step in &model.log {
        let v = e[step.sample].values();
        let mut best: Option<(usize, f64)> = None;
        for (k, (mean, _)) in sums.iter().enumerate() {
            let a = EndpointFeature::new(mean.clone()).unwrap();
            let d = gafvit::clustering::cosine_distance(&a, &e[step.sample]).unwrap();
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if d <= 0.1 => {
                assert!(!step.seeded);
                assert_eq!(step.cluster, k);
                let (mean, n) = &mut sums[k];
                *n += 1;
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += (x - *m) / *n as f64;
                }
            }
            _ => {
                assert!(step.seeded);
                assert_eq!(step.cluster, sums.len());
                sums.push((v.to_vec(), 1));
            }
        }
    }
    for ((mean, n), c) in sums.iter().zip(&model.centroids) {
        assert_eq!(*n, c.count);
        for (a, b) in mean.iter().zip(&c.mean) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    // Centroids equal the plain mean of their members.
    for (k, c) in model.centroids.iter().enumerate() {
        let members: Vec<&[f64]> = model
            .assignments
            .iter()
            .zip(&e)
            .filter(|(&a, _)| a == k)
            .map(|(_, v)| v.values())
            .collect();
        for d in 0..3 {
            let mean = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            assert!((mean - c.mean[d]).abs() < 1e-9);
        }
    }
}

#[test]
fn single_cluster_data_is_degenerate() {
    let e: Vec<FeatureMatrix> = (0..10)
        .map(|i| {
            let speed: Vec<f64> = (0..5).map(|j| 1.0 + (i + j) as f64).collect();
            FeatureMatrix::from_columns(&[speed.clone(), speed], &["a", "b"], 0.1).unwrap()
        })
        .collect();
    let r = elbow_select(&e, &theta_grid(0.02, 0.5, 0.02), DistanceMode::Angular).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.threshold, 0.02);
    let model = qb_cluster(&e, r.threshold, DistanceMode::Angular).unwrap();
    let (_, summary) = label_dataset(&model, &e);
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].count, 10);
}

#[test]
fn regime_statistics_follow_generator() {
    let regimes = Regime::reference();
    let d = synth_generate(&regimes, &[500, 0, 0, 0], 21).unwrap();
    let (data, labels): (Vec<_>, Vec<_>) = d.samples.into_iter().map(|s| (s.features, s.label.unwrap())).unzip();
    let s = class_summaries(&labels, &data, 1);
    assert!((s[0].speed_mean - 7.05).abs() <= 0.5, "{:?}", s[0]);

    let (data, labels) = features(4, &[200, 200, 200, 200]);
    let s = class_summaries(&labels, &data, 4);
    for (summary, target) in s.iter().zip([7.05, 6.66, 2.91, 4.25]) {
        assert!((summary.speed_mean - target).abs() <= 0.5, "{summary:?}");
    }
    // Slow regime has the calmest acceleration and jerk.
    assert!(s[0].accel_std > s[2].accel_std && s[1].accel_std > s[2].accel_std);
    assert!(s[0].jerk_std > s[1].jerk_std && s[1].jerk_std > s[2].jerk_std);
}
