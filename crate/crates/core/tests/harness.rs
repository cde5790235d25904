use std::time::Instant;

use deformcert::harness::{
    acr, acr_envelope, bench, certified_accuracy_at, curve, envelope, run_sweep, synthetic_dataset,
    SweepRow, SweepSpec, SweepTable,
};
use deformcert::smoothing::SampleCounts;
use deformcert::{
    smooth_certify, smooth_predict, smooth_vote, CentroidClassifier, CertificationResult,
    ConstantClassifier, DeformationKind, DeformationParams, DistributionFamily, FnClassifier,
    Label, NoiseDistribution, PointCloud, SmoothingConfig,
};
use proptest::prelude::*;

fn arbitrary_table() -> impl Strategy<Value = SweepTable> {
    (1usize..12, 1usize..4).prop_flat_map(|(samples, scales)| {
        let rows = proptest::collection::vec(
            (0usize..3, proptest::option::of(0usize..3), 0.0..2.0f64),
            samples * scales,
        );
        rows.prop_map(move |cells| {
            let grid: Vec<f64> = (1..=scales).map(|s| s as f64 * 0.1).collect();
            let rows = cells
                .into_iter()
                .enumerate()
                .map(|(k, (label, predicted, radius))| SweepRow {
                    index: k / scales,
                    label_true: label,
                    scale_index: k % scales,
                    scale: grid[k % scales],
                    outcome: Ok(CertificationResult {
                        predicted,
                        pa_lower: 0.9,
                        radius: if predicted.is_some() { radius } else { 0.0 },
                        counts: SampleCounts {
                            candidate: predicted.unwrap_or(0),
                            selection_hits: 0,
                            selection_tie: false,
                            estimation_hits: 0,
                        },
                        elapsed: 0.0,
                    }),
                })
                .collect();
            SweepTable {
                spec: SweepSpec::new(DeformationKind::RotZ, DistributionFamily::Uniform, grid),
                samples,
                rows,
            }
        })
    })
}

proptest! {
    #[test]
    fn curves_are_nonincreasing_and_dominated(table in arbitrary_table(), radii in proptest::collection::vec(0.0..2.5f64, 8)) {
        let env = envelope(&table);
        let mut sorted = radii.clone();
        sorted.sort_by(f64::total_cmp);
        for s in 0..table.spec.scales.len() {
            let c = curve(&table, s);
            for w in sorted.windows(2) {
                prop_assert!(c.accuracy_at(w[0]) >= c.accuracy_at(w[1]));
            }
            for &r in &sorted {
                prop_assert!(env.accuracy_at(r) >= c.accuracy_at(r));
                prop_assert!(certified_accuracy_at(&table, s, 0.0) >= certified_accuracy_at(&table, s, r));
                prop_assert_eq!(c.accuracy_at(r), certified_accuracy_at(&table, s, r));
            }
            prop_assert!(acr_envelope(&table) >= acr(&table, s) - 1e-15);
            prop_assert!(acr(&table, s) >= 0.0);
        }
        for w in sorted.windows(2) {
            prop_assert!(env.accuracy_at(w[0]) >= env.accuracy_at(w[1]));
        }
    }
}

#[test]
fn constant_correct_classifier_has_full_accuracy() {
    let data = synthetic_dataset(1, 16, 0.0, 1).unwrap();
    let data = vec![data[2].clone()];
    let spec = SweepSpec::new(
        DeformationKind::RotZ,
        DistributionFamily::Uniform,
        vec![0.3],
    );
    let t = run_sweep(&spec, &data, &ConstantClassifier(data[0].1)).unwrap();
    assert_eq!(certified_accuracy_at(&t, 0, 0.0), 1.0);
    assert_eq!(certified_accuracy_at(&t, 0, 10.0), 0.0);
}

#[test]
fn sweeps_reproduce_exactly() {
    let data = synthetic_dataset(2, 32, 0.01, 3).unwrap();
    let clf = CentroidClassifier::fit(&data).unwrap();
    let mut spec = SweepSpec::new(
        DeformationKind::TaperZ,
        DistributionFamily::Gaussian,
        vec![0.1, 0.3, 0.9],
    );
    spec.n0 = 30;
    spec.n = 200;
    spec.base_seed = 8;
    let a = run_sweep(&spec, &data, &clf).unwrap();
    let b = run_sweep(&spec, &data, &clf).unwrap();
    assert_eq!(a.rows.len(), data.len() * 3);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let (x, y) = (x.outcome.as_ref().unwrap(), y.outcome.as_ref().unwrap());
        assert_eq!(x.counts, y.counts);
        assert_eq!(x.radius.to_bits(), y.radius.to_bits());
    }
}

#[test]
fn random_labels_abstain() {
    // a deterministic hash of the cloud stands in for a random label
    let clf = FnClassifier(|c: &PointCloud| {
        let h = c.points()[0][0].to_bits() ^ c.points()[0][1].to_bits().rotate_left(17);
        (h.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 62) as Label
    });
    let cloud = PointCloud::new(vec![[0.3, 0.4, 0.5], [-0.3, -0.4, -0.5]]).unwrap();
    let config = SmoothingConfig::new(NoiseDistribution::Gaussian(0.5));
    let mut abstained = 0;
    for seed in 0..20 {
        let r = smooth_certify(&clf, &cloud, DeformationKind::Translation, &config, seed).unwrap();
        abstained += usize::from(r.abstained());
    }
    assert_eq!(abstained, 20);
}

#[test]
fn boundary_threshold_abstains() {
    let clf = FnClassifier(|c: &PointCloud| usize::from(c.centroid()[0] > 0.0));
    let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
    let config = SmoothingConfig::new(NoiseDistribution::Gaussian(0.3));
    let mut predicted = 0;
    for seed in 0..20 {
        let r = smooth_certify(&clf, &cloud, DeformationKind::Translation, &config, seed).unwrap();
        assert!(r.abstained());
        let p = smooth_predict(&clf, &cloud, DeformationKind::Translation, &config, seed).unwrap();
        predicted += usize::from(p.predicted.is_some());
    }
    // a level-α test on a fair coin rejects about α of the time
    assert!(predicted <= 1);
}

#[test]
fn vote_at_zero_agrees_with_confident_certificates() {
    let data = synthetic_dataset(3, 32, 0.01, 9).unwrap();
    let clf = CentroidClassifier::fit(&data).unwrap();
    let config = SmoothingConfig {
        n0: 50,
        n: 300,
        ..SmoothingConfig::new(NoiseDistribution::Uniform(1.6))
    };
    let mut compared = 0;
    for (i, (cloud, _)) in data.iter().enumerate() {
        let r = smooth_certify(&clf, cloud, DeformationKind::RotZ, &config, i as u64).unwrap();
        if r.pa_lower > 0.7 {
            let zero = DeformationParams::zeros(DeformationKind::RotZ, cloud.len());
            let v =
                smooth_vote(&clf, cloud, &zero, &config, 10 * config.n, 1000 + i as u64).unwrap();
            assert_eq!(Some(v), r.predicted);
            compared += 1;
        }
    }
    assert!(compared > 0);
}

#[test]
fn bench_time_is_linear_in_n() {
    let data = synthetic_dataset(3, 256, 0.01, 10).unwrap();
    let clf = CentroidClassifier::fit(&data).unwrap();
    let time = |n: u64| {
        let mut spec = SweepSpec::new(
            DeformationKind::Translation,
            DistributionFamily::Gaussian,
            vec![0.2],
        );
        spec.n0 = 100;
        spec.n = n;
        bench(&spec, &data, &clf, 3, "test").unwrap().rows[0].seconds_median
    };
    let start = Instant::now();
    let (t1, t2) = (time(1000), time(2000));
    // selection samples are fixed, so the ratio is (100 + 2n) / (100 + n)
    let ratio = t2 / t1;
    assert!(
        (1.6..=2.3).contains(&ratio),
        "ratio {ratio}, {:?}",
        start.elapsed()
    );
}
