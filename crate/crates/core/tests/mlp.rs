use deformcert::harness::synthetic_dataset;
use deformcert::{mlp_train, MlpClassifier, PointCloud, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn central_difference(
    model: &MlpClassifier,
    cloud: &PointCloud,
    label: usize,
    i: usize,
    h: f64,
) -> f64 {
    let base = model.params();
    let mut m = model.clone();
    let mut p = base.clone();
    p[i] = base[i] + h;
    m.set_params(&p).unwrap();
    let up = m.loss(cloud, label);
    p[i] = base[i] - h;
    m.set_params(&p).unwrap();
    let down = m.loss(cloud, label);
    (up - down) / (2.0 * h)
}

#[test]
fn gradient_matches_finite_differences() {
    let cloud = PointCloud::new(vec![[0.3, -0.2, 0.8], [-0.5, 0.4, 0.1]]).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (mut checked, mut skipped) = (0usize, 0usize);
    for draw in 0..100 {
        let mut model = MlpClassifier::new(3, draw).unwrap();
        let params: Vec<f64> = model
            .params()
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        model.set_params(&params).unwrap();
        let label = draw as usize % 3;
        let (_, grad) = model.loss_and_gradient(&cloud, label);
        let grad = grad.values();
        for i in (0..params.len()).step_by(7) {
            let h = 1e-5;
            let fd = central_difference(&model, &cloud, label, i, h);
            let fd_half = central_difference(&model, &cloud, label, i, h / 2.0);
            // a ReLU or max-pool kink inside the stencil
            if (fd - fd_half).abs() > 1e-6 {
                skipped += 1;
                continue;
            }
            checked += 1;
            let tol = 1e-6 * (1.0 + grad[i].abs());
            assert!(
                (fd - grad[i]).abs() < tol,
                "draw {draw}, param {i}: analytic {} vs numeric {fd}",
                grad[i]
            );
        }
    }
    assert!(
        skipped * 20 < checked,
        "too many kinks: {skipped} of {}",
        checked + skipped
    );
}

#[test]
fn trains_to_high_accuracy_on_shapes() {
    let train = synthetic_dataset(40, 128, 0.01, 1).unwrap();
    let test = synthetic_dataset(25, 128, 0.01, 2).unwrap();
    let config = TrainConfig {
        epochs: 15,
        seed: 3,
        ..TrainConfig::default()
    };
    let (model, log) = mlp_train(&train, &config).unwrap();
    assert!(log.last().unwrap().loss < log[0].loss);
    let correct = test.iter().filter(|(c, l)| model.predict(c) == *l).count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

#[test]
fn training_is_deterministic() {
    let data = synthetic_dataset(5, 32, 0.01, 4).unwrap();
    let config = TrainConfig {
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let (a, _) = mlp_train(&data, &config).unwrap();
    let (b, _) = mlp_train(&data, &config).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn weights_survive_a_file_round_trip() {
    let model = MlpClassifier::new(4, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    model.save_weights(&path).unwrap();
    let back = MlpClassifier::load_weights(&path).unwrap();
    assert_eq!(model.params(), back.params());
}
