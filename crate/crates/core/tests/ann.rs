use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use stochid_core::ann::{
    fit_normalization, gradient, loss_and_gradient, normalized_mse, regression_r, split_indices, train, MlpModel,
    TrainConfig, TrainingData,
};
use stochid_core::Error;

fn random_model(rng: &mut impl Rng) -> (MlpModel, Array2<f64>, Array2<f64>) {
    let n_in = rng.random_range(1..=5);
    let depth = rng.random_range(1..=2);
    let mut sizes = vec![n_in];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=6));
    }
    sizes.push(rng.random_range(1..=3));
    let mut model = MlpModel::zeros(&sizes).unwrap();
    let p: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
    model.set_params(&p);
    let batch = rng.random_range(1..=8);
    let x = Array2::from_shape_fn((batch, n_in), |_| rng.random_range(-1.0..1.0));
    let t = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.random_range(-1.0..1.0));
    (model, x, t)
}

#[test]
fn backprop_matches_central_differences_on_random_models() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (model, x, t) = random_model(&mut rng);
        let sizes = &model.layer_sizes;
        let theta = model.params();
        let mut g = vec![0.0; theta.len()];
        loss_and_gradient(sizes, &theta, x.view(), t.view(), Some(&mut g));
        let mut fd = vec![0.0; theta.len()];
        let mut tp = theta.clone();
        for i in 0..theta.len() {
            tp[i] = theta[i] + h;
            let up = loss_and_gradient(sizes, &tp, x.view(), t.view(), None);
            tp[i] = theta[i] - h;
            let down = loss_and_gradient(sizes, &tp, x.view(), t.view(), None);
            tp[i] = theta[i];
            fd[i] = (up - down) / (2.0 * h);
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale > 0.0 { diff / scale } else { diff };
        worst = worst.max(rel);
    }
    assert!(worst < 1e-6, "worst relative gradient error {worst:e}");
}

#[test]
fn physical_unit_gradient_uses_normalized_targets() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let (mut model, x, t) = random_model(&mut rng);
    let n_in = model.input_dim();
    let n_out = model.output_dim();
    model.input_norm = stochid_core::ann::Normalization { min: vec![-3.0; n_in], max: vec![5.0; n_in] };
    model.output_norm = stochid_core::ann::Normalization { min: vec![10.0; n_out], max: vec![30.0; n_out] };
    let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| model.input_norm.invert(r.as_slice().unwrap())).collect();
    let ts: Vec<Vec<f64>> = t.rows().into_iter().map(|r| model.output_norm.invert(r.as_slice().unwrap())).collect();
    let g = gradient(&model, &xs, &ts).unwrap();
    let mut want = vec![0.0; model.n_params()];
    loss_and_gradient(&model.layer_sizes, &model.params(), x.view(), t.view(), Some(&mut want));
    for (a, b) in g.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn gradient_is_linear_in_the_residual_for_a_linear_network() {
    let mut model = MlpModel::zeros(&[3, 2]).unwrap();
    model.set_params(&[0.3, -0.2, 0.5, 0.1, 0.4, -0.7, 0.05, -0.1]);
    let xs = vec![vec![0.2, -0.4, 0.9], vec![-0.5, 0.3, 0.1]];
    let y = model.forward_batch(&xs).unwrap();
    let shifted = |c: f64| -> Vec<Vec<f64>> { y.iter().map(|r| r.iter().map(|v| v - c * 0.3).collect()).collect() };
    let g1 = gradient(&model, &xs, &shifted(1.0)).unwrap();
    let g2 = gradient(&model, &xs, &shifted(2.0)).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() < 1e-14);
    }
}

#[test]
fn normalized_mse_matches_double_loop() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let n = 57;
    let y: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
    let t: Vec<[f64; 4]> = (0..n).map(|_| std::array::from_fn(|j| rng.random_range(0.0..(j + 1) as f64))).collect();
    let mut total = 0.0;
    for j in 0..4 {
        let lo = t.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = t.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for i in 0..n {
            s += ((y[i][j] - t[i][j]) / (hi - lo)).powi(2);
        }
        total += s / n as f64;
    }
    let want = total / 4.0;
    let got = normalized_mse(&y, &t).unwrap();
    assert!((got - want).abs() <= 1e-14 * want);
    assert_eq!(normalized_mse(&t, &t).unwrap(), 0.0);
    // a unit error on a component with range 2
    let t1 = [[0.0, 0.0, 0.0, 0.0], [2.0, 2.0, 2.0, 2.0]];
    let y1 = [[1.0, 0.0, 0.0, 0.0], [2.0, 2.0, 2.0, 2.0]];
    assert!((normalized_mse(&y1, &t1).unwrap() - 0.5 / 16.0).abs() < 1e-15);
    let flat = [[1.0, 0.0], [1.0, 1.0]];
    assert!(matches!(normalized_mse(&flat, &flat), Err(Error::Domain(_))));
}

fn toy_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let t = x.iter().map(|r| vec![(r[0] + 0.5 * r[1]).sin(), r[2] * r[0] + 0.2 * rng.random_range(-1.0..1.0)]).collect();
    (x, t)
}

fn quick_cfg() -> TrainConfig {
    TrainConfig { hidden: vec![6], max_iterations: 300, restarts: 2, seed: 3, ..Default::default() }
}

#[test]
fn affine_target_rescaling_leaves_metrics_unchanged() {
    let (x, t) = toy_data(300, 1);
    // short runs keep rounding differences from being amplified by the optimizer
    let cfg = TrainConfig { max_iterations: 40, ..quick_cfg() };
    let a = train(&x, &t, &cfg).unwrap();
    let scaled: Vec<Vec<f64>> = t.iter().map(|r| vec![1e9 * r[0] + 3e9, 0.01 * r[1] + 4.0]).collect();
    let b = train(&x, &scaled, &cfg).unwrap();
    let close = |p: f64, q: f64| (p - q).abs() <= 1e-6 * p.abs().max(1e-12);
    assert!(close(a.report.test_mse, b.report.test_mse), "{} vs {}", a.report.test_mse, b.report.test_mse);
    assert!(close(a.report.validation_mse, b.report.validation_mse));
    assert_eq!(a.report.best_iteration, b.report.best_iteration);
    for (p, q) in a.report.r_test.iter().zip(&b.report.r_test) {
        assert!((p - q).abs() < 1e-6);
    }
    // metric functions alone
    let y: Vec<Vec<f64>> = x.iter().map(|r| a.model.forward(r).unwrap()).collect();
    let ys: Vec<Vec<f64>> = y.iter().map(|r| vec![1e9 * r[0] + 3e9, 0.01 * r[1] + 4.0]).collect();
    let (m1, m2) = (normalized_mse(&y, &t).unwrap(), normalized_mse(&ys, &scaled).unwrap());
    assert!((m1 - m2).abs() <= 1e-9 * m1, "{m1} vs {m2}");
    let (r1, r2) = (regression_r(&y, &t).unwrap(), regression_r(&ys, &scaled).unwrap());
    for (p, q) in r1.iter().zip(&r2) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn training_report_invariants() {
    let (x, t) = toy_data(400, 2);
    let out = train(&x, &t, &quick_cfg()).unwrap();
    let rep = &out.report;
    let best_val = rep.history.iter().map(|r| r.validation).fold(f64::INFINITY, f64::min);
    assert_eq!(rep.validation_mse, best_val);
    let at_best = rep.history.iter().find(|r| r.iteration == rep.best_iteration).unwrap();
    assert_eq!(at_best.train, rep.train_mse);
    assert!(rep.train_mse <= rep.history[0].train);
    // selected restart has the lowest test mse
    let min_test = out.restarts.iter().flatten().map(|r| r.test_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(rep.test_mse, min_test);
    // identical inputs give identical training
    let again = train(&x, &t, &quick_cfg()).unwrap();
    assert_eq!(again.model, out.model);
    assert_eq!(again.report.history, out.report.history);
}

#[test]
fn split_is_deterministic_with_floor_sizes() {
    for n in [7, 20, 101, 2000] {
        let s = split_indices(n, [0.7, 0.15, 0.15], 9);
        assert_eq!(s.train.len(), (0.7 * n as f64).floor() as usize);
        assert_eq!(s.validation.len(), (0.15 * n as f64).floor() as usize);
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        assert_eq!(split_indices(n, [0.7, 0.15, 0.15], 9), s);
    }
    assert_ne!(split_indices(100, [0.7, 0.15, 0.15], 1), split_indices(100, [0.7, 0.15, 0.15], 2));
}

#[test]
fn normalization_comes_from_the_training_split() {
    let n = 200;
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let t: Vec<Vec<f64>> = (0..n).map(|i| vec![2.0 * i as f64]).collect();
    let data = TrainingData::new(&x, &t, [0.7, 0.15, 0.15], 4).unwrap();
    let train_x: Vec<Vec<f64>> = data.split.train.iter().map(|&i| x[i].clone()).collect();
    let norm = fit_normalization(&train_x).unwrap();
    let cfg = TrainConfig { hidden: vec![3], max_iterations: 5, restarts: 1, seed: 4, ..Default::default() };
    let out = train(&x, &t, &cfg).unwrap();
    assert_eq!(out.model.input_norm, norm);
    // some held-out row falls outside the training range and still evaluates
    let outside = x.iter().find(|r| r[0] < norm.min[0] || r[0] > norm.max[0]);
    if let Some(r) = outside {
        let z = norm.apply(r);
        assert!(z[0].abs() > 1.0);
        assert!(out.model.forward(r).unwrap()[0].is_finite());
    }
    assert!(matches!(fit_normalization(&[vec![1.0, 2.0], vec![1.0, 3.0]]), Err(Error::Config(_))));
}

#[test]
fn model_file_round_trip_and_corruption() {
    let (x, t) = toy_data(100, 3);
    let mut out = train(&x, &t, &TrainConfig { restarts: 1, max_iterations: 50, ..quick_cfg() }).unwrap();
    out.model.training_manifest_sha256 = Some("ab".repeat(32));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.model.save(&path).unwrap();
    let back = MlpModel::load(&path).unwrap();
    assert_eq!(back, out.model);
    for r in &x {
        let (a, b) = (out.model.forward(r).unwrap(), back.forward(r).unwrap());
        assert_eq!(a, b);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(MlpModel::load(&path), Err(Error::Parse { .. })));
    std::fs::write(&path, text.replace("\"format_version\": \"1\"", "\"format_version\": \"0\"")).unwrap();
    assert!(matches!(MlpModel::load(&path), Err(Error::Version { .. })));
    let mut bad = out.model.clone();
    bad.weights[0].pop();
    std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(matches!(MlpModel::load(&path), Err(Error::Parse { .. })));
    assert!(matches!(out.model.forward(&[f64::NAN, 0.0, 0.0]), Err(Error::Domain(_))));
}

proptest! {
    #[test]
    fn batched_forward_equals_per_sample(seed in any::<u64>(), rows in prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 1..12)) {
        let mut m = MlpModel::zeros(&[3, 5, 4, 2]).unwrap();
        m.init_nguyen_widrow(seed);
        let batch = m.forward_batch(&rows).unwrap();
        for (r, b) in rows.iter().zip(&batch) {
            let single = m.forward(r).unwrap();
            for (p, q) in single.iter().zip(b) {
                prop_assert!((p - q).abs() <= 1e-14 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn normalization_round_trip(rows in prop::collection::vec(prop::array::uniform2(-1e6..1e6f64), 2..20), probe in prop::array::uniform2(-1e6..1e6f64)) {
        prop_assume!(fit_normalization(&rows).is_ok());
        let n = fit_normalization(&rows).unwrap();
        let back = n.invert(&n.apply(&probe));
        for (a, b) in back.iter().zip(probe) {
            prop_assert!((a - b).abs() <= 1e-14 * 1e6f64.max(b.abs()) * 4.0);
        }
    }
}
