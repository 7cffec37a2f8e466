use qgaf_core::cnn::{fit, prescale_fields, train, Sample, TrainConfig};
use qgaf_core::gaf::encode_window;
use qgaf_core::qgaf::{qgasf_image, QgafConfig};
use qgaf_core::windowing::{labeled_windows, WindowConfig};
use qgaf_core::{AngularField, FieldKind, NormRange};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn returns(n: usize, seed: u64) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| noise.sample(&mut rng)).collect()
}

fn dataset(n_returns: usize, kind: FieldKind, seed: u64) -> Vec<Sample> {
    let series = returns(n_returns, seed);
    let windows = labeled_windows(&series, &WindowConfig::default()).unwrap();
    let fields: Vec<AngularField> = windows
        .iter()
        .map(|w| match kind {
            FieldKind::Qgasf => qgasf_image(&w.values, &QgafConfig { seed, ..Default::default() }, w.start_index as u64).unwrap(),
            _ => encode_window(&w.values, kind, NormRange::Sym).unwrap(),
        })
        .collect();
    prescale_fields(&fields)
        .unwrap()
        .into_iter()
        .zip(&windows)
        .map(|(input, w)| Sample { input, target: w.label })
        .collect()
}

#[test]
fn memorizes_ten_gasf_windows() {
    // At 500 epochs this is seed-dependent; 2000 leaves a wide margin.
    for seed in 0..3 {
        let data = dataset(120, FieldKind::Gasf, seed);
        assert_eq!(data.len(), 10);
        let labels: Vec<f64> = data.iter().map(|s| s.target).collect();
        let mean = labels.iter().sum::<f64>() / 10.0;
        let variance = labels.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 10.0;
        assert!(variance > 2e-3, "a constant predictor would already pass");

        let cfg = TrainConfig { epochs: 2000, ..Default::default() };
        let (_, _, report) = fit(&data, &[], &cfg, seed).unwrap();
        assert!(report.metrics.mse < 1e-3, "seed {seed}: train MSE {}", report.metrics.mse);
    }
}

#[test]
fn loss_descends_on_two_hundred_windows() {
    let data = dataset(2020, FieldKind::Gasf, 6);
    assert!((190..=210).contains(&data.len()));
    let cfg = TrainConfig { epochs: 100, ..Default::default() };
    let (_, report) = train(&data, &cfg).unwrap();
    let first = report.epochs[0].train_loss;
    let last = report.epochs[99].train_loss;
    assert!(last < first, "epoch 100 loss {last} not below epoch 1 loss {first}");
}

#[test]
fn fixed_seed_reproduces_loss_curves() {
    let data = dataset(320, FieldKind::Qgasf, 8);
    let cfg = TrainConfig { epochs: 5, batch_size: 8, shuffle_seed: 99, ..Default::default() };
    let (m1, r1) = train(&data, &cfg).unwrap();
    let (m2, r2) = train(&data, &cfg).unwrap();
    assert_eq!(r1.to_csv(), r2.to_csv());
    assert_eq!(m1, m2);
    let other = TrainConfig { shuffle_seed: 100, ..cfg };
    assert_ne!(train(&data, &other).unwrap().1.to_csv(), r1.to_csv());
}
