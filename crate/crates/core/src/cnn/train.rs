use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, AdamConfig, AdamState, Architecture, CnnError, CnnModel, LossKind, Result, Tensor,
};
use crate::gaf::{AngularField, FieldKind};

/// One training example: a flattened square image and its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Shuffle once, then cut into folds.
    #[default]
    Shuffled,
    /// Folds are contiguous runs in dataset order.
    Contiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub folds: usize,
    pub train_fraction: f64,
    pub shuffle_seed: u64,
    pub fold_mode: FoldMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            loss: LossKind::Mse,
            adam: AdamConfig::default(),
            folds: 5,
            train_fraction: 0.8,
            shuffle_seed: 0,
            fold_mode: FoldMode::Shuffled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CnnError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} not in (0, 1)", self.train_fraction));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mae: Option<f64>,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub epochs: Vec<EpochRecord>,
    /// Final metrics on the validation set (training set when there is none).
    pub metrics: Metrics,
}

impl FoldReport {
    /// `epoch,train_loss,val_loss` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:.17e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.17e},{}\n", e.epoch, e.train_loss, val));
        }
        out
    }
}

/// Scales fields into the `[0, 1]` input range. Fields whose values can be
/// negative map through `(v + 1) / 2`; a QGASF set that is already
/// non-negative is used as is.
pub fn prescale_fields(fields: &[AngularField]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = fields.first() else {
        return Ok(Vec::new());
    };
    if let Some(f) = fields.iter().find(|f| f.kind != first.kind || f.size != first.size) {
        return Err(CnnError::Shape(format!(
            "mixed dataset: {} {}x{} alongside {} {}x{}",
            first.kind, first.size, first.size, f.kind, f.size, f.size
        )));
    }
    let shift = match first.kind {
        FieldKind::Qgasf => fields.iter().any(|f| f.data.iter().any(|&v| v < 0.0)),
        _ => true,
    };
    Ok(fields
        .iter()
        .map(|f| {
            if shift {
                f.data.iter().map(|v| (v + 1.0) / 2.0).collect()
            } else {
                f.data.clone()
            }
        })
        .collect())
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn input_size(samples: &[Sample]) -> Result<usize> {
    let first = samples.first().ok_or(CnnError::TooFewSamples { found: 0, needed: 1 })?;
    let n = (first.input.len() as f64).sqrt().round() as usize;
    if n * n != first.input.len() {
        return Err(CnnError::Shape(format!("input of {} values is not square", first.input.len())));
    }
    if let Some(i) = samples.iter().position(|s| s.input.len() != n * n) {
        return Err(CnnError::Shape(format!("sample {i} has a different size")));
    }
    if let Some(i) = samples.iter().position(|s| !s.target.is_finite()) {
        return Err(CnnError::Shape(format!("sample {i} has a non-finite target")));
    }
    Ok(n)
}

/// Mean absolute and squared error of `model` on `samples`.
pub fn evaluate(model: &CnnModel, samples: &[Sample]) -> Result<Metrics> {
    let mut abs = 0.0;
    let mut sq = 0.0;
    for chunk in samples.chunks(256) {
        let batch = Tensor::batch_from_images(chunk.iter().map(|s| &s.input[..]), model.arch.input_size)?;
        let pred = model.forward(&batch)?;
        for (p, s) in pred.data().iter().zip(chunk) {
            let e = p - s.target;
            abs += e.abs();
            sq += e * e;
        }
    }
    let n = samples.len() as f64;
    Ok(Metrics { mae: abs / n, mse: sq / n })
}

/// Trains a fresh model on `train`, recording validation metrics on `val`
/// after every epoch. `run_seed` fixes weight init and batch order.
pub fn fit(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    run_seed: u64,
) -> Result<(CnnModel, AdamState, FoldReport)> {
    cfg.validate()?;
    let size = input_size(train)?;
    if !val.is_empty() && input_size(val)? != size {
        return Err(CnnError::Shape("validation and training sizes differ".into()));
    }
    let mut model = CnnModel::init(Architecture::new(size)?, mix(run_seed, 1));
    let mut state = AdamState::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix(run_seed, 2));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Tensor::batch_from_images(idx.iter().map(|&i| &train[i].input[..]), size)?;
            let targets: Vec<f64> = idx.iter().map(|&i| train[i].target).collect();
            let (value, grads) = model.backward(&batch, &targets, cfg.loss)?;
            if !value.is_finite() {
                return Err(CnnError::NonFiniteLoss { epoch, batch: batch_no });
            }
            adam_step(&mut model, &grads, &mut state, &cfg.adam)?;
            total += value * idx.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_mae, val_mse) = if val.is_empty() {
            (None, None, None)
        } else {
            let m = evaluate(&model, val)?;
            let l = match cfg.loss {
                LossKind::Mse => m.mse,
                LossKind::Mae => m.mae,
            };
            (Some(l), Some(m.mae), Some(m.mse))
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mae,
            val_mse,
        });
    }

    let metrics = evaluate(&model, if val.is_empty() { train } else { val })?;
    let report = FoldReport {
        fold: 0,
        train_size: train.len(),
        val_size: val.len(),
        epochs,
        metrics,
    };
    Ok((model, state, report))
}

/// Single hold-out run: the first `train_fraction` of a seeded shuffle
/// trains, the rest validates.
pub fn train(dataset: &[Sample], cfg: &TrainConfig) -> Result<(CnnModel, FoldReport)> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(CnnError::TooFewSamples { found: dataset.len(), needed: 2 });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.shuffle_seed));
    let cut = ((dataset.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let (model, _, report) = fit(&pick(&order[..cut]), &pick(&order[cut..]), cfg, mix(cfg.shuffle_seed, 100))?;
    Ok((model, report))
}

/// Splits `0..n` into `k` disjoint folds whose sizes differ by at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64, mode: FoldMode) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(CnnError::TooFewSamples { found: n, needed: k.max(1) });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if mode == FoldMode::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub model: CnnModel,
    pub optimizer: AdamState,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    /// Mean of the per-fold metrics.
    pub aggregate: Metrics,
}

impl CvOutcome {
    /// Per-epoch training loss averaged over folds.
    pub fn mean_train_curve(&self) -> Vec<f64> {
        self.mean_curve(|e| Some(e.train_loss))
    }

    /// Per-epoch validation loss averaged over folds.
    pub fn mean_val_curve(&self) -> Vec<f64> {
        self.mean_curve(|e| e.val_loss)
    }

    fn mean_curve(&self, f: impl Fn(&EpochRecord) -> Option<f64>) -> Vec<f64> {
        let epochs = self.folds.first().map_or(0, |f| f.report.epochs.len());
        (0..epochs)
            .map(|e| {
                let vals: Vec<f64> = self.folds.iter().filter_map(|fo| f(&fo.report.epochs[e])).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    }
}

/// k-fold cross-validation: fold `i` validates, the others train.
pub fn cross_validate(dataset: &[Sample], cfg: &TrainConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    if dataset.len() < cfg.folds {
        return Err(CnnError::TooFewSamples { found: dataset.len(), needed: cfg.folds });
    }
    let partition = fold_partition(dataset.len(), cfg.folds, cfg.shuffle_seed, cfg.fold_mode)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for (k, val_idx) in partition.iter().enumerate() {
        let val: Vec<Sample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
        let train: Vec<Sample> = partition
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, idx)| idx.iter().map(|&i| dataset[i].clone()))
            .collect();
        let (model, optimizer, mut report) = fit(&train, &val, cfg, mix(cfg.shuffle_seed, 1000 + k as u64))?;
        report.fold = k;
        folds.push(FoldOutcome {
            report,
            model,
            optimizer,
            validation: val_idx.clone(),
        });
    }
    let n = folds.len() as f64;
    let aggregate = Metrics {
        mae: folds.iter().map(|f| f.report.metrics.mae).sum::<f64>() / n,
        mse: folds.iter().map(|f| f.report.metrics.mse).sum::<f64>() / n,
    };
    Ok(CvOutcome { folds, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, size: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let level = (i % 7) as f64 / 7.0;
                let input = (0..size * size).map(|p| ((p + i) % 5) as f64 / 5.0 * level).collect();
                Sample { input, target: 0.9 + 0.2 * level }
            })
            .collect()
    }

    #[test]
    fn partition_is_a_partition() {
        for mode in [FoldMode::Shuffled, FoldMode::Contiguous] {
            let folds = fold_partition(100, 5, 3, mode).unwrap();
            assert!(folds.iter().all(|f| f.len() == 20));
            let mut all: Vec<usize> = folds.concat();
            all.sort();
            assert_eq!(all, (0..100).collect::<Vec<_>>());
        }
        let uneven = fold_partition(12, 5, 0, FoldMode::Contiguous).unwrap();
        assert_eq!(uneven.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2, 2, 2]);
        assert_eq!(uneven[0], vec![0, 1, 2]);
        assert!(fold_partition(4, 5, 0, FoldMode::Shuffled).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { train_fraction: 1.0, ..Default::default() },
            TrainConfig { train_fraction: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn prescaling_rules() {
        let f = |kind, data: Vec<f64>| AngularField { kind, size: 2, data, source_window_start: 0 };
        let q = prescale_fields(&[f(FieldKind::Qgasf, vec![0.9, 1.0, 0.5, 0.2])]).unwrap();
        assert_eq!(q[0], vec![0.9, 1.0, 0.5, 0.2]);
        let q = prescale_fields(&[f(FieldKind::Qgasf, vec![0.9, 1.0, 0.5, 0.2]), f(FieldKind::Qgasf, vec![-1.0, 1.0, 0.0, 0.0])]).unwrap();
        assert_eq!(q[0], vec![0.95, 1.0, 0.75, 0.6]);
        let g = prescale_fields(&[f(FieldKind::Gasf, vec![-1.0, 1.0, 0.0, 0.5])]).unwrap();
        assert_eq!(g[0], vec![0.0, 1.0, 0.5, 0.75]);
        assert!(prescale_fields(&[f(FieldKind::Gasf, vec![0.0; 4]), f(FieldKind::Qgasf, vec![0.0; 4])]).is_err());
    }

    #[test]
    fn cross_validation_shapes_and_aggregate() {
        let data = toy(10, 8);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let cv = cross_validate(&data, &cfg).unwrap();
        assert_eq!(cv.folds.len(), 5);
        for f in &cv.folds {
            assert_eq!(f.report.val_size, 2);
            assert_eq!(f.report.train_size, 8);
            assert_eq!(f.report.epochs.len(), 3);
            assert!(f.report.epochs.iter().all(|e| e.train_loss >= 0.0 && e.val_loss.unwrap() >= 0.0));
        }
        let mean_mae = cv.folds.iter().map(|f| f.report.metrics.mae).sum::<f64>() / 5.0;
        assert!((cv.aggregate.mae - mean_mae).abs() < 1e-15);
        assert_eq!(cv.mean_train_curve().len(), 3);
        assert!(cross_validate(&data[..4], &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(12, 8);
        let cfg = TrainConfig { epochs: 4, batch_size: 5, shuffle_seed: 17, ..Default::default() };
        let (m1, r1) = train(&data, &cfg).unwrap();
        let (m2, r2) = train(&data, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.train_size + r1.val_size, 12);
        let csv = r1.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn rejects_tiny_or_ragged_datasets() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(&toy(1, 8), &cfg), Err(CnnError::TooFewSamples { .. })));
        let mut bad = toy(4, 8);
        bad[2].input.pop();
        assert!(train(&bad, &cfg).is_err());
    }
}
