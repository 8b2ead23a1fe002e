//! Deep training of the winning architecture and the classifier head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_indices, sequential_indices, DatasetHandle};
use crate::fitness::{build_model, mean_reconstruction_error, train_cae, CaeTrainConfig};
use crate::genome::DecodedArchitecture;
use crate::nn::{Adam, AdamConfig, Classifier, Encoder, FcaeModel, NnError, Tensor};
use crate::rng::{derive_seed, stream, Purpose};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    /// Training produced a non-finite loss. `last_good` holds the model as it
    /// was after the last completed epoch (the initial model if none).
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: NnError,
        last_good: Box<FcaeModel>,
        loss_curve: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    None,
    #[default]
    FcHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepTrainConfig {
    /// Auto-encoder epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub classifier: ClassifierMode,
    /// Fine-tuning epochs of encoder + head.
    pub classifier_epochs: usize,
    pub fc_units: usize,
    pub dropout_rate: f64,
    /// Independent seeded classifier runs.
    pub runs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for DeepTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            classifier: ClassifierMode::FcHead,
            classifier_epochs: 20,
            fc_units: 512,
            dropout_rate: 0.5,
            runs: 5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl DeepTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if self.classifier == ClassifierMode::FcHead && (self.fc_units < 1 || self.runs < 1) {
            return bad("fc_units and runs must be >= 1");
        }
        Ok(())
    }

    pub fn cae(&self) -> CaeTrainConfig {
        CaeTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepTrainOutcome {
    pub model: FcaeModel,
    pub loss_curve: Vec<f64>,
    pub initial_recon_error: f64,
    pub final_recon_error: f64,
}

/// Trains the FCAE through the same code path as fitness evaluation, only
/// for `cfg.epochs` epochs. With `cfg.seed` equal to an evaluation seed and
/// the same epoch count, the model is bit-identical to the one scored there.
pub fn deep_train(arch: &DecodedArchitecture, data: &DatasetHandle, cfg: &DeepTrainConfig) -> Result<DeepTrainOutcome, TrainError> {
    deep_train_with(arch, data, cfg, |_, _| {})
}

/// As [`deep_train`], reporting `(epoch, mean loss)` after every epoch.
pub fn deep_train_with(
    arch: &DecodedArchitecture,
    data: &DatasetHandle,
    cfg: &DeepTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<DeepTrainOutcome, TrainError> {
    cfg.validate()?;
    let mut model = build_model(arch, data, cfg.seed)?;
    let initial_recon_error = mean_reconstruction_error(&model, data, cfg.batch_size)?;
    let mut last_good = model.clone();
    let mut curve = Vec::new();
    let result = train_cae(&mut model, data, &cfg.cae(), cfg.seed, |epoch, loss, m| {
        last_good = m.clone();
        curve.push(loss);
        on_epoch(epoch, loss);
    });
    if let Err(source) = result {
        return Err(TrainError::Diverged {
            epoch: curve.len(),
            source,
            last_good: Box::new(last_good),
            loss_curve: curve,
        });
    }
    let final_recon_error = mean_reconstruction_error(&model, data, cfg.batch_size)?;
    Ok(DeepTrainOutcome {
        model,
        loss_curve: curve,
        initial_recon_error,
        final_recon_error,
    })
}

/// Runs `images` through an encoder in batches.
pub fn encode_images(encoder: &Encoder, images: &Tensor, batch_size: usize) -> Result<Tensor, NnError> {
    let [h, w, c] = encoder.code_hwc()?;
    let mut out = Vec::with_capacity(images.batch() * h * w * c);
    for b in sequential_indices(images.batch(), batch_size) {
        out.extend_from_slice(encoder.forward(&images.gather(&b))?.data());
    }
    Tensor::from_vec([images.batch(), h, w, c], out)
}

/// Replaces every image by its code; used to feed a second stacked block.
/// Codes are non-negative but not bounded by 1.
pub fn encode_dataset(encoder: &Encoder, data: &DatasetHandle, batch_size: usize) -> Result<DatasetHandle, NnError> {
    Ok(DatasetHandle {
        name: format!("{}:encoded", data.name),
        images: encode_images(encoder, &data.images, batch_size)?,
        ..data.clone()
    })
}

pub fn accuracy(clf: &Classifier, data: &DatasetHandle, batch_size: usize) -> Result<f64, TrainError> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| TrainError::Config(format!("dataset {} has no labels", data.name)))?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for b in sequential_indices(data.len(), batch_size) {
        let pred = clf.predict(&data.images.gather(&b))?;
        correct += pred.iter().zip(&b).filter(|(p, &i)| **p == labels[i]).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

const HEAD_KEY: u64 = 0x4845_4144;

/// A fresh head on top of `encoders` for run `run`.
pub fn new_classifier(encoders: &[Encoder], n_classes: usize, cfg: &DeepTrainConfig, run: usize) -> Result<Classifier, TrainError> {
    let mut rng = stream(cfg.seed, Purpose::Weights, &[HEAD_KEY, run as u64]);
    Ok(Classifier::new(
        encoders.to_vec(),
        cfg.fc_units,
        n_classes,
        cfg.dropout_rate,
        &mut rng,
    )?)
}

/// Fine-tunes every parameter of `clf` with softmax cross-entropy; returns
/// the mean training loss per epoch.
pub fn fine_tune(clf: &mut Classifier, train: &DatasetHandle, cfg: &DeepTrainConfig, run: usize) -> Result<Vec<f64>, TrainError> {
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| TrainError::Config(format!("dataset {} has no labels", train.name)))?;
    let shuffle_seed = derive_seed(cfg.seed, Purpose::Shuffle, &[HEAD_KEY, run as u64]);
    let mut dropout = stream(cfg.seed, Purpose::Dropout, &[run as u64]);
    let mut adam = Adam::new(cfg.adam);
    let mut curve = Vec::with_capacity(cfg.classifier_epochs);
    for epoch in 0..cfg.classifier_epochs {
        let batches = batch_indices(train.len(), cfg.batch_size, shuffle_seed, epoch);
        let mut total = 0.0;
        for b in &batches {
            let y: Vec<u8> = b.iter().map(|&i| labels[i]).collect();
            let step = clf.forward_backward(&train.images.gather(b), &y, &mut dropout)?;
            total += step.cross_entropy + step.l2;
            adam.step(clf.params_mut().into_iter().map(|p| (&mut p.value[..], &p.grad[..])))?;
        }
        let mean = total / batches.len().max(1) as f64;
        log::debug!("run {run} epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracies: Vec<f64>,
    pub accuracy_mean: f64,
    /// Population standard deviation over runs.
    pub accuracy_std: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
}

impl AccuracyReport {
    fn from_runs(accuracies: Vec<f64>, epochs: usize, seeds: Vec<u64>) -> Self {
        let n = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            accuracies,
            accuracy_mean: mean,
            accuracy_std: var.sqrt(),
            epochs,
            seeds,
        }
    }
}

/// `cfg.runs` independent heads, each fine-tuned with the encoders, scored
/// on `test`. Returns the report and the classifier of the first run.
pub fn train_classifier(
    encoders: &[Encoder],
    train: &DatasetHandle,
    test: &DatasetHandle,
    cfg: &DeepTrainConfig,
) -> Result<(AccuracyReport, Classifier), TrainError> {
    cfg.validate()?;
    if cfg.classifier != ClassifierMode::FcHead {
        return Err(TrainError::Config("classifier mode is `none`".into()));
    }
    let n_classes = train
        .n_classes
        .filter(|_| train.labels.is_some() && test.labels.is_some())
        .ok_or_else(|| TrainError::Config("classifier training needs labelled train and test data".into()))?;
    let mut accuracies = Vec::with_capacity(cfg.runs);
    let mut first = None;
    for run in 0..cfg.runs {
        let mut clf = new_classifier(encoders, n_classes, cfg, run)?;
        fine_tune(&mut clf, train, cfg, run)?;
        let acc = accuracy(&clf, test, cfg.batch_size)?;
        log::info!("classifier run {run}: test accuracy {acc:.4}");
        accuracies.push(acc);
        first.get_or_insert(clf);
    }
    let seeds = (0..cfg.runs as u64)
        .map(|r| derive_seed(cfg.seed, Purpose::Weights, &[HEAD_KEY, r]))
        .collect();
    Ok((
        AccuracyReport::from_runs(accuracies, cfg.classifier_epochs, seeds),
        first.expect("runs >= 1"),
    ))
}
