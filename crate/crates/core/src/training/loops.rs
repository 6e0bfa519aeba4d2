use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{objective_graph, FrozenModel};
use super::optim::Adam;
use super::{LossBreakdown, TrainConfig};
use crate::autograd::{Graph, Tensor};
use crate::evaluation::{evaluate, EvalReport};
use crate::models::{
    ae_forward, batch_tensor, classifier_graph, row_stats, AutoencoderConfig, ClassifierConfig, ClassifierKind,
    ModelSpec, ParameterStore,
};
use crate::signal_io::{Epoch, EpochDataset, SleepStage};
use crate::{Error, Result};

/// Combined objective magnitude treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e9;
const INFERENCE_BATCH: usize = 64;
const STREAM_SALT: u64 = 0x5EED_0F_D47A;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub params: ParameterStore<f32>,
    pub trace: Vec<ClassifierEpoch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_util: f64,
    pub l_id: f64,
    pub l_dist: f64,
    pub combined: f64,
}

#[derive(Debug, Clone)]
pub struct AutoencoderRun {
    pub params: ParameterStore<f32>,
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochLosses>,
}

#[derive(Debug, Clone)]
pub struct Anonymized {
    pub dataset: EpochDataset,
    /// Per-epoch reconstruction MSE in standardized units.
    pub epoch_mse: Vec<f64>,
}

impl Anonymized {
    pub fn median_mse(&self) -> f64 {
        let mut v = self.epoch_mse.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FreshAudit {
    pub reid: EvalReport,
    pub utility: EvalReport,
    pub reid_run: ClassifierRun,
    pub utility_run: ClassifierRun,
}

fn labels_for(dataset: &EpochDataset, kind: ClassifierKind) -> Vec<usize> {
    match kind {
        ClassifierKind::UtilityCnn => dataset.stage_labels(),
        ClassifierKind::ReidTransformer => dataset.subject_labels(),
    }
}

fn class_names(dataset: &EpochDataset, kind: ClassifierKind) -> Vec<String> {
    match kind {
        ClassifierKind::UtilityCnn => SleepStage::ALL.iter().map(|s| s.name().to_string()).collect(),
        ClassifierKind::ReidTransformer => dataset.subject_names(),
    }
}

fn check_classes(dataset: &EpochDataset, model: &ClassifierConfig) -> Result<()> {
    let needed = match model.kind {
        ClassifierKind::UtilityCnn => SleepStage::COUNT,
        ClassifierKind::ReidTransformer => dataset.n_subjects(),
    };
    if model.n_classes != needed {
        return Err(Error::config(
            "n_classes",
            format!("{:?} has {} classes but the dataset needs {}", model.kind, model.n_classes, needed),
        ));
    }
    Ok(())
}

fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT)
}

fn gather<'a>(dataset: &'a EpochDataset, idx: &'a [usize]) -> impl Iterator<Item = &'a Epoch> {
    idx.iter().map(move |&i| &dataset.epochs[i])
}

/// Trains a classifier from a fresh initialization on stage labels (utility) or
/// subject labels (re-id). `n_epochs = 0` returns the initialization.
pub fn train_classifier(dataset: &EpochDataset, model: &ClassifierConfig, config: &TrainConfig) -> Result<ClassifierRun> {
    config.validate()?;
    model.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    check_classes(dataset, model)?;
    let spec = ModelSpec::Classifier(model.clone());
    let mut params = spec.init::<f32>(config.seed)?;
    let labels = labels_for(dataset, model.kind);
    let mut rng = stream(config.seed);
    let mut adam = Adam::new(config.learning_rate, config.optimizer, &params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.n_epochs);
    for epoch in 0..config.n_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0usize);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let x: Tensor<f32> = batch_tensor(gather(dataset, idx))?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let xv = g.constant(x);
            let logits = classifier_graph(&mut g, model, &bound, xv, Some(&mut rng)).map_err(|e| Error::Diverged {
                epoch,
                batch: bi,
                message: e.to_string(),
            })?;
            let loss = g.cross_entropy(logits, &y)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    message: format!("{:?} loss is {}", model.kind, lv),
                });
            }
            correct += g.value(logits).argmax_rows().iter().zip(&y).filter(|(p, t)| p == t).count();
            total += lv * idx.len() as f64;
            let grads = g.backward(loss);
            let grads = bound.gradients(&grads, &params);
            adam.step(&mut params, &grads);
        }
        let rec = ClassifierEpoch {
            epoch,
            loss: total / dataset.len() as f64,
            accuracy: correct as f64 / dataset.len() as f64,
        };
        log::info!(
            "{:?} epoch {} loss {:.4} train acc {:.3}",
            model.kind,
            epoch,
            rec.loss,
            rec.accuracy
        );
        trace.push(rec);
    }
    Ok(ClassifierRun { params, trace })
}

/// Arg-max predictions for every epoch of `dataset`.
pub fn predict(params: &ParameterStore<f32>, model: &ClassifierConfig, dataset: &EpochDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.epochs.chunks(INFERENCE_BATCH) {
        let x: Tensor<f32> = batch_tensor(chunk)?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let xv = g.constant(x);
        let logits = classifier_graph(&mut g, model, &bound, xv, None)?;
        out.extend(g.value(logits).argmax_rows());
    }
    Ok(out)
}

/// Accuracy, per-class F1 and confusion of a classifier on `dataset`; re-id
/// reports also carry per-subject F1.
pub fn evaluate_classifier(
    params: &ParameterStore<f32>,
    model: &ClassifierConfig,
    dataset: &EpochDataset,
) -> Result<EvalReport> {
    check_classes(dataset, model)?;
    let preds = predict(params, model, dataset)?;
    let report = evaluate(&preds, &labels_for(dataset, model.kind), &class_names(dataset, model.kind))?;
    Ok(match model.kind {
        ClassifierKind::ReidTransformer => report.with_subject_f1(),
        ClassifierKind::UtilityCnn => report,
    })
}

/// Trains the autoencoder against the frozen utility and re-id critics.
pub fn train_autoencoder(
    dataset: &EpochDataset,
    ae_config: &AutoencoderConfig,
    config: &TrainConfig,
    utility: &FrozenModel<f32>,
    reid: &FrozenModel<f32>,
) -> Result<AutoencoderRun> {
    config.validate_for_autoencoder()?;
    ae_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if utility.config.kind != ClassifierKind::UtilityCnn || reid.config.kind != ClassifierKind::ReidTransformer {
        return Err(Error::InvalidInput("critics must be a utility CNN and a re-id transformer".into()));
    }
    check_classes(dataset, &utility.config)?;
    check_classes(dataset, &reid.config)?;
    let frozen_sums = (utility.params.checksum(), reid.params.checksum());
    let weights = config.weights(dataset.n_subjects());

    let mut params = ModelSpec::Autoencoder(ae_config.clone()).init::<f32>(config.seed)?;
    let stages = dataset.stage_labels();
    let subjects = dataset.subject_labels();
    let mut rng = stream(config.seed);
    let mut adam = Adam::new(config.learning_rate, config.optimizer, &params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batches = Vec::new();
    let mut epochs = Vec::with_capacity(config.n_epochs);
    for epoch in 0..config.n_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let x: Tensor<f32> = batch_tensor(gather(dataset, idx))?;
            let ys: Vec<usize> = idx.iter().map(|&i| stages[i]).collect();
            let yid: Vec<usize> = idx.iter().map(|&i| subjects[i]).collect();
            let mut g = Graph::new();
            let ab = params.bind(&mut g, true);
            let ub = utility.params.bind(&mut g, false);
            let rb = reid.params.bind(&mut g, false);
            let vars = objective_graph(
                &mut g,
                ae_config,
                &ab,
                (&utility.config, &ub),
                (&reid.config, &rb),
                &x,
                &ys,
                &yid,
                &weights,
                Some(&mut rng),
            )
            .map_err(|e| Error::Diverged {
                epoch,
                batch: bi,
                message: e.to_string(),
            })?;
            let losses = vars.breakdown(&g);
            if !losses.combined.is_finite() || losses.combined.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    message: format!(
                        "combined objective {} (l_util {}, l_id {}, l_dist {}); \
                         set id_loss_ceiling to bound the identity term",
                        losses.combined, losses.l_util, losses.l_id, losses.l_dist
                    ),
                });
            }
            let w = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip([losses.l_util, losses.l_id, losses.l_dist, losses.combined]) {
                *s += v * w;
            }
            batches.push(BatchRecord {
                epoch,
                batch: bi,
                losses,
            });
            let grads = g.backward(vars.combined);
            let grads = ab.gradients(&grads, &params);
            adam.step(&mut params, &grads);
        }
        let n = dataset.len() as f64;
        let rec = EpochLosses {
            epoch,
            l_util: sums[0] / n,
            l_id: sums[1] / n,
            l_dist: sums[2] / n,
            combined: sums[3] / n,
        };
        log::info!(
            "autoencoder epoch {} l_util {:.4} l_id {:.4} l_dist {:.4} combined {:.4}",
            epoch,
            rec.l_util,
            rec.l_id,
            rec.l_dist,
            rec.combined
        );
        epochs.push(rec);
    }
    if (utility.params.checksum(), reid.params.checksum()) != frozen_sums {
        return Err(Error::InvalidInput("frozen classifier parameters changed during training".into()));
    }
    Ok(AutoencoderRun {
        params,
        batches,
        epochs,
    })
}

/// Runs every epoch through the trained autoencoder (no dropout), keeping labels.
pub fn anonymize_dataset(
    dataset: &EpochDataset,
    params: &ParameterStore<f32>,
    ae_config: &AutoencoderConfig,
) -> Result<Anonymized> {
    let mut epochs = Vec::with_capacity(dataset.len());
    let mut epoch_mse = Vec::with_capacity(dataset.len());
    for chunk in dataset.epochs.chunks(INFERENCE_BATCH) {
        let x: Tensor<f32> = batch_tensor(chunk)?;
        let y = ae_forward(params, ae_config, &x, None)?;
        let stats = row_stats(&x);
        for (i, e) in chunk.iter().enumerate() {
            let (xr, yr) = (x.row(i), y.row(i));
            let n = e.n_samples();
            let mut sq = 0.0;
            for c in 0..e.n_channels {
                let (_, sd) = stats[i * e.n_channels + c];
                for t in c * n..(c + 1) * n {
                    let d = (yr[t] as f64 - xr[t] as f64) / sd;
                    sq += d * d;
                }
            }
            epoch_mse.push(sq / xr.len() as f64);
            epochs.push(Epoch::new(e.subject_id.clone(), e.stage, e.onset_s, e.n_channels, yr.to_vec())?);
        }
    }
    let dataset = EpochDataset::with_index(
        epochs,
        dataset.subject_index.clone(),
        dataset.sampling_rate_hz,
        dataset.split,
    )?;
    Ok(Anonymized { dataset, epoch_mse })
}

/// Trains new re-id and utility classifiers on anonymized training data and
/// evaluates them on anonymized test data.
pub fn fresh_retrain_audit(
    train: &EpochDataset,
    test: &EpochDataset,
    utility: &ClassifierConfig,
    reid: &ClassifierConfig,
    config: &TrainConfig,
) -> Result<FreshAudit> {
    let reid_run = train_classifier(train, reid, config)?;
    let utility_run = train_classifier(train, utility, config)?;
    Ok(FreshAudit {
        reid: evaluate_classifier(&reid_run.params, reid, test)?,
        utility: evaluate_classifier(&utility_run.params, utility, test)?,
        reid_run,
        utility_run,
    })
}
