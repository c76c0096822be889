//! Minibatch cross-entropy training with validation-accuracy early stopping
//! and an exhaustive dropout × learning-rate grid search.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::HashedBowEncoder;
use super::model::{softmax, ClassifierHead, LmRec};
use crate::corpus::CityCorpus;
use crate::error::{Error, Result};
use crate::rng;

/// Dropout values of the reference hyperparameter search.
pub const REFERENCE_DROPOUTS: [f64; 4] = [0.0, 0.2, 0.4, 0.6];
/// Learning rates of the reference search (tuned for transformer fine-tuning).
pub const REFERENCE_LEARNING_RATES: [f64; 7] = [9e-6, 1e-5, 3e-5, 5e-5, 7e-5, 9e-5, 1e-4];
/// Learning rates that move the built-in SGD model within the epoch budget.
pub const BUILTIN_LEARNING_RATES: [f64; 4] = [0.1, 0.3, 1.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub hidden: usize,
    pub hash_bits: u32,
    /// Scale term counts by inverse document frequency over the training texts.
    pub idf: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            dropout_rate: 0.0,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            hidden: 256,
            hash_bits: 16,
            idf: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 || !(1..=24).contains(&self.hash_bits) {
            return Err(Error::Config(
                "batch_size and hidden must be positive, hash_bits in 1..=24".into(),
            ));
        }
        Ok(())
    }
}

/// Identifies a parameter block for per-block optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamSlot {
    Head,
    EncoderRow(u32),
}

/// Applies one update given a (mean minibatch) gradient.
pub trait Optimizer {
    fn step(&mut self, slot: ParamSlot, params: &mut [f64], grad: &[f64]);
}

/// Plain gradient descent with a fixed step size.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, _slot: ParamSlot, params: &mut [f64], grad: &[f64]) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.learning_rate * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: String,
    pub class: usize,
}

/// Labelled train/validation examples over a fixed venue ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub venue_ids: Vec<String>,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

impl TrainingData {
    pub fn new(venue_ids: Vec<String>, train: Vec<Example>, validation: Vec<Example>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut seen = vec![false; venue_ids.len()];
        for ex in train.iter().chain(&validation) {
            if ex.class >= venue_ids.len() {
                return Err(Error::Contract(format!("class index {} out of range", ex.class)));
            }
        }
        for ex in &train {
            seen[ex.class] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "venue {} has no training reviews and can never be predicted",
                venue_ids[missing]
            )));
        }
        Ok(TrainingData {
            venue_ids,
            train,
            validation,
        })
    }

    /// Examples for the train and validation parts of a city corpus split.
    pub fn from_corpus(corpus: &CityCorpus) -> Result<Self> {
        let venue_ids = corpus.catalog.sorted_ids();
        let class_of: HashMap<&str, usize> = venue_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let reviews = corpus.review_index();
        let collect = |ids: &[String]| -> Vec<Example> {
            ids.iter()
                .filter_map(|id| reviews.get(id.as_str()))
                .map(|r| Example {
                    text: r.text.clone(),
                    class: class_of[r.business_id.as_str()],
                })
                .collect()
        };
        let train = collect(&corpus.split.train);
        let validation = collect(&corpus.split.validation);
        TrainingData::new(venue_ids, train, validation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LmRec,
    pub curve: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    /// False when the validation split was empty and training accuracy
    /// drove model selection instead.
    pub used_validation: bool,
}

/// Untrained model with seeded uniform weights in `[-1/√H, 1/√H]`.
pub fn initial_model(venue_ids: Vec<String>, config: &TrainConfig) -> LmRec {
    let hidden = config.hidden;
    let classes = venue_ids.len();
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut rng = rng::substream(config.seed, rng::INIT);
    let weights = (0..hidden * classes).map(|_| rng.gen_range(-bound..=bound)).collect();
    let mut head = ClassifierHead::from_weights(hidden, classes, weights).expect("sized above");
    head.dropout_rate = config.dropout_rate;
    LmRec {
        encoder: HashedBowEncoder::new(config.hash_bits, hidden, config.seed),
        head,
        venue_ids,
    }
}

pub fn accuracy(model: &LmRec, examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples.iter().filter(|ex| model.predict(&ex.text) == ex.class).count();
    hits as f64 / examples.len() as f64
}

pub fn mean_loss(model: &LmRec, examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples
        .iter()
        .map(|ex| super::model::cross_entropy(&model.scores(&ex.text), ex.class))
        .sum::<f64>()
        / examples.len() as f64
}

/// One forward/backward pass over a minibatch followed by an optimizer step.
/// Returns the mean training loss of the batch (with dropout active).
pub fn train_step<R: Rng>(
    model: &mut LmRec,
    batch: &[&Example],
    optimizer: &mut dyn Optimizer,
    dropout_rng: &mut R,
) -> f64 {
    let hidden = model.head.hidden();
    let classes = model.head.classes();
    let keep = 1.0 - model.head.dropout_rate;
    let scale = 1.0 / batch.len() as f64;
    let mut head_grad = vec![0.0; hidden * classes];
    let mut row_grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut loss = 0.0;

    for ex in batch {
        let feats = model.encoder.normalized_features(&ex.text);
        let mut emb = model.encoder.project(&feats).0;
        let mask: Vec<f64> = if model.head.dropout_rate > 0.0 {
            (0..hidden)
                .map(|_| {
                    if dropout_rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![1.0; hidden]
        };
        for (e, m) in emb.iter_mut().zip(&mask) {
            *e *= m;
        }
        let logits = model.head.logits(&emb).expect("widths agree");
        let mut g = softmax(&logits).probabilities;
        loss += -g[ex.class].max(f64::MIN_POSITIVE).ln();
        g[ex.class] -= 1.0;

        for (h, &x) in emb.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &mut head_grad[h * classes..(h + 1) * classes];
            for (acc, gk) in row.iter_mut().zip(&g) {
                *acc += scale * x * gk;
            }
        }
        let mut emb_grad = model.head.backprop(&g);
        for (eg, m) in emb_grad.iter_mut().zip(&mask) {
            *eg *= m;
        }
        for (bucket, weight) in feats {
            let acc = row_grads.entry(bucket).or_insert_with(|| vec![0.0; hidden]);
            for (a, eg) in acc.iter_mut().zip(&emb_grad) {
                *a += scale * weight * eg;
            }
        }
    }

    optimizer.step(ParamSlot::Head, model.head.weights_mut(), &head_grad);
    for (bucket, grad) in row_grads {
        optimizer.step(ParamSlot::EncoderRow(bucket), model.encoder.row_mut(bucket), &grad);
    }
    loss * scale
}

/// Trains with plain SGD at `config.learning_rate`.
pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut sgd = Sgd {
        learning_rate: config.learning_rate,
    };
    train_with_optimizer(data, config, &mut sgd)
}

/// Trains until neither validation accuracy nor validation loss has reached
/// a new best for `patience` epochs (or `max_epochs`). Returns the parameters
/// of the most accurate epoch, lower validation loss breaking ties. Training accuracy
/// stands in for validation accuracy when the validation split is empty.
pub fn train_with_optimizer(
    data: &TrainingData,
    config: &TrainConfig,
    optimizer: &mut dyn Optimizer,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = initial_model(data.venue_ids.clone(), config);
    if config.idf {
        model.encoder.fit_idf(data.train.iter().map(|ex| ex.text.as_str()));
    }
    let used_validation = !data.validation.is_empty();
    let selection = if used_validation { &data.validation } else { &data.train };

    let mut shuffle_rng = rng::substream(config.seed, rng::SHUFFLE);
    let mut dropout_rng = rng::substream(config.seed, rng::DROPOUT);
    let mut order: Vec<&Example> = data.train.iter().collect();

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut progress_accuracy = f64::NEG_INFINITY;
    let mut progress_loss = f64::INFINITY;
    let mut last_progress = 0;
    let mut curve = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            loss_sum += train_step(&mut model, batch, optimizer, &mut dropout_rng) * batch.len() as f64;
        }
        let acc = accuracy(&model, selection);
        let val_loss = mean_loss(&model, selection);
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            validation_accuracy: acc,
            validation_loss: val_loss,
        });
        if acc > best_accuracy || (acc == best_accuracy && val_loss < best_loss) {
            best_accuracy = acc;
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        if acc > progress_accuracy || val_loss < progress_loss {
            progress_accuracy = progress_accuracy.max(acc);
            progress_loss = progress_loss.min(val_loss);
            last_progress = epoch;
        } else if epoch - last_progress >= config.patience {
            break;
        }
    }
    if best_epoch == 0 {
        best_accuracy = accuracy(&best, selection);
    }
    Ok(TrainOutcome {
        model: best,
        curve,
        best_epoch,
        best_accuracy,
        used_validation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub dropouts: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl SearchGrid {
    /// The exact reference grid.
    pub fn reference() -> Self {
        SearchGrid {
            dropouts: REFERENCE_DROPOUTS.to_vec(),
            learning_rates: REFERENCE_LEARNING_RATES.to_vec(),
        }
    }

    /// Reference dropout set with learning rates suited to the built-in model.
    pub fn builtin() -> Self {
        SearchGrid {
            dropouts: REFERENCE_DROPOUTS.to_vec(),
            learning_rates: BUILTIN_LEARNING_RATES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRecord {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub accuracy: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_config: TrainConfig,
    pub best: TrainOutcome,
    pub records: Vec<SearchRecord>,
}

/// Trains every grid point and keeps the highest selection accuracy.
/// Ties go to the lower learning rate, then the lower dropout.
pub fn hyperparameter_search(data: &TrainingData, base: &TrainConfig, grid: &SearchGrid) -> Result<SearchOutcome> {
    if grid.dropouts.is_empty() || grid.learning_rates.is_empty() {
        return Err(Error::Config("search grid must be non-empty".into()));
    }
    let mut lrs = grid.learning_rates.clone();
    lrs.sort_by(f64::total_cmp);
    let mut drops = grid.dropouts.clone();
    drops.sort_by(f64::total_cmp);

    let mut records = Vec::new();
    let mut best: Option<(TrainConfig, TrainOutcome)> = None;
    for &lr in &lrs {
        for &dropout in &drops {
            let config = TrainConfig {
                learning_rate: lr,
                dropout_rate: dropout,
                ..base.clone()
            };
            let outcome = train(data, &config)?;
            records.push(SearchRecord {
                learning_rate: lr,
                dropout_rate: dropout,
                accuracy: outcome.best_accuracy,
                best_epoch: outcome.best_epoch,
            });
            let better = best
                .as_ref()
                .is_none_or(|(_, b)| outcome.best_accuracy > b.best_accuracy);
            if better {
                best = Some((config, outcome));
            }
        }
    }
    let (best_config, best) = best.expect("grid is non-empty");
    Ok(SearchOutcome {
        best_config,
        best,
        records,
    })
}
