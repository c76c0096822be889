use serde::{Deserialize, Serialize};

use super::encoder::{Embedding, HashedBowEncoder, TextEncoder};
use crate::error::{Error, Result};

/// Softmax classification layer: `hidden × classes` weights, row-major by hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    hidden: usize,
    classes: usize,
    weights: Vec<f64>,
    /// Inverted dropout applied to the embedding while training only.
    pub dropout_rate: f64,
}

impl ClassifierHead {
    pub fn zeros(hidden: usize, classes: usize) -> Self {
        ClassifierHead {
            hidden,
            classes,
            weights: vec![0.0; hidden * classes],
            dropout_rate: 0.0,
        }
    }

    pub fn from_weights(hidden: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != hidden * classes {
            return Err(Error::Contract(format!(
                "weight buffer has {} entries, expected {hidden}×{classes}",
                weights.len()
            )));
        }
        Ok(ClassifierHead {
            hidden,
            classes,
            weights,
            dropout_rate: 0.0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn weight(&self, h: usize, k: usize) -> f64 {
        self.weights[h * self.classes + k]
    }

    fn check_width(&self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.hidden {
            return Err(Error::Contract(format!(
                "embedding width {} does not match head input width {}",
                embedding.len(),
                self.hidden
            )));
        }
        Ok(())
    }

    /// `Wᵀh`.
    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.check_width(embedding)?;
        let mut out = vec![0.0; self.classes];
        for (h, &x) in embedding.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[h * self.classes..(h + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        Ok(out)
    }

    /// `W g` for a gradient over the logits.
    pub(crate) fn backprop(&self, logit_grad: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.classes)
            .map(|row| row.iter().zip(logit_grad).map(|(w, g)| w * g).sum())
            .collect()
    }
}

/// Class probabilities, aligned with the model's venue id ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub probabilities: Vec<f64>,
}

impl ScoreDistribution {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> ScoreDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ScoreDistribution {
        probabilities: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// `softmax(Wᵀh)` with dropout disabled.
pub fn predict_scores(embedding: &Embedding, head: &ClassifierHead) -> Result<ScoreDistribution> {
    Ok(softmax(&head.logits(embedding.as_slice())?))
}

/// Cross-entropy of a distribution against the true class index.
pub fn cross_entropy(distribution: &ScoreDistribution, target: usize) -> f64 {
    -distribution.probabilities[target].max(f64::MIN_POSITIVE).ln()
}

/// Gradient of the cross-entropy loss with respect to the head weights,
/// laid out like [`ClassifierHead::weights`].
pub fn head_gradient(embedding: &[f64], head: &ClassifierHead, target: usize) -> Result<Vec<f64>> {
    let dist = softmax(&head.logits(embedding)?);
    let mut logit_grad = dist.probabilities;
    logit_grad[target] -= 1.0;
    let mut grad = vec![0.0; head.hidden * head.classes];
    for (h, &x) in embedding.iter().enumerate() {
        for (k, g) in logit_grad.iter().enumerate() {
            grad[h * head.classes + k] = x * g;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub business_id: String,
    pub score: f64,
}

/// Ranked venues for one input, scores non-increasing, ids distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub probe_id: Option<String>,
    pub entries: Vec<RankedItem>,
}

impl RecommendationList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.business_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The `k` most probable venues. Equal probabilities are ordered by
/// ascending business id.
pub fn top_k(distribution: &ScoreDistribution, ids: &[String], k: usize) -> Result<RecommendationList> {
    let n = distribution.len();
    if ids.len() != n {
        return Err(Error::Contract(format!(
            "{} ids for a distribution over {n} venues",
            ids.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "top-k requested k={k} but only {n} venues are available"
        )));
    }
    let probs = &distribution.probabilities;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then_with(|| ids[a].cmp(&ids[b])));
    Ok(RecommendationList {
        probe_id: None,
        entries: order[..k]
            .iter()
            .map(|&i| RankedItem {
                business_id: ids[i].clone(),
                score: probs[i],
            })
            .collect(),
    })
}

/// Text encoder plus softmax venue head.
#[derive(Debug, Clone, PartialEq)]
pub struct LmRec {
    pub encoder: HashedBowEncoder,
    pub head: ClassifierHead,
    /// Venue id of each head column, ascending.
    pub venue_ids: Vec<String>,
}

impl LmRec {
    pub fn num_venues(&self) -> usize {
        self.venue_ids.len()
    }

    pub fn scores(&self, text: &str) -> ScoreDistribution {
        predict_scores(&self.encoder.encode(text), &self.head).expect("encoder and head widths agree by construction")
    }

    pub fn recommend(&self, text: &str, k: usize) -> Result<RecommendationList> {
        top_k(&self.scores(text), &self.venue_ids, k)
    }

    /// Every venue id, best first.
    pub fn rank_all(&self, text: &str) -> Vec<String> {
        self.recommend(text, self.num_venues())
            .map(|l| l.entries.into_iter().map(|e| e.business_id).collect())
            .unwrap_or_default()
    }

    pub fn predict(&self, text: &str) -> usize {
        argmax(&self.scores(text).probabilities)
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
