//! Held-out venue recovery and category-coverage ranking metrics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::aggregate_cities;
use crate::corpus::{Catalog, Review};
use crate::error::{Error, Result};
use crate::recommender::LmRec;

/// One held-out review and the model's ranking of venues for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub review_id: String,
    pub true_business_id: String,
    pub ranking: Vec<String>,
}

impl EvalInstance {
    /// 1-based rank of the true venue, if ranked at all.
    pub fn rank_of_truth(&self) -> Option<usize> {
        self.ranking
            .iter()
            .position(|id| *id == self.true_business_id)
            .map(|p| p + 1)
    }
}

/// How per-class precision, recall, and F1 are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
    /// Per-class values weighted by true-class support. Weighted recall equals accuracy.
    #[default]
    Weighted,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            "weighted" => Ok(Averaging::Weighted),
            other => Err(Error::Config(format!(
                "unknown averaging mode {other:?} (macro|micro|weighted)"
            ))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
            Averaging::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mrr: f64,
    pub accuracy: f64,
    pub hr5: f64,
    pub hr10: f64,
    pub hr20: f64,
}

fn check_rankings(instances: &[EvalInstance]) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Contract("no evaluation instances".into()));
    }
    for inst in instances {
        if inst.ranking.is_empty() {
            return Err(Error::Contract(format!(
                "review {} has an empty ranking",
                inst.review_id
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = inst.ranking.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Contract(format!("review {} ranks {dup} twice", inst.review_id)));
        }
    }
    Ok(())
}

/// Fraction of instances whose true venue is in the top `k`.
pub fn hit_rate(instances: &[EvalInstance], k: usize) -> f64 {
    let hits = instances
        .iter()
        .filter(|i| i.rank_of_truth().is_some_and(|r| r <= k))
        .count();
    hits as f64 / instances.len() as f64
}

/// Mean reciprocal rank of the true venue (0 when it is not ranked).
pub fn mean_reciprocal_rank(instances: &[EvalInstance]) -> f64 {
    instances
        .iter()
        .map(|i| i.rank_of_truth().map_or(0.0, |r| 1.0 / r as f64))
        .sum::<f64>()
        / instances.len() as f64
}

/// Precision, recall, and F1 of the rank-1 predictions. Classes are every id
/// that is either a true label or a prediction; a class with no predictions
/// has precision 0, one with no support has recall 0.
pub fn prf(instances: &[EvalInstance], averaging: Averaging) -> (f64, f64, f64) {
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    for inst in instances {
        let guess = inst.ranking[0].as_str();
        let truth = inst.true_business_id.as_str();
        *predicted.entry(guess).or_default() += 1;
        *support.entry(truth).or_default() += 1;
        if guess == truth {
            *tp.entry(truth).or_default() += 1;
        }
    }
    let n = instances.len() as f64;
    if averaging == Averaging::Micro {
        let acc = tp.values().sum::<usize>() as f64 / n;
        return (acc, acc, acc);
    }
    let classes: BTreeSet<&str> = predicted.keys().chain(support.keys()).copied().collect();
    let (mut p_sum, mut r_sum, mut f_sum, mut w_sum) = (0.0, 0.0, 0.0, 0.0);
    for c in classes {
        let t = *tp.get(c).unwrap_or(&0) as f64;
        let pred = *predicted.get(c).unwrap_or(&0) as f64;
        let sup = *support.get(c).unwrap_or(&0) as f64;
        let p = if pred > 0.0 { t / pred } else { 0.0 };
        let r = if sup > 0.0 { t / sup } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = match averaging {
            Averaging::Weighted => sup,
            _ => 1.0,
        };
        p_sum += w * p;
        r_sum += w * r;
        f_sum += w * f;
        w_sum += w;
    }
    (p_sum / w_sum, r_sum / w_sum, f_sum / w_sum)
}

pub fn multiclass_metrics(instances: &[EvalInstance], averaging: Averaging) -> Result<MulticlassMetrics> {
    check_rankings(instances)?;
    let (precision, recall, f1) = prf(instances, averaging);
    Ok(MulticlassMetrics {
        precision,
        recall,
        f1,
        mrr: mean_reciprocal_rank(instances),
        accuracy: hit_rate(instances, 1),
        hr5: hit_rate(instances, 5),
        hr10: hit_rate(instances, 10),
        hr20: hit_rate(instances, 20),
    })
}

/// Binary relevance per rank: the ranked venue shares at least one category
/// with the true venue.
pub fn judge(instance: &EvalInstance, catalog: &Catalog) -> Result<Vec<bool>> {
    let truth = catalog
        .get(&instance.true_business_id)
        .ok_or_else(|| Error::Data(format!("true venue {} not in catalog", instance.true_business_id)))?;
    instance
        .ranking
        .iter()
        .map(|id| {
            let b = catalog
                .get(id)
                .ok_or_else(|| Error::Data(format!("ranked venue {id} not in catalog")))?;
            Ok(!b.categories.is_disjoint(&truth.categories))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageMetrics {
    pub p5: f64,
    pub p10: f64,
    pub p20: f64,
    pub r_prec: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Relevant items in the top `k`, divided by `k`.
pub fn precision_at(rel: &[bool], k: usize) -> f64 {
    rel.iter().take(k).filter(|r| **r).count() as f64 / k as f64
}

/// Precision at R, where R is the number of relevant items in the ranking.
pub fn r_precision(rel: &[bool]) -> f64 {
    let r = rel.iter().filter(|r| **r).count();
    if r == 0 {
        0.0
    } else {
        precision_at(rel, r)
    }
}

pub fn average_precision(rel: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn reciprocal_rank(rel: &[bool]) -> f64 {
    rel.iter().position(|r| *r).map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

fn dcg<I: Iterator<Item = bool>>(rel: I) -> f64 {
    rel.enumerate()
        .filter(|(_, r)| *r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG with gain 1 and `1/log2(rank+1)` discount over the whole list.
pub fn ndcg(rel: &[bool]) -> f64 {
    let r = rel.iter().filter(|r| **r).count();
    if r == 0 {
        return 0.0;
    }
    let ideal = dcg((0..rel.len()).map(|i| i < r));
    dcg(rel.iter().copied()) / ideal
}

/// Means over instances. An instance with no relevant item contributes 0 to
/// every metric and still counts in the denominator.
pub fn coverage_metrics(judgments: &[Vec<bool>]) -> Result<CoverageMetrics> {
    if judgments.is_empty() {
        return Err(Error::Contract("no evaluation instances".into()));
    }
    if judgments.iter().any(Vec::is_empty) {
        return Err(Error::Contract("an instance has an empty ranking".into()));
    }
    let n = judgments.len() as f64;
    let mean = |f: &dyn Fn(&[bool]) -> f64| judgments.iter().map(|j| f(j)).sum::<f64>() / n;
    Ok(CoverageMetrics {
        p5: mean(&|j| precision_at(j, 5)),
        p10: mean(&|j| precision_at(j, 10)),
        p20: mean(&|j| precision_at(j, 20)),
        r_prec: mean(&r_precision),
        map: mean(&average_precision),
        mrr: mean(&reciprocal_rank),
        ndcg: mean(&ndcg),
    })
}

/// One row of the ranking-metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub city: String,
    pub multiclass: MulticlassMetrics,
    pub coverage: CoverageMetrics,
}

impl EvalRow {
    pub fn values(&self) -> [f64; 15] {
        let m = &self.multiclass;
        let c = &self.coverage;
        [
            m.precision,
            m.recall,
            m.f1,
            m.mrr,
            m.accuracy,
            m.hr5,
            m.hr10,
            m.hr20,
            c.p5,
            c.p10,
            c.p20,
            c.r_prec,
            c.map,
            c.mrr,
            c.ndcg,
        ]
    }
}

pub const METRIC_COLUMNS: [&str; 16] = [
    "City", "P", "R", "F1-Score", "MRR", "Acc", "HR@5", "HR@10", "HR@20", "P@5", "P@10", "P@20", "R-Prec", "MAP",
    "MRR", "nDCG",
];

/// Ranks every venue for each review (in parallel, order preserved).
pub fn rank_reviews(model: &LmRec, reviews: &[&Review]) -> Vec<EvalInstance> {
    reviews
        .par_iter()
        .map(|r| EvalInstance {
            review_id: r.review_id.clone(),
            true_business_id: r.business_id.clone(),
            ranking: model.rank_all(&r.text),
        })
        .collect()
}

pub fn evaluate_instances(
    city: &str,
    instances: &[EvalInstance],
    catalog: &Catalog,
    averaging: Averaging,
) -> Result<EvalRow> {
    let multiclass = multiclass_metrics(instances, averaging)?;
    let judgments = instances
        .iter()
        .map(|i| judge(i, catalog))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalRow {
        city: city.into(),
        multiclass,
        coverage: coverage_metrics(&judgments)?,
    })
}

/// Ranking-metric row for a model on held-out reviews of one city.
pub fn evaluate_city(
    city: &str,
    model: &LmRec,
    test: &[&Review],
    catalog: &Catalog,
    averaging: Averaging,
) -> Result<EvalRow> {
    evaluate_instances(city, &rank_reviews(model, test), catalog, averaging)
}

/// Ranking-metric CSV: one row per city, then `Average` and `95% CI ±` rows when
/// there is more than one city.
pub fn metrics_csv(rows: &[EvalRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let data = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(METRIC_COLUMNS).map_err(data)?;
    for row in rows {
        let mut rec = vec![row.city.clone()];
        rec.extend(row.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(data)?;
    }
    if rows.len() > 1 {
        let aggs: Vec<_> = (0..15)
            .map(|c| {
                let vals: Vec<(String, Option<f64>)> =
                    rows.iter().map(|r| (r.city.clone(), Some(r.values()[c]))).collect();
                aggregate_cities(&vals).expect("non-empty")
            })
            .collect();
        let mut avg = vec!["Average".to_string()];
        avg.extend(aggs.iter().map(|a| format!("{:.6}", a.mean)));
        w.write_record(&avg).map_err(data)?;
        let mut ci = vec!["95% CI ±".to_string()];
        ci.extend(aggs.iter().map(|a| format!("{:.6}", a.ci95.unwrap_or(0.0))));
        w.write_record(&ci).map_err(data)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}
