use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Cross-city summary of one score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateScore {
    pub per_city: Vec<(String, f64)>,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single city.
    pub sd: Option<f64>,
    /// Student-t 95% half-width; `None` for a single city.
    pub ci95: Option<f64>,
    pub n: usize,
}

/// Two-sided 95% Student-t quantile with `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df is positive")
        .inverse_cdf(0.975)
}

/// Mean and t-based CI over the defined per-city values. Undefined entries
/// are dropped; `None` when nothing is left.
pub fn aggregate_cities(values: &[(String, Option<f64>)]) -> Option<AggregateScore> {
    let per_city: Vec<(String, f64)> = values.iter().filter_map(|(c, v)| v.map(|v| (c.clone(), v))).collect();
    let n = per_city.len();
    if n == 0 {
        return None;
    }
    let mean = per_city.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    let (sd, ci95) = if n >= 2 {
        let var = per_city.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        (Some(sd), Some(t_quantile_975(n - 1) * sd / (n as f64).sqrt()))
    } else {
        (None, None)
    };
    Some(AggregateScore {
        per_city,
        mean,
        sd,
        ci95,
        n,
    })
}
