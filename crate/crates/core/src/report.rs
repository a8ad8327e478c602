//! Machine-readable run summaries written by the command-line tool.

use serde::{Deserialize, Serialize};

use crate::eval::EvalResult;

/// Accuracy of one metric with its 95% interval `accuracy ± 1.96 * stderr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub accuracy: f64,
    pub ci95: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MetricSummary {
    pub fn from_result(result: &EvalResult, way: usize, shot: usize) -> Self {
        Self {
            metric: result.metric.name().to_string(),
            way,
            shot,
            episodes: result.outcomes.len(),
            accuracy: result.accuracy,
            ci95: result.ci95,
            ci_low: result.accuracy - result.ci95,
            ci_high: result.accuracy + result.ci95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub metrics: Vec<MetricSummary>,
    pub duration_seconds: f64,
    pub outputs: Vec<String>,
}
