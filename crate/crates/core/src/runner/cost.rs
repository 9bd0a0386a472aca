//! Up-front token, cost and duration estimate for a screening run.
//!
//! Input tokens come from the chars/4 heuristic over every rendered decision
//! prompt; each decision is assumed to cost one output token. The projected
//! wall time only accounts for the rate limit, so it is a lower bound.

use serde::{Deserialize, Serialize};

use super::{DatasetRun, RunConfig};
use crate::corpus::{CorpusError, ScreeningManifest};
use crate::llm::count_tokens_estimate;
use crate::prompt::build_decision_prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCost {
    pub dataset: String,
    pub rows: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub projected_wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub datasets: Vec<DatasetCost>,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub cost: f64,
    pub projected_wall_time_secs: f64,
}

pub fn estimate_cost(
    manifest: &ScreeningManifest,
    datasets: &[DatasetRun],
    config: &RunConfig,
) -> Result<CostEstimate, CorpusError> {
    let seconds_per_request = 60.0 / f64::from(config.requests_per_minute.max(1));
    let mut per_dataset = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let criteria = manifest.criteria(&ds.name)?;
        let input_tokens: u64 = ds
            .records
            .iter()
            .map(|r| count_tokens_estimate(&build_decision_prompt(r, criteria).body))
            .sum();
        let output_tokens = ds.records.len() as u64;
        per_dataset.push(DatasetCost {
            dataset: ds.name.clone(),
            rows: ds.records.len(),
            input_tokens,
            output_tokens,
            cost: config.cost(input_tokens, output_tokens),
            projected_wall_time_secs: ds.records.len() as f64 * seconds_per_request,
        });
    }

    let total_input_tokens = per_dataset.iter().map(|d| d.input_tokens).sum();
    let total_output_tokens = per_dataset.iter().map(|d| d.output_tokens).sum();
    let rows: usize = per_dataset.iter().map(|d| d.rows).sum();
    Ok(CostEstimate {
        datasets: per_dataset,
        total_input_tokens,
        total_output_tokens,
        cost: config.cost(total_input_tokens, total_output_tokens),
        projected_wall_time_secs: rows as f64 * seconds_per_request,
    })
}
