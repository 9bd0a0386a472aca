use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use absieve_core::corpus::load_decision_columns;
use absieve_core::llm::{HttpBackend, MockBackend, MockScript};
use absieve_core::metrics::{
    confusion_csv, confusion_matrix, confusion_svg, format_ratio, table_csv, weighted_summary,
    ConfusionMatrix, DatasetMetrics, WeightedSummary,
};
use absieve_core::runner::{estimate_cost, DatasetRun, ExplainMode, RunReport, Runner};
use absieve_core::{
    load_dataset, load_manifest, write_results, CompletionBackend, ScreeningManifest, ScreeningRecord,
};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{require_dir, require_file, AppConfig, BackendKind};

pub const RUN_LOG: &str = "run_log.jsonl";
pub const RUN_REPORT: &str = "run_report.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const COST_JSON: &str = "cost_estimate.json";
pub const POOLED_LABEL: &str = "Overall (pooled)";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("dataset `{dataset}`: no rows eligible for {mode}")]
    NoEligibleRows { dataset: String, mode: &'static str },
    #[error("dataset `{dataset}`: no rows where both `{truth}` and `{pred}` are included/excluded")]
    NoComparableRows {
        dataset: String,
        truth: String,
        pred: String,
    },
    #[error("{}: does not match dataset `{dataset}` ({reason}); rerun without --resume", path.display())]
    ResultsMismatch {
        path: PathBuf,
        dataset: String,
        reason: String,
    },
    #[error("no results files found in {}", .0.display())]
    NoResults(PathBuf),
}

fn exit_for(row_errors: usize) -> ExitCode {
    if row_errors > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn open_manifest(cfg: &AppConfig) -> Result<ScreeningManifest> {
    require_file(&cfg.manifest, "manifest")?;
    Ok(load_manifest(&cfg.manifest)?)
}

fn select_names(manifest: &ScreeningManifest, dataset: Option<&str>) -> Result<Vec<String>> {
    match dataset {
        Some(name) => {
            manifest.criteria(name)?;
            Ok(vec![name.to_string()])
        }
        None => Ok(manifest.names().map(str::to_string).collect()),
    }
}

fn make_backend(cfg: &AppConfig) -> Result<Arc<dyn CompletionBackend>> {
    Ok(match cfg.require_backend()? {
        BackendKind::Http {
            base_url,
            api_key_env,
            timeout,
        } => {
            let backend = HttpBackend::from_env(base_url, api_key_env).timeout(*timeout);
            if !backend.has_credential() {
                bail!("backend: environment variable `{api_key_env}` holding the API key is not set");
            }
            Arc::new(backend)
        }
        BackendKind::Mock { script } => {
            require_file(script, "mock script")?;
            let script = MockScript::from_file(script)
                .with_context(|| format!("reading mock script {}", script.display()))?;
            Arc::new(MockBackend::new(script))
        }
    })
}

fn create_output_dir(cfg: &AppConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))
}

fn check_resumable(path: &Path, dataset: &str, input: &[ScreeningRecord], saved: &[ScreeningRecord]) -> Result<()> {
    let mismatch = |reason: String| CliError::ResultsMismatch {
        path: path.to_path_buf(),
        dataset: dataset.to_string(),
        reason,
    };
    if input.len() != saved.len() {
        return Err(mismatch(format!("{} rows vs {}", saved.len(), input.len())).into());
    }
    if let Some((a, _)) = input
        .iter()
        .zip(saved)
        .find(|(a, b)| a.title != b.title || a.abstract_text != b.abstract_text)
    {
        return Err(mismatch(format!("row {} differs", a.row_index)).into());
    }
    Ok(())
}

pub struct ScreenArgs {
    pub dataset: Option<String>,
    pub resume: bool,
    pub limit: Option<usize>,
}

pub async fn screen(cfg: &AppConfig, args: ScreenArgs) -> Result<ExitCode> {
    let manifest = open_manifest(cfg)?;
    require_dir(&cfg.data_dir, "data_dir")?;
    let names = select_names(&manifest, args.dataset.as_deref())?;
    let backend = make_backend(cfg)?;
    create_output_dir(cfg)?;

    let mut datasets = Vec::with_capacity(names.len());
    for name in &names {
        let input = load_dataset(cfg.dataset_path(name), name, &manifest)?;
        let results = cfg.results_path(name);
        let records = if args.resume && results.is_file() {
            let saved = load_dataset(&results, name, &manifest)?;
            check_resumable(&results, name, &input, &saved)?;
            saved
        } else {
            if args.resume {
                warn!(dataset = %name, "no results file to resume from; starting fresh");
            }
            input
                .into_iter()
                .map(|r| ScreeningRecord {
                    model_decision: None,
                    explanation: None,
                    reflection: None,
                    ..r
                })
                .collect()
        };
        datasets.push(DatasetRun::new(name.clone(), records).with_results_path(results));
    }

    let mut run = cfg.run.clone();
    run.row_limit = args.limit;
    let runner = Runner::new(backend, run)?.with_run_log(cfg.output_dir.join(RUN_LOG))?;
    info!(datasets = names.len(), "screening");
    let report = runner.run_screening(&manifest, &mut datasets).await?;
    for ds in &datasets {
        if let Some(path) = &ds.results_path {
            write_results(&ds.records, path)?;
        }
    }
    write_json(&cfg.output_dir.join(RUN_REPORT), &report)?;
    print_run_report(&report);
    Ok(exit_for(report.error_count()))
}

fn print_run_report(report: &RunReport) {
    for d in &report.datasets {
        println!(
            "{}: {} rows, {} screened, {} resumed, {} deferred | included {}, excluded {}, unparseable {}, error {} | empty abstracts {}",
            d.dataset,
            d.rows_total,
            d.rows_screened,
            d.rows_skipped_resume,
            d.rows_deferred,
            d.included_count,
            d.excluded_count,
            d.unparseable_count,
            d.error_count,
            d.empty_abstract_count,
        );
    }
    println!(
        "total: {} input tokens, {} output tokens, ${:.4}, {:.1}s",
        report.input_tokens, report.output_tokens, report.estimated_cost, report.wall_time_secs
    );
}

pub enum Selection {
    Sample(usize),
    Rows(Vec<usize>),
}

pub struct ExplainArgs {
    pub dataset: String,
    pub selection: Selection,
    pub mode: ExplainMode,
    pub seed: u64,
}

fn mode_name(mode: ExplainMode) -> &'static str {
    match mode {
        ExplainMode::Explain => "explain",
        ExplainMode::Reflect => "reflect",
    }
}

/// Picks `k` of the eligible row indices uniformly without replacement,
/// returned in ascending order.
pub fn sample_rows(eligible: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = k.min(eligible.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), amount)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

pub async fn explain(cfg: &AppConfig, args: ExplainArgs) -> Result<ExitCode> {
    let manifest = open_manifest(cfg)?;
    let criteria = manifest.criteria(&args.dataset)?.clone();
    let results = cfg.results_path(&args.dataset);
    require_file(&results, "results file")?;
    let records = load_dataset(&results, &args.dataset, &manifest)?;
    let backend = make_backend(cfg)?;

    let eligible: Vec<usize> = records
        .iter()
        .filter(|r| args.mode.is_eligible(r))
        .map(|r| r.row_index)
        .collect();
    let rows = match args.selection {
        Selection::Sample(k) => sample_rows(&eligible, k, args.seed),
        Selection::Rows(rows) => rows,
    };
    if !rows.iter().any(|r| eligible.binary_search(r).is_ok()) {
        return Err(CliError::NoEligibleRows {
            dataset: args.dataset,
            mode: mode_name(args.mode),
        }
        .into());
    }

    let runner = Runner::new(backend, cfg.run.clone())?.with_run_log(cfg.output_dir.join(RUN_LOG))?;
    let mut ds = DatasetRun::new(args.dataset.clone(), records);
    let report = runner.run_explanations(&criteria, &mut ds, &rows, args.mode).await?;
    write_results(&ds.records, &results)?;
    println!(
        "{} ({}): rows {:?} | {} completed, {} skipped, {} errors | {} input tokens, {} output tokens",
        report.dataset,
        mode_name(args.mode),
        rows,
        report.completed,
        report.skipped,
        report.errors,
        report.input_tokens,
        report.output_tokens,
    );
    Ok(exit_for(report.errors))
}

pub struct EvaluateArgs {
    pub datasets: Vec<String>,
    pub all: bool,
    pub truth: String,
    pub pred: String,
    pub pooled: bool,
}

#[derive(Debug, Serialize)]
struct MetricsDocument {
    truth_column: String,
    pred_column: String,
    datasets: Vec<DatasetMetrics>,
    summary: WeightedSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled: Option<DatasetMetrics>,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_confusion(dir: &Path, name: &str, cm: &ConfusionMatrix) -> Result<()> {
    let stem = file_stem(name);
    let csv_path = dir.join(format!("confusion_{stem}.csv"));
    fs::write(&csv_path, confusion_csv(cm)).with_context(|| format!("writing {}", csv_path.display()))?;
    let svg_path = dir.join(format!("confusion_{stem}.svg"));
    fs::write(&svg_path, confusion_svg(name, cm)).with_context(|| format!("writing {}", svg_path.display()))
}

pub fn evaluate(cfg: &AppConfig, args: EvaluateArgs) -> Result<ExitCode> {
    let names: Vec<String> = if args.all {
        let manifest = open_manifest(cfg)?;
        let found: Vec<String> = manifest
            .names()
            .filter(|n| {
                let present = cfg.results_path(n).is_file();
                if !present {
                    warn!(dataset = %n, "no results file; skipped");
                }
                present
            })
            .map(str::to_string)
            .collect();
        if found.is_empty() {
            return Err(CliError::NoResults(cfg.output_dir.clone()).into());
        }
        found
    } else {
        if args.datasets.is_empty() {
            bail!("evaluate: pass --dataset NAME or --all");
        }
        args.datasets.clone()
    };

    let mut metrics = Vec::with_capacity(names.len());
    for name in &names {
        let path = cfg.results_path(name);
        require_file(&path, "results file")?;
        let (truth, pred) = load_decision_columns(&path, &args.truth, &args.pred)?;
        let cm = confusion_matrix(&truth, &pred)?;
        if cm.n() == 0 {
            return Err(CliError::NoComparableRows {
                dataset: name.clone(),
                truth: args.truth.clone(),
                pred: args.pred.clone(),
            }
            .into());
        }
        if cm.dropped > 0 {
            warn!(dataset = %name, dropped = cm.dropped, "rows without two labels left out");
        }
        metrics.push(DatasetMetrics::compute(name.clone(), cm)?);
    }

    let rows: Vec<_> = metrics.iter().map(DatasetMetrics::table_row).collect();
    let summary = weighted_summary(&rows)?;
    let pooled = if args.pooled {
        let cm: ConfusionMatrix = metrics.iter().map(|m| m.confusion).sum();
        Some(DatasetMetrics::compute(POOLED_LABEL, cm)?)
    } else {
        None
    };

    fs::create_dir_all(&cfg.output_dir)?;
    for m in metrics.iter().chain(pooled.as_ref()) {
        write_confusion(&cfg.output_dir, &m.dataset, &m.confusion)?;
    }
    let table = table_csv(&rows, &summary);
    let csv_path = cfg.output_dir.join(METRICS_CSV);
    fs::write(&csv_path, &table).with_context(|| format!("writing {}", csv_path.display()))?;
    write_json(
        &cfg.output_dir.join(METRICS_JSON),
        &MetricsDocument {
            truth_column: args.truth,
            pred_column: args.pred,
            datasets: metrics,
            summary: summary.clone(),
            pooled: pooled.clone(),
        },
    )?;

    print!("{table}");
    if let Some(p) = &pooled {
        println!(
            "{},{},{},{},{}",
            p.dataset,
            format_ratio(Some(p.accuracy)),
            format_ratio(p.sensitivity_included),
            format_ratio(p.sensitivity_excluded),
            format_ratio(p.kappa)
        );
    }
    println!("weighting: {}", summary.weighting);
    Ok(ExitCode::SUCCESS)
}

pub fn estimate(cfg: &AppConfig, dataset: Option<&str>) -> Result<ExitCode> {
    let manifest = open_manifest(cfg)?;
    require_dir(&cfg.data_dir, "data_dir")?;
    let mut datasets = Vec::new();
    for name in select_names(&manifest, dataset)? {
        let records = load_dataset(cfg.dataset_path(&name), &name, &manifest)?;
        datasets.push(DatasetRun::new(name, records));
    }
    let estimate = estimate_cost(&manifest, &datasets, &cfg.run)?;
    for d in &estimate.datasets {
        println!(
            "{}: {} rows, {} input tokens, {} output tokens, ${:.4}, >= {:.1} min",
            d.dataset,
            d.rows,
            d.input_tokens,
            d.output_tokens,
            d.cost,
            d.projected_wall_time_secs / 60.0
        );
    }
    println!(
        "total: {} input tokens, {} output tokens, ${:.4}, >= {:.1} min",
        estimate.total_input_tokens,
        estimate.total_output_tokens,
        estimate.cost,
        estimate.projected_wall_time_secs / 60.0
    );
    create_output_dir(cfg)?;
    write_json(&cfg.output_dir.join(COST_JSON), &estimate)?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded_and_sorted() {
        let eligible: Vec<usize> = (0..50).map(|i| i * 3).collect();
        let a = sample_rows(&eligible, 7, 11);
        assert_eq!(a, sample_rows(&eligible, 7, 11));
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|r| eligible.contains(r)));
        assert_eq!(sample_rows(&eligible, 500, 1), eligible);
        assert!(sample_rows(&[], 3, 1).is_empty());
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("Overall (pooled)"), "Overall__pooled_");
        assert_eq!(file_stem("IVM"), "IVM");
    }
}
