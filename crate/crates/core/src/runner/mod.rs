//! Screening loop: bounded concurrency, rate limiting, retries, checkpoints.
//!
//! One coordinator per run spawns at most `max_in_flight` workers. Every
//! backend call, retries included, first takes a slot from the shared
//! [`RateLimiter`]. Completed rows come back to the coordinator, which stores
//! them by position, appends to the run log, and rewrites the results file
//! every `checkpoint_every` rows. A non-empty `decision` cell in that file is
//! the only resume state.

mod config;
mod cost;
mod limiter;
mod log;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;
use tracing::{debug, warn};

use crate::corpus::{clean_text, write_results, CorpusError, CriteriaSet, Decision, ScreeningManifest, ScreeningRecord};
use crate::llm::{parse_decision, BackendError, CompletionBackend, CompletionRequest};
use crate::prompt::{build_decision_prompt, build_explain_prompt, build_reflect_prompt, PromptKind};

pub use config::{RunConfig, BACKOFF_CAP};
pub use cost::{estimate_cost, CostEstimate, DatasetCost};
pub use limiter::{backoff_ceiling, backoff_delay, RateLimiter};
pub use log::{CallLogEntry, RunLog};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Failures that make every further call pointless, e.g. no credential.
    #[error("run aborted: {0}")]
    Aborted(BackendError),
}

/// A dataset's records plus the file its checkpoints go to.
#[derive(Debug, Clone)]
pub struct DatasetRun {
    pub name: String,
    pub records: Vec<ScreeningRecord>,
    pub results_path: Option<PathBuf>,
}

impl DatasetRun {
    pub fn new(name: impl Into<String>, records: Vec<ScreeningRecord>) -> Self {
        Self {
            name: name.into(),
            records,
            results_path: None,
        }
    }

    pub fn with_results_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.results_path = Some(path.into());
        self
    }

    fn checkpoint(&self) -> Result<(), RunError> {
        if let Some(path) = &self.results_path {
            write_results(&self.records, path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub rows_total: usize,
    pub rows_screened: usize,
    pub rows_skipped_resume: usize,
    /// Rows left undecided because of `row_limit`.
    pub rows_deferred: usize,
    pub included_count: usize,
    pub excluded_count: usize,
    pub unparseable_count: usize,
    pub error_count: usize,
    /// Screened rows that had no abstract and were judged on the title alone.
    pub empty_abstract_count: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl DatasetReport {
    fn tally(&mut self, decision: Decision) {
        match decision {
            Decision::Included => self.included_count += 1,
            Decision::Excluded => self.excluded_count += 1,
            Decision::Unparseable => self.unparseable_count += 1,
            Decision::Error => self.error_count += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub datasets: Vec<DatasetReport>,
    pub wall_time_secs: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_cost: f64,
}

impl RunReport {
    pub fn error_count(&self) -> usize {
        self.datasets.iter().map(|d| d.error_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainMode {
    Explain,
    Reflect,
}

impl ExplainMode {
    /// Explain needs a human label and a model label; reflect additionally
    /// needs them to disagree.
    pub fn is_eligible(self, record: &ScreeningRecord) -> bool {
        match (record.human_decision, record.model_decision) {
            (Some(h), Some(m)) if h.is_label() && m.is_label() => match self {
                ExplainMode::Explain => true,
                ExplainMode::Reflect => h != m,
            },
            _ => false,
        }
    }

    fn kind(self) -> PromptKind {
        match self {
            ExplainMode::Explain => PromptKind::Explain,
            ExplainMode::Reflect => PromptKind::Reflect,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub dataset: String,
    pub requested: usize,
    pub completed: usize,
    pub skipped: usize,
    pub errors: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

struct Job {
    position: usize,
    request: CompletionRequest,
}

enum Answer {
    Decision(Decision),
    Text(String),
    Failed(BackendError),
}

struct JobOutcome {
    position: usize,
    answer: Answer,
    abort: Option<BackendError>,
    attempts: Vec<CallLogEntry>,
    input_tokens: u64,
    output_tokens: u64,
}

#[derive(Clone, Copy)]
struct RetryPolicy {
    max_retries: u32,
    backoff_base: Duration,
}

pub struct Runner {
    backend: Arc<dyn CompletionBackend>,
    config: RunConfig,
    limiter: Arc<RateLimiter>,
    log: Mutex<Option<RunLog>>,
}

impl Runner {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        Ok(Self {
            backend,
            limiter: Arc::new(RateLimiter::per_minute(config.requests_per_minute)),
            config,
            log: Mutex::new(None),
        })
    }

    pub fn with_run_log(self, path: impl Into<PathBuf>) -> Result<Self, RunError> {
        let path = path.into();
        let log = RunLog::append(&path).map_err(|source| RunError::Io { path, source })?;
        *self.log.lock().unwrap() = Some(log);
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Screens every record that has no model decision yet.
    ///
    /// Datasets run one after another; rows within a dataset run concurrently.
    /// Backend failures end up as `Decision::Error` on the row. Only checkpoint
    /// I/O and a missing credential abort the run.
    pub async fn run_screening(
        &self,
        manifest: &ScreeningManifest,
        datasets: &mut [DatasetRun],
    ) -> Result<RunReport, RunError> {
        for ds in datasets.iter() {
            manifest.criteria(&ds.name)?;
        }
        let started = Instant::now();
        let mut budget = self.config.row_limit;
        let mut report = RunReport::default();
        for ds in datasets.iter_mut() {
            let criteria = manifest.criteria(&ds.name)?;
            let dataset_report = self.screen_dataset(criteria, ds, &mut budget).await?;
            report.input_tokens += dataset_report.input_tokens;
            report.output_tokens += dataset_report.output_tokens;
            report.datasets.push(dataset_report);
        }
        report.wall_time_secs = started.elapsed().as_secs_f64();
        report.estimated_cost = self.config.cost(report.input_tokens, report.output_tokens);
        Ok(report)
    }

    async fn screen_dataset(
        &self,
        criteria: &CriteriaSet,
        ds: &mut DatasetRun,
        budget: &mut Option<usize>,
    ) -> Result<DatasetReport, RunError> {
        let pending: Vec<usize> = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.model_decision.is_none())
            .map(|(pos, _)| pos)
            .collect();
        let take = budget.map_or(pending.len(), |b| b.min(pending.len()));
        if let Some(b) = budget.as_mut() {
            *b -= take;
        }

        let mut report = DatasetReport {
            dataset: ds.name.clone(),
            rows_total: ds.records.len(),
            rows_skipped_resume: ds.records.len() - pending.len(),
            rows_deferred: pending.len() - take,
            ..DatasetReport::default()
        };
        debug!(
            dataset = %ds.name,
            pending = pending.len(),
            dispatching = take,
            "screening"
        );

        let jobs: Vec<Job> = pending[..take]
            .iter()
            .map(|&position| {
                let record = &ds.records[position];
                let mut request = CompletionRequest::new(
                    self.config.model.clone(),
                    build_decision_prompt(record, criteria),
                )
                .tagged(ds.name.clone(), record.row_index);
                request.temperature = self.config.temperature;
                request.max_output_tokens = self.config.decision_max_tokens;
                Job { position, request }
            })
            .collect();

        let mut since_checkpoint = 0;
        self.dispatch(jobs, |outcome| {
            let decision = match outcome.answer {
                Answer::Decision(d) => d,
                Answer::Failed(ref e) => {
                    warn!(dataset = %ds.name, position = outcome.position, error = %e, "row failed");
                    Decision::Error
                }
                Answer::Text(_) => unreachable!("decision jobs yield decisions"),
            };
            let record = &mut ds.records[outcome.position];
            record.model_decision = Some(decision);
            report.rows_screened += 1;
            report.tally(decision);
            if record.abstract_text.is_empty() {
                report.empty_abstract_count += 1;
            }
            report.input_tokens += outcome.input_tokens;
            report.output_tokens += outcome.output_tokens;

            since_checkpoint += 1;
            if since_checkpoint >= self.config.checkpoint_every {
                ds.checkpoint()?;
                since_checkpoint = 0;
            }
            Ok(())
        })
        .await?;
        ds.checkpoint()?;
        Ok(report)
    }

    /// Asks for an explanation or reflection on the rows at `row_indices`.
    ///
    /// Rows that do not meet the mode's precondition (see
    /// [`ExplainMode::is_eligible`]) or do not exist are skipped and counted.
    /// Responses are cleaned before being stored.
    pub async fn run_explanations(
        &self,
        criteria: &CriteriaSet,
        ds: &mut DatasetRun,
        row_indices: &[usize],
        mode: ExplainMode,
    ) -> Result<ExplainReport, RunError> {
        let mut report = ExplainReport {
            dataset: ds.name.clone(),
            requested: row_indices.len(),
            ..ExplainReport::default()
        };
        let mut jobs = Vec::new();
        for &row in row_indices {
            let Some(position) = ds.records.iter().position(|r| r.row_index == row) else {
                report.skipped += 1;
                continue;
            };
            let record = &ds.records[position];
            if !mode.is_eligible(record) {
                report.skipped += 1;
                continue;
            }
            let (human, model) = (record.human_decision.unwrap(), record.model_decision.unwrap());
            let prompt = match mode {
                ExplainMode::Explain => build_explain_prompt(record, criteria, human, model),
                ExplainMode::Reflect => build_reflect_prompt(record, criteria, human, model),
            };
            let Ok(prompt) = prompt else {
                report.skipped += 1;
                continue;
            };
            debug_assert_eq!(prompt.kind, mode.kind());
            let mut request = CompletionRequest::new(self.config.model.clone(), prompt)
                .tagged(ds.name.clone(), record.row_index);
            request.temperature = self.config.temperature;
            request.max_output_tokens = self.config.explain_max_tokens;
            jobs.push(Job { position, request });
        }

        let mut since_checkpoint = 0;
        self.dispatch(jobs, |outcome| {
            report.input_tokens += outcome.input_tokens;
            report.output_tokens += outcome.output_tokens;
            match outcome.answer {
                Answer::Text(text) => {
                    let record = &mut ds.records[outcome.position];
                    let slot = match mode {
                        ExplainMode::Explain => &mut record.explanation,
                        ExplainMode::Reflect => &mut record.reflection,
                    };
                    *slot = Some(clean_text(&text));
                    report.completed += 1;
                }
                Answer::Failed(e) => {
                    warn!(dataset = %ds.name, position = outcome.position, error = %e, "explanation failed");
                    report.errors += 1;
                }
                Answer::Decision(_) => unreachable!("follow-up jobs yield text"),
            }
            since_checkpoint += 1;
            if since_checkpoint >= self.config.checkpoint_every {
                ds.checkpoint()?;
                since_checkpoint = 0;
            }
            Ok(())
        })
        .await?;
        ds.checkpoint()?;
        Ok(report)
    }

    async fn dispatch<F>(&self, jobs: Vec<Job>, mut on_done: F) -> Result<(), RunError>
    where
        F: FnMut(JobOutcome) -> Result<(), RunError>,
    {
        let policy = RetryPolicy {
            max_retries: self.config.max_retries,
            backoff_base: self.config.backoff_base,
        };
        let mut queue = jobs.into_iter();
        let mut workers = JoinSet::new();
        loop {
            while workers.len() < self.config.max_in_flight {
                let Some(job) = queue.next() else { break };
                workers.spawn(execute(
                    Arc::clone(&self.backend),
                    Arc::clone(&self.limiter),
                    policy,
                    job,
                ));
            }
            let Some(joined) = workers.join_next().await else {
                return Ok(());
            };
            let outcome = match joined {
                Ok(outcome) => outcome,
                Err(e) if e.is_panic() => std::panic::resume_unwind(e.into_panic()),
                Err(e) => unreachable!("worker cancelled while the coordinator is alive: {e}"),
            };
            self.log_attempts(&outcome.attempts)?;
            if let Some(err) = outcome.abort {
                workers.abort_all();
                return Err(RunError::Aborted(err));
            }
            on_done(outcome)?;
        }
    }

    fn log_attempts(&self, attempts: &[CallLogEntry]) -> Result<(), RunError> {
        let mut guard = self.log.lock().unwrap();
        if let Some(log) = guard.as_mut() {
            for entry in attempts {
                log.write(entry).map_err(|source| RunError::Io {
                    path: log.path().to_path_buf(),
                    source,
                })?;
            }
        }
        Ok(())
    }
}

/// Runs one job to completion.
///
/// Transient errors are retried up to `max_retries` times with backoff; a
/// decision that parses as `Unparseable` is asked once more. Per job that is at
/// most `1 + max_retries + 1` backend calls.
async fn execute(
    backend: Arc<dyn CompletionBackend>,
    limiter: Arc<RateLimiter>,
    policy: RetryPolicy,
    job: Job,
) -> JobOutcome {
    let kind = job.request.prompt.kind;
    let (dataset, row) = job
        .request
        .tag
        .as_ref()
        .map(|t| (t.dataset.clone(), t.row))
        .unwrap_or_default();
    let mut outcome = JobOutcome {
        position: job.position,
        answer: Answer::Failed(BackendError::Fatal {
            status: None,
            message: "no attempt made".into(),
        }),
        abort: None,
        attempts: Vec::new(),
        input_tokens: 0,
        output_tokens: 0,
    };
    let mut retries_left = policy.max_retries;
    let mut reask_left = kind == PromptKind::Decision;
    let mut transient_streak = 0u32;
    let mut attempt = 0u32;

    loop {
        limiter.acquire().await;
        attempt += 1;
        let mut entry = CallLogEntry {
            dataset: dataset.clone(),
            row,
            kind: kind.as_str().to_string(),
            attempt,
            latency_ms: 0,
            input_tokens: 0,
            output_tokens: 0,
            outcome: String::new(),
            error: None,
        };
        match backend.complete(&job.request).await {
            Ok(result) => {
                entry.latency_ms = result.latency.as_millis() as u64;
                entry.input_tokens = result.input_tokens;
                entry.output_tokens = result.output_tokens;
                outcome.input_tokens += result.input_tokens;
                outcome.output_tokens += result.output_tokens;
                if kind == PromptKind::Decision {
                    let decision = parse_decision(&result.text);
                    entry.outcome = decision.as_str().to_string();
                    outcome.attempts.push(entry);
                    if decision == Decision::Unparseable && reask_left {
                        reask_left = false;
                        continue;
                    }
                    outcome.answer = Answer::Decision(decision);
                } else {
                    entry.outcome = "ok".to_string();
                    outcome.attempts.push(entry);
                    outcome.answer = Answer::Text(result.text);
                }
                return outcome;
            }
            Err(err) => {
                entry.outcome = match &err {
                    BackendError::Transient { .. } => "transient",
                    BackendError::Fatal { .. } => "fatal",
                    BackendError::AuthMissing { .. } => "auth_missing",
                }
                .to_string();
                entry.error = Some(err.to_string());
                outcome.attempts.push(entry);
                if matches!(err, BackendError::AuthMissing { .. }) {
                    outcome.abort = Some(err);
                    return outcome;
                }
                if err.is_transient() && retries_left > 0 {
                    retries_left -= 1;
                    let delay = backoff_delay(transient_streak, policy.backoff_base);
                    transient_streak += 1;
                    debug!(%dataset, row, attempt, ?delay, "retrying after transient error");
                    tokio::time::sleep(delay).await;
                    continue;
                }
                outcome.answer = Answer::Failed(err);
                return outcome;
            }
        }
    }
}
