//! The iterative repair loop: generate candidates, verify them against the
//! PoVs, assess the failures, pool them, and continue from the top-ranked
//! failing patch until a candidate is plausible or the budget runs out.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CountingBackend, GeneratorBackend};
use crate::bank::{select_few_shots, BankError, ExampleBank};
use crate::corpus::{FunctionSnapshot, HunkLocation, RepairTask};
use crate::generate::{
    apply_patch, generate_candidates, predict_patch_locations, CandidatePatch, GenerateError,
    PredictionSettings,
};
use crate::hunks::{compute_hunks, diff_lines, to_location_sequence, HunkDiff};
use crate::pool::{FailingPatchPool, PoolInsertOutcome};
use crate::prompt::build_prompt_for;
use crate::sequence::serialize_sequence;
use crate::trace::{assess, TraceProvider};
use crate::verify::{verify, ProgramVariant, VerificationOutcome, VerifyError, VerifyOptions};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("sanity check failed: {0}")]
    SanityCheckFailed(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Harness(#[from] VerifyError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("run directory {path}: {reason}")]
    RunDir { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub num_iterations: usize,
    pub candidates_per_iteration: usize,
    pub rng_seed: u64,
    pub generation_temperature: f64,
    pub location_temperature: f64,
    pub location_retry_budget: usize,
    pub compile_log_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_iterations: 3,
            candidates_per_iteration: 5,
            rng_seed: 0,
            generation_temperature: 0.7,
            location_temperature: 0.0,
            location_retry_budget: 2,
            compile_log_cap: 8 * 1024,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), OrchestratorError> {
        if self.num_iterations == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "num_iterations must be >= 1".into(),
            ));
        }
        if self.candidates_per_iteration == 0 {
            return Err(OrchestratorError::InvalidConfig(
                "candidates_per_iteration must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on backend calls for a full run.
    pub fn backend_call_budget(&self) -> usize {
        self.num_iterations
            * (self.candidates_per_iteration + 1 + self.location_retry_budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum RunStatus {
    Plausible {
        patch_id: String,
        iteration: usize,
        patched_function: String,
    },
    Exhausted {
        reason: String,
    },
}

impl RunStatus {
    pub fn is_plausible(&self) -> bool {
        matches!(self, RunStatus::Plausible { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub patch_id: String,
    pub outcome: VerificationOutcome,
    pub fitness: Option<f64>,
    pub introduces_new_vuln: Option<bool>,
    pub disposition: String,
    pub changed_lines: usize,
    pub matches_prediction: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub parent_patch_id: Option<String>,
    pub predicted_sequence: String,
    pub location_fallback: bool,
    pub prompt_digest: String,
    pub generation_errors: usize,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub patch_id: String,
    pub fitness: f64,
    pub changed_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub task_id: String,
    pub status: RunStatus,
    pub backend_calls: usize,
    pub config: RunConfig,
    pub iterations: Vec<IterationRecord>,
    pub pool_remaining: Vec<PoolSummary>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunTimings {
    pub stages: Vec<StageTiming>,
    pub total_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub iteration: usize,
    pub stage: String,
    pub ms: u128,
}

/// Tees every backend call to the run's artifacts directory so prompts and
/// responses can be audited after the fact.
struct ArchivingBackend<'a> {
    inner: &'a CountingBackend<'a>,
    dir: PathBuf,
    counter: Mutex<usize>,
}

impl<'a> ArchivingBackend<'a> {
    fn new(inner: &'a CountingBackend<'a>, dir: PathBuf) -> Self {
        ArchivingBackend {
            inner,
            dir,
            counter: Mutex::new(0),
        }
    }
}

impl GeneratorBackend for ArchivingBackend<'_> {
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<String, BackendError> {
        let ordinal = {
            let mut counter = self.counter.lock().expect("archive counter poisoned");
            let v = *counter;
            *counter += 1;
            v
        };
        let _ = fs::create_dir_all(&self.dir);
        let _ = fs::write(self.dir.join(format!("call-{ordinal:03}.prompt.txt")), user);
        let result = self.inner.complete(system, user, temperature, seed);
        match &result {
            Ok(text) => {
                let _ = fs::write(self.dir.join(format!("call-{ordinal:03}.response.txt")), text);
            }
            Err(err) => {
                let _ = fs::write(
                    self.dir.join(format!("call-{ordinal:03}.error.txt")),
                    err.to_string(),
                );
            }
        }
        result
    }
}

/// Maps each old function-local line to its line in the new text, `None` for
/// removed lines.
fn old_to_new_map(old_len: usize, diff: &HunkDiff) -> Vec<Option<usize>> {
    let mut removed = vec![false; old_len + 1];
    for hunk in &diff.removals {
        removed[hunk.start_line..=hunk.end_line].fill(true);
    }
    let mut map = vec![None; old_len + 1];
    let mut new_pos = 0usize;
    for ins in diff.insertions.iter().filter(|i| i.after_old_line == 0) {
        new_pos += ins.new_lines.len();
    }
    for line in 1..=old_len {
        if !removed[line] {
            new_pos += 1;
            map[line] = Some(new_pos);
        }
        for ins in diff.insertions.iter().filter(|i| i.after_old_line == line) {
            new_pos += ins.new_lines.len();
        }
    }
    map
}

/// Re-anchors the original vulnerable hunks onto a patched revision of the
/// function. Hunks whose lines were all removed collapse to the position
/// where the removed region used to live.
pub fn remap_hunks(
    original: &FunctionSnapshot,
    current: &FunctionSnapshot,
    hunks: &[HunkLocation],
) -> Vec<HunkLocation> {
    let diff = compute_hunks(original, current);
    let map = old_to_new_map(original.len(), &diff);
    let new_len = current.len().max(1);

    hunks
        .iter()
        .map(|hunk| {
            let kept: Vec<usize> = (hunk.start_line..=hunk.end_line)
                .filter_map(|line| map[line])
                .collect();
            if let (Some(first), Some(last)) = (kept.first(), kept.last()) {
                return HunkLocation::new(*first, *last);
            }
            let before = (1..hunk.start_line).rev().find_map(|line| map[line]);
            let anchor = match before {
                Some(new_line) => (new_line + 1).min(new_len),
                None => 1,
            };
            HunkLocation::new(anchor, anchor)
        })
        .collect()
}

struct StageClock<'a> {
    timings: &'a mut RunTimings,
    iteration: usize,
}

impl StageClock<'_> {
    fn time<T>(&mut self, stage: &str, body: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = body();
        self.timings.stages.push(StageTiming {
            iteration: self.iteration,
            stage: stage.to_owned(),
            ms: start.elapsed().as_millis(),
        });
        value
    }
}

fn archive(path: &Path, content: &str) {
    if let Some(parent) = path.parent() {
        let _ = fs::create_dir_all(parent);
    }
    let _ = fs::write(path, content);
}

/// Runs the full repair loop for one task and persists `report.json`,
/// `timings.json`, and per-call artifacts under `run_dir`.
pub fn run_repair(
    task: &RepairTask,
    config: &RunConfig,
    backend: &dyn GeneratorBackend,
    provider: &dyn TraceProvider,
    bank: &ExampleBank,
    run_dir: &Path,
) -> Result<RepairReport, OrchestratorError> {
    config.validate()?;
    fs::create_dir_all(run_dir).map_err(|err| OrchestratorError::RunDir {
        path: run_dir.to_path_buf(),
        reason: err.to_string(),
    })?;

    let counting = CountingBackend::new(backend);
    let archiving = ArchivingBackend::new(&counting, run_dir.join("artifacts").join("calls"));
    let verify_opts = VerifyOptions {
        compile_log_cap: config.compile_log_cap,
    };
    let mut timings = RunTimings::default();
    let run_start = Instant::now();

    let original_fn = &task.localization.function;
    let original_trace = &task.localization.original_trace;

    // The original program must reproduce its vulnerability, otherwise any
    // candidate would be trivially plausible.
    {
        let mut clock = StageClock {
            timings: &mut timings,
            iteration: 0,
        };
        let outcome = clock.time("sanity_check", || -> Result<_, OrchestratorError> {
            let workdir = run_dir.join("variants").join("original");
            let variant = apply_patch(
                &task.program,
                &task.localization,
                original_fn,
                &workdir,
                "original",
            )?;
            Ok(verify(&variant, &task.povs, &verify_opts)?)
        })?;
        match outcome {
            VerificationOutcome::FailingPoV { .. } => {}
            other => {
                return Err(OrchestratorError::SanityCheckFailed(format!(
                    "original program verified as {} instead of failing its PoV",
                    other.label()
                )))
            }
        }
    }

    let mut pool = FailingPatchPool::new();
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut status: Option<RunStatus> = None;
    let mut next_patch_number = 1usize;

    let mut current_fn = original_fn.clone();
    let mut current_hunks = task.localization.vulnerable_hunks.clone();
    let mut parent_id: Option<String> = None;

    for iteration in 1..=config.num_iterations {
        let mut clock = StageClock {
            timings: &mut timings,
            iteration,
        };

        if iteration > 1 {
            match pool.pop_best() {
                Some(entry) => {
                    parent_id = Some(entry.assessed.patch.patch_id.clone());
                    current_fn = entry.assessed.patch.patched_function.clone();
                    current_hunks = clock.time("localization", || {
                        remap_hunks(original_fn, &current_fn, &task.localization.vulnerable_hunks)
                    });
                }
                None => {
                    status = Some(RunStatus::Exhausted {
                        reason: "failing-patch pool is empty".into(),
                    });
                    break;
                }
            }
        }

        let shots = select_few_shots(
            bank,
            &task.cwe_id,
            2,
            config.rng_seed.wrapping_add(iteration as u64),
        )?;

        let prediction_settings = PredictionSettings {
            temperature: config.location_temperature,
            retry_budget: config.location_retry_budget,
        };
        let prediction = clock.time("location_prediction", || {
            predict_patch_locations(
                &current_fn,
                &current_hunks,
                &shots,
                &archiving,
                &prediction_settings,
            )
        });
        let prediction = match prediction {
            Ok(outcome) => outcome,
            Err(GenerateError::Backend(err)) if iteration > 1 => {
                // A dead backend mid-run: fall back to the identity-with-Add
                // sequence and let generation decide whether to abort.
                let _ = err;
                crate::generate::PredictionOutcome {
                    sequence: crate::generate::fallback_sequence(&current_fn, &current_hunks)?,
                    fallback_used: true,
                    backend_calls: 1 + config.location_retry_budget,
                }
            }
            Err(err) => return Err(err.into()),
        };

        let bundle = build_prompt_for(
            &task.cwe_id,
            &current_fn,
            &current_hunks,
            &prediction.sequence,
            &shots,
        );
        archive(
            &run_dir
                .join("artifacts")
                .join(format!("iter{iteration}"))
                .join("prompt.txt"),
            &bundle.user_message,
        );

        let generated = clock.time("generation", || {
            generate_candidates(
                &bundle,
                &archiving,
                config.candidates_per_iteration,
                config.generation_temperature,
                config.rng_seed.wrapping_add(iteration as u64),
                &current_fn,
                iteration,
                parent_id.as_deref(),
                next_patch_number,
            )
        });
        let generated = match generated {
            Ok(set) => set,
            Err(GenerateError::AllCallsFailed(n)) if iteration > 1 => {
                iterations.push(IterationRecord {
                    index: iteration,
                    parent_patch_id: parent_id.clone(),
                    predicted_sequence: serialize_sequence(&prediction.sequence),
                    location_fallback: prediction.fallback_used,
                    prompt_digest: bundle.digest.clone(),
                    generation_errors: n,
                    candidates: Vec::new(),
                });
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        next_patch_number += generated.patches.len();

        for patch in &generated.patches {
            archive(
                &run_dir
                    .join("artifacts")
                    .join(format!("iter{iteration}"))
                    .join(format!("{}.patched.txt", patch.patch_id)),
                &patch.patched_function.text(),
            );
        }

        // Verification fans out, one isolated workdir per candidate, and
        // joins in candidate order.
        let verified: Vec<(Option<ProgramVariant>, VerificationOutcome)> =
            clock.time("verification", || {
                verify_candidates(task, &generated.patches, run_dir, &verify_opts)
            })?;

        let candidate_views: Vec<CandidateView> = generated
            .patches
            .iter()
            .zip(verified)
            .map(|(patch, (variant, outcome))| {
                let diff = diff_lines(&current_fn.lines, &patch.patched_function.lines);
                let matches_prediction = to_location_sequence(&diff, current_fn.len())
                    .map(|seq| seq == prediction.sequence)
                    .unwrap_or(false);
                let changed_vs_original =
                    diff_lines(&original_fn.lines, &patch.patched_function.lines).changed_lines();
                archive(
                    &run_dir
                        .join("artifacts")
                        .join(format!("iter{iteration}"))
                        .join(format!("{}.diff.txt", patch.patch_id)),
                    &format!(
                        "{}\nchanged_lines_vs_base={}\nchanged_lines_vs_original={}\n",
                        to_location_sequence(&diff, current_fn.len())
                            .map(|s| serialize_sequence(&s))
                            .unwrap_or_else(|e| format!("<unprojectable: {e}>")),
                        diff.changed_lines(),
                        changed_vs_original
                    ),
                );
                CandidateView {
                    patch: patch.clone(),
                    variant,
                    outcome,
                    matches_prediction,
                    changed_vs_original,
                }
            })
            .collect();

        if let Some(winner) = candidate_views.iter().find(|c| c.outcome.is_plausible()) {
            let records = candidate_views
                .iter()
                .map(|view| {
                    let disposition = if view.patch.patch_id == winner.patch.patch_id {
                        "plausible"
                    } else {
                        "not_assessed"
                    };
                    view.record(disposition.into(), None, None, None)
                })
                .collect();
            iterations.push(IterationRecord {
                index: iteration,
                parent_patch_id: parent_id.clone(),
                predicted_sequence: serialize_sequence(&prediction.sequence),
                location_fallback: prediction.fallback_used,
                prompt_digest: bundle.digest.clone(),
                generation_errors: generated.call_errors.len(),
                candidates: records,
            });
            status = Some(RunStatus::Plausible {
                patch_id: winner.patch.patch_id.clone(),
                iteration,
                patched_function: winner.patch.patched_function.text(),
            });
            break;
        }

        let records = clock.time("assessment", || {
            let mut records = Vec::new();
            for view in &candidate_views {
                records.push(assess_candidate(view, task, provider, original_trace, &mut pool));
            }
            records
        });

        iterations.push(IterationRecord {
            index: iteration,
            parent_patch_id: parent_id.clone(),
            predicted_sequence: serialize_sequence(&prediction.sequence),
            location_fallback: prediction.fallback_used,
            prompt_digest: bundle.digest.clone(),
            generation_errors: generated.call_errors.len(),
            candidates: records,
        });
    }

    let status = status.unwrap_or(RunStatus::Exhausted {
        reason: "iteration budget exhausted".into(),
    });

    let pool_remaining = pool
        .snapshot()
        .into_iter()
        .map(|entry| PoolSummary {
            patch_id: entry.assessed.patch.patch_id.clone(),
            fitness: entry.assessed.fitness,
            changed_lines: entry.changed_lines,
        })
        .collect();

    let report = RepairReport {
        task_id: task.task_id.clone(),
        status,
        backend_calls: counting.calls(),
        config: config.clone(),
        iterations,
        pool_remaining,
    };

    timings.total_ms = run_start.elapsed().as_millis();
    persist_report(run_dir, &report, &timings)?;
    Ok(report)
}

struct CandidateView {
    patch: CandidatePatch,
    variant: Option<ProgramVariant>,
    outcome: VerificationOutcome,
    matches_prediction: bool,
    changed_vs_original: usize,
}

impl CandidateView {
    fn record(
        &self,
        disposition: String,
        fitness: Option<f64>,
        new_vuln: Option<bool>,
        note: Option<String>,
    ) -> CandidateRecord {
        CandidateRecord {
            patch_id: self.patch.patch_id.clone(),
            outcome: self.outcome.clone(),
            fitness,
            introduces_new_vuln: new_vuln,
            disposition,
            changed_lines: self.changed_vs_original,
            matches_prediction: self.matches_prediction,
            note,
        }
    }
}

fn verify_candidates(
    task: &RepairTask,
    patches: &[CandidatePatch],
    run_dir: &Path,
    opts: &VerifyOptions,
) -> Result<Vec<(Option<ProgramVariant>, VerificationOutcome)>, OrchestratorError> {
    let results: Vec<Result<(Option<ProgramVariant>, VerificationOutcome), String>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = patches
                .iter()
                .map(|patch| {
                    scope.spawn(move || {
                        if patch.parse_failed {
                            return Ok((
                                None,
                                VerificationOutcome::CompileFail {
                                    log_excerpt: "response contained no extractable code".into(),
                                },
                            ));
                        }
                        let workdir = run_dir.join("variants").join(&patch.patch_id);
                        let variant = apply_patch(
                            &task.program,
                            &task.localization,
                            &patch.patched_function,
                            &workdir,
                            &patch.patch_id,
                        )
                        .map_err(|e| e.to_string())?;
                        let outcome =
                            verify(&variant, &task.povs, opts).map_err(|e| e.to_string())?;
                        Ok((Some(variant), outcome))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("verification thread panicked"))
                .collect()
        });

    results
        .into_iter()
        .collect::<Result<Vec<_>, String>>()
        .map_err(|reason| OrchestratorError::Harness(VerifyError::HarnessFault(reason)))
}

fn assess_candidate(
    view: &CandidateView,
    task: &RepairTask,
    provider: &dyn TraceProvider,
    original_trace: &crate::trace::TaintTrace,
    pool: &mut FailingPatchPool,
) -> CandidateRecord {
    if view.outcome.is_timeout() {
        return view.record("discarded_timeout".into(), None, None, None);
    }
    let pov = &task.povs[0];
    let variant = match &view.variant {
        Some(variant) => variant,
        None => {
            // Parse-failed candidate: compile-fail-equivalent with zero
            // fitness, no trace to extract.
            let assessed = crate::trace::AssessedPatch {
                patch: view.patch.clone(),
                outcome: view.outcome.clone(),
                trace: None,
                introduces_new_vuln: false,
                fitness: 0.0,
            };
            let disposition = match pool.insert(assessed, view.changed_vs_original) {
                PoolInsertOutcome::Inserted => "pooled",
                PoolInsertOutcome::Duplicate => "duplicate",
                PoolInsertOutcome::Rejected(_) => "rejected",
            };
            return view.record(disposition.into(), Some(0.0), Some(false), None);
        }
    };
    match assess(
        &view.patch,
        &view.outcome,
        provider,
        variant,
        pov,
        original_trace,
    ) {
        Ok(Some(assessed)) => {
            let fitness = assessed.fitness;
            let new_vuln = assessed.introduces_new_vuln;
            let disposition = match pool.insert(assessed, view.changed_vs_original) {
                PoolInsertOutcome::Inserted => "pooled",
                PoolInsertOutcome::Duplicate => "duplicate",
                PoolInsertOutcome::Rejected(reason) => {
                    return view.record("rejected".into(), Some(fitness), Some(new_vuln), Some(reason))
                }
            };
            view.record(disposition.into(), Some(fitness), Some(new_vuln), None)
        }
        Ok(None) => view.record("discarded_new_vuln".into(), None, Some(true), None),
        Err(err) => view.record(
            "discarded_assessment_fault".into(),
            None,
            None,
            Some(err.to_string()),
        ),
    }
}

fn persist_report(
    run_dir: &Path,
    report: &RepairReport,
    timings: &RunTimings,
) -> Result<(), OrchestratorError> {
    let write = |name: &str, text: String| -> Result<(), OrchestratorError> {
        fs::write(run_dir.join(name), text).map_err(|err| OrchestratorError::RunDir {
            path: run_dir.join(name),
            reason: err.to_string(),
        })
    };
    let mut report_json =
        serde_json::to_string_pretty(report).expect("report serializes");
    report_json.push('\n');
    write("report.json", report_json)?;
    let mut timings_json =
        serde_json::to_string_pretty(timings).expect("timings serialize");
    timings_json.push('\n');
    write("timings.json", timings_json)
}
