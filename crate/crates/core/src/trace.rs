//! Taint traces and failing-patch quality assessment.
//!
//! Trace logs use a line-oriented ASCII grammar, one record per line:
//!
//! ```text
//! SOURCE <file>:<line>
//! STMT <file>:<line>      (repeatable)
//! SINK <file>:<line> <CWE-ID>
//! TOTAL <non-negative-integer>
//! ```
//!
//! Unknown lines are errors. Executed statements are the deduplicated STMT
//! records in first-occurrence order. Taint statement coverage is the unique
//! executed count over TOTAL.

use std::path::Path;
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PoV, POV_PLACEHOLDER};
use crate::generate::CandidatePatch;
use crate::verify::{run_shell, ProcessOutcome, ProgramVariant, VerificationOutcome};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("missing {0} record")]
    MissingRecord(String),
    #[error("trace provider fault: {0}")]
    ProviderFault(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatementRef {
    pub file: String,
    pub line: usize,
}

impl std::fmt::Display for StatementRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintTrace {
    /// Unique executed statements, first-occurrence order.
    pub executed: Vec<StatementRef>,
    pub source: StatementRef,
    pub sink: StatementRef,
    pub cwe_id: String,
    pub total_statements: usize,
}

fn parse_statement(line_no: usize, text: &str) -> Result<StatementRef, TraceError> {
    let (file, line) = text.rsplit_once(':').ok_or_else(|| TraceError::Format {
        line: line_no,
        reason: format!("expected <file>:<line>, got {text:?}"),
    })?;
    if file.is_empty() {
        return Err(TraceError::Format {
            line: line_no,
            reason: "empty file name".into(),
        });
    }
    let line: usize = line.parse().map_err(|_| TraceError::Format {
        line: line_no,
        reason: format!("bad line number {line:?}"),
    })?;
    if line == 0 {
        return Err(TraceError::Format {
            line: line_no,
            reason: "line numbers are 1-based".into(),
        });
    }
    Ok(StatementRef {
        file: file.to_owned(),
        line,
    })
}

pub fn parse_trace_log(log_text: &str) -> Result<TaintTrace, TraceError> {
    let mut executed: Vec<StatementRef> = Vec::new();
    let mut source: Option<StatementRef> = None;
    let mut sink: Option<(StatementRef, String)> = None;
    let mut total: Option<(usize, usize)> = None;

    let body = log_text.strip_suffix('\n').unwrap_or(log_text);
    for (idx, raw) in body.split('\n').enumerate() {
        let line_no = idx + 1;
        if let Some(rest) = raw.strip_prefix("STMT ") {
            let stmt = parse_statement(line_no, rest)?;
            if !executed.contains(&stmt) {
                executed.push(stmt);
            }
        } else if let Some(rest) = raw.strip_prefix("SOURCE ") {
            if source.is_some() {
                return Err(TraceError::Format {
                    line: line_no,
                    reason: "duplicate SOURCE record".into(),
                });
            }
            source = Some(parse_statement(line_no, rest)?);
        } else if let Some(rest) = raw.strip_prefix("SINK ") {
            if sink.is_some() {
                return Err(TraceError::Format {
                    line: line_no,
                    reason: "duplicate SINK record".into(),
                });
            }
            let (stmt_text, cwe) = rest.split_once(' ').ok_or_else(|| TraceError::Format {
                line: line_no,
                reason: "SINK needs <file>:<line> <CWE-ID>".into(),
            })?;
            let cwe = cwe.trim();
            if cwe.is_empty() || cwe.contains(' ') {
                return Err(TraceError::Format {
                    line: line_no,
                    reason: format!("bad CWE identifier {cwe:?}"),
                });
            }
            sink = Some((parse_statement(line_no, stmt_text)?, cwe.to_owned()));
        } else if let Some(rest) = raw.strip_prefix("TOTAL ") {
            if total.is_some() {
                return Err(TraceError::Format {
                    line: line_no,
                    reason: "duplicate TOTAL record".into(),
                });
            }
            let value: usize = rest.trim().parse().map_err(|_| TraceError::Format {
                line: line_no,
                reason: format!("bad TOTAL value {rest:?}"),
            })?;
            total = Some((value, line_no));
        } else {
            return Err(TraceError::Format {
                line: line_no,
                reason: format!("unknown record {raw:?}"),
            });
        }
    }

    let source = source.ok_or_else(|| TraceError::MissingRecord("SOURCE".into()))?;
    let (sink, cwe_id) = sink.ok_or_else(|| TraceError::MissingRecord("SINK".into()))?;
    let (total_statements, total_line) =
        total.ok_or_else(|| TraceError::MissingRecord("TOTAL".into()))?;

    if total_statements == 0 {
        return Err(TraceError::Format {
            line: total_line,
            reason: "TOTAL must be > 0".into(),
        });
    }
    if executed.len() > total_statements {
        return Err(TraceError::Format {
            line: total_line,
            reason: format!(
                "{} unique executed statements exceed TOTAL {total_statements}",
                executed.len()
            ),
        });
    }
    if !executed.contains(&sink) {
        return Err(TraceError::Format {
            line: 1,
            reason: format!("sink {sink} does not appear in executed statements"),
        });
    }

    Ok(TaintTrace {
        executed,
        source,
        sink,
        cwe_id,
        total_statements,
    })
}

/// A patch introduces no new vulnerability only when the patched trace keeps
/// both the CWE type and the taint sink of the original.
pub fn introduces_new_vulnerability(original: &TaintTrace, patched: &TaintTrace) -> bool {
    !(original.cwe_id == patched.cwe_id && original.sink == patched.sink)
}

/// Unique executed taint statements over the instrumented scope's total.
pub fn taint_statement_coverage(trace: &TaintTrace) -> f64 {
    trace.executed.len() as f64 / trace.total_statements as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessedPatch {
    pub patch: CandidatePatch,
    pub outcome: VerificationOutcome,
    pub trace: Option<TaintTrace>,
    pub introduces_new_vuln: bool,
    pub fitness: f64,
}

/// Extracts taint traces for failing variants. Implementations that cannot
/// run variant-scoped calls concurrently return `true` from
/// [`TraceProvider::requires_serial`] and the engine honors it.
pub trait TraceProvider: Send + Sync {
    fn trace_for(&self, variant: &ProgramVariant, pov: &PoV) -> Result<Option<TaintTrace>, TraceError>;

    fn requires_serial(&self) -> bool {
        false
    }
}

/// Env var the fixture provider points at the trace log it expects the
/// instrumented program to write.
pub const TRACE_OUT_ENV: &str = "TRACE_OUT";

/// Runs the variant's PoV command with `TRACE_OUT` set and parses the log the
/// instrumented program emits.
#[derive(Debug, Default)]
pub struct FixtureTraceProvider;

impl TraceProvider for FixtureTraceProvider {
    fn trace_for(&self, variant: &ProgramVariant, pov: &PoV) -> Result<Option<TaintTrace>, TraceError> {
        let log_dir = variant.workdir.join("logs");
        std::fs::create_dir_all(&log_dir)
            .map_err(|err| TraceError::ProviderFault(format!("creating {}: {err}", log_dir.display())))?;
        let log_path = log_dir.join(format!("trace-{}.log", pov.id));

        let payload = std::fs::canonicalize(&pov.payload_path)
            .map_err(|err| {
                TraceError::ProviderFault(format!(
                    "resolving payload {}: {err}",
                    pov.payload_path.display()
                ))
            })?
            .display()
            .to_string();
        let command = variant
            .build_recipe
            .run_command_template
            .replace(POV_PLACEHOLDER, &payload);
        let envs = vec![(TRACE_OUT_ENV.to_string(), log_path.display().to_string())];
        let outcome = run_shell(
            &command,
            &variant.workdir,
            Duration::from_secs(variant.build_recipe.run_timeout_s),
            &envs,
            None,
        )
        .map_err(|err| TraceError::ProviderFault(format!("running traced PoV: {err}")))?;

        if matches!(outcome, ProcessOutcome::TimedOut) {
            return Err(TraceError::ProviderFault("traced PoV run timed out".into()));
        }
        let text = match std::fs::read_to_string(&log_path) {
            Ok(text) => text,
            // No log: the variant did not reach the instrumented scope.
            Err(_) => return Ok(None),
        };
        parse_trace_log(&text).map(Some)
    }
}

/// Runs a user-supplied command (`{workdir}` and `{pov}` substituted) and
/// parses its stdout as a trace log.
#[derive(Debug, Clone)]
pub struct ExternalCommandProvider {
    pub command_template: String,
    pub timeout: Duration,
}

impl TraceProvider for ExternalCommandProvider {
    fn trace_for(&self, variant: &ProgramVariant, pov: &PoV) -> Result<Option<TaintTrace>, TraceError> {
        let command = self
            .command_template
            .replace("{workdir}", &variant.workdir.display().to_string())
            .replace(POV_PLACEHOLDER, &pov.payload_path.display().to_string());
        let output = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(&variant.workdir)
            .output()
            .map_err(|err| TraceError::ProviderFault(format!("spawning {command:?}: {err}")))?;
        if !output.status.success() {
            return Err(TraceError::ProviderFault(format!(
                "external trace command exited with {:?}",
                output.status.code()
            )));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        if text.trim().is_empty() {
            return Ok(None);
        }
        parse_trace_log(&text).map(Some)
    }

    fn requires_serial(&self) -> bool {
        true
    }
}

/// Assesses one failing patch. Returns `None` when the patch must be
/// discarded because it introduces a new vulnerability.
pub fn assess(
    patch: &CandidatePatch,
    outcome: &VerificationOutcome,
    provider: &dyn TraceProvider,
    variant: &ProgramVariant,
    pov: &PoV,
    original: &TaintTrace,
) -> Result<Option<AssessedPatch>, TraceError> {
    match outcome {
        VerificationOutcome::FailingPoV { .. } => {
            let trace = provider.trace_for(variant, pov)?.ok_or_else(|| {
                TraceError::ProviderFault("no trace extracted for a PoV-failing variant".into())
            })?;
            if introduces_new_vulnerability(original, &trace) {
                return Ok(None);
            }
            let fitness = taint_statement_coverage(&trace);
            Ok(Some(AssessedPatch {
                patch: patch.clone(),
                outcome: outcome.clone(),
                trace: Some(trace),
                introduces_new_vuln: false,
                fitness,
            }))
        }
        VerificationOutcome::CompileFail { .. } => Ok(Some(AssessedPatch {
            patch: patch.clone(),
            outcome: outcome.clone(),
            trace: None,
            introduces_new_vuln: false,
            fitness: 0.0,
        })),
        VerificationOutcome::Plausible | VerificationOutcome::Timeout { .. } => {
            Err(TraceError::ProviderFault(format!(
                "assess precondition violated: outcome {outcome:?} is not assessable"
            )))
        }
    }
}

/// Reads a trace log from a file path, mapping IO failures to provider faults.
pub fn read_trace_log(path: &Path) -> Result<TaintTrace, TraceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| TraceError::ProviderFault(format!("reading {}: {err}", path.display())))?;
    parse_trace_log(&text)
}
