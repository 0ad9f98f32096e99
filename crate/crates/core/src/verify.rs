//! Compile-and-run verification of program variants against PoVs.
//!
//! Commands run through `sh -c` in the variant's workdir, in their own
//! process group so a timeout kills the whole tree. Captured stdout/stderr
//! are persisted under `workdir/logs/`.

use std::fs::{self, File};
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::{BuildRecipe, PoV, POV_PLACEHOLDER};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("harness fault: {0}")]
    HarnessFault(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramVariant {
    pub workdir: PathBuf,
    pub origin_patch_id: String,
    pub build_recipe: BuildRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutStage {
    Compile,
    Run,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerificationOutcome {
    Plausible,
    #[serde(rename = "failing_pov")]
    FailingPoV {
        failed_pov_ids: Vec<String>,
        failure_messages: Vec<String>,
    },
    CompileFail {
        log_excerpt: String,
    },
    Timeout {
        stage: TimeoutStage,
        pov_id: Option<String>,
    },
}

impl VerificationOutcome {
    pub fn is_plausible(&self) -> bool {
        matches!(self, VerificationOutcome::Plausible)
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self, VerificationOutcome::Timeout { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            VerificationOutcome::Plausible => "plausible",
            VerificationOutcome::FailingPoV { .. } => "failing_pov",
            VerificationOutcome::CompileFail { .. } => "compile_fail",
            VerificationOutcome::Timeout { .. } => "timeout",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Tail bytes of the compile log kept in a CompileFail outcome.
    pub compile_log_cap: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            compile_log_cap: 8 * 1024,
        }
    }
}

/// Optional source of extra PoVs (a fuzzer, a corpus replayer) consulted
/// before verification. The shipped engine only carries the hook; no
/// implementation generates anything.
pub trait ExtraPovHook {
    fn additional_povs(&self, original: &[PoV]) -> Vec<PoV>;
}

/// The default hook: no extra PoVs.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoExtraPovs;

impl ExtraPovHook for NoExtraPovs {
    fn additional_povs(&self, _original: &[PoV]) -> Vec<PoV> {
        Vec::new()
    }
}

/// Appends hook-provided PoVs to the originals, skipping duplicate ids. The
/// original PoVs keep their positions, so "first originally-provided PoV"
/// stays index 0.
pub fn augment_povs(original: &[PoV], hook: &dyn ExtraPovHook) -> Vec<PoV> {
    let mut povs = original.to_vec();
    for extra in hook.additional_povs(original) {
        if povs.iter().all(|p| p.id != extra.id) {
            povs.push(extra);
        }
    }
    povs
}

/// How a process ended, independent of std's platform types so that
/// classification is testable without spawning anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessStatus {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
}

impl ProcessStatus {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }
}

#[derive(Debug)]
pub enum ProcessOutcome {
    Completed { status: ProcessStatus, output: String },
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PovClassification {
    Triggered { reason: String },
    Clean,
}

const SANITIZER_MARKERS: &[&str] = &[
    "AddressSanitizer",
    "ThreadSanitizer",
    "MemorySanitizer",
    "UndefinedBehaviorSanitizer",
    "LeakSanitizer",
    "runtime error:",
];

/// Decides whether a PoV run triggered the vulnerability: a fatal signal, a
/// sanitizer report on a nonzero exit, or the expected failure signature in
/// the output. A plain nonzero exit with none of those is a clean rejection
/// of the input.
pub fn classify_failure_message(
    output: &str,
    status: &ProcessStatus,
    signature: &str,
) -> PovClassification {
    if let Some(sig) = status.signal {
        return PovClassification::Triggered {
            reason: format!("terminated by signal {sig}"),
        };
    }
    if !signature.is_empty() && output.contains(signature) {
        return PovClassification::Triggered {
            reason: format!("output contains failure signature {signature:?}"),
        };
    }
    if status.exit_code.is_some_and(|c| c != 0) {
        for marker in SANITIZER_MARKERS {
            if output.contains(marker) {
                return PovClassification::Triggered {
                    reason: format!("sanitizer report ({marker}) with nonzero exit"),
                };
            }
        }
    }
    PovClassification::Clean
}

/// Runs `command` via `sh -c` with a wall-clock timeout. When `log_stem` is
/// given, stdout/stderr land in `cwd/logs/<stem>.stdout.log` and
/// `<stem>.stderr.log` and are returned concatenated.
pub fn run_shell(
    command: &str,
    cwd: &Path,
    timeout: Duration,
    envs: &[(String, String)],
    log_stem: Option<&str>,
) -> Result<ProcessOutcome, VerifyError> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(command).current_dir(cwd).stdin(Stdio::null());
    for (key, value) in envs {
        cmd.env(key, value);
    }

    let log_paths = match log_stem {
        Some(stem) => {
            let dir = cwd.join("logs");
            fs::create_dir_all(&dir).map_err(|err| {
                VerifyError::HarnessFault(format!("creating {}: {err}", dir.display()))
            })?;
            let out_path = dir.join(format!("{stem}.stdout.log"));
            let err_path = dir.join(format!("{stem}.stderr.log"));
            let out_file = File::create(&out_path).map_err(harness_io(&out_path))?;
            let err_file = File::create(&err_path).map_err(harness_io(&err_path))?;
            cmd.stdout(Stdio::from(out_file));
            cmd.stderr(Stdio::from(err_file));
            Some((out_path, err_path))
        }
        None => {
            cmd.stdout(Stdio::null());
            cmd.stderr(Stdio::null());
            None
        }
    };

    // Own process group so that a timeout kill reaches grandchildren too.
    unsafe {
        cmd.pre_exec(|| {
            libc::setsid();
            Ok(())
        });
    }

    let mut child = cmd
        .spawn()
        .map_err(|err| VerifyError::HarnessFault(format!("spawning {command:?}: {err}")))?;

    let status = child
        .wait_timeout(timeout)
        .map_err(|err| VerifyError::HarnessFault(format!("waiting for {command:?}: {err}")))?;

    let status = match status {
        Some(status) => status,
        None => {
            let pgid = child.id() as i32;
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
            let _ = child.wait();
            return Ok(ProcessOutcome::TimedOut);
        }
    };

    let output = match &log_paths {
        Some((out_path, err_path)) => {
            let mut text = fs::read_to_string(out_path).unwrap_or_default();
            text.push_str(&fs::read_to_string(err_path).unwrap_or_default());
            text
        }
        None => String::new(),
    };

    // `sh -c` reports a command killed by signal N as exit code 128+N;
    // decode that so signal deaths classify the same with or without the
    // shell in between.
    let mut exit_code = status.code();
    let mut signal = status.signal();
    if signal.is_none() {
        if let Some(code) = exit_code {
            if (129..=128 + 64).contains(&code) {
                signal = Some(code - 128);
                exit_code = None;
            }
        }
    }

    Ok(ProcessOutcome::Completed {
        status: ProcessStatus { exit_code, signal },
        output,
    })
}

fn harness_io(path: &Path) -> impl FnOnce(io::Error) -> VerifyError + '_ {
    move |err| VerifyError::HarnessFault(format!("opening {}: {err}", path.display()))
}

fn tail(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_owned();
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_owned()
}

/// Compiles the variant, then runs every PoV in order. Plausible only when
/// each PoV run comes back clean. The first timeout short-circuits; failing
/// PoVs are otherwise all collected.
pub fn verify(
    variant: &ProgramVariant,
    povs: &[PoV],
    opts: &VerifyOptions,
) -> Result<VerificationOutcome, VerifyError> {
    if povs.is_empty() {
        return Err(VerifyError::HarnessFault("no PoVs supplied".into()));
    }
    if !variant.workdir.is_dir() {
        return Err(VerifyError::HarnessFault(format!(
            "variant workdir {} does not exist",
            variant.workdir.display()
        )));
    }

    let compile = run_shell(
        &variant.build_recipe.compile_command,
        &variant.workdir,
        Duration::from_secs(variant.build_recipe.compile_timeout_s),
        &[],
        Some("compile"),
    )?;
    match compile {
        ProcessOutcome::TimedOut => {
            return Ok(VerificationOutcome::Timeout {
                stage: TimeoutStage::Compile,
                pov_id: None,
            })
        }
        ProcessOutcome::Completed { status, output } => {
            if !status.success() {
                return Ok(VerificationOutcome::CompileFail {
                    log_excerpt: tail(&output, opts.compile_log_cap),
                });
            }
        }
    }

    let mut failed_pov_ids = Vec::new();
    let mut failure_messages = Vec::new();
    for pov in povs {
        let payload = fs::canonicalize(&pov.payload_path).map_err(|err| {
            VerifyError::HarnessFault(format!(
                "resolving payload {}: {err}",
                pov.payload_path.display()
            ))
        })?;
        let command = variant
            .build_recipe
            .run_command_template
            .replace(POV_PLACEHOLDER, &payload.display().to_string());
        let outcome = run_shell(
            &command,
            &variant.workdir,
            Duration::from_secs(variant.build_recipe.run_timeout_s),
            &[],
            Some(&format!("run-{}", pov.id)),
        )?;
        match outcome {
            ProcessOutcome::TimedOut => {
                return Ok(VerificationOutcome::Timeout {
                    stage: TimeoutStage::Run,
                    pov_id: Some(pov.id.clone()),
                })
            }
            ProcessOutcome::Completed { status, output } => {
                match classify_failure_message(&output, &status, &pov.expected_failure_signature) {
                    PovClassification::Triggered { reason } => {
                        failed_pov_ids.push(pov.id.clone());
                        failure_messages.push(format!(
                            "{}: {reason}; output tail: {}",
                            pov.id,
                            tail(output.trim_end(), 2048)
                        ));
                    }
                    PovClassification::Clean => {}
                }
            }
        }
    }

    if failed_pov_ids.is_empty() {
        Ok(VerificationOutcome::Plausible)
    } else {
        Ok(VerificationOutcome::FailingPoV {
            failed_pov_ids,
            failure_messages,
        })
    }
}
