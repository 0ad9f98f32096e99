//! Domain types for repair tasks: programs, build recipes, function
//! snapshots, PoVs, and localization results, plus the task-directory loader.
//!
//! A task directory looks like:
//!
//! ```text
//! task/
//!   task.json           {task_id, cwe_id, build:{compile_command, run_command_template,
//!                        compile_timeout_s, run_timeout_s}}
//!   program/            source tree
//!   povs/<id>/payload   the triggering input
//!   povs/<id>/pov.json  {expected_failure_signature}
//!   localization.json   {file, function, start_line, end_line,
//!                        vulnerable_hunks:[{start,end}], trace}
//! ```
//!
//! `vulnerable_hunks` in `localization.json` use file line numbers; the
//! loader translates them to function-local coordinates. Everything
//! downstream is function-local and 1-based.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{parse_trace_log, TaintTrace, TraceError};
use crate::util::{join_lines, split_lines};

pub const POV_PLACEHOLDER: &str = "{pov}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing {0}")]
    MissingFile(String),
    #[error("schema violation in {field}: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("file {0} is not part of the program")]
    FileNotInProgram(PathBuf),
    #[error("lines {start}..{end} fall outside {file} ({len} lines)")]
    RangeOutOfFile {
        file: PathBuf,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("trace log {path}: {source}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// One function of one program revision, viewed as numbered lines.
/// Function-local line `i` (1-based) maps to file line `start_line + i - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSnapshot {
    pub file: PathBuf,
    pub name: String,
    pub start_line: usize,
    pub lines: Vec<String>,
}

impl FunctionSnapshot {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// File line number of function-local line `local`.
    pub fn file_line(&self, local: usize) -> usize {
        self.start_line + local - 1
    }

    /// Canonical text form: lines joined by `\n`, no trailing newline.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }

    /// Rendering used in prompts: `  3 | <line>`.
    pub fn numbered(&self) -> String {
        let mut out = String::new();
        for (idx, line) in self.lines.iter().enumerate() {
            out.push_str(&format!("{:>3} | {line}\n", idx + 1));
        }
        out
    }

    /// Rebinds extracted text to the anchor of `other`, keeping these lines.
    pub fn with_anchor_of(mut self, other: &FunctionSnapshot) -> FunctionSnapshot {
        self.file = other.file.clone();
        self.name = other.name.clone();
        self.start_line = other.start_line;
        self
    }
}

/// A contiguous run of function-local lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLocation {
    pub start_line: usize,
    pub end_line: usize,
}

impl HunkLocation {
    pub fn new(start_line: usize, end_line: usize) -> Self {
        HunkLocation {
            start_line,
            end_line,
        }
    }

    pub fn len(&self) -> usize {
        self.end_line - self.start_line + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRecipe {
    pub compile_command: String,
    /// Must contain exactly one `{pov}` placeholder.
    pub run_command_template: String,
    pub compile_timeout_s: u64,
    pub run_timeout_s: u64,
}

impl BuildRecipe {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.compile_command.trim().is_empty() {
            return Err(CorpusError::InvariantViolation(
                "build.compile_command is empty".into(),
            ));
        }
        if self.compile_timeout_s == 0 || self.run_timeout_s == 0 {
            return Err(CorpusError::InvariantViolation(
                "build timeouts must be > 0".into(),
            ));
        }
        let occurrences = self.run_command_template.matches(POV_PLACEHOLDER).count();
        if occurrences != 1 {
            return Err(CorpusError::InvariantViolation(format!(
                "build.run_command_template must contain exactly one {POV_PLACEHOLDER} placeholder (found {occurrences})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceProgram {
    pub root_path: PathBuf,
    /// Relative paths, sorted.
    pub source_files: Vec<PathBuf>,
    pub build_recipe: BuildRecipe,
}

impl SourceProgram {
    pub fn contains(&self, file: &Path) -> bool {
        self.source_files.iter().any(|f| f == file)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoV {
    pub id: String,
    pub payload_path: PathBuf,
    pub expected_failure_signature: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub function: FunctionSnapshot,
    /// Function-local coordinates, validated against `function`.
    pub vulnerable_hunks: Vec<HunkLocation>,
    pub original_trace: TaintTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairTask {
    pub task_id: String,
    pub program: SourceProgram,
    pub povs: Vec<PoV>,
    pub cwe_id: String,
    pub localization: LocalizationResult,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskManifest {
    task_id: String,
    cwe_id: String,
    build: BuildManifest,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildManifest {
    compile_command: String,
    run_command_template: String,
    compile_timeout_s: u64,
    run_timeout_s: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PovManifest {
    expected_failure_signature: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalizationManifest {
    file: PathBuf,
    function: String,
    start_line: usize,
    end_line: usize,
    vulnerable_hunks: Vec<HunkRange>,
    trace: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HunkRange {
    start: usize,
    end: usize,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// serde_json error messages name the offending field ("missing field `x`",
// "unknown field `y`"), which is the detail SchemaViolation wants.
fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, CorpusError> {
    serde_json::from_str(text).map_err(|err| CorpusError::SchemaViolation {
        field: path.display().to_string(),
        reason: err.to_string(),
    })
}

fn collect_sources(root: &Path, prefix: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let dir = root.join(prefix);
    let entries = fs::read_dir(&dir).map_err(|source| CorpusError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut names: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.clone(),
            source,
        })?;
        names.push(entry.path());
    }
    names.sort();
    for path in names {
        let rel = prefix.join(path.file_name().expect("dir entry has a file name"));
        if path.is_dir() {
            collect_sources(root, &rel, out)?;
        } else {
            out.push(rel);
        }
    }
    Ok(())
}

/// Loads and fully validates a repair task from `task_dir`.
pub fn load_task(task_dir: &Path) -> Result<RepairTask, CorpusError> {
    let manifest_path = task_dir.join("task.json");
    if !manifest_path.is_file() {
        return Err(CorpusError::MissingFile("task.json".into()));
    }
    let manifest: TaskManifest = parse_json(&manifest_path, &read_file(&manifest_path)?)?;

    let build_recipe = BuildRecipe {
        compile_command: manifest.build.compile_command,
        run_command_template: manifest.build.run_command_template,
        compile_timeout_s: manifest.build.compile_timeout_s,
        run_timeout_s: manifest.build.run_timeout_s,
    };
    build_recipe.validate()?;

    let program_root = task_dir.join("program");
    if !program_root.is_dir() {
        return Err(CorpusError::MissingFile("program".into()));
    }
    let mut source_files = Vec::new();
    collect_sources(&program_root, Path::new(""), &mut source_files)?;
    if source_files.is_empty() {
        return Err(CorpusError::InvariantViolation(
            "program/ contains no source files".into(),
        ));
    }
    let program = SourceProgram {
        root_path: program_root,
        source_files,
        build_recipe,
    };

    let povs_root = task_dir.join("povs");
    if !povs_root.is_dir() {
        return Err(CorpusError::MissingFile("povs".into()));
    }
    let mut pov_dirs: Vec<PathBuf> = fs::read_dir(&povs_root)
        .map_err(|source| CorpusError::Io {
            path: povs_root.clone(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    pov_dirs.sort();
    let mut povs = Vec::new();
    for dir in pov_dirs {
        let id = dir
            .file_name()
            .expect("pov dir has a name")
            .to_string_lossy()
            .into_owned();
        let payload_path = dir.join("payload");
        if !payload_path.is_file() {
            return Err(CorpusError::MissingFile(format!("povs/{id}/payload")));
        }
        let meta_path = dir.join("pov.json");
        if !meta_path.is_file() {
            return Err(CorpusError::MissingFile(format!("povs/{id}/pov.json")));
        }
        let meta: PovManifest = parse_json(&meta_path, &read_file(&meta_path)?)?;
        povs.push(PoV {
            id,
            payload_path,
            expected_failure_signature: meta.expected_failure_signature,
        });
    }
    if povs.is_empty() {
        return Err(CorpusError::InvariantViolation(
            "povs/ contains no PoV directories".into(),
        ));
    }

    let loc_path = task_dir.join("localization.json");
    if !loc_path.is_file() {
        return Err(CorpusError::MissingFile("localization.json".into()));
    }
    let loc: LocalizationManifest = parse_json(&loc_path, &read_file(&loc_path)?)?;

    let function = extract_function(
        &program,
        &loc.file,
        &loc.function,
        loc.start_line,
        loc.end_line,
    )?;

    if loc.vulnerable_hunks.is_empty() {
        return Err(CorpusError::InvariantViolation(
            "localization.vulnerable_hunks is empty".into(),
        ));
    }
    let mut vulnerable_hunks = Vec::new();
    for range in &loc.vulnerable_hunks {
        if range.start > range.end {
            return Err(CorpusError::InvariantViolation(format!(
                "vulnerable hunk {}..{} is inverted",
                range.start, range.end
            )));
        }
        // File coordinates -> function-local coordinates.
        if range.start < function.start_line
            || range.end > function.start_line + function.len() - 1
        {
            return Err(CorpusError::InvariantViolation(format!(
                "vulnerable hunk {}..{} falls outside function {} (file lines {}..{})",
                range.start,
                range.end,
                function.name,
                function.start_line,
                function.start_line + function.len() - 1
            )));
        }
        vulnerable_hunks.push(HunkLocation::new(
            range.start - function.start_line + 1,
            range.end - function.start_line + 1,
        ));
    }

    let trace_path = task_dir.join(&loc.trace);
    if !trace_path.is_file() {
        return Err(CorpusError::MissingFile(loc.trace.display().to_string()));
    }
    let original_trace =
        parse_trace_log(&read_file(&trace_path)?).map_err(|source| CorpusError::Trace {
            path: trace_path.clone(),
            source,
        })?;

    if original_trace.cwe_id != manifest.cwe_id {
        return Err(CorpusError::InvariantViolation(format!(
            "task cwe_id {} does not match trace cwe_id {}",
            manifest.cwe_id, original_trace.cwe_id
        )));
    }

    Ok(RepairTask {
        task_id: manifest.task_id,
        program,
        povs,
        cwe_id: manifest.cwe_id,
        localization: LocalizationResult {
            function,
            vulnerable_hunks,
            original_trace,
        },
    })
}

/// Materializes a function snapshot from a file region of the program,
/// renumbering the lines 1..n.
pub fn extract_function(
    program: &SourceProgram,
    file: &Path,
    name: &str,
    start_line: usize,
    end_line: usize,
) -> Result<FunctionSnapshot, CorpusError> {
    if !program.contains(file) {
        return Err(CorpusError::FileNotInProgram(file.to_path_buf()));
    }
    let full = program.root_path.join(file);
    let lines = split_lines(&read_file(&full)?);
    if start_line == 0 || start_line > end_line || end_line > lines.len() {
        return Err(CorpusError::RangeOutOfFile {
            file: file.to_path_buf(),
            start: start_line,
            end: end_line,
            len: lines.len(),
        });
    }
    Ok(FunctionSnapshot {
        file: file.to_path_buf(),
        name: name.to_owned(),
        start_line,
        lines: lines[start_line - 1..end_line].to_vec(),
    })
}

/// Writes `lines` back over the region `[start_line, start_line + old_len)` of
/// `text`, returning the new file content (trailing newline normalized).
pub fn splice_region(text: &str, start_line: usize, old_len: usize, lines: &[String]) -> String {
    let mut all = split_lines(text);
    let end = (start_line - 1 + old_len).min(all.len());
    all.splice(start_line - 1..end, lines.iter().cloned());
    join_lines(&all)
}
