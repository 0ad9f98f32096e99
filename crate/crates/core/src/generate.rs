//! Location prediction, candidate generation, response parsing, and patch
//! application.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GeneratorBackend};
use crate::bank::FewShotExample;
use crate::corpus::{FunctionSnapshot, HunkLocation, LocalizationResult, SourceProgram};
use crate::prompt::{build_location_prompt, PromptBundle};
use crate::sequence::{parse_sequence, LocationSequence, SeqToken};
use crate::util::split_lines;
use crate::verify::ProgramVariant;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("no code found in response")]
    NoCodeFound,
    #[error("all {0} generation calls failed")]
    AllCallsFailed(usize),
    #[error("location prediction unusable: {0}")]
    PredictionUnusable(String),
    #[error("io failure: {0}")]
    IoFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub patch_id: String,
    pub iteration: usize,
    pub parent_id: Option<String>,
    pub patched_function: FunctionSnapshot,
    pub prompt_digest: String,
    pub raw_response_excerpt: String,
    /// True when no code could be extracted from the response; such patches
    /// are treated as compile-fail-equivalent and keep zero fitness.
    pub parse_failed: bool,
}

#[derive(Debug, Clone)]
pub struct PredictionSettings {
    pub temperature: f64,
    pub retry_budget: usize,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        PredictionSettings {
            temperature: 0.0,
            retry_budget: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictionOutcome {
    pub sequence: LocationSequence,
    pub fallback_used: bool,
    pub backend_calls: usize,
}

/// Finds the first brace-delimited span in a completion and parses it as a
/// location sequence anchored to `expected_anchor` lines.
fn sequence_from_response(text: &str, expected_anchor: usize) -> Option<LocationSequence> {
    let start = text.find('{')?;
    let end = text[start..].find('}')? + start;
    let seq = parse_sequence(&text[start..=end]).ok()?;
    (seq.anchor_length() == expected_anchor).then_some(seq)
}

/// The identity sequence with one Add adjacent to (before) each vulnerable
/// hunk; the fallback when the backend never produces a usable sequence.
pub fn fallback_sequence(
    function: &FunctionSnapshot,
    vulnerable_hunks: &[HunkLocation],
) -> Result<LocationSequence, GenerateError> {
    let anchors: std::collections::BTreeSet<usize> = vulnerable_hunks
        .iter()
        .map(|h| h.start_line.saturating_sub(1))
        .collect();
    let mut tokens = Vec::new();
    if anchors.contains(&0) {
        tokens.push(SeqToken::Add);
    }
    for line in 1..=function.len() {
        tokens.push(SeqToken::Keep(line));
        if anchors.contains(&line) {
            tokens.push(SeqToken::Add);
        }
    }
    LocationSequence::new(tokens)
        .map_err(|err| GenerateError::PredictionUnusable(err.to_string()))
}

/// Asks the backend for a patch-hunk-location sequence. Unusable responses
/// are retried up to the budget, then the fallback sequence is constructed.
pub fn predict_patch_locations(
    function: &FunctionSnapshot,
    vulnerable_hunks: &[HunkLocation],
    few_shots: &[FewShotExample],
    backend: &dyn GeneratorBackend,
    settings: &PredictionSettings,
) -> Result<PredictionOutcome, GenerateError> {
    let bundle = build_location_prompt(function, vulnerable_hunks, few_shots);
    let mut calls = 0usize;
    let mut got_any_response = false;
    let mut last_transport_error: Option<BackendError> = None;
    while calls <= settings.retry_budget {
        calls += 1;
        match backend.complete(
            &bundle.system_message,
            &bundle.user_message,
            settings.temperature,
            None,
        ) {
            Ok(text) => {
                got_any_response = true;
                if let Some(sequence) = sequence_from_response(&text, function.len()) {
                    return Ok(PredictionOutcome {
                        sequence,
                        fallback_used: false,
                        backend_calls: calls,
                    });
                }
            }
            Err(err) => last_transport_error = Some(err),
        }
    }
    // Unparseable answers fall back to the identity-with-Add sequence. A
    // backend that never answered at all is a transport failure instead.
    if !got_any_response {
        if let Some(err) = last_transport_error {
            return Err(GenerateError::Backend(err));
        }
    }
    Ok(PredictionOutcome {
        sequence: fallback_sequence(function, vulnerable_hunks)?,
        fallback_used: true,
        backend_calls: calls,
    })
}

/// Extracts the patch function from a completion: the first fenced code
/// block, else the longest brace-balanced region, renumbered 1..m.
pub fn extract_function_from_response(text: &str) -> Result<FunctionSnapshot, GenerateError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut fence_start: Option<usize> = None;
    for (idx, line) in lines.iter().enumerate() {
        if line.trim_start().starts_with("```") {
            match fence_start {
                None => fence_start = Some(idx),
                Some(open) => {
                    let body: Vec<String> =
                        lines[open + 1..idx].iter().map(|s| s.to_string()).collect();
                    if body.is_empty() {
                        return Err(GenerateError::NoCodeFound);
                    }
                    return Ok(snapshot_from_lines(body));
                }
            }
        }
    }

    // No fenced block: take the longest brace-balanced region.
    if let Some(body) = longest_brace_region(&lines) {
        return Ok(snapshot_from_lines(body));
    }
    Err(GenerateError::NoCodeFound)
}

fn snapshot_from_lines(lines: Vec<String>) -> FunctionSnapshot {
    FunctionSnapshot {
        file: PathBuf::from("response"),
        name: "candidate".into(),
        start_line: 1,
        lines,
    }
}

fn longest_brace_region(lines: &[&str]) -> Option<Vec<String>> {
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    let mut depth = 0i64;
    for (idx, line) in lines.iter().enumerate() {
        for ch in line.chars() {
            match ch {
                '{' => {
                    if depth == 0 && start.is_none() {
                        start = Some(idx);
                    }
                    depth += 1;
                }
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Some(s) = start.take() {
                            let len = idx - s + 1;
                            if best.is_none_or(|(bs, be)| len > be - bs + 1) {
                                best = Some((s, idx));
                            }
                        }
                    }
                    if depth < 0 {
                        depth = 0;
                        start = None;
                    }
                }
                _ => {}
            }
        }
    }
    best.map(|(s, e)| lines[s..=e].iter().map(|l| l.to_string()).collect())
}

fn strip_comment(line: &str) -> Option<&str> {
    let trimmed = line.trim();
    if let Some(rest) = trimmed.strip_prefix("//") {
        return Some(rest.trim());
    }
    if let Some(rest) = trimmed.strip_prefix("/*") {
        if let Some(inner) = rest.strip_suffix("*/") {
            return Some(inner.trim());
        }
    }
    None
}

/// Drops whole-line comments that exactly shadow a line of the original
/// function: generators comment out the hunks they were told to remove, and
/// a commented copy of an original line is that removal.
pub fn normalize_commented_removals(
    lines: Vec<String>,
    original: &FunctionSnapshot,
) -> Vec<String> {
    let original_trimmed: std::collections::HashSet<&str> =
        original.lines.iter().map(|l| l.trim()).collect();
    lines
        .into_iter()
        .filter(|line| match strip_comment(line) {
            Some(content) => !original_trimmed.contains(content),
            None => true,
        })
        .collect()
}

#[derive(Debug)]
pub struct GeneratedSet {
    pub patches: Vec<CandidatePatch>,
    pub call_errors: Vec<BackendError>,
}

fn excerpt(text: &str, cap: usize) -> String {
    let mut end = cap.min(text.len());
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_owned()
}

/// Runs `k` generation calls against the backend and parses each response
/// into a candidate patch. Backend errors are recorded per call, not fatal,
/// unless every call fails.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidates(
    prompt: &PromptBundle,
    backend: &dyn GeneratorBackend,
    k: usize,
    temperature: f64,
    rng_seed: u64,
    original: &FunctionSnapshot,
    iteration: usize,
    parent_id: Option<&str>,
    first_patch_number: usize,
) -> Result<GeneratedSet, GenerateError> {
    let mut patches = Vec::new();
    let mut call_errors = Vec::new();
    let mut number = first_patch_number;
    for ordinal in 0..k {
        let seed = rng_seed
            .wrapping_mul(1_000_003)
            .wrapping_add(ordinal as u64);
        let response = match backend.complete(
            &prompt.system_message,
            &prompt.user_message,
            temperature,
            Some(seed),
        ) {
            Ok(text) => text,
            Err(err) => {
                call_errors.push(err);
                continue;
            }
        };

        let patch_id = format!("p{number}");
        number += 1;
        let (snapshot, parse_failed) = match extract_function_from_response(&response) {
            Ok(snapshot) => {
                let lines = normalize_commented_removals(snapshot.lines, original);
                (snapshot_from_lines(lines).with_anchor_of(original), false)
            }
            Err(_) => (
                snapshot_from_lines(split_lines(&response)).with_anchor_of(original),
                true,
            ),
        };
        patches.push(CandidatePatch {
            patch_id,
            iteration,
            parent_id: parent_id.map(str::to_owned),
            patched_function: snapshot,
            prompt_digest: prompt.digest.clone(),
            raw_response_excerpt: excerpt(&response, 240),
            parse_failed,
        });
    }

    if patches.is_empty() && !call_errors.is_empty() {
        return Err(GenerateError::AllCallsFailed(call_errors.len()));
    }
    Ok(GeneratedSet {
        patches,
        call_errors,
    })
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Copies the program into `workdir` and replaces the localized function's
/// file region with the patched function's lines. Every other byte of the
/// tree is identical to the original.
pub fn apply_patch(
    program: &SourceProgram,
    localization: &LocalizationResult,
    patched_function: &FunctionSnapshot,
    workdir: &Path,
    origin_patch_id: &str,
) -> Result<ProgramVariant, GenerateError> {
    let fail = |err: io::Error, what: &str| GenerateError::IoFailure(format!("{what}: {err}"));

    copy_tree(&program.root_path, workdir)
        .map_err(|e| fail(e, &format!("copying program into {}", workdir.display())))?;

    let anchor = &localization.function;
    let target = workdir.join(&anchor.file);
    let text = fs::read_to_string(&target)
        .map_err(|e| fail(e, &format!("reading {}", target.display())))?;
    let new_text = crate::corpus::splice_region(
        &text,
        anchor.start_line,
        anchor.len(),
        &patched_function.lines,
    );
    fs::write(&target, new_text)
        .map_err(|e| fail(e, &format!("writing {}", target.display())))?;

    Ok(ProgramVariant {
        workdir: workdir.to_path_buf(),
        origin_patch_id: origin_patch_id.to_owned(),
        build_recipe: program.build_recipe.clone(),
    })
}
