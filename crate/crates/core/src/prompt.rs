//! Chain-of-thought prompt construction.
//!
//! The generation prompt holds two few-shot blocks and a target block, in
//! that order. Every block walks the same three steps: the vulnerable hunk,
//! the patch-hunk-location sequence, and the patch function. Few-shot blocks
//! carry ground-truth sequences; the target block carries the predicted one.

use serde::{Deserialize, Serialize};

use crate::bank::FewShotExample;
use crate::corpus::{FunctionSnapshot, HunkLocation, RepairTask};
use crate::sequence::{serialize_sequence, LocationSequence};
use crate::util::sha256_hex;

pub const GENERATOR_ROLE: &str =
    "You are now playing the role of an automated vulnerability repair tool.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub user_message: String,
    /// Content hash of `user_message`.
    pub digest: String,
}

impl PromptBundle {
    pub fn new(system_message: String, user_message: String) -> Self {
        let digest = sha256_hex(user_message.as_bytes());
        PromptBundle {
            system_message,
            user_message,
            digest,
        }
    }
}

fn hunk_list(hunks: &[HunkLocation]) -> String {
    hunks
        .iter()
        .map(|h| format!("lines {}-{}", h.start_line, h.end_line))
        .collect::<Vec<_>>()
        .join(", ")
}

fn hunk_lines(function: &FunctionSnapshot, hunks: &[HunkLocation]) -> String {
    let mut out = String::new();
    for hunk in hunks {
        for line in hunk.start_line..=hunk.end_line {
            out.push_str(&format!("{:>3} | {}\n", line, function.lines[line - 1]));
        }
    }
    out
}

fn push_shot_block(out: &mut String, index: usize, shot: &FewShotExample) {
    out.push_str(&format!(
        "## Example {index} ({cwe})\n\nVulnerable function:\n```\n{func}```\n\n",
        cwe = shot.cwe_id,
        func = shot.vulnerable_function.numbered(),
    ));
    out.push_str(&format!(
        "Step 1. The vulnerable hunk is at {}:\n{}\n",
        hunk_list(&shot.vulnerable_hunks),
        hunk_lines(&shot.vulnerable_function, &shot.vulnerable_hunks),
    ));
    out.push_str(&format!(
        "Step 2. The patch hunk location sequence is:\n{}\n\n",
        serialize_sequence(&shot.ground_truth_sequence),
    ));
    out.push_str(&format!(
        "Step 3. The patch function is:\n```\n{}\n```\n\n",
        shot.patch_function.text(),
    ));
}

/// Builds the generation prompt for an arbitrary function revision. The
/// orchestrator uses this directly because later iterations repair the
/// current variant's function, not the task's original one.
pub fn build_prompt_for(
    cwe_id: &str,
    function: &FunctionSnapshot,
    vulnerable_hunks: &[HunkLocation],
    predicted_seq: &LocationSequence,
    few_shots: &[FewShotExample],
) -> PromptBundle {
    debug_assert_eq!(few_shots.len(), 2, "prompt takes exactly two few-shots");

    let mut user = String::new();
    for (idx, shot) in few_shots.iter().enumerate() {
        push_shot_block(&mut user, idx + 1, shot);
    }

    user.push_str(&format!(
        "## Target ({cwe_id})\n\nVulnerable function:\n```\n{func}```\n\n",
        func = function.numbered(),
    ));
    user.push_str(&format!(
        "Step 1. The vulnerable hunk is at {}:\n{}\n",
        hunk_list(vulnerable_hunks),
        hunk_lines(function, vulnerable_hunks),
    ));
    user.push_str(&format!(
        "Step 2. The predicted patch hunk location sequence is:\n{}\n\n",
        serialize_sequence(predicted_seq),
    ));
    user.push_str(
        "Step 3. Generate the complete patch function. Add new hunks at the [ADD] \
         positions and comment out the lines marked for removal. Reply with the \
         full function in a single fenced code block.\n",
    );

    PromptBundle::new(GENERATOR_ROLE.to_owned(), user)
}

/// Builds the generation prompt for a task's localized function.
pub fn build_prompt(
    task: &RepairTask,
    predicted_seq: &LocationSequence,
    few_shots: &[FewShotExample],
) -> PromptBundle {
    build_prompt_for(
        &task.cwe_id,
        &task.localization.function,
        &task.localization.vulnerable_hunks,
        predicted_seq,
        few_shots,
    )
}

/// Prompt for the location-prediction call: the same few-shot pairs, shown as
/// <function, hunks> -> sequence translations, then the target function.
pub fn build_location_prompt(
    function: &FunctionSnapshot,
    vulnerable_hunks: &[HunkLocation],
    few_shots: &[FewShotExample],
) -> PromptBundle {
    let mut user = String::new();
    for (idx, shot) in few_shots.iter().enumerate() {
        user.push_str(&format!(
            "## Example {index} ({cwe})\n\nVulnerable function:\n```\n{func}```\n\n\
             Vulnerable hunk locations: {hunks}\n\nPatch hunk location sequence:\n{seq}\n\n",
            index = idx + 1,
            cwe = shot.cwe_id,
            func = shot.vulnerable_function.numbered(),
            hunks = hunk_list(&shot.vulnerable_hunks),
            seq = serialize_sequence(&shot.ground_truth_sequence),
        ));
    }
    user.push_str(&format!(
        "## Target\n\nVulnerable function:\n```\n{func}```\n\n\
         Vulnerable hunk locations: {hunks}\n\n\
         Output the patch hunk location sequence for the target function: keep \
         unchanged line numbers, wrap removed line numbers in brackets (for \
         example [7]), and place [ADD] tokens where new code must be inserted. \
         Reply with exactly one sequence in braces.\n",
        func = function.numbered(),
        hunks = hunk_list(vulnerable_hunks),
    ));

    PromptBundle::new(GENERATOR_ROLE.to_owned(), user)
}
