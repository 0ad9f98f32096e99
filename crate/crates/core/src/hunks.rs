//! Hunk-level diffing between function versions.
//!
//! Diff granularity is whole lines under exact-match equality. Among the
//! minimal edit scripts an LCS alignment admits, the walk below always picks
//! the one whose removals occur earliest, and anchors an insertion that
//! coincides with a removed run after that run — so a one-line replacement of
//! line 7 comes out as `[7],[ADD]`, never `[ADD],[7]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FunctionSnapshot, HunkLocation};
use crate::sequence::{LocationSequence, SeqToken};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("anchor out of range: {0}")]
    AnchorOutOfRange(String),
}

/// New lines inserted after `after_old_line` (0 means before line 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    pub after_old_line: usize,
    pub new_lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkDiff {
    /// Disjoint, sorted ranges of old lines to delete.
    pub removals: Vec<HunkLocation>,
    /// Sorted by anchor.
    pub insertions: Vec<Insertion>,
}

impl HunkDiff {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.insertions.is_empty()
    }

    /// Total removed plus inserted lines.
    pub fn changed_lines(&self) -> usize {
        let removed: usize = self.removals.iter().map(HunkLocation::len).sum();
        let inserted: usize = self.insertions.iter().map(|i| i.new_lines.len()).sum();
        removed + inserted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HunkClassification {
    Unchanged,
    SingleHunk,
    MultiHunk,
}

impl std::fmt::Display for HunkClassification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            HunkClassification::Unchanged => "unchanged",
            HunkClassification::SingleHunk => "single_hunk",
            HunkClassification::MultiHunk => "multi_hunk",
        };
        f.write_str(label)
    }
}

/// Computes the minimal line diff between two versions of a function.
pub fn compute_hunks(old: &FunctionSnapshot, new: &FunctionSnapshot) -> HunkDiff {
    diff_lines(&old.lines, &new.lines)
}

pub fn diff_lines(old: &[String], new: &[String]) -> HunkDiff {
    let n = old.len();
    let m = new.len();

    // Suffix LCS table: lcs[i][j] = LCS length of old[i..] and new[j..].
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if old[i] == new[j] {
                1 + lcs[i + 1][j + 1]
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    // Forward walk. Preferring deletion, then insertion, over matching keeps
    // removals as early as possible and places replacement insertions after
    // the removed run.
    let mut removals: Vec<HunkLocation> = Vec::new();
    let mut insertions: Vec<Insertion> = Vec::new();
    let mut i = 0usize;
    let mut j = 0usize;
    while i < n || j < m {
        if i < n && lcs[i + 1][j] == lcs[i][j] {
            let line = i + 1;
            match removals.last_mut() {
                Some(last) if last.end_line + 1 == line => last.end_line = line,
                _ => removals.push(HunkLocation::new(line, line)),
            }
            i += 1;
        } else if j < m && lcs[i][j + 1] == lcs[i][j] {
            match insertions.last_mut() {
                Some(last) if last.after_old_line == i => last.new_lines.push(new[j].clone()),
                _ => insertions.push(Insertion {
                    after_old_line: i,
                    new_lines: vec![new[j].clone()],
                }),
            }
            j += 1;
        } else {
            debug_assert_eq!(old[i], new[j]);
            i += 1;
            j += 1;
        }
    }

    HunkDiff {
        removals,
        insertions,
    }
}

/// Replays a diff against the old lines.
pub fn apply_hunks(old: &[String], diff: &HunkDiff) -> Vec<String> {
    let removed: Vec<bool> = {
        let mut flags = vec![false; old.len() + 1];
        for hunk in &diff.removals {
            flags[hunk.start_line..=hunk.end_line].fill(true);
        }
        flags
    };
    let mut out = Vec::new();
    for ins in diff.insertions.iter().filter(|i| i.after_old_line == 0) {
        out.extend(ins.new_lines.iter().cloned());
    }
    for (idx, line) in old.iter().enumerate() {
        let old_line = idx + 1;
        if !removed[old_line] {
            out.push(line.clone());
        }
        for ins in diff.insertions.iter().filter(|i| i.after_old_line == old_line) {
            out.extend(ins.new_lines.iter().cloned());
        }
    }
    out
}

/// Projects a diff onto the sequence notation: `Keep(i)` for unchanged lines,
/// `Remove(i)` for deleted lines, one `Add` per insertion placed immediately
/// after the token of its anchor line (or first, for anchor 0).
pub fn to_location_sequence(
    diff: &HunkDiff,
    anchor_length: usize,
) -> Result<LocationSequence, DiffError> {
    for hunk in &diff.removals {
        if hunk.start_line == 0 || hunk.end_line > anchor_length || hunk.start_line > hunk.end_line
        {
            return Err(DiffError::AnchorOutOfRange(format!(
                "removal {}..{} not within 1..{anchor_length}",
                hunk.start_line, hunk.end_line
            )));
        }
    }
    for ins in &diff.insertions {
        if ins.after_old_line > anchor_length {
            return Err(DiffError::AnchorOutOfRange(format!(
                "insertion anchor {} beyond {anchor_length}",
                ins.after_old_line
            )));
        }
    }

    let mut removed = vec![false; anchor_length + 1];
    for hunk in &diff.removals {
        removed[hunk.start_line..=hunk.end_line].fill(true);
    }

    let mut tokens = Vec::new();
    for _ in diff.insertions.iter().filter(|i| i.after_old_line == 0) {
        tokens.push(SeqToken::Add);
    }
    #[allow(clippy::needless_range_loop)]
    for line in 1..=anchor_length {
        tokens.push(if removed[line] {
            SeqToken::Remove(line)
        } else {
            SeqToken::Keep(line)
        });
        for _ in diff.insertions.iter().filter(|i| i.after_old_line == line) {
            tokens.push(SeqToken::Add);
        }
    }

    LocationSequence::new(tokens)
        .map_err(|err| DiffError::AnchorOutOfRange(format!("invalid projected sequence: {err}")))
}

/// Counts maximal contiguous edit regions in old coordinates. A removal and
/// an insertion touching the same anchor region merge into one hunk.
pub fn classify_multi_hunk(old: &FunctionSnapshot, new: &FunctionSnapshot) -> HunkClassification {
    classify_diff(&diff_lines(&old.lines, &new.lines))
}

pub fn classify_diff(diff: &HunkDiff) -> HunkClassification {
    if diff.is_empty() {
        return HunkClassification::Unchanged;
    }

    // Edits live on a doubled scale: line i covers point 2i, the gap after
    // line i covers point 2i+1. A removal claims its surrounding gaps so that
    // adjacent removals and insertions into the removed region coalesce.
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for hunk in &diff.removals {
        spans.push((2 * hunk.start_line - 1, 2 * hunk.end_line + 1));
    }
    for ins in &diff.insertions {
        let point = 2 * ins.after_old_line + 1;
        spans.push((point, point));
    }
    spans.sort_unstable();

    let mut regions = 0usize;
    let mut current_end: Option<usize> = None;
    for (start, end) in spans {
        match current_end {
            Some(e) if start <= e => current_end = Some(e.max(end)),
            _ => {
                regions += 1;
                current_end = Some(end);
            }
        }
    }

    if regions >= 2 {
        HunkClassification::MultiHunk
    } else {
        HunkClassification::SingleHunk
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::serialize_sequence;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn snap(lines: &[&str]) -> FunctionSnapshot {
        FunctionSnapshot {
            file: PathBuf::from("a.c"),
            name: "f".into(),
            start_line: 1,
            lines: lines.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn identical_inputs_give_empty_diff() {
        let old = snap(&["a", "b", "c"]);
        let diff = compute_hunks(&old, &old);
        assert!(diff.is_empty());
        assert_eq!(classify_diff(&diff), HunkClassification::Unchanged);
    }

    #[test]
    fn replacement_with_move_matches_expected_script() {
        // old = [a,b,c], new = [a,x,b]: remove line 3, insert "x" after line 1.
        let old = snap(&["a", "b", "c"]);
        let new = snap(&["a", "x", "b"]);
        let diff = compute_hunks(&old, &new);
        assert_eq!(diff.removals, vec![HunkLocation::new(3, 3)]);
        assert_eq!(
            diff.insertions,
            vec![Insertion {
                after_old_line: 1,
                new_lines: vec!["x".into()]
            }]
        );
    }

    #[test]
    fn empty_diff_projects_to_identity_sequence() {
        let diff = HunkDiff {
            removals: vec![],
            insertions: vec![],
        };
        let seq = to_location_sequence(&diff, 3).unwrap();
        assert_eq!(serialize_sequence(&seq), "{1,2,3}");
    }

    #[test]
    fn leading_insert_and_trailing_remove_project_in_order() {
        // removals={2,2}, insertion after 0, n=2 -> {[ADD],1,[2]}
        let diff = HunkDiff {
            removals: vec![HunkLocation::new(2, 2)],
            insertions: vec![Insertion {
                after_old_line: 0,
                new_lines: vec!["c".into()],
            }],
        };
        let seq = to_location_sequence(&diff, 2).unwrap();
        assert_eq!(serialize_sequence(&seq), "{[ADD],1,[2]}");
    }

    #[test]
    fn front_replacement_comes_from_diff_walk() {
        // old = [a,b], new = [c,a]: keep a, insert c before it, drop b.
        let old = snap(&["a", "b"]);
        let new = snap(&["c", "a"]);
        let diff = compute_hunks(&old, &new);
        assert_eq!(diff.removals, vec![HunkLocation::new(2, 2)]);
        assert_eq!(
            diff.insertions,
            vec![Insertion {
                after_old_line: 0,
                new_lines: vec!["c".into()]
            }]
        );
        let seq = to_location_sequence(&diff, 2).unwrap();
        assert_eq!(serialize_sequence(&seq), "{[ADD],1,[2]}");
    }

    #[test]
    fn anchor_out_of_range_is_rejected() {
        let diff = HunkDiff {
            removals: vec![HunkLocation::new(4, 4)],
            insertions: vec![],
        };
        assert!(matches!(
            to_location_sequence(&diff, 3),
            Err(DiffError::AnchorOutOfRange(_))
        ));
    }

    #[test]
    fn one_line_replacement_is_single_hunk() {
        let old = snap(&["a", "b", "c"]);
        let new = snap(&["a", "x", "c"]);
        assert_eq!(
            classify_multi_hunk(&old, &new),
            HunkClassification::SingleHunk
        );
    }

    #[test]
    fn separated_edits_are_multi_hunk() {
        // Edits at lines 2 and 9 of a 10-line function.
        let old = snap(&["l1", "l2", "l3", "l4", "l5", "l6", "l7", "l8", "l9", "l10"]);
        let new = snap(&["l1", "x2", "l3", "l4", "l5", "l6", "l7", "l8", "x9", "l10"]);
        assert_eq!(
            classify_multi_hunk(&old, &new),
            HunkClassification::MultiHunk
        );
    }

    #[test]
    fn removal_and_adjacent_insertion_merge_into_one_hunk() {
        // Replacement plus an extra inserted line right after: still one region.
        let old = snap(&["a", "b", "c", "d"]);
        let new = snap(&["a", "x", "y", "c", "d"]);
        assert_eq!(
            classify_multi_hunk(&old, &new),
            HunkClassification::SingleHunk
        );
    }

    #[test]
    fn concatenated_disjoint_single_hunk_edits_are_multi_hunk() {
        let old = snap(&["a", "b", "c", "d", "e"]);
        let only_first = snap(&["a", "x", "c", "d", "e"]);
        let only_second = snap(&["a", "b", "c", "y", "e"]);
        let both = snap(&["a", "x", "c", "y", "e"]);
        assert_eq!(
            classify_multi_hunk(&old, &only_first),
            HunkClassification::SingleHunk
        );
        assert_eq!(
            classify_multi_hunk(&old, &only_second),
            HunkClassification::SingleHunk
        );
        assert_eq!(
            classify_multi_hunk(&old, &both),
            HunkClassification::MultiHunk
        );
    }

    fn brute_force_lcs(old: &[String], new: &[String]) -> usize {
        if old.is_empty() || new.is_empty() {
            return 0;
        }
        if old[0] == new[0] {
            1 + brute_force_lcs(&old[1..], &new[1..])
        } else {
            brute_force_lcs(&old[1..], new).max(brute_force_lcs(old, &new[1..]))
        }
    }

    fn lines(src: &[&str]) -> Vec<String> {
        src.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn diff_is_minimal_against_exhaustive_lcs_oracle() {
        let cases: &[(&[&str], &[&str])] = &[
            (&["a", "b", "c"], &["a", "x", "b"]),
            (&["a", "a", "b"], &["a", "b"]),
            (&["a", "b", "a"], &["a"]),
            (&["x", "a", "a"], &["a"]),
            (&["a"], &["b"]),
            (&["a", "b"], &["x", "y"]),
            (&["a", "b", "c", "d", "e", "f"], &["b", "c", "x", "e", "f"]),
            (&["a", "b", "c"], &["c", "b", "a"]),
        ];
        for (old_src, new_src) in cases {
            let old = lines(old_src);
            let new = lines(new_src);
            let diff = diff_lines(&old, &new);
            let lcs = brute_force_lcs(&old, &new);
            let minimal = (old.len() - lcs) + (new.len() - lcs);
            assert_eq!(
                diff.changed_lines(),
                minimal,
                "non-minimal script for {old_src:?} -> {new_src:?}"
            );
            assert_eq!(apply_hunks(&old, &diff), new);
        }
    }

    #[test]
    fn removals_prefer_earliest_position() {
        let diff = diff_lines(&lines(&["a", "a", "b"]), &lines(&["a", "b"]));
        assert_eq!(diff.removals, vec![HunkLocation::new(1, 1)]);
        let diff = diff_lines(&lines(&["x", "a", "a"]), &lines(&["a"]));
        assert_eq!(diff.removals, vec![HunkLocation::new(1, 2)]);
    }

    #[test]
    fn token_multiset_matches_anchor_and_insertions() {
        let old = lines(&["a", "b", "c", "d"]);
        let new = lines(&["z", "a", "c", "w", "d", "q"]);
        let diff = diff_lines(&old, &new);
        let seq = to_location_sequence(&diff, old.len()).unwrap();
        let keeps_removes = seq
            .tokens()
            .iter()
            .filter(|t| !matches!(t, SeqToken::Add))
            .count();
        assert_eq!(keeps_removes, old.len());
        assert_eq!(seq.add_count(), diff.insertions.len());
    }

    fn arb_lines(max: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[abcd]", 0..max)
            .prop_map(|v| v.into_iter().map(|s| s.to_string()).collect())
    }

    proptest! {
        #[test]
        fn apply_inverts_diff(old in arb_lines(12), new in arb_lines(12)) {
            let diff = diff_lines(&old, &new);
            prop_assert_eq!(apply_hunks(&old, &diff), new);
        }

        #[test]
        fn diff_matches_brute_force_minimality(old in arb_lines(6), new in arb_lines(6)) {
            let diff = diff_lines(&old, &new);
            let lcs = brute_force_lcs(&old, &new);
            prop_assert_eq!(diff.changed_lines(), (old.len() - lcs) + (new.len() - lcs));
        }

        #[test]
        fn projection_is_valid_for_any_pair(old in arb_lines(10), new in arb_lines(10)) {
            prop_assume!(!old.is_empty());
            let diff = diff_lines(&old, &new);
            let seq = to_location_sequence(&diff, old.len()).unwrap();
            prop_assert_eq!(seq.anchor_length(), old.len());
        }
    }
}
