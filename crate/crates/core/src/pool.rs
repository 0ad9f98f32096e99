//! The failing-patch pool: the cross-iteration reservoir of PoV-failing and
//! compile-failing patches, keyed by content hash of the patched function
//! text. A popped hash is blacklisted and never re-admitted.

use std::collections::{BTreeMap, BTreeSet};

use crate::trace::AssessedPatch;
use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub assessed: AssessedPatch,
    pub content_hash: String,
    /// Changed lines of the patched function against the task's original
    /// function; first tie-break after fitness.
    pub changed_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PoolInsertOutcome {
    Inserted,
    Duplicate,
    Rejected(String),
}

#[derive(Debug, Default)]
pub struct FailingPatchPool {
    entries: BTreeMap<String, PoolEntry>,
    popped: BTreeSet<String>,
}

pub fn patch_content_hash(assessed: &AssessedPatch) -> String {
    sha256_hex(assessed.patch.patched_function.text().as_bytes())
}

impl FailingPatchPool {
    pub fn new() -> Self {
        FailingPatchPool::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Admits one assessed patch. Timeout-derived and new-vulnerability
    /// entries are rejected; a content hash seen before (still pooled or
    /// already popped) is a duplicate.
    pub fn insert(&mut self, assessed: AssessedPatch, changed_lines: usize) -> PoolInsertOutcome {
        if assessed.outcome.is_timeout() {
            return PoolInsertOutcome::Rejected("timeout candidates are discarded".into());
        }
        if assessed.outcome.is_plausible() {
            return PoolInsertOutcome::Rejected("plausible patches terminate the run".into());
        }
        if assessed.introduces_new_vuln {
            return PoolInsertOutcome::Rejected("introduces a new vulnerability".into());
        }
        let hash = patch_content_hash(&assessed);
        if self.popped.contains(&hash) || self.entries.contains_key(&hash) {
            return PoolInsertOutcome::Duplicate;
        }
        self.entries.insert(
            hash.clone(),
            PoolEntry {
                assessed,
                content_hash: hash,
                changed_lines,
            },
        );
        PoolInsertOutcome::Inserted
    }

    /// Removes and returns the best entry: highest fitness, then fewest
    /// changed lines, then smallest patch id. The hash is blacklisted.
    pub fn pop_best(&mut self) -> Option<PoolEntry> {
        let best_hash = self
            .entries
            .values()
            .max_by(|a, b| {
                a.assessed
                    .fitness
                    .total_cmp(&b.assessed.fitness)
                    .then_with(|| b.changed_lines.cmp(&a.changed_lines))
                    .then_with(|| {
                        b.assessed
                            .patch
                            .patch_id
                            .cmp(&a.assessed.patch.patch_id)
                    })
            })?
            .content_hash
            .clone();
        let entry = self.entries.remove(&best_hash)?;
        self.popped.insert(best_hash);
        Some(entry)
    }

    pub fn was_popped(&self, hash: &str) -> bool {
        self.popped.contains(hash)
    }

    /// Remaining entries, best first; used for reporting.
    pub fn snapshot(&self) -> Vec<&PoolEntry> {
        let mut entries: Vec<&PoolEntry> = self.entries.values().collect();
        entries.sort_by(|a, b| {
            b.assessed
                .fitness
                .total_cmp(&a.assessed.fitness)
                .then_with(|| a.changed_lines.cmp(&b.changed_lines))
                .then_with(|| a.assessed.patch.patch_id.cmp(&b.assessed.patch.patch_id))
        });
        entries
    }
}
