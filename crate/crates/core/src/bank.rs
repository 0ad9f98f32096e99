//! Few-shot example bank: <vulnerable function, patch function> pairs indexed
//! by CWE identifier.
//!
//! On disk a bank is a directory of entries:
//!
//! ```text
//! bank/
//!   bank.json                   {"provenance": "..."}   (optional)
//!   <entry>/vulnerable.c        the vulnerable function text
//!   <entry>/patched.c           the patched function text
//!   <entry>/example.json        {"cwe_id": "...", "vulnerable_hunks": [{"start","end"}]}
//! ```
//!
//! Hunks here are function-local. The ground-truth location sequence of each
//! pair is derived from the diff at load time, so the `FewShotExample`
//! invariant holds by construction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::{FunctionSnapshot, HunkLocation};
use crate::hunks::{compute_hunks, to_location_sequence};
use crate::sequence::LocationSequence;
use crate::util::split_lines;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("reading {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("bank entry {entry}: {reason}")]
    Schema { entry: String, reason: String },
    #[error("no usable examples for {cwe} (bank-wide fallback holds {available}, need {needed})")]
    EmptyBankForCwe {
        cwe: String,
        available: usize,
        needed: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub name: String,
    pub cwe_id: String,
    pub vulnerable_function: FunctionSnapshot,
    pub patch_function: FunctionSnapshot,
    pub vulnerable_hunks: Vec<HunkLocation>,
    pub ground_truth_sequence: LocationSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleBank {
    by_cwe: BTreeMap<String, Vec<FewShotExample>>,
    pub provenance: String,
}

impl ExampleBank {
    pub fn empty(provenance: impl Into<String>) -> Self {
        ExampleBank {
            by_cwe: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn insert(&mut self, example: FewShotExample) {
        self.by_cwe
            .entry(example.cwe_id.clone())
            .or_default()
            .push(example);
    }

    pub fn for_cwe(&self, cwe_id: &str) -> &[FewShotExample] {
        self.by_cwe.get(cwe_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all(&self) -> Vec<&FewShotExample> {
        self.by_cwe.values().flatten().collect()
    }

    pub fn len(&self) -> usize {
        self.by_cwe.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankManifest {
    provenance: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryManifest {
    cwe_id: String,
    vulnerable_hunks: Vec<EntryHunk>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryHunk {
    start: usize,
    end: usize,
}

fn read(path: &Path) -> Result<String, BankError> {
    std::fs::read_to_string(path).map_err(|err| BankError::Io {
        path: path.to_path_buf(),
        reason: err.to_string(),
    })
}

fn function_from_file(entry: &str, path: &Path, name: &str) -> Result<FunctionSnapshot, BankError> {
    let lines = split_lines(&read(path)?);
    if lines.is_empty() {
        return Err(BankError::Schema {
            entry: entry.to_owned(),
            reason: format!("{} is empty", path.display()),
        });
    }
    Ok(FunctionSnapshot {
        file: PathBuf::from(path.file_name().expect("file name")),
        name: name.to_owned(),
        start_line: 1,
        lines,
    })
}

pub fn load_example_bank(dir: &Path) -> Result<ExampleBank, BankError> {
    let provenance = match std::fs::read_to_string(dir.join("bank.json")) {
        Ok(text) => {
            let manifest: BankManifest =
                serde_json::from_str(&text).map_err(|err| BankError::Schema {
                    entry: "bank.json".into(),
                    reason: err.to_string(),
                })?;
            manifest.provenance
        }
        Err(_) => dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unnamed".into()),
    };

    let mut bank = ExampleBank::empty(provenance);
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|err| BankError::Io {
            path: dir.to_path_buf(),
            reason: err.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();

    for entry_dir in entries {
        let entry = entry_dir
            .file_name()
            .expect("entry dir has a name")
            .to_string_lossy()
            .into_owned();
        let manifest: EntryManifest = serde_json::from_str(&read(&entry_dir.join("example.json"))?)
            .map_err(|err| BankError::Schema {
                entry: entry.clone(),
                reason: err.to_string(),
            })?;
        let vulnerable =
            function_from_file(&entry, &entry_dir.join("vulnerable.c"), &entry)?;
        let patched = function_from_file(&entry, &entry_dir.join("patched.c"), &entry)?;

        let mut hunks = Vec::new();
        for h in &manifest.vulnerable_hunks {
            if h.start == 0 || h.start > h.end || h.end > vulnerable.len() {
                return Err(BankError::Schema {
                    entry: entry.clone(),
                    reason: format!(
                        "vulnerable hunk {}..{} outside 1..{}",
                        h.start,
                        h.end,
                        vulnerable.len()
                    ),
                });
            }
            hunks.push(HunkLocation::new(h.start, h.end));
        }
        if hunks.is_empty() {
            return Err(BankError::Schema {
                entry: entry.clone(),
                reason: "vulnerable_hunks is empty".into(),
            });
        }

        let diff = compute_hunks(&vulnerable, &patched);
        let ground_truth =
            to_location_sequence(&diff, vulnerable.len()).map_err(|err| BankError::Schema {
                entry: entry.clone(),
                reason: err.to_string(),
            })?;

        bank.insert(FewShotExample {
            name: entry,
            cwe_id: manifest.cwe_id,
            vulnerable_function: vulnerable,
            patch_function: patched,
            vulnerable_hunks: hunks,
            ground_truth_sequence: ground_truth,
        });
    }

    Ok(bank)
}

/// xorshift64; good enough for reproducible example picking.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicRng {
    state: u64,
}

impl DeterministicRng {
    pub fn seeded(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed };
        DeterministicRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.state = x;
        x
    }

    pub fn pick(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }
}

/// Picks `count` distinct examples sharing `cwe_id`, deterministically for a
/// given seed. When the bank holds fewer than `count` same-CWE pairs the draw
/// falls back to the whole bank.
pub fn select_few_shots(
    bank: &ExampleBank,
    cwe_id: &str,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<FewShotExample>, BankError> {
    let same_cwe = bank.for_cwe(cwe_id);
    let pool: Vec<&FewShotExample> = if same_cwe.len() >= count {
        same_cwe.iter().collect()
    } else {
        bank.all()
    };
    if pool.len() < count {
        return Err(BankError::EmptyBankForCwe {
            cwe: cwe_id.to_owned(),
            available: pool.len(),
            needed: count,
        });
    }

    let mut rng = DeterministicRng::seeded(rng_seed);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let at = rng.pick(indices.len());
        chosen.push(pool[indices.remove(at)].clone());
    }
    Ok(chosen)
}
