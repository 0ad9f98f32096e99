//! Iterative automated vulnerability repair.
//!
//! The pipeline takes a vulnerable program with its Proofs-of-Vulnerability
//! and a localization result, predicts where patch hunks belong, drives a
//! language-model backend to generate candidate patch functions, verifies
//! each candidate by compiling and replaying the PoVs, filters failing
//! patches that introduce new vulnerabilities, ranks the rest by taint
//! statement coverage, and iterates repair from the best failing patch.

pub mod backend;
pub mod bank;
pub mod config;
pub mod corpus;
pub mod generate;
pub mod hunks;
pub mod orchestrator;
pub mod pool;
pub mod prompt;
pub mod sequence;
pub mod trace;
pub mod verify;

mod util;

pub use backend::{BackendError, GeneratorBackend, HttpBackend, ScriptedBackend};
pub use bank::{load_example_bank, select_few_shots, ExampleBank, FewShotExample};
pub use corpus::{
    extract_function, load_task, BuildRecipe, CorpusError, FunctionSnapshot, HunkLocation,
    LocalizationResult, PoV, RepairTask, SourceProgram,
};
pub use generate::{
    apply_patch, extract_function_from_response, generate_candidates, predict_patch_locations,
    CandidatePatch, GenerateError,
};
pub use hunks::{
    apply_hunks, classify_multi_hunk, compute_hunks, to_location_sequence, HunkClassification,
    HunkDiff,
};
pub use orchestrator::{run_repair, OrchestratorError, RepairReport, RunConfig, RunStatus};
pub use pool::{FailingPatchPool, PoolInsertOutcome};
pub use prompt::{build_prompt, PromptBundle, GENERATOR_ROLE};
pub use sequence::{parse_sequence, serialize_sequence, LocationSequence, SeqToken, SequenceError};
pub use trace::{
    assess, introduces_new_vulnerability, parse_trace_log, taint_statement_coverage, AssessedPatch,
    FixtureTraceProvider, TaintTrace, TraceError, TraceProvider,
};
pub use verify::{verify, ProgramVariant, VerificationOutcome, VerifyError, VerifyOptions};
