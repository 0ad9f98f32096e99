//! Acceptance suite. Each test is one release criterion, checked at its
//! stated tolerance and runtime bound, and prints one PASS line when it
//! holds (run with `cargo test --test acceptance -- --nocapture` to see
//! them).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use taintmend::backend::ScriptedBackend;
use taintmend::bank::load_example_bank;
use taintmend::corpus::{load_task, BuildRecipe, PoV};
use taintmend::hunks::{apply_hunks, classify_diff, diff_lines, to_location_sequence};
use taintmend::orchestrator::{run_repair, RepairReport, RunConfig, RunStatus};
use taintmend::pool::{FailingPatchPool, PoolInsertOutcome};
use taintmend::sequence::{parse_sequence, serialize_sequence, LocationSequence, SeqToken};
use taintmend::trace::{parse_trace_log, taint_statement_coverage, FixtureTraceProvider};
use taintmend::verify::{verify, ProgramVariant, VerificationOutcome, VerifyOptions};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

struct Rng(u64);

impl Rng {
    fn new(seed: u64) -> Self {
        Rng(if seed == 0 { 0x9E3779B97F4A7C15 } else { seed })
    }

    fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn below(&mut self, bound: usize) -> usize {
        (self.next() % bound as u64) as usize
    }
}

#[test]
fn acceptance_01_sequence_codec_round_trip_and_fuzz() {
    let start = Instant::now();
    let mut rng = Rng::new(0xC0DEC);

    for _ in 0..1000 {
        let n = 1 + rng.below(40);
        let mut tokens = Vec::new();
        for line in 1..=n {
            if rng.below(4) == 0 {
                tokens.push(SeqToken::Add);
            }
            if rng.below(3) == 0 {
                tokens.push(SeqToken::Remove(line));
            } else {
                tokens.push(SeqToken::Keep(line));
            }
        }
        if rng.below(4) == 0 {
            tokens.push(SeqToken::Add);
        }
        let seq = LocationSequence::new(tokens).expect("generated sequence is valid");
        let text = serialize_sequence(&seq);
        let parsed = parse_sequence(&text).expect("canonical text parses");
        assert_eq!(parsed, seq, "round trip failed for {text}");
    }

    let alphabet: &[u8] = b"{}[]ADad0123456789, \t\n\x00!";
    for _ in 0..1000 {
        let len = rng.below(60);
        let text: String = (0..len)
            .map(|_| alphabet[rng.below(alphabet.len())] as char)
            .collect();
        // Error or value, never a panic.
        let _ = parse_sequence(&text);
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!("ACCEPTANCE PASS: sequence codec round trip (1000+1000 cases in {elapsed:?})");
}

#[test]
fn acceptance_02_diff_apply_inversion_on_random_edit_scripts() {
    let start = Instant::now();
    let mut rng = Rng::new(0xD1FF);
    let vocab = ["alpha", "beta", "gamma", "delta", "x", "y"];

    for _ in 0..500 {
        let n = 1 + rng.below(40);
        let old: Vec<String> = (0..n)
            .map(|_| vocab[rng.below(vocab.len())].to_string())
            .collect();

        // Independent edit script: keep/drop each line, sprinkle insertions.
        let mut new = Vec::new();
        for line in &old {
            for _ in 0..rng.below(3) {
                if rng.below(3) == 0 {
                    new.push(vocab[rng.below(vocab.len())].to_string());
                }
            }
            if rng.below(4) != 0 {
                new.push(line.clone());
            }
        }
        for _ in 0..rng.below(3) {
            new.push(vocab[rng.below(vocab.len())].to_string());
        }

        let diff = diff_lines(&old, &new);
        assert_eq!(
            apply_hunks(&old, &diff),
            new,
            "inversion failed: old={old:?} new={new:?}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("ACCEPTANCE PASS: diff/apply inversion (500 cases in {elapsed:?})");
}

#[test]
fn acceptance_03_cve_2016_3186_sequence_and_verdict() {
    let read = |name: &str| -> Vec<String> {
        fs::read_to_string(fixture(name))
            .unwrap()
            .trim_end_matches('\n')
            .split('\n')
            .map(str::to_owned)
            .collect()
    };
    let old = read("cve_2016_3186/old.c");
    let new = read("cve_2016_3186/new.c");
    assert_eq!(old.len(), 18);

    let diff = diff_lines(&old, &new);
    assert_eq!(diff.removals, vec![taintmend::corpus::HunkLocation::new(7, 7)]);
    let anchors: Vec<usize> = diff.insertions.iter().map(|i| i.after_old_line).collect();
    assert_eq!(anchors, vec![5, 7]);
    let sequence = to_location_sequence(&diff, old.len()).unwrap();
    assert_eq!(
        serialize_sequence(&sequence),
        "{1,2,3,4,5,[ADD],6,[7],[ADD],8,9,10,11,12,13,14,15,16,17,18}"
    );
    assert_eq!(
        classify_diff(&diff),
        taintmend::hunks::HunkClassification::MultiHunk
    );
    println!("ACCEPTANCE PASS: CVE-2016-3186 sequence fidelity and multi-hunk verdict");
}

#[test]
fn acceptance_04_tsc_matches_independent_oracle() {
    let mut rng = Rng::new(0x75C);

    // Independent oracle: count distinct STMT payload strings in the raw
    // log text and divide by the TOTAL record's value.
    let oracle = |log: &str| -> f64 {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut total = 0usize;
        for line in log.lines() {
            if let Some(rest) = line.strip_prefix("STMT ") {
                seen.insert(rest);
            } else if let Some(rest) = line.strip_prefix("TOTAL ") {
                total = rest.trim().parse().unwrap();
            }
        }
        seen.len() as f64 / total as f64
    };

    for case in 0..100 {
        let files = ["a.c", "b.c", "lib/util.c"];
        let unique = 1 + rng.below(30);
        let mut stmts: Vec<String> = Vec::new();
        let mut used: HashSet<(usize, usize)> = HashSet::new();
        while stmts.len() < unique {
            let key = (rng.below(files.len()), 1 + rng.below(60));
            if used.insert(key) {
                stmts.push(format!("{}:{}", files[key.0], key.1));
            }
        }
        let sink = stmts[rng.below(stmts.len())].clone();
        let total = unique + rng.below(20);

        let mut log = format!("SOURCE {}\n", stmts[0]);
        for stmt in &stmts {
            log.push_str(&format!("STMT {stmt}\n"));
            // Duplicate some records; dedup must not change the count.
            if rng.below(3) == 0 {
                log.push_str(&format!("STMT {stmt}\n"));
            }
        }
        log.push_str(&format!("SINK {sink} CWE-119\nTOTAL {total}\n"));

        let trace = parse_trace_log(&log).unwrap();
        let tsc = taint_statement_coverage(&trace);
        let expected = oracle(&log);
        assert!(
            (tsc - expected).abs() <= 1e-12,
            "case {case}: tsc={tsc} oracle={expected}"
        );
        assert!(tsc > 0.0 && tsc <= 1.0, "case {case}: tsc={tsc} out of range");
    }

    // Full coverage is exactly 1.0.
    let mut log = String::from("SOURCE a.c:1\n");
    for line in 1..=10 {
        log.push_str(&format!("STMT a.c:{line}\n"));
    }
    log.push_str("SINK a.c:10 CWE-119\nTOTAL 10\n");
    let full = parse_trace_log(&log).unwrap();
    assert_eq!(taint_statement_coverage(&full), 1.0);

    println!("ACCEPTANCE PASS: TSC oracle equivalence (100 randomized logs, tol 1e-12)");
}

#[test]
fn acceptance_05_new_vulnerability_truth_table() {
    use taintmend::trace::introduces_new_vulnerability;

    let base = parse_trace_log("SOURCE a.c:3\nSTMT a.c:3\nSTMT a.c:42\nSINK a.c:42 CWE-119\nTOTAL 50").unwrap();
    let make = |cwe: &str, sink_line: usize| {
        let log = format!(
            "SOURCE a.c:3\nSTMT a.c:3\nSTMT a.c:{sink_line}\nSINK a.c:{sink_line} {cwe}\nTOTAL 50"
        );
        parse_trace_log(&log).unwrap()
    };

    // (same CWE?, same sink?) -> new vulnerability verdict.
    assert!(!introduces_new_vulnerability(&base, &make("CWE-119", 42)));
    assert!(introduces_new_vulnerability(&base, &make("CWE-119", 57)));
    assert!(introduces_new_vulnerability(&base, &make("CWE-416", 42)));
    assert!(introduces_new_vulnerability(&base, &make("CWE-416", 57)));

    // Self-comparison is never flagged.
    assert!(!introduces_new_vulnerability(&base, &base.clone()));

    println!("ACCEPTANCE PASS: new-vulnerability filter truth table (4 combos + self)");
}

#[test]
fn acceptance_06_verification_categories_are_deterministic() {
    let start = Instant::now();
    let pov = PoV {
        id: "pov1".into(),
        payload_path: fixture("verify/payload.bin"),
        expected_failure_signature: "heap-buffer-overflow".into(),
    };
    let recipe = BuildRecipe {
        compile_command: "cc -O0 -o app app.c".into(),
        run_command_template: "./app {pov}".into(),
        compile_timeout_s: 30,
        run_timeout_s: 2,
    };

    let expectations = [
        ("verify/fixed", "plausible"),
        ("verify/syntaxerr", "compile_fail"),
        ("verify/looper", "timeout"),
        ("verify/crash", "failing_pov"),
    ];
    for (dir, expected) in expectations {
        let mut labels = Vec::new();
        for _ in 0..3 {
            let tmp = tempfile::tempdir().unwrap();
            copy_tree(&fixture(dir), tmp.path());
            let variant = ProgramVariant {
                workdir: tmp.path().to_path_buf(),
                origin_patch_id: "acc".into(),
                build_recipe: recipe.clone(),
            };
            let outcome = verify(&variant, std::slice::from_ref(&pov), &VerifyOptions::default()).unwrap();
            labels.push(outcome.label());
        }
        assert_eq!(labels, vec![expected; 3], "fixture {dir}");
    }

    // Timeout-derived patches never enter the pool.
    let mut pool = FailingPatchPool::new();
    let mut assessed = synthetic_assessed("pt", "text", 0.9);
    assessed.outcome = VerificationOutcome::Timeout {
        stage: taintmend::verify::TimeoutStage::Run,
        pov_id: Some("pov1".into()),
    };
    assert!(matches!(
        pool.insert(assessed, 1),
        PoolInsertOutcome::Rejected(_)
    ));
    assert!(pool.is_empty());

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!("ACCEPTANCE PASS: verification categories deterministic over 3 runs ({elapsed:?})");
}

fn synthetic_assessed(id: &str, text: &str, fitness: f64) -> taintmend::trace::AssessedPatch {
    taintmend::trace::AssessedPatch {
        patch: taintmend::generate::CandidatePatch {
            patch_id: id.into(),
            iteration: 1,
            parent_id: None,
            patched_function: taintmend::corpus::FunctionSnapshot {
                file: PathBuf::from("app.c"),
                name: "f".into(),
                start_line: 1,
                lines: text.lines().map(str::to_owned).collect(),
            },
            prompt_digest: "d".into(),
            raw_response_excerpt: String::new(),
            parse_failed: false,
        },
        outcome: VerificationOutcome::FailingPoV {
            failed_pov_ids: vec!["pov1".into()],
            failure_messages: vec![],
        },
        trace: None,
        introduces_new_vuln: false,
        fitness,
    }
}

fn run_task(task_dir: &Path, seed: u64, run_dir: &Path) -> RepairReport {
    let task = load_task(task_dir).unwrap();
    let backend = ScriptedBackend::new(task_dir.join("responses"));
    let bank = load_example_bank(&task_dir.join("bank")).unwrap();
    let config = RunConfig {
        rng_seed: seed,
        ..RunConfig::default()
    };
    run_repair(&task, &config, &backend, &FixtureTraceProvider, &bank, run_dir).unwrap()
}

#[test]
fn acceptance_07_end_to_end_staged_repair_over_the_corpus() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let tasks = [
        "tasks/staged-bo",
        "tasks/io-mult",
        "tasks/dz-div",
        "tasks/npd-deref",
        "tasks/dto-narrow",
        "tasks/uaf-handle",
    ];

    let mut plausible = 0usize;
    let mut reports = Vec::new();
    for (idx, task) in tasks.iter().enumerate() {
        let report = run_task(&fixture(task), 7, &tmp.path().join(format!("run{idx}")));
        if report.status.is_plausible() {
            plausible += 1;
        }
        reports.push(report);
    }
    assert!(
        plausible >= 5,
        "{plausible}/6 tasks plausible; need at least 5"
    );

    // Staged task: iteration 2's parent is the iteration-1 patch with
    // maximal TSC, visible in the report.
    let staged = &reports[0];
    assert!(matches!(
        staged.status,
        RunStatus::Plausible { ref patch_id, iteration: 2, .. } if patch_id == "p8"
    ));
    let iter1 = &staged.iterations[0];
    let best = iter1
        .candidates
        .iter()
        .max_by(|a, b| a.fitness.unwrap().total_cmp(&b.fitness.unwrap()))
        .unwrap();
    assert_eq!(
        staged.iterations[1].parent_patch_id.as_deref(),
        Some(best.patch_id.as_str())
    );

    // Same seed, byte-identical persisted reports.
    let dir_a = tmp.path().join("again-a");
    let dir_b = tmp.path().join("again-b");
    run_task(&fixture("tasks/staged-bo"), 7, &dir_a);
    run_task(&fixture("tasks/staged-bo"), 7, &dir_b);
    assert_eq!(
        fs::read(dir_a.join("report.json")).unwrap(),
        fs::read(dir_b.join("report.json")).unwrap()
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "ACCEPTANCE PASS: end-to-end corpus repair ({plausible}/6 plausible, byte-identical reruns, {elapsed:?})"
    );
}

#[test]
fn acceptance_08_pool_discipline_under_randomized_traffic() {
    let mut rng = Rng::new(0xB00);
    let texts = ["t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8"];

    for trial in 0..200 {
        let count = 2 + rng.below(texts.len() - 2);
        let mut entries = Vec::new();
        for (idx, text) in texts.iter().take(count).enumerate() {
            let fitness = (rng.below(5) as f64) / 4.0;
            let changed = 1 + rng.below(9);
            entries.push((format!("p{}", idx + 1), text.to_string(), fitness, changed));
        }

        // Reference pop order from insertion order A.
        let mut pool_a = FailingPatchPool::new();
        for (id, text, fitness, changed) in &entries {
            assert_eq!(
                pool_a.insert(synthetic_assessed(id, text, *fitness), *changed),
                PoolInsertOutcome::Inserted
            );
        }
        let mut order_a = Vec::new();
        while let Some(entry) = pool_a.pop_best() {
            order_a.push(entry.assessed.patch.patch_id.clone());
        }

        // A shuffled insertion order must pop identically.
        let mut shuffled = entries.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.below(i + 1));
        }
        let mut pool_b = FailingPatchPool::new();
        for (id, text, fitness, changed) in &shuffled {
            pool_b.insert(synthetic_assessed(id, text, *fitness), *changed);
        }
        let mut order_b = Vec::new();
        while let Some(entry) = pool_b.pop_best() {
            order_b.push(entry.assessed.patch.patch_id.clone());
        }
        assert_eq!(order_a, order_b, "trial {trial}: pop order depends on insertion order");

        // Interleaved traffic: popped hashes never re-admit, duplicates
        // never coexist.
        let mut pool = FailingPatchPool::new();
        let mut live: HashSet<String> = HashSet::new();
        let mut popped: HashSet<String> = HashSet::new();
        for _ in 0..40 {
            if rng.below(3) == 0 {
                if let Some(entry) = pool.pop_best() {
                    let text = entry.assessed.patch.patched_function.text();
                    assert!(live.remove(&text));
                    popped.insert(text);
                }
            } else {
                let (id, text, fitness, changed) = &entries[rng.below(entries.len())];
                let outcome = pool.insert(synthetic_assessed(id, text, *fitness), *changed);
                if popped.contains(text) || live.contains(text) {
                    assert_eq!(outcome, PoolInsertOutcome::Duplicate);
                } else {
                    assert_eq!(outcome, PoolInsertOutcome::Inserted);
                    live.insert(text.clone());
                }
            }
            assert_eq!(pool.len(), live.len());
        }
    }

    println!("ACCEPTANCE PASS: pool discipline over 200 randomized trials");
}

#[test]
fn acceptance_09_backend_call_budget_holds_on_every_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = [
        "tasks/staged-bo",
        "tasks/io-mult",
        "tasks/dz-div",
        "tasks/npd-deref",
        "tasks/dto-narrow",
        "tasks/uaf-handle",
    ];
    let config = RunConfig::default();
    let budget = config.backend_call_budget();
    for (idx, task) in tasks.iter().enumerate() {
        let report = run_task(&fixture(task), 7, &tmp.path().join(format!("b{idx}")));
        assert!(
            report.backend_calls <= budget,
            "{task}: {} calls exceed budget {budget}",
            report.backend_calls
        );
    }
    println!("ACCEPTANCE PASS: backend call count within {budget} on all fixtures");
}
