//! Command-line surface: repair runs, standalone hunk diffing, trace
//! assessment, and corpus statistics.
//!
//! Exit codes: 0 for success (and a plausible repair), 2 for an exhausted
//! repair run, 1 for any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use taintmend::backend::{GeneratorBackend, HttpBackend, ScriptedBackend};
use taintmend::bank::{load_example_bank, ExampleBank};
use taintmend::config::{
    resolve, BackendKind, EnvConfig, FileConfig, FlagOverrides, ProviderKind,
};
use taintmend::corpus::load_task;
use taintmend::hunks::{classify_diff, diff_lines, to_location_sequence, HunkClassification};
use taintmend::orchestrator::{run_repair, RunStatus};
use taintmend::sequence::serialize_sequence;
use taintmend::trace::{
    introduces_new_vulnerability, read_trace_log, taint_statement_coverage, ExternalCommandProvider,
    FixtureTraceProvider, TraceProvider,
};

#[derive(Parser)]
#[command(name = "taintmend", version, about = "Iterative PoV-driven vulnerability repair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the iterative repair pipeline on a task directory.
    Repair(RepairArgs),
    /// Diff two function files and print the location sequence and verdict.
    DiffHunks(DiffArgs),
    /// Compute TSC and the new-vulnerability verdict for a pair of trace logs.
    Assess(AssessArgs),
    /// Count single-/multi-hunk pairs in a corpus directory.
    Stats(StatsArgs),
}

#[derive(Args)]
struct RepairArgs {
    /// Task directory (task.json, program/, povs/, localization.json).
    #[arg(long)]
    task: PathBuf,
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["live", "scripted"])]
    backend: Option<String>,
    /// Scripted-backend responses directory (default: <task>/responses).
    #[arg(long)]
    responses_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["fixture", "external"])]
    provider: Option<String>,
    /// External trace command; {workdir} and {pov} are substituted.
    #[arg(long)]
    external_trace_cmd: Option<String>,
    /// Few-shot example bank directory (default: <task>/bank).
    #[arg(long)]
    example_bank: Option<PathBuf>,
    /// Root directory for run reports (default: runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name under <out>/<task_id> (default: unix timestamp).
    #[arg(long)]
    run_id: Option<String>,
    /// Print the full report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DiffArgs {
    old_file: PathBuf,
    new_file: PathBuf,
    /// Restrict both files to lines a:b before diffing.
    #[arg(long, value_name = "a:b")]
    function_range: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AssessArgs {
    original_trace: PathBuf,
    patched_trace: PathBuf,
    /// Output is always JSON; accepted for symmetry with other commands.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory of pair subdirectories, each holding an `old.*` and `new.*` file.
    pairs_dir: PathBuf,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Repair(args) => cmd_repair(args),
        Command::DiffHunks(args) => cmd_diff_hunks(args),
        Command::Assess(args) => cmd_assess(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        bail!("{} is empty", path.display());
    }
    Ok(body.split('\n').map(str::to_owned).collect())
}

fn cmd_repair(args: RepairArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FlagOverrides {
        iterations: args.iterations,
        candidates: args.candidates,
        seed: args.seed,
        backend: args.backend.clone(),
        responses_dir: args.responses_dir.clone(),
        provider: args.provider.clone(),
        external_trace_cmd: args.external_trace_cmd.clone(),
        example_bank: args.example_bank.clone(),
        output_root: args.out.clone(),
    };
    let effective = resolve(file, EnvConfig::read(), flags)?;

    let task = load_task(&args.task)
        .with_context(|| format!("loading task {}", args.task.display()))?;

    let backend: Box<dyn GeneratorBackend> = match effective.backend {
        BackendKind::Scripted => {
            let dir = effective
                .responses_dir
                .clone()
                .unwrap_or_else(|| args.task.join("responses"));
            if !dir.is_dir() {
                bail!("scripted backend needs a responses directory at {}", dir.display());
            }
            Box::new(ScriptedBackend::new(dir))
        }
        BackendKind::Live => Box::new(HttpBackend::new(
            effective.endpoint.clone(),
            effective.model.clone(),
            effective.api_key.clone(),
        )),
    };

    let provider: Box<dyn TraceProvider> = match effective.provider {
        ProviderKind::Fixture => Box::new(FixtureTraceProvider),
        ProviderKind::External => Box::new(ExternalCommandProvider {
            command_template: effective
                .external_trace_cmd
                .clone()
                .expect("resolve() enforces the command"),
            timeout: std::time::Duration::from_secs(task.program.build_recipe.run_timeout_s),
        }),
    };

    let bank_dir = effective
        .example_bank
        .clone()
        .unwrap_or_else(|| args.task.join("bank"));
    let bank: ExampleBank = load_example_bank(&bank_dir)
        .with_context(|| format!("loading example bank {}", bank_dir.display()))?;

    let run_name = args.run_id.clone().unwrap_or_else(|| {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock before epoch");
        format!("{}", now.as_millis())
    });
    let run_dir = effective.output_root.join(&task.task_id).join(run_name);

    let report = run_repair(
        &task,
        &effective.run,
        backend.as_ref(),
        provider.as_ref(),
        &bank,
        &run_dir,
    )?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        match &report.status {
            RunStatus::Plausible {
                patch_id,
                iteration,
                ..
            } => println!("plausible at iteration {iteration} (patch {patch_id})"),
            RunStatus::Exhausted { reason } => {
                println!(
                    "exhausted after {} iteration(s): {reason}",
                    report.iterations.len()
                )
            }
        }
        println!("report: {}", run_dir.join("report.json").display());
    }

    Ok(match report.status {
        RunStatus::Plausible { .. } => ExitCode::from(0),
        RunStatus::Exhausted { .. } => ExitCode::from(2),
    })
}

fn parse_range(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("--function-range wants a:b"))?;
    let start: usize = a.trim().parse().context("range start")?;
    let end: usize = b.trim().parse().context("range end")?;
    if start == 0 || start > end {
        bail!("bad range {start}:{end}");
    }
    Ok((start, end))
}

fn slice_range(lines: Vec<String>, range: Option<(usize, usize)>, what: &Path) -> Result<Vec<String>> {
    match range {
        None => Ok(lines),
        Some((start, end)) => {
            if end > lines.len() {
                bail!("range {start}:{end} exceeds {} ({} lines)", what.display(), lines.len());
            }
            Ok(lines[start - 1..end].to_vec())
        }
    }
}

fn cmd_diff_hunks(args: DiffArgs) -> Result<ExitCode> {
    let range = args.function_range.as_deref().map(parse_range).transpose()?;
    let old = slice_range(load_lines(&args.old_file)?, range, &args.old_file)?;
    let new = slice_range(load_lines(&args.new_file)?, range, &args.new_file)?;

    let diff = diff_lines(&old, &new);
    let sequence = to_location_sequence(&diff, old.len()).map_err(|e| anyhow!(e.to_string()))?;
    let verdict = classify_diff(&diff);

    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "sequence": serialize_sequence(&sequence),
                "classification": verdict.to_string(),
            })
        );
    } else {
        println!("{}", serialize_sequence(&sequence));
        println!("{verdict}");
    }
    Ok(ExitCode::from(0))
}

fn cmd_assess(args: AssessArgs) -> Result<ExitCode> {
    let original = read_trace_log(&args.original_trace)?;
    let patched = read_trace_log(&args.patched_trace)?;
    let tsc = taint_statement_coverage(&patched);
    let new_vuln = introduces_new_vulnerability(&original, &patched);
    println!("{}", serde_json::json!({ "tsc": tsc, "new_vuln": new_vuln }));
    Ok(ExitCode::from(0))
}

fn find_pair(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut old = None;
    let mut new = None;
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        match path.file_stem().and_then(|s| s.to_str()) {
            Some("old") => old = Some(path),
            Some("new") => new = Some(path),
            _ => {}
        }
    }
    match (old, new) {
        (Some(old), Some(new)) => Ok((old, new)),
        _ => bail!("{} lacks an old.*/new.* pair", dir.display()),
    }
}

fn cmd_stats(args: StatsArgs) -> Result<ExitCode> {
    let mut pair_dirs: Vec<PathBuf> = std::fs::read_dir(&args.pairs_dir)
        .with_context(|| format!("reading {}", args.pairs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    pair_dirs.sort();

    let mut unchanged = 0usize;
    let mut single = 0usize;
    let mut multi = 0usize;
    for dir in &pair_dirs {
        let (old_path, new_path) = find_pair(dir)?;
        let old = load_lines(&old_path)?;
        let new = load_lines(&new_path)?;
        match classify_diff(&diff_lines(&old, &new)) {
            HunkClassification::Unchanged => unchanged += 1,
            HunkClassification::SingleHunk => single += 1,
            HunkClassification::MultiHunk => multi += 1,
        }
    }
    let total = pair_dirs.len();
    let percentage = if total == 0 {
        None
    } else {
        Some(100.0 * multi as f64 / total as f64)
    };

    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "total": total,
                "unchanged": unchanged,
                "single_hunk": single,
                "multi_hunk": multi,
                "multi_hunk_percentage": percentage,
            })
        );
    } else {
        println!("total: {total}");
        println!("unchanged: {unchanged}");
        println!("single_hunk: {single}");
        println!("multi_hunk: {multi}");
        match percentage {
            Some(p) => println!("multi_hunk_percentage: {p:.2}%"),
            None => println!("multi_hunk_percentage: n/a"),
        }
    }
    Ok(ExitCode::from(0))
}
