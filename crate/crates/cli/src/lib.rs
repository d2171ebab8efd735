//! Scenario runner behind the `degenctrl` binary.
//!
//! A scenario is one TOML file naming a task. Running it writes into the
//! scenario's output directory:
//!
//! * `manifest.json`: the parsed config, seed, crate versions, file list,
//!   results and verdict;
//! * `<task>.json`: the task's values (6 significant digits);
//! * `summary.txt`: the same values for reading;
//! * task CSV files (full precision).
//!
//! Nothing time- or host-dependent is recorded, so reruns are byte-identical.

pub mod config;
pub mod report;
pub mod tasks;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

pub use config::{Scenario, Task};
pub use report::{emit_report, Section, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] degenctrl_core::Error),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
}

/// Outcome of one scenario or suite.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub sections: Vec<Section>,
    pub output: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
        }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses and validates a scenario file without running it.
pub fn validate(path: &Path) -> Result<Scenario, CliError> {
    let sc = Scenario::load(path)?;
    sc.validate(&base_dir(path))?;
    if let (Task::Suite, Some(s)) = (sc.task, &sc.suite) {
        for p in scenario_files(&base_dir(path).join(&s.dir), Some(path))? {
            validate(&p)?;
        }
    }
    Ok(sc)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let p = dir.join(name);
    std::fs::write(&p, bytes).map_err(|e| CliError::Io(p, e))
}

fn write_artifacts(
    dir: &Path,
    sc: &Scenario,
    sections: &[Section],
    files: &[(String, Vec<u8>)],
) -> Result<Verdict, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let (text, json) = emit_report(sections);
    let task = sc.task.name();
    for (name, bytes) in files {
        write(dir, name, bytes)?;
    }
    write(dir, &format!("{task}.json"), &to_pretty(&json))?;
    write(dir, "summary.txt", text.as_bytes())?;
    let mut listed: Vec<String> = files.iter().map(|f| f.0.clone()).collect();
    listed.extend([format!("{task}.json"), "summary.txt".into()]);
    listed.sort();
    let verdict = Verdict::from_bool(sections.iter().all(|s| s.verdict == Verdict::Pass));
    let manifest = json!({
        "name": sc.name,
        "task": task,
        "seed": sc.seed,
        "config": serde_json::to_value(sc).expect("config serializes"),
        "versions": {
            "degenctrl": env!("CARGO_PKG_VERSION"),
            "degenctrl-core": degenctrl_core::VERSION,
        },
        "files": listed,
        "results": json["sections"],
        "verdict": verdict.as_str(),
    });
    write(dir, "manifest.json", &to_pretty(&manifest))?;
    Ok(verdict)
}

fn to_pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json value serializes");
    out.push(b'\n');
    out
}

/// Runs one scenario file (a `suite` task runs its directory).
pub fn run_scenario(path: &Path) -> Result<RunOutcome, CliError> {
    let sc = validate(path)?;
    let base = base_dir(path);
    let out = sc.output_dir(&base);
    if sc.task == Task::Suite {
        let dir = base.join(&sc.suite.as_ref().expect("validated").dir);
        let sections = run_files(&scenario_files(&dir, Some(path))?);
        let verdict = write_artifacts(&out, &sc, &sections, &[])?;
        return Ok(RunOutcome { verdict, sections, output: out });
    }
    let res = tasks::run_task(&sc, &base)?;
    let sections = vec![res.section];
    let verdict = write_artifacts(&out, &sc, &sections, &res.files)?;
    Ok(RunOutcome { verdict, sections, output: out })
}

/// Runs every scenario in `dir`, writing a combined report to `dir/out/suite`.
pub fn run_suite(dir: &Path) -> Result<RunOutcome, CliError> {
    let files = scenario_files(dir, None)?;
    let sections = run_files(&files);
    let sc = Scenario::parse("name = \"suite\"\ntask = \"suite\"\n[suite]\ndir = \".\"\n")?;
    let out = dir.join("out").join("suite");
    let verdict = write_artifacts(&out, &sc, &sections, &[])?;
    Ok(RunOutcome { verdict, sections, output: out })
}

/// `*.toml` files in `dir` in name order, skipping `exclude` and nested suites.
fn scenario_files(dir: &Path, exclude: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let skip = exclude.and_then(|p| p.canonicalize().ok());
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| CliError::Io(dir.to_path_buf(), e))?.path();
        if p.extension().is_some_and(|e| e == "toml") && p.canonicalize().ok() != skip {
            if Scenario::load(&p).map(|s| s.task == Task::Suite).unwrap_or(false) {
                continue;
            }
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Thread cap from `DEGENCTRL_THREADS`; unset or invalid means rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("DEGENCTRL_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

fn run_files(files: &[PathBuf]) -> Vec<Section> {
    let job = |p: &PathBuf| -> Section {
        match run_scenario(p) {
            Ok(o) => o.sections.into_iter().next().unwrap_or_else(|| Section::new("empty", "suite")),
            Err(e) => {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let mut s = Section::new(&name, "error");
                s.verdict = Verdict::Fail;
                s.push("error", e.to_string());
                s
            }
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| files.par_iter().map(job).collect()),
        Err(_) => files.iter().map(job).collect(),
    }
}
