use std::path::{Path, PathBuf};
use std::process::Command;

use degenctrl_cli::{run_scenario, run_suite, Verdict};
use degenctrl_core::weights::hardy_poincare_constant;
use degenctrl_core::{CoefficientProfile, SpaceGrid};

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_degenctrl"))
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

const HARDY: &str = "name = \"hq\"\ntask = \"hardy\"\n[grid]\ncells = 200\n[hardy]\nexponent = 2.0\n";

#[test]
fn hardy_task_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hq.toml", HARDY);
    let out = run_scenario(&cfg).unwrap();
    assert_eq!(out.verdict, Verdict::Pass);
    let json = read_json(&out.output.join("hardy.json"));
    let c = json["sections"][0]["values"]["c_hp"].as_f64().unwrap();
    let g = SpaceGrid::build(200, &CoefficientProfile::prototype_beyond_range(1.0, 0.5, 11).unwrap()).unwrap();
    let oracle = hardy_poincare_constant(|x| (x - 0.5) * (x - 0.5), &g).unwrap().c_hp;
    assert!((c - oracle).abs() <= 1e-5 * oracle, "{c} vs {oracle}");
    assert!(out.output.join("manifest.json").exists());
    assert!(out.output.join("summary.txt").exists());
}

#[test]
fn zero_data_control_reports_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "z.toml",
        "name = \"z\"\ntask = \"control\"\nomega = [[0.3, 0.7]]\n[profile]\nkind = \"constant\"\nvalue = 1.0\n\
         [grid]\ncells = 20\nsteps = 20\n[data]\nu0 = \"zero\"\n",
    );
    let out = run_scenario(&cfg).unwrap();
    let manifest = read_json(&out.output.join("manifest.json"));
    assert_eq!(manifest["results"][0]["values"]["cost"].as_f64(), Some(0.0));
    assert_eq!(manifest["verdict"], "pass");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", HARDY);
    assert_eq!(bin().args(["run", ok.to_str().unwrap()]).status().unwrap().code(), Some(0));

    let bad = write(dir.path(), "bad.toml", "name = \"b\"\ntask = \"solve\"\n[profile]\nkind = \"prototype\"\nk = 2.5\n");
    let o = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2.5"));

    let typo = write(dir.path(), "typo.toml", "name = \"t\"\ntask = \"hardy\"\nsed = 1\n[hardy]\nexponent = 2.0\n");
    assert_eq!(bin().args(["validate", typo.to_str().unwrap()]).status().unwrap().code(), Some(1));

    let strict = write(
        dir.path(),
        "strict.toml",
        "name = \"s\"\ntask = \"control\"\nomega = [[0.3, 0.7]]\n[profile]\nkind = \"constant\"\nvalue = 1.0\n\
         [grid]\ncells = 20\nsteps = 20\n[control]\ntarget = 1e-14\n",
    );
    assert_eq!(bin().args(["run", strict.to_str().unwrap()]).status().unwrap().code(), Some(2));
}

#[test]
fn suite_sections_follow_file_order() {
    let dir = tempfile::tempdir().unwrap();
    for (i, e) in [2.0, 1.5, 3.0].iter().enumerate() {
        write(
            dir.path(),
            &format!("s{i}.toml"),
            &format!("name = \"s{i}\"\ntask = \"hardy\"\n[grid]\ncells = 40\n[hardy]\nexponent = {e}\n"),
        );
    }
    let out = run_suite(dir.path()).unwrap();
    let names: Vec<&str> = out.sections.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["s0", "s1", "s2"]);
    let json = read_json(&out.output.join("suite.json"));
    assert_eq!(json["sections"].as_array().unwrap().len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let text = "name = \"c\"\ntask = \"carleman\"\nseed = 4\n[profile]\nkind = \"prototype\"\nalpha = 1.5\n\
                [grid]\ncells = 30\nsteps = 30\nhorizon = 1.0\n[data]\nsamples = 2\n";
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = run_scenario(&write(dir.path(), "c.toml", text)).unwrap();
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out.output)
                .unwrap()
                .map(|e| {
                    let p = e.unwrap().path();
                    (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
                })
                .collect();
            files.sort();
            files
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].iter().any(|(n, _)| n == "carleman_1.csv"));
}
