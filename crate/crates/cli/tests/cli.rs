use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const STAGES: [&str; 7] = ["scrape", "aggregate", "collect", "evaluate", "calibrate", "finetune", "report"];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn ce_eval(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ce-eval"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for name in ["metrics.csv", "per_question.csv", "stats.json", "calibration.json", "references.csv"] {
        files.insert(name.to_string(), fs::read(dir.join(name)).unwrap());
    }
    for sub in ["tables", "projections"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            files.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap());
        }
    }
    files
}

fn assert_same(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in a {
        assert!(b[k] == *v, "{k} differs");
    }
}

#[test]
fn stages_compose_to_the_same_outputs_as_run_all() {
    let config = fixture("fixture.toml");
    let (one, two) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = ce_eval(&config, one.path(), &["run-all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(STAGES.iter().all(|s| stdout.contains(&format!("{s}:"))), "{stdout}");
    for stage in STAGES {
        let o = ce_eval(&config, two.path(), &[stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let (a, b) = (run_dir(one.path()), run_dir(two.path()));
    assert_eq!(a.file_name(), b.file_name());
    assert_same(&snapshot(&a), &snapshot(&b));
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn seed_override_changes_the_run_directory() {
    let config = fixture("fixture.toml");
    let out = tempfile::tempdir().unwrap();
    for seed in ["7", "8"] {
        let o = ce_eval(&config, out.path(), &["--seed", seed, "scrape"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2);
    assert!(names[0].ends_with("-s7") && names[1].ends_with("-s8"), "{names:?}");
}

#[test]
fn evaluate_writes_metrics() {
    let config = fixture("fixture.toml");
    let out = tempfile::tempdir().unwrap();
    for stage in ["scrape", "aggregate", "collect", "evaluate"] {
        let o = ce_eval(&config, out.path(), &[stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let metrics = fs::read_to_string(run_dir(out.path()).join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("Model,"), "{metrics}");
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn a_stage_without_its_inputs_exits_one_naming_the_file() {
    let out = tempfile::tempdir().unwrap();
    let o = ce_eval(&fixture("fixture.toml"), out.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("references.csv") || err.contains("questions_eval.csv"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let target = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &target);
        } else {
            fs::copy(&p, &target).unwrap();
        }
    }
}

#[test]
fn a_missing_posts_file_exits_one_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fixtures");
    copy_dir(&fixture(""), &fixtures);
    fs::remove_file(fixtures.join("posts.jsonl")).unwrap();
    let o = ce_eval(&fixtures.join("fixture.toml"), &dir.path().join("out"), &["scrape"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("posts.jsonl"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture("fixture.toml");
    assert_eq!(ce_eval(&config, out.path(), &["launch"]).status.code(), Some(2));
    assert_eq!(ce_eval(&config, out.path(), &["scrape", "--fast"]).status.code(), Some(2));
    let bare = Command::new(env!("CARGO_BIN_EXE_ce-eval")).arg("scrape").output().unwrap();
    assert_eq!(bare.status.code(), Some(2));
    let help = Command::new(env!("CARGO_BIN_EXE_ce-eval")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn an_invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "seed = 1\nunknown_key = 3\n").unwrap();
    let o = ce_eval(&config, dir.path(), &["scrape"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown_key"), "{}", stderr(&o));
}
