use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dropmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dropmix")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Bundled scenario1 cut to ten minutes of simulated time.
fn quick_config(dir: &Path) -> String {
    let text = stdout(&dropmix(&["scenarios", "scenario1"]));
    let text = text.replace("World.duration = 43200", "World.duration = 600");
    assert!(text.contains("World.duration = 600"));
    let p = dir.join("quick.ini");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_report_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("r1");
    let o = dropmix(&["run", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(out.join("report.txt").exists());
    assert!(!out.join("trace.csv").exists());
    assert_eq!(stdout(&o), csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "scenario,seed,kind,stratum,created,delivered,ratio,latency_mean,latency_median");
    assert!(lines[1].starts_with("scenario1,7,WRITE,0,"));
    assert!(lines[10].starts_with("scenario1,7,READ,total,"));

    let again = dir.path().join("r2");
    let o = dropmix(&["run", "--config", &cfg, "--seed", "7", "--out", again.to_str().unwrap(), "--trace"]);
    assert!(o.status.success());
    assert_eq!(fs::read(again.join("report.csv")).unwrap(), csv.as_bytes());
    let trace = fs::read_to_string(again.join("trace.csv")).unwrap();
    assert!(trace.starts_with("time,event,node,msg_uid,detail\n"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn seed_range_writes_one_report_per_seed_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("batch");
    let o = dropmix(&["run", "--config", &cfg, "--seeds", "1..5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in 1..=5 {
        assert!(out.join(format!("seed-{s}/report.csv")).exists(), "seed {s}");
    }
    assert!(!out.join("seed-6").exists());
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(stdout(&o), agg);
    assert_eq!(agg.lines().count(), 11);
    assert!(agg.lines().nth(1).unwrap().starts_with("scenario1,mean,WRITE,0,"));

    // a batch seed reproduces the single run with that seed
    let single = dir.path().join("single");
    assert!(dropmix(&["run", "--config", &cfg, "--seed", "3", "--out", single.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(single.join("report.csv")).unwrap(), fs::read(out.join("seed-3/report.csv")).unwrap());
}

#[test]
fn compare_reports_and_rejects_mismatched_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let a = dir.path().join("a");
    assert!(dropmix(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());

    let o = dropmix(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().next().unwrap(), "kind,stratum,metric,a,b,delta,ratio");
    assert_eq!(table.lines().count(), 1 + 10 * 5);
    for line in table.lines().skip(1) {
        let delta = line.split(',').nth(5).unwrap();
        assert!(delta == "0.000000" || delta == "NA", "{line}");
    }
    assert!(table.contains(",latency_median,"));

    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("report.csv"), "scenario,kind,value\nx,WRITE,1\n").unwrap();
    let o = dropmix(&["compare", a.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_one_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("neg.ini");
    fs::write(&p, "# comment\nWorld.duration = 60\nNodes.count = -5\n").unwrap();
    let o = dropmix(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = dropmix(&["run", "--config", "/nonexistent/dropmix.ini"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dropmix(&["run", "--config", "scenario1", "--seeds", "5..2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = dropmix(&["run", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn scenarios_lists_and_prints_bundled_files() {
    let o = dropmix(&["scenarios"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "scenario1\nscenario2\n");
    let s2 = stdout(&dropmix(&["scenarios", "scenario2.ini"]));
    assert!(s2.contains("World.width = 500"));
    assert!(s2.contains("Nodes.count = 41"));
    assert_eq!(dropmix(&["scenarios", "scenario9"]).status.code(), Some(1));
}
