use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use saferet::workspace::corpus;

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("saferet-cli-{}-{}", tag, std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }
    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saferet")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn model(dir: &Path, name: &str, text: &str, terrain: bool) {
    std::fs::write(dir.join(format!("{}.map", name)), text).unwrap();
    let cmd = if terrain { "build-terrain" } else { "build-grid" };
    let o = run(dir, &[cmd, &format!("{}.map", name), "-o", &format!("{}.json", name)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_zero() {
    let s = Scratch::new("help");
    for flag in ["--help", "--version"] {
        let o = run(s.path(), &[flag]);
        assert_eq!(o.status.code(), Some(0));
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one_with_prefix() {
    let s = Scratch::new("usage");
    let o = run(s.path(), &["plan", "--chi-o", "lots"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR USAGE:"), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_one() {
    let s = Scratch::new("io");
    let o = run(s.path(), &["build-grid", "nowhere.map"]);
    assert_eq!(o.status.code(), Some(1));
    let first = stderr(&o).lines().next().unwrap_or_default().to_string();
    assert!(first.starts_with("ERROR "), "{}", first);
}

#[test]
fn malformed_map_is_a_validation_error() {
    let s = Scratch::new("bad");
    std::fs::write(s.path().join("bad.map"), "[map]\n#?#\n").unwrap();
    let o = run(s.path(), &["build-grid", "bad.map"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR "));
}

#[test]
fn office_plan_succeeds_and_sweep_bound_is_infeasible() {
    let s = Scratch::new("plan");
    model(s.path(), "office", corpus::OFFICE, false);
    let o = run(
        s.path(),
        &[
            "plan", "--model", "office.json", "--method", "hier", "--chi-o", "0.8", "--chi-r", "0.9", "--task",
            "surveil(o1, o2)", "--return", "safe_return(true; bs)", "-o", "plan.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plan: serde_json::Value = serde_json::from_slice(&std::fs::read(s.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["method"], "hierarchical");

    model(s.path(), "sweep", corpus::SWEEP, false);
    let o = run(
        s.path(),
        &[
            "plan", "--model", "sweep.json", "--chi-o", "0.9", "--chi-r", "0.9", "--safety-mode", "statewise", "--task",
            "avoid_reach(debris, ex)", "--return", "safe_return(true; bs)",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("ERROR ") && err.starts_with("ERROR TASK_INFEASIBLE:"), "{}", err);
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn simulate_heatmap_and_compare_run_end_to_end() {
    let s = Scratch::new("e2e");
    model(s.path(), "terrain", corpus::TERRAIN, true);
    let o = run(
        s.path(),
        &["plan", "--model", "terrain.json", "--task", "surveil(s1, s2)", "--return", "safe_return(true; bs)", "-o", "p.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(s.path(), &["simulate", "--model", "terrain.json", "--plan", "p.json", "--runs", "20", "--request", "fixed:30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["runs"], 20);
    let o = run(s.path(), &["heatmap", "--model", "terrain.json", "--plan", "p.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("1.000000"));
    let o = run(
        s.path(),
        &[
            "compare", "--model", "terrain.json", "--task", "surveil(s1, s2)", "--return", "safe_return(true; bs)", "--runs",
            "10", "--csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(text.lines().count(), 3, "{}", text);
}

#[test]
fn automaton_command_round_trips_hoa() {
    let s = Scratch::new("hoa");
    let o = run(s.path(), &["automaton", "--template", "seq(a, b)", "-o", "seq.hoa"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(s.path(), &["automaton", "--hoa", "seq.hoa"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(o.stdout, std::fs::read(s.path().join("seq.hoa")).unwrap());
}

#[test]
fn plan_for_another_model_is_rejected() {
    let s = Scratch::new("mismatch");
    model(s.path(), "office", corpus::OFFICE, false);
    model(s.path(), "hardware", corpus::HARDWARE, false);
    let o = run(
        s.path(),
        &["plan", "--model", "hardware.json", "--task", "surveil(p1, p2)", "--return", "safe_return(true; bs)", "-o", "p.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(s.path(), &["simulate", "--model", "office.json", "--plan", "p.json", "--runs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR "));
}

#[test]
fn ltl_text_and_template_give_the_same_automaton() {
    let s = Scratch::new("ltl");
    let a = run(s.path(), &["automaton", "--template", "G F a & F G (b | c)"]);
    let b = run(s.path(), &["automaton", "--template", "surveil(a) && safe_return(true; b, c)"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let o = run(s.path(), &["automaton", "--template", "G a"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR UNSUPPORTED_TEMPLATE:"), "{}", stderr(&o));
}
