use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sspr_testkit::{Fixture, Mutant};
use tempfile::TempDir;

fn sspr(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sspr"))
        .args(args)
        .env("SSPR_WORKDIR", work)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn thresholds() -> Vec<String> {
    vec![
        "--min-passing-tests".into(),
        sspr_testkit::GOLDEN_MIN_PASSING.to_string(),
        "--min-changed-files".into(),
        sspr_testkit::GOLDEN_MIN_CHANGED_FILES.to_string(),
        "--min-failing-tests".into(),
        sspr_testkit::GOLDEN_MIN_FAILING.to_string(),
    ]
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Setup {
    fx: Fixture,
    dir: TempDir,
}

impl Setup {
    fn new() -> Self {
        Setup { fx: Fixture::calc().unwrap(), dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn work(&self) -> PathBuf {
        let w = self.path("work");
        fs::create_dir_all(&w).unwrap();
        w
    }

    fn validate(&self, artifact: &Path, extra: &[&str]) -> Output {
        let mut args = vec!["validate", "--repo", s(self.fx.root()), "--artifact", s(artifact)];
        let th = thresholds();
        args.extend(th.iter().map(String::as_str));
        args.extend_from_slice(extra);
        sspr(&self.work(), &args)
    }

    /// Validates the golden artifact and returns the instance path.
    fn instance(&self) -> PathBuf {
        let art = self.path("golden");
        self.fx.golden().unwrap().write(&art).unwrap();
        let inst = self.path("instance.json");
        let report = self.path("report.json");
        let out = self.validate(&art, &["--out", s(&report), "--instance", s(&inst)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        inst
    }
}

#[test]
fn validate_exit_codes() {
    let st = Setup::new();
    let inst = st.instance();
    assert!(inst.exists());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(st.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "valid");

    let art = st.path("mutant");
    st.fx.mutant(Mutant::InertBug).unwrap().write(&art).unwrap();
    let out = st.validate(&art, &["--out", s(&st.path("m.json"))]);
    assert_eq!(code(&out), 2);

    let not_repo = st.path("nowhere");
    fs::create_dir_all(&not_repo).unwrap();
    let out = sspr(
        &st.work(),
        &["validate", "--repo", s(&not_repo), "--artifact", s(&st.path("golden")), "--out", s(&st.path("x.json"))],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn eval_grades_predictions() {
    let st = Setup::new();
    let inst = st.instance();
    let instance = sspr_core::BugInstance::load(&inst).unwrap();
    let cases = [
        ("oracle", instance.oracle_fix().unwrap(), 0),
        ("empty", String::new(), 1),
        ("tamper", st.fx.tamper_patch().unwrap(), 1),
    ];
    for (name, patch, want) in cases {
        let pred = st.path(&format!("{name}.diff"));
        fs::write(&pred, patch).unwrap();
        let outcome = st.path(&format!("{name}.json"));
        let out = sspr(
            &st.work(),
            &["eval", "--repo", s(st.fx.root()), "--instance", s(&inst), "--prediction", s(&pred), "--out", s(&outcome)],
        );
        assert_eq!(code(&out), want, "{name}: {}", String::from_utf8_lossy(&out.stdout));
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&outcome).unwrap()).unwrap();
        assert_eq!(v["reward"], if want == 0 { 1 } else { -1 }, "{name}");
    }
}

#[test]
fn build_writes_task() {
    let st = Setup::new();
    let inst = st.instance();
    let out_dir = st.path("task");
    let out = sspr(&st.work(), &["build", "--repo", s(st.fx.root()), "--instance", s(&inst), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let spec = fs::read_to_string(out_dir.join("task/spec.diff")).unwrap();
    assert!(!spec.is_empty());
    assert!(out_dir.join("workspace").is_dir());
}

fn selfplay_config(st: &Setup, solver: &str) -> PathBuf {
    let art = st.path("golden");
    st.fx.golden().unwrap().write(&art).unwrap();
    let cfg = st.path("campaign.toml");
    fs::write(
        &cfg,
        format!(
            "sources = [{:?}]\nepisodes = 2\nseed = 11\ngroup_size = 4\n\
             min_passing_tests = {}\nmin_changed_files = {}\nmin_failing_tests = {}\n\
             [proposer]\nkind = \"replay\"\nartifacts = [\"golden\"]\n[solver]\n{solver}\n",
            s(st.fx.root()),
            sspr_testkit::GOLDEN_MIN_PASSING,
            sspr_testkit::GOLDEN_MIN_CHANGED_FILES,
            sspr_testkit::GOLDEN_MIN_FAILING,
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn selfplay_is_reproducible() {
    let st = Setup::new();
    let cfg = selfplay_config(&st, "kind = \"coinflip\"\np = 0.5");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = st.path(name);
        let out = sspr(&st.work(), &["selfplay", "--config", s(&cfg), "--out", s(&dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(fs::read(dir.join("episodes.jsonl")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs.pop().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["attempts"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn selfplay_rejects_bad_config() {
    let st = Setup::new();
    let cfg = selfplay_config(&st, "kind = \"command\"\nargv = []");
    let out = sspr(&st.work(), &["selfplay", "--config", s(&cfg), "--out", s(&st.path("o"))]);
    assert_eq!(code(&out), 2);
    let out = sspr(&st.work(), &["selfplay", "--config", s(&st.path("missing.toml"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn reward_curve_csv() {
    let st = Setup::new();
    let csv_path = st.path("curve.csv");
    let out = sspr(&st.work(), &["reward-curve", "--out", s(&csv_path), "--group-size", "8", "--alpha", "0.8"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with('#'));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap(), vec!["p", "R_eq1", "R_beta"]);
    let rows: Vec<(f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 1001);
    assert_eq!(rows[0].1, -0.8);
    assert_eq!(rows[1000].1, -0.8);
    let best = rows.iter().fold(rows[0], |m, r| if r.1 > m.1 { *r } else { m });
    assert!((0.1..=0.3).contains(&best.0), "argmax {}", best.0);

    let out = sspr(&st.work(), &["reward-curve", "--out", s(&csv_path), "--alpha", "1.5"]);
    assert_eq!(code(&out), 2);
}
