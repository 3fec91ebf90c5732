mod common;

use std::collections::BTreeSet;

use common::{artifact, golden_config, pool, source};
use sspr_core::runner::TestHarness;
use sspr_core::sandbox::{self, ContainerProvider, WorkspaceProvider};
use sspr_core::validator::{inverse_mutation_check, validate, CheckName, CheckOutcome, ValidationReport, Verdict};
use sspr_testkit::{Fixture, Mutant};

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn assert_fails_exactly(report: &ValidationReport, target: usize) {
    for (i, c) in report.checks.iter().enumerate() {
        let expected = match (i + 1).cmp(&target) {
            std::cmp::Ordering::Less => CheckOutcome::Pass,
            std::cmp::Ordering::Equal => CheckOutcome::Fail,
            std::cmp::Ordering::Greater => CheckOutcome::Skipped,
        };
        assert_eq!(c.outcome, expected, "check {} ({}): {:?}", i + 1, c.name, report.checks);
    }
    assert_eq!(report.verdict, Verdict::Invalid);
    assert!(report.instance.is_none());
}

#[test]
fn golden_calc_is_valid_with_hand_traced_sets() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let report = validate(&artifact(&fx, &fx.golden().unwrap()), &source(&fx), &pool, &golden_config());
    assert_eq!(report.verdict, Verdict::Valid, "{:#?}", report.checks);
    assert_eq!(report.passed_count(), 7);
    let inst = report.instance.unwrap();
    // add(7, 0) and sign(0) are the only broken behaviours.
    assert_eq!(inst.fail_to_pass, set(&["arith_add_zero", "fmt_sign_zero"]));
    assert_eq!(
        inst.pass_to_pass,
        set(&["arith_add_small", "arith_mul", "arith_sub", "fmt_pad", "fmt_sign_neg", "fmt_sign_pos"])
    );
    assert_eq!(report.contributions.len(), 2);
    assert!(report.contributions.values().all(|c| *c));
    assert_eq!(inst.base_ref, source(&fx).head().unwrap().unwrap());
}

#[test]
fn golden_inventory_is_valid_with_hand_traced_sets() {
    let fx = Fixture::inventory().unwrap();
    let (_d, pool) = pool();
    let report = validate(&artifact(&fx, &fx.golden().unwrap()), &source(&fx), &pool, &golden_config());
    assert_eq!(report.verdict, Verdict::Valid, "{:#?}", report.checks);
    let inst = report.instance.unwrap();
    assert_eq!(inst.fail_to_pass, set(&["price_discount", "stock_take_all"]));
    assert_eq!(inst.pass_to_pass.len(), 5);
}

#[test]
fn each_mutant_fails_only_its_target_check() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let src = source(&fx);
        for m in Mutant::ALL {
            let report = validate(&artifact(&fx, &fx.mutant(m).unwrap()), &src, &pool, &golden_config());
            assert_fails_exactly(&report, m.target_check());
        }
    }
}

#[test]
fn uncovered_weaken_names_the_file() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let report = validate(
        &artifact(&fx, &fx.mutant(Mutant::UncoveredWeaken).unwrap()),
        &source(&fx),
        &pool,
        &golden_config(),
    );
    let c = report.check(CheckName::FilesExistAndCover);
    assert!(c.detail.contains("tests/test_fmt.sh"), "{}", c.detail);
}

#[test]
fn listed_test_file_missing_from_repo_fails_check_one() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let mut a = artifact(&fx, &fx.golden().unwrap());
    a.test_files.push("tests/test_ghost.sh".into());
    let report = validate(&a, &source(&fx), &pool, &golden_config());
    assert_fails_exactly(&report, 1);
}

#[test]
fn bug_touching_a_test_file_fails_scope() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let mut a = artifact(&fx, &fx.golden().unwrap());
    a.bug_inject_patch = fx.diff(&[], &[fx.spec.bug[0], fx.spec.inert_test[0]]).unwrap();
    let report = validate(&a, &source(&fx), &pool, &golden_config());
    assert_fails_exactly(&report, 4);
    assert!(report.check(CheckName::BugScope).detail.contains("test"));
}

#[test]
fn flaky_test_is_reported_as_nondeterministic() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let mut a = artifact(&fx, &fx.golden().unwrap());
    a.test_script.push_str("if [ -e .seen ]; then echo 'FAIL flaky'; else touch .seen; echo 'PASS flaky'; fi\n");
    let report = validate(&a, &source(&fx), &pool, &golden_config());
    assert_fails_exactly(&report, 3);
    let detail = &report.check(CheckName::ScriptValid).detail;
    assert!(detail.contains("nondeterministic test") && detail.contains("flaky"), "{detail}");
}

#[test]
fn too_few_passing_tests_fails_script_validity() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let config = sspr_core::ValidationConfig {
        min_passing_tests: 100,
        ..golden_config()
    };
    let report = validate(&artifact(&fx, &fx.golden().unwrap()), &source(&fx), &pool, &config);
    assert_fails_exactly(&report, 3);
}

#[test]
fn validation_is_deterministic() {
    let fx = Fixture::inventory().unwrap();
    let (_d, pool) = pool();
    let a = artifact(&fx, &fx.golden().unwrap());
    let src = source(&fx);
    let first = validate(&a, &src, &pool, &golden_config());
    let second = validate(&a, &src, &pool, &golden_config());
    assert_eq!(first, second);
    let m = artifact(&fx, &fx.mutant(Mutant::InertWeaken).unwrap());
    assert_eq!(
        validate(&m, &src, &pool, &golden_config()),
        validate(&m, &src, &pool, &golden_config())
    );
}

#[test]
fn reverting_all_bug_files_fixes_every_fail_to_pass_test() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let src = source(&fx);
        let report = validate(&artifact(&fx, &fx.golden().unwrap()), &src, &pool, &golden_config());
        let inst = report.instance.expect("golden is valid");
        let ws = pool.clone_workspace(&src).unwrap();
        sandbox::apply_patch(&ws, &inst.artifact.bug_inject_patch, false).unwrap();
        sandbox::apply_patch(&ws, &inst.artifact.bug_inject_patch, true).unwrap();
        let harness = TestHarness::new(&inst.artifact, golden_config().limits).unwrap();
        let run = harness.run(&ws).unwrap();
        for t in &inst.fail_to_pass {
            assert!(run.statuses.is_passed(t), "{t}");
        }
    }
}

#[test]
fn standalone_inverse_mutation_reports_per_file() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let src = source(&fx);
    let failing = set(&["arith_add_zero", "fmt_sign_zero"]);

    let golden = artifact(&fx, &fx.golden().unwrap());
    let map = inverse_mutation_check(&golden, &src, &pool, &failing, &golden_config()).unwrap();
    assert_eq!(map.len(), 2);
    assert!(map.values().all(|c| *c));

    let idle = artifact(&fx, &fx.mutant(Mutant::IdleBugFile).unwrap());
    let map = inverse_mutation_check(&idle, &src, &pool, &set(&["arith_add_zero"]), &golden_config()).unwrap();
    assert_eq!(map.get("src/arith.sh"), Some(&true));
    assert_eq!(map.get("src/fmt.sh"), Some(&false));

    let single = artifact(&fx, &fx.idle_file_removed().unwrap());
    let map = inverse_mutation_check(&single, &src, &pool, &set(&["arith_add_zero"]), &golden_config()).unwrap();
    assert_eq!(map.len(), 1);
    assert!(map["src/arith.sh"]);
}

#[test]
fn infrastructure_faults_are_system_errors() {
    let fx = Fixture::calc().unwrap();
    let stub = ContainerProvider {
        image: "unused".into(),
    };
    let report = validate(&artifact(&fx, &fx.golden().unwrap()), &source(&fx), &stub, &golden_config());
    assert_eq!(report.verdict, Verdict::SystemError);
    assert_eq!(report.verdict.exit_code(), 3);
    assert!(report.error.is_some());
    assert!(report.instance.is_none());
    assert!(report.checks.iter().all(|c| c.outcome != CheckOutcome::Fail));
}

#[test]
fn report_round_trips_through_json() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let report = validate(&artifact(&fx, &fx.golden().unwrap()), &source(&fx), &pool, &golden_config());
    let json = serde_json::to_string(&report).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["verdict"], "valid");
    assert_eq!(v["checks"][6]["name"], "inverse_mutation");
    let back: ValidationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
