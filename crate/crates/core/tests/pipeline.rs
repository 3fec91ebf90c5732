mod common;

use std::fs;
use std::time::Duration;

use common::{golden_config, golden_instance, pool, source};
use sspr_core::builder::{build_solver_task, derive_higher_order, BuildError};
use sspr_core::diff::{compose, reverse_diff};
use sspr_core::evaluator::{evaluate, evaluate_in, FailureKind};
use sspr_core::runner::TestHarness;
use sspr_core::sandbox::{self, git, WorkspaceProvider};
use sspr_core::{BugOrder, RunLimits};
use sspr_testkit::Fixture;

fn limits() -> RunLimits {
    golden_config().limits
}

#[test]
fn oracle_fix_succeeds_and_empty_fix_fails() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let inst = golden_instance(&fx, &pool);
        let src = source(&fx);
        let oracle = reverse_diff(&inst.artifact.bug_inject_patch).unwrap();
        let good = evaluate(&inst, &src, &pool, &oracle, &limits());
        assert!(good.success, "{good:?}");
        assert_eq!(good.reward, 1);
        assert_eq!(good.failure_kind, FailureKind::None);
        assert_eq!(good.counts.f2p_passed, inst.fail_to_pass.len());

        let empty = evaluate(&inst, &src, &pool, "", &limits());
        assert_eq!(empty.reward, -1);
        assert_eq!(empty.failure_kind, FailureKind::TestsFailed);
        assert_eq!(empty.counts.f2p_passed, 0);
        assert_eq!(empty.exit_code(), 1);
    }
}

#[test]
fn test_tampering_is_undone_by_restoration() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let inst = golden_instance(&fx, &pool);
        let src = source(&fx);
        let tamper = fx.tamper_patch().unwrap();
        let mut ws = pool.clone_workspace(&src).unwrap();
        let outcome = evaluate_in(&inst, &mut ws, &tamper, &limits());
        assert_eq!(outcome.reward, -1);
        assert_eq!(outcome.failure_kind, FailureKind::TestsFailed);
        for f in &inst.artifact.test_files {
            assert_eq!(fs::read(ws.root().join(f)).unwrap(), fs::read(src.root().join(f)).unwrap(), "{f}");
        }
        let empty = evaluate(&inst, &src, &pool, "", &limits());
        assert_eq!(outcome, empty);
    }
}

#[test]
fn non_applying_prediction_is_a_patch_conflict() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let inst = golden_instance(&fx, &pool);
    // Reversing the bug twice cannot apply.
    let oracle = reverse_diff(&inst.artifact.bug_inject_patch).unwrap();
    let doubled = compose(&[&oracle, &oracle]);
    let o = evaluate(&inst, &source(&fx), &pool, &doubled, &limits());
    assert_eq!(o.failure_kind, FailureKind::PatchConflict);
    assert_eq!(o.reward, -1);
    let o = evaluate(&inst, &source(&fx), &pool, "garbage\n", &limits());
    assert_eq!(o.failure_kind, FailureKind::PatchConflict);
}

#[test]
fn hanging_tests_time_out() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let mut inst = golden_instance(&fx, &pool);
    inst.artifact.test_script.push_str("sleep 30\n");
    let quick = RunLimits {
        test_timeout: Duration::from_millis(500),
        ..limits()
    };
    let o = evaluate(&inst, &source(&fx), &pool, "", &quick);
    assert_eq!(o.failure_kind, FailureKind::ScriptTimeout);
    assert_eq!(o.reward, -1);
}

#[test]
fn evaluation_is_deterministic() {
    let fx = Fixture::inventory().unwrap();
    let (_d, pool) = pool();
    let inst = golden_instance(&fx, &pool);
    let src = source(&fx);
    let fix = reverse_diff(&inst.artifact.bug_inject_patch).unwrap();
    assert_eq!(
        evaluate(&inst, &src, &pool, &fix, &limits()),
        evaluate(&inst, &src, &pool, &fix, &limits())
    );
}

#[test]
fn built_workspace_is_leak_free_and_spec_restores_tests() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let inst = golden_instance(&fx, &pool);
        let src = source(&fx);
        let task = build_solver_task(&inst, &src, &pool).unwrap();
        let ws = &task.workspace;
        assert_eq!(git::commit_count(ws).unwrap(), 1);
        assert!(git::list_tags(ws).unwrap().is_empty());
        let objects = git::all_objects(ws).unwrap();
        for path in inst.artifact.bug_paths().unwrap() {
            let pristine = fs::read(src.root().join(&path)).unwrap();
            let blob = git::hash_object(ws.root(), &pristine).unwrap();
            assert!(!objects.contains(&blob), "pre-bug {path} reachable");
        }

        sandbox::apply_patch(ws, &task.spec_patch, false).unwrap();
        for f in &inst.artifact.test_files {
            assert_eq!(fs::read(ws.root().join(f)).unwrap(), fs::read(src.root().join(f)).unwrap());
        }
        let run = TestHarness::new(&inst.artifact, limits()).unwrap().run(ws).unwrap();
        for t in &inst.fail_to_pass {
            assert!(!run.statuses.is_passed(t), "{t} should fail on the built task");
        }
    }
}

#[test]
fn materialized_task_has_the_documented_layout() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let inst = golden_instance(&fx, &pool);
    let task = build_solver_task(&inst, &source(&fx), &pool).unwrap();
    let out = tempfile::tempdir().unwrap();
    task.materialize(out.path()).unwrap();
    assert!(out.path().join("workspace/.git").is_dir());
    assert_eq!(
        fs::read_to_string(out.path().join("task/spec.diff")).unwrap(),
        task.spec_patch
    );
    let back = sspr_core::BugInstance::load(&out.path().join("task/instance.json")).unwrap();
    assert_eq!(back, inst);
    let prompt = fs::read_to_string(out.path().join("task/prompt.md")).unwrap();
    assert!(prompt.contains(task.spec_patch.lines().nth(2).unwrap()));
}

#[test]
fn order_two_task_composes_parent_and_failed_patch() {
    let (_d, pool) = pool();
    for fx in Fixture::all().unwrap() {
        let inst = golden_instance(&fx, &pool);
        let src = source(&fx);
        let failed = fx.failed_patch_breaking_more().unwrap();
        let first_try = evaluate(&inst, &src, &pool, &failed, &limits());
        assert!(!first_try.success);

        let derived = derive_higher_order(&inst, &src, &pool, &failed, &golden_config()).unwrap();
        assert_eq!(derived.artifact.order, BugOrder::Second);
        assert_eq!(derived.fail_to_pass, inst.fail_to_pass);
        assert_eq!(derived.pass_to_pass, inst.pass_to_pass);

        // Tree equals source + bug + weaken + failed patch, applied by hand.
        let task = build_solver_task(&derived, &src, &pool).unwrap();
        let manual = pool.clone_workspace(&src).unwrap();
        for (patch, name) in [
            (&inst.artifact.bug_inject_patch, "bug"),
            (&inst.artifact.test_weaken_patch, "weaken"),
            (&failed, "failed"),
        ] {
            sandbox::apply_patch(&manual, patch, false).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert_eq!(task.workspace.tree_digest().unwrap(), manual.tree_digest().unwrap());

        let composed = derived.oracle_fix().unwrap();
        assert_eq!(
            composed,
            compose(&[&reverse_diff(&failed).unwrap(), &reverse_diff(&inst.artifact.bug_inject_patch).unwrap()])
        );
        let solved = evaluate(&derived, &src, &pool, &composed, &limits());
        assert!(solved.success, "{solved:?}");
        let partial = evaluate(
            &derived,
            &src,
            &pool,
            &reverse_diff(&inst.artifact.bug_inject_patch).unwrap(),
            &limits(),
        );
        assert_eq!(partial.reward, -1);
        assert!(partial.counts.p2p_passed < partial.counts.p2p_total);
    }
}

#[test]
fn higher_order_derivation_guards() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let inst = golden_instance(&fx, &pool);
    let src = source(&fx);
    let failed = fx.failed_patch_breaking_more().unwrap();
    let derived = derive_higher_order(&inst, &src, &pool, &failed, &golden_config()).unwrap();
    assert!(matches!(
        derive_higher_order(&derived, &src, &pool, &failed, &golden_config()),
        Err(BuildError::OrderLimit)
    ));
    assert!(matches!(
        derive_higher_order(&inst, &src, &pool, &fx.tamper_patch().unwrap(), &golden_config()),
        Err(BuildError::TouchesTests(_))
    ));
    let oracle = reverse_diff(&inst.artifact.bug_inject_patch).unwrap();
    assert!(matches!(
        derive_higher_order(&inst, &src, &pool, &oracle, &golden_config()),
        Err(BuildError::NotFailing { still_failing: 0, .. })
    ));
    assert!(matches!(
        derive_higher_order(&inst, &src, &pool, "", &golden_config()),
        Err(BuildError::EmptyPatch)
    ));
    let stale = compose(&[&oracle, &oracle]);
    assert!(matches!(
        derive_higher_order(&inst, &src, &pool, &stale, &golden_config()),
        Err(BuildError::FailedPatchConflict(_))
    ));
}

#[test]
fn order_two_artifact_survives_save_and_load() {
    let fx = Fixture::calc().unwrap();
    let (_d, pool) = pool();
    let inst = golden_instance(&fx, &pool);
    let failed = fx.failed_patch_breaking_more().unwrap();
    let derived = derive_higher_order(&inst, &source(&fx), &pool, &failed, &golden_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    derived.artifact.save(dir.path()).unwrap();
    let back = sspr_core::BugArtifact::load(dir.path()).unwrap();
    assert_eq!(back, derived.artifact);
    assert_eq!(back.parent_pred_patch.as_deref(), Some(failed.as_str()));
}
