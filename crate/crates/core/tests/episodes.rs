//! Closed-loop episodes through the public API.

use selfvla_core::episode::{label_phases, record, Phase};
use selfvla_core::harness::{aggregate, run_trials, HarnessConfig};
use selfvla_core::orchestrator::{
    run_episode, Deployment, DetectorConfig, EpisodeConfig, EpisodeOutput, EventKind, Termination,
};
use selfvla_core::policy::{build_policy, PolicyContext, PolicySpec};
use selfvla_core::skill::{Section, SkillLibrary, TrajectoryOrigin};
use selfvla_core::world::layout::test_config;
use selfvla_core::world::{init_world, schedule_fault, Fault};
use selfvla_core::{Role, TaskId};

fn episode(task: TaskId, planner: PolicySpec, faults: &[Fault], config: EpisodeConfig) -> EpisodeOutput {
    let lib = SkillLibrary::shipped();
    let ctx = |role| PolicyContext {
        role,
        skill: lib.for_task(task).unwrap().clone(),
        instruction: task.default_instruction(),
    };
    let mut p = build_policy(&planner, &ctx(Role::Planner)).unwrap();
    let mut c = build_policy(&PolicySpec::oracle(), &ctx(Role::Corrector)).unwrap();
    let mut w = init_world(&test_config(task, 4), 11).unwrap();
    for f in faults {
        w = schedule_fault(&w, *f).unwrap();
    }
    run_episode(
        p.as_mut(),
        Some(c.as_mut()),
        &lib,
        w,
        &task.default_instruction(),
        &config,
    )
    .unwrap()
}

fn with_corrections(n: u32) -> EpisodeConfig {
    EpisodeConfig {
        detector: DetectorConfig {
            max_corrections: n,
            ..DetectorConfig::default()
        },
        ..EpisodeConfig::default()
    }
}

#[test]
fn end_to_end_never_invokes_a_skill() {
    let config = EpisodeConfig {
        deployment: Deployment::EndToEnd,
        ..EpisodeConfig::default()
    };
    let spec = PolicySpec::EndToEnd {
        gate_success: 1.0,
        early_stop_prob: 0.0,
    };
    for task in TaskId::ALL {
        let out = episode(task, spec.clone(), &[], config);
        assert!(out.result.final_success, "{task:?}: {:?}", out.result);
        assert_eq!(out.log.count(|k| matches!(k, EventKind::SkillInvoked { .. })), 0);
        assert_eq!(out.log.count(|k| matches!(k, EventKind::CorrectorActivated { .. })), 0);
    }
}

#[test]
fn early_stop_fails_approach_without_invoking_extraction() {
    let out = episode(
        TaskId::CpuExtraction,
        PolicySpec::StopsEarly { distance_m: 0.03 },
        &[],
        EpisodeConfig::default(),
    );
    assert!(!out.result.approaching && !out.result.disassembly && !out.result.final_success);
}

#[test]
fn corrector_retries_within_one_activation() {
    let two = [Fault::GraspMiss, Fault::GraspMiss];
    let out = episode(TaskId::RamRemoval, PolicySpec::oracle(), &two, with_corrections(1));
    assert!(out.result.final_success && out.result.recovered, "{:?}", out.log.events);
    assert_eq!(out.result.corrections, 1);

    // one miss for the skill and three for the corrector's regrasps
    let four = [Fault::GraspMiss; 4];
    let out = episode(TaskId::RamRemoval, PolicySpec::oracle(), &four, with_corrections(2));
    assert_eq!(out.result.termination, Some(Termination::Aborted));
    assert!(!out.result.final_success);
}

#[test]
fn resumption_is_placement_only() {
    let out = episode(
        TaskId::CpuExtraction,
        PolicySpec::oracle(),
        &[Fault::GraspMiss],
        with_corrections(2),
    );
    let events = &out.log.events;
    let first = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::CorrectorActivated { .. }))
        .expect("corrector ran");
    let after = &events[first..];
    assert!(after.iter().all(|e| !matches!(
        e.kind,
        EventKind::WaypointReached {
            section: Section::Extraction,
            ..
        }
    )));
    assert!(after.iter().any(|e| matches!(
        e.kind,
        EventKind::SkillResumed {
            origin: TrajectoryOrigin::PlacementOnly,
            ..
        }
    )));
    assert!(after.iter().any(|e| matches!(
        e.kind,
        EventKind::WaypointReached {
            section: Section::Placement,
            ..
        }
    )));

    let labeled = label_phases(record(&out)).unwrap();
    let phases: Vec<Phase> = labeled.spans.iter().map(|s| s.phase).collect();
    assert_eq!(
        phases,
        [
            Phase::Approaching,
            Phase::SkillExecution,
            Phase::Correction,
            Phase::SkillResumption
        ]
    );
}

#[test]
fn matrix_to_report() {
    let cfg = HarnessConfig::from_toml(
        r#"
master_seed = 5
trials = 10
[[cell]]
label = "cpu"
task = "cpu_extraction"
deployment = "self_vla"
faults = { grasp_miss_prob = 1.0 }
detector = { max_corrections = 1 }
"#,
    )
    .unwrap();
    let outcomes = run_trials(&cfg, &SkillLibrary::shipped()).unwrap();
    let report = aggregate(&outcomes).unwrap();
    let cell = report.cell("cpu").unwrap();
    assert_eq!(cell.trials, 10);
    assert_eq!(cell.recovered, 10);
    assert_eq!(cell.final_rate(), 1.0);
}
