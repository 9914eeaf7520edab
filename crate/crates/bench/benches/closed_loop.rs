use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use selfvla_core::orchestrator::{run_episode, EpisodeConfig};
use selfvla_core::policy::{build_policy, PolicyContext, PolicySpec};
use selfvla_core::skill::blend::blend;
use selfvla_core::skill::{resolve, SkillLibrary};
use selfvla_core::world::layout::test_config;
use selfvla_core::world::{init_world, BASE_DT};
use selfvla_core::{Action, GripperCommand, Role, TaskId};

fn world_step(c: &mut Criterion) {
    let w = init_world(&test_config(TaskId::CpuExtraction, 0), 0).unwrap();
    let a = Action::hold(GripperCommand::OPEN);
    c.bench_function("world_step", |b| b.iter(|| black_box(w.clone()).step(&a, BASE_DT)));
}

fn blend_cpu_skill(c: &mut Criterion) {
    let lib = SkillLibrary::shipped();
    let skill = lib.for_task(TaskId::CpuExtraction).unwrap();
    let trigger = test_config(TaskId::CpuExtraction, 0).pregrasp_pose();
    let traj = resolve(skill, &trigger);
    c.bench_function("blend_cpu_skill", |b| b.iter(|| blend(black_box(&traj))));
}

fn oracle_episode(c: &mut Criterion) {
    let lib = SkillLibrary::shipped();
    let mut g = c.benchmark_group("oracle_episode");
    for task in TaskId::ALL {
        let ctx = |role| PolicyContext {
            role,
            skill: lib.for_task(task).unwrap().clone(),
            instruction: task.default_instruction(),
        };
        g.bench_function(task.as_str(), |b| {
            b.iter(|| {
                let mut p = build_policy(&PolicySpec::oracle(), &ctx(Role::Planner)).unwrap();
                let mut k = build_policy(&PolicySpec::oracle(), &ctx(Role::Corrector)).unwrap();
                let w = init_world(&test_config(task, 0), 1).unwrap();
                let config = EpisodeConfig::default();
                run_episode(
                    p.as_mut(),
                    Some(k.as_mut()),
                    &lib,
                    w,
                    &task.default_instruction(),
                    &config,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, world_step, blend_cpu_skill, oracle_episode);
criterion_main!(benches);
