//! External policy client over TCP and child-process stdio.

use std::io::BufReader;
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use selfvla_core::orchestrator::{run_episode, EpisodeConfig};
use selfvla_core::policy::external::{ExternalPolicy, StdioTransport};
use selfvla_core::policy::wire::serve;
use selfvla_core::policy::{build_policy, Endpoint, Policy, PolicyContext, PolicyError, PolicySpec};
use selfvla_core::skill::SkillLibrary;
use selfvla_core::world::layout::test_config;
use selfvla_core::world::{init_world, observe};
use selfvla_core::{Action, Role, TaskId};

fn ctx(role: Role, task: TaskId) -> PolicyContext {
    PolicyContext {
        role,
        skill: SkillLibrary::shipped().for_task(task).unwrap().clone(),
        instruction: task.default_instruction(),
    }
}

/// Serve one in-process policy per accepted connection.
fn spawn_server(spec: PolicySpec, task: TaskId, connections: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming().take(connections) {
            let stream = stream.unwrap();
            stream.set_nodelay(true).unwrap();
            let mut policy = build_policy(&spec, &ctx(Role::Planner, task)).unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            let _ = serve(policy.as_mut(), reader, stream);
        }
    });
    addr
}

fn actions(planner: &mut dyn Policy, task: TaskId) -> (Vec<Action>, bool) {
    let lib = SkillLibrary::shipped();
    let mut corrector = build_policy(&PolicySpec::oracle(), &ctx(Role::Corrector, task)).unwrap();
    let world = init_world(&test_config(task, 2), 99).unwrap();
    let out = run_episode(
        planner,
        Some(corrector.as_mut()),
        &lib,
        world,
        &task.default_instruction(),
        &EpisodeConfig::default(),
    )
    .unwrap();
    (
        out.log.steps.iter().map(|s| s.action).collect(),
        out.result.final_success,
    )
}

#[test]
fn tcp_planner_matches_in_process() {
    let spec = PolicySpec::Oracle {
        noise_sigma_m: 0.002,
        early_stop_prob: 0.0,
        early_stop_distance_m: 0.03,
    };
    for task in TaskId::ALL {
        let addr = spawn_server(spec.clone(), task, 1);
        let mut remote = ExternalPolicy::connect(
            &Endpoint::Tcp(addr),
            Role::Planner,
            task.default_instruction().text(),
            Duration::from_secs(5),
        )
        .unwrap();
        let mut local = build_policy(&spec, &ctx(Role::Planner, task)).unwrap();
        let (a, ok_a) = actions(&mut remote, task);
        let (b, ok_b) = actions(local.as_mut(), task);
        assert!(ok_a && ok_b);
        assert_eq!(a, b);
    }
}

#[test]
fn tcp_connect_failure_is_unavailable() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let r = ExternalPolicy::connect(
        &Endpoint::Tcp(addr),
        Role::Planner,
        "remove the cpu",
        Duration::from_millis(200),
    );
    assert!(matches!(r, Err(PolicyError::Unavailable(_))));
}

fn sh(script: &str, timeout: Duration) -> ExternalPolicy {
    let argv = vec!["sh".to_owned(), "-c".to_owned(), script.to_owned()];
    ExternalPolicy::new(
        Box::new(StdioTransport::spawn(&argv).unwrap()),
        Role::Corrector,
        "pick up the ram",
        timeout,
    )
}

fn obs() -> selfvla_core::policy::EncodedObservation {
    let cfg = test_config(TaskId::RamRemoval, 0);
    let w = init_world(&cfg, 0).unwrap();
    selfvla_core::policy::encode_observation(&observe(&w), &cfg)
}

fn act(p: &mut ExternalPolicy) -> Result<Action, PolicyError> {
    let e = selfvla_core::policy::encode_instruction(&TaskId::RamRemoval.default_instruction());
    p.act(&obs(), &e, 0)
}

#[test]
fn stdio_skips_acks_and_reads_stop() {
    let script = r#"read reset; echo '{"ok":true}'; while read req; do echo '{"v":1,"delta_pos_m":[0,0,0],"delta_rot_aa":[0,0,0],"gripper":255}'; done"#;
    let mut p = sh(script, Duration::from_secs(5));
    p.reset(4).unwrap();
    assert!(act(&mut p).unwrap().is_stop());
    assert!(act(&mut p).unwrap().is_stop());
}

#[test]
fn stdio_request_carries_role_and_version() {
    // echo back a stop only when the request looks right
    let script = r#"while read req; do case "$req" in *'"v":1'*'"role":"corrector"'*) echo '{"v":1,"delta_pos_m":[0,0,0],"delta_rot_aa":[0,0,0],"gripper":255}';; *) echo '{"v":1,"error":"bad request"}';; esac; done"#;
    let mut p = sh(script, Duration::from_secs(5));
    assert!(act(&mut p).unwrap().is_stop());
}

#[test]
fn stdio_errors_map_to_policy_errors() {
    let mut p = sh(
        r#"while read req; do echo '{"v":1,"error":"no_target_visible"}'; done"#,
        Duration::from_secs(5),
    );
    assert_eq!(act(&mut p), Err(PolicyError::NoTargetVisible));

    let mut p = sh(
        r#"while read req; do echo '{"v":2,"delta_pos_m":[0,0,0],"delta_rot_aa":[0,0,0],"gripper":0}'; done"#,
        Duration::from_secs(5),
    );
    assert!(matches!(act(&mut p), Err(PolicyError::Protocol(_))));

    let mut p = sh("cat > /dev/null", Duration::from_millis(200));
    assert!(matches!(act(&mut p), Err(PolicyError::Unavailable(_))));

    let mut p = sh("exit 0", Duration::from_secs(5));
    assert!(matches!(act(&mut p), Err(PolicyError::Unavailable(_))));
}

#[test]
fn spec_builds_stdio_endpoint() {
    let spec = PolicySpec::External {
        tcp: None,
        command: Some(vec!["sh".into(), "-c".into(), "cat > /dev/null".into()]),
    };
    assert!(build_policy(&spec, &ctx(Role::Planner, TaskId::CpuExtraction)).is_ok());
    let both = PolicySpec::External {
        tcp: Some("127.0.0.1:1".into()),
        command: Some(vec!["sh".into()]),
    };
    assert!(matches!(both.validate(), Err(PolicyError::InvalidSpec(_))));
}
