//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs entirely in process except the determinism check, which
//! drives the `selfvla` binary.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfvla_core::episode::{build_splits, label_phases, stop_tail_len, STOP_FRAMES};
use selfvla_core::harness::{generate_demos, run_trials_with, DemoConfig, HarnessConfig, TrialRun, TrialSpec};
use selfvla_core::orchestrator::EventKind;
use selfvla_core::skill::{Section, SkillLibrary, TrajectoryOrigin};
use selfvla_core::testing::{check_blend_containment, check_resolve_equivariance, random_pose, random_skill};
use selfvla_core::world::{Fault, BASE_RATE_HZ};
use selfvla_core::TaskId;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn matrix(text: &str) -> HarnessConfig {
    HarnessConfig::from_toml(text).expect("acceptance matrix is valid")
}

fn rate(n: usize, of: usize) -> f64 {
    n as f64 / of as f64
}

/// Trials with their audit facts; see [`Audit`].
fn run_audited(cfg: &HarnessConfig, lib: &SkillLibrary) -> Vec<Audit> {
    run_trials_with(cfg, lib, |s, r| Audit::of(s, &r)).expect("trials run")
}

struct Audit {
    cell: usize,
    final_success: bool,
    faults: Vec<Fault>,
    activations: usize,
    /// Extraction waypoints reached after the first corrector activation.
    extraction_after_correction: usize,
    resumed_full: usize,
    /// Ticks from an injected slip to the drop detection.
    slip_latency: Option<u64>,
}

impl Audit {
    fn of(spec: &TrialSpec, r: &TrialRun) -> Self {
        let events = &r.output.log.events;
        let first_activation = events
            .iter()
            .position(|e| matches!(e.kind, EventKind::CorrectorActivated { .. }));
        let after = first_activation.map_or(&events[..0], |i| &events[i..]);
        let extraction_after_correction = after
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::WaypointReached {
                        section: Section::Extraction,
                        ..
                    }
                )
            })
            .count();
        let resumed_full = after
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::SkillResumed {
                        origin: TrajectoryOrigin::Full,
                        ..
                    }
                )
            })
            .count();
        let slip = r.outcome.faults.iter().find_map(|f| match f {
            Fault::GraspSlip { tick } => Some(*tick),
            _ => None,
        });
        let slip_latency = slip.and_then(|t| {
            events.iter().find_map(|e| match e.kind {
                EventKind::DropDetected { .. } if e.tick >= t => Some(e.tick - t),
                _ => None,
            })
        });
        Audit {
            cell: spec.cell,
            final_success: r.outcome.result.final_success,
            faults: r.outcome.faults.clone(),
            activations: after
                .iter()
                .filter(|e| matches!(e.kind, EventKind::CorrectorActivated { .. }))
                .count(),
            extraction_after_correction,
            resumed_full,
            slip_latency,
        }
    }
}

fn cell_rate(audits: &[Audit], cell: usize) -> (usize, usize) {
    let c: Vec<&Audit> = audits.iter().filter(|a| a.cell == cell).collect();
    (c.iter().filter(|a| a.final_success).count(), c.len())
}

fn oracle_no_faults(lib: &SkillLibrary) -> Verdict {
    let start = Instant::now();
    let cfg = matrix(
        r#"
master_seed = 1
trials = 20
[[cell]]
label = "cpu"
task = "cpu_extraction"
deployment = "self_vla"
[[cell]]
label = "ram"
task = "ram_removal"
deployment = "self_vla"
"#,
    );
    let a = run_audited(&cfg, lib);
    let (cpu, n_cpu) = cell_rate(&a, 0);
    let (ram, n_ram) = cell_rate(&a, 1);
    let elapsed = start.elapsed();
    verdict(
        cpu == 20 && n_cpu == 20 && ram == 20 && n_ram == 20,
        format!("CPU {cpu}/{n_cpu}, RAM {ram}/{n_ram} final over 5 test placements in {elapsed:.2?}"),
    )
}

const RECOVERY: &str = r#"
master_seed = 2
trials = 400
[[cell]]
label = "cpu-corrector"
task = "cpu_extraction"
deployment = "self_vla"
faults = { grasp_miss_prob = 0.5 }
detector = { max_corrections = 2 }
[[cell]]
label = "ram-corrector"
task = "ram_removal"
deployment = "self_vla"
faults = { grasp_miss_prob = 0.5 }
detector = { max_corrections = 2 }
[[cell]]
label = "cpu-no-corrector"
task = "cpu_extraction"
deployment = "self_vla"
faults = { grasp_miss_prob = 0.5 }
detector = { max_corrections = 0 }
[[cell]]
label = "ram-no-corrector"
task = "ram_removal"
deployment = "self_vla"
faults = { grasp_miss_prob = 0.5 }
detector = { max_corrections = 0 }
"#;

fn recovery_uplift(a: &[Audit]) -> Verdict {
    let sigma = (0.25f64 / 400.0).sqrt();
    let mut pass = true;
    let mut parts = Vec::new();
    for (cell, name) in [(0, "CPU"), (1, "RAM")] {
        let (k, n) = cell_rate(a, cell);
        pass &= n == 400 && rate(k, n) >= 0.95;
        parts.push(format!("{name} corrected {k}/{n}"));
    }
    for (cell, name) in [(2, "CPU"), (3, "RAM")] {
        let (k, n) = cell_rate(a, cell);
        let z = (rate(k, n) - 0.5) / sigma;
        pass &= n == 400 && z.abs() <= 3.0;
        parts.push(format!("{name} uncorrected {k}/{n} (z = {z:+.2})"));
    }
    verdict(pass, parts.join(", "))
}

fn skill_fidelity(lib: &SkillLibrary) -> Verdict {
    let counts = [TaskId::CpuExtraction, TaskId::RamRemoval].map(|t| lib.for_task(t).map(|s| s.waypoint_count()));
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let skill = random_skill(&mut rng);
        let trigger = random_pose(&mut rng, 0.3);
        let g = random_pose(&mut rng, 0.3);
        for r in [
            skill.validate().map_err(|e| e.to_string()),
            check_resolve_equivariance(&skill, &trigger, &g),
            check_blend_containment(&skill, &trigger),
        ] {
            if let Err(e) = r {
                failures.push(format!("skill {i}: {e}"));
            }
        }
    }
    verdict(
        counts == [Some(23), Some(8)] && failures.is_empty(),
        format!(
            "waypoints CPU {:?} RAM {:?}; 1000 random skills, {} property failures{}",
            counts[0],
            counts[1],
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

const SLIPS: &str = r#"
master_seed = 4
trials = 100
[[cell]]
label = "cpu-slip"
task = "cpu_extraction"
deployment = "self_vla"
faults = { grasp_slip_prob = 1.0 }
[[cell]]
label = "ram-slip"
task = "ram_removal"
deployment = "self_vla"
faults = { grasp_slip_prob = 1.0 }
"#;

fn detector_timing(a: &[Audit]) -> Verdict {
    let limit = u64::from(BASE_RATE_HZ) * 20 / 1000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (cell, name) in [(0, "CPU"), (1, "RAM")] {
        let c: Vec<&Audit> = a.iter().filter(|x| x.cell == cell).collect();
        let injected = c
            .iter()
            .filter(|x| x.faults.iter().any(|f| matches!(f, Fault::GraspSlip { .. })))
            .count();
        let flagged = c.iter().filter(|x| x.slip_latency.is_some_and(|l| l <= limit)).count();
        let worst = c.iter().filter_map(|x| x.slip_latency).max();
        pass &= injected == 100 && flagged == 100;
        parts.push(format!(
            "{name} {flagged}/{injected} flagged within {limit} ticks (worst {})",
            worst.map_or("none".into(), |w| format!(
                "{w} ticks = {:.1} ms",
                w as f64 * 1000.0 / f64::from(BASE_RATE_HZ)
            ))
        ));
    }
    verdict(pass, parts.join(", "))
}

fn resume_semantics(groups: &[&[Audit]]) -> Verdict {
    let faulted: Vec<&Audit> = groups
        .iter()
        .flat_map(|g| g.iter())
        .filter(|a| !a.faults.is_empty())
        .collect();
    let corrected = faulted.iter().filter(|a| a.activations > 0).count();
    let bad = faulted
        .iter()
        .filter(|a| a.extraction_after_correction > 0 || a.resumed_full > 0)
        .count();
    verdict(
        bad == 0 && corrected > 0,
        format!(
            "{} fault-injected trials, {corrected} with corrections, {bad} with extraction setpoints after a correction",
            faulted.len()
        ),
    )
}

fn dataset_pipeline(lib: &SkillLibrary) -> Verdict {
    let mut labeled = Vec::new();
    for task in TaskId::ALL {
        let demos = match generate_demos(&DemoConfig::new(task, 264, 6), lib) {
            Ok(d) => d,
            Err(e) => return verdict(false, format!("demo generation failed: {e}")),
        };
        for d in demos {
            match label_phases(d) {
                Ok(l) => labeled.push(l),
                Err(e) => return verdict(false, format!("labeling failed: {e}")),
            }
        }
    }
    let corrected = labeled.iter().filter(|l| l.episode.outcome.corrections > 0).count();
    let splits = match build_splits(&labeled) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("split failed: {e}")),
    };
    let e2e = &splits.end_to_end;
    let e2e_stops: usize = e2e
        .trajectories
        .iter()
        .map(|t| t.frames.iter().filter(|f| f.is_stop()).count())
        .sum();
    let triples = |s: &selfvla_core::episode::DatasetSplit| {
        s.trajectories.iter().all(|t| {
            stop_tail_len(&t.frames) == STOP_FRAMES && t.frames.iter().filter(|f| f.is_stop()).count() == STOP_FRAMES
        })
    };
    let ok_triples = triples(&splits.planner) && triples(&splits.corrector);

    let down = splits.downsample(3).expect("factor 3");
    let mut worst: f64 = 0.0;
    let mut kept_triples = true;
    for (a, b) in [(&splits.planner, &down.planner), (&splits.corrector, &down.corrector)] {
        kept_triples &= triples(b);
        for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
            let body = (x.frames.len() - STOP_FRAMES) as f64;
            let got = (y.frames.len() - STOP_FRAMES) as f64;
            worst = worst.max((got - body / 3.0).abs());
        }
    }
    verdict(
        e2e.len() == 528 && e2e_stops == 0 && ok_triples && kept_triples && worst <= 1.0,
        format!(
            "end_to_end {} trajectories with {e2e_stops} stop frames; planner {} and corrector {} trajectories \
             ({corrected} demos with corrections) end in {STOP_FRAMES} stop frames: {ok_triples}; \
             10 Hz keeps triples: {kept_triples}, worst count error {worst:.2} frames",
            e2e.len(),
            splits.planner.len(),
            splits.corrector.len()
        ),
    )
}

fn structural_comparison(lib: &SkillLibrary) -> Verdict {
    let cfg = matrix(
        r#"
master_seed = 7
trials = 200
[[cell]]
label = "cpu-self-vla"
task = "cpu_extraction"
deployment = "self_vla"
planner = { kind = "oracle", early_stop_prob = 0.2 }
[[cell]]
label = "cpu-end-to-end"
task = "cpu_extraction"
deployment = "end_to_end"
planner = { kind = "end_to_end", gate_success = 0.8, early_stop_prob = 0.2 }
"#,
    );
    let a = run_audited(&cfg, lib);
    let (s, n_s) = cell_rate(&a, 0);
    let (e, n_e) = cell_rate(&a, 1);
    let delta = 100.0 * (rate(s, n_s) - rate(e, n_e));
    verdict(
        n_s == 200 && n_e == 200 && delta >= 20.0,
        format!("SELF-VLA {s}/{n_s} vs end-to-end {e}/{n_e}: {delta:+.1} pp"),
    )
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_selfvla");
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("matrix.toml");
    fs::write(
        &config,
        r#"
master_seed = 8
trials = 6
[[cell]]
label = "cpu"
task = "cpu_extraction"
deployment = "self_vla"
planner = { kind = "oracle", noise_sigma_m = 0.002, early_stop_prob = 0.2 }
faults = { grasp_miss_prob = 0.5, grasp_slip_prob = 0.5 }
[[cell]]
label = "ram-e2e"
task = "ram_removal"
deployment = "end_to_end"
planner = { kind = "end_to_end", gate_success = 0.8 }
"#,
    )
    .unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = Command::new(bin)
            .args(["run-trials", "--record", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env_remove("SELFVLA_SEED")
            .output()
            .unwrap();
        let demos = tmp.path().join(format!("{name}-demos.jsonl"));
        let gen = Command::new(bin)
            .args(["gen-demos", "--task", "ram_removal", "--n", "6", "--seed", "9", "--out"])
            .arg(&demos)
            .output()
            .unwrap();
        (
            status.status.success() && gen.status.success(),
            files_in(&out),
            fs::read(&demos).unwrap_or_default(),
        )
    };
    let (ok_a, files_a, demos_a) = run("a");
    let (ok_b, files_b, demos_b) = run("b");
    let names: Vec<&str> = files_a.iter().map(|(n, _)| n.as_str()).collect();
    let identical = files_a == files_b && demos_a == demos_b && !demos_a.is_empty();
    verdict(
        ok_a && ok_b && identical && names.contains(&"episodes.jsonl") && names.contains(&"report.md"),
        format!("two runs wrote {names:?} and demos; byte-identical: {identical}"),
    )
}

fn main() {
    let start = Instant::now();
    let lib = SkillLibrary::shipped();

    let recovery = run_audited(&matrix(RECOVERY), &lib);
    let slips = run_audited(&matrix(SLIPS), &lib);

    let results: Vec<(&str, Verdict)> = vec![
        ("oracle SELF-VLA without faults", oracle_no_faults(&lib)),
        ("recovery uplift from the corrector", recovery_uplift(&recovery)),
        ("skill fidelity", skill_fidelity(&lib)),
        ("slip detection within 20 ms", detector_timing(&slips)),
        ("resume skips extraction", resume_semantics(&[&recovery, &slips])),
        ("dataset pipeline", dataset_pipeline(&lib)),
        ("SELF-VLA beats end-to-end by 20 pp", structural_comparison(&lib)),
        ("deterministic CLI output", determinism()),
    ];
    let elapsed = start.elapsed();
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!(
            "{} [{}] {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    let in_time = elapsed < Duration::from_secs(60);
    println!(
        "{} suite runtime {elapsed:.2?} (limit 60 s)",
        if in_time { "PASS" } else { "FAIL" }
    );
    failed += usize::from(!in_time);
    println!("{} of {} checks passed", results.len() + 1 - failed, results.len() + 1);
    if failed > 0 {
        std::process::exit(1);
    }
}
