//! The planner → skill → corrector control loop.
//!
//! One control step queries the active controller (planner, skill tracker or
//! corrector) at 30 Hz and applies the action over ten 300 Hz simulator
//! ticks. The detectors run inside those ticks: the grasp check once, a
//! fixed settle time after the pick-up waypoint, and the drop monitor every
//! [`DetectorConfig::drop_monitor_period`] ticks during placement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Action, Instruction, Mode};
use crate::geometry::{pose_distance, Pose};
use crate::policy::{encode_instruction, encode_observation, query, Policy, PolicyError};
use crate::skill::{
    blend_from, controller_step, resolve, resolve_remaining, select_skill, BlendedPath, ControllerState, Section,
    SkillDefinition, SkillError, SkillLibrary, TrajectoryOrigin,
};
use crate::world::layout::{APPROACH_POS_TOL, APPROACH_ROT_TOL};
use crate::world::{
    check_stage, observe, Observation, WorldState, BASE_DT, BASE_RATE_HZ, CONTROL_DT, CONTROL_PERIOD_TICKS,
};

pub const DEFAULT_TIMEOUT_S: f64 = 120.0;

fn default_period() -> u32 {
    6
}
fn default_settle() -> f64 {
    0.3
}
fn default_max_corrections() -> u32 {
    2
}
fn default_pause() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Base-rate ticks between drop-monitor samples.
    #[serde(default = "default_period")]
    pub drop_monitor_period: u32,
    /// Delay after reaching the pick-up waypoint before the grasp check.
    #[serde(default = "default_settle")]
    pub pickup_settle_time: f64,
    /// `0` disables the corrector.
    #[serde(default = "default_max_corrections")]
    pub max_corrections: u32,
    /// Hold between a detection and the corrector taking over.
    #[serde(default = "default_pause")]
    pub recovery_pause_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            drop_monitor_period: default_period(),
            pickup_settle_time: default_settle(),
            max_corrections: default_max_corrections(),
            recovery_pause_s: default_pause(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.drop_monitor_period == 0 {
            return Err("drop_monitor_period must be positive".into());
        }
        let p = self.drop_monitor_period;
        if !CONTROL_PERIOD_TICKS.is_multiple_of(p)
            && !p.is_multiple_of(CONTROL_PERIOD_TICKS)
            && p > CONTROL_PERIOD_TICKS
        {
            return Err(format!(
                "drop_monitor_period {p} neither divides nor interleaves the control period"
            ));
        }
        if !(self.pickup_settle_time.is_finite() && self.pickup_settle_time >= 0.0) {
            return Err("pickup_settle_time must be non-negative".into());
        }
        if !(self.recovery_pause_s.is_finite() && self.recovery_pause_s >= 0.0) {
            return Err("recovery_pause_s must be non-negative".into());
        }
        Ok(())
    }

    pub fn settle_ticks(&self) -> u64 {
        (self.pickup_settle_time * f64::from(BASE_RATE_HZ)).round() as u64
    }

    pub fn pause_steps(&self) -> u64 {
        (self.recovery_pause_s / CONTROL_DT).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deployment {
    /// Planner, skill library and corrector.
    SelfVla,
    /// The planner policy drives the whole episode.
    EndToEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub deployment: Deployment,
    pub detector: DetectorConfig,
    pub timeout_s: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            deployment: Deployment::SelfVla,
            detector: DetectorConfig::default(),
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    Timeout,
    TrackingLost,
    Jammed,
    CorrectionsExhausted,
    /// The episode ended without placing the component for any other reason.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    StopTokenEmitted {
        mode: Mode,
    },
    SkillInvoked {
        skill: String,
        origin: TrajectoryOrigin,
    },
    WaypointReached {
        index: usize,
        section: Section,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    GraspFailureDetected {
        observed_width_m: f64,
        commanded_width_m: f64,
    },
    DropDetected {
        observed_width_m: f64,
        commanded_width_m: f64,
    },
    CorrectorActivated {
        corrections_used: u32,
    },
    SkillResumed {
        skill: String,
        origin: TrajectoryOrigin,
    },
    TrialEnd {
        termination: Termination,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One control step as executed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub mode: Mode,
    pub observation: Observation,
    pub action: Action,
    /// Recovery hold between a detection and the corrector; not training data.
    pub paused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub approaching: bool,
    pub disassembly: bool,
    #[serde(rename = "final")]
    pub final_success: bool,
    pub recovered: bool,
    pub termination: Option<Termination>,
    pub corrections: u32,
    pub ticks: u64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub events: Vec<Event>,
    /// Ticks at which the grasp check ran.
    pub grasp_checks: Vec<u64>,
    /// Ticks at which the drop monitor sampled.
    pub drop_checks: Vec<u64>,
}

impl EpisodeLog {
    fn push(&mut self, tick: u64, kind: EventKind) {
        self.events.push(Event { tick, kind });
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutput {
    pub result: EpisodeResult,
    pub log: EpisodeLog,
    pub world: WorldState,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("planner: {0}")]
    Planner(PolicyError),
    #[error("corrector: {0}")]
    Corrector(PolicyError),
    #[error("invalid detector config: {0}")]
    Config(String),
}

/// `g_t = g_stop`.
pub fn detect_stop(action: &Action) -> bool {
    action.gripper.is_stop()
}

/// Fingers closed to their command: nothing is between them.
pub fn detect_grasp_failure(obs: &Observation, skill: &SkillDefinition) -> bool {
    (obs.observed_width - obs.commanded_width).abs() < skill.failure_threshold
}

/// Same criterion as [`detect_grasp_failure`], sampled during placement.
pub fn monitor_drop(obs: &Observation, skill: &SkillDefinition) -> bool {
    detect_grasp_failure(obs, skill)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorState {
    pub mode: Mode,
    pub active_skill: Option<String>,
    pub path: Option<BlendedPath>,
    pub progress: ControllerState,
    pub extraction_completed: bool,
    pub pickup_checked: bool,
    pub corrections_used: u32,
    /// Tick at which the pending grasp check is due.
    pub pickup_check_at: Option<u64>,
}

impl OrchestratorState {
    pub fn initial() -> Self {
        Self {
            mode: Mode::Planner,
            active_skill: None,
            path: None,
            progress: ControllerState::default(),
            extraction_completed: false,
            pickup_checked: false,
            corrections_used: 0,
            pickup_check_at: None,
        }
    }

    /// Arc length from which the drop monitor is armed on the active path.
    fn placement_region_start(&self) -> Option<f64> {
        let path = self.path.as_ref()?;
        match path.origin {
            TrajectoryOrigin::PlacementOnly => Some(0.0),
            TrajectoryOrigin::Full => path.station_with_tag("PlacementStart").map(|(_, st)| st.s),
        }
    }

    fn monitor_armed(&self, skill: &SkillDefinition) -> bool {
        let (Some(path), Some(start)) = (self.path.as_ref(), self.placement_region_start()) else {
            return false;
        };
        let governing = &path.stations()[self.progress.governing_station()];
        let closed = governing
            .gripper
            .width_m()
            .is_some_and(|w| w < skill.expected_grasp_width);
        self.mode == Mode::Skill && self.extraction_completed && self.progress.progress >= start && closed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    StopToken,
    GraspFailure,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: OrchestratorState,
    pub events: Vec<EventKind>,
    pub end: Option<Termination>,
}

/// Mode-machine step for one signal. `tcp` anchors any newly resolved path.
pub fn transition(
    state: &OrchestratorState,
    signal: Signal,
    skill: &SkillDefinition,
    tcp: &Pose,
    detector: &DetectorConfig,
) -> Transition {
    let mut s = state.clone();
    let mut events = Vec::new();
    let mut end = None;
    match (state.mode, signal) {
        (Mode::Planner | Mode::Corrector, Signal::StopToken) => {
            events.push(EventKind::StopTokenEmitted { mode: state.mode });
            let traj = if state.extraction_completed {
                resolve_remaining(skill)
            } else {
                resolve(skill, tcp)
            };
            let origin = traj.origin;
            s.path = Some(blend_from(tcp, &traj));
            s.progress = ControllerState::default();
            s.active_skill = Some(skill.id.clone());
            s.mode = Mode::Skill;
            if origin == TrajectoryOrigin::Full {
                s.pickup_checked = false;
                s.pickup_check_at = None;
            }
            let skill = skill.id.clone();
            events.push(match state.mode {
                Mode::Corrector => EventKind::SkillResumed { skill, origin },
                _ => EventKind::SkillInvoked { skill, origin },
            });
        }
        (Mode::Skill, Signal::StopToken) => end = Some(Termination::Aborted),
        (Mode::Skill, Signal::GraspFailure | Signal::Drop) => {
            s.corrections_used += 1;
            if detector.max_corrections == 0 || s.corrections_used > detector.max_corrections {
                end = Some(Termination::CorrectionsExhausted);
            } else {
                s.mode = Mode::Corrector;
                s.path = None;
                events.push(EventKind::CorrectorActivated {
                    corrections_used: s.corrections_used,
                });
            }
        }
        // detectors only run during skill execution
        (_, Signal::GraspFailure | Signal::Drop) => {}
    }
    Transition { state: s, events, end }
}

fn within_approach(tcp: &Pose, pregrasp: &Pose) -> bool {
    let (dp, dr) = pose_distance(tcp, pregrasp);
    dp <= APPROACH_POS_TOL && dr <= APPROACH_ROT_TOL
}

fn per_tick(a: &Action) -> Action {
    Action::new(a.motion.scaled(1.0 / f64::from(CONTROL_PERIOD_TICKS)), a.gripper)
}

/// Run one episode to termination.
///
/// `corrector` may be `None` only when the corrector is disabled
/// (`max_corrections = 0`) or the deployment is end-to-end.
pub fn run_episode(
    planner: &mut dyn Policy,
    corrector: Option<&mut dyn Policy>,
    library: &SkillLibrary,
    world: WorldState,
    instruction: &Instruction,
    config: &EpisodeConfig,
) -> Result<EpisodeOutput, OrchestratorError> {
    config.detector.validate().map_err(OrchestratorError::Config)?;
    let e = encode_instruction(instruction);
    let skill = select_skill(&e, library)?;
    let seed = world.seed;
    planner
        .reset(crate::seed::derive(seed, &[1]))
        .map_err(OrchestratorError::Planner)?;
    match config.deployment {
        Deployment::SelfVla => run_self_vla(planner, corrector, skill, world, &e, config),
        Deployment::EndToEnd => run_end_to_end(planner, world, &e, config),
    }
}

fn timeout_ticks(config: &EpisodeConfig) -> u64 {
    (config.timeout_s * f64::from(BASE_RATE_HZ)).round() as u64
}

fn finish(world: WorldState, mut log: EpisodeLog, mut result: EpisodeResult, end: Termination) -> EpisodeOutput {
    log.push(world.tick, EventKind::TrialEnd { termination: end });
    result.termination = Some(end);
    result.ticks = world.tick;
    result.time_s = world.tick as f64 * BASE_DT;
    EpisodeOutput { result, log, world }
}

fn run_self_vla(
    planner: &mut dyn Policy,
    mut corrector: Option<&mut dyn Policy>,
    skill: &SkillDefinition,
    mut world: WorldState,
    e: &crate::policy::InstructionEmbedding,
    config: &EpisodeConfig,
) -> Result<EpisodeOutput, OrchestratorError> {
    let det = &config.detector;
    let limit = timeout_ticks(config);
    let cfg = world.config.clone();
    let pregrasp = cfg.pregrasp_pose();
    let mut st = OrchestratorState::initial();
    let mut log = EpisodeLog::default();
    let mut approaching = false;

    let stage_result = |world: &WorldState, approaching: bool, corrections: u32| {
        let flags = check_stage(world, &world.config);
        let disassembly = approaching && flags.disassembly_ok;
        let final_success = disassembly && flags.placed_ok;
        EpisodeResult {
            approaching,
            disassembly,
            final_success,
            recovered: final_success && corrections > 0,
            corrections,
            ..EpisodeResult::default()
        }
    };
    let end = |world: WorldState, log: EpisodeLog, approaching: bool, st: &OrchestratorState, t: Termination| {
        let r = stage_result(&world, approaching, st.corrections_used);
        finish(world, log, r, t)
    };

    while world.tick < limit {
        let obs = observe(&world);
        let z = encode_observation(&obs, &cfg);
        let tick = world.tick;
        let mode = st.mode;

        let mut skill_done = false;
        let action = match mode {
            Mode::Planner => query(planner, &z, e, tick).map_err(OrchestratorError::Planner)?,
            Mode::Corrector => {
                let c = corrector
                    .as_deref_mut()
                    .ok_or_else(|| OrchestratorError::Config("corrector required but not provided".into()))?;
                match query(c, &z, e, tick) {
                    Ok(a) => a,
                    Err(PolicyError::NoTargetVisible) => {
                        let t = if world.assembly.jammed() {
                            Termination::Jammed
                        } else {
                            Termination::Aborted
                        };
                        return Ok(end(world, log, approaching, &st, t));
                    }
                    Err(err) => return Err(OrchestratorError::Corrector(err)),
                }
            }
            Mode::Skill => {
                let path = st.path.as_ref().expect("skill mode has a path");
                let out = match controller_step(path, &st.progress, &obs.tcp, CONTROL_DT) {
                    Ok(out) => out,
                    Err(_) => return Ok(end(world, log, approaching, &st, Termination::TrackingLost)),
                };
                st.progress = out.state;
                for &i in &out.reached {
                    let station = &path.stations()[i];
                    log.push(
                        tick,
                        EventKind::WaypointReached {
                            index: station.source.index,
                            section: station.source.section,
                            tag: station.tag.as_ref().map(|t| t.as_str().to_owned()),
                        },
                    );
                    let is_pickup = station.tag.as_ref().is_some_and(|t| t.is("PickUp"));
                    if is_pickup && path.origin == TrajectoryOrigin::Full && !st.pickup_checked {
                        st.pickup_check_at = Some(tick + det.settle_ticks());
                    }
                }
                skill_done = out.done;
                out.action
            }
        };

        if skill_done {
            log.steps.push(StepRecord {
                mode,
                observation: obs,
                action,
                paused: false,
            });
            let placed = check_stage(&world, &cfg).placed_ok;
            let t = if placed {
                Termination::Success
            } else {
                Termination::Aborted
            };
            return Ok(end(world, log, approaching, &st, t));
        }

        log.steps.push(StepRecord {
            mode,
            observation: obs.clone(),
            action,
            paused: false,
        });

        let mut signal = None;
        if mode != Mode::Skill && detect_stop(&action) {
            if mode == Mode::Planner && within_approach(&obs.tcp, &pregrasp) {
                approaching = true;
            }
            signal = Some(Signal::StopToken);
        }

        let mut step_action = per_tick(&action);
        for _ in 0..CONTROL_PERIOD_TICKS {
            world = world.step(&step_action, BASE_DT);
            if mode != Mode::Skill || signal.is_some() {
                continue;
            }
            let now = world.tick;
            if st.pickup_check_at.is_some_and(|t| now >= t) && !st.pickup_checked {
                st.pickup_checked = true;
                st.pickup_check_at = None;
                st.extraction_completed = true;
                log.grasp_checks.push(now);
                let o = observe(&world);
                if detect_grasp_failure(&o, skill) {
                    log.push(
                        now,
                        EventKind::GraspFailureDetected {
                            observed_width_m: o.observed_width,
                            commanded_width_m: o.commanded_width,
                        },
                    );
                    signal = Some(Signal::GraspFailure);
                }
            }
            if signal.is_none() && now.is_multiple_of(u64::from(det.drop_monitor_period)) && st.monitor_armed(skill) {
                log.drop_checks.push(now);
                let o = observe(&world);
                if monitor_drop(&o, skill) {
                    log.push(
                        now,
                        EventKind::DropDetected {
                            observed_width_m: o.observed_width,
                            commanded_width_m: o.commanded_width,
                        },
                    );
                    signal = Some(Signal::Drop);
                }
            }
            if signal.is_some() {
                step_action = Action::hold(action.gripper);
            }
        }

        if world.assembly.jammed() && !world.holding() {
            return Ok(end(world, log, approaching, &st, Termination::Jammed));
        }

        let Some(sig) = signal else { continue };
        if matches!(sig, Signal::GraspFailure | Signal::Drop) {
            let pause = Action::hold(action.gripper);
            for _ in 0..det.pause_steps() {
                if world.tick >= limit {
                    break;
                }
                log.steps.push(StepRecord {
                    mode: Mode::Corrector,
                    observation: observe(&world),
                    action: pause,
                    paused: true,
                });
                for _ in 0..CONTROL_PERIOD_TICKS {
                    world = world.step(&pause, BASE_DT);
                }
            }
        }
        let tcp = world.tcp;
        let tr = transition(&st, sig, skill, &tcp, det);
        // a stop token is stamped with the tick of the frame that carried it
        let ev_tick = if sig == Signal::StopToken { tick } else { world.tick };
        for ev in tr.events {
            log.push(ev_tick, ev);
        }
        st = tr.state;
        if let Some(t) = tr.end {
            return Ok(end(world, log, approaching, &st, t));
        }
        if st.mode == Mode::Corrector {
            if let Some(c) = corrector.as_deref_mut() {
                c.reset(crate::seed::derive(world.seed, &[2, u64::from(st.corrections_used)]))
                    .map_err(OrchestratorError::Corrector)?;
            }
        }
    }
    Ok(end(world, log, approaching, &st, Termination::Timeout))
}

fn run_end_to_end(
    policy: &mut dyn Policy,
    mut world: WorldState,
    e: &crate::policy::InstructionEmbedding,
    config: &EpisodeConfig,
) -> Result<EpisodeOutput, OrchestratorError> {
    let limit = timeout_ticks(config);
    let cfg = world.config.clone();
    let mut log = EpisodeLog::default();
    let result = |world: &WorldState| {
        let f = check_stage(world, &world.config);
        let approaching = f.approaching_ok;
        let disassembly = approaching && f.disassembly_ok;
        EpisodeResult {
            approaching,
            disassembly,
            final_success: disassembly && f.placed_ok,
            ..EpisodeResult::default()
        }
    };
    while world.tick < limit {
        let obs = observe(&world);
        let z = encode_observation(&obs, &cfg);
        // a stop token has nothing to hand over to; the world treats it as a hold
        let action = query(policy, &z, e, world.tick).map_err(OrchestratorError::Planner)?;
        log.steps.push(StepRecord {
            mode: Mode::Planner,
            observation: obs,
            action,
            paused: false,
        });
        let a = per_tick(&action);
        for _ in 0..CONTROL_PERIOD_TICKS {
            world = world.step(&a, BASE_DT);
        }
        let flags = check_stage(&world, &cfg);
        if flags.placed_ok && flags.disassembly_ok {
            let r = result(&world);
            return Ok(finish(world, log, r, Termination::Success));
        }
        if world.assembly.jammed() && !world.holding() {
            let r = result(&world);
            return Ok(finish(world, log, r, Termination::Jammed));
        }
        if policy.is_idle() {
            let r = result(&world);
            return Ok(finish(world, log, r, Termination::Aborted));
        }
    }
    let r = result(&world);
    Ok(finish(world, log, r, Termination::Timeout))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::control::{Role, TaskId};
    use crate::policy::{build_policy, PolicyContext, PolicySpec};
    use crate::world::{init_world, layout::test_config, schedule_fault, Fault};

    pub(crate) fn run(
        task: TaskId,
        placement: usize,
        planner: PolicySpec,
        faults: &[Fault],
        detector: DetectorConfig,
    ) -> EpisodeOutput {
        let lib = SkillLibrary::shipped();
        let skill = lib.for_task(task).unwrap().clone();
        let instruction = task.default_instruction();
        let ctx = |role| PolicyContext {
            role,
            skill: skill.clone(),
            instruction: instruction.clone(),
        };
        let mut p = build_policy(&planner, &ctx(Role::Planner)).unwrap();
        let mut c = build_policy(&PolicySpec::oracle(), &ctx(Role::Corrector)).unwrap();
        let mut w = init_world(&test_config(task, placement), 7).unwrap();
        for f in faults {
            w = schedule_fault(&w, *f).unwrap();
        }
        let config = EpisodeConfig {
            detector,
            ..EpisodeConfig::default()
        };
        run_episode(p.as_mut(), Some(c.as_mut()), &lib, w, &instruction, &config).unwrap()
    }

    #[test]
    fn oracle_cpu_episode_succeeds() {
        let out = run(
            TaskId::CpuExtraction,
            0,
            PolicySpec::oracle(),
            &[],
            DetectorConfig::default(),
        );
        let r = out.result;
        assert_eq!(r.termination, Some(Termination::Success), "{:?}", out.log.events);
        assert!(r.approaching && r.disassembly && r.final_success && !r.recovered);
        assert_eq!(out.log.grasp_checks.len(), 1);
    }

    #[test]
    fn oracle_ram_episode_succeeds() {
        let out = run(
            TaskId::RamRemoval,
            3,
            PolicySpec::oracle(),
            &[],
            DetectorConfig::default(),
        );
        assert_eq!(
            out.result.termination,
            Some(Termination::Success),
            "{:?}",
            out.log.events
        );
        assert!(out.result.final_success);
    }

    #[test]
    fn grasp_miss_recovered_with_one_correction() {
        let det = DetectorConfig {
            max_corrections: 1,
            ..DetectorConfig::default()
        };
        let out = run(TaskId::CpuExtraction, 1, PolicySpec::oracle(), &[Fault::GraspMiss], det);
        assert!(out.result.final_success, "{:?}", out.log.events);
        assert!(out.result.recovered);
        let activations = out.log.count(|k| matches!(k, EventKind::CorrectorActivated { .. }));
        assert_eq!(activations, 1);
    }

    #[test]
    fn grasp_miss_without_corrector_fails() {
        let det = DetectorConfig {
            max_corrections: 0,
            ..DetectorConfig::default()
        };
        let out = run(TaskId::RamRemoval, 1, PolicySpec::oracle(), &[Fault::GraspMiss], det);
        assert_eq!(out.result.termination, Some(Termination::CorrectionsExhausted));
        assert!(!out.result.final_success);
    }

    #[test]
    fn never_stopping_planner_times_out() {
        let det = DetectorConfig {
            max_corrections: 2,
            ..DetectorConfig::default()
        };
        let lib = SkillLibrary::shipped();
        let task = TaskId::CpuExtraction;
        let ctx = PolicyContext {
            role: Role::Planner,
            skill: lib.for_task(task).unwrap().clone(),
            instruction: task.default_instruction(),
        };
        let mut p = build_policy(&PolicySpec::NeverStops, &ctx).unwrap();
        let w = init_world(&test_config(task, 0), 0).unwrap();
        let config = EpisodeConfig {
            timeout_s: 10.0,
            detector: det,
            ..EpisodeConfig::default()
        };
        let out = run_episode(p.as_mut(), None, &lib, w, &ctx.instruction, &config).unwrap();
        assert_eq!(out.result.termination, Some(Termination::Timeout));
        assert!(!out.result.approaching);
        assert_eq!(out.result.ticks, 3000);
    }

    #[test]
    fn stop_detection() {
        assert!(detect_stop(&Action::stop()));
        assert!(!detect_stop(&Action::hold(crate::control::GripperCommand::CLOSED)));
        assert!(!detect_stop(&Action::hold(crate::control::GripperCommand::OPEN)));
    }

    #[test]
    fn grasp_failure_examples() {
        let cfg = test_config(TaskId::CpuExtraction, 0);
        let mut skill = SkillLibrary::shipped().for_task(TaskId::CpuExtraction).unwrap().clone();
        skill.failure_threshold = 0.002;
        let mut o = observe(&init_world(&cfg, 0).unwrap());
        o.commanded_width = 0.0;
        o.observed_width = 0.004;
        assert!(!detect_grasp_failure(&o, &skill));
        o.observed_width = 0.0001;
        assert!(detect_grasp_failure(&o, &skill));
        skill.failure_threshold = 0.0;
        o.observed_width = 0.0;
        assert!(!detect_grasp_failure(&o, &skill));
    }

    #[test]
    fn transition_table() {
        let lib = SkillLibrary::shipped();
        let skill = lib.for_task(TaskId::CpuExtraction).unwrap();
        let det = DetectorConfig::default();
        let tcp = test_config(TaskId::CpuExtraction, 0).pregrasp_pose();

        let t = transition(&OrchestratorState::initial(), Signal::StopToken, skill, &tcp, &det);
        assert_eq!(t.state.mode, Mode::Skill);
        assert_eq!(t.state.path.as_ref().unwrap().origin, TrajectoryOrigin::Full);
        assert_eq!(t.state.path.as_ref().unwrap().stations().len(), 23);

        let mut s = t.state.clone();
        s.extraction_completed = true;
        let t = transition(&s, Signal::Drop, skill, &tcp, &det);
        assert_eq!(t.state.mode, Mode::Corrector);
        assert_eq!(t.state.corrections_used, 1);

        let t = transition(&t.state, Signal::StopToken, skill, &tcp, &det);
        assert_eq!(t.state.mode, Mode::Skill);
        assert_eq!(t.state.path.as_ref().unwrap().origin, TrajectoryOrigin::PlacementOnly);
        assert!(matches!(t.events[1], EventKind::SkillResumed { .. }));

        let t = transition(&t.state, Signal::StopToken, skill, &tcp, &det);
        assert_eq!(t.end, Some(Termination::Aborted));

        let mut s = OrchestratorState::initial();
        s.mode = Mode::Skill;
        s.corrections_used = 2;
        assert_eq!(
            transition(&s, Signal::GraspFailure, skill, &tcp, &det).end,
            Some(Termination::CorrectionsExhausted)
        );
    }
}
