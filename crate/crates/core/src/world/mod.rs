//! Deterministic kinematic simulator: arm TCP, two-finger gripper and the
//! CPU-socket / RAM-slot mechanisms.
//!
//! [`WorldState::step`] is the transition function and [`observe`] the
//! observation function of the control loop. Physical failures (missed grasps,
//! slips, jams) are state, never errors.

pub mod layout;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Action, GripperCommand, TaskId};
use crate::geometry::{apply_delta, pose_distance, Pose, PoseRecord, Vec3};
use crate::seed;

use layout::*;
pub use layout::{
    named_config, test_config, training_config, BasePose, ComponentConfig, ConfigError, BASE_DT, BASE_RATE_HZ,
    CONTROL_DT, CONTROL_PERIOD_TICKS, CONTROL_RATE_HZ,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectId {
    Cpu,
    Ram,
}

impl ObjectId {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectId::Cpu => "cpu",
            ObjectId::Ram => "ram",
        }
    }

    pub fn for_task(task: TaskId) -> Self {
        match task {
            TaskId::CpuExtraction => ObjectId::Cpu,
            TaskId::RamRemoval => ObjectId::Ram,
        }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    pub commanded_width: f64,
    pub observed_width: f64,
    pub held_object: Option<ObjectId>,
}

/// Latch gate: fires when the TCP passes within [`GATE_RADIUS`] of `pose`
/// while moving within [`GATE_CONE_RAD`] of `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub pose: Pose,
    pub direction: Vec3,
}

impl Gate {
    fn crossed(&self, from: &Vec3, to: &Vec3) -> bool {
        let motion = to - from;
        let len = motion.norm();
        if len < 1e-12 || (to - self.pose.position).norm() > GATE_RADIUS {
            return false;
        }
        let cos = motion.dot(&self.direction) / len;
        cos >= GATE_CONE_RAD.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuAssemblyState {
    pub lever_locked: bool,
    pub bracket_open: bool,
    pub cpu_seated: bool,
    pub lever_gate: Gate,
    pub bracket_gate: Gate,
    pub cpu_grasp: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamAssemblyState {
    pub ram_seated: bool,
    pub slot: Pose,
    pub extraction_depth_remaining: f64,
    pub jammed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssemblyState {
    Cpu(CpuAssemblyState),
    Ram(RamAssemblyState),
}

impl AssemblyState {
    pub fn component_seated(&self) -> bool {
        match self {
            AssemblyState::Cpu(c) => c.cpu_seated,
            AssemblyState::Ram(r) => r.ram_seated,
        }
    }

    pub fn jammed(&self) -> bool {
        matches!(self, AssemblyState::Ram(r) if r.jammed)
    }

    /// `[f0, f1, component_seated]`; CPU: `f0 = lever_locked`,
    /// `f1 = bracket_open`; RAM: `f0 = jammed`, `f1 = false`.
    pub fn latch_flags(&self) -> [bool; 3] {
        match self {
            AssemblyState::Cpu(c) => [c.lever_locked, c.bracket_open, c.cpu_seated],
            AssemblyState::Ram(r) => [r.jammed, false, r.ram_seated],
        }
    }
}

/// The task's single manipulable component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub id: ObjectId,
    /// Pose of the grasp point.
    pub pose: Pose,
    pub width: f64,
    /// `tcp⁻¹ ∘ pose` captured at attachment.
    pub grasp_offset: Option<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Detach the held component when the tick counter reaches `tick`.
    GraspSlip { tick: u64 },
    /// The next attachment fails; the component is knocked aside.
    GraspMiss,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultSchedule {
    pub pending_misses: u32,
    /// Ascending slip ticks not yet reached.
    pub slips: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("grasp slip scheduled at tick {requested} but the world is at tick {now}")]
    FaultInPast { requested: u64, now: u64 },
}

/// Episode-level facts that never revert.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageLatches {
    pub pregrasp_visited: bool,
    pub component_grasped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: ComponentConfig,
    pub seed: u64,
    pub tcp: Pose,
    pub gripper: GripperState,
    pub assembly: AssemblyState,
    pub component: Component,
    pub tick: u64,
    pub faults: FaultSchedule,
    pub latches: StageLatches,
}

pub fn init_world(config: &ComponentConfig, seed: u64) -> Result<WorldState, WorldError> {
    config.validate()?;
    let base = config.base_pose();
    let geom = layout::geometry(config.task);
    let grasp = config.seated_grasp_pose();
    let assembly = match config.task {
        TaskId::CpuExtraction => {
            let gate = |(c, d): (Vec3Const, Vec3Const)| Gate {
                pose: Pose::new(base.transform_point(&Vec3::from(c)), base.orientation),
                direction: base.orientation * Vec3::from(d),
            };
            AssemblyState::Cpu(CpuAssemblyState {
                lever_locked: true,
                bracket_open: false,
                cpu_seated: true,
                lever_gate: gate(geom.gates[0]),
                bracket_gate: gate(geom.gates[1]),
                cpu_grasp: grasp,
            })
        }
        TaskId::RamRemoval => AssemblyState::Ram(RamAssemblyState {
            ram_seated: true,
            slot: grasp,
            extraction_depth_remaining: RAM_EXTRACTION_DEPTH,
            jammed: false,
        }),
    };
    Ok(WorldState {
        config: config.clone(),
        seed,
        tcp: home_pose(),
        gripper: GripperState {
            commanded_width: GripperCommand::MAX_WIDTH_M,
            observed_width: GripperCommand::MAX_WIDTH_M,
            held_object: None,
        },
        assembly,
        component: Component {
            id: ObjectId::for_task(config.task),
            pose: grasp,
            width: geom.grasp_width,
            grasp_offset: None,
        },
        tick: 0,
        faults: FaultSchedule::default(),
        latches: StageLatches::default(),
    })
}

pub fn schedule_fault(world: &WorldState, fault: Fault) -> Result<WorldState, WorldError> {
    let mut w = world.clone();
    match fault {
        Fault::GraspMiss => w.faults.pending_misses += 1,
        Fault::GraspSlip { tick } => {
            if tick <= w.tick {
                return Err(WorldError::FaultInPast {
                    requested: tick,
                    now: w.tick,
                });
            }
            let at = w.faults.slips.partition_point(|&t| t < tick);
            w.faults.slips.insert(at, tick);
        }
    }
    Ok(w)
}

impl WorldState {
    pub fn holding(&self) -> bool {
        self.gripper.held_object.is_some()
    }

    fn graspable(&self) -> bool {
        match &self.assembly {
            AssemblyState::Cpu(c) => c.bracket_open || !c.cpu_seated,
            AssemblyState::Ram(_) => true,
        }
    }

    /// One base-rate tick. Motion is clipped to the arm's speed limits; the
    /// stop token leaves the commanded gripper width unchanged.
    pub fn step(mut self, action: &Action, dt: f64) -> WorldState {
        let from = self.tcp;
        let motion = action.motion.clipped(MAX_LINEAR_SPEED * dt, MAX_ANGULAR_SPEED * dt);
        self.tcp = apply_delta(&self.tcp, &motion);
        self.tick += 1;

        if let Some(width) = action.gripper.width_m() {
            self.gripper.commanded_width = width;
        }

        if self.faults.slips.first() == Some(&self.tick) {
            self.faults.slips.remove(0);
            if self.holding() {
                self.detach();
            }
        }
        if self.holding() && self.gripper.commanded_width > self.component.width {
            self.detach();
        }

        self.update_fingers(dt);

        if let Some(offset) = self.component.grasp_offset {
            self.component.pose = self.tcp.compose(&offset);
            self.update_seat(&from);
        }
        self.update_gates(&from);

        let (dp, dr) = pose_distance(&self.tcp, &self.config.pregrasp_pose());
        if dp <= APPROACH_POS_TOL && dr <= APPROACH_ROT_TOL {
            self.latches.pregrasp_visited = true;
        }
        self
    }

    fn update_fingers(&mut self, dt: f64) {
        let g = &mut self.gripper;
        let before = g.observed_width;
        let travel = GRIPPER_SPEED * dt;
        let mut next = if g.commanded_width > before {
            (before + travel).min(g.commanded_width)
        } else {
            (before - travel).max(g.commanded_width)
        };
        let w = self.component.width;
        if g.held_object.is_some() {
            next = next.max(w);
        } else if before >= w && next < w {
            let near = (self.tcp.position - self.component.pose.position).norm() <= ATTACH_RADIUS;
            if near && self.graspable() {
                if self.faults.pending_misses > 0 {
                    self.faults.pending_misses -= 1;
                    self.knock_aside();
                } else {
                    next = w;
                    self.gripper.held_object = Some(self.component.id);
                    self.component.grasp_offset = Some(self.tcp.inverse().compose(&self.component.pose));
                    self.latches.component_grasped = true;
                }
            }
        }
        self.gripper.observed_width = next;
    }

    fn knock_aside(&mut self) {
        let angle = seed::unit_f64(seed::derive(self.seed, &[self.tick])) * std::f64::consts::TAU;
        let p = self.component.pose.position + Vec3::new(angle.cos(), angle.sin(), 0.0) * MISS_ASIDE;
        self.component.pose = resting_pose(&p, self.component.pose.yaw());
        match &mut self.assembly {
            AssemblyState::Cpu(c) => c.cpu_seated = false,
            AssemblyState::Ram(r) => {
                r.ram_seated = false;
                r.extraction_depth_remaining = 0.0;
            }
        }
    }

    fn detach(&mut self) {
        self.gripper.held_object = None;
        self.component.grasp_offset = None;
        if !self.assembly.component_seated() {
            let yaw = self.component.pose.yaw();
            self.component.pose = resting_pose(&self.component.pose.position, yaw);
        }
    }

    fn update_seat(&mut self, from: &Pose) {
        let grasp_z = self.component.pose.position.z;
        match &mut self.assembly {
            AssemblyState::Cpu(c) => {
                if c.cpu_seated && grasp_z > c.cpu_grasp.position.z + CPU_UNSEAT_LIFT {
                    c.cpu_seated = false;
                }
            }
            AssemblyState::Ram(r) => {
                if !r.ram_seated {
                    return;
                }
                let motion = self.tcp.position - from.position;
                if motion.z > 1e-12 {
                    let lateral = self.tcp.position.xy() - r.slot.position.xy();
                    let tilt = motion.xy().norm().atan2(motion.z);
                    if lateral.norm() > RAM_LATERAL_CLEARANCE || tilt > RAM_MAX_TILT_RAD {
                        r.jammed = true;
                    }
                }
                if r.jammed {
                    // wedged in the slot: the fingers slip off
                    self.gripper.held_object = None;
                    self.component.grasp_offset = None;
                    return;
                }
                let lifted = (grasp_z - r.slot.position.z).max(0.0);
                r.extraction_depth_remaining = (RAM_EXTRACTION_DEPTH - lifted).max(0.0);
                if r.extraction_depth_remaining == 0.0 {
                    r.ram_seated = false;
                }
            }
        }
    }

    fn update_gates(&mut self, from: &Pose) {
        if let AssemblyState::Cpu(c) = &mut self.assembly {
            let (a, b) = (&from.position, &self.tcp.position);
            if c.lever_locked && c.lever_gate.crossed(a, b) {
                c.lever_locked = false;
            }
            if !c.lever_locked && !c.bracket_open && c.bracket_gate.crossed(a, b) {
                c.bracket_open = true;
            }
        }
    }
}

fn resting_pose(p: &Vec3, yaw: f64) -> Pose {
    Pose::from_xyz_yaw(p.x, p.y, REST_Z, yaw)
}

/// Fused, noise-free view of the world state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub tick: u64,
    pub tcp: Pose,
    pub commanded_width: f64,
    pub observed_width: f64,
    pub objects: BTreeMap<ObjectId, Pose>,
    pub latches: [bool; 3],
}

pub fn observe(world: &WorldState) -> Observation {
    let mut objects = BTreeMap::new();
    objects.insert(world.component.id, world.component.pose);
    Observation {
        tick: world.tick,
        tcp: world.tcp,
        commanded_width: world.gripper.commanded_width,
        observed_width: world.gripper.observed_width,
        objects,
        latches: world.assembly.latch_flags(),
    }
}

/// Serialized observation with unit-suffixed field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub tick: u64,
    pub tcp_pos_m: [f64; 3],
    pub tcp_quat_wxyz: [f64; 4],
    pub grip_cmd_m: f64,
    pub grip_obs_m: f64,
    pub objects: BTreeMap<ObjectId, PoseRecord>,
    pub latches: [bool; 3],
}

impl From<&Observation> for ObservationRecord {
    fn from(o: &Observation) -> Self {
        Self {
            tick: o.tick,
            tcp_pos_m: o.tcp.position_array(),
            tcp_quat_wxyz: o.tcp.quat_wxyz(),
            grip_cmd_m: o.commanded_width,
            grip_obs_m: o.observed_width,
            objects: o.objects.iter().map(|(k, p)| (*k, PoseRecord::from(p))).collect(),
            latches: o.latches,
        }
    }
}

impl ObservationRecord {
    pub fn to_observation(&self) -> Option<Observation> {
        let tcp = Pose::from_parts(self.tcp_pos_m, self.tcp_quat_wxyz)?;
        let mut objects = BTreeMap::new();
        for (k, p) in &self.objects {
            objects.insert(*k, p.to_pose()?);
        }
        Some(Observation {
            tick: self.tick,
            tcp,
            commanded_width: self.grip_cmd_m,
            observed_width: self.grip_obs_m,
            objects,
            latches: self.latches,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageFlags {
    pub approaching_ok: bool,
    pub disassembly_ok: bool,
    pub placed_ok: bool,
}

/// Stage predicates. Approaching and grasping are latched over the episode;
/// placement is evaluated on the current state.
pub fn check_stage(world: &WorldState, config: &ComponentConfig) -> StageFlags {
    let freed = match &world.assembly {
        AssemblyState::Cpu(c) => !c.lever_locked && c.bracket_open && world.latches.component_grasped,
        AssemblyState::Ram(r) => !r.ram_seated && world.latches.component_grasped,
    };
    let released = !world.holding() && !world.assembly.component_seated();
    let near_target = (world.component.pose.position - config.placement_pose().position).norm() <= PLACED_TOL;
    StageFlags {
        approaching_ok: world.latches.pregrasp_visited,
        disassembly_ok: freed,
        placed_ok: released && near_target && world.latches.component_grasped,
    }
}
