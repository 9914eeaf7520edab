//! Fixture geometry, timing and physical constants of the simulated cell.
//!
//! All assembly-local offsets are expressed in the assembly frame: origin at
//! the socket/slot center on the fixture board, z up, rotated by the
//! configuration's yaw.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::TaskId;
use crate::geometry::{Pose, PoseRecord, Vec3};

pub const BASE_RATE_HZ: u32 = 300;
pub const BASE_DT: f64 = 1.0 / BASE_RATE_HZ as f64;
pub const CONTROL_RATE_HZ: u32 = 30;
pub const CONTROL_PERIOD_TICKS: u32 = BASE_RATE_HZ / CONTROL_RATE_HZ;
pub const CONTROL_DT: f64 = 1.0 / CONTROL_RATE_HZ as f64;

pub const MAX_LINEAR_SPEED: f64 = 0.25;
pub const MAX_ANGULAR_SPEED: f64 = 1.5;
pub const GRIPPER_SPEED: f64 = 0.1;

pub const GATE_RADIUS: f64 = 0.005;
pub const GATE_CONE_RAD: f64 = 30.0 * std::f64::consts::PI / 180.0;
pub const ATTACH_RADIUS: f64 = 0.003;
/// A held CPU counts as lifted out of the socket above this height.
pub const CPU_UNSEAT_LIFT: f64 = 0.002;

pub const RAM_LATERAL_CLEARANCE: f64 = 0.002;
pub const RAM_EXTRACTION_DEPTH: f64 = 0.030;
pub const RAM_MAX_TILT_RAD: f64 = 20.0 * std::f64::consts::PI / 180.0;

pub const CPU_GRASP_WIDTH: f64 = 0.004;
pub const RAM_GRASP_WIDTH: f64 = 0.0015;

/// Height of a loose component's grasp point resting on the table.
pub const REST_Z: f64 = 0.005;
/// Displacement of a component knocked aside by a missed grasp.
pub const MISS_ASIDE: f64 = 0.010;

/// Stage region around the pre-grasp pose.
pub const APPROACH_POS_TOL: f64 = 0.010;
pub const APPROACH_ROT_TOL: f64 = 0.1;
pub const PLACED_TOL: f64 = 0.010;

pub const BOARD_CENTER: (f64, f64) = (0.55, 0.0);
pub const BOARD_SIZE: (f64, f64) = (0.6, 0.4);

/// Reachable tabletop region; loose components outside it are lost.
pub const WORKSPACE_X: (f64, f64) = (0.10, 1.00);
pub const WORKSPACE_Y: (f64, f64) = (-0.50, 0.50);

pub fn home_pose() -> Pose {
    Pose::from_translation(0.30, 0.0, 0.30)
}

pub fn within_board(x: f64, y: f64) -> bool {
    let (cx, cy) = BOARD_CENTER;
    let (w, h) = BOARD_SIZE;
    (x - cx).abs() <= w / 2.0 && (y - cy).abs() <= h / 2.0
}

pub fn within_workspace(p: &Vec3) -> bool {
    (WORKSPACE_X.0..=WORKSPACE_X.1).contains(&p.x) && (WORKSPACE_Y.0..=WORKSPACE_Y.1).contains(&p.y)
}

/// Mechanism geometry of one task, in the assembly frame.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyGeometry {
    pub pregrasp: Vec3,
    pub grasp_point: Vec3,
    pub grasp_width: f64,
    /// `(center, required approach direction)` of each latch gate.
    pub gates: &'static [(Vec3Const, Vec3Const)],
    pub placement_target: Vec3Const,
}

/// `Vec3` is not const-constructible; plain arrays stand in for tables.
pub type Vec3Const = [f64; 3];

const CPU_GATES: [(Vec3Const, Vec3Const); 2] = [
    // retention lever: slide along +y to release the hook
    ([0.035, -0.020, 0.015], [0.0, 1.0, 0.0]),
    // bracket: lift along +z, only once the lever is released
    ([0.0, -0.025, 0.020], [0.0, 0.0, 1.0]),
];

pub fn geometry(task: TaskId) -> AssemblyGeometry {
    match task {
        TaskId::CpuExtraction => AssemblyGeometry {
            pregrasp: Vec3::new(0.0, 0.0, 0.050),
            grasp_point: Vec3::new(0.0, 0.0, 0.010),
            grasp_width: CPU_GRASP_WIDTH,
            gates: &CPU_GATES,
            placement_target: [0.35, 0.28, REST_Z],
        },
        TaskId::RamRemoval => AssemblyGeometry {
            pregrasp: Vec3::new(0.0, 0.0, 0.070),
            grasp_point: Vec3::new(0.0, 0.0, 0.030),
            grasp_width: RAM_GRASP_WIDTH,
            gates: &[],
            placement_target: [0.55, 0.28, REST_Z],
        },
    }
}

/// Placement of the assembly on the fixture board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePose {
    pub x_m: f64,
    pub y_m: f64,
    pub yaw_rad: f64,
}

impl BasePose {
    pub fn to_pose(&self) -> Pose {
        Pose::from_xyz_yaw(self.x_m, self.y_m, 0.0, self.yaw_rad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub id: String,
    pub task: TaskId,
    pub base: BasePose,
    pub placement: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config `{id}`: base ({x}, {y}) outside the fixture board")]
    OutOfBounds { id: String, x: f64, y: f64 },
    #[error("config `{0}`: non-finite or degenerate pose")]
    InvalidPose(String),
    #[error("unknown component configuration `{0}`")]
    Unknown(String),
}

impl ComponentConfig {
    pub fn new(id: impl Into<String>, task: TaskId, x: f64, y: f64, yaw: f64) -> Self {
        let target = geometry(task).placement_target;
        Self {
            id: id.into(),
            task,
            base: BasePose {
                x_m: x,
                y_m: y,
                yaw_rad: yaw,
            },
            placement: PoseRecord {
                pos_m: target,
                quat_wxyz: [1.0, 0.0, 0.0, 0.0],
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.base;
        if ![b.x_m, b.y_m, b.yaw_rad].iter().all(|v| v.is_finite()) || self.placement.to_pose().is_none() {
            return Err(ConfigError::InvalidPose(self.id.clone()));
        }
        if !within_board(b.x_m, b.y_m) {
            return Err(ConfigError::OutOfBounds {
                id: self.id.clone(),
                x: b.x_m,
                y: b.y_m,
            });
        }
        Ok(())
    }

    pub fn base_pose(&self) -> Pose {
        self.base.to_pose()
    }

    pub fn placement_pose(&self) -> Pose {
        self.placement.to_pose().unwrap_or_default()
    }

    /// Assembly-local point expressed in the base frame.
    pub fn local_to_world(&self, local: &Vec3) -> Vec3 {
        self.base_pose().transform_point(local)
    }

    /// Pre-grasp TCP pose from which the task's skill starts.
    pub fn pregrasp_pose(&self) -> Pose {
        let base = self.base_pose();
        let g = geometry(self.task);
        base.compose(&Pose::new(g.pregrasp, nalgebra::UnitQuaternion::identity()))
    }

    /// Seated grasp point of the component.
    pub fn seated_grasp_pose(&self) -> Pose {
        let base = self.base_pose();
        let g = geometry(self.task);
        base.compose(&Pose::new(g.grasp_point, nalgebra::UnitQuaternion::identity()))
    }
}

/// `(x, y, yaw)` placements used to record demonstrations.
pub const TRAINING_PLACEMENTS: [(f64, f64, f64); 8] = [
    (0.40, -0.12, 0.0),
    (0.40, 0.12, 0.25),
    (0.55, -0.12, -0.25),
    (0.55, 0.12, 0.0),
    (0.70, -0.12, 0.25),
    (0.70, 0.12, -0.25),
    (0.48, 0.0, 0.40),
    (0.62, 0.0, -0.40),
];

/// Held-out evaluation placements; disjoint from [`TRAINING_PLACEMENTS`].
pub const TEST_PLACEMENTS: [(f64, f64, f64); 5] = [
    (0.45, -0.05, 0.15),
    (0.50, 0.08, -0.15),
    (0.60, -0.06, 0.30),
    (0.65, 0.06, -0.30),
    (0.55, 0.0, 0.05),
];

pub fn training_config(task: TaskId, index: usize) -> ComponentConfig {
    let (x, y, yaw) = TRAINING_PLACEMENTS[index % TRAINING_PLACEMENTS.len()];
    ComponentConfig::new(format!("train-{}", index % TRAINING_PLACEMENTS.len()), task, x, y, yaw)
}

pub fn test_config(task: TaskId, index: usize) -> ComponentConfig {
    let (x, y, yaw) = TEST_PLACEMENTS[index % TEST_PLACEMENTS.len()];
    ComponentConfig::new(format!("test-{}", index % TEST_PLACEMENTS.len()), task, x, y, yaw)
}

/// Resolves `train-N` / `test-N` identifiers.
pub fn named_config(task: TaskId, id: &str) -> Result<ComponentConfig, ConfigError> {
    let parse = |prefix: &str, len: usize| {
        id.strip_prefix(prefix)
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n < len)
    };
    if let Some(n) = parse("test-", TEST_PLACEMENTS.len()) {
        return Ok(test_config(task, n));
    }
    if let Some(n) = parse("train-", TRAINING_PLACEMENTS.len()) {
        return Ok(training_config(task, n));
    }
    Err(ConfigError::Unknown(id.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_divide_evenly() {
        assert_eq!(CONTROL_PERIOD_TICKS, 10);
        assert_eq!(BASE_RATE_HZ % 50, 0);
    }

    #[test]
    fn placements_on_board_and_disjoint() {
        for task in TaskId::ALL {
            for i in 0..TRAINING_PLACEMENTS.len() {
                training_config(task, i).validate().unwrap();
            }
            for i in 0..TEST_PLACEMENTS.len() {
                test_config(task, i).validate().unwrap();
            }
        }
        for t in TEST_PLACEMENTS {
            assert!(!TRAINING_PLACEMENTS.contains(&t));
        }
    }

    #[test]
    fn out_of_board_rejected() {
        let c = ComponentConfig::new("x", TaskId::CpuExtraction, 1.2, 0.0, 0.0);
        assert!(matches!(c.validate(), Err(ConfigError::OutOfBounds { .. })));
    }

    #[test]
    fn named_lookup() {
        assert_eq!(named_config(TaskId::RamRemoval, "test-3").unwrap().id, "test-3");
        assert!(named_config(TaskId::RamRemoval, "test-5").is_err());
        assert!(named_config(TaskId::RamRemoval, "bogus").is_err());
    }
}
