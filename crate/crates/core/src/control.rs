//! Control-level value types: gripper bytes, actions, modes, instructions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DeltaMotion, Vec3};

/// Gripper byte. `0` is fully open, `250` fully closed, `255` is the stop
/// token. `251..=254` are never valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GripperCommand(u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("gripper byte {0} is reserved (valid: 0..=250 or 255)")]
pub struct InvalidGripperByte(pub u8);

impl GripperCommand {
    pub const OPEN: Self = Self(0);
    pub const CLOSED: Self = Self(250);
    pub const STOP: Self = Self(255);
    pub const MAX_PHYSICAL: u8 = 250;
    /// Finger opening of the 2F-85 class gripper at byte 0.
    pub const MAX_WIDTH_M: f64 = 0.085;

    pub fn new(value: u8) -> Result<Self, InvalidGripperByte> {
        match value {
            0..=250 | 255 => Ok(Self(value)),
            v => Err(InvalidGripperByte(v)),
        }
    }

    /// Like [`new`](Self::new) but also rejects the stop token.
    pub fn physical(value: u8) -> Result<Self, InvalidGripperByte> {
        if value > Self::MAX_PHYSICAL {
            return Err(InvalidGripperByte(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_stop(self) -> bool {
        self.0 == 255
    }

    /// Commanded finger width; `None` for the stop token.
    pub fn width_m(self) -> Option<f64> {
        if self.is_stop() {
            None
        } else {
            Some(Self::MAX_WIDTH_M * (1.0 - f64::from(self.0) / 250.0))
        }
    }
}

impl TryFrom<u8> for GripperCommand {
    type Error = InvalidGripperByte;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<GripperCommand> for u8 {
    fn from(g: GripperCommand) -> u8 {
        g.0
    }
}

/// `a_t = [u_t, g_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub motion: DeltaMotion,
    pub gripper: GripperCommand,
}

impl Action {
    pub fn new(motion: DeltaMotion, gripper: GripperCommand) -> Self {
        Self { motion, gripper }
    }

    /// Zero motion with the stop token.
    pub fn stop() -> Self {
        Self {
            motion: DeltaMotion::zero(),
            gripper: GripperCommand::STOP,
        }
    }

    pub fn hold(gripper: GripperCommand) -> Self {
        Self {
            motion: DeltaMotion::zero(),
            gripper,
        }
    }

    pub fn is_stop(&self) -> bool {
        self.gripper.is_stop()
    }
}

/// Wire/file form of an action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub delta_pos_m: [f64; 3],
    pub delta_rot_aa: [f64; 3],
    pub gripper: u8,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionRecordError {
    #[error(transparent)]
    Gripper(#[from] InvalidGripperByte),
    #[error("non-finite or over-range motion")]
    Motion,
}

impl From<&Action> for ActionRecord {
    fn from(a: &Action) -> Self {
        let t = a.motion.translation;
        let r = a.motion.rotation;
        Self {
            delta_pos_m: [t.x, t.y, t.z],
            delta_rot_aa: [r.x, r.y, r.z],
            gripper: a.gripper.value(),
        }
    }
}

impl TryFrom<&ActionRecord> for Action {
    type Error = ActionRecordError;
    fn try_from(r: &ActionRecord) -> Result<Self, Self::Error> {
        let gripper = GripperCommand::new(r.gripper)?;
        let motion =
            DeltaMotion::new(Vec3::from(r.delta_pos_m), Vec3::from(r.delta_rot_aa)).ok_or(ActionRecordError::Motion)?;
        Ok(Action { motion, gripper })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Planner,
    Skill,
    Corrector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    Corrector,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Corrector => "corrector",
        }
    }
}

/// Natural-language task instruction (non-empty).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Instruction(String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("instruction text is empty")]
pub struct EmptyInstruction;

impl Instruction {
    pub fn new(text: impl Into<String>) -> Result<Self, EmptyInstruction> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(EmptyInstruction);
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Instruction {
    type Error = EmptyInstruction;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<Instruction> for String {
    fn from(i: Instruction) -> String {
        i.0
    }
}

/// The two disassembly tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    CpuExtraction,
    RamRemoval,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::CpuExtraction, TaskId::RamRemoval];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::CpuExtraction => "cpu_extraction",
            TaskId::RamRemoval => "ram_removal",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TaskId::CpuExtraction => "CPU Extraction",
            TaskId::RamRemoval => "RAM Removal",
        }
    }

    pub fn default_instruction(self) -> Instruction {
        let text = match self {
            TaskId::CpuExtraction => "extract the CPU from the socket",
            TaskId::RamRemoval => "remove the RAM module",
        };
        Instruction(text.to_owned())
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task `{0}` (expected cpu_extraction or ram_removal)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskId {
    type Err = UnknownTask;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpu_extraction" | "cpu" => Ok(TaskId::CpuExtraction),
            "ram_removal" | "ram" => Ok(TaskId::RamRemoval),
            other => Err(UnknownTask(other.to_owned())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gripper_byte_ranges() {
        for v in 0..=250u8 {
            assert!(GripperCommand::new(v).is_ok());
        }
        for v in 251..=254u8 {
            assert_eq!(GripperCommand::new(v), Err(InvalidGripperByte(v)));
        }
        assert!(GripperCommand::new(255).unwrap().is_stop());
        assert!(GripperCommand::physical(255).is_err());
    }

    #[test]
    fn gripper_width_mapping() {
        assert_eq!(GripperCommand::OPEN.width_m(), Some(0.085));
        assert_eq!(GripperCommand::CLOSED.width_m(), Some(0.0));
        assert_eq!(GripperCommand::STOP.width_m(), None);
        let mid = GripperCommand::new(125).unwrap().width_m().unwrap();
        assert!((mid - 0.0425).abs() < 1e-15);
    }

    #[test]
    fn action_record_rejects_reserved_bytes() {
        let rec = ActionRecord {
            delta_pos_m: [0.0; 3],
            delta_rot_aa: [0.0; 3],
            gripper: 253,
        };
        assert!(Action::try_from(&rec).is_err());
        let rec = ActionRecord { gripper: 255, ..rec };
        assert!(Action::try_from(&rec).unwrap().is_stop());
    }

    #[test]
    fn empty_instruction_rejected() {
        assert!(Instruction::new("  ").is_err());
        assert!(Instruction::new("extract the CPU").is_ok());
    }
}
