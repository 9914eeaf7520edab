//! SELF-VLA: a vision-language-action planner that hands off to explicit
//! waypoint skills for contact-rich disassembly, with a corrector policy for
//! recovery, running against a deterministic kinematic simulator.
//!
//! The control loop lives in [`orchestrator`]; [`episode`] turns its output
//! into training data and [`harness`] into evaluation tables.

pub mod control;
pub mod episode;
pub mod geometry;
pub mod harness;
pub mod orchestrator;
pub mod policy;
pub mod seed;
pub mod skill;
pub mod testing;
pub mod world;

pub use control::{Action, GripperCommand, Instruction, Mode, Role, TaskId};
pub use geometry::{DeltaMotion, Pose, Vec3};
