//! Instruction and observation encoders.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::control::Instruction;
use crate::geometry::{delta_between, Pose, Vec3};
use crate::world::{layout::ComponentConfig, Observation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionEmbedding {
    pub tokens: Vec<String>,
    pub bag: BTreeSet<String>,
}

/// Lowercase words split on whitespace and punctuation.
pub fn encode_instruction(instruction: &Instruction) -> InstructionEmbedding {
    let tokens: Vec<String> = instruction
        .text()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let bag = tokens.iter().cloned().collect();
    InstructionEmbedding { tokens, bag }
}

pub const OBSERVATION_LAYOUT_VERSION: u32 = 1;
pub const OBSERVATION_DIM: usize = 18;

/// Observed width above the commanded width by more than this means an
/// object is between the fingers.
const HELD_MARGIN_M: f64 = 1e-4;

/// Feature layout (version 1), in [`to_vec`](Self::to_vec) order:
///
/// | index | field |
/// |-------|-------|
/// | 0..3  | TCP position (m) |
/// | 3..7  | TCP orientation `(w, x, y, z)` |
/// | 7     | commanded gripper width (m) |
/// | 8     | observed gripper width (m) |
/// | 9..12 | displacement TCP → target (m) |
/// | 12..15| rotation TCP → target, body-frame axis-angle (rad) |
/// | 15..18| latch flags as 0/1 |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedObservation {
    pub tcp_pos_m: [f64; 3],
    pub tcp_quat_wxyz: [f64; 4],
    pub grip_cmd_m: f64,
    pub grip_obs_m: f64,
    pub target_disp_m: [f64; 3],
    pub target_rot_aa: [f64; 3],
    pub latches: [bool; 3],
}

impl EncodedObservation {
    pub fn to_vec(&self) -> [f64; OBSERVATION_DIM] {
        let mut v = [0.0; OBSERVATION_DIM];
        v[0..3].copy_from_slice(&self.tcp_pos_m);
        v[3..7].copy_from_slice(&self.tcp_quat_wxyz);
        v[7] = self.grip_cmd_m;
        v[8] = self.grip_obs_m;
        v[9..12].copy_from_slice(&self.target_disp_m);
        v[12..15].copy_from_slice(&self.target_rot_aa);
        for (i, l) in self.latches.iter().enumerate() {
            v[15 + i] = f64::from(u8::from(*l));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }

    pub fn tcp(&self) -> Pose {
        Pose::from_parts(self.tcp_pos_m, self.tcp_quat_wxyz).unwrap_or_default()
    }

    pub fn target_disp(&self) -> Vec3 {
        Vec3::from(self.target_disp_m)
    }

    pub fn target_rot(&self) -> Vec3 {
        Vec3::from(self.target_rot_aa)
    }

    pub fn component_seated(&self) -> bool {
        self.latches[2]
    }

    pub fn holding(&self) -> bool {
        self.grip_obs_m > self.grip_cmd_m + HELD_MARGIN_M
    }
}

/// Target of the current phase: the pre-grasp pose while the component is
/// seated, the placement pose while it is held, otherwise its grasp point.
pub fn target_pose(obs: &Observation, config: &ComponentConfig) -> Pose {
    if obs.latches[2] {
        return config.pregrasp_pose();
    }
    if obs.observed_width > obs.commanded_width + HELD_MARGIN_M {
        return config.placement_pose();
    }
    obs.objects
        .values()
        .next()
        .copied()
        .unwrap_or_else(|| config.placement_pose())
}

pub fn encode_observation(obs: &Observation, config: &ComponentConfig) -> EncodedObservation {
    let target = target_pose(obs, config);
    let d = delta_between(&obs.tcp, &target);
    EncodedObservation {
        tcp_pos_m: obs.tcp.position_array(),
        tcp_quat_wxyz: obs.tcp.quat_wxyz(),
        grip_cmd_m: obs.commanded_width,
        grip_obs_m: obs.observed_width,
        target_disp_m: [d.translation.x, d.translation.y, d.translation.z],
        target_rot_aa: [d.rotation.x, d.rotation.y, d.rotation.z],
        latches: obs.latches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::TaskId;
    use crate::world::{init_world, layout::test_config, observe};

    #[test]
    fn tokenization() {
        let e = encode_instruction(&Instruction::new("Extract the CPU").unwrap());
        assert_eq!(e.tokens, ["extract", "the", "cpu"]);
        let a = encode_instruction(&Instruction::new("REMOVE the Ram").unwrap());
        let b = encode_instruction(&Instruction::new("remove the ram").unwrap());
        assert_eq!(a, b);
        let d = encode_instruction(&Instruction::new("remove RAM; remove RAM").unwrap());
        assert_eq!(d.bag.len(), 2);
        assert_eq!(d.tokens.len(), 4);
    }

    #[test]
    fn home_displacement_is_home_to_pregrasp() {
        let cfg = test_config(TaskId::CpuExtraction, 2);
        let w = init_world(&cfg, 0).unwrap();
        let z = encode_observation(&observe(&w), &cfg);
        let expect = cfg.pregrasp_pose().position - Vec3::new(0.30, 0.0, 0.30);
        assert!((z.target_disp() - expect).norm() < 1e-15);
        assert!((z.target_rot().z - 0.30).abs() < 1e-12);
        assert_eq!(z, encode_observation(&observe(&w), &cfg));
        assert!(z.is_finite());
        assert_eq!(z.to_vec()[17], 1.0);
    }

    #[test]
    fn at_pregrasp_displacement_vanishes() {
        let cfg = test_config(TaskId::RamRemoval, 0);
        let mut w = init_world(&cfg, 0).unwrap();
        w.tcp = cfg.pregrasp_pose();
        let z = encode_observation(&observe(&w), &cfg);
        assert!(z.target_disp().norm() < 1e-15);
        assert!(z.target_rot().norm() < 1e-12);
    }
}
