//! Stand-in for a monolithic end-to-end policy.
//!
//! It approaches like the scripted planner, then reproduces the skill's
//! motion itself. Every tagged contact waypoint of the extraction section
//! (everything tagged except `Lift`) is a gate the policy passes with a fixed
//! probability; from the first failed gate on, the remaining extraction
//! motion is displaced far enough to miss the mechanism. Errors therefore
//! compound across gates.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{Action, GripperCommand};
use crate::geometry::Vec3;
use crate::skill::{blend, controller_step, resolve, BlendedPath, ControllerState, SkillDefinition};
use crate::world::layout::CONTROL_DT;

use super::scripted::{ScriptedPlanner, StopRule};
use super::{EncodedObservation, InstructionEmbedding, Policy, PolicyError};

/// Horizontal displacement applied after a failed gate.
pub const GATE_MISS_OFFSET_M: f64 = 0.012;

#[derive(Debug, Clone)]
enum Phase {
    Approach,
    Track {
        path: Box<BlendedPath>,
        state: ControllerState,
    },
    Idle,
}

#[derive(Debug, Clone)]
pub struct EndToEndStandIn {
    skill: SkillDefinition,
    gate_success: f64,
    early_stop_prob: f64,
    approach: ScriptedPlanner,
    /// Extraction index of the first failed gate.
    failed_gate: Option<usize>,
    phase: Phase,
    last_gripper: GripperCommand,
}

/// Extraction indices of the contact gates, in order.
pub fn contact_gates(skill: &SkillDefinition) -> Vec<usize> {
    skill
        .extraction
        .iter()
        .enumerate()
        .filter(|(_, w)| w.tag.as_ref().is_some_and(|t| !t.is("Lift")))
        .map(|(i, _)| i)
        .collect()
}

impl EndToEndStandIn {
    pub fn new(skill: SkillDefinition, gate_success: f64, early_stop_prob: f64) -> Self {
        let tol = skill.trigger_tolerance;
        Self {
            skill,
            gate_success,
            early_stop_prob,
            approach: ScriptedPlanner::new(tol, StopRule::Tolerance),
            failed_gate: None,
            phase: Phase::Approach,
            last_gripper: GripperCommand::OPEN,
        }
    }

    pub fn failed_gate(&self) -> Option<usize> {
        self.failed_gate
    }

    /// The skill as this policy will execute it.
    fn executed_skill(&self) -> SkillDefinition {
        let mut s = self.skill.clone();
        if let Some(g) = self.failed_gate {
            // displace the approach into the gate as well as the gate itself
            for w in s.extraction.iter_mut().skip(g.saturating_sub(1)) {
                w.target.position += Vec3::new(GATE_MISS_OFFSET_M, 0.0, 0.0);
            }
        }
        s
    }
}

impl Policy for EndToEndStandIn {
    fn reset(&mut self, seed: u64) -> Result<(), PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let early: f64 = rng.random();
        let gates = contact_gates(&self.skill);
        let draws: Vec<f64> = gates.iter().map(|_| rng.random()).collect();
        self.failed_gate = gates
            .iter()
            .zip(&draws)
            .find(|(_, &u)| u >= self.gate_success)
            .map(|(&g, _)| g);
        let tol = self.skill.trigger_tolerance;
        self.approach = ScriptedPlanner::new(tol, StopRule::Tolerance);
        if early < self.early_stop_prob {
            // gives up a few centimeters short of the component
            self.approach = ScriptedPlanner::new(tol, StopRule::Within(0.03));
        }
        self.phase = Phase::Approach;
        self.last_gripper = GripperCommand::OPEN;
        Ok(())
    }

    fn act(&mut self, z: &EncodedObservation, e: &InstructionEmbedding, tick: u64) -> Result<Action, PolicyError> {
        if let Phase::Approach = self.phase {
            let a = self.approach.act(z, e, tick)?;
            if !a.is_stop() {
                return Ok(a);
            }
            let inside = z.target_disp().norm() <= self.skill.trigger_tolerance.pos_m;
            self.phase = if inside {
                let path = blend(&resolve(&self.executed_skill(), &z.tcp()));
                Phase::Track {
                    path: Box::new(path),
                    state: ControllerState::default(),
                }
            } else {
                Phase::Idle
            };
        }
        match &mut self.phase {
            Phase::Track { path, state } => match controller_step(path, state, &z.tcp(), CONTROL_DT) {
                Ok(out) => {
                    *state = out.state;
                    self.last_gripper = out.action.gripper;
                    if out.done {
                        self.phase = Phase::Idle;
                    }
                    Ok(out.action)
                }
                Err(_) => {
                    self.phase = Phase::Idle;
                    Ok(Action::hold(self.last_gripper))
                }
            },
            _ => Ok(Action::hold(self.last_gripper)),
        }
    }

    fn is_idle(&self) -> bool {
        matches!(self.phase, Phase::Idle)
    }
}
