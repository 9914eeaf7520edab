//! Scripted planner and corrector policies.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{Action, GripperCommand};
use crate::geometry::{DeltaMotion, Vec3};
use crate::skill::TriggerTolerance;
use crate::world::layout::{within_workspace, CONTROL_DT, MAX_ANGULAR_SPEED, MAX_LINEAR_SPEED};

use super::{EncodedObservation, InstructionEmbedding, Policy, PolicyError};

/// Proportional gain of the scripted planner (1/s).
pub const PLANNER_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Within the skill's trigger tolerance.
    Tolerance,
    /// As soon as the displacement is at most this many meters.
    Within(f64),
    Never,
}

fn clipped_step(translation: Vec3, rotation: Vec3) -> DeltaMotion {
    DeltaMotion { translation, rotation }.clipped(MAX_LINEAR_SPEED * CONTROL_DT, MAX_ANGULAR_SPEED * CONTROL_DT)
}

/// Planner that drives the TCP toward the pre-grasp pose.
///
/// Positional noise perturbs the perceived displacement at every step, so a
/// noisy planner moves jerkily and may fire its stop token off target.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    tolerance: TriggerTolerance,
    rule: StopRule,
    bias: Vec3,
    noise_sigma: f64,
    early_stop_prob: f64,
    early_stop_distance: f64,
    stops_early: bool,
    rng: ChaCha8Rng,
}

impl ScriptedPlanner {
    pub fn new(tolerance: TriggerTolerance, rule: StopRule) -> Self {
        Self {
            tolerance,
            rule,
            bias: Vec3::zeros(),
            noise_sigma: 0.0,
            early_stop_prob: 0.0,
            early_stop_distance: 0.03,
            stops_early: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_bias(mut self, bias: Vec3) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_early_stop(mut self, prob: f64, distance: f64) -> Self {
        self.early_stop_prob = prob;
        self.early_stop_distance = distance;
        self
    }

    fn perceived(&mut self, z: &EncodedObservation) -> Vec3 {
        let mut d = z.target_disp() + self.bias;
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
            d += Vec3::new(
                n.sample(&mut self.rng),
                n.sample(&mut self.rng),
                n.sample(&mut self.rng),
            );
        }
        d
    }
}

impl Policy for ScriptedPlanner {
    fn reset(&mut self, seed: u64) -> Result<(), PolicyError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.stops_early = self.rng.random::<f64>() < self.early_stop_prob;
        Ok(())
    }

    fn act(&mut self, z: &EncodedObservation, _e: &InstructionEmbedding, _tick: u64) -> Result<Action, PolicyError> {
        let disp = self.perceived(z);
        let rot = z.target_rot();
        let stop = if self.stops_early {
            disp.norm() <= self.early_stop_distance
        } else {
            match self.rule {
                StopRule::Tolerance => disp.norm() <= self.tolerance.pos_m && rot.norm() <= self.tolerance.rot_rad,
                StopRule::Within(d) => disp.norm() <= d,
                StopRule::Never => false,
            }
        };
        if stop {
            return Ok(Action::stop());
        }
        let k = PLANNER_GAIN * CONTROL_DT;
        Ok(Action::new(clipped_step(disp * k, rot * k), GripperCommand::OPEN))
    }
}

/// Regrasp speed of the corrector (m/s).
const CORRECTOR_SPEED: f64 = 0.1;
pub const HOVER_HEIGHT: f64 = 0.04;
pub const LIFT_HEIGHT: f64 = 0.03;
const MAX_REGRASPS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Hover,
    Descend,
    Close { last_width: f64, still: u32 },
    Lift { goal: Vec3 },
    Done,
}

/// Corrector that regrasps the free component where it lies, lifts it and
/// hands control back with the stop token.
#[derive(Debug, Clone)]
pub struct OracleCorrector {
    phase: Phase,
    attempts: u32,
}

impl Default for OracleCorrector {
    fn default() -> Self {
        Self::new()
    }
}

impl OracleCorrector {
    pub fn new() -> Self {
        Self {
            phase: Phase::Hover,
            attempts: 0,
        }
    }

    fn toward(tcp: Vec3, goal: Vec3, rot: Vec3, g: GripperCommand) -> Action {
        let d = DeltaMotion {
            translation: goal - tcp,
            rotation: rot,
        }
        .clipped(CORRECTOR_SPEED * CONTROL_DT, MAX_ANGULAR_SPEED * CONTROL_DT);
        Action::new(d, g)
    }
}

impl Policy for OracleCorrector {
    fn reset(&mut self, _seed: u64) -> Result<(), PolicyError> {
        *self = Self::new();
        Ok(())
    }

    fn act(&mut self, z: &EncodedObservation, _e: &InstructionEmbedding, _tick: u64) -> Result<Action, PolicyError> {
        let tcp = Vec3::from(z.tcp_pos_m);
        let target = tcp + z.target_disp();
        if matches!(self.phase, Phase::Hover | Phase::Descend) && (z.component_seated() || !within_workspace(&target)) {
            return Err(PolicyError::NoTargetVisible);
        }
        let open = GripperCommand::OPEN;
        let closed = GripperCommand::CLOSED;
        match self.phase {
            Phase::Hover => {
                let goal = target + Vec3::new(0.0, 0.0, HOVER_HEIGHT);
                let fully_open = z.grip_obs_m >= GripperCommand::MAX_WIDTH_M - 1e-9;
                if (goal - tcp).norm() < 1e-4 && fully_open {
                    self.phase = Phase::Descend;
                }
                Ok(Self::toward(tcp, goal, z.target_rot(), open))
            }
            Phase::Descend => {
                if (target - tcp).norm() < 1e-4 {
                    self.phase = Phase::Close {
                        last_width: z.grip_obs_m,
                        still: 0,
                    };
                    return Ok(Action::hold(closed));
                }
                Ok(Self::toward(tcp, target, z.target_rot(), open))
            }
            Phase::Close { last_width, still } => {
                let still = if (z.grip_obs_m - last_width).abs() < 1e-9 {
                    still + 1
                } else {
                    0
                };
                self.phase = Phase::Close {
                    last_width: z.grip_obs_m,
                    still,
                };
                if still >= 2 {
                    if z.holding() {
                        self.phase = Phase::Lift {
                            goal: tcp + Vec3::new(0.0, 0.0, LIFT_HEIGHT),
                        };
                    } else {
                        self.attempts += 1;
                        if self.attempts >= MAX_REGRASPS {
                            return Err(PolicyError::NoTargetVisible);
                        }
                        self.phase = Phase::Hover;
                        return Ok(Action::hold(open));
                    }
                }
                Ok(Action::hold(closed))
            }
            Phase::Lift { goal } => {
                if (goal - tcp).norm() < 1e-4 {
                    self.phase = Phase::Done;
                    return Ok(Action::stop());
                }
                Ok(Self::toward(tcp, goal, Vec3::zeros(), closed))
            }
            Phase::Done => Ok(Action::stop()),
        }
    }
}
