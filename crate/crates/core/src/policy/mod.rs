//! Policy boundary for the planner and corrector.
//!
//! In-process scripted policies and external servers share the [`Policy`]
//! trait; [`PolicySpec`] is the serializable description used by harness
//! configs and the CLI.

pub mod e2e;
pub mod encode;
pub mod external;
pub mod scripted;
pub mod wire;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Action, Instruction, Role};
use crate::geometry::Vec3;
use crate::skill::SkillDefinition;

pub use e2e::EndToEndStandIn;
pub use encode::{encode_instruction, encode_observation, EncodedObservation, InstructionEmbedding};
pub use external::{Endpoint, ExternalPolicy};
pub use scripted::{OracleCorrector, ScriptedPlanner, StopRule};

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("no graspable component visible")]
    NoTargetVisible,
    #[error("policy unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid policy spec: {0}")]
    InvalidSpec(String),
}

pub trait Policy: Send {
    /// Start a new episode; scripted policies reseed their RNG here.
    fn reset(&mut self, seed: u64) -> Result<(), PolicyError>;

    fn act(&mut self, z: &EncodedObservation, e: &InstructionEmbedding, tick: u64) -> Result<Action, PolicyError>;

    /// The policy considers its episode over. Only meaningful for end-to-end
    /// policies, which never hand control to a skill.
    fn is_idle(&self) -> bool {
        false
    }
}

fn default_early_stop_distance() -> f64 {
    0.03
}

/// Serializable description of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Planner: approach and stop within the skill's trigger tolerance.
    /// Corrector: regrasp the free component, lift, stop.
    Oracle {
        #[serde(default)]
        noise_sigma_m: f64,
        /// Per-episode probability of stopping `early_stop_distance_m` short.
        #[serde(default)]
        early_stop_prob: f64,
        #[serde(default = "default_early_stop_distance")]
        early_stop_distance_m: f64,
    },
    NeverStops,
    StopsEarly {
        distance_m: f64,
    },
    Drift {
        bias_m: [f64; 3],
    },
    /// Monolithic policy that also performs the extraction itself.
    EndToEnd {
        gate_success: f64,
        #[serde(default)]
        early_stop_prob: f64,
    },
    External {
        #[serde(default)]
        tcp: Option<String>,
        #[serde(default)]
        command: Option<Vec<String>>,
    },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::oracle()
    }
}

impl PolicySpec {
    pub fn oracle() -> Self {
        PolicySpec::Oracle {
            noise_sigma_m: 0.0,
            early_stop_prob: 0.0,
            early_stop_distance_m: default_early_stop_distance(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let prob = |p: f64, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(PolicyError::InvalidSpec(format!("{name} = {p} outside [0, 1]")))
            }
        };
        let nonneg = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(PolicyError::InvalidSpec(format!(
                    "{name} must be finite and non-negative"
                )))
            }
        };
        match self {
            PolicySpec::Oracle {
                noise_sigma_m,
                early_stop_prob,
                early_stop_distance_m,
            } => {
                nonneg(*noise_sigma_m, "noise_sigma_m")?;
                nonneg(*early_stop_distance_m, "early_stop_distance_m")?;
                prob(*early_stop_prob, "early_stop_prob")
            }
            PolicySpec::NeverStops => Ok(()),
            PolicySpec::StopsEarly { distance_m } => nonneg(*distance_m, "distance_m"),
            PolicySpec::Drift { bias_m } => {
                if bias_m.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(PolicyError::InvalidSpec("bias_m must be finite".into()))
                }
            }
            PolicySpec::EndToEnd {
                gate_success,
                early_stop_prob,
            } => {
                prob(*gate_success, "gate_success")?;
                prob(*early_stop_prob, "early_stop_prob")
            }
            PolicySpec::External { .. } => self.endpoint().map(|_| ()),
        }
    }

    pub fn endpoint(&self) -> Result<Endpoint, PolicyError> {
        match self {
            PolicySpec::External {
                tcp: Some(a),
                command: None,
            } => Ok(Endpoint::Tcp(a.clone())),
            PolicySpec::External {
                tcp: None,
                command: Some(c),
            } if !c.is_empty() => Ok(Endpoint::Command(c.clone())),
            PolicySpec::External { .. } => Err(PolicyError::InvalidSpec(
                "external policy needs exactly one of `tcp` or a non-empty `command`".into(),
            )),
            _ => Err(PolicyError::InvalidSpec("not an external policy".into())),
        }
    }

    pub fn is_end_to_end(&self) -> bool {
        matches!(self, PolicySpec::EndToEnd { .. })
    }
}

/// What a policy needs to know about its episode at construction.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub role: Role,
    pub skill: SkillDefinition,
    pub instruction: Instruction,
}

pub fn build_policy(spec: &PolicySpec, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
    spec.validate()?;
    let tol = ctx.skill.trigger_tolerance;
    let policy: Box<dyn Policy> = match (spec, ctx.role) {
        (PolicySpec::External { .. }, role) => Box::new(ExternalPolicy::connect(
            &spec.endpoint()?,
            role,
            ctx.instruction.text(),
            DEFAULT_QUERY_TIMEOUT,
        )?),
        (PolicySpec::Oracle { .. }, Role::Corrector) => Box::new(OracleCorrector::new()),
        (
            PolicySpec::EndToEnd {
                gate_success,
                early_stop_prob,
            },
            _,
        ) => Box::new(EndToEndStandIn::new(ctx.skill.clone(), *gate_success, *early_stop_prob)),
        (_, Role::Corrector) => {
            return Err(PolicyError::InvalidSpec(
                "corrector must be `oracle` or `external`".into(),
            ));
        }
        (
            PolicySpec::Oracle {
                noise_sigma_m,
                early_stop_prob,
                early_stop_distance_m,
            },
            Role::Planner,
        ) => Box::new(
            ScriptedPlanner::new(tol, StopRule::Tolerance)
                .with_noise(*noise_sigma_m)
                .with_early_stop(*early_stop_prob, *early_stop_distance_m),
        ),
        (PolicySpec::NeverStops, Role::Planner) => Box::new(ScriptedPlanner::new(tol, StopRule::Never)),
        (PolicySpec::StopsEarly { distance_m }, Role::Planner) => {
            Box::new(ScriptedPlanner::new(tol, StopRule::Within(*distance_m)))
        }
        (PolicySpec::Drift { bias_m }, Role::Planner) => {
            Box::new(ScriptedPlanner::new(tol, StopRule::Tolerance).with_bias(Vec3::from(*bias_m)))
        }
    };
    Ok(policy)
}

/// One validated policy round trip.
pub fn query(
    policy: &mut dyn Policy,
    z: &EncodedObservation,
    e: &InstructionEmbedding,
    tick: u64,
) -> Result<Action, PolicyError> {
    let a = policy.act(z, e, tick)?;
    let m = a.motion;
    if crate::geometry::DeltaMotion::new(m.translation, m.rotation).is_none() {
        return Err(PolicyError::Protocol("non-finite or over-range motion".into()));
    }
    Ok(a)
}
