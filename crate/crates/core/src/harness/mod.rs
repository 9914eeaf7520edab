//! Seeded trial matrices, stage reports and demonstration generation.
//!
//! A matrix is one TOML document:
//!
//! ```toml
//! master_seed = 7
//! trials = 20
//!
//! [detector]
//! max_corrections = 2
//!
//! [[cell]]
//! label = "cpu-self-vla"
//! task = "cpu_extraction"
//! deployment = "self_vla"
//! planner = { kind = "oracle" }
//! faults = { grasp_miss_prob = 0.5 }
//! ```
//!
//! Trial `i` of a cell uses placement `configs[i % configs.len()]` and seed
//! `derive(master_seed, [label_key(label), i])`.

pub mod demos;
pub mod report;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Role, TaskId};
use crate::orchestrator::{
    run_episode, Deployment, DetectorConfig, EpisodeConfig, EpisodeOutput, EpisodeResult, EventKind, OrchestratorError,
    DEFAULT_TIMEOUT_S,
};
use crate::policy::{build_policy, PolicyContext, PolicyError, PolicySpec};
use crate::seed::{derive, label_key};
use crate::skill::{SkillError, SkillLibrary};
use crate::world::layout::{named_config, test_config, ConfigError, TEST_PLACEMENTS};
use crate::world::{init_world, schedule_fault, ComponentConfig, Fault, WorldError, CONTROL_PERIOD_TICKS};

pub use demos::{generate_demos, DemoConfig};
pub use report::{
    aggregate, compare, parse_csv, render_report, CellDelta, CellStats, Comparison, Report, ReportFormat,
};

/// Environment variable that replaces the matrix's master seed.
pub const SEED_ENV: &str = "SELFVLA_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Placement(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("trial {label}#{trial}: {source}")]
    Episode {
        label: String,
        trial: usize,
        source: OrchestratorError,
    },
}

fn default_trials() -> usize {
    20
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultRates {
    #[serde(default)]
    pub grasp_miss_prob: f64,
    /// Probability of a slip at a uniform tick strictly inside placement.
    #[serde(default)]
    pub grasp_slip_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub label: String,
    pub task: TaskId,
    pub deployment: Deployment,
    /// Placement ids; defaults to the five test placements.
    #[serde(default)]
    pub configs: Vec<String>,
    #[serde(default)]
    pub planner: PolicySpec,
    /// Ignored when the corrector is disabled or the deployment is end-to-end.
    #[serde(default)]
    pub corrector: PolicySpec,
    #[serde(default)]
    pub faults: FaultRates,
    /// Overrides the matrix-wide detector settings.
    #[serde(default)]
    pub detector: Option<DetectorConfig>,
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(rename = "cell", default)]
    pub cells: Vec<CellConfig>,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c: HarnessConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.cells.is_empty() {
            return bad("no [[cell]] entries".into());
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive".into());
        }
        self.detector.validate().map_err(HarnessError::Config)?;
        let mut labels = std::collections::BTreeSet::new();
        for c in &self.cells {
            if !labels.insert(c.label.as_str()) {
                return bad(format!("duplicate cell label `{}`", c.label));
            }
            if c.trials.unwrap_or(self.trials) == 0 {
                return bad(format!("cell `{}` has zero trials", c.label));
            }
            for p in [c.faults.grasp_miss_prob, c.faults.grasp_slip_prob] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("cell `{}`: fault probability {p} outside [0, 1]", c.label));
                }
            }
            if let Some(d) = &c.detector {
                d.validate().map_err(HarnessError::Config)?;
            }
            c.planner.validate()?;
            if c.deployment == Deployment::SelfVla && c.planner.is_end_to_end() {
                return bad(format!(
                    "cell `{}`: end_to_end planner needs the end_to_end deployment",
                    c.label
                ));
            }
            for id in &c.configs {
                named_config(c.task, id)?;
            }
        }
        Ok(())
    }

    /// Apply [`SEED_ENV`] when it is set.
    pub fn with_env_seed(mut self) -> Result<Self, HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.master_seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(self)
    }
}

/// Everything needed to run one trial in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub cell: usize,
    pub label: String,
    pub trial: usize,
    pub seed: u64,
    pub task: TaskId,
    pub config: ComponentConfig,
    pub deployment: Deployment,
    pub planner: PolicySpec,
    pub corrector: PolicySpec,
    pub faults: FaultRates,
    pub detector: DetectorConfig,
    pub timeout_s: f64,
}

impl TrialSpec {
    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            deployment: self.deployment,
            detector: self.detector,
            timeout_s: self.timeout_s,
        }
    }

    fn uses_corrector(&self) -> bool {
        self.deployment == Deployment::SelfVla && self.detector.max_corrections > 0
    }
}

/// The trial list, ordered by cell then trial index.
pub fn plan_trials(config: &HarnessConfig) -> Result<Vec<TrialSpec>, HarnessError> {
    let mut out = Vec::new();
    for (ci, c) in config.cells.iter().enumerate() {
        let placements: Vec<ComponentConfig> = if c.configs.is_empty() {
            (0..TEST_PLACEMENTS.len()).map(|i| test_config(c.task, i)).collect()
        } else {
            c.configs
                .iter()
                .map(|id| named_config(c.task, id))
                .collect::<Result<_, _>>()?
        };
        let key = label_key(&c.label);
        for t in 0..c.trials.unwrap_or(config.trials) {
            out.push(TrialSpec {
                cell: ci,
                label: c.label.clone(),
                trial: t,
                seed: derive(config.master_seed, &[key, t as u64]),
                task: c.task,
                config: placements[t % placements.len()].clone(),
                deployment: c.deployment,
                planner: c.planner.clone(),
                corrector: c.corrector.clone(),
                faults: c.faults,
                detector: c.detector.unwrap_or(config.detector),
                timeout_s: config.timeout_s,
            });
        }
    }
    Ok(out)
}

/// Stored per-trial record; one line of `outcomes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub cell: usize,
    pub label: String,
    pub trial: usize,
    pub seed: u64,
    pub task: TaskId,
    pub config_id: String,
    pub deployment: Deployment,
    pub faults: Vec<Fault>,
    #[serde(flatten)]
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub outcome: TrialOutcome,
    pub output: EpisodeOutput,
}

fn execute(spec: &TrialSpec, library: &SkillLibrary, faults: &[Fault]) -> Result<EpisodeOutput, HarnessError> {
    let skill = library
        .for_task(spec.task)
        .ok_or_else(|| HarnessError::Config(format!("no skill for {}", spec.task)))?
        .clone();
    let instruction = spec.task.default_instruction();
    let ctx = |role| PolicyContext {
        role,
        skill: skill.clone(),
        instruction: instruction.clone(),
    };
    let mut planner = build_policy(&spec.planner, &ctx(Role::Planner))?;
    let mut corrector = if spec.uses_corrector() {
        Some(build_policy(&spec.corrector, &ctx(Role::Corrector))?)
    } else {
        None
    };
    let corrector: Option<&mut dyn crate::policy::Policy> = match corrector.as_mut() {
        Some(c) => Some(c.as_mut()),
        None => None,
    };
    let mut world = init_world(&spec.config, spec.seed)?;
    for f in faults {
        world = schedule_fault(&world, *f)?;
    }
    run_episode(
        planner.as_mut(),
        corrector,
        library,
        world,
        &instruction,
        &spec.episode_config(),
    )
    .map_err(|source| HarnessError::Episode {
        label: spec.label.clone(),
        trial: spec.trial,
        source,
    })
}

/// Ticks strictly inside placement during which a slip is well defined:
/// after the placement start is reached and at least two control periods
/// before the release.
fn placement_window(out: &EpisodeOutput) -> Option<(u64, u64)> {
    let tagged = |name: &str, after: u64| {
        out.log.events.iter().find_map(|e| match &e.kind {
            EventKind::WaypointReached { tag: Some(t), .. } if t == name && e.tick >= after => Some(e.tick),
            _ => None,
        })
    };
    let start = tagged("PlacementStart", 0)?;
    let release = tagged("Release", start)?;
    let end = release.checked_sub(2 * u64::from(CONTROL_PERIOD_TICKS))?;
    (end > start + 1).then_some((start + 1, end))
}

/// Run one trial. Fault draws come from the trial seed; a slip tick is
/// placed using a fault-free dry run of the same trial.
pub fn run_trial(spec: &TrialSpec, library: &SkillLibrary) -> Result<TrialRun, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, &[3]));
    let miss = rng.random_bool(spec.faults.grasp_miss_prob);
    let slip = rng.random_bool(spec.faults.grasp_slip_prob);
    let at: f64 = rng.random();

    let mut faults = Vec::new();
    if miss {
        faults.push(Fault::GraspMiss);
    }
    if slip && spec.deployment == Deployment::SelfVla {
        let probe = execute(spec, library, &faults)?;
        if let Some((a, b)) = placement_window(&probe) {
            let tick = a + ((b - a) as f64 * at) as u64;
            faults.push(Fault::GraspSlip { tick: tick.min(b) });
        }
    }
    let output = execute(spec, library, &faults)?;
    Ok(TrialRun {
        outcome: TrialOutcome {
            cell: spec.cell,
            label: spec.label.clone(),
            trial: spec.trial,
            seed: spec.seed,
            task: spec.task,
            config_id: spec.config.id.clone(),
            deployment: spec.deployment,
            faults,
            result: output.result,
        },
        output,
    })
}

/// Run every trial in parallel and map each run through `f`; results come
/// back in plan order.
pub fn run_trials_with<T, F>(config: &HarnessConfig, library: &SkillLibrary, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(&TrialSpec, TrialRun) -> T + Sync,
{
    let plan = plan_trials(config)?;
    plan.par_iter()
        .map(|s| run_trial(s, library).map(|r| f(s, r)))
        .collect()
}

pub fn run_trials(config: &HarnessConfig, library: &SkillLibrary) -> Result<Vec<TrialOutcome>, HarnessError> {
    run_trials_with(config, library, |_, r| r.outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATRIX: &str = r#"
master_seed = 11
trials = 4

[[cell]]
label = "cpu"
task = "cpu_extraction"
deployment = "self_vla"

[[cell]]
label = "ram-e2e"
task = "ram_removal"
deployment = "end_to_end"
configs = ["test-1"]
planner = { kind = "end_to_end", gate_success = 1.0 }
"#;

    #[test]
    fn plan_seeds_and_placements() {
        let c = HarnessConfig::from_toml(MATRIX).unwrap();
        let plan = plan_trials(&c).unwrap();
        assert_eq!(plan.len(), 8);
        assert_eq!(plan[3].config.id, "test-3");
        assert!(plan[4..].iter().all(|s| s.config.id == "test-1"));
        let mut seeds: Vec<u64> = plan.iter().map(|s| s.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn config_errors() {
        let dup = MATRIX.replace("label = \"ram-e2e\"", "label = \"cpu\"");
        assert!(HarnessConfig::from_toml(&dup).is_err());
        let bad_place = MATRIX.replace("test-1", "test-9");
        assert!(HarnessConfig::from_toml(&bad_place).is_err());
        let unknown = format!("{MATRIX}\nbogus = 1\n");
        assert!(HarnessConfig::from_toml(&unknown).is_err());
        let e2e_in_self = MATRIX.replace("deployment = \"end_to_end\"", "deployment = \"self_vla\"");
        assert!(HarnessConfig::from_toml(&e2e_in_self).is_err());
    }

    #[test]
    fn trials_are_order_independent() {
        let c = HarnessConfig::from_toml(MATRIX).unwrap();
        let lib = SkillLibrary::shipped();
        let all = run_trials(&c, &lib).unwrap();
        let plan = plan_trials(&c).unwrap();
        for s in plan.iter().rev() {
            assert_eq!(run_trial(s, &lib).unwrap().outcome, all[s.cell * 4 + s.trial]);
        }
        assert!(all.iter().all(|o| o.result.final_success));
    }

    #[test]
    fn slip_lands_inside_placement() {
        let c = HarnessConfig::from_toml(&MATRIX.replace(
            "deployment = \"self_vla\"",
            "deployment = \"self_vla\"\nfaults = { grasp_slip_prob = 1.0 }",
        ))
        .unwrap();
        let lib = SkillLibrary::shipped();
        for s in plan_trials(&c).unwrap().iter().filter(|s| s.cell == 0) {
            let r = run_trial(s, &lib).unwrap();
            assert!(matches!(r.outcome.faults[..], [Fault::GraspSlip { .. }]));
            assert!(r.output.log.count(|k| matches!(k, EventKind::DropDetected { .. })) == 1);
            assert!(r.outcome.result.final_success, "{:?}", r.output.log.events);
        }
    }
}
