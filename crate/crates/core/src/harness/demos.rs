//! Scripted demonstrations on the training placements.

use rayon::prelude::*;

use crate::control::TaskId;
use crate::episode::{record, Episode};
use crate::orchestrator::{Deployment, DetectorConfig, DEFAULT_TIMEOUT_S};
use crate::policy::PolicySpec;
use crate::seed::{derive, label_key};
use crate::skill::SkillLibrary;
use crate::world::layout::training_config;

use super::{run_trial, FaultRates, HarnessError, TrialSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub task: TaskId,
    /// Successful episodes to keep.
    pub count: usize,
    pub seed: u64,
    pub faults: FaultRates,
    /// Attempts allowed per kept episode before giving up.
    pub attempts_per_demo: usize,
}

impl DemoConfig {
    pub fn new(task: TaskId, count: usize, seed: u64) -> Self {
        Self {
            task,
            count,
            seed,
            faults: FaultRates {
                grasp_miss_prob: 0.25,
                grasp_slip_prob: 0.1,
            },
            attempts_per_demo: 4,
        }
    }

    fn attempt(&self, i: usize) -> TrialSpec {
        let config = training_config(self.task, i);
        TrialSpec {
            cell: 0,
            label: format!("demo-{}", self.task),
            trial: i,
            seed: derive(self.seed, &[label_key(self.task.as_str()), i as u64]),
            task: self.task,
            config,
            deployment: Deployment::SelfVla,
            planner: PolicySpec::oracle(),
            corrector: PolicySpec::oracle(),
            faults: self.faults,
            detector: DetectorConfig::default(),
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }
}

/// Record successful oracle episodes in attempt order until `count` are kept.
pub fn generate_demos(config: &DemoConfig, library: &SkillLibrary) -> Result<Vec<Episode>, HarnessError> {
    let limit = config.count * config.attempts_per_demo.max(1);
    let mut kept = Vec::with_capacity(config.count);
    let mut next = 0;
    while kept.len() < config.count && next < limit {
        let batch = (config.count - kept.len()).max(16).min(limit - next);
        let runs = (next..next + batch)
            .into_par_iter()
            .map(|i| run_trial(&config.attempt(i), library))
            .collect::<Result<Vec<_>, _>>()?;
        next += batch;
        for r in runs {
            if r.outcome.result.final_success && kept.len() < config.count {
                kept.push(record(&r.output));
            }
        }
    }
    if kept.len() < config.count {
        return Err(HarnessError::Config(format!(
            "only {} of {} demonstrations succeeded in {limit} attempts",
            kept.len(),
            config.count
        )));
    }
    Ok(kept)
}
