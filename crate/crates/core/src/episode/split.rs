//! Planner, corrector and end-to-end training splits.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::TaskId;
use crate::orchestrator::EventKind;

use super::{
    append_stop_frames, downsample_frames, strip_stop_tail, Frame, LabeledEpisode, Phase, ZeroFactor, STOP_FRAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Planner,
    Corrector,
    EndToEnd,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Planner, SplitName::Corrector, SplitName::EndToEnd];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Planner => "planner",
            SplitName::Corrector => "corrector",
            SplitName::EndToEnd => "end_to_end",
        }
    }

    fn ends_in_stop(self) -> bool {
        self != SplitName::EndToEnd
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Approaching,
    Correction,
    PickLift,
    FullEpisode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Position of the source episode in the input list.
    pub episode: usize,
    pub task: TaskId,
    pub config_id: String,
    pub source: TrajectorySource,
    pub rate_hz: u32,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub planner: DatasetSplit,
    pub corrector: DatasetSplit,
    pub end_to_end: DatasetSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("episode {episode} has no pick-up event")]
    NoPickUp { episode: usize },
    #[error("{split} trajectory {trajectory}: {reason}")]
    Invariant {
        split: SplitName,
        trajectory: usize,
        reason: String,
    },
    #[error("episode {episode}: frame {index} appears in both planner and corrector data")]
    Leakage { episode: usize, index: usize },
    #[error(transparent)]
    Factor(#[from] ZeroFactor),
}

/// Segment with exactly [`STOP_FRAMES`] stop frames at its end.
fn with_stop_triple(segment: &[Frame]) -> Vec<Frame> {
    let body = strip_stop_tail(segment);
    if body.is_empty() {
        // only the stop itself was recorded; keep its observation
        return append_stop_frames(&segment[..1]).split_off(1);
    }
    append_stop_frames(body)
}

pub fn build_splits(episodes: &[LabeledEpisode]) -> Result<Splits, SplitError> {
    let mut planner = Vec::new();
    let mut corrector = Vec::new();
    let mut end_to_end = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let traj = |source, frames| Trajectory {
            episode: i,
            task: ep.episode.task,
            config_id: ep.episode.config_id.clone(),
            source,
            rate_hz: ep.episode.rate_hz,
            frames,
        };
        let picked = ep
            .episode
            .events
            .iter()
            .any(|e| matches!(&e.kind, EventKind::WaypointReached { tag: Some(t), .. } if t == "PickUp"));
        if !picked {
            return Err(SplitError::NoPickUp { episode: i });
        }
        let mut planner_idx = BTreeSet::new();
        for s in ep.spans_of(Phase::Approaching) {
            let seg = ep.segment(s);
            planner_idx.extend(seg.iter().map(|f| f.index));
            planner.push(traj(TrajectorySource::Approaching, with_stop_triple(seg)));
        }
        let mut corrector_idx = BTreeSet::new();
        for s in ep.spans_of(Phase::Correction) {
            let seg = ep.segment(s);
            corrector_idx.extend(seg.iter().map(|f| f.index));
            corrector.push(traj(TrajectorySource::Correction, with_stop_triple(seg)));
        }
        // a grasp that failed before the lift contributes no pick and lift
        if let Some((a, b)) = ep.pick_lift {
            let pick = &ep.frames()[a..=b];
            corrector_idx.extend(pick.iter().map(|f| f.index));
            corrector.push(traj(TrajectorySource::PickLift, with_stop_triple(pick)));
        }
        if let Some(&index) = planner_idx.intersection(&corrector_idx).next() {
            return Err(SplitError::Leakage { episode: i, index });
        }
        let full = ep.frames().iter().filter(|f| !f.is_stop()).cloned().collect();
        end_to_end.push(traj(TrajectorySource::FullEpisode, full));
    }
    let splits = Splits {
        planner: DatasetSplit {
            name: SplitName::Planner,
            trajectories: planner,
        },
        corrector: DatasetSplit {
            name: SplitName::Corrector,
            trajectories: corrector,
        },
        end_to_end: DatasetSplit {
            name: SplitName::EndToEnd,
            trajectories: end_to_end,
        },
    };
    for s in splits.iter() {
        s.validate()?;
    }
    Ok(splits)
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &DatasetSplit> {
        [&self.planner, &self.corrector, &self.end_to_end].into_iter()
    }

    pub fn downsample(&self, factor: usize) -> Result<Splits, ZeroFactor> {
        Ok(Splits {
            planner: self.planner.downsample(factor)?,
            corrector: self.corrector.downsample(factor)?,
            end_to_end: self.end_to_end.downsample(factor)?,
        })
    }
}

/// Number of trailing stop frames.
pub fn stop_tail_len(frames: &[Frame]) -> usize {
    frames.iter().rev().take_while(|f| f.is_stop()).count()
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        for (k, t) in self.trajectories.iter().enumerate() {
            let fail = |reason: String| SplitError::Invariant {
                split: self.name,
                trajectory: k,
                reason,
            };
            let stops = t.frames.iter().filter(|f| f.is_stop()).count();
            if self.name.ends_in_stop() {
                let tail = stop_tail_len(&t.frames);
                if tail != STOP_FRAMES || stops != STOP_FRAMES {
                    return Err(fail(format!("{stops} stop frames, {tail} at the end")));
                }
                if t.frames[t.frames.len() - STOP_FRAMES..]
                    .iter()
                    .any(|f| !f.action.motion.is_zero())
                {
                    return Err(fail("stop frame with nonzero motion".into()));
                }
            } else if stops != 0 {
                return Err(fail(format!("{stops} stop frames")));
            }
            if t.frames.windows(2).any(|w| w[1].time_s <= w[0].time_s) {
                return Err(fail("frame times not increasing".into()));
            }
        }
        Ok(())
    }

    pub fn downsample(&self, factor: usize) -> Result<DatasetSplit, ZeroFactor> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| {
                Ok(Trajectory {
                    frames: downsample_frames(&t.frames, factor)?,
                    rate_hz: (t.rate_hz as usize / factor).max(1) as u32,
                    ..t.clone()
                })
            })
            .collect::<Result<_, ZeroFactor>>()?;
        Ok(DatasetSplit {
            name: self.name,
            trajectories,
        })
    }
}
