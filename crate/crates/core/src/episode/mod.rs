//! Demonstration data: recording, phase labels, training splits and files.
//!
//! Frames are one per 30 Hz control step. The recovery pause that follows a
//! failure detection is not recorded.

pub mod io;
pub mod label;
pub mod split;

use thiserror::Error;

use crate::control::{Action, Mode, TaskId};
use crate::orchestrator::{EpisodeOutput, EpisodeResult, Event};
use crate::world::{Observation, BASE_DT, CONTROL_DT, CONTROL_PERIOD_TICKS, CONTROL_RATE_HZ};

pub use label::{label_phases, LabelError, LabeledEpisode, Phase, Span};
pub use split::{
    build_splits, stop_tail_len, DatasetSplit, SplitError, SplitName, Splits, Trajectory, TrajectorySource,
};

/// Frames appended to an approaching or correction segment.
pub const STOP_FRAMES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Position in the original 30 Hz recording.
    pub index: usize,
    pub tick: u64,
    pub time_s: f64,
    pub mode: Mode,
    pub observation: Observation,
    pub action: Action,
}

impl Frame {
    pub fn is_stop(&self) -> bool {
        self.action.is_stop()
    }
}

/// A recorded, not yet labeled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: TaskId,
    pub config_id: String,
    pub rate_hz: u32,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    pub outcome: EpisodeResult,
}

/// One frame per executed control step, skipping the recovery pause.
pub fn record(output: &EpisodeOutput) -> Episode {
    let frames = output
        .log
        .steps
        .iter()
        .filter(|s| !s.paused)
        .enumerate()
        .map(|(index, s)| Frame {
            index,
            tick: s.observation.tick,
            time_s: s.observation.tick as f64 * BASE_DT,
            mode: s.mode,
            observation: s.observation.clone(),
            action: s.action,
        })
        .collect();
    Episode {
        task: output.world.config.task,
        config_id: output.world.config.id.clone(),
        rate_hz: CONTROL_RATE_HZ,
        frames,
        events: output.log.events.clone(),
        outcome: output.result,
    }
}

/// Append exactly [`STOP_FRAMES`] stop frames copying the last observation.
///
/// # Panics
/// On an empty segment.
pub fn append_stop_frames(segment: &[Frame]) -> Vec<Frame> {
    let last = segment.last().expect("append_stop_frames on an empty segment");
    let mut out = segment.to_vec();
    for k in 1..=STOP_FRAMES {
        out.push(Frame {
            index: last.index + k,
            tick: last.tick + k as u64 * u64::from(CONTROL_PERIOD_TICKS),
            time_s: last.time_s + k as f64 * CONTROL_DT,
            mode: last.mode,
            observation: last.observation.clone(),
            action: Action::stop(),
        });
    }
    out
}

/// The segment without its trailing run of stop frames.
pub fn strip_stop_tail(segment: &[Frame]) -> &[Frame] {
    let keep = segment.len() - segment.iter().rev().take_while(|f| f.is_stop()).count();
    &segment[..keep]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("downsampling factor must be at least 1")]
pub struct ZeroFactor;

/// Keep every `factor`-th frame of a segment, counted from its first frame.
/// A trailing run of stop frames is kept intact.
pub fn downsample_frames(segment: &[Frame], factor: usize) -> Result<Vec<Frame>, ZeroFactor> {
    if factor == 0 {
        return Err(ZeroFactor);
    }
    let body = strip_stop_tail(segment);
    let mut out: Vec<Frame> = body.iter().step_by(factor).cloned().collect();
    out.extend_from_slice(&segment[body.len()..]);
    Ok(out)
}
