//! Phase labeling from the orchestrator's event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::Mode;
use crate::orchestrator::{Event, EventKind};
use crate::skill::Section;

use super::{downsample_frames, Episode, Frame, ZeroFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approaching,
    SkillExecution,
    Correction,
    SkillResumption,
}

/// Inclusive range of frame positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub phase: Phase,
    pub first: usize,
    pub last: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpisode {
    pub episode: Episode,
    pub spans: Vec<Span>,
    /// Frames from just before the pick-up close through the lift waypoint,
    /// when the lift completed.
    pub pick_lift: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("event `{kind}` at tick {tick} does not line up with the recorded frames")]
    Misaligned { kind: String, tick: u64 },
    #[error("frame {index} was recorded during the recovery pause")]
    IdleFrame { index: usize },
    #[error("phase order {0:?} is not approaching, skill, (correction, resumption)*")]
    Order(Vec<Phase>),
    #[error("episode has no frames")]
    Empty,
}

fn kind_name(k: &EventKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.get("kind").and_then(|s| s.as_str()).map(str::to_owned))
        .unwrap_or_default()
}

/// Split the frame stream into its phases and check it against `events`.
pub fn label_phases(episode: Episode) -> Result<LabeledEpisode, LabelError> {
    let frames = &episode.frames;
    if frames.is_empty() {
        return Err(LabelError::Empty);
    }
    let position: BTreeMap<u64, usize> = frames.iter().enumerate().map(|(i, f)| (f.tick, i)).collect();

    let mut spans: Vec<Span> = Vec::new();
    let mut corrected = false;
    for (i, f) in frames.iter().enumerate() {
        let phase = match f.mode {
            Mode::Planner => Phase::Approaching,
            Mode::Corrector => {
                corrected = true;
                Phase::Correction
            }
            Mode::Skill if corrected => Phase::SkillResumption,
            Mode::Skill => Phase::SkillExecution,
        };
        match spans.last_mut() {
            Some(s) if s.phase == phase => s.last = i,
            _ => spans.push(Span {
                phase,
                first: i,
                last: i,
            }),
        }
    }
    check_order(&spans)?;

    let last_tick = frames[frames.len() - 1].tick;
    let misaligned = |e: &Event| LabelError::Misaligned {
        kind: kind_name(&e.kind),
        tick: e.tick,
    };
    let span_at = |tick: u64| {
        position
            .get(&tick)
            .and_then(|&p| spans.iter().find(|s| s.first <= p && p <= s.last))
    };
    let mut detection: Option<u64> = None;
    let mut pickup: Option<(usize, Option<usize>)> = None;
    let mut pick_lift = None;
    for e in &episode.events {
        match &e.kind {
            EventKind::StopTokenEmitted { mode } => {
                let want = match mode {
                    Mode::Planner => Phase::Approaching,
                    _ => Phase::Correction,
                };
                match span_at(e.tick) {
                    Some(s) if s.phase == want && frames[s.last].tick == e.tick => {}
                    _ => return Err(misaligned(e)),
                }
            }
            EventKind::GraspFailureDetected { .. } | EventKind::DropDetected { .. } => detection = Some(e.tick),
            EventKind::CorrectorActivated { .. } => {
                let from = detection.take().ok_or_else(|| misaligned(e))?;
                if let Some(f) = frames.iter().find(|f| f.tick > from && f.tick < e.tick) {
                    return Err(LabelError::IdleFrame { index: f.index });
                }
                if e.tick <= last_tick {
                    match span_at(e.tick) {
                        Some(s) if s.phase == Phase::Correction && frames[s.first].tick == e.tick => {}
                        _ => return Err(misaligned(e)),
                    }
                }
            }
            EventKind::WaypointReached {
                section: Section::Extraction,
                tag: Some(t),
                ..
            } => {
                let p = *position.get(&e.tick).ok_or_else(|| misaligned(e))?;
                let span = spans.iter().position(|s| s.first <= p && p <= s.last);
                if t == "PickUp" {
                    pickup = Some((p, span));
                } else if t == "Lift" && pick_lift.is_none() {
                    // first complete pick and lift inside a single skill span
                    if let Some((q, s)) = pickup.filter(|&(q, s)| s == span && q <= p) {
                        let floor = s.map_or(q, |s| spans[s].first);
                        pick_lift = Some((q.saturating_sub(1).max(floor), p));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(LabeledEpisode {
        episode,
        spans,
        pick_lift,
    })
}

fn check_order(spans: &[Span]) -> Result<(), LabelError> {
    let phases: Vec<Phase> = spans.iter().map(|s| s.phase).collect();
    let ok = phases.iter().enumerate().all(|(i, p)| {
        let expected = match i {
            0 => Phase::Approaching,
            1 => Phase::SkillExecution,
            i if i % 2 == 0 => Phase::Correction,
            _ => Phase::SkillResumption,
        };
        *p == expected
    });
    if ok {
        Ok(())
    } else {
        Err(LabelError::Order(phases))
    }
}

impl LabeledEpisode {
    pub fn frames(&self) -> &[Frame] {
        &self.episode.frames
    }

    pub fn segment(&self, span: &Span) -> &[Frame] {
        &self.episode.frames[span.first..=span.last]
    }

    pub fn spans_of(&self, phase: Phase) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(move |s| s.phase == phase)
    }

    /// Downsample each phase span independently.
    pub fn downsample(&self, factor: usize) -> Result<LabeledEpisode, ZeroFactor> {
        let mut frames = Vec::new();
        let mut spans = Vec::new();
        let mut kept_indices = Vec::new();
        for s in &self.spans {
            let seg = downsample_frames(self.segment(s), factor)?;
            let first = frames.len();
            kept_indices.extend(seg.iter().map(|f| f.index));
            frames.extend(seg);
            spans.push(Span {
                phase: s.phase,
                first,
                last: frames.len() - 1,
            });
        }
        let pick_lift = self.pick_lift.and_then(|(a, b)| {
            let (ia, ib) = (self.frames()[a].index, self.frames()[b].index);
            let start = kept_indices.iter().position(|&i| i >= ia)?;
            let end = kept_indices.iter().rposition(|&i| i <= ib)?;
            (start <= end).then_some((start, end))
        });
        Ok(LabeledEpisode {
            episode: Episode {
                frames,
                rate_hz: (self.episode.rate_hz as usize / factor).max(1) as u32,
                ..self.episode.clone()
            },
            spans,
            pick_lift,
        })
    }
}
