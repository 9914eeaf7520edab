//! Line-delimited JSON episode and split files.
//!
//! A file is a sequence of records. Each episode or trajectory starts with a
//! header line naming its frame count, followed by that many frame lines:
//!
//! ```text
//! {"record":"episode","format_version":1,"task":"cpu_extraction",...,"frame_count":2}
//! {"index":0,"tick":0,"time_s":0.0,"mode":"planner","observation":{...},"action":{...}}
//! {"index":1,"tick":10,...}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{Action, ActionRecord, Mode, TaskId};
use crate::orchestrator::{EpisodeResult, Event};
use crate::world::ObservationRecord;

use super::{DatasetSplit, Episode, Frame, LabeledEpisode, Span, SplitName, Trajectory, TrajectorySource};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EpisodeIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    index: usize,
    tick: u64,
    time_s: f64,
    mode: Mode,
    observation: ObservationRecord,
    action: ActionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeHeader {
    format_version: u32,
    task: TaskId,
    config_id: String,
    rate_hz: u32,
    outcome: EpisodeResult,
    events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<Span>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pick_lift: Option<(usize, usize)>,
    frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryHeader {
    format_version: u32,
    split: SplitName,
    episode: usize,
    task: TaskId,
    config_id: String,
    source: TrajectorySource,
    rate_hz: u32,
    frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Header {
    Episode(EpisodeHeader),
    Trajectory(TrajectoryHeader),
}

/// An episode as stored, with phase labels when it has been labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub episode: Episode,
    pub spans: Option<Vec<Span>>,
    pub pick_lift: Option<(usize, usize)>,
}

impl From<LabeledEpisode> for StoredEpisode {
    fn from(l: LabeledEpisode) -> Self {
        Self {
            episode: l.episode,
            spans: Some(l.spans),
            pick_lift: l.pick_lift,
        }
    }
}

impl StoredEpisode {
    pub fn raw(episode: Episode) -> Self {
        Self {
            episode,
            spans: None,
            pick_lift: None,
        }
    }

    /// The stored labels, if any, without relabeling.
    pub fn labeled(self) -> Option<LabeledEpisode> {
        Some(LabeledEpisode {
            spans: self.spans?,
            pick_lift: self.pick_lift,
            episode: self.episode,
        })
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")
}

fn write_frames<W: Write>(w: &mut W, frames: &[Frame]) -> std::io::Result<()> {
    for f in frames {
        write_line(
            w,
            &FrameLine {
                index: f.index,
                tick: f.tick,
                time_s: f.time_s,
                mode: f.mode,
                observation: ObservationRecord::from(&f.observation),
                action: ActionRecord::from(&f.action),
            },
        )?;
    }
    Ok(())
}

pub fn write_episode<W: Write>(w: &mut W, stored: &StoredEpisode) -> std::io::Result<()> {
    let ep = &stored.episode;
    write_line(
        w,
        &Header::Episode(EpisodeHeader {
            format_version: FORMAT_VERSION,
            task: ep.task,
            config_id: ep.config_id.clone(),
            rate_hz: ep.rate_hz,
            outcome: ep.outcome,
            events: ep.events.clone(),
            spans: stored.spans.clone(),
            pick_lift: stored.pick_lift,
            frame_count: ep.frames.len(),
        }),
    )?;
    write_frames(w, &ep.frames)
}

pub fn write_split<W: Write>(w: &mut W, split: &DatasetSplit) -> std::io::Result<()> {
    for t in &split.trajectories {
        write_line(
            w,
            &Header::Trajectory(TrajectoryHeader {
                format_version: FORMAT_VERSION,
                split: split.name,
                episode: t.episode,
                task: t.task,
                config_id: t.config_id.clone(),
                source: t.source,
                rate_hz: t.rate_hz,
                frame_count: t.frames.len(),
            }),
        )?;
        write_frames(w, &t.frames)?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R) -> Self {
        Self {
            inner: r.lines(),
            line: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> EpisodeIoError {
        EpisodeIoError::Format {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_record<T: for<'de> Deserialize<'de>>(&mut self) -> Result<Option<T>, EpisodeIoError> {
        loop {
            let Some(text) = self.inner.next().transpose()? else {
                return Ok(None);
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| self.err(e.to_string()));
        }
    }

    fn frames(&mut self, count: usize) -> Result<Vec<Frame>, EpisodeIoError> {
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            let f: FrameLine = self.next_record()?.ok_or_else(|| self.err("unexpected end of file"))?;
            let observation = f.observation.to_observation().ok_or_else(|| self.err("invalid pose"))?;
            let action = Action::try_from(&f.action).map_err(|e| self.err(e.to_string()))?;
            frames.push(Frame {
                index: f.index,
                tick: f.tick,
                time_s: f.time_s,
                mode: f.mode,
                observation,
                action,
            });
        }
        Ok(frames)
    }

    fn header(&mut self) -> Result<Option<Header>, EpisodeIoError> {
        let h: Option<Header> = self.next_record()?;
        let version = match &h {
            Some(Header::Episode(e)) => e.format_version,
            Some(Header::Trajectory(t)) => t.format_version,
            None => return Ok(None),
        };
        if version != FORMAT_VERSION {
            return Err(self.err(format!("unsupported format version {version}")));
        }
        Ok(h)
    }
}

pub fn read_episodes<R: BufRead>(r: R) -> Result<Vec<StoredEpisode>, EpisodeIoError> {
    let mut lines = Lines::new(r);
    let mut out = Vec::new();
    while let Some(h) = lines.header()? {
        let Header::Episode(h) = h else {
            return Err(lines.err("expected an episode record"));
        };
        let frames = lines.frames(h.frame_count)?;
        out.push(StoredEpisode {
            episode: Episode {
                task: h.task,
                config_id: h.config_id,
                rate_hz: h.rate_hz,
                frames,
                events: h.events,
                outcome: h.outcome,
            },
            spans: h.spans,
            pick_lift: h.pick_lift,
        });
    }
    Ok(out)
}

pub fn read_split<R: BufRead>(r: R) -> Result<DatasetSplit, EpisodeIoError> {
    let mut lines = Lines::new(r);
    let mut name = None;
    let mut trajectories = Vec::new();
    while let Some(h) = lines.header()? {
        let Header::Trajectory(h) = h else {
            return Err(lines.err("expected a trajectory record"));
        };
        if *name.get_or_insert(h.split) != h.split {
            return Err(lines.err("trajectories from different splits in one file"));
        }
        let frames = lines.frames(h.frame_count)?;
        trajectories.push(Trajectory {
            episode: h.episode,
            task: h.task,
            config_id: h.config_id,
            source: h.source,
            rate_hz: h.rate_hz,
            frames,
        });
    }
    let name = name.ok_or_else(|| lines.err("empty split file"))?;
    Ok(DatasetSplit { name, trajectories })
}

/// Contents of either kind of file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredFile {
    Episodes(Vec<StoredEpisode>),
    Split(DatasetSplit),
}

/// Read a file whose kind is given by its first record.
pub fn read_any<R: BufRead>(mut r: R) -> Result<StoredFile, EpisodeIoError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    let kind = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .and_then(|v| v.get("record").and_then(|k| k.as_str()).map(str::to_owned));
    match kind.as_deref() {
        Some("trajectory") => read_split(text.as_bytes()).map(StoredFile::Split),
        _ => read_episodes(text.as_bytes()).map(StoredFile::Episodes),
    }
}
