//! Waypoint skills: persistence, validation, selection and resolution.
//!
//! A skill has an extraction section authored relative to the trigger pose
//! and a placement section in the robot base frame. [`resolve`] anchors the
//! extraction section at the pose where the planner stopped;
//! [`resolve_remaining`] yields only the placement section, used after a
//! correction.

pub mod blend;
pub mod controller;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{GripperCommand, TaskId};
use crate::geometry::{compose, Pose};
use crate::policy::encode::InstructionEmbedding;
use crate::world::layout::MAX_LINEAR_SPEED;

pub use blend::{blend, blend_from, BlendedPath, Segment, SegmentKind, Station};
pub use controller::{controller_step, ControlOutput, ControllerState, TrackingLost};

pub const CPU_SKILL_SOURCE: &str = include_str!("../../skills/cpu_extraction.skill");
pub const RAM_SKILL_SOURCE: &str = include_str!("../../skills/ram_removal.skill");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointFrame {
    /// Offset from the trigger pose.
    Relative,
    Base,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WaypointTag {
    PickUp,
    PlacementStart,
    Other(String),
}

impl WaypointTag {
    pub fn parse(s: &str) -> Self {
        match s {
            "PickUp" => WaypointTag::PickUp,
            "PlacementStart" => WaypointTag::PlacementStart,
            other => WaypointTag::Other(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            WaypointTag::PickUp => "PickUp",
            WaypointTag::PlacementStart => "PlacementStart",
            WaypointTag::Other(s) => s,
        }
    }

    pub fn is(&self, name: &str) -> bool {
        self.as_str() == name
    }
}

impl fmt::Display for WaypointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub frame: WaypointFrame,
    pub target: Pose,
    pub blend_radius: f64,
    pub speed: f64,
    pub gripper: GripperCommand,
    pub dwell: f64,
    pub tag: Option<WaypointTag>,
}

impl Waypoint {
    pub fn has_tag(&self, name: &str) -> bool {
        self.tag.as_ref().is_some_and(|t| t.is(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerTolerance {
    pub pos_m: f64,
    pub rot_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillDefinition {
    pub id: String,
    pub instruction_keywords: Vec<String>,
    pub extraction: Vec<Waypoint>,
    pub placement: Vec<Waypoint>,
    pub expected_grasp_width: f64,
    pub failure_threshold: f64,
    pub trigger_tolerance: TriggerTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Extraction,
    Placement,
    /// Synthetic segment from the TCP to the first placement waypoint on resume.
    LeadIn,
}

/// Where a resolved waypoint came from in its skill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaypointRef {
    pub section: Section,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOrigin {
    Full,
    PlacementOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedWaypoint {
    pub waypoint: Waypoint,
    pub source: WaypointRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTrajectory {
    pub waypoints: Vec<ResolvedWaypoint>,
    pub origin: TrajectoryOrigin,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkillError {
    #[error("skill file line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("skill `{skill}` {locus}: {reason}")]
    Invalid {
        skill: String,
        locus: String,
        reason: String,
    },
    #[error("no skill matches the instruction")]
    NoMatchingSkill,
    #[error("duplicate skill id `{0}`")]
    Duplicate(String),
}

// ---------------------------------------------------------------------------
// file schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkillFile {
    id: String,
    keywords: Vec<String>,
    expected_grasp_width_m: f64,
    failure_threshold_m: f64,
    trigger_tolerance: TriggerTolerance,
    extraction: Vec<WaypointFile>,
    placement: Vec<WaypointFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointFile {
    frame: WaypointFrame,
    pos_m: [f64; 3],
    quat_wxyz: [f64; 4],
    blend_radius_m: f64,
    speed_mps: f64,
    gripper: u8,
    dwell_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

impl From<&Waypoint> for WaypointFile {
    fn from(w: &Waypoint) -> Self {
        Self {
            frame: w.frame,
            pos_m: w.target.position_array(),
            quat_wxyz: w.target.quat_wxyz(),
            blend_radius_m: w.blend_radius,
            speed_mps: w.speed,
            gripper: w.gripper.value(),
            dwell_s: w.dwell,
            tag: w.tag.as_ref().map(|t| t.as_str().to_owned()),
        }
    }
}

/// Parse and validate one skill document.
pub fn load_skill(source: &[u8]) -> Result<SkillDefinition, SkillError> {
    let file: SkillFile = serde_json::from_slice(source).map_err(|e| SkillError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let invalid = |locus: String, reason: String| SkillError::Invalid {
        skill: file.id.clone(),
        locus,
        reason,
    };
    let convert = |section: &str, list: &[WaypointFile]| -> Result<Vec<Waypoint>, SkillError> {
        list.iter()
            .enumerate()
            .map(|(i, w)| {
                let locus = format!("{section}[{i}]");
                let target = Pose::from_parts(w.pos_m, w.quat_wxyz)
                    .ok_or_else(|| invalid(locus.clone(), "non-finite or zero pose".into()))?;
                let gripper = GripperCommand::physical(w.gripper).map_err(|e| invalid(locus.clone(), e.to_string()))?;
                Ok(Waypoint {
                    frame: w.frame,
                    target,
                    blend_radius: w.blend_radius_m,
                    speed: w.speed_mps,
                    gripper,
                    dwell: w.dwell_s,
                    tag: w.tag.as_deref().map(WaypointTag::parse),
                })
            })
            .collect()
    };
    let skill = SkillDefinition {
        id: file.id.clone(),
        instruction_keywords: file.keywords.iter().map(|k| k.to_lowercase()).collect(),
        extraction: convert("extraction", &file.extraction)?,
        placement: convert("placement", &file.placement)?,
        expected_grasp_width: file.expected_grasp_width_m,
        failure_threshold: file.failure_threshold_m,
        trigger_tolerance: file.trigger_tolerance,
    };
    skill.validate()?;
    Ok(skill)
}

/// Serialize a skill back to its file form.
pub fn to_skill_json(skill: &SkillDefinition) -> String {
    let file = SkillFile {
        id: skill.id.clone(),
        keywords: skill.instruction_keywords.clone(),
        expected_grasp_width_m: skill.expected_grasp_width,
        failure_threshold_m: skill.failure_threshold,
        trigger_tolerance: skill.trigger_tolerance,
        extraction: skill.extraction.iter().map(WaypointFile::from).collect(),
        placement: skill.placement.iter().map(WaypointFile::from).collect(),
    };
    serde_json::to_string_pretty(&file).expect("skill serializes")
}

impl SkillDefinition {
    pub fn waypoint_count(&self) -> usize {
        self.extraction.len() + self.placement.len()
    }

    /// Extraction waypoints followed by placement waypoints.
    pub fn waypoints(&self) -> impl Iterator<Item = (WaypointRef, &Waypoint)> {
        let ext = self.extraction.iter().enumerate().map(|(index, w)| {
            (
                WaypointRef {
                    section: Section::Extraction,
                    index,
                },
                w,
            )
        });
        let pla = self.placement.iter().enumerate().map(|(index, w)| {
            (
                WaypointRef {
                    section: Section::Placement,
                    index,
                },
                w,
            )
        });
        ext.chain(pla)
    }

    pub fn find_tag(&self, name: &str) -> Option<(WaypointRef, &Waypoint)> {
        self.waypoints().find(|(_, w)| w.has_tag(name))
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        let err = |locus: &str, reason: String| SkillError::Invalid {
            skill: self.id.clone(),
            locus: locus.to_owned(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(err("id", "empty skill id".into()));
        }
        if self.instruction_keywords.is_empty() || self.instruction_keywords.iter().any(|k| k.trim().is_empty()) {
            return Err(err("keywords", "keywords must be non-empty words".into()));
        }
        if self.extraction.is_empty() || self.placement.is_empty() {
            return Err(err(
                "waypoints",
                "extraction and placement must both be non-empty".into(),
            ));
        }
        let (w, t) = (self.expected_grasp_width, self.failure_threshold);
        if !(w.is_finite() && t.is_finite() && w > 0.0 && t >= 0.0 && t < w) {
            return Err(err(
                "failure_threshold_m",
                format!("need 0 <= threshold ({t}) < expected grasp width ({w})"),
            ));
        }
        let tol = self.trigger_tolerance;
        if !(tol.pos_m > 0.0 && tol.rot_rad > 0.0 && tol.pos_m.is_finite() && tol.rot_rad.is_finite()) {
            return Err(err("trigger_tolerance", "tolerances must be positive".into()));
        }

        for (r, wp) in self.waypoints() {
            let locus = locus_of(r);
            let expected = match r.section {
                Section::Extraction => WaypointFrame::Relative,
                _ => WaypointFrame::Base,
            };
            if wp.frame != expected {
                return Err(err(&locus, format!("{:?} frame not allowed in this section", wp.frame)));
            }
            if !(wp.speed.is_finite() && wp.speed > 0.0 && wp.speed <= MAX_LINEAR_SPEED) {
                return Err(err(
                    &locus,
                    format!("speed {} outside (0, {MAX_LINEAR_SPEED}]", wp.speed),
                ));
            }
            if !(wp.blend_radius.is_finite() && wp.blend_radius >= 0.0) {
                return Err(err(&locus, "negative blend radius".into()));
            }
            if !(wp.dwell.is_finite() && wp.dwell >= 0.0) {
                return Err(err(&locus, "negative dwell".into()));
            }
        }

        let count = |name: &str| self.waypoints().filter(|(_, w)| w.has_tag(name)).count();
        if count("PickUp") != 1 {
            return Err(err("tags", "exactly one PickUp waypoint required".into()));
        }
        if count("PlacementStart") != 1 {
            return Err(err("tags", "exactly one PlacementStart waypoint required".into()));
        }
        if !self.extraction.iter().any(|w| w.has_tag("PickUp")) {
            return Err(err("tags", "PickUp must be an extraction waypoint".into()));
        }
        if !self.placement[0].has_tag("PlacementStart") {
            return Err(err(
                "placement[0]",
                "first placement waypoint must be tagged PlacementStart".into(),
            ));
        }

        // precise positioning: the first two radii never exceed any later one
        let all: Vec<_> = self.waypoints().collect();
        let head = all.iter().take(2).map(|(_, w)| w.blend_radius).fold(0.0, f64::max);
        if let Some((r, w)) = all.iter().skip(2).find(|(_, w)| w.blend_radius < head) {
            return Err(err(
                &locus_of(*r),
                format!("blend radius {} smaller than initial radius {head}", w.blend_radius),
            ));
        }

        let nominal = resolve(self, &Pose::identity());
        nominal
            .check_geometry()
            .map_err(|(r, reason)| err(&locus_of(r), reason))
    }
}

fn locus_of(r: WaypointRef) -> String {
    let section = match r.section {
        Section::Extraction => "extraction",
        Section::Placement => "placement",
        Section::LeadIn => "lead_in",
    };
    format!("{section}[{}]", r.index)
}

impl ResolvedTrajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Distinct consecutive targets, and every interior blend radius below
    /// half of both adjacent segment lengths.
    pub fn check_geometry(&self) -> Result<(), (WaypointRef, String)> {
        let pts: Vec<_> = self.waypoints.iter().map(|w| w.waypoint.target.position).collect();
        for i in 1..pts.len() {
            if (pts[i] - pts[i - 1]).norm() < 1e-9 {
                return Err((self.waypoints[i].source, "coincides with the previous waypoint".into()));
            }
        }
        for i in 1..pts.len().saturating_sub(1) {
            let r = self.waypoints[i].waypoint.blend_radius;
            let shortest = (pts[i] - pts[i - 1]).norm().min((pts[i + 1] - pts[i]).norm());
            if r > 0.0 && r >= shortest / 2.0 {
                return Err((
                    self.waypoints[i].source,
                    format!("blend radius {r} m not below half the adjacent distance {shortest} m"),
                ));
            }
        }
        Ok(())
    }
}

/// Full trajectory: extraction anchored at `trigger`, placement unchanged.
pub fn resolve(skill: &SkillDefinition, trigger: &Pose) -> ResolvedTrajectory {
    let waypoints = skill
        .waypoints()
        .map(|(source, w)| {
            let mut waypoint = w.clone();
            if w.frame == WaypointFrame::Relative {
                waypoint.target = compose(trigger, &w.target);
                waypoint.frame = WaypointFrame::Base;
            }
            ResolvedWaypoint { waypoint, source }
        })
        .collect();
    ResolvedTrajectory {
        waypoints,
        origin: TrajectoryOrigin::Full,
    }
}

/// Placement section only.
pub fn resolve_remaining(skill: &SkillDefinition) -> ResolvedTrajectory {
    let waypoints = skill
        .placement
        .iter()
        .enumerate()
        .map(|(index, w)| ResolvedWaypoint {
            waypoint: w.clone(),
            source: WaypointRef {
                section: Section::Placement,
                index,
            },
        })
        .collect();
    ResolvedTrajectory {
        waypoints,
        origin: TrajectoryOrigin::PlacementOnly,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    skills: BTreeMap<String, SkillDefinition>,
}

/// Parse one skill file into a single-entry library.
pub fn load_skills(source: &[u8]) -> Result<SkillLibrary, SkillError> {
    let mut lib = SkillLibrary::default();
    lib.insert(load_skill(source)?)?;
    Ok(lib)
}

impl SkillLibrary {
    /// The CPU extraction and RAM removal skills bundled with the crate.
    pub fn shipped() -> Self {
        let mut lib = Self::default();
        for src in [CPU_SKILL_SOURCE, RAM_SKILL_SOURCE] {
            lib.insert(load_skill(src.as_bytes()).expect("shipped skill is valid"))
                .expect("unique shipped ids");
        }
        lib
    }

    pub fn insert(&mut self, skill: SkillDefinition) -> Result<(), SkillError> {
        if self.skills.contains_key(&skill.id) {
            return Err(SkillError::Duplicate(skill.id));
        }
        self.skills.insert(skill.id.clone(), skill);
        Ok(())
    }

    pub fn merge(&mut self, other: SkillLibrary) -> Result<(), SkillError> {
        for (_, s) in other.skills {
            self.insert(s)?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&SkillDefinition> {
        self.skills.get(id)
    }

    pub fn for_task(&self, task: TaskId) -> Option<&SkillDefinition> {
        self.get(task.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &SkillDefinition> {
        self.skills.values()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }
}

/// `|keywords ∩ tokens| / |keywords|`.
pub fn keyword_score(skill: &SkillDefinition, embedding: &InstructionEmbedding) -> f64 {
    let mut kws: Vec<&str> = skill.instruction_keywords.iter().map(String::as_str).collect();
    kws.sort_unstable();
    kws.dedup();
    let hits = kws.iter().filter(|k| embedding.bag.contains(**k)).count();
    hits as f64 / kws.len() as f64
}

/// Highest keyword score wins; ties go to the lexicographically smallest id.
pub fn select_skill<'a>(
    embedding: &InstructionEmbedding,
    library: &'a SkillLibrary,
) -> Result<&'a SkillDefinition, SkillError> {
    let mut best: Option<(&SkillDefinition, f64)> = None;
    // BTreeMap iteration is already in id order, so strict > keeps the first
    for skill in library.iter() {
        let score = keyword_score(skill, embedding);
        if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((skill, score));
        }
    }
    best.map(|(s, _)| s).ok_or(SkillError::NoMatchingSkill)
}
