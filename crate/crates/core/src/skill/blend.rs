//! Blended Cartesian paths.
//!
//! Each interior waypoint with a positive blend radius `r` is replaced by a
//! circular arc tangent to both adjacent segments, entering and leaving at
//! distance `r` from the corner. For a deflection `φ` between the incoming
//! and outgoing directions the arc radius is `r·cot(φ/2)`. Collinear and
//! reversing corners are passed through exactly.

use nalgebra::UnitQuaternion;

use crate::control::GripperCommand;
use crate::geometry::{axis_angle_of, pose_distance, rotation_from_axis_angle, Pose, Vec3};

use super::{
    ResolvedTrajectory, ResolvedWaypoint, Section, TrajectoryOrigin, Waypoint, WaypointFrame, WaypointRef, WaypointTag,
};

const EPS_LEN: f64 = 1e-12;
/// Deflections closer than this to 0 or π are not blended.
const EPS_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Line {
        from: Vec3,
        dir: Vec3,
    },
    /// `center + radius·(cos t·e1 + sin t·e2)` for `t ∈ [0, angle]`.
    Arc {
        center: Vec3,
        radius: f64,
        e1: Vec3,
        e2: Vec3,
        angle: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_s: f64,
    pub length: f64,
    pub speed: f64,
    pub kind: SegmentKind,
}

impl Segment {
    fn point(&self, local: f64) -> Vec3 {
        match self.kind {
            SegmentKind::Line { from, dir } => from + dir * local,
            SegmentKind::Arc {
                center, radius, e1, e2, ..
            } => {
                let t = local / radius;
                center + (e1 * t.cos() + e2 * t.sin()) * radius
            }
        }
    }

    fn tangent(&self, local: f64) -> Vec3 {
        match self.kind {
            SegmentKind::Line { dir, .. } => dir,
            SegmentKind::Arc { radius, e1, e2, .. } => {
                let t = local / radius;
                e2 * t.cos() - e1 * t.sin()
            }
        }
    }
}

/// Arc-length position of a waypoint on the path: the arc midpoint for a
/// blended corner, the corner itself otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub s: f64,
    pub corner: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub gripper: GripperCommand,
    pub dwell: f64,
    /// Radius actually used; `0` when passed through.
    pub effective_radius: f64,
    /// The controller halts here before continuing.
    pub stop: bool,
    pub source: WaypointRef,
    pub tag: Option<WaypointTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendedPath {
    segments: Vec<Segment>,
    stations: Vec<Station>,
    total_length: f64,
    pub origin: TrajectoryOrigin,
}

struct Corner {
    entry: Vec3,
    exit: Vec3,
    center: Vec3,
    rho: f64,
    e1: Vec3,
    e2: Vec3,
    phi: f64,
    r: f64,
}

fn corner(prev: &Vec3, at: &Vec3, next: &Vec3, radius: f64) -> Option<Corner> {
    let (din, dout) = (at - prev, next - at);
    let (lin, lout) = (din.norm(), dout.norm());
    if lin < EPS_LEN || lout < EPS_LEN || radius <= 0.0 {
        return None;
    }
    let (u, v) = (din / lin, dout / lout);
    let phi = u.cross(&v).norm().atan2(u.dot(&v));
    if !(EPS_ANGLE..=std::f64::consts::PI - EPS_ANGLE).contains(&phi) {
        return None;
    }
    let r = radius.min(0.5 * lin.min(lout));
    let rho = r / (phi / 2.0).tan();
    let n = (v - u * u.dot(&v)).normalize();
    let entry = at - u * r;
    let center = entry + n * rho;
    Some(Corner {
        entry,
        exit: at + v * r,
        center,
        rho,
        e1: -n,
        e2: u,
        phi,
        r,
    })
}

/// Minimum distance from a blend arc to its corner, for blend distance `r`
/// and interior angle `θ` between the two adjacent segments.
pub fn corner_clearance(r: f64, interior_angle: f64) -> f64 {
    let h = interior_angle / 2.0;
    r * (1.0 - h.sin()) / h.cos()
}

/// Build the blended path through a resolved trajectory.
///
/// # Panics
/// If the trajectory is empty.
pub fn blend(traj: &ResolvedTrajectory) -> BlendedPath {
    let wps = &traj.waypoints;
    assert!(!wps.is_empty(), "cannot blend an empty trajectory");
    let pts: Vec<Vec3> = wps.iter().map(|w| w.waypoint.target.position).collect();
    let n = pts.len();
    let corners: Vec<Option<Corner>> = (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                None
            } else {
                corner(&pts[i - 1], &pts[i], &pts[i + 1], wps[i].waypoint.blend_radius)
            }
        })
        .collect();

    let station = |w: &ResolvedWaypoint, s: f64, r: f64, endpoint: bool| {
        let wp = &w.waypoint;
        Station {
            s,
            corner: wp.target.position,
            orientation: wp.target.orientation,
            gripper: wp.gripper,
            dwell: wp.dwell,
            effective_radius: r,
            stop: endpoint || r == 0.0 || wp.dwell > 0.0,
            source: w.source,
            tag: wp.tag.clone(),
        }
    };

    let mut segments = Vec::new();
    let mut stations = vec![station(&wps[0], 0.0, 0.0, true)];
    let mut cursor = pts[0];
    let mut s = 0.0;
    for i in 1..n {
        let speed_in = wps[i].waypoint.speed;
        let entry = corners[i].as_ref().map_or(pts[i], |c| c.entry);
        let d = entry - cursor;
        let len = d.norm();
        if len > EPS_LEN {
            segments.push(Segment {
                start_s: s,
                length: len,
                speed: speed_in,
                kind: SegmentKind::Line {
                    from: cursor,
                    dir: d / len,
                },
            });
            s += len;
        }
        match &corners[i] {
            Some(c) => {
                let length = c.rho * c.phi;
                segments.push(Segment {
                    start_s: s,
                    length,
                    speed: speed_in.min(wps[i + 1].waypoint.speed),
                    kind: SegmentKind::Arc {
                        center: c.center,
                        radius: c.rho,
                        e1: c.e1,
                        e2: c.e2,
                        angle: c.phi,
                    },
                });
                stations.push(station(&wps[i], s + length / 2.0, c.r, false));
                s += length;
                cursor = c.exit;
            }
            None => {
                stations.push(station(&wps[i], s, 0.0, i + 1 == n));
                cursor = pts[i];
            }
        }
    }
    BlendedPath {
        segments,
        stations,
        total_length: s,
        origin: traj.origin,
    }
}

/// Like [`blend`], but starts from `start` with a straight lead-in when it is
/// not already at the first waypoint.
pub fn blend_from(start: &Pose, traj: &ResolvedTrajectory) -> BlendedPath {
    let Some(first) = traj.waypoints.first() else {
        return blend(traj);
    };
    let (dp, dr) = pose_distance(start, &first.waypoint.target);
    if dp < 1e-9 && dr < 1e-9 {
        return blend(traj);
    }
    let lead = ResolvedWaypoint {
        waypoint: Waypoint {
            frame: WaypointFrame::Base,
            target: *start,
            blend_radius: 0.0,
            speed: first.waypoint.speed,
            gripper: first.waypoint.gripper,
            dwell: 0.0,
            tag: None,
        },
        source: WaypointRef {
            section: Section::LeadIn,
            index: 0,
        },
    };
    let mut waypoints = Vec::with_capacity(traj.len() + 1);
    waypoints.push(lead);
    waypoints.extend(traj.waypoints.iter().cloned());
    blend(&ResolvedTrajectory {
        waypoints,
        origin: traj.origin,
    })
}

fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let rel = axis_angle_of(&(a.inverse() * b));
    a * rotation_from_axis_angle(&(rel * t))
}

impl BlendedPath {
    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    fn segment_at(&self, s: f64) -> Option<&Segment> {
        if self.segments.is_empty() {
            return None;
        }
        let i = self
            .segments
            .partition_point(|g| g.start_s + g.length < s)
            .min(self.segments.len() - 1);
        Some(&self.segments[i])
    }

    pub fn position_at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.total_length);
        match self.segment_at(s) {
            Some(g) => g.point((s - g.start_s).clamp(0.0, g.length)),
            None => self.stations[0].corner,
        }
    }

    /// Unit direction of travel; zero on a degenerate path.
    pub fn tangent_at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.total_length);
        self.segment_at(s)
            .map_or_else(Vec3::zeros, |g| g.tangent((s - g.start_s).clamp(0.0, g.length)))
    }

    /// Orientation interpolated between consecutive stations by arc length.
    pub fn orientation_at(&self, s: f64) -> UnitQuaternion<f64> {
        let st = &self.stations;
        let j = st.partition_point(|x| x.s <= s).saturating_sub(1);
        if j + 1 >= st.len() {
            return st[st.len() - 1].orientation;
        }
        let span = st[j + 1].s - st[j].s;
        let t = if span > EPS_LEN {
            ((s - st[j].s) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        slerp(&st[j].orientation, &st[j + 1].orientation, t)
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        Pose::new(self.position_at(s), self.orientation_at(s))
    }

    pub fn speed_at(&self, s: f64) -> f64 {
        self.segment_at(s.clamp(0.0, self.total_length))
            .map_or(0.0, |g| g.speed)
    }

    /// Arc length of the first stop station strictly beyond `s`, or the end.
    pub fn next_stop_after(&self, s: f64) -> f64 {
        self.stations
            .iter()
            .find(|st| st.stop && st.s > s + EPS_LEN)
            .map_or(self.total_length, |st| st.s)
    }

    pub fn end_pose(&self) -> Pose {
        self.pose_at(self.total_length)
    }

    /// First station carrying `tag`.
    pub fn station_with_tag(&self, tag: &str) -> Option<(usize, &Station)> {
        self.stations
            .iter()
            .enumerate()
            .find(|(_, st)| st.tag.as_ref().is_some_and(|t| t.is(tag)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skill::{load_skill, resolve, resolve_remaining, CPU_SKILL_SOURCE, RAM_SKILL_SOURCE};

    fn wp(x: f64, y: f64, z: f64, r: f64) -> ResolvedWaypoint {
        ResolvedWaypoint {
            waypoint: Waypoint {
                frame: WaypointFrame::Base,
                target: Pose::from_translation(x, y, z),
                blend_radius: r,
                speed: 0.1,
                gripper: GripperCommand::OPEN,
                dwell: 0.0,
                tag: None,
            },
            source: WaypointRef {
                section: Section::Placement,
                index: 0,
            },
        }
    }

    fn traj(w: Vec<ResolvedWaypoint>) -> ResolvedTrajectory {
        ResolvedTrajectory {
            waypoints: w,
            origin: TrajectoryOrigin::PlacementOnly,
        }
    }

    fn sampled_clearance(path: &BlendedPath, corner: &Vec3) -> f64 {
        let n = 200_000;
        (0..=n)
            .map(|k| (path.position_at(path.total_length() * k as f64 / n as f64) - corner).norm())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn right_angle_arc_length_and_clearance() {
        let path = blend(&traj(vec![
            wp(0.0, 0.0, 0.0, 0.0),
            wp(0.1, 0.0, 0.0, 0.02),
            wp(0.1, 0.1, 0.0, 0.0),
        ]));
        // ρ = r for a 90° deflection; the arc replaces 2r of corner path
        let expect = 0.2 - 0.04 + 0.02 * std::f64::consts::FRAC_PI_2;
        assert!((path.total_length() - expect).abs() < 1e-12);
        let c = Vec3::new(0.1, 0.0, 0.0);
        let closed = corner_clearance(0.02, std::f64::consts::FRAC_PI_2);
        assert!((sampled_clearance(&path, &c) - closed).abs() < 1e-6);
        assert!((path.stations()[1].s - (0.08 + 0.01 * std::f64::consts::FRAC_PI_2)).abs() < 1e-12);
    }

    #[test]
    fn clearance_formula_over_angles() {
        for deg in [20.0f64, 45.0, 70.0, 100.0, 135.0, 160.0] {
            let theta = deg.to_radians();
            let r = 0.01;
            // incoming along +x, outgoing at interior angle θ
            let out = Vec3::new(-theta.cos(), theta.sin(), 0.0) * 0.1;
            let c = Vec3::new(0.1, 0.0, 0.0);
            let end = c + out;
            let path = blend(&traj(vec![
                wp(0.0, 0.0, 0.0, 0.0),
                wp(c.x, c.y, 0.0, r),
                wp(end.x, end.y, 0.0, 0.0),
            ]));
            let sampled = sampled_clearance(&path, &c);
            assert!(
                (sampled - corner_clearance(r, theta)).abs() < 1e-6,
                "θ={deg}: {sampled}"
            );
        }
    }

    #[test]
    fn path_is_continuous_and_tangent_continuous() {
        let skill = load_skill(CPU_SKILL_SOURCE.as_bytes()).unwrap();
        let path = blend(&resolve(&skill, &Pose::from_xyz_yaw(0.5, 0.0, 0.05, 0.3)));
        for g in path.segments() {
            let a = path.position_at(g.start_s);
            let b = g.point(0.0);
            assert!((a - b).norm() < 1e-9);
        }
        for w in path.segments().windows(2) {
            if let SegmentKind::Arc { .. } = w[1].kind {
                let t0 = w[0].tangent(w[0].length);
                let t1 = w[1].tangent(0.0);
                assert!((t0 - t1).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_radius_passes_through_waypoints() {
        let skill = load_skill(RAM_SKILL_SOURCE.as_bytes()).unwrap();
        let t = resolve(&skill, &Pose::from_xyz_yaw(0.55, 0.0, 0.07, 0.0));
        let path = blend(&t);
        for (st, w) in path.stations().iter().zip(&t.waypoints) {
            assert!((path.position_at(st.s) - w.waypoint.target.position).norm() < 1e-12);
            assert!(st.stop);
        }
    }

    #[test]
    fn collinear_and_reversal_pass_through() {
        let path = blend(&traj(vec![
            wp(0.0, 0.0, 0.0, 0.0),
            wp(0.1, 0.0, 0.0, 0.02),
            wp(0.2, 0.0, 0.0, 0.0),
        ]));
        assert!((path.total_length() - 0.2).abs() < 1e-15);
        assert_eq!(path.stations()[1].effective_radius, 0.0);
        let path = blend(&traj(vec![
            wp(0.0, 0.0, 0.0, 0.0),
            wp(0.1, 0.0, 0.0, 0.02),
            wp(0.05, 0.0, 0.0, 0.0),
        ]));
        assert!((path.total_length() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn orientation_slerps_between_stations() {
        let mut a = wp(0.0, 0.0, 0.0, 0.0);
        let mut b = wp(0.1, 0.0, 0.0, 0.0);
        a.waypoint.target = Pose::from_xyz_yaw(0.0, 0.0, 0.0, 0.0);
        b.waypoint.target = Pose::from_xyz_yaw(0.1, 0.0, 0.0, 1.0);
        let path = blend(&traj(vec![a, b]));
        assert!((path.pose_at(0.05).yaw() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lead_in_prepended_only_when_needed() {
        let skill = load_skill(CPU_SKILL_SOURCE.as_bytes()).unwrap();
        let rem = resolve_remaining(&skill);
        let start = Pose::from_translation(0.5, 0.0, 0.1);
        let p = blend_from(&start, &rem);
        assert_eq!(p.stations().len(), rem.len() + 1);
        assert_eq!(p.stations()[0].source.section, Section::LeadIn);
        assert!((p.position_at(0.0) - start.position).norm() < 1e-15);
        let at_first = rem.waypoints[0].waypoint.target;
        assert_eq!(blend_from(&at_first, &rem).stations().len(), rem.len());
    }

    #[test]
    fn next_stop_skips_blended_stations() {
        let path = blend(&traj(vec![
            wp(0.0, 0.0, 0.0, 0.0),
            wp(0.1, 0.0, 0.0, 0.02),
            wp(0.1, 0.1, 0.0, 0.0),
        ]));
        assert_eq!(path.next_stop_after(0.0), path.total_length());
    }
}
