//! Random skills and geometric checks shared by property suites.

use nalgebra::UnitQuaternion;
use rand::{Rng, RngExt};

use crate::control::GripperCommand;
use crate::geometry::{compose, Pose, Vec3};
use crate::skill::blend::{blend, corner_clearance, SegmentKind};
use crate::skill::{resolve, Section, SkillDefinition, TriggerTolerance, Waypoint, WaypointFrame, WaypointTag};

/// Endpoint and closed-form tolerance, in metres.
pub const GEOMETRY_TOL: f64 = 1e-9;

pub fn random_pose<R: Rng>(rng: &mut R, span: f64) -> Pose {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let p = Vec3::new(u(-span, span), u(-span, span), u(-span, span));
    let q = UnitQuaternion::from_euler_angles(u(-0.5, 0.5), u(-0.5, 0.5), u(-3.1, 3.1));
    Pose::new(p, q)
}

/// Random walk of `n` points with steps in [1 cm, 5 cm].
fn walk<R: Rng>(rng: &mut R, n: usize, start: Vec3, frame: WaypointFrame) -> Vec<Waypoint> {
    let mut p = start;
    (0..n)
        .map(|_| {
            let len = rng.random_range(0.01..0.05);
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let cz: f64 = rng.random_range(-1.0..1.0);
            let s = (1.0 - cz * cz).sqrt();
            p += Vec3::new(s * az.cos(), s * az.sin(), cz) * len;
            let yaw = rng.random_range(-1.0..1.0);
            Waypoint {
                frame,
                target: Pose::new(p, UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)),
                blend_radius: 0.0,
                speed: rng.random_range(0.02..0.25),
                gripper: GripperCommand::OPEN,
                dwell: 0.0,
                tag: None,
            }
        })
        .collect()
}

/// A valid skill with 3 to 11 extraction and 2 to 6 placement waypoints.
/// Interior radii are random fractions of the largest admissible value at
/// the identity trigger; the first two stay at zero.
pub fn random_skill<R: Rng>(rng: &mut R) -> SkillDefinition {
    let ne = rng.random_range(3..12);
    let np = rng.random_range(2..7);
    let mut extraction = walk(rng, ne, Vec3::zeros(), WaypointFrame::Relative);
    let last = extraction[ne - 1].target.position;
    let mut placement = walk(rng, np, last + Vec3::new(0.0, 0.0, 0.02), WaypointFrame::Base);
    extraction[rng.random_range(0..ne)].tag = Some(WaypointTag::PickUp);
    placement[0].tag = Some(WaypointTag::PlacementStart);

    let pts: Vec<Vec3> = extraction.iter().chain(&placement).map(|w| w.target.position).collect();
    let mut all: Vec<&mut Waypoint> = extraction.iter_mut().chain(placement.iter_mut()).collect();
    for i in 2..pts.len() - 1 {
        let shortest = (pts[i] - pts[i - 1]).norm().min((pts[i + 1] - pts[i]).norm());
        all[i].blend_radius = 0.49 * shortest * rng.random_range(0.0..1.0);
    }
    SkillDefinition {
        id: "random".into(),
        instruction_keywords: vec!["random".into()],
        extraction,
        placement,
        expected_grasp_width: 0.004,
        failure_threshold: 0.002,
        trigger_tolerance: TriggerTolerance {
            pos_m: 0.001,
            rot_rad: 0.01,
        },
    }
}

/// Moving the trigger by `g` moves every extraction waypoint by `g` and
/// leaves placement untouched.
pub fn check_resolve_equivariance(skill: &SkillDefinition, trigger: &Pose, g: &Pose) -> Result<(), String> {
    let base = resolve(skill, trigger);
    let moved = resolve(skill, &compose(g, trigger));
    if base.len() != skill.waypoint_count() || moved.len() != base.len() {
        return Err("resolved length differs from the skill".into());
    }
    for ((b, m), (r, w)) in base.waypoints.iter().zip(&moved.waypoints).zip(skill.waypoints()) {
        if b.source != r || m.source != r || b.waypoint.frame != WaypointFrame::Base {
            return Err(format!("{r:?}: source or frame not preserved"));
        }
        match r.section {
            Section::Extraction => {
                let expect = compose(g, &b.waypoint.target);
                let dp = (m.waypoint.target.position - expect.position).norm();
                let dq = m.waypoint.target.orientation.angle_to(&expect.orientation);
                let direct = (b.waypoint.target.position - compose(trigger, &w.target).position).norm();
                if dp > GEOMETRY_TOL || dq > GEOMETRY_TOL || direct > GEOMETRY_TOL {
                    return Err(format!("{r:?}: off by {dp:e} m, {dq:e} rad, {direct:e} m"));
                }
            }
            _ => {
                if m.waypoint.target != w.target || b.waypoint.target != w.target {
                    return Err(format!("{r:?}: placement waypoint moved"));
                }
            }
        }
    }
    Ok(())
}

/// The blended path hits both endpoints, passes through unblended corners,
/// and every arc stays inside its blend radius with its closest approach to
/// the corner equal to [`corner_clearance`].
pub fn check_blend_containment(skill: &SkillDefinition, trigger: &Pose) -> Result<(), String> {
    let traj = resolve(skill, trigger);
    let path = blend(&traj);
    let pts: Vec<Vec3> = traj.waypoints.iter().map(|w| w.waypoint.target.position).collect();
    let far = |a: Vec3, b: Vec3| (a - b).norm() > GEOMETRY_TOL;
    if far(path.position_at(0.0), pts[0]) || far(path.position_at(path.total_length()), pts[pts.len() - 1]) {
        return Err("path misses an endpoint".into());
    }
    if path.stations().len() != pts.len() {
        return Err("station count differs from waypoint count".into());
    }
    for (i, st) in path.stations().iter().enumerate() {
        if far(st.corner, pts[i]) {
            return Err(format!("station {i} not at its waypoint"));
        }
        let mid = path.position_at(st.s);
        if st.effective_radius == 0.0 {
            if far(mid, st.corner) {
                return Err(format!("unblended station {i} off its corner"));
            }
            continue;
        }
        let r = st.effective_radius;
        if r > traj.waypoints[i].waypoint.blend_radius {
            return Err(format!("station {i}: effective radius {r} above the requested one"));
        }
        let theta = (pts[i - 1] - pts[i]).angle(&(pts[i + 1] - pts[i]));
        let clearance = corner_clearance(r, theta);
        let d_mid = (mid - st.corner).norm();
        if (d_mid - clearance).abs() > GEOMETRY_TOL {
            return Err(format!(
                "station {i}: closest approach {d_mid} vs closed form {clearance}"
            ));
        }
        let arc = path
            .segments()
            .iter()
            .find(|seg| {
                matches!(seg.kind, SegmentKind::Arc { .. }) && seg.start_s <= st.s && st.s <= seg.start_s + seg.length
            })
            .ok_or_else(|| format!("station {i}: no arc around its corner"))?;
        for k in 0..=32 {
            let d = (path.position_at(arc.start_s + arc.length * f64::from(k) / 32.0) - st.corner).norm();
            if d > r + GEOMETRY_TOL || d < clearance - GEOMETRY_TOL {
                return Err(format!("station {i}: arc point at {d} outside [{clearance}, {r}]"));
            }
        }
    }
    Ok(())
}
