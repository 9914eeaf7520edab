//! Waypoint tracking controller.
//!
//! A setpoint advances along the blended path at the speed of the current
//! segment, halting at stop stations for their dwell time. Each call returns
//! the clipped delta from the measured TCP to the new setpoint.

use thiserror::Error;

use crate::control::Action;
use crate::geometry::{delta_between, Pose};
use crate::world::layout::{MAX_ANGULAR_SPEED, MAX_LINEAR_SPEED};

use super::blend::BlendedPath;

/// Setpoint-to-TCP distance beyond which tracking is abandoned.
pub const TRACKING_LIMIT_M: f64 = 0.020;
/// TCP distance to the final waypoint at which the path counts as complete.
pub const DONE_TOLERANCE_M: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerState {
    /// Arc length of the setpoint.
    pub progress: f64,
    pub dwell_left: f64,
    /// First station not yet reached.
    pub next_station: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("TCP is {deviation_m:.4} m from the setpoint")]
pub struct TrackingLost {
    pub deviation_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub action: Action,
    pub setpoint: Pose,
    pub state: ControllerState,
    /// Stations reached during this step, in path order.
    pub reached: Vec<usize>,
    pub done: bool,
}

impl ControllerState {
    /// Index of the last station reached.
    pub fn governing_station(&self) -> usize {
        self.next_station.saturating_sub(1)
    }
}

pub fn controller_step(
    path: &BlendedPath,
    state: &ControllerState,
    tcp: &Pose,
    dt: f64,
) -> Result<ControlOutput, TrackingLost> {
    let mut st = *state;
    let total = path.total_length();
    let stations = path.stations();
    let mut reached = Vec::new();

    // the first step only registers the start station
    if st.next_station > 0 {
        if st.dwell_left > 0.0 {
            st.dwell_left = (st.dwell_left - dt).max(0.0);
            if st.dwell_left < 1e-12 {
                st.dwell_left = 0.0;
            }
        } else if st.progress < total {
            let stop = path.next_stop_after(st.progress);
            let advance = (path.speed_at(st.progress) * dt).min(stop - st.progress);
            st.progress += advance;
            if stop - st.progress < 1e-12 {
                st.progress = stop;
            }
        }
    }
    while st.next_station < stations.len() && stations[st.next_station].s <= st.progress + 1e-12 {
        let station = &stations[st.next_station];
        if station.dwell > 0.0 {
            st.dwell_left = station.dwell;
        }
        reached.push(st.next_station);
        st.next_station += 1;
    }

    let setpoint = path.pose_at(st.progress);
    let deviation_m = (setpoint.position - tcp.position).norm();
    if deviation_m > TRACKING_LIMIT_M {
        return Err(TrackingLost { deviation_m });
    }
    let gripper = stations[st.governing_station()].gripper;
    let motion = delta_between(tcp, &setpoint).clipped(MAX_LINEAR_SPEED * dt, MAX_ANGULAR_SPEED * dt);
    let end = stations[stations.len() - 1].corner;
    let done = st.progress >= total && st.dwell_left == 0.0 && (tcp.position - end).norm() <= DONE_TOLERANCE_M;
    Ok(ControlOutput {
        action: Action::new(motion, gripper),
        setpoint,
        state: st,
        reached,
        done,
    })
}
