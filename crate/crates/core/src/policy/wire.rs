//! Newline-delimited JSON protocol spoken with external policy servers.
//!
//! ```text
//! -> {"reset":42}
//! -> {"v":1,"role":"planner","instruction":"...","obs":{...},"tick":0}
//! <- {"v":1,"delta_pos_m":[..],"delta_rot_aa":[..],"gripper":0}
//! ```
//!
//! Resets are fire-and-forget. A server may report that it sees nothing to
//! grasp with `{"v":1,"error":"no_target_visible"}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{Action, ActionRecord, Role};

use super::encode::encode_instruction;
use super::{EncodedObservation, Policy, PolicyError};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub v: u32,
    pub role: Role,
    pub instruction: String,
    pub obs: EncodedObservation,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireReset {
    pub reset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireResponse {
    v: u32,
    delta_pos_m: [f64; 3],
    delta_rot_aa: [f64; 3],
    gripper: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireError {
    v: u32,
    error: String,
}

pub fn encode_reset(seed: u64) -> String {
    serde_json::to_string(&WireReset { reset: seed }).expect("serializable")
}

pub fn encode_request(role: Role, instruction: &str, obs: &EncodedObservation, tick: u64) -> String {
    serde_json::to_string(&WireRequest {
        v: WIRE_VERSION,
        role,
        instruction: instruction.to_owned(),
        obs: *obs,
        tick,
    })
    .expect("serializable")
}

pub fn encode_response(action: &Action) -> String {
    let r = ActionRecord::from(action);
    serde_json::to_string(&WireResponse {
        v: WIRE_VERSION,
        delta_pos_m: r.delta_pos_m,
        delta_rot_aa: r.delta_rot_aa,
        gripper: r.gripper,
    })
    .expect("serializable")
}

pub fn encode_error(err: &PolicyError) -> String {
    let error = match err {
        PolicyError::NoTargetVisible => "no_target_visible".to_owned(),
        other => other.to_string(),
    };
    serde_json::to_string(&WireError { v: WIRE_VERSION, error }).expect("serializable")
}

/// Acknowledgement-style lines some servers emit after a reset.
pub fn is_ack(line: &str) -> bool {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => ["ok", "ack", "reset"].iter().any(|k| m.contains_key(*k)),
        _ => line.trim().is_empty(),
    }
}

/// Parse and validate one response line.
pub fn decode_response(line: &str) -> Result<Action, PolicyError> {
    let proto = |m: String| PolicyError::Protocol(m);
    let value: Value = serde_json::from_str(line).map_err(|e| proto(format!("malformed response: {e}")))?;
    if value.get("error").is_some() {
        let e: WireError = serde_json::from_value(value).map_err(|e| proto(e.to_string()))?;
        return Err(match e.error.as_str() {
            "no_target_visible" => PolicyError::NoTargetVisible,
            other => PolicyError::Unavailable(format!("server error: {other}")),
        });
    }
    let r: WireResponse = serde_json::from_value(value).map_err(|e| proto(format!("malformed response: {e}")))?;
    if r.v != WIRE_VERSION {
        return Err(proto(format!("unsupported protocol version {}", r.v)));
    }
    let record = ActionRecord {
        delta_pos_m: r.delta_pos_m,
        delta_rot_aa: r.delta_rot_aa,
        gripper: r.gripper,
    };
    Action::try_from(&record).map_err(|e| proto(e.to_string()))
}

pub enum Incoming {
    Reset(u64),
    Request(WireRequest),
}

pub fn decode_incoming(line: &str) -> Result<Incoming, PolicyError> {
    if let Ok(r) = serde_json::from_str::<WireReset>(line) {
        return Ok(Incoming::Reset(r.reset));
    }
    let req: WireRequest =
        serde_json::from_str(line).map_err(|e| PolicyError::Protocol(format!("malformed request: {e}")))?;
    if req.v != WIRE_VERSION {
        return Err(PolicyError::Protocol(format!("unsupported protocol version {}", req.v)));
    }
    Ok(Incoming::Request(req))
}

/// Serve an in-process policy over a line stream until EOF. Returns the
/// number of requests answered.
pub fn serve<R: BufRead, W: Write>(policy: &mut dyn Policy, reader: R, mut writer: W) -> std::io::Result<u64> {
    let mut answered = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match decode_incoming(&line) {
            Ok(Incoming::Reset(seed)) => {
                if let Err(e) = policy.reset(seed) {
                    writeln!(writer, "{}", encode_error(&e))?;
                    writer.flush()?;
                }
                continue;
            }
            Ok(Incoming::Request(req)) => {
                let instruction = crate::control::Instruction::new(req.instruction.clone());
                let e = match instruction {
                    Ok(i) => encode_instruction(&i),
                    Err(err) => {
                        writeln!(writer, "{}", encode_error(&PolicyError::Protocol(err.to_string())))?;
                        writer.flush()?;
                        continue;
                    }
                };
                match policy.act(&req.obs, &e, req.tick) {
                    Ok(a) => encode_response(&a),
                    Err(err) => encode_error(&err),
                }
            }
            Err(err) => encode_error(&err),
        };
        answered += 1;
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(answered)
}
