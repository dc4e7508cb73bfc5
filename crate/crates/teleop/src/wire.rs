//! Wire protocol, version 1.
//!
//! Every message is one JSON object:
//!
//! ```json
//! {"type": "input", "v": 1, "seq": 17, "t": 3.25, "payload": {"p_x": 0.04, "gamma_h": 0.0}}
//! ```
//!
//! | `type`   | direction       | payload                                                        |
//! |----------|-----------------|----------------------------------------------------------------|
//! | `input`  | pilot → server  | [`InputPayload`]; `seq` must increase, `t` is the pilot clock  |
//! | `config` | client → server | [`ConfigPayload`]: partial mapping/gain objects merged over the active ones |
//! | `state`  | server → all    | [`Telemetry`], decimated to a fixed rate                       |
//! | `event`  | server → all    | [`EventPayload`]                                               |
//! | `ack`    | server → sender | [`AckPayload`]                                                 |
//!
//! Server messages carry the server's own `seq` and the simulation time in
//! `t`. On a stream transport each message is prefixed by its byte length
//! as a 4-byte big-endian integer. In datagram mode each datagram holds
//! exactly one message with no prefix.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wip_core::course::Verdict;
use wip_core::mapping::{MappingConfig, PilotInput};
use wip_core::synthesis::GainSet;
use wip_core::world::{ConfigChange, Telemetry, WorldEvent};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame body, bytes.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Input,
    State,
    Config,
    Event,
    Ack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub v: u32,
    pub seq: u64,
    pub t: f64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPayload {
    pub p_x: f64,
    pub gamma_h: f64,
}

/// Partial configuration. `mapping` and `gains` are JSON objects whose keys
/// override the active values (nested objects merge recursively). With
/// `reset`, the overrides apply to the session's startup configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigPayload {
    pub reset: bool,
    pub mapping: Option<Value>,
    pub gains: Option<Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckOf {
    Input,
    Config,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    /// Message kind being acknowledged.
    pub of: AckOf,
    /// `seq` of the acknowledged message.
    pub ack_seq: u64,
    pub accepted: bool,
    /// Last accepted input sequence number (input acks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Configuration in force after a config ack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum EventPayload {
    /// A simulation event (verdicts, saturation, staleness, config applied).
    World(WorldEvent),
    /// A new run started; `run` counts from 1.
    RunStarted { run: u64 },
    RunFinished { run: u64, verdict: Verdict, completion_time: Option<f64>, path_length: Option<f64> },
    /// Role assigned to this connection.
    Hello { role: Role },
    /// The message could not be used; the connection stays open.
    Malformed { reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pilot,
    Observer,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(usize),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("{0}")]
    Payload(String),
}

impl WireMessage {
    pub fn new(kind: MessageType, seq: u64, t: f64, payload: impl Serialize) -> Self {
        WireMessage {
            kind,
            v: PROTOCOL_VERSION,
            seq,
            t,
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    pub fn input(seq: u64, t: f64, p_x: f64, gamma_h: f64) -> Self {
        WireMessage::new(MessageType::Input, seq, t, InputPayload { p_x, gamma_h })
    }

    pub fn config(seq: u64, payload: &ConfigPayload) -> Self {
        WireMessage::new(MessageType::Config, seq, 0.0, payload)
    }

    pub fn state(seq: u64, tel: &Telemetry) -> Self {
        WireMessage::new(MessageType::State, seq, tel.t, tel)
    }

    pub fn event(seq: u64, t: f64, e: &EventPayload) -> Self {
        WireMessage::new(MessageType::Event, seq, t, e)
    }

    pub fn ack(seq: u64, t: f64, a: &AckPayload) -> Self {
        WireMessage::new(MessageType::Ack, seq, t, a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message serializes")
    }

    /// Decode and check the version.
    pub fn from_bytes(body: &[u8]) -> Result<Self, WireError> {
        let msg: WireMessage = serde_json::from_slice(body)?;
        if msg.v != PROTOCOL_VERSION {
            return Err(WireError::Version(msg.v));
        }
        Ok(msg)
    }

    pub fn payload_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, WireError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| WireError::Payload(format!("{:?} payload: {e}", self.kind)))
    }

    pub fn pilot_input(&self) -> Result<PilotInput, WireError> {
        let p: InputPayload = self.payload_as()?;
        Ok(PilotInput::new(p.p_x, p.gamma_h, self.t, self.seq))
    }
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    let body = msg.to_bytes();
    let len = u32::try_from(body.len()).map_err(|_| io::Error::other("frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Read one frame body. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(WireError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

/// Overlay `patch` onto `base`: objects merge key by key, anything else
/// replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Resolve a config payload against the active and startup configuration.
pub fn resolve_config(
    payload: &ConfigPayload,
    active: (&MappingConfig, &GainSet),
    initial: (&MappingConfig, &GainSet),
) -> Result<ConfigChange, WireError> {
    let (mapping_base, gains_base) = if payload.reset { initial } else { active };
    fn apply<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: &Option<Value>, what: &str) -> Result<Option<T>, WireError> {
        let Some(patch) = patch else { return Ok(None) };
        if !patch.is_object() {
            return Err(WireError::Payload(format!("{what} must be an object")));
        }
        let mut v = serde_json::to_value(base).expect("config serializes");
        merge_json(&mut v, patch);
        serde_json::from_value(v).map(Some).map_err(|e| WireError::Payload(format!("{what}: {e}")))
    }
    let mut change = ConfigChange {
        mapping: apply(mapping_base, &payload.mapping, "mapping")?,
        gains: apply(gains_base, &payload.gains, "gains")?,
    };
    if payload.reset {
        change.mapping.get_or_insert(*initial.0);
        change.gains.get_or_insert(*initial.1);
    }
    change.validate().map_err(|e| WireError::Payload(e.to_string()))?;
    Ok(change)
}
