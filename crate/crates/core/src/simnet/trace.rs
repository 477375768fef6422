//! Line-delimited trace records.
//!
//! One JSON object per line. Field names are stable:
//!
//! | field    | meaning                                                        |
//! |----------|----------------------------------------------------------------|
//! | `t_us`   | virtual time in microseconds                                   |
//! | `event`  | `send`, `deliver`, `drop`, `dead-target`, `send-failure`, `timer`, `command`, `join`, `crash` |
//! | `node`   | acting node address (receiver for `deliver`, sender otherwise) |
//! | `peer`   | the other endpoint of a network event                          |
//! | `kind`   | message kind, e.g. `Subscribe`                                 |
//! | `msg_id` | per-run message sequence number, shared by all records of one message |
//! | `detail` | free-form summary (message fields, timer tag, command)         |
//!
//! Absent fields are omitted.

use serde::Serialize;

use super::SimTime;
use crate::overlay::Address;

/// Implemented by message types so the simulator can count and trace them.
pub trait TraceMessage {
    fn kind(&self) -> &'static str;

    fn summary(&self) -> String {
        String::new()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub t_us: u64,
    pub event: &'static str,
    pub node: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peer: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msg_id: Option<u64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl TraceRecord {
    pub(super) fn net(
        at: SimTime,
        event: &'static str,
        node: Address,
        peer: Address,
        kind: &'static str,
        msg_id: u64,
    ) -> Self {
        TraceRecord {
            t_us: at.as_micros(),
            event,
            node: node.0,
            peer: Some(peer.0),
            kind: Some(kind),
            msg_id: Some(msg_id),
            detail: String::new(),
        }
    }

    pub(super) fn lifecycle(at: SimTime, node: Address, event: &'static str) -> Self {
        TraceRecord {
            t_us: at.as_micros(),
            event,
            node: node.0,
            peer: None,
            kind: None,
            msg_id: None,
            detail: String::new(),
        }
    }

    pub(super) fn timer(at: SimTime, node: Address, id: u64, tag: String) -> Self {
        TraceRecord {
            msg_id: Some(id),
            detail: tag,
            ..Self::lifecycle(at, node, "timer")
        }
    }

    pub(super) fn command(at: SimTime, node: Address, cmd: String) -> Self {
        TraceRecord {
            detail: cmd,
            ..Self::lifecycle(at, node, "command")
        }
    }

    pub(super) fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}
