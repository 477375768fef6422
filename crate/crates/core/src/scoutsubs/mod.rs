//! ScoutSubs: decentralized content-based routing over the overlay.
//!
//! Subscriptions travel toward the rendezvous node of one of their
//! attributes and leave a filter at every hop; events travel toward the
//! rendezvous of every attribute they carry and then follow the filters
//! back. Around that core sit redirect shortcuts, `f`-fold replication of
//! every node's filter table, an acknowledgement chain for reliable
//! delivery, and the `t`/`2t` refresh cycle.

mod protocol;
mod table;

pub use protocol::{Interest, Scout, ScoutTimer};
pub use table::{FilterEntry, FilterTable};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overlay::{xor_distance, IdSpace, Key, NodeId, OverlayError};
use crate::predicate::Predicate;
use crate::scalar::Scalar;
use crate::simnet::{SimConfig, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoutConfigError {
    #[error("refresh period t must be positive")]
    ZeroRefresh,
    #[error("ack timeout must be positive")]
    ZeroAckTimeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoutConfig {
    /// Fault-tolerance factor: backups per node.
    pub f: usize,
    /// Resubscription period. Tables swap every `2t`.
    pub t: SimTime,
    pub ack_timeout: SimTime,
    pub redirect: bool,
    pub reliable: bool,
    /// Resend rounds a rendezvous tracker runs before giving up.
    pub max_resend_rounds: u32,
    /// Transmissions of each publisher copy before reporting failure.
    pub publish_attempts: u32,
    /// Capacity of the per-node duplicate-suppression caches.
    pub dedupe_capacity: usize,
    /// A tracker replica takes over after this many ack timeouts without
    /// hearing that the rendezvous finished.
    pub takeover_after: u32,
}

impl Default for ScoutConfig {
    fn default() -> Self {
        ScoutConfig {
            f: 2,
            t: SimTime::from_millis(30_000),
            ack_timeout: SimTime::from_millis(600),
            redirect: false,
            reliable: false,
            max_resend_rounds: 10,
            publish_attempts: 10,
            dedupe_capacity: 4096,
            takeover_after: 4,
        }
    }
}

impl ScoutConfig {
    pub fn variant(redirect: bool, reliable: bool) -> Self {
        ScoutConfig {
            redirect,
            reliable,
            ..Self::default()
        }
    }

    /// Sets the ack timeout to four times the 99th-percentile one-way latency
    /// of `net`.
    pub fn with_ack_timeout_for(mut self, net: &SimConfig) -> Self {
        self.ack_timeout = net.latency_quantile(0.99) * 4;
        self
    }

    pub fn validate(&self) -> Result<(), ScoutConfigError> {
        if self.t == SimTime::ZERO {
            return Err(ScoutConfigError::ZeroRefresh);
        }
        if self.ack_timeout == SimTime::ZERO {
            return Err(ScoutConfigError::ZeroAckTimeout);
        }
        Ok(())
    }
}

/// Attribute of `pred` whose key is XOR-closest to `me`; ties go to the
/// lexicographically smaller name.
pub fn choose_subscription_rendezvous<S: Scalar>(
    pred: &Predicate<S>,
    me: &NodeId,
    space: &IdSpace,
) -> Result<(String, Key), OverlayError> {
    let mut best: Option<(String, Key)> = None;
    for name in pred.attribute_names() {
        let key = space.key_for_attribute(name)?;
        let closer = match &best {
            None => true,
            Some((_, k)) => xor_distance(&key, me) < xor_distance(k, me),
        };
        if closer {
            best = Some((name.to_string(), key));
        }
    }
    best.ok_or_else(|| OverlayError::InvalidAttribute(String::new()))
}
