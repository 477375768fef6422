//! Messages exchanged between simulated nodes.
//!
//! Every message travels inside a [`Packet`], which names the sending peer
//! so receivers can learn it into their routing table. Payload-carrying
//! values are behind `Arc` because the same event record is fanned out to
//! many peers.
//!
//! ScoutSubs vocabulary:
//!
//! | message          | fields                                                                 | direction |
//! |------------------|------------------------------------------------------------------------|-----------|
//! | `Subscribe`      | subscription ref, predicate, rendezvous attribute, sender backups, shortcut offer, renewal flag, hop count | hop by hop toward the rendezvous |
//! | `SubscribeAck`   | subscription ref                                                       | rendezvous to subscriber |
//! | `Event`          | event record, rendezvous attribute, phase (up/down), backup flag, sender's backup flag, ack slot, hop count | publisher to rendezvous (up), then reverse path (down) |
//! | `EventAck`       | event id, attribute, receiver's backup flag, ack slot (none = rendezvous ack to publisher) | one hop upstream, or rendezvous to publisher |
//! | `BackupStore`    | optional ack token, filter-table snapshot of the sender                | node to its backups |
//! | `BackupAck`      | token                                                                  | backup to node |
//! | `ShortcutOffer`  | attribute, target peer                                                 | one hop upstream |
//! | `ShortcutRevoke` | attribute                                                              | one hop upstream |
//! | `TrackReplicate` | event record, attribute, completion flag                               | rendezvous to its backups |
//! | `Handover`       | attribute                                                              | new rendezvous to the old one |
//!
//! FastDelivery vocabulary:
//!
//! | message       | fields                                              | direction |
//! |---------------|-----------------------------------------------------|-----------|
//! | `Advertise`   | group id, endpoint (absent when private), attribute | routed to the attribute's rendezvous |
//! | `BoardQuery`  | attribute, query id, origin                         | routed to the attribute's rendezvous |
//! | `BoardReply`  | attribute, query id, board entries                  | rendezvous to origin |
//! | `FdSubscribe` | group id, subscriber record                         | subscriber to publisher |
//! | `FdDelegate`  | group id, version, delegated records (full replacement) | publisher to helper |
//! | `FdEvent`     | group id, event record, relay flag, hop count       | publisher to subscriber or helper; helper to subscriber |

use std::fmt;
use std::sync::Arc;

use crate::fastdelivery::{BoardEntry, GroupId, SubscriberRecord};
use crate::overlay::{NodeId, PeerInfo};
use crate::predicate::{EventPredicate, Predicate};
use crate::scalar::Scalar;
use crate::scoutsubs::FilterTable;
use crate::simnet::{SimTime, TraceMessage};

/// Publisher-scoped event identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct EventId {
    pub publisher: NodeId,
    pub seq: u64,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.publisher, self.seq)
    }
}

/// A published event. Shared between all copies in flight.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord<S> {
    pub id: EventId,
    /// The publisher, so rendezvous nodes can acknowledge it directly.
    pub origin: PeerInfo,
    pub predicate: EventPredicate<S>,
    pub payload: Vec<u8>,
    pub published_at: SimTime,
}

/// Identifies one subscribe (or renewal) request of a subscriber.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubRef {
    pub origin: PeerInfo,
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// Travelling toward the rendezvous.
    Up,
    /// Following filters back toward subscribers.
    Down,
}

#[derive(Clone, Debug)]
pub struct SubscribeMsg<S> {
    pub sub: SubRef,
    pub predicate: Predicate<S>,
    pub attr: String,
    /// Backups of the hop that sent this message.
    pub sender_backups: Vec<PeerInfo>,
    /// Where the receiver may send events instead of the sender.
    pub offer: Option<PeerInfo>,
    pub renewal: bool,
    pub hops: u32,
}

#[derive(Clone, Debug)]
pub struct EventMsg<S> {
    pub record: Arc<EventRecord<S>>,
    pub attr: String,
    pub phase: Phase,
    /// Backup flag: the receiver must consult the copied table of this node.
    pub acting_for: Option<NodeId>,
    /// Backup flag under which the sender processed the event; echoed in acks.
    pub sender_acting: Option<NodeId>,
    /// Filter-table entry of the sender this copy serves; echoed in acks.
    pub ack_as: Option<NodeId>,
    pub hops: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventAck {
    pub event: EventId,
    pub attr: String,
    pub acting: Option<NodeId>,
    pub ack_as: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub enum ScoutMsg<S> {
    Subscribe(SubscribeMsg<S>),
    SubscribeAck { sub: SubRef },
    Event(EventMsg<S>),
    EventAck(EventAck),
    BackupStore { token: Option<u64>, snapshot: Arc<FilterTable<S>> },
    BackupAck { token: u64 },
    ShortcutOffer { attr: String, target: PeerInfo },
    ShortcutRevoke { attr: String },
    TrackReplicate { record: Arc<EventRecord<S>>, attr: String, complete: bool },
    Handover { attr: String },
}

#[derive(Clone, Debug)]
pub enum FdMsg<S> {
    Advertise { group: GroupId<S>, endpoint: Option<PeerInfo>, attr: String },
    BoardQuery { attr: String, query: u64, origin: PeerInfo },
    BoardReply { attr: String, query: u64, entries: Vec<BoardEntry<S>> },
    FdSubscribe { group: GroupId<S>, record: SubscriberRecord<S> },
    FdDelegate { group: GroupId<S>, version: u64, records: Vec<SubscriberRecord<S>> },
    FdEvent { group: GroupId<S>, record: Arc<EventRecord<S>>, relay: bool, hops: u32 },
}

#[derive(Clone, Debug)]
pub enum Wire<S> {
    Scout(ScoutMsg<S>),
    Fd(FdMsg<S>),
}

impl<S> Wire<S> {
    /// Whether a message lost in transit is simply sent again. Event copies
    /// and their acks are not: recovering them is the job of the ack chain.
    pub fn retry_on_drop(&self) -> bool {
        !matches!(
            self,
            Wire::Scout(ScoutMsg::Event(_)) | Wire::Scout(ScoutMsg::EventAck(_)) | Wire::Fd(FdMsg::FdEvent { .. })
        )
    }
}

/// What actually crosses the simulated network.
#[derive(Clone, Debug)]
pub struct Packet<S> {
    pub from: PeerInfo,
    pub body: Wire<S>,
    /// Transmissions of this packet so far, minus one.
    pub attempt: u8,
}

impl<S: Scalar> TraceMessage for Packet<S> {
    fn kind(&self) -> &'static str {
        match &self.body {
            Wire::Scout(m) => match m {
                ScoutMsg::Subscribe(_) => "Subscribe",
                ScoutMsg::SubscribeAck { .. } => "SubscribeAck",
                ScoutMsg::Event(_) => "Event",
                ScoutMsg::EventAck(_) => "EventAck",
                ScoutMsg::BackupStore { .. } => "BackupStore",
                ScoutMsg::BackupAck { .. } => "BackupAck",
                ScoutMsg::ShortcutOffer { .. } => "ShortcutOffer",
                ScoutMsg::ShortcutRevoke { .. } => "ShortcutRevoke",
                ScoutMsg::TrackReplicate { .. } => "TrackReplicate",
                ScoutMsg::Handover { .. } => "Handover",
            },
            Wire::Fd(m) => match m {
                FdMsg::Advertise { .. } => "Advertise",
                FdMsg::BoardQuery { .. } => "BoardQuery",
                FdMsg::BoardReply { .. } => "BoardReply",
                FdMsg::FdSubscribe { .. } => "FdSubscribe",
                FdMsg::FdDelegate { .. } => "FdDelegate",
                FdMsg::FdEvent { .. } => "FdEvent",
            },
        }
    }

    fn summary(&self) -> String {
        let opt = |o: &Option<NodeId>| o.map_or_else(|| "-".to_string(), |n| n.to_string());
        let body = match &self.body {
            Wire::Scout(m) => match m {
                ScoutMsg::Subscribe(s) => format!(
                    "sub={}#{} pred={} attr={} offer={} renewal={} hops={}",
                    s.sub.origin.id,
                    s.sub.seq,
                    s.predicate,
                    s.attr,
                    opt(&s.offer.map(|p| p.id)),
                    s.renewal,
                    s.hops
                ),
                ScoutMsg::SubscribeAck { sub } => format!("sub={}#{}", sub.origin.id, sub.seq),
                ScoutMsg::Event(e) => format!(
                    "ev={} attr={} phase={:?} acting={} ack_as={} hops={}",
                    e.record.id,
                    e.attr,
                    e.phase,
                    opt(&e.acting_for),
                    opt(&e.ack_as),
                    e.hops
                ),
                ScoutMsg::EventAck(a) => format!(
                    "ev={} attr={} acting={} ack_as={}",
                    a.event,
                    a.attr,
                    opt(&a.acting),
                    opt(&a.ack_as)
                ),
                ScoutMsg::BackupStore { token, snapshot } => {
                    format!("token={token:?} filters={}", snapshot.filter_count())
                }
                ScoutMsg::BackupAck { token } => format!("token={token}"),
                ScoutMsg::ShortcutOffer { attr, target } => format!("attr={attr} target={}", target.id),
                ScoutMsg::ShortcutRevoke { attr } => format!("attr={attr}"),
                ScoutMsg::TrackReplicate { record, attr, complete } => {
                    format!("ev={} attr={attr} complete={complete}", record.id)
                }
                ScoutMsg::Handover { attr } => format!("attr={attr}"),
            },
            Wire::Fd(m) => match m {
                FdMsg::Advertise { group, endpoint, attr } => format!(
                    "group={} attr={attr} private={}",
                    group,
                    endpoint.is_none()
                ),
                FdMsg::BoardQuery { attr, query, .. } => format!("attr={attr} query={query}"),
                FdMsg::BoardReply { attr, query, entries } => {
                    format!("attr={attr} query={query} entries={}", entries.len())
                }
                FdMsg::FdSubscribe { group, record } => {
                    format!("group={group} pred={} cap={}", record.predicate, record.capacity)
                }
                FdMsg::FdDelegate { group, version, records } => format!("group={group} version={version} records={}", records.len()),
                FdMsg::FdEvent { group, record, relay, hops } => {
                    format!("group={group} ev={} relay={relay} hops={hops}", record.id)
                }
            },
        };
        format!("from={} attempt={} {body}", self.from.id, self.attempt)
    }
}
