//! FastDelivery: publisher-hosted multicast groups.
//!
//! A publisher advertises a group on the boards (rendezvous nodes) of its
//! predicate's attributes. Subscribers look groups up on one board and
//! register with the publisher directly, which then matches each event
//! against its subscriber records and sends it straight to the interested
//! nodes. When a region holds more than `threshold` direct subscribers, the
//! highest-capacity subscriber there is recruited as a helper and relays
//! for the lowest-capacity ones, so any event reaches its subscriber in at
//! most two hops.

mod group;
mod range_tree;

pub use group::{Delegation, GroupError, Helper, MulticastGroup, Removal};
pub use range_tree::IntervalTree;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounded::Bounded;
use crate::node::{GroupListing, Io, Note, Overlay, Protocol, Timer};
use crate::overlay::{Address, NodeId, PeerInfo};
use crate::predicate::{matches, EventPredicate, Predicate};
use crate::scalar::Scalar;
use crate::simnet::{FailureReason, SimTime};
use crate::wire::{EventId, EventRecord, FdMsg, Wire};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Direct subscribers per region before helpers are recruited.
    pub threshold: usize,
    /// Re-advertisement period; board entries live for `2t`.
    pub t: SimTime,
    pub dedupe_capacity: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            threshold: 10,
            t: SimTime::from_millis(30_000),
            dedupe_capacity: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FdTimer {
    Readvertise,
}

/// A group is named by its publisher and predicate.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupId<S> {
    pub publisher: NodeId,
    pub predicate: Predicate<S>,
}

impl<S: Scalar> GroupId<S> {
    pub fn key(&self) -> GroupKey {
        (self.publisher, self.predicate.to_string())
    }
}

impl<S: Scalar> fmt::Display for GroupId<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.publisher, self.predicate)
    }
}

pub type GroupKey = (NodeId, String);

#[derive(Clone, Debug, PartialEq)]
pub struct SubscriberRecord<S> {
    pub peer: PeerInfo,
    /// Subscriber-local id of the subscription.
    pub sub: u64,
    /// How many other subscribers this node is willing to relay to.
    pub capacity: u32,
    pub predicate: Predicate<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoardEntry<S> {
    pub group: GroupId<S>,
    /// Publisher endpoint; absent for private groups.
    pub endpoint: Option<PeerInfo>,
    pub expires: SimTime,
}

#[derive(Clone, Debug)]
struct Owned<S> {
    id: GroupId<S>,
    private: bool,
    group: MulticastGroup<S>,
    /// Stamped on every delegation so helpers can discard reordered ones.
    version: u64,
}

#[derive(Clone, Debug)]
struct FdInterest<S> {
    predicate: Predicate<S>,
    capacity: u32,
    groups: BTreeSet<GroupKey>,
}

/// FastDelivery state of one node.
#[derive(Debug)]
pub struct FastDelivery<S> {
    cfg: FdConfig,
    owned: BTreeMap<String, Owned<S>>,
    boards: BTreeMap<String, BTreeMap<GroupKey, BoardEntry<S>>>,
    interests: BTreeMap<u64, FdInterest<S>>,
    queries: BTreeMap<u64, Option<u64>>,
    next_query: u64,
    /// Records this node relays to, per group, as a helper.
    delegated: BTreeMap<GroupKey, (u64, Vec<SubscriberRecord<S>>)>,
    delivered: Bounded<EventId, ()>,
    readvertising: bool,
}

impl<S: Scalar> FastDelivery<S> {
    pub fn new(cfg: FdConfig) -> Self {
        let cap = cfg.dedupe_capacity;
        FastDelivery {
            cfg,
            owned: BTreeMap::new(),
            boards: BTreeMap::new(),
            interests: BTreeMap::new(),
            queries: BTreeMap::new(),
            next_query: 0,
            delegated: BTreeMap::new(),
            delivered: Bounded::new(cap),
            readvertising: false,
        }
    }

    pub fn config(&self) -> &FdConfig {
        &self.cfg
    }

    /// Groups this node publishes.
    pub fn groups(&self) -> impl Iterator<Item = (&GroupId<S>, &MulticastGroup<S>)> {
        self.owned.values().map(|o| (&o.id, &o.group))
    }

    /// Records this node relays to as a helper.
    pub fn delegated(&self) -> impl Iterator<Item = (&GroupKey, &[SubscriberRecord<S>])> {
        self.delegated.iter().map(|(k, (_, v))| (k, v.as_slice()))
    }

    /// Live board entries stored here for `attr`.
    pub fn board(&self, attr: &str, now: SimTime) -> Vec<&BoardEntry<S>> {
        self.boards
            .get(attr)
            .map(|b| b.values().filter(|e| e.expires > now).collect())
            .unwrap_or_default()
    }

    /// Groups each local subscription joined.
    pub fn joined(&self, id: u64) -> Option<&BTreeSet<GroupKey>> {
        self.interests.get(&id).map(|i| &i.groups)
    }

    /// Subscriber records, delegated lists and board entries held here.
    pub fn stored_records(&self) -> usize {
        self.owned.values().map(|o| o.group.len()).sum::<usize>()
            + self.delegated.values().map(|(_, v)| v.len()).sum::<usize>()
            + self.boards.values().map(BTreeMap::len).sum::<usize>()
    }

    pub fn audit(&self) -> Result<(), String> {
        for o in self.owned.values() {
            o.group.audit().map_err(|e| format!("group {}: {e}", o.id))?;
        }
        Ok(())
    }

    pub(crate) fn on_join(&mut self, _ov: &mut Overlay, _io: &mut Io<'_, '_, S>) {}

    // ---- publisher ----

    pub(crate) fn create_group(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, predicate: Predicate<S>, private: bool) {
        let id = GroupId {
            publisher: ov.me().id,
            predicate: predicate.clone(),
        };
        let group = MulticastGroup::new(predicate, self.cfg.threshold);
        self.owned.insert(id.predicate.to_string(), Owned { id: id.clone(), private, group, version: 0 });
        self.advertise(ov, io, &id, private);
        if !self.readvertising {
            self.readvertising = true;
            io.timer(self.cfg.t, Timer::Fd(FdTimer::Readvertise));
        }
    }

    fn advertise(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, id: &GroupId<S>, private: bool) {
        let endpoint = (!private).then(|| ov.me());
        for attr in id.predicate.attribute_names() {
            self.route(
                ov,
                io,
                FdMsg::Advertise {
                    group: id.clone(),
                    endpoint,
                    attr: attr.to_string(),
                },
            );
        }
    }

    fn on_fd_subscribe(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, group: GroupId<S>, record: SubscriberRecord<S>) {
        let me = ov.me().id;
        let Some(o) = self.owned.get_mut(&group.predicate.to_string()).filter(|_| group.publisher == me) else {
            io.note(Note::FdRejected { publisher: me });
            return;
        };
        match o.group.add(record) {
            Ok(delegations) => {
                let id = o.id.clone();
                send_delegations(io, &id, &mut o.version, delegations);
            }
            Err(_) => io.note(Note::FdRejected { publisher: me }),
        }
    }

    pub(crate) fn publish(
        &mut self,
        ov: &mut Overlay,
        io: &mut Io<'_, '_, S>,
        seq: u64,
        predicate: EventPredicate<S>,
        payload: Vec<u8>,
    ) {
        let me = ov.me();
        let record = Arc::new(EventRecord {
            id: EventId { publisher: me.id, seq },
            origin: me,
            predicate,
            payload,
            published_at: io.now(),
        });
        let mut sends: Vec<(PeerInfo, GroupId<S>, bool)> = Vec::new();
        let mut direct_seen = BTreeSet::new();
        let mut ops = 0;
        for o in self.owned.values_mut() {
            let helpers: BTreeSet<NodeId> = o.group.helpers().map(|h| h.peer.id).collect();
            let (hits, n) = o.group.matching(&record.predicate);
            ops += n;
            for r in hits {
                if !helpers.contains(&r.peer.id) && direct_seen.insert(r.peer.id) {
                    sends.push((r.peer, o.id.clone(), false));
                }
            }
            for h in o.group.helpers() {
                sends.push((h.peer, o.id.clone(), true));
            }
        }
        io.charge(ops);
        io.note(Note::Published {
            event: record.id,
            copies: sends.len(),
        });
        for (peer, group, relay) in sends {
            io.send(
                peer.endpoint,
                Wire::Fd(FdMsg::FdEvent {
                    group,
                    record: record.clone(),
                    relay,
                    hops: 1,
                }),
            );
        }
    }

    fn on_fd_event(&mut self, io: &mut Io<'_, '_, S>, group: GroupId<S>, record: Arc<EventRecord<S>>, relay: bool, hops: u32) {
        let key = group.key();
        self.deliver_local(io, &key, &record, hops);
        if !relay {
            return;
        }
        let Some((_, list)) = self.delegated.get(&key) else {
            return;
        };
        let mut ops = 0;
        let mut seen = BTreeSet::new();
        let targets: Vec<PeerInfo> = list
            .iter()
            .filter(|r| {
                ops += 1;
                matches(&r.predicate, &record.predicate)
            })
            .filter(|r| seen.insert(r.peer.id))
            .map(|r| r.peer)
            .collect();
        io.charge(ops);
        for peer in targets {
            io.send(
                peer.endpoint,
                Wire::Fd(FdMsg::FdEvent {
                    group: group.clone(),
                    record: record.clone(),
                    relay: false,
                    hops: hops + 1,
                }),
            );
        }
    }

    fn deliver_local(&mut self, io: &mut Io<'_, '_, S>, key: &GroupKey, record: &EventRecord<S>, hops: u32) {
        let hit = self
            .interests
            .values()
            .any(|i| i.groups.contains(key) && matches(&i.predicate, &record.predicate));
        if hit && !self.delivered.contains(&record.id) {
            self.delivered.insert_new(record.id, ());
            io.note(Note::Delivered {
                event: record.id,
                protocol: Protocol::FastDelivery,
                attr: None,
                latency: io.now() - record.published_at,
                hops,
            });
        }
    }

    /// A send from the publisher failed for good: drop the peer and, if it
    /// was a helper, take its subscribers back.
    fn lose_peer(&mut self, io: &mut Io<'_, '_, S>, group: &GroupId<S>, to: Address, event: Option<&Arc<EventRecord<S>>>) {
        let Some(o) = self.owned.get_mut(&group.predicate.to_string()) else {
            return;
        };
        let Some(peer) = o.group.peer_at(to) else {
            return;
        };
        let was_helper = o.group.is_helper(&peer.id);
        let removal = o.group.remove_peer(&peer.id);
        let id = o.id.clone();
        match removal.reabsorbed {
            Some(back) if was_helper => {
                io.note(Note::HelperLost {
                    helper: peer.id,
                    reabsorbed: back.len(),
                });
                if let Some(record) = event {
                    let mut seen = BTreeSet::new();
                    for r in &back {
                        if matches(&r.predicate, &record.predicate) && seen.insert(r.peer.id) {
                            io.send(
                                r.peer.endpoint,
                                Wire::Fd(FdMsg::FdEvent {
                                    group: id.clone(),
                                    record: record.clone(),
                                    relay: false,
                                    hops: 1,
                                }),
                            );
                        }
                    }
                }
            }
            _ => io.note(Note::SubscriberLost { peer: peer.id }),
        }
        send_delegations(io, &id, &mut o.version, removal.delegations);
    }

    // ---- boards ----

    fn route(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, msg: FdMsg<S>) {
        let attr = match &msg {
            FdMsg::Advertise { attr, .. } | FdMsg::BoardQuery { attr, .. } => attr.clone(),
            _ => return,
        };
        let Ok(key) = ov.key(&attr) else {
            io.note(Note::MalformedDropped);
            return;
        };
        match ov.next_hop(&key) {
            Some(next) => io.send(next.endpoint, Wire::Fd(msg)),
            None => self.at_board(ov, io, msg),
        }
    }

    fn at_board(&mut self, _ov: &mut Overlay, io: &mut Io<'_, '_, S>, msg: FdMsg<S>) {
        let now = io.now();
        match msg {
            FdMsg::Advertise { group, endpoint, attr } => {
                let board = self.boards.entry(attr).or_default();
                board.retain(|_, e| e.expires > now);
                board.insert(
                    group.key(),
                    BoardEntry {
                        group,
                        endpoint,
                        expires: now + self.cfg.t * 2,
                    },
                );
            }
            FdMsg::BoardQuery { attr, query, origin } => {
                let entries = self.board(&attr, now).into_iter().cloned().collect();
                io.send(origin.endpoint, Wire::Fd(FdMsg::BoardReply { attr, query, entries }));
            }
            _ => {}
        }
    }

    // ---- subscriber ----

    pub(crate) fn join_groups(
        &mut self,
        ov: &mut Overlay,
        io: &mut Io<'_, '_, S>,
        id: u64,
        predicate: Predicate<S>,
        capacity: u32,
    ) {
        let Some(attr) = predicate.attribute_names().into_iter().next().map(str::to_string) else {
            io.note(Note::MalformedDropped);
            return;
        };
        self.interests.insert(
            id,
            FdInterest {
                predicate,
                capacity,
                groups: BTreeSet::new(),
            },
        );
        self.discover(ov, io, attr, Some(id));
    }

    pub(crate) fn discover(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, attr: String, for_interest: Option<u64>) {
        let query = self.next_query;
        self.next_query += 1;
        self.queries.insert(query, for_interest);
        let origin = ov.me();
        self.route(ov, io, FdMsg::BoardQuery { attr, query, origin });
    }

    fn on_board_reply(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, attr: String, query: u64, entries: Vec<BoardEntry<S>>) {
        let Some(pending) = self.queries.remove(&query) else {
            return;
        };
        let Some(id) = pending else {
            let groups = entries
                .iter()
                .map(|e| GroupListing {
                    publisher: e.group.publisher,
                    predicate: e.group.predicate.to_string(),
                    endpoint: e.endpoint.map(|p| p.endpoint),
                })
                .collect();
            io.note(Note::GroupsDiscovered { attr, groups });
            return;
        };
        let me = ov.me();
        let Some(interest) = self.interests.get_mut(&id) else {
            return;
        };
        for e in entries {
            let Some(publisher) = e.endpoint else {
                continue;
            };
            if !interest.predicate.names_within(&e.group.predicate) {
                continue;
            }
            interest.groups.insert(e.group.key());
            let record = SubscriberRecord {
                peer: me,
                sub: id,
                capacity: interest.capacity,
                predicate: interest.predicate.clone(),
            };
            io.note(Note::GroupJoined {
                id,
                publisher: e.group.publisher,
            });
            io.send(publisher.endpoint, Wire::Fd(FdMsg::FdSubscribe { group: e.group, record }));
        }
    }

    // ---- dispatch ----

    pub(crate) fn on_message(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, _from: PeerInfo, msg: FdMsg<S>) {
        match msg {
            m @ (FdMsg::Advertise { .. } | FdMsg::BoardQuery { .. }) => self.route(ov, io, m),
            FdMsg::BoardReply { attr, query, entries } => self.on_board_reply(ov, io, attr, query, entries),
            FdMsg::FdSubscribe { group, record } => self.on_fd_subscribe(ov, io, group, record),
            FdMsg::FdDelegate { group, version, records } => {
                let key = group.key();
                if self.delegated.get(&key).is_some_and(|(v, _)| *v > version) {
                    return;
                }
                self.delegated.insert(key, (version, records));
            }
            FdMsg::FdEvent { group, record, relay, hops } => self.on_fd_event(io, group, record, relay, hops),
        }
    }

    pub(crate) fn on_timer(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, t: FdTimer) {
        match t {
            FdTimer::Readvertise => {
                let groups: Vec<(GroupId<S>, bool)> = self.owned.values().map(|o| (o.id.clone(), o.private)).collect();
                for (id, private) in groups {
                    self.advertise(ov, io, &id, private);
                }
                io.timer(self.cfg.t, Timer::Fd(FdTimer::Readvertise));
            }
        }
    }

    pub(crate) fn on_failure(
        &mut self,
        ov: &mut Overlay,
        io: &mut Io<'_, '_, S>,
        to: Address,
        msg: FdMsg<S>,
        reason: FailureReason,
    ) {
        let dead = reason != FailureReason::Dropped;
        let me = ov.me().id;
        match msg {
            m @ (FdMsg::Advertise { .. } | FdMsg::BoardQuery { .. }) if dead => self.route(ov, io, m),
            FdMsg::FdEvent { group, record, .. } if group.publisher == me => {
                if dead {
                    self.lose_peer(io, &group, to, Some(&record));
                }
            }
            FdMsg::FdDelegate { group, .. } if dead => self.lose_peer(io, &group, to, None),
            FdMsg::FdEvent { group, .. } if dead => {
                // A helper could not reach one of its delegated subscribers.
                if let Some((_, list)) = self.delegated.get(&group.key()) {
                    if let Some(r) = list.iter().find(|r| r.peer.endpoint == to) {
                        io.note(Note::SubscriberLost { peer: r.peer.id });
                    }
                }
            }
            _ => {}
        }
    }
}

fn send_delegations<S: Scalar>(io: &mut Io<'_, '_, S>, group: &GroupId<S>, version: &mut u64, delegations: Vec<Delegation<S>>) {
    for d in delegations {
        *version += 1;
        io.note(Note::HelperRecruited {
            helper: d.helper.id,
            delegated: d.records.len(),
        });
        io.send(
            d.helper.endpoint,
            Wire::Fd(FdMsg::FdDelegate {
                group: group.clone(),
                version: *version,
                records: d.records,
            }),
        );
    }
}
