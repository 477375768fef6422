use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bounded::Bounded;
use super::{choose_subscription_rendezvous, FilterEntry, FilterTable, ScoutConfig};
use crate::node::{Io, Note, Overlay, Protocol, Timer};
use crate::overlay::{Address, NodeId, PeerInfo};
use crate::predicate::{EventPredicate, Predicate};
use crate::scalar::Scalar;
use crate::simnet::{FailureReason, SimTime, TimerId};
use crate::wire::{EventAck, EventId, EventMsg, EventRecord, Phase, ScoutMsg, SubRef, SubscribeMsg, Wire};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScoutTimer {
    Refresh { id: u64 },
    Swap,
    RvResend { event: EventId, attr: String, acting: Option<NodeId> },
    PublishResend { event: EventId, attr: String },
    Takeover { event: EventId, attr: String },
}

/// A local subscription.
#[derive(Clone, Debug)]
pub struct Interest<S> {
    pub predicate: Predicate<S>,
    /// Rendezvous attribute the subscription is routed under.
    pub attr: String,
    pub issued_at: SimTime,
    pub settled: bool,
}

#[derive(Clone, Debug)]
struct BackupCopy<S> {
    owner: PeerInfo,
    table: Arc<FilterTable<S>>,
    stored_at: SimTime,
}

/// A subscribe held back until the node's backups confirmed its new table.
#[derive(Debug)]
struct Waiting<S> {
    msg: SubscribeMsg<S>,
    awaiting: BTreeSet<Address>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    peer: PeerInfo,
    acting: Option<NodeId>,
}

/// Where one filter-table entry's copy goes: the shortcut, the peer itself,
/// then the peer's backups, in that order.
#[derive(Clone, Debug)]
struct Plan {
    candidates: Vec<Candidate>,
    idx: usize,
}

impl Plan {
    fn current(&self) -> Option<Candidate> {
        self.candidates.get(self.idx).copied()
    }
}

type DownKey = (EventId, String, Option<NodeId>);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Upstream {
    addr: Address,
    acting: Option<NodeId>,
    ack_as: Option<NodeId>,
}

/// Dissemination state of one event copy at one node.
#[derive(Debug)]
struct Forward<S> {
    record: Arc<EventRecord<S>>,
    hops: u32,
    upstreams: BTreeSet<Upstream>,
    /// Entries that have not acknowledged yet.
    pending: BTreeMap<NodeId, Plan>,
    root: bool,
    rounds: u32,
    complete: bool,
    timer: Option<TimerId>,
    /// Last time the pending plans were (re)sent.
    fired_at: SimTime,
}

impl<S> Forward<S> {
    fn new(record: Arc<EventRecord<S>>, hops: u32, root: bool) -> Self {
        Forward {
            record,
            hops,
            upstreams: BTreeSet::new(),
            pending: BTreeMap::new(),
            root,
            rounds: 0,
            complete: false,
            timer: None,
            fired_at: SimTime::ZERO,
        }
    }
}

#[derive(Debug)]
struct Publication<S> {
    record: Arc<EventRecord<S>>,
    attempts: u32,
    timer: TimerId,
}

#[derive(Debug)]
struct Replica<S> {
    record: Arc<EventRecord<S>>,
    owner: PeerInfo,
    complete: bool,
    timer: Option<TimerId>,
}

/// ScoutSubs state of one node.
#[derive(Debug)]
pub struct Scout<S> {
    cfg: ScoutConfig,
    interests: BTreeMap<u64, Interest<S>>,
    pending_subs: BTreeMap<u64, u64>,
    next_sub_seq: u64,
    main: FilterTable<S>,
    secondary: FilterTable<S>,
    copies: BTreeMap<NodeId, BackupCopy<S>>,
    /// Peers sent a copy of this node's table since the last swap.
    copy_holders: BTreeSet<PeerInfo>,
    waiting: BTreeMap<u64, Waiting<S>>,
    next_token: u64,
    /// Last shortcut offer sent upstream per attribute.
    advertised: BTreeMap<String, Option<NodeId>>,
    forwards: Bounded<DownKey, Forward<S>>,
    /// Events already handed to the application.
    delivered: Bounded<EventId, ()>,
    publications: BTreeMap<(EventId, String), Publication<S>>,
    replicas: Bounded<(EventId, String), Replica<S>>,
    late: bool,
    swaps_since_join: u32,
    handed_over: BTreeSet<String>,
}

impl<S: Scalar> Scout<S> {
    pub fn new(cfg: ScoutConfig) -> Self {
        let cap = cfg.dedupe_capacity;
        Scout {
            cfg,
            interests: BTreeMap::new(),
            pending_subs: BTreeMap::new(),
            next_sub_seq: 0,
            main: FilterTable::new(),
            secondary: FilterTable::new(),
            copies: BTreeMap::new(),
            copy_holders: BTreeSet::new(),
            waiting: BTreeMap::new(),
            next_token: 0,
            advertised: BTreeMap::new(),
            forwards: Bounded::new(cap),
            delivered: Bounded::new(cap),
            publications: BTreeMap::new(),
            replicas: Bounded::new(cap),
            late: false,
            swaps_since_join: 0,
            handed_over: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &ScoutConfig {
        &self.cfg
    }

    pub fn interests(&self) -> &BTreeMap<u64, Interest<S>> {
        &self.interests
    }

    pub fn main(&self) -> &FilterTable<S> {
        &self.main
    }

    pub fn secondary(&self) -> &FilterTable<S> {
        &self.secondary
    }

    /// Filter tables this node holds as a backup, by owner.
    pub fn copies(&self) -> impl Iterator<Item = (NodeId, &FilterTable<S>)> {
        self.copies.iter().map(|(id, c)| (*id, c.table.as_ref()))
    }

    /// Filters stored in main, secondary and backup copies.
    pub fn stored_filters(&self) -> usize {
        self.main.filter_count()
            + self.secondary.filter_count()
            + self.copies.values().map(|c| c.table.filter_count()).sum::<usize>()
    }

    /// Whether any table on this node (own or copied) holds a filter
    /// satisfying `pred`.
    pub fn holds_filter(&self, mut pred: impl FnMut(&Predicate<S>) -> bool) -> bool {
        self.main.any_filter(&mut pred)
            || self.secondary.any_filter(&mut pred)
            || self.copies.values().any(|c| c.table.any_filter(&mut pred))
    }

    /// Event copies with dissemination state on this node.
    pub fn tracked_copies(&self) -> usize {
        self.forwards.len()
    }

    pub fn audit(&self) -> Result<(), String> {
        self.main.audit(false).map_err(|e| format!("main: {e}"))?;
        self.secondary.audit(false).map_err(|e| format!("secondary: {e}"))
    }

    fn in_handover(&self) -> bool {
        self.late && self.swaps_since_join < 2
    }

    fn swap_period(&self) -> SimTime {
        self.cfg.t * 2
    }

    pub(crate) fn on_join(&mut self, _ov: &mut Overlay, io: &mut Io<'_, '_, S>, late: bool) {
        self.late = late;
        // Swaps are aligned to global multiples of 2t.
        let period = self.swap_period().as_micros().max(1);
        let now = io.now().as_micros();
        let next = (now / period + 1) * period;
        io.timer(SimTime::from_micros(next - now), Timer::Scout(ScoutTimer::Swap));
    }

    // ---- subscriptions ----

    pub(crate) fn subscribe(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, id: u64, predicate: Predicate<S>) {
        let me = ov.me().id;
        let Ok((attr, _)) = choose_subscription_rendezvous(&predicate, &me, &ov.space()) else {
            io.note(Note::MalformedDropped);
            return;
        };
        self.interests.insert(
            id,
            Interest {
                predicate,
                attr,
                issued_at: io.now(),
                settled: false,
            },
        );
        self.send_subscription(ov, io, id, false);
        io.timer(self.cfg.t, Timer::Scout(ScoutTimer::Refresh { id }));
    }

    pub(crate) fn unsubscribe(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, id: u64) {
        if let Some(i) = self.interests.remove(&id) {
            self.reevaluate_offer(ov, io, &i.attr);
        }
    }

    fn send_subscription(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, id: u64, renewal: bool) {
        let Some(i) = self.interests.get(&id) else {
            return;
        };
        let seq = self.next_sub_seq;
        self.next_sub_seq += 1;
        if !renewal {
            self.pending_subs.insert(seq, id);
        }
        let msg = SubscribeMsg {
            sub: SubRef { origin: ov.me(), seq },
            predicate: i.predicate.clone(),
            attr: i.attr.clone(),
            sender_backups: Vec::new(),
            offer: None,
            renewal,
            hops: 0,
        };
        self.proceed(ov, io, msg);
    }

    /// Sends a subscribe one hop further, or acknowledges it at the rendezvous.
    fn proceed(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, mut msg: SubscribeMsg<S>) {
        let Ok(key) = ov.key(&msg.attr) else {
            io.note(Note::MalformedDropped);
            return;
        };
        match ov.next_hop(&key) {
            Some(next) => {
                msg.sender_backups = ov.backups(self.cfg.f);
                msg.offer = self.offer_for(&msg.attr);
                if self.cfg.redirect {
                    self.advertised.insert(msg.attr.clone(), msg.offer.map(|p| p.id));
                }
                io.send(next.endpoint, Wire::Scout(ScoutMsg::Subscribe(msg)));
            }
            None => {
                if !msg.renewal {
                    io.send(msg.sub.origin.endpoint, Wire::Scout(ScoutMsg::SubscribeAck { sub: msg.sub }));
                }
            }
        }
    }

    fn on_subscribe(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, from: PeerInfo, mut msg: SubscribeMsg<S>) {
        if !msg.predicate.attribute_names().contains(msg.attr.as_str()) || ov.key(&msg.attr).is_err() {
            io.note(Note::MalformedDropped);
            return;
        }
        msg.hops += 1;
        let (_, a) = self.main.insert(from, &msg.sender_backups, &msg.attr, msg.predicate.clone());
        let (_, b) = self.secondary.insert(from, &msg.sender_backups, &msg.attr, msg.predicate.clone());
        io.charge(a + b);
        if self.cfg.redirect {
            self.main.set_shortcut(&from.id, &msg.attr, msg.offer);
            self.secondary.set_shortcut(&from.id, &msg.attr, msg.offer);
        }
        self.replicate_then_proceed(ov, io, msg);
    }

    /// Pushes the updated table to the backups (and, at the rendezvous, to
    /// the nodes next-closest to the key) and forwards once they confirmed.
    fn replicate_then_proceed(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, msg: SubscribeMsg<S>) {
        let mut targets = ov.backups(self.cfg.f);
        if let Ok(key) = ov.key(&msg.attr) {
            if ov.is_rendezvous(&key) {
                for p in ov.closest_to(&key, self.cfg.f) {
                    if !targets.contains(&p) {
                        targets.push(p);
                    }
                }
            }
        }
        if targets.is_empty() {
            self.proceed(ov, io, msg);
            return;
        }
        let token = self.next_token;
        self.next_token += 1;
        let snapshot = Arc::new(self.main.clone());
        self.copy_holders.extend(targets.iter().copied());
        for t in &targets {
            io.send(
                t.endpoint,
                Wire::Scout(ScoutMsg::BackupStore {
                    token: Some(token),
                    snapshot: snapshot.clone(),
                }),
            );
        }
        let awaiting = targets.iter().map(|p| p.endpoint).collect();
        self.waiting.insert(token, Waiting { msg, awaiting });
    }

    fn backup_confirmed(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, token: u64, by: Address) {
        let done = match self.waiting.get_mut(&token) {
            Some(w) => {
                w.awaiting.remove(&by);
                w.awaiting.is_empty()
            }
            None => false,
        };
        if done {
            if let Some(w) = self.waiting.remove(&token) {
                self.proceed(ov, io, w.msg);
            }
        }
    }

    fn on_subscribe_ack(&mut self, io: &mut Io<'_, '_, S>, sub: SubRef) {
        let Some(id) = self.pending_subs.remove(&sub.seq) else {
            return;
        };
        if let Some(i) = self.interests.get_mut(&id) {
            if !i.settled {
                i.settled = true;
                let latency = io.now() - i.issued_at;
                io.note(Note::SubscriptionSettled { id, latency });
            }
        }
    }

    // ---- shortcuts ----

    /// The peer this node offers upstream for `attr`: set when exactly one
    /// downstream entry is routed on it and no local subscription needs it.
    fn offer_for(&self, attr: &str) -> Option<PeerInfo> {
        if !self.cfg.redirect || self.interests.values().any(|i| i.attr == attr) {
            return None;
        }
        let mut routed = self.main.routed(attr);
        let only = routed.next()?;
        if routed.next().is_some() {
            return None;
        }
        Some(only.shortcuts.get(attr).copied().unwrap_or(only.peer))
    }

    fn reevaluate_offer(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, attr: &str) {
        if !self.cfg.redirect {
            return;
        }
        let Some(prev) = self.advertised.get(attr).copied() else {
            return;
        };
        let offer = self.offer_for(attr);
        if offer.map(|p| p.id) == prev {
            return;
        }
        let Ok(key) = ov.key(attr) else {
            return;
        };
        if let Some(up) = ov.next_hop(&key) {
            let msg = match offer {
                Some(target) => ScoutMsg::ShortcutOffer {
                    attr: attr.to_string(),
                    target,
                },
                None => ScoutMsg::ShortcutRevoke { attr: attr.to_string() },
            };
            io.send(up.endpoint, Wire::Scout(msg));
        }
        self.advertised.insert(attr.to_string(), offer.map(|p| p.id));
    }

    fn on_shortcut(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, from: PeerInfo, attr: String, target: Option<PeerInfo>) {
        if !self.cfg.redirect {
            return;
        }
        self.main.set_shortcut(&from.id, &attr, target);
        self.secondary.set_shortcut(&from.id, &attr, target);
        self.reevaluate_offer(ov, io, &attr);
    }

    // ---- refresh cycle ----

    fn on_swap(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>) {
        self.main = std::mem::take(&mut self.secondary);
        let now = io.now();
        let horizon = self.cfg.t * 2 + SimTime::from_micros(self.cfg.t.as_micros() / 2);
        self.copies.retain(|_, c| now.saturating_sub(c.stored_at) <= horizon);

        let mut targets = ov.backups(self.cfg.f);
        let attrs: Vec<String> = self.main.counters().keys().cloned().collect();
        for attr in &attrs {
            if let Ok(key) = ov.key(attr) {
                if ov.is_rendezvous(&key) {
                    for p in ov.closest_to(&key, self.cfg.f) {
                        if !targets.contains(&p) {
                            targets.push(p);
                        }
                    }
                }
            }
        }
        let snapshot = Arc::new(self.main.clone());
        // Former holders get an empty table, which tells them to drop theirs.
        let empty = Arc::new(FilterTable::new());
        let holders = std::mem::replace(&mut self.copy_holders, targets.iter().copied().collect());
        for p in holders.into_iter().filter(|p| !targets.contains(p)) {
            io.send(
                p.endpoint,
                Wire::Scout(ScoutMsg::BackupStore {
                    token: None,
                    snapshot: empty.clone(),
                }),
            );
        }
        for t in targets {
            io.send(
                t.endpoint,
                Wire::Scout(ScoutMsg::BackupStore {
                    token: None,
                    snapshot: snapshot.clone(),
                }),
            );
        }
        let advertised: Vec<String> = self.advertised.keys().cloned().collect();
        for attr in advertised {
            self.reevaluate_offer(ov, io, &attr);
        }
        self.swaps_since_join = self.swaps_since_join.saturating_add(1);
        io.timer(self.swap_period(), Timer::Scout(ScoutTimer::Swap));
    }

    // ---- events ----

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
        let attrs: Vec<String> = record
            .predicate
            .predicate()
            .attribute_names()
            .into_iter()
            .map(str::to_string)
            .collect();
        io.note(Note::Published {
            event: record.id,
            copies: attrs.len(),
        });
        for attr in attrs {
            if self.cfg.reliable {
                let timer = io.timer(
                    self.cfg.ack_timeout,
                    Timer::Scout(ScoutTimer::PublishResend {
                        event: record.id,
                        attr: attr.clone(),
                    }),
                );
                self.publications.insert(
                    (record.id, attr.clone()),
                    Publication {
                        record: record.clone(),
                        attempts: 1,
                        timer,
                    },
                );
            }
            self.route_up(ov, io, up_copy(record.clone(), attr));
        }
    }

    fn route_up(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, msg: EventMsg<S>) {
        let Ok(key) = ov.key(&msg.attr) else {
            io.note(Note::MalformedDropped);
            return;
        };
        match ov.next_hop(&key) {
            Some(next) => io.send(next.endpoint, Wire::Scout(ScoutMsg::Event(msg))),
            None => self.at_rendezvous(ov, io, msg),
        }
    }

    fn ack_publisher(&self, io: &mut Io<'_, '_, S>, record: &EventRecord<S>, attr: &str) {
        if self.cfg.reliable {
            io.send(
                record.origin.endpoint,
                Wire::Scout(ScoutMsg::EventAck(EventAck {
                    event: record.id,
                    attr: attr.to_string(),
                    acting: None,
                    ack_as: None,
                })),
            );
        }
    }

    fn at_rendezvous(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, msg: EventMsg<S>) {
        let dk: DownKey = (msg.record.id, msg.attr.clone(), None);
        if self.forwards.contains(&dk) {
            self.ack_publisher(io, &msg.record, &msg.attr);
            return;
        }
        let mut st = Forward::new(msg.record.clone(), msg.hops, true);
        self.fan_out(ov, io, &dk, &mut st);
        if self.cfg.reliable {
            if let Ok(key) = ov.key(&msg.attr) {
                for b in ov.closest_to(&key, self.cfg.f) {
                    io.send(
                        b.endpoint,
                        Wire::Scout(ScoutMsg::TrackReplicate {
                            record: msg.record.clone(),
                            attr: msg.attr.clone(),
                            complete: st.pending.is_empty(),
                        }),
                    );
                }
            }
            self.ack_publisher(io, &msg.record, &msg.attr);
            self.start_tracker(io, &dk, &mut st);
        } else {
            st.complete = st.pending.is_empty();
        }
        self.forwards.insert_new(dk, st);
    }

    fn start_tracker(&self, io: &mut Io<'_, '_, S>, dk: &DownKey, st: &mut Forward<S>) {
        io.note(Note::TrackerStarted {
            event: dk.0,
            attr: dk.1.clone(),
            interested: st.pending.len(),
        });
        if st.pending.is_empty() {
            st.complete = true;
            io.note(Note::TrackerComplete {
                event: dk.0,
                attr: dk.1.clone(),
                rounds: 0,
            });
        } else {
            st.timer = Some(io.timer(self.cfg.ack_timeout, resend_timer(dk)));
        }
    }

    fn on_down(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, from: PeerInfo, msg: EventMsg<S>) {
        let dk: DownKey = (msg.record.id, msg.attr.clone(), msg.acting_for);
        let up = Upstream {
            addr: from.endpoint,
            acting: msg.sender_acting,
            ack_as: msg.ack_as,
        };
        if let Some(mut st) = self.forwards.take(&dk) {
            if self.cfg.reliable {
                st.upstreams.insert(up.clone());
                if st.complete {
                    send_ack(io, &dk, &up);
                } else if io.now().saturating_sub(st.fired_at) * 2 >= self.cfg.ack_timeout {
                    // A repeated copy means some ack got lost upstream; chase
                    // the pending entries again, at most every half timeout
                    // so copies circling through backups cannot snowball.
                    st.fired_at = io.now();
                    refire(io, &dk, &st);
                }
            }
            self.forwards.put_back(dk, st);
            return;
        }
        let mut st = Forward::new(msg.record.clone(), msg.hops, false);
        st.upstreams.insert(up);
        self.fan_out(ov, io, &dk, &mut st);
        if st.pending.is_empty() {
            st.complete = true;
            if self.cfg.reliable {
                for u in &st.upstreams {
                    send_ack(io, &dk, u);
                }
            }
        }
        self.forwards.insert_new(dk, st);
    }

    /// Local delivery plus one plan per matching filter-table entry.
    fn fan_out(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, dk: &DownKey, st: &mut Forward<S>) {
        let (_, attr, acting) = dk;
        let ev = &st.record.predicate;
        let redirect = self.cfg.redirect;
        let mut plans: BTreeMap<NodeId, Plan> = BTreeMap::new();
        let mut ops = 0;
        let me = ov.me().id;
        let mut add = |table: &FilterTable<S>, plans: &mut BTreeMap<NodeId, Plan>| {
            for e in table.routed(attr) {
                // A copied table may list this node; its own processing of
                // the copy is the one in progress.
                if acting.is_none() && e.peer.id == me {
                    continue;
                }
                let (m, n) = e.matches(attr, ev);
                ops += n;
                if m && !plans.contains_key(&e.peer.id) {
                    plans.insert(e.peer.id, plan_for(e, attr, redirect));
                }
            }
        };
        match acting {
            None => {
                self.deliver_local(io, st, attr);
                add(&self.main, &mut plans);
                if let Ok(key) = ov.key(attr) {
                    if ov.is_rendezvous(&key) {
                        // Entries of a departed node that used to be closer
                        // to the key live on in its backup copy here.
                        for c in self.copies.values() {
                            if ov.closer_than_me(&c.owner.id, &key) && !ov.knows(&c.owner.id) {
                                add(&c.table, &mut plans);
                            }
                        }
                        if self.in_handover() {
                            if let Some(old) = ov.closest_to(&key, 1).first().copied() {
                                let mut candidates = vec![Candidate { peer: old, acting: None }];
                                for b in ov.closest_to(&key, self.cfg.f + 1) {
                                    if b.id != old.id {
                                        candidates.push(Candidate {
                                            peer: b,
                                            acting: Some(old.id),
                                        });
                                    }
                                }
                                plans.entry(old.id).or_insert(Plan { candidates, idx: 0 });
                                if self.handed_over.insert(attr.clone()) {
                                    io.send(old.endpoint, Wire::Scout(ScoutMsg::Handover { attr: attr.clone() }));
                                    io.note(Note::HandoverForward {
                                        attr: attr.clone(),
                                        old: old.id,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            Some(owner) => {
                if let Some(c) = self.copies.get(owner) {
                    add(&c.table, &mut plans);
                }
            }
        }
        io.charge(ops);
        st.fired_at = io.now();
        for (eid, plan) in &plans {
            if let Some(c) = plan.current() {
                send_down(io, dk, *eid, c, &st.record, st.hops);
            }
        }
        st.pending = plans;
    }

    fn deliver_local(&mut self, io: &mut Io<'_, '_, S>, st: &Forward<S>, attr: &str) {
        let ev = &st.record.predicate;
        let mut ops = 0;
        let hit = self.interests.values().filter(|i| i.attr == attr).any(|i| {
            ops += 1;
            crate::predicate::matches(&i.predicate, ev)
        });
        io.charge(ops);
        if hit && !self.delivered.contains(&st.record.id) {
            self.delivered.insert_new(st.record.id, ());
            io.note(Note::Delivered {
                event: st.record.id,
                protocol: Protocol::ScoutSubs,
                attr: Some(attr.to_string()),
                latency: io.now() - st.record.published_at,
                hops: st.hops,
            });
        }
    }

    fn on_event_ack(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, ack: EventAck) {
        let Some(entry) = ack.ack_as else {
            if let Some(p) = self.publications.remove(&(ack.event, ack.attr.clone())) {
                io.cancel(p.timer);
                io.note(Note::PublishAcked {
                    event: ack.event,
                    attr: ack.attr,
                    attempts: p.attempts,
                });
            }
            return;
        };
        let dk: DownKey = (ack.event, ack.attr, ack.acting);
        let Some(mut st) = self.forwards.take(&dk) else {
            io.note(Note::UnknownAck);
            return;
        };
        if st.pending.remove(&entry).is_some() && st.pending.is_empty() && !st.complete {
            self.complete(ov, io, &dk, &mut st);
        }
        self.forwards.put_back(dk, st);
    }

    fn complete(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, dk: &DownKey, st: &mut Forward<S>) {
        st.complete = true;
        if st.root {
            if let Some(t) = st.timer.take() {
                io.cancel(t);
            }
            io.note(Note::TrackerComplete {
                event: dk.0,
                attr: dk.1.clone(),
                rounds: st.rounds,
            });
            if dk.2.is_none() && self.cfg.reliable {
                if let Ok(key) = ov.key(&dk.1) {
                    for b in ov.closest_to(&key, self.cfg.f) {
                        io.send(
                            b.endpoint,
                            Wire::Scout(ScoutMsg::TrackReplicate {
                                record: st.record.clone(),
                                attr: dk.1.clone(),
                                complete: true,
                            }),
                        );
                    }
                }
            }
        } else if self.cfg.reliable {
            for u in &st.upstreams {
                send_ack(io, dk, u);
            }
        }
    }

    fn on_rv_resend(&mut self, io: &mut Io<'_, '_, S>, dk: DownKey) {
        let Some(mut st) = self.forwards.take(&dk) else {
            return;
        };
        st.timer = None;
        if !st.complete {
            if st.rounds >= self.cfg.max_resend_rounds {
                io.note(Note::TrackerAbandoned {
                    event: dk.0,
                    attr: dk.1.clone(),
                    pending: st.pending.len(),
                });
            } else {
                st.rounds += 1;
                st.fired_at = io.now();
                refire(io, &dk, &st);
                st.timer = Some(io.timer(self.cfg.ack_timeout, resend_timer(&dk)));
            }
        }
        self.forwards.put_back(dk, st);
    }

    fn on_publish_resend(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, event: EventId, attr: String) {
        let key = (event, attr.clone());
        let Some(p) = self.publications.get_mut(&key) else {
            return;
        };
        if p.attempts >= self.cfg.publish_attempts {
            self.publications.remove(&key);
            io.note(Note::PublishFailed { event, attr });
            return;
        }
        p.attempts += 1;
        p.timer = io.timer(
            self.cfg.ack_timeout,
            Timer::Scout(ScoutTimer::PublishResend {
                event,
                attr: attr.clone(),
            }),
        );
        let record = p.record.clone();
        self.route_up(ov, io, up_copy(record, attr));
    }

    fn on_track_replicate(
        &mut self,
        io: &mut Io<'_, '_, S>,
        from: PeerInfo,
        record: Arc<EventRecord<S>>,
        attr: String,
        complete: bool,
    ) {
        let key = (record.id, attr.clone());
        if let Some(mut r) = self.replicas.take(&key) {
            if complete && !r.complete {
                r.complete = true;
                if let Some(t) = r.timer.take() {
                    io.cancel(t);
                }
            }
            self.replicas.put_back(key, r);
            return;
        }
        let timer = (!complete).then(|| {
            io.timer(
                self.cfg.ack_timeout * self.cfg.takeover_after as u64,
                Timer::Scout(ScoutTimer::Takeover {
                    event: record.id,
                    attr: attr.clone(),
                }),
            )
        });
        self.replicas.insert_new(
            key,
            Replica {
                record,
                owner: from,
                complete,
                timer,
            },
        );
    }

    /// The rendezvous went quiet before finishing: redo its fan-out from the
    /// backup copy of its table.
    fn on_takeover(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, event: EventId, attr: String) {
        let key = (event, attr.clone());
        let Some(mut r) = self.replicas.take(&key) else {
            return;
        };
        r.timer = None;
        let pending = !r.complete;
        r.complete = true;
        let owner = r.owner;
        let record = r.record.clone();
        self.replicas.put_back(key, r);
        if !pending {
            return;
        }
        io.note(Note::TrackerTakeover {
            event,
            attr: attr.clone(),
            owner: owner.id,
        });
        let dk: DownKey = (event, attr, Some(owner.id));
        if self.forwards.contains(&dk) {
            return;
        }
        let mut st = Forward::new(record, 0, true);
        self.fan_out(ov, io, &dk, &mut st);
        if st.pending.is_empty() {
            st.complete = true;
        } else {
            st.timer = Some(io.timer(self.cfg.ack_timeout, resend_timer(&dk)));
        }
        self.forwards.insert_new(dk, st);
    }

    /// A down copy could not reach its candidate: move to the next one.
    fn advance_plan(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, to: Address, msg: EventMsg<S>) {
        let Some(entry) = msg.ack_as else {
            return;
        };
        let dk: DownKey = (msg.record.id, msg.attr.clone(), msg.sender_acting);
        let Some(mut st) = self.forwards.take(&dk) else {
            return;
        };
        let mut gap = false;
        if let Some(plan) = st.pending.get_mut(&entry) {
            if let Some(cur) = plan.current().filter(|c| c.peer.endpoint == to) {
                if cur.acting.is_none() && cur.peer.id != entry {
                    self.main.drop_shortcuts_to(&cur.peer.id);
                    self.secondary.drop_shortcuts_to(&cur.peer.id);
                }
                plan.idx += 1;
                match plan.current() {
                    Some(next) => send_down(io, &dk, entry, next, &st.record, st.hops),
                    None => gap = true,
                }
            }
        }
        if gap {
            st.pending.remove(&entry);
            io.note(Note::DeliveryGap {
                event: dk.0,
                attr: dk.1.clone(),
                peer: entry,
            });
            if st.pending.is_empty() && !st.complete {
                self.complete(ov, io, &dk, &mut st);
            }
        }
        self.forwards.put_back(dk, st);
    }

    // ---- dispatch ----

    pub(crate) fn on_message(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, from: PeerInfo, msg: ScoutMsg<S>) {
        match msg {
            ScoutMsg::Subscribe(m) => self.on_subscribe(ov, io, from, m),
            ScoutMsg::SubscribeAck { sub } => self.on_subscribe_ack(io, sub),
            ScoutMsg::Event(mut m) => {
                if from.id != ov.me().id {
                    m.hops += 1;
                }
                match m.phase {
                    Phase::Up => self.route_up(ov, io, m),
                    Phase::Down => self.on_down(ov, io, from, m),
                }
            }
            ScoutMsg::EventAck(a) => self.on_event_ack(ov, io, a),
            ScoutMsg::BackupStore { token, snapshot } => {
                if snapshot.is_empty() {
                    self.copies.remove(&from.id);
                } else {
                    self.copies.insert(
                        from.id,
                        BackupCopy {
                            owner: from,
                            table: snapshot,
                            stored_at: io.now(),
                        },
                    );
                }
                if let Some(token) = token {
                    io.send(from.endpoint, Wire::Scout(ScoutMsg::BackupAck { token }));
                }
            }
            ScoutMsg::BackupAck { token } => self.backup_confirmed(ov, io, token, from.endpoint),
            ScoutMsg::ShortcutOffer { attr, target } => self.on_shortcut(ov, io, from, attr, Some(target)),
            ScoutMsg::ShortcutRevoke { attr } => self.on_shortcut(ov, io, from, attr, None),
            ScoutMsg::TrackReplicate { record, attr, complete } => {
                self.on_track_replicate(io, from, record, attr, complete)
            }
            // The old rendezvous needs no state for this: it processes the
            // forwarded copies like any other down copy.
            ScoutMsg::Handover { .. } => {}
        }
    }

    pub(crate) fn on_timer(&mut self, ov: &mut Overlay, io: &mut Io<'_, '_, S>, t: ScoutTimer) {
        match t {
            ScoutTimer::Refresh { id } => {
                if self.interests.contains_key(&id) {
                    self.send_subscription(ov, io, id, true);
                    io.timer(self.cfg.t, Timer::Scout(ScoutTimer::Refresh { id }));
                }
            }
            ScoutTimer::Swap => self.on_swap(ov, io),
            ScoutTimer::RvResend { event, attr, acting } => self.on_rv_resend(io, (event, attr, acting)),
            ScoutTimer::PublishResend { event, attr } => self.on_publish_resend(ov, io, event, attr),
            ScoutTimer::Takeover { event, attr } => self.on_takeover(ov, io, event, attr),
        }
    }

    pub(crate) fn on_failure(
        &mut self,
        ov: &mut Overlay,
        io: &mut Io<'_, '_, S>,
        to: Address,
        msg: ScoutMsg<S>,
        reason: FailureReason,
    ) {
        let dead = reason != FailureReason::Dropped;
        match msg {
            ScoutMsg::Subscribe(m) if dead => self.proceed(ov, io, m),
            ScoutMsg::Event(m) if dead => match m.phase {
                Phase::Up => self.route_up(ov, io, m),
                Phase::Down => self.advance_plan(ov, io, to, m),
            },
            ScoutMsg::BackupStore { token: Some(token), .. } => self.backup_confirmed(ov, io, token, to),
            // Lost event copies and acks are recovered by the resend timers;
            // everything else is best effort.
            _ => {}
        }
    }
}

fn up_copy<S>(record: Arc<EventRecord<S>>, attr: String) -> EventMsg<S> {
    EventMsg {
        record,
        attr,
        phase: Phase::Up,
        acting_for: None,
        sender_acting: None,
        ack_as: None,
        hops: 0,
    }
}

fn resend_timer(dk: &DownKey) -> Timer {
    Timer::Scout(ScoutTimer::RvResend {
        event: dk.0,
        attr: dk.1.clone(),
        acting: dk.2,
    })
}

fn plan_for<S: Scalar>(e: &FilterEntry<S>, attr: &str, redirect: bool) -> Plan {
    let mut candidates = Vec::with_capacity(2 + e.backups.len());
    if redirect {
        if let Some(s) = e.shortcuts.get(attr) {
            candidates.push(Candidate { peer: *s, acting: None });
        }
    }
    candidates.push(Candidate { peer: e.peer, acting: None });
    for b in &e.backups {
        if b.id != e.peer.id {
            candidates.push(Candidate {
                peer: *b,
                acting: Some(e.peer.id),
            });
        }
    }
    Plan { candidates, idx: 0 }
}

fn send_down<S: Scalar>(
    io: &mut Io<'_, '_, S>,
    dk: &DownKey,
    entry: NodeId,
    to: Candidate,
    record: &Arc<EventRecord<S>>,
    hops: u32,
) {
    io.send(
        to.peer.endpoint,
        Wire::Scout(ScoutMsg::Event(EventMsg {
            record: record.clone(),
            attr: dk.1.clone(),
            phase: Phase::Down,
            acting_for: to.acting,
            sender_acting: dk.2,
            ack_as: Some(entry),
            hops,
        })),
    );
}

fn refire<S: Scalar>(io: &mut Io<'_, '_, S>, dk: &DownKey, st: &Forward<S>) {
    for (entry, plan) in &st.pending {
        if let Some(c) = plan.current() {
            send_down(io, dk, *entry, c, &st.record, st.hops);
        }
    }
}

fn send_ack<S: Scalar>(io: &mut Io<'_, '_, S>, dk: &DownKey, up: &Upstream) {
    io.send(
        up.addr,
        Wire::Scout(ScoutMsg::EventAck(EventAck {
            event: dk.0,
            attr: dk.1.clone(),
            acting: up.acting,
            ack_as: up.ack_as,
        })),
    );
}
