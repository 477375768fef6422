//! Deterministic discrete-event network simulator.
//!
//! Nodes are [`Process`] state machines. The simulator owns a single event
//! queue ordered by `(fire_at, insertion sequence)`, so a run is a pure
//! function of the configuration, the seed and the scheduled script.
//!
//! * messages take a latency sampled uniformly from the region-pair bounds;
//! * a dropped message, or one that reaches a crashed node, turns into a
//!   send-failure callback at the sender after the same delay;
//! * each node serves one event at a time and stays busy for its
//!   [`ServiceModel`] cost, so bursts build queues;
//! * failures are crash-stop and joins bootstrap from the live membership.

mod config;
mod time;
pub mod trace;

pub use config::{ConfigError, LatencyBounds, RegionAssignment, ServiceModel, SimConfig};
pub use time::SimTime;
pub use trace::{TraceMessage, TraceRecord};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::overlay::{Address, NodeId, PeerInfo, Region};

/// Why a message did not reach its destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    /// Lost in transit; the destination may well be alive.
    Dropped,
    /// The destination had crashed when the message arrived.
    DeadTarget,
    /// No node has this address.
    UnknownEndpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TimerId(pub u64);

/// A node state machine driven by the simulator.
pub trait Process: Sized {
    type Msg: Clone + TraceMessage;
    type Timer: Clone + fmt::Debug;
    /// Application-level instructions injected by a scenario script.
    type Command: fmt::Debug;
    /// Observations the node reports to whoever runs the simulation.
    type Note;

    /// Called once when the node comes up. `members` is the live membership
    /// at that instant (excluding the node itself); `late` is false for the
    /// nodes present when the run starts.
    fn on_join(&mut self, ctx: &mut Context<'_, Self>, members: &[PeerInfo], late: bool);

    fn on_message(&mut self, ctx: &mut Context<'_, Self>, from: Address, msg: Self::Msg);

    fn on_timer(&mut self, ctx: &mut Context<'_, Self>, timer: Self::Timer);

    fn on_command(&mut self, ctx: &mut Context<'_, Self>, cmd: Self::Command);

    fn on_send_failure(
        &mut self,
        ctx: &mut Context<'_, Self>,
        to: Address,
        msg: Self::Msg,
        reason: FailureReason,
    );

    /// Another node joined the network after the start.
    fn on_peer_joined(&mut self, _ctx: &mut Context<'_, Self>, _peer: PeerInfo) {}
}

/// Handler-side view of the simulator: the clock, and buffers for the
/// effects a handler produces. Effects are applied after the handler
/// returns, once the node's service time is known.
pub struct Context<'a, P: Process> {
    now: SimTime,
    me: PeerInfo,
    outbox: Vec<(Address, P::Msg)>,
    timers: Vec<(TimerId, SimTime, P::Timer)>,
    cancels: Vec<TimerId>,
    notes: Vec<P::Note>,
    match_ops: u64,
    next_timer: &'a mut u64,
}

impl<'a, P: Process> Context<'a, P> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> PeerInfo {
        self.me
    }

    pub fn send(&mut self, to: Address, msg: P::Msg) {
        self.outbox.push((to, msg));
    }

    /// Fires once after `delay` (clamped to at least one tick).
    pub fn set_timer(&mut self, delay: SimTime, tag: P::Timer) -> TimerId {
        let id = TimerId(*self.next_timer);
        *self.next_timer += 1;
        self.timers.push((id, delay.max(SimTime::from_micros(1)), tag));
        id
    }

    pub fn cancel_timer(&mut self, id: TimerId) {
        self.cancels.push(id);
    }

    pub fn note(&mut self, note: P::Note) {
        self.notes.push(note);
    }

    /// Reports filter comparisons done by this handler; they add to the
    /// node's service time.
    pub fn charge_matches(&mut self, ops: u64) {
        self.match_ops += ops;
    }
}

/// A note together with when and where it was raised.
#[derive(Clone, Debug)]
pub struct NoteRecord<N> {
    pub at: SimTime,
    pub node: Address,
    pub note: N,
}

/// Message accounting. After a run,
/// `sent == delivered + dropped + dead_target + unknown_endpoint + in_flight`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub dead_target: u64,
    pub unknown_endpoint: u64,
    pub in_flight: u64,
    pub sent_by_kind: BTreeMap<&'static str, u64>,
    pub match_ops: u64,
}

impl NetStats {
    pub fn is_conserved(&self) -> bool {
        self.sent
            == self.delivered + self.dropped + self.dead_target + self.unknown_endpoint + self.in_flight
    }
}

enum Pending<P: Process> {
    Deliver {
        msg_id: u64,
        from: Address,
        to: Address,
        msg: P::Msg,
    },
    Failure {
        msg_id: u64,
        sender: Address,
        target: Address,
        msg: P::Msg,
        reason: FailureReason,
    },
    Timer {
        node: Address,
        id: TimerId,
        tag: P::Timer,
    },
    Command {
        node: Address,
        cmd: P::Command,
    },
    Crash {
        node: Address,
    },
    Join {
        node: Address,
    },
}

struct Scheduled<P: Process> {
    at: SimTime,
    seq: u64,
    created: SimTime,
    event: Pending<P>,
}

impl<P: Process> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<P: Process> Eq for Scheduled<P> {}

impl<P: Process> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P: Process> Ord for Scheduled<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Life {
    Pending,
    Alive,
    Crashed,
}

struct Slot<P> {
    info: PeerInfo,
    process: P,
    life: Life,
    busy_until: SimTime,
}

pub struct Simulator<P: Process> {
    config: SimConfig,
    rng: ChaCha8Rng,
    now: SimTime,
    seq: u64,
    next_msg: u64,
    next_timer: u64,
    queue: BinaryHeap<Scheduled<P>>,
    slots: Vec<Slot<P>>,
    cancelled: HashSet<TimerId>,
    started: bool,
    stats: NetStats,
    notes: Vec<NoteRecord<P::Note>>,
    trace: Option<Vec<TraceRecord>>,
}

impl<P: Process> Simulator<P> {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Simulator {
            config,
            rng,
            now: SimTime::ZERO,
            seq: 0,
            next_msg: 0,
            next_timer: 0,
            queue: BinaryHeap::new(),
            slots: Vec::new(),
            cancelled: HashSet::new(),
            started: false,
            stats: NetStats::default(),
            notes: Vec::new(),
            trace: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Records every network and scheduling event from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    /// The simulator's RNG, for scenario set-up that must share its seed.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Adds a node that is up from the start of the run.
    pub fn add_node(&mut self, id: NodeId, region: Region, process: P) -> Address {
        let addr = Address(self.slots.len() as u32);
        self.slots.push(Slot {
            info: PeerInfo::new(id, addr, region),
            process,
            life: if self.started { Life::Pending } else { Life::Alive },
            busy_until: SimTime::ZERO,
        });
        if self.started {
            self.push(self.now, Pending::Join { node: addr });
        }
        addr
    }

    /// Adds a node that comes up at `at`, bootstrapping from the membership
    /// live at that time.
    pub fn join_node(&mut self, id: NodeId, region: Region, process: P, at: SimTime) -> Address {
        let addr = Address(self.slots.len() as u32);
        self.slots.push(Slot {
            info: PeerInfo::new(id, addr, region),
            process,
            life: Life::Pending,
            busy_until: SimTime::ZERO,
        });
        self.push(at.max(self.now), Pending::Join { node: addr });
        addr
    }

    /// Crash-stops the node at `at`; it handles nothing afterwards.
    pub fn fail_node(&mut self, node: Address, at: SimTime) {
        self.push(at.max(self.now), Pending::Crash { node });
    }

    pub fn schedule_command(&mut self, node: Address, at: SimTime, cmd: P::Command) {
        self.push(at.max(self.now), Pending::Command { node, cmd });
    }

    pub fn node(&self, addr: Address) -> &P {
        &self.slots[addr.0 as usize].process
    }

    pub fn node_mut(&mut self, addr: Address) -> &mut P {
        &mut self.slots[addr.0 as usize].process
    }

    pub fn info(&self, addr: Address) -> PeerInfo {
        self.slots[addr.0 as usize].info
    }

    pub fn is_alive(&self, addr: Address) -> bool {
        self.slots
            .get(addr.0 as usize)
            .is_some_and(|s| s.life == Life::Alive)
    }

    pub fn addresses(&self) -> impl Iterator<Item = Address> + '_ {
        (0..self.slots.len()).map(|i| Address(i as u32))
    }

    pub fn live_members(&self) -> Vec<PeerInfo> {
        self.slots
            .iter()
            .filter(|s| s.life == Life::Alive)
            .map(|s| s.info)
            .collect()
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn notes(&self) -> &[NoteRecord<P::Note>] {
        &self.notes
    }

    pub fn take_notes(&mut self) -> Vec<NoteRecord<P::Note>> {
        std::mem::take(&mut self.notes)
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// Writes the trace as JSON lines.
    pub fn write_trace<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.trace.iter().flatten() {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn push(&mut self, at: SimTime, event: Pending<P>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq,
            created: self.now,
            event,
        });
    }

    fn record(&mut self, rec: impl FnOnce() -> TraceRecord) {
        if let Some(t) = self.trace.as_mut() {
            t.push(rec());
        }
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        let members = self.live_members();
        for i in 0..self.slots.len() {
            if self.slots[i].life != Life::Alive {
                continue;
            }
            let me = self.slots[i].info;
            let others: Vec<PeerInfo> = members.iter().copied().filter(|p| p.id != me.id).collect();
            self.dispatch(Address(i as u32), |p, ctx| p.on_join(ctx, &others, false));
        }
    }

    /// Processes events in order until the queue is empty or the next event
    /// lies beyond `t_end`. Messages still queued at that point are counted
    /// as in flight.
    pub fn run_until(&mut self, t_end: SimTime) -> &NetStats {
        self.start();
        while let Some(top) = self.queue.peek() {
            if top.at > t_end {
                break;
            }
            let item = self.queue.pop().expect("peeked");
            debug_assert!(item.at >= item.created, "causality violated");
            debug_assert!(item.at >= self.now, "time went backwards");
            self.now = item.at;
            self.step(item);
        }
        if t_end < SimTime::MAX {
            self.now = self.now.max(t_end);
        }
        self.stats.in_flight = self
            .queue
            .iter()
            .filter(|s| matches!(s.event, Pending::Deliver { .. }))
            .count() as u64;
        &self.stats
    }

    /// Runs until nothing is left to do. Only terminates for processes that
    /// stop re-arming timers.
    pub fn run(&mut self) -> &NetStats {
        self.run_until(SimTime::MAX)
    }

    fn requeue_if_busy(&mut self, node: Address, item: Scheduled<P>) -> Option<Scheduled<P>> {
        let busy = self.slots[node.0 as usize].busy_until;
        if busy > item.at {
            self.push(busy, item.event);
            None
        } else {
            Some(item)
        }
    }

    fn step(&mut self, item: Scheduled<P>) {
        match &item.event {
            Pending::Crash { node } => {
                let node = *node;
                if let Some(slot) = self.slots.get_mut(node.0 as usize) {
                    slot.life = Life::Crashed;
                }
                let now = self.now;
                self.record(|| TraceRecord::lifecycle(now, node, "crash"));
            }
            Pending::Join { node } => {
                let node = *node;
                let i = node.0 as usize;
                if self.slots[i].life != Life::Pending {
                    return;
                }
                let others = self.live_members();
                self.slots[i].life = Life::Alive;
                let joined = self.slots[i].info;
                let now = self.now;
                self.record(|| TraceRecord::lifecycle(now, node, "join"));
                self.dispatch(node, |p, ctx| p.on_join(ctx, &others, true));
                for peer in others {
                    self.dispatch(peer.endpoint, |p, ctx| p.on_peer_joined(ctx, joined));
                }
            }
            Pending::Deliver { to, .. } => {
                let to = *to;
                if !self.is_alive(to) {
                    let Pending::Deliver { msg_id, from, to, msg } = item.event else {
                        unreachable!()
                    };
                    self.stats.dead_target += 1;
                    let now = self.now;
                    let kind = msg.kind();
                    self.record(|| TraceRecord::net(now, "dead-target", from, to, kind, msg_id));
                    if self.is_alive(from) {
                        self.push(
                            now,
                            Pending::Failure {
                                msg_id,
                                sender: from,
                                target: to,
                                msg,
                                reason: FailureReason::DeadTarget,
                            },
                        );
                    }
                    return;
                }
                let Some(item) = self.requeue_if_busy(to, item) else {
                    return;
                };
                let Pending::Deliver { msg_id, from, to, msg } = item.event else {
                    unreachable!()
                };
                self.stats.delivered += 1;
                let now = self.now;
                let kind = msg.kind();
                self.record(|| TraceRecord::net(now, "deliver", to, from, kind, msg_id));
                self.dispatch(to, |p, ctx| p.on_message(ctx, from, msg));
            }
            Pending::Failure { sender, .. } => {
                let sender = *sender;
                if !self.is_alive(sender) {
                    return;
                }
                let Some(item) = self.requeue_if_busy(sender, item) else {
                    return;
                };
                let Pending::Failure {
                    msg_id,
                    sender,
                    target,
                    msg,
                    reason,
                } = item.event
                else {
                    unreachable!()
                };
                let now = self.now;
                let kind = msg.kind();
                self.record(|| TraceRecord::net(now, "send-failure", sender, target, kind, msg_id));
                self.dispatch(sender, |p, ctx| p.on_send_failure(ctx, target, msg, reason));
            }
            Pending::Timer { node, id, .. } => {
                let (node, id) = (*node, *id);
                if self.cancelled.remove(&id) || !self.is_alive(node) {
                    return;
                }
                let Some(item) = self.requeue_if_busy(node, item) else {
                    return;
                };
                let Pending::Timer { node, id, tag } = item.event else {
                    unreachable!()
                };
                let now = self.now;
                self.record(|| TraceRecord::timer(now, node, id.0, format!("{tag:?}")));
                self.dispatch(node, |p, ctx| p.on_timer(ctx, tag));
            }
            Pending::Command { node, .. } => {
                let node = *node;
                if !self.is_alive(node) {
                    return;
                }
                let Some(item) = self.requeue_if_busy(node, item) else {
                    return;
                };
                let Pending::Command { node, cmd } = item.event else {
                    unreachable!()
                };
                let now = self.now;
                self.record(|| TraceRecord::command(now, node, format!("{cmd:?}")));
                self.dispatch(node, |p, ctx| p.on_command(ctx, cmd));
            }
        }
    }

    /// Runs one handler and applies its effects.
    fn dispatch<F>(&mut self, node: Address, f: F)
    where
        F: FnOnce(&mut P, &mut Context<'_, P>),
    {
        let i = node.0 as usize;
        let now = self.now;
        let me = self.slots[i].info;
        let mut ctx = Context {
            now,
            me,
            outbox: Vec::new(),
            timers: Vec::new(),
            cancels: Vec::new(),
            notes: Vec::new(),
            match_ops: 0,
            next_timer: &mut self.next_timer,
        };
        f(&mut self.slots[i].process, &mut ctx);
        let Context {
            outbox,
            timers,
            cancels,
            notes,
            match_ops,
            ..
        } = ctx;

        let service = self.config.service;
        let cost = SimTime::from_micros(service.per_message_us + service.per_match_us * match_ops);
        let done = now + cost;
        self.slots[i].busy_until = done;
        self.stats.match_ops += match_ops;

        for id in cancels {
            self.cancelled.insert(id);
        }
        for (id, delay, tag) in timers {
            self.push(done + delay, Pending::Timer { node, id, tag });
        }
        for note in notes {
            self.notes.push(NoteRecord { at: now, node, note });
        }
        for (to, msg) in outbox {
            self.transmit(node, to, msg, done);
        }
    }

    fn transmit(&mut self, from: Address, to: Address, msg: P::Msg, depart: SimTime) {
        let msg_id = self.next_msg;
        self.next_msg += 1;
        self.stats.sent += 1;
        *self.stats.sent_by_kind.entry(msg.kind()).or_default() += 1;
        let kind = msg.kind();
        self.record(|| TraceRecord::net(depart, "send", from, to, kind, msg_id).with_detail(msg.summary()));

        let Some(target) = self.slots.get(to.0 as usize) else {
            self.stats.unknown_endpoint += 1;
            self.push(
                depart,
                Pending::Failure {
                    msg_id,
                    sender: from,
                    target: to,
                    msg,
                    reason: FailureReason::UnknownEndpoint,
                },
            );
            return;
        };
        let bounds = self.config.bounds(self.slots[from.0 as usize].info.region, target.info.region);
        let latency = bounds.sample(&mut self.rng);
        let p = self.config.drop_probability;
        let dropped = p > 0.0 && self.rng.gen_bool(p);
        if dropped {
            self.stats.dropped += 1;
            self.record(|| TraceRecord::net(depart, "drop", from, to, kind, msg_id));
            self.push(
                depart + latency,
                Pending::Failure {
                    msg_id,
                    sender: from,
                    target: to,
                    msg,
                    reason: FailureReason::Dropped,
                },
            );
        } else {
            self.push(depart + latency, Pending::Deliver { msg_id, from, to, msg });
        }
    }
}
