//! A simulated peer running both protocols over one overlay.

use std::collections::{BTreeMap, VecDeque};

use crate::fastdelivery::{FastDelivery, FdConfig, FdTimer};
use crate::overlay::{
    xor_distance, Address, IdSpace, Key, NodeId, OverlayError, PeerInfo, Region, RoutingTable,
    DEFAULT_BUCKET_SIZE,
};
use crate::predicate::{EventPredicate, Predicate};
use crate::scalar::Scalar;
use crate::scoutsubs::{Scout, ScoutConfig, ScoutTimer};
use crate::simnet::{Context, FailureReason, Process, SimTime, TimerId};
use crate::wire::{EventId, Packet, Wire};

/// Transmissions of a control message lost in transit before giving up.
const MAX_DROP_RETRIES: u8 = 12;

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub space: IdSpace,
    pub bucket_size: usize,
    pub scout: ScoutConfig,
    pub fd: FdConfig,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            space: IdSpace::default(),
            bucket_size: DEFAULT_BUCKET_SIZE,
            scout: ScoutConfig::default(),
            fd: FdConfig::default(),
        }
    }
}

/// Instructions a scenario gives to a node.
#[derive(Clone, Debug)]
pub enum Command<S> {
    /// ScoutSubs subscription; `id` names it for later `Unsubscribe`.
    Subscribe { id: u64, predicate: Predicate<S> },
    /// Stops renewing the subscription; it ages out of the network.
    Unsubscribe { id: u64 },
    Publish { seq: u64, predicate: EventPredicate<S>, payload: Vec<u8> },
    /// FastDelivery: open a multicast group and advertise it.
    CreateGroup { predicate: Predicate<S>, private: bool },
    /// FastDelivery: look the predicate's groups up on a board and join
    /// every group whose attributes include the predicate's.
    JoinGroups { id: u64, predicate: Predicate<S>, capacity: u32 },
    FdPublish { seq: u64, predicate: EventPredicate<S>, payload: Vec<u8> },
    /// FastDelivery: query the board of one attribute.
    DiscoverGroups { attr: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    Scout(ScoutTimer),
    Fd(FdTimer),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Protocol {
    ScoutSubs,
    FastDelivery,
}

/// A board entry as reported to the application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupListing {
    pub publisher: NodeId,
    pub predicate: String,
    pub endpoint: Option<Address>,
}

/// Observations a node reports to the harness.
#[derive(Clone, Debug, PartialEq)]
pub enum Note {
    Published { event: EventId, copies: usize },
    Delivered { event: EventId, protocol: Protocol, attr: Option<String>, latency: SimTime, hops: u32 },
    SubscriptionSettled { id: u64, latency: SimTime },
    TrackerStarted { event: EventId, attr: String, interested: usize },
    TrackerComplete { event: EventId, attr: String, rounds: u32 },
    TrackerAbandoned { event: EventId, attr: String, pending: usize },
    TrackerTakeover { event: EventId, attr: String, owner: NodeId },
    PublishAcked { event: EventId, attr: String, attempts: u32 },
    PublishFailed { event: EventId, attr: String },
    /// The entry's peer, shortcut and every backup were unreachable.
    DeliveryGap { event: EventId, attr: String, peer: NodeId },
    HandoverForward { attr: String, old: NodeId },
    MalformedDropped,
    UnknownAck,
    GroupsDiscovered { attr: String, groups: Vec<GroupListing> },
    GroupJoined { id: u64, publisher: NodeId },
    FdRejected { publisher: NodeId },
    HelperRecruited { helper: NodeId, delegated: usize },
    HelperLost { helper: NodeId, reabsorbed: usize },
    SubscriberLost { peer: NodeId },
}

/// Overlay state shared by both protocols.
#[derive(Clone, Debug)]
pub struct Overlay {
    space: IdSpace,
    table: RoutingTable,
    me: PeerInfo,
    keys: BTreeMap<String, Key>,
}

impl Overlay {
    fn new(id: NodeId, region: Region, space: IdSpace, k: usize) -> Self {
        Overlay {
            space,
            table: RoutingTable::new(id, space, k),
            me: PeerInfo::new(id, Address(u32::MAX), region),
            keys: BTreeMap::new(),
        }
    }

    pub fn me(&self) -> PeerInfo {
        self.me
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    /// Key of an attribute name, cached.
    pub fn key(&mut self, attr: &str) -> Result<Key, OverlayError> {
        if let Some(k) = self.keys.get(attr) {
            return Ok(*k);
        }
        let k = self.space.key_for_attribute(attr)?;
        self.keys.insert(attr.to_string(), k);
        Ok(k)
    }

    pub fn next_hop(&self, key: &Key) -> Option<PeerInfo> {
        self.table.route_next_hop(key)
    }

    pub fn is_rendezvous(&self, key: &Key) -> bool {
        self.next_hop(key).is_none()
    }

    /// The `n` known peers nearest to this node.
    pub fn backups(&self, n: usize) -> Vec<PeerInfo> {
        if n == 0 {
            return Vec::new();
        }
        self.table.closest_peers(&self.me.id, n)
    }

    pub fn closest_to(&self, key: &Key, n: usize) -> Vec<PeerInfo> {
        if n == 0 {
            return Vec::new();
        }
        self.table.closest_peers(key, n)
    }

    pub fn closer_than_me(&self, id: &NodeId, key: &Key) -> bool {
        xor_distance(id, key) < xor_distance(&self.me.id, key)
    }

    pub fn learn(&mut self, peer: PeerInfo) {
        if peer.id != self.me.id {
            self.table.insert(peer);
        }
    }

    pub fn knows(&self, id: &NodeId) -> bool {
        self.table.contains(id)
    }

    pub fn forget_endpoint(&mut self, addr: Address) -> Option<PeerInfo> {
        let id = self.table.peers().find(|p| p.endpoint == addr)?.id;
        self.table.remove(&id)
    }
}

/// Effects of one handler: wraps the simulator context and short-circuits
/// messages a node addresses to itself.
pub(crate) struct Io<'x, 'a, S: Scalar> {
    ctx: &'x mut Context<'a, Node<S>>,
    me: PeerInfo,
    local: VecDeque<Wire<S>>,
}

impl<'x, 'a, S: Scalar> Io<'x, 'a, S> {
    pub fn now(&self) -> SimTime {
        self.ctx.now()
    }

    pub fn send(&mut self, to: Address, body: Wire<S>) {
        if to == self.me.endpoint {
            self.local.push_back(body);
        } else {
            self.ctx.send(
                to,
                Packet {
                    from: self.me,
                    body,
                    attempt: 0,
                },
            );
        }
    }

    pub fn timer(&mut self, delay: SimTime, t: Timer) -> TimerId {
        self.ctx.set_timer(delay, t)
    }

    pub fn cancel(&mut self, id: TimerId) {
        self.ctx.cancel_timer(id);
    }

    pub fn note(&mut self, n: Note) {
        self.ctx.note(n);
    }

    pub fn charge(&mut self, ops: usize) {
        self.ctx.charge_matches(ops as u64);
    }
}

pub struct Node<S: Scalar> {
    overlay: Overlay,
    scout: Scout<S>,
    fd: FastDelivery<S>,
    audit: bool,
}

impl<S: Scalar> Node<S> {
    pub fn new(id: NodeId, region: Region, config: &NodeConfig) -> Self {
        Node {
            overlay: Overlay::new(id, region, config.space, config.bucket_size),
            scout: Scout::new(config.scout.clone()),
            fd: FastDelivery::new(config.fd.clone()),
            audit: cfg!(debug_assertions),
        }
    }

    pub fn id(&self) -> NodeId {
        self.overlay.me.id
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn scout(&self) -> &Scout<S> {
        &self.scout
    }

    pub fn fd(&self) -> &FastDelivery<S> {
        &self.fd
    }

    /// Enables or disables the structural audit run after every handler
    /// (on by default in debug builds).
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    fn io<'x, 'a>(&self, ctx: &'x mut Context<'a, Self>) -> Io<'x, 'a, S> {
        Io {
            ctx,
            me: self.overlay.me,
            local: VecDeque::new(),
        }
    }

    fn handle(&mut self, io: &mut Io<'_, '_, S>, from: PeerInfo, body: Wire<S>) {
        self.overlay.learn(from);
        match body {
            Wire::Scout(m) => self.scout.on_message(&mut self.overlay, io, from, m),
            Wire::Fd(m) => self.fd.on_message(&mut self.overlay, io, from, m),
        }
    }

    fn drain(&mut self, io: &mut Io<'_, '_, S>) {
        let me = self.overlay.me;
        let mut steps = 0usize;
        while let Some(body) = io.local.pop_front() {
            steps += 1;
            assert!(steps < 100_000, "node {}: self-addressed messages do not settle", me.id);
            self.handle(io, me, body);
        }
        if self.audit {
            if let Err(e) = self.scout.audit().and_then(|_| self.fd.audit()) {
                panic!("node {}: {e}", me.id);
            }
        }
    }
}

impl<S: Scalar> Process for Node<S> {
    type Msg = Packet<S>;
    type Timer = Timer;
    type Command = Command<S>;
    type Note = Note;

    fn on_join(&mut self, ctx: &mut Context<'_, Self>, members: &[PeerInfo], late: bool) {
        self.overlay.me = ctx.me();
        for m in members {
            self.overlay.learn(*m);
        }
        let mut io = self.io(ctx);
        self.scout.on_join(&mut self.overlay, &mut io, late);
        self.fd.on_join(&mut self.overlay, &mut io);
        self.drain(&mut io);
    }

    fn on_message(&mut self, ctx: &mut Context<'_, Self>, _from: Address, msg: Packet<S>) {
        let mut io = self.io(ctx);
        self.handle(&mut io, msg.from, msg.body);
        self.drain(&mut io);
    }

    fn on_timer(&mut self, ctx: &mut Context<'_, Self>, timer: Timer) {
        let mut io = self.io(ctx);
        match timer {
            Timer::Scout(t) => self.scout.on_timer(&mut self.overlay, &mut io, t),
            Timer::Fd(t) => self.fd.on_timer(&mut self.overlay, &mut io, t),
        }
        self.drain(&mut io);
    }

    fn on_command(&mut self, ctx: &mut Context<'_, Self>, cmd: Command<S>) {
        let mut io = self.io(ctx);
        match cmd {
            Command::Subscribe { id, predicate } => {
                self.scout.subscribe(&mut self.overlay, &mut io, id, predicate)
            }
            Command::Unsubscribe { id } => self.scout.unsubscribe(&mut self.overlay, &mut io, id),
            Command::Publish { seq, predicate, payload } => {
                self.scout.publish(&mut self.overlay, &mut io, seq, predicate, payload)
            }
            Command::CreateGroup { predicate, private } => {
                self.fd.create_group(&mut self.overlay, &mut io, predicate, private)
            }
            Command::JoinGroups { id, predicate, capacity } => {
                self.fd.join_groups(&mut self.overlay, &mut io, id, predicate, capacity)
            }
            Command::FdPublish { seq, predicate, payload } => {
                self.fd.publish(&mut self.overlay, &mut io, seq, predicate, payload)
            }
            Command::DiscoverGroups { attr } => self.fd.discover(&mut self.overlay, &mut io, attr, None),
        }
        self.drain(&mut io);
    }

    fn on_send_failure(&mut self, ctx: &mut Context<'_, Self>, to: Address, msg: Packet<S>, reason: FailureReason) {
        if reason == FailureReason::Dropped && msg.body.retry_on_drop() && msg.attempt < MAX_DROP_RETRIES {
            ctx.send(
                to,
                Packet {
                    attempt: msg.attempt + 1,
                    ..msg
                },
            );
            return;
        }
        let mut io = self.io(ctx);
        if reason != FailureReason::Dropped {
            self.overlay.forget_endpoint(to);
        }
        match msg.body {
            Wire::Scout(m) => self.scout.on_failure(&mut self.overlay, &mut io, to, m, reason),
            Wire::Fd(m) => self.fd.on_failure(&mut self.overlay, &mut io, to, m, reason),
        }
        self.drain(&mut io);
    }

    fn on_peer_joined(&mut self, _ctx: &mut Context<'_, Self>, peer: PeerInfo) {
        self.overlay.learn(peer);
    }
}
