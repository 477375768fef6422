//! Builds a network from a script, drives it and measures the outcome.

use std::collections::BTreeMap;

use smartpubsub_core::fastdelivery::FdConfig;
use smartpubsub_core::node::{Command, Node, NodeConfig, Note, Protocol};
use smartpubsub_core::overlay::{Address, NodeId};
use smartpubsub_core::scoutsubs::ScoutConfig;
use smartpubsub_core::simnet::{SimTime, Simulator};
use smartpubsub_core::{ExactEvent, ExactPredicate, Rational};

use crate::metrics::{mean, ms, quantile, MetricsReport};
use crate::oracle::{expectation, Delivery};
use crate::scenario::{Scenario, ScenarioError, Script, Variant};

pub type Sim = Simulator<Node<Rational>>;

/// How often the memory proxy is sampled.
const SAMPLE_EVERY: SimTime = SimTime::from_millis(250);

pub struct RunOutput {
    pub report: MetricsReport,
    /// Every delivery with its multiplicity.
    pub deliveries: BTreeMap<Delivery, usize>,
    pub trace: Option<Vec<u8>>,
}

/// A run in progress. Tests can stop it midway, inspect node state and
/// inject failures before finishing.
pub struct Run {
    pub scenario: Scenario,
    pub variant: Variant,
    pub seed: u64,
    pub script: Script,
    pub sim: Sim,
    pub addrs: Vec<Address>,
    by_id: BTreeMap<NodeId, usize>,
    by_addr: BTreeMap<Address, usize>,
    samples: Vec<usize>,
    next_sample: SimTime,
}

fn predicate(text: &str) -> ExactPredicate {
    ExactPredicate::parse(text).expect("script predicates are well formed")
}

impl Run {
    pub fn new(scenario: &Scenario, variant: Variant, seed: u64) -> Result<Run, ScenarioError> {
        let script = scenario.script(seed)?;
        Ok(Run::with_script(scenario, variant, seed, script))
    }

    pub fn with_script(scenario: &Scenario, variant: Variant, seed: u64, script: Script) -> Run {
        let sim_cfg = scenario.sim_config(seed);
        let scout = ScoutConfig {
            f: scenario.f,
            t: SimTime::from_millis(scenario.t_ms),
            ..ScoutConfig::variant(variant.redirect(), variant.reliable())
        }
        .with_ack_timeout_for(&sim_cfg);
        let node_cfg = NodeConfig {
            scout,
            fd: FdConfig {
                threshold: scenario.fd_threshold,
                t: SimTime::from_millis(scenario.t_ms),
                ..FdConfig::default()
            },
            ..NodeConfig::default()
        };
        let mut sim = Simulator::new(sim_cfg).expect("default network model is valid");
        let mut addrs = Vec::with_capacity(script.nodes.len());
        for n in &script.nodes {
            let mut node = Node::new(n.id, n.region, &node_cfg);
            node.set_audit(scenario.audit);
            addrs.push(sim.add_node(n.id, n.region, node));
        }
        let by_id = script.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let by_addr = addrs.iter().enumerate().map(|(i, a)| (*a, i)).collect();

        let fd = variant.is_fastdelivery();
        if fd {
            for g in &script.groups {
                let text = format!("{}/{}[0,{}]", g.topics.join("/"), g.range, scenario.range_max);
                sim.schedule_command(
                    addrs[g.publisher],
                    SimTime::ZERO,
                    Command::CreateGroup {
                        predicate: predicate(&text),
                        private: false,
                    },
                );
            }
        }
        for s in &script.subscriptions {
            let cmd = if fd {
                Command::JoinGroups {
                    id: s.id,
                    predicate: predicate(&s.text()),
                    capacity: s.capacity,
                }
            } else {
                Command::Subscribe {
                    id: s.id,
                    predicate: predicate(&s.text()),
                }
            };
            sim.schedule_command(addrs[s.node], s.at, cmd);
        }
        for e in &script.events {
            let ev = ExactEvent::parse(&e.text()).expect("script events are well formed");
            let payload = e.seq.to_le_bytes().to_vec();
            let cmd = if fd {
                Command::FdPublish {
                    seq: e.seq,
                    predicate: ev,
                    payload,
                }
            } else {
                Command::Publish {
                    seq: e.seq,
                    predicate: ev,
                    payload,
                }
            };
            sim.schedule_command(addrs[e.publisher], e.at, cmd);
        }
        for &(n, at) in &script.failures {
            sim.fail_node(addrs[n], at);
        }
        Run {
            scenario: scenario.clone(),
            variant,
            seed,
            script,
            sim,
            addrs,
            by_id,
            by_addr,
            samples: Vec::new(),
            next_sample: SimTime::ZERO,
        }
    }

    pub fn enable_trace(&mut self) {
        self.sim.enable_trace();
    }

    pub fn node(&self, idx: usize) -> &Node<Rational> {
        self.sim.node(self.addrs[idx])
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Fails `node` at `at`; the oracle stops expecting deliveries to it.
    pub fn fail(&mut self, node: usize, at: SimTime) {
        self.script.failures.push((node, at));
        self.sim.fail_node(self.addrs[node], at);
    }

    fn stored(&self) -> usize {
        let fd = self.variant.is_fastdelivery();
        (0..self.addrs.len())
            .filter(|&i| self.sim.is_alive(self.addrs[i]))
            .map(|i| {
                let n = self.node(i);
                if fd {
                    n.fd().stored_records()
                } else {
                    n.scout().stored_filters()
                }
            })
            .sum()
    }

    pub fn advance_to(&mut self, t: SimTime) {
        while self.next_sample <= t {
            self.sim.run_until(self.next_sample);
            let s = self.stored();
            self.samples.push(s);
            self.next_sample += SAMPLE_EVERY;
        }
        self.sim.run_until(t);
    }

    pub fn finish(mut self) -> RunOutput {
        let end = self.script.end;
        self.advance_to(end);
        let report = self.report();
        let deliveries = self.deliveries();
        let trace = self.sim.trace().is_some().then(|| {
            let mut out = Vec::new();
            self.sim.write_trace(&mut out).expect("writing to memory");
            out
        });
        RunOutput {
            report,
            deliveries,
            trace,
        }
    }

    fn protocol(&self) -> Protocol {
        if self.variant.is_fastdelivery() {
            Protocol::FastDelivery
        } else {
            Protocol::ScoutSubs
        }
    }

    pub fn deliveries(&self) -> BTreeMap<Delivery, usize> {
        let protocol = self.protocol();
        let mut out = BTreeMap::new();
        for r in self.sim.notes() {
            if let Note::Delivered { event, protocol: p, .. } = &r.note {
                if *p != protocol {
                    continue;
                }
                let (Some(&node), Some(&publisher)) = (self.by_addr.get(&r.node), self.by_id.get(&event.publisher)) else {
                    continue;
                };
                *out.entry((node, publisher, event.seq)).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn report(&self) -> MetricsReport {
        let sc = &self.scenario;
        let protocol = self.protocol();
        let exp = expectation(&self.script);
        let deliveries = self.deliveries();

        let mut first_latency: BTreeMap<Delivery, f64> = BTreeMap::new();
        let mut max_hops = 0;
        let mut sub_lat = Vec::new();
        let mut joined: BTreeMap<(usize, u64), SimTime> = BTreeMap::new();
        let (mut started, mut complete, mut abandoned, mut takeovers, mut gaps, mut helpers) = (0, 0, 0, 0, 0, 0);
        for r in self.sim.notes() {
            let node = self.by_addr.get(&r.node).copied();
            match &r.note {
                Note::Delivered {
                    event,
                    protocol: p,
                    latency,
                    hops,
                    ..
                } if *p == protocol => {
                    max_hops = max_hops.max(*hops);
                    if let (Some(n), Some(&publisher)) = (node, self.by_id.get(&event.publisher)) {
                        first_latency
                            .entry((n, publisher, event.seq))
                            .or_insert(latency.as_millis_f64());
                    }
                }
                Note::SubscriptionSettled { latency, .. } => sub_lat.push(latency.as_millis_f64()),
                Note::GroupJoined { id, .. } => {
                    if let Some(n) = node {
                        joined.entry((n, *id)).or_insert(r.at);
                    }
                }
                Note::TrackerStarted { .. } => started += 1,
                Note::TrackerComplete { .. } => complete += 1,
                Note::TrackerAbandoned { .. } => abandoned += 1,
                Note::TrackerTakeover { .. } => takeovers += 1,
                Note::DeliveryGap { .. } => gaps += 1,
                Note::HelperRecruited { .. } => helpers += 1,
                _ => {}
            }
        }
        if self.variant.is_fastdelivery() {
            for s in &self.script.subscriptions {
                if let Some(at) = joined.get(&(s.node, s.id)) {
                    sub_lat.push((*at - s.at).as_millis_f64());
                }
            }
        }

        let missing = exp.expected.iter().filter(|d| !deliveries.contains_key(d)).count();
        let spurious = deliveries.keys().filter(|d| !exp.allowed(d)).count();
        let excused = deliveries.keys().filter(|d| exp.excused.contains(d)).count();
        let duplicates = deliveries.values().map(|c| c - 1).sum();
        let ev_lat: Vec<f64> = first_latency
            .iter()
            .filter(|(d, _)| exp.allowed(d))
            .map(|(_, l)| *l)
            .collect();

        let stats = self.sim.stats();
        let kind = |k: &str| stats.sent_by_kind.get(k).copied().unwrap_or(0);
        MetricsReport {
            scenario: sc.kind.name().to_string(),
            variant: self.variant.name().to_string(),
            seed: self.seed,
            nodes: sc.nodes,
            f: sc.f,
            subs_per_subscriber: sc.subs_per_subscriber,
            failed_nodes: self.script.failed().len(),
            expected: exp.expected.len(),
            delivered: deliveries.len(),
            missing,
            spurious,
            duplicates,
            excused,
            event_latency_mean_ms: ms(mean(&ev_lat)),
            event_latency_p50_ms: ms(quantile(&ev_lat, 0.5)),
            event_latency_p95_ms: ms(quantile(&ev_lat, 0.95)),
            event_latency_max_ms: ms(quantile(&ev_lat, 1.0)),
            sub_latency_mean_ms: ms(mean(&sub_lat)),
            sub_latency_p95_ms: ms(quantile(&sub_lat, 0.95)),
            subs_settled: sub_lat.len(),
            max_hops,
            messages_total: stats.sent,
            msgs_subscribe: kind("Subscribe"),
            msgs_subscribe_ack: kind("SubscribeAck"),
            msgs_event: kind("Event"),
            msgs_event_ack: kind("EventAck"),
            msgs_backup_store: kind("BackupStore"),
            msgs_backup_ack: kind("BackupAck"),
            msgs_shortcut: kind("ShortcutOffer") + kind("ShortcutRevoke"),
            msgs_track_replicate: kind("TrackReplicate"),
            msgs_handover: kind("Handover"),
            msgs_board: kind("Advertise") + kind("BoardQuery") + kind("BoardReply"),
            msgs_fd_subscribe: kind("FdSubscribe"),
            msgs_fd_delegate: kind("FdDelegate"),
            msgs_fd_event: kind("FdEvent"),
            dropped: stats.dropped,
            dead_target: stats.dead_target,
            filters_peak: self.samples.iter().copied().max().unwrap_or(0),
            filters_mean: ms(mean(&self.samples.iter().map(|&s| s as f64).collect::<Vec<_>>())),
            match_ops: stats.match_ops,
            trackers_started: started,
            trackers_complete: complete,
            trackers_abandoned: abandoned,
            takeovers,
            delivery_gaps: gaps,
            helpers_recruited: helpers,
        }
    }
}

pub fn run_scenario(scenario: &Scenario, variant: Variant, seed: u64, trace: bool) -> Result<RunOutput, ScenarioError> {
    let mut run = Run::new(scenario, variant, seed)?;
    if trace {
        run.enable_trace();
    }
    Ok(run.finish())
}
