//! Scenario configuration and the deterministic script derived from it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smartpubsub_core::overlay::{IdSpace, NodeId, Region};
use smartpubsub_core::simnet::{SimConfig, SimTime};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Normal,
    SubBurst,
    EventBurst,
    Fault,
    ReplicationSweep,
    FastdeliveryCompare,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Normal,
        ScenarioKind::SubBurst,
        ScenarioKind::EventBurst,
        ScenarioKind::Fault,
        ScenarioKind::ReplicationSweep,
        ScenarioKind::FastdeliveryCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Normal => "normal",
            ScenarioKind::SubBurst => "sub-burst",
            ScenarioKind::EventBurst => "event-burst",
            ScenarioKind::Fault => "fault",
            ScenarioKind::ReplicationSweep => "replication-sweep",
            ScenarioKind::FastdeliveryCompare => "fastdelivery-compare",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ScenarioError::UnknownScenario(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    BaseUnreliable,
    BaseReliable,
    RedirectUnreliable,
    RedirectReliable,
    Fastdelivery,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BaseUnreliable,
        Variant::BaseReliable,
        Variant::RedirectUnreliable,
        Variant::RedirectReliable,
        Variant::Fastdelivery,
    ];

    pub const SCOUT: [Variant; 4] = [
        Variant::BaseUnreliable,
        Variant::BaseReliable,
        Variant::RedirectUnreliable,
        Variant::RedirectReliable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaseUnreliable => "base-unreliable",
            Variant::BaseReliable => "base-reliable",
            Variant::RedirectUnreliable => "redirect-unreliable",
            Variant::RedirectReliable => "redirect-reliable",
            Variant::Fastdelivery => "fastdelivery",
        }
    }

    pub fn redirect(self) -> bool {
        matches!(self, Variant::RedirectUnreliable | Variant::RedirectReliable)
    }

    pub fn reliable(self) -> bool {
        matches!(self, Variant::BaseReliable | Variant::RedirectReliable)
    }

    pub fn is_fastdelivery(self) -> bool {
        self == Variant::Fastdelivery
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ScenarioError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("{0} must be at least {1}")]
    TooSmall(&'static str, usize),
    #[error("{publishers} publishers and {subscribers} subscribers do not fit in {nodes} nodes")]
    Crowded {
        nodes: usize,
        publishers: usize,
        subscribers: usize,
    },
    #[error("alphabet needs at least 2 topics and 1 range attribute")]
    Alphabet,
    #[error("failure targets node {0}, which does not exist")]
    NoSuchNode(usize),
    #[error("drop probability {0} outside [0, 1)")]
    DropProbability(f64),
    #[error("cannot pick {0} non-adjacent failure targets")]
    NoFailureTargets(usize),
}

/// Everything that shapes a run apart from the variant and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub nodes: usize,
    pub publishers: usize,
    pub subscribers: usize,
    pub subs_per_subscriber: usize,
    pub events_per_publisher: usize,
    /// Events per publisher are multiplied by this, inside the same window.
    pub event_rate_multiplier: usize,
    pub f: usize,
    /// Nodes failed when publishing starts. Chosen so that no two are
    /// adjacent in identifier order.
    pub failures: usize,
    /// Explicit failure targets (node indices), added to `failures`.
    pub fail_nodes: Vec<usize>,
    pub topics: Vec<String>,
    pub ranges: Vec<String>,
    /// Range attributes take integer values in `[0, range_max]`.
    pub range_max: i64,
    pub drop_probability: f64,
    /// Refresh period `t`.
    pub t_ms: u64,
    pub subscribe_window_ms: u64,
    pub publish_window_ms: u64,
    /// FastDelivery per-region threshold.
    pub fd_threshold: usize,
    /// FastDelivery subscriber capacities are drawn from `0..=capacity_max`.
    pub capacity_max: u32,
    /// Audit protocol state after every handler.
    pub audit: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::preset(ScenarioKind::Normal)
    }
}

impl Scenario {
    pub fn preset(kind: ScenarioKind) -> Self {
        let mut s = Scenario {
            kind,
            nodes: 60,
            publishers: 6,
            subscribers: 30,
            subs_per_subscriber: 1,
            events_per_publisher: 10,
            event_rate_multiplier: 1,
            f: 2,
            failures: 0,
            fail_nodes: Vec::new(),
            topics: ["sport", "music", "news", "tech", "food", "travel"]
                .map(String::from)
                .to_vec(),
            ranges: ["price", "score", "temp"].map(String::from).to_vec(),
            range_max: 10,
            drop_probability: 0.0,
            t_ms: 30_000,
            subscribe_window_ms: 2_000,
            publish_window_ms: 5_000,
            fd_threshold: 10,
            capacity_max: 5,
            audit: false,
        };
        match kind {
            ScenarioKind::EventBurst => s.event_rate_multiplier = 10,
            ScenarioKind::Fault => s.failures = 2,
            ScenarioKind::ReplicationSweep => {
                s.nodes = 75;
                s.subscribers = 40;
            }
            ScenarioKind::FastdeliveryCompare => {
                s.publishers = 3;
                s.subscribers = 45;
            }
            ScenarioKind::Normal | ScenarioKind::SubBurst => {}
        }
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes < 2 {
            return Err(ScenarioError::TooSmall("nodes", 2));
        }
        if self.publishers < 1 {
            return Err(ScenarioError::TooSmall("publishers", 1));
        }
        if self.publishers + self.subscribers > self.nodes {
            return Err(ScenarioError::Crowded {
                nodes: self.nodes,
                publishers: self.publishers,
                subscribers: self.subscribers,
            });
        }
        if self.topics.len() < 2 || self.ranges.is_empty() {
            return Err(ScenarioError::Alphabet);
        }
        if self.range_max < 0 {
            return Err(ScenarioError::TooSmall("range_max", 0));
        }
        if self.t_ms == 0 {
            return Err(ScenarioError::TooSmall("t_ms", 1));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(ScenarioError::DropProbability(self.drop_probability));
        }
        if let Some(&n) = self.fail_nodes.iter().find(|&&n| n >= self.nodes) {
            return Err(ScenarioError::NoSuchNode(n));
        }
        Ok(())
    }

    /// Network model: the default four-region latency matrix.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            seed,
            node_count: self.nodes,
            drop_probability: self.drop_probability,
            ..SimConfig::default()
        }
    }

    /// Greedy XOR routing needs about log2(n) hops.
    pub fn diameter_estimate(&self) -> u64 {
        (usize::BITS - self.nodes.max(2).saturating_sub(1).leading_zeros()) as u64
    }

    /// Time allowed between a subscription and the first publish it must see:
    /// three maximal one-way delays per hop of the diameter estimate.
    pub fn settle(&self) -> SimTime {
        self.sim_config(0).max_latency() * (3 * self.diameter_estimate())
    }

    pub fn script(&self, seed: u64) -> Result<Script, ScenarioError> {
        self.validate()?;
        Script::generate(self, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub region: Region,
}

/// Publisher `publisher` publishes events carrying exactly these attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec {
    pub publisher: usize,
    pub topics: Vec<String>,
    pub range: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubSpec {
    pub node: usize,
    pub id: u64,
    pub topics: Vec<String>,
    pub ranges: Vec<(String, i64, i64)>,
    pub capacity: u32,
    pub at: SimTime,
}

impl SubSpec {
    pub fn text(&self) -> String {
        let mut parts: Vec<String> = self.topics.clone();
        parts.extend(self.ranges.iter().map(|(n, lo, hi)| format!("{n}[{lo},{hi}]")));
        parts.join("/")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSpec {
    pub publisher: usize,
    pub seq: u64,
    pub topics: Vec<String>,
    pub values: Vec<(String, i64)>,
    pub at: SimTime,
}

impl EventSpec {
    pub fn text(&self) -> String {
        let mut parts: Vec<String> = self.topics.clone();
        parts.extend(self.values.iter().map(|(n, v)| format!("{n}[{v},{v}]")));
        parts.join("/")
    }
}

/// The concrete timeline of one run. Independent of the protocol code.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub nodes: Vec<NodeSpec>,
    pub groups: Vec<GroupSpec>,
    pub subscriptions: Vec<SubSpec>,
    pub events: Vec<EventSpec>,
    pub failures: Vec<(usize, SimTime)>,
    /// FastDelivery groups are created at time zero and advertised by this
    /// time.
    pub setup_end: SimTime,
    pub publish_start: SimTime,
    pub publish_end: SimTime,
    pub end: SimTime,
    pub settle: SimTime,
}

impl Script {
    fn generate(sc: &Scenario, seed: u64) -> Result<Script, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5c7e_d001);
        let sim = sc.sim_config(seed);
        let space = IdSpace::default();
        let mut used = BTreeSet::new();
        let nodes: Vec<NodeSpec> = (0..sc.nodes)
            .map(|i| {
                let id = loop {
                    let id = space.random_id(&mut rng);
                    if used.insert(id) {
                        break id;
                    }
                };
                NodeSpec {
                    id,
                    region: sim.region_of(i, &mut rng),
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..sc.nodes).collect();
        order.shuffle(&mut rng);
        let publishers: Vec<usize> = order[..sc.publishers].to_vec();
        let subscribers: Vec<usize> = order[sc.publishers..sc.publishers + sc.subscribers].to_vec();

        let groups: Vec<GroupSpec> = publishers
            .iter()
            .map(|&p| {
                let mut topics: Vec<String> = sc.topics.choose_multiple(&mut rng, 2).cloned().collect();
                topics.sort();
                GroupSpec {
                    publisher: p,
                    topics,
                    range: sc.ranges.choose(&mut rng).cloned().expect("validated"),
                }
            })
            .collect();

        let settle = sc.settle();
        let setup_end = settle;
        let burst = sc.kind == ScenarioKind::SubBurst;
        let (sub_start, sub_window, publish_start) = if burst {
            (setup_end, sc.publish_window_ms, setup_end)
        } else {
            let sub_end = setup_end + SimTime::from_millis(sc.subscribe_window_ms);
            (setup_end, sc.subscribe_window_ms, sub_end + settle)
        };
        let publish_end = publish_start + SimTime::from_millis(sc.publish_window_ms);
        let at_in = |rng: &mut ChaCha8Rng, start: SimTime, window_ms: u64| {
            start + SimTime::from_micros(rng.gen_range(0..window_ms.max(1) * 1000))
        };

        // Each subscriber follows one publisher and one subset of its
        // attributes; its subscriptions differ only in their ranges.
        let mut subscriptions = Vec::new();
        let mut next_id = 0;
        for &node in &subscribers {
            let g = groups.choose(&mut rng).expect("publishers >= 1");
            let names = g.topics.len() + 1;
            let mask = rng.gen_range(1..(1u32 << names));
            let topics: Vec<String> = g
                .topics
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, t)| t.clone())
                .collect();
            let with_range = mask & (1 << (names - 1)) != 0;
            let capacity = rng.gen_range(0..=sc.capacity_max);
            for _ in 0..sc.subs_per_subscriber {
                let ranges = if with_range {
                    let lo = rng.gen_range(0..=sc.range_max);
                    let hi = rng.gen_range(lo..=sc.range_max);
                    vec![(g.range.clone(), lo, hi)]
                } else {
                    Vec::new()
                };
                subscriptions.push(SubSpec {
                    node,
                    id: next_id,
                    topics: topics.clone(),
                    ranges,
                    capacity,
                    at: at_in(&mut rng, sub_start, sub_window),
                });
                next_id += 1;
            }
        }
        subscriptions.sort_by_key(|s| (s.at, s.id));

        let mut events = Vec::new();
        let per = sc.events_per_publisher * sc.event_rate_multiplier.max(1);
        for g in &groups {
            for seq in 0..per as u64 {
                events.push(EventSpec {
                    publisher: g.publisher,
                    seq,
                    topics: g.topics.clone(),
                    values: vec![(g.range.clone(), rng.gen_range(0..=sc.range_max))],
                    at: at_in(&mut rng, publish_start, sc.publish_window_ms),
                });
            }
        }
        events.sort_by_key(|e| (e.at, e.publisher, e.seq));

        let mut failures: Vec<(usize, SimTime)> = sc.fail_nodes.iter().map(|&n| (n, publish_start)).collect();
        if sc.failures > 0 {
            let mut by_id: Vec<usize> = (0..sc.nodes).collect();
            by_id.sort_by_key(|&i| nodes[i].id);
            let rank: Vec<usize> = {
                let mut r = vec![0; sc.nodes];
                for (pos, &i) in by_id.iter().enumerate() {
                    r[i] = pos;
                }
                r
            };
            let mut candidates: Vec<usize> = order[sc.publishers..].to_vec();
            candidates.retain(|i| !subscribers.contains(i));
            candidates.shuffle(&mut rng);
            let mut chosen: Vec<usize> = Vec::new();
            for c in candidates {
                let adjacent = chosen.iter().any(|&o| rank[o].abs_diff(rank[c]) <= 1);
                if !adjacent {
                    chosen.push(c);
                }
                if chosen.len() == sc.failures {
                    break;
                }
            }
            if chosen.len() < sc.failures {
                return Err(ScenarioError::NoFailureTargets(sc.failures));
            }
            failures.extend(chosen.into_iter().map(|n| (n, publish_start)));
        }

        // Long enough for every resend round and tracker takeover.
        let drain = (settle * 3).max(SimTime::from_millis(12_000));
        Ok(Script {
            nodes,
            groups,
            subscriptions,
            events,
            failures,
            setup_end,
            publish_start,
            publish_end,
            end: publish_end + drain,
            settle,
        })
    }

    pub fn failed(&self) -> BTreeSet<usize> {
        self.failures.iter().map(|(n, _)| *n).collect()
    }
}
