#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartpubsub_core::node::{Command, Node, NodeConfig, Note, Protocol};
use smartpubsub_core::overlay::{Address, IdSpace};
use smartpubsub_core::simnet::{SimConfig, SimTime, Simulator};
use smartpubsub_core::wire::EventId;
use smartpubsub_core::{ExactEvent, ExactPredicate, Rational};

pub type Sim = Simulator<Node<Rational>>;

pub struct Net {
    pub sim: Sim,
    pub addrs: Vec<Address>,
}

pub fn build(n: usize, sim_cfg: SimConfig, node_cfg: &NodeConfig) -> Net {
    let mut rng = ChaCha8Rng::seed_from_u64(sim_cfg.seed ^ 0x5eed);
    let space = IdSpace::default();
    let regions: Vec<_> = (0..n).map(|i| sim_cfg.region_of(i, &mut rng)).collect();
    let mut sim = Simulator::new(sim_cfg).unwrap();
    let mut addrs = Vec::new();
    let mut used = BTreeSet::new();
    for region in regions {
        let id = loop {
            let id = space.random_id(&mut rng);
            if used.insert(id) {
                break id;
            }
        };
        addrs.push(sim.add_node(id, region, Node::new(id, region, node_cfg)));
    }
    Net { sim, addrs }
}

pub fn pred(s: &str) -> ExactPredicate {
    ExactPredicate::parse(s).unwrap()
}

pub fn event(s: &str) -> ExactEvent {
    ExactEvent::parse(s).unwrap()
}

impl Net {
    pub fn subscribe(&mut self, node: usize, id: u64, p: &str, at_ms: u64) {
        self.sim.schedule_command(
            self.addrs[node],
            SimTime::from_millis(at_ms),
            Command::Subscribe { id, predicate: pred(p) },
        );
    }

    pub fn publish(&mut self, node: usize, seq: u64, e: &str, at_ms: u64) -> EventId {
        self.sim.schedule_command(
            self.addrs[node],
            SimTime::from_millis(at_ms),
            Command::Publish {
                seq,
                predicate: event(e),
                payload: vec![],
            },
        );
        EventId {
            publisher: self.sim.info(self.addrs[node]).id,
            seq,
        }
    }

    pub fn fail(&mut self, node: usize, at_ms: u64) {
        self.sim.fail_node(self.addrs[node], SimTime::from_millis(at_ms));
    }

    /// (node index, event) pairs delivered by `protocol`, and the number of
    /// duplicate deliveries.
    pub fn delivered(&self, protocol: Protocol) -> (BTreeSet<(usize, EventId)>, usize) {
        let mut out = BTreeSet::new();
        let mut dups = 0;
        for r in self.sim.notes() {
            if let Note::Delivered { event, protocol: p, .. } = &r.note {
                if *p == protocol {
                    let idx = self.addrs.iter().position(|a| *a == r.node).unwrap();
                    if !out.insert((idx, *event)) {
                        dups += 1;
                    }
                }
            }
        }
        (out, dups)
    }

    pub fn count(&self, f: impl Fn(&Note) -> bool) -> usize {
        self.sim.notes().iter().filter(|r| f(&r.note)).count()
    }
}
