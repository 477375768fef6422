mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::{build, event, pred};
use smartpubsub_core::fastdelivery::{FdConfig, MulticastGroup, SubscriberRecord};
use smartpubsub_core::node::{Command, NodeConfig, Note, Protocol};
use smartpubsub_core::overlay::{Address, NodeId, PeerInfo, Region};
use smartpubsub_core::predicate::matches;
use smartpubsub_core::simnet::{SimConfig, SimTime};
use smartpubsub_core::{ExactPredicate, Rational};

#[derive(Clone, Debug)]
enum Op {
    Add { peer: u64, region: u16, capacity: u32, lo: i64, width: i64, topic: bool },
    Remove { peer: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u64..24, 0u16..3, 0u32..4, 0i64..16, 0i64..6, any::<bool>()).prop_map(
            |(peer, region, capacity, lo, width, topic)| Op::Add { peer, region, capacity, lo, width, topic }
        ),
        1 => (0u64..24).prop_map(|peer| Op::Remove { peer }),
    ]
}

fn sub_text(lo: i64, width: i64, topic: bool) -> String {
    let range = format!("x[{lo},{}]", lo + width);
    if topic {
        format!("alpha/{range}")
    } else {
        range
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn group_reaches_exactly_the_matching_records(
        ops in prop::collection::vec(op(), 1..60),
        threshold in 1usize..6,
        values in prop::collection::vec((0i64..24, any::<bool>()), 1..12),
    ) {
        let mut group = MulticastGroup::new(pred("alpha/x[0,24]"), threshold);
        // (peer, sub) -> subscription text
        let mut model: BTreeMap<(u64, u64), String> = BTreeMap::new();
        let mut region_of: BTreeMap<u64, u16> = BTreeMap::new();
        for (sub, o) in ops.into_iter().enumerate() {
            match o {
                Op::Add { peer, region, capacity, lo, width, topic } => {
                    // A peer lives in one region for its whole life.
                    let region = *region_of.entry(peer).or_insert(region);
                    let text = sub_text(lo, width, topic);
                    let rec = SubscriberRecord {
                        peer: PeerInfo::new(NodeId::from_u64(peer), Address(peer as u32), Region(region)),
                        sub: sub as u64,
                        capacity,
                        predicate: pred(&text),
                    };
                    prop_assert!(group.add(rec).is_ok());
                    model.insert((peer, sub as u64), text);
                }
                Op::Remove { peer } => {
                    let removed = group.remove_peer(&NodeId::from_u64(peer));
                    let before = model.len();
                    model.retain(|(p, _), _| *p != peer);
                    prop_assert_eq!(removed.removed, before - model.len());
                }
            }
            prop_assert!(group.audit().is_ok(), "{:?}", group.audit());
            prop_assert_eq!(group.len(), model.len());
        }

        for (v, topic) in values {
            let text = if topic { format!("alpha/x[{v},{v}]") } else { format!("x[{v},{v}]") };
            let ev = event(&text);
            let want: BTreeSet<(u64, u64)> = model
                .iter()
                .filter(|(_, s)| matches(&ExactPredicate::parse(s).unwrap(), &ev))
                .map(|(k, _)| *k)
                .collect();
            // One hop for direct records, two for delegated ones.
            let helpers: Vec<(NodeId, Vec<SubscriberRecord<Rational>>)> =
                group.helpers().map(|h| (h.peer.id, h.delegated.clone())).collect();
            let (direct, _) = group.matching(&ev);
            let mut got = BTreeSet::new();
            for r in direct {
                prop_assert!(got.insert((r.peer.id.bits().low_u64(), r.sub)));
            }
            for (_, delegated) in &helpers {
                for r in delegated.iter().filter(|r| matches(&r.predicate, &ev)) {
                    prop_assert!(got.insert((r.peer.id.bits().low_u64(), r.sub)));
                }
            }
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn network_delivers_every_match_within_two_hops() {
    let sim_cfg = SimConfig {
        seed: 11,
        ..SimConfig::default()
    };
    let node_cfg = NodeConfig {
        fd: FdConfig {
            threshold: 2,
            ..FdConfig::default()
        },
        ..NodeConfig::default()
    };
    let mut net = build(40, sim_cfg, &node_cfg);
    for a in net.addrs.clone() {
        net.sim.node_mut(a).set_audit(true);
    }
    let publisher = 0;
    net.sim.schedule_command(
        net.addrs[publisher],
        SimTime::ZERO,
        Command::CreateGroup {
            predicate: pred("alpha/x[0,20]"),
            private: false,
        },
    );
    let mut subs = Vec::new();
    for i in 1..40usize {
        let lo = (i as i64 * 7) % 15;
        let text = sub_text(lo, (i as i64) % 6, i % 3 == 0);
        net.sim.schedule_command(
            net.addrs[i],
            SimTime::from_millis(2_000 + i as u64 * 20),
            Command::JoinGroups {
                id: i as u64,
                predicate: pred(&text),
                capacity: (i % 4) as u32,
            },
        );
        subs.push((i, pred(&text)));
    }
    let mut expected = BTreeSet::new();
    let me = net.sim.info(net.addrs[publisher]).id;
    for seq in 0..40u64 {
        let text = if seq % 2 == 0 {
            format!("alpha/x[{},{}]", seq % 21, seq % 21)
        } else {
            format!("x[{},{}]", seq % 21, seq % 21)
        };
        let ev = event(&text);
        net.sim.schedule_command(
            net.addrs[publisher],
            SimTime::from_millis(8_000 + seq * 50),
            Command::FdPublish {
                seq,
                predicate: ev.clone(),
                payload: vec![],
            },
        );
        for (node, p) in &subs {
            if matches(p, &ev) {
                expected.insert((*node, smartpubsub_core::wire::EventId { publisher: me, seq }));
            }
        }
    }
    net.sim.run_until(SimTime::from_millis(20_000));

    let (got, dups) = net.delivered(Protocol::FastDelivery);
    assert_eq!(got, expected);
    assert_eq!(dups, 0);
    let max_hops = net
        .sim
        .notes()
        .iter()
        .filter_map(|r| match &r.note {
            Note::Delivered {
                protocol: Protocol::FastDelivery,
                hops,
                ..
            } => Some(*hops),
            _ => None,
        })
        .max()
        .unwrap();
    assert!(max_hops <= 2, "max hops {max_hops}");
    assert!(net.count(|n| matches!(n, Note::HelperRecruited { .. })) > 0);
    assert!(net.sim.node(net.addrs[publisher]).fd().audit().is_ok());
}
