//! Expected deliveries, computed by brute force over the script.
//!
//! Deliberately shares nothing with the protocol's predicate code: specs
//! are matched attribute by attribute as plain strings and integers.

use std::collections::BTreeSet;

use crate::scenario::{EventSpec, Script, SubSpec};

/// (subscriber node, publisher node, event sequence number).
pub type Delivery = (usize, usize, u64);

pub fn spec_matches(sub: &SubSpec, ev: &EventSpec) -> bool {
    sub.topics.iter().all(|t| ev.topics.contains(t))
        && sub.ranges.iter().all(|(name, lo, hi)| {
            ev.values
                .iter()
                .any(|(n, v)| n == name && lo <= v && v <= hi)
        })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expectation {
    /// Deliveries the protocol owes.
    pub expected: BTreeSet<Delivery>,
    /// Deliveries that are correct but not owed: the subscription was too
    /// young when the event was published.
    pub excused: BTreeSet<Delivery>,
}

impl Expectation {
    pub fn allowed(&self, d: &Delivery) -> bool {
        self.expected.contains(d) || self.excused.contains(d)
    }
}

/// A subscription is owed an event if it was issued at least `settle`
/// before the publish. Failed nodes are owed nothing and events of failed
/// publishers are dropped from the expectation.
pub fn expectation(script: &Script) -> Expectation {
    let failed = script.failed();
    let mut out = Expectation::default();
    for ev in &script.events {
        if failed.contains(&ev.publisher) {
            continue;
        }
        for sub in &script.subscriptions {
            if failed.contains(&sub.node) || !spec_matches(sub, ev) {
                continue;
            }
            let d = (sub.node, ev.publisher, ev.seq);
            if sub.at + script.settle <= ev.at {
                out.expected.insert(d);
            } else {
                out.excused.insert(d);
            }
        }
    }
    out.excused.retain(|d| !out.expected.contains(d));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use smartpubsub_core::simnet::SimTime;

    fn sub(topics: &[&str], ranges: &[(&str, i64, i64)]) -> SubSpec {
        SubSpec {
            node: 0,
            id: 0,
            topics: topics.iter().map(|s| s.to_string()).collect(),
            ranges: ranges.iter().map(|(n, a, b)| (n.to_string(), *a, *b)).collect(),
            capacity: 0,
            at: SimTime::ZERO,
        }
    }

    fn ev(topics: &[&str], values: &[(&str, i64)]) -> EventSpec {
        EventSpec {
            publisher: 1,
            seq: 0,
            topics: topics.iter().map(|s| s.to_string()).collect(),
            values: values.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            at: SimTime::ZERO,
        }
    }

    #[test]
    fn plain_matching() {
        let e = ev(&["sport", "tech"], &[("price", 4)]);
        assert!(spec_matches(&sub(&["sport"], &[]), &e));
        assert!(spec_matches(&sub(&[], &[("price", 4, 4)]), &e));
        assert!(spec_matches(&sub(&["tech"], &[("price", 0, 10)]), &e));
        assert!(!spec_matches(&sub(&["food"], &[]), &e));
        assert!(!spec_matches(&sub(&["sport"], &[("price", 5, 10)]), &e));
        assert!(!spec_matches(&sub(&[], &[("temp", 0, 10)]), &e));
    }
}
