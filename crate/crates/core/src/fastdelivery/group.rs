use std::collections::{BTreeMap, BTreeSet};

use super::range_tree::IntervalTree;
use super::SubscriberRecord;
use crate::overlay::{Address, NodeId, PeerInfo, Region};
use crate::predicate::{matches, EventPredicate, Predicate};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupError {
    /// The subscription uses attributes outside the group's predicate.
    OutsideGroup,
}

/// Subscribers a helper serves on the publisher's behalf.
#[derive(Clone, Debug)]
pub struct Helper<S> {
    pub peer: PeerInfo,
    pub capacity: u32,
    pub delegated: Vec<SubscriberRecord<S>>,
}

/// New full delegation list for a helper.
#[derive(Clone, Debug)]
pub struct Delegation<S> {
    pub helper: PeerInfo,
    pub records: Vec<SubscriberRecord<S>>,
}

/// What removing a peer did to the group.
#[derive(Clone, Debug)]
pub struct Removal<S> {
    pub removed: usize,
    /// Set when the peer was a helper: the records it served, now direct
    /// again (or re-delegated).
    pub reabsorbed: Option<Vec<SubscriberRecord<S>>>,
    pub delegations: Vec<Delegation<S>>,
}

/// Publisher-side state of one multicast group.
#[derive(Clone, Debug)]
pub struct MulticastGroup<S> {
    predicate: Predicate<S>,
    threshold: usize,
    /// Records the publisher serves itself, per region, sorted by capacity
    /// (descending) then peer.
    direct: BTreeMap<Region, Vec<SubscriberRecord<S>>>,
    helpers: BTreeMap<NodeId, Helper<S>>,
    index: Option<MatchIndex<S>>,
}

fn order<S>(a: &SubscriberRecord<S>, b: &SubscriberRecord<S>) -> std::cmp::Ordering {
    b.capacity
        .cmp(&a.capacity)
        .then(a.peer.id.cmp(&b.peer.id))
        .then(a.sub.cmp(&b.sub))
}

impl<S: Scalar> MulticastGroup<S> {
    pub fn new(predicate: Predicate<S>, threshold: usize) -> Self {
        MulticastGroup {
            predicate,
            threshold,
            direct: BTreeMap::new(),
            helpers: BTreeMap::new(),
            index: None,
        }
    }

    pub fn predicate(&self) -> &Predicate<S> {
        &self.predicate
    }

    pub fn helpers(&self) -> impl Iterator<Item = &Helper<S>> {
        self.helpers.values()
    }

    pub fn is_helper(&self, id: &NodeId) -> bool {
        self.helpers.contains_key(id)
    }

    pub fn direct(&self) -> impl Iterator<Item = &SubscriberRecord<S>> {
        self.direct.values().flatten()
    }

    pub fn direct_in(&self, region: Region) -> &[SubscriberRecord<S>] {
        self.direct.get(&region).map_or(&[], |v| v.as_slice())
    }

    /// Every record, direct or delegated.
    pub fn records(&self) -> impl Iterator<Item = &SubscriberRecord<S>> {
        self.direct().chain(self.helpers.values().flat_map(|h| h.delegated.iter()))
    }

    pub fn len(&self) -> usize {
        self.records().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Peer behind an endpoint, if any record belongs to it.
    pub fn peer_at(&self, addr: Address) -> Option<PeerInfo> {
        self.records().find(|r| r.peer.endpoint == addr).map(|r| r.peer)
    }

    /// Adds or replaces a subscriber record and rebalances its region.
    pub fn add(&mut self, record: SubscriberRecord<S>) -> Result<Vec<Delegation<S>>, GroupError> {
        if !record.predicate.names_within(&self.predicate) {
            return Err(GroupError::OutsideGroup);
        }
        let mut touched = self.drop_record(&record.peer.id, record.sub);
        let region = record.peer.region;
        let peer = record.peer.id;
        let list = self.direct.entry(region).or_default();
        let pos = list.partition_point(|r| order(r, &record).is_lt());
        list.insert(pos, record);
        self.index = None;
        if self.shrink_helper(&peer) {
            touched.insert(peer);
        }
        touched.extend(self.rebalance(region));
        Ok(self.delegations(touched))
    }

    /// A node's relay capacity is the largest any of its records offers.
    /// Records past a lowered capacity go back to the publisher.
    fn shrink_helper(&mut self, peer: &NodeId) -> bool {
        let Some(h) = self.helpers.get(peer) else {
            return false;
        };
        let cap = self
            .direct_in(h.peer.region)
            .iter()
            .filter(|r| r.peer.id == *peer)
            .map(|r| r.capacity)
            .max()
            .unwrap_or(0);
        let h = self.helpers.get_mut(peer).expect("helper present");
        h.capacity = cap;
        if h.delegated.len() <= cap as usize {
            return false;
        }
        let back = h.delegated.split_off(cap as usize);
        for r in back {
            let list = self.direct.entry(r.peer.region).or_default();
            let pos = list.partition_point(|x| order(x, &r).is_lt());
            list.insert(pos, r);
        }
        true
    }

    /// Removes one (peer, sub) record wherever it is; returns helpers whose
    /// lists changed.
    fn drop_record(&mut self, peer: &NodeId, sub: u64) -> BTreeSet<NodeId> {
        let mut touched = BTreeSet::new();
        for list in self.direct.values_mut() {
            list.retain(|r| !(r.peer.id == *peer && r.sub == sub));
        }
        for (id, h) in self.helpers.iter_mut() {
            let before = h.delegated.len();
            h.delegated.retain(|r| !(r.peer.id == *peer && r.sub == sub));
            if h.delegated.len() != before {
                touched.insert(*id);
            }
        }
        touched
    }

    /// Removes every record of `peer`. A helper's delegated records return
    /// to the publisher and the region is rebalanced.
    pub fn remove_peer(&mut self, peer: &NodeId) -> Removal<S> {
        let mut out = Removal {
            removed: 0,
            reabsorbed: None,
            delegations: Vec::new(),
        };
        let mut regions = BTreeSet::new();
        for (region, list) in self.direct.iter_mut() {
            let before = list.len();
            list.retain(|r| r.peer.id != *peer);
            if list.len() != before {
                out.removed += before - list.len();
                regions.insert(*region);
            }
        }
        let mut touched = BTreeSet::new();
        for (id, h) in self.helpers.iter_mut() {
            let before = h.delegated.len();
            h.delegated.retain(|r| r.peer.id != *peer);
            if h.delegated.len() != before {
                out.removed += before - h.delegated.len();
                touched.insert(*id);
            }
        }
        if let Some(h) = self.helpers.remove(peer) {
            touched.remove(peer);
            for r in &h.delegated {
                let list = self.direct.entry(r.peer.region).or_default();
                let pos = list.partition_point(|x| order(x, r).is_lt());
                list.insert(pos, r.clone());
                regions.insert(r.peer.region);
            }
            out.reabsorbed = Some(h.delegated);
        }
        self.index = None;
        for region in regions {
            touched.extend(self.rebalance(region));
        }
        out.delegations = self.delegations(touched);
        out
    }

    fn delegations(&self, touched: BTreeSet<NodeId>) -> Vec<Delegation<S>> {
        touched
            .into_iter()
            .filter_map(|id| self.helpers.get(&id))
            .map(|h| Delegation {
                helper: h.peer,
                records: h.delegated.clone(),
            })
            .collect()
    }

    fn is_delegated(&self, peer: &NodeId) -> bool {
        self.helpers.values().any(|h| h.delegated.iter().any(|r| r.peer.id == *peer))
    }

    fn spare(&self, r: &SubscriberRecord<S>) -> usize {
        match self.helpers.get(&r.peer.id) {
            Some(h) => (h.capacity as usize).saturating_sub(h.delegated.len()),
            None => r.capacity as usize,
        }
    }

    /// Moves records of an over-full region to helpers within the region,
    /// highest capacity first, taking the lowest-capacity records.
    fn rebalance(&mut self, region: Region) -> BTreeSet<NodeId> {
        let mut touched = BTreeSet::new();
        loop {
            let list = self.direct_in(region);
            if list.len() <= self.threshold {
                break;
            }
            let Some(helper) = list.iter().find(|r| self.spare(r) > 0 && !self.is_delegated(&r.peer.id)).cloned() else {
                break;
            };
            let spare = self.spare(&helper);
            self.helpers.entry(helper.peer.id).or_insert_with(|| Helper {
                peer: helper.peer,
                capacity: helper.capacity,
                delegated: Vec::new(),
            });
            let helpers = &self.helpers;
            let list = self.direct.get_mut(&region).expect("region present");
            let excess = list.len() - self.threshold;
            let mut moved = Vec::new();
            let mut i = list.len();
            while i > 0 && moved.len() < spare.min(excess) {
                i -= 1;
                if !helpers.contains_key(&list[i].peer.id) {
                    moved.push(list.remove(i));
                }
            }
            if moved.is_empty() {
                break;
            }
            self.index = None;
            let h = self.helpers.get_mut(&helper.peer.id).expect("helper present");
            h.delegated.extend(moved);
            h.delegated.sort_by(order);
            touched.insert(helper.peer.id);
        }
        touched
    }

    /// Direct records matching `ev`, plus the number of match operations.
    pub fn matching(&mut self, ev: &EventPredicate<S>) -> (Vec<&SubscriberRecord<S>>, usize) {
        if self.index.is_none() {
            let flat: Vec<&SubscriberRecord<S>> = self.direct.values().flatten().collect();
            self.index = Some(MatchIndex::build(&self.predicate, &flat));
        }
        let flat: Vec<&SubscriberRecord<S>> = self.direct.values().flatten().collect();
        let (hits, ops) = self.index.as_ref().expect("index built").query(ev, &flat);
        (hits.into_iter().map(|i| flat[i]).collect(), ops)
    }

    pub fn audit(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (region, list) in &self.direct {
            if list.windows(2).any(|w| order(&w[0], &w[1]).is_gt()) {
                return Err(format!("region {} is not sorted", region.0));
            }
            for r in list {
                if r.peer.region != *region {
                    return Err(format!("{} filed under region {}", r.peer.id, region.0));
                }
                if !seen.insert((r.peer.id, r.sub)) {
                    return Err(format!("duplicate record {}#{}", r.peer.id, r.sub));
                }
            }
        }
        for (id, h) in &self.helpers {
            if !self.direct_in(h.peer.region).iter().any(|r| r.peer.id == *id) {
                return Err(format!("helper {id} is not a direct subscriber"));
            }
            if h.delegated.len() > h.capacity as usize {
                return Err(format!("helper {id} serves {} over capacity {}", h.delegated.len(), h.capacity));
            }
            for r in &h.delegated {
                if r.peer.region != h.peer.region {
                    return Err(format!("helper {id} serves {} across regions", r.peer.id));
                }
                if self.helpers.contains_key(&r.peer.id) {
                    return Err(format!("helper {id} serves helper {}", r.peer.id));
                }
                if !seen.insert((r.peer.id, r.sub)) {
                    return Err(format!("duplicate record {}#{}", r.peer.id, r.sub));
                }
            }
        }
        for r in self.records() {
            if !r.predicate.names_within(&self.predicate) {
                return Err(format!("record {} outside group", r.peer.id));
            }
        }
        Ok(())
    }
}

/// Interval trees over the range attributes of the direct records.
#[derive(Clone, Debug)]
struct MatchIndex<S> {
    trees: BTreeMap<String, IntervalTree<S>>,
    /// Per range attribute, records that do not constrain it.
    wildcard: BTreeMap<String, Vec<usize>>,
    n: usize,
}

impl<S: Scalar> MatchIndex<S> {
    fn build(group: &Predicate<S>, flat: &[&SubscriberRecord<S>]) -> Self {
        let mut trees = BTreeMap::new();
        let mut wildcard = BTreeMap::new();
        for (name, _) in group.ranges() {
            let mut items = Vec::new();
            let mut free = Vec::new();
            for (i, r) in flat.iter().enumerate() {
                match r.predicate.range(name) {
                    Some(iv) => items.push((iv.clone(), i)),
                    None => free.push(i),
                }
            }
            trees.insert(name.to_string(), IntervalTree::build(items));
            wildcard.insert(name.to_string(), free);
        }
        MatchIndex {
            trees,
            wildcard,
            n: flat.len(),
        }
    }

    fn query(&self, ev: &EventPredicate<S>, flat: &[&SubscriberRecord<S>]) -> (Vec<usize>, usize) {
        let mut ops = 0;
        let mut cand: Option<BTreeSet<usize>> = None;
        for (name, tree) in &self.trees {
            let mut set: BTreeSet<usize> = self.wildcard[name].iter().copied().collect();
            if let Some(v) = ev.value(name) {
                let (hits, visited) = tree.stab(v);
                ops += visited;
                set.extend(hits);
            }
            cand = Some(match cand {
                None => set,
                Some(c) => c.intersection(&set).copied().collect(),
            });
        }
        let cand: Vec<usize> = match cand {
            Some(c) => c.into_iter().collect(),
            None => (0..self.n).collect(),
        };
        ops += cand.len();
        let hits = cand
            .into_iter()
            .filter(|&i| matches(&flat[i].predicate, ev))
            .collect();
        (hits, ops)
    }
}
