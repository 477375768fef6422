use std::collections::BTreeMap;

use crate::overlay::{NodeId, PeerInfo};
use crate::predicate::{EventPredicate, FilterSet, Predicate};
use crate::scalar::Scalar;

/// Filters received from one downstream peer.
///
/// Filters are grouped by the rendezvous attribute they were routed under,
/// because an event copy travelling under attribute `a` must only follow
/// filters that were routed toward `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterEntry<S> {
    pub peer: PeerInfo,
    /// The peer's backups as advertised in its latest subscription.
    pub backups: Vec<PeerInfo>,
    pub routes: BTreeMap<String, FilterSet<S>>,
    /// Per route, a node further downstream that events may jump to.
    pub shortcuts: BTreeMap<String, PeerInfo>,
}

impl<S: Scalar> FilterEntry<S> {
    fn new(peer: PeerInfo) -> Self {
        FilterEntry {
            peer,
            backups: Vec::new(),
            routes: BTreeMap::new(),
            shortcuts: BTreeMap::new(),
        }
    }

    pub fn filters(&self, attr: &str) -> &[Predicate<S>] {
        self.routes.get(attr).map_or(&[], |s| s.as_slice())
    }

    /// Matches `ev` against the filters routed under `attr`. Returns the
    /// decision and the number of filters examined.
    pub fn matches(&self, attr: &str, ev: &EventPredicate<S>) -> (bool, usize) {
        self.routes.get(attr).map_or((false, 0), |s| s.first_match(ev))
    }

    pub fn filter_count(&self) -> usize {
        self.routes.values().map(FilterSet::len).sum()
    }
}

/// Per-node filtering state of ScoutSubs.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTable<S> {
    entries: BTreeMap<NodeId, FilterEntry<S>>,
    /// Number of entries holding at least one filter per rendezvous attribute.
    counters: BTreeMap<String, usize>,
}

impl<S> Default for FilterTable<S> {
    fn default() -> Self {
        FilterTable {
            entries: BTreeMap::new(),
            counters: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> FilterTable<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `filter` from `peer`, routed toward `attr`. Returns whether the
    /// entry's filters changed and how many merge comparisons it took.
    pub fn insert(
        &mut self,
        peer: PeerInfo,
        backups: &[PeerInfo],
        attr: &str,
        filter: Predicate<S>,
    ) -> (bool, usize) {
        let entry = self
            .entries
            .entry(peer.id)
            .or_insert_with(|| FilterEntry::new(peer));
        entry.peer = peer;
        entry.backups = backups.to_vec();
        let set = entry.routes.entry(attr.to_string()).or_default();
        let was_empty = set.is_empty();
        let outcome = set.insert(filter);
        if was_empty {
            *self.counters.entry(attr.to_string()).or_default() += 1;
        }
        outcome
    }

    /// Sets or clears the shortcut of `peer`'s entry for `attr`. Returns
    /// whether anything changed.
    pub fn set_shortcut(&mut self, peer: &NodeId, attr: &str, target: Option<PeerInfo>) -> bool {
        let Some(entry) = self.entries.get_mut(peer) else {
            return false;
        };
        match target {
            Some(t) if t.id != *peer => entry.shortcuts.insert(attr.to_string(), t) != Some(t),
            _ => entry.shortcuts.remove(attr).is_some(),
        }
    }

    /// Forgets every shortcut pointing at `target`; returns the affected
    /// attributes.
    pub fn drop_shortcuts_to(&mut self, target: &NodeId) -> Vec<String> {
        let mut attrs = Vec::new();
        for entry in self.entries.values_mut() {
            entry.shortcuts.retain(|attr, t| {
                let keep = t.id != *target;
                if !keep {
                    attrs.push(attr.clone());
                }
                keep
            });
        }
        attrs.sort();
        attrs.dedup();
        attrs
    }

    pub fn entry(&self, peer: &NodeId) -> Option<&FilterEntry<S>> {
        self.entries.get(peer)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FilterEntry<S>> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries holding filters routed toward `attr`.
    pub fn routed(&self, attr: &str) -> impl Iterator<Item = &FilterEntry<S>> + '_ {
        let attr = attr.to_string();
        self.entries
            .values()
            .filter(move |e| e.routes.get(&attr).is_some_and(|s| !s.is_empty()))
    }

    pub fn counter(&self, attr: &str) -> usize {
        self.counters.get(attr).copied().unwrap_or(0)
    }

    pub fn counters(&self) -> &BTreeMap<String, usize> {
        &self.counters
    }

    pub fn filter_count(&self) -> usize {
        self.entries.values().map(FilterEntry::filter_count).sum()
    }

    /// Any stored filter satisfying `pred`.
    pub fn any_filter(&self, mut pred: impl FnMut(&Predicate<S>) -> bool) -> bool {
        self.entries
            .values()
            .flat_map(|e| e.routes.values())
            .flat_map(|s| s.iter())
            .any(|f| pred(f))
    }

    /// Checks the counters against the entries. With `deep`, also checks that
    /// every filter list is merge-canonical.
    pub fn audit(&self, deep: bool) -> Result<(), String> {
        let mut expected: BTreeMap<String, usize> = BTreeMap::new();
        for (id, entry) in &self.entries {
            if entry.peer.id != *id {
                return Err(format!("entry {id} holds peer {}", entry.peer.id));
            }
            if entry.filter_count() == 0 {
                return Err(format!("entry {id} has no filters"));
            }
            for (attr, set) in &entry.routes {
                if !set.is_empty() {
                    *expected.entry(attr.clone()).or_default() += 1;
                }
                if deep && !set.is_canonical() {
                    return Err(format!("entry {id} route {attr} is not canonical"));
                }
            }
        }
        let actual: BTreeMap<String, usize> = self
            .counters
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(a, &c)| (a.clone(), c))
            .collect();
        if actual != expected {
            return Err(format!("counters {actual:?} but entries give {expected:?}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Address, Region};
    use crate::Rational;

    fn peer(v: u64) -> PeerInfo {
        PeerInfo::new(NodeId::from_u64(v), Address(v as u32), Region(0))
    }

    fn p(s: &str) -> Predicate<Rational> {
        Predicate::parse(s).unwrap()
    }

    #[test]
    fn new_peer_new_filter_creates_entry_and_counter() {
        let mut t = FilterTable::new();
        assert_eq!(t.counter("football"), 0);
        let (changed, _) = t.insert(peer(1), &[peer(9)], "football", p("football"));
        assert!(changed);
        assert_eq!(t.counter("football"), 1);
        assert_eq!(t.entry(&peer(1).id).unwrap().backups, vec![peer(9)]);
        t.audit(true).unwrap();
    }

    #[test]
    fn counter_counts_distinct_peers() {
        let mut t = FilterTable::new();
        t.insert(peer(1), &[], "football", p("football"));
        t.insert(peer(1), &[], "football", p("football/tom-brady"));
        assert_eq!(t.counter("football"), 1);
        t.insert(peer(2), &[], "football", p("football/tom-brady"));
        assert_eq!(t.counter("football"), 2);
        t.insert(peer(2), &[], "apple", p("apple"));
        assert_eq!(t.counter("apple"), 1);
        assert_eq!(t.routed("football").count(), 2);
        t.audit(true).unwrap();
    }

    #[test]
    fn covered_filter_leaves_table_unchanged() {
        let mut t = FilterTable::new();
        t.insert(peer(1), &[], "football", p("football"));
        let before = t.clone();
        let (changed, _) = t.insert(peer(1), &[], "football", p("football/tom-brady"));
        assert!(!changed);
        assert_eq!(t, before);
        // Identical resubscription is also a no-op.
        let (changed, _) = t.insert(peer(1), &[], "football", p("football"));
        assert!(!changed);
        assert_eq!(t, before);
    }

    #[test]
    fn shortcuts() {
        let mut t = FilterTable::new();
        t.insert(peer(1), &[], "a", p("a"));
        assert!(t.set_shortcut(&peer(1).id, "a", Some(peer(5))));
        assert!(!t.set_shortcut(&peer(1).id, "a", Some(peer(5))));
        assert_eq!(t.entry(&peer(1).id).unwrap().shortcuts["a"], peer(5));
        assert_eq!(t.drop_shortcuts_to(&peer(5).id), vec!["a".to_string()]);
        assert!(t.entry(&peer(1).id).unwrap().shortcuts.is_empty());
        assert!(!t.set_shortcut(&peer(7).id, "a", Some(peer(5))), "no entry");
    }
}
