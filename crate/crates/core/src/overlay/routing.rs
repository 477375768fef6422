use super::{xor_distance, IdSpace, Key, Located, NodeId, PeerInfo};

/// Kademlia's customary bucket capacity.
pub const DEFAULT_BUCKET_SIZE: usize = 20;

/// k-bucket routing table. Bucket `i` holds peers whose XOR distance to the
/// owner has its highest set bit at position `i`.
///
/// There is no eviction: a full bucket ignores newcomers, and dead peers are
/// removed explicitly when a send to them fails.
#[derive(Clone, Debug)]
pub struct RoutingTable {
    owner: NodeId,
    k: usize,
    buckets: Vec<Vec<PeerInfo>>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, space: IdSpace, k: usize) -> Self {
        RoutingTable {
            owner,
            k: k.max(1),
            buckets: vec![Vec::new(); space.width() as usize],
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn bucket_size(&self) -> usize {
        self.k
    }

    fn bucket_index(&self, id: &NodeId) -> Option<usize> {
        xor_distance(&self.owner, id)
            .0
            .highest_set_bit()
            .map(|b| b as usize)
    }

    /// Inserts or refreshes `peer`. Returns false for the owner itself, for
    /// ids outside the table's width, and when the bucket is full.
    pub fn insert(&mut self, peer: PeerInfo) -> bool {
        let Some(idx) = self.bucket_index(&peer.id) else {
            return false;
        };
        let Some(bucket) = self.buckets.get_mut(idx) else {
            return false;
        };
        if let Some(existing) = bucket.iter_mut().find(|p| p.id == peer.id) {
            *existing = peer;
            return true;
        }
        if bucket.len() >= self.k {
            return false;
        }
        bucket.push(peer);
        true
    }

    pub fn remove(&mut self, id: &NodeId) -> Option<PeerInfo> {
        let idx = self.bucket_index(id)?;
        let bucket = self.buckets.get_mut(idx)?;
        let pos = bucket.iter().position(|p| p.id == *id)?;
        Some(bucket.remove(pos))
    }

    pub fn get(&self, id: &NodeId) -> Option<&PeerInfo> {
        let idx = self.bucket_index(id)?;
        self.buckets.get(idx)?.iter().find(|p| p.id == *id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerInfo> {
        self.buckets.iter().flatten()
    }

    pub fn bucket(&self, index: usize) -> &[PeerInfo] {
        self.buckets.get(index).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks the structural invariants; used by tests and debug audits.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, bucket) in self.buckets.iter().enumerate() {
            if bucket.len() > self.k {
                return Err(format!("bucket {i} holds {} > k={}", bucket.len(), self.k));
            }
            for p in bucket {
                if !seen.insert(p.id) {
                    return Err(format!("peer {} stored twice", p.id));
                }
                if self.bucket_index(&p.id) != Some(i) {
                    return Err(format!("peer {} in wrong bucket {i}", p.id));
                }
            }
        }
        Ok(())
    }

    pub fn closest_peers<T: Located + ?Sized>(&self, target: &T, n: usize) -> Vec<PeerInfo> {
        closest_peers(self, target, n)
    }

    pub fn route_next_hop(&self, key: &Key) -> Option<PeerInfo> {
        route_next_hop(self.owner, self, key)
    }
}

/// Up to `n` known peers sorted by XOR distance to `target`, ties broken by
/// the lower numeric id.
pub fn closest_peers<T: Located + ?Sized>(
    table: &RoutingTable,
    target: &T,
    n: usize,
) -> Vec<PeerInfo> {
    let mut all: Vec<_> = table
        .peers()
        .map(|p| (xor_distance(&p.id, target), p.id, *p))
        .collect();
    all.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    all.into_iter().take(n).map(|(_, _, p)| p).collect()
}

/// Greedy step toward `key`: the known peer strictly closer than `me`, or
/// `None` when `me` is the closest point it knows of (the rendezvous).
pub fn route_next_hop(me: NodeId, table: &RoutingTable, key: &Key) -> Option<PeerInfo> {
    let own = xor_distance(&me, key);
    let best = closest_peers(table, key, 1).into_iter().next()?;
    (xor_distance(&best.id, key) < own).then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Address, Region};

    fn space8() -> IdSpace {
        IdSpace::new(8).unwrap()
    }

    fn peer(v: u64) -> PeerInfo {
        PeerInfo::new(NodeId::from_u64(v), Address(v as u32), Region(0))
    }

    fn table(owner: u64, peers: &[u64], k: usize) -> RoutingTable {
        let mut t = RoutingTable::new(NodeId::from_u64(owner), space8(), k);
        for p in peers {
            t.insert(peer(*p));
        }
        t
    }

    fn brute_force_sorted(peers: &[u64], key: u64) -> Vec<u64> {
        let mut v = peers.to_vec();
        v.sort_by_key(|p| (p ^ key, *p));
        v
    }

    #[test]
    fn insert_respects_buckets_and_capacity() {
        let mut t = RoutingTable::new(NodeId::from_u64(0), space8(), 2);
        assert!(!t.insert(peer(0)), "owner is never stored");
        assert!(t.insert(peer(0x80)));
        assert!(t.insert(peer(0x81)));
        assert!(!t.insert(peer(0x82)), "bucket 7 is full");
        assert!(t.insert(peer(0x81)), "refresh of a known peer");
        assert!(t.insert(peer(0x01)));
        assert_eq!(t.len(), 3);
        assert_eq!(t.bucket(7).len(), 2);
        assert_eq!(t.bucket(0).len(), 1);
        t.audit().unwrap();
        assert!(t.remove(&NodeId::from_u64(0x80)).is_some());
        assert!(t.insert(peer(0x82)));
        t.audit().unwrap();
    }

    #[test]
    fn closest_single_peer() {
        let t = table(0xF0, &[0x10], 4);
        for key in [0u64, 0x10, 0xFF, 0x7A] {
            let got = t.closest_peers(&Key::from_u64(key), 3);
            assert_eq!(got.len(), 1);
            assert_eq!(got[0].id, NodeId::from_u64(0x10));
        }
    }

    #[test]
    fn closest_two_of_three() {
        let t = table(0x00, &[0x10, 0x20, 0x30], 4);
        let got: Vec<_> = t
            .closest_peers(&Key::from_u64(0x21), 2)
            .iter()
            .map(|p| p.id.0.low_u64())
            .collect();
        assert_eq!(got, vec![0x20, 0x30]);
        assert_eq!(brute_force_sorted(&[0x10, 0x20, 0x30], 0x21)[..2], [0x20, 0x30]);
    }

    #[test]
    fn closest_saturates() {
        let t = table(0x00, &[0x10, 0x20, 0x30], 4);
        let got: Vec<_> = t
            .closest_peers(&Key::from_u64(0x21), 10)
            .iter()
            .map(|p| p.id.0.low_u64())
            .collect();
        assert_eq!(got, brute_force_sorted(&[0x10, 0x20, 0x30], 0x21));
        let empty = RoutingTable::new(NodeId::from_u64(1), space8(), 4);
        assert!(empty.closest_peers(&Key::from_u64(3), 5).is_empty());
    }

    #[test]
    fn next_hop_greedy() {
        let t = table(0xF0, &[0x10, 0x80], 4);
        assert_eq!(
            t.route_next_hop(&Key::from_u64(0x11)).map(|p| p.id),
            Some(NodeId::from_u64(0x10))
        );
        // Owner already closest.
        assert_eq!(t.route_next_hop(&Key::from_u64(0xF1)), None);
        let lonely = RoutingTable::new(NodeId::from_u64(1), space8(), 4);
        assert_eq!(lonely.route_next_hop(&Key::from_u64(9)), None);
    }

    /// Full-membership tables for every node of `ids`.
    fn full_network(ids: &[u64], k: usize) -> Vec<RoutingTable> {
        ids.iter()
            .map(|&o| {
                let others: Vec<u64> = ids.iter().copied().filter(|&x| x != o).collect();
                table(o, &others, k)
            })
            .collect()
    }

    fn walk(tables: &[RoutingTable], ids: &[u64], start: usize, key: &Key) -> (u64, usize) {
        let mut at = start;
        let mut hops = 0;
        let mut last = xor_distance(&NodeId::from_u64(ids[at]), key);
        while let Some(next) = tables[at].route_next_hop(key) {
            let d = xor_distance(&next.id, key);
            assert!(d < last, "routing must make progress");
            last = d;
            at = ids.iter().position(|&x| x == next.id.0.low_u64()).unwrap();
            hops += 1;
            assert!(hops <= 8);
        }
        (ids[at], hops)
    }

    #[test]
    fn lookups_terminate_within_width_and_agree() {
        // 32 nodes spread over the W=8 space, buckets small enough to matter.
        let ids: Vec<u64> = (0..32u64).map(|i| (i * 37 + 11) % 256).collect();
        let tables = full_network(&ids, 4);
        for key in 0..256u64 {
            let key = Key::from_u64(key);
            let expected = *ids
                .iter()
                .min_by_key(|&&x| xor_distance(&NodeId::from_u64(x), &key))
                .unwrap();
            for start in 0..ids.len() {
                let (end, hops) = walk(&tables, &ids, start, &key);
                assert!(hops <= 8);
                assert_eq!(end, expected, "lookup from {start} disagreed");
            }
        }
    }

    #[test]
    fn rendezvous_agreement_64_nodes() {
        let ids: Vec<u64> = (0..64u64).map(|i| i * 4 + (i % 3)).collect();
        let tables = full_network(&ids, 3);
        for t in &tables {
            t.audit().unwrap();
        }
        for key in (0..256u64).step_by(5) {
            let key = Key::from_u64(key);
            let ends: std::collections::BTreeSet<u64> =
                (0..ids.len()).map(|s| walk(&tables, &ids, s, &key).0).collect();
            assert_eq!(ends.len(), 1);
        }
    }
}
