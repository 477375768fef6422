use std::collections::{BTreeMap, VecDeque};

/// Bounded map evicting in insertion order.
#[derive(Debug)]
pub(crate) struct Bounded<K: Ord + Clone, V> {
    map: BTreeMap<K, V>,
    order: VecDeque<K>,
    cap: usize,
}

impl<K: Ord + Clone, V> Bounded<K, V> {
    pub fn new(cap: usize) -> Self {
        Bounded {
            map: BTreeMap::new(),
            order: VecDeque::new(),
            cap: cap.max(1),
        }
    }

    pub fn contains(&self, k: &K) -> bool {
        self.map.contains_key(k)
    }

    pub fn insert_new(&mut self, k: K, v: V) {
        if self.map.insert(k.clone(), v).is_none() {
            self.order.push_back(k);
            while self.order.len() > self.cap {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
        }
    }

    /// Removes temporarily; pair with [`Bounded::put_back`] and insert
    /// nothing in between.
    pub fn take(&mut self, k: &K) -> Option<V> {
        self.map.remove(k)
    }

    pub fn put_back(&mut self, k: K, v: V) {
        self.map.insert(k, v);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}

