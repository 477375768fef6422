//! Matching, covering and exact merging of predicates.

use super::{EventPredicate, Predicate};
use crate::scalar::Scalar;

/// Does the event satisfy every attribute of the subscription? Extra event
/// attributes never disqualify.
pub fn matches<S: Scalar>(sub: &Predicate<S>, ev: &EventPredicate<S>) -> bool {
    let ev = ev.predicate();
    sub.topic_set().iter().all(|t| ev.has_topic(t))
        && sub.range_map().iter().all(|(name, interval)| {
            ev.range(name)
                .is_some_and(|point| interval.contains(point.lo()))
        })
}

/// `general` covers `specific` when every event matching `specific` also
/// matches `general`.
pub fn covers<S: Scalar>(general: &Predicate<S>, specific: &Predicate<S>) -> bool {
    general.topic_set().is_subset(specific.topic_set())
        && general.range_map().iter().all(|(name, outer)| {
            specific
                .range(name)
                .is_some_and(|inner| outer.contains_interval(inner))
        })
}

/// A single predicate whose match set is exactly the union of the two
/// inputs' match sets, when one exists under the two rules implemented
/// here: covering, and union of overlapping intervals on the only range
/// that differs.
pub fn try_merge<S: Scalar>(f1: &Predicate<S>, f2: &Predicate<S>) -> Option<Predicate<S>> {
    if covers(f1, f2) {
        return Some(f1.clone());
    }
    if covers(f2, f1) {
        return Some(f2.clone());
    }
    if f1.topic_set() != f2.topic_set() {
        return None;
    }
    let (r1, r2) = (f1.range_map(), f2.range_map());
    if r1.len() != r2.len() || !r1.keys().eq(r2.keys()) {
        return None;
    }
    let mut differing = r1
        .iter()
        .zip(r2.values())
        .filter(|((_, a), b)| a != b);
    let ((name, a), b) = differing.next()?;
    if differing.next().is_some() || !a.overlaps(b) {
        return None;
    }
    Some(f1.with_range(name, a.hull(b)))
}

/// Inserts `f` into a merge-canonical filter list and returns the new
/// canonical list. The union of match sets grows by exactly `match(f)`.
pub fn filter_set_insert<S: Scalar>(set: &[Predicate<S>], f: Predicate<S>) -> Vec<Predicate<S>> {
    let mut fs = FilterSet::from_canonical(set.to_vec());
    fs.insert(f);
    fs.into_vec()
}

/// Merge-canonical list of filters: no two members can be combined by
/// [`try_merge`]. Members are kept sorted by their text form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterSet<S> {
    filters: Vec<Predicate<S>>,
}

impl<S> Default for FilterSet<S> {
    fn default() -> Self {
        FilterSet { filters: Vec::new() }
    }
}

impl<S: Scalar> FilterSet<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps a list that is assumed canonical already.
    pub fn from_canonical(mut filters: Vec<Predicate<S>>) -> Self {
        sort_canonical(&mut filters);
        FilterSet { filters }
    }

    /// Inserts `f`, merging until a fixpoint. Returns `(changed, comparisons)`
    /// where `comparisons` counts the `try_merge` evaluations performed.
    pub fn insert(&mut self, f: Predicate<S>) -> (bool, usize) {
        let mut current = f;
        let mut comparisons = 0;
        if self.filters.iter().any(|m| {
            comparisons += 1;
            covers(m, &current)
        }) {
            return (false, comparisons);
        }
        'merge: loop {
            for i in 0..self.filters.len() {
                comparisons += 1;
                if let Some(merged) = try_merge(&self.filters[i], &current) {
                    self.filters.swap_remove(i);
                    current = merged;
                    continue 'merge;
                }
            }
            break;
        }
        self.filters.push(current);
        sort_canonical(&mut self.filters);
        (true, comparisons)
    }

    /// First member matching the event, with the number of members checked.
    pub fn first_match(&self, ev: &EventPredicate<S>) -> (bool, usize) {
        let mut checked = 0;
        for f in &self.filters {
            checked += 1;
            if matches(f, ev) {
                return (true, checked);
            }
        }
        (false, checked)
    }

    pub fn matches(&self, ev: &EventPredicate<S>) -> bool {
        self.first_match(ev).0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Predicate<S>> {
        self.filters.iter()
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn as_slice(&self) -> &[Predicate<S>] {
        &self.filters
    }

    pub fn into_vec(self) -> Vec<Predicate<S>> {
        self.filters
    }

    /// Checks that no two members could be merged.
    pub fn is_canonical(&self) -> bool {
        self.filters.iter().enumerate().all(|(i, a)| {
            self.filters[i + 1..]
                .iter()
                .all(|b| try_merge(a, b).is_none())
        })
    }
}

fn sort_canonical<S: Scalar>(filters: &mut [Predicate<S>]) {
    filters.sort_by_cached_key(|p| p.to_string());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    type P = Predicate<Rational>;
    type E = EventPredicate<Rational>;

    fn p(s: &str) -> P {
        P::parse(s).unwrap()
    }

    fn e(s: &str) -> E {
        E::parse(s).unwrap()
    }

    /// Every event over the attributes mentioned in the test cases, with the
    /// numeric attribute sampled on a half-integer grid (wider than any
    /// interval below, so interval boundaries are exercised on both sides).
    fn event_space() -> Vec<E> {
        let topics = ["football", "tom-brady", "basketball", "apple", "france"];
        let mut out = Vec::new();
        for mask in 0u32..(1 << topics.len()) {
            let chosen: Vec<&str> = topics
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, t)| *t)
                .collect();
            let base = chosen.join("/");
            if !base.is_empty() {
                out.push(e(&base));
            }
            for half in -2..=10 {
                let v = Rational::new(half, 2);
                let rng = format!("price[{v},{v}]");
                let text = if base.is_empty() { rng } else { format!("{base}/{rng}") };
                out.push(e(&text));
            }
        }
        out
    }

    fn same_match_set(a: &[P], b: &[P]) -> bool {
        event_space().iter().all(|ev| {
            a.iter().any(|f| matches(f, ev)) == b.iter().any(|f| matches(f, ev))
        })
    }

    #[test]
    fn matching_examples() {
        assert!(matches(&p("football/tom-brady"), &e("football/tom-brady/goals[2,2]")));
        assert!(!matches(&p("apple/france/price[0,1]"), &e("apple/france/price[2,2]")));
        assert!(matches(&p("apple/france/price[0,1]"), &e("apple/france/price[1,1]")));
        let same = "apple/price[3,3]";
        assert!(matches(&p(same), &e(same)));
        assert!(!matches(&p("price[0,1]"), &e("price")), "topic is not a value");
    }

    #[test]
    fn covering_examples_against_event_space() {
        let general = p("football");
        let specific = p("football/tom-brady");
        assert!(covers(&general, &specific));
        assert!(!covers(&specific, &general));
        // Semantic check: covers(g, s) <=> match(s) subset of match(g).
        for (g, s) in [(&general, &specific), (&specific, &general)] {
            let semantic = event_space()
                .iter()
                .all(|ev| !matches(s, ev) || matches(g, ev));
            assert_eq!(covers(g, s), semantic);
        }
        // The counterexample for the reverse direction.
        assert!(matches(&general, &e("football")) && !matches(&specific, &e("football")));
        for text in ["football", "apple/price[0,3]", "price[1,1]"] {
            assert!(covers(&p(text), &p(text)));
        }
    }

    #[test]
    fn merge_examples() {
        let m = try_merge(&p("football"), &p("football/tom-brady")).unwrap();
        assert_eq!(m, p("football"));
        assert!(same_match_set(&[m], &[p("football"), p("football/tom-brady")]));

        let m = try_merge(&p("apple/price[0,1]"), &p("apple/price[1,3]")).unwrap();
        assert_eq!(m, p("apple/price[0,3]"));
        assert!(same_match_set(&[m], &[p("apple/price[0,1]"), p("apple/price[1,3]")]));

        assert_eq!(try_merge(&p("football"), &p("basketball")), None);
        // Disjoint intervals have no single-predicate union.
        assert_eq!(try_merge(&p("price[0,1]"), &p("price[2,3]")), None);
        // Two differing ranges cannot be merged exactly.
        assert_eq!(try_merge(&p("a[0,1]/b[0,1]"), &p("a[1,2]/b[1,2]")), None);
    }

    #[test]
    fn filter_set_examples() {
        assert_eq!(filter_set_insert(&[], p("football")), vec![p("football")]);
        assert_eq!(
            filter_set_insert(&[p("football")], p("football/tom-brady")),
            vec![p("football")]
        );
        assert_eq!(
            filter_set_insert(&[p("apple/price[0,1]")], p("apple/price[1,2]")),
            vec![p("apple/price[0,2]")]
        );
        // A new wide filter absorbs several members.
        let set = vec![p("apple/price[0,1]"), p("apple/price[3,4]")];
        assert_eq!(filter_set_insert(&set, p("apple")), vec![p("apple")]);
        // Bridging interval chains two merges.
        assert_eq!(filter_set_insert(&set, p("apple/price[1,3]")), vec![p("apple/price[0,4]")]);
    }

    #[test]
    fn insert_reports_changes() {
        let mut fs = FilterSet::new();
        assert!(fs.insert(p("football")).0);
        assert!(!fs.insert(p("football")).0);
        assert!(!fs.insert(p("football/tom-brady")).0);
        assert!(fs.insert(p("basketball")).0);
        assert!(fs.is_canonical());
        assert_eq!(fs.len(), 2);
        assert_eq!(fs.as_slice()[0], p("basketball"));
    }
}
