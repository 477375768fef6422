use crate::predicate::Interval;
use crate::scalar::Scalar;

/// Static interval tree: intervals sorted by lower bound, laid out as an
/// implicit balanced BST over the sorted array, each node carrying the
/// largest upper bound in its subtree.
#[derive(Clone, Debug)]
pub struct IntervalTree<S> {
    items: Vec<(Interval<S>, usize)>,
    max_hi: Vec<S>,
}

impl<S: Scalar> IntervalTree<S> {
    pub fn build(mut items: Vec<(Interval<S>, usize)>) -> Self {
        items.sort_by(|a, b| {
            a.0.lo()
                .partial_cmp(b.0.lo())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let mut max_hi: Vec<S> = items.iter().map(|(i, _)| i.hi().clone()).collect();
        fill_max(&items, &mut max_hi, 0, items.len());
        IntervalTree { items, max_hi }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Tags of all intervals containing `v`, plus the number of tree nodes
    /// visited.
    pub fn stab(&self, v: &S) -> (Vec<usize>, usize) {
        let mut out = Vec::new();
        let mut visited = 0;
        self.stab_in(v, 0, self.items.len(), &mut out, &mut visited);
        (out, visited)
    }

    fn stab_in(&self, v: &S, lo: usize, hi: usize, out: &mut Vec<usize>, visited: &mut usize) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        *visited += 1;
        if self.max_hi[mid] < *v {
            return;
        }
        self.stab_in(v, lo, mid, out, visited);
        let (iv, tag) = &self.items[mid];
        if iv.lo() > v {
            // Everything to the right starts even later.
            return;
        }
        if iv.hi() >= v {
            out.push(*tag);
        }
        self.stab_in(v, mid + 1, hi, out, visited);
    }
}

fn fill_max<S: Scalar>(items: &[(Interval<S>, usize)], max_hi: &mut [S], lo: usize, hi: usize) -> Option<S> {
    if lo >= hi {
        return None;
    }
    let mid = lo + (hi - lo) / 2;
    let mut m = items[mid].0.hi().clone();
    if let Some(l) = fill_max(items, max_hi, lo, mid) {
        m = S::max_of(m, l);
    }
    if let Some(r) = fill_max(items, max_hi, mid + 1, hi) {
        m = S::max_of(m, r);
    }
    max_hi[mid] = m.clone();
    Some(m)
}
