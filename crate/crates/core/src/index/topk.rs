use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A scored candidate. `Ord` ranks worse candidates higher, so a max-heap
/// keeps the current worst on top.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cand<'a> {
    pub sim: f32,
    pub ord: u32,
    pub id: &'a str,
}

impl Ord for Cand<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.sim.total_cmp(&self.sim).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Cand<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cand<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand<'_> {}

/// Bounded selection of the `k` best candidates.
pub(crate) struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Cand<'a>>,
}

impl<'a> TopK<'a> {
    pub fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1) }
    }

    #[inline]
    pub fn offer(&mut self, c: Cand<'a>) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    pub fn merge(&mut self, other: TopK<'a>) {
        for c in other.heap {
            self.offer(c);
        }
    }

    /// Best first.
    pub fn into_sorted(self) -> Vec<Cand<'a>> {
        self.heap.into_sorted_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_with_id_tiebreak() {
        let mut t = TopK::new(3);
        for (i, (sim, id)) in [(0.5, "e"), (0.9, "b"), (0.9, "a"), (0.1, "z"), (0.7, "c")].into_iter().enumerate() {
            t.offer(Cand { sim, ord: i as u32, id });
        }
        let ids: Vec<_> = t.into_sorted().into_iter().map(|c| c.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }
}
