//! Virtual-time event queue with a total (time, sequence) order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    Deliver {
        to: usize,
        origin: usize,
        bytes: Vec<u8>,
    },
    Tick {
        peer: usize,
    },
    Script {
        step: usize,
    },
}

#[derive(Debug)]
struct Entry {
    at_ms: u64,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.seq) == (other.at_ms, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_ms, other.seq).cmp(&(self.at_ms, self.seq))
    }
}

#[derive(Debug, Default)]
pub struct SimEventQueue {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
}

impl SimEventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at_ms: u64, event: SimEvent) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at_ms, seq, event });
    }

    /// Pops the earliest event if it is due at or before `limit_ms`.
    pub fn pop_until(&mut self, limit_ms: u64) -> Option<(u64, SimEvent)> {
        if self.heap.peek()?.at_ms > limit_ms {
            return None;
        }
        self.heap.pop().map(|e| (e.at_ms, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn pending_deliveries(&self) -> usize {
        self.heap
            .iter()
            .filter(|e| matches!(e.event, SimEvent::Deliver { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn pops_in_time_then_sequence_order(times in proptest::collection::vec(0u64..50, 1..200)) {
            let mut q = SimEventQueue::new();
            for (i, &t) in times.iter().enumerate() {
                q.push(t, SimEvent::Script { step: i });
            }
            let mut last = (0u64, 0usize);
            let mut first = true;
            while let Some((t, SimEvent::Script { step })) = q.pop_until(u64::MAX) {
                prop_assert_eq!(t, times[step]);
                if !first {
                    prop_assert!((t, step) > last);
                }
                last = (t, step);
                first = false;
            }
            prop_assert!(q.is_empty());
        }
    }

    #[test]
    fn pop_respects_limit() {
        let mut q = SimEventQueue::new();
        q.push(10, SimEvent::Tick { peer: 0 });
        assert!(q.pop_until(9).is_none());
        assert_eq!(q.pop_until(10), Some((10, SimEvent::Tick { peer: 0 })));
    }
}
