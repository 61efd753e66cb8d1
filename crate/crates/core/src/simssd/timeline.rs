//! Reservation calendar for one die or channel. A request takes the earliest
//! idle gap long enough for its operation, so a reservation made far in the
//! future does not block earlier idle time.

use std::collections::BTreeMap;

/// Non-negative finite f64 as an order-preserving integer key.
fn key(t: f64) -> u64 {
    debug_assert!(t >= 0.0 && t.is_finite());
    t.to_bits()
}

#[derive(Debug, Default, Clone)]
pub(crate) struct Timeline {
    /// Disjoint busy intervals keyed by start: start -> (start, end).
    busy: BTreeMap<u64, (f64, f64)>,
}

impl Timeline {
    /// Books `dur` microseconds no earlier than `earliest`; returns the start.
    pub fn reserve(&mut self, earliest: f64, dur: f64) -> f64 {
        let mut t = earliest;
        if let Some((_, &(_, e))) = self.busy.range(..=key(t)).next_back() {
            t = t.max(e);
        }
        for (_, &(s, e)) in self.busy.range(key(t)..) {
            if s >= t + dur {
                break;
            }
            t = t.max(e);
        }
        self.insert(t, t + dur);
        t
    }

    fn insert(&mut self, mut s: f64, mut e: f64) {
        if let Some((&k, &(ps, pe))) = self.busy.range(..=key(s)).next_back() {
            if pe == s {
                self.busy.remove(&k);
                s = ps;
            }
        }
        if let Some(&(ns, ne)) = self.busy.get(&key(e)) {
            if ns == e {
                self.busy.remove(&key(e));
                e = ne;
            }
        }
        self.busy.insert(key(s), (s, e));
    }

    /// Drops intervals that end before `t`; no later request can start earlier.
    pub fn prune(&mut self, t: f64) {
        while let Some((&k, &(_, e))) = self.busy.first_key_value() {
            if e >= t {
                break;
            }
            self.busy.remove(&k);
        }
    }

    #[cfg(test)]
    fn intervals(&self) -> Vec<(f64, f64)> {
        self.busy.values().copied().collect()
    }
}
