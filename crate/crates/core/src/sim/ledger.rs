//! Conservation ledger: every message the world creates ends up delivered,
//! dropped, or still somewhere in the network.

use std::collections::{BTreeMap, BTreeSet};

use crate::metrics::Kind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    BoardOccupied,
    BoardNoCredit,
    BoardOutOfRange,
    Undecodable,
    PeelFailed,
    NoReplyRoute,
    Misaddressed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    InFlight,
    Delivered,
    Dropped(DropReason),
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    fates: BTreeMap<u64, (Kind, Fate)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindBalance {
    pub created: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Undelivered and still held by some node or link.
    pub in_flight: u64,
    /// Undelivered, undropped, and nowhere to be found. Always zero unless the
    /// simulator loses messages.
    pub missing: u64,
}

impl KindBalance {
    pub fn balanced(&self) -> bool {
        self.missing == 0 && self.created == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conservation {
    pub per_kind: BTreeMap<Kind, KindBalance>,
    pub drops: BTreeMap<DropReason, u64>,
}

impl Conservation {
    pub fn balanced(&self) -> bool {
        self.per_kind.values().all(KindBalance::balanced)
    }

    pub fn kind(&self, kind: Kind) -> KindBalance {
        self.per_kind.get(&kind).copied().unwrap_or_default()
    }
}

impl Ledger {
    pub fn created(&mut self, uid: u64, kind: Kind) {
        let prev = self.fates.insert(uid, (kind, Fate::InFlight));
        assert!(prev.is_none(), "uid {uid} created twice");
    }

    fn settle(&mut self, uid: u64, fate: Fate) {
        let entry = self.fates.get_mut(&uid).unwrap_or_else(|| panic!("uid {uid} never created"));
        assert_eq!(entry.1, Fate::InFlight, "uid {uid} settled twice");
        entry.1 = fate;
    }

    pub fn delivered(&mut self, uid: u64) {
        self.settle(uid, Fate::Delivered);
    }

    pub fn dropped(&mut self, uid: u64, reason: DropReason) {
        self.settle(uid, Fate::Dropped(reason));
    }

    pub fn fate(&self, uid: u64) -> Option<Fate> {
        self.fates.get(&uid).map(|&(_, f)| f)
    }

    /// Balances the ledger against the uids currently held in the network.
    pub fn reconcile(&self, present: &BTreeSet<u64>) -> Conservation {
        let mut out = Conservation::default();
        for (&uid, &(kind, fate)) in &self.fates {
            let b = out.per_kind.entry(kind).or_default();
            b.created += 1;
            match fate {
                Fate::Delivered => b.delivered += 1,
                Fate::Dropped(reason) => {
                    b.dropped += 1;
                    *out.drops.entry(reason).or_default() += 1;
                }
                Fate::InFlight if present.contains(&uid) => b.in_flight += 1,
                Fate::InFlight => b.missing += 1,
            }
        }
        out
    }
}
