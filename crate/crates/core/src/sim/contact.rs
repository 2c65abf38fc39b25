//! Contact detection and per-contact links.

use std::collections::{HashSet, VecDeque};

use super::mobility::Point;
use super::SimMessage;
use crate::NodeId;

/// Pairs `(a, b)` with `a < b` whose distance is within both radio ranges.
/// `nodes` holds `(id, position, range)`.
pub fn detect_contacts(nodes: &[(NodeId, Point, f64)]) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for (i, &(a, pa, ra)) in nodes.iter().enumerate() {
        for &(b, pb, rb) in &nodes[i + 1..] {
            let reach = ra.min(rb);
            let dx = pa.x - pb.x;
            let dy = pa.y - pb.y;
            if dx * dx + dy * dy <= reach * reach {
                out.push(if a < b { (a, b) } else { (b, a) });
            }
        }
    }
    out.sort_unstable();
    out
}

/// A hand-scheduled contact, active on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedContact {
    pub a: NodeId,
    pub b: NodeId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactScript {
    pub contacts: Vec<ScriptedContact>,
}

impl ContactScript {
    pub fn new(contacts: Vec<ScriptedContact>) -> Self {
        Self { contacts }
    }

    pub fn active_at(&self, t: f64) -> Vec<(NodeId, NodeId)> {
        const EPS: f64 = 1e-9;
        let mut out: Vec<_> = self
            .contacts
            .iter()
            .filter(|c| c.start <= t + EPS && t + EPS < c.end)
            .map(|c| if c.a < c.b { (c.a, c.b) } else { (c.b, c.a) })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: SimMessage,
    /// The sender kept its own copy (epidemic replica).
    pub replica: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferState {
    InProgress,
    Done,
    Aborted,
}

/// Link state for one live contact. One transfer at a time, in either
/// direction; the rest wait in FIFO order.
#[derive(Debug, Clone)]
pub struct Link {
    pub since: f64,
    active: Option<(Transfer, u32)>,
    queue: VecDeque<Transfer>,
    /// `(uid, stage, receiver)` already offered on this link.
    pub(crate) offered: HashSet<(u64, u8, NodeId)>,
}

impl Link {
    pub fn new(since: f64) -> Self {
        Self { since, active: None, queue: VecDeque::new(), offered: HashSet::new() }
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some()
    }

    pub fn enqueue(&mut self, t: Transfer) {
        self.queue.push_back(t);
    }

    /// Starts the next queued transfer if idle; `steps` gives its duration.
    pub fn start_next(&mut self, steps: impl Fn(&Transfer) -> u32) -> Option<&Transfer> {
        if self.active.is_none() {
            if let Some(t) = self.queue.pop_front() {
                let n = steps(&t).max(1);
                self.active = Some((t, n));
                return self.active.as_ref().map(|(t, _)| t);
            }
        }
        None
    }

    /// Advances the active transfer by one step.
    pub fn progress(&mut self) -> (TransferState, Option<Transfer>) {
        match self.active.as_mut() {
            None => (TransferState::InProgress, None),
            Some((_, left)) => {
                *left -= 1;
                if *left == 0 {
                    let (t, _) = self.active.take().expect("active");
                    (TransferState::Done, Some(t))
                } else {
                    (TransferState::InProgress, None)
                }
            }
        }
    }

    /// Contact lost: everything in flight or queued goes back to its sender.
    pub fn abort(self) -> Vec<Transfer> {
        self.active.map(|(t, _)| t).into_iter().chain(self.queue).collect()
    }

    pub fn carried(&self) -> impl Iterator<Item = &Transfer> {
        self.active.iter().map(|(t, _)| t).chain(self.queue.iter())
    }
}

/// Steps a transfer of `size` bytes occupies at `bitrate` bytes/s.
pub fn transfer_steps(size: usize, bitrate: f64, dt: f64) -> u32 {
    ((size as f64 / bitrate) / dt).ceil().max(1.0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Kind;
    use crate::mix::OnionPacket;
    use crate::sim::MsgMeta;

    fn msg(uid: u64) -> SimMessage {
        SimMessage {
            meta: MsgMeta::new(uid, Kind::Write, 0.0, 0),
            packet: OnionPacket { next_hop: NodeId(1), body: vec![0; 10], attached: vec![] },
        }
    }

    #[test]
    fn geometry() {
        let at = |id, x| (NodeId(id), Point::new(x, 0.0), 25.0);
        assert_eq!(detect_contacts(&[at(0, 0.0), at(1, 20.0)]), vec![(NodeId(0), NodeId(1))]);
        assert!(detect_contacts(&[at(0, 0.0), at(1, 26.0)]).is_empty());
        // reversed id order still yields (low, high)
        assert_eq!(detect_contacts(&[at(5, 0.0), at(2, 25.0)]), vec![(NodeId(2), NodeId(5))]);
        // the smaller range decides
        let short = (NodeId(3), Point::new(15.0, 0.0), 10.0);
        assert!(detect_contacts(&[at(0, 0.0), short]).is_empty());
    }

    #[test]
    fn kilobyte_fits_in_one_step() {
        assert_eq!(transfer_steps(1024, 1e8, 0.1), 1);
        assert_eq!(transfer_steps(25_000_000, 1e8, 0.1), 3);
    }

    #[test]
    fn sequential_on_one_link() {
        let mut link = Link::new(0.0);
        for uid in 0..2 {
            link.enqueue(Transfer { from: NodeId(0), to: NodeId(1), msg: msg(uid), replica: false });
        }
        assert!(link.start_next(|_| 2).is_some());
        assert!(link.start_next(|_| 2).is_none());
        assert_eq!(link.progress().0, TransferState::InProgress);
        let (state, done) = link.progress();
        assert_eq!(state, TransferState::Done);
        assert_eq!(done.unwrap().msg.meta.uid, 0);
        assert!(!link.is_busy());
        link.start_next(|_| 1);
        assert_eq!(link.progress().1.unwrap().msg.meta.uid, 1);
    }

    #[test]
    fn abort_returns_everything() {
        let mut link = Link::new(0.0);
        for uid in 0..3 {
            link.enqueue(Transfer { from: NodeId(0), to: NodeId(1), msg: msg(uid), replica: false });
        }
        link.start_next(|_| 5);
        link.progress();
        let back: Vec<u64> = link.abort().into_iter().map(|t| t.msg.meta.uid).collect();
        assert_eq!(back, vec![0, 1, 2]);
    }

    #[test]
    fn script_windows() {
        let s = ContactScript::new(vec![ScriptedContact { a: NodeId(2), b: NodeId(1), start: 10.0, end: 20.0 }]);
        assert!(s.active_at(9.9).is_empty());
        assert_eq!(s.active_at(10.0), vec![(NodeId(1), NodeId(2))]);
        assert!(s.active_at(20.0).is_empty());
    }
}
