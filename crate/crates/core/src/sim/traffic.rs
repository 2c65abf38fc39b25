//! Conversations between paired normal nodes and their write/poll schedule.

use crate::board::CreditToken;
use crate::protocol::SessionState;
use crate::NodeId;

/// One writer -> reader session plus the schedule that drives it.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub writer: NodeId,
    pub reader: NodeId,
    pub writer_state: SessionState,
    pub reader_state: SessionState,
    pub credit_token: CreditToken,
    /// Payloads in emission order, kept to check what the reader recovers.
    pub sent: Vec<Vec<u8>>,
    pub emitted_at: Vec<f64>,
    pub received: usize,
    pub next_write: f64,
    pub poll_due: Option<f64>,
    pub mismatches: u64,
}

impl Conversation {
    pub fn new(writer_state: SessionState, reader_state: SessionState, credit_token: CreditToken, start: f64) -> Self {
        Self {
            writer: reader_state.peer,
            reader: writer_state.peer,
            writer_state,
            reader_state,
            credit_token,
            sent: Vec::new(),
            emitted_at: Vec::new(),
            received: 0,
            next_write: start,
            poll_due: None,
            mismatches: 0,
        }
    }

    pub fn waiting(&self) -> bool {
        self.received < self.sent.len()
    }

    /// Bookkeeping after the writer emits a message at `now`.
    pub fn on_emitted(&mut self, payload: Vec<u8>, now: f64, read_lag: f64) {
        self.sent.push(payload);
        self.emitted_at.push(now);
        if self.received + 1 == self.sent.len() && self.poll_due.is_none() {
            self.poll_due = Some(now + read_lag);
        }
    }

    /// Bookkeeping after the reader recovers `payload` at `now`.
    pub fn on_received(&mut self, payload: &[u8], now: f64, read_lag: f64) {
        if self.sent.get(self.received).map(Vec::as_slice) != Some(payload) {
            self.mismatches += 1;
        }
        self.received += 1;
        self.poll_due = self
            .emitted_at
            .get(self.received)
            .map(|&emitted| (emitted + read_lag).max(now));
    }
}

/// Number of writes a writer emits over `[start, duration)`.
pub fn scheduled_writes(start: f64, duration: f64, interval: f64) -> u64 {
    if start >= duration {
        return 0;
    }
    ((duration - start) / interval).ceil() as u64
}
