//! Endpoint state machine for one direction of a pairwise conversation.
//!
//! The two ends meet once and agree on a key, a first cell index and a first
//! tag preimage. Every message then carries, inside its encrypted envelope, the
//! index and preimage of the cell the next message will occupy. Both ends step
//! the key through [`kdf`] once per message.

use rand::{seq::SliceRandom, CryptoRng, Rng, RngCore};

use crate::board::{Board, CreditToken, ReadOutcome, ReadRequest, WriteError, WriteRequest};
use crate::crypto::{commit, kdf, sym_decrypt, sym_encrypt, SymmetricKey, TagPreimage, TOKEN_LEN};
use crate::wire::{Reader, WireError};
use crate::NodeId;

/// Application payload size used when the traffic config does not override it.
pub const DEFAULT_PAYLOAD_SIZE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Writer,
    Reader,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("session keys diverged: value failed authentication")]
    Desync,
    #[error("decrypted envelope is malformed: {0}")]
    BadEnvelope(#[from] WireError),
    #[error("every cell was occupied after {attempts} attempts")]
    Exhausted { attempts: usize },
    #[error("board refused the write: {0}")]
    Refused(WriteError),
}

/// One endpoint's view of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub peer: NodeId,
    pub key: SymmetricKey,
    pub next_index: u32,
    pub next_preimage: TagPreimage,
    pub role: Role,
    pub board_size: u32,
}

/// The plaintext sealed into a cell value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainEnvelope {
    pub payload: Vec<u8>,
    pub next_index: u32,
    pub next_preimage: TagPreimage,
}

impl PlainEnvelope {
    /// `[payload len u32][payload][next_index u32][next_preimage 32]`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.payload.len() + 4 + TOKEN_LEN);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.next_index.to_be_bytes());
        out.extend_from_slice(self.next_preimage.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let next_index = r.u32()?;
        let next_preimage = TagPreimage::from_bytes(r.array()?);
        r.finish()?;
        Ok(Self { payload, next_index, next_preimage })
    }
}

/// The in-person agreement: a shared key, first index and first preimage.
/// `writer` sends, `reader` receives.
pub fn establish_session<R: RngCore + CryptoRng>(
    writer: NodeId,
    reader: NodeId,
    board_size: u32,
    rng: &mut R,
) -> (SessionState, SessionState) {
    assert!(board_size >= 1, "board needs at least one cell");
    let key = SymmetricKey::random(rng);
    let next_index = rng.gen_range(0..board_size);
    let next_preimage = TagPreimage::random(rng);
    let w = SessionState { peer: reader, key, next_index, next_preimage, role: Role::Writer, board_size };
    let r = SessionState { peer: writer, role: Role::Reader, ..w.clone() };
    (w, r)
}

impl SessionState {
    /// Builds the write for the agreed current cell and the post-send state.
    ///
    /// The returned state has the ratcheted key and the fresh next pointer; the
    /// caller commits to it once the request is handed to routing.
    pub fn prepare_write<R: RngCore + CryptoRng>(
        &self,
        payload: &[u8],
        credit_token: CreditToken,
        rng: &mut R,
    ) -> (WriteRequest, SessionState) {
        self.write_at(self.next_index, payload, credit_token, rng)
    }

    /// Re-emits a write rejected as occupied, targeting `current_index` instead
    /// of the agreed cell. Encryption uses the pre-ratchet key of `self`, and a
    /// fresh next pointer is drawn. The reader only finds the message if it is
    /// told the new index out of band (see [`SessionState::adopt_index`]).
    pub fn retry_write<R: RngCore + CryptoRng>(
        &self,
        current_index: u32,
        payload: &[u8],
        credit_token: CreditToken,
        rng: &mut R,
    ) -> (WriteRequest, SessionState) {
        self.write_at(current_index, payload, credit_token, rng)
    }

    fn write_at<R: RngCore + CryptoRng>(
        &self,
        index: u32,
        payload: &[u8],
        credit_token: CreditToken,
        rng: &mut R,
    ) -> (WriteRequest, SessionState) {
        debug_assert_eq!(self.role, Role::Writer);
        let next_index = rng.gen_range(0..self.board_size);
        let next_preimage = TagPreimage::random(rng);
        let envelope = PlainEnvelope { payload: payload.to_vec(), next_index, next_preimage };
        let value = sym_encrypt(&self.key, &envelope.encode(), rng);
        // A relocated write keeps the agreed preimage; only the index moves.
        let request = WriteRequest { index, tag: commit(&self.next_preimage), value, credit_token };
        let next = SessionState {
            key: kdf(&self.key),
            next_index,
            next_preimage,
            ..self.clone()
        };
        (request, next)
    }

    /// Reader side: the request for the cell the next message should occupy.
    pub fn prepare_read(&self, return_route: Vec<u8>) -> ReadRequest {
        debug_assert_eq!(self.role, Role::Reader);
        ReadRequest { index: self.next_index, preimage: self.next_preimage, return_route }
    }

    /// Reader side: consume a board answer. `Null` leaves the state untouched.
    pub fn handle_response(&self, outcome: &ReadOutcome) -> Result<(Option<Vec<u8>>, SessionState), ProtocolError> {
        match outcome {
            ReadOutcome::Null => Ok((None, self.clone())),
            ReadOutcome::Value(value) => {
                let envelope = self.open(value)?;
                if envelope.next_index >= self.board_size {
                    return Err(ProtocolError::BadEnvelope(WireError::Malformed("next index outside the board")));
                }
                let next = SessionState {
                    key: kdf(&self.key),
                    next_index: envelope.next_index,
                    next_preimage: envelope.next_preimage,
                    ..self.clone()
                };
                Ok((Some(envelope.payload), next))
            }
        }
    }

    /// Decrypts a cell value under the current key without advancing.
    pub fn open(&self, value: &[u8]) -> Result<PlainEnvelope, ProtocolError> {
        let plain = sym_decrypt(&self.key, value).map_err(|_| ProtocolError::Desync)?;
        Ok(PlainEnvelope::decode(&plain)?)
    }

    /// Out-of-band resynchronisation after a relocated write.
    pub fn adopt_index(&mut self, index: u32) {
        self.next_index = index;
    }
}

/// Writes to `board`, relocating on occupied cells.
///
/// The first attempt targets the agreed cell; later attempts walk a random
/// permutation of the remaining cells, so a board with any free cell accepts the
/// message within `n` attempts. Returns the index used and the post-send state.
pub fn write_with_retry<R: RngCore + CryptoRng>(
    board: &mut Board,
    state: &SessionState,
    payload: &[u8],
    credit_token: CreditToken,
    rng: &mut R,
) -> Result<(u32, SessionState), ProtocolError> {
    let (req, next) = state.prepare_write(payload, credit_token, rng);
    match board.write(&req) {
        Ok(()) => return Ok((req.index, next)),
        Err(WriteError::Occupied) => {}
        Err(e) => return Err(ProtocolError::Refused(e)),
    }
    let mut order: Vec<u32> = (0..state.board_size).filter(|&i| i != state.next_index).collect();
    order.shuffle(rng);
    let mut attempts = 1;
    for index in order {
        attempts += 1;
        let (req, next) = state.retry_write(index, payload, credit_token, rng);
        match board.write(&req) {
            Ok(()) => return Ok((index, next)),
            Err(WriteError::Occupied) => continue,
            Err(e) => return Err(ProtocolError::Refused(e)),
        }
    }
    Err(ProtocolError::Exhausted { attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::write_request;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(n: u32, seed: u64) -> (Board, CreditToken, SessionState, SessionState, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut board = Board::new(n as usize).unwrap();
        let token = CreditToken::random(&mut rng);
        board.register(token, 10_000).unwrap();
        let (w, r) = establish_session(NodeId(1), NodeId(2), n, &mut rng);
        (board, token, w, r, rng)
    }

    #[test]
    fn establish_is_symmetric() {
        let (_, _, w, r, _) = fixture(100, 1);
        assert_eq!(w.key, r.key);
        assert_eq!(w.next_index, r.next_index);
        assert_eq!(w.next_preimage, r.next_preimage);
        assert!(w.next_index < 100);
        assert_eq!((w.role, r.role), (Role::Writer, Role::Reader));
        assert_eq!((w.peer, r.peer), (NodeId(2), NodeId(1)));
    }

    #[test]
    fn prepare_write_seals_envelope_and_ratchets() {
        let (_, token, w, r, mut rng) = fixture(100, 2);
        let (req, w2) = w.prepare_write(b"hello", token, &mut rng);
        assert_eq!(req.index, r.next_index);
        assert_eq!(req.tag, commit(&r.next_preimage));
        assert_ne!(w2.key, w.key);
        let env = PlainEnvelope::decode(&sym_decrypt(&w.key, &req.value).unwrap()).unwrap();
        assert_eq!(env.payload, b"hello");
        assert_eq!((env.next_index, env.next_preimage), (w2.next_index, w2.next_preimage));
    }

    #[test]
    fn read_is_idempotent_until_answered() {
        let (mut board, token, w, r, mut rng) = fixture(100, 3);
        let a = r.prepare_read(vec![]);
        assert_eq!(a, r.prepare_read(vec![]));
        assert_eq!((a.index, a.preimage), (w.next_index, w.next_preimage));
        let (req, w2) = w.prepare_write(b"one", token, &mut rng);
        board.write(&req).unwrap();
        let (payload, r2) = r.handle_response(&board.read(&a)).unwrap();
        assert_eq!(payload.as_deref(), Some(&b"one"[..]));
        let b = r2.prepare_read(vec![]);
        assert_eq!((b.index, b.preimage), (w2.next_index, w2.next_preimage));
    }

    #[test]
    fn three_message_chain_in_order() {
        let (mut board, token, mut w, mut r, mut rng) = fixture(100, 4);
        let msgs: [&[u8]; 3] = [b"a", b"bb", b"ccc"];
        for m in msgs {
            let (req, next) = w.prepare_write(m, token, &mut rng);
            board.write(&req).unwrap();
            w = next;
        }
        let mut got = Vec::new();
        for _ in 0..3 {
            let (p, next) = r.handle_response(&board.read(&r.prepare_read(vec![]))).unwrap();
            got.push(p.unwrap());
            r = next;
        }
        assert_eq!(got, msgs.iter().map(|m| m.to_vec()).collect::<Vec<_>>());
        assert_eq!(board.occupancy(), 0);
        assert_eq!(w.key, r.key);
    }

    #[test]
    fn null_leaves_state_untouched() {
        let (_, _, _, r, _) = fixture(100, 5);
        let (p, r2) = r.handle_response(&ReadOutcome::Null).unwrap();
        assert!(p.is_none());
        assert_eq!(r2, r);
    }

    #[test]
    fn ratcheted_key_mismatch_is_desync() {
        let (_, token, w, r, mut rng) = fixture(100, 6);
        let ahead = SessionState { key: kdf(&w.key), ..w.clone() };
        let (req, _) = ahead.prepare_write(b"x", token, &mut rng);
        assert_eq!(r.handle_response(&ReadOutcome::Value(req.value)), Err(ProtocolError::Desync));
    }

    #[test]
    fn envelope_with_out_of_range_pointer_is_rejected() {
        let (_, _, w, r, mut rng) = fixture(10, 7);
        let env = PlainEnvelope { payload: vec![], next_index: 10, next_preimage: w.next_preimage };
        let value = sym_encrypt(&w.key, &env.encode(), &mut rng);
        assert!(matches!(r.handle_response(&ReadOutcome::Value(value)), Err(ProtocolError::BadEnvelope(_))));
    }

    #[test]
    fn retry_finds_the_single_free_cell() {
        for seed in 0..20 {
            let (mut board, token, w, mut r, mut rng) = fixture(100, 100 + seed);
            let free = rng.gen_range(0..100u32);
            for i in (0..100).filter(|&i| i != free) {
                let p = TagPreimage::random(&mut rng);
                board.write(&write_request(i, &p, vec![], token)).unwrap();
            }
            let payload = b"squeezed in".to_vec();
            let (index, _) = write_with_retry(&mut board, &w, &payload, token, &mut rng).unwrap();
            assert_eq!(index, free);
            r.adopt_index(index);
            let (got, _) = r.handle_response(&board.read(&r.prepare_read(vec![]))).unwrap();
            assert_eq!(got.unwrap(), payload);
        }
    }

    #[test]
    fn retry_exhausts_on_full_board() {
        let (mut board, token, w, _, mut rng) = fixture(100, 8);
        for i in 0..100 {
            let p = TagPreimage::random(&mut rng);
            board.write(&write_request(i, &p, vec![], token)).unwrap();
        }
        let before = board.state_digest();
        assert_eq!(
            write_with_retry(&mut board, &w, b"x", token, &mut rng),
            Err(ProtocolError::Exhausted { attempts: 100 })
        );
        assert_eq!(board.state_digest(), before);
    }

    #[test]
    fn retry_preserves_payload() {
        let (_, token, w, _, mut rng) = fixture(100, 9);
        let (req, _) = w.retry_write(42, b"same bytes", token, &mut rng);
        assert_eq!(req.index, 42);
        let env = PlainEnvelope::decode(&sym_decrypt(&w.key, &req.value).unwrap()).unwrap();
        assert_eq!(env.payload, b"same bytes");
    }

    #[test]
    fn distinct_seeds_give_distinct_sessions() {
        let mut keys = std::collections::HashSet::new();
        let mut preimages = std::collections::HashSet::new();
        for seed in 0..1_000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, _) = establish_session(NodeId(1), NodeId(2), 100, &mut rng);
            assert!(keys.insert(w.key));
            assert!(preimages.insert(w.next_preimage));
        }
    }
}
