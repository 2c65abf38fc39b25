//! The bulletin board: an `n`-cell dead drop of (tag commitment, ciphertext)
//! pairs with read-and-delete semantics and per-capability write credits.
//!
//! Requests carry no node identity. Writes are authorised by an opaque
//! [`CreditToken`]; reads by knowledge of a cell's tag preimage.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::crypto::{commit, verify, TagCommitment, TagPreimage, TOKEN_LEN};
use crate::wire::{Reader, WireError};

pub const KIND_WRITE: u8 = 0x01;
pub const KIND_READ: u8 = 0x02;
pub const KIND_RESPONSE: u8 = 0x03;

pub const CREDIT_TOKEN_LEN: usize = 16;

/// Opaque write capability handed out at registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CreditToken(pub [u8; CREDIT_TOKEN_LEN]);

impl CreditToken {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; CREDIT_TOKEN_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteRequest {
    pub index: u32,
    pub tag: TagCommitment,
    pub value: Vec<u8>,
    pub credit_token: CreditToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRequest {
    pub index: u32,
    pub preimage: TagPreimage,
    /// Reply-route material; empty unless the reader asks for strict reply routing.
    pub return_route: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoardRequest {
    Write(WriteRequest),
    Read(ReadRequest),
}

/// What the board answers to a read. `Null` is returned both for an empty cell
/// and for a wrong preimage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadOutcome {
    Value(Vec<u8>),
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum WriteError {
    #[error("cell index out of range")]
    OutOfRange,
    #[error("cell already occupied")]
    Occupied,
    #[error("credit token unknown or exhausted")]
    NoCredit,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoardError {
    #[error("board must have at least one cell")]
    Empty,
    #[error("credit token already registered")]
    DuplicateToken,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cell {
    slot: Option<(TagCommitment, Vec<u8>)>,
}

impl Cell {
    pub fn is_occupied(&self) -> bool {
        self.slot.is_some()
    }

    pub fn tag(&self) -> Option<&TagCommitment> {
        self.slot.as_ref().map(|(t, _)| t)
    }
}

#[derive(Debug, Clone)]
pub struct Board {
    cells: Vec<Cell>,
    registry: BTreeMap<CreditToken, u32>,
    occupied: usize,
}

impl Board {
    pub fn new(cells: usize) -> Result<Self, BoardError> {
        if cells == 0 {
            return Err(BoardError::Empty);
        }
        Ok(Self {
            cells: vec![Cell::default(); cells],
            registry: BTreeMap::new(),
            occupied: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, index: usize) -> Option<&Cell> {
        self.cells.get(index)
    }

    pub fn register(&mut self, token: CreditToken, credits: u32) -> Result<(), BoardError> {
        if self.registry.contains_key(&token) {
            return Err(BoardError::DuplicateToken);
        }
        self.registry.insert(token, credits);
        Ok(())
    }

    pub fn remaining(&self, token: &CreditToken) -> Option<u32> {
        self.registry.get(token).copied()
    }

    pub fn write(&mut self, req: &WriteRequest) -> Result<(), WriteError> {
        let index = req.index as usize;
        if index >= self.cells.len() {
            return Err(WriteError::OutOfRange);
        }
        let credit = match self.registry.get_mut(&req.credit_token) {
            Some(c) if *c > 0 => c,
            _ => return Err(WriteError::NoCredit),
        };
        let cell = &mut self.cells[index];
        if cell.is_occupied() {
            return Err(WriteError::Occupied);
        }
        *credit -= 1;
        cell.slot = Some((req.tag, req.value.clone()));
        self.occupied += 1;
        Ok(())
    }

    pub fn read(&mut self, req: &ReadRequest) -> ReadOutcome {
        let Some(cell) = self.cells.get_mut(req.index as usize) else {
            return ReadOutcome::Null;
        };
        match &cell.slot {
            Some((tag, _)) if verify(&req.preimage, tag) => {
                let (_, value) = cell.slot.take().expect("checked occupied");
                self.occupied -= 1;
                ReadOutcome::Value(value)
            }
            _ => ReadOutcome::Null,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.occupied
    }

    /// Digest over every cell and credit balance.
    pub fn state_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for cell in &self.cells {
            match &cell.slot {
                None => h.update([0u8]),
                Some((tag, value)) => {
                    h.update([1u8]);
                    h.update(tag.as_bytes());
                    h.update((value.len() as u64).to_be_bytes());
                    h.update(value);
                }
            }
        }
        for (token, credits) in &self.registry {
            h.update(token.0);
            h.update(credits.to_be_bytes());
        }
        h.finalize().into()
    }
}

/// Convenience used by tests and the in-memory harness.
pub fn write_request(index: u32, preimage: &TagPreimage, value: Vec<u8>, token: CreditToken) -> WriteRequest {
    WriteRequest { index, tag: commit(preimage), value, credit_token: token }
}

impl WriteRequest {
    /// `[0x01][index u32][tag 32][credit token 16][value len u32][value]`
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 + TOKEN_LEN + CREDIT_TOKEN_LEN + 4 + self.value.len());
        out.push(KIND_WRITE);
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(self.tag.as_bytes());
        out.extend_from_slice(&self.credit_token.0);
        out.extend_from_slice(&(self.value.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.value);
        out
    }
}

impl ReadRequest {
    /// `[0x02][index u32][preimage 32][route len u16][route]`
    pub fn encode(&self) -> Vec<u8> {
        assert!(self.return_route.len() <= u16::MAX as usize, "return route too long");
        let mut out = Vec::with_capacity(1 + 4 + TOKEN_LEN + 2 + self.return_route.len());
        out.push(KIND_READ);
        out.extend_from_slice(&self.index.to_be_bytes());
        out.extend_from_slice(self.preimage.as_bytes());
        out.extend_from_slice(&(self.return_route.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.return_route);
        out
    }
}

impl BoardRequest {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            BoardRequest::Write(w) => w.encode(),
            BoardRequest::Read(r) => r.encode(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let req = match r.u8()? {
            KIND_WRITE => {
                let index = r.u32()?;
                let tag = TagCommitment::from_bytes(r.array()?);
                let credit_token = CreditToken(r.array()?);
                let len = r.u32()? as usize;
                let value = r.take(len)?.to_vec();
                BoardRequest::Write(WriteRequest { index, tag, value, credit_token })
            }
            KIND_READ => {
                let index = r.u32()?;
                let preimage = TagPreimage::from_bytes(r.array()?);
                let len = r.u16()? as usize;
                let return_route = r.take(len)?.to_vec();
                BoardRequest::Read(ReadRequest { index, preimage, return_route })
            }
            other => return Err(WireError::UnknownKind(other)),
        };
        r.finish()?;
        Ok(req)
    }
}

impl ReadOutcome {
    /// `[0x03][status: 0 Null, 1 Value][len u32][value]`
    pub fn encode(&self) -> Vec<u8> {
        let (status, value): (u8, &[u8]) = match self {
            ReadOutcome::Null => (0, &[]),
            ReadOutcome::Value(v) => (1, v),
        };
        let mut out = Vec::with_capacity(6 + value.len());
        out.push(KIND_RESPONSE);
        out.push(status);
        out.extend_from_slice(&(value.len() as u32).to_be_bytes());
        out.extend_from_slice(value);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let kind = r.u8()?;
        if kind != KIND_RESPONSE {
            return Err(WireError::UnknownKind(kind));
        }
        let status = r.u8()?;
        let len = r.u32()? as usize;
        let value = r.take(len)?.to_vec();
        r.finish()?;
        match status {
            0 if value.is_empty() => Ok(ReadOutcome::Null),
            0 => Err(WireError::Malformed("null response with a value")),
            1 => Ok(ReadOutcome::Value(value)),
            _ => Err(WireError::Malformed("unknown response status")),
        }
    }
}
