//! Mixer paths, onion layering and the mixer's shuffle buffer.
//!
//! A layer's plaintext is `[next hop u32][body len u32][body]`, sealed to one
//! mixer with [`layer_encrypt`]. Layers are built innermost first and peeled
//! outermost first, so each mixer learns only the hop after it.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};

use crate::crypto::{layer_decrypt, layer_encrypt, MixPublicKey, MixSecretKey};
use crate::wire::{Reader, WireError};
use crate::NodeId;

pub const MAX_MIXERS: usize = 3;

pub type Keyring = BTreeMap<NodeId, MixPublicKey>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MixError {
    #[error("no public key for mixer {0}")]
    MissingKey(NodeId),
    #[error("packet addressed to {addressed}, not {me}")]
    NotAddressed { addressed: NodeId, me: NodeId },
    #[error("layer failed to open")]
    PeelFailed,
    #[error("layer header malformed: {0}")]
    BadLayer(#[from] WireError),
    #[error("read request carries no reply route")]
    NoReplyRoute,
}

/// Mixers to traverse, in order, then the terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixPath {
    pub mixers: Vec<NodeId>,
    pub terminal: NodeId,
}

impl MixPath {
    pub fn direct(terminal: NodeId) -> Self {
        Self { mixers: Vec::new(), terminal }
    }

    pub fn mixer_count(&self) -> usize {
        self.mixers.len()
    }

    /// Mixers followed by the terminal.
    pub fn hops(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.mixers.iter().copied().chain(std::iter::once(self.terminal))
    }
}

/// Draws a path with a uniform mixer count in `0..=max_mixers`.
pub fn build_path<R: Rng + ?Sized>(rng: &mut R, pool: &[NodeId], terminal: NodeId, max_mixers: usize) -> MixPath {
    build_path_in(rng, pool, terminal, 0..=max_mixers)
}

/// Draws a path whose mixer count is uniform over `counts`. If the draw exceeds
/// the usable pool, the count is redrawn over what the pool can supply.
pub fn build_path_in<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &[NodeId],
    terminal: NodeId,
    counts: RangeInclusive<usize>,
) -> MixPath {
    let usable: Vec<NodeId> = pool.iter().copied().filter(|&m| m != terminal).collect();
    let mut k = rng.gen_range(counts.clone());
    if k > usable.len() {
        let lo = (*counts.start()).min(usable.len());
        k = rng.gen_range(lo..=usable.len());
    }
    let mixers = usable.choose_multiple(rng, k).copied().collect();
    MixPath { mixers, terminal }
}

/// A routed packet. `body` is layered ciphertext, or the bare inner bytes once
/// every layer is gone. `attached` rides along unencrypted by the layers and is
/// only used by strict-mode replies, whose layers are prepared by the reader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnionPacket {
    pub next_hop: NodeId,
    pub body: Vec<u8>,
    pub attached: Vec<u8>,
}

impl OnionPacket {
    /// Bytes on the wire, using the layer header framing.
    pub fn wire_size(&self) -> usize {
        8 + self.body.len() + self.attached.len()
    }

    /// Inner bytes delivered to the terminal.
    pub fn into_inner(self) -> Vec<u8> {
        if self.attached.is_empty() {
            self.body
        } else {
            self.attached
        }
    }
}

fn encode_layer(next_hop: NodeId, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&next_hop.0.to_be_bytes());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

fn decode_layer(plain: &[u8]) -> Result<(NodeId, Vec<u8>), WireError> {
    let mut r = Reader::new(plain);
    let hop = NodeId(r.u32()?);
    let len = r.u32()? as usize;
    let body = r.take(len)?.to_vec();
    r.finish()?;
    Ok((hop, body))
}

fn wrap_layers<R: RngCore + CryptoRng>(
    path: &MixPath,
    inner: &[u8],
    keyring: &Keyring,
    rng: &mut R,
) -> Result<(NodeId, Vec<u8>), MixError> {
    let mut body = inner.to_vec();
    let mut next = path.terminal;
    for &mixer in path.mixers.iter().rev() {
        let pk = keyring.get(&mixer).ok_or(MixError::MissingKey(mixer))?;
        body = layer_encrypt(pk, &encode_layer(next, &body), rng);
        next = mixer;
    }
    Ok((next, body))
}

pub fn onion_wrap<R: RngCore + CryptoRng>(
    path: &MixPath,
    inner: &[u8],
    keyring: &Keyring,
    rng: &mut R,
) -> Result<OnionPacket, MixError> {
    let (next_hop, body) = wrap_layers(path, inner, keyring, rng)?;
    Ok(OnionPacket { next_hop, body, attached: Vec::new() })
}

/// Removes one layer with `sk`.
pub fn peel(packet: &OnionPacket, sk: &MixSecretKey) -> Result<OnionPacket, MixError> {
    let plain = layer_decrypt(sk, &packet.body).map_err(|_| MixError::PeelFailed)?;
    let (next_hop, body) = decode_layer(&plain)?;
    Ok(OnionPacket { next_hop, body, attached: packet.attached.clone() })
}

/// Reply material for strict mode: `[first hop u32][layered header]`. The
/// innermost layer addresses the reader and carries an empty body.
pub fn build_reply_route<R: RngCore + CryptoRng>(
    path: &MixPath,
    keyring: &Keyring,
    rng: &mut R,
) -> Result<Vec<u8>, MixError> {
    let (first, header) = wrap_layers(path, &[], keyring, rng)?;
    let mut out = Vec::with_capacity(4 + header.len());
    out.extend_from_slice(&first.0.to_be_bytes());
    out.extend_from_slice(&header);
    Ok(out)
}

/// How the board addresses the answer to a successful read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplyMode {
    /// The board learns the reader from the simulation envelope and draws a
    /// fresh mixer path to it.
    #[default]
    BoardPath,
    /// The board only uses the reply route inside the request and never sees
    /// the reader.
    Strict,
}

/// The board's side of reply routing.
#[derive(Debug, Clone, Copy)]
pub struct ResponseRouter<'a> {
    pub mode: ReplyMode,
    pub pool: &'a [NodeId],
    pub keyring: &'a Keyring,
    pub max_mixers: usize,
}

impl ResponseRouter<'_> {
    /// Builds the packet carrying `response` back toward the reader. `reader` is
    /// only consulted in [`ReplyMode::BoardPath`]. Returns the drawn path when
    /// the board chose one.
    pub fn route<R: RngCore + CryptoRng>(
        &self,
        return_route: &[u8],
        reader: Option<NodeId>,
        response: &[u8],
        rng: &mut R,
    ) -> Result<(OnionPacket, Option<MixPath>), MixError> {
        match self.mode {
            ReplyMode::BoardPath => {
                let reader = reader.ok_or(MixError::NoReplyRoute)?;
                let path = build_path(rng, self.pool, reader, self.max_mixers);
                let packet = onion_wrap(&path, response, self.keyring, rng)?;
                Ok((packet, Some(path)))
            }
            ReplyMode::Strict => {
                if return_route.len() < 4 {
                    return Err(MixError::NoReplyRoute);
                }
                let (first, header) = return_route.split_at(4);
                let first = NodeId(u32::from_be_bytes(first.try_into().expect("4 bytes")));
                let packet = OnionPacket { next_hop: first, body: header.to_vec(), attached: response.to_vec() };
                Ok((packet, None))
            }
        }
    }
}

/// A queued packet plus whatever bookkeeping the owner attaches to it.
#[derive(Debug, Clone)]
pub struct Buffered<T = ()> {
    pub packet: OnionPacket,
    pub arrived_at: f64,
    pub meta: T,
}

/// A mixer's pending queue. Packets are peeled on arrival and released in a
/// random order.
#[derive(Debug, Clone)]
pub struct MixerBuffer<T = ()> {
    pub pending: Vec<Buffered<T>>,
    /// Minimum queue length before anything is released. 0 and 1 both mean
    /// "release on every contact".
    pub batch_threshold: usize,
    pub dropped: u64,
}

impl<T> Default for MixerBuffer<T> {
    fn default() -> Self {
        Self { pending: Vec::new(), batch_threshold: 0, dropped: 0 }
    }
}

impl<T> MixerBuffer<T> {
    pub fn new(batch_threshold: usize) -> Self {
        Self { batch_threshold, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Checks the address, peels one layer and queues the result. A packet that
    /// fails to peel is discarded and counted in `dropped`.
    pub fn ingest(&mut self, me: NodeId, packet: OnionPacket, meta: T, sk: &MixSecretKey, now: f64) -> Result<(), MixError> {
        if packet.next_hop != me {
            return Err(MixError::NotAddressed { addressed: packet.next_hop, me });
        }
        match peel(&packet, sk) {
            Ok(peeled) => {
                self.pending.push(Buffered { packet: peeled, arrived_at: now, meta });
                Ok(())
            }
            Err(e) => {
                self.dropped += 1;
                Err(e)
            }
        }
    }

    /// Shuffles the queue and releases every packet whose next hop is reachable,
    /// in shuffled order. The rest stay queued.
    pub fn flush<R, F>(&mut self, rng: &mut R, reachable: F) -> Vec<(NodeId, OnionPacket, T)>
    where
        R: Rng + ?Sized,
        F: Fn(NodeId) -> bool,
    {
        if self.pending.is_empty() || self.pending.len() < self.batch_threshold {
            return Vec::new();
        }
        self.pending.shuffle(rng);
        let (out, keep): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|b| reachable(b.packet.next_hop));
        self.pending = keep;
        out.into_iter().map(|b| (b.packet.next_hop, b.packet, b.meta)).collect()
    }
}
