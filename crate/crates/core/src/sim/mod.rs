//! Fixed-time-step opportunistic network world.
//!
//! Each [`World::step`] handles one instant, in order: recompute contacts
//! (aborting transfers on lost ones), progress transfers and handle arrivals
//! (including board processing), let mixers flush and nodes forward, run the
//! traffic generator, then move nodes and advance the clock. Every random
//! draw comes from per-purpose ChaCha streams derived from the seed, so a
//! (config, seed) pair replays exactly.

pub mod contact;
pub mod ledger;
pub mod mobility;
pub mod trace;
pub mod traffic;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::board::{Board, BoardRequest, CreditToken, ReadOutcome, WriteError};
use crate::config::{ConfigError, RoutingMode, ScenarioConfig};
use crate::crypto::MixKeyPair;
use crate::metrics::{compute_report, Kind, MetricsLog, Report};
use crate::mix::{
    build_path, build_path_in, build_reply_route, onion_wrap, Keyring, MixError, MixPath, MixerBuffer, OnionPacket,
    ReplyMode, ResponseRouter,
};
use crate::protocol::establish_session;
use crate::NodeId;

use contact::{detect_contacts, transfer_steps, ContactScript, Link, Transfer};
use ledger::{Conservation, DropReason, Ledger};
use mobility::{move_node, Bounds, Motion, Point, SpeedRange};
use trace::Trace;
use traffic::Conversation;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Board,
    Mixer,
    Normal,
}

/// Simulation envelope around a packet. Nothing here is visible to the board
/// except `reply_to`, and only in board-path reply mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MsgMeta {
    pub uid: u64,
    pub kind: Kind,
    pub created_at: f64,
    pub mixers_used: u8,
    /// Layers removed so far; `(uid, stage)` names one hop of the journey.
    pub stage: u8,
    pub reply_to: Option<NodeId>,
    /// Mixers in the reader-built reply route (strict mode, metrics only).
    pub reply_mixers: u8,
}

impl MsgMeta {
    pub fn new(uid: u64, kind: Kind, created_at: f64, mixers_used: u8) -> Self {
        Self { uid, kind, created_at, mixers_used, stage: 0, reply_to: None, reply_mixers: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMessage {
    pub meta: MsgMeta,
    pub packet: OnionPacket,
}

impl SimMessage {
    pub fn size(&self) -> usize {
        self.packet.wire_size()
    }

    fn key(&self) -> (u64, u8) {
        (self.meta.uid, self.meta.stage)
    }
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub id: NodeId,
    pub role: NodeRole,
    pub motion: Motion,
    pub range: f64,
    pub bitrate: f64,
    pub buffer: Vec<SimMessage>,
    pub mixer: Option<MixerBuffer<MsgMeta>>,
    seen: HashSet<(u64, u8)>,
}

impl SimNode {
    pub fn position(&self) -> Point {
        self.motion.position
    }

    fn held(&self) -> usize {
        self.buffer.len() + self.mixer.as_ref().map_or(0, MixerBuffer::len)
    }
}

/// One request as the board saw it. `uid` is harness bookkeeping; the rest is
/// exactly what reached the board.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardObservation {
    pub time: f64,
    pub uid: u64,
    pub link_from: NodeId,
    pub request: Vec<u8>,
    pub reply_to: Option<NodeId>,
}

#[derive(Debug, Clone)]
enum ContactSource {
    Mobility,
    Scripted(ContactScript),
}

const STREAM_SETUP: u64 = 0;
const STREAM_MOBILITY: u64 = 1;
const STREAM_TRAFFIC: u64 = 2;
const STREAM_MIX: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct World {
    cfg: ScenarioConfig,
    step_index: u64,
    bounds: Bounds,
    speeds: SpeedRange,
    nodes: Vec<SimNode>,
    contacts: ContactSource,
    links: BTreeMap<(NodeId, NodeId), Link>,
    board: Board,
    board_seen: HashSet<u64>,
    board_log: Option<Vec<BoardObservation>>,
    keys: BTreeMap<NodeId, MixKeyPair>,
    keyring: Keyring,
    mixer_pool: Vec<NodeId>,
    conversations: Vec<Conversation>,
    metrics: MetricsLog,
    ledger: Ledger,
    next_uid: u64,
    desyncs: u64,
    trace: Option<Trace>,
    setup_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
    traffic_rng: ChaCha8Rng,
    mix_rng: ChaCha8Rng,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub conservation: Conservation,
    pub desyncs: u64,
    pub payload_mismatches: u64,
    pub board_occupancy: usize,
    pub trace: Option<String>,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        Self::build(cfg, ContactSource::Mobility)
    }

    /// A world whose contacts follow `script` instead of node movement.
    pub fn with_script(cfg: ScenarioConfig, script: ContactScript) -> Result<Self, SimError> {
        Self::build(cfg, ContactSource::Scripted(script))
    }

    fn build(cfg: ScenarioConfig, contacts: ContactSource) -> Result<Self, SimError> {
        cfg.validate()?;
        let seed = cfg.world.seed;
        let mut setup_rng = stream(seed, STREAM_SETUP);
        let bounds = Bounds { width: cfg.world.width, height: cfg.world.height };
        let (min, max) = cfg.nodes.speed_range_mps();
        let speeds = SpeedRange { min, max };

        let mut nodes = Vec::with_capacity(cfg.nodes.count);
        let mut keys = BTreeMap::new();
        for i in 0..cfg.nodes.count {
            let id = NodeId(i as u32);
            let role = match i {
                0 => NodeRole::Board,
                i if i <= cfg.nodes.mixers => NodeRole::Mixer,
                _ => NodeRole::Normal,
            };
            if role == NodeRole::Mixer {
                keys.insert(id, MixKeyPair::generate(id, &mut setup_rng));
            }
            nodes.push(SimNode {
                id,
                role,
                motion: Motion::spawn(&mut setup_rng, bounds, speeds),
                range: cfg.nodes.range,
                bitrate: cfg.nodes.bitrate,
                buffer: Vec::new(),
                mixer: (role == NodeRole::Mixer).then(|| MixerBuffer::new(cfg.mix.batch_threshold)),
                seen: HashSet::new(),
            });
        }
        let keyring: Keyring = keys.iter().map(|(&id, k)| (id, k.public)).collect();
        let mixer_pool: Vec<NodeId> = keys.keys().copied().collect();

        let mut board = Board::new(cfg.board.cells).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let normals: Vec<NodeId> = nodes.iter().filter(|n| n.role == NodeRole::Normal).map(|n| n.id).collect();
        let mut conversations = Vec::with_capacity(cfg.traffic.pairs);
        for p in 0..cfg.traffic.pairs {
            let writer = normals[(2 * p) % normals.len()];
            let reader = normals[(2 * p + 1) % normals.len()];
            let (w, r) = establish_session(writer, reader, cfg.board.cells as u32, &mut setup_rng);
            let token = CreditToken::random(&mut setup_rng);
            board
                .register(token, cfg.board.credits)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            conversations.push(Conversation::new(w, r, token, cfg.traffic.start));
        }

        Ok(Self {
            step_index: 0,
            bounds,
            speeds,
            nodes,
            contacts,
            links: BTreeMap::new(),
            board,
            board_seen: HashSet::new(),
            board_log: None,
            keys,
            keyring,
            mixer_pool,
            conversations,
            metrics: MetricsLog::new(),
            ledger: Ledger::default(),
            next_uid: 0,
            desyncs: 0,
            trace: None,
            mobility_rng: stream(seed, STREAM_MOBILITY),
            traffic_rng: stream(seed, STREAM_TRAFFIC),
            mix_rng: stream(seed, STREAM_MIX),
            setup_rng,
            cfg,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Trace::new);
    }

    pub fn enable_board_log(&mut self) {
        self.board_log.get_or_insert_with(Vec::new);
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.step_index as f64 * self.cfg.world.time_step
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    /// Places a node; used by tests that need exact geometry.
    pub fn place(&mut self, id: NodeId, at: Point) {
        let m = &mut self.nodes[id.0 as usize].motion;
        m.position = at;
        m.waypoint = at;
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn board_log(&self) -> Option<&[BoardObservation]> {
        self.board_log.as_deref()
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn mixer_pool(&self) -> &[NodeId] {
        &self.mixer_pool
    }

    pub fn keyring(&self) -> &Keyring {
        &self.keyring
    }

    pub fn desyncs(&self) -> u64 {
        self.desyncs
    }

    pub fn contacts(&self) -> Vec<(NodeId, NodeId)> {
        self.links.keys().copied().collect()
    }

    /// Registers an extra write capability on the board.
    pub fn register_token(&mut self, credits: u32) -> CreditToken {
        let token = CreditToken::random(&mut self.setup_rng);
        self.board.register(token, credits).expect("fresh random token");
        token
    }

    /// Hands `request` to `origin` for delivery over `path`, which must end at
    /// the board. Returns the message uid.
    pub fn send_request(
        &mut self,
        origin: NodeId,
        request: &BoardRequest,
        path: &MixPath,
        reply_to: Option<NodeId>,
    ) -> Result<u64, SimError> {
        if origin.0 as usize >= self.nodes.len() {
            return Err(SimError::NoSuchNode(origin));
        }
        let kind = match request {
            BoardRequest::Write(_) => Kind::Write,
            BoardRequest::Read(_) => Kind::Read,
        };
        let packet = onion_wrap(path, &request.encode(), &self.keyring, &mut self.mix_rng)?;
        let mut meta = self.new_meta(kind, path.mixer_count() as u8, self.now());
        meta.reply_to = reply_to;
        let uid = meta.uid;
        self.create(origin, SimMessage { meta, packet }, self.now());
        Ok(uid)
    }

    fn new_meta(&mut self, kind: Kind, mixers: u8, created_at: f64) -> MsgMeta {
        let uid = self.next_uid;
        self.next_uid += 1;
        MsgMeta::new(uid, kind, created_at, mixers)
    }

    fn create(&mut self, at: NodeId, msg: SimMessage, metrics_created_at: f64) {
        let m = &msg.meta;
        self.ledger.created(m.uid, m.kind);
        self.metrics
            .record_created(m.uid, m.kind, m.mixers_used, metrics_created_at)
            .expect("fresh uid");
        let now = self.now();
        if let Some(t) = self.trace.as_mut() {
            t.event(now, "create", at, m.uid, &format!("{} mixers={}", m.kind, m.mixers_used));
        }
        let node = &mut self.nodes[at.0 as usize];
        node.seen.insert(msg.key());
        node.buffer.push(msg);
    }

    fn deliver(&mut self, uid: u64, node: NodeId) {
        let now = self.now();
        self.ledger.delivered(uid);
        self.metrics.record_delivered(uid, now).expect("single delivery per uid");
        if let Some(t) = self.trace.as_mut() {
            t.event(now, "deliver", node, uid, "");
        }
    }

    fn drop_msg(&mut self, uid: u64, node: NodeId, reason: DropReason) {
        self.ledger.dropped(uid, reason);
        let now = self.now();
        if let Some(t) = self.trace.as_mut() {
            t.event(now, "drop", node, uid, &format!("{reason:?}"));
        }
    }

    pub fn run(&mut self) {
        let steps = self.cfg.steps();
        while self.step_index < steps {
            self.step();
        }
    }

    /// Steps until every instant before `t` has been processed.
    pub fn run_until(&mut self, t: f64) {
        let target = (t / self.cfg.world.time_step).round() as u64;
        while self.step_index < target {
            self.step();
        }
    }

    /// Processes the instant `now()` and then advances the clock by one step.
    pub fn step(&mut self) {
        self.update_contacts();
        self.progress_transfers();
        self.forward();
        self.generate_traffic();
        self.move_nodes();
        self.step_index += 1;
    }

    fn move_nodes(&mut self) {
        if matches!(self.contacts, ContactSource::Scripted(_)) {
            return;
        }
        let dt = self.cfg.world.time_step;
        let stationary_board = self.cfg.board.stationary;
        for node in &mut self.nodes {
            if node.role == NodeRole::Board && stationary_board {
                continue;
            }
            move_node(&mut node.motion, &mut self.mobility_rng, self.bounds, self.speeds, dt);
        }
    }

    fn update_contacts(&mut self) {
        let now = self.now();
        let current = match &self.contacts {
            ContactSource::Mobility => {
                let view: Vec<_> = self.nodes.iter().map(|n| (n.id, n.position(), n.range)).collect();
                detect_contacts(&view)
            }
            ContactSource::Scripted(script) => script
                .active_at(now)
                .into_iter()
                .filter(|(a, b)| (a.0 as usize) < self.nodes.len() && (b.0 as usize) < self.nodes.len())
                .collect(),
        };
        let current_set: BTreeSet<_> = current.iter().copied().collect();
        let lost: Vec<_> = self.links.keys().filter(|k| !current_set.contains(k)).copied().collect();
        for key in lost {
            let link = self.links.remove(&key).expect("listed");
            for t in link.abort() {
                if let Some(tr) = self.trace.as_mut() {
                    tr.event(now, "abort", t.from, t.msg.meta.uid, &format!("to={}", t.to));
                }
                if !t.replica {
                    self.return_to_sender(t.from, t.msg);
                }
            }
        }
        for key in current {
            self.links.entry(key).or_insert_with(|| Link::new(now));
        }
    }

    fn return_to_sender(&mut self, from: NodeId, msg: SimMessage) {
        let direct = self.cfg.routing == RoutingMode::Direct;
        let now = self.now();
        let node = &mut self.nodes[from.0 as usize];
        match node.mixer.as_mut() {
            Some(buf) if direct => buf.pending.push(crate::mix::Buffered {
                packet: msg.packet,
                arrived_at: now,
                meta: msg.meta,
            }),
            _ => node.buffer.push(msg),
        }
    }

    fn progress_transfers(&mut self) {
        let mut done = Vec::new();
        for link in self.links.values_mut() {
            if let (contact::TransferState::Done, Some(t)) = link.progress() {
                done.push(t);
            }
        }
        for t in done {
            self.arrive(t);
        }
        self.start_idle_links();
    }

    fn start_idle_links(&mut self) {
        let dt = self.cfg.world.time_step;
        let now = self.now();
        for link in self.links.values_mut() {
            let bitrate = self.cfg.nodes.bitrate;
            if let Some(t) = link.start_next(|t| transfer_steps(t.msg.size(), bitrate, dt)) {
                if let Some(tr) = self.trace.as_mut() {
                    tr.event(now, "send", t.from, t.msg.meta.uid, &format!("to={}", t.to));
                }
            }
        }
    }

    fn arrive(&mut self, t: Transfer) {
        let now = self.now();
        let to = t.to;
        let cap = self.cfg.nodes.buffer_capacity;
        let addressed = t.msg.packet.next_hop == to;
        let receiver = &self.nodes[to.0 as usize];
        if receiver.seen.contains(&t.msg.key()) {
            return;
        }
        // Only carried copies count against capacity; terminals always accept.
        if cap > 0 && receiver.held() >= cap && !(addressed && receiver.role != NodeRole::Mixer) {
            if !t.replica {
                self.return_to_sender(t.from, t.msg);
            }
            return;
        }
        if let Some(tr) = self.trace.as_mut() {
            tr.event(now, "recv", to, t.msg.meta.uid, &format!("from={}", t.from));
        }
        self.nodes[to.0 as usize].seen.insert(t.msg.key());
        if !addressed {
            self.nodes[to.0 as usize].buffer.push(t.msg);
            return;
        }
        match self.nodes[to.0 as usize].role {
            NodeRole::Board => self.board_receive(t.from, t.msg),
            NodeRole::Mixer => self.mixer_receive(to, t.msg),
            NodeRole::Normal => self.reader_receive(to, t.msg),
        }
    }

    fn mixer_receive(&mut self, me: NodeId, msg: SimMessage) {
        let now = self.now();
        let uid = msg.meta.uid;
        let mut meta = msg.meta;
        meta.stage += 1;
        let next_key = (uid, meta.stage);
        let sk = &self.keys[&me].secret;
        let node = &mut self.nodes[me.0 as usize];
        let buf = node.mixer.as_mut().expect("mixer node has a buffer");
        match buf.ingest(me, msg.packet, meta, sk, now) {
            Ok(()) => {
                node.seen.insert(next_key);
                if let Some(t) = self.trace.as_mut() {
                    t.event(now, "peel", me, uid, "");
                }
            }
            Err(_) => self.drop_msg(uid, me, DropReason::PeelFailed),
        }
    }

    fn board_receive(&mut self, from: NodeId, msg: SimMessage) {
        let now = self.now();
        let uid = msg.meta.uid;
        if !self.board_seen.insert(uid) {
            return;
        }
        let reply_to = msg.meta.reply_to;
        let bytes = msg.packet.into_inner();
        if let Some(log) = self.board_log.as_mut() {
            log.push(BoardObservation { time: now, uid, link_from: from, request: bytes.clone(), reply_to });
        }
        let request = match BoardRequest::decode(&bytes) {
            Ok(r) => r,
            Err(_) => return self.drop_msg(uid, NodeId::BOARD, DropReason::Undecodable),
        };
        match request {
            BoardRequest::Write(w) => match self.board.write(&w) {
                Ok(()) => {
                    if let Some(t) = self.trace.as_mut() {
                        t.event(now, "board_write", NodeId::BOARD, uid, &format!("cell={}", w.index));
                    }
                    self.deliver(uid, NodeId::BOARD);
                }
                Err(e) => {
                    let reason = match e {
                        WriteError::Occupied => DropReason::BoardOccupied,
                        WriteError::NoCredit => DropReason::BoardNoCredit,
                        WriteError::OutOfRange => DropReason::BoardOutOfRange,
                    };
                    self.drop_msg(uid, NodeId::BOARD, reason);
                }
            },
            BoardRequest::Read(r) => {
                self.deliver(uid, NodeId::BOARD);
                let outcome = self.board.read(&r);
                if let Some(t) = self.trace.as_mut() {
                    let hit = matches!(outcome, ReadOutcome::Value(_));
                    t.event(now, "board_read", NodeId::BOARD, uid, &format!("cell={} hit={hit}", r.index));
                }
                if let ReadOutcome::Value(_) = outcome {
                    self.respond(&r.return_route, reply_to, &outcome, &msg.meta);
                }
            }
        }
    }

    fn respond(&mut self, return_route: &[u8], reply_to: Option<NodeId>, outcome: &ReadOutcome, read: &MsgMeta) {
        let router = ResponseRouter {
            mode: self.cfg.mix.reply_mode(),
            pool: &self.mixer_pool,
            keyring: &self.keyring,
            max_mixers: self.cfg.mix.max_mixers,
        };
        let routed = router.route(return_route, reply_to, &outcome.encode(), &mut self.mix_rng);
        let mixers = match (&routed, router.mode) {
            (Ok((_, Some(path))), _) => path.mixer_count() as u8,
            _ => read.reply_mixers,
        };
        let meta = self.new_meta(Kind::Response, mixers, self.now());
        let uid = meta.uid;
        match routed {
            Ok((packet, _)) => self.create(NodeId::BOARD, SimMessage { meta, packet }, read.created_at),
            Err(_) => {
                let empty = OnionPacket { next_hop: NodeId::BOARD, body: Vec::new(), attached: Vec::new() };
                self.create(NodeId::BOARD, SimMessage { meta, packet: empty }, read.created_at);
                self.nodes[0].buffer.retain(|m| m.meta.uid != uid);
                self.drop_msg(uid, NodeId::BOARD, DropReason::NoReplyRoute);
            }
        }
    }

    fn reader_receive(&mut self, me: NodeId, msg: SimMessage) {
        let now = self.now();
        let uid = msg.meta.uid;
        if msg.meta.kind != Kind::Response {
            return self.drop_msg(uid, me, DropReason::Misaddressed);
        }
        self.deliver(uid, me);
        let Ok(outcome) = ReadOutcome::decode(&msg.packet.into_inner()) else {
            self.desyncs += 1;
            return;
        };
        let lag = self.cfg.traffic.read_lag;
        for conv in self.conversations.iter_mut().filter(|c| c.reader == me) {
            let ReadOutcome::Value(value) = &outcome else { return };
            if conv.reader_state.open(value).is_err() {
                continue;
            }
            match conv.reader_state.handle_response(&outcome) {
                Ok((Some(payload), next)) => {
                    conv.reader_state = next;
                    conv.on_received(&payload, now, lag);
                    if let Some(t) = self.trace.as_mut() {
                        t.event(now, "read_ok", me, uid, &format!("message={}", conv.received));
                    }
                }
                _ => self.desyncs += 1,
            }
            return;
        }
        self.desyncs += 1;
    }

    // indexes nodes by position because several nodes are touched per iteration
    #[allow(clippy::needless_range_loop)]
    fn forward(&mut self) {
        let direct = self.cfg.routing == RoutingMode::Direct;
        let mut neighbors: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in self.links.keys() {
            neighbors[a.0 as usize].push(b);
            neighbors[b.0 as usize].push(a);
        }
        for i in 0..self.nodes.len() {
            let peers = &neighbors[i];
            if peers.is_empty() {
                continue;
            }
            let me = NodeId(i as u32);
            if let Some(buf) = self.nodes[i].mixer.as_mut() {
                let released = if direct {
                    buf.flush(&mut self.mix_rng, |h| peers.contains(&h))
                } else {
                    buf.flush(&mut self.mix_rng, |_| true)
                };
                for (hop, packet, meta) in released {
                    let msg = SimMessage { meta, packet };
                    if direct {
                        let link = self.links.get_mut(&ordered(me, hop)).expect("reachable hop has a link");
                        link.enqueue(Transfer { from: me, to: hop, msg, replica: false });
                    } else {
                        self.nodes[i].buffer.push(msg);
                    }
                }
            }
            if direct {
                let buffer = std::mem::take(&mut self.nodes[i].buffer);
                let (go, stay): (Vec<_>, Vec<_>) =
                    buffer.into_iter().partition(|m| peers.contains(&m.packet.next_hop));
                self.nodes[i].buffer = stay;
                for msg in go {
                    let hop = msg.packet.next_hop;
                    let link = self.links.get_mut(&ordered(me, hop)).expect("peer has a link");
                    link.enqueue(Transfer { from: me, to: hop, msg, replica: false });
                }
            } else {
                for &peer in peers {
                    let link = self.links.get_mut(&ordered(me, peer)).expect("peer has a link");
                    let peer_seen = &self.nodes[peer.0 as usize].seen;
                    for msg in &self.nodes[i].buffer {
                        let (uid, stage) = msg.key();
                        if peer_seen.contains(&(uid, stage)) || !link.offered.insert((uid, stage, peer)) {
                            continue;
                        }
                        link.enqueue(Transfer { from: me, to: peer, msg: msg.clone(), replica: true });
                    }
                }
            }
        }
        self.start_idle_links();
    }

    fn generate_traffic(&mut self) {
        let now = self.now();
        let eps = self.cfg.world.time_step * 1e-6;
        let duration = self.cfg.world.duration;
        let t = self.cfg.traffic.clone();
        for c in 0..self.conversations.len() {
            if self.conversations[c].next_write <= now + eps && self.conversations[c].next_write < duration {
                self.emit_write(c);
                let conv = &mut self.conversations[c];
                while conv.next_write <= now + eps {
                    conv.next_write += t.write_interval;
                }
            }
            if matches!(self.conversations[c].poll_due, Some(due) if due <= now + eps) {
                self.emit_read(c);
                let conv = &mut self.conversations[c];
                let mut due = conv.poll_due.expect("checked");
                while due <= now + eps {
                    due += t.poll_interval;
                }
                conv.poll_due = Some(due);
            }
        }
    }

    fn emit_write(&mut self, c: usize) {
        let now = self.now();
        let mut payload = vec![0u8; self.cfg.traffic.payload_size];
        self.traffic_rng.fill_bytes(&mut payload);
        let conv = &self.conversations[c];
        let (req, next) = conv.writer_state.prepare_write(&payload, conv.credit_token, &mut self.traffic_rng);
        let writer = conv.writer;
        let path = build_path(&mut self.mix_rng, &self.mixer_pool, NodeId::BOARD, self.cfg.mix.max_mixers);
        let packet = onion_wrap(&path, &BoardRequest::Write(req).encode(), &self.keyring, &mut self.mix_rng)
            .expect("pool mixers all have keys");
        let meta = self.new_meta(Kind::Write, path.mixer_count() as u8, now);
        self.create(writer, SimMessage { meta, packet }, now);
        let lag = self.cfg.traffic.read_lag;
        let conv = &mut self.conversations[c];
        conv.writer_state = next;
        conv.on_emitted(payload, now, lag);
    }

    fn emit_read(&mut self, c: usize) {
        let now = self.now();
        let reader = self.conversations[c].reader;
        let max = self.cfg.mix.max_mixers;
        let (route, reply_to, reply_mixers) = match self.cfg.mix.reply_mode() {
            ReplyMode::BoardPath => (Vec::new(), Some(reader), 0),
            ReplyMode::Strict => {
                // at least one mixer, or the board would learn the reader
                let reply = build_path_in(&mut self.mix_rng, &self.mixer_pool, reader, 1..=max.max(1));
                let route = build_reply_route(&reply, &self.keyring, &mut self.mix_rng).expect("pool keys");
                (route, None, reply.mixer_count() as u8)
            }
        };
        let req = self.conversations[c].reader_state.prepare_read(route);
        let path = build_path(&mut self.mix_rng, &self.mixer_pool, NodeId::BOARD, max);
        let packet = onion_wrap(&path, &BoardRequest::Read(req).encode(), &self.keyring, &mut self.mix_rng)
            .expect("pool mixers all have keys");
        let mut meta = self.new_meta(Kind::Read, path.mixer_count() as u8, now);
        meta.reply_to = reply_to;
        meta.reply_mixers = reply_mixers;
        self.create(reader, SimMessage { meta, packet }, now);
    }

    /// Uids currently held by any node buffer, mixer queue or link.
    pub fn present_uids(&self) -> BTreeSet<u64> {
        let mut out = BTreeSet::new();
        for n in &self.nodes {
            out.extend(n.buffer.iter().map(|m| m.meta.uid));
            if let Some(buf) = &n.mixer {
                out.extend(buf.pending.iter().map(|b| b.meta.uid));
            }
        }
        for link in self.links.values() {
            out.extend(link.carried().map(|t| t.msg.meta.uid));
        }
        out
    }

    pub fn conservation(&self) -> Conservation {
        self.ledger.reconcile(&self.present_uids())
    }

    pub fn report(&self) -> Report {
        compute_report(&self.metrics, &self.cfg.world.name, self.cfg.world.seed, &self.cfg.digest())
    }

    pub fn finish(self) -> RunOutcome {
        RunOutcome {
            report: self.report(),
            conservation: self.conservation(),
            desyncs: self.desyncs,
            payload_mismatches: self.conversations.iter().map(|c| c.mismatches).sum(),
            board_occupancy: self.board.occupancy(),
            trace: self.trace.map(Trace::into_csv),
        }
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Builds and runs one world to completion.
pub fn run_scenario(cfg: &ScenarioConfig, trace: bool) -> Result<RunOutcome, SimError> {
    let mut world = World::new(cfg.clone())?;
    if trace {
        world.enable_trace();
    }
    world.run();
    Ok(world.finish())
}
