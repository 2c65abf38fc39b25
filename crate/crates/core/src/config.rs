//! Scenario configuration: flat `Section.key = value` text with `#` comments.
//!
//! Unknown keys are rejected, omitted keys keep their defaults, and every error
//! names the offending line.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::mix::ReplyMode;

const SCENARIO1: &str = include_str!("../scenarios/scenario1.ini");
const SCENARIO2: &str = include_str!("../scenarios/scenario2.ini");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `Section.key = value`")]
    Malformed { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingMode {
    /// Hand a message only to its exact next hop.
    #[default]
    Direct,
    /// Replicate to every contact, suppressing duplicates per node.
    Epidemic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSettings {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub time_step: f64,
    pub duration: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSettings {
    pub count: usize,
    /// km/h, as scenario files state walking speeds.
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    /// meters
    pub range: f64,
    /// bytes per second
    pub bitrate: f64,
    pub mixers: usize,
    /// 0 = unbounded.
    pub buffer_capacity: usize,
}

impl NodeSettings {
    pub fn speed_range_mps(&self) -> (f64, f64) {
        (self.speed_min_kmh / 3.6, self.speed_max_kmh / 3.6)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardSettings {
    pub cells: usize,
    pub credits: u32,
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSettings {
    pub max_mixers: usize,
    pub batch_threshold: usize,
    pub strict_reply: bool,
}

impl MixSettings {
    pub fn reply_mode(&self) -> ReplyMode {
        if self.strict_reply {
            ReplyMode::Strict
        } else {
            ReplyMode::BoardPath
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSettings {
    pub pairs: usize,
    pub payload_size: usize,
    pub start: f64,
    pub write_interval: f64,
    pub read_lag: f64,
    pub poll_interval: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub world: WorldSettings,
    pub nodes: NodeSettings,
    pub board: BoardSettings,
    pub mix: MixSettings,
    pub traffic: TrafficSettings,
    pub routing: RoutingMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            world: WorldSettings {
                name: "scenario".into(),
                width: 1000.0,
                height: 1000.0,
                time_step: 0.1,
                duration: 43_200.0,
                seed: 1,
            },
            nodes: NodeSettings {
                count: 41,
                speed_min_kmh: 1.0,
                speed_max_kmh: 2.0,
                range: 25.0,
                bitrate: 1e8,
                mixers: 10,
                buffer_capacity: 0,
            },
            board: BoardSettings { cells: 100, credits: 100, stationary: false },
            mix: MixSettings { max_mixers: 3, batch_threshold: 0, strict_reply: false },
            traffic: TrafficSettings {
                pairs: 15,
                payload_size: crate::protocol::DEFAULT_PAYLOAD_SIZE,
                start: 0.0,
                write_interval: 300.0,
                read_lag: 60.0,
                poll_interval: 120.0,
            },
            routing: RoutingMode::Direct,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("expects a number, got `{value}`"))
}

fn positive(value: &str) -> Result<f64, String> {
    let v: f64 = parse_num(value)?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got `{value}`"))
    }
}

fn non_negative(value: &str) -> Result<f64, String> {
    let v: f64 = parse_num(value)?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be zero or positive, got `{value}`"))
    }
}

fn count(value: &str) -> Result<usize, String> {
    value
        .parse::<usize>()
        .map_err(|_| format!("must be a non-negative integer, got `{value}`"))
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expects true or false, got `{value}`")),
    }
}

enum SetError {
    Unknown,
    Value(String),
}

impl From<String> for SetError {
    fn from(s: String) -> Self {
        SetError::Value(s)
    }
}

impl ScenarioConfig {
    pub fn scenario1() -> Self {
        Self::parse_str(SCENARIO1).expect("bundled scenario1.ini is valid")
    }

    pub fn scenario2() -> Self {
        Self::parse_str(SCENARIO2).expect("bundled scenario2.ini is valid")
    }

    pub fn bundled(name: &str) -> Option<(&'static str, Self)> {
        match name {
            "scenario1" => Some((SCENARIO1, Self::scenario1())),
            "scenario2" => Some((SCENARIO2, Self::scenario2())),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Malformed { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !key.contains('.') || value.is_empty() {
                return Err(ConfigError::Malformed { line });
            }
            cfg.set(key, value).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey { line, key: key.to_string() },
                SetError::Value(message) => ConfigError::BadValue { line, key: key.to_string(), message },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        match key {
            "World.name" => {
                if value.contains(',') || value.contains('"') {
                    return Err(SetError::Value("must not contain commas or quotes".into()));
                }
                self.world.name = value.to_string();
            }
            "World.width" => self.world.width = positive(value)?,
            "World.height" => self.world.height = positive(value)?,
            "World.time_step" => self.world.time_step = positive(value)?,
            "World.duration" => self.world.duration = positive(value)?,
            "World.seed" => self.world.seed = parse_num(value)?,
            "Nodes.count" => self.nodes.count = count(value)?,
            "Nodes.speed_min_kmh" => self.nodes.speed_min_kmh = positive(value)?,
            "Nodes.speed_max_kmh" => self.nodes.speed_max_kmh = positive(value)?,
            "Nodes.range" => self.nodes.range = positive(value)?,
            "Nodes.bitrate" => self.nodes.bitrate = positive(value)?,
            "Nodes.mixers" => self.nodes.mixers = count(value)?,
            "Nodes.buffer_capacity" => self.nodes.buffer_capacity = count(value)?,
            "Board.cells" => self.board.cells = count(value)?,
            "Board.credits" => self.board.credits = parse_num(value)?,
            "Board.stationary" => self.board.stationary = flag(value)?,
            "Mix.max_mixers" => self.mix.max_mixers = count(value)?,
            "Mix.batch_threshold" => self.mix.batch_threshold = count(value)?,
            "Mix.strict_reply" => self.mix.strict_reply = flag(value)?,
            "Traffic.pairs" => self.traffic.pairs = count(value)?,
            "Traffic.payload_size" => self.traffic.payload_size = count(value)?,
            "Traffic.start" => self.traffic.start = non_negative(value)?,
            "Traffic.write_interval" => self.traffic.write_interval = positive(value)?,
            "Traffic.read_lag" => self.traffic.read_lag = non_negative(value)?,
            "Traffic.poll_interval" => self.traffic.poll_interval = positive(value)?,
            "Routing.mode" => {
                self.routing = match value {
                    "direct" => RoutingMode::Direct,
                    "epidemic" => RoutingMode::Epidemic,
                    _ => return Err(SetError::Value(format!("expects direct or epidemic, got `{value}`"))),
                }
            }
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.nodes.count < 1 + self.nodes.mixers {
            return bad(format!(
                "Nodes.count ({}) must be at least 1 + Nodes.mixers ({})",
                self.nodes.count, self.nodes.mixers
            ));
        }
        if self.board.cells == 0 || self.board.cells > u32::MAX as usize {
            return bad("Board.cells must be at least 1".into());
        }
        if self.nodes.speed_min_kmh > self.nodes.speed_max_kmh {
            return bad("Nodes.speed_min_kmh exceeds Nodes.speed_max_kmh".into());
        }
        if self.mix.max_mixers > crate::mix::MAX_MIXERS {
            return bad(format!("Mix.max_mixers is at most {}", crate::mix::MAX_MIXERS));
        }
        if self.mix.strict_reply && self.nodes.mixers == 0 {
            return bad("Mix.strict_reply needs at least one mixer".into());
        }
        if self.traffic.pairs > 0 && self.normal_count() < 2 {
            return bad("traffic needs at least two normal nodes".into());
        }
        Ok(())
    }

    pub fn normal_count(&self) -> usize {
        self.nodes.count.saturating_sub(1 + self.nodes.mixers)
    }

    pub fn steps(&self) -> u64 {
        (self.world.duration / self.world.time_step).round() as u64
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let n = &self.nodes;
        let b = &self.board;
        let m = &self.mix;
        let t = &self.traffic;
        let _ = writeln!(s, "World.name = {}", w.name);
        let _ = writeln!(s, "World.width = {}", w.width);
        let _ = writeln!(s, "World.height = {}", w.height);
        let _ = writeln!(s, "World.time_step = {}", w.time_step);
        let _ = writeln!(s, "World.duration = {}", w.duration);
        let _ = writeln!(s, "World.seed = {}", w.seed);
        let _ = writeln!(s, "Nodes.count = {}", n.count);
        let _ = writeln!(s, "Nodes.speed_min_kmh = {}", n.speed_min_kmh);
        let _ = writeln!(s, "Nodes.speed_max_kmh = {}", n.speed_max_kmh);
        let _ = writeln!(s, "Nodes.range = {}", n.range);
        let _ = writeln!(s, "Nodes.bitrate = {}", n.bitrate);
        let _ = writeln!(s, "Nodes.mixers = {}", n.mixers);
        let _ = writeln!(s, "Nodes.buffer_capacity = {}", n.buffer_capacity);
        let _ = writeln!(s, "Board.cells = {}", b.cells);
        let _ = writeln!(s, "Board.credits = {}", b.credits);
        let _ = writeln!(s, "Board.stationary = {}", b.stationary);
        let _ = writeln!(s, "Mix.max_mixers = {}", m.max_mixers);
        let _ = writeln!(s, "Mix.batch_threshold = {}", m.batch_threshold);
        let _ = writeln!(s, "Mix.strict_reply = {}", m.strict_reply);
        let _ = writeln!(s, "Traffic.pairs = {}", t.pairs);
        let _ = writeln!(s, "Traffic.payload_size = {}", t.payload_size);
        let _ = writeln!(s, "Traffic.start = {}", t.start);
        let _ = writeln!(s, "Traffic.write_interval = {}", t.write_interval);
        let _ = writeln!(s, "Traffic.read_lag = {}", t.read_lag);
        let _ = writeln!(s, "Traffic.poll_interval = {}", t.poll_interval);
        let _ = writeln!(
            s,
            "Routing.mode = {}",
            match self.routing {
                RoutingMode::Direct => "direct",
                RoutingMode::Epidemic => "epidemic",
            }
        );
        s
    }

    /// Short hex digest of the canonical form, excluding the seed so that runs
    /// of one scenario over several seeds share it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.world.seed = 0;
        let hash = Sha256::digest(c.to_ini().as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
