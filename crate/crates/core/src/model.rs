//! Scenario schema, defaults and validation.
//!
//! Units: data in bits, rates in bit/s, positions in metres, powers in
//! watts, energies in joules. Field names carry their unit as a suffix.
//! Unbounded memory, terminal data and thrust limits are written as the
//! strings `"inf"` / `"-inf"`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::propulsion::{PropulsionCoeffs, DEFAULT_CD1, DEFAULT_CD2};

/// Default physical and link constants.
pub mod defaults {
    pub const NOISE_W: f64 = 1e-10;
    pub const BANDWIDTH_HZ: f64 = 1e5;
    pub const POWER_MAX_W: f64 = 100.0;
    pub const PATH_LOSS_EXPONENT: f64 = 1.5;
    pub const ANTENNA_GAIN: f64 = 1.0;
    pub const HORIZON_S: f64 = 1200.0;
    pub const SPEED_MIN_MPS: f64 = 12.0;
    pub const SPEED_MAX_MPS: f64 = 28.0;
    pub const MASS_KG: f64 = 3.0;
    /// 1 GB.
    pub const MEMORY_BITS: f64 = 8e9;
    pub const ALTITUDE_M: f64 = 1000.0;
    pub const PATH_HALF_LENGTH_M: f64 = 12_000.0;
    pub const COMPUTATION_INTERVAL_S: f64 = 10.0;
    pub const WIND_WINDOW: usize = 3;
}

/// Bits in one megabyte (10⁶ bytes).
pub const MEGABYTE: f64 = 8e6;

/// A quantity that may be unbounded. Serialised as a number or as the
/// string `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Finite(f64),
    PosInf,
    NegInf,
}

impl Limit {
    pub fn is_finite(&self) -> bool {
        matches!(self, Limit::Finite(_))
    }

    /// Numeric value, with the unbounded markers mapped to ±∞.
    pub fn value(&self) -> f64 {
        match *self {
            Limit::Finite(v) => v,
            Limit::PosInf => f64::INFINITY,
            Limit::NegInf => f64::NEG_INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Limit::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Limit::Finite(v) => s.serialize_f64(v),
            Limit::PosInf => s.serialize_str("inf"),
            Limit::NegInf => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Limit;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\" / \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Limit, E> {
                Ok(Limit::Finite(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Limit, E> {
                Ok(Limit::Finite(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Limit, E> {
                Ok(Limit::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Limit, E> {
                match v {
                    "inf" | "+inf" => Ok(Limit::PosInf),
                    "-inf" => Ok(Limit::NegInf),
                    _ => Err(E::custom(format!("expected \"inf\" or \"-inf\", got \"{v}\""))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Aerial,
    Ground,
    AccessPoint,
}

/// Drag coefficients as written in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragSpec {
    pub c_d1: f64,
    pub c_d2: f64,
}

impl Default for DragSpec {
    fn default() -> Self {
        Self { c_d1: DEFAULT_CD1, c_d2: DEFAULT_CD2 }
    }
}

/// One network node, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub altitude: f64,
    pub lateral_offset: f64,
    pub q_init: f64,
    pub q_final: f64,
    /// Boundary speeds; `None` leaves the speed free at that end.
    pub v_init: Option<f64>,
    pub v_final: Option<f64>,
    pub speed_min: f64,
    pub speed_max: f64,
    pub thrust_min: Limit,
    pub thrust_max: Limit,
    pub mass: f64,
    pub memory: Limit,
    pub data_init: f64,
    pub data_final: Limit,
    pub drag: DragSpec,
}

impl NodeSpec {
    /// Node with the defaults for its kind.
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        RawNode { id: id.into(), kind, ..RawNode::empty() }.resolve()
    }

    pub fn is_aerial(&self) -> bool {
        self.kind == NodeKind::Aerial
    }

    /// Aerial node that actually travels.
    pub fn is_mobile(&self) -> bool {
        self.is_aerial() && self.speed_max > 0.0
    }

    /// Travel direction: +1 when the position increases, −1 otherwise.
    /// Zero-length trips count as +1.
    pub fn direction(&self) -> f64 {
        if self.q_final < self.q_init {
            -1.0
        } else {
            1.0
        }
    }

    pub fn path_length(&self) -> f64 {
        (self.q_final - self.q_init).abs()
    }

    pub fn propulsion(&self) -> PropulsionCoeffs<f64> {
        PropulsionCoeffs {
            c_d1: self.drag.c_d1,
            c_d2: self.drag.c_d2,
            v_min: self.speed_min,
            v_max: self.speed_max,
        }
    }

    pub fn is_sink(&self) -> bool {
        !self.data_final.is_finite()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    altitude_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lateral_offset_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_init_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_final_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_init_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_final_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speed_min_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speed_max_mps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thrust_min_n: Option<Limit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thrust_max_n: Option<Limit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mass_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    memory_bits: Option<Limit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_init_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_final_bits: Option<Limit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drag: Option<DragSpec>,
}

impl Default for NodeKind {
    fn default() -> Self {
        NodeKind::Ground
    }
}

impl RawNode {
    fn empty() -> Self {
        Self::default()
    }

    fn resolve(self) -> NodeSpec {
        use defaults::*;
        let aerial = self.kind == NodeKind::Aerial;
        let ap = self.kind == NodeKind::AccessPoint;
        let q_init = self.q_init_m.unwrap_or(if aerial { -PATH_HALF_LENGTH_M } else { 0.0 });
        let q_final = self.q_final_m.unwrap_or(if aerial { PATH_HALF_LENGTH_M } else { q_init });
        NodeSpec {
            id: self.id,
            kind: self.kind,
            altitude: self.altitude_m.unwrap_or(if aerial { ALTITUDE_M } else { 0.0 }),
            lateral_offset: self.lateral_offset_m.unwrap_or(0.0),
            q_init,
            q_final,
            v_init: self.v_init_mps,
            v_final: self.v_final_mps,
            speed_min: self.speed_min_mps.unwrap_or(if aerial { SPEED_MIN_MPS } else { 0.0 }),
            speed_max: self.speed_max_mps.unwrap_or(if aerial { SPEED_MAX_MPS } else { 0.0 }),
            thrust_min: self.thrust_min_n.unwrap_or(Limit::NegInf),
            thrust_max: self.thrust_max_n.unwrap_or(Limit::PosInf),
            mass: self.mass_kg.unwrap_or(MASS_KG),
            memory: self.memory_bits.unwrap_or(if ap { Limit::PosInf } else { Limit::Finite(MEMORY_BITS) }),
            data_init: self.data_init_bits.unwrap_or(0.0),
            data_final: self.data_final_bits.unwrap_or(if ap { Limit::PosInf } else { Limit::Finite(0.0) }),
            drag: self.drag.unwrap_or_default(),
        }
    }

    fn from_spec(n: &NodeSpec) -> Self {
        RawNode {
            id: n.id.clone(),
            kind: n.kind,
            altitude_m: Some(n.altitude),
            lateral_offset_m: Some(n.lateral_offset),
            q_init_m: Some(n.q_init),
            q_final_m: Some(n.q_final),
            v_init_mps: n.v_init,
            v_final_mps: n.v_final,
            speed_min_mps: Some(n.speed_min),
            speed_max_mps: Some(n.speed_max),
            thrust_min_n: Some(n.thrust_min),
            thrust_max_n: Some(n.thrust_max),
            mass_kg: Some(n.mass),
            memory_bits: Some(n.memory),
            data_init_bits: Some(n.data_init),
            data_final_bits: Some(n.data_final),
            drag: Some(n.drag),
        }
    }
}

/// Transmission constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommParams {
    #[serde(default = "d_bw", rename = "bandwidth_hz")]
    pub bandwidth: f64,
    #[serde(default = "d_noise", rename = "noise_w")]
    pub noise: f64,
    #[serde(default = "d_gain")]
    pub antenna_gain: f64,
    #[serde(default = "d_alpha")]
    pub path_loss_exponent: f64,
    #[serde(default = "d_pmax", rename = "power_max_w")]
    pub power_max: f64,
}

fn d_bw() -> f64 {
    defaults::BANDWIDTH_HZ
}
fn d_noise() -> f64 {
    defaults::NOISE_W
}
fn d_gain() -> f64 {
    defaults::ANTENNA_GAIN
}
fn d_alpha() -> f64 {
    defaults::PATH_LOSS_EXPONENT
}
fn d_pmax() -> f64 {
    defaults::POWER_MAX_W
}

impl Default for CommParams {
    fn default() -> Self {
        Self {
            bandwidth: d_bw(),
            noise: d_noise(),
            antenna_gain: d_gain(),
            path_loss_exponent: d_alpha(),
            power_max: d_pmax(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(default = "d_horizon", rename = "duration_s")]
    pub duration: f64,
}

fn d_horizon() -> f64 {
    defaults::HORIZON_S
}

impl Default for Horizon {
    fn default() -> Self {
        Self { duration: d_horizon() }
    }
}

/// Closed-loop simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    #[serde(default = "d_tc", rename = "computation_interval_s")]
    pub computation_interval: f64,
    /// Constant wind speed along the +q axis [m/s]; ground speed is
    /// `Υ v + wind`.
    #[serde(default, rename = "wind_mps")]
    pub wind: f64,
    #[serde(default)]
    pub seed: u64,
    /// Moving-average window in computation intervals.
    #[serde(default = "d_window")]
    pub wind_window: usize,
}

fn d_tc() -> f64 {
    defaults::COMPUTATION_INTERVAL_S
}
fn d_window() -> usize {
    defaults::WIND_WINDOW
}

impl Default for SimParams {
    fn default() -> Self {
        Self { computation_interval: d_tc(), wind: 0.0, seed: 0, wind_window: d_window() }
    }
}

/// Directed link `from → to` (transmitter to receiver).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
}

/// Complete scenario description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub comm: CommParams,
    pub channel: ChannelSpec,
    pub horizon: Horizon,
    pub sim: SimParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    nodes: Vec<RawNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    links: Option<Vec<LinkSpec>>,
    #[serde(default)]
    comm: CommParams,
    #[serde(default)]
    channel: ChannelSpec,
    #[serde(default)]
    horizon: Horizon,
    #[serde(default)]
    sim: SimParams,
}

impl ScenarioConfig {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Default links: every non-access-point node transmits to every
    /// access point.
    pub fn default_links(nodes: &[NodeSpec]) -> Vec<LinkSpec> {
        let aps: Vec<&NodeSpec> = nodes.iter().filter(|n| n.kind == NodeKind::AccessPoint).collect();
        let mut out = Vec::new();
        for n in nodes.iter().filter(|n| n.kind != NodeKind::AccessPoint) {
            for ap in &aps {
                out.push(LinkSpec { from: n.id.clone(), to: ap.id.clone() });
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let raw = RawScenario {
            name: self.name.clone(),
            nodes: self.nodes.iter().map(RawNode::from_spec).collect(),
            links: Some(self.links.clone()),
            comm: self.comm,
            channel: self.channel,
            horizon: self.horizon,
            sim: self.sim,
        };
        serde_json::to_string_pretty(&raw).expect("scenario serialises")
    }
}

const UNIT_SUFFIXES: &[&str] = &["m", "km", "s", "min", "h", "mps", "kmh", "n", "kg", "g", "bits", "bytes", "mb", "gb", "hz", "khz", "mhz", "w", "mw", "dbm"];

const KNOWN_FIELDS: &[&str] = &[
    "altitude_m",
    "lateral_offset_m",
    "q_init_m",
    "q_final_m",
    "v_init_mps",
    "v_final_mps",
    "speed_min_mps",
    "speed_max_mps",
    "thrust_min_n",
    "thrust_max_n",
    "mass_kg",
    "memory_bits",
    "data_init_bits",
    "data_final_bits",
    "bandwidth_hz",
    "noise_w",
    "power_max_w",
    "duration_s",
    "computation_interval_s",
    "wind_mps",
    "packet_interval_s",
];

fn stem(field: &str) -> Option<(&str, &str)> {
    let (s, unit) = field.rsplit_once('_')?;
    UNIT_SUFFIXES.contains(&unit).then_some((s, unit))
}

fn schema_error(err: serde_json::Error) -> Error {
    let msg = err.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(field) = rest.split('`').next() {
            if let Some((s, _)) = stem(field) {
                if let Some(expected) = KNOWN_FIELDS.iter().find(|k| stem(k).map(|(ks, _)| ks) == Some(s)) {
                    return Error::Schema(format!(
                        "field `{field}` has the wrong unit suffix; expected `{expected}`"
                    ));
                }
            }
        }
    }
    Error::Schema(msg)
}

/// Parses a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let raw: RawScenario = serde_json::from_value(value).map_err(schema_error)?;
    let nodes: Vec<NodeSpec> = raw.nodes.into_iter().map(RawNode::resolve).collect();
    let mut seen = HashSet::new();
    for n in &nodes {
        if !seen.insert(n.id.as_str()) {
            return Err(Error::Schema(format!("duplicate node id `{}`", n.id)));
        }
    }
    let links = match raw.links {
        Some(l) => l,
        None => ScenarioConfig::default_links(&nodes),
    };
    for l in &links {
        for id in [&l.from, &l.to] {
            if !seen.contains(id.as_str()) {
                return Err(Error::Schema(format!("link references unknown node `{id}`")));
            }
        }
    }
    Ok(ScenarioConfig {
        name: raw.name,
        nodes,
        links,
        comm: raw.comm,
        channel: raw.channel,
        horizon: raw.horizon,
        sim: raw.sim,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn save_scenario(cfg: &ScenarioConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_json())?;
    Ok(())
}

/// One failed rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Offending node, if the rule is per node.
    pub node: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "{n}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

pub const RULE_UNREACHABLE: &str = "unreachable endpoint";
pub const RULE_GROUND_ALTITUDE: &str = "ground node altitude must be 0";

/// Checks every invariant of the schema plus endpoint reachability of the
/// aerial nodes. Violations are returned as data.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |node: Option<&str>, rule: &str| {
        out.push(Violation { node: node.map(str::to_owned), rule: rule.to_owned() })
    };
    let t = cfg.horizon.duration;
    if !(t > 0.0) {
        push(None, "horizon must be positive");
    }
    let c = &cfg.comm;
    if !(c.bandwidth > 0.0) {
        push(None, "bandwidth must be positive");
    }
    if !(c.noise > 0.0) {
        push(None, "noise power must be positive");
    }
    if !(c.path_loss_exponent > 1.0) {
        push(None, "path loss exponent must exceed 1");
    }
    if !(c.power_max > 0.0) {
        push(None, "maximum power must be positive");
    }
    if !(c.antenna_gain > 0.0) {
        push(None, "antenna gain must be positive");
    }
    let ch = &cfg.channel;
    if !(ch.rice_k >= 0.0) {
        push(None, "rice factor must be non-negative");
    }
    if !(ch.outage > 0.0 && ch.outage < 1.0) {
        push(None, "outage probability must lie in (0, 1)");
    }
    if !(ch.packet_interval > 0.0) {
        push(None, "packet interval must be positive");
    }
    let tc = cfg.sim.computation_interval;
    if !(tc > 0.0) {
        push(None, "computation interval must be positive");
    } else if t > 0.0 {
        let mesh_step = t / 200.0;
        let n = (t / tc).round();
        if (n * tc - t).abs() > mesh_step {
            push(None, "computation interval must divide the horizon");
        }
    }

    let mut ids = BTreeSet::new();
    for n in &cfg.nodes {
        let id = Some(n.id.as_str());
        if !ids.insert(n.id.as_str()) {
            push(id, "duplicate node id");
        }
        if !(n.speed_min >= 0.0 && n.speed_min <= n.speed_max) {
            push(id, "speed bounds must satisfy 0 <= min <= max");
        }
        if n.thrust_min.value() > n.thrust_max.value() || n.thrust_min == Limit::PosInf || n.thrust_max == Limit::NegInf {
            push(id, "thrust bounds must satisfy min <= max");
        }
        if !(n.mass > 0.0) {
            push(id, "mass must be positive");
        }
        if !(n.drag.c_d1 > 0.0 && n.drag.c_d2 > 0.0) {
            push(id, "drag coefficients must be positive");
        }
        if n.memory == Limit::NegInf || n.data_final == Limit::NegInf {
            push(id, "memory and terminal data cannot be -inf");
        }
        if !(n.data_init >= 0.0 && n.data_init <= n.memory.value()) {
            push(id, "initial data must lie within [0, memory]");
        }
        if let Limit::Finite(d) = n.data_final {
            if d < 0.0 {
                push(id, "terminal data must be non-negative");
            }
        }
        match n.kind {
            NodeKind::Ground | NodeKind::AccessPoint => {
                if n.altitude != 0.0 {
                    push(id, RULE_GROUND_ALTITUDE);
                }
                if n.q_init != n.q_final {
                    push(id, "ground node must be stationary");
                }
                if n.speed_min != 0.0 || n.speed_max != 0.0 {
                    push(id, "ground node speed bounds must be zero");
                }
            }
            NodeKind::Aerial => {
                let dq = n.path_length();
                // relative slack for round-off in the product
                let slack = 1e-9 * dq.max(1.0);
                if t > 0.0 && (n.speed_min * t > dq + slack || dq > n.speed_max * t + slack) {
                    push(id, RULE_UNREACHABLE);
                }
                for v in [n.v_init, n.v_final].into_iter().flatten() {
                    if v < n.speed_min || v > n.speed_max {
                        push(id, "boundary speed outside speed bounds");
                    }
                }
            }
        }
    }
    let mut seen_links = HashSet::new();
    for l in &cfg.links {
        if l.from == l.to {
            push(Some(&l.from), "self link");
        }
        if !ids.contains(l.from.as_str()) || !ids.contains(l.to.as_str()) {
            push(None, "link references unknown node");
        }
        if !seen_links.insert((l.from.as_str(), l.to.as_str())) {
            push(Some(&l.from), "duplicate link");
        }
    }
    out
}

/// Built-in scenarios. Geometry: access point at the origin, aerial paths
/// at 1 km altitude from −12 km to +12 km (20 m/s average over 20 min).
pub mod presets {
    use super::*;
    use crate::channel::channel_for_effective_gain;

    fn ap(id: &str) -> NodeSpec {
        NodeSpec::new(id, NodeKind::AccessPoint)
    }

    fn uav(id: &str, data: f64) -> NodeSpec {
        NodeSpec { data_init: data, ..NodeSpec::new(id, NodeKind::Aerial) }
    }

    fn ground(id: &str, q: f64, lateral: f64, data: f64) -> NodeSpec {
        NodeSpec {
            q_init: q,
            q_final: q,
            lateral_offset: lateral,
            data_init: data,
            ..NodeSpec::new(id, NodeKind::Ground)
        }
    }

    fn base(name: &str, nodes: Vec<NodeSpec>, links: Vec<LinkSpec>) -> ScenarioConfig {
        ScenarioConfig {
            name: name.into(),
            nodes,
            links,
            comm: CommParams::default(),
            channel: ChannelSpec::default(),
            horizon: Horizon::default(),
            sim: SimParams::default(),
        }
    }

    fn link(from: &str, to: &str) -> LinkSpec {
        LinkSpec { from: from.into(), to: to.into() }
    }

    /// Single UAV passing over the access point, offloading `data` bits.
    pub fn single_uav(data: f64) -> ScenarioConfig {
        let nodes = vec![ap("ap"), uav("a1", data)];
        let links = vec![link("a1", "ap")];
        base("single-uav", nodes, links)
    }

    /// Two UAVs on parallel paths (second one offset by 1 km laterally)
    /// sharing the access point's band.
    pub fn two_uav(d1: f64, d2: f64) -> ScenarioConfig {
        let a2 = NodeSpec { lateral_offset: 1000.0, ..uav("a2", d2) };
        let nodes = vec![ap("ap"), uav("a1", d1), a2];
        let links = vec![link("a1", "ap"), link("a2", "ap")];
        base("two-uav", nodes, links)
    }

    /// UAV flying away from a receiver located below its start point.
    pub fn fly_away(data: f64) -> ScenarioConfig {
        let a1 = NodeSpec { q_init: 0.0, q_final: 24_000.0, ..uav("a1", data) };
        let nodes = vec![ap("ap"), a1];
        base("fly-away", nodes, vec![link("a1", "ap")])
    }

    /// Ground position of the two relay-scenario sources.
    pub const RELAY_SOURCE_Q_M: f64 = -3000.0;
    pub const RELAY_SOURCE_LATERAL_M: f64 = 3000.0;

    /// Two ground sources uploading to a UAV acting as an ideal sink. The
    /// UAV enters and leaves at its average speed, which makes the problem
    /// symmetric under `q → −q, t → T − t` with the sources swapped.
    pub fn relay_uplink(data_each: f64) -> ScenarioConfig {
        let a1 = NodeSpec {
            v_init: Some(20.0),
            v_final: Some(20.0),
            memory: Limit::PosInf,
            data_final: Limit::PosInf,
            ..uav("a1", 0.0)
        };
        let nodes = vec![
            ground("g1", RELAY_SOURCE_Q_M, RELAY_SOURCE_LATERAL_M, data_each),
            ground("g2", -RELAY_SOURCE_Q_M, -RELAY_SOURCE_LATERAL_M, data_each),
            a1,
        ];
        let links = vec![link("g1", "a1"), link("g2", "a1")];
        base("relay-uplink", nodes, links)
    }

    /// Two ground sources relaying through a finite-memory UAV to the
    /// access point over slow-fading channels with a head wind.
    pub fn closed_loop_relay() -> ScenarioConfig {
        let d = 11.0 * MEGABYTE;
        let a1 = NodeSpec { memory: Limit::Finite(1.5 * d), ..uav("a1", 0.0) };
        let ap = NodeSpec { q_init: 6000.0, q_final: 6000.0, ..ap("ap") };
        let nodes = vec![
            ground("g1", -6000.0, 500.0, d),
            ground("g2", -6000.0, -500.0, d),
            a1,
            ap,
        ];
        let links = vec![link("g1", "a1"), link("g2", "a1"), link("a1", "ap")];
        let mut cfg = base("closed-loop-relay", nodes, links);
        cfg.channel = channel_for_effective_gain(10.0, 0.2, 1.0);
        cfg.sim.wind = -6.0;
        cfg
    }

    /// Every built-in scenario, keyed by the file stem used for the bundled
    /// copies.
    pub fn all() -> Vec<(&'static str, ScenarioConfig)> {
        vec![
            ("single_fixed_45mb", single_uav(45.0 * MEGABYTE)),
            ("single_free_65mb", single_uav(65.0 * MEGABYTE)),
            ("two_uav_22mb", two_uav(22.0 * MEGABYTE, 22.0 * MEGABYTE)),
            ("fly_away", fly_away(0.0)),
            ("relay_uplink_25mb", relay_uplink(25.0 * MEGABYTE)),
            ("closed_loop_relay", closed_loop_relay()),
        ]
    }
}
