//! Half-duplex, single-channel radio: propagation models, the shared channel
//! log, carrier sensing, per-receiver reception outcomes and energy ledgers.

use std::fmt;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::des::{RngStream, SimTime};
use crate::error::{Error, Result};
use crate::topology::{NeighborGraph, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerProfile {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub listen_mw: f64,
    pub sleep_mw: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            tx_mw: 60.0,
            rx_mw: 60.0,
            listen_mw: 60.0,
            sleep_mw: 0.003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    pub bitrate_bps: u64,
    pub packet_bytes: u64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub jamming_us: u64,
    pub powers: PowerProfile,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bitrate_bps: 500_000,
            packet_bytes: 100,
            path_loss_exponent: 2.0,
            shadowing_sigma_db: 4.0,
            jamming_us: 200,
            powers: PowerProfile::default(),
        }
    }
}

impl RadioParams {
    pub fn airtime_us(&self, bytes: u64) -> u64 {
        (bytes * 8 * 1_000_000).div_ceil(self.bitrate_bps)
    }

    /// Airtime of one data packet.
    pub fn data_us(&self) -> u64 {
        self.airtime_us(self.packet_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.powers;
        let positive = [
            self.path_loss_exponent,
            self.shadowing_sigma_db,
            p.tx_mw,
            p.rx_mw,
            p.listen_mw,
            p.sleep_mw,
        ];
        if self.bitrate_bps == 0
            || self.packet_bytes == 0
            || self.jamming_us == 0
            || positive.iter().any(|v| !(*v > 0.0))
        {
            return Err(Error::Config("radio parameters must be positive".into()));
        }
        if p.sleep_mw >= p.listen_mw {
            return Err(Error::Config(
                "sleep power must be below listen power".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Propagation {
    /// Losses only through collisions.
    FreeSpace,
    /// Log-distance path loss with per-reception normal shadowing, calibrated
    /// so that a link at exactly the radio range succeeds half the time.
    LogNormal,
}

impl Propagation {
    pub fn label(self) -> &'static str {
        match self {
            Propagation::FreeSpace => "free-space",
            Propagation::LogNormal => "log-normal",
        }
    }
}

impl std::str::FromStr for Propagation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free-space" => Ok(Propagation::FreeSpace),
            "log-normal" => Ok(Propagation::LogNormal),
            other => Err(Error::Config(format!("unknown channel model `{other}`"))),
        }
    }
}

impl fmt::Display for Propagation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Shadowing margin: received power minus sensitivity, excluding the random
/// term. Zero at `d == range`.
pub fn link_margin_db(distance: f64, range: f64, exponent: f64) -> f64 {
    -10.0 * exponent * (distance / range).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxKind {
    Jamming,
    Data,
    Strobe,
    Response,
    Ack,
}

impl TxKind {
    pub fn label(self) -> &'static str {
        match self {
            TxKind::Jamming => "jamming",
            TxKind::Data => "data",
            TxKind::Strobe => "preamble-strobe",
            TxKind::Response => "response",
            TxKind::Ack => "ack",
        }
    }
}

pub type TxId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub id: TxId,
    pub sender: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    pub kind: TxKind,
    /// Payload reference: packet id for data and packet-bound jamming codes.
    pub tag: u64,
}

impl Transmission {
    pub fn overlaps(&self, from: SimTime, to: SimTime) -> bool {
        self.start < to && from < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCause {
    OutOfRange,
    HalfDuplex,
    Collision,
    Fading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Delivered,
    Lost(LossCause),
}

impl Reception {
    pub fn is_delivered(self) -> bool {
        self == Reception::Delivered
    }
}

/// One line of the optional transmission trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub time: SimTime,
    pub sender: NodeId,
    pub kind: TxKind,
    pub receivers: Vec<NodeId>,
    pub outcome: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rx = String::new();
        for (i, r) in self.receivers.iter().enumerate() {
            if i > 0 {
                rx.push(',');
            }
            let _ = write!(rx, "{r}");
        }
        if rx.is_empty() {
            rx.push('-');
        }
        write!(
            f,
            "{} {} {} {} {}",
            self.time.as_us(),
            self.sender,
            self.kind.label(),
            rx,
            self.outcome
        )
    }
}

/// Log of transmissions currently relevant to sensing and reception checks.
#[derive(Debug, Default)]
pub struct Channel {
    log: Vec<Transmission>,
    next_id: TxId,
    trace: Option<Vec<TraceLine>>,
}

impl Channel {
    pub fn new(trace: bool) -> Self {
        Channel {
            log: Vec::new(),
            next_id: 0,
            trace: trace.then(Vec::new),
        }
    }

    pub fn transmit(
        &mut self,
        sender: NodeId,
        start: SimTime,
        duration_us: u64,
        kind: TxKind,
        tag: u64,
    ) -> TxId {
        let id = self.next_id;
        self.next_id += 1;
        self.log.push(Transmission {
            id,
            sender,
            start,
            end: start + duration_us,
            kind,
            tag,
        });
        id
    }

    pub fn get(&self, id: TxId) -> Option<&Transmission> {
        self.log.iter().rev().find(|t| t.id == id)
    }

    /// Cut a transmission short (never lengthens it).
    pub fn truncate(&mut self, id: TxId, end: SimTime) {
        if let Some(t) = self.log.iter_mut().rev().find(|t| t.id == id) {
            if end < t.end {
                t.end = end.max(t.start);
            }
        }
    }

    /// Forget transmissions that ended at or before `before`.
    pub fn prune(&mut self, before: SimTime) {
        self.log.retain(|t| t.end > before);
    }

    pub fn clear(&mut self) {
        self.log.clear();
    }

    pub fn transmissions(&self) -> &[Transmission] {
        &self.log
    }

    pub fn overlapping(&self, from: SimTime, to: SimTime) -> impl Iterator<Item = &Transmission> {
        self.log.iter().filter(move |t| t.overlaps(from, to))
    }

    /// Energy detection over `[from, to)`: busy iff a transmission from within
    /// the node's 2-hop neighborhood overlaps the window.
    pub fn carrier_sense(
        &self,
        graph: &NeighborGraph,
        node: NodeId,
        from: SimTime,
        to: SimTime,
    ) -> bool {
        self.sense_where(graph, node, from, to, |_| true)
    }

    /// Carrier sensing restricted to transmissions accepted by `filter`
    /// (e.g. one kind of code).
    pub fn sense_where<F>(
        &self,
        graph: &NeighborGraph,
        node: NodeId,
        from: SimTime,
        to: SimTime,
        filter: F,
    ) -> bool
    where
        F: Fn(&Transmission) -> bool,
    {
        self.overlapping(from, to)
            .any(|t| t.sender != node && graph.within_two_hops(node, t.sender) && filter(t))
    }

    /// Earliest start among sensed transmissions accepted by `filter` that
    /// overlap `[from, to)`.
    pub fn first_sensed<F>(
        &self,
        graph: &NeighborGraph,
        node: NodeId,
        from: SimTime,
        to: SimTime,
        filter: F,
    ) -> Option<SimTime>
    where
        F: Fn(&Transmission) -> bool,
    {
        self.overlapping(from, to)
            .filter(|t| t.sender != node && graph.within_two_hops(node, t.sender) && filter(t))
            .map(|t| t.start)
            .min()
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn record(&mut self, line: TraceLine) {
        if let Some(tr) = self.trace.as_mut() {
            tr.push(line);
        }
    }

    pub fn take_trace(&mut self) -> Vec<TraceLine> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

/// Everything a reception check needs besides the channel log.
pub struct RadioEnv<'a> {
    pub topology: &'a Topology,
    pub graph: &'a NeighborGraph,
    pub params: &'a RadioParams,
    pub model: Propagation,
}

impl RadioEnv<'_> {
    /// Outcome of `tx` at `receiver`, given every other transmission in the
    /// channel log. Under log-normal shadowing one normal draw is consumed per
    /// call that reaches the fading test; free space consumes none.
    pub fn reception_outcome(
        &self,
        tx: &Transmission,
        receiver: NodeId,
        channel: &Channel,
        rng: &mut RngStream,
    ) -> Reception {
        debug_assert_ne!(tx.sender, receiver);
        if !self.graph.are_neighbors(tx.sender, receiver) {
            return Reception::Lost(LossCause::OutOfRange);
        }
        for other in channel.overlapping(tx.start, tx.end) {
            if other.id == tx.id {
                continue;
            }
            if other.sender == receiver {
                return Reception::Lost(LossCause::HalfDuplex);
            }
            if other.sender != tx.sender && self.graph.are_neighbors(other.sender, receiver) {
                return Reception::Lost(LossCause::Collision);
            }
        }
        match self.model {
            Propagation::FreeSpace => Reception::Delivered,
            Propagation::LogNormal => {
                let d = self.topology.distance(tx.sender, receiver);
                let margin = link_margin_db(d, self.topology.range, self.params.path_loss_exponent);
                if shadowing_draw(rng, self.params.shadowing_sigma_db) + margin >= 0.0 {
                    Reception::Delivered
                } else {
                    Reception::Lost(LossCause::Fading)
                }
            }
        }
    }
}

pub fn shadowing_draw(rng: &mut RngStream, sigma_db: f64) -> f64 {
    let normal = Normal::new(0.0, sigma_db).expect("sigma must be finite and positive");
    normal.sample(rng.rng())
}

/// Uniform integer helper shared by the MAC models.
pub fn uniform_us(rng: &mut RngStream, lo: u64, hi_inclusive: u64) -> u64 {
    rng.rng().random_range(lo..=hi_inclusive)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioState {
    Tx,
    Rx,
    Listen,
    Sleep,
}

/// Time spent per radio state, per node. Sleep is the remainder of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    tx_us: Vec<u64>,
    rx_us: Vec<u64>,
    listen_us: Vec<u64>,
    sleep_us: Vec<u64>,
    finalized: bool,
}

impl EnergyLedger {
    pub fn new(nodes: usize) -> Self {
        EnergyLedger {
            tx_us: vec![0; nodes],
            rx_us: vec![0; nodes],
            listen_us: vec![0; nodes],
            sleep_us: vec![0; nodes],
            finalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tx_us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx_us.is_empty()
    }

    pub fn account(&mut self, node: NodeId, state: RadioState, duration_us: u64) {
        let slot = match state {
            RadioState::Tx => &mut self.tx_us[node],
            RadioState::Rx => &mut self.rx_us[node],
            RadioState::Listen => &mut self.listen_us[node],
            RadioState::Sleep => &mut self.sleep_us[node],
        };
        *slot += duration_us;
    }

    /// Take back time previously accounted to `state` (saturating).
    pub fn debit(&mut self, node: NodeId, state: RadioState, duration_us: u64) {
        let slot = match state {
            RadioState::Tx => &mut self.tx_us[node],
            RadioState::Rx => &mut self.rx_us[node],
            RadioState::Listen => &mut self.listen_us[node],
            RadioState::Sleep => &mut self.sleep_us[node],
        };
        *slot = slot.saturating_sub(duration_us);
    }

    pub fn time_us(&self, node: NodeId, state: RadioState) -> u64 {
        match state {
            RadioState::Tx => self.tx_us[node],
            RadioState::Rx => self.rx_us[node],
            RadioState::Listen => self.listen_us[node],
            RadioState::Sleep => self.sleep_us[node],
        }
    }

    pub fn awake_us(&self, node: NodeId) -> u64 {
        self.tx_us[node] + self.rx_us[node] + self.listen_us[node]
    }

    /// Close the ledger for a run of `total_us`: every node's unaccounted time
    /// becomes sleep. Fails if a node was busy for longer than the run.
    pub fn finalize(&mut self, total_us: u64) -> Result<()> {
        for n in 0..self.len() {
            let busy = self.awake_us(n) + self.sleep_us[n];
            if busy > total_us {
                return Err(Error::Config(format!(
                    "energy ledger of node {n} holds {busy} us over a {total_us} us run"
                )));
            }
            self.sleep_us[n] += total_us - busy;
        }
        self.finalized = true;
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Energy in millijoules.
    pub fn energy_mj(&self, node: NodeId, p: &PowerProfile) -> f64 {
        let mj = |us: u64, mw: f64| us as f64 * mw * 1e-6;
        mj(self.tx_us[node], p.tx_mw)
            + mj(self.rx_us[node], p.rx_mw)
            + mj(self.listen_us[node], p.listen_mw)
            + mj(self.sleep_us[node], p.sleep_mw)
    }

    pub fn max_energy_mj(&self, p: &PowerProfile) -> f64 {
        (0..self.len())
            .map(|n| self.energy_mj(n, p))
            .fold(0.0, f64::max)
    }
}
