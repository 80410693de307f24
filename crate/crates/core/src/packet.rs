//! Alarm packets and their end-of-run accounting, shared by every protocol.

use std::fmt;

use crate::des::SimTime;
use crate::radio::{EnergyLedger, TraceLine};
use crate::topology::NodeId;

pub type PacketId = usize;

/// An alarm raised at `origin` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alarm {
    pub time: SimTime,
    pub origin: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    /// Transmission not acknowledged and no retransmission allowed.
    NoAck,
    /// Retry budget exhausted.
    RetryLimit,
    /// Single scheduled transmission failed.
    LinkFailure,
}

impl DropReason {
    pub fn label(self) -> &'static str {
        match self {
            DropReason::NoAck => "no-ack",
            DropReason::RetryLimit => "retry-limit",
            DropReason::LinkFailure => "link-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    InFlight,
    Delivered(SimTime),
    Dropped(SimTime, DropReason),
}

impl Fate {
    pub fn label(&self) -> &'static str {
        match self {
            Fate::InFlight => "in-flight",
            Fate::Delivered(_) => "delivered",
            Fate::Dropped(_, r) => r.label(),
        }
    }
}

/// One hop taken by a packet: the node that took custody, its ring, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub node: NodeId,
    pub ring: u32,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmPacket {
    pub id: PacketId,
    pub origin: NodeId,
    pub created: SimTime,
    pub holder: NodeId,
    /// Custody chain starting at the origin.
    pub trace: Vec<Hop>,
    pub retx_total: u32,
    pub fate: Fate,
}

impl AlarmPacket {
    pub fn new(id: PacketId, alarm: Alarm, origin_ring: u32) -> Self {
        AlarmPacket {
            id,
            origin: alarm.origin,
            created: alarm.time,
            holder: alarm.origin,
            trace: vec![Hop {
                node: alarm.origin,
                ring: origin_ring,
                at: alarm.time,
            }],
            retx_total: 0,
            fate: Fate::InFlight,
        }
    }

    pub fn hops(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn hand_over(&mut self, node: NodeId, ring: u32, at: SimTime) {
        self.holder = node;
        self.trace.push(Hop { node, ring, at });
    }

    pub fn delay_us(&self) -> Option<u64> {
        match self.fate {
            Fate::Delivered(t) => Some(t - self.created),
            _ => None,
        }
    }

    pub fn record(&self) -> PacketRecord {
        PacketRecord {
            packet_id: self.id,
            origin: self.origin,
            creation_time: self.created,
            delivery_time: match self.fate {
                Fate::Delivered(t) => Some(t),
                _ => None,
            },
            hops: self.hops() as u32,
            retx_total: self.retx_total,
            fate: self.fate,
        }
    }
}

/// The per-packet output line `packet_id origin creation_time delivery_time hops retx_total delivered?`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub packet_id: PacketId,
    pub origin: NodeId,
    pub creation_time: SimTime,
    pub delivery_time: Option<SimTime>,
    pub hops: u32,
    pub retx_total: u32,
    pub fate: Fate,
}

impl PacketRecord {
    pub fn delivered(&self) -> bool {
        matches!(self.fate, Fate::Delivered(_))
    }

    pub fn delay_us(&self) -> Option<u64> {
        self.delivery_time.map(|t| t - self.creation_time)
    }
}

impl fmt::Display for PacketRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let delivery = match self.delivery_time {
            Some(t) => t.as_us().to_string(),
            None => "-".into(),
        };
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.packet_id,
            self.origin,
            self.creation_time.as_us(),
            delivery,
            self.hops,
            self.retx_total,
            u8::from(self.delivered())
        )
    }
}

/// Counters a protocol run reports besides packets and energy.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub events: u64,
    pub data_transmissions: u64,
    pub secondary_periods: u64,
    pub duplicates: u64,
    pub contention_ties: u64,
}

/// Everything a single protocol run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub packets: Vec<AlarmPacket>,
    pub energy: EnergyLedger,
    pub end_time: SimTime,
    pub stats: RunStats,
    pub trace: Vec<TraceLine>,
}

impl RunOutcome {
    pub fn delivered(&self) -> usize {
        self.packets
            .iter()
            .filter(|p| matches!(p.fate, Fate::Delivered(_)))
            .count()
    }

    pub fn delivery_ratio(&self) -> f64 {
        if self.packets.is_empty() {
            return 1.0;
        }
        self.delivered() as f64 / self.packets.len() as f64
    }

    pub fn delays_us(&self) -> Vec<u64> {
        self.packets
            .iter()
            .filter_map(AlarmPacket::delay_us)
            .collect()
    }

    pub fn max_delay_us(&self) -> Option<u64> {
        self.packets.iter().filter_map(AlarmPacket::delay_us).max()
    }
}
