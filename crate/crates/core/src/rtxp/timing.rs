//! Duty-cycle arithmetic and the per-ring phase timetable.

use std::fmt;

use crate::des::SimTime;
use crate::error::{Error, Result};
use crate::vcs::BackoffTiming;

/// Duty-cycle ratio stored in parts per million so that every derived
/// duration stays in exact integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DutyCycle(u32);

impl DutyCycle {
    pub const FULL: DutyCycle = DutyCycle(1_000_000);

    pub fn from_ppm(ppm: u32) -> Result<Self> {
        if ppm == 0 || ppm > 1_000_000 {
            return Err(Error::InvalidDutyCycle(ppm as f64 / 1e6));
        }
        Ok(DutyCycle(ppm))
    }

    pub fn from_fraction(f: f64) -> Result<Self> {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidDutyCycle(f));
        }
        DutyCycle::from_ppm((f * 1e6).round() as u32)
    }

    pub fn from_percent(p: f64) -> Result<Self> {
        DutyCycle::from_fraction(p / 100.0)
    }

    pub fn ppm(self) -> u32 {
        self.0
    }

    pub fn fraction(self) -> f64 {
        self.0 as f64 / 1e6
    }
}

impl fmt::Display for DutyCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.0 as f64 / 1e4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RtxpConfig {
    pub jamming_us: u64,
    pub max_backoff_us: u64,
    pub backoff_slot_us: u64,
    /// Data slot length `D_R`.
    pub data_slot_us: u64,
    pub duty_cycle: DutyCycle,
    pub max_retx_per_cycle: u32,
    /// When false an unacknowledged packet is dropped at once.
    pub retransmissions: bool,
}

impl Default for RtxpConfig {
    fn default() -> Self {
        RtxpConfig {
            jamming_us: 200,
            max_backoff_us: 10_000,
            backoff_slot_us: 10,
            data_slot_us: 1_600,
            duty_cycle: DutyCycle(10_000),
            max_retx_per_cycle: 5,
            retransmissions: true,
        }
    }
}

impl RtxpConfig {
    /// Parameters behind the capacity/WCTT trade-off curve: 200 µs jamming,
    /// 10.2 ms contention phases, 32 ms data slot.
    pub fn tradeoff_reference() -> Self {
        RtxpConfig {
            data_slot_us: 32_000,
            ..RtxpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jamming_us == 0 || self.data_slot_us == 0 || self.max_backoff_us == 0 {
            return Err(Error::Config("RTXP durations must be positive".into()));
        }
        if self.backoff_slot_us == 0 || self.backoff_slot_us > self.max_backoff_us {
            return Err(Error::Config(
                "backoff slot must be positive and no longer than the backoff window".into(),
            ));
        }
        Ok(())
    }

    pub fn backoff_timing(&self) -> BackoffTiming {
        BackoffTiming::new(self.max_backoff_us, self.backoff_slot_us)
    }

    pub fn d_b(&self) -> u64 {
        self.max_backoff_us + self.jamming_us
    }

    pub fn d_bf(&self) -> u64 {
        self.d_b()
    }

    pub fn d_r(&self) -> u64 {
        self.data_slot_us
    }

    pub fn d_l(&self) -> u64 {
        self.jamming_us
    }

    /// Per-node awake time in one activity period: B + BF + two R slots + L.
    pub fn d_awake(&self) -> u64 {
        self.d_b() + self.d_bf() + 2 * self.d_r() + self.d_l()
    }

    /// `D_awake * (1/DC - 1)`, rounded to the nearest microsecond.
    pub fn d_sleep(&self) -> u64 {
        let ppm = self.duty_cycle.ppm() as u128;
        let num = self.d_awake() as u128 * (1_000_000 - ppm);
        ((num + ppm / 2) / ppm) as u64
    }

    /// One awake period: B, R and BF for one ring class.
    pub fn d_awake_period(&self) -> u64 {
        self.d_b() + self.d_r() + self.d_bf()
    }

    pub fn d_activity(&self) -> u64 {
        3 * self.d_awake_period() + self.d_l()
    }

    /// Duty-cycle period `D_activity + D_sleep`.
    pub fn cycle_us(&self) -> u64 {
        self.d_activity() + self.d_sleep()
    }

    /// Activity periods that fit in one duty-cycle period.
    pub fn capacity(&self) -> u64 {
        self.cycle_us() / self.d_activity()
    }

    pub fn wctt_us(&self, nb_hop_max: u32) -> u64 {
        (nb_hop_max as u64 + 1) * self.cycle_us()
    }
}

/// Ring class `n mod 3`.
pub fn class_of(ring: u32) -> u8 {
    (ring % 3) as u8
}

/// Index (0..3) of the awake period whose B phase serves `class`.
pub fn send_period(class: u8) -> usize {
    (3 - class as usize) % 3
}

/// Index of the awake period whose R/BF phases serve `class` as receivers.
pub fn receive_period(class: u8) -> usize {
    send_period((class + 1) % 3)
}

/// Class contending in the B phase of awake period `m`.
pub fn b_class(m: usize) -> u8 {
    ((3 - m) % 3) as u8
}

/// Class receiving in the R phase (and electing in BF) of awake period `m`.
pub fn r_class(m: usize) -> u8 {
    (b_class(m) + 2) % 3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Channel-reservation contention `B_i`.
    Backoff(u8),
    /// Data slot `R_i` (labelled by the receiving class).
    Receive(u8),
    /// Forwarder election `BF_i`.
    BackoffForward(u8),
    Lost,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Backoff(i) => write!(f, "B_{i}"),
            Phase::Receive(i) => write!(f, "R_{i}"),
            Phase::BackoffForward(i) => write!(f, "BF_{i}"),
            Phase::Lost => f.write_str("L"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    SendContention,
    Transmit,
    Receive,
    ForwardContention,
    LostSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSlot {
    pub phase: Phase,
    pub role: Role,
    pub start: SimTime,
    pub end: SimTime,
}

/// Start offsets of the phases of awake period `m` within an activity period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AwakeWindows {
    pub b_start: u64,
    pub r_start: u64,
    pub bf_start: u64,
    pub bf_end: u64,
}

impl RtxpConfig {
    pub fn awake_windows(&self, m: usize) -> AwakeWindows {
        let b_start = m as u64 * self.d_awake_period();
        let r_start = b_start + self.d_b();
        let bf_start = r_start + self.d_r();
        AwakeWindows {
            b_start,
            r_start,
            bf_start,
            bf_end: bf_start + self.d_bf(),
        }
    }

    pub fn l_offset(&self) -> u64 {
        3 * self.d_awake_period()
    }
}

/// Schedule of one activity period for a node in `ring`, starting at
/// `period_start`, sorted by start time. The sink (ring 0) only has its
/// receive, forward-contention and L slots.
pub fn phase_timetable(ring: u32, period_start: SimTime, cfg: &RtxpConfig) -> Vec<PhaseSlot> {
    let class = class_of(ring);
    let mut slots = Vec::with_capacity(5);
    let at = |off: u64| period_start + off;
    if ring >= 1 {
        let w = cfg.awake_windows(send_period(class));
        let lower = (class + 2) % 3;
        slots.push(PhaseSlot {
            phase: Phase::Backoff(class),
            role: Role::SendContention,
            start: at(w.b_start),
            end: at(w.r_start),
        });
        slots.push(PhaseSlot {
            phase: Phase::Receive(lower),
            role: Role::Transmit,
            start: at(w.r_start),
            end: at(w.bf_start),
        });
    }
    let w = cfg.awake_windows(receive_period(class));
    slots.push(PhaseSlot {
        phase: Phase::Receive(class),
        role: Role::Receive,
        start: at(w.r_start),
        end: at(w.bf_start),
    });
    slots.push(PhaseSlot {
        phase: Phase::BackoffForward(class),
        role: Role::ForwardContention,
        start: at(w.bf_start),
        end: at(w.bf_end),
    });
    slots.push(PhaseSlot {
        phase: Phase::Lost,
        role: Role::LostSlot,
        start: at(cfg.l_offset()),
        end: at(cfg.l_offset() + cfg.d_l()),
    });
    slots.sort_by_key(|s| s.start);
    slots
}
