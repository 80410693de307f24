//! Discrete-event kernel: integer-microsecond clock, a `(time, sequence)`
//! ordered event queue and named, seeded random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::topology::NodeId;

/// Simulation time in whole microseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, us: u64) {
        self.0 += us;
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, other: SimTime) -> u64 {
        self.0 - other.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Node(NodeId),
    System,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub target: Target,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.sequence == other.sequence
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

/// Future event set plus virtual clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<Event<P>>,
    dispatched: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Total events dispatched since creation.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueue `payload` for `fire_at`. Returns the assigned sequence number.
    ///
    /// Scheduling before the current clock is a logic error and panics.
    pub fn schedule(&mut self, fire_at: SimTime, target: Target, payload: P) -> u64 {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={} now={}",
            fire_at,
            self.now
        );
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Event {
            fire_at,
            sequence,
            target,
            payload,
        });
        sequence
    }

    pub fn schedule_system(&mut self, fire_at: SimTime, payload: P) -> u64 {
        self.schedule(fire_at, Target::System, payload)
    }

    /// Time of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.fire_at)
    }

    /// Remove the earliest event if it fires at or before `limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        if self.queue.peek()?.fire_at > limit {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.dispatched += 1;
        Some(ev)
    }

    /// Dispatch every event with `fire_at <= t_end` in `(fire_at, sequence)`
    /// order. Handlers may schedule further events; those are honored when
    /// they fall inside the window. The clock ends at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        assert!(
            t_end >= self.now,
            "run_until target {} is before the clock {}",
            t_end,
            self.now
        );
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            handler(self, ev);
        }
        self.now = t_end;
        count
    }
}

/// Purpose label of a random stream. Each label maps to a distinct ChaCha stream
/// for the same seed, so draws in one purpose never perturb another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Topology,
    Traffic,
    Shadowing,
    CsmaBackoff,
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::Topology => 1,
            StreamId::Traffic => 2,
            StreamId::Shadowing => 3,
            StreamId::CsmaBackoff => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StreamId::Topology => "topology",
            StreamId::Traffic => "traffic",
            StreamId::Shadowing => "shadowing",
            StreamId::CsmaBackoff => "csma-backoff",
        }
    }
}

/// Seeded generator for one purpose.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.index());
        RngStream { seed, id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// SplitMix64 finalizer, used to derive per-run seeds from a base seed.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn drain(s: &mut Scheduler<u32>, until: u64) -> Vec<(u64, u32)> {
        let mut out = Vec::new();
        s.run_until(SimTime(until), |_, ev| out.push((ev.fire_at.0, ev.payload)));
        out
    }

    #[test]
    fn earlier_event_dispatches_first() {
        let mut s = Scheduler::new();
        s.schedule_system(SimTime(5), 5);
        s.schedule_system(SimTime(3), 3);
        assert_eq!(drain(&mut s, 10), vec![(3, 3), (5, 5)]);
    }

    #[test]
    fn simultaneous_events_are_fifo() {
        let mut s = Scheduler::new();
        let a = s.schedule_system(SimTime(7), 1);
        let b = s.schedule_system(SimTime(7), 2);
        assert!(a < b);
        assert_eq!(drain(&mut s, 7), vec![(7, 1), (7, 2)]);
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut s: Scheduler<u32> = Scheduler::new();
        s.run_until(SimTime(10), |_, _| {});
        s.schedule_system(SimTime(9), 0);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<u32> = Scheduler::new();
        assert_eq!(s.run_until(SimTime(100), |_, _| {}), 0);
        assert_eq!(s.now(), SimTime(100));
    }

    #[test]
    fn events_after_horizon_stay_queued() {
        let mut s = Scheduler::new();
        for t in [1, 2, 3, 50] {
            s.schedule_system(SimTime(t), t as u32);
        }
        assert_eq!(s.run_until(SimTime(10), |_, _| {}), 3);
        assert_eq!(s.pending(), 1);
        assert_eq!(s.now(), SimTime(10));
    }

    #[test]
    fn reentrant_scheduling_is_honored() {
        let mut s = Scheduler::new();
        s.schedule_system(SimTime(1), 0u32);
        let mut seen = Vec::new();
        s.run_until(SimTime(10), |s, ev| {
            seen.push(ev.fire_at.0);
            if ev.payload < 3 {
                let t = s.now() + 2;
                s.schedule_system(t, ev.payload + 1);
            }
        });
        assert_eq!(seen, vec![1, 3, 5, 7]);
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let draw = |seed, id| {
            let mut r = RngStream::new(seed, id);
            (0..8).map(|_| r.rng().random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42, StreamId::Traffic), draw(42, StreamId::Traffic));
        assert_ne!(draw(42, StreamId::Traffic), draw(42, StreamId::Shadowing));
        assert_ne!(draw(42, StreamId::Traffic), draw(43, StreamId::Traffic));
    }

    proptest::proptest! {
        #[test]
        fn dispatch_order_is_time_then_sequence(times in proptest::collection::vec(0u64..50, 1..60)) {
            let mut s = Scheduler::new();
            for (i, t) in times.iter().enumerate() {
                s.schedule_system(SimTime(*t), i as u32);
            }
            let mut last = (0u64, 0u64);
            let mut first = true;
            s.run_until(SimTime(100), |_, ev| {
                let key = (ev.fire_at.0, ev.sequence);
                if !first {
                    assert!(key > last);
                }
                first = false;
                last = key;
            });
        }
    }
}
