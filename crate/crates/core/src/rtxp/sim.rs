//! Event-driven RTXP: synchronized activity periods, B/R/BF contention,
//! L-slot claims and secondary activity periods.

use std::collections::VecDeque;

use crate::des::{RngStream, Scheduler, SimTime, StreamId};
use crate::error::{Error, Result};
use crate::packet::{Alarm, AlarmPacket, DropReason, Fate, PacketId, RunOutcome, RunStats};
use crate::radio::{
    Channel, EnergyLedger, Propagation, RadioEnv, RadioParams, RadioState, TraceLine, Transmission,
    TxKind,
};
use crate::rtxp::timing::{b_class, class_of, r_class, RtxpConfig};
use crate::scenario::Scenario;
use crate::topology::{NeighborGraph, NodeId};

/// Tag carried by generic (non packet-bound) jamming codes.
const GENERIC_CODE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentionOutcome {
    /// Nodes that jammed, with the instant their backoff expired.
    pub winners: Vec<(NodeId, SimTime)>,
    /// Nodes that sensed a code first, with the instant they withdrew.
    pub losers: Vec<(NodeId, SimTime)>,
}

/// Backoff contention starting at `start`: nodes are visited in expiry order;
/// a node withdraws if it has sensed a matching code from its 2-hop
/// neighborhood before its own expiry, otherwise it emits a code (recorded in
/// `channel`) carrying `code`.
pub fn resolve_contention(
    contenders: &[NodeId],
    backoff: &[u64],
    graph: &NeighborGraph,
    channel: &mut Channel,
    start: SimTime,
    jamming_us: u64,
    code: u64,
) -> ContentionOutcome {
    let mut order: Vec<NodeId> = contenders.to_vec();
    order.sort_by_key(|&v| (backoff[v], v));
    order.dedup();
    let mut winners = Vec::new();
    let mut losers = Vec::new();
    for v in order {
        let expiry = start + backoff[v];
        let heard = channel.first_sensed(graph, v, start, expiry, |t| {
            t.kind == TxKind::Jamming && t.tag == code && t.start < expiry
        });
        match heard {
            Some(t) => losers.push((v, t)),
            None => {
                channel.transmit(v, expiry, jamming_us, TxKind::Jamming, code);
                winners.push((v, expiry));
            }
        }
    }
    ContentionOutcome { winners, losers }
}

/// Phase-B contention in isolation: which of `contenders` gain the channel.
pub fn contend_b(
    contenders: &[NodeId],
    backoff: &[u64],
    graph: &NeighborGraph,
    jamming_us: u64,
) -> ContentionOutcome {
    let mut channel = Channel::new(false);
    resolve_contention(
        contenders,
        backoff,
        graph,
        &mut channel,
        SimTime::ZERO,
        jamming_us,
        GENERIC_CODE,
    )
}

/// Forwarder election among the receivers that decoded one packet. Returns
/// the elected node, if any.
pub fn elect_forwarder(
    decoders: &[NodeId],
    bf_backoff: &[u64],
    graph: &NeighborGraph,
    jamming_us: u64,
) -> Option<NodeId> {
    let mut channel = Channel::new(false);
    let out = resolve_contention(
        decoders,
        bf_backoff,
        graph,
        &mut channel,
        SimTime::ZERO,
        jamming_us,
        0,
    );
    out.winners.first().map(|w| w.0)
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub horizon: SimTime,
    pub seed: u64,
    pub trace: bool,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Alarm(PacketId),
    CycleStart,
    PeriodStart,
    BPhase(usize),
    RPhase(usize),
    REnd(usize),
    BfPhase(usize),
    LSlot,
}

#[derive(Debug, Clone, Copy, Default)]
struct PacketRt {
    cycle_retx: u32,
    deferred: bool,
}

struct Election {
    sender: NodeId,
    packet: PacketId,
    decoders: Vec<NodeId>,
}

struct RtxpSim<'a> {
    sc: &'a Scenario,
    cfg: RtxpConfig,
    radio: RadioParams,
    model: Propagation,
    channel: Channel,
    shadow: RngStream,
    packets: Vec<AlarmPacket>,
    rt: Vec<PacketRt>,
    queues: Vec<VecDeque<PacketId>>,
    by_class: [Vec<NodeId>; 3],
    awake: Vec<bool>,
    claimant: Vec<bool>,
    contended: Vec<bool>,
    primary: bool,
    period_index: u64,
    period_start: SimTime,
    cycle_start: SimTime,
    winners: Vec<(NodeId, PacketId)>,
    elections: Vec<Election>,
    ledger: EnergyLedger,
    stats: RunStats,
}

/// Run RTXP over `alarms` until `opts.horizon`.
pub fn simulate(
    sc: &Scenario,
    cfg: &RtxpConfig,
    radio: &RadioParams,
    model: Propagation,
    alarms: &[Alarm],
    opts: SimOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    radio.validate()?;
    if radio.data_us() > cfg.d_r() {
        return Err(Error::Config(format!(
            "data airtime {} us exceeds the R slot {} us",
            radio.data_us(),
            cfg.d_r()
        )));
    }
    if sc.timing != cfg.backoff_timing() {
        return Err(Error::Config(
            "scenario backoff grid differs from the RTXP config".into(),
        ));
    }
    let n = sc.len();
    let mut by_class: [Vec<NodeId>; 3] = Default::default();
    for v in 0..n {
        by_class[class_of(sc.ring(v)) as usize].push(v);
    }
    let packets = alarms
        .iter()
        .enumerate()
        .map(|(id, a)| AlarmPacket::new(id, *a, sc.ring(a.origin)))
        .collect();
    let mut sim = RtxpSim {
        sc,
        cfg: *cfg,
        radio: *radio,
        model,
        channel: Channel::new(opts.trace),
        shadow: RngStream::new(opts.seed, StreamId::Shadowing),
        packets,
        rt: vec![PacketRt::default(); alarms.len()],
        queues: vec![VecDeque::new(); n],
        by_class,
        awake: vec![true; n],
        claimant: vec![false; n],
        contended: vec![false; n],
        primary: true,
        period_index: 0,
        period_start: SimTime::ZERO,
        cycle_start: SimTime::ZERO,
        winners: Vec::new(),
        elections: Vec::new(),
        ledger: EnergyLedger::new(n),
        stats: RunStats::default(),
    };

    let mut sched: Scheduler<Ev> = Scheduler::new();
    for (id, a) in alarms.iter().enumerate() {
        if a.origin == sc.sink() || a.origin >= n {
            return Err(Error::Config(format!(
                "alarm origin {} is not a sensor node",
                a.origin
            )));
        }
        sched.schedule_system(a.time, Ev::Alarm(id));
    }
    sched.schedule_system(SimTime::ZERO, Ev::CycleStart);
    sched.run_until(opts.horizon, |s, ev| sim.dispatch(s, ev.payload));

    sim.stats.events = sched.dispatched();
    sim.ledger.finalize(opts.horizon.as_us())?;
    let trace = sim.channel.take_trace();
    Ok(RunOutcome {
        packets: sim.packets,
        energy: sim.ledger,
        end_time: opts.horizon,
        stats: sim.stats,
        trace,
    })
}

impl RtxpSim<'_> {
    fn dispatch(&mut self, s: &mut Scheduler<Ev>, ev: Ev) {
        let now = s.now();
        match ev {
            Ev::Alarm(id) => {
                let origin = self.packets[id].origin;
                self.queues[origin].push_back(id);
            }
            Ev::CycleStart => self.cycle_begin(s, now),
            Ev::PeriodStart => self.period_begin(s, now),
            Ev::BPhase(m) => self.b_phase(m, now),
            Ev::RPhase(m) => self.r_phase(m, now),
            Ev::REnd(m) => self.r_end(m, now),
            Ev::BfPhase(m) => self.bf_phase(m, now),
            Ev::LSlot => self.l_slot(s, now),
        }
    }

    fn cycle_begin(&mut self, s: &mut Scheduler<Ev>, now: SimTime) {
        self.cycle_start = now;
        self.primary = true;
        self.period_index = 0;
        self.awake.iter_mut().for_each(|a| *a = true);
        self.claimant.iter_mut().for_each(|c| *c = false);
        for q in &self.queues {
            for &p in q {
                self.rt[p] = PacketRt::default();
            }
        }
        s.schedule_system(now, Ev::PeriodStart);
        s.schedule_system(now + self.cfg.cycle_us(), Ev::CycleStart);
    }

    fn period_begin(&mut self, s: &mut Scheduler<Ev>, now: SimTime) {
        self.period_start = now;
        self.contended.iter_mut().for_each(|c| *c = false);
        self.channel.prune(now);
        for m in 0..3 {
            let w = self.cfg.awake_windows(m);
            s.schedule_system(now + w.b_start, Ev::BPhase(m));
            s.schedule_system(now + w.r_start, Ev::RPhase(m));
            s.schedule_system(now + w.bf_start, Ev::REnd(m));
            s.schedule_system(now + w.bf_start, Ev::BfPhase(m));
        }
        s.schedule_system(now + self.cfg.l_offset(), Ev::LSlot);
    }

    fn sendable(&self, v: NodeId) -> Option<PacketId> {
        let &p = self.queues[v].front()?;
        (!self.rt[p].deferred).then_some(p)
    }

    fn b_phase(&mut self, m: usize, now: SimTime) {
        let class = b_class(m);
        let contenders: Vec<NodeId> = self.by_class[class as usize]
            .iter()
            .copied()
            .filter(|&v| {
                v != self.sc.sink()
                    && self.awake[v]
                    && (self.primary || self.claimant[v])
                    && self.sendable(v).is_some()
            })
            .collect();
        self.winners.clear();
        if contenders.is_empty() {
            return;
        }
        let out = resolve_contention(
            &contenders,
            &self.sc.backoffs.b_backoff,
            &self.sc.graph,
            &mut self.channel,
            now,
            self.cfg.jamming_us,
            GENERIC_CODE,
        );
        for &v in &contenders {
            self.contended[v] = true;
        }
        for &(v, t) in &out.losers {
            self.ledger.account(v, RadioState::Listen, t - now);
        }
        for (i, &(v, t)) in out.winners.iter().enumerate() {
            self.ledger.account(v, RadioState::Listen, t - now);
            self.ledger.account(v, RadioState::Tx, self.cfg.jamming_us);
            let p = self.sendable(v).expect("contender holds a packet");
            self.winners.push((v, p));
            if out.winners[..i]
                .iter()
                .any(|&(u, tu)| tu == t && self.sc.graph.within_two_hops(u, v))
            {
                self.stats.contention_ties += 1;
            }
            if self.channel.tracing() {
                self.channel.record(TraceLine {
                    time: t,
                    sender: v,
                    kind: TxKind::Jamming,
                    receivers: vec![],
                    outcome: format!("B_{class} win pkt={p}"),
                });
            }
        }
    }

    fn r_phase(&mut self, _m: usize, now: SimTime) {
        let airtime = self.radio.data_us();
        for &(v, p) in &self.winners {
            self.channel
                .transmit(v, now, airtime, TxKind::Data, p as u64);
            self.ledger.account(v, RadioState::Tx, airtime);
            self.stats.data_transmissions += 1;
        }
    }

    fn r_end(&mut self, m: usize, now: SimTime) {
        let class = r_class(m);
        let r_start = self.period_start + self.cfg.awake_windows(m).r_start;
        let airtime = self.radio.data_us();
        let slot = self.cfg.d_r();
        let data: Vec<Transmission> = self
            .channel
            .overlapping(r_start, now)
            .filter(|t| t.kind == TxKind::Data && t.start == r_start)
            .cloned()
            .collect();

        let env = RadioEnv {
            topology: &self.sc.topology,
            graph: &self.sc.graph,
            params: &self.radio,
            model: self.model,
        };
        let mut hearing = vec![false; 0];
        if !data.is_empty() {
            hearing = vec![false; self.sc.len()];
        }
        self.elections.clear();
        for tx in &data {
            let sender = tx.sender;
            let mut decoders = Vec::new();
            let mut lost = Vec::new();
            for &u in self.sc.graph.neighbors(sender) {
                if class_of(self.sc.ring(u)) != class || !self.awake[u] {
                    continue;
                }
                hearing[u] = true;
                if self.sc.ring(u) + 1 != self.sc.ring(sender) {
                    continue;
                }
                if env
                    .reception_outcome(tx, u, &self.channel, &mut self.shadow)
                    .is_delivered()
                {
                    decoders.push(u);
                } else {
                    lost.push(u);
                }
            }
            if self.channel.tracing() {
                let mut receivers = decoders.clone();
                receivers.extend(&lost);
                receivers.sort_unstable();
                let outcome = format!("pkt={} ok:{} lost:{}", tx.tag, join(&decoders), join(&lost));
                self.channel.record(TraceLine {
                    time: tx.start,
                    sender,
                    kind: TxKind::Data,
                    receivers,
                    outcome,
                });
            }
            self.elections.push(Election {
                sender,
                packet: tx.tag as PacketId,
                decoders,
            });
        }

        for &u in &self.by_class[class as usize] {
            if !self.awake[u] {
                continue;
            }
            if hearing.get(u).copied().unwrap_or(false) {
                self.ledger.account(u, RadioState::Rx, airtime);
                self.ledger.account(u, RadioState::Listen, slot - airtime);
            } else {
                self.ledger.account(u, RadioState::Listen, slot);
            }
        }
    }

    fn bf_phase(&mut self, _m: usize, now: SimTime) {
        let elections = std::mem::take(&mut self.elections);
        let jam = self.cfg.jamming_us;
        let bf = self.cfg.d_bf();
        for e in &elections {
            let code = e.packet as u64;
            let out = resolve_contention(
                &e.decoders,
                &self.sc.backoffs.bf_backoff,
                &self.sc.graph,
                &mut self.channel,
                now,
                jam,
                code,
            );
            for &(v, t) in &out.losers {
                self.ledger.account(v, RadioState::Listen, t - now);
            }
            for &(v, t) in &out.winners {
                self.ledger.account(v, RadioState::Listen, t - now);
                self.ledger.account(v, RadioState::Tx, jam);
            }
            debug_assert!(out.winners.len() <= 1, "forwarder election must be unique");
            let forwarder = out.winners.first().copied();

            // The sender listens for the code bound to its packet.
            let ack_at = self
                .channel
                .first_sensed(&self.sc.graph, e.sender, now, now + bf, |t| {
                    t.kind == TxKind::Jamming && t.tag == code
                });
            match ack_at {
                Some(t) => self
                    .ledger
                    .account(e.sender, RadioState::Listen, (t - now) + jam),
                None => self.ledger.account(e.sender, RadioState::Listen, bf),
            }

            if let Some((f, t)) = forwarder {
                if self.channel.tracing() {
                    self.channel.record(TraceLine {
                        time: t,
                        sender: f,
                        kind: TxKind::Jamming,
                        receivers: vec![e.sender],
                        outcome: format!("BF forwarder pkt={}", e.packet),
                    });
                }
                self.hand_over(e.sender, e.packet, f, t);
            } else {
                self.on_failure(e.sender, e.packet, now + bf);
            }
        }
    }

    fn hand_over(&mut self, sender: NodeId, p: PacketId, to: NodeId, at: SimTime) {
        let head = self.queues[sender].pop_front();
        debug_assert_eq!(head, Some(p));
        let ring = self.sc.ring(to);
        let pkt = &mut self.packets[p];
        pkt.hand_over(to, ring, at);
        self.rt[p] = PacketRt::default();
        if to == self.sc.sink() {
            pkt.fate = Fate::Delivered(at);
        } else {
            self.queues[to].push_back(p);
        }
    }

    fn on_failure(&mut self, sender: NodeId, p: PacketId, at: SimTime) {
        if !self.cfg.retransmissions {
            let head = self.queues[sender].pop_front();
            debug_assert_eq!(head, Some(p));
            self.packets[p].fate = Fate::Dropped(at, DropReason::NoAck);
            return;
        }
        let rt = &mut self.rt[p];
        if rt.cycle_retx < self.cfg.max_retx_per_cycle {
            rt.cycle_retx += 1;
            self.packets[p].retx_total += 1;
        } else {
            rt.deferred = true;
        }
    }

    fn l_slot(&mut self, s: &mut Scheduler<Ev>, now: SimTime) {
        let n = self.sc.len();
        let claimants: Vec<NodeId> = (0..n)
            .filter(|&v| self.contended[v] && self.awake[v] && self.sendable(v).is_some())
            .collect();
        let next_index = self.period_index + 1;
        let budget_left = next_index < self.cfg.capacity();
        let jam = budget_left && !claimants.is_empty();

        let l = self.cfg.d_l();
        for v in 0..n {
            if self.awake[v] {
                let state = if jam && self.claimant_flag(&claimants, v) {
                    RadioState::Tx
                } else {
                    RadioState::Listen
                };
                self.ledger.account(v, state, l);
            }
        }
        if !jam {
            return;
        }
        let mut awake = vec![false; n];
        let mut claimant = vec![false; n];
        for &c in &claimants {
            self.channel
                .transmit(c, now, l, TxKind::Jamming, GENERIC_CODE);
            claimant[c] = true;
            awake[c] = true;
            for &u in &self.sc.graph.two_hop[c] {
                awake[u] = true;
            }
            if self.channel.tracing() {
                self.channel.record(TraceLine {
                    time: now,
                    sender: c,
                    kind: TxKind::Jamming,
                    receivers: vec![],
                    outcome: "L claim".into(),
                });
            }
        }
        self.awake = awake;
        self.claimant = claimant;
        self.primary = false;
        self.period_index = next_index;
        self.stats.secondary_periods += 1;
        let start = self.cycle_start + next_index * self.cfg.d_activity();
        debug_assert!(start >= now + l);
        s.schedule_system(start, Ev::PeriodStart);
    }

    fn claimant_flag(&self, claimants: &[NodeId], v: NodeId) -> bool {
        claimants.binary_search(&v).is_ok()
    }
}

fn join(v: &[NodeId]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_graphs, Topology};
    use crate::vcs::BackoffTiming;

    fn graph_of(points: &[(f64, f64)], range: f64) -> NeighborGraph {
        let t = Topology::new(points.to_vec(), 0, 100.0, 100.0, range).unwrap();
        build_graphs(&t)
    }

    #[test]
    fn minimum_backoff_wins() {
        let g = graph_of(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], 10.0);
        // Offsets 2.0, 7.5, 9.9 on a 10 ms window.
        let backoff = vec![0, 2_000, 7_500, 9_900];
        let out = contend_b(&[1, 2, 3], &backoff, &g, 200);
        assert_eq!(out.winners, vec![(1, SimTime(2_000))]);
        assert_eq!(out.losers.len(), 2);
        assert!(out.losers.iter().all(|&(_, t)| t == SimTime(2_000)));
    }

    #[test]
    fn lone_contender_wins_at_its_backoff() {
        let g = graph_of(&[(0.0, 0.0), (1.0, 0.0)], 10.0);
        let out = contend_b(&[1], &[0, 4_300], &g, 200);
        assert_eq!(out.winners, vec![(1, SimTime(4_300))]);
    }

    #[test]
    fn far_apart_contenders_both_win() {
        let g = graph_of(&[(0.0, 0.0), (8.0, 0.0), (16.0, 0.0), (24.0, 0.0)], 10.0);
        let out = contend_b(&[0, 3], &[100, 0, 0, 200], &g, 200);
        assert_eq!(out.winners.len(), 2);
    }

    #[test]
    fn forwarder_is_the_lowest_coordinate() {
        let g = graph_of(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], 10.0);
        // Coordinates 12.1, 14.7, 19.3 with R = 10 -> offsets 2.1, 4.7, 9.3.
        let timing = BackoffTiming::new(10_000, 10);
        let bf: Vec<u64> = [0.0, 2.1, 4.7, 9.3]
            .iter()
            .map(|&o| {
                let c = crate::vcs::Coordinate {
                    ring: 2,
                    offset: o,
                    coord: 10.0 + o,
                };
                crate::vcs::backoff_of(
                    &c,
                    crate::vcs::ContentionPhase::BackoffForward,
                    10.0,
                    timing,
                )
            })
            .collect();
        assert_eq!(elect_forwarder(&[3, 1, 2], &bf, &g, 200), Some(1));
        assert_eq!(elect_forwarder(&[2], &bf, &g, 200), Some(2));
        assert_eq!(elect_forwarder(&[], &bf, &g, 200), None);
    }

    #[test]
    fn identical_backoffs_both_win() {
        let g = graph_of(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 10.0);
        let out = contend_b(&[1, 2], &[0, 500, 500], &g, 200);
        assert_eq!(out.winners.len(), 2);
    }

    fn scenario(points: &[(f64, f64)], cfg: &RtxpConfig) -> Scenario {
        let t = Topology::new(points.to_vec(), 0, 60.0, 60.0, 10.0).unwrap();
        Scenario::build(t, cfg.backoff_timing()).unwrap()
    }

    fn run(
        sc: &Scenario,
        cfg: &RtxpConfig,
        model: Propagation,
        alarms: &[Alarm],
        seed: u64,
        cycles: u64,
    ) -> RunOutcome {
        let opts = SimOptions {
            horizon: SimTime(cycles * cfg.cycle_us()),
            seed,
            trace: true,
        };
        simulate(sc, cfg, &RadioParams::default(), model, alarms, opts).unwrap()
    }

    fn trace_packet(line: &TraceLine) -> Option<PacketId> {
        let rest = line.outcome.split("pkt=").nth(1)?;
        rest.split_whitespace().next()?.parse().ok()
    }

    // Sink S, relay C on ring 1, A and B on ring 2 in range of each other and of C.
    const DIAMOND: [(f64, f64); 4] = [(0.0, 5.0), (8.0, 5.0), (14.0, 9.0), (14.0, 1.0)];

    #[test]
    fn loser_claims_secondary_period_then_network_sleeps() {
        let cfg = RtxpConfig::default();
        let sc = scenario(&DIAMOND, &cfg);
        assert_eq!((sc.ring(1), sc.ring(2), sc.ring(3)), (1, 2, 2));
        let b = &sc.backoffs.b_backoff;
        let (winner, loser) = if b[2] < b[3] { (2, 3) } else { (3, 2) };
        let alarms = [
            Alarm {
                time: SimTime::ZERO,
                origin: winner,
            },
            Alarm {
                time: SimTime::ZERO,
                origin: loser,
            },
        ];
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 1, 3);
        let act = cfg.d_activity();

        // The winner's packet crosses both hops inside the first activity period.
        let w = &out.packets[0];
        assert!(matches!(w.fate, Fate::Delivered(t) if t.as_us() < act));
        assert_eq!(
            w.trace.iter().map(|h| h.node).collect::<Vec<_>>(),
            vec![winner, 1, 0]
        );

        // The loser jams L, sends to C in the secondary period, and C keeps the
        // packet until the next cycle.
        let l = &out.packets[1];
        assert_eq!(
            l.trace.iter().map(|h| h.node).collect::<Vec<_>>(),
            vec![loser, 1, 0]
        );
        let to_c = l.trace[1].at.as_us();
        assert!((act..2 * act).contains(&to_c), "relay at {to_c}");
        let done = l.delay_us().unwrap();
        assert!(
            (cfg.cycle_us()..cfg.cycle_us() + act).contains(&done),
            "delivered at {done}"
        );

        assert_eq!(out.stats.secondary_periods, 1);
        assert_eq!(out.stats.data_transmissions, 4);
        let claims = out.trace.iter().filter(|t| t.outcome == "L claim").count();
        assert_eq!(claims, 1);
        assert!(out
            .trace
            .iter()
            .any(|t| t.outcome == "L claim" && t.sender == loser));
    }

    #[test]
    fn no_claim_no_secondary_period() {
        let cfg = RtxpConfig::default();
        let sc = scenario(&DIAMOND, &cfg);
        let alarms = [Alarm {
            time: SimTime::ZERO,
            origin: 2,
        }];
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 1, 2);
        assert_eq!(out.delivered(), 1);
        assert_eq!(out.stats.secondary_periods, 0);
        assert!(out.trace.iter().all(|t| t.outcome != "L claim"));
    }

    #[test]
    fn queued_packets_drain_through_secondary_periods() {
        let cfg = RtxpConfig::default();
        let sc = scenario(&DIAMOND, &cfg);
        let alarms: Vec<Alarm> = (0..4)
            .map(|_| Alarm {
                time: SimTime::ZERO,
                origin: 2,
            })
            .collect();
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 1, 3);
        assert_eq!(out.delivered(), 4);
        // Cycle 1: node 2 sends one packet per period, three claims. C keeps the
        // last three until cycle 2 and drains them the same way, two claims.
        assert_eq!(out.stats.secondary_periods, 5);
        for p in &out.packets {
            assert!(p.delay_us().unwrap() < 2 * cfg.cycle_us());
        }
    }

    #[test]
    fn rings_decrease_by_one_per_hop() {
        let cfg = RtxpConfig::default();
        let pts: Vec<(f64, f64)> = (0..7).map(|i| (i as f64 * 7.0, 0.0)).collect();
        let sc = scenario(&pts, &cfg);
        let alarms = [
            Alarm {
                time: SimTime::ZERO,
                origin: 6,
            },
            Alarm {
                time: SimTime::from_ms(700),
                origin: 4,
            },
        ];
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 2, 6);
        assert_eq!(out.delivered(), 2);
        for p in &out.packets {
            for pair in p.trace.windows(2) {
                assert_eq!(pair[1].ring + 1, pair[0].ring);
                assert!(pair[1].at > pair[0].at);
            }
            assert!(p.delay_us().unwrap() <= cfg.wctt_us(sc.hops.max_ring));
        }
    }

    #[test]
    fn transmissions_stay_inside_their_phases() {
        let cfg = RtxpConfig::default();
        let pts: Vec<(f64, f64)> = (0..7).map(|i| (i as f64 * 7.0, (i % 2) as f64)).collect();
        let sc = scenario(&pts, &cfg);
        let alarms: Vec<Alarm> = (0..12)
            .map(|k| Alarm {
                time: SimTime::from_ms(300 * k),
                origin: 1 + (k as usize % 6),
            })
            .collect();
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 5, 8);
        assert_eq!(out.delivered(), alarms.len());
        let act = cfg.d_activity();
        let windows: Vec<_> = (0..3).map(|m| cfg.awake_windows(m)).collect();
        for line in &out.trace {
            let within_cycle = line.time.as_us() % cfg.cycle_us();
            assert!(within_cycle < cfg.capacity() * act, "{line}");
            let off = within_cycle % act;
            let ok = if line.outcome.starts_with("B_") {
                windows
                    .iter()
                    .any(|w| (w.b_start..w.r_start).contains(&off))
            } else if line.kind == TxKind::Data {
                windows.iter().any(|w| off == w.r_start)
            } else if line.outcome.starts_with("BF") {
                windows
                    .iter()
                    .any(|w| (w.bf_start..w.bf_end).contains(&off))
            } else {
                off == cfg.l_offset()
            };
            assert!(ok, "out of phase: {line}");
        }
    }

    #[test]
    fn one_data_frame_per_two_hop_neighborhood_per_slot() {
        let cfg = RtxpConfig::default();
        let spec = crate::harness::ExperimentSpec::default();
        let (sc, _, _) = crate::harness::build_scenario(&spec, 120, 0).unwrap();
        let alarms: Vec<Alarm> = (0..40)
            .map(|k| Alarm {
                time: SimTime::from_ms(100 * k),
                origin: 1 + (k as usize * 37) % 119,
            })
            .filter(|a| a.origin != sc.sink())
            .collect();
        let out = run(&sc, &cfg, Propagation::FreeSpace, &alarms, 3, 10);
        assert_eq!(out.delivered(), alarms.len());
        let data: Vec<&TraceLine> = out
            .trace
            .iter()
            .filter(|t| t.kind == TxKind::Data)
            .collect();
        for (i, a) in data.iter().enumerate() {
            for b in &data[i + 1..] {
                if a.time == b.time {
                    assert!(!sc.graph.within_two_hops(a.sender, b.sender), "{a} / {b}");
                }
            }
        }
    }

    #[test]
    fn retransmissions_defer_after_budget() {
        // A lone ring-2 node whose only relay sits at the edge of range: about
        // half the receptions fade.
        let cfg = RtxpConfig::default();
        let sc = scenario(&[(0.0, 0.0), (5.0, 0.0), (14.95, 0.0)], &cfg);
        assert_eq!(sc.ring(2), 2);
        let mut saw_deferral = false;
        for seed in 0..30 {
            let alarms: Vec<Alarm> = (0..5)
                .map(|_| Alarm {
                    time: SimTime::ZERO,
                    origin: 2,
                })
                .collect();
            let out = run(&sc, &cfg, Propagation::LogNormal, &alarms, seed, 40);
            assert_eq!(out.delivered(), alarms.len(), "seed {seed}");
            let mut per_cycle = std::collections::HashMap::new();
            for line in out
                .trace
                .iter()
                .filter(|t| t.kind == TxKind::Data && t.sender == 2)
            {
                let key = (
                    trace_packet(line).unwrap(),
                    line.time.as_us() / cfg.cycle_us(),
                );
                *per_cycle.entry(key).or_insert(0u32) += 1;
            }
            let max = per_cycle.values().copied().max().unwrap();
            assert!(max <= 1 + cfg.max_retx_per_cycle, "seed {seed}: {max}");
            saw_deferral |= max == 1 + cfg.max_retx_per_cycle;
        }
        assert!(saw_deferral);
    }

    #[test]
    fn no_retx_drops_on_first_loss() {
        let cfg = RtxpConfig {
            retransmissions: false,
            ..RtxpConfig::default()
        };
        let sc = scenario(&[(0.0, 0.0), (5.0, 0.0), (14.95, 0.0)], &cfg);
        let alarms: Vec<Alarm> = (0..20)
            .map(|k| Alarm {
                time: SimTime::from_secs(3 * k),
                origin: 2,
            })
            .collect();
        let out = run(&sc, &cfg, Propagation::LogNormal, &alarms, 8, 30);
        let dropped = out
            .packets
            .iter()
            .filter(|p| matches!(p.fate, Fate::Dropped(_, DropReason::NoAck)))
            .count();
        assert!(dropped > 0 && out.delivered() > 0);
        assert_eq!(dropped + out.delivered(), alarms.len());
        assert!(out.packets.iter().all(|p| p.retx_total == 0));
        assert_eq!(
            out.stats.data_transmissions as usize,
            alarms.len() + out.delivered()
        );
    }
}
