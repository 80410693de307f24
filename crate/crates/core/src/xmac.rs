//! X-MAC short-preamble low-power listening with gradient (lower-ring)
//! opportunistic forwarding.

use std::collections::VecDeque;

use crate::des::{RngStream, Scheduler, SimTime, StreamId};
use crate::error::{Error, Result};
use crate::packet::{Alarm, AlarmPacket, DropReason, Fate, Hop, PacketId, RunOutcome, RunStats};
use crate::radio::{
    uniform_us, Channel, EnergyLedger, Propagation, RadioEnv, RadioParams, RadioState, TraceLine,
    Transmission, TxId, TxKind,
};
use crate::rtxp::RtxpConfig;
use crate::scenario::Scenario;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XmacConfig {
    /// Wake-up interval.
    pub cycle_us: u64,
    /// Channel sampling window opened once per cycle.
    pub poll_us: u64,
    pub strobe_us: u64,
    pub response_us: u64,
    pub ack_us: u64,
    /// Longer than the gap between two strobes, so a train in progress is
    /// always sensed.
    pub cca_us: u64,
    pub backoff_slot_us: u64,
    /// Initial contention window, in backoff slots.
    pub backoff_window: u64,
    pub max_doublings: u32,
    pub max_retries: u32,
}

impl XmacConfig {
    /// One third of the RTXP duty-cycle period.
    pub fn from_rtxp(cfg: &RtxpConfig, max_retries: u32) -> Self {
        XmacConfig {
            cycle_us: cfg.cycle_us() / 3,
            max_retries,
            ..XmacConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strobe_us == 0 || self.response_us == 0 || self.cca_us == 0 {
            return Err(Error::Config(
                "x-mac strobe, response and cca durations must be positive".into(),
            ));
        }
        if self.poll_us < self.strobe_us || self.cycle_us < self.poll_us {
            return Err(Error::Config(
                "x-mac poll window must fit one strobe and fit in the cycle".into(),
            ));
        }
        if self.cca_us <= self.response_us {
            return Err(Error::Config(
                "x-mac cca must outlast the response slot".into(),
            ));
        }
        if self.backoff_window == 0 {
            return Err(Error::Config(
                "x-mac backoff window must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Longest strobe train: covers one full wake-up interval plus a poll window.
    pub fn train_us(&self) -> u64 {
        self.cycle_us + self.poll_us
    }

    /// Eq-6 style deadline with the X-MAC cycle in place of the RTXP cycle.
    pub fn deadline_us(&self, nb_hop_max: u32) -> u64 {
        (nb_hop_max as u64 + 1) * self.cycle_us
    }
}

impl Default for XmacConfig {
    fn default() -> Self {
        XmacConfig {
            cycle_us: 807_466,
            poll_us: 1_500,
            strobe_us: 500,
            response_us: 500,
            ack_us: 500,
            cca_us: 600,
            backoff_slot_us: 200,
            backoff_window: 32,
            max_doublings: 3,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct XmacOptions {
    pub horizon: SimTime,
    pub seed: u64,
    pub trace: bool,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Alarm(PacketId),
    Poll(NodeId),
    CcaEnd(NodeId),
    StrobeEnd(NodeId),
    ResponseEnd(NodeId),
    DataEnd(NodeId),
    AckEnd(NodeId),
}

type CopyId = usize;

#[derive(Debug, Clone)]
struct PacketCopy {
    packet: PacketId,
    trace: Vec<Hop>,
    retries: u32,
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    queue: VecDeque<CopyId>,
    phase: u64,
    /// An attempt (CCA, backoff, train, data, ack) is under way.
    active: bool,
    /// Radio busy with the node's own train, data or ack wait.
    sending: bool,
    engaged_until: SimTime,
    cca_from: SimTime,
    doublings: u32,
    train: Option<TxId>,
    train_start: SimTime,
    strobe_start: SimTime,
    responders: Vec<(NodeId, TxId)>,
    peer: Option<NodeId>,
    data_tx: Option<TxId>,
    ack_tx: Option<TxId>,
}

struct XmacSim<'a> {
    sc: &'a Scenario,
    cfg: XmacConfig,
    radio: RadioParams,
    model: Propagation,
    channel: Channel,
    shadow: RngStream,
    backoff: RngStream,
    nodes: Vec<NodeState>,
    copies: Vec<PacketCopy>,
    live: Vec<u32>,
    /// `seen[node * alarms + packet]`: the node already queued a copy.
    seen: Vec<bool>,
    /// Latest copy drop per packet, the packet's fate once no copy is left.
    last_drop: Vec<Option<(SimTime, DropReason)>>,
    packets: Vec<AlarmPacket>,
    ledger: EnergyLedger,
    stats: RunStats,
    horizon: SimTime,
    pruned_at: u64,
}

/// Run X-MAC with gradient forwarding over `alarms` until `opts.horizon`.
pub fn simulate(
    sc: &Scenario,
    cfg: &XmacConfig,
    radio: &RadioParams,
    model: Propagation,
    alarms: &[Alarm],
    opts: XmacOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    radio.validate()?;
    let n = sc.len();
    let mut backoff = RngStream::new(opts.seed, StreamId::CsmaBackoff);
    let nodes = (0..n)
        .map(|_| NodeState {
            phase: uniform_us(&mut backoff, 0, cfg.cycle_us - 1),
            ..NodeState::default()
        })
        .collect::<Vec<_>>();
    let mut sim = XmacSim {
        sc,
        cfg: *cfg,
        radio: *radio,
        model,
        channel: Channel::new(opts.trace),
        shadow: RngStream::new(opts.seed, StreamId::Shadowing),
        backoff,
        nodes,
        copies: Vec::new(),
        live: vec![0; alarms.len()],
        seen: vec![false; n * alarms.len()],
        last_drop: vec![None; alarms.len()],
        packets: alarms
            .iter()
            .enumerate()
            .map(|(id, a)| AlarmPacket::new(id, *a, sc.ring(a.origin)))
            .collect(),
        ledger: EnergyLedger::new(n),
        stats: RunStats::default(),
        horizon: opts.horizon,
        pruned_at: 0,
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
    for v in 0..n {
        sched.schedule_system(SimTime(sim.nodes[v].phase), Ev::Poll(v));
    }
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

impl XmacSim<'_> {
    fn dispatch(&mut self, s: &mut Scheduler<Ev>, ev: Ev) {
        let now = s.now();
        // Lookbacks never exceed one wakeup train, so older records are dead weight.
        if now.as_us() >= self.pruned_at + 2 * self.cfg.train_us() {
            self.pruned_at = now.as_us() - self.cfg.train_us();
            self.channel.prune(SimTime(self.pruned_at));
        }
        match ev {
            Ev::Alarm(p) => {
                let a = &self.packets[p];
                let origin = a.origin;
                let copy = PacketCopy {
                    packet: p,
                    trace: a.trace.clone(),
                    retries: 0,
                };
                self.copies.push(copy);
                self.live[p] += 1;
                self.nodes[origin].queue.push_back(self.copies.len() - 1);
                self.kick(s, origin, now);
            }
            Ev::Poll(v) => {
                let st = &self.nodes[v];
                if !st.sending && st.engaged_until <= now {
                    let d = self.cfg.poll_us.min(self.horizon - now);
                    self.ledger.account(v, RadioState::Listen, d);
                }
                s.schedule_system(now + self.cfg.cycle_us, Ev::Poll(v));
            }
            Ev::CcaEnd(v) => self.cca_end(s, v, now),
            Ev::StrobeEnd(v) => self.strobe_end(s, v, now),
            Ev::ResponseEnd(v) => self.response_end(s, v, now),
            Ev::DataEnd(v) => self.data_end(s, v, now),
            Ev::AckEnd(v) => self.ack_end(s, v, now),
        }
    }

    /// Start an attempt at `v` if it is idle and has something to send.
    fn kick(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let st = &mut self.nodes[v];
        if st.active || st.queue.is_empty() {
            return;
        }
        st.active = true;
        // Every attempt opens with a random backoff, wider after each failure, so a
        // node that just lost a train cannot recapture the channel ahead of waiters.
        let retries = self.copies[*st.queue.front().expect("queued copy")].retries;
        st.doublings = retries.min(self.cfg.max_doublings);
        let window = self.cfg.backoff_window << st.doublings;
        let wait = uniform_us(&mut self.backoff, 1, window) * self.cfg.backoff_slot_us;
        let from = (now + wait).max(st.engaged_until);
        st.cca_from = from;
        s.schedule_system(from + self.cfg.cca_us, Ev::CcaEnd(v));
    }

    fn cca_end(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let from = self.nodes[v].cca_from;
        self.ledger.account(v, RadioState::Listen, now - from);
        let busy = self.nodes[v].engaged_until > from
            || self.channel.carrier_sense(&self.sc.graph, v, from, now);
        if busy {
            let st = &mut self.nodes[v];
            let window = self.cfg.backoff_window << st.doublings.min(self.cfg.max_doublings);
            st.doublings = (st.doublings + 1).min(self.cfg.max_doublings);
            let wait = uniform_us(&mut self.backoff, 1, window) * self.cfg.backoff_slot_us;
            let start = (now + wait).max(self.nodes[v].engaged_until);
            self.nodes[v].cca_from = start;
            s.schedule_system(start + self.cfg.cca_us, Ev::CcaEnd(v));
            return;
        }
        let head = *self.nodes[v]
            .queue
            .front()
            .expect("active node holds a copy");
        let strobe = self
            .channel
            .transmit(v, now, self.cfg.strobe_us, TxKind::Strobe, head as u64);
        let st = &mut self.nodes[v];
        st.sending = true;
        st.train = Some(strobe);
        st.train_start = now;
        st.strobe_start = now;
        s.schedule_system(now + self.cfg.strobe_us, Ev::StrobeEnd(v));
    }

    fn polling(&self, u: NodeId, from: SimTime, to: SimTime) -> bool {
        if u == self.sc.sink() {
            return true;
        }
        let phase = self.nodes[u].phase;
        if from.as_us() < phase {
            return false;
        }
        let k = (from.as_us() - phase) / self.cfg.cycle_us;
        let open = phase + k * self.cfg.cycle_us;
        to.as_us() <= open + self.cfg.poll_us
    }

    fn decodes(&mut self, tx: &Transmission, receiver: NodeId) -> bool {
        let env = RadioEnv {
            topology: &self.sc.topology,
            graph: &self.sc.graph,
            params: &self.radio,
            model: self.model,
        };
        env.reception_outcome(tx, receiver, &self.channel, &mut self.shadow)
            .is_delivered()
    }

    fn strobe_end(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let start = self.nodes[v].strobe_start;
        self.ledger.account(v, RadioState::Tx, now - start);
        let id = self.nodes[v].train.expect("train in progress");
        let strobe = self.channel.get(id).cloned().expect("strobe logged");
        let ring = self.sc.ring(v);
        let mut responders = Vec::new();
        for &u in self.sc.graph.neighbors(v) {
            let su = &self.nodes[u];
            if self.sc.ring(u) >= ring
                || su.sending
                || su.engaged_until > start
                || !self.polling(u, start, now)
            {
                continue;
            }
            responders.push(u);
        }
        responders.retain(|&u| self.decodes(&strobe, u));
        let resp_end = now + self.cfg.response_us;
        let mut sent = Vec::with_capacity(responders.len());
        for u in responders {
            let tx =
                self.channel
                    .transmit(u, now, self.cfg.response_us, TxKind::Response, v as u64);
            self.ledger.account(u, RadioState::Tx, self.cfg.response_us);
            self.nodes[u].engaged_until = resp_end;
            sent.push((u, tx));
        }
        self.nodes[v].responders = sent;
        s.schedule_system(resp_end, Ev::ResponseEnd(v));
    }

    fn response_end(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        self.ledger
            .account(v, RadioState::Listen, self.cfg.response_us);
        let responders = std::mem::take(&mut self.nodes[v].responders);
        let mut chosen = None;
        if responders.len() == 1 {
            let (u, tx) = responders[0];
            let t = self.channel.get(tx).cloned().expect("response logged");
            if self.decodes(&t, v) {
                chosen = Some(u);
            }
        }
        match chosen {
            Some(u) => {
                self.nodes[v].train = None;
                let head = *self.nodes[v].queue.front().expect("copy");
                let airtime = self.radio.data_us();
                let tx = self
                    .channel
                    .transmit(v, now, airtime, TxKind::Data, head as u64);
                self.ledger.account(v, RadioState::Tx, airtime);
                self.stats.data_transmissions += 1;
                self.nodes[u].engaged_until = now + airtime + self.cfg.ack_us;
                let st = &mut self.nodes[v];
                st.peer = Some(u);
                st.data_tx = Some(tx);
                s.schedule_system(now + airtime, Ev::DataEnd(v));
            }
            None => {
                let st = &self.nodes[v];
                if now + self.cfg.strobe_us <= st.train_start + self.cfg.train_us() {
                    let head = *st.queue.front().expect("copy");
                    let id = self.channel.transmit(
                        v,
                        now,
                        self.cfg.strobe_us,
                        TxKind::Strobe,
                        head as u64,
                    );
                    self.nodes[v].train = Some(id);
                    self.nodes[v].strobe_start = now;
                    s.schedule_system(now + self.cfg.strobe_us, Ev::StrobeEnd(v));
                } else {
                    self.nodes[v].train = None;
                    self.trace_attempt(v, now, None, "no-response");
                    self.attempt_failed(s, v, now);
                }
            }
        }
    }

    fn data_end(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let u = self.nodes[v].peer.expect("peer chosen");
        let tx = self.nodes[v].data_tx.take().expect("data sent");
        let t = self.channel.get(tx).cloned().expect("data logged");
        let airtime = self.radio.data_us();
        let ok = self.decodes(&t, u);
        if ok {
            self.ledger.account(u, RadioState::Rx, airtime);
            let ack = self
                .channel
                .transmit(u, now, self.cfg.ack_us, TxKind::Ack, v as u64);
            self.ledger.account(u, RadioState::Tx, self.cfg.ack_us);
            self.nodes[v].ack_tx = Some(ack);
            let head = *self.nodes[v].queue.front().expect("copy");
            self.receive_copy(s, u, head, now);
        } else {
            self.ledger.account(u, RadioState::Listen, airtime);
            self.nodes[v].ack_tx = None;
        }
        self.trace_attempt(
            v,
            t.start,
            Some(u),
            if ok { "data-ok" } else { "data-lost" },
        );
        s.schedule_system(now + self.cfg.ack_us, Ev::AckEnd(v));
    }

    fn receive_copy(&mut self, s: &mut Scheduler<Ev>, u: NodeId, from: CopyId, at: SimTime) {
        let src = &self.copies[from];
        let p = src.packet;
        let mut trace = src.trace.clone();
        trace.push(Hop {
            node: u,
            ring: self.sc.ring(u),
            at,
        });
        let pkt = &mut self.packets[p];
        if u == self.sc.sink() {
            if matches!(pkt.fate, Fate::Delivered(_)) {
                self.stats.duplicates += 1;
            } else {
                pkt.holder = u;
                pkt.trace = trace;
                pkt.fate = Fate::Delivered(at);
            }
            return;
        }
        // Sequence-number filtering: a repeat after a lost ack is acked and discarded.
        let key = u * self.live.len() + p;
        if self.seen[key] {
            self.stats.duplicates += 1;
            return;
        }
        self.seen[key] = true;
        if !matches!(pkt.fate, Fate::Delivered(_)) && trace.len() > pkt.trace.len() {
            pkt.holder = u;
            pkt.trace = trace.clone();
        }
        self.copies.push(PacketCopy {
            packet: p,
            trace,
            retries: 0,
        });
        self.live[p] += 1;
        self.nodes[u].queue.push_back(self.copies.len() - 1);
        self.kick(s, u, at);
    }

    fn ack_end(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        self.ledger.account(v, RadioState::Listen, self.cfg.ack_us);
        let acked = match self.nodes[v].ack_tx.take() {
            Some(tx) => {
                let t = self.channel.get(tx).cloned().expect("ack logged");
                self.decodes(&t, v)
            }
            None => false,
        };
        self.nodes[v].peer = None;
        if acked {
            let c = self.nodes[v].queue.pop_front().expect("copy");
            self.retire(c, now, None);
            self.finish(s, v, now);
        } else {
            self.attempt_failed(s, v, now);
        }
    }

    fn attempt_failed(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let c = *self.nodes[v].queue.front().expect("copy");
        if self.copies[c].retries < self.cfg.max_retries {
            self.copies[c].retries += 1;
            let p = self.copies[c].packet;
            self.packets[p].retx_total += 1;
        } else {
            self.nodes[v].queue.pop_front();
            let reason = if self.cfg.max_retries == 0 {
                DropReason::NoAck
            } else {
                DropReason::RetryLimit
            };
            self.retire(c, now, Some(reason));
        }
        self.finish(s, v, now);
    }

    fn retire(&mut self, c: CopyId, now: SimTime, dropped: Option<DropReason>) {
        let p = self.copies[c].packet;
        self.live[p] -= 1;
        if let Some(reason) = dropped {
            self.last_drop[p] = Some((now, reason));
        }
        if self.live[p] == 0 && self.packets[p].fate == Fate::InFlight {
            if let Some((at, reason)) = self.last_drop[p] {
                self.packets[p].fate = Fate::Dropped(at, reason);
            }
        }
    }

    fn finish(&mut self, s: &mut Scheduler<Ev>, v: NodeId, now: SimTime) {
        let st = &mut self.nodes[v];
        st.sending = false;
        st.active = false;
        self.kick(s, v, now);
    }

    fn trace_attempt(&mut self, v: NodeId, at: SimTime, peer: Option<NodeId>, outcome: &str) {
        if !self.channel.tracing() {
            return;
        }
        let c = self.nodes[v].queue.front().copied().unwrap_or(usize::MAX);
        let pkt = self.copies.get(c).map(|x| x.packet).unwrap_or(usize::MAX);
        self.channel.record(TraceLine {
            time: at,
            sender: v,
            kind: if peer.is_some() {
                TxKind::Data
            } else {
                TxKind::Strobe
            },
            receivers: peer.into_iter().collect(),
            outcome: format!("pkt={pkt} {outcome}"),
        });
    }
}
