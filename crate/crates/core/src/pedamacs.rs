//! Idealized PEDAMACS: BFS tree toward the sink and a collision-free TDMA
//! frame repeated from t = 0.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::des::{RngStream, Scheduler, SimTime, StreamId};
use crate::error::{Error, Result};
use crate::packet::{Alarm, AlarmPacket, DropReason, Fate, PacketId, RunOutcome, RunStats};
use crate::radio::{
    link_margin_db, shadowing_draw, EnergyLedger, Propagation, RadioParams, RadioState, TraceLine,
    TxKind,
};
use crate::topology::{HopCounts, NeighborGraph, NodeId, Topology};

/// Packet airtime plus two 200 µs guard slots.
pub const DEFAULT_T_SLOT_US: u64 = 2_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeRouting {
    pub parent: Vec<Option<NodeId>>,
    pub depth: Vec<u32>,
}

impl TreeRouting {
    pub fn children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(n))
            .map(|(c, _)| c)
    }
}

/// Parent = lowest-id neighbor one ring closer to the sink.
pub fn build_tree(graph: &NeighborGraph, hops: &HopCounts, sink: NodeId) -> TreeRouting {
    let n = graph.len();
    let parent = (0..n)
        .map(|v| {
            if v == sink {
                return None;
            }
            let r = hops.ring(v);
            graph
                .neighbors(v)
                .iter()
                .copied()
                .find(|&u| hops.ring(u) + 1 == r)
        })
        .collect();
    TreeRouting {
        parent,
        depth: (0..n).map(|v| hops.ring(v)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Link {
    pub sender: NodeId,
    pub receiver: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdmaSchedule {
    pub slots: Vec<Vec<Link>>,
    pub t_slot_us: u64,
}

impl TdmaSchedule {
    pub fn frame_len(&self) -> usize {
        self.slots.len()
    }

    pub fn frame_us(&self) -> u64 {
        self.slots.len() as u64 * self.t_slot_us
    }

    /// Frame offsets (slot indices) owned by each node, ascending.
    pub fn owned_slots(&self, nodes: usize) -> Vec<Vec<usize>> {
        let mut owned = vec![Vec::new(); nodes];
        for (i, slot) in self.slots.iter().enumerate() {
            for l in slot {
                owned[l.sender].push(i);
            }
        }
        owned
    }

    /// Text dump: a header line, then `slot sender>receiver ...` per slot.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# frame {} t_slot_us {}\n",
            self.slots.len(),
            self.t_slot_us
        );
        for (i, slot) in self.slots.iter().enumerate() {
            let _ = write!(out, "{i}");
            for l in slot {
                let _ = write!(out, " {}>{}", l.sender, l.receiver);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t_slot_us = None;
        let mut slots = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let f: Vec<&str> = h.split_whitespace().collect();
                if let Some(i) = f.iter().position(|&w| w == "t_slot_us") {
                    let v = f
                        .get(i + 1)
                        .and_then(|s| s.parse().ok())
                        .ok_or(Error::Parse {
                            line: line_no,
                            msg: "bad t_slot_us".into(),
                        })?;
                    t_slot_us = Some(v);
                }
                continue;
            }
            let mut words = line.split_whitespace();
            let idx: usize = words
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or(Error::Parse {
                    line: line_no,
                    msg: "expected slot index".into(),
                })?;
            if idx != slots.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("slot {idx} out of order"),
                });
            }
            let mut links = Vec::new();
            for w in words {
                let (s, r) = w.split_once('>').ok_or(Error::Parse {
                    line: line_no,
                    msg: format!("bad link `{w}`"),
                })?;
                let parse = |x: &str| {
                    x.parse::<NodeId>().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad node `{x}`"),
                    })
                };
                links.push(Link {
                    sender: parse(s)?,
                    receiver: parse(r)?,
                });
            }
            slots.push(links);
        }
        Ok(TdmaSchedule {
            slots,
            t_slot_us: t_slot_us.unwrap_or(DEFAULT_T_SLOT_US),
        })
    }
}

/// Two links conflict when their senders lie within two hops of each other
/// (which covers shared nodes and a sender audible at the other receiver).
fn conflicts(a: Link, b: Link, graph: &NeighborGraph) -> bool {
    a.sender == b.sender || graph.within_two_hops(a.sender, b.sender)
}

/// Level-by-level schedule: depths are visited from the deepest to 1 and the
/// nodes of one depth are greedily packed into slots (one slot per node). A
/// packet held anywhere reaches the sink within the frame, since every
/// parent's slot follows its children's.
pub fn compute_schedule(
    graph: &NeighborGraph,
    tree: &TreeRouting,
    sink: NodeId,
    t_slot_us: u64,
) -> Result<TdmaSchedule> {
    let n = graph.len();
    for v in 0..n {
        if v != sink && tree.parent[v].is_none() {
            return Err(Error::DisconnectedTopology(v));
        }
    }
    let max_depth = tree.depth.iter().copied().max().unwrap_or(0);
    let mut slots: Vec<Vec<Link>> = Vec::new();
    for d in (1..=max_depth).rev() {
        let phase_start = slots.len();
        for v in (0..n).filter(|&v| v != sink && tree.depth[v] == d) {
            let link = Link {
                sender: v,
                receiver: tree.parent[v].expect("connected"),
            };
            let free = slots[phase_start..]
                .iter()
                .position(|sl| sl.iter().all(|&a| !conflicts(a, link, graph)));
            match free {
                Some(i) => slots[phase_start + i].push(link),
                None => slots.push(vec![link]),
            }
        }
    }
    Ok(TdmaSchedule { slots, t_slot_us })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Interference {
        slot: usize,
        a: Link,
        b: Link,
    },
    NotTreeLink {
        slot: usize,
        link: Link,
    },
    NoSlot {
        node: NodeId,
    },
    /// A packet starting at `node` at frame start cannot reach the sink
    /// within the frame.
    PathOrder {
        node: NodeId,
    },
    FrameTooLong {
        len: usize,
        bound: usize,
    },
}

/// Brute-force audit of a schedule. Hop distances come from the positions
/// directly, not from the cached neighbor graph.
pub fn check_schedule(
    topo: &Topology,
    tree: &TreeRouting,
    schedule: &TdmaSchedule,
) -> Vec<Violation> {
    let n = topo.len();
    let adj = |a: NodeId, b: NodeId| a != b && topo.distance(a, b) <= topo.range;
    let within2 =
        |a: NodeId, b: NodeId| a == b || adj(a, b) || (0..n).any(|m| adj(a, m) && adj(m, b));
    let mut out = Vec::new();
    for (i, slot) in schedule.slots.iter().enumerate() {
        for (x, &a) in slot.iter().enumerate() {
            if a.sender >= n || tree.parent[a.sender] != Some(a.receiver) {
                out.push(Violation::NotTreeLink { slot: i, link: a });
                continue;
            }
            for &b in &slot[x + 1..] {
                if b.sender >= n || b.receiver >= n {
                    continue;
                }
                let nodes_a = [a.sender, a.receiver];
                let nodes_b = [b.sender, b.receiver];
                let shared = nodes_a.iter().any(|p| nodes_b.contains(p));
                let audible = adj(a.sender, b.receiver) || adj(b.sender, a.receiver);
                if shared || audible || within2(a.sender, b.sender) {
                    out.push(Violation::Interference { slot: i, a, b });
                }
            }
        }
    }
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, slot) in schedule.slots.iter().enumerate() {
        for l in slot {
            if l.sender < n {
                owned[l.sender].push(i);
            }
        }
    }
    for v in (0..n).filter(|&v| v != topo.sink) {
        if owned[v].is_empty() {
            out.push(Violation::NoSlot { node: v });
            continue;
        }
        // Follow the packet: earliest owned slot after the previous hop.
        let mut at: Option<usize> = None;
        let mut node = v;
        let mut ok = true;
        while node != topo.sink {
            let next = owned[node]
                .iter()
                .copied()
                .find(|&s| at.is_none_or(|a| s > a));
            match (next, tree.parent[node]) {
                (Some(s), Some(p)) => {
                    at = Some(s);
                    node = p;
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            out.push(Violation::PathOrder { node: v });
        }
    }
    let bound = 3 * (n - 1);
    if schedule.frame_len() > bound {
        out.push(Violation::FrameTooLong {
            len: schedule.frame_len(),
            bound,
        });
    }
    out
}

/// WCTT_PEDAMACS = 3 (|V| - 1) T_slot.
pub fn wctt_us(nodes: usize, t_slot_us: u64) -> u64 {
    3 * (nodes as u64 - 1) * t_slot_us
}

#[derive(Debug, Clone, Copy)]
pub struct PedamacsOptions {
    pub horizon: SimTime,
    pub seed: u64,
    pub trace: bool,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Alarm(PacketId),
    Slot(NodeId),
}

/// Next start of an owned slot at or after `t`.
fn next_owned(owned: &[usize], frame_len: usize, t_slot: u64, t: SimTime) -> SimTime {
    let frame = frame_len as u64 * t_slot;
    let base = t.as_us() / frame * frame;
    let within = t.as_us() - base;
    for &o in owned {
        if o as u64 * t_slot >= within {
            return SimTime(base + o as u64 * t_slot);
        }
    }
    SimTime(base + frame + owned[0] as u64 * t_slot)
}

/// Repeat `schedule` from t = 0 and move `alarms` along the tree, one packet
/// per owned slot (FIFO). No retransmissions.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    topo: &Topology,
    tree: &TreeRouting,
    schedule: &TdmaSchedule,
    radio: &RadioParams,
    model: Propagation,
    alarms: &[Alarm],
    opts: PedamacsOptions,
) -> Result<RunOutcome> {
    let n = topo.len();
    let t_slot = schedule.t_slot_us;
    let airtime = radio.data_us();
    if airtime > t_slot {
        return Err(Error::Config(format!(
            "data airtime {airtime} us exceeds T_slot {t_slot} us"
        )));
    }
    let owned = schedule.owned_slots(n);
    let frame_len = schedule.frame_len();
    let mut packets: Vec<AlarmPacket> = alarms
        .iter()
        .enumerate()
        .map(|(id, a)| AlarmPacket::new(id, *a, tree.depth[a.origin]))
        .collect();
    let mut queues: Vec<VecDeque<PacketId>> = vec![VecDeque::new(); n];
    let mut armed = vec![false; n];
    let mut ledger = EnergyLedger::new(n);
    let mut stats = RunStats::default();
    let mut shadow = RngStream::new(opts.seed, StreamId::Shadowing);
    let mut trace = Vec::new();

    let mut sched: Scheduler<Ev> = Scheduler::new();
    for (id, a) in alarms.iter().enumerate() {
        if a.origin == topo.sink || a.origin >= n {
            return Err(Error::Config(format!(
                "alarm origin {} is not a sensor node",
                a.origin
            )));
        }
        sched.schedule_system(a.time, Ev::Alarm(id));
    }

    // Parents listen in every child slot; actual receptions are converted below.
    let h = opts.horizon.as_us();
    let frame_us = schedule.frame_us();
    for slot in schedule.slots.iter().enumerate() {
        let (i, links) = slot;
        let start = i as u64 * t_slot;
        let occurrences = if h >= start + t_slot {
            (h - start - t_slot) / frame_us + 1
        } else {
            0
        };
        for l in links {
            ledger.account(l.receiver, RadioState::Listen, occurrences * t_slot);
        }
    }

    let arm = |s: &mut Scheduler<Ev>, armed: &mut [bool], v: NodeId, from: SimTime| {
        if !armed[v] {
            armed[v] = true;
            let at = next_owned(&owned[v], frame_len, t_slot, from);
            s.schedule_system(at, Ev::Slot(v));
        }
    };

    sched.run_until(opts.horizon, |s, ev| {
        let now = s.now();
        match ev.payload {
            Ev::Alarm(p) => {
                let v = packets[p].origin;
                queues[v].push_back(p);
                arm(s, &mut armed, v, now);
            }
            Ev::Slot(v) => {
                armed[v] = false;
                let Some(p) = queues[v].pop_front() else {
                    return;
                };
                let end = now + airtime;
                if end > opts.horizon {
                    queues[v].push_front(p);
                    return;
                }
                let parent = tree.parent[v].expect("tree link");
                ledger.account(v, RadioState::Tx, airtime);
                stats.data_transmissions += 1;
                let ok = match model {
                    Propagation::FreeSpace => true,
                    Propagation::LogNormal => {
                        let margin = link_margin_db(
                            topo.distance(v, parent),
                            topo.range,
                            radio.path_loss_exponent,
                        );
                        shadowing_draw(&mut shadow, radio.shadowing_sigma_db) + margin >= 0.0
                    }
                };
                if opts.trace {
                    trace.push(TraceLine {
                        time: now,
                        sender: v,
                        kind: TxKind::Data,
                        receivers: vec![parent],
                        outcome: format!("pkt={p} {}", if ok { "ok" } else { "lost" }),
                    });
                }
                if ok {
                    // Listening converted to reception for the airtime.
                    ledger.account(parent, RadioState::Rx, airtime);
                    ledger.debit(parent, RadioState::Listen, airtime);
                    packets[p].hand_over(parent, tree.depth[parent], end);
                    if parent == topo.sink {
                        packets[p].fate = Fate::Delivered(end);
                    } else {
                        queues[parent].push_back(p);
                        arm(s, &mut armed, parent, end);
                    }
                } else {
                    packets[p].fate = Fate::Dropped(end, DropReason::LinkFailure);
                }
                if !queues[v].is_empty() {
                    arm(s, &mut armed, v, now + 1);
                }
            }
        }
    });
    stats.events = sched.dispatched();
    ledger.finalize(h)?;
    Ok(RunOutcome {
        packets,
        energy: ledger,
        end_time: opts.horizon,
        stats,
        trace,
    })
}
