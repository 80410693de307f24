//! Experiment specification, traffic, ensemble runs, aggregation and output.

use std::fmt::{self, Write as _};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::des::{mix_seed, RngStream, SimTime, StreamId};
use crate::error::{Error, Result};
use crate::packet::{Alarm, PacketRecord, RunOutcome, RunStats};
use crate::pedamacs::{self, PedamacsOptions};
use crate::radio::{Propagation, RadioParams};
use crate::rtxp::{self, DutyCycle, RtxpConfig, SimOptions};
use crate::scenario::Scenario;
use crate::topology::{generate_uniform, NodeId, SinkPlacement, Topology};
use crate::xmac::{self, XmacConfig, XmacOptions};

/// Attempts at drawing a connected deployment before giving up.
const MAX_REGENERATIONS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Rtxp,
    RtxpNoRetx,
    Pedamacs,
    XmacGradient,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Rtxp => "rtxp",
            Protocol::RtxpNoRetx => "rtxp-no-retx",
            Protocol::Pedamacs => "pedamacs",
            Protocol::XmacGradient => "xmac-gradient",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rtxp" => Ok(Protocol::Rtxp),
            "rtxp-no-retx" => Ok(Protocol::RtxpNoRetx),
            "pedamacs" => Ok(Protocol::Pedamacs),
            "xmac-gradient" | "xmac" => Ok(Protocol::XmacGradient),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub channel: Propagation,
    pub node_counts: Vec<usize>,
    pub replications: usize,
    pub alarm_period_us: u64,
    pub alarms: usize,
    pub seed: u64,
    /// Simulated time after the last alarm, in multiples of the delay bound.
    pub drain_bounds: u64,
    pub width: f64,
    pub height: f64,
    pub range: f64,
    pub sink: SinkPlacement,
    pub radio: RadioParams,
    pub rtxp: RtxpConfig,
    pub t_slot_us: u64,
    pub xmac: XmacConfig,
    pub trace: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let rtxp = RtxpConfig::default();
        ExperimentSpec {
            protocol: Protocol::Rtxp,
            channel: Propagation::FreeSpace,
            node_counts: (1..=8).map(|m| m * 100).collect(),
            replications: 20,
            alarm_period_us: 5_000_000,
            alarms: 200,
            seed: 1,
            drain_bounds: 2,
            width: 50.0,
            height: 50.0,
            range: 10.0,
            sink: SinkPlacement::Corner,
            radio: RadioParams::default(),
            rtxp,
            t_slot_us: pedamacs::DEFAULT_T_SLOT_US,
            xmac: XmacConfig::from_rtxp(&rtxp, 5),
            trace: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{value}` for `{key}`"))),
    }
}

/// Seconds with up to microsecond precision.
pub fn parse_seconds(key: &str, value: &str) -> Result<u64> {
    let s: f64 = parse(key, value)?;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Config(format!("`{key}` must be positive")));
    }
    Ok((s * 1e6).round() as u64)
}

pub fn parse_node_counts(key: &str, value: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let n: usize = parse(key, part)?;
        if n < 2 {
            return Err(Error::Config(format!(
                "`{key}`: need at least 2 nodes, got {n}"
            )));
        }
        out.push(n);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("`{key}` is empty")));
    }
    Ok(out)
}

fn fmt_seconds(us: u64) -> String {
    let s = format!("{:.6}", us as f64 / 1e6);
    let s = s.trim_end_matches('0');
    s.strip_suffix('.')
        .map(|x| x.to_string())
        .unwrap_or_else(|| s.to_string())
}

impl ExperimentSpec {
    /// Set one `section.key` (or bare experiment key) from text.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "protocol" | "experiment.protocol" => self.protocol = value.parse()?,
            "channel" | "experiment.channel" => self.channel = value.parse()?,
            "nodes" | "experiment.nodes" => self.node_counts = parse_node_counts(key, value)?,
            "replications" | "experiment.replications" => self.replications = parse(key, value)?,
            "alarm_period" | "experiment.alarm_period" => {
                self.alarm_period_us = parse_seconds(key, value)?
            }
            "alarms" | "experiment.alarms" => self.alarms = parse(key, value)?,
            "seed" | "experiment.seed" => self.seed = parse(key, value)?,
            "drain_bounds" | "experiment.drain_bounds" => self.drain_bounds = parse(key, value)?,
            "trace" | "experiment.trace" => self.trace = parse_bool(key, value)?,
            "topology.width" => self.width = parse(key, value)?,
            "topology.height" => self.height = parse(key, value)?,
            "topology.range" => self.range = parse(key, value)?,
            "topology.sink" => self.sink = value.parse()?,
            "radio.bitrate_bps" => self.radio.bitrate_bps = parse(key, value)?,
            "radio.packet_bytes" => self.radio.packet_bytes = parse(key, value)?,
            "radio.path_loss_exponent" => self.radio.path_loss_exponent = parse(key, value)?,
            "radio.shadowing_sigma_db" => self.radio.shadowing_sigma_db = parse(key, value)?,
            "radio.jamming_us" => {
                self.radio.jamming_us = parse(key, value)?;
                self.rtxp.jamming_us = self.radio.jamming_us;
            }
            "rtxp.duty_cycle" => {
                self.rtxp.duty_cycle = DutyCycle::from_fraction(parse(key, value)?)?;
                self.xmac.cycle_us = self.rtxp.cycle_us() / 3;
            }
            "rtxp.max_backoff_us" => self.rtxp.max_backoff_us = parse(key, value)?,
            "rtxp.backoff_slot_us" => self.rtxp.backoff_slot_us = parse(key, value)?,
            "rtxp.data_slot_us" => self.rtxp.data_slot_us = parse(key, value)?,
            "rtxp.max_retx_per_cycle" => self.rtxp.max_retx_per_cycle = parse(key, value)?,
            "pedamacs.t_slot_us" => self.t_slot_us = parse(key, value)?,
            "xmac.max_retries" => self.xmac.max_retries = parse(key, value)?,
            "xmac.cycle_us" => self.xmac.cycle_us = parse(key, value)?,
            "xmac.poll_us" => self.xmac.poll_us = parse(key, value)?,
            "xmac.strobe_us" => self.xmac.strobe_us = parse(key, value)?,
            "xmac.response_us" => self.xmac.response_us = parse(key, value)?,
            "xmac.ack_us" => self.xmac.ack_us = parse(key, value)?,
            "xmac.cca_us" => self.xmac.cca_us = parse(key, value)?,
            "xmac.backoff_slot_us" => self.xmac.backoff_slot_us = parse(key, value)?,
            "xmac.backoff_window" => self.xmac.backoff_window = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply a config file: `[section]` headers, `key = value` lines, `#` comments.
    pub fn apply_conf(&mut self, text: &str) -> Result<()> {
        let mut section = String::from("experiment");
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: no + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = format!("{section}.{}", k.trim());
            self.set(&key, v).map_err(|e| Error::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.alarms == 0 || self.node_counts.is_empty() {
            return Err(Error::Config(
                "replications, alarms and nodes must be non-empty".into(),
            ));
        }
        if self.alarm_period_us == 0 || self.drain_bounds == 0 {
            return Err(Error::Config(
                "alarm period and drain_bounds must be positive".into(),
            ));
        }
        self.radio.validate()?;
        self.rtxp.validate()?;
        self.xmac.validate()?;
        if self.rtxp.jamming_us != self.radio.jamming_us {
            return Err(Error::Config(
                "jamming durations of radio and RTXP differ".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialization, readable back by [`ExperimentSpec::apply_conf`].
    pub fn to_conf(&self) -> String {
        let nodes: Vec<String> = self.node_counts.iter().map(|n| n.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "protocol = {}", self.protocol);
        let _ = writeln!(s, "channel = {}", self.channel);
        let _ = writeln!(s, "nodes = {}", nodes.join(","));
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "alarm_period = {}", fmt_seconds(self.alarm_period_us));
        let _ = writeln!(s, "alarms = {}", self.alarms);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "drain_bounds = {}", self.drain_bounds);
        let _ = writeln!(s, "trace = {}", self.trace);
        let _ = writeln!(s, "\n[topology]");
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "range = {}", self.range);
        let sink = match self.sink {
            SinkPlacement::Corner => "corner",
            SinkPlacement::Center => "center",
            SinkPlacement::Uniform => "uniform",
        };
        let _ = writeln!(s, "sink = {sink}");
        let _ = writeln!(s, "\n[radio]");
        let _ = writeln!(s, "bitrate_bps = {}", self.radio.bitrate_bps);
        let _ = writeln!(s, "packet_bytes = {}", self.radio.packet_bytes);
        let _ = writeln!(s, "path_loss_exponent = {}", self.radio.path_loss_exponent);
        let _ = writeln!(s, "shadowing_sigma_db = {}", self.radio.shadowing_sigma_db);
        let _ = writeln!(s, "jamming_us = {}", self.radio.jamming_us);
        let _ = writeln!(s, "\n[rtxp]");
        let _ = writeln!(s, "duty_cycle = {}", self.rtxp.duty_cycle.fraction());
        let _ = writeln!(s, "max_backoff_us = {}", self.rtxp.max_backoff_us);
        let _ = writeln!(s, "backoff_slot_us = {}", self.rtxp.backoff_slot_us);
        let _ = writeln!(s, "data_slot_us = {}", self.rtxp.data_slot_us);
        let _ = writeln!(s, "max_retx_per_cycle = {}", self.rtxp.max_retx_per_cycle);
        let _ = writeln!(s, "\n[pedamacs]");
        let _ = writeln!(s, "t_slot_us = {}", self.t_slot_us);
        let _ = writeln!(s, "\n[xmac]");
        let _ = writeln!(s, "max_retries = {}", self.xmac.max_retries);
        let _ = writeln!(s, "cycle_us = {}", self.xmac.cycle_us);
        let _ = writeln!(s, "poll_us = {}", self.xmac.poll_us);
        let _ = writeln!(s, "strobe_us = {}", self.xmac.strobe_us);
        let _ = writeln!(s, "response_us = {}", self.xmac.response_us);
        let _ = writeln!(s, "ack_us = {}", self.xmac.ack_us);
        let _ = writeln!(s, "cca_us = {}", self.xmac.cca_us);
        let _ = writeln!(s, "backoff_slot_us = {}", self.xmac.backoff_slot_us);
        let _ = writeln!(s, "backoff_window = {}", self.xmac.backoff_window);
        s
    }

    /// Label used in outputs: the X-MAC retry budget is part of the protocol name.
    pub fn protocol_label(&self) -> String {
        match self.protocol {
            Protocol::XmacGradient => format!("xmac-gradient-{}", self.xmac.max_retries),
            p => p.label().to_string(),
        }
    }

    fn rtxp_config(&self) -> RtxpConfig {
        RtxpConfig {
            retransmissions: self.protocol != Protocol::RtxpNoRetx,
            ..self.rtxp
        }
    }
}

/// `count` alarms at `period, 2 period, ...`, origins uniform over non-sink nodes.
pub fn generate_traffic(
    count: usize,
    period_us: u64,
    nodes: usize,
    sink: NodeId,
    rng: &mut RngStream,
) -> Vec<Alarm> {
    assert!(nodes >= 2, "traffic needs at least one sensor");
    (1..=count as u64)
        .map(|k| {
            let mut origin = rng.rng().random_range(0..nodes - 1);
            if origin >= sink {
                origin += 1;
            }
            Alarm {
                time: SimTime(k * period_us),
                origin,
            }
        })
        .collect()
}

/// A connected deployment for ensemble slot (`nodes`, `replication`), with the
/// seed that produced it and the number of rejected draws.
pub fn build_scenario(
    spec: &ExperimentSpec,
    nodes: usize,
    replication: usize,
) -> Result<(Scenario, u64, u64)> {
    let base = mix_seed(spec.seed, nodes as u64, replication as u64);
    for attempt in 0..MAX_REGENERATIONS {
        let seed = if attempt == 0 {
            base
        } else {
            mix_seed(base, attempt, 0x7e9)
        };
        let mut rng = RngStream::new(seed, StreamId::Topology);
        let topo = generate_uniform(
            nodes,
            (spec.width, spec.height),
            spec.range,
            spec.sink,
            &mut rng,
        )?;
        match Scenario::build(topo, spec.rtxp.backoff_timing()) {
            Ok(sc) => return Ok((sc, seed, attempt)),
            Err(Error::DisconnectedTopology(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "no connected deployment of {nodes} nodes after {MAX_REGENERATIONS} draws"
    )))
}

pub fn scenario_from_topology(spec: &ExperimentSpec, topo: Topology) -> Result<Scenario> {
    Scenario::build(topo, spec.rtxp.backoff_timing())
}

/// Deadline the protocol is judged against on this deployment.
pub fn delay_bound_us(spec: &ExperimentSpec, sc: &Scenario) -> u64 {
    let nb = sc.hops.max_ring;
    match spec.protocol {
        Protocol::Rtxp | Protocol::RtxpNoRetx => spec.rtxp.wctt_us(nb),
        Protocol::Pedamacs => pedamacs::wctt_us(sc.len(), spec.t_slot_us),
        Protocol::XmacGradient => spec.xmac.deadline_us(nb),
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub nodes: usize,
    pub replication: usize,
    pub seed: u64,
    pub regenerations: u64,
    pub avg_neighbors: f64,
    pub max_ring: u32,
    pub bound_us: u64,
    pub horizon_us: u64,
    pub frame_slots: Option<usize>,
    pub packets: Vec<PacketRecord>,
    pub max_energy_mj: f64,
    pub stats: RunStats,
    pub trace: Vec<String>,
}

impl RunRecord {
    pub fn delivered(&self) -> usize {
        self.packets.iter().filter(|p| p.delivered()).count()
    }

    pub fn delivery_ratio(&self) -> f64 {
        if self.packets.is_empty() {
            return 1.0;
        }
        self.delivered() as f64 / self.packets.len() as f64
    }

    pub fn delays_us(&self) -> impl Iterator<Item = u64> + '_ {
        self.packets.iter().filter_map(PacketRecord::delay_us)
    }

    pub fn max_delay_us(&self) -> Option<u64> {
        self.delays_us().max()
    }

    /// Delivered packets whose delay exceeds the bound.
    pub fn late(&self) -> usize {
        self.delays_us().filter(|&d| d > self.bound_us).count()
    }
}

/// Run one protocol on an already built deployment.
pub fn run_on(
    spec: &ExperimentSpec,
    sc: &Scenario,
    seed: u64,
    alarms: &[Alarm],
) -> Result<(RunOutcome, u64, Option<usize>)> {
    let bound = delay_bound_us(spec, sc);
    let last = alarms.iter().map(|a| a.time.as_us()).max().unwrap_or(0);
    let horizon = SimTime(last + spec.drain_bounds * bound);
    let mut frame = None;
    let out = match spec.protocol {
        Protocol::Rtxp | Protocol::RtxpNoRetx => rtxp::simulate(
            sc,
            &spec.rtxp_config(),
            &spec.radio,
            spec.channel,
            alarms,
            SimOptions {
                horizon,
                seed,
                trace: spec.trace,
            },
        )?,
        Protocol::Pedamacs => {
            let tree = pedamacs::build_tree(&sc.graph, &sc.hops, sc.sink());
            let schedule = pedamacs::compute_schedule(&sc.graph, &tree, sc.sink(), spec.t_slot_us)?;
            frame = Some(schedule.frame_len());
            pedamacs::simulate(
                &sc.topology,
                &tree,
                &schedule,
                &spec.radio,
                spec.channel,
                alarms,
                PedamacsOptions {
                    horizon,
                    seed,
                    trace: spec.trace,
                },
            )?
        }
        Protocol::XmacGradient => xmac::simulate(
            sc,
            &spec.xmac,
            &spec.radio,
            spec.channel,
            alarms,
            XmacOptions {
                horizon,
                seed,
                trace: spec.trace,
            },
        )?,
    };
    Ok((out, horizon.as_us(), frame))
}

/// One ensemble slot end to end: deployment, traffic, protocol run.
pub fn run_single(spec: &ExperimentSpec, nodes: usize, replication: usize) -> Result<RunRecord> {
    let (sc, seed, regenerations) = build_scenario(spec, nodes, replication)?;
    let mut traffic = RngStream::new(seed, StreamId::Traffic);
    let alarms = generate_traffic(
        spec.alarms,
        spec.alarm_period_us,
        sc.len(),
        sc.sink(),
        &mut traffic,
    );
    let (out, horizon_us, frame_slots) = run_on(spec, &sc, seed, &alarms)?;
    Ok(RunRecord {
        nodes,
        replication,
        seed,
        regenerations,
        avg_neighbors: sc.average_neighbors(),
        max_ring: sc.hops.max_ring,
        bound_us: delay_bound_us(spec, &sc),
        horizon_us,
        frame_slots,
        packets: out.packets.iter().map(|p| p.record()).collect(),
        max_energy_mj: out.energy.max_energy_mj(&spec.radio.powers),
        stats: out.stats,
        trace: out.trace.iter().map(|l| l.to_string()).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub nodes: usize,
    pub runs: usize,
    pub avg_neighbors: f64,
    pub min_delivery: f64,
    pub avg_delivery: f64,
    pub max_delivery: f64,
    pub mean_delay_ms: Option<f64>,
    pub max_delay_ms: Option<f64>,
    pub bound_ms: f64,
    pub late: usize,
    pub max_energy_mj: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub spec: ExperimentSpec,
    /// Ordered by node count, then replication.
    pub runs: Vec<RunRecord>,
}

/// Run the whole ensemble; runs execute in parallel, results are ordered.
pub fn run(spec: &ExperimentSpec) -> Result<MetricsReport> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .node_counts
        .iter()
        .flat_map(|&n| (0..spec.replications).map(move |r| (n, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(n, r)| run_single(spec, n, r))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport {
        spec: spec.clone(),
        runs,
    };
    report.runs.sort_by_key(|r| (r.nodes, r.replication));
    Ok(report)
}

impl MetricsReport {
    pub fn ensembles(&self) -> Vec<EnsembleSummary> {
        let mut sizes: Vec<usize> = self.runs.iter().map(|r| r.nodes).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|n| summarize(n, self.runs.iter().filter(|r| r.nodes == n)))
            .collect()
    }

    pub fn delivery_ratio(&self) -> f64 {
        let total: usize = self.runs.iter().map(|r| r.packets.len()).sum();
        let got: usize = self.runs.iter().map(RunRecord::delivered).sum();
        if total == 0 {
            1.0
        } else {
            got as f64 / total as f64
        }
    }

    /// Write every output file into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("experiment.conf", self.spec.to_conf()),
            ("packets.csv", self.packets_csv()),
            ("runs.csv", self.runs_csv()),
            ("delay.dat", self.delay_dat()),
            ("delivery.dat", self.delivery_dat()),
            ("energy.dat", self.energy_dat()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        if self.spec.trace {
            let mut body = String::new();
            for r in &self.runs {
                let _ = writeln!(
                    body,
                    "# nodes {} replication {} seed {}",
                    r.nodes, r.replication, r.seed
                );
                for l in &r.trace {
                    body.push_str(l);
                    body.push('\n');
                }
            }
            let path = dir.join("trace.txt");
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn header(&self, columns: &str) -> String {
        format!(
            "# protocol {} channel {} alarm_period_s {} seed {}\n# {columns}\n",
            self.spec.protocol_label(),
            self.spec.channel,
            fmt_seconds(self.spec.alarm_period_us),
            self.spec.seed
        )
    }

    pub fn packets_csv(&self) -> String {
        let mut s = String::from(
            "protocol,channel,alarm_period_s,nodes,replication,seed,packet_id,origin,creation_time_us,delivery_time_us,hops,retx_total,delivered,status\n",
        );
        let proto = self.spec.protocol_label();
        let period = fmt_seconds(self.spec.alarm_period_us);
        for r in &self.runs {
            for p in &r.packets {
                let delivery = p
                    .delivery_time
                    .map(|t| t.as_us().to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{proto},{},{period},{},{},{},{},{},{},{delivery},{},{},{},{}",
                    self.spec.channel,
                    r.nodes,
                    r.replication,
                    r.seed,
                    p.packet_id,
                    p.origin,
                    p.creation_time.as_us(),
                    p.hops,
                    p.retx_total,
                    u8::from(p.delivered()),
                    p.fate.label()
                );
            }
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "protocol,channel,alarm_period_s,nodes,replication,seed,regenerations,avg_neighbors,max_ring,alarms,delivered,delivery_ratio,max_delay_us,bound_us,late,max_energy_mj,data_transmissions,secondary_periods,duplicates,contention_ties,frame_slots,horizon_us\n",
        );
        let proto = self.spec.protocol_label();
        let period = fmt_seconds(self.spec.alarm_period_us);
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{proto},{},{period},{},{},{},{},{:.4},{},{},{},{:.6},{},{},{},{:.4},{},{},{},{},{},{}",
                self.spec.channel,
                r.nodes,
                r.replication,
                r.seed,
                r.regenerations,
                r.avg_neighbors,
                r.max_ring,
                r.packets.len(),
                r.delivered(),
                r.delivery_ratio(),
                r.max_delay_us().map(|d| d.to_string()).unwrap_or_default(),
                r.bound_us,
                r.late(),
                r.max_energy_mj,
                r.stats.data_transmissions,
                r.stats.secondary_periods,
                r.stats.duplicates,
                r.stats.contention_ties,
                r.frame_slots.map(|f| f.to_string()).unwrap_or_default(),
                r.horizon_us
            );
        }
        s
    }

    /// Per-packet delays against per-topology density, plus per-ensemble means.
    pub fn delay_dat(&self) -> String {
        let mut s = self.header("avg_neighbors delay_ms is_mean wctt_ms");
        for r in &self.runs {
            for d in r.delays_us() {
                let _ = writeln!(
                    s,
                    "{:.4} {:.3} 0 {:.3}",
                    r.avg_neighbors,
                    d as f64 / 1e3,
                    r.bound_us as f64 / 1e3
                );
            }
        }
        for e in self.ensembles() {
            if let Some(mean) = e.mean_delay_ms {
                let _ = writeln!(s, "{:.4} {:.3} 1 {:.3}", e.avg_neighbors, mean, e.bound_ms);
            }
        }
        s
    }

    pub fn delivery_dat(&self) -> String {
        let mut s = self.header("ensemble_size min avg max");
        for e in self.ensembles() {
            let _ = writeln!(
                s,
                "{} {:.4} {:.4} {:.4}",
                e.nodes, e.min_delivery, e.avg_delivery, e.max_delivery
            );
        }
        s
    }

    pub fn energy_dat(&self) -> String {
        let mut s = self.header("ensemble_size avg_neighbors max_energy_mj");
        for e in self.ensembles() {
            let _ = writeln!(
                s,
                "{} {:.4} {:.4}",
                e.nodes, e.avg_neighbors, e.max_energy_mj
            );
        }
        s
    }

    /// Short human-readable summary, one line per ensemble.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} {} alarm_period {} s\n{:>6} {:>5} {:>9} {:>8} {:>8} {:>8} {:>11} {:>11} {:>5} {:>10}\n",
            self.spec.protocol_label(),
            self.spec.channel,
            fmt_seconds(self.spec.alarm_period_us),
            "nodes",
            "runs",
            "avg_neigh",
            "min_del",
            "avg_del",
            "max_del",
            "mean_ms",
            "max_ms",
            "late",
            "energy_mj"
        );
        for e in self.ensembles() {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:>6} {:>5} {:>9.2} {:>8.4} {:>8.4} {:>8.4} {:>11} {:>11} {:>5} {:>10.2}",
                e.nodes,
                e.runs,
                e.avg_neighbors,
                e.min_delivery,
                e.avg_delivery,
                e.max_delivery,
                opt(e.mean_delay_ms),
                opt(e.max_delay_ms),
                e.late,
                e.max_energy_mj
            );
        }
        s
    }
}

fn summarize<'a>(nodes: usize, runs: impl Iterator<Item = &'a RunRecord>) -> EnsembleSummary {
    let runs: Vec<&RunRecord> = runs.collect();
    let k = runs.len() as f64;
    let ratios: Vec<f64> = runs.iter().map(|r| r.delivery_ratio()).collect();
    let delays: Vec<u64> = runs.iter().flat_map(|r| r.delays_us()).collect();
    let mean_delay_ms = (!delays.is_empty())
        .then(|| delays.iter().map(|&d| d as f64).sum::<f64>() / delays.len() as f64 / 1e3);
    EnsembleSummary {
        nodes,
        runs: runs.len(),
        avg_neighbors: runs.iter().map(|r| r.avg_neighbors).sum::<f64>() / k,
        min_delivery: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        avg_delivery: ratios.iter().sum::<f64>() / k,
        max_delivery: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_delay_ms,
        max_delay_ms: delays.iter().max().map(|&d| d as f64 / 1e3),
        bound_ms: runs.iter().map(|r| r.bound_us).max().unwrap_or(0) as f64 / 1e3,
        late: runs.iter().map(|r| r.late()).sum(),
        max_energy_mj: runs.iter().map(|r| r.max_energy_mj).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traffic_times_and_origins() {
        let mut rng = RngStream::new(7, StreamId::Traffic);
        let a = generate_traffic(200, 5_000_000, 50, 0, &mut rng);
        assert_eq!(a.len(), 200);
        assert_eq!(a[0].time, SimTime::from_secs(5));
        assert_eq!(a[199].time, SimTime::from_secs(1000));
        assert!(a.iter().all(|x| x.origin != 0 && x.origin < 50));
        let mut again = RngStream::new(7, StreamId::Traffic);
        assert_eq!(generate_traffic(200, 5_000_000, 50, 0, &mut again), a);
    }

    #[test]
    fn sink_in_the_middle_is_skipped() {
        let mut rng = RngStream::new(1, StreamId::Traffic);
        let a = generate_traffic(2_000, 1, 5, 2, &mut rng);
        assert!(a.iter().all(|x| x.origin != 2));
        for o in [0, 1, 3, 4] {
            assert!(a.iter().any(|x| x.origin == o));
        }
    }

    #[test]
    fn conf_round_trip() {
        let mut spec = ExperimentSpec::default();
        spec.protocol = Protocol::XmacGradient;
        spec.channel = Propagation::LogNormal;
        spec.node_counts = vec![100, 300];
        spec.alarm_period_us = 1_000_000;
        spec.xmac.max_retries = 500;
        let mut back = ExperimentSpec::default();
        back.apply_conf(&spec.to_conf()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn conf_errors_carry_line() {
        let mut spec = ExperimentSpec::default();
        let err = spec
            .apply_conf("[experiment]\nseed = 3\nbogus = 1\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert_eq!(spec.seed, 3);
        assert!(spec.apply_conf("protocol rtxp\n").is_err());
    }

    #[test]
    fn duty_cycle_key_moves_xmac_cycle() {
        let mut spec = ExperimentSpec::default();
        spec.set("rtxp.duty_cycle", "0.02").unwrap();
        assert_eq!(spec.xmac.cycle_us, spec.rtxp.cycle_us() / 3);
    }

    #[test]
    fn seconds_formatting() {
        assert_eq!(fmt_seconds(5_000_000), "5");
        assert_eq!(fmt_seconds(1_500_000), "1.5");
        assert_eq!(parse_seconds("p", "0.25").unwrap(), 250_000);
        assert!(parse_seconds("p", "0").is_err());
    }
}
