use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rtxp_core::analysis::{self, PedamacsInputs};
use rtxp_core::harness::{self, ExperimentSpec};
use rtxp_core::pedamacs::{self, TdmaSchedule};
use rtxp_core::rtxp::{DutyCycle, RtxpConfig};
use rtxp_core::topology::Topology;

#[derive(Parser)]
#[command(
    name = "rtxp",
    version,
    about = "RTXP / PEDAMACS / X-MAC convergecast simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment ensemble and write CSV and plot data.
    Run(RunArgs),
    /// Print the closed-form durations, bounds, capacity and energies.
    Analyze(AnalyzeArgs),
    /// Emit capacity vs WCTT plot data over duty cycles 1%..100%.
    CapacityCurve(CurveArgs),
    /// Write one generated deployment (and its coordinates) as text.
    ExportTopology(ExportArgs),
    /// Build or load a PEDAMACS schedule and audit it.
    CheckSchedule(CheckArgs),
}

/// Flags shared by every command that needs an experiment spec.
#[derive(Args)]
struct SpecArgs {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// rtxp | rtxp-no-retx | pedamacs | xmac-gradient
    #[arg(long)]
    protocol: Option<String>,
    /// free-space | log-normal
    #[arg(long)]
    channel: Option<String>,
    /// Seconds between alarms.
    #[arg(long)]
    alarm_period: Option<String>,
    /// Comma-separated node counts, e.g. `100,200`.
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    /// X-MAC retry budget.
    #[arg(long)]
    xmac_retries: Option<u32>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl SpecArgs {
    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            spec.apply_conf(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let flags: [(&str, Option<String>); 7] = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("protocol", self.protocol.clone()),
            ("channel", self.channel.clone()),
            ("alarm_period", self.alarm_period.clone()),
            ("nodes", self.nodes.clone()),
            ("replications", self.replications.map(|r| r.to_string())),
            ("xmac.max_retries", self.xmac_retries.map(|r| r.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                spec.set(key, &v)?;
            }
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{o}`");
            };
            spec.set(k.trim(), v)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write a transmission trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Duty cycle as a fraction in (0, 1].
    #[arg(long, default_value = "0.01")]
    duty_cycle: f64,
    #[arg(long, default_value_t = 5)]
    nb_hop_max: u32,
    /// |V| for the PEDAMACS bound.
    #[arg(long, default_value_t = 100)]
    nodes: u64,
    #[arg(long, default_value_t = pedamacs::DEFAULT_T_SLOT_US)]
    t_slot_us: u64,
    /// Data slot D_R in microseconds.
    #[arg(long, default_value_t = 1_600)]
    data_slot_us: u64,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, default_value_t = 5)]
    nb_hop_max: u32,
    /// Duty-cycle step in parts per million.
    #[arg(long, default_value_t = 1_000)]
    step_ppm: u32,
    /// Data slot D_R in microseconds.
    #[arg(long, default_value_t = 32_000)]
    data_slot_us: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    replication: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `id ring offset coord` lines here.
    #[arg(long)]
    coords: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 0)]
    replication: usize,
    /// Topology file from `export-topology`; generated from the experiment settings when absent.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Schedule dump to audit; computed when absent.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Write the schedule dump here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn first_size(spec: &ExperimentSpec) -> usize {
    spec.node_counts[0]
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut spec = args.spec.resolve()?;
    spec.trace |= args.trace;
    let report = harness::run(&spec)?;
    report.emit(&args.out_dir)?;
    print!("{}", report.summary());
    println!("outputs written to {}", args.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let cfg = RtxpConfig {
        duty_cycle: DutyCycle::from_fraction(args.duty_cycle)?,
        data_slot_us: args.data_slot_us,
        ..RtxpConfig::default()
    };
    let report = analysis::evaluate(
        &cfg,
        args.nb_hop_max,
        PedamacsInputs {
            nodes: args.nodes,
            t_slot_us: args.t_slot_us,
        },
        &Default::default(),
    )?;
    print!("{}", report.render());
    Ok(ExitCode::SUCCESS)
}

fn cmd_curve(args: CurveArgs) -> Result<ExitCode> {
    let base = RtxpConfig {
        data_slot_us: args.data_slot_us,
        ..RtxpConfig::default()
    };
    let points = analysis::capacity_curve(
        &base,
        args.nb_hop_max,
        &analysis::duty_cycle_sweep(args.step_ppm),
    );
    write_or_print(
        args.out.as_deref(),
        &analysis::render_curve(&base, args.nb_hop_max, &points),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: ExportArgs) -> Result<ExitCode> {
    let spec = args.spec.resolve()?;
    let (sc, seed, regenerations) =
        harness::build_scenario(&spec, first_size(&spec), args.replication)?;
    eprintln!(
        "seed {seed} after {regenerations} rejected draws: {} nodes, {} rings, {:.2} neighbors on average",
        sc.len(),
        sc.hops.max_ring,
        sc.average_neighbors()
    );
    write_or_print(args.out.as_deref(), &sc.topology.to_text())?;
    if let Some(path) = &args.coords {
        fs::write(path, sc.coords.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let spec = args.spec.resolve()?;
    let sc = match &args.topology {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            harness::scenario_from_topology(&spec, Topology::from_text(&text)?)?
        }
        None => harness::build_scenario(&spec, first_size(&spec), args.replication)?.0,
    };
    let tree = pedamacs::build_tree(&sc.graph, &sc.hops, sc.sink());
    let schedule = match &args.schedule {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TdmaSchedule::from_text(&text)?
        }
        None => pedamacs::compute_schedule(&sc.graph, &tree, sc.sink(), spec.t_slot_us)?,
    };
    if let Some(path) = &args.dump {
        fs::write(path, schedule.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let violations = pedamacs::check_schedule(&sc.topology, &tree, &schedule);
    println!(
        "nodes {} frame_slots {} bound_slots {} violations {}",
        sc.len(),
        schedule.frame_len(),
        3 * (sc.len() - 1),
        violations.len()
    );
    for v in &violations {
        println!("{v:?}");
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::CapacityCurve(a) => cmd_curve(a),
        Command::ExportTopology(a) => cmd_export(a),
        Command::CheckSchedule(a) => cmd_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
