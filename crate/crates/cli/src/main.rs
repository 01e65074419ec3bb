use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use wsn_gsp::dataset::{
    assemble_snapshots, parse_intel, random_geometric_graph, synth_smooth, FillPolicy, SnapshotWindow,
};
use wsn_gsp::experiment::{run_experiment, DataConfig, ExperimentConfig, SyntheticSource};
use wsn_gsp::io::write_atomic;
use wsn_gsp::learn::GraphStream;
use wsn_gsp::lifetime::{duty_csv, duty_cycle, simulate_schedule, DutyCycleReport};
use wsn_gsp::reconstruct::ReconstructionConfig;
use wsn_gsp::sampling::{partition, set_count_sweep, PartitionConfig, SamplingPlan};
use wsn_gsp::{spectral_decompose, Graph, ShiftMode, SignalMatrix};

/// Graph learning, reconstruction and lifetime-preserving sensor scheduling.
#[derive(Parser, Debug)]
#[command(name = "wsn-gsp", version)]
struct Cli {
    /// Root random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Experiment TOML supplying defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an Intel Lab data file into a snapshot CSV and a rejects report.
    Ingest(IngestArgs),
    /// Generate a random geometric graph and bandlimited snapshots on it.
    Synth(SynthArgs),
    /// Learn a graph from a snapshot CSV, streaming it in batches.
    Learn(LearnArgs),
    /// Partition the vertices into sampling sets for one threshold.
    Partition(PartitionArgs),
    /// Partition for a list of thresholds and tabulate set counts and duty cycles.
    Sweep(SweepArgs),
    /// Replay a plan round-robin over a snapshot CSV.
    Schedule(ScheduleArgs),
    /// Run the whole pipeline from a configuration.
    Experiment,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Intel Lab `data.txt`.
    data: PathBuf,
    #[arg(long)]
    epoch_start: u32,
    /// Exclusive.
    #[arg(long)]
    epoch_end: u32,
    /// Forward-fill gaps of at most this many epochs; 0 disables filling.
    #[arg(long)]
    max_gap: Option<u32>,
    #[arg(long)]
    temp_min: Option<f64>,
    #[arg(long)]
    temp_max: Option<f64>,
    /// Keep motes that never report in the window.
    #[arg(long)]
    keep_silent: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    bandwidth: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    snapshots: Option<usize>,
}

#[derive(Args, Debug)]
struct LearnOverrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    prune_rel: Option<f64>,
    /// Snapshots per streaming update.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Relative Laplacian change counted as stable.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    snapshots: PathBuf,
    #[command(flatten)]
    learn: LearnOverrides,
}

#[derive(Args, Debug)]
struct ReconOverrides {
    #[arg(long)]
    eta: Option<f64>,
    /// `raw` or `normalized`.
    #[arg(long, value_parser = parse_shift)]
    shift: Option<ShiftMode>,
    /// Do not overwrite sampled vertices with their measurements.
    #[arg(long)]
    no_clamp: bool,
    /// Spectral energy share defining the bandwidth.
    #[arg(long)]
    energy_frac: Option<f64>,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[command(flatten)]
    recon: ReconOverrides,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    /// Comma-separated ascending thresholds.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[command(flatten)]
    recon: ReconOverrides,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    recon: ReconOverrides,
}

fn parse_shift(s: &str) -> std::result::Result<ShiftMode, String> {
    match s {
        "raw" => Ok(ShiftMode::Raw),
        "normalized" => Ok(ShiftMode::Normalized),
        other => Err(format!("unknown shift `{other}`; expected raw or normalized")),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.output_dir.as_path();
    match cli.command {
        Command::Ingest(a) => ingest(&cfg, out, a),
        Command::Synth(a) => synth(&cfg, out, a),
        Command::Learn(a) => learn(cfg, out, a),
        Command::Partition(a) => partition_cmd(cfg, out, a),
        Command::Sweep(a) => sweep(cfg, out, a),
        Command::Schedule(a) => schedule(cfg, out, a),
        Command::Experiment => experiment(cfg, out),
    }
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    let path = out.join(name);
    write_atomic(&path, contents.as_bytes())?;
    info!("wrote {}", path.display());
    Ok(())
}

fn read_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Graph::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_window(path: &Path) -> Result<SnapshotWindow> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SnapshotWindow::from_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn complete_rows(x: &SignalMatrix) -> Result<SignalMatrix> {
    x.complete_rows().context("the snapshot CSV has no gap-free row")
}

fn ingest(cfg: &ExperimentConfig, out: &Path, a: IngestArgs) -> Result<()> {
    let (mut filter, mut fill) = match &cfg.data {
        DataConfig::Intel(i) => (i.filter, i.fill),
        DataConfig::Synthetic(_) => (Default::default(), FillPolicy::default()),
    };
    if let Some(v) = a.temp_min {
        filter.temp_min = v;
    }
    if let Some(v) = a.temp_max {
        filter.temp_max = v;
    }
    match a.max_gap {
        Some(0) => fill = FillPolicy::None,
        Some(max_gap) => fill = FillPolicy::ForwardFill { max_gap },
        None => {}
    }
    let (records, report) = parse_intel(&a.data, &filter)?;
    info!("accepted {} of {} rows", report.accepted, report.rows);
    let universe: Vec<u32> = (filter.mote_min..=filter.mote_max).collect();
    let mut window = assemble_snapshots(&records, a.epoch_start..a.epoch_end, &universe, fill)?;
    if !a.keep_silent {
        let (trimmed, dropped) = window.drop_silent()?;
        if !dropped.is_empty() {
            info!("dropped silent motes {dropped:?}");
        }
        window = trimmed;
    }
    info!(
        "{} epochs x {} motes, mask density {:.3}",
        window.epochs.len(),
        window.motes.len(),
        window.signals.mask_density()
    );
    write(out, "snapshots.csv", &window.to_csv())?;
    write(out, "rejects.json", &report.to_json()?)
}

fn synth(cfg: &ExperimentConfig, out: &Path, a: SynthArgs) -> Result<()> {
    let mut s = match &cfg.data {
        DataConfig::Synthetic(s) => s.clone(),
        DataConfig::Intel(_) => SyntheticSource::default(),
    };
    s.nodes = a.nodes.unwrap_or(s.nodes);
    s.radius = a.radius.unwrap_or(s.radius);
    s.bandwidth = a.bandwidth.unwrap_or(s.bandwidth);
    s.noise_sigma = a.noise_sigma.unwrap_or(s.noise_sigma);
    s.snapshots = a.snapshots.unwrap_or(s.snapshots);
    let g = random_geometric_graph(s.nodes, s.radius, cfg.graph_seed())?;
    let x = synth_smooth(&g, s.bandwidth, s.noise_sigma, s.snapshots, cfg.signal_seed())?;
    let window = SnapshotWindow {
        epochs: (0..s.snapshots as u32).collect(),
        motes: (1..=s.nodes as u32).collect(),
        signals: x,
    };
    write(out, "graph.json", &g.to_json()?)?;
    write(out, "snapshots.csv", &window.to_csv())
}

fn learn(mut cfg: ExperimentConfig, out: &Path, a: LearnArgs) -> Result<()> {
    let o = a.learn;
    cfg.learn.alpha = o.alpha.unwrap_or(cfg.learn.alpha);
    cfg.learn.beta = o.beta.unwrap_or(cfg.learn.beta);
    cfg.learn.max_iters = o.max_iters.unwrap_or(cfg.learn.max_iters);
    cfg.learn.tol = o.tol.unwrap_or(cfg.learn.tol);
    cfg.learn.prune_rel = o.prune_rel.unwrap_or(cfg.learn.prune_rel);
    cfg.stream.batch_size = o.batch_size.unwrap_or(cfg.stream.batch_size);
    cfg.stream.threshold = o.threshold.unwrap_or(cfg.stream.threshold);
    cfg.validate()?;

    let window = read_window(&a.snapshots)?;
    let x = &window.signals;
    let mut stream = GraphStream::new(x.n_nodes(), cfg.learn.clone(), cfg.stream.threshold)?;
    let t = x.n_snapshots();
    let mut start = 0;
    while start < t {
        let end = (start + cfg.stream.batch_size).min(t);
        let entry = stream.update(&x.rows(start..end)?)?;
        info!("{} snapshots, relative change {:e}", entry.snapshots_seen, entry.rel_change);
        start = end;
    }
    let learned = stream.current().context("no snapshots")?;
    if !learned.isolated.is_empty() {
        info!("isolated vertices {:?}", learned.isolated);
    }
    info!("converged: {}", stream.converged());
    write(out, "convergence.csv", &stream.trace().to_csv())?;
    write(out, "graph.json", &learned.graph.to_json()?)
}

fn recon_config(cfg: &ExperimentConfig, o: &ReconOverrides) -> PartitionConfig {
    let mut recon: ReconstructionConfig = cfg.reconstruct.base;
    recon.eta = o.eta.unwrap_or(recon.eta);
    recon.shift = o.shift.unwrap_or(recon.shift);
    if o.no_clamp {
        recon.clamp_sampled = false;
    }
    PartitionConfig {
        recon,
        energy_frac: o.energy_frac.unwrap_or(cfg.sampling.energy_frac),
    }
}

fn check_sizes(g: &Graph, x: &SignalMatrix) -> Result<()> {
    if g.n() != x.n_nodes() {
        bail!("graph has {} vertices but the snapshots have {} columns", g.n(), x.n_nodes());
    }
    Ok(())
}

fn partition_cmd(cfg: ExperimentConfig, out: &Path, a: PartitionArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let x = complete_rows(&read_window(&a.snapshots)?.signals)?;
    check_sizes(&g, &x)?;
    let pcfg = recon_config(&cfg, &a.recon);
    let basis = spectral_decompose(&g)?;
    let plan = partition(&g, &basis, &x, a.epsilon, &pcfg)?;
    let duty = duty_cycle(&plan)?;
    info!(
        "{} sets, duty cycle {}%, worst set RMSE {}{}",
        plan.n_sets(),
        duty.render(),
        plan.max_rmse(),
        if plan.last_set_incomplete { " (last set above threshold)" } else { "" }
    );
    write(out, &format!("plan_eps_{}.json", a.epsilon), &plan.to_json()?)
}

fn sweep(cfg: ExperimentConfig, out: &Path, a: SweepArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let x = complete_rows(&read_window(&a.snapshots)?.signals)?;
    check_sizes(&g, &x)?;
    let pcfg = recon_config(&cfg, &a.recon);
    let epsilons = a.epsilons.unwrap_or_else(|| cfg.sampling.epsilons.clone());
    let basis = spectral_decompose(&g)?;
    let table = set_count_sweep(&g, &basis, &x, &epsilons, &pcfg)?;
    let mut counts: Vec<usize> = table.rows.iter().map(|r| r.n_sets).collect();
    counts.sort_unstable();
    counts.dedup();
    let duty = counts
        .iter()
        .map(|&s| DutyCycleReport::for_sets(s))
        .collect::<wsn_gsp::Result<Vec<_>>>()?;
    for r in &table.rows {
        info!("epsilon {}: {} sets, worst set RMSE {}", r.epsilon, r.n_sets, r.max_rmse);
    }
    write(out, "sweep.csv", &table.to_csv())?;
    write(out, "duty.csv", &duty_csv(&duty))?;
    for plan in &table.plans {
        write(out, &format!("plan_eps_{}.json", plan.epsilon), &plan.to_json()?)?;
    }
    Ok(())
}

fn schedule(cfg: ExperimentConfig, out: &Path, a: ScheduleArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let window = read_window(&a.snapshots)?;
    check_sizes(&g, &window.signals)?;
    let text = std::fs::read_to_string(&a.plan).with_context(|| format!("reading {}", a.plan.display()))?;
    let plan = SamplingPlan::from_json(&text)?;
    let pcfg = recon_config(&cfg, &a.recon);
    let report = simulate_schedule(&g, &plan, &window.signals, &pcfg.recon)?;
    info!(
        "{} rounds over {} sets: max round RMSE {}, mean {}",
        report.rounds.len(),
        plan.n_sets(),
        report.max_rmse,
        report.mean_rmse
    );
    write(out, "schedule.csv", &report.to_csv())
}

fn experiment(cfg: ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = run_experiment(&cfg, out)?;
    info!(
        "bandwidth {}, eta {}, stream converged: {}",
        outcome.bandwidth, outcome.eta, outcome.converged
    );
    for r in &outcome.sweep.rows {
        info!("epsilon {}: {} sets, worst set RMSE {}", r.epsilon, r.n_sets, r.max_rmse);
    }
    for c in &outcome.checks {
        info!("check {}: {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    if !outcome.all_checks_passed() {
        bail!("self-check failed; see {}", out.join("self_check.json").display());
    }
    Ok(())
}
