//! End-to-end experiment harness.
//!
//! `run_experiment` executes ingest, streaming graph learning, bandwidth and
//! ranking, the ε sweep, duty-cycle accounting and schedule replay, writing
//! every artifact atomically into one output directory:
//!
//! | file               | contents                                             |
//! |--------------------|------------------------------------------------------|
//! | `config.toml`      | effective configuration                              |
//! | `snapshots.csv`    | snapshot window (`epoch,<node ids>`)                 |
//! | `rejects.json`     | Intel row rejections (Intel source only)             |
//! | `convergence.csv`  | `snapshots_seen,rel_change`                          |
//! | `graph.json`       | learned graph                                        |
//! | `bandwidth.json`   | bandwidth, ranking and chosen η                      |
//! | `sweep.csv`        | `epsilon,n_sets,max_rmse`                            |
//! | `duty.csv`         | `n_sets,duty_pct`                                    |
//! | `schedule.csv`     | per-ε replay of the round-robin schedule             |
//! | `plan_eps_<ε>.json`| one sampling plan per ε                              |
//! | `self_check.json`  | property checks over the bundle                      |
//! | `manifest.json`    | config hash, version, seeds, artifact hashes         |
//!
//! Artifacts are byte-identical across runs with the same configuration.
//! A failing stage leaves earlier artifacts in place.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    assemble_snapshots, parse_intel, random_geometric_graph, synth_smooth, FillPolicy, IntelFilter,
    RejectReport, SnapshotWindow,
};
use crate::error::{Error, Result};
use crate::graph::{smoothness, spectral_decompose, Graph};
use crate::learn::{GraphStream, LearnConfig, DEFAULT_STABILITY_THRESHOLD};
use crate::lifetime::{duty_csv, duty_cycle, simulate_schedule, DutyCycleReport, Schedule};
use crate::reconstruct::{tune_eta, EtaGrid, ReconstructionConfig};
use crate::sampling::{rank_vertices, set_count_sweep, PartitionConfig, SweepTable, DEFAULT_ENERGY_FRACTION};
use crate::signal::SignalMatrix;

pub const DEFAULT_EPSILONS: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random draw.
    pub seed: u64,
    pub data: DataConfig,
    pub learn: LearnConfig,
    pub stream: StreamConfig,
    pub reconstruct: ReconstructSection,
    pub sampling: SamplingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            data: DataConfig::default(),
            learn: LearnConfig::default(),
            stream: StreamConfig::default(),
            reconstruct: ReconstructSection::default(),
            sampling: SamplingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticSource),
    Intel(IntelSource),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticSource::default())
    }
}

/// Bandlimited signals on a random geometric graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub nodes: usize,
    /// Initial connection radius on the unit square.
    pub radius: f64,
    pub bandwidth: usize,
    pub noise_sigma: f64,
    pub snapshots: usize,
    /// Multiplies every generated value.
    pub scale: f64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            nodes: 20,
            radius: 0.4,
            bandwidth: 3,
            noise_sigma: 0.01,
            snapshots: 200,
            scale: 1.0,
        }
    }
}

/// A window of the Intel Lab `data.txt` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntelSource {
    pub path: PathBuf,
    /// First epoch, inclusive.
    pub epoch_start: u32,
    /// Last epoch, exclusive.
    pub epoch_end: u32,
    #[serde(default)]
    pub filter: IntelFilter,
    #[serde(default)]
    pub fill: FillPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Snapshots per streaming update.
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            batch_size: 10,
            threshold: DEFAULT_STABILITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    #[serde(flatten)]
    pub base: ReconstructionConfig,
    /// Replace `eta` with the best grid candidate.
    pub tune_eta: bool,
    pub eta_grid: EtaGrid,
    /// Share of the importance ranking observed while tuning.
    pub tune_keep_fraction: f64,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        ReconstructSection {
            base: ReconstructionConfig::default(),
            tune_eta: false,
            eta_grid: EtaGrid::default(),
            tune_keep_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub epsilons: Vec<f64>,
    pub energy_frac: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            energy_frac: DEFAULT_ENERGY_FRACTION,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.learn.validate()?;
        if self.stream.batch_size == 0 {
            return Err(Error::param("stream.batch_size", "must be positive"));
        }
        if !(self.stream.threshold > 0.0) {
            return Err(Error::param("stream.threshold", "must be > 0"));
        }
        if self.sampling.epsilons.is_empty() {
            return Err(Error::Empty("sampling.epsilons"));
        }
        if self.sampling.epsilons.windows(2).any(|w| w[0] >= w[1]) || !(self.sampling.epsilons[0] > 0.0) {
            return Err(Error::param("sampling.epsilons", "must be positive and strictly ascending"));
        }
        if !(self.sampling.energy_frac > 0.0 && self.sampling.energy_frac <= 1.0) {
            return Err(Error::param("sampling.energy_frac", "must lie in (0, 1]"));
        }
        if !(self.reconstruct.base.eta > 0.0 && self.reconstruct.base.eta.is_finite()) {
            return Err(Error::param("reconstruct.eta", "must be finite and > 0"));
        }
        if self.reconstruct.tune_eta {
            self.reconstruct.eta_grid.validate()?;
            let f = self.reconstruct.tune_keep_fraction;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::param("reconstruct.tune_keep_fraction", "must lie in (0, 1]"));
            }
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                if s.nodes < 2 {
                    return Err(Error::param("data.nodes", "need at least 2"));
                }
                if s.bandwidth == 0 || s.bandwidth > s.nodes {
                    return Err(Error::param("data.bandwidth", "must lie in 1..=nodes"));
                }
                if s.snapshots < 2 {
                    return Err(Error::param("data.snapshots", "need at least 2"));
                }
                if !(s.scale > 0.0 && s.scale.is_finite()) {
                    return Err(Error::param("data.scale", "must be finite and > 0"));
                }
            }
            DataConfig::Intel(i) => {
                if i.epoch_end <= i.epoch_start {
                    return Err(Error::param("data.epoch_end", "must exceed epoch_start"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Seed of the synthetic graph.
    pub fn graph_seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the synthetic signals.
    pub fn signal_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub graph_seed: u64,
    pub signal_seed: u64,
    /// Node ids in column order.
    pub nodes: Vec<u32>,
    /// Universe members dropped for never reporting.
    pub dropped_nodes: Vec<u32>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BandwidthArtifact {
    k: usize,
    energy_fraction: f64,
    eta: f64,
    eta_scores: Option<Vec<Option<f64>>>,
    node_order: Vec<usize>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub sweep: SweepTable,
    pub converged: bool,
    pub eta: f64,
    pub bandwidth: usize,
    pub checks: Vec<CheckResult>,
}

impl ExperimentOutcome {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Bundle {
    dir: PathBuf,
    written: Vec<ArtifactEntry>,
}

impl Bundle {
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        crate::io::write_atomic(&self.dir.join(name), contents)?;
        self.written.push(ArtifactEntry {
            name: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|source| Error::Stage {
        stage: name,
        source: Box::new(source),
    })
}

/// Loads the configured data as a snapshot window plus optional reject report.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(SnapshotWindow, Option<RejectReport>, Option<Graph>)> {
    match &cfg.data {
        DataConfig::Synthetic(s) => {
            let g = random_geometric_graph(s.nodes, s.radius, cfg.graph_seed())?;
            let mut x = synth_smooth(&g, s.bandwidth, s.noise_sigma, s.snapshots, cfg.signal_seed())?;
            if s.scale != 1.0 {
                x = SignalMatrix::fully_observed(x.values() * s.scale)?;
            }
            let window = SnapshotWindow {
                epochs: (0..s.snapshots as u32).collect(),
                motes: (1..=s.nodes as u32).collect(),
                signals: x,
            };
            Ok((window, None, Some(g)))
        }
        DataConfig::Intel(i) => {
            let (records, report) = parse_intel(&i.path, &i.filter)?;
            let universe: Vec<u32> = (i.filter.mote_min..=i.filter.mote_max).collect();
            let window = assemble_snapshots(&records, i.epoch_start..i.epoch_end, &universe, i.fill)?;
            Ok((window, Some(report), None))
        }
    }
}

/// Runs every stage, writing artifacts to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    stage("config", cfg.validate())?;
    let mut bundle = Bundle {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };
    let config_text = stage("config", cfg.to_toml())?;
    stage("config", bundle.write("config.toml", config_text.as_bytes()))?;

    // ingest
    let (window, rejects, _truth) = stage("ingest", load_data(cfg))?;
    let (window, dropped) = stage("ingest", window.drop_silent())?;
    if window.motes.len() < 2 {
        return Err(Error::Stage {
            stage: "ingest",
            source: Box::new(Error::TooSmall {
                what: "active nodes",
                min: 2,
                found: window.motes.len(),
            }),
        });
    }
    stage("ingest", bundle.write("snapshots.csv", window.to_csv().as_bytes()))?;
    if let Some(r) = &rejects {
        stage("ingest", bundle.write("rejects.json", r.to_json()?.as_bytes()))?;
    }
    let x = &window.signals;

    // stream-learn
    let mut stream = stage("learn", GraphStream::new(x.n_nodes(), cfg.learn.clone(), cfg.stream.threshold))?;
    let t = x.n_snapshots();
    let mut start = 0;
    while start < t {
        let end = (start + cfg.stream.batch_size).min(t);
        let batch = stage("learn", x.rows(start..end))?;
        stage("learn", stream.update(&batch))?;
        start = end;
    }
    stage("learn", bundle.write("convergence.csv", stream.trace().to_csv().as_bytes()))?;
    let learned = stream.current().expect("at least one batch").clone();
    let graph = learned.graph;
    stage("learn", bundle.write("graph.json", graph.to_json()?.as_bytes()))?;

    // bandwidth, ranking, η
    let complete = x.complete_rows().ok_or(Error::Stage {
        stage: "rank",
        source: Box::new(Error::param("snapshots", "no gap-free snapshot in the window")),
    })?;
    let basis = stage("rank", spectral_decompose(&graph))?;
    let (bw, order) = stage("rank", rank_vertices(&basis, &complete, cfg.sampling.energy_frac))?;
    let mut recon = cfg.reconstruct.base;
    let mut eta_scores = None;
    if cfg.reconstruct.tune_eta {
        let n = graph.n();
        let keep = ((n as f64 * cfg.reconstruct.tune_keep_fraction).ceil() as usize).clamp(1, n);
        let mut mask = vec![false; n];
        order[..keep].iter().for_each(|&v| mask[v] = true);
        let choice = stage(
            "tune_eta",
            tune_eta(&graph, &complete, &mask, &cfg.reconstruct.eta_grid, &recon),
        )?;
        recon.eta = choice.eta;
        eta_scores = Some(choice.scores);
    }
    let bw_artifact = BandwidthArtifact {
        k: bw.k,
        energy_fraction: bw.energy_fraction,
        eta: recon.eta,
        eta_scores,
        node_order: order.clone(),
    };
    stage(
        "rank",
        bundle.write("bandwidth.json", serde_json::to_string_pretty(&bw_artifact)?.as_bytes()),
    )?;

    // sweep
    let pcfg = PartitionConfig {
        recon,
        energy_frac: cfg.sampling.energy_frac,
    };
    let sweep = stage(
        "sweep",
        set_count_sweep(&graph, &basis, &complete, &cfg.sampling.epsilons, &pcfg),
    )?;
    stage("sweep", bundle.write("sweep.csv", sweep.to_csv().as_bytes()))?;
    for plan in &sweep.plans {
        let name = format!("plan_eps_{}.json", plan.epsilon);
        stage("sweep", bundle.write(&name, plan.to_json()?.as_bytes()))?;
    }

    // duty
    let counts: BTreeSet<usize> = sweep.plans.iter().map(|p| p.n_sets()).collect();
    let duty: Vec<DutyCycleReport> = stage(
        "duty",
        counts.iter().map(|&s| DutyCycleReport::for_sets(s)).collect(),
    )?;
    stage("duty", bundle.write("duty.csv", duty_csv(&duty).as_bytes()))?;

    // schedule replay
    let mut sched_csv = String::from("epsilon,n_sets,duty_pct,plan_max_set_rmse,replay_max_round_rmse,replay_mean_round_rmse,replay_blind_rounds\n");
    let mut coverage_ok = true;
    for plan in &sweep.plans {
        let report = stage("schedule", simulate_schedule(&graph, plan, &complete, &recon))?;
        let d = stage("schedule", duty_cycle(plan))?;
        let _ = writeln!(
            sched_csv,
            "{},{},{},{},{},{},{}",
            plan.epsilon,
            plan.n_sets(),
            d.render(),
            plan.max_rmse(),
            report.max_rmse,
            report.mean_rmse,
            report.blind_rounds
        );
        let sched = stage("schedule", Schedule::round_robin(plan.n_sets(), 2 * plan.n_sets(), 1))?;
        coverage_ok &= (0..=plan.n_sets()).all(|s| sched.activations(plan, s).iter().all(|&c| c == 1));
    }
    stage("schedule", bundle.write("schedule.csv", sched_csv.as_bytes()))?;

    // self-check
    let checks = self_check(&graph, &basis, &complete, &sweep, coverage_ok);
    stage(
        "self_check",
        bundle.write("self_check.json", serde_json::to_string_pretty(&checks)?.as_bytes()),
    )?;

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: stage("manifest", cfg.hash())?,
        seed: cfg.seed,
        graph_seed: cfg.graph_seed(),
        signal_seed: cfg.signal_seed(),
        nodes: window.motes.clone(),
        dropped_nodes: dropped,
        artifacts: bundle.written.clone(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)?;
    stage("manifest", crate::io::write_atomic(&out_dir.join("manifest.json"), manifest_text.as_bytes()))?;

    Ok(ExperimentOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        converged: stream.converged(),
        eta: recon.eta,
        bandwidth: bw.k,
        sweep,
        checks,
    })
}

fn self_check(
    graph: &Graph,
    basis: &crate::graph::SpectralBasis,
    x: &SignalMatrix,
    sweep: &SweepTable,
    coverage_ok: bool,
) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let invalid: Vec<f64> = sweep
        .plans
        .iter()
        .filter(|p| p.validate().is_err())
        .map(|p| p.epsilon)
        .collect();
    out.push(CheckResult {
        name: "plans_partition_vertices",
        passed: invalid.is_empty(),
        detail: format!("invalid plans at epsilon {invalid:?}"),
    });

    let counts: Vec<usize> = sweep.rows.iter().map(|r| r.n_sets).collect();
    out.push(CheckResult {
        name: "set_count_monotone",
        passed: counts.windows(2).all(|w| w[0] <= w[1]),
        detail: format!("n_sets {counts:?}"),
    });

    let over: Vec<f64> = sweep
        .plans
        .iter()
        .filter(|p| {
            let complete = if p.last_set_incomplete { p.n_sets() - 1 } else { p.n_sets() };
            p.set_rmse[..complete].iter().any(|&r| r > p.epsilon)
        })
        .map(|p| p.epsilon)
        .collect();
    out.push(CheckResult {
        name: "set_rmse_within_epsilon",
        passed: over.is_empty(),
        detail: format!("violations at epsilon {over:?}"),
    });

    let duty_exact = counts.iter().all(|&s| {
        DutyCycleReport::for_sets(s)
            .map(|d| d.duty_cycle_percent * num_rational::Ratio::from_integer(s as u64) == num_rational::Ratio::from_integer(100))
            .unwrap_or(false)
    });
    out.push(CheckResult {
        name: "duty_times_sets_is_100",
        passed: duty_exact,
        detail: String::new(),
    });

    out.push(CheckResult {
        name: "schedule_coverage",
        passed: coverage_ok,
        detail: String::new(),
    });

    let mut worst_parseval: f64 = 0.0;
    for t in 0..x.n_snapshots() {
        let v = x.snapshot_values(t);
        if let Ok(s) = basis.gft_values(&v) {
            worst_parseval = worst_parseval.max((v.norm() - s.norm()).abs() / v.norm().max(1.0));
        }
    }
    out.push(CheckResult {
        name: "parseval",
        passed: worst_parseval < 1e-9,
        detail: format!("worst relative gap {worst_parseval:e}"),
    });

    // Filled cells count here: the identity is about the values, not receipts.
    let trace = SignalMatrix::fully_observed(x.values().clone()).and_then(|filled| smoothness(graph, &filled));
    let w = graph.weights();
    let mut pairwise = 0.0;
    for i in 0..graph.n() {
        for j in 0..graph.n() {
            let d = (x.values().column(i) - x.values().column(j)).norm_squared();
            pairwise += 0.5 * w[(i, j)] * d;
        }
    }
    let (passed, detail) = match trace {
        Ok(trace) => {
            let gap = (trace - pairwise).abs() / pairwise.abs().max(1.0);
            (gap < 1e-9, format!("relative gap {gap:e}"))
        }
        Err(e) => (false, e.to_string()),
    };
    out.push(CheckResult {
        name: "trace_equals_pairwise_form",
        passed,
        detail,
    });

    out
}
