//! Intel Berkeley Lab sensor data ingestion, loss-aware snapshot assembly,
//! and synthetic fixtures.
//!
//! `data.txt` rows hold eight whitespace-separated fields:
//!
//! ```text
//! 2004-02-28 00:59:16.02785 3 1 19.9884 37.0933 45.08 2.69964
//! date       time           epoch mote temperature humidity light voltage
//! ```
//!
//! Snapshots are keyed by epoch (one sampling round every 31 s). A node that
//! misses a round leaves a gap which can optionally be forward-filled; the
//! receipt mask always records only genuine measurements.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spectral_decompose, Graph, SpectralBasis};
use crate::signal::SignalMatrix;

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const TIME_FORMAT: &str = "%H:%M:%S%.f";

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub epoch: u32,
    pub mote_id: u32,
    /// °C
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub voltage: f64,
}

impl MeasurementRecord {
    /// One `data.txt` line; parses back to an identical record.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {}",
            self.date.format(DATE_FORMAT),
            self.time.format(TIME_FORMAT),
            self.epoch,
            self.mote_id,
            self.temperature,
            self.humidity,
            self.light,
            self.voltage
        )
    }
}

/// Acceptance rules for `data.txt` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntelFilter {
    pub mote_min: u32,
    pub mote_max: u32,
    /// Plausible temperature window in °C, inclusive.
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for IntelFilter {
    fn default() -> Self {
        IntelFilter {
            mote_min: 1,
            mote_max: 54,
            temp_min: -20.0,
            temp_max: 60.0,
        }
    }
}

/// Row counts by rejection reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReport {
    pub rows: usize,
    pub accepted: usize,
    pub missing_fields: usize,
    pub extra_fields: usize,
    pub non_numeric: usize,
    pub bad_timestamp: usize,
    pub mote_out_of_range: usize,
    pub implausible_temperature: usize,
}

impl RejectReport {
    pub fn rejected(&self) -> usize {
        self.rows - self.accepted
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reject {
    MissingFields,
    ExtraFields,
    NonNumeric,
    BadTimestamp,
    MoteOutOfRange,
    ImplausibleTemperature,
}

fn number(field: &str) -> std::result::Result<f64, Reject> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Reject::NonNumeric),
    }
}

fn parse_row(line: &str, filter: &IntelFilter) -> std::result::Result<MeasurementRecord, Reject> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.len() {
        n if n < 8 => return Err(Reject::MissingFields),
        n if n > 8 => return Err(Reject::ExtraFields),
        _ => {}
    }
    let epoch = fields[2].parse::<u32>().map_err(|_| Reject::NonNumeric)?;
    let mote_id = fields[3].parse::<u32>().map_err(|_| Reject::NonNumeric)?;
    let temperature = number(fields[4])?;
    let humidity = number(fields[5])?;
    let light = number(fields[6])?;
    let voltage = number(fields[7])?;
    let date = NaiveDate::parse_from_str(fields[0], DATE_FORMAT).map_err(|_| Reject::BadTimestamp)?;
    let time = NaiveTime::parse_from_str(fields[1], TIME_FORMAT).map_err(|_| Reject::BadTimestamp)?;
    if !(filter.mote_min..=filter.mote_max).contains(&mote_id) {
        return Err(Reject::MoteOutOfRange);
    }
    if !(filter.temp_min..=filter.temp_max).contains(&temperature) {
        return Err(Reject::ImplausibleTemperature);
    }
    Ok(MeasurementRecord {
        date,
        time,
        epoch,
        mote_id,
        temperature,
        humidity,
        light,
        voltage,
    })
}

/// Parses `data.txt` content. Blank lines are skipped; every other row is
/// either accepted or counted under one rejection reason. Never fails.
pub fn parse_intel_str(text: &str, filter: &IntelFilter) -> (Vec<MeasurementRecord>, RejectReport) {
    let mut records = Vec::new();
    let mut report = RejectReport::default();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        report.rows += 1;
        match parse_row(line, filter) {
            Ok(r) => {
                report.accepted += 1;
                records.push(r);
            }
            Err(Reject::MissingFields) => report.missing_fields += 1,
            Err(Reject::ExtraFields) => report.extra_fields += 1,
            Err(Reject::NonNumeric) => report.non_numeric += 1,
            Err(Reject::BadTimestamp) => report.bad_timestamp += 1,
            Err(Reject::MoteOutOfRange) => report.mote_out_of_range += 1,
            Err(Reject::ImplausibleTemperature) => report.implausible_temperature += 1,
        }
    }
    (records, report)
}

/// Reads and parses a `data.txt` file. Invalid UTF-8 is replaced rather than
/// rejected, so a corrupt byte only costs its row.
pub fn parse_intel(path: &Path, filter: &IntelFilter) -> Result<(Vec<MeasurementRecord>, RejectReport)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let (records, report) = parse_intel_str(&text, filter);
    if records.is_empty() {
        return Err(Error::NoAcceptedRows {
            path: path.to_path_buf(),
        });
    }
    Ok((records, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FillPolicy {
    /// Missing cells stay `NaN`.
    None,
    /// Carry a node's last genuine value for at most `max_gap` epochs.
    ForwardFill { max_gap: u32 },
}

impl FillPolicy {
    pub const DEFAULT_MAX_GAP: u32 = 10;

    fn max_gap(self) -> Option<u32> {
        match self {
            FillPolicy::None => None,
            FillPolicy::ForwardFill { max_gap } => Some(max_gap),
        }
    }
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::ForwardFill {
            max_gap: Self::DEFAULT_MAX_GAP,
        }
    }
}

/// Snapshot matrix over a contiguous epoch range and a fixed mote universe.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotWindow {
    pub epochs: Vec<u32>,
    /// Mote id of each column.
    pub motes: Vec<u32>,
    pub signals: SignalMatrix,
}

/// One row per epoch in `epochs`, one column per mote in `universe`. Later
/// records for the same (epoch, mote) overwrite earlier ones.
pub fn assemble_snapshots(
    records: &[MeasurementRecord],
    epochs: Range<u32>,
    universe: &[u32],
    fill: FillPolicy,
) -> Result<SnapshotWindow> {
    if epochs.is_empty() {
        return Err(Error::Empty("epoch range"));
    }
    if universe.is_empty() {
        return Err(Error::Empty("mote universe"));
    }
    let columns: HashMap<u32, usize> = universe.iter().enumerate().map(|(c, &m)| (m, c)).collect();
    let t = (epochs.end - epochs.start) as usize;
    let n = universe.len();
    let mut values = DMatrix::from_element(t, n, f64::NAN);
    let mut observed = DMatrix::from_element(t, n, false);
    for r in records {
        if !epochs.contains(&r.epoch) {
            continue;
        }
        if let Some(&c) = columns.get(&r.mote_id) {
            let row = (r.epoch - epochs.start) as usize;
            values[(row, c)] = r.temperature;
            observed[(row, c)] = true;
        }
    }
    if let Some(max_gap) = fill.max_gap() {
        for c in 0..n {
            let mut last: Option<(usize, f64)> = None;
            for row in 0..t {
                if observed[(row, c)] {
                    last = Some((row, values[(row, c)]));
                } else if let Some((at, v)) = last {
                    if row - at <= max_gap as usize {
                        values[(row, c)] = v;
                    }
                }
            }
        }
    }
    Ok(SnapshotWindow {
        epochs: epochs.collect(),
        motes: universe.to_vec(),
        signals: SignalMatrix::new(values, observed)?,
    })
}

impl SnapshotWindow {
    /// Drops motes with no genuine receipt in the window. Returns the trimmed
    /// window and the dropped mote ids.
    pub fn drop_silent(&self) -> Result<(SnapshotWindow, Vec<u32>)> {
        let counts = self.signals.observations_per_node();
        let (keep, dropped): (Vec<usize>, Vec<usize>) = (0..self.motes.len()).partition(|&c| counts[c] > 0);
        Ok((
            SnapshotWindow {
                epochs: self.epochs.clone(),
                motes: keep.iter().map(|&c| self.motes[c]).collect(),
                signals: self.signals.select_nodes(&keep)?,
            },
            dropped.iter().map(|&c| self.motes[c]).collect(),
        ))
    }

    /// Number of motes with at least one receipt.
    pub fn active_motes(&self) -> usize {
        self.signals.observations_per_node().iter().filter(|&&c| c > 0).count()
    }

    /// CSV: header `epoch,<mote ids>`, one row per epoch, empty cell where no
    /// value (received or filled) exists.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for m in &self.motes {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
        let values = self.signals.values();
        for (row, epoch) in self.epochs.iter().enumerate() {
            let _ = write!(out, "{epoch}");
            for c in 0..self.motes.len() {
                let v = values[(row, c)];
                if v.is_finite() {
                    let _ = write!(out, ",{v}");
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
        out
    }

    /// Reads [`SnapshotWindow::to_csv`] output. Every non-empty cell is taken
    /// as observed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse { line: 1, reason: e.to_string() })?
            .clone();
        if headers.get(0) != Some("epoch") {
            return Err(Error::Parse {
                line: 1,
                reason: "first column must be `epoch`".into(),
            });
        }
        let motes = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.parse::<u32>().map_err(|_| Error::Parse {
                    line: 1,
                    reason: format!("mote id `{h}` is not an integer"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        let mut epochs = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, rec) in reader.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::Parse { line, reason: e.to_string() })?;
            if rec.len() != motes.len() + 1 {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected {} cells, got {}", motes.len() + 1, rec.len()),
                });
            }
            epochs.push(rec[0].parse::<u32>().map_err(|_| Error::Parse {
                line,
                reason: format!("epoch `{}` is not an integer", &rec[0]),
            })?);
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        return Ok(f64::NAN);
                    }
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(Error::Parse {
                            line,
                            reason: format!("cell `{cell}` is not a finite number"),
                        }),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Empty("snapshot csv"));
        }
        Ok(SnapshotWindow {
            epochs,
            motes,
            signals: SignalMatrix::from_rows(&rows)?,
        })
    }
}

/// Bandlimited snapshots `U[:, :k]·c + noise` with `c ~ N(0, I)` and
/// i.i.d. `N(0, noise_sigma²)` noise, driven entirely by `seed`.
pub fn synth_smooth_with_basis(
    basis: &SpectralBasis,
    k: usize,
    noise_sigma: f64,
    snapshots: usize,
    seed: u64,
) -> Result<SignalMatrix> {
    let n = basis.n();
    if k == 0 || k > n {
        return Err(Error::param("k", format!("must lie in 1..={n}, got {k}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::param("noise_sigma", "must be finite and >= 0"));
    }
    if snapshots == 0 {
        return Err(Error::param("snapshots", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::param("noise_sigma", e.to_string()))?;
    let block = basis.eigenvectors().columns(0, k);
    let mut values = DMatrix::zeros(snapshots, n);
    for t in 0..snapshots {
        let coeffs = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let mut x: DVector<f64> = &block * coeffs;
        if noise_sigma > 0.0 {
            x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        values.set_row(t, &x.transpose());
    }
    SignalMatrix::fully_observed(values)
}

/// [`synth_smooth_with_basis`] on the spectral basis of `graph`.
pub fn synth_smooth(graph: &Graph, k: usize, noise_sigma: f64, snapshots: usize, seed: u64) -> Result<SignalMatrix> {
    synth_smooth_with_basis(&spectral_decompose(graph)?, k, noise_sigma, snapshots, seed)
}

/// Random geometric graph on the unit square with Gaussian-kernel weights
/// `exp(−d²/(2σ²))`, `σ = radius/2`, on pairs closer than `radius`. The radius
/// grows by 10% until the graph is connected.
pub fn random_geometric_graph(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::TooSmall {
            what: "nodes",
            min: 2,
            found: n,
        });
    }
    if !(radius > 0.0) {
        return Err(Error::param("radius", "must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = rand_distr::Uniform::new(0.0, 1.0).map_err(|e| Error::param("radius", e.to_string()))?;
    let points: Vec<(f64, f64)> = (0..n).map(|_| (unit.sample(&mut rng), unit.sample(&mut rng))).collect();
    let mut r = radius;
    loop {
        let sigma = r / 2.0;
        let w = DMatrix::from_fn(n, n, |i, j| {
            let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
            let d2 = dx * dx + dy * dy;
            if i != j && d2 < r * r {
                (-d2 / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            }
        });
        let g = Graph::from_weights(w)?;
        if g.component_count() == 1 {
            return Ok(g);
        }
        r *= 1.1;
    }
}
