//! Duty-cycle accounting and round-robin activation of sampling sets.
//!
//! With `s` disjoint sets activated one per round, each sensor is awake one
//! round in `s`: its duty cycle is `100/s` percent and, under a linear energy
//! model, network lifetime grows by a factor of `s`.

use std::fmt::Write as _;

use nalgebra::DVector;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::reconstruct::{rmse_values, MaskedSolver, ReconstructionConfig, Smoother};
use crate::sampling::SamplingPlan;
use crate::signal::SignalMatrix;

/// Significant digits used when rendering duty cycles.
pub const DUTY_DIGITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DutyCycleReport {
    pub n_sets: usize,
    /// Exact percentage `100/n_sets`.
    pub duty_cycle_percent: Ratio<u64>,
    pub lifetime_multiplier: usize,
}

impl DutyCycleReport {
    pub fn for_sets(n_sets: usize) -> Result<Self> {
        if n_sets == 0 {
            return Err(Error::Empty("sampling plan"));
        }
        Ok(DutyCycleReport {
            n_sets,
            duty_cycle_percent: Ratio::new(100, n_sets as u64),
            lifetime_multiplier: n_sets,
        })
    }

    pub fn duty_f64(&self) -> f64 {
        *self.duty_cycle_percent.numer() as f64 / *self.duty_cycle_percent.denom() as f64
    }

    /// Duty cycle at [`DUTY_DIGITS`] significant digits, trailing zeros
    /// dropped (`100`, `50`, `4.762`, `2.041`).
    pub fn render(&self) -> String {
        render_significant(self.duty_cycle_percent, DUTY_DIGITS)
    }
}

/// Duty cycle of a validated plan.
pub fn duty_cycle(plan: &SamplingPlan) -> Result<DutyCycleReport> {
    if plan.sets.is_empty() {
        return Err(Error::Empty("sampling plan"));
    }
    plan.validate()?;
    DutyCycleReport::for_sets(plan.n_sets())
}

/// CSV with header `n_sets,duty_pct`.
pub fn duty_csv(reports: &[DutyCycleReport]) -> String {
    let mut out = String::from("n_sets,duty_pct\n");
    for r in reports {
        let _ = writeln!(out, "{},{}", r.n_sets, r.render());
    }
    out
}

/// Rounds a positive rational half-up to `digits` significant digits, exactly.
pub fn render_significant(value: Ratio<u64>, digits: u32) -> String {
    assert!(digits > 0);
    let v = Ratio::new(*value.numer() as u128, *value.denom() as u128);
    if *v.numer() == 0 {
        return "0".into();
    }
    let lo = 10u128.pow(digits - 1);
    let hi = 10u128.pow(digits);
    // v · 10^shift lands in [lo, hi)
    let mut shift: i32 = 0;
    let mut scaled = v;
    while scaled.to_integer() >= hi {
        scaled /= 10;
        shift -= 1;
    }
    while scaled.to_integer() < lo {
        scaled *= 10;
        shift += 1;
    }
    let mut mantissa = (scaled + Ratio::new(1, 2)).floor().to_integer();
    if mantissa == hi {
        mantissa /= 10;
        shift -= 1;
    }
    if shift <= 0 {
        return (mantissa * 10u128.pow((-shift) as u32)).to_string();
    }
    let shift = shift as usize;
    let mut s = format!("{mantissa:0>width$}", width = shift + 1);
    s.insert(s.len() - shift, '.');
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Round-robin activation: round `r` wakes set `r mod n_sets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub n_sets: usize,
    /// Set index active in each round.
    pub rounds: Vec<usize>,
    /// Epochs per round.
    pub round_epochs: u32,
}

impl Schedule {
    pub fn round_robin(n_sets: usize, n_rounds: usize, round_epochs: u32) -> Result<Self> {
        if n_sets == 0 {
            return Err(Error::Empty("sampling plan"));
        }
        if round_epochs == 0 {
            return Err(Error::param("round_epochs", "must be positive"));
        }
        Ok(Schedule {
            n_sets,
            rounds: (0..n_rounds).map(|r| r % n_sets).collect(),
            round_epochs,
        })
    }

    pub fn active_set(&self, round: usize) -> usize {
        self.rounds[round]
    }

    /// Activations per vertex over rounds `start..start + n_sets`.
    pub fn activations(&self, plan: &SamplingPlan, start: usize) -> Vec<usize> {
        let mut count = vec![0; plan.node_order.len()];
        for &s in &self.rounds[start..(start + self.n_sets).min(self.rounds.len())] {
            for &v in &plan.sets[s] {
                count[v] += 1;
            }
        }
        count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundResult {
    pub round: usize,
    pub set: usize,
    pub n_active: usize,
    /// `None` when no active vertex reported in the round.
    pub rmse: Option<f64>,
}

/// Replay of a schedule over a snapshot matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub rounds: Vec<RoundResult>,
    /// Over scored rounds only.
    pub max_rmse: f64,
    pub mean_rmse: f64,
    /// Rounds in which no active vertex reported.
    pub blind_rounds: usize,
    /// Mean round RMSE of each set; comparable to the plan's per-set RMSE.
    pub per_set_mean: Vec<Option<f64>>,
}

impl ScheduleReport {
    /// CSV with header `round,set,n_active,rmse`; blind rounds leave `rmse` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,set,n_active,rmse\n");
        for r in &self.rounds {
            let rmse = r.rmse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{rmse}", r.round, r.set, r.n_active);
        }
        out
    }
}

/// One round per snapshot: observe only the active set, reconstruct, and
/// score against every vertex the snapshot actually observed. Active vertices
/// missing from a snapshot are treated as unobserved for that round, and a
/// round in which none of them reported is left unscored.
pub fn simulate_schedule(
    graph: &Graph,
    plan: &SamplingPlan,
    x: &SignalMatrix,
    recon: &ReconstructionConfig,
) -> Result<ScheduleReport> {
    if plan.sets.is_empty() {
        return Err(Error::Empty("sampling plan"));
    }
    plan.validate()?;
    let n = graph.n();
    if plan.node_order.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: plan.node_order.len(),
        });
    }
    if x.n_nodes() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.n_nodes(),
        });
    }
    let schedule = Schedule::round_robin(plan.n_sets(), x.n_snapshots(), 1)?;
    let smoother = Smoother::new(graph, *recon)?;
    let set_masks: Vec<Vec<bool>> = plan
        .sets
        .iter()
        .map(|set| {
            let mut m = vec![false; n];
            set.iter().for_each(|&v| m[v] = true);
            m
        })
        .collect();
    let mut cache: Vec<Option<MaskedSolver>> = vec![None; plan.n_sets()];

    let mut rounds = Vec::with_capacity(x.n_snapshots());
    for (t, &s) in schedule.rounds.iter().enumerate() {
        let observed_row: Vec<bool> = (0..n).map(|v| x.observed()[(t, v)]).collect();
        let mask: Vec<bool> = (0..n).map(|v| set_masks[s][v] && observed_row[v]).collect();
        let values = DVector::from_fn(n, |v, _| if observed_row[v] { x.values()[(t, v)] } else { 0.0 });
        let n_active = mask.iter().filter(|&&m| m).count();
        let eval: Vec<usize> = (0..n).filter(|&v| observed_row[v]).collect();
        if n_active == 0 {
            rounds.push(RoundResult {
                round: t,
                set: s,
                n_active,
                rmse: None,
            });
            continue;
        }
        let estimate = if mask == set_masks[s] {
            if cache[s].is_none() {
                cache[s] = Some(smoother.for_mask(&mask)?);
            }
            cache[s].as_ref().expect("cached above").solve(&values)?
        } else {
            smoother.for_mask(&mask)?.solve(&values)?
        };
        rounds.push(RoundResult {
            round: t,
            set: s,
            n_active,
            rmse: Some(rmse_values(&estimate, &values, &eval)?),
        });
    }

    let scored: Vec<f64> = rounds.iter().filter_map(|r| r.rmse).collect();
    if scored.is_empty() {
        return Err(Error::Empty("scored rounds"));
    }
    let max_rmse = scored.iter().copied().fold(0.0, f64::max);
    let mean_rmse = scored.iter().sum::<f64>() / scored.len() as f64;
    let blind_rounds = rounds.len() - scored.len();
    let per_set_mean = (0..plan.n_sets())
        .map(|s| {
            let hits: Vec<f64> = rounds.iter().filter(|r| r.set == s).filter_map(|r| r.rmse).collect();
            (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
        })
        .collect();
    Ok(ScheduleReport {
        rounds,
        max_rmse,
        mean_rmse,
        blind_rounds,
        per_set_mean,
    })
}
