use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricsPoint, Session, SessionConfig, SessionError};

/// Coincidence level counted as "solving converged".
pub const COINCIDENCE_TARGET: f64 = 0.9;
/// Angle below which the estimate counts as converged.
pub const ANGLE_TARGET_DEG: f64 = 15.0;

/// Per-round aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub round: u64,
    pub angle_median: f64,
    pub angle_q1: f64,
    pub angle_q3: f64,
    pub coincidence_median: f64,
    pub coincidence_q1: f64,
    pub coincidence_q3: f64,
    pub coincidence_mean: f64,
    /// Cumulative regret.
    pub regret_median: f64,
    pub regret_q1: f64,
    pub regret_q3: f64,
    pub drops_mean: f64,
}

/// Column order of [`write_batch_csv`], matching the fields of [`BatchRow`].
pub const BATCH_CSV_COLUMNS: [&str; 12] = [
    "round",
    "angle_median",
    "angle_q1",
    "angle_q3",
    "coincidence_median",
    "coincidence_q1",
    "coincidence_q3",
    "coincidence_mean",
    "regret_median",
    "regret_q1",
    "regret_q3",
    "drops_mean",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    /// First round with coincidence at or above [`COINCIDENCE_TARGET`].
    pub rounds_to_coincidence: Option<u64>,
    /// First round with angle error at or below [`ANGLE_TARGET_DEG`].
    pub rounds_to_angle: Option<u64>,
    pub final_coincidence: f64,
    pub final_angle: f64,
    pub final_estimate: Vec<f64>,
    pub metrics: Vec<MetricsPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rounds: u64,
    pub rows: Vec<BatchRow>,
    pub runs: Vec<RunSummary>,
    /// Median over runs, counting a run that never reached the target as
    /// `rounds + 1`.
    pub median_rounds_to_coincidence: f64,
    pub median_rounds_to_angle: f64,
}

impl BatchReport {
    pub fn row(&self, round: u64) -> Option<&BatchRow> {
        self.rows.iter().find(|r| r.round == round)
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn run_one(config: &SessionConfig, seed: u64) -> Result<RunSummary, SessionError> {
    let mut s = Session::new(config.with_seed(seed))?;
    s.run_to_end()?;
    let metrics = s.metrics().to_vec();
    let first =
        |pred: &dyn Fn(&MetricsPoint) -> bool| metrics.iter().find(|p| pred(p)).map(|p| p.round);
    let last = metrics.last().ok_or(SessionError::EmptySession)?;
    Ok(RunSummary {
        seed,
        rounds_to_coincidence: first(&|p| p.coincidence.unwrap_or(0.0) >= COINCIDENCE_TARGET),
        rounds_to_angle: first(&|p| p.angle_error.unwrap_or(180.0) <= ANGLE_TARGET_DEG),
        final_coincidence: last.coincidence.unwrap_or(0.0),
        final_angle: last.angle_error.unwrap_or(f64::NAN),
        final_estimate: s.planning_estimate(),
        metrics,
    })
}

/// Runs one simulated session per seed (in parallel) and aggregates the
/// metrics per round. Results are ordered by the given seeds.
pub fn run_batch(config: &SessionConfig, seeds: &[u64]) -> Result<BatchReport, SessionError> {
    if !config.is_simulated() {
        return Err(SessionError::WrongMode("SIMULATED_DM"));
    }
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(SessionError::InvalidConfig(problems));
    }
    if seeds.is_empty() {
        return Err(SessionError::InvalidConfig(vec![super::FieldProblem {
            field: "seeds".into(),
            message: "need at least one seed".into(),
        }]));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| run_one(config, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = (0..config.rounds as usize)
        .map(|k| {
            let column = |f: &dyn Fn(&MetricsPoint) -> f64| {
                sorted(runs.iter().map(|r| f(&r.metrics[k])).collect())
            };
            let angle = column(&|p| p.angle_error.unwrap_or(f64::NAN));
            let coincidence = column(&|p| p.coincidence.unwrap_or(0.0));
            let regret = column(&|p| p.cumulative_regret.unwrap_or(0.0));
            let drops = column(&|p| p.drops as f64);
            let n = runs.len() as f64;
            BatchRow {
                round: k as u64 + 1,
                angle_median: quantile(&angle, 0.5),
                angle_q1: quantile(&angle, 0.25),
                angle_q3: quantile(&angle, 0.75),
                coincidence_median: quantile(&coincidence, 0.5),
                coincidence_q1: quantile(&coincidence, 0.25),
                coincidence_q3: quantile(&coincidence, 0.75),
                coincidence_mean: coincidence.iter().sum::<f64>() / n,
                regret_median: quantile(&regret, 0.5),
                regret_q1: quantile(&regret, 0.25),
                regret_q3: quantile(&regret, 0.75),
                drops_mean: drops.iter().sum::<f64>() / n,
            }
        })
        .collect();
    let never = (config.rounds + 1) as f64;
    let median_of = |f: &dyn Fn(&RunSummary) -> Option<u64>| {
        quantile(
            &sorted(
                runs.iter()
                    .map(|r| f(r).map_or(never, |k| k as f64))
                    .collect(),
            ),
            0.5,
        )
    };
    Ok(BatchReport {
        rounds: config.rounds,
        median_rounds_to_coincidence: median_of(&|r| r.rounds_to_coincidence),
        median_rounds_to_angle: median_of(&|r| r.rounds_to_angle),
        rows,
        runs,
    })
}

/// Writes one row per round in [`BATCH_CSV_COLUMNS`] order.
pub fn write_batch_csv<W: std::io::Write>(rows: &[BatchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
