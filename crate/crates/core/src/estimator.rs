//! Recursive estimation of the reduced gain direction from labeled plans.
//!
//! Each labeled round yields a raw direction `r` in reduced-gain space. Its
//! length is the observation weight `beta` and `r / beta` is the unit
//! observation `e`. The estimate is the normalized weighted sum
//!
//! ```text
//! s_k = gamma * s_{k-1} + beta_k * e_k
//! c_k = s_k / |s_k|
//! ```
//!
//! With `gamma = 1` this is the plain weighted accumulation; smaller values
//! forget old rounds geometrically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{dot, norm, reduce, ReducedLpp, ReducedPoint, Srdm};
use crate::solver::purify::orthonormal_basis;
use crate::solver::{solve_exact, SolveError};

/// Slack below which a constraint counts as active at a vertex.
pub const ACTIVE_TOL: f64 = 1e-7;
/// Norm below which a vector has no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-9;
/// Max-norm distance under which two plans count as the same vertex.
pub const COINCIDENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("NotAVertex: {active} independent active constraints, need {dim}")]
    NotAVertex { active: usize, dim: usize },
    #[error("DegenerateObservation: zero-length observation cannot update the estimate")]
    DegenerateObservation,
    #[error("EmptyState: no observation has been applied")]
    EmptyState,
    #[error("ZeroTruth: reference gain vector has zero length")]
    ZeroTruth,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("probe set is empty")]
    NoProbes,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// The decision-maker's binary verdict on a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Bad = 0,
    Good = 1,
}

impl Label {
    pub fn is_good(self) -> bool {
        self == Label::Good
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Good => Label::Bad,
            Label::Bad => Label::Good,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Bad),
            1 => Ok(Label::Good),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    /// Forgetting factor in (0, 1].
    pub gamma: f64,
    /// Weight of a rejected plan's cone relative to an accepted one.
    pub lambda_neg: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda_neg: 0.5,
        }
    }
}

/// Sum of the unit outward normals of all constraints active at a vertex.
///
/// This direction lies inside the vertex's normal cone, the set of gain
/// vectors for which the vertex is optimal.
pub fn cone_centroid(lp: &ReducedLpp, point: &ReducedPoint) -> Result<Vec<f64>, EstimatorError> {
    let d = lp.dim();
    let x = point.as_slice();
    if x.len() != d {
        return Err(EstimatorError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let active: Vec<&[f64]> = lp
        .constraints()
        .iter()
        .filter(|c| c.slack(x).abs() <= ACTIVE_TOL)
        .map(|c| c.normal.as_slice())
        .collect();
    let rank = orthonormal_basis(active.iter().copied()).len();
    if rank < d {
        return Err(EstimatorError::NotAVertex {
            active: rank,
            dim: d,
        });
    }
    let mut sum = vec![0.0; d];
    for normal in active {
        let len = norm(normal);
        for (s, v) in sum.iter_mut().zip(normal) {
            *s += v / len;
        }
    }
    Ok(sum)
}

/// Raw observation direction for a labeled vertex: the cone centroid for an
/// accepted plan, `-lambda_neg` times it for a rejected one.
pub fn make_observation(
    lp: &ReducedLpp,
    point: &ReducedPoint,
    label: Label,
    lambda_neg: f64,
) -> Result<Vec<f64>, EstimatorError> {
    let centroid = cone_centroid(lp, point)?;
    Ok(match label {
        Label::Good => centroid,
        Label::Bad => centroid.into_iter().map(|v| -lambda_neg * v).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Unit direction (zero vector when degenerate).
    pub e: Vec<f64>,
    /// Length of the raw vector before normalization.
    pub beta: f64,
    pub label: Label,
    pub round: u64,
    pub degenerate: bool,
}

pub fn normalize_observation(raw: &[f64], label: Label, round: u64) -> Observation {
    let beta = norm(raw);
    if beta > DEGENERATE_NORM {
        Observation {
            e: raw.iter().map(|v| v / beta).collect(),
            beta,
            label,
            round,
            degenerate: false,
        }
    } else {
        Observation {
            e: vec![0.0; raw.len()],
            beta,
            label,
            round,
            degenerate: true,
        }
    }
}

/// Accumulated observations and the current unit estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateState {
    accumulator: Vec<f64>,
    estimate: Option<Vec<f64>>,
    observations: u64,
    conflicted: bool,
    gamma: f64,
}

impl EstimateState {
    pub fn new(dim: usize, gamma: f64) -> Self {
        Self {
            accumulator: vec![0.0; dim],
            estimate: None,
            observations: 0,
            conflicted: false,
            gamma,
        }
    }

    pub fn dim(&self) -> usize {
        self.accumulator.len()
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn accumulator_norm(&self) -> f64 {
        norm(&self.accumulator)
    }

    /// Current unit estimate, `None` before the first usable observation.
    pub fn estimate(&self) -> Option<&[f64]> {
        self.estimate.as_deref()
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// Set when the last update left the accumulator with no direction.
    pub fn is_conflicted(&self) -> bool {
        self.conflicted
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn update(&self, obs: &Observation) -> Result<EstimateState, EstimatorError> {
        if obs.degenerate {
            return Err(EstimatorError::DegenerateObservation);
        }
        if obs.e.len() != self.dim() {
            return Err(EstimatorError::DimensionMismatch {
                expected: self.dim(),
                got: obs.e.len(),
            });
        }
        let accumulator: Vec<f64> = self
            .accumulator
            .iter()
            .zip(&obs.e)
            .map(|(s, e)| self.gamma * s + obs.beta * e)
            .collect();
        let len = norm(&accumulator);
        let (estimate, conflicted) = if len > DEGENERATE_NORM {
            (Some(accumulator.iter().map(|v| v / len).collect()), false)
        } else {
            (self.estimate.clone(), true)
        };
        Ok(EstimateState {
            accumulator,
            estimate,
            observations: self.observations + 1,
            conflicted,
            gamma: self.gamma,
        })
    }

    /// The estimate reshaped to `(m-1) x (n-1)` and multiplied by `scale`.
    pub fn current_gain_matrix(
        &self,
        m: usize,
        n: usize,
        scale: f64,
    ) -> Result<Matrix, EstimatorError> {
        let est = self.estimate.as_ref().ok_or(EstimatorError::EmptyState)?;
        let expected = (m - 1) * (n - 1);
        if est.len() != expected {
            return Err(EstimatorError::DimensionMismatch {
                expected,
                got: est.len(),
            });
        }
        Ok(
            Matrix::from_vec(m - 1, n - 1, est.iter().map(|v| v * scale).collect())
                .expect("length checked"),
        )
    }
}

/// Functional form of [`EstimateState::update`].
pub fn update_estimate(
    state: &EstimateState,
    obs: &Observation,
) -> Result<EstimateState, EstimatorError> {
    state.update(obs)
}

/// Angle in degrees between an estimate and a reference direction.
pub fn angle_error(estimate: &[f64], truth: &[f64]) -> Result<f64, EstimatorError> {
    if estimate.len() != truth.len() {
        return Err(EstimatorError::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let tn = norm(truth);
    if tn <= DEGENERATE_NORM {
        return Err(EstimatorError::ZeroTruth);
    }
    let en = norm(estimate);
    if en <= DEGENERATE_NORM {
        return Ok(90.0);
    }
    let cos = (dot(estimate, truth) / (en * tn)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees().clamp(0.0, 180.0))
}

/// A fixed set of probe situations with their optimal vertices under the
/// true gains precomputed.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    lps: Vec<ReducedLpp>,
    optima: Vec<ReducedPoint>,
}

impl ProbeSet {
    pub fn new(probes: &[Srdm], true_gains: &Matrix) -> Result<Self, EstimatorError> {
        if probes.is_empty() {
            return Err(EstimatorError::NoProbes);
        }
        let mut lps = Vec::with_capacity(probes.len());
        let mut optima = Vec::with_capacity(probes.len());
        for probe in probes {
            let lp = reduce(&probe.instance(true_gains.clone())?);
            optima.push(solve_exact(&lp)?);
            lps.push(lp);
        }
        Ok(Self { lps, optima })
    }

    pub fn len(&self) -> usize {
        self.lps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lps.is_empty()
    }

    /// Fraction of probes where planning with `reduced_gains` lands on the
    /// same vertex as planning with the truth.
    pub fn coincidence(&self, reduced_gains: &[f64]) -> Result<f64, EstimatorError> {
        let mut hits = 0usize;
        for (lp, opt) in self.lps.iter().zip(&self.optima) {
            if reduced_gains.len() != lp.dim() {
                return Err(EstimatorError::DimensionMismatch {
                    expected: lp.dim(),
                    got: reduced_gains.len(),
                });
            }
            let x = solve_exact(&lp.with_reduced_gains(reduced_gains))?;
            if x.max_abs_diff(opt) <= COINCIDENCE_TOL {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.lps.len() as f64)
    }
}

/// Fraction of probes on which the estimated reduced gains and the true
/// full gain matrix select the same vertex.
pub fn coincidence_rate(
    estimate: &Matrix,
    true_gains: &Matrix,
    probes: &[Srdm],
) -> Result<f64, EstimatorError> {
    ProbeSet::new(probes, true_gains)?.coincidence(estimate.as_slice())
}
