use serde::{Deserialize, Serialize};

use crate::env::{ExperimentParams, NoiseConfig, SrdmFamily};
use crate::estimator::EstimatorParams;
use crate::matrix::Matrix;
use crate::solver::{SolveMethod, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    SimulatedDm,
    HumanDm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SrdmSource {
    #[default]
    Random,
    Active,
}

/// How the simulated decision-maker's gains are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    /// Explicit `m x n` gains. When absent, entries are drawn uniformly
    /// from `range` using the session seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Matrix>,
    pub range: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_opt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            gains: None,
            range: [0.0, 10.0],
            epsilon_opt: None,
            drift: None,
        }
    }
}

/// Replaces the hidden gains from the given round on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub round: u64,
    /// New gains; drawn like the initial ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub family: SrdmFamily,
    pub mode: Mode,
    pub srdm_source: SrdmSource,
    pub noise: NoiseConfig,
    pub solver: SolverOptions,
    pub estimator: EstimatorParams,
    pub experiment: ExperimentParams,
    pub rounds: u64,
    pub probe_set_size: usize,
    /// Simulated mode only; defaults to a random draw when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSpec>,
    /// Include the hidden gains in event views served to clients.
    pub reveal_truth: bool,
    /// Store wall-clock round durations in the log. Off by default so
    /// logs of identical runs are byte-identical.
    pub record_timing: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            family: SrdmFamily::new(2, 3, 1, 9),
            mode: Mode::SimulatedDm,
            srdm_source: SrdmSource::Random,
            noise: NoiseConfig::default(),
            solver: SolverOptions::default(),
            estimator: EstimatorParams::default(),
            experiment: ExperimentParams::default(),
            rounds: 150,
            probe_set_size: 50,
            truth: None,
            reveal_truth: false,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldProblem {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SessionConfig {
    pub fn is_simulated(&self) -> bool {
        self.mode == Mode::SimulatedDm
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.noise.seed = seed;
        c
    }

    pub fn truth_spec(&self) -> TruthSpec {
        self.truth.clone().unwrap_or_default()
    }

    /// All invariant violations, empty when the config is usable.
    pub fn problems(&self) -> Vec<FieldProblem> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| {
            out.push(FieldProblem {
                field: field.to_string(),
                message,
            })
        };
        if let Err(e) = self.family.validate() {
            push("family", e.to_string());
        }
        for (field, message) in self.noise.problems() {
            push(&field, message);
        }
        if self.rounds == 0 {
            push("rounds", "must be >= 1".into());
        }
        if self.probe_set_size == 0 {
            push("probe_set_size", "must be >= 1".into());
        }
        let g = self.estimator.gamma;
        if !(g > 0.0 && g <= 1.0) {
            push("estimator.gamma", format!("must be in (0, 1], got {g}"));
        }
        let l = self.estimator.lambda_neg;
        if !(l >= 0.0 && l.is_finite()) {
            push(
                "estimator.lambda_neg",
                format!("must be finite and >= 0, got {l}"),
            );
        }
        if self.solver.max_iters == 0 {
            push("solver.max_iters", "must be >= 1".into());
        }
        if self.solver.tol.is_nan() || self.solver.tol <= 0.0 {
            push(
                "solver.tol",
                format!("must be > 0, got {}", self.solver.tol),
            );
        }
        let dim = self.family.m.saturating_sub(1) * self.family.n.saturating_sub(1);
        let needs_oracle = self.solver.method == SolveMethod::Exact
            || self.is_simulated()
            || self.srdm_source == SrdmSource::Active;
        if needs_oracle && dim > self.solver.dim_cap {
            push(
                "family",
                format!(
                    "{dim} reduced variables exceeds the enumeration cap of {}",
                    self.solver.dim_cap
                ),
            );
        }
        if self.srdm_source == SrdmSource::Active && self.experiment.candidates < 2 {
            push("experiment.candidates", "must be >= 2".into());
        }
        let spread = self.experiment.spread_deg;
        if !(0.0..=90.0).contains(&spread) {
            push(
                "experiment.spread_deg",
                format!("must be in [0, 90], got {spread}"),
            );
        }
        match self.mode {
            Mode::HumanDm => {
                if self.noise.p_fp > 0.0 {
                    push(
                        "noise.p_fp",
                        "label noise is not simulated for a human decision-maker".into(),
                    );
                }
                if self.noise.p_fn > 0.0 {
                    push(
                        "noise.p_fn",
                        "label noise is not simulated for a human decision-maker".into(),
                    );
                }
                if self.truth.is_some() {
                    push("truth", "a human decision-maker has no hidden truth".into());
                }
            }
            Mode::SimulatedDm => {
                let t = self.truth_spec();
                let shape = (self.family.m, self.family.n);
                let [lo, hi] = t.range;
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    push(
                        "truth.range",
                        format!("need finite lo < hi, got [{lo}, {hi}]"),
                    );
                }
                if let Some(eps) = t.epsilon_opt {
                    if !(eps >= 0.0 && eps.is_finite()) {
                        push(
                            "truth.epsilon_opt",
                            format!("must be finite and >= 0, got {eps}"),
                        );
                    }
                }
                let explicit = t.gains.iter().map(|g| ("truth.gains", g));
                let drifted = t
                    .drift
                    .iter()
                    .filter_map(|d| d.gains.as_ref())
                    .map(|g| ("truth.drift.gains", g));
                for (field, g) in explicit.chain(drifted) {
                    if g.shape() != shape {
                        push(field, format!("expected {shape:?}, got {:?}", g.shape()));
                    } else if g.as_slice().iter().any(|v| !v.is_finite()) {
                        push(field, "entries must be finite".into());
                    }
                }
                if let Some(d) = &t.drift {
                    if d.round < 1 {
                        push("truth.drift.round", "must be >= 1".into());
                    }
                }
            }
        }
        out
    }
}
