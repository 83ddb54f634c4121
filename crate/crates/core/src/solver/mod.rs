//! Direct problem solving: an exact vertex-enumeration oracle and the
//! matrix-game route through fictitious play.

mod game;
pub(crate) mod purify;
mod vertex;

pub use game::{
    lp_to_symmetric_game, solve_fictitious, symmetric_game, FictitiousPlay, SymmetricGame,
    EXTRACTION_EPS,
};
pub use purify::purify;
pub use vertex::{
    argmax_vertex, enumerate_vertices, solve_exact, solve_exact_with_cap, Vertex, DEFAULT_DIM_CAP,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    reconstruct, reduce, ModelError, Plan, ReducedLpp, ReducedPoint, TransportInstance, FEAS_TOL,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("DimensionTooLarge: {dim} free variables exceeds the enumeration cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },
    #[error("reduced problem has no feasible vertex")]
    Infeasible,
    #[error("fictitious play requires max_iters >= 1 and tol > 0")]
    InvalidParameters,
    #[error(
        "NotConverged: bracket [{:.3e}, {:.3e}] after {} iterations",
        .0.lower, .0.upper, .0.iterations
    )]
    NotConverged(Box<FictitiousPlay>),
    #[error("fictitious play strategy has no usable homogenizing weight")]
    Extraction,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveMethod {
    #[default]
    Exact,
    FictitiousPlay,
}

impl std::str::FromStr for SolveMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SolveMethod::Exact),
            "fp" | "fictitious_play" => Ok(SolveMethod::FictitiousPlay),
            other => Err(format!("unknown method `{other}` (expected exact|fp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: SolveMethod,
    /// Also run the exact solver and report the objective gap.
    pub verify: bool,
    pub max_iters: usize,
    pub tol: f64,
    pub dim_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::Exact,
            verify: false,
            max_iters: 200_000,
            tol: 1e-3,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }
}

impl SolverOptions {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn fictitious() -> Self {
        Self {
            method: SolveMethod::FictitiousPlay,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub plan: Plan,
    pub reduced_point: ReducedPoint,
    /// Full objective `L(X)`.
    pub objective: f64,
    pub method: SolveMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Final value bracket width of fictitious play.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<f64>,
    /// Objective of the fictitious-play point before purification.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

/// Moves an approximately feasible point into the polytope by cyclic
/// projection onto violated halfspaces. Returns `None` if the residual
/// violation stays above `FEAS_TOL`.
pub fn repair_point(lp: &ReducedLpp, x: &[f64]) -> Option<Vec<f64>> {
    const SWEEPS: usize = 10_000;
    let mut x = x.to_vec();
    for _ in 0..SWEEPS {
        let mut worst = 0.0f64;
        for c in lp.constraints() {
            let violation = -c.slack(&x);
            if violation > 0.0 {
                worst = worst.max(violation);
                let nn: f64 = c.normal.iter().map(|v| v * v).sum();
                // overshoot slightly so the halfspace is entered, not just touched
                let step = (violation + 1e-12) / nn;
                for (xi, ni) in x.iter_mut().zip(&c.normal) {
                    *xi -= step * ni;
                }
            }
        }
        if worst <= 1e-12 {
            break;
        }
    }
    (lp.max_violation(&x) <= FEAS_TOL).then_some(x)
}

/// Result of solving a reduced LP through fictitious play.
#[derive(Debug, Clone, PartialEq)]
pub struct FictitiousSolution {
    /// Purified vertex.
    pub point: ReducedPoint,
    /// Extracted point after feasibility repair, before purification.
    pub raw_point: ReducedPoint,
    pub play: FictitiousPlay,
}

/// Fictitious-play solution of a reduced LP.
///
/// The symmetric strategy is the average of both players' empirical
/// strategies. The extracted point is repaired into the feasible set and
/// then purified to a vertex. A run that hits `max_iters` still yields its
/// approximate point.
pub fn solve_reduced_fictitious(
    lp: &ReducedLpp,
    max_iters: usize,
    tol: f64,
) -> Result<FictitiousSolution, SolveError> {
    let game = lp_to_symmetric_game(lp);
    let play = match solve_fictitious(game.payoff(), max_iters, tol) {
        Ok(fp) => fp,
        Err(SolveError::NotConverged(fp)) => *fp,
        Err(e) => return Err(e),
    };
    let symmetric: Vec<f64> = play
        .row_strategy
        .iter()
        .zip(&play.col_strategy)
        .map(|(p, q)| 0.5 * (p + q))
        .collect();
    let raw = game
        .extract(&symmetric)
        .ok_or_else(|| SolveError::NotConverged(Box::new(play.clone())))?;
    let repaired = repair_point(lp, raw.as_slice()).ok_or(SolveError::Extraction)?;
    let vertex = purify(lp, &repaired);
    Ok(FictitiousSolution {
        point: ReducedPoint::new(vertex),
        raw_point: ReducedPoint::new(repaired),
        play,
    })
}

/// Reduce, solve with the chosen method, reconstruct.
pub fn solve_direct(
    instance: &TransportInstance,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    let lp = reduce(instance);
    solve_reduced_direct(instance, &lp, options)
}

/// Like [`solve_direct`] but with an explicit reduced LP, which may carry
/// estimated reduced gains instead of the instance's own.
pub fn solve_reduced_direct(
    instance: &TransportInstance,
    lp: &ReducedLpp,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    let (point, fp) = match options.method {
        SolveMethod::Exact => (solve_exact_with_cap(lp, options.dim_cap)?, None),
        SolveMethod::FictitiousPlay => {
            let sol = solve_reduced_fictitious(lp, options.max_iters, options.tol)?;
            (sol.point.clone(), Some(sol))
        }
    };
    let plan = reconstruct(&point, instance)?;
    let raw_objective = fp
        .as_ref()
        .map(|s| lp.objective(s.raw_point.as_slice()) + lp.objective_constant());
    let gap = if options.verify && options.method != SolveMethod::Exact {
        let exact = solve_exact_with_cap(lp, options.dim_cap)?;
        let exact_plan = reconstruct(&exact, instance)?;
        Some((plan.effect - exact_plan.effect).abs())
    } else if options.verify {
        Some(0.0)
    } else {
        None
    };
    Ok(SolveReport {
        objective: plan.effect,
        plan,
        reduced_point: point,
        method: options.method,
        iterations: fp.as_ref().map(|s| s.play.iterations),
        bracket: fp.as_ref().map(|s| s.play.bracket_width()),
        raw_objective,
        gap,
    })
}
