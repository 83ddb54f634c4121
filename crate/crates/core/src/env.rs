//! The world outside the planner: situation generation, the simulated
//! decision-maker with its hidden gains, active experiment selection, and
//! injectors for the uncertainty sources on each channel.
//!
//! | channel                  | injector                   |
//! |--------------------------|----------------------------|
//! | estimate update (dC)     | [`channel_gate`]           |
//! | perception of (a, b)     | [`inject_sensor_noise`]    |
//! | plan execution           | [`inject_execution_noise`] |
//! | label q                  | [`flip_label`]             |

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{Label, COINCIDENCE_TOL};
use crate::matrix::Matrix;
use crate::model::{dot, norm, reduce, ModelError, ReducedPoint, Srdm, TransportInstance};
use crate::solver::{solve_exact, SolveError};

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("ExhaustedRetries: no balanced situation found after {0} draws")]
    ExhaustedRetries(usize),
    #[error("DegenerateSRDM: perceived supplies or demands are all zero")]
    DegenerateSrdm,
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("experiment planning needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("experiment planning needs a non-zero estimate")]
    EmptyEstimate,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Shape and integer value ranges of generated situations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrdmFamily {
    pub m: usize,
    pub n: usize,
    /// Inclusive `[lo, hi]` range for each supply.
    pub supply_range: [u32; 2],
    /// Inclusive `[lo, hi]` range for each demand.
    pub demand_range: [u32; 2],
}

impl SrdmFamily {
    pub fn new(m: usize, n: usize, lo: u32, hi: u32) -> Self {
        Self {
            m,
            n,
            supply_range: [lo, hi],
            demand_range: [lo, hi],
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.m < 2 || self.n < 2 {
            return Err(EnvError::InvalidFamily(format!(
                "m and n must be >= 2, got {}x{}",
                self.m, self.n
            )));
        }
        for (name, [lo, hi]) in [
            ("supply_range", self.supply_range),
            ("demand_range", self.demand_range),
        ] {
            if lo > hi {
                return Err(EnvError::InvalidFamily(format!(
                    "{name}: lo {lo} > hi {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn reduced_dim(&self) -> usize {
        (self.m - 1) * (self.n - 1)
    }
}

/// Draws integer supplies and the first `n-1` demands uniformly, then sets
/// the last demand to balance the totals, redrawing if it leaves its range.
pub fn generate_srdm<R: Rng + ?Sized>(family: &SrdmFamily, rng: &mut R) -> Result<Srdm, EnvError> {
    family.validate()?;
    let [slo, shi] = family.supply_range;
    let [dlo, dhi] = family.demand_range;
    for _ in 0..MAX_REDRAWS {
        let a: Vec<u32> = (0..family.m).map(|_| rng.random_range(slo..=shi)).collect();
        let mut b: Vec<u32> = (0..family.n - 1)
            .map(|_| rng.random_range(dlo..=dhi))
            .collect();
        let supply: i64 = a.iter().map(|&v| v as i64).sum();
        let partial: i64 = b.iter().map(|&v| v as i64).sum();
        let last = supply - partial;
        if last >= dlo as i64 && last <= dhi as i64 {
            b.push(last as u32);
            return Ok(Srdm::new(
                a.into_iter().map(f64::from).collect(),
                b.into_iter().map(f64::from).collect(),
            ));
        }
    }
    Err(EnvError::ExhaustedRetries(MAX_REDRAWS))
}

/// The decision-maker's private gain matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenTruth {
    pub gains: Matrix,
    /// Absolute shortfall from the optimum still judged optimal. `None`
    /// means `1e-6 * |optimum|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_opt: Option<f64>,
}

impl HiddenTruth {
    pub fn new(gains: Matrix) -> Self {
        Self {
            gains,
            epsilon_opt: None,
        }
    }

    pub fn reduced_gains(&self) -> Vec<f64> {
        crate::model::reduced_gains_of(&self.gains)
    }

    /// Optimal plan value under the true gains for a situation.
    pub fn optimum(&self, srdm: &Srdm) -> Result<f64, EnvError> {
        let inst = srdm.instance(self.gains.clone())?;
        let lp = reduce(&inst);
        let x = solve_exact(&lp)?;
        Ok(lp.objective(x.as_slice()) + lp.objective_constant())
    }

    pub fn value(&self, plan: &Matrix) -> Result<f64, EnvError> {
        self.gains
            .dot(plan)
            .ok_or(EnvError::Model(ModelError::DimensionMismatch {
                field: "X",
                expected: self.gains.shape(),
                got: plan.shape(),
            }))
    }

    /// Noise-free verdict: good iff the plan's true value reaches the
    /// optimum within `epsilon_opt`.
    pub fn clean_label(&self, srdm: &Srdm, plan: &Matrix) -> Result<Label, EnvError> {
        let best = self.optimum(srdm)?;
        let eps = self.epsilon_opt.unwrap_or(1e-6 * best.abs()).max(1e-9);
        Ok(if self.value(plan)? >= best - eps {
            Label::Good
        } else {
            Label::Bad
        })
    }
}

/// Intensities of the injected uncertainty sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability that a label never reaches the estimator.
    pub p_drop: f64,
    /// Relative standard deviation of perceived supplies and demands.
    pub sigma_sense: f64,
    /// Standard deviation of the flow moved by one execution cycle shift.
    pub sigma_exec: f64,
    /// Probability that a bad plan is labeled good.
    pub p_fp: f64,
    /// Probability that a good plan is labeled bad.
    pub p_fn: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p_drop: 0.0,
            sigma_sense: 0.0,
            sigma_exec: 0.0,
            p_fp: 0.0,
            p_fn: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Field-level problems, empty when valid.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, p) in [
            ("p_drop", self.p_drop),
            ("p_fp", self.p_fp),
            ("p_fn", self.p_fn),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push((
                    format!("noise.{name}"),
                    format!("must be in [0, 1], got {p}"),
                ));
            }
        }
        for (name, s) in [
            ("sigma_sense", self.sigma_sense),
            ("sigma_exec", self.sigma_exec),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                out.push((
                    format!("noise.{name}"),
                    format!("must be finite and >= 0, got {s}"),
                ));
            }
        }
        out
    }
}

/// Applies label errors to a clean verdict. Always consumes one draw.
pub fn flip_label<R: Rng + ?Sized>(clean: Label, p_fp: f64, p_fn: f64, rng: &mut R) -> Label {
    let u: f64 = rng.random();
    match clean {
        Label::Good if u < p_fn => Label::Bad,
        Label::Bad if u < p_fp => Label::Good,
        other => other,
    }
}

/// The simulated decision-maker's (possibly erroneous) verdict on a plan
/// for the true situation.
pub fn dm_label<R: Rng + ?Sized>(
    truth: &HiddenTruth,
    srdm: &Srdm,
    plan: &Matrix,
    noise: &NoiseConfig,
    rng: &mut R,
) -> Result<Label, EnvError> {
    let clean = truth.clean_label(srdm, plan)?;
    Ok(flip_label(clean, noise.p_fp, noise.p_fn, rng))
}

/// Multiplicative perception noise on `(a, b)`, clamped at zero, with the
/// demands rescaled so the perceived situation stays balanced.
pub fn inject_sensor_noise<R: Rng + ?Sized>(
    srdm: &Srdm,
    sigma: f64,
    rng: &mut R,
) -> Result<Srdm, EnvError> {
    if sigma == 0.0 {
        return Ok(srdm.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut perturb = |v: &f64| (v * (1.0 + normal.sample(rng))).max(0.0);
    let a: Vec<f64> = srdm.supplies.iter().map(&mut perturb).collect();
    let mut b: Vec<f64> = srdm.demands.iter().map(&mut perturb).collect();
    let supply: f64 = a.iter().sum();
    let demand: f64 = b.iter().sum();
    if supply <= 0.0 || demand <= 0.0 {
        return Err(EnvError::DegenerateSrdm);
    }
    let ratio = supply / demand;
    for v in &mut b {
        *v *= ratio;
    }
    // absorb rounding in the largest demand so the sums agree to the last bit
    let residual = supply - b.iter().sum::<f64>();
    if let Some(k) = (0..b.len()).max_by(|&i, &j| b[i].total_cmp(&b[j])) {
        b[k] += residual;
    }
    Ok(Srdm::new(a, b))
}

/// Shifts `delta` units around the rectangle `(i1, j1) -> (i1, j2) ->
/// (i2, j2) -> (i2, j1)`: the `(i1, j2)` and `(i2, j1)` cells lose flow,
/// the other two gain. Row and column sums are unchanged.
pub fn shift_cycle(
    plan: &Matrix,
    rows: (usize, usize),
    cols: (usize, usize),
    delta: f64,
) -> Matrix {
    let (i1, i2) = rows;
    let (j1, j2) = cols;
    let mut x = plan.clone();
    x[(i1, j1)] += delta;
    x[(i2, j2)] += delta;
    x[(i1, j2)] -= delta;
    x[(i2, j1)] -= delta;
    x
}

/// Execution distortion: one random rectangular cycle shift with
/// `delta ~ |N(0, sigma)|`, capped so no entry goes negative.
pub fn inject_execution_noise<R: Rng + ?Sized>(plan: &Matrix, sigma: f64, rng: &mut R) -> Matrix {
    if sigma == 0.0 {
        return plan.clone();
    }
    let (m, n) = plan.shape();
    let i1 = rng.random_range(0..m);
    let i2 = (i1 + rng.random_range(1..m)) % m;
    let j1 = rng.random_range(0..n);
    let j2 = (j1 + rng.random_range(1..n)) % n;
    let z: f64 = StandardNormal.sample(rng);
    let cap = plan[(i1, j2)].min(plan[(i2, j1)]).max(0.0);
    let delta = (sigma * z).abs().min(cap);
    shift_cycle(plan, (i1, i2), (j1, j2), delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    Delivered,
    Dropped,
}

/// Whether the estimate update of this round reaches the planner.
/// Always consumes one draw.
pub fn channel_gate<R: Rng + ?Sized>(p_drop: f64, rng: &mut R) -> Delivery {
    let u: f64 = rng.random();
    if u < p_drop {
        Delivery::Dropped
    } else {
        Delivery::Delivered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub candidates: usize,
    pub committee: usize,
    /// Maximum rotation of a committee member away from the estimate.
    pub spread_deg: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            candidates: 16,
            committee: 8,
            spread_deg: 10.0,
        }
    }
}

/// Rotates the unit vector `center` by a uniform angle in `[0, spread]`
/// toward a random orthogonal direction.
fn perturbed_direction<R: Rng + ?Sized>(center: &[f64], spread_deg: f64, rng: &mut R) -> Vec<f64> {
    let d = center.len();
    if d < 2 {
        return center.to_vec();
    }
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let proj = dot(&u, center);
    for (ui, ci) in u.iter_mut().zip(center) {
        *ui -= proj * ci;
    }
    let len = norm(&u);
    let theta = rng.random_range(0.0..=spread_deg).to_radians();
    if len < 1e-12 {
        return center.to_vec();
    }
    center
        .iter()
        .zip(&u)
        .map(|(c, ui)| theta.cos() * c + theta.sin() * ui / len)
        .collect()
}

/// Number of distinct optimal vertices the committee selects for a
/// situation.
pub fn committee_disagreement(srdm: &Srdm, committee: &[Vec<f64>]) -> Result<usize, EnvError> {
    let m = srdm.supplies.len();
    let n = srdm.demands.len();
    let lp = reduce(&srdm.instance(Matrix::zeros(m, n))?);
    let mut distinct: Vec<ReducedPoint> = Vec::new();
    for member in committee {
        let x = solve_exact(&lp.with_reduced_gains(member))?;
        if !distinct
            .iter()
            .any(|v| v.max_abs_diff(&x) <= COINCIDENCE_TOL)
        {
            distinct.push(x);
        }
    }
    Ok(distinct.len())
}

/// Index of the candidate with the largest disagreement; ties go to the
/// first.
pub fn select_by_disagreement(
    candidates: &[Srdm],
    committee: &[Vec<f64>],
) -> Result<usize, EnvError> {
    let mut best = (0, 0);
    for (k, c) in candidates.iter().enumerate() {
        let score = committee_disagreement(c, committee)?;
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Query-by-committee choice of the next situation to present.
pub fn plan_experiment<R: Rng + ?Sized>(
    family: &SrdmFamily,
    estimate: &[f64],
    params: &ExperimentParams,
    rng: &mut R,
) -> Result<Srdm, EnvError> {
    if params.candidates < 2 {
        return Err(EnvError::TooFewCandidates(params.candidates));
    }
    let len = norm(estimate);
    if estimate.len() != family.reduced_dim() || len <= 1e-12 {
        return Err(EnvError::EmptyEstimate);
    }
    let center: Vec<f64> = estimate.iter().map(|v| v / len).collect();
    let candidates = (0..params.candidates)
        .map(|_| generate_srdm(family, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let committee: Vec<Vec<f64>> = (0..params.committee.max(1))
        .map(|_| perturbed_direction(&center, params.spread_deg, rng))
        .collect();
    let k = select_by_disagreement(&candidates, &committee)?;
    Ok(candidates[k].clone())
}

/// Value of `plan` under the true gains minus the true optimum, for the
/// situation the plan was meant for.
pub fn regret(truth: &HiddenTruth, srdm: &Srdm, plan: &Matrix) -> Result<f64, EnvError> {
    Ok(truth.optimum(srdm)? - truth.value(plan)?)
}

/// Builds the instance the planner sees for a situation: the perceived
/// `(a, b)` with the canonical lift of the reduced gains it plans with.
pub fn planning_instance(
    srdm: &Srdm,
    reduced_gains: &[f64],
) -> Result<TransportInstance, EnvError> {
    let m = srdm.supplies.len();
    let n = srdm.demands.len();
    Ok(srdm.instance(crate::model::lift_reduced_gains(m, n, reduced_gains))?)
}
