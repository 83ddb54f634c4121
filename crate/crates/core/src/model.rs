//! Balanced transportation instances, the reduction to the smaller LP over
//! the free block of the plan, and reconstruction of full plans.
//!
//! The reduction eliminates the first row and first column of the plan:
//!
//! ```text
//! x11 = a1 - sum_{j>=2} b_j + sum_{i,j>=2} x_ij
//! xi1 = a_i - sum_{j>=2} x_ij          (i >= 2)
//! x1j = b_j - sum_{i>=2} x_ij          (j >= 2)
//! ```
//!
//! leaving `(m-1)(n-1)` free variables with reduced gains
//! `c11 - ci1 - c1j + cij` and an additive constant `K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Absolute tolerance on `sum(a) == sum(b)`.
pub const BALANCE_TOL: f64 = 1e-9;
/// Absolute tolerance for feasibility checks on plans and reduced points.
pub const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("UnbalancedInstance: sum(a) = {supply} but sum(b) = {demand}")]
    UnbalancedInstance { supply: f64, demand: f64 },
    #[error("NegativeSupply: a[{index}] = {value}")]
    NegativeSupply { index: usize, value: f64 },
    #[error("NegativeDemand: b[{index}] = {value}")]
    NegativeDemand { index: usize, value: f64 },
    #[error("NonFinite: {field} contains a non-finite value")]
    NonFinite { field: &'static str },
    #[error("DimensionMismatch: {field} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        field: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("TooSmall: need m >= 2 and n >= 2, got m = {m}, n = {n}")]
    TooSmall { m: usize, n: usize },
    #[error("AlreadyBalanced: sum(a) = sum(b) = {total}")]
    AlreadyBalanced { total: f64 },
    #[error("InfeasibleReducedPoint: reconstructed x[{row}][{col}] = {value}")]
    InfeasibleReducedPoint { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    #[default]
    Transport,
    Assignment,
}

/// A validated balanced transportation instance (maximization sense).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportInstance {
    #[serde(rename = "a")]
    supplies: Vec<f64>,
    #[serde(rename = "b")]
    demands: Vec<f64>,
    #[serde(rename = "C")]
    gains: Matrix,
    kind: InstanceKind,
}

fn check_finite(values: &[f64], field: &'static str) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { field })
    }
}

fn check_shape(supplies: &[f64], demands: &[f64], gains: &Matrix) -> Result<(), ModelError> {
    let (m, n) = (supplies.len(), demands.len());
    if gains.shape() != (m, n) {
        return Err(ModelError::DimensionMismatch {
            field: "C",
            expected: (m, n),
            got: gains.shape(),
        });
    }
    check_finite(supplies, "a")?;
    check_finite(demands, "b")?;
    check_finite(gains.as_slice(), "C")?;
    if let Some((index, &value)) = supplies.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(ModelError::NegativeSupply { index, value });
    }
    if let Some((index, &value)) = demands.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(ModelError::NegativeDemand { index, value });
    }
    Ok(())
}

/// Validates a balanced instance. Never repairs input.
pub fn validate_instance(
    supplies: Vec<f64>,
    demands: Vec<f64>,
    gains: Matrix,
) -> Result<TransportInstance, ModelError> {
    let (m, n) = (supplies.len(), demands.len());
    if m < 2 || n < 2 {
        return Err(ModelError::TooSmall { m, n });
    }
    check_shape(&supplies, &demands, &gains)?;
    let supply: f64 = supplies.iter().sum();
    let demand: f64 = demands.iter().sum();
    if (supply - demand).abs() > BALANCE_TOL {
        return Err(ModelError::UnbalancedInstance { supply, demand });
    }
    Ok(TransportInstance {
        supplies,
        demands,
        gains,
        kind: InstanceKind::Transport,
    })
}

/// Balances an instance by appending a zero-gain dummy supply row or
/// dummy demand column that absorbs the difference.
pub fn balance_with_dummy(
    mut supplies: Vec<f64>,
    mut demands: Vec<f64>,
    gains: Matrix,
) -> Result<TransportInstance, ModelError> {
    check_shape(&supplies, &demands, &gains)?;
    let supply: f64 = supplies.iter().sum();
    let demand: f64 = demands.iter().sum();
    let diff = demand - supply;
    if diff.abs() <= BALANCE_TOL {
        return Err(ModelError::AlreadyBalanced { total: supply });
    }
    let (m, n) = gains.shape();
    let gains = if diff > 0.0 {
        supplies.push(diff);
        let mut g = Matrix::zeros(m + 1, n);
        for i in 0..m {
            for j in 0..n {
                g[(i, j)] = gains[(i, j)];
            }
        }
        g
    } else {
        demands.push(-diff);
        let mut g = Matrix::zeros(m, n + 1);
        for i in 0..m {
            for j in 0..n {
                g[(i, j)] = gains[(i, j)];
            }
        }
        g
    };
    validate_instance(supplies, demands, gains)
}

/// An assignment instance of size `n` (unit supplies and demands) with zero
/// gains; attach gains with [`TransportInstance::with_gains`].
pub fn make_assignment_instance(n: usize) -> Result<TransportInstance, ModelError> {
    let mut inst = validate_instance(vec![1.0; n], vec![1.0; n], Matrix::zeros(n, n))?;
    inst.kind = InstanceKind::Assignment;
    Ok(inst)
}

impl TransportInstance {
    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    pub fn gains(&self) -> &Matrix {
        &self.gains
    }

    pub fn kind(&self) -> InstanceKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.supplies.len()
    }

    pub fn n(&self) -> usize {
        self.demands.len()
    }

    pub fn total(&self) -> f64 {
        self.supplies.iter().sum()
    }

    /// Same SRDM, different gain matrix.
    pub fn with_gains(&self, gains: Matrix) -> Result<TransportInstance, ModelError> {
        if gains.shape() != (self.m(), self.n()) {
            return Err(ModelError::DimensionMismatch {
                field: "C",
                expected: (self.m(), self.n()),
                got: gains.shape(),
            });
        }
        check_finite(gains.as_slice(), "C")?;
        Ok(TransportInstance {
            gains,
            ..self.clone()
        })
    }

    pub(crate) fn set_kind(&mut self, kind: InstanceKind) {
        self.kind = kind;
    }
}

/// A situation requiring a decision: one `(a, b)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srdm {
    #[serde(rename = "a")]
    pub supplies: Vec<f64>,
    #[serde(rename = "b")]
    pub demands: Vec<f64>,
}

impl Srdm {
    pub fn new(supplies: Vec<f64>, demands: Vec<f64>) -> Self {
        Self { supplies, demands }
    }

    pub fn instance(&self, gains: Matrix) -> Result<TransportInstance, ModelError> {
        validate_instance(self.supplies.clone(), self.demands.clone(), gains)
    }
}

impl From<&TransportInstance> for Srdm {
    fn from(inst: &TransportInstance) -> Self {
        Srdm::new(inst.supplies.clone(), inst.demands.clone())
    }
}

/// Objective value `sum c_ij x_ij`. The plan need not be feasible.
pub fn evaluate(instance: &TransportInstance, plan: &Matrix) -> Result<f64, ModelError> {
    instance
        .gains
        .dot(plan)
        .ok_or(ModelError::DimensionMismatch {
            field: "X",
            expected: instance.gains.shape(),
            got: plan.shape(),
        })
}

/// Which group of the reduced LP a constraint row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `x11 >= 0` rewritten over the free block.
    FirstCell,
    /// `x_i1 >= 0` for supply row `i` (0-based, `i >= 1`).
    SupplyRow { row: usize },
    /// `x_1j >= 0` for demand column `j` (0-based, `j >= 1`).
    DemandCol { col: usize },
    /// `x_ij >= 0` for a free variable.
    NonNegative { var: usize },
}

/// A halfspace `normal . x <= bound` over the free variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub normal: Vec<f64>,
    pub bound: f64,
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.bound - dot(&self.normal, x)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The LP over the free block of the plan.
///
/// `constraints` holds the structural rows first (one for the first cell,
/// `m-1` supply rows, `n-1` demand columns) followed by one
/// non-negativity row per free variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedLpp {
    m: usize,
    n: usize,
    reduced_gains: Vec<f64>,
    constraints: Vec<Constraint>,
    objective_constant: f64,
}

impl ReducedLpp {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of free variables `(m-1)(n-1)`.
    pub fn dim(&self) -> usize {
        (self.m - 1) * (self.n - 1)
    }

    /// Row-major over `i = 2..m`, `j = 2..n`.
    pub fn reduced_gains(&self) -> &[f64] {
        &self.reduced_gains
    }

    pub fn reduced_gain_matrix(&self) -> Matrix {
        Matrix::from_vec(self.m - 1, self.n - 1, self.reduced_gains.clone())
            .expect("reduced gains have (m-1)(n-1) entries")
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn structural_constraints(&self) -> &[Constraint] {
        &self.constraints[..self.structural_count()]
    }

    pub fn structural_count(&self) -> usize {
        1 + (self.m - 1) + (self.n - 1)
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.reduced_gains, x)
    }

    /// The same polytope with a different objective. Used to plan with an
    /// estimated reduced gain vector; the constant is reset to zero.
    pub fn with_reduced_gains(&self, gains: &[f64]) -> ReducedLpp {
        assert_eq!(gains.len(), self.dim(), "reduced gain length");
        ReducedLpp {
            reduced_gains: gains.to_vec(),
            objective_constant: 0.0,
            ..self.clone()
        }
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.constraints.iter().all(|c| c.slack(x) >= -tol)
    }

    /// Largest constraint violation (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| -c.slack(x))
            .fold(0.0, f64::max)
    }
}

/// Reduced gains `c11 - ci1 - c1j + cij` for `i, j >= 2`, row-major.
pub fn reduced_gains_of(gains: &Matrix) -> Vec<f64> {
    let (m, n) = gains.shape();
    let mut out = Vec::with_capacity((m - 1) * (n - 1));
    for i in 1..m {
        for j in 1..n {
            out.push(gains[(0, 0)] - gains[(i, 0)] - gains[(0, j)] + gains[(i, j)]);
        }
    }
    out
}

/// Canonical lift of reduced gains to a full matrix with zero first row
/// and first column.
pub fn lift_reduced_gains(m: usize, n: usize, reduced: &[f64]) -> Matrix {
    assert_eq!(reduced.len(), (m - 1) * (n - 1));
    let mut g = Matrix::zeros(m, n);
    for i in 1..m {
        for j in 1..n {
            g[(i, j)] = reduced[(i - 1) * (n - 1) + (j - 1)];
        }
    }
    g
}

pub fn reduce(instance: &TransportInstance) -> ReducedLpp {
    let (m, n) = (instance.m(), instance.n());
    let (a, b, c) = (&instance.supplies, &instance.demands, &instance.gains);
    let d = (m - 1) * (n - 1);
    let var = |i: usize, j: usize| (i - 1) * (n - 1) + (j - 1);
    let tail_demand: f64 = b[1..].iter().sum();

    let mut constraints = Vec::with_capacity(m + n - 1 + d);
    constraints.push(Constraint {
        normal: vec![-1.0; d],
        bound: a[0] - tail_demand,
        kind: ConstraintKind::FirstCell,
    });
    for i in 1..m {
        let mut normal = vec![0.0; d];
        for j in 1..n {
            normal[var(i, j)] = 1.0;
        }
        constraints.push(Constraint {
            normal,
            bound: a[i],
            kind: ConstraintKind::SupplyRow { row: i },
        });
    }
    for j in 1..n {
        let mut normal = vec![0.0; d];
        for i in 1..m {
            normal[var(i, j)] = 1.0;
        }
        constraints.push(Constraint {
            normal,
            bound: b[j],
            kind: ConstraintKind::DemandCol { col: j },
        });
    }
    for k in 0..d {
        let mut normal = vec![0.0; d];
        normal[k] = -1.0;
        constraints.push(Constraint {
            normal,
            bound: 0.0,
            kind: ConstraintKind::NonNegative { var: k },
        });
    }

    let objective_constant = c[(0, 0)] * (a[0] - tail_demand)
        + (1..m).map(|i| c[(i, 0)] * a[i]).sum::<f64>()
        + (1..n).map(|j| c[(0, j)] * b[j]).sum::<f64>();

    ReducedLpp {
        m,
        n,
        reduced_gains: reduced_gains_of(c),
        constraints,
        objective_constant,
    }
}

/// The free block of a plan (rows and columns `>= 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub values: Vec<f64>,
}

impl ReducedPoint {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Extracts the free block from a full plan.
    pub fn from_plan(plan: &Matrix) -> Self {
        let (m, n) = plan.shape();
        let mut values = Vec::with_capacity((m - 1) * (n - 1));
        for i in 1..m {
            for j in 1..n {
                values.push(plan[(i, j)]);
            }
        }
        Self { values }
    }

    pub fn max_abs_diff(&self, other: &ReducedPoint) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A full allocation with its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub x: Matrix,
    pub effect: f64,
}

impl Plan {
    /// Checks row sums, column sums and non-negativity within `FEAS_TOL`.
    pub fn is_feasible_for(&self, instance: &TransportInstance) -> bool {
        if self.x.shape() != (instance.m(), instance.n()) {
            return false;
        }
        let rows_ok = self
            .x
            .row_sums()
            .iter()
            .zip(instance.supplies())
            .all(|(s, a)| (s - a).abs() <= FEAS_TOL);
        let cols_ok = self
            .x
            .col_sums()
            .iter()
            .zip(instance.demands())
            .all(|(s, b)| (s - b).abs() <= FEAS_TOL);
        rows_ok && cols_ok && self.x.as_slice().iter().all(|&v| v >= -FEAS_TOL)
    }
}

/// Rebuilds the full plan from the free block via the elimination formulas.
pub fn reconstruct(point: &ReducedPoint, instance: &TransportInstance) -> Result<Plan, ModelError> {
    let (m, n) = (instance.m(), instance.n());
    if point.values.len() != (m - 1) * (n - 1) {
        return Err(ModelError::DimensionMismatch {
            field: "x_reduced",
            expected: (m - 1, n - 1),
            got: (point.values.len(), 1),
        });
    }
    let (a, b) = (&instance.supplies, &instance.demands);
    let mut x = Matrix::zeros(m, n);
    for i in 1..m {
        for j in 1..n {
            x[(i, j)] = point.values[(i - 1) * (n - 1) + (j - 1)];
        }
    }
    let free_total: f64 = point.values.iter().sum();
    x[(0, 0)] = a[0] - b[1..].iter().sum::<f64>() + free_total;
    for i in 1..m {
        x[(i, 0)] = a[i] - (1..n).map(|j| x[(i, j)]).sum::<f64>();
    }
    for j in 1..n {
        x[(0, j)] = b[j] - (1..m).map(|i| x[(i, j)]).sum::<f64>();
    }
    for i in 0..m {
        for j in 0..n {
            if x[(i, j)] < -FEAS_TOL {
                return Err(ModelError::InfeasibleReducedPoint {
                    row: i,
                    col: j,
                    value: x[(i, j)],
                });
            }
        }
    }
    let effect = evaluate(instance, &x)?;
    Ok(Plan { x, effect })
}

/// On-disk instance document: `{"a": [...], "b": [...], "C": [[...]], "kind": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Matrix,
    #[serde(default)]
    pub kind: InstanceKind,
}

#[derive(Debug, Error)]
pub enum InstanceFileError {
    #[error("malformed instance document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid instance: {0}")]
    Invalid(#[from] ModelError),
    #[error("assignment instance must have unit supplies and demands")]
    NotAssignment,
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<TransportInstance, InstanceFileError> {
        let doc: InstanceFile =
            serde_json::from_str(text).map_err(|e| InstanceFileError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        doc.into_instance()
    }

    pub fn into_instance(self) -> Result<TransportInstance, InstanceFileError> {
        let kind = self.kind;
        if kind == InstanceKind::Assignment
            && (self.a.iter().chain(&self.b).any(|&v| v != 1.0) || self.a.len() != self.b.len())
        {
            return Err(InstanceFileError::NotAssignment);
        }
        let mut inst = validate_instance(self.a, self.b, self.c)?;
        inst.set_kind(kind);
        Ok(inst)
    }

    pub fn from_instance(instance: &TransportInstance) -> Self {
        Self {
            a: instance.supplies.clone(),
            b: instance.demands.clone(),
            c: instance.gains.clone(),
            kind: instance.kind,
        }
    }
}
