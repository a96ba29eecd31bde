//! Problem definition: plant, disturbance model, constraint sets, risk levels
//! and cost weights, plus validation into a normalized instance.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::{cast, Scalar};

/// Symmetry tolerance applied to covariance and weight matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues above this (negative) floor count as semidefinite.
pub const PSD_EIG_TOL: f64 = -1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in `{field}`: expected {expected_rows}x{expected_cols}, got {actual_rows}x{actual_cols}")]
    DimensionMismatch {
        field: String,
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("`{field}` has {actual} entries, expected 1 (broadcast) or {expected}")]
    LengthMismatch {
        field: String,
        expected: usize,
        actual: usize,
    },
    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: String, asymmetry: f64 },
    #[error("matrix `{name}` is not positive semidefinite (eigenvalue {eigenvalue:.6e})")]
    NotPsd { name: String, eigenvalue: f64 },
    #[error("risk level `{name}` = {value} lies outside (0, 1)")]
    RiskOutOfRange { name: String, value: f64 },
    #[error("`{field}` contains a non-finite entry")]
    NonFinite { field: String },
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("polytope `{name}` has no half-spaces")]
    EmptyPolytope { name: String },
    #[error("polytope `{name}` has an all-zero normal in row {row}")]
    ZeroRow { name: String, row: usize },
    #[error("initial state violates X_0 in half-space {row}")]
    InitialStateOutsideSet { row: usize },
    #[error("negative scalar weight S = {value}")]
    NegativeWeight { value: f64 },
}

/// Discrete-time linear plant `x_{k+1} = A x_k + B u_k + E w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub e: DMatrix<T>,
}

impl<T: Scalar> LinearPlant<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, e: DMatrix<T>) -> Result<Self, ModelError> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(dim_err("A", n_x, n_x, &a));
        }
        if b.nrows() != n_x {
            return Err(dim_err("B", n_x, b.ncols(), &b));
        }
        if e.nrows() != n_x {
            return Err(dim_err("E", n_x, e.ncols(), &e));
        }
        for (name, m) in [("A", &a), ("B", &b), ("E", &e)] {
            check_finite(name, m)?;
        }
        Ok(Self { a, b, e })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.e.ncols()
    }
}

/// Zero-mean disturbance with one covariance per prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel<T: Scalar> {
    pub covariances: Vec<DMatrix<T>>,
}

impl<T: Scalar> DisturbanceModel<T> {
    /// One covariance per step.
    pub fn per_step(covariances: Vec<DMatrix<T>>) -> Self {
        Self { covariances }
    }

    /// A single covariance broadcast over the horizon during validation.
    pub fn uniform(covariance: DMatrix<T>) -> Self {
        Self {
            covariances: vec![covariance],
        }
    }
}

/// Polytope `{ z : C z <= b }` given by one half-space per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope<T: Scalar> {
    pub c: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Scalar> Polytope<T> {
    pub fn new(c: DMatrix<T>, b: DVector<T>) -> Result<Self, ModelError> {
        if c.nrows() == 0 {
            return Err(ModelError::EmptyPolytope {
                name: "polytope".into(),
            });
        }
        if b.len() != c.nrows() {
            return Err(dim_err("b", c.nrows(), 1, &DMatrix::from_column_slice(b.len(), 1, b.as_slice())));
        }
        for r in 0..c.nrows() {
            if c.row(r).iter().all(|v| *v == T::zero()) {
                return Err(ModelError::ZeroRow {
                    name: "polytope".into(),
                    row: r,
                });
            }
        }
        check_finite("polytope C", &c)?;
        Ok(Self { c, b })
    }

    /// Axis-aligned box `|z_i| <= half_width_i`.
    pub fn box_set(half_widths: &[T]) -> Self {
        let n = half_widths.len();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            c[(2 * i, i)] = T::one();
            c[(2 * i + 1, i)] = -T::one();
            b[2 * i] = half_widths[i];
            b[2 * i + 1] = half_widths[i];
        }
        Self { c, b }
    }

    pub fn num_halfspaces(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn contains(&self, z: &DVector<T>) -> bool {
        let residual = &self.c * z - &self.b;
        residual.iter().all(|v| *v <= T::zero())
    }
}

/// Full problem instance prior to validation. Broadcast fields (a single
/// covariance, state set or weight) are expanded to per-step lists by
/// [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T: Scalar> {
    pub plant: LinearPlant<T>,
    pub disturbance: DisturbanceModel<T>,
    pub horizon: usize,
    pub x0: DVector<T>,
    /// One polytope per step `X_0..X_H`, or a single one to broadcast.
    pub state_sets: Vec<Polytope<T>>,
    pub input_set: Polytope<T>,
    pub delta_x: T,
    pub delta_u: T,
    /// `Q_0..Q_H`, or a single matrix to broadcast.
    pub q_weights: Vec<DMatrix<T>>,
    /// `R_0..R_{H-1}`, or a single matrix to broadcast.
    pub r_weights: Vec<DMatrix<T>>,
    /// Scalar weight on `trace(S)`.
    pub s_weight: T,
}

/// A [`ProblemSpec`] whose invariants have been checked and whose broadcast
/// fields are expanded. Immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedProblem<T: Scalar> {
    spec: ProblemSpec<T>,
}

impl<T: Scalar> ValidatedProblem<T> {
    pub fn spec(&self) -> &ProblemSpec<T> {
        &self.spec
    }

    pub fn plant(&self) -> &LinearPlant<T> {
        &self.spec.plant
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn n_x(&self) -> usize {
        self.spec.plant.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.spec.plant.n_u()
    }

    pub fn n_w(&self) -> usize {
        self.spec.plant.n_w()
    }

    pub fn x0(&self) -> &DVector<T> {
        &self.spec.x0
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<T> {
        &self.spec.disturbance.covariances[k]
    }

    pub fn covariances(&self) -> &[DMatrix<T>] {
        &self.spec.disturbance.covariances
    }

    pub fn state_set(&self, k: usize) -> &Polytope<T> {
        &self.spec.state_sets[k]
    }

    pub fn input_set(&self) -> &Polytope<T> {
        &self.spec.input_set
    }

    pub fn q_weight(&self, k: usize) -> &DMatrix<T> {
        &self.spec.q_weights[k]
    }

    pub fn r_weight(&self, k: usize) -> &DMatrix<T> {
        &self.spec.r_weights[k]
    }

    pub fn delta_x(&self) -> T {
        self.spec.delta_x
    }

    pub fn delta_u(&self) -> T {
        self.spec.delta_u
    }

    pub fn s_weight(&self) -> T {
        self.spec.s_weight
    }
}

/// Checks all invariants and expands broadcast fields.
pub fn validate<T: Scalar>(spec: &ProblemSpec<T>) -> Result<ValidatedProblem<T>, ModelError> {
    let h = spec.horizon;
    if h == 0 {
        return Err(ModelError::InvalidHorizon);
    }
    let n_x = spec.plant.n_x();
    let n_u = spec.plant.n_u();
    let n_w = spec.plant.n_w();

    if spec.plant.a.ncols() != n_x {
        return Err(dim_err("A", n_x, n_x, &spec.plant.a));
    }
    if spec.plant.b.nrows() != n_x {
        return Err(dim_err("B", n_x, n_u, &spec.plant.b));
    }
    if spec.plant.e.nrows() != n_x {
        return Err(dim_err("E", n_x, n_w, &spec.plant.e));
    }
    check_finite("A", &spec.plant.a)?;
    check_finite("B", &spec.plant.b)?;
    check_finite("E", &spec.plant.e)?;

    if spec.x0.len() != n_x {
        return Err(ModelError::DimensionMismatch {
            field: "x0".into(),
            expected_rows: n_x,
            expected_cols: 1,
            actual_rows: spec.x0.len(),
            actual_cols: 1,
        });
    }

    for (name, value) in [("delta_x", spec.delta_x), ("delta_u", spec.delta_u)] {
        if !(value > T::zero() && value < T::one()) {
            return Err(ModelError::RiskOutOfRange {
                name: name.into(),
                value: value.to_report(),
            });
        }
    }
    if spec.s_weight < T::zero() {
        return Err(ModelError::NegativeWeight {
            value: spec.s_weight.to_report(),
        });
    }

    let covariances = broadcast(&spec.disturbance.covariances, h, "disturbance covariances")?;
    for (k, w) in covariances.iter().enumerate() {
        if w.nrows() != n_w || w.ncols() != n_w {
            return Err(dim_err(&format!("W_{k}"), n_w, n_w, w));
        }
        check_psd(&format!("W_{k}"), w)?;
    }

    let state_sets = broadcast(&spec.state_sets, h + 1, "state sets")?;
    for (k, set) in state_sets.iter().enumerate() {
        if set.dim() != n_x {
            return Err(dim_err(&format!("X_{k} normals"), set.num_halfspaces(), n_x, &set.c));
        }
        check_poly(&format!("X_{k}"), set)?;
    }
    if spec.input_set.dim() != n_u {
        return Err(dim_err(
            "U normals",
            spec.input_set.num_halfspaces(),
            n_u,
            &spec.input_set.c,
        ));
    }
    check_poly("U", &spec.input_set)?;

    let residual = &state_sets[0].c * &spec.x0 - &state_sets[0].b;
    if let Some(row) = residual.iter().position(|v| *v > T::zero()) {
        return Err(ModelError::InitialStateOutsideSet { row });
    }

    let q_weights = broadcast(&spec.q_weights, h + 1, "Q weights")?;
    for (k, q) in q_weights.iter().enumerate() {
        if q.nrows() != n_x || q.ncols() != n_x {
            return Err(dim_err(&format!("Q_{k}"), n_x, n_x, q));
        }
        check_psd(&format!("Q_{k}"), q)?;
    }
    let r_weights = broadcast(&spec.r_weights, h, "R weights")?;
    for (k, r) in r_weights.iter().enumerate() {
        if r.nrows() != n_u || r.ncols() != n_u {
            return Err(dim_err(&format!("R_{k}"), n_u, n_u, r));
        }
        check_psd(&format!("R_{k}"), r)?;
    }

    Ok(ValidatedProblem {
        spec: ProblemSpec {
            plant: spec.plant.clone(),
            disturbance: DisturbanceModel {
                covariances,
            },
            horizon: h,
            x0: spec.x0.clone(),
            state_sets,
            input_set: spec.input_set.clone(),
            delta_x: spec.delta_x,
            delta_u: spec.delta_u,
            q_weights,
            r_weights,
            s_weight: spec.s_weight,
        },
    })
}

fn broadcast<X: Clone>(items: &[X], expected: usize, field: &str) -> Result<Vec<X>, ModelError> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); expected]),
        n if n == expected => Ok(items.to_vec()),
        n => Err(ModelError::LengthMismatch {
            field: field.into(),
            expected,
            actual: n,
        }),
    }
}

fn dim_err<T: Scalar>(field: &str, er: usize, ec: usize, actual: &DMatrix<T>) -> ModelError {
    ModelError::DimensionMismatch {
        field: field.into(),
        expected_rows: er,
        expected_cols: ec,
        actual_rows: actual.nrows(),
        actual_cols: actual.ncols(),
    }
}

fn check_finite<T: Scalar>(field: &str, m: &DMatrix<T>) -> Result<(), ModelError> {
    if m.iter().any(|v| !v.to_report().is_finite()) {
        return Err(ModelError::NonFinite {
            field: field.into(),
        });
    }
    Ok(())
}

fn check_poly<T: Scalar>(name: &str, set: &Polytope<T>) -> Result<(), ModelError> {
    if set.num_halfspaces() == 0 {
        return Err(ModelError::EmptyPolytope { name: name.into() });
    }
    for r in 0..set.c.nrows() {
        if set.c.row(r).iter().all(|v| *v == T::zero()) {
            return Err(ModelError::ZeroRow {
                name: name.into(),
                row: r,
            });
        }
    }
    Ok(())
}

/// Symmetry plus eigenvalue check against [`PSD_EIG_TOL`].
pub fn check_psd<T: Scalar>(name: &str, m: &DMatrix<T>) -> Result<(), ModelError> {
    let asym = (m - m.transpose()).abs().max();
    if asym.to_report() > SYMMETRY_TOL {
        return Err(ModelError::NotSymmetric {
            name: name.into(),
            asymmetry: asym.to_report(),
        });
    }
    let lambda = min_symmetric_eigenvalue(m);
    if lambda < cast::<T>(PSD_EIG_TOL) {
        return Err(ModelError::NotPsd {
            name: name.into(),
            eigenvalue: lambda.to_report(),
        });
    }
    Ok(())
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_symmetric_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let sym = (m + m.transpose()) * cast::<T>(0.5);
    let eig = sym.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| if b < a { b } else { a })
}
