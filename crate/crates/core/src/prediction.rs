//! Stacked prediction matrices, disturbance-feedback policies, and the
//! closed-loop maps and moments they induce.

use nalgebra::{DMatrix, DVector};

use crate::aoi::IndicatorMatrix;
use crate::model::LinearPlant;
use crate::scalar::Scalar;

/// Stacked horizon-`H` prediction matrices for `x(k+1) = A x(k) + B u(k) +
/// E w(k)`: the trajectory `(x_0, .., x_H)` satisfies
/// `x_stk = A_stk x_0 + B_stk u_stk + E_stk w_stk`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem<T: Scalar> {
    h: usize,
    n_x: usize,
    n_u: usize,
    n_w: usize,
    /// `(H+1) n_x x n_x`, block row `i` is `A^i`.
    pub a_stk: DMatrix<T>,
    /// `(H+1) n_x x H n_x`, strictly block lower triangular with `A^{i-j-1}`.
    pub c_stk: DMatrix<T>,
    /// `C_stk (I_H (x) B)`.
    pub b_stk: DMatrix<T>,
    /// `C_stk (I_H (x) E)`.
    pub e_stk: DMatrix<T>,
}

impl<T: Scalar> StackedSystem<T> {
    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    /// Block row `s` (one state step) of `a_stk`.
    pub fn a_row(&self, s: usize) -> DMatrix<T> {
        self.a_stk.rows(s * self.n_x, self.n_x).into_owned()
    }
}

/// Builds the stacked matrices by running the recursion block row by block
/// row, so no matrix powers beyond `A * previous` are formed.
pub fn build_stacked<T: Scalar>(plant: &LinearPlant<T>, h: usize) -> StackedSystem<T> {
    assert!(h >= 1, "horizon must be positive");
    let (n_x, n_u, n_w) = (plant.n_x(), plant.n_u(), plant.n_w());
    let mut a_stk = DMatrix::zeros((h + 1) * n_x, n_x);
    let mut c_stk = DMatrix::zeros((h + 1) * n_x, h * n_x);

    let mut a_pow = DMatrix::identity(n_x, n_x);
    a_stk.view_mut((0, 0), (n_x, n_x)).copy_from(&a_pow);
    for i in 1..=h {
        a_pow = &plant.a * a_pow;
        a_stk.view_mut((i * n_x, 0), (n_x, n_x)).copy_from(&a_pow);
    }
    for i in 1..=h {
        for j in 0..i {
            // A^{i-j-1}, read off the already computed power stack
            let block = a_stk.rows((i - j - 1) * n_x, n_x);
            c_stk
                .view_mut((i * n_x, j * n_x), (n_x, n_x))
                .copy_from(&block);
        }
    }
    let b_stk = &c_stk * kron_identity(h, &plant.b);
    let e_stk = &c_stk * kron_identity(h, &plant.e);
    StackedSystem {
        h,
        n_x,
        n_u,
        n_w,
        a_stk,
        c_stk,
        b_stk,
        e_stk,
    }
}

/// `I_h (x) m`.
fn kron_identity<T: Scalar>(h: usize, m: &DMatrix<T>) -> DMatrix<T> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(h * r, h * c);
    for i in 0..h {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

/// Block-diagonal stacked disturbance covariance `W = blkdiag(W_0..W_{H-1})`.
pub fn stacked_covariance<T: Scalar>(covariances: &[DMatrix<T>]) -> DMatrix<T> {
    let n_w = covariances[0].nrows();
    let h = covariances.len();
    let mut out = DMatrix::zeros(h * n_w, h * n_w);
    for (i, w) in covariances.iter().enumerate() {
        out.view_mut((i * n_w, i * n_w), (n_w, n_w)).copy_from(w);
    }
    out
}

/// Stacked trajectory `A_stk x_0 + B_stk u + E_stk w` for explicit inputs.
pub fn stacked_trajectory<T: Scalar>(
    sys: &StackedSystem<T>,
    x0: &DVector<T>,
    u: &DVector<T>,
    w: &DVector<T>,
) -> DVector<T> {
    &sys.a_stk * x0 + &sys.b_stk * u + &sys.e_stk * w
}

/// Affine disturbance-feedback policy `u = V x_0 + (P o M) w`, where `P` is
/// the realized information pattern and `o` the Hadamard product. `support`
/// is the planned pattern; `m` carries structural zeros outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy<T: Scalar> {
    pub v: DMatrix<T>,
    pub m: DMatrix<T>,
    pub support: IndicatorMatrix,
}

impl<T: Scalar> FeedbackPolicy<T> {
    pub fn new(v: DMatrix<T>, m: DMatrix<T>, support: IndicatorMatrix) -> Self {
        let h = support.horizon();
        assert_eq!(v.nrows(), h * support.n_u());
        assert_eq!(m.shape(), (h * support.n_u(), h * support.n_w()));
        Self { v, m, support }
    }

    /// Zero-feedback policy over the given pattern dimensions.
    pub fn open_loop(v: DMatrix<T>, h: usize, n_u: usize, n_w: usize) -> Self {
        let m = DMatrix::zeros(h * n_u, h * n_w);
        Self::new(v, m, IndicatorMatrix::zero(h, n_u, n_w))
    }

    pub fn horizon(&self) -> usize {
        self.support.horizon()
    }

    /// `P o M` for the realized pattern `P`.
    pub fn masked_gain(&self, realization: &IndicatorMatrix) -> DMatrix<T> {
        self.m.component_mul(&realization.expand())
    }

    /// Gain under the planned pattern itself.
    pub fn planned_gain(&self) -> DMatrix<T> {
        self.masked_gain(&self.support)
    }

    /// Stacked input `V x_0 + (P o M) w` under a realized pattern.
    pub fn stacked_input(
        &self,
        x0: &DVector<T>,
        w: &DVector<T>,
        realization: &IndicatorMatrix,
    ) -> DVector<T> {
        &self.v * x0 + self.masked_gain(realization) * w
    }
}

/// Closed-loop stacked maps for one realized pattern:
/// `x_stk = cal_a x_0 + scr_e w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Scalar> {
    /// `A_stk + B_stk V`.
    pub cal_a: DMatrix<T>,
    /// `E_stk + B_stk (P o M)`.
    pub scr_e: DMatrix<T>,
    pub realization: IndicatorMatrix,
}

impl<T: Scalar> ClosedLoop<T> {
    pub fn cal_a_row(&self, s: usize, n_x: usize) -> DMatrix<T> {
        self.cal_a.rows(s * n_x, n_x).into_owned()
    }

    pub fn scr_e_row(&self, s: usize, n_x: usize) -> DMatrix<T> {
        self.scr_e.rows(s * n_x, n_x).into_owned()
    }
}

pub fn close_loop<T: Scalar>(
    sys: &StackedSystem<T>,
    policy: &FeedbackPolicy<T>,
    realization: &IndicatorMatrix,
) -> ClosedLoop<T> {
    ClosedLoop {
        cal_a: &sys.a_stk + &sys.b_stk * &policy.v,
        scr_e: &sys.e_stk + &sys.b_stk * policy.masked_gain(realization),
        realization: realization.clone(),
    }
}

/// Mean and covariance of the stacked state for zero-mean disturbances with
/// stacked covariance `w_stk`.
pub fn state_moments<T: Scalar>(
    loop_: &ClosedLoop<T>,
    x0: &DVector<T>,
    w_stk: &DMatrix<T>,
) -> (DVector<T>, DMatrix<T>) {
    let mean = &loop_.cal_a * x0;
    let cov = &loop_.scr_e * w_stk * loop_.scr_e.transpose();
    (mean, cov)
}

/// Nominal (mean) stacked state and input trajectories.
pub fn predict_nominal<T: Scalar>(
    sys: &StackedSystem<T>,
    policy: &FeedbackPolicy<T>,
    x0: &DVector<T>,
) -> (DVector<T>, DVector<T>) {
    let u_mean = &policy.v * x0;
    let x_mean = &sys.a_stk * x0 + &sys.b_stk * &u_mean;
    (x_mean, u_mean)
}
