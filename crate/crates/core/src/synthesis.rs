//! Policy synthesis: chance-constraint tightening via chi-square quantiles,
//! LMI assembly over the planned information pattern, and the semidefinite
//! program that produces the disturbance-feedback policy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::aoi::{select_beta, AoiChain, AoiError, AoiTable, BetaSelection, IndicatorMatrix};
use crate::conic::{
    self, AffineRow, ConeBlock, ConicProblem, LmiBlock, SolveStatus, Solution,
};
use crate::model::ValidatedProblem;
use crate::prediction::{
    build_stacked, close_loop, predict_nominal, stacked_covariance, FeedbackPolicy, StackedSystem,
};
use crate::scalar::{cast, Scalar, SolverScalar};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Aoi(#[from] AoiError),
    #[error(transparent)]
    Conic(#[from] conic::ConicError),
    #[error("required confidence level {gamma} at step {step} leaves no quantile")]
    RiskSaturated { step: usize, gamma: f64 },
    #[error("semidefinite program is infeasible")]
    SolverInfeasible,
    #[error("solver returned status {status:?} with constraint violation {worst_violation:.3e}")]
    SolverNumericalFailure {
        status: SolveStatus,
        worst_violation: f64,
    },
}

// --- chi-square quantile -------------------------------------------------

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(c: f64, dof: usize) -> f64 {
    assert!(dof >= 1);
    if c <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, c / 2.0)
}

/// Chi-square quantile `c` with `F(c) = gamma`, `gamma` strictly inside
/// `(0, 1)`. Bracketed bisection followed by Newton polish.
pub fn chi2_quantile<T: Scalar>(gamma: T, dof: usize) -> T {
    let g = gamma.to_report();
    assert!(g > 0.0 && g < 1.0, "quantile level must lie in (0, 1)");
    assert!(dof >= 1);
    let a = dof as f64 / 2.0;

    let mut lo = 0.0f64;
    let mut hi = dof as f64;
    while chi2_cdf(hi, dof) < g {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut c = 0.5 * (lo + hi);
    // chi-square density for the Newton steps
    let pdf = |c: f64| (-(2.0f64.ln()) * a - ln_gamma(a) + (a - 1.0) * c.ln() - c / 2.0).exp();
    for _ in 0..4 {
        let f = chi2_cdf(c, dof) - g;
        let d = pdf(c);
        if d > 0.0 {
            let step = f / d;
            if (c - step) > lo && (c - step) < hi {
                c -= step;
            }
        }
    }
    cast(c)
}

// --- variable bookkeeping ------------------------------------------------

/// Index map for the SDP decision variables: the feedback matrices `V` and
/// `M` (only entries inside the planned pattern), the covariance bound `S`,
/// and the epigraph scalar `t`.
#[derive(Debug, Clone)]
pub struct VarMap {
    h: usize,
    n_x: usize,
    n_u: usize,
    n_w: usize,
    /// Side length of `S`: the stacked state dimension `(H+1) n_x`.
    d: usize,
    support: IndicatorMatrix,
    /// Base variable index per supported `(k, r)` block.
    m_base: Vec<Option<usize>>,
    s_base: usize,
    num_vars: usize,
}

impl VarMap {
    pub fn new(support: &IndicatorMatrix, n_x: usize) -> Self {
        let (h, n_u, n_w) = (support.horizon(), support.n_u(), support.n_w());
        let mut next = h * n_u * n_x;
        let mut m_base = vec![None; h * h];
        for k in 0..h {
            for r in 0..k {
                if support.bit(k, r) {
                    m_base[k * h + r] = Some(next);
                    next += n_u * n_w;
                }
            }
        }
        let d = (h + 1) * n_x;
        let s_base = next;
        next += conic::triangle_dim(d);
        Self {
            h,
            n_x,
            n_u,
            n_w,
            d,
            support: support.clone(),
            m_base,
            s_base,
            num_vars: next + 1,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn s_dim(&self) -> usize {
        self.d
    }

    pub fn support(&self) -> &IndicatorMatrix {
        &self.support
    }

    /// Entry `(i, j)` of the block `V_k`.
    pub fn v(&self, k: usize, i: usize, j: usize) -> usize {
        debug_assert!(k < self.h && i < self.n_u && j < self.n_x);
        (k * self.n_u + i) * self.n_x + j
    }

    /// Entry `(i, j)` of the block `M_{k,r}`; `None` outside the pattern.
    pub fn m(&self, k: usize, r: usize, i: usize, j: usize) -> Option<usize> {
        debug_assert!(i < self.n_u && j < self.n_w);
        self.m_base[k * self.h + r].map(|base| base + i * self.n_w + j)
    }

    /// Upper-triangle entry `(i, j)`, `i <= j`, of `S`.
    pub fn s(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < self.d);
        // row-major upper triangle offset
        self.s_base + i * self.d - i * (i + 1) / 2 + j
    }

    /// Epigraph variable for the quadratic mean cost.
    pub fn t(&self) -> usize {
        self.num_vars - 1
    }

    /// Supported `(k, r, i, j)` entries in index order.
    fn m_entries(&self) -> impl Iterator<Item = (usize, usize, usize, usize, usize)> + '_ {
        let h = self.h;
        (0..h).flat_map(move |k| {
            (0..k).flat_map(move |r| {
                (0..self.n_u).flat_map(move |i| {
                    (0..self.n_w).filter_map(move |j| {
                        self.m(k, r, i, j).map(|idx| (idx, k, r, i, j))
                    })
                })
            })
        })
    }

    pub fn extract_policy<T: Scalar>(&self, x: &[T]) -> FeedbackPolicy<T> {
        let mut v = DMatrix::zeros(self.h * self.n_u, self.n_x);
        for k in 0..self.h {
            for i in 0..self.n_u {
                for j in 0..self.n_x {
                    v[(k * self.n_u + i, j)] = x[self.v(k, i, j)];
                }
            }
        }
        let mut m = DMatrix::zeros(self.h * self.n_u, self.h * self.n_w);
        for (idx, k, r, i, j) in self.m_entries() {
            m[(k * self.n_u + i, r * self.n_w + j)] = x[idx];
        }
        FeedbackPolicy::new(v, m, self.support.clone())
    }

    pub fn extract_s<T: Scalar>(&self, x: &[T]) -> DMatrix<T> {
        let mut s = DMatrix::zeros(self.d, self.d);
        for i in 0..self.d {
            for j in i..self.d {
                s[(i, j)] = x[self.s(i, j)];
                s[(j, i)] = x[self.s(i, j)];
            }
        }
        s
    }
}

// --- LMI builders --------------------------------------------------------

fn zeros_term<T: Scalar>(dim: usize) -> DMatrix<T> {
    DMatrix::zeros(dim, dim)
}

fn set_sym<T: Scalar>(m: &mut DMatrix<T>, i: usize, j: usize, v: T) {
    m[(i, j)] += v;
    if i != j {
        m[(j, i)] += v;
    }
}

/// One tightened input halfspace `c_row' u_k <= b_j` at confidence backed by
/// the chi-square level `c_u`, in Schur-complement form over the stacked
/// disturbance covariance `w_stk`:
///
/// `[[tau, sqrt(c_u) c_row' M_k W], [*, tau W]] >= 0`,
/// `tau = b_j - c_row' V_k x0`.
pub fn build_input_halfspace_lmi<T: Scalar>(
    vars: &VarMap,
    k: usize,
    c_row: &DVector<T>,
    b_j: T,
    x0: &DVector<T>,
    w_stk: &DMatrix<T>,
    c_u: T,
) -> LmiBlock<T> {
    let nw_total = vars.h * vars.n_w;
    let dim = 1 + nw_total;
    let sqrt_cu = c_u.sqrt();

    let mut f0 = zeros_term(dim);
    f0[(0, 0)] = b_j;
    for p in 0..nw_total {
        for q in 0..nw_total {
            f0[(1 + p, 1 + q)] = b_j * w_stk[(p, q)];
        }
    }

    let mut terms = Vec::new();
    for i in 0..vars.n_u {
        for jx in 0..vars.n_x {
            let coef = -c_row[i] * x0[jx];
            if coef == T::zero() {
                continue;
            }
            let mut f = zeros_term(dim);
            f[(0, 0)] = coef;
            for p in 0..nw_total {
                for q in 0..nw_total {
                    f[(1 + p, 1 + q)] = coef * w_stk[(p, q)];
                }
            }
            terms.push((vars.v(k, i, jx), f));
        }
    }
    for r in 0..k {
        for i in 0..vars.n_u {
            for jw in 0..vars.n_w {
                let Some(idx) = vars.m(k, r, i, jw) else { continue };
                let mc = r * vars.n_w + jw;
                let mut f = zeros_term(dim);
                for q in 0..nw_total {
                    set_sym(&mut f, 0, 1 + q, sqrt_cu * c_row[i] * w_stk[(mc, q)]);
                }
                terms.push((idx, f));
            }
        }
    }
    LmiBlock {
        name: format!("input[k={k}]"),
        dim,
        f0,
        terms,
    }
}

/// One tightened state halfspace `c_row' x_s <= b_j` for state step `s >= 1`
/// at chi-square level `c_x`:
///
/// `[[tau, sqrt(c_x) c_row' E_s^beta W], [*, tau W]] >= 0`,
/// `tau = b_j - c_row' (A_s + B_s V) x0`.
pub fn build_state_halfspace_lmi<T: Scalar>(
    vars: &VarMap,
    sys: &StackedSystem<T>,
    s: usize,
    c_row: &DVector<T>,
    b_j: T,
    x0: &DVector<T>,
    w_stk: &DMatrix<T>,
    c_x: T,
) -> LmiBlock<T> {
    let nw_total = vars.h * vars.n_w;
    let dim = 1 + nw_total;
    let sqrt_cx = c_x.sqrt();
    let n_x = vars.n_x;

    // row vectors c_row' A_s, c_row' B_s, c_row' E_s
    let ca = c_row.transpose() * sys.a_stk.rows(s * n_x, n_x);
    let cb = c_row.transpose() * sys.b_stk.rows(s * n_x, n_x);
    let ce = c_row.transpose() * sys.e_stk.rows(s * n_x, n_x);

    let tau0 = b_j - (&ca * x0)[(0, 0)];
    let mut f0 = zeros_term(dim);
    f0[(0, 0)] = tau0;
    let cew = &ce * w_stk;
    for q in 0..nw_total {
        set_sym(&mut f0, 0, 1 + q, sqrt_cx * cew[(0, q)]);
    }
    for p in 0..nw_total {
        for q in 0..nw_total {
            f0[(1 + p, 1 + q)] = tau0 * w_stk[(p, q)];
        }
    }

    let mut terms = Vec::new();
    for k in 0..vars.h {
        for i in 0..vars.n_u {
            let cb_entry = cb[(0, k * vars.n_u + i)];
            for jx in 0..n_x {
                let coef = -cb_entry * x0[jx];
                if coef == T::zero() {
                    continue;
                }
                let mut f = zeros_term(dim);
                f[(0, 0)] = coef;
                for p in 0..nw_total {
                    for q in 0..nw_total {
                        f[(1 + p, 1 + q)] = coef * w_stk[(p, q)];
                    }
                }
                terms.push((vars.v(k, i, jx), f));
            }
        }
    }
    for (idx, k, r, i, jw) in vars.m_entries() {
        let cb_entry = cb[(0, k * vars.n_u + i)];
        if cb_entry == T::zero() {
            continue;
        }
        let mc = r * vars.n_w + jw;
        let mut f = zeros_term(dim);
        for q in 0..nw_total {
            set_sym(&mut f, 0, 1 + q, sqrt_cx * cb_entry * w_stk[(mc, q)]);
        }
        terms.push((idx, f));
    }
    LmiBlock {
        name: format!("state[s={s}]"),
        dim,
        f0,
        terms,
    }
}

/// Covariance bound `[[S, E^beta W], [*, W]] >= 0`, i.e.
/// `S >= E^beta W E^beta'` by Schur complement.
pub fn build_covariance_lmi<T: Scalar>(
    vars: &VarMap,
    sys: &StackedSystem<T>,
    w_stk: &DMatrix<T>,
) -> LmiBlock<T> {
    let d = vars.d;
    let nw_total = vars.h * vars.n_w;
    let dim = d + nw_total;

    let mut f0 = zeros_term(dim);
    let ew = &sys.e_stk * w_stk;
    for i in 0..d {
        for q in 0..nw_total {
            set_sym(&mut f0, i, d + q, ew[(i, q)]);
        }
    }
    for p in 0..nw_total {
        for q in 0..nw_total {
            f0[(d + p, d + q)] = w_stk[(p, q)];
        }
    }

    let mut terms = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut f = zeros_term(dim);
            set_sym(&mut f, i, j, T::one());
            terms.push((vars.s(i, j), f));
        }
    }
    for (idx, k, r, i, jw) in vars.m_entries() {
        let mr = k * vars.n_u + i;
        let mc = r * vars.n_w + jw;
        let mut f = zeros_term(dim);
        for row in 0..d {
            let b_entry = sys.b_stk[(row, mr)];
            if b_entry == T::zero() {
                continue;
            }
            for q in 0..nw_total {
                set_sym(&mut f, row, d + q, b_entry * w_stk[(mc, q)]);
            }
        }
        terms.push((idx, f));
    }
    LmiBlock {
        name: "covariance".into(),
        dim,
        f0,
        terms,
    }
}

// --- assembly ------------------------------------------------------------

/// Symmetric positive-semidefinite square root via eigendecomposition,
/// clamping round-off negatives to zero.
pub fn symmetric_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, ev) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = if *ev > T::zero() { ev.sqrt() } else { T::zero() };
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone)]
pub struct SdpAssembly<T: Scalar> {
    pub conic: ConicProblem<T>,
    pub vars: VarMap,
    /// Chi-square levels per input step `k = 0..H-1`.
    pub c_u: Vec<T>,
    /// Chi-square levels per state step `s = 1..H` (index `s - 1`).
    pub c_x: Vec<T>,
    pub w_stk: DMatrix<T>,
}

fn confidence_levels<T: Scalar>(
    beta: &BetaSelection<T>,
    h: usize,
    n_x: usize,
    n_u: usize,
) -> Result<(Vec<T>, Vec<T>), SynthesisError> {
    let mut c_u = Vec::with_capacity(h);
    for (k, g) in beta.gamma_u.iter().enumerate() {
        if *g >= T::one() {
            return Err(SynthesisError::RiskSaturated {
                step: k,
                gamma: g.to_report(),
            });
        }
        c_u.push(chi2_quantile(*g, n_u));
    }
    let mut c_x = Vec::with_capacity(h);
    for s in 1..=h {
        let g = beta.gamma_x[s];
        if g >= T::one() {
            return Err(SynthesisError::RiskSaturated {
                step: s,
                gamma: g.to_report(),
            });
        }
        c_x.push(chi2_quantile(g, n_x));
    }
    Ok((c_u, c_x))
}

pub fn assemble_sdp<T: Scalar>(
    problem: &ValidatedProblem<T>,
    sys: &StackedSystem<T>,
    beta: &BetaSelection<T>,
) -> Result<SdpAssembly<T>, SynthesisError> {
    let h = problem.horizon();
    let (n_x, n_u) = (problem.n_x(), problem.n_u());
    let vars = VarMap::new(&beta.p_beta, n_x);
    let w_stk = stacked_covariance(problem.covariances());
    let (c_u, c_x) = confidence_levels(beta, h, n_x, n_u)?;
    let x0 = problem.x0();

    let mut conic = ConicProblem::new(vars.num_vars());

    for k in 0..h {
        let set = problem.input_set();
        for j in 0..set.num_halfspaces() {
            let c_row = set.c.row(j).transpose();
            conic.blocks.push(ConeBlock::Psd(build_input_halfspace_lmi(
                &vars, k, &c_row, set.b[j], x0, &w_stk, c_u[k],
            )));
        }
    }
    for s in 1..=h {
        let set = problem.state_set(s);
        for j in 0..set.num_halfspaces() {
            let c_row = set.c.row(j).transpose();
            conic.blocks.push(ConeBlock::Psd(build_state_halfspace_lmi(
                &vars,
                sys,
                s,
                &c_row,
                set.b[j],
                x0,
                &w_stk,
                c_x[s - 1],
            )));
        }
    }
    conic
        .blocks
        .push(ConeBlock::Psd(build_covariance_lmi(&vars, sys, &w_stk)));

    // Epigraph of the quadratic mean cost: with
    // y = [Q_blk^{1/2} (A_stk + B_stk V) x0 ; R_blk^{1/2} V x0],
    // require ||y||^2 <= t via ((t+1)/2, (t-1)/2, y) in the SOC.
    let q_sqrt: Vec<DMatrix<T>> = (0..=h)
        .map(|s| symmetric_sqrt(problem.q_weight(s)))
        .collect();
    let r_sqrt: Vec<DMatrix<T>> = (0..h)
        .map(|k| symmetric_sqrt(problem.r_weight(k)))
        .collect();
    let t = vars.t();
    let half = cast::<T>(0.5);
    let mut soc = vec![
        AffineRow {
            constant: half,
            coeffs: vec![(t, half)],
        },
        AffineRow {
            constant: -half,
            coeffs: vec![(t, half)],
        },
    ];
    for s in 0..=h {
        let a_row = sys.a_stk.rows(s * n_x, n_x);
        let b_row = sys.b_stk.rows(s * n_x, n_x);
        let qa = &q_sqrt[s] * (a_row * x0);
        let qb = &q_sqrt[s] * b_row.into_owned();
        for i in 0..n_x {
            let mut coeffs = Vec::new();
            for k in 0..h {
                for iu in 0..n_u {
                    let qb_entry = qb[(i, k * n_u + iu)];
                    if qb_entry == T::zero() {
                        continue;
                    }
                    for jx in 0..n_x {
                        if x0[jx] != T::zero() {
                            coeffs.push((vars.v(k, iu, jx), qb_entry * x0[jx]));
                        }
                    }
                }
            }
            soc.push(AffineRow {
                constant: qa[i],
                coeffs,
            });
        }
    }
    for k in 0..h {
        for i in 0..n_u {
            let mut coeffs = Vec::new();
            for iu in 0..n_u {
                let r_entry = r_sqrt[k][(i, iu)];
                if r_entry == T::zero() {
                    continue;
                }
                for jx in 0..n_x {
                    if x0[jx] != T::zero() {
                        coeffs.push((vars.v(k, iu, jx), r_entry * x0[jx]));
                    }
                }
            }
            soc.push(AffineRow {
                constant: T::zero(),
                coeffs,
            });
        }
    }
    conic.blocks.push(ConeBlock::SecondOrder(soc));

    conic.objective.push((t, T::one()));
    if problem.s_weight() != T::zero() {
        for i in 0..vars.s_dim() {
            conic.objective.push((vars.s(i, i), problem.s_weight()));
        }
    }

    Ok(SdpAssembly {
        conic,
        vars,
        c_u,
        c_x,
        w_stk,
    })
}

// --- pipeline ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthesisOptions<T: Scalar> {
    /// Worst accepted constraint violation of the raw solver point.
    pub verify_tol: T,
}

impl<T: Scalar> Default for SynthesisOptions<T> {
    fn default() -> Self {
        Self {
            verify_tol: cast(1e-6),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverDiagnostics<T: Scalar> {
    pub status: SolveStatus,
    pub iterations: u32,
    pub raw_objective: T,
    pub worst_violation: T,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult<T: Scalar> {
    pub policy: FeedbackPolicy<T>,
    /// Covariance bound after polishing: exactly `E^beta W E^beta'` of the
    /// extracted policy, the tightest matrix the covariance LMI admits.
    pub s_bound: DMatrix<T>,
    /// Objective recomputed at the extracted policy with the polished bound.
    pub objective: T,
    pub beta: BetaSelection<T>,
    pub assembly: SdpAssembly<T>,
    pub diagnostics: SolverDiagnostics<T>,
}

/// Quadratic mean cost plus weighted trace of the covariance bound.
fn evaluate_objective<T: Scalar>(
    problem: &ValidatedProblem<T>,
    sys: &StackedSystem<T>,
    policy: &FeedbackPolicy<T>,
    s_bound: &DMatrix<T>,
) -> T {
    let h = problem.horizon();
    let (n_x, n_u) = (problem.n_x(), problem.n_u());
    let (x_mean, u_mean) = predict_nominal(sys, policy, problem.x0());
    let mut j = T::zero();
    for s in 0..=h {
        let xs = x_mean.rows(s * n_x, n_x);
        j += (xs.transpose() * problem.q_weight(s) * xs)[(0, 0)];
    }
    for k in 0..h {
        let uk = u_mean.rows(k * n_u, n_u);
        j += (uk.transpose() * problem.r_weight(k) * uk)[(0, 0)];
    }
    j + problem.s_weight() * s_bound.trace()
}

pub fn synthesize<T: SolverScalar>(
    problem: &ValidatedProblem<T>,
    chain: &AoiChain<T>,
) -> Result<SynthesisResult<T>, SynthesisError> {
    synthesize_with(problem, chain, &SynthesisOptions::default())
}

pub fn synthesize_with<T: SolverScalar>(
    problem: &ValidatedProblem<T>,
    chain: &AoiChain<T>,
    options: &SynthesisOptions<T>,
) -> Result<SynthesisResult<T>, SynthesisError> {
    let h = problem.horizon();
    let table = AoiTable::from_chain(chain, h);
    let beta = select_beta(
        &table,
        problem.delta_u(),
        problem.delta_x(),
        problem.n_u(),
        problem.n_w(),
    )?;
    let sys = build_stacked(problem.plant(), h);
    let assembly = assemble_sdp(problem, &sys, &beta)?;

    let solution: Solution<T> = conic::solve(&assembly.conic)?;
    match solution.status {
        SolveStatus::Solved | SolveStatus::AlmostSolved => {}
        SolveStatus::PrimalInfeasible => return Err(SynthesisError::SolverInfeasible),
        status => {
            return Err(SynthesisError::SolverNumericalFailure {
                status,
                worst_violation: f64::NAN,
            })
        }
    }
    // never trust the status flag alone
    let verification = conic::verify_solution(&assembly.conic, &solution.x);
    if !verification.satisfied(options.verify_tol) {
        return Err(SynthesisError::SolverNumericalFailure {
            status: solution.status,
            worst_violation: verification.worst.to_report(),
        });
    }

    let policy = assembly.vars.extract_policy(&solution.x);
    let loop_beta = close_loop(&sys, &policy, &beta.p_beta);
    let raw = &loop_beta.scr_e * &assembly.w_stk * loop_beta.scr_e.transpose();
    let s_bound = (&raw + raw.transpose()) * cast::<T>(0.5);
    let objective = evaluate_objective(problem, &sys, &policy, &s_bound);

    Ok(SynthesisResult {
        policy,
        s_bound,
        objective,
        beta,
        diagnostics: SolverDiagnostics {
            status: solution.status,
            iterations: solution.iterations,
            raw_objective: solution.objective,
            worst_violation: verification.worst,
        },
        assembly,
    })
}
