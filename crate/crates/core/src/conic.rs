//! Solver-agnostic conic problem description, a Clarabel backend, an
//! independent solution verifier, and an exact text dump format.
//!
//! A problem asks to minimize a linear objective `c' x` subject to a list of
//! cone blocks; each block constrains an affine expression of `x` to lie in a
//! cone. Quadratic objectives are expected to arrive as second-order-cone
//! epigraphs.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::min_symmetric_eigenvalue;
use crate::scalar::{cast, Scalar, SolverScalar};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("solver rejected the problem: {0}")]
    Setup(String),
    #[error("dump parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Sparse affine expression `constant + sum coeffs[i].1 * x[coeffs[i].0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow<T: Scalar> {
    pub constant: T,
    pub coeffs: Vec<(usize, T)>,
}

impl<T: Scalar> AffineRow<T> {
    pub fn constant(value: T) -> Self {
        Self {
            constant: value,
            coeffs: Vec::new(),
        }
    }

    pub fn evaluate(&self, x: &[T]) -> T {
        self.coeffs
            .iter()
            .fold(self.constant, |acc, (i, c)| acc + *c * x[*i])
    }
}

/// Linear matrix inequality `F0 + sum x[i] * F[i] >= 0` in dense symmetric
/// storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock<T: Scalar> {
    pub name: String,
    pub dim: usize,
    pub f0: DMatrix<T>,
    pub terms: Vec<(usize, DMatrix<T>)>,
}

impl<T: Scalar> LmiBlock<T> {
    pub fn evaluate(&self, x: &[T]) -> DMatrix<T> {
        let mut m = self.f0.clone();
        for (i, f) in &self.terms {
            m += f * x[*i];
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConeBlock<T: Scalar> {
    /// Rows pinned to zero (equalities).
    Zero(Vec<AffineRow<T>>),
    /// Rows constrained nonnegative.
    Nonnegative(Vec<AffineRow<T>>),
    /// `(rows[0], rows[1..])` in the second-order cone.
    SecondOrder(Vec<AffineRow<T>>),
    /// Positive semidefiniteness of an affine symmetric matrix.
    Psd(LmiBlock<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem<T: Scalar> {
    pub num_vars: usize,
    /// Sparse linear objective, minimized.
    pub objective: Vec<(usize, T)>,
    pub blocks: Vec<ConeBlock<T>>,
}

impl<T: Scalar> ConicProblem<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective
            .iter()
            .fold(T::zero(), |acc, (i, c)| acc + *c * x[*i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    AlmostSolved,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalError,
    Other,
}

#[derive(Debug, Clone)]
pub struct Solution<T: Scalar> {
    pub status: SolveStatus,
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: u32,
}

/// Worst violations of a candidate point, one entry per block, measured
/// directly on the problem data. Solver status plays no part here.
#[derive(Debug, Clone)]
pub struct Verification<T: Scalar> {
    /// `(block name or index, violation)`; violation is `max(0, breach)` for
    /// vector cones and `max(0, -min_eigenvalue)` for semidefinite blocks.
    pub violations: Vec<(String, T)>,
    pub worst: T,
}

impl<T: Scalar> Verification<T> {
    pub fn satisfied(&self, tol: T) -> bool {
        self.worst <= tol
    }
}

/// Measures every block of `problem` at the point `x`.
pub fn verify_solution<T: Scalar>(problem: &ConicProblem<T>, x: &[T]) -> Verification<T> {
    assert_eq!(x.len(), problem.num_vars);
    let mut violations = Vec::with_capacity(problem.blocks.len());
    for (idx, block) in problem.blocks.iter().enumerate() {
        let (label, v) = match block {
            ConeBlock::Zero(rows) => {
                let worst = rows
                    .iter()
                    .map(|r| r.evaluate(x).abs())
                    .fold(T::zero(), |a, b| if b > a { b } else { a });
                (format!("zero[{idx}]"), worst)
            }
            ConeBlock::Nonnegative(rows) => {
                let worst = rows
                    .iter()
                    .map(|r| -r.evaluate(x))
                    .fold(T::zero(), |a, b| if b > a { b } else { a });
                (format!("nonneg[{idx}]"), worst)
            }
            ConeBlock::SecondOrder(rows) => {
                let head = rows[0].evaluate(x);
                let tail_sq = rows[1..]
                    .iter()
                    .map(|r| {
                        let v = r.evaluate(x);
                        v * v
                    })
                    .fold(T::zero(), |a, b| a + b);
                let breach = tail_sq.sqrt() - head;
                (
                    format!("soc[{idx}]"),
                    if breach > T::zero() { breach } else { T::zero() },
                )
            }
            ConeBlock::Psd(lmi) => {
                let eig = min_symmetric_eigenvalue(&lmi.evaluate(x));
                (
                    format!("psd[{idx}]:{}", lmi.name),
                    if eig < T::zero() { -eig } else { T::zero() },
                )
            }
        };
        violations.push((label, v));
    }
    let worst = violations
        .iter()
        .map(|(_, v)| *v)
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    Verification { violations, worst }
}

/// Dimension of the packed triangle of a `d x d` symmetric matrix.
pub fn triangle_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Scaled packed upper triangle in column-major order: off-diagonal entries
/// carry a factor `sqrt(2)` so Euclidean inner products are preserved.
fn svec<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    let d = m.nrows();
    let root2 = cast::<T>(2.0).sqrt();
    let mut out = Vec::with_capacity(triangle_dim(d));
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push((m[(i, j)] + m[(j, i)]) * cast::<T>(0.5) * root2);
            }
        }
    }
    out
}

struct TripletMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> TripletMatrix<T> {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    fn push(&mut self, r: usize, c: usize, v: T) {
        if v != T::zero() {
            self.entries.push((r, c, v));
        }
    }

    fn into_csc(mut self) -> CscMatrix<T> {
        self.entries.sort_by_key(|(r, c, _)| (*c, *r));
        let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(self.entries.len());
        for (r, c, v) in self.entries {
            match merged.last_mut() {
                Some((lr, lc, lv)) if *lr == r && *lc == c => *lv += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut colptr = vec![0usize; self.cols + 1];
        let mut rowval = Vec::with_capacity(merged.len());
        let mut nzval = Vec::with_capacity(merged.len());
        for (r, c, v) in merged {
            rowval.push(r);
            nzval.push(v);
            colptr[c + 1] += 1;
        }
        for c in 0..self.cols {
            colptr[c + 1] += colptr[c];
        }
        CscMatrix::new(self.rows, self.cols, colptr, rowval, nzval)
    }
}

/// Solves with Clarabel. The returned point is unverified; callers must run
/// [`verify_solution`] before trusting it.
pub fn solve<T: SolverScalar>(problem: &ConicProblem<T>) -> Result<Solution<T>, ConicError> {
    let n = problem.num_vars;
    let mut q = vec![T::zero(); n];
    for (i, c) in &problem.objective {
        q[*i] += *c;
    }

    // Constraint rows follow the block order: A x + s = b with s in the cones.
    let mut num_rows = 0usize;
    let mut cones: Vec<SupportedConeT<T>> = Vec::new();
    for block in &problem.blocks {
        match block {
            ConeBlock::Zero(rows) => {
                cones.push(SupportedConeT::ZeroConeT(rows.len()));
                num_rows += rows.len();
            }
            ConeBlock::Nonnegative(rows) => {
                cones.push(SupportedConeT::NonnegativeConeT(rows.len()));
                num_rows += rows.len();
            }
            ConeBlock::SecondOrder(rows) => {
                cones.push(SupportedConeT::SecondOrderConeT(rows.len()));
                num_rows += rows.len();
            }
            ConeBlock::Psd(lmi) => {
                cones.push(SupportedConeT::PSDTriangleConeT(lmi.dim));
                num_rows += triangle_dim(lmi.dim);
            }
        }
    }

    let mut a = TripletMatrix::new(num_rows, n);
    let mut b = vec![T::zero(); num_rows];
    let mut row0 = 0usize;
    for block in &problem.blocks {
        match block {
            ConeBlock::Zero(rows) | ConeBlock::Nonnegative(rows) | ConeBlock::SecondOrder(rows) => {
                for (offset, row) in rows.iter().enumerate() {
                    b[row0 + offset] = row.constant;
                    for (i, c) in &row.coeffs {
                        a.push(row0 + offset, *i, -*c);
                    }
                }
                row0 += rows.len();
            }
            ConeBlock::Psd(lmi) => {
                let len = triangle_dim(lmi.dim);
                b[row0..row0 + len].copy_from_slice(&svec(&lmi.f0));
                for (i, f) in &lmi.terms {
                    for (offset, v) in svec(f).into_iter().enumerate() {
                        a.push(row0 + offset, *i, -v);
                    }
                }
                row0 += len;
            }
        }
    }

    let p = CscMatrix::zeros((n, n));
    let a = a.into_csc();
    let mut settings = DefaultSettings::default();
    settings.verbose = false;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Setup(format!("{e:?}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Solved,
        SolverStatus::AlmostSolved => SolveStatus::AlmostSolved,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::PrimalInfeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::DualInfeasible
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIterations,
        SolverStatus::NumericalError | SolverStatus::InsufficientProgress => {
            SolveStatus::NumericalError
        }
        _ => SolveStatus::Other,
    };
    Ok(Solution {
        status,
        objective: problem.objective_value(&solver.solution.x),
        x: solver.solution.x.clone(),
        iterations: solver.solution.iterations,
    })
}

fn fmt_scalar<T: Scalar>(v: T) -> String {
    format!("{:.17e}", v.to_report())
}

/// Exact text serialization; [`parse_dump`] restores a structurally equal
/// problem and `dump(parse(dump(p))) == dump(p)` byte for byte.
pub fn dump<T: Scalar>(problem: &ConicProblem<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "conic v1");
    let _ = writeln!(out, "vars {}", problem.num_vars);
    let _ = writeln!(out, "objective {}", problem.objective.len());
    for (i, c) in &problem.objective {
        let _ = writeln!(out, "{} {}", i, fmt_scalar(*c));
    }
    let _ = writeln!(out, "blocks {}", problem.blocks.len());
    let write_rows = |out: &mut String, kind: &str, rows: &[AffineRow<T>]| {
        let _ = writeln!(out, "{kind} {}", rows.len());
        for row in rows {
            let _ = write!(out, "row {} {}", fmt_scalar(row.constant), row.coeffs.len());
            for (i, c) in &row.coeffs {
                let _ = write!(out, " {} {}", i, fmt_scalar(*c));
            }
            let _ = writeln!(out);
        }
    };
    for block in &problem.blocks {
        match block {
            ConeBlock::Zero(rows) => write_rows(&mut out, "zero", rows),
            ConeBlock::Nonnegative(rows) => write_rows(&mut out, "nonneg", rows),
            ConeBlock::SecondOrder(rows) => write_rows(&mut out, "soc", rows),
            ConeBlock::Psd(lmi) => {
                let _ = writeln!(out, "psd {} {} {}", lmi.name, lmi.dim, lmi.terms.len());
                let write_matrix = |out: &mut String, m: &DMatrix<T>| {
                    for i in 0..lmi.dim {
                        for j in 0..lmi.dim {
                            if j > 0 {
                                out.push(' ');
                            }
                            out.push_str(&fmt_scalar(m[(i, j)]));
                        }
                        out.push('\n');
                    }
                };
                write_matrix(&mut out, &lmi.f0);
                for (i, f) in &lmi.terms {
                    let _ = writeln!(out, "term {i}");
                    write_matrix(&mut out, f);
                }
            }
        }
    }
    out
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, ConicError> {
        self.line += 1;
        self.iter.next().ok_or(ConicError::Parse {
            line: self.line,
            message: "unexpected end of dump".into(),
        })
    }

    fn err(&self, message: impl Into<String>) -> ConicError {
        ConicError::Parse {
            line: self.line,
            message: message.into(),
        }
    }
}

pub fn parse_dump<T: Scalar>(text: &str) -> Result<ConicProblem<T>, ConicError> {
    let mut lines = Lines {
        iter: text.lines(),
        line: 0,
    };
    let parse_scalar = |lines: &Lines, s: &str| -> Result<T, ConicError> {
        s.parse::<f64>()
            .map(T::from_config)
            .map_err(|_| lines.err(format!("bad scalar '{s}'")))
    };
    let parse_usize = |lines: &Lines, s: Option<&str>| -> Result<usize, ConicError> {
        s.and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.err("expected integer"))
    };

    if lines.next()? != "conic v1" {
        return Err(lines.err("bad header"));
    }
    let line = lines.next()?;
    let num_vars = parse_usize(&lines, line.strip_prefix("vars "))?;
    let mut problem = ConicProblem::new(num_vars);

    let line = lines.next()?;
    let n_obj = parse_usize(&lines, line.strip_prefix("objective "))?;
    for _ in 0..n_obj {
        let line = lines.next()?;
        let mut parts = line.split_whitespace();
        let i = parse_usize(&lines, parts.next())?;
        let c = parse_scalar(&lines, parts.next().ok_or_else(|| lines.err("missing value"))?)?;
        problem.objective.push((i, c));
    }

    let line = lines.next()?;
    let n_blocks = parse_usize(&lines, line.strip_prefix("blocks "))?;
    for _ in 0..n_blocks {
        let header = lines.next()?;
        let mut parts = header.split_whitespace();
        let kind = parts.next().ok_or_else(|| lines.err("missing block kind"))?;
        if kind == "psd" {
            let name = parts.next().ok_or_else(|| lines.err("missing name"))?.to_string();
            let dim = parse_usize(&lines, parts.next())?;
            let n_terms = parse_usize(&lines, parts.next())?;
            let read_matrix = |lines: &mut Lines| -> Result<DMatrix<T>, ConicError> {
                let mut m = DMatrix::zeros(dim, dim);
                for i in 0..dim {
                    let line = lines.next()?;
                    let mut entries = line.split_whitespace();
                    for j in 0..dim {
                        let s = entries.next().ok_or_else(|| lines.err("short matrix row"))?;
                        m[(i, j)] = parse_scalar(lines, s)?;
                    }
                }
                Ok(m)
            };
            let f0 = read_matrix(&mut lines)?;
            let mut terms = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                let line = lines.next()?;
                let i = parse_usize(&lines, line.strip_prefix("term "))?;
                terms.push((i, read_matrix(&mut lines)?));
            }
            problem.blocks.push(ConeBlock::Psd(LmiBlock {
                name,
                dim,
                f0,
                terms,
            }));
        } else {
            let n_rows = parse_usize(&lines, parts.next())?;
            let mut rows = Vec::with_capacity(n_rows);
            for _ in 0..n_rows {
                let line = lines.next()?;
                let mut parts = line.split_whitespace();
                if parts.next() != Some("row") {
                    return Err(lines.err("expected row"));
                }
                let constant =
                    parse_scalar(&lines, parts.next().ok_or_else(|| lines.err("missing const"))?)?;
                let n_coef = parse_usize(&lines, parts.next())?;
                let mut coeffs = Vec::with_capacity(n_coef);
                for _ in 0..n_coef {
                    let i = parse_usize(&lines, parts.next())?;
                    let c = parse_scalar(
                        &lines,
                        parts.next().ok_or_else(|| lines.err("missing coeff"))?,
                    )?;
                    coeffs.push((i, c));
                }
                rows.push(AffineRow { constant, coeffs });
            }
            let block = match kind {
                "zero" => ConeBlock::Zero(rows),
                "nonneg" => ConeBlock::Nonnegative(rows),
                "soc" => ConeBlock::SecondOrder(rows),
                other => return Err(lines.err(format!("unknown block kind '{other}'"))),
            };
            problem.blocks.push(block);
        }
    }
    Ok(problem)
}
