//! Monte Carlo validation of a synthesized policy on the true closed loop:
//! sampled disturbances, a sampled AoI channel, disturbance reconstruction
//! from observed states, and empirical constraint statistics.

use nalgebra::{DMatrix, DVector};
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{StandardNormal, StandardUniform};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aoi::{AoiChain, IndicatorMatrix};
use crate::model::ValidatedProblem;
use crate::prediction::{build_stacked, close_loop, FeedbackPolicy};
use crate::scalar::Scalar;
use crate::synthesis::symmetric_sqrt;

/// Environment variable capping the simulation thread count.
pub const THREADS_ENV: &str = "AOISMPC_THREADS";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("disturbance matrix E has column rank {rank} < {n_w}; states do not identify w")]
    RankDeficientE { rank: usize, n_w: usize },
    #[error("simulation needs at least one run")]
    ZeroRuns,
}

/// Controller-side reconstruction `w(r) = pinv(E) (x(r+1) - A x(r) - B u(r))`,
/// exact whenever `E` has full column rank.
#[derive(Debug, Clone)]
pub struct DisturbanceReconstructor<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    pinv_e: DMatrix<T>,
}

impl<T: Scalar> DisturbanceReconstructor<T> {
    pub fn new(a: &DMatrix<T>, b: &DMatrix<T>, e: &DMatrix<T>) -> Result<Self, SimError> {
        let n_w = e.ncols();
        let svd = e.clone().svd(true, true);
        let tol = T::machine_epsilon()
            * T::from_config(e.nrows().max(e.ncols()) as f64)
            * svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        if rank < n_w {
            return Err(SimError::RankDeficientE { rank, n_w });
        }
        let pinv_e = svd.pseudo_inverse(tol).expect("svd computed with u and v");
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            pinv_e,
        })
    }

    pub fn reconstruct(
        &self,
        x_next: &DVector<T>,
        x: &DVector<T>,
        u: &DVector<T>,
    ) -> DVector<T> {
        &self.pinv_e * (x_next - &self.a * x - &self.b * u)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulationOptions {
    pub runs: usize,
    pub seed: u64,
}

/// One simulated closed-loop run. Applicability always refers to the planned
/// pattern: a step is applicable when every disturbance the plan feeds back
/// at that step was actually available.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T: Scalar> {
    pub aoi: Vec<usize>,
    pub realization: IndicatorMatrix,
    /// Stacked `(x_0, .., x_H)`.
    pub x: DVector<T>,
    /// Stacked `(u_0, .., u_{H-1})`.
    pub u: DVector<T>,
    /// Stacked true disturbances.
    pub w: DVector<T>,
    /// Per input step `k`: planned row `k` fully available.
    pub input_applicable: Vec<bool>,
    /// Per state step `s = 0..H`: all input steps before `s` applicable.
    pub state_applicable: Vec<bool>,
    /// Per state step: `x_s` inside its constraint set.
    pub state_ok: Vec<bool>,
    /// Per input step: `u_k` inside the input set.
    pub input_ok: Vec<bool>,
}

/// Aggregated empirical statistics, reported in `f64`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub runs: usize,
    /// `P(x_s in X_s)` per state step.
    pub state_rate: Vec<f64>,
    /// `P(u_k in U)` per input step.
    pub input_rate: Vec<f64>,
    /// `P(step applicable)` per input step (empirical `alpha`).
    pub input_applicable_rate: Vec<f64>,
    /// `P(prefix applicable)` per state step.
    pub state_applicable_rate: Vec<f64>,
    /// `P(x_s in X_s | prefix applicable)`; `NaN` when conditioning on an
    /// empty event.
    pub conditional_state_rate: Vec<f64>,
    /// `P(u_k in U | step applicable)`.
    pub conditional_input_rate: Vec<f64>,
}

#[derive(Debug)]
pub struct SimulationOutput<T: Scalar> {
    pub records: Vec<RunRecord<T>>,
    pub report: SimulationReport,
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var(THREADS_ENV).ok()?.parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .ok()
}

/// Simulates `options.runs` independent closed-loop runs. Each run draws its
/// disturbances and its channel from dedicated counter-based substreams of
/// the seed, so results are independent of thread count and run order.
pub fn run_closed_loop<T: Scalar>(
    problem: &ValidatedProblem<T>,
    chain: &AoiChain<T>,
    policy: &FeedbackPolicy<T>,
    options: &SimulationOptions,
) -> Result<SimulationOutput<T>, SimError>
where
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    if options.runs == 0 {
        return Err(SimError::ZeroRuns);
    }
    let h = problem.horizon();
    assert_eq!(policy.horizon(), h);
    let reconstructor = DisturbanceReconstructor::new(
        &problem.plant().a,
        &problem.plant().b,
        &problem.plant().e,
    )?;
    let cov_sqrt: Vec<DMatrix<T>> = problem
        .covariances()
        .iter()
        .map(symmetric_sqrt)
        .collect();

    let simulate = |run: usize| -> RunRecord<T> {
        let mut w_rng = ChaCha12Rng::seed_from_u64(options.seed);
        w_rng.set_stream(2 * run as u64);
        let mut c_rng = ChaCha12Rng::seed_from_u64(options.seed);
        c_rng.set_stream(2 * run as u64 + 1);
        simulate_run(
            problem,
            chain,
            policy,
            &reconstructor,
            &cov_sqrt,
            &mut w_rng,
            &mut c_rng,
        )
    };

    let records: Vec<RunRecord<T>> = match thread_pool() {
        Some(pool) => pool.install(|| (0..options.runs).into_par_iter().map(simulate).collect()),
        None => (0..options.runs).into_par_iter().map(simulate).collect(),
    };
    let report = aggregate(&records, h);
    Ok(SimulationOutput { records, report })
}

fn simulate_run<T: Scalar>(
    problem: &ValidatedProblem<T>,
    chain: &AoiChain<T>,
    policy: &FeedbackPolicy<T>,
    reconstructor: &DisturbanceReconstructor<T>,
    cov_sqrt: &[DMatrix<T>],
    w_rng: &mut ChaCha12Rng,
    c_rng: &mut ChaCha12Rng,
) -> RunRecord<T>
where
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let h = problem.horizon();
    let (n_x, n_u, n_w) = (problem.n_x(), problem.n_u(), problem.n_w());
    let plant = problem.plant();

    let mut w = DVector::zeros(h * n_w);
    for k in 0..h {
        let z = DVector::from_fn(n_w, |_, _| w_rng.sample(StandardNormal));
        w.rows_mut(k * n_w, n_w).copy_from(&(&cov_sqrt[k] * z));
    }
    let (aoi, realization) = chain.sample_path(h, n_u, n_w, c_rng);

    let mut x = DVector::zeros((h + 1) * n_x);
    let mut u = DVector::zeros(h * n_u);
    let mut w_hat = DVector::zeros(h * n_w);
    x.rows_mut(0, n_x).copy_from(problem.x0());
    for k in 0..h {
        let mut uk = policy.v.rows(k * n_u, n_u) * problem.x0();
        for r in 0..k {
            if realization.bit(k, r) {
                uk += policy.m.view((k * n_u, r * n_w), (n_u, n_w)) * w_hat.rows(r * n_w, n_w);
            }
        }
        let xk = x.rows(k * n_x, n_x).into_owned();
        let x_next = &plant.a * &xk + &plant.b * &uk + &plant.e * w.rows(k * n_w, n_w);
        w_hat
            .rows_mut(k * n_w, n_w)
            .copy_from(&reconstructor.reconstruct(&x_next, &xk, &uk));
        x.rows_mut((k + 1) * n_x, n_x).copy_from(&x_next);
        u.rows_mut(k * n_u, n_u).copy_from(&uk);
    }

    let input_applicable: Vec<bool> = (0..h)
        .map(|k| (0..k).all(|r| !policy.support.bit(k, r) || realization.bit(k, r)))
        .collect();
    let state_applicable: Vec<bool> = (0..=h)
        .map(|s| input_applicable[..s.min(h)].iter().all(|a| *a))
        .collect();
    let state_ok: Vec<bool> = (0..=h)
        .map(|s| {
            problem
                .state_set(s)
                .contains(&x.rows(s * n_x, n_x).into_owned())
        })
        .collect();
    let input_ok: Vec<bool> = (0..h)
        .map(|k| {
            problem
                .input_set()
                .contains(&u.rows(k * n_u, n_u).into_owned())
        })
        .collect();

    RunRecord {
        aoi,
        realization,
        x,
        u,
        w,
        input_applicable,
        state_applicable,
        state_ok,
        input_ok,
    }
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

fn aggregate<T: Scalar>(records: &[RunRecord<T>], h: usize) -> SimulationReport {
    let n = records.len();
    let mut report = SimulationReport {
        runs: n,
        state_rate: Vec::with_capacity(h + 1),
        input_rate: Vec::with_capacity(h),
        input_applicable_rate: Vec::with_capacity(h),
        state_applicable_rate: Vec::with_capacity(h + 1),
        conditional_state_rate: Vec::with_capacity(h + 1),
        conditional_input_rate: Vec::with_capacity(h),
    };
    for s in 0..=h {
        let ok = records.iter().filter(|r| r.state_ok[s]).count();
        let app = records.iter().filter(|r| r.state_applicable[s]).count();
        let both = records
            .iter()
            .filter(|r| r.state_ok[s] && r.state_applicable[s])
            .count();
        report.state_rate.push(rate(ok, n));
        report.state_applicable_rate.push(rate(app, n));
        report.conditional_state_rate.push(rate(both, app));
    }
    for k in 0..h {
        let ok = records.iter().filter(|r| r.input_ok[k]).count();
        let app = records.iter().filter(|r| r.input_applicable[k]).count();
        let both = records
            .iter()
            .filter(|r| r.input_ok[k] && r.input_applicable[k])
            .count();
        report.input_rate.push(rate(ok, n));
        report.input_applicable_rate.push(rate(app, n));
        report.conditional_input_rate.push(rate(both, app));
    }
    report
}

/// Largest deviation between the simulated trajectory and the stacked
/// closed-loop map evaluated at the run's realized pattern.
pub fn stacked_equivalence_error<T: Scalar>(
    problem: &ValidatedProblem<T>,
    policy: &FeedbackPolicy<T>,
    record: &RunRecord<T>,
) -> T {
    let sys = build_stacked(problem.plant(), problem.horizon());
    let loop_ = close_loop(&sys, policy, &record.realization);
    let predicted = &loop_.cal_a * problem.x0() + &loop_.scr_e * &record.w;
    (&record.x - predicted).amax()
}
