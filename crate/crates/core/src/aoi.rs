//! Age-of-Information model: Markov chain over AoI values, availability
//! probabilities, the planned information pattern and its risk chain, and
//! enumeration/sampling of indicator realizations.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardUniform;
use thiserror::Error;

use crate::scalar::{cast, Scalar};

/// Horizon guard for exhaustive realization enumeration.
pub const MAX_ENUMERATION_HORIZON: usize = 12;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AoiError {
    #[error("probability {value} outside [0, 1]")]
    InvalidProbability { value: f64 },
    #[error("transition matrix column {column} sums to {sum}, expected 1")]
    NotStochastic { column: usize, sum: f64 },
    #[error("negative transition probability at ({row}, {column})")]
    NegativeEntry { row: usize, column: usize },
    #[error("AoI may increase by at most one per step, but T[{row}][{column}] > 0")]
    StructureViolation { row: usize, column: usize },
    #[error("initial AoI distribution sums to {sum}, expected 1")]
    BadInitialDistribution { sum: f64 },
    #[error("horizon {horizon} exceeds the enumeration guard of {max}")]
    HorizonTooLarge { horizon: usize, max: usize },
    #[error(
        "risk chain infeasible at step {k}: no availability level keeps \
         the applicability product {product:.6} above delta_x = {delta_x}"
    )]
    InfeasibleRiskChain { k: usize, product: f64, delta_x: f64 },
}

/// Markov chain over AoI values `{0, .., a_max}` with column-stochastic
/// transition matrix: `mu_{k+1} = T mu_k`, entry `T[j][i] = P(a'=j | a=i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiChain<T: Scalar> {
    a_max: usize,
    transition: DMatrix<T>,
    mu0: DVector<T>,
}

impl<T: Scalar> AoiChain<T> {
    pub fn new(transition: DMatrix<T>, mu0: DVector<T>) -> Result<Self, AoiError> {
        let n = transition.nrows();
        assert!(n >= 1 && transition.ncols() == n && mu0.len() == n);
        for i in 0..n {
            let mut sum = T::zero();
            for j in 0..n {
                let p = transition[(j, i)];
                if p < T::zero() {
                    return Err(AoiError::NegativeEntry { row: j, column: i });
                }
                if j > i + 1 && p > T::zero() {
                    return Err(AoiError::StructureViolation { row: j, column: i });
                }
                sum += p;
            }
            if (sum - T::one()).abs() > cast(STOCHASTIC_TOL) {
                return Err(AoiError::NotStochastic {
                    column: i,
                    sum: sum.to_report(),
                });
            }
        }
        let mass: T = mu0.iter().copied().fold(T::zero(), |a, b| a + b);
        if (mass - T::one()).abs() > cast(STOCHASTIC_TOL) || mu0.iter().any(|p| *p < T::zero()) {
            return Err(AoiError::BadInitialDistribution {
                sum: mass.to_report(),
            });
        }
        Ok(Self {
            a_max: n - 1,
            transition,
            mu0,
        })
    }

    /// One-link channel: a transmission succeeds with probability `q` and
    /// resets the AoI to zero, otherwise the AoI grows by one (saturating at
    /// `a_max`). The initial AoI is known to be zero.
    pub fn one_link(q: T, a_max: usize) -> Result<Self, AoiError> {
        if !(q >= T::zero() && q <= T::one()) {
            return Err(AoiError::InvalidProbability {
                value: q.to_report(),
            });
        }
        assert!(a_max >= 1, "one_link needs a_max >= 1");
        let n = a_max + 1;
        let mut transition = DMatrix::zeros(n, n);
        for i in 0..n {
            transition[(0, i)] += q;
            let up = (i + 1).min(a_max);
            transition[(up, i)] += T::one() - q;
        }
        let mut mu0 = DVector::zeros(n);
        mu0[0] = T::one();
        Self::new(transition, mu0)
    }

    pub fn a_max(&self) -> usize {
        self.a_max
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.transition
    }

    pub fn mu0(&self) -> &DVector<T> {
        &self.mu0
    }

    /// AoI distribution `mu_k = T^k mu_0`.
    pub fn predict_distribution(&self, k: usize) -> DVector<T> {
        let mut mu = self.mu0.clone();
        for _ in 0..k {
            mu = &self.transition * mu;
        }
        mu
    }

    /// True when saturation at `a_max` cannot alter any `p_{k,r}` within a
    /// horizon of length `h`.
    pub fn covers_horizon(&self, h: usize) -> bool {
        self.a_max + 1 >= h
    }

    /// Samples an AoI trajectory `a_0..a_{h-1}` and its indicator realization.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        h: usize,
        n_u: usize,
        n_w: usize,
        rng: &mut R,
    ) -> (Vec<usize>, IndicatorMatrix)
    where
        StandardUniform: Distribution<T>,
    {
        let mut path = Vec::with_capacity(h);
        let mut age = sample_categorical(self.mu0.as_slice(), rng);
        path.push(age);
        for _ in 1..h {
            let column: Vec<T> = (0..=self.a_max).map(|j| self.transition[(j, age)]).collect();
            age = sample_categorical(&column, rng);
            path.push(age);
        }
        let realization = IndicatorMatrix::from_aoi_path(&path, n_u, n_w);
        (path, realization)
    }
}

fn sample_categorical<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize
where
    StandardUniform: Distribution<T>,
{
    let u: T = rng.sample(StandardUniform);
    let mut acc = T::zero();
    for (i, w) in weights.iter().enumerate() {
        acc += *w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Availability probability `p_{k,r} = sum_{l=0}^{k-r-1} mu_k[l]`; zero for
/// `r >= k` (empty summation range).
pub fn availability_probability<T: Scalar>(mu_k: &DVector<T>, k: usize, r: usize) -> T {
    if r >= k {
        return T::zero();
    }
    let upper = (k - r - 1).min(mu_k.len() - 1);
    let mut p = T::zero();
    for l in 0..=upper {
        p += mu_k[l];
    }
    if p > T::one() {
        T::one()
    } else {
        p
    }
}

/// Per-step AoI distributions `mu_0..mu_{H-1}` and the lower-triangular
/// availability table `p_{k,r}` for `r < k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiTable<T: Scalar> {
    h: usize,
    mu: Vec<DVector<T>>,
    p: Vec<Vec<T>>,
}

impl<T: Scalar> AoiTable<T> {
    pub fn from_chain(chain: &AoiChain<T>, h: usize) -> Self {
        let mut mu = Vec::with_capacity(h);
        let mut current = chain.mu0().clone();
        for _ in 0..h {
            mu.push(current.clone());
            current = chain.transition() * current;
        }
        let p = (0..h)
            .map(|k| {
                (0..k)
                    .map(|r| availability_probability(&mu[k], k, r))
                    .collect()
            })
            .collect();
        Self { h, mu, p }
    }

    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn mu(&self, k: usize) -> &DVector<T> {
        &self.mu[k]
    }

    /// `p_{k,r}`; zero outside the strict lower triangle.
    pub fn p(&self, k: usize, r: usize) -> T {
        if k < self.h && r < k {
            self.p[k][r]
        } else {
            T::zero()
        }
    }
}

/// Lower-triangular `{0,1}` pattern of which disturbances feed back at each
/// step; bit `(k, r)` replicates over an `n_u x n_w` block on expansion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndicatorMatrix {
    h: usize,
    n_u: usize,
    n_w: usize,
    bits: Vec<bool>,
}

impl IndicatorMatrix {
    pub fn zero(h: usize, n_u: usize, n_w: usize) -> Self {
        Self {
            h,
            n_u,
            n_w,
            bits: vec![false; h * h],
        }
    }

    /// All bits of the strict lower staircase set (full information).
    pub fn full_staircase(h: usize, n_u: usize, n_w: usize) -> Self {
        let mut m = Self::zero(h, n_u, n_w);
        for k in 0..h {
            for r in 0..k {
                m.set(k, r, true);
            }
        }
        m
    }

    /// Pattern realized by an AoI trajectory: bit `(k, r)` iff `r < k - a_k`.
    pub fn from_aoi_path(path: &[usize], n_u: usize, n_w: usize) -> Self {
        let h = path.len();
        let mut m = Self::zero(h, n_u, n_w);
        for (k, &age) in path.iter().enumerate() {
            let l = k.saturating_sub(age);
            for r in 0..l {
                m.set(k, r, true);
            }
        }
        m
    }

    fn from_l_sequence(ls: &[usize], n_u: usize, n_w: usize) -> Self {
        let h = ls.len();
        let mut m = Self::zero(h, n_u, n_w);
        for (k, &l) in ls.iter().enumerate() {
            for r in 0..l.min(k) {
                m.set(k, r, true);
            }
        }
        m
    }

    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn bit(&self, k: usize, r: usize) -> bool {
        self.bits[k * self.h + r]
    }

    pub fn set(&mut self, k: usize, r: usize, value: bool) {
        assert!(r < k, "indicator bits live strictly below the diagonal");
        self.bits[k * self.h + r] = value;
    }

    /// Number of set bits.
    pub fn support_size(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Entrywise `self >= other`.
    pub fn dominates(&self, other: &IndicatorMatrix) -> bool {
        assert_eq!(self.h, other.h);
        self.bits
            .iter()
            .zip(other.bits.iter())
            .all(|(a, b)| *a || !*b)
    }

    /// Both staircase monotonicity properties: knowledge never lost over `k`,
    /// and within a row the most recent disturbances drop out first.
    pub fn is_staircase(&self) -> bool {
        for k in 0..self.h {
            for r in 0..k {
                if k + 1 < self.h && self.bit(k, r) && !self.bit(k + 1, r) {
                    return false;
                }
                if r + 1 < k && self.bit(k, r + 1) && !self.bit(k, r) {
                    return false;
                }
            }
        }
        true
    }

    /// Block expansion: each bit becomes an `n_u x n_w` all-ones block.
    pub fn expand<T: Scalar>(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.h * self.n_u, self.h * self.n_w);
        for k in 0..self.h {
            for r in 0..k {
                if self.bit(k, r) {
                    m.view_mut((k * self.n_u, r * self.n_w), (self.n_u, self.n_w))
                        .fill(T::one());
                }
            }
        }
        m
    }
}

/// All indicator matrices reachable with positive probability over horizon
/// `h`, deduplicated. Works level by level on the prefix of per-step
/// information indices `l_k = max(k - a_k, 0)`, which fully determine the
/// pattern, while tracking which true AoI values can produce each prefix.
pub fn enumerate_realizations<T: Scalar>(
    chain: &AoiChain<T>,
    h: usize,
    n_u: usize,
    n_w: usize,
) -> Result<Vec<IndicatorMatrix>, AoiError> {
    if h > MAX_ENUMERATION_HORIZON {
        return Err(AoiError::HorizonTooLarge {
            horizon: h,
            max: MAX_ENUMERATION_HORIZON,
        });
    }
    let mut frontier: BTreeMap<Vec<usize>, BTreeSet<usize>> = BTreeMap::new();
    for a0 in 0..=chain.a_max() {
        if chain.mu0()[a0] > T::zero() {
            frontier.entry(vec![0]).or_default().insert(a0);
        }
    }
    for k in 1..h {
        let mut next: BTreeMap<Vec<usize>, BTreeSet<usize>> = BTreeMap::new();
        for (prefix, ages) in &frontier {
            for &age in ages {
                for j in 0..=chain.a_max() {
                    if chain.transition()[(j, age)] > T::zero() {
                        let mut extended = prefix.clone();
                        extended.push(k.saturating_sub(j));
                        next.entry(extended).or_default().insert(j);
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(frontier
        .keys()
        .map(|ls| IndicatorMatrix::from_l_sequence(ls, n_u, n_w))
        .collect())
}

/// Members of `p_omega` that dominate `p_beta` entrywise.
pub fn dominating_set<'a>(
    p_omega: &'a [IndicatorMatrix],
    p_beta: &IndicatorMatrix,
) -> Vec<&'a IndicatorMatrix> {
    p_omega.iter().filter(|p| p.dominates(p_beta)).collect()
}

/// Catalan number `C_h = (2h)! / (h! (h+1)!)`, the upper bound on the number
/// of realizations.
pub fn catalan(h: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..h as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c
}

/// The planned information pattern together with the applicability chain
/// `alpha_k` and the tailored likelihoods derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSelection<T: Scalar> {
    /// Planned pattern: bit `(k, r)` iff `p_{k,r} >= alpha_k`.
    pub p_beta: IndicatorMatrix,
    /// `alpha_0..alpha_{H-1}`; index 0 is fixed to one (no disturbance can
    /// precede step 0).
    pub alpha: Vec<T>,
    /// `gamma_k^u = delta_u / alpha_k` for each input step.
    pub gamma_u: Vec<T>,
    /// `gamma_k^x = delta_x / prod_{t=1}^{k-1} alpha_t` for each state step
    /// `k = 0..H` (the state at step `k` depends on control laws up to
    /// `u_{k-1}`).
    pub gamma_x: Vec<T>,
    /// `prod_{t=1}^{k-1} alpha_t` for `k = 0..H`.
    pub alpha_products: Vec<T>,
    pub delta_x: T,
    pub delta_u: T,
}

/// Chooses the applicability chain and the planned pattern.
///
/// Per step the candidate availability levels are the table entries exceeding
/// `delta_u`; among them the smallest level whose running product stays at or
/// above `delta_x` is selected, so the information fed back is maximized
/// subject to the risk chain staying certifiable. An empty candidate set
/// forces `alpha_k = 1` (open-loop step). When even the largest candidate
/// cannot keep the product above `delta_x` the requested risk level is not
/// certifiable over this channel and horizon.
pub fn select_beta<T: Scalar>(
    table: &AoiTable<T>,
    delta_u: T,
    delta_x: T,
    n_u: usize,
    n_w: usize,
) -> Result<BetaSelection<T>, AoiError> {
    let h = table.horizon();
    let mut p_beta = IndicatorMatrix::zero(h, n_u, n_w);
    let mut alpha = vec![T::one(); h];
    let mut product = T::one();
    // alpha_products[k] = prod_{t=1}^{k-1} alpha_t, needed up to k = H.
    let mut alpha_products = vec![T::one(); h + 1];

    for k in 0..h {
        let mut candidates: Vec<T> = (0..k)
            .map(|r| table.p(k, r))
            .filter(|p| *p > delta_u)
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();

        let chosen = if candidates.is_empty() {
            T::one()
        } else if k == 0 {
            unreachable!("row 0 has no availability entries")
        } else {
            // alpha_k enters the product guarding X_{k+1}..X_H.
            match candidates.iter().copied().find(|c| product * *c >= delta_x) {
                Some(c) => c,
                None => {
                    return Err(AoiError::InfeasibleRiskChain {
                        k,
                        product: (product * candidates[candidates.len() - 1]).to_report(),
                        delta_x: delta_x.to_report(),
                    })
                }
            }
        };
        alpha[k] = chosen;
        if k >= 1 {
            product *= chosen;
            if product < delta_x {
                return Err(AoiError::InfeasibleRiskChain {
                    k,
                    product: product.to_report(),
                    delta_x: delta_x.to_report(),
                });
            }
        }
        alpha_products[k + 1] = product;
        for r in 0..k {
            if table.p(k, r) >= chosen {
                p_beta.set(k, r, true);
            }
        }
    }

    let gamma_u = alpha.iter().map(|a| delta_u / *a).collect();
    let gamma_x = alpha_products.iter().map(|p| delta_x / *p).collect();
    Ok(BetaSelection {
        p_beta,
        alpha,
        gamma_u,
        gamma_x,
        alpha_products,
        delta_x,
        delta_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn one_link_column_structure() {
        let chain = AoiChain::<f64>::one_link(0.7, 3).unwrap();
        let col: Vec<f64> = (0..4).map(|j| chain.transition()[(j, 1)]).collect();
        for (got, want) in col.iter().zip([0.7, 0.0, 0.3, 0.0]) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-15);
        }
    }

    #[test]
    fn perfect_channel_stays_at_zero() {
        let chain = AoiChain::<f64>::one_link(1.0, 3).unwrap();
        for k in 0..6 {
            let mu = chain.predict_distribution(k);
            assert_abs_diff_eq!(mu[0], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn dead_channel_increments_to_saturation() {
        let chain = AoiChain::<f64>::one_link(0.0, 3).unwrap();
        for k in 0..6 {
            let mu = chain.predict_distribution(k);
            let expected = k.min(3);
            assert_abs_diff_eq!(mu[expected], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn one_step_distribution() {
        let chain = AoiChain::<f64>::one_link(0.7, 3).unwrap();
        let mu1 = chain.predict_distribution(1);
        assert_abs_diff_eq!(mu1[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(mu1[1], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(mu1[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn availability_examples() {
        let chain = AoiChain::<f64>::one_link(0.7, 3).unwrap();
        let mu2 = chain.predict_distribution(2);
        // hand computation: mu_2 = (0.7, 0.21, 0.09, 0); p_{2,0} = 0.7 + 0.21
        assert_abs_diff_eq!(availability_probability(&mu2, 2, 0), 0.91, epsilon = 1e-14);
        assert_eq!(availability_probability(&mu2, 2, 2), 0.0);
        assert_eq!(availability_probability(&mu2, 2, 5), 0.0);
        let point = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(availability_probability(&point, 4, 3), 1.0);
    }

    #[test]
    fn table_matches_closed_form() {
        // one-link from known zero age: p_{k,r} = 1 - (1-q)^{k-r}
        let q = 0.6;
        let chain = AoiChain::<f64>::one_link(q, 8).unwrap();
        let table = AoiTable::from_chain(&chain, 6);
        for k in 0..6 {
            for r in 0..k {
                let expected = 1.0 - (1.0 - q).powi((k - r) as i32);
                assert_abs_diff_eq!(table.p(k, r), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn structure_violation_rejected() {
        // jump by two in one step
        let t = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        let mu0 = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            AoiChain::new(t, mu0),
            Err(AoiError::StructureViolation { row: 2, column: 0 })
        ));
    }

    #[test]
    fn select_beta_perfect_channel() {
        let chain = AoiChain::<f64>::one_link(1.0, 5).unwrap();
        let table = AoiTable::from_chain(&chain, 5);
        let beta = select_beta(&table, 0.8, 0.8, 1, 1).unwrap();
        assert_eq!(beta.p_beta, IndicatorMatrix::full_staircase(5, 1, 1));
        for k in 0..5 {
            assert_abs_diff_eq!(beta.alpha[k], 1.0);
            assert_abs_diff_eq!(beta.gamma_u[k], 0.8);
        }
        for k in 0..=5 {
            assert_abs_diff_eq!(beta.gamma_x[k], 0.8);
        }
    }

    #[test]
    fn select_beta_hopeless_channel_goes_open_loop() {
        let chain = AoiChain::<f64>::one_link(0.1, 8).unwrap();
        let table = AoiTable::from_chain(&chain, 4);
        // largest table entry is p_{3,0} = 1 - 0.9^3 = 0.271 <= delta_u
        let beta = select_beta(&table, 0.5, 0.5, 1, 1).unwrap();
        assert_eq!(beta.p_beta.support_size(), 0);
        assert!(beta.alpha.iter().all(|a| *a == 1.0));
        assert!(beta.gamma_u.iter().all(|g| *g == 0.5));
    }

    #[test]
    fn select_beta_constrained_choice() {
        // q = 0.9, H = 4, deltas 0.8: rows hold p = 1 - 0.1^(k-r).
        // Steps 1 and 2 take the smallest entry above 0.8 (0.9); at step 3 the
        // running product would drop to 0.729, so the chain is forced up to
        // the next level 0.99.
        let chain = AoiChain::<f64>::one_link(0.9, 8).unwrap();
        let table = AoiTable::from_chain(&chain, 4);
        let beta = select_beta(&table, 0.8, 0.8, 1, 1).unwrap();
        assert_abs_diff_eq!(beta.alpha[1], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.alpha[2], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.alpha[3], 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.alpha_products[4], 0.9 * 0.9 * 0.99, epsilon = 1e-12);
        for k in 0..4 {
            let g = beta.gamma_u[k];
            assert!(g >= 0.8 && g <= 1.0);
            assert_abs_diff_eq!(g * beta.alpha[k], 0.8, epsilon = 1e-15);
        }
        // step 3 drops the oldest disturbance from the plan (p_{3,2} = 0.9 < 0.99)
        assert!(beta.p_beta.bit(3, 0) && beta.p_beta.bit(3, 1));
        assert!(!beta.p_beta.bit(3, 2));
    }

    #[test]
    fn select_beta_infeasible_chain() {
        // q = 0.9, delta_x = 0.999: even p_{1,0} = 0.9 cannot reach it.
        let chain = AoiChain::<f64>::one_link(0.9, 8).unwrap();
        let table = AoiTable::from_chain(&chain, 4);
        match select_beta(&table, 0.8, 0.999, 1, 1) {
            Err(AoiError::InfeasibleRiskChain { k, .. }) => assert_eq!(k, 1),
            other => panic!("expected infeasible chain, got {other:?}"),
        }
    }

    #[test]
    fn enumerate_h1_is_zero_matrix() {
        let chain = AoiChain::<f64>::one_link(0.5, 4).unwrap();
        let set = enumerate_realizations(&chain, 1, 1, 1).unwrap();
        assert_eq!(set, vec![IndicatorMatrix::zero(1, 1, 1)]);
    }

    #[test]
    fn enumerate_one_link_power_of_two() {
        for h in 2..=6 {
            let chain = AoiChain::<f64>::one_link(0.5, h).unwrap();
            let set = enumerate_realizations(&chain, h, 1, 1).unwrap();
            assert_eq!(set.len(), 1 << (h - 1));
            assert!(set.iter().all(|m| m.is_staircase()));
        }
    }

    #[test]
    fn enumeration_respects_catalan_bound() {
        assert_eq!(catalan(6), 132);
        // a denser admissible chain: from age i the AoI may fall anywhere
        let n = 7;
        let mut t = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let up = (i + 1).min(n - 1);
            let levels = i + 1; // 0..=i plus the increment
            let w = 1.0 / (levels as f64 + 1.0);
            for j in 0..=i {
                t[(j, i)] += w;
            }
            t[(up, i)] += 1.0 - w * levels as f64;
        }
        let mut mu0 = DVector::zeros(n);
        mu0[0] = 1.0;
        let chain = AoiChain::new(t, mu0).unwrap();
        let set = enumerate_realizations(&chain, 6, 1, 1).unwrap();
        assert!(set.len() as u128 <= catalan(6));
    }

    #[test]
    fn horizon_guard() {
        let chain = AoiChain::<f64>::one_link(0.5, 4).unwrap();
        assert!(matches!(
            enumerate_realizations(&chain, 13, 1, 1),
            Err(AoiError::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn sample_path_deterministic_and_consistent() {
        let chain = AoiChain::<f64>::one_link(0.5, 6).unwrap();
        let mut rng_a = ChaCha12Rng::seed_from_u64(7);
        let mut rng_b = ChaCha12Rng::seed_from_u64(7);
        let (path_a, real_a) = chain.sample_path(5, 1, 1, &mut rng_a);
        let (path_b, real_b) = chain.sample_path(5, 1, 1, &mut rng_b);
        assert_eq!(path_a, path_b);
        assert_eq!(real_a, real_b);
        assert_eq!(real_a, IndicatorMatrix::from_aoi_path(&path_a, 1, 1));
    }

    #[test]
    fn degenerate_channels_sample_degenerate_paths() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let perfect = AoiChain::<f64>::one_link(1.0, 4).unwrap();
        let (path, real) = perfect.sample_path(5, 1, 1, &mut rng);
        assert!(path.iter().all(|a| *a == 0));
        assert_eq!(real, IndicatorMatrix::full_staircase(5, 1, 1));

        let dead = AoiChain::<f64>::one_link(0.0, 4).unwrap();
        let (path, real) = dead.sample_path(5, 1, 1, &mut rng);
        assert_eq!(path, vec![0, 1, 2, 3, 4]);
        assert_eq!(real, IndicatorMatrix::zero(5, 1, 1));
    }

    #[test]
    fn dominating_set_cases() {
        let chain = AoiChain::<f64>::one_link(0.5, 4).unwrap();
        let omega = enumerate_realizations(&chain, 3, 1, 1).unwrap();
        assert_eq!(omega.len(), 4);

        let zero = IndicatorMatrix::zero(3, 1, 1);
        assert_eq!(dominating_set(&omega, &zero).len(), omega.len());

        let full = IndicatorMatrix::full_staircase(3, 1, 1);
        let dom = dominating_set(&omega, &full);
        assert_eq!(dom.len(), 1);
        assert_eq!(*dom[0], full);

        let mut one_bit = IndicatorMatrix::zero(3, 1, 1);
        one_bit.set(2, 0, true);
        let dom = dominating_set(&omega, &one_bit);
        let brute: Vec<_> = omega.iter().filter(|p| p.bit(2, 0)).collect();
        assert_eq!(dom, brute);
    }

    proptest! {
        #[test]
        fn p_table_monotone_in_r(q in 0.01f64..0.99, h in 2usize..8) {
            let chain = AoiChain::<f64>::one_link(q, 8).unwrap();
            let table = AoiTable::from_chain(&chain, h);
            for k in 1..h {
                for r in 0..k.saturating_sub(1) {
                    prop_assert!(table.p(k, r) >= table.p(k, r + 1) - 1e-14);
                }
            }
        }

        #[test]
        fn sampled_realizations_are_staircase(q in 0.05f64..0.95, seed in 0u64..500) {
            let chain = AoiChain::<f64>::one_link(q, 8).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (path, real) = chain.sample_path(6, 1, 1, &mut rng);
            prop_assert!(real.is_staircase());
            for (k, &a) in path.iter().enumerate() {
                for r in 0..k {
                    prop_assert_eq!(real.bit(k, r), r < k.saturating_sub(a));
                }
            }
        }

        #[test]
        fn beta_support_shrinks_with_delta_u(q in 0.3f64..0.95, h in 2usize..7) {
            let chain = AoiChain::<f64>::one_link(q, 8).unwrap();
            let table = AoiTable::from_chain(&chain, h);
            // delta_x below q^6 so the product constraint never interferes
            let lo = select_beta(&table, 0.05, 1e-4, 1, 1);
            let hi = select_beta(&table, 0.5, 1e-4, 1, 1);
            if let (Ok(lo), Ok(hi)) = (lo, hi) {
                prop_assert!(lo.p_beta.dominates(&hi.p_beta));
            }
        }

        #[test]
        fn predicted_distributions_stay_stochastic(q in 0.0f64..=1.0, k in 0usize..20) {
            let chain = AoiChain::<f64>::one_link(q, 6).unwrap();
            let mu = chain.predict_distribution(k);
            let sum: f64 = mu.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(mu.iter().all(|p| *p >= -1e-15));
        }
    }
}
