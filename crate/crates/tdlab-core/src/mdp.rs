//! Finite MDPs, policies, policy-induced Markov reward processes, and chain solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on the stationarity residual `mu' P = mu'`.
pub const STATIONARY_TOL: f64 = 1e-10;

/// A finite discounted MDP with a dense transition kernel and rewards in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // kernel[(s * n_actions + a) * n_states + s']
    kernel: Vec<f64>,
    // reward[s * n_actions + a]
    reward: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// Validates and wraps a dense kernel (`[s][a][s']`, flattened) and reward table.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::DimensionMismatch(
                "state and action counts must be positive".into(),
            ));
        }
        if kernel.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in (0, 1), got {gamma}"
            )));
        }
        for (i, row) in kernel.chunks(n_states).enumerate() {
            let (s, a) = (i / n_actions, i % n_actions);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "kernel row for state {s}, action {a} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "kernel row for state {s}, action {a} sums to {sum}"
                )));
            }
        }
        if reward.iter().any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0) {
            return Err(Error::InvalidParameter(
                "rewards must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            reward,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Transition distribution over next states for `(s, a)`.
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.kernel[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Collapses the MDP under a fixed policy into a Markov reward process:
    /// `P[i][j] = sum_a kernel[i][a][j] pi(a|i)` and `r[i] = sum_a pi(a|i) reward[i][a]`.
    pub fn induce(&self, policy: &Policy) -> Result<InducedMrp> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, MDP needs {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        let mut p = DMatrix::zeros(self.n_states, self.n_states);
        let mut r = DVector::zeros(self.n_states);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.reward(s, a);
                for (sp, q) in self.kernel_row(s, a).iter().enumerate() {
                    p[(s, sp)] += w * q;
                }
            }
        }
        InducedMrp::new(p, r, self.gamma)
    }
}

/// A stationary randomized policy: one probability row over actions per state.
#[derive(Debug, Clone)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row = probs.row(s);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "policy row {s} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "policy row {s} sums to {sum}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// Markov reward process: row-stochastic chain `P`, state rewards `r`, discount.
#[derive(Debug, Clone)]
pub struct InducedMrp {
    p: DMatrix<f64>,
    r: DVector<f64>,
    gamma: f64,
}

impl InducedMrp {
    pub fn new(p: DMatrix<f64>, r: DVector<f64>, gamma: f64) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || r.len() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "chain is {}x{}, rewards have length {}",
                p.nrows(),
                p.ncols(),
                r.len()
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in (0, 1), got {gamma}"
            )));
        }
        for s in 0..n {
            let row = p.row(s);
            if row.iter().any(|q| !q.is_finite() || *q < 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "chain row {s} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidDistribution(format!("chain row {s} sums to {sum}")));
            }
        }
        if r.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::InvalidParameter("rewards must lie in [0, 1]".into()));
        }
        Ok(Self { p, r, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Exact value function: the unique solution of `(I - gamma P) V = r`.
    pub fn value_function(&self) -> Result<DVector<f64>> {
        let n = self.n_states();
        let m = DMatrix::identity(n, n) - self.gamma * &self.p;
        let v = m
            .clone()
            .lu()
            .solve(&self.r)
            .ok_or_else(|| Error::SingularSystem("I - gamma P is singular".into()))?;
        let residual = (&m * &v - &self.r).amax();
        if residual > 1e-10 {
            return Err(Error::SingularSystem(format!(
                "value-function solve left residual {residual:.3e}"
            )));
        }
        Ok(v)
    }
}

/// Solves `mu' P = mu'` with `sum mu = 1` by stacking a normalization row onto
/// `P' - I` and solving the least-squares system. Rejects chains whose
/// invariant distribution is not unique (second near-zero singular value of
/// `P' - I`) and solutions with materially negative mass.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "chain matrix is {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for s in 0..n {
        let sum: f64 = p.row(s).iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.row(s).iter().any(|q| *q < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "row {s} is not a probability vector"
            )));
        }
    }

    let m = p.transpose() - DMatrix::identity(n, n);
    let sv = m.clone().svd(false, false).singular_values;
    let sv_max = sv.iter().cloned().fold(0.0_f64, f64::max).max(1.0);
    let near_null = sv.iter().filter(|&&s| s <= 1e-10 * sv_max).count();
    if near_null > 1 {
        return Err(Error::NoStationaryDistribution(
            "the chain admits more than one invariant distribution".into(),
        ));
    }

    let mut stacked = DMatrix::zeros(n + 1, n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&m);
    stacked.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let mut mu = stacked
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::NoStationaryDistribution(e.to_string()))?;

    for x in mu.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-9 {
                return Err(Error::NoStationaryDistribution(format!(
                    "solution carries negative mass {x:.3e}"
                )));
            }
            *x = 0.0;
        }
    }
    let total = mu.sum();
    if !(total > 0.0) {
        return Err(Error::NoStationaryDistribution("solution has no mass".into()));
    }
    mu /= total;

    let residual = (p.transpose() * &mu - &mu).amax();
    if residual > STATIONARY_TOL {
        return Err(Error::NoStationaryDistribution(format!(
            "stationarity residual {residual:.3e} exceeds {STATIONARY_TOL:.0e}"
        )));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_cycle() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn stationary_of_two_cycle_is_uniform() {
        let mu = stationary_distribution(&two_cycle()).unwrap();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mu[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_rejects_two_closed_classes() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            stationary_distribution(&p),
            Err(Error::NoStationaryDistribution(_))
        ));
    }

    #[test]
    fn single_state_value_is_geometric_series() {
        let mrp = InducedMrp::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
            0.5,
        )
        .unwrap();
        let v = mrp.value_function().unwrap();
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_action_induction_returns_kernel_slice() {
        let kernel = vec![0.3, 0.7, 0.6, 0.4];
        let mdp = TabularMdp::new(2, 1, kernel.clone(), vec![0.2, 0.9], 0.5).unwrap();
        let mrp = mdp.induce(&Policy::uniform(2, 1)).unwrap();
        assert_eq!(mrp.p().as_slice(), DMatrix::from_row_slice(2, 2, &kernel).as_slice());
        assert_abs_diff_eq!(mrp.r()[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn uniform_policy_induction_matches_double_loop() {
        // fixed 3-state, 2-action table; expected values from an independent
        // brute-force summation
        let kernel = vec![
            0.5, 0.25, 0.25, 0.1, 0.6, 0.3, // s = 0
            0.2, 0.2, 0.6, 0.3, 0.3, 0.4, // s = 1
            0.25, 0.5, 0.25, 0.4, 0.1, 0.5, // s = 2
        ];
        let reward = vec![1.0, 0.5, 0.25, 0.75, 0.0, 1.0];
        let mdp = TabularMdp::new(3, 2, kernel, reward, 0.9).unwrap();
        let mrp = mdp.induce(&Policy::uniform(3, 2)).unwrap();
        let expected_p = DMatrix::from_row_slice(
            3,
            3,
            &[0.3, 0.425, 0.275, 0.25, 0.25, 0.5, 0.325, 0.3, 0.375],
        );
        let expected_r = DVector::from_vec(vec![0.75, 0.5, 0.5]);
        assert!((mrp.p() - expected_p).amax() < 1e-15);
        assert!((mrp.r() - expected_r).amax() < 1e-15);
    }

    #[test]
    fn value_function_matches_truncated_series() {
        let p = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.1, 0.2, 0.3, 0.4, //
                0.25, 0.25, 0.25, 0.25, //
                0.0, 0.5, 0.5, 0.0, //
                0.3, 0.3, 0.2, 0.2,
            ],
        );
        let r = DVector::from_vec(vec![0.9, 0.1, 0.4, 0.7]);
        let mrp = InducedMrp::new(p.clone(), r.clone(), 0.8).unwrap();
        let v = mrp.value_function().unwrap();
        let mut truncated = DVector::zeros(4);
        let mut term = r;
        let mut scale = 1.0;
        for _ in 0..=200 {
            truncated += scale * &term;
            term = &p * term;
            scale *= 0.8;
        }
        assert!((v - truncated).amax() < 1e-8);
    }

    #[test]
    fn rewards_out_of_range_are_rejected() {
        let err = TabularMdp::new(1, 1, vec![1.0], vec![1.5], 0.9).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn kernel_rows_must_be_stochastic() {
        let err = TabularMdp::new(1, 1, vec![0.9], vec![0.5], 0.9).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution(_)));
    }
}
