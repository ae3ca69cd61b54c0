//! The two bespoke benchmark instances — a parametrized family of
//! hard-to-distinguish chains with closed-form ground truth, and the classic
//! divergence counterexample — plus a JSON carrier for external instances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::weighted_feature_covariance;
use crate::mdp::{InducedMrp, Policy, TabularMdp};

/// Self-loop bias direction for one of the transient states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// Parameters of the hard-family chain: `feature_dim` must be odd, states
/// `0..feature_dim-1` carry perturbed self-loops `q = gamma +/- (1-gamma)^2
/// epsilon` with equally many of each sign, and the remaining states share
/// one feature and all the reward.
#[derive(Debug, Clone)]
pub struct MinimaxSpec {
    pub n_states: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    pub epsilon: f64,
    /// Balanced sign pattern of length `feature_dim - 1`; default is the
    /// first half `Plus`, the rest `Minus`.
    pub signs: Option<Vec<Sign>>,
    /// The perturbation must stay well below the discount scale for the
    /// closed forms to describe a genuinely hard family; set to `false` to
    /// build anyway.
    pub enforce_epsilon_guard: bool,
}

impl MinimaxSpec {
    pub fn new(n_states: usize, feature_dim: usize, gamma: f64, epsilon: f64) -> Self {
        Self {
            n_states,
            feature_dim,
            gamma,
            epsilon,
            signs: None,
            enforce_epsilon_guard: true,
        }
    }
}

/// A fully solved family member.
#[derive(Debug, Clone)]
pub struct MinimaxInstance {
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub mrp: InducedMrp,
    pub features: FeatureMap,
    /// Closed-form stationary distribution.
    pub mu: DVector<f64>,
    /// Closed-form fixed point.
    pub theta_star: DVector<f64>,
    /// Self-loop probabilities for the transient states.
    pub q: DVector<f64>,
    pub gamma: f64,
}

pub fn build_minimax(spec: &MinimaxSpec) -> Result<MinimaxInstance> {
    let d = spec.feature_dim;
    let n = spec.n_states;
    let gamma = spec.gamma;
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "feature dimension must be an odd integer greater than 1, got {d}"
        )));
    }
    if n < d + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least {} states for dimension {d}, got {n}",
            d + 1
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "discount must lie in (0, 1), got {gamma}"
        )));
    }
    if !(spec.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "perturbation must be positive, got {}",
            spec.epsilon
        )));
    }

    let signs = match &spec.signs {
        Some(signs) => {
            if signs.len() != d - 1 {
                return Err(Error::InvalidParameter(format!(
                    "sign pattern has length {}, expected {}",
                    signs.len(),
                    d - 1
                )));
            }
            let plus = signs.iter().filter(|s| **s == Sign::Plus).count();
            if plus * 2 != d - 1 {
                return Err(Error::InvalidParameter(format!(
                    "sign pattern must be balanced: {plus} of {} are positive",
                    d - 1
                )));
            }
            signs.clone()
        }
        None => {
            let half = (d - 1) / 2;
            (0..d - 1)
                .map(|i| if i < half { Sign::Plus } else { Sign::Minus })
                .collect()
        }
    };

    let shift = (1.0 - gamma).powi(2) * spec.epsilon;
    let q: DVector<f64> = DVector::from_iterator(
        d - 1,
        signs.iter().map(|s| match s {
            Sign::Plus => gamma + shift,
            Sign::Minus => gamma - shift,
        }),
    );
    if q.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "self-loop probabilities leave (0, 1): gamma = {gamma}, shift = {shift}"
        )));
    }

    // transient states are 0..d-1, absorbing-block states are d-1..n-1
    let block = n - d + 1;
    let mut kernel = vec![0.0; n * n];
    for s in 0..n {
        let row = &mut kernel[s * n..(s + 1) * n];
        if s < d - 1 {
            row[s] = q[s];
            for item in row.iter_mut().take(n).skip(d - 1) {
                *item = (1.0 - q[s]) / block as f64;
            }
        } else {
            for (sp, item) in row.iter_mut().enumerate() {
                if sp < d - 1 {
                    *item = (1.0 - q[sp]) / (d - 1) as f64;
                } else {
                    *item = gamma / block as f64;
                }
            }
        }
    }
    let reward: Vec<f64> = (0..n).map(|s| if s >= d - 1 { 1.0 } else { 0.0 }).collect();
    let mdp = TabularMdp::new(n, 1, kernel, reward, gamma)?;
    let policy = Policy::uniform(n, 1);
    let mrp = mdp.induce(&policy)?;

    let mut phi = DMatrix::zeros(n, d);
    for s in 0..n {
        phi[(s, s.min(d - 1))] = 1.0;
    }
    let features = FeatureMap::new(phi)?;

    let mut mu = DVector::zeros(n);
    for s in 0..n {
        mu[s] = if s < d - 1 {
            1.0 / (2.0 * (d - 1) as f64)
        } else {
            1.0 / (2.0 * block as f64)
        };
    }

    let theta_star = minimax_fixed_point(&q, gamma, d);

    if spec.enforce_epsilon_guard {
        let sigma = weighted_feature_covariance(&mu, &features);
        let quad = theta_star.dot(&(&sigma * &theta_star)).max(0.0).sqrt();
        let cap = 0.1 * gamma / (1.0 - gamma) * quad.max(1.0);
        if spec.epsilon >= cap {
            return Err(Error::InvalidParameter(format!(
                "perturbation {} is not admissible (needs epsilon < {cap:.6}); \
                 disable the guard to build anyway",
                spec.epsilon
            )));
        }
    }

    Ok(MinimaxInstance {
        mdp,
        policy,
        mrp,
        features,
        mu,
        theta_star,
        q,
        gamma: spec.gamma,
    })
}

/// Closed-form fixed point: the shared coordinate solves a scalar balance
/// equation and the transient coordinates follow from their self-loops.
fn minimax_fixed_point(q: &DVector<f64>, gamma: f64, d: usize) -> DVector<f64> {
    let sum: f64 = q
        .iter()
        .map(|&qi| (1.0 - qi).powi(2) / (1.0 - gamma * qi))
        .sum();
    let last = 1.0 / (1.0 - gamma * gamma - gamma * gamma * sum / (d - 1) as f64);
    let mut theta = DVector::zeros(d);
    for i in 0..d - 1 {
        theta[i] = gamma * (1.0 - q[i]) / (1.0 - gamma * q[i]) * last;
    }
    theta[d - 1] = last;
    theta
}

/// The seven-state divergence counterexample with its two policies and the
/// rank-deficient eight-dimensional features.
#[derive(Debug, Clone)]
pub struct BairdInstance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: FeatureMap,
    /// Stationary distribution of the behavior chain (uniform).
    pub mu_b: DVector<f64>,
    /// Value function under the target policy (identically zero).
    pub v_star: DVector<f64>,
}

pub const BAIRD_STATES: usize = 7;
pub const BAIRD_FEATURE_DIM: usize = 8;

/// Action 0 jumps uniformly into the first six states; action 1 jumps to the
/// last state. The target always plays action 1, the behavior plays it with
/// probability 1/7. All rewards are zero, so the true value function
/// vanishes while the feature parametrization is redundant.
pub fn build_baird() -> BairdInstance {
    let n = BAIRD_STATES;
    let mut kernel = vec![0.0; n * 2 * n];
    for s in 0..n {
        for sp in 0..6 {
            kernel[(s * 2) * n + sp] = 1.0 / 6.0;
        }
        kernel[(s * 2 + 1) * n + (n - 1)] = 1.0;
    }
    let reward = vec![0.0; n * 2];
    let mdp = TabularMdp::new(n, 2, kernel, reward, 0.9).expect("fixed table is valid");

    let target = Policy::new(DMatrix::from_fn(n, 2, |_, a| if a == 1 { 1.0 } else { 0.0 }))
        .expect("fixed table is valid");
    let behavior = Policy::new(DMatrix::from_fn(n, 2, |_, a| {
        if a == 1 {
            1.0 / 7.0
        } else {
            6.0 / 7.0
        }
    }))
    .expect("fixed table is valid");

    let mut phi = DMatrix::zeros(n, BAIRD_FEATURE_DIM);
    for s in 0..6 {
        phi[(s, s)] = 2.0;
        phi[(s, 7)] = 1.0;
    }
    phi[(6, 6)] = 1.0;
    phi[(6, 7)] = 2.0;
    // rows have norm sqrt(5) and the columns are linearly dependent; both are
    // the point of the construction, so feature validation is bypassed
    let features = FeatureMap::new_unvalidated(phi).expect("fixed table is finite");

    BairdInstance {
        mdp,
        target,
        behavior,
        features,
        mu_b: DVector::from_element(n, 1.0 / n as f64),
        v_star: DVector::zeros(n),
    }
}

/// On-disk JSON form of an arbitrary tabular instance, for external
/// benchmarking through the experiment runner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalInstanceFile {
    pub n_states: usize,
    pub n_actions: usize,
    /// `kernel[s][a][s_next]`.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    /// `target[s][a]`.
    pub target: Vec<Vec<f64>>,
    /// `behavior[s][a]`.
    pub behavior: Vec<Vec<f64>>,
    /// `features[s][k]`.
    pub features: Vec<Vec<f64>>,
    /// When false the feature matrix skips rank and row-norm validation.
    #[serde(default = "default_true")]
    pub validate_features: bool,
}

fn default_true() -> bool {
    true
}

impl ExternalInstanceFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InstanceFile(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InstanceFile(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn into_parts(self) -> Result<(TabularMdp, Policy, Policy, FeatureMap)> {
        let flat_kernel: Vec<f64> = self
            .kernel
            .iter()
            .flat_map(|per_state| per_state.iter().flat_map(|row| row.iter().copied()))
            .collect();
        let flat_reward: Vec<f64> = self
            .reward
            .iter()
            .flat_map(|row| row.iter().copied())
            .collect();
        let mdp = TabularMdp::new(
            self.n_states,
            self.n_actions,
            flat_kernel,
            flat_reward,
            self.gamma,
        )?;
        let target = Policy::new(matrix_from_rows(&self.target, self.n_actions)?)?;
        let behavior = Policy::new(matrix_from_rows(&self.behavior, self.n_actions)?)?;
        let phi = matrix_from_rows(&self.features, feature_width(&self.features)?)?;
        let features = if self.validate_features {
            FeatureMap::new(phi)?
        } else {
            FeatureMap::new_unvalidated(phi)?
        };
        Ok((mdp, target, behavior, features))
    }

    pub fn from_instance(
        mdp: &TabularMdp,
        target: &Policy,
        behavior: &Policy,
        features: &FeatureMap,
        validate_features: bool,
    ) -> Self {
        let n = mdp.n_states();
        let a = mdp.n_actions();
        Self {
            n_states: n,
            n_actions: a,
            kernel: (0..n)
                .map(|s| (0..a).map(|act| mdp.kernel_row(s, act).to_vec()).collect())
                .collect(),
            reward: (0..n)
                .map(|s| (0..a).map(|act| mdp.reward(s, act)).collect())
                .collect(),
            gamma: mdp.gamma(),
            target: policy_rows(target),
            behavior: policy_rows(behavior),
            features: (0..n)
                .map(|s| features.state_features(s).iter().copied().collect())
                .collect(),
            validate_features,
        }
    }
}

fn policy_rows(policy: &Policy) -> Vec<Vec<f64>> {
    (0..policy.n_states())
        .map(|s| (0..policy.n_actions()).map(|a| policy.prob(s, a)).collect())
        .collect()
}

fn feature_width(rows: &[Vec<f64>]) -> Result<usize> {
    rows.first()
        .map(|r| r.len())
        .ok_or_else(|| Error::InstanceFile("feature table is empty".into()))
}

fn matrix_from_rows(rows: &[Vec<f64>], width: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InstanceFile("ragged table".into()));
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(DMatrix::from_row_slice(rows.len(), width, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn reference_spec() -> MinimaxSpec {
        MinimaxSpec::new(10, 3, 0.2, 0.01)
    }

    #[test]
    fn reference_family_member_matches_hand_computed_values() {
        let inst = build_minimax(&reference_spec()).unwrap();
        assert_abs_diff_eq!(inst.q[0], 0.2 + 0.64 * 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(inst.q[1], 0.2 - 0.64 * 0.01, epsilon = 1e-15);
        for s in 0..2 {
            assert_abs_diff_eq!(inst.mu[s], 0.25, epsilon = 1e-15);
        }
        for s in 2..10 {
            assert_abs_diff_eq!(inst.mu[s], 0.0625, epsilon = 1e-15);
        }
        // frozen values from an independent dense solve
        assert_abs_diff_eq!(inst.theta_star[0], 0.1773795882044593, epsilon = 1e-12);
        assert_abs_diff_eq!(inst.theta_star[1], 0.17976054784166962, epsilon = 1e-12);
        assert_abs_diff_eq!(inst.theta_star[2], 1.0714299319769356, epsilon = 1e-12);
    }

    #[test]
    fn larger_perturbation_requires_the_override() {
        let mut spec = MinimaxSpec::new(10, 3, 0.2, 0.1);
        assert!(matches!(
            build_minimax(&spec),
            Err(Error::InvalidParameter(_))
        ));
        spec.enforce_epsilon_guard = false;
        let inst = build_minimax(&spec).unwrap();
        // frozen values for the overridden configuration
        assert_abs_diff_eq!(inst.theta_star[0], 0.16652694154408962, epsilon = 1e-12);
        assert_abs_diff_eq!(inst.theta_star[1], 0.19034372380153952, epsilon = 1e-12);
        assert_abs_diff_eq!(inst.theta_star[2], 1.0715646673271855, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_mu_is_stationary() {
        let inst = build_minimax(&reference_spec()).unwrap();
        let mu = crate::mdp::stationary_distribution(inst.mrp.p()).unwrap();
        assert!((mu - &inst.mu).amax() < 1e-10);
    }

    #[test]
    fn closed_form_fixed_point_solves_the_population_system() {
        for (n, d, gamma) in [(10usize, 3usize, 0.2), (10, 9, 0.2), (16, 5, 0.6)] {
            let spec = MinimaxSpec::new(n, d, gamma, 0.01);
            let inst = build_minimax(&spec).unwrap();
            let geometry =
                crate::geometry::StationaryGeometry::from_weights(inst.mu.clone(), &inst.features)
                    .unwrap();
            let pop =
                crate::population::on_policy_population(&inst.mrp, &inst.features, &geometry)
                    .unwrap();
            assert!(
                (&pop.theta_star - &inst.theta_star).amax() < 1e-9,
                "closed form drifted for n={n}, d={d}"
            );
        }
    }

    #[test]
    fn swapping_the_sign_pattern_fixes_the_shared_coordinate() {
        let mut spec = reference_spec();
        let a = build_minimax(&spec).unwrap();
        spec.signs = Some(vec![Sign::Minus, Sign::Plus]);
        let b = build_minimax(&spec).unwrap();
        assert_abs_diff_eq!(a.theta_star[2], b.theta_star[2], epsilon = 1e-14);
        assert_abs_diff_eq!(a.theta_star[0], b.theta_star[1], epsilon = 1e-14);
    }

    #[test]
    fn malformed_specs_are_rejected() {
        assert!(build_minimax(&MinimaxSpec::new(10, 4, 0.2, 0.01)).is_err());
        assert!(build_minimax(&MinimaxSpec::new(3, 3, 0.2, 0.01)).is_err());
        assert!(build_minimax(&MinimaxSpec::new(10, 3, 1.0, 0.01)).is_err());
        assert!(build_minimax(&MinimaxSpec::new(10, 3, 0.2, 0.0)).is_err());
        let unbalanced = MinimaxSpec {
            signs: Some(vec![Sign::Plus, Sign::Plus]),
            ..reference_spec()
        };
        assert!(build_minimax(&unbalanced).is_err());
        // a shift large enough to push q out of (0, 1), guard bypassed
        let out_of_range = MinimaxSpec {
            epsilon: 40.0,
            enforce_epsilon_guard: false,
            ..reference_spec()
        };
        assert!(build_minimax(&out_of_range).is_err());
    }

    #[test]
    fn counterexample_matches_its_published_structure() {
        let inst = build_baird();
        assert_eq!(inst.mdp.n_states(), 7);
        assert_eq!(inst.features.dim(), 8);
        for s in 0..7 {
            assert_eq!(inst.mdp.kernel_row(s, 1)[6], 1.0);
            for sp in 0..6 {
                assert_abs_diff_eq!(inst.mdp.kernel_row(s, 0)[sp], 1.0 / 6.0, epsilon = 1e-15);
            }
            assert_abs_diff_eq!(inst.target.prob(s, 1), 1.0, epsilon = 0.0);
            assert_abs_diff_eq!(inst.behavior.prob(s, 1), 1.0 / 7.0, epsilon = 1e-15);
        }
        let chain = inst.mdp.induce(&inst.behavior).unwrap();
        let mu = crate::mdp::stationary_distribution(chain.p()).unwrap();
        assert!((mu - &inst.mu_b).amax() < 1e-12);
        let v = inst.mdp.induce(&inst.target).unwrap().value_function().unwrap();
        assert!(v.amax() < 1e-12);
        for s in 0..7 {
            assert_abs_diff_eq!(
                inst.features.state_features(s).norm(),
                5.0_f64.sqrt(),
                epsilon = 1e-15
            );
        }
        let sv = inst.features.matrix().clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&x| x > 1e-10).count();
        assert_eq!(rank, 7);
    }

    #[test]
    fn external_file_round_trips() {
        let inst = build_baird();
        let file = ExternalInstanceFile::from_instance(
            &inst.mdp,
            &inst.target,
            &inst.behavior,
            &inst.features,
            false,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instance.json");
        file.save(&path).unwrap();
        let loaded = ExternalInstanceFile::load(&path).unwrap();
        let (mdp, target, _, features) = loaded.into_parts().unwrap();
        assert_eq!(mdp.n_states(), 7);
        assert_eq!(target.prob(3, 1), 1.0);
        assert_eq!(features.matrix(), inst.features.matrix());
        assert!(!features.is_norm_validated());
    }
}
