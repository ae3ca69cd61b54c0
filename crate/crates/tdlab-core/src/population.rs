//! Exact population quantities for both settings: the on-policy system
//! `A theta = b`, the off-policy system around the projected-Bellman objective
//! (A~, b~, Pi, Sigma~, its fixed point and spectral constants), the objective
//! itself with gradient and auxiliary vector, and the two-timescale population
//! dynamics with their contraction certificate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{weighted_feature_covariance, StationaryGeometry};
use crate::mdp::{stationary_distribution, InducedMrp, Policy, TabularMdp};

/// On-policy population system: `A = Phi' D_mu (I - gamma P) Phi`,
/// `b = Phi' D_mu r`, and the TD fixed point `theta* = A^{-1} b`.
#[derive(Debug, Clone)]
pub struct OnPolicyPopulation {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub theta_star: DVector<f64>,
}

pub fn on_policy_population(
    mrp: &InducedMrp,
    features: &FeatureMap,
    geometry: &StationaryGeometry,
) -> Result<OnPolicyPopulation> {
    if features.n_states() != mrp.n_states() {
        return Err(Error::DimensionMismatch(
            "features and chain disagree on the state count".into(),
        ));
    }
    let phi = features.matrix();
    let weighted_phi = scale_rows(phi, geometry.mu());
    let a = weighted_phi.transpose() * (phi - mrp.gamma() * (mrp.p() * phi));
    let b = weighted_phi.transpose() * mrp.r();
    let theta_star = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("population matrix A is singular".into()))?;
    let residual = (&a * &theta_star - &b).amax();
    if residual > 1e-10 {
        return Err(Error::SingularSystem(format!(
            "fixed-point solve left residual {residual:.3e}"
        )));
    }
    Ok(OnPolicyPopulation { a, b, theta_star })
}

/// Norm of the projected Bellman residual at `theta`:
/// `|| Phi theta - Proj_{D_mu}(r + gamma P Phi theta) ||_{D_mu}`,
/// zero exactly at the TD fixed point.
pub fn projected_bellman_residual(
    theta: &DVector<f64>,
    mrp: &InducedMrp,
    features: &FeatureMap,
    geometry: &StationaryGeometry,
) -> Result<f64> {
    let phi = features.matrix();
    let v = phi * theta;
    let backed_up = mrp.r() + mrp.gamma() * (mrp.p() * &v);
    let projected = project_onto_features(&backed_up, features, geometry.mu());
    Ok(geometry.weighted_norm(&(v - projected)))
}

/// D-weighted orthogonal projection of a value vector onto the feature span,
/// via least squares on the sqrt-weighted system (handles rank-deficient
/// feature matrices with the minimum-norm solution).
fn project_onto_features(
    values: &DVector<f64>,
    features: &FeatureMap,
    mu: &DVector<f64>,
) -> DVector<f64> {
    let sqrt_mu = mu.map(f64::sqrt);
    let weighted = scale_rows(features.matrix(), &sqrt_mu);
    let rhs = values.component_mul(&sqrt_mu);
    let coeffs = weighted
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("SVD least squares cannot fail with computed factors");
    features.matrix() * coeffs
}

fn scale_rows(m: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, w) in weights.iter().enumerate() {
        out.row_mut(i).scale_mut(*w);
    }
    out
}

/// Spectral constants controlling the two-timescale analysis. Available only
/// when the behavior feature covariance is positive definite.
#[derive(Debug, Clone, Copy)]
pub struct TdcConstants {
    /// `lambda_min(A~' Sigma~^{-1} A~)`.
    pub lambda1: f64,
    /// `lambda_min(Sigma~)`.
    pub lambda2: f64,
    /// `||Sigma~^{-1}|| = 1 / lambda2`.
    pub lambda_sigma: f64,
    /// Condition number of `Sigma~`.
    pub kappa_tilde: f64,
}

/// The fixed point of the off-policy system, or the value-space optimum when
/// coefficients are not identified.
#[derive(Debug, Clone)]
pub enum OffPolicyFixedPoint {
    Unique(DVector<f64>),
    /// `A~` is singular: the minimizing coefficient set is an affine family.
    /// When the features span all of value space, every member realizes the
    /// same optimal value vector, exposed here.
    NonUnique { value_optimum: DVector<f64> },
}

/// Off-policy population quantities under behavior sampling with importance
/// reweighting toward the target policy.
#[derive(Debug, Clone)]
pub struct OffPolicyPopulation {
    pub gamma: f64,
    /// `Sigma~ - gamma Pi`.
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    /// Cross-covariance `E[rho phi(s) phi(s')']`.
    pub pi_cross: DMatrix<f64>,
    /// Behavior feature covariance `E[phi(s) phi(s)']`.
    pub sigma_tilde: DMatrix<f64>,
    /// Stationary distribution of the behavior chain.
    pub mu_b: DVector<f64>,
    /// Largest importance ratio over state-action pairs.
    pub rho_max: f64,
    pub fixed_point: OffPolicyFixedPoint,
    pub constants: Option<TdcConstants>,
}

impl OffPolicyPopulation {
    pub fn theta_star(&self) -> Option<&DVector<f64>> {
        match &self.fixed_point {
            OffPolicyFixedPoint::Unique(theta) => Some(theta),
            OffPolicyFixedPoint::NonUnique { .. } => None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.sigma_tilde.nrows()
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.sigma_tilde.clone()).ok_or_else(|| {
            Error::SingularSystem("behavior feature covariance is not positive definite".into())
        })
    }
}

pub fn off_policy_population(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    features: &FeatureMap,
) -> Result<OffPolicyPopulation> {
    if features.n_states() != mdp.n_states() {
        return Err(Error::DimensionMismatch(
            "features and MDP disagree on the state count".into(),
        ));
    }
    let rho_max = importance_ratio_bound(mdp, target, behavior)?;
    let behavior_chain = mdp.induce(behavior)?;
    let target_chain = mdp.induce(target)?;
    let mu_b = stationary_distribution(behavior_chain.p())?;

    let phi = features.matrix();
    let weighted_phi = scale_rows(phi, &mu_b);
    let sigma_tilde = weighted_feature_covariance(&mu_b, features);
    let pi_cross = weighted_phi.transpose() * (target_chain.p() * phi);
    let b_tilde = weighted_phi.transpose() * target_chain.r();
    let a_tilde = &sigma_tilde - mdp.gamma() * &pi_cross;

    let eigen = sigma_tilde.symmetric_eigenvalues();
    let lambda2 = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    let sigma_norm = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sigma_pd = lambda2 > 1e-12 * sigma_norm.max(1.0);

    let constants = if sigma_pd {
        let chol = Cholesky::new(sigma_tilde.clone())
            .ok_or_else(|| Error::SingularSystem("covariance lost definiteness".into()))?;
        let gram = a_tilde.transpose() * chol.solve(&a_tilde);
        let gram = 0.5 * (&gram + gram.transpose());
        let lambda1 = gram
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        Some(TdcConstants {
            lambda1,
            lambda2,
            lambda_sigma: 1.0 / lambda2,
            kappa_tilde: sigma_norm / lambda2,
        })
    } else {
        None
    };

    let sv = a_tilde.clone().svd(false, false).singular_values;
    let sv_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let invertible = sv.iter().cloned().fold(f64::INFINITY, f64::min) > 1e-10 * sv_max.max(1.0);

    let fixed_point = if invertible {
        let theta = a_tilde
            .clone()
            .lu()
            .solve(&b_tilde)
            .ok_or_else(|| Error::SingularSystem("off-policy system solve failed".into()))?;
        let residual = (&a_tilde * &theta - &b_tilde).amax();
        if residual > 1e-10 {
            return Err(Error::SingularSystem(format!(
                "off-policy fixed-point solve left residual {residual:.3e}"
            )));
        }
        OffPolicyFixedPoint::Unique(theta)
    } else {
        // coefficients unidentified; recover the value-space optimum when the
        // features exhaust value space, otherwise give up
        let phi_sv = phi.clone().svd(false, false).singular_values;
        let phi_max = phi_sv.iter().cloned().fold(0.0_f64, f64::max);
        let rank = phi_sv.iter().filter(|&&s| s > 1e-10 * phi_max.max(1.0)).count();
        if rank < mdp.n_states() {
            return Err(Error::NonUniqueFixedPoint(
                "the off-policy system is singular and the features do not span \
                 value space"
                    .into(),
            ));
        }
        OffPolicyFixedPoint::NonUnique {
            value_optimum: target_chain.value_function()?,
        }
    };

    Ok(OffPolicyPopulation {
        gamma: mdp.gamma(),
        a_tilde,
        b_tilde,
        pi_cross,
        sigma_tilde,
        mu_b,
        rho_max,
        fixed_point,
        constants,
    })
}

/// Largest target/behavior probability ratio; errors when the target policy
/// puts mass where the behavior policy puts none.
fn importance_ratio_bound(mdp: &TabularMdp, target: &Policy, behavior: &Policy) -> Result<f64> {
    if target.n_states() != mdp.n_states()
        || behavior.n_states() != mdp.n_states()
        || target.n_actions() != mdp.n_actions()
        || behavior.n_actions() != mdp.n_actions()
    {
        return Err(Error::DimensionMismatch(
            "policies and MDP disagree on shapes".into(),
        ));
    }
    let mut rho_max = 0.0_f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let p = target.prob(s, a);
            let q = behavior.prob(s, a);
            if q == 0.0 {
                if p > 0.0 {
                    return Err(Error::CoverageViolation(format!(
                        "target plays action {a} in state {s} but the behavior policy never does"
                    )));
                }
                continue;
            }
            rho_max = rho_max.max(p / q);
        }
    }
    Ok(rho_max)
}

/// Projected-Bellman objective in its quadratic form:
/// `1/2 g(theta)' Sigma~^{-1} g(theta)` with `g(theta) = b~ - A~ theta`.
pub fn mspbe(pop: &OffPolicyPopulation, theta: &DVector<f64>) -> Result<f64> {
    let chol = pop.cholesky()?;
    let g = &pop.b_tilde - &pop.a_tilde * theta;
    Ok(0.5 * g.dot(&chol.solve(&g)))
}

/// Same objective evaluated from its definition: the squared weighted distance
/// between `V_theta` and the projection of its one-step backup. The projection
/// uses least squares on the sqrt-weighted features, so rank-deficient feature
/// matrices are handled.
pub fn mspbe_from_definition(
    target_chain: &InducedMrp,
    features: &FeatureMap,
    mu_b: &DVector<f64>,
    theta: &DVector<f64>,
) -> f64 {
    let phi = features.matrix();
    let v = phi * theta;
    let backed_up = target_chain.r() + target_chain.gamma() * (target_chain.p() * &v);
    let projected = project_onto_features(&backed_up, features, mu_b);
    let diff = v - projected;
    0.5 * diff
        .iter()
        .zip(mu_b.iter())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
}

/// Gradient of the objective: `-(b~ - A~ theta) + gamma Pi' w(theta)`.
pub fn mspbe_gradient(pop: &OffPolicyPopulation, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let g = &pop.b_tilde - &pop.a_tilde * theta;
    let w = pop.cholesky()?.solve(&g);
    Ok(-g + pop.gamma * pop.pi_cross.transpose() * w)
}

/// The auxiliary vector tracked by the slow timescale:
/// `w(theta) = Sigma~^{-1} (b~ - A~ theta)`; zero at the fixed point.
pub fn auxiliary_w(pop: &OffPolicyPopulation, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let g = &pop.b_tilde - &pop.a_tilde * theta;
    Ok(pop.cholesky()?.solve(&g))
}

/// The `2d x 2d` linear map driving the population two-timescale recursion in
/// the transformed coordinates `(delta, varkappa z)`:
///
/// ```text
/// [ I - a K           -(g a / k) Pi'        ]        K = A~' Sigma~^{-1} A~
/// [ -k a X K           I - b Sigma~ - g a X Pi' ]    X = I - g Sigma~^{-1} Pi
/// ```
///
/// with `a = alpha`, `b = beta`, `g = gamma`, `k = varkappa`.
pub fn psi_matrix(
    pop: &OffPolicyPopulation,
    alpha: f64,
    beta: f64,
    varkappa: f64,
) -> Result<DMatrix<f64>> {
    check_certificate_inputs(alpha, beta, varkappa)?;
    let d = pop.feature_dim();
    let chol = pop.cholesky()?;
    let sigma_inv_a = chol.solve(&pop.a_tilde);
    let sigma_inv_pi = chol.solve(&pop.pi_cross);
    let gram = pop.a_tilde.transpose() * &sigma_inv_a;
    let x = DMatrix::identity(d, d) - pop.gamma * &sigma_inv_pi;
    let eye = DMatrix::identity(d, d);

    let tl = &eye - alpha * &gram;
    let tr = -(alpha * pop.gamma / varkappa) * pop.pi_cross.transpose();
    let bl = -(varkappa * alpha) * (&x * &gram);
    let br = &eye - beta * &pop.sigma_tilde - (alpha * pop.gamma) * (&x * pop.pi_cross.transpose());

    let mut psi = DMatrix::zeros(2 * d, 2 * d);
    psi.view_mut((0, 0), (d, d)).copy_from(&tl);
    psi.view_mut((0, d), (d, d)).copy_from(&tr);
    psi.view_mut((d, 0), (d, d)).copy_from(&bl);
    psi.view_mut((d, d), (d, d)).copy_from(&br);
    Ok(psi)
}

fn check_certificate_inputs(alpha: f64, beta: f64, varkappa: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParameter(
            "stepsizes must be finite and nonnegative".into(),
        ));
    }
    if !(varkappa > 0.0 && varkappa < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "varkappa must lie in (0, 1), got {varkappa}"
        )));
    }
    Ok(())
}

/// Contraction diagnostics for the population two-timescale map.
#[derive(Debug, Clone, Copy)]
pub struct ContractionReport {
    /// Spectral norm of the map.
    pub norm: f64,
    /// Certified rate `1 - alpha lambda1 / 2`.
    pub bound: f64,
    /// Whether the stepsize conditions hold with a factor-10 safety margin in
    /// place of the unspecified absolute constants.
    pub conditions_met: bool,
}

/// Computes the spectral norm of the population map together with the
/// certified contraction rate. `conditions_met` is diagnostic: the asymptotic
/// stepsize conditions are checked with factor-10 margins standing in for the
/// unspecified constants, plus `alpha lambda1 < 2` and strictly positive
/// stepsizes.
pub fn psi_contraction_certificate(
    pop: &OffPolicyPopulation,
    alpha: f64,
    beta: f64,
    varkappa: f64,
) -> Result<ContractionReport> {
    let psi = psi_matrix(pop, alpha, beta, varkappa)?;
    let norm = spectral_norm(&psi);
    let c = pop.constants.as_ref().ok_or_else(|| {
        Error::SingularSystem("spectral constants unavailable (singular covariance)".into())
    })?;
    let (l1, l2, ls, rho, g) = (c.lambda1, c.lambda2, c.lambda_sigma, pop.rho_max, pop.gamma);
    let bound = 1.0 - 0.5 * alpha * l1;
    let margin = 10.0;
    let conditions_met = alpha > 0.0
        && beta > 0.0
        && beta >= margin * ls * rho * alpha
        && varkappa * beta >= margin * alpha
        && margin * alpha * g * (rho + g * ls * rho * rho) <= beta * l2
        && margin
            * (alpha * g * rho / varkappa
                + varkappa * alpha * (1.0 + g * ls * rho) * ls * (2.0 * rho) * (2.0 * rho))
            <= (alpha * l1 * beta * l2).sqrt()
        && alpha * l1 < 2.0;
    Ok(ContractionReport {
        norm,
        bound,
        conditions_met,
    })
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}
