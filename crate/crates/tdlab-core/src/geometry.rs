//! The stationary weighted geometry: mu, D_mu, the feature covariance Sigma,
//! and the norms induced by them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{stationary_distribution, InducedMrp};

/// Stationary distribution of a chain together with the feature covariance
/// `Sigma = Phi' D_mu Phi` and its spectrum.
#[derive(Debug, Clone)]
pub struct StationaryGeometry {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
    kappa: f64,
}

/// Computes mu for the chain and assembles the weighted feature covariance.
///
/// Fails when the chain has no unique stationary distribution or when the
/// features are degenerate under mu (Sigma not positive definite).
pub fn build_geometry(mrp: &InducedMrp, features: &FeatureMap) -> Result<StationaryGeometry> {
    if features.n_states() != mrp.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "features cover {} states, chain has {}",
            features.n_states(),
            mrp.n_states()
        )));
    }
    let mu = stationary_distribution(mrp.p())?;
    StationaryGeometry::from_weights(mu, features)
}

impl StationaryGeometry {
    /// Builds the geometry from an explicit state distribution.
    pub fn from_weights(mu: DVector<f64>, features: &FeatureMap) -> Result<Self> {
        let sigma = weighted_feature_covariance(&mu, features);
        let eigen = sigma.symmetric_eigenvalues();
        let lambda_min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda_max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lambda_min <= 1e-12 * lambda_max.max(1.0) {
            return Err(Error::DegenerateFeatures(format!(
                "feature covariance is not positive definite under mu \
                 (smallest eigenvalue {lambda_min:.3e})"
            )));
        }
        if features.is_norm_validated() && lambda_max > 1.0 + 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "||Sigma|| = {lambda_max} exceeds 1 despite unit-norm features"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            lambda_min,
            lambda_max,
            kappa: lambda_max / lambda_min,
        })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Condition number of Sigma.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `sqrt(v' Sigma v)`; the coefficient-space norm matching the
    /// mu-weighted value-space norm.
    pub fn sigma_norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.sigma * v)).max(0.0).sqrt()
    }

    /// mu-weighted norm of a value-space vector: `sqrt(sum_s mu(s) v(s)^2)`.
    pub fn weighted_norm(&self, values: &DVector<f64>) -> f64 {
        values
            .iter()
            .zip(self.mu.iter())
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }
}

/// `Phi' diag(mu) Phi`, symmetrized against roundoff.
pub fn weighted_feature_covariance(mu: &DVector<f64>, features: &FeatureMap) -> DMatrix<f64> {
    let d = features.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for s in 0..features.n_states() {
        let w = mu[s];
        if w == 0.0 {
            continue;
        }
        let phi = features.state_features(s);
        sigma.ger(w, phi, phi, 1.0);
    }
    0.5 * (&sigma + sigma.transpose())
}
