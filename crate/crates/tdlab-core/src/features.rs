//! Linear value features over a finite state space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest singular value a feature matrix must clear to count as
/// linearly independent.
pub const FEATURE_RANK_TOL: f64 = 1e-10;
/// Slack on the unit bound for per-state feature norms.
pub const FEATURE_NORM_TOL: f64 = 1e-12;

/// An `n_states x d` feature matrix; row `s` is the feature vector of state `s`.
///
/// The standard constructor enforces the bounded-feature regime the learning
/// guarantees assume: independent columns, `d <= n_states`, and per-state
/// Euclidean norms at most one.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    rows: Vec<DVector<f64>>,
    norm_validated: bool,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (n, d) = phi.shape();
        Self::check_shape(&phi)?;
        if d > n {
            return Err(Error::DegenerateFeatures(format!(
                "{d} features over {n} states cannot be linearly independent"
            )));
        }
        let sv = phi.clone().svd(false, false).singular_values;
        let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest <= FEATURE_RANK_TOL {
            return Err(Error::DegenerateFeatures(format!(
                "columns are linearly dependent (smallest singular value {smallest:.3e})"
            )));
        }
        let max_row_norm = (0..n).map(|s| phi.row(s).norm()).fold(0.0, f64::max);
        if max_row_norm > 1.0 + FEATURE_NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "feature norm {max_row_norm} exceeds the unit bound"
            )));
        }
        Ok(Self::assemble(phi, true))
    }

    /// Explicit bypass of the norm and independence checks, for constructions
    /// that deliberately violate the bounded-feature regime (the off-policy
    /// divergence counterexample uses rows of norm sqrt(5) and more features
    /// than states). Downstream spectral guarantees do not apply to such maps,
    /// and [`FeatureMap::is_norm_validated`] reports `false`.
    pub fn new_unvalidated(phi: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(&phi)?;
        Ok(Self::assemble(phi, false))
    }

    fn check_shape(phi: &DMatrix<f64>) -> Result<()> {
        let (n, d) = phi.shape();
        if n == 0 || d == 0 {
            return Err(Error::DimensionMismatch(
                "feature matrix must be non-empty".into(),
            ));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature matrix has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    fn assemble(phi: DMatrix<f64>, norm_validated: bool) -> Self {
        let rows = (0..phi.nrows())
            .map(|s| phi.row(s).transpose())
            .collect();
        Self {
            phi,
            rows,
            norm_validated,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn state_features(&self, s: usize) -> &DVector<f64> {
        &self.rows[s]
    }

    /// Whether the bounded-norm/independence checks ran at construction.
    pub fn is_norm_validated(&self) -> bool {
        self.norm_validated
    }
}
