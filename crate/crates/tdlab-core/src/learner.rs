//! Iterate machines — single-timescale TD with iterate averaging (fed either
//! plain or importance-weighted terms) and the two-timescale corrected
//! learner — plus derivation of constant stepsizes from instance constants.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::StationaryGeometry;
use crate::population::OffPolicyPopulation;
use crate::sampler::EmpiricalTerms;

/// Iterates whose norm passes this threshold are reported as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// True when an iterate has left the numerically meaningful range.
pub fn is_divergent(v: &DVector<f64>) -> bool {
    v.iter().any(|x| !x.is_finite()) || v.norm() > DIVERGENCE_NORM
}

/// Single-timescale state: current iterate, running sum of post-update
/// iterates for averaging, and the step count. The same machine serves the
/// off-policy baseline — the importance weighting lives in the terms.
#[derive(Debug, Clone)]
pub struct TdState {
    theta: DVector<f64>,
    theta_sum: DVector<f64>,
    t: u64,
    eta: f64,
}

impl TdState {
    pub fn new(theta0: DVector<f64>, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stepsize must be finite and nonnegative, got {eta}"
            )));
        }
        let theta_sum = DVector::zeros(theta0.len());
        Ok(Self {
            theta: theta0,
            theta_sum,
            t: 0,
            eta,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `theta <- theta - eta (A_t theta - b_t)`; the post-update iterate joins
    /// the running average.
    pub fn step(&mut self, terms: &EmpiricalTerms) -> Result<()> {
        if terms.a_t.ncols() != self.theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "terms are {}-dimensional, iterate is {}-dimensional",
                terms.a_t.ncols(),
                self.theta.len()
            )));
        }
        let direction = &terms.a_t * &self.theta - &terms.b_t;
        self.theta -= self.eta * direction;
        self.theta_sum += &self.theta;
        self.t += 1;
        Ok(())
    }

    /// Mean of the post-update iterates seen so far.
    pub fn averaged(&self) -> Result<DVector<f64>> {
        if self.t == 0 {
            return Err(Error::InvalidParameter(
                "no iterates to average yet".into(),
            ));
        }
        Ok(&self.theta_sum / self.t as f64)
    }
}

/// Two-timescale state: main iterate, correction iterate, and both stepsizes.
#[derive(Debug, Clone)]
pub struct TdcState {
    theta: DVector<f64>,
    w: DVector<f64>,
    t: u64,
    alpha: f64,
    beta: f64,
}

impl TdcState {
    pub fn new(theta0: DVector<f64>, w0: DVector<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if theta0.len() != w0.len() {
            return Err(Error::DimensionMismatch(format!(
                "main iterate has dimension {}, correction has {}",
                theta0.len(),
                w0.len()
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stepsizes must be finite and nonnegative, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self {
            theta: theta0,
            w: w0,
            t: 0,
            alpha,
            beta,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Simultaneous update of both iterates from the pre-step pair:
    /// `theta <- theta - alpha (A_t theta - b_t + gamma Pi_t' w)` and
    /// `w <- w - beta (A_t theta - b_t + Sigma_t w)`.
    pub fn step(&mut self, terms: &EmpiricalTerms, gamma: f64) -> Result<()> {
        let (pi_t, sigma_t) = match (&terms.pi_t, &terms.sigma_t) {
            (Some(pi), Some(sigma)) => (pi, sigma),
            _ => {
                return Err(Error::InvalidParameter(
                    "the two-timescale update needs the off-policy terms".into(),
                ))
            }
        };
        if terms.a_t.ncols() != self.theta.len() {
            return Err(Error::DimensionMismatch(format!(
                "terms are {}-dimensional, iterate is {}-dimensional",
                terms.a_t.ncols(),
                self.theta.len()
            )));
        }
        let residual = &terms.a_t * &self.theta - &terms.b_t;
        let theta_next = &self.theta - self.alpha * (&residual + gamma * (pi_t.transpose() * &self.w));
        let w_next = &self.w - self.beta * (&residual + sigma_t * &self.w);
        self.theta = theta_next;
        self.w = w_next;
        self.t += 1;
        Ok(())
    }
}

/// How to obtain the constant stepsizes for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum StepsizePlan {
    FixedTd {
        eta: f64,
    },
    FixedTdc {
        alpha: f64,
        beta: f64,
    },
    /// Single-timescale stepsize derived from the instance constants:
    /// `eta = c0 (1 - gamma) / (kappa log(T d / delta))`.
    AnalyticTd {
        c0: f64,
        delta: f64,
    },
    /// Two-timescale stepsizes derived from the instance constants:
    /// `alpha = log ||theta*||_Sigma / (T lambda1)` and
    /// `beta = 128 rho_max^2 (1 + lambda_Sigma rho_max) / (lambda1 lambda2) alpha`.
    AnalyticTdc {
        delta: f64,
        /// Stand-in for `||theta*||` when the fixed point is not available.
        theta_norm_estimate: Option<f64>,
    },
}

/// Instance constants the analytic modes draw on.
pub enum PlanContext<'a> {
    OnPolicy {
        geometry: &'a StationaryGeometry,
        theta_star: &'a DVector<f64>,
        gamma: f64,
    },
    OffPolicy {
        population: &'a OffPolicyPopulation,
    },
}

/// Resolved stepsizes; `varkappa` is the coordinate-transform constant used
/// by the two-timescale contraction certificate, when computable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlannedStepsizes {
    Td { eta: f64 },
    Tdc { alpha: f64, beta: f64, varkappa: Option<f64> },
}

/// Planned stepsizes plus diagnostic flags: whether the horizon satisfies the
/// burn-in inequality, and whether the stepsize upper bound holds. `None`
/// when the plan has no such condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeOutcome {
    pub sizes: PlannedStepsizes,
    pub burn_in_satisfied: Option<bool>,
    pub stepsize_bound_satisfied: Option<bool>,
}

/// `varkappa = 8 rho_max sqrt(alpha / (lambda1 beta lambda2))`, the transform
/// constant accompanying the two-timescale analysis.
fn transform_constant(alpha: f64, beta: f64, pop: &OffPolicyPopulation) -> Option<f64> {
    let c = pop.constants.as_ref()?;
    if alpha <= 0.0 || beta <= 0.0 || c.lambda1 <= 0.0 {
        return None;
    }
    Some(8.0 * pop.rho_max * (alpha / (c.lambda1 * beta * c.lambda2)).sqrt())
}

pub fn plan_stepsizes(
    plan: &StepsizePlan,
    ctx: &PlanContext<'_>,
    t_max: u64,
) -> Result<StepsizeOutcome> {
    if t_max == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    match (plan, ctx) {
        (StepsizePlan::FixedTd { eta }, _) => {
            // zero is allowed: a frozen iterate is a useful diagnostic run
            if !(eta.is_finite() && *eta >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "fixed stepsize must be nonnegative, got {eta}"
                )));
            }
            Ok(StepsizeOutcome {
                sizes: PlannedStepsizes::Td { eta: *eta },
                burn_in_satisfied: None,
                stepsize_bound_satisfied: None,
            })
        }
        (StepsizePlan::FixedTdc { alpha, beta }, ctx) => {
            if !(alpha.is_finite() && *alpha >= 0.0 && beta.is_finite() && *beta >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "fixed stepsizes must be nonnegative, got alpha = {alpha}, beta = {beta}"
                )));
            }
            let varkappa = match ctx {
                PlanContext::OffPolicy { population } => {
                    transform_constant(*alpha, *beta, population)
                }
                PlanContext::OnPolicy { .. } => None,
            };
            Ok(StepsizeOutcome {
                sizes: PlannedStepsizes::Tdc {
                    alpha: *alpha,
                    beta: *beta,
                    varkappa,
                },
                burn_in_satisfied: None,
                stepsize_bound_satisfied: None,
            })
        }
        (
            StepsizePlan::AnalyticTd { c0, delta },
            PlanContext::OnPolicy {
                geometry,
                theta_star,
                gamma,
            },
        ) => {
            if !(*c0 > 0.0 && *delta > 0.0 && *delta < 1.0) {
                return Err(Error::InvalidParameter(
                    "analytic plan needs c0 > 0 and delta in (0, 1)".into(),
                ));
            }
            let d = theta_star.len() as f64;
            let t = t_max as f64;
            let log_term = (t * d / delta).ln();
            if log_term <= 0.0 {
                return Err(Error::InvalidParameter(
                    "log(T d / delta) must be positive".into(),
                ));
            }
            let eta = c0 * (1.0 - gamma) / (geometry.kappa() * log_term);
            let sigma_norm_star = geometry.sigma_norm(theta_star);
            let l2_star = theta_star.norm();
            let burn_in_rhs = geometry.kappa() * (sigma_norm_star + 1.0).powi(2)
                * (geometry.kappa() * d * t * (l2_star + 1.0) / ((1.0 - gamma) * delta))
                    .ln()
                    .powi(2)
                / (eta * (1.0 - gamma) * geometry.lambda_min());
            // the planned eta sits exactly on the boundary; leave rounding room
            let bound_lhs = eta * geometry.kappa() * log_term / (1.0 - gamma);
            Ok(StepsizeOutcome {
                sizes: PlannedStepsizes::Td { eta },
                burn_in_satisfied: Some(t >= burn_in_rhs),
                stepsize_bound_satisfied: Some(bound_lhs <= *c0 * (1.0 + 1e-12)),
            })
        }
        (
            StepsizePlan::AnalyticTdc {
                delta,
                theta_norm_estimate,
            },
            PlanContext::OffPolicy { population },
        ) => {
            if !(*delta > 0.0 && *delta < 1.0) {
                return Err(Error::InvalidParameter(
                    "analytic plan needs delta in (0, 1)".into(),
                ));
            }
            let c = population.constants.as_ref().ok_or_else(|| {
                Error::SingularSystem(
                    "spectral constants unavailable (singular covariance); \
                     use fixed stepsizes"
                        .into(),
                )
            })?;
            let sigma_norm_star = match (population.theta_star(), theta_norm_estimate) {
                (Some(theta), _) => {
                    let st = &population.sigma_tilde * theta;
                    theta.dot(&st).max(0.0).sqrt()
                }
                (None, Some(estimate)) if *estimate > 0.0 => *estimate,
                _ => {
                    return Err(Error::InvalidParameter(
                        "fixed point unavailable; supply a norm estimate".into(),
                    ))
                }
            };
            let t = t_max as f64;
            let log_norm = sigma_norm_star.ln();
            if log_norm <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "analytic stepsize is nonpositive: log of the fixed-point norm \
                     {sigma_norm_star:.6e} is {log_norm:.3e}; use fixed stepsizes"
                )));
            }
            if c.lambda1 <= 0.0 {
                return Err(Error::SingularSystem(
                    "lambda1 vanishes; the analytic plan is undefined".into(),
                ));
            }
            let alpha = log_norm / (t * c.lambda1);
            let beta = 128.0 * population.rho_max.powi(2)
                * (1.0 + c.lambda_sigma * population.rho_max)
                / (c.lambda1 * c.lambda2)
                * alpha;
            let varkappa = transform_constant(alpha, beta, population);
            let d = population.feature_dim() as f64;
            let log_2dt = (2.0 * d * t / delta).ln();
            let alpha_bound =
                1.0 / (c.lambda1 * c.lambda_sigma.powi(2) * (c.kappa_tilde * c.lambda2) * log_2dt);
            let l2_star = population
                .theta_star()
                .map(|theta| theta.norm())
                .unwrap_or(sigma_norm_star);
            // the burn-in inequality is echoed verbatim even though its
            // left factor can be negative for small fixed points
            let burn_in_rhs = (l2_star.ln() / (alpha * c.lambda1))
                * (c.kappa_tilde.sqrt())
                    .max(sigma_norm_star * (alpha * c.lambda1 / log_2dt).sqrt())
                    .ln();
            Ok(StepsizeOutcome {
                sizes: PlannedStepsizes::Tdc {
                    alpha,
                    beta,
                    varkappa,
                },
                burn_in_satisfied: Some(t >= burn_in_rhs),
                stepsize_bound_satisfied: Some(alpha < alpha_bound),
            })
        }
        (StepsizePlan::AnalyticTd { .. }, PlanContext::OffPolicy { .. }) => {
            Err(Error::InvalidParameter(
                "the single-timescale analytic plan needs on-policy constants".into(),
            ))
        }
        (StepsizePlan::AnalyticTdc { .. }, PlanContext::OnPolicy { .. }) => {
            Err(Error::InvalidParameter(
                "the two-timescale analytic plan needs off-policy constants".into(),
            ))
        }
    }
}
