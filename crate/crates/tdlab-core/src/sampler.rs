//! Seeded i.i.d. sample generation for both settings, plus assembly of the
//! per-sample matrices and vectors the learners consume.
//!
//! Addressing: one master seed, one counter-based stream per trial, and a
//! fixed budget of 8 RNG words per step. Every draw seeks to
//! `word_pos = step * 8` first, so a sample depends only on
//! `(seed, trial, step)` — never on what was drawn before it.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::{InducedMrp, Policy, TabularMdp};

/// RNG words reserved per step. Off-policy draws use three uniforms
/// (6 words); the rest of the budget is headroom.
const WORDS_PER_STEP: u128 = 8;

/// One i.i.d. observation. `a` is zero and `rho` is one in on-policy mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTuple {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    pub rho: f64,
}

/// A per-trial random stream with random access by step index.
#[derive(Debug, Clone)]
pub struct SampleStream {
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(seed: u64, trial: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        Self { rng }
    }

    fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF draw from a probability row.
    fn categorical<'a>(&mut self, probs: impl Iterator<Item = &'a f64>) -> usize {
        let u = self.uniform();
        let mut cumulative = 0.0;
        let mut last = 0;
        for (i, p) in probs.enumerate() {
            if *p <= 0.0 {
                continue;
            }
            cumulative += p;
            last = i;
            if u < cumulative {
                return i;
            }
        }
        // the row sums to 1 only up to rounding; attribute the sliver to the
        // last state with mass
        last
    }

    /// On-policy draw at `step`: `s ~ mu`, `s' ~ P(.|s)`, reward `r(s)`.
    pub fn draw_onpolicy(&mut self, step: u64, mrp: &InducedMrp, mu: &DVector<f64>) -> SampleTuple {
        self.seek(step);
        let s = self.categorical(mu.iter());
        let s_next = self.categorical(mrp.p().row(s).iter());
        SampleTuple {
            s,
            a: 0,
            s_next,
            r: mrp.r()[s],
            rho: 1.0,
        }
    }

    /// Off-policy draw at `step`: `s ~ mu_b`, `a ~ pi_b(.|s)`,
    /// `s' ~ P(.|s,a)`, with the importance ratio attached.
    pub fn draw_offpolicy(
        &mut self,
        step: u64,
        mdp: &TabularMdp,
        target: &Policy,
        behavior: &Policy,
        mu_b: &DVector<f64>,
    ) -> Result<SampleTuple> {
        self.seek(step);
        let s = self.categorical(mu_b.iter());
        let a = self.categorical(behavior.matrix().row(s).iter());
        let s_next = self.categorical(mdp.kernel_row(s, a).iter());
        let target_prob = target.prob(s, a);
        let behavior_prob = behavior.prob(s, a);
        if behavior_prob <= 0.0 && target_prob > 0.0 {
            return Err(Error::CoverageViolation(format!(
                "sampled pair ({s}, {a}) has zero behavior probability"
            )));
        }
        let rho = if behavior_prob > 0.0 {
            target_prob / behavior_prob
        } else {
            0.0
        };
        Ok(SampleTuple {
            s,
            a,
            s_next,
            r: mdp.reward(s, a),
            rho,
        })
    }
}

/// Which of the per-sample terms to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermsMode {
    OnPolicy,
    OffPolicy,
}

/// Rank-one statistics built from a single sample.
#[derive(Debug, Clone)]
pub struct EmpiricalTerms {
    /// `phi(s)(phi(s) - gamma phi(s'))'`, importance-weighted off-policy.
    pub a_t: DMatrix<f64>,
    /// `phi(s) r`, importance-weighted off-policy.
    pub b_t: DVector<f64>,
    /// `rho phi(s) phi(s')'`; off-policy only.
    pub pi_t: Option<DMatrix<f64>>,
    /// `phi(s) phi(s)'`, never importance-weighted; off-policy only.
    pub sigma_t: Option<DMatrix<f64>>,
}

pub fn empirical_terms(
    sample: &SampleTuple,
    features: &FeatureMap,
    gamma: f64,
    mode: TermsMode,
) -> EmpiricalTerms {
    let phi_s = features.state_features(sample.s);
    let phi_next = features.state_features(sample.s_next);
    let weight = match mode {
        TermsMode::OnPolicy => 1.0,
        TermsMode::OffPolicy => sample.rho,
    };
    let a_t = weight * phi_s * (phi_s - gamma * phi_next).transpose();
    let b_t = weight * sample.r * phi_s;
    match mode {
        TermsMode::OnPolicy => EmpiricalTerms {
            a_t,
            b_t,
            pi_t: None,
            sigma_t: None,
        },
        TermsMode::OffPolicy => EmpiricalTerms {
            a_t,
            b_t,
            pi_t: Some(sample.rho * phi_s * phi_next.transpose()),
            sigma_t: Some(phi_s * phi_s.transpose()),
        },
    }
}
