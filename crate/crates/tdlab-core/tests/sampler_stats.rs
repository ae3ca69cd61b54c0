//! Statistical validation of the sample streams: per-sample term means match
//! their population counterparts within Monte Carlo error, sampled
//! frequencies match the distributions they are drawn from, and streams
//! reproduce bit-for-bit.

use nalgebra::{DMatrix, DVector};
use tdlab_core::synth::{random_instance, rng_for, RandomInstance};
use tdlab_core::{
    build_baird, build_geometry, empirical_terms, off_policy_population, stationary_distribution,
    SampleStream, TermsMode,
};

const DRAWS: u64 = 1_000_000;

/// Flat running mean / variance accumulator (Welford).
struct MomentTracker {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentTracker {
    fn new(len: usize) -> Self {
        MomentTracker {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push<I: Iterator<Item = f64>>(&mut self, values: I) {
        self.n += 1.0;
        for (i, x) in values.enumerate() {
            let delta = x - self.mean[i];
            self.mean[i] += delta / self.n;
            self.m2[i] += delta * (x - self.mean[i]);
        }
    }

    /// Each component of the running mean must sit within three standard
    /// errors of its target (plus a rounding floor for exact components).
    fn assert_matches<I: Iterator<Item = f64>>(&self, label: &str, target: I) {
        for (i, t) in target.enumerate() {
            let se = (self.m2[i] / (self.n - 1.0) / self.n).sqrt();
            let gap = (self.mean[i] - t).abs();
            assert!(
                gap <= 3.0 * se + 1e-12,
                "{label}[{i}]: mean {:.8e} vs population {t:.8e} (|gap| {gap:.3e}, se {se:.3e})",
                self.mean[i]
            );
        }
    }
}

struct NamedInstance {
    label: &'static str,
    seed: u64,
    inst: RandomInstance,
}

fn instances() -> Vec<NamedInstance> {
    let mut out = Vec::new();
    for (label, seed, n, na, d, gamma) in [
        ("small", 6001u64, 5usize, 2usize, 3usize, 0.5),
        ("medium", 6002, 8, 3, 4, 0.9),
        ("single-action", 6003, 3, 1, 2, 0.2),
        ("wide", 6004, 12, 2, 5, 0.8),
    ] {
        let mut rng = rng_for(seed);
        out.push(NamedInstance {
            label,
            seed,
            inst: random_instance(&mut rng, n, na, d, gamma),
        });
    }
    let baird = build_baird();
    out.push(NamedInstance {
        label: "baird",
        seed: 6005,
        inst: RandomInstance {
            mdp: baird.mdp,
            target: baird.target,
            behavior: baird.behavior,
            features: baird.features,
        },
    });
    out
}

#[test]
fn on_policy_term_means_match_the_population_system() {
    for case in instances() {
        let NamedInstance { label, seed, inst } = case;
        // the natural sampled chain: the behavior policy's
        let chain = inst.mdp.induce(&inst.behavior).unwrap();
        let mu = stationary_distribution(chain.p()).unwrap();
        let d = inst.features.dim();

        // assemble the expected system directly; unlike the population
        // solver this stays valid for rank-deficient features
        let mut a_pop = DMatrix::zeros(d, d);
        let mut b_pop = DVector::zeros(d);
        for s in 0..inst.mdp.n_states() {
            let phi_s = inst.features.state_features(s);
            let mut backed = phi_s.clone();
            for (s_next, p) in chain.p().row(s).iter().enumerate() {
                backed -= chain.gamma() * *p * inst.features.state_features(s_next);
            }
            a_pop += mu[s] * phi_s * backed.transpose();
            b_pop += mu[s] * chain.r()[s] * phi_s;
        }

        let mut stream = SampleStream::new(seed, 0);
        let mut a_moments = MomentTracker::new(d * d);
        let mut b_moments = MomentTracker::new(d);
        for step in 0..DRAWS {
            let sample = stream.draw_onpolicy(step, &chain, &mu);
            let terms = empirical_terms(&sample, &inst.features, chain.gamma(), TermsMode::OnPolicy);
            a_moments.push(terms.a_t.iter().cloned());
            b_moments.push(terms.b_t.iter().cloned());
        }
        a_moments.assert_matches(&format!("{label}/A"), a_pop.iter().cloned());
        b_moments.assert_matches(&format!("{label}/b"), b_pop.iter().cloned());
    }
}

#[test]
fn off_policy_term_means_match_the_population_system() {
    for case in instances() {
        let NamedInstance { label, seed, inst } = case;
        let pop =
            off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features).unwrap();
        let d = inst.features.dim();

        let mut stream = SampleStream::new(seed, 1);
        let mut a_moments = MomentTracker::new(d * d);
        let mut b_moments = MomentTracker::new(d);
        let mut pi_moments = MomentTracker::new(d * d);
        let mut sigma_moments = MomentTracker::new(d * d);
        for step in 0..DRAWS {
            let sample = stream
                .draw_offpolicy(step, &inst.mdp, &inst.target, &inst.behavior, &pop.mu_b)
                .unwrap();
            let terms =
                empirical_terms(&sample, &inst.features, inst.mdp.gamma(), TermsMode::OffPolicy);
            a_moments.push(terms.a_t.iter().cloned());
            b_moments.push(terms.b_t.iter().cloned());
            pi_moments.push(terms.pi_t.as_ref().unwrap().iter().cloned());
            sigma_moments.push(terms.sigma_t.as_ref().unwrap().iter().cloned());
        }
        a_moments.assert_matches(&format!("{label}/A~"), pop.a_tilde.iter().cloned());
        b_moments.assert_matches(&format!("{label}/b~"), pop.b_tilde.iter().cloned());
        pi_moments.assert_matches(&format!("{label}/Pi"), pop.pi_cross.iter().cloned());
        sigma_moments.assert_matches(&format!("{label}/Sigma~"), pop.sigma_tilde.iter().cloned());
    }
}

#[test]
fn sampled_state_frequencies_match_the_stationary_distribution() {
    let case = &instances()[1];
    let chain = case.inst.mdp.induce(&case.inst.behavior).unwrap();
    let geometry = build_geometry(&chain, &case.inst.features).unwrap();
    let n = case.inst.mdp.n_states();

    let mut stream = SampleStream::new(777, 0);
    let mut counts = vec![0u64; n];
    for step in 0..DRAWS {
        counts[stream.draw_onpolicy(step, &chain, geometry.mu()).s] += 1;
    }
    for s in 0..n {
        let p = geometry.mu()[s];
        let freq = counts[s] as f64 / DRAWS as f64;
        let se = (p * (1.0 - p) / DRAWS as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "state {s}: frequency {freq:.6} vs stationary mass {p:.6}"
        );
    }
}

#[test]
fn sampled_joint_frequencies_match_the_behavior_decomposition() {
    let case = &instances()[0];
    let inst = &case.inst;
    let pop = off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features).unwrap();
    let (n, na) = (inst.mdp.n_states(), inst.mdp.n_actions());

    let mut stream = SampleStream::new(800, 0);
    let mut counts = vec![0u64; n * na * n];
    let draws = DRAWS;
    for step in 0..draws {
        let t = stream
            .draw_offpolicy(step, &inst.mdp, &inst.target, &inst.behavior, &pop.mu_b)
            .unwrap();
        counts[(t.s * na + t.a) * n + t.s_next] += 1;
    }
    for s in 0..n {
        for a in 0..na {
            for s_next in 0..n {
                let p = pop.mu_b[s] * inst.behavior.prob(s, a) * inst.mdp.kernel_row(s, a)[s_next];
                let freq = counts[(s * na + a) * n + s_next] as f64 / draws as f64;
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                assert!(
                    (freq - p).abs() <= 3.0 * se + 1e-12,
                    "cell ({s},{a},{s_next}): frequency {freq:.6} vs product {p:.6}"
                );
            }
        }
    }
}

#[test]
fn counterexample_importance_ratios_are_two_valued_with_unit_mean() {
    let baird = build_baird();
    let pop = off_policy_population(&baird.mdp, &baird.target, &baird.behavior, &baird.features)
        .unwrap();
    assert_eq!(pop.rho_max, 7.0);

    let draws = 100_000u64;
    let mut stream = SampleStream::new(779, 0);
    let mut hits = 0u64;
    let mut rho_moments = MomentTracker::new(1);
    for step in 0..draws {
        let t = stream
            .draw_offpolicy(step, &baird.mdp, &baird.target, &baird.behavior, &pop.mu_b)
            .unwrap();
        assert!(t.rho == 0.0 || t.rho == 7.0, "unexpected ratio {}", t.rho);
        if t.rho == 7.0 {
            hits += 1;
        }
        rho_moments.push(std::iter::once(t.rho));
    }
    let freq = hits as f64 / draws as f64;
    let p = 1.0 / 7.0;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    assert!(
        (freq - p).abs() <= 3.0 * se,
        "solid-action frequency {freq:.5} vs {p:.5}"
    );
    rho_moments.assert_matches("baird/rho", std::iter::once(1.0));
}

#[test]
fn streams_reproduce_bitwise_and_diverge_across_trials() {
    let case = &instances()[3];
    let inst = &case.inst;
    let pop = off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features).unwrap();

    let mut first = SampleStream::new(42, 3);
    let forward: Vec<_> = (0..64)
        .map(|step| {
            first
                .draw_offpolicy(step, &inst.mdp, &inst.target, &inst.behavior, &pop.mu_b)
                .unwrap()
        })
        .collect();

    // replay out of order: addressing is positional, not sequential
    let mut second = SampleStream::new(42, 3);
    for step in (0..64).rev() {
        let replayed = second
            .draw_offpolicy(step, &inst.mdp, &inst.target, &inst.behavior, &pop.mu_b)
            .unwrap();
        assert_eq!(replayed, forward[step as usize], "step {step} failed to replay");
    }

    let mut other_trial = SampleStream::new(42, 4);
    let differs = (0..64).any(|step| {
        other_trial
            .draw_offpolicy(step, &inst.mdp, &inst.target, &inst.behavior, &pop.mu_b)
            .unwrap()
            != forward[step as usize]
    });
    assert!(differs, "distinct trials produced identical prefixes");
}
