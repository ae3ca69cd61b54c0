//! Seeded multi-trial experiment runner: instance resolution, ground-truth
//! plumbing, parallel trials with per-trial RNG streams, checkpoint summaries
//! with empirical confidence bands, CSV emission, and log-log rate fitting.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{AlgorithmKind, CheckpointSpec, ExperimentConfig, InstanceConfig, Theta0Spec};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::build_geometry;
use crate::instances::{
    build_baird, build_minimax, BairdInstance, ExternalInstanceFile, MinimaxInstance, MinimaxSpec,
};
use crate::learner::{
    is_divergent, plan_stepsizes, PlanContext, PlannedStepsizes, StepsizeOutcome, StepsizePlan,
    TdState, TdcState,
};
use crate::mdp::{InducedMrp, Policy, TabularMdp};
use crate::population::{off_policy_population, on_policy_population, OffPolicyFixedPoint};
use crate::sampler::{empirical_terms, SampleStream, TermsMode};

/// Tolerance for closed-form ground truth against the independent solver.
const GROUND_TRUTH_TOL: f64 = 1e-9;
/// Tolerance for closed-form stationary distributions against the solver.
const GROUND_TRUTH_MU_TOL: f64 = 1e-10;

/// One trial's errors at every checkpoint, with its divergence step if any.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial: u64,
    /// One entry per checkpoint; `f64::INFINITY` from the divergence step on.
    pub errors: Vec<f64>,
    pub diverged_at: Option<u64>,
}

/// Cross-trial statistics at one checkpoint, over finite trials only.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub step: u64,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    /// Number of trials already diverged at this checkpoint.
    pub diverged: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub checkpoints: Vec<u64>,
    pub traces: Vec<TrialTrace>,
    pub summary: Vec<SummaryRow>,
    /// Resolved configuration and derived constants, as flat text.
    pub manifest: String,
}

/// Least-squares line through `(log t, log mean-error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// How a run scores an iterate.
enum ErrorMetric {
    /// `sqrt((v - reference)' weight (v - reference))`.
    CoefficientNorm {
        weight: DMatrix<f64>,
        reference: DVector<f64>,
    },
    /// `sqrt(sum_s mu_s (phi(s)·v - reference_s)^2)`; used when coefficients
    /// are unidentified but values are not.
    ValueNorm {
        phi: DMatrix<f64>,
        mu: DVector<f64>,
        reference: DVector<f64>,
    },
}

impl ErrorMetric {
    fn evaluate(&self, v: &DVector<f64>) -> f64 {
        match self {
            ErrorMetric::CoefficientNorm { weight, reference } => {
                let diff = v - reference;
                diff.dot(&(weight * &diff)).max(0.0).sqrt()
            }
            ErrorMetric::ValueNorm { phi, mu, reference } => {
                let values = phi * v;
                values
                    .iter()
                    .zip(reference.iter())
                    .zip(mu.iter())
                    .map(|((x, y), w)| w * (x - y) * (x - y))
                    .sum::<f64>()
                    .max(0.0)
                    .sqrt()
            }
        }
    }

    fn label(&self) -> &'static str {
        match self {
            ErrorMetric::CoefficientNorm { .. } => "coefficient_sigma_norm",
            ErrorMetric::ValueNorm { .. } => "value_d_norm",
        }
    }
}

enum ResolvedInstance {
    Minimax(Box<MinimaxInstance>),
    Baird(Box<BairdInstance>),
    External {
        mdp: TabularMdp,
        target: Policy,
        behavior: Policy,
        features: FeatureMap,
    },
}

impl ResolvedInstance {
    fn mdp(&self) -> &TabularMdp {
        match self {
            ResolvedInstance::Minimax(i) => &i.mdp,
            ResolvedInstance::Baird(i) => &i.mdp,
            ResolvedInstance::External { mdp, .. } => mdp,
        }
    }

    fn target(&self) -> &Policy {
        match self {
            ResolvedInstance::Minimax(i) => &i.policy,
            ResolvedInstance::Baird(i) => &i.target,
            ResolvedInstance::External { target, .. } => target,
        }
    }

    fn behavior(&self) -> &Policy {
        match self {
            ResolvedInstance::Minimax(i) => &i.policy,
            ResolvedInstance::Baird(i) => &i.behavior,
            ResolvedInstance::External { behavior, .. } => behavior,
        }
    }

    fn features(&self) -> &FeatureMap {
        match self {
            ResolvedInstance::Minimax(i) => &i.features,
            ResolvedInstance::Baird(i) => &i.features,
            ResolvedInstance::External { features, .. } => features,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            ResolvedInstance::Minimax(_) => "minimax",
            ResolvedInstance::Baird(_) => "baird",
            ResolvedInstance::External { .. } => "file",
        }
    }
}

fn resolve_instance(config: &InstanceConfig) -> Result<ResolvedInstance> {
    match config {
        InstanceConfig::Minimax {
            n_states,
            feature_dim,
            gamma,
            epsilon,
            signs,
            epsilon_guard,
        } => {
            let spec = MinimaxSpec {
                n_states: *n_states,
                feature_dim: *feature_dim,
                gamma: *gamma,
                epsilon: *epsilon,
                signs: signs.clone(),
                enforce_epsilon_guard: *epsilon_guard,
            };
            Ok(ResolvedInstance::Minimax(Box::new(build_minimax(&spec)?)))
        }
        InstanceConfig::Baird => Ok(ResolvedInstance::Baird(Box::new(build_baird()))),
        InstanceConfig::External { path } => {
            let (mdp, target, behavior, features) = ExternalInstanceFile::load(path)?.into_parts()?;
            Ok(ResolvedInstance::External {
                mdp,
                target,
                behavior,
                features,
            })
        }
    }
}

/// Expands a checkpoint specification into a strictly increasing grid ending
/// at `steps`. The count form is log-spaced from `min(10, steps)` upward.
pub fn resolve_checkpoints(spec: &CheckpointSpec, steps: u64) -> Result<Vec<u64>> {
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    match spec {
        CheckpointSpec::Count(0) => Err(Error::Config("checkpoint count must be positive".into())),
        CheckpointSpec::Count(k) => {
            let lo = 10u64.min(steps);
            if *k == 1 || lo == steps {
                return Ok(vec![steps]);
            }
            let (ln_lo, ln_hi) = ((lo as f64).ln(), (steps as f64).ln());
            let mut grid: Vec<u64> = (0..*k)
                .map(|i| {
                    let f = i as f64 / (*k - 1) as f64;
                    (ln_lo + f * (ln_hi - ln_lo)).exp().round() as u64
                })
                .map(|t| t.clamp(1, steps))
                .collect();
            grid.push(steps);
            grid.sort_unstable();
            grid.dedup();
            Ok(grid)
        }
        CheckpointSpec::Explicit(list) => {
            if list.is_empty()
                || list[0] == 0
                || list.windows(2).any(|w| w[0] >= w[1])
                || *list.last().unwrap() != steps
            {
                return Err(Error::Config(
                    "explicit checkpoints must be strictly increasing, start at 1 or later, \
                     and end at the final step"
                        .into(),
                ));
            }
            Ok(list.clone())
        }
    }
}

/// Everything a single trial needs, shared read-only across workers.
struct TrialPlan<'a> {
    algorithm: AlgorithmKind,
    gamma: f64,
    seed: u64,
    steps: u64,
    checkpoints: &'a [u64],
    theta0: DVector<f64>,
    sizes: PlannedStepsizes,
    metric: &'a ErrorMetric,
    features: &'a FeatureMap,
    sampling: Sampling<'a>,
}

enum Sampling<'a> {
    OnPolicy {
        mrp: &'a InducedMrp,
        mu: &'a DVector<f64>,
    },
    OffPolicy {
        mdp: &'a TabularMdp,
        target: &'a Policy,
        behavior: &'a Policy,
        mu_b: &'a DVector<f64>,
    },
}

enum LearnerState {
    Td(TdState),
    Tdc(TdcState),
}

fn run_trial(plan: &TrialPlan<'_>, trial: u64) -> Result<TrialTrace> {
    let mut stream = SampleStream::new(plan.seed, trial);
    let dim = plan.features.dim();
    let mut state = match plan.algorithm {
        AlgorithmKind::Td | AlgorithmKind::AveragedTd | AlgorithmKind::OffPolicyTd => {
            let eta = match plan.sizes {
                PlannedStepsizes::Td { eta } => eta,
                _ => unreachable!("validated before trials start"),
            };
            LearnerState::Td(TdState::new(plan.theta0.clone(), eta)?)
        }
        AlgorithmKind::Tdc => {
            let (alpha, beta) = match plan.sizes {
                PlannedStepsizes::Tdc { alpha, beta, .. } => (alpha, beta),
                _ => unreachable!("validated before trials start"),
            };
            LearnerState::Tdc(TdcState::new(
                plan.theta0.clone(),
                DVector::zeros(dim),
                alpha,
                beta,
            )?)
        }
    };

    let mut errors = Vec::with_capacity(plan.checkpoints.len());
    let mut diverged_at: Option<u64> = None;
    let mut next_checkpoint = 0usize;

    for t in 1..=plan.steps {
        if diverged_at.is_none() {
            let (terms, mode) = match &plan.sampling {
                Sampling::OnPolicy { mrp, mu } => {
                    let sample = stream.draw_onpolicy(t - 1, mrp, mu);
                    (
                        empirical_terms(&sample, plan.features, plan.gamma, TermsMode::OnPolicy),
                        TermsMode::OnPolicy,
                    )
                }
                Sampling::OffPolicy {
                    mdp,
                    target,
                    behavior,
                    mu_b,
                } => {
                    let sample = stream.draw_offpolicy(t - 1, mdp, target, behavior, mu_b)?;
                    (
                        empirical_terms(&sample, plan.features, plan.gamma, TermsMode::OffPolicy),
                        TermsMode::OffPolicy,
                    )
                }
            };
            debug_assert!(
                mode == TermsMode::OffPolicy || !plan.algorithm.is_off_policy(),
                "off-policy learners must see off-policy terms"
            );
            match &mut state {
                LearnerState::Td(td) => td.step(&terms)?,
                LearnerState::Tdc(tdc) => tdc.step(&terms, plan.gamma)?,
            }
            let iterate = match &state {
                LearnerState::Td(td) => td.theta(),
                LearnerState::Tdc(tdc) => tdc.theta(),
            };
            if is_divergent(iterate) {
                diverged_at = Some(t);
            }
        }

        if next_checkpoint < plan.checkpoints.len() && plan.checkpoints[next_checkpoint] == t {
            next_checkpoint += 1;
            if diverged_at.is_some() {
                errors.push(f64::INFINITY);
                continue;
            }
            let scored = match (&state, plan.algorithm) {
                (LearnerState::Td(td), AlgorithmKind::Td) => td.theta().clone(),
                (LearnerState::Td(td), _) => td.averaged()?,
                (LearnerState::Tdc(tdc), _) => tdc.theta().clone(),
            };
            errors.push(plan.metric.evaluate(&scored));
        }
    }

    Ok(TrialTrace {
        trial,
        errors,
        diverged_at,
    })
}

/// Linear-interpolation percentile of pre-sorted values, `p` in `[0, 1]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn summarize(checkpoints: &[u64], traces: &[TrialTrace]) -> Vec<SummaryRow> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(idx, &step)| {
            let mut finite: Vec<f64> = traces
                .iter()
                .map(|trace| trace.errors[idx])
                .filter(|e| e.is_finite())
                .collect();
            finite.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
            let diverged = (traces.len() - finite.len()) as u64;
            if finite.is_empty() {
                return SummaryRow {
                    step,
                    mean: f64::INFINITY,
                    lo95: f64::INFINITY,
                    hi95: f64::INFINITY,
                    diverged,
                };
            }
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            SummaryRow {
                step,
                mean,
                lo95: percentile(&finite, 0.025),
                hi95: percentile(&finite, 0.975),
                diverged,
            }
        })
        .collect()
}

fn push_kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    out.push_str(key);
    out.push_str(" = ");
    out.push_str(&value.to_string());
    out.push('\n');
}

/// Runs every trial of the configured experiment on a worker pool of the
/// given size (`0` = available parallelism) and assembles traces, summary,
/// and manifest. Identical configurations produce identical outputs
/// regardless of pool size.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<RunOutput> {
    let instance = resolve_instance(&config.instance)?;
    let features = instance.features();
    let dim = features.dim();
    let gamma = instance.mdp().gamma();
    let checkpoints = resolve_checkpoints(&config.checkpoints, config.steps)?;

    // family-specific resolution: sampling pieces, error metric, plan context
    let mut manifest_extras = String::new();
    let (metric, sizes_outcome, on_policy_parts, off_policy_parts);
    match config.algorithm {
        AlgorithmKind::Td | AlgorithmKind::AveragedTd => {
            let mrp = instance.mdp().induce(instance.target())?;
            let geometry = build_geometry(&mrp, features)?;
            let population = on_policy_population(&mrp, features, &geometry)?;
            let reference = match &instance {
                ResolvedInstance::Minimax(inst) => {
                    if (&population.theta_star - &inst.theta_star).amax() > GROUND_TRUTH_TOL {
                        return Err(Error::GroundTruthMismatch(
                            "closed-form fixed point disagrees with the linear solve".into(),
                        ));
                    }
                    if (geometry.mu() - &inst.mu).amax() > GROUND_TRUTH_MU_TOL {
                        return Err(Error::GroundTruthMismatch(
                            "closed-form stationary distribution disagrees with the solver".into(),
                        ));
                    }
                    inst.theta_star.clone()
                }
                _ => population.theta_star.clone(),
            };
            let outcome = plan_stepsizes(
                &config.plan,
                &PlanContext::OnPolicy {
                    geometry: &geometry,
                    theta_star: &reference,
                    gamma,
                },
                config.steps,
            )?;
            push_kv(&mut manifest_extras, "kappa", geometry.kappa());
            push_kv(&mut manifest_extras, "sigma_lambda_min", geometry.lambda_min());
            metric = ErrorMetric::CoefficientNorm {
                weight: geometry.sigma().clone(),
                reference,
            };
            sizes_outcome = outcome;
            on_policy_parts = Some((mrp, geometry));
            off_policy_parts = None;
        }
        AlgorithmKind::OffPolicyTd | AlgorithmKind::Tdc => {
            let population =
                off_policy_population(instance.mdp(), instance.target(), instance.behavior(), features)?;
            let outcome = plan_stepsizes(
                &config.plan,
                &PlanContext::OffPolicy {
                    population: &population,
                },
                config.steps,
            )?;
            metric = match &population.fixed_point {
                OffPolicyFixedPoint::Unique(theta) => ErrorMetric::CoefficientNorm {
                    weight: population.sigma_tilde.clone(),
                    reference: theta.clone(),
                },
                OffPolicyFixedPoint::NonUnique { value_optimum } => {
                    if let ResolvedInstance::Baird(inst) = &instance {
                        if (value_optimum - &inst.v_star).amax() > GROUND_TRUTH_TOL {
                            return Err(Error::GroundTruthMismatch(
                                "value-space optimum is not the zero vector".into(),
                            ));
                        }
                    }
                    ErrorMetric::ValueNorm {
                        phi: features.matrix().clone(),
                        mu: population.mu_b.clone(),
                        reference: value_optimum.clone(),
                    }
                }
            };
            push_kv(&mut manifest_extras, "rho_max", population.rho_max);
            if let Some(c) = &population.constants {
                push_kv(&mut manifest_extras, "lambda1", c.lambda1);
                push_kv(&mut manifest_extras, "lambda2", c.lambda2);
                push_kv(&mut manifest_extras, "kappa_tilde", c.kappa_tilde);
            }
            sizes_outcome = outcome;
            on_policy_parts = None;
            off_policy_parts = Some(population);
        }
    }

    let StepsizeOutcome {
        sizes,
        burn_in_satisfied,
        stepsize_bound_satisfied,
    } = sizes_outcome;
    match (config.algorithm, &sizes) {
        (AlgorithmKind::Tdc, PlannedStepsizes::Tdc { .. }) => {}
        (AlgorithmKind::Tdc, _) | (_, PlannedStepsizes::Tdc { .. }) => {
            return Err(Error::Config(
                "stepsize plan does not match the algorithm family".into(),
            ))
        }
        _ => {}
    }

    let theta0 = match &config.theta0 {
        Some(Theta0Spec::Values(values)) => {
            if values.len() != dim {
                return Err(Error::Config(format!(
                    "theta0 has {} entries, features need {dim}",
                    values.len()
                )));
            }
            DVector::from_column_slice(values)
        }
        Some(Theta0Spec::FixedPoint) => match &metric {
            ErrorMetric::CoefficientNorm { reference, .. } => reference.clone(),
            ErrorMetric::ValueNorm { .. } => {
                return Err(Error::Config(
                    "theta0 = fixed_point needs an instance with an identified coefficient fixed point"
                        .into(),
                ))
            }
        },
        None => DVector::zeros(dim),
    };

    let manifest = build_manifest(
        config,
        &instance,
        &checkpoints,
        &sizes,
        burn_in_satisfied,
        stepsize_bound_satisfied,
        metric.label(),
        &manifest_extras,
    );

    let sampling = match (&on_policy_parts, &off_policy_parts) {
        (Some((mrp, geometry)), None) => Sampling::OnPolicy {
            mrp,
            mu: geometry.mu(),
        },
        (None, Some(population)) => Sampling::OffPolicy {
            mdp: instance.mdp(),
            target: instance.target(),
            behavior: instance.behavior(),
            mu_b: &population.mu_b,
        },
        _ => unreachable!("exactly one family is resolved"),
    };

    let plan = TrialPlan {
        algorithm: config.algorithm,
        gamma,
        seed: config.seed,
        steps: config.steps,
        checkpoints: &checkpoints,
        theta0,
        sizes,
        metric: &metric,
        features,
        sampling,
    };

    let traces: Vec<TrialTrace> = if workers == 1 {
        (0..config.trials)
            .map(|trial| run_trial(&plan, trial))
            .collect::<Result<_>>()?
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if workers > 0 {
            builder = builder.num_threads(workers);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..config.trials)
                .into_par_iter()
                .map(|trial| run_trial(&plan, trial))
                .collect::<Result<_>>()
        })?
    };

    let summary = summarize(&checkpoints, &traces);
    Ok(RunOutput {
        checkpoints,
        traces,
        summary,
        manifest,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_manifest(
    config: &ExperimentConfig,
    instance: &ResolvedInstance,
    checkpoints: &[u64],
    sizes: &PlannedStepsizes,
    burn_in_satisfied: Option<bool>,
    stepsize_bound_satisfied: Option<bool>,
    metric_label: &str,
    extras: &str,
) -> String {
    let mut out = String::from("# resolved run manifest\n");
    out.push_str(&crate::config::render_config(config));
    out.push_str("\n# derived quantities\n");
    push_kv(&mut out, "instance_kind", instance.label());
    push_kv(&mut out, "error_metric", metric_label);
    push_kv(&mut out, "divergence_threshold", crate::learner::DIVERGENCE_NORM);
    push_kv(
        &mut out,
        "band_method",
        "empirical percentiles 2.5/97.5 over finite trials, linear interpolation",
    );
    push_kv(
        &mut out,
        "checkpoint_grid",
        checkpoints
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    match sizes {
        PlannedStepsizes::Td { eta } => push_kv(&mut out, "resolved_eta", eta),
        PlannedStepsizes::Tdc {
            alpha,
            beta,
            varkappa,
        } => {
            push_kv(&mut out, "resolved_alpha", alpha);
            push_kv(&mut out, "resolved_beta", beta);
            push_kv(&mut out, "alpha_over_beta", alpha / beta);
            if let Some(varkappa) = varkappa {
                push_kv(&mut out, "varkappa", varkappa);
            }
        }
    }
    if let StepsizePlan::AnalyticTd { c0, .. } = &config.plan {
        push_kv(&mut out, "stepsize_constant_c0", c0);
        push_kv(&mut out, "burn_in_constant_c1", 1.0);
    }
    if let Some(flag) = burn_in_satisfied {
        push_kv(&mut out, "burn_in_satisfied", flag);
    }
    if let Some(flag) = stepsize_bound_satisfied {
        push_kv(&mut out, "stepsize_bound_satisfied", flag);
    }
    out.push_str(extras);
    out
}

/// Writes `trace.csv`, `summary.csv`, and `manifest.txt` under `out_dir`,
/// creating the directory if needed. Returns the three paths.
pub fn emit(output: &RunOutput, out_dir: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let trace_path = out_dir.join("trace.csv");
    let summary_path = out_dir.join("summary.csv");
    let manifest_path = out_dir.join("manifest.txt");

    let mut trace = csv::Writer::from_path(&trace_path)?;
    trace.write_record(["trial", "step", "error", "diverged"])?;
    for t in &output.traces {
        for (idx, &step) in output.checkpoints.iter().enumerate() {
            let diverged = match t.diverged_at {
                Some(at) if step >= at => at.to_string(),
                _ => String::new(),
            };
            trace.write_record([
                t.trial.to_string(),
                step.to_string(),
                t.errors[idx].to_string(),
                diverged,
            ])?;
        }
    }
    trace.flush()?;

    let mut summary = csv::Writer::from_path(&summary_path)?;
    summary.write_record(["step", "mean", "lo95", "hi95", "diverged"])?;
    for row in &output.summary {
        summary.write_record([
            row.step.to_string(),
            row.mean.to_string(),
            row.lo95.to_string(),
            row.hi95.to_string(),
            row.diverged.to_string(),
        ])?;
    }
    summary.flush()?;

    std::fs::write(&manifest_path, &output.manifest)?;
    Ok((trace_path, summary_path, manifest_path))
}

/// Reads back a summary CSV produced by [`emit`].
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::Config(format!(
                "summary row has {} fields, expected 5",
                record.len()
            )));
        }
        let field = |i: usize| -> &str { record.get(i).unwrap_or("") };
        let parse_f = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{}` in summary", field(i))))
        };
        rows.push(SummaryRow {
            step: field(0)
                .parse()
                .map_err(|_| Error::Config(format!("bad step `{}` in summary", field(0))))?,
            mean: parse_f(1)?,
            lo95: parse_f(2)?,
            hi95: parse_f(3)?,
            diverged: field(4)
                .parse()
                .map_err(|_| Error::Config(format!("bad count `{}` in summary", field(4))))?,
        });
    }
    Ok(rows)
}

/// Fits a least-squares line to `(log step, log mean)` over the checkpoints
/// with `window_lo <= step <= window_hi`. Rows with non-finite or nonpositive
/// means are excluded; fewer than five surviving points is an error.
pub fn fit_rate(rows: &[SummaryRow], window_lo: u64, window_hi: u64) -> Result<RateFit> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.step >= window_lo && r.step <= window_hi)
        .filter(|r| r.mean.is_finite() && r.mean > 0.0)
        .map(|r| ((r.step as f64).ln(), r.mean.ln()))
        .collect();
    if points.len() < 5 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 5 finite checkpoints in the window, found {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter(
            "rate-fit window spans a single step value".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    // a flat window has ss_tot at rounding-noise scale; report a perfect fit
    // instead of amplifying that noise into a meaningless ratio
    let noise_floor = 1e-24 * points.iter().map(|p| p.1 * p.1).sum::<f64>().max(1e-300);
    let r2 = if ss_tot <= noise_floor {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: points.len(),
    })
}
