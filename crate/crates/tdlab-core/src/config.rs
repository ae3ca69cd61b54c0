//! Flat key-value experiment configuration: parsing, rendering, and the two
//! built-in presets.
//!
//! Format: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; keys may appear at most once. The full schema is
//! documented in the repository README and mirrored by `render_config`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::instances::Sign;
use crate::learner::StepsizePlan;

/// Which instance a run is built on.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceConfig {
    Minimax {
        n_states: usize,
        feature_dim: usize,
        gamma: f64,
        epsilon: f64,
        signs: Option<Vec<Sign>>,
        epsilon_guard: bool,
    },
    Baird,
    External {
        path: PathBuf,
    },
}

/// Which learner runs and which vector is scored at checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmKind {
    /// Last-iterate TD on on-policy samples.
    Td,
    /// Iterate-averaged TD on on-policy samples.
    AveragedTd,
    /// Iterate-averaged TD on importance-weighted samples (divergence baseline).
    OffPolicyTd,
    /// Two-timescale corrected learner on importance-weighted samples.
    Tdc,
}

impl AlgorithmKind {
    pub fn is_off_policy(self) -> bool {
        matches!(self, AlgorithmKind::OffPolicyTd | AlgorithmKind::Tdc)
    }

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmKind::Td => "td",
            AlgorithmKind::AveragedTd => "averaged_td",
            AlgorithmKind::OffPolicyTd => "off_policy_td",
            AlgorithmKind::Tdc => "tdc",
        }
    }
}

/// Checkpoint grid: a count of log-spaced indices, or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointSpec {
    Count(usize),
    Explicit(Vec<u64>),
}

/// Starting iterate: explicit entries, or the instance's exact fixed point.
/// Starting at the fixed point removes the initial-condition transient so a
/// run measures the stationary noise behavior alone.
#[derive(Debug, Clone, PartialEq)]
pub enum Theta0Spec {
    Values(Vec<f64>),
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    pub algorithm: AlgorithmKind,
    pub plan: StepsizePlan,
    pub steps: u64,
    pub trials: u64,
    pub seed: u64,
    pub checkpoints: CheckpointSpec,
    /// Starting iterate; zeros when absent.
    pub theta0: Option<Theta0Spec>,
    pub out_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }

    let known = [
        "instance",
        "instance_path",
        "n_states",
        "feature_dim",
        "gamma",
        "epsilon",
        "signs",
        "epsilon_guard",
        "algorithm",
        "stepsize",
        "eta",
        "alpha",
        "beta",
        "c0",
        "delta",
        "theta_norm_estimate",
        "steps",
        "trials",
        "seed",
        "checkpoints",
        "theta0",
        "out_dir",
    ];
    for key in pairs.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
    }

    let take = |key: &str| pairs.get(key).map(|s| s.as_str());
    let require = |key: &str| {
        take(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    };

    let instance = match require("instance")? {
        "minimax" => InstanceConfig::Minimax {
            n_states: parse_num(require("n_states")?, "n_states")?,
            feature_dim: parse_num(require("feature_dim")?, "feature_dim")?,
            gamma: parse_float(require("gamma")?, "gamma")?,
            epsilon: parse_float(require("epsilon")?, "epsilon")?,
            signs: take("signs").map(parse_signs).transpose()?,
            epsilon_guard: take("epsilon_guard")
                .map(|v| parse_bool(v, "epsilon_guard"))
                .transpose()?
                .unwrap_or(true),
        },
        "baird" => InstanceConfig::Baird,
        "file" => InstanceConfig::External {
            path: PathBuf::from(require("instance_path")?),
        },
        other => {
            return Err(Error::Config(format!(
                "instance must be minimax, baird, or file; got `{other}`"
            )))
        }
    };

    let algorithm = match require("algorithm")? {
        "td" => AlgorithmKind::Td,
        "averaged_td" => AlgorithmKind::AveragedTd,
        "off_policy_td" => AlgorithmKind::OffPolicyTd,
        "tdc" => AlgorithmKind::Tdc,
        other => {
            return Err(Error::Config(format!(
                "algorithm must be td, averaged_td, off_policy_td, or tdc; got `{other}`"
            )))
        }
    };

    let plan = match take("stepsize").unwrap_or("fixed") {
        "fixed" => match algorithm {
            AlgorithmKind::Tdc => StepsizePlan::FixedTdc {
                alpha: parse_float(require("alpha")?, "alpha")?,
                beta: parse_float(require("beta")?, "beta")?,
            },
            _ => StepsizePlan::FixedTd {
                eta: parse_float(require("eta")?, "eta")?,
            },
        },
        "analytic" => match algorithm {
            AlgorithmKind::Td | AlgorithmKind::AveragedTd => StepsizePlan::AnalyticTd {
                c0: take("c0").map(|v| parse_float(v, "c0")).transpose()?.unwrap_or(1.0),
                delta: take("delta")
                    .map(|v| parse_float(v, "delta"))
                    .transpose()?
                    .unwrap_or(0.05),
            },
            AlgorithmKind::Tdc => StepsizePlan::AnalyticTdc {
                delta: take("delta")
                    .map(|v| parse_float(v, "delta"))
                    .transpose()?
                    .unwrap_or(0.05),
                theta_norm_estimate: take("theta_norm_estimate")
                    .map(|v| parse_float(v, "theta_norm_estimate"))
                    .transpose()?,
            },
            AlgorithmKind::OffPolicyTd => {
                return Err(Error::Config(
                    "no analytic stepsize exists for off_policy_td; use stepsize = fixed".into(),
                ))
            }
        },
        other => {
            return Err(Error::Config(format!(
                "stepsize must be fixed or analytic; got `{other}`"
            )))
        }
    };

    let steps: u64 = parse_num(require("steps")?, "steps")?;
    let trials: u64 = parse_num(require("trials")?, "trials")?;
    if steps == 0 || trials == 0 {
        return Err(Error::Config("steps and trials must be at least 1".into()));
    }

    let checkpoints = match take("checkpoints") {
        None => CheckpointSpec::Count(50),
        Some(v) if !v.contains(',') => CheckpointSpec::Count(parse_num(v, "checkpoints")?),
        Some(v) => {
            let list: Vec<u64> = v
                .split(',')
                .map(|x| parse_num(x.trim(), "checkpoints"))
                .collect::<Result<_>>()?;
            if list.is_empty() || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "explicit checkpoints must be strictly increasing".into(),
                ));
            }
            if *list.last().unwrap() != steps {
                return Err(Error::Config(format!(
                    "the last checkpoint must equal steps = {steps}"
                )));
            }
            if list[0] == 0 {
                return Err(Error::Config("checkpoints start at step 1".into()));
            }
            CheckpointSpec::Explicit(list)
        }
    };

    let theta0 = take("theta0")
        .map(|v| {
            if v.trim() == "fixed_point" {
                return Ok(Theta0Spec::FixedPoint);
            }
            v.split(',')
                .map(|x| parse_float(x.trim(), "theta0"))
                .collect::<Result<Vec<f64>>>()
                .map(Theta0Spec::Values)
        })
        .transpose()?;

    Ok(ExperimentConfig {
        instance,
        algorithm,
        plan,
        steps,
        trials,
        seed: parse_num(require("seed")?, "seed")?,
        checkpoints,
        theta0,
        out_dir: PathBuf::from(require("out_dir")?),
    })
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` is not a valid integer: `{value}`")))
}

fn parse_float(value: &str, key: &str) -> Result<f64> {
    let x: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` is not a number: `{value}`")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("`{key}` must be finite")));
    }
    Ok(x)
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}` must be true or false, got `{value}`"
        ))),
    }
}

fn parse_signs(value: &str) -> Result<Vec<Sign>> {
    value
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '+' => Ok(Sign::Plus),
            '-' => Ok(Sign::Minus),
            _ => Err(Error::Config(format!(
                "signs may only contain + and -, got `{c}`"
            ))),
        })
        .collect()
}

fn render_signs(signs: &[Sign]) -> String {
    signs
        .iter()
        .map(|s| match s {
            Sign::Plus => '+',
            Sign::Minus => '-',
        })
        .collect()
}

/// Serializes a configuration back to the textual format; `parse_config` of
/// the result reproduces the input value.
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    match &config.instance {
        InstanceConfig::Minimax {
            n_states,
            feature_dim,
            gamma,
            epsilon,
            signs,
            epsilon_guard,
        } => {
            push("instance", "minimax".into());
            push("n_states", n_states.to_string());
            push("feature_dim", feature_dim.to_string());
            push("gamma", gamma.to_string());
            push("epsilon", epsilon.to_string());
            if let Some(signs) = signs {
                push("signs", render_signs(signs));
            }
            if !epsilon_guard {
                push("epsilon_guard", "false".into());
            }
        }
        InstanceConfig::Baird => push("instance", "baird".into()),
        InstanceConfig::External { path } => {
            push("instance", "file".into());
            push("instance_path", path.display().to_string());
        }
    }
    push("algorithm", config.algorithm.label().into());
    match &config.plan {
        StepsizePlan::FixedTd { eta } => {
            push("stepsize", "fixed".into());
            push("eta", eta.to_string());
        }
        StepsizePlan::FixedTdc { alpha, beta } => {
            push("stepsize", "fixed".into());
            push("alpha", alpha.to_string());
            push("beta", beta.to_string());
        }
        StepsizePlan::AnalyticTd { c0, delta } => {
            push("stepsize", "analytic".into());
            push("c0", c0.to_string());
            push("delta", delta.to_string());
        }
        StepsizePlan::AnalyticTdc {
            delta,
            theta_norm_estimate,
        } => {
            push("stepsize", "analytic".into());
            push("delta", delta.to_string());
            if let Some(est) = theta_norm_estimate {
                push("theta_norm_estimate", est.to_string());
            }
        }
    }
    push("steps", config.steps.to_string());
    push("trials", config.trials.to_string());
    push("seed", config.seed.to_string());
    match &config.checkpoints {
        CheckpointSpec::Count(n) => push("checkpoints", n.to_string()),
        CheckpointSpec::Explicit(list) => push(
            "checkpoints",
            list.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
    }
    match &config.theta0 {
        Some(Theta0Spec::Values(values)) => push(
            "theta0",
            values
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        Some(Theta0Spec::FixedPoint) => push("theta0", "fixed_point".to_string()),
        None => {}
    }
    push("out_dir", config.out_dir.display().to_string());
    out
}

pub const PRESET_MINIMAX: &str = "\
# Hard-family chain benchmark: iterate-averaged TD at a fixed stepsize.
# 100 seeded trials of 1e5 i.i.d. samples; errors are Sigma-norm distances
# to the closed-form fixed point at 50 log-spaced checkpoints.
#
# Starting at the fixed point isolates the stationary noise: the averaged
# error then decays at its t^{-1/2} rate. From a cold start the average is
# instead dominated by the initial-condition transient, which at this
# stepsize decays like 1/(t eta) and masks the rate until far beyond 1e5
# steps.
instance = minimax
n_states = 10
feature_dim = 3
gamma = 0.2
epsilon = 0.01

algorithm = averaged_td
stepsize = fixed
eta = 0.01
theta0 = fixed_point

steps = 100000
trials = 100
seed = 12345
checkpoints = 50
out_dir = runs/minimax-fig1
";

pub const PRESET_BAIRD: &str = "\
# Divergence counterexample: the two-timescale corrected learner at its
# published stepsizes, started from the classic skewed vector. Errors are
# behavior-weighted value-space norms against the zero value function.
instance = baird

algorithm = tdc
stepsize = fixed
alpha = 0.02
beta = 0.002

steps = 100000
trials = 100
seed = 12345
checkpoints = 50
theta0 = 1,1,1,1,1,1,10,1
out_dir = runs/baird-fig3
";

/// Returns the named preset's config text.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "minimax-fig1" => Some(PRESET_MINIMAX),
        "baird-fig3" => Some(PRESET_BAIRD),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["minimax-fig1", "baird-fig3"]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_to_their_documented_values() {
        let c = parse_config(PRESET_MINIMAX).unwrap();
        assert_eq!(
            c.instance,
            InstanceConfig::Minimax {
                n_states: 10,
                feature_dim: 3,
                gamma: 0.2,
                epsilon: 0.01,
                signs: None,
                epsilon_guard: true,
            }
        );
        assert_eq!(c.algorithm, AlgorithmKind::AveragedTd);
        assert_eq!(c.plan, StepsizePlan::FixedTd { eta: 0.01 });
        assert_eq!((c.steps, c.trials, c.seed), (100_000, 100, 12345));
        assert_eq!(c.checkpoints, CheckpointSpec::Count(50));
        assert_eq!(c.theta0, Some(Theta0Spec::FixedPoint));

        let b = parse_config(PRESET_BAIRD).unwrap();
        assert_eq!(b.instance, InstanceConfig::Baird);
        assert_eq!(b.algorithm, AlgorithmKind::Tdc);
        assert_eq!(
            b.plan,
            StepsizePlan::FixedTdc {
                alpha: 0.02,
                beta: 0.002
            }
        );
        assert_eq!(
            b.theta0,
            Some(Theta0Spec::Values(vec![
                1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0
            ]))
        );
    }

    #[test]
    fn render_round_trips() {
        for text in [PRESET_MINIMAX, PRESET_BAIRD] {
            let parsed = parse_config(text).unwrap();
            let rendered = render_config(&parsed);
            assert_eq!(parse_config(&rendered).unwrap(), parsed);
        }
        let exotic = ExperimentConfig {
            instance: InstanceConfig::Minimax {
                n_states: 12,
                feature_dim: 5,
                gamma: 0.7,
                epsilon: 0.003,
                signs: Some(vec![Sign::Minus, Sign::Plus, Sign::Plus, Sign::Minus]),
                epsilon_guard: false,
            },
            algorithm: AlgorithmKind::Tdc,
            plan: StepsizePlan::AnalyticTdc {
                delta: 0.1,
                theta_norm_estimate: Some(3.5),
            },
            steps: 2000,
            trials: 7,
            seed: 99,
            checkpoints: CheckpointSpec::Explicit(vec![10, 100, 2000]),
            theta0: Some(Theta0Spec::Values(vec![0.0, 0.5, -1.0, 0.0, 0.0])),
            out_dir: PathBuf::from("runs/exotic"),
        };
        assert_eq!(parse_config(&render_config(&exotic)).unwrap(), exotic);
    }

    #[test]
    fn bad_inputs_are_rejected_with_config_errors() {
        let cases = [
            "instance = nowhere\nalgorithm = td\neta = 0.1\nsteps = 10\ntrials = 1\nseed = 1\nout_dir = x",
            "unknown_key = 1",
            "instance = baird\nalgorithm = warp\nsteps = 10\ntrials = 1\nseed = 1\nout_dir = x",
            "instance = baird\nalgorithm = td\neta = 0.1\nsteps = 0\ntrials = 1\nseed = 1\nout_dir = x",
            "instance = baird\nalgorithm = td\neta = 0.1\nsteps = 10\ntrials = 1\nseed = 1\ncheckpoints = 5,4,10\nout_dir = x",
            "instance = baird\nalgorithm = td\neta = 0.1\nsteps = 10\ntrials = 1\nseed = 1\ncheckpoints = 5,8\nout_dir = x",
            "instance = baird\nalgorithm = off_policy_td\nstepsize = analytic\nsteps = 10\ntrials = 1\nseed = 1\nout_dir = x",
            "instance = baird\ninstance = baird\nalgorithm = td\neta = 0.1\nsteps = 10\ntrials = 1\nseed = 1\nout_dir = x",
            "not a key value line",
        ];
        for text in cases {
            assert!(
                matches!(parse_config(text), Err(Error::Config(_))),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn named_presets_are_exposed() {
        assert!(preset("minimax-fig1").is_some());
        assert!(preset("baird-fig3").is_some());
        assert!(preset("uncharted").is_none());
        assert_eq!(preset_names().len(), 2);
    }
}
