//! Soft training targets.
//!
//! A hard one-hot label is mixed with a class prior, `(1 - eps) * onehot +
//! eps * prior`. The smoothing factor is either fixed or derived per sample
//! from the object's range (far objects get larger `eps`) or from the
//! sample's average received power (weak returns get larger `eps`). Both
//! per-sample schemes map a normalised quantity `t` in `[0, 1]` through
//! `eps = 1 - exp(-alpha * t)`, and `alpha < ln 2` keeps `eps < 1/2`, so the
//! ground-truth class always retains the majority of the mass.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{mean_power, DatasetStats, RoiSample};

/// Exclusive upper bound on `alpha`: `-ln(0.5)`.
pub const ALPHA_BOUND: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
}

impl SoftLabel {
    pub fn one_hot(class_id: usize, n_classes: usize) -> Self {
        let mut probs = vec![0.0; n_classes];
        probs[class_id] = 1.0;
        Self { probs }
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }
}

/// Class prior the hard label is mixed with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub enum Prior {
    #[default]
    Uniform,
    /// Training-split class frequencies.
    Empirical,
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PriorRepr {
    Named(String),
    Explicit(Vec<f64>),
}

impl TryFrom<PriorRepr> for Prior {
    type Error = String;

    fn try_from(r: PriorRepr) -> Result<Self, String> {
        match r {
            PriorRepr::Named(s) if s == "uniform" => Ok(Prior::Uniform),
            PriorRepr::Named(s) if s == "empirical" => Ok(Prior::Empirical),
            PriorRepr::Named(s) => Err(format!(
                "unknown prior `{s}` (expected \"uniform\", \"empirical\" or an array)"
            )),
            PriorRepr::Explicit(v) => Ok(Prior::Explicit(v)),
        }
    }
}

impl From<Prior> for PriorRepr {
    fn from(p: Prior) -> Self {
        match p {
            Prior::Uniform => PriorRepr::Named("uniform".into()),
            Prior::Empirical => PriorRepr::Named("empirical".into()),
            Prior::Explicit(v) => PriorRepr::Explicit(v),
        }
    }
}

impl Prior {
    pub fn resolve(&self, n_classes: usize, stats: Option<&DatasetStats>) -> Result<Vec<f64>> {
        let prior = match self {
            Prior::Uniform => vec![1.0 / n_classes as f64; n_classes],
            Prior::Empirical => {
                let stats = stats.ok_or_else(|| {
                    Error::invalid("empirical prior needs training-split class counts")
                })?;
                let total: usize = stats.class_counts.iter().sum();
                if stats.class_counts.len() != n_classes || total == 0 {
                    return Err(Error::invalid("class counts do not match the class count"));
                }
                stats
                    .class_counts
                    .iter()
                    .map(|&c| c as f64 / total as f64)
                    .collect()
            }
            Prior::Explicit(v) => v.clone(),
        };
        check_prior(&prior, n_classes)?;
        Ok(prior)
    }
}

fn check_prior(prior: &[f64], n_classes: usize) -> Result<()> {
    if prior.len() != n_classes {
        return Err(Error::invalid(format!(
            "prior has {} entries for {n_classes} classes",
            prior.len()
        )));
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("prior entries must be finite and >= 0"));
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("prior sums to {sum}, not 1")));
    }
    Ok(())
}

/// Which smoothing factor a policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PolicyKind {
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "eps-smooth")]
    Epsilon { epsilon: f64 },
    #[serde(rename = "r-smooth")]
    RangeBased { alpha: f64 },
    #[serde(rename = "p-smooth")]
    PowerBased { alpha: f64 },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Hard => "hard",
            PolicyKind::Epsilon { .. } => "eps-smooth",
            PolicyKind::RangeBased { .. } => "r-smooth",
            PolicyKind::PowerBased { .. } => "p-smooth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub prior: Prior,
}

impl SmoothingPolicy {
    pub fn hard() -> Self {
        Self {
            kind: PolicyKind::Hard,
            prior: Prior::Uniform,
        }
    }

    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            kind: PolicyKind::Epsilon { epsilon },
            prior: Prior::Uniform,
        }
    }

    pub fn range_based(alpha: f64) -> Self {
        Self {
            kind: PolicyKind::RangeBased { alpha },
            prior: Prior::Uniform,
        }
    }

    pub fn power_based(alpha: f64) -> Self {
        Self {
            kind: PolicyKind::PowerBased { alpha },
            prior: Prior::Uniform,
        }
    }

    /// The four policies compared by default: hard labels, eps = 0.1 and
    /// range/power smoothing with alpha = 0.5.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::hard(),
            Self::epsilon(0.1),
            Self::range_based(0.5),
            Self::power_based(0.5),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PolicyKind::Hard => Ok(()),
            PolicyKind::Epsilon { epsilon } => {
                if (0.0..1.0).contains(&epsilon) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "epsilon must lie in [0, 1), got {epsilon}"
                    )))
                }
            }
            PolicyKind::RangeBased { alpha } | PolicyKind::PowerBased { alpha } => {
                check_alpha(alpha)
            }
        }?;
        if let Prior::Explicit(v) = &self.prior {
            check_prior(v, v.len())?;
        }
        Ok(())
    }

    /// Short stable identifier, e.g. `p-smooth(0.5)`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SmoothingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PolicyKind::Hard => write!(f, "hard")?,
            PolicyKind::Epsilon { epsilon } => write!(f, "eps-smooth({epsilon})")?,
            PolicyKind::RangeBased { alpha } => write!(f, "r-smooth({alpha})")?,
            PolicyKind::PowerBased { alpha } => write!(f, "p-smooth({alpha})")?,
        }
        match &self.prior {
            Prior::Uniform => Ok(()),
            Prior::Empirical => write!(f, "+empirical"),
            Prior::Explicit(_) => write!(f, "+prior"),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < ALPHA_BOUND {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in (0, -ln 0.5 = {ALPHA_BOUND:.6}), got {alpha}"
        )))
    }
}

/// `(1 - epsilon) * onehot(class_id) + epsilon * prior`.
pub fn smooth_label(
    class_id: usize,
    epsilon: f64,
    prior: &[f64],
    n_classes: usize,
) -> Result<SoftLabel> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    if class_id >= n_classes {
        return Err(Error::invalid(format!(
            "class {class_id} out of range for {n_classes} classes"
        )));
    }
    check_prior(prior, n_classes)?;
    let probs = prior
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let hard = if c == class_id { 1.0 - epsilon } else { 0.0 };
            hard + epsilon * p
        })
        .collect();
    Ok(SoftLabel { probs })
}

fn exp_schedule(alpha: f64, t: f64) -> f64 {
    // -expm1 keeps eps exact at t = 0 and accurate for small alpha * t
    -(-alpha * t).exp_m1()
}

/// Range-based smoothing factor; grows from 0 at `r_min` to `1 - e^-alpha`
/// at `r_max`. Ranges outside the training extrema are clamped.
pub fn epsilon_from_range(range_m: f64, alpha: f64, stats: &DatasetStats) -> Result<f64> {
    check_alpha(alpha)?;
    stats.validate()?;
    let t = ((range_m - stats.r_min) / (stats.r_max - stats.r_min)).clamp(0.0, 1.0);
    Ok(exp_schedule(alpha, t))
}

/// Power-based smoothing factor; 0 at `pi_max`, `1 - e^-alpha` at `pi_min`.
/// Powers outside the training extrema are clamped.
pub fn epsilon_from_power(pi: f64, alpha: f64, stats: &DatasetStats) -> Result<f64> {
    check_alpha(alpha)?;
    stats.validate()?;
    let u = ((pi - stats.pi_min) / (stats.pi_max - stats.pi_min)).clamp(0.0, 1.0);
    Ok(exp_schedule(alpha, 1.0 - u))
}

/// Smoothing factor the policy assigns to one sample.
pub fn policy_epsilon(
    sample: &RoiSample,
    policy: &SmoothingPolicy,
    stats: &DatasetStats,
) -> Result<f64> {
    match policy.kind {
        PolicyKind::Hard => Ok(0.0),
        PolicyKind::Epsilon { epsilon } => Ok(epsilon),
        PolicyKind::RangeBased { alpha } => epsilon_from_range(sample.range_m, alpha, stats),
        PolicyKind::PowerBased { alpha } => epsilon_from_power(mean_power(sample), alpha, stats),
    }
}

pub fn apply_policy(
    sample: &RoiSample,
    policy: &SmoothingPolicy,
    stats: &DatasetStats,
) -> Result<SoftLabel> {
    policy.validate()?;
    let n_classes = stats.n_classes();
    if let PolicyKind::Hard = policy.kind {
        if sample.class_id >= n_classes {
            return Err(Error::invalid(format!(
                "class {} out of range",
                sample.class_id
            )));
        }
        return Ok(SoftLabel::one_hot(sample.class_id, n_classes));
    }
    let prior = policy.prior.resolve(n_classes, Some(stats))?;
    let eps = policy_epsilon(sample, policy, stats)?;
    smooth_label(sample.class_id, eps, &prior, n_classes)
}
