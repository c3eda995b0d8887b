use serde::{Deserialize, Serialize};

use super::SeedEvaluation;
use crate::calibration::CalibrationReport;
use crate::labels::SmoothingPolicy;
use crate::synth::{CorruptionKind, CorruptionSpec};

/// Mean and sample standard deviation over seeds. `n` counts the seeds that
/// had a value; with `n == 1` the spread is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: None,
                std: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            n,
            mean: Some(mean),
            std: Some(std),
        }
    }

    fn from_options(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        Self::from_values(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub ece: f64,
    pub mmc_all: f64,
    pub mmc_incorrect: Option<f64>,
}

impl SeedMetrics {
    fn from_report(seed: u64, r: &CalibrationReport) -> Self {
        Self {
            seed,
            accuracy: r.accuracy,
            ece: r.ece,
            mmc_all: r.mmc_all,
            mmc_incorrect: r.mmc_incorrect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub policy: String,
    pub seed: u64,
    pub error: String,
}

/// Reliability bin `index` averaged over the seeds that have it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBin {
    pub index: usize,
    pub n_seeds: usize,
    pub mean_count: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeAggregate {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Records in the group, summed over seeds.
    pub total_count: usize,
    /// True when the group is low-support for any seed.
    pub low_support: bool,
    pub accuracy: MetricSummary,
    pub ece: MetricSummary,
    pub mmc_incorrect: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionAggregate {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub accuracy: MetricSummary,
    pub ece: MetricSummary,
    pub mmc_all: MetricSummary,
    pub mmc_incorrect: MetricSummary,
}

/// Metrics averaged over corruption kinds per seed, then summarised over
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityAggregate {
    pub severity: u8,
    pub accuracy: MetricSummary,
    pub ece: MetricSummary,
    pub mmc_all: MetricSummary,
    pub mmc_incorrect: MetricSummary,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: SmoothingPolicy,
    pub label: String,
    pub failed: Vec<FailedRun>,
    pub accuracy: MetricSummary,
    pub ece: MetricSummary,
    pub mmc_all: MetricSummary,
    pub mmc_incorrect: MetricSummary,
    pub per_seed: Vec<SeedMetrics>,
    pub reliability: Vec<MeanBin>,
    pub range: Vec<RangeAggregate>,
    #[serde(default)]
    pub corruption: Vec<CorruptionAggregate>,
    #[serde(default)]
    pub severity: Vec<SeverityAggregate>,
}

impl PolicyAggregate {
    /// Interior range groups that have a report for at least one seed, from
    /// nearest to farthest.
    pub fn populated_interior_ranges(&self) -> Vec<&RangeAggregate> {
        self.range
            .iter()
            .filter(|g| g.lo.is_some() && g.hi.is_some() && g.ece.n > 0)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub policies: Vec<PolicyAggregate>,
}

impl AggregateResult {
    pub fn policy(&self, label: &str) -> Option<&PolicyAggregate> {
        self.policies.iter().find(|p| p.label == label)
    }
}

fn mean_bins(reports: &[&CalibrationReport]) -> Vec<MeanBin> {
    let longest = reports.iter().map(|r| r.bins.len()).max().unwrap_or(0);
    (0..longest)
        .map(|index| {
            let bins: Vec<_> = reports.iter().filter_map(|r| r.bins.get(index)).collect();
            let n = bins.len() as f64;
            MeanBin {
                index,
                n_seeds: bins.len(),
                mean_count: bins.iter().map(|b| b.count as f64).sum::<f64>() / n,
                mean_confidence: bins.iter().map(|b| b.mean_confidence).sum::<f64>() / n,
                accuracy: bins.iter().map(|b| b.accuracy).sum::<f64>() / n,
            }
        })
        .collect()
}

fn range_aggregates(evals: &[&SeedEvaluation]) -> Vec<RangeAggregate> {
    let Some(first) = evals.first() else {
        return Vec::new();
    };
    (0..first.range_groups.len())
        .map(|i| {
            let groups: Vec<_> = evals.iter().filter_map(|e| e.range_groups.get(i)).collect();
            let reports: Vec<_> = groups.iter().filter_map(|g| g.report.as_ref()).collect();
            RangeAggregate {
                lo: first.range_groups[i].lo,
                hi: first.range_groups[i].hi,
                total_count: groups.iter().map(|g| g.count).sum(),
                low_support: groups.iter().any(|g| g.low_support),
                accuracy: MetricSummary::from_options(reports.iter().map(|r| Some(r.accuracy))),
                ece: MetricSummary::from_options(reports.iter().map(|r| Some(r.ece))),
                mmc_incorrect: MetricSummary::from_options(reports.iter().map(|r| r.mmc_incorrect)),
            }
        })
        .collect()
}

fn corruption_aggregates(evals: &[&SeedEvaluation]) -> Vec<CorruptionAggregate> {
    CorruptionSpec::catalog()
        .into_iter()
        .filter_map(|spec| {
            let reports: Vec<&CalibrationReport> = evals
                .iter()
                .filter_map(|e| {
                    e.corruption
                        .iter()
                        .find(|c| c.spec == spec)
                        .map(|c| &c.report)
                })
                .collect();
            if reports.is_empty() {
                return None;
            }
            Some(CorruptionAggregate {
                kind: spec.kind,
                severity: spec.severity,
                accuracy: MetricSummary::from_options(reports.iter().map(|r| Some(r.accuracy))),
                ece: MetricSummary::from_options(reports.iter().map(|r| Some(r.ece))),
                mmc_all: MetricSummary::from_options(reports.iter().map(|r| Some(r.mmc_all))),
                mmc_incorrect: MetricSummary::from_options(reports.iter().map(|r| r.mmc_incorrect)),
            })
        })
        .collect()
}

fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn severity_aggregates(evals: &[&SeedEvaluation]) -> Vec<SeverityAggregate> {
    (1..=3u8)
        .filter_map(|severity| {
            let per_seed: Vec<SeedMetrics> = evals
                .iter()
                .filter_map(|e| {
                    let cells: Vec<&CalibrationReport> = e
                        .corruption
                        .iter()
                        .filter(|c| c.spec.severity == severity)
                        .map(|c| &c.report)
                        .collect();
                    Some(SeedMetrics {
                        seed: e.seed,
                        accuracy: mean_of(cells.iter().map(|r| r.accuracy))?,
                        ece: mean_of(cells.iter().map(|r| r.ece))?,
                        mmc_all: mean_of(cells.iter().map(|r| r.mmc_all))?,
                        mmc_incorrect: mean_of(cells.iter().filter_map(|r| r.mmc_incorrect)),
                    })
                })
                .collect();
            if per_seed.is_empty() {
                return None;
            }
            Some(SeverityAggregate {
                severity,
                accuracy: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.accuracy))),
                ece: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.ece))),
                mmc_all: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.mmc_all))),
                mmc_incorrect: MetricSummary::from_options(
                    per_seed.iter().map(|s| s.mmc_incorrect),
                ),
                per_seed,
            })
        })
        .collect()
}

/// Groups evaluations by policy (in the order of `policies`) and summarises
/// each group over seeds. Failed runs are listed under their policy.
pub fn aggregate(
    policies: &[SmoothingPolicy],
    evaluations: &[SeedEvaluation],
    failed: &[FailedRun],
) -> AggregateResult {
    let policies = policies
        .iter()
        .map(|policy| {
            let label = policy.label();
            let evals: Vec<&SeedEvaluation> = evaluations
                .iter()
                .filter(|e| e.policy.label() == label)
                .collect();
            let reports: Vec<&CalibrationReport> = evals.iter().map(|e| &e.report).collect();
            let per_seed: Vec<SeedMetrics> = evals
                .iter()
                .map(|e| SeedMetrics::from_report(e.seed, &e.report))
                .collect();
            PolicyAggregate {
                policy: policy.clone(),
                failed: failed
                    .iter()
                    .filter(|f| f.policy == label)
                    .cloned()
                    .collect(),
                accuracy: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.accuracy))),
                ece: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.ece))),
                mmc_all: MetricSummary::from_options(per_seed.iter().map(|s| Some(s.mmc_all))),
                mmc_incorrect: MetricSummary::from_options(
                    per_seed.iter().map(|s| s.mmc_incorrect),
                ),
                reliability: mean_bins(&reports),
                range: range_aggregates(&evals),
                corruption: corruption_aggregates(&evals),
                severity: severity_aggregates(&evals),
                per_seed,
                label,
            }
        })
        .collect();
    AggregateResult { policies }
}
