//! Benchmark orchestration: train every policy over several seeds, evaluate
//! on the clean and corrupted test split, and aggregate across seeds.

mod aggregate;
mod config;
mod report;

pub use aggregate::{
    aggregate, AggregateResult, CorruptionAggregate, FailedRun, MeanBin, MetricSummary,
    PolicyAggregate, RangeAggregate, SeedMetrics, SeverityAggregate,
};
pub use config::{EvaluationConfig, ExperimentConfig};
pub use report::{render_table, write_reliability_csv, write_severity_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_report, range_binned_report, CalibrationReport, RangeGroup};
use crate::classifier::{predict_all, run_seed, train, TrainConfig, TrainedModel};
use crate::error::Result;
use crate::labels::SmoothingPolicy;
use crate::seed::{self, stream};
use crate::synth::{
    corrupt, generate_dataset, CorruptionParams, CorruptionSpec, Dataset, DatasetStats, RoiSample,
};

/// Metrics of one model on one (possibly corrupted) evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionCell {
    pub spec: CorruptionSpec,
    pub report: CalibrationReport,
}

/// Everything measured for one (policy, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub policy: SmoothingPolicy,
    pub seed: u64,
    pub report: CalibrationReport,
    pub range_groups: Vec<RangeGroup>,
    #[serde(default)]
    pub corruption: Vec<CorruptionCell>,
}

/// Full report plus range study of one model on one sample set.
pub fn evaluate_model(
    model: &TrainedModel,
    samples: &[RoiSample],
    eval: &EvaluationConfig,
) -> Result<(CalibrationReport, Vec<RangeGroup>)> {
    let records = predict_all(&model.params, samples, &model.norm)?;
    let report = calibration_report(&records, eval.n_bins)?;
    let groups = range_binned_report(
        &records,
        &eval.range_edges,
        eval.n_bins,
        eval.min_group_count,
    )?;
    Ok((report, groups))
}

/// Seed of the corruption applied to one sample in one (kind, severity) cell.
pub fn corruption_seed(base: u64, spec: &CorruptionSpec, sample_id: u64) -> u64 {
    seed::derive(
        base,
        &[
            stream::CORRUPTION,
            spec.kind.index(),
            spec.severity as u64,
            sample_id,
        ],
    )
}

/// The sample set corrupted by one cell. Identical for every model, so all
/// policies are compared on the same inputs.
pub fn corrupt_split(
    samples: &[RoiSample],
    spec: &CorruptionSpec,
    params: &CorruptionParams,
    base_seed: u64,
) -> Result<Vec<RoiSample>> {
    samples
        .par_iter()
        .map(|s| {
            corrupt(
                s,
                spec,
                params,
                corruption_seed(base_seed, spec, s.sample_id),
            )
        })
        .collect()
}

/// Evaluates every model on all 21 corruption cells. Result `[m][c]` is
/// model `m` on cell `c` in catalog order.
pub fn corruption_sweep(
    models: &[&TrainedModel],
    samples: &[RoiSample],
    eval: &EvaluationConfig,
    mut progress: impl FnMut(&CorruptionSpec),
) -> Result<Vec<Vec<CorruptionCell>>> {
    let mut out: Vec<Vec<CorruptionCell>> = vec![Vec::new(); models.len()];
    for spec in CorruptionSpec::catalog() {
        progress(&spec);
        let corrupted = corrupt_split(samples, &spec, &eval.corruption, eval.corruption_seed)?;
        let reports: Vec<CalibrationReport> = models
            .par_iter()
            .map(|m| {
                let records = predict_all(&m.params, &corrupted, &m.norm)?;
                calibration_report(&records, eval.n_bins)
            })
            .collect::<Result<_>>()?;
        for (cells, report) in out.iter_mut().zip(reports) {
            cells.push(CorruptionCell { spec, report });
        }
    }
    Ok(out)
}

/// Outcome of one training run; failed runs are kept so the aggregate can
/// mark them instead of silently dropping them.
#[derive(Debug)]
pub struct RunOutcome {
    pub policy: SmoothingPolicy,
    pub seed: u64,
    pub model: Result<TrainedModel>,
}

/// Trains `n_seeds` runs of every policy. Runs are independent and executed
/// in parallel; the output is in (policy, seed index) order.
pub fn train_all(
    dataset: &Dataset,
    stats: &DatasetStats,
    policies: &[SmoothingPolicy],
    config: &TrainConfig,
    n_seeds: usize,
) -> Vec<RunOutcome> {
    let jobs: Vec<(&SmoothingPolicy, u64)> = policies
        .iter()
        .flat_map(|p| (0..n_seeds).map(move |i| (p, run_seed(config.seed, i))))
        .collect();
    jobs.into_par_iter()
        .map(|(policy, seed)| {
            let cfg = TrainConfig {
                seed,
                ..config.clone()
            };
            RunOutcome {
                policy: policy.clone(),
                seed,
                model: train(&dataset.train, &dataset.val, policy, stats, &cfg),
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub dataset: Dataset,
    pub stats: DatasetStats,
    pub runs: Vec<RunOutcome>,
    pub evaluations: Vec<SeedEvaluation>,
    pub aggregate: AggregateResult,
}

/// Generate, train, evaluate and aggregate in one go.
pub fn run_benchmark(
    config: &ExperimentConfig,
    mut progress: impl FnMut(&str),
) -> Result<BenchmarkOutcome> {
    config.validate()?;
    progress("generating dataset");
    let dataset = generate_dataset(&config.dataset)?;
    let stats = dataset.stats()?;

    progress(&format!(
        "training {} policies x {} seeds",
        config.policies.len(),
        config.n_seeds
    ));
    let runs = train_all(
        &dataset,
        &stats,
        &config.policies,
        &config.train,
        config.n_seeds,
    );
    let ok: Vec<&RunOutcome> = runs.iter().filter(|r| r.model.is_ok()).collect();
    let models: Vec<&TrainedModel> = ok
        .iter()
        .map(|r| r.model.as_ref().expect("filtered"))
        .collect();

    progress("evaluating on the test split");
    let clean: Vec<(CalibrationReport, Vec<RangeGroup>)> = models
        .par_iter()
        .map(|m| evaluate_model(m, &dataset.test, &config.evaluation))
        .collect::<Result<_>>()?;

    let mut sweep = if config.evaluation.corruption_sweep {
        corruption_sweep(&models, &dataset.test, &config.evaluation, |spec| {
            progress(&format!(
                "corruption {} severity {}",
                spec.kind, spec.severity
            ))
        })?
    } else {
        vec![Vec::new(); models.len()]
    };

    let evaluations: Vec<SeedEvaluation> = ok
        .iter()
        .zip(clean)
        .zip(sweep.iter_mut())
        .map(|((run, (report, range_groups)), cells)| SeedEvaluation {
            policy: run.policy.clone(),
            seed: run.seed,
            report,
            range_groups,
            corruption: std::mem::take(cells),
        })
        .collect();

    let failed: Vec<FailedRun> = runs
        .iter()
        .filter_map(|r| {
            r.model.as_ref().err().map(|e| FailedRun {
                policy: r.policy.label(),
                seed: r.seed,
                error: e.to_string(),
            })
        })
        .collect();
    let aggregate = aggregate(&config.policies, &evaluations, &failed);

    Ok(BenchmarkOutcome {
        dataset,
        stats,
        runs,
        evaluations,
        aggregate,
    })
}
