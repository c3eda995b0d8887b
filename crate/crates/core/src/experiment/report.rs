use std::fmt::Write as _;
use std::io::Write;

use super::{AggregateResult, MetricSummary, PolicyAggregate};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Best {
    Max,
    Min,
}

fn cell(m: &MetricSummary, best: Option<f64>) -> String {
    match (m.mean, m.std) {
        (Some(mean), Some(std)) => {
            let text = format!("{mean:.4} ± {std:.4}");
            if best == Some(mean) {
                format!("**{text}**")
            } else {
                text
            }
        }
        _ => "n/a".to_string(),
    }
}

fn best_of<'a>(values: impl Iterator<Item = &'a MetricSummary>, how: Best) -> Option<f64> {
    let means = values.filter_map(|m| m.mean);
    match how {
        Best::Max => means.reduce(f64::max),
        Best::Min => means.reduce(f64::min),
    }
}

fn table(
    out: &mut String,
    header: &[&str],
    rows: &[(Vec<String>, [&MetricSummary; 3])],
    how: [Best; 3],
) {
    let best: Vec<Option<f64>> = (0..3)
        .map(|c| best_of(rows.iter().map(|(_, m)| m[c]), how[c]))
        .collect();
    writeln!(out, "| {} |", header.join(" | ")).unwrap();
    writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
    for (keys, metrics) in rows {
        let mut cols = keys.clone();
        cols.extend(metrics.iter().zip(&best).map(|(m, b)| cell(m, *b)));
        writeln!(out, "| {} |", cols.join(" | ")).unwrap();
    }
}

/// Markdown summary: mean ± std over seeds, best value per column in bold
/// (highest accuracy, lowest ECE and MMC). Output depends only on the input.
pub fn render_table(result: &AggregateResult) -> String {
    let mut out = String::new();
    writeln!(out, "## Test split\n").unwrap();
    let rows: Vec<_> = result
        .policies
        .iter()
        .map(|p| {
            (
                vec![p.label.clone(), p.per_seed.len().to_string()],
                [&p.accuracy, &p.ece, &p.mmc_incorrect],
            )
        })
        .collect();
    table(
        &mut out,
        &["Policy", "Seeds", "Accuracy", "ECE", "MMC (incorrect)"],
        &rows,
        [Best::Max, Best::Min, Best::Min],
    );

    if result.policies.iter().any(|p| !p.severity.is_empty()) {
        writeln!(out, "\n## Corruption severity (averaged over kinds)\n").unwrap();
        for severity in 1..=3u8 {
            let rows: Vec<_> = result
                .policies
                .iter()
                .filter_map(|p| {
                    let s = p.severity.iter().find(|s| s.severity == severity)?;
                    Some((
                        vec![p.label.clone(), severity.to_string()],
                        [&s.accuracy, &s.ece, &s.mmc_all],
                    ))
                })
                .collect();
            if severity > 1 {
                out.push('\n');
            }
            table(
                &mut out,
                &["Policy", "Severity", "Accuracy", "ECE", "MMC"],
                &rows,
                [Best::Max, Best::Min, Best::Min],
            );
        }
    }

    let failed: Vec<_> = result.policies.iter().flat_map(|p| &p.failed).collect();
    if !failed.is_empty() {
        writeln!(out, "\n## Failed runs\n").unwrap();
        for f in failed {
            writeln!(out, "- {} seed {}: {}", f.policy, f.seed, f.error).unwrap();
        }
    }
    out
}

/// Seed-averaged reliability diagram of one policy.
pub fn write_reliability_csv(policy: &PolicyAggregate, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ctx = "reliability";
    w.write_record(["bin", "seeds", "mean_count", "mean_confidence", "accuracy"])
        .map_err(|e| Error::csv(ctx, e))?;
    for b in &policy.reliability {
        w.write_record([
            b.index.to_string(),
            b.n_seeds.to_string(),
            b.mean_count.to_string(),
            b.mean_confidence.to_string(),
            b.accuracy.to_string(),
        ])
        .map_err(|e| Error::csv(ctx, e))?;
    }
    w.flush().map_err(|e| Error::io("<reliability csv>", e))
}

/// One row per (policy, severity) with mean and std of every metric.
pub fn write_severity_csv(result: &AggregateResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ctx = "severity";
    w.write_record([
        "policy",
        "severity",
        "seeds",
        "accuracy_mean",
        "accuracy_std",
        "ece_mean",
        "ece_std",
        "mmc_mean",
        "mmc_std",
        "mmc_incorrect_mean",
        "mmc_incorrect_std",
    ])
    .map_err(|e| Error::csv(ctx, e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &result.policies {
        for s in &p.severity {
            let mut row = vec![
                p.label.clone(),
                s.severity.to_string(),
                s.per_seed.len().to_string(),
            ];
            for m in [&s.accuracy, &s.ece, &s.mmc_all, &s.mmc_incorrect] {
                row.push(opt(m.mean));
                row.push(opt(m.std));
            }
            w.write_record(&row).map_err(|e| Error::csv(ctx, e))?;
        }
    }
    w.flush().map_err(|e| Error::io("<severity csv>", e))
}
