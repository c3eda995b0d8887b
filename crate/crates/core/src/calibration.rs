//! Calibration metrics over prediction records.
//!
//! ECE uses equal-mass bins over the sorted confidences: records are sorted
//! ascending by confidence (ties keep input order) and cut into `n_bins`
//! contiguous groups whose sizes differ by at most one, with the remainder
//! going to the lowest-confidence bins. Bins that would be empty (more bins
//! than records) are omitted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::PredictionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_N_BINS: usize = 10;
pub const DEFAULT_RANGE_EDGES: [f64; 7] = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];
pub const DEFAULT_MIN_GROUP_COUNT: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    /// Smallest and largest confidence in the bin.
    pub confidence_lo: f64,
    pub confidence_hi: f64,
}

impl ReliabilityBin {
    /// Accuracy below confidence.
    pub fn is_overconfident(&self) -> bool {
        self.accuracy < self.mean_confidence
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub mmc_all: f64,
    /// `None` when no record is correct.
    pub mmc_correct: Option<f64>,
    /// `None` when every record is correct.
    pub mmc_incorrect: Option<f64>,
    pub n_bins: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl CalibrationReport {
    /// ECE recomputed from the stored bins.
    pub fn ece_from_bins(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| b.count as f64 / self.n as f64 * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }

    pub fn write_bins_csv(&self, out: impl Write) -> Result<()> {
        write_bins_csv(&self.bins, out)
    }
}

/// Reliability-diagram CSV: one row per bin.
pub fn write_bins_csv(bins: &[ReliabilityBin], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "count", "mean_confidence", "accuracy"])
        .map_err(|e| Error::csv("bins", e))?;
    for b in bins {
        w.write_record([
            b.confidence_lo.to_string(),
            b.confidence_hi.to_string(),
            b.count.to_string(),
            b.mean_confidence.to_string(),
            b.accuracy.to_string(),
        ])
        .map_err(|e| Error::csv("bins", e))?;
    }
    w.flush().map_err(|e| Error::io("<bins csv>", e))
}

fn check_bins(records: &[PredictionRecord], n_bins: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no prediction records"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    Ok(())
}

/// Record indices sorted ascending by confidence, ties in input order.
fn sorted_order(records: &[PredictionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].confidence().total_cmp(&records[b].confidence()));
    order
}

/// Sizes of the equal-mass bins; the first `n mod n_bins` get one extra.
fn bin_sizes(n: usize, n_bins: usize) -> impl Iterator<Item = usize> {
    let (base, rem) = (n / n_bins, n % n_bins);
    (0..n_bins)
        .map(move |b| base + usize::from(b < rem))
        .filter(|&s| s > 0)
}

pub fn reliability_table(
    records: &[PredictionRecord],
    n_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    check_bins(records, n_bins)?;
    let order = sorted_order(records);
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for size in bin_sizes(records.len(), n_bins) {
        let members = &order[start..start + size];
        start += size;
        let conf_sum: f64 = members.iter().map(|&i| records[i].confidence()).sum();
        let correct = members.iter().filter(|&&i| records[i].is_correct()).count();
        bins.push(ReliabilityBin {
            count: size,
            mean_confidence: conf_sum / size as f64,
            accuracy: correct as f64 / size as f64,
            confidence_lo: records[members[0]].confidence(),
            confidence_hi: records[members[size - 1]].confidence(),
        });
    }
    Ok(bins)
}

/// Expected calibration error with equal-mass binning, plus the bins.
pub fn ece(records: &[PredictionRecord], n_bins: usize) -> Result<(f64, Vec<ReliabilityBin>)> {
    let bins = reliability_table(records, n_bins)?;
    let n = records.len() as f64;
    let value = bins
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum();
    Ok((value, bins))
}

/// Independent ECE computation used to cross-check [`ece`].
///
/// Works on a sorted copy of `(confidence, correct)` pairs, walks it once
/// assigning each position to a bin by comparing against running bin
/// capacities, and accumulates per-bin integer hit counts and confidence
/// sums. Since `(N_b / N) |hits_b / N_b - conf_b / N_b| = |hits_b - conf_b| / N`
/// the result never divides by a bin size.
pub fn ece_bruteforce_oracle(records: &[PredictionRecord], n_bins: usize) -> Result<f64> {
    check_bins(records, n_bins)?;
    let n = records.len();
    let mut pairs: Vec<(f64, usize, bool)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.confidence(), i, r.predicted_class == r.true_class))
        .collect();
    // (confidence, index) lexicographic order is what a stable sort yields
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut hits = vec![0u64; n_bins];
    let mut conf = vec![0.0f64; n_bins];
    let mut bin = 0;
    let mut filled = 0;
    for (c, _, ok) in pairs {
        // capacity of bin b is ceil((N - b) / n_bins) when counting from b = 0
        let capacity = (n + n_bins - 1 - bin) / n_bins;
        while filled == capacity {
            bin += 1;
            filled = 0;
        }
        hits[bin] += u64::from(ok);
        conf[bin] += c;
        filled += 1;
    }
    Ok(hits
        .iter()
        .zip(&conf)
        .map(|(&h, &c)| (h as f64 - c).abs())
        .sum::<f64>()
        / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Correct,
    Incorrect,
}

/// Mean maximal confidence over a record subset.
pub fn mmc(records: &[PredictionRecord], subset: Subset) -> Result<f64> {
    let keep = |r: &&PredictionRecord| match subset {
        Subset::All => true,
        Subset::Correct => r.is_correct(),
        Subset::Incorrect => !r.is_correct(),
    };
    let (sum, count) = records
        .iter()
        .filter(keep)
        .fold((0.0, 0usize), |(s, c), r| (s + r.confidence(), c + 1));
    if count == 0 {
        return Err(Error::EmptySubset(format!(
            "{subset:?} subset has no records"
        )));
    }
    Ok(sum / count as f64)
}

fn optional(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptySubset(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn calibration_report(
    records: &[PredictionRecord],
    n_bins: usize,
) -> Result<CalibrationReport> {
    let (ece_value, bins) = ece(records, n_bins)?;
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(CalibrationReport {
        n: records.len(),
        n_classes: records[0].probs.len(),
        accuracy: correct as f64 / records.len() as f64,
        ece: ece_value,
        mmc_all: mmc(records, Subset::All)?,
        mmc_correct: optional(mmc(records, Subset::Correct))?,
        mmc_incorrect: optional(mmc(records, Subset::Incorrect))?,
        n_bins,
        bins,
    })
}

/// One range interval `[lo, hi)`; `lo = None` is the underflow group and
/// `hi = None` the overflow group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeGroup {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub count: usize,
    pub low_support: bool,
    pub report: Option<CalibrationReport>,
}

impl RangeGroup {
    pub fn is_interior(&self) -> bool {
        self.lo.is_some() && self.hi.is_some()
    }

    pub fn contains(&self, range_m: f64) -> bool {
        self.lo.is_none_or(|lo| range_m >= lo) && self.hi.is_none_or(|hi| range_m < hi)
    }
}

/// Splits records by range into underflow, `[e_i, e_{i+1})` intervals and
/// overflow, and reports each group. Groups with fewer than `min_count`
/// records are flagged low-support; empty groups carry no report.
pub fn range_binned_report(
    records: &[PredictionRecord],
    edges: &[f64],
    n_bins: usize,
    min_count: usize,
) -> Result<Vec<RangeGroup>> {
    if edges.is_empty() {
        return Err(Error::invalid("at least one range edge is required"));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "range edges must be strictly increasing, got {edges:?}"
        )));
    }
    let mut bounds: Vec<(Option<f64>, Option<f64>)> = vec![(None, Some(edges[0]))];
    bounds.extend(edges.windows(2).map(|w| (Some(w[0]), Some(w[1]))));
    bounds.push((Some(edges[edges.len() - 1]), None));

    bounds
        .into_iter()
        .map(|(lo, hi)| {
            let mut group = RangeGroup {
                lo,
                hi,
                count: 0,
                low_support: true,
                report: None,
            };
            let members: Vec<PredictionRecord> = records
                .iter()
                .filter(|r| group.contains(r.range_m))
                .cloned()
                .collect();
            group.count = members.len();
            group.low_support = members.len() < min_count;
            if !members.is_empty() {
                group.report = Some(calibration_report(&members, n_bins)?);
            }
            Ok(group)
        })
        .collect()
}

/// Range-study CSV: one row per group.
pub fn write_range_csv(groups: &[RangeGroup], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lo",
        "hi",
        "count",
        "low_support",
        "accuracy",
        "ece",
        "mmc_incorrect",
    ])
    .map_err(|e| Error::csv("range groups", e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for g in groups {
        let r = g.report.as_ref();
        w.write_record([
            opt(g.lo),
            opt(g.hi),
            g.count.to_string(),
            g.low_support.to_string(),
            opt(r.map(|r| r.accuracy)),
            opt(r.map(|r| r.ece)),
            opt(r.and_then(|r| r.mmc_incorrect)),
        ])
        .map_err(|e| Error::csv("range groups", e))?;
    }
    w.flush().map_err(|e| Error::io("<range csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two-class record with the given confidence and correctness.
    fn rec(confidence: f64, correct: bool) -> PredictionRecord {
        let probs = vec![confidence, 1.0 - confidence];
        let true_class = if correct { 0 } else { 1 };
        PredictionRecord::new(probs, true_class, 20.0, 1.0)
    }

    fn rec_at(range_m: f64) -> PredictionRecord {
        PredictionRecord {
            range_m,
            ..rec(0.8, true)
        }
    }

    fn four() -> Vec<PredictionRecord> {
        vec![
            rec(0.9, true),
            rec(0.8, true),
            rec(0.7, false),
            rec(0.6, true),
        ]
    }

    #[test]
    fn perfect_confident_classifier_has_zero_ece() {
        let records: Vec<_> = (0..17).map(|_| rec(1.0, true)).collect();
        assert_eq!(ece(&records, 10).unwrap().0, 0.0);
    }

    #[test]
    fn four_record_example() {
        let (value, bins) = ece(&four(), 2).unwrap();
        assert!((value - 0.15).abs() < 1e-15, "{value}");
        assert_eq!(bins.len(), 2);
        assert!((bins[0].mean_confidence - 0.65).abs() < 1e-15);
        assert_eq!(bins[0].accuracy, 0.5);
        assert!((bins[1].mean_confidence - 0.85).abs() < 1e-15);
        assert_eq!(bins[1].accuracy, 1.0);
        assert!(bins[0].is_overconfident());
        assert!(!bins[1].is_overconfident());
        assert!((ece_bruteforce_oracle(&four(), 2).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn single_bin_is_accuracy_minus_confidence() {
        let r = four();
        let expected = (0.75f64 - 0.75).abs();
        assert!((ece(&r, 1).unwrap().0 - expected).abs() < 1e-15);
        let r = vec![rec(0.9, false), rec(0.6, true), rec(0.7, true)];
        let expected = (2.0f64 / 3.0 - 2.2 / 3.0).abs();
        assert!((ece(&r, 1).unwrap().0 - expected).abs() < 1e-15);
        assert!((ece_bruteforce_oracle(&r, 1).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn single_record_single_bin() {
        let bins = reliability_table(&[rec(0.7, false)], 5).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].accuracy, 0.0);
        assert_eq!(bins[0].count, 1);
    }

    #[test]
    fn remainder_goes_to_low_confidence_bins() {
        let records: Vec<_> = (0..11).map(|i| rec(0.5 + i as f64 * 0.01, true)).collect();
        let sizes: Vec<usize> = reliability_table(&records, 4)
            .unwrap()
            .iter()
            .map(|b| b.count)
            .collect();
        assert_eq!(sizes, vec![3, 3, 3, 2]);
        let many: Vec<usize> = reliability_table(&records[..3], 5)
            .unwrap()
            .iter()
            .map(|b| b.count)
            .collect();
        assert_eq!(many, vec![1, 1, 1]);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(ece(&[], 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(ece(&four(), 0), Err(Error::InvalidArgument(_))));
        assert!(ece_bruteforce_oracle(&[], 3).is_err());
    }

    #[test]
    fn mmc_subsets() {
        let uniform = PredictionRecord::new(vec![1.0 / 7.0; 7], 3, 10.0, 1.0);
        let rs = vec![
            uniform.clone(),
            PredictionRecord {
                true_class: 0,
                ..uniform
            },
        ];
        for s in [Subset::All, Subset::Correct, Subset::Incorrect] {
            assert!((mmc(&rs, s).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        }
        let rs = vec![rec(0.9, true), rec(0.6, false)];
        assert_eq!(mmc(&rs, Subset::Correct).unwrap(), 0.9);
        assert_eq!(mmc(&rs, Subset::Incorrect).unwrap(), 0.6);
        let all_right = vec![rec(0.9, true)];
        assert!(matches!(
            mmc(&all_right, Subset::Incorrect),
            Err(Error::EmptySubset(_))
        ));
        let report = calibration_report(&all_right, 10).unwrap();
        assert_eq!(report.mmc_incorrect, None);
    }

    #[test]
    fn calibrated_stream_has_small_ece_and_tight_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let records: Vec<_> = (0..100_000)
            .map(|_| {
                let c = rng.random_range(0.5..1.0);
                rec(c, rng.random::<f64>() < c)
            })
            .collect();
        let (value, bins) = ece(&records, 10).unwrap();
        assert!(value < 0.01, "{value}");
        for b in bins {
            assert!((b.accuracy - b.mean_confidence).abs() < 0.03, "{b:?}");
        }
    }

    #[test]
    fn range_groups_use_half_open_intervals() {
        let records = vec![rec_at(12.0), rec_at(12.5)];
        let groups = range_binned_report(&records, &[10.0, 15.0], 10, 1).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].count, 0);
        assert!(groups[0].report.is_none());
        assert_eq!(
            (groups[1].lo, groups[1].hi, groups[1].count),
            (Some(10.0), Some(15.0), 2)
        );
        assert!(groups[1].report.is_some());
        assert_eq!(groups[2].count, 0);

        let groups = range_binned_report(&[rec_at(15.0)], &[10.0, 15.0, 20.0], 10, 1).unwrap();
        assert_eq!(groups[1].count, 0);
        assert_eq!(groups[2].count, 1);
        assert_eq!(groups[2].lo, Some(15.0));

        let flagged = range_binned_report(&records, &DEFAULT_RANGE_EDGES, 10, 30).unwrap();
        assert_eq!(flagged.len(), 8);
        assert!(flagged.iter().all(|g| g.low_support));
    }

    #[test]
    fn unsorted_edges_are_rejected() {
        let r = vec![rec_at(12.0)];
        assert!(matches!(
            range_binned_report(&r, &[15.0, 10.0], 10, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(range_binned_report(&r, &[10.0, 10.0], 10, 1).is_err());
    }

    #[test]
    fn bins_csv_contract() {
        let (_, bins) = ece(&four(), 2).unwrap();
        let mut buf = Vec::new();
        write_bins_csv(&bins, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lo,hi,count,mean_confidence,accuracy"
        );
        assert_eq!(lines.next().unwrap(), "0.6,0.7,2,0.6499999999999999,0.5");
    }

    fn arb_records() -> impl Strategy<Value = (Vec<PredictionRecord>, usize)> {
        (1usize..200, 1usize..20, any::<u64>()).prop_map(|(n, bins, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records = (0..n)
                .map(|_| {
                    // coarse grid so exact ties occur
                    let c = 0.5 + (rng.random_range(0..50) as f64) / 100.0;
                    rec(c, rng.random::<bool>())
                })
                .collect();
            (records, bins)
        })
    }

    proptest! {
        #[test]
        fn bins_partition_records((records, n_bins) in arb_records()) {
            let bins = reliability_table(&records, n_bins).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), records.len());
            let max = bins.iter().map(|b| b.count).max().unwrap();
            let min = bins.iter().map(|b| b.count).min().unwrap();
            prop_assert!(max - min <= 1);
            for w in bins.windows(2) {
                prop_assert!(w[0].confidence_hi <= w[1].confidence_lo);
            }
            for b in &bins {
                prop_assert!(b.confidence_lo <= b.mean_confidence + 1e-15);
                prop_assert!(b.mean_confidence <= b.confidence_hi + 1e-15);
            }
        }

        #[test]
        fn report_ece_recomputes_from_bins((records, n_bins) in arb_records()) {
            let report = calibration_report(&records, n_bins).unwrap();
            prop_assert!((report.ece - report.ece_from_bins()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&report.ece));
        }

        #[test]
        fn metrics_are_permutation_invariant_for_distinct_confidences(
            n in 1usize..150, n_bins in 1usize..15, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut records: Vec<_> = (0..n)
                .map(|i| rec(0.5 + 0.49 * (i as f64 + rng.random::<f64>() * 0.5) / n as f64, rng.random()))
                .collect();
            let a = calibration_report(&records, n_bins).unwrap();
            use rand::seq::SliceRandom;
            records.shuffle(&mut rng);
            let b = calibration_report(&records, n_bins).unwrap();
            prop_assert!((a.ece - b.ece).abs() < 1e-12);
            prop_assert!((a.mmc_all - b.mmc_all).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }
}
