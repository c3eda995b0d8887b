mod common;

use common::{calibrated_stream, four_records, random_records, rng};
use radcal::calibration::{calibration_report, ece, ece_bruteforce_oracle};
use rand::Rng;

#[test]
fn ece_matches_bruteforce_oracle_on_random_sets() {
    let mut rng = rng(0xECE);
    for case in 0..1000 {
        let n = rng.random_range(1..=500);
        let n_bins = rng.random_range(1..=20);
        let records = random_records(&mut rng, n);
        let fast = ece(&records, n_bins).unwrap().0;
        let slow = ece_bruteforce_oracle(&records, n_bins).unwrap();
        assert!(
            (fast - slow).abs() <= 1e-12,
            "case {case}: n={n} bins={n_bins} {fast} vs {slow}"
        );
    }
}

#[test]
fn four_record_example_is_exactly_015() {
    let value = ece(&four_records(), 2).unwrap().0;
    assert!((value - 0.15).abs() < 1e-15, "{value}");
    assert!((ece_bruteforce_oracle(&four_records(), 2).unwrap() - 0.15).abs() < 1e-15);
}

#[test]
fn calibrated_stream_is_nearly_calibrated() {
    let records = calibrated_stream(&mut rng(5), 100_000);
    let report = calibration_report(&records, 10).unwrap();
    assert!(report.ece < 0.01, "{}", report.ece);
    assert!((report.ece - report.ece_from_bins()).abs() < 1e-12);
}
