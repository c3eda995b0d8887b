#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radcal::classifier::{Mlp, PredictionRecord};
use radcal::labels::SoftLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor of the gradient relative error. Below it the absolute
/// error is what counts; central differences at step 1e-5 carry roundoff of
/// about `1e-16 * |loss| / 1e-5`, far under `1e-5 * GRAD_FLOOR`.
pub const GRAD_FLOOR: f64 = 1e-4;

/// Small end-to-end config: seconds per pipeline run.
pub const SMALL: &str = r#"{
  "dataset": { "sizes": { "train": 300, "val": 60, "test": 200 } },
  "train": { "epochs": 2, "hidden_dims": [16] },
  "n_seeds": 2
}"#;

pub fn radcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radcal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = radcal(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    out
}

/// Runs every subcommand in `dir` (which holds `config.json`) and returns
/// all produced files with their contents, or the first failing step.
pub fn pipeline(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let steps: [&[&str]; 5] = [
        &["--config", "config.json", "generate"],
        &["--config", "config.json", "train"],
        &["--config", "config.json", "evaluate"],
        &["--config", "config.json", "corrupt-sweep"],
        &[
            "report",
            "--aggregates",
            "eval/aggregate.json",
            "sweep/aggregate.json",
        ],
    ];
    for args in steps {
        let out = radcal(dir, args);
        if !out.status.success() {
            return Err(format!("{args:?}: {}", stderr(&out)));
        }
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    Ok(files)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of the single-example loss, in
/// flattened parameter order.
pub fn fd_gradient(mlp: &Mlp, x: &[f64], y: &SoftLabel, step: f64) -> Vec<f64> {
    let mut probe = mlp.clone();
    (0..mlp.param_count())
        .map(|i| {
            let orig = *probe.param_mut(i);
            *probe.param_mut(i) = orig + step;
            let up = probe.loss_and_grad(x, y).unwrap().0;
            *probe.param_mut(i) = orig - step;
            let down = probe.loss_and_grad(x, y).unwrap().0;
            *probe.param_mut(i) = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Random simplex point from normalised exponentials; some entries are
/// zeroed so one-hot and sparse targets are covered too.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                -rng.random::<f64>().max(1e-300).ln()
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// One random (network, input, soft target) instance.
pub fn gradient_instance(rng: &mut impl Rng) -> (Mlp, Vec<f64>, SoftLabel) {
    let input = rng.random_range(2..10);
    let hidden = rng.random_range(0..3);
    let mut dims = vec![input];
    dims.extend((0..hidden).map(|_| rng.random_range(2..9)));
    dims.push(rng.random_range(2..8));
    let mut mlp = Mlp::init(&dims, 6f64.sqrt(), rng).unwrap();
    // zero biases behind a dead unit put pre-activations exactly on the ReLU
    // kink, where the one-sided derivatives disagree
    for b in mlp.biases_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = SoftLabel {
        probs: random_simplex(rng, *dims.last().unwrap()),
    };
    (mlp, x, y)
}

/// Largest analytic-vs-numeric relative error over one instance.
pub fn max_gradient_error(mlp: &Mlp, x: &[f64], y: &SoftLabel, step: f64) -> f64 {
    let analytic = mlp.loss_and_grad(x, y).unwrap().1.flatten();
    let numeric = fd_gradient(mlp, x, y, step);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Random prediction records with a random class count. Confidences are
/// sometimes drawn from a coarse grid so that ties occur.
pub fn random_records(rng: &mut impl Rng, n: usize) -> Vec<PredictionRecord> {
    let classes = rng.random_range(2..8);
    let coarse = rng.random_bool(0.3);
    (0..n)
        .map(|_| {
            let mut probs = random_simplex(rng, classes);
            if coarse {
                let top = (0..classes)
                    .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                    .unwrap();
                let c = 1.0 / classes as f64
                    + (rng.random_range(0..5) as f64) * 0.1 * (1.0 - 1.0 / classes as f64);
                let rest = (1.0 - c) / (classes - 1) as f64;
                probs = (0..classes)
                    .map(|k| if k == top { c } else { rest })
                    .collect();
            }
            let truth = rng.random_range(0..classes);
            PredictionRecord::new(probs, truth, rng.random_range(3.0..43.0), 1.0)
        })
        .collect()
}

/// Records whose correctness is Bernoulli in their confidence `c ~ U(0.5, 1)`.
pub fn calibrated_stream(rng: &mut impl Rng, n: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|_| {
            let c = rng.random_range(0.5..1.0);
            let truth = if rng.random::<f64>() < c { 0 } else { 1 };
            PredictionRecord::new(vec![c, 1.0 - c], truth, 20.0, 1.0)
        })
        .collect()
}

/// Confidences 0.9, 0.8, 0.7, 0.6 with only the 0.7 prediction wrong. With
/// two bins: {0.6, 0.7} has accuracy 0.5 at confidence 0.65 and {0.8, 0.9}
/// accuracy 1 at 0.85, so ECE = 0.5 * 0.15 + 0.5 * 0.15 = 0.15.
pub fn four_records() -> Vec<PredictionRecord> {
    [(0.9, true), (0.8, true), (0.7, false), (0.6, true)]
        .into_iter()
        .map(|(c, ok)| PredictionRecord::new(vec![c, 1.0 - c], if ok { 0 } else { 1 }, 20.0, 1.0))
        .collect()
}

pub fn stats(r: [f64; 2], pi: [f64; 2], classes: usize) -> radcal::synth::DatasetStats {
    radcal::synth::DatasetStats {
        r_min: r[0],
        r_max: r[1],
        pi_min: pi[0],
        pi_max: pi[1],
        class_counts: vec![1; classes],
    }
}

/// Checks every smoothing-factor property over `cases` random draws and
/// returns the first violation.
pub fn check_smoothing_properties(seed: u64, cases: usize) -> Result<(), String> {
    use radcal::labels::{
        epsilon_from_power, epsilon_from_range, smooth_label, Prior, ALPHA_BOUND,
    };

    let mut rng = rng(seed);
    for case in 0..cases {
        let r_min = rng.random_range(0.5..20.0);
        let r_max = r_min + rng.random_range(0.1..60.0);
        let pi_min = rng.random_range(1e-3..10.0);
        let pi_max = pi_min * rng.random_range(1.01..1e4);
        let classes = rng.random_range(2..12);
        let st = stats([r_min, r_max], [pi_min, pi_max], classes);
        let alpha = rng.random_range(1e-6..ALPHA_BOUND);

        let at_rmin = epsilon_from_range(r_min, alpha, &st).unwrap();
        let at_pimax = epsilon_from_power(pi_max, alpha, &st).unwrap();
        if at_rmin != 0.0 || at_pimax != 0.0 {
            return Err(format!(
                "case {case}: eps at extremum {at_rmin} / {at_pimax}"
            ));
        }

        let (r1, r2) = ordered(
            rng.random_range(r_min..=r_max),
            rng.random_range(r_min..=r_max),
        );
        let (p1, p2) = ordered(
            rng.random_range(pi_min..=pi_max),
            rng.random_range(pi_min..=pi_max),
        );
        let e_r1 = epsilon_from_range(r1, alpha, &st).unwrap();
        let e_r2 = epsilon_from_range(r2, alpha, &st).unwrap();
        let e_p1 = epsilon_from_power(p1, alpha, &st).unwrap();
        let e_p2 = epsilon_from_power(p2, alpha, &st).unwrap();
        if e_r1 > e_r2 || e_p1 < e_p2 {
            return Err(format!("case {case}: monotonicity broken at alpha {alpha}"));
        }

        let prior = if rng.random_bool(0.5) {
            Prior::Uniform.resolve(classes, None).unwrap()
        } else {
            random_simplex(&mut rng, classes)
        };
        let class_id = rng.random_range(0..classes);
        for eps in [e_r1, e_r2, e_p1, e_p2] {
            let label = smooth_label(class_id, eps, &prior, classes).unwrap();
            let sum: f64 = label.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || label.probs.iter().any(|p| *p < 0.0) {
                return Err(format!("case {case}: label off the simplex, sum {sum}"));
            }
            if label.probs[class_id] <= 0.5 {
                return Err(format!("case {case}: truth mass {}", label.probs[class_id]));
            }
        }
    }
    Ok(())
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
