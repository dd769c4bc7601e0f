//! Brute-force oracles shared by integration tests. Nothing here calls into
//! the code under test except to obtain the value being checked.
#![allow(dead_code)]

use migtriage_core::ml::nn::Network;
use migtriage_core::ml::tree::{fit_gini, GiniTreeParams};
use migtriage_core::rng::{stream, stream_rng};
use migtriage_core::population::{IntDistribution, LevelDistribution};
use migtriage_core::schema::City;
use migtriage_core::{AnswerKind, CityRegistry, Matrix, PopulationSpec, QuestionSpec, Schema, Topic};
use rand::Rng;

/// Small dataset with few distinct feature values (so ties are common) and
/// both classes present.
pub fn micro_dataset(seed: u64) -> (Matrix, Vec<bool>, Vec<f64>) {
    let mut rng = stream_rng(seed, 99, 0);
    let n = rng.gen_range(4..=14);
    let d = rng.gen_range(1..=4);
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0..5) as f64).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let weights: Vec<f64> = (0..n).map(|_| [1.0, 1.0, 2.0, 3.0][rng.gen_range(0..4)]).collect();
    (Matrix::new(n, d, data), labels, weights)
}

fn weighted_gini(rows: &[usize], labels: &[bool], weights: &[f64]) -> (f64, f64) {
    let w: f64 = rows.iter().map(|&i| weights[i]).sum();
    let wp: f64 = rows.iter().filter(|&&i| labels[i]).map(|&i| weights[i]).sum();
    if w == 0.0 {
        return (0.0, 0.0);
    }
    let p = wp / w;
    (w, 1.0 - p * p - (1.0 - p) * (1.0 - p))
}

/// Every split that reaches the maximum weighted Gini decrease, as
/// `(feature, rows going left)`, and that decrease.
pub fn best_stumps(x: &Matrix, labels: &[bool], weights: &[f64]) -> (f64, Vec<(usize, Vec<usize>)>) {
    let all: Vec<usize> = (0..x.rows()).collect();
    let (w, parent) = weighted_gini(&all, labels, weights);
    let mut best = f64::NEG_INFINITY;
    let mut winners = Vec::new();
    for f in 0..x.cols() {
        let mut values: Vec<f64> = all.iter().map(|&i| x.get(i, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for cut in values.windows(2) {
            let left: Vec<usize> = all.iter().copied().filter(|&i| x.get(i, f) <= cut[0]).collect();
            let right: Vec<usize> = all.iter().copied().filter(|&i| x.get(i, f) >= cut[1]).collect();
            let (wl, gl) = weighted_gini(&left, labels, weights);
            let (wr, gr) = weighted_gini(&right, labels, weights);
            let gain = parent - wl / w * gl - wr / w * gr;
            if gain > best + 1e-12 {
                best = gain;
                winners.clear();
            }
            if (gain - best).abs() <= 1e-12 {
                winners.push((f, left));
            }
        }
    }
    (best, winners)
}

/// Fits a single depth-1 tree and returns `(feature, rows going left)` of its
/// root split.
pub fn fitted_stump(x: &Matrix, labels: &[bool], weights: &[f64]) -> Option<(usize, Vec<usize>)> {
    let params = GiniTreeParams {
        max_depth: 1,
        min_samples_leaf: 1,
        features_per_split: x.cols(),
    };
    let tree = fit_gini(x, labels, weights, (0..x.rows()).collect(), params, &mut stream_rng(0, stream::TREE, 0));
    let (f, t) = tree.root_split()?;
    Some((f, (0..x.rows()).filter(|&i| x.get(i, f) < t).collect()))
}

/// Outcome of checking a fitted stump against the brute-force search.
pub fn stump_matches_oracle(seed: u64) -> Result<(), String> {
    let (x, labels, weights) = micro_dataset(seed);
    let (gain, winners) = best_stumps(&x, &labels, &weights);
    match fitted_stump(&x, &labels, &weights) {
        None if gain <= 1e-12 => Ok(()),
        None => Err(format!("seed {seed}: no split, oracle gain {gain}")),
        Some(split) if winners.contains(&split) => Ok(()),
        Some(split) => Err(format!("seed {seed}: split {split:?} is not among {winners:?} (gain {gain})")),
    }
}

/// Largest relative difference between the analytic gradient and central
/// differences for a random network, data set and class weighting. The
/// relative error is |a - n| / max(|a|, |n|, 1e-8).
pub fn max_gradient_error(seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 98, 0);
    let d = rng.gen_range(1..=5);
    let depth = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=6)).collect();
    let n = rng.gen_range(2..=8);
    let net = Network::init(d, &hidden, &mut rng);
    let x = Matrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let rows: Vec<usize> = (0..n).collect();

    let (_, grad) = net.loss_and_gradient(&x, &labels, &weights, &rows);
    let p0 = net.params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..p0.len() {
        let mut probe = net.clone();
        let mut p = p0.clone();
        p[j] = p0[j] + h;
        probe.set_params(&p);
        let up = probe.loss_and_gradient(&x, &labels, &weights, &rows).0;
        p[j] = p0[j] - h;
        probe.set_params(&p);
        let down = probe.loss_and_gradient(&x, &labels, &weights, &rows).0;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[j].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((grad[j] - numeric).abs() / denom);
    }
    worst
}

pub fn registry() -> CityRegistry {
    let cities = ["C1", "C2", "C3", "C4"]
        .iter()
        .map(|c| City {
            code: c.to_string(),
            name: format!("City {c}"),
        })
        .collect();
    CityRegistry::new(cities).unwrap()
}

fn question(id: &str, topic: Topic, answer_kind: AnswerKind, is_ml_feature: bool) -> QuestionSpec {
    QuestionSpec {
        id: id.into(),
        text: id.into(),
        topic,
        answer_kind,
        is_ml_feature,
    }
}

pub fn schema() -> Schema {
    let levels = |v: &[&str]| AnswerKind::Categorical(v.iter().map(|s| s.to_string()).collect());
    Schema::new(
        "fixture-1",
        vec![
            question("age", Topic::ProfileScreening, AnswerKind::Integer, true),
            question("sex", Topic::ProfileScreening, levels(&["F", "M"]), true),
            question("city_of_birth", Topic::MigrationBackground, AnswerKind::Categorical(vec![]), true),
            question("current_city", Topic::MigrationBackground, AnswerKind::Categorical(vec![]), true),
            question("duration_months", Topic::MigrationBackground, AnswerKind::Integer, true),
            question(
                "marital_status",
                Topic::ProfileScreening,
                levels(&["married", "divorced", "widowed", "single"]),
                true,
            ),
            question("accompanying_adult", Topic::MigrationBackground, AnswerKind::Boolean, true),
        ],
    )
    .unwrap()
}

pub fn population() -> PopulationSpec {
    PopulationSpec {
        age: IntDistribution::Uniform { low: 12, high: 25 },
        sex: LevelDistribution::uniform(["F", "M"]),
        city_of_birth: LevelDistribution::uniform(["C1", "C2", "C3", "C4"]),
        current_city: LevelDistribution {
            levels: vec![("C1".into(), 0.4), ("C2".into(), 0.3), ("C3".into(), 0.2), ("C4".into(), 0.1)],
        },
        duration_months: IntDistribution::Uniform { low: 0, high: 48 },
        marital_status: LevelDistribution {
            levels: vec![
                ("single".into(), 0.7),
                ("married".into(), 0.2),
                ("divorced".into(), 0.05),
                ("widowed".into(), 0.05),
            ],
        },
        accompanying_adult: 0.5,
    }
}
