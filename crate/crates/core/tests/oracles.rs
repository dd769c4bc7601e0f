//! Learners and samplers checked against independent brute-force oracles.

mod support;

use migtriage_core::ml::boosting::BoostedTrees;
use migtriage_core::ml::forest::RandomForest;
use migtriage_core::ml::svm::{svm_objective, LinearSvm};
use migtriage_core::ml::{BoostingParams, ForestParams, StepSchedule, SvmParams};
use migtriage_core::rng::{stream, stream_rng};
use migtriage_core::{build_layout, encode_profile, label_profile, sample_population, Matrix, RuleSet};
use rand::Rng;

fn accuracy(scores: impl Iterator<Item = f64>, labels: &[bool]) -> f64 {
    let hits = scores.zip(labels).filter(|(s, &y)| (*s >= 0.5) == y).count();
    hits as f64 / labels.len() as f64
}

/// Two well separated Gaussian-ish blobs in the plane.
fn separable(seed: u64) -> (Matrix, Vec<bool>) {
    let mut rng = stream_rng(seed, 97, 0);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80 {
        let pos = i % 2 == 0;
        let c = if pos { 2.0 } else { -2.0 };
        data.push(c + rng.gen_range(-1.0..1.0));
        data.push(c * 0.5 + rng.gen_range(-1.0..1.0));
        labels.push(pos);
    }
    (Matrix::new(80, 2, data), labels)
}

/// Minimum of `f(b)` for a convex `f` on `[lo, hi]`.
fn ternary(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..100 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f((lo + hi) / 2.0)
}

/// Grid over `w` with an exact line search over `b`, then a finer grid
/// around the best `w`.
fn svm_oracle_minimum(x: &Matrix, labels: &[bool], weights: &[f64], c: f64) -> f64 {
    let value = |w: [f64; 2]| ternary(-10.0, 10.0, |b| svm_objective(x, labels, weights, c, &w, b));
    let (mut center, mut step) = ([0.0, 0.0], 0.25);
    let mut best = value(center);
    for _ in 0..6 {
        let start = center;
        for i in -12..=12 {
            for j in -12..=12 {
                let w = [start[0] + f64::from(i) * step, start[1] + f64::from(j) * step];
                let v = value(w);
                if v < best {
                    best = v;
                    center = w;
                }
            }
        }
        step /= 6.0;
    }
    best
}

#[test]
fn linear_svm_reaches_the_brute_force_optimum_on_separable_data() {
    for seed in 0..3 {
        let (x, labels) = separable(seed);
        let weights = vec![1.0; x.rows()];
        let params = SvmParams {
            c: 10.0,
            epochs: 2000,
            learning_rate: 0.5,
            schedule: StepSchedule::InverseSqrt,
        };
        let (svm, _) = LinearSvm::fit(&x, &labels, &weights, &params);
        let fitted = svm_objective(&x, &labels, &weights, params.c, &svm.weights, svm.bias);
        let oracle = svm_oracle_minimum(&x, &labels, &weights, params.c);
        assert!(fitted <= oracle * 1.02 + 1e-3, "seed {seed}: fitted {fitted}, oracle {oracle}");
        let margins = x.iter_rows().map(|r| svm.margin(r));
        assert_eq!(margins.zip(&labels).filter(|(m, &y)| (*m > 0.0) != y).count(), 0);
    }
}

fn xor(n: usize, seed: u64) -> (Matrix, Vec<bool>) {
    let mut rng = stream_rng(seed, 96, 0);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    // Equal quadrant counts, so no half-plane beats 3 of 4 clusters.
    for i in 0..n {
        let (a, b) = (i % 2 == 0, i % 4 < 2);
        let sign = |v: bool| if v { 1.0 } else { -1.0 };
        data.push(sign(a) + rng.gen_range(-0.4..0.4));
        data.push(sign(b) + rng.gen_range(-0.4..0.4));
        labels.push(a != b);
    }
    (Matrix::new(n, 2, data), labels)
}

/// Best accuracy of any half-plane, over 720 directions and every offset
/// between projected points.
fn best_linear_accuracy(x: &Matrix, labels: &[bool]) -> f64 {
    let n = labels.len();
    let mut best: f64 = 0.0;
    for k in 0..720 {
        let angle = f64::from(k) * std::f64::consts::PI / 360.0;
        let mut proj: Vec<(f64, bool)> = x.iter_rows().zip(labels).map(|(r, &y)| (r[0] * angle.cos() + r[1] * angle.sin(), y)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Everything above the cut is positive: start with all positive.
        let mut correct = labels.iter().filter(|&&y| y).count();
        best = best.max(correct as f64 / n as f64);
        for &(_, y) in &proj {
            if y {
                correct -= 1;
            } else {
                correct += 1;
            }
            best = best.max(correct as f64 / n as f64);
        }
    }
    best
}

#[test]
fn forest_solves_xor_and_a_linear_svm_cannot() {
    let (x, labels) = xor(400, 1);
    let weights = vec![1.0; x.rows()];
    let forest = RandomForest::fit(
        &x,
        &labels,
        &weights,
        &ForestParams {
            n_trees: 25,
            max_depth: 4,
            min_samples_leaf: 2,
            features_per_split: 2,
            bootstrap: true,
        },
        3,
    );
    let rf = accuracy(x.iter_rows().map(|r| forest.predict(r)), &labels);
    assert!(rf >= 0.99, "forest accuracy {rf}");

    let oracle = best_linear_accuracy(&x, &labels);
    assert!(oracle <= 0.76, "linear oracle {oracle}");
    let (svm, _) = LinearSvm::fit(
        &x,
        &labels,
        &weights,
        &SvmParams {
            c: 1.0,
            epochs: 300,
            learning_rate: 0.5,
            schedule: StepSchedule::InverseSqrt,
        },
    );
    let sv = accuracy(x.iter_rows().map(|r| svm.margin(r) + 0.5), &labels);
    assert!(sv <= 0.75 && sv <= oracle + 1e-12, "svm accuracy {sv}, oracle {oracle}");
}

#[test]
fn stumps_match_exhaustive_search() {
    let failures: Vec<String> = (0..100).filter_map(|s| support::stump_matches_oracle(s).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn single_tree_forest_without_bootstrap_is_the_oracle_stump() {
    for seed in 0..50 {
        let (x, labels, weights) = support::micro_dataset(seed);
        let params = ForestParams {
            n_trees: 1,
            max_depth: 1,
            min_samples_leaf: 1,
            features_per_split: x.cols(),
            bootstrap: false,
        };
        let forest = RandomForest::fit(&x, &labels, &weights, &params, seed);
        let (gain, winners) = support::best_stumps(&x, &labels, &weights);
        match forest.trees[0].root_split() {
            None => assert!(gain <= 1e-12, "seed {seed}"),
            Some((f, t)) => {
                let left: Vec<usize> = (0..x.rows()).filter(|&i| x.get(i, f) < t).collect();
                assert!(winners.contains(&(f, left)), "seed {seed}");
            }
        }
    }
}

#[test]
fn network_gradients_match_central_differences() {
    for seed in 0..20 {
        let err = support::max_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn boosting_training_loss_never_increases() {
    let (schema, registry) = (support::schema(), support::registry());
    let layout = build_layout(schema.questions(), &registry).unwrap();
    let rules = migtriage_core::parse_ruleset("BASE_LOG_ODDS -2\nRULE young: age < 18 => 2\nRULE alone: accompanying_adult = false => 1.5\n", &schema).unwrap();
    let profiles = sample_population(&support::population(), 600, 5);
    let rows: Vec<Vec<f64>> = profiles.iter().map(|p| encode_profile(p, &layout).unwrap().values).collect();
    let labels: Vec<bool> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| label_profile(&rules, p, &mut stream_rng(5, stream::LABEL, i as u64)))
        .collect();
    let x = Matrix::from_rows(&rows);
    let weights: Vec<f64> = labels.iter().map(|&y| if y { 3.0 } else { 1.0 }).collect();
    let params = BoostingParams {
        n_rounds: 40,
        learning_rate: 0.3,
        max_depth: 3,
        lambda: 1.0,
        min_child_weight: 1.0,
    };
    let (_, history) = BoostedTrees::fit(&x, &labels, &weights, &params);
    assert_eq!(history.len(), params.n_rounds + 1);
    for w in history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{history:?}");
    }
}

#[test]
fn label_rate_matches_the_logistic_of_the_base_log_odds() {
    let rules = RuleSet {
        base_log_odds: 0.5,
        ..RuleSet::default()
    };
    let profiles = sample_population(&support::population(), 10_000, 8);
    let positives = profiles
        .iter()
        .enumerate()
        .filter(|(i, p)| label_profile(&rules, p, &mut stream_rng(8, stream::LABEL, *i as u64)))
        .count();
    let rate = positives as f64 / 10_000.0;
    // logistic(0.5) = 0.6225
    assert!((0.605..=0.640).contains(&rate), "rate {rate}");
}

#[test]
fn sampled_age_mean_is_within_three_standard_errors() {
    let spec = support::population();
    let (low, high) = (12.0, 25.0);
    let oracle_mean = (low + high) / 2.0;
    let width: f64 = high - low + 1.0;
    let sd = ((width * width - 1.0) / 12.0).sqrt();
    let n = 10_000;
    let ages = sample_population(&spec, n, 21);
    let mean = ages.iter().map(|p| p.age as f64).sum::<f64>() / n as f64;
    assert!((mean - oracle_mean).abs() <= 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
    assert!(ages.iter().all(|p| (12..=25).contains(&p.age)));
}
