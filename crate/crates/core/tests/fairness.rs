mod common;

use pate_fairness::experiment::{analyze, train_pipeline, DataSource, ExperimentConfig};
use pate_fairness::fairness::{
    bound_cor1, bound_cor2, bound_lemma_b1, bound_thm2, closeness_to_boundary, excess_risk,
    fairness_gap, group_gradient, group_means, group_smoothness, model_deviation,
    per_sample_excess, spearman, DeviationStats, RiskLoss,
};
use pate_fairness::rng::SeedStream;
use pate_fairness::{Architecture, Error, LabelTarget, ModelParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::{fd_gradient, relative_error};

/// Textbook Spearman for inputs without ties.
fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| v.iter().filter(|b| *b < a).count() as f64)
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn spearman_edge_cases() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
    assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    assert!(matches!(spearman(&x, &[1.0; 4]), Err(Error::Undefined(_))));
    assert!(matches!(
        spearman(&x, &[1.0]),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(matches!(spearman(&[1.0], &[1.0]), Err(Error::Undefined(_))));
    // Ties take the average rank: ranks (1.5, 1.5, 3) against (1, 2, 3).
    let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
}

#[test]
fn spearman_of_random_permutations_is_near_zero() {
    let mut rng = SeedStream::new(21).rng();
    let xs: Vec<f64> = (0..1000).map(f64::from).collect();
    for _ in 0..10 {
        let mut ys = xs.clone();
        ys.shuffle(&mut rng);
        assert!(spearman(&xs, &ys).unwrap().abs() < 0.1);
    }
}

#[test]
fn gap_and_group_means() {
    assert_eq!(fairness_gap(&[0.1, 0.4, 0.25]).unwrap(), 0.4 - 0.1);
    assert!(matches!(fairness_gap(&[0.1]), Err(Error::TooFewGroups(1))));
    let m = group_means(&[1.0, 2.0, 3.0, 5.0], &[0, 1, 0, 1], 2).unwrap();
    assert_eq!(m, [2.0, 3.5]);
    assert!(matches!(
        group_means(&[1.0], &[0], 2),
        Err(Error::GroupCoverage { group: 1 })
    ));
}

#[test]
fn closeness_peaks_on_the_boundary() {
    let p = ModelParams::from_values(Architecture::Logreg, 2, 2, vec![1.0, -1.0]).unwrap();
    assert_eq!(closeness_to_boundary(&p, &[1.0, 1.0]).unwrap(), 0.5);
    let far = closeness_to_boundary(&p, &[5.0, -5.0]).unwrap();
    let near = closeness_to_boundary(&p, &[0.5, 0.0]).unwrap();
    assert!(far < near && near < 0.5);
}

#[test]
fn identical_runs_have_no_excess() {
    let p = ModelParams::from_values(Architecture::Logreg, 2, 2, vec![0.3, -0.7]).unwrap();
    let xs = [[1.0, 2.0], [-1.0, 0.5]];
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let ts = [LabelTarget::Hard(0), LabelTarget::Hard(1)];
    for loss in [RiskLoss::ZeroOne, RiskLoss::CrossEntropy] {
        let e = per_sample_excess(&refs, &ts, &p, &[p.clone(), p.clone()], loss).unwrap();
        assert_eq!(e, [0.0, 0.0]);
    }
    assert!(matches!(
        excess_risk(0, &[], &[], &p, std::slice::from_ref(&p), RiskLoss::ZeroOne),
        Err(Error::GroupCoverage { .. })
    ));
    assert!(matches!(
        per_sample_excess(&refs, &ts, &p, &[], RiskLoss::ZeroOne),
        Err(Error::EmptyRuns)
    ));
}

fn logreg_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, d)
}

/// Dimension, inputs, labels, groups, clean parameters and perturbations.
type AuditProblem = (
    usize,
    Vec<Vec<f64>>,
    Vec<usize>,
    Vec<usize>,
    Vec<f64>,
    Vec<Vec<f64>>,
);

/// A binary logistic problem with two groups and a few perturbed models.
fn audit_problem() -> impl Strategy<Value = AuditProblem> {
    (1usize..5, 4usize..30, 1usize..6).prop_flat_map(|(d, n, r)| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n),
            prop::collection::vec(0usize..2, n),
            prop::collection::vec(0usize..2, n),
            logreg_strategy(d),
            prop::collection::vec(prop::collection::vec(-0.8f64..0.8, d), r),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spearman_matches_textbook_formula_without_ties(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40),
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let distinct = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1])
        };
        prop_assume!(distinct(&xs) && distinct(&ys));
        let r = spearman(&xs, &ys).unwrap();
        prop_assert!((r - spearman_oracle(&xs, &ys)).abs() < 1e-9);
        let cubed: Vec<f64> = xs.iter().map(|v| v.powi(3) + 1.0).collect();
        prop_assert!((spearman(&cubed, &ys).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn second_moment_dominates_squared_first(d in prop::collection::vec(0.0f64..100.0, 1..50)) {
        let s = DeviationStats::from_distances(d).unwrap();
        prop_assert!(s.second_moment >= s.first_moment.powi(2) * (1.0 - 1e-12));
    }

    #[test]
    fn group_gradient_matches_finite_differences((d, xs, ys, _, theta, _) in audit_problem()) {
        let p = ModelParams::from_values(Architecture::Logreg, d, 2, theta).unwrap();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ts: Vec<LabelTarget> = ys.iter().map(|&y| LabelTarget::Hard(y)).collect();
        let (g, n) = group_gradient(0, &p, &refs, &ts).unwrap();
        prop_assert!(relative_error(&g, &fd_gradient(&p, &refs, &ts, 0.0)) <= 1e-5);
        prop_assert!((n - g.iter().map(|v| v * v).sum::<f64>().sqrt()).abs() < 1e-12);
    }

    /// Convexity and smoothness make both bounds hold for any perturbation.
    #[test]
    fn cross_entropy_bounds_hold_for_any_perturbation(
        (d, xs, ys, groups, theta, deltas) in audit_problem(),
    ) {
        prop_assume!(groups.contains(&0) && groups.contains(&1));
        let clean = ModelParams::from_values(Architecture::Logreg, d, 2, theta.clone()).unwrap();
        let runs: Vec<ModelParams> = deltas
            .iter()
            .map(|dv| clean.with_values(theta.iter().zip(dv).map(|(a, b)| a + b).collect()).unwrap())
            .collect();
        let dev = model_deviation(&clean, &runs).unwrap();
        let mut risks = Vec::new();
        let mut grads = Vec::new();
        let mut betas = Vec::new();
        for a in 0..2 {
            let xa: Vec<&[f64]> = xs.iter().zip(&groups).filter(|(_, g)| **g == a).map(|(x, _)| x.as_slice()).collect();
            let ta: Vec<LabelTarget> = ys.iter().zip(&groups).filter(|(_, g)| **g == a).map(|(y, _)| LabelTarget::Hard(*y)).collect();
            let r = excess_risk(a, &xa, &ta, &clean, &runs, RiskLoss::CrossEntropy).unwrap();
            let (_, gn) = group_gradient(a, &clean, &xa, &ta).unwrap();
            let beta = group_smoothness(&clean, &xa, &ta).unwrap().beta;
            let b = bound_lemma_b1(gn, beta, &dev).unwrap();
            prop_assert!(r <= b * (1.0 + 1e-9) + 1e-12, "group {}: {} > {}", a, r, b);
            risks.push(r);
            grads.push(gn);
            betas.push(beta);
        }
        let gap = fairness_gap(&risks).unwrap();
        let bound = bound_thm2(grads.iter().copied().fold(0.0, f64::max), betas.iter().copied().fold(0.0, f64::max), &dev).unwrap();
        prop_assert!(gap <= bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn deviation_bounds_scale_inversely_with_lambda(
        probs in prop::collection::vec(0.0f64..0.5, 1..20),
        lambda in 0.1f64..100.0,
    ) {
        let xs: Vec<Vec<f64>> = (0..probs.len()).map(|i| vec![i as f64 + 1.0, 1.0]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let m = probs.len();
        let b1 = bound_cor1(&probs, &refs, m, lambda).unwrap();
        let b2 = bound_cor2(&probs, &refs, m, lambda).unwrap();
        prop_assert!((bound_cor1(&probs, &refs, m, 2.0 * lambda).unwrap() - b1 / 2.0).abs() <= 1e-12 * b1.max(1.0));
        prop_assert!((bound_cor2(&probs, &refs, m, 2.0 * lambda).unwrap() - b2 / 4.0).abs() <= 1e-12 * b2.max(1.0));
    }
}

#[test]
fn bounds_reject_bad_arguments() {
    let x = [1.0];
    let refs: Vec<&[f64]> = vec![&x];
    assert!(bound_cor1(&[0.1], &refs, 1, 0.0).is_err());
    assert!(bound_cor1(&[0.1], &refs, 0, 1.0).is_err());
    assert!(bound_cor1(&[0.1, 0.2], &refs, 2, 1.0).is_err());
    assert!(bound_cor2(&[-0.1], &refs, 1, 1.0).is_err());
}

#[test]
fn larger_norm_group_bears_more_excess_risk() {
    let mut wins = 0;
    for seed in 0..20 {
        let cfg = ExperimentConfig {
            data: DataSource::Synth {
                n: 4000,
                dim: 10,
                margins: [1.0, 1.0],
                scales: [1.0, 3.0],
            },
            standardize: false,
            sigma: 50.0,
            repetitions: 50,
            seed,
            ..ExperimentConfig::default()
        };
        let r = analyze(&train_pipeline(&cfg).unwrap(), RiskLoss::CrossEntropy).unwrap();
        let risks = r.group_risks();
        wins += usize::from(risks[1] > risks[0]);
    }
    assert!(
        wins >= 18,
        "larger-norm group had larger excess risk in {wins}/20 seeds"
    );
}
