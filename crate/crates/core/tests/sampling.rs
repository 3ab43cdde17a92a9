mod common;

use common::{random_dgp, rng, worked_example};
use treatrank::dgp::{sample, AssignmentMode, StratifiedDgp};
use treatrank::nuisance::{assign_folds, fit_crossfit, LearnerSpec, NuisanceFit};

fn within_sigma(hits: usize, n: usize, p: f64, k: f64) -> bool {
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    (hits as f64 / n as f64 - p).abs() <= k * sd.max(1e-12)
}

#[test]
fn stratum_and_treatment_frequencies_match_the_tables() {
    let mut r = rng(11);
    for seed in 0..5 {
        let dgp = random_dgp(&mut r, 2, 0.05, 0.95);
        let n = 100_000;
        let data = sample(&dgp, n, seed).unwrap();
        for (x, s) in dgp.strata().iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| data.strata()[i] == x).collect();
            assert!(
                within_sigma(members.len(), n, s.probability, 5.0),
                "stratum {x}"
            );
            for j in 1..=2 {
                let treated = members.iter().filter(|&&i| data.treated(j)[i] == 1).count();
                assert!(
                    within_sigma(treated, members.len(), s.propensity[j - 1], 5.0),
                    "stratum {x} treatment {j}"
                );
            }
        }
    }
}

#[test]
fn noiseless_outcomes_are_baseline_plus_effects() {
    let dgp = worked_example().with_noise_sd(0.0).unwrap();
    let data = sample(&dgp, 5_000, 3).unwrap();
    for i in 0..data.len() {
        let s = &dgp.strata()[data.strata()[i]];
        let expected = s.baseline
            + s.effect[0] * f64::from(data.treated(1)[i])
            + s.effect[1] * f64::from(data.treated(2)[i]);
        assert_eq!(data.y()[i], expected);
    }
}

#[test]
fn multinomial_assigns_one_arm_with_the_table_probabilities() {
    let mut rows = worked_example().strata().to_vec();
    rows[0].propensity = vec![0.2, 0.3];
    rows[1].propensity = vec![0.45, 0.05];
    let dgp = StratifiedDgp::new(2, rows, 1.0, AssignmentMode::Multinomial).unwrap();
    let n = 100_000;
    let data = sample(&dgp, n, 17).unwrap();
    for x in 0..2 {
        let members: Vec<usize> = (0..n).filter(|&i| data.strata()[i] == x).collect();
        for arm in 0..=2 {
            let hits = members.iter().filter(|&&i| data.arm(i) == arm).count();
            let p = if arm == 0 {
                dgp.control_probability(1, x).unwrap()
            } else {
                dgp.strata()[x].propensity[arm - 1]
            };
            assert!(
                within_sigma(hits, members.len(), p, 5.0),
                "stratum {x} arm {arm}"
            );
        }
    }
    for i in 0..n {
        assert!(data.treated(1)[i] + data.treated(2)[i] <= 1);
    }
}

#[test]
fn same_seed_same_data() {
    let dgp = worked_example();
    let a = sample(&dgp, 1_000, 5).unwrap();
    let b = sample(&dgp, 1_000, 5).unwrap();
    let c = sample(&dgp, 1_000, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.y(), c.y());
}

#[test]
fn crossfit_stratum_means_converge_to_the_tables() {
    let dgp = worked_example();
    let n = 100_000;
    let data = sample(&dgp, n, 21).unwrap();
    let folds = assign_folds(n, 5, 22).unwrap();
    let fit = fit_crossfit(&data, &LearnerSpec::stratum_mean(), &folds, 0.0).unwrap();
    let truth = NuisanceFit::oracle(&dgp, &data).unwrap();
    for i in (0..n).step_by(97) {
        assert!((fit.y_hat[i] - truth.y_hat[i]).abs() < 0.05);
        for j in 1..=2 {
            let (a, b) = (fit.treatment(j), truth.treatment(j));
            assert!((a.p_treated[i] - b.p_treated[i]).abs() < 0.01);
            assert!((a.mu_control[i] - b.mu_control[i]).abs() < 0.05);
            // The p = 0.01 cells hold about 400 treated units per training split.
            assert!((a.mu_treated[i] - b.mu_treated[i]).abs() < 0.25);
        }
    }
}
