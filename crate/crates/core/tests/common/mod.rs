#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treatrank::dgp::{AssignmentMode, StratifiedDgp, Stratum};
use treatrank::nuisance::NuisanceFit;

/// Two binary strata, two treatments; treatment 2 has the higher ATE but
/// the lower regression-weighted effect.
pub fn worked_example() -> StratifiedDgp {
    StratifiedDgp::new(
        2,
        vec![
            Stratum {
                code: 0,
                probability: 0.5,
                baseline: 0.0,
                propensity: vec![0.01, 0.5],
                effect: vec![-3.0, -2.0],
            },
            Stratum {
                code: 1,
                probability: 0.5,
                baseline: 1.0,
                propensity: vec![0.5, 0.01],
                effect: vec![3.0, 3.0],
            },
        ],
        1.0,
        AssignmentMode::ParallelBinary,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random parallel-binary DGP with `2..=10` strata, propensities in
/// `[p_lo, p_hi]` and effects in `[-5, 5]`.
pub fn random_dgp(
    rng: &mut ChaCha8Rng,
    num_treatments: usize,
    p_lo: f64,
    p_hi: f64,
) -> StratifiedDgp {
    let s = rng.random_range(2..=10usize);
    let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = probs[..s - 1].iter().sum();
    probs[s - 1] = 1.0 - head;
    let strata = probs
        .iter()
        .enumerate()
        .map(|(x, &probability)| Stratum {
            code: x as i64,
            probability,
            baseline: rng.random_range(-2.0..2.0),
            propensity: (0..num_treatments)
                .map(|_| rng.random_range(p_lo..=p_hi))
                .collect(),
            effect: (0..num_treatments)
                .map(|_| rng.random_range(-5.0..5.0))
                .collect(),
        })
        .collect();
    StratifiedDgp::new(num_treatments, strata, 1.0, AssignmentMode::ParallelBinary).unwrap()
}

/// Independent oracle: `E[p(1-p) tau] / E[p(1-p)]` from the raw tables.
pub fn direct_wate(dgp: &StratifiedDgp, j: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in dgp.strata() {
        let p = s.propensity[j - 1];
        let v = s.probability * p * (1.0 - p);
        num += v * s.effect[j - 1];
        den += v;
    }
    num / den
}

pub fn direct_ate(dgp: &StratifiedDgp, j: usize) -> f64 {
    dgp.strata()
        .iter()
        .map(|s| s.probability * s.effect[j - 1])
        .sum()
}

/// Outcome corruption: both arm regressions shifted by a stratum-dependent
/// bias `1 + 0.5 * code` (treated) and `-0.75` (control).
pub fn corrupt_outcome(fit: &mut NuisanceFit, codes: &[f64]) {
    for t in &mut fit.per_treatment {
        for (i, c) in codes.iter().enumerate() {
            t.mu_treated[i] += 1.0 + 0.5 * c;
            t.mu_control[i] -= 0.75;
        }
    }
}

/// Propensity corruption: odds of treatment doubled.
pub fn corrupt_propensity(fit: &mut NuisanceFit) {
    for t in &mut fit.per_treatment {
        for i in 0..t.p_treated.len() {
            let odds = 2.0 * t.p_treated[i] / (1.0 - t.p_treated[i]);
            t.p_treated[i] = odds / (1.0 + odds);
            t.p_control[i] = 1.0 - t.p_treated[i];
        }
    }
}
