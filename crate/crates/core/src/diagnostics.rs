//! WATE decomposition, rank-reversal checks and treatment rankings.

use serde::{Deserialize, Serialize};

use crate::dgp::{contrast_variance, oracle_decomposition, Dataset, StratifiedDgp};
use crate::error::{Error, Result};
use crate::estimators::{EffectEstimate, Method};
use crate::nuisance::NuisanceFit;

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTerm {
    pub stratum: i64,
    pub probability: f64,
    pub tau: f64,
    pub gamma: f64,
}

/// `(ATE, Cov(tau, gamma), WATE)` of one treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub treatment: usize,
    pub ate: f64,
    pub cov_tau_gamma: f64,
    pub wate: f64,
    pub per_stratum: Vec<StratumTerm>,
    pub source: Source,
    /// Strata left out of an estimated report for lack of treated or control units.
    pub dropped_strata: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub ate: f64,
    pub cov_tau_gamma: f64,
    pub wate: f64,
}

/// `ate = E[tau]`, `wate = E[gamma tau]`, `cov = E[gamma tau] - E[gamma] E[tau]`,
/// after rescaling `gamma` to unit mean.
pub fn decompose(tau: &[f64], gamma: &[f64], probs: &[f64]) -> Result<Decomposition> {
    if tau.len() != gamma.len() || tau.len() != probs.len() || tau.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "decomposition tables are misaligned: {} effects, {} weights, {} probabilities",
            tau.len(),
            gamma.len(),
            probs.len()
        )));
    }
    if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "stratum probabilities must be non-negative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "stratum probabilities sum to {total}, expected 1"
        )));
    }
    let scale: f64 = probs.iter().zip(gamma).map(|(p, g)| p * g).sum();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(
            "regression weights must have a positive mean".into(),
        ));
    }
    let gamma: Vec<f64> = gamma.iter().map(|g| g / scale).collect();
    let e_tau: f64 = probs.iter().zip(tau).map(|(p, t)| p * t).sum();
    let e_gamma: f64 = probs.iter().zip(&gamma).map(|(p, g)| p * g).sum();
    let e_gamma_tau: f64 = probs
        .iter()
        .zip(&gamma)
        .zip(tau)
        .map(|((p, g), t)| p * g * t)
        .sum();
    Ok(Decomposition {
        ate: e_tau,
        cov_tau_gamma: e_gamma_tau - e_gamma * e_tau,
        wate: e_gamma_tau,
    })
}

/// Closed-form report straight from the DGP tables.
pub fn oracle_report(dgp: &StratifiedDgp, j: usize) -> Result<DecompositionReport> {
    let q = oracle_decomposition(dgp, j)?;
    let idx = j - 1;
    let per_stratum = dgp
        .strata()
        .iter()
        .zip(&q.gamma)
        .map(|(s, &gamma)| StratumTerm {
            stratum: s.code,
            probability: s.probability,
            tau: s.effect[idx],
            gamma,
        })
        .collect();
    Ok(DecompositionReport {
        treatment: j,
        ate: q.ate,
        cov_tau_gamma: q.cov_tau_gamma,
        wate: q.wate,
        per_stratum,
        source: Source::Oracle,
        dropped_strata: 0,
    })
}

/// Plug-in decomposition: cell mean differences for `tau(x)`, cell-averaged
/// propensities for `gamma(x)`, empirical stratum shares for `Pr(x)`.
pub fn estimate_decomposition(
    data: &Dataset,
    fit: &NuisanceFit,
    j: usize,
) -> Result<DecompositionReport> {
    data.check_treatment(j)?;
    if fit.len() != data.len() || fit.per_treatment.len() != data.num_treatments() {
        return Err(Error::InvalidArgument(
            "nuisance fit does not match the dataset".into(),
        ));
    }
    let s = data.num_strata();
    let w = data.treated(j);
    let y = data.y();
    let nuis = fit.treatment(j);
    #[derive(Clone, Default)]
    struct Cell {
        units: f64,
        treated: f64,
        treated_sum: f64,
        control: f64,
        control_sum: f64,
        p_treated_sum: f64,
        p_control_sum: f64,
    }
    let mut cells = vec![Cell::default(); s];
    for (i, &x) in data.strata().iter().enumerate() {
        let c = &mut cells[x];
        c.units += 1.0;
        c.p_treated_sum += nuis.p_treated[i];
        c.p_control_sum += nuis.p_control[i];
        if w[i] == 1 {
            c.treated += 1.0;
            c.treated_sum += y[i];
        } else if data.is_control(j, i) {
            c.control += 1.0;
            c.control_sum += y[i];
        }
    }
    let kept: Vec<usize> = (0..s)
        .filter(|&x| cells[x].treated > 0.0 && cells[x].control > 0.0)
        .collect();
    let populated = cells.iter().filter(|c| c.units > 0.0).count();
    if kept.is_empty() {
        return Err(Error::NotEstimable(format!(
            "treatment {j}: no stratum contains both treated and control units"
        )));
    }
    let kept_units: f64 = kept.iter().map(|&x| cells[x].units).sum();
    let probs: Vec<f64> = kept.iter().map(|&x| cells[x].units / kept_units).collect();
    let tau: Vec<f64> = kept
        .iter()
        .map(|&x| {
            let c = &cells[x];
            c.treated_sum / c.treated - c.control_sum / c.control
        })
        .collect();
    let raw: Vec<f64> = kept
        .iter()
        .map(|&x| {
            let c = &cells[x];
            contrast_variance(c.p_treated_sum / c.units, c.p_control_sum / c.units)
        })
        .collect();
    let d = decompose(&tau, &raw, &probs)?;
    let scale: f64 = probs.iter().zip(&raw).map(|(p, v)| p * v).sum();
    let per_stratum = kept
        .iter()
        .enumerate()
        .map(|(r, &x)| StratumTerm {
            stratum: data.strata_codes()[x],
            probability: probs[r],
            tau: tau[r],
            gamma: raw[r] / scale,
        })
        .collect();
    Ok(DecompositionReport {
        treatment: j,
        ate: d.ate,
        cov_tau_gamma: d.cov_tau_gamma,
        wate: d.wate,
        per_stratum,
        source: Source::Estimated,
        dropped_strata: populated - kept.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReversalCheck {
    pub reversed: bool,
    /// `(ATE_hi - ATE_lo) + min(0, WATE_hi - WATE_lo)` where `hi` is the
    /// higher-ATE treatment. A reporting aid only.
    pub margin: f64,
}

/// Whether the WATE ordering of two treatments strictly contradicts their
/// ATE ordering. Ties in either quantity never count as a reversal.
pub fn check_reversal(dec_j: &DecompositionReport, dec_k: &DecompositionReport) -> ReversalCheck {
    let (hi, lo) = if dec_j.ate > dec_k.ate {
        (dec_j, dec_k)
    } else if dec_k.ate > dec_j.ate {
        (dec_k, dec_j)
    } else {
        return ReversalCheck {
            reversed: false,
            margin: 0.0,
        };
    };
    let wate_gap = hi.wate - lo.wate;
    ReversalCheck {
        reversed: wate_gap < 0.0,
        margin: (hi.ate - lo.ate) + wate_gap.min(0.0),
    }
}

/// The reversal condition written through the decomposition: with
/// `ATE_j > ATE_k` as premise, `ATE_j + Cov_j < ATE_k + Cov_k`.
pub fn reversal_condition(dec_j: &DecompositionReport, dec_k: &DecompositionReport) -> bool {
    dec_j.ate > dec_k.ate && dec_j.ate + dec_j.cov_tau_gamma < dec_k.ate + dec_k.cov_tau_gamma
}

/// The three interpretable sufficient conditions for a reversal of `j`
/// (the higher-ATE treatment) and `k`:
/// `Cov_j < -delta`, `Cov_k > delta` and `ATE_j - ATE_k < 2 delta`.
///
/// Returns false when `j` does not have the strictly higher ATE or when
/// `delta` is not positive.
pub fn sufficient_condition_check(
    dec_j: &DecompositionReport,
    dec_k: &DecompositionReport,
    delta: f64,
) -> bool {
    delta > 0.0
        && dec_j.ate > dec_k.ate
        && dec_j.cov_tau_gamma < -delta
        && dec_k.cov_tau_gamma > delta
        && dec_j.ate - dec_k.ate < 2.0 * delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub ordering_by_ate: Vec<usize>,
    pub ordering_by_wate: Vec<usize>,
    pub reversed_pairs: Vec<(usize, usize)>,
    pub agreement: f64,
}

/// Treatments sorted by value, largest first; equal values keep the lower
/// treatment index first.
pub fn order_by_value(treatments: &[usize], values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..treatments.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(treatments[a].cmp(&treatments[b]))
    });
    idx.into_iter().map(|i| treatments[i]).collect()
}

/// Fraction of treatment pairs placed in the same relative order.
pub fn pairwise_agreement(a: &[usize], b: &[usize]) -> f64 {
    let pos = |order: &[usize], t: usize| order.iter().position(|&x| x == t);
    let mut pairs = 0usize;
    let mut concordant = 0usize;
    for (i, &s) in a.iter().enumerate() {
        for &t in &a[i + 1..] {
            pairs += 1;
            if let (Some(ps), Some(pt)) = (pos(b, s), pos(b, t)) {
                if ps < pt {
                    concordant += 1;
                }
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        concordant as f64 / pairs as f64
    }
}

/// Ranking from per-treatment ATE and WATE values, aligned with `treatments`.
pub fn rank_values(treatments: &[usize], ate: &[f64], wate: &[f64]) -> Result<RankingResult> {
    if treatments.len() != ate.len() || treatments.len() != wate.len() || treatments.is_empty() {
        return Err(Error::InvalidArgument(
            "ranking inputs are misaligned or empty".into(),
        ));
    }
    let ordering_by_ate = order_by_value(treatments, ate);
    let ordering_by_wate = order_by_value(treatments, wate);
    let mut reversed_pairs = Vec::new();
    for a in 0..treatments.len() {
        for b in a + 1..treatments.len() {
            let d_ate = ate[a] - ate[b];
            let d_wate = wate[a] - wate[b];
            if (d_ate > 0.0 && d_wate < 0.0) || (d_ate < 0.0 && d_wate > 0.0) {
                let (s, t) = (treatments[a], treatments[b]);
                reversed_pairs.push((s.min(t), s.max(t)));
            }
        }
    }
    reversed_pairs.sort_unstable();
    let agreement = pairwise_agreement(&ordering_by_ate, &ordering_by_wate);
    Ok(RankingResult {
        ordering_by_ate,
        ordering_by_wate,
        reversed_pairs,
        agreement,
    })
}

/// Ranks treatments by their ATE-targeting estimates (AIPW, or IPW when no
/// AIPW estimates are given) against their PLM (WATE) estimates. Only
/// contrasts against control are used.
pub fn rank_treatments(estimates: &[EffectEstimate]) -> Result<RankingResult> {
    let by = |m: Method| -> Vec<&EffectEstimate> {
        estimates
            .iter()
            .filter(|e| e.method == m && e.versus == 0)
            .collect()
    };
    let plm = by(Method::Plm);
    let ate_side = if by(Method::Aipw).is_empty() {
        by(Method::Ipw)
    } else {
        by(Method::Aipw)
    };
    if plm.is_empty() || ate_side.is_empty() {
        return Err(Error::InvalidArgument(
            "ranking needs PLM estimates and AIPW or IPW estimates".into(),
        ));
    }
    let mut treatments: Vec<usize> = plm.iter().map(|e| e.treatment).collect();
    treatments.sort_unstable();
    if treatments.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "more than one PLM estimate per treatment".into(),
        ));
    }
    let mut ate = Vec::with_capacity(treatments.len());
    let mut wate = Vec::with_capacity(treatments.len());
    for &t in &treatments {
        let a: Vec<_> = ate_side.iter().filter(|e| e.treatment == t).collect();
        if a.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "treatment {t} needs exactly one ATE-targeting estimate, found {}",
                a.len()
            )));
        }
        ate.push(a[0].point);
        wate.push(
            plm.iter()
                .find(|e| e.treatment == t)
                .map(|e| e.point)
                .unwrap_or(f64::NAN),
        );
    }
    if ate_side.len() != treatments.len() {
        return Err(Error::InvalidArgument(
            "ATE-targeting estimates cover a treatment with no PLM estimate".into(),
        ));
    }
    rank_values(&treatments, &ate, &wate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{AssignmentMode, Stratum};
    use crate::estimators::Estimand;

    fn worked_example() -> StratifiedDgp {
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

    fn report(ate: f64, cov: f64) -> DecompositionReport {
        DecompositionReport {
            treatment: 1,
            ate,
            cov_tau_gamma: cov,
            wate: ate + cov,
            per_stratum: vec![],
            source: Source::Oracle,
            dropped_strata: 0,
        }
    }

    #[test]
    fn decompose_worked_example_treatment1() {
        let g = crate::dgp::oracle_weights(&worked_example(), 1).unwrap();
        let d = decompose(&[-3.0, 3.0], &g, &[0.5, 0.5]).unwrap();
        assert_eq!(d.ate, 0.0);
        assert!((d.wate - 2.7714).abs() < 1e-4);
        assert!((d.cov_tau_gamma - 2.7714).abs() < 1e-4);
    }

    #[test]
    fn decompose_degenerate_inputs() {
        let d = decompose(&[1.0, -2.0, 4.0], &[1.0; 3], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(d.cov_tau_gamma, 0.0);
        assert_eq!(d.wate, d.ate);
        let d = decompose(&[1.5; 3], &[0.2, 3.0, 1.0], &[0.2, 0.3, 0.5]).unwrap();
        assert!(d.cov_tau_gamma.abs() < 1e-15);
        assert!((d.wate - 1.5).abs() < 1e-15);
        assert!(decompose(&[1.0, 2.0], &[1.0], &[0.5, 0.5]).is_err());
        assert!(decompose(&[1.0, 2.0], &[1.0, 1.0], &[0.5, 0.4]).is_err());
    }

    #[test]
    fn worked_example_reversal() {
        let d = worked_example();
        let r1 = oracle_report(&d, 1).unwrap();
        let r2 = oracle_report(&d, 2).unwrap();
        let check = check_reversal(&r1, &r2);
        assert!(check.reversed);
        assert!(check.margin < 0.0);
        assert_eq!(check, check_reversal(&r2, &r1));
        assert!(reversal_condition(&r2, &r1));
        assert!(!check_reversal(&r1, &r1.clone()).reversed);
        assert!(sufficient_condition_check(&r2, &r1, 1.0));
        assert!(!sufficient_condition_check(&r1, &r2, 1.0));
    }

    #[test]
    fn ties_are_not_reversals() {
        let check = check_reversal(&report(1.0, 0.5), &report(1.0, -0.5));
        assert!(!check.reversed);
        assert_eq!(check.margin, 0.0);
    }

    #[test]
    fn zero_covariances_never_satisfy_sufficient_conditions() {
        for delta in [1e-6, 0.1, 1.0, 10.0] {
            assert!(!sufficient_condition_check(
                &report(1.0, 0.0),
                &report(0.5, 0.0),
                delta
            ));
        }
        assert!(!sufficient_condition_check(
            &report(1.0, -2.0),
            &report(0.5, 2.0),
            0.0
        ));
    }

    #[test]
    fn ranking_worked_example_oracle() {
        let d = worked_example();
        let ate = [
            crate::dgp::oracle_ate(&d, 1).unwrap(),
            crate::dgp::oracle_ate(&d, 2).unwrap(),
        ];
        let wate = [
            crate::dgp::oracle_wate(&d, 1).unwrap(),
            crate::dgp::oracle_wate(&d, 2).unwrap(),
        ];
        let r = rank_values(&[1, 2], &ate, &wate).unwrap();
        assert_eq!(r.ordering_by_ate, vec![2, 1]);
        assert_eq!(r.ordering_by_wate, vec![1, 2]);
        assert_eq!(r.reversed_pairs, vec![(1, 2)]);
        assert_eq!(r.agreement, 0.0);
    }

    fn est(treatment: usize, method: Method, point: f64) -> EffectEstimate {
        EffectEstimate {
            treatment,
            versus: 0,
            method,
            estimand: method.estimand(),
            point,
            std_error: 0.1,
            n_used: 10,
        }
    }

    #[test]
    fn rank_treatments_from_estimates() {
        let r = rank_treatments(&[est(1, Method::Plm, 0.3), est(1, Method::Aipw, 0.2)]).unwrap();
        assert_eq!(r.ordering_by_ate, vec![1]);
        assert_eq!(r.agreement, 1.0);

        let ests = [
            est(1, Method::Plm, 1.0),
            est(2, Method::Plm, 1.0),
            est(3, Method::Plm, 2.0),
            est(1, Method::Aipw, 0.5),
            est(2, Method::Aipw, 0.5),
            est(3, Method::Aipw, 0.5),
        ];
        let r = rank_treatments(&ests).unwrap();
        assert_eq!(r.ordering_by_ate, vec![1, 2, 3]);
        assert_eq!(r.ordering_by_wate, vec![3, 1, 2]);
        assert!(r.reversed_pairs.is_empty());
        assert!((r.agreement - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ests[0].estimand, Estimand::Wate);

        let missing = [
            est(1, Method::Plm, 1.0),
            est(2, Method::Plm, 1.0),
            est(1, Method::Aipw, 0.5),
        ];
        assert!(rank_treatments(&missing).is_err());
    }
}
