//! Point estimators built on nuisance predictions.
//!
//! * PLM: residual-on-residual slope. Under heterogeneity it targets the
//!   variance-weighted WATE, not the ATE.
//! * AIPW: mean difference of doubly robust pseudo-outcomes; targets the ATE.
//! * IPW: Horvitz-Thompson contrast; targets the ATE.

use serde::{Deserialize, Serialize};

use crate::dgp::{AssignmentMode, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Plm,
    Aipw,
    Ipw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Plm, Method::Aipw, Method::Ipw];

    pub fn estimand(self) -> Estimand {
        match self {
            Method::Plm => Estimand::Wate,
            Method::Aipw | Method::Ipw => Estimand::Ate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Plm => "PLM",
            Method::Aipw => "AIPW",
            Method::Ipw => "IPW",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimand {
    Wate,
    Ate,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Wate => "WATE",
            Estimand::Ate => "ATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub treatment: usize,
    /// Arm the treatment is contrasted with; 0 is control.
    pub versus: usize,
    pub method: Method,
    pub estimand: Estimand,
    pub point: f64,
    pub std_error: f64,
    pub n_used: usize,
}

fn check_inputs(data: &Dataset, fit: &NuisanceFit) -> Result<()> {
    if fit.len() != data.len() || fit.per_treatment.len() != data.num_treatments() {
        return Err(Error::InvalidArgument(
            "nuisance fit does not match the dataset".into(),
        ));
    }
    if fit.mode != data.mode() {
        return Err(Error::InvalidArgument(
            "nuisance fit and dataset use different assignment modes".into(),
        ));
    }
    Ok(())
}

/// Fails unless treatment `j` has at least one treated and one control unit.
fn check_support(data: &Dataset, j: usize) -> Result<()> {
    let treated = data.treated(j).iter().filter(|&&w| w == 1).count();
    let control = (0..data.len()).filter(|&i| data.is_control(j, i)).count();
    if treated == 0 || control == 0 {
        return Err(Error::NotEstimable(format!(
            "treatment {j} has {treated} treated and {control} control units"
        )));
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Residual-on-residual regression for treatment `j`.
///
/// `point = sum(W~ Y~) / sum(W~^2)` with a heteroskedasticity-robust (HC0)
/// standard error. Under `Multinomial` only units in `{0, j}` are used, with
/// the contrast propensity `p_j / (p_j + p_0)`.
pub fn plm_estimate(data: &Dataset, fit: &NuisanceFit, j: usize) -> Result<EffectEstimate> {
    data.check_treatment(j)?;
    check_inputs(data, fit)?;
    check_support(data, j)?;
    let w = data.treated(j);
    let y = data.y();
    let nuis = fit.treatment(j);
    let mut residuals = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (w_res, y_res) = match data.mode() {
            AssignmentMode::ParallelBinary => {
                (f64::from(w[i]) - nuis.p_treated[i], y[i] - fit.y_hat[i])
            }
            AssignmentMode::Multinomial => {
                if w[i] == 0 && !data.is_control(j, i) {
                    continue;
                }
                (
                    f64::from(w[i]) - nuis.contrast_propensity(i),
                    y[i] - nuis.contrast_outcome(i),
                )
            }
        };
        residuals.push((w_res, y_res));
    }
    let sxx: f64 = residuals.iter().map(|(w, _)| w * w).sum();
    if sxx == 0.0 || !sxx.is_finite() {
        return Err(Error::NoVariation { treatment: j });
    }
    let sxy: f64 = residuals.iter().map(|(w, y)| w * y).sum();
    let point = sxy / sxx;
    let meat: f64 = residuals
        .iter()
        .map(|(w, y)| {
            let e = y - point * w;
            w * w * e * e
        })
        .sum();
    Ok(EffectEstimate {
        treatment: j,
        versus: 0,
        method: Method::Plm,
        estimand: Estimand::Wate,
        point,
        std_error: meat.sqrt() / sxx,
        n_used: residuals.len(),
    })
}

/// Per-unit pseudo-outcomes `mu + 1{arm} (Y - mu) / p` for every treatment
/// and for the control group it is contrasted with.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    /// `treated[j - 1][i]`: estimated potential outcome of unit `i` under `j`.
    pub treated: Vec<Vec<f64>>,
    /// `control[j - 1][i]`: the same under treatment `j`'s control. Under
    /// `Multinomial` every entry is the shared control arm.
    pub control: Vec<Vec<f64>>,
}

impl PseudoOutcomes {
    /// Per-unit effect score of arm `j` against control; zero for `j = 0`.
    pub fn contrast(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            return vec![0.0; self.treated.first().map_or(0, Vec::len)];
        }
        self.treated[j - 1]
            .iter()
            .zip(&self.control[j - 1])
            .map(|(t, c)| t - c)
            .collect()
    }
}

pub fn pseudo_outcomes(data: &Dataset, fit: &NuisanceFit) -> Result<PseudoOutcomes> {
    check_inputs(data, fit)?;
    let y = data.y();
    let k = data.num_treatments();
    let mut treated = Vec::with_capacity(k);
    let mut control = Vec::with_capacity(k);
    for j in 1..=k {
        let w = data.treated(j);
        let nuis = fit.treatment(j);
        let gamma = |mu: f64, member: bool, p: f64, yi: f64| {
            if member {
                mu + (yi - mu) / p
            } else {
                mu
            }
        };
        treated.push(
            (0..data.len())
                .map(|i| gamma(nuis.mu_treated[i], w[i] == 1, nuis.p_treated[i], y[i]))
                .collect(),
        );
        control.push(
            (0..data.len())
                .map(|i| {
                    gamma(
                        nuis.mu_control[i],
                        data.is_control(j, i),
                        nuis.p_control[i],
                        y[i],
                    )
                })
                .collect(),
        );
    }
    Ok(PseudoOutcomes { treated, control })
}

/// AIPW contrast of arm `a` against arm `b` (0 = control).
pub fn aipw_estimate(
    data: &Dataset,
    fit: &NuisanceFit,
    a: usize,
    b: usize,
) -> Result<EffectEstimate> {
    for arm in [a, b] {
        if arm > data.num_treatments() {
            return Err(Error::InvalidArgument(format!(
                "arm {arm} outside 0..={}",
                data.num_treatments()
            )));
        }
    }
    check_inputs(data, fit)?;
    let estimate = |point, std_error| EffectEstimate {
        treatment: a,
        versus: b,
        method: Method::Aipw,
        estimand: Estimand::Ate,
        point,
        std_error,
        n_used: data.len(),
    };
    if a == b {
        return Ok(estimate(0.0, 0.0));
    }
    for arm in [a, b] {
        if arm > 0 {
            check_support(data, arm)?;
        }
    }
    let gamma = pseudo_outcomes(data, fit)?;
    let (ca, cb) = (gamma.contrast(a), gamma.contrast(b));
    let scores: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
    let (point, se) = mean_and_se(&scores);
    Ok(estimate(point, se))
}

/// Inverse-propensity-weighted contrast of treatment `j` against its control.
pub fn ipw_estimate(data: &Dataset, fit: &NuisanceFit, j: usize) -> Result<EffectEstimate> {
    data.check_treatment(j)?;
    check_inputs(data, fit)?;
    check_support(data, j)?;
    let w = data.treated(j);
    let y = data.y();
    let nuis = fit.treatment(j);
    let scores: Vec<f64> = (0..data.len())
        .map(|i| {
            let t = if w[i] == 1 {
                y[i] / nuis.p_treated[i]
            } else {
                0.0
            };
            let c = if data.is_control(j, i) {
                y[i] / nuis.p_control[i]
            } else {
                0.0
            };
            t - c
        })
        .collect();
    let (point, se) = mean_and_se(&scores);
    Ok(EffectEstimate {
        treatment: j,
        versus: 0,
        method: Method::Ipw,
        estimand: Estimand::Ate,
        point,
        std_error: se,
        n_used: data.len(),
    })
}

/// Treatment `j` against control with the given method.
pub fn estimate(
    data: &Dataset,
    fit: &NuisanceFit,
    j: usize,
    method: Method,
) -> Result<EffectEstimate> {
    match method {
        Method::Plm => plm_estimate(data, fit, j),
        Method::Aipw => {
            data.check_treatment(j)?;
            aipw_estimate(data, fit, j, 0)
        }
        Method::Ipw => ipw_estimate(data, fit, j),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample, StratifiedDgp, Stratum};
    use crate::nuisance::{assign_folds, fit_crossfit, fit_full_sample, LearnerSpec};

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

    fn crossfit(dgp: &StratifiedDgp, n: usize, seed: u64) -> (Dataset, NuisanceFit) {
        let data = sample(dgp, n, seed).unwrap();
        let folds = assign_folds(n, 5, seed).unwrap();
        let fit = fit_crossfit(&data, &LearnerSpec::stratum_mean(), &folds, 0.01).unwrap();
        (data, fit)
    }

    #[test]
    fn plm_worked_example_targets_wate() {
        let (data, fit) = crossfit(&worked_example(), 10_000, 31);
        let est = plm_estimate(&data, &fit, 1).unwrap();
        assert_eq!(est.estimand, Estimand::Wate);
        assert!((est.point - 2.7714).abs() < 0.15, "{est:?}");
    }

    #[test]
    fn plm_constant_effect() {
        let mut rows = worked_example().strata().to_vec();
        for r in &mut rows {
            r.effect = vec![2.0, 2.0];
        }
        let dgp = StratifiedDgp::new(2, rows, 1.0, AssignmentMode::ParallelBinary).unwrap();
        let (data, fit) = crossfit(&dgp, 10_000, 4);
        let est = plm_estimate(&data, &fit, 2).unwrap();
        assert!((est.point - 2.0).abs() < 5.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn plm_noiseless_single_stratum_is_exact() {
        let dgp = StratifiedDgp::new(
            1,
            vec![Stratum {
                code: 0,
                probability: 1.0,
                baseline: 0.3,
                propensity: vec![0.5],
                effect: vec![1.0],
            }],
            0.0,
            AssignmentMode::ParallelBinary,
        )
        .unwrap();
        let data = sample(&dgp, 400, 3).unwrap();
        let fit = fit_full_sample(&data, &LearnerSpec::stratum_mean(), 0.0).unwrap();
        let est = plm_estimate(&data, &fit, 1).unwrap();
        assert!((est.point - 1.0).abs() < 1e-8);
        assert!(est.std_error < 1e-8);
    }

    #[test]
    fn pseudo_outcome_cases() {
        let (data, fit) = crossfit(&worked_example(), 1_000, 9);
        let gamma = pseudo_outcomes(&data, &fit).unwrap();
        let nuis = fit.treatment(1);
        for i in 0..data.len() {
            let expected = if data.treated(1)[i] == 1 {
                nuis.mu_treated[i] + (data.y()[i] - nuis.mu_treated[i]) / nuis.p_treated[i]
            } else {
                nuis.mu_treated[i]
            };
            assert_eq!(gamma.treated[0][i], expected);
        }
    }

    #[test]
    fn aipw_same_arm_is_zero() {
        let (data, fit) = crossfit(&worked_example(), 500, 1);
        let est = aipw_estimate(&data, &fit, 2, 2).unwrap();
        assert_eq!(est.point, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert!(aipw_estimate(&data, &fit, 3, 0).is_err());
    }

    #[test]
    fn aipw_worked_example_recovers_ate() {
        let (data, fit) = crossfit(&worked_example(), 10_000, 12);
        let a1 = aipw_estimate(&data, &fit, 1, 0).unwrap();
        let a2 = aipw_estimate(&data, &fit, 2, 0).unwrap();
        assert!(a1.point.abs() < 5.0 * a1.std_error, "{a1:?}");
        assert!((a2.point - 0.5).abs() < 5.0 * a2.std_error, "{a2:?}");
        let diff = aipw_estimate(&data, &fit, 2, 1).unwrap();
        assert!((diff.point - (a2.point - a1.point)).abs() < 1e-12);
    }

    #[test]
    fn ipw_half_propensity_identity() {
        let mut rows = worked_example().strata().to_vec();
        for r in &mut rows {
            r.propensity = vec![0.5, 0.5];
        }
        let dgp = StratifiedDgp::new(2, rows, 1.0, AssignmentMode::ParallelBinary).unwrap();
        let data = sample(&dgp, 2_000, 6).unwrap();
        let fit = NuisanceFit::oracle(&dgp, &data).unwrap();
        let est = ipw_estimate(&data, &fit, 1).unwrap();
        let n = data.len() as f64;
        let w = data.treated(1);
        let treated_sum: f64 = (0..data.len())
            .filter(|&i| w[i] == 1)
            .map(|i| data.y()[i])
            .sum();
        let control_sum: f64 = (0..data.len())
            .filter(|&i| w[i] == 0)
            .map(|i| data.y()[i])
            .sum();
        let identity = 2.0 * treated_sum / n - 2.0 * control_sum / n;
        assert!((est.point - identity).abs() < 1e-10);
    }

    #[test]
    fn ipw_worked_example() {
        let (data, fit) = crossfit(&worked_example(), 10_000, 14);
        let est = ipw_estimate(&data, &fit, 2).unwrap();
        assert!((est.point - 0.5).abs() < 5.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn treatment_without_controls_is_not_estimable() {
        let data = Dataset::new(
            AssignmentMode::ParallelBinary,
            vec![0, 1],
            vec![0, 1, 0, 1],
            vec![vec![1, 0, 0, 1], vec![1, 1, 1, 1]],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let fit = fit_full_sample(&data, &LearnerSpec::stratum_mean(), 0.01).unwrap();
        assert!(plm_estimate(&data, &fit, 1).is_ok());
        for m in Method::ALL {
            assert!(matches!(
                estimate(&data, &fit, 2, m),
                Err(Error::NotEstimable(_))
            ));
        }
    }

    #[test]
    fn multinomial_plm_uses_contrast_sample() {
        let mut rows = worked_example().strata().to_vec();
        rows[0].propensity = vec![0.2, 0.3];
        rows[1].propensity = vec![0.4, 0.1];
        let dgp = StratifiedDgp::new(2, rows, 1.0, AssignmentMode::Multinomial).unwrap();
        let data = sample(&dgp, 20_000, 21).unwrap();
        let fit = NuisanceFit::oracle(&dgp, &data).unwrap();
        let est = plm_estimate(&data, &fit, 1).unwrap();
        let in_contrast = (0..data.len()).filter(|&i| data.arm(i) != 2).count();
        assert_eq!(est.n_used, in_contrast);
        let wate = crate::dgp::oracle_wate(&dgp, 1).unwrap();
        assert!(
            (est.point - wate).abs() < 5.0 * est.std_error,
            "{est:?} vs {wate}"
        );
    }
}
