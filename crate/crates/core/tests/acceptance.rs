//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one pass/fail line each; exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use treatrank::dgp::{oracle_ate, oracle_decomposition, oracle_wate, sample, StratifiedDgp};
use treatrank::diagnostics::{
    check_reversal, oracle_report, reversal_condition, sufficient_condition_check,
};
use treatrank::estimators::{aipw_estimate, plm_estimate, Method};
use treatrank::montecarlo::{preset_config, run_scenario, ScenarioName};
use treatrank::nuisance::{assign_folds, fit_crossfit, fit_full_sample, LearnerSpec};

use common::{
    corrupt_outcome, corrupt_propensity, direct_ate, direct_wate, random_dgp, rng, worked_example,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_worked_oracle() -> Check {
    let dgp = worked_example();
    let (w1, w2) = (oracle_wate(&dgp, 1).unwrap(), oracle_wate(&dgp, 2).unwrap());
    let (a1, a2) = (oracle_ate(&dgp, 1).unwrap(), oracle_ate(&dgp, 2).unwrap());
    ensure((w1 - 2.7714).abs() < 1e-4, || format!("WATE_1 = {w1}"))?;
    ensure((w2 + 1.8095).abs() < 1e-4, || format!("WATE_2 = {w2}"))?;
    ensure(a1 == 0.0 && a2 == 0.5, || format!("ATE = ({a1}, {a2})"))?;
    Ok(format!("WATE = ({w1:.6}, {w2:.6}), ATE = ({a1}, {a2})"))
}

fn c2_worked_reversal() -> Check {
    let dgp = worked_example();
    let d1 = oracle_report(&dgp, 1).unwrap();
    let d2 = oracle_report(&dgp, 2).unwrap();
    let check = check_reversal(&d1, &d2);
    ensure(check.reversed, || "pair (1, 2) not flagged".into())?;
    ensure(check_reversal(&d2, &d1).reversed, || {
        "check is not symmetric".into()
    })?;
    Ok(format!("pair (1, 2) reversed, margin {:.4}", check.margin))
}

fn c3_identity() -> Check {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for draw in 0..1_000 {
        let dgp = random_dgp(&mut r, 3, 0.01, 0.99);
        for j in 1..=3 {
            let q = oracle_decomposition(&dgp, j).unwrap();
            let gap = (q.wate - q.ate - q.cov_tau_gamma).abs();
            let vs_direct = (q.wate - direct_wate(&dgp, j)).abs();
            worst = worst.max(gap);
            ensure(gap < 1e-10, || {
                format!("draw {draw} treatment {j}: |wate - ate - cov| = {gap:e}")
            })?;
            ensure(vs_direct < 1e-10, || {
                format!("draw {draw} treatment {j}: WATE off by {vs_direct:e}")
            })?;
        }
    }
    Ok(format!("3000 decompositions, max gap {worst:.2e}"))
}

fn c4_condition() -> Check {
    let mut r = rng(4);
    let mut pairs = 0;
    let mut reversals = 0;
    for draw in 0..1_000 {
        let dgp = random_dgp(&mut r, 3, 0.01, 0.99);
        let reports: Vec<_> = (1..=3).map(|j| oracle_report(&dgp, j).unwrap()).collect();
        for j in 1..=3 {
            for k in 1..=3 {
                if j == k {
                    continue;
                }
                let direct = direct_ate(&dgp, j) > direct_ate(&dgp, k)
                    && direct_wate(&dgp, j) < direct_wate(&dgp, k);
                let cond = reversal_condition(&reports[j - 1], &reports[k - 1]);
                ensure(cond == direct, || {
                    format!("draw {draw} pair ({j}, {k}): condition {cond}, direct {direct}")
                })?;
                pairs += 1;
                reversals += usize::from(direct);
            }
        }
    }
    Ok(format!(
        "{pairs} ordered pairs agree, {reversals} reversals"
    ))
}

fn c5_sufficient() -> Check {
    let mut r = rng(5);
    let mut passing = 0;
    for draw in 0..10_000 {
        let dgp = random_dgp(&mut r, 2, 0.01, 0.99);
        let delta = r.random_range(0.01..1.5);
        let d1 = oracle_report(&dgp, 1).unwrap();
        let d2 = oracle_report(&dgp, 2).unwrap();
        let (hi, lo) = if d1.ate >= d2.ate {
            (&d1, &d2)
        } else {
            (&d2, &d1)
        };
        if sufficient_condition_check(hi, lo, delta) {
            passing += 1;
            ensure(check_reversal(hi, lo).reversed, || {
                format!("draw {draw}: conditions hold, no reversal")
            })?;
        }
    }
    ensure(passing > 0, || {
        "no draw satisfied the conditions; the sweep is vacuous".into()
    })?;
    Ok(format!(
        "{passing} of 10000 draws satisfy the conditions, all reversed"
    ))
}

/// W coefficient of the saturated OLS of Y on [W, stratum dummies].
fn saturated_ols(data: &treatrank::dgp::Dataset, j: usize) -> f64 {
    let n = data.len();
    let present: Vec<usize> = (0..data.num_strata())
        .filter(|&s| data.strata().contains(&s))
        .collect();
    let x = DMatrix::from_fn(n, present.len() + 1, |i, c| {
        if c == 0 {
            f64::from(data.treated(j)[i])
        } else {
            f64::from(u8::from(data.strata()[i] == present[c - 1]))
        }
    });
    let y = DVector::from_column_slice(data.y());
    let beta = x.svd(true, true).solve(&y, 1e-12).unwrap();
    beta[0]
}

fn c6_fwl() -> Check {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let k = 1 + (draw % 2) as usize;
        let dgp = random_dgp(&mut r, k, 0.05, 0.95);
        let data = sample(&dgp, 2_000, 600 + draw).unwrap();
        let fit = fit_full_sample(&data, &LearnerSpec::stratum_mean(), 0.0).unwrap();
        for j in 1..=k {
            let plm = plm_estimate(&data, &fit, j).unwrap().point;
            let ols = saturated_ols(&data, j);
            let gap = (plm - ols).abs();
            worst = worst.max(gap);
            ensure(gap < 1e-8, || {
                format!("dataset {draw} treatment {j}: PLM {plm}, OLS {ols}")
            })?;
        }
    }
    Ok(format!("100 datasets, max |PLM - OLS| = {worst:.2e}"))
}

fn c7_extreme_mc() -> Check {
    let cfg = preset_config(ScenarioName::ExtremeHeterogeneity).unwrap();
    ensure(cfg.n_per_rep == 10_000 && cfg.num_reps == 1_000, || {
        "preset is not at full scale".into()
    })?;
    let res = run_scenario(&cfg, 4).map_err(|e| e.to_string())?;
    let aipw = res.ranking_rate(Method::Aipw);
    let plm = res.ranking_rate(Method::Plm);
    ensure(aipw > 0.95, || format!("AIPW ranking rate {aipw}"))?;
    ensure(plm < 0.05, || format!("PLM ranking rate {plm}"))?;
    let mut means = Vec::new();
    for q in &res.oracle {
        let p = res.stats_for(Method::Plm, q.treatment).unwrap().mean;
        let a = res.stats_for(Method::Aipw, q.treatment).unwrap().mean;
        ensure((p - q.wate).abs() < 0.05, || {
            format!(
                "PLM mean {p} vs WATE {} (treatment {})",
                q.wate, q.treatment
            )
        })?;
        ensure((a - q.ate).abs() < 0.05, || {
            format!("AIPW mean {a} vs ATE {} (treatment {})", q.ate, q.treatment)
        })?;
        means.push(format!("t{}: PLM {p:.4} AIPW {a:.4}", q.treatment));
    }
    Ok(format!(
        "AIPW rate {aipw:.3}, PLM rate {plm:.3}; {}",
        means.join(", ")
    ))
}

fn c8_other_presets() -> Check {
    let mut parts = Vec::new();
    for name in [
        ScenarioName::ConstantEffects,
        ScenarioName::Uncorrelated,
        ScenarioName::SelectionOnGains,
        ScenarioName::Balanced,
    ] {
        let cfg = preset_config(name).unwrap();
        let res = run_scenario(&cfg, 4).map_err(|e| e.to_string())?;
        let plm = res.ranking_rate(Method::Plm);
        let aipw = res.ranking_rate(Method::Aipw);
        ensure(plm > 0.95 && aipw > 0.95, || {
            format!("{}: PLM {plm}, AIPW {aipw}", name.as_str())
        })?;
        parts.push(format!("{} {plm:.3}/{aipw:.3}", name.as_str()));
    }
    Ok(format!("PLM/AIPW rates: {}", parts.join(", ")))
}

fn c9_double_robustness() -> Check {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (idx, name) in ScenarioName::ALL.into_iter().enumerate() {
        let dgp: StratifiedDgp = preset_config(name).unwrap().dgp;
        let n = 100_000;
        let data = sample(&dgp, n, 900 + idx as u64).unwrap();
        let folds = assign_folds(n, 5, 950 + idx as u64).unwrap();
        let base = fit_crossfit(&data, &LearnerSpec::stratum_mean(), &folds, 0.01).unwrap();
        let codes: Vec<f64> = data
            .strata()
            .iter()
            .map(|&s| data.strata_codes()[s] as f64)
            .collect();
        for corruption in ["outcome", "propensity"] {
            let mut fit = base.clone();
            if corruption == "outcome" {
                corrupt_outcome(&mut fit, &codes);
            } else {
                corrupt_propensity(&mut fit);
            }
            for j in 1..=dgp.num_treatments() {
                let est = aipw_estimate(&data, &fit, j, 0).unwrap();
                let truth = oracle_ate(&dgp, j).unwrap();
                let z = (est.point - truth).abs() / est.std_error;
                worst = worst.max(z);
                checks += 1;
                ensure(z < 5.0, || {
                    format!(
                        "{} {corruption} t{j}: {} vs {truth} ({z:.2} SE)",
                        name.as_str(),
                        est.point
                    )
                })?;
            }
        }
    }
    Ok(format!(
        "{checks} corrupted fits, max deviation {worst:.2} SE"
    ))
}

fn c10_determinism() -> Check {
    let mut cfg = preset_config(ScenarioName::SelectionOnGains).unwrap();
    cfg.num_reps = 200;
    let one = serde_json::to_vec(&run_scenario(&cfg, 1).map_err(|e| e.to_string())?).unwrap();
    let four = serde_json::to_vec(&run_scenario(&cfg, 4).map_err(|e| e.to_string())?).unwrap();
    ensure(one == four, || {
        "serialized results differ between 1 and 4 workers".into()
    })?;
    Ok(format!("{} identical bytes", one.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 worked-example oracle values", c1_worked_oracle),
        ("2 worked-example rank reversal", c2_worked_reversal),
        ("3 decomposition identity", c3_identity),
        ("4 reversal condition vs direct ordering", c4_condition),
        ("5 sufficient conditions imply reversal", c5_sufficient),
        ("6 FWL equivalence", c6_fwl),
        ("7 Monte Carlo, extreme heterogeneity", c7_extreme_mc),
        ("8 Monte Carlo, remaining presets", c8_other_presets),
        ("9 double robustness", c9_double_robustness),
        ("10 determinism across worker counts", c10_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail} ({secs:.2}s)");
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
