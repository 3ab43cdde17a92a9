//! Scenario presets and the replication engine.
//!
//! Replicate `r` of a study with seed `s` samples its dataset and folds from
//! [`replicate_seed`]`(s, r)`, so every replicate is a pure function of the
//! config and its index. Replicates run on a rayon pool and are collected in
//! index order; aggregation happens afterwards, sequentially. Output is
//! therefore identical for any worker count.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, ConfigFile};
use crate::dgp::{oracle_decomposition, sample, OracleQuantities, StratifiedDgp};
use crate::diagnostics::order_by_value;
use crate::error::{Error, Result};
use crate::estimators::{estimate, Estimand, Method};
use crate::nuisance::{assign_folds, fit_crossfit, LearnerSpec};
use crate::rng::replicate_seed;

const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    ExtremeHeterogeneity,
    ConstantEffects,
    Uncorrelated,
    SelectionOnGains,
    Balanced,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::ExtremeHeterogeneity,
        ScenarioName::ConstantEffects,
        ScenarioName::Uncorrelated,
        ScenarioName::SelectionOnGains,
        ScenarioName::Balanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::ExtremeHeterogeneity => "extreme_heterogeneity",
            ScenarioName::ConstantEffects => "constant_effects",
            ScenarioName::Uncorrelated => "uncorrelated",
            ScenarioName::SelectionOnGains => "selection_on_gains",
            ScenarioName::Balanced => "balanced",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let normalized = name.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|s| s.as_str() == normalized)
            .ok_or_else(|| Error::UnknownPreset {
                name: name.to_string(),
                valid: Self::ALL.map(Self::as_str).join(", "),
            })
    }

    /// The shipped config file of this preset.
    pub fn config_text(self) -> &'static str {
        match self {
            ScenarioName::ExtremeHeterogeneity => {
                include_str!("../presets/extreme_heterogeneity.toml")
            }
            ScenarioName::ConstantEffects => include_str!("../presets/constant_effects.toml"),
            ScenarioName::Uncorrelated => include_str!("../presets/uncorrelated.toml"),
            ScenarioName::SelectionOnGains => include_str!("../presets/selection_on_gains.toml"),
            ScenarioName::Balanced => include_str!("../presets/balanced.toml"),
        }
    }

    /// Checks the property that defines the scenario against the oracle.
    pub fn check_property(self, dgp: &StratifiedDgp) -> Result<()> {
        let k = dgp.num_treatments();
        let oracle: Vec<OracleQuantities> = (1..=k)
            .map(|j| oracle_decomposition(dgp, j))
            .collect::<Result<_>>()?;
        let fail = |what: &str| {
            Err(Error::InvalidDgp(format!(
                "preset {} must have {what}",
                self.as_str()
            )))
        };
        let ates: Vec<f64> = oracle.iter().map(|q| q.ate).collect();
        for a in 0..k {
            for b in a + 1..k {
                if ates[a] == ates[b] {
                    return fail("distinct ATEs");
                }
            }
        }
        let varies = |v: &[f64]| v.iter().any(|x| (x - v[0]).abs() > ZERO_TOL);
        let reversed = reversed_pairs(&oracle);
        match self {
            ScenarioName::ExtremeHeterogeneity => {
                if reversed.is_empty() {
                    return fail("an oracle rank reversal");
                }
            }
            ScenarioName::ConstantEffects => {
                for j in 1..=k {
                    if varies(&dgp.effects(j)?) {
                        return fail("effects constant across strata");
                    }
                }
            }
            ScenarioName::Uncorrelated => {
                for (j, q) in oracle.iter().enumerate() {
                    if q.cov_tau_gamma.abs() > ZERO_TOL || !varies(&dgp.effects(j + 1)?) {
                        return fail("heterogeneous effects with zero Cov(tau, gamma)");
                    }
                }
            }
            ScenarioName::SelectionOnGains => {
                let signs: Vec<f64> = oracle.iter().map(|q| q.cov_tau_gamma.signum()).collect();
                if oracle.iter().any(|q| q.cov_tau_gamma.abs() <= ZERO_TOL) || varies(&signs) {
                    return fail("nonzero Cov(tau, gamma) of a common sign");
                }
                for j in 1..=k {
                    if covariance(
                        &dgp.probabilities(),
                        &dgp.propensities(j)?,
                        &dgp.effects(j)?,
                    ) <= 0.0
                    {
                        return fail("propensities increasing with effects");
                    }
                }
            }
            ScenarioName::Balanced => {
                for j in 1..=k {
                    if varies(&dgp.propensities(j)?) {
                        return fail("propensities constant across strata");
                    }
                    if !varies(&dgp.effects(j)?) {
                        return fail("heterogeneous effects");
                    }
                }
            }
        }
        if self != ScenarioName::ExtremeHeterogeneity && !reversed.is_empty() {
            return fail("no oracle rank reversal");
        }
        Ok(())
    }
}

fn covariance(probs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ea: f64 = probs.iter().zip(a).map(|(p, x)| p * x).sum();
    let eb: f64 = probs.iter().zip(b).map(|(p, x)| p * x).sum();
    probs
        .iter()
        .zip(a)
        .zip(b)
        .map(|((p, x), y)| p * (x - ea) * (y - eb))
        .sum()
}

fn reversed_pairs(oracle: &[OracleQuantities]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..oracle.len() {
        for b in a + 1..oracle.len() {
            let d_ate = oracle[a].ate - oracle[b].ate;
            let d_wate = oracle[a].wate - oracle[b].wate;
            if d_ate * d_wate < 0.0 {
                out.push((oracle[a].treatment, oracle[b].treatment));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub dgp: StratifiedDgp,
    pub n_per_rep: usize,
    pub num_reps: usize,
    pub seed: u64,
    pub learner: LearnerSpec,
    pub num_folds: usize,
    pub clip: f64,
}

impl ScenarioConfig {
    pub fn from_config(config: ConfigFile) -> Result<Self> {
        let s = config.scenario;
        let cfg = Self {
            name: s.name,
            dgp: config.dgp,
            n_per_rep: s.n_per_rep,
            num_reps: s.num_reps,
            seed: s.seed,
            learner: config.learner,
            num_folds: s.num_folds,
            clip: s.clip,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_reps == 0 {
            return Err(Error::InvalidArgument("num_reps must be at least 1".into()));
        }
        if self.num_folds < 2 || self.n_per_rep < self.num_folds {
            return Err(Error::InvalidArgument(format!(
                "need num_folds >= 2 and n_per_rep >= num_folds, got {} folds for {} units",
                self.num_folds, self.n_per_rep
            )));
        }
        if !(0.0..0.5).contains(&self.clip) {
            return Err(Error::InvalidArgument(format!(
                "clip must lie in [0, 0.5), got {}",
                self.clip
            )));
        }
        self.learner.validate()
    }
}

/// Loads a shipped preset and asserts its defining property.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    preset_config(ScenarioName::parse(name)?)
}

pub fn preset_config(name: ScenarioName) -> Result<ScenarioConfig> {
    let cfg = ScenarioConfig::from_config(parse_config(name.config_text())?)?;
    name.check_property(&cfg.dgp)?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: Method,
    pub treatment: usize,
    pub point: Option<f64>,
    pub std_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub estimates: Vec<EstimateRecord>,
    pub clipped_count: usize,
    pub fallback_count: usize,
    /// Set when the nuisance fit itself failed; no estimates exist then.
    pub error: Option<String>,
}

impl ReplicateRecord {
    fn points(&self, method: Method, k: usize) -> Option<Vec<f64>> {
        (1..=k)
            .map(|j| {
                self.estimates
                    .iter()
                    .find(|e| e.method == method && e.treatment == j)
                    .and_then(|e| e.point)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateStats {
    pub method: Method,
    pub treatment: usize,
    pub target: Estimand,
    pub n_ok: usize,
    pub mean: f64,
    pub sd: f64,
    pub se_of_mean: f64,
    pub oracle_ate: f64,
    pub oracle_wate: f64,
    pub bias_vs_ate: f64,
    pub bias_vs_wate: f64,
    /// Bias against the method's own target.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRate {
    pub method: Method,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RuntimeStats {
    pub wall: Duration,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub config: ScenarioConfig,
    pub oracle: Vec<OracleQuantities>,
    pub oracle_ate_ordering: Vec<usize>,
    pub oracle_wate_ordering: Vec<usize>,
    pub replicates: Vec<ReplicateRecord>,
    pub stats: Vec<EstimateStats>,
    /// Share of replicates whose ordering of point estimates equals the
    /// oracle ATE ordering. Failed replicates count as incorrect.
    pub correct_ranking_rate: Vec<MethodRate>,
    pub failure_rate: Vec<MethodRate>,
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

impl MonteCarloResult {
    pub fn ranking_rate(&self, method: Method) -> f64 {
        self.correct_ranking_rate
            .iter()
            .find(|r| r.method == method)
            .map_or(0.0, |r| r.rate)
    }

    pub fn stats_for(&self, method: Method, treatment: usize) -> Option<&EstimateStats> {
        self.stats
            .iter()
            .find(|s| s.method == method && s.treatment == treatment)
    }

    /// Point estimates of one method and treatment across successful replicates.
    pub fn samples(&self, method: Method, treatment: usize) -> Vec<f64> {
        self.replicates
            .iter()
            .flat_map(|r| r.estimates.iter())
            .filter(|e| e.method == method && e.treatment == treatment)
            .filter_map(|e| e.point)
            .collect()
    }
}

/// One replicate: sample, cross-fit, estimate every method and treatment.
pub fn run_replicate(config: &ScenarioConfig, replicate: usize) -> ReplicateRecord {
    let seed = replicate_seed(config.seed, replicate as u64);
    let mut record = ReplicateRecord {
        replicate,
        seed,
        estimates: Vec::new(),
        clipped_count: 0,
        fallback_count: 0,
        error: None,
    };
    let fitted = sample(&config.dgp, config.n_per_rep, seed).and_then(|data| {
        let folds = assign_folds(data.len(), config.num_folds, seed)?;
        let fit = fit_crossfit(&data, &config.learner, &folds, config.clip)?;
        Ok((data, fit))
    });
    let (data, fit) = match fitted {
        Ok(v) => v,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    record.clipped_count = fit.clipped_count;
    record.fallback_count = fit.fallback_count;
    for method in Method::ALL {
        for j in 1..=config.dgp.num_treatments() {
            let rec = match estimate(&data, &fit, j, method) {
                Ok(e) => EstimateRecord {
                    method,
                    treatment: j,
                    point: Some(e.point),
                    std_error: Some(e.std_error),
                    error: None,
                },
                Err(e) => EstimateRecord {
                    method,
                    treatment: j,
                    point: None,
                    std_error: None,
                    error: Some(e.to_string()),
                },
            };
            record.estimates.push(rec);
        }
    }
    record
}

/// Runs every replicate of `config` on `workers` threads.
pub fn run_scenario(config: &ScenarioConfig, workers: usize) -> Result<MonteCarloResult> {
    config.validate()?;
    let workers = workers.max(1);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let replicates: Vec<ReplicateRecord> = pool.install(|| {
        (0..config.num_reps)
            .into_par_iter()
            .map(|r| run_replicate(config, r))
            .collect()
    });
    let mut result = aggregate(config, replicates)?;
    result.runtime = RuntimeStats {
        wall: start.elapsed(),
        workers,
    };
    Ok(result)
}

fn aggregate(
    config: &ScenarioConfig,
    replicates: Vec<ReplicateRecord>,
) -> Result<MonteCarloResult> {
    let k = config.dgp.num_treatments();
    let treatments: Vec<usize> = (1..=k).collect();
    let oracle: Vec<OracleQuantities> = treatments
        .iter()
        .map(|&j| oracle_decomposition(&config.dgp, j))
        .collect::<Result<_>>()?;
    let ates: Vec<f64> = oracle.iter().map(|q| q.ate).collect();
    let wates: Vec<f64> = oracle.iter().map(|q| q.wate).collect();
    let oracle_ate_ordering = order_by_value(&treatments, &ates);
    let oracle_wate_ordering = order_by_value(&treatments, &wates);

    let reps = replicates.len() as f64;
    let mut stats = Vec::new();
    let mut correct_ranking_rate = Vec::new();
    let mut failure_rate = Vec::new();
    for method in Method::ALL {
        for (j, q) in oracle.iter().enumerate() {
            let points: Vec<f64> = replicates
                .iter()
                .flat_map(|r| r.estimates.iter())
                .filter(|e| e.method == method && e.treatment == j + 1)
                .filter_map(|e| e.point)
                .collect();
            if points.is_empty() {
                continue;
            }
            let n = points.len() as f64;
            let mean = points.iter().sum::<f64>() / n;
            let sd = if points.len() > 1 {
                (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let target = method.estimand();
            let bias_vs_ate = mean - q.ate;
            let bias_vs_wate = mean - q.wate;
            stats.push(EstimateStats {
                method,
                treatment: j + 1,
                target,
                n_ok: points.len(),
                mean,
                sd,
                se_of_mean: sd / n.sqrt(),
                oracle_ate: q.ate,
                oracle_wate: q.wate,
                bias_vs_ate,
                bias_vs_wate,
                bias: match target {
                    Estimand::Ate => bias_vs_ate,
                    Estimand::Wate => bias_vs_wate,
                },
            });
        }
        let mut correct = 0usize;
        let mut failed = 0usize;
        for r in &replicates {
            match r.points(method, k) {
                Some(points) => {
                    if order_by_value(&treatments, &points) == oracle_ate_ordering {
                        correct += 1;
                    }
                }
                None => failed += 1,
            }
        }
        correct_ranking_rate.push(MethodRate {
            method,
            rate: correct as f64 / reps,
        });
        failure_rate.push(MethodRate {
            method,
            rate: failed as f64 / reps,
        });
    }
    Ok(MonteCarloResult {
        config: config.clone(),
        oracle,
        oracle_ate_ordering,
        oracle_wate_ordering,
        replicates,
        stats,
        correct_ranking_rate,
        failure_rate,
        runtime: RuntimeStats::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub treatment: usize,
    pub n_ok: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub oracle_ate: f64,
    pub oracle_wate: f64,
    pub bias_vs_ate: f64,
    pub bias_vs_wate: f64,
    pub correct_ranking_rate: f64,
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-method, per-treatment distribution summary.
pub fn summarize(result: &MonteCarloResult) -> Result<Vec<SummaryRow>> {
    if result.stats.is_empty() {
        return Err(Error::InvalidArgument(
            "Monte Carlo result holds no successful estimates".into(),
        ));
    }
    Ok(result
        .stats
        .iter()
        .map(|s| {
            let mut points = result.samples(s.method, s.treatment);
            points.sort_by(f64::total_cmp);
            SummaryRow {
                method: s.method,
                treatment: s.treatment,
                n_ok: s.n_ok,
                mean: s.mean,
                sd: s.sd,
                q025: quantile(&points, 0.025),
                q50: quantile(&points, 0.5),
                q975: quantile(&points, 0.975),
                oracle_ate: s.oracle_ate,
                oracle_wate: s.oracle_wate,
                bias_vs_ate: s.bias_vs_ate,
                bias_vs_wate: s.bias_vs_wate,
                correct_ranking_rate: result.ranking_rate(s.method),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram over the sample range.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![HistogramBin {
            lower: lo,
            upper: hi,
            count: values.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: lo + width * b as f64,
            upper: if b + 1 == bins {
                hi
            } else {
                lo + width * (b + 1) as f64
            },
            count,
        })
        .collect()
}
