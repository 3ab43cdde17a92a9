//! Discrete-strata data-generating processes, their closed-form estimands and
//! a seeded sampler.
//!
//! A [`StratifiedDgp`] puts all of the covariate mass on a finite set of
//! strata. For each stratum it stores the per-treatment propensities `p_j(x)`,
//! the per-treatment effects `tau_j(x)` and the baseline outcome `mu0(x)`.
//! Oracle quantities follow directly from these tables:
//!
//! ```text
//! v_j(x)     = p_j(x) c_j(x) / (p_j(x) + c_j(x))     c_j = control-membership probability
//! gamma_j(x) = v_j(x) / E[v_j(X)]
//! ATE_j      = E[tau_j(X)]
//! WATE_j     = E[gamma_j(X) tau_j(X)] = ATE_j + Cov(tau_j, gamma_j)
//! ```
//!
//! Under [`AssignmentMode::ParallelBinary`] `c_j = 1 - p_j`, so `v_j` is the
//! binomial variance `p_j (1 - p_j)`. Under [`AssignmentMode::Multinomial`] the
//! PLM contrast for treatment `j` is run on units in `{0, j}` only, and `v_j`
//! is the within-contrast treatment variance rescaled to the full population.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Each treatment indicator is drawn independently from its own table.
    #[default]
    ParallelBinary,
    /// Arms are mutually exclusive; control takes the remaining mass.
    Multinomial,
}

/// One row of the DGP tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub code: i64,
    pub probability: f64,
    pub baseline: f64,
    /// `p_j(x)` for `j = 1..=K`, stored at index `j - 1`.
    pub propensity: Vec<f64>,
    /// `tau_j(x)` for `j = 1..=K`, stored at index `j - 1`.
    pub effect: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DgpTables")]
pub struct StratifiedDgp {
    num_treatments: usize,
    strata: Vec<Stratum>,
    noise_sd: f64,
    assignment: AssignmentMode,
}

#[derive(Deserialize)]
struct DgpTables {
    num_treatments: usize,
    strata: Vec<Stratum>,
    noise_sd: f64,
    assignment: AssignmentMode,
}

impl TryFrom<DgpTables> for StratifiedDgp {
    type Error = Error;

    fn try_from(t: DgpTables) -> Result<Self> {
        Self::new(t.num_treatments, t.strata, t.noise_sd, t.assignment)
    }
}

impl StratifiedDgp {
    /// Builds a DGP after checking every table invariant.
    pub fn new(
        num_treatments: usize,
        strata: Vec<Stratum>,
        noise_sd: f64,
        assignment: AssignmentMode,
    ) -> Result<Self> {
        let dgp = Self {
            num_treatments,
            strata,
            noise_sd,
            assignment,
        };
        dgp.validate()?;
        Ok(dgp)
    }

    fn validate(&self) -> Result<()> {
        if self.num_treatments == 0 {
            return Err(Error::InvalidDgp(
                "num_treatments must be at least 1".into(),
            ));
        }
        if self.strata.is_empty() {
            return Err(Error::InvalidDgp("at least one stratum is required".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidDgp(format!(
                "noise_sd must be finite and non-negative, got {}",
                self.noise_sd
            )));
        }
        let mut codes: Vec<i64> = self.strata.iter().map(|s| s.code).collect();
        codes.sort_unstable();
        if codes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDgp("stratum codes must be unique".into()));
        }
        let mut total = 0.0;
        for s in &self.strata {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::InvalidDgp(format!(
                    "stratum {} has probability {} outside [0, 1]",
                    s.code, s.probability
                )));
            }
            if !s.baseline.is_finite() {
                return Err(Error::InvalidDgp(format!(
                    "stratum {} has a non-finite baseline",
                    s.code
                )));
            }
            if s.propensity.len() != self.num_treatments || s.effect.len() != self.num_treatments {
                return Err(Error::InvalidDgp(format!(
                    "stratum {} must list exactly {} propensities and {} effects",
                    s.code, self.num_treatments, self.num_treatments
                )));
            }
            for (j, (&p, &t)) in s.propensity.iter().zip(&s.effect).enumerate() {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::OverlapViolation {
                        treatment: j + 1,
                        stratum: s.code,
                        propensity: p,
                    });
                }
                if !t.is_finite() {
                    return Err(Error::InvalidDgp(format!(
                        "stratum {} has a non-finite effect for treatment {}",
                        s.code,
                        j + 1
                    )));
                }
            }
            if self.assignment == AssignmentMode::Multinomial {
                let mass: f64 = s.propensity.iter().sum();
                if mass >= 1.0 {
                    return Err(Error::InvalidDgp(format!(
                        "multinomial propensities in stratum {} sum to {mass}; they must leave control mass (sum < 1)",
                        s.code
                    )));
                }
            }
            total += s.probability;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDgp(format!(
                "stratum probabilities sum to {total}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(())
    }

    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn assignment(&self) -> AssignmentMode {
        self.assignment
    }

    pub fn codes(&self) -> Vec<i64> {
        self.strata.iter().map(|s| s.code).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.probability).collect()
    }

    /// `tau_j(x)` across strata.
    pub fn effects(&self, j: usize) -> Result<Vec<f64>> {
        let idx = self.treatment_index(j)?;
        Ok(self.strata.iter().map(|s| s.effect[idx]).collect())
    }

    /// `p_j(x)` across strata.
    pub fn propensities(&self, j: usize) -> Result<Vec<f64>> {
        let idx = self.treatment_index(j)?;
        Ok(self.strata.iter().map(|s| s.propensity[idx]).collect())
    }

    /// Probability of the control arm that treatment `j` is contrasted with.
    pub fn control_probability(&self, j: usize, stratum: usize) -> Result<f64> {
        let idx = self.treatment_index(j)?;
        let s = &self.strata[stratum];
        Ok(match self.assignment {
            AssignmentMode::ParallelBinary => 1.0 - s.propensity[idx],
            AssignmentMode::Multinomial => 1.0 - s.propensity.iter().sum::<f64>(),
        })
    }

    pub(crate) fn treatment_index(&self, j: usize) -> Result<usize> {
        if j == 0 || j > self.num_treatments {
            return Err(Error::InvalidArgument(format!(
                "treatment index {j} outside 1..={}",
                self.num_treatments
            )));
        }
        Ok(j - 1)
    }

    /// Same tables with a different noise scale.
    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        self.noise_sd = noise_sd;
        self.validate()?;
        Ok(self)
    }
}

/// Conditional treatment variance of a contrast: `p c / (p + c)`.
///
/// Reduces to `p (1 - p)` when `c = 1 - p`.
pub fn contrast_variance(p_treated: f64, p_control: f64) -> f64 {
    p_treated * p_control / (p_treated + p_control)
}

/// Regression weights `gamma_j(x)` normalized to mean one under the strata
/// distribution.
pub fn oracle_weights(dgp: &StratifiedDgp, j: usize) -> Result<Vec<f64>> {
    let idx = dgp.treatment_index(j)?;
    let mut raw = Vec::with_capacity(dgp.strata.len());
    for (x, s) in dgp.strata.iter().enumerate() {
        let p = s.propensity[idx];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OverlapViolation {
                treatment: j,
                stratum: s.code,
                propensity: p,
            });
        }
        raw.push(contrast_variance(p, dgp.control_probability(j, x)?));
    }
    let mean: f64 = raw
        .iter()
        .zip(&dgp.strata)
        .map(|(v, s)| s.probability * v)
        .sum();
    Ok(raw.into_iter().map(|v| v / mean).collect())
}

pub fn oracle_ate(dgp: &StratifiedDgp, j: usize) -> Result<f64> {
    let idx = dgp.treatment_index(j)?;
    Ok(dgp
        .strata
        .iter()
        .map(|s| s.probability * s.effect[idx])
        .sum())
}

pub fn oracle_wate(dgp: &StratifiedDgp, j: usize) -> Result<f64> {
    let gamma = oracle_weights(dgp, j)?;
    let idx = j - 1;
    Ok(dgp
        .strata
        .iter()
        .zip(&gamma)
        .map(|(s, g)| s.probability * g * s.effect[idx])
        .sum())
}

/// Closed-form estimands of one treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleQuantities {
    pub treatment: usize,
    pub ate: f64,
    pub wate: f64,
    pub cov_tau_gamma: f64,
    pub gamma: Vec<f64>,
}

/// ATE, WATE and `Cov(tau, gamma)`, each computed on its own route: WATE as
/// the weighted sum, the covariance as `E[gamma tau] - E[gamma] E[tau]`.
pub fn oracle_decomposition(dgp: &StratifiedDgp, j: usize) -> Result<OracleQuantities> {
    let gamma = oracle_weights(dgp, j)?;
    let tau = dgp.effects(j)?;
    let probs = dgp.probabilities();
    let ate = oracle_ate(dgp, j)?;
    let wate = oracle_wate(dgp, j)?;
    let e_gamma_tau: f64 = probs
        .iter()
        .zip(&gamma)
        .zip(&tau)
        .map(|((p, g), t)| p * g * t)
        .sum();
    let e_gamma: f64 = probs.iter().zip(&gamma).map(|(p, g)| p * g).sum();
    let e_tau: f64 = probs.iter().zip(&tau).map(|(p, t)| p * t).sum();
    Ok(OracleQuantities {
        treatment: j,
        ate,
        wate,
        cov_tau_gamma: e_gamma_tau - e_gamma * e_tau,
        gamma,
    })
}

/// Sampled units.
///
/// Treatments are stored as `K` indicator columns. Under `Multinomial` at most
/// one indicator is set per unit and a unit with none is a control.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    mode: AssignmentMode,
    strata_codes: Vec<i64>,
    stratum: Vec<usize>,
    treated: Vec<Vec<u8>>,
    y: Vec<f64>,
}

impl Dataset {
    /// `stratum[i]` indexes into `strata_codes`; `treated[j - 1][i]` is the
    /// indicator of treatment `j` for unit `i`.
    pub fn new(
        mode: AssignmentMode,
        strata_codes: Vec<i64>,
        stratum: Vec<usize>,
        treated: Vec<Vec<u8>>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if stratum.len() != n || treated.iter().any(|t| t.len() != n) {
            return Err(Error::InvalidArgument(
                "dataset columns must have equal length".into(),
            ));
        }
        if treated.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset needs at least one treatment column".into(),
            ));
        }
        if let Some(&bad) = stratum.iter().find(|&&s| s >= strata_codes.len()) {
            return Err(Error::InvalidArgument(format!(
                "stratum index {bad} outside the code table"
            )));
        }
        if treated.iter().flatten().any(|&w| w > 1) {
            return Err(Error::InvalidArgument(
                "treatment indicators must be 0 or 1".into(),
            ));
        }
        if mode == AssignmentMode::Multinomial {
            for i in 0..n {
                if treated.iter().map(|t| t[i] as usize).sum::<usize>() > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "unit {i} is assigned to more than one arm under multinomial assignment"
                    )));
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("outcomes must be finite".into()));
        }
        Ok(Self {
            mode,
            strata_codes,
            stratum,
            treated,
            y,
        })
    }

    /// Multinomial dataset from per-unit arm labels (0 = control).
    pub fn from_arms(
        strata_codes: Vec<i64>,
        stratum: Vec<usize>,
        arms: &[usize],
        y: Vec<f64>,
    ) -> Result<Self> {
        let k = arms.iter().copied().max().unwrap_or(0).max(1);
        let mut treated = vec![vec![0u8; arms.len()]; k];
        for (i, &a) in arms.iter().enumerate() {
            if a > 0 {
                treated[a - 1][i] = 1;
            }
        }
        Self::new(
            AssignmentMode::Multinomial,
            strata_codes,
            stratum,
            treated,
            y,
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn num_treatments(&self) -> usize {
        self.treated.len()
    }

    pub fn strata_codes(&self) -> &[i64] {
        &self.strata_codes
    }

    pub fn num_strata(&self) -> usize {
        self.strata_codes.len()
    }

    /// Stratum index of every unit.
    pub fn strata(&self) -> &[usize] {
        &self.stratum
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    /// Indicator column of treatment `j` (1-based).
    pub fn treated(&self, j: usize) -> &[u8] {
        &self.treated[j - 1]
    }

    /// Arm label of unit `i`: 0 for control. Under `ParallelBinary` this is
    /// the lowest received treatment, or 0.
    pub fn arm(&self, i: usize) -> usize {
        self.treated
            .iter()
            .position(|t| t[i] == 1)
            .map_or(0, |j| j + 1)
    }

    /// Whether unit `i` is in the control group of treatment `j`.
    pub fn is_control(&self, j: usize, i: usize) -> bool {
        match self.mode {
            AssignmentMode::ParallelBinary => self.treated[j - 1][i] == 0,
            AssignmentMode::Multinomial => self.treated.iter().all(|t| t[i] == 0),
        }
    }

    pub(crate) fn check_treatment(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.num_treatments() {
            return Err(Error::InvalidArgument(format!(
                "treatment index {j} outside 1..={}",
                self.num_treatments()
            )));
        }
        Ok(())
    }
}

/// Draws `n` units. Stratum, treatment and noise draws each come from their
/// own substream of `seed`.
pub fn sample(dgp: &StratifiedDgp, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    let k = dgp.num_treatments;
    let mut cumulative = Vec::with_capacity(dgp.strata.len());
    let mut acc = 0.0;
    for s in &dgp.strata {
        acc += s.probability;
        cumulative.push(acc);
    }
    let last = dgp.strata.len() - 1;

    let mut strata_rng = substream(seed, Purpose::Strata);
    let stratum: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = strata_rng.random();
            cumulative.iter().position(|&c| u < c).unwrap_or(last)
        })
        .collect();

    let mut treat_rng = substream(seed, Purpose::Treatment);
    let mut treated = vec![vec![0u8; n]; k];
    for (i, &x) in stratum.iter().enumerate() {
        let p = &dgp.strata[x].propensity;
        match dgp.assignment {
            AssignmentMode::ParallelBinary => {
                for (j, col) in treated.iter_mut().enumerate() {
                    let u: f64 = treat_rng.random();
                    col[i] = u8::from(u < p[j]);
                }
            }
            AssignmentMode::Multinomial => {
                let u: f64 = treat_rng.random();
                let mut acc = 0.0;
                for (j, col) in treated.iter_mut().enumerate() {
                    acc += p[j];
                    if u < acc {
                        col[i] = 1;
                        break;
                    }
                }
            }
        }
    }

    let mut noise_rng = substream(seed, Purpose::Noise);
    let y: Vec<f64> = stratum
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = &dgp.strata[x];
            let effect: f64 = (0..k).map(|j| s.effect[j] * f64::from(treated[j][i])).sum();
            let z: f64 = noise_rng.sample(StandardNormal);
            s.baseline + effect + dgp.noise_sd * z
        })
        .collect();

    Dataset::new(dgp.assignment, dgp.codes(), stratum, treated, y)
}
