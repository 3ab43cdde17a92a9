//! Fold assignment and cross-fitted nuisance functions.
//!
//! Covariates are discrete strata, so every learner here depends on the data
//! only through per-stratum sufficient statistics (unit count and target sum).
//! Statistics are accumulated once per fold; the training statistics for fold
//! `k` are the sum over the *other* folds, so nothing computed from fold `k`
//! ever reaches a prediction for fold `k`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dgp::{AssignmentMode, Dataset, StratifiedDgp};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::rng::{substream, Purpose};

pub const DEFAULT_NUM_FOLDS: usize = 5;
pub const DEFAULT_CLIP: f64 = 0.01;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    num_folds: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced random partition of `0..n` into `num_folds` folds: a seeded
/// shuffle followed by round-robin dealing.
pub fn assign_folds(n: usize, num_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if num_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "num_folds must be at least 2, got {num_folds}"
        )));
    }
    if n < num_folds {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} units into {num_folds} nonempty folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Purpose::Folds));
    let mut fold_of = vec![0; n];
    for (rank, &unit) in order.iter().enumerate() {
        fold_of[unit] = rank % num_folds;
    }
    Ok(FoldAssignment { num_folds, fold_of })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    StratumMean,
    LinearRidge,
    /// Logistic ridge for propensities; outcome regressions fall back to
    /// linear ridge with the same penalty and basis.
    LogisticRidge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// One indicator per stratum, no intercept.
    #[default]
    StratumDummies,
    /// Intercept plus the raw stratum code. The intercept is not penalized.
    RawCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub ridge_penalty: f64,
    #[serde(default)]
    pub basis: Basis,
}

impl LearnerSpec {
    pub fn stratum_mean() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_penalty.is_finite() && self.ridge_penalty >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge_penalty must be finite and non-negative, got {}",
                self.ridge_penalty
            )));
        }
        Ok(())
    }
}

/// Nuisance predictions for the contrast of treatment `j` against its control.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentNuisance {
    /// `E[Y | treated, X]` per unit.
    pub mu_treated: Vec<f64>,
    /// `E[Y | control, X]` per unit.
    pub mu_control: Vec<f64>,
    /// Probability of receiving treatment `j` per unit.
    pub p_treated: Vec<f64>,
    /// Probability of being in treatment `j`'s control group per unit.
    pub p_control: Vec<f64>,
}

impl TreatmentNuisance {
    /// Propensity of the binary PLM contrast: `p_t / (p_t + p_c)`.
    pub fn contrast_propensity(&self, i: usize) -> f64 {
        self.p_treated[i] / (self.p_treated[i] + self.p_control[i])
    }

    /// Outcome regression within the contrast sample.
    pub fn contrast_outcome(&self, i: usize) -> f64 {
        let (pt, pc) = (self.p_treated[i], self.p_control[i]);
        (pt * self.mu_treated[i] + pc * self.mu_control[i]) / (pt + pc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub mode: AssignmentMode,
    /// Pooled `E[Y | X]` per unit.
    pub y_hat: Vec<f64>,
    /// Indexed by treatment `j - 1`.
    pub per_treatment: Vec<TreatmentNuisance>,
    pub clipped_count: usize,
    pub fallback_count: usize,
}

impl NuisanceFit {
    pub fn treatment(&self, j: usize) -> &TreatmentNuisance {
        &self.per_treatment[j - 1]
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    /// Nuisances taken straight from the DGP tables, for testing estimators
    /// apart from learner error.
    pub fn oracle(dgp: &StratifiedDgp, data: &Dataset) -> Result<Self> {
        let rows: Vec<usize> = data
            .strata_codes()
            .iter()
            .map(|code| {
                dgp.strata()
                    .iter()
                    .position(|s| s.code == *code)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "dataset stratum {code} is not part of the DGP"
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        if data.num_treatments() != dgp.num_treatments() || data.mode() != dgp.assignment() {
            return Err(Error::InvalidArgument(
                "dataset and DGP disagree on treatments".into(),
            ));
        }
        let k = dgp.num_treatments();
        let strata = dgp.strata();
        let per_cell = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            data.strata().iter().map(|&s| f(rows[s])).collect()
        };
        let pooled = |x: usize| {
            let s = &strata[x];
            s.baseline + (0..k).map(|j| s.effect[j] * s.propensity[j]).sum::<f64>()
        };
        let mut per_treatment = Vec::with_capacity(k);
        for j in 0..k {
            let t = match dgp.assignment() {
                AssignmentMode::ParallelBinary => {
                    // Other treatments are independent of W_j given X.
                    let others = |x: usize| {
                        let s = &strata[x];
                        (0..k)
                            .filter(|&m| m != j)
                            .map(|m| s.effect[m] * s.propensity[m])
                            .sum::<f64>()
                    };
                    TreatmentNuisance {
                        mu_treated: per_cell(&|x| {
                            strata[x].baseline + strata[x].effect[j] + others(x)
                        }),
                        mu_control: per_cell(&|x| strata[x].baseline + others(x)),
                        p_treated: per_cell(&|x| strata[x].propensity[j]),
                        p_control: per_cell(&|x| 1.0 - strata[x].propensity[j]),
                    }
                }
                AssignmentMode::Multinomial => TreatmentNuisance {
                    mu_treated: per_cell(&|x| strata[x].baseline + strata[x].effect[j]),
                    mu_control: per_cell(&|x| strata[x].baseline),
                    p_treated: per_cell(&|x| strata[x].propensity[j]),
                    p_control: per_cell(&|x| 1.0 - strata[x].propensity.iter().sum::<f64>()),
                },
            };
            per_treatment.push(t);
        }
        Ok(Self {
            mode: dgp.assignment(),
            y_hat: per_cell(&pooled),
            per_treatment,
            clipped_count: 0,
            fallback_count: 0,
        })
    }
}

/// Cross-fitted nuisances: predictions for fold `k` come from learners
/// trained on every other fold.
pub fn fit_crossfit(
    data: &Dataset,
    spec: &LearnerSpec,
    folds: &FoldAssignment,
    clip: f64,
) -> Result<NuisanceFit> {
    if folds.fold_of.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "fold assignment covers {} units but the dataset has {}",
            folds.fold_of.len(),
            data.len()
        )));
    }
    fit(data, spec, Split::CrossFit(folds), clip)
}

/// Nuisances trained and evaluated on the whole dataset (no cross-fitting).
pub fn fit_full_sample(data: &Dataset, spec: &LearnerSpec, clip: f64) -> Result<NuisanceFit> {
    fit(data, spec, Split::Full, clip)
}

#[derive(Clone, Copy)]
enum Split<'a> {
    CrossFit(&'a FoldAssignment),
    Full,
}

impl Split<'_> {
    fn groups(&self) -> usize {
        match self {
            Split::CrossFit(f) => f.num_folds,
            Split::Full => 1,
        }
    }

    fn group(&self, i: usize) -> usize {
        match self {
            Split::CrossFit(f) => f.fold_of[i],
            Split::Full => 0,
        }
    }
}

/// Count and target sum per stratum.
#[derive(Debug, Clone)]
struct CellStats {
    count: Vec<f64>,
    sum: Vec<f64>,
}

impl CellStats {
    fn zeros(num_strata: usize) -> Self {
        Self {
            count: vec![0.0; num_strata],
            sum: vec![0.0; num_strata],
        }
    }

    fn add(&mut self, other: &CellStats) {
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
    }

    fn total_count(&self) -> f64 {
        self.count.iter().sum()
    }

    fn total_sum(&self) -> f64 {
        self.sum.iter().sum()
    }
}

/// Training statistics for each prediction group.
fn training_stats(
    data: &Dataset,
    split: Split<'_>,
    member: impl Fn(usize) -> bool,
    value: impl Fn(usize) -> f64,
) -> Vec<CellStats> {
    let s = data.num_strata();
    let groups = split.groups();
    let mut per_group = vec![CellStats::zeros(s); groups];
    for (i, &x) in data.strata().iter().enumerate() {
        if member(i) {
            let g = &mut per_group[split.group(i)];
            g.count[x] += 1.0;
            g.sum[x] += value(i);
        }
    }
    match split {
        Split::Full => per_group,
        Split::CrossFit(_) => (0..groups)
            .map(|k| {
                let mut train = CellStats::zeros(s);
                for (f, stats) in per_group.iter().enumerate() {
                    if f != k {
                        train.add(stats);
                    }
                }
                train
            })
            .collect(),
    }
}

struct Fitter<'a> {
    spec: &'a LearnerSpec,
    codes: &'a [i64],
}

impl Fitter<'_> {
    fn features(&self, stratum: usize) -> Vec<f64> {
        match self.spec.basis {
            Basis::StratumDummies => {
                let mut phi = vec![0.0; self.codes.len()];
                phi[stratum] = 1.0;
                phi
            }
            Basis::RawCode => vec![1.0, self.codes[stratum] as f64],
        }
    }

    fn penalty_mask(&self) -> Vec<f64> {
        match self.spec.basis {
            Basis::StratumDummies => vec![1.0; self.codes.len()],
            Basis::RawCode => vec![0.0, 1.0],
        }
    }

    /// Per-stratum predictions for a continuous target. Cells flagged in the
    /// returned mask used a fallback value.
    fn fit_outcome(&self, stats: &CellStats, default: f64) -> Result<(Vec<f64>, Vec<bool>)> {
        match self.spec.kind {
            LearnerKind::StratumMean => Ok(self.cell_means(stats, default)),
            _ if stats.total_count() == 0.0 => Ok((
                vec![default; self.codes.len()],
                vec![true; self.codes.len()],
            )),
            LearnerKind::LinearRidge | LearnerKind::LogisticRidge => {
                Ok((self.linear_ridge(stats)?, vec![false; self.codes.len()]))
            }
        }
    }

    /// Per-stratum predictions for a 0/1 target.
    fn fit_binary(&self, stats: &CellStats) -> Result<(Vec<f64>, Vec<bool>)> {
        match self.spec.kind {
            LearnerKind::StratumMean => Ok(self.cell_means(stats, 0.0)),
            LearnerKind::LinearRidge => {
                Ok((self.linear_ridge(stats)?, vec![false; self.codes.len()]))
            }
            LearnerKind::LogisticRidge => {
                Ok((self.logistic_ridge(stats)?, vec![false; self.codes.len()]))
            }
        }
    }

    fn cell_means(&self, stats: &CellStats, default: f64) -> (Vec<f64>, Vec<bool>) {
        let n = stats.total_count();
        let marginal = if n > 0.0 {
            stats.total_sum() / n
        } else {
            default
        };
        stats
            .count
            .iter()
            .zip(&stats.sum)
            .map(|(&c, &s)| {
                if c > 0.0 {
                    (s / c, false)
                } else {
                    (marginal, true)
                }
            })
            .unzip()
    }

    fn linear_ridge(&self, stats: &CellStats) -> Result<Vec<f64>> {
        let d = self.features(0).len();
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for x in 0..self.codes.len() {
            let c = stats.count[x];
            if c == 0.0 {
                continue;
            }
            let phi = self.features(x);
            for r in 0..d {
                b[r] += stats.sum[x] * phi[r];
                for q in 0..d {
                    a[r * d + q] += c * phi[r] * phi[q];
                }
            }
        }
        for (r, m) in self.penalty_mask().iter().enumerate() {
            a[r * d + r] += self.spec.ridge_penalty * m;
        }
        let beta = cholesky_solve(&a, &b).ok_or_else(|| {
            Error::SingularFit(
                "linear ridge normal equations are singular (empty stratum in a training split?); \
                 set ridge_penalty > 0"
                    .into(),
            )
        })?;
        Ok((0..self.codes.len())
            .map(|x| dot(&self.features(x), &beta))
            .collect())
    }

    fn logistic_ridge(&self, stats: &CellStats) -> Result<Vec<f64>> {
        let n = stats.total_count();
        let successes = stats.total_sum();
        if self.spec.ridge_penalty == 0.0 && (successes == 0.0 || successes == n) {
            return Err(Error::SingularFit(
                "propensity training split contains a single class; the unpenalized logistic fit \
                 has no finite solution, set ridge_penalty > 0"
                    .into(),
            ));
        }
        let d = self.features(0).len();
        let mask = self.penalty_mask();
        let lambda = self.spec.ridge_penalty;
        let feats: Vec<Vec<f64>> = (0..self.codes.len()).map(|x| self.features(x)).collect();
        let mut beta = vec![0.0; d];
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let mut grad: Vec<f64> = (0..d).map(|r| lambda * mask[r] * beta[r]).collect();
            let mut hess = vec![0.0; d * d];
            for r in 0..d {
                hess[r * d + r] += lambda * mask[r];
            }
            for (x, phi) in feats.iter().enumerate() {
                let c = stats.count[x];
                if c == 0.0 {
                    continue;
                }
                let p = sigmoid(dot(phi, &beta));
                let resid = c * p - stats.sum[x];
                let w = c * p * (1.0 - p);
                for r in 0..d {
                    grad[r] += resid * phi[r];
                    for q in 0..d {
                        hess[r * d + q] += w * phi[r] * phi[q];
                    }
                }
            }
            let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if max_grad / n.max(1.0) <= NEWTON_GRAD_TOL {
                converged = true;
                break;
            }
            let step = cholesky_solve(&hess, &grad).ok_or_else(|| {
                Error::SingularFit(
                    "logistic Hessian is singular (quasi-separation); set ridge_penalty > 0".into(),
                )
            })?;
            for (b, s) in beta.iter_mut().zip(&step) {
                *b -= s;
            }
            if beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::SingularFit(
                    "logistic Newton iterations diverged".into(),
                ));
            }
        }
        if !converged {
            return Err(Error::SingularFit(format!(
                "logistic Newton iterations did not reach gradient tolerance {NEWTON_GRAD_TOL:e} \
                 within {NEWTON_MAX_ITER} steps"
            )));
        }
        Ok(feats.iter().map(|phi| sigmoid(dot(phi, &beta))).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-group, per-stratum prediction tables plus fallback flags.
struct Tables {
    values: Vec<Vec<f64>>,
    fallback: Vec<Vec<bool>>,
}

impl Tables {
    fn expand(&self, data: &Dataset, split: Split<'_>, fallback_count: &mut usize) -> Vec<f64> {
        data.strata()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let g = split.group(i);
                if self.fallback[g][x] {
                    *fallback_count += 1;
                }
                self.values[g][x]
            })
            .collect()
    }

    fn clip(&mut self, clip: f64) -> Vec<Vec<bool>> {
        self.values
            .iter_mut()
            .map(|row| {
                row.iter_mut()
                    .map(|p| {
                        let clipped = p.clamp(clip, 1.0 - clip);
                        let changed = clipped != *p;
                        *p = clipped;
                        changed
                    })
                    .collect()
            })
            .collect()
    }
}

fn count_flagged(data: &Dataset, split: Split<'_>, flags: &[Vec<bool>]) -> usize {
    data.strata()
        .iter()
        .enumerate()
        .filter(|&(i, &x)| flags[split.group(i)][x])
        .count()
}

fn fit(data: &Dataset, spec: &LearnerSpec, split: Split<'_>, clip: f64) -> Result<NuisanceFit> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit nuisances on an empty dataset".into(),
        ));
    }
    if !(0.0..0.5).contains(&clip) {
        return Err(Error::InvalidArgument(format!(
            "clip must lie in [0, 0.5), got {clip}"
        )));
    }
    let y = data.y();
    let fitter = Fitter {
        spec,
        codes: data.strata_codes(),
    };
    let mut fallback_count = 0;
    let mut clipped_count = 0;

    let pooled_stats = training_stats(data, split, |_| true, |i| y[i]);
    let pooled_means: Vec<f64> = pooled_stats
        .iter()
        .map(|s| {
            if s.total_count() > 0.0 {
                s.total_sum() / s.total_count()
            } else {
                0.0
            }
        })
        .collect();

    let fit_outcome_tables = |member: &dyn Fn(usize) -> bool| -> Result<Tables> {
        let stats = training_stats(data, split, member, |i| y[i]);
        let mut values = Vec::with_capacity(stats.len());
        let mut fallback = Vec::with_capacity(stats.len());
        for (g, s) in stats.iter().enumerate() {
            let (v, f) = fitter.fit_outcome(s, pooled_means[g])?;
            values.push(v);
            fallback.push(f);
        }
        Ok(Tables { values, fallback })
    };
    let fit_binary_tables = |indicator: &dyn Fn(usize) -> bool| -> Result<Tables> {
        let stats = training_stats(data, split, |_| true, |i| f64::from(u8::from(indicator(i))));
        let mut values = Vec::with_capacity(stats.len());
        let mut fallback = Vec::with_capacity(stats.len());
        for s in &stats {
            let (v, f) = fitter.fit_binary(s)?;
            values.push(v);
            fallback.push(f);
        }
        Ok(Tables { values, fallback })
    };

    let y_hat = fit_outcome_tables(&|_| true)?.expand(data, split, &mut fallback_count);
    let k = data.num_treatments();
    let mut per_treatment = Vec::with_capacity(k);

    match data.mode() {
        AssignmentMode::ParallelBinary => {
            for j in 1..=k {
                let w = data.treated(j);
                let mu_treated =
                    fit_outcome_tables(&|i| w[i] == 1)?.expand(data, split, &mut fallback_count);
                let mu_control =
                    fit_outcome_tables(&|i| w[i] == 0)?.expand(data, split, &mut fallback_count);
                let mut prop = fit_binary_tables(&|i| w[i] == 1)?;
                let flags = prop.clip(clip);
                clipped_count += count_flagged(data, split, &flags);
                let p_treated = prop.expand(data, split, &mut fallback_count);
                let p_control = p_treated.iter().map(|p| 1.0 - p).collect();
                per_treatment.push(TreatmentNuisance {
                    mu_treated,
                    mu_control,
                    p_treated,
                    p_control,
                });
            }
        }
        AssignmentMode::Multinomial => {
            let groups = split.groups();
            let mut arm_probs: Vec<Tables> = (0..=k)
                .map(|a| fit_binary_tables(&|i| data.arm(i) == a))
                .collect::<Result<_>>()?;
            if spec.kind == LearnerKind::LogisticRidge {
                // One-vs-rest fits do not sum to one on their own.
                for g in 0..groups {
                    for x in 0..data.num_strata() {
                        let total: f64 = arm_probs.iter().map(|t| t.values[g][x]).sum();
                        for t in arm_probs.iter_mut() {
                            t.values[g][x] /= total;
                        }
                    }
                }
            }
            let mut probs = Vec::with_capacity(k + 1);
            for t in arm_probs.iter_mut() {
                let flags = t.clip(clip);
                clipped_count += count_flagged(data, split, &flags);
                probs.push(t.expand(data, split, &mut fallback_count));
            }
            let mut mus = Vec::with_capacity(k + 1);
            for a in 0..=k {
                mus.push(fit_outcome_tables(&|i| data.arm(i) == a)?.expand(
                    data,
                    split,
                    &mut fallback_count,
                ));
            }
            for j in 1..=k {
                per_treatment.push(TreatmentNuisance {
                    mu_treated: mus[j].clone(),
                    mu_control: mus[0].clone(),
                    p_treated: probs[j].clone(),
                    p_control: probs[0].clone(),
                });
            }
        }
    }

    Ok(NuisanceFit {
        mode: data.mode(),
        y_hat,
        per_treatment,
        clipped_count,
        fallback_count,
    })
}
