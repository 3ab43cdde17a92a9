//! Text format for DGP and scenario files.
//!
//! A file is TOML with a required `[dgp]` table, one `[[dgp.strata]]` row per
//! stratum, and optional `[scenario]` and `[learner]` tables:
//!
//! ```toml
//! [scenario]
//! name = "extreme_heterogeneity"
//! n_per_rep = 10000
//! num_reps = 1000
//! seed = 20240917
//! num_folds = 5
//! clip = 0.01
//!
//! [learner]
//! kind = "stratum_mean"        # stratum_mean | linear_ridge | logistic_ridge
//! ridge_penalty = 0.0
//! basis = "stratum_dummies"    # stratum_dummies | raw_code
//!
//! [dgp]
//! num_treatments = 2
//! assignment = "parallel_binary"   # parallel_binary | multinomial
//! noise_sd = 1.0
//!
//! [[dgp.strata]]
//! code = 0
//! probability = 0.5
//! baseline = 0.0                   # defaults to the stratum code
//! propensity = [0.01, 0.5]         # one entry per treatment
//! effect = [-3.0, -2.0]
//! ```

use serde::{Deserialize, Serialize};

use crate::dgp::{AssignmentMode, StratifiedDgp, Stratum};
use crate::error::{Error, Result};
use crate::nuisance::{LearnerSpec, DEFAULT_CLIP, DEFAULT_NUM_FOLDS};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawStratum {
    code: i64,
    probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline: Option<f64>,
    propensity: Vec<f64>,
    effect: Vec<f64>,
}

fn default_noise_sd() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDgp {
    num_treatments: usize,
    #[serde(default)]
    assignment: AssignmentMode,
    #[serde(default = "default_noise_sd")]
    noise_sd: f64,
    strata: Vec<RawStratum>,
}

/// Run settings of a scenario file. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSettings {
    pub name: String,
    pub n_per_rep: usize,
    pub num_reps: usize,
    pub seed: u64,
    pub num_folds: usize,
    pub clip: f64,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            n_per_rep: 10_000,
            num_reps: 1_000,
            seed: 20_240_917,
            num_folds: DEFAULT_NUM_FOLDS,
            clip: DEFAULT_CLIP,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learner: Option<LearnerSpec>,
    dgp: RawDgp,
}

/// Parsed contents of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub scenario: ScenarioSettings,
    pub learner: LearnerSpec,
    pub dgp: StratifiedDgp,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let strata = raw
        .dgp
        .strata
        .into_iter()
        .map(|s| Stratum {
            code: s.code,
            probability: s.probability,
            baseline: s.baseline.unwrap_or(s.code as f64),
            propensity: s.propensity,
            effect: s.effect,
        })
        .collect();
    let dgp = StratifiedDgp::new(
        raw.dgp.num_treatments,
        strata,
        raw.dgp.noise_sd,
        raw.dgp.assignment,
    )?;
    let learner = raw.learner.unwrap_or_default();
    learner.validate()?;
    Ok(ConfigFile {
        scenario: raw.scenario.unwrap_or_default(),
        learner,
        dgp,
    })
}

pub fn parse_dgp(text: &str) -> Result<StratifiedDgp> {
    parse_config(text).map(|c| c.dgp)
}

fn raw_dgp(dgp: &StratifiedDgp) -> RawDgp {
    RawDgp {
        num_treatments: dgp.num_treatments(),
        assignment: dgp.assignment(),
        noise_sd: dgp.noise_sd(),
        strata: dgp
            .strata()
            .iter()
            .map(|s| RawStratum {
                code: s.code,
                probability: s.probability,
                baseline: Some(s.baseline),
                propensity: s.propensity.clone(),
                effect: s.effect.clone(),
            })
            .collect(),
    }
}

/// Writes a DGP-only config file.
pub fn dgp_to_toml(dgp: &StratifiedDgp) -> String {
    let raw = RawFile {
        scenario: None,
        learner: None,
        dgp: raw_dgp(dgp),
    };
    toml::to_string(&raw).expect("DGP tables always serialize")
}

/// Writes a full scenario config file.
pub fn config_to_toml(config: &ConfigFile) -> String {
    let raw = RawFile {
        scenario: Some(config.scenario.clone()),
        learner: Some(config.learner),
        dgp: raw_dgp(&config.dgp),
    };
    toml::to_string(&raw).expect("config always serializes")
}
