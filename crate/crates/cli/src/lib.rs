//! Command-line front end: oracles, sampling, estimation, decomposition,
//! reversal checks and the Monte Carlo study.

pub mod dataset;
pub mod report;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use treatrank::config::{parse_config, ScenarioSettings};
use treatrank::dgp::{oracle_decomposition, sample, Dataset, OracleQuantities};
use treatrank::diagnostics::{
    check_reversal, estimate_decomposition, oracle_report, rank_treatments, rank_values,
    reversal_condition, sufficient_condition_check, DecompositionReport, RankingResult, Source,
};
use treatrank::estimators::{estimate, EffectEstimate, Method};
use treatrank::montecarlo::{
    histogram, preset, run_scenario, summarize, MonteCarloResult, ScenarioConfig, SummaryRow,
};
use treatrank::nuisance::{
    assign_folds, fit_crossfit, Basis, LearnerKind, LearnerSpec, NuisanceFit,
};

use report::{
    json_bytes, write_file, DecompositionRow, EstimateRow, Format, HistogramRow, OracleRow,
    RankRow, RateRow, ReplicateRow, ReversalRow, Sink, StratumRow, SummaryCsvRow, Table,
};

const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Parser)]
#[command(
    name = "treatrank",
    version,
    about = "Rank treatments by regression-weighted and average effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form ATE, WATE and covariance per treatment, plus reversal flags.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Draw a dataset from a DGP and write it as CSV.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Number of units (defaults to the scenario's n_per_rep).
        #[arg(long)]
        n: Option<usize>,
    },
    /// PLM, AIPW and IPW estimates for every treatment.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// WATE = ATE + Cov decomposition, from the tables or from data.
    Decompose {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Pairwise reversal checks, from the tables or from data.
    Reversal {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Also evaluate the sufficient conditions at this threshold.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Replicated sampling and estimation for a scenario.
    Montecarlo {
        #[command(flatten)]
        run: RunArgs,
        /// Units per replicate.
        #[arg(long)]
        n: Option<usize>,
        /// Number of replicates.
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        fit: FitArgs,
        /// Worker threads (defaults to the available cores).
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Options shared by every command.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// DGP or scenario config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped scenario to use instead of a config file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory; without it the report goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed override for sampling, fold assignment and replicates.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV to analyse instead of sampling from the DGP.
    #[arg(long, conflicts_with = "n")]
    pub data: Option<PathBuf>,
    /// Sample this many units from the DGP.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnerArg {
    #[value(alias = "stratum_mean")]
    StratumMean,
    #[value(alias = "linear_ridge")]
    LinearRidge,
    #[value(alias = "logistic_ridge")]
    LogisticRidge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    #[value(alias = "stratum_dummies")]
    StratumDummies,
    #[value(alias = "raw_code")]
    RawCode,
}

/// Nuisance-fitting options; each overrides the config file.
#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum)]
    pub learner: Option<LearnerArg>,
    #[arg(long)]
    pub ridge_penalty: Option<f64>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    /// Propensities are clipped to [clip, 1 - clip].
    #[arg(long)]
    pub clip: Option<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Oracle { run } => cmd_oracle(&run),
        Command::Sample { run, n } => cmd_sample(&run, n),
        Command::Estimate { run, data, fit } => cmd_estimate(&run, &data, &fit),
        Command::Decompose { run, data, fit } => cmd_decompose(&run, &data, &fit),
        Command::Reversal {
            run,
            data,
            fit,
            delta,
        } => cmd_reversal(&run, &data, &fit, delta),
        Command::Montecarlo {
            run,
            n,
            reps,
            fit,
            workers,
        } => cmd_montecarlo(&run, n, reps, &fit, workers),
    }
}

fn load_scenario(run: &RunArgs) -> Result<Option<ScenarioConfig>> {
    if let Some(name) = &run.preset {
        return Ok(Some(preset(name)?));
    }
    let Some(path) = &run.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    Ok(Some(ScenarioConfig::from_config(parsed)?))
}

fn require_scenario(run: &RunArgs) -> Result<ScenarioConfig> {
    match load_scenario(run)? {
        Some(s) => Ok(s),
        None => bail!("a DGP is required: pass --config <file> or --preset <name>"),
    }
}

/// The settings that drive nuisance fitting.
struct FitSettings {
    seed: u64,
    num_folds: usize,
    clip: f64,
    learner: LearnerSpec,
}

impl FitSettings {
    fn from_scenario(cfg: Option<&ScenarioConfig>) -> Self {
        match cfg {
            Some(c) => Self {
                seed: c.seed,
                num_folds: c.num_folds,
                clip: c.clip,
                learner: c.learner,
            },
            None => {
                let d = ScenarioSettings::default();
                Self {
                    seed: d.seed,
                    num_folds: d.num_folds,
                    clip: d.clip,
                    learner: LearnerSpec::default(),
                }
            }
        }
    }

    /// Applies the command-line overrides.
    fn with_overrides(mut self, run: &RunArgs, fit: &FitArgs) -> Result<Self> {
        if let Some(seed) = run.seed {
            self.seed = seed;
        }
        if let Some(k) = fit.folds {
            self.num_folds = k;
        }
        if let Some(c) = fit.clip {
            self.clip = c;
        }
        if let Some(l) = fit.learner {
            self.learner.kind = match l {
                LearnerArg::StratumMean => LearnerKind::StratumMean,
                LearnerArg::LinearRidge => LearnerKind::LinearRidge,
                LearnerArg::LogisticRidge => LearnerKind::LogisticRidge,
            };
        }
        if let Some(p) = fit.ridge_penalty {
            self.learner.ridge_penalty = p;
        }
        if let Some(b) = fit.basis {
            self.learner.basis = match b {
                BasisArg::StratumDummies => Basis::StratumDummies,
                BasisArg::RawCode => Basis::RawCode,
            };
        }
        self.learner.validate()?;
        Ok(self)
    }
}

fn sink(run: &RunArgs, default: Format) -> Sink {
    Sink {
        dir: run.out.clone(),
        format: run.format.unwrap_or(default),
    }
}

fn oracle_rows(oracle: &[OracleQuantities]) -> Vec<OracleRow> {
    oracle
        .iter()
        .map(|q| OracleRow {
            treatment: q.treatment,
            ate: q.ate,
            wate: q.wate,
            cov_tau_gamma: q.cov_tau_gamma,
        })
        .collect()
}

fn stratum_rows(reports: &[DecompositionReport]) -> Vec<StratumRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_stratum.iter().map(move |t| StratumRow {
                treatment: r.treatment,
                source: source_name(r.source).into(),
                stratum: t.stratum,
                probability: t.probability,
                tau: t.tau,
                gamma: t.gamma,
            })
        })
        .collect()
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Oracle => "oracle",
        Source::Estimated => "estimated",
    }
}

fn reversal_rows(reports: &[DecompositionReport], delta: Option<f64>) -> Vec<ReversalRow> {
    let mut rows = Vec::new();
    for (a, dj) in reports.iter().enumerate() {
        for dk in &reports[a + 1..] {
            let check = check_reversal(dj, dk);
            let (hi, lo) = if dk.ate > dj.ate { (dk, dj) } else { (dj, dk) };
            rows.push(ReversalRow {
                treatment_j: dj.treatment,
                treatment_k: dk.treatment,
                ate_j: dj.ate,
                ate_k: dk.ate,
                wate_j: dj.wate,
                wate_k: dk.wate,
                cov_j: dj.cov_tau_gamma,
                cov_k: dk.cov_tau_gamma,
                reversed: check.reversed,
                margin: check.margin,
                condition: reversal_condition(hi, lo),
                sufficient: delta.map(|d| sufficient_condition_check(hi, lo, d)),
            });
        }
    }
    rows
}

fn rank_rows(r: &RankingResult) -> Vec<RankRow> {
    let tag = |name: &str, order: &[usize]| -> Vec<RankRow> {
        order
            .iter()
            .enumerate()
            .map(|(i, &t)| RankRow {
                ordering: name.into(),
                position: i + 1,
                treatment: t,
            })
            .collect()
    };
    let mut rows = tag("ate", &r.ordering_by_ate);
    rows.extend(tag("wate", &r.ordering_by_wate));
    rows
}

#[derive(Serialize)]
struct OracleDoc {
    treatments: Vec<OracleQuantities>,
    reversed_pairs: Vec<(usize, usize)>,
    reversals: Vec<ReversalRow>,
    ranking: RankingResult,
}

fn cmd_oracle(run: &RunArgs) -> Result<()> {
    let cfg = require_scenario(run)?;
    let dgp = &cfg.dgp;
    let k = dgp.num_treatments();
    let oracle = (1..=k)
        .map(|j| oracle_decomposition(dgp, j))
        .collect::<treatrank::Result<Vec<_>>>()?;
    let reports = (1..=k)
        .map(|j| oracle_report(dgp, j))
        .collect::<treatrank::Result<Vec<_>>>()?;
    let treatments: Vec<usize> = (1..=k).collect();
    let ate: Vec<f64> = oracle.iter().map(|q| q.ate).collect();
    let wate: Vec<f64> = oracle.iter().map(|q| q.wate).collect();
    let ranking = rank_values(&treatments, &ate, &wate)?;
    let reversals = reversal_rows(&reports, None);
    let doc = OracleDoc {
        reversed_pairs: reversals
            .iter()
            .filter(|r| r.reversed)
            .map(|r| (r.treatment_j, r.treatment_k))
            .collect(),
        treatments: oracle,
        reversals,
        ranking,
    };
    let tables = [
        Table::new("oracle", &oracle_rows(&doc.treatments))?,
        Table::new("reversals", &doc.reversals)?,
        Table::new("strata", &stratum_rows(&reports))?,
        Table::new("ranking", &rank_rows(&doc.ranking))?,
    ];
    sink(run, Format::Json).emit("oracle", &doc, &tables)
}

fn cmd_sample(run: &RunArgs, n: Option<usize>) -> Result<()> {
    if run.format == Some(Format::Json) {
        bail!("sample writes CSV datasets only");
    }
    let cfg = require_scenario(run)?;
    let n = n.unwrap_or(cfg.n_per_rep);
    let seed = run.seed.unwrap_or(cfg.seed);
    let data = sample(&cfg.dgp, n, seed)?;
    let mut bytes = Vec::new();
    dataset::write_dataset(&data, &mut bytes)?;
    match &run.out {
        Some(dir) => write_file(dir, "data.csv", &bytes),
        None => report::stdout(&bytes),
    }
}

/// Dataset and cross-fitted nuisances for the data-driven commands.
struct Fitted {
    data: Dataset,
    fit: NuisanceFit,
}

fn fit_data(
    run: &RunArgs,
    data_args: &DataArgs,
    fit_args: &FitArgs,
    scenario: Option<ScenarioConfig>,
) -> Result<Fitted> {
    let data = match (&data_args.data, &scenario) {
        (Some(path), _) => {
            let file =
                fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            dataset::read_dataset(file).with_context(|| format!("in {}", path.display()))?
        }
        (None, Some(cfg)) => sample(
            &cfg.dgp,
            data_args.n.unwrap_or(cfg.n_per_rep),
            run.seed.unwrap_or(cfg.seed),
        )?,
        (None, None) => bail!("no data: pass --data <csv>, or --config/--preset to sample one"),
    };
    let cfg = FitSettings::from_scenario(scenario.as_ref()).with_overrides(run, fit_args)?;
    let folds = assign_folds(data.len(), cfg.num_folds, cfg.seed)?;
    let fit = fit_crossfit(&data, &cfg.learner, &folds, cfg.clip)?;
    Ok(Fitted { data, fit })
}

fn data_driven(data: &DataArgs) -> bool {
    data.data.is_some() || data.n.is_some()
}

#[derive(Serialize)]
struct EstimateDoc {
    n: usize,
    clipped_count: usize,
    fallback_count: usize,
    estimates: Vec<EstimateRow>,
    decompositions: Vec<DecompositionRow>,
    strata: Vec<StratumRow>,
    ranking: Option<RankingResult>,
    ranking_error: Option<String>,
}

fn estimate_row(j: usize, method: Method, r: &treatrank::Result<EffectEstimate>) -> EstimateRow {
    match r {
        Ok(e) => EstimateRow {
            method: method.as_str().into(),
            treatment: j,
            versus: e.versus,
            estimand: e.estimand.as_str().into(),
            point: Some(e.point),
            std_error: Some(e.std_error),
            n_used: Some(e.n_used),
            error: None,
        },
        Err(err) => EstimateRow {
            method: method.as_str().into(),
            treatment: j,
            versus: 0,
            estimand: method.estimand().as_str().into(),
            point: None,
            std_error: None,
            n_used: None,
            error: Some(err.to_string()),
        },
    }
}

fn decomposition_row(j: usize, r: &treatrank::Result<DecompositionReport>) -> DecompositionRow {
    match r {
        Ok(d) => DecompositionRow {
            treatment: j,
            source: source_name(d.source).into(),
            ate: Some(d.ate),
            cov_tau_gamma: Some(d.cov_tau_gamma),
            wate: Some(d.wate),
            dropped_strata: Some(d.dropped_strata),
            error: None,
        },
        Err(err) => DecompositionRow {
            treatment: j,
            source: source_name(Source::Estimated).into(),
            ate: None,
            cov_tau_gamma: None,
            wate: None,
            dropped_strata: None,
            error: Some(err.to_string()),
        },
    }
}

fn cmd_estimate(run: &RunArgs, data_args: &DataArgs, fit_args: &FitArgs) -> Result<()> {
    let scenario = load_scenario(run)?;
    let Fitted { data, fit } = fit_data(run, data_args, fit_args, scenario)?;
    let k = data.num_treatments();
    let mut ok = Vec::new();
    let mut estimates = Vec::new();
    for method in Method::ALL {
        for j in 1..=k {
            let r = estimate(&data, &fit, j, method);
            estimates.push(estimate_row(j, method, &r));
            if let Ok(e) = r {
                ok.push(e);
            }
        }
    }
    let decomps: Vec<_> = (1..=k)
        .map(|j| estimate_decomposition(&data, &fit, j))
        .collect();
    let good: Vec<DecompositionReport> = decomps
        .iter()
        .filter_map(|d| d.as_ref().ok().cloned())
        .collect();
    let (ranking, ranking_error) = match rank_treatments(&ok) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let doc = EstimateDoc {
        n: data.len(),
        clipped_count: fit.clipped_count,
        fallback_count: fit.fallback_count,
        estimates,
        decompositions: decomps
            .iter()
            .enumerate()
            .map(|(i, d)| decomposition_row(i + 1, d))
            .collect(),
        strata: stratum_rows(&good),
        ranking,
        ranking_error,
    };
    let ranks = doc.ranking.as_ref().map(rank_rows).unwrap_or_default();
    let tables = [
        Table::new("estimates", &doc.estimates)?,
        Table::new("decomposition", &doc.decompositions)?,
        Table::new("strata", &doc.strata)?,
        Table::new("ranking", &ranks)?,
    ];
    sink(run, Format::Json).emit("estimate", &doc, &tables)
}

#[derive(Serialize)]
struct DecomposeDoc {
    decompositions: Vec<DecompositionRow>,
    reports: Vec<DecompositionReport>,
}

/// Decomposition reports from the tables, or estimated when data is given.
fn reports(
    run: &RunArgs,
    data_args: &DataArgs,
    fit_args: &FitArgs,
) -> Result<Vec<treatrank::Result<DecompositionReport>>> {
    let scenario = load_scenario(run)?;
    if data_driven(data_args) {
        let Fitted { data, fit } = fit_data(run, data_args, fit_args, scenario)?;
        Ok((1..=data.num_treatments())
            .map(|j| estimate_decomposition(&data, &fit, j))
            .collect())
    } else {
        let Some(cfg) = scenario else {
            bail!("a DGP is required: pass --config <file> or --preset <name>, or --data <csv>");
        };
        Ok((1..=cfg.dgp.num_treatments())
            .map(|j| oracle_report(&cfg.dgp, j))
            .collect())
    }
}

fn cmd_decompose(run: &RunArgs, data_args: &DataArgs, fit_args: &FitArgs) -> Result<()> {
    let all = reports(run, data_args, fit_args)?;
    let good: Vec<DecompositionReport> = all
        .iter()
        .filter_map(|d| d.as_ref().ok().cloned())
        .collect();
    let doc = DecomposeDoc {
        decompositions: all
            .iter()
            .enumerate()
            .map(|(i, d)| decomposition_row(i + 1, d))
            .collect(),
        reports: good,
    };
    let tables = [
        Table::new("decomposition", &doc.decompositions)?,
        Table::new("strata", &stratum_rows(&doc.reports))?,
    ];
    sink(run, Format::Json).emit("decompose", &doc, &tables)
}

#[derive(Serialize)]
struct ReversalDoc {
    delta: Option<f64>,
    reversed_pairs: Vec<(usize, usize)>,
    pairs: Vec<ReversalRow>,
    skipped: Vec<DecompositionRow>,
}

fn cmd_reversal(
    run: &RunArgs,
    data_args: &DataArgs,
    fit_args: &FitArgs,
    delta: Option<f64>,
) -> Result<()> {
    if let Some(d) = delta {
        if !(d > 0.0 && d.is_finite()) {
            bail!("--delta must be a positive number, got {d}");
        }
    }
    let all = reports(run, data_args, fit_args)?;
    let good: Vec<DecompositionReport> = all
        .iter()
        .filter_map(|d| d.as_ref().ok().cloned())
        .collect();
    let pairs = reversal_rows(&good, delta);
    let doc = ReversalDoc {
        delta,
        reversed_pairs: pairs
            .iter()
            .filter(|r| r.reversed)
            .map(|r| (r.treatment_j, r.treatment_k))
            .collect(),
        skipped: all
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_err())
            .map(|(i, d)| decomposition_row(i + 1, d))
            .collect(),
        pairs,
    };
    let tables = [Table::new("reversals", &doc.pairs)?];
    sink(run, Format::Json).emit("reversal", &doc, &tables)
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    scenario: &'a str,
    n_per_rep: usize,
    num_reps: usize,
    seed: u64,
    rows: &'a [SummaryRow],
    ranking_rates: Vec<RateRow>,
}

#[derive(Serialize)]
struct RuntimeDoc {
    wall_seconds: f64,
    workers: usize,
}

fn summary_rows(rows: &[SummaryRow]) -> Vec<SummaryCsvRow> {
    rows.iter()
        .map(|r| SummaryCsvRow {
            method: r.method.as_str().into(),
            treatment: r.treatment,
            n_ok: r.n_ok,
            mean: r.mean,
            sd: r.sd,
            q025: r.q025,
            q50: r.q50,
            q975: r.q975,
            oracle_ate: r.oracle_ate,
            oracle_wate: r.oracle_wate,
            bias_vs_ate: r.bias_vs_ate,
            bias_vs_wate: r.bias_vs_wate,
            correct_ranking_rate: r.correct_ranking_rate,
        })
        .collect()
}

fn replicate_rows(result: &MonteCarloResult) -> Vec<ReplicateRow> {
    let k = result.config.dgp.num_treatments();
    let mut rows = Vec::new();
    for rep in &result.replicates {
        let base = |method: Method, treatment: usize| ReplicateRow {
            replicate: rep.replicate,
            seed: rep.seed,
            method: method.as_str().into(),
            treatment,
            point: None,
            std_error: None,
            error: rep.error.clone(),
            clipped_count: rep.clipped_count,
            fallback_count: rep.fallback_count,
        };
        if rep.estimates.is_empty() {
            for method in Method::ALL {
                rows.extend((1..=k).map(|j| base(method, j)));
            }
            continue;
        }
        for e in &rep.estimates {
            rows.push(ReplicateRow {
                point: e.point,
                std_error: e.std_error,
                error: e.error.clone(),
                ..base(e.method, e.treatment)
            });
        }
    }
    rows
}

fn histogram_rows(result: &MonteCarloResult) -> Vec<HistogramRow> {
    let mut rows = Vec::new();
    for method in Method::ALL {
        for j in 1..=result.config.dgp.num_treatments() {
            for (b, bin) in histogram(&result.samples(method, j), HISTOGRAM_BINS)
                .into_iter()
                .enumerate()
            {
                rows.push(HistogramRow {
                    method: method.as_str().into(),
                    treatment: j,
                    bin: b,
                    lower: bin.lower,
                    upper: bin.upper,
                    count: bin.count,
                });
            }
        }
    }
    rows
}

fn rate_rows(result: &MonteCarloResult) -> Vec<RateRow> {
    Method::ALL
        .iter()
        .map(|&m| RateRow {
            method: m.as_str().into(),
            correct_ranking_rate: result.ranking_rate(m),
            failure_rate: result
                .failure_rate
                .iter()
                .find(|r| r.method == m)
                .map_or(0.0, |r| r.rate),
        })
        .collect()
}

fn cmd_montecarlo(
    run: &RunArgs,
    n: Option<usize>,
    reps: Option<usize>,
    fit_args: &FitArgs,
    workers: Option<usize>,
) -> Result<()> {
    let mut cfg = require_scenario(run)?;
    let fit = FitSettings::from_scenario(Some(&cfg)).with_overrides(run, fit_args)?;
    cfg.seed = fit.seed;
    cfg.num_folds = fit.num_folds;
    cfg.clip = fit.clip;
    cfg.learner = fit.learner;
    if let Some(n) = n {
        cfg.n_per_rep = n;
    }
    if let Some(r) = reps {
        cfg.num_reps = r;
    }
    let workers =
        workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let start = Instant::now();
    let result = run_scenario(&cfg, workers)?;
    let wall = start.elapsed().as_secs_f64();
    eprintln!(
        "{}: {} replicates of {} units in {wall:.2}s on {workers} workers",
        cfg.name, cfg.num_reps, cfg.n_per_rep
    );
    let rows = summarize(&result)?;
    let summary = SummaryDoc {
        scenario: &cfg.name,
        n_per_rep: cfg.n_per_rep,
        num_reps: cfg.num_reps,
        seed: cfg.seed,
        rows: &rows,
        ranking_rates: rate_rows(&result),
    };
    let summary_csv = Table::new("summary", &summary_rows(&rows))?;
    let Some(dir) = &run.out else {
        return match run.format.unwrap_or(Format::Json) {
            Format::Json => report::stdout(&json_bytes(&summary)?),
            Format::Csv => report::stdout(&summary_csv.bytes),
        };
    };
    write_file(dir, "result.json", &json_bytes(&result)?)?;
    write_file(dir, "summary.json", &json_bytes(&summary)?)?;
    write_file(
        dir,
        "runtime.json",
        &json_bytes(&RuntimeDoc {
            wall_seconds: wall,
            workers,
        })?,
    )?;
    let tables = [
        summary_csv,
        Table::new("replicates", &replicate_rows(&result))?,
        Table::new("histograms", &histogram_rows(&result))?,
        Table::new("ranking_rates", &rate_rows(&result))?,
    ];
    for t in &tables {
        write_file(dir, &format!("{}.csv", t.name), &t.bytes)?;
    }
    Ok(())
}
