//! Command-line experiment runner.
//!
//! Experiments are described by an [`ExperimentConfig`], read from a JSON file
//! (`--config`) and overridden field by field by flags. The seed falls back to
//! the config, then to `EQUIVAX_SEED`, then to 0.
//!
//! Exit codes: 0 success, 1 a `check` report failed, 2 invalid input, 3
//! numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensityFamily, FamilyKind, LossSpec};
use crate::pitman::{
    bayes_location_gaussian, bayes_scale_lognormal, pitman_location, pitman_scale, GaussianLocationPrior,
    LogNormalScalePrior,
};
use crate::quad::QuadConfig;
use crate::risk::{
    bayes_risk, constant_risk_report, convergence_sweep, mc_risk, write_csv, write_json, CsvRow, EstimatorSpec,
    PriorSpec, RiskModel, RiskSetup, Truth,
};
use crate::rng::substream;
use crate::wishart::{
    bayes_cov_estimator, mle, sample_bartlett, sigma0_hat, KSchedule, LowerTriangular, Matrix, McConfig, Proposal,
    WishartModel,
};

pub const SEED_ENV: &str = "EQUIVAX_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "equivax", version, about = "Best equivariant estimators, their Bayes approximations and MC risk")]
pub struct Cli {
    /// Worker threads for Monte Carlo; results do not depend on it
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pitman (or, with --k, Bayes) location estimate of a sample
    EstimateLocation(EstimateArgs),
    /// Pitman (or, with --k, Bayes) estimate of sigma^c from a sample
    EstimateScale(EstimateArgs),
    /// Covariance estimate from a Wishart factor T or matrix V
    EstimateCov(CovArgs),
    /// Frequentist MC risk at one truth
    Risk(ExperimentArgs),
    /// Bayes risk under the prior with scale k, for each k
    BayesRisk(ExperimentArgs),
    /// R0 and the gaps R0 - r_k over a k-list
    Sweep(ExperimentArgs),
    /// Constant-risk and equivariance reports for the best equivariant rule
    Check(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct QuadArgs {
    /// Quadrature relative tolerance, in (0, 1e-2]
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Maximum adaptive subdivisions
    #[arg(long)]
    pub max_subdivisions: Option<usize>,
    /// Integration window half-width in standardized units (>= 6)
    #[arg(long)]
    pub window: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Family tag, e.g. gaussian-iid, laplace-iid, uniform01-iid, exponential-iid, halfnormal-iid
    #[arg(long)]
    pub family: String,
    /// Sample as a comma list, or a CSV file whose first column holds it
    #[arg(long, allow_hyphen_values = true)]
    pub data: String,
    /// Prior scale; gives the Bayes rule instead of the Pitman rule
    #[arg(long)]
    pub k: Option<f64>,
    /// Power of sigma to estimate (scale only)
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Debug, Args)]
pub struct CovArgs {
    /// Degrees of freedom
    #[arg(long)]
    pub n: usize,
    /// JSON: row-major matrix V, or packed factor {"p": .., "entries": [..]}; inline or a file path
    #[arg(long)]
    pub data: String,
    /// pitman-type rule sigma0 (default), mle, or bayes-k
    #[arg(long)]
    pub estimator: Option<String>,
    /// Prior scale for bayes-k
    #[arg(long)]
    pub k: Option<f64>,
    /// Importance draws for bayes-k
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    /// Importance proposal: prior or invariant-posterior
    #[arg(long)]
    pub proposal: Option<String>,
    /// Seed for bayes-k (falls back to EQUIVAX_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail on a degenerate importance sample
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// location, scale or covariance
    #[arg(long)]
    pub problem: Option<String>,
    /// Family tag (location and scale)
    #[arg(long)]
    pub family: Option<String>,
    /// Sample size, or Wishart degrees of freedom
    #[arg(long)]
    pub n: Option<usize>,
    /// Dimension (covariance only)
    #[arg(long)]
    pub p: Option<usize>,
    /// Loss tag; must match the problem (squared-error, entropy, stein)
    #[arg(long)]
    pub loss: Option<String>,
    /// pitman, bayes-k, sigma0, mle or sample-mean
    #[arg(long)]
    pub estimator: Option<String>,
    /// Comma list of prior scales
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<f64>>,
    /// Power of sigma to estimate (scale only)
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    /// Monte Carlo replications
    #[arg(long)]
    pub reps: Option<usize>,
    /// Experiment seed (falls back to the config, EQUIVAX_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truth for `risk`: mu, sigma, or a JSON covariance matrix
    #[arg(long, allow_hyphen_values = true)]
    pub truth: Option<String>,
    /// CSV output path (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary path
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Importance draws per replicate for the covariance Bayes rule
    #[arg(long)]
    pub draws: Option<usize>,
    /// Importance proposal: prior or invariant-posterior
    #[arg(long)]
    pub proposal: Option<String>,
    /// Fail on a degenerate importance sample
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub quad: QuadArgs,
}

/// Declarative experiment description. Every field is optional so that a
/// config file and flags can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Option<String>,
    pub family: Option<String>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub loss: Option<String>,
    pub estimator: Option<String>,
    pub k: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub truth: Option<serde_json::Value>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub draws: Option<usize>,
    pub proposal: Option<Proposal>,
    pub strict: Option<bool>,
    pub workers: Option<usize>,
    pub rel_tol: Option<f64>,
    pub max_subdivisions: Option<usize>,
    pub window: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overridden_by(self, other: ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { ExperimentConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            problem, family, n, p, loss, estimator, k, c, reps, seed, truth, out, summary, draws, proposal, strict,
            workers, rel_tol, max_subdivisions, window
        )
    }

    fn quad(&self) -> Result<QuadConfig> {
        let d = QuadConfig::default();
        let q = QuadConfig {
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            max_subdivisions: self.max_subdivisions.unwrap_or(d.max_subdivisions),
            window: self.window.unwrap_or(d.window),
        };
        q.validate()?;
        Ok(q)
    }

    /// Checks field consistency and builds the risk setup.
    pub fn setup(&self) -> Result<RiskSetup> {
        let problem: crate::risk::Problem = self
            .problem
            .as_deref()
            .ok_or_else(|| Error::invalid("problem", "is required"))?
            .parse()?;
        let n = self.n.ok_or_else(|| Error::invalid("n", "is required"))?;
        use crate::risk::Problem::*;
        if problem != Covariance && self.p.is_some() {
            return Err(Error::invalid("p", "only applies to the covariance problem"));
        }
        if problem != Scale && self.c.is_some() {
            return Err(Error::invalid("c", "only applies to the scale problem"));
        }
        if problem == Covariance && self.family.is_some() {
            return Err(Error::invalid("family", "does not apply to the covariance problem"));
        }
        if problem != Covariance && (self.draws.is_some() || self.proposal.is_some()) {
            return Err(Error::invalid("draws", "importance settings only apply to the covariance problem"));
        }
        let family = || -> Result<DensityFamily> {
            let tag = self.family.as_deref().ok_or_else(|| Error::invalid("family", "is required"))?;
            DensityFamily::from_tag(tag, n)
        };
        let model = match problem {
            Location => RiskModel::Location(family()?),
            Scale => RiskModel::Scale {
                family: family()?,
                c: self.c.unwrap_or(1.0),
            },
            Covariance => RiskModel::Covariance {
                n,
                p: self.p.ok_or_else(|| Error::invalid("p", "is required for the covariance problem"))?,
            },
        };
        if let Some(tag) = &self.loss {
            let want = model.loss();
            let got = LossSpec::from_tag(tag, self.p)?;
            if got != want {
                return Err(Error::invalid(
                    "loss",
                    format!("the {problem} problem uses `{}` loss, got `{tag}`", want.tag()),
                ));
            }
        }
        let mut setup = RiskSetup::new(model);
        setup.quad = self.quad()?;
        setup.is_draws = self.draws.unwrap_or(setup.is_draws);
        setup.proposal = self.proposal.unwrap_or_default();
        setup.strict = self.strict.unwrap_or(false);
        setup.workers = self.workers;
        Ok(setup)
    }

    fn seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => env_seed(),
        }
    }

    fn reps(&self) -> Result<usize> {
        self.reps.ok_or_else(|| Error::invalid("reps", "is required"))
    }

    fn ks(&self) -> Result<Vec<f64>> {
        match &self.k {
            Some(k) if !k.is_empty() => Ok(k.clone()),
            _ => Err(Error::invalid("k", "a k-list is required")),
        }
    }

    fn estimator(&self, default: EstimatorSpec, k: Option<f64>) -> Result<EstimatorSpec> {
        match &self.estimator {
            None => Ok(default),
            Some(tag) => EstimatorSpec::from_tag(tag, k),
        }
    }

    fn truth(&self, model: &RiskModel) -> Result<Truth> {
        let Some(v) = &self.truth else {
            return Ok(model.canonical_truth());
        };
        let bad = |why: &str| Error::invalid("truth", why.to_string());
        match model {
            RiskModel::Location(_) => Ok(Truth::Location(v.as_f64().ok_or_else(|| bad("expected a number"))?)),
            RiskModel::Scale { .. } => {
                let s = v.as_f64().ok_or_else(|| bad("expected a number"))?;
                if !(s > 0.0) {
                    return Err(bad("sigma must be positive"));
                }
                Ok(Truth::Scale(s))
            }
            RiskModel::Covariance { p, .. } => {
                let rows: Vec<Vec<f64>> =
                    serde_json::from_value(v.clone()).map_err(|_| bad("expected a JSON matrix"))?;
                let m = Matrix::from_rows(&rows)?;
                if m.dim() != *p {
                    return Err(Error::DimensionMismatch {
                        expected: *p,
                        actual: m.dim(),
                    });
                }
                Truth::from_sigma(&m).map_err(|_| bad("covariance must be symmetric positive definite"))
            }
        }
    }
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::invalid("seed", format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

impl ExperimentArgs {
    /// The config file merged with the flags.
    pub fn resolve(&self, workers: Option<usize>) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let truth = match &self.truth {
            None => None,
            Some(s) => Some(serde_json::from_str(s).map_err(|e| Error::invalid("truth", e.to_string()))?),
        };
        let proposal = self.proposal.as_deref().map(parse_proposal).transpose()?;
        let flags = ExperimentConfig {
            problem: self.problem.clone(),
            family: self.family.clone(),
            n: self.n,
            p: self.p,
            loss: self.loss.clone(),
            estimator: self.estimator.clone(),
            k: self.k.clone(),
            c: self.c,
            reps: self.reps,
            seed: self.seed,
            truth,
            out: self.out.clone(),
            summary: self.summary.clone(),
            draws: self.draws,
            proposal,
            strict: self.strict.then_some(true),
            workers,
            rel_tol: self.quad.rel_tol,
            max_subdivisions: self.quad.max_subdivisions,
            window: self.quad.window,
        };
        Ok(base.overridden_by(flags))
    }
}

fn parse_proposal(s: &str) -> Result<Proposal> {
    match s {
        "prior" => Ok(Proposal::Prior),
        "invariant-posterior" => Ok(Proposal::InvariantPosterior),
        _ => Err(Error::invalid("proposal", format!("unknown proposal `{s}`"))),
    }
}

/// Parses `--data`: a comma list, or a CSV file whose first column is the
/// sample (a non-numeric first row is taken as a header).
pub fn parse_data(s: &str) -> Result<Vec<f64>> {
    let path = Path::new(s);
    if !s.contains(',') && path.is_file() {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::invalid("data", format!("{s}: {e}")))?;
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::invalid("data", format!("{s}: {e}")))?;
            let Some(field) = rec.get(0).map(str::trim) else { continue };
            if field.is_empty() {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) if i == 0 => {}
                Err(_) => return Err(Error::invalid("data", format!("{s}, row {}: `{field}` is not a number", i + 1))),
            }
        }
        return Ok(out);
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid("data", format!("`{t}` is not a number (and `{s}` is not a file)")))
        })
        .collect()
}

/// Parses covariance data: a JSON matrix `V` (factored as `V = TTᵀ`) or a
/// packed factor object.
pub fn parse_cov_data(s: &str) -> Result<LowerTriangular> {
    let text = if Path::new(s).is_file() {
        std::fs::read_to_string(s).map_err(|e| Error::invalid("data", format!("{s}: {e}")))?
    } else {
        s.to_string()
    };
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::invalid("data", format!("not JSON: {e}")))?;
    if v.is_object() {
        return serde_json::from_value(v).map_err(|e| Error::invalid("data", format!("packed factor: {e}")));
    }
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(v).map_err(|e| Error::invalid("data", format!("matrix: {e}")))?;
    let m = Matrix::from_rows(&rows)?;
    if !m.is_symmetric(1e-12) {
        return Err(Error::invalid("data", "V must be symmetric"));
    }
    m.cholesky()
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn emit_rows(rows: &[CsvRow], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_csv(p, rows),
        None => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::invalid("output", e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid("output", e.to_string()))?;
            stdout.write_all(&bytes).map_err(|e| Error::invalid("output", e.to_string()))
        }
    }
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    config: &'a ExperimentConfig,
    result: T,
}

fn emit_summary<T: Serialize>(cfg: &ExperimentConfig, result: T) -> Result<()> {
    if let Some(p) = &cfg.summary {
        write_json(p, &Summary { config: cfg, result })?;
    }
    Ok(())
}

fn estimate(args: &EstimateArgs, kind: FamilyKind, out: &mut dyn Write) -> Result<()> {
    let x = parse_data(&args.data)?;
    let family = DensityFamily::from_tag(&args.family, x.len())?;
    if family.kind() != kind {
        return Err(Error::invalid("family", format!("`{}` is not a {kind:?} family", args.family).to_lowercase()));
    }
    let cfg = ExperimentConfig {
        rel_tol: args.quad.rel_tol,
        max_subdivisions: args.quad.max_subdivisions,
        window: args.quad.window,
        ..Default::default()
    }
    .quad()?;
    let value = match kind {
        FamilyKind::Location => {
            if args.c.is_some() {
                return Err(Error::invalid("c", "only applies to estimate-scale"));
            }
            match args.k {
                None => pitman_location(&family, &x, &cfg)?,
                Some(k) => bayes_location_gaussian(&family, &x, &GaussianLocationPrior::new(k)?, &cfg)?,
            }
        }
        FamilyKind::Scale => {
            let c = args.c.unwrap_or(1.0);
            match args.k {
                None => pitman_scale(&family, &x, c, &cfg)?,
                Some(k) => bayes_scale_lognormal(&family, &x, &LogNormalScalePrior::new(k)?, c, &cfg)?,
            }
        }
    };
    writeln!(out, "{}", fmt_f64(value)).map_err(|e| Error::invalid("output", e.to_string()))
}

fn estimate_cov(args: &CovArgs, out: &mut dyn Write) -> Result<()> {
    let t = parse_cov_data(&args.data)?;
    let est = EstimatorSpec::from_tag(args.estimator.as_deref().unwrap_or("sigma0"), args.k)?;
    let value = match est {
        EstimatorSpec::Sigma0 => serde_json::json!({ "estimate": sigma0_hat(&t, args.n)? }),
        EstimatorSpec::Mle => serde_json::json!({ "estimate": mle(&t, args.n)? }),
        EstimatorSpec::BayesK { k } => {
            let seed = match args.seed {
                Some(s) => s,
                None => env_seed()?,
            };
            let proposal = args.proposal.as_deref().map(parse_proposal).transpose()?.unwrap_or_default();
            let mc = McConfig::new(args.draws, seed).with_proposal(proposal);
            let mut r = bayes_cov_estimator(&t, args.n, &KSchedule::new(k)?, &mc)?;
            if args.strict {
                r = r.strict()?;
            }
            serde_json::to_value(&r).map_err(|e| Error::invalid("output", e.to_string()))?
        }
        _ => return Err(Error::invalid("estimator", "estimate-cov takes sigma0, mle or bayes-k")),
    };
    let text = serde_json::to_string_pretty(&value).map_err(|e| Error::invalid("output", e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::invalid("output", e.to_string()))
}

fn single_k(cfg: &ExperimentConfig) -> Result<Option<f64>> {
    match cfg.k.as_deref() {
        None => Ok(None),
        Some([k]) => Ok(Some(*k)),
        Some(_) => Err(Error::invalid("k", "`risk` takes a single k")),
    }
}

fn run_risk(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<i32> {
    let setup = cfg.setup()?;
    let est = cfg.estimator(setup.model.best_equivariant(), single_k(cfg)?)?;
    let truth = cfg.truth(&setup.model)?;
    let r = mc_risk(&setup, &est, &truth, cfg.reps()?, cfg.seed()?)?;
    emit_rows(&[CsvRow::from(&r)], cfg.out.as_deref(), out)?;
    emit_summary(cfg, &r)?;
    Ok(EXIT_OK)
}

fn run_bayes_risk(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<i32> {
    let setup = cfg.setup()?;
    if cfg.truth.is_some() {
        return Err(Error::invalid("truth", "bayes-risk draws the truth from the prior"));
    }
    let (reps, seed) = (cfg.reps()?, cfg.seed()?);
    let mut results = Vec::new();
    for k in cfg.ks()? {
        let est = cfg.estimator(EstimatorSpec::BayesK { k }, Some(k))?;
        results.push(bayes_risk(&setup, &est, &PriorSpec { k }, reps, seed)?);
    }
    let rows: Vec<CsvRow> = results.iter().map(CsvRow::from).collect();
    emit_rows(&rows, cfg.out.as_deref(), out)?;
    emit_summary(cfg, &results)?;
    Ok(EXIT_OK)
}

fn run_sweep(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<i32> {
    let setup = cfg.setup()?;
    if cfg.estimator.is_some() || cfg.truth.is_some() {
        return Err(Error::invalid("estimator", "sweep always compares the Bayes rules with the best equivariant rule"));
    }
    let res = convergence_sweep(&setup, &cfg.ks()?, cfg.reps()?, cfg.seed()?)?;
    emit_rows(&res.csv_rows(), cfg.out.as_deref(), out)?;
    emit_summary(cfg, &res)?;
    for p in &res.points {
        if let Some(e) = &p.error {
            eprintln!("equivax: k = {}: {e}", p.k);
        }
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct EquivarianceReport {
    cases: usize,
    max_rel_error: f64,
    tolerance: f64,
}

const EQUIVARIANCE_TOL: f64 = 1e-8;

/// Compares `δ(g·x)` with `g·δ(x)` for a few random samples and group elements.
fn equivariance_report(setup: &RiskSetup, seed: u64) -> Result<EquivarianceReport> {
    let cases = 8;
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = substream(seed, 2_000 + i as u64);
        let rel = match &setup.model {
            RiskModel::Location(f) => {
                let x = f.sample_standard(&mut rng)?;
                let b: f64 = rng.random_range(-50.0..50.0);
                let xb: Vec<f64> = x.iter().map(|v| v + b).collect();
                let d = pitman_location(f, &x, &setup.quad)?;
                let db = pitman_location(f, &xb, &setup.quad)?;
                (db - d - b).abs() / (1.0 + b.abs())
            }
            RiskModel::Scale { family, c } => {
                let x = family.sample_standard(&mut rng)?;
                let a: f64 = rng.random_range(-4.0f64..4.0).exp();
                let xa: Vec<f64> = x.iter().map(|v| v * a).collect();
                let d = pitman_scale(family, &x, *c, &setup.quad)?;
                let da = pitman_scale(family, &xa, *c, &setup.quad)?;
                (da / (a.powf(*c) * d) - 1.0).abs()
            }
            RiskModel::Covariance { n, p } => {
                let m = WishartModel::standard(*n, *p)?;
                let t = sample_bartlett(&m, &mut rng);
                let diag: Vec<f64> = (0..*p).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let mut a = LowerTriangular::from_diag(&diag)?.to_matrix();
                for r in 0..*p {
                    for c in 0..r {
                        a = with_entry(&a, r, c, rng.random_range(-2.0..2.0));
                    }
                }
                let a = LowerTriangular::from_matrix(&a)?;
                let lhs = sigma0_hat(&a.mul(&t), *n)?;
                let rhs = a.sandwich(&sigma0_hat(&t, *n)?);
                lhs.max_abs_diff(&rhs) / rhs.max_abs()
            }
        };
        worst = worst.max(rel);
    }
    Ok(EquivarianceReport {
        cases,
        max_rel_error: worst,
        tolerance: EQUIVARIANCE_TOL,
    })
}

fn with_entry(m: &Matrix, i: usize, j: usize, v: f64) -> Matrix {
    let mut rows = m.rows();
    rows[i][j] = v;
    Matrix::from_rows(&rows).expect("square")
}

fn check_truths(model: &RiskModel) -> Result<Vec<Truth>> {
    Ok(match model {
        RiskModel::Location(_) => [0.0, 1.0, -3.0, 10.0].map(Truth::Location).to_vec(),
        RiskModel::Scale { .. } => [1.0, 0.5, 3.0, 20.0].map(Truth::Scale).to_vec(),
        RiskModel::Covariance { p, .. } => {
            let p = *p;
            let diag: Vec<f64> = (0..p).map(|i| 4f64.powi(i as i32)).collect();
            let corr: Vec<Vec<f64>> = (0..p)
                .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.6 }).collect())
                .collect();
            vec![
                Truth::from_sigma(&Matrix::identity(p))?,
                Truth::from_sigma(&Matrix::from_diag(&diag))?,
                Truth::from_sigma(&Matrix::from_rows(&corr)?)?,
            ]
        }
    })
}

fn run_check(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<i32> {
    let setup = cfg.setup()?;
    let est = cfg.estimator(setup.model.best_equivariant(), None)?;
    let seed = cfg.seed()?;
    let report = constant_risk_report(&setup, &est, &check_truths(&setup.model)?, cfg.reps()?, seed)?;
    let equiv = equivariance_report(&setup, seed)?;
    let rows: Vec<CsvRow> = report.risks.iter().map(CsvRow::from).collect();
    emit_rows(&rows, cfg.out.as_deref(), out)?;
    let ok = report.is_constant() && equiv.max_rel_error <= equiv.tolerance;
    emit_summary(
        cfg,
        serde_json::json!({ "constant_risk": report, "equivariance": equiv, "passed": ok }),
    )?;
    eprintln!(
        "constant risk: max z = {:.2} ({}); equivariance: max rel error = {:.1e} ({})",
        report.max_z,
        if report.is_constant() { "ok" } else { "FLAGGED" },
        equiv.max_rel_error,
        if equiv.max_rel_error <= equiv.tolerance { "ok" } else { "FAILED" },
    );
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::EstimateLocation(a) => estimate(a, FamilyKind::Location, out).map(|_| EXIT_OK),
        Command::EstimateScale(a) => estimate(a, FamilyKind::Scale, out).map(|_| EXIT_OK),
        Command::EstimateCov(a) => estimate_cov(a, out).map(|_| EXIT_OK),
        Command::Risk(a) => run_risk(&a.resolve(cli.workers)?, out),
        Command::BayesRisk(a) => run_bayes_risk(&a.resolve(cli.workers)?, out),
        Command::Sweep(a) => run_sweep(&a.resolve(cli.workers)?, out),
        Command::Check(a) => run_check(&a.resolve(cli.workers)?, out),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Results go to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("equivax: error: {e}");
            exit_code(&e)
        }
    }
}
