//! Monte Carlo frequentist and Bayes risk.
//!
//! Replicate `r` of an experiment with seed `s` draws all of its randomness
//! from ChaCha stream `(s, r)`; for the covariance Bayes rule the importance
//! draws use a seed derived from `(s, r)` as well. Losses are reduced by
//! pairwise summation in replicate order, so results do not depend on the
//! number of workers.
//!
//! Within a sweep the replicate streams are shared across `k`: replicate `r`
//! always uses the same standardized noise, and the parameter is `k` times
//! (or `exp(k ·)` of) a fixed standard normal draw. Gaps `R₀ - r_k` are
//! estimated as paired differences `L(δ₀) - L(δ_k)` on the same draws; by
//! constant risk the first term has mean `R₀` under every prior.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy_loss, squared_error_loss, stein_loss_theta, DensityFamily, FamilyKind, LossSpec};
use crate::pitman::{
    bayes_location_gaussian, bayes_scale_lognormal, pitman_location, pitman_scale, GaussianLocationPrior,
    LogNormalScalePrior,
};
use crate::quad::QuadConfig;
use crate::rng::{derive_seed, pairwise_sum, substream};
use crate::wishart::{
    bayes_cov_estimator, mle, sample_bartlett_standard, sigma0_hat, KSchedule, LowerTriangular, Matrix, McConfig,
    Proposal, WishartModel, XiVector,
};

/// Smallest replication count accepted by the harness.
pub const MIN_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Location,
    Scale,
    Covariance,
}

impl Problem {
    pub fn tag(&self) -> &'static str {
        match self {
            Problem::Location => "location",
            Problem::Scale => "scale",
            Problem::Covariance => "covariance",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location" => Ok(Problem::Location),
            "scale" => Ok(Problem::Scale),
            "covariance" => Ok(Problem::Covariance),
            _ => Err(Error::invalid("problem", format!("unknown problem `{s}`"))),
        }
    }
}

/// Which rule to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    /// Best equivariant location/scale rule.
    Pitman,
    /// Bayes rule under the Gaussian prior with scale `k`.
    BayesK { k: f64 },
    /// `Σ̂₀ = T diag(d) Tᵀ`.
    Sigma0,
    /// `V / n`.
    Mle,
    /// `x̄`, for location problems.
    SampleMean,
}

impl EstimatorSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorSpec::Pitman => "pitman",
            EstimatorSpec::BayesK { .. } => "bayes-k",
            EstimatorSpec::Sigma0 => "sigma0",
            EstimatorSpec::Mle => "mle",
            EstimatorSpec::SampleMean => "sample-mean",
        }
    }

    /// Parses a tag; `bayes-k` needs `k`.
    pub fn from_tag(tag: &str, k: Option<f64>) -> Result<Self> {
        match tag {
            "pitman" => Ok(EstimatorSpec::Pitman),
            "sigma0" => Ok(EstimatorSpec::Sigma0),
            "mle" => Ok(EstimatorSpec::Mle),
            "sample-mean" => Ok(EstimatorSpec::SampleMean),
            "bayes-k" => match k {
                Some(k) => Ok(EstimatorSpec::BayesK { k }),
                None => Err(Error::invalid("k", "estimator bayes-k needs a value of k")),
            },
            _ => Err(Error::invalid("estimator", format!("unknown estimator `{tag}`"))),
        }
    }

    fn k(&self) -> Option<f64> {
        match self {
            EstimatorSpec::BayesK { k } => Some(*k),
            _ => None,
        }
    }
}

/// The statistical model of an experiment.
#[derive(Debug, Clone)]
pub enum RiskModel {
    Location(DensityFamily),
    /// Estimation of `σ^c` under entropy loss.
    Scale { family: DensityFamily, c: f64 },
    Covariance { n: usize, p: usize },
}

impl RiskModel {
    pub fn problem(&self) -> Problem {
        match self {
            RiskModel::Location(_) => Problem::Location,
            RiskModel::Scale { .. } => Problem::Scale,
            RiskModel::Covariance { .. } => Problem::Covariance,
        }
    }

    pub fn loss(&self) -> LossSpec {
        match self {
            RiskModel::Location(_) => LossSpec::SquaredError,
            RiskModel::Scale { .. } => LossSpec::Entropy,
            RiskModel::Covariance { p, .. } => LossSpec::Stein { p: *p },
        }
    }

    /// The best equivariant rule of the problem.
    pub fn best_equivariant(&self) -> EstimatorSpec {
        match self {
            RiskModel::Covariance { .. } => EstimatorSpec::Sigma0,
            _ => EstimatorSpec::Pitman,
        }
    }

    /// The truth at which `R₀` is reported.
    pub fn canonical_truth(&self) -> Truth {
        match self {
            RiskModel::Location(_) => Truth::Location(0.0),
            RiskModel::Scale { .. } => Truth::Scale(1.0),
            RiskModel::Covariance { p, .. } => Truth::Covariance(LowerTriangular::identity(*p)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RiskModel::Location(f) if f.kind() != FamilyKind::Location => {
                Err(Error::invalid("family", "location problem needs a location family"))
            }
            RiskModel::Scale { family, c } => {
                if family.kind() != FamilyKind::Scale {
                    return Err(Error::invalid("family", "scale problem needs a scale family"));
                }
                if !c.is_finite() || *c == 0.0 {
                    return Err(Error::invalid("c", "must be finite and nonzero"));
                }
                Ok(())
            }
            RiskModel::Covariance { n, p } => {
                if *p == 0 || n < p {
                    return Err(Error::invalid("n", format!("need n >= p >= 1, got n = {n}, p = {p}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_estimator(&self, est: &EstimatorSpec) -> Result<()> {
        let ok = matches!(
            (self, est),
            (RiskModel::Location(_), EstimatorSpec::Pitman | EstimatorSpec::SampleMean | EstimatorSpec::BayesK { .. })
                | (RiskModel::Scale { .. }, EstimatorSpec::Pitman | EstimatorSpec::BayesK { .. })
                | (
                    RiskModel::Covariance { .. },
                    EstimatorSpec::Sigma0 | EstimatorSpec::Mle | EstimatorSpec::BayesK { .. }
                )
        );
        if !ok {
            return Err(Error::invalid(
                "estimator",
                format!("`{}` is not available for the {} problem", est.tag(), self.problem()),
            ));
        }
        if let Some(k) = est.k() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::invalid("k", format!("must be > 0, got {k}")));
            }
            if let RiskModel::Covariance { p, .. } = self {
                KSchedule::new(k)?;
                if *p > 3 {
                    return Err(Error::Unsupported(format!("Bayes covariance rule needs p <= 3, got {p}")));
                }
            }
        }
        Ok(())
    }
}

/// A parameter value: `μ`, `σ`, or `Θ` with `Σ⁻¹ = ΘᵀΘ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Location(f64),
    Scale(f64),
    Covariance(LowerTriangular),
}

impl Truth {
    /// The covariance truth for `Σ`.
    pub fn from_sigma(sigma: &Matrix) -> Result<Self> {
        Ok(Truth::Covariance(sigma.cholesky()?.inverse()))
    }

    pub fn label(&self) -> String {
        match self {
            Truth::Location(m) => format!("mu={m}"),
            Truth::Scale(s) => format!("sigma={s}"),
            Truth::Covariance(theta) => {
                let s = theta.inverse().gram_lower();
                format!("Sigma={:?}", s.rows())
            }
        }
    }
}

/// Settings shared by every replicate.
#[derive(Debug, Clone)]
pub struct RiskSetup {
    pub model: RiskModel,
    pub quad: QuadConfig,
    /// Importance draws per replicate for the covariance Bayes rule.
    pub is_draws: usize,
    pub proposal: Proposal,
    /// Treat a degenerate importance sample as a failure.
    pub strict: bool,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub workers: Option<usize>,
}

impl RiskSetup {
    pub fn new(model: RiskModel) -> Self {
        Self {
            model,
            quad: QuadConfig::default(),
            is_draws: 1_000,
            proposal: Proposal::Prior,
            strict: false,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_importance(mut self, draws: usize, proposal: Proposal) -> Self {
        self.is_draws = draws;
        self.proposal = proposal;
        self
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.workers {
            None => Ok(f()),
            Some(0) => Err(Error::invalid("workers", "must be at least 1")),
            Some(w) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| Error::invalid("workers", e.to_string()))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// Monte Carlo mean of a loss with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub problem: Problem,
    pub estimator: String,
    pub k: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(replications)`.
    pub std_error: f64,
    pub replications: usize,
    pub seed: u64,
    /// Replicates whose importance sample had a small effective size.
    #[serde(default)]
    pub degenerate: usize,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standardized randomness of one replicate.
struct Draw {
    /// `z ~ f` for location/scale.
    z: Vec<f64>,
    /// Standard Bartlett factor for covariance.
    t0: Option<LowerTriangular>,
}

fn draw_noise(model: &RiskModel, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Draw> {
    match model {
        RiskModel::Location(f) | RiskModel::Scale { family: f, .. } => Ok(Draw {
            z: f.sample_standard(rng)?,
            t0: None,
        }),
        RiskModel::Covariance { n, p } => {
            let m = WishartModel::standard(*n, *p)?;
            Ok(Draw {
                z: Vec::new(),
                t0: Some(sample_bartlett_standard(&m, rng)),
            })
        }
    }
}

/// Loss of `est` on the data generated from `noise` at `truth`. Returns the
/// loss and whether an importance sample was degenerate.
fn replicate_loss(
    setup: &RiskSetup,
    est: &EstimatorSpec,
    truth: &Truth,
    noise: &Draw,
    is_seed: u64,
) -> Result<(f64, bool)> {
    let cfg = &setup.quad;
    match (&setup.model, truth) {
        (RiskModel::Location(f), Truth::Location(mu)) => {
            let x: Vec<f64> = noise.z.iter().map(|z| z + mu).collect();
            let d = match est {
                EstimatorSpec::Pitman => pitman_location(f, &x, cfg)?,
                EstimatorSpec::SampleMean => x.iter().sum::<f64>() / x.len() as f64,
                EstimatorSpec::BayesK { k } => bayes_location_gaussian(f, &x, &GaussianLocationPrior::new(*k)?, cfg)?,
                _ => unreachable!("checked by check_estimator"),
            };
            Ok((squared_error_loss(d, *mu), false))
        }
        (RiskModel::Scale { family, c }, Truth::Scale(sigma)) => {
            let x: Vec<f64> = noise.z.iter().map(|z| z * sigma).collect();
            let d = match est {
                EstimatorSpec::Pitman => pitman_scale(family, &x, *c, cfg)?,
                EstimatorSpec::BayesK { k } => {
                    bayes_scale_lognormal(family, &x, &LogNormalScalePrior::new(*k)?, *c, cfg)?
                }
                _ => unreachable!("checked by check_estimator"),
            };
            Ok((entropy_loss(d, sigma.powf(*c))?, false))
        }
        (RiskModel::Covariance { n, .. }, Truth::Covariance(theta)) => {
            let t0 = noise.t0.as_ref().expect("covariance noise");
            let t = theta.inverse().mul(t0);
            let (d, degenerate) = match est {
                EstimatorSpec::Sigma0 => (sigma0_hat(&t, *n)?, false),
                EstimatorSpec::Mle => (mle(&t, *n)?, false),
                EstimatorSpec::BayesK { k } => {
                    let mc = McConfig::new(setup.is_draws, is_seed).with_proposal(setup.proposal);
                    let mut r = bayes_cov_estimator(&t, *n, &KSchedule::new(*k)?, &mc)?;
                    if setup.strict {
                        r = r.strict()?;
                    }
                    (r.estimate, r.degenerate)
                }
                _ => unreachable!("checked by check_estimator"),
            };
            Ok((stein_loss_theta(&d, theta)?, degenerate))
        }
        _ => Err(Error::invalid("truth", "does not match the problem")),
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::invalid("reps", format!("must be >= {MIN_REPS}, got {reps}")));
    }
    Ok(())
}

/// Evaluates `per_rep` for every replicate in parallel and returns the values
/// in replicate order; the lowest failing index is reported.
fn collect_reps<T: Send>(reps: usize, seed: u64, per_rep: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..reps as u64).into_par_iter().map(&per_rep).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Replicate {
                index: i as u64,
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

fn estimate_from(
    setup: &RiskSetup,
    est: &EstimatorSpec,
    losses: &[(f64, bool)],
    seed: u64,
) -> RiskEstimate {
    let values: Vec<f64> = losses.iter().map(|l| l.0).collect();
    let (mean, std_error) = mean_and_se(&values);
    RiskEstimate {
        problem: setup.model.problem(),
        estimator: est.tag().to_string(),
        k: est.k(),
        mean,
        std_error,
        replications: losses.len(),
        seed,
        degenerate: losses.iter().filter(|l| l.1).count(),
    }
}

/// Frequentist risk `R(δ, truth)`.
pub fn mc_risk(setup: &RiskSetup, est: &EstimatorSpec, truth: &Truth, reps: usize, seed: u64) -> Result<RiskEstimate> {
    setup.model.validate()?;
    setup.model.check_estimator(est)?;
    check_reps(reps)?;
    setup.run(|| {
        let losses = collect_reps(reps, seed, |r| {
            let mut rng = substream(seed, r);
            let noise = draw_noise(&setup.model, &mut rng)?;
            replicate_loss(setup, est, truth, &noise, derive_seed(seed, r))
        })?;
        Ok(estimate_from(setup, est, &losses, seed))
    })?
}

/// Result of [`constant_risk_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantRiskReport {
    pub truths: Vec<String>,
    pub risks: Vec<RiskEstimate>,
    /// Largest `|R_i - R_j| / sqrt(se_i² + se_j²)` over pairs.
    pub max_z: f64,
    /// Pairs differing by more than four combined standard errors.
    pub flagged: Vec<(usize, usize)>,
}

impl ConstantRiskReport {
    pub fn is_constant(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Risk at several truths with independent streams (truth `i` uses a seed
/// derived from `(seed, i)`).
pub fn constant_risk_report(
    setup: &RiskSetup,
    est: &EstimatorSpec,
    truths: &[Truth],
    reps: usize,
    seed: u64,
) -> Result<ConstantRiskReport> {
    if truths.len() < 2 {
        return Err(Error::invalid("truths", "need at least two"));
    }
    let risks = truths
        .iter()
        .enumerate()
        .map(|(i, t)| mc_risk(setup, est, t, reps, derive_seed(seed, 1_000 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut max_z: f64 = 0.0;
    let mut flagged = Vec::new();
    for i in 0..risks.len() {
        for j in i + 1..risks.len() {
            let se = risks[i].std_error.hypot(risks[j].std_error);
            let z = (risks[i].mean - risks[j].mean).abs() / se;
            max_z = max_z.max(z);
            if z > 4.0 {
                flagged.push((i, j));
            }
        }
    }
    Ok(ConstantRiskReport {
        truths: truths.iter().map(Truth::label).collect(),
        risks,
        max_z,
        flagged,
    })
}

/// The Gaussian prior sequence member with scale `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub k: f64,
}

impl PriorSpec {
    /// Parameter obtained from standard normal noise: `μ = kε`, `σ = e^{kε}`,
    /// `Θ = Θ(k•ω)`.
    fn truth(&self, model: &RiskModel, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Truth> {
        match model {
            RiskModel::Location(_) => {
                let e: f64 = StandardNormal.sample(rng);
                Ok(Truth::Location(self.k * e))
            }
            RiskModel::Scale { .. } => {
                let e: f64 = StandardNormal.sample(rng);
                Ok(Truth::Scale((self.k * e).exp()))
            }
            RiskModel::Covariance { p, .. } => {
                let omega = XiVector::sample(*p, &KSchedule::new(1.0)?, rng);
                Ok(Truth::Covariance(KSchedule::new(self.k)?.theta_from_omega(&omega)?))
            }
        }
    }
}

/// One replicate of the Bayes-risk experiment: the parameter is drawn first,
/// then the standardized noise, from the same stream.
fn bayes_replicate(setup: &RiskSetup, prior: &PriorSpec, seed: u64, r: u64) -> Result<(Truth, Draw)> {
    if let RiskModel::Covariance { p, .. } = setup.model {
        if p > 3 {
            return Err(Error::Unsupported(format!("Bayes covariance experiments need p <= 3, got {p}")));
        }
    }
    let mut rng = substream(seed, r);
    let truth = prior.truth(&setup.model, &mut rng)?;
    let noise = draw_noise(&setup.model, &mut rng)?;
    Ok((truth, noise))
}

/// Bayes risk `r_k(δ)` under the prior with scale `prior.k`.
pub fn bayes_risk(
    setup: &RiskSetup,
    est: &EstimatorSpec,
    prior: &PriorSpec,
    reps: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    setup.model.validate()?;
    setup.model.check_estimator(est)?;
    setup.model.check_estimator(&EstimatorSpec::BayesK { k: prior.k })?;
    check_reps(reps)?;
    setup.run(|| {
        let losses = collect_reps(reps, seed, |r| {
            let (truth, noise) = bayes_replicate(setup, prior, seed, r)?;
            replicate_loss(setup, est, &truth, &noise, derive_seed(seed, r))
        })?;
        let mut out = estimate_from(setup, est, &losses, seed);
        out.k = Some(prior.k);
        Ok(out)
    })?
}

/// One `k` of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    /// `r_k` of the Bayes rule.
    pub bayes_risk: Option<RiskEstimate>,
    /// Paired estimate of `R₀ - r_k`.
    pub gap: Option<f64>,
    pub gap_std_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub problem: Problem,
    pub loss: String,
    /// `R₀` from the best equivariant rule at the canonical truth.
    pub r0: RiskEstimate,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn gaps(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.gap).collect()
    }
}

/// `r_k` for each `k` and the paired gaps `R₀ - r_k`.
pub fn convergence_sweep(setup: &RiskSetup, ks: &[f64], reps: usize, seed: u64) -> Result<SweepResult> {
    setup.model.validate()?;
    check_reps(reps)?;
    if ks.is_empty() {
        return Err(Error::invalid("k", "the k-list is empty"));
    }
    if ks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("k", "the k-list must be strictly increasing"));
    }
    let best = setup.model.best_equivariant();
    let r0 = mc_risk(setup, &best, &setup.model.canonical_truth(), reps, seed)?;

    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let est = EstimatorSpec::BayesK { k };
        let point = setup
            .model
            .check_estimator(&est)
            .and_then(|_| {
                let prior = PriorSpec { k };
                setup.run(|| {
                    collect_reps(reps, seed, |r| {
                        let (truth, noise) = bayes_replicate(setup, &prior, seed, r)?;
                        let is_seed = derive_seed(seed, r);
                        let (l0, _) = replicate_loss(setup, &best, &truth, &noise, is_seed)?;
                        let lk = replicate_loss(setup, &est, &truth, &noise, is_seed)?;
                        Ok((l0, lk))
                    })
                })?
            })
            .map(|pairs| {
                let losses: Vec<(f64, bool)> = pairs.iter().map(|p| p.1).collect();
                let mut rk = estimate_from(setup, &est, &losses, seed);
                rk.k = Some(k);
                let diffs: Vec<f64> = pairs.iter().map(|(l0, lk)| l0 - lk.0).collect();
                let (gap, gap_se) = mean_and_se(&diffs);
                (rk, gap, gap_se)
            });
        points.push(match point {
            Ok((rk, gap, se)) => SweepPoint {
                k,
                bayes_risk: Some(rk),
                gap: Some(gap),
                gap_std_error: Some(se),
                error: None,
            },
            Err(e) => SweepPoint {
                k,
                bayes_risk: None,
                gap: None,
                gap_std_error: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(SweepResult {
        problem: setup.model.problem(),
        loss: setup.model.loss().tag().to_string(),
        r0,
        points,
    })
}

/// One line of the CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub problem: String,
    pub k: Option<f64>,
    pub estimator: String,
    pub reps: usize,
    pub seed: u64,
    pub risk: f64,
    pub stderr: f64,
}

impl From<&RiskEstimate> for CsvRow {
    fn from(r: &RiskEstimate) -> Self {
        CsvRow {
            problem: r.problem.tag().to_string(),
            k: r.k,
            estimator: r.estimator.clone(),
            reps: r.replications,
            seed: r.seed,
            risk: r.mean,
            stderr: r.std_error,
        }
    }
}

impl SweepResult {
    /// `R₀`, then per `k` the Bayes risk and the gap (estimator `gap`).
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = vec![CsvRow::from(&self.r0)];
        for p in &self.points {
            if let (Some(rk), Some(gap), Some(se)) = (&p.bayes_risk, p.gap, p.gap_std_error) {
                rows.push(CsvRow::from(rk));
                rows.push(CsvRow {
                    estimator: "gap".to_string(),
                    risk: gap,
                    stderr: se,
                    ..CsvRow::from(rk)
                });
            }
        }
        rows
    }
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let io = |e: csv::Error| Error::invalid("output", format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::invalid("output", format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid("output", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::invalid("output", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(n: usize) -> RiskSetup {
        RiskSetup::new(RiskModel::Location(DensityFamily::from_tag("gaussian-iid", n).unwrap()))
    }

    #[test]
    fn sample_mean_risk() {
        let r = mc_risk(&loc(4), &EstimatorSpec::SampleMean, &Truth::Location(0.0), 20_000, 1).unwrap();
        assert!((r.mean - 0.25).abs() < 3.0 * r.std_error, "{r:?}");
        assert_eq!(r.replications, 20_000);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let a = mc_risk(&loc(2).with_workers(Some(1)), &EstimatorSpec::Pitman, &Truth::Location(1.0), 300, 9).unwrap();
        let b = mc_risk(&loc(2).with_workers(Some(3)), &EstimatorSpec::Pitman, &Truth::Location(1.0), 300, 9).unwrap();
        assert_eq!(a, b);
        let c = mc_risk(&loc(2), &EstimatorSpec::Pitman, &Truth::Location(1.0), 300, 9).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn covariance_worker_independence_with_importance_sampling() {
        let setup = RiskSetup::new(RiskModel::Covariance { n: 4, p: 2 });
        let est = EstimatorSpec::BayesK { k: 2.0 };
        let prior = PriorSpec { k: 2.0 };
        let a = bayes_risk(&setup.clone().with_workers(Some(1)), &est, &prior, 100, 4).unwrap();
        let b = bayes_risk(&setup.with_workers(Some(4)), &est, &prior, 100, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_errors() {
        let s = loc(2);
        assert!(mc_risk(&s, &EstimatorSpec::Sigma0, &Truth::Location(0.0), 100, 1).is_err());
        assert!(mc_risk(&s, &EstimatorSpec::Pitman, &Truth::Location(0.0), 10, 1).is_err());
        assert!(mc_risk(&s, &EstimatorSpec::Pitman, &Truth::Scale(1.0), 100, 1).is_err());
        assert!(convergence_sweep(&s, &[2.0, 1.0], 100, 1).is_err());
        assert!(matches!(
            mc_risk(&s.with_workers(Some(0)), &EstimatorSpec::Pitman, &Truth::Location(0.0), 100, 1),
            Err(Error::InvalidParameter { name: "workers", .. })
        ));
    }

    #[test]
    fn replicate_failure_names_index_and_seed() {
        // a custom kernel that cannot be sampled fails on replicate 0
        let k: crate::model::KernelFn = std::sync::Arc::new(|z: &[f64]| -0.5 * z[0] * z[0]);
        let f = DensityFamily::custom(FamilyKind::Location, 1, crate::model::Support::AllReals, k).unwrap();
        let s = RiskSetup::new(RiskModel::Location(f));
        let e = mc_risk(&s, &EstimatorSpec::Pitman, &Truth::Location(0.0), 100, 77).unwrap_err();
        assert!(matches!(e, Error::Replicate { index: 0, seed: 77, .. }), "{e}");
    }

    #[test]
    fn conjugate_bayes_risk() {
        let s = loc(1);
        for (k, want) in [(1.0, 0.5), (3.0, 0.9)] {
            let r = bayes_risk(&s, &EstimatorSpec::BayesK { k }, &PriorSpec { k }, 20_000, 2).unwrap();
            assert!((r.mean - want).abs() < 3.0 * r.std_error, "k={k}: {r:?}");
        }
    }

    #[test]
    fn sweep_rows_and_json() {
        let res = convergence_sweep(&loc(1), &[1.0, 2.0], 200, 3).unwrap();
        let rows = res.csv_rows();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[2].estimator, "gap");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("problem,k,estimator,reps,seed,risk,stderr\n"), "{text}");
        let back: SweepResult =
            serde_json::from_str(&serde_json::to_string(&res).unwrap()).unwrap();
        assert_eq!(back, res);
    }

    #[test]
    fn sweep_continues_past_bad_k() {
        let s = RiskSetup::new(RiskModel::Covariance { n: 4, p: 1 });
        let res = convergence_sweep(&s, &[1.0, 30.0], 100, 3).unwrap();
        assert!(res.points[0].error.is_none());
        assert!(res.points[1].error.is_some());
    }
}
