//! Density families, samples and the three invariant losses.
//!
//! A family is given by its log-kernel `log f(z)` on `ℝⁿ`. Location models
//! evaluate it at `x - μ`; scale models at `x / σ` with the `-n log σ`
//! Jacobian. Kernels are always in the log domain since the Pitman integrands
//! multiply `n` factors.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wishart::{LowerTriangular, Matrix};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_SQRT_2_OVER_PI: f64 = -0.225_791_352_644_727_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Location,
    Scale,
}

/// Where the kernel is allowed to be finite. Sets are open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    AllReals,
    PositiveOrthant,
    UnitBox,
}

impl Support {
    pub fn contains(&self, z: f64) -> bool {
        match self {
            Support::AllReals => z.is_finite(),
            Support::PositiveOrthant => z > 0.0 && z.is_finite(),
            Support::UnitBox => z > 0.0 && z < 1.0,
        }
    }
}

/// The iid built-ins. Each exists in its natural kind only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinFamily {
    GaussianIid,
    LaplaceIid,
    Uniform01Iid,
    ExponentialIid,
    HalfnormalIid,
}

impl BuiltinFamily {
    pub const ALL: [BuiltinFamily; 5] = [
        BuiltinFamily::GaussianIid,
        BuiltinFamily::LaplaceIid,
        BuiltinFamily::Uniform01Iid,
        BuiltinFamily::ExponentialIid,
        BuiltinFamily::HalfnormalIid,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            BuiltinFamily::GaussianIid => "gaussian-iid",
            BuiltinFamily::LaplaceIid => "laplace-iid",
            BuiltinFamily::Uniform01Iid => "uniform01-iid",
            BuiltinFamily::ExponentialIid => "exponential-iid",
            BuiltinFamily::HalfnormalIid => "halfnormal-iid",
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            BuiltinFamily::GaussianIid | BuiltinFamily::LaplaceIid | BuiltinFamily::Uniform01Iid => {
                FamilyKind::Location
            }
            BuiltinFamily::ExponentialIid | BuiltinFamily::HalfnormalIid => FamilyKind::Scale,
        }
    }

    pub fn support(&self) -> Support {
        match self {
            BuiltinFamily::GaussianIid | BuiltinFamily::LaplaceIid => Support::AllReals,
            BuiltinFamily::Uniform01Iid => Support::UnitBox,
            BuiltinFamily::ExponentialIid | BuiltinFamily::HalfnormalIid => Support::PositiveOrthant,
        }
    }

    /// Whether the log density is smooth inside the support. The Laplace
    /// kernel has a kink at 0, i.e. at every data point in the parameter.
    pub fn smooth(&self) -> bool {
        !matches!(self, BuiltinFamily::LaplaceIid)
    }

    /// One-coordinate log density; the caller has checked the support.
    pub(crate) fn log_f1(&self, z: f64) -> f64 {
        match self {
            BuiltinFamily::GaussianIid => -0.5 * z * z - LN_SQRT_2PI,
            BuiltinFamily::LaplaceIid => -z.abs() - std::f64::consts::LN_2,
            BuiltinFamily::Uniform01Iid => 0.0,
            BuiltinFamily::ExponentialIid => -z,
            BuiltinFamily::HalfnormalIid => -0.5 * z * z + LN_SQRT_2_OVER_PI,
        }
    }

    fn sample1<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BuiltinFamily::GaussianIid => StandardNormal.sample(rng),
            BuiltinFamily::LaplaceIid => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    e
                } else {
                    -e
                }
            }
            BuiltinFamily::Uniform01Iid => rng.random::<f64>(),
            BuiltinFamily::ExponentialIid => Exp1.sample(rng),
            BuiltinFamily::HalfnormalIid => {
                let z: f64 = StandardNormal.sample(rng);
                z.abs()
            }
        }
    }
}

impl fmt::Display for BuiltinFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for BuiltinFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.tag() == s)
            .ok_or_else(|| Error::invalid("family", format!("unknown family tag `{s}`")))
    }
}

/// A user-supplied joint log-kernel on `ℝⁿ`.
pub type KernelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kernel {
    Builtin(BuiltinFamily),
    Custom(KernelFn),
}

/// A location or scale family on `ℝⁿ`.
///
/// `exp(kernel)` must integrate to one over the support. Built-ins do and
/// have finite second moments; nothing of the sort is checked for custom
/// kernels.
#[derive(Clone)]
pub struct DensityFamily {
    kind: FamilyKind,
    n: usize,
    support: Support,
    kernel: Kernel,
}

impl fmt::Debug for DensityFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kernel = match &self.kernel {
            Kernel::Builtin(b) => b.tag(),
            Kernel::Custom(_) => "custom",
        };
        f.debug_struct("DensityFamily")
            .field("kind", &self.kind)
            .field("n", &self.n)
            .field("support", &self.support)
            .field("kernel", &kernel)
            .finish()
    }
}

impl DensityFamily {
    pub fn builtin(family: BuiltinFamily, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        Ok(Self {
            kind: family.kind(),
            n,
            support: family.support(),
            kernel: Kernel::Builtin(family),
        })
    }

    /// Parses a built-in tag such as `gaussian-iid`.
    pub fn from_tag(tag: &str, n: usize) -> Result<Self> {
        Self::builtin(tag.parse()?, n)
    }

    pub fn custom(kind: FamilyKind, n: usize, support: Support, kernel: KernelFn) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        Ok(Self {
            kind,
            n,
            support,
            kernel: Kernel::Custom(kernel),
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn builtin_tag(&self) -> Option<BuiltinFamily> {
        match self.kernel {
            Kernel::Builtin(b) => Some(b),
            Kernel::Custom(_) => None,
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: len,
            });
        }
        Ok(())
    }

    /// `log f(z)`, `-inf` off the support.
    pub fn log_kernel(&self, z: &[f64]) -> Result<f64> {
        self.check_len(z.len())?;
        Ok(self.log_kernel_affine(z, 0.0, 1.0))
    }

    /// `log f((x - shift) * inv_scale)` without allocating for built-ins.
    /// The length of `x` must equal `n`.
    pub(crate) fn log_kernel_affine(&self, x: &[f64], shift: f64, inv_scale: f64) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        match &self.kernel {
            Kernel::Builtin(b) => {
                let mut acc = 0.0;
                for &xi in x {
                    let z = (xi - shift) * inv_scale;
                    if !self.support.contains(z) {
                        return f64::NEG_INFINITY;
                    }
                    acc += b.log_f1(z);
                }
                acc
            }
            Kernel::Custom(k) => {
                let z: Vec<f64> = x.iter().map(|&xi| (xi - shift) * inv_scale).collect();
                if !z.iter().all(|&v| self.support.contains(v)) {
                    return f64::NEG_INFINITY;
                }
                match k(&z) {
                    v if v.is_nan() => f64::NAN,
                    v => v,
                }
            }
        }
    }

    /// A draw of `z` from `f` itself (`μ = 0` or `σ = 1`).
    pub fn sample_standard<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self.kernel {
            Kernel::Builtin(b) => Ok((0..self.n).map(|_| b.sample1(rng)).collect()),
            Kernel::Custom(_) => Err(Error::Unsupported("sampling from a custom kernel".into())),
        }
    }

    /// A draw at location `μ` or scale `σ`.
    pub fn sample_at<R: Rng + ?Sized>(&self, param: f64, rng: &mut R) -> Result<Vec<f64>> {
        let mut z = self.sample_standard(rng)?;
        match self.kind {
            FamilyKind::Location => z.iter_mut().for_each(|v| *v += param),
            FamilyKind::Scale => z.iter_mut().for_each(|v| *v *= param),
        }
        Ok(z)
    }

    /// Error unless `x` is a valid observation for this family.
    pub fn validate_sample(&self, x: &[f64]) -> Result<()> {
        self.check_len(x.len())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("data", format!("entry {i} is not finite")));
        }
        if self.kind == FamilyKind::Scale {
            if let Some(i) = x.iter().position(|&v| !self.support.contains(v)) {
                return Err(Error::invalid("data", format!("entry {i} = {} is outside the support", x[i])));
            }
        }
        Ok(())
    }
}

/// An observation: a vector for location/scale, a Cholesky factor for the
/// covariance problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sample {
    Values(Vec<f64>),
    Factor(LowerTriangular),
}

/// `log f(x - μ)` or `-n log σ + log f(x / σ)`.
pub fn log_density(family: &DensityFamily, x: &[f64], param: f64) -> Result<f64> {
    family.check_len(x.len())?;
    match family.kind {
        FamilyKind::Location => {
            if !param.is_finite() {
                return Err(Error::invalid("mu", "must be finite"));
            }
            Ok(family.log_kernel_affine(x, param, 1.0))
        }
        FamilyKind::Scale => {
            if !(param > 0.0 && param.is_finite()) {
                return Err(Error::invalid("sigma", format!("must be > 0, got {param}")));
            }
            Ok(-(family.n as f64) * param.ln() + family.log_kernel_affine(x, 0.0, 1.0 / param))
        }
    }
}

/// The three invariant losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case")]
pub enum LossSpec {
    SquaredError,
    Entropy,
    Stein { p: usize },
}

impl LossSpec {
    /// Parses `squared-error`, `entropy` or `stein`; `p` is needed for Stein.
    pub fn from_tag(tag: &str, p: Option<usize>) -> Result<Self> {
        match tag {
            "squared-error" => Ok(LossSpec::SquaredError),
            "entropy" => Ok(LossSpec::Entropy),
            "stein" => match p {
                Some(p) if p > 0 => Ok(LossSpec::Stein { p }),
                _ => Err(Error::invalid("p", "stein loss needs a positive dimension")),
            },
            _ => Err(Error::invalid("loss", format!("unknown loss tag `{tag}`"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LossSpec::SquaredError => "squared-error",
            LossSpec::Entropy => "entropy",
            LossSpec::Stein { .. } => "stein",
        }
    }

    pub fn eval(&self, estimate: &Value, truth: &Value) -> Result<f64> {
        match (self, estimate, truth) {
            (LossSpec::SquaredError, Value::Scalar(d), Value::Scalar(m)) => Ok(squared_error_loss(*d, *m)),
            (LossSpec::Entropy, Value::Scalar(d), Value::Scalar(s)) => entropy_loss(*d, *s),
            (LossSpec::Stein { p }, Value::Matrix(d), Value::Matrix(s)) => {
                for m in [d, s] {
                    if m.dim() != *p {
                        return Err(Error::DimensionMismatch {
                            expected: *p,
                            actual: m.dim(),
                        });
                    }
                }
                stein_loss(d, s)
            }
            _ => Err(Error::invalid("loss", format!("{} loss got a mismatched estimate/truth", self.tag()))),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Accepts `stein:<p>` in addition to the plain tags.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("stein", p)) => {
                let p = p.parse().map_err(|_| Error::invalid("p", format!("bad dimension `{p}`")))?;
                Self::from_tag("stein", Some(p))
            }
            _ => Self::from_tag(s, None),
        }
    }
}

/// Estimate or truth handed to [`LossSpec::eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Matrix(Matrix),
}

/// `(d - m)²`.
pub fn squared_error_loss(d: f64, m: f64) -> f64 {
    (d - m) * (d - m)
}

/// `d/s - log(d/s) - 1`, written as `e - log1p(e)` with `e = d/s - 1`.
pub fn entropy_loss(d: f64, s: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid("estimate", format!("scale estimate must be > 0, got {d}")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be > 0, got {s}")));
    }
    if d == s {
        return Ok(0.0);
    }
    let e = (d - s) / s;
    Ok((e - e.ln_1p()).max(0.0))
}

/// `tr(Σ⁻¹δ) - log|Σ⁻¹δ| - p`.
pub fn stein_loss(delta: &Matrix, sigma: &Matrix) -> Result<f64> {
    if delta.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            actual: delta.dim(),
        });
    }
    if delta == sigma {
        // still insist on a valid truth
        sigma.cholesky()?;
        return Ok(0.0);
    }
    let c_inv = sigma.cholesky()?.inverse();
    stein_from_whitened(&c_inv.sandwich(delta))
}

/// Stein loss with the truth given as `Θ` (`Σ⁻¹ = ΘᵀΘ`): the loss of `ΘδΘᵀ`
/// against the identity.
pub fn stein_loss_theta(delta: &Matrix, theta: &LowerTriangular) -> Result<f64> {
    if delta.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: delta.dim(),
        });
    }
    stein_from_whitened(&theta.sandwich(delta))
}

/// With `M = RRᵀ` the loss is `Σ_i (r_ii² - 1 - log r_ii²) + Σ_{i>j} r_ij²`,
/// a sum of nonnegative terms.
fn stein_from_whitened(m: &Matrix) -> Result<f64> {
    let r = m.symmetrized().cholesky()?;
    let p = r.dim();
    let mut acc = 0.0;
    for i in 0..p {
        let x = r.diag(i) * r.diag(i);
        let e = x - 1.0;
        acc += (e - e.ln_1p()).max(0.0);
        for j in 0..i {
            acc += r.get(i, j) * r.get(i, j);
        }
    }
    Ok(acc)
}
