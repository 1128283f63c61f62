//! Pitman (generalized Bayes) estimators and their Gaussian-prior Bayes rules.
//!
//! Location integrals run over `t = μ - m`, with `m` the sample median moved
//! by the kernel's own center, so shifting the data only shifts `m`. Scale
//! integrals run over `σ` on the half-line, and the invariant estimator is
//! computed on data rescaled by `mean |x|` for the same reason.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuiltinFamily, DensityFamily, FamilyKind, KernelFn, Support};
use crate::quad::{kronrod21_rule, log_integral, log_integral_ratio, log_integral_ratio_with_breaks, Domain1D, QuadConfig};
use crate::rng::pairwise_sum;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `φ_k(μ) = φ(μ/k)/k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLocationPrior {
    k: f64,
}

impl GaussianLocationPrior {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("must be > 0, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn log_density(&self, mu: f64) -> f64 {
        let z = mu / self.k;
        -0.5 * z * z - self.k.ln() - LN_SQRT_2PI
    }
}

/// `log σ ~ N(0, k²)`, i.e. `π_k(σ) = φ(log σ / k)/(kσ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalScalePrior {
    k: f64,
}

impl LogNormalScalePrior {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("must be > 0, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn log_density(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = sigma.ln();
        let z = l / self.k;
        -0.5 * z * z - self.k.ln() - LN_SQRT_2PI - l
    }
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Data-based center and width of the `μ` posterior, used to place the
/// window. For the uniform kernel the posterior support is exactly
/// `(max x - 1, min x)`, which can be far narrower than `1/n`.
fn location_hints(family: &DensityFamily, x: &[f64]) -> (f64, f64) {
    let n = family.n() as f64;
    match family.builtin_tag() {
        Some(BuiltinFamily::Uniform01Iid) => {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let free = 1.0 - (hi - lo);
            let width = if free > 0.0 { 0.5 * free } else { 1.0 / n };
            (0.5 * (lo + hi) - 0.5, width)
        }
        _ => (median(x), 1.0 / n.sqrt()),
    }
}

fn check_location(family: &DensityFamily, x: &[f64]) -> Result<()> {
    if family.kind() != FamilyKind::Location {
        return Err(Error::invalid("family", "expected a location family"));
    }
    family.validate_sample(x)
}

fn check_scale(family: &DensityFamily, x: &[f64]) -> Result<()> {
    if family.kind() != FamilyKind::Scale {
        return Err(Error::invalid("family", "expected a scale family"));
    }
    family.validate_sample(x)
}

/// `∫ μ f(x-μ) e^{extra(μ)} dμ / ∫ f(x-μ) e^{extra(μ)} dμ`.
fn location_ratio<P>(family: &DensityFamily, x: &[f64], log_prior: P, center: f64, cfg: &QuadConfig) -> Result<f64>
where
    P: Fn(f64) -> f64,
{
    let (m, width) = location_hints(family, x);
    let y: Vec<f64> = x.iter().map(|v| v - m).collect();
    let g = |t: f64| family.log_kernel_affine(&y, t, 1.0) + log_prior(m + t);
    let domain = Domain1D::real_line().with_center(center - m).with_scale(width);
    let kinks: &[f64] = match family.builtin_tag() {
        Some(b) if !b.smooth() => &y,
        _ => &[],
    };
    Ok(m + log_integral_ratio_with_breaks(|t| t, g, domain, kinks, cfg)?)
}

/// Pitman estimator of location, `∫ μ f(x-μ) dμ / ∫ f(x-μ) dμ`.
pub fn pitman_location(family: &DensityFamily, x: &[f64], cfg: &QuadConfig) -> Result<f64> {
    check_location(family, x)?;
    let (m, _) = location_hints(family, x);
    location_ratio(family, x, |_| 0.0, m, cfg)
}

/// Bayes rule under `φ_k` and squared error: the posterior mean.
pub fn bayes_location_gaussian(
    family: &DensityFamily,
    x: &[f64],
    prior: &GaussianLocationPrior,
    cfg: &QuadConfig,
) -> Result<f64> {
    check_location(family, x)?;
    let (m, _) = location_hints(family, x);
    // precision-weighted guess between the data and the prior mean
    let n = family.n() as f64;
    let prec = 1.0 / (prior.k * prior.k);
    let center = n * m / (n + prec);
    location_ratio(family, x, |mu| prior.log_density(mu), center, cfg)
}

/// `δ*_k(z, μ) = δ^φ_k(z + μ) - μ`.
pub fn shifted_bayes_location(
    family: &DensityFamily,
    z: &[f64],
    mu: f64,
    prior: &GaussianLocationPrior,
    cfg: &QuadConfig,
) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::invalid("mu", "must be finite"));
    }
    let shifted: Vec<f64> = z.iter().map(|v| v + mu).collect();
    Ok(bayes_location_gaussian(family, &shifted, prior, cfg)? - mu)
}

/// For the built-ins `∫ σ^{-n-1-c} f(x/σ) dσ` is finite iff `n + c > 0`: the
/// kernels decay at least exponentially in `x/σ`, so only `σ → ∞` matters.
fn check_c(family: &DensityFamily, c: f64) -> Result<()> {
    if !c.is_finite() {
        return Err(Error::invalid("c", "must be finite"));
    }
    let n = family.n() as f64;
    if family.builtin_tag().is_some() && n + c <= 0.0 {
        return Err(Error::invalid(
            "c",
            format!("the integrals diverge unless n + c > 0 (n = {n}, c = {c})"),
        ));
    }
    Ok(())
}

fn mean_abs(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

/// Generalized Bayes estimator of `σ^c` under the prior `1/σ` and entropy
/// loss, `∫ σ^{-n-1} f(x/σ) dσ / ∫ σ^{-n-1-c} f(x/σ) dσ`. At `c = 1` this is
/// the Pitman scale estimator `∫ σ^{-n-1} f / ∫ σ^{-n-2} f`.
pub fn pitman_scale(family: &DensityFamily, x: &[f64], c: f64, cfg: &QuadConfig) -> Result<f64> {
    check_scale(family, x)?;
    check_c(family, c)?;
    let s = mean_abs(x);
    let y: Vec<f64> = x.iter().map(|v| v / s).collect();
    let a = -(family.n() as f64) - 1.0 - c;
    let g = |sigma: f64| a * sigma.ln() + family.log_kernel_affine(&y, 0.0, 1.0 / sigma);
    let domain = Domain1D::positive_half_line()
        .with_center(1.0)
        .with_scale(1.0 / (family.n() as f64).sqrt());
    Ok(s.powf(c) * log_integral_ratio(|sigma| sigma.powf(c), g, domain, cfg)?)
}

/// Bayes estimator of `σ^c` under `π_k`:
/// `∫ σ^{-n} f(x/σ) π_k dσ / ∫ σ^{-n-c} f(x/σ) π_k dσ`.
pub fn bayes_scale_lognormal(
    family: &DensityFamily,
    x: &[f64],
    prior: &LogNormalScalePrior,
    c: f64,
    cfg: &QuadConfig,
) -> Result<f64> {
    check_scale(family, x)?;
    if !c.is_finite() {
        return Err(Error::invalid("c", "must be finite"));
    }
    let a = -(family.n() as f64) - c;
    let g = |sigma: f64| a * sigma.ln() + family.log_kernel_affine(x, 0.0, 1.0 / sigma) + prior.log_density(sigma);
    let domain = Domain1D::positive_half_line()
        .with_center(mean_abs(x))
        .with_scale(1.0 / (family.n() as f64).sqrt());
    log_integral_ratio(|sigma| sigma.powf(c), g, domain, cfg)
}

/// A location family for `n` observations of a `p`-vector, `f(X - 1μᵀ)`.
/// The kernel sees the residuals row-major (`n` rows of `p`).
#[derive(Clone)]
pub struct JointLocationFamily {
    n: usize,
    p: usize,
    builtin: Option<BuiltinFamily>,
    kernel: KernelFn,
}

impl std::fmt::Debug for JointLocationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JointLocationFamily")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("builtin", &self.builtin)
            .finish()
    }
}

/// Largest `p` handled by the product grid.
pub const MAX_JOINT_DIM: usize = 3;

impl JointLocationFamily {
    pub fn custom(n: usize, p: usize, kernel: KernelFn) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::invalid("n, p", "must be positive"));
        }
        Ok(Self {
            n,
            p,
            builtin: None,
            kernel,
        })
    }

    /// All `n·p` coordinates iid from a built-in location family.
    pub fn iid(family: BuiltinFamily, n: usize, p: usize) -> Result<Self> {
        if family.kind() != FamilyKind::Location {
            return Err(Error::invalid("family", "expected a location family"));
        }
        let support = family.support();
        let kernel: KernelFn = Arc::new(move |z: &[f64]| {
            let mut acc = 0.0;
            for &v in z {
                if !support.contains(v) {
                    return f64::NEG_INFINITY;
                }
                acc += family.log_f1(v);
            }
            acc
        });
        let mut out = Self::custom(n, p, kernel)?;
        out.builtin = Some(family);
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn as_univariate(&self) -> Result<DensityFamily> {
        match self.builtin {
            Some(b) => DensityFamily::builtin(b, self.n),
            None => DensityFamily::custom(FamilyKind::Location, self.n, Support::AllReals, self.kernel.clone()),
        }
    }
}

/// Vector Pitman estimator `∫ μ f(X - 1μᵀ) dμ / ∫ f(X - 1μᵀ) dμ` by a product
/// Kronrod grid. `x` holds `n` rows of length `p`. The grid is fixed, so
/// kernels with kinks (Laplace) converge only algebraically.
pub fn pitman_location_multivariate(
    family: &JointLocationFamily,
    x: &[Vec<f64>],
    cfg: &QuadConfig,
) -> Result<Vec<f64>> {
    let (n, p) = (family.n, family.p);
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x.len(),
        });
    }
    if let Some(row) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: row.len(),
        });
    }
    if p > MAX_JOINT_DIM {
        return Err(Error::Unsupported(format!(
            "joint location grid needs p <= {MAX_JOINT_DIM}, got {p}"
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data", "entries must be finite"));
    }
    if p == 1 {
        let col: Vec<f64> = x.iter().map(|r| r[0]).collect();
        return Ok(vec![pitman_location(&family.as_univariate()?, &col, cfg)?]);
    }
    cfg.validate()?;

    let columns: Vec<(f64, f64)> = (0..p)
        .map(|j| {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            match family.builtin {
                Some(b) => Ok(location_hints(&DensityFamily::builtin(b, n)?, &col)),
                None => Ok((median(&col), 1.0 / (n as f64).sqrt())),
            }
        })
        .collect::<Result<_>>()?;
    let m: Vec<f64> = columns.iter().map(|c| c.0).collect();
    let width_hint = columns.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let y: Vec<f64> = x.iter().flat_map(|r| r.iter().zip(&m).map(|(v, mj)| v - mj)).collect();
    let kernel = |t: &[f64], buf: &mut Vec<f64>| -> f64 {
        buf.clear();
        buf.extend(y.iter().enumerate().map(|(idx, v)| v - t[idx % p]));
        (family.kernel)(buf)
    };

    // axis ranges from one-dimensional slices through the median
    let mut buf = Vec::with_capacity(n * p);
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(p);
    let panels = if p == 2 { 6 } else { 5 };
    for j in 0..p {
        let slice = log_integral(
            |s| {
                let mut t = vec![0.0; p];
                t[j] = s;
                let mut b = Vec::with_capacity(n * p);
                kernel(&t, &mut b)
            },
            Domain1D::real_line().with_scale(width_hint),
            cfg,
        )?;
        let half = 1.5 * cfg.window * slice.width;
        let (lo, hi) = (slice.mode - half, slice.mode + half);
        let step = (hi - lo) / panels as f64;
        let nodes = (0..panels)
            .flat_map(|k| kronrod21_rule(lo + k as f64 * step, lo + (k + 1) as f64 * step))
            .collect();
        axes.push(nodes);
    }

    let sizes: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let mut logw = Vec::with_capacity(total);
    let mut t = vec![0.0; p];
    for flat in 0..total {
        let mut rem = flat;
        let mut lw = 0.0;
        for j in (0..p).rev() {
            let (node, w) = axes[j][rem % sizes[j]];
            rem /= sizes[j];
            t[j] = node;
            lw += w.ln();
        }
        let v = kernel(&t, &mut buf);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFiniteIntegrand { at: flat as f64 });
        }
        logw.push(lw + v);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMass);
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let den = pairwise_sum(&w);
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let stride: usize = sizes[j + 1..].iter().product();
        let num: Vec<f64> = w
            .iter()
            .enumerate()
            .map(|(flat, wi)| wi * axes[j][(flat / stride) % sizes[j]].0)
            .collect();
        out.push(m[j] + pairwise_sum(&num) / den);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    fn fam(tag: &str, n: usize) -> DensityFamily {
        DensityFamily::from_tag(tag, n).unwrap()
    }

    /// Trapezoid rule on `u = log σ` over a wide fixed grid; the integrands
    /// decay at least exponentially in `u`, so this converges geometrically.
    fn scale_ratio_oracle(g: impl Fn(f64) -> f64, c: f64) -> f64 {
        let (lo, hi, m) = (-40.0, 40.0, 800_000);
        let h = (hi - lo) / m as f64;
        let lg: Vec<f64> = (0..=m).map(|i| lo + i as f64 * h).map(|u| g(u.exp()) + u).collect();
        let mx = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (i, l) in lg.iter().enumerate() {
            let u = lo + i as f64 * h;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 } * (l - mx).exp();
            num += w * (c * u).exp();
            den += w;
        }
        num / den
    }

    #[test]
    fn location_examples() {
        let g = fam("gaussian-iid", 2);
        assert!((pitman_location(&g, &[1.0, 3.0], &cfg()).unwrap() - 2.0).abs() < 1e-10);
        let l = fam("laplace-iid", 2);
        assert!(pitman_location(&l, &[-1.7, 1.7], &cfg()).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gaussian_location_matches_riemann_sum() {
        let g = fam("gaussian-iid", 3);
        let x = [0.3, -1.2, 2.5];
        let (lo, hi, m) = (-10.0, 10.0, 200_000);
        let h = (hi - lo) / m as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..m {
            let mu = lo + (i as f64 + 0.5) * h;
            let w = crate::model::log_density(&g, &x, mu).unwrap().exp();
            num += mu * w;
            den += w;
        }
        assert!((pitman_location(&g, &x, &cfg()).unwrap() - num / den).abs() < 1e-9);
    }

    #[test]
    fn uniform_location_matches_midpoint_oracle() {
        // posterior of μ is uniform on (max x - 1, min x) = (-0.1, 0.2)
        let u = fam("uniform01-iid", 2);
        let x = [0.2, 0.9];
        let (lo, hi, m) = (-1.0, 1.0, 1_000_000);
        let h = (hi - lo) / m as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..m {
            let mu = lo + (i as f64 + 0.5) * h;
            if crate::model::log_density(&u, &x, mu).unwrap().is_finite() {
                num += mu;
                den += 1.0;
            }
        }
        let est = pitman_location(&u, &x, &cfg()).unwrap();
        assert!((num / den - 0.05).abs() < 1e-5);
        assert!((est - 0.05).abs() < 1e-8, "{est}");
    }

    #[test]
    fn uniform_narrow_posterior_support() {
        // range 0.98 leaves a posterior support of width 0.02
        let f = fam("uniform01-iid", 3);
        let x = [0.011885444244180365, 0.056143564635066645, 0.9924243474411402];
        let want = 0.5 * (x[0] + x[2]) - 0.5;
        assert!((pitman_location(&f, &x, &cfg()).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn location_rejects_scale_family() {
        assert!(pitman_location(&fam("exponential-iid", 2), &[1.0, 2.0], &cfg()).is_err());
        assert!(pitman_scale(&fam("gaussian-iid", 2), &[1.0, 2.0], 1.0, &cfg()).is_err());
    }

    #[test]
    fn bayes_location_conjugate() {
        let g = fam("gaussian-iid", 1);
        let one = GaussianLocationPrior::new(1.0).unwrap();
        assert!((bayes_location_gaussian(&g, &[2.0], &one, &cfg()).unwrap() - 1.0).abs() < 1e-10);
        let big = GaussianLocationPrior::new(100.0).unwrap();
        let v = bayes_location_gaussian(&g, &[2.0], &big, &cfg()).unwrap();
        assert!((v - 2.0 * 10000.0 / 10001.0).abs() < 1e-10);
        let l = fam("laplace-iid", 2);
        assert!(bayes_location_gaussian(&l, &[-1.7, 1.7], &one, &cfg()).unwrap().abs() < 1e-10);
        assert!(GaussianLocationPrior::new(0.0).is_err());
    }

    #[test]
    fn shifted_bayes_location_cases() {
        let g = fam("gaussian-iid", 1);
        let prior = GaussianLocationPrior::new(3.0).unwrap();
        let a = shifted_bayes_location(&g, &[0.7], 0.0, &prior, &cfg()).unwrap();
        let b = bayes_location_gaussian(&g, &[0.7], &prior, &cfg()).unwrap();
        assert_eq!(a, b);

        // conjugate form: δ*_k(z, kμ) = z k²/(k²+1) - kμ/(k²+1)
        let closed = |z: f64, mu: f64, k: f64| (z * k * k - k * mu) / (k * k + 1.0);
        let k = 50.0;
        let p50 = GaussianLocationPrior::new(k).unwrap();
        let v = shifted_bayes_location(&g, &[1.0], k, &p50, &cfg()).unwrap();
        assert!((v - closed(1.0, 1.0, k)).abs() < 1e-9);

        let gaps: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&k| {
                let pr = GaussianLocationPrior::new(k).unwrap();
                (shifted_bayes_location(&g, &[1.0], k * 0.5, &pr, &cfg()).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn shifted_bayes_converges_at_large_k() {
        for tag in ["gaussian-iid", "laplace-iid"] {
            let f = fam(tag, 3);
            let z = [0.4, -0.9, 1.3];
            let pit = pitman_location(&f, &z, &cfg()).unwrap();
            let mut prev = f64::INFINITY;
            for e in 0..=8 {
                let k = f64::from(1u32 << e);
                let pr = GaussianLocationPrior::new(k).unwrap();
                let gap = (shifted_bayes_location(&f, &z, k * 0.5, &pr, &cfg()).unwrap() - pit).abs();
                assert!(gap <= prev + 1e-12, "{tag} k={k}: {gap} > {prev}");
                prev = gap;
            }
            assert!(prev < 1e-2, "{tag}: {prev}");
        }
    }

    #[test]
    fn bayes_location_approaches_pitman() {
        let pr = GaussianLocationPrior::new(1e3).unwrap();
        for tag in ["gaussian-iid", "laplace-iid", "uniform01-iid"] {
            for n in 1..=5 {
                let f = fam(tag, n);
                let x: Vec<f64> = (0..n).map(|i| 0.13 * i as f64 + 0.05 * ((i * i) % 3) as f64 + 0.2).collect();
                let a = pitman_location(&f, &x, &cfg()).unwrap();
                let b = bayes_location_gaussian(&f, &x, &pr, &cfg()).unwrap();
                assert!((a - b).abs() < 1e-3, "{tag} n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn location_equivariance() {
        let f = fam("laplace-iid", 4);
        let x = [0.3, 1.1, -0.4, 2.0];
        let base = pitman_location(&f, &x, &cfg()).unwrap();
        for a in [-100.0, -3.3, 0.01, 57.0, 100.0] {
            let xs: Vec<f64> = x.iter().map(|v| v + a).collect();
            let v = pitman_location(&f, &xs, &cfg()).unwrap();
            assert!((v - base - a).abs() < 1e-8, "a={a}");
        }
        // the shift breaks the symmetry of the flat top and moves the located
        // mode next to a kink
        let x = [-0.026912052484999446, -2.16582965393463, -0.6768761432967954, -0.4955161000705952];
        let base = pitman_location(&f, &x, &cfg()).unwrap();
        let a = 46.146196419398365;
        let xs: Vec<f64> = x.iter().map(|v| v + a).collect();
        assert!((pitman_location(&f, &xs, &cfg()).unwrap() - base - a).abs() < 1e-8);
    }

    #[test]
    fn scale_examples() {
        let e = fam("exponential-iid", 3);
        assert!((pitman_scale(&e, &[1.0, 2.0, 3.0], 1.0, &cfg()).unwrap() - 2.0).abs() < 1e-8);
        assert!((pitman_scale(&e, &[2.0, 4.0, 6.0], 1.0, &cfg()).unwrap() - 4.0).abs() < 1e-8);
        let h = fam("halfnormal-iid", 2);
        let oracle = (2.5f64).sqrt() * gamma(1.0) / gamma(1.5);
        assert!((oracle - 1.78412).abs() < 1e-5);
        assert!((pitman_scale(&h, &[1.0, 2.0], 1.0, &cfg()).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn scale_equivariance() {
        let h = fam("halfnormal-iid", 3);
        let x = [0.4, 1.9, 0.8];
        let base = pitman_scale(&h, &x, 1.0, &cfg()).unwrap();
        for c in [0.1, 2.0, 50.0] {
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            let v = pitman_scale(&h, &xs, 1.0, &cfg()).unwrap();
            assert!((v / (c * base) - 1.0).abs() < 1e-8, "c={c}");
        }
    }

    #[test]
    fn scale_power_matches_quadrature_oracle() {
        let e = fam("exponential-iid", 3);
        let x = [0.5, 1.5, 4.0];
        for c in [-2.5, -1.0, 0.5, 1.0, 2.0, 3.5] {
            let a = -3.0 - 1.0 - c;
            let oracle = scale_ratio_oracle(|s| a * s.ln() + e.log_kernel_affine(&x, 0.0, 1.0 / s), c);
            let v = pitman_scale(&e, &x, c, &cfg()).unwrap();
            assert!((v / oracle - 1.0).abs() < 1e-8, "c={c}: {v} vs {oracle}");
        }
        assert!(matches!(
            pitman_scale(&e, &x, -3.0, &cfg()),
            Err(Error::InvalidParameter { name: "c", .. })
        ));
    }

    #[test]
    fn scale_power_is_homogeneous_of_degree_c() {
        let h = fam("halfnormal-iid", 2);
        let x = [0.7, 1.3];
        let c = 2.5;
        let base = pitman_scale(&h, &x, c, &cfg()).unwrap();
        let v = pitman_scale(&h, &[2.1, 3.9], c, &cfg()).unwrap();
        assert!((v / (3f64.powf(c) * base) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn custom_scale_kernel_divergence_is_detected() {
        // f(z) = (1+z)^{-2}: near σ → 0 the integrand of the denominator
        // behaves like σ^{-c}, which is not integrable for c >= 1
        let k: KernelFn = Arc::new(|z: &[f64]| -2.0 * (1.0 + z[0]).ln());
        let f = DensityFamily::custom(FamilyKind::Scale, 1, Support::PositiveOrthant, k).unwrap();
        assert!(pitman_scale(&f, &[1.0], 0.5, &cfg()).is_ok());
        let r = pitman_scale(&f, &[1.0], 2.5, &cfg());
        assert!(matches!(r, Err(Error::ToleranceFailure { .. })), "{r:?}");
    }

    #[test]
    fn bayes_scale_cases() {
        let e = fam("exponential-iid", 3);
        let x = [1.0, 2.0, 3.0];
        let far = LogNormalScalePrior::new(200.0).unwrap();
        assert!((bayes_scale_lognormal(&e, &x, &far, 1.0, &cfg()).unwrap() - 2.0).abs() < 1e-3);

        let one = LogNormalScalePrior::new(1.0).unwrap();
        let v = bayes_scale_lognormal(&e, &x, &one, 1.0, &cfg()).unwrap();
        let oracle =
            scale_ratio_oracle(|s| -4.0 * s.ln() + e.log_kernel_affine(&x, 0.0, 1.0 / s) + one.log_density(s), 1.0);
        assert!(v > 0.0 && v < 2.0);
        assert!((v / oracle - 1.0).abs() < 1e-8, "{v} vs {oracle}");
        assert!((v - 1.659_424_348_249_396).abs() < 1e-8, "{v}");

        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let v2 = bayes_scale_lognormal(&e, &x2, &one, 1.0, &cfg()).unwrap();
        assert!((v2 - 2.0 * v).abs() > 1e-3);
    }

    #[test]
    fn multivariate_independent_gaussian() {
        let fam2 = JointLocationFamily::iid(BuiltinFamily::GaussianIid, 3, 2).unwrap();
        let x = vec![vec![0.5, -1.0], vec![1.5, -3.5], vec![1.0, -1.5]];
        let est = pitman_location_multivariate(&fam2, &x, &cfg()).unwrap();
        assert!((est[0] - 1.0).abs() < 1e-8 && (est[1] + 2.0).abs() < 1e-8, "{est:?}");

        let swapped: Vec<Vec<f64>> = x.iter().map(|r| vec![r[1], r[0]]).collect();
        let s = pitman_location_multivariate(&fam2, &swapped, &cfg()).unwrap();
        assert!((s[0] - est[1]).abs() < 1e-10 && (s[1] - est[0]).abs() < 1e-10);
    }

    #[test]
    fn multivariate_correlated_kernel() {
        // bivariate normal with correlation 0.6: the estimator is the mean vector
        let rho: f64 = 0.6;
        let k: KernelFn = Arc::new(move |z: &[f64]| {
            z.chunks(2)
                .map(|r| -(r[0] * r[0] - 2.0 * rho * r[0] * r[1] + r[1] * r[1]) / (2.0 * (1.0 - rho * rho)))
                .sum()
        });
        let f = JointLocationFamily::custom(2, 2, k).unwrap();
        let x = vec![vec![0.0, 1.0], vec![2.0, 2.0]];
        let est = pitman_location_multivariate(&f, &x, &cfg()).unwrap();
        assert!((est[0] - 1.0).abs() < 1e-8 && (est[1] - 1.5).abs() < 1e-8, "{est:?}");
    }

    #[test]
    fn multivariate_three_dims_and_limits() {
        let f3 = JointLocationFamily::iid(BuiltinFamily::GaussianIid, 2, 3).unwrap();
        let x = vec![vec![0.0, 1.0, -2.0], vec![1.0, 3.0, -2.5]];
        let est = pitman_location_multivariate(&f3, &x, &cfg()).unwrap();
        for (e, want) in est.iter().zip([0.5, 2.0, -2.25]) {
            assert!((e - want).abs() < 1e-8, "{est:?}");
        }
        let f4 = JointLocationFamily::iid(BuiltinFamily::GaussianIid, 1, 4).unwrap();
        assert!(matches!(
            pitman_location_multivariate(&f4, &[vec![0.0; 4]], &cfg()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn multivariate_p1_is_exactly_univariate() {
        let f = JointLocationFamily::iid(BuiltinFamily::LaplaceIid, 3, 1).unwrap();
        let x = vec![vec![0.2], vec![1.7], vec![-0.4]];
        let a = pitman_location_multivariate(&f, &x, &cfg()).unwrap();
        let b = pitman_location(&fam("laplace-iid", 3), &[0.2, 1.7, -0.4], &cfg()).unwrap();
        assert_eq!(a, vec![b]);
    }
}
