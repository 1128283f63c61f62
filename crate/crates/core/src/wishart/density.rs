//! The Wishart law written over Cholesky factors.
//!
//! With `V = T Tᵀ` and `Σ⁻¹ = Θᵀ Θ` (both `T, Θ ∈ T⁺`), the density of `T`
//! with respect to the left Haar measure `γ(dT) = Π t_ii^{-i} dT` is
//!
//! ```text
//! f_W(T | Θ) = |ΘT|^n exp(-tr((ΘT)(ΘT)ᵀ) / 2) / C(p, n),
//! C(p, n)   = 2^{p(n-2)/2} π^{p(p-1)/4} Π_i Γ((n + 1 - i) / 2).
//! ```
//!
//! It depends on `(T, Θ)` only through the product `ΘT`, which is how it is
//! evaluated here.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::linalg::{tri_index, LowerTriangular, Matrix};
use crate::error::{Error, Result};

/// `V ~ W_p(n, Σ)` with the truth stored as `Θ`, `Σ⁻¹ = ΘᵀΘ`.
#[derive(Debug, Clone)]
pub struct WishartModel {
    n: usize,
    theta: LowerTriangular,
    /// `Θ⁻¹ = chol(Σ)`.
    sigma_chol: LowerTriangular,
    chi: Vec<ChiSquared<f64>>,
}

impl WishartModel {
    pub fn new(n: usize, theta: LowerTriangular) -> Result<Self> {
        let p = theta.dim();
        if n < p {
            return Err(Error::invalid("n", format!("degrees of freedom {n} must be >= p = {p}")));
        }
        let chi = (0..p)
            .map(|i| ChiSquared::new((n - i) as f64).expect("positive degrees of freedom"))
            .collect();
        let sigma_chol = theta.inverse();
        Ok(Self {
            n,
            theta,
            sigma_chol,
            chi,
        })
    }

    pub fn from_sigma(n: usize, sigma: &Matrix) -> Result<Self> {
        let c = sigma.cholesky()?;
        Self::new(n, c.inverse())
    }

    pub fn standard(n: usize, p: usize) -> Result<Self> {
        Self::new(n, LowerTriangular::identity(p))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.theta.dim()
    }

    pub fn theta(&self) -> &LowerTriangular {
        &self.theta
    }

    pub fn sigma(&self) -> Matrix {
        self.sigma_chol.gram_lower()
    }
}

/// `log C(p, n)`.
pub fn log_normalizer(p: usize, n: usize) -> f64 {
    let (pf, nf) = (p as f64, n as f64);
    let mut c = 0.5 * pf * (nf - 2.0) * std::f64::consts::LN_2
        + 0.25 * pf * (pf - 1.0) * std::f64::consts::PI.ln();
    for i in 1..=p {
        c += ln_gamma(0.5 * (nf + 1.0 - i as f64));
    }
    c
}

/// `log f_W(I | Z) = log f_W(Z | I)`: the single kernel every evaluation goes
/// through.
pub fn log_wishart_kernel(z: &LowerTriangular, n: usize) -> f64 {
    -log_normalizer(z.dim(), n) + n as f64 * z.log_det() - 0.5 * z.frobenius_sq()
}

/// `log f_W(T | Θ)`, density of `T` with respect to `γ(dT)`.
pub fn log_wishart_density_t(t: &LowerTriangular, theta: &LowerTriangular, n: usize) -> Result<f64> {
    if t.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: t.dim(),
        });
    }
    if n < t.dim() {
        return Err(Error::invalid("n", "must be >= p"));
    }
    Ok(log_wishart_kernel(&theta.mul(t), n))
}

/// `log` of the left Haar density `Π t_ii^{-i}` (1-based `i`).
pub fn haar_left_log(t: &LowerTriangular) -> f64 {
    (0..t.dim()).map(|i| -((i + 1) as f64) * t.diag(i).ln()).sum()
}

/// `log` of the right Haar density `Π z_ii^{-(p-i+1)}` (1-based `i`).
pub fn haar_right_log(z: &LowerTriangular) -> f64 {
    let p = z.dim();
    (0..p).map(|i| -((p - i) as f64) * z.diag(i).ln()).sum()
}

/// Bartlett draw at `Σ = I`: `t_ii² ~ χ²_{n-i+1}`, `t_ij ~ N(0, 1)`.
pub fn sample_bartlett_standard<R: Rng + ?Sized>(model: &WishartModel, rng: &mut R) -> LowerTriangular {
    let p = model.p();
    let mut e = vec![0.0; p * (p + 1) / 2];
    for i in 0..p {
        for j in 0..i {
            e[tri_index(i, j)] = StandardNormal.sample(rng);
        }
        e[tri_index(i, i)] = model.chi[i].sample(rng).sqrt();
    }
    LowerTriangular::from_raw(p, e)
}

/// `T` with `T Tᵀ ~ W_p(n, Σ)`: `chol(Σ) · T₀` for a standard Bartlett `T₀`.
pub fn sample_bartlett<R: Rng + ?Sized>(model: &WishartModel, rng: &mut R) -> LowerTriangular {
    let t0 = sample_bartlett_standard(model, rng);
    model.sigma_chol.mul(&t0)
}
