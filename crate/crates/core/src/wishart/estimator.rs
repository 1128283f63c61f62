//! Covariance estimators under Stein loss.
//!
//! [`sigma0_hat`] is the best equivariant estimator `T diag(d) Tᵀ`. The Bayes
//! rules of the Gaussian prior sequence have the ratio form
//! `(E[ΘᵀΘ])⁻¹` under the posterior, estimated here by self-normalized
//! importance sampling. Weighted sums are accumulated in the precision domain
//! and inverted once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{haar_left_log, log_wishart_kernel, sample_bartlett_standard, WishartModel};
use super::linalg::{LowerTriangular, Matrix};
use super::prior::{KSchedule, XiVector};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Minimum number of importance draws.
pub const MIN_DRAWS: usize = 1_000;
/// Effective sample sizes below this flag the estimate as degenerate.
pub const MIN_ESS: f64 = 50.0;
/// Draws per substream block.
const BLOCK: usize = 1_024;

/// James–Stein constants `d_i = 1/(n + p - 2i + 1)`, `i = 1..p`.
pub fn james_stein_constants(n: usize, p: usize) -> Vec<f64> {
    (1..=p).map(|i| 1.0 / (n + p + 1 - 2 * i) as f64).collect()
}

/// `Σ̂₀ = T diag(d_1, ..., d_p) Tᵀ`.
pub fn sigma0_hat(t: &LowerTriangular, n: usize) -> Result<Matrix> {
    let p = t.dim();
    if n < p {
        return Err(Error::invalid("n", format!("must be >= p = {p}")));
    }
    Ok(t.sandwich(&Matrix::from_diag(&james_stein_constants(n, p))))
}

/// The unbiased estimator `V / n`.
pub fn mle(t: &LowerTriangular, n: usize) -> Result<Matrix> {
    if n < t.dim() {
        return Err(Error::invalid("n", "must be >= p"));
    }
    Ok(t.gram_lower().scaled(1.0 / n as f64))
}

/// Importance proposal for the Bayes integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// Draw `Θ` from the prior; weights are the likelihood.
    #[default]
    Prior,
    /// Draw `Θ` from the generalized posterior under the left Haar prior
    /// (`Θ = Z T⁻¹`, `Z` standard Bartlett); weights are `π_k / γ`.
    InvariantPosterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub proposal: Proposal,
}

impl McConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self {
            draws,
            seed,
            proposal: Proposal::Prior,
        }
    }

    pub fn with_proposal(mut self, proposal: Proposal) -> Self {
        self.proposal = proposal;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.draws < MIN_DRAWS {
            return Err(Error::invalid("draws", format!("must be >= {MIN_DRAWS}, got {}", self.draws)));
        }
        Ok(())
    }
}

/// Importance-sampling estimate with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    pub estimate: Matrix,
    /// `(Σw)² / Σw²`.
    pub ess: f64,
    pub draws: usize,
    pub degenerate: bool,
}

impl ImportanceEstimate {
    /// Error out when the sample is degenerate.
    pub fn strict(self) -> Result<Self> {
        if self.degenerate {
            Err(Error::DegenerateImportanceSample {
                ess: self.ess,
                min: MIN_ESS,
            })
        } else {
            Ok(self)
        }
    }
}

/// Block partial sums scaled by `exp(-max)`.
#[derive(Debug, Clone)]
struct WeightedSums {
    max: f64,
    w: f64,
    w2: f64,
    m: Matrix,
}

impl WeightedSums {
    fn empty(p: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            w: 0.0,
            w2: 0.0,
            m: Matrix::zeros(p),
        }
    }

    fn push(&mut self, log_w: f64, gram: &Matrix) {
        if log_w == f64::NEG_INFINITY {
            return;
        }
        if log_w > self.max {
            let r = (self.max - log_w).exp();
            self.w *= r;
            self.w2 *= r * r;
            self.m = self.m.scaled(r);
            self.max = log_w;
        }
        let w = (log_w - self.max).exp();
        self.w += w;
        self.w2 += w * w;
        self.m.add_scaled(gram, w);
    }

    fn merge(a: Self, b: Self) -> Self {
        if b.max == f64::NEG_INFINITY {
            return a;
        }
        if a.max == f64::NEG_INFINITY {
            return b;
        }
        let max = a.max.max(b.max);
        let (ra, rb) = ((a.max - max).exp(), (b.max - max).exp());
        let mut m = a.m.scaled(ra);
        m.add_scaled(&b.m, rb);
        Self {
            max,
            w: a.w * ra + b.w * rb,
            w2: a.w2 * ra * ra + b.w2 * rb * rb,
            m,
        }
    }

    fn merge_pairwise(mut blocks: Vec<Self>) -> Self {
        if blocks.len() <= 1 {
            return blocks.pop().expect("at least one block");
        }
        let right = blocks.split_off(blocks.len() / 2);
        Self::merge(Self::merge_pairwise(blocks), Self::merge_pairwise(right))
    }

    fn finish(self, draws: usize) -> Result<ImportanceEstimate> {
        if !(self.w > 0.0) {
            return Err(Error::EmptyMass);
        }
        let mean = self.m.scaled(1.0 / self.w).symmetrized();
        let estimate = mean.spd_inverse()?;
        let ess = self.w * self.w / self.w2;
        Ok(ImportanceEstimate {
            estimate,
            ess,
            draws,
            degenerate: ess < MIN_ESS,
        })
    }
}

/// Runs `draw` over all draw indices in fixed blocks; block `b` uses
/// substream `b` of `seed`. Independent of the rayon worker count.
fn run_blocks<F>(p: usize, mc: &McConfig, draw: F) -> Result<ImportanceEstimate>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<(f64, Matrix)> + Sync,
{
    mc.validate()?;
    let nblocks = mc.draws.div_ceil(BLOCK);
    let blocks: Vec<WeightedSums> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(mc.seed, b as u64);
            let count = BLOCK.min(mc.draws - b * BLOCK);
            let mut acc = WeightedSums::empty(p);
            for _ in 0..count {
                let (lw, gram) = draw(&mut rng)?;
                acc.push(lw, &gram);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    WeightedSums::merge_pairwise(blocks).finish(mc.draws)
}

/// `δ*_k(L | Θ)`: the Bayes rule in the frame shifted by `Θ`,
/// `(∫ YᵀY f_W(L|Y) π_k(YΘ) dY)⁻¹ ∫ f_W(L|Y) π_k(YΘ) dY`.
fn shifted_bayes(
    l: &LowerTriangular,
    shift: &LowerTriangular,
    n: usize,
    sched: &KSchedule,
    mc: &McConfig,
) -> Result<ImportanceEstimate> {
    let p = l.dim();
    if shift.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: shift.dim(),
        });
    }
    if n < p {
        return Err(Error::invalid("n", format!("must be >= p = {p}")));
    }
    match mc.proposal {
        Proposal::Prior => {
            // Z ~ π_k, Y = Z Θ⁻¹ has density ∝ π_k(YΘ)
            let shift_inv = shift.inverse();
            run_blocks(p, mc, |rng| {
                let z = XiVector::sample(p, sched, rng).to_theta();
                let y = z.mul(&shift_inv);
                let lw = log_wishart_kernel(&y.mul(l), n);
                Ok((lw, y.gram_upper()))
            })
        }
        Proposal::InvariantPosterior => {
            // Y = Z L⁻¹ has density ∝ f_W(L|Y) γ(Y)
            let model = WishartModel::standard(n, p)?;
            let l_inv = l.inverse();
            run_blocks(p, mc, |rng| {
                let z = sample_bartlett_standard(&model, rng);
                let y = z.mul(&l_inv);
                let lw = sched.log_prior_theta(&y.mul(shift)) - haar_left_log(&y);
                Ok((lw, y.gram_upper()))
            })
        }
    }
}

/// Bayes estimator of `Σ` under the prior `π_k` and Stein loss.
pub fn bayes_cov_estimator(
    t: &LowerTriangular,
    n: usize,
    sched: &KSchedule,
    mc: &McConfig,
) -> Result<ImportanceEstimate> {
    shifted_bayes(t, &LowerTriangular::identity(t.dim()), n, sched, mc)
}

/// `δ*_k(L | Θ(k•ω))`, which tends to `Σ̂₀(L)` as `k → ∞`.
pub fn delta_star_cov(
    l: &LowerTriangular,
    omega: &XiVector,
    n: usize,
    sched: &KSchedule,
    mc: &McConfig,
) -> Result<ImportanceEstimate> {
    if omega.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            actual: omega.dim(),
        });
    }
    let shift = sched.theta_from_omega(omega)?;
    shifted_bayes(l, &shift, n, sched, mc)
}

/// Monte Carlo estimate of
/// `(∫ ZᵀZ f_W(Z|I) Π z_ii^{p-2i+1} ν(dZ))⁻¹ ∫ f_W(Z|I) Π z_ii^{p-2i+1} ν(dZ)`
/// with standard Bartlett draws as the proposal. Equals `diag(d_i)`.
pub fn invariant_prior_constant_check(n: usize, p: usize, mc: &McConfig) -> Result<ImportanceEstimate> {
    if p == 0 || p > 3 {
        return Err(Error::Unsupported(format!("constant check needs 1 <= p <= 3, got {p}")));
    }
    let model = WishartModel::standard(n, p)?;
    run_blocks(p, mc, |rng| {
        let z = sample_bartlett_standard(&model, rng);
        // target Π z_ii^{p-2i+1} ν(dZ) over proposal γ(dZ)
        let tilt: f64 = (0..p).map(|i| (p as f64 - 2.0 * i as f64 - 1.0) * z.diag(i).ln()).sum();
        let lw = tilt + super::density::haar_right_log(&z) - haar_left_log(&z);
        Ok((lw, z.gram_upper()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn james_stein_constant_examples() {
        assert_eq!(james_stein_constants(4, 1), vec![0.25]);
        assert_eq!(james_stein_constants(5, 2), vec![1.0 / 6.0, 0.25]);
        assert_eq!(james_stein_constants(6, 3), vec![1.0 / 8.0, 1.0 / 6.0, 0.25]);
    }

    #[test]
    fn sigma0_examples() {
        let t = LowerTriangular::new(1, vec![3.0]).unwrap();
        assert!((sigma0_hat(&t, 4).unwrap()[(0, 0)] - 9.0 / 4.0).abs() < 1e-15);
        let s = sigma0_hat(&LowerTriangular::identity(2), 5).unwrap();
        assert!(s.max_abs_diff(&Matrix::from_diag(&[1.0 / 6.0, 0.25])) < 1e-15);
        assert!(sigma0_hat(&LowerTriangular::identity(3), 2).is_err());
    }

    #[test]
    fn draws_below_minimum_rejected() {
        let s = KSchedule::new(1.0).unwrap();
        let r = bayes_cov_estimator(&LowerTriangular::identity(1), 4, &s, &McConfig::new(10, 1));
        assert!(matches!(r, Err(Error::InvalidParameter { name: "draws", .. })));
    }

    #[test]
    fn seed_determinism() {
        let s = KSchedule::new(2.0).unwrap();
        let t = LowerTriangular::new(2, vec![1.5, 0.3, 0.8]).unwrap();
        let mc = McConfig::new(5_000, 42);
        let a = bayes_cov_estimator(&t, 5, &s, &mc).unwrap();
        let b = bayes_cov_estimator(&t, 5, &s, &mc).unwrap();
        assert_eq!(a, b);
        let c = bayes_cov_estimator(&t, 5, &s, &McConfig::new(5_000, 43)).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn zero_omega_is_bayes_estimator() {
        let mut rng = substream(5, 0);
        let model = WishartModel::standard(5, 2).unwrap();
        let l = super::super::density::sample_bartlett(&model, &mut rng);
        for proposal in [Proposal::Prior, Proposal::InvariantPosterior] {
            for k in [0.5, 3.0] {
                let s = KSchedule::new(k).unwrap();
                let mc = McConfig::new(2_000, 9).with_proposal(proposal);
                let a = bayes_cov_estimator(&l, 5, &s, &mc).unwrap();
                let b = delta_star_cov(&l, &XiVector::zeros(2), 5, &s, &mc).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn constant_check_rejects_large_p() {
        assert!(matches!(
            invariant_prior_constant_check(8, 4, &McConfig::new(1_000, 1)),
            Err(Error::Unsupported(_))
        ));
    }

    /// `δ*_k(L | θ*)` for p = 1 by the trapezoid rule in `u = log y`:
    /// `∫ f_W(L|y) π_k(yθ*) dy / ∫ y² f_W(L|y) π_k(yθ*) dy`.
    fn p1_oracle(l: f64, n: usize, k: f64, theta_star: f64) -> f64 {
        let nf = n as f64;
        // log of f_W(L|y) π_k(yθ*) · y (Jacobian of y = e^u), constants dropped
        let lg = |u: f64| {
            let z = u + l.ln();
            let w = u + theta_star.ln();
            nf * z - 0.5 * (2.0 * z).exp() - 0.5 * (w / k).powi(2) - w + u
        };
        let (lo, hi, m) = (-40.0, 40.0, 400_000);
        let h = (hi - lo) / m as f64;
        let vals: Vec<f64> = (0..=m).map(|i| lg(lo + i as f64 * h)).collect();
        let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut a, mut b) = (0.0, 0.0);
        for (i, v) in vals.iter().enumerate() {
            let u = lo + i as f64 * h;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 } * (v - mx).exp();
            a += w;
            b += w * (2.0 * u).exp();
        }
        a / b
    }

    fn p1(v: f64) -> LowerTriangular {
        LowerTriangular::new(1, vec![v.sqrt()]).unwrap()
    }

    #[test]
    fn bayes_cov_large_k_approaches_sigma0() {
        let s = KSchedule::new(20.0).unwrap();
        let est = bayes_cov_estimator(&p1(4.0), 4, &s, &McConfig::new(200_000, 3)).unwrap();
        assert!(!est.degenerate, "ess {}", est.ess);
        assert!((est.estimate[(0, 0)] - 1.0).abs() < 0.05, "{:?}", est);
    }

    #[test]
    fn bayes_cov_small_k_hugs_identity() {
        let s = KSchedule::new(0.05).unwrap();
        for v in [0.5, 2.0] {
            let est = bayes_cov_estimator(&p1(v), 4, &s, &McConfig::new(20_000, 4)).unwrap();
            let d = est.estimate[(0, 0)];
            assert!((d - 1.0).abs() < 0.15, "V={v}: {d}");
            assert!((d / p1_oracle(v.sqrt(), 4, 0.05, 1.0) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn proposals_agree_with_quadrature_oracle() {
        let l = 1.3;
        for k in [0.5, 2.0, 8.0] {
            let s = KSchedule::new(k).unwrap();
            let oracle = p1_oracle(l, 4, k, 1.0);
            for proposal in [Proposal::Prior, Proposal::InvariantPosterior] {
                let mc = McConfig::new(100_000, 5).with_proposal(proposal);
                let est = bayes_cov_estimator(&p1(l * l), 4, &s, &mc).unwrap();
                let d = est.estimate[(0, 0)];
                assert!((d / oracle - 1.0).abs() < 0.02, "k={k} {proposal:?}: {d} vs {oracle}");
            }
        }
    }

    #[test]
    fn delta_star_converges_to_sigma0() {
        let l = LowerTriangular::new(1, vec![2.0]).unwrap();
        let target = sigma0_hat(&l, 4).unwrap()[(0, 0)];
        let omega = XiVector::new(1, vec![0.3]).unwrap();
        let mut prev = f64::INFINITY;
        for k in [2.0, 5.0, 10.0] {
            let s = KSchedule::new(k).unwrap();
            let oracle = p1_oracle(2.0, 4, k, (0.3 * k as f64).exp());
            let est = delta_star_cov(&l, &omega, 4, &s, &McConfig::new(100_000, 6)).unwrap();
            let d = est.estimate[(0, 0)];
            assert!((d / oracle - 1.0).abs() < 0.01, "k={k}: {d} vs {oracle}");
            let gap = (d - target).abs() / target;
            assert!(gap < prev, "k={k}: {gap} >= {prev}");
            prev = gap;
        }
        assert!(prev < 0.1, "{prev}");
    }

    #[test]
    fn delta_star_nearly_equivariant_at_k10() {
        let s = KSchedule::new(10.0).unwrap();
        let omega = XiVector::new(2, vec![0.1, -0.2, 0.05]).unwrap();
        let l = LowerTriangular::new(2, vec![2.2, 0.4, 1.7]).unwrap();
        let a = LowerTriangular::new(2, vec![1.5, -0.7, 0.8]).unwrap();
        let mc = McConfig::new(50_000, 8).with_proposal(Proposal::InvariantPosterior);
        let d = delta_star_cov(&l, &omega, 5, &s, &mc).unwrap();
        let da = delta_star_cov(&a.mul(&l), &omega, 5, &s, &mc).unwrap();
        let want = a.sandwich(&d.estimate);
        let rel = da.estimate.max_abs_diff(&want) / want.max_abs();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn james_stein_constants_by_monte_carlo() {
        for (n, p, tol) in [(4, 1, 0.01), (5, 2, 0.01), (6, 3, 0.02)] {
            let est = invariant_prior_constant_check(n, p, &McConfig::new(100_000, 10)).unwrap();
            assert!((est.ess - 100_000.0).abs() < 1e-6);
            let d = james_stein_constants(n, p);
            for i in 0..p {
                assert!((est.estimate[(i, i)] - d[i]).abs() < tol, "({n},{p}) i={i}");
                for j in 0..i {
                    assert!(est.estimate[(i, j)].abs() < tol);
                }
            }
        }
    }

    #[test]
    fn sigma0_equivariance_random() {
        let mut rng = substream(13, 0);
        let one = KSchedule::new(1.0).unwrap();
        for p in 1..=4 {
            for _ in 0..25 {
                let a = XiVector::sample(p, &one, &mut rng).to_theta();
                let t = XiVector::sample(p, &one, &mut rng).to_theta();
                let n = p + 3;
                let lhs = sigma0_hat(&a.mul(&t), n).unwrap();
                let rhs = a.sandwich(&sigma0_hat(&t, n).unwrap());
                assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * rhs.max_abs().max(1.0));
            }
        }
    }
}
