//! Gaussian prior sequence on `Θ` through the `ξ` coordinates.
//!
//! `ξ_ii = log θ_ii` and `ξ_ij = θ_ij / θ_ii` (`j < i`); the coordinates are
//! independent `N(0, k_ij²)` with `k_ii = k` and `k_ij = k^{(i-j)k}`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linalg::{tri_index, LowerTriangular};
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest `k` accepted by [`KSchedule`]; `k^{2k}` overflows near `k = 37`.
pub const K_MAX: f64 = 20.0;

/// Packed `ξ` vector in the order `ξ11, ξ21, ξ22, ξ31, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiVector {
    p: usize,
    values: Vec<f64>,
}

impl XiVector {
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self> {
        let expected = p * (p + 1) / 2;
        if p == 0 || values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { p, values })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            p,
            values: vec![0.0; p * (p + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[tri_index(i, j)]
    }

    /// `Θ(ξ)`: `θ_ii = e^{ξ_ii}`, `θ_ij = ξ_ij θ_ii`.
    pub fn to_theta(&self) -> LowerTriangular {
        let p = self.p;
        let mut e = vec![0.0; self.values.len()];
        for i in 0..p {
            let d = self.get(i, i).exp();
            e[tri_index(i, i)] = d;
            for j in 0..i {
                e[tri_index(i, j)] = self.get(i, j) * d;
            }
        }
        LowerTriangular::from_raw(p, e)
    }

    pub fn from_theta(theta: &LowerTriangular) -> Self {
        let p = theta.dim();
        let mut v = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            let d = theta.diag(i);
            v[tri_index(i, i)] = d.ln();
            for j in 0..i {
                v[tri_index(i, j)] = theta.get(i, j) / d;
            }
        }
        Self { p, values: v }
    }

    /// Draw from the prior `N(0, k_ij²)` (for `k = 1`: independent standard normals).
    pub fn sample<R: Rng + ?Sized>(p: usize, sched: &KSchedule, rng: &mut R) -> Self {
        let mut v = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            for j in 0..=i {
                let z: f64 = StandardNormal.sample(rng);
                v[tri_index(i, j)] = sched.k_ij(i, j) * z;
            }
        }
        Self { p, values: v }
    }
}

/// The scale `k` and its derived per-coordinate prior scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSchedule {
    k: f64,
}

impl KSchedule {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k <= K_MAX) {
            return Err(Error::invalid("k", format!("must lie in (0, {K_MAX}], got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `k_ii = k`, `k_ij = k^{(i-j)k}` for `i > j` (0-based indices).
    pub fn k_ij(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        if i == j {
            self.k
        } else {
            self.k.powf((i - j) as f64 * self.k)
        }
    }

    /// `Θ(k•ω)`: `θ_ii = exp(k_ii ω_ii)`, `θ_ij = k_ij ω_ij exp(k_ii ω_ii)`.
    pub fn theta_from_omega(&self, omega: &XiVector) -> Result<LowerTriangular> {
        let p = omega.dim();
        let mut e = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            let exponent = self.k_ij(i, i) * omega.get(i, i);
            let d = exponent.exp();
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::ScheduleOverflow { exponent });
            }
            e[tri_index(i, i)] = d;
            for j in 0..i {
                let v = self.k_ij(i, j) * omega.get(i, j) * d;
                if !v.is_finite() {
                    return Err(Error::ScheduleOverflow { exponent });
                }
                e[tri_index(i, j)] = v;
            }
        }
        Ok(LowerTriangular::from_raw(p, e))
    }

    /// `log π̄_k(ξ) = Σ_{j≤i} log[φ(ξ_ij / k_ij) / k_ij]`.
    pub fn log_prior_xi(&self, xi: &XiVector) -> f64 {
        let p = xi.dim();
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..=i {
                let kij = self.k_ij(i, j);
                let z = xi.get(i, j) / kij;
                s += -0.5 * z * z - LN_SQRT_2PI - kij.ln();
            }
        }
        s
    }

    /// `log π_k(Θ)` with respect to Lebesgue measure on the entries of `Θ`.
    pub fn log_prior_theta(&self, theta: &LowerTriangular) -> f64 {
        let p = theta.dim();
        let mut s = 0.0;
        for i in 0..p {
            let d = theta.diag(i);
            let ld = d.ln();
            let kii = self.k_ij(i, i);
            let z = ld / kii;
            s += -0.5 * z * z - LN_SQRT_2PI - kii.ln() - ld;
            for j in 0..i {
                let kij = self.k_ij(i, j);
                let z = theta.get(i, j) / (d * kij);
                s += -0.5 * z * z - LN_SQRT_2PI - kij.ln() - ld;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn zero_xi_is_identity() {
        assert_eq!(XiVector::zeros(3).to_theta(), LowerTriangular::identity(3));
    }

    #[test]
    fn xi_direct_formula() {
        let xi = XiVector::new(2, vec![0.0, 3.0, 2f64.ln()]).unwrap();
        let th = xi.to_theta();
        assert_eq!(th.get(0, 0), 1.0);
        assert!((th.get(1, 1) - 2.0).abs() < 1e-15);
        assert!((th.get(1, 0) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn xi_roundtrip_random() {
        let mut rng = substream(3, 0);
        let sched = KSchedule::new(1.0).unwrap();
        for p in 1..=4 {
            for _ in 0..25 {
                let xi = XiVector::sample(p, &sched, &mut rng);
                let back = XiVector::from_theta(&xi.to_theta());
                for (a, b) in xi.values().iter().zip(back.values()) {
                    assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn schedule_values() {
        let s = KSchedule::new(2.0).unwrap();
        assert_eq!(s.k_ij(0, 0), 2.0);
        assert_eq!(s.k_ij(1, 0), 4.0);
        assert_eq!(s.k_ij(2, 0), 16.0);
        assert!(KSchedule::new(0.0).is_err());
        assert!(KSchedule::new(21.0).is_err());
        let big = KSchedule::new(K_MAX).unwrap();
        assert!(big.k_ij(2, 0).is_finite());
        assert!(big.k_ij(1, 0) >= 1.0);
    }

    #[test]
    fn komega_examples() {
        let om = XiVector::new(3, vec![0.3, -0.2, 0.1, 0.5, 1.2, -0.4]).unwrap();
        let one = KSchedule::new(1.0).unwrap();
        assert_eq!(one.theta_from_omega(&om).unwrap(), om.to_theta());
        for k in [0.5, 3.0, 20.0] {
            let s = KSchedule::new(k).unwrap();
            assert_eq!(s.theta_from_omega(&XiVector::zeros(3)).unwrap(), LowerTriangular::identity(3));
        }
        let s = KSchedule::new(2.0).unwrap();
        let om = XiVector::new(2, vec![0.0, 0.5, 0.1]).unwrap();
        let th = s.theta_from_omega(&om).unwrap();
        assert!((th.get(1, 1) - 0.2f64.exp()).abs() < 1e-15);
        assert!((th.get(1, 0) - 2.0 * 0.2f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn komega_overflow() {
        let s = KSchedule::new(20.0).unwrap();
        let om = XiVector::new(1, vec![40.0]).unwrap();
        assert!(matches!(s.theta_from_omega(&om), Err(Error::ScheduleOverflow { .. })));
    }

    #[test]
    fn log_prior_at_zero() {
        let s = KSchedule::new(1.0).unwrap();
        let v = s.log_prior_xi(&XiVector::zeros(1));
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn prior_normalized_p1() {
        use crate::quad::{log_integral, Domain1D, QuadConfig};
        for k in [0.3, 1.0, 7.0] {
            let s = KSchedule::new(k).unwrap();
            let li = log_integral(
                |x| s.log_prior_xi(&XiVector::new(1, vec![x]).unwrap()),
                Domain1D::real_line().with_scale(k),
                &QuadConfig::default(),
            )
            .unwrap();
            assert!(li.log_value.abs() < 1e-6, "k={k}: {}", li.log_value);
        }
    }

    #[test]
    fn prior_normalized_p2_by_importance_sampling() {
        use rand_distr::{Distribution, StandardNormal};
        // proposal N(0, (2 k_ij)²) per coordinate
        let s = KSchedule::new(1.5).unwrap();
        let mut rng = substream(11, 0);
        let draws = 200_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let mut v = Vec::with_capacity(3);
            let mut log_q = 0.0;
            for (i, j) in [(0, 0), (1, 0), (1, 1)] {
                let sd = 2.0 * s.k_ij(i, j);
                let z: f64 = StandardNormal.sample(&mut rng);
                v.push(sd * z);
                log_q += -0.5 * z * z - LN_SQRT_2PI - sd.ln();
            }
            let xi = XiVector::new(2, v).unwrap();
            acc += (s.log_prior_xi(&xi) - log_q).exp();
        }
        let mass = acc / draws as f64;
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }

    /// Five-point finite-difference Jacobian determinant of Θ ↦ ξ for p = 2.
    fn fd_log_jacobian(theta: &LowerTriangular) -> f64 {
        let base = theta.entries().to_vec();
        let xi_at = |c: usize, d: f64| {
            let mut e = base.clone();
            e[c] += d;
            XiVector::from_theta(&LowerTriangular::new(2, e).unwrap())
        };
        let mut jac = [[0.0; 3]; 3];
        for c in 0..3 {
            let h = 1e-3 * base[c].abs().max(1e-2);
            let (p1, m1, p2, m2) = (xi_at(c, h), xi_at(c, -h), xi_at(c, 2.0 * h), xi_at(c, -2.0 * h));
            for r in 0..3 {
                jac[r][c] = (8.0 * (p1.values()[r] - m1.values()[r]) - (p2.values()[r] - m2.values()[r])) / (12.0 * h);
            }
        }
        let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        det.abs().ln()
    }

    #[test]
    fn theta_prior_is_jacobian_transform_of_xi_prior() {
        let mut rng = substream(12, 0);
        let one = KSchedule::new(1.0).unwrap();
        for k in [0.7, 1.0, 2.5] {
            let s = KSchedule::new(k).unwrap();
            for _ in 0..20 {
                let theta = XiVector::sample(2, &one, &mut rng).to_theta();
                if (0..2).any(|i| theta.diag(i) < 0.05) {
                    continue;
                }
                let via_xi = s.log_prior_xi(&XiVector::from_theta(&theta)) + fd_log_jacobian(&theta);
                let direct = s.log_prior_theta(&theta);
                assert!((via_xi - direct).abs() < 1e-10 * direct.abs().max(1.0), "{via_xi} vs {direct}");
            }
        }
    }
}
