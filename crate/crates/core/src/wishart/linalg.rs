//! Small dense kernels for the lower-triangular group `T⁺`.
//!
//! [`Matrix`] is a square row-major matrix; [`LowerTriangular`] stores the
//! `p(p+1)/2` lower entries packed row by row (`t11, t21, t22, t31, ...`) and
//! keeps its diagonal strictly positive, so every value is a group element.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    p: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(p: usize) -> Self {
        Self {
            p,
            data: vec![0.0; p * p],
        }
    }

    pub fn identity(p: usize) -> Self {
        let mut m = Self::zeros(p);
        for i in 0..p {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let mut data = Vec::with_capacity(p * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { p, data })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.p.max(1)).map(<[f64]>::to_vec).take(self.p).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.p);
        for i in 0..self.p {
            for j in 0..self.p {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.p, other.p, "matrix dimensions differ");
        let p = self.p;
        let mut out = Self::zeros(p);
        for i in 0..p {
            for k in 0..p {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..p {
                    out.data[i * p + j] += a * other.data[k * p + j];
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: self.p,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.p).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.p).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= rel_tol * scale))
    }

    /// `0.5 (M + Mᵀ)`.
    pub fn symmetrized(&self) -> Self {
        let mut s = self.clone();
        for i in 0..self.p {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Cholesky factor `T` with `T Tᵀ = self`.
    pub fn cholesky(&self) -> Result<LowerTriangular> {
        let p = self.p;
        if p == 0 {
            return Err(Error::invalid("matrix", "empty"));
        }
        if self.data.iter().any(|v| !v.is_finite()) || !self.is_symmetric(1e-10) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut l = vec![0.0; p * (p + 1) / 2];
        for j in 0..p {
            let rj = tri_index(j, 0);
            let ajj = self[(j, j)];
            let d = ajj - l[rj..rj + j].iter().map(|v| v * v).sum::<f64>();
            if !(d > (p as f64) * f64::EPSILON * ajj.abs()) {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = d.sqrt();
            l[rj + j] = ljj;
            for i in j + 1..p {
                let ri = tri_index(i, 0);
                let s: f64 = (0..j).map(|k| l[ri + k] * l[rj + k]).sum();
                l[ri + j] = (self[(i, j)] - s) / ljj;
            }
        }
        Ok(LowerTriangular { p, entries: l })
    }

    /// Inverse of a symmetric positive-definite matrix.
    pub fn spd_inverse(&self) -> Result<Matrix> {
        let t = self.cholesky()?;
        let ti = t.inverse();
        // (T Tᵀ)⁻¹ = T⁻ᵀ T⁻¹
        Ok(ti.gram_upper())
    }

    pub fn log_det_spd(&self) -> Result<f64> {
        Ok(2.0 * self.cholesky()?.log_det())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.p + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.p + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.rows()
    }
}

#[inline]
pub(crate) fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Element of `T⁺`: lower triangular with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PackedTriangular", into = "PackedTriangular")]
pub struct LowerTriangular {
    p: usize,
    entries: Vec<f64>,
}

/// Wire form of [`LowerTriangular`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackedTriangular {
    pub p: usize,
    pub entries: Vec<f64>,
}

impl TryFrom<PackedTriangular> for LowerTriangular {
    type Error = Error;
    fn try_from(w: PackedTriangular) -> Result<Self> {
        LowerTriangular::new(w.p, w.entries)
    }
}

impl From<LowerTriangular> for PackedTriangular {
    fn from(t: LowerTriangular) -> Self {
        PackedTriangular {
            p: t.p,
            entries: t.entries,
        }
    }
}

impl LowerTriangular {
    pub fn new(p: usize, entries: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("p", "must be positive"));
        }
        let expected = p * (p + 1) / 2;
        if entries.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: entries.len(),
            });
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("entries", format!("non-finite entry {bad}")));
        }
        for i in 0..p {
            let d = entries[tri_index(i, i)];
            if !(d > 0.0) {
                return Err(Error::NonPositiveDiagonal { index: i, value: d });
            }
        }
        Ok(Self { p, entries })
    }

    /// Lower triangle of a square matrix (entries above the diagonal ignored).
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let p = m.dim();
        let mut e = Vec::with_capacity(p * (p + 1) / 2);
        for i in 0..p {
            for j in 0..=i {
                e.push(m[(i, j)]);
            }
        }
        Self::new(p, e)
    }

    pub fn identity(p: usize) -> Self {
        let mut entries = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            entries[tri_index(i, i)] = 1.0;
        }
        Self { p, entries }
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        let p = d.len();
        let mut entries = vec![0.0; p * (p + 1) / 2];
        for (i, &v) in d.iter().enumerate() {
            entries[tri_index(i, i)] = v;
        }
        Self::new(p, entries)
    }

    /// Unchecked constructor for entries known to form a group element.
    pub(crate) fn from_raw(p: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), p * (p + 1) / 2);
        Self { p, entries }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.entries[tri_index(i, j)]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.entries[tri_index(i, i)]
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.p);
        for i in 0..self.p {
            for j in 0..=i {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    /// Group product `self · other`.
    pub fn mul(&self, other: &LowerTriangular) -> LowerTriangular {
        assert_eq!(self.p, other.p, "dimensions differ");
        let p = self.p;
        let mut e = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            for j in 0..=i {
                e[tri_index(i, j)] = (j..=i).map(|k| self.get(i, k) * other.get(k, j)).sum();
            }
        }
        LowerTriangular { p, entries: e }
    }

    /// Group inverse by forward substitution.
    pub fn inverse(&self) -> LowerTriangular {
        let p = self.p;
        let mut e = vec![0.0; p * (p + 1) / 2];
        for j in 0..p {
            e[tri_index(j, j)] = 1.0 / self.diag(j);
            for i in j + 1..p {
                let s: f64 = (j..i).map(|k| self.get(i, k) * e[tri_index(k, j)]).sum();
                e[tri_index(i, j)] = -s / self.diag(i);
            }
        }
        LowerTriangular { p, entries: e }
    }

    /// `T Tᵀ`.
    pub fn gram_lower(&self) -> Matrix {
        let p = self.p;
        let mut m = Matrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// `Tᵀ T`.
    pub fn gram_upper(&self) -> Matrix {
        let p = self.p;
        let mut m = Matrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                let v: f64 = (i..p).map(|k| self.get(k, i) * self.get(k, j)).sum();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// `T M Tᵀ`.
    pub fn sandwich(&self, m: &Matrix) -> Matrix {
        let t = self.to_matrix();
        t.matmul(m).matmul(&t.transpose())
    }

    /// `log |T| = Σ log t_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.p).map(|i| self.diag(i).ln()).sum()
    }

    /// `tr(T Tᵀ)`, the squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_identity() {
        assert_eq!(Matrix::identity(3).cholesky().unwrap(), LowerTriangular::identity(3));
    }

    #[test]
    fn cholesky_hand_example() {
        let v = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let t = v.cholesky().unwrap();
        assert_eq!(t.entries(), &[2.0, 1.0, 1.0]);
        assert!(t.gram_lower().max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn singular_matrix_rejected() {
        let v = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(v.cholesky().unwrap_err(), Error::NotPositiveDefinite);
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(v.cholesky().unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn packed_validation() {
        assert!(matches!(
            LowerTriangular::new(2, vec![1.0, 0.0, -1.0]),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
        assert!(matches!(
            LowerTriangular::new(2, vec![1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn inverse_and_product() {
        let t = LowerTriangular::new(3, vec![2.0, 0.5, 3.0, -1.0, 0.25, 0.7]).unwrap();
        let id = t.mul(&t.inverse());
        assert!(id.to_matrix().max_abs_diff(&Matrix::identity(3)) < 1e-15);
        let g = t.gram_upper();
        let explicit = t.to_matrix().transpose().matmul(&t.to_matrix());
        assert!(g.max_abs_diff(&explicit) < 1e-14);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let v = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let vi = v.spd_inverse().unwrap();
        assert!(v.matmul(&vi).max_abs_diff(&Matrix::identity(2)) < 1e-14);
        assert!((v.log_det_spd().unwrap() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn json_shapes() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "[[1.0,2.0],[3.0,4.0]]");
        let t = LowerTriangular::new(2, vec![1.0, 6.0, 2.0]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"p":2,"entries":[1.0,6.0,2.0]}"#);
        let back: LowerTriangular = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<LowerTriangular>(r#"{"p":2,"entries":[1.0,6.0,0.0]}"#).is_err());
        assert!(serde_json::from_str::<Matrix>("[[1.0,2.0],[3.0]]").is_err());
    }
}
