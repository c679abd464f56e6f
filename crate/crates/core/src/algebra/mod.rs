//! Dense complex operators on a d-level system and the linear algebra the
//! rest of the crate is built on: Hermitian eigendecomposition, unitary
//! exponentials, operator bases, Choi matrices and process fidelity.

mod basis;
mod choi;
mod eigen;

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

pub use basis::{clock_shift_basis, gell_mann_basis, ClockShiftBasis, ObservableBasis};
pub use choi::{choi_of_channel, choi_of_unitary, process_fidelity};
pub use eigen::{expm_skew, hermitian_eigen, EigenWorkspace, HermitianEigen};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// A square complex matrix stored row-major.
///
/// The same type plays the role of observables, density matrices, unitaries
/// and Choi matrices; the role-specific invariants are checked by the
/// functions that consume it.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Builds an operator from a row-major buffer of length `dim * dim`.
    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::ContractViolation(format!(
                "buffer of length {} cannot hold a {dim}x{dim} operator",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let dim = values.len();
        let mut m = Self::zeros(dim);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * dim + i] = C64::new(v, 0.0);
        }
        m
    }

    pub fn diag(values: &[C64]) -> Self {
        let dim = values.len();
        let mut m = Self::zeros(dim);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * dim + i] = v;
        }
        m
    }

    /// The projector |v><v|.
    pub fn projector(v: &[C64]) -> Self {
        Self::from_fn(v.len(), |r, c| v[r] * v[c].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |r, c| self.data[c * d + r].conj())
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |r, c| self.data[c * d + r])
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry-wise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Frobenius distance `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest modulus of `self - self^dagger`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut err: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                err = err.max((self.data[r * d + c] - self.data[c * d + r].conj()).norm());
            }
        }
        err
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `||U^dagger U - I||_F`.
    pub fn unitarity_error(&self) -> f64 {
        (&self.adjoint() * self).distance(&Self::identity(self.dim))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (a, b) = (self.dim, other.dim);
        let n = a * b;
        Self::from_fn(n, |r, c| {
            self.data[(r / b) * a + c / b] * other.data[(r % b) * b + c % b]
        })
    }

    pub fn powi(&self, exp: u32) -> Self {
        let mut out = Self::identity(self.dim);
        for _ in 0..exp {
            out = &out * self;
        }
        out
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let d = self.dim;
        (0..d)
            .map(|r| (0..d).map(|c| self.data[r * d + c] * v[c]).sum())
            .collect()
    }

    /// `<v| self |v>` for a column vector `v`.
    pub fn expectation(&self, v: &[C64]) -> C64 {
        let d = self.dim;
        let mut acc = ZERO;
        for r in 0..d {
            let mut row = ZERO;
            for c in 0..d {
                row += self.data[r * d + c] * v[c];
            }
            acc += v[r].conj() * row;
        }
        acc
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim;
        let mut acc = ZERO;
        for r in 0..d {
            for c in 0..d {
                acc += self.data[r * d + c] * other.data[c * d + r];
            }
        }
        acc
    }

    /// Hermitian part `(A + A^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let d = self.dim;
        Self::from_fn(d, |r, c| (self.data[r * d + c] + self.data[c * d + r].conj()) * 0.5)
    }

    /// Spectral norm of a Hermitian operator (largest |eigenvalue|).
    pub fn hermitian_spectral_norm(&self) -> f64 {
        hermitian_eigen(self)
            .values
            .iter()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Inverse of an invertible Hermitian operator via its eigendecomposition.
    pub fn hermitian_inverse(&self, min_abs_eigenvalue: f64) -> Result<Self> {
        let eig = hermitian_eigen(self);
        if let Some(v) = eig.values.iter().find(|v| v.abs() < min_abs_eigenvalue) {
            return Err(Error::Invertibility(format!(
                "eigenvalue {v:e} below threshold {min_abs_eigenvalue:e}"
            )));
        }
        Ok(eig.map_values(|v| 1.0 / v))
    }
}

impl Index<(usize, usize)> for Operator {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for Operator {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &Operator {
    type Output = Operator;

    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut out = Operator::zeros(self.dim);
        matmul_into(&self.data, &rhs.data, self.dim, &mut out.data);
        out
    }
}

impl Add for &Operator {
    type Output = Operator;

    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;

    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  [")?;
            for c in 0..self.dim {
                let z = self.data[r * self.dim + c];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f, " ]")?;
        }
        Ok(())
    }
}

/// Serialized as a row-major array of rows, each entry an `[re, im]` pair.
impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut rows = serializer.serialize_seq(Some(self.dim))?;
        for r in 0..self.dim {
            let row: Vec<[f64; 2]> = self.data[r * self.dim..(r + 1) * self.dim]
                .iter()
                .map(|z| [z.re, z.im])
                .collect();
            rows.serialize_element(&row)?;
        }
        rows.end()
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(de::Error::custom("operator rows must form a square matrix"));
        }
        let data = rows
            .into_iter()
            .flatten()
            .map(|[re, im]| C64::new(re, im))
            .collect();
        Ok(Operator { dim, data })
    }
}

/// `out = a * b` for row-major `d x d` buffers.
#[inline]
pub(crate) fn matmul_into(a: &[C64], b: &[C64], d: usize, out: &mut [C64]) {
    for r in 0..d {
        let row = &a[r * d..(r + 1) * d];
        for c in 0..d {
            let mut acc = ZERO;
            for k in 0..d {
                acc += row[k] * b[k * d + c];
            }
            out[r * d + c] = acc;
        }
    }
}

/// Embeds a 2x2 unitary into levels `(p, q)` of a `d`-level identity.
pub fn embed_two_level(gate2: &Operator, p: usize, q: usize, d: usize) -> Result<Operator> {
    if gate2.dim() != 2 {
        return Err(Error::ContractViolation(format!(
            "expected a 2x2 gate, got {0}x{0}",
            gate2.dim()
        )));
    }
    if p >= q || q >= d {
        return Err(Error::Index(format!(
            "levels ({p}, {q}) invalid for d = {d}; need p < q < d"
        )));
    }
    if !gate2.is_unitary(1e-9) {
        return Err(Error::ContractViolation("embedded gate is not unitary".into()));
    }
    let mut out = Operator::identity(d);
    out[(p, p)] = gate2[(0, 0)];
    out[(p, q)] = gate2[(0, 1)];
    out[(q, p)] = gate2[(1, 0)];
    out[(q, q)] = gate2[(1, 1)];
    Ok(out)
}

/// The truncated annihilation operator `a_d = sum_j sqrt(j) |j-1><j|`.
pub fn annihilation(d: usize) -> Operator {
    let mut a = Operator::zeros(d);
    for j in 1..d {
        a[(j - 1, j)] = C64::new((j as f64).sqrt(), 0.0);
    }
    a
}

pub fn pauli_x() -> Operator {
    Operator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn pauli_y() -> Operator {
    Operator::from_fn(2, |r, c| match (r, c) {
        (0, 1) => -I,
        (1, 0) => I,
        _ => ZERO,
    })
}

pub fn pauli_z() -> Operator {
    Operator::diag_real(&[1.0, -1.0])
}

pub fn hadamard() -> Operator {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Operator::from_real_rows(&[&[h, h], &[h, -h]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_x_into_lower_qutrit_subspace() {
        let x01 = embed_two_level(&pauli_x(), 0, 1, 3).unwrap();
        let expected = Operator::from_real_rows(&[
            &[0.0, 1.0, 0.0],
            &[1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0],
        ]);
        assert_eq!(x01, expected);
    }

    #[test]
    fn embed_identity_is_identity() {
        let id = embed_two_level(&Operator::identity(2), 1, 2, 3).unwrap();
        assert_eq!(id, Operator::identity(3));
    }

    #[test]
    fn embed_hadamard_touches_only_outer_levels() {
        let h02 = embed_two_level(&hadamard(), 0, 2, 3).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h02[(0, 0)].re - h).abs() < 1e-15);
        assert!((h02[(0, 2)].re - h).abs() < 1e-15);
        assert!((h02[(2, 2)].re + h).abs() < 1e-15);
        assert_eq!(h02[(1, 1)], ONE);
        assert_eq!(h02[(0, 1)], ZERO);
        assert_eq!(h02[(1, 2)], ZERO);
        assert!(h02.is_unitary(1e-12));
    }

    #[test]
    fn embed_rejects_bad_levels() {
        assert!(matches!(
            embed_two_level(&pauli_x(), 1, 1, 3),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            embed_two_level(&pauli_x(), 0, 3, 3),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn qutrit_ladder_operator() {
        let a = annihilation(3);
        let x = &a + &a.adjoint();
        assert_eq!(x[(0, 1)].re, 1.0);
        assert!((x[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(x[(0, 2)], ZERO);
    }

    #[test]
    fn kron_of_identities() {
        let k = Operator::identity(2).kron(&Operator::identity(3));
        assert_eq!(k, Operator::identity(6));
        let xz = pauli_x().kron(&pauli_z());
        assert_eq!(xz[(0, 2)].re, 1.0);
        assert_eq!(xz[(1, 3)].re, -1.0);
    }

    #[test]
    fn serde_pairs_row_major() {
        let m = Operator::from_fn(2, |r, c| C64::new(r as f64, c as f64));
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[[0.0,0.0],[0.0,1.0]],[[1.0,0.0],[1.0,1.0]]]");
        let back: Operator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
