//! Matrix calculus on SU(N) and its Lie algebra su(N).
//!
//! Everything here is double precision and allocation-light. The ambient
//! space is M_N(C) with the real-valued Frobenius pairing
//! `<A, B> = tr(B* A)`, for which the bi-invariant metric on SU(N) is the
//! restriction. Tangent vectors at `U` are written `X U` with `X` in su(N).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Residual above which `hamiltonian` projects its velocity argument before use.
pub const TANGENCY_TOL: f64 = 1e-10;

/// Eigenvalue phases closer than this to +-pi are treated as cut-locus hits.
pub const LOG_GUARD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SunError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix has {got} entries, expected {expected}")]
    EntryCount { expected: usize, got: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is singular; cannot retract onto SU(N)")]
    Singular,
    #[error("not in SU(N): unitarity residual {unitarity:.3e}, |det - 1| = {det:.3e}")]
    NotSpecialUnitary { unitarity: f64, det: f64 },
    #[error("not in su(N): skew residual {skew:.3e}, |tr| = {trace:.3e}")]
    NotInAlgebra { skew: f64, trace: f64 },
    #[error(
        "logarithm at the cut locus: eigenvalue phase {phase:.6} is within {guard:e} of pi; \
         subdivide the knot sequence so consecutive knots are closer"
    )]
    CutLocus { phase: f64, guard: f64 },
    #[error("eigen-decomposition did not converge")]
    NoConvergence,
}

/// Dense square complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    inner: DMatrix<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{:?}", self.to_rows())
    }
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { inner: DMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: DMatrix::identity(n, n) }
    }

    /// Build from row-major entries.
    pub fn from_row_major(n: usize, entries: &[Complex64]) -> Result<Self, SunError> {
        if n == 0 {
            return Err(SunError::EmptyMatrix);
        }
        if entries.len() != n * n {
            return Err(SunError::EntryCount { expected: n * n, got: entries.len() });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SunError::NonFinite);
        }
        Ok(Self { inner: DMatrix::from_row_slice(n, n, entries) })
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self { inner: DMatrix::from_fn(n, n, f) }
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { diag[i] } else { Complex64::new(0.0, 0.0) })
    }

    pub fn from_nalgebra(inner: DMatrix<Complex64>) -> Self {
        assert!(inner.is_square(), "ComplexMatrix must be square");
        Self { inner }
    }

    pub fn as_nalgebra(&self) -> &DMatrix<Complex64> {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.inner[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.inner[(i, j)] = z;
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<Complex64> {
        let n = self.dim();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.inner[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.inner[(i, j)]).collect()).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self { inner: self.inner.adjoint() }
    }

    pub fn trace(&self) -> Complex64 {
        self.inner.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { inner: &self.inner * Complex64::new(s, 0.0) }
    }

    pub fn scale_c(&self, s: Complex64) -> Self {
        Self { inner: &self.inner * s }
    }

    /// `self + s * other`, in place.
    pub fn axpy(&mut self, s: f64, other: &ComplexMatrix) {
        let s = Complex64::new(s, 0.0);
        for (a, b) in self.inner.iter_mut().zip(other.inner.iter()) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Determinant via LU with partial pivoting.
    pub fn det(&self) -> Complex64 {
        self.inner.clone().lu().determinant()
    }

    pub fn try_inverse(&self) -> Option<Self> {
        self.inner.clone().try_inverse().map(|inner| Self { inner })
    }

    /// Real and imaginary parts of entry `k` in row-major order, for the
    /// component-wise linear solves.
    pub fn component(&self, k: usize) -> f64 {
        let n = self.dim();
        let e = k / 2;
        let z = self.inner[(e / n, e % n)];
        if k % 2 == 0 {
            z.re
        } else {
            z.im
        }
    }

    pub fn set_component(&mut self, k: usize, value: f64) {
        let n = self.dim();
        let e = k / 2;
        let z = &mut self.inner[(e / n, e % n)];
        if k % 2 == 0 {
            z.re = value;
        } else {
            z.im = value;
        }
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix { inner: &self.inner + &rhs.inner }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix { inner: &self.inner - &rhs.inner }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix { inner: &self.inner * &rhs.inner }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        ComplexMatrix { inner: -&self.inner }
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.inner += &rhs.inner;
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        self.inner -= &rhs.inner;
    }
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.row_major().into_iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        let n = (pairs.len() as f64).sqrt().round() as usize;
        let entries: Vec<Complex64> = pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        ComplexMatrix::from_row_major(n, &entries).map_err(serde::de::Error::custom)
    }
}

fn check_dims(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<(), SunError> {
    if a.dim() != b.dim() {
        Err(SunError::DimensionMismatch(a.dim(), b.dim()))
    } else {
        Ok(())
    }
}

/// `tr(B* A)`.
pub fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<Complex64, SunError> {
    check_dims(a, b)?;
    Ok(inner_unchecked(a, b))
}

pub(crate) fn inner_unchecked(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    // tr(B* A) = sum_ij conj(B_ij) A_ij
    a.inner.iter().zip(b.inner.iter()).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + y.conj() * x)
}

/// Real part of the Frobenius pairing; the Riemannian metric on tangent vectors.
pub fn real_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    inner_unchecked(a, b).re
}

pub fn frob_norm(a: &ComplexMatrix) -> f64 {
    a.inner.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frob_norm_sqr(a: &ComplexMatrix) -> f64 {
    a.inner.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// `(A - A*) / 2`.
pub fn skew(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    ComplexMatrix::from_fn(n, |i, j| (a.get(i, j) - a.get(j, i).conj()) * 0.5)
}

/// Skew-Hermitian, traceless part of `A`.
pub fn skew0(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let mut s = skew(a);
    let shift = s.trace() / n as f64;
    for i in 0..n {
        let z = s.get(i, i) - shift;
        s.set(i, i, z);
    }
    s
}

/// Orthogonal projection of an ambient matrix onto the tangent space at `u`:
/// `P(Z) = skew0(Z U*) U`.
pub fn project_tangent(z: &ComplexMatrix, u: &UnitaryPoint) -> ComplexMatrix {
    project_at(z, u.matrix())
}

/// Same as [`project_tangent`] for a raw matrix assumed unitary.
pub fn project_at(z: &ComplexMatrix, u: &ComplexMatrix) -> ComplexMatrix {
    &skew0(&(z * &u.adjoint())) * u
}

/// `AB - BA`.
pub fn bracket(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    &(a * b) - &(b * a)
}

/// Riemannian curvature of the bi-invariant metric on left-invariant fields:
/// `R(X, Y) Z = -1/4 [[X, Y], Z]`.
pub fn curvature(x: &AlgebraElement, y: &AlgebraElement, z: &AlgebraElement) -> AlgebraElement {
    AlgebraElement(curvature_raw(x.matrix(), y.matrix(), z.matrix()))
}

pub(crate) fn curvature_raw(x: &ComplexMatrix, y: &ComplexMatrix, z: &ComplexMatrix) -> ComplexMatrix {
    bracket(&bracket(x, y), z).scale(-0.25)
}

/// Result of [`hamiltonian`]: the Hermitian generator plus how far the input
/// velocity was from being tangent.
#[derive(Debug, Clone)]
pub struct HamiltonianResult {
    pub h: ComplexMatrix,
    /// `||U_x - P(U_x)||_F` before projection.
    pub tangency_residual: f64,
    /// `||H - H*||_F + |tr H|` of the returned matrix.
    pub hermitian_residual: f64,
    /// Set when `hermitian_residual` exceeds the diagnostic tolerance.
    pub flagged: bool,
}

/// `H = i U_x U*`, the Hermitian generator with `U_x = -i H U`.
///
/// `ux` is projected onto the tangent space first when its normal part
/// exceeds [`TANGENCY_TOL`].
pub fn hamiltonian(u: &UnitaryPoint, ux: &ComplexMatrix, diagnostic_tol: f64) -> HamiltonianResult {
    let proj = project_tangent(ux, u);
    let tangency_residual = frob_norm(&(ux - &proj));
    let v = if tangency_residual > TANGENCY_TOL { &proj } else { ux };
    let h = (v * &u.matrix().adjoint()).scale_c(I);
    let hermitian_residual = frob_norm(&(&h - &h.adjoint())) + h.trace().norm();
    HamiltonianResult { h, tangency_residual, hermitian_residual, flagged: hermitian_residual > diagnostic_tol }
}

/// Unitary polar factor of `a` by scaled Newton iteration
/// `X <- (g X + X^{-*} / g) / 2`.
fn polar_unitary(a: &ComplexMatrix) -> Result<ComplexMatrix, SunError> {
    if !a.is_finite() {
        return Err(SunError::NonFinite);
    }
    let n = a.dim();
    let tol = 4.0 * f64::EPSILON * (n as f64).sqrt();
    let mut x = a.clone();
    for it in 0..60 {
        let inv = x.try_inverse().ok_or(SunError::Singular)?;
        if !inv.is_finite() {
            return Err(SunError::Singular);
        }
        let inv_adj = inv.adjoint();
        // Higham's Frobenius scaling; only while far from convergence
        let g = if it < 4 {
            let gn = (frob_norm(&inv) / frob_norm(&x)).sqrt();
            if gn.is_finite() && gn > 0.0 {
                gn
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut next = x.scale(0.5 * g);
        next.axpy(0.5 / g, &inv_adj);
        let delta = frob_norm(&(&next - &x));
        x = next;
        if delta <= tol {
            return Ok(x);
        }
        if delta <= 1e-8 {
            // quadratic convergence: one more iteration reaches roundoff
            let inv = x.try_inverse().ok_or(SunError::Singular)?;
            let mut last = x.scale(0.5);
            last.axpy(0.5, &inv.adjoint());
            return Ok(last);
        }
    }
    Err(SunError::NoConvergence)
}

/// Nearest point of SU(N): unitary polar factor followed by the determinant
/// phase correction `Q -> Q e^{-i arg(det Q) / N}`.
pub fn retract(a: &ComplexMatrix) -> Result<UnitaryPoint, SunError> {
    if a.dim() == 0 {
        return Err(SunError::EmptyMatrix);
    }
    let q = polar_unitary(a)?;
    let theta = q.det().arg();
    let phase = Complex64::from_polar(1.0, -theta / a.dim() as f64);
    Ok(UnitaryPoint(q.scale_c(phase)))
}

/// Matrix exponential of an algebra element.
pub fn expm(x: &AlgebraElement) -> UnitaryPoint {
    UnitaryPoint(expm_raw(x.matrix()))
}

pub(crate) fn expm_raw(x: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix { inner: x.inner.exp() }
}

/// Principal logarithm of a special unitary matrix, returned in su(N).
///
/// Eigenvalue phases are taken in (-pi, pi]; when they do not sum to zero
/// the largest (or smallest) phases are shifted by 2 pi so the result is
/// traceless. Phases within [`LOG_GUARD`] of pi are rejected.
pub fn logm(u: &UnitaryPoint) -> Result<AlgebraElement, SunError> {
    let n = u.dim();
    let schur = nalgebra::Schur::try_new(u.matrix().inner.clone(), f64::EPSILON, 10_000)
        .ok_or(SunError::NoConvergence)?;
    let (q, t) = schur.unpack();
    let mut phases: Vec<f64> = (0..n).map(|i| t[(i, i)].arg()).collect();
    if let Some(&phase) = phases.iter().find(|p| std::f64::consts::PI - p.abs() < LOG_GUARD) {
        return Err(SunError::CutLocus { phase, guard: LOG_GUARD });
    }
    let total: f64 = phases.iter().sum();
    let k = (total / std::f64::consts::TAU).round() as i64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]));
    if k > 0 {
        for &i in order.iter().rev().take(k as usize) {
            phases[i] -= std::f64::consts::TAU;
        }
    } else if k < 0 {
        for &i in order.iter().take((-k) as usize) {
            phases[i] += std::f64::consts::TAU;
        }
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        phases.iter().map(|p| Complex64::new(0.0, *p)),
    ));
    let x = ComplexMatrix { inner: &q * d * q.adjoint() };
    Ok(AlgebraElement(skew0(&x)))
}

/// An element of SU(N).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitaryPoint(ComplexMatrix);

impl fmt::Debug for UnitaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UnitaryPoint({:?})", self.0)
    }
}

impl UnitaryPoint {
    /// Validate `m` against the SU(N) invariants at tolerance `tol`.
    pub fn new(m: ComplexMatrix, tol: f64) -> Result<Self, SunError> {
        if !m.is_finite() {
            return Err(SunError::NonFinite);
        }
        let (unitarity, det) = unitarity_residuals(&m);
        if unitarity > tol || det > tol {
            return Err(SunError::NotSpecialUnitary { unitarity, det });
        }
        Ok(Self(m))
    }

    /// Wrap without validation; for matrices produced by `retract`/`expm`
    /// or their products.
    pub fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn adjoint(&self) -> UnitaryPoint {
        UnitaryPoint(self.0.adjoint())
    }

    /// Group product.
    pub fn compose(&self, other: &UnitaryPoint) -> UnitaryPoint {
        UnitaryPoint(&self.0 * &other.0)
    }

    /// `(||U*U - Id||_F, |det U - 1|)`.
    pub fn residuals(&self) -> (f64, f64) {
        unitarity_residuals(&self.0)
    }
}

pub fn unitarity_residuals(m: &ComplexMatrix) -> (f64, f64) {
    let n = m.dim();
    let gram = &m.adjoint() * m;
    let unitarity = frob_norm(&(&gram - &ComplexMatrix::identity(n)));
    let det = (m.det() - Complex64::new(1.0, 0.0)).norm();
    (unitarity, det)
}

/// An element of su(N): skew-Hermitian and traceless.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlgebraElement(ComplexMatrix);

impl fmt::Debug for AlgebraElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AlgebraElement({:?})", self.0)
    }
}

impl AlgebraElement {
    pub fn new(m: ComplexMatrix, tol: f64) -> Result<Self, SunError> {
        if !m.is_finite() {
            return Err(SunError::NonFinite);
        }
        let skew_res = frob_norm(&(&m + &m.adjoint()));
        let trace = m.trace().norm();
        if skew_res > tol || trace > tol {
            return Err(SunError::NotInAlgebra { skew: skew_res, trace });
        }
        Ok(Self(m))
    }

    /// Project an arbitrary matrix into su(N).
    pub fn from_skew0(m: &ComplexMatrix) -> Self {
        Self(skew0(m))
    }

    pub fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn zero(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }
}

/// Orthonormal basis of su(N) for the real pairing `Re tr(B* A)`.
pub fn su_basis(n: usize) -> Vec<AlgebraElement> {
    let mut basis = Vec::with_capacity(n * n - 1);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for k in (j + 1)..n {
            let mut a = ComplexMatrix::zeros(n);
            a.set(j, k, Complex64::new(r, 0.0));
            a.set(k, j, Complex64::new(-r, 0.0));
            basis.push(AlgebraElement(a));
            let mut b = ComplexMatrix::zeros(n);
            b.set(j, k, Complex64::new(0.0, r));
            b.set(k, j, Complex64::new(0.0, r));
            basis.push(AlgebraElement(b));
        }
    }
    for m in 1..n {
        let norm = ((m * (m + 1)) as f64).sqrt();
        let mut d = ComplexMatrix::zeros(n);
        for i in 0..m {
            d.set(i, i, Complex64::new(0.0, 1.0 / norm));
        }
        d.set(m, m, Complex64::new(0.0, -(m as f64) / norm));
        basis.push(AlgebraElement(d));
    }
    basis
}

/// su(N) element from real coordinates in [`su_basis`].
pub fn algebra_from_coords(n: usize, coords: &[f64]) -> AlgebraElement {
    let mut m = ComplexMatrix::zeros(n);
    for (c, b) in coords.iter().zip(su_basis(n)) {
        m.axpy(*c, b.matrix());
    }
    AlgebraElement(m)
}

/// Real coordinates of the su(N) part of `m` in [`su_basis`].
pub fn algebra_coords(m: &ComplexMatrix) -> Vec<f64> {
    let s = skew0(m);
    su_basis(m.dim()).iter().map(|b| real_inner(&s, b.matrix())).collect()
}

/// Pauli matrices, used by tests, examples and the commutative embedding.
pub mod pauli {
    use super::{ComplexMatrix, I};
    use num_complex::Complex64;

    const O: Complex64 = Complex64 { re: 0.0, im: 0.0 };
    const E: Complex64 = Complex64 { re: 1.0, im: 0.0 };

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_row_major(2, &[O, E, E, O]).unwrap()
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_row_major(2, &[O, -I, I, O]).unwrap()
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_row_major(2, &[E, O, O, -E]).unwrap()
    }

    /// `exp(i theta sigma_z)` as an explicit diagonal matrix.
    pub fn phase_z(theta: f64) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&[Complex64::from_polar(1.0, theta), Complex64::from_polar(1.0, -theta)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
        frob_norm(&(a - b)) <= tol
    }

    #[test]
    fn inner_examples() {
        let id = ComplexMatrix::identity(2);
        assert_abs_diff_eq!(inner(&id, &id).unwrap().re, 2.0);
        let z = inner(&pauli::x(), &pauli::z()).unwrap();
        assert_abs_diff_eq!(z.norm(), 0.0);
        let u = expm(&AlgebraElement::from_skew0(&pauli::y().scale_c(c(0.0, 0.7))));
        assert_abs_diff_eq!(inner(u.matrix(), u.matrix()).unwrap().re, 2.0, epsilon = 1e-14);
        assert!(matches!(
            inner(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3)),
            Err(SunError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn inner_is_conjugate_symmetric() {
        let a = &pauli::x() + &pauli::y().scale_c(c(0.3, 1.1));
        let b = &pauli::z().scale_c(c(-0.2, 0.5)) + &ComplexMatrix::identity(2);
        let ab = inner(&a, &b).unwrap();
        let ba = inner(&b, &a).unwrap();
        assert_abs_diff_eq!((ab - ba.conj()).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn frob_norm_examples() {
        assert_abs_diff_eq!(frob_norm(&ComplexMatrix::identity(3)), 3f64.sqrt());
        assert_eq!(frob_norm(&ComplexMatrix::zeros(4)), 0.0);
        assert_abs_diff_eq!(frob_norm(&ComplexMatrix::from_diagonal(&[c(3.0, 0.0), c(4.0, 0.0)])), 5.0);
    }

    #[test]
    fn skew_examples() {
        let a = ComplexMatrix::from_row_major(2, &[c(1., 0.), c(2., 0.), c(0., 0.), c(1., 0.)]).unwrap();
        let expect = ComplexMatrix::from_row_major(2, &[c(0., 0.), c(1., 0.), c(-1., 0.), c(0., 0.)]).unwrap();
        assert!(close(&skew(&a), &expect, 1e-15));

        let i_id = ComplexMatrix::identity(2).scale_c(I);
        assert_eq!(frob_norm(&skew0(&i_id)), 0.0);

        // sigma_x sigma_z = -i sigma_y and 1/2 [sigma_x, sigma_z] = -i sigma_y
        let got = skew0(&(&pauli::x() * &pauli::z()));
        assert!(close(&got, &pauli::y().scale_c(-I), 1e-15));
        assert!(close(&got, &bracket(&pauli::x(), &pauli::z()).scale(0.5), 1e-15));
    }

    #[test]
    fn projection_examples() {
        let u = expm(&AlgebraElement::from_skew0(&(&pauli::x().scale_c(c(0.0, 0.4)) + &pauli::z().scale_c(I))));
        let x = AlgebraElement::from_skew0(&pauli::y().scale_c(c(0.0, 1.3)));
        let z = x.matrix() * u.matrix();
        assert!(close(&project_tangent(&z, &u), &z, 1e-14));
        assert!(frob_norm(&project_tangent(u.matrix(), &u)) < 1e-15);
        let id = UnitaryPoint::identity(2);
        assert_eq!(frob_norm(&project_tangent(&pauli::x(), &id)), 0.0);
    }

    #[test]
    fn bracket_examples() {
        assert!(close(&bracket(&pauli::x(), &pauli::y()), &pauli::z().scale_c(c(0.0, 2.0)), 1e-15));
        let a = &pauli::x() + &pauli::y().scale_c(c(0.2, 0.1));
        assert_eq!(frob_norm(&bracket(&a, &a)), 0.0);
        let iz = pauli::z().scale_c(I);
        assert_eq!(frob_norm(&bracket(&iz, &iz)), 0.0);
    }

    #[test]
    fn curvature_examples() {
        let ix = AlgebraElement::new(pauli::x().scale_c(I), 1e-15).unwrap();
        let iy = AlgebraElement::new(pauli::y().scale_c(I), 1e-15).unwrap();
        let iz = AlgebraElement::new(pauli::z().scale_c(I), 1e-15).unwrap();
        assert!(frob_norm(curvature(&ix, &iy, &iz).matrix()) < 1e-15);
        assert!(frob_norm(curvature(&ix, &ix, &iz).matrix()) < 1e-15);
        let r = curvature(&ix, &iy, &ix);
        assert!(close(r.matrix(), &pauli::y().scale_c(-I), 1e-15));
        assert!(AlgebraElement::new(r.matrix().clone(), 1e-14).is_ok());
    }

    #[test]
    fn hamiltonian_examples() {
        let iz = pauli::z().scale_c(I);
        for x in [0.0, 0.3, 1.7] {
            let u = UnitaryPoint::new_unchecked(pauli::phase_z(x));
            let ux = &iz * u.matrix();
            let h = hamiltonian(&u, &ux, 1e-10);
            assert!(close(&h.h, &pauli::z().scale(-1.0), 1e-14));
            assert!(!h.flagged);
        }
        let u = UnitaryPoint::identity(2);
        assert_eq!(frob_norm(&hamiltonian(&u, &ComplexMatrix::zeros(2), 1e-10).h), 0.0);
        let h = hamiltonian(&u, &pauli::x().scale_c(I), 1e-10);
        assert!(close(&h.h, &pauli::x().scale(-1.0), 1e-15));
    }

    #[test]
    fn hamiltonian_projects_off_tangent_input() {
        let u = UnitaryPoint::identity(2);
        // normal component (Hermitian) plus a tangent part
        let ux = &pauli::x().scale_c(I) + &pauli::z().scale(0.3);
        let h = hamiltonian(&u, &ux, 1e-10);
        assert!(h.tangency_residual > 0.1);
        assert!(h.hermitian_residual < 1e-14);
        assert!(close(&h.h, &pauli::x().scale(-1.0), 1e-15));
    }

    #[test]
    fn retract_examples() {
        let u = expm(&AlgebraElement::from_skew0(&(&pauli::x().scale_c(c(0.0, 0.9)) + &pauli::y().scale_c(I))));
        let r = retract(u.matrix()).unwrap();
        assert!(close(r.matrix(), u.matrix(), 1e-14));

        let r = retract(&ComplexMatrix::identity(2).scale(2.0)).unwrap();
        assert!(close(r.matrix(), &ComplexMatrix::identity(2), 1e-15));

        let a = &ComplexMatrix::identity(2) + &pauli::x().scale(1e-3);
        let r = retract(&a).unwrap();
        let (unit, det) = r.residuals();
        assert!(unit <= 1e-14, "{unit}");
        assert!(det <= 1e-14, "{det}");

        assert_eq!(retract(&ComplexMatrix::zeros(2)), Err(SunError::Singular));
    }

    #[test]
    fn retract_fixes_determinant_phase() {
        // unitary with det = i
        let q = ComplexMatrix::from_diagonal(&[c(0.0, 1.0), c(1.0, 0.0)]);
        let r = retract(&q).unwrap();
        let (unit, det) = r.residuals();
        assert!(unit < 1e-15 && det < 1e-15);
    }

    #[test]
    fn expm_examples() {
        let zero = AlgebraElement::zero(3);
        assert!(close(expm(&zero).matrix(), &ComplexMatrix::identity(3), 0.0));
        let x = AlgebraElement::from_skew0(&pauli::x().scale_c(c(0.0, std::f64::consts::FRAC_PI_2)));
        assert!(close(expm(&x).matrix(), &pauli::x().scale_c(I), 1e-15));
        let small = AlgebraElement::from_skew0(&pauli::y().scale_c(c(0.0, 1e-8)));
        let e = expm(&small);
        assert!(close(e.matrix(), &(&ComplexMatrix::identity(2) + small.matrix()), 1e-15));
    }

    #[test]
    fn logm_inverts_expm_and_guards_cut_locus() {
        let x = AlgebraElement::from_skew0(&(&pauli::x().scale_c(c(0.0, 0.8)) + &pauli::z().scale_c(c(0.0, -0.5))));
        let back = logm(&expm(&x)).unwrap();
        assert!(close(back.matrix(), x.matrix(), 1e-13));

        let near_pi = AlgebraElement::from_skew0(&pauli::z().scale_c(c(0.0, std::f64::consts::PI - 1e-8)));
        assert!(matches!(logm(&expm(&near_pi)), Err(SunError::CutLocus { .. })));
    }

    #[test]
    fn logm_returns_traceless_branch_in_su3() {
        // phases (0.9pi, 0.9pi, -1.8pi ~ 0.2pi) sum to 2pi on the principal branch
        let p = 0.9 * std::f64::consts::PI;
        let x = AlgebraElement::new(
            ComplexMatrix::from_diagonal(&[c(0.0, p), c(0.0, p), c(0.0, -2.0 * p)]),
            1e-14,
        )
        .unwrap();
        let u = expm(&x);
        let l = logm(&u).unwrap();
        assert!(l.matrix().trace().norm() < 1e-12);
        assert!(close(expm(&l).matrix(), u.matrix(), 1e-12));
    }

    #[test]
    fn su_basis_is_orthonormal() {
        for n in 1..=4 {
            let b = su_basis(n);
            assert_eq!(b.len(), n * n - 1);
            for (i, x) in b.iter().enumerate() {
                assert!(AlgebraElement::new(x.matrix().clone(), 1e-15).is_ok());
                for (j, y) in b.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(real_inner(x.matrix(), y.matrix()), expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn serde_round_trip_row_major_pairs() {
        let m = &pauli::y() + &ComplexMatrix::identity(2).scale(0.5);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[0.5,0.0],[0.0,-1.0],[0.0,1.0],[0.5,0.0]]");
        let back: ComplexMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
