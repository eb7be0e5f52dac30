//! Segmented curves on `[x_0, x_q]` with `x_l = l`, finite-difference
//! stencils and discrete covariant derivatives.
//!
//! Each segment carries `M + 1` nodes at spacing `h = 1 / M`. Derivatives
//! are second-order accurate: central stencils where they fit, one-sided
//! stencils of minimal width at the ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sun::{self, ComplexMatrix, SunError, UnitaryPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid has {m} intervals; at least {min} are required")]
    TooFewIntervals { m: usize, min: usize },
    #[error("derivative order {0} not supported (1..=4)")]
    BadOrder(usize),
    #[error("covariant derivative order {0} not supported (1..=3)")]
    BadCovariantOrder(usize),
    #[error("segments have mismatched grid sizes")]
    GridMismatch,
    #[error("invalid spline state: {0}")]
    InvalidState(String),
    #[error("invalid knot data: {0}")]
    InvalidKnots(String),
    #[error(transparent)]
    Sun(#[from] SunError),
}

pub const MIN_FD_INTERVALS: usize = 8;

// One-sided tables: FORWARD[order-1][r] evaluates the derivative at node r
// using nodes 0..len. Right-end stencils are mirrored with sign (-1)^order.
const FWD1: [&[f64]; 1] = [&[-1.5, 2.0, -0.5]];
const FWD2: [&[f64]; 1] = [&[2.0, -5.0, 4.0, -1.0]];
const FWD3: [&[f64]; 2] = [&[-2.5, 9.0, -12.0, 7.0, -1.5], &[-1.5, 5.0, -6.0, 3.0, -0.5]];
const FWD4: [&[f64]; 2] = [&[3.0, -14.0, 26.0, -24.0, 11.0, -2.0], &[2.0, -9.0, 16.0, -14.0, 6.0, -1.0]];

const CENTRAL: [&[f64]; 4] =
    [&[-0.5, 0.0, 0.5], &[1.0, -2.0, 1.0], &[-0.5, 1.0, 0.0, -1.0, 0.5], &[1.0, -4.0, 6.0, -4.0, 1.0]];

fn forward_table(order: usize) -> &'static [&'static [f64]] {
    match order {
        1 => &FWD1,
        2 => &FWD2,
        3 => &FWD3,
        _ => &FWD4,
    }
}

/// A finite-difference stencil: `sum_k weights[k] * f[start + k] / h^order`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub start: usize,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl Stencil {
    /// Stencil weights already divided by `h^order`.
    pub fn scaled(&self, h: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = h.powi(-(self.order as i32));
        self.weights.iter().enumerate().map(move |(k, w)| (self.start + k, w * s))
    }

    pub fn apply(&self, values: &[ComplexMatrix], h: f64) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(values[self.start].dim());
        for (k, w) in self.weights.iter().enumerate() {
            if *w != 0.0 {
                acc.axpy(*w, &values[self.start + k]);
            }
        }
        acc.scale(h.powi(-(self.order as i32)))
    }

    pub fn apply_real(&self, values: &[f64], h: f64) -> f64 {
        let s: f64 = self.weights.iter().enumerate().map(|(k, w)| w * values[self.start + k]).sum();
        s * h.powi(-(self.order as i32))
    }
}

/// Stencil for derivative `order` at node `j` of a grid with `m` intervals.
pub fn stencil(order: usize, j: usize, m: usize) -> Result<Stencil, GridError> {
    if !(1..=4).contains(&order) {
        return Err(GridError::BadOrder(order));
    }
    if m < MIN_FD_INTERVALS {
        return Err(GridError::TooFewIntervals { m, min: MIN_FD_INTERVALS });
    }
    let table = forward_table(order);
    let reach = table.len();
    if j < reach {
        return Ok(Stencil { start: 0, weights: table[j].to_vec(), order });
    }
    if j + reach > m {
        let r = m - j;
        let fwd = table[r];
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        let weights: Vec<f64> = fwd.iter().rev().map(|w| sign * w).collect();
        return Ok(Stencil { start: m + 1 - weights.len(), weights, order });
    }
    let c = CENTRAL[order - 1];
    Ok(Stencil { start: j - c.len() / 2, weights: c.to_vec(), order })
}

/// One-sided stencil anchored at the left (`Side::Start`) or right end.
pub fn end_stencil(order: usize, side: Side, m: usize) -> Result<Stencil, GridError> {
    match side {
        Side::Start => stencil(order, 0, m),
        Side::End => stencil(order, m, m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Start,
    End,
}

/// Entrywise derivative of order `order` at every node.
pub fn fd_nodes(values: &[ComplexMatrix], order: usize, h: f64) -> Result<Vec<ComplexMatrix>, GridError> {
    let m = values.len().saturating_sub(1);
    (0..=m).map(|j| Ok(stencil(order, j, m)?.apply(values, h))).collect()
}

/// Entrywise derivative at a single node.
pub fn fd_at(values: &[ComplexMatrix], order: usize, j: usize, h: f64) -> Result<ComplexMatrix, GridError> {
    let m = values.len().saturating_sub(1);
    Ok(stencil(order, j, m)?.apply(values, h))
}

/// Scalar version of [`fd_nodes`].
pub fn fd_nodes_real(values: &[f64], order: usize, h: f64) -> Result<Vec<f64>, GridError> {
    let m = values.len().saturating_sub(1);
    (0..=m).map(|j| Ok(stencil(order, j, m)?.apply_real(values, h))).collect()
}

/// One segment `U_l` (or `V_l`) sampled at `x_{l-1} + j h`, `j = 0..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCurve {
    /// 1-based segment index `l`.
    pub index: usize,
    pub samples: Vec<UnitaryPoint>,
}

impl SegmentCurve {
    pub fn new(index: usize, samples: Vec<UnitaryPoint>) -> Result<Self, GridError> {
        if samples.len() < 2 {
            return Err(GridError::TooFewIntervals { m: samples.len().saturating_sub(1), min: 1 });
        }
        let n = samples[0].dim();
        if samples.iter().any(|s| s.dim() != n) {
            return Err(GridError::InvalidState("samples of different dimension".into()));
        }
        Ok(Self { index, samples })
    }

    /// Sample `f(x)` at the nodes of segment `index` over `[index-1, index]`.
    pub fn from_fn(index: usize, m: usize, mut f: impl FnMut(f64) -> UnitaryPoint) -> Self {
        let h = 1.0 / m as f64;
        let x0 = (index - 1) as f64;
        let samples = (0..=m).map(|j| f(x0 + j as f64 * h)).collect();
        Self { index, samples }
    }

    pub fn grid_size(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.grid_size() as f64
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn node_x(&self, j: usize) -> f64 {
        (self.index - 1) as f64 + j as f64 * self.h()
    }

    pub fn first(&self) -> &UnitaryPoint {
        &self.samples[0]
    }

    pub fn last(&self) -> &UnitaryPoint {
        &self.samples[self.grid_size()]
    }

    pub fn matrices(&self) -> Vec<ComplexMatrix> {
        self.samples.iter().map(|s| s.matrix().clone()).collect()
    }

    /// Largest `max(||U*U - Id||_F, |det U - 1|)` over the nodes.
    pub fn unitarity_drift(&self) -> f64 {
        self.samples.iter().map(|s| {
            let (a, b) = s.residuals();
            a.max(b)
        }).fold(0.0, f64::max)
    }
}

/// Entrywise finite differences of a curve.
pub fn fd_derivative(curve: &SegmentCurve, order: usize) -> Result<Vec<ComplexMatrix>, GridError> {
    fd_nodes(&curve.matrices(), order, curve.h())
}

/// Discrete covariant derivatives by alternation: `T_1 = P(dU)`,
/// `T_{j+1} = P(d T_j)`. Returns `[T_1, ..., T_{k+1}]`, i.e. `U_x` followed by
/// `D_x U_x, ..., D_x^k U_x`.
pub fn covariant_chain(samples: &[ComplexMatrix], k: usize, h: f64) -> Result<Vec<Vec<ComplexMatrix>>, GridError> {
    if !(1..=3).contains(&k) {
        return Err(GridError::BadCovariantOrder(k));
    }
    let project = |v: Vec<ComplexMatrix>| -> Vec<ComplexMatrix> {
        v.iter().zip(samples).map(|(z, u)| sun::project_at(z, u)).collect()
    };
    let mut chain = Vec::with_capacity(k + 1);
    chain.push(project(fd_nodes(samples, 1, h)?));
    for _ in 0..k {
        let next = project(fd_nodes(chain.last().unwrap(), 1, h)?);
        chain.push(next);
    }
    Ok(chain)
}

/// `D_x^k U_x` at every node.
pub fn covariant_derivative(curve: &SegmentCurve, k: usize) -> Result<Vec<ComplexMatrix>, GridError> {
    let mut chain = covariant_chain(&curve.matrices(), k, curve.h())?;
    Ok(chain.pop().unwrap())
}

/// Per-node Hamiltonians along a curve.
#[derive(Debug, Clone)]
pub struct HamiltonianTrack {
    pub h: Vec<ComplexMatrix>,
    /// Largest Hermiticity/trace residual seen; zero up to roundoff since
    /// velocities are projected first.
    pub max_residual: f64,
    pub flagged: bool,
}

/// `H_j = i (dU)_j U_j*` with `dU` from [`fd_derivative`].
pub fn hamiltonian_track(curve: &SegmentCurve, diagnostic_tol: f64) -> Result<HamiltonianTrack, GridError> {
    let du = fd_derivative(curve, 1)?;
    let mut max_residual: f64 = 0.0;
    let mut flagged = false;
    let h = du
        .iter()
        .zip(&curve.samples)
        .map(|(d, u)| {
            let r = sun::hamiltonian(u, d, diagnostic_tol);
            max_residual = max_residual.max(r.hermitian_residual);
            flagged |= r.flagged;
            r.h
        })
        .collect();
    Ok(HamiltonianTrack { h, max_residual, flagged })
}

/// How the right end `x_q` is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndpointMode {
    /// `D_x U_x(x_q) = 0`.
    NaturalSecondDerivative,
    /// `U_x(x_q) = phi'_q`, read as the fixed Hamiltonian `i phi'_q p_q*`
    /// so that it stays tangent once `U(x_q)` leaves `p_q`.
    ClampedVelocity,
}

/// Interpolation data: knots `p_0..p_q`, clamp velocity at `x_0` and the
/// endpoint closure.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotData {
    pub knots: Vec<UnitaryPoint>,
    pub initial_velocity: ComplexMatrix,
    pub endpoint_mode: EndpointMode,
    pub terminal_velocity: Option<ComplexMatrix>,
}

/// Tangency tolerance for clamp velocities.
pub const VELOCITY_TANGENCY_TOL: f64 = 1e-10;

impl KnotData {
    pub fn new(
        knots: Vec<UnitaryPoint>,
        initial_velocity: ComplexMatrix,
        endpoint_mode: EndpointMode,
        terminal_velocity: Option<ComplexMatrix>,
    ) -> Result<Self, GridError> {
        if knots.len() < 2 {
            return Err(GridError::InvalidKnots("need at least two knots (q >= 1)".into()));
        }
        let n = knots[0].dim();
        if knots.iter().any(|k| k.dim() != n) || initial_velocity.dim() != n {
            return Err(GridError::InvalidKnots("knots and velocities must share one dimension".into()));
        }
        check_tangent(&initial_velocity, &knots[0], "phi0_prime")?;
        match (endpoint_mode, &terminal_velocity) {
            (EndpointMode::ClampedVelocity, None) => {
                return Err(GridError::InvalidKnots("clamped endpoint requires a terminal velocity".into()))
            }
            (_, Some(v)) => {
                if v.dim() != n {
                    return Err(GridError::InvalidKnots("terminal velocity has the wrong dimension".into()));
                }
                check_tangent(v, knots.last().unwrap(), "phiq_prime")?;
            }
            _ => {}
        }
        Ok(Self { knots, initial_velocity, endpoint_mode, terminal_velocity })
    }

    pub fn dim(&self) -> usize {
        self.knots[0].dim()
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }
}

fn check_tangent(v: &ComplexMatrix, at: &UnitaryPoint, name: &str) -> Result<(), GridError> {
    let r = sun::frob_norm(&(&sun::project_tangent(v, at) - v));
    if r > VELOCITY_TANGENCY_TOL {
        return Err(GridError::InvalidKnots(format!("{name} is not tangent at its knot (residual {r:.3e})")));
    }
    Ok(())
}

/// The full configuration evolved by the flow: `q` spline segments `U_l` and
/// `q` fitting legs `V_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineState {
    pub u_segments: Vec<SegmentCurve>,
    pub v_segments: Vec<SegmentCurve>,
    pub t: f64,
}

impl SplineState {
    pub fn new(u_segments: Vec<SegmentCurve>, v_segments: Vec<SegmentCurve>, t: f64) -> Result<Self, GridError> {
        let s = Self { u_segments, v_segments, t };
        s.check_shape()?;
        Ok(s)
    }

    pub fn segments(&self) -> usize {
        self.u_segments.len()
    }

    pub fn grid_size(&self) -> usize {
        self.u_segments[0].grid_size()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.grid_size() as f64
    }

    pub fn dim(&self) -> usize {
        self.u_segments[0].dim()
    }

    /// Same segment count, grid size and dimension for every curve.
    pub fn check_shape(&self) -> Result<(), GridError> {
        let q = self.u_segments.len();
        if q == 0 || self.v_segments.len() != q {
            return Err(GridError::InvalidState("need q >= 1 U segments and as many V legs".into()));
        }
        let m = self.u_segments[0].grid_size();
        let n = self.u_segments[0].dim();
        for (l, c) in self.u_segments.iter().chain(&self.v_segments).enumerate() {
            if c.grid_size() != m || c.dim() != n {
                return Err(GridError::GridMismatch);
            }
            if c.index != l % q + 1 {
                return Err(GridError::InvalidState(format!("segment index {} out of order", c.index)));
            }
        }
        Ok(())
    }

    pub fn same_grid(&self, other: &SplineState) -> bool {
        self.segments() == other.segments() && self.grid_size() == other.grid_size() && self.dim() == other.dim()
    }

    /// Largest unitarity/determinant residual over every node.
    pub fn unitarity_drift(&self) -> f64 {
        self.u_segments.iter().chain(&self.v_segments).map(|c| c.unitarity_drift()).fold(0.0, f64::max)
    }

    /// Check every invariant of an admissible state: node unitarity,
    /// `||U||_F = sqrt(N)`, continuity at junctions and the pinned values.
    pub fn validate(&self, knots: &KnotData, unitarity_tol: f64, junction_tol: f64) -> Result<(), GridError> {
        self.check_shape()?;
        let q = self.segments();
        if knots.segments() != q || knots.dim() != self.dim() {
            return Err(GridError::InvalidState("knot data does not match the state".into()));
        }
        let drift = self.unitarity_drift();
        if drift > unitarity_tol {
            return Err(GridError::InvalidState(format!("unitarity drift {drift:.3e}")));
        }
        let sqrt_n = (self.dim() as f64).sqrt();
        for c in self.u_segments.iter().chain(&self.v_segments) {
            for s in &c.samples {
                if (sun::frob_norm(s.matrix()) - sqrt_n).abs() > unitarity_tol {
                    return Err(GridError::InvalidState("node norm differs from sqrt(N)".into()));
                }
            }
        }
        let dist = |a: &UnitaryPoint, b: &UnitaryPoint| sun::frob_norm(&(a.matrix() - b.matrix()));
        let checks = std::iter::once(("U_1(x_0) = p_0".to_string(), dist(self.u_segments[0].first(), &knots.knots[0])))
            .chain((0..q).map(|l| (format!("V_{}(x_{}) = p_{}", l + 1, l, l + 1), dist(self.v_segments[l].first(), &knots.knots[l + 1]))))
            .chain((0..q).map(|l| (format!("V_{}(x_{}) = U(x_{})", l + 1, l + 1, l + 1), dist(self.v_segments[l].last(), self.u_segments[l].last()))))
            .chain((0..q.saturating_sub(1)).map(|l| {
                (format!("U continuous at x_{}", l + 1), dist(self.u_segments[l].last(), self.u_segments[l + 1].first()))
            }));
        for (name, r) in checks {
            if r > junction_tol {
                return Err(GridError::InvalidState(format!("{name} violated by {r:.3e}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sun::{pauli, I};
    use num_complex::Complex64;

    fn scalar_curve(m: usize, f: impl Fn(f64) -> f64) -> Vec<ComplexMatrix> {
        (0..=m)
            .map(|j| {
                let x = j as f64 / m as f64;
                ComplexMatrix::from_diagonal(&[Complex64::new(f(x), 0.0), Complex64::new(-f(x), 0.5 * f(x))])
            })
            .collect()
    }

    #[test]
    fn stencils_are_exact_on_polynomials() {
        // degree <= order + 1 must be reproduced exactly at every node
        let m = 10;
        let h = 1.0 / m as f64;
        for order in 1..=4 {
            for deg in 0..=(order + 1) {
                let vals: Vec<f64> = (0..=m).map(|j| (j as f64 * h).powi(deg as i32)).collect();
                let d = fd_nodes_real(&vals, order, h).unwrap();
                for (j, dj) in d.iter().enumerate() {
                    let x = j as f64 * h;
                    let exact = if deg < order {
                        0.0
                    } else {
                        let falling: f64 = (0..order).map(|k| (deg - k) as f64).product();
                        falling * x.powi((deg - order) as i32)
                    };
                    assert!((dj - exact).abs() < 1e-8, "order {order} deg {deg} node {j}: {dj} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn right_end_stencils_mirror_left() {
        let m = 12;
        for order in 1..=4 {
            let l = stencil(order, 0, m).unwrap();
            let r = stencil(order, m, m).unwrap();
            let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
            let mirrored: Vec<f64> = l.weights.iter().rev().map(|w| sign * w).collect();
            assert_eq!(r.weights, mirrored);
            assert_eq!(r.start + r.weights.len(), m + 1);
        }
    }

    #[test]
    fn fd_examples() {
        let m = 16;
        let h = 1.0 / m as f64;
        let constant = scalar_curve(m, |_| 0.7);
        for order in 1..=4 {
            assert!(fd_nodes(&constant, order, h).unwrap().iter().all(|d| sun::frob_norm(d) < 1e-9));
        }
        let quad = scalar_curve(m, |x| x * x);
        for d in fd_nodes(&quad, 2, h).unwrap() {
            assert!((d.get(0, 0).re - 2.0).abs() < 1e-9);
        }
        let quart = scalar_curve(m, |x| x.powi(4));
        for d in fd_nodes(&quart, 4, h).unwrap() {
            assert!((d.get(0, 0).re - 24.0).abs() < 1e-6, "{:?}", d.get(0, 0));
        }
    }

    #[test]
    fn fd_rejects_small_grids_and_bad_orders() {
        let c = scalar_curve(6, |x| x);
        assert!(matches!(fd_nodes(&c, 1, 1.0 / 6.0), Err(GridError::TooFewIntervals { .. })));
        let c = scalar_curve(16, |x| x);
        assert!(matches!(fd_nodes(&c, 5, 1.0 / 16.0), Err(GridError::BadOrder(5))));
        let curve = SegmentCurve::from_fn(1, 16, |_| UnitaryPoint::identity(2));
        assert!(matches!(covariant_derivative(&curve, 4), Err(GridError::BadCovariantOrder(4))));
    }

    #[test]
    fn fd_is_linear() {
        let m = 16;
        let h = 1.0 / m as f64;
        let a = scalar_curve(m, |x| (3.0 * x).sin());
        let b = scalar_curve(m, |x| x.exp());
        let combo: Vec<ComplexMatrix> = a.iter().zip(&b).map(|(x, y)| &x.scale(2.0) + &y.scale_c(I)).collect();
        for order in 1..=4 {
            let da = fd_nodes(&a, order, h).unwrap();
            let db = fd_nodes(&b, order, h).unwrap();
            let dc = fd_nodes(&combo, order, h).unwrap();
            for j in 0..=m {
                let expect = &da[j].scale(2.0) + &db[j].scale_c(I);
                let scale = 1.0 + sun::frob_norm(&expect);
                assert!(sun::frob_norm(&(&dc[j] - &expect)) < 1e-7 * scale);
            }
        }
    }

    fn phase_curve(m: usize, theta: impl Fn(f64) -> f64) -> SegmentCurve {
        SegmentCurve::from_fn(1, m, |x| UnitaryPoint::new_unchecked(pauli::phase_z(theta(x))))
    }

    // Interior nodes converge at O(h^2); the two nodes nearest each end
    // compose one-sided with central stencils and converge at O(h).
    fn split_errors(m: usize, theta: fn(f64) -> f64, exact: f64) -> (f64, f64) {
        let c = phase_curve(m, theta);
        let d = covariant_derivative(&c, 1).unwrap();
        let err = |j: usize| (sun::frob_norm(&d[j]) - exact).abs();
        let interior = (2..=m - 2).map(err).fold(0.0, f64::max);
        let ends = [0, 1, m - 1, m].into_iter().map(err).fold(0.0, f64::max);
        (interior, ends)
    }

    #[test]
    fn covariant_derivative_of_geodesic_vanishes() {
        let (i32_, e32) = split_errors(32, |x| 0.8 * x, 0.0);
        let (i64_, e64) = split_errors(64, |x| 0.8 * x, 0.0);
        assert!(i32_ < 1e-12 && i64_ < 1e-12);
        assert!(e32 < 0.05 && e64 < 0.6 * e32);
    }

    #[test]
    fn covariant_derivative_of_quadratic_phase() {
        // ||D_x U_x|| = |theta''| ||sigma_z|| = 2 sqrt 2
        let exact = 2.0 * 2f64.sqrt();
        let (i32_, e32) = split_errors(32, |x| x * x, exact);
        let (i64_, e64) = split_errors(64, |x| x * x, exact);
        assert!(i32_ < 0.05 && i64_ < 0.3 * i32_, "{i32_} {i64_}");
        assert!(e64 < 0.6 * e32, "{e32} {e64}");
    }

    #[test]
    fn covariant_derivative_matches_hamiltonian_identity() {
        // D_x U_x = -i H_x U
        let m = 64;
        let c = SegmentCurve::from_fn(1, m, |x| {
            let a = &pauli::x().scale(0.7 * x * x) + &pauli::z().scale(x.sin());
            let alg = crate::sun::AlgebraElement::from_skew0(&a.scale_c(I));
            UnitaryPoint::new_unchecked(crate::sun::expm(&alg).into_matrix())
        });
        let d = covariant_derivative(&c, 1).unwrap();
        let track = hamiltonian_track(&c, 1e-10).unwrap();
        let hx = fd_nodes(&track.h, 1, c.h()).unwrap();
        for j in 2..=m - 2 {
            let expect = &hx[j].scale_c(-I) * c.samples[j].matrix();
            assert!(sun::frob_norm(&(&d[j] - &expect)) < 5e-3, "node {j}");
        }
    }

    #[test]
    fn hamiltonian_track_examples() {
        let c = phase_curve(32, |x| x);
        let track = hamiltonian_track(&c, 1e-10).unwrap();
        let minus_z = pauli::z().scale(-1.0);
        assert!(track.h.iter().all(|h| sun::frob_norm(&(h - &minus_z)) < 2e-3));
        assert!(!track.flagged);

        let c = SegmentCurve::from_fn(1, 16, |_| UnitaryPoint::identity(3));
        assert!(hamiltonian_track(&c, 1e-10).unwrap().h.iter().all(|h| sun::frob_norm(h) == 0.0));

        let c = phase_curve(64, |x| x.powi(3));
        let track = hamiltonian_track(&c, 1e-10).unwrap();
        for (j, h) in track.h.iter().enumerate() {
            let x = c.node_x(j);
            let expect = pauli::z().scale(-3.0 * x * x);
            assert!(sun::frob_norm(&(h - &expect)) < 5e-3, "node {j}");
        }
    }

    #[test]
    fn knot_data_validation() {
        let id = UnitaryPoint::identity(2);
        let ok = KnotData::new(vec![id.clone(), id.clone()], ComplexMatrix::zeros(2), EndpointMode::NaturalSecondDerivative, None);
        assert!(ok.is_ok());
        let missing = KnotData::new(vec![id.clone(), id.clone()], ComplexMatrix::zeros(2), EndpointMode::ClampedVelocity, None);
        assert!(missing.is_err());
        let not_tangent = KnotData::new(vec![id.clone(), id], pauli::x(), EndpointMode::NaturalSecondDerivative, None);
        assert!(not_tangent.is_err());
    }
}
