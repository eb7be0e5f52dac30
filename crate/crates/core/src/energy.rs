//! Energies, residuals and stationarity diagnostics.

use std::collections::BTreeMap;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::extrinsic;
use crate::grid::{self, GridError, KnotData, SegmentCurve, SplineState};
use crate::sun::{self, ComplexMatrix, I};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("states live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

fn check_sigma(sigma: f64) -> Result<f64, EnergyError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(EnergyError::NonPositiveSigma(sigma))
    }
}

/// `1/2 int |D_x U_x|^2` over one segment, with `D_x U_x = P(U'')` from the
/// same stencils the flow uses. Alternating projected first differences
/// lose an order at the two nodes next to each end, and that mismatch is
/// enough to make the energy creep up as a run settles.
pub fn segment_bending(u: &SegmentCurve) -> Result<f64, EnergyError> {
    let s = u.matrices();
    let dens = (0..s.len())
        .map(|j| Ok(0.5 * sun::frob_norm_sqr(&sun::project_at(&grid::fd_at(&s, 2, j, u.h())?, &s[j]))))
        .collect::<Result<Vec<f64>, GridError>>()?;
    Ok(trapezoid(&dens, u.h()))
}

/// `F(U) = 1/2 sum_l int |D_x U_{l,x}|^2`.
pub fn bending_energy(state: &SplineState) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for u in &state.u_segments {
        total += segment_bending(u)?;
    }
    Ok(total)
}

/// `1/2 int |V_x|^2` with the entrywise derivative.
pub fn tension_energy(v: &SegmentCurve) -> Result<f64, EnergyError> {
    let d = grid::fd_derivative(v, 1)?;
    let dens: Vec<f64> = d.iter().map(|z| 0.5 * sun::frob_norm_sqr(z)).collect();
    Ok(trapezoid(&dens, v.h()))
}

/// Bending, summed tension and `F_sigma = bending + tension / sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    pub bending: f64,
    pub tension: f64,
    pub total: f64,
}

pub fn energy_parts(state: &SplineState, sigma: f64) -> Result<EnergyParts, EnergyError> {
    let sigma = check_sigma(sigma)?;
    let bending = bending_energy(state)?;
    let mut tension = 0.0;
    for v in &state.v_segments {
        tension += tension_energy(v)?;
    }
    Ok(EnergyParts { bending, tension, total: bending + tension / (sigma * sigma) })
}

/// `F_sigma`.
pub fn total_energy(state: &SplineState, sigma: f64) -> Result<f64, EnergyError> {
    Ok(energy_parts(state, sigma)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CubicResidual {
    pub sup: f64,
    pub l2: f64,
}

impl CubicResidual {
    fn from_norms(norms: &[f64], h: f64) -> Self {
        let sup = norms.iter().copied().fold(0.0, f64::max);
        let l2 = (h * norms.iter().map(|r| r * r).sum::<f64>()).sqrt();
        Self { sup, l2 }
    }

    /// Combine per-segment values: largest sup, root-sum-square of L^2.
    pub fn combine(parts: &[CubicResidual]) -> Self {
        Self {
            sup: parts.iter().map(|p| p.sup).fold(0.0, f64::max),
            l2: parts.iter().map(|p| p.l2 * p.l2).sum::<f64>().sqrt(),
        }
    }
}

pub const MIN_CUBIC_INTERVALS: usize = 12;

/// Nodes kept away from each end so that every stencil in the chain is
/// central: three for the Hamiltonian form, four for the intrinsic form.
pub const CUBIC_MARGIN: usize = 3;
pub const INTRINSIC_MARGIN: usize = 4;

/// Riemannian-cubic residual `r_j = (-i H_xxx + [H, H_xx]) U_j` with `H`
/// from the Hamiltonian track, at nodes `3..=M-3`, as `(node, r_j)`.
pub fn cubic_residual_nodes(u: &SegmentCurve) -> Result<Vec<(usize, ComplexMatrix)>, EnergyError> {
    let m = u.grid_size();
    if m < MIN_CUBIC_INTERVALS {
        return Err(GridError::TooFewIntervals { m, min: MIN_CUBIC_INTERVALS }.into());
    }
    let h = u.h();
    let track = grid::hamiltonian_track(u, f64::INFINITY)?;
    let hxx = grid::fd_nodes(&track.h, 2, h)?;
    let hxxx = grid::fd_nodes(&track.h, 3, h)?;
    Ok((CUBIC_MARGIN..=m - CUBIC_MARGIN)
        .map(|j| {
            let mut r = hxxx[j].scale_c(-I);
            r += &sun::bracket(&track.h[j], &hxx[j]);
            (j, &r * u.samples[j].matrix())
        })
        .collect())
}

/// Intrinsic form `D_x^3 U_x + R(D_x U_x, U_x) U_x` by alternation at nodes
/// `4..=M-4`.
pub fn cubic_residual_intrinsic_nodes(u: &SegmentCurve) -> Result<Vec<(usize, ComplexMatrix)>, EnergyError> {
    let m = u.grid_size();
    if m < MIN_CUBIC_INTERVALS {
        return Err(GridError::TooFewIntervals { m, min: MIN_CUBIC_INTERVALS }.into());
    }
    let samples = u.matrices();
    let chain = grid::covariant_chain(&samples, 3, u.h())?;
    Ok((INTRINSIC_MARGIN..=m - INTRINSIC_MARGIN)
        .map(|j| {
            let us = samples[j].adjoint();
            let a = &chain[1][j] * &us;
            let b = &chain[0][j] * &us;
            let r = &sun::curvature_raw(&a, &b, &b) * &samples[j];
            (j, &chain[3][j] + &r)
        })
        .collect())
}

fn summarize(nodes: &[(usize, ComplexMatrix)], h: f64) -> CubicResidual {
    let norms: Vec<f64> = nodes.iter().map(|(_, r)| sun::frob_norm(r)).collect();
    CubicResidual::from_norms(&norms, h)
}

/// Sup and L^2 norms of [`cubic_residual_nodes`].
pub fn cubic_residual(u: &SegmentCurve) -> Result<CubicResidual, EnergyError> {
    Ok(summarize(&cubic_residual_nodes(u)?, u.h()))
}

/// Sup and L^2 norms of [`cubic_residual_intrinsic_nodes`]; agrees with
/// [`cubic_residual`] to O(h^2).
pub fn cubic_residual_intrinsic(u: &SegmentCurve) -> Result<CubicResidual, EnergyError> {
    Ok(summarize(&cubic_residual_intrinsic_nodes(u)?, u.h()))
}

/// `sup_j ||P(V_xx)_j||_F` over interior nodes.
pub fn geodesic_residual(v: &SegmentCurve) -> Result<f64, EnergyError> {
    let m = v.grid_size();
    let samples = v.matrices();
    let d2 = grid::fd_nodes(&samples, 2, v.h())?;
    Ok((1..m).map(|j| sun::frob_norm(&sun::project_at(&d2[j], &samples[j]))).fold(0.0, f64::max))
}

/// Residual norm of every boundary and junction condition.
pub fn boundary_residuals(state: &SplineState, knots: &KnotData, sigma: f64) -> Result<BTreeMap<String, f64>, EnergyError> {
    check_sigma(sigma)?;
    Ok(extrinsic::boundary_terms(state, knots, sigma)?.norms().into_iter().collect())
}

fn l2_sq_diff(a: &SegmentCurve, b: &SegmentCurve) -> f64 {
    let dens: Vec<f64> =
        a.samples.iter().zip(&b.samples).map(|(x, y)| sun::frob_norm_sqr(&(y.matrix() - x.matrix()))).collect();
    trapezoid(&dens, a.h())
}

/// `Z_1 = sum ||dU/dt||^2 + sigma^-2 sum ||dV/dt||^2` from two states.
pub fn z1_speed(prev: &SplineState, next: &SplineState, dt: f64, sigma: f64) -> Result<f64, EnergyError> {
    let sigma = check_sigma(sigma)?;
    if !(dt > 0.0) {
        return Err(EnergyError::NonPositiveDt(dt));
    }
    if !prev.same_grid(next) {
        return Err(EnergyError::GridMismatch);
    }
    let u: f64 = prev.u_segments.iter().zip(&next.u_segments).map(|(a, b)| l2_sq_diff(a, b)).sum();
    let v: f64 = prev.v_segments.iter().zip(&next.v_segments).map(|(a, b)| l2_sq_diff(a, b)).sum();
    Ok((u + v / (sigma * sigma)) / (dt * dt))
}

/// `||U(x_l) - p_l||_F` for `l = 1..=q`.
pub fn fit_error(state: &SplineState, knots: &KnotData) -> Vec<f64> {
    state
        .u_segments
        .iter()
        .zip(knots.knots.iter().skip(1))
        .map(|(u, p)| sun::frob_norm(&(u.last().matrix() - p.matrix())))
        .collect()
}

/// Quantities bounded by the initial energy: `sum ||D_x U_{l,x}||^2_{L^2}`
/// and `sigma^-2 sum ||V_{l,x}||^2_{L^2}`, both at most `2 F_sigma(0)`.
pub fn a_priori_terms(parts: &EnergyParts, sigma: f64) -> (f64, f64) {
    (2.0 * parts.bending, 2.0 * parts.tension / (sigma * sigma))
}

/// Flat per-snapshot diagnostics. Boundary residuals serialize as
/// `bc_<name>` keys next to the scalar fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub t: f64,
    pub bending_energy: f64,
    pub tension_energy: f64,
    pub total_energy: f64,
    pub cubic_residual_sup: f64,
    pub cubic_residual_l2: f64,
    pub geodesic_residual_sup: f64,
    pub bc_residuals: BTreeMap<String, f64>,
    pub unitarity_drift: f64,
    pub z1_speed: f64,
    pub fit_error_max: f64,
}

impl DiagnosticsReport {
    pub fn max_bc_residual(&self) -> f64 {
        self.bc_residuals.values().copied().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.bending_energy,
            self.tension_energy,
            self.total_energy,
            self.cubic_residual_sup,
            self.cubic_residual_l2,
            self.geodesic_residual_sup,
            self.unitarity_drift,
            self.z1_speed,
            self.fit_error_max,
        ]
        .iter()
        .chain(self.bc_residuals.values())
        .all(|v| v.is_finite())
    }
}

impl Serialize for DiagnosticsReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(10 + self.bc_residuals.len()))?;
        map.serialize_entry("t", &self.t)?;
        map.serialize_entry("bending_energy", &self.bending_energy)?;
        map.serialize_entry("tension_energy", &self.tension_energy)?;
        map.serialize_entry("total_energy", &self.total_energy)?;
        map.serialize_entry("cubic_residual_sup", &self.cubic_residual_sup)?;
        map.serialize_entry("cubic_residual_l2", &self.cubic_residual_l2)?;
        map.serialize_entry("geodesic_residual_sup", &self.geodesic_residual_sup)?;
        for (k, v) in &self.bc_residuals {
            map.serialize_entry(&format!("bc_{k}"), v)?;
        }
        map.serialize_entry("unitarity_drift", &self.unitarity_drift)?;
        map.serialize_entry("z1_speed", &self.z1_speed)?;
        map.serialize_entry("fit_error_max", &self.fit_error_max)?;
        map.end()
    }
}

/// Full diagnostics of one state; `z1` is supplied by the caller since it
/// needs the previous state.
pub fn diagnose(state: &SplineState, knots: &KnotData, sigma: f64, z1: f64) -> Result<DiagnosticsReport, EnergyError> {
    let parts = energy_parts(state, sigma)?;
    let cubic: Vec<CubicResidual> =
        state.u_segments.iter().map(cubic_residual).collect::<Result<_, _>>()?;
    let cubic = CubicResidual::combine(&cubic);
    let mut geo: f64 = 0.0;
    for v in &state.v_segments {
        geo = geo.max(geodesic_residual(v)?);
    }
    Ok(DiagnosticsReport {
        t: state.t,
        bending_energy: parts.bending,
        tension_energy: parts.tension,
        total_energy: parts.total,
        cubic_residual_sup: cubic.sup,
        cubic_residual_l2: cubic.l2,
        geodesic_residual_sup: geo,
        bc_residuals: boundary_residuals(state, knots, sigma)?,
        unitarity_drift: state.unitarity_drift(),
        z1_speed: z1,
        fit_error_max: fit_error(state, knots).into_iter().fold(0.0, f64::max),
    })
}

/// Convenience for tests and the oracle: a matrix curve from a closure.
pub fn sample_segment(index: usize, m: usize, f: impl Fn(f64) -> ComplexMatrix) -> SegmentCurve {
    SegmentCurve::from_fn(index, m, |x| sun::UnitaryPoint::new_unchecked(f(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EndpointMode;
    use crate::sun::{pauli, UnitaryPoint};

    fn phase(index: usize, m: usize, theta: impl Fn(f64) -> f64) -> SegmentCurve {
        sample_segment(index, m, |x| pauli::phase_z(theta(x)))
    }

    fn expx(index: usize, m: usize, a: f64) -> SegmentCurve {
        // exp(x i a sigma_z) == phase_z(a x)
        phase(index, m, move |x| a * x)
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let v: Vec<f64> = (0..=10).map(|j| 2.0 + 3.0 * j as f64 / 10.0).collect();
        assert!((trapezoid(&v, 0.1) - 3.5).abs() < 1e-14);
    }

    #[test]
    fn bending_examples() {
        assert!(segment_bending(&expx(1, 32, 0.9)).unwrap() < 1e-3);
        let c = SegmentCurve::from_fn(1, 16, |_| UnitaryPoint::identity(2));
        assert_eq!(segment_bending(&c).unwrap(), 0.0);
        // theta = x^2: 1/2 int 2 |theta''|^2 = 4
        let e32 = (segment_bending(&phase(1, 32, |x| x * x)).unwrap() - 4.0).abs();
        let e64 = (segment_bending(&phase(1, 64, |x| x * x)).unwrap() - 4.0).abs();
        assert!(e64 < 0.05 && e64 < 0.6 * e32, "{e32} {e64}");
    }

    #[test]
    fn tension_examples() {
        let c = SegmentCurve::from_fn(1, 16, |_| UnitaryPoint::identity(2));
        assert_eq!(tension_energy(&c).unwrap(), 0.0);
        assert!((tension_energy(&expx(1, 64, 1.0)).unwrap() - 1.0).abs() < 1e-3);
        assert!((tension_energy(&expx(1, 64, 0.5)).unwrap() - 0.25).abs() < 1e-3);
    }

    fn geodesic_state(m: usize) -> SplineState {
        let u = vec![expx(1, m, 0.5), phase(2, m, |x| 0.5 * x)];
        let v = vec![expx(1, m, 0.3), expx(2, m, 0.3)];
        SplineState::new(u, v, 0.0).unwrap()
    }

    #[test]
    fn total_energy_scaling_and_errors() {
        let s = geodesic_state(64);
        let p1 = energy_parts(&s, 1.0).unwrap();
        // two legs of length L = 0.3 sqrt 2: sum L^2 / 2 = 0.18
        assert!((p1.tension - 0.18).abs() < 1e-3);
        let p2 = energy_parts(&s, 2.0).unwrap();
        assert!((p2.total - p2.bending - 0.25 * (p1.total - p1.bending)).abs() < 1e-14);
        assert!(matches!(total_energy(&s, 0.0), Err(EnergyError::NonPositiveSigma(_))));
        assert!(matches!(total_energy(&s, -1.0), Err(EnergyError::NonPositiveSigma(_))));
    }

    #[test]
    fn cubic_residual_examples() {
        assert!(cubic_residual(&expx(1, 32, 0.8)).unwrap().sup < 1e-8);
        let c = cubic_residual(&phase(1, 64, |x| 0.5 * x.powi(3) - x * x)).unwrap();
        assert!(c.sup < 1e-2, "{:?}", c);
        let c = cubic_residual(&phase(1, 64, |x| x.powi(4))).unwrap();
        assert!((c.sup - 24.0 * 2f64.sqrt()).abs() < 0.5, "{:?}", c);
        assert!(cubic_residual(&expx(1, 10, 0.8)).is_err());
    }

    fn wobbly(m: usize) -> SegmentCurve {
        sample_segment(1, m, |x| {
            let mut a = pauli::x().scale(0.6 * x * x + 0.2);
            a.axpy((1.3 * x).sin(), &pauli::y());
            a.axpy(0.4 * x * x * x, &pauli::z());
            sun::expm(&sun::AlgebraElement::from_skew0(&a.scale_c(I))).into_matrix()
        })
    }

    #[test]
    fn cubic_residual_forms_agree() {
        let mut prev = f64::INFINITY;
        for m in [32, 64, 128] {
            let c = wobbly(m);
            let a = cubic_residual_nodes(&c).unwrap();
            let b = cubic_residual_intrinsic_nodes(&c).unwrap();
            let diff = b
                .iter()
                .map(|(j, rb)| sun::frob_norm(&(&a[j - CUBIC_MARGIN].1 - rb)))
                .fold(0.0, f64::max);
            assert!(cubic_residual(&c).unwrap().sup > 0.1);
            assert!(diff < prev / 3.0, "m={m} diff={diff}");
            prev = diff;
        }
    }

    #[test]
    fn geodesic_residual_examples() {
        assert!(geodesic_residual(&expx(1, 32, 1.3)).unwrap() < 1e-12);
        let c = SegmentCurve::from_fn(1, 16, |_| UnitaryPoint::identity(2));
        assert_eq!(geodesic_residual(&c).unwrap(), 0.0);
        let g = geodesic_residual(&phase(1, 64, |x| x * x)).unwrap();
        assert!((g - 2.0 * 2f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn z1_examples() {
        let a = geodesic_state(32);
        assert_eq!(z1_speed(&a, &a, 0.1, 1.0).unwrap(), 0.0);
        // perturb U_1 by dt W with W = c Id, ||W||^2 = 2 c^2 at every node
        let dt = 1e-3;
        let mut b = a.clone();
        for s in b.u_segments[0].samples.iter_mut() {
            let mut m = s.matrix().clone();
            m.axpy(dt * 0.5, &ComplexMatrix::identity(2));
            *s = UnitaryPoint::new_unchecked(m);
        }
        assert!((z1_speed(&a, &b, dt, 0.3).unwrap() - 0.5).abs() < 1e-9);
        assert!(z1_speed(&a, &geodesic_state(16), dt, 1.0).is_err());
        assert!(z1_speed(&a, &b, 0.0, 1.0).is_err());
    }

    #[test]
    fn boundary_residual_detects_pinned_value() {
        let m = 32;
        let s = SplineState::new(
            vec![SegmentCurve::from_fn(1, m, |_| UnitaryPoint::identity(2))],
            vec![SegmentCurve::from_fn(1, m, |_| UnitaryPoint::identity(2))],
            0.0,
        )
        .unwrap();
        let eps = 1e-3;
        let p1 = UnitaryPoint::new_unchecked(pauli::phase_z(eps));
        let knots = KnotData::new(
            vec![UnitaryPoint::identity(2), p1.clone()],
            ComplexMatrix::zeros(2),
            EndpointMode::NaturalSecondDerivative,
            None,
        )
        .unwrap();
        let r = boundary_residuals(&s, &knots, 1.0).unwrap();
        let expect = sun::frob_norm(&(&ComplexMatrix::identity(2) - p1.matrix()));
        assert!((r["v1_start"] - expect).abs() < 1e-15);
        for (k, v) in &r {
            if k != "v1_start" {
                assert_eq!(*v, 0.0, "{k}");
            }
        }
    }

    #[test]
    fn report_serializes_flat() {
        let s = geodesic_state(32);
        let knots = KnotData::new(
            vec![UnitaryPoint::identity(2), s.u_segments[0].last().clone(), s.u_segments[1].last().clone()],
            ComplexMatrix::zeros(2),
            EndpointMode::NaturalSecondDerivative,
            None,
        )
        .unwrap();
        let r = diagnose(&s, &knots, 1.0, 0.0).unwrap();
        assert!(r.is_finite());
        let v = serde_json::to_value(&r).unwrap();
        let obj = v.as_object().unwrap();
        assert!(obj.contains_key("bc_junction1_flux"));
        assert!(obj.values().all(|x| x.is_number()));
    }
}
