//! Admissible initial data and the order-0 compatibility report.
//!
//! Segment `l` is `U_l(s) = p_{l-1} exp(beta(s) X_l) exp(c(s) A + d(s) B)` on
//! `s in [0, 1]` with `X_l = log(p_{l-1}^{-1} p_l)` and quintic `beta, c, d`.
//! `beta` runs from 0 to 1 with vanishing second derivative at both ends and
//! zero slope at interior junctions, so `U` is C^2 there with `U_x = 0`. The
//! clamp velocities enter through the slopes of `beta` (their component
//! along `X`) and the correction factors `A`, `B` (the rest). A final Newton
//! pass moves the nodes next to each boundary so the discrete boundary rows
//! used by the flow hold to rounding.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::extrinsic;
use crate::flow;
use crate::grid::{self, EndpointMode, GridError, KnotData, SegmentCurve, SplineState};
use crate::sun::{self, AlgebraElement, ComplexMatrix, SunError, UnitaryPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("M = {0} is below the minimum of 16")]
    GridTooSmall(usize),
    #[error(transparent)]
    Sun(#[from] SunError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("boundary correction stalled at scaled residual {0:.3e}")]
    Correction(f64),
}

// Quintic Hermite basis on [0, 1] with zero second derivatives at both ends.
fn h1(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn g0(s: f64) -> f64 {
    s - 6.0 * s.powi(3) + 8.0 * s.powi(4) - 3.0 * s.powi(5)
}

fn g1(s: f64) -> f64 {
    -4.0 * s.powi(3) + 7.0 * s.powi(4) - 3.0 * s.powi(5)
}

/// Split `a = kappa x + rest` with `rest` orthogonal to `x`.
fn split_along(a: &ComplexMatrix, x: &ComplexMatrix) -> (f64, ComplexMatrix) {
    let xx = sun::frob_norm_sqr(x);
    if xx < 1e-24 {
        return (0.0, a.clone());
    }
    let kappa = sun::real_inner(a, x) / xx;
    let mut rest = a.clone();
    rest.axpy(-kappa, x);
    (kappa, rest)
}

/// The quintic blend before boundary correction.
pub fn blend_state(knots: &KnotData, m: usize) -> Result<SplineState, InitError> {
    let q = knots.segments();
    let p = &knots.knots;
    let logs: Vec<AlgebraElement> =
        (0..q).map(|l| sun::logm(&p[l].adjoint().compose(&p[l + 1]))).collect::<Result<_, _>>()?;
    let a_full = p[0].adjoint().matrix() * &knots.initial_velocity;
    let (kappa0, a_rest) = split_along(&a_full, logs[0].matrix());
    let (kappa1, b_rest) = match (knots.endpoint_mode, &knots.terminal_velocity) {
        (EndpointMode::ClampedVelocity, Some(v)) => split_along(&(p[q].adjoint().matrix() * v), logs[q - 1].matrix()),
        _ => (0.0, ComplexMatrix::zeros(knots.dim())),
    };
    let mut u_segments = Vec::with_capacity(q);
    for l in 0..q {
        let x = logs[l].matrix();
        let k0 = if l == 0 { kappa0 } else { 0.0 };
        let k1 = if l + 1 == q { kappa1 } else { 0.0 };
        let base = p[l].matrix();
        let samples = (0..=m)
            .map(|j| {
                let s = j as f64 / m as f64;
                let beta = h1(s) + k0 * g0(s) + k1 * g1(s);
                let mut corr = ComplexMatrix::zeros(knots.dim());
                if l == 0 {
                    corr.axpy(g0(s), &a_rest);
                }
                if l + 1 == q {
                    corr.axpy(g1(s), &b_rest);
                }
                let main = sun::expm_raw(&x.scale(beta));
                let u = &(base * &main) * &sun::expm_raw(&sun::skew0(&corr));
                UnitaryPoint::new_unchecked(u)
            })
            .collect();
        u_segments.push(SegmentCurve { index: l + 1, samples });
    }
    // exact pinned values
    for l in 0..q {
        u_segments[l].samples[0] = p[l].clone();
        u_segments[l].samples[m] = p[l + 1].clone();
    }
    let mut v_segments = Vec::with_capacity(q);
    for l in 0..q {
        let start = &p[l + 1];
        let end = u_segments[l].last().clone();
        let y = sun::logm(&start.adjoint().compose(&end))?;
        let mut samples: Vec<UnitaryPoint> = (0..=m)
            .map(|j| {
                let s = j as f64 / m as f64;
                UnitaryPoint::new_unchecked(start.matrix() * &sun::expm_raw(&y.matrix().scale(s)))
            })
            .collect();
        samples[0] = start.clone();
        samples[m] = end;
        v_segments.push(SegmentCurve { index: l + 1, samples });
    }
    Ok(SplineState::new(u_segments, v_segments, 0.0)?)
}

/// Nodes adjusted by the boundary correction, as `(segment, node)`.
fn correction_nodes(q: usize, m: usize) -> Vec<(usize, usize)> {
    let mut nodes = vec![(0, 1)];
    for a in 0..q.saturating_sub(1) {
        nodes.extend([(a, m - 1), (a + 1, 1), (a + 1, 2)]);
    }
    nodes.extend([(q - 1, m - 2), (q - 1, m - 1)]);
    nodes
}

/// Boundary rows in su(N) coordinates, each scaled by `h^k` for a `k`-th
/// derivative as in the flow matrix.
fn scaled_rows(state: &SplineState, knots: &KnotData, sigma: f64) -> Result<Vec<f64>, GridError> {
    let h = state.h();
    let t = extrinsic::boundary_terms(state, knots, sigma)?;
    let coords = |r: &ComplexMatrix, at: &ComplexMatrix, scale: f64| -> Vec<f64> {
        sun::algebra_coords(&(r * &at.adjoint())).into_iter().map(|c| c * scale).collect()
    };
    let start = state.u_segments[0].first().matrix();
    let mut out = coords(&t.clamp_velocity, start, h);
    for j in &t.junctions {
        out.extend(coords(&j.velocity_jump, &j.at, h));
        out.extend(coords(&j.acceleration_jump, &j.at, h * h));
        out.extend(coords(&j.flux, &j.at, h * h * h));
    }
    let endpoint_scale = match knots.endpoint_mode {
        EndpointMode::NaturalSecondDerivative => h * h,
        EndpointMode::ClampedVelocity => h,
    };
    out.extend(coords(&t.terminal.endpoint, &t.terminal.at, endpoint_scale));
    out.extend(coords(&t.terminal.flux, &t.terminal.at, h * h * h));
    Ok(out)
}

fn perturb(state: &mut SplineState, node: (usize, usize), coords: &[f64]) {
    let n = state.dim();
    let a = sun::algebra_from_coords(n, coords);
    let s = &mut state.u_segments[node.0].samples[node.1];
    *s = UnitaryPoint::new_unchecked(&sun::expm_raw(a.matrix()) * s.matrix());
}

const CORRECTION_TOL: f64 = 1e-13;
const CORRECTION_ACCEPT: f64 = 1e-11;

/// Newton on the nodes next to each boundary until every discrete boundary
/// row of the flow holds. `sigma` only weighs the `V_x` coupling.
pub fn correct_boundary(state: &mut SplineState, knots: &KnotData, sigma: f64) -> Result<(), InitError> {
    let nodes = correction_nodes(state.segments(), state.grid_size());
    let dim = state.dim() * state.dim() - 1;
    let unknowns = nodes.len() * dim;
    let eta = 1e-6;
    let mut r = scaled_rows(state, knots, sigma)?;
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut best = norm(&r);
    for _ in 0..40 {
        if best <= CORRECTION_TOL {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(r.len(), unknowns);
        for (k, &node) in nodes.iter().enumerate() {
            for c in 0..dim {
                let mut e = vec![0.0; dim];
                e[c] = eta;
                let mut plus = state.clone();
                perturb(&mut plus, node, &e);
                e[c] = -eta;
                let mut minus = state.clone();
                perturb(&mut minus, node, &e);
                let rp = scaled_rows(&plus, knots, sigma)?;
                let rm = scaled_rows(&minus, knots, sigma)?;
                for i in 0..r.len() {
                    jac[(i, k * dim + c)] = (rp[i] - rm[i]) / (2.0 * eta);
                }
            }
        }
        let step = jac.lu().solve(&DVector::from_vec(r.iter().map(|x| -x).collect())).ok_or(InitError::Correction(best))?;
        let mut trial = state.clone();
        for (k, &node) in nodes.iter().enumerate() {
            perturb(&mut trial, node, &step.as_slice()[k * dim..(k + 1) * dim]);
        }
        let rt = scaled_rows(&trial, knots, sigma)?;
        let nt = norm(&rt);
        if nt >= best {
            break;
        }
        *state = trial;
        r = rt;
        best = nt;
    }
    if best > CORRECTION_ACCEPT {
        return Err(InitError::Correction(best));
    }
    Ok(())
}

/// Admissible initial data: pinned values exact, every discrete boundary
/// row of the flow satisfied, `V` legs geodesic.
pub fn build_initial(knots: &KnotData, m: usize) -> Result<SplineState, InitError> {
    if m < flow::MIN_FLOW_INTERVALS {
        return Err(InitError::GridTooSmall(m));
    }
    let mut state = blend_state(knots, m)?;
    // V legs are constant here (U passes through the knots), so sigma is inert
    correct_boundary(&mut state, knots, 1.0)?;
    Ok(state)
}

/// Two-tier pass thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompatTolerances {
    /// Positional, velocity, jump and flux rows.
    pub boundary: f64,
    /// Rows matching `L^4 U` with `sigma^2 D_x V_x`.
    pub higher_order: f64,
}

impl Default for CompatTolerances {
    fn default() -> Self {
        Self { boundary: 1e-6, higher_order: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub residuals: BTreeMap<String, f64>,
    pub max_residual: f64,
    pub pass: bool,
    pub tolerances: CompatTolerances,
    /// Rows above their tolerance.
    pub failing: Vec<String>,
}

fn is_higher_order(name: &str) -> bool {
    name.starts_with("l4_") || name.starts_with("dxvx_")
}

/// Every order-0 compatibility condition evaluated with discrete operators.
pub fn check_compatibility(state: &SplineState, knots: &KnotData, sigma: f64) -> Result<CompatibilityReport, InitError> {
    check_compatibility_with(state, knots, sigma, CompatTolerances::default())
}

pub fn check_compatibility_with(
    state: &SplineState,
    knots: &KnotData,
    sigma: f64,
    tol: CompatTolerances,
) -> Result<CompatibilityReport, InitError> {
    let h = state.h();
    let m = state.grid_size();
    let q = state.segments();
    let s2 = sigma * sigma;
    let mut residuals: BTreeMap<String, f64> = extrinsic::boundary_terms(state, knots, sigma)?.norms().into_iter().collect();

    let us: Vec<Vec<ComplexMatrix>> = state.u_segments.iter().map(|c| c.matrices()).collect();
    let l4 = |l: usize, j: usize| -> Result<ComplexMatrix, InitError> {
        flow::l4_at(&us[l], j, h).map_err(|e| match e {
            flow::FlowError::Grid(g) => InitError::Grid(g),
            other => InitError::Grid(GridError::InvalidState(other.to_string())),
        })
    };
    let dxvx: Vec<ComplexMatrix> = state
        .v_segments
        .iter()
        .map(|v| {
            let s = v.matrices();
            let d2 = grid::fd_at(&s, 2, m, h)?;
            Ok(sun::project_at(&d2, &s[m]))
        })
        .collect::<Result<_, GridError>>()?;
    let n = sun::frob_norm;
    residuals.insert("l4_start".into(), n(&l4(0, 0)?));
    for l in 0..q {
        residuals.insert(format!("dxvx_v{}_end", l + 1), n(&dxvx[l]));
        let sv = dxvx[l].scale(s2);
        let left = l4(l, m)?;
        if l + 1 < q {
            let right = l4(l + 1, 0)?;
            residuals.insert(format!("l4_junction{}_left", l + 1), n(&(&left - &sv)));
            residuals.insert(format!("l4_junction{}_right", l + 1), n(&(&right - &sv)));
        } else {
            residuals.insert("l4_end".into(), n(&(&left - &sv)));
        }
    }
    let failing: Vec<String> = residuals
        .iter()
        .filter(|(k, v)| **v > if is_higher_order(k) { tol.higher_order } else { tol.boundary } || !v.is_finite())
        .map(|(k, _)| k.clone())
        .collect();
    let max_residual = residuals.values().copied().fold(0.0, f64::max);
    Ok(CompatibilityReport { residuals, max_residual, pass: failing.is_empty(), tolerances: tol, failing })
}
