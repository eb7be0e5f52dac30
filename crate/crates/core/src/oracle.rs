//! Independent references: the exact stationary spline in a commutative
//! subgroup, and a finite-difference check of the flow velocity against the
//! discrete energy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::energy;
use crate::extrinsic;
use crate::flow;
use crate::grid::{EndpointMode, GridError, KnotData, SegmentCurve, Side, SplineState};
use crate::sun::{self, pauli, ComplexMatrix, UnitaryPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("need at least two phases")]
    TooFewPhases,
    #[error("clamped endpoint needs a terminal slope")]
    MissingTerminalSlope,
    #[error("stationary system is singular")]
    Singular,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Flow(#[from] flow::FlowError),
    #[error(transparent)]
    Energy(#[from] energy::EnergyError),
}

/// Stationary phases: a cubic `theta_l` per segment and an affine fitting
/// leg `phi_l` from the knot phase to `theta(x_l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutativeSolution {
    /// `[a0, a1, a2, a3]` in the local coordinate `s = x - x_{l-1}`.
    pub cubics: Vec<[f64; 4]>,
    /// `[b0, b1]` likewise.
    pub legs: Vec<[f64; 2]>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl CommutativeSolution {
    /// Embed as `U = exp(i theta sigma_z)`.
    pub fn embed(&self) -> Result<SplineState, GridError> {
        let seg = |l: usize, ph: &[f64]| {
            SegmentCurve::new(l + 1, ph.iter().map(|&t| UnitaryPoint::new_unchecked(pauli::phase_z(t))).collect())
        };
        let u = self.u.iter().enumerate().map(|(l, p)| seg(l, p)).collect::<Result<_, _>>()?;
        let v = self.v.iter().enumerate().map(|(l, p)| seg(l, p)).collect::<Result<_, _>>()?;
        SplineState::new(u, v, 0.0)
    }

    /// Knot data reproducing the problem in SU(2).
    pub fn knot_data(phases: &[f64], slope0: f64, endpoint_mode: EndpointMode, slope_q: Option<f64>) -> Result<KnotData, GridError> {
        let knots = phases.iter().map(|&t| UnitaryPoint::new_unchecked(pauli::phase_z(t))).collect::<Vec<_>>();
        let vel = |t: f64, w: f64| &pauli::z().scale_c(sun::I).scale(w) * &pauli::phase_z(t);
        let v0 = vel(phases[0], slope0);
        let vq = match endpoint_mode {
            EndpointMode::ClampedVelocity => slope_q.map(|w| vel(*phases.last().unwrap(), w)),
            EndpointMode::NaturalSecondDerivative => None,
        };
        KnotData::new(knots, v0, endpoint_mode, vq)
    }
}

/// Solve the scalar stationary system with one dense LU.
pub fn commutative_reference(
    phases: &[f64],
    slope0: f64,
    sigma: f64,
    m: usize,
    endpoint_mode: EndpointMode,
    slope_q: Option<f64>,
) -> Result<CommutativeSolution, OracleError> {
    if !(sigma > 0.0) {
        return Err(OracleError::NonPositiveSigma(sigma));
    }
    if phases.len() < 2 {
        return Err(OracleError::TooFewPhases);
    }
    let q = phases.len() - 1;
    let n = 6 * q;
    let a = |l: usize, k: usize| 6 * l + k;
    let b = |l: usize, k: usize| 6 * l + 4 + k;
    // rows of value, first, second and third derivative at s = 0 or 1
    let at0 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 6.0]];
    let at1 = [[1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 2.0, 6.0], [0.0, 0.0, 0.0, 6.0]];
    let s2 = sigma * sigma;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut row = 0;
    let mut put = |coeffs: &[(usize, f64)], r: f64, row: &mut usize| {
        for &(c, w) in coeffs {
            mat[(*row, c)] += w;
        }
        rhs[*row] = r;
        *row += 1;
    };
    let cubic = |l: usize, w: &[f64; 4], scale: f64| -> Vec<(usize, f64)> { (0..4).map(|k| (a(l, k), scale * w[k])).collect() };

    put(&cubic(0, &at0[0], 1.0), phases[0], &mut row);
    put(&cubic(0, &at0[1], 1.0), slope0, &mut row);
    for l in 0..q {
        // leg from the knot phase to theta(x_l)
        put(&[(b(l, 0), 1.0)], phases[l + 1], &mut row);
        let mut end = vec![(b(l, 0), 1.0), (b(l, 1), 1.0)];
        end.extend(cubic(l, &at1[0], -1.0));
        put(&end, 0.0, &mut row);
        if l + 1 < q {
            for d in 0..3 {
                let mut c = cubic(l, &at1[d], 1.0);
                c.extend(cubic(l + 1, &at0[d], -1.0));
                put(&c, 0.0, &mut row);
            }
            let mut c = cubic(l + 1, &at0[3], 1.0);
            c.extend(cubic(l, &at1[3], -1.0));
            c.push((b(l, 1), 1.0 / s2));
            put(&c, 0.0, &mut row);
        }
    }
    match endpoint_mode {
        EndpointMode::NaturalSecondDerivative => put(&cubic(q - 1, &at1[2], 1.0), 0.0, &mut row),
        EndpointMode::ClampedVelocity => {
            let w = slope_q.ok_or(OracleError::MissingTerminalSlope)?;
            put(&cubic(q - 1, &at1[1], 1.0), w, &mut row)
        }
    }
    let mut c = cubic(q - 1, &at1[3], -1.0);
    c.push((b(q - 1, 1), 1.0 / s2));
    put(&c, 0.0, &mut row);
    debug_assert_eq!(row, n);

    let lu = mat.lu();
    let x = lu.solve(&rhs).ok_or(OracleError::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Singular);
    }
    let cubics: Vec<[f64; 4]> = (0..q).map(|l| [x[a(l, 0)], x[a(l, 1)], x[a(l, 2)], x[a(l, 3)]]).collect();
    let legs: Vec<[f64; 2]> = (0..q).map(|l| [x[b(l, 0)], x[b(l, 1)]]).collect();
    let nodes = |f: &dyn Fn(f64) -> f64| (0..=m).map(|j| f(j as f64 / m as f64)).collect::<Vec<_>>();
    let u = cubics.iter().map(|c| nodes(&|s| c[0] + s * (c[1] + s * (c[2] + s * c[3])))).collect();
    let v = legs.iter().map(|c| nodes(&|s| c[0] + s * c[1])).collect();
    Ok(CommutativeSolution { cubics, legs, u, v })
}

/// Sup over all nodes of the phase distance between a diagonal SU(2)
/// state and reference phases, together with the largest off-diagonal
/// entry (zero when the state stays in the diagonal subgroup).
pub fn phase_error(state: &SplineState, reference: &CommutativeSolution) -> (f64, f64) {
    let mut err = 0.0f64;
    let mut off = 0.0f64;
    let pairs = state.u_segments.iter().zip(&reference.u).chain(state.v_segments.iter().zip(&reference.v));
    for (curve, phases) in pairs {
        for (p, &t) in curve.samples.iter().zip(phases) {
            let z = p.matrix().get(0, 0);
            let d = (z * num_complex::Complex64::from_polar(1.0, -t)).arg();
            err = err.max(d.abs());
            off = off.max(p.matrix().get(0, 1).norm());
        }
    }
    (err, off)
}

/// One probe of [`fd_gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub finite_difference: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub probes: Vec<ProbeResult>,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Tangent variation on every node of `U` and `V`.
#[derive(Debug, Clone)]
pub struct Probe {
    pub u: Vec<Vec<ComplexMatrix>>,
    pub v: Vec<Vec<ComplexMatrix>>,
}

/// Smooth su(N)-valued field `x -> sum_k c_k(x) E_k` with random
/// trigonometric coefficients.
fn random_field(rng: &mut ChaCha8Rng, n: usize) -> impl Fn(f64) -> ComplexMatrix {
    let basis: Vec<ComplexMatrix> = sun::su_basis(n).into_iter().map(|e| e.matrix().clone()).collect();
    let coeffs: Vec<[f64; 4]> = basis.iter().map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..6.3)]).collect();
    move |x| {
        let mut z = ComplexMatrix::zeros(n);
        for (e, c) in basis.iter().zip(&coeffs) {
            z.axpy(c[0] + c[1] * (c[2] * x + c[3]).sin(), e);
        }
        z
    }
}

/// A random admissible variation: `b(x) Z(x) U(x)` on `U` with `b ~ x^2`
/// near `x_0` (so value and slope stay clamped), and on each leg a field
/// vanishing at the knot and matching the `U` variation at `x_l`.
pub fn random_probe(state: &SplineState, rng: &mut ChaCha8Rng) -> Probe {
    let n = state.dim();
    let m = state.grid_size();
    let q = state.segments() as f64;
    let z = random_field(rng, n);
    let bump = |x: f64| (x / q).powi(2);
    let mut u = Vec::new();
    let mut ends = Vec::new();
    for (l, c) in state.u_segments.iter().enumerate() {
        let w: Vec<ComplexMatrix> = c
            .samples
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let x = l as f64 + j as f64 / m as f64;
                &z(x).scale(bump(x)) * p.matrix()
            })
            .collect();
        let x = (l + 1) as f64;
        ends.push(z(x).scale(bump(x)));
        u.push(w);
    }
    let mut v = Vec::new();
    for (l, c) in state.v_segments.iter().enumerate() {
        let y = random_field(rng, n);
        let w = c
            .samples
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let s = j as f64 / m as f64;
                let mut a = ends[l].scale(s * s);
                a.axpy(s * s * (1.0 - s), &y(s));
                &a * p.matrix()
            })
            .collect();
        v.push(w);
    }
    Probe { u, v }
}

pub fn displaced(state: &SplineState, probe: &Probe, eps: f64) -> Result<SplineState, OracleError> {
    let shift = |c: &SegmentCurve, w: &[ComplexMatrix]| -> Result<SegmentCurve, OracleError> {
        let mut samples = Vec::with_capacity(w.len());
        for (p, d) in c.samples.iter().zip(w) {
            let mut a = p.matrix().clone();
            a.axpy(eps, d);
            samples.push(sun::retract(&a).map_err(GridError::from)?);
        }
        Ok(SegmentCurve::new(c.index, samples)?)
    };
    let u = state.u_segments.iter().zip(&probe.u).map(|(c, w)| shift(c, w)).collect::<Result<_, _>>()?;
    let v = state.v_segments.iter().zip(&probe.v).map(|(c, w)| shift(c, w)).collect::<Result<_, _>>()?;
    Ok(SplineState::new(u, v, state.t)?)
}

fn trapezoid_pairing(a: &[ComplexMatrix], b: &[ComplexMatrix], h: f64) -> f64 {
    let vals: Vec<f64> = a.iter().zip(b).map(|(x, y)| sun::real_inner(x, y)).collect();
    energy::trapezoid(&vals, h)
}

/// Finite-difference weights for derivatives `0..=order` at `x0` from the
/// nodes `xs` (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// Ambient derivatives `1..=3` at an end node, fourth-order one-sided.
fn end_derivatives(samples: &[ComplexMatrix], side: Side, h: f64) -> [ComplexMatrix; 3] {
    const POINTS: usize = 7;
    let m = samples.len() - 1;
    let xs: Vec<f64> = (0..POINTS).map(|k| k as f64).collect();
    let w = fornberg_weights(0.0, &xs, 3);
    let node = |k: usize| match side {
        Side::Start => &samples[k],
        Side::End => &samples[m - k],
    };
    let flip = |order: usize| if side == Side::End && order % 2 == 1 { -1.0 } else { 1.0 };
    std::array::from_fn(|i| {
        let order = i + 1;
        let mut d = ComplexMatrix::zeros(samples[0].dim());
        for k in 0..POINTS {
            d.axpy(flip(order) * w[order][k] / h.powi(order as i32), node(k));
        }
        d
    })
}

/// First variation of `F_sigma` along a probe predicted from the flow
/// velocities: `-<L^4 U, W> - sigma^-2 <D_x V_x, W>` plus the segment-end
/// terms `[<D_x U_x, D_x W> - <D_x^2 U_x, W>]` and `sigma^-2 [<V_x, W>]`.
/// End terms use their own high-order one-sided derivatives.
pub fn predicted_variation(state: &SplineState, probe: &Probe, sigma: f64) -> Result<f64, OracleError> {
    let h = state.h();
    let s2 = sigma * sigma;
    let ends = [(Side::Start, -1.0), (Side::End, 1.0)];
    let mut total = 0.0;
    for (c, w) in state.u_segments.iter().zip(&probe.u) {
        let s = c.matrices();
        let vel: Vec<ComplexMatrix> = flow::rhs_u(c)?.iter().zip(&s).map(|(r, p)| sun::project_at(r, p)).collect();
        total -= trapezoid_pairing(&vel, w, h);
        for (side, sign) in ends {
            let j = if side == Side::Start { 0 } else { s.len() - 1 };
            let [d1, d2, d3] = end_derivatives(&s, side, h);
            let k2 = sun::project_at(&(&d2 + &extrinsic::b1(&d1, &s[j])), &s[j]);
            let k3 = sun::project_at(&(&d3 + &extrinsic::b2(&d2, &d1, &s[j])), &s[j]);
            let dw = sun::project_at(&end_derivatives(w, side, h)[0], &s[j]);
            total += sign * (sun::real_inner(&k2, &dw) - sun::real_inner(&k3, &w[j]));
        }
    }
    for (c, w) in state.v_segments.iter().zip(&probe.v) {
        let s = c.matrices();
        let vel: Vec<ComplexMatrix> = flow::rhs_v(c, sigma)?.iter().zip(&s).map(|(r, p)| sun::project_at(&r.scale(1.0 / s2), p)).collect();
        total -= trapezoid_pairing(&vel, w, h) / s2;
        for (side, sign) in ends {
            let j = if side == Side::Start { 0 } else { s.len() - 1 };
            let vx = sun::project_at(&end_derivatives(&s, side, h)[0], &s[j]);
            total += sign * sun::real_inner(&vx, &w[j]) / s2;
        }
    }
    Ok(total)
}

/// Central difference of the discrete energy along `n_probes` random
/// admissible variations, compared with [`predicted_variation`].
pub fn fd_gradient_check(state: &SplineState, sigma: f64, n_probes: usize, eps: f64, seed: u64) -> Result<GradientCheck, OracleError> {
    if !(sigma > 0.0) {
        return Err(OracleError::NonPositiveSigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let probe = random_probe(state, &mut rng);
        let fp = energy::total_energy(&displaced(state, &probe, eps)?, sigma)?;
        let fm = energy::total_energy(&displaced(state, &probe, -eps)?, sigma)?;
        let fd = (fp - fm) / (2.0 * eps);
        let predicted = predicted_variation(state, &probe, sigma)?;
        let scale = fd.abs().max(predicted.abs()).max(1e-300);
        probes.push(ProbeResult { finite_difference: fd, predicted, relative_error: (fd - predicted).abs() / scale });
    }
    let max_relative_error = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    let max_absolute_error = probes.iter().map(|p| (p.finite_difference - p.predicted).abs()).fold(0.0, f64::max);
    Ok(GradientCheck { probes, max_relative_error, max_absolute_error })
}

/// A smooth noncommutative state on `q` segments: `U(x) = exp(A(x))` for a
/// random smooth algebra path, legs `p_l exp(s Y_l) exp(s (1 - s) R_l)`
/// from random knots near `U(x_l)`. Deterministic in `seed`.
pub fn random_smooth_state(n: usize, q: usize, m: usize, seed: u64) -> Result<(KnotData, SplineState), OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = random_field(&mut rng, n);
    let u_at = |x: f64| UnitaryPoint::new_unchecked(sun::expm_raw(&path(x).scale(0.4)));
    let u: Vec<SegmentCurve> = (0..q)
        .map(|l| SegmentCurve::new(l + 1, (0..=m).map(|j| u_at(l as f64 + j as f64 / m as f64)).collect()))
        .collect::<Result<_, _>>()?;
    let mut knots = vec![u[0].first().clone()];
    let mut v = Vec::with_capacity(q);
    for l in 0..q {
        let end = u[l].last().clone();
        let kick = random_field(&mut rng, n)(0.0).scale(0.3);
        let p = UnitaryPoint::new_unchecked(&sun::expm_raw(&kick) * end.matrix());
        let y = sun::logm(&p.adjoint().compose(&end)).map_err(GridError::from)?;
        let r = random_field(&mut rng, n)(0.0).scale(0.5);
        let mut samples: Vec<UnitaryPoint> = (0..=m)
            .map(|j| {
                let s = j as f64 / m as f64;
                let a = &(p.matrix() * &sun::expm_raw(&y.matrix().scale(s))) * &sun::expm_raw(&r.scale(s * (1.0 - s)));
                UnitaryPoint::new_unchecked(a)
            })
            .collect();
        samples[0] = p.clone();
        samples[m] = end;
        v.push(SegmentCurve::new(l + 1, samples)?);
        knots.push(p);
    }
    let data = KnotData::new(knots, ComplexMatrix::zeros(n), EndpointMode::NaturalSecondDerivative, None)?;
    Ok((data, SplineState::new(u, v, 0.0)?))
}
