//! Extrinsic (ambient matrix) forms of the flow: the lower-order terms
//! `b_1`, `b_2`, `G` and the derivative jets used by boundary rows.
//!
//! With `W` unitary, `D_x W_x = W'' + b_1` and `D_x^2 W_x = W''' + b_2`, and
//! the fourth-order flow reads `W_t = P(-W'''' + G)`.

use crate::grid::{self, EndpointMode, GridError, KnotData, Side, SplineState};
use crate::sun::{self, ComplexMatrix};

/// `b_1 = -W' W* W'`.
pub fn b1(w1: &ComplexMatrix, w: &ComplexMatrix) -> ComplexMatrix {
    (&(w1 * &w.adjoint()) * w1).scale(-1.0)
}

/// `b_2 = -3/2 W'' W* W' + 2 (W' W*)^2 W' - 3/2 W' W* W''`.
pub fn b2(w2: &ComplexMatrix, w1: &ComplexMatrix, w: &ComplexMatrix) -> ComplexMatrix {
    let ws = w.adjoint();
    let a = w1 * &ws;
    let mut out = (&(w2 * &ws) * w1).scale(-1.5);
    out.axpy(2.0, &(&(&a * &a) * w1));
    out.axpy(-1.5, &(&a * w2));
    out
}

/// Lower-order part of the extrinsic fourth-order operator:
/// `2 W''' W* W' + 2 W' W* W''' - 4 W'' (W* W')^2 - 4 W' W* W'' W* W'
///  - 4 (W' W*)^2 W'' + 3 W'' W* W'' + 6 (W' W*)^3 W'`.
pub fn g_term(w3: &ComplexMatrix, w2: &ComplexMatrix, w1: &ComplexMatrix, w: &ComplexMatrix) -> ComplexMatrix {
    let ws = w.adjoint();
    let a = w1 * &ws; // W' W*
    let c = &ws * w1; // W* W'
    let a2 = &a * &a;
    let mut out = (&(w3 * &ws) * w1).scale(2.0);
    out.axpy(2.0, &(&a * w3));
    out.axpy(-4.0, &(&(w2 * &c) * &c));
    out.axpy(-4.0, &(&(&(&a * w2) * &ws) * w1));
    out.axpy(-4.0, &(&a2 * w2));
    out.axpy(3.0, &(&(w2 * &ws) * w2));
    out.axpy(6.0, &(&(&a2 * &a) * w1));
    out
}

/// Ambient derivatives at one node together with the covariant
/// combinations `k1 = W'`, `k2 = W'' + b_1` (`D_x W_x`) and
/// `k3 = W''' + b_2` (`D_x^2 W_x`). None of the fields are projected.
#[derive(Debug, Clone)]
pub struct Jet {
    pub w: ComplexMatrix,
    pub d1: ComplexMatrix,
    pub d2: ComplexMatrix,
    pub d3: ComplexMatrix,
}

impl Jet {
    pub fn at(samples: &[ComplexMatrix], j: usize, h: f64) -> Result<Self, GridError> {
        Ok(Self {
            w: samples[j].clone(),
            d1: grid::fd_at(samples, 1, j, h)?,
            d2: grid::fd_at(samples, 2, j, h)?,
            d3: grid::fd_at(samples, 3, j, h)?,
        })
    }

    pub fn end(samples: &[ComplexMatrix], side: Side, h: f64) -> Result<Self, GridError> {
        let j = match side {
            Side::Start => 0,
            Side::End => samples.len() - 1,
        };
        Self::at(samples, j, h)
    }

    pub fn k1(&self) -> ComplexMatrix {
        self.d1.clone()
    }

    pub fn k2(&self) -> ComplexMatrix {
        &self.d2 + &b1(&self.d1, &self.w)
    }

    pub fn k3(&self) -> ComplexMatrix {
        &self.d3 + &b2(&self.d2, &self.d1, &self.w)
    }
}

/// Tangent projection at a jet's base point.
pub fn project(z: &ComplexMatrix, at: &ComplexMatrix) -> ComplexMatrix {
    sun::project_at(z, at)
}

/// Coupling data at the interior junction `x_l` between `U_l` and `U_{l+1}`.
/// Residuals are tangent-projected at the junction value.
#[derive(Debug, Clone)]
pub struct JunctionTerms {
    /// Junction index `l` (1-based).
    pub index: usize,
    pub at: ComplexMatrix,
    pub continuity: ComplexMatrix,
    /// `P(U_{l+1,x} - U_{l,x})`.
    pub velocity_jump: ComplexMatrix,
    /// `P(D_x U_{l+1,x} - D_x U_{l,x})`.
    pub acceleration_jump: ComplexMatrix,
    /// `P(D_x^2 U_{l+1,x} - D_x^2 U_{l,x} + V_{l,x} / sigma^2)`.
    pub flux: ComplexMatrix,
    pub b2_left: ComplexMatrix,
    pub b2_right: ComplexMatrix,
    pub v_x: ComplexMatrix,
}

/// Conditions at `x_q`.
#[derive(Debug, Clone)]
pub struct TerminalTerms {
    pub at: ComplexMatrix,
    /// `P(D_x U_x)` (natural) or `P(U_x) - phi'_q` (clamped).
    pub endpoint: ComplexMatrix,
    /// `P(-D_x^2 U_{q,x} + V_{q,x} / sigma^2)`.
    pub flux: ComplexMatrix,
    pub b2: ComplexMatrix,
    pub v_x: ComplexMatrix,
}

/// Every boundary and junction condition evaluated on a state, as matrix
/// residuals that vanish when the condition holds.
#[derive(Debug, Clone)]
pub struct BoundaryTerms {
    pub clamp_position: ComplexMatrix,
    /// `P(U_{1,x}(x_0)) - phi'_0`.
    pub clamp_velocity: ComplexMatrix,
    /// `V_l(x_{l-1}) - p_l`.
    pub v_start: Vec<ComplexMatrix>,
    /// `V_l(x_l) - U_l(x_l)`.
    pub v_end: Vec<ComplexMatrix>,
    pub junctions: Vec<JunctionTerms>,
    pub terminal: TerminalTerms,
}

impl BoundaryTerms {
    /// `(name, ||residual||_F)` for every condition, in a fixed order.
    pub fn norms(&self) -> Vec<(String, f64)> {
        let n = sun::frob_norm;
        let mut out = vec![
            ("clamp_position".to_string(), n(&self.clamp_position)),
            ("clamp_velocity".to_string(), n(&self.clamp_velocity)),
        ];
        for (l, r) in self.v_start.iter().enumerate() {
            out.push((format!("v{}_start", l + 1), n(r)));
        }
        for (l, r) in self.v_end.iter().enumerate() {
            out.push((format!("v{}_end", l + 1), n(r)));
        }
        for j in &self.junctions {
            out.push((format!("junction{}_continuity", j.index), n(&j.continuity)));
            out.push((format!("junction{}_velocity", j.index), n(&j.velocity_jump)));
            out.push((format!("junction{}_acceleration", j.index), n(&j.acceleration_jump)));
            out.push((format!("junction{}_flux", j.index), n(&j.flux)));
        }
        out.push(("endpoint".to_string(), n(&self.terminal.endpoint)));
        out.push(("terminal_flux".to_string(), n(&self.terminal.flux)));
        out
    }
}

fn sigma_check(sigma: f64) -> Result<f64, GridError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(GridError::InvalidState(format!("sigma must be positive, got {sigma}")));
    }
    Ok(1.0 / (sigma * sigma))
}

/// Junction couplings `b_2` and `V_x` at each `x_l`, `l < q`, and the
/// terminal condition at `x_q`.
pub fn junction_terms(state: &SplineState, knots: &KnotData, sigma: f64) -> Result<(Vec<JunctionTerms>, TerminalTerms), GridError> {
    let inv_s2 = sigma_check(sigma)?;
    let h = state.h();
    let q = state.segments();
    let u: Vec<Vec<ComplexMatrix>> = state.u_segments.iter().map(|c| c.matrices()).collect();
    let v_x = |l: usize| -> Result<ComplexMatrix, GridError> {
        let v = state.v_segments[l].matrices();
        grid::fd_at(&v, 1, v.len() - 1, h)
    };
    let mut junctions = Vec::with_capacity(q.saturating_sub(1));
    for l in 0..q.saturating_sub(1) {
        let left = Jet::end(&u[l], Side::End, h)?;
        let right = Jet::end(&u[l + 1], Side::Start, h)?;
        let at = left.w.clone();
        let vx = v_x(l)?;
        let mut flux = &right.k3() - &left.k3();
        flux.axpy(inv_s2, &vx);
        junctions.push(JunctionTerms {
            index: l + 1,
            continuity: &right.w - &left.w,
            velocity_jump: project(&(&right.k1() - &left.k1()), &at),
            acceleration_jump: project(&(&right.k2() - &left.k2()), &at),
            flux: project(&flux, &at),
            b2_left: b2(&left.d2, &left.d1, &left.w),
            b2_right: b2(&right.d2, &right.d1, &right.w),
            v_x: vx,
            at,
        });
    }
    let end = Jet::end(&u[q - 1], Side::End, h)?;
    let vx = v_x(q - 1)?;
    let endpoint = match knots.endpoint_mode {
        EndpointMode::NaturalSecondDerivative => project(&end.k2(), &end.w),
        EndpointMode::ClampedVelocity => {
            // fixed right-trivialised velocity: U_x U* = phi'_q p_q*
            let phi = knots.terminal_velocity.as_ref().expect("validated clamped endpoint");
            let target = &(phi * &knots.knots[q].matrix().adjoint()) * &end.w;
            &project(&end.k1(), &end.w) - &target
        }
    };
    let mut flux = end.k3().scale(-1.0);
    flux.axpy(inv_s2, &vx);
    let terminal = TerminalTerms {
        endpoint,
        flux: project(&flux, &end.w),
        b2: b2(&end.d2, &end.d1, &end.w),
        v_x: vx,
        at: end.w,
    };
    Ok((junctions, terminal))
}

/// All boundary residuals of a state.
pub fn boundary_terms(state: &SplineState, knots: &KnotData, sigma: f64) -> Result<BoundaryTerms, GridError> {
    let h = state.h();
    let q = state.segments();
    if knots.segments() != q || knots.dim() != state.dim() {
        return Err(GridError::InvalidState("knot data does not match the state".into()));
    }
    let (junctions, terminal) = junction_terms(state, knots, sigma)?;
    let u1 = state.u_segments[0].matrices();
    let start = Jet::end(&u1, Side::Start, h)?;
    Ok(BoundaryTerms {
        clamp_position: &start.w - knots.knots[0].matrix(),
        clamp_velocity: &project(&start.k1(), &start.w) - &knots.initial_velocity,
        v_start: (0..q).map(|l| state.v_segments[l].first().matrix() - knots.knots[l + 1].matrix()).collect(),
        v_end: (0..q).map(|l| state.v_segments[l].last().matrix() - state.u_segments[l].last().matrix()).collect(),
        junctions,
        terminal,
    })
}
