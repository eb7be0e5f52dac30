//! Coupled U/V flow: one linearly implicit step on all segments at once, and
//! the run-to-convergence loop.
//!
//! Every node carries an increment `delta`; the unknowns interleave U and V
//! nodes segment by segment. PDE rows read `(Id + dt D^4) delta = dt P(-U'''' + G)`
//! for U and `(Id - sigma^2 dt D^2) delta = dt sigma^2 P(V'' + b_1)` for V.
//! Boundary and junction conditions replace the rows at nodes `0, 1, M-1, M`
//! of each U segment and the two end nodes of each V leg; their right-hand
//! sides are the current projected residuals, so a fixed point satisfies
//! them exactly. The real matrix is shared by all `2 N^2` real components and
//! factored once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::{BandedBuilder, BandedError, BandedLu};
use crate::energy::{self, DiagnosticsReport, EnergyError, EnergyParts};
use crate::extrinsic::{self, b1, g_term};
pub use crate::extrinsic::{junction_terms, JunctionTerms, TerminalTerms};
use crate::grid::{self, EndpointMode, GridError, KnotData, SegmentCurve, Side, SplineState, Stencil};
use crate::sun::{self, ComplexMatrix, SunError, UnitaryPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("linear solve failed: {0}")]
    Banded(#[from] BandedError),
    #[error(transparent)]
    Sun(#[from] SunError),
}

pub const DEFAULT_STABILITY_FACTOR: f64 = 0.4;
pub const DEFAULT_UNITARITY_TOL: f64 = 1e-10;
pub const DEFAULT_BC_TOL: f64 = 1e-6;
pub const DEFAULT_DIAGNOSTIC_TOL: f64 = 1e-8;
pub const MIN_FLOW_INTERVALS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub knot_data: KnotData,
    pub sigma: f64,
    /// Grid intervals per segment.
    pub m: usize,
    pub dt: f64,
    pub t_max: f64,
    pub z1_stop: f64,
    pub unitarity_tol: f64,
    pub bc_tol: f64,
    pub diagnostic_tol: f64,
    pub snapshot_every: usize,
    pub seed: u64,
    /// `dt <= stability_factor * h^4` is enforced at validation.
    pub stability_factor: f64,
}

impl FlowConfig {
    /// Configuration with default tolerances and `dt` at the stability limit.
    pub fn new(knot_data: KnotData, sigma: f64, m: usize, t_max: f64, z1_stop: f64) -> Self {
        Self {
            knot_data,
            sigma,
            m,
            dt: default_dt(m, DEFAULT_STABILITY_FACTOR),
            t_max,
            z1_stop,
            unitarity_tol: DEFAULT_UNITARITY_TOL,
            bc_tol: DEFAULT_BC_TOL,
            diagnostic_tol: DEFAULT_DIAGNOSTIC_TOL,
            snapshot_every: 100,
            seed: 0,
            stability_factor: DEFAULT_STABILITY_FACTOR,
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Largest admissible time step.
    pub fn dt_limit(&self) -> f64 {
        default_dt(self.m, self.stability_factor)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |msg: String| Err(FlowError::Config(msg));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.m < MIN_FLOW_INTERVALS {
            return bad(format!("M = {} is below the minimum of {MIN_FLOW_INTERVALS}", self.m));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.stability_factor > 0.0 && self.stability_factor.is_finite()) {
            return bad(format!("stability_factor must be positive, got {}", self.stability_factor));
        }
        if self.dt > self.dt_limit() * (1.0 + 1e-12) {
            return bad(format!(
                "dt = {:e} exceeds the stability limit {:e} = {} * h^4",
                self.dt,
                self.dt_limit(),
                self.stability_factor
            ));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max must be nonnegative, got {}", self.t_max));
        }
        if !(self.z1_stop > 0.0) {
            return bad(format!("z1_stop must be positive, got {}", self.z1_stop));
        }
        for (name, v) in [
            ("unitarity_tol", self.unitarity_tol),
            ("bc_tol", self.bc_tol),
            ("diagnostic_tol", self.diagnostic_tol),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be at least 1".into());
        }
        Ok(())
    }
}

pub fn default_dt(m: usize, stability_factor: f64) -> f64 {
    stability_factor * (1.0 / m as f64).powi(4)
}

fn u_operator_at(s: &[ComplexMatrix], j: usize, h: f64) -> Result<ComplexMatrix, GridError> {
    let d1 = grid::fd_at(s, 1, j, h)?;
    let d2 = grid::fd_at(s, 2, j, h)?;
    let d3 = grid::fd_at(s, 3, j, h)?;
    let d4 = grid::fd_at(s, 4, j, h)?;
    let mut r = g_term(&d3, &d2, &d1, &s[j]);
    r.axpy(-1.0, &d4);
    Ok(r)
}

fn v_operator_at(s: &[ComplexMatrix], j: usize, h: f64) -> Result<ComplexMatrix, GridError> {
    let d1 = grid::fd_at(s, 1, j, h)?;
    let d2 = grid::fd_at(s, 2, j, h)?;
    Ok(&d2 + &b1(&d1, &s[j]))
}

/// `L^4 U = P(-U'''' + G)` at node `j`: the tangent part of the U-flow
/// velocity, with one-sided stencils near the ends.
pub fn l4_at(samples: &[ComplexMatrix], j: usize, h: f64) -> Result<ComplexMatrix, FlowError> {
    Ok(sun::project_at(&u_operator_at(samples, j, h)?, &samples[j]))
}

/// Nodewise `-U'''' + G(U''', U'', U', U)` (not projected).
pub fn rhs_u(u: &SegmentCurve) -> Result<Vec<ComplexMatrix>, FlowError> {
    let m = u.grid_size();
    if m < energy::MIN_CUBIC_INTERVALS {
        return Err(GridError::TooFewIntervals { m, min: energy::MIN_CUBIC_INTERVALS }.into());
    }
    let s = u.matrices();
    (0..=m).map(|j| Ok(u_operator_at(&s, j, u.h())?)).collect()
}

/// Nodewise `sigma^2 (V'' + b_1(V', V))`.
pub fn rhs_v(v: &SegmentCurve, sigma: f64) -> Result<Vec<ComplexMatrix>, FlowError> {
    if !(sigma > 0.0) {
        return Err(FlowError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let s = v.matrices();
    (0..=v.grid_size()).map(|j| Ok(v_operator_at(&s, j, v.h())?.scale(sigma * sigma))).collect()
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    q: usize,
    m: usize,
}

impl Layout {
    fn n(&self) -> usize {
        2 * self.q * (self.m + 1)
    }

    fn u(&self, l: usize, j: usize) -> usize {
        2 * (l * (self.m + 1) + j)
    }

    fn v(&self, l: usize, j: usize) -> usize {
        self.u(l, j) + 1
    }
}

fn add_stencil(b: &mut BandedBuilder, row: usize, col: impl Fn(usize) -> usize, st: &Stencil, scale: f64) -> Result<(), FlowError> {
    for (k, w) in st.weights.iter().enumerate() {
        if *w != 0.0 {
            b.add(row, col(st.start + k), w * scale)?;
        }
    }
    Ok(())
}

/// Prefactored stepper for a fixed configuration.
#[derive(Debug, Clone)]
pub struct FlowStepper {
    cfg: FlowConfig,
    layout: Layout,
    lu: BandedLu,
}

impl FlowStepper {
    pub fn new(cfg: &FlowConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        let layout = Layout { q: cfg.knot_data.segments(), m: cfg.m };
        let lu = Self::assemble(cfg, layout)?.factor()?;
        Ok(Self { cfg: cfg.clone(), layout, lu })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    fn assemble(cfg: &FlowConfig, lay: Layout) -> Result<BandedBuilder, FlowError> {
        let (q, m) = (lay.q, lay.m);
        let h = cfg.h();
        let dt = cfg.dt;
        let s2 = cfg.sigma * cfg.sigma;
        let mut b = BandedBuilder::new(lay.n());
        let st = |order: usize, side: Side| grid::end_stencil(order, side, m);
        for l in 0..q {
            let ucol = move |j: usize| lay.u(l, j);
            let vcol = move |j: usize| lay.v(l, j);
            for j in 2..=m - 2 {
                let row = lay.u(l, j);
                b.add(row, row, 1.0)?;
                add_stencil(&mut b, row, ucol, &grid::stencil(4, j, m)?, dt * h.powi(-4))?;
            }
            for j in 1..m {
                let row = lay.v(l, j);
                b.add(row, row, 1.0)?;
                add_stencil(&mut b, row, vcol, &grid::stencil(2, j, m)?, -s2 * dt * h.powi(-2))?;
            }
            b.add(lay.v(l, 0), lay.v(l, 0), 1.0)?;
            b.add(lay.v(l, m), lay.v(l, m), 1.0)?;
            b.add(lay.v(l, m), lay.u(l, m), -1.0)?;
        }
        // clamp at x_0: value, then velocity on node 1
        b.add(lay.u(0, 0), lay.u(0, 0), 1.0)?;
        add_stencil(&mut b, lay.u(0, 1), |j| lay.u(0, j), &st(1, Side::Start)?, 1.0)?;
        for a in 0..q.saturating_sub(1) {
            let c = a + 1;
            let acol = move |j: usize| lay.u(a, j);
            let ccol = move |j: usize| lay.u(c, j);
            b.add(lay.u(a, m), lay.u(a, m), 1.0)?;
            b.add(lay.u(a, m), lay.u(c, 0), -1.0)?;
            for (order, row) in [(1, lay.u(c, 0)), (2, lay.u(c, 1)), (3, lay.u(a, m - 1))] {
                add_stencil(&mut b, row, ccol, &st(order, Side::Start)?, 1.0)?;
                add_stencil(&mut b, row, acol, &st(order, Side::End)?, -1.0)?;
            }
            add_stencil(&mut b, lay.u(a, m - 1), |j| lay.v(a, j), &st(1, Side::End)?, h * h / s2)?;
        }
        let l = q - 1;
        let lcol = move |j: usize| lay.u(l, j);
        let endpoint_order = match cfg.knot_data.endpoint_mode {
            EndpointMode::NaturalSecondDerivative => 2,
            EndpointMode::ClampedVelocity => 1,
        };
        add_stencil(&mut b, lay.u(l, m - 1), lcol, &st(endpoint_order, Side::End)?, 1.0)?;
        add_stencil(&mut b, lay.u(l, m), lcol, &st(3, Side::End)?, -1.0)?;
        add_stencil(&mut b, lay.u(l, m), |j| lay.v(l, j), &st(1, Side::End)?, h * h / s2)?;
        Ok(b)
    }

    /// Right-hand side for every unknown.
    fn rhs(&self, state: &SplineState) -> Result<Vec<ComplexMatrix>, FlowError> {
        let cfg = &self.cfg;
        let lay = self.layout;
        let (q, m) = (lay.q, lay.m);
        let h = cfg.h();
        let dt = cfg.dt;
        let s2 = cfg.sigma * cfg.sigma;
        let n = cfg.knot_data.dim();
        let us: Vec<Vec<ComplexMatrix>> = state.u_segments.iter().map(|c| c.matrices()).collect();
        let vs: Vec<Vec<ComplexMatrix>> = state.v_segments.iter().map(|c| c.matrices()).collect();

        let mut rhs = vec![ComplexMatrix::zeros(n); lay.n()];
        let interior: Vec<(usize, usize, bool)> = (0..q)
            .flat_map(|l| (2..=m - 2).map(move |j| (l, j, true)).chain((1..m).map(move |j| (l, j, false))))
            .collect();
        let values: Vec<Result<(usize, ComplexMatrix), GridError>> = interior
            .par_iter()
            .map(|&(l, j, is_u)| {
                if is_u {
                    let r = u_operator_at(&us[l], j, h)?;
                    Ok((lay.u(l, j), sun::project_at(&r, &us[l][j]).scale(dt)))
                } else {
                    let r = v_operator_at(&vs[l], j, h)?;
                    Ok((lay.v(l, j), sun::project_at(&r, &vs[l][j]).scale(dt * s2)))
                }
            })
            .collect();
        for v in values {
            let (i, z) = v?;
            rhs[i] = z;
        }

        let terms = extrinsic::boundary_terms(state, &cfg.knot_data, cfg.sigma)?;
        rhs[lay.u(0, 0)] = terms.clamp_position.scale(-1.0);
        rhs[lay.u(0, 1)] = terms.clamp_velocity.scale(-h);
        for l in 0..q {
            rhs[lay.v(l, 0)] = terms.v_start[l].scale(-1.0);
            rhs[lay.v(l, m)] = terms.v_end[l].scale(-1.0);
        }
        for jt in &terms.junctions {
            let (a, c) = (jt.index - 1, jt.index);
            rhs[lay.u(a, m)] = jt.continuity.clone();
            rhs[lay.u(c, 0)] = jt.velocity_jump.scale(-h);
            rhs[lay.u(c, 1)] = jt.acceleration_jump.scale(-h * h);
            rhs[lay.u(a, m - 1)] = jt.flux.scale(-h * h * h);
        }
        let endpoint_scale = match cfg.knot_data.endpoint_mode {
            EndpointMode::NaturalSecondDerivative => h * h,
            EndpointMode::ClampedVelocity => h,
        };
        rhs[lay.u(q - 1, m - 1)] = terms.terminal.endpoint.scale(-endpoint_scale);
        rhs[lay.u(q - 1, m)] = terms.terminal.flux.scale(-h * h * h);
        Ok(rhs)
    }

    /// One step from `state` to `t + dt`.
    pub fn step(&self, state: &SplineState) -> Result<SplineState, FlowError> {
        let lay = self.layout;
        let (q, m) = (lay.q, lay.m);
        if state.segments() != q || state.grid_size() != m || state.dim() != self.cfg.knot_data.dim() {
            return Err(GridError::GridMismatch.into());
        }
        let n = state.dim();
        let rhs = self.rhs(state)?;
        let comps = 2 * n * n;
        let solved: Vec<Result<Vec<f64>, BandedError>> = (0..comps)
            .into_par_iter()
            .map(|k| {
                let mut b: Vec<f64> = rhs.iter().map(|z| z.component(k)).collect();
                self.lu.solve_in_place(&mut b)?;
                Ok(b)
            })
            .collect();
        let solved: Vec<Vec<f64>> = solved.into_iter().collect::<Result<_, _>>()?;

        let nodes: Vec<(usize, usize, bool)> =
            (0..q).flat_map(|l| (0..=m).flat_map(move |j| [(l, j, true), (l, j, false)])).collect();
        let updated: Vec<Result<UnitaryPoint, SunError>> = nodes
            .par_iter()
            .map(|&(l, j, is_u)| {
                let (idx, base) = if is_u {
                    (lay.u(l, j), &state.u_segments[l].samples[j])
                } else {
                    (lay.v(l, j), &state.v_segments[l].samples[j])
                };
                let mut z = base.matrix().clone();
                for (k, col) in solved.iter().enumerate() {
                    z.set_component(k, z.component(k) + col[idx]);
                }
                sun::retract(&z)
            })
            .collect();
        let mut u_nodes: Vec<Vec<UnitaryPoint>> = vec![Vec::with_capacity(m + 1); q];
        let mut v_nodes: Vec<Vec<UnitaryPoint>> = vec![Vec::with_capacity(m + 1); q];
        for (&(l, _, is_u), p) in nodes.iter().zip(updated) {
            let p = p?;
            if is_u {
                u_nodes[l].push(p);
            } else {
                v_nodes[l].push(p);
            }
        }
        // pinned values exactly
        let knots = &self.cfg.knot_data.knots;
        u_nodes[0][0] = knots[0].clone();
        for l in 0..q {
            v_nodes[l][0] = knots[l + 1].clone();
            if l + 1 < q {
                let junction = u_nodes[l][m].clone();
                u_nodes[l + 1][0] = junction;
            }
            v_nodes[l][m] = u_nodes[l][m].clone();
        }
        let u_segments = u_nodes.into_iter().enumerate().map(|(l, s)| SegmentCurve { index: l + 1, samples: s }).collect();
        let v_segments = v_nodes.into_iter().enumerate().map(|(l, s)| SegmentCurve { index: l + 1, samples: s }).collect();
        Ok(SplineState { u_segments, v_segments, t: state.t + self.cfg.dt })
    }
}

/// Allowed energy increase per step: `10 dt Z_1 h^2` plus a rounding floor
/// for evaluating second differences, `64 eps (1 + F) / h^2`.
pub fn dissipation_slack(dt: f64, z1: f64, h: f64, energy: f64) -> f64 {
    10.0 * dt * z1 * h * h + 64.0 * f64::EPSILON * (1.0 + energy.abs()) / (h * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Stationary,
    MaxTime,
    EnergyViolation,
    Blowup,
}

/// Per accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub total_energy: f64,
    pub bending: f64,
    pub tension: f64,
    pub z1: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub state: SplineState,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    /// Filled by [`run`]; empty when snapshots go to an observer.
    pub snapshots: Vec<Snapshot>,
    pub history: Vec<StepRecord>,
    pub initial_energy: EnergyParts,
    pub terminal_state: SplineState,
    pub terminal_diagnostics: DiagnosticsReport,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub steps: usize,
    /// Detail for abnormal stops.
    pub message: Option<String>,
}

/// Run to convergence or `t_max`, keeping every snapshot.
pub fn run(cfg: &FlowConfig, initial: &SplineState) -> Result<FlowTrajectory, FlowError> {
    let mut snaps = Vec::new();
    let mut traj = run_observed(cfg, initial, |s| {
        snaps.push(s.clone());
        Ok::<(), std::convert::Infallible>(())
    })
    .map_err(|e| match e {
        ObservedError::Flow(f) => f,
        ObservedError::Observer(never) => match never {},
    })?;
    traj.snapshots = snaps;
    Ok(traj)
}

#[derive(Debug)]
pub enum ObservedError<E> {
    Flow(FlowError),
    Observer(E),
}

impl<E> From<FlowError> for ObservedError<E> {
    fn from(e: FlowError) -> Self {
        ObservedError::Flow(e)
    }
}

impl<E> From<GridError> for ObservedError<E> {
    fn from(e: GridError) -> Self {
        ObservedError::Flow(e.into())
    }
}

impl<E> From<EnergyError> for ObservedError<E> {
    fn from(e: EnergyError) -> Self {
        ObservedError::Flow(e.into())
    }
}

/// Run, handing each snapshot to `observer` as it is taken. The initial and
/// terminal states are always snapshotted.
pub fn run_observed<E>(
    cfg: &FlowConfig,
    initial: &SplineState,
    mut observer: impl FnMut(&Snapshot) -> Result<(), E>,
) -> Result<FlowTrajectory, ObservedError<E>> {
    cfg.validate()?;
    initial.validate(&cfg.knot_data, cfg.unitarity_tol.max(1e-9), cfg.bc_tol)?;
    if initial.grid_size() != cfg.m {
        return Err(FlowError::Config(format!("initial state has M = {}, config has {}", initial.grid_size(), cfg.m)).into());
    }
    let stepper = FlowStepper::new(cfg)?;
    let h = cfg.h();
    let sigma = cfg.sigma;
    let snapshot = |state: &SplineState, z1: f64| -> Result<Snapshot, EnergyError> {
        Ok(Snapshot { t: state.t, state: state.clone(), diagnostics: energy::diagnose(state, &cfg.knot_data, sigma, z1)? })
    };

    let mut state = initial.clone();
    let initial_energy = energy::energy_parts(&state, sigma)?;
    let mut parts = initial_energy;
    let first = snapshot(&state, 0.0)?;
    observer(&first).map_err(ObservedError::Observer)?;
    let mut last_snapshot_step = 0usize;
    let mut last_z1 = 0.0;
    let mut history = Vec::new();
    let mut steps = 0usize;
    let max_steps = ((cfg.t_max / cfg.dt) - 1e-9).ceil().max(0.0) as usize;
    let t0 = initial.t;
    let mut message = None;

    let stop_reason = loop {
        if steps >= max_steps {
            break StopReason::MaxTime;
        }
        let mut next = match stepper.step(&state) {
            Ok(s) => s,
            Err(e) => {
                message = Some(e.to_string());
                break StopReason::Blowup;
            }
        };
        next.t = t0 + (steps + 1) as f64 * cfg.dt;
        let drift = next.unitarity_drift();
        let new_parts = match energy::energy_parts(&next, sigma) {
            Ok(p) if p.total.is_finite() && drift <= cfg.unitarity_tol => p,
            Ok(p) => {
                message = Some(format!("non-finite energy {} or unitarity drift {drift:.3e}", p.total));
                break StopReason::Blowup;
            }
            Err(e) => {
                message = Some(e.to_string());
                break StopReason::Blowup;
            }
        };
        let z1 = energy::z1_speed(&state, &next, cfg.dt, sigma)?;
        if !z1.is_finite() {
            message = Some("non-finite stationarity speed".into());
            break StopReason::Blowup;
        }
        let slack = dissipation_slack(cfg.dt, z1, h, parts.total);
        if new_parts.total > parts.total + slack {
            message = Some(format!(
                "energy rose from {:.15e} to {:.15e} at t = {} (slack {:.3e})",
                parts.total, new_parts.total, next.t, slack
            ));
            break StopReason::EnergyViolation;
        }
        state = next;
        parts = new_parts;
        last_z1 = z1;
        steps += 1;
        history.push(StepRecord {
            t: state.t,
            total_energy: parts.total,
            bending: parts.bending,
            tension: parts.tension,
            z1,
            slack,
        });
        if z1 <= cfg.z1_stop {
            break StopReason::Stationary;
        }
        if steps % cfg.snapshot_every == 0 && steps < max_steps {
            observer(&snapshot(&state, z1)?).map_err(ObservedError::Observer)?;
            last_snapshot_step = steps;
        }
    };

    let terminal = snapshot(&state, last_z1)?;
    if steps > last_snapshot_step {
        observer(&terminal).map_err(ObservedError::Observer)?;
    }
    Ok(FlowTrajectory {
        snapshots: Vec::new(),
        history,
        initial_energy,
        terminal_state: state,
        terminal_diagnostics: terminal.diagnostics,
        converged: stop_reason == StopReason::Stationary,
        stop_reason,
        steps,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init;
    use crate::oracle::{commutative_reference, CommutativeSolution};
    use crate::sun::{pauli, AlgebraElement, I};

    fn rot(x: f64, y: f64, z: f64) -> UnitaryPoint {
        let mut a = pauli::x().scale(x);
        a.axpy(y, &pauli::y());
        a.axpy(z, &pauli::z());
        sun::expm(&AlgebraElement::from_skew0(&a.scale_c(I)))
    }

    fn generic_knots() -> KnotData {
        let p = vec![rot(0.1, -0.2, 0.3), rot(0.5, 0.2, -0.4), rot(-0.3, 0.6, 0.1)];
        let v0 = &pauli::y().scale_c(I).scale(0.4) * p[0].matrix();
        KnotData::new(p, v0, EndpointMode::NaturalSecondDerivative, None).unwrap()
    }

    fn config(knots: KnotData, sigma: f64, m: usize, dt: f64, t_max: f64) -> FlowConfig {
        let mut cfg = FlowConfig::new(knots, sigma, m, t_max, 1e-12);
        cfg.stability_factor = dt / default_dt(m, 1.0);
        cfg.dt = dt;
        cfg
    }

    #[test]
    fn stability_guard_rejects_large_steps() {
        let mut cfg = FlowConfig::new(generic_knots(), 1.0, 16, 1.0, 1e-8);
        assert!(cfg.validate().is_ok());
        cfg.dt *= 1.01;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("stability limit"));
        let s = init::build_initial(&cfg.knot_data, 16).unwrap();
        assert!(matches!(run(&cfg, &s), Err(FlowError::Config(_))));
    }

    #[test]
    fn config_validation() {
        let base = FlowConfig::new(generic_knots(), 1.0, 16, 1.0, 1e-8);
        let mut c = base.clone();
        c.sigma = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.m = 12;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.z1_stop = 0.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.snapshot_every = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_state_is_fixed() {
        let id = UnitaryPoint::identity(2);
        let knots = KnotData::new(vec![id.clone(), id], ComplexMatrix::zeros(2), EndpointMode::NaturalSecondDerivative, None).unwrap();
        let s = init::build_initial(&knots, 16).unwrap();
        let cfg = config(knots, 1.0, 16, 1e-3, 1.0);
        let stepper = FlowStepper::new(&cfg).unwrap();
        let next = stepper.step(&s).unwrap();
        for (a, b) in s.u_segments.iter().chain(&s.v_segments).zip(next.u_segments.iter().chain(&next.v_segments)) {
            for (p, r) in a.samples.iter().zip(&b.samples) {
                assert!(sun::frob_norm(&(p.matrix() - r.matrix())) < 1e-15);
            }
        }
        let tr = run(&cfg, &s).unwrap();
        assert_eq!(tr.stop_reason, StopReason::Stationary);
        assert!(tr.terminal_diagnostics.total_energy < 1e-20);
    }

    #[test]
    fn zero_time_gives_only_the_initial_snapshot() {
        let knots = generic_knots();
        let s = init::build_initial(&knots, 16).unwrap();
        let tr = run(&config(knots, 1.0, 16, 1e-3, 0.0), &s).unwrap();
        assert_eq!(tr.steps, 0);
        assert_eq!(tr.stop_reason, StopReason::MaxTime);
        assert!(!tr.converged);
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.terminal_state, s);
    }

    #[test]
    fn generic_run_dissipates_and_stays_admissible() {
        let knots = generic_knots();
        let s = init::build_initial(&knots, 16).unwrap();
        let mut cfg = config(knots.clone(), 1.0, 16, 1e-3, 0.3);
        cfg.snapshot_every = 100;
        let tr = run(&cfg, &s).unwrap();
        assert_eq!(tr.stop_reason, StopReason::MaxTime);
        assert_eq!(tr.steps, 300);
        // initial, every 100 steps, terminal
        let times: Vec<f64> = tr.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(times.len(), 4);
        assert!((times[3] - 0.3).abs() < 1e-12);
        let mut prev = tr.initial_energy.total;
        for r in &tr.history {
            assert!(r.total_energy <= prev + r.slack);
            prev = r.total_energy;
        }
        assert!(prev < 0.5 * tr.initial_energy.total);
        for snap in &tr.snapshots {
            assert!(snap.diagnostics.unitarity_drift < 1e-12);
        }
        // boundary rows are linearised, so they hold exactly only at rest
        assert!(tr.snapshots[0].diagnostics.max_bc_residual() < 1e-9);
        tr.terminal_state.validate(&knots, 1e-12, 1e-12).unwrap();
    }

    #[test]
    fn run_is_deterministic_and_thread_independent() {
        let knots = generic_knots();
        let s = init::build_initial(&knots, 16).unwrap();
        let cfg = config(knots, 0.5, 16, 1e-3, 0.05);
        let a = run(&cfg, &s).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run(&cfg, &s).unwrap());
        assert_eq!(a.terminal_state, b.terminal_state);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn right_translation_is_equivariant() {
        let knots = generic_knots();
        let w = rot(0.7, -0.1, 0.4);
        let wm = w.matrix();
        let moved = KnotData::new(
            knots.knots.iter().map(|p| UnitaryPoint::new_unchecked(p.matrix() * wm)).collect(),
            &knots.initial_velocity * wm,
            knots.endpoint_mode,
            None,
        )
        .unwrap();
        let s = init::build_initial(&knots, 16).unwrap();
        let shift = |c: &SegmentCurve| SegmentCurve {
            index: c.index,
            samples: c.samples.iter().map(|p| UnitaryPoint::new_unchecked(p.matrix() * wm)).collect(),
        };
        let st = SplineState::new(s.u_segments.iter().map(shift).collect(), s.v_segments.iter().map(shift).collect(), 0.0).unwrap();
        let a = run(&config(knots, 1.0, 16, 1e-3, 0.02), &s).unwrap();
        let b = run(&config(moved, 1.0, 16, 1e-3, 0.02), &st).unwrap();
        for (x, y) in a.terminal_state.u_segments.iter().chain(&a.terminal_state.v_segments).zip(b.terminal_state.u_segments.iter().chain(&b.terminal_state.v_segments)) {
            for (p, r) in x.samples.iter().zip(&y.samples) {
                assert!(sun::frob_norm(&(&(p.matrix() * wm) - r.matrix())) < 1e-10);
            }
        }
    }

    #[test]
    fn commutative_equilibrium_barely_moves() {
        let phases = [0.1, 0.6, -0.2];
        let m = 32;
        let r = commutative_reference(&phases, 0.4, 1.0, m, EndpointMode::NaturalSecondDerivative, None).unwrap();
        let knots = CommutativeSolution::knot_data(&phases, 0.4, EndpointMode::NaturalSecondDerivative, None).unwrap();
        let mut s = r.embed().unwrap();
        init::correct_boundary(&mut s, &knots, 1.0).unwrap();
        let tr = run(&config(knots, 1.0, m, 1e-3, 0.01), &s).unwrap();
        assert_eq!(tr.stop_reason, StopReason::MaxTime);
        assert!(tr.history.iter().all(|h| h.z1 < 1e-4), "{:?}", tr.history);
    }

    #[test]
    fn diagonal_subgroup_is_preserved() {
        let phases = [0.0, 0.9];
        let knots = CommutativeSolution::knot_data(&phases, 0.3, EndpointMode::NaturalSecondDerivative, None).unwrap();
        let s = init::build_initial(&knots, 16).unwrap();
        let tr = run(&config(knots, 1.0, 16, 1e-3, 0.05), &s).unwrap();
        for c in tr.terminal_state.u_segments.iter().chain(&tr.terminal_state.v_segments) {
            for p in &c.samples {
                assert!(p.matrix().get(0, 1).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn slack_has_a_rounding_floor() {
        assert!(dissipation_slack(1e-3, 0.0, 1.0 / 32.0, 1.0) > 0.0);
        let a = dissipation_slack(1e-3, 1.0, 0.1, 0.0);
        assert!((a - 10.0 * 1e-3 * 0.01 - 64.0 * f64::EPSILON / 0.01).abs() < 1e-18);
    }
}
