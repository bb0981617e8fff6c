//! Fixed-step symplectic integration of Hamilton's equations, with the exact
//! tangent map of each step carried alongside the flow.
//!
//! A step whose Newton solve fails (or produces non-finite values) is retried
//! as two half steps, recursively, down to `max_bisections` halvings. This is
//! only a rescue path near finite-time singularities: the stored trajectory
//! always lives on the fixed macro grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{canonical_skew, max_abs, sup_norm};
use crate::system::{HamiltonianSystem, TimeGrid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitMidpoint,
    StormerVerlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub step: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub blowup_threshold: f64,
    /// Maximum number of step halvings when a step fails.
    pub max_bisections: u32,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ImplicitMidpoint,
            step: 1e-3,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            blowup_threshold: 1e8,
            max_bisections: 40,
        }
    }
}

impl IntegratorConfig {
    pub fn with_step(step: f64) -> Self {
        Self { step, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidConfig(format!("step must be in (0, 1], got {}", self.step)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidConfig("newton_tol must be positive".into()));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::InvalidConfig("blowup_threshold must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig("newton_max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Rough global error scale of a second-order scheme at this step.
    pub fn error_estimate(&self) -> f64 {
        self.step * self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlowStatus {
    Completed,
    BlowUp { t_escape: f64 },
    NewtonFailure { t: f64 },
}

impl FlowStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, FlowStatus::Completed)
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub trajectory: Trajectory,
    pub status: FlowStatus,
}

/// Endpoint of a flow over an arbitrary span, without the stored trajectory.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    /// `d(u, p)(t_end) / d(u, p)(t_start)`, present when requested and completed.
    pub jacobian: Option<DMatrix<f64>>,
    pub status: FlowStatus,
}

fn split(z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let r = z.len() / 2;
    (z.rows(0, r).into_owned(), z.rows(r, r).into_owned())
}

fn join(u: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let r = u.len();
    let mut z = DVector::zeros(2 * r);
    z.rows_mut(0, r).copy_from(u);
    z.rows_mut(r, r).copy_from(p);
    z
}

fn field(sys: &HamiltonianSystem, t: f64, z: &DVector<f64>) -> DVector<f64> {
    let (u, p) = split(z);
    join(&sys.grad_p(t, &u, &p), &(-sys.grad_u(t, &u, &p)))
}

/// Jacobian of the Hamiltonian vector field: `J * Hess(H)`.
fn field_jacobian(sys: &HamiltonianSystem, t: f64, z: &DVector<f64>) -> DMatrix<f64> {
    let (u, p) = split(z);
    canonical_skew(u.len()) * sys.hessian(t, &u, &p)
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct StepFailed;

fn midpoint_step_raw(
    sys: &HamiltonianSystem,
    t: f64,
    z: &DVector<f64>,
    h: f64,
    cfg: &IntegratorConfig,
    want_jacobian: bool,
) -> std::result::Result<(DVector<f64>, Option<DMatrix<f64>>), StepFailed> {
    let n = z.len();
    let tm = t + 0.5 * h;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut next = z + field(sys, tm, z) * h;
    if !all_finite(&next) {
        next = z.clone();
    }
    for _ in 0..cfg.newton_max_iter {
        let mid = (z + &next) * 0.5;
        let f = field(sys, tm, &mid);
        let resid = &next - z - f * h;
        let lhs = &eye - field_jacobian(sys, tm, &mid) * (0.5 * h);
        let delta = lhs.lu().solve(&resid).ok_or(StepFailed)?;
        next -= &delta;
        if !all_finite(&next) {
            return Err(StepFailed);
        }
        if sup_norm(&delta) <= cfg.newton_tol * sup_norm(&next).max(1.0) {
            let jac = if want_jacobian {
                let mid = (z + &next) * 0.5;
                let a = field_jacobian(sys, tm, &mid) * (0.5 * h);
                let lhs = &eye - &a;
                let rhs = &eye + &a;
                Some(lhs.lu().solve(&rhs).ok_or(StepFailed)?)
            } else {
                None
            };
            return Ok((next, jac));
        }
    }
    Err(StepFailed)
}

fn verlet_step_raw(
    sys: &HamiltonianSystem,
    t: f64,
    z: &DVector<f64>,
    h: f64,
    want_jacobian: bool,
) -> std::result::Result<(DVector<f64>, Option<DMatrix<f64>>), StepFailed> {
    let (u, p) = split(z);
    let r = u.len();
    let p_half = &p - sys.grad_u(t, &u, &p) * (0.5 * h);
    let u_new = &u + sys.grad_p(t + 0.5 * h, &u, &p_half) * h;
    let p_new = &p_half - sys.grad_u(t + h, &u_new, &p_half) * (0.5 * h);
    let next = join(&u_new, &p_new);
    if !all_finite(&next) {
        return Err(StepFailed);
    }
    let jac = want_jacobian.then(|| {
        let vuu =
            |tt: f64, uu: &DVector<f64>, pp: &DVector<f64>| sys.hessian(tt, uu, pp).view((0, 0), (r, r)).into_owned();
        let tpp = sys.hessian(t + 0.5 * h, &u, &p_half).view((r, r), (r, r)).into_owned();
        let eye = DMatrix::<f64>::identity(r, r);
        // Rows: derivatives with respect to (u, p).
        let mut dp_half = DMatrix::zeros(r, 2 * r);
        dp_half.view_mut((0, 0), (r, r)).copy_from(&(vuu(t, &u, &p) * (-0.5 * h)));
        dp_half.view_mut((0, r), (r, r)).copy_from(&eye);
        let mut du_new = DMatrix::zeros(r, 2 * r);
        du_new.view_mut((0, 0), (r, r)).copy_from(&eye);
        du_new += tpp * &dp_half * h;
        let dp_new = &dp_half - vuu(t + h, &u_new, &p_half) * &du_new * (0.5 * h);
        let mut m = DMatrix::zeros(2 * r, 2 * r);
        m.view_mut((0, 0), (r, 2 * r)).copy_from(&du_new);
        m.view_mut((r, 0), (r, 2 * r)).copy_from(&dp_new);
        m
    });
    if let Some(j) = &jac {
        if j.iter().any(|x| !x.is_finite()) {
            return Err(StepFailed);
        }
    }
    Ok((next, jac))
}

/// One implicit-midpoint step `z' = z + h X(t + h/2, (z + z')/2)`.
pub fn step_implicit_midpoint(
    sys: &HamiltonianSystem,
    t: f64,
    u: &DVector<f64>,
    p: &DVector<f64>,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(h >= 0.0) {
        return Err(Error::InvalidConfig("step must be nonnegative".into()));
    }
    let (z, _) = midpoint_step_raw(sys, t, &join(u, p), h, cfg, false).map_err(|_| Error::NewtonFailure { t })?;
    Ok(split(&z))
}

/// One kick-drift-kick Stormer-Verlet step; requires a separable system.
pub fn step_stormer_verlet(
    sys: &HamiltonianSystem,
    t: f64,
    u: &DVector<f64>,
    p: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !sys.is_separable() {
        return Err(Error::NotSeparable);
    }
    let (z, _) = verlet_step_raw(sys, t, &join(u, p), h, false).map_err(|_| Error::NonFinite("Stormer-Verlet step"))?;
    Ok(split(&z))
}

enum Advance {
    Done(DVector<f64>),
    BlowUp { t: f64, state: DVector<f64> },
    Failed { t: f64 },
}

struct Stepper<'a> {
    sys: &'a HamiltonianSystem,
    cfg: &'a IntegratorConfig,
    jacobian: Option<DMatrix<f64>>,
}

impl Stepper<'_> {
    fn try_step(
        &self,
        t: f64,
        z: &DVector<f64>,
        h: f64,
    ) -> std::result::Result<(DVector<f64>, Option<DMatrix<f64>>), StepFailed> {
        let want = self.jacobian.is_some();
        match self.cfg.scheme {
            Scheme::ImplicitMidpoint => midpoint_step_raw(self.sys, t, z, h, self.cfg, want),
            Scheme::StormerVerlet => verlet_step_raw(self.sys, t, z, h, want),
        }
    }

    fn advance(&mut self, t: f64, z: &DVector<f64>, h: f64, depth: u32) -> Advance {
        match self.try_step(t, z, h) {
            Ok((next, step_jac)) => {
                if let (Some(acc), Some(m)) = (self.jacobian.as_mut(), step_jac) {
                    *acc = m * &*acc;
                }
                if sup_norm(&next) > self.cfg.blowup_threshold {
                    Advance::BlowUp { t: t + h, state: next }
                } else {
                    Advance::Done(next)
                }
            }
            Err(StepFailed) if depth < self.cfg.max_bisections => {
                let half = 0.5 * h;
                match self.advance(t, z, half, depth + 1) {
                    Advance::Done(mid) => self.advance(t + half, &mid, half, depth + 1),
                    other => other,
                }
            }
            Err(StepFailed) => {
                if sup_norm(z) > 0.1 * self.cfg.blowup_threshold {
                    Advance::BlowUp { t, state: z.clone() }
                } else {
                    Advance::Failed { t }
                }
            }
        }
    }
}

struct Propagation {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    jacobian: Option<DMatrix<f64>>,
    status: FlowStatus,
}

fn step_count(span: f64, h: f64) -> usize {
    if span <= 0.0 {
        0
    } else {
        ((span / h - 1e-9).ceil() as usize).max(1)
    }
}

fn propagate(
    sys: &HamiltonianSystem,
    z0: DVector<f64>,
    t_start: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    with_jacobian: bool,
    store: bool,
) -> Result<Propagation> {
    cfg.validate()?;
    if cfg.scheme == Scheme::StormerVerlet && !sys.is_separable() {
        return Err(Error::NotSeparable);
    }
    let n = step_count(t_end - t_start, cfg.step);
    let h = if n > 0 { (t_end - t_start) / n as f64 } else { 0.0 };
    let mut stepper = Stepper { sys, cfg, jacobian: with_jacobian.then(|| DMatrix::identity(z0.len(), z0.len())) };
    let mut times = vec![t_start];
    let mut states = vec![z0.clone()];
    let mut z = z0;
    let mut status = FlowStatus::Completed;
    for k in 0..n {
        let t = t_start + k as f64 * h;
        let t_next = if k + 1 == n { t_end } else { t_start + (k + 1) as f64 * h };
        match stepper.advance(t, &z, t_next - t, 0) {
            Advance::Done(next) => {
                z = next;
                if store {
                    times.push(t_next);
                    states.push(z.clone());
                }
            }
            Advance::BlowUp { t: t_escape, state } => {
                if store && t_escape > *times.last().expect("nonempty") {
                    times.push(t_escape);
                    states.push(state.clone());
                }
                z = state;
                status = FlowStatus::BlowUp { t_escape };
                break;
            }
            Advance::Failed { t } => {
                status = FlowStatus::NewtonFailure { t };
                break;
            }
        }
    }
    if !store {
        times = vec![t_start];
        states = vec![z];
    }
    let jacobian = if status.is_completed() { stepper.jacobian } else { None };
    Ok(Propagation { times, states, jacobian, status })
}

fn check_dims(sys: &HamiltonianSystem, u0: &DVector<f64>, p0: &DVector<f64>) -> Result<()> {
    let r = sys.dim();
    for v in [u0, p0] {
        if v.len() != r {
            return Err(Error::DimensionMismatch { expected: r, found: v.len() });
        }
    }
    Ok(())
}

fn to_flow_result(prop: &Propagation) -> Result<FlowResult> {
    let grid = if prop.status.is_completed() {
        TimeGrid::new(prop.times.clone())?
    } else {
        TimeGrid::partial(prop.times.clone())?
    };
    let (positions, momenta) = prop.states.iter().map(split).unzip();
    Ok(FlowResult { trajectory: Trajectory::new(grid, positions, momenta)?, status: prop.status })
}

/// March Hamilton's equations from `(u0, p0)` over `[0, 1]`.
///
/// Blow-up and Newton failure are reported through [`FlowStatus`], not as errors.
pub fn integrate_flow(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<FlowResult> {
    check_dims(sys, u0, p0)?;
    let prop = propagate(sys, join(u0, p0), 0.0, 1.0, cfg, false, true)?;
    to_flow_result(&prop)
}

/// Flow over `[0, 1]` together with the tangent map `D phi_1` (when completed).
pub fn integrate_flow_with_jacobian(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<(FlowResult, Option<DMatrix<f64>>)> {
    check_dims(sys, u0, p0)?;
    let prop = propagate(sys, join(u0, p0), 0.0, 1.0, cfg, true, true)?;
    Ok((to_flow_result(&prop)?, prop.jacobian))
}

/// Flow endpoint over `[t_start, t_end]` on the same step alignment as the unit flow.
pub fn flow_map(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    t_start: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    with_jacobian: bool,
) -> Result<FlowMap> {
    check_dims(sys, u0, p0)?;
    if !(t_end >= t_start) {
        return Err(Error::InvalidConfig("flow span must be nondecreasing".into()));
    }
    let prop = propagate(sys, join(u0, p0), t_start, t_end, cfg, with_jacobian, false)?;
    let (u, p) = split(prop.states.last().expect("nonempty"));
    Ok(FlowMap { u, p, jacobian: prop.jacobian, status: prop.status })
}

/// `D phi_1 = d(u(1), p(1)) / d(u0, p0)` from the exact derivative of each step.
pub fn flow_jacobian(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let map = flow_map(sys, u0, p0, 0.0, 1.0, cfg, true)?;
    map.jacobian.ok_or(Error::FlowIncomplete(map.status))
}

/// `max |J^T Jc J - Jc|` with `Jc` the canonical skew matrix.
pub fn symplecticity_defect(jac: &DMatrix<f64>) -> Result<f64> {
    if jac.nrows() != jac.ncols() || !jac.nrows().is_multiple_of(2) || jac.nrows() == 0 {
        return Err(Error::DimensionMismatch { expected: 2 * (jac.nrows() / 2).max(1), found: jac.ncols() });
    }
    let skew = canonical_skew(jac.nrows() / 2);
    Ok(max_abs(&(jac.transpose() * &skew * jac - &skew)))
}

/// Largest `|H(t_k, chi(t_k)) - H(0, chi(0))|` along a trajectory.
pub fn energy_drift(sys: &HamiltonianSystem, chi: &Trajectory) -> f64 {
    let e0 = sys.energy(chi.times()[0], &chi.positions()[0], &chi.momenta()[0]);
    chi.times()
        .iter()
        .zip(chi.positions().iter().zip(chi.momenta()))
        .map(|(&t, (u, p))| (sys.energy(t, u, p) - e0).abs())
        .fold(0.0, f64::max)
}
