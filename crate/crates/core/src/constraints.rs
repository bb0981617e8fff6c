//! Momentum constraints `p = Sigma(e)` imposed with Lagrange multipliers,
//! and the pointwise presymplectic constraint algorithm on the extended
//! space with coordinates `(u, p, Lambda, e)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::integrators::{FlowResult, FlowStatus, IntegratorConfig};
use crate::linalg::{left_null_space, lstsq_min_norm, max_abs, null_space, sup_norm};
use crate::system::{action_functional, HamiltonianSystem, TimeGrid, Trajectory};
use crate::{Error, Result};

pub type SigmaFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `r x k` matrix `dSigma_a / de_i`.
pub type DSigmaFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

const SECOND_DERIVATIVE_STEP: f64 = 1e-5;
const DESCENT_FD_STEP: f64 = 1e-6;
/// Largest `|p - Sigma(e)|` accepted as lying on the constraint.
pub const ON_CONSTRAINT_TOL: f64 = 1e-8;

/// Parametrized momentum constraint `p = Sigma(e)`, `e` in `R^k`.
#[derive(Clone)]
pub struct ConstraintSpec {
    name: String,
    r: usize,
    k: usize,
    sigma: SigmaFn,
    dsigma: DSigmaFn,
    pub rank_tol: f64,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("name", &self.name)
            .field("r", &self.r)
            .field("k", &self.k)
            .field("rank_tol", &self.rank_tol)
            .finish()
    }
}

/// Serializable choice among the built-in constraint families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintDef {
    Identity {
        dim: usize,
    },
    Circle,
    /// `Sigma(e) = matrix * e + offset`, `matrix` given by rows.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

impl ConstraintSpec {
    pub fn new(
        name: impl Into<String>,
        r: usize,
        k: usize,
        sigma: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        dsigma: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), r, k, sigma: Arc::new(sigma), dsigma: Arc::new(dsigma), rank_tol: 1e-10 }
    }

    /// `Sigma(e) = e` on `R^r`.
    pub fn identity(r: usize) -> Self {
        Self::new("identity", r, r, |e| e.clone(), move |_| DMatrix::identity(r, r))
    }

    /// Unit covectors in the plane: `Sigma(e) = (cos e, sin e)`.
    pub fn circle() -> Self {
        Self::new(
            "circle",
            2,
            1,
            |e| DVector::from_column_slice(&[e[0].cos(), e[0].sin()]),
            |e| DMatrix::from_column_slice(2, 1, &[-e[0].sin(), e[0].cos()]),
        )
    }

    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offset.len() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: offset.len() });
        }
        let (r, k) = matrix.shape();
        let m = matrix.clone();
        Ok(Self::new("affine", r, k, move |e| &m * e + &offset, move |_| matrix.clone()))
    }

    pub fn from_def(def: &ConstraintDef) -> Result<Self> {
        match def {
            ConstraintDef::Identity { dim: 0 } => {
                Err(Error::InvalidConfig("identity constraint needs dim >= 1".into()))
            }
            &ConstraintDef::Identity { dim } => Ok(Self::identity(dim)),
            ConstraintDef::Circle => Ok(Self::circle()),
            ConstraintDef::Affine { matrix, offset } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, Vec::len);
                if rows == 0 || cols == 0 || matrix.iter().any(|row| row.len() != cols) {
                    return Err(Error::InvalidConfig("affine constraint needs a nonempty rectangular matrix".into()));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Self::affine(DMatrix::from_row_slice(rows, cols, &flat), DVector::from_column_slice(offset))
            }
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::identity(1)),
            "circle" => Some(Self::circle()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Dimension of the configuration space.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Dimension of the parameter space `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sigma(&self, e: &DVector<f64>) -> DVector<f64> {
        (self.sigma)(e)
    }

    pub fn dsigma(&self, e: &DVector<f64>) -> DMatrix<f64> {
        (self.dsigma)(e)
    }

    /// `sum_a lambda_a d^2 Sigma_a / de_i de_j` by central differences of `dsigma`.
    pub fn contracted_second_derivative(&self, e: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
        let h = SECOND_DERIVATIVE_STEP;
        let mut out = DMatrix::zeros(self.k, self.k);
        for j in 0..self.k {
            let mut a = e.clone();
            let mut b = e.clone();
            a[j] += h;
            b[j] -= h;
            let col = (self.dsigma(&a).transpose() * lambda - self.dsigma(&b).transpose() * lambda) / (2.0 * h);
            out.set_column(j, &col);
        }
        out
    }

    /// Largest mismatch between `dsigma` and central differences of `sigma`.
    pub fn dsigma_defect(&self, probes: &[DVector<f64>], step: f64) -> f64 {
        let mut worst = 0.0_f64;
        for e in probes {
            let d = self.dsigma(e);
            for j in 0..self.k {
                let mut a = e.clone();
                let mut b = e.clone();
                a[j] += step;
                b[j] -= step;
                let fd = (self.sigma(&a) - self.sigma(&b)) / (2.0 * step);
                worst = worst.max(sup_norm(&(fd - d.column(j))));
            }
        }
        worst
    }

    fn check_e(&self, e: &DVector<f64>) -> Result<()> {
        if e.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, found: e.len() });
        }
        Ok(())
    }
}

/// A point `(u, p, Lambda, e)` of the extended space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub lambda: DVector<f64>,
    pub e: DVector<f64>,
}

impl ExtendedState {
    pub fn new(u: DVector<f64>, p: DVector<f64>, lambda: DVector<f64>, e: DVector<f64>) -> Result<Self> {
        if [&u, &p, &lambda, &e].iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("extended state"));
        }
        Ok(Self { u, p, lambda, e })
    }

    /// State with `p = Sigma(e)` and `Lambda = 0`.
    pub fn on_constraint(spec: &ConstraintSpec, u: DVector<f64>, e: DVector<f64>) -> Result<Self> {
        spec.check_e(&e)?;
        let p = spec.sigma(&e);
        Self::new(u, p, DVector::zeros(spec.r()), e)
    }

    fn check(&self, sys: &HamiltonianSystem, spec: &ConstraintSpec) -> Result<()> {
        let r = sys.dim();
        if spec.r() != r {
            return Err(Error::DimensionMismatch { expected: r, found: spec.r() });
        }
        for v in [&self.u, &self.p, &self.lambda] {
            if v.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: v.len() });
            }
        }
        spec.check_e(&self.e)
    }

    fn constraint_residual(&self, spec: &ConstraintSpec) -> f64 {
        sup_norm(&(&self.p - spec.sigma(&self.e)))
    }
}

/// `S(chi) + sum_k w_k Lambda_k . (p_k - Sigma(e_k))` by the trapezoidal rule.
pub fn extended_action(
    sys: &HamiltonianSystem,
    spec: &ConstraintSpec,
    chi: &Trajectory,
    lambda_path: &[DVector<f64>],
    e_path: &[DVector<f64>],
) -> Result<f64> {
    for len in [lambda_path.len(), e_path.len()] {
        if len != chi.len() {
            return Err(Error::GridMismatch { expected: chi.len(), found: len });
        }
    }
    let base = action_functional(sys, chi)?;
    let w = chi.grid().trapezoid_weights();
    let mut extra = 0.0;
    for k in 0..chi.len() {
        spec.check_e(&e_path[k])?;
        extra += w[k] * lambda_path[k].dot(&(&chi.momenta()[k] - spec.sigma(&e_path[k])));
    }
    Ok(base + extra)
}

/// `(dH/dp - Lambda, -dH/du)`; the constraints themselves are not imposed.
pub fn constrained_vector_field(
    sys: &HamiltonianSystem,
    spec: &ConstraintSpec,
    state: &ExtendedState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    state.check(sys, spec)?;
    let du = sys.grad_p(0.0, &state.u, &state.p) - &state.lambda;
    let dp = -sys.grad_u(0.0, &state.u, &state.p);
    if du.iter().chain(dp.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("constrained vector field"));
    }
    Ok((du, dp))
}

/// `dSigma/de^T Lambda`, vanishing iff `Lambda` annihilates the tangent of `Im Sigma`.
pub fn polar_constraint_residual(spec: &ConstraintSpec, e: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    spec.dsigma(e).transpose() * lambda
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stability {
    /// Tangency holds; `d` is the minimal-norm `e` velocity and `c` the
    /// minimal-norm `Lambda` velocity.
    Stable { d: Vec<f64>, c: Vec<f64>, c_residual: f64 },
    /// The part of `-dH/du` outside the image of `dSigma/de`.
    SecondaryConstraint { direction: Vec<f64>, residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimaryConstraints {
    /// `p - Sigma(e)` recovered from the solvability conditions.
    pub phi: Vec<f64>,
    /// `Lambda^T dSigma/de` recovered from the solvability conditions.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GotayReport {
    /// Orthonormal basis of the kernel of the presymplectic form, as rows in
    /// `(u, p, Lambda, e)` coordinates.
    pub kernel_basis: Vec<Vec<f64>>,
    /// `max |Omega_0 K|` over the kernel basis.
    pub kernel_defect: f64,
    pub primary_constraints: PrimaryConstraints,
    pub stability: Stability,
    pub terminated: bool,
}

/// `du^a ^ dp_a` on `(u, p, Lambda, e)`.
fn presymplectic_form(r: usize, k: usize) -> DMatrix<f64> {
    let n = 3 * r + k;
    let mut omega = DMatrix::zeros(n, n);
    for a in 0..r {
        omega[(a, r + a)] = 1.0;
        omega[(r + a, a)] = -1.0;
    }
    omega
}

/// Differential of `H_0 = H - Lambda . (p - Sigma(e))`.
fn extended_energy_differential(sys: &HamiltonianSystem, spec: &ConstraintSpec, s: &ExtendedState) -> DVector<f64> {
    let r = spec.r();
    let k = spec.k();
    let mut d = DVector::zeros(3 * r + k);
    d.rows_mut(0, r).copy_from(&sys.grad_u(0.0, &s.u, &s.p));
    d.rows_mut(r, r).copy_from(&(sys.grad_p(0.0, &s.u, &s.p) - &s.lambda));
    d.rows_mut(2 * r, r).copy_from(&(-(&s.p - spec.sigma(&s.e))));
    d.rows_mut(3 * r, k).copy_from(&polar_constraint_residual(spec, &s.e, &s.lambda));
    d
}

/// Minimal-norm `e` velocity keeping `p = Sigma(e)`: `dSigma D = -dH/du`.
fn tangency(
    sys: &HamiltonianSystem,
    spec: &ConstraintSpec,
    u: &DVector<f64>,
    e: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, f64) {
    let p = spec.sigma(e);
    let hu = sys.grad_u(0.0, u, &p);
    let ds = spec.dsigma(e);
    let (d, _) = lstsq_min_norm(&ds, &(-&hu), spec.rank_tol);
    let miss = -&hu - &ds * &d;
    let tol = spec.rank_tol * sup_norm(&hu).max(1.0);
    (d, miss, tol)
}

/// One pass of the constraint algorithm at a probe state.
pub fn gotay_step(sys: &HamiltonianSystem, spec: &ConstraintSpec, state: &ExtendedState) -> Result<GotayReport> {
    state.check(sys, spec)?;
    let (r, k) = (spec.r(), spec.k());
    let omega = presymplectic_form(r, k);
    let kernel = null_space(&omega, spec.rank_tol);
    let kernel_defect = if kernel.ncols() == 0 { 0.0 } else { max_abs(&(&omega * &kernel)) };

    // Solvability: dH_0 must vanish on the kernel. Expressing that restriction
    // in coordinates recovers the primary constraints.
    let dh = extended_energy_differential(sys, spec, state);
    let restricted = &kernel * (kernel.transpose() * &dh);
    let phi: Vec<f64> = restricted.rows(2 * r, r).iter().map(|x| -x).collect();
    let psi: Vec<f64> = restricted.rows(3 * r, k).iter().copied().collect();

    let (d, miss, tol) = tangency(sys, spec, &state.u, &state.e);
    let stability = if sup_norm(&miss) > tol {
        Stability::SecondaryConstraint { direction: miss.iter().copied().collect(), residual: sup_norm(&miss) }
    } else {
        // d/dt (Lambda^T dSigma) = 0: dSigma^T C = -g.
        let ds = spec.dsigma(&state.e);
        let g = spec.contracted_second_derivative(&state.e, &state.lambda) * &d;
        let (c, c_residual) = lstsq_min_norm(&ds.transpose(), &(-g), spec.rank_tol);
        Stability::Stable { d: d.iter().copied().collect(), c: c.iter().copied().collect(), c_residual }
    };
    let terminated = matches!(stability, Stability::Stable { .. });
    Ok(GotayReport {
        kernel_basis: kernel.column_iter().map(|c| c.iter().copied().collect()).collect(),
        kernel_defect,
        primary_constraints: PrimaryConstraints { phi, psi },
        stability,
        terminated,
    })
}

fn require_on_constraint(spec: &ConstraintSpec, state: &ExtendedState) -> Result<()> {
    let residual = state.constraint_residual(spec);
    if !(residual <= ON_CONSTRAINT_TOL) {
        return Err(Error::OffConstraint { residual });
    }
    Ok(())
}

/// `max |Lambda . dH/du|` over a basis of multipliers annihilating the tangent of `Im Sigma`.
pub fn stability_check(sys: &HamiltonianSystem, spec: &ConstraintSpec, state: &ExtendedState) -> Result<f64> {
    state.check(sys, spec)?;
    require_on_constraint(spec, state)?;
    let hu = sys.grad_u(0.0, &state.u, &state.p);
    let basis = left_null_space(&spec.dsigma(&state.e), spec.rank_tol);
    Ok(basis.column_iter().map(|l| l.dot(&hu).abs()).fold(0.0, f64::max))
}

/// Largest derivative of `H` along the characteristic directions
/// `Lambda^a d/du^a`, by central differences; zero iff `H` descends to the quotient.
pub fn check_hamiltonian_descends(
    sys: &HamiltonianSystem,
    spec: &ConstraintSpec,
    probes: &[ExtendedState],
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for s in probes {
        s.check(sys, spec)?;
        require_on_constraint(spec, s)?;
        let basis = left_null_space(&spec.dsigma(&s.e), spec.rank_tol);
        for l in basis.column_iter() {
            let a = &s.u + l * DESCENT_FD_STEP;
            let b = &s.u - l * DESCENT_FD_STEP;
            let d = (sys.energy(0.0, &a, &s.p) - sys.energy(0.0, &b, &s.p)) / (2.0 * DESCENT_FD_STEP);
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

/// Choice of the multiplier along a constrained trajectory.
#[derive(Clone)]
pub enum Gauge {
    LambdaZero,
    Custom(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl fmt::Debug for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::LambdaZero => f.write_str("LambdaZero"),
            Gauge::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Gauge {
    fn at(&self, t: f64, r: usize) -> DVector<f64> {
        match self {
            Gauge::LambdaZero => DVector::zeros(r),
            Gauge::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedFlow {
    /// Positions and the derived momenta `p = Sigma(e)`.
    pub flow: FlowResult,
    pub e_path: Vec<DVector<f64>>,
    pub lambda_path: Vec<DVector<f64>>,
    pub energy_drift: f64,
    /// `max |p - Sigma(e)|` along the path.
    pub constraint_drift: f64,
    /// `max |Lambda^T dSigma/de|` of the multiplier path.
    pub max_polar_residual: f64,
    /// Largest tangency residual met during the solve.
    pub max_tangency_residual: f64,
}

const CONSTRAINED_FD_STEP: f64 = 1e-7;

/// Integrate `u' = dH/dp - Lambda`, `e' = D` with `p = Sigma(e)` by the
/// implicit midpoint rule on `(u, e)`, `D` the minimal-norm solution of
/// `dSigma D = -dH/du`.
pub fn integrate_constrained(
    sys: &HamiltonianSystem,
    spec: &ConstraintSpec,
    u0: &DVector<f64>,
    e0: &DVector<f64>,
    cfg: &IntegratorConfig,
    gauge: &Gauge,
) -> Result<ConstrainedFlow> {
    cfg.validate()?;
    let (r, k) = (sys.dim(), spec.k());
    let start = ExtendedState::on_constraint(spec, u0.clone(), e0.clone())?;
    start.check(sys, spec)?;
    let lam0 = gauge.at(0.0, r);
    if lam0.len() != r {
        return Err(Error::DimensionMismatch { expected: r, found: lam0.len() });
    }

    let mut max_tangency = 0.0_f64;
    let rhs = |t: f64, y: &DVector<f64>, worst: &mut f64| -> Result<DVector<f64>> {
        let u = y.rows(0, r).into_owned();
        let e = y.rows(r, k).into_owned();
        let (d, miss, tol) = tangency(sys, spec, &u, &e);
        let m = sup_norm(&miss);
        *worst = worst.max(m);
        if m > tol {
            return Err(Error::Unstable { t, residual: m });
        }
        let p = spec.sigma(&e);
        let mut out = DVector::zeros(r + k);
        out.rows_mut(0, r).copy_from(&(sys.grad_p(t, &u, &p) - gauge.at(t, r)));
        out.rows_mut(r, k).copy_from(&d);
        Ok(out)
    };

    let n = ((1.0 / cfg.step) - 1e-9).ceil().max(1.0) as usize;
    let h = 1.0 / n as f64;
    let mut y = DVector::zeros(r + k);
    y.rows_mut(0, r).copy_from(u0);
    y.rows_mut(r, k).copy_from(e0);
    rhs(0.0, &y, &mut max_tangency)?;

    let mut times = vec![0.0];
    let mut ys = vec![y.clone()];
    let mut status = FlowStatus::Completed;
    for step in 0..n {
        let t = step as f64 * h;
        let tm = t + 0.5 * h;
        // Newton on z = y_{n+1} - y_n - h f(t_m, (y_n + y_{n+1}) / 2) = 0 with
        // a finite-difference Jacobian.
        let mut next = &y + rhs(t, &y, &mut max_tangency)? * h;
        let mut converged = false;
        for _ in 0..cfg.newton_max_iter {
            let mid = (&y + &next) * 0.5;
            let f = rhs(tm, &mid, &mut max_tangency)?;
            let g = &next - &y - &f * h;
            let mut jac = DMatrix::identity(r + k, r + k);
            for j in 0..r + k {
                let mut a = mid.clone();
                let mut b = mid.clone();
                a[j] += CONSTRAINED_FD_STEP;
                b[j] -= CONSTRAINED_FD_STEP;
                let mut scratch = 0.0;
                let col = (rhs(tm, &a, &mut scratch)? - rhs(tm, &b, &mut scratch)?) / (2.0 * CONSTRAINED_FD_STEP);
                let scaled = col * (0.5 * h);
                jac.set_column(j, &(jac.column(j) - scaled));
            }
            let delta = jac.lu().solve(&(-&g)).ok_or(Error::NewtonFailure { t })?;
            next += &delta;
            if sup_norm(&delta) <= cfg.newton_tol * sup_norm(&next).max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            status = FlowStatus::NewtonFailure { t };
            break;
        }
        if sup_norm(&next) > cfg.blowup_threshold || next.iter().any(|x| !x.is_finite()) {
            status = FlowStatus::BlowUp { t_escape: t + h };
            break;
        }
        y = next;
        times.push(if step + 1 == n { 1.0 } else { (step + 1) as f64 * h });
        ys.push(y.clone());
    }

    let positions: Vec<DVector<f64>> = ys.iter().map(|y| y.rows(0, r).into_owned()).collect();
    let e_path: Vec<DVector<f64>> = ys.iter().map(|y| y.rows(r, k).into_owned()).collect();
    let momenta: Vec<DVector<f64>> = e_path.iter().map(|e| spec.sigma(e)).collect();
    let lambda_path: Vec<DVector<f64>> = times.iter().map(|&t| gauge.at(t, r)).collect();
    let constraint_drift = momenta.iter().zip(&e_path).map(|(p, e)| sup_norm(&(p - spec.sigma(e)))).fold(0.0, f64::max);
    let max_polar_residual = e_path
        .iter()
        .zip(&lambda_path)
        .map(|(e, l)| sup_norm(&polar_constraint_residual(spec, e, l)))
        .fold(0.0, f64::max);
    let h0 = sys.energy(0.0, &positions[0], &momenta[0]);
    let energy_drift = times
        .iter()
        .zip(positions.iter().zip(&momenta))
        .map(|(&t, (u, p))| (sys.energy(t, u, p) - h0).abs())
        .fold(0.0, f64::max);
    let grid = TimeGrid::partial(times)?;
    let trajectory = Trajectory::new(grid, positions, momenta)?;
    Ok(ConstrainedFlow {
        flow: FlowResult { trajectory, status },
        e_path,
        lambda_path,
        energy_drift,
        constraint_drift,
        max_polar_residual,
        max_tangency_residual: max_tangency,
    })
}
