//! Bundled Hamiltonian systems with closed-form facts used as oracles.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary::{hamilton_principal_function, solve_dirichlet, BvpSolution, Classification, ShootingConfig};
use crate::integrators::{flow_jacobian, integrate_flow, FlowStatus, IntegratorConfig};
use crate::linalg::{loglog_slope, sup_norm};
use crate::system::{action_functional, ConfigSpace, HamiltonianSystem, Trajectory};
use crate::{Error, Result};

type FactCheck = Arc<dyn Fn() -> Result<f64> + Send + Sync>;

/// A closed-form statement about an example, checked by measuring a defect.
#[derive(Clone)]
pub struct AnalyticFact {
    pub key: &'static str,
    pub description: String,
    pub tolerance: f64,
    check: FactCheck,
}

impl fmt::Debug for AnalyticFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticFact")
            .field("key", &self.key)
            .field("description", &self.description)
            .field("tolerance", &self.tolerance)
            .finish()
    }
}

impl AnalyticFact {
    fn new(
        key: &'static str,
        description: impl Into<String>,
        tolerance: f64,
        check: impl Fn() -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { key, description: description.into(), tolerance, check: Arc::new(check) }
    }

    /// Nonnegative defect; the fact holds when it is at most `tolerance`.
    pub fn measure(&self) -> Result<f64> {
        (self.check)()
    }
}

#[derive(Debug, Clone)]
pub struct ExampleSystem {
    pub system: HamiltonianSystem,
    pub facts: Vec<AnalyticFact>,
}

pub const EXAMPLE_NAMES: [&str; 7] =
    ["free-particle", "uniform-field", "quartic", "pendulum", "sphere", "cotangent-lift", "lambda-family"];

/// Example with default parameters: `m = k = 1`, force `(1, 0)` for the
/// uniform field, `X(u) = u` for the cotangent lift and `X = 1`,
/// `lambda = 1/2` for the lambda family.
pub fn example_by_name(name: &str) -> Option<ExampleSystem> {
    let ex = match name {
        "free-particle" => make_free_particle(1.0),
        "uniform-field" => make_uniform_field(1.0, &[1.0, 0.0]),
        "quartic" => make_quartic(1.0),
        "pendulum" => make_pendulum(1.0, 1.0),
        "sphere" => Ok(make_sphere_geodesics()),
        "cotangent-lift" => Ok(make_cotangent_lift(VectorField::linear(1.0, 1))),
        "lambda-family" => make_lambda_family(VectorField::constant(&[1.0]), 0.5),
        _ => return None,
    };
    Some(ex.expect("default parameters are valid"))
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive { name, value })
    }
}

fn mass(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveMass(m))
    }
}

fn sup_error(traj: &Trajectory, exact: impl Fn(f64) -> f64) -> f64 {
    traj.times().iter().zip(traj.positions()).map(|(&t, u)| (u[0] - exact(t)).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- free particle

pub fn free_particle_flow(m: f64, u0: f64, p0: f64, t: f64) -> (f64, f64) {
    (u0 + p0 * t / m, p0)
}

pub fn free_particle_principal_function(m: f64, u0: f64, u1: f64) -> f64 {
    0.5 * m * (u1 - u0).powi(2)
}

/// `H = |p|^2 / 2m` on the line.
pub fn make_free_particle(m: f64) -> Result<ExampleSystem> {
    mass(m)?;
    let system =
        HamiltonianSystem::new("free-particle", ConfigSpace::linear(1), move |_, _, p| p.norm_squared() / (2.0 * m))
            .with_gradients(|_, u, _| DVector::zeros(u.len()), move |_, _, p| p / m)
            .with_hessian(move |_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0 / m]))
            .separable()
            .with_analytic_flow(move |t, u, p| {
                let (a, b) = free_particle_flow(m, u[0], p[0], t);
                (v1(a), v1(b))
            });

    let mut facts = Vec::new();
    let sys = system.clone();
    facts.push(AnalyticFact::new("flow", "phi_1(0.3, 1.7) = (u0 + p0/m, p0)", 1e-12, move || {
        let f = integrate_flow(&sys, &v1(0.3), &v1(1.7), &IntegratorConfig::default())?;
        let (u, p) = f.trajectory.last_state();
        let (eu, ep) = free_particle_flow(m, 0.3, 1.7, 1.0);
        Ok((u[0] - eu).abs().max((p[0] - ep).abs()))
    }));
    let sys = system.clone();
    facts.push(AnalyticFact::new("principal-function", "W(0, 2) = m (u1 - u0)^2 / 2", 1e-6, move || {
        let w = hamilton_principal_function(&sys, &v1(0.0), &v1(2.0), &ShootingConfig::default(), 0)?;
        Ok((w - free_particle_principal_function(m, 0.0, 2.0)).abs())
    }));
    let sys = system.clone();
    facts.push(AnalyticFact::new(
        "boundary-plane",
        "solutions of (0, 2) satisfy p1 = p0 = m (u1 - u0) and are unique",
        1e-8,
        move || {
            let set = solve_dirichlet(&sys, &v1(0.0), &v1(2.0), &ShootingConfig::default())?;
            if set.classification != Classification::Unique {
                return Ok(f64::INFINITY);
            }
            let s = &set.solutions[0];
            Ok((s.p1[0] - s.p0[0]).abs().max((s.p0[0] - 2.0 * m).abs()))
        },
    ));
    Ok(ExampleSystem { system, facts })
}

// ---------------------------------------------------------------- uniform field

/// `(u(t), p(t))` under `H = |p|^2 / 2m + f . u`.
pub fn uniform_field_flow(
    m: f64,
    force: &DVector<f64>,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    t: f64,
) -> (DVector<f64>, DVector<f64>) {
    (u0 + p0 * (t / m) - force * (t * t / (2.0 * m)), p0 - force * t)
}

/// `H = |p|^2 / 2m + f . u` on `R^r`, `r = force.len()`.
pub fn make_uniform_field(m: f64, force: &[f64]) -> Result<ExampleSystem> {
    mass(m)?;
    let r = force.len();
    if r == 0 {
        return Err(Error::InvalidConfig("uniform field needs at least one force component".into()));
    }
    if force.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("uniform field force"));
    }
    let f = DVector::from_column_slice(force);
    let (fh, fg, ff) = (f.clone(), f.clone(), f.clone());
    let system = HamiltonianSystem::new("uniform-field", ConfigSpace::linear(r), move |_, u, p| {
        p.norm_squared() / (2.0 * m) + fh.dot(u)
    })
    .with_gradients(move |_, _, _| fg.clone(), move |_, _, p| p / m)
    .with_hessian(move |_, _, _| {
        let mut h = DMatrix::zeros(2 * r, 2 * r);
        for a in 0..r {
            h[(r + a, r + a)] = 1.0 / m;
        }
        h
    })
    .separable()
    .with_analytic_flow(move |t, u, p| uniform_field_flow(m, &ff, u, p, t));

    let mut facts = Vec::new();
    let sys = system.clone();
    let f1 = f.clone();
    facts.push(AnalyticFact::new("flow", "phi_1(u0, p0) = (u0 + p0/m - f/2m, p0 - f)", 1e-12, move || {
        let u0 = DVector::from_element(r, 0.2);
        let p0 = DVector::from_element(r, 0.5);
        let out = integrate_flow(&sys, &u0, &p0, &IntegratorConfig::default())?;
        let (u, p) = out.trajectory.last_state();
        let (eu, ep) = uniform_field_flow(m, &f1, &u0, &p0, 1.0);
        Ok(sup_norm(&(u - eu)).max(sup_norm(&(p - ep))))
    }));
    let sys = system.clone();
    facts.push(AnalyticFact::new("dirichlet-momentum", "p0 = m (u1 - u0) + f/2, unique", 1e-8, move || {
        let u0 = DVector::zeros(r);
        let u1 = DVector::from_element(r, 1.0);
        let set = solve_dirichlet(&sys, &u0, &u1, &ShootingConfig::default())?;
        if set.classification != Classification::Unique {
            return Ok(f64::INFINITY);
        }
        Ok(sup_norm(&(&set.solutions[0].p0 - ((&u1 - &u0) * m + &f * 0.5))))
    }));
    Ok(ExampleSystem { system, facts })
}

// ---------------------------------------------------------------- quartic

/// Sign branch of the zero-energy solutions of the quartic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuarticBranch {
    /// `p0 = +m u0^2 / 2`, `u(t) = 2 u0 / (2 - u0 t)`.
    Growing,
    /// `p0 = -m u0^2 / 2`, `u(t) = 2 u0 / (2 + u0 t)`.
    Decaying,
}

impl QuarticBranch {
    fn sign(self) -> f64 {
        match self {
            QuarticBranch::Growing => 1.0,
            QuarticBranch::Decaying => -1.0,
        }
    }
}

pub fn quartic_zero_energy_momentum(m: f64, u0: f64, branch: QuarticBranch) -> f64 {
    branch.sign() * m * u0 * u0 / 2.0
}

/// Zero-energy state at time `t`, or `None` at or past the escape time.
pub fn quartic_zero_energy(m: f64, u0: f64, branch: QuarticBranch, t: f64) -> Option<(f64, f64)> {
    let denom = 2.0 - branch.sign() * u0 * t;
    if let Some(te) = quartic_escape_time(u0, branch) {
        if t >= te {
            return None;
        }
    }
    let u = 2.0 * u0 / denom;
    Some((u, branch.sign() * m * u * u / 2.0))
}

/// Time at which the zero-energy solution leaves every compact set.
pub fn quartic_escape_time(u0: f64, branch: QuarticBranch) -> Option<f64> {
    let s = branch.sign() * u0;
    (s > 0.0).then(|| 2.0 / s)
}

/// `H = p^2/2m - m u^4/8`.
///
/// The quartic coefficient makes `u(t) = 2u0/(2 -/+ u0 t)` with
/// `p0 = +/- m u0^2/2` the exact zero-energy solutions, escaping at `2/u0`.
pub fn make_quartic(m: f64) -> Result<ExampleSystem> {
    mass(m)?;
    let system = HamiltonianSystem::new("quartic", ConfigSpace::linear(1), move |_, u, p| {
        p.norm_squared() / (2.0 * m) - m * u[0].powi(4) / 8.0
    })
    .with_gradients(move |_, u, _| v1(-m * u[0].powi(3) / 2.0), move |_, _, p| p / m)
    .with_hessian(move |_, u, _| DMatrix::from_row_slice(2, 2, &[-1.5 * m * u[0] * u[0], 0.0, 0.0, 1.0 / m]))
    .separable();

    let mut facts = Vec::new();
    let sys = system.clone();
    facts.push(AnalyticFact::new(
        "escape-time",
        "u0 = 4 on the growing branch escapes at t = 2/u0 = 0.5",
        0.05,
        move || {
            let p0 = quartic_zero_energy_momentum(m, 4.0, QuarticBranch::Growing);
            let f = integrate_flow(&sys, &v1(4.0), &v1(p0), &IntegratorConfig::default())?;
            Ok(match f.status {
                FlowStatus::BlowUp { t_escape } => (t_escape - 0.5).abs(),
                _ => f64::INFINITY,
            })
        },
    ));
    for (key, branch, desc) in [
        ("zero-energy-growing", QuarticBranch::Growing, "u0 = 1 follows 2/(2 - t) at h = 5e-4"),
        ("zero-energy-decaying", QuarticBranch::Decaying, "u0 = 1 follows 2/(2 + t) at h = 5e-4"),
    ] {
        let sys = system.clone();
        facts.push(AnalyticFact::new(key, desc, 1e-6, move || {
            let p0 = quartic_zero_energy_momentum(m, 1.0, branch);
            let f = integrate_flow(&sys, &v1(1.0), &v1(p0), &IntegratorConfig::with_step(5e-4))?;
            if !f.status.is_completed() {
                return Ok(f64::INFINITY);
            }
            Ok(sup_error(&f.trajectory, |t| quartic_zero_energy(m, 1.0, branch, t).map_or(f64::NAN, |s| s.0)))
        }));
    }
    Ok(ExampleSystem { system, facts })
}

// ---------------------------------------------------------------- pendulum

/// `H = p^2/2m - k cos(theta)` with an angular coordinate.
pub fn make_pendulum(m: f64, k: f64) -> Result<ExampleSystem> {
    positive("m", m)?;
    positive("k", k)?;
    let system = HamiltonianSystem::new("pendulum", ConfigSpace::angular(1), move |_, u, p| {
        p.norm_squared() / (2.0 * m) - k * u[0].cos()
    })
    .with_gradients(move |_, u, _| v1(k * u[0].sin()), move |_, _, p| p / m)
    .with_hessian(move |_, u, _| DMatrix::from_row_slice(2, 2, &[k * u[0].cos(), 0.0, 0.0, 1.0 / m]))
    .separable();

    let mut facts = Vec::new();
    let sys = system.clone();
    facts.push(AnalyticFact::new("equilibrium", "(0, 0) is a fixed point", 1e-15, move || {
        let f = integrate_flow(&sys, &v1(0.0), &v1(0.0), &IntegratorConfig::default())?;
        let (u, p) = f.trajectory.last_state();
        Ok(u[0].abs().max(p[0].abs()))
    }));
    let omega = (k / m).sqrt();
    if omega < PI {
        let sys = system.clone();
        facts.push(AnalyticFact::new(
            "small-angle-frequency",
            "linearized flow at (0, 0) rotates by sqrt(k/m) per unit time",
            1e-4,
            move || {
                let jac = flow_jacobian(&sys, &v1(0.0), &v1(0.0), &IntegratorConfig::default())?;
                let measured = (0.5 * jac.trace()).clamp(-1.0, 1.0).acos();
                Ok((measured - omega).abs())
            },
        ));
    }
    let sys = system.clone();
    facts.push(AnalyticFact::new(
        "two-branches",
        "(0, pi/2) is joined by at least two isolated solutions with distinct actions",
        1e-3,
        move || {
            let set = solve_dirichlet(&sys, &v1(0.0), &v1(PI / 2.0), &ShootingConfig::default())?;
            if set.solutions.len() < 2 || !matches!(set.classification, Classification::MultipleIsolated { .. }) {
                return Ok(f64::INFINITY);
            }
            let ws: Vec<f64> =
                set.solutions.iter().map(|s| action_functional(&sys, &s.trajectory)).collect::<Result<_>>()?;
            // Defect is how far the spread of actions falls short of 2e-3.
            let max_gap =
                ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ws.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok((2e-3 - max_gap).max(0.0))
        },
    ));
    Ok(ExampleSystem { system, facts })
}

// ---------------------------------------------------------------- sphere

/// Closed-form flow of `H = |u|^2 |p|^2 / 2` on `T*R^3`.
///
/// On `|u| = 1, u.p = 0` this is the great circle
/// `u0 cos(|p0| t) + p0/|p0| sin(|p0| t)`.
pub fn sphere_flow(t: f64, u0: &DVector<f64>, p0: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let a0 = u0.norm_squared();
    let b0 = p0.norm_squared();
    let c = u0.dot(p0);
    let w2 = (a0 * b0 - c * c).max(0.0);
    let w = w2.sqrt();
    let (s, cs) = if w * t.abs() < 1e-8 {
        (t * (1.0 - w2 * t * t / 6.0), 1.0 - w2 * t * t / 2.0)
    } else {
        ((w * t).sin() / w, (w * t).cos())
    };
    let v0 = p0 * a0;
    let g = &v0 - u0 * c;
    let ect = (c * t).exp();
    let u = (u0 * cs + &g * s) * ect;
    let du = (u0 * (c * cs - w2 * s) + &g * (c * s + cs)) * ect;
    let a = a0 * (2.0 * c * t).exp();
    let p = if a > 0.0 { du / a } else { p0.clone() };
    (u, p)
}

/// Geodesics of the unit sphere through the extension `H = |u|^2 |p|^2 / 2`
/// on `T*R^3`, whose flow preserves `|u| = 1, u.p = 0`.
pub fn make_sphere_geodesics() -> ExampleSystem {
    let system =
        HamiltonianSystem::new("sphere", ConfigSpace::linear(3), |_, u, p| 0.5 * u.norm_squared() * p.norm_squared())
            .with_gradients(|_, u, p| u * p.norm_squared(), |_, u, p| p * u.norm_squared())
            .with_hessian(|_, u, p| {
                let mut h = DMatrix::zeros(6, 6);
                h.view_mut((0, 0), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * p.norm_squared()));
                h.view_mut((3, 3), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * u.norm_squared()));
                let up = u * p.transpose() * 2.0;
                h.view_mut((0, 3), (3, 3)).copy_from(&up);
                h.view_mut((3, 0), (3, 3)).copy_from(&up.transpose());
                h
            })
            .with_analytic_flow(sphere_flow);

    let north = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
    let mut facts = Vec::new();
    let n = north.clone();
    facts.push(AnalyticFact::new(
        "antipode",
        "|p0| = pi from the north pole reaches the south pole",
        1e-12,
        move || {
            let p0 = DVector::from_column_slice(&[PI, 0.0, 0.0]);
            let (u, _) = sphere_flow(1.0, &n, &p0);
            Ok(sup_norm(&(u + &n)))
        },
    ));
    let n = north.clone();
    facts.push(AnalyticFact::new("rest", "p0 = 0 keeps u constant", 1e-15, move || {
        let (u, _) = sphere_flow(1.0, &n, &DVector::zeros(3));
        Ok(sup_norm(&(u - &n)))
    }));
    let sys = system.clone();
    let n = north.clone();
    facts.push(AnalyticFact::new(
        "great-circle",
        "numerical flow follows the great circle at h = 1e-3",
        1e-5,
        move || {
            let p0 = DVector::from_column_slice(&[1.2, -0.7, 0.0]);
            let f = integrate_flow(&sys, &n, &p0, &IntegratorConfig::default())?;
            if !f.status.is_completed() {
                return Ok(f64::INFINITY);
            }
            let t = &f.trajectory;
            let mut err = 0.0_f64;
            for k in 0..t.len() {
                let (u, p) = sphere_flow(t.times()[k], &n, &p0);
                err = err.max(sup_norm(&(u - &t.positions()[k]))).max(sup_norm(&(p - &t.momenta()[k])));
            }
            Ok(err)
        },
    ));
    let sys = system.clone();
    facts.push(AnalyticFact::new(
        "antipodal-continuum",
        "north and south poles are joined by a non-isolated family",
        0.0,
        move || {
            let set = solve_dirichlet(&sys, &north, &(-&north), &ShootingConfig::default())?;
            Ok(if matches!(set.classification, Classification::Continuum { .. }) { 0.0 } else { 1.0 })
        },
    ));
    ExampleSystem { system, facts }
}

// ---------------------------------------------------------------- vector fields

type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type FieldJacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(t, u0) -> (phi_t(u0), D phi_t(u0))`.
type FieldFlowFn = Arc<dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync>;

/// Serializable description of the bundled vector fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VectorFieldSpec {
    /// `X(u) = c`.
    Constant { value: Vec<f64> },
    /// `X(u) = rate * u` on `R^dim`.
    Linear { rate: f64, dim: usize },
    /// `X(u) = rate * (-u2, u1)` on `R^2`.
    Rotation { rate: f64 },
}

/// A vector field on `R^r` with its derivative and, when known, its flow.
#[derive(Clone)]
pub struct VectorField {
    label: String,
    dim: usize,
    value: FieldFn,
    jacobian: FieldJacobianFn,
    /// Whether `jacobian` is independent of `u`.
    affine: bool,
    flow: Option<FieldFlowFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("label", &self.label).field("dim", &self.dim).finish()
    }
}

impl VectorField {
    pub fn constant(c: &[f64]) -> Self {
        let c = DVector::from_column_slice(c);
        let r = c.len();
        let cv = c.clone();
        let cf = c.clone();
        Self {
            label: format!("constant {:?}", c.as_slice()),
            dim: r,
            value: Arc::new(move |_| cv.clone()),
            jacobian: Arc::new(move |_| DMatrix::zeros(r, r)),
            affine: true,
            flow: Some(Arc::new(move |t, u| (u + &cf * t, DMatrix::identity(r, r)))),
        }
    }

    pub fn linear(rate: f64, dim: usize) -> Self {
        Self {
            label: format!("linear rate {rate}"),
            dim,
            value: Arc::new(move |u| u * rate),
            jacobian: Arc::new(move |_| DMatrix::identity(dim, dim) * rate),
            affine: true,
            flow: Some(Arc::new(move |t, u| {
                let g = (rate * t).exp();
                (u * g, DMatrix::identity(dim, dim) * g)
            })),
        }
    }

    pub fn rotation(rate: f64) -> Self {
        let gen = DMatrix::from_row_slice(2, 2, &[0.0, -rate, rate, 0.0]);
        let g = gen.clone();
        Self {
            label: format!("rotation rate {rate}"),
            dim: 2,
            value: Arc::new(move |u| &g * u),
            jacobian: Arc::new(move |_| gen.clone()),
            affine: true,
            flow: Some(Arc::new(move |t, u| {
                let (s, c) = (rate * t).sin_cos();
                let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
                (&rot * u, rot)
            })),
        }
    }

    /// Arbitrary field; the second derivative is taken by finite differences
    /// of `jacobian`.
    pub fn custom(
        label: impl Into<String>,
        dim: usize,
        value: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            dim,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            affine: false,
            flow: None,
        }
    }

    pub fn from_spec(spec: &VectorFieldSpec) -> Result<Self> {
        match spec {
            VectorFieldSpec::Constant { value } if value.is_empty() => {
                Err(Error::InvalidConfig("constant field needs at least one component".into()))
            }
            VectorFieldSpec::Constant { value } => Ok(Self::constant(value)),
            VectorFieldSpec::Linear { dim: 0, .. } => Err(Error::InvalidConfig("linear field needs dim >= 1".into())),
            &VectorFieldSpec::Linear { rate, dim } => Ok(Self::linear(rate, dim)),
            &VectorFieldSpec::Rotation { rate } => Ok(Self::rotation(rate)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.value)(u)
    }

    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(u)
    }

    /// `phi_t(u0)` and `D phi_t(u0)` when the flow is known in closed form.
    pub fn flow(&self, t: f64, u0: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        self.flow.as_ref().map(|f| f(t, u0))
    }

    /// `sum_b p_b d^2 X^b / du du`.
    fn contracted_hessian(&self, u: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let r = self.dim;
        if self.affine {
            return DMatrix::zeros(r, r);
        }
        let h = 1e-5;
        let mut out = DMatrix::zeros(r, r);
        for j in 0..r {
            let mut a = u.clone();
            let mut b = u.clone();
            a[j] += h;
            b[j] -= h;
            let col = (self.jacobian(&a).transpose() * p - self.jacobian(&b).transpose() * p) / (2.0 * h);
            out.set_column(j, &col);
        }
        (&out + out.transpose()) * 0.5
    }
}

// ---------------------------------------------------------------- lambda family

fn lambda_system(name: &str, field: &VectorField, lambda: f64) -> HamiltonianSystem {
    let r = field.dim();
    let (fe, fu, fp, fh) = (field.clone(), field.clone(), field.clone(), field.clone());
    let mut sys = HamiltonianSystem::new(name, ConfigSpace::linear(r), move |_, u, p| {
        0.5 * lambda * p.norm_squared() + p.dot(&fe.value(u))
    })
    .with_gradients(move |_, u, p| fu.jacobian(u).transpose() * p, move |_, u, p| p * lambda + fp.value(u))
    .with_hessian(move |_, u, p| {
        let dx = fh.jacobian(u);
        let mut h = DMatrix::zeros(2 * r, 2 * r);
        h.view_mut((0, 0), (r, r)).copy_from(&fh.contracted_hessian(u, p));
        h.view_mut((0, r), (r, r)).copy_from(&dx.transpose());
        h.view_mut((r, 0), (r, r)).copy_from(&dx);
        h.view_mut((r, r), (r, r)).fill_diagonal(lambda);
        h
    });
    if lambda == 0.0 && field.flow.is_some() {
        // Cotangent lift: (phi_t(u0), D phi_t(u0)^{-T} p0).
        let f = field.clone();
        sys = sys.with_analytic_flow(move |t, u0, p0| {
            let (u, d) = f.flow(t, u0).expect("flow known");
            let p = d.transpose().lu().solve(p0).unwrap_or_else(|| DVector::from_element(p0.len(), f64::NAN));
            (u, p)
        });
    } else if let Some(c) = constant_value(field) {
        sys = sys.with_analytic_flow(move |t, u0, p0| (u0 + (p0 * lambda + &c) * t, p0.clone()));
    }
    sys
}

fn constant_value(field: &VectorField) -> Option<DVector<f64>> {
    if !field.affine {
        return None;
    }
    let z = DVector::zeros(field.dim());
    (field.jacobian(&z).iter().all(|v| *v == 0.0)).then(|| field.value(&z))
}

fn cotangent_facts(system: &HamiltonianSystem, field: &VectorField) -> Vec<AnalyticFact> {
    let mut facts = Vec::new();
    let r = field.dim();
    let Some(_) = field.flow(0.0, &DVector::zeros(r)) else { return facts };
    let u0 = DVector::from_fn(r, |i, _| 0.3 + 0.1 * i as f64);
    let p0 = DVector::from_fn(r, |i, _| 0.7 - 0.2 * i as f64);
    let sys = system.clone();
    let (a, b) = (u0.clone(), p0.clone());
    facts.push(AnalyticFact::new(
        "lifted-flow",
        "phi_1(u0, p0) = (phi_1^X(u0), D phi_1^X(u0)^{-T} p0) at h = 1e-4",
        1e-8,
        move || {
            let f = integrate_flow(&sys, &a, &b, &IntegratorConfig::with_step(1e-4))?;
            let exact = sys.analytic_flow().expect("lift has a flow")(1.0, &a, &b);
            let (u, p) = f.trajectory.last_state();
            Ok(sup_norm(&(u - exact.0)).max(sup_norm(&(p - exact.1))))
        },
    ));
    let sys = system.clone();
    let f = field.clone();
    let a = u0.clone();
    facts.push(AnalyticFact::new(
        "off-graph",
        "endpoints off the graph of phi_1^X admit no solution",
        0.0,
        move || {
            let target = f.flow(1.0, &a).expect("flow known").0.add_scalar(0.5);
            let set = solve_dirichlet(&sys, &a, &target, &ShootingConfig::default())?;
            Ok(if set.classification == Classification::NoSolution { 0.0 } else { 1.0 })
        },
    ));
    let sys = system.clone();
    facts.push(AnalyticFact::new(
        "on-graph-continuum",
        "endpoints on the graph of phi_1^X are joined by a family of solutions",
        0.0,
        move || {
            // u(1) does not depend on p0, so the target is the endpoint of the discrete flow.
            let cfg = ShootingConfig::default();
            let f = integrate_flow(&sys, &u0, &DVector::zeros(u0.len()), &cfg.integrator)?;
            let target = f.trajectory.last_state().0.clone();
            let set = solve_dirichlet(&sys, &u0, &target, &cfg)?;
            Ok(if matches!(set.classification, Classification::Continuum { .. }) { 0.0 } else { 1.0 })
        },
    ));
    facts
}

/// `H = p.X(u)`, whose flow lifts the flow of `X` to `T*Q`.
pub fn make_cotangent_lift(field: VectorField) -> ExampleSystem {
    let system = lambda_system("cotangent-lift", &field, 0.0);
    let facts = cotangent_facts(&system, &field);
    ExampleSystem { system, facts }
}

/// `H = lambda |p|^2 / 2 + p.X(u)`.
pub fn make_lambda_family(field: VectorField, lambda: f64) -> Result<ExampleSystem> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::NegativeLambda(lambda));
    }
    let system = lambda_system("lambda-family", &field, lambda);
    let mut facts = Vec::new();
    if lambda == 0.0 {
        facts = cotangent_facts(&system, &field);
    } else if let Some(c) = constant_value(&field) {
        let sys = system.clone();
        let u0 = DVector::zeros(field.dim());
        let u1 = DVector::from_element(field.dim(), 2.0);
        facts.push(AnalyticFact::new(
            "dirichlet-momentum",
            "constant X: the unique solution of (u0, u1) has p0 = (u1 - u0 - c)/lambda",
            1e-8,
            move || {
                let set = solve_dirichlet(&sys, &u0, &u1, &ShootingConfig::default())?;
                if set.classification != Classification::Unique {
                    return Ok(f64::INFINITY);
                }
                let exact = (&u1 - &u0 - &c) / lambda;
                Ok(sup_norm(&(&set.solutions[0].p0 - exact)))
            },
        ));
    }
    Ok(ExampleSystem { system, facts })
}

/// Residual of `u'' = DX u' - DX^T (u' - X)` along a trajectory of the
/// lambda family, by repeated discrete differentiation at interior nodes.
pub fn lambda_second_order_residual(field: &VectorField, traj: &Trajectory) -> f64 {
    let grid = traj.grid();
    let vel = grid.derivative(traj.positions());
    let acc = grid.derivative(&vel);
    let n = traj.len();
    let mut worst = 0.0_f64;
    for k in 2..n.saturating_sub(2) {
        let u = &traj.positions()[k];
        let dx = field.jacobian(u);
        let rhs = &dx * &vel[k] - dx.transpose() * (&vel[k] - field.value(u));
        worst = worst.max(sup_norm(&(&acc[k] - rhs)));
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub p0: Option<Vec<f64>>,
    pub w: Option<f64>,
    pub second_order_residual: Option<f64>,
    /// Sup distance of the position path from the flow line of `X` through `u0`.
    pub distance_to_flow_line: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaStudy {
    pub rows: Vec<LambdaRow>,
    /// Whether `u1 = phi_1^X(u0)`.
    pub on_flow_line: Option<bool>,
    /// Log-log slope of `|p0|` against `lambda`, when at least two nonzero momenta were found.
    pub momentum_slope: Option<f64>,
}

fn flow_line_distance(field: &VectorField, sol: &BvpSolution) -> Option<f64> {
    let t = &sol.trajectory;
    let mut worst = 0.0_f64;
    for (s, u) in t.times().iter().zip(t.positions()) {
        worst = worst.max(sup_norm(&(u - field.flow(*s, &sol.u0)?.0)));
    }
    Some(worst)
}

/// Tabulate `p0(lambda)` and `W(lambda)` on the first branch as `lambda` decreases.
pub fn topological_limit_study(
    field: &VectorField,
    lambdas: &[f64],
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Result<LambdaStudy> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidConfig("lambda study needs a nonempty list of positive values".into()));
    }
    let on_flow_line = field.flow(1.0, u0).map(|(phi, _)| sup_norm(&(phi - u1)) <= 1e-12);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut row = LambdaRow {
            lambda,
            p0: None,
            w: None,
            second_order_residual: None,
            distance_to_flow_line: None,
            error: None,
        };
        let outcome = make_lambda_family(field.clone(), lambda)
            .and_then(|ex| Ok((solve_dirichlet(&ex.system, u0, u1, cfg)?, ex)));
        match outcome {
            Ok((set, ex)) => match set.solutions.first() {
                Some(sol) => {
                    row.p0 = Some(sol.p0.iter().copied().collect());
                    row.w = action_functional(&ex.system, &sol.trajectory).ok();
                    row.second_order_residual = Some(lambda_second_order_residual(field, &sol.trajectory));
                    if on_flow_line == Some(true) {
                        row.distance_to_flow_line = flow_line_distance(field, sol);
                    }
                }
                None => row.error = Some(format!("{}", set.classification)),
            },
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let p = r.p0.as_ref()?;
            let n = p.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            (n > 0.0).then_some((r.lambda, n))
        })
        .collect();
    let momentum_slope = (pts.len() >= 2).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        loglog_slope(&x, &y)
    });
    Ok(LambdaStudy { rows, on_flow_line, momentum_slope })
}
