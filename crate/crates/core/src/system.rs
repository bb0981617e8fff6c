//! Hamiltonian systems on `T*Q`, discretized fields on `[0,1]`, the action
//! functional and its Euler-Lagrange residual, and the boundary phase space
//! `T*Q x T*Q` with its canonical 1-form and symplectic form.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default EL acceptance tolerance for curves sampled from closed forms.
pub const EL_TOL_ANALYTIC: f64 = 1e-6;

/// EL acceptance tolerance for integrated curves, given the scheme's error estimate.
pub fn el_tol_integrated(scheme_error_estimate: f64) -> f64 {
    10.0 * scheme_error_estimate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinateKind {
    Linear,
    Angular,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Coordinate chart description of the configuration space `Q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSpace {
    kinds: Vec<CoordinateKind>,
}

impl ConfigSpace {
    pub fn new(kinds: Vec<CoordinateKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::InvalidConfig("configuration space must have dim >= 1".into()));
        }
        Ok(Self { kinds })
    }

    pub fn linear(dim: usize) -> Self {
        Self::new(vec![CoordinateKind::Linear; dim]).expect("dim >= 1")
    }

    pub fn angular(dim: usize) -> Self {
        Self::new(vec![CoordinateKind::Angular; dim]).expect("dim >= 1")
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[CoordinateKind] {
        &self.kinds
    }

    pub fn has_angular(&self) -> bool {
        self.kinds.contains(&CoordinateKind::Angular)
    }

    /// `a - b`, with angular components wrapped into `(-pi, pi]`.
    pub fn difference(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut d = a - b;
        for (i, kind) in self.kinds.iter().enumerate() {
            if *kind == CoordinateKind::Angular {
                d[i] = wrap_angle(d[i]);
            }
        }
        d
    }

    /// Sup-distance between two Q-points, angular coordinates modulo `2 pi`.
    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        crate::linalg::sup_norm(&self.difference(a, b))
    }
}

pub type EnergyFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Full Hessian of `H` in `(u, p)` ordering, size `2r x 2r`.
pub type HessianFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// `(t, u0, p0) -> (u(t), p(t))`.
pub type FlowFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

const FD_GRADIENT_STEP: f64 = 1e-6;
const FD_HESSIAN_STEP: f64 = 1e-5;

/// A Hamiltonian `H(t, u, p)` on `T*Q` together with its partial derivatives.
///
/// Gradients and the Hessian fall back to centered finite differences when
/// not supplied.
#[derive(Clone)]
pub struct HamiltonianSystem {
    name: String,
    config: ConfigSpace,
    energy: EnergyFn,
    grad_u: GradientFn,
    grad_p: GradientFn,
    hessian: HessianFn,
    analytic_hessian: bool,
    separable: bool,
    autonomous: bool,
    analytic_flow: Option<FlowFn>,
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("name", &self.name)
            .field("config", &self.config)
            .field("separable", &self.separable)
            .field("autonomous", &self.autonomous)
            .field("analytic_flow", &self.analytic_flow.is_some())
            .finish()
    }
}

fn fd_gradient(energy: EnergyFn, wrt_momentum: bool) -> GradientFn {
    Arc::new(move |t, u, p| {
        let n = if wrt_momentum { p.len() } else { u.len() };
        DVector::from_fn(n, |i, _| {
            let (mut a, mut b) = (u.clone(), p.clone());
            let (mut c, mut d) = (u.clone(), p.clone());
            if wrt_momentum {
                b[i] += FD_GRADIENT_STEP;
                d[i] -= FD_GRADIENT_STEP;
            } else {
                a[i] += FD_GRADIENT_STEP;
                c[i] -= FD_GRADIENT_STEP;
            }
            (energy(t, &a, &b) - energy(t, &c, &d)) / (2.0 * FD_GRADIENT_STEP)
        })
    })
}

fn fd_hessian(grad_u: GradientFn, grad_p: GradientFn) -> HessianFn {
    Arc::new(move |t, u, p| {
        let r = u.len();
        let mut hess = DMatrix::zeros(2 * r, 2 * r);
        for j in 0..2 * r {
            let (mut up, mut pp) = (u.clone(), p.clone());
            let (mut um, mut pm) = (u.clone(), p.clone());
            if j < r {
                up[j] += FD_HESSIAN_STEP;
                um[j] -= FD_HESSIAN_STEP;
            } else {
                pp[j - r] += FD_HESSIAN_STEP;
                pm[j - r] -= FD_HESSIAN_STEP;
            }
            let du = (grad_u(t, &up, &pp) - grad_u(t, &um, &pm)) / (2.0 * FD_HESSIAN_STEP);
            let dp = (grad_p(t, &up, &pp) - grad_p(t, &um, &pm)) / (2.0 * FD_HESSIAN_STEP);
            hess.view_mut((0, j), (r, 1)).copy_from(&du);
            hess.view_mut((r, j), (r, 1)).copy_from(&dp);
        }
        // Symmetrize so the implicit-midpoint derivative stays exactly symplectic.
        (&hess + hess.transpose()) * 0.5
    })
}

impl HamiltonianSystem {
    /// System from the energy alone; all derivatives by finite differences.
    pub fn new(
        name: impl Into<String>,
        config: ConfigSpace,
        energy: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let energy: EnergyFn = Arc::new(energy);
        let grad_u = fd_gradient(energy.clone(), false);
        let grad_p = fd_gradient(energy.clone(), true);
        let hessian = fd_hessian(grad_u.clone(), grad_p.clone());
        Self {
            name: name.into(),
            config,
            energy,
            grad_u,
            grad_p,
            hessian,
            analytic_hessian: false,
            separable: false,
            autonomous: true,
            analytic_flow: None,
        }
    }

    pub fn with_gradients(
        mut self,
        grad_u: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad_p: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_u = Arc::new(grad_u);
        self.grad_p = Arc::new(grad_p);
        if !self.analytic_hessian {
            self.hessian = fd_hessian(self.grad_u.clone(), self.grad_p.clone());
        }
        self
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessian = Arc::new(hessian);
        self.analytic_hessian = true;
        self
    }

    /// Declare `H = T(p) + V(u)`, enabling Stormer-Verlet.
    pub fn separable(mut self) -> Self {
        self.separable = true;
        self
    }

    pub fn time_dependent(mut self) -> Self {
        self.autonomous = false;
        self
    }

    pub fn with_analytic_flow(
        mut self,
        flow: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.analytic_flow = Some(Arc::new(flow));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &ConfigSpace {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn is_separable(&self) -> bool {
        self.separable
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn analytic_flow(&self) -> Option<&FlowFn> {
        self.analytic_flow.as_ref()
    }

    pub fn energy(&self, t: f64, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        (self.energy)(t, u, p)
    }

    pub fn grad_u(&self, t: f64, u: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.grad_u)(t, u, p)
    }

    pub fn grad_p(&self, t: f64, u: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.grad_p)(t, u, p)
    }

    pub fn hessian(&self, t: f64, u: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        (self.hessian)(t, u, p)
    }

    /// Largest relative disagreement between the supplied gradients and
    /// centered differences of the energy with the given step.
    pub fn gradient_defect(&self, probes: &[(f64, DVector<f64>, DVector<f64>)], step: f64) -> f64 {
        let mut worst = 0.0_f64;
        for (t, u, p) in probes {
            let gu = self.grad_u(*t, u, p);
            let gp = self.grad_p(*t, u, p);
            for i in 0..u.len() {
                for (wrt_p, analytic) in [(false, gu[i]), (true, gp[i])] {
                    let (mut u1, mut p1, mut u2, mut p2) = (u.clone(), p.clone(), u.clone(), p.clone());
                    if wrt_p {
                        p1[i] += step;
                        p2[i] -= step;
                    } else {
                        u1[i] += step;
                        u2[i] -= step;
                    }
                    let fd = (self.energy(*t, &u1, &p1) - self.energy(*t, &u2, &p2)) / (2.0 * step);
                    worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
                }
            }
        }
        worst
    }
}

/// Hamilton's equations: `(dH/dp, -dH/du)`.
pub fn hamiltonian_vector_field(
    sys: &HamiltonianSystem,
    t: f64,
    u: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let du = sys.grad_p(t, u, p);
    let dp = -sys.grad_u(t, u, p);
    if du.iter().chain(dp.iter()).all(|x| x.is_finite()) {
        Ok((du, dp))
    } else {
        Err(Error::NonFinite("Hamiltonian vector field"))
    }
}

/// Nodes `0 = t_0 < t_1 < ... < t_N`, ending at 1 for a complete grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Full grid on `[0,1]`; requires `N >= 2` intervals.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::GridTooCoarse(nodes.len()));
        }
        if nodes[nodes.len() - 1] != 1.0 {
            return Err(Error::InvalidGrid("last node must be exactly 1".into()));
        }
        Self::partial(nodes)
    }

    /// Grid starting at 0 that may stop before 1 (truncated flows).
    pub fn partial(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes[0] != 0.0 {
            return Err(Error::InvalidGrid("first node must be exactly 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("nodes must be strictly increasing".into()));
        }
        if nodes.iter().any(|t| !t.is_finite() || *t > 1.0) {
            return Err(Error::InvalidGrid("nodes must lie in [0,1]".into()));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(intervals: usize) -> Result<Self> {
        let n = intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|k| k as f64 / n).collect();
        if let Some(last) = nodes.last_mut() {
            *last = 1.0;
        }
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.nodes.len() >= 3 && self.nodes[self.nodes.len() - 1] == 1.0
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Trapezoidal quadrature weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let t = &self.nodes;
        let n = t.len();
        (0..n)
            .map(|k| {
                let left = if k > 0 { t[k] - t[k - 1] } else { 0.0 };
                let right = if k + 1 < n { t[k + 1] - t[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Second-order discrete derivative: centered three-point stencils inside,
    /// one-sided three-point stencils at the two ends.
    pub fn derivative(&self, values: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let t = &self.nodes;
        let n = t.len();
        assert_eq!(values.len(), n, "values must live on the grid");
        assert!(n >= 3, "derivative needs at least 3 nodes");
        let mut out = Vec::with_capacity(n);
        {
            let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
            let c0 = -(2.0 * h1 + h2) / (h1 * (h1 + h2));
            let c1 = (h1 + h2) / (h1 * h2);
            let c2 = -h1 / (h2 * (h1 + h2));
            out.push(&values[0] * c0 + &values[1] * c1 + &values[2] * c2);
        }
        for i in 1..n - 1 {
            let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let cm = -h2 / (h1 * (h1 + h2));
            let c0 = (h2 - h1) / (h1 * h2);
            let cp = h1 / (h2 * (h1 + h2));
            out.push(&values[i - 1] * cm + &values[i] * c0 + &values[i + 1] * cp);
        }
        {
            let (h1, h2) = (t[n - 1] - t[n - 2], t[n - 2] - t[n - 3]);
            let c0 = (2.0 * h1 + h2) / (h1 * (h1 + h2));
            let c1 = -(h1 + h2) / (h1 * h2);
            let c2 = h1 / (h2 * (h1 + h2));
            out.push(&values[n - 1] * c0 + &values[n - 2] * c1 + &values[n - 3] * c2);
        }
        out
    }
}

/// A discretized curve `t -> (u(t), p(t))` in `T*Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    grid: TimeGrid,
    positions: Vec<DVector<f64>>,
    momenta: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, positions: Vec<DVector<f64>>, momenta: Vec<DVector<f64>>) -> Result<Self> {
        for arr in [&positions, &momenta] {
            if arr.len() != grid.len() {
                return Err(Error::GridMismatch { expected: grid.len(), found: arr.len() });
            }
        }
        let r = positions[0].len();
        for v in positions.iter().chain(momenta.iter()) {
            if v.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("trajectory sample"));
            }
        }
        Ok(Self { grid, positions, momenta })
    }

    /// Sample a closed-form curve on a grid.
    pub fn sample(grid: TimeGrid, curve: impl Fn(f64) -> (DVector<f64>, DVector<f64>)) -> Result<Self> {
        let (positions, momenta) = grid.nodes().iter().map(|&t| curve(t)).unzip();
        Self::new(grid, positions, momenta)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.positions
    }

    pub fn momenta(&self) -> &[DVector<f64>] {
        &self.momenta
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last_state(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.positions[self.len() - 1], &self.momenta[self.len() - 1])
    }

    /// Sup-distance between two trajectories on the same grid.
    pub fn distance(&self, other: &Trajectory, config: &ConfigSpace) -> f64 {
        assert_eq!(self.len(), other.len(), "trajectories must share a grid");
        self.positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| config.distance(a, b))
            .chain(self.momenta.iter().zip(&other.momenta).map(|(a, b)| crate::linalg::sup_norm(&(a - b))))
            .fold(0.0, f64::max)
    }

    fn require_complete(&self) -> Result<()> {
        if self.grid.is_complete() {
            Ok(())
        } else if self.grid.len() < 3 {
            Err(Error::GridTooCoarse(self.grid.len()))
        } else {
            Err(Error::InvalidGrid("trajectory does not reach t = 1".into()))
        }
    }
}

/// Trapezoidal approximation of `S = int_0^1 (p . du/dt - H) dt`.
pub fn action_functional(sys: &HamiltonianSystem, chi: &Trajectory) -> Result<f64> {
    chi.require_complete()?;
    let udot = chi.grid.derivative(&chi.positions);
    let w = chi.grid.trapezoid_weights();
    let mut s = 0.0;
    for (k, &t) in chi.times().iter().enumerate() {
        let lagr = chi.momenta[k].dot(&udot[k]) - sys.energy(t, &chi.positions[k], &chi.momenta[k]);
        s += w[k] * lagr;
    }
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFinite("action functional"))
    }
}

#[derive(Debug, Clone)]
pub struct ElResidual {
    /// `du/dt - dH/dp` per node.
    pub res_u: Vec<DVector<f64>>,
    /// `dp/dt + dH/du` per node.
    pub res_p: Vec<DVector<f64>>,
    pub norm: f64,
}

impl ElResidual {
    pub fn accepts(&self, el_tol: f64) -> bool {
        self.norm <= el_tol
    }
}

pub fn el_residual(sys: &HamiltonianSystem, chi: &Trajectory) -> Result<ElResidual> {
    chi.require_complete()?;
    let udot = chi.grid.derivative(&chi.positions);
    let pdot = chi.grid.derivative(&chi.momenta);
    let mut res_u = Vec::with_capacity(chi.len());
    let mut res_p = Vec::with_capacity(chi.len());
    let mut norm = 0.0_f64;
    for (k, &t) in chi.times().iter().enumerate() {
        let (du, dp) = hamiltonian_vector_field(sys, t, &chi.positions[k], &chi.momenta[k])?;
        let ru = &udot[k] - du;
        let rp = &pdot[k] - dp;
        norm = norm.max(crate::linalg::sup_norm(&ru)).max(crate::linalg::sup_norm(&rp));
        res_u.push(ru);
        res_p.push(rp);
    }
    Ok(ElResidual { res_u, res_p, norm })
}

/// Trapezoidal pairing of the EL residual with a variation:
/// `int (dp . res_u - du . res_p) dt`.
pub fn el_pairing(
    sys: &HamiltonianSystem,
    chi: &Trajectory,
    delta_u: &[DVector<f64>],
    delta_p: &[DVector<f64>],
) -> Result<f64> {
    for arr in [delta_u, delta_p] {
        if arr.len() != chi.len() {
            return Err(Error::GridMismatch { expected: chi.len(), found: arr.len() });
        }
    }
    let el = el_residual(sys, chi)?;
    let w = chi.grid.trapezoid_weights();
    Ok((0..chi.len()).map(|k| w[k] * (delta_p[k].dot(&el.res_u[k]) - delta_u[k].dot(&el.res_p[k]))).sum())
}

/// Both sides of the discrete fundamental formula `dS = EL + Pi^* alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalFormulaCheck {
    /// Centered finite difference of the action along the variation.
    pub directional_derivative: f64,
    pub el_pairing: f64,
    pub boundary_term: f64,
    pub defect: f64,
}

pub fn fundamental_formula_check(
    sys: &HamiltonianSystem,
    chi: &Trajectory,
    delta_u: &[DVector<f64>],
    delta_p: &[DVector<f64>],
    h_fd: f64,
) -> Result<FundamentalFormulaCheck> {
    let shifted = |s: f64| -> Result<Trajectory> {
        let u = chi.positions.iter().zip(delta_u).map(|(a, b)| a + b * s).collect();
        let p = chi.momenta.iter().zip(delta_p).map(|(a, b)| a + b * s).collect();
        Trajectory::new(chi.grid.clone(), u, p)
    };
    let plus = action_functional(sys, &shifted(h_fd)?)?;
    let minus = action_functional(sys, &shifted(-h_fd)?)?;
    let directional_derivative = (plus - minus) / (2.0 * h_fd);
    let pairing = el_pairing(sys, chi, delta_u, delta_p)?;
    let n = chi.len() - 1;
    let tangent = BoundaryTangent {
        du0: delta_u[0].clone(),
        dp0: delta_p[0].clone(),
        du1: delta_u[n].clone(),
        dp1: delta_p[n].clone(),
    };
    let boundary_term = alpha_eval(&boundary_projection(chi), &tangent);
    Ok(FundamentalFormulaCheck {
        directional_derivative,
        el_pairing: pairing,
        boundary_term,
        defect: (directional_derivative - pairing - boundary_term).abs(),
    })
}

/// A point `(u0, p0; u1, p1)` of `T*Q x T*Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub u0: DVector<f64>,
    pub p0: DVector<f64>,
    pub u1: DVector<f64>,
    pub p1: DVector<f64>,
}

impl BoundaryPoint {
    pub fn new(u0: DVector<f64>, p0: DVector<f64>, u1: DVector<f64>, p1: DVector<f64>) -> Result<Self> {
        let r = u0.len();
        for v in [&p0, &u1, &p1] {
            if v.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: v.len() });
            }
        }
        if [&u0, &p0, &u1, &p1].iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("boundary point"));
        }
        Ok(Self { u0, p0, u1, p1 })
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }
}

/// Tangent vector `(du0, dp0; du1, dp1)` to `T*Q x T*Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTangent {
    pub du0: DVector<f64>,
    pub dp0: DVector<f64>,
    pub du1: DVector<f64>,
    pub dp1: DVector<f64>,
}

impl BoundaryTangent {
    pub fn zeros(r: usize) -> Self {
        Self { du0: DVector::zeros(r), dp0: DVector::zeros(r), du1: DVector::zeros(r), dp1: DVector::zeros(r) }
    }

    /// Unpack a `4r` vector laid out as `(du0, dp0, du1, dp1)`.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len() % 4, 0, "boundary tangent has 4r components");
        let r = v.len() / 4;
        Self {
            du0: v.rows(0, r).into_owned(),
            dp0: v.rows(r, r).into_owned(),
            du1: v.rows(2 * r, r).into_owned(),
            dp1: v.rows(3 * r, r).into_owned(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let r = self.dim();
        let mut v = DVector::zeros(4 * r);
        v.rows_mut(0, r).copy_from(&self.du0);
        v.rows_mut(r, r).copy_from(&self.dp0);
        v.rows_mut(2 * r, r).copy_from(&self.du1);
        v.rows_mut(3 * r, r).copy_from(&self.dp1);
        v
    }

    /// `i`-th coordinate basis vector in the `(du0, dp0, du1, dp1)` layout.
    pub fn basis(r: usize, i: usize) -> Self {
        let mut v = DVector::zeros(4 * r);
        v[i] = 1.0;
        Self::from_vector(&v)
    }

    pub fn dim(&self) -> usize {
        self.du0.len()
    }
}

/// Endpoint read-off `chi -> (u(0), p(0), u(1), p(1))`.
pub fn boundary_projection(chi: &Trajectory) -> BoundaryPoint {
    let n = chi.len() - 1;
    BoundaryPoint {
        u0: chi.positions[0].clone(),
        p0: chi.momenta[0].clone(),
        u1: chi.positions[n].clone(),
        p1: chi.momenta[n].clone(),
    }
}

/// Canonical boundary 1-form `alpha = p1 du1 - p0 du0`.
///
/// Panics if the dimensions of `bp` and `v` differ.
pub fn alpha_eval(bp: &BoundaryPoint, v: &BoundaryTangent) -> f64 {
    assert_eq!(bp.dim(), v.dim(), "boundary point and tangent dimensions differ");
    bp.p1.dot(&v.du1) - bp.p0.dot(&v.du0)
}

/// Boundary symplectic form `omega = d alpha`.
///
/// Panics if the dimensions of `v` and `w` differ.
pub fn omega_eval(v: &BoundaryTangent, w: &BoundaryTangent) -> f64 {
    assert_eq!(v.dim(), w.dim(), "tangent dimensions differ");
    (v.du1.dot(&w.dp1) - v.dp1.dot(&w.du1)) - (v.du0.dot(&w.dp0) - v.dp0.dot(&w.du0))
}
