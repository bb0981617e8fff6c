//! Numerical certificates that the boundary values of solutions form an
//! isotropic, and where the flow exists a Lagrangian, submanifold of
//! `T*Q x T*Q`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boundary::{continue_branch, solve_dirichlet, ShootingConfig};
use crate::examples::VectorField;
use crate::integrators::{flow_map, integrate_flow, IntegratorConfig};
use crate::linalg::{rank, sup_norm};
use crate::system::{omega_eval, BoundaryTangent, HamiltonianSystem};
use crate::{Error, Result};

/// Singular values below this fraction of the largest count as zero in the frame rank.
pub const FRAME_RANK_CUTOFF: f64 = 1e-8;

const CAVEAT: &str =
    "the solution set is assumed to be a submanifold; only consequences of that hypothesis are checked";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentSource {
    FlowJacobian,
    BvpContinuation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InapplicableSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropyReport {
    pub samples: usize,
    /// Number of tangent frames actually evaluated.
    pub frames: usize,
    #[serde(serialize_with = "crate::serde_float::serialize")]
    pub max_defect: f64,
    pub tangent_source: TangentSource,
    /// Smallest frame rank over evaluated frames (0 when none).
    pub rank_estimate: usize,
    pub inapplicable: Vec<InapplicableSample>,
    pub seed: Option<u64>,
    pub caveat: &'static str,
}

impl IsotropyReport {
    /// Isotropic within `tol` and of maximal rank `2r`.
    pub fn is_lagrangian(&self, r: usize, tol: f64) -> bool {
        self.frames > 0 && self.max_defect <= tol && self.rank_estimate == 2 * r
    }

    fn new(source: TangentSource, samples: usize) -> Self {
        Self {
            samples,
            frames: 0,
            max_defect: 0.0,
            tangent_source: source,
            rank_estimate: 0,
            inapplicable: Vec::new(),
            seed: None,
            caveat: CAVEAT,
        }
    }

    fn record_frame(&mut self, frame: &DMatrix<f64>) {
        let defect = frame_isotropy_defect(frame);
        let rk = rank(frame, FRAME_RANK_CUTOFF);
        self.rank_estimate = if self.frames == 0 { rk } else { self.rank_estimate.min(rk) };
        self.max_defect = self.max_defect.max(defect);
        self.frames += 1;
    }
}

/// Largest `|omega(v_i, v_j)|` over pairs of columns laid out as `(du0, dp0, du1, dp1)`.
pub fn frame_isotropy_defect(frame: &DMatrix<f64>) -> f64 {
    let cols: Vec<BoundaryTangent> =
        frame.column_iter().map(|c| BoundaryTangent::from_vector(&c.into_owned())).collect();
    let mut worst = 0.0_f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            worst = worst.max(omega_eval(&cols[i], &cols[j]).abs());
        }
    }
    worst
}

/// Columns `(e_i; D phi_1 e_i)` spanning the tangent space of `graph(phi_1)`.
pub fn flow_tangent_frame(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let map = flow_map(sys, u0, p0, 0.0, 1.0, cfg, true)?;
    let jac = map.jacobian.ok_or(Error::FlowIncomplete(map.status))?;
    let n = jac.nrows();
    let mut frame = DMatrix::zeros(2 * n, n);
    frame.view_mut((0, 0), (n, n)).fill_with_identity();
    frame.view_mut((n, 0), (n, n)).copy_from(&jac);
    Ok(frame)
}

/// Tangent frame of the boundary values of one branch, by central
/// differences in each endpoint coordinate.
pub fn bvp_tangent_frame(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Result<DMatrix<f64>> {
    let r = sys.dim();
    let h = cfg.fd_step;
    let mut frame = DMatrix::zeros(4 * r, 2 * r);
    for k in 0..2 * r {
        let mut pts = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let (mut a, mut b) = (u0.clone(), u1.clone());
            if k < r {
                a[k] += sign * h;
            } else {
                b[k - r] += sign * h;
            }
            let sol = continue_branch(sys, &a, &b, p0, cfg)?;
            let mut v = DVector::zeros(4 * r);
            v.rows_mut(0, r).copy_from(&sol.u0);
            v.rows_mut(r, r).copy_from(&sol.p0);
            v.rows_mut(2 * r, r).copy_from(&b);
            v.rows_mut(3 * r, r).copy_from(&sol.p1);
            pts.push(v);
        }
        frame.set_column(k, &((&pts[0] - &pts[1]) / (2.0 * h)));
    }
    Ok(frame)
}

/// Isotropy of `graph(phi_1)` at the given initial points.
///
/// Points whose flow does not reach `t = 1` are listed as inapplicable.
pub fn isotropy_defect_flow(
    sys: &HamiltonianSystem,
    points: &[(DVector<f64>, DVector<f64>)],
    cfg: &IntegratorConfig,
) -> Result<IsotropyReport> {
    let mut report = IsotropyReport::new(TangentSource::FlowJacobian, points.len());
    for (index, (u0, p0)) in points.iter().enumerate() {
        match flow_tangent_frame(sys, u0, p0, cfg) {
            Ok(frame) => report.record_frame(&frame),
            Err(Error::FlowIncomplete(status)) => {
                report.inapplicable.push(InapplicableSample { index, reason: format!("{status:?}") })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Isotropy of the boundary values of every isolated branch joining each
/// endpoint pair, with tangents from branch continuation.
pub fn isotropy_defect_bvp(
    sys: &HamiltonianSystem,
    endpoints: &[(DVector<f64>, DVector<f64>)],
    cfg: &ShootingConfig,
) -> Result<IsotropyReport> {
    let mut report = IsotropyReport::new(TangentSource::BvpContinuation, endpoints.len());
    for (index, (u0, u1)) in endpoints.iter().enumerate() {
        let set = solve_dirichlet(sys, u0, u1, cfg)?;
        if set.solutions.is_empty() {
            report.inapplicable.push(InapplicableSample { index, reason: "no branch joins the endpoints".into() });
            continue;
        }
        for sol in &set.solutions {
            if sol.condition > cfg.continuum_condition {
                report.inapplicable.push(InapplicableSample {
                    index,
                    reason: format!("singular shooting Jacobian (condition {:.2e})", sol.condition),
                });
                continue;
            }
            report.record_frame(&bvp_tangent_frame(sys, u0, u1, &sol.p0, cfg)?);
        }
    }
    Ok(report)
}

/// `count` points uniform in `[lo, hi]^(2r)`, split as `(u0, p0)`.
pub fn sample_phase_points(seed: u64, count: usize, r: usize, lo: f64, hi: f64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u = DVector::from_fn(r, |_, _| rng.gen_range(lo..=hi));
            let p = DVector::from_fn(r, |_, _| rng.gen_range(lo..=hi));
            (u, p)
        })
        .collect()
}

/// Largest distance of `u(1)` from `phi_1^X(u0)` over the sampled points,
/// for a cotangent lift of `field`.
pub fn graph_projection_defect(
    sys: &HamiltonianSystem,
    field: &VectorField,
    points: &[(DVector<f64>, DVector<f64>)],
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (u0, p0) in points {
        let (target, _) = field
            .flow(1.0, u0)
            .ok_or_else(|| Error::InvalidConfig(format!("no closed-form flow for {}", field.label())))?;
        let f = integrate_flow(sys, u0, p0, cfg)?;
        if !f.status.is_completed() {
            return Err(Error::FlowIncomplete(f.status));
        }
        worst = worst.max(sup_norm(&(f.trajectory.last_state().0 - target)));
    }
    Ok(worst)
}
