//! Two-point boundary-value problems: Newton shooting with multistart,
//! Hamilton's principal function, theory classification and boundary
//! conditions given by a Lagrangian graph `dF`.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrators::{flow_map, integrate_flow, FlowStatus, IntegratorConfig};
use crate::linalg::{lstsq_min_norm, normalized_condition, sup_norm};
use crate::system::{action_functional, HamiltonianSystem, Trajectory};
use crate::{Error, Result};

/// Initial momenta for the multistart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Explicit momenta, each of length `r`.
    List { momenta: Vec<Vec<f64>> },
    /// `count` momenta in the box `[lo, hi]^r`: an even grid when `r = 1`,
    /// uniform samples from `rng_seed` otherwise.
    Box {
        count: usize,
        lo: f64,
        hi: f64,
        #[serde(default)]
        rng_seed: u64,
    },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Box { count: 32, lo: -6.0, hi: 6.0, rng_seed: 0 }
    }
}

impl SeedSpec {
    pub fn momenta(&self, r: usize) -> Result<Vec<DVector<f64>>> {
        match self {
            SeedSpec::List { momenta } => momenta
                .iter()
                .map(|m| {
                    if m.len() != r {
                        Err(Error::DimensionMismatch { expected: r, found: m.len() })
                    } else {
                        Ok(DVector::from_column_slice(m))
                    }
                })
                .collect(),
            &SeedSpec::Box { count, lo, hi, rng_seed } => {
                if r == 1 {
                    if count == 1 {
                        return Ok(vec![DVector::from_element(1, 0.5 * (lo + hi))]);
                    }
                    Ok((0..count)
                        .map(|i| DVector::from_element(1, lo + (hi - lo) * i as f64 / (count - 1) as f64))
                        .collect())
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                    Ok((0..count).map(|_| DVector::from_fn(r, |_, _| rng.gen_range(lo..=hi))).collect())
                }
            }
        }
    }

    fn count(&self) -> usize {
        match self {
            SeedSpec::List { momenta } => momenta.len(),
            SeedSpec::Box { count, .. } => *count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingConfig {
    pub integrator: IntegratorConfig,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub multistart: SeedSpec,
    /// Trajectory sup-distance below which two solutions are identified.
    pub distinctness_radius: f64,
    /// Normalized condition number of the shooting Jacobian above which a
    /// solution is treated as part of a continuum.
    pub continuum_condition: f64,
    /// Displacement used for finite-difference continuation of branches.
    pub fd_step: f64,
    /// Endpoint displacement used to probe openness of the reachable set.
    pub openness_probe: f64,
    /// Initial positions tried when the left endpoint is free.
    pub position_seeds: Vec<Vec<f64>>,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            newton_tol: 1e-10,
            max_iter: 80,
            multistart: SeedSpec::default(),
            distinctness_radius: 1e-4,
            continuum_condition: 1e10,
            fd_step: 1e-5,
            openness_probe: 1e-3,
            position_seeds: Vec::new(),
        }
    }
}

impl ShootingConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.multistart.count() == 0 {
            return Err(Error::InvalidConfig("multistart needs at least one seed".into()));
        }
        if let SeedSpec::Box { lo, hi, .. } = self.multistart {
            if !(lo <= hi) {
                return Err(Error::InvalidConfig("seed box needs lo <= hi".into()));
            }
        }
        for (name, v) in [
            ("newton_tol", self.newton_tol),
            ("distinctness_radius", self.distinctness_radius),
            ("continuum_condition", self.continuum_condition),
            ("fd_step", self.fd_step),
            ("openness_probe", self.openness_probe),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositive { name, value: v });
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Classification {
    Unique,
    MultipleIsolated {
        count: usize,
    },
    Continuum {
        #[serde(with = "crate::serde_float")]
        max_condition: f64,
    },
    NoSolution,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Unique => write!(f, "unique"),
            Classification::MultipleIsolated { count } => write!(f, "multiple-isolated({count})"),
            Classification::Continuum { max_condition } => write!(f, "continuum(cond {max_condition:.2e})"),
            Classification::NoSolution => write!(f, "no-solution"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub u0: DVector<f64>,
    pub p0: DVector<f64>,
    pub u1: DVector<f64>,
    pub p1: DVector<f64>,
    pub trajectory: Trajectory,
    /// Sup norm of the final Newton residual.
    pub residual: f64,
    /// Normalized condition number of the Newton Jacobian at the solution.
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct BvpSolutionSet {
    /// Prescribed endpoints; `None` when the boundary condition leaves them free.
    pub endpoints: Option<(DVector<f64>, DVector<f64>)>,
    pub solutions: Vec<BvpSolution>,
    pub classification: Classification,
    /// Whether deduplication gives the same count at `delta_sep` and `delta_sep / 2`.
    pub isolation_stable: bool,
    pub seeds_tried: usize,
    pub seeds_converged: usize,
}

/// `u(1; u0, p0) - u1` and `du(1)/dp0`.
pub fn shoot_residual(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    p0: &DVector<f64>,
    u1: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if u1.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: u1.len() });
    }
    let map = flow_map(sys, u0, p0, 0.0, 1.0, &cfg.integrator, true)?;
    let jac = map.jacobian.ok_or(Error::FlowIncomplete(map.status))?;
    let r = sys.dim();
    let residual = sys.config().difference(&map.u, u1);
    Ok((residual, jac.view((0, r), (r, r)).into_owned()))
}

struct NewtonOutcome {
    x: DVector<f64>,
    residual: f64,
    jacobian: DMatrix<f64>,
}

const POLISH_STEPS: usize = 4;
const LINE_SEARCH_HALVINGS: usize = 20;

/// Damped Newton with pseudo-inverse steps. `eval` returns `None` where the
/// residual is undefined (incomplete flow).
fn damped_newton(
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
    eval: impl Fn(&DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>,
) -> Option<NewtonOutcome> {
    let mut x = x0;
    let (mut res, mut jac) = eval(&x)?;
    let mut norm = sup_norm(&res);
    let mut iter = 0;
    while norm > tol {
        if iter >= max_iter {
            return None;
        }
        iter += 1;
        let (step, _) = lstsq_min_norm(&jac, &(-&res), 1e-13);
        if sup_norm(&step) <= f64::EPSILON * (1.0 + sup_norm(&x)) {
            return None;
        }
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let trial = &x + &step * damping;
            if let Some((r, j)) = eval(&trial) {
                let n = sup_norm(&r);
                if n.is_finite() && n < (1.0 - 1e-4 * damping) * norm {
                    accepted = Some((trial, r, j, n));
                    break;
                }
            }
            damping *= 0.5;
        }
        let (xn, rn, jn, nn) = accepted?;
        x = xn;
        res = rn;
        jac = jn;
        norm = nn;
    }
    // A few extra full steps push the residual toward roundoff.
    for _ in 0..POLISH_STEPS {
        let (step, _) = lstsq_min_norm(&jac, &(-&res), 1e-13);
        let trial = &x + step;
        match eval(&trial) {
            Some((r, j)) if sup_norm(&r) < norm => {
                x = trial;
                norm = sup_norm(&r);
                res = r;
                jac = j;
            }
            _ => break,
        }
    }
    Some(NewtonOutcome { x, residual: norm, jacobian: jac })
}

fn shoot_from(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    seed: DVector<f64>,
    cfg: &ShootingConfig,
) -> Option<BvpSolution> {
    let out = damped_newton(seed, cfg.newton_tol, cfg.max_iter, |p| shoot_residual(sys, u0, p, u1, cfg).ok())?;
    finish_solution(sys, u0.clone(), out, cfg)
}

fn finish_solution(
    sys: &HamiltonianSystem,
    u0: DVector<f64>,
    out: NewtonOutcome,
    cfg: &ShootingConfig,
) -> Option<BvpSolution> {
    let r = sys.dim();
    let p0 = out.x.rows(out.x.len() - r, r).into_owned();
    let flow = integrate_flow(sys, &u0, &p0, &cfg.integrator).ok()?;
    if flow.status != FlowStatus::Completed {
        return None;
    }
    let (u1, p1) = flow.trajectory.last_state();
    let (u1, p1) = (u1.clone(), p1.clone());
    Some(BvpSolution {
        u0,
        p0,
        u1,
        p1,
        trajectory: flow.trajectory,
        residual: out.residual,
        condition: normalized_condition(&out.jacobian),
    })
}

fn dedup(candidates: &[BvpSolution], radius: f64, sys: &HamiltonianSystem) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if kept.iter().all(|&k| candidates[k].trajectory.distance(&c.trajectory, sys.config()) >= radius) {
            kept.push(i);
        }
    }
    kept
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn assemble(
    sys: &HamiltonianSystem,
    endpoints: Option<(DVector<f64>, DVector<f64>)>,
    candidates: Vec<Option<BvpSolution>>,
    cfg: &ShootingConfig,
) -> BvpSolutionSet {
    let seeds_tried = candidates.len();
    let converged: Vec<BvpSolution> = candidates.into_iter().flatten().collect();
    let seeds_converged = converged.len();
    let kept = dedup(&converged, cfg.distinctness_radius, sys);
    let kept_half = dedup(&converged, 0.5 * cfg.distinctness_radius, sys);
    let mut solutions: Vec<BvpSolution> = kept.iter().map(|&i| converged[i].clone()).collect();
    solutions.sort_by(|a, b| lexicographic(&a.p0, &b.p0).then_with(|| lexicographic(&a.u0, &b.u0)));
    let max_condition = solutions.iter().map(|s| s.condition).fold(0.0_f64, f64::max);
    let classification = if solutions.is_empty() {
        Classification::NoSolution
    } else if max_condition > cfg.continuum_condition {
        Classification::Continuum { max_condition }
    } else if solutions.len() == 1 {
        Classification::Unique
    } else {
        Classification::MultipleIsolated { count: solutions.len() }
    };
    BvpSolutionSet {
        endpoints,
        solutions,
        classification,
        isolation_stable: kept.len() == kept_half.len(),
        seeds_tried,
        seeds_converged,
    }
}

fn check_point(sys: &HamiltonianSystem, v: &DVector<f64>) -> Result<()> {
    if v.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), found: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("boundary endpoint"));
    }
    Ok(())
}

/// Multistart Newton shooting for `u(0) = u0`, `u(1) = u1`.
///
/// The classification is a numerical verdict: it depends on the seed set,
/// the deduplication radius and the condition threshold.
pub fn solve_dirichlet(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Result<BvpSolutionSet> {
    cfg.validate()?;
    check_point(sys, u0)?;
    check_point(sys, u1)?;
    let seeds = cfg.multistart.momenta(sys.dim())?;
    let candidates: Vec<Option<BvpSolution>> = seeds.into_par_iter().map(|s| shoot_from(sys, u0, u1, s, cfg)).collect();
    Ok(assemble(sys, Some((u0.clone(), u1.clone())), candidates, cfg))
}

/// Action of the `branch`-th solution (ordered by `p0`).
pub fn hamilton_principal_function(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    cfg: &ShootingConfig,
    branch: usize,
) -> Result<f64> {
    let set = solve_dirichlet(sys, u0, u1, cfg)?;
    let sol =
        set.solutions.get(branch).ok_or(Error::NoSuchBranch { requested: branch, available: set.solutions.len() })?;
    action_functional(sys, &sol.trajectory)
}

/// Re-solve near a known branch by Newton from its `p0`.
pub(crate) fn continue_branch(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    p0: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Result<BvpSolution> {
    let sol = shoot_from(sys, u0, u1, p0.clone(), cfg).ok_or(Error::BranchLost { jump: f64::INFINITY })?;
    let jump = sup_norm(&(&sol.p0 - p0));
    if jump > 1e3 * cfg.fd_step {
        return Err(Error::BranchLost { jump });
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratingFunctionDefects {
    /// `|dW/du1 - p1|`.
    pub defect_u1: f64,
    /// `|dW/du0 + p0|`.
    pub defect_u0: f64,
    /// `|d(p1)/d(u0) + (d(p0)/d(u1))^T|`, the asymmetry of the mixed second derivatives of `W`.
    #[serde(serialize_with = "crate::serde_float::serialize")]
    pub symmetry_defect: f64,
    pub w: f64,
    #[serde(serialize_with = "crate::serde_float::serialize")]
    pub condition: f64,
}

/// Central-difference checks of `dW = p1 du1 - p0 du0` on one branch.
pub fn generating_function_check(
    sys: &HamiltonianSystem,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    cfg: &ShootingConfig,
    branch: usize,
) -> Result<GeneratingFunctionDefects> {
    let set = solve_dirichlet(sys, u0, u1, cfg)?;
    let base =
        set.solutions.get(branch).ok_or(Error::NoSuchBranch { requested: branch, available: set.solutions.len() })?;
    if base.condition > cfg.continuum_condition {
        return Err(Error::BranchLost { jump: f64::INFINITY });
    }
    let r = sys.dim();
    let h = cfg.fd_step;
    let w = action_functional(sys, &base.trajectory)?;
    let mut dw_u0 = DVector::zeros(r);
    let mut dw_u1 = DVector::zeros(r);
    let mut dp1_du0 = DMatrix::zeros(r, r);
    let mut dp0_du1 = DMatrix::zeros(r, r);
    for side in 0..2 {
        for i in 0..r {
            let mut vals = Vec::with_capacity(2);
            for sign in [1.0, -1.0] {
                let (mut a, mut b) = (u0.clone(), u1.clone());
                if side == 0 {
                    a[i] += sign * h;
                } else {
                    b[i] += sign * h;
                }
                let sol = continue_branch(sys, &a, &b, &base.p0, cfg)?;
                let ws = action_functional(sys, &sol.trajectory)?;
                vals.push((ws, sol.p0, sol.p1));
            }
            let dw = (vals[0].0 - vals[1].0) / (2.0 * h);
            if side == 0 {
                dw_u0[i] = dw;
                dp1_du0.set_column(i, &((&vals[0].2 - &vals[1].2) / (2.0 * h)));
            } else {
                dw_u1[i] = dw;
                dp0_du1.set_column(i, &((&vals[0].1 - &vals[1].1) / (2.0 * h)));
            }
        }
    }
    Ok(GeneratingFunctionDefects {
        defect_u1: sup_norm(&(dw_u1 - &base.p1)),
        defect_u0: sup_norm(&(dw_u0 + &base.p0)),
        symmetry_defect: crate::linalg::max_abs(&(dp1_du0 + dp0_du1.transpose())),
        w,
        condition: base.condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryVerdict {
    Dirichlet,
    LocallyDirichlet,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSummary {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub classification: Classification,
    pub isolation_stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryEvidence {
    pub pair: PairSummary,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub verdict: TheoryVerdict,
    pub evidence: Option<TheoryEvidence>,
    pub pairs: Vec<PairSummary>,
    pub openness_probes: usize,
    pub note: &'static str,
}

const HEURISTIC_NOTE: &str = "numerical verdict from finite multistart, deduplication radius and condition threshold";

fn summarize(set: &BvpSolutionSet) -> PairSummary {
    let (u0, u1) = set.endpoints.clone().expect("dirichlet set has endpoints");
    PairSummary {
        u0: u0.iter().copied().collect(),
        u1: u1.iter().copied().collect(),
        classification: set.classification,
        isolation_stable: set.isolation_stable,
    }
}

/// Whether every solution of `set` persists under endpoint perturbations.
fn probe_openness(sys: &HamiltonianSystem, set: &BvpSolutionSet, cfg: &ShootingConfig) -> (usize, bool) {
    let (u0, u1) = set.endpoints.clone().expect("dirichlet set has endpoints");
    let r = sys.dim();
    let d = cfg.openness_probe;
    let mut probes = 0;
    for sol in &set.solutions {
        for k in 0..2 * r {
            for sign in [1.0, -1.0] {
                let (mut a, mut b) = (u0.clone(), u1.clone());
                if k < r {
                    a[k] += sign * d;
                } else {
                    b[k - r] += sign * d;
                }
                probes += 1;
                if shoot_from(sys, &a, &b, sol.p0.clone(), cfg).is_none() {
                    return (probes, false);
                }
            }
        }
    }
    (probes, true)
}

/// Dirichlet / locally Dirichlet / neither, decided on sampled endpoint pairs.
pub fn classify_theory(
    sys: &HamiltonianSystem,
    samples: &[(DVector<f64>, DVector<f64>)],
    cfg: &ShootingConfig,
) -> Result<TheoryReport> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("classify_theory needs at least one endpoint pair".into()));
    }
    let sets: Vec<BvpSolutionSet> =
        samples.par_iter().map(|(a, b)| solve_dirichlet(sys, a, b, cfg)).collect::<Result<_>>()?;
    let pairs: Vec<PairSummary> = sets.iter().map(summarize).collect();
    let neither = |i: usize, reason: &str, probes: usize| TheoryReport {
        verdict: TheoryVerdict::Neither,
        evidence: Some(TheoryEvidence { pair: pairs[i].clone(), reason: reason.into() }),
        pairs: pairs.clone(),
        openness_probes: probes,
        note: HEURISTIC_NOTE,
    };
    if let Some(i) = sets.iter().position(|s| matches!(s.classification, Classification::Continuum { .. })) {
        return Ok(neither(i, "solutions are not isolated", 0));
    }
    if sets.iter().all(|s| s.classification == Classification::NoSolution) {
        return Ok(neither(0, "no solution joins the endpoints", 0));
    }
    if let Some(i) = sets.iter().position(|s| !s.solutions.is_empty() && !s.isolation_stable) {
        return Ok(neither(i, "deduplication count changes when the radius is halved", 0));
    }
    let openness: Vec<(usize, bool)> =
        sets.par_iter().map(|s| if s.solutions.is_empty() { (0, true) } else { probe_openness(sys, s, cfg) }).collect();
    let probes: usize = openness.iter().map(|o| o.0).sum();
    if let Some(i) = openness.iter().position(|o| !o.1) {
        return Ok(neither(i, "reachable endpoint set is not open", probes));
    }
    let verdict = if sets.iter().all(|s| s.classification == Classification::Unique) {
        TheoryVerdict::Dirichlet
    } else {
        TheoryVerdict::LocallyDirichlet
    };
    let evidence = sets.iter().position(|s| s.classification != Classification::Unique).map(|i| TheoryEvidence {
        pair: pairs[i].clone(),
        reason: if sets[i].solutions.is_empty() {
            "no solution joins the endpoints".into()
        } else {
            "more than one isolated solution".into()
        },
    });
    Ok(TheoryReport { verdict, evidence, pairs, openness_probes: probes, note: HEURISTIC_NOTE })
}

pub type BoundaryGenerator = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type BoundaryGeneratorGradient =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

/// A Lagrangian boundary condition in `T*Q x T*Q`.
#[derive(Clone)]
pub enum LagrangianBoundary {
    /// `L = graph dF`, imposing `p0 = -dF/du0` and `p1 = dF/du1`.
    Graph { generator: BoundaryGenerator, gradient: BoundaryGeneratorGradient },
    /// Fixed endpoints; equivalent to the Dirichlet problem.
    FixedEndpoints { u0: DVector<f64>, u1: DVector<f64> },
}

impl fmt::Debug for LagrangianBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LagrangianBoundary::Graph { .. } => f.write_str("Graph(dF)"),
            LagrangianBoundary::FixedEndpoints { u0, u1 } => {
                f.debug_struct("FixedEndpoints").field("u0", u0).field("u1", u1).finish()
            }
        }
    }
}

impl LagrangianBoundary {
    pub fn graph(
        generator: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        LagrangianBoundary::Graph { generator: Arc::new(generator), gradient: Arc::new(gradient) }
    }
}

const GRAPH_FD_STEP: f64 = 1e-6;

/// Residual `(p0 + dF/du0, p1 - dF/du1)` and its Jacobian in `x = (u0, p0)`.
fn graph_residual(
    sys: &HamiltonianSystem,
    gradient: &BoundaryGeneratorGradient,
    x: &DVector<f64>,
    cfg: &ShootingConfig,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let r = sys.dim();
    let u0 = x.rows(0, r).into_owned();
    let p0 = x.rows(r, r).into_owned();
    let map = flow_map(sys, &u0, &p0, 0.0, 1.0, &cfg.integrator, true).ok()?;
    let phi = map.jacobian?;
    let (g0, g1) = gradient(&u0, &map.u);
    let mut res = DVector::zeros(2 * r);
    res.rows_mut(0, r).copy_from(&(&p0 + &g0));
    res.rows_mut(r, r).copy_from(&(&map.p - &g1));

    // Second derivatives of F by central differences of its gradient.
    let mut f00 = DMatrix::zeros(r, r);
    let mut f10 = DMatrix::zeros(r, r);
    let mut f01 = DMatrix::zeros(r, r);
    let mut f11 = DMatrix::zeros(r, r);
    for j in 0..r {
        let mut ap = u0.clone();
        let mut am = u0.clone();
        ap[j] += GRAPH_FD_STEP;
        am[j] -= GRAPH_FD_STEP;
        let (a0, a1) = gradient(&ap, &map.u);
        let (b0, b1) = gradient(&am, &map.u);
        f00.set_column(j, &((a0 - b0) / (2.0 * GRAPH_FD_STEP)));
        f10.set_column(j, &((a1 - b1) / (2.0 * GRAPH_FD_STEP)));
        let mut cp = map.u.clone();
        let mut cm = map.u.clone();
        cp[j] += GRAPH_FD_STEP;
        cm[j] -= GRAPH_FD_STEP;
        let (c0, c1) = gradient(&u0, &cp);
        let (d0, d1) = gradient(&u0, &cm);
        f01.set_column(j, &((c0 - d0) / (2.0 * GRAPH_FD_STEP)));
        f11.set_column(j, &((c1 - d1) / (2.0 * GRAPH_FD_STEP)));
    }
    let uu = phi.view((0, 0), (r, r)).into_owned();
    let up = phi.view((0, r), (r, r)).into_owned();
    let pu = phi.view((r, 0), (r, r)).into_owned();
    let pp = phi.view((r, r), (r, r)).into_owned();
    let mut jac = DMatrix::zeros(2 * r, 2 * r);
    jac.view_mut((0, 0), (r, r)).copy_from(&(&f00 + &f01 * &uu));
    jac.view_mut((0, r), (r, r)).copy_from(&(DMatrix::identity(r, r) + &f01 * &up));
    jac.view_mut((r, 0), (r, r)).copy_from(&(&pu - &f10 - &f11 * &uu));
    jac.view_mut((r, r), (r, r)).copy_from(&(&pp - &f11 * &up));
    if res.iter().chain(jac.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((res, jac))
}

/// Critical points of the action on curves whose boundary values lie on a
/// Lagrangian boundary condition.
///
/// For a graph, Newton runs on `(u0, p0)` from every pair of position seed
/// (default the origin) and momentum seed.
pub fn solve_with_lagrangian_boundary(
    sys: &HamiltonianSystem,
    boundary: &LagrangianBoundary,
    cfg: &ShootingConfig,
) -> Result<BvpSolutionSet> {
    let gradient = match boundary {
        LagrangianBoundary::FixedEndpoints { u0, u1 } => return solve_dirichlet(sys, u0, u1, cfg),
        LagrangianBoundary::Graph { gradient, .. } => gradient,
    };
    cfg.validate()?;
    let r = sys.dim();
    let positions: Vec<DVector<f64>> = if cfg.position_seeds.is_empty() {
        vec![DVector::zeros(r)]
    } else {
        cfg.position_seeds
            .iter()
            .map(|v| {
                if v.len() != r {
                    Err(Error::DimensionMismatch { expected: r, found: v.len() })
                } else {
                    Ok(DVector::from_column_slice(v))
                }
            })
            .collect::<Result<_>>()?
    };
    let momenta = cfg.multistart.momenta(r)?;
    let seeds: Vec<DVector<f64>> = positions
        .iter()
        .flat_map(|u| {
            momenta.iter().map(move |p| {
                let mut x = DVector::zeros(2 * r);
                x.rows_mut(0, r).copy_from(u);
                x.rows_mut(r, r).copy_from(p);
                x
            })
        })
        .collect();
    let candidates: Vec<Option<BvpSolution>> = seeds
        .into_par_iter()
        .map(|x0| {
            let out = damped_newton(x0, cfg.newton_tol, cfg.max_iter, |x| graph_residual(sys, gradient, x, cfg))?;
            let u0 = out.x.rows(0, r).into_owned();
            finish_solution(sys, u0, out, cfg)
        })
        .collect();
    Ok(assemble(sys, None, candidates, cfg))
}
