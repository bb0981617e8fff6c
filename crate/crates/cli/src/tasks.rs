//! Scenario tasks: a validation pass that builds every input, then execution.

use std::sync::Arc;

use hamfield::boundary::{classify_theory, generating_function_check, solve_dirichlet, ShootingConfig};
use hamfield::constraints::{
    check_hamiltonian_descends, gotay_step, integrate_constrained, stability_check, ConstraintSpec, ExtendedState,
    Gauge,
};
use hamfield::examples::{topological_limit_study, ExampleSystem, VectorField};
use hamfield::integrators::{energy_drift, integrate_flow, IntegratorConfig};
use hamfield::linalg::sup_norm;
use hamfield::system::{action_functional, HamiltonianSystem, Trajectory};
use hamfield::verifier::{isotropy_defect_bvp, isotropy_defect_flow, sample_phase_points};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::report::{num, vector};
use crate::scenario::{Point, RandomBox, Scenario, TangentSourceParam, TaskParams};
use crate::SchemaError;

type Pair = (DVector<f64>, DVector<f64>);

#[derive(Debug)]
pub enum Plan {
    Flow { u0: DVector<f64>, p0: DVector<f64>, require_completion: bool },
    Bvp { u0: DVector<f64>, u1: DVector<f64>, require_solution: bool },
    Classify { pairs: Vec<Pair> },
    Isotropy { source: TangentSourceParam, points: Vec<Pair>, tolerance: f64, random: bool },
    GeneratingFunction { u0: DVector<f64>, u1: DVector<f64>, branch: usize },
    LambdaStudy { field: VectorField, lambdas: Vec<f64>, u0: DVector<f64>, u1: DVector<f64> },
    Constrained { spec: ConstraintSpec, u0: DVector<f64>, e0: DVector<f64>, lambda: Option<DVector<f64>> },
    Gotay { spec: ConstraintSpec, state: ExtendedState },
}

/// A scenario with every input built and checked.
#[derive(Debug)]
pub struct Prepared {
    pub example: ExampleSystem,
    pub plan: Plan,
    pub integrator: IntegratorConfig,
    pub shooting: ShootingConfig,
    pub seed: u64,
}

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub results: Value,
    /// Set when the task could not deliver what the scenario required.
    pub failure: Option<String>,
    /// Tables to write, by file name.
    pub trajectories: Vec<(String, Trajectory)>,
}

fn pair(p: &(Point, Point), dims: (usize, usize), names: (&str, &str)) -> Result<Pair, SchemaError> {
    Ok((p.0.to_vector(dims.0, names.0)?, p.1.to_vector(dims.1, names.1)?))
}

fn pairs(list: &[(Point, Point)], random: Option<&RandomBox>, r: usize, seed: u64) -> Result<Vec<Pair>, SchemaError> {
    let mut out =
        list.iter().map(|p| pair(p, (r, r), ("first point", "second point"))).collect::<Result<Vec<_>, _>>()?;
    if let Some(b) = random {
        out.extend(sample_phase_points(seed, b.count, r, b.lo, b.hi));
    }
    Ok(out)
}

fn constraint(def: &hamfield::constraints::ConstraintDef, r: usize) -> Result<ConstraintSpec, SchemaError> {
    let spec = ConstraintSpec::from_def(def).map_err(|e| SchemaError(format!("constraint: {e}")))?;
    if spec.r() != r {
        return Err(SchemaError(format!("constraint acts on dimension {} but the system has {r}", spec.r())));
    }
    Ok(spec)
}

/// Build every input of the scenario; fails before any computation.
pub fn prepare(scenario: &Scenario) -> Result<Prepared, SchemaError> {
    let example = scenario.system.build().map_err(|e| SchemaError(format!("system: {e}")))?;
    let r = example.system.dim();
    let seed = scenario.seed;
    let plan = match &scenario.task {
        TaskParams::Flow(f) => Plan::Flow {
            u0: f.u0.to_vector(r, "u0")?,
            p0: f.p0.to_vector(r, "p0")?,
            require_completion: f.require_completion,
        },
        TaskParams::Bvp(b) => {
            let (u0, u1) = pair(&b.endpoints, (r, r), ("endpoints[0]", "endpoints[1]"))?;
            Plan::Bvp { u0, u1, require_solution: b.require_solution }
        }
        TaskParams::Classify(c) => Plan::Classify { pairs: pairs(&c.pairs, c.random_pairs.as_ref(), r, seed)? },
        TaskParams::Isotropy(i) => Plan::Isotropy {
            source: i.source,
            points: pairs(&i.points, i.random_points.as_ref(), r, seed)?,
            tolerance: i.defect_tolerance,
            random: i.random_points.is_some(),
        },
        TaskParams::GeneratingFunction(g) => {
            let (u0, u1) = pair(&g.endpoints, (r, r), ("endpoints[0]", "endpoints[1]"))?;
            Plan::GeneratingFunction { u0, u1, branch: g.branch }
        }
        TaskParams::LambdaStudy(l) => {
            let spec = scenario
                .system
                .field()
                .ok_or_else(|| SchemaError("lambda-study needs a cotangent-lift or lambda-family system".into()))?;
            let field = VectorField::from_spec(spec).map_err(|e| SchemaError(format!("field: {e}")))?;
            let (u0, u1) = pair(&l.endpoints, (r, r), ("endpoints[0]", "endpoints[1]"))?;
            Plan::LambdaStudy { field, lambdas: l.lambdas.clone(), u0, u1 }
        }
        TaskParams::Constrained(c) => {
            let spec = constraint(&c.constraint, r)?;
            let lambda = c.lambda.as_ref().map(|l| l.to_vector(r, "lambda")).transpose()?;
            Plan::Constrained { u0: c.u0.to_vector(r, "u0")?, e0: c.e0.to_vector(spec.k(), "e0")?, lambda, spec }
        }
        TaskParams::Gotay(g) => {
            let spec = constraint(&g.constraint, r)?;
            let e = g.e.to_vector(spec.k(), "e")?;
            let p = match &g.p {
                Some(p) => p.to_vector(r, "p")?,
                None => spec.sigma(&e),
            };
            let lambda = match &g.lambda {
                Some(l) => l.to_vector(r, "lambda")?,
                None => DVector::zeros(r),
            };
            let state = ExtendedState::new(g.u.to_vector(r, "u")?, p, lambda, e)
                .map_err(|e| SchemaError(format!("gotay state: {e}")))?;
            Plan::Gotay { spec, state }
        }
    };
    Ok(Prepared { example, plan, integrator: scenario.integrator.clone(), shooting: scenario.shooting.clone(), seed })
}

fn analytic_defect(sys: &HamiltonianSystem, traj: &Trajectory) -> Option<f64> {
    let flow = sys.analytic_flow()?;
    let (u0, p0) = (&traj.positions()[0], &traj.momenta()[0]);
    let mut worst = 0.0_f64;
    for ((t, u), p) in traj.times().iter().zip(traj.positions()).zip(traj.momenta()) {
        let (eu, ep) = flow(*t, u0, p0);
        worst = worst.max(sup_norm(&(u - eu)).max(sup_norm(&(p - ep))));
    }
    Some(worst)
}

fn failed(results: Value, msg: String) -> TaskOutput {
    TaskOutput { results, failure: Some(msg), trajectories: Vec::new() }
}

/// Run a prepared scenario. Library errors become task-level failures.
pub fn execute(prep: &Prepared) -> TaskOutput {
    match run(prep) {
        Ok(out) => out,
        Err(e) => failed(json!({ "error": e.to_string() }), e.to_string()),
    }
}

fn run(prep: &Prepared) -> hamfield::Result<TaskOutput> {
    let sys = &prep.example.system;
    let r = sys.dim();
    Ok(match &prep.plan {
        Plan::Flow { u0, p0, require_completion } => {
            let flow = integrate_flow(sys, u0, p0, &prep.integrator)?;
            let traj = flow.trajectory;
            let (u1, p1) = traj.last_state();
            let results = json!({
                "status": serde_json::to_value(flow.status).expect("status serializes"),
                "completed": flow.status.is_completed(),
                "t_end": num(traj.grid().last()),
                "nodes": traj.len(),
                "u_end": vector(u1),
                "p_end": vector(p1),
                "energy_drift": num(energy_drift(sys, &traj)),
                "analytic_defect": analytic_defect(sys, &traj).map(num),
            });
            let failure = (*require_completion && !flow.status.is_completed())
                .then(|| format!("flow did not complete: {:?}", flow.status));
            TaskOutput { results, failure, trajectories: vec![("trajectory.csv".into(), traj)] }
        }
        Plan::Bvp { u0, u1, require_solution } => {
            let set = solve_dirichlet(sys, u0, u1, &prep.shooting)?;
            let mut solutions = Vec::new();
            let mut trajectories = Vec::new();
            for (i, s) in set.solutions.iter().enumerate() {
                solutions.push(json!({
                    "p0": vector(&s.p0),
                    "p1": vector(&s.p1),
                    "u1": vector(&s.u1),
                    "w": action_functional(sys, &s.trajectory).ok().map(num),
                    "residual": num(s.residual),
                    "condition": num(s.condition),
                }));
                trajectories.push((format!("branch_{i}.csv"), s.trajectory.clone()));
            }
            let results = json!({
                "u0": vector(u0),
                "u1": vector(u1),
                "classification": serde_json::to_value(set.classification).expect("classification serializes"),
                "isolation_stable": set.isolation_stable,
                "seeds_tried": set.seeds_tried,
                "seeds_converged": set.seeds_converged,
                "solutions": solutions,
            });
            let failure = (*require_solution && set.solutions.is_empty())
                .then(|| format!("no solution joins the endpoints ({})", set.classification));
            TaskOutput { results, failure, trajectories }
        }
        Plan::Classify { pairs } => {
            let report = classify_theory(sys, pairs, &prep.shooting)?;
            TaskOutput { results: serde_json::to_value(report).expect("report serializes"), ..Default::default() }
        }
        Plan::Isotropy { source, points, tolerance, random } => {
            let mut report = match source {
                TangentSourceParam::Flow => isotropy_defect_flow(sys, points, &prep.integrator)?,
                TangentSourceParam::Bvp => isotropy_defect_bvp(sys, points, &prep.shooting)?,
            };
            if *random {
                report.seed = Some(prep.seed);
            }
            let lagrangian = report.is_lagrangian(r, *tolerance);
            let mut results = serde_json::to_value(&report).expect("report serializes");
            results["lagrangian"] = Value::Bool(lagrangian);
            results["dimension"] = Value::from(r);
            results["defect_tolerance"] = num(*tolerance);
            TaskOutput { results, ..Default::default() }
        }
        Plan::GeneratingFunction { u0, u1, branch } => {
            let d = generating_function_check(sys, u0, u1, &prep.shooting, *branch)?;
            let mut results = serde_json::to_value(&d).expect("defects serialize");
            results["branch"] = Value::from(*branch);
            TaskOutput { results, ..Default::default() }
        }
        Plan::LambdaStudy { field, lambdas, u0, u1 } => {
            let study = topological_limit_study(field, lambdas, u0, u1, &prep.shooting)?;
            TaskOutput { results: serde_json::to_value(study).expect("study serializes"), ..Default::default() }
        }
        Plan::Constrained { spec, u0, e0, lambda } => {
            let gauge = match lambda {
                Some(l) => {
                    let l = l.clone();
                    Gauge::Custom(Arc::new(move |_| l.clone()))
                }
                None => Gauge::LambdaZero,
            };
            let cf = integrate_constrained(sys, spec, u0, e0, &prep.integrator, &gauge)?;
            let traj = cf.flow.trajectory;
            let (u_end, p_end) = traj.last_state();
            let results = json!({
                "constraint": spec.name(),
                "status": serde_json::to_value(cf.flow.status).expect("status serializes"),
                "completed": cf.flow.status.is_completed(),
                "u_end": vector(u_end),
                "p_end": vector(p_end),
                "e_end": cf.e_path.last().map(vector),
                "energy_drift": num(cf.energy_drift),
                "constraint_drift": num(cf.constraint_drift),
                "max_polar_residual": num(cf.max_polar_residual),
                "max_tangency_residual": num(cf.max_tangency_residual),
            });
            TaskOutput { results, failure: None, trajectories: vec![("trajectory.csv".into(), traj)] }
        }
        Plan::Gotay { spec, state } => {
            let report = gotay_step(sys, spec, state)?;
            let mut results = serde_json::to_value(&report).expect("report serializes");
            results["constraint"] = Value::from(spec.name());
            results["kernel_dimension"] = Value::from(report.kernel_basis.len());
            results["stability_residual"] = match stability_check(sys, spec, state) {
                Ok(x) => num(x),
                Err(e) => Value::from(e.to_string()),
            };
            results["descent_defect"] = match check_hamiltonian_descends(sys, spec, std::slice::from_ref(state)) {
                Ok(x) => num(x),
                Err(e) => Value::from(e.to_string()),
            };
            TaskOutput { results, ..Default::default() }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepared(text: &str) -> Result<Prepared, SchemaError> {
        prepare(&Scenario::parse(text).unwrap())
    }

    #[test]
    fn dimensions_are_checked_before_running() {
        assert!(prepared("system = \"sphere\"\ntask = \"flow\"\nu0 = 1.0\np0 = 0.0\n").is_err());
        assert!(prepared(
            "system = \"free-particle\"\ntask = \"gotay\"\nu = 0.0\ne = 0.0\n[constraint]\nkind = \"circle\"\n"
        )
        .is_err());
        assert!(prepared(
            "system = \"uniform-field\"\ntask = \"gotay\"\nu = [0.0, 0.0]\ne = 0.0\n[constraint]\nkind = \"circle\"\n"
        )
        .is_ok());
    }

    #[test]
    fn random_pairs_follow_the_seed() {
        let text = |seed| {
            format!("system = \"pendulum\"\ntask = \"classify\"\nseed = {seed}\n[random_pairs]\ncount = 3\nlo = -1.0\nhi = 1.0\n")
        };
        let get = |seed| match prepared(&text(seed)).unwrap().plan {
            Plan::Classify { pairs } => pairs,
            _ => unreachable!(),
        };
        assert_eq!(get(4), get(4));
        assert_ne!(get(4), get(5));
    }

    #[test]
    fn free_particle_bvp() {
        let prep = prepared("system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\n").unwrap();
        let out = execute(&prep);
        assert!(out.failure.is_none());
        assert_eq!(out.results["classification"]["kind"], "unique");
        assert!((out.results["solutions"][0]["p0"][0].as_f64().unwrap() - 2.0).abs() < 1e-8);
        assert_eq!(out.trajectories.len(), 1);
    }

    #[test]
    fn cotangent_off_graph_is_a_task_failure() {
        let prep = prepared("system = \"cotangent-lift\"\ntask = \"bvp\"\nendpoints = [1.0, 1.0]\n").unwrap();
        let out = execute(&prep);
        assert!(out.failure.is_some());
        assert_eq!(out.results["classification"]["kind"], "no-solution");
    }

    #[test]
    fn circle_with_force_reports_secondary_constraint() {
        let prep = prepared(
            "system = \"uniform-field\"\ntask = \"gotay\"\nu = [0.0, 0.0]\ne = 0.3\n[constraint]\nkind = \"circle\"\n",
        )
        .unwrap();
        let out = execute(&prep);
        assert_eq!(out.results["stability"]["kind"], "secondary-constraint");
        assert_eq!(out.results["terminated"], false);
        assert_eq!(out.results["kernel_dimension"], 3);

        let prep = prepared(
            "system = \"uniform-field\"\ntask = \"constrained\"\nu0 = [0.0, 0.0]\ne0 = 0.3\n[constraint]\nkind = \"circle\"\n",
        )
        .unwrap();
        let out = execute(&prep);
        assert!(out.failure.as_deref().unwrap().contains("not stable"));
    }
}
