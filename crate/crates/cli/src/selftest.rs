//! Every bundled analytic fact plus one invariant per library module.
//!
//! The report has no timing fields, so two runs with the same seed are
//! byte-identical.

use hamfield::boundary::{generating_function_check, ShootingConfig};
use hamfield::constraints::{
    check_hamiltonian_descends, gotay_step, integrate_constrained, ConstraintSpec, ExtendedState, Gauge,
};
use hamfield::examples::{example_by_name, make_uniform_field, EXAMPLE_NAMES};
use hamfield::integrators::{energy_drift, flow_jacobian, integrate_flow, symplecticity_defect, IntegratorConfig};
use hamfield::verifier::{isotropy_defect_flow, sample_phase_points};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(with = "hamfield::serde_float")]
    pub measured: f64,
    /// Tolerance after scaling.
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub tolerance_scale: f64,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
}

impl SelftestReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Multiplies every tolerance; `1e-6` is the strict mode.
    pub tolerance_scale: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { seed: 0, tolerance_scale: 1.0 }
    }
}

pub const STRICT_SCALE: f64 = 1e-6;

struct Collector {
    scale: f64,
    checks: Vec<Check>,
}

impl Collector {
    fn add(&mut self, name: impl Into<String>, tolerance: f64, measured: hamfield::Result<f64>) {
        let tolerance = tolerance * self.scale;
        let (measured, error) = match measured {
            Ok(x) => (x, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        self.checks.push(Check { name: name.into(), measured, tolerance, passed: measured <= tolerance, error });
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn run_selftest(opts: SelftestOptions) -> SelftestReport {
    let mut c = Collector { scale: opts.tolerance_scale, checks: Vec::new() };
    let cfg = IntegratorConfig::default();

    for name in EXAMPLE_NAMES {
        let ex = example_by_name(name).expect("registered");
        for fact in &ex.facts {
            c.add(format!("fact/{name}/{}", fact.key), fact.tolerance, fact.measure());
        }
        let r = ex.system.dim();
        let probes: Vec<_> =
            sample_phase_points(opts.seed, 4, r, -1.5, 1.5).into_iter().map(|(u, p)| (0.0, u, p)).collect();
        c.add(format!("system/gradients/{name}"), 1e-6, Ok(ex.system.gradient_defect(&probes, 1e-5)));
    }

    for name in ["free-particle", "pendulum", "cotangent-lift"] {
        let sys = example_by_name(name).expect("registered").system;
        let (u0, p0) = sample_phase_points(opts.seed, 1, 1, -1.0, 1.0).remove(0);
        let defect = flow_jacobian(&sys, &u0, &p0, &cfg).and_then(|j| symplecticity_defect(&j));
        c.add(format!("integrators/symplecticity/{name}"), 1e-9, defect);
    }
    let pendulum = example_by_name("pendulum").expect("registered").system;
    let drift = integrate_flow(&pendulum, &v(&[1.0]), &v(&[0.5]), &cfg).map(|f| energy_drift(&pendulum, &f.trajectory));
    c.add("integrators/energy-drift/pendulum", 1e-6, drift);

    for name in ["free-particle", "pendulum", "cotangent-lift", "lambda-family", "uniform-field"] {
        let sys = example_by_name(name).expect("registered").system;
        let r = sys.dim();
        let points = sample_phase_points(opts.seed, 10, r, -1.0, 1.0);
        let defect = isotropy_defect_flow(&sys, &points, &cfg).map(|rep| {
            if rep.frames == points.len() && rep.rank_estimate == 2 * r {
                rep.max_defect
            } else {
                f64::INFINITY
            }
        });
        c.add(format!("verifier/isotropy/{name}"), 1e-8, defect);
    }

    let free = example_by_name("free-particle").expect("registered").system;
    let gf = generating_function_check(&free, &v(&[0.0]), &v(&[2.0]), &ShootingConfig::default(), 0)
        .map(|d| d.defect_u0.max(d.defect_u1));
    c.add("boundary/generating-function/free-particle", 1e-6, gf);

    let identity = ConstraintSpec::identity(1);
    let same =
        integrate_constrained(&pendulum, &identity, &v(&[0.4]), &v(&[0.9]), &cfg, &Gauge::LambdaZero).and_then(|con| {
            let plain = integrate_flow(&pendulum, &v(&[0.4]), &v(&[0.9]), &cfg)?;
            Ok(con.flow.trajectory.distance(&plain.trajectory, pendulum.config()))
        });
    c.add("constraints/identity-matches-unconstrained", 1e-10, same);

    let circle = ConstraintSpec::circle();
    let kinetic = make_uniform_field(1.0, &[0.0, 0.0]).expect("valid").system;
    let forced = make_uniform_field(1.0, &[1.0, 0.0]).expect("valid").system;
    let probes: Vec<ExtendedState> = [0.1, 0.8, 2.5]
        .iter()
        .map(|&e| ExtendedState::on_constraint(&circle, v(&[0.2, -0.3]), v(&[e])).expect("finite"))
        .collect();
    let kernel = gotay_step(&kinetic, &circle, &probes[0]).map(|g| (g.kernel_basis.len() as f64 - 3.0).abs());
    c.add("constraints/kernel-dimension/circle", 0.0, kernel);
    c.add("constraints/descends/circle-kinetic", 1e-10, check_hamiltonian_descends(&kinetic, &circle, &probes));
    c.add(
        "constraints/descends/circle-forced",
        1e-6,
        ExtendedState::on_constraint(&circle, v(&[0.2, -0.3]), v(&[0.0]))
            .and_then(|s| check_hamiltonian_descends(&forced, &circle, &[s]))
            .map(|d| (d - 1.0).abs()),
    );
    let conserved = integrate_constrained(&kinetic, &circle, &v(&[0.0, 0.0]), &v(&[0.7]), &cfg, &Gauge::LambdaZero)
        .map(|f| f.energy_drift.max(f.constraint_drift));
    c.add("constraints/energy-drift/circle-kinetic", 1e-8, conserved);

    let failed = c.checks.iter().filter(|k| !k.passed).count();
    SelftestReport {
        tool: crate::report::TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: opts.seed,
        tolerance_scale: opts.tolerance_scale,
        passed: c.checks.len() - failed,
        failed,
        checks: c.checks,
    }
}
