//! Declarative scenario files (TOML).
//!
//! A scenario names a bundled system, a task and the task's parameters:
//!
//! ```toml
//! system = "free-particle"
//! task = "bvp"
//! endpoints = [0.0, 2.0]
//! ```
//!
//! Keys other than the common ones (`system`, `task`, `integrator`,
//! `shooting`, `seed`, `output`) are parsed as parameters of the task and
//! rejected when the task does not know them.

use std::path::PathBuf;

use hamfield::boundary::{SeedSpec, ShootingConfig};
use hamfield::constraints::ConstraintDef;
use hamfield::examples::{
    make_cotangent_lift, make_free_particle, make_lambda_family, make_pendulum, make_quartic, make_sphere_geodesics,
    make_uniform_field, ExampleSystem, VectorField, VectorFieldSpec,
};
use hamfield::integrators::IntegratorConfig;
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::SchemaError;

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_force() -> Vec<f64> {
    vec![1.0, 0.0]
}

fn default_lift_field() -> VectorFieldSpec {
    VectorFieldSpec::Linear { rate: 1.0, dim: 1 }
}

fn default_family_field() -> VectorFieldSpec {
    VectorFieldSpec::Constant { value: vec![1.0] }
}

/// A bundled system with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemDef {
    FreeParticle {
        #[serde(default = "one")]
        m: f64,
    },
    UniformField {
        #[serde(default = "one")]
        m: f64,
        #[serde(default = "default_force")]
        force: Vec<f64>,
    },
    Quartic {
        #[serde(default = "one")]
        m: f64,
    },
    Pendulum {
        #[serde(default = "one")]
        m: f64,
        #[serde(default = "one")]
        k: f64,
    },
    Sphere,
    CotangentLift {
        #[serde(default = "default_lift_field")]
        field: VectorFieldSpec,
    },
    LambdaFamily {
        #[serde(default = "default_family_field")]
        field: VectorFieldSpec,
        #[serde(default = "half")]
        lambda: f64,
    },
}

impl SystemDef {
    pub fn build(&self) -> hamfield::Result<ExampleSystem> {
        match self {
            SystemDef::FreeParticle { m } => make_free_particle(*m),
            SystemDef::UniformField { m, force } => make_uniform_field(*m, force),
            SystemDef::Quartic { m } => make_quartic(*m),
            SystemDef::Pendulum { m, k } => make_pendulum(*m, *k),
            SystemDef::Sphere => Ok(make_sphere_geodesics()),
            SystemDef::CotangentLift { field } => Ok(make_cotangent_lift(VectorField::from_spec(field)?)),
            SystemDef::LambdaFamily { field, lambda } => make_lambda_family(VectorField::from_spec(field)?, *lambda),
        }
    }

    pub fn field(&self) -> Option<&VectorFieldSpec> {
        match self {
            SystemDef::CotangentLift { field } | SystemDef::LambdaFamily { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// A point of `R^r`: a bare number when `r = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Point {
    pub fn to_vector(&self, dim: usize, what: &str) -> Result<DVector<f64>, SchemaError> {
        let v = match self {
            Point::Scalar(x) => vec![*x],
            Point::Vector(v) => v.clone(),
        };
        if v.len() != dim {
            return Err(SchemaError(format!("`{what}` has {} component(s), expected {dim}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SchemaError(format!("`{what}` must be finite")));
        }
        Ok(DVector::from_vec(v))
    }
}

/// Uniform random samples in a box, drawn from the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBox {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub u0: Point,
    pub p0: Point,
    /// Treat an incomplete flow as a task failure.
    #[serde(default)]
    pub require_completion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpParams {
    pub endpoints: (Point, Point),
    /// Treat "no solution" as a task failure.
    #[serde(default = "yes")]
    pub require_solution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyParams {
    #[serde(default)]
    pub pairs: Vec<(Point, Point)>,
    pub random_pairs: Option<RandomBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentSourceParam {
    Flow,
    Bvp,
}

fn default_isotropy_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotropyParams {
    #[serde(default = "default_source")]
    pub source: TangentSourceParam,
    /// `(u0, p0)` for the flow source, `(u0, u1)` for the boundary-value source.
    #[serde(default)]
    pub points: Vec<(Point, Point)>,
    pub random_points: Option<RandomBox>,
    #[serde(default = "default_isotropy_tolerance")]
    pub defect_tolerance: f64,
}

fn default_source() -> TangentSourceParam {
    TangentSourceParam::Flow
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratingFunctionParams {
    pub endpoints: (Point, Point),
    #[serde(default)]
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaStudyParams {
    pub lambdas: Vec<f64>,
    pub endpoints: (Point, Point),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstrainedParams {
    pub constraint: ConstraintDef,
    pub u0: Point,
    pub e0: Point,
    /// Constant multiplier; zero when absent.
    pub lambda: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GotayParams {
    pub constraint: ConstraintDef,
    pub u: Point,
    pub e: Point,
    /// Defaults to `Sigma(e)`.
    pub p: Option<Point>,
    /// Defaults to zero.
    pub lambda: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskParams {
    Flow(FlowParams),
    Bvp(BvpParams),
    Classify(ClassifyParams),
    Isotropy(IsotropyParams),
    GeneratingFunction(GeneratingFunctionParams),
    LambdaStudy(LambdaStudyParams),
    Constrained(ConstrainedParams),
    Gotay(GotayParams),
}

pub const TASK_NAMES: [&str; 8] =
    ["flow", "bvp", "classify", "isotropy", "generating-function", "lambda-study", "constrained", "gotay"];

impl TaskParams {
    pub fn name(&self) -> &'static str {
        match self {
            TaskParams::Flow(_) => "flow",
            TaskParams::Bvp(_) => "bvp",
            TaskParams::Classify(_) => "classify",
            TaskParams::Isotropy(_) => "isotropy",
            TaskParams::GeneratingFunction(_) => "generating-function",
            TaskParams::LambdaStudy(_) => "lambda-study",
            TaskParams::Constrained(_) => "constrained",
            TaskParams::Gotay(_) => "gotay",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub system: SystemDef,
    pub task: TaskParams,
    pub integrator: IntegratorConfig,
    /// Its `integrator` field always equals the top-level one.
    pub shooting: ShootingConfig,
    pub seed: u64,
    pub output: OutputSpec,
    /// The multistart box takes its sampling seed from `seed` unless the
    /// scenario sets `shooting.multistart.rng_seed`.
    #[serde(skip)]
    pub multistart_follows_seed: bool,
}

fn typed<T: DeserializeOwned>(value: toml::Value, what: &str) -> Result<T, SchemaError> {
    value.try_into().map_err(|e: toml::de::Error| SchemaError(format!("{what}: {}", e.message())))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| SchemaError(e.to_string()))?;

        let system = match table.remove("system") {
            None => return Err(SchemaError("missing `system`".into())),
            Some(toml::Value::String(name)) => {
                let mut t = toml::Table::new();
                t.insert("name".into(), toml::Value::String(name));
                typed(toml::Value::Table(t), "system")?
            }
            Some(v) => typed(v, "system")?,
        };
        let task_name = match table.remove("task") {
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(SchemaError("`task` must be a string".into())),
            None => return Err(SchemaError("missing `task`".into())),
        };
        let integrator: IntegratorConfig = match table.remove("integrator") {
            Some(v) => typed(v, "integrator")?,
            None => IntegratorConfig::default(),
        };
        let shooting_value = table.remove("shooting");
        let explicit_rng_seed =
            shooting_value.as_ref().and_then(|v| v.get("multistart")).and_then(|m| m.get("rng_seed")).is_some();
        if let Some(toml::Value::Table(t)) = &shooting_value {
            if t.contains_key("integrator") {
                return Err(SchemaError("set the integrator at top level, not under `shooting`".into()));
            }
        }
        let mut shooting: ShootingConfig = match shooting_value {
            Some(v) => typed(v, "shooting")?,
            None => ShootingConfig::default(),
        };
        shooting.integrator = integrator.clone();
        let seed = match table.remove("seed") {
            Some(toml::Value::Integer(i)) if i >= 0 => i as u64,
            Some(_) => return Err(SchemaError("`seed` must be a nonnegative integer".into())),
            None => 0,
        };
        let output: OutputSpec = match table.remove("output") {
            Some(v) => typed(v, "output")?,
            None => OutputSpec::default(),
        };

        let rest = toml::Value::Table(table);
        let task = match task_name.as_str() {
            "flow" => TaskParams::Flow(typed(rest, "flow parameters")?),
            "bvp" => TaskParams::Bvp(typed(rest, "bvp parameters")?),
            "classify" => TaskParams::Classify(typed(rest, "classify parameters")?),
            "isotropy" => TaskParams::Isotropy(typed(rest, "isotropy parameters")?),
            "generating-function" => TaskParams::GeneratingFunction(typed(rest, "generating-function parameters")?),
            "lambda-study" => TaskParams::LambdaStudy(typed(rest, "lambda-study parameters")?),
            "constrained" => TaskParams::Constrained(typed(rest, "constrained parameters")?),
            "gotay" => TaskParams::Gotay(typed(rest, "gotay parameters")?),
            other => {
                return Err(SchemaError(format!("unknown task `{other}` (expected one of {})", TASK_NAMES.join(", "))))
            }
        };
        let mut scenario =
            Scenario { system, task, integrator, shooting, seed, output, multistart_follows_seed: !explicit_rng_seed };
        scenario.set_seed(seed);
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if self.multistart_follows_seed {
            if let SeedSpec::Box { rng_seed, .. } = &mut self.shooting.multistart {
                *rng_seed = seed;
            }
        }
    }

    /// Replace the step size everywhere it is used.
    pub fn set_step(&mut self, step: f64) {
        self.integrator.step = step;
        self.shooting.integrator.step = step;
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        self.integrator.validate().map_err(|e| SchemaError(e.to_string()))?;
        self.shooting.validate().map_err(|e| SchemaError(e.to_string()))?;
        self.system.build().map_err(|e| SchemaError(format!("system: {e}")))?;
        match &self.task {
            TaskParams::Classify(c) if c.pairs.is_empty() && c.random_pairs.is_none() => {
                Err(SchemaError("classify needs `pairs` or `random_pairs`".into()))
            }
            TaskParams::Isotropy(c) if c.points.is_empty() && c.random_points.is_none() => {
                Err(SchemaError("isotropy needs `points` or `random_points`".into()))
            }
            TaskParams::LambdaStudy(_) if self.system.field().is_none() => {
                Err(SchemaError("lambda-study needs a cotangent-lift or lambda-family system".into()))
            }
            TaskParams::LambdaStudy(l) if l.lambdas.is_empty() || l.lambdas.iter().any(|x| !(*x > 0.0)) => {
                Err(SchemaError("`lambdas` must be a nonempty list of positive numbers".into()))
            }
            _ => Ok(()),
        }?;
        for b in [match &self.task {
            TaskParams::Classify(c) => c.random_pairs.as_ref(),
            TaskParams::Isotropy(c) => c.random_points.as_ref(),
            _ => None,
        }]
        .into_iter()
        .flatten()
        {
            if b.count == 0 || !(b.lo <= b.hi) {
                return Err(SchemaError("random box needs count >= 1 and lo <= hi".into()));
            }
        }
        Ok(())
    }
}
