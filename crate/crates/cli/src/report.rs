use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::scenario::Scenario;

pub const REPORT_FILE: &str = "report.json";
pub const TOOL: &str = "hamfield";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub success: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of the scenario after overrides.
    pub config_hash: String,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub tool: String,
    pub task: String,
    pub system: String,
    /// The scenario as interpreted, defaults filled in.
    pub scenario: Value,
    pub results: Value,
    pub outcome: Outcome,
    pub provenance: Provenance,
    /// Files written next to the report, relative to the output directory.
    pub files: Vec<String>,
    pub wall_time_s: f64,
}

pub fn scenario_json(scenario: &Scenario) -> Value {
    serde_json::to_value(scenario).expect("scenario serializes")
}

pub fn config_hash(scenario: &Scenario) -> String {
    let canonical = serde_json::to_string(&scenario_json(scenario)).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

impl Report {
    pub fn new(
        scenario: &Scenario,
        results: Value,
        failure: Option<String>,
        files: Vec<String>,
        wall_time_s: f64,
    ) -> Self {
        Report {
            tool: TOOL.into(),
            task: scenario.task.name().into(),
            system: scenario.system.build().map(|ex| ex.system.name().to_string()).unwrap_or_default(),
            scenario: scenario_json(scenario),
            results,
            outcome: Outcome { success: failure.is_none(), failure },
            provenance: Provenance {
                version: env!("CARGO_PKG_VERSION").into(),
                seed: scenario.seed,
                config_hash: config_hash(scenario),
                step: scenario.integrator.step,
            },
            files,
            wall_time_s,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// A float as JSON; non-finite values become the strings `inf`, `-inf`, `nan`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn vector(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

/// Read back a value written by [`num`].
pub fn read_num(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let scenario =
            Scenario::parse("system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\nseed = 7\n").unwrap();
        let results = serde_json::json!({
            "third": num(1.0 / 3.0),
            "tiny": num(4.9e-324),
            "big": num(f64::INFINITY),
            "v": vector(&DVector::from_vec(vec![0.1, -0.7, 1e300])),
        });
        Report::new(&scenario, results, None, vec!["report.json".into()], 0.125)
    }

    #[test]
    fn round_trip_is_lossless() {
        let report = sample();
        let back = Report::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), report.to_json());
        assert_eq!(read_num(&back.results["third"]), Some(1.0 / 3.0));
        assert_eq!(read_num(&back.results["big"]), Some(f64::INFINITY));
    }

    #[test]
    fn hash_tracks_the_scenario() {
        let a = Scenario::parse("system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\n").unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
