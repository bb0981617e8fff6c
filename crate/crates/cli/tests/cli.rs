use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hamfield_cli::report::{read_num, Report, REPORT_FILE};
use hamfield_cli::Scenario;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hamfield"));
    cmd.env_remove("HAMFIELD_OUT");
    cmd
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(scenario).arg("--out").arg(out).args(extra).output().unwrap()
}

fn report(out: &Path) -> Report {
    Report::from_json(&std::fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn free_particle_bvp_reports_unique_momentum_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run(&repo_root().join("scenarios/free_particle_bvp.toml"), &out, &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let r = report(&out);
    assert!(r.outcome.success);
    assert_eq!(r.results["classification"]["kind"], "unique");
    let p0 = read_num(&r.results["solutions"][0]["p0"][0]).unwrap();
    assert!((p0 - 2.0).abs() <= 1e-8, "{p0}");
    assert_eq!(r.files, vec!["branch_0.csv".to_string(), REPORT_FILE.to_string()]);

    let csv = std::fs::read_to_string(out.join("branch_0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,u_1,p_1"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0.0000000000000000e0");
    assert_eq!(csv.lines().count(), 1002);
}

#[test]
fn quartic_flow_blows_up_near_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = run(&repo_root().join("scenarios/quartic_blowup.toml"), &out, &[]);
    assert!(output.status.success());
    let r = report(&out);
    assert_eq!(r.results["status"]["kind"], "blow-up");
    let t = read_num(&r.results["status"]["t_escape"]).unwrap();
    assert!((0.45..=0.55).contains(&t), "{t}");
}

#[test]
fn unknown_task_is_a_schema_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path = write_scenario(dir.path(), "s.toml", "system = \"free-particle\"\ntask = \"teleport\"\n");
    let output = run(&path, &out, &[]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists());
    assert!(output.stdout.is_empty());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown task"));
}

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for text in [
        "system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\nextra = true\n",
        "system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [[0.0, 1.0], 2.0]\n",
        "system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\n[integrator]\nschem = \"x\"\n",
        "this is not toml",
    ] {
        let path = write_scenario(dir.path(), "s.toml", text);
        assert_eq!(run(&path, &out, &[]).status.code(), Some(2), "{text}");
        assert!(!out.exists());
    }
    let output = run(&dir.path().join("missing.toml"), &out, &[]);
    assert_eq!(output.status.code(), Some(2));
    let path =
        write_scenario(dir.path(), "s.toml", "system = \"free-particle\"\ntask = \"bvp\"\nendpoints = [0.0, 2.0]\n");
    assert_eq!(run(&path, &out, &["--step", "-0.1"]).status.code(), Some(2));
}

#[test]
fn missing_required_solution_exits_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path =
        write_scenario(dir.path(), "s.toml", "system = \"cotangent-lift\"\ntask = \"bvp\"\nendpoints = [1.0, 1.0]\n");
    let output = run(&path, &out, &[]);
    assert_eq!(output.status.code(), Some(3));
    let r = report(&out);
    assert!(!r.outcome.success);
    assert_eq!(r.results["classification"]["kind"], "no-solution");
}

#[test]
fn report_round_trips_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&repo_root().join("scenarios/sphere_antipodes.toml"), &out, &[]).status.success());
    let text = std::fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    let r = Report::from_json(&text).unwrap();
    assert_eq!(r.to_json(), text);
    assert_eq!(r.results["classification"]["max_condition"], "inf");
}

#[test]
fn same_scenario_and_seed_give_identical_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo_root().join("scenarios/cotangent_isotropy.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&scenario, &a, &["--seed", "8"]).status.success());
    assert!(run(&scenario, &b, &["--seed", "8"]).status.success());
    let (mut ra, mut rb) = (report(&a), report(&b));
    ra.wall_time_s = 0.0;
    rb.wall_time_s = 0.0;
    assert_eq!(ra.to_json(), rb.to_json());
    assert_eq!(ra.provenance.seed, 8);

    let c = dir.path().join("c");
    assert!(run(&scenario, &c, &["--seed", "9"]).status.success());
    assert_ne!(report(&c).provenance.config_hash, ra.provenance.config_hash);

    // The lifted linear flow has a constant Jacobian, so use the pendulum to see the seed act.
    let pend = write_scenario(
        dir.path(),
        "p.toml",
        "system = \"pendulum\"\ntask = \"isotropy\"\n[random_points]\ncount = 3\nlo = -1.0\nhi = 1.0\n",
    );
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    assert!(run(&pend, &p1, &["--seed", "1"]).status.success());
    assert!(run(&pend, &p2, &["--seed", "2"]).status.success());
    assert_ne!(report(&p1).results["max_defect"], report(&p2).results["max_defect"]);

    let bvp = repo_root().join("scenarios/pendulum_branches.toml");
    let (d, e) = (dir.path().join("d"), dir.path().join("e"));
    assert!(run(&bvp, &d, &[]).status.success());
    assert!(run(&bvp, &e, &[]).status.success());
    for f in report(&d).files {
        if f.ends_with(".csv") {
            assert_eq!(std::fs::read(d.join(&f)).unwrap(), std::fs::read(e.join(&f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn step_override_reaches_integrator_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&repo_root().join("scenarios/quartic_blowup.toml"), &out, &["--step", "0.01"]).status.success());
    let r = report(&out);
    assert_eq!(r.provenance.step, 0.01);
    assert_eq!(r.scenario["integrator"]["step"], 0.01);
    assert_eq!(r.scenario["shooting"]["integrator"]["step"], 0.01);
}

#[test]
fn output_directory_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env-out");
    let path =
        write_scenario(dir.path(), "s.toml", "system = \"free-particle\"\ntask = \"flow\"\nu0 = 0.0\np0 = 1.0\n");
    let output = bin().arg("run").arg(&path).env("HAMFIELD_OUT", &env_out).output().unwrap();
    assert!(output.status.success());
    assert!(env_out.join(REPORT_FILE).exists());

    let in_file = write_scenario(
        dir.path(),
        "t.toml",
        "system = \"free-particle\"\ntask = \"flow\"\nu0 = 0.0\np0 = 1.0\n[output]\ndir = \"rel\"\n",
    );
    let output = bin().arg("run").arg(&in_file).env("HAMFIELD_OUT", &env_out).output().unwrap();
    assert!(output.status.success());
    assert!(dir.path().join("rel").join(REPORT_FILE).exists());
}

#[test]
fn shipped_scenarios_are_valid() {
    let mut count = 0;
    for entry in std::fs::read_dir(repo_root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 8);
}

#[test]
fn list_examples_names_every_system() {
    let output = bin().arg("list-examples").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for name in hamfield::examples::EXAMPLE_NAMES {
        assert!(text.contains(name), "{name}");
    }
}
