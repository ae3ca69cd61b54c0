//! Black-box checks of the binary itself: exit codes, preset round-trips,
//! rate fitting on hand-built summaries, and the solve report's contents.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tdlab_core::{
    build_minimax, off_policy_population, ExternalInstanceFile, MinimaxSpec,
};

fn tdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdlab"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: expected exit {code}, got {:?}\nstderr: {}",
        out.status.code(),
        stderr(out)
    );
}

#[test]
fn exit_codes_follow_the_documented_contract() {
    let dir = tempfile::tempdir().unwrap();

    // 0: success
    let ok = tdlab(&["gen-config", "--preset", "minimax-fig1"]);
    assert_exit(&ok, 0, "gen-config to stdout");

    // 2: configuration errors
    let bad_preset = tdlab(&["gen-config", "--preset", "nope"]);
    assert_exit(&bad_preset, 2, "unknown preset");
    assert!(
        stderr(&bad_preset).contains("minimax-fig1") && stderr(&bad_preset).contains("baird-fig3"),
        "unknown-preset message lists the available names"
    );

    let dup = dir.path().join("dup.txt");
    fs::write(&dup, "steps = 5\nsteps = 6\n").unwrap();
    assert_exit(
        &tdlab(&["run", dup.to_str().unwrap()]),
        2,
        "duplicate config key",
    );

    let summary = dir.path().join("absent.csv");
    assert_exit(
        &tdlab(&["rate", summary.to_str().unwrap(), "--window", "9"]),
        2,
        "malformed rate window",
    );

    assert_exit(
        &tdlab(&["solve", "minimax", "--alpha", "0.1"]),
        2,
        "certificate with half the stepsize pair",
    );

    // 3: instance / domain errors
    assert_exit(
        &tdlab(&["solve", "minimax", "--epsilon", "0.25"]),
        3,
        "perturbation above the admissible bound",
    );

    let mangled = dir.path().join("mangled.json");
    fs::write(&mangled, "{ not json").unwrap();
    assert_exit(
        &tdlab(&["solve", mangled.to_str().unwrap()]),
        3,
        "malformed instance file",
    );

    assert_exit(
        &tdlab(&["solve", "baird", "--alpha", "0.02", "--beta", "0.002"]),
        3,
        "certificate on a singular-covariance instance",
    );

    // 4: I/O errors
    assert_exit(
        &tdlab(&["run", dir.path().join("absent.txt").to_str().unwrap()]),
        4,
        "missing config file",
    );
    assert_exit(
        &tdlab(&["rate", summary.to_str().unwrap(), "--window", "10:100"]),
        4,
        "missing summary file",
    );
    assert_exit(
        &tdlab(&[
            "gen-config",
            "--preset",
            "baird-fig3",
            "--out",
            dir.path().join("no-such-dir/x.txt").to_str().unwrap(),
        ]),
        4,
        "unwritable output path",
    );
}

#[test]
fn gen_config_round_trips_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["minimax-fig1", "baird-fig3"] {
        let path = dir.path().join(format!("{name}.txt"));
        let to_file = tdlab(&["gen-config", "--preset", name, "--out", path.to_str().unwrap()]);
        assert_exit(&to_file, 0, "gen-config to file");

        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, tdlab_core::preset(name).unwrap());
        tdlab_core::parse_config(&text).expect("generated config parses");

        let to_stdout = tdlab(&["gen-config", "--preset", name]);
        assert_exit(&to_stdout, 0, "gen-config to stdout");
        assert_eq!(stdout(&to_stdout), text, "stdout and file emission agree");
    }
}

fn write_summary(path: &Path, rows: &[(u64, f64)]) {
    let mut text = String::from("step,mean,lo95,hi95,diverged\n");
    for (step, mean) in rows {
        text.push_str(&format!("{step},{mean},{},{},0\n", mean * 0.9, mean * 1.1));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn rate_recovers_a_synthetic_power_law() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    let rows: Vec<(u64, f64)> = (1..=6)
        .map(|k| {
            let t = 10u64.pow(k);
            (t, 0.5 / (t as f64).sqrt())
        })
        .collect();
    write_summary(&path, &rows);

    let out = tdlab(&["rate", path.to_str().unwrap(), "--window", "10:1000000"]);
    assert_exit(&out, 0, "rate on a clean power law");
    let text = stdout(&out);
    assert!(
        text.contains("slope = -0.500000") && text.contains("points = 6"),
        "unexpected fit report: {text}"
    );

    // sub-window selection drops the excluded checkpoints
    let narrow = tdlab(&["rate", path.to_str().unwrap(), "--window", "100:1000000"]);
    assert_exit(&narrow, 0, "rate on a sub-window");
    assert!(stdout(&narrow).contains("points = 5"));
}

#[test]
fn solve_reports_the_closed_form_chain_quantities() {
    let out = tdlab(&["solve", "minimax"]);
    assert_exit(&out, 0, "solve on the built-in chain");
    let text = stdout(&out);

    let spec = MinimaxSpec::new(10, 3, 0.2, 0.01);
    let inst = build_minimax(&spec).unwrap();
    let pop = off_policy_population(&inst.mdp, &inst.policy, &inst.policy, &inst.features).unwrap();
    let constants = pop.constants.as_ref().unwrap();

    for expected in [
        format!("{:.10}", inst.theta_star[0]),
        format!("{:.10}", inst.theta_star[2]),
        format!("lambda1 = {:.10}", constants.lambda1),
    ] {
        assert!(text.contains(&expected), "missing `{expected}` in:\n{text}");
    }
    assert!(text.contains("0.2500000000") && text.contains("0.0625000000"), "stationary masses");
    assert!(text.contains("rho_max = 1"), "on-policy ratio bound");
    assert!(text.contains("solver agreement"), "closed form vs linear solve");

    let certified = tdlab(&["solve", "minimax", "--alpha", "0.00001", "--beta", "0.05"]);
    assert_exit(&certified, 0, "certificate on the built-in chain");
    let text = stdout(&certified);
    assert!(
        text.contains("|Psi| = ") && text.contains("conditions_met = "),
        "certificate line missing: {text}"
    );
}

#[test]
fn solve_reports_the_counterexample_structure() {
    let out = tdlab(&["solve", "baird"]);
    assert_exit(&out, 0, "solve on the counterexample");
    let text = stdout(&out);
    for expected in [
        "rho_max = 7",
        "fixed point: not identified (singular system)",
        "optimal value vector",
        "spectral constants: unavailable",
    ] {
        assert!(text.contains(expected), "missing `{expected}` in:\n{text}");
    }
}

#[test]
fn solve_loads_external_instance_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("instance.json");

    let mut rng = tdlab_core::rng_for(31);
    let inst = tdlab_core::random_instance(&mut rng, 6, 2, 3, 0.8);
    ExternalInstanceFile::from_instance(&inst.mdp, &inst.target, &inst.behavior, &inst.features, true)
        .save(&path)
        .unwrap();

    let out = tdlab(&["solve", path.to_str().unwrap()]);
    assert_exit(&out, 0, "solve on a file-backed instance");
    let text = stdout(&out);
    assert!(text.contains("6 states, 2 actions, 3 features"), "header line: {text}");
    assert!(text.contains("fixed point"), "fixed point reported");

    let pop = off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features).unwrap();
    let theta = pop.theta_star().unwrap();
    assert!(
        text.contains(&format!("{:.10}", theta[0])),
        "file-backed solve disagrees with the in-process solver:\n{text}"
    );
}
