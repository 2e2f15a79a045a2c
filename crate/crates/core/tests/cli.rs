//! Exit codes, output routing and configuration handling of the runner.

use ppde::cli::run;

fn call(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(std::iter::once("ppde").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn verified_oracle_exits_zero() {
    let (code, out) = call(&["verify-example", "HEAT-INTEGRAL"]);
    assert_eq!(code, 0, "{out}");
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("# ppde "));
    assert_eq!(lines.next(), Some("oracle,check,points,max_defect,pass"));
}

#[test]
fn corrupted_solution_exits_two() {
    let (code, out) = call(&["check-viscosity", "--oracle", "QUADRATIC", "--points", "2", "--corrupt", "0.1", "--seed", "5"]);
    assert_eq!(code, 2);
    assert!(out.contains(",sub,violation,"));
    assert_eq!(call(&["check-viscosity", "--oracle", "QUADRATIC", "--points", "2", "--seed", "5"]).0, 0);
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema = 1\nseed = 3\n[numerics]\ndtt = 0.1\n").unwrap();
    assert_eq!(call(&["solve-semilinear", "--config", bad.to_str().unwrap()]).0, 1);
    assert_eq!(call(&["simulate", "--n", "2"]).0, 1, "missing seed");
    assert_eq!(call(&["solve-semilinear", "--problem", "NOPE", "--seed", "1"]).0, 1);
    assert_eq!(call(&["no-such-command"]).0, 1);
    assert_eq!(call(&["solve-semilinear", "--dt", "-1", "--seed", "1"]).0, 1);
}

#[test]
fn config_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("paths.csv");
    std::fs::write(
        &cfg,
        format!("schema = 1\ncommand = \"simulate\"\nseed = 3\noutput = {:?}\n[numerics]\nn = 2\nsteps = 4\n", out.to_str().unwrap()),
    )
    .unwrap();
    let (code, stdout) = call(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "2"]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# ppde 0.1.0, seed=3, timestamp=0\npath_id,t,x1\n"));
    // Two paths of three knots each.
    assert_eq!(text.lines().count(), 2 + 6);
    assert_eq!(call(&["solve-hjb", "--config", cfg.to_str().unwrap()]).0, 1, "config names another command");
}

#[test]
fn acceptance_listing_does_not_run() {
    let (code, out) = call(&["acceptance", "--list"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 2 + 13);
}

#[test]
fn property_criteria_survive_reduced_path_counts() {
    let (code, out) = call(&["acceptance", "--only", "3,5,6,12", "--scale", "0.01"]);
    assert_eq!(code, 0, "{out}");
}

#[test]
fn help_lists_one_command_per_operation() {
    let (code, out) = call(&["--help"]);
    assert_eq!(code, 0);
    let commands = [
        "simulate",
        "expectation",
        "snell",
        "solve-semilinear",
        "solve-hjb",
        "solve-first-order",
        "perron",
        "check-viscosity",
        "verify-example",
        "acceptance",
    ];
    let listed: Vec<&str> = out
        .lines()
        .skip_while(|l| !l.starts_with("Commands:"))
        .skip(1)
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.split_whitespace().next())
        .filter(|c| *c != "help")
        .collect();
    assert_eq!(listed, commands);
}

#[test]
fn exact_tree_output_is_stable() {
    let (code, out) = call(&["solve-hjb", "--problem", "neg-square", "--exact", "--dt", "0.25"]);
    assert_eq!(code, 0);
    let row = out.lines().nth(2).unwrap();
    assert!(row.starts_with("hjb-tree,neg-square,0.25,0,0,-0.25,0,0,"), "{row}");
    assert!(row.ends_with(",sigma=0.5"));
}
