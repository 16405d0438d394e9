use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn lists_and_prints_presets() {
    let out = simulate(&["presets"]);
    assert!(out.status.success());
    let names = String::from_utf8(out.stdout).unwrap();
    for name in [
        "n19-fig2",
        "n13-fig5-left",
        "n31-fig5-right",
        "n1-rabi",
        "n2-blockade",
        "lz-benchmark",
    ] {
        assert!(names.lines().any(|l| l == name), "{name}");
    }
    let out = simulate(&["presets", "n1-rabi"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("[schedule]"));
    assert_eq!(simulate(&["presets", "missing"]).status.code(), Some(2));
}

#[test]
fn rabi_dynamics_writes_self_describing_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = simulate(&["dynamics", "--preset", "n1-rabi", "--out", out_dir]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(dir.path().join("dynamics.csv")).unwrap();
    assert!(text.starts_with("# rydberg-sweep dynamics\n# seeds: base_seed=1234"));
    assert!(text.contains("# n_sites = 1"));
    let lines = data_lines(&dir.path().join("dynamics.csv"));
    let header: Vec<&str> = lines[0].split(',').collect();
    let t_col = header.iter().position(|h| *h == "t_us").unwrap();
    let p_col = header.iter().position(|h| *h == "p_1").unwrap();
    assert_eq!(lines.len() - 1, 201);
    let omega = std::f64::consts::TAU * 1e6;
    for row in &lines[1..] {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        let expected = (omega * cells[t_col] * 1e-6).sin().powi(2);
        assert!((cells[p_col] - expected).abs() < 1e-6);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dynamics.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["system"]["n_sites"], 1);
    assert_eq!(summary["seeds"]["base_seed"], 1234);
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--preset", "n4-oracle", "--set", "ensemble.trajectories=24", "--seed", "7"];
    for (dir, workers) in [(&a, "1"), (&b, "3")] {
        let mut args = vec!["dynamics", "--out", dir.path().to_str().unwrap(), "--workers", workers];
        args.extend(common);
        assert!(simulate(&args).status.success());
    }
    for file in ["dynamics.csv", "dynamics.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let text = fs::read_to_string(a.path().join("dynamics.csv")).unwrap();
    assert!(text.contains("base_seed=7 trajectories=24"));
}

#[test]
fn config_errors_exit_with_code_two_and_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let src = String::from_utf8(simulate(&["presets", "n19-fig2"]).stdout)
        .unwrap()
        .replace("tau_us = [4.0, 6.0,", "tau_us = [6.0, 4.0,");
    fs::write(&path, &src).unwrap();
    let line = src.lines().position(|l| l.starts_with("tau_us = [6.0")).unwrap() + 1;
    let out = simulate(&["tau-scan", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(&format!("line {line}")), "{err}");
    assert!(err.contains("strictly increasing"), "{err}");

    fs::write(&path, "[system]\nn_sites = 3\na_nm = \"far\"\n").unwrap();
    let out = simulate(&["dynamics", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 3"));

    let out = simulate(&["dynamics", "--preset", "n1-rabi", "--set", "system.warp=9"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    // too coarse a step for this sweep: the unitary norm drifts
    let out = simulate(&[
        "tau-scan", "--preset", "lz-benchmark", "--out", out_dir, "--set", "integrator.safety=0.6",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("norm drifted"));

    // zero tolerance cannot be met by a finite ensemble
    let out = simulate(&[
        "oracle-check",
        "--preset",
        "n4-oracle",
        "--out",
        out_dir,
        "--set",
        "ensemble.trajectories=20",
        "--set",
        "oracle.sigma_threshold=1e-9",
        "--set",
        "oracle.abs_floor=0",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("oracle_check.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn blockade_oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&["oracle-check", "--preset", "n2-blockade", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("oracle_check.json")).unwrap()).unwrap();
    let shells = report["max_shell_population"].as_array().unwrap();
    let double = &shells[2];
    assert!(double["trajectories"].as_f64().unwrap() < 1e-6);
    assert!(double["master"].as_f64().unwrap() < 1e-6);
}

#[test]
fn spectrum_ground_shells_follow_detuning() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "spectrum",
        "--preset",
        "n19-fig2",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "spectrum.points=61",
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("crossings.json")).unwrap()).unwrap();
    let ground = report["ground_shell"].as_array().unwrap();
    let mut last = 0;
    for g in ground {
        let delta = g["delta_2pi_mhz"].as_f64().unwrap();
        let n = g["n"].as_u64().unwrap();
        if delta < 0.0 {
            assert_eq!(n, 0);
        }
        assert!(n >= last, "ground shell must grow with δ");
        last = n;
    }
    let crossing_23 = report["crossings"][2]["delta_2pi_mhz"].as_f64().unwrap();
    assert!((crossing_23 - 0.41).abs() < 0.01, "{crossing_23}");

    let lines = data_lines(&dir.path().join("spectrum.csv"));
    assert_eq!(lines[0], "delta_2pi_mhz,n,energy_2pi_mhz,is_shell_min,config_bitmask");
    // degenerate shell minima (e.g. every single excitation) each get a row
    assert_eq!((lines.len() - 1) % 61, 0);
    assert!(lines.len() - 1 >= 61 * 6);
}

#[test]
fn convergence_report_lists_every_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "convergence",
        "--preset",
        "n2-blockade",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "convergence.settings=[{n_max = 1, d = 1}, {n_max = 2, d = 2}]",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = data_lines(&dir.path().join("convergence.csv"));
    assert_eq!(lines.len(), 1 + 3);
    assert!(lines[1].starts_with("2,1,4,true,0,"));
}
